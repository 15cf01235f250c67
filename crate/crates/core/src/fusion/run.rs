//! Batch drivers over [`FusionState`].

use super::{Aiding, AidingSource, Diagnostics, FusedOutput, FusionError, FusionState, Subsystem};
use crate::geom::Vec3;
use crate::model::{FusionConfig, ImuSample, Mode, MountingGeometry, TrajPoint, Trajectory, Topology};
use rayon::prelude::*;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    /// Subsystems propagate concurrently between update epochs. Results are
    /// identical to sequential execution.
    Parallel,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub execution: Execution,
    /// Order in which update results are applied (a permutation).
    pub processing_order: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub fused: Vec<FusedOutput>,
    /// Fused trajectory in the frame anchored at the reference point's
    /// initial position.
    pub trajectory: Trajectory,
    /// Each subsystem's own reference point and heading, same frame.
    pub subsystem_trajectories: Vec<Trajectory>,
    pub diagnostics: Diagnostics,
    pub subsystems: Vec<Subsystem>,
}

/// Runs the configured mode over full streams (raw, topology role order,
/// common time base, static start of `align_time` seconds).
pub fn run(config: &FusionConfig, geoms: &[MountingGeometry], streams: &[Vec<ImuSample>]) -> Result<RunOutput, FusionError> {
    run_with(config, geoms, streams, &RunOptions::default())
}

pub fn run_with(
    config: &FusionConfig,
    geoms: &[MountingGeometry],
    streams: &[Vec<ImuSample>],
    opts: &RunOptions,
) -> Result<RunOutput, FusionError> {
    if config.mode == Mode::Centralized {
        return super::run_centralized(config, geoms, streams);
    }
    let k0 = check_streams(config, streams)?;
    let segs: Vec<&[ImuSample]> = streams.iter().map(|s| &s[..=k0]).collect();
    let mut st = FusionState::init(config, geoms, &segs)?;
    if let Some(order) = &opts.processing_order {
        st.set_processing_order(order.clone());
    }
    drive(st, streams, opts.execution)
}

/// A single filter driven by recorded aiding (e.g. the `aiding` of another
/// run's diagnostics), with no constraint. Any IMU role may be used.
pub fn run_standalone(
    config: &FusionConfig,
    geom: &MountingGeometry,
    stream: &[ImuSample],
    aiding: &[Aiding],
) -> Result<RunOutput, FusionError> {
    let config = FusionConfig {
        topology: Topology::SingleWheel,
        mode: Mode::Distributed,
        weights: Vec::new(),
        enable_constraint: false,
        ..config.clone()
    };
    config.validate()?;
    let streams = [stream.to_vec()];
    let k0 = check_streams(&config, &streams)?;
    let mut st = FusionState::init_unchecked(&config, std::slice::from_ref(geom), &[&stream[..=k0]], vec![Vec3::repeat(1.0)])?;
    st.aiding = AidingSource::Replay { records: aiding.to_vec(), next: 0 };
    drive(st, &streams, Execution::Sequential)
}

/// Index of the last static sample used for alignment.
pub(super) fn check_streams(config: &FusionConfig, streams: &[Vec<ImuSample>]) -> Result<usize, FusionError> {
    let n = streams.first().map_or(0, |s| s.len());
    if streams.iter().any(|s| s.len() != n) {
        return Err(FusionError::Streams("streams differ in length".into()));
    }
    let k0 = (config.align_time * config.imu_rate).round() as usize;
    if n <= k0 + 1 {
        return Err(FusionError::Streams(format!("{n} samples do not cover the {} s static start", config.align_time)));
    }
    let dt = 1.0 / config.imu_rate;
    for (i, s) in streams.iter().enumerate() {
        for k in 1..n {
            let step = s[k].t - s[k - 1].t;
            if (step - dt).abs() > 1e-6 * dt.max(1.0) {
                return Err(FusionError::Streams(format!(
                    "stream {i}: interval {step} s at sample {k} does not match imu_rate {} Hz",
                    config.imu_rate
                )));
            }
            if (s[k].t - streams[0][k].t).abs() > 1e-9 {
                return Err(FusionError::Streams(format!("stream {i}: timestamps differ from stream 0 at sample {k}")));
            }
        }
    }
    Ok(k0)
}

struct Recorder {
    fused: Vec<FusedOutput>,
    trajectory: Trajectory,
    subsystems: Vec<Trajectory>,
}

impl Recorder {
    fn push(&mut self, st: &FusionState) {
        let out = st.fused_output();
        let shift = st.output_to_reference_frame();
        self.trajectory.push(st.trajectory_point(&out));
        for (traj, s) in self.subsystems.iter_mut().zip(&out.subsystems) {
            traj.push(TrajPoint { t: out.t, pos: s.reference_point + shift, euler: Vec3::new(out.roll, out.pitch, s.heading) });
        }
        self.fused.push(out);
    }
}

/// Next sample index after `k` at which any update or output is due.
fn next_barrier(st: &FusionState, k: usize, last: usize) -> usize {
    let next = |d: usize| (k / d + 1) * d;
    let mut b = next(st.vel_dec).min(next(st.out_dec));
    if st.is_multi() && st.config.enable_constraint {
        b = b.min(next(st.con_dec));
    }
    b.min(last)
}

pub(super) fn drive(mut st: FusionState, streams: &[Vec<ImuSample>], execution: Execution) -> Result<RunOutput, FusionError> {
    let n = streams[0].len();
    let mut rec = Recorder { fused: Vec::new(), trajectory: Vec::new(), subsystems: vec![Vec::new(); st.subsystems.len()] };
    rec.push(&st);
    let check = st.config.check_invariants;
    while st.k + 1 < n {
        let (from, to) = (st.k + 1, next_barrier(&st, st.k, n - 1));
        let t0 = Instant::now();
        if st.joint.is_some() {
            for k in from..=to {
                let samples: Vec<ImuSample> = streams.iter().map(|s| s[k]).collect();
                st.propagate_joint(&samples)?;
            }
        } else {
            let mech = st.mech;
            let work = |(sub, s): (&mut Subsystem, &Vec<ImuSample>)| sub.propagate_all(&s[from..=to], &mech, check);
            match execution {
                Execution::Sequential => st.subsystems.iter_mut().zip(streams).for_each(work),
                Execution::Parallel => st.subsystems.par_iter_mut().zip(streams.par_iter()).for_each(work),
            }
        }
        let timing = &mut st.diagnostics.timing;
        timing.propagate_ns += t0.elapsed().as_nanos();
        timing.epochs += to + 1 - from;
        if check {
            st.diagnostics.covariance_checks += (to + 1 - from) * st.active_count();
        }
        st.k = to;
        let t = streams[0][to].t;
        st.collect_failures(t)?;
        st.barrier(t)?;
        if st.is_output_epoch(st.k) {
            rec.push(&st);
        }
    }
    Ok(RunOutput {
        fused: rec.fused,
        trajectory: rec.trajectory,
        subsystem_trajectories: rec.subsystems,
        diagnostics: st.diagnostics,
        subsystems: st.subsystems,
    })
}
