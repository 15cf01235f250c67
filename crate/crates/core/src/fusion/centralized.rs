//! One filter over the stacked error states of all three IMUs.
//!
//! The dynamics stay block diagonal, so cross-covariances appear only
//! through the constraint update, which stacks the rows of every IMU
//! against the shared reference point.

use super::run::{check_streams, drive, Execution, RunOutput};
use super::{err_string, FusionError, FusionState};
use crate::ekf::{check_covariance, feedback, predict_diag, update, LinearMeasurement};
use crate::geom::Mat3;
use crate::model::{idx, ErrorState, FusionConfig, ImuSample, MountingGeometry, Topology};
use nalgebra::{SMatrix, SVector};

/// Three stacked 21-state blocks.
pub const JOINT_N: usize = 3 * idx::N;

pub type JointState = SVector<f64, JOINT_N>;
pub type JointCovariance = SMatrix<f64, JOINT_N, JOINT_N>;

#[derive(Debug, Clone)]
pub(super) struct Joint {
    pub x: JointState,
    pub p: JointCovariance,
}

pub fn run_centralized(config: &FusionConfig, geoms: &[MountingGeometry], streams: &[Vec<ImuSample>]) -> Result<RunOutput, FusionError> {
    if config.topology != Topology::Triple {
        return Err(FusionError::CentralizedTopology);
    }
    let k0 = check_streams(config, streams)?;
    let segs: Vec<&[ImuSample]> = streams.iter().map(|s| &s[..=k0]).collect();
    let mut st = FusionState::init(config, geoms, &segs)?;
    st.make_centralized();
    drive(st, streams, Execution::Sequential)
}

impl FusionState {
    /// Switches a freshly initialized triple state to the stacked filter.
    pub fn make_centralized(&mut self) {
        assert_eq!(self.subsystems.len(), 3, "centralized filter stacks three IMUs");
        let mut p = JointCovariance::zeros();
        for (i, s) in self.subsystems.iter().enumerate() {
            p.fixed_view_mut::<{ idx::N }, { idx::N }>(idx::N * i, idx::N * i).copy_from(&s.p);
        }
        self.joint = Some(Box::new(Joint { x: JointState::zeros(), p }));
    }

    pub fn joint_covariance(&self) -> Option<&JointCovariance> {
        self.joint.as_ref().map(|j| &j.p)
    }

    pub(super) fn propagate_joint(&mut self, samples: &[ImuSample]) -> Result<(), FusionError> {
        let mut phi = JointCovariance::zeros();
        let mut q = JointState::zeros();
        for (i, (sub, s)) in self.subsystems.iter_mut().zip(samples).enumerate() {
            match sub.mechanize(s, &self.mech) {
                Ok((phi_i, q_i)) => {
                    phi.fixed_view_mut::<{ idx::N }, { idx::N }>(idx::N * i, idx::N * i).copy_from(&phi_i);
                    q.fixed_rows_mut::<{ idx::N }>(idx::N * i).copy_from(&q_i);
                }
                Err(reason) => sub.fail(s.t, reason),
            }
        }
        self.collect_failures(samples[0].t)?;
        let joint = self.joint.as_mut().expect("centralized state");
        let t = samples[0].t;
        let fail = |reason: String| FusionError::Diverged { imu: "centralized".into(), t, reason };
        predict_diag(&mut joint.p, &phi, &q).map_err(|e| fail(e.to_string()))?;
        if self.config.check_invariants {
            check_covariance(&joint.p).map_err(|e| fail(e.to_string()))?;
        }
        Ok(())
    }

    pub(super) fn apply_joint_velocity(&mut self, ms: Vec<Option<Result<LinearMeasurement<3>, String>>>, t: f64) -> Result<(), FusionError> {
        for &i in &self.order.clone() {
            match &ms[i] {
                Some(Ok(m)) => {
                    let joint = self.joint.as_mut().expect("centralized state");
                    let info = update(&mut joint.x, &mut joint.p, &m.embed::<JOINT_N>(idx::N * i))
                        .map_err(|e| FusionError::Diverged { imu: self.subsystems[i].geom.imu_id.clone(), t, reason: e.to_string() })?;
                    self.diagnostics.velocity.record(info.innovation.as_slice(), info.nis);
                }
                Some(Err(reason)) => self.skip(t, i, reason, true),
                None => {}
            }
        }
        self.joint_feedback(t)
    }

    /// Stacks the constraint rows of all subsystems. Row block `i` depends
    /// on its own block through `H_i` and on every block `j` through the
    /// shared reference point, `-W_j H_j`, which is what correlates the
    /// subsystems.
    pub(super) fn apply_joint_constraint(&mut self, ms: Vec<Option<Result<LinearMeasurement<3>, String>>>, t: f64) -> Result<(), FusionError> {
        let mut rows = Vec::with_capacity(ms.len());
        for (i, m) in ms.into_iter().enumerate() {
            match m {
                Some(Ok(m)) => rows.push(m),
                Some(Err(reason)) => {
                    self.skip(t, i, &reason, false);
                    return Ok(());
                }
                None => return Ok(()),
            }
        }
        let mut stacked = LinearMeasurement::<9, JOINT_N> { z: SVector::zeros(), h: SMatrix::zeros(), r: SVector::zeros() };
        for (i, m) in rows.iter().enumerate() {
            stacked.z.fixed_rows_mut::<3>(3 * i).copy_from(&m.z);
            stacked.r.fixed_rows_mut::<3>(3 * i).copy_from(&m.r);
            for (j, mj) in rows.iter().enumerate() {
                let w = Mat3::from_diagonal(&self.weights[j]);
                let mut block = -(w * mj.h);
                if i == j {
                    block += m.h;
                }
                stacked.h.fixed_view_mut::<3, { idx::N }>(3 * i, idx::N * j).copy_from(&block);
            }
        }
        let joint = self.joint.as_mut().expect("centralized state");
        let info = update(&mut joint.x, &mut joint.p, &stacked)
            .map_err(|e| FusionError::Diverged { imu: "centralized".into(), t, reason: e.to_string() })?;
        self.diagnostics.constraint.record(info.innovation.as_slice(), info.nis);
        self.joint_feedback(t)
    }

    /// Feeds each block back into its subsystem and zeroes the state.
    fn joint_feedback(&mut self, t: f64) -> Result<(), FusionError> {
        let joint = self.joint.as_mut().expect("centralized state");
        for (i, sub) in self.subsystems.iter_mut().enumerate() {
            let mut xi: ErrorState = joint.x.fixed_rows::<{ idx::N }>(idx::N * i).into_owned();
            feedback(&mut sub.nav, &mut sub.corr, &mut xi)
                .map_err(|e| FusionError::Diverged { imu: sub.geom.imu_id.clone(), t, reason: err_string(e) })?;
            sub.p.copy_from(&joint.p.fixed_view::<{ idx::N }, { idx::N }>(idx::N * i, idx::N * i));
        }
        joint.x.fill(0.0);
        if self.config.check_invariants {
            check_covariance(&joint.p).map_err(|e| FusionError::Diverged { imu: "centralized".into(), t, reason: e.to_string() })?;
        }
        Ok(())
    }
}
