//! Multi-IMU orchestration: one error-state filter per IMU, a shared wheel
//! speed with non-holonomic constraints, shared vehicle roll and pitch from
//! the body IMU, and a periodic relative position constraint that pulls
//! every subsystem toward the weighted reference point of all of them.
//!
//! Each subsystem navigates in its own w-frame: north-east-down axes with
//! the origin at the initial position of its mounting point (wheel center
//! or body IMU). The fused output lives in the first subsystem's w-frame
//! (the left wheel); trajectories written by [`run`] are shifted to the
//! initial position of the reference point `o` so they compare directly
//! with simulator truth.

mod centralized;
mod force;
mod run;

pub use centralized::run_centralized;
pub use force::JacobianForce;
use force::ForceReference;
pub use run::{run, run_standalone, run_with, Execution, RunOptions, RunOutput};

use crate::ekf::{self, check_covariance, feedback, predict_diag, transition_matrix, update, EkfError, LinearMeasurement};
use crate::geom::{heading_of, Vec3};
use crate::mech::{ins_update_with_history, MechConfig, MechError};
use crate::meas::{
    bodyins_velocity_measurement, multi_imu_constraint_measurement, reference_point_in_w,
    w_frame_translation, weighted_reference_position, wheel_vehicle_yaw, wheel_velocity_vector,
    wheelins_velocity_measurement, AngleSource, MeasError, VehicleAttitude,
};
use crate::model::{
    static_coarse_align, AlignOptions, Corrections, Covariance, ErrorState, FusionConfig, ImuRole,
    ImuSample, ModelError, MountingGeometry, NavState, SensorErrorModel, TrajPoint,
};
use std::fmt::Display;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error(transparent)]
    Config(#[from] ModelError),
    #[error("topology {topology} expects IMU roles {expected:?}, got {got:?}")]
    Topology { topology: &'static str, expected: Vec<ImuRole>, got: Vec<ImuRole> },
    #[error("input streams: {0}")]
    Streams(String),
    #[error("alignment of {imu} failed: {reason}")]
    Alignment { imu: String, reason: String },
    #[error("subsystem {imu} diverged at t = {t:.3} s: {reason}")]
    Diverged { imu: String, t: f64, reason: String },
    #[error("every subsystem diverged; last: {0}")]
    AllDiverged(String),
    #[error("centralized mode is implemented for the triple topology only")]
    CentralizedTopology,
}

/// Something a subsystem did that the caller should know about.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    pub imu: String,
    pub message: String,
}

/// Shared wheel-speed aiding of one velocity epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aiding {
    pub t: f64,
    /// Forward speed of `target_v`, m/s.
    pub speed: f64,
    /// v-frame point whose speed was measured.
    pub target_v: Vec3,
    /// Vehicle roll and pitch given to the wheel filters.
    pub roll: f64,
    pub pitch: f64,
    pub roll_pitch_source: AngleSource,
}

/// One IMU with its own filter.
#[derive(Debug, Clone)]
pub struct Subsystem {
    pub geom: MountingGeometry,
    pub nav: NavState,
    pub x: ErrorState,
    pub p: Covariance,
    pub corr: Corrections,
    pub prior: SensorErrorModel,
    /// Set once the filter has failed; the subsystem is then frozen.
    pub failure: Option<Event>,
    reported: bool,
    q_psd: ErrorState,
    /// Latest normalized raw samples, oldest first, at most three.
    hist: Vec<ImuSample>,
    /// Specific force for the transition matrix.
    force: ForceReference,
}

impl Subsystem {
    pub fn active(&self) -> bool {
        self.failure.is_none()
    }

    /// Latest sample with the current sensor corrections applied.
    pub fn compensated(&self) -> ImuSample {
        self.corr.compensate(self.hist.last().expect("history seeded at init"))
    }

    /// Vehicle attitude as seen by this filter. Wheel filters take roll and
    /// pitch from outside; a body filter uses its own.
    pub fn vehicle_attitude(&self, roll: f64, pitch: f64, src: AngleSource) -> VehicleAttitude {
        match self.geom.role {
            ImuRole::Body => VehicleAttitude::from_body(&self.nav, &self.geom),
            _ => VehicleAttitude::with_wheel_yaw(roll, pitch, src, &self.nav, &self.geom),
        }
    }

    pub fn reference_point(&self, veh: &VehicleAttitude) -> Vec3 {
        reference_point_in_w(&self.nav, veh, &self.geom)
    }

    /// Mechanizes one raw sample and returns the transition matrix and the
    /// half-step noise `½ Q dt` for the covariance time update.
    fn mechanize(&mut self, raw: &ImuSample, mech: &MechConfig) -> Result<(Covariance, ErrorState), String> {
        if self.x.iter().any(|v| *v != 0.0) {
            return Err(EkfError::OpenLoop.to_string());
        }
        let cur = self.geom.normalize(raw);
        let (prev, history) = self.hist.split_last().expect("history seeded at init");
        let nav = ins_update_with_history(&self.nav, history, prev, &cur, &self.corr, mech).map_err(|e: MechError| e.to_string())?;
        let dt = cur.t - prev.t;
        let comp = self.corr.compensate(&cur);
        let accel = self.force.specific_force(&nav, &comp, &self.geom, mech.gravity, dt);
        let phi = transition_matrix(&nav, &ImuSample { accel, ..comp }, &self.prior, dt);
        self.nav = nav;
        if self.hist.len() == 3 {
            self.hist.remove(0);
        }
        self.hist.push(cur);
        Ok((phi, self.q_psd * (0.5 * dt)))
    }

    fn propagate(&mut self, raw: &ImuSample, mech: &MechConfig, check: bool) -> Result<(), String> {
        let (phi, q) = self.mechanize(raw, mech)?;
        predict_diag(&mut self.p, &phi, &q).map_err(err_string)?;
        if check {
            check_covariance(&self.p).map_err(err_string)?;
        }
        Ok(())
    }

    /// Propagates over `samples`, freezing the subsystem at the first failure.
    fn propagate_all(&mut self, samples: &[ImuSample], mech: &MechConfig, check: bool) {
        if !self.active() {
            return;
        }
        for s in samples {
            if let Err(reason) = self.propagate(s, mech, check) {
                self.fail(s.t, reason);
                return;
            }
        }
    }

    fn fail(&mut self, t: f64, message: String) {
        self.failure = Some(Event { t, imu: self.geom.imu_id.clone(), message });
    }

    fn apply<const M: usize>(&mut self, m: &LinearMeasurement<M>, check: bool) -> Result<ekf::UpdateInfo<M, { crate::model::idx::N }>, String> {
        let info = update(&mut self.x, &mut self.p, m).map_err(err_string)?;
        feedback(&mut self.nav, &mut self.corr, &mut self.x).map_err(err_string)?;
        if check {
            check_covariance(&self.p).map_err(err_string)?;
        }
        Ok(info)
    }
}

fn err_string(e: impl Display) -> String {
    e.to_string()
}

/// Per-subsystem part of a fused output.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemOutput {
    pub imu_id: String,
    pub active: bool,
    /// Reference point in the output w-frame.
    pub reference_point: Vec3,
    /// Vehicle heading implied by this filter, rad.
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedOutput {
    pub t: f64,
    /// Reference point `o` in the output w-frame.
    pub position: Vec3,
    /// Circular mean of the subsystem headings, rad.
    pub heading: f64,
    /// Vehicle roll and pitch from the body filter, zero without one.
    pub roll: f64,
    pub pitch: f64,
    pub subsystems: Vec<SubsystemOutput>,
}

/// Update counters and innovation magnitudes per measurement kind.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub count: usize,
    pub max_abs_innovation: f64,
    pub nis_sum: f64,
    pub skipped: usize,
}

impl UpdateStats {
    fn record(&mut self, innovation: &[f64], nis: f64) {
        self.count += 1;
        self.nis_sum += nis;
        for v in innovation {
            self.max_abs_innovation = self.max_abs_innovation.max(v.abs());
        }
    }

    pub fn mean_nis(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.nis_sum / self.count as f64
        }
    }
}

/// Wall-clock filter time, excluding I/O.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timing {
    pub epochs: usize,
    pub propagate_ns: u128,
    pub vel_epochs: usize,
    pub vel_ns: u128,
    pub con_epochs: usize,
    pub con_ns: u128,
}

impl Timing {
    fn mean_us(ns: u128, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            ns as f64 / n as f64 / 1e3
        }
    }

    /// Mechanization and covariance prediction of all subsystems, per epoch.
    pub fn us_per_propagation(&self) -> f64 {
        Self::mean_us(self.propagate_ns, self.epochs)
    }

    pub fn us_per_velocity_update(&self) -> f64 {
        Self::mean_us(self.vel_ns, self.vel_epochs)
    }

    pub fn us_per_constraint_update(&self) -> f64 {
        Self::mean_us(self.con_ns, self.con_epochs)
    }

    /// All filter work divided by the number of IMU epochs.
    pub fn us_per_epoch(&self) -> f64 {
        Self::mean_us(self.propagate_ns + self.vel_ns + self.con_ns, self.epochs)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub events: Vec<Event>,
    pub velocity: UpdateStats,
    pub constraint: UpdateStats,
    /// Covariance checks performed (symmetry and PSD).
    pub covariance_checks: usize,
    pub aiding: Vec<Aiding>,
    pub timing: Timing,
}

/// Where the velocity aiding comes from.
#[derive(Debug, Clone)]
enum AidingSource {
    Live,
    Replay { records: Vec<Aiding>, next: usize },
}

/// Running fusion of a set of subsystems.
#[derive(Debug, Clone)]
pub struct FusionState {
    pub config: FusionConfig,
    pub subsystems: Vec<Subsystem>,
    /// `translations[j][i]` maps w-frame `i` coordinates into w-frame `j`.
    pub translations: Vec<Vec<Vec3>>,
    /// Initial vehicle heading, rad.
    pub psi0: f64,
    /// Index of the last processed sample in the stream numbering.
    pub k: usize,
    pub diagnostics: Diagnostics,
    mech: MechConfig,
    weights: Vec<Vec3>,
    order: Vec<usize>,
    aiding: AidingSource,
    vel_dec: usize,
    con_dec: usize,
    out_dec: usize,
    joint: Option<Box<centralized::Joint>>,
}

impl FusionState {
    /// Aligns every IMU on its static segment and anchors the w-frames.
    /// `geoms` and `static_segments` follow the topology's role order; the
    /// segments are raw streams from sample 0.
    pub fn init(config: &FusionConfig, geoms: &[MountingGeometry], static_segments: &[&[ImuSample]]) -> Result<Self, FusionError> {
        config.validate()?;
        let got: Vec<ImuRole> = geoms.iter().map(|g| g.role).collect();
        if got.as_slice() != config.topology.roles() {
            return Err(FusionError::Topology {
                topology: config.topology.name(),
                expected: config.topology.roles().to_vec(),
                got,
            });
        }
        Self::init_unchecked(config, geoms, static_segments, config.resolved_weights())
    }

    fn init_unchecked(
        config: &FusionConfig,
        geoms: &[MountingGeometry],
        static_segments: &[&[ImuSample]],
        weights: Vec<Vec3>,
    ) -> Result<Self, FusionError> {
        if static_segments.len() != geoms.len() {
            return Err(FusionError::Streams(format!("{} IMUs but {} streams", geoms.len(), static_segments.len())));
        }
        let psi0 = config.initial_heading;
        let mut subsystems = Vec::with_capacity(geoms.len());
        let mut k = None;
        for (geom, seg) in geoms.iter().zip(static_segments) {
            geom.validate()?;
            if k.is_some_and(|k| k + 1 != seg.len()) || seg.is_empty() {
                return Err(FusionError::Streams("static segments differ in length".into()));
            }
            k = Some(seg.len() - 1);
            let prior = match geom.role {
                ImuRole::Body => config.body_errors,
                _ => config.wheel_errors,
            };
            let normalized: Vec<ImuSample> = seg.iter().map(|s| geom.normalize(s)).collect();
            // The IMU yaw that puts the vehicle at `psi0`: heading of the
            // b-frame x-axis, which spinning about x leaves unchanged.
            let x_v = geom.imu_to_vehicle * Vec3::x();
            let imu_yaw = psi0 + heading_of(&x_v);
            let opts = AlignOptions { gravity: config.gravity, arw: prior.arw, estimate_gyro_bias: config.align_gyro_bias };
            let (mut nav, bias) = static_coarse_align(&normalized, imu_yaw, &opts)
                .map_err(|e| FusionError::Alignment { imu: geom.imu_id.clone(), reason: e.to_string() })?;
            nav.pos = -(nav.att * geom.lever_wheel);
            let corr = Corrections { gyro_bias: bias, ..Corrections::default() };
            let hist = normalized[normalized.len().saturating_sub(3)..].to_vec();
            subsystems.push(Subsystem {
                geom: geom.clone(),
                nav,
                x: ErrorState::zeros(),
                p: config.initial_std.covariance(&prior),
                corr,
                prior,
                failure: None,
                reported: false,
                q_psd: ekf::noise_psd(&prior),
                force: ForceReference::new(config.jacobian_force),
                hist,
            });
        }
        let translations = geoms
            .iter()
            .map(|target| geoms.iter().map(|g| w_frame_translation(-psi0, &g.pos_v, &target.pos_v)).collect())
            .collect();
        let mech = MechConfig {
            gravity: config.gravity,
            earth_rate_latitude: config.include_earth_rate.then_some(config.latitude),
        };
        Ok(Self {
            config: config.clone(),
            order: (0..subsystems.len()).collect(),
            subsystems,
            translations,
            psi0,
            k: k.unwrap_or(0),
            diagnostics: Diagnostics::default(),
            mech,
            weights,
            aiding: AidingSource::Live,
            vel_dec: config.decimation(config.vel_update_rate),
            con_dec: config.decimation(config.constraint_rate),
            out_dec: config.decimation(config.output_rate),
            joint: None,
        })
    }

    /// Order in which update results are applied within an epoch. Outputs
    /// do not depend on it; exposed so tests can show that.
    pub fn set_processing_order(&mut self, order: Vec<usize>) {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..self.subsystems.len()).collect::<Vec<_>>(), "not a permutation");
        self.order = order;
    }

    /// Advances one epoch with one raw sample per subsystem.
    pub fn step(&mut self, samples: &[ImuSample]) -> Result<(), FusionError> {
        if samples.len() != self.subsystems.len() {
            return Err(FusionError::Streams(format!("expected {} samples", self.subsystems.len())));
        }
        let t0 = std::time::Instant::now();
        if self.joint.is_some() {
            self.propagate_joint(samples)?;
        } else {
            let check = self.config.check_invariants;
            for (sub, s) in self.subsystems.iter_mut().zip(samples) {
                sub.propagate_all(std::slice::from_ref(s), &self.mech, check);
            }
        }
        self.diagnostics.timing.propagate_ns += t0.elapsed().as_nanos();
        self.diagnostics.timing.epochs += 1;
        self.k += 1;
        self.collect_failures(samples[0].t)?;
        self.barrier(samples[0].t)
    }

    fn is_multi(&self) -> bool {
        self.subsystems.len() > 1
    }

    pub fn is_velocity_epoch(&self, k: usize) -> bool {
        k.is_multiple_of(self.vel_dec)
    }

    pub fn is_constraint_epoch(&self, k: usize) -> bool {
        self.is_multi() && self.config.enable_constraint && k.is_multiple_of(self.con_dec)
    }

    pub fn is_output_epoch(&self, k: usize) -> bool {
        k.is_multiple_of(self.out_dec)
    }

    /// Updates due at the current epoch `k`.
    fn barrier(&mut self, t: f64) -> Result<(), FusionError> {
        let check = self.config.check_invariants;
        if self.is_velocity_epoch(self.k) {
            let t0 = std::time::Instant::now();
            self.velocity_epoch(t)?;
            self.diagnostics.timing.vel_ns += t0.elapsed().as_nanos();
            self.diagnostics.timing.vel_epochs += 1;
            if check {
                self.diagnostics.covariance_checks += self.active_count();
            }
        }
        if self.is_constraint_epoch(self.k) {
            let t0 = std::time::Instant::now();
            self.constraint_epoch(t)?;
            self.diagnostics.timing.con_ns += t0.elapsed().as_nanos();
            self.diagnostics.timing.con_epochs += 1;
            if check {
                self.diagnostics.covariance_checks += self.active_count();
            }
        }
        Ok(())
    }

    fn active_count(&self) -> usize {
        self.subsystems.iter().filter(|s| s.active()).count()
    }

    /// Moves fresh subsystem failures into the event log. Fails when no
    /// subsystem is left, or in centralized mode on any failure.
    fn collect_failures(&mut self, t: f64) -> Result<(), FusionError> {
        let mut fresh: Vec<Event> = Vec::new();
        for s in self.subsystems.iter_mut().filter(|s| !s.reported) {
            if let Some(e) = &s.failure {
                fresh.push(e.clone());
                s.reported = true;
            }
        }
        let Some(last) = fresh.iter().max_by(|a, b| a.t.total_cmp(&b.t)).cloned() else { return Ok(()) };
        fresh.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.imu.cmp(&b.imu)));
        self.diagnostics.events.extend(fresh);
        if self.joint.is_some() {
            return Err(FusionError::Diverged { imu: last.imu, t: last.t, reason: last.message });
        }
        if self.active_count() == 0 {
            return Err(FusionError::AllDiverged(format!("{} at t = {:.3} s: {}", last.imu, t, last.message)));
        }
        self.renormalize_weights();
        Ok(())
    }

    /// Equal share among surviving subsystems, in proportion to the
    /// configured weights.
    fn renormalize_weights(&mut self) {
        let base = self.config.resolved_weights();
        let sum: Vec3 = base.iter().zip(&self.subsystems).filter(|(_, s)| s.active()).map(|(w, _)| *w).sum();
        self.weights = base
            .iter()
            .zip(&self.subsystems)
            .map(|(w, s)| if s.active() { w.component_div(&sum) } else { Vec3::zeros() })
            .collect();
    }

    /// Vehicle roll and pitch shared with the wheel filters.
    fn shared_roll_pitch(&self) -> (f64, f64, AngleSource) {
        if self.config.topology.horizontal_assumption() {
            return (0.0, 0.0, AngleSource::AssumedZero);
        }
        match self.subsystems.iter().find(|s| s.geom.role == ImuRole::Body && s.active()) {
            Some(b) => {
                let e = VehicleAttitude::from_body(&b.nav, &b.geom).euler;
                (e.x, e.y, AngleSource::BodyIns)
            }
            None => (0.0, 0.0, AngleSource::AssumedZero),
        }
    }

    /// Wheel speed from the wheel subsystems' compensated axle rates.
    fn live_aiding(&self, t: f64) -> Option<Aiding> {
        let wheels: Vec<&Subsystem> = self.subsystems.iter().filter(|s| s.geom.role.is_wheel() && s.active()).collect();
        let speed = |s: &Subsystem| s.compensated().gyro.x * s.geom.wheel_radius;
        let (speed, target_v) = match wheels.as_slice() {
            [] => return None,
            [l, r] if self.config.topology.averaged_speed() => (0.5 * (speed(l) + speed(r)), Vec3::zeros()),
            [w, ..] => (speed(w), w.geom.pos_v),
        };
        let (roll, pitch, roll_pitch_source) = self.shared_roll_pitch();
        Some(Aiding { t, speed, target_v, roll, pitch, roll_pitch_source })
    }

    fn next_aiding(&mut self, t: f64) -> Option<Aiding> {
        match &mut self.aiding {
            AidingSource::Live => self.live_aiding(t),
            AidingSource::Replay { records, next } => {
                while *next < records.len() && records[*next].t < t - 1e-9 {
                    *next += 1;
                }
                let r = records.get(*next).filter(|r| (r.t - t).abs() <= 1e-9).copied();
                if r.is_some() {
                    *next += 1;
                }
                r
            }
        }
    }

    fn velocity_measurements(&self, aid: &Aiding) -> Vec<Option<Result<LinearMeasurement<3>, String>>> {
        let measured = wheel_velocity_vector(aid.speed);
        self.subsystems
            .iter()
            .map(|s| {
                if !s.active() {
                    return None;
                }
                let omega = s.compensated().gyro;
                let m = s.geom.lever_to(&aid.target_v).map_err(err_string).and_then(|lever| match s.geom.role {
                    ImuRole::Body => bodyins_velocity_measurement(&s.nav, &omega, &lever, &s.geom, &measured, &self.config.vel_noise_body)
                        .map_err(err_string),
                    _ => {
                        let veh = s.vehicle_attitude(aid.roll, aid.pitch, aid.roll_pitch_source);
                        wheelins_velocity_measurement(&s.nav, &omega, &lever, &s.geom, &veh, &measured, &self.config.vel_noise_wheel)
                            .map_err(err_string)
                    }
                });
                Some(m)
            })
            .collect()
    }

    fn velocity_epoch(&mut self, t: f64) -> Result<(), FusionError> {
        let Some(aid) = self.next_aiding(t) else { return Ok(()) };
        self.diagnostics.aiding.push(aid);
        let ms = self.velocity_measurements(&aid);
        if self.joint.is_some() {
            return self.apply_joint_velocity(ms, t);
        }
        let check = self.config.check_invariants;
        for &i in &self.order.clone() {
            let Some(m) = &ms[i] else { continue };
            match m {
                Ok(m) => match self.subsystems[i].apply(m, check) {
                    Ok(info) => self.diagnostics.velocity.record(info.innovation.as_slice(), info.nis),
                    Err(reason) => self.subsystems[i].fail(t, reason),
                },
                Err(reason) => self.skip(t, i, reason, true),
            }
        }
        self.collect_failures(t)
    }

    fn skip(&mut self, t: f64, i: usize, reason: &str, velocity: bool) {
        let stats = if velocity { &mut self.diagnostics.velocity } else { &mut self.diagnostics.constraint };
        stats.skipped += 1;
        self.diagnostics.events.push(Event { t, imu: self.subsystems[i].geom.imu_id.clone(), message: format!("update skipped: {reason}") });
    }

    /// Reference-point snapshot of every active subsystem in its own
    /// w-frame, with the vehicle attitude each one used.
    pub fn reference_snapshot(&self) -> Vec<Option<(Vec3, VehicleAttitude)>> {
        let (roll, pitch, src) = self.shared_roll_pitch();
        self.subsystems
            .iter()
            .map(|s| {
                s.active().then(|| {
                    let veh = s.vehicle_attitude(roll, pitch, src);
                    (s.reference_point(&veh), veh)
                })
            })
            .collect()
    }

    /// Weighted reference point in w-frame `target` from a snapshot.
    pub fn consensus(&self, snapshot: &[Option<(Vec3, VehicleAttitude)>], target: usize) -> Result<Vec3, MeasError> {
        let mut est = Vec::new();
        let mut w = Vec::new();
        let mut tr = Vec::new();
        for (i, s) in snapshot.iter().enumerate() {
            if let Some((r, _)) = s {
                est.push(*r);
                w.push(self.weights[i]);
                tr.push(self.translations[target][i]);
            }
        }
        weighted_reference_position(&est, &w, &tr)
    }

    fn constraint_measurements(&self) -> Vec<Option<Result<LinearMeasurement<3>, String>>> {
        let snap = self.reference_snapshot();
        (0..self.subsystems.len())
            .map(|j| {
                let (_, veh) = snap[j].as_ref()?;
                let s = &self.subsystems[j];
                Some(
                    self.consensus(&snap, j)
                        .and_then(|r| multi_imu_constraint_measurement(&s.nav, veh, &s.geom, &r, &self.config.constraint_noise))
                        .map_err(err_string),
                )
            })
            .collect()
    }

    fn constraint_epoch(&mut self, t: f64) -> Result<(), FusionError> {
        if self.active_count() < 2 {
            return Ok(());
        }
        let ms = self.constraint_measurements();
        if self.joint.is_some() {
            return self.apply_joint_constraint(ms, t);
        }
        let check = self.config.check_invariants;
        for &i in &self.order.clone() {
            let Some(m) = &ms[i] else { continue };
            match m {
                Ok(m) => match self.subsystems[i].apply(m, check) {
                    Ok(info) => self.diagnostics.constraint.record(info.innovation.as_slice(), info.nis),
                    Err(reason) => self.subsystems[i].fail(t, reason),
                },
                Err(reason) => self.skip(t, i, reason, false),
            }
        }
        self.collect_failures(t)
    }

    /// Fused navigation output: weighted reference point in the first
    /// subsystem's w-frame and the circular mean of the vehicle headings.
    pub fn fused_output(&self) -> FusedOutput {
        let t = self.subsystems.iter().find(|s| s.active()).unwrap_or(&self.subsystems[0]).nav.t;
        let snap = self.reference_snapshot();
        let (roll, pitch, _) = self.shared_roll_pitch();
        let position = self.consensus(&snap, 0).unwrap_or_else(|_| {
            // Weights always renormalize over active subsystems, so this is
            // only reachable with nothing active.
            Vec3::repeat(f64::NAN)
        });
        let subsystems: Vec<SubsystemOutput> = self
            .subsystems
            .iter()
            .zip(&snap)
            .enumerate()
            .map(|(i, (s, sn))| match sn {
                Some((r, veh)) => SubsystemOutput {
                    imu_id: s.geom.imu_id.clone(),
                    active: true,
                    reference_point: r + self.translations[0][i],
                    heading: veh.euler.z,
                },
                None => SubsystemOutput {
                    imu_id: s.geom.imu_id.clone(),
                    active: false,
                    reference_point: Vec3::repeat(f64::NAN),
                    heading: f64::NAN,
                },
            })
            .collect();
        let headings: Vec<f64> = subsystems.iter().filter(|s| s.active).map(|s| s.heading).collect();
        FusedOutput { t, position, heading: circular_mean(&headings), roll, pitch, subsystems }
    }

    /// Shift from the output w-frame to the frame anchored at the initial
    /// position of the reference point.
    pub fn output_to_reference_frame(&self) -> Vec3 {
        w_frame_translation(-self.psi0, &self.subsystems[0].geom.pos_v, &Vec3::zeros())
    }

    pub fn trajectory_point(&self, out: &FusedOutput) -> TrajPoint {
        TrajPoint { t: out.t, pos: out.position + self.output_to_reference_frame(), euler: Vec3::new(out.roll, out.pitch, out.heading) }
    }
}

/// Vehicle heading of a wheel filter given roll and pitch.
pub fn wheel_heading(sub: &Subsystem, roll: f64, pitch: f64) -> f64 {
    wheel_vehicle_yaw(&sub.nav.att, &sub.geom, roll, pitch)
}

/// Mean direction of `angles`, rad in (−π, π].
pub fn circular_mean(angles: &[f64]) -> f64 {
    let (s, c) = angles.iter().fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    crate::geom::wrap_angle(s.atan2(c))
}

#[cfg(test)]
mod tests;
