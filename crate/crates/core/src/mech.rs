//! Strapdown mechanization in a local-level frame.
//!
//! Attitude is advanced by RK4 on the quaternion kinematics, with the
//! mid-step rate taken from a polynomial through the step samples and up
//! to two earlier ones. Velocity uses the trapezoidal rotated specific
//! force plus gravity, position the trapezoidal velocity. Earth rate (and
//! the Coriolis term) is dropped unless enabled; transport rate is always
//! dropped since the frame is flat.

use crate::geom::{Rotation, Vec3};
use nalgebra::{Quaternion, UnitQuaternion};
use crate::model::{Corrections, ImuSample, NavState, DEFAULT_GRAVITY};

/// Earth rotation rate, rad/s.
pub const EARTH_RATE: f64 = 7.292_115e-5;

/// Largest accepted sample interval, s.
pub const MAX_DT: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum MechError {
    #[error("non-monotonic time: {prev} -> {cur}")]
    NonMonotonic { prev: f64, cur: f64 },
    #[error("sample interval {0} s exceeds the limit")]
    StepTooLong(f64),
    #[error("non-finite IMU sample at t = {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechConfig {
    pub gravity: f64,
    /// Latitude (rad) when earth rate is modelled.
    pub earth_rate_latitude: Option<f64>,
}

impl Default for MechConfig {
    fn default() -> Self {
        Self { gravity: DEFAULT_GRAVITY, earth_rate_latitude: None }
    }
}

impl MechConfig {
    pub fn gravity_n(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.gravity)
    }

    /// Earth rate in the navigation frame (zero when disabled).
    pub fn earth_rate_n(&self) -> Vec3 {
        match self.earth_rate_latitude {
            Some(lat) => Vec3::new(EARTH_RATE * lat.cos(), 0.0, -EARTH_RATE * lat.sin()),
            None => Vec3::zeros(),
        }
    }
}

/// One mechanization step from `prev` to `cur` with sensor corrections.
pub fn ins_update(
    state: &NavState,
    prev: &ImuSample,
    cur: &ImuSample,
    corr: &Corrections,
    cfg: &MechConfig,
) -> Result<NavState, MechError> {
    ins_update_with_history(state, &[], prev, cur, corr, cfg)
}

/// As [`ins_update`], additionally using up to two samples preceding `prev`
/// (oldest first) to fit a higher-order angular rate over the step. A wheel
/// IMU spins at several rad/s while the vehicle yaws; the two-sample
/// increment leaves a heading error of ~1e-4 rad per turn at 200 Hz.
pub fn ins_update_with_history(
    state: &NavState,
    history: &[ImuSample],
    prev: &ImuSample,
    cur: &ImuSample,
    corr: &Corrections,
    cfg: &MechConfig,
) -> Result<NavState, MechError> {
    if !prev.is_finite() {
        return Err(MechError::NonFinite(prev.t));
    }
    if !cur.is_finite() {
        return Err(MechError::NonFinite(cur.t));
    }
    let dt = cur.t - prev.t;
    if !(dt > 0.0) {
        return Err(MechError::NonMonotonic { prev: prev.t, cur: cur.t });
    }
    if dt > MAX_DT + 1e-12 {
        return Err(MechError::StepTooLong(dt));
    }
    let mut nodes = Vec::with_capacity(4);
    let mut t_next = prev.t;
    for h in history.iter().rev().take(2) {
        if !h.is_finite() || !(h.t < t_next) || t_next - h.t > MAX_DT + 1e-12 {
            break;
        }
        t_next = h.t;
        nodes.push(corr.compensate(h));
    }
    nodes.reverse();
    nodes.push(corr.compensate(prev));
    nodes.push(corr.compensate(cur));
    Ok(propagate(state, &nodes, cfg))
}

/// Lagrange interpolation of the angular rate through `nodes` at `t`.
fn rate_at(nodes: &[ImuSample], t: f64) -> Vec3 {
    let mut w = Vec3::zeros();
    for (i, a) in nodes.iter().enumerate() {
        let mut l = 1.0;
        for (j, b) in nodes.iter().enumerate() {
            if i != j {
                l *= (t - b.t) / (a.t - b.t);
            }
        }
        w += a.gyro * l;
    }
    w
}

/// Body-frame rotation over one step: RK4 on the quaternion kinematics.
fn attitude_increment(nodes: &[ImuSample]) -> Rotation {
    let (prev, cur) = (&nodes[nodes.len() - 2], &nodes[nodes.len() - 1]);
    let dt = cur.t - prev.t;
    let w0 = prev.gyro;
    let wm = rate_at(nodes, prev.t + 0.5 * dt);
    let w1 = cur.gyro;
    let pure = |w: &Vec3| Quaternion::new(0.0, w.x, w.y, w.z);
    let f = |q: &Quaternion<f64>, w: &Vec3| q * pure(w) * 0.5;
    let q0 = Quaternion::identity();
    let k1 = f(&q0, &w0);
    let k2 = f(&(q0 + k1 * (0.5 * dt)), &wm);
    let k3 = f(&(q0 + k2 * (0.5 * dt)), &wm);
    let k4 = f(&(q0 + k3 * dt), &w1);
    let q = q0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    Rotation::from_quaternion(&UnitQuaternion::from_quaternion(q))
}

/// Mechanization with already compensated samples; `nodes` ends with the
/// step's two samples and may hold up to two earlier ones.
pub fn propagate(state: &NavState, nodes: &[ImuSample], cfg: &MechConfig) -> NavState {
    assert!(nodes.len() >= 2);
    let (prev, cur) = (&nodes[nodes.len() - 2], &nodes[nodes.len() - 1]);
    let dt = cur.t - prev.t;
    let w_ie = cfg.earth_rate_n();
    let mut att = state.att * attitude_increment(nodes);
    if cfg.earth_rate_latitude.is_some() {
        att = Rotation::exp(&(-w_ie * dt)) * att;
    }
    let att = att.renormalized();
    let f_prev = state.att * prev.accel;
    let f_cur = att * cur.accel;
    let coriolis = 2.0 * w_ie.cross(&state.vel);
    let vel = state.vel + ((f_prev + f_cur) * 0.5 + cfg.gravity_n() - coriolis) * dt;
    let pos = state.pos + (state.vel + vel) * (0.5 * dt);
    NavState { t: cur.t, pos, vel, att }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MountingGeometry;
    use crate::sim::{generate_trajectory, imu_kinematics, synthesize_imu, TrajectorySpec, VehicleTruth};
    use crate::model::SensorErrorModel;

    fn run(truth: &[VehicleTruth], samples: &[ImuSample], init: NavState, corr: &Corrections) -> NavState {
        let cfg = MechConfig::default();
        let mut nav = init;
        for k in 1..samples.len() {
            let history = &samples[k.saturating_sub(3)..k - 1];
            nav = ins_update_with_history(&nav, history, &samples[k - 1], &samples[k], corr, &cfg).unwrap();
            assert!(nav.att.orthonormality_error() < 1e-12);
        }
        let _ = truth;
        nav
    }

    fn initial(truth: &[VehicleTruth], g: &MountingGeometry) -> NavState {
        let k = imu_kinematics(&truth[0], g, DEFAULT_GRAVITY, truth[0].vehicle_euler.y);
        NavState { t: truth[0].t, pos: k.pos, vel: k.vel, att: k.att }
    }

    fn round_trip_error(spec: &TrajectorySpec, dt: f64, g: &MountingGeometry) -> (f64, f64) {
        let truth = generate_trajectory(spec, dt).unwrap();
        let s: Vec<_> = synthesize_imu(&truth, g, &SensorErrorModel::error_free(), 0)
            .unwrap()
            .iter()
            .map(|x| g.normalize(x))
            .collect();
        let nav = run(&truth, &s, initial(&truth, g), &Corrections::default());
        let end = imu_kinematics(truth.last().unwrap(), g, DEFAULT_GRAVITY, truth[0].vehicle_euler.y);
        ((nav.pos - end.pos).norm(), truth.last().unwrap().distance)
    }

    #[test]
    fn static_equilibrium() {
        let s0 = ImuSample::new(0.0, Vec3::zeros(), Vec3::new(0.0, 0.0, -DEFAULT_GRAVITY));
        let s1 = ImuSample { t: 0.005, ..s0 };
        let nav = NavState::at_rest(0.0, Rotation::identity());
        let out = ins_update(&nav, &s0, &s1, &Corrections::default(), &MechConfig::default()).unwrap();
        assert_eq!(out.pos, nav.pos);
        assert_eq!(out.vel, nav.vel);
        assert_eq!(out.att, nav.att);
        assert_eq!(out.t, 0.005);
    }

    #[test]
    fn single_axis_heading() {
        let rate = 0.1;
        let f = Vec3::new(0.0, 0.0, -DEFAULT_GRAVITY);
        let mut nav = NavState::at_rest(0.0, Rotation::identity());
        let mut prev = ImuSample::new(0.0, Vec3::new(0.0, 0.0, rate), f);
        for k in 1..=2000 {
            let cur = ImuSample { t: k as f64 * 0.005, ..prev };
            nav = ins_update(&nav, &prev, &cur, &Corrections::default(), &MechConfig::default()).unwrap();
            prev = cur;
        }
        let yaw = nav.att.to_euler().z;
        assert!((yaw - rate * 10.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_time_and_values() {
        let s0 = ImuSample::new(1.0, Vec3::zeros(), Vec3::new(0.0, 0.0, -9.8));
        let nav = NavState::at_rest(1.0, Rotation::identity());
        let c = Corrections::default();
        let m = MechConfig::default();
        assert!(matches!(ins_update(&nav, &s0, &s0, &c, &m), Err(MechError::NonMonotonic { .. })));
        let late = ImuSample { t: 1.5, ..s0 };
        assert!(matches!(ins_update(&nav, &s0, &late, &c, &m), Err(MechError::StepTooLong(_))));
        let bad = ImuSample { t: 1.005, gyro: Vec3::new(f64::NAN, 0.0, 0.0), ..s0 };
        assert!(matches!(ins_update(&nav, &s0, &bad, &c, &m), Err(MechError::NonFinite(_))));
    }

    #[test]
    fn error_free_loop_round_trip() {
        let spec = TrajectorySpec { total_length: 245.4, laps: 1, static_start: 1.0, ..Default::default() };
        for g in [
            MountingGeometry::left_wheel(0.2, 0.4),
            MountingGeometry::right_wheel(0.2, 0.4),
            MountingGeometry::body(Vec3::new(0.2, 0.05, -0.3), Rotation::from_euler(&Vec3::new(0.02, -0.01, 0.05))),
        ] {
            let (err, dist) = round_trip_error(&spec, 0.005, &g);
            assert!(err < 1e-4 * dist, "{:?}: {err} m over {dist} m", g.role);
        }
    }

    #[test]
    fn second_order_convergence() {
        let spec = TrajectorySpec { total_length: 120.0, laps: 1, corner_radius: 2.0, static_start: 0.5, ..Default::default() };
        let g = MountingGeometry::left_wheel(0.2, 0.4);
        let (e1, _) = round_trip_error(&spec, 0.01, &g);
        let (e2, _) = round_trip_error(&spec, 0.005, &g);
        assert!(e1 / e2 >= 3.0, "{e1} vs {e2}");
    }

    #[test]
    fn bias_compensation_is_exact() {
        let spec = TrajectorySpec { total_length: 60.0, laps: 1, corner_radius: 2.0, static_start: 0.5, ..Default::default() };
        let truth = generate_trajectory(&spec, 0.005).unwrap();
        let g = MountingGeometry::left_wheel(0.2, 0.4);
        let clean = synthesize_imu(&truth, &g, &SensorErrorModel::error_free(), 0).unwrap();
        let corr = Corrections {
            gyro_bias: Vec3::new(0.01, -0.003, 0.002),
            accel_bias: Vec3::new(0.05, 0.02, -0.04),
            ..Default::default()
        };
        let dirty: Vec<_> = clean
            .iter()
            .map(|s| ImuSample::new(s.t, s.gyro + corr.gyro_bias, s.accel + corr.accel_bias))
            .collect();
        let a = run(&truth, &clean, initial(&truth, &g), &Corrections::default());
        let b = run(&truth, &dirty, initial(&truth, &g), &corr);
        let scale = a.pos.norm().max(1.0);
        assert!((a.pos - b.pos).norm() / scale < 1e-12, "{}", (a.pos - b.pos).norm());
        assert!((a.att.matrix() - b.att.matrix()).amax() < 1e-12);
    }
}
