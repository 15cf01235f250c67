//! Measurement models: wheel speed with non-holonomic constraints for wheel
//! and body filters, vehicle attitude assembly, and the relative position
//! constraint between IMUs.
//!
//! Every model follows `z = ẑ − z̃` and perturbs the estimate as
//! `Ĉ_b^n = (I − φ×) C_b^n`, `r̂ = r + δr`, `v̂ = v + δv`,
//! `ω̂ = ω + b_g + diag(ω) s_g`.

use crate::ekf::LinearMeasurement;
use crate::geom::{heading_of, rotation_to_euler, skew, wrap_angle, Mat3, Rotation, Vec3};
use crate::model::{idx, ImuRole, MountingGeometry, NavState};
use nalgebra::SMatrix;

/// Largest plausible lever-arm velocity, m/s.
const MAX_LEVER_SPEED: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasError {
    #[error("lever-arm velocity {0:.1} m/s is implausible; check the mounting geometry")]
    LeverSpeed(f64),
    #[error("vehicle yaw must come from the updating wheel filter")]
    YawSource,
    #[error("axle is vertical; heading undefined")]
    VerticalAxle,
    #[error("weights sum to {0:?}, expected one per axis")]
    WeightSum(Vec3),
    #[error("{0} estimates but {1} weights/translations")]
    Length(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleSource {
    AssumedZero,
    BodyIns,
    WheelIns,
}

/// Vehicle roll, pitch, yaw with where each came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleAttitude {
    pub euler: Vec3,
    pub sources: [AngleSource; 3],
}

impl VehicleAttitude {
    /// Level vehicle with the given yaw.
    pub fn horizontal(yaw: f64, source: AngleSource) -> Self {
        Self { euler: Vec3::new(0.0, 0.0, yaw), sources: [AngleSource::AssumedZero, AngleSource::AssumedZero, source] }
    }

    /// Full attitude of a body filter: `C_v^n = C_b^n C_v^b`.
    pub fn from_body(nav: &NavState, geom: &MountingGeometry) -> Self {
        let euler = rotation_to_euler(&(nav.att * geom.imu_to_vehicle.transpose()));
        Self { euler, sources: [AngleSource::BodyIns; 3] }
    }

    /// Roll and pitch from elsewhere, yaw from a wheel filter.
    pub fn with_wheel_yaw(roll: f64, pitch: f64, roll_pitch_source: AngleSource, nav: &NavState, geom: &MountingGeometry) -> Self {
        let yaw = wheel_vehicle_yaw(&nav.att, geom, roll, pitch);
        Self { euler: Vec3::new(roll, pitch, yaw), sources: [roll_pitch_source, roll_pitch_source, AngleSource::WheelIns] }
    }

    pub fn c_vn(&self) -> Rotation {
        Rotation::from_euler(&self.euler)
    }
}

/// Vehicle yaw implied by a wheel filter: the axle keeps a fixed direction
/// in the v-frame while the wheel spins about it, so the axle heading in the
/// n-frame fixes the vehicle heading given roll and pitch. For a level
/// vehicle this is the axle heading minus the axle yaw in the v-frame.
pub fn wheel_vehicle_yaw(c_bn: &Rotation, geom: &MountingGeometry, roll: f64, pitch: f64) -> f64 {
    let axle_n = *c_bn * Vec3::x();
    let tilted = Rotation::ry(pitch) * (Rotation::rx(roll) * geom.axle_v());
    wrap_angle(heading_of(&axle_n) - heading_of(&tilted))
}

/// Row `∂ψ/∂φ` of the wheel-derived vehicle yaw.
pub fn wheel_yaw_jacobian(c_bn: &Rotation) -> Result<Vec3, MeasError> {
    let a = *c_bn * Vec3::x();
    let h2 = a.x * a.x + a.y * a.y;
    if h2 < 1e-12 {
        return Err(MeasError::VerticalAxle);
    }
    Ok(Vec3::new(a.x * a.z, a.y * a.z, -h2) / h2)
}

/// Forward speed from the wheel IMU's axle rate.
pub fn wheel_forward_velocity(gyro_x: f64, radius: f64) -> f64 {
    gyro_x * radius
}

/// Speed along v-frame x with zero lateral and vertical components.
pub fn wheel_velocity_vector(v_fwd: f64) -> Vec3 {
    Vec3::new(v_fwd, 0.0, 0.0)
}

fn check_lever(omega: &Vec3, lever: &Vec3) -> Result<(), MeasError> {
    let speed = omega.norm() * lever.norm();
    if speed > MAX_LEVER_SPEED {
        return Err(MeasError::LeverSpeed(speed));
    }
    Ok(())
}

fn diag_sq(noise: &Vec3) -> Vec3 {
    noise.component_mul(noise)
}

/// Predicted v-frame velocity of the point at `lever` (b-frame) from a
/// wheel filter, with vehicle roll and pitch given and yaw from the filter.
pub fn wheel_velocity_prediction(nav: &NavState, omega: &Vec3, lever: &Vec3, geom: &MountingGeometry, roll: f64, pitch: f64) -> Vec3 {
    let yaw = wheel_vehicle_yaw(&nav.att, geom, roll, pitch);
    let c_nv = Rotation::from_euler(&Vec3::new(roll, pitch, yaw)).transpose();
    c_nv * (nav.vel + nav.att * omega.cross(lever))
}

/// Velocity update for a wheel filter. `omega` is the compensated gyro
/// sample, `lever` runs from the IMU to the point whose speed is measured,
/// `measured` is the v-frame velocity vector of that point.
pub fn wheelins_velocity_measurement(
    nav: &NavState,
    omega: &Vec3,
    lever: &Vec3,
    geom: &MountingGeometry,
    veh_att: &VehicleAttitude,
    measured: &Vec3,
    noise: &Vec3,
) -> Result<LinearMeasurement<3>, MeasError> {
    if veh_att.sources[2] != AngleSource::WheelIns {
        return Err(MeasError::YawSource);
    }
    check_lever(omega, lever)?;
    let (roll, pitch) = (veh_att.euler.x, veh_att.euler.y);
    let c_bn = nav.att.matrix();
    let c_nv = *Rotation::from_euler(&Vec3::new(roll, pitch, wheel_vehicle_yaw(&nav.att, geom, roll, pitch)))
        .transpose()
        .matrix();
    let u = omega.cross(lever);
    let w = nav.vel + c_bn * u;
    let predicted = c_nv * w;
    let dpsi = wheel_yaw_jacobian(&nav.att)?;
    let heading_col = c_nv * skew(&w) * Vec3::z();
    let lever_gyro = -(c_nv * c_bn * skew(lever));

    let mut h = SMatrix::<f64, 3, { idx::N }>::zeros();
    h.fixed_view_mut::<3, 3>(0, idx::VEL).copy_from(&c_nv);
    h.fixed_view_mut::<3, 3>(0, idx::ATT).copy_from(&(c_nv * skew(&(c_bn * u)) + heading_col * dpsi.transpose()));
    h.fixed_view_mut::<3, 3>(0, idx::BG).copy_from(&lever_gyro);
    h.fixed_view_mut::<3, 3>(0, idx::SG).copy_from(&(lever_gyro * Mat3::from_diagonal(omega)));
    Ok(LinearMeasurement { z: predicted - measured, h, r: diag_sq(noise) })
}

/// Predicted v-frame velocity of the point at `lever` from a body filter.
pub fn body_velocity_prediction(nav: &NavState, omega: &Vec3, lever: &Vec3, geom: &MountingGeometry) -> Vec3 {
    geom.imu_to_vehicle * (nav.att.transpose() * nav.vel + omega.cross(lever))
}

/// Velocity update for a body filter against the shared wheel velocity.
pub fn bodyins_velocity_measurement(
    nav: &NavState,
    omega: &Vec3,
    lever: &Vec3,
    geom: &MountingGeometry,
    measured: &Vec3,
    noise: &Vec3,
) -> Result<LinearMeasurement<3>, MeasError> {
    check_lever(omega, lever)?;
    let c_bv = geom.imu_to_vehicle.matrix();
    let c_nb = nav.att.transpose();
    let predicted = body_velocity_prediction(nav, omega, lever, geom);
    let lever_gyro = -(c_bv * skew(lever));
    let mut h = SMatrix::<f64, 3, { idx::N }>::zeros();
    h.fixed_view_mut::<3, 3>(0, idx::VEL).copy_from(&(c_bv * c_nb.matrix()));
    h.fixed_view_mut::<3, 3>(0, idx::ATT).copy_from(&(-(c_bv * c_nb.matrix()) * skew(&nav.vel)));
    h.fixed_view_mut::<3, 3>(0, idx::BG).copy_from(&lever_gyro);
    h.fixed_view_mut::<3, 3>(0, idx::SG).copy_from(&(lever_gyro * Mat3::from_diagonal(omega)));
    Ok(LinearMeasurement { z: predicted - measured, h, r: diag_sq(noise) })
}

/// Reference point `o` in the filter's w-frame: the IMU position moved to
/// its mounting point (wheel center for wheel IMUs) and then back along the
/// mounting point's v-frame offset.
pub fn reference_point_in_w(nav: &NavState, veh_att: &VehicleAttitude, geom: &MountingGeometry) -> Vec3 {
    nav.pos + nav.att * geom.lever_wheel - veh_att.c_vn() * geom.pos_v
}

/// Translation between w-frames, `Rz(ψ)ᵀ (a − b)` with `Rz` the yaw matrix.
///
/// With `a`, `b` the v-frame mounting points of IMUs 1 and 2 and `ψ` the
/// initial vehicle heading, `w_frame_translation(−ψ, b, a)` is the offset
/// to add to a w₂ coordinate to express it in w₁.
pub fn w_frame_translation(psi0: f64, pos_v_a: &Vec3, pos_v_b: &Vec3) -> Vec3 {
    Rotation::rz(psi0).transpose() * (pos_v_a - pos_v_b)
}

/// Weighted reference point in the target's w-frame. `translations[i]`
/// maps subsystem `i`'s w-frame into the target's (zero for the target).
pub fn weighted_reference_position(estimates: &[Vec3], weights: &[Vec3], translations: &[Vec3]) -> Result<Vec3, MeasError> {
    if weights.len() != estimates.len() || translations.len() != estimates.len() {
        return Err(MeasError::Length(estimates.len(), weights.len().min(translations.len())));
    }
    let sum: Vec3 = weights.iter().sum();
    if (sum - Vec3::repeat(1.0)).amax() > 1e-9 {
        return Err(MeasError::WeightSum(sum));
    }
    let mut out = Vec3::zeros();
    for ((r, k), t) in estimates.iter().zip(weights).zip(translations) {
        out += k.component_mul(&(r + t));
    }
    Ok(out)
}

/// Relative position constraint for one filter against the shared
/// reference `r_tilde` (already in this filter's w-frame).
pub fn multi_imu_constraint_measurement(
    nav: &NavState,
    veh_att: &VehicleAttitude,
    geom: &MountingGeometry,
    r_tilde: &Vec3,
    noise: &Vec3,
) -> Result<LinearMeasurement<3>, MeasError> {
    let c_vn = veh_att.c_vn();
    let offset = c_vn * geom.pos_v;
    let att_block = match geom.role {
        ImuRole::Body => -skew(&offset),
        _ => {
            let dpsi = wheel_yaw_jacobian(&nav.att)?;
            let yaw_col = -(Vec3::z().cross(&offset));
            yaw_col * dpsi.transpose() + skew(&(nav.att * geom.lever_wheel))
        }
    };
    let mut h = SMatrix::<f64, 3, { idx::N }>::zeros();
    h.fixed_view_mut::<3, 3>(0, idx::POS).copy_from(&Mat3::identity());
    h.fixed_view_mut::<3, 3>(0, idx::ATT).copy_from(&att_block);
    let z = reference_point_in_w(nav, veh_att, geom) - r_tilde;
    Ok(LinearMeasurement { z, h, r: diag_sq(noise) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ErrorState, DEFAULT_GRAVITY};
    use crate::sim::{generate_trajectory, imu_kinematics, TrajectorySpec, VehicleTruth};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    const R: f64 = 0.2;
    const TRACK: f64 = 0.4;

    fn rvec(rng: &mut impl Rng, s: f64) -> Vec3 {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    /// Estimate seen through error state `x`.
    fn perturb(nav: &NavState, omega: &Vec3, x: &ErrorState) -> (NavState, Vec3) {
        let b = |k: usize| Vec3::new(x[k], x[k + 1], x[k + 2]);
        let nav = NavState {
            t: nav.t,
            pos: nav.pos + b(idx::POS),
            vel: nav.vel + b(idx::VEL),
            att: Rotation::exp(&-b(idx::ATT)) * nav.att,
        };
        (nav, omega + b(idx::BG) + omega.component_mul(&b(idx::SG)))
    }

    /// Central differences of `f` over every error-state column.
    fn fd_jacobian(f: impl Fn(&ErrorState) -> Vec3) -> SMatrix<f64, 3, { idx::N }> {
        let eps = 1e-6;
        let mut out = SMatrix::<f64, 3, { idx::N }>::zeros();
        for j in 0..idx::N {
            let mut x = ErrorState::zeros();
            x[j] = eps;
            out.set_column(j, &((f(&x) - f(&-x)) / (2.0 * eps)));
        }
        out
    }

    fn assert_close(h: &SMatrix<f64, 3, { idx::N }>, fd: &SMatrix<f64, 3, { idx::N }>, tol: f64) {
        for j in 0..idx::N {
            let scale = h.column(j).amax().max(fd.column(j).amax()).max(1e-3);
            let diff = (h.column(j) - fd.column(j)).amax();
            assert!(diff <= tol * scale, "column {j}: {} vs {}", h.column(j), fd.column(j));
        }
    }

    fn random_wheel(rng: &mut impl Rng) -> (NavState, Vec3, MountingGeometry) {
        let mut geom = MountingGeometry::left_wheel(R, TRACK);
        geom.lever_wheel = rvec(rng, 0.03);
        let veh = Rotation::from_euler(&Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-3.0..3.0)));
        let att = veh * geom.imu_to_vehicle * Rotation::rx(rng.random_range(-3.0..3.0)) * Rotation::exp(&rvec(rng, 0.05));
        let nav = NavState { t: 0.0, pos: rvec(rng, 50.0), vel: rvec(rng, 2.0), att };
        (nav, Vec3::new(rng.random_range(-8.0..8.0), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)), geom)
    }

    fn loop_truth() -> Vec<VehicleTruth> {
        let spec = TrajectorySpec { total_length: 120.0, laps: 1, static_start: 1.0, initial_heading: 0.7, ..Default::default() };
        generate_trajectory(&spec, 0.01).unwrap()
    }

    #[test]
    fn forward_speed_and_vector() {
        assert_eq!(wheel_forward_velocity(0.0, R), 0.0);
        assert!((wheel_forward_velocity(7.0, R) - 1.4).abs() < 1e-15);
        assert_eq!(wheel_velocity_vector(1.4), Vec3::new(1.4, 0.0, 0.0));
        assert_eq!(wheel_velocity_vector(0.0), Vec3::zeros());
    }

    proptest! {
        #[test]
        fn velocity_vector_is_nonholonomic(v in -20.0..20.0f64) {
            let m = wheel_velocity_vector(v);
            prop_assert_eq!(m.y, 0.0);
            prop_assert_eq!(m.z, 0.0);
        }

        #[test]
        fn translations_close_cycles(psi in -3.2..3.2f64, a in prop::array::uniform3(-2.0..2.0f64), b in prop::array::uniform3(-2.0..2.0f64), c in prop::array::uniform3(-2.0..2.0f64)) {
            let (a, b, c) = (Vec3::from(a), Vec3::from(b), Vec3::from(c));
            let cycle = w_frame_translation(psi, &a, &b) + w_frame_translation(psi, &b, &c) + w_frame_translation(psi, &c, &a);
            prop_assert!(cycle.amax() < 1e-12);
            prop_assert!((w_frame_translation(psi, &a, &b) + w_frame_translation(psi, &b, &a)).amax() < 1e-15);
        }

        #[test]
        fn constraint_innovation_ignores_common_translation(seed in any::<u64>(), shift in prop::array::uniform3(-100.0..100.0f64)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (nav, _, geom) = random_wheel(&mut rng);
            let veh = VehicleAttitude::with_wheel_yaw(0.02, -0.01, AngleSource::BodyIns, &nav, &geom);
            let r_tilde = rvec(&mut rng, 50.0);
            let shift = Vec3::from(shift);
            let a = multi_imu_constraint_measurement(&nav, &veh, &geom, &r_tilde, &Vec3::repeat(0.2)).unwrap();
            let moved = NavState { pos: nav.pos + shift, ..nav };
            let b = multi_imu_constraint_measurement(&moved, &veh, &geom, &(r_tilde + shift), &Vec3::repeat(0.2)).unwrap();
            prop_assert!((a.z - b.z).amax() < 1e-9);
            prop_assert_eq!(a.h, b.h);
        }
    }

    #[test]
    fn simulated_wheel_rate_gives_wheel_speed() {
        let truth = loop_truth();
        let left = MountingGeometry::left_wheel(R, TRACK);
        let right = MountingGeometry::right_wheel(R, TRACK);
        for tr in truth.iter().step_by(7) {
            let l = imu_kinematics(tr, &left, DEFAULT_GRAVITY, 0.0);
            let r = imu_kinematics(tr, &right, DEFAULT_GRAVITY, 0.0);
            // Differential drive: v ± yaw_rate·track/2 for the outer/inner wheel.
            let half = TRACK / 2.0;
            assert!((wheel_forward_velocity(l.gyro.x, R) - (tr.forward_speed + tr.yaw_rate * half)).abs() < 1e-9);
            assert!((wheel_forward_velocity(r.gyro.x, R) - (tr.forward_speed - tr.yaw_rate * half)).abs() < 1e-9);
        }
    }

    #[test]
    fn wheel_yaw_is_vehicle_yaw() {
        let truth = loop_truth();
        let g = MountingGeometry { lever_wheel: Vec3::new(0.01, 0.02, -0.01), ..MountingGeometry::left_wheel(R, TRACK) };
        for tr in truth.iter().step_by(11) {
            let k = imu_kinematics(tr, &g, DEFAULT_GRAVITY, 0.0);
            let yaw = wheel_vehicle_yaw(&k.att, &g, tr.vehicle_euler.x, tr.vehicle_euler.y);
            assert!(wrap_angle(yaw - tr.vehicle_euler.z).abs() < 1e-12);
        }
        let level = NavState::at_rest(0.0, Rotation::rz(0.3) * g.imu_to_vehicle * Rotation::rx(1.0));
        assert!((wheel_vehicle_yaw(&level.att, &g, 0.0, 0.0) - 0.3).abs() < 1e-12);
        // Axle heading minus the axle's v-frame yaw.
        let axle = heading_of(&(level.att * Vec3::x()));
        assert!((wrap_angle(axle + FRAC_PI_2) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn consistent_wheel_state_has_zero_innovation() {
        let truth = loop_truth();
        let g = MountingGeometry::left_wheel(R, TRACK);
        let lever = g.lever_to(&Vec3::zeros()).unwrap();
        for tr in truth.iter().step_by(13) {
            let k = imu_kinematics(tr, &g, DEFAULT_GRAVITY, 0.0);
            let nav = NavState { t: tr.t, pos: k.pos, vel: k.vel, att: k.att };
            let veh = VehicleAttitude::with_wheel_yaw(0.0, 0.0, AngleSource::AssumedZero, &nav, &g);
            let measured = wheel_velocity_vector(tr.forward_speed);
            let m = wheelins_velocity_measurement(&nav, &k.gyro, &lever, &g, &veh, &measured, &Vec3::repeat(0.03)).unwrap();
            assert!(m.z.amax() < 1e-9, "{}", m.z);
            let own = wheel_velocity_vector(wheel_forward_velocity(k.gyro.x, R));
            let m = wheelins_velocity_measurement(&nav, &k.gyro, &Vec3::zeros(), &g, &veh, &own, &Vec3::repeat(0.03)).unwrap();
            assert!(m.z.amax() < 1e-9);
        }
    }

    #[test]
    fn wheel_design_matrix_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (nav, omega, geom) = random_wheel(&mut rng);
        let veh = VehicleAttitude::with_wheel_yaw(0.0, 0.0, AngleSource::AssumedZero, &nav, &geom);
        let m = wheelins_velocity_measurement(&nav, &omega, &geom.lever_wheel, &geom, &veh, &Vec3::x(), &Vec3::new(0.03, 0.02, 0.02)).unwrap();
        assert_eq!(m.h.fixed_view::<3, 3>(0, idx::POS).clone_owned(), Mat3::zeros());
        assert_eq!(m.h.fixed_view::<3, 3>(0, idx::BA).clone_owned(), Mat3::zeros());
        assert_eq!(m.h.fixed_view::<3, 3>(0, idx::SA).clone_owned(), Mat3::zeros());
        assert_eq!(m.h.fixed_view::<3, 3>(0, idx::VEL).clone_owned(), *veh.c_vn().transpose().matrix());
        assert_eq!(m.r, Vec3::new(0.03f64.powi(2), 0.02f64.powi(2), 0.02f64.powi(2)));
    }

    #[test]
    fn wheel_design_matrix_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (nav, omega, geom) = random_wheel(&mut rng);
            let (roll, pitch) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            let lever = geom.lever_wheel + Vec3::new(rng.random_range(-0.3..0.3), 0.0, 0.0);
            let veh = VehicleAttitude::with_wheel_yaw(roll, pitch, AngleSource::BodyIns, &nav, &geom);
            let m = wheelins_velocity_measurement(&nav, &omega, &lever, &geom, &veh, &Vec3::zeros(), &Vec3::repeat(0.03)).unwrap();
            let fd = fd_jacobian(|x| {
                let (n, w) = perturb(&nav, &omega, x);
                wheel_velocity_prediction(&n, &w, &lever, &geom, roll, pitch)
            });
            assert_close(&m.h, &fd, 1e-5);
        }
    }

    #[test]
    fn wheel_measurement_rejects_foreign_yaw_and_wild_lever() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (nav, omega, geom) = random_wheel(&mut rng);
        let veh = VehicleAttitude::horizontal(0.0, AngleSource::BodyIns);
        let r = wheelins_velocity_measurement(&nav, &omega, &Vec3::zeros(), &geom, &veh, &Vec3::zeros(), &Vec3::repeat(0.1));
        assert_eq!(r.unwrap_err(), MeasError::YawSource);
        let veh = VehicleAttitude::with_wheel_yaw(0.0, 0.0, AngleSource::AssumedZero, &nav, &geom);
        let r = wheelins_velocity_measurement(&nav, &Vec3::new(50.0, 0.0, 0.0), &Vec3::new(0.0, 0.3, 0.0), &geom, &veh, &Vec3::zeros(), &Vec3::repeat(0.1));
        assert!(matches!(r, Err(MeasError::LeverSpeed(_))));
    }

    fn random_body(rng: &mut impl Rng) -> (NavState, Vec3, MountingGeometry) {
        let geom = MountingGeometry::body(rvec(rng, 0.5), Rotation::exp(&rvec(rng, 0.05)));
        let nav = NavState { t: 0.0, pos: rvec(rng, 50.0), vel: rvec(rng, 2.0), att: Rotation::exp(&rvec(rng, 3.0)) };
        (nav, rvec(rng, 1.0), geom)
    }

    #[test]
    fn body_stationary_and_turning() {
        let geom = MountingGeometry::body(Vec3::zeros(), Rotation::identity());
        let nav = NavState::at_rest(0.0, Rotation::rz(1.0));
        let m = bodyins_velocity_measurement(&nav, &Vec3::zeros(), &Vec3::new(0.3, 0.1, 0.0), &geom, &Vec3::zeros(), &Vec3::repeat(0.05)).unwrap();
        assert_eq!(m.z, Vec3::zeros());
        // Rigid body: point velocity = ω × r for a pure yaw rate.
        let (wz, lx) = (0.4, 0.5);
        let v = body_velocity_prediction(&nav, &Vec3::new(0.0, 0.0, wz), &Vec3::new(lx, 0.0, 0.0), &geom);
        assert!((v - Vec3::new(0.0, wz * lx, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn body_design_matrix_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let (nav, omega, geom) = random_body(&mut rng);
            let lever = rvec(&mut rng, 0.5);
            let m = bodyins_velocity_measurement(&nav, &omega, &lever, &geom, &Vec3::zeros(), &Vec3::repeat(0.05)).unwrap();
            let fd = fd_jacobian(|x| {
                let (n, w) = perturb(&nav, &omega, x);
                body_velocity_prediction(&n, &w, &lever, &geom)
            });
            assert_close(&m.h, &fd, 1e-5);
        }
    }

    #[test]
    fn body_consistent_state_in_simulation() {
        let truth = loop_truth();
        let g = MountingGeometry::body(Vec3::new(0.25, 0.05, -0.3), Rotation::from_euler(&Vec3::new(0.01, -0.02, 0.03)));
        let lever = g.lever_to(&Vec3::zeros()).unwrap();
        for tr in truth.iter().step_by(17) {
            let k = imu_kinematics(tr, &g, DEFAULT_GRAVITY, 0.0);
            let nav = NavState { t: tr.t, pos: k.pos, vel: k.vel, att: k.att };
            let m = bodyins_velocity_measurement(&nav, &k.gyro, &lever, &g, &wheel_velocity_vector(tr.forward_speed), &Vec3::repeat(0.05)).unwrap();
            assert!(m.z.amax() < 1e-9, "{}", m.z);
        }
    }

    #[test]
    fn reference_point_examples() {
        let g = MountingGeometry::body(Vec3::zeros(), Rotation::identity());
        let nav = NavState { pos: Vec3::new(1.0, 2.0, 3.0), ..NavState::at_rest(0.0, Rotation::rz(0.4)) };
        let veh = VehicleAttitude::from_body(&nav, &g);
        assert_eq!(reference_point_in_w(&nav, &veh, &g), nav.pos);
        let g = MountingGeometry::body(Vec3::new(0.0, -0.2, 0.0), Rotation::identity());
        let nav = NavState::at_rest(0.0, Rotation::identity());
        let veh = VehicleAttitude::from_body(&nav, &g);
        assert!((reference_point_in_w(&nav, &veh, &g) - Vec3::new(0.0, 0.2, 0.0)).amax() < 1e-15);
    }

    fn three_imus() -> [MountingGeometry; 3] {
        let mut l = MountingGeometry::left_wheel(R, TRACK);
        l.lever_wheel = Vec3::new(0.0, 0.01, -0.015);
        [l, MountingGeometry::right_wheel(R, TRACK), MountingGeometry::body(Vec3::new(0.3, 0.05, -0.25), Rotation::from_euler(&Vec3::new(0.01, 0.02, -0.03)))]
    }

    fn true_vehicle_attitude(nav: &NavState, g: &MountingGeometry, tr: &VehicleTruth) -> VehicleAttitude {
        match g.role {
            ImuRole::Body => VehicleAttitude::from_body(nav, g),
            _ => VehicleAttitude::with_wheel_yaw(tr.vehicle_euler.x, tr.vehicle_euler.y, AngleSource::BodyIns, nav, g),
        }
    }

    #[test]
    fn truth_fed_reference_points_coincide() {
        let truth = loop_truth();
        for tr in truth.iter().step_by(19) {
            for g in three_imus() {
                let k = imu_kinematics(tr, &g, DEFAULT_GRAVITY, 0.0);
                let nav = NavState { t: tr.t, pos: k.pos, vel: k.vel, att: k.att };
                let r = reference_point_in_w(&nav, &true_vehicle_attitude(&nav, &g, tr), &g);
                assert!((r - tr.pos_v_origin).amax() < 1e-9, "{:?}", g.role);
            }
        }
    }

    #[test]
    fn translation_examples() {
        let (a, b) = (Vec3::new(0.3, -0.2, 0.1), Vec3::new(-0.1, 0.2, 0.0));
        assert_eq!(w_frame_translation(0.0, &a, &b), a - b);
        let d = 0.4;
        let t = w_frame_translation(FRAC_PI_2, &Vec3::new(0.0, d, 0.0), &Vec3::zeros());
        // Rows (cos ψ, sin ψ, 0), (−sin ψ, cos ψ, 0), (0, 0, 1).
        let (s, c) = FRAC_PI_2.sin_cos();
        assert!((t - Vec3::new(s * d, c * d, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn weighted_average_examples() {
        let half = Vec3::repeat(0.5);
        let p = Vec3::new(1.0, 2.0, 3.0);
        let r = weighted_reference_position(&[p, p], &[half, half], &[Vec3::zeros(); 2]).unwrap();
        assert!((r - p).amax() < 1e-15);
        let r = weighted_reference_position(&[Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)], &[half, half], &[Vec3::zeros(); 2]).unwrap();
        assert_eq!(r, Vec3::new(1.0, 0.0, 0.0));
        let bad = weighted_reference_position(&[p, p], &[half, Vec3::repeat(0.6)], &[Vec3::zeros(); 2]);
        assert!(matches!(bad, Err(MeasError::WeightSum(_))));
    }

    #[test]
    fn truth_fed_weighted_reference_is_true_point() {
        let truth = loop_truth();
        let psi0 = truth[0].vehicle_euler.z;
        let geoms = three_imus();
        // Each w-frame is anchored at its mounting point's initial position.
        let origin = |g: &MountingGeometry| truth[0].pos_v_origin + truth[0].c_vn() * g.pos_v;
        let third = Vec3::repeat(1.0 / 3.0);
        for tr in truth.iter().step_by(23) {
            let est: Vec<Vec3> = geoms
                .iter()
                .map(|g| {
                    let k = imu_kinematics(tr, g, DEFAULT_GRAVITY, 0.0);
                    let nav = NavState { t: tr.t, pos: k.pos - origin(g), vel: k.vel, att: k.att };
                    reference_point_in_w(&nav, &true_vehicle_attitude(&nav, g, tr), g)
                })
                .collect();
            for (target, tg) in geoms.iter().enumerate() {
                let trans: Vec<Vec3> = geoms.iter().map(|g| w_frame_translation(-psi0, &g.pos_v, &tg.pos_v)).collect();
                assert_eq!(trans[target], Vec3::zeros());
                let r = weighted_reference_position(&est, &[third; 3], &trans).unwrap();
                assert!((r - (tr.pos_v_origin - origin(tg))).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn constraint_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (nav, _, geom) = random_wheel(&mut rng);
        let veh = VehicleAttitude::with_wheel_yaw(0.0, 0.0, AngleSource::AssumedZero, &nav, &geom);
        let r_hat = reference_point_in_w(&nav, &veh, &geom);
        let m = multi_imu_constraint_measurement(&nav, &veh, &geom, &r_hat, &Vec3::repeat(0.2)).unwrap();
        assert_eq!(m.z, Vec3::zeros());
        assert_eq!(m.r, Vec3::repeat(0.2 * 0.2));
        assert_eq!(m.h.fixed_view::<3, 3>(0, idx::POS).clone_owned(), Mat3::identity());
        let g = MountingGeometry::body(Vec3::zeros(), Rotation::identity());
        let veh = VehicleAttitude::from_body(&nav, &g);
        let m = multi_imu_constraint_measurement(&nav, &veh, &g, &Vec3::zeros(), &Vec3::repeat(0.2)).unwrap();
        assert_eq!(m.h.fixed_view::<3, 3>(0, idx::ATT).clone_owned(), Mat3::zeros());
    }

    #[test]
    fn constraint_design_matrix_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for i in 0..100 {
            let (nav, geom) = if i % 2 == 0 {
                let (n, _, g) = random_wheel(&mut rng);
                (n, g)
            } else {
                let (n, _, g) = random_body(&mut rng);
                (n, g)
            };
            let (roll, pitch) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
            let att_of = |n: &NavState| match geom.role {
                ImuRole::Body => VehicleAttitude::from_body(n, &geom),
                _ => VehicleAttitude::with_wheel_yaw(roll, pitch, AngleSource::BodyIns, n, &geom),
            };
            let m = multi_imu_constraint_measurement(&nav, &att_of(&nav), &geom, &Vec3::zeros(), &Vec3::repeat(0.2)).unwrap();
            let fd = fd_jacobian(|x| {
                let (n, _) = perturb(&nav, &Vec3::zeros(), x);
                reference_point_in_w(&n, &att_of(&n), &geom)
            });
            assert_close(&m.h, &fd, 1e-6);
        }
    }
}
