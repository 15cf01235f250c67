//! Ground-truth trajectories and synthetic IMU streams.
//!
//! A path is a sequence of straight and turning segments in horizontal arc
//! length `σ`, optionally with a periodic elevation profile. The horizontal
//! speed profile `σ̇(t)` is analytic (rest, cosine ramp, cruise, ramp, rest),
//! so position, velocity, acceleration, attitude, angular rate and angular
//! acceleration of the vehicle are all available in closed form apart from
//! the positions inside smoothed turns, which use Gauss-Legendre quadrature.
//!
//! The vehicle never rolls. Pitch follows the grade. IMU outputs come from
//! rigid-body kinematics; a wheel IMU additionally spins about the axle at
//! the rate its wheel center rolls.

use crate::geom::{Rotation, Vec3};
use crate::model::{
    invalid, ImuRole, ImuSample, ModelError, MountingGeometry, SensorErrorModel, TrajPoint,
    Trajectory, DEFAULT_GRAVITY,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI};

/// Largest lateral acceleration accepted in a turn, m/s².
const MAX_LATERAL_ACCEL: f64 = 0.3 * DEFAULT_GRAVITY;

// 8-point Gauss-Legendre rule on [-1, 1].
const GL_X: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_W: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

fn gauss_legendre(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (m, h) = ((a + b) / 2.0, (b - a) / 2.0);
    GL_X.iter().zip(GL_W.iter()).map(|(x, w)| w * f(m + h * x)).sum::<f64>() * h
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{imu}: required angular rate {required:.2} rad/s exceeds the sensor range {range:.2} rad/s")]
    GyroRange { imu: String, required: f64, range: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Rectangle with smoothed corners; `aspect` is long side over short side.
    RectangularLoop { aspect: f64 },
    /// Stadium: two straights joined by half circles of `corner_radius`.
    Oval,
    /// Open polyline through horizontal (north, east) points, corners smoothed.
    /// The path length follows from the points; `laps` and `total_length`
    /// are ignored.
    Waypoints(Vec<[f64; 2]>),
}

/// Periodic elevation `h(σ) = amplitude (1 - cos(2π cycles σ / lap))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeProfile {
    pub amplitude: f64,
    pub cycles_per_lap: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub shape: Shape,
    /// Horizontal path length over all laps, m.
    pub total_length: f64,
    /// Cruise horizontal speed, m/s.
    pub speed: f64,
    pub laps: u32,
    /// Minimum turning radius, m.
    pub corner_radius: f64,
    pub slope: Option<SlopeProfile>,
    /// Stationary time before moving, s.
    pub static_start: f64,
    /// Stationary time after stopping, s.
    pub static_end: f64,
    /// Duration of the speed ramps, s.
    pub ramp_time: f64,
    /// Initial vehicle heading, rad.
    pub initial_heading: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            shape: Shape::RectangularLoop { aspect: 2.0 },
            total_length: 1227.0,
            speed: 1.4,
            laps: 5,
            corner_radius: 3.0,
            slope: None,
            static_start: 10.0,
            static_end: 2.0,
            ramp_time: 2.0,
            initial_heading: 0.0,
        }
    }
}

impl TrajectorySpec {
    /// Straight drive of `length` m at constant `speed`, no rest or ramps.
    pub fn straight(length: f64, speed: f64) -> Self {
        Self {
            shape: Shape::Waypoints(vec![[0.0, 0.0], [length, 0.0]]),
            total_length: length,
            speed,
            laps: 1,
            static_start: 0.0,
            static_end: 0.0,
            ramp_time: 0.0,
            ..Self::default()
        }
    }
}

/// Vehicle truth at one instant. `pos_v_origin` is the rear-axle midpoint in
/// a north-east-down frame whose origin is its starting point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleTruth {
    pub t: f64,
    pub pos_v_origin: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
    /// Roll, pitch, yaw (yaw wrapped).
    pub vehicle_euler: Vec3,
    /// Unwrapped yaw.
    pub heading: f64,
    /// Speed along the path (3D), m/s.
    pub forward_speed: f64,
    pub forward_accel: f64,
    /// Yaw angle rate, rad/s.
    pub yaw_rate: f64,
    /// Vehicle angular rate and angular acceleration in the v-frame.
    pub omega_v: Vec3,
    pub alpha_v: Vec3,
    /// Distance travelled along the path (3D), m.
    pub distance: f64,
    /// Integral of the v-frame z angular rate, rad.
    pub yaw_integral: f64,
}

impl VehicleTruth {
    pub fn c_vn(&self) -> Rotation {
        Rotation::from_euler(&self.vehicle_euler)
    }

    pub fn to_traj_point(&self) -> TrajPoint {
        TrajPoint { t: self.t, pos: self.pos_v_origin, euler: self.vehicle_euler }
    }
}

pub fn truth_trajectory(truth: &[VehicleTruth]) -> Trajectory {
    truth.iter().map(VehicleTruth::to_traj_point).collect()
}

#[derive(Debug, Clone, Copy)]
enum SegKind {
    Straight,
    Arc { curvature: f64 },
    /// Turn by `angle` with curvature `angle/len (1 - cos(2π u/len))`.
    Smooth { angle: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    kind: SegKind,
    start: f64,
    len: f64,
    heading: f64,
    north: f64,
    east: f64,
}

impl Segment {
    /// Heading, curvature and curvature rate at local arc length `u`.
    fn heading_at(&self, u: f64) -> (f64, f64, f64) {
        match self.kind {
            SegKind::Straight => (self.heading, 0.0, 0.0),
            SegKind::Arc { curvature } => (self.heading + curvature * u, curvature, 0.0),
            SegKind::Smooth { angle } => {
                let (k, w) = (angle / self.len, 2.0 * PI / self.len);
                let (s, c) = (w * u).sin_cos();
                (self.heading + k * (u - s / w), k * (1.0 - c), k * w * s)
            }
        }
    }

    fn position_at(&self, u: f64) -> (f64, f64) {
        match self.kind {
            SegKind::Straight => {
                let (s, c) = self.heading.sin_cos();
                (self.north + c * u, self.east + s * u)
            }
            SegKind::Arc { curvature } => {
                let h1 = self.heading + curvature * u;
                (
                    self.north + (h1.sin() - self.heading.sin()) / curvature,
                    self.east - (h1.cos() - self.heading.cos()) / curvature,
                )
            }
            SegKind::Smooth { .. } => {
                // Composite Gauss-Legendre over pieces of at most 0.5 m.
                let pieces = (u / 0.5).ceil().max(1.0) as usize;
                let h = u / pieces as f64;
                let (mut n, mut e) = (self.north, self.east);
                for k in 0..pieces {
                    let (a, b) = (k as f64 * h, (k + 1) as f64 * h);
                    n += gauss_legendre(a, b, |x| self.heading_at(x).0.cos());
                    e += gauss_legendre(a, b, |x| self.heading_at(x).0.sin());
                }
                (n, e)
            }
        }
    }

    fn end(&self) -> (f64, f64, f64) {
        let (n, e) = self.position_at(self.len);
        (n, e, self.heading_at(self.len).0)
    }
}

/// One lap of horizontal path geometry.
#[derive(Debug, Clone)]
struct Path {
    segments: Vec<Segment>,
    lap_len: f64,
    /// Displacement and heading change over one lap.
    lap_shift: (f64, f64, f64),
    laps: u32,
}

impl Path {
    fn build(kinds: &[(SegKind, f64)], heading0: f64, laps: u32) -> Path {
        let mut segments = Vec::with_capacity(kinds.len());
        let (mut s, mut n, mut e, mut h) = (0.0, 0.0, 0.0, heading0);
        for (kind, len) in kinds {
            let seg = Segment { kind: *kind, start: s, len: *len, heading: h, north: n, east: e };
            (n, e, h) = seg.end();
            s += len;
            segments.push(seg);
        }
        Path { segments, lap_len: s, lap_shift: (n, e, h - heading0), laps }
    }

    /// Heading (unwrapped), curvature, curvature rate, north, east at σ.
    fn eval(&self, sigma: f64) -> (f64, f64, f64, f64, f64) {
        let total = self.lap_len * self.laps as f64;
        let sigma = sigma.clamp(0.0, total);
        let mut lap = (sigma / self.lap_len).floor();
        if lap >= self.laps as f64 {
            lap = self.laps as f64 - 1.0;
        }
        let u = sigma - lap * self.lap_len;
        let i = match self.segments.binary_search_by(|sg| sg.start.partial_cmp(&u).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        let seg = &self.segments[i];
        let local = (u - seg.start).min(seg.len);
        let (h, k, dk) = seg.heading_at(local);
        let (n, e) = seg.position_at(local);
        let (dn, de, dh) = self.lap_shift;
        // Closed loops have zero displacement per lap; the rotation of an
        // open lap is not modelled since open paths run a single lap.
        (h + lap * dh, k, dk, n + lap * dn, e + lap * de)
    }
}

fn smooth_turn(angle: f64, radius: f64) -> (SegKind, f64) {
    // Peak curvature 1/radius.
    (SegKind::Smooth { angle }, 2.0 * angle.abs() * radius)
}

fn build_path(spec: &TrajectorySpec) -> Result<Path, ModelError> {
    let lap = spec.total_length / spec.laps.max(1) as f64;
    let r = spec.corner_radius;
    match &spec.shape {
        Shape::RectangularLoop { aspect } => {
            if !(*aspect >= 1.0) {
                return Err(invalid("trajectory.aspect", "must be at least 1"));
            }
            let (corner, lc) = smooth_turn(FRAC_PI_2, r);
            let short = (lap - 4.0 * lc) / (2.0 * (1.0 + aspect));
            if short <= 0.0 {
                return Err(invalid("trajectory.corner_radius", "corners longer than the lap"));
            }
            let long = aspect * short;
            let kinds = [
                (SegKind::Straight, long / 2.0),
                (corner, lc),
                (SegKind::Straight, short),
                (corner, lc),
                (SegKind::Straight, long),
                (corner, lc),
                (SegKind::Straight, short),
                (corner, lc),
                (SegKind::Straight, long / 2.0),
            ];
            Ok(Path::build(&kinds, spec.initial_heading, spec.laps))
        }
        Shape::Oval => {
            let straight = (lap - 2.0 * PI * r) / 2.0;
            if straight <= 0.0 {
                return Err(invalid("trajectory.corner_radius", "half circles longer than the lap"));
            }
            let arc = (SegKind::Arc { curvature: 1.0 / r }, PI * r);
            let kinds = [
                (SegKind::Straight, straight / 2.0),
                arc,
                (SegKind::Straight, straight),
                arc,
                (SegKind::Straight, straight / 2.0),
            ];
            Ok(Path::build(&kinds, spec.initial_heading, spec.laps))
        }
        Shape::Waypoints(pts) => {
            if pts.len() < 2 {
                return Err(invalid("trajectory.waypoints", "need at least two points"));
            }
            let legs: Vec<(f64, f64)> = pts
                .windows(2)
                .map(|w| {
                    let (dn, de) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
                    ((dn * dn + de * de).sqrt(), de.atan2(dn))
                })
                .collect();
            let mut kinds = Vec::new();
            let mut trims = vec![(0.0, 0.0); legs.len()];
            let mut turns = Vec::new();
            for i in 1..legs.len() {
                let d = crate::geom::wrap_angle(legs[i].1 - legs[i - 1].1);
                let t = smooth_turn(d, r);
                trims[i - 1].1 = t.1 / 2.0;
                trims[i].0 = t.1 / 2.0;
                turns.push(t);
            }
            for (i, (len, _)) in legs.iter().enumerate() {
                let l = len - trims[i].0 - trims[i].1;
                if l < 0.0 {
                    return Err(invalid("trajectory.corner_radius", "turn longer than its legs"));
                }
                kinds.push((SegKind::Straight, l));
                if i < turns.len() {
                    kinds.push(turns[i]);
                }
            }
            let kinds: Vec<_> = kinds.into_iter().filter(|(_, l)| *l > 0.0).collect();
            Ok(Path::build(&kinds, legs[0].1, 1))
        }
    }
}

/// Horizontal speed profile.
#[derive(Debug, Clone, Copy)]
struct SpeedProfile {
    v: f64,
    t0: f64,
    ramp: f64,
    cruise: f64,
    length: f64,
}

impl SpeedProfile {
    fn end_of_motion(&self) -> f64 {
        self.t0 + 2.0 * self.ramp + self.cruise
    }

    /// σ, σ̇, σ̈ at time t.
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let (v, tr) = (self.v, self.ramp);
        let ramp_len = v * tr / 2.0;
        let t1 = t - self.t0;
        if t1 < 0.0 || (t1 == 0.0 && self.ramp > 0.0) {
            return (0.0, 0.0, 0.0);
        }
        if t1 < tr {
            let w = PI / tr;
            return (v / 2.0 * (t1 - (w * t1).sin() / w), v / 2.0 * (1.0 - (w * t1).cos()), v / 2.0 * w * (w * t1).sin());
        }
        let t2 = t1 - tr;
        if t2 <= self.cruise {
            return (ramp_len + v * t2, v, 0.0);
        }
        let t3 = t2 - self.cruise;
        if t3 < tr {
            let w = PI / tr;
            let s = self.length - ramp_len + v / 2.0 * (t3 + (w * t3).sin() / w);
            return (s, v / 2.0 * (1.0 + (w * t3).cos()), -v / 2.0 * w * (w * t3).sin());
        }
        (self.length, 0.0, 0.0)
    }
}

/// Elevation h, grade g = dh/dσ and its first two derivatives.
fn elevation(slope: &Option<SlopeProfile>, lap: f64, sigma: f64) -> (f64, f64, f64, f64) {
    match slope {
        None => (0.0, 0.0, 0.0, 0.0),
        Some(p) => {
            let k = 2.0 * PI * p.cycles_per_lap as f64 / lap;
            let (s, c) = (k * sigma).sin_cos();
            let a = p.amplitude;
            (a * (1.0 - c), a * k * s, a * k * k * c, -a * k * k * k * s)
        }
    }
}

/// Samples the trajectory at `dt` from rest to rest.
pub fn generate_trajectory(spec: &TrajectorySpec, dt: f64) -> Result<Vec<VehicleTruth>, SimError> {
    if !(dt > 0.0 && dt <= 0.02) {
        return Err(invalid("dt", "must be in (0, 0.02] s").into());
    }
    if !(spec.speed > 0.0 && spec.corner_radius > 0.0 && spec.laps > 0) {
        return Err(invalid("trajectory", "speed, corner_radius and laps must be positive").into());
    }
    if !(spec.static_start >= 0.0 && spec.static_end >= 0.0 && spec.ramp_time >= 0.0) {
        return Err(invalid("trajectory", "durations must be non-negative").into());
    }
    if spec.speed * spec.speed / spec.corner_radius > MAX_LATERAL_ACCEL {
        return Err(invalid(
            "trajectory.corner_radius",
            format!(
                "{} m is too tight for {} m/s (lateral acceleration above {:.2} m/s²)",
                spec.corner_radius, spec.speed, MAX_LATERAL_ACCEL
            ),
        )
        .into());
    }
    let path = build_path(spec)?;
    let length = path.lap_len * path.laps as f64;
    if !(length > spec.speed * spec.ramp_time) {
        return Err(invalid("trajectory.total_length", "too short for the speed ramps").into());
    }
    let profile = SpeedProfile {
        v: spec.speed,
        t0: spec.static_start,
        ramp: spec.ramp_time,
        cruise: (length - spec.speed * spec.ramp_time) / spec.speed,
        length,
    };
    let t_end = profile.end_of_motion() + spec.static_end;
    let n = (t_end / dt).round() as usize;
    let lap = path.lap_len;
    let flat = spec.slope.is_none();
    let psi0 = path.eval(0.0).0;
    let theta0 = elevation(&spec.slope, lap, 0.0).1.atan();

    let mut out = Vec::with_capacity(n + 1);
    let (mut dist, mut yaw_int, mut prev_sigma) = (0.0, 0.0, 0.0);
    for k in 0..=n {
        let t = k as f64 * dt;
        let (sigma, sd, sdd) = profile.eval(t);
        let (psi, kap, dkap, north, east) = path.eval(sigma);
        let (h, g, g1, g2) = elevation(&spec.slope, lap, sigma);
        let q = 1.0 + g * g;
        let (theta, cth, sth) = (g.atan(), 1.0 / q.sqrt(), g / q.sqrt());
        let th_d = g1 * sd / q;
        let th_dd = (g2 * sd * sd + g1 * sdd) / q - 2.0 * g * g1 * g1 * sd * sd / (q * q);
        let psi_d = kap * sd;
        let psi_dd = dkap * sd * sd + kap * sdd;
        let (sp, cp) = psi.sin_cos();
        let tangent = Vec3::new(cp, sp, -g);
        let vel = tangent * sd;
        let acc = tangent * sdd + Vec3::new(-kap * sp, kap * cp, -g1) * (sd * sd);
        let omega = Vec3::new(-sth * psi_d, th_d, cth * psi_d);
        let alpha = Vec3::new(
            -cth * th_d * psi_d - sth * psi_dd,
            th_dd,
            -sth * th_d * psi_d + cth * psi_dd,
        );
        let v3 = sd * q.sqrt();
        let a3 = sdd * q.sqrt() + sd * sd * g * g1 / q.sqrt();
        if flat {
            dist = sigma;
            yaw_int = psi - psi0;
        } else if k > 0 {
            let slope = &spec.slope;
            dist += gauss_legendre(prev_sigma, sigma, |x| {
                let g = elevation(slope, lap, x).1;
                (1.0 + g * g).sqrt()
            });
            yaw_int += gauss_legendre(prev_sigma, sigma, |x| {
                let g = elevation(slope, lap, x).1;
                path.eval(x).1 / (1.0 + g * g).sqrt()
            });
        }
        prev_sigma = sigma;
        out.push(VehicleTruth {
            t,
            pos_v_origin: Vec3::new(north, east, -h),
            vel,
            acc,
            vehicle_euler: Vec3::new(0.0, theta, crate::geom::wrap_angle(psi)),
            heading: psi,
            forward_speed: v3,
            forward_accel: a3,
            yaw_rate: psi_d,
            omega_v: omega,
            alpha_v: alpha,
            distance: dist,
            yaw_integral: yaw_int,
        });
    }
    let _ = theta0;
    Ok(out)
}

/// Error-free kinematic output of one IMU at one instant, in the normalized
/// b-frame, together with its true attitude and position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuKinematics {
    pub gyro: Vec3,
    pub accel: Vec3,
    pub att: Rotation,
    pub pos: Vec3,
    pub vel: Vec3,
}

/// Rigid-body kinematics of a mounted IMU.
pub fn imu_kinematics(tr: &VehicleTruth, geom: &MountingGeometry, gravity: f64, theta0: f64) -> ImuKinematics {
    let c_vn = tr.c_vn();
    let (w, a) = (tr.omega_v, tr.alpha_v);
    let g_n = Vec3::new(0.0, 0.0, gravity);
    match geom.role {
        ImuRole::Body => {
            let p = geom.pos_v;
            let c_bv = geom.imu_to_vehicle;
            let c_vb = c_bv.transpose();
            let acc = tr.acc + c_vn * (a.cross(&p) + w.cross(&w.cross(&p)));
            let att = c_vn * c_bv;
            ImuKinematics {
                gyro: c_vb * w,
                accel: att.transpose() * (acc - g_n),
                att,
                pos: tr.pos_v_origin + c_vn * p,
                vel: tr.vel + c_vn * w.cross(&p),
            }
        }
        _ => {
            let c = geom.pos_v;
            let r = geom.wheel_radius;
            // Rolling distance of this wheel's center and its derivatives.
            let d = tr.distance - c.y * tr.yaw_integral + c.z * (tr.vehicle_euler.y - theta0);
            let d1 = tr.forward_speed + w.y * c.z - w.z * c.y;
            let d2 = tr.forward_accel + a.y * c.z - a.z * c.y;
            let (beta, beta1, beta2) = (d / r, d1 / r, d2 / r);
            let c_bv = geom.imu_to_vehicle * Rotation::rx(beta);
            let c_vb = c_bv.transpose();
            let spin = Vec3::new(beta1, 0.0, 0.0);
            let wv_b = c_vb * w;
            let w_b = wv_b + spin;
            let a_b = c_vb * a - spin.cross(&wv_b) + Vec3::new(beta2, 0.0, 0.0);
            let att = c_vn * c_bv;
            let rho = -geom.lever_wheel;
            let acc_c = tr.acc + c_vn * (a.cross(&c) + w.cross(&w.cross(&c)));
            let acc = acc_c + att * (a_b.cross(&rho) + w_b.cross(&w_b.cross(&rho)));
            let vel_c = tr.vel + c_vn * w.cross(&c);
            ImuKinematics {
                gyro: w_b,
                accel: att.transpose() * (acc - g_n),
                att,
                pos: tr.pos_v_origin + c_vn * c + att * rho,
                vel: vel_c + att * w_b.cross(&rho),
            }
        }
    }
}

/// First-order Gauss-Markov sequence, drawn from its stationary law at start.
struct GaussMarkov {
    value: Vec3,
    phi: f64,
    drive: f64,
}

impl GaussMarkov {
    fn new(std: f64, tau: f64, dt: f64, rng: &mut ChaCha8Rng) -> Self {
        let phi = (-dt / tau).exp();
        Self { value: normal3(rng) * std, phi, drive: std * (1.0 - phi * phi).sqrt() }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> Vec3 {
        let v = self.value;
        self.value = self.value * self.phi + normal3(rng) * self.drive;
        v
    }
}

fn normal3(rng: &mut ChaCha8Rng) -> Vec3 {
    let mut n = || -> f64 { StandardNormal.sample(rng) };
    Vec3::new(n(), n(), n())
}

/// Stream id for the seed split, so each role draws independent noise.
fn stream_id(role: ImuRole) -> u64 {
    match role {
        ImuRole::LeftWheel => 1,
        ImuRole::RightWheel => 2,
        ImuRole::Body => 3,
    }
}

/// True sensor errors realized for one stream, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RealizedErrors {
    pub gyro_bias_turn_on: Vec3,
    pub accel_bias_turn_on: Vec3,
    pub gyro_scale_initial: Vec3,
    pub accel_scale_initial: Vec3,
}

/// Synthesizes one raw IMU stream (mounting flip applied) from truth.
pub fn synthesize_imu(
    truth: &[VehicleTruth],
    geom: &MountingGeometry,
    err: &SensorErrorModel,
    seed: u64,
) -> Result<Vec<ImuSample>, SimError> {
    synthesize_imu_with(truth, geom, err, seed, DEFAULT_GRAVITY).map(|(s, _)| s)
}

pub fn synthesize_imu_with(
    truth: &[VehicleTruth],
    geom: &MountingGeometry,
    err: &SensorErrorModel,
    seed: u64,
    gravity: f64,
) -> Result<(Vec<ImuSample>, RealizedErrors), SimError> {
    geom.validate()?;
    err.validate_for_sim()?;
    if truth.len() < 2 {
        return Ok((Vec::new(), RealizedErrors::default()));
    }
    let dt = truth[1].t - truth[0].t;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(geom.role));

    let bg0 = normal3(&mut rng) * err.gyro_bias_std;
    let ba0 = normal3(&mut rng) * err.accel_bias_std;
    let mut bg = GaussMarkov::new(err.gyro_bias_drift_std, err.tau_bg, dt, &mut rng);
    let mut ba = GaussMarkov::new(err.accel_bias_drift_std, err.tau_ba, dt, &mut rng);
    let mut sg = GaussMarkov::new(err.gyro_sf_std, err.tau_sg, dt, &mut rng);
    let mut sa = GaussMarkov::new(err.accel_sf_std, err.tau_sa, dt, &mut rng);
    if !err.scale_factor_stationary_start {
        sg.value = Vec3::zeros();
        sa.value = Vec3::zeros();
    }
    let realized = RealizedErrors {
        gyro_bias_turn_on: bg0,
        accel_bias_turn_on: ba0,
        gyro_scale_initial: sg.value,
        accel_scale_initial: sa.value,
    };
    let gyro_white = err.arw / dt.sqrt();
    let accel_white = err.vrw / dt.sqrt();
    let theta0 = truth[0].vehicle_euler.y;

    let mut out = Vec::with_capacity(truth.len());
    for tr in truth {
        let k = imu_kinematics(tr, geom, gravity, theta0);
        let peak = k.gyro.amax();
        if peak > err.gyro_range {
            return Err(SimError::GyroRange { imu: geom.imu_id.clone(), required: peak, range: err.gyro_range });
        }
        let (b_g, b_a, s_g, s_a) = (bg.step(&mut rng), ba.step(&mut rng), sg.step(&mut rng), sa.step(&mut rng));
        let gyro = k.gyro + bg0 + b_g + k.gyro.component_mul(&s_g) + normal3(&mut rng) * gyro_white;
        let accel = k.accel + ba0 + b_a + k.accel.component_mul(&s_a) + normal3(&mut rng) * accel_white;
        // The stored stream is in the physical mounting frame; the flip is
        // its own inverse.
        out.push(geom.normalize(&ImuSample::new(tr.t, gyro, accel)));
    }
    Ok((out, realized))
}

/// Streams for several IMUs on a common time base.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub streams: Vec<Vec<ImuSample>>,
    pub realized: Vec<RealizedErrors>,
    pub truth: Trajectory,
}

/// Runs [`synthesize_imu`] for every IMU. Each role draws from its own
/// stream of the seeded generator, so parallel and sequential execution give
/// identical results.
pub fn synthesize_all(
    truth: &[VehicleTruth],
    geoms: &[MountingGeometry],
    errs: &[SensorErrorModel],
    seed: u64,
) -> Result<SimOutput, SimError> {
    if geoms.len() != errs.len() {
        return Err(invalid("errs", "one error model per IMU").into());
    }
    let results: Vec<_> = geoms
        .par_iter()
        .zip(errs.par_iter())
        .map(|(g, e)| synthesize_imu_with(truth, g, e, seed, DEFAULT_GRAVITY))
        .collect();
    let mut streams = Vec::with_capacity(geoms.len());
    let mut realized = Vec::with_capacity(geoms.len());
    for r in results {
        let (s, e) = r?;
        streams.push(s);
        realized.push(e);
    }
    Ok(SimOutput { streams, realized, truth: truth_trajectory(truth) })
}
