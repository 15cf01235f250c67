//! Shared data model: IMU samples, navigation states, the 21-element error
//! state layout, sensor error parameters, mounting geometry and fusion
//! configuration.
//!
//! Frames: the navigation frame is local-level north-east-down with a flat
//! earth and constant gravity. The vehicle frame has x forward, y right,
//! z down and its origin at the rear-axle midpoint. Each IMU integrates in
//! its own world frame, which is the navigation frame anchored at the IMU's
//! initial position.

use crate::geom::{heading_of, Rotation, Vec3};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

pub const DEFAULT_GRAVITY: f64 = 9.80665;

/// deg/h to rad/s.
pub const DEG_PER_H: f64 = PI / 180.0 / 3600.0;
/// deg/sqrt(h) to rad/sqrt(s).
pub const DEG_PER_SQRT_H: f64 = PI / 180.0 / 60.0;
/// m/s/sqrt(h) to m/s/sqrt(s).
pub const MPS_PER_SQRT_H: f64 = 1.0 / 60.0;

/// Error-state layout. Every design matrix indexes against these offsets.
pub mod idx {
    pub const POS: usize = 0;
    pub const VEL: usize = 3;
    pub const ATT: usize = 6;
    pub const BG: usize = 9;
    pub const BA: usize = 12;
    pub const SG: usize = 15;
    pub const SA: usize = 18;
    pub const N: usize = 21;
}

pub type ErrorState = SVector<f64, { idx::N }>;
pub type Covariance = SMatrix<f64, { idx::N }, { idx::N }>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("alignment failed: {0}")]
    Alignment(String),
}

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Angular rate, rad/s.
    pub gyro: Vec3,
    /// Specific force, m/s².
    pub accel: Vec3,
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vec3, accel: Vec3) -> Self {
        Self { t, gyro, accel }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.gyro.iter().all(|v| v.is_finite())
            && self.accel.iter().all(|v| v.is_finite())
    }
}

/// Position (world frame), velocity (navigation axes) and attitude `C_b^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub t: f64,
    pub pos: Vec3,
    pub vel: Vec3,
    pub att: Rotation,
}

impl NavState {
    pub fn at_rest(t: f64, att: Rotation) -> Self {
        Self { t, pos: Vec3::zeros(), vel: Vec3::zeros(), att }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.pos.iter().chain(self.vel.iter()).all(|v| v.is_finite())
            && self.att.matrix().iter().all(|v| v.is_finite())
    }
}

/// One pose of a trajectory: position and Z-Y-X Euler angles (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajPoint {
    pub t: f64,
    pub pos: Vec3,
    pub euler: Vec3,
}

pub type Trajectory = Vec<TrajPoint>;

/// Accumulated sensor error estimates fed back from the filter.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Corrections {
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
    pub gyro_scale: Vec3,
    pub accel_scale: Vec3,
}

impl Corrections {
    /// Inverse of `meas = true + b + diag(true) s`.
    pub fn compensate(&self, s: &ImuSample) -> ImuSample {
        ImuSample {
            t: s.t,
            gyro: (s.gyro - self.gyro_bias).component_div(&self.gyro_scale.add_scalar(1.0)),
            accel: (s.accel - self.accel_bias).component_div(&self.accel_scale.add_scalar(1.0)),
        }
    }
}

/// Stochastic sensor model. Bias and scale factor are first-order
/// Gauss-Markov processes with the given stationary std and correlation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorErrorModel {
    /// rad/s
    pub gyro_bias_std: f64,
    /// rad/sqrt(s)
    pub arw: f64,
    /// m/s²
    pub accel_bias_std: f64,
    /// m/s/sqrt(s)
    pub vrw: f64,
    pub gyro_sf_std: f64,
    pub accel_sf_std: f64,
    pub tau_bg: f64,
    pub tau_ba: f64,
    pub tau_sg: f64,
    pub tau_sa: f64,
    /// In-run bias wander std (rad/s), simulator only. The turn-on part of the
    /// bias is a constant drawn from `gyro_bias_std`.
    pub gyro_bias_drift_std: f64,
    /// In-run accelerometer bias wander std (m/s²), simulator only.
    pub accel_bias_drift_std: f64,
    /// Measurement range, rad/s.
    pub gyro_range: f64,
    /// Simulator only: start the scale-factor processes from their
    /// stationary law instead of from zero (calibrated at power-on).
    #[serde(default)]
    pub scale_factor_stationary_start: bool,
}

impl SensorErrorModel {
    /// MEMS-grade ICM20602 figures.
    pub fn icm20602() -> Self {
        Self::from_datasheet(200.0, 0.24, 0.01, 3.0, 0.03, 0.03)
    }

    /// Navigation-grade POS320 figures.
    pub fn pos320() -> Self {
        Self::from_datasheet(0.5, 0.05, 0.00025, 0.1, 0.001, 0.001)
    }

    /// Datasheet units: deg/h, deg/sqrt(h), m/s², m/s/sqrt(h), unitless.
    pub fn from_datasheet(
        gyro_bias_deg_h: f64,
        arw_deg_sqrt_h: f64,
        accel_bias: f64,
        vrw_mps_sqrt_h: f64,
        gyro_sf: f64,
        accel_sf: f64,
    ) -> Self {
        Self {
            gyro_bias_std: gyro_bias_deg_h * DEG_PER_H,
            arw: arw_deg_sqrt_h * DEG_PER_SQRT_H,
            accel_bias_std: accel_bias,
            vrw: vrw_mps_sqrt_h * MPS_PER_SQRT_H,
            gyro_sf_std: gyro_sf,
            accel_sf_std: accel_sf,
            tau_bg: 3600.0,
            tau_ba: 3600.0,
            tau_sg: 3600.0,
            tau_sa: 3600.0,
            gyro_bias_drift_std: 0.0,
            accel_bias_drift_std: 0.0,
            gyro_range: 2000.0_f64.to_radians(),
            scale_factor_stationary_start: false,
        }
    }

    /// Everything zero: exact sensors.
    pub fn error_free() -> Self {
        Self {
            gyro_bias_std: 0.0,
            arw: 0.0,
            accel_bias_std: 0.0,
            vrw: 0.0,
            gyro_sf_std: 0.0,
            accel_sf_std: 0.0,
            gyro_bias_drift_std: 0.0,
            accel_bias_drift_std: 0.0,
            ..Self::icm20602()
        }
    }

    /// Checks the model is usable as a filter prior (strictly positive).
    pub fn validate_for_filter(&self) -> Result<(), ModelError> {
        let fields = [
            ("gyro_bias_std", self.gyro_bias_std),
            ("arw", self.arw),
            ("accel_bias_std", self.accel_bias_std),
            ("vrw", self.vrw),
            ("gyro_sf_std", self.gyro_sf_std),
            ("accel_sf_std", self.accel_sf_std),
            ("tau_bg", self.tau_bg),
            ("tau_ba", self.tau_ba),
            ("tau_sg", self.tau_sg),
            ("tau_sa", self.tau_sa),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Checks the model is usable by the simulator (non-negative).
    pub fn validate_for_sim(&self) -> Result<(), ModelError> {
        let fields = [
            ("gyro_bias_std", self.gyro_bias_std),
            ("arw", self.arw),
            ("accel_bias_std", self.accel_bias_std),
            ("vrw", self.vrw),
            ("gyro_sf_std", self.gyro_sf_std),
            ("accel_sf_std", self.accel_sf_std),
            ("gyro_bias_drift_std", self.gyro_bias_drift_std),
            ("accel_bias_drift_std", self.accel_bias_drift_std),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        for (name, v) in [
            ("tau_bg", self.tau_bg),
            ("tau_ba", self.tau_ba),
            ("tau_sg", self.tau_sg),
            ("tau_sa", self.tau_sa),
            ("gyro_range", self.gyro_range),
        ] {
            if !(v > 0.0) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImuRole {
    LeftWheel,
    RightWheel,
    Body,
}

impl ImuRole {
    pub fn is_wheel(self) -> bool {
        !matches!(self, ImuRole::Body)
    }

    pub fn name(self) -> &'static str {
        match self {
            ImuRole::LeftWheel => "left_wheel",
            ImuRole::RightWheel => "right_wheel",
            ImuRole::Body => "body",
        }
    }
}

/// Where an IMU sits on the vehicle.
///
/// Wheel IMUs use a normalized body frame whose x-axis lies along the axle
/// pointing to the vehicle's left, so forward rolling gives a positive x
/// rate. `imu_to_vehicle` is then the zero-spin mounting `C_b^v`; the live
/// `C_b^v` adds the spin about x. A wheel stream recorded with the mirrored
/// axis (x to the right) sets `flip_axis`, which rotates it by π about z at
/// ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct MountingGeometry {
    pub imu_id: String,
    pub role: ImuRole,
    /// IMU center to wheel center in the b-frame (wheel IMUs only).
    pub lever_wheel: Vec3,
    /// Wheel IMUs: wheel center in the v-frame. Body IMU: IMU center.
    pub pos_v: Vec3,
    /// m, wheel IMUs only.
    pub wheel_radius: f64,
    pub imu_to_vehicle: Rotation,
    pub flip_axis: bool,
}

impl MountingGeometry {
    pub fn left_wheel(radius: f64, track: f64) -> Self {
        Self {
            imu_id: "left_wheel".into(),
            role: ImuRole::LeftWheel,
            lever_wheel: Vec3::zeros(),
            pos_v: Vec3::new(0.0, -track / 2.0, 0.0),
            wheel_radius: radius,
            imu_to_vehicle: Rotation::rz(-FRAC_PI_2),
            flip_axis: false,
        }
    }

    pub fn right_wheel(radius: f64, track: f64) -> Self {
        Self {
            imu_id: "right_wheel".into(),
            role: ImuRole::RightWheel,
            pos_v: Vec3::new(0.0, track / 2.0, 0.0),
            flip_axis: true,
            ..Self::left_wheel(radius, track)
        }
    }

    pub fn body(pos_v: Vec3, imu_to_vehicle: Rotation) -> Self {
        Self {
            imu_id: "body".into(),
            role: ImuRole::Body,
            lever_wheel: Vec3::zeros(),
            pos_v,
            wheel_radius: 0.0,
            imu_to_vehicle,
            flip_axis: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.role.is_wheel() && !(self.wheel_radius > 0.0 && self.wheel_radius.is_finite()) {
            return Err(invalid(
                &format!("{}.wheel_radius", self.imu_id),
                format!("must be positive, got {}", self.wheel_radius),
            ));
        }
        if !self.lever_wheel.iter().chain(self.pos_v.iter()).all(|v| v.is_finite()) {
            return Err(invalid(&format!("{}.lever_wheel", self.imu_id), "must be finite"));
        }
        if self.imu_to_vehicle.orthonormality_error() > 1e-9 {
            return Err(invalid(&format!("{}.imu_to_vehicle", self.imu_id), "not a rotation"));
        }
        Ok(())
    }

    /// Axle direction in the v-frame (wheel IMUs).
    pub fn axle_v(&self) -> Vec3 {
        self.imu_to_vehicle * Vec3::x()
    }

    /// Yaw of the axle in the v-frame.
    pub fn axle_yaw(&self) -> f64 {
        heading_of(&self.axle_v())
    }

    /// Maps a raw stream sample into the normalized b-frame.
    pub fn normalize(&self, s: &ImuSample) -> ImuSample {
        if !self.flip_axis {
            return *s;
        }
        let f = |v: &Vec3| Vec3::new(-v.x, -v.y, v.z);
        ImuSample { t: s.t, gyro: f(&s.gyro), accel: f(&s.accel) }
    }

    /// Lever arm in the b-frame from the IMU to a point fixed in the v-frame.
    ///
    /// For a wheel IMU the point must lie on the axle line, which is the only
    /// case where the lever is constant in the spinning b-frame.
    pub fn lever_to(&self, target_v: &Vec3) -> Result<Vec3, ModelError> {
        let d = target_v - self.pos_v;
        match self.role {
            ImuRole::Body => Ok(self.imu_to_vehicle.transpose() * d),
            _ => {
                let axle = self.axle_v();
                let along = axle.dot(&d);
                if (d - axle * along).norm() > 1e-9 {
                    return Err(invalid(
                        &format!("{}.target", self.imu_id),
                        "wheel lever target must lie on the axle",
                    ));
                }
                Ok(self.lever_wheel + Vec3::new(along, 0.0, 0.0))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    SingleWheel,
    DualWheel,
    BodyWheel,
    Triple,
}

impl Topology {
    pub const ALL: [Topology; 4] =
        [Topology::SingleWheel, Topology::DualWheel, Topology::BodyWheel, Topology::Triple];

    /// IMU roles in subsystem order; the first one anchors the output.
    pub fn roles(self) -> &'static [ImuRole] {
        match self {
            Topology::SingleWheel => &[ImuRole::LeftWheel],
            Topology::DualWheel => &[ImuRole::LeftWheel, ImuRole::RightWheel],
            Topology::BodyWheel => &[ImuRole::LeftWheel, ImuRole::Body],
            Topology::Triple => &[ImuRole::LeftWheel, ImuRole::RightWheel, ImuRole::Body],
        }
    }

    /// Vehicle roll and pitch are assumed zero when no body IMU is present.
    pub fn horizontal_assumption(self) -> bool {
        !self.roles().contains(&ImuRole::Body)
    }

    /// Both wheel speeds available, so the averaged speed of the reference
    /// point is used.
    pub fn averaged_speed(self) -> bool {
        self.roles().contains(&ImuRole::RightWheel)
    }

    pub fn name(self) -> &'static str {
        match self {
            Topology::SingleWheel => "single_wheel",
            Topology::DualWheel => "dual_wheel",
            Topology::BodyWheel => "body_wheel",
            Topology::Triple => "triple",
        }
    }
}

impl std::str::FromStr for Topology {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "single_wheel" | "single" => Ok(Topology::SingleWheel),
            "dual_wheel" | "dual" => Ok(Topology::DualWheel),
            "body_wheel" | "bodywheel" => Ok(Topology::BodyWheel),
            "triple" => Ok(Topology::Triple),
            _ => Err(invalid("topology", format!("unknown topology '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Distributed,
    Centralized,
}

impl std::str::FromStr for Mode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s.to_ascii_lowercase().as_str() {
            "distributed" => Ok(Mode::Distributed),
            "centralized" => Ok(Mode::Centralized),
            _ => Err(invalid("mode", format!("unknown mode '{s}'"))),
        }
    }
}

/// Initial one-sigma uncertainties. Sensor error terms default to the
/// filter's [`SensorErrorModel`] values when left `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialStd {
    pub pos: f64,
    pub vel: f64,
    pub roll_pitch: f64,
    pub yaw: f64,
    pub gyro_bias: Option<f64>,
    pub accel_bias: Option<f64>,
    pub gyro_scale: Option<f64>,
    pub accel_scale: Option<f64>,
}

impl Default for InitialStd {
    fn default() -> Self {
        Self {
            pos: 0.01,
            vel: 0.01,
            roll_pitch: 0.5_f64.to_radians(),
            yaw: 0.5_f64.to_radians(),
            gyro_bias: None,
            accel_bias: None,
            gyro_scale: None,
            accel_scale: None,
        }
    }
}

impl InitialStd {
    pub fn covariance(&self, err: &SensorErrorModel) -> Covariance {
        let mut d = ErrorState::zeros();
        let blocks = [
            (idx::POS, Vec3::repeat(self.pos)),
            (idx::VEL, Vec3::repeat(self.vel)),
            (idx::ATT, Vec3::new(self.roll_pitch, self.roll_pitch, self.yaw)),
            (idx::BG, Vec3::repeat(self.gyro_bias.unwrap_or(err.gyro_bias_std))),
            (idx::BA, Vec3::repeat(self.accel_bias.unwrap_or(err.accel_bias_std))),
            (idx::SG, Vec3::repeat(self.gyro_scale.unwrap_or(err.gyro_sf_std))),
            (idx::SA, Vec3::repeat(self.accel_scale.unwrap_or(err.accel_sf_std))),
        ];
        for (i, s) in blocks {
            d.fixed_rows_mut::<3>(i).copy_from(&s.component_mul(&s));
        }
        Covariance::from_diagonal(&d)
    }
}

/// Mounting layout of a differential-drive robot carrying up to three IMUs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleGeometry {
    /// m
    pub wheel_radius: f64,
    /// Distance between the wheel centers, m.
    pub track: f64,
    /// Wheel IMU center to wheel center in the wheel b-frame, m.
    pub wheel_lever: Vec3,
    /// Body IMU position in the v-frame, m.
    pub body_pos_v: Vec3,
    /// Body IMU mounting angles (roll, pitch, yaw of `C_b^v`), rad.
    pub body_mounting: Vec3,
}

impl Default for VehicleGeometry {
    /// Roughly a Pioneer 3DX.
    fn default() -> Self {
        Self {
            wheel_radius: 0.0975,
            track: 0.4,
            wheel_lever: Vec3::zeros(),
            body_pos_v: Vec3::new(0.1, 0.0, -0.2),
            body_mounting: Vec3::zeros(),
        }
    }
}

impl VehicleGeometry {
    pub fn imu(&self, role: ImuRole) -> MountingGeometry {
        match role {
            ImuRole::LeftWheel => MountingGeometry { lever_wheel: self.wheel_lever, ..MountingGeometry::left_wheel(self.wheel_radius, self.track) },
            ImuRole::RightWheel => MountingGeometry { lever_wheel: self.wheel_lever, ..MountingGeometry::right_wheel(self.wheel_radius, self.track) },
            ImuRole::Body => MountingGeometry::body(self.body_pos_v, Rotation::from_euler(&self.body_mounting)),
        }
    }

    /// Every IMU, in [`ImuRole`] order.
    pub fn all(&self) -> Vec<MountingGeometry> {
        [ImuRole::LeftWheel, ImuRole::RightWheel, ImuRole::Body].iter().map(|r| self.imu(*r)).collect()
    }

    /// The IMUs of a topology, in its role order.
    pub fn for_topology(&self, topology: Topology) -> Vec<MountingGeometry> {
        topology.roles().iter().map(|r| self.imu(*r)).collect()
    }
}

/// Filter and scheduling configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub topology: Topology,
    pub mode: Mode,
    /// Hz
    pub imu_rate: f64,
    /// Hz
    pub vel_update_rate: f64,
    /// Hz
    pub constraint_rate: f64,
    /// m/s, one sigma per v-frame axis.
    pub vel_noise_wheel: Vec3,
    pub vel_noise_body: Vec3,
    /// m, one sigma.
    pub constraint_noise: Vec3,
    /// Diagonal weights per subsystem in topology order; empty means equal.
    pub weights: Vec<Vec3>,
    /// Initial vehicle heading, rad.
    pub initial_heading: f64,
    pub gravity: f64,
    pub include_earth_rate: bool,
    /// rad, used only with `include_earth_rate`.
    pub latitude: f64,
    /// Seconds of stationary data at the start used for alignment.
    pub align_time: f64,
    /// Take the mean static gyro output as the initial bias estimate.
    pub align_gyro_bias: bool,
    pub initial_std: InitialStd,
    /// Filter prior per IMU role.
    pub wheel_errors: SensorErrorModel,
    pub body_errors: SensorErrorModel,
    pub enable_constraint: bool,
    /// Hz of the fused output stream.
    pub output_rate: f64,
    /// Check covariance symmetry and PSD at every epoch.
    pub check_invariants: bool,
    /// Specific force used in the transition matrix.
    pub jacobian_force: crate::fusion::JacobianForce,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            topology: Topology::Triple,
            mode: Mode::Distributed,
            imu_rate: 200.0,
            vel_update_rate: 2.0,
            constraint_rate: 1.0,
            vel_noise_wheel: Vec3::new(0.03, 0.02, 0.02),
            vel_noise_body: Vec3::new(0.05, 0.04, 0.04),
            constraint_noise: Vec3::new(0.2, 0.2, 0.2),
            weights: Vec::new(),
            initial_heading: 0.0,
            gravity: DEFAULT_GRAVITY,
            include_earth_rate: false,
            latitude: 30.5_f64.to_radians(),
            align_time: 5.0,
            align_gyro_bias: true,
            initial_std: InitialStd::default(),
            wheel_errors: SensorErrorModel::icm20602(),
            body_errors: SensorErrorModel::icm20602(),
            enable_constraint: true,
            output_rate: 10.0,
            check_invariants: true,
            jacobian_force: Default::default(),
        }
    }
}

impl FusionConfig {
    pub fn horizontal_assumption(&self) -> bool {
        self.topology.horizontal_assumption()
    }

    /// Samples between two events at `rate`.
    pub fn decimation(&self, rate: f64) -> usize {
        (self.imu_rate / rate).round() as usize
    }

    /// Resolved weight diagonals, one per subsystem.
    pub fn resolved_weights(&self) -> Vec<Vec3> {
        let n = self.topology.roles().len();
        if self.weights.is_empty() {
            vec![Vec3::repeat(1.0 / n as f64); n]
        } else {
            self.weights.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.imu_rate > 0.0 && self.imu_rate.is_finite()) {
            return Err(invalid("imu_rate", "must be positive"));
        }
        for (name, r) in [
            ("vel_update_rate", self.vel_update_rate),
            ("constraint_rate", self.constraint_rate),
            ("output_rate", self.output_rate),
        ] {
            if !(r > 0.0) {
                return Err(invalid(name, "must be positive"));
            }
            let k = self.imu_rate / r;
            if (k - k.round()).abs() > 1e-9 || k.round() < 1.0 {
                return Err(invalid(name, format!("must divide imu_rate {} evenly", self.imu_rate)));
            }
        }
        for (name, v) in [
            ("vel_noise_wheel", self.vel_noise_wheel),
            ("vel_noise_body", self.vel_noise_body),
            ("constraint_noise", self.constraint_noise),
        ] {
            if !v.iter().all(|x| *x > 0.0 && x.is_finite()) {
                return Err(invalid(name, "all components must be positive"));
            }
        }
        let w = self.resolved_weights();
        if w.len() != self.topology.roles().len() {
            return Err(invalid(
                "weights",
                format!("expected {} entries, got {}", self.topology.roles().len(), w.len()),
            ));
        }
        let sum: Vec3 = w.iter().sum();
        if (sum - Vec3::repeat(1.0)).amax() > 1e-9 {
            return Err(invalid("weights", "must sum to identity"));
        }
        if !(self.gravity > 0.0) {
            return Err(invalid("gravity", "must be positive"));
        }
        if !(self.align_time >= 1.0) {
            return Err(invalid("align_time", "needs at least 1 s of static data"));
        }
        self.wheel_errors.validate_for_filter()?;
        self.body_errors.validate_for_filter()?;
        Ok(())
    }
}

/// Options for [`static_coarse_align`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignOptions {
    pub gravity: f64,
    /// Sensor angle random walk, rad/sqrt(s); sets the motion threshold.
    pub arw: f64,
    pub estimate_gyro_bias: bool,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self { gravity: DEFAULT_GRAVITY, arw: SensorErrorModel::icm20602().arw, estimate_gyro_bias: true }
    }
}

/// Levels a stationary IMU from its mean specific force and sets yaw to
/// `initial_heading`. Returns the state at the last sample and the mean gyro
/// output as a bias estimate.
pub fn static_coarse_align(
    samples: &[ImuSample],
    initial_heading: f64,
    opts: &AlignOptions,
) -> Result<(NavState, Vec3), ModelError> {
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(ModelError::Alignment("no samples".into())),
    };
    if last.t - first.t < 1.0 - 1e-9 {
        return Err(ModelError::Alignment(format!(
            "need at least 1 s of static data, got {:.3} s",
            last.t - first.t
        )));
    }
    let n = samples.len() as f64;
    let f: Vec3 = samples.iter().map(|s| s.accel).sum::<Vec3>() / n;
    let w: Vec3 = samples.iter().map(|s| s.gyro).sum::<Vec3>() / n;

    if ((f.norm() - opts.gravity) / opts.gravity).abs() > 0.05 {
        return Err(ModelError::Alignment(format!(
            "specific force {:.4} m/s² is not within 5% of gravity",
            f.norm()
        )));
    }
    let dt = (last.t - first.t) / (n - 1.0);
    // Per-sample white gyro variance predicted from the ARW, with a floor for
    // noise-free data.
    let predicted = (opts.arw * opts.arw / dt).max(1e-10);
    let var = samples.iter().map(|s| (s.gyro - w).norm_squared()).sum::<f64>() / (3.0 * n);
    if var > 10.0 * predicted {
        return Err(ModelError::Alignment(format!(
            "gyro variance {var:.3e} exceeds 10x the noise prediction {predicted:.3e}; motion detected"
        )));
    }
    let roll = (-f.y).atan2(-f.z);
    let pitch = (f.x / (f.y * f.y + f.z * f.z).sqrt()).atan();
    let att = Rotation::from_euler(&Vec3::new(roll, pitch, initial_heading));
    let bias = if opts.estimate_gyro_bias { w } else { Vec3::zeros() };
    Ok((NavState::at_rest(last.t, att), bias))
}
