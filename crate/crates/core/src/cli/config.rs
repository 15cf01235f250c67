//! Layered configuration: shipped defaults, then an optional file, then
//! `WHEELNAV_<SECTION>__<KEY>` environment variables.

use crate::fusion::JacobianForce;
use crate::geom::{Rotation, Vec3};
use crate::model::{
    FusionConfig, ImuRole, InitialStd, Mode, ModelError, SensorErrorModel, Topology, VehicleGeometry, DEG_PER_H,
    DEG_PER_SQRT_H, MPS_PER_SQRT_H,
};
use crate::sim::{Shape, SlopeProfile, TrajectorySpec};
use figment::providers::{Env, Format, Toml};
use figment::Figment;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// The shipped default configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../../config/default.toml");

/// Prefix of the environment overrides. Nested keys are separated by `__`.
pub const ENV_PREFIX: &str = "WHEELNAV_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub simulation: SimulationSection,
    pub vehicle: VehicleSection,
    pub filter: FilterSection,
    pub left_wheel: SensorSection,
    pub right_wheel: SensorSection,
    pub body: SensorSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub shape: String,
    pub aspect: f64,
    pub total_length: f64,
    pub laps: u32,
    pub speed: f64,
    pub corner_radius: f64,
    pub static_start: f64,
    pub static_end: f64,
    pub ramp_time: f64,
    pub initial_heading_deg: f64,
    pub slope_amplitude: f64,
    pub slope_cycles: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSection {
    pub wheel_radius: f64,
    pub track: f64,
    pub wheel_lever: [f64; 3],
    pub body_pos_v: [f64; 3],
    pub body_mounting_deg: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub topology: Topology,
    pub mode: Mode,
    pub imu_rate: f64,
    pub vel_update_rate: f64,
    pub constraint_rate: f64,
    pub output_rate: f64,
    pub vel_noise_wheel: [f64; 3],
    pub vel_noise_body: [f64; 3],
    pub constraint_noise: [f64; 3],
    pub weights: Vec<[f64; 3]>,
    pub initial_heading_deg: f64,
    pub gravity: f64,
    pub include_earth_rate: bool,
    pub latitude_deg: f64,
    pub align_time: f64,
    pub align_gyro_bias: bool,
    pub enable_constraint: bool,
    pub check_invariants: bool,
    pub jacobian_force: String,
    pub initial_std: InitialStdSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStdSection {
    pub pos: f64,
    pub vel: f64,
    pub roll_pitch_deg: f64,
    pub yaw_deg: f64,
}

/// Datasheet units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    pub gyro_bias_deg_h: f64,
    pub arw_deg_sqrt_h: f64,
    pub accel_bias: f64,
    pub vrw_mps_sqrt_h: f64,
    pub gyro_sf: f64,
    pub accel_sf: f64,
    pub tau_bg: f64,
    pub tau_ba: f64,
    pub tau_sg: f64,
    pub tau_sa: f64,
    pub gyro_bias_drift_deg_h: f64,
    pub accel_bias_drift: f64,
    pub gyro_range_deg_s: f64,
    pub scale_factor_stationary_start: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("configuration: {0}")]
    Parse(String),
    #[error(transparent)]
    Invalid(#[from] ModelError),
}

impl Default for AppConfig {
    fn default() -> Self {
        toml::from_str(DEFAULT_CONFIG).expect("shipped default config parses")
    }
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn invalid(field: &str, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid { field: field.to_string(), reason: reason.into() }
}

impl AppConfig {
    /// Defaults, then `base` (for example a configuration echoed into a
    /// manifest), then the file at `path`, then the environment.
    pub fn load(base: Option<&AppConfig>, path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut fig = Figment::from(Toml::string(DEFAULT_CONFIG));
        if let Some(b) = base {
            let s = toml::to_string(b).map_err(|e| ConfigError::Parse(e.to_string()))?;
            fig = fig.merge(Toml::string(&s));
        }
        if let Some(p) = path {
            if !p.is_file() {
                return Err(ConfigError::Parse(format!("{}: no such file", p.display())));
            }
            fig = fig.merge(Toml::file(p));
        }
        fig = fig.merge(Env::prefixed(ENV_PREFIX).split("__"));
        let cfg: AppConfig = fig.extract().map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let v = &self.vehicle;
        if !(v.wheel_radius > 0.0 && v.wheel_radius.is_finite()) {
            return Err(invalid("vehicle.wheel_radius", format!("must be positive, got {}", v.wheel_radius)));
        }
        if !(v.track > 0.0 && v.track.is_finite()) {
            return Err(invalid("vehicle.track", format!("must be positive, got {}", v.track)));
        }
        self.trajectory_spec()?;
        let f = self.fusion_config()?;
        f.validate()?;
        for role in [ImuRole::LeftWheel, ImuRole::RightWheel, ImuRole::Body] {
            self.sensor(role).validate_for_sim().map_err(|e| prefix(role.name(), e))?;
        }
        if self.simulation.static_start < f.align_time {
            return Err(invalid(
                "simulation.static_start",
                format!("{} s is shorter than filter.align_time {} s", self.simulation.static_start, f.align_time),
            ));
        }
        Ok(())
    }

    pub fn trajectory_spec(&self) -> Result<TrajectorySpec, ModelError> {
        let s = &self.simulation;
        let shape = match s.shape.as_str() {
            "rectangle" => Shape::RectangularLoop { aspect: s.aspect },
            "oval" => Shape::Oval,
            other => return Err(invalid("simulation.shape", format!("unknown shape '{other}', expected rectangle or oval"))),
        };
        Ok(TrajectorySpec {
            shape,
            total_length: s.total_length,
            speed: s.speed,
            laps: s.laps,
            corner_radius: s.corner_radius,
            slope: (s.slope_amplitude != 0.0).then_some(SlopeProfile { amplitude: s.slope_amplitude, cycles_per_lap: s.slope_cycles }),
            static_start: s.static_start,
            static_end: s.static_end,
            ramp_time: s.ramp_time,
            initial_heading: s.initial_heading_deg.to_radians(),
        })
    }

    pub fn vehicle(&self) -> VehicleGeometry {
        let v = &self.vehicle;
        VehicleGeometry {
            wheel_radius: v.wheel_radius,
            track: v.track,
            wheel_lever: v3(v.wheel_lever),
            body_pos_v: v3(v.body_pos_v),
            body_mounting: v3(v.body_mounting_deg).map(f64::to_radians),
        }
    }

    pub fn sensor(&self, role: ImuRole) -> SensorErrorModel {
        let s = match role {
            ImuRole::LeftWheel => &self.left_wheel,
            ImuRole::RightWheel => &self.right_wheel,
            ImuRole::Body => &self.body,
        };
        SensorErrorModel {
            gyro_bias_std: s.gyro_bias_deg_h * DEG_PER_H,
            arw: s.arw_deg_sqrt_h * DEG_PER_SQRT_H,
            accel_bias_std: s.accel_bias,
            vrw: s.vrw_mps_sqrt_h * MPS_PER_SQRT_H,
            gyro_sf_std: s.gyro_sf,
            accel_sf_std: s.accel_sf,
            tau_bg: s.tau_bg,
            tau_ba: s.tau_ba,
            tau_sg: s.tau_sg,
            tau_sa: s.tau_sa,
            gyro_bias_drift_std: s.gyro_bias_drift_deg_h * DEG_PER_H,
            accel_bias_drift_std: s.accel_bias_drift,
            gyro_range: s.gyro_range_deg_s.to_radians(),
            scale_factor_stationary_start: s.scale_factor_stationary_start,
        }
    }

    pub fn fusion_config(&self) -> Result<FusionConfig, ModelError> {
        let f = &self.filter;
        let jacobian_force = match f.jacobian_force.as_str() {
            "kinematic" => JacobianForce::Kinematic,
            "measured" => JacobianForce::Measured,
            other => return Err(invalid("filter.jacobian_force", format!("unknown value '{other}', expected kinematic or measured"))),
        };
        Ok(FusionConfig {
            topology: f.topology,
            mode: f.mode,
            imu_rate: f.imu_rate,
            vel_update_rate: f.vel_update_rate,
            constraint_rate: f.constraint_rate,
            vel_noise_wheel: v3(f.vel_noise_wheel),
            vel_noise_body: v3(f.vel_noise_body),
            constraint_noise: v3(f.constraint_noise),
            weights: f.weights.iter().copied().map(v3).collect(),
            initial_heading: f.initial_heading_deg.to_radians(),
            gravity: f.gravity,
            include_earth_rate: f.include_earth_rate,
            latitude: f.latitude_deg.to_radians(),
            align_time: f.align_time,
            align_gyro_bias: f.align_gyro_bias,
            initial_std: InitialStd {
                pos: f.initial_std.pos,
                vel: f.initial_std.vel,
                roll_pitch: f.initial_std.roll_pitch_deg.to_radians(),
                yaw: f.initial_std.yaw_deg.to_radians(),
                ..InitialStd::default()
            },
            wheel_errors: self.sensor(ImuRole::LeftWheel),
            body_errors: self.sensor(ImuRole::Body),
            enable_constraint: f.enable_constraint,
            output_rate: f.output_rate,
            check_invariants: f.check_invariants,
            jacobian_force,
        })
    }

    /// Rotation of the body IMU mounting.
    pub fn body_mounting(&self) -> Rotation {
        Rotation::from_euler(&self.vehicle().body_mounting)
    }
}

fn prefix(section: &str, e: ModelError) -> ModelError {
    match e {
        ModelError::Invalid { field, reason } => ModelError::Invalid { field: format!("{section}.{field}"), reason },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults_match_library_defaults() {
        let cfg = AppConfig::default();
        cfg.validate().unwrap();
        let lib = FusionConfig::default();
        let f = cfg.fusion_config().unwrap();
        assert_eq!(f.topology, lib.topology);
        assert_eq!(f.vel_noise_wheel, lib.vel_noise_wheel);
        assert_eq!(f.vel_noise_body, lib.vel_noise_body);
        assert_eq!(f.constraint_noise, lib.constraint_noise);
        assert_eq!(f.align_time, lib.align_time);
        assert!((f.initial_std.yaw - lib.initial_std.yaw).abs() < 1e-15);
        let icm = SensorErrorModel::icm20602();
        for role in [ImuRole::LeftWheel, ImuRole::RightWheel, ImuRole::Body] {
            let s = cfg.sensor(role);
            assert!((s.gyro_bias_std - icm.gyro_bias_std).abs() < 1e-18);
            assert!((s.arw - icm.arw).abs() < 1e-18);
            assert!((s.vrw - icm.vrw).abs() < 1e-15);
            assert_eq!((s.gyro_sf_std, s.accel_sf_std, s.accel_bias_std), (icm.gyro_sf_std, icm.accel_sf_std, icm.accel_bias_std));
            assert!((s.gyro_range - icm.gyro_range).abs() < 1e-12);
        }
        assert_eq!(cfg.vehicle(), VehicleGeometry::default());
        assert_eq!(cfg.trajectory_spec().unwrap(), TrajectorySpec::default());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = AppConfig::default();
        let back: AppConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn file_and_environment_override_defaults() {
        figment::Jail::expect_with(|jail| {
            jail.create_file("c.toml", "[vehicle]\ntrack = 0.5\n[filter]\ntopology = \"dual_wheel\"\n")?;
            jail.set_env("WHEELNAV_FILTER__TOPOLOGY", "body_wheel");
            jail.set_env("WHEELNAV_BODY__GYRO_BIAS_DEG_H", "50");
            let cfg = AppConfig::load(None, Some(Path::new("c.toml"))).unwrap();
            assert_eq!(cfg.vehicle.track, 0.5);
            assert_eq!(cfg.filter.topology, Topology::BodyWheel);
            assert_eq!(cfg.body.gyro_bias_deg_h, 50.0);
            assert_eq!(cfg.left_wheel.gyro_bias_deg_h, 200.0);
            Ok(())
        });
    }

    #[test]
    fn zero_wheel_radius_names_the_field() {
        figment::Jail::expect_with(|jail| {
            jail.create_file("c.toml", "[vehicle]\nwheel_radius = 0.0\n")?;
            let err = AppConfig::load(None, Some(Path::new("c.toml"))).unwrap_err();
            assert!(err.to_string().contains("vehicle.wheel_radius"), "{err}");
            Ok(())
        });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        figment::Jail::expect_with(|jail| {
            jail.create_file("c.toml", "[filter]\ntopolgy = \"triple\"\n")?;
            assert!(AppConfig::load(None, Some(Path::new("c.toml"))).is_err());
            Ok(())
        });
    }
}
