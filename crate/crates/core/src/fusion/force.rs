//! Specific force at which the error dynamics are linearized.
//!
//! The raw accelerometer sample carries the full white noise of the sensor.
//! Used directly in the transition matrix, that noise enters both the true
//! error and the modelled coupling to the attitude and scale-factor states,
//! and the filter starts to explain noise as scale factor. The kinematic
//! reference rebuilds the specific force from the vehicle motion instead:
//! yaw rate times velocity, the along-track acceleration, gravity, and for a
//! wheel IMU the rotation about the wheel center.

use crate::geom::Vec3;
use crate::model::{ImuRole, ImuSample, MountingGeometry, NavState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianForce {
    /// The compensated accelerometer sample.
    Measured,
    #[default]
    Kinematic,
}

/// Smoothing time constant of the wheel speed derived from the spin rate, s.
const SPIN_TAU: f64 = 0.05;
/// Smoothing time constant of the body IMU ground speed, s.
const SPEED_TAU: f64 = 0.5;

/// Low-passed value and its low-passed derivative.
#[derive(Debug, Clone, Copy, Default)]
struct Tracked {
    value: Option<f64>,
    rate: f64,
}

impl Tracked {
    fn push(&mut self, x: f64, dt: f64, tau: f64) {
        let a = 1.0 - (-dt / tau).exp();
        match self.value {
            None => self.value = Some(x),
            Some(v) => {
                let next = v + (x - v) * a;
                self.rate += ((next - v) / dt - self.rate) * a;
                self.value = Some(next);
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(super) struct ForceReference {
    kind: JacobianForce,
    speed: Tracked,
}

impl ForceReference {
    pub fn new(kind: JacobianForce) -> Self {
        Self { kind, speed: Tracked::default() }
    }

    /// b-frame specific force for the transition matrix at the post-update
    /// state `nav` with compensated sample `comp`.
    pub fn specific_force(&mut self, nav: &NavState, comp: &ImuSample, geom: &MountingGeometry, gravity: f64, dt: f64) -> Vec3 {
        if self.kind == JacobianForce::Measured {
            return comp.accel;
        }
        let c = nav.att.matrix();
        let w = comp.gyro;
        match geom.role {
            ImuRole::Body => {
                let v = nav.vel;
                self.speed.push(v.xy().norm(), dt, SPEED_TAU);
                let f_n = horizontal_accel(&v, (c * w).z, self.speed.rate) - Vec3::z() * gravity;
                c.transpose() * f_n
            }
            ImuRole::LeftWheel | ImuRole::RightWheel => {
                // Normalized wheel frame: x along the axle, so the spin is
                // w.x and the vehicle rotation lies in y-z.
                let rho = -geom.lever_wheel;
                self.speed.push(w.x.abs() * geom.wheel_radius, dt, SPIN_TAU);
                let v_center = nav.vel - c * w.cross(&rho);
                let yaw_rate = (c * Vec3::new(0.0, w.y, w.z)).z;
                let f_center = horizontal_accel(&v_center, yaw_rate, self.speed.rate) - Vec3::z() * gravity;
                let w_dot = Vec3::new(self.speed.rate / geom.wheel_radius * w.x.signum(), 0.0, 0.0);
                c.transpose() * f_center + w_dot.cross(&rho) + w.cross(&w.cross(&rho))
            }
        }
    }
}

/// Turn plus along-track acceleration of a point moving with `vel`.
fn horizontal_accel(vel: &Vec3, yaw_rate: f64, along: f64) -> Vec3 {
    let h = Vec3::new(vel.x, vel.y, 0.0);
    let n = h.norm();
    let dir = if n > 1e-3 { h / n } else { Vec3::zeros() };
    Vec3::new(-yaw_rate * vel.y, yaw_rate * vel.x, 0.0) + dir * along
}
