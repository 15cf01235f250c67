//! A constant gyro bias on error-free sensors: the wheel IMU spins the
//! bias around its axle, the body IMU integrates it into heading.
//!
//!     cargo run --release --example rotation_modulation [deg_per_hour]

use wheelnav::fusion::{run, run_standalone};
use wheelnav::geom::{wrap_angle, Vec3};
use wheelnav::model::{FusionConfig, ImuRole, SensorErrorModel, Topology, Trajectory, VehicleGeometry};
use wheelnav::sim::{generate_trajectory, synthesize_all, TrajectorySpec};

fn final_heading_error(est: &Trajectory, truth: &Trajectory) -> f64 {
    let last = est.last().unwrap();
    let tr = truth.iter().min_by(|a, b| (a.t - last.t).abs().total_cmp(&(b.t - last.t).abs())).unwrap();
    wrap_angle(last.euler.z - tr.euler.z).to_degrees()
}

fn main() {
    let deg_h: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200.0);
    let truth = generate_trajectory(&TrajectorySpec::default(), 0.005).unwrap();
    let vehicle = VehicleGeometry::default();
    let mut sim = synthesize_all(&truth, &vehicle.all(), &[SensorErrorModel::error_free(); 3], 1).unwrap();
    for s in sim.streams.iter_mut().flatten() {
        s.gyro += Vec3::repeat(deg_h.to_radians() / 3600.0);
    }

    // No static bias calibration, so the filters start from a zero estimate.
    let cfg = FusionConfig { topology: Topology::SingleWheel, align_gyro_bias: false, ..FusionConfig::default() };
    let wheel = run(&cfg, &vehicle.for_topology(cfg.topology), &[sim.streams[ImuRole::LeftWheel as usize].clone()]).unwrap();
    // Body filter with exactly the same speed aiding.
    let body = run_standalone(&cfg, &vehicle.imu(ImuRole::Body), &sim.streams[ImuRole::Body as usize], &wheel.diagnostics.aiding).unwrap();

    println!("gyro bias {deg_h} deg/h on every axis");
    println!("wheel IMU final heading error {:+.3} deg", final_heading_error(&wheel.trajectory, &sim.truth));
    println!("body IMU  final heading error {:+.3} deg", final_heading_error(&body.trajectory, &sim.truth));
}
