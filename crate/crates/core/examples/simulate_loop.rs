//! Simulates the rectangular test loop and prints what the three IMUs see.
//!
//!     cargo run --release --example simulate_loop

use wheelnav::model::{SensorErrorModel, VehicleGeometry};
use wheelnav::sim::{generate_trajectory, synthesize_all, TrajectorySpec};

fn main() {
    let spec = TrajectorySpec::default();
    let truth = generate_trajectory(&spec, 0.005).expect("valid loop");
    let geoms = VehicleGeometry::default().all();
    let out = synthesize_all(&truth, &geoms, &[SensorErrorModel::icm20602(); 3], 1).expect("valid sensors");

    let last = truth.last().unwrap();
    println!("{} samples, {:.1} s, {:.1} m traveled", truth.len(), last.t, last.distance);
    for ((g, s), e) in geoms.iter().zip(&out.streams).zip(&out.realized) {
        let peak = s.iter().map(|x| x.gyro.x.abs()).fold(0.0, f64::max);
        println!(
            "{:<12} peak |gyro x| {:6.2} rad/s  turn-on gyro bias {:8.5} {:8.5} {:8.5} rad/s",
            g.imu_id, peak, e.gyro_bias_turn_on.x, e.gyro_bias_turn_on.y, e.gyro_bias_turn_on.z
        );
    }
    // The wheel gyro x axis measures the wheel spin: speed / radius.
    let k = truth.len() / 2;
    let radius = geoms[0].wheel_radius;
    println!(
        "mid-run speed {:.3} m/s, left wheel spin {:.2} rad/s (speed / radius = {:.2})",
        truth[k].forward_speed,
        out.streams[0][k].gyro.x.abs(),
        truth[k].forward_speed / radius
    );
}
