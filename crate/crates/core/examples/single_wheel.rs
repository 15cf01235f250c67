//! One wheel-mounted IMU: wheel speed and nonholonomic constraints from
//! the wheel gyro, no other sensors.
//!
//!     cargo run --release --example single_wheel [seed]

use wheelnav::eval::drift_rate;
use wheelnav::fusion::run;
use wheelnav::model::{FusionConfig, ImuRole, SensorErrorModel, Topology, VehicleGeometry};
use wheelnav::sim::{generate_trajectory, synthesize_all, TrajectorySpec};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let truth = generate_trajectory(&TrajectorySpec::default(), 0.005).unwrap();
    let vehicle = VehicleGeometry::default();
    let sim = synthesize_all(&truth, &vehicle.all(), &[SensorErrorModel::icm20602(); 3], seed).unwrap();

    let cfg = FusionConfig { topology: Topology::SingleWheel, ..FusionConfig::default() };
    let stream = sim.streams[ImuRole::LeftWheel as usize].clone();
    let out = run(&cfg, &vehicle.for_topology(cfg.topology), &[stream]).unwrap();

    let report = drift_rate(&out.trajectory, &sim.truth, 100.0).unwrap();
    println!("seed {seed}: {:.0} m, final horizontal error {:.2} m", report.distance, report.final_horizontal_error);
    for (d, r) in report.distances.iter().zip(&report.rates) {
        println!("  first {d:6.0} m  max error / distance {r:.3} %");
    }
    println!("mean drift rate {:.3} %, heading RMSE {:.2} deg", report.mean_rate, report.heading_rmse_deg);
    let v = &out.diagnostics.velocity;
    println!("{} velocity updates, mean NIS {:.2} (3 expected for a consistent filter)", v.count, v.mean_nis());
    let corr = &out.subsystems[0].corr;
    println!("estimated gyro bias {:.2e} {:.2e} {:.2e} rad/s", corr.gyro_bias.x, corr.gyro_bias.y, corr.gyro_bias.z);
}
