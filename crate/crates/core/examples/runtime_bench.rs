//! Per-epoch cost of the distributed and centralized filters.
//!
//!     cargo run --release --example runtime_bench [repetitions]

use wheelnav::eval::{bench, update_cost_exponent};
use wheelnav::model::{FusionConfig, SensorErrorModel, VehicleGeometry};
use wheelnav::sim::{generate_trajectory, synthesize_all, TrajectorySpec};

fn main() {
    let reps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let spec = TrajectorySpec { total_length: 300.0, laps: 1, ..Default::default() };
    let truth = generate_trajectory(&spec, 0.005).unwrap();
    let geoms = VehicleGeometry::default().all();
    let sim = synthesize_all(&truth, &geoms, &[SensorErrorModel::icm20602(); 3], 1).unwrap();

    let r = bench(&FusionConfig::default(), &geoms, &sim.streams, reps).unwrap();
    println!("{} ({} epochs, optimized build: {})", r.hardware, r.epochs, r.optimized);
    println!("{:<14}{:>12}{:>12}{:>12}{:>12}", "us per", "epoch", "propagate", "velocity", "constraint");
    for (name, t) in [("distributed", r.distributed), ("centralized", r.centralized)] {
        println!(
            "{name:<14}{:>12.1}{:>12.1}{:>12.1}{:>12.1}",
            t.us_per_epoch, t.us_per_propagation, t.us_per_velocity_update, t.us_per_constraint_update
        );
    }
    println!("centralized / distributed per epoch: {:.2}", r.ratio);
    println!("Joseph update cost grows as n^{:.2} over 21, 42, 63 states", update_cost_exponent(200));
}
