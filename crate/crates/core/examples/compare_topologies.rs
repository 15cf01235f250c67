//! Drift and heading error of the four sensor configurations over a few
//! Monte Carlo seeds.
//!
//!     cargo run --release --example compare_topologies [seeds]

use wheelnav::eval::{drift_rate, monte_carlo};
use wheelnav::fusion::{run, Execution};
use wheelnav::model::{FusionConfig, ImuSample, SensorErrorModel, Topology, VehicleGeometry};
use wheelnav::sim::{generate_trajectory, synthesize_all, TrajectorySpec};

fn main() {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let truth = generate_trajectory(&TrajectorySpec::default(), 0.005).unwrap();
    let vehicle = VehicleGeometry::default();
    let seeds: Vec<u64> = (1..=n).collect();

    let rows = monte_carlo(&seeds, Execution::Parallel, |seed| {
        let sim = synthesize_all(&truth, &vehicle.all(), &[SensorErrorModel::icm20602(); 3], seed).unwrap();
        Topology::ALL.map(|t| {
            let streams: Vec<Vec<ImuSample>> = t.roles().iter().map(|r| sim.streams[*r as usize].clone()).collect();
            let cfg = FusionConfig { topology: t, check_invariants: false, ..FusionConfig::default() };
            let out = run(&cfg, &vehicle.for_topology(t), &streams).unwrap();
            let r = drift_rate(&out.trajectory, &sim.truth, 100.0).unwrap();
            (r.mean_rate, r.heading_rmse_deg)
        })
    });

    println!("{:<14}{:>12}{:>16}", "topology", "drift %", "heading deg");
    for (k, t) in Topology::ALL.iter().enumerate() {
        let drift = rows.iter().map(|r| r[k].0).sum::<f64>() / n as f64;
        let heading = rows.iter().map(|r| r[k].1).sum::<f64>() / n as f64;
        println!("{:<14}{drift:>12.3}{heading:>16.2}", t.name());
    }
}
