//! The same three IMUs fused by per-IMU filters exchanging a position
//! constraint, and by one filter over the stacked 63-dimensional state.
//!
//!     cargo run --release --example distributed_vs_centralized [seed]

use wheelnav::eval::drift_rate;
use wheelnav::fusion::run;
use wheelnav::model::{FusionConfig, Mode, SensorErrorModel, VehicleGeometry};
use wheelnav::sim::{generate_trajectory, synthesize_all, TrajectorySpec};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let truth = generate_trajectory(&TrajectorySpec::default(), 0.005).unwrap();
    let geoms = VehicleGeometry::default().all();
    let sim = synthesize_all(&truth, &geoms, &[SensorErrorModel::icm20602(); 3], seed).unwrap();

    for mode in [Mode::Distributed, Mode::Centralized] {
        let cfg = FusionConfig { mode, check_invariants: false, ..FusionConfig::default() };
        let out = run(&cfg, &geoms, &sim.streams).unwrap();
        let r = drift_rate(&out.trajectory, &sim.truth, 100.0).unwrap();
        let d = &out.diagnostics;
        println!(
            "{mode:?}: drift {:.3} %, heading RMSE {:.2} deg, {:.1} us per IMU epoch, constraint mean NIS {:.3}",
            r.mean_rate,
            r.heading_rmse_deg,
            d.timing.us_per_epoch(),
            d.constraint.mean_nis()
        );
    }
}
