//! The drift-rate metric on hand-made trajectories.
//!
//!     cargo run --release --example drift_metric

use wheelnav::eval::{drift_rate, window_rates};
use wheelnav::geom::Vec3;
use wheelnav::model::{TrajPoint, Trajectory};

fn main() {
    // 300 m straight line, estimate offset sideways by 0.7 m.
    let truth: Trajectory = (0..=300).map(|k| TrajPoint { t: k as f64, pos: Vec3::new(k as f64, 0.0, 0.0), euler: Vec3::zeros() }).collect();
    let est: Trajectory = truth.iter().map(|p| TrajPoint { pos: p.pos + Vec3::new(0.0, 0.7, 0.0), ..*p }).collect();
    let r = drift_rate(&est, &truth, 100.0).unwrap();
    println!("constant offset: rates {:?} %, mean {:.4} %", r.rates, r.mean_rate);

    // An error that peaks early keeps dominating the later windows.
    let profile = [(0.0, 0.0), (50.0, 2.0), (100.0, 0.5), (150.0, 0.1), (200.0, 1.0)];
    let (d, rates) = window_rates(&profile, 100.0).unwrap();
    for (d, r) in d.iter().zip(&rates) {
        println!("window {d:5.0} m  {r:.2} %");
    }
}
