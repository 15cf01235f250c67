//! simulate, run and evaluate through the file-based command layer, the
//! same path the `wheelnav` binary takes.
//!
//!     cargo run --release --example file_pipeline [out_dir]

use std::path::PathBuf;
use wheelnav::cli::{self, EvaluateArgs, RunArgs, SimulateArgs};
use wheelnav::model::{Mode, Topology};

fn main() -> Result<(), cli::CliError> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("wheelnav_pipeline"));
    let config = dir.join("short.toml");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(&config, "[simulation]\ntotal_length = 300.0\nlaps = 1\n").unwrap();

    let sim = dir.join("sim");
    let manifest = cli::simulate(&SimulateArgs { config: Some(config), seed: 5, out: sim.clone() })?;
    println!("simulated {} streams into {}", manifest.streams.len(), sim.display());

    for topology in [Topology::SingleWheel, Topology::Triple] {
        let files = cli::run(&RunArgs {
            manifest: sim.join("manifest.toml"),
            config: None,
            topology: Some(topology),
            mode: Some(Mode::Distributed),
            out: Some(dir.join("runs")),
        })?;
        let r = cli::evaluate(&EvaluateArgs { est: files.trajectory.clone(), truth: sim.join("truth.csv"), window_l: 100.0, out: None })?;
        println!("{:<13} drift {:.3} %  heading RMSE {:.2} deg  -> {}", topology.name(), r.mean_rate, r.heading_rmse_deg, files.trajectory.display());
    }
    Ok(())
}
