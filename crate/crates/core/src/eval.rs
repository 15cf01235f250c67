//! Accuracy metrics against truth and filter timing.
//!
//! The drift rate over a window of traveled distance `d` is the largest
//! horizontal position error seen while covering the first `d` meters,
//! divided by `d`. Windows grow in steps of `l`.

use crate::fusion::{run_centralized, run_with, Execution, FusionError, RunOptions, Timing};
use crate::geom::wrap_angle;
use crate::model::{FusionConfig, ImuSample, Mode, MountingGeometry, Topology, Trajectory};
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("trajectory covers {distance:.1} m, shorter than the window {window} m")]
    TooShort { distance: f64, window: f64 },
    #[error("window length must be positive, got {0}")]
    BadWindow(f64),
    #[error("no truth sample within {tolerance:.4} s of estimate time {t:.4}")]
    Unmatched { t: f64, tolerance: f64 },
    #[error("empty trajectory")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    /// Window increment `l`, m.
    pub window: f64,
    /// Cumulative window lengths `k·l`, m.
    pub distances: Vec<f64>,
    /// Drift rate per window, percent.
    pub rates: Vec<f64>,
    /// Mean of `rates`, percent.
    pub mean_rate: f64,
    pub heading_rmse_deg: f64,
    /// Distance traveled by the truth over the estimate's time span, m.
    pub distance: f64,
    /// Largest vertical position error, m.
    pub max_vertical_error: f64,
    pub final_horizontal_error: f64,
}

/// Pairs every estimate sample with the truth sample nearest in time.
/// Both trajectories must be time ordered.
pub fn associate(est: &Trajectory, truth: &Trajectory) -> Result<Vec<usize>, EvalError> {
    if est.is_empty() || truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut gaps: Vec<f64> = est.windows(2).map(|w| w[1].t - w[0].t).collect();
    gaps.sort_by(f64::total_cmp);
    let tolerance = gaps.get(gaps.len() / 2).map_or(f64::INFINITY, |g| 0.5 * g) + 1e-9;
    let mut j = 0;
    est.iter()
        .map(|e| {
            while j + 1 < truth.len() && (truth[j + 1].t - e.t).abs() <= (truth[j].t - e.t).abs() {
                j += 1;
            }
            if (truth[j].t - e.t).abs() > tolerance {
                return Err(EvalError::Unmatched { t: e.t, tolerance });
            }
            Ok(j)
        })
        .collect()
}

/// Cumulative 3D distance along the truth.
pub fn traveled_distance(truth: &Trajectory) -> Vec<f64> {
    let mut d = 0.0;
    let mut out = Vec::with_capacity(truth.len());
    for (k, p) in truth.iter().enumerate() {
        if k > 0 {
            d += (p.pos - truth[k - 1].pos).norm();
        }
        out.push(d);
    }
    out
}

/// Horizontal error and traveled distance (from the estimate's first
/// sample) at every estimate sample.
pub fn error_profile(est: &Trajectory, truth: &Trajectory) -> Result<Vec<(f64, f64)>, EvalError> {
    let idx = associate(est, truth)?;
    let dist = traveled_distance(truth);
    let d0 = dist[idx[0]];
    Ok(est.iter().zip(&idx).map(|(e, &j)| (dist[j] - d0, (e.pos - truth[j].pos).xy().norm())).collect())
}

/// Window-max drift rates (percent) of an error profile `(distance, error)`
/// sorted by distance.
pub fn window_rates(profile: &[(f64, f64)], l: f64) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(EvalError::BadWindow(l));
    }
    let total = profile.last().map_or(0.0, |p| p.0);
    let windows = (total / l + 1e-9).floor() as usize;
    if windows == 0 {
        return Err(EvalError::TooShort { distance: total, window: l });
    }
    let mut distances = Vec::with_capacity(windows);
    let mut rates = Vec::with_capacity(windows);
    let mut max = 0.0f64;
    let mut j = 0;
    for k in 1..=windows {
        let d = k as f64 * l;
        while j < profile.len() && profile[j].0 <= d + 1e-9 {
            max = max.max(profile[j].1);
            j += 1;
        }
        distances.push(d);
        rates.push(100.0 * max / d);
    }
    Ok((distances, rates))
}

pub fn drift_rate(est: &Trajectory, truth: &Trajectory, l: f64) -> Result<DriftReport, EvalError> {
    let profile = error_profile(est, truth)?;
    let (distances, rates) = window_rates(&profile, l)?;
    let idx = associate(est, truth)?;
    let max_vertical_error = est.iter().zip(&idx).map(|(e, &j)| (e.pos.z - truth[j].pos.z).abs()).fold(0.0, f64::max);
    Ok(DriftReport {
        window: l,
        mean_rate: rates.iter().sum::<f64>() / rates.len() as f64,
        distances,
        rates,
        heading_rmse_deg: heading_rmse(est, truth)?,
        distance: profile.last().map_or(0.0, |p| p.0),
        max_vertical_error,
        final_horizontal_error: profile.last().map_or(0.0, |p| p.1),
    })
}

/// RMS of the wrapped heading difference, degrees.
pub fn heading_rmse(est: &Trajectory, truth: &Trajectory) -> Result<f64, EvalError> {
    let idx = associate(est, truth)?;
    let sum: f64 = est
        .iter()
        .zip(&idx)
        .map(|(e, &j)| wrap_angle(e.euler.z - truth[j].euler.z).to_degrees().powi(2))
        .sum();
    Ok((sum / est.len() as f64).sqrt())
}

/// Mean filter timings of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModeTiming {
    pub us_per_velocity_update: f64,
    pub us_per_constraint_update: f64,
    pub us_per_propagation: f64,
    pub us_per_epoch: f64,
}

impl ModeTiming {
    fn mean(ts: &[Timing]) -> Self {
        let n = ts.len().max(1) as f64;
        let avg = |f: fn(&Timing) -> f64| ts.iter().map(f).sum::<f64>() / n;
        Self {
            us_per_velocity_update: avg(Timing::us_per_velocity_update),
            us_per_constraint_update: avg(Timing::us_per_constraint_update),
            us_per_propagation: avg(Timing::us_per_propagation),
            us_per_epoch: avg(Timing::us_per_epoch),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub repetitions: usize,
    pub epochs: usize,
    pub distributed: ModeTiming,
    pub centralized: ModeTiming,
    /// Centralized over distributed cost per IMU epoch.
    pub ratio: f64,
    /// Built without debug assertions.
    pub optimized: bool,
    pub hardware: String,
}

/// Best-effort description of the machine, for benchmark reports.
pub fn hardware_description() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|s| s.trim().to_string()))
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu}; {threads} threads; {} {}", std::env::consts::OS, std::env::consts::ARCH)
}

/// Times the distributed and centralized triple filters on the same
/// streams. The first run of each mode is a discarded warm-up. Invariant
/// checks are disabled so only filter arithmetic is measured.
pub fn bench(config: &FusionConfig, geoms: &[MountingGeometry], streams: &[Vec<ImuSample>], repetitions: usize) -> Result<BenchReport, FusionError> {
    let mut report = BenchReport { repetitions, optimized: !cfg!(debug_assertions), hardware: hardware_description(), ..Default::default() };
    let k0 = (config.align_time * config.imu_rate).round() as usize;
    if repetitions == 0 || streams.iter().any(|s| s.len() <= k0 + 1) || streams.is_empty() {
        return Ok(report);
    }
    let cfg = FusionConfig { topology: Topology::Triple, check_invariants: false, ..config.clone() };
    let mut dist = Vec::with_capacity(repetitions);
    let mut cent = Vec::with_capacity(repetitions);
    for rep in 0..=repetitions {
        let d = run_with(&FusionConfig { mode: Mode::Distributed, ..cfg.clone() }, geoms, streams, &RunOptions::default())?;
        let c = run_centralized(&FusionConfig { mode: Mode::Centralized, ..cfg.clone() }, geoms, streams)?;
        if rep > 0 {
            report.epochs = d.diagnostics.timing.epochs;
            dist.push(d.diagnostics.timing);
            cent.push(c.diagnostics.timing);
        }
    }
    report.distributed = ModeTiming::mean(&dist);
    report.centralized = ModeTiming::mean(&cent);
    report.ratio = report.centralized.us_per_epoch / report.distributed.us_per_epoch;
    Ok(report)
}

/// Mean wall time (µs) of one 3-row Joseph update on an `N`-state filter.
pub fn time_update<const N: usize>(repetitions: usize) -> f64 {
    use crate::ekf::{update, LinearMeasurement};
    use nalgebra::{SMatrix, SVector};
    let mut h = SMatrix::<f64, 3, N>::zeros();
    for r in 0..3 {
        for c in 0..N {
            h[(r, c)] = if (r + c) % 4 == 0 { 1.0 } else { 0.0 };
        }
    }
    let m = LinearMeasurement::<3, N> { z: SVector::repeat(0.1), h, r: SVector::repeat(0.01) };
    let p0 = SMatrix::<f64, N, N>::from_fn(|i, j| if i == j { 1.0 } else { 0.01 / (1.0 + (i as f64 - j as f64).abs()) });
    let start = std::time::Instant::now();
    for _ in 0..repetitions {
        let mut x = SVector::<f64, N>::zeros();
        let mut p = p0;
        update(&mut x, &mut p, &m).expect("well-posed update");
        std::hint::black_box(&p);
    }
    start.elapsed().as_secs_f64() * 1e6 / repetitions as f64
}

/// Log-log slope of update cost against state dimension over 21, 42, 63.
pub fn update_cost_exponent(repetitions: usize) -> f64 {
    let pts = [(21.0f64, time_update::<21>(repetitions)), (42.0, time_update::<42>(repetitions)), (63.0, time_update::<63>(repetitions))];
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (d, t)| (a + d.ln(), b + t.ln()));
    let (mx, my) = (sx / n, sy / n);
    let num: f64 = pts.iter().map(|(d, t)| (d.ln() - mx) * (t.ln() - my)).sum();
    let den: f64 = pts.iter().map(|(d, _)| (d.ln() - mx).powi(2)).sum();
    num / den
}

/// Runs `f` for every seed, concurrently or not; results are in seed order
/// either way.
pub fn monte_carlo<T: Send>(seeds: &[u64], execution: Execution, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    match execution {
        Execution::Sequential => seeds.iter().map(|s| f(*s)).collect(),
        Execution::Parallel => seeds.par_iter().map(|s| f(*s)).collect(),
    }
}
