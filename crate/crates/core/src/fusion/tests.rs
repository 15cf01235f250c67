use super::*;
use crate::geom::Mat3;
use crate::model::{idx, SensorErrorModel, Topology, Trajectory, VehicleGeometry};
use crate::sim::{generate_trajectory, synthesize_all, TrajectorySpec};

fn short_loop() -> TrajectorySpec {
    TrajectorySpec { total_length: 120.0, laps: 1, static_start: 6.0, ..Default::default() }
}

fn simulate(spec: &TrajectorySpec, err: SensorErrorModel, seed: u64) -> (Vec<Vec<ImuSample>>, Trajectory) {
    let truth = generate_trajectory(spec, 0.005).unwrap();
    let geoms = VehicleGeometry::default().all();
    let out = synthesize_all(&truth, &geoms, &[err; 3], seed).unwrap();
    (out.streams, out.truth)
}

fn pick(streams: &[Vec<ImuSample>], topology: Topology) -> Vec<Vec<ImuSample>> {
    topology.roles().iter().map(|r| streams[*r as usize].clone()).collect()
}

fn config(topology: Topology) -> FusionConfig {
    FusionConfig { topology, initial_heading: 0.0, ..FusionConfig::default() }
}

fn final_error(traj: &Trajectory, truth: &Trajectory) -> f64 {
    let last = traj.last().unwrap();
    let tr = truth.iter().min_by(|a, b| (a.t - last.t).abs().total_cmp(&(b.t - last.t).abs())).unwrap();
    (last.pos - tr.pos).xy().norm()
}

#[test]
fn error_free_single_wheel_tracks_truth() {
    let (streams, truth) = simulate(&short_loop(), SensorErrorModel::error_free(), 1);
    let cfg = config(Topology::SingleWheel);
    let geoms = VehicleGeometry::default().for_topology(cfg.topology);
    let out = run(&cfg, &geoms, &pick(&streams, cfg.topology)).unwrap();
    let err = final_error(&out.trajectory, &truth);
    eprintln!("err {err} innov {} {:?}", out.diagnostics.velocity.max_abs_innovation, out.diagnostics.timing);
    assert!(err < 0.01);
}

#[test]
fn error_free_triple_tracks_truth() {
    let (streams, truth) = simulate(&short_loop(), SensorErrorModel::error_free(), 1);
    for topology in Topology::ALL {
        let cfg = config(topology);
        let geoms = VehicleGeometry::default().for_topology(topology);
        let out = run(&cfg, &geoms, &pick(&streams, topology)).unwrap();
        let err = final_error(&out.trajectory, &truth);
        eprintln!("{topology:?} err {err} vel {} con {}", out.diagnostics.velocity.max_abs_innovation, out.diagnostics.constraint.max_abs_innovation);
        assert!(err < 0.01);
    }
}

fn init_state(topology: Topology, streams: &[Vec<ImuSample>]) -> FusionState {
    let cfg = config(topology);
    let geoms = VehicleGeometry::default().for_topology(topology);
    let picked = pick(streams, topology);
    let k0 = (cfg.align_time * cfg.imu_rate).round() as usize;
    let segs: Vec<&[ImuSample]> = picked.iter().map(|s| &s[..=k0]).collect();
    FusionState::init(&cfg, &geoms, &segs).unwrap()
}

#[test]
fn single_wheel_init_has_one_subsystem_and_no_offset() {
    let (streams, _) = simulate(&short_loop(), SensorErrorModel::error_free(), 2);
    let st = init_state(Topology::SingleWheel, &streams);
    assert_eq!(st.subsystems.len(), 1);
    assert_eq!(st.translations, vec![vec![Vec3::zeros()]]);
}

#[test]
fn triple_translations_close_cycles() {
    let (streams, _) = simulate(&short_loop(), SensorErrorModel::error_free(), 2);
    let geoms = VehicleGeometry::default().all();
    for psi0 in [0.0, 0.7, -2.9] {
        let mut st = init_state(Topology::Triple, &streams);
        st.translations = geoms
            .iter()
            .map(|t| geoms.iter().map(|g| crate::meas::w_frame_translation(-psi0, &g.pos_v, &t.pos_v)).collect())
            .collect();
        let t = &st.translations;
        for i in 0..3 {
            assert_eq!(t[i][i], Vec3::zeros());
            for j in 0..3 {
                assert!((t[i][j] + t[j][i]).norm() < 1e-15);
                for k in 0..3 {
                    assert!((t[k][j] + t[j][i] - t[k][i]).norm() < 1e-15);
                }
            }
        }
    }
    // The state built by init uses the configured heading, zero here, so
    // the translations are the raw v-frame offsets.
    let st = init_state(Topology::Triple, &streams);
    for (j, target) in geoms.iter().enumerate() {
        for (i, g) in geoms.iter().enumerate() {
            assert_eq!(st.translations[j][i], g.pos_v - target.pos_v);
        }
    }
}

#[test]
fn circular_mean_examples() {
    let d = f64::to_radians;
    assert!((circular_mean(&[d(10.0), d(20.0)]) - d(15.0)).abs() < 1e-12);
    assert!(circular_mean(&[d(359.0), d(1.0)]).abs() < 1e-12);
    assert!((circular_mean(&[d(0.3)]) - d(0.3)).abs() < 1e-15);
}

/// At alignment every subsystem sits on the same reference point, so the
/// constraint has nothing to correct.
#[test]
fn constraint_at_consensus_changes_nothing() {
    let (streams, _) = simulate(&short_loop(), SensorErrorModel::error_free(), 2);
    let mut st = init_state(Topology::Triple, &streams);
    let before: Vec<NavState> = st.subsystems.iter().map(|s| s.nav).collect();
    for m in st.constraint_measurements() {
        assert!(m.unwrap().unwrap().z.norm() < 1e-12);
    }
    st.constraint_epoch(st.k as f64).unwrap();
    for (s, b) in st.subsystems.iter().zip(&before) {
        assert!((s.nav.pos - b.pos).norm() < 1e-12);
        assert!((s.nav.vel - b.vel).norm() < 1e-12);
        assert!((s.nav.att * b.att.transpose()).log().norm() < 1e-12);
    }
}

/// A constraint update moves each reference point toward its target by the
/// factor `R S⁻¹` that plain Kalman algebra predicts for the linear model.
#[test]
fn constraint_moves_reference_points_toward_target() {
    let (streams, _) = simulate(&short_loop(), SensorErrorModel::icm20602(), 5);
    let topology = Topology::Triple;
    let mut st = init_state(topology, &streams);
    let picked = pick(&streams, topology);
    let mut checked = 0;
    for k in st.k + 1..picked[0].len() {
        let samples: Vec<ImuSample> = picked.iter().map(|s| s[k]).collect();
        if !st.is_constraint_epoch(k) {
            st.step(&samples).unwrap();
            continue;
        }
        // Advance by hand up to the constraint so the update can be
        // inspected in isolation.
        st.config.enable_constraint = false;
        st.step(&samples).unwrap();
        st.config.enable_constraint = true;
        let snap = st.reference_snapshot();
        let targets: Vec<Vec3> = (0..3).map(|j| st.consensus(&snap, j).unwrap()).collect();
        let ms = st.constraint_measurements();
        for (j, m) in ms.into_iter().enumerate() {
            let m = m.unwrap().unwrap();
            let s = &st.subsystems[j];
            let p3 = m.h * s.p * m.h.transpose();
            let r = Mat3::from_diagonal(&m.r);
            let expected = r * (p3 + r).try_inverse().unwrap() * m.z;
            let mut sub = s.clone();
            sub.apply(&m, true).unwrap();
            let (roll, pitch, src) = st.shared_roll_pitch();
            let after = sub.reference_point(&sub.vehicle_attitude(roll, pitch, src)) - targets[j];
            assert!(after.norm() <= m.z.norm() + 1e-12, "{j}: {} -> {}", m.z.norm(), after.norm());
            assert!((after - expected).norm() < 1e-3 * m.z.norm().max(1e-6), "{j}: {after:?} vs {expected:?}");
        }
        checked += 1;
        if checked == 20 {
            break;
        }
        st.constraint_epoch(samples[0].t).unwrap();
    }
    assert_eq!(checked, 20);
}

#[test]
fn centralized_cross_covariance_appears_with_the_first_constraint() {
    let (streams, _) = simulate(&short_loop(), SensorErrorModel::icm20602(), 3);
    let mut st = init_state(Topology::Triple, &streams);
    st.make_centralized();
    let cross = |st: &FusionState| {
        let p = st.joint_covariance().unwrap();
        let mut m: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    m = m.max(p.fixed_view::<{ idx::N }, { idx::N }>(idx::N * i, idx::N * j).abs().max());
                }
            }
        }
        m
    };
    let mut constraints = 0;
    for k in st.k + 1..streams[0].len() {
        let samples: Vec<ImuSample> = streams.iter().map(|s| s[k]).collect();
        constraints += st.is_constraint_epoch(k) as usize;
        st.step(&samples).unwrap();
        if constraints == 0 {
            assert_eq!(cross(&st), 0.0, "k = {k}");
        } else {
            assert!(cross(&st) > 0.0, "k = {k}");
        }
        if constraints == 3 {
            break;
        }
    }
    assert_eq!(constraints, 3);
}

#[test]
fn centralized_without_constraint_equals_distributed() {
    let (streams, _) = simulate(&short_loop(), SensorErrorModel::icm20602(), 4);
    let geoms = VehicleGeometry::default().all();
    let base = FusionConfig { enable_constraint: false, ..config(Topology::Triple) };
    let dist = run(&base, &geoms, &streams).unwrap();
    let cent = run(&FusionConfig { mode: crate::model::Mode::Centralized, ..base }, &geoms, &streams).unwrap();
    assert_eq!(dist.trajectory, cent.trajectory);
    assert_eq!(dist.subsystem_trajectories, cent.subsystem_trajectories);
}

#[test]
fn unconstrained_subsystems_match_standalone_filters() {
    let (streams, _) = simulate(&short_loop(), SensorErrorModel::icm20602(), 6);
    for topology in [Topology::DualWheel, Topology::BodyWheel, Topology::Triple] {
        let geoms = VehicleGeometry::default().for_topology(topology);
        let picked = pick(&streams, topology);
        let cfg = FusionConfig { enable_constraint: false, ..config(topology) };
        let joint = run(&cfg, &geoms, &picked).unwrap();
        for (i, g) in geoms.iter().enumerate() {
            let alone = run_standalone(&cfg, g, &picked[i], &joint.diagnostics.aiding).unwrap();
            let (a, b) = (&joint.subsystems[i], &alone.subsystems[0]);
            assert_eq!(a.nav, b.nav, "{topology:?} {}", g.imu_id);
            assert_eq!(a.p, b.p);
            assert_eq!(a.corr, b.corr);
        }
    }
}

#[test]
fn processing_order_does_not_change_outputs() {
    let (streams, _) = simulate(&short_loop(), SensorErrorModel::icm20602(), 7);
    let geoms = VehicleGeometry::default().all();
    let cfg = config(Topology::Triple);
    let base = run(&cfg, &geoms, &streams).unwrap();
    for order in [vec![2, 1, 0], vec![1, 2, 0]] {
        let opts = RunOptions { processing_order: Some(order), ..Default::default() };
        let other = run_with(&cfg, &geoms, &streams, &opts).unwrap();
        assert_eq!(base.fused, other.fused);
    }
}

#[test]
fn parallel_execution_matches_sequential() {
    let (streams, _) = simulate(&short_loop(), SensorErrorModel::icm20602(), 8);
    let geoms = VehicleGeometry::default().all();
    let cfg = config(Topology::Triple);
    let seq = run(&cfg, &geoms, &streams).unwrap();
    let par = run_with(&cfg, &geoms, &streams, &RunOptions { execution: Execution::Parallel, ..Default::default() }).unwrap();
    assert_eq!(seq.fused, par.fused);
    let again = run(&cfg, &geoms, &streams).unwrap();
    assert_eq!(seq.fused, again.fused);
}

#[test]
fn fused_position_lies_between_subsystem_reference_points() {
    let (streams, _) = simulate(&short_loop(), SensorErrorModel::icm20602(), 9);
    for topology in [Topology::DualWheel, Topology::BodyWheel, Topology::Triple] {
        let geoms = VehicleGeometry::default().for_topology(topology);
        let out = run(&config(topology), &geoms, &pick(&streams, topology)).unwrap();
        for f in &out.fused {
            for axis in 0..3 {
                let vals = f.subsystems.iter().map(|s| s.reference_point[axis]);
                let lo = vals.clone().fold(f64::INFINITY, f64::min);
                let hi = vals.fold(f64::NEG_INFINITY, f64::max);
                assert!(f.position[axis] >= lo - 1e-12 && f.position[axis] <= hi + 1e-12);
            }
        }
    }
}

/// A constant gyro bias spins around with the wheel and largely averages
/// out, while a body IMU with the same bias and the same aiding turns it
/// into heading drift.
#[test]
fn wheel_filter_is_robust_to_constant_gyro_bias() {
    let spec = TrajectorySpec { total_length: 250.0, laps: 1, static_start: 10.0, ..Default::default() };
    let (mut streams, truth) = simulate(&spec, SensorErrorModel::error_free(), 1);
    let bias = Vec3::repeat(200f64.to_radians() / 3600.0);
    for s in streams.iter_mut().flatten() {
        s.gyro += bias;
    }
    let cfg = FusionConfig { align_gyro_bias: false, ..config(Topology::SingleWheel) };
    let geoms = VehicleGeometry::default();
    let wheel = run(&cfg, &geoms.for_topology(Topology::SingleWheel), &pick(&streams, Topology::SingleWheel)).unwrap();
    let body = run_standalone(&cfg, &geoms.imu(ImuRole::Body), &streams[ImuRole::Body as usize], &wheel.diagnostics.aiding).unwrap();
    let heading_error = |traj: &Trajectory| {
        let last = traj.last().unwrap();
        let tr = truth.iter().min_by(|a, b| (a.t - last.t).abs().total_cmp(&(b.t - last.t).abs())).unwrap();
        crate::geom::wrap_angle(last.euler.z - tr.euler.z).abs()
    };
    let (w, b) = (heading_error(&wheel.trajectory), heading_error(&body.trajectory));
    assert!(b > 0.01, "body heading error {b}");
    assert!(w <= 0.25 * b, "wheel {w} body {b}");
}
