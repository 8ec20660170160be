use std::fs;

use proptest::prelude::{prop_assert, proptest, ProptestConfig};
use visuomotor::expert::{
    generate_demonstrations, load_demonstrations, plan_min_jerk, plan_to_gate, pure_pursuit, Boundary, DemoConfig,
    Expert, PursuitConfig, QuinticSegment,
};
use visuomotor::numerics::Rng;
use visuomotor::simulator::{make_track, rollout, step, DroneState, Limits, RolloutConfig, Termination};
use visuomotor::Error;

fn rest(p: [f64; 3]) -> Boundary {
    Boundary { p, v: [0.0; 3], a: [0.0; 3] }
}

fn straight_x(length: f64) -> QuinticSegment {
    // Constant-velocity line: the quintic with matching endpoint velocities.
    let v = [2.0, 0.0, 0.0];
    let start = Boundary { p: [0.0, 0.0, 2.0], v, a: [0.0; 3] };
    let goal = Boundary { p: [length, 0.0, 2.0], v, a: [0.0; 3] };
    plan_min_jerk(&start, &goal, length / 2.0).unwrap()
}

fn max_residual(seg: &QuinticSegment, start: &Boundary, goal: &Boundary) -> f64 {
    let t = seg.duration;
    let pairs = [
        (seg.position(0.0), start.p),
        (seg.velocity(0.0), start.v),
        (seg.acceleration(0.0), start.a),
        (seg.position(t), goal.p),
        (seg.velocity(t), goal.v),
        (seg.acceleration(t), goal.a),
    ];
    pairs.iter().flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs())).fold(0.0, f64::max)
}

#[test]
fn rest_to_rest_midpoint() {
    let seg = plan_min_jerk(&rest([0.0; 3]), &rest([1.0, 0.0, 0.0]), 1.0).unwrap();
    // p(t) = 10t³ − 15t⁴ + 6t⁵, v(t) = 30t² − 60t³ + 30t⁴
    let expected = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0];
    for k in 0..6 {
        assert!((seg.coeffs[0][k] - expected[k]).abs() < 1e-9);
    }
    assert!((seg.position(0.5)[0] - 0.5).abs() < 1e-12);
    assert!((seg.velocity(0.5)[0] - 15.0 / 8.0).abs() < 1e-12);
}

#[test]
fn zero_displacement_is_constant() {
    let p = [1.0, -2.0, 3.0];
    let seg = plan_min_jerk(&rest(p), &rest(p), 2.5).unwrap();
    for axis in 0..3 {
        assert!((seg.coeffs[axis][0] - p[axis]).abs() < 1e-12);
        for k in 1..6 {
            assert!(seg.coeffs[axis][k].abs() < 1e-12);
        }
    }
}

#[test]
fn non_positive_duration_is_a_domain_error() {
    for t in [0.0, -1.0, f64::NAN] {
        assert!(matches!(plan_min_jerk(&rest([0.0; 3]), &rest([1.0; 3]), t), Err(Error::Domain(_))));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn boundary_residuals_are_tiny(
        p0 in proptest::array::uniform3(-10.0f64..10.0), v0 in proptest::array::uniform3(-3.0f64..3.0),
        a0 in proptest::array::uniform3(-2.0f64..2.0), p1 in proptest::array::uniform3(-10.0f64..10.0),
        v1 in proptest::array::uniform3(-3.0f64..3.0), t in 0.5f64..8.0,
    ) {
        let start = Boundary { p: p0, v: v0, a: a0 };
        let goal = Boundary { p: p1, v: v1, a: [0.0; 3] };
        let seg = plan_min_jerk(&start, &goal, t).unwrap();
        prop_assert!(max_residual(&seg, &start, &goal) < 1e-9);
    }

    #[test]
    fn quintic_minimizes_jerk_among_perturbations(
        p1 in proptest::array::uniform3(-5.0f64..5.0), v1 in proptest::array::uniform3(-2.0f64..2.0),
        t in 0.5f64..5.0, seed in 0u64..1000,
    ) {
        let start = Boundary { p: [0.0; 3], v: [1.0, 0.0, 0.0], a: [0.0; 3] };
        let goal = Boundary { p: p1, v: v1, a: [0.0; 3] };
        let seg = plan_min_jerk(&start, &goal, t).unwrap();
        // Quintics meeting the same six conditions are unique, so compare
        // against degree-6 bumps eps·s³(s−T)³ that keep every condition. The
        // optimum leaves no first-order term: J(eps) − J(0) = eps²·J(bump).
        // Four-point Gauss-Legendre per panel integrates these degree-6
        // integrands exactly.
        let nodes = [(-0.861136311594053, 0.347854845137454), (-0.339981043584856, 0.652145154862546), (0.339981043584856, 0.652145154862546), (0.861136311594053, 0.347854845137454)];
        let quad = |eps: f64, axis: usize, with_seg: bool| {
            let panels = 8;
            let h = t / panels as f64;
            let mut total = 0.0;
            for p in 0..panels {
                for (x, w) in nodes {
                    let s = h * (p as f64 + 0.5 + 0.5 * x);
                    let mut j = if with_seg { seg.jerk(s) } else { [0.0; 3] };
                    j[axis] += eps * (120.0 * s.powi(3) - 180.0 * t * s.powi(2) + 72.0 * t * t * s - 6.0 * t.powi(3));
                    total += 0.5 * h * w * (j[0] * j[0] + j[1] * j[1] + j[2] * j[2]);
                }
            }
            total
        };
        let base = quad(0.0, 0, true);
        prop_assert!((base - seg.jerk_integral()).abs() <= 1e-9 * base.max(1.0));
        let mut rng = Rng::new(seed, 0);
        for _ in 0..8 {
            let eps = rng.uniform(-1.0, 1.0) / t.powi(3);
            let axis = rng.below(3);
            let gain = quad(eps, axis, true) - base;
            let bump = quad(eps, axis, false);
            prop_assert!(gain > 0.0);
            prop_assert!((gain - bump).abs() <= 1e-6 * bump + 1e-9 * base);
        }
    }
}

#[test]
fn jerk_integral_matches_quadrature() {
    let seg = plan_min_jerk(&rest([0.0; 3]), &Boundary { p: [3.0, -1.0, 2.0], v: [1.0, 1.0, 0.0], a: [0.0; 3] }, 2.0).unwrap();
    let n = 20_000;
    let h = seg.duration / n as f64;
    let numeric: f64 = (0..n)
        .map(|i| {
            let j = seg.jerk((i as f64 + 0.5) * h);
            (j[0] * j[0] + j[1] * j[1] + j[2] * j[2]) * h
        })
        .sum();
    assert!((numeric - seg.jerk_integral()).abs() < 1e-6 * seg.jerk_integral());
}

#[test]
fn pursuit_on_path_goes_straight() {
    let seg = straight_x(20.0);
    let state = DroneState::at([5.0, 0.0, 2.0], 0.0);
    let cmd = pure_pursuit(&state, &seg, &PursuitConfig::default());
    assert!(cmd.vy.abs() < 1e-6 && cmd.vz.abs() < 1e-6 && cmd.vpsi.abs() < 1e-6);
    assert!((cmd.vx - 2.0).abs() < 1e-6);
}

#[test]
fn pursuit_corrects_left_offset() {
    let seg = straight_x(20.0);
    let state = DroneState::at([5.0, 1.0, 2.0], 0.0);
    let cmd = pure_pursuit(&state, &seg, &PursuitConfig::default());
    assert!(cmd.vy < 0.0, "{cmd:?}");
    assert!(cmd.vpsi < 0.0, "{cmd:?}");
}

#[test]
fn pursuit_lookahead_example() {
    let seg = straight_x(20.0);
    let cfg = PursuitConfig { lookahead: 2.0, v_nominal: 1.0, ..PursuitConfig::default() };
    let cmd = pure_pursuit(&DroneState::at([0.0, 0.0, 2.0], 0.0), &seg, &cfg);
    let got = cmd.as_array();
    let want = [1.0, 0.0, 0.0, 0.0];
    for k in 0..4 {
        assert!((got[k] - want[k]).abs() < 1e-6, "{got:?}");
    }
}

#[test]
fn pursuit_respects_limits() {
    let seg = straight_x(20.0);
    let cfg = PursuitConfig { v_nominal: 10.0, yaw_gain: 50.0, ..PursuitConfig::default() };
    let cmd = pure_pursuit(&DroneState::at([5.0, 3.0, 2.0], 2.0), &seg, &cfg);
    assert!(Limits::default().within(&cmd), "{cmd:?}");
}

#[test]
fn pursuit_converges_to_straight_path() {
    let cfg = PursuitConfig::default();
    let seg = straight_x(20.0);
    for offset in [-1.0, -0.5, 0.5, 1.0] {
        let mut state = DroneState::at([0.0, offset, 2.0], 0.0);
        for _ in 0..200 {
            let cmd = pure_pursuit(&state, &seg, &cfg);
            state = step(&state, &cmd, 0.05, 0.2).unwrap();
        }
        let cross = state.position[1].hypot(state.position[2] - 2.0);
        assert!(cross < 0.1, "offset {offset}: cross-track {cross}");
    }
}

#[test]
fn planned_segments_meet_gate_conditions() {
    let mut rng = Rng::new(3, 0);
    let track = make_track(&mut rng, 2.0).unwrap();
    let cfg = PursuitConfig::default();
    let state = track.start_state();
    for g in 0..track.gates.len() {
        let seg = plan_to_gate(&state, &track, g, &cfg).unwrap();
        let n = track.gates[g].normal();
        let goal = Boundary { p: track.gates[g].center(), v: [1.5 * n[0], 1.5 * n[1], 0.0], a: [0.0; 3] };
        let start = Boundary { p: state.position, v: state.world_velocity(), a: [0.0; 3] };
        assert!(max_residual(&seg, &start, &goal) < 1e-9);
    }
}

#[test]
fn expert_completes_three_laps_on_random_tracks() {
    let cfg = RolloutConfig::default();
    for amplitude in [0.0, 1.0, 2.0] {
        for t in 0..10 {
            let mut rng = Rng::new(100 + t, amplitude as u64);
            let track = make_track(&mut rng, amplitude).unwrap();
            let mut expert = Expert::new(PursuitConfig::default());
            let rec = rollout(&mut expert, &track, &cfg, &mut rng, |_, _| {}).unwrap();
            assert_eq!(rec.termination, Termination::Completed, "amplitude {amplitude}, track {t}: {} gates", rec.gates_traversed);
            assert_eq!(rec.score, 1.0);
        }
    }
}

#[test]
fn expert_one_lap_at_zero_offset() {
    let cfg = RolloutConfig { target_traversals: 8, ..RolloutConfig::default() };
    let mut rng = Rng::new(9, 9);
    let track = make_track(&mut rng, 0.0).unwrap();
    let rec = rollout(&mut Expert::new(PursuitConfig::default()), &track, &cfg, &mut rng, |_, _| {}).unwrap();
    assert_eq!(rec.gates_traversed, 8);
    assert_eq!(rec.resampled, (0..8).collect::<Vec<_>>());
}

fn small_demo() -> DemoConfig {
    let mut cfg = DemoConfig { records: 600, ..DemoConfig::default() };
    cfg.rollout.camera.width = 16;
    cfg.rollout.camera.height = 16;
    cfg.rollout.scene.samples_per_axis = 1;
    cfg
}

#[test]
fn demonstrations_are_bounded_and_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_demo();
    let m1 = generate_demonstrations(&cfg, &Rng::new(5, 0), a.path()).unwrap();
    let m2 = generate_demonstrations(&cfg, &Rng::new(5, 0), b.path()).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(m1.ticks, 600);
    assert_eq!(fs::read(a.path().join("actions.csv")).unwrap(), fs::read(b.path().join("actions.csv")).unwrap());
    assert_eq!(fs::read(a.path().join("images.bin")).unwrap(), fs::read(b.path().join("images.bin")).unwrap());
    let header = fs::read_to_string(a.path().join("actions.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "vx,vy,vz,vpsi,nvx,nvy,nvz,nvpsi");
    let data = load_demonstrations(a.path()).unwrap();
    assert_eq!(data.len(), 600);
    for r in &data.records {
        assert!(r.normalized.iter().all(|x| x.abs() <= 1.0));
        assert_eq!(r.image.shape(), &[3, 16, 16]);
    }
    assert_eq!(m1.amplitudes[0], 0.0);
    assert!(m1.amplitudes.iter().all(|a| [0.0, 1.0, 2.0, 3.0].contains(a)));
}

#[test]
fn demonstrations_cycle_amplitudes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DemoConfig { records: 2000, ..small_demo() };
    let m = generate_demonstrations(&cfg, &Rng::new(6, 0), dir.path()).unwrap();
    let mut seen = m.amplitudes.clone();
    seen.dedup();
    assert!(m.episodes >= 4, "{m:?}");
    assert!(m.amplitudes.contains(&3.0) || m.discarded > 0);
}

#[test]
fn invalid_demo_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DemoConfig { amplitudes: vec![], ..DemoConfig::default() };
    assert!(matches!(generate_demonstrations(&cfg, &Rng::new(0, 0), dir.path()), Err(Error::Config(_))));
}
