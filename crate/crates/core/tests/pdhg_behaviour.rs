use pat_recon::harness::{simulate, ExperimentConfig, Setup, Simulation};
use pat_recon::pdhg::{objective, solve, PdhgConfig};
use pat_recon::variational::PrimalVariant;
use pat_recon::{approximate_inverse, InverseMode};

fn problem(n: usize, eta: f64, seed: u64) -> (Setup, Simulation) {
    let mut cfg = ExperimentConfig::default();
    cfg.recon_n = n;
    cfg.ring_elements = 64;
    cfg.n_active = 64;
    cfg.noise_level = eta;
    cfg.seed_phantom = seed;
    cfg.seed_noise = seed + 10;
    let setup = Setup::new(&cfg).unwrap();
    let sim = simulate(&setup, &cfg).unwrap();
    (setup, sim)
}

#[test]
fn huge_alpha_flattens_the_solution() {
    let (setup, sim) = problem(32, 0.0, 1);
    let back = setup.op.adjoint(&sim.noisy).unwrap();
    let alpha = 1e3 * back.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cfg = PdhgConfig { alpha, max_iter: 3000, tol: 1e-12, ..Default::default() };
    let (f, _) = solve(&sim.noisy, &setup.op, &cfg, None).unwrap();
    let mean = f.mean().unwrap();
    let spread = f.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
    assert!(spread <= 1e-6, "spread {spread:e} around mean {mean}");
}

#[test]
fn stopping_rule_is_reproducible() {
    let (setup, sim) = problem(32, 0.1, 2);
    let cfg = PdhgConfig { alpha: 1e-3, max_iter: 1000, tol: 1e-4, ..Default::default() };
    let (f1, r1) = solve(&sim.noisy, &setup.op, &cfg, None).unwrap();
    let (f2, r2) = solve(&sim.noisy, &setup.op, &cfg, None).unwrap();
    assert!(r1.converged);
    assert!(*r1.rel_change.last().unwrap() <= 1e-4);
    assert!(r1.rel_change[..r1.iterations_run - 1].iter().all(|&r| r > 1e-4));
    assert_eq!(r1, r2);
    assert_eq!(f1, f2);
    assert_eq!(r1.objective.len(), r1.iterations_run);
}

#[test]
fn final_objective_beats_trivial_candidates() {
    for (eta, alpha, seed) in [(0.0, 1e-4, 3), (0.1, 1e-3, 4), (0.2, 1e-2, 5)] {
        let (setup, sim) = problem(32, eta, seed);
        let cfg = PdhgConfig { alpha, max_iter: 600, ..Default::default() };
        let (f, rec) = solve(&sim.noisy, &setup.op, &cfg, None).unwrap();
        let fin = objective(&f, &sim.noisy, &setup.op, alpha).unwrap();
        assert_eq!(fin, *rec.objective.last().unwrap());
        let zero = objective(&(&f * 0.0), &sim.noisy, &setup.op, alpha).unwrap();
        let z = approximate_inverse(&sim.noisy, &setup.op, InverseMode::NormalizedAdjoint).unwrap();
        let init = objective(&z, &sim.noisy, &setup.op, alpha).unwrap();
        assert!(fin <= zero && fin <= init, "eta {eta}: {fin} vs {zero}, {init}");
    }
}

#[test]
fn ergodic_objective_settles_monotonically() {
    let (setup, sim) = problem(32, 0.2, 6);
    let cfg = PdhgConfig { alpha: 1e-3, max_iter: 400, tol: 1e-9, ..Default::default() };
    let (_, rec) = solve(&sim.noisy, &setup.op, &cfg, None).unwrap();
    let e = &rec.ergodic_objective;
    for k in 11..e.len() {
        assert!(e[k] <= e[k - 1] * (1.0 + 1e-12), "ergodic rise at {k}: {} -> {}", e[k - 1], e[k]);
    }
}

#[test]
fn mean_penalty_pulls_toward_target() {
    let (setup, sim) = problem(32, 0.1, 7);
    let run = |mu: f64| {
        let cfg = PdhgConfig {
            alpha: 1e-3,
            max_iter: 300,
            variant: PrimalVariant::MeanPenalty { mu, m0: 0.5 },
            ..Default::default()
        };
        solve(&sim.noisy, &setup.op, &cfg, None).unwrap().0.mean().unwrap()
    };
    let free = run(0.0);
    let pulled = run(1e4);
    assert!((pulled - 0.5).abs() < (free - 0.5).abs());
}
