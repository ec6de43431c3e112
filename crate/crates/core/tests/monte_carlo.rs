use besq_core::projection::ProjectionContext;
use besq_core::simulate::{
    local_time_occupation, local_time_tanaka, sample_besq_transition, simulate_path, uniform_grid,
    RngStream,
};
use besq_core::specfun::ModelParams;
use besq_core::verify::{
    expected_z_quadrature, ks_two_sample, laplace_log_fit, laplace_target, mean_stderr, run_paths,
    verify_laplace_multi, LaplaceHorizon, McConfig,
};

const SEED: u64 = 42;
const SAMPLES: usize = 20_000;

/// KS two-sample critical value at level 0.001 for equal sizes.
fn ks_critical(n: usize) -> f64 {
    1.95 * (2.0 / n as f64).sqrt()
}

fn draws(seed: u64, f: impl Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync) -> Vec<f64> {
    run_paths(&McConfig::new(SAMPLES, 1, seed), 0, |rng| Ok(f(rng))).unwrap()
}

#[test]
fn two_half_steps_match_one_step() {
    for (x, delta) in [(1.0, 0.0), (1.0, 1.0), (0.3, 2.5), (0.0, 0.5)] {
        let one = draws(SEED, |r| sample_besq_transition(x, delta, 0.8, r).unwrap());
        let two = draws(SEED + 1, |r| {
            let mid = sample_besq_transition(x, delta, 0.4, r).unwrap();
            sample_besq_transition(mid, delta, 0.4, r).unwrap()
        });
        let d = ks_two_sample(&one, &two);
        assert!(d < ks_critical(SAMPLES), "({x}, {delta}): KS {d}");
    }
}

#[test]
fn dimensions_and_starts_add() {
    for (x1, d1, x2, d2) in [
        (0.5, 1.0, 0.7, 2.0),
        (1.0, 0.0, 0.0, 0.5),
        (0.2, 0.3, 0.4, 0.0),
    ] {
        let sum = draws(SEED, |r| {
            sample_besq_transition(x1, d1, 1.0, r).unwrap()
                + sample_besq_transition(x2, d2, 1.0, r).unwrap()
        });
        let joint = draws(SEED + 1, |r| {
            sample_besq_transition(x1 + x2, d1 + d2, 1.0, r).unwrap()
        });
        let d = ks_two_sample(&sum, &joint);
        assert!(d < ks_critical(SAMPLES), "KS {d}");
    }
}

#[test]
fn paths_reproducible_for_fixed_seed() {
    let grid = uniform_grid(1.0, 100).unwrap();
    let a = simulate_path(1.0, 1.0, &grid, &mut RngStream::new(9, 4).rng()).unwrap();
    let b = simulate_path(1.0, 1.0, &grid, &mut RngStream::new(9, 4).rng()).unwrap();
    assert_eq!(a, b);
    let c = simulate_path(1.0, 1.0, &grid, &mut RngStream::new(9, 5).rng()).unwrap();
    assert_ne!(a.values, c.values);

    let run = |workers| {
        let cfg = McConfig::new(500, 50, 9).with_workers(workers);
        run_paths(&cfg, 0, |rng| {
            Ok(simulate_path(1.0, 0.5, &grid, rng)?.values[50])
        })
        .unwrap()
    };
    assert_eq!(run(Some(1)), run(Some(3)));
    assert_eq!(run(Some(1)), run(None));
}

#[test]
fn reflected_paths_never_sit_at_zero() {
    let grid = uniform_grid(2.0, 2000).unwrap();
    let cfg = McConfig::new(200, 2000, SEED);
    let zeros = run_paths(&cfg, 0, |rng| {
        let p = simulate_path(0.0, 0.7, &grid, rng)?;
        Ok(p.values[1..].iter().filter(|&&v| v == 0.0).count())
    })
    .unwrap();
    assert_eq!(zeros.iter().sum::<usize>(), 0);
}

#[test]
fn absorbed_fraction_matches_hitting_law() {
    // P(ρ ≤ t) = e^{-x/2t} for dimension 0
    let grid = uniform_grid(1.0, 20).unwrap();
    let cfg = McConfig::new(SAMPLES, 20, SEED);
    let hit = run_paths(&cfg, 0, |rng| {
        let p = simulate_path(1.0, 0.0, &grid, rng)?;
        if let Some(i) = p.absorbed_at {
            assert!(p.values[i..].iter().all(|&v| v == 0.0));
            let rho = p.absorption_time.unwrap();
            assert!(rho > p.times[i - 1] && rho <= p.times[i]);
        }
        Ok(if p.absorbed_at.is_some() { 1.0 } else { 0.0 })
    })
    .unwrap();
    let (frac, se) = mean_stderr(&hit);
    let target = (-0.5f64).exp();
    assert!((frac - target).abs() < 4.0 * se, "{frac} vs {target}");
}

#[test]
fn local_time_is_additive_over_segments() {
    let grid = uniform_grid(1.0, 1000).unwrap();
    let m = 1.0;
    for id in 0..20 {
        let path = simulate_path(0.0, m, &grid, &mut RngStream::new(SEED, id).rng()).unwrap();
        let head = path.segment(0, 400).unwrap();
        let tail = path.segment(400, 1000).unwrap();
        let eps = 1e-3;
        let whole = local_time_occupation(&path, eps, m).unwrap().final_value();
        let parts = local_time_occupation(&head, eps, m).unwrap().final_value()
            + local_time_occupation(&tail, eps, m).unwrap().final_value();
        assert!((whole - parts).abs() <= 1e-12 * whole.max(1.0));
        let whole = local_time_tanaka(&path, m).unwrap().final_raw();
        let parts = local_time_tanaka(&head, m).unwrap().final_raw()
            + local_time_tanaka(&tail, m).unwrap().final_raw();
        assert!(
            (whole - parts).abs() <= 1e-9 * whole.abs().max(1.0),
            "{whole} vs {parts}"
        );
    }
}

#[test]
fn local_time_nondecreasing() {
    let grid = uniform_grid(1.0, 1000).unwrap();
    let path = simulate_path(0.0, 0.5, &grid, &mut RngStream::new(SEED, 0).rng()).unwrap();
    for est in [
        local_time_occupation(&path, 1e-3, 0.5).unwrap(),
        local_time_tanaka(&path, 0.5).unwrap(),
    ] {
        assert_eq!(est.lambda_values[0], 0.0);
        assert!(est.lambda_values.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn expected_terminal_value_ignores_projection_dimension() {
    for n in [2.0, 3.0, 4.0, 5.5] {
        let reference = expected_z_quadrature(
            1.0,
            &ProjectionContext::new(ModelParams::new(n, 0.0).unwrap()),
        )
        .unwrap();
        for frac in [0.1, 0.4, 0.9] {
            let m = frac * n;
            let c = ProjectionContext::new(ModelParams::new(n, m).unwrap());
            let v = expected_z_quadrature(1.0, &c).unwrap();
            assert_eq!(v, reference, "n {n} m {m}");
        }
    }
}

/// Mean and stderr of Z_T = f(T, X_T) with X_T drawn exactly from X_0 = 1.
fn terminal_z(n: f64, m: f64, horizon: f64, seed: u64) -> (f64, f64) {
    let ctx = ProjectionContext::new(ModelParams::new(n, m).unwrap());
    let z = run_paths(&McConfig::new(SAMPLES, 1, seed), 0, |rng| {
        let x = sample_besq_transition(1.0, m, horizon, rng)?;
        if x == 0.0 {
            ctx.f_at_zero(horizon)
        } else {
            ctx.f_proj(horizon, x)
        }
    })
    .unwrap();
    mean_stderr(&z)
}

#[test]
fn terminal_expectation_consistent_across_regimes() {
    for (n, m) in [(4.0, 0.0), (4.0, 1.0), (4.0, 2.5), (2.0, 0.5)] {
        for horizon in [0.5, 1.0] {
            let target = expected_z_quadrature(
                horizon,
                &ProjectionContext::new(ModelParams::new(n, m).unwrap()),
            )
            .unwrap();
            let (mean, se) = terminal_z(n, m, horizon, SEED);
            assert!(
                (mean - target).abs() <= 3.0 * se,
                "({n}, {m}, {horizon}): {mean} ± {se} vs {target}"
            );
        }
    }
    let runs: Vec<(f64, f64)> = [0.0, 1.0, 2.5]
        .iter()
        .enumerate()
        .map(|(i, &m)| terminal_z(4.0, m, 1.0, SEED + 1 + i as u64))
        .collect();
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            assert!((a.0 - b.0).abs() <= 3.0 * (a.1 * a.1 + b.1 * b.1).sqrt());
        }
    }
}

#[test]
fn inverse_local_time_laplace_is_log_linear() {
    let s_values = [0.25, 0.5, 0.75, 1.0];
    let horizon = LaplaceHorizon {
        window: 1.0,
        max_windows: 10,
    };
    let reports = verify_laplace_multi(
        1.0,
        &s_values,
        1.0,
        &McConfig::new(2000, 2000, SEED),
        horizon,
        None,
    )
    .unwrap();
    let (slope, r2) = laplace_log_fit(&reports).unwrap();
    assert!(r2 > 0.99, "R² {r2}");
    let expected = laplace_target(1.0, 1.0, 1.0).unwrap().ln();
    assert!(
        (slope - expected).abs() < 0.1 * expected.abs(),
        "slope {slope} vs {expected}"
    );
}
