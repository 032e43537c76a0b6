//! Cross-checks against independent computations: dense scans, brute-force
//! grids, series expansions and Monte Carlo.

use mfpc_core::efficiency::existence_check;
use mfpc_core::hjb::{extract_policy, solve_value};
use mfpc_core::kplayer::{empirical_measure, simulate, InitialPopulation, SimConfig};
use mfpc_core::mfg::{consistency_check, default_initial_density, solve_mfg};
use mfpc_core::policy::FeedbackPolicy;
use mfpc_core::static_game::static_ne;
use mfpc_core::*;

/// `∫_lo^hi N(m, s²)` by composite Simpson.
fn gaussian_mass(m: f64, s: f64, lo: f64, hi: f64) -> f64 {
    let n = 512;
    let h = (hi - lo) / n as f64;
    let pdf = |x: f64| (-(x - m) * (x - m) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let mut acc = pdf(lo) + pdf(hi);
    for i in 1..n {
        acc += pdf(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn exp1() -> Efficiency {
    Efficiency::exponential(1.0).unwrap()
}

#[test]
fn sigmoid_value_matches_binomial_series() {
    // (1 − q)^100 = Σ_k C(100, k)(−q)^k with q = e^{−10}; terms fall off by ~q·100/k.
    let q = (-10.0f64).exp();
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=20 {
        term *= -q * (100 - k + 1) as f64 / k as f64;
        sum += term;
    }
    let v = Efficiency::sigmoid(100).unwrap().eval(10.0).unwrap();
    assert!((v - sum).abs() < 1e-15, "{v} vs {sum}");
}

#[test]
fn sigmoid_beta_star_matches_bisection() {
    let spec = Efficiency::sigmoid(100).unwrap();
    let g = |x: f64| x * spec.d1(x) - spec.value(x);
    let (mut lo, mut hi) = (spec.inflection(), 50.0);
    assert!(g(lo) > 0.0 && g(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = spec.profile().unwrap().beta_star();
    assert!((b - lo).abs() < 1e-10, "{b} vs {lo}");
}

#[test]
fn theta_max_matches_dense_scan() {
    for spec in [
        exp1(),
        Efficiency::sigmoid(3).unwrap(),
        Efficiency::sigmoid(100).unwrap(),
    ] {
        let profile = spec.profile().unwrap();
        let beta = profile.beta_star();
        let n = 1_000_000;
        let (mut best, mut arg) = (0.0, 0.0);
        for i in 1..=n {
            let x = beta * i as f64 / n as f64;
            let v = spec.value(x) / (x * x);
            if v > best {
                best = v;
                arg = x;
            }
        }
        let tm = profile.theta_max();
        assert!(
            (tm.value - best).abs() < 1e-8 * best,
            "{spec:?}: {} vs {best}",
            tm.value
        );
        assert!(
            (tm.argmax - arg).abs() < 1e-4 * beta,
            "{spec:?}: {} vs {arg}",
            tm.argmax
        );
    }
    // Exponential: max f/γ² = 4e^{-2}/a² at a/2.
    let tm = exp1().profile().unwrap().theta_max();
    assert!((tm.value - 4.0 * (-2.0f64).exp()).abs() < 1e-12);
    assert!((tm.argmax - 0.5).abs() < 1e-7);
}

#[test]
fn gamma_star_at_half_threshold_matches_brute_force() {
    let profile = exp1().profile().unwrap();
    let theta = 0.5 * profile.theta_max().value;
    // c = R = 1, v_E = θ: maximize f(γ)/γ − γθ over a 10⁶-point grid.
    let n = 1_000_000;
    let top = 2.0;
    let (mut best, mut arg) = (0.0, 0.0);
    for i in 1..=n {
        let g = top * i as f64 / n as f64;
        let v = (-1.0 / g).exp() / g - g * theta;
        if v > best {
            best = v;
            arg = g;
        }
    }
    let g = profile.gamma_star(theta);
    assert!((g - arg).abs() <= 2.0 * top / n as f64, "{g} vs {arg}");
}

#[test]
fn hamiltonian_at_zero_price_is_static_optimum() {
    let h = exp1().profile().unwrap().hamiltonian(1.0, 0.0, 1.0, 10.0);
    assert!((h.power - 1.0).abs() < 1e-12);
    assert!((h.value - (-1.0f64).exp()).abs() < 1e-12);
    let n = 1_000_000;
    let best = (1..=n)
        .map(|i| {
            let p = 10.0 * i as f64 / n as f64;
            (-1.0 / p).exp() / p
        })
        .fold(0.0, f64::max);
    assert!(h.value >= best - 1e-12);
}

#[test]
fn existence_margins_positive_on_dense_grid() {
    for spec in [exp1(), Efficiency::sigmoid(100).unwrap()] {
        let profile = spec.profile().unwrap();
        let tmax = profile.theta_max().value;
        let grid: Vec<f64> = (0..32).map(|i| tmax * i as f64 / 32.0).collect();
        let rep = existence_check(&profile, &grid).unwrap();
        assert!(rep.holds(), "{spec:?}: min margin {}", rep.min_margin);
        // Independent margin at θ₀ = 0 for a = 1: |f''(1)| = e^{-1}.
        if let Efficiency::ExponentialRatio { .. } = spec {
            assert!((rep.points[0].margin - (-1.0f64).exp()).abs() < 1e-9);
        }
    }
}

#[test]
fn single_player_static_ne() {
    let profile = exp1().profile().unwrap();
    let ne = static_ne(&[2.5], 0.8, &profile, None).unwrap();
    assert!((ne.powers[0] - 0.8 * 1.0 / 2.5).abs() < 1e-15);
}

#[test]
fn empirical_measure_of_stationary_population() {
    let params = GameParams {
        t1: 8.0,
        ..GameParams::benchmark()
    };
    let spec = GridSpec {
        n_e: 8,
        n_x: 8,
        n_y: 8,
        ..GridSpec::default()
    };
    let grid = Grid::build(spec, &params).unwrap();
    let cfg = SimConfig {
        players: 10_000,
        dt: 0.02,
        initial: InitialPopulation::Stationary { energy: 2.0 },
        record_every: 1000,
    };
    let tr = simulate(&cfg, &ConstantPolicy(0.0), &params, 8).unwrap();
    let states = &tr.snapshots.last().unwrap().states;
    let em = empirical_measure(states, &grid);
    assert!((em.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // Channel marginal vs the stationary law's mass in each nearest-node
    // cell (edge cells extend to the tails).
    let (n_e, n_x, n_y) = grid.dims();
    let cell = |axis: &[f64], i: usize, mu: f64| {
        let d = axis[1] - axis[0];
        let lo = if i == 0 {
            mu - 12.0 * params.ou.eta
        } else {
            axis[i] - 0.5 * d
        };
        let hi = if i + 1 == axis.len() {
            mu + 12.0 * params.ou.eta
        } else {
            axis[i] + 0.5 * d
        };
        gaussian_mass(mu, params.ou.eta, lo, hi)
    };
    let mut l1 = 0.0;
    for ix in 0..n_x {
        for iy in 0..n_y {
            let j = ix * n_y + iy;
            let emp: f64 = (0..n_e).map(|ie| em.mass[ie * n_x * n_y + j]).sum();
            l1 += (emp - cell(&grid.x, ix, params.ou.mu[0]) * cell(&grid.y, iy, params.ou.mu[1])).abs();
        }
    }
    assert!(l1 < 0.1, "L1 = {l1}");
}

#[test]
fn value_converges_under_refinement() {
    let params = GameParams::benchmark();
    let coarse = GridSpec::default();
    let fine = GridSpec {
        n_e: 2 * coarse.n_e - 1,
        n_x: 2 * coarse.n_x,
        n_y: 2 * coarse.n_y,
        n_t: 2 * coarse.n_t,
        ..coarse
    };
    let fine = GridSpec {
        n_t: Grid::stable_steps(fine, &params).unwrap().max(fine.n_t),
        ..fine
    };
    let path = InterferencePath::Constant(0.0);
    let at_centre = |spec: GridSpec| {
        let g = Grid::new(spec, &params).unwrap();
        let v = solve_value(&params, &path, &g).unwrap();
        v.values.interpolate(&g, params.t0, params.initial_energy, params.ou.mu)
    };
    let (a, b) = (at_centre(coarse), at_centre(fine));
    assert!((a - b).abs() < 0.05 * b, "{a} vs {b}");
}

#[test]
fn loud_noise_decouples_the_mean_field() {
    let params = GameParams {
        sigma2: 1e4,
        ..GameParams::benchmark()
    };
    let grid = Grid::new(GridSpec::default(), &params).unwrap();
    let m0 = default_initial_density(&grid, &params).unwrap();
    let sol = solve_mfg(&params, &grid, &m0, &MfgOptions::default()).unwrap();
    assert!(sol.converged);
    let zero = InterferencePath::Constant(0.0);
    let v = solve_value(&params, &zero, &grid).unwrap();
    let single = extract_policy(&v, &params, &zero).unwrap();
    let mut worst: f64 = 0.0;
    for n in 0..grid.slices() {
        for k in 0..grid.nodes() {
            let (a, b) = (sol.policy.power.slices[n][k], single.power.slices[n][k]);
            if b > 0.0 {
                worst = worst.max((a - b).abs() / b);
            } else {
                assert_eq!(a, 0.0);
            }
        }
    }
    assert!(worst < 0.01, "{worst}");
}

#[test]
fn consistency_check_detects_perturbation() {
    let params = GameParams::benchmark();
    let grid = Grid::new(GridSpec::default(), &params).unwrap();
    let m0 = default_initial_density(&grid, &params).unwrap();
    let opts = MfgOptions::default();
    let mut sol = solve_mfg(&params, &grid, &m0, &opts).unwrap();
    let ok = consistency_check(&sol, &params, &m0).unwrap();
    assert!(ok.sup_deviation <= 2.0 * opts.tol);
    assert!(ok.mass_drift < 1e-9 && ok.hjb_residual < 1e-9 && ok.fpk_residual < 1e-9);
    sol.i_hat.iter_mut().for_each(|i| *i *= 1.1);
    let bad = consistency_check(&sol, &params, &m0).unwrap();
    assert!(bad.sup_deviation > 50.0 * opts.tol, "{}", bad.sup_deviation);
}

#[test]
fn converged_policy_shuts_down_monotonically() {
    use rand::{Rng, SeedableRng};
    let params = GameParams::benchmark();
    let grid = Grid::new(GridSpec::default(), &params).unwrap();
    let m0 = default_initial_density(&grid, &params).unwrap();
    let sol = solve_mfg(&params, &grid, &m0, &MfgOptions::default()).unwrap();
    let profile = params.efficiency.profile().unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.random_range(0..grid.slices());
        let k = rng.random_range(0..grid.nodes());
        let (_, ix, iy) = grid.unindex(k);
        let c = grid.gain(ix, iy) / (params.sigma2 + sol.i_hat[n]);
        let mut last = f64::INFINITY;
        for j in 0..100 {
            let v_e = 2.0 * j as f64 / 99.0;
            let p = profile.hamiltonian(c, v_e, params.rate, params.p_max).power;
            assert!(p <= last);
            last = p;
        }
    }
    // The grid policy honours the same map off the nodes.
    let s = GenericState::new(1.234, [0.9, 0.2]);
    assert!(sol.policy.power(0.3, &s, sol.i_hat[10]) <= params.p_max);
}
