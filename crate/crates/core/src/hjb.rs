//! Backward solver for the single-player Hamilton–Jacobi–Bellman–Fleming
//! equation
//!
//! ```text
//! ∂v/∂t + sup_p { R f(c p)/p − p ∂v/∂E } + ½⟨μ − h, ∇_h v⟩ + (η²/2) Δ_h v = 0,
//! v(T', ·) = q,   c = |h|² / (σ² + I(t)),
//! ```
//!
//! together with feedback-policy extraction and the transmitter-off
//! probability study.
//!
//! The scheme is explicit and first order. Energy advection is upwinded
//! toward lower `E` (the battery only drains) and the channel terms use the
//! generator from [`crate::grid`]. At `E = 0` the power is forced to zero.

use rayon::prelude::*;

use crate::dynamics::{path_rng, sample_stationary};
use crate::efficiency::EfficiencyProfile;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::params::{GameParams, InterferencePath};
use crate::policy::GridPolicy;

/// Solved value function on a grid.
#[derive(Debug, Clone)]
pub struct ValueField {
    pub grid: Grid,
    pub values: GridField,
}

impl ValueField {
    /// `v` at the first slice and the node nearest to `(E, h)`.
    pub fn initial_value_near(&self, energy: f64, h: [f64; 2]) -> f64 {
        let g = &self.grid;
        let k = g.index(
            Grid::nearest(&g.energy, energy),
            Grid::nearest(&g.x, h[0]),
            Grid::nearest(&g.y, h[1]),
        );
        self.values.slices[0][k]
    }
}

/// Optimal control at one node given the next-slice values.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NodeControl {
    pub power: f64,
    /// `R f(γ)/p` at the chosen power (0 when off).
    pub reward: f64,
    /// Shadow price `(v_k − v_{k−ΔE}) / ΔE` (unclamped).
    pub shadow: f64,
}

#[inline]
pub(crate) fn node_control(
    grid: &Grid,
    profile: &EfficiencyProfile,
    params: &GameParams,
    v_next: &[f64],
    k: usize,
    noise_plus_interference: f64,
) -> NodeControl {
    let (ie, ix, iy) = grid.unindex(k);
    if ie == 0 {
        return NodeControl {
            power: 0.0,
            reward: 0.0,
            shadow: 0.0,
        };
    }
    let shadow = (v_next[k] - v_next[grid.index(ie - 1, ix, iy)]) / grid.de;
    let gain = grid.gain(ix, iy);
    let c = gain / noise_plus_interference;
    let hv = profile.hamiltonian(c, shadow, params.rate, params.p_max);
    let reward = if hv.power > 0.0 {
        params.rate * profile.spec().value(c * hv.power) / hv.power
    } else {
        0.0
    };
    NodeControl {
        power: hv.power,
        reward,
        shadow,
    }
}

/// Right-hand side of the backward step at node `k`:
/// `reward + (p/ΔE)(v_{E−} − v) + L_h v`.
#[inline]
pub(crate) fn backward_rhs(grid: &Grid, v_next: &[f64], k: usize, ctl: &NodeControl) -> f64 {
    let (ie, ix, iy) = grid.unindex(k);
    let mut rhs = ctl.reward + grid.channel_generator(v_next, ie, ix, iy);
    if ie > 0 && ctl.power > 0.0 {
        rhs += ctl.power / grid.de * (v_next[grid.index(ie - 1, ix, iy)] - v_next[k]);
    }
    rhs
}

fn terminal_slice(grid: &Grid, params: &GameParams) -> Vec<f64> {
    (0..grid.nodes())
        .map(|k| params.terminal.eval(grid.energy[grid.unindex(k).0]))
        .collect()
}

/// Solves the value function backward from `v(T') = q` against the given
/// interference path.
pub fn solve_value(params: &GameParams, interference: &InterferencePath, grid: &Grid) -> Result<ValueField> {
    params.validate()?;
    grid.check_stability(params.p_max)?;
    let profile = params.efficiency.profile()?;
    let n_t = grid.slices() - 1;
    let mut slices = vec![Vec::new(); n_t + 1];
    slices[n_t] = terminal_slice(grid, params);
    for n in (0..n_t).rev() {
        let denom = params.sigma2 + interference.at(grid.times[n]);
        let v_next = &slices[n + 1];
        let v: Vec<f64> = (0..grid.nodes())
            .into_par_iter()
            .map(|k| {
                let ctl = node_control(grid, &profile, params, v_next, k, denom);
                v_next[k] + grid.dt * backward_rhs(grid, v_next, k, &ctl)
            })
            .collect();
        if let Some(k) = v.iter().position(|x| !x.is_finite()) {
            let (a, b, c) = grid.unindex(k);
            return Err(Error::NonFinite {
                slice: n,
                node: [a, b, c],
                value: v[k],
            });
        }
        slices[n] = v;
    }
    Ok(ValueField {
        grid: grid.clone(),
        values: GridField { slices },
    })
}

/// Feedback policy implied by a value function: at slice `n` the shadow
/// price is the lower-E difference of `v` at slice `n + 1` (slice `n` itself
/// at the terminal time), and the power is the pointwise Hamiltonian
/// maximizer with `θ = (v_E/R)((σ² + I)/|h|²)²`.
pub fn extract_policy(value: &ValueField, params: &GameParams, interference: &InterferencePath) -> Result<GridPolicy> {
    let grid = &value.grid;
    let profile = params.efficiency.profile()?;
    let n_t = grid.slices() - 1;
    let mut power = Vec::with_capacity(n_t + 1);
    let mut shadow = Vec::with_capacity(n_t + 1);
    let mut levels = Vec::with_capacity(n_t + 1);
    for n in 0..=n_t {
        let i_n = interference.at(grid.times[n]);
        let denom = params.sigma2 + i_n;
        let v_ref = &value.values.slices[(n + 1).min(n_t)];
        let ctl: Vec<NodeControl> = (0..grid.nodes())
            .into_par_iter()
            .map(|k| node_control(grid, &profile, params, v_ref, k, denom))
            .collect();
        power.push(ctl.iter().map(|c| c.power).collect::<Vec<_>>());
        let mut s: Vec<f64> = ctl.iter().map(|c| c.shadow).collect();
        // Empty-battery nodes have no lower neighbour; copy the first
        // interior shadow price so interpolation in E stays smooth.
        for ix in 0..grid.spec.n_x {
            for iy in 0..grid.spec.n_y {
                s[grid.index(0, ix, iy)] = s[grid.index(1, ix, iy)];
            }
        }
        shadow.push(s);
        levels.push(i_n);
    }
    Ok(GridPolicy {
        grid: grid.clone(),
        power: GridField { slices: power },
        shadow_price: GridField { slices: shadow },
        interference: levels,
        profile,
        rate: params.rate,
        sigma2: params.sigma2,
        p_max: params.p_max,
    })
}

/// One point of the transmitter-off study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffProbabilityRow {
    pub v_e: f64,
    /// `Pr[max f'' ≤ 2 v_E σ⁴ / (R |h|⁴)]`.
    pub lower_bound: f64,
    /// `Pr[γ*(θ(h)) = 0]`, `θ(h) = (v_E/R)(σ²/|h|²)²`.
    pub mc_estimate: f64,
    /// Binomial standard error of `mc_estimate`.
    pub stderr: f64,
}

/// Off probability of a single transmitter against a sweep of energy
/// shadow prices, over channels drawn from the stationary law.
pub fn off_probability(
    v_e_sweep: &[f64],
    params: &GameParams,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<OffProbabilityRow>> {
    if n_samples < 10_000 {
        return Err(Error::Domain(format!("n_samples must be >= 10^4, got {n_samples}")));
    }
    if !(params.ou.eta > 0.0) {
        return Err(Error::Domain("off-probability needs eta > 0".into()));
    }
    if !(params.rate > 0.0) {
        return Err(Error::Domain("off-probability needs rate > 0".into()));
    }
    if v_e_sweep.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain("shadow prices must be non-negative".into()));
    }
    let profile = params.efficiency.profile()?;
    let (max_d2, _) = profile.max_curvature();
    let mut rng = path_rng(seed, 0);
    let gains: Vec<f64> = (0..n_samples)
        .map(|_| {
            let h = sample_stationary(&params.ou, &mut rng);
            h[0] * h[0] + h[1] * h[1]
        })
        .collect();
    let s4 = params.sigma2 * params.sigma2;
    let n = n_samples as f64;
    let rows = v_e_sweep
        .par_iter()
        .map(|&v_e| {
            let bound_level = 2.0 * v_e * s4 / (params.rate * max_d2);
            let mut below = 0usize;
            let mut off = 0usize;
            for &g in &gains {
                let g2 = g * g;
                if g2 <= bound_level {
                    below += 1;
                }
                let theta = if g2 > 0.0 {
                    v_e / params.rate * s4 / g2
                } else {
                    f64::INFINITY
                };
                if profile.gamma_star(theta) == 0.0 {
                    off += 1;
                }
            }
            let mc = off as f64 / n;
            OffProbabilityRow {
                v_e,
                lower_bound: below as f64 / n,
                mc_estimate: mc,
                stderr: (mc * (1.0 - mc) / n).sqrt(),
            }
        })
        .collect();
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::OuParams;
    use crate::efficiency::Efficiency;
    use crate::grid::GridSpec;
    use crate::params::TerminalUtility;
    use crate::policy::FeedbackPolicy;

    fn params() -> GameParams {
        GameParams {
            players: 1,
            rate: 1.0,
            sigma2: 1.0,
            ou: OuParams::new([1.0, 0.0], 0.5).unwrap(),
            p_max: 2.0,
            t0: 0.0,
            t1: 1.5,
            terminal: TerminalUtility::Zero,
            efficiency: Efficiency::exponential(1.0).unwrap(),
            initial_energy: 1.9,
        }
    }

    fn grid(p: &GameParams) -> Grid {
        Grid::new(GridSpec::default(), p).unwrap()
    }

    #[test]
    fn zero_rate_gives_zero_value_and_policy() {
        let p = GameParams { rate: 0.0, ..params() };
        let g = grid(&p);
        let v = solve_value(&p, &InterferencePath::Constant(0.0), &g).unwrap();
        assert!(v.values.slices.iter().flatten().all(|x| *x == 0.0));
        let pol = extract_policy(&v, &p, &InterferencePath::Constant(0.0)).unwrap();
        assert!(pol.power.slices.iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn terminal_slice_is_exact() {
        let p = GameParams {
            terminal: TerminalUtility::LinearEnergy { weight: 0.3 },
            ..params()
        };
        let g = grid(&p);
        let v = solve_value(&p, &InterferencePath::Constant(0.2), &g).unwrap();
        let last = v.values.slices.last().unwrap();
        for (k, v) in last.iter().enumerate() {
            assert_eq!(*v, 0.3 * g.energy[g.unindex(k).0]);
        }
    }

    #[test]
    fn value_grows_backward_in_time() {
        let p = params();
        let g = grid(&p);
        let v = solve_value(&p, &InterferencePath::Constant(0.0), &g).unwrap();
        for n in 0..g.slices() - 1 {
            for k in 0..g.nodes() {
                assert!(v.values.slices[n][k] >= v.values.slices[n + 1][k] - 1e-15);
            }
        }
    }

    #[test]
    fn policy_off_on_empty_battery_and_above_threshold() {
        let p = params();
        let g = grid(&p);
        let v = solve_value(&p, &InterferencePath::Constant(0.0), &g).unwrap();
        let pol = extract_policy(&v, &p, &InterferencePath::Constant(0.0)).unwrap();
        let tmax = pol.profile.theta_max().value;
        for n in 0..g.slices() {
            for k in 0..g.nodes() {
                let (ie, ix, iy) = g.unindex(k);
                let pw = pol.power.slices[n][k];
                assert!((0.0..=p.p_max).contains(&pw));
                if ie == 0 {
                    assert_eq!(pw, 0.0);
                }
                let c = g.gain(ix, iy) / p.sigma2;
                let theta = pol.shadow_price.slices[n][k].max(0.0) / (p.rate * c * c);
                if theta >= tmax {
                    assert_eq!(pw, 0.0);
                }
            }
        }
    }

    #[test]
    fn terminal_policy_is_static_best_response() {
        // v_E = 0 at T' with q ≡ 0: p = σ² β* / |h|² wherever uncapped.
        let p = params();
        let g = grid(&p);
        let v = solve_value(&p, &InterferencePath::Constant(0.0), &g).unwrap();
        let pol = extract_policy(&v, &p, &InterferencePath::Constant(0.0)).unwrap();
        let last = g.slices() - 1;
        for k in 0..g.nodes() {
            let (ie, ix, iy) = g.unindex(k);
            let target = p.sigma2 * 1.0 / g.gain(ix, iy);
            if ie > 0 && target < p.p_max {
                assert!((pol.power.slices[last][k] - target).abs() < 1e-9 * target);
            }
        }
    }

    #[test]
    fn grid_policy_reproduces_node_powers() {
        let p = params();
        let g = grid(&p);
        let path = InterferencePath::Constant(0.3);
        let v = solve_value(&p, &path, &g).unwrap();
        let pol = extract_policy(&v, &p, &path).unwrap();
        let n = 20;
        let recomputed = pol.tabulate(&g, n, 0.3 + 1e-300);
        let cached = pol.tabulate(&g, n, 0.3);
        assert_eq!(recomputed, cached);
    }

    #[test]
    fn unstable_grid_rejected() {
        let p = params();
        let spec = GridSpec {
            n_t: 4,
            ..GridSpec::default()
        };
        assert!(Grid::new(spec, &p).is_err());
        let g = Grid::build(spec, &p).unwrap();
        assert!(matches!(
            solve_value(&p, &InterferencePath::Constant(0.0), &g),
            Err(Error::Stability { .. })
        ));
    }

    #[test]
    fn off_probability_limits() {
        let p = params();
        let rows = off_probability(&[0.0, 1e9], &p, 10_000, 1).unwrap();
        assert_eq!((rows[0].lower_bound, rows[0].mc_estimate), (0.0, 0.0));
        assert!(rows[1].lower_bound > 0.999 && rows[1].mc_estimate > 0.999);
        assert!(off_probability(&[1.0], &p, 100, 1).is_err());
    }
}
