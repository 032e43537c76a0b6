//! Mean-field equilibrium: forward Fokker–Planck–Kolmogorov transport of the
//! population density, the mean-field interference functional and the
//! damped fixed-point iteration coupling them with the HJB solver.
//!
//! The forward step is the transpose of the HJB generator on the same grid,
//! `m^{n+1} = m^n + dt (Q^n)ᵀ m^n`, so probability only moves between nodes
//! (mass is conserved to round-off) and the discrete duality
//! `⟨v^n, m^n⟩ = ⟨v^{n+1}, m^{n+1}⟩ + dt ⟨r^n, m^n⟩` holds exactly.

use rayon::prelude::*;

use crate::dynamics::stationary_density;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridField, CFL_SAFETY};
use crate::hjb::{extract_policy, solve_value, ValueField};
use crate::params::{GameParams, InterferencePath};
use crate::policy::{FeedbackPolicy, GridPolicy};

/// Negative densities above this are treated as round-off and clipped.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;

/// Population density over `(t, E, x, y)`; `Σ m · cell_volume = 1` per slice.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub values: GridField,
}

impl DensityField {
    pub fn mass(&self, grid: &Grid, slice: usize) -> f64 {
        mass(grid, &self.values.slices[slice])
    }

    /// Channel marginal at a slice as probabilities per `(ix, iy)` cell,
    /// row-major in `x`.
    pub fn channel_marginal(&self, grid: &Grid, slice: usize) -> Vec<f64> {
        let (n_e, n_x, n_y) = grid.dims();
        let m = &self.values.slices[slice];
        let vol = grid.cell_volume();
        let mut out = vec![0.0; n_x * n_y];
        for ie in 0..n_e {
            for (j, o) in out.iter_mut().enumerate() {
                *o += m[ie * n_x * n_y + j] * vol;
            }
        }
        out
    }

    /// Mean battery energy at a slice.
    pub fn energy_mean(&self, grid: &Grid, slice: usize) -> f64 {
        let m = &self.values.slices[slice];
        let vol = grid.cell_volume();
        m.iter()
            .enumerate()
            .map(|(k, v)| v * vol * grid.energy[grid.unindex(k).0])
            .sum()
    }
}

/// Total probability of one density slice.
pub fn mass(grid: &Grid, m: &[f64]) -> f64 {
    m.iter().sum::<f64>() * grid.cell_volume()
}

/// Initial density: the node-sampled stationary channel law times a
/// triangular energy profile of half-width two cells centred at `E₀`.
/// A frozen channel (`η = 0`) puts all channel mass on the node nearest `μ`.
pub fn default_initial_density(grid: &Grid, params: &GameParams) -> Result<Vec<f64>> {
    let (n_e, n_x, n_y) = grid.dims();
    let e0 = params.initial_energy;
    if e0 > grid.spec.e_max {
        return Err(Error::Config(format!(
            "initial energy {e0} exceeds the grid's e_max {}",
            grid.spec.e_max
        )));
    }
    let energy_w: Vec<f64> = grid
        .energy
        .iter()
        .map(|e| (1.0 - (e - e0).abs() / (2.0 * grid.de)).max(0.0))
        .collect();
    let mut channel_w = vec![0.0; n_x * n_y];
    if params.ou.eta > 0.0 {
        for ix in 0..n_x {
            for iy in 0..n_y {
                channel_w[ix * n_y + iy] = stationary_density(&params.ou, [grid.x[ix], grid.y[iy]])?;
            }
        }
    } else {
        let ix = Grid::nearest(&grid.x, params.ou.mu[0]);
        let iy = Grid::nearest(&grid.y, params.ou.mu[1]);
        channel_w[ix * n_y + iy] = 1.0;
    }
    let mut m = vec![0.0; grid.nodes()];
    for ie in 0..n_e {
        for j in 0..n_x * n_y {
            m[ie * n_x * n_y + j] = energy_w[ie] * channel_w[j];
        }
    }
    let total = mass(grid, &m);
    if !(total > 0.0) {
        return Err(Error::Config("initial density has no mass on the grid".into()));
    }
    m.iter_mut().for_each(|v| *v /= total);
    Ok(m)
}

/// `Σ |h|² α m · cell_volume` over one slice.
pub fn mean_interference(grid: &Grid, m: &[f64], powers: &[f64]) -> f64 {
    let vol = grid.cell_volume();
    m.iter()
        .zip(powers)
        .enumerate()
        .map(|(k, (mk, pk))| {
            let (_, ix, iy) = grid.unindex(k);
            grid.gain(ix, iy) * pk * mk
        })
        .sum::<f64>()
        * vol
}

/// Result of a forward solve: the density and the node powers applied at
/// each slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSolution {
    pub density: DensityField,
    pub powers: GridField,
}

impl ForwardSolution {
    /// Mean-field interference at every slice.
    pub fn interference(&self, grid: &Grid) -> Vec<f64> {
        self.density
            .values
            .slices
            .iter()
            .zip(&self.powers.slices)
            .map(|(m, p)| mean_interference(grid, m, p))
            .collect()
    }
}

fn fpk_step(grid: &Grid, m: &[f64], powers: &[f64]) -> Vec<f64> {
    let (n_e, _, _) = grid.dims();
    let inv_de = 1.0 / grid.de;
    (0..grid.nodes())
        .into_par_iter()
        .map(|k| {
            let (ie, ix, iy) = grid.unindex(k);
            let mut flow = grid.channel_adjoint(m, ie, ix, iy) - powers[k] * inv_de * m[k];
            if ie + 1 < n_e {
                let up = grid.index(ie + 1, ix, iy);
                flow += powers[up] * inv_de * m[up];
            }
            m[k] + grid.dt * flow
        })
        .collect()
}

fn check_slice_stability(grid: &Grid, powers: &[f64]) -> Result<()> {
    let p = powers.iter().copied().fold(0.0, f64::max);
    let rate = p / grid.de + grid.rates_x.max_out_rate() + grid.rates_y.max_out_rate();
    let bound = CFL_SAFETY / rate;
    if grid.dt > bound {
        return Err(Error::Stability {
            dt: grid.dt,
            bound,
            detail: format!("policy power {p} too large for the energy step"),
        });
    }
    Ok(())
}

/// Transports `m0` forward under `policy`, which sees the interference
/// `interference(t)` at every slice.
pub fn solve_fpk(
    policy: &dyn FeedbackPolicy,
    m0: &[f64],
    grid: &Grid,
    interference: &InterferencePath,
) -> Result<ForwardSolution> {
    if m0.len() != grid.nodes() {
        return Err(Error::Domain(format!(
            "initial density has {} nodes, grid has {}",
            m0.len(),
            grid.nodes()
        )));
    }
    if let Some(v) = m0.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("initial density must be nonnegative, found {v}")));
    }
    if (mass(grid, m0) - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "initial density must have unit mass, has {}",
            mass(grid, m0)
        )));
    }
    let n_t = grid.slices() - 1;
    let mut slices = Vec::with_capacity(n_t + 1);
    let mut powers = Vec::with_capacity(n_t + 1);
    slices.push(m0.to_vec());
    for n in 0..=n_t {
        let p = policy.tabulate(grid, n, interference.at(grid.times[n]));
        if n < n_t {
            check_slice_stability(grid, &p)?;
            let mut next = fpk_step(grid, &slices[n], &p);
            clip_negative(grid, &mut next, n + 1)?;
            slices.push(next);
        }
        powers.push(p);
    }
    Ok(ForwardSolution {
        density: DensityField {
            values: GridField { slices },
        },
        powers: GridField { slices: powers },
    })
}

fn clip_negative(grid: &Grid, m: &mut [f64], slice: usize) -> Result<()> {
    let mut clipped = false;
    for (k, v) in m.iter_mut().enumerate() {
        if !v.is_finite() {
            let (a, b, c) = grid.unindex(k);
            return Err(Error::NonFinite {
                slice,
                node: [a, b, c],
                value: *v,
            });
        }
        if *v < 0.0 {
            if *v < -NEGATIVE_TOLERANCE {
                let (a, b, c) = grid.unindex(k);
                return Err(Error::NegativeDensity {
                    slice,
                    node: [a, b, c],
                    value: *v,
                });
            }
            *v = 0.0;
            clipped = true;
        }
    }
    if clipped {
        let total = mass(grid, m);
        m.iter_mut().for_each(|v| *v /= total);
    }
    Ok(())
}

/// Picard iteration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfgOptions {
    /// Damping `λ ∈ (0, 1]`.
    pub damping: f64,
    /// Tolerance on `sup_t |Î_new − Î|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MfgOptions {
    fn default() -> Self {
        MfgOptions {
            damping: 0.5,
            tol: 1e-3,
            max_iter: 50,
        }
    }
}

impl MfgOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!(
                "damping must be in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MfgSolution {
    pub value: ValueField,
    pub density: DensityField,
    /// Interference at each time slice, the path `value` and `policy` were
    /// computed against.
    pub i_hat: Vec<f64>,
    pub policy: GridPolicy,
    /// Node powers applied in the forward pass.
    pub powers: GridField,
    pub iterations: usize,
    /// `sup_t |Î_new − Î|` at the returned iterate.
    pub residual: f64,
    pub converged: bool,
    /// Residual at every iteration.
    pub history: Vec<f64>,
}

impl MfgSolution {
    pub fn interference_path(&self) -> InterferencePath {
        InterferencePath::sampled(&self.value.grid.times, self.i_hat.clone())
    }
}

/// Constant starting interference from the symmetric static equilibrium
/// against the mean channel `ḡ = |μ|² + 2η²`: each player targets
/// `p ḡ / (σ² + p ḡ) = β*`, capped at `P_max`.
pub fn initial_interference(params: &GameParams) -> Result<f64> {
    if params.rate == 0.0 {
        return Ok(0.0);
    }
    let beta = params.efficiency.profile()?.beta_star();
    let g = params.ou.mean_gain();
    if g == 0.0 {
        return Ok(0.0);
    }
    let p = if beta < 1.0 {
        (params.sigma2 * beta / ((1.0 - beta) * g)).min(params.p_max)
    } else {
        params.p_max
    };
    Ok(p * g)
}

struct Iterate {
    value: ValueField,
    policy: GridPolicy,
    forward: ForwardSolution,
    i_new: Vec<f64>,
}

fn best_response_pass(params: &GameParams, grid: &Grid, m0: &[f64], i_hat: &[f64]) -> Result<Iterate> {
    let path = InterferencePath::sampled(&grid.times, i_hat.to_vec());
    let value = solve_value(params, &path, grid)?;
    let policy = extract_policy(&value, params, &path)?;
    let forward = solve_fpk(&policy, m0, grid, &path)?;
    let i_new = forward.interference(grid);
    Ok(Iterate {
        value,
        policy,
        forward,
        i_new,
    })
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Damped Picard iteration on the interference path. Each pass solves the
/// HJB against `Î^k`, extracts the policy, transports `m0` forward and
/// recomputes `Î_new`; it stops once `sup_t |Î_new − Î^k| < tol` and
/// returns the tuple computed against `Î^k`. Otherwise
/// `Î^{k+1} = (1 − λ)Î^k + λ Î_new`. After `max_iter` passes the iterate with
/// the smallest residual is returned with `converged = false`.
pub fn solve_mfg(params: &GameParams, grid: &Grid, m0: &[f64], options: &MfgOptions) -> Result<MfgSolution> {
    options.validate()?;
    params.validate()?;
    let mut i_hat = vec![initial_interference(params)?; grid.slices()];
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<f64>, Iterate)> = None;
    for k in 1..=options.max_iter {
        let it = best_response_pass(params, grid, m0, &i_hat)?;
        let gap = sup_gap(&it.i_new, &i_hat);
        history.push(gap);
        let next: Vec<f64> = i_hat
            .iter()
            .zip(&it.i_new)
            .map(|(a, b)| ((1.0 - options.damping) * a + options.damping * b).max(0.0))
            .collect();
        let done = gap < options.tol;
        if done || best.as_ref().is_none_or(|b| gap < b.0) {
            best = Some((gap, k, i_hat, it));
        }
        if done {
            break;
        }
        i_hat = next;
    }
    let (residual, _, i_hat, it) = best.expect("max_iter >= 1");
    Ok(MfgSolution {
        value: it.value,
        density: it.forward.density,
        i_hat,
        policy: it.policy,
        powers: it.forward.powers,
        iterations: history.len(),
        residual,
        converged: residual < options.tol,
        history,
    })
}

/// Diagnostics of a candidate fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyReport {
    /// `sup_t |Î(m, α) − Î|` after re-running the forward solve.
    pub sup_deviation: f64,
    /// Largest residual of the discrete HJB at interior nodes.
    pub hjb_residual: f64,
    /// Largest residual of the discrete FPK at interior nodes.
    pub fpk_residual: f64,
    /// Largest `|mass − 1|` over slices.
    pub mass_drift: f64,
}

fn interior(grid: &Grid, k: usize) -> bool {
    let (ie, ix, iy) = grid.unindex(k);
    let (n_e, n_x, n_y) = grid.dims();
    ie > 0 && ie + 1 < n_e && ix > 0 && ix + 1 < n_x && iy > 0 && iy + 1 < n_y
}

/// Re-derives the interference from `sol.policy` by a fresh forward solve
/// and measures the residuals of both discrete equations along `sol`.
pub fn consistency_check(sol: &MfgSolution, params: &GameParams, m0: &[f64]) -> Result<ConsistencyReport> {
    let grid = &sol.value.grid;
    let path = sol.interference_path();
    let forward = solve_fpk(&sol.policy, m0, grid, &path)?;
    let sup_deviation = sup_gap(&forward.interference(grid), &sol.i_hat);
    let n_t = grid.slices() - 1;
    let inv_de = 1.0 / grid.de;
    let spec = params.efficiency;
    let mut hjb_residual: f64 = 0.0;
    let mut fpk_residual: f64 = 0.0;
    for n in 0..n_t {
        let v_next = &sol.value.values.slices[n + 1];
        let v = &sol.value.values.slices[n];
        let p = &sol.policy.power.slices[n];
        let m = &forward.density.values.slices[n];
        let m_next = &forward.density.values.slices[n + 1];
        let denom = params.sigma2 + sol.i_hat[n];
        for k in (0..grid.nodes()).filter(|&k| interior(grid, k)) {
            let (ie, ix, iy) = grid.unindex(k);
            let below = grid.index(ie - 1, ix, iy);
            let above = grid.index(ie + 1, ix, iy);
            let reward = if p[k] > 0.0 {
                params.rate * spec.value(grid.gain(ix, iy) / denom * p[k]) / p[k]
            } else {
                0.0
            };
            let gen = reward + p[k] * inv_de * (v_next[below] - v_next[k]) + grid.channel_generator(v_next, ie, ix, iy);
            hjb_residual = hjb_residual.max(((v[k] - v_next[k]) / grid.dt - gen).abs());
            let flow = grid.channel_adjoint(m, ie, ix, iy) - p[k] * inv_de * m[k] + p[above] * inv_de * m[above];
            fpk_residual = fpk_residual.max(((m_next[k] - m[k]) / grid.dt - flow).abs());
        }
    }
    let mass_drift = (0..=n_t)
        .map(|n| (forward.density.mass(grid, n) - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(ConsistencyReport {
        sup_deviation,
        hjb_residual,
        fpk_residual,
        mass_drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{transient_moments, OuParams};
    use crate::efficiency::Efficiency;
    use crate::grid::GridSpec;
    use crate::params::TerminalUtility;
    use crate::policy::ConstantPolicy;

    fn params() -> GameParams {
        GameParams {
            players: 100,
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
    fn initial_density_has_unit_mass() {
        let p = params();
        let g = grid(&p);
        let m = default_initial_density(&g, &p).unwrap();
        assert!((mass(&g, &m) - 1.0).abs() < 1e-12);
        assert!(m.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn zero_policy_keeps_stationary_channel() {
        let p = params();
        let g = grid(&p);
        let m0 = default_initial_density(&g, &p).unwrap();
        let f = solve_fpk(&ConstantPolicy(0.0), &m0, &g, &InterferencePath::Constant(0.0)).unwrap();
        let first = f.density.channel_marginal(&g, 0);
        let last = f.density.channel_marginal(&g, g.slices() - 1);
        let l1: f64 = first.iter().zip(&last).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 < 1e-3 * p.horizon(), "{l1}");
        assert!(f.interference(&g).iter().all(|i| *i == 0.0));
    }

    #[test]
    fn channel_mean_relaxes_like_transient_moments() {
        let p = GameParams { t1: 3.0, ..params() };
        let spec = GridSpec {
            n_t: 200,
            ..GridSpec::default()
        };
        let g = Grid::new(spec, &p).unwrap();
        let (n_e, n_x, n_y) = g.dims();
        let (ix0, iy0) = (4, 11);
        let h0 = [g.x[ix0], g.y[iy0]];
        let mut m0 = vec![0.0; g.nodes()];
        m0[g.index(n_e / 2, ix0, iy0)] = 1.0 / g.cell_volume();
        let f = solve_fpk(&ConstantPolicy(0.0), &m0, &g, &InterferencePath::Constant(0.0)).unwrap();
        for n in [50, 100, 200] {
            let marg = f.density.channel_marginal(&g, n);
            let mut mean = [0.0; 2];
            for ix in 0..n_x {
                for iy in 0..n_y {
                    mean[0] += marg[ix * n_y + iy] * g.x[ix];
                    mean[1] += marg[ix * n_y + iy] * g.y[iy];
                }
            }
            let exact = transient_moments(h0, &p.ou, g.times[n]).mean;
            for c in 0..2 {
                let scale = (h0[c] - p.ou.mu[c]).abs();
                assert!(
                    (mean[c] - exact[c]).abs() < 0.05 * scale,
                    "n={n} c={c}: {} vs {}",
                    mean[c],
                    exact[c]
                );
            }
        }
    }

    #[test]
    fn mass_conserved_and_energy_mean_drains() {
        let p = params();
        let g = grid(&p);
        let m0 = default_initial_density(&g, &p).unwrap();
        let f = solve_fpk(&ConstantPolicy(1.3), &m0, &g, &InterferencePath::Constant(0.0)).unwrap();
        for n in 0..g.slices() {
            assert!((f.density.mass(&g, n) - 1.0).abs() < 1e-9 * (n + 1) as f64);
            if n > 0 {
                assert!(f.density.energy_mean(&g, n) <= f.density.energy_mean(&g, n - 1) + 1e-12);
            }
        }
    }

    #[test]
    fn constant_power_interference_matches_second_moment() {
        let p = params();
        let g = grid(&p);
        let m0 = default_initial_density(&g, &p).unwrap();
        let powers: Vec<f64> = (0..g.nodes()).map(|_| 0.7).collect();
        let i = mean_interference(&g, &m0, &powers);
        let exact = 0.7 * p.ou.mean_gain();
        assert!((i - exact).abs() < 0.02 * exact, "{i} vs {exact}");
    }

    #[test]
    fn spike_interference_is_node_value() {
        let p = params();
        let g = grid(&p);
        let mut m = vec![0.0; g.nodes()];
        let k = g.index(5, 3, 9);
        m[k] = 1.0 / g.cell_volume();
        let mut pw = vec![0.0; g.nodes()];
        pw[k] = 0.4;
        let i = mean_interference(&g, &m, &pw);
        assert!((i - g.gain(3, 9) * 0.4).abs() < 1e-12);
    }

    #[test]
    fn discrete_duality_is_exact() {
        let p = params();
        let g = grid(&p);
        let m0 = default_initial_density(&g, &p).unwrap();
        let path = InterferencePath::Constant(0.6);
        let v = solve_value(&p, &path, &g).unwrap();
        let pol = extract_policy(&v, &p, &path).unwrap();
        let f = solve_fpk(&pol, &m0, &g, &path).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * g.cell_volume();
        let n_t = g.slices() - 1;
        let mut reward = 0.0;
        for n in 0..n_t {
            let pw = &f.powers.slices[n];
            let r: Vec<f64> = (0..g.nodes())
                .map(|k| {
                    let (_, ix, iy) = g.unindex(k);
                    if pw[k] > 0.0 {
                        p.efficiency.value(g.gain(ix, iy) / (1.0 + 0.6) * pw[k]) / pw[k]
                    } else {
                        0.0
                    }
                })
                .collect();
            reward += g.dt * dot(&r, &f.density.values.slices[n]);
        }
        let lhs = dot(&v.values.slices[0], &m0) - dot(&v.values.slices[n_t], &f.density.values.slices[n_t]);
        assert!((lhs - reward).abs() < 1e-10 * reward.abs(), "{lhs} vs {reward}");
    }

    #[test]
    fn zero_rate_converges_immediately() {
        let p = GameParams { rate: 0.0, ..params() };
        let g = grid(&p);
        let m0 = default_initial_density(&g, &p).unwrap();
        let sol = solve_mfg(&p, &g, &m0, &MfgOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        assert!(sol.i_hat.iter().all(|i| *i == 0.0));
        let rep = consistency_check(&sol, &p, &m0).unwrap();
        assert_eq!(rep.sup_deviation, 0.0);
    }

    #[test]
    fn bad_options_rejected() {
        for o in [
            MfgOptions {
                damping: 0.0,
                ..MfgOptions::default()
            },
            MfgOptions {
                damping: 1.5,
                ..MfgOptions::default()
            },
            MfgOptions {
                tol: 0.0,
                ..MfgOptions::default()
            },
            MfgOptions {
                max_iter: 0,
                ..MfgOptions::default()
            },
        ] {
            assert!(o.validate().is_err());
        }
    }
}
