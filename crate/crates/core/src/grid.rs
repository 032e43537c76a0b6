//! Tensor grid over `(t, E, x, y)` shared by the value function and the
//! population density, and the discrete channel generator on it.
//!
//! Every spatial node is the centre of a cell of volume `ΔE Δx Δy`. The
//! channel part of the dynamics is discretized as a continuous-time Markov
//! chain between neighbouring nodes; the backward (value) and forward
//! (density) schemes use the same rates, so the two are exact discrete
//! adjoints and the forward scheme conserves mass.

use serde::{Deserialize, Serialize};

use crate::dynamics::OuParams;
use crate::error::{Error, Result};
use crate::params::GameParams;

/// Fraction of the explicit stability limit a time step may use.
pub const CFL_SAFETY: f64 = 0.9;

/// Discretization of the state space and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Upper end of the energy axis `[0, e_max]` (J).
    pub e_max: f64,
    pub n_e: usize,
    pub n_x: usize,
    pub n_y: usize,
    /// Number of time steps; the grid has `n_t + 1` time slices.
    pub n_t: usize,
    /// Channel axes span `μ_c ± width · η`.
    pub width: f64,
    /// Overrides the channel half-width `width · η` (needed when `η = 0`).
    pub h_half_width: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            e_max: 3.8,
            n_e: 20,
            n_x: 16,
            n_y: 16,
            n_t: 50,
            width: 4.0,
            h_half_width: None,
        }
    }
}

/// Per-axis transition rates of the channel chain.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisRates {
    /// Rate from node `i` to `i + 1` (zero at the last node).
    pub up: Vec<f64>,
    /// Rate from node `i` to `i − 1` (zero at the first node).
    pub down: Vec<f64>,
}

impl AxisRates {
    /// Exponentially fitted (Scharfetter–Gummel) rates for the 1-D
    /// OU component `dx = ½(μ − x)dt + η dW` on uniform `nodes`, with
    /// no transitions out of the box.
    ///
    /// The chain's stationary law is the Gaussian `N(μ, η²)` sampled at the
    /// nodes, exactly. For vanishing `η` the rates reduce to first-order
    /// upwinding of the drift.
    pub fn ornstein_uhlenbeck(nodes: &[f64], mu: f64, eta: f64) -> Self {
        let n = nodes.len();
        let dx = nodes[1] - nodes[0];
        let diff = 0.5 * eta * eta;
        let mut up = vec![0.0; n];
        let mut down = vec![0.0; n];
        for i in 0..n - 1 {
            let b = 0.5 * (mu - 0.5 * (nodes[i] + nodes[i + 1]));
            let (r_up, r_down) = if diff > 0.0 {
                let z = b * dx / diff;
                let base = diff / (dx * dx);
                (base * bernoulli(-z), base * bernoulli(z))
            } else {
                (b.max(0.0) / dx, (-b).max(0.0) / dx)
            };
            up[i] = r_up;
            down[i + 1] = r_down;
        }
        AxisRates { up, down }
    }

    #[inline]
    pub fn out_rate(&self, i: usize) -> f64 {
        self.up[i] + self.down[i]
    }

    pub fn max_out_rate(&self) -> f64 {
        (0..self.up.len()).map(|i| self.out_rate(i)).fold(0.0, f64::max)
    }
}

/// `z / (e^z − 1)`, continuous at zero.
#[inline]
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// A [`GridSpec`] resolved against a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub spec: GridSpec,
    pub energy: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub times: Vec<f64>,
    pub de: f64,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
    pub rates_x: AxisRates,
    pub rates_y: AxisRates,
    pub ou: OuParams,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

impl Grid {
    /// Builds the grid without checking the time step.
    pub fn build(spec: GridSpec, params: &GameParams) -> Result<Self> {
        for (name, n) in [("n_e", spec.n_e), ("n_x", spec.n_x), ("n_y", spec.n_y)] {
            if n < 8 {
                return Err(Error::Config(format!("grid.{name} must be >= 8, got {n}")));
            }
        }
        if spec.n_t == 0 {
            return Err(Error::Config("grid.n_t must be >= 1".into()));
        }
        if !(spec.e_max > 0.0) {
            return Err(Error::Config(format!(
                "grid.e_max must be positive, got {}",
                spec.e_max
            )));
        }
        let ou = params.ou;
        let half = spec.h_half_width.unwrap_or(spec.width * ou.eta);
        if !(half > 0.0 && half.is_finite()) {
            return Err(Error::Config(format!(
                "channel half-width must be positive, got {half} (set grid.h_half_width when eta = 0)"
            )));
        }
        let energy = linspace(0.0, spec.e_max, spec.n_e);
        let x = linspace(ou.mu[0] - half, ou.mu[0] + half, spec.n_x);
        let y = linspace(ou.mu[1] - half, ou.mu[1] + half, spec.n_y);
        let times = linspace(params.t0, params.t1, spec.n_t + 1);
        let rates_x = AxisRates::ornstein_uhlenbeck(&x, ou.mu[0], ou.eta);
        let rates_y = AxisRates::ornstein_uhlenbeck(&y, ou.mu[1], ou.eta);
        Ok(Grid {
            spec,
            de: energy[1] - energy[0],
            dx: x[1] - x[0],
            dy: y[1] - y[0],
            dt: times[1] - times[0],
            energy,
            x,
            y,
            times,
            rates_x,
            rates_y,
            ou,
        })
    }

    /// Builds the grid and enforces the explicit stability bound
    /// `dt · (P_max/ΔE + max out-rate in x + max out-rate in y) ≤ 0.9`.
    pub fn new(spec: GridSpec, params: &GameParams) -> Result<Self> {
        let grid = Grid::build(spec, params)?;
        grid.check_stability(params.p_max)?;
        Ok(grid)
    }

    pub fn max_stable_dt(&self, p_max: f64) -> f64 {
        let rate = p_max / self.de + self.rates_x.max_out_rate() + self.rates_y.max_out_rate();
        CFL_SAFETY / rate
    }

    pub fn check_stability(&self, p_max: f64) -> Result<()> {
        let bound = self.max_stable_dt(p_max);
        if self.dt > bound {
            return Err(Error::Stability {
                dt: self.dt,
                bound,
                detail: format!(
                    "need n_t >= {} for this horizon and spatial resolution",
                    ((self.times[self.times.len() - 1] - self.times[0]) / bound).ceil()
                ),
            });
        }
        Ok(())
    }

    /// Smallest `n_t` that satisfies the stability bound.
    pub fn stable_steps(spec: GridSpec, params: &GameParams) -> Result<usize> {
        let grid = Grid::build(spec, params)?;
        Ok((params.horizon() / grid.max_stable_dt(params.p_max)).ceil() as usize)
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.spec.n_e, self.spec.n_x, self.spec.n_y)
    }

    pub fn nodes(&self) -> usize {
        self.spec.n_e * self.spec.n_x * self.spec.n_y
    }

    pub fn slices(&self) -> usize {
        self.times.len()
    }

    #[inline]
    pub fn index(&self, ie: usize, ix: usize, iy: usize) -> usize {
        (ie * self.spec.n_x + ix) * self.spec.n_y + iy
    }

    #[inline]
    pub fn unindex(&self, k: usize) -> (usize, usize, usize) {
        let iy = k % self.spec.n_y;
        let r = k / self.spec.n_y;
        (r / self.spec.n_x, r % self.spec.n_x, iy)
    }

    pub fn cell_volume(&self) -> f64 {
        self.de * self.dx * self.dy
    }

    #[inline]
    pub fn gain(&self, ix: usize, iy: usize) -> f64 {
        self.x[ix] * self.x[ix] + self.y[iy] * self.y[iy]
    }

    /// Total outgoing channel rate at `(ix, iy)`.
    #[inline]
    pub fn channel_out_rate(&self, ix: usize, iy: usize) -> f64 {
        self.rates_x.out_rate(ix) + self.rates_y.out_rate(iy)
    }

    /// Applies the channel generator: `Σ_j q(i→j) (u_j − u_i)`.
    #[inline]
    pub fn channel_generator(&self, u: &[f64], ie: usize, ix: usize, iy: usize) -> f64 {
        let k = self.index(ie, ix, iy);
        let c = u[k];
        let (rx, ry) = (&self.rates_x, &self.rates_y);
        let mut acc = 0.0;
        if ix + 1 < self.spec.n_x {
            acc += rx.up[ix] * (u[self.index(ie, ix + 1, iy)] - c);
        }
        if ix > 0 {
            acc += rx.down[ix] * (u[self.index(ie, ix - 1, iy)] - c);
        }
        if iy + 1 < self.spec.n_y {
            acc += ry.up[iy] * (u[k + 1] - c);
        }
        if iy > 0 {
            acc += ry.down[iy] * (u[k - 1] - c);
        }
        acc
    }

    /// Applies the transposed channel generator (probability inflow minus
    /// outflow) to a density.
    #[inline]
    pub fn channel_adjoint(&self, m: &[f64], ie: usize, ix: usize, iy: usize) -> f64 {
        let k = self.index(ie, ix, iy);
        let (rx, ry) = (&self.rates_x, &self.rates_y);
        let mut acc = -self.channel_out_rate(ix, iy) * m[k];
        if ix + 1 < self.spec.n_x {
            acc += rx.down[ix + 1] * m[self.index(ie, ix + 1, iy)];
        }
        if ix > 0 {
            acc += rx.up[ix - 1] * m[self.index(ie, ix - 1, iy)];
        }
        if iy + 1 < self.spec.n_y {
            acc += ry.down[iy + 1] * m[k + 1];
        }
        if iy > 0 {
            acc += ry.up[iy - 1] * m[k - 1];
        }
        acc
    }

    /// Cell-index along an axis for a coordinate, plus the linear weight of
    /// the upper neighbour; clamped to the axis.
    #[inline]
    pub fn locate(axis: &[f64], v: f64) -> (usize, f64) {
        let n = axis.len();
        let step = axis[1] - axis[0];
        let s = (v - axis[0]) / step;
        if s <= 0.0 {
            return (0, 0.0);
        }
        if s >= (n - 1) as f64 {
            return (n - 2, 1.0);
        }
        let i = s.floor() as usize;
        (i, s - i as f64)
    }

    /// Nearest node index along an axis (clamped).
    pub fn nearest(axis: &[f64], v: f64) -> usize {
        let (i, w) = Grid::locate(axis, v);
        if w > 0.5 {
            i + 1
        } else {
            i
        }
    }
}

/// A scalar field over the grid: one flat spatial array per time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub slices: Vec<Vec<f64>>,
}

impl GridField {
    pub fn zeros(grid: &Grid) -> Self {
        GridField {
            slices: vec![vec![0.0; grid.nodes()]; grid.slices()],
        }
    }

    pub fn slice(&self, n: usize) -> &[f64] {
        &self.slices[n]
    }

    /// Multilinear interpolation in `(t, E, x, y)`, clamped to the grid.
    pub fn interpolate(&self, grid: &Grid, t: f64, e: f64, h: [f64; 2]) -> f64 {
        let (it, wt) = Grid::locate(&grid.times, t);
        let a = Self::spatial(grid, &self.slices[it], e, h);
        if wt == 0.0 {
            return a;
        }
        let b = Self::spatial(grid, &self.slices[it + 1], e, h);
        (1.0 - wt) * a + wt * b
    }

    fn spatial(grid: &Grid, u: &[f64], e: f64, h: [f64; 2]) -> f64 {
        let (ie, we) = Grid::locate(&grid.energy, e);
        let (ix, wx) = Grid::locate(&grid.x, h[0]);
        let (iy, wy) = Grid::locate(&grid.y, h[1]);
        let mut acc = 0.0;
        for (de, fe) in [(0, 1.0 - we), (1, we)] {
            if fe == 0.0 {
                continue;
            }
            for (dx, fx) in [(0, 1.0 - wx), (1, wx)] {
                if fx == 0.0 {
                    continue;
                }
                for (dy, fy) in [(0, 1.0 - wy), (1, wy)] {
                    if fy == 0.0 {
                        continue;
                    }
                    acc += fe * fx * fy * u[grid.index(ie + de, ix + dx, iy + dy)];
                }
            }
        }
        acc
    }
}
