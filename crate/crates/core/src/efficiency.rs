//! Packet-success-rate (efficiency) functions and the scalar problems built
//! on them.
//!
//! An efficiency function `f` maps an SINR `γ ≥ 0` to a success
//! probability in `[0, 1]`. Both shipped families are sigmoidal: convex
//! up to an inflection point, concave after it, with `f(0) = f'(0) = 0`.
//!
//! The per-node optimization that every controller in this crate solves is
//!
//! ```text
//! max_{p ∈ [0, p_max]}  R f(c p) / p − p v_E
//! ```
//!
//! where `c = |h|² / (σ² + I)` is the effective channel gain and `v_E` the
//! marginal value of stored energy. Writing `γ = c p` and
//! `θ = v_E / (R c²)` this becomes `R c · max_γ { f(γ)/γ − θ γ }`, whose
//! interior stationary points solve `(γ f'(γ) − f(γ)) / γ² = θ`.
//! [`EfficiencyProfile`] precomputes the constants needed to answer that
//! question quickly: `β*` (the root at `θ = 0`), the shutdown threshold
//! `θ_max`, and the maximum curvature used by the off-probability bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{newton_bisect, scan_then_golden};

/// Margin below which [`existence_check`] flags a grid point.
pub const EXISTENCE_FLAG: f64 = 1e-8;

const SCAN_POINTS: usize = 2048;
const SCAN_SPAN: f64 = 1e-6;

/// A sigmoidal efficiency function family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Efficiency {
    /// `f(x) = exp(-a / x)`, the information-theoretic choice.
    ExponentialRatio { a: f64 },
    /// `f(x) = (1 - exp(-x))^M`.
    CumulativeSigmoid { m: u32 },
}

impl Efficiency {
    pub fn exponential(a: f64) -> Result<Self> {
        let e = Efficiency::ExponentialRatio { a };
        e.validate()?;
        Ok(e)
    }

    pub fn sigmoid(m: u32) -> Result<Self> {
        let e = Efficiency::CumulativeSigmoid { m };
        e.validate()?;
        Ok(e)
    }

    /// Rejects parameters that leave the sigmoidal class. `M = 1` gives a
    /// concave `f` with `f'(0) = 1`, for which the zero-power limit of the
    /// utility is not zero.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Efficiency::ExponentialRatio { a } if !(a.is_finite() && a > 0.0) => Err(Error::Domain(format!(
                "exponential-ratio parameter a must be positive, got {a}"
            ))),
            Efficiency::CumulativeSigmoid { m } if m < 2 => Err(Error::Domain(format!(
                "cumulative-sigmoid order M must be >= 2 (f'(0) = 0 required), got {m}"
            ))),
            _ => Ok(()),
        }
    }

    /// `f(x)` for `x ≥ 0`; non-positive inputs map to `f(0) = 0`.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            Efficiency::ExponentialRatio { a } => (-a / x).exp(),
            Efficiency::CumulativeSigmoid { m } => {
                // exp(M ln u) keeps ~1 ulp where u^M via powi loses ~M ulp.
                let ln_u = if x > std::f64::consts::LN_2 {
                    (-(-x).exp()).ln_1p()
                } else {
                    (-(-x).exp_m1()).ln()
                };
                (m as f64 * ln_u).exp()
            }
        }
    }

    /// `f'(x)`.
    #[inline]
    pub fn d1(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            Efficiency::ExponentialRatio { a } => {
                let s = a / x;
                if s > 1e3 {
                    return 0.0;
                }
                s * s / a * (-s).exp()
            }
            Efficiency::CumulativeSigmoid { m } => {
                let e = (-x).exp();
                let u = -(-x).exp_m1();
                m as f64 * u.powi(m as i32 - 1) * e
            }
        }
    }

    /// `f''(x)`.
    #[inline]
    pub fn d2(&self, x: f64) -> f64 {
        match *self {
            Efficiency::ExponentialRatio { a } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let s = a / x;
                if s > 1e3 {
                    return 0.0;
                }
                (s * s * s * (s - 2.0)) / (a * a) * (-s).exp()
            }
            Efficiency::CumulativeSigmoid { m } => {
                let x = x.max(0.0);
                let e = (-x).exp();
                let u = -(-x).exp_m1();
                let mf = m as f64;
                mf * u.powi(m as i32 - 2) * e * ((mf - 1.0) * e - u)
            }
        }
    }

    /// Checked evaluation of `f`.
    pub fn eval(&self, gamma: f64) -> Result<f64> {
        check_gamma(gamma)?;
        Ok(self.value(gamma))
    }

    /// Checked evaluation of `(f, f', f'')`.
    pub fn eval_with_derivatives(&self, gamma: f64) -> Result<[f64; 3]> {
        check_gamma(gamma)?;
        Ok([self.value(gamma), self.d1(gamma), self.d2(gamma)])
    }

    /// The inflection point `x_I` where `f''` changes sign.
    pub fn inflection(&self) -> f64 {
        match *self {
            Efficiency::ExponentialRatio { a } => 0.5 * a,
            Efficiency::CumulativeSigmoid { m } => (m as f64).ln(),
        }
    }

    /// `(γ f'(γ) − f(γ)) / γ²`, the marginal condition whose level sets give
    /// the interior optimum for a given `θ`.
    #[inline]
    pub fn marginal(&self, gamma: f64) -> f64 {
        (gamma * self.d1(gamma) - self.value(gamma)) / (gamma * gamma)
    }

    pub fn profile(&self) -> Result<EfficiencyProfile> {
        EfficiencyProfile::new(*self)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_nan() || gamma < 0.0 {
        Err(Error::Domain(format!("SINR must be non-negative, got {gamma}")))
    } else {
        Ok(())
    }
}

/// Shutdown threshold of the per-node problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaMax {
    /// Smallest `θ` at which zero power is the global maximizer:
    /// `max_γ f(γ)/γ²`.
    pub value: f64,
    /// The SINR attaining it; `γ*(θ) → argmax` as `θ ↑ value`.
    pub argmax: f64,
    /// `sup_γ (γ f' − f)/γ²`, the largest `θ` with an interior stationary
    /// point. Always `≥ value`.
    pub marginal_sup: f64,
    pub marginal_argmax: f64,
}

/// Result of [`EfficiencyProfile::hamiltonian`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianValue {
    /// `sup_p { R f(c p)/p − p v_E }` (utility per second).
    pub value: f64,
    /// The maximizing power (W).
    pub power: f64,
}

/// An efficiency function with its derived constants cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyProfile {
    spec: Efficiency,
    beta_star: f64,
    theta: ThetaMax,
    max_d2: f64,
    argmax_d2: f64,
}

impl EfficiencyProfile {
    pub fn new(spec: Efficiency) -> Result<Self> {
        spec.validate()?;
        let beta_star = solve_beta_star(&spec)?;

        let lo = beta_star * SCAN_SPAN;
        let (argmax, value) = scan_then_golden(|g| spec.value(g) / (g * g), lo, beta_star, SCAN_POINTS);
        let (marginal_argmax, marginal_sup) = scan_then_golden(|g| spec.marginal(g), lo, beta_star, SCAN_POINTS);
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::RootFinding(format!(
                "shutdown threshold not positive for {spec:?}: {value}"
            )));
        }

        let xi = spec.inflection();
        let (mut argmax_d2, mut max_d2) = scan_then_golden(|x| spec.d2(x), xi * SCAN_SPAN, xi, SCAN_POINTS);
        if spec.d2(0.0) > max_d2 {
            argmax_d2 = 0.0;
            max_d2 = spec.d2(0.0);
        }

        Ok(EfficiencyProfile {
            spec,
            beta_star,
            theta: ThetaMax {
                value,
                argmax,
                marginal_sup: marginal_sup.max(value),
                marginal_argmax,
            },
            max_d2,
            argmax_d2,
        })
    }

    pub fn spec(&self) -> &Efficiency {
        &self.spec
    }

    pub fn beta_star(&self) -> f64 {
        self.beta_star
    }

    pub fn theta_max(&self) -> ThetaMax {
        self.theta
    }

    /// `(max f'', argmax f'')`.
    pub fn max_curvature(&self) -> (f64, f64) {
        (self.max_d2, self.argmax_d2)
    }

    /// Optimal SINR for the normalized shadow price `θ`: the root of
    /// `(γ f' − f)/γ² = θ` above the threshold SINR, or 0 once `θ ≥ θ_max`.
    pub fn gamma_star(&self, theta: f64) -> f64 {
        if theta.is_nan() || theta <= 0.0 {
            return self.beta_star;
        }
        if theta >= self.theta.value {
            return 0.0;
        }
        let spec = self.spec;
        let lo = self.theta.argmax;
        let hi = self.beta_star;
        let residual = |g: f64| {
            let m = spec.marginal(g);
            (m - theta, (spec.d2(g) - 2.0 * m) / g)
        };
        if residual(lo).0 <= 0.0 {
            return lo;
        }
        // G(lo) > θ > 0 = G(hi): the bracket is always valid here.
        newton_bisect(residual, lo, hi).unwrap_or(lo)
    }

    /// Pointwise Hamiltonian `sup_{p∈[0,p_max]} { R f(c p)/p − p v_E }`.
    ///
    /// Negative shadow prices are clamped to zero. The capped interior
    /// candidate is kept only if it beats switching off.
    pub fn hamiltonian(&self, c: f64, v_e: f64, rate: f64, p_max: f64) -> HamiltonianValue {
        const OFF: HamiltonianValue = HamiltonianValue { value: 0.0, power: 0.0 };
        if !(c > 0.0 && rate > 0.0 && p_max > 0.0) {
            return OFF;
        }
        let v_e = v_e.max(0.0);
        let gamma = self.gamma_star(v_e / (rate * c * c));
        if gamma <= 0.0 {
            return OFF;
        }
        let power = (gamma / c).min(p_max);
        let value = rate * self.spec.value(c * power) / power - power * v_e;
        if value > 0.0 {
            HamiltonianValue { value, power }
        } else {
            OFF
        }
    }
}

fn solve_beta_star(spec: &Efficiency) -> Result<f64> {
    let g = |x: f64| (x * spec.d1(x) - spec.value(x), x * spec.d2(x));
    let xi = spec.inflection();
    if g(xi).0 <= 0.0 {
        return Err(Error::RootFinding(format!(
            "x f' - f is not positive at the inflection point {xi} of {spec:?}"
        )));
    }
    let mut hi = 2.0 * xi.max(f64::MIN_POSITIVE);
    let mut doublings = 0;
    while g(hi).0 >= 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::RootFinding(format!("could not bracket beta* for {spec:?}")));
        }
    }
    newton_bisect(g, xi, hi)
}

/// Checked `f(γ)`.
pub fn eval_f(spec: &Efficiency, gamma: f64) -> Result<f64> {
    spec.eval(gamma)
}

/// The root `β*` of `x f'(x) − f(x) = 0`.
pub fn beta_star(spec: &Efficiency) -> Result<f64> {
    spec.validate()?;
    solve_beta_star(spec)
}

pub fn theta_max(spec: &Efficiency) -> Result<ThetaMax> {
    Ok(spec.profile()?.theta_max())
}

pub fn gamma_star(spec: &Efficiency, theta: f64) -> Result<f64> {
    Ok(spec.profile()?.gamma_star(theta))
}

pub fn hamiltonian(spec: &Efficiency, c: f64, v_e: f64, rate: f64, p_max: f64) -> Result<HamiltonianValue> {
    Ok(spec.profile()?.hamiltonian(c, v_e, rate, p_max))
}

/// One row of an [`ExistenceReport`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExistencePoint {
    pub theta: f64,
    pub gamma: f64,
    /// `|2θ − f''(γ)|`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExistenceReport {
    pub points: Vec<ExistencePoint>,
    pub min_margin: f64,
    /// Indices of points with margin below [`EXISTENCE_FLAG`].
    pub flagged: Vec<usize>,
}

impl ExistenceReport {
    pub fn holds(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Evaluates the smoothness margin `|2θ₀ − f''(γ₀)|` along a `θ` grid,
/// where `γ₀ = γ*(θ₀)`.
pub fn existence_check(profile: &EfficiencyProfile, theta_grid: &[f64]) -> Result<ExistenceReport> {
    let tmax = profile.theta_max().value;
    let mut points = Vec::with_capacity(theta_grid.len());
    for &theta in theta_grid {
        if !(theta >= 0.0 && theta < tmax) {
            return Err(Error::Domain(format!("theta grid point {theta} outside [0, {tmax})")));
        }
        let gamma = profile.gamma_star(theta);
        let margin = (2.0 * theta - profile.spec().d2(gamma)).abs();
        points.push(ExistencePoint { theta, gamma, margin });
    }
    let min_margin = points.iter().map(|p| p.margin).fold(f64::INFINITY, f64::min);
    let flagged = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.margin < EXISTENCE_FLAG)
        .map(|(i, _)| i)
        .collect();
    Ok(ExistenceReport {
        points,
        min_margin,
        flagged,
    })
}
