use serde::{Deserialize, Serialize};

use crate::dynamics::{GenericState, OuParams};
use crate::efficiency::Efficiency;
use crate::error::{Error, Result};

/// Utility collected at the end of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TerminalUtility {
    #[default]
    Zero,
    /// `q(X) = weight · E`, rewarding residual energy.
    LinearEnergy { weight: f64 },
}

impl TerminalUtility {
    #[inline]
    pub fn eval(&self, energy: f64) -> f64 {
        match *self {
            TerminalUtility::Zero => 0.0,
            TerminalUtility::LinearEnergy { weight } => weight * energy,
        }
    }
}

/// Scenario constants shared by every solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    /// Number of players `K`.
    pub players: usize,
    /// Data rate `R` (bit/s).
    pub rate: f64,
    /// Noise power `σ²` (W).
    pub sigma2: f64,
    pub ou: OuParams,
    /// Power cap (W).
    pub p_max: f64,
    /// Horizon start `T` (s).
    pub t0: f64,
    /// Horizon end `T'` (s).
    pub t1: f64,
    pub terminal: TerminalUtility,
    pub efficiency: Efficiency,
    /// Initial battery energy `E₀` (J).
    pub initial_energy: f64,
}

impl GameParams {
    /// Reference scenario used by the CLI defaults and the regression
    /// fixtures: exponential efficiency with `a = 1`, Rician channel
    /// `μ = (1, 0)`, `η = 0.5`, unit noise and rate, `P_max = 1` W over
    /// `[0, 1.5]` s with `E₀ = 3` J and no terminal reward.
    pub fn benchmark() -> Self {
        GameParams {
            players: 100,
            rate: 1.0,
            sigma2: 1.0,
            ou: OuParams {
                mu: [1.0, 0.0],
                eta: 0.5,
            },
            p_max: 1.0,
            t0: 0.0,
            t1: 1.5,
            terminal: TerminalUtility::Zero,
            efficiency: Efficiency::ExponentialRatio { a: 1.0 },
            initial_energy: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.efficiency.validate()?;
        let positive = [("sigma2", self.sigma2), ("p_max", self.p_max)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(Error::Config(format!("rate must be >= 0, got {}", self.rate)));
        }
        if self.players == 0 {
            return Err(Error::Config("players must be >= 1".into()));
        }
        if !(self.t1 > self.t0) {
            return Err(Error::Config(format!(
                "horizon end {} must exceed start {}",
                self.t1, self.t0
            )));
        }
        if !(self.initial_energy >= 0.0 && self.initial_energy.is_finite()) {
            return Err(Error::Config("initial_energy must be >= 0".into()));
        }
        OuParams::new(self.ou.mu, self.ou.eta).map(|_| ())
    }

    pub fn horizon(&self) -> f64 {
        self.t1 - self.t0
    }

    /// `q(X(T'))`.
    pub fn terminal_utility(&self, state: &GenericState) -> f64 {
        self.terminal.eval(state.energy)
    }
}

/// Interference seen by a generic player over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub enum InterferencePath {
    Constant(f64),
    /// Values at `t0 + n dt`, linearly interpolated and clamped at the ends.
    Sampled {
        t0: f64,
        dt: f64,
        values: Vec<f64>,
    },
}

impl InterferencePath {
    /// Path through `values` at the time slices of a uniform axis.
    pub fn sampled(times: &[f64], values: Vec<f64>) -> Self {
        InterferencePath::Sampled {
            t0: times[0],
            dt: times[1] - times[0],
            values,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            InterferencePath::Constant(v) => *v,
            InterferencePath::Sampled { t0, dt, values } => {
                let s = ((t - t0) / dt).max(0.0);
                let n = values.len() - 1;
                // Sample times reconstructed from a grid land within
                // round-off of an integer; return the stored value bitwise.
                let r = s.round();
                if (s - r).abs() < 1e-9 {
                    return values[(r as usize).min(n)];
                }
                let i = (s.floor() as usize).min(n);
                if i == n {
                    return values[n];
                }
                let w = s - i as f64;
                if w == 0.0 {
                    values[i]
                } else {
                    (1.0 - w) * values[i] + w * values[i + 1]
                }
            }
        }
    }

    pub fn sup_distance(&self, other: &InterferencePath, times: &[f64]) -> f64 {
        times
            .iter()
            .map(|&t| (self.at(t) - other.at(t)).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_path_interpolates_and_clamps() {
        let p = InterferencePath::Sampled {
            t0: 1.0,
            dt: 0.5,
            values: vec![0.0, 1.0, 3.0],
        };
        assert_eq!(p.at(0.0), 0.0);
        assert_eq!(p.at(1.5), 1.0);
        assert_eq!(p.at(1.75), 2.0);
        assert_eq!(p.at(9.0), 3.0);
    }

    #[test]
    fn terminal_utility_linear() {
        assert_eq!(TerminalUtility::LinearEnergy { weight: 0.5 }.eval(3.0), 1.5);
        assert_eq!(TerminalUtility::Zero.eval(3.0), 0.0);
    }
}
