//! The one-shot power control game on a multiple access channel.

use crate::efficiency::{Efficiency, EfficiencyProfile};
use crate::error::{Error, Result};
use crate::scalar::golden_max;

/// A power profile together with the channel it is played on.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticProfile {
    /// Transmit powers (W).
    pub powers: Vec<f64>,
    /// Channel gains `|h_i|²`.
    pub gains: Vec<f64>,
    /// Noise power (W).
    pub sigma2: f64,
    /// Data rate (bit/s).
    pub rate: f64,
}

impl StaticProfile {
    pub fn new(powers: Vec<f64>, gains: Vec<f64>, sigma2: f64, rate: f64) -> Result<Self> {
        if powers.len() != gains.len() || powers.is_empty() {
            return Err(Error::Domain(format!(
                "{} powers for {} gains",
                powers.len(),
                gains.len()
            )));
        }
        if powers.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::Domain("powers must be finite and non-negative".into()));
        }
        if gains.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::Domain("channel gains must be positive".into()));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::Domain(format!("noise power must be positive, got {sigma2}")));
        }
        Ok(StaticProfile {
            powers,
            gains,
            sigma2,
            rate,
        })
    }

    pub fn players(&self) -> usize {
        self.powers.len()
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < self.players() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "player index {i} out of range for K = {}",
                self.players()
            )))
        }
    }

    /// Received interference plus noise seen by player `i`.
    fn noise_plus_interference(&self, i: usize) -> f64 {
        let others: f64 = self
            .powers
            .iter()
            .zip(&self.gains)
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, (p, g))| p * g)
            .sum();
        others + self.sigma2
    }

    /// SINR `p_i|h_i|² / (Σ_{j≠i} p_j|h_j|² + σ²)`.
    pub fn sinr(&self, i: usize) -> Result<f64> {
        self.check_index(i)?;
        Ok(self.powers[i] * self.gains[i] / self.noise_plus_interference(i))
    }

    /// Energy efficiency `R f(γ_i) / p_i` in bit/J; zero at zero power.
    pub fn utility(&self, i: usize, spec: &Efficiency) -> Result<f64> {
        let gamma = self.sinr(i)?;
        let p = self.powers[i];
        if p <= 0.0 {
            return Ok(0.0);
        }
        Ok(self.rate * spec.value(gamma) / p)
    }

    fn utility_at(&self, i: usize, p: f64, spec: &Efficiency, denom: f64) -> f64 {
        if p <= 0.0 {
            0.0
        } else {
            self.rate * spec.value(p * self.gains[i] / denom) / p
        }
    }
}

/// Equilibrium powers of the static game.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticEquilibrium {
    pub powers: Vec<f64>,
    pub beta_star: f64,
    /// Set when some equilibrium power exceeds the supplied cap. The powers
    /// are reported unprojected.
    pub exceeds_cap: bool,
}

/// Closed-form Nash equilibrium
/// `p_i* = (σ²/|h_i|²) β* / (1 − (K−1)β*)`.
pub fn static_ne(
    gains: &[f64],
    sigma2: f64,
    profile: &EfficiencyProfile,
    p_max: Option<f64>,
) -> Result<StaticEquilibrium> {
    let k = gains.len();
    if k == 0 {
        return Err(Error::Domain("at least one player required".into()));
    }
    if gains.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(Error::Domain("channel gains must be positive".into()));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("noise power must be positive, got {sigma2}")));
    }
    let beta = profile.beta_star();
    let load = (k - 1) as f64 * beta;
    if load >= 1.0 {
        return Err(Error::Infeasible { k, load });
    }
    let scale = beta / (1.0 - load);
    let powers: Vec<f64> = gains.iter().map(|g| sigma2 / g * scale).collect();
    let exceeds_cap = p_max.is_some_and(|cap| powers.iter().any(|p| *p > cap));
    Ok(StaticEquilibrium {
        powers,
        beta_star: beta,
        exceeds_cap,
    })
}

/// Best response of player `i` to the others' powers: argmax of the
/// utility over a uniform grid on `[0, p_max]`, refined by golden-section
/// search on the cells adjacent to the grid winner.
pub fn best_response(
    profile: &StaticProfile,
    i: usize,
    spec: &Efficiency,
    p_max: f64,
    grid_size: usize,
) -> Result<f64> {
    profile.check_index(i)?;
    if grid_size < 1000 {
        return Err(Error::Domain(format!("grid_size must be >= 1000, got {grid_size}")));
    }
    if !(p_max > 0.0) {
        return Err(Error::Domain(format!("p_max must be positive, got {p_max}")));
    }
    let denom = profile.noise_plus_interference(i);
    let step = p_max / (grid_size - 1) as f64;
    let (best_k, _) = (0..grid_size)
        .map(|k| (k, profile.utility_at(i, k as f64 * step, spec, denom)))
        .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
    let lo = best_k.saturating_sub(1) as f64 * step;
    let hi = ((best_k + 1).min(grid_size - 1)) as f64 * step;
    let (p, _) = golden_max(|p| profile.utility_at(i, p, spec, denom), lo, hi, 1e-12 * p_max);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(powers: &[f64], gains: &[f64], sigma2: f64) -> StaticProfile {
        StaticProfile::new(powers.to_vec(), gains.to_vec(), sigma2, 1.0).unwrap()
    }

    #[test]
    fn sinr_examples() {
        assert_eq!(profile(&[2.0], &[3.0], 6.0).sinr(0).unwrap(), 1.0);
        assert_eq!(profile(&[0.0, 1.0], &[1.0, 1.0], 1.0).sinr(0).unwrap(), 0.0);
        let p = profile(&[1.0, 1.0], &[1.0, 1.0], 1.0);
        assert_eq!(p.sinr(0).unwrap(), 0.5);
        assert_eq!(p.sinr(1).unwrap(), 0.5);
        assert!(matches!(p.sinr(2), Err(Error::Domain(_))));
    }

    #[test]
    fn utility_examples() {
        let spec = Efficiency::exponential(1.0).unwrap();
        assert_eq!(profile(&[0.0], &[1.0], 1.0).utility(0, &spec).unwrap(), 0.0);
        let u = profile(&[1.0], &[1.0], 1.0).utility(0, &spec).unwrap();
        assert!((u - (-1.0f64).exp()).abs() < 1e-16);
        // R = 1e4, symmetric pair: f(0.5) = e^{-2}.
        let p = StaticProfile::new(vec![1.0, 1.0], vec![1.0, 1.0], 1.0, 1e4).unwrap();
        assert!((p.utility(0, &spec).unwrap() - 1e4 * (-2.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn profile_validation() {
        assert!(StaticProfile::new(vec![1.0], vec![0.0], 1.0, 1.0).is_err());
        assert!(StaticProfile::new(vec![-1.0], vec![1.0], 1.0, 1.0).is_err());
        assert!(StaticProfile::new(vec![1.0], vec![1.0], 0.0, 1.0).is_err());
        assert!(StaticProfile::new(vec![1.0, 2.0], vec![1.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn ne_single_player() {
        let prof = Efficiency::exponential(1.5).unwrap().profile().unwrap();
        let ne = static_ne(&[2.0], 3.0, &prof, None).unwrap();
        assert!((ne.powers[0] - 3.0 * 1.5 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ne_two_players_closed_form() {
        let prof = Efficiency::exponential(0.4).unwrap().profile().unwrap();
        let ne = static_ne(&[1.0, 2.0], 1.0, &prof, None).unwrap();
        assert!((ne.powers[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((ne.powers[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ne_infeasible_and_cap_flag() {
        let prof = Efficiency::exponential(1.0).unwrap().profile().unwrap();
        assert!(matches!(
            static_ne(&[1.0, 1.0], 1.0, &prof, None),
            Err(Error::Infeasible { k: 2, .. })
        ));
        let prof = Efficiency::exponential(0.4).unwrap().profile().unwrap();
        assert!(static_ne(&[1.0, 2.0], 1.0, &prof, Some(0.5)).unwrap().exceeds_cap);
        assert!(!static_ne(&[1.0, 2.0], 1.0, &prof, Some(1.0)).unwrap().exceeds_cap);
    }

    #[test]
    fn best_response_interference_free_reduction() {
        let spec = Efficiency::exponential(1.0).unwrap();
        let solo = best_response(&profile(&[0.3], &[2.0], 1.0), 0, &spec, 5.0, 2000).unwrap();
        let duo = best_response(&profile(&[0.3, 0.0], &[2.0, 4.0], 1.0), 0, &spec, 5.0, 2000).unwrap();
        assert!((solo - duo).abs() < 1e-9);
        assert!((solo - 0.5).abs() < 1e-6);
    }

    #[test]
    fn best_response_halves_when_gain_doubles() {
        let spec = Efficiency::exponential(1.0).unwrap();
        let a = best_response(&profile(&[0.3, 0.4], &[1.0, 1.0], 1.0), 0, &spec, 5.0, 4000).unwrap();
        let b = best_response(&profile(&[0.3, 0.4], &[2.0, 1.0], 1.0), 0, &spec, 5.0, 4000).unwrap();
        assert!((a - 2.0 * b).abs() / a < 1e-6);
    }
}
