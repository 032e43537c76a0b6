//! Battery drain and Ornstein–Uhlenbeck channel dynamics of one player.
//!
//! The state is `(E, h)` with `dE = −p dt` (absorbing at zero) and
//! `dh = ½(μ − h) dt + η dW` for a two-dimensional Wiener process `W`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One player's state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenericState {
    /// Battery energy (J).
    pub energy: f64,
    /// Channel vector `(x, y)`.
    pub h: [f64; 2],
}

impl GenericState {
    pub fn new(energy: f64, h: [f64; 2]) -> Self {
        GenericState { energy, h }
    }

    /// `|h|²`.
    #[inline]
    pub fn gain(&self) -> f64 {
        self.h[0] * self.h[0] + self.h[1] * self.h[1]
    }
}

/// Parameters of the channel process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    /// Rice component `μ`.
    pub mu: [f64; 2],
    /// Diffusion coefficient; the stationary per-component variance is `η²`.
    pub eta: f64,
}

impl OuParams {
    pub fn new(mu: [f64; 2], eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Domain(format!("eta must be finite and >= 0, got {eta}")));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::Domain("mu must be finite".into()));
        }
        Ok(OuParams { mu, eta })
    }

    /// Stationary mean gain `E|h|² = |μ|² + 2η²`.
    pub fn mean_gain(&self) -> f64 {
        self.mu[0] * self.mu[0] + self.mu[1] * self.mu[1] + 2.0 * self.eta * self.eta
    }
}

/// Euler–Maruyama step driven by two standard normal draws.
#[inline]
pub fn step_state(state: &GenericState, power: f64, dt: f64, noise: [f64; 2], ou: &OuParams) -> GenericState {
    let sd = ou.eta * dt.sqrt();
    let mut h = state.h;
    for c in 0..2 {
        h[c] += 0.5 * (ou.mu[c] - h[c]) * dt + sd * noise[c];
    }
    GenericState {
        energy: (state.energy - power * dt).max(0.0),
        h,
    }
}

/// Exact OU transition: the conditional law over `dt` is Gaussian with mean
/// `μ + (h − μ)e^{−dt/2}` and variance `η²(1 − e^{−dt})`.
#[inline]
pub fn step_state_exact(state: &GenericState, power: f64, dt: f64, noise: [f64; 2], ou: &OuParams) -> GenericState {
    let decay = (-0.5 * dt).exp();
    let sd = ou.eta * (-(-dt).exp_m1()).sqrt();
    let mut h = state.h;
    for c in 0..2 {
        h[c] = ou.mu[c] + (h[c] - ou.mu[c]) * decay + sd * noise[c];
    }
    GenericState {
        energy: (state.energy - power * dt).max(0.0),
        h,
    }
}

/// First and second moments of the channel at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuMoments {
    pub mean: [f64; 2],
    /// `E[x²]`, `E[y²]`.
    pub second_moment: [f64; 2],
}

impl OuMoments {
    pub fn variance(&self) -> [f64; 2] {
        [
            self.second_moment[0] - self.mean[0] * self.mean[0],
            self.second_moment[1] - self.mean[1] * self.mean[1],
        ]
    }
}

/// Closed-form channel moments started from `h0` at time 0.
///
/// Per component, `E[x²](t) = x0²e^{−t} + (μ² + η²)(1 − e^{−t})
/// + 2μ(x0 − μ)(e^{−t/2} − e^{−t})`.
pub fn transient_moments(h0: [f64; 2], ou: &OuParams, t: f64) -> OuMoments {
    let e1 = (-t).exp();
    let e2 = (-0.5 * t).exp();
    let mut mean = [0.0; 2];
    let mut second_moment = [0.0; 2];
    for c in 0..2 {
        let (m, x0) = (ou.mu[c], h0[c]);
        mean[c] = m * (1.0 - e2) + x0 * e2;
        second_moment[c] = x0 * x0 * e1 + (m * m + ou.eta * ou.eta) * (1.0 - e1) + 2.0 * m * (x0 - m) * (e2 - e1);
    }
    OuMoments { mean, second_moment }
}

/// Stationary channel density, a product of `N(μ_c, η²)` marginals.
pub fn stationary_density(ou: &OuParams, h: [f64; 2]) -> Result<f64> {
    if !(ou.eta > 0.0) {
        return Err(Error::Domain("stationary density is degenerate for eta = 0".into()));
    }
    let v = ou.eta * ou.eta;
    let d2 = (h[0] - ou.mu[0]).powi(2) + (h[1] - ou.mu[1]).powi(2);
    Ok((-d2 / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v))
}

/// Reproducible per-path generator: one ChaCha stream per path id.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn normal_pair<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

/// Draws a channel from the stationary law.
pub fn sample_stationary<R: Rng + ?Sized>(ou: &OuParams, rng: &mut R) -> [f64; 2] {
    let z = normal_pair(rng);
    [ou.mu[0] + ou.eta * z[0], ou.mu[1] + ou.eta * z[1]]
}

/// How the channel of each path is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialChannel {
    Fixed([f64; 2]),
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stepper {
    EulerMaruyama,
    Exact,
}

/// A batch of independent single-player paths under constant power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ensemble {
    pub paths: usize,
    pub dt: f64,
    pub steps: usize,
    pub power: f64,
    pub energy: f64,
    pub initial: InitialChannel,
    pub stepper: Stepper,
}

impl Ensemble {
    fn start<R: Rng>(&self, ou: &OuParams, rng: &mut R) -> GenericState {
        let h = match self.initial {
            InitialChannel::Fixed(h) => h,
            InitialChannel::Stationary => sample_stationary(ou, rng),
        };
        GenericState::new(self.energy, h)
    }

    fn advance<R: Rng>(&self, s: &GenericState, ou: &OuParams, rng: &mut R) -> GenericState {
        let z = normal_pair(rng);
        match self.stepper {
            Stepper::EulerMaruyama => step_state(s, self.power, self.dt, z, ou),
            Stepper::Exact => step_state_exact(s, self.power, self.dt, z, ou),
        }
    }

    /// Final states of every path, indexed by path id.
    pub fn terminal_states(&self, ou: &OuParams, seed: u64) -> Vec<GenericState> {
        (0..self.paths)
            .into_par_iter()
            .map(|id| {
                let mut rng = path_rng(seed, id as u64);
                let mut s = self.start(ou, &mut rng);
                for _ in 0..self.steps {
                    s = self.advance(&s, ou, &mut rng);
                }
                s
            })
            .collect()
    }

    /// Sampled path snapshots `(t, path_id, state)` every `record_every`
    /// steps, including `t = 0` and the final step.
    pub fn record(&self, ou: &OuParams, seed: u64, record_every: usize) -> Vec<(f64, usize, GenericState)> {
        let every = record_every.max(1);
        let per_path: Vec<Vec<(f64, usize, GenericState)>> = (0..self.paths)
            .into_par_iter()
            .map(|id| {
                let mut rng = path_rng(seed, id as u64);
                let mut s = self.start(ou, &mut rng);
                let mut out = vec![(0.0, id, s)];
                for n in 1..=self.steps {
                    s = self.advance(&s, ou, &mut rng);
                    if n % every == 0 || n == self.steps {
                        out.push((n as f64 * self.dt, id, s));
                    }
                }
                out
            })
            .collect();
        let mut rows: Vec<_> = per_path.into_iter().flatten().collect();
        // Time-major order; stable so path ids stay ascending within a time.
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        rows
    }
}

/// Sample statistics of an ensemble's channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 2],
    pub variance: [f64; 2],
    /// Standard error of each component mean.
    pub stderr: [f64; 2],
    pub mean_gain: f64,
}

impl ChannelStats {
    pub fn from_states(states: &[GenericState]) -> Self {
        let n = states.len() as f64;
        let mut mean = [0.0; 2];
        let mut mean_gain = 0.0;
        for s in states {
            mean[0] += s.h[0];
            mean[1] += s.h[1];
            mean_gain += s.gain();
        }
        mean[0] /= n;
        mean[1] /= n;
        mean_gain /= n;
        let mut variance = [0.0; 2];
        for s in states {
            variance[0] += (s.h[0] - mean[0]).powi(2);
            variance[1] += (s.h[1] - mean[1]).powi(2);
        }
        variance[0] /= n - 1.0;
        variance[1] /= n - 1.0;
        ChannelStats {
            mean,
            variance,
            stderr: [(variance[0] / n).sqrt(), (variance[1] / n).sqrt()],
            mean_gain,
        }
    }

    /// `E|h|² − |E h|²`.
    pub fn total_variance(&self) -> f64 {
        self.mean_gain - self.mean[0] * self.mean[0] - self.mean[1] * self.mean[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou() -> OuParams {
        OuParams::new([1.0, 0.0], 0.5).unwrap()
    }

    #[test]
    fn drift_fixed_point_without_noise() {
        let o = OuParams::new([0.7, -0.2], 0.0).unwrap();
        let s = GenericState::new(3.0, o.mu);
        assert_eq!(step_state(&s, 0.0, 0.01, [1.3, -0.4], &o), s);
    }

    #[test]
    fn linear_drain_then_floor() {
        let o = OuParams::new([0.0, 0.0], 0.0).unwrap();
        let mut s = GenericState::new(1.0, [0.0, 0.0]);
        for n in 1..=5 {
            s = step_state(&s, 0.5, 0.1, [0.0, 0.0], &o);
            assert!((s.energy - (1.0 - 0.05 * n as f64)).abs() < 1e-12);
        }
        for _ in 0..100 {
            s = step_state(&s, 0.5, 0.1, [0.0, 0.0], &o);
        }
        assert_eq!(s.energy, 0.0);
    }

    #[test]
    fn moments_at_zero_and_infinity() {
        let o = ou();
        let m = transient_moments([0.3, -0.4], &o, 0.0);
        assert_eq!(m.mean, [0.3, -0.4]);
        assert!((m.second_moment[0] - 0.09).abs() < 1e-15);
        assert!((m.second_moment[1] - 0.16).abs() < 1e-15);
        let m = transient_moments([0.3, -0.4], &o, 200.0);
        assert!((m.mean[0] - 1.0).abs() < 1e-15 && m.mean[1].abs() < 1e-15);
        assert!((m.second_moment[0] - 1.25).abs() < 1e-14);
        assert!((m.second_moment[1] - 0.25).abs() < 1e-14);
        assert!((m.second_moment[0] + m.second_moment[1] - o.mean_gain()).abs() < 1e-14);
    }

    #[test]
    fn second_moment_solves_its_ode() {
        // d/dt E[x²] = −E[x²] + μ E[x] + η²
        let o = ou();
        let h0 = [-0.6, 0.9];
        for &t in &[0.1, 1.0, 3.0] {
            let dt = 1e-5;
            let a = transient_moments(h0, &o, t - dt);
            let b = transient_moments(h0, &o, t + dt);
            let m = transient_moments(h0, &o, t);
            for c in 0..2 {
                let lhs = (b.second_moment[c] - a.second_moment[c]) / (2.0 * dt);
                let rhs = -m.second_moment[c] + o.mu[c] * m.mean[c] + o.eta * o.eta;
                assert!((lhs - rhs).abs() < 1e-8, "t={t} c={c}");
            }
        }
    }

    #[test]
    fn stationary_density_values() {
        let o = OuParams::new([0.5, -1.0], 1.0).unwrap();
        let peak = stationary_density(&o, o.mu).unwrap();
        assert!((peak - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        let at1 = stationary_density(&o, [1.5, -1.0]).unwrap();
        assert!((at1 - (-0.5f64).exp() / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        let d = [0.3, -0.7];
        let plus = stationary_density(&o, [o.mu[0] + d[0], o.mu[1] + d[1]]).unwrap();
        let minus = stationary_density(&o, [o.mu[0] - d[0], o.mu[1] - d[1]]).unwrap();
        assert_eq!(plus, minus);
        assert!(stationary_density(&OuParams::new([0.0, 0.0], 0.0).unwrap(), [0.0, 0.0]).is_err());
    }

    #[test]
    fn gaussian_solves_stationary_kolmogorov_equation() {
        // 0 = ½ m − ½(μ − x) m' + (η²/2) m''
        let (mu, eta) = (0.8, 0.6);
        let v = eta * eta;
        for i in 0..100 {
            let x = mu - 4.0 * eta + 8.0 * eta * i as f64 / 99.0;
            let m = (-(x - mu).powi(2) / (2.0 * v)).exp() / (eta * (2.0 * std::f64::consts::PI).sqrt());
            let m1 = -(x - mu) / v * m;
            let m2 = ((x - mu).powi(2) / (v * v) - 1.0 / v) * m;
            let r = 0.5 * m - 0.5 * (mu - x) * m1 + 0.5 * v * m2;
            assert!(r.abs() < 1e-8);
        }
    }

    #[test]
    fn energy_never_increases_or_goes_negative() {
        let ens = Ensemble {
            paths: 50,
            dt: 0.01,
            steps: 300,
            power: 0.7,
            energy: 1.0,
            initial: InitialChannel::Stationary,
            stepper: Stepper::EulerMaruyama,
        };
        let rows = ens.record(&ou(), 9, 1);
        let mut last = vec![f64::INFINITY; 50];
        for (_, id, s) in rows {
            assert!(s.energy >= 0.0 && s.energy <= last[id]);
            last[id] = s.energy;
        }
    }

    #[test]
    fn ensembles_are_seed_deterministic() {
        let ens = Ensemble {
            paths: 64,
            dt: 0.01,
            steps: 50,
            power: 0.0,
            energy: 1.0,
            initial: InitialChannel::Fixed([0.0, 0.0]),
            stepper: Stepper::Exact,
        };
        assert_eq!(ens.terminal_states(&ou(), 3), ens.terminal_states(&ou(), 3));
        assert_ne!(ens.terminal_states(&ou(), 3), ens.terminal_states(&ou(), 4));
    }
}
