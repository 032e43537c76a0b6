//! Finite-K stochastic game simulation under a shared feedback policy.
//!
//! Each player owns a ChaCha stream. Powers at step `n` are evaluated with
//! the interference of step `n − 1` (zero before the first step); the
//! interference and instantaneous utilities of step `n` then use the
//! concurrent powers. The normalized interference
//! `I_i = (1/K) Σ_{j≠i} p_j |h_j|²` is formed from a sorted total so that
//! relabelling players permutes every output bitwise.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{normal_pair, path_rng, sample_stationary, step_state, GenericState};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::params::{GameParams, InterferencePath};
use crate::policy::FeedbackPolicy;

/// How the population starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialPopulation {
    /// Every player at the same state.
    Common(GenericState),
    /// Channels drawn i.i.d. from the stationary law, common energy.
    Stationary { energy: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub players: usize,
    pub dt: f64,
    pub initial: InitialPopulation,
    /// Keep a snapshot every this many steps (the first and last step are
    /// always kept).
    pub record_every: usize,
}

impl SimConfig {
    /// Number of steps covering the horizon of `params`.
    pub fn steps(&self, params: &GameParams) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "simulation dt must be positive, got {}",
                self.dt
            )));
        }
        if self.players == 0 {
            return Err(Error::Config("simulation needs at least one player".into()));
        }
        let steps = (params.horizon() / self.dt).round() as usize;
        if steps == 0 {
            return Err(Error::Config(format!(
                "dt {} exceeds the horizon {}",
                self.dt,
                params.horizon()
            )));
        }
        Ok(steps)
    }
}

/// A player's state together with its private random stream.
#[derive(Debug, Clone)]
pub struct Player {
    pub state: GenericState,
    pub rng: ChaCha8Rng,
}

/// Population at one recorded time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub states: Vec<GenericState>,
    pub powers: Vec<f64>,
    pub interference: Vec<f64>,
    /// Running utility integral accumulated before this step.
    pub running: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    /// `∫ u_i dt + q(X_i(T'))` per player.
    pub utilities: Vec<f64>,
}

/// Normalized interference for every player.
pub fn interference(powers: &[f64], gains: &[f64]) -> Vec<f64> {
    let k = powers.len() as f64;
    let terms: Vec<f64> = powers.iter().zip(gains).map(|(p, g)| p * g).collect();
    let mut sorted = terms.clone();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    terms.iter().map(|t| ((total - t) / k).max(0.0)).collect()
}

/// Players with streams `0..K` of `seed`; stationary channels are drawn from
/// each player's own stream.
pub fn initial_players(cfg: &SimConfig, params: &GameParams, seed: u64) -> Vec<Player> {
    (0..cfg.players)
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let state = match cfg.initial {
                InitialPopulation::Common(s) => s,
                InitialPopulation::Stationary { energy } => {
                    GenericState::new(energy, sample_stationary(&params.ou, &mut rng))
                }
            };
            Player { state, rng }
        })
        .collect()
}

pub fn simulate(cfg: &SimConfig, policy: &dyn FeedbackPolicy, params: &GameParams, seed: u64) -> Result<Trajectory> {
    let players = initial_players(cfg, params, seed);
    simulate_players(cfg, policy, params, players)
}

/// Runs the game from explicit players (state and stream). `cfg.players`
/// and `cfg.initial` are ignored.
pub fn simulate_players(
    cfg: &SimConfig,
    policy: &dyn FeedbackPolicy,
    params: &GameParams,
    players: Vec<Player>,
) -> Result<Trajectory> {
    let mut snapshots = Vec::new();
    let utilities = run(cfg, policy, params, players, |snap| snapshots.push(snap.clone()), true)?;
    Ok(Trajectory { snapshots, utilities })
}

/// Core loop. `observe` sees the snapshots kept by `record_every`, or every
/// step when `sparse` is false.
fn run<F>(
    cfg: &SimConfig,
    policy: &dyn FeedbackPolicy,
    params: &GameParams,
    mut players: Vec<Player>,
    mut observe: F,
    sparse: bool,
) -> Result<Vec<f64>>
where
    F: FnMut(&Snapshot),
{
    let steps = SimConfig {
        players: players.len(),
        ..*cfg
    }
    .steps(params)?;
    let dt = cfg.dt;
    let k = players.len();
    let every = cfg.record_every.max(1);
    let spec = params.efficiency;
    let mut prev_interference = vec![0.0; k];
    let mut running = vec![0.0; k];
    for n in 0..=steps {
        let t = params.t0 + n as f64 * dt;
        let powers: Vec<f64> = players
            .iter()
            .zip(&prev_interference)
            .map(|(pl, &i)| {
                if pl.state.energy <= 0.0 {
                    0.0
                } else {
                    policy.power(t, &pl.state, i).clamp(0.0, params.p_max)
                }
            })
            .collect();
        let gains: Vec<f64> = players.iter().map(|pl| pl.state.gain()).collect();
        let interf = interference(&powers, &gains);
        if !sparse || n % every == 0 || n == steps {
            observe(&Snapshot {
                step: n,
                t,
                states: players.iter().map(|p| p.state).collect(),
                powers: powers.clone(),
                interference: interf.clone(),
                running: running.clone(),
            });
        }
        if n == steps {
            break;
        }
        for i in 0..k {
            let p = powers[i];
            if p > 0.0 {
                let sinr = p * gains[i] / (params.sigma2 + interf[i]);
                running[i] += dt * params.rate * spec.value(sinr) / p;
            }
            let pl = &mut players[i];
            let z = normal_pair(&mut pl.rng);
            pl.state = step_state(&pl.state, p, dt, z, &params.ou);
        }
        prev_interference = interf;
    }
    Ok(players
        .iter()
        .zip(&running)
        .map(|(pl, r)| r + params.terminal_utility(&pl.state))
        .collect())
}

/// Normalized histogram of a population on the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    /// Mass per node, in grid index order; sums to one.
    pub mass: Vec<f64>,
    /// Players whose state lay outside the node cells and were clamped
    /// into an edge bin.
    pub out_of_range: usize,
}

pub fn empirical_measure(states: &[GenericState], grid: &Grid) -> EmpiricalMeasure {
    let mut mass = vec![0.0; grid.nodes()];
    let w = 1.0 / states.len() as f64;
    let mut out_of_range = 0;
    let outside = |axis: &[f64], v: f64| {
        let half = 0.5 * (axis[1] - axis[0]);
        v < axis[0] - half || v > axis[axis.len() - 1] + half
    };
    for s in states {
        if outside(&grid.energy, s.energy) || outside(&grid.x, s.h[0]) || outside(&grid.y, s.h[1]) {
            out_of_range += 1;
        }
        let k = grid.index(
            Grid::nearest(&grid.energy, s.energy),
            Grid::nearest(&grid.x, s.h[0]),
            Grid::nearest(&grid.y, s.h[1]),
        );
        mass[k] += w;
    }
    EmpiricalMeasure { mass, out_of_range }
}

/// Experiment layout for [`convergence_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub k_list: Vec<usize>,
    pub replications: usize,
    /// Times (absolute) at which deviations are sampled; snapped to the
    /// nearest step.
    pub probe_times: Vec<f64>,
    pub dt: f64,
    pub initial: InitialPopulation,
}

/// Statistics of `|I_i(t) − Î(t)|` pooled over players and replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub k: usize,
    pub probe_t: f64,
    pub mean_dev: f64,
    pub std_dev: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Per `K`: statistics pooled over every probe time.
    pub pooled: Vec<ConvergenceRow>,
    /// Per `K`: whether a relabelled replication reproduced the original
    /// bitwise.
    pub exchangeable: Vec<bool>,
}

impl ConvergenceReport {
    pub fn pooled_for(&self, k: usize) -> Option<&ConvergenceRow> {
        self.pooled.iter().find(|r| r.k == k)
    }
}

fn replication_seed(seed: u64, k: usize, r: usize) -> u64 {
    path_rng(seed, ((k as u64) << 32) | r as u64).next_u64()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Bitwise relabelling test: running the game from `players` permuted by
/// `perm` (state and stream move together) must permute every recorded
/// quantity by the same `perm`.
pub fn exchangeability_check(
    cfg: &SimConfig,
    policy: &dyn FeedbackPolicy,
    params: &GameParams,
    players: &[Player],
    perm: &[usize],
) -> Result<bool> {
    let base = simulate_players(cfg, policy, params, players.to_vec())?;
    let permuted: Vec<Player> = perm.iter().map(|&j| players[j].clone()).collect();
    let other = simulate_players(cfg, policy, params, permuted)?;
    let same = |a: f64, b: f64| a.to_bits() == b.to_bits();
    let same_state =
        |a: &GenericState, b: &GenericState| same(a.energy, b.energy) && same(a.h[0], b.h[0]) && same(a.h[1], b.h[1]);
    for (sa, sb) in base.snapshots.iter().zip(&other.snapshots) {
        for (i, &j) in perm.iter().enumerate() {
            if !(same_state(&sb.states[i], &sa.states[j])
                && same(sb.powers[i], sa.powers[j])
                && same(sb.interference[i], sa.interference[j])
                && same(sb.running[i], sa.running[j]))
            {
                return Ok(false);
            }
        }
    }
    Ok(perm
        .iter()
        .enumerate()
        .all(|(i, &j)| same(other.utilities[i], base.utilities[j])))
}

/// Interference deviation from a mean-field path for several population
/// sizes, plus a relabelling check per size.
pub fn convergence_report(
    policy: &dyn FeedbackPolicy,
    params: &GameParams,
    i_hat: &InterferencePath,
    experiment: &ConvergenceConfig,
    seed: u64,
) -> Result<ConvergenceReport> {
    if experiment.replications == 0 || experiment.k_list.is_empty() {
        return Err(Error::Config(
            "convergence report needs K values and replications".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut pooled = Vec::new();
    let mut exchangeable = Vec::new();
    for &k in &experiment.k_list {
        let cfg = SimConfig {
            players: k,
            dt: experiment.dt,
            initial: experiment.initial,
            record_every: 1,
        };
        let steps = cfg.steps(params)?;
        let probe_steps: Vec<usize> = experiment
            .probe_times
            .iter()
            .map(|t| (((t - params.t0) / cfg.dt).round().max(0.0) as usize).min(steps))
            .collect();
        // deviations[replication][probe] = |I_i − Î| for every player
        let per_rep: Vec<Vec<Vec<f64>>> = (0..experiment.replications)
            .into_par_iter()
            .map(|r| {
                let players = initial_players(&cfg, params, replication_seed(seed, k, r));
                let mut out = vec![Vec::new(); probe_steps.len()];
                run(
                    &cfg,
                    policy,
                    params,
                    players,
                    |snap| {
                        for (j, &s) in probe_steps.iter().enumerate() {
                            if s == snap.step {
                                let target = i_hat.at(snap.t);
                                out[j] = snap.interference.iter().map(|i| (i - target).abs()).collect();
                            }
                        }
                    },
                    false,
                )
                .map(|_| out)
            })
            .collect::<Result<_>>()?;
        let mut all = Vec::new();
        for (j, &s) in probe_steps.iter().enumerate() {
            let devs: Vec<f64> = per_rep.iter().flat_map(|rep| rep[j].iter().copied()).collect();
            let (mean_dev, std_dev) = mean_std(&devs);
            rows.push(ConvergenceRow {
                k,
                probe_t: params.t0 + s as f64 * cfg.dt,
                mean_dev,
                std_dev,
                samples: devs.len(),
            });
            all.extend(devs);
        }
        let (mean_dev, std_dev) = mean_std(&all);
        pooled.push(ConvergenceRow {
            k,
            probe_t: f64::NAN,
            mean_dev,
            std_dev,
            samples: all.len(),
        });
        let players = initial_players(&cfg, params, replication_seed(seed, k, 0));
        // Reversal moves every player when K ≥ 2.
        let perm: Vec<usize> = (0..k).rev().collect();
        exchangeable.push(exchangeability_check(&cfg, policy, params, &players, &perm)?);
    }
    Ok(ConvergenceReport {
        rows,
        pooled,
        exchangeable,
    })
}
