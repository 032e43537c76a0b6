//! Run configuration: a flat TOML file of dotted keys (`game.sigma2 = 1.0`),
//! overridable from the environment (`MFPC_GAME__SIGMA2=2`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use mfpc_core::{Efficiency, GameParams, GridSpec, MfgOptions, OuParams, TerminalUtility};

use crate::CliError;

/// Prefix of environment overrides. `__` separates key segments.
pub const ENV_PREFIX: &str = "MFPC_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    pub game: GameSection,
    pub efficiency: EfficiencySection,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub sim: SimSection,
    pub channel: ChannelSection,
    pub off_probability: OffProbabilitySection,
    #[serde(rename = "static")]
    pub static_game: StaticSection,
    pub output: OutputSection,
}

/// Physical scenario, SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameSection {
    pub players: usize,
    /// bit/s
    pub rate: f64,
    /// W
    pub sigma2: f64,
    pub mu: [f64; 2],
    pub eta: f64,
    /// W
    pub p_max: f64,
    /// s
    pub t0: f64,
    /// s
    pub t1: f64,
    /// J
    pub initial_energy: f64,
    /// Weight of residual energy in the terminal utility (0 disables it).
    pub terminal_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfficiencySection {
    /// `exponential` or `sigmoid`.
    pub family: String,
    pub a: f64,
    pub m: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub e_max: f64,
    pub n_e: usize,
    pub n_x: usize,
    pub n_y: usize,
    /// Time steps; 0 picks the smallest stable count.
    pub n_t: usize,
    pub width: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Constant interference for `solve-single` (W).
    pub interference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub seed: u64,
    pub dt: f64,
    pub players: usize,
    /// `constant` (power `p0`) or `mfg` (the mean-field equilibrium policy).
    pub policy: String,
    pub p0: f64,
    /// `stationary` or `common` (every player at `game.mu`).
    pub initial: String,
    pub record_every: usize,
    pub k_list: Vec<usize>,
    pub replications: usize,
    pub probe_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub paths: usize,
    pub dt: f64,
    pub steps: usize,
    pub h0: [f64; 2],
    /// `euler` or `exact`.
    pub stepper: String,
    pub record_every: usize,
    /// Paths written individually to `channel_paths.csv`.
    pub export_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OffProbabilitySection {
    pub v_e_max: f64,
    pub points: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticSection {
    /// Channel gains `|h_i|²`; one per player.
    pub gains: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    /// Time-slice stride of field snapshots.
    pub snapshot_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: "benchmark".into(),
            game: GameSection::default(),
            efficiency: EfficiencySection::default(),
            grid: GridSection::default(),
            solver: SolverSection::default(),
            sim: SimSection::default(),
            channel: ChannelSection::default(),
            off_probability: OffProbabilitySection::default(),
            static_game: StaticSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl Default for GameSection {
    fn default() -> Self {
        let p = GameParams::benchmark();
        GameSection {
            players: p.players,
            rate: p.rate,
            sigma2: p.sigma2,
            mu: p.ou.mu,
            eta: p.ou.eta,
            p_max: p.p_max,
            t0: p.t0,
            t1: p.t1,
            initial_energy: p.initial_energy,
            terminal_weight: 0.0,
        }
    }
}

impl Default for EfficiencySection {
    fn default() -> Self {
        EfficiencySection {
            family: "exponential".into(),
            a: 1.0,
            m: 2,
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridSpec::default();
        GridSection {
            e_max: g.e_max,
            n_e: g.n_e,
            n_x: g.n_x,
            n_y: g.n_y,
            n_t: g.n_t,
            width: g.width,
            h_half_width: g.h_half_width,
        }
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = MfgOptions::default();
        SolverSection {
            damping: o.damping,
            tol: o.tol,
            max_iter: o.max_iter,
            interference: 0.0,
        }
    }
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            seed: 1,
            dt: 0.01,
            players: 64,
            policy: "constant".into(),
            p0: 0.5,
            initial: "stationary".into(),
            record_every: 10,
            k_list: vec![16, 64, 256],
            replications: 100,
            probe_times: vec![0.5, 1.0, 1.5],
        }
    }
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            paths: 10_000,
            dt: 1e-3,
            steps: 10_000,
            h0: [2.0, -1.0],
            stepper: "euler".into(),
            record_every: 1000,
            export_paths: 10,
        }
    }
}

impl Default for OffProbabilitySection {
    fn default() -> Self {
        OffProbabilitySection {
            v_e_max: 4.0,
            points: 20,
            samples: 100_000,
        }
    }
}

impl Default for StaticSection {
    fn default() -> Self {
        StaticSection { gains: vec![1.0] }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            snapshot_every: 10,
        }
    }
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive, got {v}")))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be >= 0, got {v}")))
    }
}

fn one_of(key: &str, v: &str, allowed: &[&str]) -> Result<(), CliError> {
    if allowed.contains(&v) {
        Ok(())
    } else {
        Err(invalid(key, format!("must be one of {allowed:?}, got {v:?}")))
    }
}

impl RunConfig {
    /// Parses a flat TOML document.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: Table = text.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        Self::from_table(table)
    }

    fn from_table(table: Table) -> Result<Self, CliError> {
        Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().trim().to_string()))
    }

    /// Reads `path` (or starts from defaults) and applies environment
    /// overrides from `vars`.
    pub fn load<I>(path: Option<&Path>, vars: I) -> Result<Self, CliError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for (name, raw) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
            set_path(&mut table, &key, parse_scalar(&raw)).map_err(|e| invalid(&name, e))?;
        }
        Self::from_table(table)
    }

    /// Flat `key = value` lines, sorted by key.
    pub fn to_flat_toml(&self) -> String {
        let value = Value::try_from(self).expect("config is representable as TOML");
        let mut lines = BTreeMap::new();
        flatten("", &value, &mut lines);
        let mut out = String::new();
        for (k, v) in lines {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the flat serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_flat_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn efficiency(&self) -> Result<Efficiency, CliError> {
        let e = &self.efficiency;
        one_of("efficiency.family", &e.family, &["exponential", "sigmoid"])?;
        if e.family == "exponential" {
            positive("efficiency.a", e.a)?;
            Ok(Efficiency::ExponentialRatio { a: e.a })
        } else {
            if e.m < 2 {
                return Err(invalid("efficiency.m", format!("must be >= 2, got {}", e.m)));
            }
            Ok(Efficiency::CumulativeSigmoid { m: e.m })
        }
    }

    pub fn game_params(&self) -> Result<GameParams, CliError> {
        let g = &self.game;
        if g.players == 0 {
            return Err(invalid("game.players", "must be >= 1"));
        }
        nonnegative("game.rate", g.rate)?;
        positive("game.sigma2", g.sigma2)?;
        nonnegative("game.eta", g.eta)?;
        positive("game.p_max", g.p_max)?;
        nonnegative("game.initial_energy", g.initial_energy)?;
        nonnegative("game.terminal_weight", g.terminal_weight)?;
        if !g.mu.iter().all(|m| m.is_finite()) {
            return Err(invalid("game.mu", "must be finite"));
        }
        if !(g.t0.is_finite() && g.t1.is_finite() && g.t1 > g.t0) {
            return Err(invalid(
                "game.t1",
                format!("must exceed game.t0 = {}, got {}", g.t0, g.t1),
            ));
        }
        let params = GameParams {
            players: g.players,
            rate: g.rate,
            sigma2: g.sigma2,
            ou: OuParams::new(g.mu, g.eta).map_err(|e| invalid("game.eta", e))?,
            p_max: g.p_max,
            t0: g.t0,
            t1: g.t1,
            terminal: if g.terminal_weight > 0.0 {
                TerminalUtility::LinearEnergy {
                    weight: g.terminal_weight,
                }
            } else {
                TerminalUtility::Zero
            },
            efficiency: self.efficiency()?,
            initial_energy: g.initial_energy,
        };
        params.validate().map_err(|e| invalid("game", e))?;
        Ok(params)
    }

    /// Grid spec with `n_t = 0` resolved to the smallest stable step count.
    pub fn grid_spec(&self, params: &GameParams) -> Result<GridSpec, CliError> {
        let g = &self.grid;
        positive("grid.e_max", g.e_max)?;
        positive("grid.width", g.width)?;
        for (key, n) in [("grid.n_e", g.n_e), ("grid.n_x", g.n_x), ("grid.n_y", g.n_y)] {
            if n < 8 {
                return Err(invalid(key, format!("must be >= 8, got {n}")));
            }
        }
        if let Some(w) = g.h_half_width {
            positive("grid.h_half_width", w)?;
        } else if params.ou.eta == 0.0 {
            return Err(invalid("grid.h_half_width", "required when game.eta = 0"));
        }
        if params.initial_energy > g.e_max {
            return Err(invalid(
                "game.initial_energy",
                format!("exceeds grid.e_max = {}", g.e_max),
            ));
        }
        let mut spec = GridSpec {
            e_max: g.e_max,
            n_e: g.n_e,
            n_x: g.n_x,
            n_y: g.n_y,
            n_t: g.n_t.max(1),
            width: g.width,
            h_half_width: g.h_half_width,
        };
        if g.n_t == 0 {
            spec.n_t = mfpc_core::Grid::stable_steps(spec, params).map_err(|e| invalid("grid", e))?;
        }
        Ok(spec)
    }

    pub fn mfg_options(&self) -> Result<MfgOptions, CliError> {
        let s = &self.solver;
        if !(s.damping > 0.0 && s.damping <= 1.0) {
            return Err(invalid(
                "solver.damping",
                format!("must be in (0, 1], got {}", s.damping),
            ));
        }
        positive("solver.tol", s.tol)?;
        if s.max_iter == 0 {
            return Err(invalid("solver.max_iter", "must be >= 1"));
        }
        Ok(MfgOptions {
            damping: s.damping,
            tol: s.tol,
            max_iter: s.max_iter,
        })
    }

    pub fn check_sim(&self) -> Result<(), CliError> {
        let s = &self.sim;
        positive("sim.dt", s.dt)?;
        nonnegative("sim.p0", s.p0)?;
        one_of("sim.policy", &s.policy, &["constant", "mfg"])?;
        one_of("sim.initial", &s.initial, &["stationary", "common"])?;
        if s.players == 0 {
            return Err(invalid("sim.players", "must be >= 1"));
        }
        if s.k_list.contains(&0) {
            return Err(invalid("sim.k_list", "entries must be >= 1"));
        }
        if !s.k_list.is_empty() && s.replications == 0 {
            return Err(invalid("sim.replications", "must be >= 1"));
        }
        if s.seed > i64::MAX as u64 {
            return Err(invalid("sim.seed", "must fit in a signed 64-bit integer"));
        }
        Ok(())
    }

    pub fn check_channel(&self) -> Result<(), CliError> {
        let c = &self.channel;
        positive("channel.dt", c.dt)?;
        one_of("channel.stepper", &c.stepper, &["euler", "exact"])?;
        if c.paths < 2 {
            return Err(invalid("channel.paths", "must be >= 2"));
        }
        if c.steps == 0 {
            return Err(invalid("channel.steps", "must be >= 1"));
        }
        if !c.h0.iter().all(|h| h.is_finite()) {
            return Err(invalid("channel.h0", "must be finite"));
        }
        Ok(())
    }

    pub fn check_off_probability(&self) -> Result<(), CliError> {
        let o = &self.off_probability;
        nonnegative("off_probability.v_e_max", o.v_e_max)?;
        if o.points < 2 {
            return Err(invalid("off_probability.points", "must be >= 2"));
        }
        if o.samples < 10_000 {
            return Err(invalid("off_probability.samples", "must be >= 10000"));
        }
        Ok(())
    }
}

fn flatten(prefix: &str, value: &Value, out: &mut BTreeMap<String, String>) {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Environment values are TOML literals when they parse as one, else strings.
fn parse_scalar(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(table: &mut Table, key: &[String], value: Value) -> Result<(), String> {
    let (last, parents) = key.split_last().ok_or("empty key")?;
    let mut cur = table;
    for seg in parents {
        let entry = cur.entry(seg.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| format!("`{seg}` is not a section"))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}
