//! Energy-efficient power control as a stochastic differential game.
//!
//! Players transmit over Ornstein–Uhlenbeck fading channels with finite
//! batteries and collect `R f(SINR)/p` bits per joule. The crate covers the
//! static one-shot game, single-player dynamic control through an HJB
//! solver, finite-K Monte Carlo simulation and the mean-field equilibrium.

pub mod checks;
pub mod dynamics;
pub mod efficiency;
pub mod error;
pub mod grid;
pub mod hjb;
pub mod kplayer;
pub mod mfg;
pub mod params;
pub mod policy;
pub mod scalar;
pub mod static_game;

pub use dynamics::{GenericState, OuParams};
pub use efficiency::{Efficiency, EfficiencyProfile, HamiltonianValue, ThetaMax};
pub use error::{Error, Result};
pub use grid::{Grid, GridField, GridSpec};
pub use hjb::{OffProbabilityRow, ValueField};
pub use mfg::{DensityField, MfgOptions, MfgSolution};
pub use params::{GameParams, InterferencePath, TerminalUtility};
pub use policy::{ConstantPolicy, FeedbackPolicy, GridPolicy};
