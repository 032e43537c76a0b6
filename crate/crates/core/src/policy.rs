//! Feedback power-control policies `α(t, E, h, I)`.

use crate::dynamics::GenericState;
use crate::efficiency::EfficiencyProfile;
use crate::grid::{Grid, GridField};

/// A homogeneous feedback policy: every player applies the same map from
/// time, own state and broadcast interference to a transmit power.
pub trait FeedbackPolicy: Sync {
    fn power(&self, t: f64, state: &GenericState, interference: f64) -> f64;

    /// Powers at every node of time slice `slice`. Nodes on the empty-battery
    /// layer are always off.
    fn tabulate(&self, grid: &Grid, slice: usize, interference: f64) -> Vec<f64> {
        let t = grid.times[slice];
        (0..grid.nodes())
            .map(|k| {
                let (ie, ix, iy) = grid.unindex(k);
                if ie == 0 {
                    0.0
                } else {
                    let s = GenericState::new(grid.energy[ie], [grid.x[ix], grid.y[iy]]);
                    self.power(t, &s, interference)
                }
            })
            .collect()
    }
}

/// Constant power while the battery is not empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy(pub f64);

impl FeedbackPolicy for ConstantPolicy {
    fn power(&self, _t: f64, state: &GenericState, _interference: f64) -> f64 {
        if state.energy > 0.0 {
            self.0
        } else {
            0.0
        }
    }
}

/// Policy derived from a value function on a grid.
///
/// Stores the energy shadow price `∂v/∂E` at every node and re-solves the
/// pointwise Hamiltonian for the interference actually observed, so the
/// policy is a genuine function of `(t, E, h, I)`. The node powers for the
/// interference path it was solved against are cached.
#[derive(Debug, Clone)]
pub struct GridPolicy {
    pub grid: Grid,
    /// Node powers for the solved interference path.
    pub power: GridField,
    /// Energy shadow price used at each node.
    pub shadow_price: GridField,
    /// Interference at each slice that `power` corresponds to.
    pub interference: Vec<f64>,
    pub profile: EfficiencyProfile,
    pub rate: f64,
    pub sigma2: f64,
    pub p_max: f64,
}

impl GridPolicy {
    #[inline]
    fn node_power(&self, shadow: f64, gain: f64, interference: f64) -> f64 {
        let c = gain / (self.sigma2 + interference);
        self.profile.hamiltonian(c, shadow, self.rate, self.p_max).power
    }
}

impl FeedbackPolicy for GridPolicy {
    fn power(&self, t: f64, state: &GenericState, interference: f64) -> f64 {
        if state.energy <= 0.0 {
            return 0.0;
        }
        let shadow = self.shadow_price.interpolate(&self.grid, t, state.energy, state.h);
        self.node_power(shadow, state.gain(), interference)
    }

    fn tabulate(&self, grid: &Grid, slice: usize, interference: f64) -> Vec<f64> {
        debug_assert_eq!(grid.nodes(), self.grid.nodes());
        if self.interference[slice].to_bits() == interference.to_bits() {
            return self.power.slices[slice].clone();
        }
        let shadow = &self.shadow_price.slices[slice];
        (0..grid.nodes())
            .map(|k| {
                let (ie, ix, iy) = grid.unindex(k);
                if ie == 0 {
                    0.0
                } else {
                    self.node_power(shadow[k], grid.gain(ix, iy), interference)
                }
            })
            .collect()
    }
}
