//! Local structure aggregation, spatio-temporal center correlation, temporal
//! embedding and feature propagation over point-cloud sequences.

mod config;
mod lsa;
mod propagation;
mod sequence;
mod stc;
mod temporal;

#[cfg(test)]
mod tests;

pub use config::{
    AsapConfig, LevelConfig, StcStrategy, TeKind, TemporalState, DEFAULT_FP_K, DEFAULT_K_CAP,
};
pub use lsa::{group_scales, lsa_apply, lsa_forward, Grouping};
pub use propagation::{feature_propagation, propagate, Interpolation, FP_EPS};
pub use sequence::{asap_forward, asap_sequence_forward, SequenceOutput, SequencePlan};
pub use stc::{
    plan_centers, stc_constant_centers, stc_nearest_match, CenterPlan, FpsSeed, LevelCenters,
};
pub use temporal::{ate_attention, ate_forward, dte_forward, temporal_embed};

use rand::Rng;

use crate::autodiff::ParamStore;
use crate::error::Result;

impl AsapConfig {
    /// Adds freshly initialised parameters for every MLP of the module.
    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for (l, level) in self.levels.iter().enumerate() {
            let p = Self::level_prefix(l);
            for (s, eta) in level.eta.iter().enumerate() {
                store.init_mlp(eta, &format!("{p}.eta{s}"), rng)?;
            }
            if let Some(g) = &level.gamma {
                store.init_mlp(g, &format!("{p}.gamma"), rng)?;
            }
            store.init_mlp(&level.zeta, &format!("{p}.zeta"), rng)?;
        }
        for (l, unit) in self.fp_units.iter().enumerate() {
            store.init_mlp(unit, &Self::fp_prefix(l), rng)?;
        }
        Ok(())
    }
}
