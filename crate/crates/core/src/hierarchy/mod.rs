//! Hierarchical screen models: the separate growth model (SHM), the fitness-level
//! interaction model (IHM) and the joint growth and interaction model (JHM).

mod generate;
mod hyper;
mod ihm;
mod joint;

pub use generate::{generate_screen, GeneratedScreen, GeneratorConfig, PlantedTruth};
pub use hyper::{GrowthHyper, HyperParams, IhmHyper, JointHyper, VariantHyper};
pub use ihm::{fit_ihm, fitness_products, IhmFit};
pub use joint::{fit_jhm, fit_shm, shm_fitnesses, JhmFit, JhmVariant, RepeatSummary, ShmFit, LOG_K_MAX, LOG_R_MAX};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::mcmc::{Schedule, Tuning};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenFitOptions {
    pub hyper: HyperParams,
    pub schedule: Schedule,
    pub tuning: Tuning,
    pub seed: u64,
    /// Also record every gene- and repeat-level coordinate in the chain.
    pub full_trace: bool,
}

impl Default for ScreenFitOptions {
    fn default() -> Self {
        Self {
            hyper: HyperParams::default(),
            schedule: Schedule::desk_screen(),
            tuning: Tuning::default(),
            seed: 1,
            full_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Suppressor,
    Enhancer,
    None,
}

impl Classification {
    /// Significant genes (`delta_mean > 0.5`) are split by the sign of the posterior mean interaction.
    pub fn from_posterior(delta_mean: f64, signed_interaction: f64) -> Self {
        if delta_mean <= 0.5 {
            Classification::None
        } else if signed_interaction >= 0.0 {
            Classification::Suppressor
        } else {
            Classification::Enhancer
        }
    }

    pub fn is_interaction(self) -> bool {
        self != Classification::None
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::Suppressor => "suppressor",
            Classification::Enhancer => "enhancer",
            Classification::None => "none",
        })
    }
}

/// Per-gene posterior summary; the payload of a fitness plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionResult {
    pub gene: String,
    pub delta_mean: f64,
    /// Posterior mean of `e^{δγ}`.
    pub gamma_strength: f64,
    /// Posterior mean of `e^{δω}`; the fitness-level model has no `ω`.
    pub omega_strength: Option<f64>,
    pub control_fitness: f64,
    pub query_fitness: f64,
    pub classification: Classification,
}
