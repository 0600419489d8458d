//! Metropolis-within-Gibbs machinery shared by every sampler, plus the single-curve SDE samplers.

mod exact;
mod sde_fit;

pub use exact::{fit_sde_exact, ExactOptions};
pub use sde_fit::{fit_sde, SdeFitOptions, SdePriors};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration counts: `burn_in` discarded sweeps, then `samples` retained draws every `thin` sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub burn_in: usize,
    pub thin: usize,
    pub samples: usize,
}

impl Schedule {
    pub fn new(burn_in: usize, thin: usize, samples: usize) -> Result<Self> {
        if thin == 0 || samples == 0 {
            return Err(Error::Config("thin and samples must be positive".into()));
        }
        Ok(Self { burn_in, thin, samples })
    }

    pub fn desk_sde() -> Self {
        Self { burn_in: 50_000, thin: 50, samples: 1000 }
    }

    pub fn paper_sde() -> Self {
        Self { burn_in: 600_000, thin: 4000, samples: 1000 }
    }

    pub fn desk_screen() -> Self {
        Self { burn_in: 20_000, thin: 20, samples: 1000 }
    }

    pub fn paper_screen() -> Self {
        Self { burn_in: 800_000, thin: 100, samples: 1000 }
    }

    pub fn total(&self) -> usize {
        self.burn_in + self.thin * self.samples
    }

    /// Whether the sweep with 0-based index `iter` is retained.
    pub fn keep(&self, iter: usize) -> bool {
        iter >= self.burn_in && (iter - self.burn_in + 1) % self.thin == 0
    }
}

/// Random-walk proposal tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    /// Initial proposal standard deviation, on the log scale.
    pub initial_sd: f64,
    /// Proposals per coordinate between adaptations.
    pub window: u32,
    /// Acceptance band the burn-in adaptation steers towards.
    pub target: (f64, f64),
    /// Consecutive rejections of one coordinate that abort the run.
    pub stuck_after: u64,
}

impl Default for Tuning {
    fn default() -> Self {
        Self { initial_sd: 0.1, window: 50, target: (0.2, 0.4), stuck_after: 10_000 }
    }
}

/// Per-coordinate random-walk scale with burn-in adaptation and rejection bookkeeping.
#[derive(Debug, Clone)]
pub struct Adapter {
    pub sd: f64,
    window_tried: u32,
    window_accepted: u32,
    tried: u64,
    accepted: u64,
    consecutive_rejections: u64,
    last: f64,
}

impl Adapter {
    pub fn new(sd: f64) -> Self {
        Self { sd, window_tried: 0, window_accepted: 0, tried: 0, accepted: 0, consecutive_rejections: 0, last: f64::NAN }
    }

    /// Record one proposal outcome; during burn-in rescale the proposal at each window boundary.
    #[inline]
    pub fn record(&mut self, accepted: bool, adapting: bool, tuning: &Tuning) {
        self.tried += 1;
        if accepted {
            self.accepted += 1;
            self.consecutive_rejections = 0;
        } else {
            self.consecutive_rejections += 1;
        }
        if adapting {
            self.window_tried += 1;
            self.window_accepted += u32::from(accepted);
            if self.window_tried >= tuning.window {
                let rate = self.window_accepted as f64 / self.window_tried as f64;
                if rate < tuning.target.0 {
                    self.sd *= 0.8;
                } else if rate > tuning.target.1 {
                    self.sd *= 1.25;
                }
                self.sd = self.sd.clamp(1e-8, 1e3);
                self.window_tried = 0;
                self.window_accepted = 0;
            }
        }
    }

    /// Note the coordinate's current value: a value changed by some other move ends a rejection streak.
    pub fn observe(&mut self, value: f64) {
        if value != self.last {
            self.consecutive_rejections = 0;
            self.last = value;
        }
    }

    pub fn check(&self, name: &str, iteration: usize, tuning: &Tuning) -> Result<()> {
        if self.consecutive_rejections >= tuning.stuck_after {
            return Err(Error::StuckChain {
                parameter: name.to_string(),
                rejections: self.consecutive_rejections,
                iteration,
            });
        }
        Ok(())
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.tried == 0 {
            0.0
        } else {
            self.accepted as f64 / self.tried as f64
        }
    }

    /// Forget counts so the reported rate covers the retained phase only.
    pub fn reset_counts(&mut self) {
        self.tried = 0;
        self.accepted = 0;
    }
}

/// Retained draws, one row per draw and one column per named parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub names: Vec<String>,
    pub draws: Vec<Vec<f64>>,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Post-burn-in acceptance rate per parameter (1 for Gibbs-updated parameters).
    pub acceptance: Vec<f64>,
}

impl Chain {
    pub fn new(names: Vec<String>, schedule: &Schedule, seed: u64) -> Self {
        let n = names.len();
        Self {
            names,
            draws: Vec::with_capacity(schedule.samples),
            burn_in: schedule.burn_in,
            thin: schedule.thin,
            seed,
            acceptance: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column_at(&self, i: usize) -> Vec<f64> {
        self.draws.iter().map(|row| row[i]).collect()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.index_of(name).map(|i| self.column_at(i))
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.column(name).map(|c| mean(&c))
    }

    pub fn sd(&self, name: &str) -> Option<f64> {
        self.column(name).map(|c| sd(&c))
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}
