use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Adapter, Chain, Schedule, Tuning};
use crate::data::{ErrorKind, GrowthCurve};
use crate::dist::normal_logpdf;
use crate::error::Result;
use crate::kalman::{check_pairing, latent_observations, loglik_prepared};
use crate::lna::{Approximation, ModelKind};
use crate::rng::{derive_seed, rng_from};
use crate::sde::SdeParams;

pub(super) const NAMES: [&str; 5] = ["K", "r", "P", "sigma", "nu"];

/// Normal priors on `log K`, `log r`, `log P`, `log σ⁻²` and `log ν⁻²`, each as `(mean, precision)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdePriors {
    pub k: (f64, f64),
    pub r: (f64, f64),
    pub p: (f64, f64),
    pub sigma_prec: (f64, f64),
    pub nu_prec: (f64, f64),
    /// Lower truncation of `log σ⁻²`.
    pub sigma_prec_lower: f64,
}

impl Default for SdePriors {
    fn default() -> Self {
        Self {
            k: (0.1f64.ln(), 2.0),
            r: (3.0f64.ln(), 5.0),
            p: (1e-4f64.ln(), 0.1),
            sigma_prec: (100f64.ln(), 0.1),
            nu_prec: (1e4f64.ln(), 0.1),
            sigma_prec_lower: 1.0,
        }
    }
}

impl SdePriors {
    pub(super) fn as_array(&self) -> [(f64, f64); 5] {
        [self.k, self.r, self.p, self.sigma_prec, self.nu_prec]
    }

    /// Log prior density of coordinate `i` of the log-parameter vector, up to a constant.
    #[inline]
    pub(super) fn log_density(&self, i: usize, x: f64) -> f64 {
        if i == 3 && x < self.sigma_prec_lower {
            return f64::NEG_INFINITY;
        }
        let (mu, tau) = self.as_array()[i];
        normal_logpdf(x, mu, tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeFitOptions {
    pub kind: ModelKind,
    pub error_kind: ErrorKind,
    pub priors: SdePriors,
    pub tuning: Tuning,
    pub schedule: Schedule,
    pub seed: u64,
    /// Alternating σ/ν updates per sweep.
    pub noise_subiterations: usize,
    pub fixed_sigma: Option<f64>,
    pub fixed_nu: Option<f64>,
}

impl SdeFitOptions {
    pub fn new(kind: ModelKind, error_kind: ErrorKind) -> Self {
        Self {
            kind,
            error_kind,
            priors: SdePriors::default(),
            tuning: Tuning::default(),
            schedule: Schedule::desk_sde(),
            seed: 1,
            noise_subiterations: 3,
            fixed_sigma: None,
            fixed_nu: None,
        }
    }
}

/// Natural-scale parameters from the log-parameter vector.
#[inline]
pub(super) fn params_from(theta: &[f64; 5]) -> SdeParams {
    SdeParams::new(
        theta[0].exp(),
        theta[1].exp(),
        theta[2].exp(),
        (-0.5 * theta[3]).exp(),
        (-0.5 * theta[4]).exp(),
    )
}

/// Starting point: prior locations, with K raised to the largest observation when data exist.
pub(super) fn initial_theta(
    priors: &SdePriors,
    curve: &GrowthCurve,
    fixed_sigma: Option<f64>,
    fixed_nu: Option<f64>,
) -> [f64; 5] {
    let mut theta = priors.as_array().map(|(mu, _)| mu);
    theta[3] = theta[3].max(priors.sigma_prec_lower);
    if let Some(max) = curve.values.iter().copied().filter(|y| *y > 0.0).reduce(f64::max) {
        theta[0] = max.ln();
    }
    if let Some(s) = fixed_sigma {
        theta[3] = -2.0 * s.ln();
    }
    if let Some(n) = fixed_nu {
        theta[4] = -2.0 * n.ln();
    }
    theta
}

/// Order of single-site updates within one sweep.
pub(super) fn sweep_order(noise_subiterations: usize, fixed_sigma: bool, fixed_nu: bool) -> Vec<usize> {
    let mut order = vec![0, 1, 2];
    for _ in 0..noise_subiterations.max(1) {
        if !fixed_sigma {
            order.push(3);
        }
        if !fixed_nu {
            order.push(4);
        }
    }
    order
}

/// Metropolis-within-Gibbs over log-parameters with the Kalman marginal likelihood.
pub fn fit_sde(curve: &GrowthCurve, opts: &SdeFitOptions) -> Result<Chain> {
    check_pairing(opts.kind, opts.error_kind)?;
    curve.validate()?;
    let ys = latent_observations(opts.kind, curve)?;
    let times = &curve.times;
    let kind = opts.kind;
    let loglik = |theta: &[f64; 5]| -> f64 {
        if ys.is_empty() {
            return 0.0;
        }
        let params = params_from(theta);
        match Approximation::new(kind, &params) {
            Ok(approx) => {
                let ll = loglik_prepared(&approx, params.nu, times, &ys);
                if ll.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    ll
                }
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let mut rng = rng_from(derive_seed(opts.seed, "fit-sde"));
    let mut theta = initial_theta(&opts.priors, curve, opts.fixed_sigma, opts.fixed_nu);
    let mut ll = loglik(&theta);
    let mut adapters: Vec<Adapter> = (0..5).map(|_| Adapter::new(opts.tuning.initial_sd)).collect();
    let order = sweep_order(opts.noise_subiterations, opts.fixed_sigma.is_some(), opts.fixed_nu.is_some());
    let schedule = opts.schedule;
    let mut chain = Chain::new(NAMES.iter().map(|s| s.to_string()).collect(), &schedule, opts.seed);

    for iter in 0..schedule.total() {
        let adapting = iter < schedule.burn_in;
        if iter == schedule.burn_in {
            adapters.iter_mut().for_each(Adapter::reset_counts);
        }
        for &i in &order {
            let z: f64 = StandardNormal.sample(&mut rng);
            let mut prop = theta;
            prop[i] += adapters[i].sd * z;
            let lp_new = opts.priors.log_density(i, prop[i]);
            let accepted = if lp_new.is_finite() {
                let ll_new = loglik(&prop);
                let log_ratio = lp_new + ll_new - opts.priors.log_density(i, theta[i]) - ll;
                if rng.random::<f64>().ln() < log_ratio {
                    theta = prop;
                    ll = ll_new;
                    true
                } else {
                    false
                }
            } else {
                false
            };
            adapters[i].record(accepted, adapting, &opts.tuning);
        }
        for &i in &order {
            adapters[i].check(NAMES[i], iter, &opts.tuning)?;
        }
        if schedule.keep(iter) {
            let p = params_from(&theta);
            chain.draws.push(vec![p.growth.k, p.growth.r, p.growth.p, p.sigma, p.nu]);
        }
    }
    for &i in &order {
        chain.acceptance[i] = adapters[i].acceptance_rate();
    }
    Ok(chain)
}
