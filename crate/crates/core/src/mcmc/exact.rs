//! Data-augmentation reference sampler for the SLGM itself.
//!
//! The latent log-density path lives on a fine Euler-Maruyama grid with
//! `imputed_per_interval` steps between observations. The path is parameterised by
//! its standard-normal innovations, so parameter moves carry the path with them and
//! innovation blocks (one per observation interval) are refreshed by
//! preconditioned Crank-Nicolson moves, which leave the N(0, I) prior invariant.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::sde_fit::{initial_theta, params_from, sweep_order, NAMES};
use super::{Adapter, Chain, Schedule, SdePriors, Tuning};
use crate::data::{ErrorKind, GrowthCurve};
use crate::dist::normal_logpdf_var;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::sde::DEFAULT_SUBSTEPS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactOptions {
    pub error_kind: ErrorKind,
    pub priors: SdePriors,
    pub tuning: Tuning,
    pub schedule: Schedule,
    pub seed: u64,
    pub imputed_per_interval: usize,
    pub noise_subiterations: usize,
    pub fixed_sigma: Option<f64>,
    pub fixed_nu: Option<f64>,
}

impl ExactOptions {
    pub fn new(error_kind: ErrorKind) -> Self {
        Self {
            error_kind,
            priors: SdePriors::default(),
            tuning: Tuning::default(),
            schedule: Schedule::desk_sde(),
            seed: 1,
            imputed_per_interval: DEFAULT_SUBSTEPS,
            noise_subiterations: 3,
            fixed_sigma: None,
            fixed_nu: None,
        }
    }
}

/// Fine grid layout: step sizes, the node index of each observation and the step range of each block.
struct Grid {
    sqrt_h: Vec<f64>,
    h: Vec<f64>,
    obs_node: Vec<usize>,
    blocks: Vec<(usize, usize)>,
}

impl Grid {
    fn new(times: &[f64], m: usize) -> Self {
        let (mut h, mut obs_node, mut blocks) = (Vec::new(), Vec::new(), Vec::new());
        let mut t = 0.0;
        for &tn in times {
            if tn > t {
                let start = h.len();
                let step = (tn - t) / m as f64;
                h.extend(std::iter::repeat_n(step, m));
                blocks.push((start, h.len()));
            }
            obs_node.push(h.len());
            t = tn;
        }
        Self { sqrt_h: h.iter().map(|x| x.sqrt()).collect(), h, obs_node, blocks }
    }
}

struct Model<'a> {
    grid: &'a Grid,
    ys: &'a [f64],
    error_kind: ErrorKind,
}

impl Model<'_> {
    /// Rebuild `path` from node `from` onwards; false if the path leaves the representable range.
    fn fill_path(&self, theta: &[f64; 5], xi: &[f64], path: &mut [f64], from: usize) -> bool {
        let p = params_from(theta);
        let (k, r, s) = (p.growth.k, p.growth.r, p.sigma);
        let drift0 = r - 0.5 * s * s;
        let b = r / k;
        let bound = 1e12f64.ln();
        if from == 0 {
            path[0] = theta[2];
        }
        for j in from..xi.len() {
            let y = path[j];
            let next = y + (drift0 - b * y.exp()) * self.grid.h[j] + s * self.grid.sqrt_h[j] * xi[j];
            if !next.is_finite() || next > bound {
                return false;
            }
            path[j + 1] = next;
        }
        true
    }

    fn obs_loglik(&self, nu: f64, path: &[f64], i: usize) -> f64 {
        let y = path[self.grid.obs_node[i]];
        let nu2 = nu * nu;
        match self.error_kind {
            ErrorKind::Normal => normal_logpdf_var(self.ys[i], y.exp(), nu2),
            ErrorKind::LogNormal => normal_logpdf_var(self.ys[i], y, nu2),
        }
    }

    fn loglik(&self, theta: &[f64; 5], path: &[f64]) -> f64 {
        let nu = params_from(theta).nu;
        let ll: f64 = (0..self.ys.len()).map(|i| self.obs_loglik(nu, path, i)).sum();
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            ll
        }
    }
}

/// Reference sampler over parameters and the imputed SLGM path.
pub fn fit_sde_exact(curve: &GrowthCurve, opts: &ExactOptions) -> Result<Chain> {
    curve.validate()?;
    if opts.imputed_per_interval == 0 {
        return Err(Error::InvalidParameter("imputed_per_interval must be at least 1".into()));
    }
    let ys: Vec<f64> = match opts.error_kind {
        ErrorKind::Normal => curve.values.clone(),
        ErrorKind::LogNormal => crate::kalman::latent_observations(crate::lna::ModelKind::Lnam, curve)?,
    };
    let grid = Grid::new(&curve.times, opts.imputed_per_interval);
    let model = Model { grid: &grid, ys: &ys, error_kind: opts.error_kind };
    let n_steps = grid.h.len();

    let mut rng = rng_from(derive_seed(opts.seed, "fit-sde-exact"));
    let mut theta = initial_theta(&opts.priors, curve, opts.fixed_sigma, opts.fixed_nu);
    let mut xi = vec![0.0; n_steps];
    let mut path = vec![0.0; n_steps + 1];
    let mut ll = if model.fill_path(&theta, &xi, &mut path, 0) { model.loglik(&theta, &path) } else { f64::NEG_INFINITY };
    let mut prop_path = path.clone();
    let mut prop_xi = xi.clone();

    let tuning = &opts.tuning;
    let mut adapters: Vec<Adapter> = (0..5).map(|_| Adapter::new(tuning.initial_sd)).collect();
    let mut block_adapters: Vec<Adapter> = grid.blocks.iter().map(|_| Adapter::new(0.5)).collect();
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
            let mut accepted = false;
            if lp_new.is_finite() {
                // ν does not enter the path.
                let ok = if i == 4 {
                    prop_path.copy_from_slice(&path);
                    true
                } else {
                    model.fill_path(&prop, &xi, &mut prop_path, 0)
                };
                if ok {
                    let ll_new = model.loglik(&prop, &prop_path);
                    let log_ratio = lp_new + ll_new - opts.priors.log_density(i, theta[i]) - ll;
                    if rng.random::<f64>().ln() < log_ratio {
                        theta = prop;
                        ll = ll_new;
                        std::mem::swap(&mut path, &mut prop_path);
                        accepted = true;
                    }
                }
            }
            adapters[i].record(accepted, adapting, tuning);
        }
        if !ys.is_empty() {
            for (bi, &(start, end)) in grid.blocks.iter().enumerate() {
                let step = block_adapters[bi].sd.min(1.0);
                let rho = (1.0 - step * step).sqrt();
                prop_xi.copy_from_slice(&xi);
                for x in &mut prop_xi[start..end] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x = rho * *x + step * z;
                }
                prop_path[..=start].copy_from_slice(&path[..=start]);
                let mut accepted = false;
                if model.fill_path(&theta, &prop_xi, &mut prop_path, start) {
                    let ll_new = model.loglik(&theta, &prop_path);
                    if rng.random::<f64>().ln() < ll_new - ll {
                        ll = ll_new;
                        std::mem::swap(&mut path, &mut prop_path);
                        std::mem::swap(&mut xi, &mut prop_xi);
                        accepted = true;
                    }
                }
                block_adapters[bi].record(accepted, adapting, tuning);
                block_adapters[bi].sd = block_adapters[bi].sd.min(1.0);
            }
        }
        for &i in &order {
            adapters[i].check(NAMES[i], iter, tuning)?;
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout() {
        let g = Grid::new(&[0.0, 1.0, 3.0], 4);
        assert_eq!(g.h.len(), 8);
        assert_eq!(g.obs_node, vec![0, 4, 8]);
        assert_eq!(g.blocks, vec![(0, 4), (4, 8)]);
        let lead = Grid::new(&[0.5, 1.0], 2);
        assert_eq!(lead.obs_node, vec![2, 4]);
        assert_eq!(lead.blocks.len(), 2);
    }

    #[test]
    fn runs_and_is_reproducible() {
        let curve = GrowthCurve::new(vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![1e-4, 0.002, 0.03, 0.12, 0.15]).unwrap();
        let opts = ExactOptions { schedule: Schedule::new(300, 2, 100).unwrap(), ..ExactOptions::new(ErrorKind::Normal) };
        let a = fit_sde_exact(&curve, &opts).unwrap();
        assert_eq!(a, fit_sde_exact(&curve, &opts).unwrap());
        assert!(a.draws.iter().flatten().all(|x| x.is_finite() && *x > 0.0));
    }
}
