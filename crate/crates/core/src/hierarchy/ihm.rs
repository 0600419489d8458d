//! Fitness-level interaction model: per-repeat fitnesses from the separate growth fits
//! of both screens, with `F_{clm} ~ N(e^{α_c + δ_l γ_{cl}} Z_l, 1/ν_{cl})`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::hyper::IhmHyper;
use super::{Classification, InteractionResult, ScreenFitOptions};
use crate::dist::{
    normal_logpdf, sample_t3_positive, scaled_t3_logpdf, t3_cdf, t3_positive_at_rank, t3_positive_rank,
};
use crate::error::{Error, Result};
use crate::growth::FitnessScore;
use crate::mcmc::{Adapter, Chain, Tuning};
use crate::rng::{derive_indexed, derive_seed, rng_from};

const NAMES: [&str; 6] = ["Z_p", "log_sigma_Z", "nu_p", "log_sigma_nu", "log_sigma_gamma", "alpha_1"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IhmFit {
    pub chain: Chain,
    pub results: Vec<InteractionResult>,
    /// Genes with repeats in only one of the conditions.
    pub skipped: Vec<String>,
}

/// Fitness products `MDR × MDP` keyed by gene.
pub fn fitness_products(scores: &BTreeMap<String, Vec<FitnessScore>>) -> BTreeMap<String, Vec<f64>> {
    scores.iter().map(|(g, s)| (g.clone(), s.iter().map(|f| f.product).collect())).collect()
}

pub fn fit_ihm(
    control: &BTreeMap<String, Vec<f64>>,
    query: &BTreeMap<String, Vec<f64>>,
    opts: &ScreenFitOptions,
) -> Result<IhmFit> {
    if !control.keys().eq(query.keys()) {
        let only: Vec<&String> = control
            .keys()
            .filter(|g| !query.contains_key(*g))
            .chain(query.keys().filter(|g| !control.contains_key(*g)))
            .collect();
        return Err(Error::Keying(format!("fitness sets disagree on genes {only:?}")));
    }
    let mut names = Vec::new();
    let mut data = Vec::new();
    let mut skipped = Vec::new();
    for (gene, ctrl) in control {
        let qry = &query[gene];
        // A gene with no repeats anywhere is kept and sampled from its prior.
        if ctrl.is_empty() != qry.is_empty() {
            skipped.push(gene.clone());
            continue;
        }
        if ctrl.iter().chain(qry).any(|f| !f.is_finite()) {
            return Err(Error::Data(format!("non-finite fitness for gene {gene}")));
        }
        names.push(gene.clone());
        data.push([ctrl.clone(), qry.clone()]);
    }
    if names.is_empty() {
        return Err(Error::Keying("no gene has fitnesses in both conditions".into()));
    }
    let (chain, results) = sample(names, &data, opts)?;
    Ok(IhmFit { chain, results, skipped })
}

/// Count, sum and sum of squares: all the likelihood needs from one cell.
#[derive(Clone, Copy)]
struct Stats {
    n: f64,
    s1: f64,
    s2: f64,
}

impl Stats {
    fn of(xs: &[f64]) -> Self {
        Self { n: xs.len() as f64, s1: xs.iter().sum(), s2: xs.iter().map(|x| x * x).sum() }
    }

    #[inline]
    fn ll(&self, nu: f64, mean: f64) -> f64 {
        if self.n == 0.0 {
            return 0.0;
        }
        let ssr = (self.s2 - 2.0 * mean * self.s1 + self.n * mean * mean).max(0.0);
        0.5 * self.n * nu - 0.5 * nu.exp() * ssr
    }
}

struct Gene {
    stats: [Stats; 2],
    lz: f64,
    nu: [f64; 2],
    delta: bool,
    gamma: f64,
    /// `log Z`, `ν₀`, `ν₁`, `γ`.
    ad: [Adapter; 4],
    rng: ChaCha8Rng,
    sum_delta: f64,
    sum_strength: f64,
    sum_signed: f64,
    sum_control: f64,
    sum_query: f64,
}

#[derive(Clone, Copy)]
struct Pop {
    z_p: f64,
    sigma_z: f64,
    nu_p: f64,
    sigma_nu: f64,
    sigma_gamma: f64,
    alpha: f64,
}

impl Gene {
    fn mean(&self, pop: &Pop, c: usize, lz: f64, gamma: f64, delta: bool) -> f64 {
        if c == 0 {
            lz.exp()
        } else {
            (pop.alpha + if delta { gamma } else { 0.0 } + lz).exp()
        }
    }

    fn sweep(&mut self, pop: &Pop, h: &IhmHyper, tuning: &Tuning, adapting: bool) {
        let (loc, prec) = (pop.z_p.exp(), pop.sigma_z.exp());
        let (delta, gamma) = (self.delta, self.gamma);
        let target = |g: &Gene, x: f64| {
            scaled_t3_logpdf(x.exp(), loc, prec)
                + x
                + (0..2).map(|c| g.stats[c].ll(g.nu[c], g.mean(pop, c, x, gamma, delta))).sum::<f64>()
        };
        let z: f64 = StandardNormal.sample(&mut self.rng);
        let prop = self.lz + self.ad[0].sd * z;
        let log_ratio = target(self, prop) - target(self, self.lz);
        let ok = accept(&mut self.rng, log_ratio);
        if ok {
            self.lz = prop;
        }
        self.ad[0].record(ok, adapting, tuning);

        let sn = pop.sigma_nu.exp();
        for c in 0..2 {
            let mean = self.mean(pop, c, self.lz, self.gamma, self.delta);
            let st = self.stats[c];
            let target = |x: f64| normal_logpdf(x, pop.nu_p, sn) + st.ll(x, mean);
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let prop = self.nu[c] + self.ad[1 + c].sd * z;
            let ok = accept(&mut self.rng, target(prop) - target(self.nu[c]));
            if ok {
                self.nu[c] = prop;
            }
            self.ad[1 + c].record(ok, adapting, tuning);
        }

        let prec_g = pop.sigma_gamma.exp();
        if !self.delta {
            self.gamma = sample_t3_positive(&mut self.rng, 1.0, prec_g).max(f64::MIN_POSITIVE).ln();
        }
        let q = self.stats[1];
        let l1 = q.ll(self.nu[1], self.mean(pop, 1, self.lz, self.gamma, true));
        let l0 = q.ll(self.nu[1], self.mean(pop, 1, self.lz, self.gamma, false));
        let logit = h.p.ln() - (-h.p).ln_1p() + l1 - l0;
        let prob = if logit.is_nan() { h.p } else { 1.0 / (1.0 + (-logit).exp()) };
        self.delta = self.rng.random::<f64>() < prob;
        if self.delta {
            let target = |g: &Gene, x: f64| {
                scaled_t3_logpdf(x.exp(), 1.0, prec_g) + x + q.ll(g.nu[1], g.mean(pop, 1, g.lz, x, true))
            };
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let prop = self.gamma + self.ad[3].sd * z;
            let log_ratio = target(self, prop) - target(self, self.gamma);
            let ok = accept(&mut self.rng, log_ratio);
            if ok {
                self.gamma = prop;
            }
            self.ad[3].record(ok, adapting, tuning);
        }
    }

    fn accumulate(&mut self, pop: &Pop) {
        let d = if self.delta { 1.0 } else { 0.0 };
        self.sum_delta += d;
        self.sum_strength += (d * self.gamma).exp();
        self.sum_signed += d * self.gamma;
        self.sum_control += self.lz.exp();
        self.sum_query += self.mean(pop, 1, self.lz, self.gamma, self.delta);
    }
}

/// Data log-likelihood of one gene at the given `log Z` and precisions.
fn gene_ll(g: &Gene, pop: &Pop, lz: f64, nu: [f64; 2]) -> f64 {
    (0..2).map(|c| g.stats[c].ll(nu[c], g.mean(pop, c, lz, g.gamma, g.delta))).sum()
}

/// Population move that carries every gene-level value to the same quantile of its new prior.
/// The gene prior terms then cancel against the Jacobian, leaving the population prior and the data.
/// Coordinates: 0 `Z_p`, 1 `log σ_Z`, 2 `ν_p`, 3 `log σ_ν`.
#[allow(clippy::too_many_arguments)]
fn carry_move(
    i: usize,
    pop: &mut Pop,
    genes: &mut [Gene],
    h: &IhmHyper,
    ad: &mut Adapter,
    rng: &mut ChaCha8Rng,
    adapting: bool,
    tuning: &Tuning,
) {
    let prior = |p: &Pop| match i {
        0 => normal_logpdf(p.z_p, h.z_mu, h.eta_z_p),
        1 => normal_logpdf(p.sigma_z, h.eta_z, h.psi_z),
        2 => normal_logpdf(p.nu_p, h.nu_mu, h.eta_nu_p),
        _ => normal_logpdf(p.sigma_nu, h.eta_nu, h.psi_nu),
    };
    let z: f64 = StandardNormal.sample(rng);
    let mut prop = *pop;
    let step = ad.sd * z;
    match i {
        0 => prop.z_p += step,
        1 => prop.sigma_z += step,
        2 => prop.nu_p += step,
        _ => prop.sigma_nu += step,
    }
    let moved: Vec<(f64, [f64; 2])> = genes
        .iter()
        .map(|g| {
            if i < 2 {
                let rank = t3_positive_rank(g.lz, pop.z_p.exp(), pop.sigma_z.exp());
                (t3_positive_at_rank(rank, prop.z_p.exp(), prop.sigma_z.exp()), g.nu)
            } else {
                let scale = (0.5 * (pop.sigma_nu - prop.sigma_nu)).exp();
                (g.lz, g.nu.map(|n| prop.nu_p + (n - pop.nu_p) * scale))
            }
        })
        .collect();
    let mut log_ratio = prior(&prop) - prior(pop);
    for (g, &(lz, nu)) in genes.iter().zip(&moved) {
        if !lz.is_finite() {
            log_ratio = f64::NEG_INFINITY;
            break;
        }
        log_ratio += gene_ll(g, &prop, lz, nu) - gene_ll(g, pop, g.lz, g.nu);
    }
    let ok = accept(rng, log_ratio);
    if ok {
        *pop = prop;
        for (g, (lz, nu)) in genes.iter_mut().zip(moved) {
            g.lz = lz;
            g.nu = nu;
        }
    }
    ad.record(ok, adapting, tuning);
}

#[inline]
fn accept<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> bool {
    log_ratio == f64::INFINITY || log_ratio.is_finite() && rng.random::<f64>().ln() < log_ratio
}

/// Sampler over the given genes; cells may be empty, which leaves those genes under their prior.
fn sample(names: Vec<String>, data: &[[Vec<f64>; 2]], opts: &ScreenFitOptions) -> Result<(Chain, Vec<InteractionResult>)> {
    opts.hyper.validate()?;
    let h = opts.hyper.ihm;
    let tuning = &opts.tuning;
    let schedule = opts.schedule;
    let mean_of = |xs: &[f64]| if xs.is_empty() { f64::NAN } else { xs.iter().sum::<f64>() / xs.len() as f64 };

    let mut genes: Vec<Gene> = data
        .iter()
        .enumerate()
        .map(|(i, cells)| {
            let m0 = mean_of(&cells[0]);
            let lz = if m0 > 0.0 { m0.ln() } else { h.z_mu };
            let nu = [0, 1].map(|c| {
                let xs = &cells[c];
                if xs.len() < 2 {
                    return h.nu_mu;
                }
                let m = mean_of(xs);
                let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
                -(v.max(1e-8)).ln()
            });
            Gene {
                stats: [Stats::of(&cells[0]), Stats::of(&cells[1])],
                lz,
                nu,
                delta: false,
                gamma: 0.0,
                ad: [0; 4].map(|_| Adapter::new(tuning.initial_sd)),
                rng: rng_from(derive_indexed(opts.seed, "ihm-gene", i as u64)),
                sum_delta: 0.0,
                sum_strength: 0.0,
                sum_signed: 0.0,
                sum_control: 0.0,
                sum_query: 0.0,
            }
        })
        .collect();
    let grand = |c: usize| mean_of(&data.iter().flat_map(|d| d[c].iter().copied()).collect::<Vec<_>>());
    let ratio = grand(1) / grand(0);
    let mut pop = Pop {
        z_p: h.z_mu,
        sigma_z: h.eta_z,
        nu_p: h.nu_mu,
        sigma_nu: h.eta_nu,
        sigma_gamma: h.eta_gamma,
        alpha: if ratio > 0.0 && ratio.is_finite() { ratio.ln() } else { h.alpha_mu },
    };
    let mut pop_ad: Vec<Adapter> = NAMES.iter().map(|_| Adapter::new(tuning.initial_sd)).collect();
    let mut carry_ad = [0; 4].map(|_| Adapter::new(tuning.initial_sd));
    let mut rng = rng_from(derive_seed(opts.seed, "ihm-population"));
    let mut chain = Chain::new(NAMES.iter().map(|s| s.to_string()).collect(), &schedule, opts.seed);

    for iter in 0..schedule.total() {
        let adapting = iter < schedule.burn_in;
        if iter == schedule.burn_in {
            pop_ad.iter_mut().for_each(Adapter::reset_counts);
            for g in &mut genes {
                g.ad.iter_mut().for_each(Adapter::reset_counts);
            }
        }
        for g in &mut genes {
            g.sweep(&pop, &h, tuning, adapting);
        }

        let z_terms = |p: &Pop, genes: &[Gene]| {
            let (loc, prec) = (p.z_p.exp(), p.sigma_z.exp());
            let norm = t3_cdf(loc * prec.sqrt()).ln();
            genes.iter().map(|g| scaled_t3_logpdf(g.lz.exp(), loc, prec) - norm).sum::<f64>()
        };
        let gamma_terms = |p: &Pop, genes: &[Gene]| {
            let prec = p.sigma_gamma.exp();
            let norm = t3_cdf(prec.sqrt()).ln();
            genes.iter().map(|g| scaled_t3_logpdf(g.gamma.exp(), 1.0, prec) - norm).sum::<f64>()
        };
        let nu_terms = |p: &Pop, genes: &[Gene]| {
            let prec = p.sigma_nu.exp();
            genes.iter().flat_map(|g| g.nu).map(|n| normal_logpdf(n, p.nu_p, prec)).sum::<f64>()
        };
        let alpha_terms = |p: &Pop, genes: &[Gene]| {
            genes.iter().map(|g| g.stats[1].ll(g.nu[1], g.mean(p, 1, g.lz, g.gamma, g.delta))).sum::<f64>()
        };

        let mut step = |i: usize, pop: &mut Pop, set: &dyn Fn(&mut Pop, f64), get: &dyn Fn(&Pop) -> f64, target: &dyn Fn(&Pop) -> f64| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let mut prop = *pop;
            set(&mut prop, get(pop) + pop_ad[i].sd * z);
            let ok = accept(&mut rng, target(&prop) - target(pop));
            if ok {
                *pop = prop;
            }
            pop_ad[i].record(ok, adapting, tuning);
        };
        let g = &genes;
        step(0, &mut pop, &|p, x| p.z_p = x, &|p| p.z_p, &|p| normal_logpdf(p.z_p, h.z_mu, h.eta_z_p) + z_terms(p, g));
        step(1, &mut pop, &|p, x| p.sigma_z = x, &|p| p.sigma_z, &|p| normal_logpdf(p.sigma_z, h.eta_z, h.psi_z) + z_terms(p, g));
        step(3, &mut pop, &|p, x| p.sigma_nu = x, &|p| p.sigma_nu, &|p| normal_logpdf(p.sigma_nu, h.eta_nu, h.psi_nu) + nu_terms(p, g));
        step(4, &mut pop, &|p, x| p.sigma_gamma = x, &|p| p.sigma_gamma, &|p| {
            normal_logpdf(p.sigma_gamma, h.eta_gamma, h.psi_gamma) + gamma_terms(p, g)
        });
        step(5, &mut pop, &|p, x| p.alpha = x, &|p| p.alpha, &|p| normal_logpdf(p.alpha, h.alpha_mu, h.eta_alpha) + alpha_terms(p, g));

        // ν^p is conjugate.
        let s = pop.sigma_nu.exp();
        let n = 2.0 * genes.len() as f64;
        let post_prec = h.eta_nu_p + n * s;
        let post_mean = (h.eta_nu_p * h.nu_mu + s * genes.iter().flat_map(|g| g.nu).sum::<f64>()) / post_prec;
        let z: f64 = StandardNormal.sample(&mut rng);
        pop.nu_p = post_mean + z / post_prec.sqrt();

        for (i, ad) in carry_ad.iter_mut().enumerate() {
            carry_move(i, &mut pop, &mut genes, &h, ad, &mut rng, adapting, tuning);
        }
        for (ad, v) in pop_ad.iter_mut().zip([pop.z_p, pop.sigma_z, pop.nu_p, pop.sigma_nu]) {
            ad.observe(v);
        }

        for (i, ad) in pop_ad.iter().enumerate() {
            if i != 2 {
                ad.check(NAMES[i], iter, tuning)?;
            }
        }
        for (gi, gene) in genes.iter().enumerate() {
            for (k, ad) in gene.ad.iter().enumerate() {
                ad.check(&format!("{}[{}]", ["log_Z", "log_nu_0", "log_nu_1", "gamma"][k], names[gi]), iter, tuning)?;
            }
        }
        if schedule.keep(iter) {
            for g in &mut genes {
                g.accumulate(&pop);
            }
            chain.draws.push(vec![pop.z_p, pop.sigma_z, pop.nu_p, pop.sigma_nu, pop.sigma_gamma, pop.alpha]);
        }
    }
    for (i, ad) in pop_ad.iter().enumerate() {
        if i != 2 {
            chain.acceptance[i] = ad.acceptance_rate();
        }
    }
    let kept = chain.len().max(1) as f64;
    let results = genes
        .iter()
        .zip(names)
        .map(|(g, gene)| {
            let delta_mean = g.sum_delta / kept;
            InteractionResult {
                gene,
                delta_mean,
                gamma_strength: g.sum_strength / kept,
                omega_strength: None,
                control_fitness: g.sum_control / kept,
                query_fitness: g.sum_query / kept,
                classification: Classification::from_posterior(delta_mean, g.sum_signed / kept),
            }
        })
        .collect();
    Ok((chain, results))
}
