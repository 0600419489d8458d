//! Growth-level hierarchies: the separate model for one screen and the joint model
//! for a control/query pair, including its batch and transformation variants.
//!
//! Both share one engine. The separate model is the engine with a single condition
//! and no interaction terms. Sampler coordinates are the tabulated quantities:
//! repeat-level `log K`, `log r`; gene-level `K^o`, `r^o` (log scale), `log τ`, `log ν`;
//! population-level `log K^p`, `log r^p`, `log P`, `ν^p`, `τ^{·,p}` and the
//! log-precisions `log σ`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hyper::{HyperParams, JointHyper};
use super::{Classification, InteractionResult, ScreenFitOptions};
use crate::data::{Screen, ScreenDataset};
use crate::dist::{
    gamma_logpdf, normal_at_rank, normal_logpdf, normal_rank, sample_t3_positive, t3_positive_at_rank, t3_positive_rank, Rank, scaled_t3_logpdf, t3_cdf, truncated_logpdf,
    truncated_upper_logpdf,
};
use crate::error::{Error, Result};
use crate::growth::{fitness, logistic, FitnessScore, LogisticParams};
use crate::mcmc::{Adapter, Chain, Tuning};
use crate::rng::{derive_indexed, derive_seed, rng_from};

/// Upper truncation of repeat-level `log r` (doubling faster than about half an hour is implausible).
pub const LOG_R_MAX: f64 = 3.5;
/// Upper truncation of repeat-level `log K`: densities are scaled into (0, 1].
pub const LOG_K_MAX: f64 = 0.0;
/// Bound on cell-level log-precisions. Beyond it repeat-level values would sit closer
/// to their means than double precision resolves.
pub const LOG_PREC_MAX: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JhmVariant {
    Plain,
    /// Additive batch effects `κ_b`, `λ_b` on the repeat-level means.
    Batch,
    /// Repeat-level means divided by the scales `φ` (K) and `χ` (r).
    Transform,
}

/// Posterior means for one culture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub gene: String,
    pub condition: usize,
    pub repeat: String,
    pub k_mean: f64,
    pub r_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShmFit {
    pub chain: Chain,
    pub repeats: Vec<RepeatSummary>,
    pub p_mean: f64,
    /// Genes without any repeat.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JhmFit {
    pub chain: Chain,
    pub results: Vec<InteractionResult>,
    pub repeats: Vec<RepeatSummary>,
    pub p_mean: f64,
    /// Genes missing from one of the two conditions.
    pub skipped: Vec<String>,
}

/// Fitness of each culture's posterior-mean growth parameters and the shared `P̂`, keyed by gene.
pub fn shm_fitnesses(fit: &ShmFit) -> BTreeMap<String, Vec<FitnessScore>> {
    let mut out: BTreeMap<String, Vec<FitnessScore>> = BTreeMap::new();
    for rep in &fit.repeats {
        let score = fitness(&LogisticParams::new(rep.k_mean, rep.r_mean, fit.p_mean));
        out.entry(rep.gene.clone()).or_default().push(score);
    }
    out
}

pub fn fit_shm(screen: &Screen, opts: &ScreenFitOptions) -> Result<ShmFit> {
    screen.validate()?;
    let (genes, skipped): (Vec<&String>, Vec<&String>) = screen.genes.iter().map(|(g, _)| g).partition(|g| !screen.genes[*g].is_empty());
    if genes.is_empty() {
        return Err(Error::Data(format!("screen {:?} has no repeats", screen.label)));
    }
    let layout = Layout::build(&[screen], &genes, false)?;
    let mut engine = Engine::new(layout, opts, Setup { conditions: 1, interaction: false, variant: JhmVariant::Plain })?;
    engine.run()?;
    Ok(ShmFit {
        repeats: engine.repeat_summaries(),
        p_mean: engine.p_mean(),
        chain: engine.chain,
        skipped: skipped.into_iter().cloned().collect(),
    })
}

pub fn fit_jhm(data: &ScreenDataset, variant: JhmVariant, opts: &ScreenFitOptions) -> Result<JhmFit> {
    data.control.validate()?;
    data.query.validate()?;
    let (genes, skipped) = data.paired_genes();
    if genes.is_empty() {
        return Err(Error::Keying("no gene has repeats in both conditions".into()));
    }
    let gene_refs: Vec<&String> = genes.iter().collect();
    let layout = Layout::build(&[&data.control, &data.query], &gene_refs, variant == JhmVariant::Batch)?;
    let mut engine = Engine::new(layout, opts, Setup { conditions: 2, interaction: true, variant })?;
    engine.run()?;
    Ok(JhmFit {
        results: engine.interaction_results(),
        repeats: engine.repeat_summaries(),
        p_mean: engine.p_mean(),
        chain: engine.chain,
        skipped,
    })
}

struct Setup {
    conditions: usize,
    interaction: bool,
    variant: JhmVariant,
}

/// Observations and batch indices, separated from the mutable state.
struct Layout {
    genes: Vec<String>,
    /// `[gene][condition][repeat]`.
    cultures: Vec<Vec<Vec<Culture>>>,
    batches: Vec<String>,
}

struct Culture {
    id: String,
    batch: usize,
    times: Vec<f64>,
    ys: Vec<f64>,
}

impl Layout {
    fn build(screens: &[&Screen], genes: &[&String], use_batches: bool) -> Result<Self> {
        let mut batches: Vec<String> = Vec::new();
        if use_batches {
            let mut set = std::collections::BTreeSet::new();
            for s in screens {
                for g in genes {
                    for rep in s.genes.get(*g).into_iter().flatten() {
                        let b = rep.batch.as_ref().ok_or_else(|| {
                            Error::Keying(format!("gene {g}, repeat {} has no batch label", rep.id))
                        })?;
                        set.insert(b.clone());
                    }
                }
            }
            batches = set.into_iter().collect();
        }
        let cultures = genes
            .iter()
            .map(|g| {
                screens
                    .iter()
                    .map(|s| {
                        s.genes
                            .get(*g)
                            .into_iter()
                            .flatten()
                            .map(|rep| Culture {
                                id: rep.id.clone(),
                                batch: match &rep.batch {
                                    Some(b) if use_batches => batches.binary_search(b).expect("collected above"),
                                    _ => 0,
                                },
                                times: rep.curve.times.clone(),
                                ys: rep.curve.values.clone(),
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { genes: genes.iter().map(|g| g.to_string()).collect(), cultures, batches })
    }
}

#[inline]
fn ssr(c: &Culture, log_k: f64, log_r: f64, p: f64) -> f64 {
    let (k, r) = (log_k.exp(), log_r.exp());
    c.times.iter().zip(&c.ys).map(|(&t, &y)| (y - logistic(k, r, p, t)).powi(2)).sum()
}

/// Gaussian log-likelihood with log-precision `nu`, up to the `2π` constant.
#[inline]
fn gauss_ll(n: f64, nu: f64, ssr: f64) -> f64 {
    0.5 * n * nu - 0.5 * nu.exp() * ssr
}

/// Log-density of `x = log y` where `y` is a positive-truncated scaled t₃, without the truncation constant.
#[inline]
fn log_t3_positive_unnorm(x: f64, loc: f64, prec: f64) -> f64 {
    scaled_t3_logpdf(x.exp(), loc, prec) + x
}

#[inline]
fn ln_t3_mass(loc: f64, prec: f64) -> f64 {
    t3_cdf(loc * prec.sqrt()).ln()
}

#[inline]
fn accept<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> bool {
    log_ratio.is_finite() && rng.random::<f64>().ln() < log_ratio || log_ratio == f64::INFINITY
}

/// One random-walk update of a scalar against a target that is re-evaluated at both points.
///
/// The proposal SD is the adapted multiplier times `scale`, which may depend on any
/// coordinate except `x` itself, so the proposal stays symmetric.
fn rw<R: Rng + ?Sized>(
    rng: &mut R,
    ad: &mut Adapter,
    x: &mut f64,
    scale: f64,
    step: Step,
    target: impl Fn(f64) -> f64,
) -> bool {
    let z: f64 = StandardNormal.sample(rng);
    let prop = *x + ad.sd * scale * z;
    let new = target(prop);
    let ok = new > f64::NEG_INFINITY && accept(rng, new - target(*x));
    if ok {
        *x = prop;
    }
    ad.record(ok, step.adapting, step.tuning);
    ok
}

#[derive(Clone, Copy)]
struct Step<'a> {
    adapting: bool,
    keep: bool,
    tuning: &'a Tuning,
}

#[derive(Clone)]
struct RepState {
    log_k: f64,
    log_r: f64,
    ssr: f64,
    ad: [Adapter; 2],
    sum_k: f64,
    sum_r: f64,
}

#[derive(Clone)]
struct Cell {
    reps: Vec<RepState>,
    n: f64,
    tau_k: f64,
    tau_r: f64,
    nu: f64,
    ad: [Adapter; 3],
    /// Non-centred `log τ_K`, `log τ_r` moves; exempt from the stuck check.
    nc_ad: [Adapter; 2],
}

impl Cell {
    fn ssr(&self) -> f64 {
        self.reps.iter().map(|r| r.ssr).sum()
    }
}

#[derive(Clone, Default)]
struct GeneAcc {
    delta: f64,
    gamma_strength: f64,
    omega_strength: f64,
    delta_gamma: f64,
    delta_omega: f64,
    control_fitness: f64,
    query_fitness: f64,
}

struct GeneState {
    ko: f64,
    ro: f64,
    delta: bool,
    gamma: f64,
    omega: f64,
    cells: Vec<Cell>,
    ad: [Adapter; 4],
    /// Non-centred moves on `K^o`, `r^o`, `γ`, `ω`.
    nc_ad: [Adapter; 4],
    rng: ChaCha8Rng,
    acc: GeneAcc,
}

/// Population and condition-level coordinates; read-only during the gene sweep.
#[derive(Clone, Debug, PartialEq)]
pub(super) struct Population {
    pub log_k_p: f64,
    pub log_r_p: f64,
    pub log_p: f64,
    pub nu_p: f64,
    pub sigma_k_o: f64,
    pub sigma_r_o: f64,
    pub sigma_nu: f64,
    pub tau_k_p: Vec<f64>,
    pub sigma_tau_k: Vec<f64>,
    pub tau_r_p: Vec<f64>,
    pub sigma_tau_r: Vec<f64>,
    /// `α₀ = β₀ = 0` are stored so the means index uniformly by condition.
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub sigma_gamma: f64,
    pub sigma_omega: f64,
    pub kappa: Vec<f64>,
    pub lambda: Vec<f64>,
    pub phi: f64,
    pub chi: f64,
}

impl Population {
    /// Mean of repeat-level `log K` for gene-level `ko` in condition `c`, batch `b`.
    #[inline]
    pub fn k_mean(&self, c: usize, b: usize, ko: f64, interaction: f64) -> f64 {
        (self.alpha[c] + self.kappa[b] + ko + interaction) / self.phi
    }

    #[inline]
    pub fn r_mean(&self, c: usize, b: usize, ro: f64, interaction: f64) -> f64 {
        (self.beta[c] + self.lambda[b] + ro + interaction) / self.chi
    }
}

struct Engine {
    layout: Layout,
    genes: Vec<GeneState>,
    pop: Population,
    pop_ad: BTreeMap<String, Adapter>,
    /// Joint moves are auxiliary and exempt from the stuck-chain check.
    move_ad: BTreeMap<String, Adapter>,
    rng: ChaCha8Rng,
    hyper: HyperParams,
    opts: ScreenFitOptions,
    setup: Setup,
    chain: Chain,
    sum_p: f64,
    kept: usize,
}

/// The growth parameter a repeat-level coordinate belongs to.
#[derive(Clone, Copy)]
enum Side {
    K,
    R,
}

impl Side {
    fn bound(self) -> f64 {
        match self {
            Side::K => LOG_K_MAX,
            Side::R => LOG_R_MAX,
        }
    }

    fn value(self, r: &RepState) -> f64 {
        match self {
            Side::K => r.log_k,
            Side::R => r.log_r,
        }
    }

    fn mean(self, pop: &Population, c: usize, b: usize, gene: f64, inter: f64) -> f64 {
        match self {
            Side::K => pop.k_mean(c, b, gene, inter),
            Side::R => pop.r_mean(c, b, gene, inter),
        }
    }

    fn gene(self, g: &GeneState) -> f64 {
        match self {
            Side::K => g.ko,
            Side::R => g.ro,
        }
    }

    fn gene_mut(self, g: &mut GeneState) -> &mut f64 {
        match self {
            Side::K => &mut g.ko,
            Side::R => &mut g.ro,
        }
    }

    fn strength(self, g: &GeneState) -> f64 {
        match self {
            Side::K => g.gamma,
            Side::R => g.omega,
        }
    }

    fn strength_mut(self, g: &mut GeneState) -> &mut f64 {
        match self {
            Side::K => &mut g.gamma,
            Side::R => &mut g.omega,
        }
    }

    fn interaction(self, g: &GeneState, c: usize) -> f64 {
        match self {
            Side::K => g.interaction_k(c),
            Side::R => g.interaction_r(c),
        }
    }

    fn tau(self, cell: &Cell) -> f64 {
        match self {
            Side::K => cell.tau_k,
            Side::R => cell.tau_r,
        }
    }

    fn tau_mut(self, cell: &mut Cell) -> &mut f64 {
        match self {
            Side::K => &mut cell.tau_k,
            Side::R => &mut cell.tau_r,
        }
    }

    /// Location and precision of the gene-level t₃.
    fn gene_prior(self, pop: &Population) -> (f64, f64) {
        match self {
            Side::K => (pop.log_k_p.exp(), pop.sigma_k_o.exp()),
            Side::R => (pop.log_r_p.exp(), pop.sigma_r_o.exp()),
        }
    }

    /// Mean, precision and lower bound of the cell-level log-precision.
    fn tau_prior(self, pop: &Population, grp: usize) -> (f64, f64, f64, f64) {
        match self {
            Side::K => (pop.tau_k_p[grp], pop.sigma_tau_k[grp].exp(), 0.0, LOG_PREC_MAX),
            Side::R => (pop.tau_r_p[grp], pop.sigma_tau_r[grp].exp(), -LOG_PREC_MAX, LOG_PREC_MAX),
        }
    }

    fn strength_prior(self, pop: &Population) -> f64 {
        match self {
            Side::K => pop.sigma_gamma.exp(),
            Side::R => pop.sigma_omega.exp(),
        }
    }
}

/// Repeat values of one cell carried from the `(mean, precision)` pairs before to
/// those after (both given per culture by `params`), with their residual sums and
/// the change in log-likelihood. Fails to `-inf` if a value cannot be placed.
fn carry(
    cell: &Cell,
    cultures: &[Culture],
    side: Side,
    p: f64,
    params: impl Fn(&Culture) -> ((f64, f64), (f64, f64)),
) -> (Vec<(f64, f64)>, f64) {
    let mut d_ssr = 0.0;
    let mut vals = Vec::with_capacity(cell.reps.len());
    for (r, cu) in cell.reps.iter().zip(cultures) {
        let ((m0, p0), (m1, p1)) = params(cu);
        let rank = normal_rank(side.value(r), m0, p0, f64::NEG_INFINITY, side.bound());
        let x = normal_at_rank(rank, m1, p1, f64::NEG_INFINITY, side.bound());
        if !x.is_finite() {
            return (Vec::new(), f64::NEG_INFINITY);
        }
        let s = match side {
            Side::K => ssr(cu, x, r.log_r, p),
            Side::R => ssr(cu, r.log_k, x, p),
        };
        d_ssr += s - r.ssr;
        vals.push((x, s));
    }
    let dll = if d_ssr == 0.0 { 0.0 } else { -0.5 * cell.nu.exp() * d_ssr };
    (vals, dll)
}

fn commit(cell: &mut Cell, side: Side, vals: Vec<(f64, f64)>) {
    for (r, (x, s)) in cell.reps.iter_mut().zip(vals) {
        match side {
            Side::K => r.log_k = x,
            Side::R => r.log_r = x,
        }
        r.ssr = s;
    }
}

/// Repeat-level `log K` prior terms of one cell, including the truncation constants that move with the mean.
fn k_terms(cell: &Cell, cultures: &[Culture], pop: &Population, c: usize, ko: f64, inter: f64) -> f64 {
    k_terms_at(&cell.reps, cell.tau_k, cultures, pop, c, ko, inter)
}

fn r_terms(cell: &Cell, cultures: &[Culture], pop: &Population, c: usize, ro: f64, inter: f64) -> f64 {
    r_terms_at(&cell.reps, cell.tau_r, cultures, pop, c, ro, inter)
}

fn k_terms_at(reps: &[RepState], log_tau: f64, cultures: &[Culture], pop: &Population, c: usize, ko: f64, inter: f64) -> f64 {
    let prec = log_tau.exp();
    reps.iter()
        .zip(cultures)
        .map(|(r, cu)| truncated_upper_logpdf(r.log_k, pop.k_mean(c, cu.batch, ko, inter), prec, LOG_K_MAX))
        .sum()
}

fn r_terms_at(reps: &[RepState], log_tau: f64, cultures: &[Culture], pop: &Population, c: usize, ro: f64, inter: f64) -> f64 {
    let prec = log_tau.exp();
    reps.iter()
        .zip(cultures)
        .map(|(r, cu)| truncated_upper_logpdf(r.log_r, pop.r_mean(c, cu.batch, ro, inter), prec, LOG_R_MAX))
        .sum()
}

impl GeneState {
    fn scalars(&self) -> impl Iterator<Item = f64> + '_ {
        [self.ko, self.ro, self.gamma, self.omega].into_iter().chain(self.cells.iter().flat_map(|c| {
            [c.tau_k, c.tau_r, c.nu].into_iter().chain(c.reps.iter().flat_map(|r| [r.log_k, r.log_r, r.ssr]))
        }))
    }

    fn restore_scalars(&mut self, it: &mut impl Iterator<Item = f64>) {
        let mut next = || it.next().expect("saved alongside");
        self.ko = next();
        self.ro = next();
        self.gamma = next();
        self.omega = next();
        for c in &mut self.cells {
            c.tau_k = next();
            c.tau_r = next();
            c.nu = next();
            for r in &mut c.reps {
                r.log_k = next();
                r.log_r = next();
                r.ssr = next();
            }
        }
    }

    fn interaction_k(&self, c: usize) -> f64 {
        if c == 1 && self.delta {
            self.gamma
        } else {
            0.0
        }
    }

    fn interaction_r(&self, c: usize) -> f64 {
        if c == 1 && self.delta {
            self.omega
        } else {
            0.0
        }
    }

    fn sweep(&mut self, cultures: &[Vec<Culture>], pop: &Population, j: &JointHyper, interaction: bool, step: Step) {
        let p = pop.log_p.exp();
        let n_cond = self.cells.len();
        let inter_k: Vec<f64> = (0..n_cond).map(|c| self.interaction_k(c)).collect();
        let inter_r: Vec<f64> = (0..n_cond).map(|c| self.interaction_r(c)).collect();
        for c in 0..n_cond {
            let cell = &mut self.cells[c];
            let cus = &cultures[c];
            let (prec_k, prec_r, nu) = (cell.tau_k.exp(), cell.tau_r.exp(), cell.nu);
            let (scale_k, scale_r) = (prec_k.sqrt().recip(), prec_r.sqrt().recip());
            for (rep, cu) in cell.reps.iter_mut().zip(cus) {
                let n = cu.ys.len() as f64;
                let mu_k = pop.k_mean(c, cu.batch, self.ko, inter_k[c]);
                let mu_r = pop.r_mean(c, cu.batch, self.ro, inter_r[c]);

                let z: f64 = StandardNormal.sample(&mut self.rng);
                let prop = rep.log_k + rep.ad[0].sd * scale_k * z;
                let mut ok = false;
                if prop <= LOG_K_MAX {
                    let s = ssr(cu, prop, rep.log_r, p);
                    let lr = truncated_upper_logpdf(prop, mu_k, prec_k, LOG_K_MAX)
                        - truncated_upper_logpdf(rep.log_k, mu_k, prec_k, LOG_K_MAX)
                        + gauss_ll(n, nu, s)
                        - gauss_ll(n, nu, rep.ssr);
                    if accept(&mut self.rng, lr) {
                        rep.log_k = prop;
                        rep.ssr = s;
                        ok = true;
                    }
                }
                rep.ad[0].record(ok, step.adapting, step.tuning);

                let z: f64 = StandardNormal.sample(&mut self.rng);
                let prop = rep.log_r + rep.ad[1].sd * scale_r * z;
                let mut ok = false;
                if prop <= LOG_R_MAX {
                    let s = ssr(cu, rep.log_k, prop, p);
                    let lr = truncated_upper_logpdf(prop, mu_r, prec_r, LOG_R_MAX)
                        - truncated_upper_logpdf(rep.log_r, mu_r, prec_r, LOG_R_MAX)
                        + gauss_ll(n, nu, s)
                        - gauss_ll(n, nu, rep.ssr);
                    if accept(&mut self.rng, lr) {
                        rep.log_r = prop;
                        rep.ssr = s;
                        ok = true;
                    }
                }
                rep.ad[1].record(ok, step.adapting, step.tuning);
            }

            let grp = if pop.tau_k_p.len() > 1 { c } else { 0 };
            let (ko, ro) = (self.ko, self.ro);
            let (tkp, stk) = (pop.tau_k_p[grp], pop.sigma_tau_k[grp].exp());
            let (trp, str_) = (pop.tau_r_p[grp], pop.sigma_tau_r[grp].exp());
            let mut tau = cell.tau_k;
            rw(&mut self.rng, &mut cell.ad[0], &mut tau, stk.sqrt().recip().min(1.0), step, |x| {
                truncated_logpdf(x, tkp, stk, 0.0, LOG_PREC_MAX) + k_terms_at(&cell.reps, x, cus, pop, c, ko, inter_k[c])
            });
            cell.tau_k = tau;

            let mut tau = cell.tau_r;
            rw(&mut self.rng, &mut cell.ad[1], &mut tau, str_.sqrt().recip().min(1.0), step, |x| {
                truncated_logpdf(x, trp, str_, -LOG_PREC_MAX, LOG_PREC_MAX) + r_terms_at(&cell.reps, x, cus, pop, c, ro, inter_r[c])
            });
            cell.tau_r = tau;

            let (total, n) = (cell.ssr(), cell.n);
            let sn = pop.sigma_nu.exp();
            let mut nu = cell.nu;
            rw(&mut self.rng, &mut cell.ad[2], &mut nu, sn.sqrt().recip().min(1.0), step, |x| {
                truncated_logpdf(x, pop.nu_p, sn, -LOG_PREC_MAX, LOG_PREC_MAX) + gauss_ll(n, x, total)
            });
            cell.nu = nu;
        }

        let cells = &self.cells;
        let (loc, prec) = (pop.log_k_p.exp(), pop.sigma_k_o.exp());
        let scale = (prec.sqrt().recip() / loc).min((-0.5 * cells[0].tau_k).exp());
        rw(&mut self.rng, &mut self.ad[0], &mut self.ko, scale, step, |x| {
            log_t3_positive_unnorm(x, loc, prec)
                + (0..n_cond).map(|c| k_terms(&cells[c], &cultures[c], pop, c, x, inter_k[c])).sum::<f64>()
        });
        let (loc, prec) = (pop.log_r_p.exp(), pop.sigma_r_o.exp());
        let scale = (prec.sqrt().recip() / loc).min((-0.5 * cells[0].tau_r).exp());
        rw(&mut self.rng, &mut self.ad[1], &mut self.ro, scale, step, |x| {
            log_t3_positive_unnorm(x, loc, prec)
                + (0..n_cond).map(|c| r_terms(&cells[c], &cultures[c], pop, c, x, inter_r[c])).sum::<f64>()
        });

        if interaction {
            self.update_interaction(&cultures[1], pop, j, step);
        }
        self.noncentred(cultures, pop, interaction, step);
        if step.keep {
            self.accumulate(pop, interaction);
        }
    }

    /// Non-centred gene-level moves: the repeat-level values a gene or cell
    /// coordinate governs keep their rank while it moves, so the data and the
    /// coordinate's own prior decide.
    fn noncentred(&mut self, cultures: &[Vec<Culture>], pop: &Population, interaction: bool, step: Step) {
        let p = pop.log_p.exp();
        let n_cond = self.cells.len();
        for (i, side) in [Side::K, Side::R].into_iter().enumerate() {
            let (loc, prec) = side.gene_prior(pop);
            let cur = side.gene(self);
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let prop = cur + self.nc_ad[i].sd * (prec.sqrt().recip() / loc).min(10.0) * z;
            let mut lr = log_t3_positive_unnorm(prop, loc, prec) - log_t3_positive_unnorm(cur, loc, prec);
            let mut moved = Vec::with_capacity(n_cond);
            for c in 0..n_cond {
                let (inter, cell) = (side.interaction(self, c), &self.cells[c]);
                let tau = side.tau(cell).exp();
                let carried = carry(cell, &cultures[c], side, p, |cu| {
                    ((side.mean(pop, c, cu.batch, cur, inter), tau), (side.mean(pop, c, cu.batch, prop, inter), tau))
                });
                lr += carried.1;
                moved.push(carried.0);
            }
            let ok = accept(&mut self.rng, lr);
            if ok {
                *side.gene_mut(self) = prop;
                for (cell, vals) in self.cells.iter_mut().zip(moved) {
                    commit(cell, side, vals);
                }
            }
            self.nc_ad[i].record(ok, step.adapting, step.tuning);
        }

        for c in 0..n_cond {
            let grp = if pop.tau_k_p.len() > 1 { c } else { 0 };
            for (i, side) in [Side::K, Side::R].into_iter().enumerate() {
                let (m, prec, lower, upper) = side.tau_prior(pop, grp);
                let (gene, inter) = (side.gene(self), side.interaction(self, c));
                let cell = &self.cells[c];
                let cur = side.tau(cell);
                let z: f64 = StandardNormal.sample(&mut self.rng);
                let prop = cur + cell.nc_ad[i].sd * prec.sqrt().recip().min(10.0) * z;
                let mut ok = false;
                if prop >= lower && prop <= upper {
                    let (t0, t1) = (cur.exp(), prop.exp());
                    let (vals, dll) = carry(cell, &cultures[c], side, p, |cu| {
                        let mean = side.mean(pop, c, cu.batch, gene, inter);
                        ((mean, t0), (mean, t1))
                    });
                    let prior = |x| truncated_logpdf(x, m, prec, lower, upper);
                    if accept(&mut self.rng, prior(prop) - prior(cur) + dll) {
                        let cell = &mut self.cells[c];
                        *side.tau_mut(cell) = prop;
                        commit(cell, side, vals);
                        ok = true;
                    }
                }
                self.cells[c].nc_ad[i].record(ok, step.adapting, step.tuning);
            }
        }

        if interaction && self.delta {
            for (i, side) in [Side::K, Side::R].into_iter().enumerate() {
                let prec = side.strength_prior(pop);
                let (gene, cur) = (side.gene(self), side.strength(self));
                let z: f64 = StandardNormal.sample(&mut self.rng);
                let prop = cur + self.nc_ad[2 + i].sd * prec.sqrt().recip().min(10.0) * z;
                let cell = &self.cells[1];
                let tau = side.tau(cell).exp();
                let (vals, dll) = carry(cell, &cultures[1], side, p, |cu| {
                    ((side.mean(pop, 1, cu.batch, gene, cur), tau), (side.mean(pop, 1, cu.batch, gene, prop), tau))
                });
                let lr = log_t3_positive_unnorm(prop, 1.0, prec) - log_t3_positive_unnorm(cur, 1.0, prec) + dll;
                let ok = accept(&mut self.rng, lr);
                if ok {
                    *side.strength_mut(self) = prop;
                    commit(&mut self.cells[1], side, vals);
                }
                self.nc_ad[2 + i].record(ok, step.adapting, step.tuning);
            }
        }
    }

    /// Joint move on `(δ, γ, ω)`: refresh strengths from their priors when absent,
    /// draw `δ` from its full conditional, then move the strengths when present.
    fn update_interaction(&mut self, query: &[Culture], pop: &Population, j: &JointHyper, step: Step) {
        let (prec_g, prec_w) = (pop.sigma_gamma.exp(), pop.sigma_omega.exp());
        if !self.delta {
            self.gamma = sample_t3_positive(&mut self.rng, 1.0, prec_g).max(f64::MIN_POSITIVE).ln();
            self.omega = sample_t3_positive(&mut self.rng, 1.0, prec_w).max(f64::MIN_POSITIVE).ln();
        }
        let cell = &self.cells[1];
        let (ko, ro) = (self.ko, self.ro);
        let l1 = k_terms(cell, query, pop, 1, ko, self.gamma) + r_terms(cell, query, pop, 1, ro, self.omega);
        let l0 = k_terms(cell, query, pop, 1, ko, 0.0) + r_terms(cell, query, pop, 1, ro, 0.0);
        let logit = j.p.ln() - (-j.p).ln_1p() + l1 - l0;
        let prob = if logit.is_nan() { j.p } else { 1.0 / (1.0 + (-logit).exp()) };
        self.delta = self.rng.random::<f64>() < prob;

        if self.delta {
            let scale = prec_g.sqrt().recip().min((-0.5 * cell.tau_k).exp()).min(1.0);
            rw(&mut self.rng, &mut self.ad[2], &mut self.gamma, scale, step, |x| {
                log_t3_positive_unnorm(x, 1.0, prec_g) + k_terms(cell, query, pop, 1, ko, x)
            });
            let scale = prec_w.sqrt().recip().min((-0.5 * cell.tau_r).exp()).min(1.0);
            rw(&mut self.rng, &mut self.ad[3], &mut self.omega, scale, step, |x| {
                log_t3_positive_unnorm(x, 1.0, prec_w) + r_terms(cell, query, pop, 1, ro, x)
            });
        }
    }

    fn accumulate(&mut self, pop: &Population, interaction: bool) {
        for cell in &mut self.cells {
            for r in &mut cell.reps {
                r.sum_k += r.log_k.exp();
                r.sum_r += r.log_r.exp();
            }
        }
        let p = pop.log_p.exp();
        let (ko, ro) = (self.ko, self.ro);
        // Gene-level summaries leave batch effects out.
        let score = |c: usize, ik: f64, ir: f64| {
            let k = (pop.alpha[c] + ko + ik) / pop.phi;
            let r = (pop.beta[c] + ro + ir) / pop.chi;
            fitness(&LogisticParams::new(k.exp(), r.exp(), p)).product
        };
        let acc = &mut self.acc;
        acc.control_fitness += score(0, 0.0, 0.0);
        if interaction {
            let d = if self.delta { 1.0 } else { 0.0 };
            acc.delta += d;
            acc.gamma_strength += (d * self.gamma).exp();
            acc.omega_strength += (d * self.omega).exp();
            acc.delta_gamma += d * self.gamma;
            acc.delta_omega += d * self.omega;
            acc.query_fitness += score(1, d * self.gamma, d * self.omega);
        }
    }
}

impl Engine {
    fn new(layout: Layout, opts: &ScreenFitOptions, setup: Setup) -> Result<Self> {
        opts.hyper.validate()?;
        let h = &opts.hyper.growth;
        let groups = setup.conditions;
        let n_batches = layout.batches.len().max(1);
        let pop = Population {
            log_k_p: h.k_mu,
            log_r_p: h.r_mu,
            log_p: h.p_mu,
            nu_p: h.nu_mu,
            sigma_k_o: h.eta_k_o,
            sigma_r_o: h.eta_r_o,
            sigma_nu: h.eta_nu,
            tau_k_p: vec![h.tau_k_mu.max(0.0); groups],
            sigma_tau_k: vec![h.eta_tau_k; groups],
            tau_r_p: vec![h.tau_r_mu; groups],
            sigma_tau_r: vec![h.eta_tau_r; groups],
            alpha: [0.0; 2],
            beta: [0.0; 2],
            sigma_gamma: opts.hyper.joint.eta_gamma,
            sigma_omega: opts.hyper.joint.eta_omega,
            kappa: vec![0.0; n_batches],
            lambda: vec![0.0; n_batches],
            phi: 1.0,
            chi: 1.0,
        };
        let tuning = &opts.tuning;
        let p = pop.log_p.exp();
        let genes = layout
            .cultures
            .iter()
            .enumerate()
            .map(|(gi, conds)| {
                let cells: Vec<Cell> = conds
                    .iter()
                    .map(|cus| {
                        let reps: Vec<RepState> = cus
                            .iter()
                            .map(|cu| {
                                let top = cu.ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                                let log_k = if top.is_finite() { top.clamp(1e-3, 0.999).ln() } else { h.k_mu.min(-1e-3) };
                                let log_r = h.r_mu.min(LOG_R_MAX - 0.1);
                                RepState {
                                    log_k,
                                    log_r,
                                    ssr: ssr(cu, log_k, log_r, p),
                                    ad: [Adapter::new(tuning.initial_sd), Adapter::new(tuning.initial_sd)],
                                    sum_k: 0.0,
                                    sum_r: 0.0,
                                }
                            })
                            .collect();
                        let n = cus.iter().map(|c| c.ys.len()).sum::<usize>() as f64;
                        let total: f64 = reps.iter().map(|r| r.ssr).sum();
                        let nu = if n > 0.0 { (n / total.max(1e-12)).ln() } else { h.nu_mu };
                        let nu = nu.clamp(1.0 - LOG_PREC_MAX, LOG_PREC_MAX - 1.0);
                        Cell {
                            reps,
                            n,
                            tau_k: h.tau_k_mu.clamp(0.0, LOG_PREC_MAX),
                            tau_r: h.tau_r_mu.clamp(-LOG_PREC_MAX, LOG_PREC_MAX),
                            nu,
                            ad: [0; 3].map(|_| Adapter::new(tuning.initial_sd)),
                            nc_ad: [0; 2].map(|_| Adapter::new(tuning.initial_sd)),
                        }
                    })
                    .collect();
                let control = &cells[0].reps;
                let ko = if control.is_empty() {
                    h.k_mu
                } else {
                    control.iter().map(|r| r.log_k).sum::<f64>() / control.len() as f64
                };
                GeneState {
                    ko,
                    ro: h.r_mu,
                    delta: false,
                    gamma: 0.0,
                    omega: 0.0,
                    cells,
                    ad: [0; 4].map(|_| Adapter::new(tuning.initial_sd)),
                    nc_ad: [0; 4].map(|_| Adapter::new(tuning.initial_sd)),
                    rng: rng_from(derive_indexed(opts.seed, "gene", gi as u64)),
                    acc: GeneAcc::default(),
                }
            })
            .collect();
        let mut engine = Self {
            layout,
            genes,
            pop,
            pop_ad: BTreeMap::new(),
            move_ad: BTreeMap::new(),
            rng: rng_from(derive_seed(opts.seed, "population")),
            hyper: opts.hyper,
            opts: opts.clone(),
            setup,
            chain: Chain::new(Vec::new(), &opts.schedule, opts.seed),
            sum_p: 0.0,
            kept: 0,
        };
        engine.chain.names = engine.column_names();
        engine.chain.acceptance = vec![1.0; engine.chain.names.len()];
        Ok(engine)
    }

    fn run(&mut self) -> Result<()> {
        let schedule = self.opts.schedule;
        let tuning = self.opts.tuning.clone();
        for iter in 0..schedule.total() {
            let step = Step { adapting: iter < schedule.burn_in, keep: schedule.keep(iter), tuning: &tuning };
            if iter == schedule.burn_in {
                self.reset_counts();
            }
            {
                let pop = &self.pop;
                let cultures = &self.layout.cultures;
                let j = &self.hyper.joint;
                let interaction = self.setup.interaction;
                self.genes
                    .par_iter_mut()
                    .zip(cultures.par_iter())
                    .for_each(|(g, cu)| g.sweep(cu, pop, j, interaction, step));
            }
            self.population_sweep(step);
            self.check_stuck(iter)?;
            if step.keep {
                self.sum_p += self.pop.log_p.exp();
                self.kept += 1;
                let row = self.row();
                self.chain.draws.push(row);
            }
        }
        self.record_acceptance();
        Ok(())
    }

    fn adapter(&mut self, name: &str) -> Adapter {
        self.pop_ad.remove(name).unwrap_or_else(|| Adapter::new(self.opts.tuning.initial_sd))
    }

    /// Random-walk update of one population coordinate, selected by `get`/`set`.
    fn pop_rw(
        &mut self,
        name: &str,
        step: Step,
        get: impl Fn(&Population) -> f64,
        set: impl Fn(&mut Population, f64),
        target: impl Fn(&Population, &[GeneState], &Layout) -> f64,
    ) {
        let mut ad = self.adapter(name);
        let z: f64 = StandardNormal.sample(&mut self.rng);
        let mut prop = self.pop.clone();
        set(&mut prop, get(&self.pop) + ad.sd * z);
        let new = target(&prop, &self.genes, &self.layout);
        let ok = new > f64::NEG_INFINITY && accept(&mut self.rng, new - target(&self.pop, &self.genes, &self.layout));
        if ok {
            self.pop = prop;
        }
        ad.record(ok, step.adapting, step.tuning);
        self.pop_ad.insert(name.to_string(), ad);
    }

    fn population_sweep(&mut self, step: Step) {
        let h = self.hyper.growth;
        let j = self.hyper.joint;
        let v = self.hyper.variant;

        self.pop_rw("log_K_p", step, |p| p.log_k_p, |p, x| p.log_k_p = x, |p, g, _| normal_logpdf(p.log_k_p, h.k_mu, h.eta_k_p) + ko_terms(p, g));
        self.pop_rw("log_sigma_K_o", step, |p| p.sigma_k_o, |p, x| p.sigma_k_o = x, |p, g, _| {
            normal_logpdf(p.sigma_k_o, h.eta_k_o, h.psi_k_o) + ko_terms(p, g)
        });
        self.pop_rw("log_r_p", step, |p| p.log_r_p, |p, x| p.log_r_p = x, |p, g, _| normal_logpdf(p.log_r_p, h.r_mu, h.eta_r_p) + ro_terms(p, g));
        self.pop_rw("log_sigma_r_o", step, |p| p.sigma_r_o, |p, x| p.sigma_r_o = x, |p, g, _| {
            normal_logpdf(p.sigma_r_o, h.eta_r_o, h.psi_r_o) + ro_terms(p, g)
        });

        self.pop_rw("nu_p", step, |p| p.nu_p, |p, x| p.nu_p = x, |p, g, _| normal_logpdf(p.nu_p, h.nu_mu, h.eta_nu_p) + nu_terms(p, g));
        self.pop_rw("log_sigma_nu", step, |p| p.sigma_nu, |p, x| p.sigma_nu = x, |p, g, _| {
            normal_logpdf(p.sigma_nu, h.eta_nu, h.psi_nu) + nu_terms(p, g)
        });

        for grp in 0..self.pop.tau_k_p.len() {
            self.pop_rw(&format!("tau_K_p[{grp}]"), step, |p| p.tau_k_p[grp], |p, x| p.tau_k_p[grp] = x, |p, g, _| {
                normal_logpdf(p.tau_k_p[grp], h.tau_k_mu, h.eta_tau_k_p) + tau_terms(p, g, Side::K)
            });
            self.pop_rw(&format!("log_sigma_tau_K[{grp}]"), step, |p| p.sigma_tau_k[grp], |p, x| p.sigma_tau_k[grp] = x, |p, g, _| {
                normal_logpdf(p.sigma_tau_k[grp], h.eta_tau_k, h.psi_tau_k) + tau_terms(p, g, Side::K)
            });
            self.pop_rw(&format!("tau_r_p[{grp}]"), step, |p| p.tau_r_p[grp], |p, x| p.tau_r_p[grp] = x, |p, g, _| {
                normal_logpdf(p.tau_r_p[grp], h.tau_r_mu, h.eta_tau_r_p) + tau_terms(p, g, Side::R)
            });
            self.pop_rw(&format!("log_sigma_tau_r[{grp}]"), step, |p| p.sigma_tau_r[grp], |p, x| p.sigma_tau_r[grp] = x, |p, g, _| {
                normal_logpdf(p.sigma_tau_r[grp], h.eta_tau_r, h.psi_tau_r) + tau_terms(p, g, Side::R)
            });
        }

        self.update_p(step);
        self.joint_moves(step);

        if self.setup.interaction {
            self.pop_rw("alpha_1", step, |p| p.alpha[1], |p, x| p.alpha[1] = x, |p, g, l| {
                normal_logpdf(p.alpha[1], j.alpha_mu, j.eta_alpha) + all_k_terms(p, g, l, Some(1))
            });
            self.pop_rw("beta_1", step, |p| p.beta[1], |p, x| p.beta[1] = x, |p, g, l| {
                normal_logpdf(p.beta[1], j.beta_mu, j.eta_beta) + all_r_terms(p, g, l, Some(1))
            });
            self.pop_rw("log_sigma_gamma", step, |p| p.sigma_gamma, |p, x| p.sigma_gamma = x, |p, g, _| {
                let prec = p.sigma_gamma.exp();
                let norm = ln_t3_mass(1.0, prec);
                normal_logpdf(p.sigma_gamma, j.eta_gamma, j.psi_gamma)
                    + g.iter().map(|g| scaled_t3_logpdf(g.gamma.exp(), 1.0, prec) - norm).sum::<f64>()
            });
            self.pop_rw("log_sigma_omega", step, |p| p.sigma_omega, |p, x| p.sigma_omega = x, |p, g, _| {
                let prec = p.sigma_omega.exp();
                let norm = ln_t3_mass(1.0, prec);
                normal_logpdf(p.sigma_omega, j.eta_omega, j.psi_omega)
                    + g.iter().map(|g| scaled_t3_logpdf(g.omega.exp(), 1.0, prec) - norm).sum::<f64>()
            });
        }

        match self.setup.variant {
            JhmVariant::Plain => {}
            JhmVariant::Batch => {
                for b in 0..self.pop.kappa.len() {
                    self.pop_rw(&format!("kappa[{b}]"), step, |p| p.kappa[b], |p, x| p.kappa[b] = x, |p, g, l| {
                        normal_logpdf(p.kappa[b], v.kappa_p, v.eta_kappa) + batch_terms(p, g, l, b, true)
                    });
                    self.pop_rw(&format!("lambda[{b}]"), step, |p| p.lambda[b], |p, x| p.lambda[b] = x, |p, g, l| {
                        normal_logpdf(p.lambda[b], v.lambda_p, v.eta_lambda) + batch_terms(p, g, l, b, false)
                    });
                }
            }
            JhmVariant::Transform => {
                if v.phi_shape.is_finite() {
                    self.pop_rw("log_phi", step, |p| p.phi.ln(), |p, x| p.phi = x.exp(), |p, g, l| {
                        gamma_logpdf(p.phi, v.phi_shape, v.phi_scale) + p.phi.ln() + all_k_terms(p, g, l, None)
                    });
                }
                if v.chi_shape.is_finite() {
                    self.pop_rw("log_chi", step, |p| p.chi.ln(), |p, x| p.chi = x.exp(), |p, g, l| {
                        gamma_logpdf(p.chi, v.chi_shape, v.chi_scale) + p.chi.ln() + all_r_terms(p, g, l, None)
                    });
                }
            }
        }
    }

    /// Non-centred population moves: the gene-level coordinates a population
    /// parameter governs keep their rank while it moves, so only the prior and the
    /// repeat-level terms enter the ratio. They cross the funnels that the centred
    /// updates cannot when data are weak.
    fn joint_moves(&mut self, step: Step) {
        let hyper = self.hyper;
        let prior = move |p: &Population| pop_prior(p, &hyper);
        let k_side = move |p: &Population, g: &[GeneState], l: &Layout| prior(p) + all_k_terms(p, g, l, None);
        let r_side = move |p: &Population, g: &[GeneState], l: &Layout| prior(p) + all_r_terms(p, g, l, None);

        for (name, shift_loc) in [("log_K_p", true), ("log_sigma_K_o", false)] {
            self.joint_move(&format!("nc:{name}"), step, |p, genes, _, e| {
                let (loc, prec) = (p.log_k_p.exp(), p.sigma_k_o.exp());
                let ranks: Vec<Rank> = genes.iter().map(|g| t3_positive_rank(g.ko, loc, prec)).collect();
                if shift_loc {
                    p.log_k_p += e
                } else {
                    p.sigma_k_o += e
                }
                let (loc, prec) = (p.log_k_p.exp(), p.sigma_k_o.exp());
                genes.iter_mut().zip(ranks).for_each(|(g, r)| g.ko = t3_positive_at_rank(r, loc, prec));
                Some(0.0)
            }, k_side);
        }
        for (name, shift_loc) in [("log_r_p", true), ("log_sigma_r_o", false)] {
            self.joint_move(&format!("nc:{name}"), step, |p, genes, _, e| {
                let (loc, prec) = (p.log_r_p.exp(), p.sigma_r_o.exp());
                let ranks: Vec<Rank> = genes.iter().map(|g| t3_positive_rank(g.ro, loc, prec)).collect();
                if shift_loc {
                    p.log_r_p += e
                } else {
                    p.sigma_r_o += e
                }
                let (loc, prec) = (p.log_r_p.exp(), p.sigma_r_o.exp());
                genes.iter_mut().zip(ranks).for_each(|(g, r)| g.ro = t3_positive_at_rank(r, loc, prec));
                Some(0.0)
            }, r_side);
        }

        for grp in 0..self.pop.tau_k_p.len() {
            for shift_loc in [true, false] {
                let name = if shift_loc { "tau_K_p" } else { "log_sigma_tau_K" };
                self.joint_move(&format!("nc:{name}[{grp}]"), step, |p, genes, _, e| {
                    let params = |p: &Population| (p.tau_k_p[grp], p.sigma_tau_k[grp].exp());
                    carry_cells(p, genes, grp, |c| &mut c.tau_k, (0.0, LOG_PREC_MAX), params, |p| {
                        if shift_loc {
                            p.tau_k_p[grp] += e
                        } else {
                            p.sigma_tau_k[grp] += e
                        }
                    });
                    Some(0.0)
                }, k_side);
                let name = if shift_loc { "tau_r_p" } else { "log_sigma_tau_r" };
                self.joint_move(&format!("nc:{name}[{grp}]"), step, |p, genes, _, e| {
                    let params = |p: &Population| (p.tau_r_p[grp], p.sigma_tau_r[grp].exp());
                    carry_cells(p, genes, grp, |c| &mut c.tau_r, (-LOG_PREC_MAX, LOG_PREC_MAX), params, |p| {
                        if shift_loc {
                            p.tau_r_p[grp] += e
                        } else {
                            p.sigma_tau_r[grp] += e
                        }
                    });
                    Some(0.0)
                }, r_side);
            }
        }

        // Deeper versions of the moves above that also carry every repeat value, so the
        // repeat-level precisions cannot pin the gene level in place.
        let p_growth = self.pop.log_p.exp();
        for side in [Side::K, Side::R] {
            for shift_loc in [true, false] {
                let name = match (side, shift_loc) {
                    (Side::K, true) => "deep:log_K_p",
                    (Side::K, false) => "deep:log_sigma_K_o",
                    (Side::R, true) => "deep:log_r_p",
                    (Side::R, false) => "deep:log_sigma_r_o",
                };
                self.joint_move(name, step, |p, genes, layout, e| {
                    let before = p.clone();
                    let old = snapshot(side, genes);
                    let (loc, prec) = side.gene_prior(p);
                    let ranks: Vec<Rank> = genes.iter().map(|g| t3_positive_rank(side.gene(g), loc, prec)).collect();
                    match (side, shift_loc) {
                        (Side::K, true) => p.log_k_p += e,
                        (Side::K, false) => p.sigma_k_o += e,
                        (Side::R, true) => p.log_r_p += e,
                        (Side::R, false) => p.sigma_r_o += e,
                    }
                    let (loc, prec) = side.gene_prior(p);
                    genes.iter_mut().zip(ranks).for_each(|(g, r)| *side.gene_mut(g) = t3_positive_at_rank(r, loc, prec));
                    carry_repeats(side, &before, &old, p, genes, layout, p_growth).then_some(0.0)
                }, |p, g, _| prior(p) + likelihood(g));
            }
            for grp in 0..self.pop.tau_k_p.len() {
                for shift_loc in [true, false] {
                    let name = match (side, shift_loc) {
                        (Side::K, true) => format!("deep:tau_K_p[{grp}]"),
                        (Side::K, false) => format!("deep:log_sigma_tau_K[{grp}]"),
                        (Side::R, true) => format!("deep:tau_r_p[{grp}]"),
                        (Side::R, false) => format!("deep:log_sigma_tau_r[{grp}]"),
                    };
                    self.joint_move(&name, step, |p, genes, layout, e| {
                        let before = p.clone();
                        let old = snapshot(side, genes);
                        let (_, _, lower, upper) = side.tau_prior(p, grp);
                        let params = |p: &Population| {
                            let (m, prec, _, _) = side.tau_prior(p, grp);
                            (m, prec)
                        };
                        let change = |p: &mut Population| match (side, shift_loc) {
                            (Side::K, true) => p.tau_k_p[grp] += e,
                            (Side::K, false) => p.sigma_tau_k[grp] += e,
                            (Side::R, true) => p.tau_r_p[grp] += e,
                            (Side::R, false) => p.sigma_tau_r[grp] += e,
                        };
                        match side {
                            Side::K => carry_cells(p, genes, grp, |c| &mut c.tau_k, (lower, upper), params, change),
                            Side::R => carry_cells(p, genes, grp, |c| &mut c.tau_r, (lower, upper), params, change),
                        }
                        carry_repeats(side, &before, &old, p, genes, layout, p_growth).then_some(0.0)
                    }, |p, g, _| prior(p) + likelihood(g));
                }
            }
        }

        for shift_loc in [true, false] {
            let name = if shift_loc { "nu_p" } else { "log_sigma_nu" };
            self.joint_move(&format!("nc:{name}"), step, |p, genes, _, e| {
                let free = (-LOG_PREC_MAX, LOG_PREC_MAX);
                let ranks: Vec<Rank> = genes
                    .iter()
                    .flat_map(|g| g.cells.iter())
                    .map(|c| normal_rank(c.nu, p.nu_p, p.sigma_nu.exp(), free.0, free.1))
                    .collect();
                if shift_loc {
                    p.nu_p += e
                } else {
                    p.sigma_nu += e
                }
                for (c, r) in genes.iter_mut().flat_map(|g| g.cells.iter_mut()).zip(ranks) {
                    c.nu = normal_at_rank(r, p.nu_p, p.sigma_nu.exp(), free.0, free.1);
                }
                Some(0.0)
            }, |p, g, _| prior(p) + likelihood(g));
        }

        if self.setup.interaction {
            let p_growth = self.pop.log_p.exp();
            for side in [Side::K, Side::R] {
                let name = match side {
                    Side::K => "nc:alpha_1",
                    Side::R => "nc:beta_1",
                };
                self.joint_move(name, step, |p, genes, layout, e| {
                    let before = p.clone();
                    match side {
                        Side::K => p.alpha[1] += e,
                        Side::R => p.beta[1] += e,
                    }
                    for (g, cus) in genes.iter_mut().zip(&layout.cultures) {
                        let (gene, inter) = (side.gene(g), side.interaction(g, 1));
                        let cell = &g.cells[1];
                        let tau = side.tau(cell).exp();
                        let (vals, dll) = carry(cell, &cus[1], side, p_growth, |cu| {
                            ((side.mean(&before, 1, cu.batch, gene, inter), tau), (side.mean(p, 1, cu.batch, gene, inter), tau))
                        });
                        if dll == f64::NEG_INFINITY {
                            return None;
                        }
                        commit(&mut g.cells[1], side, vals);
                    }
                    Some(0.0)
                }, |p, g, _| prior(p) + likelihood(g));
            }
            self.joint_move("nc:log_sigma_gamma", step, |p, genes, _, e| {
                let ranks: Vec<Rank> = genes.iter().map(|g| t3_positive_rank(g.gamma, 1.0, p.sigma_gamma.exp())).collect();
                p.sigma_gamma += e;
                genes.iter_mut().zip(ranks).for_each(|(g, r)| g.gamma = t3_positive_at_rank(r, 1.0, p.sigma_gamma.exp()));
                Some(0.0)
            }, move |p, g, l| prior(p) + all_k_terms(p, g, l, Some(1)));
            self.joint_move("nc:log_sigma_omega", step, |p, genes, _, e| {
                let ranks: Vec<Rank> = genes.iter().map(|g| t3_positive_rank(g.omega, 1.0, p.sigma_omega.exp())).collect();
                p.sigma_omega += e;
                genes.iter_mut().zip(ranks).for_each(|(g, r)| g.omega = t3_positive_at_rank(r, 1.0, p.sigma_omega.exp()));
                Some(0.0)
            }, move |p, g, l| prior(p) + all_r_terms(p, g, l, Some(1)));
        }
    }

    /// Metropolis-Hastings on a deterministic transformation indexed by `ε`; `apply`
    /// returns the log-Jacobian, or `None` when the image leaves the support.
    fn joint_move(
        &mut self,
        name: &str,
        step: Step,
        apply: impl Fn(&mut Population, &mut [GeneState], &Layout, f64) -> Option<f64>,
        target: impl Fn(&Population, &[GeneState], &Layout) -> f64,
    ) {
        let mut ad = self.move_ad.remove(name).unwrap_or_else(|| Adapter::new(self.opts.tuning.initial_sd));
        let z: f64 = StandardNormal.sample(&mut self.rng);
        let before = target(&self.pop, &self.genes, &self.layout);
        let saved_pop = self.pop.clone();
        let saved: Vec<f64> = self.genes.iter().flat_map(GeneState::scalars).collect();
        let ok = match apply(&mut self.pop, &mut self.genes, &self.layout, ad.sd * z) {
            Some(log_jac) => {
                let after = target(&self.pop, &self.genes, &self.layout);
                after > f64::NEG_INFINITY && accept(&mut self.rng, after - before + log_jac)
            }
            None => false,
        };
        if !ok {
            self.pop = saved_pop;
            let mut it = saved.into_iter();
            for g in &mut self.genes {
                g.restore_scalars(&mut it);
            }
        }
        ad.record(ok, step.adapting, step.tuning);
        self.move_ad.insert(name.to_string(), ad);
    }

    /// `log P` moves every fitted curve, so it rescans all cultures.
    fn update_p(&mut self, step: Step) {
        let h = self.hyper.growth;
        let mut ad = self.adapter("log_P");
        let z: f64 = StandardNormal.sample(&mut self.rng);
        let prop = self.pop.log_p + ad.sd * z;
        let p_new = prop.exp();
        let cultures = &self.layout.cultures;
        let fresh: Vec<Vec<Vec<f64>>> = self
            .genes
            .par_iter()
            .zip(cultures.par_iter())
            .map(|(g, cu)| {
                g.cells
                    .iter()
                    .zip(cu)
                    .map(|(cell, cus)| cell.reps.iter().zip(cus).map(|(r, cu)| ssr(cu, r.log_k, r.log_r, p_new)).collect())
                    .collect()
            })
            .collect();
        let mut delta_ll = 0.0;
        for (g, fg) in self.genes.iter().zip(&fresh) {
            for (cell, fc) in g.cells.iter().zip(fg) {
                let old = cell.ssr();
                let new: f64 = fc.iter().sum();
                delta_ll += gauss_ll(cell.n, cell.nu, new) - gauss_ll(cell.n, cell.nu, old);
            }
        }
        let lr = normal_logpdf(prop, h.p_mu, h.eta_p) - normal_logpdf(self.pop.log_p, h.p_mu, h.eta_p) + delta_ll;
        let ok = accept(&mut self.rng, lr);
        if ok {
            self.pop.log_p = prop;
            for (g, fg) in self.genes.iter_mut().zip(fresh) {
                for (cell, fc) in g.cells.iter_mut().zip(fg) {
                    for (r, s) in cell.reps.iter_mut().zip(fc) {
                        r.ssr = s;
                    }
                }
            }
        }
        ad.record(ok, step.adapting, step.tuning);
        self.pop_ad.insert("log_P".into(), ad);
    }

    fn reset_counts(&mut self) {
        for ad in self.pop_ad.values_mut() {
            ad.reset_counts();
        }
        for g in &mut self.genes {
            g.ad.iter_mut().for_each(Adapter::reset_counts);
            for cell in &mut g.cells {
                cell.ad.iter_mut().for_each(Adapter::reset_counts);
                for r in &mut cell.reps {
                    r.ad.iter_mut().for_each(Adapter::reset_counts);
                }
            }
        }
    }

    /// A coordinate is stuck when its value has not changed over the rejection limit,
    /// whichever moves were tried on it.
    fn check_stuck(&mut self, iter: usize) -> Result<()> {
        let tuning = self.opts.tuning.clone();
        let values: BTreeMap<String, f64> = self.population_names().into_iter().zip(self.row()).collect();
        for (name, ad) in &mut self.pop_ad {
            if let Some(&v) = values.get(name) {
                ad.observe(v);
            }
            ad.check(name, iter, &tuning)?;
        }
        for (gi, g) in self.genes.iter_mut().enumerate() {
            let gene = &self.layout.genes[gi];
            let vals = [g.ko, g.ro, g.gamma, g.omega];
            for (i, ad) in g.ad.iter_mut().enumerate() {
                ad.observe(vals[i]);
                ad.check(&format!("{}[{gene}]", ["K_o", "r_o", "gamma", "omega"][i]), iter, &tuning)?;
            }
            for (c, cell) in g.cells.iter_mut().enumerate() {
                let vals = [cell.tau_k, cell.tau_r, cell.nu];
                for (i, ad) in cell.ad.iter_mut().enumerate() {
                    ad.observe(vals[i]);
                    ad.check(&format!("{}[{c},{gene}]", ["log_tau_K", "log_tau_r", "log_nu"][i]), iter, &tuning)?;
                }
                for (m, r) in cell.reps.iter_mut().enumerate() {
                    let vals = [r.log_k, r.log_r];
                    for (i, ad) in r.ad.iter_mut().enumerate() {
                        ad.observe(vals[i]);
                        ad.check(&format!("{}[{c},{gene},{m}]", ["log_K", "log_r"][i]), iter, &tuning)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn population_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["log_K_p", "log_sigma_K_o", "log_r_p", "log_sigma_r_o", "nu_p", "log_sigma_nu"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for grp in 0..self.pop.tau_k_p.len() {
            for n in ["tau_K_p", "log_sigma_tau_K", "tau_r_p", "log_sigma_tau_r"] {
                names.push(format!("{n}[{grp}]"));
            }
        }
        names.push("log_P".into());
        if self.setup.interaction {
            names.extend(["alpha_1", "beta_1", "log_sigma_gamma", "log_sigma_omega"].map(String::from));
        }
        match self.setup.variant {
            JhmVariant::Plain => {}
            JhmVariant::Batch => {
                for b in 0..self.pop.kappa.len() {
                    names.push(format!("kappa[{b}]"));
                    names.push(format!("lambda[{b}]"));
                }
            }
            JhmVariant::Transform => {
                names.push("phi".into());
                names.push("chi".into());
            }
        }
        names
    }

    fn column_names(&self) -> Vec<String> {
        let mut names = self.population_names();
        if self.opts.full_trace {
            for (gi, g) in self.genes.iter().enumerate() {
                let gene = &self.layout.genes[gi];
                names.push(format!("K_o[{gene}]"));
                names.push(format!("r_o[{gene}]"));
                if self.setup.interaction {
                    names.push(format!("delta[{gene}]"));
                    names.push(format!("gamma[{gene}]"));
                    names.push(format!("omega[{gene}]"));
                }
                for (c, cell) in g.cells.iter().enumerate() {
                    names.push(format!("log_tau_K[{c},{gene}]"));
                    names.push(format!("log_tau_r[{c},{gene}]"));
                    names.push(format!("log_nu[{c},{gene}]"));
                    for m in 0..cell.reps.len() {
                        names.push(format!("log_K[{c},{gene},{m}]"));
                        names.push(format!("log_r[{c},{gene},{m}]"));
                    }
                }
            }
        }
        names
    }

    fn row(&self) -> Vec<f64> {
        let p = &self.pop;
        let mut row = vec![p.log_k_p, p.sigma_k_o, p.log_r_p, p.sigma_r_o, p.nu_p, p.sigma_nu];
        for grp in 0..p.tau_k_p.len() {
            row.extend([p.tau_k_p[grp], p.sigma_tau_k[grp], p.tau_r_p[grp], p.sigma_tau_r[grp]]);
        }
        row.push(p.log_p);
        if self.setup.interaction {
            row.extend([p.alpha[1], p.beta[1], p.sigma_gamma, p.sigma_omega]);
        }
        match self.setup.variant {
            JhmVariant::Plain => {}
            JhmVariant::Batch => {
                for b in 0..p.kappa.len() {
                    row.push(p.kappa[b]);
                    row.push(p.lambda[b]);
                }
            }
            JhmVariant::Transform => row.extend([p.phi, p.chi]),
        }
        if self.opts.full_trace {
            for g in &self.genes {
                row.push(g.ko);
                row.push(g.ro);
                if self.setup.interaction {
                    row.push(if g.delta { 1.0 } else { 0.0 });
                    row.push(g.gamma);
                    row.push(g.omega);
                }
                for cell in &g.cells {
                    row.extend([cell.tau_k, cell.tau_r, cell.nu]);
                    for r in &cell.reps {
                        row.push(r.log_k);
                        row.push(r.log_r);
                    }
                }
            }
        }
        row
    }

    fn record_acceptance(&mut self) {
        for (i, name) in self.chain.names.clone().iter().enumerate() {
            if let Some(ad) = self.pop_ad.get(name) {
                self.chain.acceptance[i] = ad.acceptance_rate();
            }
        }
        let names = self.chain.names.clone();
        let mut set = |name: String, ad: &Adapter| {
            if let Some(i) = names.iter().position(|n| *n == name) {
                self.chain.acceptance[i] = ad.acceptance_rate();
            }
        };
        if self.opts.full_trace {
            for (gi, g) in self.genes.iter().enumerate() {
                let gene = &self.layout.genes[gi];
                set(format!("K_o[{gene}]"), &g.ad[0]);
                set(format!("r_o[{gene}]"), &g.ad[1]);
                for (c, cell) in g.cells.iter().enumerate() {
                    set(format!("log_tau_K[{c},{gene}]"), &cell.ad[0]);
                    set(format!("log_tau_r[{c},{gene}]"), &cell.ad[1]);
                    set(format!("log_nu[{c},{gene}]"), &cell.ad[2]);
                    for (m, r) in cell.reps.iter().enumerate() {
                        set(format!("log_K[{c},{gene},{m}]"), &r.ad[0]);
                        set(format!("log_r[{c},{gene},{m}]"), &r.ad[1]);
                    }
                }
            }
        }
        for (key, col) in [("log_phi", "phi"), ("log_chi", "chi")] {
            if let (Some(ad), Some(i)) = (self.pop_ad.get(key), names.iter().position(|n| n == col)) {
                self.chain.acceptance[i] = ad.acceptance_rate();
            }
        }
    }

    fn p_mean(&self) -> f64 {
        self.sum_p / self.kept.max(1) as f64
    }

    fn repeat_summaries(&self) -> Vec<RepeatSummary> {
        let n = self.kept.max(1) as f64;
        let mut out = Vec::new();
        for (gi, g) in self.genes.iter().enumerate() {
            for (c, cell) in g.cells.iter().enumerate() {
                for (r, cu) in cell.reps.iter().zip(&self.layout.cultures[gi][c]) {
                    out.push(RepeatSummary {
                        gene: self.layout.genes[gi].clone(),
                        condition: c,
                        repeat: cu.id.clone(),
                        k_mean: r.sum_k / n,
                        r_mean: r.sum_r / n,
                    });
                }
            }
        }
        out
    }

    fn interaction_results(&self) -> Vec<InteractionResult> {
        let n = self.kept.max(1) as f64;
        self.genes
            .iter()
            .enumerate()
            .map(|(gi, g)| {
                let a = &g.acc;
                let delta_mean = a.delta / n;
                InteractionResult {
                    gene: self.layout.genes[gi].clone(),
                    delta_mean,
                    gamma_strength: a.gamma_strength / n,
                    omega_strength: Some(a.omega_strength / n),
                    control_fitness: a.control_fitness / n,
                    query_fitness: a.query_fitness / n,
                    classification: Classification::from_posterior(delta_mean, a.delta_omega / n),
                }
            })
            .collect()
    }
}

fn group_of(p: &Population, c: usize) -> usize {
    if p.tau_k_p.len() > 1 {
        c
    } else {
        0
    }
}

/// Prior log-density of every population coordinate the joint moves can touch.
fn pop_prior(p: &Population, hyper: &HyperParams) -> f64 {
    let (h, j) = (&hyper.growth, &hyper.joint);
    let mut lp = normal_logpdf(p.log_k_p, h.k_mu, h.eta_k_p)
        + normal_logpdf(p.log_r_p, h.r_mu, h.eta_r_p)
        + normal_logpdf(p.nu_p, h.nu_mu, h.eta_nu_p)
        + normal_logpdf(p.sigma_k_o, h.eta_k_o, h.psi_k_o)
        + normal_logpdf(p.sigma_r_o, h.eta_r_o, h.psi_r_o)
        + normal_logpdf(p.sigma_nu, h.eta_nu, h.psi_nu)
        + normal_logpdf(p.sigma_gamma, j.eta_gamma, j.psi_gamma)
        + normal_logpdf(p.sigma_omega, j.eta_omega, j.psi_omega)
        + normal_logpdf(p.alpha[1], j.alpha_mu, j.eta_alpha)
        + normal_logpdf(p.beta[1], j.beta_mu, j.eta_beta);
    for g in 0..p.tau_k_p.len() {
        lp += normal_logpdf(p.tau_k_p[g], h.tau_k_mu, h.eta_tau_k_p)
            + normal_logpdf(p.sigma_tau_k[g], h.eta_tau_k, h.psi_tau_k)
            + normal_logpdf(p.tau_r_p[g], h.tau_r_mu, h.eta_tau_r_p)
            + normal_logpdf(p.sigma_tau_r[g], h.eta_tau_r, h.psi_tau_r);
    }
    lp
}

/// Density of the log-scale coordinates `K^o_l` (positive-truncated t₃ on the natural scale plus Jacobian).
fn ko_terms(p: &Population, genes: &[GeneState]) -> f64 {
    let (loc, prec) = (p.log_k_p.exp(), p.sigma_k_o.exp());
    let norm = ln_t3_mass(loc, prec);
    genes.iter().map(|g| log_t3_positive_unnorm(g.ko, loc, prec) - norm).sum()
}

fn ro_terms(p: &Population, genes: &[GeneState]) -> f64 {
    let (loc, prec) = (p.log_r_p.exp(), p.sigma_r_o.exp());
    let norm = ln_t3_mass(loc, prec);
    genes.iter().map(|g| log_t3_positive_unnorm(g.ro, loc, prec) - norm).sum()
}

/// Carry one precision coordinate of every cell in group `grp` to the population
/// state produced by `change`, holding each at its rank.
fn carry_cells(
    p: &mut Population,
    genes: &mut [GeneState],
    grp: usize,
    field: impl Fn(&mut Cell) -> &mut f64,
    (lower, upper): (f64, f64),
    params: impl Fn(&Population) -> (f64, f64),
    change: impl FnOnce(&mut Population),
) {
    let (m, prec) = params(p);
    let in_grp = |p: &Population, c: usize| group_of(p, c) == grp;
    let ranks: Vec<Rank> = genes
        .iter_mut()
        .flat_map(|g| g.cells.iter_mut().enumerate())
        .filter(|(c, _)| in_grp(p, *c))
        .map(|(_, cell)| normal_rank(*field(cell), m, prec, lower, upper))
        .collect();
    change(p);
    let (m, prec) = params(p);
    let cells = genes.iter_mut().flat_map(|g| g.cells.iter_mut().enumerate()).filter(|(c, _)| in_grp(p, *c));
    for ((_, cell), r) in cells.zip(ranks) {
        *field(cell) = normal_at_rank(r, m, prec, lower, upper);
    }
}

/// Gene-level value and cell log-precisions of one side, per gene.
fn snapshot(side: Side, genes: &[GeneState]) -> Vec<(f64, Vec<f64>)> {
    genes.iter().map(|g| (side.gene(g), g.cells.iter().map(|c| side.tau(c)).collect())).collect()
}

/// Carry the repeat values of one side from the state recorded in `before` and `old`
/// to the current population and gene state, each held at its rank. False if a value cannot be placed.
fn carry_repeats(
    side: Side,
    before: &Population,
    old: &[(f64, Vec<f64>)],
    p: &Population,
    genes: &mut [GeneState],
    layout: &Layout,
    p_growth: f64,
) -> bool {
    for ((g, cus), (gene_old, taus_old)) in genes.iter_mut().zip(&layout.cultures).zip(old) {
        let gene_new = side.gene(g);
        for c in 0..g.cells.len() {
            let inter = side.interaction(g, c);
            let cell = &g.cells[c];
            let (t0, t1) = (taus_old[c].exp(), side.tau(cell).exp());
            let (vals, dll) = carry(cell, &cus[c], side, p_growth, |cu| {
                ((side.mean(before, c, cu.batch, *gene_old, inter), t0), (side.mean(p, c, cu.batch, gene_new, inter), t1))
            });
            if dll == f64::NEG_INFINITY {
                return false;
            }
            commit(&mut g.cells[c], side, vals);
        }
    }
    true
}

/// Prior density of every cell-level log-precision on one side.
fn tau_terms(p: &Population, genes: &[GeneState], side: Side) -> f64 {
    genes
        .iter()
        .flat_map(|g| g.cells.iter().enumerate())
        .map(|(c, cell)| {
            let (m, prec, lower, upper) = side.tau_prior(p, group_of(p, c));
            let x = match side {
                Side::K => cell.tau_k,
                Side::R => cell.tau_r,
            };
            truncated_logpdf(x, m, prec, lower, upper)
        })
        .sum()
}

fn nu_terms(p: &Population, genes: &[GeneState]) -> f64 {
    let prec = p.sigma_nu.exp();
    genes
        .iter()
        .flat_map(|g| g.cells.iter())
        .map(|c| truncated_logpdf(c.nu, p.nu_p, prec, -LOG_PREC_MAX, LOG_PREC_MAX))
        .sum()
}

/// Gaussian likelihood of all data from cached residual sums.
fn likelihood(genes: &[GeneState]) -> f64 {
    genes.iter().flat_map(|g| g.cells.iter()).map(|c| gauss_ll(c.n, c.nu, c.ssr())).sum()
}

/// Repeat-level `log K` terms over all cultures, or over one condition.
fn all_k_terms(p: &Population, genes: &[GeneState], layout: &Layout, only: Option<usize>) -> f64 {
    genes
        .iter()
        .zip(&layout.cultures)
        .map(|(g, cus)| {
            (0..g.cells.len())
                .filter(|c| only.is_none_or(|o| o == *c))
                .map(|c| k_terms(&g.cells[c], &cus[c], p, c, g.ko, g.interaction_k(c)))
                .sum::<f64>()
        })
        .sum()
}

fn all_r_terms(p: &Population, genes: &[GeneState], layout: &Layout, only: Option<usize>) -> f64 {
    genes
        .iter()
        .zip(&layout.cultures)
        .map(|(g, cus)| {
            (0..g.cells.len())
                .filter(|c| only.is_none_or(|o| o == *c))
                .map(|c| r_terms(&g.cells[c], &cus[c], p, c, g.ro, g.interaction_r(c)))
                .sum::<f64>()
        })
        .sum()
}

/// Repeat-level terms of the cultures in batch `b`.
fn batch_terms(p: &Population, genes: &[GeneState], layout: &Layout, b: usize, k: bool) -> f64 {
    let mut total = 0.0;
    for (g, cus) in genes.iter().zip(&layout.cultures) {
        for (c, cell) in g.cells.iter().enumerate() {
            for (r, cu) in cell.reps.iter().zip(&cus[c]) {
                if cu.batch != b {
                    continue;
                }
                total += if k {
                    truncated_upper_logpdf(r.log_k, p.k_mean(c, b, g.ko, g.interaction_k(c)), cell.tau_k.exp(), LOG_K_MAX)
                } else {
                    truncated_upper_logpdf(r.log_r, p.r_mean(c, b, g.ro, g.interaction_r(c)), cell.tau_r.exp(), LOG_R_MAX)
                };
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::hyper::GrowthHyper;

    fn pop() -> Population {
        Population {
            log_k_p: -2.0,
            log_r_p: 1.0,
            log_p: -9.0,
            nu_p: 10.0,
            sigma_k_o: 0.0,
            sigma_r_o: 0.0,
            sigma_nu: 0.0,
            tau_k_p: vec![2.0; 2],
            sigma_tau_k: vec![2.0; 2],
            tau_r_p: vec![3.0; 2],
            sigma_tau_r: vec![3.0; 2],
            alpha: [0.0, -0.3],
            beta: [0.0, 0.2],
            sigma_gamma: 0.0,
            sigma_omega: 0.0,
            kappa: vec![0.0],
            lambda: vec![0.0],
            phi: 1.0,
            chi: 1.0,
        }
    }

    #[test]
    fn query_means_are_shifted_control_means_without_interaction() {
        let p = pop();
        for ko in [-3.0, -2.1, -0.5] {
            assert_eq!(p.k_mean(1, 0, ko, 0.0), p.alpha[1] + p.k_mean(0, 0, ko, 0.0));
            assert_eq!(p.r_mean(1, 0, ko, 0.0), p.beta[1] + p.r_mean(0, 0, ko, 0.0));
        }
        assert_eq!(p.alpha[0], 0.0);
        assert_eq!(p.beta[0], 0.0);
    }

    use crate::data::{GrowthCurve, Repeat};
    use crate::mcmc::Schedule;
    use crate::testutil::{ks_pvalue, normal_cdf};

    fn screen(label: &str, genes: &[(&str, Vec<GrowthCurve>)]) -> Screen {
        let mut s = Screen::new(label);
        for (g, curves) in genes {
            let reps = curves
                .iter()
                .enumerate()
                .map(|(m, c)| Repeat { id: (m + 1).to_string(), batch: Some(format!("b{}", m % 2)), curve: c.clone() })
                .collect();
            s.genes.insert(g.to_string(), reps);
        }
        s
    }

    fn opts(burn: usize, thin: usize, n: usize) -> ScreenFitOptions {
        ScreenFitOptions { schedule: Schedule::new(burn, thin, n).unwrap(), full_trace: true, ..Default::default() }
    }

    fn curve(k: f64, r: f64, p: f64, times: &[f64]) -> GrowthCurve {
        GrowthCurve::new(times.to_vec(), times.iter().map(|&t| logistic(k, r, p, t)).collect()).unwrap()
    }

    fn scan_truncations(chain: &Chain) {
        for (i, name) in chain.names.iter().enumerate() {
            let col = chain.column_at(i);
            let bound_ok = |f: &dyn Fn(f64) -> bool| col.iter().all(|x| f(*x));
            if name.starts_with("log_K[") {
                assert!(bound_ok(&|x| x <= LOG_K_MAX), "{name}");
            } else if name.starts_with("log_r[") {
                assert!(bound_ok(&|x| x <= LOG_R_MAX), "{name}");
            } else if name.starts_with("log_tau_K[") {
                assert!(bound_ok(&|x| (0.0..=LOG_PREC_MAX).contains(&x)), "{name}");
            } else if name.starts_with("log_tau_r[") || name.starts_with("log_nu[") {
                assert!(bound_ok(&|x| x.abs() <= LOG_PREC_MAX), "{name}");
            } else if name.starts_with("delta[") {
                assert!(bound_ok(&|x| x == 0.0 || x == 1.0), "{name}");
            } else if name == "phi" || name == "chi" {
                assert!(bound_ok(&|x| x > 0.0), "{name}");
            }
            assert!(col.iter().all(|x| x.is_finite()), "{name}");
        }
    }

    #[test]
    fn separate_model_recovers_its_priors_without_data() {
        let empty = GrowthCurve::default();
        let s = screen("c", &[("a", vec![empty.clone(), empty.clone()]), ("b", vec![empty.clone(), empty])]);
        let fit = fit_shm(&s, &opts(5000, 40, 2500)).unwrap();
        scan_truncations(&fit.chain);
        let h = GrowthHyper::default();
        for (name, mean, prec) in [
            ("log_K_p", h.k_mu, h.eta_k_p),
            ("log_r_p", h.r_mu, h.eta_r_p),
            ("log_P", h.p_mu, h.eta_p),
            ("nu_p", h.nu_mu, h.eta_nu_p),
            ("log_sigma_K_o", h.eta_k_o, h.psi_k_o),
            ("log_sigma_r_o", h.eta_r_o, h.psi_r_o),
            ("log_sigma_nu", h.eta_nu, h.psi_nu),
            ("tau_K_p[0]", h.tau_k_mu, h.eta_tau_k_p),
            ("tau_r_p[0]", h.tau_r_mu, h.eta_tau_r_p),
            ("log_sigma_tau_K[0]", h.eta_tau_k, h.psi_tau_k),
            ("log_sigma_tau_r[0]", h.eta_tau_r, h.psi_tau_r),
        ] {
            let col = fit.chain.column(name).unwrap();
            let p = ks_pvalue(&col, normal_cdf(mean, prec));
            assert!(p > 0.01, "{name}: KS p = {p}");
        }
    }

    #[test]
    fn joint_model_recovers_its_priors_without_data() {
        let empty = GrowthCurve::default();
        let genes = [("a", vec![empty.clone(), empty.clone()]), ("b", vec![empty.clone()]), ("c", vec![empty])];
        let data = ScreenDataset { control: screen("c", &genes), query: screen("q", &genes) };
        let fit = fit_jhm(&data, JhmVariant::Plain, &opts(5000, 40, 2500)).unwrap();
        scan_truncations(&fit.chain);
        let (h, j) = (GrowthHyper::default(), JointHyper::default());
        for (name, mean, prec) in [
            ("log_K_p", h.k_mu, h.eta_k_p),
            ("alpha_1", j.alpha_mu, j.eta_alpha),
            ("beta_1", j.beta_mu, j.eta_beta),
            ("log_sigma_gamma", j.eta_gamma, j.psi_gamma),
            ("log_sigma_omega", j.eta_omega, j.psi_omega),
            ("tau_K_p[1]", h.tau_k_mu, h.eta_tau_k_p),
        ] {
            let p = ks_pvalue(&fit.chain.column(name).unwrap(), normal_cdf(mean, prec));
            assert!(p > 0.01, "{name}: KS p = {p}");
        }
        let deltas: Vec<f64> = fit.results.iter().map(|r| r.delta_mean).collect();
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        assert!((mean - j.p).abs() < 0.02, "{deltas:?}");
    }

    #[test]
    fn noise_free_single_culture_is_recovered() {
        let times: Vec<f64> = (0..25).map(|i| 0.25 * i as f64).collect();
        let s = screen("c", &[("a", vec![curve(0.15, 3.0, 1.19e-4, &times)])]);
        let fit = fit_shm(&s, &opts(20_000, 10, 1000)).unwrap();
        let rep = &fit.repeats[0];
        assert!((rep.k_mean / 0.15 - 1.0).abs() < 0.01, "K {}", rep.k_mean);
        assert!((rep.r_mean / 3.0 - 1.0).abs() < 0.01, "r {}", rep.r_mean);
        let f = shm_fitnesses(&fit);
        assert_eq!(f["a"].len(), 1);
        assert!(f["a"][0].product > 0.0);
    }

    #[test]
    fn dead_culture_respects_the_growth_rate_bound() {
        let times: Vec<f64> = (0..10).map(|i| 0.6 * i as f64).collect();
        let flat = GrowthCurve::new(times.clone(), vec![1.19e-4; 10]).unwrap();
        let alive = curve(0.12, 2.5, 1.19e-4, &times);
        let s = screen("c", &[("dead", vec![flat.clone(), flat]), ("live", vec![alive.clone(), alive])]);
        let fit = fit_shm(&s, &opts(4000, 5, 600)).unwrap();
        scan_truncations(&fit.chain);
        let dead: Vec<&RepeatSummary> = fit.repeats.iter().filter(|r| r.gene == "dead").collect();
        let live: Vec<&RepeatSummary> = fit.repeats.iter().filter(|r| r.gene == "live").collect();
        assert!(dead.iter().all(|d| d.r_mean < 1e-2 * live[0].r_mean), "{dead:?} {live:?}");
        assert!(dead.iter().all(|d| d.r_mean <= LOG_R_MAX.exp()));
        let f = shm_fitnesses(&fit);
        assert!(f["dead"].iter().all(|d| d.product < 1e-2 * f["live"][0].product));
    }

    fn small_pair(rename: impl Fn(usize) -> String) -> (ScreenDataset, String) {
        let times: Vec<f64> = (0..10).map(|i| 0.6 * i as f64).collect();
        let p = 1.19e-4;
        let mut control = Vec::new();
        let mut query = Vec::new();
        for g in 0..5 {
            let (k, r) = (0.12 + 0.005 * g as f64, 2.5 + 0.1 * g as f64);
            let factor = if g == 2 { 0.4 } else { 1.0 };
            let wobble = |m: usize| 1.0 + 0.02 * (m as f64 - 1.0);
            control.push((rename(g), (0..3).map(|m| curve(k * wobble(m), r * wobble(m), p, &times)).collect::<Vec<_>>()));
            query.push((
                rename(g),
                (0..3).map(|m| curve(0.8 * k * factor * wobble(m), 0.9 * r * factor * wobble(m), p, &times)).collect(),
            ));
        }
        let as_ref = |v: &Vec<(String, Vec<GrowthCurve>)>| -> Vec<(String, Vec<GrowthCurve>)> { v.clone() };
        let c = as_ref(&control);
        let q = as_ref(&query);
        let cs: Vec<(&str, Vec<GrowthCurve>)> = c.iter().map(|(g, v)| (g.as_str(), v.clone())).collect();
        let qs: Vec<(&str, Vec<GrowthCurve>)> = q.iter().map(|(g, v)| (g.as_str(), v.clone())).collect();
        (ScreenDataset { control: screen("c", &cs), query: screen("q", &qs) }, rename(2))
    }

    #[test]
    fn planted_gene_is_found_under_any_labelling() {
        let o = opts(6000, 5, 800);
        for rename in [|g: usize| format!("g{g}"), |g: usize| format!("z{}", 9 - g)] {
            let (data, planted) = small_pair(rename);
            let fit = fit_jhm(&data, JhmVariant::Plain, &o).unwrap();
            scan_truncations(&fit.chain);
            for r in &fit.results {
                let want = r.gene == planted;
                assert_eq!(r.classification.is_interaction(), want, "{r:?}");
                if want {
                    assert_eq!(r.classification, Classification::Enhancer);
                }
            }
        }
    }

    #[test]
    fn pinned_transformation_matches_the_plain_model() {
        let (data, _) = small_pair(|g| format!("g{g}"));
        let mut o = opts(1000, 2, 200);
        let plain = fit_jhm(&data, JhmVariant::Plain, &o).unwrap();
        o.hyper.variant.phi_shape = f64::INFINITY;
        o.hyper.variant.chi_shape = f64::INFINITY;
        let pinned = fit_jhm(&data, JhmVariant::Transform, &o).unwrap();
        assert_eq!(plain.results, pinned.results);
        assert!(pinned.chain.column("phi").unwrap().iter().all(|x| *x == 1.0));
        let free = fit_jhm(&data, JhmVariant::Transform, &opts(1000, 2, 200)).unwrap();
        scan_truncations(&free.chain);
    }

    #[test]
    fn batch_variant_needs_labels() {
        let (mut data, _) = small_pair(|g| format!("g{g}"));
        let fit = fit_jhm(&data, JhmVariant::Batch, &opts(300, 1, 100)).unwrap();
        assert!(fit.chain.index_of("kappa[1]").is_some());
        data.query.genes.get_mut("g0").unwrap()[0].batch = None;
        assert!(matches!(fit_jhm(&data, JhmVariant::Batch, &opts(10, 1, 10)), Err(Error::Keying(_))));
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let (data, _) = small_pair(|g| format!("g{g}"));
        let o = opts(200, 1, 50);
        let a = fit_jhm(&data, JhmVariant::Plain, &o).unwrap();
        let b = fit_jhm(&data, JhmVariant::Plain, &o).unwrap();
        assert_eq!(a.chain, b.chain);
        assert_eq!(a.results, b.results);
    }

    #[test]
    fn unit_transform_is_the_identity() {
        let p = pop();
        let scaled = Population { phi: 2.0, chi: 0.5, ..pop() };
        assert_eq!(scaled.k_mean(1, 0, -2.0, 0.3), p.k_mean(1, 0, -2.0, 0.3) / 2.0);
        assert_eq!(scaled.r_mean(1, 0, 1.0, 0.3), p.r_mean(1, 0, 1.0, 0.3) / 0.5);
    }
}
