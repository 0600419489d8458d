//! Synthetic control/query screens drawn from the joint model's generative structure,
//! with deterministic logistic growth and Normal measurement error.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::hyper::HyperParams;
use super::joint::{LOG_K_MAX, LOG_R_MAX};
use crate::data::{GrowthCurve, Repeat, Screen, ScreenDataset};
use crate::dist::{sample_t3_positive, sample_truncated_normal};
use crate::error::{Error, Result};
use crate::growth::logistic;
use crate::rng::{derive_indexed, rng_from};
use crate::sde::linspace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub genes: usize,
    pub repeats: usize,
    pub times: Vec<f64>,
    /// `(gene index, e^γ, e^ω)`: multiplicative effects on query K and r.
    pub planted: Vec<(usize, f64, f64)>,
    /// Scale of the gene-level t₃ around the population K and r.
    pub k_scale: f64,
    pub r_scale: f64,
    /// Standard deviation of repeat-level log K and log r about the gene mean.
    pub repeat_sd: f64,
    pub noise_sd: f64,
    /// Query-condition shifts of log K and log r.
    pub alpha: f64,
    pub beta: f64,
}

impl GeneratorConfig {
    /// `n_planted` evenly spaced genes, alternately strengthened and weakened by `factor`.
    pub fn plant_evenly(genes: usize, n_planted: usize, factor: f64) -> Vec<(usize, f64, f64)> {
        (0..n_planted)
            .map(|i| {
                let f = if i % 2 == 0 { factor } else { 1.0 / factor };
                (i * genes / n_planted.max(1), f, f)
            })
            .collect()
    }

    /// 50 genes, 4 repeats, 10 time points over 6 days, 10 planted interactions of strength 2.
    pub fn desk() -> Self {
        Self::sized(50, 4, 10)
    }

    /// 4300 genes, 8 repeats, 430 planted: generation only.
    pub fn paper() -> Self {
        Self::sized(4300, 8, 430)
    }

    pub fn sized(genes: usize, repeats: usize, planted: usize) -> Self {
        Self {
            genes,
            repeats,
            times: linspace(0.0, 6.0, 10),
            planted: Self::plant_evenly(genes, planted, 2.0),
            k_scale: 0.02,
            r_scale: 0.3,
            repeat_sd: 0.1,
            noise_sd: 0.005,
            alpha: -0.2,
            beta: -0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub planted: bool,
    pub gamma: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedScreen {
    pub dataset: ScreenDataset,
    pub truth: BTreeMap<String, PlantedTruth>,
}

impl GeneratedScreen {
    pub fn planted_genes(&self) -> Vec<&String> {
        self.truth.iter().filter(|(_, t)| t.planted).map(|(g, _)| g).collect()
    }
}

pub fn gene_name(i: usize, total: usize) -> String {
    let width = total.max(2).saturating_sub(1).to_string().len().max(4);
    format!("G{:0width$}", i + 1, width = width)
}

pub fn generate_screen(hyper: &HyperParams, cfg: &GeneratorConfig, seed: u64) -> Result<GeneratedScreen> {
    if cfg.genes == 0 || cfg.repeats == 0 {
        return Err(Error::InvalidParameter("need at least one gene and one repeat".into()));
    }
    if let Some((i, ..)) = cfg.planted.iter().find(|(i, ..)| *i >= cfg.genes) {
        return Err(Error::InvalidParameter(format!("planted gene index {i} is outside 0..{}", cfg.genes)));
    }
    if cfg.planted.iter().any(|(_, g, w)| !(*g > 0.0 && *w > 0.0)) {
        return Err(Error::InvalidParameter("planted strengths must be positive factors".into()));
    }
    for s in [cfg.k_scale, cfg.r_scale, cfg.repeat_sd, cfg.noise_sd] {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter("scales must be positive".into()));
        }
    }
    GrowthCurve::new(cfg.times.clone(), vec![0.0; cfg.times.len()])?;

    let h = &hyper.growth;
    let (k_pop, r_pop, p) = (h.k_mu.exp(), h.r_mu.exp(), h.p_mu.exp());
    let noise = Normal::new(0.0, cfg.noise_sd).expect("positive sd");
    let rep_prec = cfg.repeat_sd.powi(-2);
    let plants: BTreeMap<usize, (f64, f64)> = cfg.planted.iter().map(|&(i, g, w)| (i, (g, w))).collect();

    let mut dataset = ScreenDataset { control: Screen::new("control"), query: Screen::new("query") };
    let mut truth = BTreeMap::new();
    for i in 0..cfg.genes {
        let name = gene_name(i, cfg.genes);
        let mut rng = rng_from(derive_indexed(seed, "screen-gene", i as u64));
        let ko = sample_t3_positive(&mut rng, k_pop, cfg.k_scale.powi(-2)).max(f64::MIN_POSITIVE).ln();
        let ro = sample_t3_positive(&mut rng, r_pop, cfg.r_scale.powi(-2)).max(f64::MIN_POSITIVE).ln();
        let (gamma, omega) = plants.get(&i).copied().unwrap_or((1.0, 1.0));
        truth.insert(name.clone(), PlantedTruth { planted: plants.contains_key(&i), gamma, omega });
        for c in 0..2 {
            let (mk, mr) = if c == 0 {
                (ko, ro)
            } else {
                (cfg.alpha + ko + gamma.ln(), cfg.beta + ro + omega.ln())
            };
            let reps: Vec<Repeat> = (0..cfg.repeats)
                .map(|m| {
                    let k = sample_truncated_normal(&mut rng, mk, rep_prec, f64::NEG_INFINITY, LOG_K_MAX).exp();
                    let r = sample_truncated_normal(&mut rng, mr, rep_prec, f64::NEG_INFINITY, LOG_R_MAX).exp();
                    let values = cfg.times.iter().map(|&t| logistic(k, r, p, t) + noise.sample(&mut rng)).collect();
                    Repeat {
                        id: (m + 1).to_string(),
                        batch: Some(format!("plate{}", m + 1)),
                        curve: GrowthCurve { times: cfg.times.clone(), values },
                    }
                })
                .collect();
            let screen = if c == 0 { &mut dataset.control } else { &mut dataset.query };
            screen.genes.insert(name.clone(), reps);
        }
    }
    Ok(GeneratedScreen { dataset, truth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_dimensions() {
        let g = generate_screen(&HyperParams::default(), &GeneratorConfig::desk(), 5).unwrap();
        for s in [&g.dataset.control, &g.dataset.query] {
            assert_eq!(s.genes.len(), 50);
            assert_eq!(s.n_repeats(), 200);
            assert_eq!(s.n_observations(), 2000);
            s.validate().unwrap();
        }
        assert_eq!(g.planted_genes().len(), 10);
        assert_eq!(gene_name(0, 50), "G0001");
        assert_eq!(gene_name(4299, 4300), "G4300");
    }

    #[test]
    fn no_plants_means_no_truth() {
        let cfg = GeneratorConfig { planted: vec![], ..GeneratorConfig::sized(8, 2, 0) };
        let g = generate_screen(&HyperParams::default(), &cfg, 1).unwrap();
        assert!(g.truth.values().all(|t| !t.planted && t.gamma == 1.0 && t.omega == 1.0));
    }

    #[test]
    fn rejects_plants_outside_the_screen() {
        let cfg = GeneratorConfig { planted: vec![(9, 2.0, 2.0)], ..GeneratorConfig::sized(8, 2, 0) };
        assert!(generate_screen(&HyperParams::default(), &cfg, 1).is_err());
    }

    #[test]
    fn paper_preset_shape() {
        let cfg = GeneratorConfig::paper();
        assert_eq!((cfg.genes, cfg.repeats, cfg.planted.len(), cfg.times.len()), (4300, 8, 430, 10));
        assert_eq!(*cfg.times.last().unwrap(), 6.0);
    }
}
