//! Frequentist comparator: least-squares logistic fits per culture, fitnesses scaled to a
//! unit screen mean, a pooled two-sample t-test per gene and Benjamini-Hochberg q-values.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{GrowthCurve, ScreenDataset};
use crate::error::{Error, Result};
use crate::growth::{fitness, logistic, LogisticParams};

/// Genes with `q` below this are reported as interacting.
pub const Q_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneTestResult {
    pub gene: String,
    /// Mean scaled query fitness minus mean scaled control fitness.
    pub gamma_hat: f64,
    pub p_value: f64,
    pub q_value: f64,
    pub significant: bool,
    pub control_fitness: f64,
    pub query_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub results: Vec<GeneTestResult>,
    /// Genes left out, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl BaselineReport {
    pub fn significant_genes(&self) -> Vec<&str> {
        self.results.iter().filter(|r| r.significant).map(|r| r.gene.as_str()).collect()
    }
}

/// Least-squares `(K, r)` for one curve with the inoculum density held at `p`.
///
/// Levenberg-Marquardt on `(log K, log r)`, started from the best point of a coarse grid.
pub fn fit_logistic(curve: &GrowthCurve, p: f64) -> Result<LogisticParams> {
    curve.validate()?;
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("inoculum density {p} must be positive")));
    }
    if curve.is_empty() {
        return Err(Error::Data("cannot fit an empty curve".into()));
    }
    let (ts, ys) = (&curve.times, &curve.values);
    let ssr = |lk: f64, lr: f64| -> f64 {
        let (k, r) = (lk.exp(), lr.exp());
        ts.iter().zip(ys).map(|(&t, &y)| (y - logistic(k, r, p, t)).powi(2)).sum()
    };

    let top = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(1.5 * p);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..9 {
        let lk = (top * [0.5, 0.8, 1.0, 1.2, 2.0, 4.0, 10.0, 0.3, 0.1][i]).ln();
        for j in 0..25 {
            let lr = -4.0 + 0.3 * j as f64;
            let s = ssr(lk, lr);
            if s < best.0 {
                best = (s, lk, lr);
            }
        }
    }
    let (mut s, mut lk, mut lr) = best;
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let (k, r) = (lk.exp(), lr.exp());
        // Normal equations J'J δ = J'e with columns ∂x/∂log K and ∂x/∂log r.
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&t, &y) in ts.iter().zip(ys) {
            let e_rt = (r * t).exp();
            let d = k + p * (e_rt - 1.0);
            let (dk, dr) = if e_rt.is_finite() && d.is_finite() {
                let x = k * p * e_rt / d;
                (x * p * (e_rt - 1.0) / d, x * r * t * (k - p) / d)
            } else {
                (k, 0.0)
            };
            let res = y - logistic(k, r, p, t);
            a11 += dk * dk;
            a12 += dk * dr;
            a22 += dr * dr;
            g1 += dk * res;
            g2 += dr * res;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let (b11, b22) = (a11 * (1.0 + lambda) + 1e-300, a22 * (1.0 + lambda) + 1e-300);
            let det = b11 * b22 - a12 * a12;
            let (d1, d2) = ((b22 * g1 - a12 * g2) / det, (b11 * g2 - a12 * g1) / det);
            let (nk, nr) = (lk + d1.clamp(-2.0, 2.0), lr + d2.clamp(-2.0, 2.0));
            let ns = ssr(nk, nr);
            if ns.is_finite() && ns <= s {
                let gain = s - ns;
                (s, lk, lr) = (ns, nk, nr);
                lambda = (lambda * 0.3).max(1e-12);
                improved = gain > 1e-15 * (1.0 + s);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(LogisticParams::new(lk.exp(), lr.exp(), p))
}

/// Divide every fitness by the grand mean of its screen.
pub fn scale_fitnesses(fits: &BTreeMap<String, Vec<f64>>) -> Result<BTreeMap<String, Vec<f64>>> {
    let all: Vec<f64> = fits.values().flatten().copied().collect();
    if all.is_empty() {
        return Err(Error::DegenerateScreen("no fitnesses to scale".into()));
    }
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    if !(mean.is_finite() && mean != 0.0) {
        return Err(Error::DegenerateScreen(format!("screen mean fitness is {mean}")));
    }
    Ok(fits.iter().map(|(g, v)| (g.clone(), v.iter().map(|f| f / mean).collect())).collect())
}

/// Difference of means and two-sided p-value of the pooled-variance t statistic.
pub fn gene_test(control: &[f64], query: &[f64]) -> Result<(f64, f64)> {
    let (n0, n1) = (control.len(), query.len());
    if n0 < 2 || n1 < 2 {
        return Err(Error::Data(format!("need at least 2 repeats per condition, have {n0} and {n1}")));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (m0, m1) = (mean(control), mean(query));
    let gamma = m1 - m0;
    let ss = control.iter().map(|x| (x - m0).powi(2)).sum::<f64>() + query.iter().map(|x| (x - m1).powi(2)).sum::<f64>();
    let df = (n0 + n1 - 2) as f64;
    let se = (ss / df * (1.0 / n0 as f64 + 1.0 / n1 as f64)).sqrt();
    if se == 0.0 {
        return Ok((gamma, if gamma == 0.0 { 1.0 } else { 0.0 }));
    }
    let t = gamma / se;
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    Ok((gamma, (2.0 * dist.sf(t.abs())).min(1.0)))
}

/// Step-up FDR adjustment, returned in input order.
pub fn benjamini_hochberg(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(m as f64 * p_values[i] / (rank + 1) as f64);
        q[i] = running.min(1.0).max(p_values[i]);
    }
    q
}

/// Fitness products `MDR × MDP` of every culture from least-squares fits.
pub fn screen_fitnesses(screen: &crate::data::Screen, p: f64) -> Result<BTreeMap<String, Vec<f64>>> {
    screen
        .genes
        .par_iter()
        .map(|(g, reps)| {
            let f = reps
                .iter()
                .map(|rep| fit_logistic(&rep.curve, p).map(|lp| fitness(&lp).product))
                .collect::<Result<Vec<f64>>>()?;
            Ok((g.clone(), f))
        })
        .collect()
}

/// The full frequentist pipeline on a two-condition screen with inoculum density `p`.
pub fn run_baseline(data: &ScreenDataset, p: f64) -> Result<BaselineReport> {
    let control = scale_fitnesses(&screen_fitnesses(&data.control, p)?)?;
    let query = scale_fitnesses(&screen_fitnesses(&data.query, p)?)?;
    let mut skipped = Vec::new();
    let mut tested = Vec::new();
    for (gene, c) in &control {
        let Some(q) = query.get(gene) else {
            skipped.push((gene.clone(), "absent from the query screen".to_string()));
            continue;
        };
        match gene_test(c, q) {
            Ok((gamma_hat, p_value)) => tested.push((gene.clone(), gamma_hat, p_value, c, q)),
            Err(e) => skipped.push((gene.clone(), e.to_string())),
        }
    }
    skipped.extend(query.keys().filter(|g| !control.contains_key(*g)).map(|g| (g.clone(), "absent from the control screen".to_string())));
    if tested.is_empty() {
        return Err(Error::DegenerateScreen("no gene has 2 repeats in both conditions".into()));
    }
    let qs = benjamini_hochberg(&tested.iter().map(|t| t.2).collect::<Vec<_>>());
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let results = tested
        .into_iter()
        .zip(qs)
        .map(|((gene, gamma_hat, p_value, c, q), q_value)| GeneTestResult {
            gene,
            gamma_hat,
            p_value,
            q_value,
            significant: q_value < Q_THRESHOLD,
            control_fitness: mean(c),
            query_fitness: mean(q),
        })
        .collect();
    Ok(BaselineReport { results, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Regularised incomplete beta by Lentz's continued fraction.
    fn inc_beta(x: f64, a: f64, b: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        if x > (a + 1.0) / (a + b + 2.0) {
            return 1.0 - inc_beta(1.0 - x, b, a);
        }
        let lbeta = statrs::function::gamma::ln_gamma(a) + statrs::function::gamma::ln_gamma(b)
            - statrs::function::gamma::ln_gamma(a + b);
        let front = (a * x.ln() + b * (1.0 - x).ln() - lbeta).exp() / a;
        let tiny = 1e-300;
        let (mut c, mut d) = (1.0, 1.0 - (a + b) * x / (a + 1.0));
        d = 1.0 / if d.abs() < tiny { tiny } else { d };
        let mut h = d;
        for m in 1..500 {
            let m = m as f64;
            for num in [
                m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m)),
                -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0)),
            ] {
                d = 1.0 + num * d;
                d = 1.0 / if d.abs() < tiny { tiny } else { d };
                c = 1.0 + num / c;
                if c.abs() < tiny {
                    c = tiny;
                }
                h *= d * c;
            }
        }
        front * h
    }

    fn textbook_t_test(a: &[f64], b: &[f64]) -> f64 {
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let ma = a.iter().sum::<f64>() / na;
        let mb = b.iter().sum::<f64>() / nb;
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (na - 1.0);
        let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (nb - 1.0);
        let df = na + nb - 2.0;
        let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
        let t = (mb - ma) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt();
        inc_beta(df / (df + t * t), df / 2.0, 0.5)
    }

    #[test]
    fn t_test_matches_incomplete_beta_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for shift in [0.0, 0.3, 1.0, 2.5] {
            let a: Vec<f64> = Normal::new(1.0, 0.4).unwrap().sample_iter(&mut rng).take(8).collect();
            let b: Vec<f64> = Normal::new(1.0 + shift, 0.4).unwrap().sample_iter(&mut rng).take(8).collect();
            let (g, p) = gene_test(&a, &b).unwrap();
            let want = textbook_t_test(&a, &b);
            assert!((p - want).abs() < 1e-10, "{p} vs {want}");
            assert!((g - (b.iter().sum::<f64>() - a.iter().sum::<f64>()) / 8.0).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_groups() {
        assert_eq!(gene_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), (0.0, 1.0));
        assert_eq!(gene_test(&[1.0; 4], &[2.0; 4]).unwrap(), (1.0, 0.0));
        assert_eq!(gene_test(&[1.0; 4], &[1.0; 4]).unwrap(), (0.0, 1.0));
        assert!(gene_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn scaling_examples() {
        let one = |v: Vec<f64>| BTreeMap::from([("a".to_string(), v)]);
        assert_eq!(scale_fitnesses(&one(vec![2.0, 2.0])).unwrap()["a"], vec![1.0, 1.0]);
        assert_eq!(scale_fitnesses(&one(vec![1.0, 3.0])).unwrap()["a"], vec![0.5, 1.5]);
        assert!(matches!(scale_fitnesses(&one(vec![1.0, -1.0])), Err(Error::DegenerateScreen(_))));
        assert!(matches!(scale_fitnesses(&BTreeMap::new()), Err(Error::DegenerateScreen(_))));
    }

    #[test]
    fn bh_examples() {
        for q in benjamini_hochberg(&[0.01, 0.02, 0.03, 0.04]) {
            assert!((q - 0.04).abs() < 1e-12);
        }
        assert_eq!(benjamini_hochberg(&[0.2]), vec![0.2]);
        assert_eq!(benjamini_hochberg(&[1.0, 1.0, 1.0]), vec![1.0; 3]);
        // Hand step-up: sorted (0.001, 0.04, 0.045, 0.5), m = 4.
        let q = benjamini_hochberg(&[0.5, 0.04, 0.001, 0.045]);
        let want = [0.5, 0.06, 0.004, 0.06];
        for (a, b) in q.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{q:?}");
        }
    }

    proptest! {
        #[test]
        fn bh_is_monotone_dominating_and_equivariant(ps in proptest::collection::vec(0.0f64..=1.0, 1..40), rot in 0usize..40) {
            let q = benjamini_hochberg(&ps);
            let mut order: Vec<usize> = (0..ps.len()).collect();
            order.sort_by(|&a, &b| ps[a].total_cmp(&ps[b]));
            for w in order.windows(2) {
                prop_assert!(q[w[0]] <= q[w[1]] + 1e-15);
            }
            for (p, q) in ps.iter().zip(&q) {
                prop_assert!(q >= p && *q <= 1.0);
            }
            let k = rot % ps.len();
            let mut rotated = ps.clone();
            rotated.rotate_left(k);
            let mut q_rot = q.clone();
            q_rot.rotate_left(k);
            prop_assert_eq!(benjamini_hochberg(&rotated), q_rot);
        }

        #[test]
        fn scaled_screens_have_unit_mean(xs in proptest::collection::vec(0.1f64..50.0, 1..30)) {
            let fits = BTreeMap::from([("a".to_string(), xs.clone()), ("b".to_string(), vec![xs[0]])]);
            let s = scale_fitnesses(&fits).unwrap();
            let all: Vec<f64> = s.values().flatten().copied().collect();
            prop_assert!((all.iter().sum::<f64>() / all.len() as f64 - 1.0).abs() < 1e-12);
            let again = scale_fitnesses(&s).unwrap();
            for (a, b) in all.iter().zip(again.values().flatten()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn least_squares_recovers_noise_free_curves() {
        let times: Vec<f64> = (0..10).map(|i| 6.0 * i as f64 / 9.0).collect();
        for (k, r) in [(0.12, 2.5), (0.15, 3.0), (0.05, 0.8), (0.3, 6.0)] {
            let values = times.iter().map(|&t| logistic(k, r, 1.19e-4, t)).collect();
            let fit = fit_logistic(&GrowthCurve::new(times.clone(), values).unwrap(), 1.19e-4).unwrap();
            assert!((fit.k / k - 1.0).abs() < 1e-6 && (fit.r / r - 1.0).abs() < 1e-6, "{fit:?} vs {k} {r}");
        }
    }

    #[test]
    fn flat_curve_gets_negligible_fitness() {
        let times: Vec<f64> = (0..10).map(|i| 0.6 * i as f64).collect();
        let fit = fit_logistic(&GrowthCurve::new(times, vec![1.19e-4; 10]).unwrap(), 1.19e-4).unwrap();
        assert!(fitness(&fit).product < 1e-2, "{fit:?}");
    }
}
