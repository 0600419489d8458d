//! Chain diagnostics and list-comparison statistics.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::mcmc::Chain;

fn centered(x: &[f64]) -> (Vec<f64>, f64) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let ss = c.iter().map(|v| v * v).sum::<f64>();
    (c, ss)
}

/// Relative spread below which a chain is treated as constant.
fn is_constant(x: &[f64]) -> bool {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    !(hi - lo > 1e-14 * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE))
}

#[inline]
fn autocov(c: &[f64], k: usize) -> f64 {
    c[..c.len() - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum()
}

/// Biased autocorrelation estimate for lags `0..=max_lag`.
pub fn acf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let (c, ss) = centered(x);
    if x.is_empty() || ss == 0.0 {
        let mut out = vec![0.0; max_lag.min(x.len().saturating_sub(1)) + 1];
        out[0] = 1.0;
        return out;
    }
    (0..=max_lag.min(x.len() - 1)).map(|k| autocov(&c, k) / ss).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssResult {
    pub ess: f64,
    /// Set for a constant chain, where the estimate is meaningless and reported as 0.
    pub degenerate: bool,
}

/// Effective sample size `n/(1 + 2Σρ_k)` with Geyer's initial positive sequence truncation.
pub fn ess(x: &[f64]) -> EssResult {
    let n = x.len();
    if n < 2 || is_constant(x) {
        return EssResult { ess: 0.0, degenerate: true };
    }
    let (c, ss) = centered(x);
    let rho = |k: usize| if k < n { autocov(&c, k) / ss } else { 0.0 };
    // τ = −1 + 2 Σ_m Γ_m with Γ_m = ρ_{2m} + ρ_{2m+1}, summed while positive.
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m < n {
        let gamma = rho(2 * m) + rho(2 * m + 1);
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        m += 1;
    }
    let ess = (n as f64 / tau.max(f64::MIN_POSITIVE)).min(n as f64);
    EssResult { ess, degenerate: false }
}

/// Spectral density at frequency zero from an AIC-selected autoregression fitted by Yule-Walker.
pub fn spectrum0_ar(x: &[f64]) -> f64 {
    let n = x.len();
    // A chain with no variation about a straight line has zero spectral mass.
    let t_mean = (n as f64 - 1.0) / 2.0;
    let x_mean = x.iter().sum::<f64>() / n as f64;
    let (mut sxt, mut stt) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        sxt += (i as f64 - t_mean) * (v - x_mean);
        stt += (i as f64 - t_mean).powi(2);
    }
    let slope = sxt / stt;
    let resid_ss: f64 = x.iter().enumerate().map(|(i, v)| (v - x_mean - slope * (i as f64 - t_mean)).powi(2)).sum();
    if resid_ss <= 1e-28 * x.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE) {
        return 0.0;
    }

    let order_max = ((n as f64 - 1.0).min(10.0 * (n as f64).log10())).floor() as usize;
    let (c, _) = centered(x);
    let r: Vec<f64> = (0..=order_max).map(|k| autocov(&c, k) / n as f64).collect();

    // Levinson-Durbin: coefficients and innovation variance for every order.
    let mut vars = vec![r[0]];
    let mut coefs: Vec<Vec<f64>> = vec![vec![]];
    let mut phi: Vec<f64> = Vec::new();
    let mut v = r[0];
    for k in 1..=order_max {
        let acc: f64 = (1..k).map(|j| phi[j - 1] * r[k - j]).sum();
        let kappa = (r[k] - acc) / v;
        let mut next = vec![0.0; k];
        for j in 1..k {
            next[j - 1] = phi[j - 1] - kappa * phi[k - j - 1];
        }
        next[k - 1] = kappa;
        phi = next;
        v *= 1.0 - kappa * kappa;
        vars.push(v);
        coefs.push(phi.clone());
    }
    let aic: Vec<f64> = vars.iter().enumerate().map(|(k, v)| n as f64 * v.ln() + 2.0 * k as f64).collect();
    let order = aic
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let var_pred = vars[order] * n as f64 / (n as f64 - (order as f64 + 1.0));
    let sum_ar: f64 = coefs[order].iter().sum();
    var_pred / (1.0 - sum_ar).powi(2)
}

/// Modified Bessel function of the second kind `K_ν(x)` by quadrature of `∫₀^∞ e^{−x cosh t} cosh(νt) dt`.
fn bessel_k(nu: f64, x: f64) -> f64 {
    let upper = (60.0 / x).max(1.0).acosh() + 2.0;
    let steps = 4000;
    let h = upper / steps as f64;
    let f = |t: f64| (-x * t.cosh()).exp() * (nu * t).cosh();
    let mut sum = 0.5 * (f(0.0) + f(upper));
    for i in 1..steps {
        sum += f(i as f64 * h);
    }
    sum * h
}

/// CDF of the Cramér-von Mises statistic.
pub fn pcramer(q: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    let log_eps = 1e-5f64.ln();
    let pi32 = std::f64::consts::PI.powf(1.5);
    (0..4)
        .map(|k| {
            let kf = k as f64;
            let u = (4.0 * kf + 1.0).powi(2) / (16.0 * q);
            if u > -log_eps {
                return 0.0;
            }
            let z = statrs::function::gamma::gamma(kf + 0.5) * (4.0 * kf + 1.0).sqrt()
                / (statrs::function::gamma::gamma(kf + 1.0) * pi32 * q.sqrt());
            z * (-u).exp() * bessel_k(0.25, u)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeidelWelch {
    /// Stationarity p-value of the whole chain.
    pub pvalue: f64,
    /// Whether the sequential test passed at some start point.
    pub passed: bool,
    /// Iterations discarded before the test passed (or at the last attempt).
    pub start: usize,
    /// p-value at that start point.
    pub pvalue_at_start: f64,
    pub degenerate: bool,
}

fn cvm_statistic(y: &[f64], s0: f64) -> f64 {
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let mut cum = 0.0;
    let mut total = 0.0;
    for (i, v) in y.iter().enumerate() {
        cum += v;
        let b = cum - ybar * (i as f64 + 1.0);
        total += b * b / (n * s0);
    }
    total / n
}

/// Heidelberger-Welch stationarity test: Cramér-von Mises on the scaled cumulative-sum bridge,
/// retried after discarding 10%, 20%, ... up to half the chain at the 0.05 level.
pub fn heidelberger_welch(x: &[f64]) -> HeidelWelch {
    let n = x.len();
    let degenerate = HeidelWelch { pvalue: f64::NAN, passed: false, start: 0, pvalue_at_start: f64::NAN, degenerate: true };
    if n < 4 || is_constant(x) {
        return degenerate;
    }
    let s0 = spectrum0_ar(&x[n / 2..]);
    if !(s0 > 0.0 && s0.is_finite()) {
        return degenerate;
    }
    let pval = |start: usize| 1.0 - pcramer(cvm_statistic(&x[start..], s0));
    let full = pval(0);
    let step = (n / 10).max(1);
    let mut start = 0;
    let mut p = full;
    loop {
        if p > 0.05 {
            return HeidelWelch { pvalue: full, passed: true, start, pvalue_at_start: p, degenerate: false };
        }
        if start + step > n / 2 {
            return HeidelWelch { pvalue: full, passed: false, start, pvalue_at_start: p, degenerate: false };
        }
        start += step;
        p = pval(start);
    }
}

fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (cx, sx) = centered(x);
    let (cy, sy) = centered(y);
    let sxy: f64 = cx.iter().zip(&cy).map(|(a, b)| a * b).sum();
    (sxy / (sx * sy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman rank correlation with mid-ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    pearson(&mid_ranks(x), &mid_ranks(y))
}

/// `|A ∩ B| / |A ∪ B|`, with two empty sets counted as identical.
pub fn jaccard<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    pub ess_degenerate: bool,
    pub hw_pvalue: f64,
    pub hw_passed: bool,
    pub hw_start: usize,
    pub acf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub parameters: Vec<ParameterReport>,
}

pub fn report(chain: &Chain, max_lag: usize) -> DiagnosticsReport {
    let parameters = chain
        .names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let col = chain.column_at(i);
            let e = ess(&col);
            let hw = heidelberger_welch(&col);
            ParameterReport {
                name: name.clone(),
                mean: crate::mcmc::mean(&col),
                sd: if col.len() > 1 { crate::mcmc::sd(&col) } else { 0.0 },
                ess: e.ess,
                ess_degenerate: e.degenerate,
                hw_pvalue: hw.pvalue,
                hw_passed: hw.passed,
                hw_start: hw.start,
                acf: acf(&col, max_lag),
            }
        })
        .collect();
    DiagnosticsReport { n: chain.len(), parameters }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn ar1(n: usize, rho: f64, seed: u64) -> Vec<f64> {
        let e = iid(n, seed);
        let mut x = vec![e[0] / (1.0 - rho * rho).sqrt()];
        for v in &e[1..] {
            x.push(rho * x.last().unwrap() + v);
        }
        x
    }

    #[test]
    fn ess_reference_behaviour() {
        let e = ess(&iid(10_000, 1));
        assert!((8000.0..=12_000.0).contains(&e.ess) && !e.degenerate);
        let a = ess(&ar1(10_000, 0.5, 2)).ess;
        assert!((a / (10_000.0 / 3.0) - 1.0).abs() < 0.2, "{a}");
        let c = ess(&[2.5; 50]);
        assert_eq!(c.ess, 0.0);
        assert!(c.degenerate);
    }

    #[test]
    fn acf_reference_behaviour() {
        let x = iid(10_000, 3);
        let r = acf(&x, 20);
        assert_eq!(r[0], 1.0);
        assert!(r[1..].iter().all(|v| v.abs() < 2.0 / 100.0 * 1.5));
        let a = acf(&ar1(10_000, 0.5, 4), 1);
        assert!((a[1] - 0.5).abs() < 0.05);
    }

    #[test]
    fn bessel_and_cramer_reference_values() {
        // scipy.special.kv(0.25, x)
        assert!((bessel_k(0.25, 0.5) - 0.960_316_324_931_882_6).abs() < 1e-10);
        assert!((bessel_k(0.25, 3.0) - 0.035_057_056_089_413_13).abs() < 1e-12);
        // Cramér-von Mises upper quantiles: P(W² > 0.461) ≈ 0.05, P(W² > 0.347) ≈ 0.10.
        assert!((1.0 - pcramer(0.461) - 0.05).abs() < 2e-3);
        assert!((1.0 - pcramer(0.347) - 0.10).abs() < 2e-3);
    }

    #[test]
    fn hw_detects_trend_and_flags_constant() {
        let mut x = iid(1000, 5);
        for (i, v) in x.iter_mut().enumerate() {
            *v += 5.0 * i as f64 / 1000.0;
        }
        assert!(heidelberger_welch(&x).pvalue < 0.01);
        assert!(heidelberger_welch(&[1.0; 200]).degenerate);
        let ok = heidelberger_welch(&iid(1000, 6));
        assert!((0.0..=1.0).contains(&ok.pvalue));
    }

    #[test]
    fn ar_spectrum_matches_theory() {
        // AR(1) with unit innovations: S0 = 1/(1−ρ)² = 4.
        let s = spectrum0_ar(&ar1(20_000, 0.5, 7));
        assert!((s / 4.0 - 1.0).abs() < 0.1, "{s}");
    }

    #[test]
    fn rank_and_set_statistics() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 35.0, 90.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let s = |v: &[&'static str]| v.iter().copied().collect::<HashSet<_>>();
        assert!((jaccard(&s(&["A", "B"]), &s(&["B", "C"])) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(jaccard(&s(&["A"]), &s(&["A"])), 1.0);
        assert_eq!(jaccard(&s(&["A"]), &s(&["B"])), 0.0);
    }

    proptest! {
        #[test]
        fn output_ranges_and_symmetry(xs in prop::collection::vec(-5.0f64..5.0, 12..60), seed in 0u64..1000) {
            let ys = iid(xs.len(), seed);
            let e = ess(&xs);
            prop_assert!(e.ess <= xs.len() as f64 && e.ess >= 0.0);
            let a = acf(&xs, 10);
            prop_assert!(a.iter().all(|v| v.abs() <= 1.0 + 1e-12));
            prop_assert!((spearman(&xs, &ys) - spearman(&ys, &xs)).abs() < 1e-12);
            prop_assert!(spearman(&xs, &ys).abs() <= 1.0);
        }
    }
}
