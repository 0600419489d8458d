//! Goodness-of-fit helpers for in-crate sampler tests.

/// One-sample Kolmogorov-Smirnov p-value (asymptotic distribution with the Stephens correction).
pub fn ks_pvalue(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        p += sign * 2.0 * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

/// CDF of `N(mean, 1/precision)`.
pub fn normal_cdf(mean: f64, precision: f64) -> impl Fn(f64) -> f64 {
    move |x| crate::dist::norm_cdf((x - mean) * precision.sqrt())
}
