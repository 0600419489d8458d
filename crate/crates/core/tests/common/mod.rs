//! Reference computations for the acceptance suite, built without the library's closed forms.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use qfa_core::lna::ModelKind;
use qfa_core::sde::SdeParams;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

/// Classical fourth-order Runge-Kutta step.
fn rk4_step<const N: usize>(f: &impl Fn(f64, &[f64; N]) -> [f64; N], t: f64, y: &[f64; N], h: f64) -> [f64; N] {
    let add = |a: &[f64; N], b: &[f64; N], s: f64| {
        let mut out = *a;
        for i in 0..N {
            out[i] += s * b[i];
        }
        out
    };
    let k1 = f(t, y);
    let k2 = f(t + h / 2.0, &add(y, &k1, h / 2.0));
    let k3 = f(t + h / 2.0, &add(y, &k2, h / 2.0));
    let k4 = f(t + h, &add(y, &k3, h));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Integrate from `t0` to `t1` with steps no longer than `max_h`.
pub fn rk4<const N: usize>(f: &impl Fn(f64, &[f64; N]) -> [f64; N], t0: f64, y0: [f64; N], t1: f64, max_h: f64) -> [f64; N] {
    let n = ((t1 - t0) / max_h).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let mut y = y0;
    for i in 0..n {
        y = rk4_step(f, t0 + i as f64 * h, &y, h);
    }
    y
}

const ODE_STEP: f64 = 1e-4;

/// Skeleton drift, its state derivative and the noise loading for the linearised process on the model's scale.
struct Linearised {
    drift: Box<dyn Fn(f64) -> f64>,
    jacobian: Box<dyn Fn(f64) -> f64>,
    loading: Box<dyn Fn(f64) -> f64>,
    start: f64,
}

fn linearised(kind: ModelKind, params: &SdeParams) -> Linearised {
    let (k, r, p, s) = (params.growth.k, params.growth.r, params.growth.p, params.sigma);
    match kind {
        ModelKind::Lnaa => Linearised {
            drift: Box::new(move |u| r * u * (1.0 - u / k)),
            jacobian: Box::new(move |u| r - 2.0 * r * u / k),
            loading: Box::new(move |u| s * u),
            start: p,
        },
        ModelKind::Lnam => {
            let a = r - s * s / 2.0;
            let b = r / k;
            Linearised {
                drift: Box::new(move |u| a - b * u.exp()),
                jacobian: Box::new(move |u| -b * u.exp()),
                loading: Box::new(move |_| s),
                start: p.ln(),
            }
        }
        ModelKind::Rrtr => Linearised {
            drift: Box::new(move |u| r * (1.0 - u.exp() / k)),
            jacobian: Box::new(|_| 0.0),
            loading: Box::new(move |_| s),
            start: p.ln(),
        },
    }
}

/// Latent mean vector and covariance of the approximating Gaussian process at `times`,
/// from the moment equations `u' = f(u)`, `L' = f'(u)`, `V' = 2f'(u)V + g(u)²`.
pub fn latent_moments(kind: ModelKind, params: &SdeParams, times: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let lin = linearised(kind, params);
    let rhs = |_t: f64, y: &[f64; 3]| {
        let u = y[0];
        let j = (lin.jacobian)(u);
        let g = (lin.loading)(u);
        [(lin.drift)(u), j, 2.0 * j * y[2] + g * g]
    };
    let mut state = [lin.start, 0.0, 0.0];
    let mut t = 0.0;
    let mut at = Vec::with_capacity(times.len());
    for &tn in times {
        if tn > t {
            state = rk4(&rhs, t, state, tn, ODE_STEP);
            t = tn;
        }
        at.push(state);
    }
    let s2 = params.sigma * params.sigma;
    let n = times.len();
    let mean = match kind {
        ModelKind::Rrtr => at.iter().zip(times).map(|(y, t)| y[0] - s2 * t / 2.0).collect(),
        _ => at.iter().map(|y| y[0]).collect(),
    };
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        match kind {
            ModelKind::Rrtr => s2 * times[lo],
            _ => (at[hi][1] - at[lo][1]).exp() * at[lo][2],
        }
    });
    (mean, cov)
}

/// Log density of latent-scale observations `ys` under the joint Gaussian with measurement variance `nu²`.
pub fn joint_gaussian_loglik(kind: ModelKind, params: &SdeParams, times: &[f64], ys: &[f64]) -> f64 {
    let (mean, cov) = latent_moments(kind, params, times);
    let n = ys.len();
    let sigma = cov + DMatrix::identity(n, n) * (params.nu * params.nu);
    let chol = sigma.cholesky().expect("covariance must be positive definite");
    let resid = DVector::from_iterator(n, ys.iter().zip(&mean).map(|(y, m)| y - m));
    let solved = chol.l().solve_lower_triangular(&resid).expect("triangular solve");
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + solved.norm_squared())
}

/// Skeleton on a fine grid from `t0` to `t1`, both ends included.
fn skeleton_grid(lin: &Linearised, t0: f64, t1: f64, steps: usize) -> Vec<f64> {
    let rhs = |_t: f64, y: &[f64; 1]| [(lin.drift)(y[0])];
    let mut u = rk4(&rhs, 0.0, [lin.start], t0, ODE_STEP);
    let h = (t1 - t0) / steps as f64;
    let mut out = vec![u[0]];
    for i in 0..steps {
        u = rk4(&rhs, t0 + i as f64 * h, u, t0 + (i + 1) as f64 * h, ODE_STEP);
        out.push(u[0]);
    }
    out
}

/// Sample mean and variance with their Monte Carlo standard errors.
#[derive(Debug, Clone, Copy)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
    pub mean_se: f64,
    pub var_se: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    Moments { mean, var, mean_se: (var / n).sqrt(), var_se: ((m4 - m2 * m2) / n).sqrt() }
}

/// One-step Euler-Maruyama of the linearised SDE `dZ = f'(u)Z dt + g(u) dW` about the skeleton,
/// started from latent state `prev` at `t_prev`; returns latent-scale end states.
pub fn linearised_em<R: Rng>(
    kind: ModelKind,
    params: &SdeParams,
    prev: f64,
    t_prev: f64,
    t: f64,
    steps: usize,
    paths: usize,
    rng: &mut R,
) -> Vec<f64> {
    let lin = linearised(kind, params);
    let u = skeleton_grid(&lin, t_prev, t, steps);
    let h = (t - t_prev) / steps as f64;
    let sh = h.sqrt();
    let coef: Vec<(f64, f64)> = u[..steps].iter().map(|&v| ((lin.jacobian)(v), (lin.loading)(v))).collect();
    (0..paths)
        .map(|_| {
            let mut z = prev - u[0];
            for &(j, g) in &coef {
                let xi: f64 = StandardNormal.sample(rng);
                z += j * z * h + g * sh * xi;
            }
            u[steps] + z
        })
        .collect()
}

/// One-step Euler-Maruyama of the SLGM on the log scale, `dY = (r − σ²/2 − (r/K)e^Y)dt + σ dW`.
pub fn slgm_log_em<R: Rng>(params: &SdeParams, prev: f64, dt: f64, steps: usize, paths: usize, rng: &mut R) -> Vec<f64> {
    let (k, r, s) = (params.growth.k, params.growth.r, params.sigma);
    let a = r - s * s / 2.0;
    let b = r / k;
    let h = dt / steps as f64;
    let sh = h.sqrt();
    (0..paths)
        .map(|_| {
            let mut y = prev;
            for _ in 0..steps {
                let xi: f64 = StandardNormal.sample(rng);
                y += (a - b * y.exp()) * h + s * sh * xi;
            }
            y
        })
        .collect()
}

/// Log-scale LNAM skeleton at `t`, by integration.
pub fn lnam_skeleton(params: &SdeParams, t: f64) -> f64 {
    let lin = linearised(ModelKind::Lnam, params);
    rk4(&|_t, y: &[f64; 1]| [(lin.drift)(y[0])], 0.0, [lin.start], t, ODE_STEP)[0]
}

/// One-sample Kolmogorov-Smirnov p-value from the asymptotic Kolmogorov distribution.
pub fn ks_pvalue(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    });
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let sign = if k % 2 == 1 { 2.0 } else { -2.0 };
            sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

/// CDF of `N(mean, 1/precision)` truncated below at `lower`.
pub fn normal_cdf(mean: f64, precision: f64, lower: f64) -> impl Fn(f64) -> f64 {
    let n = Normal::new(mean, precision.sqrt().recip()).unwrap();
    let base = n.cdf(lower);
    move |x| if x < lower { 0.0 } else { (n.cdf(x) - base) / (1.0 - base) }
}
