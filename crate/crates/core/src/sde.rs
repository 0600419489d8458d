//! Euler-Maruyama simulation of the stochastic logistic growth models and noisy observation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ErrorKind, GrowthCurve};
use crate::error::{Error, Result};
use crate::growth::LogisticParams;
use crate::rng::{derive_indexed, rng_from};

pub const DEFAULT_SUBSTEPS: usize = 15;
const DIVERGENCE_BOUND: f64 = 1e12;
const REFLECTION_FLOOR: f64 = 1e-12;

/// Growth triple plus intrinsic (`sigma`) and measurement (`nu`) noise scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeParams {
    pub growth: LogisticParams,
    pub sigma: f64,
    pub nu: f64,
}

impl SdeParams {
    pub fn new(k: f64, r: f64, p: f64, sigma: f64, nu: f64) -> Self {
        Self { growth: LogisticParams::new(k, r, p), sigma, nu }
    }

    pub fn validate(&self) -> Result<()> {
        self.growth.validate()?;
        if !(self.sigma.is_finite() && self.sigma >= 0.0 && self.nu.is_finite() && self.nu >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise scales must be finite and non-negative: sigma={} nu={}",
                self.sigma, self.nu
            )));
        }
        Ok(())
    }
}

/// Parameter sets used for the simulation studies: `fig4nonu`, `row-a`, `row-e` and `row-i`.
pub fn named_params(name: &str) -> Option<SdeParams> {
    Some(match name {
        "fig4nonu" => SdeParams::new(0.11, 4.0, 5e-5, 0.05, 0.0),
        "row-a" => SdeParams::new(0.15, 3.0, 1e-4, 0.01, 0.005),
        "row-e" => SdeParams::new(0.11, 4.0, 5e-5, 0.05, 0.001),
        "row-i" => SdeParams::new(0.3, 6.0, 2e-4, 0.02, 0.01),
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdeKind {
    /// `dX = rX(1−X/K)dt + σX dW`
    Slgm,
    /// `dX = rX(1−X/K)dt + √(rX) dW`
    DemographicSqrt,
    /// `dX = rX(1−X/K)dt + √(rX(1+X/K)) dW`
    DemographicSym,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub seed: u64,
}

/// Advance one path from `x` over `[t_start, t_end]` in `steps` Euler-Maruyama steps.
/// The state is on the natural scale; SLGM steps are taken on the log scale.
pub fn advance<R: Rng + ?Sized>(
    params: &SdeParams,
    kind: SdeKind,
    x: f64,
    t_start: f64,
    t_end: f64,
    steps: usize,
    interval: usize,
    rng: &mut R,
) -> Result<f64> {
    let LogisticParams { k, r, .. } = params.growth;
    let h = (t_end - t_start) / steps as f64;
    let sqrt_h = h.sqrt();
    let diverged = || Error::SimulationDiverged { interval, t_start, t_end };
    match kind {
        SdeKind::Slgm => {
            let s = params.sigma;
            let drift0 = r - 0.5 * s * s;
            let b = r / k;
            let mut y = x.ln();
            for _ in 0..steps {
                let xi: f64 = StandardNormal.sample(rng);
                y += (drift0 - b * y.exp()) * h + s * sqrt_h * xi;
                if !y.is_finite() || y > DIVERGENCE_BOUND.ln() {
                    return Err(diverged());
                }
            }
            Ok(y.exp())
        }
        SdeKind::DemographicSqrt | SdeKind::DemographicSym => {
            let mut x = x;
            for _ in 0..steps {
                let xi: f64 = StandardNormal.sample(rng);
                let var = match kind {
                    SdeKind::DemographicSqrt => r * x,
                    _ => r * x * (1.0 + x / k),
                };
                x += r * x * (1.0 - x / k) * h + var.max(0.0).sqrt() * sqrt_h * xi;
                if x < REFLECTION_FLOOR {
                    x = 2.0 * REFLECTION_FLOOR - x;
                    x = x.max(REFLECTION_FLOOR);
                }
                if !x.is_finite() || x > DIVERGENCE_BOUND {
                    return Err(diverged());
                }
            }
            Ok(x)
        }
    }
}

/// Simulate a path from `X₀ = P` at `t = 0`, recording the state at each grid time.
/// Each grid interval (and the lead-in from 0 to the first grid time) gets `substeps` steps.
pub fn euler_maruyama(
    params: &SdeParams,
    kind: SdeKind,
    grid: &[f64],
    substeps: usize,
    seed: u64,
) -> Result<Trajectory> {
    params.validate()?;
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be at least 1".into()));
    }
    if grid.iter().any(|t| !t.is_finite() || *t < 0.0) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("grid must be non-negative and strictly increasing".into()));
    }
    let mut rng = rng_from(seed);
    let mut values = Vec::with_capacity(grid.len());
    let mut x = params.growth.p;
    let mut t = 0.0;
    for (i, &tn) in grid.iter().enumerate() {
        if tn > t {
            x = advance(params, kind, x, t, tn, substeps, i, &mut rng)?;
        }
        values.push(x);
        t = tn;
    }
    Ok(Trajectory { times: grid.to_vec(), values, seed })
}

/// Independent paths on a shared grid, one derived seed per path.
pub fn simulate_paths(
    params: &SdeParams,
    kind: SdeKind,
    grid: &[f64],
    substeps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    (0..n_paths)
        .into_par_iter()
        .map(|i| euler_maruyama(params, kind, grid, substeps, derive_indexed(seed, "path", i as u64)))
        .collect()
}

/// Add measurement error to a latent path.
pub fn observe(traj: &Trajectory, error_kind: ErrorKind, nu: f64, seed: u64) -> GrowthCurve {
    let mut rng = rng_from(seed);
    let values = traj
        .values
        .iter()
        .map(|&x| {
            let e: f64 = StandardNormal.sample(&mut rng);
            match error_kind {
                ErrorKind::Normal => x + nu * e,
                ErrorKind::LogNormal => x * (nu * e).exp(),
            }
        })
        .collect();
    GrowthCurve { times: traj.times.clone(), values }
}

/// Evenly spaced grid of `n` points on `[start, end]`.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![start],
        _ => (0..n).map(|i| start + (end - start) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growth::logistic;

    const FIG: SdeParams = SdeParams {
        growth: LogisticParams { k: 0.11, r: 4.0, p: 5e-5 },
        sigma: 0.05,
        nu: 0.0,
    };

    #[test]
    fn zero_noise_matches_closed_form() {
        let grid = linspace(0.0, 6.0, 13);
        for kind in [SdeKind::Slgm] {
            let mut p = FIG;
            p.sigma = 0.0;
            // Δ = 1e-4 per substep.
            let traj = euler_maruyama(&p, kind, &grid, 5000, 1).unwrap();
            for (t, x) in traj.times.iter().zip(&traj.values) {
                assert!((x - logistic(0.11, 4.0, 5e-5, *t)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn reproducible_and_positive() {
        let grid = linspace(0.0, 6.0, 27);
        let a = euler_maruyama(&FIG, SdeKind::Slgm, &grid, 15, 9).unwrap();
        let b = euler_maruyama(&FIG, SdeKind::Slgm, &grid, 15, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.values.iter().all(|x| *x > 0.0));
        for kind in [SdeKind::DemographicSqrt, SdeKind::DemographicSym] {
            let t = euler_maruyama(&FIG, kind, &grid, 15, 9).unwrap();
            assert!(t.values.iter().all(|x| *x >= REFLECTION_FLOOR && x.is_finite()));
        }
    }

    #[test]
    fn saturation_spread_stays_bounded() {
        let grid = linspace(0.0, 6.0, 25);
        let paths = simulate_paths(&FIG, SdeKind::Slgm, &grid, 100, 100, 4).unwrap();
        let sd_at = |i: usize| {
            let xs: Vec<f64> = paths.iter().map(|p| p.values[i]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        };
        // Once saturated the spread is governed by mean reversion, not accumulated noise.
        let (sd4, sd6) = (sd_at(16), sd_at(24));
        assert!(sd6 < 1.5 * sd4, "{sd4} {sd6}");
        assert!(sd6 < 0.11 * 0.05 * 2.0);
    }

    #[test]
    fn divergence_is_reported() {
        let p = SdeParams::new(1e20, 50.0, 1.0, 0.0, 0.0);
        let err = euler_maruyama(&p, SdeKind::Slgm, &[1.0], 10, 1).unwrap_err();
        assert!(matches!(err, Error::SimulationDiverged { interval: 0, .. }));
    }

    #[test]
    fn observation_noise() {
        let traj = Trajectory { times: linspace(0.0, 1.0, 10_000), values: vec![0.1; 10_000], seed: 0 };
        assert_eq!(observe(&traj, ErrorKind::Normal, 0.0, 3).values, traj.values);
        let obs = observe(&traj, ErrorKind::LogNormal, 0.005, 3);
        let logs: Vec<f64> = obs.values.iter().map(|y| y.ln()).collect();
        let m = logs.iter().sum::<f64>() / logs.len() as f64;
        let sd = (logs.iter().map(|l| (l - m).powi(2)).sum::<f64>() / (logs.len() - 1) as f64).sqrt();
        assert!((sd / 0.005 - 1.0).abs() < 0.1);
    }

    #[test]
    fn refinement_drift_shrinks() {
        // Endpoint mean under successive halvings of the step: the drift between refinements must not grow.
        let grid = [3.0];
        let mean = |steps: usize| {
            let paths = simulate_paths(&FIG, SdeKind::Slgm, &grid, steps, 4000, 11).unwrap();
            paths.iter().map(|p| p.values[0]).sum::<f64>() / paths.len() as f64
        };
        let (m1, m2, m3) = (mean(30), mean(60), mean(120));
        assert!((m3 - m2).abs() < 2.0 * (m2 - m1).abs() + 1e-5);
    }
}
