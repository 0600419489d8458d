//! Scalar Kalman filter giving the exact marginal likelihood of a linear-Gaussian state-space model.

use serde::{Deserialize, Serialize};

use crate::data::{ErrorKind, GrowthCurve};
use crate::dist::normal_logpdf_var;
use crate::error::{Error, Result};
use crate::lna::{Approximation, ModelKind};
use crate::sde::SdeParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceSpec {
    pub kind: ModelKind,
    pub error_kind: ErrorKind,
    pub params: SdeParams,
}

impl StateSpaceSpec {
    pub fn new(kind: ModelKind, error_kind: ErrorKind, params: SdeParams) -> Result<Self> {
        check_pairing(kind, error_kind)?;
        Ok(Self { kind, error_kind, params })
    }
}

/// Log-scale latent states need log-normal error and vice versa, or the model is not linear-Gaussian.
pub fn check_pairing(kind: ModelKind, error_kind: ErrorKind) -> Result<()> {
    let want = if kind.log_scale() { ErrorKind::LogNormal } else { ErrorKind::Normal };
    if error_kind != want {
        return Err(Error::InvalidParameter(format!(
            "{} requires {:?} measurement error, got {:?}",
            kind.name(),
            want,
            error_kind
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub m: f64,
    pub c: f64,
    /// Time of the last assimilated observation.
    pub t: f64,
    pub loglik: f64,
}

impl FilterState {
    /// Known initial state at `t = 0`.
    pub fn initial(approx: &Approximation) -> Self {
        Self { m: approx.initial_state(), c: 0.0, t: 0.0, loglik: 0.0 }
    }

    /// Predict to `t`, score `y` (already on the latent scale), then update.
    #[inline]
    pub fn assimilate(&mut self, approx: &Approximation, nu2: f64, t: f64, y: f64) {
        let tr = approx.transition(self.m, self.t, t);
        let b = tr.affine.1;
        let a = tr.mean;
        let r = b * b * self.c + tr.variance;
        let s = r + nu2;
        self.loglik += normal_logpdf_var(y, a, s);
        self.m = a + r / s * (y - a);
        self.c = r * nu2 / s;
        self.t = t;
    }
}

/// Observations mapped to the latent scale (log for log-scale models).
pub fn latent_observations(kind: ModelKind, curve: &GrowthCurve) -> Result<Vec<f64>> {
    if kind.log_scale() {
        curve
            .values
            .iter()
            .enumerate()
            .map(|(index, &y)| {
                if y > 0.0 {
                    Ok(y.ln())
                } else {
                    Err(Error::NonPositiveObservation { index, value: y })
                }
            })
            .collect()
    } else {
        Ok(curve.values.clone())
    }
}

/// Marginal log-likelihood over prepared observations; the inner loop of the samplers.
#[inline]
pub fn loglik_prepared(approx: &Approximation, nu: f64, times: &[f64], ys: &[f64]) -> f64 {
    let mut state = FilterState::initial(approx);
    let nu2 = nu * nu;
    for (&t, &y) in times.iter().zip(ys) {
        state.assimilate(approx, nu2, t, y);
    }
    state.loglik
}

pub fn marginal_loglik(spec: &StateSpaceSpec, curve: &GrowthCurve) -> Result<f64> {
    check_pairing(spec.kind, spec.error_kind)?;
    curve.validate()?;
    let approx = Approximation::new(spec.kind, &spec.params)?;
    let ys = latent_observations(spec.kind, curve)?;
    Ok(loglik_prepared(&approx, spec.params.nu, &curve.times, &ys))
}

/// Filtered `(m_i, C_i)` after each observation.
pub fn filter_states(spec: &StateSpaceSpec, curve: &GrowthCurve) -> Result<Vec<(f64, f64)>> {
    check_pairing(spec.kind, spec.error_kind)?;
    curve.validate()?;
    let approx = Approximation::new(spec.kind, &spec.params)?;
    let ys = latent_observations(spec.kind, curve)?;
    let mut state = FilterState::initial(&approx);
    let nu2 = spec.params.nu * spec.params.nu;
    Ok(curve
        .times
        .iter()
        .zip(&ys)
        .map(|(&t, &y)| {
            state.assimilate(&approx, nu2, t, y);
            (state.m, state.c)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lna::det_skeleton;

    fn spec(kind: ModelKind, sigma: f64, nu: f64) -> StateSpaceSpec {
        let err = if kind.log_scale() { ErrorKind::LogNormal } else { ErrorKind::Normal };
        StateSpaceSpec::new(kind, err, SdeParams::new(0.15, 3.0, 1e-4, sigma, nu)).unwrap()
    }

    #[test]
    fn single_step_unrolled() {
        let s = spec(ModelKind::Lnaa, 0.05, 0.01);
        let curve = GrowthCurve::new(vec![1.5], vec![0.02]).unwrap();
        let approx = Approximation::new(ModelKind::Lnaa, &s.params).unwrap();
        let xi = approx.transition(1e-4, 0.0, 1.5).variance;
        let mean = det_skeleton(ModelKind::Lnaa, &s.params, 1.5).unwrap();
        let want = normal_logpdf_var(0.02, mean, xi + 1e-4);
        assert!((marginal_loglik(&s, &curve).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn pairing_is_enforced() {
        let p = SdeParams::new(0.15, 3.0, 1e-4, 0.01, 0.01);
        assert!(StateSpaceSpec::new(ModelKind::Lnaa, ErrorKind::LogNormal, p).is_err());
        assert!(StateSpaceSpec::new(ModelKind::Rrtr, ErrorKind::Normal, p).is_err());
        assert!(StateSpaceSpec::new(ModelKind::Lnam, ErrorKind::LogNormal, p).is_ok());
    }

    #[test]
    fn non_positive_observation_names_index() {
        let s = spec(ModelKind::Lnam, 0.05, 0.01);
        let curve = GrowthCurve::new(vec![1.0, 2.0], vec![0.01, -0.001]).unwrap();
        assert!(matches!(marginal_loglik(&s, &curve), Err(Error::NonPositiveObservation { index: 1, .. })));
    }

    #[test]
    fn exact_observation_pins_the_state() {
        for kind in ModelKind::ALL {
            let s = spec(kind, 0.05, 0.0);
            let curve = GrowthCurve::new(vec![0.5, 1.0, 2.0, 4.0], vec![0.0004, 0.002, 0.04, 0.15]).unwrap();
            let ys = latent_observations(kind, &curve).unwrap();
            for ((m, c), y) in filter_states(&s, &curve).unwrap().into_iter().zip(ys) {
                assert!((m - y).abs() < 1e-12 && c == 0.0);
            }
        }
    }

    #[test]
    fn variance_shrinks_without_intrinsic_noise() {
        let s = spec(ModelKind::Lnaa, 0.0, 0.01);
        let curve = GrowthCurve::new(vec![0.0, 0.5, 1.0, 2.0, 3.0], vec![1e-4, 4e-4, 0.002, 0.04, 0.15]).unwrap();
        let cs: Vec<f64> = filter_states(&s, &curve).unwrap().into_iter().map(|(_, c)| c).collect();
        assert!(cs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn split_additivity() {
        let s = spec(ModelKind::Lnam, 0.05, 0.02);
        let times = vec![0.3, 0.9, 1.4, 2.2, 3.0, 4.1];
        let values = vec![2e-4, 1e-3, 5e-3, 0.04, 0.11, 0.15];
        let curve = GrowthCurve::new(times.clone(), values.clone()).unwrap();
        let whole = marginal_loglik(&s, &curve).unwrap();
        let approx = Approximation::new(ModelKind::Lnam, &s.params).unwrap();
        let mut state = FilterState::initial(&approx);
        for i in 0..3 {
            state.assimilate(&approx, 4e-4, times[i], values[i].ln());
        }
        let first = state.loglik;
        state.loglik = 0.0;
        for i in 3..6 {
            state.assimilate(&approx, 4e-4, times[i], values[i].ln());
        }
        assert!((first + state.loglik - whole).abs() < 1e-12);
    }

    #[test]
    fn large_nu_slope() {
        let curve = GrowthCurve::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![0.01, 0.05, 0.1, 0.14, 0.15]).unwrap();
        let ll = |nu: f64| marginal_loglik(&spec(ModelKind::Lnaa, 0.05, nu), &curve).unwrap();
        let slope = (ll(2e4) - ll(1e4)) / (2e4f64.ln() - 1e4f64.ln());
        assert!((slope / -5.0 - 1.0).abs() < 0.01);
    }
}
