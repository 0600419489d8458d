//! Gaussian transition densities of the three diffusion approximations to the SLGM.
//!
//! RRTR and LNAM live on the log-density scale, LNAA on the density scale. Every
//! transition is affine in the previous state, `mean = A + B·prev`, which is all
//! the Kalman filter needs.
//!
//! With `d(T) = bP + (a − bP)e^{−aT}` the skeletons are `log(aP/d)` (LNAM) and
//! `aP/d` (LNAA), and both variances share the factor
//! `E = b²P²(1 − e^{−2aΔ}) + 4bP(a − bP)e^{−aT}(1 − e^{−aΔ}) + 2aΔ(a − bP)²e^{−2aT}`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::growth::logistic;
use crate::sde::SdeParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Rrtr,
    Lnam,
    Lnaa,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Rrtr, ModelKind::Lnam, ModelKind::Lnaa];

    /// Whether the latent state is the log-density.
    pub fn log_scale(self) -> bool {
        !matches!(self, ModelKind::Lnaa)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rrtr => "rrtr",
            ModelKind::Lnam => "lnam",
            ModelKind::Lnaa => "lnaa",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rrtr" => Ok(ModelKind::Rrtr),
            "lnam" => Ok(ModelKind::Lnam),
            "lnaa" => Ok(ModelKind::Lnaa),
            _ => Err(Error::Config(format!("unknown model kind {s:?} (expected rrtr, lnam or lnaa)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionMoments {
    pub mean: f64,
    pub variance: f64,
    /// `(A, B)` with `mean = A + B·prev`.
    pub affine: (f64, f64),
    /// Set when rounding produced a negative variance that was clamped to zero.
    pub clamped: bool,
}

/// Parameters of one approximation, pre-digested for repeated transition evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Approximation {
    kind: ModelKind,
    a: f64,
    b: f64,
    p: f64,
    sigma2: f64,
    /// `K/P − 1`, RRTR only.
    q: f64,
}

impl Approximation {
    pub fn new(kind: ModelKind, params: &SdeParams) -> Result<Self> {
        params.validate()?;
        let g = params.growth;
        let sigma2 = params.sigma * params.sigma;
        let a = match kind {
            ModelKind::Lnam => g.r - 0.5 * sigma2,
            _ => g.r,
        };
        if kind == ModelKind::Lnam && a <= 0.0 {
            return Err(Error::InvalidRegime(format!(
                "LNAM needs r > σ²/2 (r={}, σ={})",
                g.r, params.sigma
            )));
        }
        if a <= 0.0 {
            return Err(Error::InvalidRegime(format!("growth rate must be positive, got r={}", g.r)));
        }
        Ok(Self { kind, a, b: g.r / g.k, p: g.p, sigma2, q: g.k / g.p - 1.0 })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    #[inline]
    fn d(&self, t: f64) -> f64 {
        let bp = self.b * self.p;
        bp + (self.a - bp) * (-self.a * t).exp()
    }

    /// Initial latent state at `t = 0`.
    pub fn initial_state(&self) -> f64 {
        if self.kind.log_scale() {
            self.p.ln()
        } else {
            self.p
        }
    }

    /// Deterministic skeleton on the model's latent scale.
    pub fn skeleton(&self, t: f64) -> f64 {
        match self.kind {
            ModelKind::Rrtr => logistic(self.a / self.b, self.a, self.p, t).ln(),
            ModelKind::Lnam => (self.a * self.p / self.d(t)).ln(),
            ModelKind::Lnaa => self.a * self.p / self.d(t),
        }
    }

    /// Shared variance factor `E`, evaluated with `expm1` to keep short steps accurate.
    #[inline]
    fn e_factor(&self, t: f64, dt: f64) -> f64 {
        let a = self.a;
        let bp = self.b * self.p;
        let c = a - bp;
        let et = (-a * t).exp();
        bp * bp * -(-2.0 * a * dt).exp_m1() + 4.0 * bp * c * et * -(-a * dt).exp_m1() + 2.0 * a * dt * c * c * et * et
    }

    pub fn transition(&self, prev: f64, t_prev: f64, t: f64) -> TransitionMoments {
        let dt = t - t_prev;
        let (offset, slope, variance) = match self.kind {
            ModelKind::Rrtr => {
                let r = self.a;
                let num = (self.q * (-r * t_prev).exp()).ln_1p();
                let den = (self.q * (-r * t).exp()).ln_1p();
                (num - den - 0.5 * self.sigma2 * dt, 1.0, self.sigma2 * dt)
            }
            ModelKind::Lnam => {
                let (dp, dt_) = (self.d(t_prev), self.d(t));
                let slope = (-self.a * dt).exp() * dp / dt_;
                let v_t = (self.a * self.p / dt_).ln();
                let v_p = (self.a * self.p / dp).ln();
                let var = self.sigma2 / (2.0 * self.a * dt_ * dt_) * self.e_factor(t, dt);
                (v_t - slope * v_p, slope, var)
            }
            ModelKind::Lnaa => {
                let (dp, dt_) = (self.d(t_prev), self.d(t));
                let ratio = dp / dt_;
                let slope = (-self.a * dt).exp() * ratio * ratio;
                let v_t = self.a * self.p / dt_;
                let v_p = self.a * self.p / dp;
                let d2 = dt_ * dt_;
                let var = 0.5 * self.sigma2 * self.a * self.p * self.p / (d2 * d2) * self.e_factor(t, dt);
                (v_t - slope * v_p, slope, var)
            }
        };
        let clamped = variance < 0.0;
        TransitionMoments {
            mean: offset + slope * prev,
            variance: if clamped { 0.0 } else { variance },
            affine: (offset, slope),
            clamped,
        }
    }

    /// Limit of the transition variance as `t → ∞` (RRTR has none and returns infinity).
    pub fn stationary_variance(&self) -> f64 {
        match self.kind {
            ModelKind::Rrtr => f64::INFINITY,
            ModelKind::Lnam => self.sigma2 / (2.0 * self.a),
            ModelKind::Lnaa => self.sigma2 * self.a / (2.0 * self.b * self.b),
        }
    }

    /// Exact draw of the approximating process on `grid`, returned on the density scale.
    pub fn sample_path<R: Rng + ?Sized>(&self, grid: &[f64], rng: &mut R) -> Vec<f64> {
        let mut state = self.initial_state();
        let mut t = 0.0;
        grid.iter()
            .map(|&tn| {
                if tn > t {
                    let m = self.transition(state, t, tn);
                    let z: f64 = StandardNormal.sample(rng);
                    state = m.mean + m.variance.sqrt() * z;
                    t = tn;
                }
                if self.kind.log_scale() {
                    state.exp()
                } else {
                    state
                }
            })
            .collect()
    }
}

/// Deterministic skeleton: log-scale for LNAM, density scale for RRTR and LNAA.
pub fn det_skeleton(kind: ModelKind, params: &SdeParams, t: f64) -> Result<f64> {
    let approx = Approximation::new(kind, params)?;
    Ok(match kind {
        ModelKind::Rrtr => approx.skeleton(t).exp(),
        _ => approx.skeleton(t),
    })
}

/// One-step transition moments from `prev` at `t_prev` to `t`.
pub fn transition(kind: ModelKind, params: &SdeParams, prev: f64, t_prev: f64, t: f64) -> Result<TransitionMoments> {
    if !(t >= t_prev && t_prev >= 0.0) {
        return Err(Error::InvalidParameter(format!("need t ≥ t_prev ≥ 0, got t_prev={t_prev}, t={t}")));
    }
    Ok(Approximation::new(kind, params)?.transition(prev, t_prev, t))
}
