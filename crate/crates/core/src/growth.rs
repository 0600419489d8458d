//! Deterministic logistic growth and the MDR/MDP fitness measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logistic growth parameters: carrying capacity, rate (per day), inoculum density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub k: f64,
    pub r: f64,
    pub p: f64,
}

impl LogisticParams {
    pub fn new(k: f64, r: f64, p: f64) -> Self {
        Self { k, r, p }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.r.is_finite() && self.p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite logistic parameters K={} r={} P={}",
                self.k, self.r, self.p
            )));
        }
        if self.k <= 0.0 || self.p <= 0.0 || self.r < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "logistic parameters out of range K={} r={} P={}",
                self.k, self.r, self.p
            )));
        }
        Ok(())
    }
}

/// Closed-form logistic solution with `t₀ = 0`; no validation, for inner loops.
#[inline]
pub fn logistic(k: f64, r: f64, p: f64, t: f64) -> f64 {
    let rt = r * t;
    let x = if rt > 30.0 {
        k / (1.0 + (k / p - 1.0) * (-rt).exp())
    } else {
        let e = rt.exp();
        k * p * e / (k + p * (e - 1.0))
    };
    // Rounding must not carry the curve outside the segment between P and K.
    x.max(k.min(p)).min(k.max(p))
}

/// `x(t) = K P e^{rt} / (K + P(e^{rt} − 1))`.
pub fn logistic_solution(params: &LogisticParams, t: f64) -> Result<f64> {
    if !(params.k.is_finite() && params.r.is_finite() && params.p.is_finite() && t.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "non-finite input K={} r={} P={} t={t}",
            params.k, params.r, params.p
        )));
    }
    Ok(logistic(params.k, params.r, params.p, t))
}

/// Maximum doubling rate, maximum doubling potential and their product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessScore {
    pub mdr: f64,
    pub mdp: f64,
    pub product: f64,
}

impl FitnessScore {
    /// A culture with `K ≤ 2P` never doubles from inoculum.
    pub fn is_dead(&self) -> bool {
        self.mdr == 0.0
    }
}

/// MDR/MDP fitness. Cultures with `K ≤ 2P` are dead: zero rate and zero product.
pub fn fitness(params: &LogisticParams) -> FitnessScore {
    let LogisticParams { k, r, p } = *params;
    if !(k.is_finite() && r.is_finite() && p.is_finite()) || k <= 0.0 || p <= 0.0 {
        return FitnessScore { mdr: 0.0, mdp: 0.0, product: 0.0 };
    }
    let mdp = if k > p { (k / p).log2() } else { 0.0 };
    if k <= 2.0 * p || r <= 0.0 {
        return FitnessScore { mdr: 0.0, mdp, product: 0.0 };
    }
    // ln(2(K−P)/(K−2P)) = ln 2 + ln1p(P/(K−2P))
    let denom = std::f64::consts::LN_2 + (p / (k - 2.0 * p)).ln_1p();
    let mdr = r / denom;
    FitnessScore { mdr, mdp, product: mdr * mdp }
}
