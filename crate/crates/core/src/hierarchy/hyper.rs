//! Fixed prior hyper-parameters of the hierarchical screen models.
//!
//! Every Normal here is parameterised by precision. Gamma priors use shape and scale;
//! an infinite shape pins the transformation scale at exactly 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! hyper_struct {
    ($(#[$meta:meta])* $name:ident { $($field:ident = $default:expr),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
        pub struct $name {
            $(pub $field: f64,)*
        }

        impl Default for $name {
            fn default() -> Self {
                Self { $($field: $default,)* }
            }
        }

        impl $name {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field),)*];

            pub fn get(&self, key: &str) -> Option<f64> {
                match key {
                    $(stringify!($field) => Some(self.$field),)*
                    _ => None,
                }
            }

            /// Returns false when the key does not belong to this group.
            pub fn set(&mut self, key: &str, value: f64) -> bool {
                match key {
                    $(stringify!($field) => { self.$field = value; true })*
                    _ => false,
                }
            }
        }
    };
}

hyper_struct! {
    /// Growth hierarchy shared by the separate and joint models.
    GrowthHyper {
        k_mu = -2.01259579112252,
        eta_k_p = 0.032182397822033,
        r_mu = 0.97398228941848,
        eta_r_p = 0.133208648543871,
        p_mu = -9.03928728018792,
        eta_p = 0.469209463148874,
        nu_mu = 19.8220570630669,
        eta_nu_p = 0.0174869367984725,
        eta_k_o = -0.79421175992029,
        psi_k_o = 0.610871036009521,
        eta_r_o = 0.468382435659566,
        psi_r_o = 0.0985295312016232,
        eta_nu = -0.834166609695065,
        psi_nu = 0.855886535578262,
        tau_k_mu = 2.20064039227566,
        eta_tau_k_p = 0.0239817523340161,
        tau_r_mu = 3.64993037268256,
        eta_tau_r_p = 0.0188443648965434,
        eta_tau_k = 2.20064039227566,
        psi_tau_k = 0.0239817523340161,
        eta_tau_r = 3.64993037268256,
        psi_tau_r = 0.0188443648965434,
    }
}

hyper_struct! {
    /// Condition shifts and interaction terms of the joint model.
    JointHyper {
        alpha_mu = 0.0,
        eta_alpha = 0.25,
        beta_mu = 0.0,
        eta_beta = 0.25,
        p = 0.05,
        eta_gamma = -0.79421175992029,
        psi_gamma = 0.610871036009521,
        eta_omega = 0.468382435659566,
        psi_omega = 0.0985295312016232,
    }
}

hyper_struct! {
    /// Fitness-level interaction model.
    IhmHyper {
        z_mu = 3.65544229414228,
        eta_z_p = 0.697331530063874,
        eta_z = 0.104929506383255,
        psi_z = 0.417096744759774,
        eta_nu = 0.101545024587153,
        psi_nu = 2.45077729037385,
        nu_mu = 2.60267545154548,
        eta_nu_p = 0.0503202367841729,
        alpha_mu = 0.0,
        eta_alpha = 0.309096075088720,
        p = 0.05,
        eta_gamma = 0.104929506383255,
        psi_gamma = 0.417096744759774,
    }
}

hyper_struct! {
    /// Batch effects and transformation scales.
    VariantHyper {
        kappa_p = 0.0,
        eta_kappa = 1.166666666666,
        lambda_p = 0.0,
        eta_lambda = 1.166666666666,
        phi_shape = 100.0,
        phi_scale = 0.01,
        chi_shape = 100.0,
        chi_scale = 0.01,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HyperParams {
    pub growth: GrowthHyper,
    pub joint: JointHyper,
    pub ihm: IhmHyper,
    pub variant: VariantHyper,
}

impl HyperParams {
    /// Flat `group.key` names, in a stable order.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let mut push = |group: &str, keys: &[&str], get: &dyn Fn(&str) -> Option<f64>| {
            for k in keys {
                out.push((format!("{group}.{k}"), get(k).expect("listed key")));
            }
        };
        push("growth", GrowthHyper::KEYS, &|k| self.growth.get(k));
        push("joint", JointHyper::KEYS, &|k| self.joint.get(k));
        push("ihm", IhmHyper::KEYS, &|k| self.ihm.get(k));
        push("variant", VariantHyper::KEYS, &|k| self.variant.get(k));
        out
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let known = match key.split_once('.') {
            Some(("growth", k)) => self.growth.set(k, value),
            Some(("joint", k)) => self.joint.set(k, value),
            Some(("ihm", k)) => self.ihm.set(k, value),
            Some(("variant", k)) => self.variant.set(k, value),
            _ => false,
        };
        if !known {
            return Err(Error::Config(format!("unknown hyper-parameter {key:?}")));
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("joint.p", self.joint.p), ("ihm.p", self.ihm.p)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {p}")));
            }
        }
        for (k, v) in self.entries() {
            if v.is_nan() {
                return Err(Error::Config(format!("{k} is NaN")));
            }
            let is_precision = k.contains(".eta_") && !k.ends_with("eta_k_o")
                && !k.ends_with("eta_r_o")
                && !k.ends_with("eta_nu")
                && !k.ends_with("eta_tau_k")
                && !k.ends_with("eta_tau_r")
                && !k.ends_with("eta_gamma")
                && !k.ends_with("eta_omega")
                && !k.ends_with("eta_z")
                || k.contains(".psi_");
            if is_precision && v <= 0.0 {
                return Err(Error::Config(format!("{k} is a precision and must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values_round_trip() {
        let h = HyperParams::default();
        assert_eq!(h.growth.k_mu, -2.01259579112252);
        assert_eq!(h.joint.p, 0.05);
        assert_eq!(h.ihm.eta_alpha, 0.309096075088720);
        let mut copy = HyperParams { growth: GrowthHyper { k_mu: 0.0, ..h.growth }, ..h };
        for (k, v) in h.entries() {
            copy.set(&k, v).unwrap();
        }
        assert_eq!(copy, h);
        assert!(h.validate().is_ok());
    }

    #[test]
    fn rejects_bad_values() {
        let mut h = HyperParams::default();
        assert!(h.set("joint.p", 1.5).is_err());
        assert!(h.set("growth.nope", 1.0).is_err());
        let mut h = HyperParams::default();
        assert!(h.set("growth.eta_k_p", -1.0).is_err());
        let mut h = HyperParams::default();
        assert!(h.set("growth.eta_k_o", -3.0).is_ok());
    }
}
