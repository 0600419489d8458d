//! Observation containers: single growth curves and two-condition screens.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Measurement-error structure of an observation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorKind {
    /// `y = x + N(0, ν²)`
    Normal,
    /// `log y = log x + N(0, ν²)`
    LogNormal,
}

/// Time-stamped scaled densities for one culture.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GrowthCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl GrowthCurve {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let curve = Self { times, values };
        curve.validate()?;
        Ok(curve)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::Data(format!(
                "{} times but {} observations",
                self.times.len(),
                self.values.len()
            )));
        }
        if let Some(i) = self.times.iter().position(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Data(format!("time {} at index {i} is not a finite non-negative value", self.times[i])));
        }
        if let Some(i) = self.values.iter().position(|y| !y.is_finite()) {
            return Err(Error::Data(format!("observation at index {i} is not finite")));
        }
        if let Some(i) = self.times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "times not strictly increasing at index {}: {} then {}",
                i + 1,
                self.times[i],
                self.times[i + 1]
            )));
        }
        Ok(())
    }

    /// Drop non-positive observations, which have no log.
    pub fn positive_only(&self) -> Self {
        let (times, values) = self
            .times
            .iter()
            .zip(&self.values)
            .filter(|(_, y)| **y > 0.0)
            .map(|(t, y)| (*t, *y))
            .unzip();
        Self { times, values }
    }
}

/// One culture time course within a screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repeat {
    pub id: String,
    pub batch: Option<String>,
    pub curve: GrowthCurve,
}

/// All cultures measured under one condition, keyed and ordered by gene name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Screen {
    pub label: String,
    pub genes: BTreeMap<String, Vec<Repeat>>,
}

impl Screen {
    pub fn new(label: impl Into<String>) -> Self {
        Self { label: label.into(), genes: BTreeMap::new() }
    }

    pub fn n_repeats(&self) -> usize {
        self.genes.values().map(Vec::len).sum()
    }

    pub fn n_observations(&self) -> usize {
        self.genes.values().flatten().map(|r| r.curve.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (gene, reps) in &self.genes {
            for rep in reps {
                rep.curve
                    .validate()
                    .map_err(|e| Error::Data(format!("gene {gene}, repeat {}: {e}", rep.id)))?;
            }
        }
        Ok(())
    }
}

/// Control (condition 0) and query (condition 1) screens.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScreenDataset {
    pub control: Screen,
    pub query: Screen,
}

impl ScreenDataset {
    pub fn condition(&self, c: usize) -> &Screen {
        if c == 0 {
            &self.control
        } else {
            &self.query
        }
    }

    /// Genes present in both conditions with at least one repeat each, and those missing from either.
    pub fn paired_genes(&self) -> (Vec<String>, Vec<String>) {
        let mut all: Vec<&String> = self.control.genes.keys().chain(self.query.genes.keys()).collect();
        all.sort();
        all.dedup();
        let has = |s: &Screen, g: &str| s.genes.get(g).is_some_and(|r| !r.is_empty());
        all.into_iter()
            .cloned()
            .partition(|g| has(&self.control, g) && has(&self.query, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_validation() {
        assert!(GrowthCurve::new(vec![0.0, 1.0], vec![0.1, 0.2]).is_ok());
        assert!(GrowthCurve::new(vec![1.0, 1.0], vec![0.1, 0.2]).is_err());
        assert!(GrowthCurve::new(vec![0.0], vec![f64::NAN]).is_err());
        assert!(GrowthCurve::new(vec![0.0], vec![]).is_err());
    }

    #[test]
    fn pairing_reports_missing() {
        let rep = Repeat { id: "1".into(), batch: None, curve: GrowthCurve::default() };
        let mut ds = ScreenDataset::default();
        ds.control.genes.insert("b".into(), vec![rep.clone()]);
        ds.control.genes.insert("a".into(), vec![rep.clone()]);
        ds.query.genes.insert("a".into(), vec![rep.clone()]);
        ds.query.genes.insert("c".into(), vec![]);
        let (paired, missing) = ds.paired_genes();
        assert_eq!(paired, vec!["a"]);
        assert_eq!(missing, vec!["b", "c"]);
    }
}
