//! Empirical-law summaries for the distribution-dependent driver.
//!
//! Drivers consume a marginal law only through its mean and its
//! Wasserstein-1 distance to the Dirac mass at zero; both are exact for
//! equal-weight empirical measures.

use crate::error::{MrbsdeError, Result};
use crate::reduce;

/// Equal-weight empirical law at one grid time.
#[derive(Debug, Clone)]
pub struct EmpiricalLaw {
    samples: Vec<f64>,
    sorted_cache: Option<Vec<f64>>,
}

impl EmpiricalLaw {
    pub fn new(samples: Vec<f64>) -> Self {
        Self {
            samples,
            sorted_cache: None,
        }
    }

    /// Builds the law together with its sorted copy.
    pub fn with_sorted(samples: Vec<f64>) -> Self {
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        Self {
            samples,
            sorted_cache: Some(sorted),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    fn sorted(&self) -> Vec<f64> {
        match &self.sorted_cache {
            Some(s) => s.clone(),
            None => {
                let mut s = self.samples.clone();
                s.sort_by(f64::total_cmp);
                s
            }
        }
    }
}

/// Summary statistics a driver is allowed to read from a law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LawStats {
    pub mean: f64,
    /// `W_1(law, delta_0)`, which equals the mean absolute value.
    pub w1_to_dirac0: f64,
}

/// Wasserstein-1 distance between two equal-size empirical laws: the mean
/// absolute difference of order statistics.
pub fn w1(a: &EmpiricalLaw, b: &EmpiricalLaw) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MrbsdeError::InvalidArgument(format!(
            "W1 requires equal sample counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(MrbsdeError::InvalidArgument(
            "W1 requires non-empty samples".into(),
        ));
    }
    let sa = a.sorted();
    let sb = b.sorted();
    Ok(reduce::mean_of(sa.len(), &|i| (sa[i] - sb[i]).abs()))
}

pub fn law_stats(samples: &[f64]) -> LawStats {
    LawStats {
        mean: reduce::mean(samples),
        w1_to_dirac0: reduce::mean_of(samples.len(), &|i| samples[i].abs()),
    }
}
