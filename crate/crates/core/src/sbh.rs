//! Point functions, density diagnostics and the stability-based histogram.
//!
//! The release loop visits only points that occur in the input, so it runs
//! in time polynomial in the number of rows rather than the domain size.
//! That shortcut is only private if the visiting order is data-independent,
//! which is why [`sbh_release`] refuses datasets that are not in canonical
//! (lexicographic) order.

use std::collections::BTreeMap;

use crate::domain::{Dataset, DomainPoint, Histogram};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::noise::{sample_laplace, LaplaceScale, NoiseSource, PrivacyBudget};

/// `q_x(D)`: the multiplicity of `point` in `dataset`.
pub fn point_count(dataset: &Dataset, point: &DomainPoint) -> Result<u64> {
    dataset.schema().validate(point)?;
    Ok(dataset.rows().iter().filter(|r| *r == point).count() as u64)
}

/// Answers every point function at once.
pub fn exact_histogram(dataset: &Dataset) -> Histogram {
    let mut h = Histogram::empty(dataset.schema().clone());
    if dataset.is_canonical() {
        for (p, c) in dataset.runs() {
            h.insert_positive(p.clone(), c);
        }
    } else {
        let mut counts: BTreeMap<&DomainPoint, u64> = BTreeMap::new();
        for r in dataset.rows() {
            *counts.entry(r).or_insert(0) += 1;
        }
        for (p, c) in counts {
            h.insert_positive(p.clone(), c);
        }
    }
    h
}

/// `(k, γ)`: γ is the fraction of rows sitting at points with count ≥ k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityProfile {
    pub k: u64,
    pub gamma: f64,
}

pub fn density_profile(dataset: &Dataset, k: u64) -> Result<DensityProfile> {
    if k == 0 {
        return Err(Error::InvalidDensityThreshold);
    }
    if dataset.is_empty() {
        return Ok(DensityProfile { k, gamma: 0.0 });
    }
    let dense_rows: u64 = exact_histogram(dataset)
        .iter()
        .filter(|&(_, c)| c >= k)
        .map(|(_, c)| c)
        .sum();
    Ok(DensityProfile {
        k,
        gamma: dense_rows as f64 / dataset.len() as f64,
    })
}

/// Suppression threshold `2·ln(2/δ)/ε + 1`.
pub fn sbh_threshold(budget: PrivacyBudget) -> Result<f64> {
    if budget.delta() <= 0.0 {
        return Err(Error::ZeroDelta);
    }
    Ok(2.0 * (2.0 / budget.delta()).ln() / budget.epsilon() + 1.0)
}

/// Rows sorted lexicographically.
pub fn canonicalize(dataset: Dataset) -> Dataset {
    canonicalize_with(dataset, Execution::default())
}

pub fn canonicalize_with(mut dataset: Dataset, exec: Execution) -> Dataset {
    if !dataset.is_canonical() {
        exec.sort(dataset.rows_mut());
    }
    dataset
}

/// A randomized map from datasets to histograms.
///
/// The audit harness only sees mechanisms through this trait.
pub trait HistogramMechanism: Sync {
    fn release(&self, dataset: &Dataset, rng: &mut NoiseSource) -> Result<Histogram>;
}

/// The stability-based histogram at a fixed budget.
#[derive(Debug, Clone, Copy)]
pub struct StabilityHistogram {
    budget: PrivacyBudget,
    scale: LaplaceScale,
    threshold: f64,
}

impl StabilityHistogram {
    pub fn new(budget: PrivacyBudget) -> Result<Self> {
        let threshold = sbh_threshold(budget)?;
        Ok(StabilityHistogram {
            budget,
            scale: LaplaceScale::for_query(2.0, budget.epsilon())?,
            threshold,
        })
    }

    pub fn budget(&self) -> PrivacyBudget {
        self.budget
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

impl HistogramMechanism for StabilityHistogram {
    fn release(&self, dataset: &Dataset, rng: &mut NoiseSource) -> Result<Histogram> {
        if !dataset.is_canonical() {
            return Err(Error::NotCanonical);
        }
        let mut out = Histogram::empty(dataset.schema().clone());
        for (point, count) in dataset.runs() {
            let noisy = count as f64 + sample_laplace(self.scale, rng);
            if noisy < self.threshold {
                continue;
            }
            // f64::round is half-away-from-zero; noisy >= threshold > 1 here.
            let released = noisy.round() as u64;
            if released > 0 {
                out.insert_positive(point.clone(), released);
            }
        }
        Ok(out)
    }
}

/// Release a noisy histogram of a canonical dataset under `(ε, δ)`, δ > 0.
///
/// Each distinct point gets `q_x(D) + Lap(2/ε)`; values below
/// [`sbh_threshold`] are dropped and the rest are rounded half away from
/// zero. Points absent from the input never appear.
pub fn sbh_release(
    dataset: &Dataset,
    budget: PrivacyBudget,
    rng: &mut NoiseSource,
) -> Result<Histogram> {
    StabilityHistogram::new(budget)?.release(dataset, rng)
}
