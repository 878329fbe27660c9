//! Empirical p-values against in-distribution reference scores, and the
//! equivalent hard threshold.
//!
//! For a model with reference scores `r_1..r_n` (scores of held-out ID
//! samples), the p-value of a test score `s` is
//!
//! ```text
//! p(s) = #{ i : r_i ≤ s } / n
//! ```
//!
//! Small p-values mean the test input scores lower than almost all ID data.
//! Ties count as "at most `s`", so `p = 0` below the smallest reference and
//! `p = 1` at or above the largest.
//!
//! Rejecting when `p(s) < α` is the same rule as rejecting when `s < λ`, with
//! `λ` the `⌊α·n⌋`-th smallest reference score, whenever `α·n` is an integer
//! and `s` is not tied with a reference score. [`threshold_at_tpr`] computes
//! that `λ`.

use serde::Serialize;
use thiserror::Error;

use crate::scores::ScoreTable;
use crate::Label;

#[derive(Debug, Error, PartialEq)]
pub enum PValueError {
    #[error("reference scores are empty")]
    EmptyInput,
    #[error("non-finite score")]
    NonFiniteInput,
    #[error("model order mismatch: reference {reference:?}, test {test:?}")]
    ModelOrderMismatch {
        reference: Vec<String>,
        test: Vec<String>,
    },
    #[error("target TPR must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("p-value matrix shape: {0}")]
    Shape(String),
}

/// Rejection level `α = 1 − tpr0`, snapped to 12 decimal places so that
/// e.g. `tpr0 = 0.95` gives exactly the `f64` nearest to `0.05`.
///
/// Without the snap, `1.0 − 0.95` is a few ulps above `0.05`, and a p-value
/// of exactly `500/10000` would be rejected.
pub fn alpha_for(tpr0: f64) -> f64 {
    ((1.0 - tpr0) * 1e12).round() / 1e12
}

/// Sorted reference scores of one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalCdf {
    sorted_scores: Vec<f64>,
    model_name: String,
}

impl EmpiricalCdf {
    pub fn sorted_scores(&self) -> &[f64] {
        &self.sorted_scores
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn len(&self) -> usize {
        self.sorted_scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_scores.is_empty()
    }

    /// `#{ r ≤ s }`, by binary search.
    pub fn count_at_most(&self, s: f64) -> usize {
        self.sorted_scores.partition_point(|&r| r <= s)
    }

    /// The `rank`-th smallest reference score, 1-indexed.
    pub fn order_statistic(&self, rank: usize) -> Option<f64> {
        rank.checked_sub(1).and_then(|i| self.sorted_scores.get(i).copied())
    }
}

pub fn build_cdf(ref_scores: &[f64]) -> Result<EmpiricalCdf, PValueError> {
    build_named_cdf(ref_scores, "")
}

pub fn build_named_cdf(ref_scores: &[f64], model_name: &str) -> Result<EmpiricalCdf, PValueError> {
    if ref_scores.is_empty() {
        return Err(PValueError::EmptyInput);
    }
    if ref_scores.iter().any(|s| !s.is_finite()) {
        return Err(PValueError::NonFiniteInput);
    }
    let mut sorted_scores = ref_scores.to_vec();
    sorted_scores.sort_by(f64::total_cmp);
    Ok(EmpiricalCdf {
        sorted_scores,
        model_name: model_name.to_string(),
    })
}

/// `#{ r ≤ s } / n`.
pub fn empirical_pvalue(cdf: &EmpiricalCdf, test_score: f64) -> Result<f64, PValueError> {
    if !test_score.is_finite() {
        return Err(PValueError::NonFiniteInput);
    }
    Ok(cdf.count_at_most(test_score) as f64 / cdf.len() as f64)
}

/// `(#{ r ≤ s } + 1) / (n + 1)`: strictly positive p-values.
pub fn smoothed_pvalue(cdf: &EmpiricalCdf, test_score: f64) -> Result<f64, PValueError> {
    if !test_score.is_finite() {
        return Err(PValueError::NonFiniteInput);
    }
    Ok((cdf.count_at_most(test_score) + 1) as f64 / (cdf.len() + 1) as f64)
}

/// `n × m` p-values, one column per model.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueMatrix {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

impl PValueMatrix {
    /// Builds a matrix from row-major values. Entries outside `[0, 1]` are
    /// allowed here and rejected by the ensemble decisions.
    pub fn new(n: usize, m: usize, values: Vec<f64>) -> Result<Self, PValueError> {
        if m == 0 {
            return Err(PValueError::Shape("at least one model is required".into()));
        }
        if values.len() != n * m {
            return Err(PValueError::Shape(format!(
                "{} values for {n}x{m}",
                values.len()
            )));
        }
        Ok(Self { n, m, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, PValueError> {
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != m) {
            return Err(PValueError::Shape("ragged rows".into()));
        }
        let values = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), m, values)
    }

    /// A matrix with `m` columns and no rows.
    pub fn empty(m: usize) -> Result<Self, PValueError> {
        Self::new(0, m, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size, m ≥ 1 by construction
        self.values.chunks_exact(self.m)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Keeps the listed columns in the given order.
    pub fn select(&self, columns: &[usize]) -> Result<Self, PValueError> {
        if let Some(&bad) = columns.iter().find(|&&j| j >= self.m) {
            return Err(PValueError::Shape(format!("no column {bad}")));
        }
        let values = self
            .rows()
            .flat_map(|row| columns.iter().map(move |&j| row[j]))
            .collect();
        Self::new(self.n, columns.len(), values)
    }
}

/// One empirical CDF per model column of `reference`.
pub fn build_cdfs(reference: &ScoreTable) -> Result<Vec<EmpiricalCdf>, PValueError> {
    (0..reference.m())
        .map(|j| build_named_cdf(&reference.column(j), &reference.model_names()[j]))
        .collect()
}

/// P-values of every `test` entry against the matching `reference` column.
pub fn pvalue_matrix(
    reference: &ScoreTable,
    test: &ScoreTable,
    smoothing: bool,
) -> Result<PValueMatrix, PValueError> {
    pvalues_from_cdfs(&build_cdfs(reference)?, test, smoothing)
}

pub fn pvalues_from_cdfs(
    cdfs: &[EmpiricalCdf],
    test: &ScoreTable,
    smoothing: bool,
) -> Result<PValueMatrix, PValueError> {
    let names: Vec<String> = cdfs.iter().map(|c| c.model_name.clone()).collect();
    if names != test.model_names() {
        return Err(PValueError::ModelOrderMismatch {
            reference: names,
            test: test.model_names().to_vec(),
        });
    }
    let pvalue = if smoothing { smoothed_pvalue } else { empirical_pvalue };
    let mut values = Vec::with_capacity(test.n() * test.m());
    for i in 0..test.n() {
        for (cdf, &s) in cdfs.iter().zip(test.row(i)) {
            values.push(pvalue(cdf, s)?);
        }
    }
    PValueMatrix::new(test.n(), test.m(), values)
}

/// Rank of the order statistic used as threshold: `⌊α·n⌋`, robust to `α·n`
/// landing a rounding error below an integer.
pub fn threshold_rank(alpha: f64, n: usize) -> usize {
    let x = alpha * n as f64;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        x.floor() as usize
    }
}

/// Hard threshold `λ` keeping at least `tpr0` of the reference as ID: the
/// `⌊(1 − tpr0)·n⌋`-th smallest reference score, or `−∞` when that rank is 0.
pub fn threshold_at_tpr(cdf: &EmpiricalCdf, tpr0: f64) -> Result<f64, PValueError> {
    if !(tpr0 > 0.0 && tpr0 < 1.0) {
        return Err(PValueError::InvalidLevel(tpr0));
    }
    let rank = threshold_rank(alpha_for(tpr0), cdf.len());
    Ok(cdf.order_statistic(rank).unwrap_or(f64::NEG_INFINITY))
}

/// ID iff `score ≥ λ`.
pub fn threshold_decision(score: f64, lambda: f64) -> Label {
    if score >= lambda {
        Label::Id
    } else {
        Label::Ood
    }
}

/// Per-model hard thresholds at one target level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSet {
    pub lambdas: Vec<f64>,
    pub tpr0: f64,
}

impl ThresholdSet {
    pub fn from_cdfs(cdfs: &[EmpiricalCdf], tpr0: f64) -> Result<Self, PValueError> {
        Ok(Self {
            lambdas: cdfs
                .iter()
                .map(|c| threshold_at_tpr(c, tpr0))
                .collect::<Result<_, _>>()?,
            tpr0,
        })
    }
}
