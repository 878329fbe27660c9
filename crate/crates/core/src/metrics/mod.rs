//! Detection rates, ROC area, and benchmark reports.
//!
//! An ensembled detector emits labels, not a scalar score, so its ROC curve
//! is traced by sweeping the target level: for every `α` on a grid from 0 to
//! 1 the scheme is applied at that level and the resulting (FPR, TPR) pair
//! recorded. With one model this is the ordinary score-threshold ROC curve
//! sampled at the reference quantiles.

mod report;

use serde::Serialize;
use thiserror::Error;

use crate::ensemble::{rejects, Decision, Scheme};
use crate::pvalue::PValueMatrix;
use crate::Label;

pub use report::{bench, bench_zoo, pvalue_splits, BenchConfig, DetectionReport, ReportMetadata, ReportRow, AVERAGE};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no decisions to count")]
    EmptyInput,
    #[error("rate undefined: no {0} samples")]
    DivisionByZeroGuard(&'static str),
    #[error("configuration: {0}")]
    ConfigError(String),
    #[error("p-value matrices have {id} and {ood} columns")]
    ModelCountMismatch { id: usize, ood: usize },
    #[error("p-value {0} outside [0, 1]")]
    PValueOutOfRange(f64),
}

/// Contingency counts of a detector on labelled ID and OOD inputs.
///
/// | detected \ truth | ID  | OOD |     |
/// |------------------|-----|-----|-----|
/// | ID               | `u` | `t` |     |
/// | OOD              | `v` | `s` | `k` |
/// |                  | `m0`| `m1`|     |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct DetectionCounts {
    pub u: usize,
    pub v: usize,
    pub t: usize,
    pub s: usize,
    pub m0: usize,
    pub m1: usize,
    pub k: usize,
}

impl DetectionCounts {
    pub fn from_labels(id: &[Label], ood: &[Label]) -> Self {
        let v = id.iter().filter(|&&l| l == Label::Ood).count();
        let s = ood.iter().filter(|&&l| l == Label::Ood).count();
        Self {
            u: id.len() - v,
            v,
            t: ood.len() - s,
            s,
            m0: id.len(),
            m1: ood.len(),
            k: v + s,
        }
    }

    /// Adds another table's counts.
    pub fn merge(&mut self, other: &Self) {
        self.u += other.u;
        self.v += other.v;
        self.t += other.t;
        self.s += other.s;
        self.m0 += other.m0;
        self.m1 += other.m1;
        self.k += other.k;
    }
}

/// Counts decisions on ID inputs and on OOD inputs.
pub fn confusion(id: &[Decision], ood: &[Decision]) -> Result<DetectionCounts, MetricsError> {
    if id.is_empty() || ood.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let labels = |d: &[Decision]| d.iter().map(|d| d.label).collect::<Vec<_>>();
    Ok(DetectionCounts::from_labels(&labels(id), &labels(ood)))
}

/// `(U/m0, T/m1)`: fraction of ID kept as ID, fraction of OOD passed as ID.
pub fn tpr_fpr(c: &DetectionCounts) -> Result<(f64, f64), MetricsError> {
    if c.m0 == 0 {
        return Err(MetricsError::DivisionByZeroGuard("ID"));
    }
    if c.m1 == 0 {
        return Err(MetricsError::DivisionByZeroGuard("OOD"));
    }
    Ok((c.u as f64 / c.m0 as f64, c.t as f64 / c.m1 as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    /// Target TPR level `1 − α` the scheme was run at.
    pub target_level: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AucGrid {
    pub step: f64,
    pub points: Vec<GridPoint>,
}

/// Number of grid intervals for `step`, which must divide 1.
pub fn grid_intervals(step: f64) -> Result<usize, MetricsError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(MetricsError::ConfigError(format!("grid step must lie in (0, 1], got {step}")));
    }
    let intervals = (1.0 / step).round();
    if (intervals * step - 1.0).abs() > 1e-9 {
        return Err(MetricsError::ConfigError(format!("grid step {step} does not divide 1")));
    }
    Ok(intervals as usize)
}

/// For each row: the first grid index whose level makes `scheme` reject, or
/// `intervals + 1` if none does. Relies on rejection being monotone in `α`.
fn first_rejecting_index(pmat: &PValueMatrix, scheme: Scheme, intervals: usize) -> Result<Vec<usize>, MetricsError> {
    pmat.rows()
        .map(|row| {
            if let Some(&p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(MetricsError::PValueOutOfRange(p));
            }
            let mut sorted = row.to_vec();
            sorted.sort_by(f64::total_cmp);
            let level = |g: usize| g as f64 / intervals as f64;
            // smallest g in [0, intervals] that rejects
            let (mut lo, mut hi) = (0, intervals + 1);
            while lo < hi {
                let mid = (lo + hi) / 2;
                if rejects(scheme, &sorted, level(mid)) {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            Ok(lo)
        })
        .collect()
}

/// Fraction of rows *not* rejected at each grid index.
fn acceptance_curve(first: &[usize], intervals: usize) -> Vec<f64> {
    let mut hist = vec![0usize; intervals + 2];
    for &g in first {
        hist[g] += 1;
    }
    let n = first.len() as f64;
    let mut rejected = 0;
    (0..=intervals)
        .map(|g| {
            rejected += hist[g];
            1.0 - rejected as f64 / n
        })
        .collect()
}

/// Trapezoidal area under `(fpr, tpr)` points with `(0,0)` and `(1,1)` added.
pub fn trapezoid_auc(points: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.into_iter().collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// ROC area of `scheme` from a sweep of the target level over `[0, 1]`.
pub fn auc_sweep(
    id_pvals: &PValueMatrix,
    ood_pvals: &PValueMatrix,
    scheme: Scheme,
    step: f64,
) -> Result<(f64, AucGrid), MetricsError> {
    if id_pvals.m() != ood_pvals.m() {
        return Err(MetricsError::ModelCountMismatch {
            id: id_pvals.m(),
            ood: ood_pvals.m(),
        });
    }
    if id_pvals.n() == 0 || ood_pvals.n() == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let intervals = grid_intervals(step)?;
    let tpr = acceptance_curve(&first_rejecting_index(id_pvals, scheme, intervals)?, intervals);
    let fpr = acceptance_curve(&first_rejecting_index(ood_pvals, scheme, intervals)?, intervals);
    let points: Vec<GridPoint> = (0..=intervals)
        .map(|g| GridPoint {
            target_level: 1.0 - g as f64 / intervals as f64,
            tpr: tpr[g],
            fpr: fpr[g],
        })
        .collect();
    let auc = trapezoid_auc(points.iter().map(|p| (p.fpr, p.tpr)));
    Ok((auc, AucGrid { step, points }))
}

/// Probability that a random ID score exceeds a random OOD score, ties
/// counted half: the rank-sum form of the ROC area.
pub fn rank_auc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64, MetricsError> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut ood = ood_scores.to_vec();
    ood.sort_by(f64::total_cmp);
    let wins: f64 = id_scores
        .iter()
        .map(|&s| {
            let below = ood.partition_point(|&o| o < s);
            let tied = ood.partition_point(|&o| o <= s) - below;
            below as f64 + 0.5 * tied as f64
        })
        .sum();
    Ok(wins / (id_scores.len() as f64 * ood.len() as f64))
}
