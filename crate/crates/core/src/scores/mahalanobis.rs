use nalgebra::{DMatrix, DVector};

use super::{check_finite, ScoreError};
use crate::ingest::FeatureMatrix;

/// Class-conditional Gaussians with one shared covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisModel {
    /// `C × d`, one row per class.
    class_means: DMatrix<f64>,
    /// Inverse of the ridge-regularized shared covariance.
    precision: DMatrix<f64>,
}

impl MahalanobisModel {
    /// Builds a model from explicit means (one per row) and a precision matrix.
    pub fn from_parts(class_means: DMatrix<f64>, precision: DMatrix<f64>) -> Result<Self, ScoreError> {
        let d = class_means.ncols();
        if class_means.nrows() == 0 || d == 0 {
            return Err(ScoreError::EmptyVector);
        }
        if precision.nrows() != d || precision.ncols() != d {
            return Err(ScoreError::DimMismatch {
                expected: d,
                found: precision.nrows(),
            });
        }
        Ok(Self {
            class_means,
            precision,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.class_means.ncols()
    }

    pub fn class_means(&self) -> &DMatrix<f64> {
        &self.class_means
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

/// Fits per-class means and the pooled within-class covariance
/// `Σ = (1/n) Σ_i (z_i − μ_{y_i})(z_i − μ_{y_i})ᵀ + ridge·I`.
pub fn fit_mahalanobis(
    features: &FeatureMatrix,
    labels: &[usize],
    class_count: usize,
    ridge: f64,
) -> Result<MahalanobisModel, ScoreError> {
    let (n, d) = (features.rows(), features.cols());
    if labels.len() != n {
        return Err(ScoreError::LabelCountMismatch {
            labels: labels.len(),
            rows: n,
        });
    }
    if class_count == 0 {
        return Err(ScoreError::EmptyClass(0));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
        return Err(ScoreError::LabelOutOfRange {
            label,
            classes: class_count,
        });
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(ScoreError::InvalidConfig(format!("cov_ridge must be nonnegative, got {ridge}")));
    }
    if n <= d {
        log::warn!("fitting a {d}-dimensional covariance from only {n} samples");
    }

    let mut means = DMatrix::<f64>::zeros(class_count, d);
    let mut counts = vec![0usize; class_count];
    for (row, &label) in features.iter_rows().zip(labels) {
        counts[label] += 1;
        for (j, &v) in row.iter().enumerate() {
            means[(label, j)] += f64::from(v);
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(ScoreError::EmptyClass(empty));
    }
    for (c, &count) in counts.iter().enumerate() {
        let mut r = means.row_mut(c);
        r /= count as f64;
    }

    let mut centered = DMatrix::<f64>::zeros(n, d);
    for (i, (row, &label)) in features.iter_rows().zip(labels).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            centered[(i, j)] = f64::from(v) - means[(label, j)];
        }
    }
    let mut cov = centered.tr_mul(&centered) / n as f64;
    for j in 0..d {
        cov[(j, j)] += ridge;
    }
    let chol = cov.cholesky().ok_or(ScoreError::SingularCovariance)?;
    let inv = chol.inverse();
    let precision = (&inv + inv.transpose()) * 0.5;
    Ok(MahalanobisModel {
        class_means: means,
        precision,
    })
}

/// Negative squared Mahalanobis distance to the nearest class mean.
pub fn mahalanobis_score(model: &MahalanobisModel, feature: &[f64]) -> Result<f64, ScoreError> {
    if feature.len() != model.dim() {
        return Err(ScoreError::DimMismatch {
            expected: model.dim(),
            found: feature.len(),
        });
    }
    check_finite(feature)?;
    let z = DVector::from_column_slice(feature);
    let mut best = f64::INFINITY;
    for c in 0..model.class_count() {
        let diff = &z - model.class_means.row(c).transpose();
        let dist = diff.dot(&(&model.precision * &diff));
        best = best.min(dist);
    }
    Ok(-best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: &[&[f32]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn zero_within_class_scatter() {
        let m = fit_mahalanobis(&fm(&[&[0.0, 0.0], &[2.0, 0.0]]), &[0, 1], 2, 1e-6).unwrap();
        assert_eq!(m.class_means().row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(m.class_means().row(1).iter().copied().collect::<Vec<_>>(), vec![2.0, 0.0]);
        // precision = (1e-6·I)⁻¹
        assert!((m.precision()[(0, 0)] - 1e6).abs() < 1e-3);
        assert!(m.precision()[(0, 1)].abs() < 1e-9);
    }

    #[test]
    fn pooled_covariance_one_class() {
        let ridge = 1e-6;
        let m = fit_mahalanobis(&fm(&[&[1.0], &[3.0]]), &[0, 0], 1, ridge).unwrap();
        assert_eq!(m.class_means()[(0, 0)], 2.0);
        // scatter 2 / n 2 = 1
        assert!((m.precision()[(0, 0)] - 1.0 / (1.0 + ridge)).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        let x = fm(&[&[1.0], &[3.0]]);
        assert!(matches!(
            fit_mahalanobis(&x, &[0, 5], 2, 1e-6),
            Err(ScoreError::LabelOutOfRange { label: 5, classes: 2 })
        ));
        assert!(matches!(
            fit_mahalanobis(&x, &[0, 0], 2, 1e-6),
            Err(ScoreError::EmptyClass(1))
        ));
        assert!(matches!(
            fit_mahalanobis(&x, &[0, 0], 1, 0.0),
            Ok(_)
        ));
        assert!(matches!(
            fit_mahalanobis(&fm(&[&[1.0], &[1.0]]), &[0, 0], 1, 0.0),
            Err(ScoreError::SingularCovariance)
        ));
    }

    #[test]
    fn score_examples() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let single = MahalanobisModel::from_parts(DMatrix::zeros(1, 2), eye.clone()).unwrap();
        assert_eq!(mahalanobis_score(&single, &[3.0, 4.0]).unwrap(), -25.0);
        assert_eq!(mahalanobis_score(&single, &[0.0, 0.0]).unwrap(), 0.0);

        let two = MahalanobisModel::from_parts(
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 10.0, 0.0]),
            eye,
        )
        .unwrap();
        assert_eq!(mahalanobis_score(&two, &[6.0, 0.0]).unwrap(), -16.0);
        assert!(matches!(
            mahalanobis_score(&two, &[1.0]),
            Err(ScoreError::DimMismatch { .. })
        ));
        assert!(matches!(
            mahalanobis_score(&two, &[1.0, f64::NAN]),
            Err(ScoreError::NonFiniteInput)
        ));
    }

    #[test]
    fn precision_inverts_covariance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (n, d, c) = (400, 5, 3);
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let data: Vec<f32> = (0..n * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let x = FeatureMatrix::new(n, d, data).unwrap();
        let ridge = 1e-6;
        let m = fit_mahalanobis(&x, &labels, c, ridge).unwrap();

        // rebuild Σ_ridge directly
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for (row, &l) in x.iter_rows().zip(&labels) {
            let diff = DVector::from_iterator(
                d,
                row.iter().enumerate().map(|(j, &v)| f64::from(v) - m.class_means()[(l, j)]),
            );
            cov += &diff * diff.transpose();
        }
        cov /= n as f64;
        cov += DMatrix::<f64>::identity(d, d) * ridge;
        let residual = cov * m.precision() - DMatrix::<f64>::identity(d, d);
        assert!(residual.amax() <= 1e-6);
        let asym = m.precision() - m.precision().transpose();
        assert!(asym.amax() <= 1e-8 * m.precision().amax());
    }
}
