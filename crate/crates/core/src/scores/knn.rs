use rayon::prelude::*;

use super::{check_finite, ScoreError};
use crate::ingest::FeatureMatrix;

/// Reference rows for exact k-th nearest neighbour search, stored in `f64`
/// and optionally L2-normalized.
#[derive(Debug, Clone)]
pub struct KnnBank {
    dim: usize,
    normalize: bool,
    rows: Vec<f64>,
}

fn l2_normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

impl KnnBank {
    pub fn new(bank: &FeatureMatrix, normalize: bool) -> Result<Self, ScoreError> {
        let dim = bank.cols();
        let mut rows: Vec<f64> = bank.data().iter().map(|&v| f64::from(v)).collect();
        check_finite(&rows)?;
        if normalize {
            for (i, row) in rows.chunks_exact_mut(dim).enumerate() {
                if !l2_normalize(row) {
                    return Err(ScoreError::ZeroNormVector(Some(i)));
                }
            }
        }
        Ok(Self {
            dim,
            normalize,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Euclidean distances from `query` to every bank row, after the bank's
    /// normalization has been applied to the query.
    pub fn distances(&self, query: &[f64]) -> Result<Vec<f64>, ScoreError> {
        if query.len() != self.dim {
            return Err(ScoreError::DimMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        check_finite(query)?;
        let mut q = query.to_vec();
        if self.normalize && !l2_normalize(&mut q) {
            return Err(ScoreError::ZeroNormVector(None));
        }
        Ok(self
            .rows
            .chunks_exact(self.dim)
            .map(|row| euclidean(&q, row))
            .collect())
    }

    /// `−d_(k)`: the negated distance to the k-th nearest bank row.
    pub fn score(&self, query: &[f64], k: usize) -> Result<f64, ScoreError> {
        if k == 0 {
            return Err(ScoreError::InvalidConfig("k must be at least 1".into()));
        }
        if k > self.len() {
            return Err(ScoreError::KTooLarge {
                k,
                bank: self.len(),
            });
        }
        let mut dist = self.distances(query)?;
        let (_, kth, _) = dist.select_nth_unstable_by(k - 1, f64::total_cmp);
        Ok(-*kth)
    }

    /// Scores every row of `queries` in parallel.
    pub fn score_rows(&self, queries: &FeatureMatrix, k: usize) -> Result<Vec<f64>, ScoreError> {
        queries
            .iter_rows()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|row| self.score(&super::to_f64(row), k))
            .collect()
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Negated Euclidean distance from `query` to its k-th nearest row of `bank`.
///
/// Ties are resolved by order statistic: the k-th entry of the sorted
/// distance multiset.
pub fn knn_score(
    query: &[f64],
    bank: &FeatureMatrix,
    k: usize,
    normalize: bool,
) -> Result<f64, ScoreError> {
    if k > bank.rows() {
        return Err(ScoreError::KTooLarge {
            k,
            bank: bank.rows(),
        });
    }
    KnnBank::new(bank, normalize)?.score(query, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fm(rows: &[&[f32]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn examples() {
        let bank = fm(&[&[0.0, 0.0]]);
        assert_eq!(knn_score(&[3.0, 4.0], &bank, 1, false).unwrap(), -5.0);
        let bank = fm(&[&[1.0, 2.0], &[7.0, 7.0]]);
        assert_eq!(knn_score(&[1.0, 2.0], &bank, 1, false).unwrap(), 0.0);
        let bank = fm(&[&[0.0, 0.0], &[1.0, 0.0], &[4.0, 0.0]]);
        assert_eq!(knn_score(&[0.0, 0.0], &bank, 2, false).unwrap(), -1.0);
    }

    #[test]
    fn errors() {
        let bank = fm(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            knn_score(&[1.0, 0.0], &bank, 3, false),
            Err(ScoreError::KTooLarge { k: 3, bank: 2 })
        ));
        assert!(matches!(
            knn_score(&[0.0, 0.0], &bank, 1, true),
            Err(ScoreError::ZeroNormVector(None))
        ));
        assert!(matches!(
            knn_score(&[1.0], &bank, 1, false),
            Err(ScoreError::DimMismatch { .. })
        ));
        let zero_row = fm(&[&[0.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            KnnBank::new(&zero_row, true),
            Err(ScoreError::ZeroNormVector(Some(0)))
        ));
    }

    #[test]
    fn normalization_ignores_scale() {
        let bank = fm(&[&[2.0, 0.0], &[0.0, 5.0]]);
        let s = knn_score(&[10.0, 0.0], &bank, 1, true).unwrap();
        assert!(s.abs() < 1e-12);
        let s = knn_score(&[0.0, 3.0], &bank, 2, true).unwrap();
        assert!((s + 2f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn equals_full_sort(
            seed in any::<u64>(),
            n in 1usize..300,
            d in 1usize..6,
            k_frac in 0.0f64..1.0,
            normalize in any::<bool>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // coarse grid so that distance ties actually occur
            let data: Vec<f32> = (0..n * d).map(|_| rng.gen_range(-4i32..=4) as f32 + 0.5).collect();
            let bank = FeatureMatrix::new(n, d, data).unwrap();
            let query: Vec<f64> = (0..d).map(|_| f64::from(rng.gen_range(-4i32..=4)) + 0.25).collect();
            let k = 1 + ((n - 1) as f64 * k_frac) as usize;
            let kb = KnnBank::new(&bank, normalize).unwrap();
            let mut sorted = kb.distances(&query).unwrap();
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(knn_score(&query, &bank, k, normalize).unwrap(), -sorted[k - 1]);
        }
    }
}
