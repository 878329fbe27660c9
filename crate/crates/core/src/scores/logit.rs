use super::{check_finite, ScoreError};

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Maximum softmax probability.
///
/// Computed as `1 / Σ exp(l_c − max)`, which stays exact for logits of any
/// magnitude.
pub fn msp_score(logits: &[f64]) -> Result<f64, ScoreError> {
    if logits.is_empty() {
        return Err(ScoreError::EmptyVector);
    }
    check_finite(logits)?;
    let max = max_of(logits);
    let denom: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    Ok(1.0 / denom)
}

/// Negated energy `T·log Σ exp(l_c / T)`; higher for in-distribution inputs.
pub fn energy_score(logits: &[f64], temperature: f64) -> Result<f64, ScoreError> {
    if logits.is_empty() {
        return Err(ScoreError::EmptyVector);
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(ScoreError::InvalidConfig(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    check_finite(logits)?;
    let max = max_of(logits);
    // the max term contributes exactly 1, so the sum is ≥ 1
    let tail: f64 = logits
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .sum::<f64>()
        - 1.0;
    Ok(max + temperature * tail.ln_1p())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // reference values from 50-digit mpmath evaluation
    const REFERENCE: &[(&[f64], f64, f64, f64)] = &[
        (&[1.0, 2.0, 3.0], 1.0, 0.665_240_955_774_821_9, 3.407_605_964_444_380_3),
        (&[1.0, 2.0, 3.0], 2.0, 0.665_240_955_774_821_9, 4.360_539_341_283_469_2),
        (&[1000.0, 999.5, -1000.0, 998.0], 1.0, 0.574_096_992_967_694_6, 1000.554_956_919_642),
        (&[-1000.0, -1000.25, -999.125], 1.0, 0.574_212_851_769_883_4, -998.570_244_870_498_7),
        (&[1000.0, 0.0], 1.0, 1.0, 1000.0),
        (
            &[1234.5, -987.25, 1233.75, 1000.0, 1234.0],
            0.5,
            0.481_024_263_253_369_66,
            1234.732_184_392_054,
        ),
        (&[-1000.0, 1000.0, 500.5], 3.0, 1.0, 1000.0),
    ];

    #[test]
    fn matches_high_precision_reference() {
        for &(logits, t, msp, energy) in REFERENCE {
            assert!((msp_score(logits).unwrap() - msp).abs() < 1e-6, "{logits:?}");
            assert!(
                (energy_score(logits, t).unwrap() - energy).abs() < 1e-6,
                "{logits:?} T={t}"
            );
        }
    }

    #[test]
    fn closed_forms() {
        assert_eq!(msp_score(&[0.0, 0.0]).unwrap(), 0.5);
        assert!((msp_score(&[1000.0, 0.0]).unwrap() - 1.0).abs() < 1e-6);
        assert!((energy_score(&[0.0, 0.0], 1.0).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(energy_score(&[5.0], 1.0).unwrap(), 5.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(msp_score(&[]), Err(ScoreError::EmptyVector)));
        assert!(matches!(energy_score(&[], 1.0), Err(ScoreError::EmptyVector)));
        assert!(matches!(msp_score(&[f64::NAN]), Err(ScoreError::NonFiniteInput)));
        assert!(matches!(
            energy_score(&[1.0, f64::INFINITY], 1.0),
            Err(ScoreError::NonFiniteInput)
        ));
        assert!(energy_score(&[1.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn shift_invariance(
            logits in prop::collection::vec(-50.0f64..50.0, 1..12),
            shift in -1000.0f64..1000.0,
            t in 0.1f64..10.0,
        ) {
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let a = msp_score(&logits).unwrap();
            let b = msp_score(&shifted).unwrap();
            prop_assert!((a - b).abs() < 1e-6);
            prop_assert!(a > 0.0 && a <= 1.0);
            // logsumexp is shift-equivariant: E(l + c) = E(l) + c
            let e = energy_score(&logits, t).unwrap();
            let es = energy_score(&shifted, t).unwrap();
            prop_assert!((es - shift - e).abs() < 1e-6);
        }
    }
}
