use super::EvalError;

fn check_pair(pred: &[f64], obs: &[f64]) -> Result<(), EvalError> {
    if pred.len() != obs.len() {
        return Err(EvalError::LengthMismatch(pred.len(), obs.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64, EvalError> {
    check_pair(pred, obs)?;
    let ss: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], obs: &[f64]) -> Result<f64, EvalError> {
    check_pair(pred, obs)?;
    let s: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// Central moments m2, m3, m4 with the 1/n normalisation.
fn central_moments(sample: &[f64]) -> Result<(f64, f64, f64), EvalError> {
    if sample.len() < 2 {
        return Err(EvalError::UndefinedMoment);
    }
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in sample {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if !(m2 > 0.0) {
        return Err(EvalError::UndefinedMoment);
    }
    Ok((m2, m3, m4))
}

/// Moment-ratio skewness `m3 / m2^(3/2)`.
pub fn skewness(sample: &[f64]) -> Result<f64, EvalError> {
    let (m2, m3, _) = central_moments(sample)?;
    Ok(m3 / m2.powf(1.5))
}

/// Moment-ratio kurtosis `m4 / m2²` (not excess kurtosis).
pub fn kurtosis(sample: &[f64]) -> Result<f64, EvalError> {
    let (m2, _, m4) = central_moments(sample)?;
    Ok(m4 / (m2 * m2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn rmse_mae_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_relative_eq!(rmse(&[3.0, 1.0], &[1.0, 1.0]).unwrap(), 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(rmse(&[5.0], &[2.0]).unwrap(), 3.0);
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[3.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[], &[]), Err(EvalError::EmptyInput));
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch(1, 2))));
    }

    #[test]
    fn moment_examples() {
        assert_eq!(skewness(&[-1.0, 0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(kurtosis(&[-1.0, 1.0, -1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(skewness(&[2.0, 2.0, 2.0]), Err(EvalError::UndefinedMoment));
        assert_eq!(kurtosis(&[2.0]), Err(EvalError::UndefinedMoment));
    }

    #[test]
    fn gaussian_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let x: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(skewness(&x).unwrap().abs() < 0.05);
        assert!((kurtosis(&x).unwrap() - 3.0).abs() < 0.1);
    }

    proptest! {
        #[test]
        fn mae_never_exceeds_rmse(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..60)) {
            let (p, o): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = rmse(&p, &o).unwrap();
            let m = mae(&p, &o).unwrap();
            prop_assert!(m <= r * (1.0 + 1e-12) + 1e-12);
        }
    }
}
