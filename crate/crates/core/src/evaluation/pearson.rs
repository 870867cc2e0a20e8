//! Pearson product-moment correlation with a two-sided p-value.

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PearsonError {
    #[error("need at least two paired points, got {0}")]
    TooFewPoints(usize),
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate variance: one input is constant")]
    DegenerateVariance,
}

/// Standard product-moment correlation in [−1, 1].
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, PearsonError> {
    if xs.len() != ys.len() {
        return Err(PearsonError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(PearsonError::TooFewPoints(n));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(PearsonError::DegenerateVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation plus the two-sided p-value from the t distribution with
/// n−2 degrees of freedom. With fewer than 3 points the p-value is 1.
pub fn pearson_with_p(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), PearsonError> {
    let r = pearson(xs, ys)?;
    let n = xs.len();
    if n < 3 {
        return Ok((r, 1.0));
    }
    if (1.0 - r * r) <= f64::EPSILON {
        return Ok((r, 0.0));
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((r, p.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity_is_one() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn five_point_hand_dataset() {
        // r computed by hand with exact fractions for this dataset:
        // xs = [1,2,3,4,5], ys = [2,1,4,3,7]
        // sxy = 12, sxx = 10, syy = 106/5 → r = 12 / sqrt(212)
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [2.0, 1.0, 4.0, 3.0, 7.0];
        let expected = 12.0 / 212.0_f64.sqrt();
        assert!((pearson(&xs, &ys).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn affine_invariance() {
        let xs = [0.3, -1.2, 4.4, 2.0, 0.0, 9.1];
        let ys = [1.0, 0.5, 3.3, -2.0, 4.4, 5.0];
        let r = pearson(&xs, &ys).unwrap();
        let xs2: Vec<f64> = xs.iter().map(|x| 5.5 * x - 3.0).collect();
        let ys2: Vec<f64> = ys.iter().map(|y| 0.25 * y + 100.0).collect();
        assert!((pearson(&xs2, &ys2).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(pearson(&[1.0], &[1.0]).unwrap_err(), PearsonError::TooFewPoints(1));
        assert_eq!(
            pearson(&[1.0, 2.0], &[1.0]).unwrap_err(),
            PearsonError::LengthMismatch(2, 1)
        );
        assert_eq!(
            pearson(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]).unwrap_err(),
            PearsonError::DegenerateVariance
        );
    }

    #[test]
    fn p_value_behaviour() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let perfect: Vec<f64> = xs.iter().map(|x| 3.0 * x).collect();
        let (r, p) = pearson_with_p(&xs, &perfect).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert_eq!(p, 0.0);

        let noisy = [2.0, 1.0, 4.0, 3.0, 7.0];
        let (_, p) = pearson_with_p(&xs, &noisy).unwrap();
        assert!(p > 0.0 && p < 1.0);

        let (_, p2) = pearson_with_p(&[1.0, 2.0], &[5.0, 9.0]).unwrap();
        assert_eq!(p2, 1.0);
    }
}
