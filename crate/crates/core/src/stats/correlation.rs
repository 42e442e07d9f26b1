use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{average_ranks, mean};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    /// Two-sided p from the t approximation with `n - 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    if x.len() != y.len() {
        return Err(Error::input(format!(
            "Spearman: lengths {} and {} differ",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::input("Spearman needs at least 3 pairs"));
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::input("Spearman: constant input, correlation undefined"))?;
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(SpearmanResult { rho, p_value, n })
}

/// `(mean(x) - mean(y)) / s_pooled` with `n - 1` variance denominators.
pub fn cohens_d(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::input("Cohen's d needs at least 2 values per group"));
    }
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let pooled = ((n1 - 1.0) * var(x) + (n2 - 1.0) * var(y)) / (n1 + n2 - 2.0);
    if pooled <= 0.0 {
        return Err(Error::input("Cohen's d: pooled variance is zero"));
    }
    Ok((mean(x) - mean(y)) / pooled.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[2.0, 4.0, 8.0, 16.0]).unwrap().rho, 1.0);
        assert_eq!(spearman(&x, &[9.0, 7.0, 5.0, 1.0]).unwrap().rho, -1.0);
        let r = spearman(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0]).unwrap();
        assert!((r.rho - 0.5).abs() < 1e-12);
        assert!(spearman(&x, &[1.0, 2.0]).is_err());
        assert!(spearman(&x, &[1.0; 4]).is_err());
    }

    #[test]
    fn spearman_p_value() {
        // t = 0.5·sqrt(8/0.75) ≈ 1.633 on 8 df → two-sided p ≈ 0.1411.
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y = [1.0, 0.0, 3.0, 2.0, 8.0, 4.0, 9.0, 5.0, 6.0, 7.0];
        let r = spearman(&x, &y).unwrap();
        let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        let rho = 1.0 - 6.0 * d2 / (10.0 * 99.0);
        assert!((r.rho - rho).abs() < 1e-12);
        assert!(r.p_value > 0.0 && r.p_value < 1.0);
    }

    #[test]
    fn cohens_d_examples() {
        assert_eq!(cohens_d(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap(), -1.0);
        assert_eq!(cohens_d(&[1.0, 3.0], &[3.0, 1.0]).unwrap(), 0.0);
        assert!(cohens_d(&[2.0, 2.0], &[2.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn spearman_invariances(
            x in proptest::collection::vec(-100.0f64..100.0, 3..30),
            seed in any::<u64>(),
        ) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * ((seed >> (i % 60)) & 3) as f64 + i as f64).collect();
            if let (Ok(a), Ok(b)) = (spearman(&x, &y), spearman(&x.iter().map(|v| v.powi(3)).collect::<Vec<_>>(), &y)) {
                prop_assert!((a.rho - b.rho).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&a.rho));
            }
            if let Ok(s) = spearman(&x, &x) {
                prop_assert!((s.rho - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn cohens_d_antisymmetric(
            x in proptest::collection::vec(-10.0f64..10.0, 2..12),
            y in proptest::collection::vec(-10.0f64..10.0, 2..12),
        ) {
            if let Ok(d) = cohens_d(&x, &y) {
                prop_assert!((d + cohens_d(&y, &x).unwrap()).abs() < 1e-12);
            }
        }
    }
}
