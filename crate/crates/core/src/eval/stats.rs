use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < min {
        return Err(Error::InvalidData(format!("need at least {min} values, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite value".into()));
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 1)?;
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

/// Pearson product-moment correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 2)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::InvalidData("correlation undefined for constant input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing the average of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson on average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 2)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - (12.5f64).sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&[2.0], &[5.0]).unwrap(), 3.0);
        assert!(rmse(&[], &[]).is_err());
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn pearson_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let up: Vec<f64> = a.iter().map(|x| 2.0 * x + 3.0).collect();
        let down: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((pearson(&a, &up).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &down).unwrap() + 1.0).abs() < 1e-15);
        // Σdxdy = 4, Σdx² = Σdy² = 5.
        assert!((pearson(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
        assert!(pearson(&a, &[2.0; 4]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let a = [0.1, 0.5, 1.0, 2.0, 3.5];
        let e: Vec<f64> = a.iter().map(|x: &f64| x.exp()).collect();
        assert!((spearman(&a, &e).unwrap() - 1.0).abs() < 1e-15);
        let rev = [9.0, 7.0, 5.0, 3.0, 1.0];
        assert!((spearman(&a, &rev).unwrap() + 1.0).abs() < 1e-15);
        // Ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4): Σdxdy = 4.5, Σdx² = 4.5, Σdy² = 5.
        let want = 4.5 / (4.5f64.sqrt() * 5f64.sqrt());
        assert!((spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap() - want).abs() < 1e-15);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..30).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0..100.0f64, n),
                prop::collection::vec(-100.0..100.0f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn rmse_zero_iff_equal(y in prop::collection::vec(-10.0..10.0f64, 1..20), k in 0usize..20, d in 1e-6..1.0f64) {
            prop_assert_eq!(rmse(&y, &y).unwrap(), 0.0);
            let mut z = y.clone();
            let i = k % z.len();
            z[i] += d;
            prop_assert!(rmse(&y, &z).unwrap() > 0.0);
        }

        #[test]
        fn affine_invariance((a, b) in pair(), s in 0.1..10.0f64, t in -50.0..50.0f64) {
            let a2: Vec<f64> = a.iter().map(|x| s * x + t).collect();
            if let (Ok(p), Ok(p2)) = (pearson(&a, &b), pearson(&a2, &b)) {
                prop_assert!((p - p2).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&p));
            }
            if let (Ok(r), Ok(r2)) = (spearman(&a, &b), spearman(&a2, &b)) {
                prop_assert!((r - r2).abs() < 1e-12);
            }
        }

        #[test]
        fn spearman_monotone_invariance((a, b) in pair()) {
            let a3: Vec<f64> = a.iter().map(|x| x.powi(3) + x).collect();
            if let Ok(r) = spearman(&a, &b) {
                prop_assert!((r - spearman(&a3, &b).unwrap()).abs() < 1e-12);
            }
        }
    }
}
