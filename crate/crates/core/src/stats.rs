//! Rank and correlation statistics used for screening and diagnostics.

use nalgebra::DMatrix;

use crate::error::{Result, VineError};

/// Kendall's tau-b in O(n log n), following Knight's merge-sort algorithm.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(VineError::Dimension(format!("lengths {} and {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(VineError::InsufficientSample { needed: 2, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |len: u64| len * len.saturating_sub(1) / 2;
    let n0 = pairs(n as u64);

    // ties in x, and joint ties in (x, y)
    let mut tx = 0u64;
    let mut txy = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        tx += pairs((j - i) as u64);
        let mut k = i;
        while k < j {
            let mut l = k + 1;
            while l < j && y[idx[l]] == y[idx[k]] {
                l += 1;
            }
            txy += pairs((l - k) as u64);
            k = l;
        }
        i = j;
    }

    let mut ys: Vec<f64> = idx.iter().map(|&k| y[k]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut ty = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && ys[j] == ys[i] {
            j += 1;
        }
        ty += pairs((j - i) as u64);
        i = j;
    }

    let concordant_minus_discordant = n0 as f64 - tx as f64 - ty as f64 + txy as f64 - 2.0 * swaps as f64;
    let denom = ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt();
    if denom == 0.0 {
        return Err(VineError::DegenerateSample("constant input to Kendall's tau".into()));
    }
    Ok(concordant_minus_discordant / denom)
}

fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    sxy / (sxx * syy).sqrt()
}

/// Pearson correlation matrix of the given columns.
pub fn correlation_matrix(cols: &[&[f64]]) -> DMatrix<f64> {
    let k = cols.len();
    let mut m = DMatrix::identity(k, k);
    for i in 0..k {
        for j in i + 1..k {
            let r = pearson(cols[i], cols[j]);
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    m
}

/// Partial correlation of `x` and `y` given `z`, read off the inverse of
/// the joint correlation matrix. Fails if that matrix is singular.
pub fn partial_correlation(x: &[f64], y: &[f64], given: &[&[f64]]) -> Result<f64> {
    let mut cols: Vec<&[f64]> = vec![x, y];
    cols.extend_from_slice(given);
    let r = correlation_matrix(&cols);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(VineError::Singular((0..cols.len()).collect()));
    }
    let chol = r
        .cholesky()
        .ok_or_else(|| VineError::Singular((0..cols.len()).collect()))?;
    let p = chol.inverse();
    let d = (p[(0, 0)] * p[(1, 1)]).sqrt();
    if !(d.is_finite() && d > 0.0) || p[(0, 0)] > 1e12 || p[(1, 1)] > 1e12 {
        return Err(VineError::Singular((0..cols.len()).collect()));
    }
    Ok((-p[(0, 1)] / d).clamp(-1.0, 1.0))
}

/// Partial correlations of `target` with each of `others` given `given`,
/// computed from least-squares residuals on the conditioning columns. This
/// equals [`partial_correlation`] but factorises the conditioning set once.
pub fn partial_correlations(target: &[f64], others: &[&[f64]], given: &[&[f64]]) -> Result<Vec<f64>> {
    let n = target.len();
    let m = given.len();
    if others.iter().chain(given).any(|c| c.len() != n) {
        return Err(VineError::Dimension("columns of unequal length".into()));
    }
    if n < m + 3 {
        return Err(VineError::InsufficientSample { needed: m + 3, got: n });
    }
    let center = |c: &[f64]| -> Vec<f64> {
        let mean = c.iter().sum::<f64>() / n as f64;
        c.iter().map(|v| v - mean).collect()
    };
    let x = DMatrix::from_fn(n, m, {
        let cols: Vec<Vec<f64>> = given.iter().map(|c| center(c)).collect();
        move |i, j| cols[j][i]
    });
    let singular = || VineError::Singular((0..m + 2).collect());
    let chol = (x.transpose() * &x).cholesky().ok_or_else(singular)?;
    let resid = |c: &[f64]| -> Result<Vec<f64>> {
        let y = nalgebra::DVector::from_vec(center(c));
        let scale = y.norm();
        let e = if m == 0 {
            y
        } else {
            &y - &x * chol.solve(&(x.transpose() * &y))
        };
        if !(scale > 0.0) || !(e.norm() > 1e-10 * scale) {
            return Err(singular());
        }
        Ok(e.as_slice().to_vec())
    };
    let et = resid(target)?;
    let nt = et.iter().map(|v| v * v).sum::<f64>().sqrt();
    others
        .iter()
        .map(|c| {
            let e = resid(c)?;
            let ne = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = et.iter().zip(&e).map(|(a, b)| a * b).sum();
            Ok((dot / (nt * ne)).clamp(-1.0, 1.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_tau_b(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut s, mut nx, mut ny) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let a = (x[i] - x[j]).signum() * ((x[i] != x[j]) as i32 as f64);
                let b = (y[i] - y[j]).signum() * ((y[i] != y[j]) as i32 as f64);
                s += a * b;
                nx += a * a;
                ny += b * b;
            }
        }
        s / (nx * ny).sqrt()
    }

    proptest! {
        #[test]
        fn fast_tau_matches_quadratic(pairs in prop::collection::vec((0i32..6, 0i32..6), 3..60)) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let brute = brute_tau_b(&x, &y);
            match kendall_tau(&x, &y) {
                Ok(t) => prop_assert!((t - brute).abs() < 1e-12, "{} vs {}", t, brute),
                Err(_) => prop_assert!(!brute.is_finite()),
            }
        }
    }

    #[test]
    fn tau_extremes() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert_eq!(kendall_tau(&x, &y).unwrap(), 1.0);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(kendall_tau(&x, &z).unwrap(), -1.0);
        assert!(kendall_tau(&x, &vec![1.0; 50]).is_err());
    }

    #[test]
    fn partial_correlation_of_gaussian_chain() {
        // x -> z -> y, so x and y are independent given z
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let mut gauss = || {
            let u1: f64 = rng.random::<f64>().max(1e-300);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let x: Vec<f64> = (0..n).map(|_| gauss()).collect();
        let z: Vec<f64> = x.iter().map(|v| 0.8 * v + 0.6 * gauss()).collect();
        let y: Vec<f64> = z.iter().map(|v| 0.8 * v + 0.6 * gauss()).collect();
        assert!(pearson(&x, &y) > 0.5);
        assert!(partial_correlation(&x, &y, &[&z]).unwrap().abs() < 0.03);
        let dup = z.clone();
        assert!(partial_correlation(&x, &y, &[&z, &dup]).is_err());
    }

    #[test]
    fn batch_partial_correlations_match_precision_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cols: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..200).map(|_| rng.random::<f64>()).collect())
            .collect();
        let mixed: Vec<f64> = (0..200).map(|i| cols[0][i] + cols[2][i] - 0.5 * cols[4][i]).collect();
        let given: Vec<&[f64]> = vec![&cols[2], &cols[3]];
        let others: Vec<&[f64]> = vec![&cols[0], &cols[1], &cols[4], &cols[5]];
        let batch = partial_correlations(&mixed, &others, &given).unwrap();
        for (o, b) in others.iter().zip(&batch) {
            let single = partial_correlation(&mixed, o, &given).unwrap();
            assert!((single - b).abs() < 1e-10);
        }
        let plain = partial_correlations(&mixed, &others, &[]).unwrap();
        assert!((plain[0] - pearson(&mixed, &cols[0])).abs() < 1e-12);
        let dup: Vec<&[f64]> = vec![&cols[2], &cols[2]];
        assert!(partial_correlations(&mixed, &others, &dup).is_err());
    }
}
