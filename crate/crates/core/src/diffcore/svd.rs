//! Thin SVD by one-sided (Hestenes) Jacobi rotations.

use super::matrix::Matrix;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `A = U diag(s) V^T`.
///
/// For an `m x n` input with `k = min(m, n)`, `U` is `m x k`, `V` is `n x k`
/// and `s` has `k` non-negative entries sorted descending. Both factors have
/// orthonormal columns, including the ones paired with zero singular values.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::Numeric("svd input".into()));
    }
    if a.rows() < a.cols() {
        let t = jacobi_tall(&a.transpose());
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    Ok(jacobi_tall(a))
}

/// Works on columns of a tall (`m >= n`) matrix, stored column-major for
/// cache-friendly rotations.
fn jacobi_tall(a: &Matrix) -> Svd {
    let (m, n) = a.shape();
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.col_vec(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let tol = f64::EPSILON;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (wp, wq) = (&w[p], &w[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..m {
                        alpha += wp[i] * wp[i];
                        beta += wq[i] * wq[i];
                        gamma += wp[i] * wq[i];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = w.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let smax = norms.iter().cloned().fold(0.0, f64::max);
    let cutoff = smax * (m.max(n) as f64) * f64::EPSILON;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    for &j in &order {
        s.push(norms[j]);
        v_cols.push(v[j].clone());
        if norms[j] > cutoff && norms[j] > 0.0 {
            u_cols.push(w[j].iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(Vec::new());
        }
    }
    complete_basis(&mut u_cols, m);

    let u = Matrix::from_fn(m, n, |i, j| u_cols[j][i]);
    let v = Matrix::from_fn(n, n, |i, j| v_cols[j][i]);
    Svd { u, s, v }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills empty columns (paired with numerically zero singular values) with
/// unit vectors orthogonal to the rest, via twice-applied Gram-Schmidt.
fn complete_basis(cols: &mut [Vec<f64>], m: usize) {
    let mut candidate = 0;
    for j in 0..cols.len() {
        if !cols[j].is_empty() {
            continue;
        }
        loop {
            assert!(candidate < m, "ran out of basis candidates");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for other in cols.iter().filter(|c| !c.is_empty()) {
                    let d: f64 = other.iter().zip(&e).map(|(a, b)| a * b).sum();
                    e.iter_mut().zip(other).for_each(|(x, o)| *x -= d * o);
                }
            }
            let nrm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nrm > 1e-8 {
                cols[j] = e.into_iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}

/// Columns of a `rows x cols` matrix made orthonormal by modified
/// Gram-Schmidt (applied twice). Used for the QR-based orthogonal init.
pub fn orthonormalize_columns(a: &Matrix) -> Result<Matrix> {
    let (m, n) = a.shape();
    if n > m {
        return Err(Error::Argument(format!(
            "cannot orthonormalize {n} columns in dimension {m}"
        )));
    }
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col_vec(j)).collect();
    for j in 0..n {
        for _ in 0..2 {
            for k in 0..j {
                let d: f64 = cols[k].iter().zip(&cols[j]).map(|(x, y)| x * y).sum();
                let ck = cols[k].clone();
                cols[j].iter_mut().zip(&ck).for_each(|(x, y)| *x -= d * y);
            }
        }
        let nrm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm < 1e-12 {
            return Err(Error::Numeric("rank-deficient orthonormalization input".into()));
        }
        cols[j].iter_mut().for_each(|x| *x /= nrm);
    }
    Ok(Matrix::from_fn(m, n, |i, j| cols[j][i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::matrix::Trans;
    use crate::diffcore::rng::Rng;

    pub(crate) fn residuals(a: &Matrix, d: &Svd) -> (f64, f64, f64) {
        let us = Matrix::from_fn(d.u.rows(), d.s.len(), |i, j| d.u.get(i, j) * d.s[j]);
        let rec = us.matmul_t(Trans::No, &d.v, Trans::Yes).unwrap();
        let recon = a.sub(&rec).unwrap().frobenius_norm();
        let k = d.s.len();
        let utu = d.u.matmul_t(Trans::Yes, &d.u, Trans::No).unwrap();
        let vtv = d.v.matmul_t(Trans::Yes, &d.v, Trans::No).unwrap();
        let ou = utu.sub(&Matrix::identity(k)).unwrap().frobenius_norm();
        let ov = vtv.sub(&Matrix::identity(k)).unwrap().frobenius_norm();
        (recon, ou, ov)
    }

    fn random(m: usize, n: usize, seed: u64) -> Matrix {
        let mut r = Rng::new(seed);
        Matrix::from_fn(m, n, |_, _| r.normal())
    }

    #[test]
    fn identity_and_diagonal() {
        let d = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(d.s, vec![1.0, 1.0, 1.0]);
        let d = svd(&Matrix::diag(&[1.0, 3.0, 2.0])).unwrap();
        assert_eq!(d.s, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn random_square_self_check() {
        let a = random(50, 50, 11);
        let d = svd(&a).unwrap();
        let (r, ou, ov) = residuals(&a, &d);
        let scale = a.frobenius_norm().max(1.0);
        assert!(r <= 1e-10 * scale, "{r}");
        assert!(ou <= 1e-10 && ov <= 1e-10, "{ou} {ov}");
        assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rectangular_and_rank_deficient() {
        for (m, n) in [(7, 3), (3, 7)] {
            let a = random(m, n, 5);
            let d = svd(&a).unwrap();
            let (r, ou, ov) = residuals(&a, &d);
            assert!(r < 1e-12 && ou < 1e-12 && ov < 1e-12);
        }
        // Rank one: outer product.
        let a = Matrix::from_fn(4, 4, |i, j| (i + 1) as f64 * (j as f64 - 1.5));
        let d = svd(&a).unwrap();
        let (r, ou, ov) = residuals(&a, &d);
        assert!(r < 1e-12 && ou < 1e-12 && ov < 1e-12, "{r} {ou} {ov}");
        assert!(d.s[1] < 1e-12);
        let z = svd(&Matrix::zeros(3, 2)).unwrap();
        let (r, ou, ov) = residuals(&Matrix::zeros(3, 2), &z);
        assert!(r == 0.0 && ou < 1e-15 && ov < 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = Matrix::identity(2);
        a.set(0, 1, f64::NAN);
        assert!(matches!(svd(&a), Err(Error::Numeric(_))));
    }

    #[test]
    fn orthonormalize_gives_orthonormal_columns() {
        let q = orthonormalize_columns(&random(20, 8, 1)).unwrap();
        let qtq = q.matmul_t(Trans::Yes, &q, Trans::No).unwrap();
        assert!(qtq.sub(&Matrix::identity(8)).unwrap().frobenius_norm() < 1e-13);
    }
}
