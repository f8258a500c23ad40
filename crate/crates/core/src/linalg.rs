//! Small dense f64 linear algebra: square matrices, Cholesky
//! factorization, triangular solves, and a cyclic Jacobi eigensolver.
//!
//! Everything here is sequential; matrix orders are at most a few
//! hundred, so the cost is negligible next to the per-pixel transforms.

use crate::error::{Error, Result};

/// Square row-major f64 matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    n: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        Mat {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let mut m = Mat::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "from_rows: ragged input");
            m.data[i * n..(i + 1) * n].copy_from_slice(r);
        }
        m
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i)).sum()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.at(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.n, rhs.n);
        let n = self.n;
        let mut out = Mat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                let rrow = rhs.row(k);
                let orow = &mut out.data[i * n..(i + 1) * n];
                for (o, r) in orow.iter_mut().zip(rrow) {
                    *o += a * r;
                }
            }
        }
        out
    }

    pub fn add_scaled_identity(&self, eps: f64) -> Mat {
        let mut m = self.clone();
        for i in 0..self.n {
            m.data[i * self.n + i] += eps;
        }
        m
    }

    pub fn scale(&self, s: f64) -> Mat {
        let mut m = self.clone();
        for v in &mut m.data {
            *v *= s;
        }
        m
    }

    pub fn add(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.n, rhs.n);
        let mut m = self.clone();
        for (a, b) in m.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        m
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, rhs: &Mat) -> f64 {
        assert_eq!(self.n, rhs.n);
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        for i in 0..self.n {
            for j in 0..i {
                if (self.at(i, j) - self.at(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dot product with four independent accumulators combined in a fixed
/// order: vectorizes without losing run-to-run determinism.
pub fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let quads = a.len() / 4;
    let mut acc = [0.0f64; 4];
    for i in 0..quads {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
    for j in 4 * quads..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// Sum with the same fixed four-lane decomposition as `dot_slices`.
pub fn sum_slice(a: &[f64]) -> f64 {
    let quads = a.len() / 4;
    let mut acc = [0.0f64; 4];
    for i in 0..quads {
        let j = 4 * i;
        acc[0] += a[j];
        acc[1] += a[j + 1];
        acc[2] += a[j + 2];
        acc[3] += a[j + 3];
    }
    let mut s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
    for v in &a[4 * quads..] {
        s += v;
    }
    s
}

/// Lower Cholesky factor L with L·Lᵀ = S + eps·I.
/// `S` must be symmetric; fails if the regularized matrix is not
/// positive definite or contains non-finite entries.
pub fn cholesky(s: &Mat, eps: f64) -> Result<Mat> {
    let n = s.order();
    if !s.all_finite() || !eps.is_finite() {
        return Err(Error::numeric("cholesky", "non-finite input"));
    }
    let mut l = Mat::zeros(n);
    for j in 0..n {
        let mut diag = s.at(j, j) + eps;
        for k in 0..j {
            diag -= l.at(j, k) * l.at(j, k);
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::numeric(
                "cholesky",
                format!("pivot {j} not positive (value {diag:.3e})"),
            ));
        }
        let dj = diag.sqrt();
        l.set(j, j, dj);
        for i in (j + 1)..n {
            let mut v = s.at(i, j);
            for k in 0..j {
                v -= l.at(i, k) * l.at(j, k);
            }
            l.set(i, j, v / dj);
        }
    }
    Ok(l)
}

/// Solves L·x = b (forward substitution), L lower-triangular.
pub fn solve_lower_vec(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.order();
    assert_eq!(b.len(), n);
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut v = b[i];
        let lrow = l.row(i);
        for k in 0..i {
            v -= lrow[k] * x[k];
        }
        x[i] = v / lrow[i];
    }
    x
}

/// Solves Lᵀ·x = b (back substitution), L lower-triangular.
pub fn solve_lower_transpose_vec(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.order();
    assert_eq!(b.len(), n);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= l.at(k, i) * x[k];
        }
        x[i] = v / l.at(i, i);
    }
    x
}

/// X = L⁻ᵀ·P, i.e. solves Lᵀ·X = P column-wise.
pub fn solve_lower_transpose_mat(l: &Mat, p: &Mat) -> Mat {
    let n = l.order();
    assert_eq!(p.order(), n);
    let mut x = Mat::zeros(n);
    for col in 0..n {
        let b: Vec<f64> = (0..n).map(|i| p.at(i, col)).collect();
        let sol = solve_lower_transpose_vec(l, &b);
        for i in 0..n {
            x.set(i, col, sol[i]);
        }
    }
    x
}

/// X = A·L⁻¹, i.e. solves X·L = A row-wise (each row via Lᵀ·xᵀ = aᵀ).
pub fn mul_inv_lower_right(a: &Mat, l: &Mat) -> Mat {
    let n = l.order();
    assert_eq!(a.order(), n);
    let mut x = Mat::zeros(n);
    for r in 0..n {
        let sol = solve_lower_transpose_vec(l, a.row(r));
        x.data[r * n..(r + 1) * n].copy_from_slice(&sol);
    }
    x
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns eigenvalues ascending and the matching eigenvector columns.
pub fn jacobi_eigh(a: &Mat, max_sweeps: usize) -> Result<(Vec<f64>, Mat)> {
    let n = a.order();
    if !a.all_finite() {
        return Err(Error::numeric("jacobi", "non-finite input"));
    }
    if !a.is_symmetric(1e-9 * (1.0 + a.frobenius())) {
        return Err(Error::numeric("jacobi", "input not symmetric"));
    }
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    let mut d: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    let mut b = d.clone();
    let mut z = vec![0.0; n];

    let mut converged = false;
    for sweep in 0..max_sweeps {
        let mut sm = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                sm += m.at(i, j).abs();
            }
        }
        if sm == 0.0 {
            converged = true;
            break;
        }
        let tresh = if sweep < 3 {
            0.2 * sm / (n * n) as f64
        } else {
            0.0
        };
        for p in 0..n {
            for q in (p + 1)..n {
                let g = 100.0 * m.at(p, q).abs();
                if sweep > 3 && d[p].abs() + g == d[p].abs() && d[q].abs() + g == d[q].abs() {
                    m.set(p, q, 0.0);
                } else if m.at(p, q).abs() > tresh {
                    let mut h = d[q] - d[p];
                    let t = if h.abs() + g == h.abs() {
                        m.at(p, q) / h
                    } else {
                        let theta = 0.5 * h / m.at(p, q);
                        let mut t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                        if theta < 0.0 {
                            t = -t;
                        }
                        t
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let tau = s / (1.0 + c);
                    h = t * m.at(p, q);
                    z[p] -= h;
                    z[q] += h;
                    d[p] -= h;
                    d[q] += h;
                    m.set(p, q, 0.0);
                    let rot = |m: &mut Mat, i: usize, j: usize, k: usize, l: usize| {
                        let g = m.at(i, j);
                        let h = m.at(k, l);
                        m.set(i, j, g - s * (h + g * tau));
                        m.set(k, l, h + s * (g - h * tau));
                    };
                    for j in 0..p {
                        rot(&mut m, j, p, j, q);
                    }
                    for j in (p + 1)..q {
                        rot(&mut m, p, j, j, q);
                    }
                    for j in (q + 1)..n {
                        rot(&mut m, p, j, q, j);
                    }
                    for j in 0..n {
                        rot(&mut v, j, p, j, q);
                    }
                }
            }
        }
        for i in 0..n {
            b[i] += z[i];
            d[i] = b[i];
            z[i] = 0.0;
        }
    }
    if !converged {
        // Final check: the threshold loop may have zeroed everything on
        // the last sweep without re-testing.
        let mut sm = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                sm += m.at(i, j).abs();
            }
        }
        if sm > 1e-12 * (1.0 + a.frobenius()) {
            return Err(Error::numeric(
                "jacobi",
                format!("no convergence after {max_sweeps} sweeps (off-diagonal {sm:.3e})"),
            ));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let eigvals: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut eigvecs = Mat::zeros(n);
    for (newc, &oldc) in order.iter().enumerate() {
        for r in 0..n {
            eigvecs.set(r, newc, v.at(r, oldc));
        }
    }
    Ok((eigvals, eigvecs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{RngSeed, WeightRng};

    fn random_spd(n: usize, rng: &mut WeightRng) -> Mat {
        let mut a = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, rng.uniform(-1.0, 1.0));
            }
        }
        // AᵀA + I is comfortably positive definite.
        a.transpose().matmul(&a).add_scaled_identity(1.0)
    }

    #[test]
    fn cholesky_identity_and_diagonal() {
        let l = cholesky(&Mat::identity(3), 0.0).unwrap();
        assert!(l.max_abs_diff(&Mat::identity(3)) < 1e-15);
        let d = Mat::from_rows(&[&[9.0, 0.0], &[0.0, 16.0]]);
        let l = cholesky(&d, 0.0).unwrap();
        assert!((l.at(0, 0) - 3.0).abs() < 1e-14);
        assert!((l.at(1, 1) - 4.0).abs() < 1e-14);
        assert_eq!(l.at(0, 1), 0.0);
        assert_eq!(l.at(1, 0), 0.0);
    }

    #[test]
    fn cholesky_known_2x2() {
        let s = Mat::from_rows(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let l = cholesky(&s, 0.0).unwrap();
        assert!((l.at(0, 0) - 2.0).abs() < 1e-14);
        assert!((l.at(1, 0) - 1.0).abs() < 1e-14);
        assert!((l.at(1, 1) - 2.0f64.sqrt()).abs() < 1e-14);
        let rebuilt = l.matmul(&l.transpose());
        assert!(rebuilt.max_abs_diff(&s) < 1e-14);
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let mut rng = WeightRng::new(RngSeed(7));
        for n in [1usize, 2, 5, 16] {
            let s = random_spd(n, &mut rng);
            let l = cholesky(&s, 0.0).unwrap();
            let rebuilt = l.matmul(&l.transpose());
            assert!(rebuilt.max_abs_diff(&s) < 1e-10 * (1.0 + s.frobenius()));
            for i in 0..n {
                assert!(l.at(i, i) > 0.0);
                for j in (i + 1)..n {
                    assert_eq!(l.at(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let s = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(cholesky(&s, 0.0).is_err());
        let mut nan = Mat::identity(2);
        nan.set(0, 1, f64::NAN);
        assert!(cholesky(&nan, 0.0).is_err());
    }

    #[test]
    fn cholesky_eps_regularizes() {
        let zero = Mat::zeros(3);
        let l = cholesky(&zero, 1e-4).unwrap();
        for i in 0..3 {
            assert!((l.at(i, i) - 1e-2).abs() < 1e-12);
        }
    }

    #[test]
    fn triangular_solves_invert() {
        let mut rng = WeightRng::new(RngSeed(13));
        let s = random_spd(6, &mut rng);
        let l = cholesky(&s, 0.0).unwrap();
        let b: Vec<f64> = (0..6).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let x = solve_lower_vec(&l, &b);
        // L·x must reproduce b.
        for i in 0..6 {
            let got: f64 = (0..=i).map(|k| l.at(i, k) * x[k]).sum();
            assert!((got - b[i]).abs() < 1e-12);
        }
        let y = solve_lower_transpose_vec(&l, &b);
        for i in 0..6 {
            let got: f64 = (i..6).map(|k| l.at(k, i) * y[k]).sum();
            assert!((got - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_solves_match_explicit_inverse() {
        let mut rng = WeightRng::new(RngSeed(29));
        let s = random_spd(5, &mut rng);
        let l = cholesky(&s, 0.0).unwrap();
        let p = random_spd(5, &mut rng);
        // L⁻ᵀ·P: verify Lᵀ·X = P.
        let x = solve_lower_transpose_mat(&l, &p);
        let lt = l.transpose();
        assert!(lt.matmul(&x).max_abs_diff(&p) < 1e-11);
        // A·L⁻¹: verify X·L = A.
        let y = mul_inv_lower_right(&p, &l);
        assert!(y.matmul(&l).max_abs_diff(&p) < 1e-11);
    }

    #[test]
    fn jacobi_known_2x2() {
        let a = Mat::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let (vals, vecs) = jacobi_eigh(&a, 50).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        // Columns are unit eigenvectors.
        for (k, lam) in vals.iter().enumerate() {
            for r in 0..2 {
                let av: f64 = (0..2).map(|c| a.at(r, c) * vecs.at(c, k)).sum();
                assert!((av - lam * vecs.at(r, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn jacobi_random_symmetric() {
        let mut rng = WeightRng::new(RngSeed(31));
        for n in [3usize, 8, 17] {
            let mut a = Mat::zeros(n);
            for i in 0..n {
                for j in 0..=i {
                    let v = rng.uniform(-1.0, 1.0);
                    a.set(i, j, v);
                    a.set(j, i, v);
                }
            }
            let (vals, vecs) = jacobi_eigh(&a, 50).unwrap();
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            // A·V = V·diag(vals)
            for k in 0..n {
                for r in 0..n {
                    let av: f64 = (0..n).map(|c| a.at(r, c) * vecs.at(c, k)).sum();
                    assert!((av - vals[k] * vecs.at(r, k)).abs() < 1e-9);
                }
            }
            // VᵀV = I
            let vtv = vecs.transpose().matmul(&vecs);
            assert!(vtv.max_abs_diff(&Mat::identity(n)) < 1e-10);
        }
    }

    #[test]
    fn jacobi_diagonal_is_fixed_point() {
        let d = Mat::from_rows(&[&[5.0, 0.0], &[0.0, -2.0]]);
        let (vals, _) = jacobi_eigh(&d, 50).unwrap();
        assert_eq!(vals, vec![-2.0, 5.0]);
    }
}
