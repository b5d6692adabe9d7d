//! One-sided Jacobi SVD for the small dense matrices of the cone analysis.
//!
//! nalgebra's bidiagonalization SVD returned factorizations with
//! reconstruction errors near 0.25 on some well-conditioned 4x4 inputs, so
//! rank, null space and least-squares solves go through this instead.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct Svd {
    /// m x n with m >= n; column k is u_k·σ_k before normalization
    u: DMatrix<f64>,
    /// singular values, unordered
    pub s: Vec<f64>,
    /// n x n orthogonal, column k is v_k
    pub v: DMatrix<f64>,
}

/// A = U diag(s) Vᵀ. Inputs with fewer rows than columns are padded with zero rows.
pub fn svd(a: &DMatrix<f64>) -> Svd {
    let n = a.ncols();
    let m = a.nrows().max(n);
    let mut w = DMatrix::zeros(m, n);
    w.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let mut v = DMatrix::identity(n, n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = w.column(i).norm_squared();
                let beta = w.column(j).norm_squared();
                let gamma = w.column(i).dot(&w.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for r in 0..mat.nrows() {
                        let (x, y) = (mat[(r, i)], mat[(r, j)]);
                        mat[(r, i)] = c * x - s * y;
                        mat[(r, j)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let s: Vec<f64> = (0..n).map(|k| w.column(k).norm()).collect();
    Svd { u: w, s, v }
}

impl Svd {
    pub fn top(&self) -> f64 {
        self.s.iter().cloned().fold(0.0, f64::max)
    }

    /// Indices of singular values at most `rel · max(1, σ_max)`.
    fn small(&self, rel: f64) -> Vec<bool> {
        let cut = rel * self.top().max(1.0);
        self.s.iter().map(|&s| s <= cut).collect()
    }

    pub fn rank(&self, rel: f64) -> usize {
        self.small(rel).iter().filter(|&&z| !z).count()
    }

    /// Orthonormal basis of the numerical null space, as columns of V.
    pub fn null_space(&self, rel: f64) -> Vec<DVector<f64>> {
        self.small(rel).iter().enumerate().filter(|(_, &z)| z).map(|(k, _)| self.v.column(k).into_owned()).collect()
    }

    /// Minimum-norm least-squares solution of A x = b, dropping σ <= rel·max(1, σ_max).
    pub fn solve(&self, b: &DVector<f64>, rel: f64) -> DVector<f64> {
        let small = self.small(rel);
        let mut x = DVector::zeros(self.v.nrows());
        for k in 0..self.s.len() {
            if small[k] {
                continue;
            }
            let uk = self.u.column(k);
            let coef = uk.rows(0, b.len()).dot(b) / (self.s[k] * self.s[k]);
            x += self.v.column(k) * coef;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(f: &Svd, m: usize) -> DMatrix<f64> {
        // u columns already carry σ
        f.u.rows(0, m).into_owned() * f.v.transpose()
    }

    #[test]
    fn reconstructs_near_parallel_columns() {
        let a = DMatrix::from_column_slice(
            4,
            4,
            &[
                134.60555628046436, 105.58155464691113, 66.44469464029234, 0.0, 9.082622634777687, 6.885597116817869, 0.0, 0.0, 0.0,
                1.1835578234859698, 0.0, 4.590052080528765, 877.012285167397, 713.4110526675142, 446.8376351099346, 0.0,
            ],
        );
        let f = svd(&a);
        assert!((reconstruct(&f, 4) - &a).norm() < 1e-11 * a.norm());
        let b = DVector::from_vec(vec![0.0, 0.0, 0.9519029474628052, 0.0]);
        let x = f.solve(&b, 1e-14);
        assert!((&a * &x - &b).norm() < 1e-10);
        assert!((f.v.transpose() * &f.v - DMatrix::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn wide_matrix_null_space() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let f = svd(&a);
        assert_eq!(f.rank(1e-12), 2);
        let null = f.null_space(1e-12);
        assert_eq!(null.len(), 2);
        for z in &null {
            assert!((&a * z).norm() < 1e-14);
        }
        let b = DVector::from_vec(vec![2.0, 1.0]);
        let x = f.solve(&b, 1e-12);
        assert!((x - DVector::from_vec(vec![1.0, 0.5, 1.0, -0.5])).norm() < 1e-14);
    }
}
