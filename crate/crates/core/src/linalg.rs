//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative rank tolerance for least-squares submatrices.
pub const RANK_TOL: f64 = 1e-10;

/// Least-squares factorization of a tall, full-column-rank matrix `Z = QR`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl LeastSquares {
    /// Factor `z`, failing with `SingularSubmatrix` when its smallest singular
    /// value falls below `RANK_TOL` times the largest.
    pub fn new(z: &DMatrix<f64>) -> Result<Self> {
        let (n, m) = z.shape();
        if m == 0 {
            return Ok(LeastSquares { q: DMatrix::zeros(n, 0), r: DMatrix::zeros(0, 0) });
        }
        if m > n {
            return Err(Error::SingularSubmatrix(format!("{m} columns but only {n} rows")));
        }
        let qr = z.clone().qr();
        let r = qr.r();
        let sv = r.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if !(smax > 0.0) || smin <= RANK_TOL * smax {
            return Err(Error::SingularSubmatrix(format!(
                "rank deficient submatrix (singular values {smin:.3e} / {smax:.3e})"
            )));
        }
        Ok(LeastSquares { q: qr.q(), r })
    }

    pub fn ncols(&self) -> usize {
        self.r.ncols()
    }

    /// `(Z^T Z)^{-1}`.
    pub fn gram_inverse(&self) -> DMatrix<f64> {
        let m = self.r.ncols();
        let rinv = self.r_inverse();
        let mut g = &rinv * rinv.transpose();
        symmetrize(&mut g);
        debug_assert_eq!(g.nrows(), m);
        g
    }

    fn r_inverse(&self) -> DMatrix<f64> {
        let m = self.r.ncols();
        let mut rinv = DMatrix::<f64>::identity(m, m);
        if m > 0 {
            let ok = self.r.solve_upper_triangular_mut(&mut rinv);
            debug_assert!(ok);
        }
        rinv
    }

    /// Pseudo-inverse `Z^+ = (Z^T Z)^{-1} Z^T` (m x n).
    pub fn pinv(&self) -> DMatrix<f64> {
        self.r_inverse() * self.q.transpose()
    }

    /// Least-squares coefficients for response `y`.
    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let qty = self.q.transpose() * y;
        let mut b = qty;
        if self.r.ncols() > 0 {
            self.r.solve_upper_triangular_mut(&mut b);
        }
        b
    }
}

/// Force exact symmetry by averaging with the transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Rank-revealing square-root factors of a PSD matrix: `half * half^T = sigma`
/// and `inv_half * half = I_r`.
#[derive(Debug, Clone)]
pub struct SqrtFactors {
    /// m x r
    pub half: DMatrix<f64>,
    /// r x m
    pub inv_half: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

/// Eigenvalues below `rel_tol * max eigenvalue` are treated as zero.
pub fn psd_sqrt(sigma: &DMatrix<f64>, rel_tol: f64) -> SqrtFactors {
    let m = sigma.nrows();
    let eig = SymmetricEigen::new(sigma.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let keep: Vec<usize> = (0..m).filter(|&k| lmax > 0.0 && eig.eigenvalues[k] > rel_tol * lmax).collect();
    // deterministic column order: descending eigenvalue, ties by index
    let mut keep = keep;
    keep.sort_by(|&a, &b| {
        eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap().then(a.cmp(&b))
    });
    let r = keep.len();
    let mut half = DMatrix::zeros(m, r);
    let mut inv_half = DMatrix::zeros(r, m);
    for (c, &k) in keep.iter().enumerate() {
        let l = eig.eigenvalues[k];
        let s = l.sqrt();
        let v = eig.eigenvectors.column(k);
        for i in 0..m {
            half[(i, c)] = v[i] * s;
            inv_half[(c, i)] = v[i] / s;
        }
    }
    let eigenvalues = DVector::from_iterator(r, keep.iter().map(|&k| eig.eigenvalues[k]));
    SqrtFactors { half, inv_half, eigenvalues }
}

/// Numerical rank of a PSD matrix at the given relative tolerance.
pub fn psd_rank(sigma: &DMatrix<f64>, rel_tol: f64) -> usize {
    let eig = SymmetricEigen::new(sigma.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    eig.eigenvalues.iter().filter(|&&l| lmax > 0.0 && l > rel_tol * lmax).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_matches_normal_equations() {
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 2.0, -1.0, 0.0, 3.0, 1.5, 1.0]);
        let ls = LeastSquares::new(&z).unwrap();
        let g = (z.transpose() * &z).try_inverse().unwrap();
        let direct = &g * z.transpose();
        assert!((ls.pinv() - direct).amax() < 1e-12);
        assert!((ls.gram_inverse() - g).amax() < 1e-12);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert!((ls.solve(&y) - &ls.pinv() * &y).amax() < 1e-12);
    }

    #[test]
    fn rank_deficiency_detected() {
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(LeastSquares::new(&z), Err(Error::SingularSubmatrix(_))));
        let wide = DMatrix::from_element(2, 3, 1.0);
        assert!(LeastSquares::new(&wide).is_err());
    }

    #[test]
    fn sqrt_factors_of_projection() {
        // rank-2 projection in R^3
        let u = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]) / 3f64.sqrt();
        let p = DMatrix::<f64>::identity(3, 3) - &u * u.transpose();
        let f = psd_sqrt(&p, 1e-10);
        assert_eq!(f.half.ncols(), 2);
        assert!((&f.half * f.half.transpose() - &p).amax() < 1e-12);
        assert!((&f.inv_half * &f.half - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
        assert_eq!(psd_rank(&p, 1e-10), 2);
    }
}
