//! Low-dimensional coordinates for carving.
//!
//! Sampling the full response is wasteful: every constraint involved in
//! carving depends on `y` only through the least-squares fit on the
//! selection rows, the inference rows, and the full-data fit. Two
//! equivalent parametrizations exist and the smaller one is used:
//!
//! * `Full`: `u = (beta_full, beta_sel)` of length `2m`,
//! * `Split`: `v = (beta_sel, y_inf)` of length `m + n2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{select_entries, select_rows, SplitPlan};
use crate::error::{Error, Result};
use crate::gauss::law::GaussianLaw;
use crate::linalg::{symmetrize, LeastSquares};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    Full,
    Split,
}

/// A carving problem in reduced coordinates: a null law (before the equality
/// conditioning), the equality system, the inequality system and the point
/// observed.
#[derive(Debug, Clone)]
pub struct CarveSystem {
    pub coords: Coordinates,
    pub law: GaussianLaw,
    pub eq_c: DMatrix<f64>,
    pub eq_d: DVector<f64>,
    pub ineq_a: DMatrix<f64>,
    pub ineq_b: DVector<f64>,
    pub observed: DVector<f64>,
    /// Least-squares coefficients of the submodel on all rows.
    pub beta_full: DVector<f64>,
    /// Number of submodel columns.
    pub m: usize,
    /// `G^{-1}` with `G = Z^T Z`.
    gram_inv: DMatrix<f64>,
    /// `Z_1^T Z_1`, `Z_2` (only kept for the split parametrization).
    gram_sel: DMatrix<f64>,
    z_inf: DMatrix<f64>,
}

impl CarveSystem {
    pub fn dim(&self) -> usize {
        self.observed.len()
    }

    /// Coefficient vector `g` with `g . x = w . beta_full` for every point `x`
    /// of the reduced space satisfying the equality system's definition.
    pub fn statistic(&self, w: &DVector<f64>) -> DVector<f64> {
        let m = self.m;
        match self.coords {
            Coordinates::Full => {
                let mut g = DVector::zeros(2 * m);
                g.rows_mut(0, m).copy_from(w);
                g
            }
            Coordinates::Split => {
                let gw = &self.gram_inv * w;
                let n2 = self.z_inf.nrows();
                let mut g = DVector::zeros(m + n2);
                g.rows_mut(0, m).copy_from(&(&self.gram_sel * &gw));
                g.rows_mut(m, n2).copy_from(&(&self.z_inf * &gw));
                g
            }
        }
    }
}

fn stack_cols(left: &DMatrix<f64>, right: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.columns_mut(0, left.ncols()).copy_from(left);
    out.columns_mut(left.ncols(), right.ncols()).copy_from(right);
    out
}

/// Express the carving problem for submodel design `z` (all `n` rows),
/// polyhedron `a y_sel <= b` on the selection rows, and tested coefficient
/// set `tested`, in whichever reduced coordinates are smaller. The law has
/// mean zero: conditioning on the untested columns' scores removes the
/// nuisance coefficients, and the tested ones are zero under the null.
///
/// Rows of `a` must lie in the column span of the selection rows of `z`.
pub fn carve_transform(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    split: &SplitPlan,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    tested: &[usize],
    sigma: f64,
) -> Result<CarveSystem> {
    let (n, m) = z.shape();
    let n1 = split.n1();
    let n2 = split.n2();
    if y.len() != n || n1 + n2 != n || a.ncols() != n1 || b.len() != a.nrows() {
        return Err(Error::Validation("carving inputs have inconsistent shapes".into()));
    }
    if tested.is_empty() || tested.iter().any(|&t| t >= m) {
        return Err(Error::Validation("tested coefficients must be a nonempty subset of the submodel".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::DegenerateSigma(sigma));
    }
    if m >= n1 {
        return Err(Error::SingularSubmatrix(format!("{m} submodel columns with {n1} selection rows")));
    }
    let z1 = select_rows(z, &split.selection_idx);
    let z2 = select_rows(z, &split.inference_idx);
    let y1 = select_entries(y, &split.selection_idx);
    let ls1 = LeastSquares::new(&z1)?;
    let ls = LeastSquares::new(z)?;
    let g1_inv = ls1.gram_inverse();
    let g_inv = ls.gram_inverse();
    let mut g1 = z1.transpose() * &z1;
    symmetrize(&mut g1);
    let beta1 = ls1.solve(&y1);
    let beta_full = ls.solve(y);

    let a_beta = a * &z1;
    // A y1 = (A Z1) beta1 needs the rows of A inside span(Z1)
    let leak = a - &a_beta * ls1.pinv();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if leak.amax() > 1e-8 * scale {
        return Err(Error::Validation("selection constraints are not functions of the submodel fit".into()));
    }

    let keep: Vec<usize> = (0..m).filter(|j| !tested.contains(j)).collect();
    let score = z.transpose() * y;
    let eq_d = DVector::from_iterator(keep.len(), keep.iter().map(|&j| score[j]));
    let s2 = sigma * sigma;
    let k = a.nrows();

    let coords = if n2 < m { Coordinates::Split } else { Coordinates::Full };
    let (law, eq_c, ineq_a, observed) = match coords {
        Coordinates::Full => {
            let mut cov = DMatrix::zeros(2 * m, 2 * m);
            cov.view_mut((0, 0), (m, m)).copy_from(&(&g_inv * s2));
            cov.view_mut((0, m), (m, m)).copy_from(&(&g_inv * s2));
            cov.view_mut((m, 0), (m, m)).copy_from(&(&g_inv * s2));
            cov.view_mut((m, m), (m, m)).copy_from(&(&g1_inv * s2));
            symmetrize(&mut cov);
            let law = GaussianLaw::new(DVector::zeros(2 * m), cov)?;
            let gram = z.transpose() * z;
            let eq_c = stack_cols(&select_rows(&gram, &keep), &DMatrix::zeros(keep.len(), m));
            let ineq_a = stack_cols(&DMatrix::zeros(k, m), &a_beta);
            let mut obs = DVector::zeros(2 * m);
            obs.rows_mut(0, m).copy_from(&beta_full);
            obs.rows_mut(m, m).copy_from(&beta1);
            (law, eq_c, ineq_a, obs)
        }
        Coordinates::Split => {
            let mut cov = DMatrix::zeros(m + n2, m + n2);
            cov.view_mut((0, 0), (m, m)).copy_from(&(&g1_inv * s2));
            for i in 0..n2 {
                cov[(m + i, m + i)] = s2;
            }
            symmetrize(&mut cov);
            let law = GaussianLaw::new(DVector::zeros(m + n2), cov)?;
            let eq_c = stack_cols(&select_rows(&g1, &keep), &select_rows(&z2.transpose(), &keep));
            let ineq_a = stack_cols(&a_beta, &DMatrix::zeros(k, n2));
            let mut obs = DVector::zeros(m + n2);
            obs.rows_mut(0, m).copy_from(&beta1);
            obs.rows_mut(m, n2).copy_from(&select_entries(y, &split.inference_idx));
            (law, eq_c, ineq_a, obs)
        }
    };
    Ok(CarveSystem {
        coords,
        law,
        eq_c,
        eq_d,
        ineq_a,
        ineq_b: b.clone(),
        observed,
        beta_full,
        m,
        gram_inv: g_inv,
        gram_sel: g1,
        z_inf: z2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_matrix(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng))
    }

    /// Rows of `A` in span(Z1): `A = M Z1^+`.
    fn problem(n: usize, m: usize, f: f64, seed: u64) -> (DMatrix<f64>, DVector<f64>, SplitPlan, DMatrix<f64>, DVector<f64>) {
        let z = gaussian_matrix(n, m, seed);
        let y = gaussian_matrix(n, 1, seed + 1).column(0).into_owned();
        let split = SplitPlan::random(n, f, seed + 2).unwrap();
        let z1 = select_rows(&z, &split.selection_idx);
        let mm = gaussian_matrix(m, m, seed + 3);
        let a = &mm * LeastSquares::new(&z1).unwrap().pinv();
        let b = &a * select_entries(&y, &split.selection_idx) + DVector::from_element(m, 0.5);
        (z, y, split, a, b)
    }

    #[test]
    fn coordinate_choice() {
        let (z, y, split, a, b) = problem(50, 10, 0.9, 1);
        assert_eq!(carve_transform(&z, &y, &split, &a, &b, &[0], 1.0).unwrap().coords, Coordinates::Split);
        let (z, y, split, a, b) = problem(50, 10, 0.5, 1);
        assert_eq!(carve_transform(&z, &y, &split, &a, &b, &[0], 1.0).unwrap().coords, Coordinates::Full);
    }

    #[test]
    fn constraints_reproduce_direct_evaluation() {
        for f in [0.5, 0.9, 1.0] {
            let (z, y, split, a, b) = problem(50, 10, f, 7);
            let sys = carve_transform(&z, &y, &split, &a, &b, &[3], 1.3).unwrap();
            let direct = &a * select_entries(&y, &split.selection_idx) - &b;
            let reduced = &sys.ineq_a * &sys.observed - &sys.ineq_b;
            assert!((direct - reduced).amax() < 1e-8);
            let keep: Vec<usize> = (0..10).filter(|&j| j != 3).collect();
            let score = z.transpose() * &y;
            let eq = &sys.eq_c * &sys.observed;
            for (r, &j) in keep.iter().enumerate() {
                assert!((eq[r] - score[j]).abs() < 1e-8);
            }
            let w = DVector::from_fn(10, |j, _| (j as f64) - 4.5);
            let stat = sys.statistic(&w).dot(&sys.observed);
            assert!((stat - w.dot(&sys.beta_full)).abs() < 1e-8);
        }
    }

    #[test]
    fn no_inference_rows() {
        let (z, y, _, _, _) = problem(40, 4, 1.0, 3);
        let split = SplitPlan::full(40);
        let xi = [1.0, -1.0, 1.0, 1.0];
        // active constraint -diag(xi) Z^+ y <= b
        let mut a = LeastSquares::new(&z).unwrap().pinv();
        for (k, s) in xi.iter().enumerate() {
            a.row_mut(k).scale_mut(-s);
        }
        let b = &a * &y + DVector::from_element(4, 0.1);
        let sys = carve_transform(&z, &y, &split, &a, &b, &[1], 1.0).unwrap();
        assert_eq!(sys.dim(), 4);
        let expect = DMatrix::from_diagonal(&DVector::from_iterator(4, xi.iter().map(|s| -s)));
        assert!((&sys.ineq_a - expect).amax() < 1e-10);
    }

    #[test]
    fn constraints_outside_span_rejected() {
        let (z, y, split, _, _) = problem(30, 3, 0.8, 5);
        let a = gaussian_matrix(2, split.n1(), 9);
        let b = DVector::from_element(2, 100.0);
        assert!(carve_transform(&z, &y, &split, &a, &b, &[0], 1.0).is_err());
    }
}
