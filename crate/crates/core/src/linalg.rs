//! Small dense linear algebra for symmetric matrices: a cyclic Jacobi
//! eigensolver and fractional matrix powers.

use crate::error::{Error, Result};
use crate::tensor::gemm;

/// Row-major dense `f64` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "matrix",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("matrix", "ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!("{}x{} · {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            false,
            &other.data,
            false,
            0.0,
            &mut out.data,
        );
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Max-norm of `self − other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn frobenius_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenvalues in descending order with matching orthonormal eigenvector
/// columns. The first nonzero component of every column is positive.
#[derive(Clone, Debug)]
pub struct EigDecomp {
    pub eigvals: Vec<f64>,
    pub eigvecs: Matrix,
}

impl EigDecomp {
    /// `V·diag(f(λ))·Vᵀ`.
    pub fn compose(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.eigvals.len();
        let mut scaled = self.eigvecs.clone();
        for j in 0..n {
            let s = f(self.eigvals[j]);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        scaled
            .matmul(&self.eigvecs.transpose())
            .expect("square factors")
    }

    pub fn reconstruct(&self) -> Matrix {
        self.compose(|l| l)
    }
}

pub const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-8;

fn max_off_diagonal(a: &Matrix) -> f64 {
    let n = a.rows;
    let mut m = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                m = m.max(a[(i, j)].abs());
            }
        }
    }
    m
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Sweeps stop once the largest off-diagonal magnitude drops below
/// `1e-10·‖A‖_F`; failing that within 100 sweeps is a numeric error.
pub fn sym_eig(a: &Matrix) -> Result<EigDecomp> {
    if a.rows != a.cols {
        return Err(Error::dim("sym_eig", format!("{}x{} is not square", a.rows, a.cols)));
    }
    let asym = a.asymmetry();
    if asym >= SYMMETRY_TOL {
        return Err(Error::Contract(format!(
            "sym_eig needs a symmetric matrix, max |A − Aᵀ| = {asym:e}"
        )));
    }
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let tol = JACOBI_REL_TOL * a.frobenius();

    let mut sweeps = 0;
    while max_off_diagonal(&m) > tol {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::numeric(
                "sym_eig",
                format!(
                    "no convergence after {JACOBI_MAX_SWEEPS} sweeps, residual off-diagonal {:e}",
                    max_off_diagonal(&m)
                ),
            ));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let eigvals = order.iter().map(|&i| m[(i, i)]).collect();
    let mut eigvecs = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let sign = (0..n)
            .map(|k| v[(k, src)])
            .find(|x| x.abs() > 1e-14)
            .map_or(1.0, f64::signum);
        for k in 0..n {
            eigvecs[(k, dst)] = sign * v[(k, src)];
        }
    }
    Ok(EigDecomp { eigvals, eigvecs })
}

/// `V·diag(max(λ, floor)^p)·Vᵀ` for symmetric `A`.
pub fn mat_power_sym(a: &Matrix, p: f64, eig_floor: f64) -> Result<Matrix> {
    if eig_floor <= 0.0 {
        return Err(Error::Config(format!("eig_floor must be > 0, got {eig_floor}")));
    }
    Ok(sym_eig(a)?.compose(|l| l.max(eig_floor).powf(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn random_spd(n: usize, seed: u64) -> Matrix {
        let b = random_symmetric(n, seed);
        let mut a = b.matmul(&b.transpose()).unwrap();
        for i in 0..n {
            a[(i, i)] += 0.5;
        }
        a
    }

    fn check_invariants(a: &Matrix, e: &EigDecomp) {
        let n = a.rows();
        let vtv = e.eigvecs.transpose().matmul(&e.eigvecs).unwrap();
        assert!(vtv.max_abs_diff(&Matrix::identity(n)) < 1e-8);
        assert!(e.reconstruct().max_abs_diff(a) < 1e-7 * a.max_abs().max(1e-300));
        assert!(e.eigvals.windows(2).all(|w| w[0] >= w[1]));
        for j in 0..n {
            let first = (0..n).map(|k| e.eigvecs[(k, j)]).find(|x| x.abs() > 1e-14).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn diagonal_matrix() {
        let a = Matrix::diag(&[3.0, 2.0]);
        let e = sym_eig(&a).unwrap();
        assert_eq!(e.eigvals, vec![3.0, 2.0]);
        assert_eq!(e.eigvecs, Matrix::identity(2));
    }

    #[test]
    fn two_by_two_roots() {
        let a = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        let e = sym_eig(&a).unwrap();
        assert!((e.eigvals[0] - 3.0).abs() < 1e-12);
        assert!((e.eigvals[1] - 1.0).abs() < 1e-12);
        check_invariants(&a, &e);
    }

    #[test]
    fn random_8x8_reconstruction() {
        let a = random_symmetric(8, 11);
        let e = sym_eig(&a).unwrap();
        assert!(e.reconstruct().max_abs_diff(&a) < 1e-8);
        check_invariants(&a, &e);
    }

    #[test]
    fn rejects_asymmetric() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_matrix() {
        let e = sym_eig(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(e.eigvals, vec![0.0; 3]);
    }

    /// Roots of the characteristic polynomial, computed independently.
    fn char_roots(a: &Matrix) -> Vec<f64> {
        let mut roots = match a.rows() {
            2 => {
                let (p, q, r) = (a[(0, 0)], a[(0, 1)], a[(1, 1)]);
                let tr = p + r;
                let disc = ((p - r) * (p - r) + 4.0 * q * q).sqrt();
                vec![(tr + disc) / 2.0, (tr - disc) / 2.0]
            }
            3 => {
                // Trigonometric solution of the symmetric 3x3 cubic.
                let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
                let q = (a[(0, 0)] + a[(1, 1)] + a[(2, 2)]) / 3.0;
                if p1 == 0.0 {
                    vec![a[(0, 0)], a[(1, 1)], a[(2, 2)]]
                } else {
                    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
                    let p = (p2 / 6.0).sqrt();
                    let mut b = a.clone();
                    for i in 0..3 {
                        b[(i, i)] -= q;
                    }
                    let det = b[(0, 0)] * (b[(1, 1)] * b[(2, 2)] - b[(1, 2)] * b[(2, 1)])
                        - b[(0, 1)] * (b[(1, 0)] * b[(2, 2)] - b[(1, 2)] * b[(2, 0)])
                        + b[(0, 2)] * (b[(1, 0)] * b[(2, 1)] - b[(1, 1)] * b[(2, 0)]);
                    let r = (det / (2.0 * p.powi(3))).clamp(-1.0, 1.0);
                    let phi = r.acos() / 3.0;
                    let e1 = q + 2.0 * p * phi.cos();
                    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
                    vec![e1, 3.0 * q - e1 - e3, e3]
                }
            }
            _ => unreachable!(),
        };
        // Repeated roots of an integer monic polynomial are integers; the
        // trigonometric form loses half its digits there, so snap to roots
        // verified exactly in integer arithmetic.
        if a.data().iter().all(|v| v.fract() == 0.0) {
            for r in roots.iter_mut() {
                let k = r.round();
                if (*r - k).abs() < 1e-6 && char_poly_at_int(a, k as i64) == 0 {
                    *r = k;
                }
            }
        }
        roots.sort_by(|a, b| b.total_cmp(a));
        roots
    }

    /// `det(A − kI)` in exact integer arithmetic for 2x2 and 3x3 `A`.
    fn char_poly_at_int(a: &Matrix, k: i64) -> i64 {
        let n = a.rows();
        let e = |i: usize, j: usize| a[(i, j)] as i64 - if i == j { k } else { 0 };
        match n {
            2 => e(0, 0) * e(1, 1) - e(0, 1) * e(1, 0),
            _ => {
                e(0, 0) * (e(1, 1) * e(2, 2) - e(1, 2) * e(2, 1)) - e(0, 1) * (e(1, 0) * e(2, 2) - e(1, 2) * e(2, 0))
                    + e(0, 2) * (e(1, 0) * e(2, 1) - e(1, 1) * e(2, 0))
            }
        }
    }

    #[test]
    fn exhaustive_small_integer_2x2() {
        for p in -3..=3 {
            for q in -3..=3 {
                for r in -3..=3 {
                    let a = Matrix::from_rows(&[&[p as f64, q as f64], &[q as f64, r as f64]]).unwrap();
                    let e = sym_eig(&a).unwrap();
                    for (x, y) in e.eigvals.iter().zip(char_roots(&a)) {
                        assert!((x - y).abs() < 1e-8, "{a:?}: {x} vs {y}");
                    }
                    if a.max_abs() > 0.0 {
                        check_invariants(&a, &e);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn integer_3x3_matches_characteristic_roots(v in proptest::collection::vec(-3i32..=3, 6)) {
            let [a, b, c, d, e, f] = [v[0], v[1], v[2], v[3], v[4], v[5]].map(f64::from);
            let m = Matrix::from_rows(&[&[a, b, c], &[b, d, e], &[c, e, f]]).unwrap();
            let eig = sym_eig(&m).unwrap();
            for (x, y) in eig.eigvals.iter().zip(char_roots(&m)) {
                prop_assert!((x - y).abs() < 1e-8, "{:?}: {} vs {}", m, x, y);
            }
            if m.max_abs() > 0.0 {
                check_invariants(&m, &eig);
            }
        }

        #[test]
        fn decomposition_invariants_random(n in 1usize..12, seed in 0u64..10_000) {
            let a = random_symmetric(n, seed);
            let e = sym_eig(&a).unwrap();
            check_invariants(&a, &e);
        }
    }

    #[test]
    fn power_examples() {
        let i = mat_power_sym(&Matrix::identity(3), -0.5, 1e-8).unwrap();
        assert!(i.max_abs_diff(&Matrix::identity(3)) < 1e-15);
        let r = mat_power_sym(&Matrix::diag(&[4.0, 9.0]), 0.5, 1e-8).unwrap();
        assert!(r.max_abs_diff(&Matrix::diag(&[2.0, 3.0])) < 1e-14);
        assert!(mat_power_sym(&Matrix::identity(2), 0.5, 0.0).is_err());
    }

    #[test]
    fn inverse_square_root_whitens_spd() {
        for seed in 0..10 {
            let a = random_spd(6, seed);
            let b = mat_power_sym(&a, -0.5, 1e-8).unwrap();
            let bab = b.matmul(&a).unwrap().matmul(&b).unwrap();
            assert!(bab.max_abs_diff(&Matrix::identity(6)) < 1e-6);
        }
    }
}
