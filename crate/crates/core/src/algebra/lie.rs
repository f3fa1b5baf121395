//! The Lie algebras u(N) and su(N): explicit orthonormal basis, Casimir
//! constant, orthogonal projection and Gaussian elements.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::expm::expm;
use super::matrix::CMatrix;
use crate::math;
use crate::{Error, Result, C64};

const ALGEBRA_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Flavor {
    /// Anti-Hermitian matrices.
    U,
    /// Anti-Hermitian, traceless matrices.
    SU,
}

/// An element of u(N) or su(N).
#[derive(Clone, Debug, PartialEq)]
pub struct LieAlgebraElement {
    matrix: CMatrix,
    flavor: Flavor,
}

impl LieAlgebraElement {
    /// Checks `X + X* = 0` (and `Tr X = 0` for su) to 1e-12.
    pub fn new(matrix: CMatrix, flavor: Flavor) -> Result<Self> {
        let scale = 1.0 + matrix.frobenius_norm();
        if matrix.anti_hermitian_defect() > ALGEBRA_TOL * scale {
            return Err(Error::InvalidArgument(format!(
                "matrix is not anti-Hermitian (defect {:e})",
                matrix.anti_hermitian_defect()
            )));
        }
        if flavor == Flavor::SU && math::cabs(matrix.trace()) > ALGEBRA_TOL * scale {
            return Err(Error::InvalidArgument("su(N) element must be traceless".into()));
        }
        Ok(Self { matrix, flavor })
    }

    pub(crate) fn new_unchecked(matrix: CMatrix, flavor: Flavor) -> Self {
        Self { matrix, flavor }
    }

    pub fn zero(n: usize, flavor: Flavor) -> Self {
        Self::new_unchecked(CMatrix::zeros(n), flavor)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    /// Hilbert–Schmidt norm `|X|`.
    pub fn norm(&self) -> f64 {
        self.matrix.frobenius_norm()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new_unchecked(self.matrix.scale_real(s), self.flavor)
    }

    /// The tangent vector `X Q` at `Q`.
    pub fn tangent_at(&self, q: &CMatrix) -> CMatrix {
        &self.matrix * q
    }
}

/// Orthonormal basis of su(N): the diagonal `D_k`, then `E_kn`, then `F_kn`.
#[derive(Clone, Debug)]
pub struct SuBasis {
    n: usize,
    elements: Vec<LieAlgebraElement>,
}

impl SuBasis {
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn elements(&self) -> &[LieAlgebraElement] {
        &self.elements
    }
    pub fn len(&self) -> usize {
        self.elements.len()
    }
    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Coordinates `⟨X, v_α⟩` of a matrix in this basis.
    pub fn coordinates(&self, x: &CMatrix) -> Result<Vec<f64>> {
        self.elements
            .iter()
            .map(|v| super::matrix::hs_inner(x, v.matrix()))
            .collect()
    }

    /// `Σ_α c_α v_α`.
    pub fn combine(&self, coeffs: &[f64]) -> LieAlgebraElement {
        let mut m = CMatrix::zeros(self.n);
        for (c, v) in coeffs.iter().zip(&self.elements) {
            m.axpy(C64::new(*c, 0.0), v.matrix());
        }
        LieAlgebraElement::new_unchecked(m, Flavor::SU)
    }
}

/// The basis of su(N), `N ≥ 2`, with
/// `D_k = i/√(k+k²) (−k e_{k+1,k+1} + Σ_{j≤k} e_jj)`,
/// `E_kn = (e_kn − e_nk)/√2` and `F_kn = i(e_kn + e_nk)/√2` for `k < n`.
pub fn su_basis(n: usize) -> Result<SuBasis> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("su(N) basis needs N >= 2, got {n}")));
    }
    let mut elements = Vec::with_capacity(n * n - 1);
    for k in 1..n {
        let kf = k as f64;
        let norm = 1.0 / math::sqrt(kf + kf * kf);
        let mut m = CMatrix::zeros(n);
        for j in 0..k {
            m[(j, j)] = C64::new(0.0, norm);
        }
        m[(k, k)] = C64::new(0.0, -kf * norm);
        elements.push(LieAlgebraElement::new_unchecked(m, Flavor::SU));
    }
    let s = core::f64::consts::FRAC_1_SQRT_2;
    for k in 0..n {
        for l in k + 1..n {
            let mut m = CMatrix::zeros(n);
            m[(k, l)] = C64::new(s, 0.0);
            m[(l, k)] = C64::new(-s, 0.0);
            elements.push(LieAlgebraElement::new_unchecked(m, Flavor::SU));
        }
    }
    for k in 0..n {
        for l in k + 1..n {
            let mut m = CMatrix::zeros(n);
            m[(k, l)] = C64::new(0.0, s);
            m[(l, k)] = C64::new(0.0, s);
            elements.push(LieAlgebraElement::new_unchecked(m, Flavor::SU));
        }
    }
    Ok(SuBasis { n, elements })
}

/// `c_{su(N)} = −(N²−1)/N`, the scalar with `Σ_α v_α² = c I`.
pub fn casimir_constant(n: usize) -> f64 {
    let nf = n as f64;
    -(nf * nf - 1.0) / nf
}

/// Orthogonal projection of `C^{N×N}` onto su(N): the anti-Hermitian part
/// with its trace removed.
pub fn project_su(m: &CMatrix) -> LieAlgebraElement {
    let n = m.n();
    let mut a = CMatrix::zeros(n);
    for c in 0..n {
        for r in 0..n {
            a[(r, c)] = (m[(r, c)] - m[(c, r)].conj()) * 0.5;
        }
    }
    let shift = a.trace() / n as f64;
    for i in 0..n {
        a[(i, i)] -= shift;
    }
    LieAlgebraElement::new_unchecked(a, Flavor::SU)
}

/// Orthogonal projection onto u(N) (anti-Hermitian part).
pub fn project_u(m: &CMatrix) -> LieAlgebraElement {
    let n = m.n();
    let a = CMatrix::from_fn(n, |r, c| (m[(r, c)] - m[(c, r)].conj()) * 0.5);
    LieAlgebraElement::new_unchecked(a, Flavor::U)
}

/// Standard Gaussian in the algebra: coordinates in any orthonormal basis are
/// i.i.d. N(0, 1). For su(N) the u(N) sample is projected, which yields the
/// same law as `Σ_α g_α v_α` over [`su_basis`].
pub fn gaussian_element<R: Rng + ?Sized>(n: usize, flavor: Flavor, rng: &mut R) -> LieAlgebraElement {
    let mut m = CMatrix::zeros(n);
    let s = core::f64::consts::FRAC_1_SQRT_2;
    for c in 0..n {
        let d: f64 = rng.sample(StandardNormal);
        m[(c, c)] = C64::new(0.0, d);
        for r in c + 1..n {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            // Entry of i H for Hermitian H with H_rc = (re + i im)/√2.
            let h = C64::new(re * s, im * s);
            m[(r, c)] = C64::new(0.0, 1.0) * h;
            m[(c, r)] = C64::new(0.0, 1.0) * h.conj();
        }
    }
    if flavor == Flavor::SU {
        let shift = m.trace() / n as f64;
        for i in 0..n {
            m[(i, i)] -= shift;
        }
    }
    LieAlgebraElement::new_unchecked(m, flavor)
}

/// `exp(X)`; unitary for X ∈ u(N), special unitary for X ∈ su(N).
pub fn exp_map(x: &LieAlgebraElement) -> Result<CMatrix> {
    expm(x.matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::matrix::{gemm, hs_inner, Op};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_counts() {
        assert_eq!(su_basis(2).unwrap().len(), 3);
        assert_eq!(su_basis(3).unwrap().len(), 8);
        assert!(su_basis(1).is_err());
    }

    #[test]
    fn d1_is_orthogonal_to_e12() {
        let b = su_basis(2).unwrap();
        assert_eq!(
            hs_inner(b.elements()[0].matrix(), b.elements()[1].matrix()).unwrap(),
            0.0
        );
    }

    #[test]
    fn casimir_values() {
        assert_eq!(casimir_constant(2), -1.5);
        assert!((casimir_constant(3) + 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sum_of_squares_equals_casimir() {
        for n in 2..=5 {
            let b = su_basis(n).unwrap();
            let mut s = CMatrix::zeros(n);
            for v in b.elements() {
                s += &(v.matrix() * v.matrix());
            }
            let want = CMatrix::identity(n).scale_real(casimir_constant(n));
            assert!(s.max_abs_diff(&want) < 1e-12, "N={n}");
        }
    }

    #[test]
    fn hs_inner_on_algebra_is_minus_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = gaussian_element(4, Flavor::U, &mut rng);
            let y = gaussian_element(4, Flavor::U, &mut rng);
            let ip = hs_inner(x.matrix(), y.matrix()).unwrap();
            let tr = (x.matrix() * y.matrix()).trace();
            assert!((ip + tr.re).abs() < 1e-12 && tr.im.abs() < 1e-12);
        }
    }

    #[test]
    fn projection_fixes_algebra_and_kills_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian_element(3, Flavor::SU, &mut rng);
        assert!(project_su(x.matrix()).matrix().max_abs_diff(x.matrix()) < 1e-14);
        assert!(project_su(&CMatrix::identity(3)).norm() < 1e-15);
    }

    #[test]
    fn exp_map_is_group_valued() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [2, 3, 6] {
            let x = gaussian_element(n, Flavor::SU, &mut rng);
            let e = exp_map(&x).unwrap();
            let einv = exp_map(&x.scaled(-1.0)).unwrap();
            assert!(e.unitarity_defect() < 1e-10);
            assert!((&e * &einv).max_abs_diff(&CMatrix::identity(n)) < 1e-10);
            let d = crate::algebra::linalg::det(&e);
            assert!((d - C64::new(1.0, 0.0)).norm() < 1e-10);
            // right invariance of the metric
            let y = gaussian_element(n, Flavor::SU, &mut rng);
            let a = hs_inner(&gemm(x.matrix(), Op::N, &e, Op::N), &gemm(y.matrix(), Op::N, &e, Op::N)).unwrap();
            assert!((a - hs_inner(x.matrix(), y.matrix()).unwrap()).abs() < 1e-10);
        }
    }
}
