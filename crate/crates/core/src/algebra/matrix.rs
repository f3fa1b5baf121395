use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::math;
use crate::{Error, Result, C64};

/// Whether an operand enters a product as-is or conjugate-transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    C,
}

/// Dense square complex matrix, column-major.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix({}x{})", self.n, self.n)?;
        for r in 0..self.n {
            for c in 0..self.n {
                let z = self[(r, c)];
                write!(f, " {:+.6}{:+.6}i", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![C64::new(0.0, 0.0); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(n);
        for c in 0..n {
            for r in 0..n {
                m.data[c * n + r] = f(r, c);
            }
        }
        m
    }

    /// Builds from column-major data; `data.len()` must be a perfect square.
    pub fn from_column_major(data: Vec<C64>) -> Result<Self> {
        let n = math::sqrt(data.len() as f64) as usize;
        let n = (n.saturating_sub(1)..=n + 1)
            .find(|k| k * k == data.len())
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("{} entries is not a square", data.len())))?;
        Ok(Self { n, data })
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn column(&self, c: usize) -> &[C64] {
        &self.data[c * self.n..(c + 1) * self.n]
    }

    pub fn check_same_size(&self, other: &Self) -> Result<()> {
        if self.n == other.n {
            Ok(())
        } else {
            Err(Error::SizeMismatch {
                left: self.n,
                right: other.n,
            })
        }
    }

    pub fn adjoint(&self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for c in 0..n {
            for r in 0..n {
                out.data[r * n + c] = self.data[c * n + r].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self.data[i * self.n + i]).sum()
    }

    /// `Tr(op_a(A) op_b(B))` without forming the product.
    pub fn trace_of_product(a: &Self, op_a: Op, b: &Self, op_b: Op) -> C64 {
        let n = a.n;
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                let x = match op_a {
                    Op::N => a.data[k * n + i],
                    Op::C => a.data[i * n + k].conj(),
                };
                let y = match op_b {
                    Op::N => b.data[i * n + k],
                    Op::C => b.data[k * n + i].conj(),
                };
                acc += x * y;
            }
        }
        acc
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_in_place(&mut self, s: C64) {
        for z in &mut self.data {
            *z *= s;
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: C64, other: &Self) {
        for (z, w) in self.data.iter_mut().zip(&other.data) {
            *z += s * w;
        }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::sqrt(self.frobenius_norm_sq())
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.n)
            .map(|c| self.column(c).iter().map(|z| math::cabs(*z)).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| math::cabs(a - b))
            .fold(0.0, f64::max)
    }

    /// `‖Q Q* − I‖_F`.
    pub fn unitarity_defect(&self) -> f64 {
        let p = gemm(self, Op::N, self, Op::C);
        (p - Self::identity(self.n)).frobenius_norm()
    }

    /// `‖X + X*‖_F`.
    pub fn anti_hermitian_defect(&self) -> f64 {
        (self + &self.adjoint()).frobenius_norm()
    }
}

impl core::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[c * self.n + r]
    }
}

impl core::ops::IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[c * self.n + r]
    }
}

/// `out = op_a(A) · op_b(B)`; `out` must already have the right size.
pub fn gemm_into(out: &mut CMatrix, a: &CMatrix, op_a: Op, b: &CMatrix, op_b: Op) {
    let n = a.n;
    debug_assert!(b.n == n && out.n == n);
    let zero = C64::new(0.0, 0.0);
    for z in &mut out.data {
        *z = zero;
    }
    match (op_a, op_b) {
        (Op::N, Op::N) => {
            for c in 0..n {
                for k in 0..n {
                    let bkc = b.data[c * n + k];
                    let acol = &a.data[k * n..(k + 1) * n];
                    let ocol = &mut out.data[c * n..(c + 1) * n];
                    for (o, x) in ocol.iter_mut().zip(acol) {
                        *o += x * bkc;
                    }
                }
            }
        }
        _ => {
            for c in 0..n {
                for r in 0..n {
                    let mut acc = zero;
                    for k in 0..n {
                        let x = match op_a {
                            Op::N => a.data[k * n + r],
                            Op::C => a.data[r * n + k].conj(),
                        };
                        let y = match op_b {
                            Op::N => b.data[c * n + k],
                            Op::C => b.data[k * n + c].conj(),
                        };
                        acc += x * y;
                    }
                    out.data[c * n + r] = acc;
                }
            }
        }
    }
}

pub fn gemm(a: &CMatrix, op_a: Op, b: &CMatrix, op_b: Op) -> CMatrix {
    let mut out = CMatrix::zeros(a.n);
    gemm_into(&mut out, a, op_a, b, op_b);
    out
}

/// Real Hilbert–Schmidt inner product `Re Tr(X Y*)`.
pub fn hs_inner(x: &CMatrix, y: &CMatrix) -> Result<f64> {
    x.check_same_size(y)?;
    Ok(x.data.iter().zip(&y.data).map(|(a, b)| a.re * b.re + a.im * b.im).sum())
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        gemm(self, Op::N, rhs, Op::N)
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Sub for CMatrix {
    type Output = CMatrix;
    fn sub(mut self, rhs: CMatrix) -> CMatrix {
        self -= &rhs;
        self
    }
}

impl Add for CMatrix {
    type Output = CMatrix;
    fn add(mut self, rhs: CMatrix) -> CMatrix {
        self += &rhs;
        self
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&CMatrix> for CMatrix {
    fn sub_assign(&mut self, rhs: &CMatrix) {
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale_real(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CMatrix {
        CMatrix::from_fn(3, |r, c| C64::new(r as f64 + 0.5 * c as f64, (r * c) as f64 - 1.0))
    }

    #[test]
    fn gemm_ops_agree_with_explicit_adjoint() {
        let a = sample();
        let b = CMatrix::from_fn(3, |r, c| C64::new((r + 2 * c) as f64, 0.3 * r as f64));
        let reference = &a.adjoint() * &b.adjoint();
        assert!(gemm(&a, Op::C, &b, Op::C).max_abs_diff(&reference) < 1e-12);
        let reference = &a * &b.adjoint();
        assert!(gemm(&a, Op::N, &b, Op::C).max_abs_diff(&reference) < 1e-12);
        let t = CMatrix::trace_of_product(&a, Op::C, &b, Op::N);
        assert!((t - (&a.adjoint() * &b).trace()).norm() < 1e-12);
    }

    #[test]
    fn hs_inner_of_identity_is_n() {
        let i2 = CMatrix::identity(2);
        assert_eq!(hs_inner(&i2, &i2).unwrap(), 2.0);
        assert!(hs_inner(&i2, &CMatrix::identity(3)).is_err());
    }

    #[test]
    fn column_major_layout() {
        let m = CMatrix::from_fn(2, |r, c| C64::new((10 * r + c) as f64, 0.0));
        assert_eq!(m.as_slice()[1].re, 10.0);
        assert_eq!(m.as_slice()[2].re, 1.0);
        let back = CMatrix::from_column_major(m.as_slice().to_vec()).unwrap();
        assert_eq!(back, m);
    }
}
