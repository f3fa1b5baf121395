//! LU, Gram–Schmidt and polar corrections for small dense matrices.

use alloc::vec::Vec;

use super::matrix::{gemm, gemm_into, CMatrix, Op};
use crate::math;
use crate::{Error, Result, C64};

/// LU factorization with partial pivoting, stored in place.
pub struct Lu {
    lu: CMatrix,
    perm: Vec<usize>,
    swaps: usize,
}

impl Lu {
    pub fn new(a: &CMatrix) -> Result<Self> {
        let n = a.n();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;
        for k in 0..n {
            let (piv, best) =
                (k..n)
                    .map(|r| (r, math::cabs(lu[(r, k)])))
                    .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best == 0.0 {
                return Err(Error::Numerical("singular matrix in LU".into()));
            }
            if piv != k {
                for c in 0..n {
                    let tmp = lu[(k, c)];
                    lu[(k, c)] = lu[(piv, c)];
                    lu[(piv, c)] = tmp;
                }
                perm.swap(k, piv);
                swaps += 1;
            }
            let d = lu[(k, k)];
            for r in k + 1..n {
                let l = lu[(r, k)] / d;
                lu[(r, k)] = l;
                for c in k + 1..n {
                    let u = lu[(k, c)];
                    lu[(r, c)] -= l * u;
                }
            }
        }
        Ok(Self { lu, perm, swaps })
    }

    pub fn det(&self) -> C64 {
        let n = self.lu.n();
        let mut d: C64 = (0..n).map(|i| self.lu[(i, i)]).product();
        if self.swaps % 2 == 1 {
            d = -d;
        }
        d
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &CMatrix) -> CMatrix {
        let n = self.lu.n();
        let mut x = CMatrix::zeros(n);
        for c in 0..n {
            let mut y: Vec<C64> = (0..n).map(|r| b[(self.perm[r], c)]).collect();
            for r in 0..n {
                for k in 0..r {
                    let l = self.lu[(r, k)];
                    let yk = y[k];
                    y[r] -= l * yk;
                }
            }
            for r in (0..n).rev() {
                for k in r + 1..n {
                    let u = self.lu[(r, k)];
                    let yk = y[k];
                    y[r] -= u * yk;
                }
                y[r] /= self.lu[(r, r)];
            }
            for r in 0..n {
                x[(r, c)] = y[r];
            }
        }
        x
    }
}

pub fn det(a: &CMatrix) -> C64 {
    match Lu::new(a) {
        Ok(lu) => lu.det(),
        Err(_) => C64::new(0.0, 0.0),
    }
}

/// Modified Gram–Schmidt on the columns, reorthogonalized when needed. Returns the unitary
/// factor `Q` and the diagonal of `R`, which is real and positive.
pub fn gram_schmidt(a: &CMatrix) -> Result<(CMatrix, Vec<f64>)> {
    let n = a.n();
    let mut q = a.clone();
    let mut rdiag = Vec::with_capacity(n);
    let data = q.as_mut_slice();
    for j in 0..n {
        let (done, rest) = data.split_at_mut(j * n);
        let col = &mut rest[..n];
        // A second pass only when the first removed most of the column.
        let before = col.iter().map(|z| z.norm_sqr()).sum::<f64>();
        for pass in 0..2 {
            if pass == 1 && col.iter().map(|z| z.norm_sqr()).sum::<f64>() > 0.5 * before {
                break;
            }
            for qi in done.chunks_exact(n) {
                let (mut pr, mut pi) = (0.0, 0.0);
                for (a, b) in qi.iter().zip(col.iter()) {
                    pr += a.re * b.re + a.im * b.im;
                    pi += a.re * b.im - a.im * b.re;
                }
                for (c, a) in col.iter_mut().zip(qi) {
                    c.re -= pr * a.re - pi * a.im;
                    c.im -= pr * a.im + pi * a.re;
                }
            }
        }
        let norm = math::sqrt(col.iter().map(|z| z.norm_sqr()).sum::<f64>());
        if norm < 1e-300 {
            return Err(Error::Numerical("rank-deficient matrix in Gram-Schmidt".into()));
        }
        for c in col.iter_mut() {
            *c /= norm;
        }
        rdiag.push(norm);
    }
    Ok((q, rdiag))
}

/// Nearest unitary matrix (polar factor) by Newton–Schulz iteration,
/// `X ← X (3I − X*X)/2`. Falls back to Gram–Schmidt if `a` is far from
/// unitary.
pub fn polar_unitary(a: &CMatrix) -> Result<CMatrix> {
    let n = a.n();
    if a.unitarity_defect() > 0.5 {
        return gram_schmidt(a).map(|(q, _)| q);
    }
    let mut x = a.clone();
    let mut xtx = CMatrix::zeros(n);
    let mut next = CMatrix::zeros(n);
    for _ in 0..20 {
        gemm_into(&mut xtx, &x, Op::C, &x, Op::N);
        let mut defect = 0.0;
        for c in 0..n {
            for r in 0..n {
                let target = if r == c { 1.0 } else { 0.0 };
                defect += (xtx[(r, c)] - C64::new(target, 0.0)).norm_sqr();
            }
        }
        if defect < 1e-30 {
            break;
        }
        // 3I - X*X, halved.
        for z in xtx.as_mut_slice() {
            *z *= -0.5;
        }
        for i in 0..n {
            xtx[(i, i)] += C64::new(1.5, 0.0);
        }
        gemm_into(&mut next, &x, Op::N, &xtx, Op::N);
        core::mem::swap(&mut x, &mut next);
    }
    Ok(x)
}

/// Divides by the principal `det^{1/N}` so that the determinant becomes 1.
pub fn fix_determinant(a: &mut CMatrix) {
    let d = det(a);
    let root = math::croot(d, a.n());
    let inv = C64::new(1.0, 0.0) / root;
    a.scale_in_place(inv);
}

pub fn inverse(a: &CMatrix) -> Result<CMatrix> {
    Ok(Lu::new(a)?.solve(&CMatrix::identity(a.n())))
}

/// `A^{-1}` for a unitary matrix is `A*`; this helper verifies that.
pub fn unitary_inverse_residual(a: &CMatrix) -> f64 {
    let p = gemm(a, Op::C, a, Op::N);
    (p - CMatrix::identity(a.n())).frobenius_norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m3() -> CMatrix {
        CMatrix::from_fn(3, |r, c| {
            C64::new(
                [[2.0, 1.0, 0.5], [0.0, 3.0, 1.0], [1.0, 0.2, 4.0]][r][c],
                0.1 * (r as f64 - c as f64),
            )
        })
    }

    #[test]
    fn lu_solves_and_computes_det() {
        let a = m3();
        let lu = Lu::new(&a).unwrap();
        let x = lu.solve(&CMatrix::identity(3));
        assert!((&a * &x).max_abs_diff(&CMatrix::identity(3)) < 1e-12);
        let diag = CMatrix::from_diagonal(&[C64::new(2.0, 0.0), C64::new(0.0, 1.0), C64::new(3.0, 0.0)]);
        assert!((det(&diag) - C64::new(0.0, 6.0)).norm() < 1e-14);
        // det(AB) = det A det B
        let b = a.adjoint();
        assert!((det(&(&a * &b)) - det(&a) * det(&b)).norm() < 1e-9);
    }

    #[test]
    fn gram_schmidt_gives_unitary_with_positive_r() {
        let (q, r) = gram_schmidt(&m3()).unwrap();
        assert!(q.unitarity_defect() < 1e-13);
        assert!(r.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn polar_restores_near_unitary_matrix() {
        let (q, _) = gram_schmidt(&m3()).unwrap();
        let mut p = q.clone();
        p[(0, 1)] += C64::new(3e-7, -2e-7);
        p[(2, 2)] += C64::new(-4e-7, 0.0);
        assert!(p.unitarity_defect() < 1e-6);
        let fixed = polar_unitary(&p).unwrap();
        assert!(fixed.unitarity_defect() < 1e-12);
        assert!((&fixed - &p).frobenius_norm() < 1e-5);
    }
}
