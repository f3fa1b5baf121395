//! Matrix exponential by scaling and squaring with diagonal Padé approximants
//! (degrees 3, 5, 7, 9 and 13 selected from the 1-norm).

use super::linalg::Lu;
use super::matrix::{gemm, CMatrix, Op};
use crate::math;
use crate::{Result, C64};

const THETA: [(usize, f64); 4] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
];
const THETA_13: f64 = 5.371_920_351_148_152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn pade_low(a: &CMatrix, b: &[f64]) -> (CMatrix, CMatrix) {
    let n = a.n();
    let a2 = a * a;
    let mut power = CMatrix::identity(n);
    let mut u_inner = CMatrix::zeros(n);
    let mut v = CMatrix::zeros(n);
    let mut k = 0;
    while 2 * k < b.len() {
        v.axpy(C64::new(b[2 * k], 0.0), &power);
        if 2 * k + 1 < b.len() {
            u_inner.axpy(C64::new(b[2 * k + 1], 0.0), &power);
        }
        power = &power * &a2;
        k += 1;
    }
    (a * &u_inner, v)
}

fn pade13(a: &CMatrix) -> (CMatrix, CMatrix) {
    let n = a.n();
    let id = CMatrix::identity(n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &B13;
    let c = |x: f64| C64::new(x, 0.0);

    let mut inner = a6.scale(c(b[13]));
    inner.axpy(c(b[11]), &a4);
    inner.axpy(c(b[9]), &a2);
    let mut u = &a6 * &inner;
    u.axpy(c(b[7]), &a6);
    u.axpy(c(b[5]), &a4);
    u.axpy(c(b[3]), &a2);
    u.axpy(c(b[1]), &id);
    let u = a * &u;

    let mut inner = a6.scale(c(b[12]));
    inner.axpy(c(b[10]), &a4);
    inner.axpy(c(b[8]), &a2);
    let mut v = &a6 * &inner;
    v.axpy(c(b[6]), &a6);
    v.axpy(c(b[4]), &a4);
    v.axpy(c(b[2]), &a2);
    v.axpy(c(b[0]), &id);
    (u, v)
}

/// `exp(A)` for a general square complex matrix.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    let norm = a.norm_one();
    for (m, theta) in THETA {
        if norm <= theta {
            let b: &[f64] = match m {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            let (u, v) = pade_low(a, b);
            return solve_pade(&u, &v);
        }
    }
    let s = if norm > THETA_13 {
        math::ceil(math::ln(norm / THETA_13) / core::f64::consts::LN_2).max(0.0) as u32
    } else {
        0
    };
    let scaled = a.scale_real(math::powi(2.0, -(s as i32)));
    let (u, v) = pade13(&scaled);
    let mut r = solve_pade(&u, &v)?;
    for _ in 0..s {
        r = gemm(&r, Op::N, &r, Op::N);
    }
    Ok(r)
}

fn solve_pade(u: &CMatrix, v: &CMatrix) -> Result<CMatrix> {
    let p = v + u;
    let q = v - u;
    Ok(Lu::new(&q)?.solve(&p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_zero_is_identity() {
        let e = expm(&CMatrix::zeros(4)).unwrap();
        assert!(e.max_abs_diff(&CMatrix::identity(4)) < 1e-15);
    }

    #[test]
    fn exp_of_diagonal_matches_scalar_exp() {
        for scale in [1e-3, 0.2, 1.0, 3.0, 40.0] {
            let d = [
                C64::new(0.0, scale),
                C64::new(-0.5 * scale, 0.1),
                C64::new(0.0, -2.0 * scale),
            ];
            let e = expm(&CMatrix::from_diagonal(&d)).unwrap();
            for (i, z) in d.iter().enumerate() {
                let want = z.exp();
                assert!((e[(i, i)] - want).norm() < 1e-12 * (1.0 + want.norm()), "scale {scale}");
            }
        }
    }

    #[test]
    fn exp_of_nilpotent_is_truncated_series() {
        let mut a = CMatrix::zeros(3);
        a[(0, 1)] = C64::new(2.0, 0.0);
        a[(1, 2)] = C64::new(0.0, 3.0);
        let e = expm(&a).unwrap();
        // I + A + A^2/2
        let mut want = CMatrix::identity(3);
        want += &a;
        want.axpy(C64::new(0.5, 0.0), &(&a * &a));
        assert!(e.max_abs_diff(&want) < 1e-12);
    }
}
