use rand::Rng;
use rand_distr::StandardNormal;

use super::linalg::{det, fix_determinant, gram_schmidt, polar_unitary};
use super::matrix::CMatrix;
use crate::math;
use crate::{Result, C64};

/// Matrix group of the gauge field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    U,
    SU,
}

impl Group {
    pub fn flavor(self) -> super::lie::Flavor {
        match self {
            Group::U => super::lie::Flavor::U,
            Group::SU => super::lie::Flavor::SU,
        }
    }

    /// Group-membership defect: `‖QQ*−I‖_F`, plus `|det Q − 1|` for SU(N).
    pub fn membership_defect(self, q: &CMatrix) -> f64 {
        let u = q.unitarity_defect();
        match self {
            Group::U => u,
            Group::SU => u.max(math::cabs(det(q) - C64::new(1.0, 0.0))),
        }
    }

    /// Projects a nearly-group-valued matrix back onto the group.
    pub fn reunitarize(self, q: &CMatrix) -> Result<CMatrix> {
        let mut p = polar_unitary(q)?;
        if self == Group::SU {
            fix_determinant(&mut p);
        }
        Ok(p)
    }
}

/// Haar-distributed sample: Gram–Schmidt (QR) of a complex Ginibre matrix
/// with `R` having positive diagonal, divided by the principal `det^{1/N}`
/// for SU(N).
pub fn haar_sample<R: Rng + ?Sized>(n: usize, group: Group, rng: &mut R) -> CMatrix {
    let s = core::f64::consts::FRAC_1_SQRT_2;
    loop {
        let g = CMatrix::from_fn(n, |_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re * s, im * s)
        });
        if let Ok((mut q, _)) = gram_schmidt(&g) {
            if group == Group::SU {
                fix_determinant(&mut q);
            }
            return q;
        }
    }
}

/// `e^{iθ/N} Q`.
pub fn u1_su_embed(theta: f64, q: &CMatrix) -> CMatrix {
    q.scale(math::cis(theta / q.n() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_are_group_valued() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [2, 3, 5] {
            let u = haar_sample(n, Group::U, &mut rng);
            assert!(Group::U.membership_defect(&u) < 1e-12);
            let s = haar_sample(n, Group::SU, &mut rng);
            assert!(Group::SU.membership_defect(&s) < 1e-12);
        }
    }

    #[test]
    fn embedding_scales_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = haar_sample(3, Group::SU, &mut rng);
        assert_eq!(u1_su_embed(0.0, &q), q);
        let theta = 1.3;
        let d = det(&u1_su_embed(theta, &q));
        assert!((d - math::cis(theta)).norm() < 1e-12);
    }
}
