//! Dense complex matrices, the groups U(N)/SU(N) and their Lie algebras.

mod expm;
mod group;
mod lie;
pub mod linalg;
mod matrix;

pub use expm::expm;
pub use group::{haar_sample, u1_su_embed, Group};
pub use lie::{
    casimir_constant, exp_map, gaussian_element, project_su, project_u, su_basis, Flavor, LieAlgebraElement, SuBasis,
};
pub use matrix::{gemm, gemm_into, hs_inner, CMatrix, Op};
