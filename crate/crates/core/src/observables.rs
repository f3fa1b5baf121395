//! Wilson loops `W_ℓ = tr(Q_ℓ)` with `tr = Tr / N`, evaluated on a U(N)
//! field or on a decomposed configuration as `e^{iθ_ℓ/N} tr(Q_ℓ)`.

use crate::lattice::{Geometry, Loop};
use crate::model::{DecomposedConfig, GaugeField};
use crate::{math, C64};

/// A configuration a Wilson loop can be evaluated on.
#[derive(Clone, Copy, Debug)]
pub enum FieldRef<'a> {
    Direct(&'a GaugeField),
    Decomposed(&'a DecomposedConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvaluationMode {
    Direct,
    Decomposed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WilsonLoopObservable {
    pub loop_: Loop,
    pub mode: EvaluationMode,
}

impl WilsonLoopObservable {
    pub fn new(loop_: Loop, mode: EvaluationMode) -> Self {
        Self { loop_, mode }
    }

    /// Evaluates on a field; a direct observable applied to a decomposed
    /// configuration uses the embedded field.
    pub fn evaluate(&self, field: FieldRef<'_>) -> C64 {
        match (self.mode, field) {
            (_, FieldRef::Direct(u)) => wilson_loop(u, &self.loop_),
            (EvaluationMode::Decomposed, FieldRef::Decomposed(c)) => wilson_loop_decomposed(c, &self.loop_),
            (EvaluationMode::Direct, FieldRef::Decomposed(c)) => wilson_loop(&c.embed(), &self.loop_),
        }
    }
}

/// `tr(Q_ℓ)` of the ordered product along the loop.
pub fn wilson_loop(u: &GaugeField, l: &Loop) -> C64 {
    u.path_product(l.edges()).trace() / u.n() as f64
}

/// `e^{iθ_ℓ/N} tr(Q_ℓ)` with `θ_ℓ` the signed sum along the loop.
pub fn wilson_loop_decomposed(cfg: &DecomposedConfig, l: &Loop) -> C64 {
    let n = cfg.q.n() as f64;
    math::cis(cfg.theta.path_sum(l.edges()) / n) * wilson_loop(&cfg.q, l)
}

/// Real part of the plaquette Wilson loop for every positive plaquette.
pub fn plaquette_loops(geom: &Geometry, u: &GaugeField) -> alloc::vec::Vec<f64> {
    let n = u.n() as f64;
    crate::model::plaquette_traces(geom, u)
        .iter()
        .map(|t| t.re / n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Group;
    use crate::lattice::PlaquetteId;
    use crate::model::{plaquette_product, random_gauge, AngleField};
    use crate::rng::stream_rng;

    #[test]
    fn identity_field_gives_one() {
        let g = Geometry::cube(2, 1).unwrap();
        let l = Loop::rectangle(&g, &[-1, -1], 0, 1, 2, 1).unwrap();
        assert_eq!(wilson_loop(&GaugeField::identity(&g, 3), &l), C64::new(1.0, 0.0));
    }

    #[test]
    fn plaquette_loop_is_plaquette_trace() {
        let g = Geometry::cube(2, 1).unwrap();
        let mut rng = stream_rng(1, 0);
        let u = GaugeField::haar(&g, 3, Group::U, &mut rng);
        let p = PlaquetteId(2);
        let want = plaquette_product(&g, &u, crate::lattice::OrientedPlaquette::positive(p)).trace() / 3.0;
        assert!((wilson_loop(&u, &Loop::plaquette(&g, p)) - want).norm() < 1e-14);
    }

    #[test]
    fn decomposed_matches_embedded_and_is_gauge_invariant() {
        let g = Geometry::cube(2, 1).unwrap();
        let mut rng = stream_rng(2, 0);
        let cfg = DecomposedConfig::new(
            AngleField::uniform(&g, &mut rng),
            GaugeField::haar(&g, 3, Group::SU, &mut rng),
        )
        .unwrap();
        let l = Loop::rectangle(&g, &[-1, -1], 0, 1, 2, 2).unwrap();
        let direct = WilsonLoopObservable::new(l.clone(), EvaluationMode::Direct);
        let dec = WilsonLoopObservable::new(l.clone(), EvaluationMode::Decomposed);
        let a = direct.evaluate(FieldRef::Decomposed(&cfg));
        let b = dec.evaluate(FieldRef::Decomposed(&cfg));
        assert!((a - b).norm() < 1e-10);
        assert!(a.norm() <= 1.0 + 1e-12);
        let u = cfg.embed();
        let v = u.gauge_transform(&g, &random_gauge(&g, 3, Group::U, &mut rng)).unwrap();
        assert!((wilson_loop(&u, &l) - wilson_loop(&v, &l)).norm() < 1e-10);
    }
}
