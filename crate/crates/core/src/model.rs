//! Fields, couplings and every density of the model: the Wilson action, the
//! decomposed action `S_U(θ, Q)`, the activity `φ_p`, the edge measures
//! `ν_e`, analytic gradients and Hessian probes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::algebra::{
    exp_map, gemm_into, haar_sample, project_su, project_u, u1_su_embed, CMatrix, Group, LieAlgebraElement, Op,
};
use crate::lattice::{EdgeId, Geometry, OrientedEdge, OrientedPlaquette, PlaquetteId, RootedPlaquette};
use crate::math::{self, TAU};
use crate::{Error, Result, C64};

/// One matrix per positive edge.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeField {
    n: usize,
    links: Vec<CMatrix>,
}

impl GaugeField {
    pub fn identity(geom: &Geometry, n: usize) -> Self {
        Self {
            n,
            links: vec![CMatrix::identity(n); geom.num_edges()],
        }
    }

    pub fn from_links(n: usize, links: Vec<CMatrix>) -> Result<Self> {
        if let Some(bad) = links.iter().find(|m| m.n() != n) {
            return Err(Error::SizeMismatch {
                left: n,
                right: bad.n(),
            });
        }
        Ok(Self { n, links })
    }

    /// Independent Haar-distributed links (the β = 0 measure).
    pub fn haar<R: Rng + ?Sized>(geom: &Geometry, n: usize, group: Group, rng: &mut R) -> Self {
        Self {
            n,
            links: (0..geom.num_edges()).map(|_| haar_sample(n, group, rng)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn len(&self) -> usize {
        self.links.len()
    }
    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }
    pub fn link(&self, e: EdgeId) -> &CMatrix {
        &self.links[e.index()]
    }
    pub fn link_mut(&mut self, e: EdgeId) -> &mut CMatrix {
        &mut self.links[e.index()]
    }
    pub fn set_link(&mut self, e: EdgeId, m: CMatrix) {
        self.links[e.index()] = m;
    }
    pub fn links(&self) -> &[CMatrix] {
        &self.links
    }

    /// Ordered product `Q_{e_1} ⋯ Q_{e_k}` with `Q_{e^{-1}} = Q_e^*`.
    pub fn path_product(&self, path: &[OrientedEdge]) -> CMatrix {
        let mut acc = CMatrix::identity(self.n);
        let mut tmp = CMatrix::zeros(self.n);
        for oe in path {
            let op = if oe.forward { Op::N } else { Op::C };
            gemm_into(&mut tmp, &acc, Op::N, self.link(oe.edge), op);
            core::mem::swap(&mut acc, &mut tmp);
        }
        acc
    }

    /// Largest membership defect over all links.
    pub fn max_defect(&self, group: Group) -> f64 {
        self.links
            .iter()
            .map(|q| group.membership_defect(q))
            .fold(0.0, f64::max)
    }

    pub fn reunitarize(&mut self, group: Group) -> Result<()> {
        for q in &mut self.links {
            *q = group.reunitarize(q)?;
        }
        Ok(())
    }

    /// `Q_e ↦ g_{tail(e)} Q_e g_{head(e)}^*` for one matrix per vertex.
    pub fn gauge_transform(&self, geom: &Geometry, g: &[CMatrix]) -> Result<Self> {
        if g.len() != geom.num_vertices() {
            return Err(Error::SizeMismatch {
                left: geom.num_vertices(),
                right: g.len(),
            });
        }
        let mut tmp = CMatrix::zeros(self.n);
        let links = geom
            .edges()
            .map(|e| {
                let t = geom.tail(e.forward()).index();
                let h = geom.head(e.forward()).index();
                gemm_into(&mut tmp, &g[t], Op::N, self.link(e), Op::N);
                crate::algebra::gemm(&tmp, Op::N, &g[h], Op::C)
            })
            .collect();
        Ok(Self { n: self.n, links })
    }
}

/// One angle `θ_e ∈ [0, 2π)` per positive edge.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleField {
    theta: Vec<f64>,
}

impl AngleField {
    pub fn zeros(geom: &Geometry) -> Self {
        Self {
            theta: vec![0.0; geom.num_edges()],
        }
    }

    pub fn constant(geom: &Geometry, value: f64) -> Self {
        Self {
            theta: vec![math::wrap_angle(value); geom.num_edges()],
        }
    }

    /// Values are reduced into `[0, 2π)`.
    pub fn from_values(values: Vec<f64>) -> Self {
        Self {
            theta: values.into_iter().map(math::wrap_angle).collect(),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(geom: &Geometry, rng: &mut R) -> Self {
        Self {
            theta: (0..geom.num_edges()).map(|_| TAU * rng.random::<f64>()).collect(),
        }
    }

    pub fn get(&self, e: EdgeId) -> f64 {
        self.theta[e.index()]
    }

    pub fn set(&mut self, e: EdgeId, value: f64) {
        self.theta[e.index()] = math::wrap_angle(value);
    }

    pub fn values(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// `θ_ℓ = Σ_i ±θ_{e_i}` along a path.
    pub fn path_sum(&self, path: &[OrientedEdge]) -> f64 {
        path.iter().map(|oe| f64::from(oe.sign()) * self.get(oe.edge)).sum()
    }
}

/// `(θ, Q)` with `Q` special unitary.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedConfig {
    pub theta: AngleField,
    pub q: GaugeField,
}

impl DecomposedConfig {
    pub fn new(theta: AngleField, q: GaugeField) -> Result<Self> {
        if theta.len() != q.len() {
            return Err(Error::SizeMismatch {
                left: theta.len(),
                right: q.len(),
            });
        }
        Ok(Self { theta, q })
    }

    /// `U_e = e^{iθ_e/N} Q_e`.
    pub fn embed(&self) -> GaugeField {
        let links = self
            .q
            .links()
            .iter()
            .zip(self.theta.values())
            .map(|(q, &t)| u1_su_embed(t, q))
            .collect();
        GaugeField { n: self.q.n(), links }
    }
}

/// Inverse couplings: uniform `β` or one `β_p` per positive plaquette.
#[derive(Clone, Debug, PartialEq)]
pub enum Coupling {
    Uniform(f64),
    PerPlaquette(Vec<f64>),
}

impl Coupling {
    pub fn validate(&self, geom: &Geometry) -> Result<()> {
        match self {
            Coupling::Uniform(b) if !(b.is_finite() && *b >= 0.0) => Err(Error::InvalidArgument(format!(
                "beta must be finite and non-negative, got {b}"
            ))),
            Coupling::PerPlaquette(v) if v.len() != geom.num_plaquettes() => Err(Error::SizeMismatch {
                left: geom.num_plaquettes(),
                right: v.len(),
            }),
            Coupling::PerPlaquette(v) => match v.iter().position(|b| !(b.is_finite() && *b >= 0.0)) {
                Some(i) => Err(Error::InvalidArgument(format!(
                    "beta_p[{i}] must be finite and non-negative"
                ))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn beta(&self, p: PlaquetteId) -> f64 {
        match self {
            Coupling::Uniform(b) => *b,
            Coupling::PerPlaquette(v) => v[p.index()],
        }
    }

    /// `sup_p β_p`.
    pub fn sup(&self) -> f64 {
        match self {
            Coupling::Uniform(b) => *b,
            Coupling::PerPlaquette(v) => v.iter().copied().fold(0.0, f64::max),
        }
    }

    /// Per-plaquette copy with `β_p` shifted by `delta`.
    pub fn with_shift(&self, geom: &Geometry, p: PlaquetteId, delta: f64) -> Self {
        let mut v: Vec<f64> = geom.plaquettes().map(|q| self.beta(q)).collect();
        v[p.index()] += delta;
        Coupling::PerPlaquette(v)
    }
}

/// Constants of the small-β regime for dimension `d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimeConstants {
    pub d: usize,
    pub n: usize,
    pub beta: f64,
    pub c_d_star: f64,
}

impl RegimeConstants {
    /// `β* = 10^{−6d}`.
    pub fn beta_star(&self) -> f64 {
        math::powi(10.0, -6 * self.d as i32)
    }
    /// `10^{4−6d}`, the sup bound on `|φ|` for `N > 8π`, `β ≤ β*`.
    pub fn phi_sup_bound(&self) -> f64 {
        math::powi(10.0, 4 - 6 * self.d as i32)
    }
    /// `40^d`.
    pub fn cluster_base(&self) -> f64 {
        math::powi(40.0, self.d as i32)
    }
    /// `2d ln 10`.
    pub fn decay_rate(&self) -> f64 {
        2.0 * self.d as f64 * math::ln(10.0)
    }
    pub fn k_tilde(&self) -> f64 {
        k_tilde(self.n, self.beta, self.c_d_star)
    }
    /// `β̃ = min((3C_d*)^{−1}, β*)`.
    pub fn beta_tilde(&self) -> f64 {
        (1.0 / (3.0 * self.c_d_star)).min(self.beta_star())
    }
    /// `(1 − 10^{4−6d})^{−1}`.
    pub fn partition_ratio_bound(&self) -> f64 {
        1.0 / (1.0 - self.phi_sup_bound())
    }
}

/// `K_S̃ = (N+2)/2 − 1 − C_d* N β`.
pub fn k_tilde(n: usize, beta: f64, c_d_star: f64) -> f64 {
    let nf = n as f64;
    (nf + 2.0) / 2.0 - 1.0 - c_d_star * nf * beta
}

/// `Q_p` for an oriented, rotated plaquette.
pub fn plaquette_product(geom: &Geometry, q: &GaugeField, p: OrientedPlaquette) -> CMatrix {
    q.path_product(&geom.traversal(p))
}

/// `Tr Q_p` of a positive plaquette.
pub fn plaquette_trace(geom: &Geometry, q: &GaugeField, p: PlaquetteId) -> C64 {
    let t = geom.plaquette_edges(p);
    let front = q.path_product(&t[..2]);
    let back = q.path_product(&[t[3].inverse(), t[2].inverse()]);
    CMatrix::trace_of_product(&front, Op::N, &back, Op::C)
}

/// `Tr Q_p` for every positive plaquette.
pub fn plaquette_traces(geom: &Geometry, q: &GaugeField) -> Vec<C64> {
    geom.plaquettes().map(|p| plaquette_trace(geom, q, p)).collect()
}

/// Product of the three edges following `e` in a rooted plaquette, so that
/// the rooted plaquette variable is `Q_e · staple`.
pub fn rooted_staple(q: &GaugeField, r: &RootedPlaquette) -> CMatrix {
    q.path_product(&r.rest)
}

/// `θ_p = Σ_e sgn(e, p) θ_e`.
pub fn theta_p(geom: &Geometry, theta: &AngleField, p: OrientedPlaquette) -> f64 {
    theta.path_sum(&geom.traversal(p))
}

/// `Σ_p N β_p Re Tr Q_p`.
pub fn wilson_action(geom: &Geometry, q: &GaugeField, coupling: &Coupling) -> f64 {
    let n = q.n() as f64;
    geom.plaquettes()
        .map(|p| n * coupling.beta(p) * plaquette_trace(geom, q, p).re)
        .sum()
}

/// `Σ_p N β_p Re(e^{iθ_p/N} Tr Q_p)`.
pub fn decomposed_action(geom: &Geometry, cfg: &DecomposedConfig, coupling: &Coupling) -> f64 {
    let n = cfg.q.n() as f64;
    geom.plaquettes()
        .map(|p| {
            let tp = theta_p(geom, &cfg.theta, OrientedPlaquette::positive(p));
            let tr = plaquette_trace(geom, &cfg.q, p);
            n * coupling.beta(p) * (math::cis(tp / n) * tr).re
        })
        .sum()
}

/// `e^{ix} − 1 − ix`, accurate for small `x`.
pub fn cis_second_order(x: f64) -> C64 {
    let s = math::sin(0.5 * x);
    let re = -2.0 * s * s;
    let im = if math::abs(x) < 0.1 {
        let x2 = x * x;
        // sin x − x
        -x * x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0 * (1.0 - x2 / 110.0))))
    } else {
        math::sin(x) - x
    };
    C64::new(re, im)
}

/// The activity `φ(θ_p, Q_p) = exp(Nβ Re((e^{iθ_p/N} − 1 − iθ_p/N) Tr Q_p)) − 1`,
/// given `Tr Q_p`.
pub fn phi(theta_p: f64, trace: C64, n: usize, beta: f64) -> f64 {
    let nf = n as f64;
    math::expm1(nf * beta * (cis_second_order(theta_p / nf) * trace).re)
}

/// Rate of `ν_e`: `a_e = −Σ_p β_p sgn(e, p) Im Tr Q_p`.
pub fn nu_rate(geom: &Geometry, coupling: &Coupling, traces: &[C64], e: EdgeId) -> f64 {
    -geom
        .incident_signs(e)
        .map(|(p, s)| coupling.beta(p) * f64::from(s) * traces[p.index()].im)
        .sum::<f64>()
}

/// The probability measure `ν_e(dθ) ∝ e^{aθ} dθ` on `[0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NuDensity {
    pub rate: f64,
}

const SERIES_CUTOFF: f64 = 1e-6;

impl NuDensity {
    pub fn new(rate: f64) -> Self {
        Self { rate }
    }

    pub fn for_edge(geom: &Geometry, coupling: &Coupling, traces: &[C64], e: EdgeId) -> Self {
        Self::new(nu_rate(geom, coupling, traces, e))
    }

    /// Unnormalized density `e^{aθ}`.
    pub fn unnormalized(&self, theta: f64) -> f64 {
        math::exp(self.rate * theta)
    }

    /// `Z_e = ∫_0^{2π} e^{aθ} dθ = (e^{2πa} − 1)/a`, series near `a = 0`.
    pub fn normalizer(&self) -> f64 {
        let a = self.rate;
        if math::abs(a) < SERIES_CUTOFF {
            let x = TAU * a;
            TAU * (1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0)
        } else {
            math::expm1(TAU * a) / a
        }
    }

    /// Normalized density on `[0, 2π)`.
    pub fn density(&self, theta: f64) -> f64 {
        let a = self.rate;
        if math::abs(a) < SERIES_CUTOFF {
            return self.unnormalized(theta) / self.normalizer();
        }
        if a > 0.0 {
            // a e^{a(θ−2π)} / (1 − e^{−2πa})
            a * math::exp(a * (theta - TAU)) / -math::expm1(-TAU * a)
        } else {
            a * math::exp(a * theta) / math::expm1(TAU * a)
        }
    }

    /// Inverse CDF: `θ = log1p(u (e^{2πa} − 1)) / a`.
    pub fn quantile(&self, u: f64) -> f64 {
        let a = self.rate;
        let theta = if math::abs(a) < 1e-12 {
            TAU * u
        } else if TAU * a > 30.0 {
            TAU + math::ln(u + (1.0 - u) * math::exp(-TAU * a)) / a
        } else {
            math::log1p(u * math::expm1(TAU * a)) / a
        };
        theta.clamp(0.0, TAU * (1.0 - f64::EPSILON))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }

    /// `2π e^{2πa}/(e^{2πa} − 1) − 1/a`.
    pub fn mean(&self) -> f64 {
        let a = self.rate;
        if math::abs(a) < 1e-4 {
            let pi = math::PI;
            pi + pi * pi * a / 3.0 - 16.0 * pi * pi * pi * pi * a * a * a / 720.0
        } else {
            -TAU / math::expm1(-TAU * a) - 1.0 / a
        }
    }
}

/// `ν_e` for every positive edge at the given field.
pub fn nu_densities(geom: &Geometry, q: &GaugeField, coupling: &Coupling) -> Vec<NuDensity> {
    let traces = plaquette_traces(geom, q);
    geom.edges()
        .map(|e| NuDensity::for_edge(geom, coupling, &traces, e))
        .collect()
}

/// Right-trivialized gradient of the Wilson action at edge `e`: the algebra
/// element `A` with `d/dt S(exp(tX) Q_e) |_{t=0} = ⟨X, A⟩` for every `X` in
/// the algebra of `group`. The tangent vector is `A Q_e`.
///
/// Each plaquette is rooted at `e` so its variable is `Q_e · staple`, and
/// `A = N Σ_p β_p proj(Q_p^*)`.
pub fn grad_wilson(geom: &Geometry, q: &GaugeField, coupling: &Coupling, group: Group, e: EdgeId) -> LieAlgebraElement {
    let n = q.n();
    let mut acc = CMatrix::zeros(n);
    let mut qp = CMatrix::zeros(n);
    for r in geom.rooted(e) {
        let staple = rooted_staple(q, r);
        gemm_into(&mut qp, q.link(e), Op::N, &staple, Op::N);
        acc.axpy(C64::new(n as f64 * coupling.beta(r.plaquette), 0.0), &qp.adjoint());
    }
    project(&acc, group)
}

/// Gradient of the decomposed action in `Q_e` (SU(N) directions) with the
/// per-plaquette phases `e^{iθ_p/N}` supplied as `phases[p]` for positive
/// plaquettes. Passing conditional expectations `E[e^{iθ_p/N} | Q]` gives
/// the gradient of the marginal action `S̃`.
pub fn grad_decomposed(
    geom: &Geometry,
    q: &GaugeField,
    coupling: &Coupling,
    phases: &[C64],
    e: EdgeId,
) -> LieAlgebraElement {
    let n = q.n();
    let mut acc = CMatrix::zeros(n);
    let mut qp = CMatrix::zeros(n);
    for r in geom.rooted(e) {
        let staple = rooted_staple(q, r);
        gemm_into(&mut qp, q.link(e), Op::N, &staple, Op::N);
        // The rooted variable is Q_p or Q_p^{-1}; its angle is ±θ_p.
        let c = phases[r.plaquette.index()];
        let c = if r.orientation > 0 { c } else { c.conj() };
        acc.axpy(c.conj() * (n as f64 * coupling.beta(r.plaquette)), &qp.adjoint());
    }
    project_su(&acc)
}

fn project(m: &CMatrix, group: Group) -> LieAlgebraElement {
    match group {
        Group::U => project_u(m),
        Group::SU => project_su(m),
    }
}

/// `Q_e ↦ exp(t X_e) Q_e` for each listed edge.
pub fn perturb(q: &GaugeField, direction: &[(EdgeId, LieAlgebraElement)], t: f64) -> Result<GaugeField> {
    let mut out = q.clone();
    for (e, x) in direction {
        let g = exp_map(&x.scaled(t))?;
        out.set_link(*e, &g * q.link(*e));
    }
    Ok(out)
}

/// Second difference of a scalar function along `t ↦ exp(tX) Q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HessianProbe {
    pub value: f64,
    /// Set when `h` is so small that the difference is dominated by roundoff.
    pub cancellation_warning: bool,
}

/// `(S(exp(hX)Q) − 2S(Q) + S(exp(−hX)Q)) / h²`, which converges at `O(h²)`
/// to `Hess(S)(v, v)` for `v = (X_e Q_e)_e` since `t ↦ exp(tX)Q` is a
/// geodesic of the bi-invariant metric.
pub fn hessian_probe<F>(
    q: &GaugeField,
    direction: &[(EdgeId, LieAlgebraElement)],
    h: f64,
    mut s: F,
) -> Result<HessianProbe>
where
    F: FnMut(&GaugeField) -> Result<f64>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let s0 = s(q)?;
    let sp = s(&perturb(q, direction, h)?)?;
    let sm = s(&perturb(q, direction, -h)?)?;
    let value = (sp - 2.0 * s0 + sm) / (h * h);
    let roundoff = 4.0 * f64::EPSILON * (math::abs(s0) + 1.0) / (h * h);
    Ok(HessianProbe {
        value,
        cancellation_warning: roundoff > 1e-3 * math::abs(value).max(1e-300),
    })
}

/// Haar-random matrix per vertex, for gauge-invariance checks.
pub fn random_gauge<R: Rng + ?Sized>(geom: &Geometry, n: usize, group: Group, rng: &mut R) -> Vec<CMatrix> {
    (0..geom.num_vertices()).map(|_| haar_sample(n, group, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{su_basis, Flavor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_field_action() {
        let g = Geometry::cube(2, 1).unwrap();
        let q = GaugeField::identity(&g, 2);
        assert!((wilson_action(&g, &q, &Coupling::Uniform(0.1)) - 1.6).abs() < 1e-12);
        assert_eq!(wilson_action(&g, &q, &Coupling::Uniform(0.0)), 0.0);
    }

    #[test]
    fn theta_p_of_standard_square() {
        let g = Geometry::new_box(&[2, 2]).unwrap();
        let p = PlaquetteId(0);
        let mut th = AngleField::zeros(&g);
        for (k, oe) in g.plaquette_edges(p).iter().enumerate() {
            th.set(oe.edge, 0.1 * (k + 1) as f64);
        }
        assert!((theta_p(&g, &th, OrientedPlaquette::positive(p)) + 0.4).abs() < 1e-15);
    }

    #[test]
    fn phi_vanishes_at_zero_and_matches_direct_formula() {
        let tr = C64::new(0.3, -1.1);
        assert_eq!(phi(0.0, tr, 3, 0.2), 0.0);
        let (t, n, b) = (2.7, 3usize, 0.2);
        let z = math::cis(t / 3.0) - C64::new(1.0, t / 3.0);
        let direct = libm::exp(n as f64 * b * (z * tr).re) - 1.0;
        assert!((phi(t, tr, n, b) - direct).abs() < 1e-14);
        for x in [1e-6, 1e-3, 0.05, 0.099, 0.101, 1.0] {
            let d = math::cis(x) - C64::new(1.0, x);
            let s = cis_second_order(x);
            assert!((s - d).norm() <= 1e-15 + 1e-9 * d.norm(), "x = {x}");
        }
    }

    #[test]
    fn nu_normalizer_is_continuous_at_zero() {
        for a in [1e-7, -1e-7, 2e-6, -2e-6] {
            let exact = libm::expm1(TAU * a) / a;
            assert!((NuDensity::new(a).normalizer() - exact).abs() < 1e-12);
        }
        assert!((NuDensity::new(0.0).density(1.0) - 1.0 / TAU).abs() < 1e-15);
        for a in [-3.0, -0.2, 0.5, 8.0] {
            let nu = NuDensity::new(a);
            assert!((nu.density(1.0) - nu.unnormalized(1.0) / nu.normalizer()).abs() < 1e-12 * nu.density(1.0));
            for u in [0.0, 0.2, 0.9] {
                let t = nu.quantile(u);
                let cdf = math::expm1(a * t) / math::expm1(TAU * a);
                assert!((cdf - u).abs() < 1e-12, "a {a} u {u}");
            }
        }
    }

    #[test]
    fn gauge_covariance_of_plaquette_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Geometry::cube(3, 1).unwrap();
        let q = GaugeField::haar(&g, 3, Group::U, &mut rng);
        let gt = random_gauge(&g, 3, Group::U, &mut rng);
        let q2 = q.gauge_transform(&g, &gt).unwrap();
        for p in g.plaquettes() {
            let a = plaquette_trace(&g, &q, p);
            let b = plaquette_trace(&g, &q2, p);
            assert!((a - b).norm() < 1e-12);
            let full = plaquette_product(&g, &q, OrientedPlaquette::positive(p)).trace();
            assert!((a - full).norm() < 1e-12);
            let inv = plaquette_product(&g, &q, OrientedPlaquette::positive(p).inverse()).trace();
            assert!((inv - a.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn grad_wilson_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Geometry::cube(2, 1).unwrap();
        let cpl = Coupling::Uniform(0.37);
        let q = GaugeField::haar(&g, 3, Group::SU, &mut rng);
        let basis = su_basis(3).unwrap();
        let h = 1e-5;
        for e in g.edges() {
            let a = grad_wilson(&g, &q, &cpl, Group::SU, e);
            assert_eq!(a.flavor(), Flavor::SU);
            for v in basis.elements() {
                let dir = [(e, v.clone())];
                let sp = wilson_action(&g, &perturb(&q, &dir, h).unwrap(), &cpl);
                let sm = wilson_action(&g, &perturb(&q, &dir, -h).unwrap(), &cpl);
                let fd = (sp - sm) / (2.0 * h);
                let an = crate::algebra::hs_inner(v.matrix(), a.matrix()).unwrap();
                assert!((fd - an).abs() < 1e-7 * (1.0 + an.abs()), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn grad_decomposed_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Geometry::cube(2, 1).unwrap();
        let cpl = Coupling::Uniform(0.2);
        let q = GaugeField::haar(&g, 2, Group::SU, &mut rng);
        let theta = AngleField::uniform(&g, &mut rng);
        let phases: Vec<C64> = g
            .plaquettes()
            .map(|p| math::cis(theta_p(&g, &theta, OrientedPlaquette::positive(p)) / 2.0))
            .collect();
        let basis = su_basis(2).unwrap();
        let h = 1e-5;
        for e in g.edges() {
            let a = grad_decomposed(&g, &q, &cpl, &phases, e);
            for v in basis.elements() {
                let dir = [(e, v.clone())];
                let act = |t: f64| {
                    let cfg = DecomposedConfig::new(theta.clone(), perturb(&q, &dir, t).unwrap()).unwrap();
                    decomposed_action(&g, &cfg, &cpl)
                };
                let fd = (act(h) - act(-h)) / (2.0 * h);
                let an = crate::algebra::hs_inner(v.matrix(), a.matrix()).unwrap();
                assert!((fd - an).abs() < 1e-7 * (1.0 + an.abs()), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn k_tilde_values() {
        assert_eq!(k_tilde(2, 0.0, 1.0), 1.0);
        assert_eq!(k_tilde(3, 0.0, 1.0), 1.5);
    }
}
