//! Conditional expectations `E[f | Q = Q']` of local θ-observables: the
//! truncated cluster expansion around `Π_e ν_e`, brute-force tensor
//! quadrature, partition-function ratios, boundary sensitivity and
//! conditional covariances.
//!
//! Expanding `Π_p (1 + φ_p)` and grouping the plaquettes of each term into
//! the components that reach `Λ_f` (the cluster `K`) and the rest gives
//!
//! ```text
//! E[f | Q'] = Σ_K ∫ f Π_{p∈K} φ_p Π dν_e · Z(P_K) / Z_Λ
//! ```
//!
//! where `P_K` holds the plaquettes that share no edge with `K` or `Λ_f`
//! (see [`complement_plaquettes`]) and `Z(P) = ∫ Π_{p∈P} (1 + φ_p) Π dν_e`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::algebra::{CMatrix, LieAlgebraElement, Op};
use crate::lattice::{complement_plaquettes, enumerate_clusters, ClusterSet, EdgeId, Geometry, PlaquetteId};
use crate::math::{self, TAU};
use crate::model::{phi, plaquette_traces, rooted_staple, AngleField, Coupling, GaugeField, NuDensity};
use crate::quadrature::{
    plaquette_terms, tensor_grid, ConditionalLaw, EdgeMeasure, GaussLegendre, Scaled, ThetaIntegral, TENSOR_DIM_CAP,
};
use crate::rng::stream_rng;
use crate::samplers::{conditional_theta_sweep, ThetaConditional};
use crate::stats::{covariance_estimate, EstimateWithError};
use crate::{Error, Result, C64};

pub type AngleFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type FieldFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `g(Σ_i c_i θ_{e_i})`.
#[derive(Clone)]
pub struct AngleTerm {
    pub terms: Vec<(EdgeId, f64)>,
    pub g: AngleFn,
}

#[derive(Clone)]
enum Form {
    Product(Vec<AngleTerm>),
    General(FieldFn),
}

/// A bounded function of the edge angles with a declared support `Λ_f`.
///
/// Observables built from [`LocalObservable::angle`] are products of
/// functions of linear combinations and integrate without pinning; general
/// ones are integrated by a tensor rule over their support.
#[derive(Clone)]
pub struct LocalObservable {
    support: Vec<EdgeId>,
    sup_norm: f64,
    form: Form,
}

impl fmt::Debug for LocalObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocalObservable")
            .field("support", &self.support)
            .field("sup_norm", &self.sup_norm)
            .field("product_form", &matches!(self.form, Form::Product(_)))
            .finish()
    }
}

fn collect_terms(terms: &[(EdgeId, f64)]) -> Vec<(EdgeId, f64)> {
    let mut map: BTreeMap<EdgeId, f64> = BTreeMap::new();
    for &(e, c) in terms {
        *map.entry(e).or_insert(0.0) += c;
    }
    map.into_iter().filter(|(_, c)| *c != 0.0).collect()
}

fn merge_support(a: &[EdgeId], b: &[EdgeId]) -> Vec<EdgeId> {
    let mut s: Vec<EdgeId> = a.iter().chain(b).copied().collect();
    s.sort_unstable();
    s.dedup();
    s
}

impl LocalObservable {
    /// `f(θ) = g(Σ c_i θ_{e_i})`; the support is the set of edges with a
    /// nonzero net coefficient.
    pub fn angle(terms: &[(EdgeId, f64)], sup_norm: f64, g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let terms = collect_terms(terms);
        Self {
            support: terms.iter().map(|t| t.0).collect(),
            sup_norm,
            form: Form::Product(vec![AngleTerm { terms, g: Arc::new(g) }]),
        }
    }

    /// Arbitrary function of the full angle vector, trusted only after
    /// [`LocalObservable::verify_support`].
    pub fn general(support: &[EdgeId], sup_norm: f64, eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            support: merge_support(support, &[]),
            sup_norm,
            form: Form::General(Arc::new(eval)),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::general(&[], math::abs(c), move |_| c)
    }

    pub fn support(&self) -> &[EdgeId] {
        &self.support
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn is_product_form(&self) -> bool {
        matches!(self.form, Form::Product(_))
    }

    /// `f(θ)` for a full angle vector.
    pub fn evaluate(&self, theta: &[f64]) -> f64 {
        match &self.form {
            Form::Product(ts) => ts
                .iter()
                .map(|t| (t.g)(t.terms.iter().map(|&(e, c)| c * theta[e.index()]).sum()))
                .product(),
            Form::General(f) => f(theta),
        }
    }

    /// Pointwise product; stays in product form when both factors are.
    pub fn product(&self, other: &Self) -> Self {
        let support = merge_support(&self.support, &other.support);
        let sup_norm = self.sup_norm * other.sup_norm;
        match (&self.form, &other.form) {
            (Form::Product(a), Form::Product(b)) => Self {
                support,
                sup_norm,
                form: Form::Product(a.iter().chain(b).cloned().collect()),
            },
            _ => {
                let (a, b) = (self.clone(), other.clone());
                Self::general(&support, sup_norm, move |t| a.evaluate(t) * b.evaluate(t))
            }
        }
    }

    /// `a·f + b·g`.
    pub fn linear_combination(a: f64, f: &Self, b: f64, g: &Self) -> Self {
        let support = merge_support(&f.support, &g.support);
        let sup_norm = math::abs(a) * f.sup_norm + math::abs(b) * g.sup_norm;
        let (f, g) = (f.clone(), g.clone());
        Self::general(&support, sup_norm, move |t| a * f.evaluate(t) + b * g.evaluate(t))
    }

    /// Checks on random angle vectors that `f` ignores every edge outside
    /// its support and respects its sup-norm bound.
    pub fn verify_support<R: Rng + ?Sized>(&self, num_edges: usize, trials: usize, rng: &mut R) -> Result<()> {
        if let Some(e) = self.support.iter().find(|e| e.index() >= num_edges) {
            return Err(Error::InvalidArgument(format!(
                "support edge {} is not on the lattice",
                e.0
            )));
        }
        let inside: Vec<bool> = (0..num_edges)
            .map(|i| self.support.contains(&EdgeId(i as u32)))
            .collect();
        for _ in 0..trials {
            let theta: Vec<f64> = (0..num_edges).map(|_| rng.random::<f64>() * TAU).collect();
            let v = self.evaluate(&theta);
            if math::abs(v) > self.sup_norm * (1.0 + 1e-12) + 1e-300 {
                return Err(Error::InvalidArgument(format!(
                    "|f| = {v:e} exceeds the declared sup norm {:e}",
                    self.sup_norm
                )));
            }
            for i in 0..num_edges {
                if inside[i] {
                    continue;
                }
                let mut moved = theta.clone();
                moved[i] = rng.random::<f64>() * TAU;
                let w = self.evaluate(&moved);
                if math::abs(w - v) > 1e-12 * (1.0 + math::abs(v)) {
                    return Err(Error::InvalidArgument(format!(
                        "observable depends on edge {i}, outside its declared support"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Hook that builds the integral with some edges pinned.
type Builder<'b> = dyn Fn(&[(EdgeId, f64)]) -> Result<ThetaIntegral<'static>> + 'b;

/// `∫ f · (integrand of build) / reference`. Product-form observables are
/// appended as factors; general ones are pinned over a Gauss–Legendre grid
/// on their free support edges, each point weighted by `density`.
fn integrate_observable(
    f: &LocalObservable,
    num_edges: usize,
    nodes: usize,
    fixed: &dyn Fn(EdgeId) -> Option<f64>,
    density: &dyn Fn(EdgeId, f64) -> f64,
    build: &Builder<'_>,
    reference: &Scaled,
) -> Result<f64> {
    match &f.form {
        Form::Product(ts) => {
            let mut ti = build(&[])?;
            for t in ts {
                let g = t.g.clone();
                ti.add_factor(t.terms.clone(), move |x| g(x));
            }
            Ok(ti.integrate()?.ratio(reference))
        }
        Form::General(_) => {
            let mut theta = vec![0.0; num_edges];
            let mut free = Vec::new();
            for &e in &f.support {
                match fixed(e) {
                    Some(v) => theta[e.index()] = v,
                    None => free.push(e),
                }
            }
            if free.len() > TENSOR_DIM_CAP {
                return Err(Error::DimensionCap {
                    dims: free.len(),
                    cap: TENSOR_DIM_CAP,
                });
            }
            let (x, w) = GaussLegendre::new(nodes)?.on_interval(0.0, TAU);
            let mut idx = vec![0usize; free.len()];
            let mut pins = vec![(EdgeId(0), 0.0); free.len()];
            let mut total = 0.0;
            loop {
                let mut weight = 1.0;
                for (k, &e) in free.iter().enumerate() {
                    let t = x[idx[k]];
                    theta[e.index()] = t;
                    pins[k] = (e, t);
                    weight *= w[idx[k]] * density(e, t);
                }
                let fv = f.evaluate(&theta);
                if fv != 0.0 && weight != 0.0 {
                    total += weight * fv * build(&pins)?.integrate()?.ratio(reference);
                }
                let mut d = 0;
                loop {
                    if d == free.len() {
                        return Ok(total);
                    }
                    idx[d] += 1;
                    if idx[d] < nodes {
                        break;
                    }
                    idx[d] = 0;
                    d += 1;
                }
            }
        }
    }
}

/// Gauss–Legendre tensor quadrature of
/// `∫ f Π_p (1 + φ_p) Π_e ν_e(θ_e) dθ / ∫ Π_p (1 + φ_p) Π_e ν_e(θ_e) dθ`
/// over all edges of a lattice with at most six edges.
pub fn brute_force_conditional(
    geom: &Geometry,
    q: &GaugeField,
    coupling: &Coupling,
    f: &LocalObservable,
    nodes_per_dim: usize,
) -> Result<f64> {
    let ne = geom.num_edges();
    if ne > TENSOR_DIM_CAP {
        return Err(Error::DimensionCap {
            dims: ne,
            cap: TENSOR_DIM_CAP,
        });
    }
    let n = q.n();
    let traces = plaquette_traces(geom, q);
    let nus: Vec<NuDensity> = geom
        .edges()
        .map(|e| NuDensity::for_edge(geom, coupling, &traces, e))
        .collect();
    // (edge terms, Tr Q_p, β_p) per plaquette
    #[allow(clippy::type_complexity)]
    let plaquettes: Vec<(Vec<(usize, f64)>, C64, f64)> = geom
        .plaquettes()
        .map(|p| {
            let terms = plaquette_terms(geom, p)
                .into_iter()
                .map(|(e, c)| (e.index(), c))
                .collect();
            (terms, traces[p.index()], coupling.beta(p))
        })
        .collect();
    let density = |t: &[f64]| -> f64 {
        let mut w: f64 = nus.iter().zip(t).map(|(nu, &x)| nu.density(x)).product();
        for (terms, tr, beta) in &plaquettes {
            let tp: f64 = terms.iter().map(|&(i, c)| c * t[i]).sum();
            w *= 1.0 + phi(tp, *tr, n, *beta);
        }
        w
    };
    let z = tensor_grid(ne, nodes_per_dim, density)?;
    let num = tensor_grid(ne, nodes_per_dim, |t| f.evaluate(t) * density(t))?;
    Ok(num / z)
}

/// How `Z(P_K) / Z_Λ` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RatioMethod {
    Quadrature,
    /// Sample means of `Π (1 + φ_p)` under independent draws from `Π ν_e`.
    ImportanceSampling {
        samples: usize,
        seed: u64,
    },
}

/// Which `sup |φ|` enters the reported bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstantsMode {
    /// `10^{4−6d}`, valid for `β < β*`.
    Rigorous,
    /// Largest `|φ_p|` on a fine grid of `θ_p` at the given field; not
    /// rigorous.
    Measured,
}

/// Order-by-order cluster expansion of one conditional expectation.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionResult {
    pub order: usize,
    /// Sum of the cluster terms of each size `0..=order`.
    pub contributions: Vec<f64>,
    /// Sum of the absolute cluster terms of each size.
    pub magnitudes: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub total: f64,
    pub cluster_counts: Vec<usize>,
    pub constants: ConstantsMode,
    pub sup_phi: f64,
    /// `count(m) · sup|φ|^m · 2^{m+|Λ_f|} · ‖f‖`.
    pub order_bounds: Vec<f64>,
    /// Geometric tail `2^{|Λ_f|} e^{2d|Λ_f|} ‖f‖ Σ_{m>order} (2·40^d·sup|φ|)^m`,
    /// infinite when the series does not converge.
    pub residual_bound: f64,
    pub oracle: Option<f64>,
}

impl ExpansionResult {
    /// `|cumulative[m] − oracle|` for every order.
    pub fn oracle_errors(&self) -> Option<Vec<f64>> {
        self.oracle
            .map(|o| self.cumulative.iter().map(|c| math::abs(c - o)).collect())
    }
}

/// The data of `μ(θ | Q = Q')` in the `(1 + φ) ν` form.
#[derive(Clone, Debug)]
pub struct ExpansionSetup<'g> {
    geom: &'g Geometry,
    n: usize,
    traces: Vec<C64>,
    betas: Vec<f64>,
    nus: Vec<NuDensity>,
    nodes: usize,
    ratio_method: RatioMethod,
    cluster_budget: usize,
    constants: ConstantsMode,
}

/// Default cap on the number of enumerated clusters.
pub const DEFAULT_CLUSTER_BUDGET: usize = 200_000;

impl<'g> ExpansionSetup<'g> {
    pub fn new(geom: &'g Geometry, q: &GaugeField, coupling: &Coupling, nodes: usize) -> Result<Self> {
        coupling.validate(geom)?;
        let traces = plaquette_traces(geom, q);
        let nus = geom
            .edges()
            .map(|e| NuDensity::for_edge(geom, coupling, &traces, e))
            .collect();
        Ok(Self {
            geom,
            n: q.n(),
            betas: geom.plaquettes().map(|p| coupling.beta(p)).collect(),
            traces,
            nus,
            nodes,
            ratio_method: RatioMethod::Quadrature,
            cluster_budget: DEFAULT_CLUSTER_BUDGET,
            constants: ConstantsMode::Measured,
        })
    }

    pub fn with_ratio_method(mut self, m: RatioMethod) -> Self {
        self.ratio_method = m;
        self
    }

    pub fn with_cluster_budget(mut self, budget: usize) -> Self {
        self.cluster_budget = budget;
        self
    }

    pub fn with_constants(mut self, c: ConstantsMode) -> Self {
        self.constants = c;
        self
    }

    pub fn geometry(&self) -> &Geometry {
        self.geom
    }

    pub fn nu(&self, e: EdgeId) -> NuDensity {
        self.nus[e.index()]
    }

    fn activity(&self, p: PlaquetteId) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
        let (tr, n, beta) = (self.traces[p.index()], self.n, self.betas[p.index()]);
        move |x| phi(x, tr, n, beta)
    }

    /// `ν`-measure integral with the given activity and weight factors.
    fn nu_integral(&self, activities: &[PlaquetteId], weights: &[PlaquetteId]) -> Result<ThetaIntegral<'static>> {
        let mut ti = ThetaIntegral::new(self.geom.num_edges(), self.nodes)?;
        for e in self.geom.edges() {
            ti.set_measure(e, EdgeMeasure::Nu(self.nus[e.index()]));
        }
        for &p in activities {
            ti.add_factor(plaquette_terms(self.geom, p), self.activity(p));
        }
        for &p in weights.iter().filter(|p| self.betas[p.index()] != 0.0) {
            let a = self.activity(p);
            ti.add_factor(plaquette_terms(self.geom, p), move |x| 1.0 + a(x));
        }
        Ok(ti)
    }

    /// `Z(P) = ∫ Π_{p∈P} (1 + φ_p) Π dν_e` by quadrature.
    pub fn partition(&self, plaquettes: &[PlaquetteId]) -> Result<Scaled> {
        self.nu_integral(&[], plaquettes)?.integrate()
    }

    /// `Z(P) / Z_Λ` with the configured method.
    pub fn ratio_to_full(&self, plaquettes: &[PlaquetteId]) -> Result<f64> {
        let all: Vec<PlaquetteId> = self.geom.plaquettes().collect();
        match self.ratio_method {
            RatioMethod::Quadrature => Ok(self.partition(plaquettes)?.ratio(&self.partition(&all)?)),
            RatioMethod::ImportanceSampling { samples, seed } => {
                let mut rng = stream_rng(seed, 0);
                let subset: Vec<bool> = {
                    let mut s = vec![false; self.geom.num_plaquettes()];
                    for p in plaquettes {
                        s[p.index()] = true;
                    }
                    s
                };
                let mut theta = vec![0.0; self.geom.num_edges()];
                let (mut num, mut den) = (0.0, 0.0);
                for _ in 0..samples.max(1) {
                    for (t, nu) in theta.iter_mut().zip(&self.nus) {
                        *t = nu.sample(&mut rng);
                    }
                    let (mut a, mut b) = (1.0, 1.0);
                    for p in self.geom.plaquettes() {
                        let tp: f64 = plaquette_terms(self.geom, p)
                            .iter()
                            .map(|&(e, c)| c * theta[e.index()])
                            .sum();
                        let w = 1.0 + (self.activity(p))(tp);
                        b *= w;
                        if subset[p.index()] {
                            a *= w;
                        }
                    }
                    num += a;
                    den += b;
                }
                Ok(num / den)
            }
        }
    }

    /// `sup |φ_p|` for the configured constants mode.
    pub fn sup_phi(&self) -> f64 {
        match self.constants {
            ConstantsMode::Rigorous => math::powi(10.0, 4 - 6 * self.geom.dim() as i32),
            ConstantsMode::Measured => self.measured_sup_phi(),
        }
    }

    /// Largest `|φ_p(θ_p)|` over `θ_p ∈ [−4π, 4π]` on a 4001-point grid.
    pub fn measured_sup_phi(&self) -> f64 {
        let mut best = 0.0f64;
        for p in self.geom.plaquettes() {
            let a = self.activity(p);
            for k in 0..=4000 {
                let x = -2.0 * TAU + 4.0 * TAU * k as f64 / 4000.0;
                best = best.max(math::abs(a(x)));
            }
        }
        best
    }

    /// `∫ f Π_{p∈K} φ_p Π dν_e`.
    pub fn cluster_integral(&self, f: &LocalObservable, cluster: &ClusterSet) -> Result<f64> {
        let build = |pins: &[(EdgeId, f64)]| -> Result<ThetaIntegral<'static>> {
            let mut ti = self.nu_integral(&cluster.plaquettes, &[])?;
            for &(e, t) in pins {
                ti.set_measure(e, EdgeMeasure::Fixed(t));
            }
            Ok(ti)
        };
        let one = Scaled {
            mantissa: 1.0,
            log_scale: 0.0,
        };
        integrate_observable(
            f,
            self.geom.num_edges(),
            self.nodes,
            &|_| None,
            &|e, t| self.nus[e.index()].density(t),
            &build,
            &one,
        )
    }

    /// Cluster expansion of `E[f | Q']` through clusters of size `m_max`.
    pub fn expand_conditional(&self, f: &LocalObservable, m_max: usize) -> Result<ExpansionResult> {
        if f.support().is_empty() {
            return Err(Error::EmptyEdgeSet);
        }
        let clusters = enumerate_clusters(self.geom, f.support(), m_max, self.cluster_budget)?;
        let mut ratios: BTreeMap<Vec<PlaquetteId>, f64> = BTreeMap::new();
        let mut contributions = Vec::with_capacity(m_max + 1);
        let mut magnitudes = Vec::with_capacity(m_max + 1);
        for level in &clusters.by_size {
            let (mut sum, mut mag) = (0.0, 0.0);
            for k in level {
                let rest = complement_plaquettes(self.geom, &k.plaquettes, f.support());
                let ratio = match ratios.get(&rest) {
                    Some(r) => *r,
                    None => {
                        let r = self.ratio_to_full(&rest)?;
                        ratios.insert(rest, r);
                        r
                    }
                };
                let term = self.cluster_integral(f, k)? * ratio;
                sum += term;
                mag += math::abs(term);
            }
            contributions.push(sum);
            magnitudes.push(mag);
        }
        let mut cumulative = Vec::with_capacity(contributions.len());
        let mut acc = 0.0;
        for c in &contributions {
            acc += c;
            cumulative.push(acc);
        }
        let counts = clusters.counts();
        let s = self.sup_phi();
        let lf = f.support().len() as i32;
        let order_bounds = counts
            .iter()
            .enumerate()
            .map(|(m, &c)| c as f64 * math::powi(s, m as i32) * math::powi(2.0, m as i32 + lf) * f.sup_norm())
            .collect();
        let d = self.geom.dim() as f64;
        let q = 2.0 * math::powf(40.0, d) * s;
        let residual_bound = if q < 1.0 {
            math::powi(2.0, lf) * math::exp(2.0 * d * lf as f64) * f.sup_norm() * math::powi(q, m_max as i32 + 1)
                / (1.0 - q)
        } else {
            f64::INFINITY
        };
        Ok(ExpansionResult {
            order: m_max,
            contributions,
            magnitudes,
            total: acc,
            cumulative,
            cluster_counts: counts,
            constants: self.constants,
            sup_phi: s,
            order_bounds,
            residual_bound,
            oracle: None,
        })
    }
}

/// `Z_{Λ∖removed}(Q') / Z_Λ(Q')`.
pub fn partition_ratio(setup: &ExpansionSetup<'_>, removed: &[PlaquetteId]) -> Result<f64> {
    let kept: Vec<PlaquetteId> = setup.geometry().plaquettes().filter(|p| !removed.contains(p)).collect();
    setup.ratio_to_full(&kept)
}

/// `E[f | Q']` under a conditional law (which may pin boundary edges).
pub fn conditional_expectation(law: &ConditionalLaw<'_>, f: &LocalObservable) -> Result<f64> {
    let z = law.integral()?.integrate()?;
    let build = |pins: &[(EdgeId, f64)]| -> Result<ThetaIntegral<'static>> {
        let mut l = law.clone();
        for &(e, t) in pins {
            l.fix_edge(e, t);
        }
        l.integral()
    };
    integrate_observable(
        f,
        law.geometry().num_edges(),
        law.nodes(),
        &|e| law.fixed_value(e),
        &|_, _| 1.0 / TAU,
        &build,
        &z,
    )
}

/// `E[fg | Q'] − E[f | Q'] E[g | Q']` by quadrature.
pub fn conditional_covariance(law: &ConditionalLaw<'_>, f: &LocalObservable, g: &LocalObservable) -> Result<f64> {
    let fg = conditional_expectation(law, &f.product(g))?;
    Ok(fg - conditional_expectation(law, f)? * conditional_expectation(law, g)?)
}

/// `|E[f | Q', θ'] − E[f | Q', θ'']|` with the angles of every edge outside
/// `region` pinned to the two boundary fields.
#[allow(clippy::too_many_arguments)]
pub fn boundary_sensitivity(
    geom: &Geometry,
    q: &GaugeField,
    coupling: &Coupling,
    f: &LocalObservable,
    region: &[EdgeId],
    boundary_a: &AngleField,
    boundary_b: &AngleField,
    nodes: usize,
) -> Result<f64> {
    if let Some(e) = f.support().iter().find(|e| !region.contains(e)) {
        return Err(Error::InvalidArgument(format!(
            "support edge {} lies outside the region",
            e.0
        )));
    }
    let base = ConditionalLaw::new(geom, q.n(), plaquette_traces(geom, q), coupling, nodes)?;
    let pinned = |b: &AngleField| {
        let mut l = base.clone();
        for e in geom.edges().filter(|e| !region.contains(e)) {
            l.fix_edge(e, b.get(e));
        }
        l
    };
    let a = conditional_expectation(&pinned(boundary_a), f)?;
    let b = conditional_expectation(&pinned(boundary_b), f)?;
    Ok(math::abs(a - b))
}

/// `Σ_{r rooted at e} Nβ_r Cov(f, Re(e^{iθ_r/N} Tr(X Q_r)) | Q')`, the
/// derivative of `t ↦ E[f | Q = exp(tX_e) Q']` at `t = 0`. `θ_r` and `Q_r`
/// are the angle and holonomy of the plaquette traversed from `e` forward.
pub fn derivative_covariance(
    law: &ConditionalLaw<'_>,
    q: &GaugeField,
    coupling: &Coupling,
    f: &LocalObservable,
    e: EdgeId,
    x: &LieAlgebraElement,
) -> Result<f64> {
    let geom = law.geometry();
    let n = q.n() as f64;
    let mut total = 0.0;
    for r in geom.rooted(e) {
        let qr = q.link(e) * &rooted_staple(q, r);
        let c = CMatrix::trace_of_product(x.matrix(), Op::N, &qr, Op::N);
        let sign = f64::from(r.orientation);
        let terms: Vec<(EdgeId, f64)> = plaquette_terms(geom, r.plaquette)
            .into_iter()
            .map(|(ed, s)| (ed, sign * s))
            .collect();
        let h = LocalObservable::angle(&terms, math::cabs(c), move |t| (math::cis(t / n) * c).re);
        total += n * coupling.beta(r.plaquette) * conditional_covariance(law, f, &h)?;
    }
    Ok(total)
}

/// `E[f | Q']` and `Cov(f, g | Q')` from a conditional θ chain, with
/// batch-means error bars.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionalMcEstimate {
    pub mean_f: EstimateWithError,
    pub covariance: EstimateWithError,
    pub acceptance: f64,
}

/// Runs the per-edge conditional Metropolis chain from `θ ≡ 0`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_covariance_mc(
    geom: &Geometry,
    q: &GaugeField,
    coupling: &Coupling,
    f: &LocalObservable,
    g: &LocalObservable,
    burn_in: usize,
    sweeps: usize,
    eps: f64,
    seed: u64,
) -> Result<ConditionalMcEstimate> {
    let law = ThetaConditional::new(geom, q, coupling);
    let mut rng = stream_rng(seed, 0);
    let mut theta = AngleField::zeros(geom);
    let mut accepted = 0u64;
    for _ in 0..burn_in {
        conditional_theta_sweep(geom, &law, eps, &mut theta, &mut rng);
    }
    let (mut fs, mut gs) = (Vec::with_capacity(sweeps), Vec::with_capacity(sweeps));
    for _ in 0..sweeps {
        accepted += conditional_theta_sweep(geom, &law, eps, &mut theta, &mut rng);
        fs.push(f.evaluate(theta.values()));
        gs.push(g.evaluate(theta.values()));
    }
    Ok(ConditionalMcEstimate {
        mean_f: crate::stats::estimate_mean(&fs)?,
        covariance: covariance_estimate(&fs, &gs)?,
        acceptance: accepted as f64 / (sweeps.max(1) * geom.num_edges()) as f64,
    })
}
