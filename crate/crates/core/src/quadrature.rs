//! Numerical integration over the angle variables `θ_e ∈ [0, 2π)`.
//!
//! Two independent engines live here:
//!
//! * [`tensor_grid`]: plain Gauss–Legendre product rule, at most six
//!   dimensions. Slow but obviously correct; used as the oracle.
//! * [`ThetaIntegral`]: integrals of products of factors, each a function of
//!   an integer combination of edge angles (plaquette angles, single edges),
//!   against per-edge measures. Edges that occur in a single factor with the
//!   uniform measure are integrated out analytically into an Irwin–Hall
//!   piecewise-polynomial density for their signed sum; the rest is
//!   contracted by variable elimination over dense node tables.
//!
//! [`ConditionalLaw`] specializes the second engine to the law of `θ` given
//! `Q`, whose density is `Π_p exp(Nβ_p Re(e^{iθ_p/N} Tr Q_p))` against
//! `Π_e dθ_e/2π`, and evaluates the marginal action
//! `S̃(Q) = log ∫ exp(S_U(θ, Q)) Π_e dθ_e/2π`.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::lattice::{EdgeId, Geometry, PlaquetteId};
use crate::math::{self, PI, TAU};
use crate::model::{Coupling, NuDensity};
use crate::{Error, Result, C64};

/// Maximal number of dimensions of [`tensor_grid`].
pub const TENSOR_DIM_CAP: usize = 6;

/// Gauss–Legendre rule on `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "Gauss–Legendre rule needs at least one node".into(),
            ));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = math::cos(PI * (i as f64 + 0.75) / (nf + 0.5));
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if math::abs(dx) < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn on_interval(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let h = 0.5 * (b - a);
        let m = 0.5 * (a + b);
        (
            self.nodes.iter().map(|x| m + h * x).collect(),
            self.weights.iter().map(|w| h * w).collect(),
        )
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `∫_{[0,2π)^dims} f(θ) dθ` by the product Gauss–Legendre rule.
pub fn tensor_grid<F>(dims: usize, nodes_per_dim: usize, mut f: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if dims > TENSOR_DIM_CAP {
        return Err(Error::DimensionCap {
            dims,
            cap: TENSOR_DIM_CAP,
        });
    }
    let (x, w) = GaussLegendre::new(nodes_per_dim)?.on_interval(0.0, TAU);
    let mut idx = vec![0usize; dims];
    let mut point = vec![0.0; dims];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        for d in 0..dims {
            point[d] = x[idx[d]];
            weight *= w[idx[d]];
        }
        total += weight * f(&point);
        let mut d = 0;
        loop {
            if d == dims {
                return Ok(total);
            }
            idx[d] += 1;
            if idx[d] < nodes_per_dim {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Measure carried by one edge angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeMeasure {
    /// `dθ / 2π`.
    Uniform,
    /// The truncated exponential `ν_e`.
    Nu(NuDensity),
    /// Pinned to a value (boundary condition).
    Fixed(f64),
}

/// A function of `Σ_i c_i θ_{e_i}`.
pub struct AngleFactor<'a> {
    pub terms: Vec<(EdgeId, f64)>,
    pub f: Box<dyn Fn(f64) -> f64 + 'a>,
}

/// A positive number stored as `mantissa · e^{log_scale}`, or zero/negative
/// through the sign of the mantissa.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaled {
    pub mantissa: f64,
    pub log_scale: f64,
}

impl Scaled {
    pub fn value(&self) -> f64 {
        self.mantissa * math::exp(self.log_scale)
    }

    /// `log |value|`.
    pub fn ln_abs(&self) -> f64 {
        math::ln(math::abs(self.mantissa)) + self.log_scale
    }

    /// `self / other` without overflow.
    pub fn ratio(&self, other: &Scaled) -> f64 {
        self.mantissa / other.mantissa * math::exp(self.log_scale - other.log_scale)
    }
}

/// Default cap on the number of entries of any intermediate table.
pub const DEFAULT_TABLE_BUDGET: usize = 1 << 24;

/// Largest number of private edges folded into one factor.
const MAX_PRIVATE: usize = 6;

/// Integral `∫ Π_j F_j(Σ c θ) Π_e dm_e(θ_e)`.
pub struct ThetaIntegral<'a> {
    measures: Vec<EdgeMeasure>,
    factors: Vec<AngleFactor<'a>>,
    rule: GaussLegendre,
    budget: usize,
}

#[derive(Clone, Debug)]
struct Table {
    vars: Vec<usize>,
    data: Vec<f64>,
    log_scale: f64,
}

impl Table {
    fn normalize(&mut self) {
        let m = self.data.iter().fold(0.0f64, |a, x| a.max(math::abs(*x)));
        if m > 0.0 && m.is_finite() {
            for x in &mut self.data {
                *x /= m;
            }
            self.log_scale += math::ln(m);
        }
    }
}

/// How a factor is evaluated after private edges are folded in.
#[derive(Clone, Debug)]
struct FactorPlan {
    vars: Vec<usize>,
    coeffs: Vec<f64>,
    constant: f64,
    /// Points `(z, w)` of the folded distribution of the private edges.
    points: Vec<(f64, f64)>,
}

/// Compiled form of a [`ThetaIntegral`]: node tables for every factor and
/// node weights for every remaining variable.
pub struct CompiledIntegral<'i, 'a> {
    source: &'i ThetaIntegral<'a>,
    plans: Vec<FactorPlan>,
    tables: Vec<Table>,
    nodes: Vec<f64>,
    var_weights: Vec<Vec<f64>>,
}

impl<'a> ThetaIntegral<'a> {
    /// All edges start with the uniform measure.
    pub fn new(num_edges: usize, nodes: usize) -> Result<Self> {
        Ok(Self {
            measures: vec![EdgeMeasure::Uniform; num_edges],
            factors: Vec::new(),
            rule: GaussLegendre::new(nodes)?,
            budget: DEFAULT_TABLE_BUDGET,
        })
    }

    pub fn set_measure(&mut self, e: EdgeId, m: EdgeMeasure) {
        self.measures[e.index()] = m;
    }

    pub fn measure(&self, e: EdgeId) -> EdgeMeasure {
        self.measures[e.index()]
    }

    pub fn set_budget(&mut self, budget: usize) {
        self.budget = budget;
    }

    pub fn add_factor(&mut self, terms: Vec<(EdgeId, f64)>, f: impl Fn(f64) -> f64 + 'a) -> usize {
        self.factors.push(AngleFactor { terms, f: Box::new(f) });
        self.factors.len() - 1
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn integrate(&self) -> Result<Scaled> {
        self.compile()?.contract()
    }

    /// Folds private edges and tabulates every factor on the node grid.
    pub fn compile(&self) -> Result<CompiledIntegral<'_, 'a>> {
        let ne = self.measures.len();
        let mut uses = vec![0usize; ne];
        for fac in &self.factors {
            let mut seen = BTreeSet::new();
            for &(e, _) in &fac.terms {
                if e.index() >= ne {
                    return Err(Error::InvalidArgument(format!("edge {} out of range", e.0)));
                }
                if seen.insert(e) && !matches!(self.measures[e.index()], EdgeMeasure::Fixed(_)) {
                    uses[e.index()] += 1;
                }
            }
        }
        let (x, w) = self.rule.on_interval(0.0, TAU);
        let mut plans = Vec::with_capacity(self.factors.len());
        for fac in &self.factors {
            plans.push(self.plan_factor(fac, &uses, &x, &w)?);
        }
        let mut var_weights = vec![Vec::new(); ne];
        for plan in &plans {
            for &v in &plan.vars {
                if var_weights[v].is_empty() {
                    let m = self.measures[v];
                    var_weights[v] = node_weights(m, &x, &w);
                }
            }
        }
        let mut compiled = CompiledIntegral {
            source: self,
            plans,
            tables: Vec::new(),
            nodes: x,
            var_weights,
        };
        compiled.tables = (0..self.factors.len())
            .map(|j| compiled.tabulate(j, &*self.factors[j].f))
            .collect::<Result<_>>()?;
        Ok(compiled)
    }

    fn plan_factor(&self, fac: &AngleFactor<'a>, uses: &[usize], x: &[f64], w: &[f64]) -> Result<FactorPlan> {
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for &(e, c) in &fac.terms {
            match merged.iter_mut().find(|(v, _)| *v == e.index()) {
                Some(slot) => slot.1 += c,
                None => merged.push((e.index(), c)),
            }
        }
        let mut plan = FactorPlan {
            vars: Vec::new(),
            coeffs: Vec::new(),
            constant: 0.0,
            points: vec![(0.0, 1.0)],
        };
        let mut uniform_signs: Vec<f64> = Vec::new();
        let mut other_private: Vec<(usize, f64)> = Vec::new();
        for (v, c) in merged {
            if c == 0.0 {
                continue;
            }
            match self.measures[v] {
                EdgeMeasure::Fixed(t) => plan.constant += c * t,
                m if uses[v] == 1 => {
                    let folded = uniform_signs.len() + other_private.len();
                    if folded >= MAX_PRIVATE {
                        plan.vars.push(v);
                        plan.coeffs.push(c);
                    } else if m == EdgeMeasure::Uniform && math::abs(c) == 1.0 {
                        uniform_signs.push(c);
                    } else {
                        other_private.push((v, c));
                    }
                }
                _ => {
                    plan.vars.push(v);
                    plan.coeffs.push(c);
                }
            }
        }
        if !uniform_signs.is_empty() {
            plan.points = irwin_hall_points(&uniform_signs, &self.rule);
        }
        for (v, c) in other_private {
            let measure = self.measures[v];
            let edge_pts: Vec<(f64, f64)> = x
                .iter()
                .zip(node_weights(measure, x, w))
                .map(|(xk, wk)| (c * xk, wk))
                .collect();
            plan.points = plan
                .points
                .iter()
                .flat_map(|&(z, pw)| edge_pts.iter().map(move |&(y, ew)| (z + y, pw * ew)))
                .collect();
        }
        // Sort vars so tables have a canonical layout.
        let mut order: Vec<usize> = (0..plan.vars.len()).collect();
        order.sort_by_key(|&i| plan.vars[i]);
        plan.vars = order.iter().map(|&i| plan.vars[i]).collect();
        plan.coeffs = order.iter().map(|&i| plan.coeffs[i]).collect();
        Ok(plan)
    }
}

/// Node weights of an edge measure, rescaled to total mass one so that an
/// edge whose factors are constant integrates to exactly 1.
fn node_weights(m: EdgeMeasure, x: &[f64], w: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = x.iter().zip(w).map(|(xk, wk)| wk * measure_density(m, *xk)).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

fn measure_density(m: EdgeMeasure, theta: f64) -> f64 {
    match m {
        EdgeMeasure::Uniform => 1.0 / TAU,
        EdgeMeasure::Nu(nu) => nu.density(theta),
        EdgeMeasure::Fixed(_) => unreachable!("pinned edges never become variables"),
    }
}

/// Quadrature points for `Σ_i s_i θ_i` with `θ_i` uniform on `[0, 2π)` and
/// `s_i = ±1`: with `m` negative signs the sum is `2π(U_1 + ⋯ + U_k) − 2πm`
/// for uniforms `U_i` on `[0, 1)`, whose Irwin–Hall density is a polynomial
/// of degree `k − 1` on each unit interval.
fn irwin_hall_points(signs: &[f64], rule: &GaussLegendre) -> Vec<(f64, f64)> {
    let k = signs.len();
    let m = signs.iter().filter(|s| **s < 0.0).count() as f64;
    let mut pts = Vec::with_capacity(k * rule.len());
    for piece in 0..k {
        let (xs, ws) = rule.on_interval(piece as f64, piece as f64 + 1.0);
        for (x, w) in xs.iter().zip(&ws) {
            pts.push((TAU * (x - m), w * irwin_hall_density(k, *x)));
        }
    }
    pts
}

fn irwin_hall_density(k: usize, x: f64) -> f64 {
    let mut fact = 1.0;
    for i in 1..k {
        fact *= i as f64;
    }
    let mut binom = 1.0;
    let mut sum = 0.0;
    for i in 0..=k {
        if (i as f64) > x {
            break;
        }
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * binom * math::powi(x - i as f64, k as i32 - 1);
        binom = binom * (k - i) as f64 / (i + 1) as f64;
    }
    sum / fact
}

impl CompiledIntegral<'_, '_> {
    fn tabulate(&self, j: usize, f: &dyn Fn(f64) -> f64) -> Result<Table> {
        let plan = &self.plans[j];
        let n = self.nodes.len();
        let k = plan.vars.len();
        let size = checked_pow(n, k)
            .filter(|s| *s <= self.source.budget)
            .ok_or_else(|| Error::Resource(format!("factor table over {k} variables exceeds the table budget")))?;
        let mut data = vec![0.0; size];
        let mut idx = vec![0usize; k];
        for slot in data.iter_mut() {
            let mut y = plan.constant;
            for (c, &i) in plan.coeffs.iter().zip(&idx) {
                y += c * self.nodes[i];
            }
            *slot = plan.points.iter().map(|&(z, w)| w * f(y + z)).sum();
            increment(&mut idx, n);
        }
        let mut t = Table {
            vars: plan.vars.clone(),
            data,
            log_scale: 0.0,
        };
        t.normalize();
        Ok(t)
    }

    /// Integral with all factors as given.
    pub fn contract(&self) -> Result<Scaled> {
        eliminate(
            self.tables.clone(),
            &self.var_weights,
            self.nodes.len(),
            self.source.budget,
        )
    }

    /// Integral with factor `j` replaced by `f`.
    pub fn contract_replacing(&self, j: usize, f: &dyn Fn(f64) -> f64) -> Result<Scaled> {
        let mut tables = self.tables.clone();
        tables[j] = self.tabulate(j, f)?;
        eliminate(tables, &self.var_weights, self.nodes.len(), self.source.budget)
    }

    /// Integral with factor `j` multiplied by `g`.
    pub fn contract_times(&self, j: usize, g: &dyn Fn(f64) -> f64) -> Result<Scaled> {
        let base = &*self.source.factors[j].f;
        self.contract_replacing(j, &|t| base(t) * g(t))
    }
}

fn checked_pow(n: usize, k: usize) -> Option<usize> {
    (0..k).try_fold(1usize, |acc, _| acc.checked_mul(n))
}

/// Odometer increment, last index fastest.
fn increment(idx: &mut [usize], n: usize) {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < n {
            return;
        }
        idx[d] = 0;
    }
}

/// Sums out every variable, greedily choosing the one whose elimination
/// touches the smallest joint table.
fn eliminate(mut tables: Vec<Table>, weights: &[Vec<f64>], n: usize, budget: usize) -> Result<Scaled> {
    let mut vars: BTreeSet<usize> = tables.iter().flat_map(|t| t.vars.iter().copied()).collect();
    while !vars.is_empty() {
        let mut best: Option<(usize, usize)> = None;
        for &v in &vars {
            let union: BTreeSet<usize> = tables
                .iter()
                .filter(|t| t.vars.contains(&v))
                .flat_map(|t| t.vars.iter().copied())
                .collect();
            if best.is_none_or(|(_, s)| union.len() < s) {
                best = Some((v, union.len()));
            }
        }
        let (v, width) = best.expect("non-empty variable set");
        if checked_pow(n, width).is_none_or(|s| s > budget) {
            return Err(Error::Resource(format!(
                "elimination needs a table over {width} variables, beyond the budget of {budget} entries"
            )));
        }
        let (touching, rest): (Vec<Table>, Vec<Table>) = tables.into_iter().partition(|t| t.vars.contains(&v));
        tables = rest;
        tables.push(sum_out(&touching, v, &weights[v], n));
        vars.remove(&v);
    }
    let mut mantissa = 1.0;
    let mut log_scale = 0.0;
    for t in &tables {
        mantissa *= t.data[0];
        log_scale += t.log_scale;
    }
    if mantissa == 0.0 {
        log_scale = 0.0;
    }
    Ok(Scaled { mantissa, log_scale })
}

fn sum_out(tables: &[Table], v: usize, w: &[f64], n: usize) -> Table {
    let out_vars: Vec<usize> = tables
        .iter()
        .flat_map(|t| t.vars.iter().copied())
        .filter(|&u| u != v)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let strides: Vec<(Vec<usize>, usize)> = tables
        .iter()
        .map(|t| {
            let k = t.vars.len();
            let stride_of = |u: usize| {
                t.vars
                    .iter()
                    .position(|&x| x == u)
                    .map_or(0, |p| checked_pow(n, k - 1 - p).unwrap())
            };
            (out_vars.iter().map(|&u| stride_of(u)).collect(), stride_of(v))
        })
        .collect();
    let size = checked_pow(n, out_vars.len()).unwrap();
    let mut data = vec![0.0; size];
    let mut idx = vec![0usize; out_vars.len()];
    let mut offsets = vec![0usize; tables.len()];
    for slot in data.iter_mut() {
        for (o, (s, _)) in offsets.iter_mut().zip(&strides) {
            *o = idx.iter().zip(s).map(|(i, st)| i * st).sum();
        }
        let mut acc = 0.0;
        for (k, wk) in w.iter().enumerate() {
            let mut prod = *wk;
            for (t, (o, (_, sv))) in tables.iter().zip(offsets.iter().zip(&strides)) {
                prod *= t.data[o + k * sv];
            }
            acc += prod;
        }
        *slot = acc;
        increment(&mut idx, n);
    }
    let mut t = Table {
        vars: out_vars,
        data,
        log_scale: tables.iter().map(|t| t.log_scale).sum(),
    };
    t.normalize();
    t
}

/// The conditional law of `θ` given `Q`: density `Π_p w_p(θ_p)` with
/// `w_p(x) = exp(Nβ_p Re(e^{ix/N} Tr Q_p))` against `Π_e dθ_e/2π`, with
/// optional pinned edges.
#[derive(Clone)]
pub struct ConditionalLaw<'g> {
    geom: &'g Geometry,
    n: usize,
    traces: Vec<C64>,
    betas: Vec<f64>,
    fixed: Vec<Option<f64>>,
    plaquettes: Vec<PlaquetteId>,
    nodes: usize,
    budget: usize,
}

impl<'g> ConditionalLaw<'g> {
    /// `traces[p] = Tr Q_p` for every positive plaquette.
    pub fn new(geom: &'g Geometry, n: usize, traces: Vec<C64>, coupling: &Coupling, nodes: usize) -> Result<Self> {
        if traces.len() != geom.num_plaquettes() {
            return Err(Error::SizeMismatch {
                left: geom.num_plaquettes(),
                right: traces.len(),
            });
        }
        Ok(Self {
            geom,
            n,
            traces,
            betas: geom.plaquettes().map(|p| coupling.beta(p)).collect(),
            fixed: vec![None; geom.num_edges()],
            plaquettes: geom.plaquettes().collect(),
            nodes,
            budget: DEFAULT_TABLE_BUDGET,
        })
    }

    /// Pins `θ_e` to a boundary value.
    pub fn fix_edge(&mut self, e: EdgeId, value: f64) {
        self.fixed[e.index()] = Some(value);
    }

    /// Restricts the product to a subset of plaquettes.
    pub fn restrict_to(&mut self, plaquettes: Vec<PlaquetteId>) {
        self.plaquettes = plaquettes;
    }

    pub fn set_budget(&mut self, budget: usize) {
        self.budget = budget;
    }

    pub fn geometry(&self) -> &Geometry {
        self.geom
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn fixed_value(&self, e: EdgeId) -> Option<f64> {
        self.fixed[e.index()]
    }

    pub fn plaquettes(&self) -> &[PlaquetteId] {
        &self.plaquettes
    }

    fn weight(&self, p: PlaquetteId) -> impl Fn(f64) -> f64 {
        let nf = self.n as f64;
        let scale = nf * self.betas[p.index()];
        let tr = self.traces[p.index()];
        move |x: f64| math::exp(scale * (math::cis(x / nf) * tr).re)
    }

    /// Builds the integral; returns it with the factor index of each
    /// plaquette in `self.plaquettes` order.
    pub fn integral(&self) -> Result<ThetaIntegral<'static>> {
        let mut ti = ThetaIntegral::new(self.geom.num_edges(), self.nodes)?;
        ti.set_budget(self.budget);
        for (i, v) in self.fixed.iter().enumerate() {
            if let Some(t) = v {
                ti.set_measure(EdgeId(i as u32), EdgeMeasure::Fixed(*t));
            }
        }
        for &p in &self.plaquettes {
            let terms = plaquette_terms(self.geom, p);
            ti.add_factor(terms, self.weight(p));
        }
        Ok(ti)
    }

    fn factor_index(&self, p: PlaquetteId) -> Result<usize> {
        self.plaquettes
            .iter()
            .position(|&q| q == p)
            .ok_or_else(|| Error::InvalidArgument(format!("plaquette {} is not part of the law", p.0)))
    }

    /// `log ∫ Π_p w_p Π_e dθ_e/2π`; over all plaquettes this is `S̃(Q)`.
    pub fn log_partition(&self) -> Result<f64> {
        Ok(self.integral()?.integrate()?.ln_abs())
    }

    /// `E[g(θ_p) | Q]`.
    pub fn plaquette_expectation(&self, p: PlaquetteId, g: &dyn Fn(f64) -> f64) -> Result<f64> {
        let ti = self.integral()?;
        let c = ti.compile()?;
        let z = c.contract()?;
        Ok(c.contract_times(self.factor_index(p)?, g)?.ratio(&z))
    }

    /// `E[e^{iθ_p/N} | Q]` for every plaquette of the law, in its order.
    pub fn phase_expectations(&self) -> Result<Vec<C64>> {
        let ti = self.integral()?;
        let c = ti.compile()?;
        let z = c.contract()?;
        let nf = self.n as f64;
        (0..self.plaquettes.len())
            .map(|j| {
                let re = c.contract_times(j, &|x| math::cos(x / nf))?.ratio(&z);
                let im = c.contract_times(j, &|x| math::sin(x / nf))?.ratio(&z);
                Ok(C64::new(re, im))
            })
            .collect()
    }

    /// `E[Π_j g_j(Σ c θ) | Q]` for additional factors.
    pub fn expectation(&self, extra: Vec<AngleFactor<'_>>) -> Result<f64> {
        let base = self.integral()?;
        let z = base.integrate()?;
        let mut ti = ThetaIntegral::new(self.geom.num_edges(), self.nodes)?;
        ti.measures = base.measures.clone();
        ti.budget = self.budget;
        ti.factors = base.factors;
        ti.factors.extend(extra);
        Ok(ti.integrate()?.ratio(&z))
    }
}

/// `(e, sgn(e, p))` for the four edges of a positive plaquette.
pub fn plaquette_terms(geom: &Geometry, p: PlaquetteId) -> Vec<(EdgeId, f64)> {
    geom.plaquette_edges(p)
        .iter()
        .map(|oe| (oe.edge, f64::from(oe.sign())))
        .collect()
}
