//! Markov chains: Metropolis for the U(N) measure and for the joint
//! `(θ, Q)` measure, the conditional θ chain at fixed `Q`, exact sampling
//! from `Π_e ν_e`, and the geometric Euler scheme for the Langevin dynamics
//! of the SU(N) marginal.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::algebra::{exp_map, gaussian_element, su_basis, CMatrix, Flavor, Group, LieAlgebraElement, Op};
use crate::lattice::{EdgeId, Geometry};
use crate::math::{self, TAU};
use crate::model::{
    grad_decomposed, nu_densities, plaquette_traces, rooted_staple, AngleField, Coupling, DecomposedConfig, GaugeField,
};
use crate::quadrature::ConditionalLaw;
use crate::rng::ChainRng;
use crate::stats::{batch_means, Welford};
use crate::{Error, Result, C64};

/// Accepted and proposed move counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AcceptanceStats {
    pub accepted: u64,
    pub proposed: u64,
}

impl AcceptanceStats {
    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.accepted += other.accepted;
        self.proposed += other.proposed;
    }
}

/// A configuration together with everything needed to continue its chain.
#[derive(Clone, Debug)]
pub struct ChainState<C> {
    pub config: C,
    pub sweeps: u64,
    pub rng: ChainRng,
    pub acceptance_q: AcceptanceStats,
    pub acceptance_theta: AcceptanceStats,
    /// Norms `|A_e|` of the Langevin drift.
    pub drift_norm: Welford,
}

impl<C> ChainState<C> {
    pub fn new(config: C, rng: ChainRng) -> Self {
        Self {
            config,
            sweeps: 0,
            rng,
            acceptance_q: AcceptanceStats::default(),
            acceptance_theta: AcceptanceStats::default(),
            drift_norm: Welford::new(),
        }
    }
}

/// Order in which a sweep visits edges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScanOrder {
    #[default]
    Lexicographic,
    Random,
}

fn edge_order<R: Rng + ?Sized>(geom: &Geometry, scan: ScanOrder, rng: &mut R) -> Vec<EdgeId> {
    let mut edges: Vec<EdgeId> = geom.edges().collect();
    if scan == ScanOrder::Random {
        edges.shuffle(rng);
    }
    edges
}

/// Proposal scale adapted towards 40–60% acceptance during burn-in and then
/// frozen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleTuner {
    pub scale: f64,
    pub max_scale: f64,
    window: AcceptanceStats,
    frozen: bool,
}

impl ScaleTuner {
    pub fn new(scale: f64, max_scale: f64) -> Self {
        Self {
            scale,
            max_scale,
            window: AcceptanceStats::default(),
            frozen: false,
        }
    }

    /// Rebuilds a tuner from its scale, cap, pending window and frozen flag.
    pub fn from_parts(scale: f64, max_scale: f64, window: AcceptanceStats, frozen: bool) -> Self {
        Self {
            scale,
            max_scale,
            window,
            frozen,
        }
    }

    /// Counts observed since the last adaptation.
    pub fn window(&self) -> AcceptanceStats {
        self.window
    }

    pub fn observe(&mut self, accepted: u64, proposed: u64) {
        self.window.accepted += accepted;
        self.window.proposed += proposed;
    }

    /// Rescales from the acceptance seen since the last call.
    pub fn adapt(&mut self) {
        if self.frozen || self.window.proposed == 0 {
            return;
        }
        let rate = self.window.rate();
        if rate < 0.4 {
            self.scale *= 0.8;
        } else if rate > 0.6 {
            self.scale = (self.scale * 1.25).min(self.max_scale);
        }
        self.window = AcceptanceStats::default();
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }
}

/// `Σ_p β_p · staple_p` over the plaquettes rooted at `e`, so the local
/// action is `N Re Tr(U_e A)`.
pub fn weighted_staple(geom: &Geometry, q: &GaugeField, coupling: &Coupling, e: EdgeId) -> CMatrix {
    let mut acc = CMatrix::zeros(q.n());
    for r in geom.rooted(e) {
        acc.axpy(C64::new(coupling.beta(r.plaquette), 0.0), &rooted_staple(q, r));
    }
    acc
}

#[inline]
fn accept<R: Rng + ?Sized>(delta_s: f64, rng: &mut R) -> bool {
    delta_s >= 0.0 || rng.random::<f64>() < math::exp(delta_s)
}

/// One Metropolis sweep for `exp(Σ_p Nβ_p Re Tr Q_p) Π dQ`: every edge is
/// proposed `Q_e ← exp(εξ) Q_e` with `ξ` standard Gaussian in the algebra of
/// `group`. Returns the number of accepted moves.
pub fn metropolis_sweep_un(
    geom: &Geometry,
    coupling: &Coupling,
    group: Group,
    eps: f64,
    scan: ScanOrder,
    state: &mut ChainState<GaugeField>,
) -> Result<u64> {
    let n = state.config.n();
    let nf = n as f64;
    let mut accepted = 0;
    let mut diff = CMatrix::zeros(n);
    for e in edge_order(geom, scan, &mut state.rng) {
        let a = weighted_staple(geom, &state.config, coupling, e);
        let xi = gaussian_element(n, group.flavor(), &mut state.rng);
        let proposal = &exp_map(&xi.scaled(eps))? * state.config.link(e);
        diff.as_mut_slice().copy_from_slice(proposal.as_slice());
        diff -= state.config.link(e);
        let ds = nf * CMatrix::trace_of_product(&diff, Op::N, &a, Op::N).re;
        let ok = accept(ds, &mut state.rng);
        if ok {
            state.config.set_link(e, proposal);
            accepted += 1;
        }
        state.acceptance_q.record(ok);
    }
    state.sweeps += 1;
    debug_assert!(state.config.max_defect(group) < 1e-8);
    Ok(accepted)
}

/// Rooted-plaquette data for the joint sampler: `β_r`, the staple and the
/// angle of the rooted plaquette without `θ_e`.
fn rooted_data(geom: &Geometry, cfg: &DecomposedConfig, coupling: &Coupling, e: EdgeId) -> Vec<(f64, CMatrix, f64)> {
    geom.rooted(e)
        .iter()
        .map(|r| {
            (
                coupling.beta(r.plaquette),
                rooted_staple(&cfg.q, r),
                cfg.theta.path_sum(&r.rest),
            )
        })
        .collect()
}

/// One Metropolis sweep for `exp(S_U(θ, Q)) dθ dQ`: at each edge an SU(N)
/// move for `Q_e` followed by a wrapped Gaussian move for `θ_e`. Returns the
/// accepted counts `(Q, θ)`.
pub fn metropolis_sweep_joint(
    geom: &Geometry,
    coupling: &Coupling,
    eps_q: f64,
    eps_theta: f64,
    scan: ScanOrder,
    state: &mut ChainState<DecomposedConfig>,
) -> Result<(u64, u64)> {
    let n = state.config.q.n();
    let nf = n as f64;
    let mut acc = (0, 0);
    let mut b = CMatrix::zeros(n);
    let mut diff = CMatrix::zeros(n);
    for e in edge_order(geom, scan, &mut state.rng) {
        let data = rooted_data(geom, &state.config, coupling, e);
        let theta_e = state.config.theta.get(e);

        // Q_e move against N Re Tr(Q_e B), B = Σ β_r e^{iθ_r/N} staple_r.
        for z in b.as_mut_slice() {
            *z = C64::new(0.0, 0.0);
        }
        for (beta, staple, rest) in &data {
            b.axpy(math::cis((theta_e + rest) / nf) * *beta, staple);
        }
        let xi = gaussian_element(n, Flavor::SU, &mut state.rng);
        let proposal = &exp_map(&xi.scaled(eps_q))? * state.config.q.link(e);
        diff.as_mut_slice().copy_from_slice(proposal.as_slice());
        diff -= state.config.q.link(e);
        let ds = nf * CMatrix::trace_of_product(&diff, Op::N, &b, Op::N).re;
        let ok = accept(ds, &mut state.rng);
        if ok {
            state.config.q.set_link(e, proposal);
            acc.0 += 1;
        }
        state.acceptance_q.record(ok);

        // θ_e move with Tr(Q_e staple_r) fixed.
        let traces: Vec<C64> = data
            .iter()
            .map(|(_, s, _)| CMatrix::trace_of_product(state.config.q.link(e), Op::N, s, Op::N))
            .collect();
        let g: f64 = state.rng.sample(StandardNormal);
        let new_theta = math::wrap_angle(theta_e + eps_theta * g);
        let ds: f64 = data
            .iter()
            .zip(&traces)
            .map(|((beta, _, rest), t)| {
                nf * beta * ((math::cis((new_theta + rest) / nf) - math::cis((theta_e + rest) / nf)) * t).re
            })
            .sum();
        let ok = accept(ds, &mut state.rng);
        if ok {
            state.config.theta.set(e, new_theta);
            acc.1 += 1;
        }
        state.acceptance_theta.record(ok);
    }
    state.sweeps += 1;
    debug_assert!(state.config.q.max_defect(Group::SU) < 1e-8);
    Ok(acc)
}

/// Precomputed pieces of the conditional law of `θ` at fixed `Q`.
#[derive(Clone, Debug)]
pub struct ThetaConditional {
    n: usize,
    traces: Vec<C64>,
    betas: Vec<f64>,
}

impl ThetaConditional {
    pub fn new(geom: &Geometry, q: &GaugeField, coupling: &Coupling) -> Self {
        Self {
            n: q.n(),
            traces: plaquette_traces(geom, q),
            betas: geom.plaquettes().map(|p| coupling.beta(p)).collect(),
        }
    }

    pub fn traces(&self) -> &[C64] {
        &self.traces
    }
}

/// One per-edge Metropolis sweep for `μ(θ | Q)` with wrapped Gaussian
/// proposals of width `eps`. Returns the number of accepted moves.
pub fn conditional_theta_sweep<R: Rng + ?Sized>(
    geom: &Geometry,
    law: &ThetaConditional,
    eps: f64,
    theta: &mut AngleField,
    rng: &mut R,
) -> u64 {
    let nf = law.n as f64;
    let mut accepted = 0;
    for e in geom.edges() {
        let old = theta.get(e);
        let g: f64 = rng.sample(StandardNormal);
        let new = math::wrap_angle(old + eps * g);
        let ds: f64 = geom
            .incident_signs(e)
            .map(|(p, s)| {
                let tp = theta.path_sum(&geom.plaquette_edges(p));
                let shifted = tp + f64::from(s) * (new - old);
                nf * law.betas[p.index()] * ((math::cis(shifted / nf) - math::cis(tp / nf)) * law.traces[p.index()]).re
            })
            .sum();
        if accept(ds, rng) {
            theta.set(e, new);
            accepted += 1;
        }
    }
    accepted
}

/// Independent draws `θ_e ~ ν_e` by inverse CDF.
pub fn nu_product_sample<R: Rng + ?Sized>(
    geom: &Geometry,
    q: &GaugeField,
    coupling: &Coupling,
    rng: &mut R,
) -> AngleField {
    let values = nu_densities(geom, q, coupling)
        .iter()
        .map(|nu| nu.sample(rng))
        .collect();
    AngleField::from_values(values)
}

/// Step size, inner θ sweeps, re-unitarization cadence and total time of a
/// Langevin run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LangevinParams {
    pub h: f64,
    pub n_inner: usize,
    pub reunitarize_every: u64,
    pub total_time: f64,
}

impl LangevinParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h <= 0.1) {
            return Err(Error::InvalidArgument("Langevin step must lie in (0, 0.1]".into()));
        }
        if self.reunitarize_every == 0 {
            return Err(Error::InvalidArgument(
                "re-unitarization cadence must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        math::ceil(self.total_time / self.h) as u64
    }
}

/// Source of the marginal drift `∇S̃`.
#[derive(Clone, Debug)]
pub enum DriftSource {
    /// No drift; exact only at `β = 0`.
    Zero,
    /// Exact conditional phases from quadrature with this many nodes.
    Quadrature { nodes: usize },
    /// Phases averaged along a persistent, warm-started conditional θ chain.
    Chain { theta: AngleField, eps: f64 },
}

/// `E[e^{iθ_p/N} | Q]` per plaquette from the drift source.
fn conditional_phases<R: Rng + ?Sized>(
    geom: &Geometry,
    q: &GaugeField,
    coupling: &Coupling,
    source: &mut DriftSource,
    n_inner: usize,
    rng: &mut R,
) -> Result<Option<Vec<C64>>> {
    match source {
        DriftSource::Zero => Ok(None),
        DriftSource::Quadrature { nodes } => {
            let law = ConditionalLaw::new(geom, q.n(), plaquette_traces(geom, q), coupling, *nodes)?;
            Ok(Some(law.phase_expectations()?))
        }
        DriftSource::Chain { theta, eps } => {
            let law = ThetaConditional::new(geom, q, coupling);
            let nf = q.n() as f64;
            let mut acc = vec![C64::new(0.0, 0.0); geom.num_plaquettes()];
            let sweeps = n_inner.max(1);
            for _ in 0..sweeps {
                conditional_theta_sweep(geom, &law, *eps, theta, rng);
                for p in geom.plaquettes() {
                    acc[p.index()] += math::cis(theta.path_sum(&geom.plaquette_edges(p)) / nf);
                }
            }
            Ok(Some(acc.into_iter().map(|z| z / sweeps as f64).collect()))
        }
    }
}

/// One step of `Q_e ← exp(h A_e + √(2h) ξ_e) Q_e` for all edges at once,
/// where `A_e Q_e = ∇_e S̃(Q)` and `ξ_e = Σ_α g_α v_α` over the su(N) basis.
/// The Itô correction `c_{su(N)}/2` is produced by the exponential map.
pub fn langevin_step(
    geom: &Geometry,
    coupling: &Coupling,
    params: &LangevinParams,
    source: &mut DriftSource,
    state: &mut ChainState<GaugeField>,
) -> Result<()> {
    let n = state.config.n();
    let phases = conditional_phases(geom, &state.config, coupling, source, params.n_inner, &mut state.rng)?;
    let drifts: Vec<Option<LieAlgebraElement>> = geom
        .edges()
        .map(|e| {
            phases
                .as_ref()
                .map(|ph| grad_decomposed(geom, &state.config, coupling, ph, e))
        })
        .collect();
    let noise_scale = math::sqrt(2.0 * params.h);
    for (e, drift) in geom.edges().zip(drifts) {
        let xi = gaussian_element(n, Flavor::SU, &mut state.rng);
        let mut x = xi.into_matrix().scale_real(noise_scale);
        if let Some(a) = drift {
            state.drift_norm.push(a.norm());
            x.axpy(C64::new(params.h, 0.0), a.matrix());
        }
        let step = exp_map(&LieAlgebraElement::new_unchecked(x, Flavor::SU))?;
        let updated = &step * state.config.link(e);
        state.config.set_link(e, updated);
    }
    state.sweeps += 1;
    if state.sweeps.is_multiple_of(params.reunitarize_every) {
        state.config.reunitarize(Group::SU)?;
    }
    Ok(())
}

/// Monte Carlo estimate of the right-trivialized marginal gradient at one
/// edge with a batch-means error bar on its su(N) coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalGradient {
    pub mean: LieAlgebraElement,
    /// `sqrt(Σ_α stderr_α²)`, the error of `mean` in Hilbert–Schmidt norm.
    pub std_error: f64,
    pub coordinate_errors: Vec<f64>,
    pub samples: usize,
}

/// Averages `N Σ_p β_p proj(e^{−iθ_p/N} Q_p^*)` over `n_inner` sweeps of a
/// warm-started conditional θ chain.
#[allow(clippy::too_many_arguments)]
pub fn grad_marginal<R: Rng + ?Sized>(
    geom: &Geometry,
    q: &GaugeField,
    coupling: &Coupling,
    e: EdgeId,
    theta: &mut AngleField,
    eps: f64,
    n_inner: usize,
    rng: &mut R,
) -> Result<MarginalGradient> {
    let n = q.n();
    let basis = su_basis(n)?;
    let law = ThetaConditional::new(geom, q, coupling);
    let nf = n as f64;
    let mut coords: Vec<Vec<f64>> = vec![Vec::with_capacity(n_inner); basis.len()];
    let touching = geom.plaquettes_containing(e);
    let mut phases = vec![C64::new(1.0, 0.0); geom.num_plaquettes()];
    for _ in 0..n_inner.max(2) {
        conditional_theta_sweep(geom, &law, eps, theta, rng);
        for &p in &touching {
            phases[p.index()] = math::cis(theta.path_sum(&geom.plaquette_edges(p)) / nf);
        }
        let g = grad_decomposed(geom, q, coupling, &phases, e);
        for (c, v) in coords.iter_mut().zip(basis.coordinates(g.matrix())?) {
            c.push(v);
        }
    }
    let samples = coords[0].len();
    let batches = samples.clamp(2, 8);
    let mut means = Vec::with_capacity(basis.len());
    let mut errors = Vec::with_capacity(basis.len());
    for c in &coords {
        let est = batch_means(c, batches)?;
        means.push(est.mean);
        errors.push(est.std_error);
    }
    Ok(MarginalGradient {
        mean: basis.combine(&means),
        std_error: math::sqrt(errors.iter().map(|x| x * x).sum()),
        coordinate_errors: errors,
        samples,
    })
}

/// Exact marginal gradient from quadrature phases.
pub fn grad_marginal_quadrature(
    geom: &Geometry,
    q: &GaugeField,
    coupling: &Coupling,
    e: EdgeId,
    nodes: usize,
) -> Result<LieAlgebraElement> {
    let law = ConditionalLaw::new(geom, q.n(), plaquette_traces(geom, q), coupling, nodes)?;
    let phases = law.phase_expectations()?;
    Ok(grad_decomposed(geom, q, coupling, &phases, e))
}

/// A θ-proposal width that gives moderate acceptance at small β.
pub const DEFAULT_THETA_SCALE: f64 = TAU / 4.0;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{plaquette_trace, DecomposedConfig};
    use crate::rng::stream_rng;
    use crate::stats::{estimate_mean, ks_test};

    #[test]
    fn flat_target_accepts_everything() {
        let g = Geometry::cube(2, 1).unwrap();
        let mut st = ChainState::new(GaugeField::identity(&g, 2), stream_rng(1, 0));
        for _ in 0..10 {
            let acc = metropolis_sweep_un(
                &g,
                &Coupling::Uniform(0.0),
                Group::U,
                0.7,
                ScanOrder::Lexicographic,
                &mut st,
            )
            .unwrap();
            assert_eq!(acc, g.num_edges() as u64);
        }
        assert_eq!(st.acceptance_q.rate(), 1.0);
    }

    #[test]
    fn joint_sampler_at_zero_beta_has_uniform_angles() {
        let g = Geometry::cube(2, 1).unwrap();
        let cfg = DecomposedConfig::new(AngleField::zeros(&g), GaugeField::identity(&g, 2)).unwrap();
        let mut st = ChainState::new(cfg, stream_rng(2, 0));
        let mut samples = Vec::new();
        for s in 0..3000 {
            metropolis_sweep_joint(&g, &Coupling::Uniform(0.0), 0.5, 3.0, ScanOrder::Lexicographic, &mut st).unwrap();
            if s >= 100 && s % 5 == 0 {
                samples.push(st.config.theta.get(EdgeId(3)));
            }
        }
        let (_, p) = ks_test(&samples, |x| (x / TAU).clamp(0.0, 1.0));
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn reproducible_with_same_seed() {
        let g = Geometry::cube(2, 1).unwrap();
        let run = || {
            let mut st = ChainState::new(GaugeField::identity(&g, 2), stream_rng(9, 4));
            for _ in 0..20 {
                metropolis_sweep_un(
                    &g,
                    &Coupling::Uniform(0.3),
                    Group::U,
                    0.5,
                    ScanOrder::Lexicographic,
                    &mut st,
                )
                .unwrap();
            }
            st.config
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn langevin_zero_drift_step_from_identity_is_pure_noise() {
        let g = Geometry::cube(2, 1).unwrap();
        let params = LangevinParams {
            h: 0.01,
            n_inner: 1,
            reunitarize_every: 1000,
            total_time: 0.01,
        };
        let mut st = ChainState::new(GaugeField::identity(&g, 2), stream_rng(5, 0));
        langevin_step(&g, &Coupling::Uniform(0.0), &params, &mut DriftSource::Zero, &mut st).unwrap();
        let mut rng = stream_rng(5, 0);
        for e in g.edges() {
            let xi = gaussian_element(2, Flavor::SU, &mut rng);
            let want = exp_map(&xi.scaled(libm::sqrt(0.02))).unwrap();
            assert!(st.config.link(e).max_abs_diff(&want) < 1e-14);
        }
    }

    #[test]
    fn conditional_chain_starts_agree() {
        let g = Geometry::new_box(&[2, 2]).unwrap();
        let mut rng = stream_rng(3, 0);
        let q = GaugeField::haar(&g, 2, Group::SU, &mut rng);
        let cpl = Coupling::Uniform(0.8);
        let law = ThetaConditional::new(&g, &q, &cpl);
        let p = crate::lattice::PlaquetteId(0);
        let run = |start: f64, rng: &mut ChainRng| {
            let mut th = AngleField::constant(&g, start);
            let mut xs = Vec::new();
            for s in 0..40_000 {
                conditional_theta_sweep(&g, &law, 2.0, &mut th, rng);
                if s >= 500 {
                    xs.push(libm::cos(th.path_sum(&g.plaquette_edges(p)) / 2.0));
                }
            }
            estimate_mean(&xs).unwrap()
        };
        let a = run(0.0, &mut rng);
        let b = run(core::f64::consts::PI, &mut rng);
        assert!(a.z_score(&b).abs() < 4.0, "{a:?} {b:?}");
        let exact = ConditionalLaw::new(&g, 2, law.traces().to_vec(), &cpl, 24)
            .unwrap()
            .plaquette_expectation(p, &|x| libm::cos(x / 2.0))
            .unwrap();
        assert!(a.consistent_with(exact, 4.0), "{a:?} vs {exact}");
        let _ = plaquette_trace(&g, &q, p);
    }
}
