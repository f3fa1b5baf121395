//! One Markov chain of any configured kind, with proposal tuning during
//! burn-in, re-unitarization and a small worker pool for running many.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ymlattice_core::algebra::Group;
use ymlattice_core::lattice::{Geometry, PlaquetteId};
use ymlattice_core::model::{plaquette_trace, theta_p, AngleField, Coupling, DecomposedConfig, GaugeField};
use ymlattice_core::rng::{stream_rng, ChainRng};
use ymlattice_core::samplers::{
    langevin_step, metropolis_sweep_joint, metropolis_sweep_un, ChainState, DriftSource, LangevinParams, ScaleTuner,
    ScanOrder,
};
use ymlattice_core::stats::sokal_tau;
use ymlattice_core::C64;

use crate::config::{DriftKind, RunConfig, SamplerKind};
use crate::AppError;

/// Sweeps between proposal-scale adaptations during burn-in.
pub const TUNE_EVERY: u64 = 10;
/// Stream offset of the pilot chains that size an automatic burn-in.
pub const PILOT_STREAM: u64 = 1 << 40;
const PILOT_SWEEPS: u64 = 1000;
const MIN_AUTO_BURN_IN: u64 = 200;
const MAX_EPS_Q: f64 = 4.0;
const MAX_EPS_THETA: f64 = std::f64::consts::TAU;

/// Everything a chain needs besides geometry and couplings.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSettings {
    pub kind: SamplerKind,
    pub group: Group,
    pub n: usize,
    pub eps: f64,
    pub eps_theta: f64,
    pub h: f64,
    pub n_inner: usize,
    pub drift: DriftKind,
    pub nodes: usize,
    pub reunitarize_every: u64,
    pub burn_in: u64,
    /// Fault injection: never re-unitarize.
    pub skip_reunitarization: bool,
}

impl ChainSettings {
    /// Settings from a configuration with burn-in fixed to `burn_in`.
    pub fn from_config(cfg: &RunConfig, burn_in: u64) -> Self {
        let s = &cfg.sampler;
        Self {
            kind: s.kind,
            group: cfg.group(),
            n: cfg.model.n,
            eps: s.eps,
            eps_theta: s.eps_theta,
            h: s.h,
            n_inner: s.n_inner,
            drift: s.drift,
            nodes: s.nodes,
            reunitarize_every: s.reunitarize_every,
            burn_in,
            skip_reunitarization: false,
        }
    }
}

#[derive(Clone, Debug)]
pub enum ChainBody {
    Direct(ChainState<GaugeField>),
    Joint(ChainState<DecomposedConfig>),
    Langevin {
        state: ChainState<GaugeField>,
        drift: DriftSource,
    },
}

#[derive(Clone, Debug)]
pub struct Chain<'g> {
    pub geom: &'g Geometry,
    pub coupling: Coupling,
    pub settings: ChainSettings,
    pub body: ChainBody,
    pub tuner_q: ScaleTuner,
    pub tuner_theta: ScaleTuner,
}

impl<'g> Chain<'g> {
    /// A chain started from a Haar-random configuration drawn from `rng`.
    pub fn new(
        geom: &'g Geometry,
        coupling: Coupling,
        settings: ChainSettings,
        mut rng: ChainRng,
    ) -> Result<Self, AppError> {
        coupling.validate(geom)?;
        let n = settings.n;
        let body = match settings.kind {
            SamplerKind::Metropolis => ChainBody::Direct(ChainState::new(
                GaugeField::haar(geom, n, settings.group, &mut rng),
                rng,
            )),
            SamplerKind::Joint => {
                let theta = AngleField::uniform(geom, &mut rng);
                let q = GaugeField::haar(geom, n, Group::SU, &mut rng);
                ChainBody::Joint(ChainState::new(DecomposedConfig::new(theta, q)?, rng))
            }
            SamplerKind::Langevin => {
                let q = GaugeField::haar(geom, n, Group::SU, &mut rng);
                let drift = match settings.drift {
                    DriftKind::Zero => DriftSource::Zero,
                    DriftKind::Quadrature => DriftSource::Quadrature { nodes: settings.nodes },
                    DriftKind::Chain => DriftSource::Chain {
                        theta: AngleField::uniform(geom, &mut rng),
                        eps: settings.eps_theta,
                    },
                };
                ChainBody::Langevin {
                    state: ChainState::new(q, rng),
                    drift,
                }
            }
        };
        let tuner_q = ScaleTuner::new(settings.eps, MAX_EPS_Q);
        let tuner_theta = ScaleTuner::new(settings.eps_theta, MAX_EPS_THETA);
        let mut chain = Self {
            geom,
            coupling,
            settings,
            body,
            tuner_q,
            tuner_theta,
        };
        if chain.settings.burn_in == 0 {
            chain.freeze_tuners();
        }
        Ok(chain)
    }

    pub fn sweeps(&self) -> u64 {
        match &self.body {
            ChainBody::Direct(s) => s.sweeps,
            ChainBody::Joint(s) => s.sweeps,
            ChainBody::Langevin { state, .. } => state.sweeps,
        }
    }

    pub fn in_burn_in(&self) -> bool {
        self.sweeps() < self.settings.burn_in
    }

    fn freeze_tuners(&mut self) {
        self.tuner_q.freeze();
        self.tuner_theta.freeze();
    }

    /// One sweep (or one Langevin step), then tuning and re-unitarization.
    pub fn sweep(&mut self) -> Result<(), AppError> {
        let geom = self.geom;
        let st = &self.settings;
        match &mut self.body {
            ChainBody::Direct(state) => {
                let acc = metropolis_sweep_un(
                    geom,
                    &self.coupling,
                    st.group,
                    self.tuner_q.scale,
                    ScanOrder::Lexicographic,
                    state,
                )?;
                self.tuner_q.observe(acc, geom.num_edges() as u64);
                if !st.skip_reunitarization && state.sweeps % st.reunitarize_every == 0 {
                    state.config.reunitarize(st.group)?;
                }
            }
            ChainBody::Joint(state) => {
                let (aq, at) = metropolis_sweep_joint(
                    geom,
                    &self.coupling,
                    self.tuner_q.scale,
                    self.tuner_theta.scale,
                    ScanOrder::Lexicographic,
                    state,
                )?;
                let m = geom.num_edges() as u64;
                self.tuner_q.observe(aq, m);
                self.tuner_theta.observe(at, m);
                if !st.skip_reunitarization && state.sweeps % st.reunitarize_every == 0 {
                    state.config.q.reunitarize(Group::SU)?;
                }
            }
            ChainBody::Langevin { state, drift } => {
                let params = LangevinParams {
                    h: st.h,
                    n_inner: st.n_inner,
                    reunitarize_every: if st.skip_reunitarization {
                        u64::MAX
                    } else {
                        st.reunitarize_every
                    },
                    total_time: 0.0,
                };
                langevin_step(geom, &self.coupling, &params, drift, state)?;
            }
        }
        let sweeps = self.sweeps();
        if sweeps <= self.settings.burn_in {
            if sweeps.is_multiple_of(TUNE_EVERY) {
                self.tuner_q.adapt();
                self.tuner_theta.adapt();
            }
            if sweeps == self.settings.burn_in {
                self.freeze_tuners();
            }
        }
        Ok(())
    }

    pub fn run(&mut self, sweeps: u64) -> Result<(), AppError> {
        for _ in 0..sweeps {
            self.sweep()?;
        }
        Ok(())
    }

    pub fn burn_in(&mut self) -> Result<(), AppError> {
        while self.in_burn_in() {
            self.sweep()?;
        }
        Ok(())
    }

    /// `tr` of the sampled plaquette variable: `U_p` for Metropolis chains,
    /// `Q_p` for Langevin (which samples the SU(N) marginal).
    pub fn plaquette_trace(&self, p: PlaquetteId) -> C64 {
        let geom = self.geom;
        let n = self.settings.n as f64;
        match &self.body {
            ChainBody::Direct(s) => plaquette_trace(geom, &s.config, p) / n,
            ChainBody::Joint(s) => {
                let tp = theta_p(
                    geom,
                    &s.config.theta,
                    ymlattice_core::lattice::OrientedPlaquette::positive(p),
                );
                C64::from_polar(1.0, tp / n) * plaquette_trace(geom, &s.config.q, p) / n
            }
            ChainBody::Langevin { state, .. } => plaquette_trace(geom, &state.config, p) / n,
        }
    }

    /// `Re tr` of the sampled plaquette variables.
    pub fn plaquette_values(&self, ps: &[PlaquetteId]) -> Vec<f64> {
        ps.iter().map(|&p| self.plaquette_trace(p).re).collect()
    }

    /// `Re tr Q_p` of the SU(N) part (equal to `plaquette_values` for
    /// Langevin chains).
    pub fn q_plaquette_values(&self, ps: &[PlaquetteId]) -> Vec<f64> {
        let n = self.settings.n as f64;
        let q = self.su_part();
        ps.iter().map(|&p| plaquette_trace(self.geom, q, p).re / n).collect()
    }

    /// The link field for Metropolis and Langevin chains, `Q` for joint.
    pub fn su_part(&self) -> &GaugeField {
        match &self.body {
            ChainBody::Direct(s) => &s.config,
            ChainBody::Joint(s) => &s.config.q,
            ChainBody::Langevin { state, .. } => &state.config,
        }
    }

    pub fn max_defect(&self) -> f64 {
        match &self.body {
            ChainBody::Direct(s) => s.config.max_defect(self.settings.group),
            ChainBody::Joint(s) => s.config.q.max_defect(Group::SU),
            ChainBody::Langevin { state, .. } => state.config.max_defect(Group::SU),
        }
    }

    /// Cumulative acceptance rates `(Q, θ)`.
    pub fn acceptance(&self) -> (f64, f64) {
        match &self.body {
            ChainBody::Direct(s) => (s.acceptance_q.rate(), 0.0),
            ChainBody::Joint(s) => (s.acceptance_q.rate(), s.acceptance_theta.rate()),
            ChainBody::Langevin { .. } => (1.0, 0.0),
        }
    }

    pub fn field_mut(&mut self) -> &mut GaugeField {
        match &mut self.body {
            ChainBody::Direct(s) => &mut s.config,
            ChainBody::Joint(s) => &mut s.config.q,
            ChainBody::Langevin { state, .. } => &mut state.config,
        }
    }
}

/// Burn-in length: the configured one, or ten integrated autocorrelation
/// times of the mean plaquette measured on a pilot chain.
pub fn resolve_burn_in(cfg: &RunConfig, geom: &Geometry, coupling: &Coupling, stream: u64) -> Result<u64, AppError> {
    if let Some(b) = cfg.sampler.burn_in {
        return Ok(b);
    }
    let settings = ChainSettings::from_config(cfg, PILOT_SWEEPS / 2);
    let mut pilot = Chain::new(
        geom,
        coupling.clone(),
        settings,
        stream_rng(cfg.seed, PILOT_STREAM + stream),
    )?;
    pilot.burn_in()?;
    let ps: Vec<PlaquetteId> = geom.plaquettes().collect();
    let mut series = Vec::with_capacity((PILOT_SWEEPS / 2) as usize);
    for _ in 0..PILOT_SWEEPS / 2 {
        pilot.sweep()?;
        let v = pilot.plaquette_values(&ps);
        series.push(v.iter().sum::<f64>() / v.len().max(1) as f64);
    }
    let tau = sokal_tau(&series).unwrap_or(1.0);
    Ok(((10.0 * tau).ceil() as u64).max(MIN_AUTO_BURN_IN))
}

/// Runs `tasks` independent jobs on at most `threads` workers; results come
/// back in task order regardless of scheduling.
pub fn run_pool<T, F>(threads: usize, tasks: usize, job: F) -> Result<Vec<T>, AppError>
where
    T: Send,
    F: Fn(usize) -> Result<T, AppError> + Sync,
{
    if threads <= 1 || tasks <= 1 {
        return (0..tasks).map(&job).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T, AppError>>>> = Mutex::new((0..tasks).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.min(tasks) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= tasks {
                    break;
                }
                let r = job(i);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(kind: SamplerKind) -> ChainSettings {
        ChainSettings {
            kind,
            group: Group::U,
            n: 2,
            eps: 0.5,
            eps_theta: 1.5,
            h: 0.05,
            n_inner: 2,
            drift: DriftKind::Quadrature,
            nodes: 8,
            reunitarize_every: 10,
            burn_in: 50,
            skip_reunitarization: false,
        }
    }

    #[test]
    fn tuners_freeze_after_burn_in() {
        let g = Geometry::cube(2, 1).unwrap();
        let mut c = Chain::new(
            &g,
            Coupling::Uniform(0.1),
            settings(SamplerKind::Joint),
            stream_rng(1, 0),
        )
        .unwrap();
        c.burn_in().unwrap();
        assert!(c.tuner_q.is_frozen() && c.tuner_theta.is_frozen());
        let eps = c.tuner_q.scale;
        c.run(30).unwrap();
        assert_eq!(c.tuner_q.scale, eps);
        assert!(c.max_defect() < 1e-10);
    }

    #[test]
    fn pool_preserves_order() {
        let v = run_pool(4, 20, |i| Ok(i * i)).unwrap();
        assert_eq!(v, (0..20).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn langevin_chain_stays_in_su() {
        let g = Geometry::cube(2, 1).unwrap();
        let mut s = settings(SamplerKind::Langevin);
        s.group = Group::SU;
        let mut c = Chain::new(&g, Coupling::Uniform(0.05), s, stream_rng(2, 0)).unwrap();
        c.run(20).unwrap();
        assert!(c.max_defect() < 1e-10);
    }
}
