//! The named experiments. Each takes a validated [`RunConfig`], returns a
//! typed report and can write it to an [`OutputDir`].
//!
//! Chains for a parameter point use streams `point · STREAMS_PER_POINT + c`
//! for `c < threads`; per-chain estimates are merged by inverse variance in
//! chain order, so a run is reproducible for a fixed thread count.

use std::path::Path;

use serde::Serialize;
use ymlattice_core::algebra::Group;
use ymlattice_core::cluster_expansion::{
    brute_force_conditional, conditional_expectation, ConstantsMode, ExpansionSetup, LocalObservable,
};
use ymlattice_core::lattice::{EdgeId, Geometry, Loop, PlaquetteId};
use ymlattice_core::model::{k_tilde, plaquette_traces, Coupling, GaugeField, RegimeConstants};
use ymlattice_core::quadrature::ConditionalLaw;
use ymlattice_core::rng::stream_rng;
use ymlattice_core::stats::{
    auto_batch_size, covariance_estimate, estimate_mean, fit_decay, jackknife, linear_fit, DecayOutcome, DecayPoint,
    EstimateWithError, Welford, MIN_BATCHES,
};

use crate::chain::{resolve_burn_in, run_pool, Chain, ChainSettings};
use crate::checkpoint::{self, Checkpoint};
use crate::config::{ExperimentName, RunConfig};
use crate::output::{Manifest, OutputDir, RESULTS_FILE};
use crate::AppError;

pub const STREAMS_PER_POINT: u64 = 1 << 20;
/// Points with `|estimate| < NOISE_FLOOR_SIGMAS · σ` are below the noise
/// floor.
pub const NOISE_FLOOR_SIGMAS: f64 = 2.0;
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ymlc";

/// Serializable form of an [`EstimateWithError`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub batches: usize,
    pub samples: usize,
}

impl From<EstimateWithError> for Estimate {
    fn from(e: EstimateWithError) -> Self {
        Self {
            mean: e.mean,
            std_error: e.std_error,
            batches: e.batches,
            samples: e.samples,
        }
    }
}

impl From<Estimate> for EstimateWithError {
    fn from(e: Estimate) -> Self {
        Self {
            mean: e.mean,
            std_error: e.std_error,
            batches: e.batches,
            samples: e.samples,
        }
    }
}

fn merge(estimates: &[EstimateWithError]) -> EstimateWithError {
    if estimates.len() == 1 {
        estimates[0]
    } else {
        EstimateWithError::combine(estimates)
    }
}

/// `samples · naive variance / σ²`: the number of independent samples the
/// error bar is worth.
fn n_eff(series: &[f64], est: &EstimateWithError) -> f64 {
    let v = Welford::from_slice(series).variance();
    if est.std_error > 0.0 {
        v / (est.std_error * est.std_error)
    } else {
        series.len() as f64
    }
}

fn stream(point: usize, chain: usize) -> u64 {
    point as u64 * STREAMS_PER_POINT + chain as u64
}

fn tasks(points: usize, threads: usize) -> Vec<(usize, usize)> {
    (0..points).flat_map(|p| (0..threads).map(move |c| (p, c))).collect()
}

/// Per-plaquette measurement series of one chain after burn-in.
pub struct ChainSeries {
    /// `series[j][t]` is `Re tr` of plaquette `j` at measurement `t`.
    pub series: Vec<Vec<f64>>,
    pub acceptance: (f64, f64),
    pub burn_in: u64,
    pub final_eps: f64,
}

/// Burns in a chain on `stream` and records `Re tr` of the listed
/// plaquettes every `measure_every` sweeps.
pub fn sample_plaquettes(
    cfg: &RunConfig,
    geom: &Geometry,
    coupling: &Coupling,
    stream: u64,
    plaquettes: &[PlaquetteId],
) -> Result<ChainSeries, AppError> {
    let burn_in = resolve_burn_in(cfg, geom, coupling, stream)?;
    let settings = ChainSettings::from_config(cfg, burn_in);
    let mut chain = Chain::new(geom, coupling.clone(), settings, stream_rng(cfg.seed, stream))?;
    chain.burn_in()?;
    let every = cfg.sampler.measure_every;
    let count = (cfg.sampler.sweeps / every) as usize;
    let mut series = vec![Vec::with_capacity(count); plaquettes.len()];
    for _ in 0..count {
        chain.run(every)?;
        for (s, v) in series.iter_mut().zip(chain.plaquette_values(plaquettes)) {
            s.push(v);
        }
    }
    Ok(ChainSeries {
        series,
        acceptance: chain.acceptance(),
        burn_in,
        final_eps: chain.tuner_q.scale,
    })
}

fn central_coords(geom: &Geometry) -> Vec<i64> {
    geom.origin()
        .iter()
        .zip(geom.extents())
        .map(|(o, x)| o + (*x as i64 - 1) / 2)
        .collect()
}

/// The positive `(0, 1)` plaquette nearest the center of the box.
pub fn central_plaquette(geom: &Geometry) -> Result<PlaquetteId, AppError> {
    let mut c = central_coords(geom);
    for (a, x) in c.iter_mut().enumerate().take(2) {
        let top = geom.origin()[a] + geom.extents()[a] as i64 - 2;
        *x = (*x).min(top);
    }
    geom.plaquette_at(&c, 0, 1)
        .ok_or_else(|| AppError::Config("geometry: no central plaquette".into()))
}

// ---------------------------------------------------------------- massgap

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassGapRow {
    pub distance: usize,
    pub plaquette_f: usize,
    pub plaquette_g: usize,
    pub covariance: f64,
    pub std_error: f64,
    pub n_eff: f64,
    pub below_noise_floor: bool,
}

/// Serializable outcome of a decay fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayReport {
    pub outcome: String,
    pub slope: Option<f64>,
    pub slope_ci: Option<f64>,
    pub rate: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
    pub distances_used: Vec<f64>,
    pub excluded: usize,
    pub above_floor: usize,
    pub points: Vec<(f64, f64, f64)>,
}

impl DecayReport {
    pub fn from_outcome(o: &DecayOutcome) -> Self {
        match o {
            DecayOutcome::Fit(f) => Self {
                outcome: "fit".into(),
                slope: Some(f.slope),
                slope_ci: Some(f.slope_ci),
                rate: Some(f.rate()),
                intercept: Some(f.intercept),
                r2: Some(f.r2),
                distances_used: f.distances_used.clone(),
                excluded: f.excluded,
                above_floor: f.points.len() - f.excluded,
                points: f.points.iter().map(|p| (p.distance, p.value, p.error)).collect(),
            },
            DecayOutcome::BelowNoiseFloor { points, above_floor } => Self {
                outcome: "below_noise_floor".into(),
                slope: None,
                slope_ci: None,
                rate: None,
                intercept: None,
                r2: None,
                distances_used: vec![],
                excluded: points.len() - above_floor,
                above_floor: *above_floor,
                points: points.iter().map(|p| (p.distance, p.value, p.error)).collect(),
            },
        }
    }

    pub fn is_fit(&self) -> bool {
        self.outcome == "fit"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassGapReport {
    pub rows: Vec<MassGapRow>,
    pub fit: DecayReport,
}

/// Plaquette pairs in the `(0, 1)` plane along axis 0: the first sits at
/// the low end of the box, the second `r + 1` sites further, so their edge
/// supports are `r` apart.
pub fn mass_gap_pairs(
    geom: &Geometry,
    distances: &[usize],
) -> Result<Vec<(usize, PlaquetteId, PlaquetteId)>, AppError> {
    let mut base = central_coords(geom);
    base[0] = geom.origin()[0];
    let p0 = geom
        .plaquette_at(&base, 0, 1)
        .ok_or_else(|| AppError::Config("geometry: box too small for a plaquette".into()))?;
    let s0 = Loop::plaquette(geom, p0).support();
    distances
        .iter()
        .map(|&r| {
            let mut c = base.clone();
            c[0] += r as i64 + 1;
            let p = geom.plaquette_at(&c, 0, 1).ok_or_else(|| {
                AppError::Config(format!(
                    "experiment.distances: distance {r} does not fit in the lattice"
                ))
            })?;
            let d = geom.graph_distance(&s0, &Loop::plaquette(geom, p).support())?;
            debug_assert_eq!(d, r);
            Ok((d, p0, p))
        })
        .collect()
}

pub fn mass_gap_scan(cfg: &RunConfig) -> Result<MassGapReport, AppError> {
    let geom = cfg.geometry()?;
    let coupling = cfg.coupling(&geom);
    let distances = cfg.experiment.distances.clone().unwrap_or_default();
    let pairs = mass_gap_pairs(&geom, &distances)?;
    let mut ps: Vec<PlaquetteId> = vec![pairs[0].1];
    ps.extend(pairs.iter().map(|x| x.2));
    let chains = run_pool(cfg.threads, cfg.threads, |c| {
        sample_plaquettes(cfg, &geom, &coupling, stream(0, c), &ps)
    })?;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (j, &(d, p0, p)) in pairs.iter().enumerate() {
        let mut ests = Vec::new();
        let mut neff = 0.0;
        for ch in &chains {
            let (f, g) = (&ch.series[0], &ch.series[j + 1]);
            let e = covariance_estimate(f, g)?;
            let prod: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
            neff += n_eff(&prod, &e);
            ests.push(e);
        }
        let e = merge(&ests);
        rows.push(MassGapRow {
            distance: d,
            plaquette_f: p0.index(),
            plaquette_g: p.index(),
            covariance: e.mean,
            std_error: e.std_error,
            n_eff: neff,
            below_noise_floor: e.mean.abs() < NOISE_FLOOR_SIGMAS * e.std_error || e.mean == 0.0,
        });
        points.push(DecayPoint {
            distance: d as f64,
            value: e.mean,
            error: e.std_error,
        });
    }
    let fit = DecayReport::from_outcome(&fit_decay(&points, NOISE_FLOOR_SIGMAS)?);
    Ok(MassGapReport { rows, fit })
}

// ----------------------------------------------------------------- volume

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeRow {
    pub l: usize,
    pub mean: f64,
    pub std_error: f64,
    pub n_eff: f64,
    /// `⟨f⟩_L − ⟨f⟩_{L_prev}`, absent for the first size.
    pub difference: Option<f64>,
    pub difference_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VolumeReport {
    pub rows: Vec<VolumeRow>,
    /// `|Δ_{k+1}| ≤ |Δ_k| + σ(Δ_k) + σ(Δ_{k+1})` for every k.
    pub differences_non_increasing: bool,
    /// Last difference within 3σ of zero.
    pub last_consistent_with_zero: bool,
}

/// `⟨Re tr U_p⟩` for the central plaquette on cubes of each half-width.
pub fn volume_sensitivity_scan(cfg: &RunConfig) -> Result<VolumeReport, AppError> {
    let ls = cfg.experiment.l_values.clone().unwrap_or_default();
    let geoms: Vec<Geometry> = ls
        .iter()
        .map(|&l| Geometry::cube(cfg.geometry.dim, l).map_err(AppError::from))
        .collect::<Result<_, _>>()?;
    let work = tasks(ls.len(), cfg.threads);
    let results = run_pool(cfg.threads, work.len(), |i| {
        let (pt, c) = work[i];
        let g = &geoms[pt];
        let p = central_plaquette(g)?;
        let ch = sample_plaquettes(cfg, g, &Coupling::Uniform(cfg.model.beta), stream(pt, c), &[p])?;
        let s = &ch.series[0];
        let e = estimate_mean(s)?;
        Ok((e, n_eff(s, &e)))
    })?;
    let mut rows: Vec<VolumeRow> = Vec::new();
    for (pt, &l) in ls.iter().enumerate() {
        let chunk = &results[pt * cfg.threads..(pt + 1) * cfg.threads];
        let e = merge(&chunk.iter().map(|x| x.0).collect::<Vec<_>>());
        let neff = chunk.iter().map(|x| x.1).sum();
        let (difference, difference_error) = match rows.last() {
            Some(prev) => {
                let d = e.difference(&EstimateWithError {
                    mean: prev.mean,
                    std_error: prev.std_error,
                    batches: 0,
                    samples: 0,
                });
                (Some(d.mean), Some(d.std_error))
            }
            None => (None, None),
        };
        rows.push(VolumeRow {
            l,
            mean: e.mean,
            std_error: e.std_error,
            n_eff: neff,
            difference,
            difference_error,
        });
    }
    let diffs: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.difference?, r.difference_error?)))
        .collect();
    let differences_non_increasing = diffs.windows(2).all(|w| w[1].0.abs() <= w[0].0.abs() + w[0].1 + w[1].1);
    let last_consistent_with_zero = diffs.last().is_none_or(|d| d.0.abs() <= 3.0 * d.1);
    Ok(VolumeReport {
        rows,
        differences_non_increasing,
        last_consistent_with_zero,
    })
}

// ----------------------------------------------------------------- large N

fn with_n(cfg: &RunConfig, n: usize) -> RunConfig {
    let mut c = cfg.clone();
    c.model.n = n;
    c
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LargeNRow {
    pub n: usize,
    pub variance: f64,
    pub std_error: f64,
    pub n_eff: f64,
    /// `16 / (N K_S̃)`, meaningful only where `K_S̃ > 0`.
    pub bound: f64,
    pub acceptance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LargeNReport {
    pub rows: Vec<LargeNRow>,
    pub loglog_slope: f64,
    pub loglog_slope_se: f64,
    /// `Var_{k+1} < Var_k` by more than the combined error for every k.
    pub strictly_decreasing: bool,
}

/// Variance of `Re W` for one plaquette loop at each N.
pub fn large_n_sweep(cfg: &RunConfig) -> Result<LargeNReport, AppError> {
    let geom = cfg.geometry()?;
    let ns = cfg.experiment.n_values.clone().unwrap_or_default();
    let p = match cfg.experiment.loops.as_deref() {
        Some([first, ..]) => PlaquetteId(*first as u32),
        _ => central_plaquette(&geom)?,
    };
    let coupling = cfg.coupling(&geom);
    let work = tasks(ns.len(), cfg.threads);
    let results = run_pool(cfg.threads, work.len(), |i| {
        let (pt, c) = work[i];
        let cn = with_n(cfg, ns[pt]);
        let ch = sample_plaquettes(&cn, &geom, &coupling, stream(pt, c), &[p])?;
        let s = &ch.series[0];
        let e = covariance_estimate(s, s)?;
        let m = Welford::from_slice(s).mean();
        let sq: Vec<f64> = s.iter().map(|x| (x - m) * (x - m)).collect();
        Ok((e, n_eff(&sq, &e), ch.acceptance.0))
    })?;
    let mut rows = Vec::new();
    for (pt, &n) in ns.iter().enumerate() {
        let chunk = &results[pt * cfg.threads..(pt + 1) * cfg.threads];
        let e = merge(&chunk.iter().map(|x| x.0).collect::<Vec<_>>());
        rows.push(LargeNRow {
            n,
            variance: e.mean,
            std_error: e.std_error,
            n_eff: chunk.iter().map(|x| x.1).sum(),
            bound: 16.0 / (n as f64 * k_tilde(n, cfg.model.beta, cfg.model.c_d_star)),
            acceptance: chunk.iter().map(|x| x.2).sum::<f64>() / chunk.len() as f64,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.variance.max(f64::MIN_POSITIVE).ln()).collect();
    let w: Vec<f64> = rows
        .iter()
        .map(|r| {
            let rel = r.std_error / r.variance.abs().max(f64::MIN_POSITIVE);
            1.0 / (rel * rel).max(1e-300)
        })
        .collect();
    let fit = linear_fit(&x, &y, Some(&w))?;
    let strictly_decreasing = rows.windows(2).all(|w| {
        let s = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        w[0].variance - w[1].variance > s
    });
    Ok(LargeNReport {
        rows,
        loglog_slope: fit.slope,
        loglog_slope_se: fit.slope_se,
        strictly_decreasing,
    })
}

// ----------------------------------------------------------- factorization

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FactorizationRow {
    pub n: usize,
    /// `|⟨Π W_i⟩ − Π ⟨W_i⟩|` over the configured loops (real parts).
    pub discrepancy: f64,
    pub std_error: f64,
    /// For three or more loops: `Var(W_1) + |⟨W_2⋯⟩ − ⟨W_2⟩⋯|`.
    pub variance_bound: Option<f64>,
    /// For three or more loops: `sd(W_1) + |⟨W_2⋯⟩ − ⟨W_2⟩⋯|`, the form that
    /// follows from Cauchy–Schwarz with `|W| ≤ 1`.
    pub sd_bound: Option<f64>,
    pub sd_bound_holds: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FactorizationReport {
    pub loops: Vec<usize>,
    pub rows: Vec<FactorizationRow>,
    /// `D_{k+1} ≤ D_k + σ_k + σ_{k+1}` for every k.
    pub decreasing_within_errors: bool,
}

fn product_discrepancy(s: &[Vec<f64>]) -> f64 {
    let len = s[0].len() as f64;
    let means: f64 = s.iter().map(|x| x.iter().sum::<f64>() / len).product();
    let prod: f64 = (0..s[0].len())
        .map(|t| s.iter().map(|x| x[t]).product::<f64>())
        .sum::<f64>()
        / len;
    prod - means
}

fn jackknife_discrepancy(series: &[&[f64]]) -> Result<EstimateWithError, AppError> {
    let prod: Vec<f64> = (0..series[0].len())
        .map(|t| series.iter().map(|x| x[t]).product())
        .collect();
    let size = series
        .iter()
        .map(|s| auto_batch_size(s))
        .chain([auto_batch_size(&prod)])
        .max()
        .unwrap_or(1);
    let batches = (prod.len() / size).max(MIN_BATCHES);
    Ok(jackknife(series, batches, product_discrepancy)?)
}

pub fn factorization_check(cfg: &RunConfig) -> Result<FactorizationReport, AppError> {
    let geom = cfg.geometry()?;
    let ns = cfg.experiment.n_values.clone().unwrap_or_default();
    let loops: Vec<PlaquetteId> = match &cfg.experiment.loops {
        Some(l) => l.iter().map(|&p| PlaquetteId(p as u32)).collect(),
        None => {
            let p = central_plaquette(&geom)?;
            vec![p, p]
        }
    };
    let coupling = cfg.coupling(&geom);
    let work = tasks(ns.len(), cfg.threads);
    let results = run_pool(cfg.threads, work.len(), |i| {
        let (pt, c) = work[i];
        let ch = sample_plaquettes(&with_n(cfg, ns[pt]), &geom, &coupling, stream(pt, c), &loops)?;
        let all: Vec<&[f64]> = ch.series.iter().map(|s| s.as_slice()).collect();
        let d = jackknife_discrepancy(&all)?;
        let bounds = if loops.len() >= 3 {
            let v = covariance_estimate(all[0], all[0])?;
            let rest = jackknife_discrepancy(&all[1..])?;
            Some((v, rest))
        } else {
            None
        };
        Ok((d, bounds))
    })?;
    let mut rows = Vec::new();
    for (pt, &n) in ns.iter().enumerate() {
        let chunk = &results[pt * cfg.threads..(pt + 1) * cfg.threads];
        let d = merge(&chunk.iter().map(|x| x.0).collect::<Vec<_>>());
        let (variance_bound, sd_bound, sd_bound_holds) = if chunk[0].1.is_some() {
            let v = merge(&chunk.iter().map(|x| x.1.expect("bounds present").0).collect::<Vec<_>>());
            let r = merge(&chunk.iter().map(|x| x.1.expect("bounds present").1).collect::<Vec<_>>());
            let sd = v.mean.max(0.0).sqrt() + r.mean.abs();
            let slack = 3.0 * (d.std_error + r.std_error + v.std_error);
            (Some(v.mean + r.mean.abs()), Some(sd), Some(d.mean.abs() <= sd + slack))
        } else {
            (None, None, None)
        };
        rows.push(FactorizationRow {
            n,
            discrepancy: d.mean.abs(),
            std_error: d.std_error,
            variance_bound,
            sd_bound,
            sd_bound_holds,
        });
    }
    let decreasing_within_errors = rows
        .windows(2)
        .all(|w| w[1].discrepancy <= w[0].discrepancy + w[0].std_error + w[1].std_error);
    Ok(FactorizationReport {
        loops: loops.iter().map(|p| p.index()).collect(),
        rows,
        decreasing_within_errors,
    })
}

// --------------------------------------------------------- beta derivative

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BetaDerivativeReport {
    pub plaquette: usize,
    pub observed_plaquette: usize,
    pub beta: f64,
    pub delta: f64,
    pub mean_minus: Estimate,
    pub mean_center: Estimate,
    pub mean_plus: Estimate,
    /// `(⟨f⟩_{β_p+δ} − ⟨f⟩_{β_p−δ}) / 2δ`, error from the paired series.
    pub finite_difference: Estimate,
    /// `Cov(f, N Re Tr U_p)` at the center.
    pub covariance: Estimate,
    pub discrepancy_sigmas: f64,
    /// `(⟨f⟩_+ − 2⟨f⟩_0 + ⟨f⟩_−) / δ²`.
    pub curvature: Estimate,
    /// The quadratic term is significant and larger than the linear one.
    pub delta_too_large: bool,
    pub eps: f64,
}

/// Central difference of `⟨Re tr U_f⟩` in one plaquette coupling against
/// the covariance identity. The three chains per stream share their random
/// numbers and the proposal scale tuned at the center.
pub fn beta_p_derivative_check(cfg: &RunConfig) -> Result<BetaDerivativeReport, AppError> {
    let geom = cfg.geometry()?;
    let p = match cfg.experiment.plaquette {
        Some(p) => PlaquetteId(p as u32),
        None => central_plaquette(&geom)?,
    };
    let obs = cfg.experiment.observed_plaquette.map_or(p, |x| PlaquetteId(x as u32));
    let delta = cfg.experiment.delta.unwrap_or(0.02);
    let center = match cfg.coupling(&geom) {
        Coupling::Uniform(b) => Coupling::PerPlaquette(vec![b; geom.num_plaquettes()]),
        c => c,
    };
    let beta_p = center.beta(p);
    if beta_p - delta < 0.0 {
        return Err(AppError::Config(
            "experiment.delta: β_p − δ must be non-negative".into(),
        ));
    }
    let couplings = [
        center.with_shift(&geom, p, -delta),
        center.clone(),
        center.with_shift(&geom, p, delta),
    ];
    let nf = cfg.model.n as f64;
    let per_chain = run_pool(cfg.threads, cfg.threads, |c| {
        let st = stream(0, c);
        let burn_in = resolve_burn_in(cfg, &geom, &center, st)?;
        let mut tune = Chain::new(
            &geom,
            center.clone(),
            ChainSettings::from_config(cfg, burn_in),
            stream_rng(cfg.seed, st),
        )?;
        tune.burn_in()?;
        let eps = tune.tuner_q.scale;
        let eps_theta = tune.tuner_theta.scale;
        let mut chains = couplings
            .iter()
            .map(|cp| {
                let mut s = ChainSettings::from_config(cfg, 0);
                s.eps = eps;
                s.eps_theta = eps_theta;
                Chain::new(&geom, cp.clone(), s, stream_rng(cfg.seed, st))
            })
            .collect::<Result<Vec<_>, _>>()?;
        for ch in &mut chains {
            ch.run(burn_in)?;
        }
        let every = cfg.sampler.measure_every;
        let count = (cfg.sampler.sweeps / every) as usize;
        let mut f: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(count)).collect();
        let mut g0 = Vec::with_capacity(count);
        for _ in 0..count {
            for (k, ch) in chains.iter_mut().enumerate() {
                ch.run(every)?;
                f[k].push(ch.plaquette_trace(obs).re);
            }
            g0.push(nf * nf * chains[1].plaquette_trace(p).re);
        }
        let means = [estimate_mean(&f[0])?, estimate_mean(&f[1])?, estimate_mean(&f[2])?];
        let fd: Vec<f64> = f[2].iter().zip(&f[0]).map(|(a, b)| (a - b) / (2.0 * delta)).collect();
        let curv: Vec<f64> = (0..count)
            .map(|t| (f[2][t] - 2.0 * f[1][t] + f[0][t]) / (delta * delta))
            .collect();
        let lin: Vec<f64> = f[2].iter().zip(&f[0]).map(|(a, b)| a - b).collect();
        Ok((
            means,
            estimate_mean(&fd)?,
            covariance_estimate(&f[1], &g0)?,
            estimate_mean(&curv)?,
            estimate_mean(&lin)?,
            eps,
        ))
    })?;
    let pick = |k: usize| merge(&per_chain.iter().map(|x| x.0[k]).collect::<Vec<_>>());
    let fd = merge(&per_chain.iter().map(|x| x.1).collect::<Vec<_>>());
    let cov = merge(&per_chain.iter().map(|x| x.2).collect::<Vec<_>>());
    let curvature = merge(&per_chain.iter().map(|x| x.3).collect::<Vec<_>>());
    let lin = merge(&per_chain.iter().map(|x| x.4).collect::<Vec<_>>());
    let quad = curvature.mean.abs() * delta * delta;
    let delta_too_large = curvature.mean.abs() > 3.0 * curvature.std_error && quad > lin.mean.abs();
    Ok(BetaDerivativeReport {
        plaquette: p.index(),
        observed_plaquette: obs.index(),
        beta: beta_p,
        delta,
        mean_minus: pick(0).into(),
        mean_center: pick(1).into(),
        mean_plus: pick(2).into(),
        finite_difference: fd.into(),
        covariance: cov.into(),
        discrepancy_sigmas: fd.z_score(&cov),
        curvature: curvature.into(),
        delta_too_large,
        eps: per_chain[0].5,
    })
}

// --------------------------------------------------------- cluster compare

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterRow {
    pub order: usize,
    pub cluster_count: usize,
    pub contribution: f64,
    pub magnitude: f64,
    pub cumulative: f64,
    pub order_bound: f64,
    pub oracle_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterCompareReport {
    pub edge: usize,
    pub observable: String,
    pub constants: String,
    pub sup_phi: f64,
    pub measured_sup_phi: f64,
    pub total: f64,
    pub oracle: f64,
    pub oracle_method: String,
    pub residual_bound: f64,
    pub rows: Vec<ClusterRow>,
}

/// Truncated expansion of `E[cos θ_e | Q']` at a Haar-random `Q'` against
/// tensor quadrature (up to six edges) or the elimination quadrature.
pub fn cluster_compare(cfg: &RunConfig) -> Result<ClusterCompareReport, AppError> {
    let geom = cfg.geometry()?;
    let coupling = cfg.coupling(&geom);
    let n = cfg.model.n;
    let mut rng = stream_rng(cfg.seed, 0);
    let q = GaugeField::haar(&geom, n, Group::SU, &mut rng);
    let e = EdgeId(cfg.experiment.edge.unwrap_or(0) as u32);
    let m_max = cfg.experiment.m_max.unwrap_or(3);
    let nodes = cfg.sampler.nodes;
    let regime = RegimeConstants {
        d: geom.dim(),
        n,
        beta: coupling.sup(),
        c_d_star: cfg.model.c_d_star,
    };
    let constants = if coupling.sup() <= regime.beta_star() && n as f64 > 8.0 * std::f64::consts::PI {
        ConstantsMode::Rigorous
    } else {
        ConstantsMode::Measured
    };
    let setup = ExpansionSetup::new(&geom, &q, &coupling, nodes)?.with_constants(constants);
    let f = LocalObservable::angle(&[(e, 1.0)], 1.0, f64::cos);
    let mut r = setup.expand_conditional(&f, m_max)?;
    let (oracle, method) = if geom.num_edges() <= ymlattice_core::quadrature::TENSOR_DIM_CAP {
        (brute_force_conditional(&geom, &q, &coupling, &f, nodes)?, "tensor-grid")
    } else {
        let law = ConditionalLaw::new(&geom, n, plaquette_traces(&geom, &q), &coupling, nodes)?;
        (conditional_expectation(&law, &f)?, "elimination")
    };
    r.oracle = Some(oracle);
    let errs = r.oracle_errors().expect("oracle set");
    let rows = (0..=r.order.min(r.contributions.len() - 1))
        .map(|m| ClusterRow {
            order: m,
            cluster_count: r.cluster_counts[m],
            contribution: r.contributions[m],
            magnitude: r.magnitudes[m],
            cumulative: r.cumulative[m],
            order_bound: r.order_bounds[m],
            oracle_error: errs[m],
        })
        .collect();
    Ok(ClusterCompareReport {
        edge: e.index(),
        observable: "cos(theta_e)".into(),
        constants: format!("{:?}", r.constants).to_lowercase(),
        sup_phi: r.sup_phi,
        measured_sup_phi: setup.measured_sup_phi(),
        total: r.total,
        oracle,
        oracle_method: method.into(),
        residual_bound: r.residual_bound,
        rows,
    })
}

// ----------------------------------------------------------------- sample

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct TrajectoryRow {
    pub sweep: u64,
    pub burn_in: bool,
    pub mean_plaquette: f64,
    pub acceptance_q: f64,
    pub acceptance_theta: f64,
    pub eps_q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleReport {
    pub sweeps_done: u64,
    pub target_sweeps: u64,
    pub burn_in: u64,
    pub finished: bool,
}

fn trajectory_row(chain: &Chain<'_>, all: &[PlaquetteId]) -> TrajectoryRow {
    let v = chain.plaquette_values(all);
    let (aq, at) = chain.acceptance();
    TrajectoryRow {
        sweep: chain.sweeps(),
        burn_in: chain.sweeps() <= chain.settings.burn_in,
        mean_plaquette: v.iter().sum::<f64>() / v.len().max(1) as f64,
        acceptance_q: aq,
        acceptance_theta: at,
        eps_q: chain.tuner_q.scale,
    }
}

/// Advances a chain to `stop` sweeps, appending trajectory rows and writing
/// checkpoints on the configured cadence and at the end.
fn drive_sample(cfg: &RunConfig, chain: &mut Chain<'_>, out: &OutputDir, stop: u64) -> Result<(), AppError> {
    let all: Vec<PlaquetteId> = chain.geom.plaquettes().collect();
    let path = out.path(TRAJECTORY_FILE)?;
    let fresh = !path.exists() || chain.sweeps() == 0;
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    let every = cfg.sampler.measure_every;
    let ck = cfg.sampler.checkpoint_every;
    while chain.sweeps() < stop {
        chain.sweep()?;
        if chain.sweeps().is_multiple_of(every) {
            w.serialize(trajectory_row(chain, &all))?;
        }
        if ck > 0 && chain.sweeps().is_multiple_of(ck) && chain.sweeps() < stop {
            w.flush()?;
            out.write_bytes(CHECKPOINT_FILE, &checkpoint::encode(chain, cfg))?;
        }
    }
    w.flush()?;
    out.write_bytes(CHECKPOINT_FILE, &checkpoint::encode(chain, cfg))?;
    Ok(())
}

fn sample_report(chain: &Chain<'_>, target: u64) -> SampleReport {
    SampleReport {
        sweeps_done: chain.sweeps(),
        target_sweeps: target,
        burn_in: chain.settings.burn_in,
        finished: chain.sweeps() >= target,
    }
}

/// A single chain on stream 0 for `burn_in + sweeps` sweeps, stopping
/// early after `stop_after` sweeps if given.
pub fn sample(cfg: &RunConfig, out: &OutputDir, stop_after: Option<u64>) -> Result<SampleReport, AppError> {
    let geom = cfg.geometry()?;
    let coupling = cfg.coupling(&geom);
    let burn_in = resolve_burn_in(cfg, &geom, &coupling, 0)?;
    let mut chain = Chain::new(
        &geom,
        coupling,
        ChainSettings::from_config(cfg, burn_in),
        stream_rng(cfg.seed, 0),
    )?;
    let target = burn_in + cfg.sampler.sweeps;
    drive_sample(cfg, &mut chain, out, stop_after.map_or(target, |s| s.min(target)))?;
    Ok(sample_report(&chain, target))
}

/// Continues a `sample` run from its checkpoint in the same directory.
pub fn resume_sample(
    ckpt: &Checkpoint,
    cfg: &RunConfig,
    out: &OutputDir,
    stop_after: Option<u64>,
) -> Result<SampleReport, AppError> {
    let geom = cfg.geometry()?;
    let mut chain = ckpt.restore(&geom, cfg)?;
    let target = chain.settings.burn_in + cfg.sampler.sweeps;
    drive_sample(cfg, &mut chain, out, stop_after.map_or(target, |s| s.min(target)))?;
    Ok(sample_report(&chain, target))
}

// ------------------------------------------------------------ dispatching

/// Options that only some experiments honor.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub stop_after: Option<u64>,
}

fn streams_used(cfg: &RunConfig, points: usize) -> Vec<u64> {
    tasks(points, cfg.threads)
        .into_iter()
        .map(|(p, c)| stream(p, c))
        .collect()
}

/// Runs the configured experiment and writes `results.csv`, a JSON report
/// and `manifest.json` into `out`.
pub fn run_experiment(cfg: &RunConfig, out: &OutputDir, opts: RunOptions) -> Result<(), AppError> {
    let name = cfg.experiment.name;
    let (streams, mut files) = match name {
        ExperimentName::Massgap => {
            let r = mass_gap_scan(cfg)?;
            out.write_csv(RESULTS_FILE, &r.rows)?;
            out.write_json("decay_fit.json", &r.fit)?;
            (streams_used(cfg, 1), vec!["decay_fit.json"])
        }
        ExperimentName::Volume => {
            let r = volume_sensitivity_scan(cfg)?;
            out.write_csv(RESULTS_FILE, &r.rows)?;
            out.write_json("volume.json", &r)?;
            (streams_used(cfg, r.rows.len()), vec!["volume.json"])
        }
        ExperimentName::Largen => {
            let r = large_n_sweep(cfg)?;
            out.write_csv(RESULTS_FILE, &r.rows)?;
            out.write_json("large_n.json", &r)?;
            (streams_used(cfg, r.rows.len()), vec!["large_n.json"])
        }
        ExperimentName::Factorization => {
            let r = factorization_check(cfg)?;
            out.write_csv(RESULTS_FILE, &r.rows)?;
            out.write_json("factorization.json", &r)?;
            (streams_used(cfg, r.rows.len()), vec!["factorization.json"])
        }
        ExperimentName::BetaDerivative => {
            let r = beta_p_derivative_check(cfg)?;
            out.write_csv(RESULTS_FILE, &[&r].map(beta_row))?;
            out.write_json("beta_derivative.json", &r)?;
            (streams_used(cfg, 1), vec!["beta_derivative.json"])
        }
        ExperimentName::ClusterCompare => {
            let r = cluster_compare(cfg)?;
            out.write_csv(RESULTS_FILE, &r.rows)?;
            out.write_json("expansion.json", &r)?;
            (vec![0], vec!["expansion.json"])
        }
        ExperimentName::Sample => {
            let r = sample(cfg, out, opts.stop_after)?;
            out.write_json("sample.json", &r)?;
            (vec![0], vec!["sample.json", TRAJECTORY_FILE, CHECKPOINT_FILE])
        }
    };
    if name != ExperimentName::Sample {
        files.insert(0, RESULTS_FILE);
    }
    out.write_manifest(&Manifest::new(
        cfg,
        streams,
        files.into_iter().map(String::from).collect(),
    ))
}

#[derive(Serialize)]
struct BetaRow {
    plaquette: usize,
    beta: f64,
    delta: f64,
    finite_difference: f64,
    finite_difference_error: f64,
    covariance: f64,
    covariance_error: f64,
    discrepancy_sigmas: f64,
    delta_too_large: bool,
}

fn beta_row(r: &BetaDerivativeReport) -> BetaRow {
    BetaRow {
        plaquette: r.plaquette,
        beta: r.beta,
        delta: r.delta,
        finite_difference: r.finite_difference.mean,
        finite_difference_error: r.finite_difference.std_error,
        covariance: r.covariance.mean,
        covariance_error: r.covariance.std_error,
        discrepancy_sigmas: r.discrepancy_sigmas,
        delta_too_large: r.delta_too_large,
    }
}

/// Resumes from a checkpoint file; the checkpoint's directory receives the
/// continued outputs. `config`, when given, must hash to the checkpoint's
/// configuration.
pub fn resume(ckpt_path: &Path, config: Option<&RunConfig>, opts: RunOptions) -> Result<SampleReport, AppError> {
    let ckpt = Checkpoint::read(ckpt_path)?;
    let stored = ckpt.config()?;
    if let Some(c) = config {
        if c.hash() != stored.hash() {
            let diff = crate::config::config_diff(&stored, c);
            return Err(AppError::Checkpoint(format!(
                "configuration differs from the checkpoint (hash {} vs {}): {}",
                c.hash(),
                stored.hash(),
                diff.join("; ")
            )));
        }
    }
    if stored.experiment.name != ExperimentName::Sample {
        return Err(AppError::Checkpoint(
            "only `sample` runs write resumable checkpoints".into(),
        ));
    }
    let dir = ckpt_path.parent().unwrap_or_else(|| Path::new("."));
    let out = OutputDir::create(dir)?;
    let r = resume_sample(&ckpt, &stored, &out, opts.stop_after)?;
    out.write_json("sample.json", &r)?;
    out.write_manifest(&Manifest::new(
        &stored,
        vec![0],
        vec!["sample.json".into(), TRAJECTORY_FILE.into(), CHECKPOINT_FILE.into()],
    ))?;
    Ok(r)
}
