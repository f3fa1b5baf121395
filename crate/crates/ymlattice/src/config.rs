//! Run configuration: one TOML file per run, validated before any work and
//! hashed into every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ymlattice_core::algebra::Group;
use ymlattice_core::lattice::{Geometry, PlaquetteId};
use ymlattice_core::model::Coupling;

use crate::AppError;

/// Environment variable that re-roots relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "YMLATTICE_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "one")]
    pub threads: usize,
    pub output_dir: PathBuf,
    pub geometry: GeometryConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub experiment: ExperimentConfig,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub dim: usize,
    /// Half-width of the cube `Λ_L = [−L, L]^d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    /// Vertex counts per axis of a box, instead of `l`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extents: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupName {
    U,
    SU,
}

impl From<GroupName> for Group {
    fn from(g: GroupName) -> Self {
        match g {
            GroupName::U => Group::U,
            GroupName::SU => Group::SU,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    pub beta: f64,
    /// `(plaquette index, β_p)` overrides; any entry switches to
    /// per-plaquette couplings.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta_overrides: Vec<(usize, f64)>,
    #[serde(default = "default_c_d_star")]
    pub c_d_star: f64,
    #[serde(default = "default_group")]
    pub group: GroupName,
}

fn default_c_d_star() -> f64 {
    1.0
}

fn default_group() -> GroupName {
    GroupName::U
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Metropolis,
    Joint,
    Langevin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftKind {
    Quadrature,
    Chain,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Burn-in sweeps; absent means ten integrated autocorrelation times of
    /// a pilot run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u64>,
    pub sweeps: u64,
    #[serde(default = "one_u64")]
    pub measure_every: u64,
    /// Initial SU/U(N) proposal width.
    pub eps: f64,
    /// Initial θ proposal width.
    pub eps_theta: f64,
    /// Langevin step.
    pub h: f64,
    pub n_inner: usize,
    pub drift: DriftKind,
    /// Quadrature nodes per angle.
    pub nodes: usize,
    pub reunitarize_every: u64,
    /// Checkpoint cadence in sweeps for `sample`; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: u64,
}

fn one_u64() -> u64 {
    1
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Metropolis,
            burn_in: None,
            sweeps: 10_000,
            measure_every: 1,
            eps: 0.5,
            eps_theta: 1.5,
            h: 0.05,
            n_inner: 4,
            drift: DriftKind::Quadrature,
            nodes: 16,
            reunitarize_every: 100,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    Massgap,
    Volume,
    Largen,
    Factorization,
    ClusterCompare,
    BetaDerivative,
    Sample,
}

impl ExperimentName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Massgap => "massgap",
            Self::Volume => "volume",
            Self::Largen => "largen",
            Self::Factorization => "factorization",
            Self::ClusterCompare => "cluster-compare",
            Self::BetaDerivative => "beta-derivative",
            Self::Sample => "sample",
        }
    }
}

/// Experiment name plus the parameters the experiments read; each
/// experiment documents which keys it uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: ExperimentName,
    /// `massgap`: graph distances between the two plaquette supports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<usize>>,
    /// `volume`: half-widths L.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_values: Option<Vec<usize>>,
    /// `largen`, `factorization`: matrix sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_values: Option<Vec<usize>>,
    /// `beta-derivative`: plaquette whose coupling is varied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plaquette: Option<usize>,
    /// `beta-derivative`: plaquette observed by `f = Re tr Q_p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_plaquette: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// `cluster-compare`: truncation order and the edge observed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<usize>,
    /// `factorization`: plaquette indices of the loops.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loops: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn named(name: ExperimentName) -> Self {
        Self {
            name,
            distances: None,
            l_values: None,
            n_values: None,
            plaquette: None,
            observed_plaquette: None,
            delta: None,
            m_max: None,
            edge: None,
            loops: None,
        }
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> AppError {
    AppError::Config(format!("{key}: {msg}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, AppError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// The serialization with `output_dir` replaced by `.`: where a run
    /// writes is not part of what it computes.
    pub fn canonical_toml(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::from(".");
        c.to_toml()
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<(), AppError> {
        // TOML integers are i64
        if self.seed > i64::MAX as u64 {
            return Err(bad("seed", "must be at most 2^63 - 1"));
        }
        if self.threads == 0 {
            return Err(bad("threads", "must be at least 1"));
        }
        let g = &self.geometry;
        if g.dim < 2 {
            return Err(bad("geometry.dim", "must be at least 2"));
        }
        match (&g.l, &g.extents) {
            (Some(_), Some(_)) => return Err(bad("geometry.extents", "give either geometry.l or geometry.extents")),
            (None, None) => return Err(bad("geometry.l", "missing (or give geometry.extents)")),
            (Some(0), _) => return Err(bad("geometry.l", "must be at least 1")),
            (_, Some(ex)) if ex.len() != g.dim || ex.iter().any(|&x| x < 2) => {
                return Err(bad("geometry.extents", "needs `dim` entries, each at least 2"))
            }
            _ => {}
        }
        let m = &self.model;
        if m.n < 1 || (m.n < 2 && m.group == GroupName::SU) {
            return Err(bad("model.n", "must be at least 1 (2 for SU)"));
        }
        if !(m.beta.is_finite() && m.beta >= 0.0) {
            return Err(bad("model.beta", "must be finite and non-negative"));
        }
        if !(m.c_d_star.is_finite() && m.c_d_star > 0.0) {
            return Err(bad("model.c_d_star", "must be positive"));
        }
        let geom = self.geometry()?;
        for (p, b) in &m.beta_overrides {
            if *p >= geom.num_plaquettes() {
                return Err(bad("model.beta_overrides", format!("plaquette {p} out of range")));
            }
            if !(b.is_finite() && *b >= 0.0) {
                return Err(bad("model.beta_overrides", "couplings must be finite and non-negative"));
            }
        }
        let s = &self.sampler;
        if s.sweeps == 0 {
            return Err(bad("sampler.sweeps", "must be positive"));
        }
        if s.measure_every == 0 {
            return Err(bad("sampler.measure_every", "must be positive"));
        }
        if !(s.eps > 0.0 && s.eps.is_finite()) {
            return Err(bad("sampler.eps", "must be positive"));
        }
        if !(s.eps_theta > 0.0 && s.eps_theta.is_finite()) {
            return Err(bad("sampler.eps_theta", "must be positive"));
        }
        if !(s.h > 0.0 && s.h <= 0.1) {
            return Err(bad("sampler.h", "must lie in (0, 0.1]"));
        }
        if s.reunitarize_every == 0 {
            return Err(bad("sampler.reunitarize_every", "must be at least 1"));
        }
        if s.nodes < 2 {
            return Err(bad("sampler.nodes", "must be at least 2"));
        }
        if s.kind == SamplerKind::Langevin && m.n < 2 {
            return Err(bad("model.n", "Langevin dynamics needs N >= 2"));
        }
        self.validate_experiment(&geom)
    }

    fn validate_experiment(&self, geom: &Geometry) -> Result<(), AppError> {
        let e = &self.experiment;
        let np = geom.num_plaquettes();
        match e.name {
            ExperimentName::Massgap => {
                let d = e
                    .distances
                    .as_ref()
                    .ok_or_else(|| bad("experiment.distances", "required for massgap"))?;
                if d.len() < 3 {
                    return Err(bad("experiment.distances", "needs at least three distances"));
                }
            }
            ExperimentName::Volume => {
                let l = e
                    .l_values
                    .as_ref()
                    .ok_or_else(|| bad("experiment.l_values", "required for volume"))?;
                if l.len() < 2 || l.contains(&0) {
                    return Err(bad("experiment.l_values", "needs at least two positive values"));
                }
            }
            ExperimentName::Largen | ExperimentName::Factorization => {
                let n = e
                    .n_values
                    .as_ref()
                    .ok_or_else(|| bad("experiment.n_values", "required"))?;
                if n.iter().any(|&x| x < 1) || (e.name == ExperimentName::Largen && n.len() < 3) {
                    return Err(bad(
                        "experiment.n_values",
                        "needs at least three sizes, each at least 1",
                    ));
                }
                if let Some(loops) = &e.loops {
                    if loops.len() < 2 || loops.iter().any(|&p| p >= np) {
                        return Err(bad("experiment.loops", "needs at least two valid plaquette indices"));
                    }
                }
            }
            ExperimentName::BetaDerivative => {
                for (key, v) in [
                    ("experiment.plaquette", e.plaquette),
                    ("experiment.observed_plaquette", e.observed_plaquette),
                ] {
                    if let Some(p) = v {
                        if p >= np {
                            return Err(bad(key, format!("plaquette {p} out of range")));
                        }
                    }
                }
                if let Some(d) = e.delta {
                    if !(d > 0.0 && d.is_finite()) {
                        return Err(bad("experiment.delta", "must be positive"));
                    }
                }
            }
            ExperimentName::ClusterCompare => {
                if let Some(ed) = e.edge {
                    if ed >= geom.num_edges() {
                        return Err(bad("experiment.edge", format!("edge {ed} out of range")));
                    }
                }
            }
            ExperimentName::Sample => {}
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Geometry, AppError> {
        let g = &self.geometry;
        let r = match (&g.l, &g.extents) {
            (Some(l), None) => Geometry::cube(g.dim, *l),
            (None, Some(ex)) => Geometry::new_box(ex),
            _ => return Err(bad("geometry", "give exactly one of l and extents")),
        };
        r.map_err(|e| bad("geometry", format!("{e:?}")))
    }

    pub fn coupling(&self, geom: &Geometry) -> Coupling {
        if self.model.beta_overrides.is_empty() {
            Coupling::Uniform(self.model.beta)
        } else {
            let mut v = vec![self.model.beta; geom.num_plaquettes()];
            for &(p, b) in &self.model.beta_overrides {
                v[p] = b;
            }
            debug_assert!(geom.plaquettes().all(|p: PlaquetteId| p.index() < v.len()));
            Coupling::PerPlaquette(v)
        }
    }

    pub fn group(&self) -> Group {
        self.model.group.into()
    }

    /// `output_dir`, re-rooted under `$YMLATTICE_OUTPUT_ROOT` when that is
    /// set and the directory is relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Dotted keys whose values differ between two configurations.
pub fn config_diff(a: &RunConfig, b: &RunConfig) -> Vec<String> {
    let flat = |c: &RunConfig| {
        let v: toml::Value = toml::from_str(&c.canonical_toml()).expect("configuration serializes");
        let mut out = BTreeMap::new();
        flatten("", &v, &mut out);
        out
    };
    let (fa, fb) = (flat(a), flat(b));
    let mut keys: Vec<&String> = fa.keys().chain(fb.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| {
            let show = |m: &BTreeMap<String, String>| m.get(k).cloned().unwrap_or_else(|| "<absent>".into());
            format!("{k}: {} -> {}", show(&fa), show(&fb))
        })
        .collect()
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, x) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, x, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
seed = 7
output_dir = "out/test"

[geometry]
dim = 2
l = 2

[model]
n = 2
beta = 0.1

[sampler]
kind = "metropolis"
burn_in = 100
sweeps = 1000
eps = 0.5
eps_theta = 1.5
h = 0.05
n_inner = 4
drift = "quadrature"
nodes = 16
reunitarize_every = 100

[experiment]
name = "massgap"
distances = [0, 1, 2]
"#;

    #[test]
    fn round_trip_is_identity() {
        let a = RunConfig::from_toml(EXAMPLE).unwrap();
        let b = RunConfig::from_toml(&a.to_toml()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn errors_name_the_key() {
        let e = RunConfig::from_toml(&EXAMPLE.replace("h = 0.05", "h = 0.5")).unwrap_err();
        assert!(e.to_string().contains("sampler.h"), "{e}");
        let e = RunConfig::from_toml(&EXAMPLE.replace("beta = 0.1", "beta = 0.1\nbogus = 1")).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = RunConfig::from_toml(&EXAMPLE.replace("massgap", "nope")).unwrap_err();
        assert!(e.to_string().contains("nope"), "{e}");
    }

    #[test]
    fn diff_lists_changed_keys() {
        let a = RunConfig::from_toml(EXAMPLE).unwrap();
        let mut b = a.clone();
        b.model.beta = 0.2;
        let d = config_diff(&a, &b);
        assert_eq!(d.len(), 1);
        assert!(d[0].starts_with("model.beta"));
    }
}
