//! Binary checkpoints: `YMLCKPT1`, a little-endian `u32` header length, a
//! JSON header and a payload of little-endian `f64`s (link entries as
//! `(re, im)` in column-major order, then angles if the chain has any).
//! The header carries the payload's SHA-256 and the full configuration.

use serde::{Deserialize, Serialize};
use ymlattice_core::algebra::CMatrix;
use ymlattice_core::lattice::Geometry;
use ymlattice_core::model::{AngleField, DecomposedConfig, GaugeField};
use ymlattice_core::rng::{stream_rng, RngState};
use ymlattice_core::samplers::{AcceptanceStats, ChainState, DriftSource, ScaleTuner};
use ymlattice_core::stats::Welford;
use ymlattice_core::C64;

use crate::chain::{Chain, ChainBody, ChainSettings};
use crate::config::{sha256_hex, RunConfig, SamplerKind};
use crate::AppError;

pub const MAGIC: &[u8; 8] = b"YMLCKPT1";
pub const CHECKPOINT_SCHEMA: u32 = 1;

/// Floats are stored as raw bit patterns so they survive JSON exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunerState {
    pub scale_bits: u64,
    pub max_bits: u64,
    pub window: [u64; 2],
    pub frozen: bool,
}

impl TunerState {
    fn capture(t: &ScaleTuner) -> Self {
        let w = t.window();
        Self {
            scale_bits: t.scale.to_bits(),
            max_bits: t.max_scale.to_bits(),
            window: [w.accepted, w.proposed],
            frozen: t.is_frozen(),
        }
    }

    fn restore(&self) -> ScaleTuner {
        ScaleTuner::from_parts(
            f64::from_bits(self.scale_bits),
            f64::from_bits(self.max_bits),
            AcceptanceStats {
                accepted: self.window[0],
                proposed: self.window[1],
            },
            self.frozen,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngHeader {
    pub key: String,
    pub stream: u64,
    /// Decimal, since JSON numbers cannot hold a `u128`.
    pub word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub config_hash: String,
    pub kind: SamplerKind,
    pub n: usize,
    pub num_edges: usize,
    pub sweeps: u64,
    pub burn_in: u64,
    pub rng: RngHeader,
    pub acceptance_q: [u64; 2],
    pub acceptance_theta: [u64; 2],
    /// `(count, mean bits, M2 bits)` of the Langevin drift norms.
    pub drift_norm: (u64, u64, u64),
    pub tuner_q: TunerState,
    pub tuner_theta: TunerState,
    pub has_theta: bool,
    pub payload_sha256: String,
    pub config_toml: String,
}

/// A decoded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub links: Vec<CMatrix>,
    pub theta: Option<Vec<f64>>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Result<Vec<u8>, AppError> {
    if !s.len().is_multiple_of(2) {
        return Err(AppError::Checkpoint("odd-length hex string".into()));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|e| AppError::Checkpoint(format!("bad hex: {e}"))))
        .collect()
}

fn ckpt_err(msg: impl Into<String>) -> AppError {
    AppError::Checkpoint(msg.into())
}

/// Serializes a chain together with the configuration it was run with.
pub fn encode(chain: &Chain<'_>, cfg: &RunConfig) -> Vec<u8> {
    let (links, theta, rng, acc_q, acc_t, drift_norm, kind) = match &chain.body {
        ChainBody::Direct(s) => (
            &s.config,
            None,
            &s.rng,
            s.acceptance_q,
            s.acceptance_theta,
            s.drift_norm,
            SamplerKind::Metropolis,
        ),
        ChainBody::Joint(s) => (
            &s.config.q,
            Some(&s.config.theta),
            &s.rng,
            s.acceptance_q,
            s.acceptance_theta,
            s.drift_norm,
            SamplerKind::Joint,
        ),
        ChainBody::Langevin { state: s, drift } => {
            let theta = match drift {
                DriftSource::Chain { theta, .. } => Some(theta),
                _ => None,
            };
            (
                &s.config,
                theta,
                &s.rng,
                s.acceptance_q,
                s.acceptance_theta,
                s.drift_norm,
                SamplerKind::Langevin,
            )
        }
    };
    let mut payload = Vec::with_capacity(links.len() * links.n() * links.n() * 16);
    for m in links.links() {
        for z in m.as_slice() {
            payload.extend_from_slice(&z.re.to_le_bytes());
            payload.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    if let Some(t) = theta {
        for v in t.values() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let rs = RngState::capture(rng);
    let (dn, dm, dm2) = drift_norm.parts();
    let header = CheckpointHeader {
        schema_version: CHECKPOINT_SCHEMA,
        config_hash: cfg.hash(),
        kind,
        n: links.n(),
        num_edges: links.len(),
        sweeps: chain.sweeps(),
        burn_in: chain.settings.burn_in,
        rng: RngHeader {
            key: hex(&rs.key),
            stream: rs.stream,
            word_pos: rs.word_pos.to_string(),
        },
        acceptance_q: [acc_q.accepted, acc_q.proposed],
        acceptance_theta: [acc_t.accepted, acc_t.proposed],
        drift_norm: (dn, dm.to_bits(), dm2.to_bits()),
        tuner_q: TunerState::capture(&chain.tuner_q),
        tuner_theta: TunerState::capture(&chain.tuner_theta),
        has_theta: theta.is_some(),
        payload_sha256: sha256_hex(&payload),
        config_toml: cfg.canonical_toml(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, AppError> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(ckpt_err("not a checkpoint file (bad magic)"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < hlen {
        return Err(ckpt_err("truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..hlen]).map_err(|e| ckpt_err(format!("unreadable header: {e}")))?;
    if header.schema_version != CHECKPOINT_SCHEMA {
        return Err(ckpt_err(format!(
            "unsupported checkpoint schema {}",
            header.schema_version
        )));
    }
    let payload = &body[hlen..];
    let digest = sha256_hex(payload);
    if digest != header.payload_sha256 {
        return Err(ckpt_err(format!(
            "payload hash mismatch: stored {}, computed {digest}",
            header.payload_sha256
        )));
    }
    let n = header.n;
    let link_bytes = header.num_edges * n * n * 16;
    let theta_bytes = if header.has_theta { header.num_edges * 8 } else { 0 };
    if payload.len() != link_bytes + theta_bytes {
        return Err(ckpt_err("payload length does not match header"));
    }
    let f = |i: usize| f64::from_le_bytes(payload[8 * i..8 * i + 8].try_into().expect("eight bytes"));
    let mut links = Vec::with_capacity(header.num_edges);
    for e in 0..header.num_edges {
        let base = e * n * n * 2;
        let data: Vec<C64> = (0..n * n)
            .map(|k| C64::new(f(base + 2 * k), f(base + 2 * k + 1)))
            .collect();
        links.push(CMatrix::from_column_major(data)?);
    }
    let theta = header
        .has_theta
        .then(|| (0..header.num_edges).map(|e| f(link_bytes / 8 + e)).collect());
    Ok(Checkpoint { header, links, theta })
}

impl Checkpoint {
    pub fn read(path: &std::path::Path) -> Result<Self, AppError> {
        let bytes = std::fs::read(path).map_err(|e| ckpt_err(format!("{}: {e}", path.display())))?;
        decode(&bytes)
    }

    /// The configuration embedded at write time, checked against its hash.
    pub fn config(&self) -> Result<RunConfig, AppError> {
        let cfg = RunConfig::from_toml(&self.header.config_toml)?;
        if cfg.hash() != self.header.config_hash {
            return Err(ckpt_err("embedded configuration does not match its hash"));
        }
        Ok(cfg)
    }

    /// Rebuilds the chain exactly as it was when written.
    pub fn restore<'g>(&self, geom: &'g Geometry, cfg: &RunConfig) -> Result<Chain<'g>, AppError> {
        let h = &self.header;
        if cfg.hash() != h.config_hash {
            return Err(ckpt_err("configuration hash does not match the checkpoint"));
        }
        if h.num_edges != geom.num_edges() || h.n != cfg.model.n || h.kind != cfg.sampler.kind {
            return Err(ckpt_err("checkpoint does not fit the configured lattice or sampler"));
        }
        let key: [u8; 32] = unhex(&h.rng.key)?
            .try_into()
            .map_err(|_| ckpt_err("rng key must be 32 bytes"))?;
        let word_pos: u128 = h.rng.word_pos.parse().map_err(|_| ckpt_err("bad rng word position"))?;
        let rng = RngState {
            key,
            stream: h.rng.stream,
            word_pos,
        }
        .restore();
        let settings = ChainSettings::from_config(cfg, h.burn_in);
        let mut chain = Chain::new(geom, cfg.coupling(geom), settings, stream_rng(0, 0))?;
        let field = GaugeField::from_links(h.n, self.links.clone())?;
        let theta = self.theta.clone().map(AngleField::from_values);
        chain.body = match (&mut chain.body, theta) {
            (ChainBody::Direct(_), None) => ChainBody::Direct(restore_state(field, rng, h)),
            (ChainBody::Joint(_), Some(t)) => ChainBody::Joint(restore_state(DecomposedConfig::new(t, field)?, rng, h)),
            (ChainBody::Langevin { drift, .. }, t) => {
                let drift = match (drift.clone(), t) {
                    (DriftSource::Chain { eps, .. }, Some(theta)) => DriftSource::Chain { theta, eps },
                    (d, None) if !matches!(d, DriftSource::Chain { .. }) => d,
                    _ => return Err(ckpt_err("angle payload does not match the drift source")),
                };
                ChainBody::Langevin {
                    state: restore_state(field, rng, h),
                    drift,
                }
            }
            _ => return Err(ckpt_err("angle payload does not match the sampler kind")),
        };
        chain.tuner_q = h.tuner_q.restore();
        chain.tuner_theta = h.tuner_theta.restore();
        Ok(chain)
    }
}

fn restore_state<C>(config: C, rng: ymlattice_core::rng::ChainRng, h: &CheckpointHeader) -> ChainState<C> {
    let mut s = ChainState::new(config, rng);
    s.sweeps = h.sweeps;
    s.acceptance_q = AcceptanceStats {
        accepted: h.acceptance_q[0],
        proposed: h.acceptance_q[1],
    };
    s.acceptance_theta = AcceptanceStats {
        accepted: h.acceptance_theta[0],
        proposed: h.acceptance_theta[1],
    };
    s.drift_norm = Welford::from_parts(
        h.drift_norm.0,
        f64::from_bits(h.drift_norm.1),
        f64::from_bits(h.drift_norm.2),
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentConfig, ExperimentName, GeometryConfig, GroupName, ModelConfig, SamplerConfig};

    fn cfg(kind: SamplerKind) -> RunConfig {
        RunConfig {
            seed: 3,
            threads: 1,
            output_dir: "out".into(),
            geometry: GeometryConfig {
                dim: 2,
                l: Some(1),
                extents: None,
            },
            model: ModelConfig {
                n: 2,
                beta: 0.1,
                beta_overrides: vec![],
                c_d_star: 1.0,
                group: GroupName::U,
            },
            sampler: SamplerConfig {
                kind,
                burn_in: Some(20),
                sweeps: 100,
                drift: crate::config::DriftKind::Chain,
                ..SamplerConfig::default()
            },
            experiment: ExperimentConfig::named(ExperimentName::Sample),
        }
    }

    #[test]
    fn round_trip_continues_identically() {
        for kind in [SamplerKind::Metropolis, SamplerKind::Joint, SamplerKind::Langevin] {
            let c = cfg(kind);
            let g = c.geometry().unwrap();
            let settings = ChainSettings::from_config(&c, 20);
            let mut a = Chain::new(&g, c.coupling(&g), settings, stream_rng(c.seed, 0)).unwrap();
            a.run(13).unwrap();
            let bytes = encode(&a, &c);
            let mut b = decode(&bytes).unwrap().restore(&g, &c).unwrap();
            assert_eq!(encode(&b, &c), bytes);
            a.run(17).unwrap();
            b.run(17).unwrap();
            assert_eq!(encode(&a, &c), encode(&b, &c), "{kind:?}");
        }
    }

    #[test]
    fn corruption_is_detected() {
        let c = cfg(SamplerKind::Metropolis);
        let g = c.geometry().unwrap();
        let a = Chain::new(&g, c.coupling(&g), ChainSettings::from_config(&c, 0), stream_rng(1, 0)).unwrap();
        let mut bytes = encode(&a, &c);
        let last = bytes.len() - 3;
        bytes[last] ^= 0x40;
        let e = decode(&bytes).unwrap_err();
        assert!(e.to_string().contains("hash"), "{e}");
    }
}
