//! The invariant suite behind `ymlattice validate`.

use rand::Rng;
use serde::Serialize;
use ymlattice_core::algebra::{
    casimir_constant, exp_map, gaussian_element, hs_inner, project_su, su_basis, CMatrix, Flavor, Group,
};
use ymlattice_core::cluster_expansion::{brute_force_conditional, ExpansionSetup, LocalObservable};
use ymlattice_core::lattice::{EdgeId, Geometry};
use ymlattice_core::model::{
    decomposed_action, grad_wilson, perturb, plaquette_traces, wilson_action, AngleField, Coupling, DecomposedConfig,
    GaugeField,
};
use ymlattice_core::quadrature::{plaquette_terms, tensor_grid, ConditionalLaw};
use ymlattice_core::rng::{stream_rng, ChainRng};
use ymlattice_core::samplers::grad_marginal_quadrature;
use ymlattice_core::C64;

use crate::chain::{Chain, ChainSettings};
use crate::config::{DriftKind, RunConfig, SamplerKind};
use crate::AppError;

/// Deliberate defects for exercising the suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    SkipReunitarization,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub id: String,
    pub description: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(id: &str, description: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            id: id.into(),
            description: description.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub config_hash: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn render(&self) -> String {
        let mut s = format!("config_hash {}\nseed {}\n", self.config_hash, self.seed);
        for c in &self.checks {
            s.push_str(&format!(
                "{} {:<34} measured {:.3e}  tolerance {:.1e}  {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.id,
                c.measured,
                c.tolerance,
                c.description
            ));
        }
        let failed = self.failed().len();
        s.push_str(&format!("{} checks, {} failed\n", self.checks.len(), failed));
        s
    }
}

/// Configuration recorded in reports when none is supplied.
pub const DEFAULT_VALIDATION_CONFIG: &str = r#"
seed = 20240601
output_dir = "validate"

[geometry]
dim = 2
l = 1

[model]
n = 2
beta = 0.1

[sampler]
kind = "metropolis"
burn_in = 0
sweeps = 50
eps = 0.5
eps_theta = 1.5
h = 0.05
n_inner = 4
drift = "quadrature"
nodes = 16
reunitarize_every = 10

[experiment]
name = "sample"
"#;

fn random_matrix(n: usize, rng: &mut ChainRng) -> CMatrix {
    CMatrix::from_fn(n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

fn basis_checks(out: &mut Vec<Check>) -> Result<(), AppError> {
    let (mut ortho, mut cas) = (0.0f64, 0.0f64);
    for n in 2..=6 {
        let b = su_basis(n)?;
        for (i, x) in b.elements().iter().enumerate() {
            for (j, y) in b.elements().iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                ortho = ortho.max((hs_inner(x.matrix(), y.matrix())? - want).abs());
            }
        }
        let mut sum = CMatrix::zeros(n);
        for v in b.elements() {
            sum += &(v.matrix() * v.matrix());
        }
        let want = CMatrix::identity(n).scale_real(casimir_constant(n));
        cas = cas.max(sum.max_abs_diff(&want));
    }
    out.push(Check::new(
        "algebra.basis_orthonormal",
        "su(N) basis orthonormal, N = 2..6",
        ortho,
        1e-12,
    ));
    out.push(Check::new(
        "algebra.casimir",
        "sum of v_a^2 equals -(N^2-1)/N I, N = 2..6",
        cas,
        1e-10,
    ));
    Ok(())
}

fn projection_check(seed: u64, out: &mut Vec<Check>) -> Result<(), AppError> {
    let mut rng = stream_rng(seed, 101);
    let mut worst = 0.0f64;
    for n in [2, 3, 5] {
        let b = su_basis(n)?;
        for _ in 0..200 {
            let m = random_matrix(n, &mut rng);
            let r = &m - project_su(&m).matrix();
            for v in b.elements() {
                worst = worst.max(hs_inner(&r, v.matrix())?.abs());
            }
        }
    }
    out.push(Check::new(
        "algebra.projection",
        "M - p(M) orthogonal to su(N)",
        worst,
        1e-10,
    ));
    let mut defect = 0.0f64;
    for n in [2, 3, 4] {
        for _ in 0..50 {
            let x = gaussian_element(n, Flavor::SU, &mut rng);
            defect = defect.max(Group::SU.membership_defect(&exp_map(&x)?));
        }
    }
    out.push(Check::new(
        "algebra.exp_map_group",
        "exp of su(N) elements lies in SU(N)",
        defect,
        1e-12,
    ));
    Ok(())
}

fn decomposition_check(seed: u64, out: &mut Vec<Check>) -> Result<(), AppError> {
    let mut rng = stream_rng(seed, 102);
    let mut worst = 0.0f64;
    for d in [2, 3] {
        let g = Geometry::cube(d, 1)?;
        let cpl = Coupling::Uniform(0.3);
        for _ in 0..20 {
            let cfg = DecomposedConfig::new(
                AngleField::uniform(&g, &mut rng),
                GaugeField::haar(&g, 3, Group::SU, &mut rng),
            )?;
            let a = wilson_action(&g, &cfg.embed(), &cpl);
            let b = decomposed_action(&g, &cfg, &cpl);
            worst = worst.max((a - b).exp_m1().abs());
        }
    }
    out.push(Check::new(
        "model.decomposition",
        "exp S(U) = exp S(theta, Q) (relative)",
        worst,
        1e-9,
    ));
    Ok(())
}

fn gradient_checks(seed: u64, out: &mut Vec<Check>) -> Result<(), AppError> {
    let mut rng = stream_rng(seed, 103);
    let g = Geometry::cube(2, 1)?;
    let cpl = Coupling::Uniform(0.37);
    let q = GaugeField::haar(&g, 3, Group::SU, &mut rng);
    let basis = su_basis(3)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for e in g.edges() {
        let a = grad_wilson(&g, &q, &cpl, Group::SU, e);
        for v in basis.elements() {
            let dir = [(e, v.clone())];
            let fd = (wilson_action(&g, &perturb(&q, &dir, h)?, &cpl)
                - wilson_action(&g, &perturb(&q, &dir, -h)?, &cpl))
                / (2.0 * h);
            let an = hs_inner(v.matrix(), a.matrix())?;
            worst = worst.max((fd - an).abs() / (1.0 + an.abs()));
        }
    }
    out.push(Check::new(
        "model.grad_wilson_fd",
        "Wilson gradient vs central differences",
        worst,
        1e-6,
    ));

    let g4 = Geometry::new_box(&[2, 2])?;
    let cpl = Coupling::Uniform(0.3);
    let q = GaugeField::haar(&g4, 2, Group::SU, &mut rng);
    let nodes = 32;
    let marginal = |q: &GaugeField| -> Result<f64, AppError> {
        Ok(ConditionalLaw::new(&g4, 2, plaquette_traces(&g4, q), &cpl, nodes)?.log_partition()?)
    };
    let basis = su_basis(2)?;
    let mut worst = 0.0f64;
    for e in g4.edges() {
        let a = grad_marginal_quadrature(&g4, &q, &cpl, e, nodes)?;
        for v in basis.elements() {
            let dir = [(e, v.clone())];
            let fd = (marginal(&perturb(&q, &dir, h)?)? - marginal(&perturb(&q, &dir, -h)?)?) / (2.0 * h);
            let an = hs_inner(v.matrix(), a.matrix())?;
            worst = worst.max((fd - an).abs() / (1.0 + an.abs()));
        }
    }
    out.push(Check::new(
        "samplers.grad_marginal_fd",
        "marginal gradient vs differences of log Z(theta | Q)",
        worst,
        1e-6,
    ));
    Ok(())
}

fn quadrature_checks(seed: u64, out: &mut Vec<Check>) -> Result<(), AppError> {
    let mut rng = stream_rng(seed, 104);
    let g = Geometry::new_box(&[2, 2])?;
    let cpl = Coupling::Uniform(0.25);
    let n = 3;
    let q = GaugeField::haar(&g, n, Group::SU, &mut rng);
    let nodes = 16;
    let traces = plaquette_traces(&g, &q);
    let law = ConditionalLaw::new(&g, n, traces.clone(), &cpl, nodes)?;
    let terms: Vec<(usize, f64)> = plaquette_terms(&g, g.plaquettes().next().expect("one plaquette"))
        .into_iter()
        .map(|(e, c)| (e.index(), c))
        .collect();
    let nf = n as f64;
    let tr = traces[0];
    let z = tensor_grid(g.num_edges(), nodes, |t| {
        let tp: f64 = terms.iter().map(|&(i, c)| c * t[i]).sum();
        (nf * 0.25 * (C64::from_polar(1.0, tp / nf) * tr).re).exp()
    })?;
    let tensor = (z / std::f64::consts::TAU.powi(g.num_edges() as i32)).ln();
    let err = (law.log_partition()? - tensor).abs();
    out.push(Check::new(
        "quadrature.elimination_vs_tensor",
        "log Z by elimination vs tensor grid",
        err,
        1e-10,
    ));

    let f = LocalObservable::angle(&[(EdgeId(1), 1.0)], 1.0, f64::cos);
    let want = brute_force_conditional(&g, &q, &cpl, &f, 24)?;
    let got = ExpansionSetup::new(&g, &q, &cpl, 24)?.expand_conditional(&f, 1)?.total;
    out.push(Check::new(
        "cluster.expansion_vs_brute_force",
        "complete expansion on the 4-edge lattice vs tensor grid",
        (got - want).abs(),
        1e-12,
    ));
    Ok(())
}

/// A Metropolis chain started `1e-9` off the group with re-unitarization
/// every 10 sweeps must end back on it.
fn unitarity_check(cfg: &RunConfig, fault: Option<Fault>, out: &mut Vec<Check>) -> Result<(), AppError> {
    let g = Geometry::cube(2, 1)?;
    let mut settings = ChainSettings::from_config(cfg, 0);
    settings.kind = SamplerKind::Metropolis;
    settings.group = Group::U;
    settings.drift = DriftKind::Zero;
    settings.reunitarize_every = 10;
    settings.skip_reunitarization = fault == Some(Fault::SkipReunitarization);
    let mut chain = Chain::new(&g, Coupling::Uniform(0.1), settings, stream_rng(cfg.seed, 105))?;
    for m in chain.field_mut().links().to_vec().iter().enumerate() {
        let bumped = m.1.scale_real(1.0 + 1e-9);
        chain.field_mut().set_link(EdgeId(m.0 as u32), bumped);
    }
    chain.run(50)?;
    out.push(Check::new(
        "samplers.unitarity",
        "group defect after 50 sweeps from a 1e-9 perturbation",
        chain.max_defect(),
        1e-10,
    ));
    Ok(())
}

/// Runs every check; never returns early on a failed check.
pub fn run_validation(cfg: &RunConfig, fault: Option<Fault>) -> Result<ValidationReport, AppError> {
    let mut checks = Vec::new();
    basis_checks(&mut checks)?;
    projection_check(cfg.seed, &mut checks)?;
    decomposition_check(cfg.seed, &mut checks)?;
    gradient_checks(cfg.seed, &mut checks)?;
    quadrature_checks(cfg.seed, &mut checks)?;
    unitarity_check(cfg, fault, &mut checks)?;
    let passed = checks.iter().all(|c| c.passed);
    Ok(ValidationReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        checks,
        passed,
    })
}
