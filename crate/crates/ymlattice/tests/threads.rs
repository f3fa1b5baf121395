//! Several chains per point: results agree with one chain and stay
//! reproducible.

use ymlattice::config::RunConfig;
use ymlattice::experiments::large_n_sweep;

fn cfg(threads: usize) -> RunConfig {
    RunConfig::from_toml(&format!(
        r#"
seed = 99
threads = {threads}
output_dir = "unused"
[geometry]
dim = 2
l = 1
[model]
n = 2
beta = 0.1
[sampler]
kind = "metropolis"
burn_in = 300
sweeps = 4000
eps = 0.5
eps_theta = 1.5
h = 0.05
n_inner = 4
drift = "quadrature"
nodes = 16
reunitarize_every = 100
[experiment]
name = "largen"
n_values = [2, 3, 4]
"#
    ))
    .unwrap()
}

#[test]
fn two_chains_agree_with_one() {
    let one = large_n_sweep(&cfg(1)).unwrap();
    let two = large_n_sweep(&cfg(2)).unwrap();
    for (a, b) in one.rows.iter().zip(&two.rows) {
        assert_eq!(a.n, b.n);
        let z = (a.variance - b.variance).abs() / (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!(z < 4.0, "N = {}: {} vs {} ({z:.2} sigma)", a.n, a.variance, b.variance);
        assert!(b.n_eff > a.n_eff, "two chains should carry more samples");
    }
}

#[test]
fn multi_chain_runs_are_reproducible() {
    let a = large_n_sweep(&cfg(2)).unwrap();
    let b = large_n_sweep(&cfg(2)).unwrap();
    assert_eq!(a, b);
}
