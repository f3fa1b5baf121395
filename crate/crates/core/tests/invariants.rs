use proptest::prelude::*;
use rand::Rng;
use ymlattice_core::algebra::Group;
use ymlattice_core::cluster_expansion::{brute_force_conditional, ExpansionSetup, LocalObservable};
use ymlattice_core::lattice::{enumerate_clusters, is_cluster, EdgeId, Geometry, Loop};
use ymlattice_core::model::{plaquette_traces, random_gauge, wilson_action, Coupling, GaugeField};
use ymlattice_core::observables::wilson_loop;
use ymlattice_core::rng::stream_rng;
use ymlattice_core::stats::{fit_decay, DecayOutcome, DecayPoint};

fn group(u: bool) -> Group {
    if u {
        Group::U
    } else {
        Group::SU
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wilson_loops_are_bounded(seed in any::<u64>(), n in 2usize..6, u in any::<bool>(), la in 1usize..3, lb in 1usize..3) {
        let g = Geometry::cube(2, 2).unwrap();
        let q = GaugeField::haar(&g, n, group(u), &mut stream_rng(seed, 0));
        let l = Loop::rectangle(&g, &[-2, -2], 0, 1, la, lb).unwrap();
        prop_assert!(wilson_loop(&q, &l).norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn action_and_loops_are_gauge_invariant(seed in any::<u64>(), n in 2usize..5, u in any::<bool>(), beta in 0.0f64..2.0) {
        let g = Geometry::cube(2, 1).unwrap();
        let mut rng = stream_rng(seed, 1);
        let q = GaugeField::haar(&g, n, group(u), &mut rng);
        let gauge = random_gauge(&g, n, group(u), &mut rng);
        let qg = q.gauge_transform(&g, &gauge).unwrap();
        let cpl = Coupling::Uniform(beta);
        prop_assert!((wilson_action(&g, &q, &cpl) - wilson_action(&g, &qg, &cpl)).abs() < 1e-10);
        let l = Loop::rectangle(&g, &[-1, -1], 0, 1, 2, 2).unwrap();
        prop_assert!((wilson_loop(&q, &l) - wilson_loop(&qg, &l)).norm() < 1e-12);
    }

    #[test]
    fn decay_fit_recovers_rate(rate in 0.3f64..3.0, amp in 0.01f64..10.0, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 2);
        let points: Vec<DecayPoint> = (0..6)
            .map(|r| {
                let v = amp * (-rate * r as f64).exp();
                // 1% multiplicative noise
                let noisy = v * (1.0 + 0.01 * (rng.random::<f64>() * 2.0 - 1.0));
                DecayPoint { distance: r as f64, value: noisy, error: 0.01 * v }
            })
            .collect();
        match fit_decay(&points, 2.0).unwrap() {
            DecayOutcome::Fit(f) => {
                prop_assert!((f.rate() - rate).abs() <= 0.1 * rate, "fitted {} for {}", f.rate(), rate);
                prop_assert!(f.r2 > 0.99);
            }
            DecayOutcome::BelowNoiseFloor { .. } => prop_assert!(false, "clean decay rejected"),
        }
    }

    #[test]
    fn enumerated_sets_are_clusters(m in 1usize..4, x in -1i64..1) {
        let g = Geometry::cube(2, 2).unwrap();
        let e = g.edge_at(&[x, 0], 0).unwrap();
        let en = enumerate_clusters(&g, &[e], m, 100_000).unwrap();
        for (size, level) in en.by_size.iter().enumerate() {
            for k in level {
                prop_assert_eq!(k.plaquettes.len(), size);
                prop_assert!(is_cluster(&g, &k.plaquettes, &[e]));
            }
        }
    }
}

#[test]
fn noise_only_scan_is_below_floor() {
    let points: Vec<DecayPoint> = (0..5)
        .map(|r| DecayPoint {
            distance: r as f64,
            value: 1e-4,
            error: 1e-3,
        })
        .collect();
    assert!(matches!(
        fit_decay(&points, 2.0).unwrap(),
        DecayOutcome::BelowNoiseFloor { above_floor: 0, .. }
    ));
}

#[test]
fn full_expansion_is_exact_at_strong_activity() {
    let g = Geometry::new_box(&[2, 2]).unwrap();
    let q = GaugeField::haar(&g, 4, Group::SU, &mut stream_rng(3, 3));
    let cpl = Coupling::Uniform(0.5);
    let f = LocalObservable::angle(&[(EdgeId(0), 1.0)], 1.0, f64::cos);
    let want = brute_force_conditional(&g, &q, &cpl, &f, 20).unwrap();
    let got = ExpansionSetup::new(&g, &q, &cpl, 20)
        .unwrap()
        .expand_conditional(&f, g.num_plaquettes())
        .unwrap();
    assert!((got.total - want).abs() < 1e-12, "{} vs {}", got.total, want);
    assert_eq!(plaquette_traces(&g, &q).len(), 1);
}
