use std::sync::Arc;

use periodic_ldp::config::ModelConfig;
use periodic_ldp::contract::{
    contract, scgf, symmetric_mean_rate, two_state_flow_rate, ContractionProblem, ContractionSettings,
};
use periodic_ldp::entropy::{gc_check, GcInput, Relation};
use periodic_ldp::grid::current_from_flow;
use periodic_ldp::ldp::{phi_unchecked, rate_i};
use periodic_ldp::model::{build_example, validate_protocol, ExampleModel, Graph, RateProtocol, TimeGrid};
use periodic_ldp::sample::SampleSpec;
use periodic_ldp::simulate::{accumulate, replica_rng, sample_path};
use periodic_ldp::steady::oscillatory_state;
use proptest::prelude::*;

fn triangle_protocol(bins: usize) -> RateProtocol {
    let g = Arc::new(Graph::with_states(3, vec![(0, 1), (1, 0), (1, 2), (2, 1), (2, 0), (0, 2)]).unwrap());
    let grid = TimeGrid::new(1.0, bins).unwrap();
    RateProtocol::from_fn(g, grid, |e, t| (1.0 + 0.2 * e as f64) * (1.0 + 0.5 * (std::f64::consts::TAU * t + e as f64).sin()))
}

#[test]
fn dropping_the_flow_target_never_increases_the_value() {
    let p = build_example(&ExampleModel::DefectCenter { a0: 1.0, gamma: 0.5, b0: 2.0 }, 1.0, 32).unwrap().protocol;
    let bar_mu = vec![0.4, 0.6];
    let settings = ContractionSettings::default();
    let free = contract(&ContractionProblem { protocol: p.clone(), bar_mu: Some(bar_mu.clone()), bar_q: None, settings: settings.clone() })
        .unwrap();
    assert!(free.converged);
    for bq in [0.3, 0.7, 1.5] {
        let fixed = contract(&ContractionProblem {
            protocol: p.clone(),
            bar_mu: Some(bar_mu.clone()),
            bar_q: Some(vec![bq, bq]),
            settings: settings.clone(),
        })
        .unwrap();
        assert!(fixed.converged);
        assert!(free.value.value() <= fixed.value.value() + 1e-9);
    }
}

#[test]
fn optimizer_beats_the_symmetric_candidate() {
    let p = build_example(&ExampleModel::SymmetricResonance { k: 0.7 }, 2.0, 32).unwrap().protocol;
    for bq in [0.2, 1.0, 2.5] {
        let cand = two_state_flow_rate(&p, bq).unwrap();
        let at_candidate: f64 = (0..32)
            .flat_map(|k| (0..2).map(move |e| (k, e)))
            .map(|(k, e)| phi_unchecked(cand.q.get(e, k), 0.5 * p.rate(e, k)))
            .sum::<f64>()
            / 32.0;
        assert!((at_candidate - cand.value).abs() < 1e-12);
        let res = contract(&ContractionProblem {
            protocol: p.clone(),
            bar_mu: None,
            bar_q: Some(vec![bq, bq]),
            settings: ContractionSettings::default(),
        })
        .unwrap();
        assert!(res.value.value() <= at_candidate + 1e-6);
        assert!(res.constraint_residual < 1e-8);
    }
}

#[test]
fn optimizer_is_deterministic() {
    let p = triangle_protocol(16);
    let st = oscillatory_state(&p).unwrap();
    let mut bar_mu = st.pi.time_average();
    bar_mu[0] += 0.05;
    bar_mu[1] -= 0.05;
    let prob = ContractionProblem { protocol: p, bar_mu: Some(bar_mu), bar_q: None, settings: ContractionSettings::default() };
    let a = contract(&prob).unwrap();
    let b = contract(&prob).unwrap();
    assert_eq!(a.mu, b.mu);
    assert_eq!(a.q, b.q);
    assert_eq!(a.value, b.value);
    assert!(a.converged && a.value.value() > 0.0);
}

#[test]
fn steady_pair_reversal_residual_decays_first_order() {
    // the residual is the summed relative entropy between consecutive bins
    let mut prev = f64::INFINITY;
    for bins in [64, 128, 256] {
        let p = triangle_protocol(bins);
        let st = oscillatory_state(&p).unwrap();
        let r = gc_check(Relation::Luci1, GcInput::Current(&st.pi, &current_from_flow(&st.q_pi)), &p).unwrap();
        assert!(r.residual < prev / 1.8, "M={bins}: {}", r.residual);
        assert!(r.residual * (bins as f64) < 1.0);
        prev = r.residual;
    }
}

#[test]
fn empirical_pairs_have_finite_rate() {
    let p = build_example(&ExampleModel::QuantumDot { gamma: 3.0, x_offset: 0.0, x_amplitude: 1.0 }, 1.0, 8).unwrap().protocol;
    let path = sample_path(&p, 0, 400, 11).unwrap();
    let tr = accumulate(&path, p.graph_arc(), p.grid()).unwrap();
    // empirical pairs satisfy continuity only up to boundary effects
    let v = rate_i(&tr.mu, &tr.q, &p);
    assert!(v.is_ok());
}

#[test]
fn shipped_configs_are_valid() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let p = ModelConfig::load(&path).unwrap().protocol(None).unwrap();
            assert!(validate_protocol(&p).is_empty(), "{}", path.display());
            seen += 1;
        }
    }
    assert!(seen >= 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scgf_is_convex_along_lines(seed in 0u64..1000, s in -1.5f64..1.5, h in 0.05f64..0.5) {
        let p = triangle_protocol(8);
        let mut rng = replica_rng(seed, 0);
        let dir: Vec<f64> = (0..48).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let at = |t: f64| scgf(&p, &dir.iter().map(|d| t * d).collect::<Vec<_>>()).unwrap();
        prop_assert!(at(s - h) + at(s + h) - 2.0 * at(s) >= -1e-10);
    }

    #[test]
    fn symmetric_scgf_matches_poisson(k in 0.0f64..1.5, s in -1.0f64..1.0) {
        let p = build_example(&ExampleModel::SymmetricResonance { k }, 1.0, 16).unwrap().protocol;
        let r_bar = symmetric_mean_rate(&p).unwrap();
        let v = scgf(&p, &[s; 32]).unwrap();
        prop_assert!((v - r_bar * s.exp_m1()).abs() < 1e-10);
    }

    #[test]
    fn random_samples_have_nonnegative_rate(seed in 0u64..500) {
        let p = triangle_protocol(16);
        let g = p.graph_arc().clone();
        let spec = SampleSpec::draw(g, 1.0, 0.3, &mut replica_rng(seed, 2));
        let (mu, q) = spec.tabulate(p.grid()).unwrap();
        let v = rate_i(&mu, &q, &p).unwrap();
        prop_assert!(v.is_finite() && v.value() >= 0.0);
    }
}
