mod common;

use common::{enumerate, Mediators, Regime};
use lbp_core::intervention::{
    derive_policy_conditional, derive_policy_marginal, simulate_counterfactual, InterventionPlan,
    MediatorPlan, MediatorPolicy, MediatorProfile, PolicyEntry, PolicyFit, Stratification,
    StratumVariable,
};
use lbp_core::scm::ScmSpec;
use serde_json::{json, Value};

fn constant(p: f64) -> Value {
    json!({"kind": "constant", "p": p})
}

fn spec(v: &Value) -> ScmSpec {
    serde_json::from_value(v.clone()).unwrap()
}

fn strata_w() -> Stratification {
    Stratification {
        variables: vec![StratumVariable {
            name: "l0.w".into(),
            cuts: vec![],
        }],
    }
}

fn rows(p: &MediatorPolicy) -> &[PolicyEntry] {
    p.tables.as_deref().unwrap()
}

/// Mediators ignore exposure and baseline; birth hazard 0.3.
fn flat_mediators() -> Value {
    json!({
        "horizon": 2,
        "baseline": [{"name": "w", "law": constant(0.5)}],
        "exposure": {"kind": "logistic", "intercept": 0.0, "coef": {"l0.w": 1.0}},
        "covariates": [[{"name": "x", "law": {"kind": "logistic", "intercept": 0.0, "coef": {"a": 1.0}}}], []],
        "death": [constant(0.0), constant(0.0)],
        "birth": [constant(0.3), constant(0.3)],
        "infant_survival": [constant(0.9), constant(0.9)],
        "infant_hiv_free": {"kind": "logistic", "intercept": 0.0, "coef": {"a": 1.0, "l1.x": 1.0}}
    })
}

#[test]
fn fitted_policy_recovers_constant_hazard() {
    let s = spec(&flat_mediators());
    let p = derive_policy_marginal(&s, 0, PolicyFit::monte_carlo(40_000), 5, &strata_w()).unwrap();
    let mut checked = 0;
    for e in rows(&p) {
        // Horizon 2: only z2_1 can already be 1.
        let not_born = e.mediators & 0b10 == 0;
        if !not_born {
            assert_eq!(e.probs[2] + e.probs[3], 1.0);
            continue;
        }
        let born = e.probs[2] + e.probs[3];
        let se = (0.3 * 0.7 / e.weight).sqrt();
        assert!(
            (born - 0.3).abs() < 3.0 * se,
            "t={} stratum {}: {born}",
            e.t,
            e.stratum
        );
        checked += 1;
    }
    assert_eq!(checked, 4);
}

#[test]
fn deterministic_mediators_give_birth_at_first_time_point() {
    let v = json!({
        "horizon": 2,
        "baseline": [{"name": "w", "law": constant(0.5)}],
        "exposure": constant(0.5),
        "death": [constant(0.0), constant(0.0)],
        "birth": [{"kind": "table", "parents": ["a"], "p": [1.0, 0.0]}, constant(0.0)],
        "infant_survival": [constant(0.9), constant(0.9)],
        "infant_hiv_free": constant(0.5)
    });
    let p = derive_policy_marginal(&spec(&v), 0, PolicyFit::exact(), 0, &strata_w()).unwrap();
    let first: Vec<_> = rows(&p).iter().filter(|e| e.t == 1).collect();
    assert_eq!(first.len(), 2);
    for e in first {
        assert_eq!(e.probs, [0.0, 0.0, 1.0, 0.0]);
    }
}

#[test]
fn toy2_fitted_policy_matches_exact_cells() {
    let (_, m) = common::scenario_model("toy2");
    let s = spec(&common::read_json(
        &common::scenario_dir().join("toy2.scm.json"),
    ));
    let exact = derive_policy_marginal(&s, 0, PolicyFit::exact(), 0, &strata_w()).unwrap();
    let fitted =
        derive_policy_marginal(&s, 0, PolicyFit::monte_carlo(100_000), 11, &strata_w()).unwrap();
    let reference = common::DerivedPolicy::new(&m, 0, false);
    assert_eq!(rows(&exact).len(), rows(&fitted).len());
    for (e, f) in rows(&exact).iter().zip(rows(&fitted)) {
        assert_eq!((e.t, e.stratum, e.mediators), (f.t, f.stratum, f.mediators));
        let hist: Vec<(u8, u8)> = (0..e.t - 1)
            .map(|r| {
                (
                    (e.mediators >> (2 * r) & 1) as u8,
                    (e.mediators >> (2 * r + 1) & 1) as u8,
                )
            })
            .collect();
        let want = reference.cell(e.t, &[e.stratum as u8], &hist).unwrap();
        for k in 0..4 {
            assert!((e.probs[k] - want[k]).abs() < 1e-12);
            let se = (want[k] * (1.0 - want[k]) / f.weight).sqrt();
            assert!(
                (f.probs[k] - want[k]).abs() <= 3.0 * se + 1e-12,
                "t={} k={k}: {} vs {}",
                e.t,
                f.probs[k],
                want[k]
            );
        }
    }
}

#[test]
fn conditional_policy_equals_marginal_when_mediators_ignore_covariates() {
    let s = spec(&flat_mediators());
    let marginal = derive_policy_marginal(&s, 0, PolicyFit::exact(), 0, &strata_w()).unwrap();
    let conditional = derive_policy_conditional(&s, 0, PolicyFit::exact(), 0, &strata_w()).unwrap();
    for c in rows(&conditional) {
        let m = rows(&marginal)
            .iter()
            .find(|e| (e.t, e.stratum, e.mediators) == (c.t, c.stratum, c.mediators))
            .unwrap();
        for k in 0..4 {
            assert!((c.probs[k] - m.probs[k]).abs() < 1e-12);
        }
    }
    let fitted =
        derive_policy_conditional(&s, 0, PolicyFit::monte_carlo(50_000), 3, &strata_w()).unwrap();
    for c in rows(&fitted).iter().filter(|e| e.t == 1) {
        let se = (0.21 / c.weight).sqrt();
        assert!((c.probs[2] - 0.3).abs() < 3.0 * se);
    }
}

#[test]
fn covariate_effect_on_birth_shows_only_in_conditional_policy() {
    let mut v = flat_mediators();
    v["birth"][0] = json!({"kind": "logistic", "intercept": -1.0, "coef": {"l1.x": 1.5}});
    let s = spec(&v);
    let conditional = derive_policy_conditional(&s, 0, PolicyFit::exact(), 0, &strata_w()).unwrap();
    let marginal = derive_policy_marginal(&s, 0, PolicyFit::exact(), 0, &strata_w()).unwrap();
    for stratum in 0..2 {
        let at = |x: u64| {
            rows(&conditional)
                .iter()
                .find(|e| e.t == 1 && e.stratum == stratum && e.history == x)
                .unwrap()
                .probs[2]
        };
        // Positive coefficient: birth more likely when l1.x = 1.
        assert!(at(1) > at(0) + 0.2);
        let pooled: Vec<_> = rows(&marginal)
            .iter()
            .filter(|e| e.t == 1 && e.stratum == stratum)
            .collect();
        assert_eq!(pooled.len(), 1);
        assert!(pooled[0].probs[2] > at(0) && pooled[0].probs[2] < at(1));
    }
}

#[test]
fn controlled_survival_and_birth_regime() {
    let s = spec(&common::read_json(
        &common::scenario_dir().join("toy2.scm.json"),
    ));
    let plan = InterventionPlan::set_exposure(1).with_mediator(MediatorPlan::Controlled(
        MediatorProfile::survival_and_birth(2),
    ));
    let pop = simulate_counterfactual(&s, &plan, 5_000, 8).unwrap();
    for r in &pop.rows {
        assert_eq!(r.a, 1);
        assert_eq!(r.z2, vec![1, 1]);
        assert_eq!(r.z1, vec![0, 0]);
        assert!(r.y1.iter().all(Option::is_some));
    }
}

#[test]
fn set_exposure_matches_natural_law_within_arm() {
    // Randomized exposure: do(A = a) has the natural law given A = a.
    let (_, m) = common::scenario_model("toy2");
    let s = spec(&common::read_json(
        &common::scenario_dir().join("toy2.scm.json"),
    ));
    let natural = enumerate(&m, &Regime::natural());
    for a in [0u8, 1] {
        let intervened = enumerate(&m, &Regime::exposed(a, Mediators::Natural));
        let n = 100_000;
        let pop = simulate_counterfactual(&s, &InterventionPlan::set_exposure(a), n, 21 + a as u64)
            .unwrap();
        let arm_mass: f64 = natural
            .iter()
            .filter(|(x, _)| x["a"] == Some(a))
            .map(|(_, p)| p)
            .sum();
        for node in ["z1_1", "z2_1", "z1_2", "z2_2", "l2.art", "y"] {
            let conditional: f64 = natural
                .iter()
                .filter(|(x, _)| x["a"] == Some(a) && x[node] == Some(1))
                .map(|(_, p)| p)
                .sum::<f64>()
                / arm_mass;
            let under_do: f64 = intervened
                .iter()
                .filter(|(x, _)| x[node] == Some(1))
                .map(|(_, p)| p)
                .sum();
            assert!((conditional - under_do).abs() < 1e-12, "{node}");
            let freq = pop
                .rows
                .iter()
                .filter(|r| node_value(r, node) == Some(1))
                .count() as f64
                / n as f64;
            let se = (under_do * (1.0 - under_do) / n as f64).sqrt();
            assert!(
                (freq - under_do).abs() < 3.0 * se,
                "{node}: {freq} vs {under_do}"
            );
        }
    }
}

fn node_value(r: &lbp_core::scm::Trajectory, node: &str) -> Option<u8> {
    match node {
        "z1_1" => Some(r.z1[0]),
        "z2_1" => Some(r.z2[0]),
        "z1_2" => Some(r.z1[1]),
        "z2_2" => Some(r.z2[1]),
        "l2.art" => Some(r.l[1][0]),
        "y" => Some(r.y),
        _ => unreachable!(),
    }
}

#[test]
fn certain_birth_policy_gives_full_denominator() {
    let s = spec(&common::read_json(
        &common::scenario_dir().join("toy2.scm.json"),
    ));
    let policy = MediatorPolicy::from_hazards(&[0.0, 0.2], &[1.0, 0.5], true).unwrap();
    for a in [0, 1] {
        let plan = InterventionPlan::set_exposure(a)
            .with_mediator(MediatorPlan::Stochastic(policy.clone()));
        let pop = simulate_counterfactual(&s, &plan, 5_000, 4).unwrap();
        assert!(pop.rows.iter().all(|r| r.z2[1] == 1));
    }
}

#[test]
fn hazard_policy_rejects_bad_input() {
    assert!(MediatorPolicy::from_hazards(&[0.1], &[0.1, 0.2], true).is_err());
    assert!(MediatorPolicy::from_hazards(&[1.2], &[0.1], true).is_err());
    assert!(MediatorPolicy::from_hazards(&[], &[], true).is_err());
}

#[test]
fn policy_horizon_must_match_model() {
    let s = spec(&common::read_json(
        &common::scenario_dir().join("toy2.scm.json"),
    ));
    let policy = MediatorPolicy::from_hazards(&[0.1], &[0.5], true).unwrap();
    let plan = InterventionPlan::set_exposure(1).with_mediator(MediatorPlan::Stochastic(policy));
    let err = simulate_counterfactual(&s, &plan, 10, 1).unwrap_err();
    assert_eq!(err.kind(), "invalid_policy");
}
