mod common;

use lbp_core::scm::{
    enumerate_exact, simulate_natural, validate_scm, Population, ScmSpec, ViolationKind,
};
use proptest::prelude::*;
use serde_json::{json, Value};

fn spec(v: Value) -> ScmSpec {
    serde_json::from_value(v).unwrap()
}

fn constant(p: f64) -> Value {
    json!({"kind": "constant", "p": p})
}

fn minimal(horizon: usize) -> Value {
    json!({
        "horizon": horizon,
        "exposure": constant(0.5),
        "death": vec![constant(0.1); horizon],
        "birth": vec![constant(0.4); horizon],
        "infant_survival": vec![constant(0.9); horizon],
        "infant_hiv_free": constant(0.8)
    })
}

#[test]
fn minimal_spec_validates() {
    assert!(validate_scm(&spec(minimal(1))).is_ok());
}

#[test]
fn unknown_parent_is_reported_by_name() {
    let mut v = minimal(1);
    v["birth"][0] = json!({"kind": "logistic", "intercept": 0.0, "coef": {"X9": 1.0}});
    let report = validate_scm(&spec(v));
    assert_eq!(report.violations.len(), 1);
    assert_eq!(
        report.violations[0].kind,
        ViolationKind::UnknownParent {
            parent: "X9".into()
        }
    );
    assert!(report.to_string().contains("X9"));
}

#[test]
fn table_probability_above_one_is_reported() {
    let mut v = minimal(1);
    v["infant_hiv_free"] = json!({"kind": "table", "parents": ["a"], "p": [0.5, 1.3]});
    let report = validate_scm(&spec(v));
    assert_eq!(report.violations.len(), 1);
    assert!(matches!(
        report.violations[0].kind,
        ViolationKind::ProbabilityOutOfRange { value, .. } if value == 1.3
    ));
}

#[test]
fn all_deterministic_laws_give_y_one() {
    let v = json!({
        "horizon": 2,
        "exposure": constant(1.0),
        "death": [constant(0.0), constant(0.0)],
        "birth": [constant(1.0), constant(0.0)],
        "infant_survival": [constant(1.0), constant(1.0)],
        "infant_hiv_free": constant(1.0)
    });
    let pop = simulate_natural(&spec(v), 2_000, 1).unwrap();
    assert!(pop
        .rows
        .iter()
        .all(|r| r.y == 1 && r.a == 1 && r.z2 == vec![1, 1]));
    assert_eq!(pop.violation_count(), 0);
}

#[test]
fn no_births_leave_outcomes_missing() {
    let mut v = minimal(3);
    v["birth"] = json!(vec![constant(0.0); 3]);
    let pop = simulate_natural(&spec(v), 2_000, 2).unwrap();
    for r in &pop.rows {
        assert!(r.y1.iter().all(Option::is_none));
        assert_eq!(r.y2, None);
        assert_eq!(r.y, 0);
    }
}

#[test]
fn toy2_outcome_mean_matches_exact_law() {
    let (scenario, _) = common::scenario_model("toy2");
    let scm =
        common::read_json(&common::scenario_dir().join(scenario["scm_file"].as_str().unwrap()));
    let s = spec(scm);
    let exact = enumerate_exact(&s).unwrap().probability(|t| t.y == 1);
    let n = 200_000;
    let pop = simulate_natural(&s, n, 99).unwrap();
    let se = (exact * (1.0 - exact) / n as f64).sqrt();
    assert!(
        (pop.mean_y() - exact).abs() < 3.0 * se,
        "{} vs {exact}",
        pop.mean_y()
    );
}

#[test]
fn simulation_is_reproducible_and_seed_sensitive() {
    let s = spec(minimal(3));
    let a = simulate_natural(&s, 5_000, 17).unwrap();
    let b = simulate_natural(&s, 5_000, 17).unwrap();
    let c = simulate_natural(&s, 5_000, 18).unwrap();
    assert_eq!(a.to_csv_string(), b.to_csv_string());
    assert_ne!(a.to_csv_string(), c.to_csv_string());
}

#[test]
fn population_csv_round_trip() {
    let scenario = common::read_json(&common::scenario_dir().join("stress.scenario.json"));
    let s = spec(scenario["scm"].clone());
    let pop = simulate_natural(&s, 500, 3).unwrap();
    let text = pop.to_csv_string();
    let back = Population::read_csv(text.as_bytes()).unwrap();
    assert_eq!(back.to_csv_string(), text);
    assert_eq!(back.rows.len(), 500);
}

fn logistic(intercept: f64, coef: &[(&str, f64)]) -> Value {
    let coef: serde_json::Map<String, Value> = coef
        .iter()
        .map(|(k, c)| (k.to_string(), json!(c)))
        .collect();
    json!({"kind": "logistic", "intercept": intercept, "coef": coef})
}

/// A random valid model: logistic laws over parents each node may read.
fn random_spec(horizon: usize, c: &[f64], blocks: bool, shared: bool) -> ScmSpec {
    let mut k = 0;
    let mut next = || {
        k += 1;
        c[k % c.len()]
    };
    let mut covariates = Vec::new();
    let (mut death, mut birth, mut infant) = (Vec::new(), Vec::new(), Vec::new());
    for t in 1..=horizon {
        let mut cov_parents = vec![("a", next()), ("l0.w", next())];
        let prev_z1 = format!("z1_{}", t - 1);
        let prev_z2 = format!("z2_{}", t - 1);
        let prev_l = format!("l{}.x", t - 1);
        if t > 1 {
            cov_parents.push((&prev_z1, next()));
            cov_parents.push((&prev_z2, next()));
            cov_parents.push((&prev_l, next()));
        }
        covariates.push(json!([{"name": "x", "law": logistic(next(), &cov_parents)}]));
        let lx = format!("l{t}.x");
        let z1 = format!("z1_{t}");
        let z2 = format!("z2_{t}");
        let mut dp = vec![("a", next()), (lx.as_str(), next())];
        if t > 1 {
            dp.push((&prev_z2, next()));
        }
        death.push(logistic(next() - 2.0, &dp));
        birth.push(logistic(
            next() - 1.0,
            &[("a", next()), (lx.as_str(), next()), (z1.as_str(), next())],
        ));
        let prev_y1 = format!("y1_{}", t - 1);
        let mut ip = vec![("a", next()), (z1.as_str(), next()), (z2.as_str(), next())];
        if t > 1 {
            ip.push((&prev_y1, next()));
        }
        infant.push(logistic(next() + 1.0, &ip));
    }
    let last = format!("y1_{horizon}");
    spec(json!({
        "horizon": horizon,
        "death_blocks_birth": blocks,
        "shared_mediator_noise": shared,
        "baseline": [
            {"name": "w", "law": constant(0.4)},
            {"name": "age", "law": {"kind": "uniform", "lo": -1.0, "hi": 1.0}}
        ],
        "exposure": logistic(0.0, &[("l0.w", next()), ("l0.age", next())]),
        "covariates": covariates,
        "death": death,
        "birth": birth,
        "infant_survival": infant,
        "infant_hiv_free": logistic(next(), &[("a", next()), (last.as_str(), next()), ("z2_1", next())])
    }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_models_never_break_trajectory_invariants(
        horizon in 1usize..6,
        coefs in prop::collection::vec(-3.0f64..3.0, 8..24),
        blocks in any::<bool>(),
        shared in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let s = random_spec(horizon, &coefs, blocks, shared);
        prop_assert!(validate_scm(&s).is_ok(), "{}", validate_scm(&s));
        let pop = simulate_natural(&s, 400, seed).unwrap();
        for r in &pop.rows {
            prop_assert!(r.violations().is_empty(), "{:?} in {:?}", r.violations(), r);
            if blocks {
                for t in 0..horizon {
                    // No new birth in the period the mother dies or after.
                    let newly_born = r.z2[t] == 1 && (t == 0 || r.z2[t - 1] == 0);
                    prop_assert!(!(newly_born && r.z1[t] == 1));
                }
            }
        }
    }

    #[test]
    fn exact_law_sums_to_one(
        coefs in prop::collection::vec(-3.0f64..3.0, 8..24),
        blocks in any::<bool>(),
    ) {
        let mut s = random_spec(2, &coefs, blocks, false);
        s.baseline.truncate(1);
        if let lbp_core::scm::Law::Logistic { coef, .. } = &mut s.exposure {
            coef.remove("l0.age");
        }
        let law = enumerate_exact(&s).unwrap();
        prop_assert!((law.total() - 1.0).abs() < 1e-12);
        prop_assert!(law.atoms.iter().all(|a| a.trajectory.violations().is_empty()));
    }
}

#[test]
fn every_node_marginal_matches_exact_law() {
    let n = 100_000;
    for name in [
        "toy2",
        "confounded-toy2",
        "mediator-only-effect",
        "positivity-zero-support",
    ] {
        let s = lbp_core::scenario::load_scenario(
            common::scenario_dir().join(format!("{name}.scenario.json")),
        )
        .unwrap();
        let law = enumerate_exact(s.spec()).unwrap();
        let csv = simulate_natural(s.spec(), n, 5).unwrap().to_csv_string();
        let mut r = csv::Reader::from_reader(csv.as_bytes());
        let header: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
        let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        for (k, node) in header.iter().enumerate() {
            for (value, field) in [(Some(1u8), "1"), (None, "")] {
                let exact = law.marginal(node, value).unwrap();
                let freq = rows.iter().filter(|row| &row[k] == field).count() as f64 / n as f64;
                let se = (exact * (1.0 - exact) / n as f64).sqrt();
                assert!(
                    (freq - exact).abs() <= 4.0 * se,
                    "{name} {node}={field:?}: {freq} vs {exact}"
                );
            }
        }
    }
}
