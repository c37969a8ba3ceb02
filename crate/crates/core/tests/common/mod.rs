//! Brute-force reference evaluator for the test suites.
//!
//! Reads model JSON directly and expands every node's law in causal order,
//! keeping all branches with positive probability. Shares no code with the
//! engine: laws, absorbing rules, missingness and policy lookups are
//! re-implemented here from their definitions.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::Value;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario_dir() -> PathBuf {
    repo_root().join("scenarios")
}

pub fn read_json(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

/// The model of a scenario file, following `scm_file` if present.
pub fn scenario_model(name: &str) -> (Value, Model) {
    let dir = scenario_dir();
    let scenario = read_json(&dir.join(format!("{name}.scenario.json")));
    let scm = match scenario.get("scm") {
        Some(s) => s.clone(),
        None => read_json(&dir.join(scenario["scm_file"].as_str().unwrap())),
    };
    (scenario, Model::from_json(&scm))
}

#[derive(Debug, Clone)]
pub enum RefLaw {
    Constant(f64),
    Logistic(f64, Vec<(String, f64)>),
    Table(Vec<String>, Vec<f64>),
    Categorical(Vec<f64>),
}

impl RefLaw {
    fn from_json(v: &Value) -> Self {
        match v["kind"].as_str().unwrap() {
            "constant" => RefLaw::Constant(v["p"].as_f64().unwrap()),
            "logistic" => RefLaw::Logistic(
                v["intercept"].as_f64().unwrap(),
                v.get("coef")
                    .and_then(Value::as_object)
                    .map(|m| {
                        m.iter()
                            .map(|(k, c)| (k.clone(), c.as_f64().unwrap()))
                            .collect()
                    })
                    .unwrap_or_default(),
            ),
            "table" => RefLaw::Table(
                v["parents"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|p| p.as_str().unwrap().to_string())
                    .collect(),
                v["p"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|p| p.as_f64().unwrap())
                    .collect(),
            ),
            "categorical" => RefLaw::Categorical(
                v["probs"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|p| p.as_f64().unwrap())
                    .collect(),
            ),
            other => panic!("reference evaluator cannot enumerate law kind {other}"),
        }
    }
}

/// Node values; `None` is structurally missing.
pub type State = BTreeMap<String, Option<u8>>;

#[derive(Debug, Clone)]
pub struct Model {
    pub horizon: usize,
    pub death_blocks_birth: bool,
    pub baseline: Vec<(String, RefLaw)>,
    pub exposure: RefLaw,
    pub covariates: Vec<Vec<(String, RefLaw)>>,
    pub death: Vec<RefLaw>,
    pub birth: Vec<RefLaw>,
    pub infant: Vec<RefLaw>,
    pub hiv: RefLaw,
}

impl Model {
    pub fn from_json(v: &Value) -> Self {
        assert!(
            !v.get("shared_mediator_noise")
                .and_then(Value::as_bool)
                .unwrap_or(false),
            "reference evaluator handles independent mediator noise only"
        );
        let horizon = v["horizon"].as_u64().unwrap() as usize;
        let named = |list: &Value, prefix: &str| -> Vec<(String, RefLaw)> {
            list.as_array()
                .map(|a| {
                    a.iter()
                        .map(|n| {
                            (
                                format!("{prefix}.{}", n["name"].as_str().unwrap()),
                                RefLaw::from_json(&n["law"]),
                            )
                        })
                        .collect()
                })
                .unwrap_or_default()
        };
        let laws = |key: &str| {
            v[key]
                .as_array()
                .unwrap()
                .iter()
                .map(RefLaw::from_json)
                .collect::<Vec<_>>()
        };
        let covariates = (1..=horizon)
            .map(|t| {
                v.get("covariates")
                    .and_then(|c| c.get(t - 1))
                    .map(|c| named(c, &format!("l{t}")))
                    .unwrap_or_default()
            })
            .collect();
        Model {
            horizon,
            death_blocks_birth: v
                .get("death_blocks_birth")
                .and_then(Value::as_bool)
                .unwrap_or(true),
            baseline: named(v.get("baseline").unwrap_or(&Value::Null), "l0"),
            exposure: RefLaw::from_json(&v["exposure"]),
            covariates,
            death: laws("death"),
            birth: laws("birth"),
            infant: laws("infant_survival"),
            hiv: RefLaw::from_json(&v["infant_hiv_free"]),
        }
    }

    fn radix(&self, name: &str) -> usize {
        if name.starts_with("y1_") || name == "y2" {
            return 3;
        }
        for (n, law) in &self.baseline {
            if n == name {
                if let RefLaw::Categorical(p) = law {
                    return p.len();
                }
            }
        }
        2
    }

    /// `P(node = 1)` for a binary law.
    pub fn prob(&self, law: &RefLaw, s: &State) -> f64 {
        let value = |name: &str| -> Option<u8> {
            *s.get(name)
                .unwrap_or_else(|| panic!("{name} read before it is set"))
        };
        match law {
            RefLaw::Constant(p) => *p,
            RefLaw::Logistic(b0, coef) => {
                let eta: f64 = b0
                    + coef
                        .iter()
                        .map(|(k, c)| c * value(k).map_or(0.0, f64::from))
                        .sum::<f64>();
                1.0 / (1.0 + (-eta).exp())
            }
            RefLaw::Table(parents, p) => {
                let mut idx = 0;
                for name in parents {
                    let r = self.radix(name);
                    let level = match value(name) {
                        Some(x) => x as usize,
                        None => r - 1,
                    };
                    idx = idx * r + level;
                }
                p[idx]
            }
            RefLaw::Categorical(_) => panic!("categorical law used as binary"),
        }
    }

    /// Baseline values as the stratum key of the default stratification.
    pub fn baseline_key(&self, s: &State) -> Vec<u8> {
        self.baseline.iter().map(|(n, _)| s[n].unwrap()).collect()
    }

    pub fn covariate_names(&self, through: usize) -> Vec<String> {
        self.covariates[..through]
            .iter()
            .flatten()
            .map(|(n, _)| n.clone())
            .collect()
    }
}

/// A joint law of `(z1_t, z2_t)` indexed `z1 + 2 z2`, given the state so far.
pub type PolicyFn<'a> = dyn Fn(usize, &State) -> [f64; 4] + 'a;

pub enum Mediators<'a> {
    Natural,
    Controlled { z1: Vec<u8>, z2: Vec<u8> },
    Policy(Box<PolicyFn<'a>>),
}

pub struct Regime<'a> {
    pub exposure: Option<u8>,
    pub mediators: Mediators<'a>,
}

impl<'a> Regime<'a> {
    pub fn natural() -> Self {
        Regime {
            exposure: None,
            mediators: Mediators::Natural,
        }
    }

    pub fn exposed(a: u8, mediators: Mediators<'a>) -> Self {
        Regime {
            exposure: Some(a),
            mediators,
        }
    }
}

fn split(
    atoms: Vec<(State, f64)>,
    name: &str,
    f: impl Fn(&State) -> Vec<(Option<u8>, f64)>,
) -> Vec<(State, f64)> {
    let mut out = Vec::with_capacity(atoms.len() * 2);
    for (s, p) in atoms {
        for (v, q) in f(&s) {
            if q > 0.0 {
                let mut s2 = s.clone();
                s2.insert(name.to_string(), v);
                out.push((s2, p * q));
            }
        }
    }
    out
}

fn coin(p: f64) -> Vec<(Option<u8>, f64)> {
    vec![(Some(0), 1.0 - p), (Some(1), p)]
}

fn fixed(v: Option<u8>) -> Vec<(Option<u8>, f64)> {
    vec![(v, 1.0)]
}

/// Every trajectory with positive probability under `regime`.
pub fn enumerate(m: &Model, regime: &Regime) -> Vec<(State, f64)> {
    let mut atoms: Vec<(State, f64)> = vec![(State::new(), 1.0)];
    for (name, law) in &m.baseline {
        atoms = split(atoms, name, |s| match law {
            RefLaw::Categorical(p) => p
                .iter()
                .enumerate()
                .map(|(k, q)| (Some(k as u8), *q))
                .collect(),
            l => coin(m.prob(l, s)),
        });
    }
    atoms = split(atoms, "a", |s| match regime.exposure {
        Some(a) => fixed(Some(a)),
        None => coin(m.prob(&m.exposure, s)),
    });
    for t in 1..=m.horizon {
        for (name, law) in &m.covariates[t - 1] {
            atoms = split(atoms, name, |s| coin(m.prob(law, s)));
        }
        let (z1, z2, y1) = (format!("z1_{t}"), format!("z2_{t}"), format!("y1_{t}"));
        let prev = |s: &State, node: &str| -> u8 {
            if t == 1 {
                0
            } else {
                s[&format!("{node}_{}", t - 1)].unwrap()
            }
        };
        atoms = split(atoms, &z1, |s| {
            if let Mediators::Controlled { z1, .. } = &regime.mediators {
                return fixed(Some(z1[t - 1]));
            }
            if prev(s, "z1") == 1 {
                return fixed(Some(1));
            }
            match &regime.mediators {
                Mediators::Policy(g) => {
                    let tr = g(t, s);
                    coin(tr[1] + tr[3])
                }
                _ => coin(m.prob(&m.death[t - 1], s)),
            }
        });
        atoms = split(atoms, &z2, |s| {
            if let Mediators::Controlled { z2, .. } = &regime.mediators {
                return fixed(Some(z2[t - 1]));
            }
            if prev(s, "z2") == 1 {
                return fixed(Some(1));
            }
            let dead = s[&z1] == Some(1);
            if m.death_blocks_birth && dead {
                return fixed(Some(0));
            }
            match &regime.mediators {
                Mediators::Policy(g) => {
                    let tr = g(t, s);
                    let (stay, born) = if dead { (tr[1], tr[3]) } else { (tr[0], tr[2]) };
                    coin(if stay + born > 0.0 {
                        born / (stay + born)
                    } else {
                        0.0
                    })
                }
                _ => coin(m.prob(&m.birth[t - 1], s)),
            }
        });
        atoms = split(atoms, &y1, |s| {
            if s[&z2] == Some(0) {
                fixed(None)
            } else if t > 1 && s[&format!("y1_{}", t - 1)] == Some(0) {
                fixed(Some(0))
            } else {
                coin(m.prob(&m.infant[t - 1], s))
            }
        });
    }
    let tau = m.horizon;
    atoms = split(atoms, "y2", |s| {
        if s[&format!("z2_{tau}")] == Some(0) || s[&format!("y1_{tau}")] == Some(0) {
            fixed(None)
        } else {
            coin(m.prob(&m.hiv, s))
        }
    });
    split(atoms, "y", |s| {
        let y = s[&format!("z2_{tau}")] == Some(1)
            && s[&format!("y1_{tau}")] == Some(1)
            && s["y2"] == Some(1);
        fixed(Some(y as u8))
    })
}

/// `(P(Y = 1), P(Z2_tau = 1))`.
pub fn arm(m: &Model, regime: &Regime) -> (f64, f64) {
    let z2 = format!("z2_{}", m.horizon);
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, p) in enumerate(m, regime) {
        if s["y"] == Some(1) {
            num += p;
        }
        if s[&z2] == Some(1) {
            den += p;
        }
    }
    (num, den)
}

#[derive(Debug, Clone, Copy)]
pub struct RefContrast {
    pub value: f64,
    pub den1: f64,
    pub den0: f64,
}

pub fn contrast(m: &Model, arm1: &Regime, arm0: &Regime) -> Option<RefContrast> {
    let (n1, d1) = arm(m, arm1);
    let (n0, d0) = arm(m, arm0);
    if d1 <= 0.0 || d0 <= 0.0 {
        return None;
    }
    Some(RefContrast {
        value: n1 / d1 - n0 / d0,
        den1: d1,
        den0: d0,
    })
}

fn mediator_history(m: &Model, t: usize, s: &State) -> Vec<(u8, u8)> {
    let _ = m;
    (1..t)
        .map(|r| {
            (
                s[&format!("z1_{r}")].unwrap(),
                s[&format!("z2_{r}")].unwrap(),
            )
        })
        .collect()
}

type CellKey = (usize, Vec<u8>, Vec<u8>, Vec<(u8, u8)>);

/// Counterfactual mediator law under `do(A = a_ref)`, tabulated by baseline,
/// optionally covariate history, and mediator history.
#[derive(Debug, Clone)]
pub struct DerivedPolicy {
    conditional: bool,
    cells: BTreeMap<CellKey, [f64; 4]>,
    marginal: Option<Box<DerivedPolicy>>,
}

impl DerivedPolicy {
    pub fn new(m: &Model, a_ref: u8, conditional: bool) -> Self {
        let atoms = enumerate(m, &Regime::exposed(a_ref, Mediators::Natural));
        let mut mass: BTreeMap<CellKey, [f64; 4]> = BTreeMap::new();
        for (s, p) in &atoms {
            for t in 1..=m.horizon {
                let key = Self::key_for(m, conditional, t, s);
                let k = s[&format!("z1_{t}")].unwrap() as usize
                    + 2 * s[&format!("z2_{t}")].unwrap() as usize;
                mass.entry(key).or_insert([0.0; 4])[k] += p;
            }
        }
        let cells = mass
            .into_iter()
            .map(|(k, v)| {
                let total: f64 = v.iter().sum();
                (k, v.map(|x| x / total))
            })
            .collect();
        DerivedPolicy {
            conditional,
            cells,
            marginal: conditional.then(|| Box::new(DerivedPolicy::new(m, a_ref, false))),
        }
    }

    fn key_for(m: &Model, conditional: bool, t: usize, s: &State) -> CellKey {
        let history = if conditional {
            m.covariate_names(t).iter().map(|n| s[n].unwrap()).collect()
        } else {
            Vec::new()
        };
        (t, m.baseline_key(s), history, mediator_history(m, t, s))
    }

    pub fn transition(&self, m: &Model, t: usize, s: &State) -> [f64; 4] {
        if let Some(p) = self.cells.get(&Self::key_for(m, self.conditional, t, s)) {
            return *p;
        }
        self.marginal
            .as_ref()
            .map(|g| g.transition(m, t, s))
            .unwrap_or_else(|| panic!("no derived law for t={t} at {s:?}"))
    }

    /// `P(z1_t, z2_t | cell)` for a baseline-only policy.
    pub fn cell(&self, t: usize, baseline: &[u8], mediators: &[(u8, u8)]) -> Option<[f64; 4]> {
        self.cells
            .get(&(t, baseline.to_vec(), Vec::new(), mediators.to_vec()))
            .copied()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &[f64; 4])> {
        self.cells.iter()
    }
}

/// A transition table in the serialized policy format, read from its JSON.
pub struct TablePolicy {
    vars: Vec<(String, Vec<f64>, usize)>,
    conditional: bool,
    table: BTreeMap<(u64, u64, u64, u64), [f64; 4]>,
    fallback: Option<Box<TablePolicy>>,
}

impl TablePolicy {
    pub fn from_json(m: &Model, v: &Value) -> Self {
        let vars = v["stratification"]["variables"]
            .as_array()
            .map(|a| {
                a.iter()
                    .map(|x| {
                        let name = x["name"].as_str().unwrap().to_string();
                        let cuts: Vec<f64> = x
                            .get("cuts")
                            .and_then(Value::as_array)
                            .map(|c| c.iter().map(|q| q.as_f64().unwrap()).collect())
                            .unwrap_or_default();
                        let levels = if cuts.is_empty() {
                            m.radix(&name)
                        } else {
                            cuts.len() + 1
                        };
                        (name, cuts, levels)
                    })
                    .collect()
            })
            .unwrap_or_default();
        let table = v["tables"]
            .as_array()
            .expect("materialized policy")
            .iter()
            .map(|e| {
                let probs: Vec<f64> = e["probs"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|p| p.as_f64().unwrap())
                    .collect();
                (
                    (
                        e["t"].as_u64().unwrap(),
                        e["stratum"].as_u64().unwrap(),
                        e.get("history").and_then(Value::as_u64).unwrap_or(0),
                        e["mediators"].as_u64().unwrap(),
                    ),
                    [probs[0], probs[1], probs[2], probs[3]],
                )
            })
            .collect();
        TablePolicy {
            vars,
            conditional: v["kind"] == "counterfactual_conditional",
            table,
            fallback: v
                .get("fallback")
                .filter(|f| !f.is_null())
                .map(|f| Box::new(TablePolicy::from_json(m, f))),
        }
    }

    pub fn transition(&self, m: &Model, t: usize, s: &State) -> [f64; 4] {
        let mut stratum = 0u64;
        for (name, cuts, levels) in &self.vars {
            let x = s[name].unwrap();
            let level = if cuts.is_empty() {
                x as usize
            } else {
                cuts.iter().filter(|c| f64::from(x) >= **c).count()
            };
            stratum = stratum * *levels as u64 + level.min(levels - 1) as u64;
        }
        let mut mediators = 0u64;
        for (r, (z1, z2)) in mediator_history(m, t, s).into_iter().enumerate() {
            mediators |= (u64::from(z1) + 2 * u64::from(z2)) << (2 * r);
        }
        let history = if self.conditional {
            m.covariate_names(t)
                .iter()
                .enumerate()
                .fold(0u64, |acc, (k, n)| acc | u64::from(s[n].unwrap()) << k)
        } else {
            0
        };
        match self.table.get(&(t as u64, stratum, history, mediators)) {
            Some(p) => *p,
            None => self
                .fallback
                .as_ref()
                .map(|f| f.transition(m, t, s))
                .unwrap_or_else(|| {
                    panic!(
                        "policy has no row for t={t}, stratum {stratum}, mediators {mediators:#b}"
                    )
                }),
        }
    }
}

/// Hazard policy built from its definition.
pub fn hazard_transition(m: &Model, death: &[f64], birth: &[f64], t: usize, s: &State) -> [f64; 4] {
    let hist = mediator_history(m, t, s);
    let (z1p, z2p) = hist.last().copied().unwrap_or((0, 0));
    let d = if z1p == 1 { 1.0 } else { death[t - 1] };
    let b = |z1: u8| {
        if z2p == 1 {
            1.0
        } else if m.death_blocks_birth && z1 == 1 {
            0.0
        } else {
            birth[t - 1]
        }
    };
    [
        (1.0 - d) * (1.0 - b(0)),
        d * (1.0 - b(1)),
        (1.0 - d) * b(0),
        d * b(1),
    ]
}

/// Survival with birth at `t = 1`.
pub fn default_profile(m: &Model) -> Mediators<'static> {
    Mediators::Controlled {
        z1: vec![0; m.horizon],
        z2: vec![1; m.horizon],
    }
}

pub fn ref_cte(m: &Model) -> Option<RefContrast> {
    contrast(
        m,
        &Regime::exposed(1, Mediators::Natural),
        &Regime::exposed(0, Mediators::Natural),
    )
}

pub fn ref_cde(m: &Model) -> Option<RefContrast> {
    contrast(
        m,
        &Regime::exposed(1, default_profile(m)),
        &Regime::exposed(0, default_profile(m)),
    )
}

pub fn ref_csde<'a>(
    m: &'a Model,
    g: impl Fn(usize, &State) -> [f64; 4] + Clone + 'a,
) -> Option<RefContrast> {
    contrast(
        m,
        &Regime::exposed(1, Mediators::Policy(Box::new(g.clone()))),
        &Regime::exposed(0, Mediators::Policy(Box::new(g))),
    )
}

pub fn ref_nde_marginal(m: &Model, a_ref: u8) -> Option<RefContrast> {
    let g = DerivedPolicy::new(m, a_ref, false);
    ref_csde(m, move |t, s| g.transition(m, t, s))
}

pub fn ref_nde_conditional(m: &Model, a_ref: u8) -> Option<RefContrast> {
    let g = DerivedPolicy::new(m, a_ref, true);
    contrast(
        m,
        &Regime::exposed(
            1,
            Mediators::Policy(Box::new(move |t, s| g.transition(m, t, s))),
        ),
        &Regime::exposed(a_ref, Mediators::Natural),
    )
}
