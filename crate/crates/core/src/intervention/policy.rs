//! Stochastic mediator policies as explicit transition tables.
//!
//! A policy gives, for each time `t`, the joint law of `(z1_t, z2_t)` given a
//! baseline stratum, the mediator history `z̄_{t-1}` and, for conditional
//! policies, the covariate history `l̄_t`. Probabilities are stored in the
//! order `[00, 10, 01, 11]`, i.e. indexed by `z1_t + 2 * z2_t`.
//!
//! The mediator history is packed two bits per past time point: bits
//! `2(s-1)` and `2(s-1)+1` hold `z1_s` and `z2_s`. The covariate history packs
//! one bit per time-varying covariate in causal order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scm::compiled::CompiledScm;
use crate::scm::engine::DrawStats;
use crate::scm::layout::{Domain, Layout};

/// Maximum number of baseline (times covariate-history) cells.
pub const STRATUM_BUDGET: usize = 10_000;

/// Longest horizon whose mediator history fits the packed key.
pub const MAX_POLICY_HORIZON: usize = 32;

const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    /// Supplied directly; depends on baseline strata and mediator history.
    KnownConditionalOnBaseline,
    /// Counterfactual mediator law under `do(A = a_ref)` given baseline.
    CounterfactualMarginal { a_ref: u8 },
    /// Counterfactual mediator law under `do(A = a_ref)` given baseline,
    /// covariate history and mediator history.
    CounterfactualConditional { a_ref: u8 },
    /// Empirical mediator law in one exposure arm of observed data, given
    /// baseline.
    DataAdaptive { source_arm: u8 },
}

impl PolicyKind {
    pub fn conditions_on_covariates(self) -> bool {
        matches!(self, PolicyKind::CounterfactualConditional { .. })
    }

    pub fn label(self) -> String {
        match self {
            PolicyKind::KnownConditionalOnBaseline => "known_conditional_on_baseline".into(),
            PolicyKind::CounterfactualMarginal { a_ref } => {
                format!("counterfactual_marginal(a_ref={a_ref})")
            }
            PolicyKind::CounterfactualConditional { a_ref } => {
                format!("counterfactual_conditional(a_ref={a_ref})")
            }
            PolicyKind::DataAdaptive { source_arm } => {
                format!("data_adaptive(source_arm={source_arm})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumVariable {
    /// Baseline node, e.g. `l0.w`.
    pub name: String,
    /// Cut points for continuous variables; a value `v` falls in level
    /// `#{c in cuts : v >= c}`. Empty for discrete variables.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cuts: Vec<f64>,
}

/// How baseline covariates are grouped into strata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stratification {
    #[serde(default)]
    pub variables: Vec<StratumVariable>,
}

impl Stratification {
    /// One stratum per combination of all discrete baseline covariates.
    pub fn discrete_baseline(layout: &Layout) -> Self {
        let variables = layout
            .baseline
            .clone()
            .filter(|&i| layout.nodes[i].domain != Domain::Continuous)
            .map(|i| StratumVariable {
                name: layout.nodes[i].name.clone(),
                cuts: vec![],
            })
            .collect();
        Stratification { variables }
    }

    pub(crate) fn resolve(&self, layout: &Layout) -> Result<ResolvedStrata> {
        let mut vars = Vec::with_capacity(self.variables.len());
        let mut count = 1usize;
        for v in &self.variables {
            let node = layout.resolve(&v.name)?;
            if !layout.baseline.contains(&node) {
                return Err(Error::Config(format!(
                    "stratum variable {} is not a baseline covariate",
                    v.name
                )));
            }
            if v.cuts.windows(2).any(|w| w[1] <= w[0]) || v.cuts.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config(format!(
                    "cuts for {} must be finite and increasing",
                    v.name
                )));
            }
            let levels = if v.cuts.is_empty() {
                layout.nodes[node].domain.radix().ok_or_else(|| {
                    Error::Config(format!("continuous stratum variable {} needs cuts", v.name))
                })?
            } else {
                v.cuts.len() + 1
            };
            count = count.saturating_mul(levels);
            vars.push(ResolvedVariable {
                node,
                cuts: v.cuts.clone(),
                levels,
            });
        }
        if count > STRATUM_BUDGET {
            return Err(Error::StratumBudget {
                count,
                budget: STRATUM_BUDGET,
            });
        }
        Ok(ResolvedStrata { vars, count })
    }
}

#[derive(Debug, Clone)]
struct ResolvedVariable {
    node: usize,
    cuts: Vec<f64>,
    levels: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct ResolvedStrata {
    vars: Vec<ResolvedVariable>,
    pub count: usize,
}

impl ResolvedStrata {
    #[inline]
    pub fn index(&self, state: &[f64]) -> u32 {
        let mut idx = 0usize;
        for v in &self.vars {
            let x = state[v.node];
            let level = if v.cuts.is_empty() {
                x as usize
            } else {
                v.cuts.iter().take_while(|c| x >= **c).count()
            };
            idx = idx * v.levels + level.min(v.levels - 1);
        }
        idx as u32
    }

    pub fn describe(&self, layout: &Layout, stratum: u32) -> String {
        if self.vars.is_empty() {
            return "all".into();
        }
        let mut rest = stratum as usize;
        let mut parts = Vec::with_capacity(self.vars.len());
        for v in self.vars.iter().rev() {
            let level = rest % v.levels;
            rest /= v.levels;
            let name = layout.name(v.node);
            parts.push(if v.cuts.is_empty() {
                format!("{name}={level}")
            } else {
                format!("{name} in bin {level}")
            });
        }
        parts.reverse();
        parts.join(",")
    }
}

/// One row of a transition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub t: usize,
    pub stratum: u32,
    /// Packed covariate history; always 0 for baseline-only policies.
    #[serde(default)]
    pub history: u64,
    /// Packed mediator history `z̄_{t-1}`.
    pub mediators: u64,
    /// `P(z1_t, z2_t)` indexed by `z1_t + 2 * z2_t`.
    pub probs: [f64; 4],
    /// Mass or count of the conditioning cell.
    pub weight: f64,
}

impl PolicyEntry {
    fn key(&self) -> PolicyKey {
        PolicyKey {
            t: self.t as u32,
            stratum: self.stratum,
            history: self.history,
            mediators: self.mediators,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediatorPolicy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    pub horizon: usize,
    #[serde(default)]
    pub stratification: Stratification,
    /// `None` until materialized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tables: Option<Vec<PolicyEntry>>,
    /// Baseline-only policy consulted when a conditional policy meets a
    /// history it never saw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<Box<MediatorPolicy>>,
}

impl MediatorPolicy {
    /// An unmaterialized policy of the given kind.
    pub fn unmaterialized(
        kind: PolicyKind,
        horizon: usize,
        stratification: Stratification,
    ) -> Self {
        MediatorPolicy {
            kind,
            horizon,
            stratification,
            tables: None,
            fallback: None,
        }
    }

    /// Per-time hazards shared by everyone: death with `death[t-1]`, birth
    /// with `birth[t-1]` among those still eligible.
    pub fn from_hazards(death: &[f64], birth: &[f64], death_blocks_birth: bool) -> Result<Self> {
        let horizon = death.len();
        if horizon == 0 || birth.len() != horizon {
            return Err(Error::InvalidPolicy(format!(
                "need one death and one birth hazard per time point, got {} and {}",
                death.len(),
                birth.len()
            )));
        }
        if horizon > MAX_POLICY_HORIZON {
            return Err(Error::InvalidPolicy(format!(
                "horizon above {MAX_POLICY_HORIZON}"
            )));
        }
        if let Some(h) = death
            .iter()
            .chain(birth)
            .find(|h| !(0.0..=1.0).contains(*h))
        {
            return Err(Error::InvalidPolicy(format!("hazard {h} outside [0, 1]")));
        }
        let mut entries = Vec::new();
        let mut frontier = vec![(0u64, 0u8, 0u8)];
        for t in 1..=horizon {
            let mut next = Vec::new();
            for &(code, z1p, z2p) in &frontier {
                let d = if z1p == 1 { 1.0 } else { death[t - 1] };
                let b = |z1: u8| {
                    if z2p == 1 {
                        1.0
                    } else if death_blocks_birth && z1 == 1 {
                        0.0
                    } else {
                        birth[t - 1]
                    }
                };
                let probs = [
                    (1.0 - d) * (1.0 - b(0)),
                    d * (1.0 - b(1)),
                    (1.0 - d) * b(0),
                    d * b(1),
                ];
                for (k, p) in probs.iter().enumerate() {
                    if *p > 0.0 {
                        let (z1, z2) = ((k & 1) as u8, (k >> 1) as u8);
                        next.push((code | (k as u64) << (2 * (t - 1)), z1, z2));
                    }
                }
                entries.push(PolicyEntry {
                    t,
                    stratum: 0,
                    history: 0,
                    mediators: code,
                    probs,
                    weight: 1.0,
                });
            }
            frontier = next;
        }
        entries.sort_by_key(PolicyEntry::key);
        Ok(MediatorPolicy {
            kind: PolicyKind::KnownConditionalOnBaseline,
            horizon,
            stratification: Stratification::default(),
            tables: Some(entries),
            fallback: None,
        })
    }

    pub fn is_materialized(&self) -> bool {
        self.tables.is_some()
    }

    /// Structural checks against a model.
    pub fn validate(&self, layout: &Layout, death_blocks_birth: bool) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPolicy(m));
        if self.horizon != layout.horizon() {
            return bad(format!(
                "policy horizon {} differs from model horizon {}",
                self.horizon,
                layout.horizon()
            ));
        }
        if self.horizon > MAX_POLICY_HORIZON {
            return bad(format!("horizon above {MAX_POLICY_HORIZON}"));
        }
        let strata = self.stratification.resolve(layout)?;
        let Some(tables) = &self.tables else {
            return Err(Error::UnmaterializedPolicy(self.kind.label()));
        };
        let conditional = self.kind.conditions_on_covariates();
        for e in tables {
            let at = format!(
                "entry t={} stratum={} mediators={}",
                e.t, e.stratum, e.mediators
            );
            if e.t == 0 || e.t > self.horizon {
                return bad(format!("{at}: time out of range"));
            }
            if e.stratum as usize >= strata.count {
                return bad(format!("{at}: stratum out of range"));
            }
            if !conditional && e.history != 0 {
                return bad(format!(
                    "{at}: a baseline-only policy cannot depend on covariate history"
                ));
            }
            if e.mediators >> (2 * (e.t - 1)) != 0 {
                return bad(format!("{at}: mediator history longer than t-1"));
            }
            if e.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("{at}: probability outside [0, 1]"));
            }
            let total: f64 = e.probs.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return bad(format!("{at}: probabilities sum to {total}"));
            }
            let (z1p, z2p) = previous_state(e.mediators, e.t);
            if z1p == 1 && e.probs[0] + e.probs[2] > ZERO_TOL {
                return bad(format!("{at}: leaves the absorbing death state"));
            }
            if z2p == 1 && e.probs[0] + e.probs[1] > ZERO_TOL {
                return bad(format!("{at}: leaves the absorbing birth state"));
            }
            if death_blocks_birth && z2p == 0 && e.probs[3] > ZERO_TOL {
                return bad(format!("{at}: birth at the time of maternal death"));
            }
        }
        if let Some(f) = &self.fallback {
            if f.kind.conditions_on_covariates() {
                return bad("fallback policy must be baseline-only".into());
            }
            if f.stratification != self.stratification {
                return bad("fallback policy must share the stratification".into());
            }
            f.validate(layout, death_blocks_birth)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Entries at time `t` for a baseline stratum, for inspection.
    pub fn entries_at(&self, t: usize, stratum: u32) -> impl Iterator<Item = &PolicyEntry> {
        self.tables
            .iter()
            .flatten()
            .filter(move |e| e.t == t && e.stratum == stratum)
    }

    /// Marginal probability of a birth at `t` among those eligible, pooled
    /// over histories by weight, within one stratum.
    pub fn pooled_birth_hazard(&self, t: usize, stratum: u32) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for e in self.entries_at(t, stratum) {
            let (z1p, z2p) = previous_state(e.mediators, e.t);
            if z1p == 0 && z2p == 0 {
                num += e.weight * (e.probs[2] + e.probs[3]);
                den += e.weight;
            }
        }
        (den > 0.0).then(|| num / den)
    }
}

/// `(z1_{t-1}, z2_{t-1})` from a packed history; zeros at t = 1.
pub(crate) fn previous_state(code: u64, t: usize) -> (u8, u8) {
    if t <= 1 {
        return (0, 0);
    }
    let bits = (code >> (2 * (t - 2))) & 3;
    ((bits & 1) as u8, (bits >> 1) as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct PolicyKey {
    pub t: u32,
    pub stratum: u32,
    pub history: u64,
    pub mediators: u64,
}

/// Computes policy keys from a realized state.
#[derive(Debug, Clone)]
pub(crate) struct KeyMaker {
    pub strata: ResolvedStrata,
    /// Covariate nodes through `t`, per `t`; `None` for baseline-only keys.
    history: Option<Vec<Vec<usize>>>,
    death: Vec<usize>,
    birth: Vec<usize>,
}

impl KeyMaker {
    pub fn new(
        layout: &Layout,
        stratification: &Stratification,
        conditional: bool,
    ) -> Result<Self> {
        let horizon = layout.horizon();
        if horizon > MAX_POLICY_HORIZON {
            return Err(Error::Config(format!(
                "policies support horizons up to {MAX_POLICY_HORIZON}"
            )));
        }
        let strata = stratification.resolve(layout)?;
        let history = if conditional {
            let all = layout.covariates_through(horizon);
            if all.len() > 64 {
                return Err(Error::Config(
                    "conditional policies support at most 64 time-varying covariates".into(),
                ));
            }
            let cells = strata
                .count
                .saturating_mul(1usize.checked_shl(all.len() as u32).unwrap_or(usize::MAX));
            if cells > STRATUM_BUDGET {
                return Err(Error::StratumBudget {
                    count: cells,
                    budget: STRATUM_BUDGET,
                });
            }
            Some(
                (1..=horizon)
                    .map(|t| layout.covariates_through(t))
                    .collect(),
            )
        } else {
            None
        };
        Ok(KeyMaker {
            strata,
            history,
            death: layout.slices.iter().map(|s| s.death).collect(),
            birth: layout.slices.iter().map(|s| s.birth).collect(),
        })
    }

    #[inline]
    pub fn key(&self, t: usize, state: &[f64]) -> PolicyKey {
        let mut mediators = 0u64;
        for s in 1..t {
            let code = state[self.death[s - 1]] as u64 | (state[self.birth[s - 1]] as u64) << 1;
            mediators |= code << (2 * (s - 1));
        }
        let history = match &self.history {
            None => 0,
            Some(h) => h[t - 1]
                .iter()
                .enumerate()
                .fold(0u64, |acc, (k, &node)| acc | (state[node] as u64) << k),
        };
        PolicyKey {
            t: t as u32,
            stratum: self.strata.index(state),
            history,
            mediators,
        }
    }

    pub fn conditional(&self) -> bool {
        self.history.is_some()
    }

    /// Index of the realized `(z1_t, z2_t)` pair.
    #[inline]
    pub fn outcome(&self, t: usize, state: &[f64]) -> usize {
        state[self.death[t - 1]] as usize + 2 * state[self.birth[t - 1]] as usize
    }
}

/// Accumulates weighted transitions into a policy table.
#[derive(Debug, Clone, Default)]
pub(crate) struct TransitionCounts {
    /// Per key: mass of each outcome, then total mass.
    pub cells: HashMap<PolicyKey, [f64; 5]>,
}

impl TransitionCounts {
    pub fn record(&mut self, keys: &KeyMaker, state: &[f64], weight: f64) {
        for t in 1..=keys.death.len() {
            let cell = self.cells.entry(keys.key(t, state)).or_insert([0.0; 5]);
            cell[keys.outcome(t, state)] += weight;
            cell[4] += weight;
        }
    }

    pub fn merge(mut self, other: Self) -> Self {
        for (k, v) in other.cells {
            let cell = self.cells.entry(k).or_insert([0.0; 5]);
            for i in 0..5 {
                cell[i] += v[i];
            }
        }
        self
    }

    /// Normalize into a policy; every stratum must have been seen.
    pub fn finish(
        self,
        keys: &KeyMaker,
        layout: &Layout,
        kind: PolicyKind,
        stratification: &Stratification,
    ) -> Result<MediatorPolicy> {
        let mut seen = vec![false; keys.strata.count];
        for k in self.cells.keys() {
            if k.t == 1 {
                seen[k.stratum as usize] = true;
            }
        }
        if let Some(s) = seen.iter().position(|x| !x) {
            return Err(Error::EmptyStratum {
                stratum: s as u32,
                description: keys.strata.describe(layout, s as u32),
            });
        }
        let mut entries: Vec<PolicyEntry> = self
            .cells
            .into_iter()
            .filter(|(_, c)| c[4] > 0.0)
            .map(|(k, c)| PolicyEntry {
                t: k.t as usize,
                stratum: k.stratum,
                history: k.history,
                mediators: k.mediators,
                probs: [c[0] / c[4], c[1] / c[4], c[2] / c[4], c[3] / c[4]],
                weight: c[4],
            })
            .collect();
        entries.sort_by_key(PolicyEntry::key);
        Ok(MediatorPolicy {
            kind,
            horizon: layout.horizon(),
            stratification: stratification.clone(),
            tables: Some(entries),
            fallback: None,
        })
    }
}

/// A validated policy ready for lookups during simulation.
#[derive(Debug, Clone)]
pub struct CompiledPolicy {
    kind: PolicyKind,
    keys: KeyMaker,
    table: HashMap<PolicyKey, [f64; 4]>,
    fallback: Option<Box<CompiledPolicy>>,
    layout: Layout,
}

impl CompiledPolicy {
    pub fn new(policy: &MediatorPolicy, scm: &CompiledScm) -> Result<Self> {
        policy.validate(&scm.layout, scm.death_blocks_birth)?;
        let conditional = policy.kind.conditions_on_covariates();
        let keys = KeyMaker::new(&scm.layout, &policy.stratification, conditional)?;
        let table = policy
            .tables
            .iter()
            .flatten()
            .map(|e| (e.key(), e.probs))
            .collect();
        let fallback = match &policy.fallback {
            Some(f) => Some(Box::new(CompiledPolicy::new(f, scm)?)),
            None => None,
        };
        Ok(CompiledPolicy {
            kind: policy.kind,
            keys,
            table,
            fallback,
            layout: scm.layout.clone(),
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    /// Joint law of `(z1_t, z2_t)` for the individual in `state`.
    pub(crate) fn transition(
        &self,
        t: usize,
        state: &[f64],
        stats: &mut DrawStats,
    ) -> Result<[f64; 4]> {
        let key = self.keys.key(t, state);
        if let Some(p) = self.table.get(&key) {
            return Ok(*p);
        }
        if let Some(f) = &self.fallback {
            let fkey = f.keys.key(t, state);
            if let Some(p) = f.table.get(&fkey) {
                stats.policy_fallbacks += 1;
                return Ok(*p);
            }
        }
        Err(Error::MissingPolicyEntry(format!(
            "t={t}, stratum {}, covariate history {:#b}, mediator history {:#b}",
            self.keys.strata.describe(&self.layout, key.stratum),
            key.history,
            key.mediators
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn previous_state_unpacks_last_pair() {
        // t=3 with z_1 = (0,0), z_2 = (1,0)
        let code = 0b01 << 2;
        assert_eq!(previous_state(code, 3), (1, 0));
        assert_eq!(previous_state(code, 2), (0, 0));
        assert_eq!(previous_state(0b10, 2), (0, 1));
    }

    #[test]
    fn hazard_policy_rows_sum_to_one_and_respect_blocking() {
        let p = MediatorPolicy::from_hazards(&[0.1, 0.2], &[0.3, 0.4], true).unwrap();
        let tables = p.tables.as_ref().unwrap();
        // t=1 from the empty history, t=2 from three reachable states.
        assert_eq!(tables.len(), 4);
        for e in tables {
            assert!((e.probs.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            let (_, z2p) = previous_state(e.mediators, e.t);
            if z2p == 0 {
                assert_eq!(e.probs[3], 0.0);
            }
        }
        assert_eq!(tables[0].probs, [0.9 * 0.7, 0.1, 0.9 * 0.3, 0.0]);
    }

    #[test]
    fn json_round_trip() {
        let p = MediatorPolicy::from_hazards(&[0.0], &[1.0], true).unwrap();
        let back = MediatorPolicy::from_json(&p.to_json()).unwrap();
        assert_eq!(p, back);
        assert!(p
            .to_json()
            .contains("\"kind\": \"known_conditional_on_baseline\""));
    }
}
