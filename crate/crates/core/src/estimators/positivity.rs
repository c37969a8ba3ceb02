//! Empirical checks of exposure and mediator positivity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::data::ObservedDataset;
use crate::estimators::fit_data_adaptive_policy;
use crate::intervention::policy::{
    KeyMaker, MediatorPolicy, PolicyKey, Stratification, TransitionCounts,
};
use crate::scm::layout::Layout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assumption {
    /// Each exposure has positive probability given baseline.
    Exposure,
    /// Each policy-supported mediator value has positive probability given
    /// exposure and history.
    Mediator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureStratum {
    pub stratum: String,
    pub n: f64,
    /// Empirical `P(A = 1 | stratum)`.
    pub p_exposed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureSummary {
    /// Smallest `P(A = a | stratum)` over strata and both arms.
    pub min_probability: Option<f64>,
    pub max_probability: Option<f64>,
    pub strata: Vec<ExposureStratum>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediatorSummary {
    pub t: usize,
    /// Smallest empirical probability of a policy-supported transition.
    pub min_probability: Option<f64>,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityFlag {
    pub assumption: Assumption,
    pub arm: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    pub stratum: String,
    pub detail: String,
    pub probability: f64,
    /// Row mass of the conditioning cell.
    pub support: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeCase {
    pub arm: u8,
    /// The policy is the observed mediator law of this arm, so every
    /// policy-supported transition has been observed in it.
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub epsilon: f64,
    pub exposure: ExposureSummary,
    pub mediator: Vec<MediatorSummary>,
    pub flagged: Vec<PositivityFlag>,
    pub guarantee: Vec<GuaranteeCase>,
}

/// Empirical support of one policy-supported transition.
#[derive(Debug, Clone)]
pub(crate) struct MediatorCell {
    pub arm: u8,
    pub key: PolicyKey,
    /// `z1_t + 2 z2_t`.
    pub transition: usize,
    pub probability: f64,
    /// Weight of the conditioning cell in this arm.
    pub weight: f64,
}

impl MediatorCell {
    pub fn describe(&self, data: &ObservedDataset, keys: &KeyMaker) -> String {
        let t = self.key.t as usize;
        let mut s = format!(
            "a={}, t={t}, {}, mediator history {}",
            self.arm,
            keys.strata.describe(data.layout(), self.key.stratum),
            history_string(self.key.mediators, t)
        );
        if keys.conditional() {
            let names: Vec<&str> = data
                .layout()
                .covariates_through(t)
                .into_iter()
                .map(|n| data.layout().name(n))
                .collect();
            if !names.is_empty() {
                let bits: Vec<String> = names
                    .iter()
                    .enumerate()
                    .map(|(k, n)| format!("{n}={}", (self.key.history >> k) & 1))
                    .collect();
                s.push_str(&format!(", {}", bits.join(",")));
            }
        }
        s.push_str(&format!(
            ", transition to (z1,z2)=({},{})",
            self.transition & 1,
            self.transition >> 1
        ));
        s
    }
}

/// `[z1 z2, ...]` for times before `t`.
pub(crate) fn history_string(code: u64, t: usize) -> String {
    let parts: Vec<String> = (1..t)
        .map(|s| {
            let bits = (code >> (2 * (s - 1))) & 3;
            format!("{}{}", bits & 1, bits >> 1)
        })
        .collect();
    format!("[{}]", parts.join(","))
}

pub(crate) fn baseline_policy(policy: &MediatorPolicy) -> Result<&MediatorPolicy> {
    if !policy.kind.conditions_on_covariates() {
        return Ok(policy);
    }
    policy.fallback.as_deref().ok_or_else(|| {
        Error::InvalidPolicy(
            "estimation needs a policy that depends only on baseline and mediator history".into(),
        )
    })
}

/// Baseline strata for the checks: the policy's variables plus every other
/// discrete baseline covariate, so each cell determines its policy stratum.
pub(crate) fn conditioning_strata(layout: &Layout, policy: &MediatorPolicy) -> Stratification {
    let mut variables = policy.stratification.variables.clone();
    for v in Stratification::discrete_baseline(layout).variables {
        if !variables.iter().any(|x| x.name == v.name) {
            variables.push(v);
        }
    }
    Stratification { variables }
}

fn conditioning_keys(layout: &Layout, policy: &MediatorPolicy, fine: bool) -> Result<KeyMaker> {
    let joint = conditioning_strata(layout, policy);
    let attempts = [
        (&joint, fine),
        (&joint, false),
        (&policy.stratification, fine),
        (&policy.stratification, false),
    ];
    let mut last = None;
    for (strata, conditional) in attempts {
        match KeyMaker::new(layout, strata, conditional) {
            Ok(k) => return Ok(k),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// For every policy entry reachable from the baseline strata present in the
/// data, and every transition the policy supports there, the empirical
/// probability of that transition within each exposure arm. With `fine`,
/// cells are also split by covariate history.
pub(crate) fn mediator_cells(
    data: &ObservedDataset,
    weights: &[f64],
    policy: &MediatorPolicy,
    fine: bool,
) -> Result<(Vec<MediatorCell>, KeyMaker)> {
    let policy = baseline_policy(policy)?;
    let layout = data.layout();
    if policy.horizon != layout.horizon() {
        return Err(Error::InvalidPolicy(format!(
            "policy horizon {} does not match data horizon {}",
            policy.horizon,
            layout.horizon()
        )));
    }
    let policy_keys = KeyMaker::new(layout, &policy.stratification, false)?;
    let keys = conditioning_keys(layout, policy, fine)?;

    let table: BTreeMap<(u32, u32, u64), [f64; 4]> = policy
        .tables
        .iter()
        .flatten()
        .map(|e| ((e.t as u32, e.stratum, e.mediators), e.probs))
        .collect();

    // Conditioning stratum -> policy stratum, for strata present in the data.
    let mut present: BTreeMap<u32, u32> = BTreeMap::new();
    let mut observed: [BTreeMap<(u32, u32, u64), Vec<(u64, [f64; 5])>>; 2] = Default::default();
    for a in 0..2u8 {
        let mut counts = TransitionCounts::default();
        for (state, &w) in data.patterns().iter().zip(weights) {
            if w > 0.0 {
                present.insert(keys.strata.index(state), policy_keys.strata.index(state));
                if state[layout.exposure] == f64::from(a) {
                    counts.record(&keys, state, w);
                }
            }
        }
        let mut cells: Vec<_> = counts.cells.into_iter().collect();
        cells.sort_by_key(|(k, _)| *k);
        for (k, c) in cells {
            observed[a as usize]
                .entry((k.t, k.stratum, k.mediators))
                .or_default()
                .push((k.history, c));
        }
    }

    let mut out = Vec::new();
    let mut frontier: Vec<(u32, u64)> = present.keys().map(|&s| (s, 0)).collect();
    for t in 1..=layout.horizon() {
        let mut next = Vec::new();
        for &(s, m) in &frontier {
            let Some(probs) = table.get(&(t as u32, present[&s], m)) else {
                continue;
            };
            for (k, p) in probs.iter().enumerate() {
                if *p <= 0.0 {
                    continue;
                }
                next.push((s, m | (k as u64) << (2 * (t - 1))));
                for a in 0..2u8 {
                    let key = |history| PolicyKey {
                        t: t as u32,
                        stratum: s,
                        history,
                        mediators: m,
                    };
                    match observed[a as usize].get(&(t as u32, s, m)) {
                        None => out.push(MediatorCell {
                            arm: a,
                            key: key(0),
                            transition: k,
                            probability: 0.0,
                            weight: 0.0,
                        }),
                        Some(cells) => {
                            for (h, c) in cells {
                                out.push(MediatorCell {
                                    arm: a,
                                    key: key(*h),
                                    transition: k,
                                    probability: c[k] / c[4],
                                    weight: c[4],
                                });
                            }
                        }
                    }
                }
            }
        }
        next.sort_unstable();
        next.dedup();
        frontier = next;
    }
    Ok((out, keys))
}

/// Fail if the policy supports a transition never observed in some arm,
/// baseline stratum and mediator history.
pub(crate) fn require_mediator_support(
    data: &ObservedDataset,
    weights: &[f64],
    policy: &MediatorPolicy,
) -> Result<()> {
    let (cells, keys) = mediator_cells(data, weights, policy, false)?;
    let missing: Vec<String> = cells
        .iter()
        .filter(|c| c.probability <= 0.0)
        .map(|c| format!("{} never observed", c.describe(data, &keys)))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Positivity { strata: missing })
    }
}

/// Empirical positivity of exposure given baseline strata and of
/// policy-supported mediator transitions given arm and history.
pub fn positivity_diagnostics(
    data: &ObservedDataset,
    policy: &MediatorPolicy,
    epsilon: f64,
) -> Result<PositivityReport> {
    let layout = data.layout();
    let weights = data.counts();
    let base = baseline_policy(policy)?;
    let keys = conditioning_keys(layout, base, false)?;
    let mut flagged = Vec::new();

    let mut by_stratum = vec![[0.0f64; 2]; keys.strata.count];
    for (state, w) in data.patterns().iter().zip(weights) {
        by_stratum[keys.strata.index(state) as usize][state[layout.exposure] as usize] += w;
    }
    let mut strata = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (s, w) in by_stratum.iter().enumerate() {
        let n = w[0] + w[1];
        if n <= 0.0 {
            continue;
        }
        let p1 = w[1] / n;
        let name = keys.strata.describe(layout, s as u32);
        for (a, p) in [(0u8, 1.0 - p1), (1u8, p1)] {
            lo = lo.min(p);
            hi = hi.max(p);
            if p < epsilon {
                flagged.push(PositivityFlag {
                    assumption: Assumption::Exposure,
                    arm: a,
                    t: None,
                    stratum: name.clone(),
                    detail: format!("P(A={a} | {name}) = {p}"),
                    probability: p,
                    support: n,
                });
            }
        }
        strata.push(ExposureStratum {
            stratum: name,
            n,
            p_exposed: p1,
        });
    }

    let (cells, fine_keys) = mediator_cells(data, weights, policy, true)?;
    let mut mediator: Vec<MediatorSummary> = (1..=layout.horizon())
        .map(|t| MediatorSummary {
            t,
            min_probability: None,
            cells: 0,
        })
        .collect();
    for c in &cells {
        let m = &mut mediator[c.key.t as usize - 1];
        m.cells += 1;
        m.min_probability = Some(
            m.min_probability
                .map_or(c.probability, |v: f64| v.min(c.probability)),
        );
        if c.probability < epsilon {
            flagged.push(PositivityFlag {
                assumption: Assumption::Mediator,
                arm: c.arm,
                t: Some(c.key.t as usize),
                stratum: fine_keys.strata.describe(layout, c.key.stratum),
                detail: c.describe(data, &fine_keys),
                probability: c.probability,
                support: c.weight,
            });
        }
    }

    let guarantee = (0..2u8)
        .map(|a| GuaranteeCase {
            arm: a,
            satisfied: fit_data_adaptive_policy(data, a, &base.stratification)
                .is_ok_and(|fitted| same_law(&fitted, base)),
        })
        .collect();

    Ok(PositivityReport {
        epsilon,
        exposure: ExposureSummary {
            min_probability: lo.is_finite().then_some(lo),
            max_probability: hi.is_finite().then_some(hi),
            strata,
        },
        mediator,
        flagged,
        guarantee,
    })
}

/// Same transition probabilities on the same conditioning cells.
fn same_law(a: &MediatorPolicy, b: &MediatorPolicy) -> bool {
    let (Some(ta), Some(tb)) = (&a.tables, &b.tables) else {
        return false;
    };
    let index = |t: &Vec<crate::intervention::PolicyEntry>| {
        t.iter()
            .map(|e| ((e.t, e.stratum, e.history, e.mediators), e.probs))
            .collect::<BTreeMap<_, _>>()
    };
    let (ia, ib) = (index(ta), index(tb));
    ia.len() == ib.len()
        && ia.iter().all(|(k, pa)| {
            ib.get(k)
                .is_some_and(|pb| pa.iter().zip(pb).all(|(x, y)| (x - y).abs() <= 1e-9))
        })
}
