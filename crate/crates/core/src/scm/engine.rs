//! Regime evaluation shared by the simulator and the exact enumerator.
//!
//! A regime is the model plus the interventions applied to it. For each node
//! it yields the node's conditional law given the values already realized;
//! the simulator draws from that law with the node's exogenous uniform and
//! the enumerator branches over it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::intervention::plan::MediatorProfile;
use crate::intervention::policy::CompiledPolicy;
use crate::rng::NoiseSource;
use crate::scm::compiled::{CompiledLaw, CompiledScm};
use crate::scm::layout::Role;
use crate::scm::trajectory::Trajectory;

/// Enumeration refuses regimes with more exogenous configurations than this.
pub const ENUMERATION_BUDGET: u128 = 1 << 24;

const CHUNK: u64 = 2048;

#[derive(Debug, Clone, Copy)]
pub(crate) enum MediatorMode<'a> {
    Natural,
    Controlled(&'a MediatorProfile),
    Policy(&'a CompiledPolicy),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Regime<'a> {
    pub scm: &'a CompiledScm,
    pub exposure: Option<u8>,
    pub mediator: MediatorMode<'a>,
    /// Fixed baseline values, overriding the baseline laws.
    pub baseline: Option<&'a [f64]>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum NodeLaw<'a> {
    Fixed(f64),
    Bernoulli(f64),
    /// Birth decided by the death node's uniform. `death` carries the death
    /// hazard and realized value when death was drawn at the same time.
    Shared {
        threshold: f64,
        death_node: usize,
        death: Option<(f64, bool)>,
    },
    Categorical(&'a [f64]),
    Uniform {
        lo: f64,
        hi: f64,
    },
}

/// Counters gathered while evaluating a regime.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DrawStats {
    /// Conditional-policy lookups that fell back to the marginal policy.
    pub policy_fallbacks: u64,
}

impl DrawStats {
    fn add(mut self, other: DrawStats) -> Self {
        self.policy_fallbacks += other.policy_fallbacks;
        self
    }
}

impl<'a> Regime<'a> {
    pub fn natural(scm: &'a CompiledScm) -> Self {
        Regime {
            scm,
            exposure: None,
            mediator: MediatorMode::Natural,
            baseline: None,
        }
    }

    pub fn with_exposure(mut self, a: Option<u8>) -> Self {
        self.exposure = a;
        self
    }

    pub fn with_mediator(mut self, m: MediatorMode<'a>) -> Self {
        self.mediator = m;
        self
    }

    pub fn with_baseline(mut self, b: Option<&'a [f64]>) -> Self {
        self.baseline = b;
        self
    }

    fn bernoulli(&self, node: usize, p: f64) -> Result<NodeLaw<'a>> {
        if (0.0..=1.0).contains(&p) {
            Ok(NodeLaw::Bernoulli(p))
        } else {
            Err(Error::Positivity {
                strata: vec![format!(
                    "{}: no usable probability for this parent configuration ({p})",
                    self.scm.layout.name(node)
                )],
            })
        }
    }

    pub(crate) fn node_law(
        &self,
        node: usize,
        state: &[f64],
        stats: &mut DrawStats,
    ) -> Result<NodeLaw<'a>> {
        let scm = self.scm;
        let layout = &scm.layout;
        let info = &layout.nodes[node];
        let law: &'a CompiledLaw = &scm.laws[node];
        let t = info.time;
        match info.role {
            Role::Baseline => {
                if let Some(b) = self.baseline {
                    return Ok(NodeLaw::Fixed(b[node - layout.baseline.start]));
                }
                match law {
                    CompiledLaw::Categorical(p) => Ok(NodeLaw::Categorical(p)),
                    CompiledLaw::Uniform { lo, hi } => Ok(NodeLaw::Uniform { lo: *lo, hi: *hi }),
                    l => self.bernoulli(node, l.prob(state)),
                }
            }
            Role::Exposure => match self.exposure {
                Some(a) => Ok(NodeLaw::Fixed(f64::from(a))),
                None => self.bernoulli(node, law.prob(state)),
            },
            Role::Covariate => self.bernoulli(node, law.prob(state)),
            Role::Death => {
                if let MediatorMode::Controlled(profile) = self.mediator {
                    return Ok(NodeLaw::Fixed(f64::from(profile.z1[t - 1])));
                }
                if t > 1 && state[layout.slice(t - 1).death] == 1.0 {
                    return Ok(NodeLaw::Fixed(1.0));
                }
                match self.mediator {
                    MediatorMode::Policy(policy) => {
                        let tr = policy.transition(t, state, stats)?;
                        Ok(NodeLaw::Bernoulli(tr[1] + tr[3]))
                    }
                    _ => self.bernoulli(node, law.prob(state)),
                }
            }
            Role::Birth => {
                if let MediatorMode::Controlled(profile) = self.mediator {
                    return Ok(NodeLaw::Fixed(f64::from(profile.z2[t - 1])));
                }
                let slice = layout.slice(t);
                if t > 1 && state[layout.slice(t - 1).birth] == 1.0 {
                    return Ok(NodeLaw::Fixed(1.0));
                }
                let dead = state[slice.death] == 1.0;
                if scm.death_blocks_birth && dead {
                    return Ok(NodeLaw::Fixed(0.0));
                }
                match self.mediator {
                    MediatorMode::Policy(policy) => {
                        let tr = policy.transition(t, state, stats)?;
                        let (stay, born) = if dead { (tr[1], tr[3]) } else { (tr[0], tr[2]) };
                        let total = stay + born;
                        Ok(NodeLaw::Bernoulli(if total > 0.0 {
                            born / total
                        } else {
                            0.0
                        }))
                    }
                    _ => {
                        let h2 = law.prob(state);
                        if !scm.shared_mediator_noise {
                            return self.bernoulli(node, h2);
                        }
                        let fresh = t == 1 || state[layout.slice(t - 1).death] == 0.0;
                        let death = fresh.then(|| (scm.laws[slice.death].prob(state), dead));
                        Ok(NodeLaw::Shared {
                            threshold: h2,
                            death_node: slice.death,
                            death,
                        })
                    }
                }
            }
            Role::InfantAlive => {
                if state[layout.slice(t).birth] == 0.0 {
                    Ok(NodeLaw::Fixed(f64::NAN))
                } else if t > 1 && state[layout.slice(t - 1).infant] == 0.0 {
                    Ok(NodeLaw::Fixed(0.0))
                } else {
                    self.bernoulli(node, law.prob(state))
                }
            }
            Role::HivFree => {
                let last = layout.slice(layout.horizon());
                if state[last.birth] == 0.0 || state[last.infant] == 0.0 {
                    Ok(NodeLaw::Fixed(f64::NAN))
                } else {
                    self.bernoulli(node, law.prob(state))
                }
            }
            Role::Composite => {
                let last = layout.slice(layout.horizon());
                let y = state[last.birth] == 1.0
                    && state[last.infant] == 1.0
                    && state[layout.hiv_free] == 1.0;
                Ok(NodeLaw::Fixed(if y { 1.0 } else { 0.0 }))
            }
        }
    }

    /// Realize one individual from pre-drawn uniforms (one per node).
    pub(crate) fn realize(
        &self,
        uniforms: &[f64],
        state: &mut [f64],
        stats: &mut DrawStats,
    ) -> Result<()> {
        for node in 0..state.len() {
            let u = uniforms[node];
            state[node] = match self.node_law(node, state, stats)? {
                NodeLaw::Fixed(v) => v,
                NodeLaw::Bernoulli(p) => indicator(u < p),
                NodeLaw::Shared {
                    threshold,
                    death_node,
                    ..
                } => indicator(uniforms[death_node] < threshold),
                NodeLaw::Categorical(probs) => {
                    let mut acc = 0.0;
                    let mut level = probs.iter().rposition(|q| *q > 0.0).unwrap_or(0);
                    for (k, q) in probs.iter().enumerate() {
                        acc += q;
                        if u < acc {
                            level = k;
                            break;
                        }
                    }
                    level as f64
                }
                NodeLaw::Uniform { lo, hi } => lo + (hi - lo) * u,
            };
        }
        Ok(())
    }

    /// Upper bound on the number of exogenous configurations, or an error if
    /// some node is continuous.
    pub(crate) fn configuration_count(&self) -> Result<u128> {
        let layout = &self.scm.layout;
        let mut total: u128 = 1;
        for (node, info) in layout.nodes.iter().enumerate() {
            let law = &self.scm.laws[node];
            let factor = match info.role {
                Role::Baseline if self.baseline.is_some() => 1,
                Role::Exposure if self.exposure.is_some() => 1,
                Role::Death | Role::Birth => match self.mediator {
                    MediatorMode::Natural => law.branching().unwrap_or(2),
                    MediatorMode::Controlled(_) => 1,
                    MediatorMode::Policy(_) => 2,
                },
                _ => law
                    .branching()
                    .ok_or_else(|| Error::Unsupported(format!("{} is continuous", info.name)))?,
            };
            total = total.saturating_mul(factor as u128);
        }
        Ok(total)
    }

    /// Visit every trajectory with positive probability.
    pub(crate) fn enumerate(&self, mut visit: impl FnMut(&[f64], f64)) -> Result<DrawStats> {
        let count = self.configuration_count()?;
        if count > ENUMERATION_BUDGET {
            return Err(Error::Unsupported(format!(
                "{count} exogenous configurations exceed the budget of {ENUMERATION_BUDGET}"
            )));
        }
        let mut state = vec![0.0; self.scm.layout.len()];
        let mut stats = DrawStats::default();
        self.branch(0, &mut state, 1.0, &mut stats, &mut visit)?;
        Ok(stats)
    }

    fn branch(
        &self,
        node: usize,
        state: &mut [f64],
        prob: f64,
        stats: &mut DrawStats,
        visit: &mut impl FnMut(&[f64], f64),
    ) -> Result<()> {
        if node == state.len() {
            visit(state, prob);
            return Ok(());
        }
        let mut bernoulli = |p: f64, state: &mut [f64], stats: &mut DrawStats| -> Result<()> {
            if p > 0.0 {
                state[node] = 1.0;
                self.branch(node + 1, state, prob * p, stats, visit)?;
            }
            if p < 1.0 {
                state[node] = 0.0;
                self.branch(node + 1, state, prob * (1.0 - p), stats, visit)?;
            }
            Ok(())
        };
        match self.node_law(node, state, stats)? {
            NodeLaw::Fixed(v) => {
                state[node] = v;
                self.branch(node + 1, state, prob, stats, visit)
            }
            NodeLaw::Bernoulli(p) => bernoulli(p, state, stats),
            NodeLaw::Shared {
                threshold, death, ..
            } => {
                let p = match death {
                    None => threshold,
                    Some((h1, true)) => threshold.min(h1) / h1,
                    Some((h1, false)) => (threshold - h1).max(0.0) / (1.0 - h1),
                };
                bernoulli(p, state, stats)
            }
            NodeLaw::Categorical(probs) => {
                for (k, q) in probs.iter().enumerate() {
                    if *q > 0.0 {
                        state[node] = k as f64;
                        self.branch(node + 1, state, prob * q, stats, visit)?;
                    }
                }
                Ok(())
            }
            NodeLaw::Uniform { .. } => Err(Error::Unsupported(format!(
                "{} is continuous",
                self.scm.layout.name(node)
            ))),
        }
    }
}

#[inline]
fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Simulate `n` individuals; row `i` depends only on `(seed, i)`.
pub(crate) fn simulate(regime: &Regime, n: u64, seed: u64) -> Result<(Vec<Trajectory>, DrawStats)> {
    let noise = NoiseSource::new(seed);
    let width = regime.scm.layout.len();
    let rows = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0; width], vec![0.0; width]),
            |(uniforms, state), i| {
                noise.fill(i, uniforms);
                let mut stats = DrawStats::default();
                regime.realize(uniforms, state, &mut stats)?;
                Ok((Trajectory::from_state(&regime.scm.layout, state), stats))
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let mut stats = DrawStats::default();
    let rows = rows
        .into_iter()
        .map(|(r, s)| {
            stats = stats.add(s);
            r
        })
        .collect();
    Ok((rows, stats))
}

/// Fold over simulated raw states in fixed-size chunks. `merge` must be
/// associative and commutative for the result to be schedule-independent.
pub(crate) fn fold_states<A, I, F, M>(
    regime: &Regime,
    n: u64,
    seed: u64,
    init: I,
    fold: F,
    merge: M,
) -> Result<(A, DrawStats)>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, &[f64]) + Sync + Send,
    M: Fn(A, A) -> A + Sync + Send,
{
    let noise = NoiseSource::new(seed);
    let width = regime.scm.layout.len();
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            let mut stats = DrawStats::default();
            let mut uniforms = vec![0.0; width];
            let mut state = vec![0.0; width];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                noise.fill(i, &mut uniforms);
                regime.realize(&uniforms, &mut state, &mut stats)?;
                fold(&mut acc, &state);
            }
            Ok((acc, stats))
        })
        .try_reduce(
            || (init(), DrawStats::default()),
            |(a, sa), (b, sb)| Ok((merge(a, b), sa.add(sb))),
        )
}

/// Joint counts of `(y, z2_tau)` under two regimes, individual by individual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PairedCounts {
    pub n: u64,
    /// Index `y1 | d1 << 1 | y0 << 2 | d0 << 3`.
    pub patterns: [u64; 16],
    pub stats: [DrawStats; 2],
}

impl PairedCounts {
    fn empty() -> Self {
        PairedCounts {
            n: 0,
            patterns: [0; 16],
            stats: [DrawStats::default(); 2],
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.n += other.n;
        for (a, b) in self.patterns.iter_mut().zip(other.patterns) {
            *a += b;
        }
        self.stats = [
            self.stats[0].add(other.stats[0]),
            self.stats[1].add(other.stats[1]),
        ];
        self
    }
}

/// Simulate each individual under both regimes. With equal seeds the two arms
/// share every exogenous uniform.
pub(crate) fn paired_counts(
    arm1: &Regime,
    arm0: &Regime,
    n: u64,
    seed1: u64,
    seed0: u64,
) -> Result<PairedCounts> {
    let layout = &arm1.scm.layout;
    let width = layout.len();
    let (y_node, d_node) = (layout.composite, layout.slice(layout.horizon()).birth);
    let noise1 = NoiseSource::new(seed1);
    let noise0 = NoiseSource::new(seed0);
    let shared = seed1 == seed0;
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = PairedCounts::empty();
            let mut u1 = vec![0.0; width];
            let mut u0 = vec![0.0; width];
            let mut s1 = vec![0.0; width];
            let mut s0 = vec![0.0; width];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                noise1.fill(i, &mut u1);
                arm1.realize(&u1, &mut s1, &mut acc.stats[0])?;
                let u0 = if shared {
                    &u1
                } else {
                    noise0.fill(i, &mut u0);
                    &u0
                };
                arm0.realize(u0, &mut s0, &mut acc.stats[1])?;
                let idx = (s1[y_node] as usize)
                    | (s1[d_node] as usize) << 1
                    | (s0[y_node] as usize) << 2
                    | (s0[d_node] as usize) << 3;
                acc.patterns[idx] += 1;
                acc.n += 1;
            }
            Ok(acc)
        })
        .try_reduce(PairedCounts::empty, |a, b| Ok(a.merge(b)))
}

/// Whether `node` is drawn from its law in `state` under natural mediators,
/// rather than fixed by a structural rule. Defines fitting risk sets.
pub(crate) fn is_drawn(
    layout: &crate::scm::layout::Layout,
    death_blocks_birth: bool,
    node: usize,
    state: &[f64],
) -> bool {
    let info = &layout.nodes[node];
    let t = info.time;
    match info.role {
        Role::Baseline | Role::Exposure | Role::Covariate => true,
        Role::Death => t == 1 || state[layout.slice(t - 1).death] == 0.0,
        Role::Birth => {
            (t == 1 || state[layout.slice(t - 1).birth] == 0.0)
                && !(death_blocks_birth && state[layout.slice(t).death] == 1.0)
        }
        Role::InfantAlive => {
            state[layout.slice(t).birth] == 1.0
                && (t == 1 || state[layout.slice(t - 1).infant] != 0.0)
        }
        Role::HivFree => {
            let last = layout.slice(layout.horizon());
            state[last.birth] == 1.0 && state[last.infant] == 1.0
        }
        Role::Composite => false,
    }
}
