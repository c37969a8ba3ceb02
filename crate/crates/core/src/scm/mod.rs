//! The longitudinal model: specification, validation, simulation under the
//! natural regime and exact enumeration.

pub mod compiled;
pub(crate) mod engine;
pub mod layout;
pub mod spec;
pub mod trajectory;
pub mod validate;

pub use compiled::CompiledScm;
pub use engine::{DrawStats, ENUMERATION_BUDGET};
pub use layout::{Domain, Layout, Schema};
pub use spec::{Law, NamedLaw, ScmSpec};
pub use trajectory::{Invariant, Population, Trajectory};
pub use validate::{validate_scm, ValidationReport, Violation, ViolationKind};

use crate::error::{Error, Result};
use crate::numeric::NeumaierSum;
use engine::Regime;

/// Simulate `n` individuals under the natural regime.
pub fn simulate_natural(spec: &ScmSpec, n: u64, seed: u64) -> Result<Population> {
    let scm = CompiledScm::new(spec)?;
    simulate_compiled(&scm, n, seed)
}

pub(crate) fn simulate_compiled(scm: &CompiledScm, n: u64, seed: u64) -> Result<Population> {
    if n == 0 {
        return Err(Error::Config("population size must be at least 1".into()));
    }
    let (rows, _) = engine::simulate(&Regime::natural(scm), n, seed)?;
    Ok(Population {
        schema: scm.layout.schema.clone(),
        rows,
    })
}

/// A trajectory with positive probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub trajectory: Trajectory,
    pub probability: f64,
}

/// Exact joint law of all trajectories of a discrete model.
#[derive(Debug, Clone)]
pub struct ExactLaw {
    layout: Layout,
    states: Vec<Vec<f64>>,
    pub atoms: Vec<Atom>,
}

impl ExactLaw {
    pub fn total(&self) -> f64 {
        let mut s = NeumaierSum::default();
        for a in &self.atoms {
            s.add(a.probability);
        }
        s.value()
    }

    /// Probability of an event over trajectories.
    pub fn probability(&self, event: impl Fn(&Trajectory) -> bool) -> f64 {
        let mut s = NeumaierSum::default();
        for a in self.atoms.iter().filter(|a| event(&a.trajectory)) {
            s.add(a.probability);
        }
        s.value()
    }

    /// `P(node = value)`, with `None` meaning missing.
    pub fn marginal(&self, node: &str, value: Option<u8>) -> Result<f64> {
        let idx = self.layout.resolve(node)?;
        let mut s = NeumaierSum::default();
        for (state, atom) in self.states.iter().zip(&self.atoms) {
            let v = state[idx];
            let hit = match value {
                None => v.is_nan(),
                Some(x) => v == f64::from(x),
            };
            if hit {
                s.add(atom.probability);
            }
        }
        Ok(s.value())
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }
}

/// Enumerate every trajectory of a discrete model with its probability.
pub fn enumerate_exact(spec: &ScmSpec) -> Result<ExactLaw> {
    let scm = CompiledScm::new(spec)?;
    let mut states = Vec::new();
    let mut atoms = Vec::new();
    Regime::natural(&scm).enumerate(|state, p| {
        states.push(state.to_vec());
        atoms.push(Atom {
            trajectory: Trajectory::from_state(&scm.layout, state),
            probability: p,
        });
    })?;
    Ok(ExactLaw {
        layout: scm.layout.clone(),
        states,
        atoms,
    })
}

/// Whether the natural regime of `spec` can be enumerated within budget.
pub fn enumeration_eligible(spec: &ScmSpec) -> bool {
    CompiledScm::new(spec)
        .and_then(|scm| Regime::natural(&scm).configuration_count())
        .is_ok_and(|c| c <= ENUMERATION_BUDGET)
}
