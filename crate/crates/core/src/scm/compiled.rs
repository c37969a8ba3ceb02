//! Name-resolved, evaluation-ready form of an [`ScmSpec`].

use crate::error::{Error, Result};
use crate::scm::layout::{Domain, Layout, Schema};
use crate::scm::spec::{Law, ScmSpec};
use crate::scm::validate::{sigmoid, validate_scm};

/// Logistic laws over discrete parents are tabulated when the table stays
/// below this many cells.
const TABULATE_LIMIT: usize = 4096;

#[derive(Debug, Clone)]
pub(crate) enum CompiledLaw {
    Constant(f64),
    Logistic {
        intercept: f64,
        terms: Vec<(usize, f64)>,
    },
    /// `(node, radix)` per parent, most significant first.
    Table {
        parents: Vec<(usize, usize)>,
        p: Vec<f64>,
    },
    Categorical(Vec<f64>),
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// The composite outcome has no law of its own.
    Composite,
}

impl CompiledLaw {
    /// Probability that a binary node equals 1.
    #[inline]
    pub(crate) fn prob(&self, state: &[f64]) -> f64 {
        match self {
            CompiledLaw::Constant(p) => *p,
            CompiledLaw::Table { parents, p } => {
                let mut idx = 0usize;
                for &(node, radix) in parents {
                    let v = state[node];
                    let level = if v.is_nan() { 2 } else { v as usize };
                    idx = idx * radix + level;
                }
                p[idx]
            }
            CompiledLaw::Logistic { intercept, terms } => {
                let mut eta = *intercept;
                for &(node, c) in terms {
                    let v = state[node];
                    if !v.is_nan() {
                        eta += c * v;
                    }
                }
                sigmoid(eta)
            }
            CompiledLaw::Categorical(_) | CompiledLaw::Uniform { .. } | CompiledLaw::Composite => {
                unreachable!("not a Bernoulli law")
            }
        }
    }

    /// Number of distinct outcomes the law can produce, `None` if continuous.
    pub(crate) fn branching(&self) -> Option<usize> {
        match self {
            CompiledLaw::Constant(p) => Some(if *p == 0.0 || *p == 1.0 { 1 } else { 2 }),
            CompiledLaw::Table { p, .. } => Some(if p.iter().all(|q| *q == 0.0 || *q == 1.0) {
                1
            } else {
                2
            }),
            CompiledLaw::Logistic { .. } => Some(2),
            CompiledLaw::Categorical(probs) => {
                Some(probs.iter().filter(|q| **q > 0.0).count().max(1))
            }
            CompiledLaw::Uniform { .. } => None,
            CompiledLaw::Composite => Some(1),
        }
    }
}

/// A model ready for simulation and enumeration.
#[derive(Debug, Clone)]
pub struct CompiledScm {
    pub(crate) layout: Layout,
    pub(crate) laws: Vec<CompiledLaw>,
    pub(crate) death_blocks_birth: bool,
    pub(crate) shared_mediator_noise: bool,
    pub(crate) spec: ScmSpec,
}

impl CompiledScm {
    /// Validate and compile.
    pub fn new(spec: &ScmSpec) -> Result<Self> {
        let report = validate_scm(spec);
        if !report.is_ok() {
            return Err(Error::InvalidSpec(report));
        }
        Self::compile(spec)
    }

    /// Compile without range checks. Used for fitted models whose tables may
    /// hold `NaN` for unobserved cells; reaching such a cell is a positivity
    /// error at evaluation time.
    pub(crate) fn compile(spec: &ScmSpec) -> Result<Self> {
        let layout = Layout::new(&Schema::from_spec(spec))?;
        let mut laws = vec![CompiledLaw::Composite; layout.len()];
        for (i, b) in spec.baseline.iter().enumerate() {
            laws[layout.baseline.start + i] = compile_law(&layout, &b.law)?;
        }
        laws[layout.exposure] = compile_law(&layout, &spec.exposure)?;
        for t in 1..=spec.horizon {
            let slice = layout.slice(t).clone();
            for (i, c) in spec.covariates_at(t).iter().enumerate() {
                laws[slice.covariates.start + i] = compile_law(&layout, &c.law)?;
            }
            laws[slice.death] = compile_law(&layout, &spec.death[t - 1])?;
            laws[slice.birth] = compile_law(&layout, &spec.birth[t - 1])?;
            laws[slice.infant] = compile_law(&layout, &spec.infant_survival[t - 1])?;
        }
        laws[layout.hiv_free] = compile_law(&layout, &spec.infant_hiv_free)?;
        Ok(CompiledScm {
            layout,
            laws,
            death_blocks_birth: spec.death_blocks_birth,
            shared_mediator_noise: spec.shared_mediator_noise,
            spec: spec.clone(),
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn spec(&self) -> &ScmSpec {
        &self.spec
    }

    pub fn horizon(&self) -> usize {
        self.layout.horizon()
    }

    /// True when every node is discrete, so the exact law is computable.
    pub fn is_discrete(&self) -> bool {
        self.laws.iter().all(|l| l.branching().is_some())
    }
}

fn compile_law(layout: &Layout, law: &Law) -> Result<CompiledLaw> {
    Ok(match law {
        Law::Constant { p } => CompiledLaw::Constant(*p),
        Law::Categorical { probs } => CompiledLaw::Categorical(probs.clone()),
        Law::Uniform { lo, hi } => CompiledLaw::Uniform { lo: *lo, hi: *hi },
        Law::Table { parents, p } => {
            let parents = parents
                .iter()
                .map(|name| {
                    let node = layout.resolve(name)?;
                    let radix = layout.nodes[node].domain.radix().ok_or_else(|| {
                        Error::Config(format!("table parent {name} is continuous"))
                    })?;
                    Ok((node, radix))
                })
                .collect::<Result<Vec<_>>>()?;
            CompiledLaw::Table {
                parents,
                p: p.clone(),
            }
        }
        Law::Logistic { intercept, coef } => {
            let terms = coef
                .iter()
                .map(|(name, c)| Ok((layout.resolve(name)?, *c)))
                .collect::<Result<Vec<_>>>()?;
            tabulate(layout, *intercept, &terms).unwrap_or(CompiledLaw::Logistic {
                intercept: *intercept,
                terms,
            })
        }
    })
}

/// Precompute a logistic law over all parent configurations.
fn tabulate(layout: &Layout, intercept: f64, terms: &[(usize, f64)]) -> Option<CompiledLaw> {
    let mut parents = Vec::with_capacity(terms.len());
    let mut cells = 1usize;
    for &(node, _) in terms {
        let domain = layout.nodes[node].domain;
        let radix = domain.radix()?;
        cells = cells.checked_mul(radix)?;
        parents.push((node, radix));
    }
    if cells > TABULATE_LIMIT {
        return None;
    }
    let mut p = Vec::with_capacity(cells);
    let mut levels = vec![0usize; terms.len()];
    for _ in 0..cells {
        let mut eta = intercept;
        for (k, &(node, c)) in terms.iter().enumerate() {
            let value = match layout.nodes[node].domain {
                Domain::Tristate if levels[k] == 2 => 0.0,
                _ => levels[k] as f64,
            };
            eta += c * value;
        }
        p.push(sigmoid(eta));
        // Increment the mixed-radix counter, last parent fastest.
        for k in (0..levels.len()).rev() {
            levels[k] += 1;
            if levels[k] < parents[k].1 {
                break;
            }
            levels[k] = 0;
        }
    }
    Some(CompiledLaw::Table { parents, p })
}
