//! Observed one-world data, aggregated into weighted patterns.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, tags};
use crate::scm::layout::{Layout, Schema};
use crate::scm::trajectory::Population;

/// Rows of observed data. Identical rows are stored once with a count, so
/// fitting cost scales with the number of distinct patterns.
#[derive(Debug, Clone)]
pub struct ObservedDataset {
    layout: Layout,
    patterns: Vec<Vec<f64>>,
    counts: Vec<f64>,
    /// Pattern index of each original row, for resampling.
    row_pattern: Vec<u32>,
}

impl ObservedDataset {
    /// Check every row against the structural rules and aggregate.
    pub fn from_population(pop: &Population) -> Result<Self> {
        let layout = Layout::new(&pop.schema)?;
        let mut index: BTreeMap<Vec<u64>, u32> = BTreeMap::new();
        let mut patterns = Vec::new();
        let mut counts = Vec::new();
        let mut row_pattern = Vec::with_capacity(pop.rows.len());
        for (row, traj) in pop.rows.iter().enumerate() {
            if let Some(rule) = traj.violations().first() {
                return Err(Error::Dataset {
                    row,
                    rule: rule.to_string(),
                });
            }
            if traj.horizon() != layout.horizon() || traj.l0.len() != layout.baseline.len() {
                return Err(Error::Dataset {
                    row,
                    rule: "row shape does not match the schema".into(),
                });
            }
            if let Some(v) = traj.l0.iter().find(|v| !v.is_finite()) {
                return Err(Error::Dataset {
                    row,
                    rule: format!("baseline value {v} is not finite"),
                });
            }
            let state = traj.to_state(&layout);
            let key: Vec<u64> = state.iter().map(|v| canonical_bits(*v)).collect();
            let next = patterns.len() as u32;
            let idx = *index.entry(key).or_insert(next);
            if idx == next {
                patterns.push(state);
                counts.push(0.0);
            }
            counts[idx as usize] += 1.0;
            row_pattern.push(idx);
        }
        Ok(ObservedDataset {
            layout,
            patterns,
            counts,
            row_pattern,
        })
    }

    /// Parse CSV in the population layout and validate every row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        Self::from_population(&Population::read_csv(reader)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn len(&self) -> usize {
        self.row_pattern.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_pattern.is_empty()
    }

    pub fn schema(&self) -> &Schema {
        &self.layout.schema
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn pattern_count(&self) -> usize {
        self.patterns.len()
    }

    pub(crate) fn patterns(&self) -> &[Vec<f64>] {
        &self.patterns
    }

    /// Row counts per pattern.
    pub(crate) fn counts(&self) -> &[f64] {
        &self.counts
    }

    /// Rows with exposure `a`.
    pub fn arm_size(&self, a: u8) -> usize {
        let e = self.layout.exposure;
        self.patterns
            .iter()
            .zip(&self.counts)
            .filter(|(p, _)| p[e] == f64::from(a))
            .map(|(_, c)| *c as usize)
            .sum()
    }

    /// Pattern weights of bootstrap replicate `r`: counts of each pattern in a
    /// resample of `n` rows with replacement.
    pub(crate) fn bootstrap_weights(&self, seed: u64, r: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tags::BOOTSTRAP, r));
        let n = self.row_pattern.len();
        let mut w = vec![0.0; self.patterns.len()];
        for _ in 0..n {
            w[self.row_pattern[rng.random_range(0..n)] as usize] += 1.0;
        }
        w
    }
}

fn canonical_bits(v: f64) -> u64 {
    if v.is_nan() {
        u64::MAX
    } else {
        v.to_bits()
    }
}
