//! Exposure and mediator interventions.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::intervention::policy::MediatorPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposurePlan {
    Natural,
    SetTo(u8),
}

impl ExposurePlan {
    pub fn value(self) -> Option<u8> {
        match self {
            ExposurePlan::Natural => None,
            ExposurePlan::SetTo(a) => Some(a),
        }
    }
}

/// A fixed mediator path, `z1[t - 1]` and `z2[t - 1]` at time `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediatorProfile {
    pub z1: Vec<u8>,
    pub z2: Vec<u8>,
}

impl MediatorProfile {
    /// Mother survives and the birth happens at t = 1.
    pub fn survival_and_birth(horizon: usize) -> Self {
        MediatorProfile {
            z1: vec![0; horizon],
            z2: vec![1; horizon],
        }
    }

    pub fn validate(&self, horizon: usize, death_blocks_birth: bool) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProfile(m));
        if self.z1.len() != horizon || self.z2.len() != horizon {
            return bad(format!(
                "profile has {} death and {} birth values, horizon is {horizon}",
                self.z1.len(),
                self.z2.len()
            ));
        }
        for (name, path) in [("z1", &self.z1), ("z2", &self.z2)] {
            if let Some(t) = path.iter().position(|v| *v > 1) {
                return bad(format!("{name}_{} is {}, expected 0 or 1", t + 1, path[t]));
            }
            if let Some(t) = path.windows(2).position(|w| w[1] < w[0]) {
                return bad(format!("{name} decreases from t={} to t={}", t + 1, t + 2));
            }
        }
        if death_blocks_birth {
            for t in 0..horizon {
                let before = if t == 0 { 0 } else { self.z2[t - 1] };
                if self.z1[t] == 1 && before == 0 && self.z2[t] == 1 {
                    return bad(format!("birth at t={} after maternal death", t + 1));
                }
            }
        }
        if self.z2.last() != Some(&1) {
            return bad("z2 must equal 1 at the horizon for the outcome to be defined".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediatorPlan {
    Natural,
    Controlled(MediatorProfile),
    Stochastic(MediatorPolicy),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionPlan {
    pub exposure: ExposurePlan,
    pub mediator: MediatorPlan,
}

impl InterventionPlan {
    pub fn natural() -> Self {
        InterventionPlan {
            exposure: ExposurePlan::Natural,
            mediator: MediatorPlan::Natural,
        }
    }

    pub fn set_exposure(a: u8) -> Self {
        InterventionPlan {
            exposure: ExposurePlan::SetTo(a),
            mediator: MediatorPlan::Natural,
        }
    }

    pub fn with_mediator(mut self, mediator: MediatorPlan) -> Self {
        self.mediator = mediator;
        self
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        digest_plans(std::slice::from_ref(self))
    }
}

pub(crate) fn digest_plans(plans: &[InterventionPlan]) -> String {
    let bytes = serde_json::to_vec(plans).expect("plans serialize");
    hex::encode(Sha256::digest(bytes))
}
