use serde::{Deserialize, Serialize};

use super::NetworkState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub algorithm: String,
    pub dgf: String,
    pub graph: String,
    pub agents: usize,
    pub dim: usize,
    pub dt: f64,
    pub steps: usize,
    pub stride: usize,
    pub schedule: Option<String>,
    pub baseline_definition: Option<String>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    Diverged { step: usize, reason: String },
}

/// Subsampled snapshots of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    steps: Vec<usize>,
    states: Vec<NetworkState>,
    pub metadata: RunMetadata,
    outcome: RunOutcome,
}

impl Trajectory {
    pub(crate) fn new(metadata: RunMetadata) -> Self {
        Trajectory {
            steps: Vec::new(),
            states: Vec::new(),
            metadata,
            outcome: RunOutcome::Completed,
        }
    }

    pub(crate) fn push(&mut self, step: usize, state: NetworkState) {
        self.steps.push(step);
        self.states.push(state);
    }

    pub(crate) fn mark_diverged(&mut self, step: usize, cause: Error) -> Result<()> {
        let reason = match cause {
            Error::Diverged { reason, .. } => reason,
            Error::NumericalOverflow(reason) => reason,
            other => return Err(other),
        };
        log::warn!("{} diverged at step {step}: {reason}", self.metadata.algorithm);
        self.outcome = RunOutcome::Diverged { step, reason };
        Ok(())
    }

    /// Builds a trajectory from externally produced samples.
    pub fn from_samples(
        metadata: RunMetadata,
        samples: Vec<(usize, NetworkState)>,
    ) -> Result<Self> {
        let mut traj = Trajectory::new(metadata);
        for (step, state) in samples {
            if let Some(&last) = traj.steps.last() {
                if step <= last {
                    return Err(Error::InvalidParameter(
                        "trajectory steps must be strictly increasing".into(),
                    ));
                }
            }
            traj.push(step, state);
        }
        Ok(traj)
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn states(&self) -> &[NetworkState] {
        &self.states
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<&NetworkState> {
        self.states.last()
    }

    pub fn outcome(&self) -> &RunOutcome {
        &self.outcome
    }

    pub fn diverged(&self) -> bool {
        matches!(self.outcome, RunOutcome::Diverged { .. })
    }

    /// Turns a diverged outcome into [`Error::Diverged`].
    pub fn into_result(self) -> Result<Self> {
        match &self.outcome {
            RunOutcome::Completed => Ok(self),
            RunOutcome::Diverged { step, reason } => Err(Error::Diverged {
                step: *step,
                reason: reason.clone(),
            }),
        }
    }
}
