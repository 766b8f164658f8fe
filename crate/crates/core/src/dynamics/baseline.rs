//! Distributed mirror descent without integral feedback, used as the
//! comparison runs.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{check_divergence, Network, NetworkState, SimulationConfig, Trajectory, Workspace};
use crate::error::{Error, Result};
use crate::objective::LocalCost;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `eta_k = eta0 / sqrt(k + 1)`.
    Diminishing { eta0: f64 },
    Constant { eta0: f64 },
}

impl StepSchedule {
    pub fn eta(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Diminishing { eta0 } => eta0 / ((k + 1) as f64).sqrt(),
            StepSchedule::Constant { eta0 } => eta0,
        }
    }

    pub fn eta0(&self) -> f64 {
        match *self {
            StepSchedule::Diminishing { eta0 } | StepSchedule::Constant { eta0 } => eta0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StepSchedule::Diminishing { .. } => "diminishing",
            StepSchedule::Constant { .. } => "constant",
        }
    }
}

/// Where the schedule `eta_k` enters the dual update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineForm {
    /// `z_i -= eta_k (grad f_i(x_i) + sum_j (x_i - x_j))`: the integral-feedback
    /// update with the `y` term removed.
    #[default]
    FullyScaled,
    /// `z_i -= eta_k grad f_i(x_i) + dt sum_j (x_i - x_j)`: only the gradient
    /// follows the schedule; the consensus term keeps the run's `dt`.
    GradientScaled,
}

impl BaselineForm {
    pub fn definition(&self) -> &'static str {
        match self {
            BaselineForm::FullyScaled => "baseline definition v1: z -= eta_k (grad f + L x)",
            BaselineForm::GradientScaled => {
                "baseline definition v2: z -= eta_k grad f + dt L x"
            }
        }
    }
}

impl<C: LocalCost> Network<'_, C> {
    /// Runs the feedback-free update from `initial` (its `y` is ignored).
    /// Snapshot times are `k * config.dt`.
    pub fn baseline_dmd(
        &self,
        initial: &NetworkState,
        schedule: StepSchedule,
        form: BaselineForm,
        config: &SimulationConfig,
    ) -> Result<Trajectory> {
        config.validate()?;
        if !(schedule.eta0() >= 0.0 && schedule.eta0().is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eta0 must be non-negative, got {}",
                schedule.eta0()
            )));
        }
        let len = self.agents() * self.dim();
        let mut state = NetworkState {
            y: DVector::zeros(len),
            ..initial.clone()
        };
        let mut work = Workspace::new(len);
        let mut meta = self.metadata(&format!("baseline_{}", schedule.name()), config);
        meta.schedule = Some(format!("{schedule:?}"));
        meta.baseline_definition = Some(form.definition().to_owned());
        let mut traj = Trajectory::new(meta);
        traj.push(0, state.clone());
        for k in 0..config.steps {
            let eta = schedule.eta(k);
            self.costs.stacked_gradient_into(state.x.as_slice(), &mut work.grad);
            self.graph
                .apply_laplacian(state.x.as_slice(), self.dim(), &mut work.lx);
            match form {
                BaselineForm::FullyScaled => {
                    for i in 0..len {
                        state.z[i] -= eta * (work.grad[i] + work.lx[i]);
                    }
                }
                BaselineForm::GradientScaled => {
                    for i in 0..len {
                        state.z[i] -= eta * work.grad[i] + config.dt * work.lx[i];
                    }
                }
            }
            let step = k + 1;
            state.t = step as f64 * config.dt;
            let mapped = self
                .primal_from_dual(state.z.as_slice(), state.x.as_mut_slice())
                .and_then(|_| check_divergence(&state));
            if let Err(reason) = mapped {
                traj.mark_diverged(step, reason)?;
                return Ok(traj);
            }
            if config.samples(step) {
                traj.push(step, state.clone());
            }
        }
        Ok(traj)
    }
}
