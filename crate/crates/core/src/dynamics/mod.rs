//! Distributed mirror descent with integral feedback.
//!
//! The continuous-time system acts on stacked vectors of `n` agents with `d`
//! coordinates each:
//!
//! ```text
//! z' = -(grad f(x) + L x + y)
//! y' =  L x,            y(0) = 0
//! x  =  grad phi*(z)    (blockwise)
//! ```
//!
//! where `L` is the graph Laplacian lifted to `L ⊗ I_d`. [`Network::euler_step`]
//! is its explicit Euler discretization; [`Network::simulate`] iterates it.

mod baseline;
mod reduced;
mod trajectory;

pub use baseline::{BaselineForm, StepSchedule};
pub use reduced::{ReducedState, ReducedSystem, ReducedTrajectory};
pub use trajectory::{RunMetadata, RunOutcome, Trajectory};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mirror::DistanceGenerator;
use crate::objective::{CostSet, LocalCost, QuadraticCost};

/// States whose Euclidean norm exceeds this are declared diverged.
pub const DIVERGENCE_GUARD: f64 = 1e12;

/// Stacked primal, dual and integral-feedback variables of all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    pub t: f64,
}

impl NetworkState {
    pub fn norm(&self) -> f64 {
        (self.x.norm_squared() + self.z.norm_squared() + self.y.norm_squared()).sqrt()
    }

    /// Agent `i`'s primal block.
    pub fn agent_x(&self, agent: usize, d: usize) -> &[f64] {
        &self.x.as_slice()[agent * d..(agent + 1) * d]
    }

    /// `sum_i y_i`, which stays zero along the dynamics when `y(0) = 0`.
    pub fn feedback_sum(&self, d: usize) -> DVector<f64> {
        let n = self.y.len() / d;
        let mut total = DVector::zeros(d);
        for i in 0..n {
            total += self.y.rows(i * d, d);
        }
        total
    }

    /// `max_{i,j} ||x_i - x_j||`.
    pub fn consensus_error(&self, d: usize) -> f64 {
        let n = self.x.len() / d;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dist = self
                    .agent_x(i, d)
                    .iter()
                    .zip(self.agent_x(j, d))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(dist);
            }
        }
        worst
    }
}

/// The equilibrium `(1 ⊗ x*, -grad f(1 ⊗ x*), 1 ⊗ grad phi(x*))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub x_star: DVector<f64>,
    pub x_block: DVector<f64>,
    pub y_star: DVector<f64>,
    pub z_block: DVector<f64>,
}

impl Equilibrium {
    pub fn as_state(&self) -> NetworkState {
        NetworkState {
            x: self.x_block.clone(),
            z: self.z_block.clone(),
            y: self.y_star.clone(),
            t: 0.0,
        }
    }

    /// `||(x - x*, y - y*)||`, the distance used for local rate estimates.
    pub fn distance(&self, state: &NetworkState) -> f64 {
        ((&state.x - &self.x_block).norm_squared() + (&state.y - &self.y_star).norm_squared())
            .sqrt()
    }
}

/// Step size, horizon and sampling for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub dt: f64,
    pub steps: usize,
    /// Snapshot every `stride` steps; the first and last states are always kept.
    pub stride: usize,
}

impl SimulationConfig {
    pub fn new(dt: f64, steps: usize, stride: usize) -> Result<Self> {
        let config = SimulationConfig { dt, steps, stride };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {}", self.dt)));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        Ok(())
    }

    fn samples(&self, step: usize) -> bool {
        step % self.stride == 0 || step == self.steps
    }
}

/// Costs, graph and mirror map of one distributed problem.
#[derive(Debug)]
pub struct Network<'a, C = QuadraticCost> {
    costs: &'a CostSet<C>,
    graph: &'a Graph,
    dgf: DistanceGenerator,
}

impl<C> Clone for Network<'_, C> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<C> Copy for Network<'_, C> {}

impl<'a, C: LocalCost> Network<'a, C> {
    pub fn new(costs: &'a CostSet<C>, graph: &'a Graph, dgf: &DistanceGenerator) -> Result<Self> {
        if costs.agent_count() != graph.agent_count() {
            return Err(Error::DimensionMismatch {
                expected: graph.agent_count(),
                actual: costs.agent_count(),
            });
        }
        if dgf.dim() != costs.dim() {
            return Err(Error::DimensionMismatch {
                expected: costs.dim(),
                actual: dgf.dim(),
            });
        }
        Ok(Network {
            costs,
            graph,
            dgf: *dgf,
        })
    }

    pub fn costs(&self) -> &'a CostSet<C> {
        self.costs
    }

    pub fn graph(&self) -> &'a Graph {
        self.graph
    }

    pub fn dgf(&self) -> &DistanceGenerator {
        &self.dgf
    }

    pub fn agents(&self) -> usize {
        self.graph.agent_count()
    }

    pub fn dim(&self) -> usize {
        self.costs.dim()
    }

    fn stacked_len(&self) -> usize {
        self.agents() * self.dim()
    }

    /// `z_i(0) = grad phi(x0_i)`, `y(0) = 0`, `t = 0`.
    pub fn init_state(&self, x0: &[DVector<f64>]) -> Result<NetworkState> {
        if x0.len() != self.agents() {
            return Err(Error::DimensionMismatch {
                expected: self.agents(),
                actual: x0.len(),
            });
        }
        let d = self.dim();
        let mut x = DVector::zeros(self.stacked_len());
        let mut z = DVector::zeros(self.stacked_len());
        for (i, xi) in x0.iter().enumerate() {
            self.dgf
                .grad_phi_into(xi.as_slice(), &mut z.as_mut_slice()[i * d..(i + 1) * d])?;
            x.rows_mut(i * d, d).copy_from(xi);
        }
        Ok(NetworkState {
            x,
            z,
            y: DVector::zeros(self.stacked_len()),
            t: 0.0,
        })
    }

    /// Same initial point for every agent.
    pub fn init_uniform(&self, x0: &DVector<f64>) -> Result<NetworkState> {
        self.init_state(&vec![x0.clone(); self.agents()])
    }

    pub fn equilibrium(&self, x_star: &DVector<f64>) -> Result<Equilibrium> {
        let n = self.agents();
        let d = self.dim();
        if x_star.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: x_star.len(),
            });
        }
        let z_star = self.dgf.grad_phi(x_star.as_slice())?;
        let mut x_block = DVector::zeros(n * d);
        let mut z_block = DVector::zeros(n * d);
        for i in 0..n {
            x_block.rows_mut(i * d, d).copy_from(x_star);
            z_block.rows_mut(i * d, d).copy_from(&z_star);
        }
        let mut grad = DVector::zeros(n * d);
        self.costs
            .stacked_gradient_into(x_block.as_slice(), grad.as_mut_slice());
        Ok(Equilibrium {
            x_star: x_star.clone(),
            x_block,
            y_star: -grad,
            z_block,
        })
    }

    /// `(z', y')` at `state`; `x` is recomputed from `z` first.
    pub fn vector_field(&self, state: &NetworkState) -> Result<(DVector<f64>, DVector<f64>)> {
        let mut work = Workspace::new(self.stacked_len());
        let mut x = DVector::zeros(self.stacked_len());
        self.primal_from_dual(state.z.as_slice(), x.as_mut_slice())?;
        let mut z_dot = DVector::zeros(self.stacked_len());
        let mut y_dot = DVector::zeros(self.stacked_len());
        self.field_into(&x, &state.y, &mut work, z_dot.as_mut_slice(), y_dot.as_mut_slice());
        Ok((z_dot, y_dot))
    }

    fn field_into(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        work: &mut Workspace,
        z_dot: &mut [f64],
        y_dot: &mut [f64],
    ) {
        self.costs
            .stacked_gradient_into(x.as_slice(), &mut work.grad);
        self.graph
            .apply_laplacian(x.as_slice(), self.dim(), &mut work.lx);
        for k in 0..z_dot.len() {
            z_dot[k] = -(work.grad[k] + work.lx[k] + y[k]);
            y_dot[k] = work.lx[k];
        }
    }

    fn primal_from_dual(&self, z: &[f64], x: &mut [f64]) -> Result<()> {
        let d = self.dim();
        for (zi, xi) in z.chunks_exact(d).zip(x.chunks_exact_mut(d)) {
            self.dgf.grad_conjugate_into(zi, xi)?;
        }
        Ok(())
    }

    /// One explicit Euler step:
    /// `z += dt z'`, `y += dt L x`, `x = grad phi*(z)`, `t += dt`.
    pub fn euler_step(&self, state: &NetworkState, dt: f64) -> Result<NetworkState> {
        let mut next = state.clone();
        let mut work = Workspace::new(self.stacked_len());
        self.step_in_place(&mut next, dt, &mut work)?;
        Ok(next)
    }

    fn step_in_place(&self, state: &mut NetworkState, dt: f64, work: &mut Workspace) -> Result<()> {
        let mut z_dot = std::mem::take(&mut work.z_dot);
        let mut y_dot = std::mem::take(&mut work.y_dot);
        self.field_into(&state.x, &state.y, work, &mut z_dot, &mut y_dot);
        for k in 0..z_dot.len() {
            state.z[k] += dt * z_dot[k];
            state.y[k] += dt * y_dot[k];
        }
        work.z_dot = z_dot;
        work.y_dot = y_dot;
        self.primal_from_dual(state.z.as_slice(), state.x.as_mut_slice())?;
        state.t += dt;
        Ok(())
    }

    /// Iterates [`Network::euler_step`]. A run whose state norm exceeds
    /// [`DIVERGENCE_GUARD`] or overflows the mirror map stops early with
    /// [`RunOutcome::Diverged`]; the samples gathered so far are kept.
    pub fn simulate(&self, initial: &NetworkState, config: &SimulationConfig) -> Result<Trajectory> {
        config.validate()?;
        let mut state = initial.clone();
        let mut work = Workspace::new(self.stacked_len());
        let mut traj = Trajectory::new(self.metadata("integral_feedback", config));
        traj.push(0, state.clone());
        for step in 1..=config.steps {
            if let Err(reason) = self
                .step_in_place(&mut state, config.dt, &mut work)
                .and_then(|_| check_divergence(&state))
            {
                traj.mark_diverged(step, reason)?;
                return Ok(traj);
            }
            if config.samples(step) {
                traj.push(step, state.clone());
            }
        }
        Ok(traj)
    }

    /// `1 / (2 L_hat)` with `L_hat` the largest eigenvalue of `D (H + L)` at
    /// the stacked point `x0`, where `D` is the inverse mirror-map Hessian.
    /// For the Euclidean generator this is `lambda_max(H + L)`.
    pub fn default_step_size(&self, x0: &NetworkState) -> Result<f64> {
        let d = self.dim();
        let n = self.agents();
        let mut hl = self.costs.block_hessian(x0.x.as_slice())
            + crate::graph::kron_identity(&self.graph.laplacian(), d);
        let mut root_d = DMatrix::zeros(n * d, n * d);
        for i in 0..n {
            let inv = self.dgf.inverse_hessian_phi(x0.agent_x(i, d))?;
            let eig = SymmetricEigen::new(inv);
            let sqrt = &eig.eigenvectors
                * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()))
                * eig.eigenvectors.transpose();
            root_d.view_mut((i * d, i * d), (d, d)).copy_from(&sqrt);
        }
        hl = &root_d * hl * &root_d;
        let l_hat = SymmetricEigen::new(hl).eigenvalues.max();
        if !(l_hat > 0.0) {
            return Err(Error::InvalidParameter(
                "cannot derive a step size: D(H + L) has no positive eigenvalue".into(),
            ));
        }
        Ok(1.0 / (2.0 * l_hat))
    }

    fn metadata(&self, algorithm: &str, config: &SimulationConfig) -> RunMetadata {
        RunMetadata {
            algorithm: algorithm.to_owned(),
            dgf: self.dgf.name().to_owned(),
            graph: self.graph.label().to_owned(),
            agents: self.agents(),
            dim: self.dim(),
            dt: config.dt,
            steps: config.steps,
            stride: config.stride,
            schedule: None,
            baseline_definition: None,
            config_hash: None,
            seed: None,
        }
    }
}

/// Explicit Euler on `z' = -grad F(x)`, `x = grad phi*(z)`: the single-agent
/// (centralized) mirror descent flow.
pub fn centralized_md<F: LocalCost>(
    objective: &F,
    dgf: &DistanceGenerator,
    x0: &DVector<f64>,
    config: &SimulationConfig,
) -> Result<Trajectory> {
    config.validate()?;
    let d = objective.dim();
    if dgf.dim() != d || x0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: x0.len(),
        });
    }
    let mut state = NetworkState {
        x: x0.clone(),
        z: dgf.grad_phi(x0.as_slice())?,
        y: DVector::zeros(d),
        t: 0.0,
    };
    let mut grad = vec![0.0; d];
    let mut traj = Trajectory::new(RunMetadata {
        algorithm: "centralized_md".into(),
        dgf: dgf.name().into(),
        graph: "single".into(),
        agents: 1,
        dim: d,
        dt: config.dt,
        steps: config.steps,
        stride: config.stride,
        schedule: None,
        baseline_definition: None,
        config_hash: None,
        seed: None,
    });
    traj.push(0, state.clone());
    for step in 1..=config.steps {
        objective.gradient_into(state.x.as_slice(), &mut grad);
        for k in 0..d {
            state.z[k] += config.dt * -grad[k];
        }
        let mapped = dgf
            .grad_conjugate_into(state.z.as_slice(), state.x.as_mut_slice())
            .and_then(|_| check_divergence(&state));
        state.t += config.dt;
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

fn check_divergence(state: &NetworkState) -> Result<()> {
    let norm = state.norm();
    if !norm.is_finite() || norm > DIVERGENCE_GUARD {
        return Err(Error::Diverged {
            step: 0,
            reason: format!("state norm {norm:e} exceeds guard {DIVERGENCE_GUARD:e}"),
        });
    }
    Ok(())
}

struct Workspace {
    grad: Vec<f64>,
    lx: Vec<f64>,
    z_dot: Vec<f64>,
    y_dot: Vec<f64>,
}

impl Workspace {
    fn new(len: usize) -> Self {
        Workspace {
            grad: vec![0.0; len],
            lx: vec![0.0; len],
            z_dot: vec![0.0; len],
            y_dot: vec![0.0; len],
        }
    }
}
