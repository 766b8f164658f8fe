//! The dynamics in centered, dimension-reduced coordinates `(x~, W2)`:
//!
//! ```text
//! x~' = -hess phi(x~ + x*)^{-1} (grad f(x~ + x*) - grad f(x*) + L x~ + S R W2)
//! W2' =  R^T S x~
//! ```
//!
//! with `S = sqrt(L) ⊗ I_d` and `R` the disagreement basis lifted to `R ⊗ I_d`.
//! The full state is recovered as `x = x~ + x*`, `y = y* + S R W2`,
//! `z = grad phi(x)`.

use nalgebra::{DMatrix, DVector};

use super::{Network, NetworkState, SimulationConfig, DIVERGENCE_GUARD};
use crate::error::{Error, Result};
use crate::graph::{kron_identity, SpectralData};
use crate::objective::LocalCost;

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub x_tilde: DVector<f64>,
    pub w2: DVector<f64>,
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct ReducedTrajectory {
    pub steps: Vec<usize>,
    pub states: Vec<ReducedState>,
    pub diverged_at: Option<usize>,
}

pub struct ReducedSystem<'a, C> {
    network: Network<'a, C>,
    x_star: DVector<f64>,
    x_block: DVector<f64>,
    grad_star: DVector<f64>,
    consensus_lift: DMatrix<f64>,
    basis_lift: DMatrix<f64>,
    sr: DMatrix<f64>,
    rts: DMatrix<f64>,
}

impl<'a, C: LocalCost> ReducedSystem<'a, C> {
    pub fn new(network: Network<'a, C>, spectral: &SpectralData, x_star: &DVector<f64>) -> Result<Self> {
        let d = network.dim();
        let n = network.agents();
        if spectral.agent_count() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: spectral.agent_count(),
            });
        }
        let eq = network.equilibrium(x_star)?;
        let s_lift = kron_identity(&spectral.sqrt_laplacian, d);
        let r = DMatrix::from_column_slice(n, 1, spectral.consensus_direction().as_slice());
        let basis_lift = kron_identity(&spectral.disagreement_basis(), d);
        let sr = &s_lift * &basis_lift;
        let rts = sr.transpose();
        Ok(ReducedSystem {
            network,
            x_star: x_star.clone(),
            x_block: eq.x_block,
            grad_star: -eq.y_star,
            consensus_lift: kron_identity(&r, d),
            basis_lift,
            sr,
            rts,
        })
    }

    pub fn reduced_dim(&self) -> usize {
        self.sr.ncols()
    }

    pub fn x_star(&self) -> &DVector<f64> {
        &self.x_star
    }

    /// Maps a full state with `sum_i y_i = 0` into reduced coordinates by
    /// solving `S R W2 = y - y*` in the least-squares sense.
    pub fn reduce(&self, state: &NetworkState) -> Result<ReducedState> {
        let x_tilde = &state.x - &self.x_block;
        let target = &state.y + &self.grad_star;
        let w2 = if self.reduced_dim() == 0 {
            DVector::zeros(0)
        } else {
            let normal = &self.rts * &self.sr;
            let rhs = &self.rts * target;
            normal
                .cholesky()
                .ok_or_else(|| Error::SingularFactor("R^T S S R is not positive definite".into()))?
                .solve(&rhs)
        };
        Ok(ReducedState {
            x_tilde,
            w2,
            t: state.t,
        })
    }

    pub fn reconstruct(&self, state: &ReducedState) -> Result<NetworkState> {
        let d = self.network.dim();
        let x = &state.x_tilde + &self.x_block;
        let mut z = DVector::zeros(x.len());
        for (xi, zi) in x
            .as_slice()
            .chunks_exact(d)
            .zip(z.as_mut_slice().chunks_exact_mut(d))
        {
            self.network.dgf().grad_phi_into(xi, zi)?;
        }
        let y = &self.sr * &state.w2 - &self.grad_star;
        Ok(NetworkState { x, z, y, t: state.t })
    }

    /// `w~ = R W2`, the centered integral variable.
    pub fn w_tilde(&self, state: &ReducedState) -> DVector<f64> {
        &self.basis_lift * &state.w2
    }

    /// `W1 = r^T w~`, identically zero along the dynamics.
    pub fn consensus_component(&self, state: &ReducedState) -> DVector<f64> {
        self.consensus_lift.tr_mul(&self.w_tilde(state))
    }

    pub fn derivative(&self, state: &ReducedState) -> Result<(DVector<f64>, DVector<f64>)> {
        let d = self.network.dim();
        let costs = self.network.costs();
        let x = &state.x_tilde + &self.x_block;
        let mut grad = DVector::zeros(x.len());
        costs.stacked_gradient_into(x.as_slice(), grad.as_mut_slice());
        let mut lx = DVector::zeros(x.len());
        self.network
            .graph()
            .apply_laplacian(state.x_tilde.as_slice(), d, lx.as_mut_slice());
        let rhs = grad - &self.grad_star + lx + &self.sr * &state.w2;
        let mut x_dot = DVector::zeros(x.len());
        for i in 0..self.network.agents() {
            let inv = self
                .network
                .dgf()
                .inverse_hessian_phi(&x.as_slice()[i * d..(i + 1) * d])?;
            if inv.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularHessian(format!("mirror-map Hessian of agent {i}")));
            }
            let block = -(inv * rhs.rows(i * d, d));
            x_dot.rows_mut(i * d, d).copy_from(&block);
        }
        let w2_dot = &self.rts * &state.x_tilde;
        Ok((x_dot, w2_dot))
    }

    pub fn euler_step(&self, state: &ReducedState, dt: f64) -> Result<ReducedState> {
        let (x_dot, w2_dot) = self.derivative(state)?;
        Ok(ReducedState {
            x_tilde: &state.x_tilde + x_dot * dt,
            w2: &state.w2 + w2_dot * dt,
            t: state.t + dt,
        })
    }

    pub fn simulate(&self, initial: &ReducedState, config: &SimulationConfig) -> Result<ReducedTrajectory> {
        config.validate()?;
        let mut traj = ReducedTrajectory {
            steps: vec![0],
            states: vec![initial.clone()],
            diverged_at: None,
        };
        let mut state = initial.clone();
        for step in 1..=config.steps {
            state = match self.euler_step(&state, config.dt) {
                Ok(next) => next,
                Err(Error::DomainViolation(reason)) => {
                    log::warn!("reduced run left the mirror domain at step {step}: {reason}");
                    traj.diverged_at = Some(step);
                    return Ok(traj);
                }
                Err(e) => return Err(e),
            };
            let norm = (state.x_tilde.norm_squared() + state.w2.norm_squared()).sqrt();
            if !norm.is_finite() || norm > DIVERGENCE_GUARD {
                traj.diverged_at = Some(step);
                return Ok(traj);
            }
            if config.samples(step) {
                traj.steps.push(step);
                traj.states.push(state.clone());
            }
        }
        Ok(traj)
    }
}

impl ReducedTrajectory {
    pub fn reconstruct<C: LocalCost>(&self, system: &ReducedSystem<'_, C>) -> Result<Vec<NetworkState>> {
        self.states.iter().map(|s| system.reconstruct(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{cycle_graph, spectral_decomposition};
    use crate::mirror::DistanceGenerator;
    use crate::objective::synthetic_quadratic_costset;

    #[test]
    fn origin_is_an_equilibrium() {
        let costs = synthetic_quadratic_costset(4, 2, 3).unwrap();
        let graph = cycle_graph(4).unwrap();
        let spectral = spectral_decomposition(&graph).unwrap();
        let x_star = costs.closed_form_optimum().unwrap();
        for dgf in [DistanceGenerator::euclidean(2), DistanceGenerator::negative_entropy(2)] {
            // Shift into the entropy domain when needed.
            let x_star = x_star.map(|v| if dgf.name() == "euclidean" { v } else { v.abs() + 0.5 });
            let net = Network::new(&costs, &graph, &dgf).unwrap();
            let sys = ReducedSystem::new(net, &spectral, &x_star).unwrap();
            let origin = ReducedState {
                x_tilde: DVector::zeros(8),
                w2: DVector::zeros(sys.reduced_dim()),
                t: 0.0,
            };
            let (xd, wd) = sys.derivative(&origin).unwrap();
            assert!(xd.norm() < 1e-12 && wd.norm() < 1e-12);
        }
    }

    #[test]
    fn reduce_and_reconstruct_are_inverse() {
        let costs = synthetic_quadratic_costset(5, 3, 9).unwrap();
        let graph = cycle_graph(5).unwrap();
        let spectral = spectral_decomposition(&graph).unwrap();
        let dgf = DistanceGenerator::euclidean(3);
        let net = Network::new(&costs, &graph, &dgf).unwrap();
        let x_star = costs.closed_form_optimum().unwrap();
        let sys = ReducedSystem::new(net, &spectral, &x_star).unwrap();
        let init = net.init_uniform(&DVector::from_vec(vec![1.0, -2.0, 0.5])).unwrap();
        let reduced = sys.reduce(&init).unwrap();
        assert_eq!(reduced.w2.len(), 12);
        let back = sys.reconstruct(&reduced).unwrap();
        assert!((&back.x - &init.x).norm() < 1e-12);
        assert!((&back.y - &init.y).norm() < 1e-10);
        assert!(sys.consensus_component(&reduced).norm() < 1e-12);
    }
}
