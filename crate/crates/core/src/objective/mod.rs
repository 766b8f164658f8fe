//! Local objectives `f_i`, the global objective `F = sum f_i`, and the
//! least-squares optimum oracle.

mod dataset;

pub use dataset::{partition_dataset, wine_like_dataset, Dataset, Preprocessing, PreprocessingRecord};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A differentiable convex cost held by one agent.
///
/// Implementations must be pure: the same `x` always yields bitwise-identical
/// results.
pub trait LocalCost: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient_into(&self, x: &[f64], out: &mut [f64]);

    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.gradient_into(x, out.as_mut_slice());
        out
    }
}

/// `f(x) = ||A x - b||^2 / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    a: DMatrix<f64>,
    b: DVector<f64>,
    gram: DMatrix<f64>,
    atb: DVector<f64>,
}

impl QuadraticCost {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidParameter("design block must be non-empty".into()));
        }
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                actual: b.len(),
            });
        }
        let gram = a.tr_mul(&a);
        let atb = a.tr_mul(&b);
        Ok(QuadraticCost { a, b, gram, atb })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.b
    }

    /// `A^T A`, the (constant) Hessian.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
}

impl LocalCost for QuadraticCost {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (row, bi) in self.a.row_iter().zip(self.b.iter()) {
            let r: f64 = row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - bi;
            total += r * r;
        }
        0.5 * total
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let mut acc = -self.atb[i];
            for j in 0..d {
                acc += self.gram[(i, j)] * x[j];
            }
            out[i] = acc;
        }
    }

    fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        self.gram.clone()
    }
}

/// The costs of all `n` agents; every cost shares dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSet<C = QuadraticCost> {
    costs: Vec<C>,
    dim: usize,
}

impl<C: LocalCost> CostSet<C> {
    pub fn new(costs: Vec<C>) -> Result<Self> {
        let dim = costs
            .first()
            .map(|c| c.dim())
            .ok_or_else(|| Error::InvalidParameter("cost set needs at least one agent".into()))?;
        if let Some(bad) = costs.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.dim(),
            });
        }
        Ok(CostSet { costs, dim })
    }

    pub fn agent_count(&self) -> usize {
        self.costs.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn costs(&self) -> &[C] {
        &self.costs
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn cost(&self, agent: usize) -> Result<&C> {
        self.costs.get(agent).ok_or(Error::IndexOutOfRange {
            index: agent,
            n: self.costs.len(),
        })
    }

    pub fn local_value(&self, agent: usize, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.cost(agent)?.value(x))
    }

    pub fn local_gradient(&self, agent: usize, x: &[f64]) -> Result<DVector<f64>> {
        self.check(x)?;
        Ok(self.cost(agent)?.gradient(x))
    }

    pub fn local_hessian(&self, agent: usize, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x)?;
        Ok(self.cost(agent)?.hessian(x))
    }

    pub fn global_value(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.costs.iter().map(|c| c.value(x)).sum())
    }

    pub fn global_gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check(x)?;
        let mut total = DVector::zeros(self.dim);
        let mut buf = vec![0.0; self.dim];
        for c in &self.costs {
            c.gradient_into(x, &mut buf);
            for (t, g) in total.iter_mut().zip(&buf) {
                *t += g;
            }
        }
        Ok(total)
    }

    pub fn global_hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let mut total = DMatrix::zeros(self.dim, self.dim);
        for c in &self.costs {
            total += c.hessian(x);
        }
        Ok(total)
    }

    /// Stacked local gradients `col{grad f_1(x_1), ..., grad f_n(x_n)}` for a
    /// stacked primal vector, assembled in agent order.
    pub fn stacked_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (i, c) in self.costs.iter().enumerate() {
            c.gradient_into(&x[i * d..(i + 1) * d], &mut out[i * d..(i + 1) * d]);
        }
    }

    /// `H = diag{hessian f_1(x_1), ..., hessian f_n(x_n)}` for a stacked `x`.
    pub fn block_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        let n = self.costs.len();
        let mut h = DMatrix::zeros(n * d, n * d);
        for (i, c) in self.costs.iter().enumerate() {
            h.view_mut((i * d, i * d), (d, d))
                .copy_from(&c.hessian(&x[i * d..(i + 1) * d]));
        }
        h
    }

    /// Smallest eigenvalue of the global Hessian at `x`; positive iff `F` is
    /// strongly convex there.
    pub fn global_curvature(&self, x: &[f64]) -> Result<f64> {
        let h = self.global_hessian(x)?;
        Ok(SymmetricEigen::new(h).eigenvalues.min())
    }

    /// `F` viewed as a single cost, for the centralized oracle.
    pub fn as_global(&self) -> GlobalCost<'_, C> {
        GlobalCost { set: self }
    }
}

/// Borrowed view of `F = sum f_i` implementing [`LocalCost`].
#[derive(Debug, Clone, Copy)]
pub struct GlobalCost<'a, C> {
    set: &'a CostSet<C>,
}

impl<C: LocalCost> LocalCost for GlobalCost<'_, C> {
    fn dim(&self) -> usize {
        self.set.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.set.costs.iter().map(|c| c.value(x)).sum()
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut buf = vec![0.0; self.set.dim];
        for c in &self.set.costs {
            c.gradient_into(x, &mut buf);
            for (o, g) in out.iter_mut().zip(&buf) {
                *o += g;
            }
        }
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut total = DMatrix::zeros(self.set.dim, self.set.dim);
        for c in &self.set.costs {
            total += c.hessian(x);
        }
        total
    }
}

impl CostSet<QuadraticCost> {
    /// Stacked `(A, b)` over all agents in agent order.
    pub fn stacked_design(&self) -> (DMatrix<f64>, DVector<f64>) {
        let rows: usize = self.costs.iter().map(|c| c.a.nrows()).sum();
        let mut a = DMatrix::zeros(rows, self.dim);
        let mut b = DVector::zeros(rows);
        let mut offset = 0;
        for c in &self.costs {
            let m = c.a.nrows();
            a.view_mut((offset, 0), (m, self.dim)).copy_from(&c.a);
            b.rows_mut(offset, m).copy_from(&c.b);
            offset += m;
        }
        (a, b)
    }

    /// `||A x - b||^2 / 2` on the stacked system.
    pub fn stacked_value(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let (a, b) = self.stacked_design();
        let r = a * DVector::from_column_slice(x) - b;
        Ok(0.5 * r.norm_squared())
    }

    /// Least-squares minimizer `A^+ b` of the stacked system.
    pub fn closed_form_optimum(&self) -> Result<DVector<f64>> {
        let (a, b) = self.stacked_design();
        if a.nrows() < a.ncols() {
            return Err(Error::RankDeficient { ratio: 0.0 });
        }
        let svd = a.clone().svd(true, true);
        let s_max = svd.singular_values.max();
        let s_min = svd.singular_values.min();
        let ratio = if s_max > 0.0 { s_min / s_max } else { 0.0 };
        if ratio <= 1e-10 {
            return Err(Error::RankDeficient { ratio });
        }
        let mut x = svd
            .solve(&b, 0.0)
            .map_err(|e| Error::EigensolverFailure(e.to_string()))?;
        // One step of iterative refinement on the normal residual.
        let residual = &b - &a * &x;
        if let Ok(dx) = svd.solve(&residual, 0.0) {
            x += dx;
        }
        Ok(x)
    }
}

/// Random quadratic instance with `d + 2` standard-normal rows per agent.
pub fn synthetic_quadratic_costset(n: usize, d: usize, seed: u64) -> Result<CostSet> {
    synthetic_costset(n, d, d + 2, seed)
}

/// Random quadratic instance with `rows` rows per agent; redraws until the
/// global Hessian is positive definite.
pub fn synthetic_costset(n: usize, d: usize, rows: usize, seed: u64) -> Result<CostSet> {
    if n == 0 || d == 0 || rows == 0 {
        return Err(Error::InvalidParameter("n, d and rows must be positive".into()));
    }
    if n * rows < d {
        return Err(Error::InvalidParameter(format!(
            "{n} agents x {rows} rows cannot determine {d} unknowns"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let costs = (0..n)
            .map(|_| {
                let a = DMatrix::from_fn(rows, d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let b = DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(StandardNormal));
                QuadraticCost::new(a, b)
            })
            .collect::<Result<Vec<_>>>()?;
        let set = CostSet::new(costs)?;
        let h = set.global_hessian(&vec![0.0; d])?;
        let eig = SymmetricEigen::new(h).eigenvalues;
        if eig.min() > 1e-10 * eig.max() {
            return Ok(set);
        }
    }
}

/// Quadratic instance whose every design block annihilates the same unit
/// direction, so the global Hessian is singular along it.
pub fn shared_null_costset(n: usize, d: usize, seed: u64) -> Result<(CostSet, DVector<f64>)> {
    if d < 2 {
        return Err(Error::InvalidParameter("need d >= 2 for a shared null direction".into()));
    }
    let base = synthetic_quadratic_costset(n, d, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut u = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    u.normalize_mut();
    let projector = DMatrix::identity(d, d) - &u * u.transpose();
    let costs = base
        .costs()
        .iter()
        .map(|c| QuadraticCost::new(c.design() * &projector, c.targets().clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok((CostSet::new(costs)?, u))
}
