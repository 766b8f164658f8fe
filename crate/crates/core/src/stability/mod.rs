//! Local stability certificate for the integral-feedback dynamics.
//!
//! Linearizing the reduced dynamics at the origin gives `[x~; W2]' = -M [x~; W2]`
//! with
//!
//! ```text
//! M = [ D (H + L)   D S R ]
//!     [ -R^T S        0   ]
//! ```
//!
//! where `D` is the inverse mirror-map Hessian and `H` the block-diagonal cost
//! Hessian, both at `x*`. The equilibrium is locally exponentially stable when
//! every eigenvalue of `M` has positive real part. This module assembles `M`,
//! computes its spectrum, and checks the supporting facts numerically:
//! `H + L` positive definite, `det M > 0` together with its factored form
//! `det(D) det(H + L) det(R^T S (H + L)^{-1} S R)`, and the quadratic relation
//! every eigenpair satisfies through the pencil `(H + L) - lambda D^{-1} - L / lambda`.

pub mod charpoly;

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Equilibrium, Network, Trajectory};
use crate::error::{Error, Result};
use crate::graph::{kron_identity, SpectralData};
use crate::metrics::least_squares_line;
use crate::objective::LocalCost;

/// Relative threshold for the positive-definiteness of `H + L`.
pub const DEFINITENESS_TOLERANCE: f64 = 1e-10;
/// Relative threshold on `min Re(lambda)`, scaled by `||M||_2`.
pub const SPECTRUM_TOLERANCE: f64 = 1e-12;
/// Agreement required between the two determinant routes (in log space).
pub const DETERMINANT_AGREEMENT: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub m: DMatrix<f64>,
    /// Inverse mirror-map Hessian at `x*`, block diagonal.
    pub d: DMatrix<f64>,
    /// Mirror-map Hessian at `x*` (`D^{-1}`), block diagonal.
    pub d_inv: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// Lifted Laplacian `L ⊗ I_d`.
    pub l: DMatrix<f64>,
    /// Lifted Laplacian square root.
    pub s: DMatrix<f64>,
    /// Lifted disagreement basis `R ⊗ I_d`.
    pub r: DMatrix<f64>,
    pub sr: DMatrix<f64>,
    pub agents: usize,
    pub dim: usize,
}

impl LinearizedSystem {
    pub fn order(&self) -> usize {
        self.m.nrows()
    }

    pub fn h_plus_l(&self) -> DMatrix<f64> {
        &self.h + &self.l
    }
}

pub fn assemble_linearization<C: LocalCost>(
    network: &Network<'_, C>,
    spectral: &SpectralData,
    x_star: &DVector<f64>,
) -> Result<LinearizedSystem> {
    let n = network.agents();
    let d = network.dim();
    if spectral.agent_count() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: spectral.agent_count(),
        });
    }
    if x_star.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: x_star.len(),
        });
    }
    let nd = n * d;
    let mut dmat = DMatrix::zeros(nd, nd);
    let mut d_inv = DMatrix::zeros(nd, nd);
    let hess = network.dgf().hessian_phi(x_star.as_slice())?;
    let inv = hess
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularHessian("mirror-map Hessian at x*".into()))?;
    for i in 0..n {
        dmat.view_mut((i * d, i * d), (d, d)).copy_from(&inv);
        d_inv.view_mut((i * d, i * d), (d, d)).copy_from(&hess);
    }
    let x_block = DVector::from_iterator(nd, (0..n).flat_map(|_| x_star.iter().copied()));
    let h = network.costs().block_hessian(x_block.as_slice());
    let l = kron_identity(&spectral.laplacian, d);
    let s = kron_identity(&spectral.sqrt_laplacian, d);
    let r = kron_identity(&spectral.disagreement_basis(), d);
    let sr = &s * &r;
    let reduced = sr.ncols();

    let mut m = DMatrix::zeros(nd + reduced, nd + reduced);
    m.view_mut((0, 0), (nd, nd)).copy_from(&(&dmat * (&h + &l)));
    if reduced > 0 {
        m.view_mut((0, nd), (nd, reduced)).copy_from(&(&dmat * &sr));
        m.view_mut((nd, 0), (reduced, nd)).copy_from(&(-sr.transpose()));
    }
    Ok(LinearizedSystem {
        m,
        d: dmat,
        d_inv,
        h,
        l,
        s,
        r,
        sr,
        agents: n,
        dim: d,
    })
}

/// Full spectrum of a real square matrix via real Schur decomposition,
/// ordered by real part then imaginary part.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if !m.is_square() {
        return Err(Error::InvalidParameter("eigenvalues need a square matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 10_000 * m.nrows())
        .ok_or_else(|| Error::EigensolverFailure("Schur iteration did not converge".into()))?;
    let mut values: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    charpoly::sort_spectrum(&mut values);
    Ok(values)
}

/// `log |det|` with its sign, which stays finite where `det` itself overflows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedLogDet {
    pub sign: f64,
    pub log_abs: f64,
}

impl SignedLogDet {
    pub fn of(m: &DMatrix<f64>) -> Self {
        if m.nrows() == 0 {
            return SignedLogDet { sign: 1.0, log_abs: 0.0 };
        }
        let lu = m.clone().lu();
        let u = lu.u();
        let mut sign: f64 = lu.p().determinant();
        let mut log_abs = 0.0;
        for i in 0..u.nrows() {
            let v = u[(i, i)];
            if v == 0.0 {
                return SignedLogDet {
                    sign: 0.0,
                    log_abs: f64::NEG_INFINITY,
                };
            }
            sign *= v.signum();
            log_abs += v.abs().ln();
        }
        SignedLogDet { sign, log_abs }
    }

    pub fn of_spectrum(values: &[Complex<f64>]) -> Self {
        let product_sign = values.iter().fold(1.0, |s, v| {
            if v.im.abs() > 0.0 {
                s
            } else {
                s * v.re.signum()
            }
        });
        let log_abs = values.iter().map(|v| v.norm().ln()).sum();
        SignedLogDet {
            sign: if values.iter().any(|v| v.norm() == 0.0) { 0.0 } else { product_sign },
            log_abs,
        }
    }

    pub fn value(&self) -> f64 {
        self.sign * self.log_abs.exp()
    }

    pub fn times(self, other: SignedLogDet) -> SignedLogDet {
        SignedLogDet {
            sign: self.sign * other.sign,
            log_abs: self.log_abs + other.log_abs,
        }
    }

    /// Agreement in sign and within `tol` in `log |det|` (a relative error).
    pub fn agrees_with(&self, other: &SignedLogDet, tol: f64) -> bool {
        self.sign == other.sign && (self.log_abs - other.log_abs).abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefinitenessCheck {
    pub smallest_eigenvalue: f64,
    pub largest_eigenvalue: f64,
    pub positive_definite: bool,
    pub h_psd: bool,
    pub l_psd: bool,
}

/// Smallest eigenvalue of `H + L` and whether it is positive relative to
/// `||H + L||`.
pub fn check_hl_positive_definite(h: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<DefinitenessCheck> {
    for (name, m) in [("H", h), ("L", l)] {
        let scale = m.amax().max(1.0);
        if !m.is_square() || (m - m.transpose()).amax() > 1e-12 * scale {
            return Err(Error::AsymmetricInput(format!("{name} is not symmetric")));
        }
    }
    if h.shape() != l.shape() {
        return Err(Error::DimensionMismatch {
            expected: l.nrows(),
            actual: h.nrows(),
        });
    }
    let extreme = |m: &DMatrix<f64>| {
        let eig = SymmetricEigen::new(m.clone()).eigenvalues;
        (eig.min(), eig.max())
    };
    let (h_min, h_max) = extreme(h);
    let (l_min, l_max) = extreme(l);
    let (smallest, largest) = extreme(&(h + l));
    let scale = largest.abs().max(1.0);
    Ok(DefinitenessCheck {
        smallest_eigenvalue: smallest,
        largest_eigenvalue: largest,
        positive_definite: smallest > DEFINITENESS_TOLERANCE * scale,
        h_psd: h_min >= -DEFINITENESS_TOLERANCE * h_max.abs().max(1.0),
        l_psd: l_min >= -DEFINITENESS_TOLERANCE * l_max.abs().max(1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeterminantCheck {
    pub direct: SignedLogDet,
    pub det_d: SignedLogDet,
    pub det_hl: SignedLogDet,
    pub det_schur: SignedLogDet,
    pub factored: SignedLogDet,
    pub positive: bool,
    pub agree: bool,
}

/// `det M` by LU, and by `det(D) det(H + L) det(R^T S (H + L)^{-1} S R)`.
pub fn determinant_check(system: &LinearizedSystem) -> Result<DeterminantCheck> {
    let direct = SignedLogDet::of(&system.m);
    let det_d = SignedLogDet::of(&system.d);
    if det_d.sign == 0.0 {
        return Err(Error::SingularFactor("D is singular".into()));
    }
    let hl = system.h_plus_l();
    let chol = hl
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularFactor("H + L is not positive definite".into()))?;
    let det_hl = SignedLogDet::of(&hl);
    let schur = system.sr.transpose() * chol.solve(&system.sr);
    let det_schur = SignedLogDet::of(&schur);
    let factored = det_d.times(det_hl).times(det_schur);
    Ok(DeterminantCheck {
        direct,
        det_d,
        det_hl,
        det_schur,
        factored,
        positive: direct.sign > 0.0,
        agree: direct.agrees_with(&factored, DETERMINANT_AGREEMENT),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl From<Complex<f64>> for Eigenvalue {
    fn from(c: Complex<f64>) -> Self {
        Eigenvalue { re: c.re, im: c.im }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub order: usize,
    pub eigenvalues: Vec<Eigenvalue>,
    pub min_real_part: f64,
    pub matrix_norm: f64,
    pub tolerance: f64,
    pub all_positive: bool,
    pub det_sign_positive: bool,
    pub determinant: SignedLogDet,
    /// Product of the computed eigenvalues agrees with the LU determinant.
    pub spectrum_determinant_agrees: bool,
    pub hl_positive_definite: bool,
    pub hl_smallest_eigenvalue: f64,
    /// Local exponential rate of `e^{-M t}`, i.e. `min Re(lambda)`.
    pub rate_estimate: f64,
    pub violations: Vec<String>,
}

/// Builds the certificate. `tolerance` is relative to `||M||_2` and defaults
/// to [`SPECTRUM_TOLERANCE`]. Failed conditions appear as flags and in
/// `violations`; only an eigensolver breakdown is an error.
pub fn check_stability(system: &LinearizedSystem, tolerance: Option<f64>) -> Result<StabilityReport> {
    let spectrum = eigenvalues(&system.m)?;
    let norm = system.m.clone().svd(false, false).singular_values.max();
    let tolerance = tolerance.unwrap_or(SPECTRUM_TOLERANCE) * norm;
    let min_real_part = spectrum.iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
    let determinant = SignedLogDet::of(&system.m);
    let from_spectrum = SignedLogDet::of_spectrum(&spectrum);
    let hl = check_hl_positive_definite(&system.h, &system.l)?;

    let all_positive = min_real_part > tolerance;
    let det_sign_positive = determinant.sign > 0.0;
    let mut violations = Vec::new();
    if !hl.h_psd {
        violations.push("local convexity: block Hessian H is not positive semidefinite".to_owned());
    }
    if !hl.positive_definite {
        violations.push(format!(
            "global strong convexity: H + L is not positive definite (smallest eigenvalue {:e})",
            hl.smallest_eigenvalue
        ));
    }
    if !det_sign_positive {
        violations.push("det(M) is not positive".to_owned());
    }
    if !all_positive {
        violations.push(format!(
            "spectrum: min Re(lambda) = {min_real_part:e} does not exceed {tolerance:e}"
        ));
    }
    Ok(StabilityReport {
        order: system.order(),
        eigenvalues: spectrum.iter().copied().map(Eigenvalue::from).collect(),
        min_real_part,
        matrix_norm: norm,
        tolerance,
        all_positive,
        det_sign_positive,
        determinant,
        spectrum_determinant_agrees: determinant.agrees_with(&from_spectrum, DETERMINANT_AGREEMENT),
        hl_positive_definite: hl.positive_definite,
        hl_smallest_eigenvalue: hl.smallest_eigenvalue,
        rate_estimate: min_real_part,
        violations,
    })
}

impl StabilityReport {
    pub fn spectrum(&self) -> Vec<Complex<f64>> {
        self.eigenvalues.iter().map(|e| Complex::new(e.re, e.im)).collect()
    }

    /// Complex eigenvalues pair up with their conjugates to within `tol`.
    pub fn conjugate_pairs_close(&self, tol: f64) -> bool {
        let values = self.spectrum();
        let conj: Vec<_> = values.iter().map(|v| v.conj()).collect();
        charpoly::spectrum_distance(&values, &conj) <= tol
    }
}

/// Quadratic-form data for one eigenvalue `lambda` of `M`. With `u` the
/// primal block of the eigenvector, `p = u^H (H + L) u`, `q = u^H D^{-1} u`,
/// `l = u^H L u` are real and `lambda` solves `q lambda^2 - p lambda + l = 0`.
#[derive(Debug, Clone, Copy)]
pub struct PencilProbe {
    pub lambda: Complex<f64>,
    pub p: f64,
    pub q: f64,
    pub l: f64,
    /// `|u^H ((H + L) - lambda D^{-1} - L / lambda) u| / ||u||^2`.
    pub residual: f64,
    /// `(p ± sqrt(p^2 - 4 q l)) / (2 q)`.
    pub predicted: [Complex<f64>; 2],
}

impl PencilProbe {
    pub fn closest_prediction(&self) -> Complex<f64> {
        let [a, b] = self.predicted;
        if (a - self.lambda).norm() <= (b - self.lambda).norm() {
            a
        } else {
            b
        }
    }
}

pub fn pencil_probe(system: &LinearizedSystem, lambda: Complex<f64>) -> Result<PencilProbe> {
    if lambda.norm() == 0.0 {
        return Err(Error::InvalidParameter("pencil probe needs a nonzero eigenvalue".into()));
    }
    let order = system.order();
    let shifted = system.m.map(|v| Complex::new(v, 0.0)) - DMatrix::identity(order, order) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::EigensolverFailure("SVD did not return V^T".into()))?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let nd = system.agents * system.dim;
    let u: DVector<Complex<f64>> = DVector::from_iterator(nd, v_t.row(k).iter().take(nd).map(|c| c.conj()));
    let quad = |m: &DMatrix<f64>| -> f64 {
        let mc = m.map(|v| Complex::new(v, 0.0));
        (u.adjoint() * mc * &u)[(0, 0)].re
    };
    let hl = system.h_plus_l();
    let p = quad(&hl);
    let q = quad(&system.d_inv);
    let l = quad(&system.l);
    let norm2 = u.norm_squared();
    let residual = (Complex::new(p, 0.0) - lambda * q - Complex::new(l, 0.0) / lambda).norm() / norm2;
    let disc = Complex::new(p * p - 4.0 * q * l, 0.0).sqrt();
    let predicted = [(p + disc) / (2.0 * q), (p - disc) / (2.0 * q)];
    Ok(PencilProbe {
        lambda,
        p,
        q,
        l,
        residual,
        predicted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateComparison {
    /// `-slope` of `ln ||state - equilibrium||` against time over the tail.
    pub fitted_rate: f64,
    pub theoretical_rate: f64,
    pub ratio: f64,
    pub r_squared: f64,
    pub samples_used: usize,
}

/// Samples the local rate fit needs inside the ball.
pub const MIN_TAIL_SAMPLES: usize = 10;

/// Fits the decay rate of `distances` over the tail that lies (and stays)
/// inside the ball of radius `delta`, skipping samples at or below `floor`,
/// and compares it with `theoretical_rate`.
pub fn empirical_rate_vs_theory(
    times: &[f64],
    distances: &[f64],
    theoretical_rate: f64,
    delta: f64,
    floor: f64,
) -> Result<RateComparison> {
    if times.len() != distances.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            actual: distances.len(),
        });
    }
    let entry = distances
        .iter()
        .rposition(|&v| !(v < delta))
        .map_or(0, |last_outside| last_outside + 1);
    let (ts, logs): (Vec<f64>, Vec<f64>) = times[entry..]
        .iter()
        .zip(&distances[entry..])
        .filter(|(_, &v)| v > floor)
        .map(|(&t, &v)| (t, v.ln()))
        .unzip();
    if ts.len() < MIN_TAIL_SAMPLES {
        return Err(Error::InsufficientTail(format!(
            "{} usable samples inside the delta = {delta:e} ball, need {MIN_TAIL_SAMPLES}",
            ts.len()
        )));
    }
    let fit = least_squares_line(&ts, &logs)?;
    let fitted_rate = -fit.slope;
    Ok(RateComparison {
        fitted_rate,
        theoretical_rate,
        ratio: fitted_rate / theoretical_rate,
        r_squared: fit.r_squared,
        samples_used: ts.len(),
    })
}

/// Times and `||(x - x*, y - y*)||` along a trajectory.
pub fn distances_to_equilibrium(traj: &Trajectory, eq: &Equilibrium) -> (Vec<f64>, Vec<f64>) {
    traj.states().iter().map(|s| (s.t, eq.distance(s))).unzip()
}
