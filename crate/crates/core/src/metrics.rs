//! Convergence curves, exponential-rate fits and CSV export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::objective::{CostSet, LocalCost};

/// Values at or below this are treated as numerical zero before taking logs.
pub const LOG_FLOOR: f64 = 1e-13;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.5;
pub const MIN_FIT_SAMPLES: usize = 10;

pub const CSV_HEADER: &str = "run_name,step,suboptimality,consensus_error,distance_to_opt";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ slope * x + intercept`.
pub fn least_squares_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!("{} points, need 2", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all abscissae coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub steps: Vec<usize>,
    /// `F(x_1) - F(x*)`, global objective at agent 1's iterate.
    pub suboptimality: Vec<f64>,
    /// `max_{i,j} ||x_i - x_j||`.
    pub consensus_error: Vec<f64>,
    /// `max_i ||x_i - x*||`.
    pub distance_to_opt: Vec<f64>,
}

impl ConvergenceCurve {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last_suboptimality(&self) -> Option<f64> {
        self.suboptimality.last().copied()
    }
}

pub fn curve_from_trajectory<C: LocalCost>(
    traj: &Trajectory,
    costs: &CostSet<C>,
    x_star: &DVector<f64>,
) -> Result<ConvergenceCurve> {
    curve_for_agent(traj, costs, x_star, 0)
}

/// Same as [`curve_from_trajectory`] with suboptimality measured at `agent`.
pub fn curve_for_agent<C: LocalCost>(
    traj: &Trajectory,
    costs: &CostSet<C>,
    x_star: &DVector<f64>,
    agent: usize,
) -> Result<ConvergenceCurve> {
    let d = costs.dim();
    let n = costs.agent_count();
    if x_star.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: x_star.len(),
        });
    }
    if agent >= n {
        return Err(Error::IndexOutOfRange { index: agent, n });
    }
    let f_star = costs.global_value(x_star.as_slice())?;
    let mut curve = ConvergenceCurve::default();
    for (&step, state) in traj.steps().iter().zip(traj.states()) {
        if state.x.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                actual: state.x.len(),
            });
        }
        curve.steps.push(step);
        curve
            .suboptimality
            .push(costs.global_value(state.agent_x(agent, d))? - f_star);
        curve.consensus_error.push(state.consensus_error(d));
        let worst = (0..n)
            .map(|i| {
                state
                    .agent_x(i, d)
                    .iter()
                    .zip(x_star.iter())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        curve.distance_to_opt.push(worst);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Per-step slope of `ln(suboptimality)`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Tail fraction of the samples considered.
    pub window: f64,
    pub samples_used: usize,
    /// Tail samples dropped for being at or below the floor.
    pub samples_below_floor: usize,
}

/// Least-squares line through `(step, ln suboptimality)` over the last
/// `tail_fraction` of the curve, skipping samples at or below `floor`.
pub fn fit_exponential_rate(curve: &ConvergenceCurve, tail_fraction: f64, floor: f64) -> Result<RateFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tail fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    let n = curve.len();
    let start = n - ((n as f64 * tail_fraction).ceil() as usize).min(n);
    let tail = start..n;
    if tail.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "tail has {} samples, need {MIN_FIT_SAMPLES}",
            tail.len()
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = tail
        .clone()
        .filter(|&k| curve.suboptimality[k] > floor)
        .map(|k| (curve.steps[k] as f64, curve.suboptimality[k].ln()))
        .unzip();
    let below = tail.len() - xs.len();
    if xs.is_empty() {
        return Err(Error::AllBelowFloor { floor });
    }
    if xs.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} tail samples above the floor {floor:e}, need {MIN_FIT_SAMPLES}",
            xs.len()
        )));
    }
    let fit = least_squares_line(&xs, &ys)?;
    Ok(RateFit {
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        window: tail_fraction,
        samples_used: xs.len(),
        samples_below_floor: below,
    })
}

/// Index of the first sample at or below `floor`, if any.
pub fn first_below(values: &[f64], floor: f64) -> Option<usize> {
    values.iter().position(|&v| v <= floor)
}

/// Writes named curves in long format. A `# config_hash=...` line precedes
/// the header when a hash is given. Floats carry 17 significant digits.
pub fn export_csv(curves: &[(&str, &ConvergenceCurve)], path: &Path, config_hash: Option<&str>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_csv(&mut out, curves, config_hash).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_csv(out: &mut impl Write, curves: &[(&str, &ConvergenceCurve)], config_hash: Option<&str>) -> std::io::Result<()> {
    if let Some(hash) = config_hash {
        writeln!(out, "# config_hash={hash}")?;
    }
    writeln!(out, "{CSV_HEADER}")?;
    for (name, curve) in curves {
        for k in 0..curve.len() {
            writeln!(
                out,
                "{name},{},{:.16e},{:.16e},{:.16e}",
                curve.steps[k], curve.suboptimality[k], curve.consensus_error[k], curve.distance_to_opt[k]
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportedCurves {
    pub config_hash: Option<String>,
    /// Runs in first-appearance order.
    pub curves: Vec<(String, ConvergenceCurve)>,
}

impl ImportedCurves {
    pub fn get(&self, name: &str) -> Option<&ConvergenceCurve> {
        self.curves.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    /// Errors when the embedded hash differs from `expected`.
    pub fn verify_hash(&self, expected: &str) -> Result<()> {
        match self.config_hash.as_deref() {
            Some(h) if h == expected => Ok(()),
            Some(h) => Err(Error::Config(format!(
                "config hash mismatch: file has {h}, expected {expected}"
            ))),
            None => Err(Error::Config("file carries no config hash".into())),
        }
    }
}

pub fn import_csv(path: &Path) -> Result<ImportedCurves> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let mut config_hash = None;
    let mut header = None;
    for line in lines.by_ref() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(rest) = line.strip_prefix("# config_hash=") {
            config_hash = Some(rest.trim().to_owned());
        } else if !line.starts_with('#') {
            header = Some(line);
            break;
        }
    }
    if header.as_deref() != Some(CSV_HEADER) {
        return Err(Error::Config(format!("{} is not a curve export", path.display())));
    }
    let mut curves: Vec<(String, ConvergenceCurve)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Config(format!("{}: malformed row {}", path.display(), lineno + 2));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad());
        }
        let step: usize = fields[1].parse().map_err(|_| bad())?;
        let mut vals = [0.0; 3];
        for (v, f) in vals.iter_mut().zip(&fields[2..]) {
            *v = f.parse().map_err(|_| bad())?;
        }
        let idx = match curves.iter().position(|(n, _)| n == fields[0]) {
            Some(i) => i,
            None => {
                curves.push((fields[0].to_owned(), ConvergenceCurve::default()));
                curves.len() - 1
            }
        };
        let c = &mut curves[idx].1;
        c.steps.push(step);
        c.suboptimality.push(vals[0]);
        c.consensus_error.push(vals[1]);
        c.distance_to_opt.push(vals[2]);
    }
    Ok(ImportedCurves { config_hash, curves })
}
