//! Experiment configuration: TOML schema, defaults, validation, hashing and
//! problem construction.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{BaselineForm, StepSchedule};
use crate::error::{Error, Result};
use crate::graph::{complete_graph, cycle_graph, random_connected_graph, Graph};
use crate::mirror::{DistanceGenerator, EntropyBox};
use crate::objective::{
    partition_dataset, synthetic_costset, CostSet, Dataset, Preprocessing, PreprocessingRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub dgf: DgfConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<BaselineConfig>,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    7
}

fn default_baselines() -> Vec<BaselineConfig> {
    vec![
        BaselineConfig {
            kind: ScheduleKind::Diminishing,
            eta0: None,
            form: BaselineForm::default(),
        },
        BaselineConfig {
            kind: ScheduleKind::Constant,
            eta0: None,
            form: BaselineForm::default(),
        },
    ]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: default_seed(),
            problem: ProblemConfig::default(),
            graph: GraphConfig::default(),
            dgf: DgfConfig::default(),
            dynamics: DynamicsConfig::default(),
            baselines: default_baselines(),
            stability: StabilityConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Random least-squares costs `||A_i x - b_i||^2 / 2` with `rows` rows each.
    Synthetic {
        n: usize,
        d: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rows: Option<usize>,
    },
    /// Least squares on a `;`- or `,`-separated table whose last column is the
    /// target. Relative paths resolve against the config file's directory.
    Dataset {
        path: PathBuf,
        #[serde(default = "yes")]
        standardize: bool,
        #[serde(default = "yes")]
        intercept: bool,
        agents: usize,
        rows_per_agent: usize,
    },
}

fn yes() -> bool {
    true
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig::Synthetic {
            n: 5,
            d: 3,
            rows: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphConfig {
    Cycle,
    Complete,
    Random {
        edge_probability: f64,
    },
    /// Explicit edge list, agents numbered from 1.
    Edges {
        edges: Vec<(usize, usize)>,
    },
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig::Random {
            edge_probability: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DgfConfig {
    Euclidean,
    NegativeEntropy {
        #[serde(default = "entropy_lower")]
        lower: f64,
        #[serde(default = "entropy_upper")]
        upper: f64,
    },
}

fn entropy_lower() -> f64 {
    EntropyBox::default().lower
}

fn entropy_upper() -> f64 {
    EntropyBox::default().upper
}

impl Default for DgfConfig {
    fn default() -> Self {
        DgfConfig::Euclidean
    }
}

impl DgfConfig {
    pub fn build(&self, dim: usize) -> Result<DistanceGenerator> {
        match *self {
            DgfConfig::Euclidean => Ok(DistanceGenerator::euclidean(dim)),
            DgfConfig::NegativeEntropy { lower, upper } => {
                DistanceGenerator::negative_entropy_in_box(dim, EntropyBox { lower, upper })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Euler step; derived from the linearization when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub x0: InitialPoint,
}

fn default_steps() -> usize {
    20_000
}

fn default_stride() -> usize {
    100
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            dt: None,
            steps: default_steps(),
            stride: default_stride(),
            x0: InitialPoint::default(),
        }
    }
}

/// Initial primal point of every agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialPoint {
    /// Every coordinate of every agent equal to `value`.
    Constant { value: f64 },
    /// The same vector for every agent.
    Vector { values: Vec<f64> },
    /// Independent uniform draws on `[low, high)` per agent and coordinate.
    Uniform { low: f64, high: f64 },
}

impl Default for InitialPoint {
    fn default() -> Self {
        InitialPoint::Constant { value: 1.0 }
    }
}

impl InitialPoint {
    pub fn realize(&self, agents: usize, dim: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        match self {
            InitialPoint::Constant { value } => Ok(vec![DVector::from_element(dim, *value); agents]),
            InitialPoint::Vector { values } => {
                if values.len() != dim {
                    return Err(Error::Config(format!(
                        "x0 vector has {} entries, problem dimension is {dim}",
                        values.len()
                    )));
                }
                Ok(vec![DVector::from_column_slice(values); agents])
            }
            InitialPoint::Uniform { low, high } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok((0..agents)
                    .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(*low..*high)))
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Diminishing,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: ScheduleKind,
    /// Defaults to the run's `dt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta0: Option<f64>,
    #[serde(default)]
    pub form: BaselineForm,
}

impl BaselineConfig {
    pub fn schedule(&self, dt: f64) -> StepSchedule {
        let eta0 = self.eta0.unwrap_or(dt);
        match self.kind {
            ScheduleKind::Diminishing => StepSchedule::Diminishing { eta0 },
            ScheduleKind::Constant => StepSchedule::Constant { eta0 },
        }
    }

    pub fn run_name(&self) -> &'static str {
        match self.kind {
            ScheduleKind::Diminishing => "diminishing",
            ScheduleKind::Constant => "constant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Relative to `||M||_2`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Radius of the ball in which the local rate is fitted.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_tolerance() -> f64 {
    crate::stability::SPECTRUM_TOLERANCE
}

fn default_delta() -> f64 {
    1e-2
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            enabled: true,
            tolerance: default_tolerance(),
            delta: default_delta(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    /// Also write suboptimality curves measured at every agent.
    #[serde(default)]
    pub per_agent: bool,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: default_directory(),
            per_agent: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; a relative dataset path is made relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        if let ProblemConfig::Dataset { path: data, .. } = &mut config.problem {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form, ignoring the output directory so
    /// that identical experiments hash identically wherever they are written.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output.directory = PathBuf::new();
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    /// Checks everything that can be checked without building the problem.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match &self.problem {
            ProblemConfig::Synthetic { n, d, rows } => {
                if *n == 0 || *d == 0 {
                    return bad("synthetic problem needs n >= 1 and d >= 1".into());
                }
                if matches!(rows, Some(0)) {
                    return bad("synthetic rows must be positive".into());
                }
            }
            ProblemConfig::Dataset {
                path,
                agents,
                rows_per_agent,
                ..
            } => {
                if *agents == 0 || *rows_per_agent == 0 {
                    return bad("dataset problem needs agents >= 1 and rows_per_agent >= 1".into());
                }
                if !path.is_file() {
                    return bad(format!("data file {} does not exist", path.display()));
                }
            }
        }
        if let GraphConfig::Random { edge_probability } = self.graph {
            if !(0.0..=1.0).contains(&edge_probability) {
                return bad(format!("edge_probability must lie in [0, 1], got {edge_probability}"));
            }
        }
        if let DgfConfig::NegativeEntropy { lower, upper } = self.dgf {
            if !(lower > 0.0 && upper > lower && upper.is_finite()) {
                return bad(format!("entropy box needs 0 < lower < upper < inf, got [{lower}, {upper}]"));
            }
        }
        let dyn_ = &self.dynamics;
        if let Some(dt) = dyn_.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("dynamics.dt must be positive, got {dt}"));
            }
        }
        if dyn_.stride == 0 {
            return bad("dynamics.stride must be >= 1".into());
        }
        if let InitialPoint::Uniform { low, high } = dyn_.x0 {
            if !(low < high && low.is_finite() && high.is_finite()) {
                return bad(format!("x0 uniform range [{low}, {high}) is empty"));
            }
        }
        if let InitialPoint::Vector { values } = &dyn_.x0 {
            if let Some(d) = self.problem_dim_hint() {
                if values.len() != d {
                    return bad(format!("x0 vector has {} entries, problem dimension is {d}", values.len()));
                }
            }
        }
        for b in &self.baselines {
            if let Some(eta0) = b.eta0 {
                if !(eta0 > 0.0 && eta0.is_finite()) {
                    return bad(format!("baseline eta0 must be positive, got {eta0}"));
                }
            }
        }
        let mut names: Vec<_> = self.baselines.iter().map(|b| b.run_name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("at most one baseline of each kind".into());
        }
        let stab = &self.stability;
        if !(stab.tolerance >= 0.0 && stab.delta > 0.0) {
            return bad("stability tolerance must be >= 0 and delta > 0".into());
        }
        Ok(())
    }

    fn problem_dim_hint(&self) -> Option<usize> {
        match self.problem {
            ProblemConfig::Synthetic { d, .. } => Some(d),
            ProblemConfig::Dataset { .. } => None,
        }
    }

    /// Builds costs, graph and mirror map.
    pub fn build_problem(&self) -> Result<Problem> {
        self.validate()?;
        let (costs, preprocessing) = match &self.problem {
            ProblemConfig::Synthetic { n, d, rows } => {
                let rows = rows.unwrap_or(d + 2);
                (synthetic_costset(*n, *d, rows, self.seed)?, None)
            }
            ProblemConfig::Dataset {
                path,
                standardize,
                intercept,
                agents,
                rows_per_agent,
            } => {
                let data = Dataset::from_csv(path)?;
                let prep = Preprocessing {
                    standardize: *standardize,
                    intercept: *intercept,
                };
                let (costs, record) = partition_dataset(&data, *agents, *rows_per_agent, prep)?;
                (costs, Some(record))
            }
        };
        let n = costs.agent_count();
        let graph = match &self.graph {
            GraphConfig::Cycle => cycle_graph(n)?,
            GraphConfig::Complete => complete_graph(n)?,
            GraphConfig::Random { edge_probability } => {
                random_connected_graph(n, *edge_probability, self.seed.wrapping_add(1))?
            }
            GraphConfig::Edges { edges } => Graph::from_one_based(n, edges)?,
        };
        let dgf = self.dgf.build(costs.dim())?;
        Ok(Problem {
            costs,
            graph,
            dgf,
            preprocessing,
        })
    }

    /// Seed for the random initial point.
    pub fn x0_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }
}

pub struct Problem {
    pub costs: CostSet,
    pub graph: Graph,
    pub dgf: DistanceGenerator,
    pub preprocessing: Option<PreprocessingRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let config = ExperimentConfig::default();
        let text = config.to_toml();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), config);
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), config);
        config.validate().unwrap();
    }

    #[test]
    fn hash_ignores_output_directory_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output.directory = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_toml_str("unknown = 1").is_err());
        let missing = ExperimentConfig::from_toml_str(
            "[problem]\nkind = \"dataset\"\npath = \"/nonexistent.csv\"\nagents = 2\nrows_per_agent = 3\n",
        )
        .unwrap();
        assert!(matches!(missing.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::default();
        c.dynamics.dt = Some(-1.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn edge_list_is_one_based() {
        let c = ExperimentConfig::from_toml_str(
            "[problem]\nkind = \"synthetic\"\nn = 3\nd = 1\n[graph]\nkind = \"edges\"\nedges = [[1, 2], [2, 3]]\n",
        )
        .unwrap();
        let p = c.build_problem().unwrap();
        assert_eq!(p.graph.edges(), &[(0, 1), (1, 2)]);
    }
}
