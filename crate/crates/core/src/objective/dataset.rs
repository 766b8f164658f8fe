use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CostSet, QuadraticCost};
use crate::error::{Error, Result};

/// A numeric table: feature columns plus a target column (the last one in the file).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub features: DMatrix<f64>,
    pub targets: DVector<f64>,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    /// Reads a delimited table with one header row. The delimiter is `;` when
    /// the header contains one, otherwise `,`.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut header = String::new();
        BufReader::new(file)
            .read_line(&mut header)
            .map_err(|e| Error::io(path, e))?;
        let delimiter = if header.contains(';') { b';' } else { b',' };

        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let names: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if names.len() < 2 {
            return Err(Error::Config(format!(
                "{}: need at least one feature column and a target column",
                path.display()
            )));
        }
        let width = names.len();
        let mut values = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != width {
                return Err(Error::Config(format!(
                    "{}: row {} has {} fields, expected {width}",
                    path.display(),
                    line + 2,
                    record.len()
                )));
            }
            for field in record.iter() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Config(format!(
                        "{}: row {}: `{field}` is not a number",
                        path.display(),
                        line + 2
                    ))
                })?;
                values.push(v);
            }
        }
        let rows = values.len() / width;
        let table = DMatrix::from_row_slice(rows, width, &values);
        let mut feature_names = names;
        let target_name = feature_names.pop().unwrap_or_default();
        Ok(Dataset {
            feature_names,
            target_name,
            features: table.columns(0, width - 1).into_owned(),
            targets: table.column(width - 1).into_owned(),
        })
    }

    /// Writes the table `;`-delimited with quoted header names.
    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        let header: Vec<String> = self
            .feature_names
            .iter()
            .chain(std::iter::once(&self.target_name))
            .map(|n| format!("\"{n}\""))
            .collect();
        let mut text = header.join(";");
        text.push('\n');
        for r in 0..self.rows() {
            let row: Vec<String> = self
                .features
                .row(r)
                .iter()
                .chain(std::iter::once(&self.targets[r]))
                .map(|v| format!("{v:.6}"))
                .collect();
            text.push_str(&row.join(";"));
            text.push('\n');
        }
        out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preprocessing {
    /// Zero mean, unit (population) variance per feature over the used rows.
    pub standardize: bool,
    /// Append a constant-one feature.
    pub intercept: bool,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing {
            standardize: true,
            intercept: true,
        }
    }
}

/// What was done to the raw table, for run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessingRecord {
    pub preprocessing: Preprocessing,
    pub rows_used: usize,
    pub rows_discarded: usize,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub dimension: usize,
}

/// Gives agent `i` rows `[i k, (i + 1) k)`; leftover rows are discarded.
pub fn partition_dataset(
    data: &Dataset,
    agents: usize,
    rows_per_agent: usize,
    preprocessing: Preprocessing,
) -> Result<(CostSet, PreprocessingRecord)> {
    if agents == 0 || rows_per_agent == 0 {
        return Err(Error::InvalidParameter("agents and rows_per_agent must be positive".into()));
    }
    let used = agents * rows_per_agent;
    if data.rows() < used {
        return Err(Error::InsufficientData(format!(
            "{agents} agents x {rows_per_agent} rows need {used} rows, table has {}",
            data.rows()
        )));
    }
    let p = data.features.ncols();
    let mut features = data.features.rows(0, used).into_owned();
    let mut means = vec![0.0; p];
    let mut scales = vec![1.0; p];
    if preprocessing.standardize {
        for j in 0..p {
            let col = features.column(j);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / used as f64;
            let sd = var.sqrt();
            means[j] = mean;
            scales[j] = if sd > 0.0 { sd } else { 1.0 };
            features
                .column_mut(j)
                .apply(|v| *v = (*v - means[j]) / scales[j]);
        }
    }
    if preprocessing.intercept {
        features = features.insert_column(p, 1.0);
    }
    let dimension = features.ncols();
    let costs = (0..agents)
        .map(|i| {
            let start = i * rows_per_agent;
            QuadraticCost::new(
                features.rows(start, rows_per_agent).into_owned(),
                data.targets.rows(start, rows_per_agent).into_owned(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let record = PreprocessingRecord {
        preprocessing,
        rows_used: used,
        rows_discarded: data.rows() - used,
        means,
        scales,
        dimension,
    };
    Ok((CostSet::new(costs)?, record))
}

const WINE_COLUMNS: [(&str, f64, f64); 11] = [
    ("fixed acidity", 6.85, 0.84),
    ("volatile acidity", 0.28, 0.10),
    ("citric acid", 0.33, 0.12),
    ("residual sugar", 6.39, 5.07),
    ("chlorides", 0.046, 0.022),
    ("free sulfur dioxide", 35.3, 17.0),
    ("total sulfur dioxide", 138.4, 42.5),
    ("density", 0.994, 0.003),
    ("pH", 3.19, 0.15),
    ("sulphates", 0.49, 0.11),
    ("alcohol", 10.5, 1.23),
];

/// Synthetic stand-in shaped like the UCI white-wine table: 11 features with
/// wine-like means and spreads, and a target that is linear in the
/// standardized features with positive weights plus Gaussian noise. The
/// least-squares optimum over standardized features with an intercept lies in
/// the positive orthant.
pub fn wine_like_dataset(rows: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..WINE_COLUMNS.len())
        .map(|_| 0.1 + 0.3 * rng.random::<f64>())
        .collect();
    let mut features = DMatrix::zeros(rows, WINE_COLUMNS.len());
    let mut targets = DVector::zeros(rows);
    for r in 0..rows {
        let mut quality = 5.9;
        for (j, &(_, mean, sd)) in WINE_COLUMNS.iter().enumerate() {
            let standard: f64 = rng.sample(StandardNormal);
            features[(r, j)] = mean + sd * standard;
            quality += weights[j] * standard;
        }
        let noise: f64 = rng.sample(StandardNormal);
        targets[r] = quality + 0.5 * noise;
    }
    Dataset {
        feature_names: WINE_COLUMNS.iter().map(|c| c.0.to_owned()).collect(),
        target_name: "quality".into(),
        features,
        targets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::LocalCost;

    fn table(rows: usize) -> Dataset {
        Dataset {
            feature_names: vec!["a".into(), "b".into()],
            target_name: "y".into(),
            features: DMatrix::from_fn(rows, 2, |r, c| (r * 2 + c) as f64),
            targets: DVector::from_fn(rows, |r, _| r as f64),
        }
    }

    #[test]
    fn contiguous_blocks_without_preprocessing() {
        let raw = Preprocessing {
            standardize: false,
            intercept: false,
        };
        let (set, record) = partition_dataset(&table(20), 2, 10, raw).unwrap();
        assert_eq!(set.agent_count(), 2);
        assert_eq!(set.costs()[0].targets()[0], 0.0);
        assert_eq!(set.costs()[0].targets()[9], 9.0);
        assert_eq!(set.costs()[1].targets()[0], 10.0);
        assert_eq!(set.costs()[1].design()[(9, 1)], 39.0);
        assert_eq!(record.rows_discarded, 0);
        assert_eq!(set.dim(), 2);
    }

    #[test]
    fn insufficient_rows() {
        assert!(matches!(
            partition_dataset(&table(5), 2, 400, Preprocessing::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn wine_shape() {
        let data = wine_like_dataset(4898, 3);
        let (set, record) = partition_dataset(&data, 10, 400, Preprocessing::default()).unwrap();
        assert_eq!(set.agent_count(), 10);
        assert_eq!(set.dim(), 12);
        assert_eq!(record.rows_discarded, 898);
        assert!(set.costs().iter().all(|c| c.design().nrows() == 400));
    }

    #[test]
    fn standardization_and_intercept() {
        let (set, record) = partition_dataset(&table(8), 2, 4, Preprocessing::default()).unwrap();
        let (a, _) = set.stacked_design();
        assert_eq!(a.ncols(), 3);
        for j in 0..2 {
            let col = a.column(j);
            assert!(col.mean().abs() < 1e-14);
            let var = col.iter().map(|v| v * v).sum::<f64>() / 8.0;
            assert!((var - 1.0).abs() < 1e-12);
        }
        assert!(a.column(2).iter().all(|&v| v == 1.0));
        assert_eq!(record.dimension, 3);
    }

    #[test]
    fn wine_like_optimum_is_positive() {
        let data = wine_like_dataset(4000, 20_240_901);
        let (set, _) = partition_dataset(&data, 10, 400, Preprocessing::default()).unwrap();
        let x = set.closed_form_optimum().unwrap();
        assert!(x.iter().all(|&v| v > 0.05), "{x}");
        assert!(set.global_gradient(x.as_slice()).unwrap().norm() < 1e-8);
        assert!(set.costs()[0].value(x.as_slice()) > 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let data = wine_like_dataset(30, 1);
        data.to_csv(&path).unwrap();
        let back = Dataset::from_csv(&path).unwrap();
        assert_eq!(back.feature_names, data.feature_names);
        assert_eq!(back.target_name, "quality");
        assert_eq!(back.rows(), 30);
        assert!((back.targets[7] - data.targets[7]).abs() < 1e-6);

        let comma = dir.path().join("c.csv");
        std::fs::write(&comma, "x1,x2,y\n1,2,3\n4,5,6\n").unwrap();
        let c = Dataset::from_csv(&comma).unwrap();
        assert_eq!(c.features[(1, 1)], 5.0);
        assert_eq!(c.targets[1], 6.0);
    }

    #[test]
    fn malformed_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a;b\n1;oops\n").unwrap();
        assert!(matches!(Dataset::from_csv(&path), Err(Error::Config(_))));
        assert!(matches!(
            Dataset::from_csv(dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }
}
