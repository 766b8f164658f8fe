use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::dynamics::{NetworkState, Trajectory};
use crate::error::{Error, Result};

pub const TRAJECTORY_HEADER: &str = "step,t,agent,coordinate,x,z,y";

/// One row per sample, agent and coordinate (agents and coordinates numbered
/// from 1).
pub fn write_trajectory_csv(traj: &Trajectory, dim: usize, path: &Path, config_hash: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_rows(&mut out, traj, dim, config_hash).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn write_rows(out: &mut impl Write, traj: &Trajectory, dim: usize, hash: &str) -> std::io::Result<()> {
    writeln!(out, "# config_hash={hash}")?;
    writeln!(out, "# algorithm={}", traj.metadata.algorithm)?;
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for (&step, s) in traj.steps().iter().zip(traj.states()) {
        for k in 0..s.x.len() {
            writeln!(
                out,
                "{step},{:.16e},{},{},{:.16e},{:.16e},{:.16e}",
                s.t,
                k / dim + 1,
                k % dim + 1,
                s.x[k],
                s.z[k],
                s.y[k]
            )?;
        }
    }
    Ok(())
}

/// Reads back a trajectory file as `(config_hash, [(step, state)])`.
pub fn read_trajectory_csv(path: &Path) -> Result<(Option<String>, Vec<(usize, NetworkState)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hash = None;
    let mut samples: Vec<(usize, Vec<[f64; 3]>, f64)> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(rest) = line.strip_prefix("# config_hash=") {
            hash = Some(rest.to_owned());
            continue;
        }
        if line.starts_with('#') || line == TRAJECTORY_HEADER || line.is_empty() {
            continue;
        }
        let bad = || Error::Config(format!("{}: malformed row {}", path.display(), lineno + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let step: usize = f[0].parse().map_err(|_| bad())?;
        let t: f64 = f[1].parse().map_err(|_| bad())?;
        let mut v = [0.0; 3];
        for (slot, text) in v.iter_mut().zip(&f[4..]) {
            *slot = text.parse().map_err(|_| bad())?;
        }
        match samples.last_mut() {
            Some(last) if last.0 == step => last.1.push(v),
            _ => samples.push((step, vec![v], t)),
        }
    }
    let states = samples
        .into_iter()
        .map(|(step, rows, t)| {
            let col = |j: usize| DVector::from_iterator(rows.len(), rows.iter().map(|r| r[j]));
            (
                step,
                NetworkState {
                    x: col(0),
                    z: col(1),
                    y: col(2),
                    t,
                },
            )
        })
        .collect();
    Ok((hash, states))
}

pub(crate) fn write_vector_csv(path: &Path, v: &DVector<f64>, hash: &str) -> Result<()> {
    let mut text = format!("# config_hash={hash}\ncoordinate,value\n");
    for (k, value) in v.iter().enumerate() {
        text.push_str(&format!("{},{value:.16e}\n", k + 1));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
