//! Input/output data records and their on-disk form.
//!
//! A [`Dataset`] is one realization of the experiment: the input `u`, output
//! `y`, the seed it was generated from, the loop regime, and (when available)
//! the generating model. On disk a dataset is a CSV file with header `t,u,y`
//! plus a JSON sidecar carrying the metadata; floats are written in Rust's
//! shortest round-trip form, so save/load is bit-exact.

use crate::error::{Error, Result};
use crate::model::BjModel;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Whether the input was generated independently of the output or through
/// output feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    OpenLoop,
    ClosedLoop,
}

/// One input/output realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub seed: u64,
    pub regime: Regime,
    /// The generating model (with its final noise variance), when known.
    pub truth: Option<BjModel>,
}

/// Metadata stored next to the sample CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    seed: u64,
    regime: Regime,
    truth: Option<BjModel>,
}

impl Dataset {
    pub fn new(u: Vec<f64>, y: Vec<f64>, seed: u64, regime: Regime, truth: Option<BjModel>) -> Self {
        assert_eq!(u.len(), y.len(), "input and output must have equal length");
        Self { u, y, seed, regime, truth }
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.u.len()
    }

    /// A view of the first `n` samples sharing this dataset's metadata.
    pub fn prefix(&self, n: usize) -> Dataset {
        assert!(n <= self.n(), "prefix longer than the record");
        Dataset {
            u: self.u[..n].to_vec(),
            y: self.y[..n].to_vec(),
            seed: self.seed,
            regime: self.regime,
            truth: self.truth.clone(),
        }
    }

    /// Writes `<path>` as `t,u,y` CSV and the metadata sidecar at the same
    /// path with extension `json`.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let mut out = String::with_capacity(24 * self.n() + 16);
        out.push_str("t,u,y\n");
        for t in 0..self.n() {
            writeln!(out, "{},{:?},{:?}", t + 1, self.u[t], self.y[t])
                .expect("string writes cannot fail");
        }
        std::fs::write(csv_path, out)?;

        let sidecar = Sidecar { seed: self.seed, regime: self.regime, truth: self.truth.clone() };
        let json = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(csv_path.with_extension("json"), json)?;
        Ok(())
    }

    /// Loads a dataset saved by [`Dataset::save`]; both the CSV and its JSON
    /// sidecar must be present.
    pub fn load(csv_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(csv_path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some("t,u,y") => {}
            other => {
                return Err(Error::MalformedDataset(format!(
                    "expected header 't,u,y', got {other:?}"
                )))
            }
        }
        let mut u = Vec::new();
        let mut y = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let bad = || Error::MalformedDataset(format!("row {}: expected 't,u,y'", i + 2));
            let _t = fields.next().ok_or_else(bad)?;
            let us = fields.next().ok_or_else(bad)?;
            let ys = fields.next().ok_or_else(bad)?;
            if fields.next().is_some() {
                return Err(bad());
            }
            u.push(us.parse::<f64>().map_err(|e| {
                Error::MalformedDataset(format!("row {}: bad u value ({e})", i + 2))
            })?);
            y.push(ys.parse::<f64>().map_err(|e| {
                Error::MalformedDataset(format!("row {}: bad y value ({e})", i + 2))
            })?);
        }

        let sidecar_path = csv_path.with_extension("json");
        let sidecar_text = std::fs::read_to_string(&sidecar_path).map_err(|e| {
            Error::MalformedDataset(format!(
                "missing metadata sidecar {}: {e}",
                sidecar_path.display()
            ))
        })?;
        let sidecar: Sidecar = serde_json::from_str(&sidecar_text)?;
        Ok(Self::new(u, y, sidecar.seed, sidecar.regime, sidecar.truth))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::benchmark_model_basic;

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join("bjsd-core-dataset-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("demo.csv");

        let ds = Dataset::new(
            vec![0.1, -2.5e-17, 3.0, f64::MIN_POSITIVE],
            vec![1.0 / 3.0, 0.0, -1.0, 9.87654321e300],
            77,
            Regime::ClosedLoop,
            Some(benchmark_model_basic()),
        );
        ds.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn load_rejects_wrong_header() {
        let dir = std::env::temp_dir().join("bjsd-core-dataset-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "time,in,out\n1,0,0\n").unwrap();
        assert!(matches!(Dataset::load(&path), Err(Error::MalformedDataset(_))));
    }

    #[test]
    fn prefix_shares_metadata() {
        let ds = Dataset::new(vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], 9, Regime::OpenLoop, None);
        let p = ds.prefix(2);
        assert_eq!(p.u, vec![1.0, 2.0]);
        assert_eq!(p.y, vec![4.0, 5.0]);
        assert_eq!(p.seed, 9);
    }
}
