use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NpmmError, Result};

/// Retained draws, one column per scalar parameter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PosteriorStore {
    pub columns: Vec<String>,
    pub draws: Vec<Vec<f64>>,
}

impl PosteriorStore {
    pub fn new(columns: Vec<String>) -> Self {
        PosteriorStore {
            columns,
            draws: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.index(name)?;
        Some(self.draws.iter().map(|row| row[j]).collect())
    }

    pub fn require(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)
            .ok_or_else(|| NpmmError::Data(format!("posterior store has no column {name:?}")))
    }

    /// CSV text; values use the shortest representation that round-trips.
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.draws {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.into_inner()
            .map_err(|e| NpmmError::Data(format!("csv buffer: {e}")))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_bytes()?).map_err(|e| NpmmError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let columns: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let mut draws = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        NpmmError::Data(format!("{}: row {}: non-numeric value {f:?}", path.display(), i + 2))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != columns.len() {
                return Err(NpmmError::Data(format!(
                    "{}: row {} has {} fields for {} columns",
                    path.display(),
                    i + 2,
                    row.len(),
                    columns.len()
                )));
            }
            draws.push(row);
        }
        Ok(PosteriorStore { columns, draws })
    }
}

/// Per-chain record written next to the posterior store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config_hash: String,
    pub structure_hash: String,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub draws: usize,
    /// Post-burn-in acceptance rate of each Metropolis block.
    pub acceptance: BTreeMap<String, f64>,
    /// Frozen proposal scales after adaptation.
    pub proposal_scales: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| NpmmError::Serde(e.to_string()))?;
        std::fs::write(path, s).map_err(|e| NpmmError::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| NpmmError::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| NpmmError::Serde(e.to_string()))
    }
}
