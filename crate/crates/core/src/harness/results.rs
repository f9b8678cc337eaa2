use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Variant;
use crate::envs::Domain;
use crate::error::{Error, Result};
use crate::orchestrator::EpisodeResult;

pub const RESULTS_SCHEMA: &str = "hipmdp-results/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub domain: Domain,
    pub variant: Variant,
    pub seed: u64,
    pub episode: usize,
    pub total_reward: f64,
    pub steps: usize,
    pub wall_ms: u64,
    pub model_mse: Option<f64>,
}

impl ResultRow {
    pub fn from_episode(domain: Domain, variant: Variant, seed: u64, r: &EpisodeResult) -> Self {
        Self {
            run_id: format!("{domain}-{variant}-{seed}"),
            domain,
            variant,
            seed,
            episode: r.episode,
            total_reward: r.total_reward,
            steps: r.steps,
            wall_ms: r.wall_ms,
            model_mse: r.model_mse,
        }
    }
}

/// Writes a CSV file whose first line is a `# schema:` comment.
pub(crate) fn write_versioned<T: Serialize>(path: &Path, schema: &str, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "# schema: {schema}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_versioned`], checking the schema line.
pub(crate) fn read_versioned<T: for<'de> Deserialize<'de>>(path: &Path, schema: &str) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    if first.trim_end() != format!("# schema: {schema}") {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected schema line for {schema}, found `{}`", first.trim_end()),
        });
    }
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// All rows of a results table; a missing file has none.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_versioned(path, RESULTS_SCHEMA)
}

/// Appends whole (variant, seed) blocks to the results table so an
/// interrupted grid leaves only complete pairs behind.
pub(crate) struct ResultsWriter {
    path: PathBuf,
    file: File,
}

impl ResultsWriter {
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if fresh {
            writeln!(file, "# schema: {RESULTS_SCHEMA}").map_err(|e| Error::io(path, e))?;
            writeln!(file, "run_id,domain,variant,seed,episode,total_reward,steps,wall_ms,model_mse")
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, rows: &[ResultRow]) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for row in rows {
            w.serialize(row).map_err(|e| csv_error(&self.path, e))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format {
            path: self.path.clone(),
            message: e.to_string(),
        })?;
        self.file.write_all(&bytes).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}
