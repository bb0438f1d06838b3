//! Run directories: `config.json`, `calibration.json`, `results.csv` and
//! per-repeat traces under `traces/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::ExperimentError;
use crate::trace::{write_trace, TraceRecord};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Pretty JSON with object keys sorted, newline terminated.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    // Going through `Value` sorts the keys.
    let v = serde_json::to_value(value).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    let mut text =
        serde_json::to_string_pretty(&v).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)
            .map_err(|e| ExperimentError::Invalid(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, ExperimentError> {
        let root = root.into();
        fs::create_dir_all(root.join("traces")).map_err(io_err(&root))?;
        Ok(Self { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn config<T: Serialize>(&self, cfg: &T) -> Result<(), ExperimentError> {
        write_json(&self.root.join("config.json"), cfg)
    }

    pub fn calibration<T: Serialize>(&self, cal: &T) -> Result<(), ExperimentError> {
        write_json(&self.root.join("calibration.json"), cal)
    }

    pub fn results<T: Serialize>(&self, rows: &[T]) -> Result<(), ExperimentError> {
        write_csv(&self.root.join("results.csv"), rows)
    }

    pub fn trace(&self, name: &str, rows: &[TraceRecord]) -> Result<(), ExperimentError> {
        let path = self.root.join("traces").join(format!("{name}.csv"));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_trace(std::io::BufWriter::new(file), rows)?;
        Ok(())
    }
}
