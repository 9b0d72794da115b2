//! Artifact plumbing: every run gets an output directory containing the
//! resolved configuration (seed overrides applied) next to its data files,
//! so any artifact is reproducible from the directory contents alone.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

pub fn prepare_out_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut data = serde_json::to_string_pretty(value)?;
    data.push('\n');
    std::fs::write(path, data).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn write_resolved_config(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    write_json(&dir.join("resolved_config.json"), config)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
