//! Datasets as JSON.

use std::path::Path;

use isac_core::training::Dataset;

use crate::error::{io_err, SimError, SimResult};

pub fn to_json(d: &Dataset) -> String {
    serde_json::to_string(d).expect("dataset serializes")
}

pub fn from_json(text: &str) -> SimResult<Dataset> {
    let d: Dataset = serde_json::from_str(text).map_err(|e| SimError::Schema(format!("dataset: {e}")))?;
    let err = d.consistency_error()?;
    if err > 1e-10 {
        return Err(SimError::Schema(format!(
            "dataset channels disagree with their states by {err:e}"
        )));
    }
    Ok(d)
}

pub fn save(d: &Dataset, path: &Path) -> SimResult<()> {
    crate::results::write_file(path, &to_json(d))
}

pub fn load(path: &Path) -> SimResult<Dataset> {
    from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
}
