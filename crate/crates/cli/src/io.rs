use std::path::{Path, PathBuf};

use anyhow::Result;
use pmiris::data_io::{load_manifest, load_sample, Manifest, ManifestRecord, Sample};
use pmiris::eval::SplitPlan;
use pmiris::{Error, Mask};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn io_err(path: &Path, e: std::io::Error) -> anyhow::Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    with_temp(path, |tmp| std::fs::write(tmp, bytes).map_err(|e| io_err(tmp, e)))
}

/// Runs `write` against a temporary sibling of `path` and renames it into place.
pub fn with_temp(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    let tmp = path.with_file_name(name);
    let result = write(&tmp);
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
        return result;
    }
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Load {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        }
        .into()
    })
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    // the temporary name keeps the extension so the encoder is picked from it
    let tmp_name = format!(".{}", path.file_name().unwrap_or_default().to_string_lossy());
    let tmp = path.with_file_name(tmp_name);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    mask.save(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Manifest records, restricted to the test subjects of one split when a
/// plan and index are given.
pub fn select_records(
    manifest: &Manifest,
    plan: Option<&SplitPlan>,
    index: Option<usize>,
    side: Side,
) -> Result<Vec<ManifestRecord>> {
    let subjects = match (plan, index) {
        (Some(p), Some(k)) => {
            let split = p.splits.get(k).ok_or_else(|| {
                Error::Config(format!("split index {k} out of range (plan has {})", p.splits.len()))
            })?;
            Some(match side {
                Side::Train => split.train.clone(),
                Side::Test => split.test.clone(),
            })
        }
        (None, None) => None,
        _ => return Err(Error::Config("--splits and --split-index go together".into()).into()),
    };
    let records: Vec<ManifestRecord> = manifest
        .records
        .iter()
        .filter(|r| subjects.as_ref().is_none_or(|s| s.contains(&r.subject_id)))
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Error::Config("selection contains no images".into()).into());
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy)]
pub enum Side {
    Train,
    Test,
}

pub fn load_all(manifest: &Manifest, records: &[ManifestRecord]) -> Result<Vec<(Sample, Mask)>> {
    let loaded: Vec<pmiris::Result<(Sample, Mask)>> =
        records.par_iter().map(|r| load_sample(manifest, r)).collect();
    Ok(loaded.into_iter().collect::<pmiris::Result<Vec<_>>>()?)
}

pub fn open_manifest(path: &Path) -> Result<Manifest> {
    Ok(load_manifest(path)?)
}

pub fn open_plan(path: Option<&Path>) -> Result<Option<SplitPlan>> {
    path.map(read_json).transpose()
}

/// `dir/split_<k>/<id>.png` when that split directory exists, else `dir/<id>.png`.
pub fn mask_path(dir: &Path, split: Option<usize>, id: &str) -> PathBuf {
    if let Some(k) = split {
        let sub = dir.join(format!("split_{k}"));
        if sub.is_dir() {
            return sub.join(format!("{id}.png"));
        }
    }
    dir.join(format!("{id}.png"))
}
