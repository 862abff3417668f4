//! Sequence directory layout: `manifest.json`, `config.toml`, and
//! `frames/NNNNNN.{adc,tensor,head,pose,points}`.

use std::fs;
use std::path::{Path, PathBuf};

use radpose::pose::{read_pose_text, write_pose_text, PoseSet};
use radpose::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub action: String,
    pub seed: u64,
    /// SHA-256 of the canonical radar config TOML.
    pub config_hash: String,
    pub frames: usize,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", dir.join(MANIFEST).display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join(MANIFEST), text + "\n")?;
        Ok(())
    }
}

pub fn config_hash(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub fn is_dataset(p: &Path) -> bool {
    p.join("frames").is_dir()
}

/// The sequence directory `p` is, or whose `frames/` holds `p`.
pub fn root_of(p: &Path) -> Option<&Path> {
    if is_dataset(p) {
        return Some(p);
    }
    let frames = p.parent().filter(|d| d.file_name().is_some_and(|n| n == "frames"))?;
    frames.parent().filter(|d| is_dataset(d))
}

pub fn frame_path(dir: &Path, index: usize, ext: &str) -> PathBuf {
    dir.join("frames").join(format!("{index:06}.{ext}"))
}

/// Frame indices that have a `.{ext}` file, ascending.
pub fn frames_with(dir: &Path, ext: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir.join("frames"))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if let Ok(i) = stem.parse::<usize>() {
            out.push(i);
        }
    }
    out.sort_unstable();
    if out.is_empty() {
        return Err(Error::Validation(format!("no .{ext} frames in {}", dir.display())));
    }
    Ok(out)
}

pub fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("frames"))?;
    Ok(())
}

/// Copy the manifest, config, and ground-truth poses so `to` is a complete
/// sequence directory.
pub fn copy_metadata(from: &Path, to: &Path) -> Result<()> {
    if from == to {
        return Ok(());
    }
    create(to)?;
    for name in [MANIFEST, CONFIG] {
        if from.join(name).exists() {
            fs::copy(from.join(name), to.join(name))?;
        }
    }
    if let Ok(frames) = frames_with(from, "pose") {
        for i in frames {
            fs::copy(frame_path(from, i, "pose"), frame_path(to, i, "pose"))?;
        }
    }
    Ok(())
}

pub fn write_pose(path: &Path, frame: usize, poses: &PoseSet) -> Result<()> {
    fs::write(path, write_pose_text(&[(frame, poses)]))?;
    Ok(())
}

pub fn read_pose(path: &Path) -> Result<PoseSet> {
    let text = fs::read_to_string(path)?;
    let mut frames = read_pose_text(&text)?;
    match frames.len() {
        1 => Ok(frames.remove(0).1),
        n => Err(Error::Format(format!("{}: expected one frame, found {n}", path.display()))),
    }
}
