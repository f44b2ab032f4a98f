//! Atomic artifact writes, the output-directory lock, digests and the run manifest.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const LOCK: &str = ".plexity.lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a file, or of a directory as the sorted list of `(relative path, file digest)`.
pub fn digest_path(path: &Path) -> std::io::Result<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        let mut h = Sha256::new();
        for rel in files {
            let d = sha256_hex(&fs::read(path.join(&rel))?);
            h.update(rel.as_bytes());
            h.update([0]);
            h.update(d.as_bytes());
            h.update([b'\n']);
        }
        Ok(hex::encode(h.finalize()))
    } else {
        Ok(sha256_hex(&fs::read(path)?))
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("walked below root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Write `bytes` to a temporary file next to `path`, then rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    tmp.write_all(bytes)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Internal(format!("cannot move artifact into {}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Populate a temporary directory with `files`, then swap it in for `path`.
pub fn write_dir_atomic(path: &Path, files: &[(String, Vec<u8>)]) -> CliResult<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent)?;
    let staging = tempfile::Builder::new().prefix(".staging-").tempdir_in(parent)?;
    for (rel, bytes) in files {
        let p = staging.path().join(rel);
        fs::create_dir_all(p.parent().expect("file has a parent"))?;
        fs::write(&p, bytes)?;
    }
    let staged = staging.keep();
    if path.exists() {
        let old = tempfile::Builder::new().prefix(".retired-").tempdir_in(parent)?.keep();
        fs::remove_dir(&old)?;
        fs::rename(path, &old)?;
        fs::rename(&staged, path)?;
        fs::remove_dir_all(&old)?;
    } else {
        fs::rename(&staged, path)?;
    }
    Ok(())
}

/// Exclusive lock on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Validation(format!(
                "another command is running in {} (remove {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Consumed artifacts (output-relative names or absolute input paths) and their digests.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub config_sha256: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_path: String,
    pub config_sha256: String,
    /// The configuration file exactly as read.
    pub config: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn load_or_default(out_dir: &Path) -> CliResult<Self> {
        let path = out_dir.join(MANIFEST);
        if !path.exists() {
            return Ok(RunManifest::default());
        }
        let bytes = fs::read(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Upstream(format!("{} is unreadable: {e}; delete it and re-run the pipeline", path.display())))
    }

    pub fn save(&self, out_dir: &Path) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(self).map_err(|e| CliError::Internal(e.to_string()))?;
        bytes.push(b'\n');
        write_atomic(&out_dir.join(MANIFEST), &bytes)
    }
}

/// An artifact inside the output directory and the stage that produces it.
#[derive(Debug, Clone, Copy)]
pub struct Artifact {
    pub name: &'static str,
    pub stage: &'static str,
}

/// Check that every consumed artifact exists and, unless `force`, that it and
/// everything upstream of it is unchanged since the producing stage recorded it.
pub fn check_upstream(out_dir: &Path, manifest: &RunManifest, consumed: &[Artifact], force: bool) -> CliResult<()> {
    for a in consumed {
        if !out_dir.join(a.name).exists() {
            return Err(CliError::Upstream(format!("missing artifact {}; run `plexity {}` first", a.name, a.stage)));
        }
    }
    if force {
        return Ok(());
    }
    let mut visited = HashSet::new();
    for a in consumed {
        let record = manifest
            .stages
            .get(a.stage)
            .ok_or_else(|| CliError::Upstream(format!("no record of stage `{}` in the manifest; re-run `plexity {}` (or pass --force)", a.stage, a.stage)))?;
        let current = digest_path(&out_dir.join(a.name))?;
        if record.outputs.get(a.name) != Some(&current) {
            return Err(CliError::Upstream(format!(
                "{} changed after `{}` wrote it; re-run `plexity {}` (or pass --force)",
                a.name, a.stage, a.stage
            )));
        }
        check_stage_fresh(out_dir, manifest, a.stage, &mut visited)?;
    }
    Ok(())
}

fn check_stage_fresh(out_dir: &Path, manifest: &RunManifest, stage: &str, visited: &mut HashSet<String>) -> CliResult<()> {
    if !visited.insert(stage.to_string()) {
        return Ok(());
    }
    let Some(record) = manifest.stages.get(stage) else {
        return Err(CliError::Upstream(format!("no record of stage `{stage}`; re-run `plexity {stage}`")));
    };
    for (name, digest) in &record.inputs {
        let path = if Path::new(name).is_absolute() { PathBuf::from(name) } else { out_dir.join(name) };
        let current = digest_path(&path).ok();
        if current.as_ref() != Some(digest) {
            return Err(CliError::Upstream(format!("stage `{stage}` is stale: its input {name} changed; re-run `plexity {stage}`")));
        }
        if let Some((producer, _)) = manifest.stages.iter().find(|(s, r)| s.as_str() != stage && r.outputs.contains_key(name)) {
            check_stage_fresh(out_dir, manifest, producer, visited)?;
        }
    }
    Ok(())
}
