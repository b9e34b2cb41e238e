//! Run directories and their manifests.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Ok,
    Failed,
}

/// Everything needed to repeat a run: the arguments, the resolved
/// configuration, the inputs it read and digests of what it wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub run_id: String,
    /// Resolved configuration text, identical to `config.txt`.
    pub config: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub output_dir: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub started_unix: f64,
    pub wall_clock_secs: Option<f64>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<FileDigest>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: not a run manifest: {e}", path.display())))
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// An open run directory. The manifest is written on creation with status
/// `running` and rewritten by [`RunDir::finish`].
pub struct RunDir {
    pub dir: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl RunDir {
    pub fn create(dir: PathBuf, mut manifest: RunManifest) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        manifest.output_dir = dir.display().to_string();
        manifest.started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
        let run = Self { dir, manifest, clock: Instant::now() };
        run.write_text(CONFIG_FILE, &run.manifest.config.clone())?;
        run.write_manifest()?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn run_id(&self) -> &str {
        &self.manifest.run_id
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    }

    fn write_manifest(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        self.write_text(MANIFEST_FILE, &(text + "\n"))
    }

    /// Records the outcome and digests every regular file in the directory
    /// except the manifest.
    pub fn finish(mut self, outcome: &Result<(), CliError>) -> Result<(), CliError> {
        self.manifest.wall_clock_secs = Some(self.clock.elapsed().as_secs_f64());
        match outcome {
            Ok(()) => self.manifest.status = RunStatus::Ok,
            Err(e) => {
                self.manifest.status = RunStatus::Failed;
                self.manifest.error = Some(e.message.clone());
            }
        }
        self.manifest.artifacts = digest_tree(&self.dir, &self.dir)?;
        self.write_manifest()
    }
}

fn digest_tree(root: &Path, dir: &Path) -> Result<Vec<FileDigest>, CliError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::io(dir, e))?;
    names.sort();
    let mut out = Vec::new();
    for p in names {
        if p.is_dir() {
            out.extend(digest_tree(root, &p)?);
        } else if p.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            let rel = p.strip_prefix(root).expect("inside root").to_string_lossy().replace('\\', "/");
            out.push(FileDigest { path: rel, sha256: sha256_file(&p)? });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank() -> RunManifest {
        RunManifest {
            tool_version: "0".into(),
            command: "x".into(),
            argv: vec!["x".into()],
            run_id: "abc".into(),
            config: "[train]\nseed = 0\n".into(),
            seeds: vec![0],
            inputs: vec![],
            output_dir: String::new(),
            status: RunStatus::Running,
            error: None,
            started_unix: 0.0,
            wall_clock_secs: None,
            artifacts: vec![],
        }
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(sha256_bytes(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn manifest_lifecycle() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let run = RunDir::create(dir.clone(), blank()).unwrap();
        let early = RunManifest::load(&dir.join(MANIFEST_FILE)).unwrap();
        assert_eq!(early.status, RunStatus::Running);
        assert_eq!(fs::read_to_string(dir.join(CONFIG_FILE)).unwrap(), early.config);
        fs::create_dir_all(dir.join("sub")).unwrap();
        run.write_text("sub/a.csv", "a\n").unwrap();
        run.finish(&Ok(())).unwrap();
        let done = RunManifest::load(&dir.join(MANIFEST_FILE)).unwrap();
        assert_eq!(done.status, RunStatus::Ok);
        let names: Vec<_> = done.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(names, vec!["config.txt", "sub/a.csv"]);
        assert_eq!(done.artifacts[1].sha256, sha256_bytes(b"a\n"));
    }
}
