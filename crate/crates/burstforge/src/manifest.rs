//! Run manifests written next to every artifact.
//!
//! ```text
//! command = train
//! seed = 7
//! started_unix = 1760000000
//! finished_unix = 1760000100
//! code_version = burstforge 0.1.0 (git v0.1-3-gabc1234)
//!
//! [config]
//! iterations = 2000
//! ...
//!
//! [inputs]
//! <sha256>  <path>
//! ```
//!
//! The `[config]` section is a valid config file for the same command.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub code_version: String,
    /// Resolved configuration as `key = value` lines.
    pub config: String,
    /// `(sha256 hex, path)` of every file read.
    pub inputs: Vec<(String, String)>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Package version plus `git describe` of the source tree when available.
pub fn code_version() -> String {
    let describe = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_owned());
    match describe {
        Some(d) if !d.is_empty() => format!("burstforge {} (git {d})", env!("CARGO_PKG_VERSION")),
        _ => format!("burstforge {}", env!("CARGO_PKG_VERSION")),
    }
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn start(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.into(),
            seed,
            started_unix: unix_now(),
            finished_unix: 0,
            code_version: code_version(),
            config: String::new(),
            inputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let hash = hash_file(path)?;
        self.inputs.push((hash, path.display().to_string()));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "started_unix = {}", self.started_unix);
        let _ = writeln!(s, "finished_unix = {}", self.finished_unix);
        let _ = writeln!(s, "code_version = {}", self.code_version);
        let _ = writeln!(s, "\n[config]");
        s.push_str(&self.config);
        if !self.config.is_empty() && !self.config.ends_with('\n') {
            s.push('\n');
        }
        let _ = writeln!(s, "\n[inputs]");
        for (hash, path) in &self.inputs {
            let _ = writeln!(s, "{hash}  {path}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Data(format!("manifest: {m}"));
        let mut m = RunManifest {
            command: String::new(),
            seed: 0,
            started_unix: 0,
            finished_unix: 0,
            code_version: String::new(),
            config: String::new(),
            inputs: Vec::new(),
        };
        let mut section = "";
        for line in text.lines() {
            match line.trim() {
                "[config]" => section = "config",
                "[inputs]" => section = "inputs",
                "" => {}
                t => match section {
                    "config" => {
                        m.config.push_str(t);
                        m.config.push('\n');
                    }
                    "inputs" => {
                        let (h, p) = t.split_once("  ").ok_or_else(|| bad(format!("bad input line `{t}`")))?;
                        m.inputs.push((h.into(), p.into()));
                    }
                    _ => {
                        let (k, v) = t.split_once('=').ok_or_else(|| bad(format!("bad line `{t}`")))?;
                        let v = v.trim();
                        let int = |v: &str| v.parse::<u64>().map_err(|_| bad(format!("bad integer `{v}`")));
                        match k.trim() {
                            "command" => m.command = v.into(),
                            "seed" => m.seed = int(v)?,
                            "started_unix" => m.started_unix = int(v)?,
                            "finished_unix" => m.finished_unix = int(v)?,
                            "code_version" => m.code_version = v.into(),
                            other => return Err(bad(format!("unknown key `{other}`"))),
                        }
                    }
                },
            }
        }
        Ok(m)
    }

    /// Stamp the finish time and write to `path`.
    pub fn finish(mut self, path: &Path) -> Result<PathBuf> {
        self.finished_unix = unix_now();
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))?;
        Ok(path.to_path_buf())
    }
}
