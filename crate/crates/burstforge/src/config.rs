//! Flat `key = value` config files.
//!
//! ```text
//! # comment
//! include base.conf
//! iterations = 500
//! widths = 16,32,64,128
//! ```
//!
//! `include` paths are relative to the including file. Later assignments
//! override earlier ones, including those pulled in by an include.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use burstforge_core::burstgen::OffsetMode;
use burstforge_core::train::TrainConfig;

use crate::error::{Error, Result};

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub file: PathBuf,
    pub line: usize,
}

impl Entry {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Config {
            file: self.file.clone(),
            line: self.line,
            message: format!("field `{}`: {}", self.key, message.into()),
        }
    }
}

/// Assignments in file order, includes expanded in place.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    pub entries: Vec<Entry>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut stack = Vec::new();
        load_into(path, &mut entries, &mut stack)?;
        Ok(ConfigFile { entries })
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut stack = vec![origin.to_path_buf()];
        parse_into(text, origin, &mut entries, &mut stack)?;
        Ok(ConfigFile { entries })
    }

    /// Last assignment of `key`.
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().rev().find(|e| e.key == key)
    }
}

fn load_into(path: &Path, entries: &mut Vec<Entry>, stack: &mut Vec<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    stack.push(path.to_path_buf());
    parse_into(&text, path, entries, stack)?;
    stack.pop();
    Ok(())
}

fn parse_into(text: &str, origin: &Path, entries: &mut Vec<Entry>, stack: &mut Vec<PathBuf>) -> Result<()> {
    let at = |line: usize, message: String| Error::Config {
        file: origin.to_path_buf(),
        line,
        message,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix("include") {
            if rest.starts_with(char::is_whitespace) {
                let target = origin.parent().unwrap_or(Path::new(".")).join(rest.trim());
                if stack.len() >= MAX_INCLUDE_DEPTH || stack.iter().any(|p| p == &target) {
                    return Err(at(line, format!("include cycle through {}", target.display())));
                }
                load_into(&target, entries, stack)?;
                continue;
            }
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(at(line, format!("expected `key = value` or `include <path>`, got `{content}`")));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(at(line, "empty key".into()));
        }
        entries.push(Entry {
            key: key.into(),
            value: value.trim().into(),
            file: origin.to_path_buf(),
            line,
        });
    }
    Ok(())
}

/// Training settings resolved from a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub train: TrainConfig,
    /// Directory of source images; procedural charts when absent.
    pub corpus: Option<PathBuf>,
}

fn parse_value<V: std::str::FromStr>(e: &Entry, what: &str) -> Result<V> {
    e.value
        .parse()
        .map_err(|_| e.error(format!("expected {what}, got `{}`", e.value)))
}

fn parse_flag(e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        v => Err(e.error(format!("expected true or false, got `{v}`"))),
    }
}

pub fn parse_offset_mode(s: &str) -> Option<OffsetMode> {
    match s {
        "per-frame" => Some(OffsetMode::PerFrame),
        "per-burst" => Some(OffsetMode::PerBurst),
        _ => None,
    }
}

fn offset_mode_name(m: OffsetMode) -> &'static str {
    match m {
        OffsetMode::PerFrame => "per-frame",
        OffsetMode::PerBurst => "per-burst",
    }
}

/// Apply every entry of `file` on top of `settings`. Unknown keys are errors.
pub fn apply_train(file: &ConfigFile, settings: &mut TrainSettings) -> Result<()> {
    let t = &mut settings.train;
    for e in &file.entries {
        match e.key.as_str() {
            "iterations" => t.iterations = parse_value(e, "an integer")?,
            "batch_size" => t.batch_size = parse_value(e, "an integer")?,
            "learning_rate" => t.learning_rate = parse_value(e, "a number")?,
            "iterations_per_epoch" => t.iterations_per_epoch = parse_value(e, "an integer")?,
            "seed" => t.seed = parse_value(e, "an integer")?,
            "patch" => t.patch = parse_value(e, "an integer")?,
            "checkpoint_every" => t.checkpoint_every = parse_value(e, "an integer")?,
            "offset_mode" => {
                t.offset_mode = parse_offset_mode(&e.value)
                    .ok_or_else(|| e.error(format!("expected per-frame or per-burst, got `{}`", e.value)))?
            }
            "burst_len" => t.net.burst_len = parse_value(e, "an integer")?,
            "kernel_size" => t.net.kernel_size = parse_value(e, "an integer")?,
            "widths" => {
                t.net.widths = e
                    .value
                    .split(',')
                    .map(|w| w.trim().parse().map_err(|_| e.error(format!("bad width `{}`", w.trim()))))
                    .collect::<Result<_>>()?
            }
            "channel_attention" => t.net.channel_attention = parse_flag(e)?,
            "spatial_attention" => t.net.spatial_attention = parse_flag(e)?,
            "residual_branch" => t.net.residual_branch = parse_flag(e)?,
            "loss.lambda" => t.loss.lambda_grad = parse_value(e, "a number")?,
            "loss.alpha" => t.loss.alpha = parse_value(e, "a number")?,
            "loss.beta" => t.loss.beta = parse_value(e, "a number")?,
            "loss.gamma" => t.loss.gamma = parse_value(e, "a number")?,
            "corpus" => {
                let base = e.file.parent().unwrap_or(Path::new("."));
                settings.corpus = Some(base.join(&e.value));
            }
            _ => return Err(e.error("unknown key")),
        }
    }
    Ok(())
}

/// Inverse of [`apply_train`]: a config file that reproduces `settings`.
pub fn render_train(settings: &TrainSettings) -> String {
    let t = &settings.train;
    let widths: Vec<String> = t.net.widths.iter().map(|w| w.to_string()).collect();
    let mut s = String::new();
    let _ = writeln!(s, "iterations = {}", t.iterations);
    let _ = writeln!(s, "batch_size = {}", t.batch_size);
    let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
    let _ = writeln!(s, "iterations_per_epoch = {}", t.iterations_per_epoch);
    let _ = writeln!(s, "seed = {}", t.seed);
    let _ = writeln!(s, "patch = {}", t.patch);
    let _ = writeln!(s, "checkpoint_every = {}", t.checkpoint_every);
    let _ = writeln!(s, "offset_mode = {}", offset_mode_name(t.offset_mode));
    let _ = writeln!(s, "burst_len = {}", t.net.burst_len);
    let _ = writeln!(s, "kernel_size = {}", t.net.kernel_size);
    let _ = writeln!(s, "widths = {}", widths.join(","));
    let _ = writeln!(s, "channel_attention = {}", t.net.channel_attention);
    let _ = writeln!(s, "spatial_attention = {}", t.net.spatial_attention);
    let _ = writeln!(s, "residual_branch = {}", t.net.residual_branch);
    let _ = writeln!(s, "loss.lambda = {}", t.loss.lambda_grad);
    let _ = writeln!(s, "loss.alpha = {}", t.loss.alpha);
    let _ = writeln!(s, "loss.beta = {}", t.loss.beta);
    let _ = writeln!(s, "loss.gamma = {}", t.loss.gamma);
    if let Some(c) = &settings.corpus {
        let _ = writeln!(s, "corpus = {}", c.display());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> TrainSettings {
        TrainSettings {
            train: TrainConfig::desk(6).unwrap(),
            corpus: None,
        }
    }

    #[test]
    fn later_assignments_win() {
        let f = ConfigFile::parse("iterations = 5\n# note\niterations = 7 # trailing\n", Path::new("a.conf")).unwrap();
        let mut s = desk();
        apply_train(&f, &mut s).unwrap();
        assert_eq!(s.train.iterations, 7);
        assert_eq!(f.get("iterations").unwrap().line, 3);
    }

    #[test]
    fn bad_value_names_line_and_field() {
        let f = ConfigFile::parse("\nbatch_size = two\n", Path::new("x.conf")).unwrap();
        let err = apply_train(&f, &mut desk()).unwrap_err();
        assert_eq!(err.to_string(), "x.conf:2: field `batch_size`: expected an integer, got `two`");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_equals_is_rejected() {
        let err = ConfigFile::parse("iterations 5\n", Path::new("x.conf")).unwrap_err();
        assert!(err.to_string().starts_with("x.conf:1:"));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let f = ConfigFile::parse("iteratons = 5\n", Path::new("x.conf")).unwrap();
        assert!(apply_train(&f, &mut desk()).unwrap_err().to_string().contains("unknown key"));
    }

    #[test]
    fn render_round_trips() {
        let mut s = desk();
        s.train.seed = 42;
        s.train.net.widths = vec![8, 16];
        s.train.offset_mode = OffsetMode::PerBurst;
        s.corpus = Some(PathBuf::from("/data/imgs"));
        let f = ConfigFile::parse(&render_train(&s), Path::new("/m/manifest.conf")).unwrap();
        let mut back = TrainSettings {
            train: TrainConfig::paper(1).unwrap(),
            corpus: None,
        };
        apply_train(&f, &mut back).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn includes_resolve_relative_and_detect_cycles() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/base.conf"), "iterations = 11\nseed = 3\n").unwrap();
        std::fs::write(dir.path().join("run.conf"), "include sub/base.conf\nseed = 4\n").unwrap();
        let f = ConfigFile::load(&dir.path().join("run.conf")).unwrap();
        let mut s = desk();
        apply_train(&f, &mut s).unwrap();
        assert_eq!((s.train.iterations, s.train.seed), (11, 4));

        std::fs::write(dir.path().join("a.conf"), "include b.conf\n").unwrap();
        std::fs::write(dir.path().join("b.conf"), "include a.conf\n").unwrap();
        let err = ConfigFile::load(&dir.path().join("a.conf")).unwrap_err();
        assert!(err.to_string().contains("include cycle"), "{err}");
    }
}
