//! Checkpoint files: the core container plus network and run metadata.

use std::fmt::Write as _;
use std::path::Path;

use burstforge_core::checkpoint;
use burstforge_core::net::{KpnNet, NetConfig};
use burstforge_core::ParamStore;

use crate::error::{Error, Result};

pub const CHECKPOINT_EXTENSION: &str = "bfck";

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCheckpoint {
    pub net: NetConfig,
    pub params: ParamStore<f32>,
    /// Full metadata block, network keys included.
    pub metadata: String,
}

impl LoadedCheckpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim())
    }
}

/// Checkpoint bytes: network keys followed by `extra` key/value pairs.
pub fn encode(net: &NetConfig, params: &ParamStore<f32>, extra: &[(&str, String)]) -> Vec<u8> {
    let mut meta = net.to_kv();
    for (k, v) in extra {
        let _ = writeln!(meta, "{k} = {v}");
    }
    checkpoint::encode(params, &meta)
}

pub fn save(path: &Path, net: &NetConfig, params: &ParamStore<f32>, extra: &[(&str, String)]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(net, params, extra)).map_err(|e| Error::io(path, e))
}

/// Read a checkpoint and check its tensors against the network it describes.
pub fn load(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (metadata, params) =
        checkpoint::decode::<f32>(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let net = NetConfig::from_kv(&metadata).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    KpnNet::new(net.clone())?
        .check_params(&params)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(LoadedCheckpoint { net, params, metadata })
}

#[cfg(test)]
mod tests {
    use super::*;
    use burstforge_core::net::build_ablation;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = NetConfig {
            burst_len: 2,
            widths: vec![4, 8],
            ..build_ablation(4).unwrap()
        };
        let params = KpnNet::new(net.clone()).unwrap().init_params::<f32>(1).unwrap();
        let path = dir.path().join("m.bfck");
        save(&path, &net, &params, &[("iteration", "12".into())]).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.net, net);
        assert_eq!(back.params, params);
        assert_eq!(back.meta("iteration"), Some("12"));
    }

    #[test]
    fn truncated_file_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bfck");
        std::fs::write(&path, b"BFCK\x01").unwrap();
        assert_eq!(load(&path).unwrap_err().exit_code(), 3);
    }
}
