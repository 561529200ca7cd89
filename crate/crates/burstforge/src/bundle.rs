//! On-disk synthesized samples.
//!
//! A dataset directory holds `sample_NNNNNN.bfs` files plus the manifest of
//! the command that wrote them. Each sample file uses the checkpoint
//! container: tensors `clean`, `ground_truth`, `noise_map`, `noisy` (f64)
//! and `key = value` metadata for the preset, seed and offsets.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use burstforge_core::burstgen::{GainPreset, OffsetSpec, SynthSample};
use burstforge_core::checkpoint;
use burstforge_core::net::NoiseMap;
use burstforge_core::{ParamStore, Tensor};

use crate::error::{Error, Result};

pub const SAMPLE_EXTENSION: &str = "bfs";
const KIND: &str = "synth_sample";

pub fn sample_file_name(index: usize) -> String {
    format!("sample_{index:06}.{SAMPLE_EXTENSION}")
}

pub fn encode_sample(sample: &SynthSample) -> Vec<u8> {
    let mut store = ParamStore::<f64>::new();
    for (name, t) in [
        ("clean", &sample.clean),
        ("ground_truth", &sample.ground_truth),
        ("noise_map", &sample.noise_map.sigma),
        ("noisy", &sample.noisy),
    ] {
        store.insert(name, t.clone()).expect("distinct names");
    }
    let o = &sample.offsets;
    let offsets: Vec<String> = o.offsets.iter().map(|(x, y)| format!("{x}:{y}")).collect();
    let large: Vec<&str> = o.large.iter().map(|&l| if l { "1" } else { "0" }).collect();
    let mut meta = String::new();
    let _ = writeln!(meta, "kind = {KIND}");
    let _ = writeln!(meta, "seed = {}", sample.seed);
    let _ = writeln!(meta, "sigma_r = {}", sample.preset.sigma_r);
    let _ = writeln!(meta, "sigma_s = {}", sample.preset.sigma_s);
    let _ = writeln!(meta, "offsets = {}", offsets.join(","));
    let _ = writeln!(meta, "large = {}", large.join(","));
    let _ = writeln!(meta, "poisson_draw = {}", o.poisson_draw);
    checkpoint::encode(&store, &meta)
}

pub fn decode_sample(bytes: &[u8]) -> Result<SynthSample> {
    let (meta, store) = checkpoint::decode::<f64>(bytes)?;
    let bad = |what: &str| Error::Data(format!("sample metadata: bad or missing `{what}`"));
    let field = |key: &str| {
        meta.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim().to_owned())
            .ok_or_else(|| bad(key))
    };
    if field("kind")? != KIND {
        return Err(bad("kind"));
    }
    let num = |key: &str| field(key)?.parse::<f64>().map_err(|_| bad(key));
    let list = |key: &str| -> Result<Vec<String>> {
        let v = field(key)?;
        Ok(if v.is_empty() { vec![] } else { v.split(',').map(str::to_owned).collect() })
    };
    let offsets = list("offsets")?
        .iter()
        .map(|p| {
            let (x, y) = p.split_once(':').ok_or_else(|| bad("offsets"))?;
            Ok((x.parse().map_err(|_| bad("offsets"))?, y.parse().map_err(|_| bad("offsets"))?))
        })
        .collect::<Result<Vec<(i32, i32)>>>()?;
    let large = list("large")?.iter().map(|v| v == "1").collect();
    let tensor = |name: &str| -> Result<Tensor<f64>> {
        let mut t = store.get(name).cloned().ok_or_else(|| bad(name))?;
        t.requires_grad = false;
        Ok(t)
    };
    Ok(SynthSample {
        ground_truth: tensor("ground_truth")?,
        clean: tensor("clean")?,
        noisy: tensor("noisy")?,
        noise_map: NoiseMap {
            sigma: tensor("noise_map")?,
        },
        preset: GainPreset::new(num("sigma_r")?, num("sigma_s")?)?,
        offsets: OffsetSpec {
            offsets,
            large,
            poisson_draw: field("poisson_draw")?.parse().map_err(|_| bad("poisson_draw"))?,
        },
        seed: field("seed")?.parse().map_err(|_| bad("seed"))?,
    })
}

/// Write samples into `dir` (created if needed); returns the file paths.
pub fn write_dataset(dir: &Path, samples: &[SynthSample]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let path = dir.join(sample_file_name(i));
            std::fs::write(&path, encode_sample(s)).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Sample files of a dataset directory in name order.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let read = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in read {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == SAMPLE_EXTENSION) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn read_dataset(dir: &Path) -> Result<Vec<SynthSample>> {
    dataset_files(dir)?
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            decode_sample(&bytes).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use burstforge_core::burstgen::{NoiseLevel, OffsetMode};
    use burstforge_core::train::chart_samples;

    #[test]
    fn sample_round_trip() {
        let samples = chart_samples(2, 3, 32, NoiseLevel::TrainingRange, OffsetMode::PerFrame, 5).unwrap();
        for s in &samples {
            let bytes = encode_sample(s);
            assert_eq!(&decode_sample(&bytes).unwrap(), s);
            assert_eq!(encode_sample(&decode_sample(&bytes).unwrap()), bytes);
        }
    }

    #[test]
    fn dataset_round_trip_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let samples = chart_samples(3, 2, 16, NoiseLevel::Fixed(GainPreset::gain(2).unwrap()), OffsetMode::PerFrame, 9).unwrap();
        write_dataset(dir.path(), &samples).unwrap();
        std::fs::write(dir.path().join("manifest.txt"), "x").unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), samples);
    }

    #[test]
    fn checkpoint_bytes_are_not_a_sample() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::zeros(&[1])).unwrap();
        let bytes = checkpoint::encode(&store, "burst_len = 2\n");
        assert!(decode_sample(&bytes).is_err());
    }
}
