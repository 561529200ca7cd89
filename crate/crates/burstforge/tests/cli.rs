use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use burstforge::imageio::write_png16;
use burstforge::manifest::RunManifest;
use burstforge_core::Tensor;

const TINY: &str = "burst_len = 2\nwidths = 4,8\npatch = 64\niterations = 3\nbatch_size = 1\n";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_burstforge"));
    c.env_remove("BURSTFORGE_SEED");
    c
}

fn run(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.conf");
    std::fs::write(&p, TINY).unwrap();
    p
}

fn manifest(path: &Path) -> RunManifest {
    RunManifest::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn dir_bytes(dir: &Path, ext: &str) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn synth_gain_three_is_recorded_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(&[&"synth", &"--charts", &"--out", out, &"--gain", &"3", &"--n", &"3", &"--count", &"2", &"--patch", &"64", &"--seed", &"5"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let m = manifest(&a.join("manifest.txt"));
    assert_eq!(m.command, "synth");
    assert_eq!(m.seed, 5);
    assert!(m.config.contains("gain = 3\n"));
    let samples = burstforge::bundle::read_dataset(&a).unwrap();
    assert_eq!(samples.len(), 2);
    assert_eq!((samples[0].preset.sigma_r, samples[0].preset.sigma_s), (5e-2, 1e-2));
    assert_eq!(dir_bytes(&a, "bfs"), dir_bytes(&b, "bfs"));
}

#[test]
fn synth_count_zero_writes_an_empty_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("empty");
    let o = run(&[&"synth", &"--charts", &"--out", &out, &"--count", &"0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir_bytes(&out, "bfs").is_empty());
    assert!(manifest(&out.join("manifest.txt")).config.contains("count = 0"));
}

#[test]
fn synth_from_corpus_hashes_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    std::fs::create_dir(&corpus).unwrap();
    let img = Tensor::from_fn(&[200, 210], |i| ((i * 7) % 97) as f64 / 97.0);
    write_png16(&corpus.join("one.png"), &[img], None).unwrap();
    let out = tmp.path().join("ds");
    let o = run(&[&"synth", &"--corpus", &corpus, &"--out", &out, &"--n", &"2", &"--count", &"3", &"--patch", &"64"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(&out.join("manifest.txt"));
    assert_eq!(m.inputs.len(), 1);
    assert_eq!(m.inputs[0].0.len(), 64);
    assert_eq!(dir_bytes(&out, "bfs").len(), 3);

    let small = tmp.path().join("small");
    std::fs::create_dir(&small).unwrap();
    write_png16(&small.join("s.png"), &[Tensor::full(&[20, 20], 0.5)], None).unwrap();
    let o = run(&[&"synth", &"--corpus", &small, &"--out", &tmp.path().join("x"), &"--patch", &"64"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn invalid_gain_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    for g in ["5", "custom:0.1", "loud"] {
        let o = run(&[&"synth", &"--charts", &"--out", &tmp.path(), &"--gain", &g]);
        assert_eq!(o.status.code(), Some(2), "{g}: {}", stderr(&o));
    }
    let o = run(&[&"synth", &"--out", &tmp.path()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_writes_checkpoint_curve_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tiny_config(tmp.path());
    let out = tmp.path().join("run");
    let o = run(&[&"train", &conf, &"--model", &"6", &"--out", &out, &"--log-every", &"1", &"--seed", &"4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("iter 3/3 loss"), "{err}");
    assert!(err.contains("anneal") && err.contains("lr"), "{err}");
    let csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("iteration,total,basic,anneal_weight,learning_rate\n0,"));
    let ck = burstforge::ckptfile::load(&out.join("final.bfck")).unwrap();
    assert_eq!(ck.meta("iteration"), Some("3"));
    assert_eq!(ck.meta("model"), Some("6"));
    let m = manifest(&out.join("manifest.txt"));
    assert_eq!(m.seed, 4);
    assert!(m.config.contains("seed = 4\n"));
    assert!(m.code_version.starts_with("burstforge "));
    assert_eq!(m.inputs.len(), 1);
}

#[test]
fn manifest_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tiny_config(tmp.path());
    let first = tmp.path().join("first");
    let o = run(&[&"train", &conf, &"--model", &"3", &"--out", &first, &"--seed", &"11"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let replay = tmp.path().join("replay.conf");
    std::fs::write(&replay, manifest(&first.join("manifest.txt")).config).unwrap();
    let second = tmp.path().join("second");
    let o = run(&[&"train", &replay, &"--out", &second]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(first.join("final.bfck")).unwrap(), std::fs::read(second.join("final.bfck")).unwrap());
}

#[test]
fn seed_env_matches_seed_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tiny_config(tmp.path());
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(run(&[&"train", &conf, &"--out", &a, &"--seed", &"21"]).status.success());
    let o = bin().args([&"train" as &dyn AsRef<std::ffi::OsStr>, &conf, &"--out", &b]).env("BURSTFORGE_SEED", "21").output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run(&[&"train", &conf, &"--out", &c, &"--seed", &"22"]).status.success());
    let read = |d: &PathBuf| std::fs::read(d.join("final.bfck")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn malformed_config_reports_line_and_field() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("bad.conf");
    std::fs::write(&conf, "iterations = 2\nlearning_rate = fast\n").unwrap();
    let o = run(&[&"train", &conf, &"--out", &tmp.path().join("o")]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.conf:2: field `learning_rate`"), "{err}");

    let o = run(&[&"train", &tmp.path().join("missing.conf"), &"--out", &tmp.path().join("o")]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

fn trained_checkpoint(dir: &Path) -> PathBuf {
    let conf = tiny_config(dir);
    let out = dir.join("model");
    let o = run(&[&"train", &conf, &"--iterations", &"1", &"--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("final.bfck")
}

fn write_burst(dir: &Path, frames: usize, channels: usize, h: usize, w: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for f in 0..frames {
        let planes: Vec<_> = (0..channels)
            .map(|c| Tensor::from_fn(&[h, w], |i| ((i + 3 * f + 5 * c) % 11) as f64 / 11.0))
            .collect();
        write_png16(&dir.join(format!("frame_{f}.png")), &planes, None).unwrap();
    }
}

#[test]
fn denoise_grayscale_and_rgb() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(tmp.path());

    let gray = tmp.path().join("gray");
    write_burst(&gray, 2, 1, 13, 9);
    let out = tmp.path().join("out/gray.png");
    let o = run(&[&"denoise", &ckpt, &gray, &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let img = burstforge::imageio::read_channels(&out).unwrap();
    assert_eq!((img.len(), img[0].shape()), (1, &[13usize, 9][..]));
    assert!(manifest(&tmp.path().join("out/gray.png.manifest.txt")).config.contains("network_runs = 1"));

    let rgb = tmp.path().join("rgb");
    write_burst(&rgb, 2, 3, 10, 12);
    let out = tmp.path().join("rgb.png");
    let o = run(&[&"denoise", &ckpt, &rgb, &out, &"--color-mode", &"per-channel", &"--gain", &"2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(burstforge::imageio::read_channels(&out).unwrap().len(), 3);
    let m = manifest(&tmp.path().join("rgb.png.manifest.txt"));
    assert!(m.config.contains("network_runs = 3"));
    assert_eq!(m.inputs.len(), 3);

    let out = tmp.path().join("rgb_gray.png");
    let o = run(&[&"denoise", &ckpt, &rgb, &out, &"--color-mode", &"gray"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(burstforge::imageio::read_channels(&out).unwrap().len(), 1);
}

#[test]
fn denoise_missing_frame_names_expected_count() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(tmp.path());
    let burst = tmp.path().join("short");
    write_burst(&burst, 1, 1, 8, 8);
    let o = run(&[&"denoise", &ckpt, &burst, &tmp.path().join("x.png")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("expects N = 2 frames, found 1"), "{}", stderr(&o));
}

#[test]
fn eval_two_gain_table_with_reference_row() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(tmp.path());
    let ds = tmp.path().join("ds");
    let o = run(&[&"synth", &"--charts", &"--out", &ds, &"--n", &"2", &"--count", &"2", &"--patch", &"64"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut outputs = Vec::new();
    for name in ["r1", "r2"] {
        let out = tmp.path().join(name);
        let o = run(&[&"eval", &ckpt, &ds, &"--gains", &"1,4", &"--out", &out]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("Reference frame"));
        outputs.push(std::fs::read_to_string(out.join("report.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let rows: Vec<&str> = outputs[0].lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("Reference frame,Gain 1,"));
    assert!(rows[3].starts_with("Model 6,Gain 4,"));

    let wrong = tmp.path().join("wrong");
    assert!(run(&[&"synth", &"--charts", &"--out", &wrong, &"--n", &"3", &"--count", &"1", &"--patch", &"64"]).status.success());
    let o = run(&[&"eval", &ckpt, &wrong]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("expects N = 2"));
}

#[test]
fn ablate_reports_one_row_per_model() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tiny_config(tmp.path());
    let val = tmp.path().join("val");
    assert!(run(&[&"synth", &"--charts", &"--out", &val, &"--n", &"2", &"--count", &"2", &"--patch", &"64"]).status.success());
    let out = tmp.path().join("abl");
    let o = run(&[&"ablate", &conf, &"--models", &"1,6", &"--validation", &val, &"--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["Reference frame", "Model 1", "Model 6"]);
    for id in [1, 6] {
        assert!(out.join(format!("model_{id}.bfck")).exists());
        let curve = std::fs::read_to_string(out.join(format!("model_{id}_loss.csv"))).unwrap();
        assert_eq!(curve.lines().count(), 4);
    }
    assert!(manifest(&out.join("manifest.txt")).config.contains("models = 1,6"));
}

#[test]
fn help_exits_zero_and_unknown_command_exits_two() {
    assert_eq!(run(&[&"--help"]).status.code(), Some(0));
    assert_eq!(run(&[&"frobnicate"]).status.code(), Some(2));
}
