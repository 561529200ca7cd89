//! Command-line surface.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime or data
//! error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use burstforge_core::burstgen::{synthesize_burst, NoiseLevel, OffsetMode, SynthSample, LARGE_OFFSET};
use burstforge_core::metrics::{Domain, EvalReport};
use burstforge_core::net::{build_ablation, KpnNet, NetConfig};
use burstforge_core::objective::DEFAULT_GAMMA;
use burstforge_core::train::{
    chart_samples, evaluate_params, evaluate_reference, run_ablation, DataSource, LossRecord, TrainConfig, Trainer,
};
use burstforge_core::Tensor;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundle::{read_dataset, write_dataset};
use crate::ckptfile::{self, CHECKPOINT_EXTENSION};
use crate::config::{apply_train, render_train, ConfigFile, TrainSettings};
use crate::error::{Error, Result, EXIT_USAGE};
use crate::eval::{evaluate, REFERENCE_ROW};
use crate::gain::{parse_gain, parse_gains};
use crate::imageio::{list_images, read_channels, read_gray, to_gray, write_png16};
use crate::inference::denoise_plane;
use crate::manifest::{RunManifest, MANIFEST_NAME};

/// Number of generated validation bursts for `ablate`.
pub const VALIDATION_COUNT: usize = 100;
const VALIDATION_SALT: u64 = 0x7661_6c69_6461_7465;

#[derive(Debug, Parser)]
#[command(name = "burstforge", version, about = "Kernel-prediction burst denoising")]
pub struct Cli {
    /// Master seed. Overrides any seed in a config file.
    #[arg(long, global = true, env = "BURSTFORGE_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic bursts into a dataset directory.
    Synth(SynthArgs),
    /// Train one network.
    Train(TrainArgs),
    /// Train several ablation models on identical data and compare them.
    Ablate(AblateArgs),
    /// Denoise a directory of burst frames into one image.
    Denoise(DenoiseArgs),
    /// Score a checkpoint on a dataset at several gains.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OffsetArg {
    PerFrame,
    PerBurst,
}

impl From<OffsetArg> for OffsetMode {
    fn from(a: OffsetArg) -> Self {
        match a {
            OffsetArg::PerFrame => OffsetMode::PerFrame,
            OffsetArg::PerBurst => OffsetMode::PerBurst,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    Gamma,
    Linear,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Gamma => Domain::Gamma,
            DomainArg::Linear => Domain::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ColorMode {
    /// Colour input is averaged to one plane.
    Gray,
    /// Each colour plane is denoised on its own and recombined.
    PerChannel,
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false)]
pub struct SourceArgs {
    /// Directory of linear grayscale or colour source images.
    #[arg(long, group = "source")]
    pub corpus: Option<PathBuf>,
    /// Use procedural test charts.
    #[arg(long, group = "source")]
    pub charts: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// 1..4 or custom:SIGMA_R:SIGMA_S; omitted draws from the training range.
    #[arg(long)]
    pub gain: Option<String>,
    /// Frames per burst.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Crop size before 4x downsampling.
    #[arg(long, default_value_t = burstforge_core::burstgen::DEFAULT_PATCH)]
    pub patch: usize,
    #[arg(long, value_enum, default_value_t = OffsetArg::PerFrame)]
    pub offset_mode: OffsetArg,
}

#[derive(Debug, Args)]
pub struct TrainSetup {
    /// Config file applied on top of the profile.
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Source images; overrides `corpus` in the config.
    #[arg(long, conflicts_with = "dataset")]
    pub corpus: Option<PathBuf>,
    /// Train on the stored bursts of a dataset directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Print a progress line every this many iterations.
    #[arg(long, default_value_t = 50)]
    pub log_every: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub setup: TrainSetup,
    /// Ablation model 1..6.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
    pub model: Option<u8>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub setup: TrainSetup,
    /// Comma-separated model ids.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6",
          value_parser = clap::value_parser!(u8).range(1..=6))]
    pub models: Vec<u8>,
    /// Stored validation bursts; by default 100 are generated from the seed.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DomainArg::Gamma)]
    pub domain: DomainArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    pub checkpoint: PathBuf,
    /// Directory of frames; the first in name order is the reference.
    pub burst_dir: PathBuf,
    /// Output 16-bit PNG, gamma corrected.
    pub out_image: PathBuf,
    #[arg(long, value_enum, default_value_t = ColorMode::PerChannel)]
    pub color_mode: ColorMode,
    /// Noise level used for the noise map: 1..4 or custom:SIGMA_R:SIGMA_S.
    #[arg(long, default_value = "1")]
    pub gain: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    /// Comma-separated gains: 1..4 or custom:SIGMA_R:SIGMA_S.
    #[arg(long, default_value = "1,2,3,4")]
    pub gains: String,
    #[arg(long, value_enum, default_value_t = DomainArg::Gamma, conflicts_with = "linear")]
    pub domain: DomainArg,
    /// Same as `--domain linear`.
    #[arg(long)]
    pub linear: bool,
    /// Row label; defaults to the model id.
    #[arg(long)]
    pub label: Option<String>,
    /// Directory for report.txt, report.csv and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a, cli.seed.unwrap_or(0)),
        Command::Train(a) => train(&a, cli.seed),
        Command::Ablate(a) => ablate(&a, cli.seed),
        Command::Denoise(a) => denoise(&a),
        Command::Eval(a) => eval(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Grayscale corpus images with their paths.
fn load_corpus(dir: &Path) -> Result<Vec<(PathBuf, Tensor<f64>)>> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no images found", dir.display())));
    }
    files
        .into_iter()
        .map(|p| {
            let img = read_gray(&p)?;
            Ok((p, img))
        })
        .collect()
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let noise = match &a.gain {
        Some(g) => NoiseLevel::Fixed(parse_gain(g)?.preset),
        None => NoiseLevel::TrainingRange,
    };
    if a.n == 0 {
        return Err(Error::Usage("--n must be at least 1".into()));
    }
    let mode = OffsetMode::from(a.offset_mode);
    let mut manifest = RunManifest::start("synth", seed);
    let samples = match &a.source.corpus {
        None => chart_samples(a.count, a.n, a.patch, noise, mode, seed)?,
        Some(dir) => {
            let corpus = load_corpus(dir)?;
            for (p, _) in &corpus {
                manifest.add_input(p)?;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..a.count)
                .map(|_| {
                    let s: u64 = rng.random();
                    let (path, img) = &corpus[rng.random_range(0..corpus.len())];
                    synthesize_burst(img, a.n, noise, a.patch, mode, s)
                        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    write_dataset(&a.out, &samples)?;
    let mut cfg = String::new();
    match &a.source.corpus {
        Some(c) => writeln!(cfg, "corpus = {}", c.display()),
        None => writeln!(cfg, "source = charts"),
    }
    .ok();
    let _ = writeln!(cfg, "gain = {}", a.gain.as_deref().unwrap_or("training-range"));
    let _ = writeln!(cfg, "n = {}", a.n);
    let _ = writeln!(cfg, "count = {}", a.count);
    let _ = writeln!(cfg, "patch = {}", a.patch);
    let _ = writeln!(cfg, "offset_mode = {}", a.offset_mode.to_possible_value().expect("named").get_name());
    let _ = writeln!(cfg, "seed = {seed}");
    manifest.config = cfg;
    manifest.finish(&a.out.join(MANIFEST_NAME))?;
    println!("wrote {} bursts to {}", samples.len(), a.out.display());
    Ok(())
}

/// Profile, then config file, then flags. `model` only sets the module switches.
fn resolve_settings(setup: &TrainSetup, model: Option<u8>, seed: Option<u64>) -> Result<TrainSettings> {
    let id = model.unwrap_or(6);
    let mut settings = TrainSettings {
        train: match setup.profile {
            Profile::Desk => TrainConfig::desk(id)?,
            Profile::Paper => TrainConfig::paper(id)?,
        },
        corpus: None,
    };
    if let Some(path) = &setup.config {
        let file = match ConfigFile::load(path) {
            Err(Error::Io { path, source }) => return Err(Error::Usage(format!("{}: {source}", path.display()))),
            other => other?,
        };
        apply_train(&file, &mut settings)?;
    }
    if let Some(id) = model {
        let s = build_ablation(id)?;
        let net = &mut settings.train.net;
        (net.channel_attention, net.spatial_attention, net.residual_branch) =
            (s.channel_attention, s.spatial_attention, s.residual_branch);
    }
    if let Some(n) = setup.iterations {
        settings.train.iterations = n;
    }
    if let Some(s) = seed {
        settings.train.seed = s;
    }
    if let Some(c) = &setup.corpus {
        settings.corpus = Some(c.clone());
    }
    if settings.train.iterations == 0 {
        return Err(Error::Usage("iterations must be at least 1".into()));
    }
    settings.train.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(settings)
}

fn load_data(setup: &TrainSetup, settings: &TrainSettings, manifest: &mut RunManifest) -> Result<DataSource> {
    if let Some(dir) = &setup.dataset {
        for f in crate::bundle::dataset_files(dir)? {
            manifest.add_input(&f)?;
        }
        let samples = read_dataset(dir)?;
        if samples.is_empty() {
            return Err(Error::Data(format!("{}: dataset is empty", dir.display())));
        }
        return Ok(DataSource::Cached(samples));
    }
    match &settings.corpus {
        Some(dir) => {
            let corpus = load_corpus(dir)?;
            let need = settings.train.patch + 2 * LARGE_OFFSET as usize;
            for (p, img) in &corpus {
                manifest.add_input(p)?;
                let (h, w) = img.hw();
                if h < need || w < need {
                    return Err(Error::Data(format!("{}: {h}x{w} is smaller than {need}x{need}", p.display())));
                }
            }
            Ok(DataSource::Images(corpus.into_iter().map(|(_, t)| t).collect()))
        }
        None => Ok(DataSource::Charts),
    }
}

fn loss_csv(log: &[LossRecord]) -> String {
    let mut s = String::from("iteration,total,basic,anneal_weight,learning_rate\n");
    for r in log {
        let _ = writeln!(s, "{},{},{},{},{}", r.iteration, r.total, r.basic, r.anneal_weight, r.learning_rate);
    }
    s
}

fn progress(prefix: &str, r: &LossRecord, total: u64) {
    eprintln!(
        "{prefix}iter {}/{total} loss {:.6} basic {:.6} anneal {:.4e} lr {:.3e}",
        r.iteration + 1,
        r.total,
        r.basic,
        r.anneal_weight,
        r.learning_rate
    );
    let _ = std::io::stderr().flush();
}

fn checkpoint_meta(t: &TrainConfig, iteration: u64) -> Vec<(&'static str, String)> {
    let mut meta = vec![
        ("iteration", iteration.to_string()),
        ("seed", t.seed.to_string()),
        ("iterations_per_epoch", t.iterations_per_epoch.to_string()),
    ];
    if let Some(id) = t.net.model_id() {
        meta.push(("model", id.to_string()));
    }
    meta
}

fn train(a: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let settings = resolve_settings(&a.setup, a.model, seed)?;
    let mut manifest = RunManifest::start("train", settings.train.seed);
    if let Some(c) = &a.setup.config {
        manifest.add_input(c)?;
    }
    let data = load_data(&a.setup, &settings, &mut manifest)?;
    create_dir(&a.out)?;
    let t = &settings.train;
    let mut trainer = Trainer::new(t.clone())?;
    let log_every = a.setup.log_every.max(1);
    let out = &a.out;
    let result = trainer.run(&data, |tr, r| {
        if (r.iteration + 1) % log_every == 0 || r.iteration + 1 == t.iterations {
            progress("", r, t.iterations);
        }
        if tr.checkpoint_due(r) && r.iteration + 1 != t.iterations {
            let path = out.join(format!("ckpt_{:06}.{CHECKPOINT_EXTENSION}", r.iteration + 1));
            ckptfile::save(&path, &t.net, tr.params(), &checkpoint_meta(t, r.iteration + 1))
                .map_err(|e| burstforge_core::Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    });
    write_file(&out.join("loss.csv"), &loss_csv(trainer.log()))?;
    result?;
    let final_path = out.join(format!("final.{CHECKPOINT_EXTENSION}"));
    ckptfile::save(&final_path, &t.net, trainer.params(), &checkpoint_meta(t, trainer.iteration()))?;
    manifest.config = render_train(&settings);
    manifest.finish(&out.join(MANIFEST_NAME))?;
    println!("wrote {}", final_path.display());
    Ok(())
}

fn ablate(a: &AblateArgs, seed: Option<u64>) -> Result<()> {
    if a.models.is_empty() {
        return Err(Error::Usage("--models is empty".into()));
    }
    let settings = resolve_settings(&a.setup, None, seed)?;
    let base = &settings.train;
    let mut manifest = RunManifest::start("ablate", base.seed);
    if let Some(c) = &a.setup.config {
        manifest.add_input(c)?;
    }
    let data = load_data(&a.setup, &settings, &mut manifest)?;
    let n = base.net.burst_len;
    let validation: Vec<SynthSample> = match &a.validation {
        Some(dir) => {
            for f in crate::bundle::dataset_files(dir)? {
                manifest.add_input(&f)?;
            }
            read_dataset(dir)?
        }
        None => chart_samples(
            VALIDATION_COUNT,
            n,
            base.patch,
            NoiseLevel::TrainingRange,
            base.offset_mode,
            base.seed ^ VALIDATION_SALT,
        )?,
    };
    if validation.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    if let Some(s) = validation.iter().find(|s| s.burst_len() != n) {
        return Err(Error::Data(format!("validation bursts have {} frames, training uses N = {n}", s.burst_len())));
    }
    create_dir(&a.out)?;
    let domain = Domain::from(a.domain);
    let mut logs: Vec<(u8, Vec<LossRecord>)> = a.models.iter().map(|&id| (id, Vec::new())).collect();
    let log_every = a.setup.log_every.max(1);
    let results = run_ablation(&a.models, base, &data, &validation, |id, r| {
        if (r.iteration + 1) % log_every == 0 || r.iteration + 1 == base.iterations {
            progress(&format!("model {id} "), r, base.iterations);
        }
        if let Some((_, log)) = logs.iter_mut().find(|(m, log)| *m == id && log.len() as u64 == r.iteration) {
            log.push(*r);
        }
    })?;
    let mut report = EvalReport::new(vec!["Validation".into()]);
    report.push(REFERENCE_ROW, vec![evaluate_reference(&validation, domain)?])?;
    for (r, (_, log)) in results.iter().zip(&logs) {
        let net = NetConfig {
            ..switched(base, r.model_id)?
        };
        let scores = match domain {
            Domain::Gamma => r.validation,
            Domain::Linear => evaluate_params(&KpnNet::new(net.clone())?, &r.params, &validation, domain)?,
        };
        report.push(&format!("Model {}", r.model_id), vec![scores])?;
        let meta = checkpoint_meta(&TrainConfig { net: net.clone(), ..base.clone() }, base.iterations);
        ckptfile::save(&a.out.join(format!("model_{}.{CHECKPOINT_EXTENSION}", r.model_id)), &net, &r.params, &meta)?;
        write_file(&a.out.join(format!("model_{}_loss.csv", r.model_id)), &loss_csv(log))?;
    }
    let table = report.render_table();
    write_file(&a.out.join("report.txt"), &table)?;
    write_file(&a.out.join("report.csv"), &report.to_csv())?;
    let mut cfg = render_train(&settings);
    let ids: Vec<String> = a.models.iter().map(u8::to_string).collect();
    let _ = writeln!(cfg, "models = {}", ids.join(","));
    let _ = writeln!(cfg, "domain = {}", a.domain.to_possible_value().expect("named").get_name());
    if a.validation.is_none() {
        let _ = writeln!(cfg, "validation = generated {VALIDATION_COUNT}");
    }
    manifest.config = cfg;
    manifest.finish(&a.out.join(MANIFEST_NAME))?;
    print!("{table}");
    Ok(())
}

fn switched(base: &TrainConfig, id: u8) -> Result<NetConfig> {
    let s = build_ablation(id)?;
    Ok(NetConfig {
        channel_attention: s.channel_attention,
        spatial_attention: s.spatial_attention,
        residual_branch: s.residual_branch,
        ..base.net.clone()
    })
}

fn manifest_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.txt");
    out.with_file_name(name)
}

fn denoise(a: &DenoiseArgs) -> Result<()> {
    let gain = parse_gain(&a.gain)?;
    let ckpt = ckptfile::load(&a.checkpoint)?;
    let net = KpnNet::new(ckpt.net.clone())?;
    let n = ckpt.net.burst_len;
    let files = list_images(&a.burst_dir)?;
    if files.len() != n {
        return Err(Error::Usage(format!(
            "{}: checkpoint expects N = {n} frames, found {}",
            a.burst_dir.display(),
            files.len()
        )));
    }
    let frames = files.iter().map(|p| read_channels(p)).collect::<Result<Vec<_>>>()?;
    let channels = frames[0].len();
    if let Some((p, _)) = files.iter().zip(&frames).find(|(_, f)| f.len() != channels) {
        return Err(Error::Data(format!("{}: channel count differs from the reference frame", p.display())));
    }
    let planes: Vec<Vec<Tensor<f64>>> = match a.color_mode {
        ColorMode::Gray => vec![frames.iter().map(|f| to_gray(f)).collect()],
        ColorMode::PerChannel => (0..channels).map(|c| frames.iter().map(|f| f[c].clone()).collect()).collect(),
    };
    let out = planes
        .iter()
        .map(|p| denoise_plane(&net, &ckpt.params, p, &gain.preset))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = a.out_image.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_png16(&a.out_image, &out, Some(DEFAULT_GAMMA))?;
    let mut manifest = RunManifest::start("denoise", 0);
    manifest.add_input(&a.checkpoint)?;
    for f in &files {
        manifest.add_input(f)?;
    }
    let mut cfg = String::new();
    let _ = writeln!(cfg, "gain = {}", a.gain);
    let _ = writeln!(cfg, "sigma_r = {}", gain.preset.sigma_r);
    let _ = writeln!(cfg, "sigma_s = {}", gain.preset.sigma_s);
    let _ = writeln!(cfg, "color_mode = {}", a.color_mode.to_possible_value().expect("named").get_name());
    let _ = writeln!(cfg, "network_runs = {}", out.len());
    manifest.config = cfg;
    manifest.finish(&manifest_beside(&a.out_image))?;
    let (h, w) = out[0].hw();
    println!("wrote {} ({h}x{w}, {} network run(s))", a.out_image.display(), out.len());
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let gains = parse_gains(&a.gains)?;
    let domain = if a.linear { Domain::Linear } else { Domain::from(a.domain) };
    let ckpt = ckptfile::load(&a.checkpoint)?;
    let net = KpnNet::new(ckpt.net.clone())?;
    let samples = read_dataset(&a.dataset)?;
    let label = a.label.clone().unwrap_or_else(|| match ckpt.net.model_id() {
        Some(id) => format!("Model {id}"),
        None => "KPN".into(),
    });
    let report = evaluate(&net, &ckpt.params, &label, &samples, &gains, domain)?;
    let table = report.render_table();
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_file(&out.join("report.txt"), &table)?;
        write_file(&out.join("report.csv"), &report.to_csv())?;
        let mut manifest = RunManifest::start("eval", 0);
        manifest.add_input(&a.checkpoint)?;
        for f in crate::bundle::dataset_files(&a.dataset)? {
            manifest.add_input(&f)?;
        }
        let mut cfg = String::new();
        let _ = writeln!(cfg, "gains = {}", a.gains);
        let _ = writeln!(cfg, "domain = {}", if domain == Domain::Linear { "linear" } else { "gamma" });
        let _ = writeln!(cfg, "label = {label}");
        manifest.config = cfg;
        manifest.finish(&out.join(MANIFEST_NAME))?;
    }
    print!("{table}");
    Ok(())
}
