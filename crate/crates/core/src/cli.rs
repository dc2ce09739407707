//! Command-line front end: corpus generation, training, evaluation,
//! single-instance localization and gradient self-checks.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{generate_corpus, load_corpus, CorpusConfig, CorpusManifest, Split};
use crate::dataset::{prepare, Sample};
use crate::dsp::{log_mel_spectrogram, read_waveform, LogMelConfig};
use crate::encoders::{load_checkpoint, save_checkpoint, Checkpoint, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_corpus, localize, EvalConfig, EvalResult};
use crate::gradcheck::{gradcheck, DEFAULT_SEEDS, TOLERANCE};
use crate::json::{read_json, write_json};
use crate::localization::{export_heatmap, threshold_region};
use crate::numcore::avic::read_tensor;
use crate::train::{
    train, EpochRecord, Resume, Stage, TrainConfig, TrainInputs, TrainLog, Variant,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const EVAL_JSON: &str = "eval.json";
pub const CURVE_CSV: &str = "curve.csv";
pub const HEATMAP_DIR: &str = "heatmaps";
pub const EPOCH_DIR: &str = "epochs";

#[derive(Debug, Parser)]
#[command(
    name = "avloc",
    version,
    about = "Unsupervised sound source localization"
)]
struct Cli {
    /// Worker threads for parallel evaluation; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    threads: u16,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic audio-visual corpus.
    GenCorpus(GenCorpusArgs),
    /// Train one ablation variant.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Localize the sound source of a single image / audio pair.
    Localize(LocalizeArgs),
    /// Compare every analytic gradient against central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GenCorpusArgs {
    /// Corpus config JSON; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Run config JSON with optional `train`, `encoder`, `log_mel`, `eval` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "full", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    delta_v: Option<f64>,
    #[arg(long)]
    delta_a: Option<f64>,
    /// Continue from a checkpoint directory written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also write a resumable checkpoint every N epochs under `epochs/`.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Eval config JSON; defaults to the one recorded with the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write one PGM heatmap per test instance.
    #[arg(long)]
    export_heatmaps: bool,
}

#[derive(Debug, Args)]
struct LocalizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// AVIC image tensor `[H, W, C]`.
    #[arg(long)]
    image: PathBuf,
    /// Raw float32 waveform with its JSON sidecar.
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Region threshold; defaults to the checkpoint's `delta_v`.
    #[arg(long, allow_negative_numbers = true)]
    delta_v: Option<f64>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_SEEDS, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    seeds: usize,
    /// Double one analytic gradient coordinate per component before checking.
    #[arg(long)]
    corrupt: bool,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

/// Every section of a training run's configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub log_mel: LogMelConfig,
    pub eval: EvalConfig,
}

/// Resolved configuration written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub corpus: PathBuf,
    pub variant: Variant,
    pub resumed_from: Option<PathBuf>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub variant: Variant,
    pub contrastive_evals: u64,
    pub iterative_evals: u64,
    pub records: Vec<EpochRecord>,
}

impl TrainMetrics {
    fn new(variant: Variant, log: &TrainLog) -> Self {
        Self {
            variant,
            contrastive_evals: log.contrastive_evals(),
            iterative_evals: log.iterative_evals(),
            records: log.records.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub corpus: PathBuf,
    pub checkpoint: PathBuf,
    pub checkpoint_epoch: usize,
    pub log_mel: LogMelConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeRecord {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    pub audio: PathBuf,
    pub delta_v: f64,
    pub log_mel: LogMelConfig,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads as usize)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", cli.threads);
            return EXIT_FAILURE;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", chain(&e));
            EXIT_FAILURE
        }
    }
}

fn chain(e: &dyn std::error::Error) -> String {
    let mut s = e.to_string();
    let mut cur = e.source();
    while let Some(inner) = cur {
        let msg = inner.to_string();
        if !s.contains(&msg) {
            s.push_str(": ");
            s.push_str(&msg);
        }
        cur = inner.source();
    }
    s
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Localize(a) => localize_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn read_or_default<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

/// A sectioned `RunConfig`, or a bare `TrainConfig` with the other sections
/// at their defaults.
fn read_run_config(path: &Path) -> Result<RunConfig> {
    let sectioned = read_json::<RunConfig>(path);
    if sectioned.is_ok() {
        return sectioned;
    }
    match read_json::<TrainConfig>(path) {
        Ok(train) => Ok(RunConfig {
            encoder: EncoderConfig {
                renorm_pooled: train.renorm_pooled,
                ..EncoderConfig::default()
            },
            train,
            ..RunConfig::default()
        }),
        Err(_) => sectioned,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn gen_corpus(a: GenCorpusArgs) -> Result<i32> {
    let cfg: CorpusConfig = read_or_default(a.config.as_deref())?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let (train, test) = generate_corpus(&cfg, seed, &a.out)?;
    for m in [&train, &test] {
        println!("{}", manifest_summary(m));
    }
    println!("wrote {}", a.out.display());
    Ok(EXIT_OK)
}

fn manifest_summary(m: &CorpusManifest) -> String {
    format!(
        "{}: {} instances, {}x{}x{} images, {} Hz x {} s audio, {} classes, seed {}",
        m.split.name(),
        m.num_instances,
        m.height,
        m.width,
        m.channels,
        m.sample_rate,
        m.clip_seconds,
        m.num_classes,
        m.seed
    )
}

fn load_samples(
    corpus: &Path,
    split: Split,
    log_mel: &LogMelConfig,
) -> Result<(CorpusManifest, Vec<Sample>)> {
    let (manifest, instances) = load_corpus(corpus, split)?;
    let samples = prepare(&instances, log_mel)?;
    Ok((manifest, samples))
}

fn check_compatible(
    manifest: &CorpusManifest,
    enc: &EncoderConfig,
    log_mel: &LogMelConfig,
) -> Result<()> {
    let corpus = (manifest.height, manifest.width, manifest.channels);
    let model = (enc.image_height, enc.image_width, enc.channels);
    if corpus != model {
        return Err(Error::InvalidArgument(format!(
            "corpus images are {}x{}x{} but the encoder expects {}x{}x{}",
            corpus.0, corpus.1, corpus.2, model.0, model.1, model.2
        )));
    }
    if log_mel.mel_bins != enc.mel_bins {
        return Err(Error::InvalidArgument(format!(
            "log_mel.mel_bins = {} but encoder.mel_bins = {}",
            log_mel.mel_bins, enc.mel_bins
        )));
    }
    Ok(())
}

fn write_checkpoint(
    dir: &Path,
    record: &TrainRecord,
    params: &crate::numcore::ParamVector,
    log: &TrainLog,
) -> Result<()> {
    let epoch = log.records.last().map_or(0, |r| r.epoch);
    save_checkpoint(
        dir,
        &Checkpoint {
            params: params.clone(),
            encoder: record.config.encoder,
            epoch,
        },
    )?;
    write_json(&dir.join(CONFIG_FILE), record)?;
    write_json(
        &dir.join(METRICS_JSON),
        &TrainMetrics::new(record.variant, log),
    )?;
    write_text(&dir.join(METRICS_CSV), &log.csv())
}

fn train_cmd(a: TrainArgs) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(path) => read_run_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(dv) = a.delta_v {
        cfg.train.delta_v = dv;
    }
    if let Some(da) = a.delta_a {
        cfg.train.delta_a = da;
    }
    cfg.train = a.variant.apply(&cfg.train);
    cfg.train.validate()?;
    let encoder = Encoder::new(cfg.encoder)?;

    let resume = match &a.resume {
        None => None,
        Some(dir) => {
            let prior: TrainRecord = read_json(&dir.join(CONFIG_FILE))?;
            if prior.config != cfg || prior.variant != a.variant {
                return Err(Error::InvalidArgument(format!(
                    "{} was trained with a different configuration or variant",
                    dir.display()
                )));
            }
            let ckpt = load_checkpoint(dir)?;
            let metrics: TrainMetrics = read_json(&dir.join(METRICS_JSON))?;
            let log = TrainLog {
                records: metrics.records,
            };
            if log.records.last().map_or(0, |r| r.epoch) != ckpt.epoch {
                return Err(Error::format(
                    dir.join(METRICS_JSON),
                    "metrics disagree with the checkpoint epoch",
                ));
            }
            Some(Resume {
                params: ckpt.params,
                epoch: ckpt.epoch,
                log,
            })
        }
    };

    let (train_manifest, train_set) = load_samples(&a.corpus, Split::Train, &cfg.log_mel)?;
    check_compatible(&train_manifest, &cfg.encoder, &cfg.log_mel)?;
    let (_, test_set) = load_samples(&a.corpus, Split::Test, &cfg.log_mel)?;

    create_dir(&a.out)?;
    let record = TrainRecord {
        corpus: a.corpus.clone(),
        variant: a.variant,
        resumed_from: a.resume.clone(),
        config: cfg,
    };
    write_json(&a.out.join(CONFIG_FILE), &record)?;

    let inputs = TrainInputs {
        encoder: &encoder,
        train: &train_set,
        test: Some(&test_set),
        eval: cfg.eval,
    };
    let total = cfg.train.total_epochs;
    let outcome = train(&inputs, &cfg.train, resume, |r, params, log| {
        println!(
            "epoch {:>3}/{total} {:<11} loss {:.4} cIoU@0.5 {:5.1} AUC {:.3}",
            r.epoch,
            match r.stage {
                Stage::Contrastive => "contrastive",
                Stage::Iterative => "iterative",
            },
            r.mean_loss,
            r.ciou_at_0_5.unwrap_or(f64::NAN),
            r.auc.unwrap_or(f64::NAN),
        );
        if a.checkpoint_every > 0 && r.epoch % a.checkpoint_every == 0 && r.epoch < total {
            let dir = a.out.join(EPOCH_DIR).join(format!("epoch-{:03}", r.epoch));
            write_checkpoint(&dir, &record, params, log)?;
        }
        Ok(())
    })?;
    write_checkpoint(&a.out, &record, &outcome.params, &outcome.log)?;
    println!(
        "{} loss evaluations: {} contrastive, {} iterative",
        a.variant,
        outcome.log.contrastive_evals(),
        outcome.log.iterative_evals()
    );
    println!("wrote {}", a.out.display());
    Ok(EXIT_OK)
}

fn eval_cmd(a: EvalArgs) -> Result<i32> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let trained: TrainRecord = read_json(&a.checkpoint.join(CONFIG_FILE))?;
    let eval_cfg = match &a.config {
        Some(p) => read_json(p)?,
        None => trained.config.eval,
    };
    eval_cfg.validate()?;
    let log_mel = trained.config.log_mel;
    let (manifest, test_set) = load_samples(&a.corpus, Split::Test, &log_mel)?;
    check_compatible(&manifest, &ckpt.encoder, &log_mel)?;
    let encoder = Encoder::new(ckpt.encoder)?;

    create_dir(&a.out)?;
    write_json(
        &a.out.join(CONFIG_FILE),
        &EvalRecord {
            corpus: a.corpus.clone(),
            checkpoint: a.checkpoint.clone(),
            checkpoint_epoch: ckpt.epoch,
            log_mel,
            eval: eval_cfg,
        },
    )?;
    let heatmaps = a.export_heatmaps.then(|| a.out.join(HEATMAP_DIR));
    let result: EvalResult = evaluate_corpus(
        &encoder,
        &ckpt.params,
        &test_set,
        &eval_cfg,
        heatmaps.as_deref(),
    )?;
    write_json(&a.out.join(EVAL_JSON), &result)?;
    write_text(&a.out.join(CURVE_CSV), &result.curve_csv())?;
    println!(
        "{} test instances: cIoU@0.5 {:.1}, cIoU@0.3 {:.1}, AUC {:.3}",
        result.scores.len(),
        result.ciou_at_0_5,
        result.ciou_at_0_3,
        result.auc
    );
    println!("wrote {}", a.out.display());
    Ok(EXIT_OK)
}

fn localize_cmd(a: LocalizeArgs) -> Result<i32> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let trained: TrainRecord = read_json(&a.checkpoint.join(CONFIG_FILE))?;
    let enc = ckpt.encoder;
    let delta_v = a.delta_v.unwrap_or(trained.config.train.delta_v);
    let image = read_tensor(&a.image)?;
    let expected = [enc.image_height, enc.image_width, enc.channels];
    if image.shape() != expected {
        let dims = |s: &[usize]| s.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        return Err(Error::format(
            &a.image,
            format!(
                "image is {} but the checkpoint expects {}",
                dims(image.shape()),
                dims(&expected)
            ),
        ));
    }
    let waveform = read_waveform(&a.audio)?;
    let log_mel = trained.config.log_mel;
    let lms = log_mel_spectrogram(&waveform, &log_mel)?;
    let encoder = Encoder::new(enc)?;
    let loc = localize(&encoder, &ckpt.params, &image, &lms)?;
    if loc.normalized.degenerate {
        eprintln!("warning: the response map is constant; the heatmap is all zero and the region is empty");
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    export_heatmap(&loc.heatmap, &a.out)?;
    write_json(
        &a.out.with_extension("json"),
        &LocalizeRecord {
            checkpoint: a.checkpoint.clone(),
            image: a.image.clone(),
            audio: a.audio.clone(),
            delta_v,
            log_mel,
        },
    )?;
    let region = threshold_region(&loc.normalized, delta_v);
    let flat = region.flat_indices(enc.grid_cols);
    let list: Vec<String> = flat.iter().map(usize::to_string).collect();
    println!(
        "sounding region (> {delta_v}): {} of {} patches [{}]",
        flat.len(),
        enc.num_patches(),
        list.join(" ")
    );
    println!("wrote {}", a.out.display());
    Ok(EXIT_OK)
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<i32> {
    let start = std::time::Instant::now();
    let reports = gradcheck(a.seed, a.seeds, a.corrupt)?;
    let mut ok = true;
    for r in &reports {
        ok &= r.passed();
        println!(
            "{:<26} max relative error {:.3e} over {} seeds  {}",
            r.name,
            r.max_rel_error,
            r.seeds,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    println!(
        "{} (tolerance {TOLERANCE:e}, {:.1} s)",
        if ok {
            "all gradients agree"
        } else {
            "gradient mismatch"
        },
        start.elapsed().as_secs_f64()
    );
    Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["avloc", "gen-corpus"]), EXIT_USAGE);
        assert_eq!(
            run([
                "avloc",
                "train",
                "--corpus",
                "c",
                "--out",
                "o",
                "--variant",
                "best"
            ]),
            EXIT_USAGE
        );
        assert_eq!(run(["avloc", "--threads", "0", "gradcheck"]), EXIT_USAGE);
        assert_eq!(run(["avloc", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["avloc", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_inputs_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        let out = dir.path().join("out");
        let (m, o) = (missing.to_str().unwrap(), out.to_str().unwrap());
        assert_eq!(
            run([
                "avloc",
                "eval",
                "--corpus",
                m,
                "--checkpoint",
                m,
                "--out",
                o
            ]),
            EXIT_FAILURE
        );
    }

    #[test]
    fn run_config_sections_are_optional() {
        let cfg: RunConfig = serde_json::from_str(r#"{"train": {"tau": 0.2}}"#).unwrap();
        assert_eq!(cfg.train.tau, 0.2);
        assert_eq!(cfg.encoder, EncoderConfig::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
    }

    #[test]
    fn flat_train_config_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let flat = dir.path().join("flat.json");
        fs::write(&flat, r#"{"tau": 0.2, "renorm_pooled": false}"#).unwrap();
        let cfg = read_run_config(&flat).unwrap();
        assert_eq!(cfg.train.tau, 0.2);
        assert!(!cfg.encoder.renorm_pooled);
        let bad = dir.path().join("bad.json");
        fs::write(&bad, r#"{"tua": 0.2}"#).unwrap();
        assert!(read_run_config(&bad).is_err());
    }
}
