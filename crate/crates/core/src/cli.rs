//! The `mimicmap` command line.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 training diverged,
//! 3 a verification (`gradcheck`, `report`) failed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use serde::{Deserialize, Serialize};

use crate::data::wav::read_wav;
use crate::data::{generate_synthetic_corpus, ParallelCorpus, SynthConfig};
use crate::dsp::{archive, BINS, FFT_SIZE, FRAME_LEN, HOP, SAMPLE_RATE};
use crate::dsp::context::{DELTA_WINDOW, SPLICE_CONTEXT};
use crate::error::{Error, Result};
use crate::models::{
    build_classifier_with, build_mapper_with, ClassifierArch, FrozenClassifier, MapperArch, RepresentationTap,
    SpectralClassifier, SpectralMapper,
};
use crate::nn::checkpoint::CheckpointMeta;
use crate::nn::gradcheck::TOLERANCE;
use crate::nn::{mse_loss, Network};
use crate::pipeline::dataset::DEFAULT_HELDOUT_FRACTION;
use crate::pipeline::oracle::gradient_suite;
use crate::pipeline::report::JOINT_IDENTITY_TOLERANCE;
use crate::pipeline::{
    enhance_features, featurize_corpus, pretrain_mapper, train_classifier, train_joint, EpochRecord,
    FeatureCorpus, Stage, StageConfig, TargetMode, TrainReport, Trained,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

pub const CONFIG_FILE: &str = "config.json";

#[derive(Parser, Debug)]
#[command(name = "mimicmap", version, about = "Spectral-mapping speech enhancement with mimic loss")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// pre-softmax or post-softmax
    #[arg(long, global = true)]
    tap: Option<RepresentationTap>,
    /// soft (mimic) or hard (labels)
    #[arg(long, global = true)]
    target_mode: Option<TargetMode>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread cap; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic parallel noisy/clean corpus.
    GenData {
        #[arg(long)]
        utterances: Option<usize>,
    },
    /// Log-magnitude archives and frame labels for a corpus.
    Featurize {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Stage 1: senone classifier on clean features.
    TrainClassifier {
        #[arg(long)]
        features: PathBuf,
    },
    /// Stage 2: noisy → clean mapper with fidelity loss.
    PretrainMapper {
        #[arg(long)]
        features: PathBuf,
        /// Continue from this mapper checkpoint instead of a fresh one.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Stage 3: fidelity + mimic loss against the frozen classifier.
    TrainJoint {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        mapper: PathBuf,
        /// Weight on the fidelity term; 0 trains on mimic loss alone.
        #[arg(long)]
        fidelity_weight: Option<f64>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Enhance the noisy side of a corpus into feature archives.
    Enhance {
        #[arg(long)]
        mapper: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Finite-difference check of every gradient path.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        draws: usize,
    },
    /// Validate a training report: recompute L_JOINT from the logged terms.
    Report {
        /// Directory holding report.jsonl and steps.jsonl.
        run: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Featurize { .. } => "featurize",
            Command::TrainClassifier { .. } => "train-classifier",
            Command::PretrainMapper { .. } => "pretrain-mapper",
            Command::TrainJoint { .. } => "train-joint",
            Command::Enhance { .. } => "enhance",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Report { .. } => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub utterances: usize,
    pub synth: SynthConfig,
    pub classes: usize,
    pub heldout_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            utterances: 120,
            synth: SynthConfig::default(),
            classes: 50,
            heldout_fraction: DEFAULT_HELDOUT_FRACTION,
        }
    }
}

/// Front-end constants, recorded for reproducibility; not configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DspRecord {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub bins: usize,
    pub delta_window: usize,
    pub splice_context: usize,
}

impl Default for DspRecord {
    fn default() -> Self {
        DspRecord {
            sample_rate: SAMPLE_RATE,
            frame_len: FRAME_LEN,
            hop: HOP,
            fft_size: FFT_SIZE,
            bins: BINS,
            delta_window: DELTA_WINDOW,
            splice_context: SPLICE_CONTEXT,
        }
    }
}

/// Everything a run depends on. Stage seeds always follow `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub corpus: CorpusConfig,
    pub mapper: MapperArch,
    pub classifier: ClassifierArch,
    #[serde(deserialize_with = "classifier_stage")]
    pub train_classifier: StageConfig,
    #[serde(deserialize_with = "pretrain_stage")]
    pub pretrain_mapper: StageConfig,
    #[serde(deserialize_with = "joint_stage")]
    pub train_joint: StageConfig,
    #[serde(skip_deserializing)]
    pub dsp: DspRecord,
    /// Subcommand and paths of the run that wrote this file.
    #[serde(skip_deserializing, skip_serializing_if = "Option::is_none")]
    pub invocation: Option<serde_json::Value>,
}

/// A partial stage section fills its gaps from that stage's own defaults,
/// not the generic ones.
fn stage_over_defaults<'de, D: serde::Deserializer<'de>>(stage: Stage, d: D) -> std::result::Result<StageConfig, D::Error> {
    use serde::de::Error as _;
    let given = serde_json::Map::<String, serde_json::Value>::deserialize(d)?;
    let mut merged = match serde_json::to_value(StageConfig::for_stage(stage)).map_err(D::Error::custom)? {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("stage config serializes to an object"),
    };
    merged.extend(given);
    serde_json::from_value(serde_json::Value::Object(merged)).map_err(D::Error::custom)
}

fn classifier_stage<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<StageConfig, D::Error> {
    stage_over_defaults(Stage::TrainClassifier, d)
}

fn pretrain_stage<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<StageConfig, D::Error> {
    stage_over_defaults(Stage::PretrainMapper, d)
}

fn joint_stage<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<StageConfig, D::Error> {
    stage_over_defaults(Stage::TrainJoint, d)
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            corpus: CorpusConfig::default(),
            mapper: MapperArch::default(),
            classifier: ClassifierArch::default(),
            train_classifier: StageConfig::for_stage(Stage::TrainClassifier),
            pretrain_mapper: StageConfig::for_stage(Stage::PretrainMapper),
            train_joint: StageConfig::for_stage(Stage::TrainJoint),
            dsp: DspRecord::default(),
            invocation: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn stage_mut(&mut self, stage: Stage) -> &mut StageConfig {
        match stage {
            Stage::TrainClassifier => &mut self.train_classifier,
            Stage::PretrainMapper => &mut self.pretrain_mapper,
            Stage::TrainJoint => &mut self.train_joint,
        }
    }

    fn apply(&mut self, args: &CommonArgs, stage: Option<Stage>) -> Result<()> {
        if let Some(s) = args.seed {
            self.seed = s;
        }
        if args.threads.is_some() {
            self.threads = args.threads;
        }
        for st in [Stage::TrainClassifier, Stage::PretrainMapper, Stage::TrainJoint] {
            let seed = self.seed;
            let c = self.stage_mut(st);
            c.stage = st;
            c.seed = seed;
        }
        if let Some(a) = args.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::invalid(format!("--alpha must be finite and non-negative, got {a}")));
            }
            self.train_joint.alpha = Some(a);
        }
        if let Some(t) = args.tap {
            self.train_joint.tap = t;
        }
        if let Some(m) = args.target_mode {
            self.train_joint.target_mode = m;
        }
        if let Some(stage) = stage {
            let c = self.stage_mut(stage);
            if let Some(e) = args.epochs {
                c.epochs = e;
            }
            if let Some(b) = args.batch_size {
                if b < 2 {
                    return Err(Error::invalid("--batch-size must be at least 2"));
                }
                c.batch_size = b;
            }
            if let Some(lr) = args.lr {
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(Error::invalid(format!("--lr must be positive, got {lr}")));
                }
                c.optimizer = c.optimizer.clone().with_lr(lr);
            }
        }
        Ok(())
    }
}

/// Parses `args` (including the program name), runs, and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    init_logging();
    match execute(cli) {
        Ok(code) => code,
        Err(Error::Diverged(b)) => {
            error!("diverged: {b}");
            eprintln!("diverged: {b}");
            EXIT_DIVERGED
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("MIMICMAP_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn stage_of(cmd: &Command) -> Option<Stage> {
    match cmd {
        Command::TrainClassifier { .. } => Some(Stage::TrainClassifier),
        Command::PretrainMapper { .. } => Some(Stage::PretrainMapper),
        Command::TrainJoint { .. } => Some(Stage::TrainJoint),
        _ => None,
    }
}

fn require(path: &Path, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPrerequisite { stage, path: path.to_path_buf() })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<i32> {
    let Cli { common, command } = cli;
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&common, stage_of(&command))?;
    crate::par::init_threads(cfg.threads);

    if let Command::Report { run } = &command {
        return report_command(run);
    }

    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command.name()));
    std::fs::create_dir_all(&out)?;
    cfg.invocation = Some(invocation(&command));
    write_json(&out.join(CONFIG_FILE), &cfg)?;
    info!("{} → {}", command.name(), out.display());

    match command {
        Command::GenData { utterances } => {
            let n = utterances.unwrap_or(cfg.corpus.utterances);
            let corpus = generate_synthetic_corpus(n, cfg.seed, &out, &cfg.corpus.synth)?;
            info!("wrote {} utterance pairs", corpus.entries.len());
            Ok(EXIT_OK)
        }
        Command::Featurize { corpus, classes } => {
            require(&corpus, "gen-data")?;
            let c = ParallelCorpus::load(&corpus)?;
            let classes = classes.unwrap_or(cfg.corpus.classes);
            let m = featurize_corpus(&c, classes, cfg.seed, cfg.corpus.heldout_fraction, &out)?;
            info!("featurized {} utterances ({} train, {} held out)", m.entries.len(), m.train.len(), m.heldout.len());
            Ok(EXIT_OK)
        }
        Command::TrainClassifier { features } => {
            require(&features, "featurize")?;
            let corpus = FeatureCorpus::load(&features)?;
            let classes = corpus.classes.ok_or_else(|| Error::invalid("features carry no labels"))?;
            let arch = ClassifierArch { classes, ..cfg.classifier };
            let init = build_classifier_with(arch, cfg.seed)?;
            let stage = cfg.train_classifier.clone();
            let mut report = TrainReport::new(Stage::TrainClassifier.name());
            let result = train_classifier(init, &corpus, &stage, &mut report, &mut epoch_saver(&out, "train_classifier", cfg.seed));
            finish(&out, &report, result, "classifier", "train_classifier", cfg.seed, |m: &SpectralClassifier, p, meta| {
                m.save(p, meta).map(drop)
            })
        }
        Command::PretrainMapper { features, init } => {
            require(&features, "featurize")?;
            let corpus = FeatureCorpus::load(&features)?;
            let mapper = match &init {
                Some(p) => {
                    require(p, "pretrain-mapper")?;
                    SpectralMapper::load(p)?.0
                }
                None => build_mapper_with(cfg.mapper, cfg.seed)?,
            };
            let stage = cfg.pretrain_mapper.clone();
            let mut report = TrainReport::new(Stage::PretrainMapper.name());
            let result = pretrain_mapper(mapper, &corpus, &stage, &mut report, &mut epoch_saver(&out, "pretrain_mapper", cfg.seed));
            finish(&out, &report, result, "mapper", "pretrain_mapper", cfg.seed, |m: &SpectralMapper, p, meta| {
                m.save(p, meta).map(drop)
            })
        }
        Command::TrainJoint { features, classifier, mapper, fidelity_weight, max_steps } => {
            require(&features, "featurize")?;
            require(&classifier, "train-classifier")?;
            require(&mapper, "pretrain-mapper")?;
            let corpus = FeatureCorpus::load(&features)?;
            let (frozen, _) = FrozenClassifier::load(&classifier)?;
            let (init, _) = SpectralMapper::load(&mapper)?;
            let mut stage = cfg.train_joint.clone();
            if let Some(w) = fidelity_weight {
                stage.fidelity_weight = w;
            }
            if max_steps.is_some() {
                stage.max_steps = max_steps;
            }
            info!("alpha = {}, tap = {}", stage.alpha(), stage.tap.name());
            let mut report = TrainReport::new(Stage::TrainJoint.name());
            let result =
                train_joint(init, &frozen, &corpus, &stage, &mut report, &mut epoch_saver(&out, "train_joint", cfg.seed));
            finish(&out, &report, result, "mapper", "train_joint", cfg.seed, |m: &SpectralMapper, p, meta| {
                m.save(p, meta).map(drop)
            })
        }
        Command::Enhance { mapper, corpus } => {
            require(&mapper, "pretrain-mapper")?;
            require(&corpus, "gen-data")?;
            enhance_command(&mapper, &corpus, &out)
        }
        Command::Gradcheck { draws } => {
            let cases = gradient_suite(draws, cfg.seed)?;
            write_json(&out.join("gradcheck.json"), &cases)?;
            let failed: Vec<_> = cases.iter().filter(|c| !c.passed).collect();
            let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
            println!("{} cases over {draws} draws, worst relative error {worst:.3e} (tolerance {TOLERANCE:e})", cases.len());
            for c in &failed {
                println!("FAIL {} draw {}: {:.3e}", c.name, c.draw, c.max_rel_error);
            }
            Ok(if failed.is_empty() { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn invocation(cmd: &Command) -> serde_json::Value {
    let p = |p: &Path| p.display().to_string();
    let args = match cmd {
        Command::GenData { utterances } => serde_json::json!({ "utterances": utterances }),
        Command::Featurize { corpus, classes } => serde_json::json!({ "corpus": p(corpus), "classes": classes }),
        Command::TrainClassifier { features } => serde_json::json!({ "features": p(features) }),
        Command::PretrainMapper { features, init } => {
            serde_json::json!({ "features": p(features), "init": init.as_deref().map(p) })
        }
        Command::TrainJoint { features, classifier, mapper, fidelity_weight, max_steps } => serde_json::json!({
            "features": p(features), "classifier": p(classifier), "mapper": p(mapper),
            "fidelity_weight": fidelity_weight, "max_steps": max_steps,
        }),
        Command::Enhance { mapper, corpus } => serde_json::json!({ "mapper": p(mapper), "corpus": p(corpus) }),
        Command::Gradcheck { draws } => serde_json::json!({ "draws": draws }),
        Command::Report { run } => serde_json::json!({ "run": p(run) }),
    };
    serde_json::json!({ "command": cmd.name(), "args": args })
}

/// Writes `epochs/epoch_NNN.mmck` after every epoch.
fn epoch_saver<'a>(out: &'a Path, stage: &'a str, seed: u64) -> impl FnMut(&EpochRecord, &Network) -> Result<()> + 'a {
    move |rec, net| {
        let dir = out.join("epochs");
        std::fs::create_dir_all(&dir)?;
        let meta = CheckpointMeta { stage: stage.to_string(), seed, steps: rec.steps as u64 };
        crate::nn::checkpoint::save(&dir.join(format!("epoch_{:03}.mmck", rec.epoch)), net, &meta)?;
        Ok(())
    }
}

/// Writes the report and, on success, `NAME.mmck` (best held-out) and
/// `NAME_final.mmck`.
fn finish<M>(
    out: &Path,
    report: &TrainReport,
    result: Result<Trained<M>>,
    name: &str,
    stage: &str,
    seed: u64,
    save: impl Fn(&M, &Path, &CheckpointMeta) -> Result<()>,
) -> Result<i32> {
    report.write(out)?;
    let trained = result?;
    let steps = report.steps.len() as u64;
    let best_steps = report.epochs.iter().find(|e| e.epoch == trained.best_epoch).map_or(0, |e| e.steps as u64);
    save(&trained.best, &out.join(format!("{name}.mmck")), &CheckpointMeta { stage: stage.into(), seed, steps: best_steps })?;
    save(&trained.model, &out.join(format!("{name}_final.mmck")), &CheckpointMeta { stage: stage.into(), seed, steps })?;
    if let Some(last) = report.epochs.last() {
        info!("{stage}: {} epochs, best epoch {}", last.epoch, trained.best_epoch);
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct EnhanceSummary {
    utterances: usize,
    frames: usize,
    enhanced_mse: f64,
    noisy_mse: f64,
}

fn enhance_command(mapper: &Path, corpus: &Path, out: &Path) -> Result<i32> {
    let (mapper, _) = SpectralMapper::load(mapper)?;
    let corpus = ParallelCorpus::load(corpus)?;
    let dir = out.join("enhanced");
    std::fs::create_dir_all(&dir)?;
    let results = crate::par::map_collect(crate::par::Execution::default(), &corpus.entries, |e| -> Result<(usize, f64, f64)> {
        let noisy = crate::dsp::stft_log_magnitude(&read_wav(&corpus.resolve(&e.noisy))?.samples)?;
        let clean = crate::dsp::stft_log_magnitude(&read_wav(&corpus.resolve(&e.clean))?.samples)?;
        let enhanced = enhance_features(&mapper, &noisy)?;
        archive::write(&dir.join(format!("{}.mmfa", e.id)), enhanced.values())?;
        let en = mse_loss(enhanced.values(), clean.values())?.per_example.iter().sum::<f64>();
        let no = mse_loss(noisy.values(), clean.values())?.per_example.iter().sum::<f64>();
        Ok((clean.frames(), en, no))
    });
    let (mut frames, mut en, mut no) = (0usize, 0.0, 0.0);
    for r in results {
        let (f, e, n) = r?;
        frames += f;
        en += e;
        no += n;
    }
    let summary = EnhanceSummary {
        utterances: corpus.entries.len(),
        frames,
        enhanced_mse: en / frames.max(1) as f64,
        noisy_mse: no / frames.max(1) as f64,
    };
    info!("enhanced {} utterances: MSE {:.4} (noisy {:.4})", summary.utterances, summary.enhanced_mse, summary.noisy_mse);
    write_json(&out.join("enhance.json"), &summary)?;
    Ok(EXIT_OK)
}

fn report_command(run: &Path) -> Result<i32> {
    let report = TrainReport::read(run)?;
    let violations = report.joint_identity_violations(JOINT_IDENTITY_TOLERANCE);
    let checked = report.checked_records();
    println!("{}: {} epoch records, {} step records", report.stage, report.epochs.len(), report.steps.len());
    for e in &report.epochs {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        println!(
            "epoch {:>3}: held-out L_C {} L_F {} L_M {} L_JOINT {} acc {}",
            e.epoch,
            f(e.heldout.classification),
            f(e.heldout.fidelity),
            f(e.heldout.mimic),
            f(e.heldout.joint),
            f(e.heldout_accuracy)
        );
    }
    if let Some(d) = &report.divergence {
        println!("diverged at step {}: L_F {} L_M {} L_JOINT {} alpha {}", d.step, d.fidelity, d.mimic, d.joint, d.alpha);
    }
    for v in &violations {
        println!("VIOLATION {}: logged L_JOINT {} vs recomputed {}", v.location, v.logged, v.recomputed);
    }
    if checked == 0 {
        warn!("no records carry L_F, L_M and alpha; nothing to check");
    }
    println!("joint identity: {} of {checked} records violate (tolerance {JOINT_IDENTITY_TOLERANCE:e})", violations.len());
    Ok(if violations.is_empty() { EXIT_OK } else { EXIT_CHECK_FAILED })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{BatchNormStats, Batching};

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("mimicmap").chain(args.iter().copied())).unwrap()
    }

    fn resolved(args: &[&str]) -> RunConfig {
        let cli = parse(args);
        let mut cfg = RunConfig::default();
        cfg.apply(&cli.common, stage_of(&cli.command)).unwrap();
        cfg
    }

    #[test]
    fn partial_stage_sections_keep_stage_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"train_joint": {"epochs": 2}, "pretrain_mapper": {}}"#).unwrap();
        assert_eq!(cfg.train_joint.epochs, 2);
        assert_eq!(cfg.train_joint.batching, Batching::Utterances);
        assert_eq!(cfg.train_joint.batch_norm, BatchNormStats::Frozen);
        assert_eq!(cfg.pretrain_mapper, StageConfig::for_stage(Stage::PretrainMapper));
    }

    #[test]
    fn alpha_defaults_follow_the_tap() {
        let base = ["train-joint", "--features", "f", "--classifier", "c", "--mapper", "m"];
        let cfg = resolved(&[&base[..], &["--tap", "pre-softmax"]].concat());
        assert_eq!(cfg.train_joint.alpha(), 0.1);
        let cfg = resolved(&[&base[..], &["--tap", "post-softmax"]].concat());
        assert_eq!(cfg.train_joint.alpha(), 1000.0);
        let cfg = resolved(&[&base[..], &["--tap", "post-softmax", "--alpha", "3"]].concat());
        assert_eq!(cfg.train_joint.alpha(), 3.0);
    }

    #[test]
    fn flags_reach_only_the_running_stage() {
        let cfg = resolved(&["pretrain-mapper", "--features", "f", "--epochs", "3", "--seed", "9", "--lr", "0.01"]);
        assert_eq!(cfg.pretrain_mapper.epochs, 3);
        assert_eq!(cfg.pretrain_mapper.optimizer.lr(), 0.01);
        assert_eq!(cfg.train_classifier.epochs, StageConfig::default().epochs);
        assert_eq!(cfg.train_joint.seed, 9);
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run(["mimicmap", "train-joint", "--tap", "softmax"]), EXIT_USAGE);
        assert_eq!(run(["mimicmap", "no-such-command"]), EXIT_USAGE);
    }

    #[test]
    fn missing_checkpoint_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let err = require(&dir.path().join("mapper.mmck"), "pretrain-mapper").unwrap_err();
        assert!(err.to_string().contains("pretrain-mapper"));
        let code = run([
            "mimicmap",
            "train-joint",
            "--features",
            dir.path().to_str().unwrap(),
            "--classifier",
            "nope.mmck",
            "--mapper",
            "nope.mmck",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_USAGE);
    }
}
