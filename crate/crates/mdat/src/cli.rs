//! The `mdat` command line.
//!
//! Precedence for every setting is built-in default, then the `--config`
//! file, then explicit flags.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mdat_core::baseline::BaselineConfig;
use mdat_core::mdat::MdatConfig;
use mdat_core::train;
use mdat_core::ModelKind;

use crate::checkpoint::{self, Checkpoint, CheckpointHeader};
use crate::config::{ExperimentKind, RunConfig};
use crate::dataio::{self, Dataset, LabelVocabulary, Split, SynthSpec};
use crate::experiments::{self, Plan, Report, RunRecord, Table};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "mdat", version, about = "Multimodal dual attention transformer for speech emotion recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus (MDF1 feature files and a manifest).
    Synth(SynthArgs),
    /// Within-corpus protocol: split, train, evaluate, save checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Cross-language protocol: train on a source, evaluate on targets.
    Cross(CrossArgs),
    /// K-shot adaptation from a source to a target.
    Kshot(KshotArgs),
    /// Train and evaluate the seven module combinations.
    Ablate(AblateArgs),
    /// Gradient-check every ablation variant and the baseline at the tiny
    /// configuration.
    Gradcheck(GradcheckArgs),
    /// Print the header of an MDF1 feature file or MDM1 checkpoint.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory to write `manifest.jsonl`, `speech/` and `text/` into.
    #[arg(long)]
    pub out: PathBuf,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed for the class anchors and drift direction; corpora sharing it
    /// share their classes.
    #[arg(long, default_value_t = 0)]
    pub anchor_seed: u64,
    /// Number of classes.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Utterances per class.
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    /// Rows per feature file.
    #[arg(long, default_value_t = 8)]
    pub seq_len: usize,
    /// Speech feature width.
    #[arg(long, default_value_t = 16)]
    pub d_speech: usize,
    /// Text feature width.
    #[arg(long, default_value_t = 12)]
    pub d_text: usize,
    /// Magnitude of the drift applied to every class mean.
    #[arg(long, default_value_t = 0.0)]
    pub shift: f64,
    /// Standard deviation of the per-entry Gaussian noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Language tag written to the manifest.
    #[arg(long, default_value = "synthetic")]
    pub language: String,
    /// Tag samples train/test with a stratified split of this fraction
    /// (default: leave them unassigned).
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

/// Settings shared by the training commands; each overrides the matching
/// key of the configuration file.
#[derive(Debug, Args, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed for initialisation, shuffling, dropout and splits.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for `report.json` and `table.csv`.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Model kinds to run, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<ModelKind>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Disable dropout during training.
    #[arg(long)]
    pub no_dropout: bool,
    /// Length both modalities are padded or cropped to.
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Label set: `four`, `emodb7`, `emovo6` or comma-separated names.
    #[arg(long)]
    pub vocabulary: Option<String>,
    /// Attention heads in the encoders.
    #[arg(long)]
    pub heads: Option<usize>,
    /// Number of seeds, counting up from `--seed`.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Worker threads for independent runs; results are merged in a fixed
    /// order.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest(s) to run on; samples tagged `test` are held out, otherwise
    /// a stratified split is drawn.
    #[arg(long)]
    pub manifest: Vec<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitFilter {
    /// Every sample.
    All,
    /// Samples tagged `train`.
    Train,
    /// Samples tagged `test`.
    Test,
    /// Samples not tagged `train`.
    Eval,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// MDM1 checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest to evaluate on.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Which samples to evaluate.
    #[arg(long, value_enum, default_value_t = SplitFilter::Eval)]
    pub split: SplitFilter,
    /// Expected label set; must match the checkpoint's.
    #[arg(long)]
    pub vocabulary: Option<String>,
    /// Directory for `report.json` and `table.csv`; nothing is written
    /// when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CrossArgs {
    /// Manifest to train on (all samples).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Manifest(s) to evaluate on (samples not tagged `train`).
    #[arg(long)]
    pub target: Vec<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct KshotArgs {
    /// Manifest to train the source model on.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target manifest: shots come from samples tagged `train`, evaluation
    /// uses the rest.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Shots per class, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    /// Fine-tuning epochs for k > 0.
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Manifest to train on.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Manifest(s) to evaluate on; without any, a held-out split of the
    /// source is used.
    #[arg(long)]
    pub target: Vec<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seed for the random inputs and parameters.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// TOML run configuration; its co-attention mode and masking flag apply.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fail when the f64 max relative error reaches this value.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// MDF1 or MDM1 file.
    pub path: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::parse_from(args);
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Cross(a) => cross(a),
        Command::Kshot(a) => kshot(a),
        Command::Ablate(a) => ablate(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_classes: a.classes,
        per_class: a.per_class,
        seq_len: a.seq_len,
        d_speech: a.d_speech,
        d_text: a.d_text,
        shift: a.shift,
        noise: a.noise,
        seed: a.seed,
        anchor_seed: a.anchor_seed,
        language: a.language,
        train_fraction: a.train_fraction,
    };
    let (samples, _) = dataio::synth_dataset(&spec, &a.out)?;
    println!(
        "wrote {} samples to {}",
        samples.len(),
        a.out.join(dataio::MANIFEST_NAME).display()
    );
    Ok(())
}

fn load_config(common: &Common, kind: ExperimentKind) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(k) = cfg.experiment.kind {
        if k != kind {
            return Err(Error::Config(format!(
                "configuration is for the {k:?} experiment, not {kind:?}"
            )));
        }
    }
    cfg.experiment.kind = Some(kind);
    let c = common;
    if let Some(v) = c.seed {
        cfg.train.seed = v;
    }
    if !c.models.is_empty() {
        cfg.experiment.models = c.models.clone();
    }
    if let Some(v) = c.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = c.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = c.batch_size {
        cfg.train.batch_size = v;
    }
    if c.no_dropout {
        cfg.train.dropout = false;
    }
    if let Some(v) = c.seq_len {
        cfg.data.seq_len = v;
    }
    if let Some(v) = &c.vocabulary {
        cfg.data.vocabulary = v.clone();
    }
    if let Some(v) = c.heads {
        cfg.model.n_heads = v;
    }
    if let Some(v) = c.seeds {
        cfg.experiment.seeds = v;
    }
    if let Some(v) = c.jobs {
        cfg.experiment.jobs = v;
    }
    Ok(cfg)
}

fn plan(cfg: &RunConfig) -> Plan {
    Plan {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        fraction: cfg.data.train_fraction,
        seeds: cfg.seeds(),
        jobs: cfg.experiment.jobs,
    }
}

fn load_dataset(cfg: &RunConfig, manifest: &Path) -> Result<Dataset> {
    let vocab = cfg.data.vocab()?;
    let samples = dataio::load_manifest(manifest, &vocab)?;
    if let Some(corpus) = cfg.data.corpus {
        corpus.validate(&samples, &vocab)?;
    }
    Dataset::from_samples(manifest.display().to_string(), vocab, samples, cfg.data.seq_len)
}

fn one_source(flag: Option<PathBuf>, cfg: &mut RunConfig) -> Result<PathBuf> {
    if let Some(p) = flag {
        cfg.experiment.sources = vec![p];
    }
    match cfg.experiment.sources.as_slice() {
        [p] => Ok(p.clone()),
        [] => Err(Error::Config("no source manifest (use --source or experiment.sources)".into())),
        _ => Err(Error::Config("exactly one source manifest is supported here".into())),
    }
}

fn finish(report: Report, table: Table, out: &Path) -> Result<()> {
    report.write(out, &table)?;
    print!("{}", table.to_csv()?);
    println!("wrote {}", out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.common, ExperimentKind::Within)?;
    if !a.manifest.is_empty() {
        cfg.experiment.sources = a.manifest;
    }
    if cfg.experiment.sources.is_empty() {
        return Err(Error::Config("no manifest (use --manifest or experiment.sources)".into()));
    }
    cfg.validate()?;
    let plan = plan(&cfg);
    let mut report = Report::new("train", &cfg);
    fs::create_dir_all(&a.common.out).map_err(Error::io(&a.common.out))?;
    let several = cfg.experiment.sources.len() > 1;
    for (j, manifest) in cfg.experiment.sources.iter().enumerate() {
        let data = load_dataset(&cfg, manifest)?;
        for run in experiments::run_within(&data, &cfg.experiment.models, &plan)? {
            let r = &run.record;
            let prefix = if several { format!("dataset{j}-") } else { String::new() };
            let path = a.common.out.join(format!("{prefix}{}-seed{}.mdm", r.model, r.seed));
            Checkpoint {
                header: CheckpointHeader {
                    model: r.model_config.clone(),
                    vocab: data.vocab.clone(),
                    seq_len: data.dims.seq_len,
                },
                params: run.params,
            }
            .save(&path)?;
            report.runs.push(run.record);
        }
    }
    let table = experiments::within_table(&report.runs);
    finish(report, table, &a.common.out)
}

fn eval(a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    if let Some(v) = &a.vocabulary {
        let v = LabelVocabulary::parse(v)?;
        if v != ck.header.vocab {
            return Err(Error::VocabularyMismatch {
                model: ck.header.vocab.names().to_vec(),
                data: v.names().to_vec(),
            });
        }
    }
    let data = Dataset::load(&a.manifest, &ck.header.vocab, ck.header.seq_len)?;
    let keep = |s: Split| match a.split {
        SplitFilter::All => true,
        SplitFilter::Train => s == Split::Train,
        SplitFilter::Test => s == Split::Test,
        SplitFilter::Eval => s != Split::Train,
    };
    let idx = data.indices_where(keep);
    let metrics = train::evaluate(&ck.header.model, &ck.params, &data.examples_at(&idx))?;
    println!("ua={:.6} samples={}", metrics.ua, metrics.samples);
    if let Some(out) = a.out {
        let mut cfg = RunConfig::default();
        cfg.data.seq_len = ck.header.seq_len;
        cfg.data.vocabulary = ck.header.vocab.names().join(",");
        let mut report = Report::new("eval", &cfg);
        report.runs.push(RunRecord {
            protocol: experiments::Protocol::Within,
            model: ck.header.model.kind(),
            ablation: None,
            source: a.checkpoint.display().to_string(),
            target: data.name.clone(),
            k: None,
            seed: 0,
            model_config: ck.header.model.clone(),
            train_samples: 0,
            history: Vec::new(),
            adaptation: None,
            shots: Vec::new(),
            metrics,
        });
        let table = experiments::cross_table(&report.runs);
        report.write(&out, &table)?;
    }
    Ok(())
}

fn cross(a: CrossArgs) -> Result<()> {
    let mut cfg = load_config(&a.common, ExperimentKind::Cross)?;
    let source = one_source(a.source, &mut cfg)?;
    if !a.target.is_empty() {
        cfg.experiment.targets = a.target;
    }
    if cfg.experiment.targets.is_empty() {
        return Err(Error::Config("no target manifest (use --target or experiment.targets)".into()));
    }
    cfg.validate()?;
    let plan = plan(&cfg);
    let src = load_dataset(&cfg, &source)?;
    let mut report = Report::new("cross", &cfg);
    for t in &cfg.experiment.targets {
        let tgt = load_dataset(&cfg, t)?;
        let runs = experiments::run_cross_language(&src, &tgt, &cfg.experiment.models, &plan)?;
        report.runs.extend(runs.into_iter().map(|r| r.record));
    }
    let table = experiments::cross_table(&report.runs);
    finish(report, table, &a.common.out)
}

fn kshot(a: KshotArgs) -> Result<()> {
    let mut cfg = load_config(&a.common, ExperimentKind::Kshot)?;
    let source = one_source(a.source, &mut cfg)?;
    if let Some(t) = a.target {
        cfg.experiment.targets = vec![t];
    }
    let target = match cfg.experiment.targets.as_slice() {
        [t] => t.clone(),
        _ => return Err(Error::Config("kshot needs exactly one target manifest".into())),
    };
    if !a.k.is_empty() {
        cfg.experiment.k = a.k;
    }
    if let Some(v) = a.finetune_epochs {
        cfg.train.finetune_epochs = v;
    }
    cfg.validate()?;
    let plan = plan(&cfg);
    let src = load_dataset(&cfg, &source)?;
    let tgt = load_dataset(&cfg, &target)?;
    let mut report = Report::new("kshot", &cfg);
    report.runs = experiments::run_kshot(&src, &tgt, &cfg.experiment.models, &cfg.experiment.k, &plan)?;
    let table = experiments::kshot_table(&report.runs);
    finish(report, table, &a.common.out)
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = load_config(&a.common, ExperimentKind::Ablate)?;
    let source = one_source(a.source, &mut cfg)?;
    if !a.target.is_empty() {
        cfg.experiment.targets = a.target;
    }
    cfg.experiment.models = vec![ModelKind::Mdat];
    cfg.validate()?;
    let plan = plan(&cfg);
    let src = load_dataset(&cfg, &source)?;
    let targets = cfg
        .experiment
        .targets
        .iter()
        .map(|t| load_dataset(&cfg, t))
        .collect::<Result<Vec<_>>>()?;
    let (checks, runs) = experiments::run_ablation(&src, &targets, &plan, cfg.train.seed)?;
    let mut report = Report::new("ablate", &cfg);
    report.gradcheck = checks;
    report.runs = runs;
    let table = experiments::ablation_table(&report.runs);
    finish(report, table, &a.common.out)
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let settings = match &a.config {
        Some(p) => RunConfig::load(p)?.model,
        None => Default::default(),
    };
    let mut base = MdatConfig::tiny();
    base.coatt_mode = settings.coatt_mode;
    base.mask_padding = settings.mask_padding;
    let rows = experiments::gradcheck_suite(&base, &BaselineConfig::tiny(), a.seed)?;
    println!("{:<10} {:>12} {:>12}  worst f64 entry", "model", "f64", "f32");
    for r in &rows {
        println!(
            "{:<10} {:>12.3e} {:>12.3e}  {}",
            r.model,
            r.double,
            r.single,
            r.worst.as_deref().unwrap_or("-")
        );
    }
    let worst = rows
        .iter()
        .max_by(|x, y| x.double.total_cmp(&y.double))
        .expect("suite is non-empty");
    println!("max relative error: {:e} ({})", worst.double, worst.model);
    if !(worst.double < a.tolerance) {
        return Err(Error::GradientCheck {
            model: worst.model.clone(),
            error: worst.double,
            tolerance: a.tolerance,
        });
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let bytes = fs::read(&a.path).map_err(Error::io(&a.path))?;
    match bytes.get(..4) {
        Some(m) if m == dataio::MAGIC => {
            let seq = dataio::decode_feature(&bytes).map_err(|source| Error::Feature {
                path: a.path.clone(),
                source,
            })?;
            println!("MDF1 rows={} cols={}", seq.len(), seq.dim());
        }
        Some(m) if m == checkpoint::MAGIC => {
            let (header, params) = checkpoint::decode_parts(&bytes).map_err(|message| Error::Checkpoint {
                path: a.path.clone(),
                message,
            })?;
            println!(
                "MDM1 version={} kind={} seq_len={} tensors={} scalars={}",
                checkpoint::VERSION,
                header.model.kind(),
                header.seq_len,
                params.len(),
                params.num_scalars()
            );
            println!("vocab={}", header.vocab.names().join(","));
            println!(
                "config={}",
                serde_json::to_string(&header.model).map_err(|e| Error::Report(e.to_string()))?
            );
            for (name, t) in params.iter() {
                println!("{name} {:?}", t.shape());
            }
        }
        _ => {
            return Err(Error::Config(format!(
                "{}: neither an MDF1 feature file nor an MDM1 checkpoint",
                a.path.display()
            )))
        }
    }
    Ok(())
}
