//! The `contour-rater` command line.
//!
//! Every subcommand reads earlier stage outputs from `--out` and writes its
//! own subdirectory there (`ingest/`, `contours/`, `fluency/`, `pretrain/`,
//! `finetune/`, `evaluate/`, `explain/`, `report/`), each with a
//! `manifest.txt`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contour::{
    annotate, compute_contour, default_registry, read_contour_dir, write_contour_csv,
    ComplexityContour, ContourManifest, FeatureGroup, FeatureInfo, WindowConfig,
};
use crate::corpus::{
    binarize_by_median, interrater_kappa, label_stats, load_aux_talks, load_ratings, load_speeches,
    make_folds, read_count_table, read_label_stats, read_topics, tally_aux, tally_ratings,
    write_count_table, write_label_stats, write_topics, Category, CountTable, KappaReport,
    RatingSet, Topic,
};
use crate::error::{Error, Result};
use crate::explain::{
    explain_dataset, global_importance, rank_groups, read_importance_csv, write_importance_csv,
    write_local_csv, ExplainConfig, GroupAssignment, KernelForm, RankedGroup, Target,
};
use crate::fluency::{
    fluency_vector, load_alignment, read_fluency_csv, write_fluency_csv, FluencyVector,
};
use crate::neural::{
    load_checkpoint, save_checkpoint, Architecture, Checkpoint, FineTuneArch, OptimizerKind,
    TrainConfig,
};
use crate::pipeline::{
    crossvalidate, finetune, grid_search, pretrain, read_results_csv, write_predictions_csv,
    write_results_csv, CvSetup, Grid, Normalizer, ResultRow, Sample, Trained, EXTRA_DIMS,
};
use crate::report::{
    aggregate_subgroups, kappa_rows, median_split_diffs, performance_csv_rows, reduce_contour,
    render_bars, render_importance, render_kappa, render_label_stats, render_performance,
    write_csv, PerformanceRow, Reduction, SplitDiff,
};
use crate::synth::{default_features, synthesize, synthesize_with, write_layout, SynthConfig};
use crate::textproc::{LexiconSet, Tokenizer};

pub const LOG_ENV: &str = "CONTOUR_RATER_LOG";
const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Parser)]
#[command(
    name = "contour-rater",
    version,
    about = "Predict affective speech ratings from complexity contours"
)]
pub struct Cli {
    /// TOML run configuration; relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output root.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tally ratings, binarize labels, label statistics and rater agreement.
    Ingest,
    /// Extract complexity contours for speeches (and auxiliary talks).
    Contours,
    /// Compute fluency vectors from time-aligned transcripts.
    Fluency,
    /// Pretrain one classifier per category on the auxiliary talks.
    Pretrain(CategoryArgs),
    /// Fine-tune pretrained classifiers on the speeches.
    Finetune(CategoryArgs),
    /// Cross-validate the fine-tuning recipe.
    Evaluate(EvaluateArgs),
    /// Group-level local explanations and global importance.
    Explain(ExplainArgs),
    /// Render tables and figures from earlier stage outputs.
    Report(ReportArgs),
    /// Write a synthetic dataset in the stage output layout.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Default)]
pub struct CategoryArgs {
    /// Restrict to these categories (repeatable).
    #[arg(long = "category")]
    pub categories: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub select: CategoryArgs,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Decision threshold on the predicted probability.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub select: CategoryArgs,
    /// `squared` or `linear`.
    #[arg(long)]
    pub kernel: Option<String>,
    /// `probability` or `logit`.
    #[arg(long)]
    pub target: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub select: CategoryArgs,
    /// Per-speech feature reduction: `mean` or `median`.
    #[arg(long)]
    pub reduction: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value = "lexical")]
    pub informative_group: String,
    #[arg(long)]
    pub anti_group: Option<String>,
    /// Size of an auxiliary pretraining set (0 for none).
    #[arg(long, default_value_t = 0)]
    pub aux_n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub speeches: Option<PathBuf>,
    pub ratings: Option<PathBuf>,
    pub aux: Option<PathBuf>,
    pub alignments: Option<PathBuf>,
    pub lexicons: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub head_width: usize,
    pub finetune_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = Architecture::new(1);
        Self {
            layers: a.layers,
            hidden: a.hidden,
            head_width: a.head_width,
            finetune_width: FineTuneArch::default().width,
        }
    }
}

/// Overrides on top of the stage defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub dropout: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
    pub val_fraction: Option<f64>,
}

impl TrainSection {
    fn apply(&self, mut base: TrainConfig, seed: u64) -> Result<TrainConfig> {
        base.seed = seed;
        if let Some(v) = self.learning_rate {
            base.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            base.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            base.max_epochs = v;
        }
        if let Some(v) = self.patience {
            base.patience = v;
        }
        if let Some(v) = self.dropout {
            base.dropout = v;
        }
        if let Some(v) = self.optimizer {
            base.optimizer = v;
        }
        if let Some(v) = self.val_fraction {
            base.val_fraction = v;
        }
        base.validate()?;
        Ok(base)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub folds: usize,
    pub threshold: f64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            folds: 10,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub kernel: KernelForm,
    pub target: Target,
    pub samples: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        let d = ExplainConfig::default();
        Self {
            kernel: d.kernel,
            target: d.target,
            samples: d.samples,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub reduction: Reduction,
}

/// Everything a run depends on besides its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Empty selects all categories.
    pub categories: Vec<String>,
    pub window: WindowConfig,
    pub paths: PathsConfig,
    pub model: ModelConfig,
    pub pretrain: TrainSection,
    pub finetune: TrainSection,
    /// Hyperparameter grid for fine-tuning; empty skips the search.
    pub grid: Grid,
    pub evaluate: EvaluateSection,
    pub explain: ExplainSection,
    pub report: ReportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            categories: Vec::new(),
            window: WindowConfig::default(),
            paths: PathsConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainSection::default(),
            finetune: TrainSection::default(),
            grid: Grid::new(),
            evaluate: EvaluateSection::default(),
            explain: ExplainSection::default(),
            report: ReportSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingPath(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.out);
        for p in [
            &mut cfg.paths.speeches,
            &mut cfg.paths.ratings,
            &mut cfg.paths.aux,
            &mut cfg.paths.alignments,
            &mut cfg.paths.lexicons,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if self.evaluate.folds < 2 {
            return Err(Error::InvalidArgument(format!(
                "evaluate.folds must be >= 2, got {}",
                self.evaluate.folds
            )));
        }
        if !(0.0..=1.0).contains(&self.evaluate.threshold) {
            return Err(Error::InvalidArgument(format!(
                "evaluate.threshold must lie in [0, 1], got {}",
                self.evaluate.threshold
            )));
        }
        for c in &self.categories {
            c.parse::<Category>()?;
        }
        Ok(())
    }
}

/// Exit status for a failed run: 1 for bad input or configuration, 2 for
/// failures during computation.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingPath(_)
        | Error::InvalidArgument(_)
        | Error::Parse { .. }
        | Error::UnknownCategory(_)
        | Error::UnknownSpeech(_)
        | Error::InvalidRecord(_)
        | Error::MissingLexicon(_)
        | Error::MissingFluency(_)
        | Error::ArchitectureMismatch { .. }
        | Error::ZeroViews(_)
        | Error::OverlappingTokens { .. } => 1,
        _ => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let command_line = canonical_command(&args);
    match run(cli, command_line) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// The invocation as recorded in manifests: program name normalized and
/// `--jobs` dropped, since it never changes results.
fn canonical_command(args: &[std::ffi::OsString]) -> String {
    let mut out = vec!["contour-rater".to_string()];
    let mut skip = false;
    for a in args.iter().skip(1) {
        let a = a.to_string_lossy().into_owned();
        if skip {
            skip = false;
            continue;
        }
        if a == "--jobs" {
            skip = true;
            continue;
        }
        if a.starts_with("--jobs=") {
            continue;
        }
        out.push(a);
    }
    out.join(" ")
}

pub fn run(cli: Cli, command_line: String) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::InvalidArgument("--jobs must be >= 1".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let ctx = Ctx {
        cfg,
        config_path: cli.config.clone(),
        command: command_line,
    };
    pool.install(|| match &cli.command {
        Command::Ingest => ctx.ingest(),
        Command::Contours => ctx.contours(),
        Command::Fluency => ctx.fluency(),
        Command::Pretrain(a) => ctx.pretrain(a),
        Command::Finetune(a) => ctx.finetune(a),
        Command::Evaluate(a) => ctx.evaluate(a),
        Command::Explain(a) => ctx.explain(a),
        Command::Report(a) => ctx.report(a),
        Command::Synth(a) => ctx.synth(a),
    })
}

#[derive(Debug, Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config: Option<String>,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
    settings: &'a RunConfig,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Regular files under `dir`, sorted, recursively.
fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn missing_as_path(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingPath(path.to_path_buf()),
        _ => Error::Io(e),
    }
}

fn require_file(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingPath(path.to_path_buf()))
    }
}

fn parse_choice<T: for<'de> Deserialize<'de>>(flag: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| Error::InvalidArgument(format!("invalid value `{value}` for {flag}")))
}

/// Contours, labels, fluency and topics of one split, read back from stage
/// outputs.
struct Dataset {
    features: Vec<FeatureInfo>,
    labels: CountTable,
    contours: BTreeMap<String, ComplexityContour>,
    fluency: BTreeMap<String, FluencyVector>,
    topics: BTreeMap<String, Topic>,
}

impl Dataset {
    fn samples(&self, c: Category) -> Result<Vec<Sample>> {
        self.labels
            .ids()
            .iter()
            .zip(self.labels.column(c))
            .map(|(id, label)| {
                let contour = self
                    .contours
                    .get(id)
                    .ok_or_else(|| Error::UnknownSpeech(format!("{id} (no contour)")))?;
                Ok(Sample {
                    id: id.clone(),
                    contour: contour.values.clone(),
                    fluency: self.fluency.get(id).map(FluencyVector::to_array),
                    topic: self.topics.get(id).copied(),
                    label,
                })
            })
            .collect()
    }

    fn feature_ids(&self) -> Vec<String> {
        self.features.iter().map(|f| f.id.clone()).collect()
    }
}

#[derive(Debug, Serialize)]
struct TrainingRow {
    category: String,
    p1: f64,
    epochs_run: usize,
    best_epoch: usize,
    final_train_loss: Option<f64>,
    best_val_loss: Option<f64>,
}

impl TrainingRow {
    fn new(c: Category, t: &Trained) -> Self {
        let o = &t.outcome;
        Self {
            category: c.name().to_string(),
            p1: o.p1,
            epochs_run: o.epochs_run,
            best_epoch: o.best_epoch,
            final_train_loss: o.train_loss.last().copied(),
            best_val_loss: o.val_loss.iter().copied().reduce(f64::min),
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    config_path: Option<PathBuf>,
    command: String,
}

impl Ctx {
    fn dir(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn fresh_dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.dir(name);
        if d.exists() {
            std::fs::remove_dir_all(&d)?;
        }
        std::fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.cfg.out)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    }

    /// Writes `dir/manifest.txt` listing the inputs and every other file in
    /// `dir` with their hashes.
    fn manifest(&self, dir: &Path, inputs: &[PathBuf]) -> Result<()> {
        let mut ins = Vec::new();
        for p in inputs {
            let files = if p.is_dir() {
                files_under(p)?
            } else {
                vec![p.clone()]
            };
            for f in files {
                ins.push(FileHash {
                    path: self.rel(&f),
                    sha256: sha256_file(&f)?,
                });
            }
        }
        let manifest_path = dir.join(MANIFEST);
        let mut outs = Vec::new();
        for f in files_under(dir)? {
            if f == manifest_path {
                continue;
            }
            outs.push(FileHash {
                path: f
                    .strip_prefix(dir)
                    .unwrap_or(&f)
                    .to_string_lossy()
                    .replace('\\', "/"),
                sha256: sha256_file(&f)?,
            });
        }
        let m = Manifest {
            command: &self.command,
            seed: self.cfg.seed,
            config: self.config_path.as_ref().map(|p| p.display().to_string()),
            inputs: ins,
            outputs: outs,
            settings: &self.cfg,
        };
        let text =
            toml::to_string(&m).map_err(|e| Error::InvalidArgument(format!("manifest: {e}")))?;
        std::fs::write(manifest_path, text)?;
        Ok(())
    }

    fn path(&self, p: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        let p = p
            .clone()
            .ok_or_else(|| Error::InvalidArgument(format!("no `paths.{key}` configured")))?;
        require_file(&p)?;
        Ok(p)
    }

    fn categories(&self, select: &CategoryArgs) -> Result<Vec<Category>> {
        let names = if select.categories.is_empty() {
            &self.cfg.categories
        } else {
            &select.categories
        };
        if names.is_empty() {
            return Ok(Category::ALL.to_vec());
        }
        let mut cats = names
            .iter()
            .map(|n| n.parse::<Category>())
            .collect::<Result<Vec<_>>>()?;
        cats.sort();
        cats.dedup();
        Ok(cats)
    }

    fn lexicons(&self) -> Result<Arc<LexiconSet>> {
        Ok(Arc::new(match &self.cfg.paths.lexicons {
            Some(d) => LexiconSet::load_dir(require_file(d)?)?,
            None => LexiconSet::bundled(),
        }))
    }

    fn architecture(&self, input_dim: usize) -> Architecture {
        let m = &self.cfg.model;
        Architecture {
            layers: m.layers,
            hidden: m.hidden,
            head_width: m.head_width,
            dropout: self.pretrain_config().map(|c| c.dropout).unwrap_or(0.5),
            ..Architecture::new(input_dim)
        }
    }

    fn pretrain_config(&self) -> Result<TrainConfig> {
        self.cfg
            .pretrain
            .apply(TrainConfig::pretrain(), self.cfg.seed)
    }

    fn finetune_config(&self) -> Result<TrainConfig> {
        self.cfg
            .finetune
            .apply(TrainConfig::finetune(), self.cfg.seed)
    }

    fn finetune_arch(&self, cfg: &TrainConfig) -> FineTuneArch {
        FineTuneArch {
            width: self.cfg.model.finetune_width,
            extra_dims: EXTRA_DIMS,
            dropout: cfg.dropout,
        }
    }

    fn main_inputs(&self) -> Vec<PathBuf> {
        vec![
            self.dir("contours"),
            self.dir("ingest").join("labels.csv"),
            self.dir("ingest").join("speeches.csv"),
            self.dir("fluency").join("fluency.csv"),
        ]
    }

    fn main_dataset(&self) -> Result<Dataset> {
        let (manifest, contours) = read_contour_dir(&self.dir("contours"))?;
        let labels = read_count_table(&self.dir("ingest").join("labels.csv"))?;
        let fluency = read_fluency_csv(require_file(&self.dir("fluency").join("fluency.csv"))?)?;
        let topics = read_topics(&self.dir("ingest").join("speeches.csv"))?;
        Ok(Dataset {
            features: manifest.features,
            labels,
            contours,
            fluency,
            topics,
        })
    }

    fn aux_dataset(&self) -> Result<Dataset> {
        let (manifest, contours) = read_contour_dir(&self.dir("aux_contours"))?;
        let labels = read_count_table(&self.dir("ingest").join("aux_labels.csv"))?;
        Ok(Dataset {
            features: manifest.features,
            labels,
            contours,
            fluency: BTreeMap::new(),
            topics: BTreeMap::new(),
        })
    }

    fn ingest(&self) -> Result<()> {
        let sp = self.path(&self.cfg.paths.speeches, "speeches")?;
        let rp = self.path(&self.cfg.paths.ratings, "ratings")?;
        let speeches = load_speeches(&sp)?;
        let ratings = load_ratings(&rp)?;
        let ids: Vec<String> = speeches.iter().map(|s| s.id.clone()).collect();
        let counts = tally_ratings(&ids, &ratings)?;
        let labels = binarize_by_median(&counts)?;
        let dir = self.fresh_dir("ingest")?;
        let topics: BTreeMap<String, Topic> =
            speeches.iter().map(|s| (s.id.clone(), s.topic)).collect();
        write_topics(&dir.join("speeches.csv"), &topics)?;
        write_count_table(&dir.join("counts.csv"), &counts)?;
        write_count_table(&dir.join("labels.csv"), &label_table(&labels)?)?;
        write_label_stats(&dir.join("label_stats.csv"), &label_stats(&counts)?)?;
        let kappa = interrater_kappa(&ratings)?;
        std::fs::write(
            dir.join("kappa.json"),
            serde_json::to_string_pretty(&kappa)? + "\n",
        )?;
        let mut inputs = vec![sp, rp];
        if let Some(ap) = &self.cfg.paths.aux {
            require_file(ap)?;
            let talks = load_aux_talks(ap)?;
            let aux_counts = tally_aux(&talks)?;
            write_count_table(&dir.join("aux_counts.csv"), &aux_counts)?;
            write_count_table(
                &dir.join("aux_labels.csv"),
                &label_table(&binarize_by_median(&aux_counts)?)?,
            )?;
            inputs.push(ap.clone());
        }
        log::info!(
            "ingested {} speeches and {} rating records",
            ids.len(),
            ratings.len()
        );
        self.manifest(&dir, &inputs)
    }

    fn contours(&self) -> Result<()> {
        let sp = self.path(&self.cfg.paths.speeches, "speeches")?;
        let lex = self.lexicons()?;
        let registry = default_registry(lex)?;
        let tok = Tokenizer::default();
        let window = self.cfg.window;
        let speeches = load_speeches(&sp)?;
        let docs: Vec<(String, Vec<String>, Option<Vec<BTreeMap<String, f64>>>)> = speeches
            .into_iter()
            .map(|s| (s.id, s.sentences, s.annotations))
            .collect();
        let mut jobs = vec![("contours", docs)];
        if let Some(ap) = &self.cfg.paths.aux {
            let talks = load_aux_talks(require_file(ap)?)?;
            jobs.push((
                "aux_contours",
                talks
                    .into_iter()
                    .map(|t| (t.id, t.sentences, None))
                    .collect(),
            ));
        }
        for (name, docs) in jobs {
            let contours: Vec<ComplexityContour> = docs
                .par_iter()
                .map(|(id, sents, ann)| {
                    compute_contour(
                        id,
                        &annotate(sents, ann.as_deref(), &tok),
                        &registry,
                        window,
                    )
                })
                .collect::<Result<_>>()?;
            let dir = self.fresh_dir(name)?;
            for c in &contours {
                write_contour_csv(&dir.join(format!("{}.csv", c.speech_id)), c)?;
            }
            ContourManifest {
                command: self.command.clone(),
                seed: self.cfg.seed,
                window,
                registry_hash: registry.hash(),
                features: registry.infos(),
                speeches: contours.iter().map(|c| c.speech_id.clone()).collect(),
            }
            .write(&dir.join(MANIFEST))?;
            log::info!(
                "{name}: {} contours over {} features",
                contours.len(),
                registry.len()
            );
        }
        Ok(())
    }

    fn fluency(&self) -> Result<()> {
        let lex = self.lexicons()?;
        let syll = lex.get("syllables");
        let tok = Tokenizer::default();
        let mut files: Vec<(PathBuf, Option<String>)> = Vec::new();
        if let Some(a) = &self.cfg.paths.alignments {
            files.push((require_file(a)?.to_path_buf(), None));
        }
        if let Some(sp) = &self.cfg.paths.speeches {
            let base = sp.parent().unwrap_or(Path::new(""));
            for s in load_speeches(require_file(sp)?)? {
                if let Some(a) = &s.alignment {
                    files.push((base.join(a), Some(s.id.clone())));
                }
            }
        }
        if files.is_empty() {
            return Err(Error::InvalidArgument(
                "no alignments configured (`paths.alignments` or per-speech `alignment`)".into(),
            ));
        }
        let mut rows = BTreeMap::new();
        for (path, only) in &files {
            for t in load_alignment(path, &tok)? {
                if only.as_ref().is_some_and(|id| *id != t.speech_id) {
                    continue;
                }
                let v = fluency_vector(&t, syll)?;
                if rows.insert(t.speech_id.clone(), v).is_some() {
                    return Err(Error::InvalidRecord(format!(
                        "speech `{}` aligned more than once",
                        t.speech_id
                    )));
                }
            }
        }
        let dir = self.fresh_dir("fluency")?;
        write_fluency_csv(&dir.join("fluency.csv"), &rows)?;
        let mut inputs: Vec<PathBuf> = files.into_iter().map(|(p, _)| p).collect();
        inputs.sort();
        inputs.dedup();
        self.manifest(&dir, &inputs)
    }

    fn pretrain(&self, select: &CategoryArgs) -> Result<()> {
        let cats = self.categories(select)?;
        let data = self.aux_dataset()?;
        let cfg = self.pretrain_config()?;
        let arch = self.architecture(data.features.len());
        arch.validate()?;
        let trained: Vec<(Category, Trained)> = cats
            .par_iter()
            .map(|&c| {
                let samples = data.samples(c)?;
                let refs: Vec<&Sample> = samples.iter().collect();
                Ok((c, pretrain(&refs, arch, &cfg)?))
            })
            .collect::<Result<_>>()?;
        let dir = self.fresh_dir("pretrain")?;
        let mut rows = Vec::new();
        for (c, t) in &trained {
            let meta = serde_json::json!({
                "stage": "pretrain",
                "category": c.name(),
                "features": data.feature_ids(),
                "normalizer": t.normalizer,
                "train": cfg,
            });
            save_checkpoint(&dir.join(format!("{}.ckpt", c.name())), &t.model, &meta)?;
            rows.push(TrainingRow::new(*c, t));
        }
        write_csv(&dir.join("training.csv"), &rows)?;
        self.manifest(
            &dir,
            &[
                self.dir("aux_contours"),
                self.dir("ingest").join("aux_labels.csv"),
            ],
        )
    }

    fn load_pretrained(&self, c: Category, features: &[String]) -> Result<(PathBuf, Checkpoint)> {
        let path = self.dir("pretrain").join(format!("{}.ckpt", c.name()));
        let ck = load_checkpoint(&path)?;
        let stored: Vec<String> =
            serde_json::from_value(ck.metadata["features"].clone()).unwrap_or_default();
        if stored != features {
            return Err(Error::ArchitectureMismatch {
                field: "features".into(),
                expected: format!("{} contour features", features.len()),
                found: format!("{} in {}", stored.len(), path.display()),
            });
        }
        Ok((path, ck))
    }

    fn finetune(&self, select: &CategoryArgs) -> Result<()> {
        let cats = self.categories(select)?;
        let data = self.main_dataset()?;
        let features = data.feature_ids();
        let base_cfg = self.finetune_config()?;
        let ids: Vec<String> = data.labels.ids().to_vec();
        let plan = make_folds(&ids, self.cfg.evaluate.folds, self.cfg.seed)?;
        let mut inputs = self.main_inputs();
        let results: Vec<_> = cats
            .iter()
            .map(|&c| {
                let (base_path, base) = self.load_pretrained(c, &features)?;
                let samples = data.samples(c)?;
                let (cfg, grid) = if self.cfg.grid.is_empty() {
                    (base_cfg, None)
                } else {
                    let g = grid_search(&base_cfg, &self.cfg.grid, |tc| {
                        let setup = CvSetup {
                            arch: *base.model.architecture(),
                            finetune: self.finetune_arch(tc),
                            train: *tc,
                            threshold: self.cfg.evaluate.threshold,
                            init: Some(base.model.clone()),
                        };
                        Ok(crossvalidate(&samples, &plan, &setup)?.mean.accuracy)
                    })?;
                    (g.best_cell().config, Some(g))
                };
                let refs: Vec<&Sample> = samples.iter().collect();
                let trained = finetune(&base.model, &refs, self.finetune_arch(&cfg), &cfg)?;
                Ok((c, base_path, cfg, grid, trained))
            })
            .collect::<Result<_>>()?;
        let dir = self.fresh_dir("finetune")?;
        let mut rows = Vec::new();
        for (c, base_path, cfg, grid, t) in &results {
            let meta = serde_json::json!({
                "stage": "finetune",
                "category": c.name(),
                "base": self.rel(base_path),
                "features": features,
                "normalizer": t.normalizer,
                "train": cfg,
            });
            save_checkpoint(&dir.join(format!("{}.ckpt", c.name())), &t.model, &meta)?;
            rows.push(TrainingRow::new(*c, t));
            if let Some(g) = grid {
                write_grid_csv(&dir.join(format!("grid_{}.csv", c.name())), g)?;
            }
            inputs.push(base_path.clone());
        }
        write_csv(&dir.join("training.csv"), &rows)?;
        self.manifest(&dir, &inputs)
    }

    fn load_finetuned(&self, c: Category) -> Result<(PathBuf, Checkpoint)> {
        let path = self.dir("finetune").join(format!("{}.ckpt", c.name()));
        let ck = load_checkpoint(&path)?;
        Ok((path, ck))
    }

    fn evaluate(&self, args: &EvaluateArgs) -> Result<()> {
        let cats = self.categories(&args.select)?;
        let folds = args.folds.unwrap_or(self.cfg.evaluate.folds);
        let threshold = args.threshold.unwrap_or(self.cfg.evaluate.threshold);
        if folds < 2 || !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidArgument(format!(
                "need folds >= 2 and threshold in [0, 1] (got {folds}, {threshold})"
            )));
        }
        // Preconditions first, so a missing checkpoint fails before any work.
        let mut checkpoints = Vec::new();
        for &c in &cats {
            let (path, ck) = self.load_finetuned(c)?;
            let base_rel: String =
                serde_json::from_value(ck.metadata["base"].clone()).map_err(|_| {
                    Error::Checkpoint(format!("{} lacks its base checkpoint path", path.display()))
                })?;
            let base_path = self.cfg.out.join(&base_rel);
            let base = load_checkpoint(&base_path)?;
            let train: TrainConfig = serde_json::from_value(ck.metadata["train"].clone())
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
            let ft = ck.model.architecture().finetune.ok_or_else(|| {
                Error::Checkpoint(format!("{} has no fine-tune head", path.display()))
            })?;
            checkpoints.push((c, path, base_path, base, train, ft));
        }
        let data = self.main_dataset()?;
        let ids: Vec<String> = data.labels.ids().to_vec();
        let plan = make_folds(&ids, folds, self.cfg.seed)?;
        let results: Vec<_> = checkpoints
            .iter()
            .map(|(c, _, _, base, train, ft)| {
                let samples = data.samples(*c)?;
                let setup = CvSetup {
                    arch: *base.model.architecture(),
                    finetune: *ft,
                    train: *train,
                    threshold,
                    init: Some(base.model.clone()),
                };
                Ok((*c, crossvalidate(&samples, &plan, &setup)?))
            })
            .collect::<Result<_>>()?;
        let dir = self.fresh_dir("evaluate")?;
        let pred_dir = dir.join("predictions");
        std::fs::create_dir_all(&pred_dir)?;
        let mut rows = Vec::new();
        for (c, cv) in &results {
            rows.extend(ResultRow::from_cv(c.name(), cv));
            let mut preds: Vec<_> = cv
                .folds
                .iter()
                .flat_map(|f| f.predictions.iter().cloned())
                .collect();
            preds.sort_by(|a, b| a.id.cmp(&b.id));
            write_predictions_csv(
                &pred_dir.join(format!("{}.csv", c.name())),
                c.name(),
                &preds,
            )?;
        }
        write_results_csv(&dir.join("results.csv"), &rows)?;
        std::fs::write(
            dir.join("summary.txt"),
            render_performance(&PerformanceRow::from_results(&rows)),
        )?;
        let mut inputs = self.main_inputs();
        for (_, p, b, ..) in &checkpoints {
            inputs.push(p.clone());
            inputs.push(b.clone());
        }
        self.manifest(&dir, &inputs)
    }

    fn explain(&self, args: &ExplainArgs) -> Result<()> {
        let cats = self.categories(&args.select)?;
        let mut ecfg = ExplainConfig {
            kernel: self.cfg.explain.kernel,
            target: self.cfg.explain.target,
            samples: self.cfg.explain.samples,
            seed: self.cfg.seed,
        };
        if let Some(k) = &args.kernel {
            ecfg.kernel = parse_choice("--kernel", k)?;
        }
        if let Some(t) = &args.target {
            ecfg.target = parse_choice("--target", t)?;
        }
        let mut checkpoints = Vec::new();
        for &c in &cats {
            checkpoints.push((c, self.load_finetuned(c)?));
        }
        let data = self.main_dataset()?;
        let assign = GroupAssignment::new(&data.features, &FeatureGroup::ALL)?;
        let groups = assign.group_names();
        let ids: Vec<String> = data.labels.ids().to_vec();
        let dir = self.fresh_dir("explain")?;
        let mut ranked_all = Vec::new();
        let mut blocks = Vec::new();
        let mut inputs = self.main_inputs();
        for (c, (path, ck)) in &checkpoints {
            let normalizer: Normalizer = serde_json::from_value(ck.metadata["normalizer"].clone())
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
            let samples = data.samples(*c)?;
            let refs: Vec<&Sample> = samples.iter().collect();
            let prepared = normalizer.prepare_all(&refs)?;
            let (w, locals) = explain_dataset(&ck.model, &ids, &prepared, &assign, &ecfg)?;
            let ranked = rank_groups(c.name(), &groups, &global_importance(&w)?);
            let local_dir = dir.join("local").join(c.name());
            std::fs::create_dir_all(&local_dir)?;
            for l in &locals {
                write_local_csv(&local_dir.join(format!("{}.csv", l.sample_id)), l, &groups)?;
            }
            let singular = locals.iter().filter(|l| l.singular).count();
            if singular > 0 {
                log::warn!("{}: {singular} local fits were rank deficient", c.name());
            }
            ranked_all.extend(ranked.iter().cloned());
            blocks.push((c.name().to_string(), ranked));
            inputs.push(path.clone());
        }
        write_importance_csv(&dir.join("importance.csv"), &ranked_all)?;
        std::fs::write(dir.join("importance.txt"), render_importance(&blocks))?;
        self.manifest(&dir, &inputs)
    }

    fn report(&self, args: &ReportArgs) -> Result<()> {
        let cats = self.categories(&args.select)?;
        let reduction = match &args.reduction {
            Some(r) => parse_choice("--reduction", r)?,
            None => self.cfg.report.reduction,
        };
        let ingest = self.dir("ingest");
        let stats_p = ingest.join("label_stats.csv");
        let kappa_p = ingest.join("kappa.json");
        let results_p = self.dir("evaluate").join("results.csv");
        let importance_p = self.dir("explain").join("importance.csv");
        let counts_p = ingest.join("counts.csv");
        let contours_p = self.dir("contours");
        let dir = self.fresh_dir("report")?;
        let tables = dir.join("tables");
        let figures = dir.join("figures");
        std::fs::create_dir_all(&tables)?;
        std::fs::create_dir_all(&figures)?;
        let mut inputs = Vec::new();

        if stats_p.is_file() {
            let stats = read_label_stats(&stats_p)?;
            write_label_stats(&tables.join("label_stats.csv"), &stats)?;
            std::fs::write(tables.join("label_stats.txt"), render_label_stats(&stats)?)?;
            inputs.push(stats_p);
        }
        if kappa_p.is_file() {
            let text = std::fs::read_to_string(&kappa_p).map_err(missing_as_path(&kappa_p))?;
            let report: KappaReport = serde_json::from_str(&text)?;
            let rows = kappa_rows(&report);
            write_csv(&tables.join("kappa.csv"), &rows)?;
            std::fs::write(tables.join("kappa.txt"), render_kappa(&rows)?)?;
            inputs.push(kappa_p);
        }
        if results_p.is_file() {
            let rows = PerformanceRow::from_results(&read_results_csv(&results_p)?);
            write_csv(
                &tables.join("performance.csv"),
                &performance_csv_rows(&rows),
            )?;
            std::fs::write(tables.join("performance.txt"), render_performance(&rows))?;
            inputs.push(results_p);
        }
        if importance_p.is_file() {
            let rows = read_importance_csv(&importance_p)?;
            let mut blocks: Vec<(String, Vec<RankedGroup>)> = Vec::new();
            for r in &rows {
                match blocks.iter_mut().find(|(c, _)| *c == r.category) {
                    Some((_, v)) => v.push(r.clone()),
                    None => blocks.push((r.category.clone(), vec![r.clone()])),
                }
            }
            write_importance_csv(&tables.join("importance.csv"), &rows)?;
            std::fs::write(tables.join("importance.txt"), render_importance(&blocks))?;
            inputs.push(importance_p);
        }
        if counts_p.is_file() && contours_p.join(MANIFEST).is_file() {
            let counts = read_count_table(&counts_p)?;
            let (manifest, contours) = read_contour_dir(&contours_p)?;
            let per_speech = counts
                .ids()
                .iter()
                .map(|id| {
                    contours
                        .get(id)
                        .map(|c| reduce_contour(&c.values, reduction))
                        .ok_or_else(|| Error::UnknownSpeech(format!("{id} (no contour)")))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut all_features: Vec<SplitDiff> = Vec::new();
            let mut all_subgroups: Vec<SplitDiff> = Vec::new();
            for &c in &cats {
                let diffs = median_split_diffs(
                    c.name(),
                    &manifest.features,
                    &per_speech,
                    &counts.column(c),
                )?;
                let sub = aggregate_subgroups(&diffs, &manifest.features)?;
                let title = format!("{}: M_high - M_low", c.display_name());
                std::fs::write(
                    figures.join(format!("{}.svg", c.name())),
                    render_bars(&title, &sub),
                )?;
                all_features.extend(diffs);
                all_subgroups.extend(sub);
            }
            write_csv(&tables.join("split_diffs.csv"), &all_features)?;
            write_csv(&tables.join("split_subgroups.csv"), &all_subgroups)?;
            inputs.push(counts_p);
            inputs.push(contours_p);
        }
        if inputs.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no stage outputs to report under {}",
                self.cfg.out.display()
            )));
        }
        self.manifest(&dir, &inputs)
    }

    fn synth(&self, args: &SynthArgs) -> Result<()> {
        let informative: FeatureGroup = args.informative_group.parse()?;
        let anti = args
            .anti_group
            .as_deref()
            .map(str::parse::<FeatureGroup>)
            .transpose()?;
        let cfg = SynthConfig {
            anti,
            ..SynthConfig::new(args.n, informative, self.cfg.seed)
        };
        let main = synthesize(&cfg)?;
        let aux = if args.aux_n > 0 {
            let aux_cfg = SynthConfig {
                n: args.aux_n,
                seed: self.cfg.seed.wrapping_add(1),
                ..cfg
            };
            Some(synthesize_with(&aux_cfg, default_features()?, "aux")?)
        } else {
            None
        };
        for d in ["ingest", "contours", "fluency", "aux_contours"] {
            let p = self.dir(d);
            if p.exists() {
                std::fs::remove_dir_all(&p)?;
            }
        }
        write_layout(
            &self.cfg.out,
            &main,
            aux.as_ref(),
            &self.command,
            self.cfg.seed,
        )?;
        self.manifest(&self.dir("ingest"), &[])?;
        self.manifest(&self.dir("fluency"), &[])
    }
}

/// Median-binarized labels as a 0/1 count table.
fn label_table(rs: &RatingSet) -> Result<CountTable> {
    let rows = rs.binary.iter().map(|r| r.map(f64::from)).collect();
    CountTable::new(rs.counts.ids().to_vec(), rows)
}

fn write_grid_csv(path: &Path, g: &crate::pipeline::GridResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let keys: Vec<String> = g
        .cells
        .first()
        .map(|c| c.params.keys().cloned().collect())
        .unwrap_or_default();
    let mut header = keys.clone();
    header.push("score".into());
    header.push("best".into());
    w.write_record(&header)?;
    for (i, c) in g.cells.iter().enumerate() {
        let mut rec: Vec<String> = keys.iter().map(|k| c.params[k].to_string()).collect();
        rec.push(c.score.to_string());
        rec.push((i == g.best).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
