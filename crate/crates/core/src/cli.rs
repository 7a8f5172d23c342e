//! Command-line front end.
//!
//! Settings resolve as built-in defaults, then the `--config` JSON file, then
//! flags. Every command writes the resolved settings next to its outputs as
//! `<command>.config.json`; when a command fails, the files it wrote are
//! removed again.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset, DatasetSpec, SplitPolicy};
use crate::error::{Error, Result};
use crate::evaluator::{
    eval_sets, evaluate_all_layers, evaluate_layer, extract_features, ranked_lists,
    ranked_lists_jsonl, reports_csv, reports_table, Layer, RecallReport, RetrievalMode,
};
use crate::gradcheck::{self, GradcheckOptions};
use crate::network::Checkpoint;
use crate::rng::derive;
use crate::trainer::{self, Sampling, SgsSource, TrainConfig, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "sgml",
    version,
    about = "Attribute-modulated deep metric learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic attributed dataset and its splits.
    GenData(GenDataArgs),
    /// Train a network and write its checkpoint and loss history.
    Train(TrainArgs),
    /// Recall@K of a checkpoint on a dataset's retrieval splits.
    Eval(EvalArgs),
    /// Train and evaluate over an alpha × beta grid.
    Sweep(SweepArgs),
    /// Compare the four training variants under one seed and dataset.
    Ablate(AblateArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// JSON settings file (see README for its sections).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitKind {
    Instance,
    Class,
    None,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub categories: Option<usize>,
    #[arg(long)]
    pub classes_per_category: Option<usize>,
    #[arg(long)]
    pub images_per_class: Option<usize>,
    /// Number of binary attributes K.
    #[arg(long)]
    pub attributes: Option<usize>,
    /// Feature dimension D.
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub flip_noise: Option<f64>,
    #[arg(long)]
    pub feature_noise: Option<f64>,
    #[arg(long)]
    pub class_offset: Option<f64>,
    #[arg(long)]
    pub nuisance_dims: Option<usize>,
    #[arg(long)]
    pub nuisance_sigma: Option<f64>,
    #[arg(long)]
    pub split: Option<SplitKind>,
    /// Fraction of each class kept for training (instance split).
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Fraction of classes used for training (class split).
    #[arg(long)]
    pub class_fraction: Option<f64>,
    /// File name of the dataset inside the output directory.
    #[arg(long, default_value = "dataset.sgml")]
    pub name: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SamplingKind {
    Image,
    Batch,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SgsSourceArg {
    Predicted,
    Truth,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, value_enum)]
    pub sampling: Option<SamplingKind>,
    /// Anchors per image-wise batch.
    #[arg(long)]
    pub n_anchors: Option<usize>,
    /// Classes per batch-wise batch.
    #[arg(long)]
    pub n_classes: Option<usize>,
    /// Records per class in a batch-wise batch.
    #[arg(long)]
    pub m_per_class: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long, value_enum)]
    pub sgs_source: Option<SgsSourceArg>,
    #[arg(long)]
    pub sgs_backprop: bool,
    /// Comma-separated hidden trunk widths, e.g. `256,2048`.
    #[arg(long)]
    pub trunk_dims: Option<String>,
    #[arg(long)]
    pub fc_dim: Option<usize>,
    #[arg(long)]
    pub emb_dim: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct EvalFlags {
    /// Comma-separated K values.
    #[arg(long)]
    pub ks: Option<String>,
    /// Comma-separated layers out of emb, fc, trunk.
    #[arg(long)]
    pub layers: Option<String>,
    /// `separate` or `leave-one-out`; chosen from the splits when omitted.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dataset file; a synthetic set from the config is generated when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// Also write the top-N ranked gallery ids per query as JSON Lines.
    #[arg(long)]
    pub dump_ranked: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// Comma-separated alpha values.
    #[arg(long)]
    pub alphas: Option<String>,
    /// Comma-separated beta values.
    #[arg(long)]
    pub betas: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub scalar_cases: Option<usize>,
    #[arg(long)]
    pub network_cases: Option<usize>,
    /// Negate analytic gradients to confirm that failures are reported.
    #[arg(long)]
    pub inject_fault: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub ks: Vec<usize>,
    pub layers: Vec<Layer>,
    pub mode: Option<RetrievalMode>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            ks: vec![1, 2, 4, 8, 16, 32],
            layers: Layer::ALL.to_vec(),
            mode: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Layer whose Recall@1 is reported.
    pub layer: Layer,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            alphas: vec![2.0, 2.5, 2.7, 3.0],
            betas: vec![0.0, 0.1, 0.3, 0.5, 0.7],
            layer: Layer::Emb,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateSettings {
    /// Layer evaluated for the variants that train the embedding head.
    pub layer: Layer,
    /// Layer evaluated for `attr_only`, whose embedding head stays untrained.
    pub attr_only_layer: Layer,
}

impl Default for AblateSettings {
    fn default() -> Self {
        Self {
            layer: Layer::Emb,
            attr_only_layer: Layer::Fc,
        }
    }
}

/// Contents of a `--config` file; every section is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Settings {
    pub dataset: DatasetSpec,
    pub split: Option<SplitPolicy>,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub sweep: SweepSettings,
    pub ablate: AblateSettings,
    pub gradcheck: GradcheckOptions,
}

impl Settings {
    fn load(common: &CommonArgs) -> Result<Self> {
        let mut s = match &common.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
            None => Settings::default(),
        };
        if let Some(seed) = common.seed {
            s.dataset.seed = seed;
            s.train.seed = seed;
            s.gradcheck.seed = seed;
        }
        Ok(s)
    }

    fn split_policy(&self) -> SplitPolicy {
        self.split.unwrap_or_default()
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::config(format!("bad {what} value {x:?}")))
        })
        .collect()
}

impl TrainFlags {
    fn apply(&self, c: &mut TrainConfig) -> Result<()> {
        if let Some(v) = &self.variant {
            c.variant = v.parse()?;
        }
        match self.sampling {
            Some(SamplingKind::Image) => {
                c.sampling = Sampling::ImageWise {
                    n_anchors: self.n_anchors.unwrap_or(60),
                }
            }
            Some(SamplingKind::Batch) => {
                c.sampling = Sampling::BatchWise {
                    n_classes: self.n_classes.unwrap_or(41),
                    m_per_class: self.m_per_class.unwrap_or(4),
                }
            }
            None => {}
        }
        match &mut c.sampling {
            Sampling::ImageWise { n_anchors } => {
                if let Some(n) = self.n_anchors {
                    *n_anchors = n;
                }
            }
            Sampling::BatchWise {
                n_classes,
                m_per_class,
            } => {
                if let Some(n) = self.n_classes {
                    *n_classes = n;
                }
                if let Some(m) = self.m_per_class {
                    *m_per_class = m;
                }
            }
        }
        if let Some(a) = self.alpha {
            c.loss.alpha = a;
        }
        if let Some(b) = self.beta {
            c.loss.beta = b;
        }
        if let Some(l) = self.lambda {
            c.loss.lambda = l;
        }
        if let Some(lr) = self.lr {
            c.lr = lr;
        }
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        if self.max_steps.is_some() {
            c.max_steps = self.max_steps;
        }
        match self.sgs_source {
            Some(SgsSourceArg::Predicted) => c.sgs_source = SgsSource::Predicted,
            Some(SgsSourceArg::Truth) => c.sgs_source = SgsSource::GroundTruth,
            None => {}
        }
        if self.sgs_backprop {
            c.sgs_backprop = true;
        }
        if let Some(t) = &self.trunk_dims {
            c.model.trunk_dims = if t.trim().is_empty() {
                Vec::new()
            } else {
                parse_list(t, "trunk width")?
            };
        }
        if let Some(f) = self.fc_dim {
            c.model.fc_dim = f;
        }
        if let Some(e) = self.emb_dim {
            c.model.emb_dim = e;
        }
        c.validate()
    }
}

impl EvalFlags {
    fn apply(&self, e: &mut EvalSettings) -> Result<()> {
        if let Some(ks) = &self.ks {
            e.ks = parse_list(ks, "K")?;
        }
        if let Some(l) = &self.layers {
            e.layers = parse_list(l, "layer")?;
        }
        if let Some(m) = &self.mode {
            e.mode = Some(m.parse()?);
        }
        if e.ks.is_empty() || e.ks.contains(&0) {
            return Err(Error::config("every K must be >= 1"));
        }
        Ok(())
    }
}

/// Files written by one command, removed together if the command fails.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
    created_dir: bool,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            created_dir,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path(name);
        self.written.push(p.clone());
        fs::write(&p, contents)?;
        Ok(p)
    }

    fn record(&mut self, p: PathBuf) {
        self.written.push(p);
    }

    fn discard(self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

#[derive(Serialize)]
struct Resolved<'a, T: Serialize> {
    command: &'a str,
    data: Option<&'a Path>,
    settings: &'a T,
}

fn write_resolved<T: Serialize>(
    out: &mut Outputs,
    command: &str,
    data: Option<&Path>,
    settings: &T,
) -> Result<()> {
    let doc = Resolved {
        command,
        data,
        settings,
    };
    out.write(
        &format!("{command}.config.json"),
        &(serde_json::to_string_pretty(&doc)? + "\n"),
    )?;
    Ok(())
}

/// Loads `--data`, or builds the configured synthetic dataset and split.
fn dataset_for(data: Option<&Path>, settings: &Settings) -> Result<Dataset> {
    match data {
        Some(p) => dataset::load(p),
        None => synthetic(settings),
    }
}

fn synthetic(settings: &Settings) -> Result<Dataset> {
    let d = dataset::generate(&settings.dataset)?;
    dataset::split(
        &d,
        settings.split_policy(),
        &mut derive(settings.dataset.seed, "split"),
    )
}

/// Runs a parsed command line, printing human-readable output to stdout.
pub fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::GenData(a) => &a.common,
        Command::Train(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Sweep(a) => &a.common,
        Command::Ablate(a) => &a.common,
        Command::Gradcheck(a) => &a.common,
    };
    let mut out = Outputs::new(&common.out)?;
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a, &mut out),
        Command::Train(a) => cmd_train(a, &mut out),
        Command::Eval(a) => cmd_eval(a, &mut out),
        Command::Sweep(a) => cmd_sweep(a, &mut out),
        Command::Ablate(a) => cmd_ablate(a, &mut out),
        Command::Gradcheck(a) => cmd_gradcheck(a, &mut out),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            Ok(())
        }
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn cmd_gen_data(a: &GenDataArgs, out: &mut Outputs) -> Result<String> {
    let mut s = Settings::load(&a.common)?;
    let spec = &mut s.dataset;
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut spec.n_categories, a.categories);
    set(&mut spec.classes_per_category, a.classes_per_category);
    set(&mut spec.images_per_class, a.images_per_class);
    set(&mut spec.n_attributes, a.attributes);
    set(&mut spec.feature_dim, a.feature_dim);
    set(&mut spec.nuisance_dims, a.nuisance_dims);
    if let Some(v) = a.flip_noise {
        spec.attribute_flip_noise = v;
    }
    if let Some(v) = a.feature_noise {
        spec.feature_noise_sigma = v;
    }
    if let Some(v) = a.class_offset {
        spec.class_offset_sigma = v;
    }
    if let Some(v) = a.nuisance_sigma {
        spec.nuisance_sigma = v;
    }
    match a.split {
        Some(SplitKind::Instance) => {
            s.split = Some(SplitPolicy::InstanceRetrieval {
                train_fraction: a.train_fraction.unwrap_or(0.5),
            })
        }
        Some(SplitKind::Class) => {
            s.split = Some(SplitPolicy::ClassRetrieval {
                class_fraction: a.class_fraction.unwrap_or(0.5),
            })
        }
        Some(SplitKind::None) | None => {}
    }
    let no_split = matches!(a.split, Some(SplitKind::None));
    let generated = dataset::generate(&s.dataset)?;
    let d = if no_split {
        s.split = None;
        generated
    } else {
        dataset::split(
            &generated,
            s.split_policy(),
            &mut derive(s.dataset.seed, "split"),
        )?
    };
    let path = out.path(&a.name);
    out.record(path.clone());
    if !d.splits.is_empty() {
        out.record(dataset::splits_path(&path));
    }
    dataset::save(&d, &path)?;
    #[derive(Serialize)]
    struct GenSettings<'a> {
        dataset: &'a DatasetSpec,
        split: Option<SplitPolicy>,
    }
    write_resolved(
        out,
        "gen-data",
        None,
        &GenSettings {
            dataset: &s.dataset,
            split: s.split.filter(|_| !no_split),
        },
    )?;
    let mut text = format!(
        "wrote {}: {} records, K={}, D={}\n",
        path.display(),
        d.len(),
        d.n_attributes,
        d.feature_dim
    );
    for (name, ids) in &d.splits {
        let _ = writeln!(text, "  split {name}: {} records", ids.len());
    }
    Ok(text)
}

fn cmd_train(a: &TrainArgs, out: &mut Outputs) -> Result<String> {
    let mut s = Settings::load(&a.common)?;
    a.train.apply(&mut s.train)?;
    let d = dataset_for(a.data.as_deref(), &s)?;
    let (ck, history) = trainer::train(&s.train, &d)?;
    let ck_path = out.path("checkpoint.json");
    out.record(ck_path.clone());
    ck.save(&ck_path)?;
    out.write("history.csv", &history.to_csv())?;
    write_resolved(out, "train", a.data.as_deref(), &s.train)?;
    let last = history.steps.last();
    Ok(format!(
        "trained {} for {} steps; final total loss {}\nwrote {}\n",
        s.train.variant,
        history.steps.len(),
        last.map_or("n/a".into(), |r| format!("{:.4}", r.total_loss)),
        ck_path.display()
    ))
}

fn cmd_eval(a: &EvalArgs, out: &mut Outputs) -> Result<String> {
    let mut s = Settings::load(&a.common)?;
    a.eval.apply(&mut s.eval)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let d = dataset_for(a.data.as_deref(), &s)?;
    let reports = evaluate_all_layers(&ck.params, &d, &s.eval.ks, &s.eval.layers, s.eval.mode)?;
    out.write("recall.csv", &reports_csv(&reports))?;
    if let Some(top) = a.dump_ranked {
        let sets = eval_sets(&d, s.eval.mode)?;
        let layer = s.eval.layers.first().copied().unwrap_or(Layer::Emb);
        let qf = extract_features(&ck.params, &sets.queries, layer)?;
        let gf = extract_features(&ck.params, &sets.gallery, layer)?;
        let ids = |r: &[&dataset::ImageRecord]| r.iter().map(|x| x.id.clone()).collect::<Vec<_>>();
        let lists = ranked_lists(
            qf.view(),
            gf.view(),
            &ids(&sets.queries),
            &ids(&sets.gallery),
            top,
            sets.mode,
        )?;
        out.write("ranked.jsonl", &ranked_lists_jsonl(&lists)?)?;
    }
    write_resolved(out, "eval", a.data.as_deref(), &s.eval)?;
    Ok(reports_table(&reports))
}

/// Recall@1 of one training run on the configured layer.
fn train_and_recall(
    config: &TrainConfig,
    d: &Dataset,
    layer: Layer,
    ks: &[usize],
    mode: Option<RetrievalMode>,
) -> Result<RecallReport> {
    let (ck, _) = trainer::train(config, d)?;
    let sets = eval_sets(d, mode)?;
    evaluate_layer(&ck.params, &sets, layer, ks)
}

/// One sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub recall_at_1: f64,
}

/// Grid of `(alpha, beta)` cells sorted ascending, each trained from the same
/// base configuration.
pub fn sweep(
    base: &TrainConfig,
    d: &Dataset,
    alphas: &[f64],
    betas: &[f64],
    layer: Layer,
    mode: Option<RetrievalMode>,
) -> Result<Vec<SweepRow>> {
    let mut grid: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| betas.iter().map(move |&b| (a, b)))
        .collect();
    grid.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    grid.dedup();
    grid.into_iter()
        .map(|(alpha, beta)| {
            let mut c = base.clone();
            c.loss.alpha = alpha;
            c.loss.beta = beta;
            let r = train_and_recall(&c, d, layer, &[1], mode)?;
            log::info!("alpha {alpha} beta {beta}: R@1 {:.4}", r.recall[0]);
            Ok(SweepRow {
                alpha,
                beta,
                recall_at_1: r.recall[0],
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,beta,recall_at_1\n");
    for r in rows {
        let _ = writeln!(out, "{:?},{:?},{:?}", r.alpha, r.beta, r.recall_at_1);
    }
    out
}

fn cmd_sweep(a: &SweepArgs, out: &mut Outputs) -> Result<String> {
    let mut s = Settings::load(&a.common)?;
    a.train.apply(&mut s.train)?;
    a.eval.apply(&mut s.eval)?;
    if let Some(al) = &a.alphas {
        s.sweep.alphas = parse_list(al, "alpha")?;
    }
    if let Some(be) = &a.betas {
        s.sweep.betas = parse_list(be, "beta")?;
    }
    let d = dataset_for(a.data.as_deref(), &s)?;
    let rows = sweep(
        &s.train,
        &d,
        &s.sweep.alphas,
        &s.sweep.betas,
        s.sweep.layer,
        s.eval.mode,
    )?;
    out.write("sweep.csv", &sweep_csv(&rows))?;
    #[derive(Serialize)]
    struct SweepResolved<'a> {
        train: &'a TrainConfig,
        sweep: &'a SweepSettings,
        mode: Option<RetrievalMode>,
    }
    write_resolved(
        out,
        "sweep",
        a.data.as_deref(),
        &SweepResolved {
            train: &s.train,
            sweep: &s.sweep,
            mode: s.eval.mode,
        },
    )?;
    let mut text = format!("{:>6} {:>6} {:>8}\n", "alpha", "beta", "R@1");
    for r in &rows {
        let _ = writeln!(
            text,
            "{:>6.4} {:>6.4} {:>8.4}",
            r.alpha, r.beta, r.recall_at_1
        );
    }
    Ok(text)
}

/// One ablation row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: RecallReport,
}

/// Trains every variant from the same base configuration and dataset.
pub fn ablate(
    base: &TrainConfig,
    d: &Dataset,
    settings: &AblateSettings,
    ks: &[usize],
    mode: Option<RetrievalMode>,
) -> Result<Vec<AblationRow>> {
    Variant::ALL
        .into_iter()
        .map(|variant| {
            let c = TrainConfig {
                variant,
                ..base.clone()
            };
            let layer = if variant == Variant::AttrOnly {
                settings.attr_only_layer
            } else {
                settings.layer
            };
            let report = train_and_recall(&c, d, layer, ks, mode)?;
            Ok(AblationRow { variant, report })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,layer,k,recall\n");
    for r in rows {
        for (k, v) in r.report.ks.iter().zip(&r.report.recall) {
            let _ = writeln!(out, "{},{},{},{:?}", r.variant, r.report.layer, k, v);
        }
    }
    out
}

fn cmd_ablate(a: &AblateArgs, out: &mut Outputs) -> Result<String> {
    let mut s = Settings::load(&a.common)?;
    a.train.apply(&mut s.train)?;
    a.eval.apply(&mut s.eval)?;
    let d = dataset_for(a.data.as_deref(), &s)?;
    let rows = ablate(&s.train, &d, &s.ablate, &s.eval.ks, s.eval.mode)?;
    out.write("ablation.csv", &ablation_csv(&rows))?;
    #[derive(Serialize)]
    struct AblateResolved<'a> {
        train: &'a TrainConfig,
        ablate: &'a AblateSettings,
        eval: &'a EvalSettings,
    }
    write_resolved(
        out,
        "ablate",
        a.data.as_deref(),
        &AblateResolved {
            train: &s.train,
            ablate: &s.ablate,
            eval: &s.eval,
        },
    )?;
    let mut text = format!("{:<12} {:<6}", "variant", "layer");
    for k in &s.eval.ks {
        let _ = write!(text, " {:>8}", format!("R@{k}"));
    }
    text.push('\n');
    for r in &rows {
        let _ = write!(text, "{:<12} {:<6}", r.variant.as_str(), r.report.layer);
        for v in &r.report.recall {
            let _ = write!(text, " {v:>8.4}");
        }
        text.push('\n');
    }
    Ok(text)
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut Outputs) -> Result<String> {
    let mut s = Settings::load(&a.common)?;
    let o = &mut s.gradcheck;
    if let Some(n) = a.scalar_cases {
        o.scalar_cases = n;
    }
    if let Some(n) = a.network_cases {
        o.network_cases = n;
    }
    if a.inject_fault {
        o.inject_sign_flip = true;
    }
    let report = gradcheck::run(o)?;
    out.write(
        "gradcheck.json",
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    write_resolved(out, "gradcheck", None, &s.gradcheck)?;
    let table = report.table();
    if report.passed() {
        Ok(table)
    } else {
        print!("{table}");
        Err(Error::Config("gradient check failed".into()))
    }
}
