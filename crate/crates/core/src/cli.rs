//! Command-line surface: `synth`, `build-db`, `train`, `eval`, `sweep` and
//! `report`.
//!
//! Every subcommand accepts `--config FILE`, a flat `key=value` file whose
//! keys are flag names without the leading dashes. Values from the file are
//! spliced in ahead of the real arguments, and later occurrences win, so a
//! command-line flag beats the file, which beats the built-in default.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backbone::{BackboneConfig, BackboneKind};
use crate::dataset::{
    load_interactions, partition_head_tail, split_leave_one_out, InteractionDataset, Phase, DEFAULT_MIN_ITEM_FREQ,
    DEFAULT_MIN_USER_LEN,
};
use crate::embedstore::{
    build_neighbor_cache, load_embedding_matrix, read_neighbor_cache, synth_corpus, write_embedding_matrix,
    write_neighbor_cache, EmbeddingMatrix, SemanticStore, SynthConfig, DEFAULT_K,
};
use crate::error::{GraspError, Result};
use crate::eval::{
    emit_report, evaluate, group_report, parse_report_tsv, report_table, report_tsv, AtK, MetricReport, ModelScorer,
};
use crate::hae::Ablation;
use crate::model::{Model, ModelConfig, SemanticStores};
use crate::trainer::{fit, FitResult, TrainConfig};

const LOCK_FILE: &str = ".grasp.lock";

#[derive(Parser, Debug)]
#[command(
    name = "grasp",
    version,
    about = "Semantic embedding enhancement for sequential recommenders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a cluster-structured interaction log with embeddings.
    Synth(SynthArgs),
    /// Build neighbor caches (top-k ids and pooled means) from embeddings.
    BuildDb(BuildDbArgs),
    /// Train one model per seed and write checkpoints and logs.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write metric tables.
    Eval(EvalArgs),
    /// Train and test over a grid of neighbor counts and/or hidden sizes.
    Sweep(SweepArgs),
    /// Average metric TSVs (for example one per seed) into one table.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CommonArgs {
    /// Flat key=value file with defaults for any flag of this subcommand.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub force: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub users: usize,
    #[arg(long, default_value_t = 200)]
    pub items: usize,
    #[arg(long, default_value_t = 8)]
    pub clusters: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BuildDbArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// User embeddings (GEMB or TSV).
    #[arg(long)]
    pub users: PathBuf,
    /// Item embeddings (GEMB or TSV).
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, alias = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Directory with interactions.tsv, users.gemb and items.gemb.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory with users.gnbc and items.gnbc (defaults to --data).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_USER_LEN)]
    pub min_user_len: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_ITEM_FREQ)]
    pub min_item_freq: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value = "sasrec")]
    pub backbone: BackboneKind,
    /// Backbone hidden size.
    #[arg(long, default_value_t = 64)]
    pub h: usize,
    #[arg(long, default_value_t = 100)]
    pub max_seq_len: usize,
    /// Defaults to 2 for sasrec and 1 for gru4rec.
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub n_heads: usize,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    /// Fusion MLP hidden width (defaults to 2h).
    #[arg(long)]
    pub hae_hidden: Option<usize>,
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub no_attention: bool,
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub no_similar: bool,
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub no_global: bool,
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub softmax_variant: bool,
    /// Baseline: trainable id embeddings instead of semantic enhancement.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub id_only: bool,
    /// Experimental: add trainable id embeddings to the enhanced rows.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub add_id_embedding: bool,
}

impl ModelArgs {
    fn model_config(&self, h: usize) -> Result<ModelConfig> {
        let mut bb = match self.backbone {
            BackboneKind::SasRec => BackboneConfig::sasrec(h),
            BackboneKind::Gru4Rec => BackboneConfig::gru4rec(h),
        };
        bb.max_seq_len = self.max_seq_len;
        if let Some(n) = self.n_layers {
            bb.n_layers = n;
        }
        bb.n_heads = self.n_heads;
        bb.dropout = self.dropout;
        bb.validate()?;
        let mut mc = if self.id_only {
            ModelConfig::id_only(bb)
        } else {
            ModelConfig::grasp(bb)
        };
        mc.ablation = Ablation {
            no_attention: self.no_attention,
            no_similar: self.no_similar,
            no_global: self.no_global,
            softmax: self.softmax_variant,
        };
        mc.hae_hidden = self.hae_hidden.unwrap_or(2 * h);
        mc.add_id_embedding = self.add_id_embedding;
        Ok(mc)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub negatives_per_positive: usize,
    #[arg(long, default_value_t = 100)]
    pub eval_negatives: usize,
}

impl OptimArgs {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            patience: self.patience,
            max_epochs: self.max_epochs,
            negatives_per_positive: self.negatives_per_positive,
            seed,
            eval_negatives: self.eval_negatives,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, value_delimiter = ',', default_value = "42,43,44")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OnOff {
    On,
    Off,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// A per-seed directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Phase,
    #[arg(long, value_enum, default_value = "on")]
    pub groups: OnOff,
    #[arg(long, default_value_t = 0.2)]
    pub head_ratio: f64,
    /// Evaluation seed (defaults to the checkpoint's training seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to the checkpoint's training setting.
    #[arg(long)]
    pub eval_negatives: Option<usize>,
    /// Defaults to <checkpoint>/eval_<split>.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Neighbor pool sizes to try.
    #[arg(long, value_delimiter = ',')]
    pub k_values: Vec<usize>,
    /// Hidden sizes to try.
    #[arg(long, value_delimiter = ',')]
    pub h_values: Vec<usize>,
    /// Neighbor pool size used while sweeping h.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k_neighbors: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Metric TSVs to average, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub inputs: Vec<PathBuf>,
    /// Directory for the averaged metrics.tsv and metrics.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match splice_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let cli = match cmd.try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("GRASP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::BuildDb(a) => cmd_build_db(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

/// Inserts `--key value` pairs from the `--config` file right after the
/// subcommand name.
fn splice_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = argv.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(argv) };
    if argv.len() < 2 {
        return Ok(argv);
    }
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => GraspError::MissingFile {
            path: path.clone(),
            hint: "the --config file does not exist".into(),
        },
        _ => GraspError::io(&path, e),
    })?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| GraspError::Argument(format!("{} line {}: expected key=value", path.display(), n + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key == "config" {
            continue;
        }
        extra.push(OsString::from(format!("--{key}")));
        extra.push(OsString::from(value.trim()));
    }
    let mut out = argv[..2].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

/// Exclusive marker inside an output directory, removed on drop.
struct OutputLock(PathBuf);

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| GraspError::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(GraspError::Argument(format!(
                "{} is in use by another grasp process (delete {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(GraspError::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn refuse_existing(paths: &[PathBuf], force: bool) -> Result<()> {
    match paths.iter().find(|p| p.exists()) {
        Some(p) if !force => Err(GraspError::OutputExists(p.clone())),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| GraspError::io(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("json value") + "\n"))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

fn dataset_stats(ds: &InteractionDataset) -> serde_json::Value {
    json!({
        "users": ds.user_count(),
        "items": ds.item_count(),
        "interactions": ds.interaction_count(),
    })
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let non_empty = a.out.is_dir()
        && fs::read_dir(&a.out)
            .map_err(|e| GraspError::io(&a.out, e))?
            .next()
            .is_some();
    if non_empty && !a.common.force {
        return Err(GraspError::OutputExists(a.out.clone()));
    }
    let _lock = OutputLock::acquire(&a.out)?;
    let cfg = SynthConfig {
        users: a.users,
        items: a.items,
        clusters: a.clusters,
        dim: a.dim,
        noise: a.noise,
        seed: a.seed,
    };
    let corpus = synth_corpus(&cfg)?;
    corpus.dataset.write_interactions(&a.out.join("interactions.tsv"))?;
    corpus.dataset.write_id_maps(&a.out)?;
    write_embedding_matrix(&corpus.users, &a.out.join("users.gemb"))?;
    write_embedding_matrix(&corpus.items, &a.out.join("items.gemb"))?;
    write_json(
        &a.out.join("manifest.json"),
        &json!({
            "command": "synth",
            "users": a.users,
            "items": a.items,
            "clusters": a.clusters,
            "dim": a.dim,
            "noise": a.noise,
            "seed": a.seed,
            "exact_clusters": a.noise == 0.0,
            "dataset": dataset_stats(&corpus.dataset),
            "files": ["interactions.tsv", "user_ids.tsv", "item_ids.tsv", "users.gemb", "items.gemb"],
        }),
    )?;
    println!(
        "wrote {} users, {} items, {} interactions to {}",
        corpus.dataset.user_count(),
        corpus.dataset.item_count(),
        corpus.dataset.interaction_count(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_build_db(a: &BuildDbArgs) -> Result<()> {
    let outputs = [a.out_dir.join("users.gnbc"), a.out_dir.join("items.gnbc")];
    refuse_existing(&outputs, a.common.force)?;
    let users = load_embedding_matrix(&a.users)?;
    let items = load_embedding_matrix(&a.items)?;
    if users.dim() != items.dim() {
        return Err(GraspError::Compatibility(format!(
            "user embeddings have dim {}, item embeddings {}",
            users.dim(),
            items.dim()
        )));
    }
    let user_cache = build_neighbor_cache(&users, a.k)?;
    let item_cache = build_neighbor_cache(&items, a.k)?;
    let _lock = OutputLock::acquire(&a.out_dir)?;
    write_neighbor_cache(&user_cache, &outputs[0])?;
    write_neighbor_cache(&item_cache, &outputs[1])?;
    println!(
        "k={}: cached {} user and {} item neighbor lists in {}",
        a.k,
        users.rows(),
        items.rows(),
        a.out_dir.display()
    );
    Ok(())
}

fn require(path: PathBuf, hint: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(GraspError::MissingFile {
            path,
            hint: hint.to_string(),
        })
    }
}

fn load_dataset(d: &DataArgs) -> Result<InteractionDataset> {
    let path = require(
        d.data.join("interactions.tsv"),
        "expected a user<TAB>item<TAB>timestamp log; `grasp synth --out <dir>` writes one",
    )?;
    load_interactions(&path, d.min_user_len, d.min_item_freq)
}

fn load_embeddings(d: &DataArgs, ds: &InteractionDataset) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let hint = "expected embeddings indexed by dense id (see user_ids.tsv / item_ids.tsv)";
    let users = load_embedding_matrix(&require(d.data.join("users.gemb"), hint)?)?;
    let items = load_embedding_matrix(&require(d.data.join("items.gemb"), hint)?)?;
    if users.rows() != ds.user_count() || items.rows() != ds.item_count() {
        return Err(GraspError::Compatibility(format!(
            "embeddings have {} user and {} item rows but the filtered dataset has {} users and {} items",
            users.rows(),
            items.rows(),
            ds.user_count(),
            ds.item_count()
        )));
    }
    Ok((users, items))
}

fn load_stores(d: &DataArgs, ds: &InteractionDataset) -> Result<SemanticStores> {
    let (users, items) = load_embeddings(d, ds)?;
    let dir = d.cache_dir.clone().unwrap_or_else(|| d.data.clone());
    let hint = format!("run `grasp build-db --out-dir {}` first", dir.display());
    let user_cache = read_neighbor_cache(&require(dir.join("users.gnbc"), &hint)?)?;
    let item_cache = read_neighbor_cache(&require(dir.join("items.gnbc"), &hint)?)?;
    SemanticStores::new(
        SemanticStore::new(users, user_cache)?,
        SemanticStore::new(items, item_cache)?,
    )
}

/// Training settings stored next to each checkpoint so `eval` can replay
/// the validation protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub train: TrainConfig,
    pub model: String,
    pub min_user_len: usize,
    pub min_item_freq: usize,
    pub k_neighbors: usize,
    pub best_epoch: usize,
    pub epochs: usize,
    pub best_val_ndcg10: f64,
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    if a.seeds.is_empty() {
        return Err(GraspError::Argument("--seeds is empty".into()));
    }
    let mut outputs = vec![a.out.join("summary.json")];
    outputs.extend(a.seeds.iter().map(|&s| seed_dir(&a.out, s)));
    refuse_existing(&outputs, a.common.force)?;
    let model_cfg = a.model.model_config(a.model.h)?;
    let ds = load_dataset(&a.data)?;
    let stores = load_stores(&a.data, &ds)?;
    let split = split_leave_one_out(&ds);
    let _lock = OutputLock::acquire(&a.out)?;
    let mut runs = Vec::new();
    for &seed in &a.seeds {
        let cfg = a.optim.train_config(seed);
        let dir = seed_dir(&a.out, seed);
        fs::create_dir_all(&dir).map_err(|e| GraspError::io(&dir, e))?;
        let model = Model::init(model_cfg, stores.d_sem(), ds.item_count(), seed)?;
        let log_path = dir.join("train.log");
        let file = fs::File::create(&log_path).map_err(|e| GraspError::io(&log_path, e))?;
        let mut log = BufWriter::new(file);
        let r: FitResult = fit(model, &stores, &ds, &split, &cfg, Some(&mut log))?;
        log.flush().map_err(|e| GraspError::io(&log_path, e))?;
        r.best.save(&dir)?;
        let meta = CheckpointMeta {
            train: cfg,
            model: model_cfg.label(),
            min_user_len: a.data.min_user_len,
            min_item_freq: a.data.min_item_freq,
            k_neighbors: stores.items.cache.k(),
            best_epoch: r.state.best_epoch,
            epochs: r.state.epoch,
            best_val_ndcg10: r.state.best_val_ndcg10,
        };
        write_json(&dir.join("train.json"), &serde_json::to_value(&meta).expect("meta"))?;
        println!(
            "seed {seed}: {} epochs, best epoch {} with validation NDCG@10 {:.4} ({:.1}s)",
            r.state.epoch, r.state.best_epoch, r.state.best_val_ndcg10, r.seconds
        );
        runs.push(json!({
            "seed": seed,
            "checkpoint": dir.file_name().unwrap().to_string_lossy(),
            "epochs": r.state.epoch,
            "best_epoch": r.state.best_epoch,
            "best_val_ndcg10": r.state.best_val_ndcg10,
            "wall_clock_seconds": r.seconds,
        }));
    }
    let mean = runs.iter().map(|r| r["best_val_ndcg10"].as_f64().unwrap()).sum::<f64>() / runs.len() as f64;
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "command": "train",
            "config": a,
            "model": model_cfg,
            "model_label": model_cfg.label(),
            "param_groups": Model::init(model_cfg, stores.d_sem(), ds.item_count(), 0)?.param_groups(),
            "dataset": dataset_stats(&ds),
            "excluded_users": split.excluded,
            "k_neighbors": stores.items.cache.k(),
            "runs": runs,
            "mean_best_val_ndcg10": mean,
        }),
    )?;
    println!("mean best validation NDCG@10 over {} seeds: {mean:.4}", a.seeds.len());
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.checkpoint.join(format!("eval_{}", a.split.as_str())));
    let files = [
        out.join("metrics.tsv"),
        out.join("metrics.txt"),
        out.join("summary.json"),
    ];
    refuse_existing(&files, a.common.force)?;
    let model = Model::load(&a.checkpoint)?;
    let meta_path = a.checkpoint.join("train.json");
    let meta: Option<CheckpointMeta> = match fs::read_to_string(&meta_path) {
        Ok(text) => Some(
            serde_json::from_str(&text)
                .map_err(|e| GraspError::format(meta_path.display().to_string(), e.to_string()))?,
        ),
        Err(_) => None,
    };
    let defaults = TrainConfig::default();
    let seed = a.seed.or(meta.as_ref().map(|m| m.train.seed)).unwrap_or(defaults.seed);
    let eval_negatives = a
        .eval_negatives
        .or(meta.as_ref().map(|m| m.train.eval_negatives))
        .unwrap_or(defaults.eval_negatives);
    let ds = load_dataset(&a.data)?;
    let stores = load_stores(&a.data, &ds)?;
    model.check_compatible(&stores, ds.item_count())?;
    let split = split_leave_one_out(&ds);
    let scorer = ModelScorer {
        model: &model,
        stores: &stores,
    };
    let evaluation = evaluate(&scorer, &ds, &split, a.split, eval_negatives, seed)?;
    let mut reports = vec![evaluation.report.clone()];
    if a.groups == OnOff::On {
        let labels = partition_head_tail(&ds, a.head_ratio)?;
        reports.extend(group_report(&evaluation.records, &labels)?);
    }
    let _lock = OutputLock::acquire(&out)?;
    emit_report(&reports, &files[0], &files[1])?;
    let config = serde_json::to_string(a).expect("serializable args");
    write_json(
        &files[2],
        &json!({
            "command": "eval",
            "config_hash": format!("{:016x}", fnv1a(config.as_bytes())),
            "config": a,
            "model": model.config.label(),
            "split": a.split.as_str(),
            "seed": seed,
            "eval_negatives": eval_negatives,
            "dataset": dataset_stats(&ds),
            "evaluated_users": evaluation.records.len(),
            "skipped_users": evaluation.skipped,
            "reports": reports,
        }),
    )?;
    print!("{}", report_table(&reports));
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let mut grid: Vec<(&str, usize)> = Vec::new();
    let mut ks = a.k_values.clone();
    ks.sort_unstable();
    ks.dedup();
    let mut hs = a.h_values.clone();
    hs.sort_unstable();
    hs.dedup();
    grid.extend(hs.iter().map(|&h| ("h", h)));
    grid.extend(ks.iter().map(|&k| ("k", k)));
    if grid.is_empty() {
        return Err(GraspError::Argument(
            "empty grid: pass --k-values and/or --h-values".into(),
        ));
    }
    let tsv = a.out.join("sweep.tsv");
    refuse_existing(std::slice::from_ref(&tsv), a.common.force)?;
    let ds = load_dataset(&a.data)?;
    let (users, items) = load_embeddings(&a.data, &ds)?;
    let split = split_leave_one_out(&ds);
    let cfg = a.optim.train_config(a.seed);
    let _lock = OutputLock::acquire(&a.out)?;
    let mut rows = String::from("param\tvalue\tndcg10\thr10\n");
    for (param, value) in grid {
        let (k, h) = if param == "k" {
            (value, a.model.h)
        } else {
            (a.k_neighbors, value)
        };
        let stores = SemanticStores::new(
            SemanticStore::build(users.clone(), k)?,
            SemanticStore::build(items.clone(), k)?,
        )?;
        let mc = a.model.model_config(h)?;
        let model = Model::init(mc, stores.d_sem(), ds.item_count(), a.seed)?;
        let r = fit(model, &stores, &ds, &split, &cfg, None)?;
        let scorer = ModelScorer {
            model: &r.best,
            stores: &stores,
        };
        let test = evaluate(&scorer, &ds, &split, Phase::Test, cfg.eval_negatives, a.seed)?;
        let ndcg = test.report.ndcg(10).unwrap_or(0.0);
        let hr = test.report.hr(10).unwrap_or(0.0);
        println!(
            "{param}={value}: test NDCG@10 {ndcg:.4} HR@10 {hr:.4} ({} epochs)",
            r.state.epoch
        );
        rows.push_str(&format!("{param}\t{value}\t{ndcg}\t{hr}\n"));
    }
    write_text(&tsv, &rows)
}

/// Averages reports group by group across TSV files that share a layout.
pub fn average_reports(sets: &[Vec<MetricReport>]) -> Result<Vec<MetricReport>> {
    let Some(first) = sets.first() else {
        return Err(GraspError::Argument("no reports to average".into()));
    };
    let n = sets.len() as f64;
    let mut out = Vec::with_capacity(first.len());
    for (gi, g) in first.iter().enumerate() {
        let mut metrics = g.metrics.clone();
        let mut users = 0;
        for set in sets {
            let other = set
                .get(gi)
                .filter(|o| o.group == g.group && o.metrics.len() == g.metrics.len())
                .ok_or_else(|| GraspError::Protocol(format!("group {:?} is not present in every input", g.group)))?;
            users += other.n_users;
            if std::ptr::eq(set, first) {
                continue;
            }
            for (m, o) in metrics.iter_mut().zip(&other.metrics) {
                if m.k != o.k {
                    return Err(GraspError::Protocol("inputs report different cutoffs".into()));
                }
                m.ndcg += o.ndcg;
                m.hr += o.hr;
            }
        }
        out.push(MetricReport {
            group: g.group.clone(),
            n_users: users / sets.len(),
            metrics: metrics
                .into_iter()
                .map(|m| AtK {
                    k: m.k,
                    ndcg: m.ndcg / n,
                    hr: m.hr / n,
                })
                .collect(),
        });
    }
    Ok(out)
}

pub fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut sets = Vec::new();
    for p in &a.inputs {
        let text = fs::read_to_string(require(p.clone(), "expected a metrics.tsv written by `grasp eval`")?)
            .map_err(|e| GraspError::io(p, e))?;
        sets.push(parse_report_tsv(&text)?);
    }
    let mean = average_reports(&sets)?;
    if let Some(dir) = &a.out {
        let files = [dir.join("metrics.tsv"), dir.join("metrics.txt")];
        refuse_existing(&files, a.common.force)?;
        let _lock = OutputLock::acquire(dir)?;
        write_text(&files[0], &report_tsv(&mean))?;
        write_text(&files[1], &report_table(&mean))?;
    }
    println!("mean over {} input(s)", sets.len());
    print!("{}", report_table(&mean));
    Ok(())
}
