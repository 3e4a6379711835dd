//! Command-line surface: one subcommand per pipeline stage.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::autodiff::LrSchedule;
use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::embed::{
    export_embeddings_with, read_embeddings_csv, write_embeddings_csv, write_tsne_csv,
    EmbedOptions, DEFAULT_EMBED_DEPTH,
};
use crate::error::{Error, Result};
use crate::floorplan::{
    clean_dataset, load_dataset, save_dataset, split_dataset, split_dataset_shuffled, Dataset,
};
use crate::graph::{
    build_graph, load_graphs, save_graphs, CategoryVocab, GraphBuildConfig, RoomGraph,
};
use crate::metrics::write_metrics_csv;
use crate::models::{Model, ModelConfig, ModelKind};
use crate::synth::{generate_synthetic, SynthConfig};
use crate::train::{
    depth_sweep, evaluate_accuracy, train_with_eval, MetricsRow, Split, TrainConfig,
};
use crate::tsne::{tsne_embed, TsneConfig};

#[derive(Debug, Parser)]
#[command(
    name = "roomgraph",
    version,
    about = "Room classification on floor-plan graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic floor-plan dataset (JSONL).
    Synth(SynthArgs),
    /// Clean a dataset and convert it into room graphs (JSONL).
    Build(BuildArgs),
    /// Train one model and write its checkpoint and per-epoch metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a graph file.
    Eval(EvalArgs),
    /// Train every (model, depth) cell and write final train/test metrics.
    Sweep(SweepArgs),
    /// Export node embeddings of an untrained model.
    Embed(EmbedArgs),
    /// Reduce an embedding CSV to two dimensions with exact t-SNE.
    Tsne(TsneArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n_plans: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub rooms_min: usize,
    #[arg(long, default_value_t = 10)]
    pub rooms_max: usize,
    #[arg(long, default_value_t = 0.3)]
    pub nesting_probability: f64,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Graph file; receives the training split when --n-train is given.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.03)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.7)]
    pub nesting_ratio: f64,
    /// Category file, one label per line (default: the eight built-in labels).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Split after cleaning: the first N plans go to --out, the rest to --test-out.
    #[arg(long, requires = "test_out")]
    pub n_train: Option<usize>,
    #[arg(long, requires = "n_train")]
    pub test_out: Option<PathBuf>,
    /// Shuffle plans with this seed before splitting.
    #[arg(long, requires = "n_train")]
    pub shuffle_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.004)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub lr_step: usize,
    #[arg(long, default_value_t = 0.8)]
    pub lr_gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the graph order fixed across epochs.
    #[arg(long)]
    pub no_shuffle: bool,
}

impl TrainFlags {
    fn config(&self, eval_every: Option<usize>) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            schedule: LrSchedule {
                base_lr: self.lr,
                step_size: self.lr_step,
                gamma: self.lr_gamma,
            },
            seed: self.seed,
            shuffle_each_epoch: !self.no_shuffle,
            eval_every,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long)]
    pub model: ModelKind,
    #[arg(long)]
    pub depth: usize,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    #[arg(long)]
    pub out_metrics: PathBuf,
    /// Also report test metrics (at the final epoch unless --eval-every is set).
    #[arg(long)]
    pub test_graphs: Option<PathBuf>,
    #[arg(long, requires = "test_graphs")]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out_metrics: PathBuf,
    /// Split name written to the metrics row.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub graphs_train: PathBuf,
    #[arg(long)]
    pub graphs_test: PathBuf,
    /// Comma-separated model kinds, or `all`.
    #[arg(long, default_value = "all", value_parser = parse_models)]
    pub models: ModelList,
    /// Inclusive range `A..B` or a comma-separated list.
    #[arg(long, default_value = "2..12", value_parser = parse_depths)]
    pub depths: DepthList,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[arg(long)]
    pub out_metrics: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long)]
    pub model: ModelKind,
    #[arg(long, default_value_t = 10_000)]
    pub cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_EMBED_DEPTH)]
    pub depth: usize,
    /// Sample nodes uniformly with this seed instead of taking the first ones.
    #[arg(long)]
    pub sample_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TsneArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200.0)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 12.0)]
    pub early_exaggeration: f64,
    #[arg(long, default_value_t = 250)]
    pub exaggeration_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelList(pub Vec<ModelKind>);

#[derive(Debug, Clone, PartialEq)]
pub struct DepthList(pub Vec<usize>);

pub fn parse_models(s: &str) -> std::result::Result<ModelList, String> {
    if s.trim() == "all" {
        return Ok(ModelList(ModelKind::ALL.to_vec()));
    }
    let kinds = s
        .split(',')
        .map(|k| k.trim().parse::<ModelKind>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(ModelList(kinds))
}

/// `2..12` and `2..=12` are inclusive ranges; otherwise a comma list.
pub fn parse_depths(s: &str) -> std::result::Result<DepthList, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    let depths = if let Some((a, b)) = s.split_once("..") {
        let (lo, hi) = (num(a)?, num(b.trim_start_matches('='))?);
        if lo > hi {
            return Err(format!("empty depth range {s}"));
        }
        (lo..=hi).collect()
    } else {
        s.split(',')
            .map(num)
            .collect::<std::result::Result<Vec<_>, _>>()?
    };
    if depths.contains(&0) {
        return Err("depth must be at least 1".into());
    }
    Ok(DepthList(depths))
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Build(a) => build(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Embed(a) => embed(a),
        Command::Tsne(a) => tsne(a),
    }
}

/// One-line diagnostic printed for a failed command.
pub fn diagnostic(e: &Error) -> String {
    format!("error[{}]: {e}", e.code())
}

fn synth(a: SynthArgs) -> Result<()> {
    let d = generate_synthetic(&SynthConfig {
        n_plans: a.n_plans,
        rooms_min: a.rooms_min,
        rooms_max: a.rooms_max,
        seed: a.seed,
        nesting_probability: a.nesting_probability,
        ..SynthConfig::default()
    })?;
    save_dataset(&d, &a.out)?;
    eprintln!("wrote {} plans to {}", d.len(), a.out.display());
    Ok(())
}

fn to_graphs(d: &Dataset, cfg: &GraphBuildConfig) -> Result<(Vec<RoomGraph>, usize)> {
    let mut graphs = Vec::with_capacity(d.len());
    let mut skipped = 0;
    for p in &d.plans {
        match build_graph(p, &d.vocab, cfg) {
            Ok(g) => graphs.push(g),
            Err(Error::EmptyEdges(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((graphs, skipped))
}

fn write_graph_file(d: &Dataset, cfg: &GraphBuildConfig, path: &Path) -> Result<()> {
    let (graphs, skipped) = to_graphs(d, cfg)?;
    save_graphs(&graphs, path)?;
    eprintln!(
        "wrote {} graphs to {} ({skipped} plans without adjacent rooms skipped)",
        graphs.len(),
        path.display()
    );
    Ok(())
}

fn build(a: BuildArgs) -> Result<()> {
    let cfg = GraphBuildConfig {
        adjacency_threshold: a.threshold,
        nesting_ratio: a.nesting_ratio,
    };
    cfg.validate()?;
    let vocab = match &a.vocab {
        Some(p) => CategoryVocab::load(p)?,
        None => CategoryVocab::default(),
    };
    let (d, removed) = clean_dataset(&load_dataset(&a.input, Some(vocab))?);
    if removed > 0 {
        eprintln!("cleaning dropped {removed} plans");
    }
    match (a.n_train, &a.test_out) {
        (Some(n), Some(test_out)) => {
            let (train, test) = match a.shuffle_seed {
                Some(s) => split_dataset_shuffled(&d, n, s)?,
                None => split_dataset(&d, n)?,
            };
            write_graph_file(&train, &cfg, &a.out)?;
            write_graph_file(&test, &cfg, test_out)
        }
        _ => write_graph_file(&d, &cfg, &a.out),
    }
}

fn read_graphs(path: &Path) -> Result<Vec<RoomGraph>> {
    let graphs = load_graphs(path)?;
    if graphs.is_empty() {
        return Err(Error::EmptyData(format!(
            "{} holds no graphs",
            path.display()
        )));
    }
    Ok(graphs)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let graphs = read_graphs(&a.graphs)?;
    let test = match &a.test_graphs {
        Some(p) => read_graphs(p)?,
        None => Vec::new(),
    };
    let cfg = a.flags.config(a.eval_every);
    let model = Model::init(ModelConfig::new(a.model, a.depth, a.flags.seed))?;
    let out = train_with_eval(model, &graphs, &test, &cfg)?;
    write_checkpoint(
        &out.model,
        cfg.epochs,
        Some(&out.optimizer),
        &a.out_checkpoint,
    )?;
    write_metrics_csv(&out.history, &a.out_metrics)?;
    if let Some(last) = out.history.iter().rev().find(|r| r.split == Split::Train) {
        eprintln!(
            "{} depth {}: epoch {} train loss {:.4} accuracy {:.4}",
            last.model, last.depth, last.epoch, last.loss, last.accuracy
        );
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let graphs = read_graphs(&a.graphs)?;
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let (loss, accuracy) = evaluate_accuracy(&ckpt.model, &graphs)?;
    let row = MetricsRow {
        model: ckpt.model.config.kind,
        depth: ckpt.model.config.depth,
        epoch: ckpt.trained_epochs,
        split: match a.split {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        },
        loss,
        accuracy,
    };
    write_metrics_csv(std::slice::from_ref(&row), &a.out_metrics)?;
    eprintln!(
        "{} {}: loss {loss:.4} accuracy {accuracy:.4}",
        row.model, row.split
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let train = read_graphs(&a.graphs_train)?;
    let test = read_graphs(&a.graphs_test)?;
    let rows = depth_sweep(
        &a.models.0,
        &a.depths.0,
        &train,
        &test,
        &a.flags.config(None),
    )?;
    write_metrics_csv(&rows, &a.out_metrics)?;
    eprintln!("wrote {} rows to {}", rows.len(), a.out_metrics.display());
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let graphs = read_graphs(&a.graphs)?;
    let dump = export_embeddings_with(
        a.model,
        &graphs,
        &EmbedOptions {
            depth: a.depth,
            cap: a.cap,
            seed: a.seed,
            sample_seed: a.sample_seed,
        },
    )?;
    write_embeddings_csv(&dump, &a.out)?;
    eprintln!("wrote {} embeddings to {}", dump.len(), a.out.display());
    Ok(())
}

fn tsne(a: TsneArgs) -> Result<()> {
    let dump = read_embeddings_csv(&a.input)?;
    let x = dump.matrix()?;
    let cfg = TsneConfig {
        perplexity: a.perplexity,
        iterations: a.iterations,
        learning_rate: a.learning_rate,
        early_exaggeration: a.early_exaggeration,
        exaggeration_iterations: a.exaggeration_iterations,
        seed: a.seed,
        ..TsneConfig::default()
    };
    let out = tsne_embed(&x, &cfg)?;
    write_tsne_csv(&dump, &out.embedding, &a.out)?;
    eprintln!(
        "wrote {} points to {} (KL {:.4})",
        dump.len(),
        a.out.display(),
        out.kl_divergence
    );
    Ok(())
}
