//! Mini-batch training, accuracy evaluation and the depth sweep.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, lr_at_epoch, AdamState, Indices, LrSchedule, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{batch_graph_refs, RoomGraph};
use crate::models::{Model, ModelConfig, ModelKind, Readout};

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Graphs per mini-batch; the last partial batch is kept.
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
    /// Emit a test row every this many epochs (final epoch always included)
    /// when test graphs are supplied.
    pub eval_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            schedule: LrSchedule::default(),
            seed: 0,
            shuffle_each_epoch: true,
            eval_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::BadConfig(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        let s = &self.schedule;
        // A zero base rate is accepted as a null optimizer.
        if !(s.base_lr >= 0.0) || !(s.gamma > 0.0 && s.gamma <= 1.0) || s.step_size < 1 {
            return Err(Error::BadConfig(format!("invalid lr schedule {s:?}")));
        }
        if self.eval_every == Some(0) {
            return Err(Error::BadConfig("eval_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One line of the metrics CSV. `epoch` counts completed epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: ModelKind,
    pub depth: usize,
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<MetricsRow>,
    /// Learning rate applied in each epoch.
    pub lr_trace: Vec<f64>,
    pub optimizer: AdamState,
}

fn check_graphs(model: &Model, graphs: &[RoomGraph]) -> Result<()> {
    if graphs.is_empty() {
        return Err(Error::EmptyData("no graphs".into()));
    }
    let cfg = &model.config;
    for g in graphs {
        if g.features.cols() != cfg.in_dim || g.features.rows() != g.labels.len() {
            return Err(Error::Shape(format!(
                "graph {} has shape {:?} with {} labels",
                g.plan_id,
                g.features.shape(),
                g.labels.len()
            )));
        }
        if let Some(&y) = g.labels.iter().find(|&&y| y >= cfg.out_dim) {
            return Err(Error::Shape(format!(
                "graph {} has label {y} but the model has {} classes",
                g.plan_id, cfg.out_dim
            )));
        }
    }
    Ok(())
}

/// Class with the largest logit per row; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Trains without monitoring a test set.
pub fn train(model: Model, graphs: &[RoomGraph], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_eval(model, graphs, &[], cfg)
}

/// Trains `model`, appending one train row per epoch and, when `test` is
/// non-empty, test rows every `cfg.eval_every` epochs and at the end.
pub fn train_with_eval(
    mut model: Model,
    graphs: &[RoomGraph],
    test: &[RoomGraph],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_graphs(&model, graphs)?;
    if !test.is_empty() {
        check_graphs(&model, test)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut adam = AdamState::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut lr_trace = Vec::with_capacity(cfg.epochs);
    let (kind, depth) = (model.config.kind, model.config.depth);

    for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(&cfg.schedule, epoch);
        lr_trace.push(lr);
        if cfg.shuffle_each_epoch {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut nodes = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&RoomGraph> = chunk.iter().map(|&i| &graphs[i]).collect();
            let batch = batch_graph_refs(&refs)?;
            let labels: Indices = batch.labels.as_slice().into();

            let tape = Tape::new();
            let params = model.param_vars(&tape, true);
            let logits = model.forward_on_tape(&tape, &batch, &params, Readout::Logits)?;
            let loss = logits.softmax_cross_entropy(&labels)?;
            let grads = tape.backward(loss)?;

            let n = labels.len();
            loss_sum += loss.value().data()[0] * n as f64;
            nodes += n;
            correct += argmax_rows(&logits.value())
                .iter()
                .zip(labels.iter())
                .filter(|(p, y)| p == y)
                .count();

            let grads: Vec<Tensor> = params.iter().map(|&p| grads.get(p)).collect();
            drop(tape);
            adam_step(&mut model.params_mut(), &grads, &mut adam, lr)?;
        }
        history.push(MetricsRow {
            model: kind,
            depth,
            epoch: epoch + 1,
            split: Split::Train,
            loss: loss_sum / nodes as f64,
            accuracy: correct as f64 / nodes as f64,
        });
        let last = epoch + 1 == cfg.epochs;
        let due = cfg.eval_every.is_some_and(|k| (epoch + 1) % k == 0);
        if !test.is_empty() && (last || due) {
            let (loss, accuracy) = evaluate_accuracy(&model, test)?;
            history.push(MetricsRow {
                model: kind,
                depth,
                epoch: epoch + 1,
                split: Split::Test,
                loss,
                accuracy,
            });
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        lr_trace,
        optimizer: adam,
    })
}

/// Mean node cross-entropy and node-level micro accuracy over `graphs`.
pub fn evaluate_accuracy(model: &Model, graphs: &[RoomGraph]) -> Result<(f64, f64)> {
    check_graphs(model, graphs)?;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut total = 0usize;
    for chunk in graphs.chunks(EVAL_CHUNK) {
        let refs: Vec<&RoomGraph> = chunk.iter().collect();
        let batch = batch_graph_refs(&refs)?;
        let logits = model.forward(&batch)?;
        let labels: Indices = batch.labels.as_slice().into();
        let tape = Tape::new();
        let loss = tape
            .constant(logits.clone())
            .softmax_cross_entropy(&labels)?;
        loss_sum += loss.value().data()[0] * labels.len() as f64;
        correct += argmax_rows(&logits)
            .iter()
            .zip(labels.iter())
            .filter(|(p, y)| p == y)
            .count();
        total += labels.len();
    }
    Ok((loss_sum / total as f64, correct as f64 / total as f64))
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeds for one sweep cell: `(model init seed, training shuffle seed)`.
pub fn cell_seeds(base: u64, kind: ModelKind, depth: usize) -> (u64, u64) {
    let k = ModelKind::ALL.iter().position(|&x| x == kind).unwrap_or(0) as u64;
    let s = mix(mix(mix(base) ^ k) ^ depth as u64);
    (s, mix(s ^ 0x5EED))
}

/// Trains one `(kind, depth)` cell and returns its final train and test rows.
pub fn run_cell(
    kind: ModelKind,
    depth: usize,
    train_graphs: &[RoomGraph],
    test_graphs: &[RoomGraph],
    cfg: &TrainConfig,
) -> Result<Vec<MetricsRow>> {
    let wrap = |e: Error| Error::Cell {
        kind,
        depth,
        source: Box::new(e),
    };
    let (init_seed, train_seed) = cell_seeds(cfg.seed, kind, depth);
    let model = Model::init(ModelConfig::new(kind, depth, init_seed)).map_err(wrap)?;
    let cell_cfg = TrainConfig {
        seed: train_seed,
        eval_every: None,
        ..cfg.clone()
    };
    let outcome = train(model, train_graphs, &cell_cfg).map_err(wrap)?;
    let mut rows = Vec::with_capacity(2);
    for (split, graphs) in [(Split::Train, train_graphs), (Split::Test, test_graphs)] {
        let (loss, accuracy) = evaluate_accuracy(&outcome.model, graphs).map_err(wrap)?;
        rows.push(MetricsRow {
            model: kind,
            depth,
            epoch: cfg.epochs,
            split,
            loss,
            accuracy,
        });
    }
    Ok(rows)
}

/// Every `(kind, depth)` cell, trained in parallel; rows come back ordered by
/// kind then depth as listed, train before test.
pub fn depth_sweep(
    kinds: &[ModelKind],
    depths: &[usize],
    train_graphs: &[RoomGraph],
    test_graphs: &[RoomGraph],
    cfg: &TrainConfig,
) -> Result<Vec<MetricsRow>> {
    if kinds.is_empty() || depths.is_empty() {
        return Err(Error::EmptyData(
            "sweep needs at least one kind and one depth".into(),
        ));
    }
    let cells: Vec<(ModelKind, usize)> = kinds
        .iter()
        .flat_map(|&k| depths.iter().map(move |&d| (k, d)))
        .collect();
    let results: Vec<Result<Vec<MetricsRow>>> = cells
        .par_iter()
        .map(|&(k, d)| run_cell(k, d, train_graphs, test_graphs, cfg))
        .collect();
    let mut rows = Vec::with_capacity(2 * cells.len());
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}
