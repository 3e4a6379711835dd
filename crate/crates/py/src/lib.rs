//! Python bindings for `roomgraph`.
//!
//! Matrices cross the boundary as lists of row lists. Library errors raise
//! `RoomgraphError` with the stable error code as the message prefix.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use roomgraph::autodiff::{lr_at_epoch as schedule_lr, LrSchedule, Tensor};
use roomgraph::checkpoint::{load_checkpoint, save_checkpoint};
use roomgraph::embed::{export_embeddings_with, EmbedOptions};
use roomgraph::floorplan::{self, Rect};
use roomgraph::graph::{self, CategoryVocab, GraphBuildConfig, RoomGraph};
use roomgraph::models::{self, ModelConfig, ModelKind};
use roomgraph::synth::{self, SynthConfig};
use roomgraph::train::{self, TrainConfig};
use roomgraph::tsne::{self, TsneConfig};

create_exception!(roomgraph_py, RoomgraphError, PyValueError);

fn err(e: roomgraph::Error) -> PyErr {
    RoomgraphError::new_err(format!("{}: {e}", e.code()))
}

fn tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(err)
}

fn parse_kind(kind: &str) -> PyResult<ModelKind> {
    kind.parse().map_err(err)
}

/// A floor-plan dataset with its category vocabulary.
#[pyclass(module = "roomgraph_py", skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: floorplan::Dataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = floorplan::load_dataset(&path, Some(CategoryVocab::default())).map_err(err)?;
        Ok(Dataset { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        floorplan::save_dataset(&self.inner, &path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn plan_ids(&self) -> Vec<String> {
        self.inner.plans.iter().map(|p| p.id.clone()).collect()
    }

    #[getter]
    fn categories(&self) -> Vec<String> {
        self.inner.vocab.labels().to_vec()
    }

    /// Returns the cleaned dataset and the number of plans dropped.
    fn clean(&self) -> (Dataset, usize) {
        let (inner, removed) = floorplan::clean_dataset(&self.inner);
        (Dataset { inner }, removed)
    }

    #[pyo3(signature = (n_train, shuffle_seed=None))]
    fn split(&self, n_train: usize, shuffle_seed: Option<u64>) -> PyResult<(Dataset, Dataset)> {
        let (a, b) = match shuffle_seed {
            Some(s) => floorplan::split_dataset_shuffled(&self.inner, n_train, s),
            None => floorplan::split_dataset(&self.inner, n_train),
        }
        .map_err(err)?;
        Ok((Dataset { inner: a }, Dataset { inner: b }))
    }

    /// Converts every plan into a room graph.
    #[pyo3(signature = (threshold=0.03, nesting_ratio=0.7))]
    fn build_graphs(&self, threshold: f64, nesting_ratio: f64) -> PyResult<Vec<Graph>> {
        let cfg = GraphBuildConfig {
            adjacency_threshold: threshold,
            nesting_ratio,
        };
        cfg.validate().map_err(err)?;
        self.inner
            .plans
            .iter()
            .map(|p| {
                graph::build_graph(p, &self.inner.vocab, &cfg)
                    .map(|inner| Graph { inner })
                    .map_err(err)
            })
            .collect()
    }
}

/// Labeled room graph of one plan.
#[pyclass(module = "roomgraph_py", from_py_object)]
#[derive(Clone)]
struct Graph {
    inner: RoomGraph,
}

#[pymethods]
impl Graph {
    #[new]
    fn new(
        plan_id: String,
        features: Vec<Vec<f64>>,
        edges: Vec<(usize, usize)>,
        labels: Vec<usize>,
    ) -> PyResult<Self> {
        let features = tensor(features)?;
        let n = features.rows();
        if labels.len() != n || edges.iter().any(|&(a, b)| a >= n || b >= n) {
            return Err(RoomgraphError::new_err(
                "E_SHAPE: labels or edges do not match the feature rows",
            ));
        }
        Ok(Graph {
            inner: RoomGraph {
                plan_id,
                features,
                edges,
                labels,
            },
        })
    }

    #[getter]
    fn plan_id(&self) -> String {
        self.inner.plan_id.clone()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features.to_rows()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.labels.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(plan_id={:?}, nodes={}, edges={})",
            self.inner.plan_id,
            self.inner.labels.len(),
            self.inner.edges.len()
        )
    }
}

fn unwrap_graphs(graphs: &[Graph]) -> Vec<RoomGraph> {
    graphs.iter().map(|g| g.inner.clone()).collect()
}

/// Node classifier of one kind and depth.
#[pyclass(module = "roomgraph_py", skip_from_py_object)]
#[derive(Clone)]
struct Model {
    inner: models::Model,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (kind, depth, seed=0))]
    fn new(kind: &str, depth: usize, seed: u64) -> PyResult<Self> {
        let cfg = ModelConfig::new(parse_kind(kind)?, depth, seed);
        Ok(Model {
            inner: models::Model::init(cfg).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: load_checkpoint(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.config.kind.name()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.config.depth
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    /// `N x 8` logits.
    fn forward(&self, graph: &Graph) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.forward(&graph.inner).map_err(err)?.to_rows())
    }

    /// `N x 16` post-ReLU activations of the last hidden layer.
    fn embeddings(&self, graph: &Graph) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.embeddings(&graph.inner).map_err(err)?.to_rows())
    }

    fn predict(&self, graph: &Graph) -> PyResult<Vec<usize>> {
        Ok(train::argmax_rows(
            &self.inner.forward(&graph.inner).map_err(err)?,
        ))
    }

    /// Trains in place and returns the per-epoch metrics as dicts.
    #[pyo3(signature = (graphs, epochs=100, batch_size=128, lr=0.004, lr_step=10, lr_gamma=0.8, seed=0, test_graphs=None))]
    #[allow(clippy::too_many_arguments)]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        graphs: Vec<Graph>,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        lr_step: usize,
        lr_gamma: f64,
        seed: u64,
        test_graphs: Option<Vec<Graph>>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let cfg = TrainConfig {
            epochs,
            batch_size,
            schedule: LrSchedule {
                base_lr: lr,
                step_size: lr_step,
                gamma: lr_gamma,
            },
            seed,
            ..TrainConfig::default()
        };
        let train_set = unwrap_graphs(&graphs);
        let test_set = test_graphs
            .as_deref()
            .map(unwrap_graphs)
            .unwrap_or_default();
        let model = self.inner.clone();
        let out = py
            .detach(|| train::train_with_eval(model, &train_set, &test_set, &cfg))
            .map_err(err)?;
        self.inner = out.model;
        out.history
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("model", r.model.name())?;
                d.set_item("depth", r.depth)?;
                d.set_item("epoch", r.epoch)?;
                d.set_item("split", r.split.to_string())?;
                d.set_item("loss", r.loss)?;
                d.set_item("accuracy", r.accuracy)?;
                Ok(d)
            })
            .collect()
    }

    /// `(mean loss, node accuracy)` over the graphs.
    fn evaluate(&self, graphs: Vec<Graph>) -> PyResult<(f64, f64)> {
        train::evaluate_accuracy(&self.inner, &unwrap_graphs(&graphs)).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind={:?}, depth={}, params={})",
            self.kind(),
            self.depth(),
            self.num_params()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (n_plans, seed=0, rooms_min=3, rooms_max=10))]
fn generate_synthetic(
    n_plans: usize,
    seed: u64,
    rooms_min: usize,
    rooms_max: usize,
) -> PyResult<Dataset> {
    let inner = synth::generate_synthetic(&SynthConfig {
        n_plans,
        seed,
        rooms_min,
        rooms_max,
        ..SynthConfig::default()
    })
    .map_err(err)?;
    Ok(Dataset { inner })
}

#[pyfunction]
fn load_graphs(path: PathBuf) -> PyResult<Vec<Graph>> {
    Ok(graph::load_graphs(&path)
        .map_err(err)?
        .into_iter()
        .map(|inner| Graph { inner })
        .collect())
}

#[pyfunction]
fn save_graphs(graphs: Vec<Graph>, path: PathBuf) -> PyResult<()> {
    graph::save_graphs(&unwrap_graphs(&graphs), &path).map_err(err)
}

/// Untrained-model embeddings: list of `(plan_id, node, label, values)`.
#[pyfunction]
#[pyo3(signature = (kind, graphs, cap=10_000, seed=0, depth=3, sample_seed=None))]
fn export_embeddings(
    kind: &str,
    graphs: Vec<Graph>,
    cap: usize,
    seed: u64,
    depth: usize,
    sample_seed: Option<u64>,
) -> PyResult<Vec<(String, usize, usize, Vec<f64>)>> {
    let opts = EmbedOptions {
        depth,
        cap,
        seed,
        sample_seed,
    };
    let dump =
        export_embeddings_with(parse_kind(kind)?, &unwrap_graphs(&graphs), &opts).map_err(err)?;
    Ok(dump
        .rows
        .into_iter()
        .map(|r| (r.plan_id, r.node, r.label, r.values))
        .collect())
}

/// Exact t-SNE; returns `(n x 2 coordinates, final KL divergence)`.
#[pyfunction]
#[pyo3(signature = (points, perplexity=30.0, iterations=1000, seed=0, learning_rate=200.0))]
fn tsne_embed(
    py: Python<'_>,
    points: Vec<Vec<f64>>,
    perplexity: f64,
    iterations: usize,
    seed: u64,
    learning_rate: f64,
) -> PyResult<(Vec<Vec<f64>>, f64)> {
    let x = tensor(points)?;
    let cfg = TsneConfig {
        perplexity,
        iterations,
        seed,
        learning_rate,
        ..TsneConfig::default()
    };
    let out = py.detach(|| tsne::tsne_embed(&x, &cfg)).map_err(err)?;
    Ok((out.embedding.to_rows(), out.kl_divergence))
}

#[pyfunction]
#[pyo3(signature = (epoch, base_lr=0.004, step_size=10, gamma=0.8))]
fn lr_at_epoch(epoch: usize, base_lr: f64, step_size: usize, gamma: f64) -> f64 {
    schedule_lr(
        &LrSchedule {
            base_lr,
            step_size,
            gamma,
        },
        epoch,
    )
}

/// Gap between two `[x0, y0, x1, y1]` boxes; zero when they touch or overlap.
#[pyfunction]
fn rect_gap_distance(a: [f64; 4], b: [f64; 4]) -> f64 {
    graph::rect_gap_distance(&Rect::from(a), &Rect::from(b))
}

#[pymodule]
fn roomgraph_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RoomgraphError", m.py().get_type::<RoomgraphError>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<Graph>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(load_graphs, m)?)?;
    m.add_function(wrap_pyfunction!(save_graphs, m)?)?;
    m.add_function(wrap_pyfunction!(export_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(tsne_embed, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at_epoch, m)?)?;
    m.add_function(wrap_pyfunction!(rect_gap_distance, m)?)?;
    m.add(
        "MODEL_KINDS",
        ModelKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>(),
    )?;
    Ok(())
}
