//! Node embeddings from untrained models, and the CSV files that carry them
//! into t-SNE.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::{batch_graph_refs, RoomGraph};
use crate::models::{Model, ModelConfig, ModelKind};

pub const DEFAULT_NODE_CAP: usize = 10_000;
pub const DEFAULT_EMBED_DEPTH: usize = 3;
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub plan_id: String,
    pub node: usize,
    pub label: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingDump {
    pub rows: Vec<EmbeddingRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedOptions {
    pub depth: usize,
    pub cap: usize,
    pub seed: u64,
    /// Sample `cap` nodes uniformly instead of taking the first ones.
    pub sample_seed: Option<u64>,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        EmbedOptions {
            depth: DEFAULT_EMBED_DEPTH,
            cap: DEFAULT_NODE_CAP,
            seed: 0,
            sample_seed: None,
        }
    }
}

/// Embeddings of the first `cap` nodes (in dataset order) under an untrained
/// depth-3 model of `kind`.
pub fn export_embeddings(
    kind: ModelKind,
    graphs: &[RoomGraph],
    cap: usize,
    seed: u64,
) -> Result<EmbeddingDump> {
    export_embeddings_with(
        kind,
        graphs,
        &EmbedOptions {
            cap,
            seed,
            ..EmbedOptions::default()
        },
    )
}

pub fn export_embeddings_with(
    kind: ModelKind,
    graphs: &[RoomGraph],
    opts: &EmbedOptions,
) -> Result<EmbeddingDump> {
    if graphs.is_empty() {
        return Err(Error::EmptyData("no graphs to embed".into()));
    }
    let model = Model::init(ModelConfig::new(kind, opts.depth, opts.seed))?;
    let total: usize = graphs.iter().map(|g| g.labels.len()).sum();
    let take = opts.cap.min(total);
    // Flat node indices to keep, ascending.
    let keep: Option<Vec<usize>> = opts.sample_seed.map(|s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut idx = rand::seq::index::sample(&mut rng, total, take).into_vec();
        idx.sort_unstable();
        idx
    });
    let wanted = |flat: usize| match &keep {
        None => flat < take,
        Some(k) => k.binary_search(&flat).is_ok(),
    };

    let mut rows = Vec::with_capacity(take);
    let mut flat = 0usize;
    for chunk in graphs.chunks(CHUNK) {
        if keep.is_none() && flat >= take {
            break;
        }
        let refs: Vec<&RoomGraph> = chunk.iter().collect();
        let batch = batch_graph_refs(&refs)?;
        let emb = model.embeddings(&batch)?;
        let mut offset = 0;
        for g in chunk {
            for node in 0..g.labels.len() {
                if wanted(flat) {
                    rows.push(EmbeddingRow {
                        plan_id: g.plan_id.clone(),
                        node,
                        label: g.labels[node],
                        values: emb.row(offset + node).to_vec(),
                    });
                }
                flat += 1;
            }
            offset += g.labels.len();
        }
    }
    Ok(EmbeddingDump { rows })
}

impl EmbeddingDump {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Embedding values as an `n x d` matrix.
    pub fn matrix(&self) -> Result<Tensor> {
        if self.rows.is_empty() {
            return Err(Error::EmptyData("empty embedding dump".into()));
        }
        let rows: Vec<Vec<f64>> = self.rows.iter().map(|r| r.values.clone()).collect();
        Tensor::from_rows(&rows)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema {
            line,
            message: format!("{other:?}"),
        },
    }
}

fn write_rows<'a>(
    path: &Path,
    value_names: &[String],
    rows: impl Iterator<Item = (&'a str, usize, usize, &'a [f64])>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["plan_id".to_string(), "node".into(), "label".into()];
    header.extend(value_names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (plan_id, node, label, values) in rows {
        let mut rec = vec![plan_id.to_string(), node.to_string(), label.to_string()];
        rec.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header `plan_id,node,label,e0..e{d-1}`.
pub fn write_embeddings_csv(dump: &EmbeddingDump, path: &Path) -> Result<()> {
    let dim = dump.rows.first().map_or(0, |r| r.values.len());
    let names: Vec<String> = (0..dim).map(|i| format!("e{i}")).collect();
    write_rows(
        path,
        &names,
        dump.rows
            .iter()
            .map(|r| (r.plan_id.as_str(), r.node, r.label, r.values.as_slice())),
    )
}

/// Header `plan_id,node,label,x,y`, one line per embedding row.
pub fn write_tsne_csv(dump: &EmbeddingDump, coords: &Tensor, path: &Path) -> Result<()> {
    if coords.shape() != [dump.len(), 2] {
        return Err(Error::Shape(format!(
            "{} rows but coordinates of shape {:?}",
            dump.len(),
            coords.shape()
        )));
    }
    write_rows(
        path,
        &["x".to_string(), "y".to_string()],
        dump.rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.plan_id.as_str(), r.node, r.label, coords.row(i))),
    )
}

/// Reads any `plan_id,node,label,<values...>` file (embeddings or t-SNE
/// coordinates).
pub fn read_embeddings_csv(path: &Path) -> Result<EmbeddingDump> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 4 || header.iter().take(3).ne(["plan_id", "node", "label"]) {
        return Err(Error::Schema {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        let bad = |message: String| Error::Schema { line, message };
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
        let values = rec
            .iter()
            .skip(3)
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(EmbeddingRow {
            plan_id: rec[0].to_string(),
            node: int(&rec[1])?,
            label: int(&rec[2])?,
            values,
        });
    }
    Ok(EmbeddingDump { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_graphs() -> Vec<RoomGraph> {
        (0..3)
            .map(|g| RoomGraph {
                plan_id: format!("p{g}"),
                features: Tensor::from_rows(&[
                    vec![0.1 * g as f64, 0.2, 0.3, 1.0, 0.0, 0.0],
                    vec![0.4, 0.5, 0.6, 2.0, 1.0, 0.0],
                    vec![0.7, 0.8, 0.9, 0.0, 0.0, 1.0],
                ])
                .unwrap(),
                edges: vec![(0, 1), (1, 2)],
                labels: vec![0, 3, 7],
            })
            .collect()
    }

    #[test]
    fn cap_truncates_in_order() {
        let d = export_embeddings(ModelKind::Sage, &toy_graphs(), 5, 1).unwrap();
        assert_eq!(d.len(), 5);
        assert_eq!(d.rows[3].plan_id, "p1");
        assert_eq!(d.rows[4].node, 1);
        assert!(d.rows.iter().all(|r| r.values.len() == 16));
    }

    #[test]
    fn large_cap_takes_everything() {
        let d = export_embeddings(ModelKind::Gcn, &toy_graphs(), 100, 1).unwrap();
        assert_eq!(d.len(), 9);
    }

    #[test]
    fn sampling_is_seeded() {
        let opts = EmbedOptions {
            cap: 4,
            sample_seed: Some(9),
            ..EmbedOptions::default()
        };
        let a = export_embeddings_with(ModelKind::Tagcn, &toy_graphs(), &opts).unwrap();
        let b = export_embeddings_with(ModelKind::Tagcn, &toy_graphs(), &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn empty_input() {
        let err = export_embeddings(ModelKind::Mlp, &[], 10, 0).unwrap_err();
        assert_eq!(err.code(), "E_EMPTY_DATA");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let d = export_embeddings(ModelKind::Gat, &toy_graphs(), 100, 3).unwrap();
        write_embeddings_csv(&d, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("plan_id,node,label,e0,e1,"));
        assert!(text.lines().next().unwrap().ends_with(",e15"));
        assert_eq!(read_embeddings_csv(&path).unwrap(), d);
    }
}
