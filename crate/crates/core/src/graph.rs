//! Room-adjacency graphs with six geometric node features.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::floorplan::{normalize_plan, FloorPlanRecord, Rect};

pub const NUM_FEATURES: usize = 6;

pub const DEFAULT_CATEGORIES: [&str; 8] = [
    "living_room",
    "kitchen",
    "bedroom",
    "bathroom",
    "balcony",
    "closet",
    "corridor",
    "dining_room",
];

/// Ordered room-category labels and their class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for CategoryVocab {
    fn default() -> Self {
        CategoryVocab::new(DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect())
            .expect("default vocabulary is valid")
    }
}

impl CategoryVocab {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(Error::BadConfig("empty category label".into()));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::BadConfig(format!("duplicate category {label:?}")));
            }
        }
        Ok(CategoryVocab { labels, index })
    }

    /// Reads one label per line; blank lines are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphBuildConfig {
    pub adjacency_threshold: f64,
    pub nesting_ratio: f64,
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        GraphBuildConfig {
            adjacency_threshold: 0.03,
            nesting_ratio: 0.7,
        }
    }
}

impl GraphBuildConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.adjacency_threshold;
        let r = self.nesting_ratio;
        if !(t > 0.0 && t < 1.0) || !(r > 0.0 && r <= 1.0) {
            return Err(Error::BadConfig(format!(
                "invalid graph build config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Anything a model can run on: a node-feature matrix plus undirected edges.
pub trait GraphInput {
    fn features(&self) -> &Tensor;
    fn edges(&self) -> &[(usize, usize)];

    fn num_nodes(&self) -> usize {
        self.features().rows()
    }
}

/// Undirected graph of one floor plan. Feature columns are
/// area, length, width, door count, is_parent, is_child.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomGraph {
    pub plan_id: String,
    pub features: Tensor,
    pub edges: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
}

impl GraphInput for RoomGraph {
    fn features(&self) -> &Tensor {
        &self.features
    }

    fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

/// Disjoint union of several [`RoomGraph`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchedGraph {
    pub features: Tensor,
    pub edges: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
    pub graph_of_node: Vec<usize>,
    pub plan_ids: Vec<String>,
}

impl GraphInput for BatchedGraph {
    fn features(&self) -> &Tensor {
        &self.features
    }

    fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

impl BatchedGraph {
    pub fn num_graphs(&self) -> usize {
        self.plan_ids.len()
    }

    /// Splits the batch back into its constituent graphs.
    pub fn unbatch(&self) -> Vec<RoomGraph> {
        let k = self.num_graphs();
        let mut counts = vec![0usize; k];
        for &g in &self.graph_of_node {
            counts[g] += 1;
        }
        let mut offsets = vec![0usize; k];
        for g in 1..k {
            offsets[g] = offsets[g - 1] + counts[g - 1];
        }
        let mut out: Vec<RoomGraph> = (0..k)
            .map(|g| RoomGraph {
                plan_id: self.plan_ids[g].clone(),
                features: Tensor::zeros(&[0, NUM_FEATURES]),
                edges: Vec::new(),
                labels: Vec::new(),
            })
            .collect();
        let f = self.features.cols();
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); k];
        for (node, &g) in self.graph_of_node.iter().enumerate() {
            rows[g].extend_from_slice(self.features.row(node));
            out[g].labels.push(self.labels[node]);
        }
        for (g, data) in rows.into_iter().enumerate() {
            out[g].features = Tensor::from_parts(vec![counts[g], f], data);
        }
        for &(a, b) in &self.edges {
            let g = self.graph_of_node[a];
            out[g].edges.push((a - offsets[g], b - offsets[g]));
        }
        out
    }
}

/// Minimum Euclidean distance between two closed rectangles; zero when they
/// touch or overlap.
pub fn rect_gap_distance(a: &Rect, b: &Rect) -> f64 {
    let dx = (b.x_min - a.x_max).max(a.x_min - b.x_max).max(0.0);
    let dy = (b.y_min - a.y_max).max(a.y_min - b.y_max).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

/// Pairs `(i, j)`, `i < j`, whose rooms lie strictly closer than the threshold.
pub fn build_adjacency(p: &FloorPlanRecord, cfg: &GraphBuildConfig) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..p.rooms.len() {
        for j in i + 1..p.rooms.len() {
            if rect_gap_distance(&p.rooms[i].bbox, &p.rooms[j].bbox) < cfg.adjacency_threshold {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Room `i` is a child of `j` when their overlap covers more than
/// `nesting_ratio` of room `i`'s area; `j` is then a parent.
pub fn detect_nesting(p: &FloorPlanRecord, cfg: &GraphBuildConfig) -> (Vec<bool>, Vec<bool>) {
    let n = p.rooms.len();
    let mut is_parent = vec![false; n];
    let mut is_child = vec![false; n];
    for i in 0..n {
        let inner = &p.rooms[i].bbox;
        let area = inner.area();
        for j in 0..n {
            if i == j {
                continue;
            }
            if inner.intersection_area(&p.rooms[j].bbox) > cfg.nesting_ratio * area {
                is_child[i] = true;
                is_parent[j] = true;
            }
        }
    }
    (is_parent, is_child)
}

/// Door-bearing walls per room; a shared wall counts for every room it lists.
pub fn count_doors(p: &FloorPlanRecord) -> Vec<usize> {
    let mut doors = vec![0; p.rooms.len()];
    for wall in p.walls.iter().filter(|w| w.has_door) {
        for &r in &wall.room_ids {
            if let Some(d) = doors.get_mut(r) {
                *d += 1;
            }
        }
    }
    doors
}

pub fn extract_features(p: &FloorPlanRecord, cfg: &GraphBuildConfig) -> Tensor {
    let (is_parent, is_child) = detect_nesting(p, cfg);
    let doors = count_doors(p);
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let mut data = Vec::with_capacity(p.rooms.len() * NUM_FEATURES);
    for (i, room) in p.rooms.iter().enumerate() {
        let (dx, dy) = (room.bbox.dx(), room.bbox.dy());
        data.extend_from_slice(&[
            dx * dy,
            dx.max(dy),
            dx.min(dy),
            doors[i] as f64,
            flag(is_parent[i]),
            flag(is_child[i]),
        ]);
    }
    Tensor::from_parts(vec![p.rooms.len(), NUM_FEATURES], data)
}

pub fn build_graph(
    p: &FloorPlanRecord,
    vocab: &CategoryVocab,
    cfg: &GraphBuildConfig,
) -> Result<RoomGraph> {
    let labels = p
        .rooms
        .iter()
        .map(|r| {
            vocab
                .index(&r.category)
                .ok_or_else(|| Error::UnknownCategory {
                    plan: p.id.clone(),
                    category: r.category.clone(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let normalized = normalize_plan(p)?;
    let features = extract_features(&normalized, cfg);
    let edges = build_adjacency(&normalized, cfg);
    if edges.is_empty() {
        return Err(Error::EmptyEdges(p.id.clone()));
    }
    Ok(RoomGraph {
        plan_id: p.id.clone(),
        features,
        edges,
        labels,
    })
}

pub fn batch_graphs(gs: &[RoomGraph]) -> Result<BatchedGraph> {
    batch_graph_refs(&gs.iter().collect::<Vec<_>>())
}

pub fn batch_graph_refs(gs: &[&RoomGraph]) -> Result<BatchedGraph> {
    if gs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let f = gs[0].features.cols();
    let total: usize = gs.iter().map(|g| g.features.rows()).sum();
    let mut data = Vec::with_capacity(total * f);
    let mut edges = Vec::new();
    let mut labels = Vec::with_capacity(total);
    let mut graph_of_node = Vec::with_capacity(total);
    let mut offset = 0;
    for (k, g) in gs.iter().enumerate() {
        if g.features.cols() != f {
            return Err(Error::Shape(format!(
                "batch_graphs: graph {} has {} features, expected {f}",
                g.plan_id,
                g.features.cols()
            )));
        }
        let n = g.features.rows();
        data.extend_from_slice(g.features.data());
        edges.extend(g.edges.iter().map(|&(a, b)| (a + offset, b + offset)));
        labels.extend_from_slice(&g.labels);
        graph_of_node.extend(std::iter::repeat(k).take(n));
        offset += n;
    }
    Ok(BatchedGraph {
        features: Tensor::from_parts(vec![total, f], data),
        edges,
        labels,
        graph_of_node,
        plan_ids: gs.iter().map(|g| g.plan_id.clone()).collect(),
    })
}

#[derive(Serialize, Deserialize)]
struct GraphDump {
    plan_id: String,
    x: Vec<Vec<f64>>,
    edges: Vec<[usize; 2]>,
    y: Vec<usize>,
}

pub fn save_graphs(graphs: &[RoomGraph], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for g in graphs {
        let dump = GraphDump {
            plan_id: g.plan_id.clone(),
            x: g.features.to_rows(),
            edges: g.edges.iter().map(|&(a, b)| [a, b]).collect(),
            y: g.labels.clone(),
        };
        let line = serde_json::to_string(&dump).expect("graph serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_graphs(path: &Path) -> Result<Vec<RoomGraph>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::Schema {
            line: i + 1,
            message,
        };
        let dump: GraphDump = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        let n = dump.x.len();
        if dump.y.len() != n {
            return Err(schema(format!(
                "{n} feature rows but {} labels",
                dump.y.len()
            )));
        }
        if dump.x.iter().any(|r| r.len() != NUM_FEATURES) {
            return Err(schema(format!(
                "feature rows must have {NUM_FEATURES} values"
            )));
        }
        if dump.edges.iter().any(|&[a, b]| a >= n || b >= n || a == b) {
            return Err(schema("edge endpoint out of range or self-edge".into()));
        }
        out.push(RoomGraph {
            plan_id: dump.plan_id,
            features: Tensor::from_rows(&dump.x).map_err(|e| schema(e.to_string()))?,
            edges: dump.edges.into_iter().map(|[a, b]| (a, b)).collect(),
            labels: dump.y,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floorplan::{RoomRecord, WallRecord};

    fn plan(rects: &[[f64; 4]]) -> FloorPlanRecord {
        FloorPlanRecord {
            id: "t".into(),
            rooms: rects
                .iter()
                .map(|&b| RoomRecord {
                    bbox: b.into(),
                    category: "bedroom".into(),
                })
                .collect(),
            walls: Vec::new(),
            source_image: None,
        }
    }

    fn door(rooms: &[usize]) -> WallRecord {
        WallRecord {
            p1: [0.0, 0.0],
            p2: [0.0, 0.0],
            room_ids: rooms.to_vec(),
            has_door: true,
        }
    }

    #[test]
    fn gap_distance_cases() {
        let r = |v: [f64; 4]| Rect::from(v);
        assert_eq!(
            rect_gap_distance(&r([0., 0., 1., 1.]), &r([0.5, 0.5, 2., 2.])),
            0.0
        );
        let d = rect_gap_distance(&r([0., 0., 0.5, 0.5]), &r([0.52, 0., 1., 0.5]));
        assert!((d - 0.02).abs() < 1e-12);
        assert_eq!(
            rect_gap_distance(&r([0., 0., 1., 1.]), &r([4., 5., 5., 6.])),
            5.0
        );
        assert_eq!(
            rect_gap_distance(&r([4., 5., 5., 6.]), &r([0., 0., 1., 1.])),
            5.0
        );
    }

    #[test]
    fn adjacency_threshold_is_strict() {
        let cfg = GraphBuildConfig::default();
        assert_eq!(
            build_adjacency(&plan(&[[0., 0., 0.5, 0.5], [0.52, 0., 1., 0.5]]), &cfg),
            vec![(0, 1)]
        );
        assert!(
            build_adjacency(&plan(&[[0., 0., 0.5, 0.5], [0.55, 0., 1., 0.5]]), &cfg).is_empty()
        );
        // 0.06 is exactly twice 0.03 in binary, so the gap is exactly the threshold.
        assert!(
            build_adjacency(&plan(&[[0., 0., 0.03, 0.5], [0.06, 0., 1., 0.5]]), &cfg).is_empty()
        );
    }

    #[test]
    fn nesting_cases() {
        let cfg = GraphBuildConfig::default();
        let (parent, child) =
            detect_nesting(&plan(&[[0.1, 0.1, 0.2, 0.2], [0., 0., 0.5, 0.5]]), &cfg);
        assert_eq!((parent, child), (vec![false, true], vec![true, false]));

        let half = plan(&[[0., 0., 1., 1.], [0.5, 0., 2., 1.]]);
        assert_eq!(
            detect_nesting(&half, &cfg),
            (vec![false; 2], vec![false; 2])
        );

        let exact = plan(&[[0., 0., 1., 1.], [0., 0., 0.7, 5.]]);
        let (p, c) = detect_nesting(&exact, &cfg);
        assert!(!c[0] && !p[1]);
    }

    #[test]
    fn door_counts() {
        let mut p = plan(&[[0., 0., 1., 1.], [1., 0., 2., 1.], [2., 0., 3., 1.]]);
        p.walls = vec![door(&[0, 1]), door(&[2]), door(&[2]), door(&[2])];
        p.walls.push(WallRecord {
            has_door: false,
            ..door(&[0])
        });
        assert_eq!(count_doors(&p), vec![1, 1, 3]);
    }

    #[test]
    fn feature_rows() {
        let mut p = plan(&[[0.2, 0.3, 0.6, 0.8]]);
        p.walls = vec![door(&[0])];
        let f = extract_features(&p, &GraphBuildConfig::default());
        let expected = [0.2, 0.5, 0.4, 1.0, 0.0, 0.0];
        for (a, b) in f.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let unit = extract_features(&plan(&[[0., 0., 1., 1.]]), &GraphBuildConfig::default());
        assert_eq!(unit.row(0), &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);

        let nested = extract_features(
            &plan(&[[0.1, 0.1, 0.2, 0.2], [0., 0., 0.5, 0.5]]),
            &GraphBuildConfig::default(),
        );
        assert_eq!(&nested.row(0)[4..], &[0.0, 1.0]);
        assert_eq!(&nested.row(1)[4..], &[1.0, 0.0]);
    }

    #[test]
    fn build_graph_outcomes() {
        let vocab = CategoryVocab::default();
        let cfg = GraphBuildConfig::default();
        let tri = plan(&[[0., 0., 1., 1.], [1., 0., 2., 1.], [0., 1., 2., 2.]]);
        let g = build_graph(&tri, &vocab, &cfg).unwrap();
        assert_eq!(g.features.shape(), &[3, 6]);
        assert_eq!(g.edges, vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(g.labels, vec![2, 2, 2]);

        let mut alien = tri.clone();
        alien.rooms[1].category = "spaceship".into();
        assert!(matches!(
            build_graph(&alien, &vocab, &cfg),
            Err(Error::UnknownCategory { .. })
        ));

        let apart = plan(&[[0., 0., 0.25, 0.25], [0.75, 0.75, 1., 1.]]);
        assert!(matches!(
            build_graph(&apart, &vocab, &cfg),
            Err(Error::EmptyEdges(_))
        ));
    }

    fn graph(n: usize, edges: &[(usize, usize)], tag: f64) -> RoomGraph {
        let data = (0..n * 6).map(|i| tag + i as f64).collect();
        RoomGraph {
            plan_id: format!("g{tag}"),
            features: Tensor::new(vec![n, 6], data).unwrap(),
            edges: edges.to_vec(),
            labels: (0..n).collect(),
        }
    }

    #[test]
    fn batching_offsets_and_identity() {
        let a = graph(3, &[(0, 1), (1, 2)], 0.0);
        let b = graph(4, &[(0, 1)], 100.0);
        let batch = batch_graphs(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(batch.features.rows(), 7);
        assert_eq!(batch.edges, vec![(0, 1), (1, 2), (3, 4)]);
        assert_eq!(batch.unbatch(), vec![a.clone(), b]);

        let single = batch_graphs(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.unbatch(), vec![a]);
        assert!(matches!(batch_graphs(&[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn vocab_rejects_duplicates() {
        assert!(CategoryVocab::new(vec!["a".into(), "a".into()]).is_err());
        assert_eq!(CategoryVocab::default().len(), 8);
        assert_eq!(CategoryVocab::default().index("closet"), Some(5));
    }
}
