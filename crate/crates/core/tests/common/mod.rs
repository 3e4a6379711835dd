//! Helpers shared by the integration test targets: random instances,
//! brute-force geometry oracles, finite differences and clustering quality.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roomgraph::autodiff::{Indices, Tape, Tensor};
use roomgraph::floorplan::{FloorPlanRecord, Rect, RoomRecord, WallRecord};
use roomgraph::graph::{build_graph, GraphBuildConfig, RoomGraph};
use roomgraph::models::{Model, Readout};
use roomgraph::synth::{generate_synthetic, SynthConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Feature rows shaped like real ones: positive geometry, integer door
/// counts and 0/1 nesting flags.
pub fn random_features(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let a: f64 = rng.random_range(0.05..1.0);
            let b: f64 = rng.random_range(0.05..1.0);
            vec![
                a * b,
                a.max(b),
                a.min(b),
                rng.random_range(0..4) as f64,
                rng.random_range(0..2) as f64,
                rng.random_range(0..2) as f64,
            ]
        })
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

/// Undirected graph on `n` nodes with each pair joined with probability
/// `p`; at least one edge when `n >= 2`.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> RoomGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    if edges.is_empty() && n >= 2 {
        let i = rng.random_range(0..n - 1);
        edges.push((i, i + 1));
    }
    RoomGraph {
        plan_id: format!("g{}", rng.random::<u32>()),
        features: random_features(rng, n),
        edges,
        labels: (0..n).map(|_| rng.random_range(0..8)).collect(),
    }
}

/// Relabels node `i` as `perm[i]`.
pub fn permute_graph(g: &RoomGraph, perm: &[usize]) -> RoomGraph {
    let n = perm.len();
    let mut rows = vec![Vec::new(); n];
    let mut labels = vec![0; n];
    for i in 0..n {
        rows[perm[i]] = g.features.row(i).to_vec();
        labels[perm[i]] = g.labels[i];
    }
    RoomGraph {
        plan_id: g.plan_id.clone(),
        features: Tensor::from_rows(&rows).unwrap(),
        edges: g.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect(),
        labels,
    }
}

pub fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let mut rows = vec![Vec::new(); perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        rows[p] = t.row(i).to_vec();
    }
    Tensor::from_rows(&rows).unwrap()
}

pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn room(r: Rect, category: &str) -> RoomRecord {
    RoomRecord {
        bbox: r,
        category: category.to_string(),
    }
}

/// A normalized plan with up to `max_rooms` rooms on a 0.01 grid. Every
/// third plan also carries the exact 0.03 gap and 70% overlap boundary
/// configurations.
pub fn random_plan(rng: &mut ChaCha8Rng, max_rooms: usize, k: usize) -> FloorPlanRecord {
    let cats = ["bedroom", "kitchen", "bathroom", "closet"];
    let mut rooms = Vec::new();
    let boundary = k % 3 == 0;
    if boundary {
        rooms.push(room(Rect::new(0.0, 0.0, 0.03, 0.5), "bedroom"));
        rooms.push(room(Rect::new(0.06, 0.0, 1.0, 0.5), "kitchen"));
        rooms.push(room(Rect::new(0.0, 0.0, 1.0, 1.0), "bathroom"));
        rooms.push(room(Rect::new(0.0, 0.0, 0.7, 5.0), "closet"));
    }
    let n = rng.random_range(2..=max_rooms).max(rooms.len());
    while rooms.len() < n {
        let x0 = rng.random_range(0..95);
        let y0 = rng.random_range(0..95);
        let x1 = rng.random_range(x0 + 1..=100);
        let y1 = rng.random_range(y0 + 1..=100);
        let c = cats[rng.random_range(0..cats.len())];
        rooms.push(room(
            Rect::new(
                x0 as f64 / 100.0,
                y0 as f64 / 100.0,
                x1 as f64 / 100.0,
                y1 as f64 / 100.0,
            ),
            c,
        ));
    }
    rooms.shuffle(rng);
    FloorPlanRecord {
        id: format!("plan{k}"),
        rooms,
        walls: Vec::<WallRecord>::new(),
        source_image: None,
    }
}

/// Closed-rectangle distance from projections: zero when both axes overlap,
/// otherwise the nearest corner-to-rectangle distance.
pub fn oracle_gap(a: &Rect, b: &Rect) -> f64 {
    let overlap_x = a.x_min <= b.x_max && b.x_min <= a.x_max;
    let overlap_y = a.y_min <= b.y_max && b.y_min <= a.y_max;
    if overlap_x && overlap_y {
        return 0.0;
    }
    let corner_to_rect = |px: f64, py: f64, r: &Rect| {
        let cx = if px < r.x_min {
            r.x_min - px
        } else if px > r.x_max {
            px - r.x_max
        } else {
            0.0
        };
        let cy = if py < r.y_min {
            r.y_min - py
        } else if py > r.y_max {
            py - r.y_max
        } else {
            0.0
        };
        (cx * cx + cy * cy).sqrt()
    };
    let corners = |r: &Rect| {
        [
            (r.x_min, r.y_min),
            (r.x_min, r.y_max),
            (r.x_max, r.y_min),
            (r.x_max, r.y_max),
        ]
    };
    corners(a)
        .iter()
        .map(|&(x, y)| corner_to_rect(x, y, b))
        .chain(corners(b).iter().map(|&(x, y)| corner_to_rect(x, y, a)))
        .fold(f64::INFINITY, f64::min)
}

/// Full `N x N` adjacency matrix by the strict-threshold rule.
pub fn oracle_adjacency(p: &FloorPlanRecord, threshold: f64) -> Vec<Vec<bool>> {
    let n = p.rooms.len();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                adj[i][j] = oracle_gap(&p.rooms[i].bbox, &p.rooms[j].bbox) < threshold;
            }
        }
    }
    adj
}

pub fn oracle_nesting(p: &FloorPlanRecord, ratio: f64) -> (Vec<bool>, Vec<bool>) {
    let n = p.rooms.len();
    let (mut parent, mut child) = (vec![false; n], vec![false; n]);
    for i in 0..n {
        let a = &p.rooms[i].bbox;
        let area = (a.x_max - a.x_min) * (a.y_max - a.y_min);
        for j in 0..n {
            if i == j {
                continue;
            }
            let b = &p.rooms[j].bbox;
            let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
            let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
            if w * h > ratio * area {
                child[i] = true;
                parent[j] = true;
            }
        }
    }
    (parent, child)
}

pub fn graphs_from_synthetic(n_plans: usize, seed: u64) -> Vec<RoomGraph> {
    let d = generate_synthetic(&SynthConfig {
        n_plans,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = GraphBuildConfig::default();
    d.plans
        .iter()
        .map(|p| build_graph(p, &d.vocab, &cfg).unwrap())
        .collect()
}

/// Mean node cross-entropy of `model` on `g`, outside any training tape.
pub fn loss_of(model: &Model, g: &RoomGraph) -> f64 {
    let logits = model.forward(g).unwrap();
    let tape = Tape::new();
    let labels: Indices = g.labels.as_slice().into();
    let loss = tape
        .constant(logits)
        .softmax_cross_entropy(&labels)
        .unwrap();
    loss.value().data()[0]
}

pub fn analytic_gradients(model: &Model, g: &RoomGraph) -> Vec<Tensor> {
    let tape = Tape::new();
    let params = model.param_vars(&tape, true);
    let labels: Indices = g.labels.as_slice().into();
    let loss = model
        .forward_on_tape(&tape, g, &params, Readout::Logits)
        .unwrap()
        .softmax_cross_entropy(&labels)
        .unwrap();
    let grads = tape.backward(loss).unwrap();
    params.iter().map(|&p| grads.get(p)).collect()
}

/// Smallest denominator used for relative errors, so coordinates whose
/// true gradient is zero (dead units, unused attention halves) compare in
/// absolute terms near round-off level.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

#[derive(Debug, Default, Clone)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates skipped because a rectifier input changed sign between
    /// the two probes, so the loss is not differentiable there.
    pub kinks: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// Central differences with step `h` against the tape for every parameter
/// coordinate of `model` on `g`.
pub fn gradient_check(model: &Model, g: &RoomGraph, h: f64) -> GradCheck {
    let analytic = analytic_gradients(model, g);
    let base_pattern = model.rectifier_pattern(g).unwrap();
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut out = GradCheck::default();
    let mut probe = model.clone();
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = probe.params_mut()[p].data()[i];
            probe.params_mut()[p].data_mut()[i] = orig + h;
            let plus = loss_of(&probe, g);
            let plus_pattern = probe.rectifier_pattern(g).unwrap();
            probe.params_mut()[p].data_mut()[i] = orig - h;
            let minus = loss_of(&probe, g);
            let minus_pattern = probe.rectifier_pattern(g).unwrap();
            probe.params_mut()[p].data_mut()[i] = orig;
            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                out.kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grad.data()[i], numeric);
            out.checked += 1;
            if err > out.max_rel_error {
                out.max_rel_error = err;
                out.worst = format!(
                    "{}[{i}]: analytic {:e} numeric {numeric:e}",
                    names[p],
                    grad.data()[i]
                );
            }
        }
    }
    out
}

/// Mean silhouette coefficient of `points` (rows) under `labels`.
pub fn silhouette(points: &Tensor, labels: &[usize]) -> f64 {
    let n = points.rows();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let dist = |i: usize, j: usize| {
        points
            .row(i)
            .iter()
            .zip(points.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(i, j);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

/// Two isotropic Gaussian clusters in `dim` dimensions (unit variance) whose
/// centres are `separation` standard deviations apart.
pub fn two_clusters(
    rng: &mut ChaCha8Rng,
    per_cluster: usize,
    dim: usize,
    separation: f64,
) -> (Tensor, Vec<usize>) {
    use rand_distr::{Distribution, StandardNormal};
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2 {
        for _ in 0..per_cluster {
            let mut row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            row[0] += c as f64 * separation;
            rows.push(row);
            labels.push(c);
        }
    }
    (Tensor::from_rows(&rows).unwrap(), labels)
}
