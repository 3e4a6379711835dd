//! Seeded generator of synthetic floor plans.
//!
//! Each plan is a guillotine tiling of a rectangle (width 256 units, height
//! 128 to 256) into rooms, optionally with one closet-like room nested well
//! inside a larger room. Tiles share boundaries, so the room-gap graph is
//! connected. Labels follow a fixed structural rule, evaluated on the
//! normalized plan with the default graph-build settings:
//!
//! * the room with the largest area (lowest index on ties) is category 0;
//! * otherwise a nested room is category 5;
//! * otherwise the category is the room's neighbor count modulo
//!   `n_categories`.
//!
//! Door walls sit on shared tile boundaries with probability one half, so
//! the door count is only a noisy hint of the neighbor count.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::floorplan::{normalize_plan, Dataset, FloorPlanRecord, Rect, RoomRecord, WallRecord};
use crate::graph::{
    build_adjacency, detect_nesting, CategoryVocab, GraphBuildConfig, DEFAULT_CATEGORIES,
};

const PLAN_WIDTH: i64 = 256;
const MIN_SIDE: i64 = 16;
/// Clearance between a nested room and its parent's walls (about 0.05 of
/// the plan length, comfortably above the default adjacency threshold).
const NEST_MARGIN: i64 = 13;
const NEST_MIN_PARENT_SIDE: i64 = 60;
const NESTED_CATEGORY: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_plans: usize,
    pub rooms_min: usize,
    pub rooms_max: usize,
    pub seed: u64,
    pub n_categories: usize,
    /// Chance that a plan with at least three rooms contains a nested room.
    pub nesting_probability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_plans: 100,
            rooms_min: 3,
            rooms_max: 10,
            seed: 0,
            n_categories: 8,
            nesting_probability: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rooms_min < 2 || self.rooms_min > self.rooms_max {
            return Err(Error::BadConfig(format!(
                "need 2 <= rooms_min <= rooms_max, got {}..{}",
                self.rooms_min, self.rooms_max
            )));
        }
        if self.rooms_max > 40 {
            return Err(Error::BadConfig(
                "rooms_max above 40 does not fit the tiling".into(),
            ));
        }
        if self.n_categories <= NESTED_CATEGORY {
            return Err(Error::BadConfig(format!(
                "n_categories must exceed {NESTED_CATEGORY}, got {}",
                self.n_categories
            )));
        }
        if !(0.0..=1.0).contains(&self.nesting_probability) {
            return Err(Error::BadConfig(
                "nesting_probability outside [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Vocabulary used for synthetic labels: the default categories, extended
/// with `category_<k>` names when more than eight are requested.
pub fn synthetic_vocab(n_categories: usize) -> CategoryVocab {
    let labels = (0..n_categories)
        .map(|k| match DEFAULT_CATEGORIES.get(k) {
            Some(name) => name.to_string(),
            None => format!("category_{k}"),
        })
        .collect();
    CategoryVocab::new(labels).expect("synthetic labels are unique")
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let vocab = synthetic_vocab(cfg.n_categories);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plans = (0..cfg.n_plans)
        .map(|k| generate_plan(&mut rng, cfg, &vocab, format!("synth-{}-{k:06}", cfg.seed)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { plans, vocab })
}

type Tile = [i64; 4];

fn side_lengths(t: &Tile) -> (i64, i64) {
    (t[2] - t[0], t[3] - t[1])
}

fn split_tile(rng: &mut ChaCha8Rng, tiles: &mut Vec<Tile>) -> bool {
    let splittable: Vec<usize> = (0..tiles.len())
        .filter(|&i| {
            let (w, h) = side_lengths(&tiles[i]);
            w.max(h) >= 2 * MIN_SIDE
        })
        .collect();
    if splittable.is_empty() {
        return false;
    }
    let areas: Vec<i64> = splittable
        .iter()
        .map(|&i| {
            let (w, h) = side_lengths(&tiles[i]);
            w * h
        })
        .collect();
    let mut pick = rng.random_range(0..areas.iter().sum::<i64>());
    let mut chosen = splittable[0];
    for (&i, &a) in splittable.iter().zip(&areas) {
        if pick < a {
            chosen = i;
            break;
        }
        pick -= a;
    }
    let t = tiles[chosen];
    let (w, h) = side_lengths(&t);
    let vertical_cut = w >= h;
    let side = w.max(h);
    let lo = (side * 3 / 10).max(MIN_SIDE);
    let hi = (side * 7 / 10).min(side - MIN_SIDE).max(lo);
    let cut = rng.random_range(lo..=hi);
    let (a, b) = if vertical_cut {
        (
            [t[0], t[1], t[0] + cut, t[3]],
            [t[0] + cut, t[1], t[2], t[3]],
        )
    } else {
        (
            [t[0], t[1], t[2], t[1] + cut],
            [t[0], t[1] + cut, t[2], t[3]],
        )
    };
    tiles[chosen] = a;
    tiles.push(b);
    true
}

fn wall(p1: [i64; 2], p2: [i64; 2], rooms: Vec<usize>, door: bool) -> WallRecord {
    WallRecord {
        p1: [p1[0] as f64, p1[1] as f64],
        p2: [p2[0] as f64, p2[1] as f64],
        room_ids: rooms,
        has_door: door,
    }
}

fn tile_walls(rng: &mut ChaCha8Rng, tiles: &[Tile], width: i64, height: i64) -> Vec<WallRecord> {
    let mut walls = Vec::new();
    for i in 0..tiles.len() {
        for j in i + 1..tiles.len() {
            let (a, b) = (tiles[i], tiles[j]);
            let shared = if a[2] == b[0] || b[2] == a[0] {
                let x = if a[2] == b[0] { a[2] } else { a[0] };
                let (y0, y1) = (a[1].max(b[1]), a[3].min(b[3]));
                (y1 > y0).then(|| ([x, y0], [x, y1]))
            } else if a[3] == b[1] || b[3] == a[1] {
                let y = if a[3] == b[1] { a[3] } else { a[1] };
                let (x0, x1) = (a[0].max(b[0]), a[2].min(b[2]));
                (x1 > x0).then(|| ([x0, y], [x1, y]))
            } else {
                None
            };
            if let Some((p1, p2)) = shared {
                walls.push(wall(p1, p2, vec![i, j], rng.random_bool(0.5)));
            }
        }
    }
    let first_exterior = walls.len();
    for (i, t) in tiles.iter().enumerate() {
        if t[0] == 0 {
            walls.push(wall([0, t[1]], [0, t[3]], vec![i], false));
        }
        if t[2] == width {
            walls.push(wall([width, t[1]], [width, t[3]], vec![i], false));
        }
        if t[1] == 0 {
            walls.push(wall([t[0], 0], [t[2], 0], vec![i], false));
        }
        if t[3] == height {
            walls.push(wall([t[0], height], [t[2], height], vec![i], false));
        }
    }
    let entrance = rng.random_range(first_exterior..walls.len());
    walls[entrance].has_door = true;
    walls
}

fn generate_plan(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    vocab: &CategoryVocab,
    id: String,
) -> Result<FloorPlanRecord> {
    let n_rooms = rng.random_range(cfg.rooms_min..=cfg.rooms_max);
    let want_nested = n_rooms >= 3 && rng.random_bool(cfg.nesting_probability);
    let height = rng.random_range(PLAN_WIDTH / 2..=PLAN_WIDTH);
    let mut tiles: Vec<Tile> = vec![[0, 0, PLAN_WIDTH, height]];
    let n_tiles = n_rooms - usize::from(want_nested);
    while tiles.len() < n_tiles {
        if !split_tile(rng, &mut tiles) {
            return Err(Error::BadConfig(format!("cannot tile {n_rooms} rooms")));
        }
    }

    let mut nested: Option<(Tile, usize)> = None;
    if want_nested {
        let hosts: Vec<usize> = (0..tiles.len())
            .filter(|&i| {
                let (w, h) = side_lengths(&tiles[i]);
                w.min(h) >= NEST_MIN_PARENT_SIDE
            })
            .collect();
        if let Some(&host) = hosts.choose(rng) {
            let t = tiles[host];
            let (w, h) = side_lengths(&t);
            let cw = rng
                .random_range(w * 3 / 10..=w / 2)
                .min(w - 2 * NEST_MARGIN);
            let ch = rng
                .random_range(h * 3 / 10..=h / 2)
                .min(h - 2 * NEST_MARGIN);
            let x0 = rng.random_range(t[0] + NEST_MARGIN..=t[2] - NEST_MARGIN - cw);
            let y0 = rng.random_range(t[1] + NEST_MARGIN..=t[3] - NEST_MARGIN - ch);
            nested = Some(([x0, y0, x0 + cw, y0 + ch], host));
        } else if !split_tile(rng, &mut tiles) {
            return Err(Error::BadConfig(format!("cannot tile {n_rooms} rooms")));
        }
    }

    let mut walls = tile_walls(rng, &tiles, PLAN_WIDTH, height);
    let mut rects = tiles.clone();
    if let Some((c, host)) = nested {
        let child = rects.len();
        rects.push(c);
        let door_side = rng.random_range(0..4);
        let sides = [
            ([c[0], c[1]], [c[2], c[1]]),
            ([c[2], c[1]], [c[2], c[3]]),
            ([c[0], c[3]], [c[2], c[3]]),
            ([c[0], c[1]], [c[0], c[3]]),
        ];
        for (s, (p1, p2)) in sides.into_iter().enumerate() {
            if s == door_side {
                walls.push(wall(p1, p2, vec![child, host], true));
            } else {
                walls.push(wall(p1, p2, vec![child], false));
            }
        }
    }

    // Random room order so that index carries no information.
    let mut order: Vec<usize> = (0..rects.len()).collect();
    order.shuffle(rng);
    let mut new_index = vec![0; rects.len()];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    for w in &mut walls {
        for r in &mut w.room_ids {
            *r = new_index[*r];
        }
    }
    let rooms: Vec<RoomRecord> = order
        .iter()
        .map(|&old| {
            let t = rects[old];
            RoomRecord {
                bbox: Rect::new(t[0] as f64, t[1] as f64, t[2] as f64, t[3] as f64),
                category: String::new(),
            }
        })
        .collect();

    let mut plan = FloorPlanRecord {
        id,
        rooms,
        walls,
        source_image: None,
    };
    let labels = structural_labels(&plan, cfg.n_categories)?;
    for (room, label) in plan.rooms.iter_mut().zip(labels) {
        room.category = vocab.labels()[label].clone();
    }
    Ok(plan)
}

/// Class indices assigned by the synthetic labelling rule.
pub fn structural_labels(plan: &FloorPlanRecord, n_categories: usize) -> Result<Vec<usize>> {
    let cfg = GraphBuildConfig::default();
    let normalized = normalize_plan(plan)?;
    let n = normalized.rooms.len();
    let mut degree = vec![0usize; n];
    for (a, b) in build_adjacency(&normalized, &cfg) {
        degree[a] += 1;
        degree[b] += 1;
    }
    let (_, is_child) = detect_nesting(&normalized, &cfg);
    let mut largest = 0;
    for i in 1..n {
        if normalized.rooms[i].bbox.area() > normalized.rooms[largest].bbox.area() {
            largest = i;
        }
    }
    Ok((0..n)
        .map(|i| {
            if i == largest {
                0
            } else if is_child[i] {
                NESTED_CATEGORY
            } else {
                degree[i] % n_categories
            }
        })
        .collect())
}
