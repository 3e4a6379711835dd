//! Vectorized floor-plan records: JSONL ingestion, cleaning, splitting and
//! coordinate normalization.
//!
//! One plan per line:
//!
//! ```text
//! {"id": "p1", "rooms": [{"bbox": [x0, y0, x1, y1], "category": "kitchen"}],
//!  "walls": [{"p1": [x, y], "p2": [x, y], "rooms": [0], "door": true}],
//!  "source_image": null}
//! ```

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CategoryVocab;

/// Axis-aligned rectangle, serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl From<[f64; 4]> for Rect {
    fn from(v: [f64; 4]) -> Self {
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x_min, r.y_min, r.x_max, r.y_max]
    }
}

impl Rect {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Rect {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn dx(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn dy(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.dx() * self.dy()
    }

    /// True when the rectangle has strictly positive width and height.
    pub fn is_proper(&self) -> bool {
        self.x_max > self.x_min && self.y_max > self.y_min
    }

    pub fn is_finite(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomRecord {
    pub bbox: Rect,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallRecord {
    pub p1: [f64; 2],
    pub p2: [f64; 2],
    #[serde(rename = "rooms")]
    pub room_ids: Vec<usize>,
    #[serde(rename = "door")]
    pub has_door: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorPlanRecord {
    pub id: String,
    pub rooms: Vec<RoomRecord>,
    #[serde(default)]
    pub walls: Vec<WallRecord>,
    #[serde(default)]
    pub source_image: Option<String>,
}

impl FloorPlanRecord {
    /// Bounding box of every room and wall endpoint, `None` for an empty plan.
    pub fn extent(&self) -> Option<Rect> {
        let points = self
            .rooms
            .iter()
            .flat_map(|r| [[r.bbox.x_min, r.bbox.y_min], [r.bbox.x_max, r.bbox.y_max]])
            .chain(self.walls.iter().flat_map(|w| [w.p1, w.p2]));
        points.fold(None, |acc: Option<Rect>, [x, y]| {
            Some(match acc {
                None => Rect::new(x, y, x, y),
                Some(r) => Rect::new(
                    r.x_min.min(x),
                    r.y_min.min(y),
                    r.x_max.max(x),
                    r.y_max.max(y),
                ),
            })
        })
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for (i, room) in self.rooms.iter().enumerate() {
            if room.category.is_empty() {
                return Err(format!("room {i} has an empty category"));
            }
            if !room.bbox.is_finite() {
                return Err(format!("room {i} has a non-finite bbox"));
            }
        }
        for (i, wall) in self.walls.iter().enumerate() {
            if wall.p1.iter().chain(&wall.p2).any(|v| !v.is_finite()) {
                return Err(format!("wall {i} has a non-finite endpoint"));
            }
            if let Some(bad) = wall.room_ids.iter().find(|&&r| r >= self.rooms.len()) {
                return Err(format!(
                    "wall {i} references room {bad} but the plan has {} rooms",
                    self.rooms.len()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub plans: Vec<FloorPlanRecord>,
    pub vocab: CategoryVocab,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }
}

/// Reads a JSONL dataset. Without an explicit `vocab` the vocabulary is the
/// sorted set of categories found in the file.
pub fn load_dataset(path: &Path, vocab: Option<CategoryVocab>) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut plans = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let plan: FloorPlanRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        plan.validate().map_err(|message| Error::Schema {
            line: i + 1,
            message,
        })?;
        plans.push(plan);
    }

    let vocab = match vocab {
        Some(v) => {
            for plan in &plans {
                if let Some(room) = plan.rooms.iter().find(|r| v.index(&r.category).is_none()) {
                    return Err(Error::UnknownCategory {
                        plan: plan.id.clone(),
                        category: room.category.clone(),
                    });
                }
            }
            v
        }
        None => {
            let labels: BTreeSet<&str> = plans
                .iter()
                .flat_map(|p| p.rooms.iter().map(|r| r.category.as_str()))
                .collect();
            CategoryVocab::new(labels.into_iter().map(String::from).collect())?
        }
    };
    Ok(Dataset { plans, vocab })
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for plan in &d.plans {
        let line = serde_json::to_string(plan).expect("plan serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Drops plans with fewer than two rooms or any room without positive area.
/// Returns the cleaned dataset and the number of plans removed.
pub fn clean_dataset(d: &Dataset) -> (Dataset, usize) {
    let plans: Vec<_> = d
        .plans
        .iter()
        .filter(|p| p.rooms.len() >= 2 && p.rooms.iter().all(|r| r.bbox.is_proper()))
        .cloned()
        .collect();
    let removed = d.plans.len() - plans.len();
    (
        Dataset {
            plans,
            vocab: d.vocab.clone(),
        },
        removed,
    )
}

/// Prefix split: the first `n_train` plans train, the rest test.
pub fn split_dataset(d: &Dataset, n_train: usize) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_train >= d.plans.len() {
        return Err(Error::BadSplit {
            n_train,
            total: d.plans.len(),
        });
    }
    let (a, b) = d.plans.split_at(n_train);
    Ok((
        Dataset {
            plans: a.to_vec(),
            vocab: d.vocab.clone(),
        },
        Dataset {
            plans: b.to_vec(),
            vocab: d.vocab.clone(),
        },
    ))
}

/// Like [`split_dataset`] after a seeded shuffle of the plan order.
pub fn split_dataset_shuffled(
    d: &Dataset,
    n_train: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let mut shuffled = d.clone();
    shuffled.plans.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    split_dataset(&shuffled, n_train)
}

/// Translates the plan so its extent starts at the origin and divides every
/// coordinate by the longer side of that extent.
pub fn normalize_plan(p: &FloorPlanRecord) -> Result<FloorPlanRecord> {
    let extent = p.extent().ok_or_else(|| Error::Degenerate(p.id.clone()))?;
    let scale = extent.dx().max(extent.dy());
    if !(scale > 0.0) {
        return Err(Error::Degenerate(p.id.clone()));
    }
    let (ox, oy) = (extent.x_min, extent.y_min);
    let fx = |x: f64| (x - ox) / scale;
    let fy = |y: f64| (y - oy) / scale;
    let mut out = p.clone();
    for room in &mut out.rooms {
        let b = room.bbox;
        room.bbox = Rect::new(fx(b.x_min), fy(b.y_min), fx(b.x_max), fy(b.y_max));
    }
    for wall in &mut out.walls {
        wall.p1 = [fx(wall.p1[0]), fy(wall.p1[1])];
        wall.p2 = [fx(wall.p2[0]), fy(wall.p2[1])];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room(b: [f64; 4], cat: &str) -> RoomRecord {
        RoomRecord {
            bbox: b.into(),
            category: cat.into(),
        }
    }

    fn plan(id: &str, rooms: Vec<RoomRecord>) -> FloorPlanRecord {
        FloorPlanRecord {
            id: id.into(),
            rooms,
            walls: Vec::new(),
            source_image: None,
        }
    }

    fn dataset(plans: Vec<FloorPlanRecord>) -> Dataset {
        Dataset {
            plans,
            vocab: CategoryVocab::default(),
        }
    }

    #[test]
    fn single_room_plan_removed() {
        let d = dataset(vec![plan("a", vec![room([0., 0., 1., 1.], "kitchen")])]);
        let (c, removed) = clean_dataset(&d);
        assert!(c.plans.is_empty());
        assert_eq!(removed, 1);
    }

    #[test]
    fn valid_plan_retained() {
        let rooms = (0..5)
            .map(|i| room([i as f64, 0., i as f64 + 1., 1.], "bedroom"))
            .collect();
        let d = dataset(vec![plan("a", rooms)]);
        let (c, removed) = clean_dataset(&d);
        assert_eq!(removed, 0);
        assert_eq!(c, d);
    }

    #[test]
    fn degenerate_bbox_removes_plan() {
        let d = dataset(vec![plan(
            "a",
            vec![
                room([0., 0., 1., 1.], "kitchen"),
                room([2., 0., 2., 1.], "closet"),
            ],
        )]);
        assert!(clean_dataset(&d).0.plans.is_empty());
        let inverted = dataset(vec![plan(
            "b",
            vec![
                room([0., 0., 1., 1.], "kitchen"),
                room([3., 0., 2., 1.], "closet"),
            ],
        )]);
        assert!(clean_dataset(&inverted).0.plans.is_empty());
    }

    #[test]
    fn split_sizes() {
        let plans = (0..10)
            .map(|i| plan(&i.to_string(), vec![room([0., 0., 1., 1.], "kitchen")]))
            .collect();
        let d = dataset(plans);
        let (a, b) = split_dataset(&d, 8).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        assert_eq!(a.plans[7].id, "7");
        assert_eq!(b.plans[0].id, "8");
        assert!(matches!(split_dataset(&d, 0), Err(Error::BadSplit { .. })));
        assert!(matches!(split_dataset(&d, 10), Err(Error::BadSplit { .. })));
    }

    #[test]
    fn normalize_scales_by_longer_side() {
        let p = plan(
            "a",
            vec![
                room([0., 0., 100., 100.], "kitchen"),
                room([100., 0., 200., 100.], "bedroom"),
            ],
        );
        let n = normalize_plan(&p).unwrap();
        assert_eq!(n.rooms[1].bbox, Rect::new(0.5, 0.0, 1.0, 0.5));
        assert_eq!(n.extent().unwrap().x_max, 1.0);
        assert_eq!(normalize_plan(&n).unwrap(), n);
    }

    #[test]
    fn normalize_point_plan_is_degenerate() {
        let p = plan(
            "a",
            vec![
                room([3., 3., 3., 3.], "kitchen"),
                room([3., 3., 3., 3.], "bedroom"),
            ],
        );
        assert!(matches!(normalize_plan(&p), Err(Error::Degenerate(_))));
    }

    #[test]
    fn json_shape_round_trips() {
        let line = r#"{"id":"x","rooms":[{"bbox":[0,0,1,2],"category":"kitchen"}],"walls":[{"p1":[0,0],"p2":[1,0],"rooms":[0],"door":true}],"source_image":null}"#;
        let p: FloorPlanRecord = serde_json::from_str(line).unwrap();
        assert_eq!(p.rooms[0].bbox, Rect::new(0., 0., 1., 2.));
        assert!(p.walls[0].has_door);
        let back: FloorPlanRecord =
            serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
