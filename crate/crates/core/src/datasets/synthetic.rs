//! Random scene graphs with Visual Genome-like vocabulary, for tests and demos
//! when no real annotations are at hand.

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RELATION_WHITELIST;
use crate::logic::{BBox, Relation, SceneGraph, SceneObject};

// (name, synset); "guy" shares a synset with "man"
const CATEGORIES: [(&str, &str); 28] = [
    ("man", "man.n.01"),
    ("guy", "man.n.01"),
    ("woman", "woman.n.01"),
    ("person", "person.n.01"),
    ("dog", "dog.n.01"),
    ("cat", "cat.n.01"),
    ("boat", "boat.n.01"),
    ("umbrella", "umbrella.n.01"),
    ("table", "table.n.02"),
    ("chair", "chair.n.01"),
    ("bench", "bench.n.01"),
    ("car", "car.n.01"),
    ("street", "street.n.01"),
    ("tree", "tree.n.01"),
    ("shirt", "shirt.n.01"),
    ("hat", "hat.n.01"),
    ("plate", "plate.n.04"),
    ("cup", "cup.n.01"),
    ("laptop", "laptop.n.01"),
    ("desk", "desk.n.01"),
    ("white line", "line.n.04"),
    ("stop sign", "street_sign.n.01"),
    ("surfboard", "surfboard.n.01"),
    ("horse", "horse.n.01"),
    ("wall", "wall.n.01"),
    ("window", "window.n.01"),
    ("handle", "handle.n.01"),
    ("elephant", "elephant.n.01"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Expected relations per object.
    pub relation_density: f64,
    /// Number of distinct categories drawn per scene; fewer makes repeated categories likelier.
    pub categories_per_scene: usize,
    pub width: f64,
    pub height: f64,
    pub first_image_id: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            min_objects: 5,
            max_objects: 12,
            relation_density: 1.5,
            categories_per_scene: 7,
            width: 800.0,
            height: 600.0,
            first_image_id: 1,
        }
    }
}

fn random_box(rng: &mut ChaCha8Rng, cfg: &SyntheticSceneConfig) -> BBox {
    let w = rng.gen_range(16.0..cfg.width / 3.0_f64).round();
    let h = rng.gen_range(16.0..cfg.height / 3.0_f64).round();
    let x = rng.gen_range(0.0..cfg.width - w).round();
    let y = rng.gen_range(0.0..cfg.height - h).round();
    BBox::new(x, y, w, h)
}

/// Generates `n` valid scene graphs. Relations use whitelisted labels only.
pub fn synthetic_scenes(n: usize, cfg: &SyntheticSceneConfig, seed: u64) -> Vec<SceneGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let image_id = cfg.first_image_id + i as u64;
            let count = rng.gen_range(cfg.min_objects.max(1)..=cfg.max_objects.max(cfg.min_objects.max(1)));
            let pool: Vec<usize> = index::sample(&mut rng, CATEGORIES.len(), cfg.categories_per_scene.clamp(1, CATEGORIES.len())).into_vec();
            let objects: Vec<SceneObject> = (0..count)
                .map(|k| {
                    let (name, synset) = CATEGORIES[pool[rng.gen_range(0..pool.len())]];
                    SceneObject {
                        object_id: image_id * 1000 + k as u64,
                        names: vec![name.to_string()],
                        synsets: vec![synset.to_string()],
                        bbox: random_box(&mut rng, cfg),
                    }
                })
                .collect();
            let mut relations = Vec::new();
            let mut seen = HashSet::new();
            if count > 1 {
                let target = (cfg.relation_density * count as f64).round() as usize;
                for _ in 0..target * 2 {
                    if relations.len() >= target {
                        break;
                    }
                    let s = rng.gen_range(0..count);
                    let mut o = rng.gen_range(0..count - 1);
                    if o >= s {
                        o += 1;
                    }
                    let r = RELATION_WHITELIST[rng.gen_range(0..RELATION_WHITELIST.len())];
                    if seen.insert((s, r, o)) {
                        relations.push(Relation::new(objects[s].object_id, r, objects[o].object_id));
                    }
                }
            }
            SceneGraph {
                image_id,
                objects,
                relations,
            }
        })
        .collect()
}

/// Copy of `sg` with `floor(fraction * |relations|)` relations removed at random.
pub fn corrupt_scene(sg: &SceneGraph, fraction: f64, rng: &mut impl Rng) -> SceneGraph {
    let n = sg.relations.len();
    let drop = ((fraction.clamp(0.0, 1.0) * n as f64).floor() as usize).min(n);
    let dropped: HashSet<usize> = index::sample(rng, n, drop).into_iter().collect();
    SceneGraph {
        image_id: sg.image_id,
        objects: sg.objects.clone(),
        relations: sg
            .relations
            .iter()
            .enumerate()
            .filter(|(i, _)| !dropped.contains(i))
            .map(|(_, r)| r.clone())
            .collect(),
    }
}
