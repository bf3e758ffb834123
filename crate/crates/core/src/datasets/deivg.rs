use std::collections::{BTreeSet, HashSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normalize_relation, render_prompt, DatasetError, DeicticInstance, PromptStyle};
use crate::logic::{canonical_name, canonical_predicate, SceneGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeivgConfig {
    /// Relations per prompt, 1 to 3.
    pub k: usize,
    /// Instances to draw.
    pub n: usize,
    pub seed: u64,
    pub style: PromptStyle,
    /// Fail instead of returning a short set.
    pub strict: bool,
}

impl Default for DeivgConfig {
    fn default() -> Self {
        Self {
            k: 1,
            n: 100,
            seed: 0,
            style: PromptStyle::Comma,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeivgSynthesis {
    pub instances: Vec<DeicticInstance>,
    /// Number of missing instances when fewer than `n` candidates existed.
    pub shortfall: Option<usize>,
}

struct SceneIndex {
    // per object: canonical names
    names: Vec<HashSet<String>>,
    // per subject index: (canonical predicate, object index)
    out_edges: Vec<Vec<(String, usize)>>,
}

impl SceneIndex {
    fn new(sg: &SceneGraph) -> Self {
        let map = sg.object_map();
        let names = sg
            .objects
            .iter()
            .map(|o| o.names.iter().filter_map(|n| canonical_name(n)).collect())
            .collect();
        let mut out_edges = vec![Vec::new(); sg.objects.len()];
        for r in &sg.relations {
            let (Some(s), Some(o), Some(p)) = (map.index_of_id(r.subject_id), map.index_of_id(r.object_id), canonical_predicate(&r.predicate)) else {
                continue;
            };
            out_edges[s].push((p, o));
        }
        Self { names, out_edges }
    }

    fn satisfies(&self, x: usize, cond: &(String, String)) -> bool {
        self.out_edges[x].iter().any(|(p, o)| *p == cond.0 && self.names[*o].contains(&cond.1))
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

fn scene_candidates(sg: &SceneGraph, k: usize, style: PromptStyle, seen: &mut HashSet<(u64, Vec<(String, String)>)>) -> Vec<DeicticInstance> {
    let index = SceneIndex::new(sg);
    let map = sg.object_map();
    let mut out = Vec::new();
    for (s, _) in sg.objects.iter().enumerate() {
        // distinct (whitelisted relation, object name) pairs in first-seen order
        let mut pairs: Vec<(String, String)> = Vec::new();
        for r in sg.relations.iter().filter(|r| map.index_of_id(r.subject_id) == Some(s)) {
            let Some(rel) = normalize_relation(&r.predicate) else { continue };
            let Some(o) = map.index_of_id(r.object_id) else { continue };
            let Some(name) = sg.objects[o].names.iter().find(|n| canonical_name(n).is_some()) else {
                continue;
            };
            let pair = (rel.to_string(), name.clone());
            if !pairs.contains(&pair) {
                pairs.push(pair);
            }
        }
        if pairs.len() < k {
            continue;
        }
        for combo in combinations(pairs.len(), k) {
            let chosen: Vec<(String, String)> = combo.iter().map(|&i| pairs[i].clone()).collect();
            let canon: Vec<(String, String)> = chosen
                .iter()
                .map(|(r, n)| (canonical_predicate(r).expect("whitelisted"), canonical_name(n).expect("checked")))
                .collect();
            let key: BTreeSet<(String, String)> = canon.iter().cloned().collect();
            if key.len() < k || !seen.insert((sg.image_id, key.into_iter().collect())) {
                continue;
            }
            let matched: Vec<usize> = (0..sg.objects.len()).filter(|&x| canon.iter().all(|c| index.satisfies(x, c))).collect();
            let synsets: HashSet<Option<&String>> = matched.iter().map(|&x| sg.objects[x].synsets.first()).collect();
            if synsets.len() != 1 || synsets.contains(&None) {
                continue;
            }
            out.push(DeicticInstance {
                deictic_prompt: render_prompt(&chosen, style),
                answers: matched.iter().map(|&x| sg.objects[x].clone()).collect(),
                image_id: sg.image_id,
                data_index: None,
                complexity: k,
                structured: chosen,
            });
        }
    }
    out
}

/// Draws `n` unambiguous k-relation prompts from the given scenes.
///
/// Candidates are enumerated per subject over its distinct (relation, object name)
/// pairs; a candidate is kept when every object satisfying all conditions shares
/// its first synset. Invalid scenes are skipped.
pub fn synthesize_deivg(scenes: &[SceneGraph], cfg: &DeivgConfig) -> Result<DeivgSynthesis, DatasetError> {
    if !(1..=3).contains(&cfg.k) {
        return Err(DatasetError::InvalidArgument(format!("k must be 1, 2 or 3, got {}", cfg.k)));
    }
    let mut seen = HashSet::new();
    let mut candidates = Vec::new();
    for sg in scenes {
        if let Err(e) = sg.validate() {
            log::warn!("skipping scene: {e}");
            continue;
        }
        candidates.extend(scene_candidates(sg, cfg.k, cfg.style, &mut seen));
    }
    let available = candidates.len();
    if available < cfg.n {
        if cfg.strict {
            return Err(DatasetError::InsufficientCandidates {
                k: cfg.k,
                requested: cfg.n,
                available,
            });
        }
        log::warn!("only {available} DeiVG_{} candidates for {} requested", cfg.k, cfg.n);
    }
    let take = cfg.n.min(available);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picked = index::sample(&mut rng, available, take).into_vec();
    picked.sort_unstable();
    let mut slots: Vec<Option<DeicticInstance>> = candidates.into_iter().map(Some).collect();
    let instances = picked
        .into_iter()
        .enumerate()
        .map(|(i, j)| {
            let mut inst = slots[j].take().expect("indices are distinct");
            inst.data_index = Some(i as u64);
            inst
        })
        .collect();
    Ok(DeivgSynthesis {
        instances,
        shortfall: (available < cfg.n).then(|| cfg.n - available),
    })
}
