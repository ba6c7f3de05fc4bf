use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{rng_for, Scene, SceneObject, STREAM_REFERRING};
use crate::vocab::{CLASS_WORDS, COLOR_WORDS, SIZE_WORDS};

/// An appearance-only phrase that identifies exactly one object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferringTask {
    pub query: Vec<String>,
    pub candidates: Vec<usize>,
    pub target: usize,
}

/// True when every word of `query` names an attribute of `object`.
pub fn query_matches(query: &[String], object: &SceneObject) -> bool {
    query.iter().all(|w| {
        w == CLASS_WORDS[object.class_id] || w == COLOR_WORDS[object.color_id] || w == SIZE_WORDS[object.size_id]
    })
}

/// Attribute + class phrasings from shortest to longest.
fn phrasings(o: &SceneObject) -> [Vec<String>; 3] {
    let (class, color, size) = (CLASS_WORDS[o.class_id], COLOR_WORDS[o.color_id], SIZE_WORDS[o.size_id]);
    let v = |ws: &[&str]| ws.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    [v(&[color, class]), v(&[size, class]), v(&[size, color, class])]
}

/// Picks a target in seeded order and describes it with the shortest
/// attribute + class phrase that matches it alone. Returns `None` when no
/// object is uniquely describable.
pub fn make_referring(scene: &Scene, seed: u64) -> Option<ReferringTask> {
    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.shuffle(&mut rng_for(seed, STREAM_REFERRING));
    for target in order {
        for query in phrasings(&scene.objects[target]) {
            if scene.objects.iter().filter(|o| query_matches(&query, o)).count() == 1 {
                return Some(ReferringTask { query, candidates: (0..scene.objects.len()).collect(), target });
            }
        }
    }
    None
}
