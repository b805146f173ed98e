#![allow(dead_code)]

use driftlab::policy::{PerceptionConfig, PolicySpec};
use driftlab::scene::{generate_scene, synthesize_mcq, Category, EvidenceAtom, GenerationParams, McqSample, Scene};

/// A scene and a question of `category` about it, retrying seeds until the
/// scene supports the category.
pub fn scene_question(category: Category, seed: u64) -> (Scene, McqSample) {
    for s in seed.. {
        let scene = generate_scene(&GenerationParams::default(), s).unwrap();
        if let Ok(q) = synthesize_mcq(&scene, category, 4, s ^ 0x5eed) {
            return (scene, q);
        }
    }
    unreachable!()
}

/// Question with options reordered so that slot `i` shows `order[i]`.
pub fn reorder(q: &McqSample, order: &[usize]) -> McqSample {
    let mut out = q.clone();
    out.options = order.iter().map(|&i| q.options[i].clone()).collect();
    out
}

pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for i in 0..n {
            if !prefix.contains(&i) {
                prefix.push(i);
                rec(prefix, n, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), n, &mut out);
    out
}

/// The first `n` atoms of the standard vocabulary.
pub fn small_spec(n: usize, k: usize, l_max: usize) -> PolicySpec {
    let vocab: Vec<EvidenceAtom> = driftlab::scene::atom::standard_vocabulary().into_iter().take(n).collect();
    PolicySpec::new(vocab, k, l_max, PerceptionConfig::default()).unwrap()
}
