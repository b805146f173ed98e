mod common;

use common::{reorder, scene_question};
use driftlab::policy::{sample_trajectory, Decode, PerceptionConfig, PolicySpec, Trajectory};
use driftlab::reward::*;
use driftlab::rng;
use driftlab::scene::Category;
use std::collections::HashMap;

fn traj(trace_len: usize, slot: usize, content: &str, well_formed: bool) -> Trajectory {
    let atom = driftlab::scene::atom::standard_vocabulary().remove(0);
    Trajectory {
        trace: vec![atom; trace_len],
        answer_slot: slot,
        answer_content: content.into(),
        step_logprobs: vec![],
        total_logprob: 0.0,
        well_formed,
    }
}

// Independent statement of the consistency term.
fn lcr_oracle(l_t: usize, a_ok: bool, at_ok: bool, equal: bool, alpha: f64, eta: f64) -> f64 {
    let bonus = if a_ok && at_ok { alpha * (1.0f64.exp() + l_t as f64).ln() } else { 0.0 };
    let penalty = if equal { 0.0 } else { eta };
    bonus - penalty
}

#[test]
fn lcr_truth_table_matches_oracle() {
    let cfg = RewardConfig { alpha: 0.7, eta: 0.3, ..Default::default() };
    let gold = "g";
    let mut checked = 0;
    for a_ok in [false, true] {
        for at_ok in [false, true] {
            for equal in [false, true] {
                // Equal contents force matching correctness; two correct answers are equal.
                if (equal && a_ok != at_ok) || (a_ok && at_ok && !equal) {
                    continue;
                }
                let a = if a_ok { gold } else { "x" };
                let at = match (at_ok, equal) {
                    (true, _) => gold,
                    (false, true) => a,
                    (false, false) => if a_ok { "y" } else { "z" },
                };
                let rec = PermutationRecord::new(vec![1, 0], 0, a.into(), 1, at.into());
                assert_eq!(rec.drift, !equal);
                for l_t in 0..=6 {
                    let got = lcr(l_t, &rec, gold, &cfg);
                    assert_eq!(got, lcr_oracle(l_t, a_ok, at_ok, equal, cfg.alpha, cfg.eta));
                    assert!(got >= -cfg.eta && got <= (1.0f64.exp() + 6.0).ln() * cfg.alpha);
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 5 * 7);
}

#[test]
fn lcr_reference_values() {
    let cfg = RewardConfig::default();
    let both = PermutationRecord::new(vec![1, 0, 3, 2], 0, "3".into(), 1, "3".into());
    assert_eq!(lcr(0, &both, "3", &cfg), 0.5);
    let v = lcr(4, &both, "3", &cfg);
    assert!((v - 0.5 * (1.0f64.exp() + 4.0).ln()).abs() < 1e-15);
    assert!((v - 0.9524).abs() < 5e-5);
    let contra = PermutationRecord::new(vec![1, 0, 3, 2], 0, "3".into(), 1, "5".into());
    assert_eq!(lcr(3, &contra, "3", &cfg), -0.5);
}

#[test]
fn compose_reward_reference_values() {
    let cfg = RewardConfig::default();
    let mut q = scene_question(Category::Count, 1).1;
    q.gold_content = q.options[0].clone();
    let gold = q.gold_content.clone();
    let t = traj(4, 0, &gold, true);
    let rec = PermutationRecord::new(vec![1, 0, 3, 2], 0, gold.clone(), 1, gold.clone());
    let r = compose_reward(&t, &q, &rec, &cfg, true);
    assert_eq!(r.total, r.r_acc + r.r_fmt + r.r_lcr);
    assert!((r.total - 2.4524).abs() < 5e-5);
    assert_eq!((r.r_acc, r.r_fmt), (1.0, 0.5));

    let wrong = q.options[1].clone();
    let bad = traj(6, 1, &wrong, false);
    let rec = PermutationRecord::new(vec![1, 0, 3, 2], 1, wrong, 0, gold);
    let r = compose_reward(&bad, &q, &rec, &cfg, true);
    assert_eq!((r.r_acc, r.r_fmt, r.r_lcr, r.total), (0.0, 0.0, -0.5, -0.5));
    let r = compose_reward(&bad, &q, &rec, &cfg, false);
    assert_eq!(r.r_lcr, 0.0);
}

#[test]
fn accuracy_and_format_rules() {
    let cfg = RewardConfig::default();
    assert_eq!(accuracy_reward("3", "3", &cfg), 1.0);
    assert_eq!(accuracy_reward("3", "5", &cfg), 0.0);
    assert_eq!(accuracy_reward(" red", "red", &cfg), 0.0);
    assert_eq!(accuracy_reward("Red", "red", &cfg), 0.0);

    let q = scene_question(Category::Color, 2).1;
    assert_eq!(format_reward(&traj(1, 2, &q.options[2], true), &q, &cfg), 0.5);
    assert_eq!(format_reward(&traj(6, 2, &q.options[2], false), &q, &cfg), 0.0);
    assert_eq!(format_reward(&traj(1, 2, &q.options[1], true), &q, &cfg), 0.0);
    assert_eq!(format_reward(&traj(1, 9, &q.options[1], true), &q, &cfg), 0.0);
}

#[test]
fn permutation_bookkeeping() {
    let mut q = scene_question(Category::Color, 3).1;
    q.options = vec!["w".into(), "x".into(), "y".into(), "z".into()];
    q.gold_content = "y".into();
    let p = apply_permutation(&q, &[1, 0, 3, 2]).unwrap();
    assert_eq!(p.options, vec!["x", "w", "z", "y"]);
    assert_eq!(p.gold_content, "y");
    assert_eq!(p.gold_slot(), Some(3));
    assert_eq!(p.stem, q.stem);
    assert!(apply_permutation(&q, &[0, 0, 1, 2]).is_err());
}

#[test]
fn permutations_are_uniform_and_never_identity() {
    let q = scene_question(Category::Count, 4).1;
    assert_eq!(q.options.len(), 4);
    let mut r = rng::from_seed(1);
    let mut freq: HashMap<Vec<usize>, usize> = HashMap::new();
    let n = 10_000;
    for _ in 0..n {
        let (p, m) = permute_options(&q, &mut r);
        assert_ne!(m, vec![0, 1, 2, 3]);
        assert_eq!(p.gold_content, q.gold_content);
        assert_eq!(reorder(&q, &m), p);
        *freq.entry(m).or_default() += 1;
    }
    assert_eq!(freq.len(), 23);
    let expect = n as f64 / 23.0;
    for c in freq.values() {
        assert!((*c as f64 - expect).abs() < 0.25 * expect);
    }
    let two = scene_question(Category::Scene, 5).1;
    for _ in 0..100 {
        assert_eq!(permute_options(&two, &mut r).1, vec![1, 0]);
    }
}

#[test]
fn alignment_cells() {
    assert_eq!(classify_alignment(true, true), Alignment::CrCa);
    assert_eq!(classify_alignment(false, true), Alignment::WrCa);
    assert_eq!(classify_alignment(true, false), Alignment::CrWa);
    assert_eq!(classify_alignment(false, false), Alignment::WrWa);
    assert_eq!(serde_json::to_string(&Alignment::WrCa).unwrap(), "\"WR-CA\"");
}

#[test]
fn content_only_argmax_never_drifts() {
    let spec = PolicySpec::standard(PerceptionConfig::default());
    let cfg = RewardConfig::default();
    let cats = [Category::Count, Category::Color, Category::Shape, Category::Scene, Category::Reason];
    for seed in 0..40u64 {
        let mut params = spec.random_params(0.5, seed).unwrap();
        params.answer_position_weights.iter_mut().for_each(|w| *w = 0.0);
        let (scene, q) = scene_question(cats[seed as usize % 5], 700 + seed);
        let ep = spec.episode(&scene, &q).unwrap();
        let t = sample_trajectory(&spec, &params, &ep, Decode::Argmax, &mut rng::from_seed(seed));
        for k in 0..10 {
            let s = score_trajectory(&params, &ep, &t, &cfg, true, Decode::Argmax, &mut rng::from_seed(k)).unwrap();
            assert!(!s.record.drift);
            assert!(s.reward.r_lcr >= 0.0);
        }
    }
}

#[test]
fn audit_lines_carry_every_field() {
    let spec = PolicySpec::standard(PerceptionConfig::default());
    let params = spec.random_params(0.3, 1).unwrap();
    let (scene, q) = scene_question(Category::Reason, 9);
    let ep = spec.episode(&scene, &q).unwrap();
    let t = sample_trajectory(&spec, &params, &ep, Decode::Sample, &mut rng::from_seed(1));
    let s = score_trajectory(&params, &ep, &t, &RewardConfig::default(), true, Decode::Sample, &mut rng::from_seed(2)).unwrap();
    let mut buf = Vec::new();
    write_audit(&mut buf, &[AuditRecord::new(&q.id, &t, &s)]).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    for k in ["sample_id", "L_t", "permutation", "a", "a_tilde", "r_acc", "r_fmt", "r_lcr", "total", "alignment_cell"] {
        assert!(keys.contains(&k), "missing {k}");
    }
    let back: AuditRecord = serde_json::from_slice(&buf).unwrap();
    assert_eq!(back.total, s.reward.total);
}
