mod common;

use common::{scene_question, small_spec};
use driftlab::grpo::*;
use driftlab::policy::{self, softmax, Episode, PerceptionConfig, PolicyParams, PolicySpec, Trajectory, CONTEXT_DIM};
use driftlab::rng;
use driftlab::scene::Category;
use driftlab::Exec;
use rand::Rng;

const CATS: [Category; 5] = [Category::Count, Category::Color, Category::Shape, Category::Scene, Category::Reason];

fn episodes(spec: &PolicySpec, n: usize, seed: u64) -> Vec<Episode> {
    (0..n)
        .map(|i| {
            let (s, q) = scene_question(CATS[i % 5], seed + 17 * i as u64);
            spec.episode(&s, &q).unwrap()
        })
        .collect()
}

#[test]
fn advantages_are_standardised() {
    let mut r = rng::from_seed(3);
    for _ in 0..10_000 {
        let g = r.random_range(2..=16);
        let degenerate = r.random_bool(0.1);
        let totals: Vec<f64> = (0..g)
            .map(|_| if degenerate { 0.75 } else { r.random_range(-1.0..3.0) })
            .collect();
        let a = normalize_advantages(&totals);
        let n = g as f64;
        let mean_r = totals.iter().sum::<f64>() / n;
        let var_r = totals.iter().map(|x| (x - mean_r).powi(2)).sum::<f64>() / n;
        if var_r > 1e-12 {
            let mean = a.iter().sum::<f64>() / n;
            let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
        } else {
            assert!(a.iter().all(|x| *x == 0.0));
        }
    }
}

#[test]
fn clipped_loss_matches_definition_and_bounds() {
    for eps in [0.1, 0.2, 0.5] {
        for i in 0..=290 {
            let w = 0.1 + i as f64 * 0.01;
            for j in 0..=40 {
                let a = -2.0 + j as f64 * 0.1;
                let clip = if w < 1.0 - eps { 1.0 - eps } else if w > 1.0 + eps { 1.0 + eps } else { w };
                let oracle = if w * a < clip * a { w * a } else { clip * a };
                let got = clipped_loss(w, a, eps);
                assert!((got - oracle).abs() < 1e-12);
                assert!(got <= w * a + 1e-15);
            }
        }
    }
}

#[test]
fn rollout_weights_are_one_and_groups_reproducible() {
    let spec = PolicySpec::standard(PerceptionConfig::default());
    let eps = episodes(&spec, 3, 1);
    let params = spec.random_params(0.3, 4).unwrap();
    let cfg = GrpoConfig::default();
    let a = rollout_group(&spec, &params, &eps[2], 2, &cfg, 77, Exec::Parallel).unwrap();
    let b = rollout_group(&spec, &params, &eps[2], 2, &cfg, 77, Exec::Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trajectories.len(), 8);
    assert!(a.weights.iter().all(|w| (w - 1.0).abs() < 1e-12));
    for r in &a.records {
        assert_ne!(r.mapping, (0..r.mapping.len()).collect::<Vec<_>>());
    }
    let no_lcr = GrpoConfig { lcr_enabled: false, ..cfg };
    let c = rollout_group(&spec, &params, &eps[2], 2, &no_lcr, 77, Exec::Parallel).unwrap();
    assert!(c.rewards.iter().all(|r| r.r_lcr == 0.0));
    assert_eq!(c.records, a.records);
}

#[test]
fn objective_reference_cases() {
    let spec = small_spec(15, 4, 4);
    let eps = episodes(&spec, 5, 2);
    let mut eps_small = Vec::new();
    for ep in &eps {
        let mut q = ep.question.clone();
        q.gold_trace.retain(|a| spec.atom_index(a).is_some());
        eps_small.push(ep.with_question(q));
    }
    let reference = spec.random_params(0.3, 1).unwrap();
    let cfg = GrpoConfig { kl_beta: 0.0, ..Default::default() };
    let groups: Vec<GroupRollout> = (0..3)
        .map(|g| rollout_group(&spec, &reference, &eps_small[g], g, &cfg, g as u64, Exec::Parallel).unwrap())
        .collect();
    let probes = probe_set(&eps_small, &groups);
    let j = objective(&spec, &reference, &reference, &eps_small, &groups, &probes, &cfg, Exec::Parallel).unwrap();
    assert!(j.abs() < 1e-12);
    assert_eq!(policy::kl_divergence(&spec, &reference, &reference, &probes), 0.0);

    let moved = spec.random_params(0.3, 2).unwrap();
    let j0 = objective(&spec, &moved, &reference, &eps_small, &groups, &probes, &cfg, Exec::Parallel).unwrap();
    let heavy = GrpoConfig { kl_beta: 5.0, ..cfg.clone() };
    let j1 = objective(&spec, &moved, &reference, &eps_small, &groups, &probes, &heavy, Exec::Parallel).unwrap();
    assert!(j1 < j0);
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let spec = small_spec(12, 4, 3);
    let eps: Vec<Episode> = episodes(&spec, 4, 9);
    let old = spec.random_params(0.6, 5).unwrap();
    let reference = spec.random_params(0.6, 6).unwrap();
    // Wide clip so the surrogate is smooth around the evaluation point.
    let cfg = GrpoConfig { clip_epsilon: 10.0, kl_beta: 0.3, group_size: 6, ..Default::default() };
    let groups: Vec<GroupRollout> = (0..4)
        .map(|g| rollout_group(&spec, &old, &eps[g], g, &cfg, 100 + g as u64, Exec::Parallel).unwrap())
        .collect();
    assert!(groups.iter().any(|g| g.advantages.iter().any(|a| *a != 0.0)));
    let probes = probe_set(&eps, &groups);
    let params = spec.random_params(0.6, 7).unwrap();
    let g = objective_grad(&spec, &params, &reference, &eps, &groups, &probes, &cfg, Exec::Parallel).unwrap().flat();
    let base = params.flat();
    let mut p = params.clone();
    let h = 1e-5;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] += h;
        p.set_flat(&v).unwrap();
        let up = objective(&spec, &p, &reference, &eps, &groups, &probes, &cfg, Exec::Sequential).unwrap();
        v[i] -= 2.0 * h;
        p.set_flat(&v).unwrap();
        let down = objective(&spec, &p, &reference, &eps, &groups, &probes, &cfg, Exec::Sequential).unwrap();
        let fd = (up - down) / (2.0 * h);
        num += (fd - g[i]).powi(2);
        den += fd * fd + g[i] * g[i];
    }
    assert!(num.sqrt() / den.sqrt() < 1e-6, "{}", num.sqrt() / den.sqrt());
}

// Independent score-function gradient of log pi(o) for the linear heads.
fn score_gradient(spec: &PolicySpec, p: &PolicyParams, ep: &Episode, t: &Trajectory) -> Vec<f64> {
    let rows = spec.vocab_size() + 1;
    // Scene block plus one previous-atom slot per vocabulary entry.
    let w = CONTEXT_DIM + spec.vocab_size();
    let mut head = vec![0.0; rows * w];
    let mut content = vec![0.0; 3];
    let mut position = vec![0.0; spec.k];
    let mut decisions: Vec<(usize, Vec<f64>)> = Vec::new();
    for (l, atom) in t.trace.iter().enumerate() {
        decisions.push((spec.atom_index(atom).unwrap(), ep.context(&t.trace[..l], spec.l_max)));
    }
    if t.trace.len() < spec.l_max {
        decisions.push((rows - 1, ep.context(&t.trace, spec.l_max)));
    }
    for (chosen, x) in decisions {
        let logits: Vec<f64> = (0..rows)
            .map(|r| (0..w).map(|c| p.trace_head[r * w + c] * x[c]).sum())
            .collect();
        let probs = softmax(&logits);
        for r in 0..rows {
            let d = f64::from(u8::from(r == chosen)) - probs[r];
            for c in 0..w {
                head[r * w + c] += d * x[c];
            }
        }
    }
    let feats = ep.slot_features(&t.trace);
    let logits: Vec<f64> = feats
        .iter()
        .enumerate()
        .map(|(s, f)| (0..3).map(|c| p.answer_content_weights[c] * f[c]).sum::<f64>() + p.answer_position_weights[s])
        .collect();
    let probs = softmax(&logits);
    for (s, f) in feats.iter().enumerate() {
        let d = f64::from(u8::from(s == t.answer_slot)) - probs[s];
        for c in 0..3 {
            content[c] += d * f[c];
        }
        position[s] += d;
    }
    head.into_iter().chain(content).chain(position).collect()
}

#[test]
fn single_update_equals_reinforce_with_group_baseline() {
    let spec = small_spec(2, 2, 1);
    let (s, q) = scene_question(Category::Scene, 5);
    let eps = vec![spec.episode(&s, &q).unwrap()];
    let init = spec.random_params(0.8, 2).unwrap();
    let cfg = GrpoConfig {
        group_size: 2,
        clip_epsilon: 10.0,
        kl_beta: 0.0,
        learning_rate: 1.0,
        inner_epochs: 1,
        steps: 1,
        ..Default::default()
    };
    let mut checked = 0;
    for seed in 0..40 {
        let mut trainer = GrpoTrainer::new(&spec, &init, &eps, &cfg, seed, Exec::Parallel).unwrap();
        let out = trainer.step().unwrap();
        let g = &out.groups[0];
        let totals: Vec<f64> = g.rewards.iter().map(|r| r.total).collect();
        let mean = (totals[0] + totals[1]) / 2.0;
        let std = ((totals[0] - mean).powi(2) / 2.0 + (totals[1] - mean).powi(2) / 2.0).sqrt();
        if std < 1e-12 {
            continue;
        }
        let mut oracle = vec![0.0; init.n_weights()];
        for (t, r) in g.trajectories.iter().zip(&totals) {
            let adv = (r - mean) / std;
            for (o, gi) in oracle.iter_mut().zip(score_gradient(&spec, &init, &eps[0], t)) {
                *o += adv * gi / 2.0;
            }
        }
        let step: Vec<f64> = trainer.params().flat().iter().zip(init.flat()).map(|(a, b)| (a - b) / cfg.learning_rate).collect();
        let err = step.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "max deviation {err}");
        checked += 1;
    }
    assert!(checked >= 5);
}

#[test]
fn zero_steps_return_init_and_training_is_deterministic() {
    let spec = PolicySpec::standard(PerceptionConfig::default());
    let eps = episodes(&spec, 10, 3);
    let init = spec.random_params(0.1, 1).unwrap();
    let cfg = GrpoConfig { steps: 0, ..Default::default() };
    let (p, m) = train_grpo(&spec, &init, &eps, &cfg, 1, Exec::Parallel).unwrap();
    assert_eq!(p, init);
    assert!(m.is_empty());

    let cfg = GrpoConfig { steps: 6, inner_epochs: 3, groups_per_step: 2, ..Default::default() };
    let (a, ma) = train_grpo(&spec, &init, &eps, &cfg, 8, Exec::Parallel).unwrap();
    let (b, mb) = train_grpo(&spec, &init, &eps, &cfg, 8, Exec::Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    assert_eq!(ma[0].kl, 0.0);
    assert!(ma.iter().all(|m| m.kl >= 0.0 && m.drift_rate >= 0.0 && m.drift_rate <= 1.0));
    let mut buf = Vec::new();
    write_grpo_metrics(&mut buf, &ma).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
}

#[test]
fn reused_rollouts_move_weights_off_one() {
    let spec = PolicySpec::standard(PerceptionConfig::default());
    let eps = episodes(&spec, 5, 4);
    let init = spec.random_params(0.1, 1).unwrap();
    let cfg = GrpoConfig { inner_epochs: 3, learning_rate: 0.5, ..Default::default() };
    let mut trainer = GrpoTrainer::new(&spec, &init, &eps, &cfg, 2, Exec::Parallel).unwrap();
    let mut moved = false;
    for _ in 0..10 {
        let out = trainer.step().unwrap();
        for g in &out.groups {
            assert!(g.weights.iter().all(|w| (w - 1.0).abs() < 1e-12));
            let lp: Vec<f64> = g
                .trajectories
                .iter()
                .map(|t| policy::logprob(&spec, trainer.params(), &eps[g.episode], t).unwrap())
                .collect();
            moved |= lp.iter().zip(&g.trajectories).any(|(l, t)| (l - t.total_logprob).abs() > 1e-6);
        }
    }
    assert!(moved);
}
