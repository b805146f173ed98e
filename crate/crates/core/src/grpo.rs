//! Group-relative policy optimisation with the consistency reward.
//!
//! Each step samples `groups_per_step` questions uniformly, rolls out a group
//! of `group_size` trajectories per question under the current snapshot
//! (theta_old), scores them, normalises rewards within each group, and runs
//! `inner_epochs` ascent steps on
//!
//!   J = mean_g (1/G) sum_i min(w_i A_i, clip(w_i, 1-eps, 1+eps) A_i) - beta KL(pi || pi_ref)
//!
//! with `w_i = pi(o_i) / pi_old(o_i)`. Advantages are constants. The KL is
//! exact and taken over every decision state visited by the step's rollouts.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::policy::{self, Decode, Episode, Gradient, PolicyParams, PolicySpec, Probe, Trajectory};
use crate::reward::{self, Alignment, AuditRecord, PermutationRecord, RewardBreakdown, RewardConfig};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub inner_epochs: usize,
    pub groups_per_step: usize,
    pub lcr_enabled: bool,
    /// Derived from the master seed when absent.
    pub seed: Option<u64>,
    pub reward: RewardConfig,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_beta: 0.04,
            learning_rate: 0.02,
            steps: 600,
            inner_epochs: 1,
            groups_per_step: 1,
            lcr_enabled: true,
            seed: None,
            reward: RewardConfig::default(),
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.group_size >= 2
            && self.clip_epsilon.is_finite()
            && self.clip_epsilon > 0.0
            && self.kl_beta.is_finite()
            && self.kl_beta >= 0.0
            && self.learning_rate.is_finite()
            && self.learning_rate > 0.0
            && self.inner_epochs >= 1
            && self.groups_per_step >= 1;
        if !ok {
            return Err(Error::Config(format!("invalid grpo config {self:?}")));
        }
        self.reward.validate()
    }
}

/// `(R_i - mean) / std` with the population std; all zeros when std < 1e-12.
pub fn normalize_advantages(totals: &[f64]) -> Vec<f64> {
    let n = totals.len() as f64;
    let mean = totals.iter().sum::<f64>() / n;
    let var = totals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    // NaN std (empty or non-finite group) also yields zeros.
    if std.is_nan() || std < 1e-12 {
        return vec![0.0; totals.len()];
    }
    totals.iter().map(|r| (r - mean) / std).collect()
}

pub fn clipped_loss(w: f64, a: f64, eps: f64) -> f64 {
    (w * a).min(w.clamp(1.0 - eps, 1.0 + eps) * a)
}

/// d clipped_loss / d w: `a` while the unclipped term is the minimum, else 0.
fn clipped_loss_dw(w: f64, a: f64, eps: f64) -> f64 {
    if w * a <= w.clamp(1.0 - eps, 1.0 + eps) * a {
        a
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupRollout {
    /// Index of the question's episode in the training set.
    pub episode: usize,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
    pub weights: Vec<f64>,
    pub records: Vec<PermutationRecord>,
    pub alignments: Vec<Alignment>,
}

impl GroupRollout {
    pub fn audit(&self, sample_id: &str) -> Vec<AuditRecord> {
        (0..self.trajectories.len())
            .map(|i| {
                let scored = reward::Scored {
                    record: self.records[i].clone(),
                    reward: self.rewards[i],
                    alignment: self.alignments[i],
                };
                AuditRecord::new(sample_id, &self.trajectories[i], &scored)
            })
            .collect()
    }
}

/// Roll out and score one group. Member `i` draws from `rngs[i]`.
pub fn rollout_group(
    spec: &PolicySpec,
    params: &PolicyParams,
    ep: &Episode,
    episode: usize,
    cfg: &GrpoConfig,
    seed: u64,
    exec: Exec,
) -> Result<GroupRollout> {
    let members = exec.map_range(cfg.group_size, |i| -> Result<_> {
        let mut r = rng::stream(seed, "member", &[i as u64]);
        let t = policy::sample_trajectory(spec, params, ep, Decode::Sample, &mut r);
        let s = reward::score_trajectory(params, ep, &t, &cfg.reward, cfg.lcr_enabled, Decode::Sample, &mut r)?;
        Ok((t, s))
    });
    let mut g = GroupRollout {
        episode,
        trajectories: Vec::with_capacity(cfg.group_size),
        rewards: Vec::with_capacity(cfg.group_size),
        advantages: Vec::new(),
        weights: Vec::new(),
        records: Vec::with_capacity(cfg.group_size),
        alignments: Vec::with_capacity(cfg.group_size),
    };
    for m in members {
        let (t, s) = m?;
        g.trajectories.push(t);
        g.rewards.push(s.reward);
        g.records.push(s.record);
        g.alignments.push(s.alignment);
    }
    let totals: Vec<f64> = g.rewards.iter().map(|r| r.total).collect();
    g.advantages = normalize_advantages(&totals);
    let lp = exec.map(&g.trajectories, |_, t| policy::logprob(spec, params, ep, t));
    g.weights = lp
        .into_iter()
        .zip(&g.trajectories)
        .map(|(l, t)| l.map(|l| (l - t.total_logprob).exp()))
        .collect::<Result<_>>()?;
    Ok(g)
}

/// Every decision state visited by the groups' trajectories.
pub fn probe_set<'a>(episodes: &'a [Episode], groups: &'a [GroupRollout]) -> Vec<Probe<'a>> {
    let mut probes = Vec::new();
    for g in groups {
        for t in &g.trajectories {
            for l in 0..=t.trace.len() {
                probes.push(Probe { episode: &episodes[g.episode], prefix: &t.trace[..l] });
            }
        }
    }
    probes
}

/// Importance weights of the groups' trajectories under `params` relative to
/// the logprobs recorded at rollout time (theta_old).
fn weights(spec: &PolicySpec, params: &PolicyParams, episodes: &[Episode], groups: &[GroupRollout], exec: Exec) -> Result<Vec<Vec<f64>>> {
    exec.map(groups, |_, g| {
        g.trajectories
            .iter()
            .map(|t| Ok((policy::logprob(spec, params, &episodes[g.episode], t)? - t.total_logprob).exp()))
            .collect::<Result<Vec<f64>>>()
    })
    .into_iter()
    .collect()
}

#[allow(clippy::too_many_arguments)]
/// Surrogate objective. theta_old enters through each trajectory's recorded
/// `total_logprob`.
pub fn objective(
    spec: &PolicySpec,
    params: &PolicyParams,
    reference: &PolicyParams,
    episodes: &[Episode],
    groups: &[GroupRollout],
    probes: &[Probe<'_>],
    cfg: &GrpoConfig,
    exec: Exec,
) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::Config("objective needs at least one group".into()));
    }
    let w = weights(spec, params, episodes, groups, exec)?;
    let mut surrogate = 0.0;
    for (g, wg) in groups.iter().zip(&w) {
        let s: f64 = wg.iter().zip(&g.advantages).map(|(wi, a)| clipped_loss(*wi, *a, cfg.clip_epsilon)).sum();
        surrogate += s / wg.len() as f64;
    }
    surrogate /= groups.len() as f64;
    let kl = if cfg.kl_beta > 0.0 { policy::kl_divergence(spec, params, reference, probes) } else { 0.0 };
    let j = surrogate - cfg.kl_beta * kl;
    if !j.is_finite() {
        return Err(Error::NonFinite(format!("grpo objective (surrogate {surrogate}, kl {kl})")));
    }
    Ok(j)
}

/// Gradient of [`objective`] with respect to `params`.
#[allow(clippy::too_many_arguments)]
pub fn objective_grad(
    spec: &PolicySpec,
    params: &PolicyParams,
    reference: &PolicyParams,
    episodes: &[Episode],
    groups: &[GroupRollout],
    probes: &[Probe<'_>],
    cfg: &GrpoConfig,
    exec: Exec,
) -> Result<Gradient> {
    let w = weights(spec, params, episodes, groups, exec)?;
    let mut items = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        let scale = 1.0 / (groups.len() * g.trajectories.len()) as f64;
        for (i, t) in g.trajectories.iter().enumerate() {
            let coef = scale * w[gi][i] * clipped_loss_dw(w[gi][i], g.advantages[i], cfg.clip_epsilon);
            if coef != 0.0 {
                items.push((g.episode, t, coef));
            }
        }
    }
    let parts = exec.map(&items, |_, (e, t, coef)| -> Result<Gradient> {
        let ep = &episodes[*e];
        let idx = policy::trajectory_decisions(spec, ep, t)?;
        let mut g = Gradient::zeros_like(params);
        policy::accumulate_grad(spec, params, ep, &t.trace, &idx, t.answer_slot, *coef, &mut g);
        Ok(g)
    });
    let mut grad = Gradient::zeros_like(params);
    for p in parts {
        grad.add_scaled(&p?, 1.0);
    }
    if cfg.kl_beta > 0.0 {
        let (_, kg) = policy::kl_with_grad(spec, params, reference, probes);
        grad.add_scaled(&kg, -cfg.kl_beta);
    }
    Ok(grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_r_acc: f64,
    pub mean_r_lcr: f64,
    pub drift_rate: f64,
    /// KL to the reference at the rollout snapshot.
    pub kl: f64,
    /// Objective at the rollout snapshot.
    pub objective: f64,
}

pub struct StepOutput {
    pub groups: Vec<GroupRollout>,
    pub metrics: StepMetrics,
}

pub struct GrpoTrainer<'a> {
    spec: &'a PolicySpec,
    episodes: &'a [Episode],
    cfg: GrpoConfig,
    seed: u64,
    reference: PolicyParams,
    params: PolicyParams,
    step: usize,
    exec: Exec,
}

impl<'a> GrpoTrainer<'a> {
    /// `init` serves as both the starting point and the fixed reference.
    pub fn new(spec: &'a PolicySpec, init: &PolicyParams, episodes: &'a [Episode], cfg: &GrpoConfig, seed: u64, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        spec.check_params(init)?;
        if episodes.is_empty() {
            return Err(Error::Config("grpo dataset is empty".into()));
        }
        Ok(GrpoTrainer {
            spec,
            episodes,
            cfg: cfg.clone(),
            seed,
            reference: init.clone(),
            params: init.clone(),
            step: 0,
            exec,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn reference(&self) -> &PolicyParams {
        &self.reference
    }

    pub fn into_params(self) -> PolicyParams {
        self.params
    }

    pub fn step(&mut self) -> Result<StepOutput> {
        let (spec, cfg, exec) = (self.spec, &self.cfg, self.exec);
        let step = self.step as u64;
        let groups: Vec<GroupRollout> = exec
            .map_range(cfg.groups_per_step, |g| {
                let e = rng::stream(self.seed, "question", &[step, g as u64]).random_range(0..self.episodes.len());
                let seed = rng::derive_seed(self.seed, "group", &[step, g as u64]);
                rollout_group(spec, &self.params, &self.episodes[e], e, cfg, seed, exec)
            })
            .into_iter()
            .collect::<Result<_>>()?;
        let probes = probe_set(self.episodes, &groups);
        let kl = policy::kl_divergence(spec, &self.params, &self.reference, &probes);
        let obj = objective(spec, &self.params, &self.reference, self.episodes, &groups, &probes, cfg, exec)?;
        for _ in 0..cfg.inner_epochs {
            let g = objective_grad(spec, &self.params, &self.reference, self.episodes, &groups, &probes, cfg, exec)?;
            self.params.apply(&g, cfg.learning_rate)?;
        }
        let n: usize = groups.iter().map(|g| g.rewards.len()).sum();
        let nf = n as f64;
        let all = || groups.iter().flat_map(|g| g.rewards.iter());
        let metrics = StepMetrics {
            step: self.step,
            mean_reward: all().map(|r| r.total).sum::<f64>() / nf,
            mean_r_acc: all().map(|r| r.r_acc).sum::<f64>() / nf,
            mean_r_lcr: all().map(|r| r.r_lcr).sum::<f64>() / nf,
            drift_rate: groups.iter().flat_map(|g| &g.records).filter(|r| r.drift).count() as f64 / nf,
            kl,
            objective: obj,
        };
        self.step += 1;
        Ok(StepOutput { groups, metrics })
    }
}

pub fn train_grpo(
    spec: &PolicySpec,
    init: &PolicyParams,
    episodes: &[Episode],
    cfg: &GrpoConfig,
    seed: u64,
    exec: Exec,
) -> Result<(PolicyParams, Vec<StepMetrics>)> {
    let mut trainer = GrpoTrainer::new(spec, init, episodes, cfg, seed, exec)?;
    let mut metrics = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let out = trainer.step()?;
        if out.metrics.step % 50 == 0 {
            log::debug!("grpo {:?}", out.metrics);
        }
        metrics.push(out.metrics);
    }
    Ok((trainer.into_params(), metrics))
}

pub fn write_grpo_metrics<W: Write>(out: &mut W, metrics: &[StepMetrics]) -> Result<()> {
    for m in metrics {
        serde_json::to_writer(&mut *out, m)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advantage_examples() {
        assert_eq!(normalize_advantages(&[1.0, 1.0, 1.0]), vec![0.0; 3]);
        assert_eq!(normalize_advantages(&[0.0, 2.0]), vec![-1.0, 1.0]);
        let a = normalize_advantages(&[1.0, 2.0, 3.0]);
        let s = (2.0f64 / 3.0).sqrt();
        assert!((a[0] + 1.0 / s).abs() < 1e-12 && a[1].abs() < 1e-12 && (a[2] - 1.0 / s).abs() < 1e-12);
        assert!((a[2] - 1.2247).abs() < 5e-5);
    }

    #[test]
    fn clip_examples() {
        assert!((clipped_loss(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert_eq!(clipped_loss(1.5, -1.0, 0.2), -1.5);
        assert_eq!(clipped_loss(1.0, 0.7, 0.5), 0.7);
    }
}
