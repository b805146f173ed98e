//! Accuracy, format and logical-consistency rewards.
//!
//! The consistency term re-asks the question with the options shuffled by a
//! non-identity permutation and compares the two answers by content:
//! `r_lcr = ln(e + L_t) * phi - omega`, with `phi = alpha` when both answers
//! are the gold content and `omega = eta` when their contents differ.

use crate::error::{Error, Result};
use crate::policy::{self, Decode, Episode, PolicyParams, Trajectory};
use crate::scene::verify::reasoning_is_sound;
use crate::scene::McqSample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub alpha: f64,
    pub eta: f64,
    pub acc_value: f64,
    pub fmt_value: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { alpha: 0.5, eta: 0.5, acc_value: 1.0, fmt_value: 0.5 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("eta", self.eta), ("acc_value", self.acc_value), ("fmt_value", self.fmt_value)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("reward {name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationRecord {
    /// New slot `i` shows old slot `mapping[i]`.
    pub mapping: Vec<usize>,
    pub a_slot: usize,
    pub a_content: String,
    pub a_tilde_slot: usize,
    pub a_tilde_content: String,
    pub drift: bool,
}

impl PermutationRecord {
    pub fn new(mapping: Vec<usize>, a_slot: usize, a_content: String, a_tilde_slot: usize, a_tilde_content: String) -> Self {
        let drift = a_content != a_tilde_content;
        PermutationRecord { mapping, a_slot, a_content, a_tilde_slot, a_tilde_content, drift }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_fmt: f64,
    pub r_lcr: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(r_acc: f64, r_fmt: f64, r_lcr: f64) -> Self {
        RewardBreakdown { r_acc, r_fmt, r_lcr, total: r_acc + r_fmt + r_lcr }
    }
}

/// Apply `mapping` (new slot `i` shows old slot `mapping[i]`).
pub fn apply_permutation(question: &McqSample, mapping: &[usize]) -> Result<McqSample> {
    let n = question.options.len();
    let mut seen = vec![false; n];
    if mapping.len() != n || !mapping.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true)) {
        return Err(Error::PermutationMismatch(format!("{mapping:?} is not a permutation of 0..{n}")));
    }
    let mut out = question.clone();
    out.options = mapping.iter().map(|&i| question.options[i].clone()).collect();
    Ok(out)
}

/// Shuffle the options by a uniformly random non-identity permutation.
pub fn permute_options<R: Rng + ?Sized>(question: &McqSample, rng: &mut R) -> (McqSample, Vec<usize>) {
    let n = question.options.len();
    assert!(n >= 2, "question {} has fewer than two options", question.id);
    let identity: Vec<usize> = (0..n).collect();
    let mut mapping = identity.clone();
    while mapping == identity {
        mapping.shuffle(rng);
    }
    let permuted = apply_permutation(question, &mapping).expect("shuffle yields a permutation");
    (permuted, mapping)
}

pub fn accuracy_reward(a_content: &str, gold_content: &str, cfg: &RewardConfig) -> f64 {
    if a_content == gold_content {
        cfg.acc_value
    } else {
        0.0
    }
}

pub fn is_well_formed(traj: &Trajectory, question: &McqSample) -> bool {
    traj.well_formed
        && traj.trace.iter().all(|a| a.validate().is_ok())
        && question.options.get(traj.answer_slot) == Some(&traj.answer_content)
}

pub fn format_reward(traj: &Trajectory, question: &McqSample, cfg: &RewardConfig) -> f64 {
    if is_well_formed(traj, question) {
        cfg.fmt_value
    } else {
        0.0
    }
}

pub fn lcr(trace_len: usize, record: &PermutationRecord, gold_content: &str, cfg: &RewardConfig) -> f64 {
    let phi = if record.a_content == gold_content && record.a_tilde_content == gold_content { cfg.alpha } else { 0.0 };
    let omega = if record.a_content != record.a_tilde_content { cfg.eta } else { 0.0 };
    (std::f64::consts::E + trace_len as f64).ln() * phi - omega
}

/// Total reward. With `lcr_enabled` false the consistency term is zero but
/// the record is still used by callers for drift statistics.
pub fn compose_reward(
    traj: &Trajectory,
    question: &McqSample,
    record: &PermutationRecord,
    cfg: &RewardConfig,
    lcr_enabled: bool,
) -> RewardBreakdown {
    let r_lcr = if lcr_enabled { lcr(traj.trace.len(), record, &question.gold_content, cfg) } else { 0.0 };
    RewardBreakdown::new(
        accuracy_reward(&traj.answer_content, &question.gold_content, cfg),
        format_reward(traj, question, cfg),
        r_lcr,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Alignment {
    #[serde(rename = "CR-CA")]
    CrCa,
    #[serde(rename = "CR-WA")]
    CrWa,
    #[serde(rename = "WR-CA")]
    WrCa,
    #[serde(rename = "WR-WA")]
    WrWa,
}

impl Alignment {
    pub const ALL: [Alignment; 4] = [Alignment::CrCa, Alignment::CrWa, Alignment::WrCa, Alignment::WrWa];

    pub fn as_str(self) -> &'static str {
        match self {
            Alignment::CrCa => "CR-CA",
            Alignment::CrWa => "CR-WA",
            Alignment::WrCa => "WR-CA",
            Alignment::WrWa => "WR-WA",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify_alignment(trace_sound: bool, answer_correct: bool) -> Alignment {
    match (trace_sound, answer_correct) {
        (true, true) => Alignment::CrCa,
        (true, false) => Alignment::CrWa,
        (false, true) => Alignment::WrCa,
        (false, false) => Alignment::WrWa,
    }
}

/// Everything known about one scored trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub record: PermutationRecord,
    pub reward: RewardBreakdown,
    pub alignment: Alignment,
}

/// Permute, run the frozen second pass, and score a trajectory.
pub fn score_trajectory<R: Rng + ?Sized>(
    params: &PolicyParams,
    ep: &Episode,
    traj: &Trajectory,
    cfg: &RewardConfig,
    lcr_enabled: bool,
    decode: Decode,
    rng: &mut R,
) -> Result<Scored> {
    let (permuted, mapping) = permute_options(&ep.question, rng);
    let second = policy::frozen_second_pass(params, ep, traj, &permuted, decode, rng)?;
    let record = PermutationRecord::new(mapping, traj.answer_slot, traj.answer_content.clone(), second.slot, second.content);
    let reward = compose_reward(traj, &ep.question, &record, cfg, lcr_enabled);
    let sound = reasoning_is_sound(&ep.scene, &ep.stats, &ep.question, &traj.trace)?;
    let alignment = classify_alignment(sound, traj.answer_content == ep.question.gold_content);
    Ok(Scored { record, reward, alignment })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotAnswer {
    pub slot: usize,
    pub content: String,
}

/// One line of the reward audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub sample_id: String,
    #[serde(rename = "L_t")]
    pub l_t: usize,
    pub permutation: Vec<usize>,
    pub a: SlotAnswer,
    #[serde(rename = "a_tilde")]
    pub a_tilde: SlotAnswer,
    pub r_acc: f64,
    pub r_fmt: f64,
    pub r_lcr: f64,
    pub total: f64,
    pub alignment_cell: Alignment,
}

impl AuditRecord {
    pub fn new(sample_id: &str, traj: &Trajectory, scored: &Scored) -> Self {
        let r = &scored.record;
        AuditRecord {
            sample_id: sample_id.to_string(),
            l_t: traj.trace.len(),
            permutation: r.mapping.clone(),
            a: SlotAnswer { slot: r.a_slot, content: r.a_content.clone() },
            a_tilde: SlotAnswer { slot: r.a_tilde_slot, content: r.a_tilde_content.clone() },
            r_acc: scored.reward.r_acc,
            r_fmt: scored.reward.r_fmt,
            r_lcr: scored.reward.r_lcr,
            total: scored.reward.total,
            alignment_cell: scored.alignment,
        }
    }
}

pub fn write_audit<W: Write + ?Sized>(out: &mut W, records: &[AuditRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(a: &str, at: &str) -> PermutationRecord {
        PermutationRecord::new(vec![1, 0], 0, a.into(), 0, at.into())
    }

    #[test]
    fn breakdown_total_is_sum() {
        let b = RewardBreakdown::new(1.0, 0.5, -0.5);
        assert_eq!(b.total, 1.0);
    }

    #[test]
    fn config_rejects_nonpositive() {
        assert!(RewardConfig { eta: 0.0, ..Default::default() }.validate().is_err());
        assert!(RewardConfig { alpha: f64::NAN, ..Default::default() }.validate().is_err());
        RewardConfig::default().validate().unwrap();
    }

    #[test]
    fn lcr_simple_cases() {
        let cfg = RewardConfig::default();
        assert_eq!(lcr(0, &record("3", "3"), "3", &cfg), 0.5);
        assert_eq!(lcr(2, &record("3", "5"), "3", &cfg), -0.5);
        assert_eq!(lcr(5, &record("5", "5"), "3", &cfg), 0.0);
    }
}
