//! Linear-softmax reasoning policy with closed-form gradients.
//!
//! A trajectory is a sequence of atom decisions (softmax over the vocabulary
//! plus STOP, conditioned on the context after the current prefix) followed
//! by one answer decision (softmax over the presented slots). A trace that
//! reaches `l_max` atoms has no STOP decision and is not well formed.

pub mod checkpoint;
pub mod features;
pub mod params;

use crate::error::{Error, Result};
use crate::scene::atom::standard_vocabulary;
use crate::scene::mcq::DEFAULT_K;
use crate::scene::{EvidenceAtom, McqSample, Scene};
use rand::Rng;
use std::collections::HashMap;
use std::sync::Arc;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use features::{context_dim, featurize, Episode, FeatureVector, PerceptionConfig, CONTENT_DIM, CONTEXT_DIM};
pub use params::{log_softmax, softmax, Gradient, PolicyParams};

pub const DEFAULT_L_MAX: usize = 6;

/// Static structure shared by every parameter snapshot.
#[derive(Clone, Debug)]
pub struct PolicySpec {
    pub vocab: Vec<EvidenceAtom>,
    pub(crate) index: Arc<HashMap<EvidenceAtom, usize>>,
    pub k: usize,
    pub l_max: usize,
    pub perception: PerceptionConfig,
}

impl PolicySpec {
    pub fn new(vocab: Vec<EvidenceAtom>, k: usize, l_max: usize, perception: PerceptionConfig) -> Result<PolicySpec> {
        if vocab.is_empty() || k < 2 || l_max == 0 {
            return Err(Error::Config(format!(
                "policy needs a non-empty vocabulary, k >= 2 and l_max >= 1 (got {}, {k}, {l_max})",
                vocab.len()
            )));
        }
        perception.validate()?;
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, a) in vocab.iter().enumerate() {
            a.validate()?;
            if index.insert(a.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary atom {a}")));
            }
        }
        Ok(PolicySpec { vocab, index: Arc::new(index), k, l_max, perception })
    }

    pub fn standard(perception: PerceptionConfig) -> PolicySpec {
        PolicySpec::new(standard_vocabulary(), DEFAULT_K, DEFAULT_L_MAX, perception).expect("standard vocabulary is valid")
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn atom_index(&self, atom: &EvidenceAtom) -> Option<usize> {
        self.index.get(atom).copied()
    }

    pub fn zero_params(&self) -> PolicyParams {
        PolicyParams::zeros(self.vocab_size(), self.k)
    }

    pub fn random_params(&self, scale: f64, seed: u64) -> Result<PolicyParams> {
        PolicyParams::random(self.vocab_size(), self.k, scale, seed)
    }

    pub fn episode(&self, scene: &Scene, question: &McqSample) -> Result<Episode> {
        Episode::new(self, scene, question)
    }

    pub fn check_params(&self, params: &PolicyParams) -> Result<()> {
        params.validate()?;
        if params.vocab_size != self.vocab_size() || params.k() != self.k {
            return Err(Error::Config(format!(
                "parameters sized for vocabulary {} and k {}, policy has {} and {}",
                params.vocab_size,
                params.k(),
                self.vocab_size(),
                self.k
            )));
        }
        Ok(())
    }
}

/// How a decision is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decode {
    Sample,
    /// Deterministic mode. Atom ties go to the lowest vocabulary index;
    /// answer ties go to the lexicographically smallest content, so the
    /// choice does not depend on option order.
    Argmax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Emitted atoms, STOP excluded.
    pub trace: Vec<EvidenceAtom>,
    pub answer_slot: usize,
    pub answer_content: String,
    pub step_logprobs: Vec<f64>,
    pub total_logprob: f64,
    /// The trace ended with STOP before `l_max`.
    pub well_formed: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecondPass {
    pub slot: usize,
    pub content: String,
}

fn choose<R: Rng + ?Sized>(logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, lp) in logp.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last = i;
        }
        cum += p;
        if u < cum {
            return i;
        }
    }
    last
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn argmax_by_content(logits: &[f64], options: &[String]) -> usize {
    let mut best = 0;
    for i in 1..logits.len() {
        if logits[i] > logits[best] || (logits[i] == logits[best] && options[i] < options[best]) {
            best = i;
        }
    }
    best
}

fn answer_decision<R: Rng + ?Sized>(
    params: &PolicyParams,
    ep: &Episode,
    trace: &[EvidenceAtom],
    decode: Decode,
    rng: &mut R,
) -> (usize, f64) {
    let logits = params.answer_logits(&ep.slot_features(trace));
    let lsm = log_softmax(&logits);
    let slot = match decode {
        Decode::Sample => choose(&lsm, rng),
        Decode::Argmax => argmax_by_content(&logits, &ep.question.options),
    };
    (slot, lsm[slot])
}

/// Roll out one trajectory. Pure in `(params, episode, rng state)`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    spec: &PolicySpec,
    params: &PolicyParams,
    ep: &Episode,
    decode: Decode,
    rng: &mut R,
) -> Trajectory {
    let stop = params.stop_index();
    let mut trace = Vec::new();
    let mut step_logprobs = Vec::new();
    let mut well_formed = false;
    while trace.len() < spec.l_max {
        let x = ep.context(&trace, spec.l_max);
        let logits = params.trace_logits(&x);
        let lsm = log_softmax(&logits);
        let a = match decode {
            Decode::Sample => choose(&lsm, rng),
            Decode::Argmax => argmax_first(&logits),
        };
        step_logprobs.push(lsm[a]);
        if a == stop {
            well_formed = true;
            break;
        }
        trace.push(spec.vocab[a].clone());
    }
    let (answer_slot, lp) = answer_decision(params, ep, &trace, decode, rng);
    step_logprobs.push(lp);
    let total_logprob = step_logprobs.iter().sum();
    Trajectory {
        trace,
        answer_slot,
        answer_content: ep.question.options[answer_slot].clone(),
        step_logprobs,
        total_logprob,
        well_formed,
    }
}

/// Atom indices of a trajectory, validated against the policy vocabulary and question.
fn decisions(spec: &PolicySpec, ep: &Episode, traj: &Trajectory) -> Result<Vec<usize>> {
    if traj.trace.len() > spec.l_max {
        return Err(Error::InvalidTrajectory(format!("trace length {} exceeds l_max {}", traj.trace.len(), spec.l_max)));
    }
    if traj.answer_slot >= ep.n_options() {
        return Err(Error::InvalidTrajectory(format!(
            "answer slot {} out of range for {} options",
            traj.answer_slot,
            ep.n_options()
        )));
    }
    traj.trace
        .iter()
        .map(|a| {
            spec.atom_index(a)
                .ok_or_else(|| Error::InvalidTrajectory(format!("atom {a} is not in the vocabulary")))
        })
        .collect()
}

/// Exact log-probability of the trajectory's decisions, accumulated in the
/// same order as [`sample_trajectory`].
pub fn logprob(spec: &PolicySpec, params: &PolicyParams, ep: &Episode, traj: &Trajectory) -> Result<f64> {
    let idx = decisions(spec, ep, traj)?;
    let mut steps = Vec::with_capacity(idx.len() + 2);
    for t in 0..=idx.len() {
        if t == spec.l_max {
            break;
        }
        let lsm = log_softmax(&params.trace_logits(&ep.context(&traj.trace[..t], spec.l_max)));
        steps.push(lsm[idx.get(t).copied().unwrap_or(params.stop_index())]);
    }
    let lsm = log_softmax(&params.answer_logits(&ep.slot_features(&traj.trace)));
    steps.push(lsm[traj.answer_slot]);
    Ok(steps.iter().sum())
}

/// Analytic gradient of [`logprob`]: observed minus expected features at
/// every decision.
pub fn grad_logprob(spec: &PolicySpec, params: &PolicyParams, ep: &Episode, traj: &Trajectory) -> Result<Gradient> {
    let idx = decisions(spec, ep, traj)?;
    let mut g = Gradient::zeros_like(params);
    accumulate_grad(spec, params, ep, &traj.trace, &idx, traj.answer_slot, 1.0, &mut g);
    Ok(g)
}

/// `g += coef * d logprob / d params`, with pre-validated decisions.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_grad(
    spec: &PolicySpec,
    params: &PolicyParams,
    ep: &Episode,
    trace: &[EvidenceAtom],
    idx: &[usize],
    answer_slot: usize,
    coef: f64,
    g: &mut Gradient,
) {
    for t in 0..=idx.len() {
        if t == spec.l_max {
            break;
        }
        let x = ep.context(&trace[..t], spec.l_max);
        let p = softmax(&params.trace_logits(&x));
        let chosen = idx.get(t).copied().unwrap_or(params.stop_index());
        for (r, pr) in p.iter().enumerate() {
            let obs = if r == chosen { 1.0 } else { 0.0 };
            g.add_row(r, coef * (obs - pr), &x);
        }
    }
    let feats = ep.slot_features(trace);
    let p = softmax(&params.answer_logits(&feats));
    for (s, (ps, c)) in p.iter().zip(&feats).enumerate() {
        let obs = if s == answer_slot { 1.0 } else { 0.0 };
        let d = coef * (obs - ps);
        for (gc, ci) in g.answer_content.iter_mut().zip(c) {
            *gc += d * ci;
        }
        g.answer_position[s] += d;
    }
}

/// Validated atom indices, for trainers that accumulate gradients in bulk.
pub(crate) fn trajectory_decisions(spec: &PolicySpec, ep: &Episode, traj: &Trajectory) -> Result<Vec<usize>> {
    decisions(spec, ep, traj)
}

/// Check that `permuted` carries the same option contents as `original`.
pub fn check_permutation(original: &McqSample, permuted: &McqSample) -> Result<()> {
    let mut a = original.options.clone();
    let mut b = permuted.options.clone();
    a.sort();
    b.sort();
    if a != b {
        return Err(Error::PermutationMismatch(format!("{:?} vs {:?}", original.options, permuted.options)));
    }
    Ok(())
}

/// Re-run only the answer head on the frozen trace with the options
/// presented in a new order.
pub fn frozen_second_pass<R: Rng + ?Sized>(
    params: &PolicyParams,
    ep: &Episode,
    traj: &Trajectory,
    permuted: &McqSample,
    decode: Decode,
    rng: &mut R,
) -> Result<SecondPass> {
    check_permutation(&ep.question, permuted)?;
    let ep2 = ep.with_question(permuted.clone());
    let (slot, _) = answer_decision(params, &ep2, &traj.trace, decode, rng);
    Ok(SecondPass { slot, content: permuted.options[slot].clone() })
}

/// Answer-slot distribution after a fixed trace, in presented order.
pub fn answer_distribution(params: &PolicyParams, ep: &Episode, trace: &[EvidenceAtom]) -> Vec<f64> {
    softmax(&params.answer_logits(&ep.slot_features(trace)))
}

/// KL(p || q) between two categorical distributions given as log-probabilities.
pub fn categorical_kl(logp: &[f64], logq: &[f64]) -> f64 {
    logp.iter().zip(logq).map(|(lp, lq)| lp.exp() * (lp - lq)).sum::<f64>().max(0.0)
}

/// A decision state at which the two policies are compared.
#[derive(Clone, Copy, Debug)]
pub struct Probe<'a> {
    pub episode: &'a Episode,
    pub prefix: &'a [EvidenceAtom],
}

/// Exact KL(params || reference) summed over the decisions available at
/// each probe (the next-atom choice while the prefix is below `l_max`, and
/// the answer choice given the prefix), averaged over probes.
pub fn kl_divergence(spec: &PolicySpec, params: &PolicyParams, reference: &PolicyParams, probes: &[Probe<'_>]) -> f64 {
    kl_and_grad(spec, params, reference, probes, false).0
}

/// KL as above and its gradient with respect to `params`.
pub fn kl_with_grad(
    spec: &PolicySpec,
    params: &PolicyParams,
    reference: &PolicyParams,
    probes: &[Probe<'_>],
) -> (f64, Gradient) {
    kl_and_grad(spec, params, reference, probes, true)
}

// d/dz_j KL(softmax(z) || q) = p_j * (log p_j - log q_j - KL)
fn kl_logit_grad(lp: &[f64], lq: &[f64], kl: f64) -> Vec<f64> {
    lp.iter().zip(lq).map(|(a, b)| a.exp() * (a - b - kl)).collect()
}

fn kl_and_grad(
    spec: &PolicySpec,
    params: &PolicyParams,
    reference: &PolicyParams,
    probes: &[Probe<'_>],
    with_grad: bool,
) -> (f64, Gradient) {
    let mut g = Gradient::zeros_like(params);
    if probes.is_empty() {
        return (0.0, g);
    }
    let w = 1.0 / probes.len() as f64;
    let mut total = 0.0;
    for probe in probes {
        let ep = probe.episode;
        if probe.prefix.len() < spec.l_max {
            let x = ep.context(probe.prefix, spec.l_max);
            let lp = log_softmax(&params.trace_logits(&x));
            let lq = log_softmax(&reference.trace_logits(&x));
            let kl = categorical_kl(&lp, &lq);
            total += kl;
            if with_grad {
                for (r, d) in kl_logit_grad(&lp, &lq, kl).into_iter().enumerate() {
                    g.add_row(r, w * d, &x);
                }
            }
        }
        let feats = ep.slot_features(probe.prefix);
        let lp = log_softmax(&params.answer_logits(&feats));
        let lq = log_softmax(&reference.answer_logits(&feats));
        let kl = categorical_kl(&lp, &lq);
        total += kl;
        if with_grad {
            for (s, d) in kl_logit_grad(&lp, &lq, kl).into_iter().enumerate() {
                for (gc, ci) in g.answer_content.iter_mut().zip(&feats[s]) {
                    *gc += w * d * ci;
                }
                g.answer_position[s] += w * d;
            }
        }
    }
    (total * w, g)
}
