//! Supervised initialisation: plain mini-batch gradient descent on the mean
//! negative log-likelihood of gold (trace, STOP, answer) sequences.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::policy::{self, Episode, Gradient, PolicyParams, PolicySpec, Trajectory};
use crate::rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Derived from the master seed when absent.
    pub seed: Option<u64>,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig { learning_rate: 0.05, epochs: 30, batch_size: 32, seed: None }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "sft needs learning_rate >= 0, epochs > 0 and batch_size > 0 (got {}, {}, {})",
                self.learning_rate, self.epochs, self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftEpoch {
    /// 0 is the initial parameters.
    pub epoch: usize,
    pub mean_nll: f64,
}

/// The gold sequence of a question as a trajectory.
pub fn gold_trajectory(ep: &Episode) -> Result<Trajectory> {
    let q = &ep.question;
    let slot = q
        .gold_slot()
        .ok_or_else(|| Error::InvalidTrajectory(format!("question {} has no gold option", q.id)))?;
    Ok(Trajectory {
        trace: q.gold_trace.clone(),
        answer_slot: slot,
        answer_content: q.gold_content.clone(),
        step_logprobs: Vec::new(),
        total_logprob: 0.0,
        well_formed: true,
    })
}

pub fn nll(spec: &PolicySpec, params: &PolicyParams, ep: &Episode) -> Result<f64> {
    Ok(-policy::logprob(spec, params, ep, &gold_trajectory(ep)?)?)
}

/// Mean NLL over `episodes`, reduced in index order.
pub fn mean_nll(spec: &PolicySpec, params: &PolicyParams, episodes: &[Episode], exec: Exec) -> Result<f64> {
    let losses = exec.map(episodes, |_, ep| nll(spec, params, ep));
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    let mean = total / episodes.len().max(1) as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite(format!("sft mean loss ({mean})")));
    }
    Ok(mean)
}

/// Gradient of the mean NLL over `batch` (a descent direction is its negative).
pub fn mean_nll_grad(spec: &PolicySpec, params: &PolicyParams, batch: &[&Episode], exec: Exec) -> Result<Gradient> {
    let grads = exec.map(batch, |_, ep| -> Result<Gradient> {
        let gold = gold_trajectory(ep)?;
        policy::grad_logprob(spec, params, ep, &gold)
    });
    let mut g = Gradient::zeros_like(params);
    let w = -1.0 / batch.len().max(1) as f64;
    for gi in grads {
        g.add_scaled(&gi?, w);
    }
    Ok(g)
}

pub fn train_sft(
    spec: &PolicySpec,
    init: &PolicyParams,
    episodes: &[Episode],
    cfg: &SftConfig,
    seed: u64,
    exec: Exec,
) -> Result<(PolicyParams, Vec<SftEpoch>)> {
    cfg.validate()?;
    spec.check_params(init)?;
    if episodes.is_empty() {
        return Err(Error::Config("sft dataset is empty".into()));
    }
    let mut params = init.clone();
    let mut curve = vec![SftEpoch { epoch: 0, mean_nll: mean_nll(spec, &params, episodes, exec)? }];
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(seed, "sft/shuffle", &[epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Episode> = chunk.iter().map(|&i| &episodes[i]).collect();
            let g = mean_nll_grad(spec, &params, &batch, exec)?;
            params.apply(&g, -cfg.learning_rate)?;
        }
        let mean = mean_nll(spec, &params, episodes, exec)?;
        log::debug!("sft epoch {epoch}: mean nll {mean:.6}");
        curve.push(SftEpoch { epoch, mean_nll: mean });
    }
    Ok((params, curve))
}

pub fn write_sft_metrics<W: Write>(out: &mut W, curve: &[SftEpoch]) -> Result<()> {
    for e in curve {
        serde_json::to_writer(&mut *out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
