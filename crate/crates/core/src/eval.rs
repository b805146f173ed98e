//! Accuracy, consistency and alignment metrics.
//!
//! Decoding is argmax throughout, so a report is a pure function of the
//! parameters, the evaluation set and the permutation seed.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::policy::{self, Decode, Episode, PolicyParams, PolicySpec};
use crate::reward::{apply_permutation, classify_alignment, permute_options, Alignment};
use crate::rng;
use crate::scene::verify::reasoning_is_sound;
use crate::scene::Category;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

pub const REPORT_VERSION: u32 = 1;

pub const CSV_HEADER: &str =
    "label,seed,n_samples,oa,aa,acc_count,acc_color,acc_shape,acc_scene,acc_reason,drift_rate,cr_ca,cr_wa,wr_ca,wr_wa";

/// What happened on one evaluation sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleOutcome {
    pub category: Category,
    pub correct: bool,
    pub sound: bool,
    pub drift_trials: usize,
    pub drifts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub format_version: u32,
    pub n_samples: usize,
    pub n_correct: usize,
    pub per_category: BTreeMap<Category, f64>,
    pub oa: f64,
    pub aa: f64,
    pub drift_rate: f64,
    pub drift_trials: usize,
    pub alignment_counts: BTreeMap<Alignment, usize>,
}

impl EvalReport {
    pub fn category(&self, c: Category) -> f64 {
        self.per_category.get(&c).copied().unwrap_or(0.0)
    }

    pub fn alignment(&self, a: Alignment) -> usize {
        self.alignment_counts.get(&a).copied().unwrap_or(0)
    }

    pub fn csv_row(&self, label: &str, seed: u64) -> String {
        let mut f = vec![label.to_string(), seed.to_string(), self.n_samples.to_string(), self.oa.to_string(), self.aa.to_string()];
        f.extend(Category::ALL.iter().map(|c| self.category(*c).to_string()));
        f.push(self.drift_rate.to_string());
        f.extend(Alignment::ALL.iter().map(|a| self.alignment(*a).to_string()));
        f.join(",")
    }
}

/// Assemble a report. Every category must be represented.
pub fn report_from_outcomes(outcomes: &[SampleOutcome]) -> Result<EvalReport> {
    let mut per = BTreeMap::new();
    for c in Category::ALL {
        let (n, k) = outcomes
            .iter()
            .filter(|o| o.category == *c)
            .fold((0usize, 0usize), |(n, k), o| (n + 1, k + usize::from(o.correct)));
        if n == 0 {
            return Err(Error::EmptyCategory(c.as_str().to_string()));
        }
        per.insert(*c, k as f64 / n as f64);
    }
    let n_correct = outcomes.iter().filter(|o| o.correct).count();
    let n = outcomes.len();
    let aa = per.values().sum::<f64>() / per.len() as f64;
    let mut alignment_counts: BTreeMap<Alignment, usize> = Alignment::ALL.iter().map(|a| (*a, 0)).collect();
    for o in outcomes {
        *alignment_counts.entry(classify_alignment(o.sound, o.correct)).or_default() += 1;
    }
    let drift_trials: usize = outcomes.iter().map(|o| o.drift_trials).sum();
    let drifts: usize = outcomes.iter().map(|o| o.drifts).sum();
    Ok(EvalReport {
        format_version: REPORT_VERSION,
        n_samples: n,
        n_correct,
        per_category: per,
        oa: n_correct as f64 / n as f64,
        aa,
        drift_rate: if drift_trials == 0 { 0.0 } else { drifts as f64 / drift_trials as f64 },
        drift_trials,
        alignment_counts,
    })
}

/// Argmax answer and `n_perms` argmax second passes for sample `index`.
pub fn evaluate_sample(
    spec: &PolicySpec,
    params: &PolicyParams,
    ep: &Episode,
    index: usize,
    n_perms: usize,
    seed: u64,
) -> Result<SampleOutcome> {
    let mut r = rng::stream(seed, "eval/perm", &[index as u64]);
    let t = policy::sample_trajectory(spec, params, ep, Decode::Argmax, &mut r);
    let mut drifts = 0;
    for _ in 0..n_perms {
        let (pq, _) = permute_options(&ep.question, &mut r);
        let second = policy::frozen_second_pass(params, ep, &t, &pq, Decode::Argmax, &mut r)?;
        drifts += usize::from(second.content != t.answer_content);
    }
    Ok(SampleOutcome {
        category: ep.question.category,
        correct: t.answer_content == ep.question.gold_content,
        sound: reasoning_is_sound(&ep.scene, &ep.stats, &ep.question, &t.trace)?,
        drift_trials: n_perms,
        drifts,
    })
}

pub fn evaluate(
    spec: &PolicySpec,
    params: &PolicyParams,
    episodes: &[Episode],
    n_perms: usize,
    seed: u64,
    exec: Exec,
) -> Result<EvalReport> {
    if n_perms == 0 {
        return Err(Error::Config("n_perms must be at least 1".into()));
    }
    spec.check_params(params)?;
    let outcomes = exec
        .map(episodes, |i, ep| evaluate_sample(spec, params, ep, i, n_perms, seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    report_from_outcomes(&outcomes)
}

pub fn drift_rate(spec: &PolicySpec, params: &PolicyParams, episodes: &[Episode], n_perms: usize, seed: u64, exec: Exec) -> Result<f64> {
    let outcomes = exec
        .map(episodes, |i, ep| evaluate_sample(spec, params, ep, i, n_perms, seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let trials: usize = outcomes.iter().map(|o| o.drift_trials).sum();
    let drifts: usize = outcomes.iter().map(|o| o.drifts).sum();
    Ok(if trials == 0 { 0.0 } else { drifts as f64 / trials as f64 })
}

/// Drift of the argmax answer under one given option mapping.
pub fn drifts_under(spec: &PolicySpec, params: &PolicyParams, ep: &Episode, mapping: &[usize]) -> Result<bool> {
    let mut r = rng::from_seed(0);
    let t = policy::sample_trajectory(spec, params, ep, Decode::Argmax, &mut r);
    let pq = apply_permutation(&ep.question, mapping)?;
    let second = policy::frozen_second_pass(params, ep, &t, &pq, Decode::Argmax, &mut r)?;
    Ok(second.content != t.answer_content)
}

pub fn write_report_json(report: &EvalReport, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

pub fn read_report_json(path: &Path) -> Result<EvalReport> {
    let r: EvalReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if r.format_version != REPORT_VERSION {
        return Err(Error::FormatVersion { what: "report".into(), found: r.format_version, expected: REPORT_VERSION });
    }
    Ok(r)
}

/// Append one CSV row, writing the header first if the file is new or empty.
pub fn append_csv_row(report: &EvalReport, label: &str, seed: u64, path: &Path) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{CSV_HEADER}")?;
    }
    writeln!(f, "{}", report.csv_row(label, seed))?;
    Ok(())
}

/// JSON report plus one CSV row.
pub fn emit_report(report: &EvalReport, json_path: &Path, csv_path: &Path, label: &str, seed: u64) -> Result<()> {
    write_report_json(report, json_path)?;
    append_csv_row(report, label, seed, csv_path)
}
