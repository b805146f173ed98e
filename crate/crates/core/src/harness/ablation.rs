use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::exec::Exec;
use crate::policy::{save_checkpoint, PolicyParams};
use crate::reward::Alignment;
use crate::scene::{forge_dataset, Category};
use crate::sft::SftEpoch;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use super::config::RunConfig;
use super::pipeline::{init_params, run_grpo, run_sft, ArtifactLog, Splits};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    pub label: String,
    pub sft: bool,
    pub grpo: bool,
    pub lcr_enabled: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationPlan {
    pub rows: Vec<AblationRow>,
    pub seeds: Vec<u64>,
}

impl AblationPlan {
    pub fn standard(seeds: Vec<u64>) -> AblationPlan {
        let row = |label: &str, sft, grpo, lcr_enabled| AblationRow { label: label.into(), sft, grpo, lcr_enabled };
        AblationPlan {
            rows: vec![
                row("Base", false, false, false),
                row("+SFT", true, false, false),
                row("+GRPO", true, true, false),
                row("+GRPO(LCR)", true, true, true),
            ],
            seeds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("ablation plan needs at least one row and one seed".into()));
        }
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert(r.label.as_str()) {
                return Err(Error::Config(format!("duplicate ablation label {}", r.label)));
            }
            if r.label.contains(',') {
                return Err(Error::Config(format!("ablation label {:?} contains a comma", r.label)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub label: String,
    pub seed: u64,
    pub report: EvalReport,
    /// Empty for rows without SFT.
    pub sft_curve: Vec<SftEpoch>,
    /// KL to the reference at the first GRPO step, before any update.
    pub initial_kl: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub label: String,
    pub oa: f64,
    pub aa: f64,
    pub reason: f64,
    pub drift_rate: f64,
    pub wr_ca: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub runs: Vec<AblationRun>,
    pub summary: Vec<AblationSummary>,
}

impl AblationResult {
    pub fn summary_for(&self, label: &str) -> Option<&AblationSummary> {
        self.summary.iter().find(|s| s.label == label)
    }
}

pub const ABLATION_HEADER: &str =
    "kind,label,seed,n_samples,oa,aa,acc_count,acc_color,acc_shape,acc_scene,acc_reason,drift_rate,cr_ca,cr_wa,wr_ca,wr_wa";

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn summarise(plan: &AblationPlan, runs: &[AblationRun]) -> Vec<AblationSummary> {
    plan.rows
        .iter()
        .map(|row| {
            let rs: Vec<&EvalReport> = runs.iter().filter(|r| r.label == row.label).map(|r| &r.report).collect();
            let m = |f: &dyn Fn(&EvalReport) -> f64| median(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            AblationSummary {
                label: row.label.clone(),
                oa: m(&|r| r.oa),
                aa: m(&|r| r.aa),
                reason: m(&|r| r.category(Category::Reason)),
                drift_rate: m(&|r| r.drift_rate),
                wr_ca: m(&|r| r.alignment(Alignment::WrCa) as f64),
            }
        })
        .collect()
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

/// One forged dataset per seed, shared by every row; SFT trained once per
/// seed and reused by the rows that need it. Rows without SFT start GRPO
/// (if enabled) from the initial weights.
pub fn run_ablation(plan: &AblationPlan, base: &RunConfig, out: Option<&Path>, exec: Exec) -> Result<AblationResult> {
    plan.validate()?;
    base.validate()?;
    let mut runs = Vec::new();
    for &seed in &plan.seeds {
        let cfg = RunConfig { master_seed: seed, ..base.clone() };
        let seeds = cfg.stage_seeds();
        let spec = cfg.policy_spec()?;
        let dataset = forge_dataset(&cfg.resolved_forge(), exec).map_err(|e| e.in_stage("forge"))?;
        let splits = Splits::new(&spec, &dataset, exec).map_err(|e| e.in_stage("forge"))?;
        let init = init_params(&cfg, &spec)?;
        let mut sft_trained: Option<(PolicyParams, Vec<SftEpoch>)> = None;
        for row in &plan.rows {
            let mut params = init.clone();
            let mut sft_curve = Vec::new();
            let mut initial_kl = None;
            if row.sft {
                if sft_trained.is_none() {
                    sft_trained = Some(run_sft(&cfg, &spec, &init, &splits.sft, exec).map_err(|e| e.in_stage("sft"))?);
                }
                if let Some((p, curve)) = &sft_trained {
                    params = p.clone();
                    sft_curve = curve.clone();
                }
            }
            if row.grpo {
                let g = crate::grpo::GrpoConfig { lcr_enabled: row.lcr_enabled, ..cfg.grpo.clone() };
                let (p, metrics) = run_grpo(&g, seeds.grpo, &spec, &params, &splits.rl, exec, None).map_err(|e| e.in_stage("grpo"))?;
                params = p;
                initial_kl = metrics.first().map(|m| m.kl);
            }
            let report = eval::evaluate(&spec, &params, &splits.eval, cfg.eval.n_perms, seeds.eval, exec).map_err(|e| e.in_stage("eval"))?;
            log::info!(
                "ablation seed {seed} {}: reason {:.3} aa {:.3} drift {:.3} wr-ca {}",
                row.label,
                report.category(Category::Reason),
                report.aa,
                report.drift_rate,
                report.alignment(Alignment::WrCa)
            );
            if let Some(dir) = out {
                let d = dir.join(format!("seed-{seed}")).join(slug(&row.label));
                std::fs::create_dir_all(&d)?;
                save_checkpoint(&params, &d.join("policy.ckpt.json"))?;
                eval::write_report_json(&report, &d.join("report.json"))?;
            }
            runs.push(AblationRun { label: row.label.clone(), seed, report, sft_curve, initial_kl });
        }
    }
    let summary = summarise(plan, &runs);
    Ok(AblationResult { runs, summary })
}

pub fn write_ablation_csv<W: Write>(out: &mut W, result: &AblationResult) -> Result<()> {
    writeln!(out, "{ABLATION_HEADER}")?;
    for r in &result.runs {
        writeln!(out, "run,{}", r.report.csv_row(&r.label, r.seed))?;
    }
    for s in &result.summary {
        writeln!(out, "median,{},,,{},{},,,,,{},{},,,{},", s.label, s.oa, s.aa, s.reason, s.drift_rate, s.wr_ca)?;
    }
    Ok(())
}

/// Run the plan and write `ablation.csv` plus a manifest under `out`.
pub fn run_ablation_to_dir(plan: &AblationPlan, base: &RunConfig, out: &Path, exec: Exec) -> Result<AblationResult> {
    let result = run_ablation(plan, base, Some(out), exec)?;
    let mut log = ArtifactLog::new(out)?;
    {
        let mut w = log.create("ablation.csv")?;
        write_ablation_csv(&mut w, &result)?;
        w.flush()?;
    }
    for seed in &plan.seeds {
        for row in &plan.rows {
            let d = out.join(format!("seed-{seed}")).join(slug(&row.label));
            log.record(d.join("policy.ckpt.json"));
            log.record(d.join("report.json"));
        }
    }
    log.write_manifest(base)?;
    Ok(result)
}
