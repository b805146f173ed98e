use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::exec::Exec;
use crate::grpo::{self, GrpoConfig, GrpoTrainer, StepMetrics};
use crate::policy::checkpoint::sha256_hex;
use crate::policy::{save_checkpoint, Episode, PolicyParams, PolicySpec};
use crate::reward::write_audit;
use crate::scene::{forge_dataset, write_dataset, Dataset, Subset};
use crate::sft::{self, write_sft_metrics, SftEpoch};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::{RunConfig, StageSeeds};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub run_id: String,
    pub master_seed: u64,
    pub stage_seeds: StageSeeds,
    pub files: Vec<ManifestEntry>,
}

/// Records every file a run writes.
pub struct ArtifactLog {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl ArtifactLog {
    pub fn new(root: &Path) -> Result<ArtifactLog> {
        std::fs::create_dir_all(root)?;
        Ok(ArtifactLog { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn record(&mut self, path: PathBuf) {
        if !self.files.contains(&path) {
            self.files.push(path);
        }
    }

    /// Create `rel` (and its parent directories) and record it.
    pub fn create(&mut self, rel: &str) -> Result<BufWriter<File>> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let f = File::create(&p)?;
        self.record(p);
        Ok(BufWriter::new(f))
    }

    pub fn entries(&self) -> Result<Vec<ManifestEntry>> {
        let mut out = Vec::with_capacity(self.files.len());
        for p in &self.files {
            let bytes = std::fs::read(p)?;
            let rel = p.strip_prefix(&self.root).unwrap_or(p);
            let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.push(ManifestEntry { path: rel, sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        }
        out.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(out)
    }

    pub fn write_manifest(&self, cfg: &RunConfig) -> Result<Manifest> {
        let manifest = Manifest {
            format_version: MANIFEST_VERSION,
            run_id: cfg.run_id.clone(),
            master_seed: cfg.master_seed,
            stage_seeds: cfg.stage_seeds(),
            files: self.entries()?,
        };
        std::fs::write(self.root.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(manifest)
    }
}

pub fn build_episodes(spec: &PolicySpec, dataset: &Dataset, subset: Subset, exec: Exec) -> Result<Vec<Episode>> {
    let pairs = dataset.pairs(subset)?;
    exec.map(&pairs, |_, (scene, q)| spec.episode(scene, q)).into_iter().collect()
}

/// Episodes for the three subsets.
pub struct Splits {
    pub sft: Vec<Episode>,
    pub rl: Vec<Episode>,
    pub eval: Vec<Episode>,
}

impl Splits {
    pub fn new(spec: &PolicySpec, dataset: &Dataset, exec: Exec) -> Result<Splits> {
        Ok(Splits {
            sft: build_episodes(spec, dataset, Subset::Sft, exec)?,
            rl: build_episodes(spec, dataset, Subset::Rl, exec)?,
            eval: build_episodes(spec, dataset, Subset::Eval, exec)?,
        })
    }
}

pub fn init_params(cfg: &RunConfig, spec: &PolicySpec) -> Result<PolicyParams> {
    spec.random_params(cfg.policy.init_scale, cfg.stage_seeds().init)
}

pub fn run_sft(cfg: &RunConfig, spec: &PolicySpec, init: &PolicyParams, episodes: &[Episode], exec: Exec) -> Result<(PolicyParams, Vec<SftEpoch>)> {
    let (params, curve) = sft::train_sft(spec, init, episodes, &cfg.sft, cfg.stage_seeds().sft, exec)?;
    let (first, last) = (curve[0].mean_nll, curve[curve.len() - 1].mean_nll);
    log::info!("sft: mean nll {first:.4} -> {last:.4}");
    Ok((params, curve))
}

/// GRPO from `init`, optionally writing one audit line per rollout.
pub fn run_grpo(
    grpo_cfg: &GrpoConfig,
    seed: u64,
    spec: &PolicySpec,
    init: &PolicyParams,
    episodes: &[Episode],
    exec: Exec,
    mut audit: Option<&mut dyn Write>,
) -> Result<(PolicyParams, Vec<StepMetrics>)> {
    let mut trainer = GrpoTrainer::new(spec, init, episodes, grpo_cfg, seed, exec)?;
    let mut metrics = Vec::with_capacity(grpo_cfg.steps);
    for _ in 0..grpo_cfg.steps {
        let out = trainer.step()?;
        if let Some(w) = audit.as_deref_mut() {
            for g in &out.groups {
                write_audit(w, &g.audit(&episodes[g.episode].question.id))?;
            }
        }
        metrics.push(out.metrics);
    }
    if let Some(m) = metrics.last() {
        log::info!("grpo: final mean reward {:.4}, drift {:.4}, kl {:.5}", m.mean_reward, m.drift_rate, m.kl);
    }
    Ok((trainer.into_params(), metrics))
}

pub struct RunOutcome {
    pub manifest: Manifest,
    pub report: EvalReport,
    pub sft_curve: Vec<SftEpoch>,
    pub grpo_metrics: Vec<StepMetrics>,
}

/// forge -> sft -> grpo -> eval, writing every artifact under `out`.
pub fn run_pipeline(cfg: &RunConfig, out: &Path, exec: Exec) -> Result<RunOutcome> {
    cfg.validate()?;
    let seeds = cfg.stage_seeds();
    let spec = cfg.policy_spec()?;
    let mut log = ArtifactLog::new(out)?;
    {
        let mut w = log.create("config.toml")?;
        w.write_all(cfg.to_toml_string()?.as_bytes())?;
        w.flush()?;
    }

    log::info!("forge: {} train + {} eval samples", cfg.forge.n, cfg.forge.eval_n);
    let dataset = forge_dataset(&cfg.resolved_forge(), exec).map_err(|e| e.in_stage("forge"))?;
    for p in write_dataset(&dataset, &log.path("dataset")).map_err(|e| e.in_stage("forge"))? {
        log.record(p);
    }
    let splits = Splits::new(&spec, &dataset, exec).map_err(|e| e.in_stage("forge"))?;

    let stage = |name: &'static str| move |e: Error| e.in_stage(name);
    let init = init_params(cfg, &spec).map_err(stage("sft"))?;
    let (sft_params, sft_curve) = run_sft(cfg, &spec, &init, &splits.sft, exec).map_err(stage("sft"))?;
    save_checkpoint(&sft_params, &log.path("sft.ckpt.json")).map_err(stage("sft"))?;
    log.record(log.path("sft.ckpt.json"));
    {
        let mut w = log.create("sft_metrics.jsonl").map_err(stage("sft"))?;
        write_sft_metrics(&mut w, &sft_curve)?;
        w.flush()?;
    }

    let (grpo_params, grpo_metrics) = {
        let mut audit = log.create("reward_audit.jsonl").map_err(stage("grpo"))?;
        let r = run_grpo(&cfg.grpo, seeds.grpo, &spec, &sft_params, &splits.rl, exec, Some(&mut audit)).map_err(stage("grpo"))?;
        audit.flush()?;
        r
    };
    save_checkpoint(&grpo_params, &log.path("grpo.ckpt.json")).map_err(stage("grpo"))?;
    log.record(log.path("grpo.ckpt.json"));
    {
        let mut w = log.create("grpo_metrics.jsonl").map_err(stage("grpo"))?;
        grpo::write_grpo_metrics(&mut w, &grpo_metrics)?;
        w.flush()?;
    }

    let report = eval::evaluate(&spec, &grpo_params, &splits.eval, cfg.eval.n_perms, seeds.eval, exec).map_err(stage("eval"))?;
    let json = log.path("report.json");
    let csv = log.path("report.csv");
    if csv.exists() {
        std::fs::remove_file(&csv)?;
    }
    eval::emit_report(&report, &json, &csv, &cfg.run_id, cfg.master_seed).map_err(stage("eval"))?;
    log.record(json);
    log.record(csv);

    let manifest = log.write_manifest(cfg)?;
    Ok(RunOutcome { manifest, report, sft_curve, grpo_metrics })
}
