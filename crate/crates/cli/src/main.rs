use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use driftlab::eval;
use driftlab::harness::pipeline::{init_params, run_grpo, run_sft, Splits};
use driftlab::harness::{run_ablation_to_dir, run_pipeline, AblationPlan, RunConfig};
use driftlab::policy::{load_checkpoint, save_checkpoint};
use driftlab::scene::{forge_dataset, read_dataset, write_dataset};
use driftlab::{grpo, sft, Exec};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Consistency-aware GRPO laboratory on forged spatial-reasoning scenes.
///
/// Log verbosity follows RUST_LOG (e.g. RUST_LOG=info).
#[derive(Parser)]
#[command(name = "driftlab", version)]
struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true, env = "DRIFTLAB_THREADS")]
    threads: Option<usize>,
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configuration's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (file or directory, depending on the command).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Forge scenes and questions into a dataset directory.
    Forge {
        #[command(flatten)]
        common: Common,
    },
    /// Supervised initialisation on the SFT subset; writes a checkpoint.
    Sft {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `forge`.
        #[arg(long)]
        dataset: PathBuf,
        /// Starting checkpoint (default: seeded random weights).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Per-epoch loss JSONL.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// GRPO on the RL subset from an initial checkpoint (also the KL reference).
    Grpo {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `forge`.
        #[arg(long)]
        dataset: PathBuf,
        /// Starting checkpoint, usually the SFT output.
        #[arg(long)]
        init: PathBuf,
        /// Per-step metrics JSONL.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Reward audit JSONL, one line per rollout.
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Disable the logical-consistency reward.
        #[arg(long)]
        no_lcr: bool,
    },
    /// Evaluate a checkpoint on the EVAL subset; writes a JSON report.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `forge`.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Permutations per sample for the drift rate.
        #[arg(long)]
        n_perms: Option<usize>,
        /// Append a CSV row here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Row label in the CSV.
        #[arg(long, default_value = "eval")]
        label: String,
    },
    /// Full pipeline: forge, sft, grpo, eval, manifest.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// The four-row ablation over several master seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated master seeds (default: the config's master seed).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::new("default", 0),
    };
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn splits(cfg: &RunConfig, dataset: &Path, exec: Exec) -> Result<(driftlab::policy::PolicySpec, Splits)> {
    let spec = cfg.policy_spec()?;
    let data = read_dataset(dataset).with_context(|| format!("reading dataset {}", dataset.display()))?;
    let s = Splits::new(&spec, &data, exec)?;
    Ok((spec, s))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        driftlab::exec::init_thread_pool(n)?;
    }
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };

    match cli.command {
        Command::Forge { common } => {
            let cfg = load_config(&common)?;
            let data = forge_dataset(&cfg.resolved_forge(), exec).context("stage `forge` failed")?;
            write_dataset(&data, &common.out)?;
            println!(
                "forged {} samples into {} ({} unsupported draws, {} gate rejections)",
                data.samples.len(),
                common.out.display(),
                data.stats.unsupported,
                data.stats.gate_rejections
            );
        }
        Command::Sft { common, dataset, init, metrics } => {
            let cfg = load_config(&common)?;
            let (spec, s) = splits(&cfg, &dataset, exec)?;
            let start = match init {
                Some(p) => load_checkpoint(&p)?,
                None => init_params(&cfg, &spec)?,
            };
            let (params, curve) = run_sft(&cfg, &spec, &start, &s.sft, exec).context("stage `sft` failed")?;
            save_checkpoint(&params, &common.out)?;
            if let Some(m) = metrics {
                let mut w = create(&m)?;
                sft::write_sft_metrics(&mut w, &curve)?;
                w.flush()?;
            }
            println!("sft: mean nll {:.4} -> {:.4}", curve[0].mean_nll, curve[curve.len() - 1].mean_nll);
        }
        Command::Grpo { common, dataset, init, metrics, audit, no_lcr } => {
            let cfg = load_config(&common)?;
            let (spec, s) = splits(&cfg, &dataset, exec)?;
            let start = load_checkpoint(&init)?;
            let mut g = cfg.grpo.clone();
            if no_lcr {
                g.lcr_enabled = false;
            }
            let mut audit_w = audit.as_deref().map(create).transpose()?;
            let (params, m) = run_grpo(&g, cfg.stage_seeds().grpo, &spec, &start, &s.rl, exec, audit_w.as_mut().map(|w| w as &mut dyn Write))
                .context("stage `grpo` failed")?;
            if let Some(w) = audit_w.as_mut() {
                w.flush()?;
            }
            save_checkpoint(&params, &common.out)?;
            if let Some(p) = metrics {
                let mut w = create(&p)?;
                grpo::write_grpo_metrics(&mut w, &m)?;
                w.flush()?;
            }
            if let Some(last) = m.last() {
                println!("grpo: {} steps, final mean reward {:.4}, drift {:.4}", m.len(), last.mean_reward, last.drift_rate);
            }
        }
        Command::Eval { common, dataset, checkpoint, n_perms, csv, label } => {
            let cfg = load_config(&common)?;
            let (spec, s) = splits(&cfg, &dataset, exec)?;
            let params = load_checkpoint(&checkpoint)?;
            let n = n_perms.unwrap_or(cfg.eval.n_perms);
            let report = eval::evaluate(&spec, &params, &s.eval, n, cfg.stage_seeds().eval, exec).context("stage `eval` failed")?;
            eval::write_report_json(&report, &common.out)?;
            if let Some(c) = csv {
                eval::append_csv_row(&report, &label, cfg.master_seed, &c)?;
            }
            println!("oa {:.4} aa {:.4} drift {:.4}", report.oa, report.aa, report.drift_rate);
        }
        Command::Run { common } => {
            let cfg = load_config(&common)?;
            let outcome = run_pipeline(&cfg, &common.out, exec)?;
            println!(
                "run {}: oa {:.4} aa {:.4} drift {:.4}; manifest lists {} files",
                cfg.run_id,
                outcome.report.oa,
                outcome.report.aa,
                outcome.report.drift_rate,
                outcome.manifest.files.len()
            );
        }
        Command::Ablate { common, seeds } => {
            let cfg = load_config(&common)?;
            let seeds = if seeds.is_empty() { vec![cfg.master_seed] } else { seeds };
            let plan = AblationPlan::standard(seeds);
            let result = run_ablation_to_dir(&plan, &cfg, &common.out, exec)?;
            println!("{:<12} {:>8} {:>8} {:>8} {:>8}", "row", "reason", "aa", "drift", "wr-ca");
            for s in &result.summary {
                println!("{:<12} {:>8.4} {:>8.4} {:>8.4} {:>8.1}", s.label, s.reason, s.aa, s.drift_rate, s.wr_ca);
            }
        }
    }
    Ok(())
}
