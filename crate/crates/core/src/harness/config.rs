use crate::error::{Error, Result};
use crate::grpo::GrpoConfig;
use crate::policy::{PerceptionConfig, PolicySpec, DEFAULT_L_MAX};
use crate::rng;
use crate::scene::atom::standard_vocabulary;
use crate::scene::ForgeConfig;
use crate::sft::SftConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Std-dev of the Gaussian initial weights.
    pub init_scale: f64,
    pub l_max: usize,
    /// Derived from the master seed when absent.
    pub init_seed: Option<u64>,
    pub perception: PerceptionConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { init_scale: 0.01, l_max: DEFAULT_L_MAX, init_seed: None, perception: PerceptionConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_perms: usize,
    /// Derived from the master seed when absent.
    pub seed: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_perms: 3, seed: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub master_seed: u64,
    #[serde(default)]
    pub forge: ForgeConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub sft: SftConfig,
    #[serde(default)]
    pub grpo: GrpoConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Concrete per-stage seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub forge: u64,
    pub init: u64,
    pub sft: u64,
    pub grpo: u64,
    pub eval: u64,
}

impl RunConfig {
    pub fn new(run_id: &str, master_seed: u64) -> RunConfig {
        RunConfig {
            run_id: run_id.into(),
            master_seed,
            forge: ForgeConfig::default(),
            policy: PolicyConfig::default(),
            sft: SftConfig::default(),
            grpo: GrpoConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        RunConfig::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.trim().is_empty() {
            return Err(Error::Config("run_id must be non-empty".into()));
        }
        if !(self.policy.init_scale.is_finite() && self.policy.init_scale >= 0.0) || self.policy.l_max == 0 {
            return Err(Error::Config(format!("invalid policy section {:?}", self.policy)));
        }
        if self.eval.n_perms == 0 {
            return Err(Error::Config("eval.n_perms must be at least 1".into()));
        }
        if self.forge.eval_n == 0 {
            return Err(Error::Config("forge.eval_n must be positive".into()));
        }
        self.forge.validate()?;
        self.policy.perception.validate()?;
        self.sft.validate()?;
        self.grpo.validate()
    }

    /// Seeds set explicitly win; the rest are hash-split from `master_seed`,
    /// so changing one stage's seed leaves the others untouched.
    pub fn stage_seeds(&self) -> StageSeeds {
        let d = |label: &str| rng::derive_seed(self.master_seed, label, &[]);
        StageSeeds {
            forge: self.forge.seed.unwrap_or_else(|| d("forge")),
            init: self.policy.init_seed.unwrap_or_else(|| d("init")),
            sft: self.sft.seed.unwrap_or_else(|| d("sft")),
            grpo: self.grpo.seed.unwrap_or_else(|| d("grpo")),
            eval: self.eval.seed.unwrap_or_else(|| d("eval")),
        }
    }

    pub fn policy_spec(&self) -> Result<PolicySpec> {
        PolicySpec::new(standard_vocabulary(), self.forge.k, self.policy.l_max, self.policy.perception.clone())
    }

    pub fn resolved_forge(&self) -> ForgeConfig {
        ForgeConfig { seed: Some(self.stage_seeds().forge), ..self.forge.clone() }
    }
}
