//! Dataset forging and the JSONL file formats.
//!
//! Both files start with a header line `{"schema": ..., "version": 1}`
//! followed by one record per line.

use super::generate::{generate_scene, GenerationParams};
use super::mcq::{apply_slot_bias, synthesize_mcq, McqSample, DEFAULT_K};
use super::types::{Category, Scene, Subset};
use super::verify::gate;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const DATASET_VERSION: u32 = 1;
pub const SCENES_SCHEMA: &str = "driftlab.scenes";
pub const SAMPLES_SCHEMA: &str = "driftlab.samples";
pub const SCENES_FILE: &str = "scenes.jsonl";
pub const SAMPLES_FILE: &str = "samples.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryWeights {
    pub count: f64,
    pub color: f64,
    pub shape: f64,
    pub scene: f64,
    pub reason: f64,
}

impl CategoryWeights {
    pub fn uniform() -> Self {
        CategoryWeights { count: 1.0, color: 1.0, shape: 1.0, scene: 1.0, reason: 1.0 }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.count, self.color, self.shape, self.scene, self.reason]
    }

    fn validate(&self, what: &str) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("{what} category weights must be nonnegative with positive sum")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForgeConfig {
    /// Training samples (SFT + RL).
    pub n: usize,
    /// Fraction of `n` assigned to the SFT subset, in (0, 1).
    pub split: f64,
    /// Held-out evaluation samples.
    pub eval_n: usize,
    /// Derived from the master seed when absent; 0 outside a run.
    pub seed: Option<u64>,
    pub k: usize,
    pub sft_mix: CategoryWeights,
    pub rl_mix: CategoryWeights,
    pub eval_mix: CategoryWeights,
    /// Probability that the gold option is moved to slot 0 in training subsets.
    pub train_slot_bias: f64,
    pub eval_slot_bias: f64,
    pub max_attempts: u32,
    pub generation: GenerationParams,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        ForgeConfig {
            n: 4000,
            split: 0.25,
            eval_n: 500,
            seed: None,
            k: DEFAULT_K,
            sft_mix: CategoryWeights { count: 0.25, color: 0.2, shape: 0.2, scene: 0.2, reason: 0.15 },
            rl_mix: CategoryWeights { count: 0.1, color: 0.1, shape: 0.1, scene: 0.1, reason: 0.6 },
            eval_mix: CategoryWeights { count: 0.2, color: 0.2, shape: 0.2, scene: 0.2, reason: 0.2 },
            train_slot_bias: 0.0,
            eval_slot_bias: 0.0,
            max_attempts: 256,
            generation: GenerationParams::default(),
        }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::Config(format!("split ratio {} must lie in (0, 1)", self.split)));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("option count k = {} must be at least 2", self.k)));
        }
        for (name, b) in [("train_slot_bias", self.train_slot_bias), ("eval_slot_bias", self.eval_slot_bias)] {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} must lie in [0, 1]")));
            }
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be positive".into()));
        }
        self.sft_mix.validate("sft")?;
        self.rl_mix.validate("rl")?;
        self.eval_mix.validate("eval")?;
        self.generation.validate()
    }

    pub fn subset_sizes(&self) -> [(Subset, usize); 3] {
        let sft = (self.n as f64 * self.split).round() as usize;
        [(Subset::Sft, sft), (Subset::Rl, self.n - sft), (Subset::Eval, self.eval_n)]
    }

    fn mix(&self, subset: Subset) -> &CategoryWeights {
        match subset {
            Subset::Sft => &self.sft_mix,
            Subset::Rl => &self.rl_mix,
            Subset::Eval => &self.eval_mix,
        }
    }

    fn slot_bias(&self, subset: Subset) -> f64 {
        match subset {
            Subset::Eval => self.eval_slot_bias,
            _ => self.train_slot_bias,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgeStats {
    /// Candidates whose scene could not ground the drawn category.
    pub unsupported: u64,
    /// Candidates rejected by the quality gate.
    pub gate_rejections: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub scenes: Vec<Scene>,
    pub samples: Vec<McqSample>,
    pub stats: ForgeStats,
}

impl Dataset {
    pub fn scene_index(&self) -> HashMap<&str, &Scene> {
        self.scenes.iter().map(|s| (s.id.as_str(), s)).collect()
    }

    /// (scene, sample) pairs of one subset, in file order.
    pub fn pairs(&self, subset: Subset) -> Result<Vec<(Scene, McqSample)>> {
        let index = self.scene_index();
        self.samples
            .iter()
            .filter(|s| s.subset == subset)
            .map(|s| {
                index
                    .get(s.scene_id.as_str())
                    .map(|scene| ((*scene).clone(), s.clone()))
                    .ok_or_else(|| Error::Config(format!("sample {} references unknown scene {}", s.id, s.scene_id)))
            })
            .collect()
    }
}

/// Hook applied to each candidate before the gate; tests use it to inject
/// faults. Arguments: sample, subset index, attempt number.
pub type CandidateHook<'a> = &'a (dyn Fn(&mut McqSample, usize, u32) + Sync);

pub fn forge_dataset(config: &ForgeConfig, exec: Exec) -> Result<Dataset> {
    forge_dataset_with(config, exec, &|_, _, _| {})
}

pub fn forge_dataset_with(config: &ForgeConfig, exec: Exec, hook: CandidateHook<'_>) -> Result<Dataset> {
    config.validate()?;
    let mut out = Dataset::default();
    for (subset, size) in config.subset_sizes() {
        let results = exec.map_range(size, |i| forge_one(config, subset, i, hook));
        for r in results {
            let (scene, sample, stats) = r?;
            out.stats.unsupported += stats.unsupported;
            out.stats.gate_rejections += stats.gate_rejections;
            out.scenes.push(scene);
            out.samples.push(sample);
        }
    }
    let mut ids = std::collections::HashSet::new();
    if let Some(dup) = out.scenes.iter().find(|s| !ids.insert(s.id.as_str())) {
        return Err(Error::Config(format!("duplicate scene id {}", dup.id)));
    }
    Ok(out)
}

fn forge_one(
    config: &ForgeConfig,
    subset: Subset,
    i: usize,
    hook: CandidateHook<'_>,
) -> Result<(Scene, McqSample, ForgeStats)> {
    let mut stats = ForgeStats::default();
    let label = subset.as_str();
    let weights = config.mix(subset).as_array();
    let seed = config.seed.unwrap_or_default();
    for attempt in 0..config.max_attempts {
        let coords = [i as u64, u64::from(attempt)];
        let scene_seed = rng::derive_seed(seed, &format!("scene/{label}"), &coords);
        let scene = generate_scene(&config.generation, scene_seed)?;
        let mut pick = rng::stream(seed, &format!("category/{label}"), &coords);
        let category = Category::ALL[crate::scene::generate::pick_weighted(&mut pick, &weights)];
        let mcq_seed = rng::derive_seed(seed, &format!("mcq/{label}"), &coords);
        let mut sample = match synthesize_mcq(&scene, category, config.k, mcq_seed) {
            Ok(s) => s,
            Err(Error::UnsupportedCategory { .. }) => {
                stats.unsupported += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        apply_slot_bias(&mut sample, config.slot_bias(subset), &mut pick);
        sample.id = format!("{}-{:05}", label.to_lowercase(), i);
        sample.subset = subset;
        hook(&mut sample, i, attempt);
        if gate(&scene, &sample).is_err() {
            stats.gate_rejections += 1;
            continue;
        }
        return Ok((scene, sample, stats));
    }
    Err(Error::Config(format!(
        "could not forge {label} sample {i} within {} attempts",
        config.max_attempts
    )))
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

fn write_jsonl<T: Serialize>(path: &Path, schema: &str, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &Header { schema: schema.into(), version: DATASET_VERSION })?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, schema: &str) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header: Header = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(Error::Config(format!("{} is empty", path.display()))),
    };
    if header.schema != schema {
        return Err(Error::Config(format!(
            "{} has schema {:?}, expected {schema:?}",
            path.display(),
            header.schema
        )));
    }
    if header.version != DATASET_VERSION {
        return Err(Error::FormatVersion { what: schema.into(), found: header.version, expected: DATASET_VERSION });
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Write `scenes.jsonl` and `samples.jsonl` into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let scenes = dir.join(SCENES_FILE);
    let samples = dir.join(SAMPLES_FILE);
    write_jsonl(&scenes, SCENES_SCHEMA, &dataset.scenes)?;
    write_jsonl(&samples, SAMPLES_SCHEMA, &dataset.samples)?;
    Ok(vec![scenes, samples])
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    Ok(Dataset {
        scenes: read_jsonl(&dir.join(SCENES_FILE), SCENES_SCHEMA)?,
        samples: read_jsonl(&dir.join(SAMPLES_FILE), SAMPLES_SCHEMA)?,
        stats: ForgeStats::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::atom::EvidenceAtom;
    use crate::scene::types::ObjectClass;

    fn small(n: usize, seed: u64) -> ForgeConfig {
        ForgeConfig { n, eval_n: 4, seed: Some(seed), ..Default::default() }
    }

    #[test]
    fn split_sizes_follow_ratio() {
        let cfg = ForgeConfig { n: 4000, split: 0.25, ..Default::default() };
        let sizes = cfg.subset_sizes();
        assert_eq!(sizes[0], (Subset::Sft, 1000));
        assert_eq!(sizes[1], (Subset::Rl, 3000));
    }

    #[test]
    fn rejects_bad_split() {
        for split in [0.0, 1.0, -0.1, 1.5] {
            let cfg = ForgeConfig { split, ..small(8, 0) };
            assert!(matches!(forge_dataset(&cfg, Exec::Sequential), Err(Error::Config(_))));
        }
    }

    #[test]
    fn fixed_seed_gives_identical_files() {
        let cfg = small(8, 42);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_dataset(&forge_dataset(&cfg, Exec::Parallel).unwrap(), a.path()).unwrap();
        write_dataset(&forge_dataset(&cfg, Exec::Sequential).unwrap(), b.path()).unwrap();
        for f in [SCENES_FILE, SAMPLES_FILE] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
        let back = read_dataset(a.path()).unwrap();
        assert_eq!(back.samples.len(), 12);
        assert_eq!(back.scenes.len(), 12);
    }

    #[test]
    fn gate_rejects_injected_false_atom_and_regenerates() {
        let cfg = small(8, 3);
        let clean = forge_dataset(&cfg, Exec::Sequential).unwrap();
        let injected = std::sync::Mutex::new(std::collections::HashSet::new());
        let hook = |s: &mut McqSample, i: usize, _attempt: u32| {
            if i == 0 && injected.lock().unwrap().insert(s.subset) {
                s.gold_trace.insert(0, EvidenceAtom::CountEq { class: ObjectClass::Plane, n: 24 });
            }
        };
        let faulty = forge_dataset_with(&cfg, Exec::Sequential, &hook).unwrap();
        // one rejection per subset index 0 (SFT, RL and EVAL each have an index 0)
        assert_eq!(faulty.stats.gate_rejections, clean.stats.gate_rejections + 3);
        let index = faulty.scene_index();
        for s in &faulty.samples {
            assert!(gate(index[s.scene_id.as_str()], s).is_ok());
        }
        assert_ne!(faulty.samples[0], clean.samples[0]);
    }
}
