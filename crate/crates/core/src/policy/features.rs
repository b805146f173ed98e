//! Feature construction for the trace and answer heads.
//!
//! The policy never sees ground truth directly. It sees a noisy "perception"
//! of the scene drawn from a stream keyed by the scene seed, so features are
//! a pure function of the inputs. A second, noisier draw (the "glance")
//! provides the truth-proxy feature of the answer head.

use crate::error::{Error, Result};
use crate::rng;
use crate::scene::atom::{scene_content, spare_capacity_content, utilization_content, zoning_content, MAX_COUNT};
use crate::scene::mcq::{McqSample, Template};
use crate::scene::morpho::{compute_morphostats, MorphoStats};
use crate::scene::types::{ClusterLabel, Color, DensityBand, ObjectClass, OccupancyBand, Scene, ShapeTag};
use crate::scene::{EvidenceAtom, Predicate};
use rand::Rng;
use std::collections::HashMap;
use std::sync::Arc;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PolicySpec;

pub const BIAS: usize = 0;
pub const TEMPLATE: usize = 1;
pub const TARGET_CLASS: usize = TEMPLATE + 7;
pub const COUNT: usize = TARGET_CLASS + 5;
pub const OCCUPANCY: usize = COUNT + 2;
pub const DENSITY: usize = OCCUPANCY + 2;
pub const CLUSTER: usize = DENSITY + 2;
pub const COLOR: usize = CLUSTER + 3;
pub const SHAPE: usize = COLOR + 6;
pub const EMITTED: usize = SHAPE + 4;
pub const PREFIX_LEN: usize = EMITTED + 7;
/// Width of the scene and prefix block of the trace-head context. A one-hot
/// of the previously emitted atom follows it, one slot per vocabulary entry.
pub const CONTEXT_DIM: usize = PREFIX_LEN + 1;

/// Full trace-head context width for a vocabulary of `vocab_size` atoms.
pub fn context_dim(vocab_size: usize) -> usize {
    CONTEXT_DIM + vocab_size
}

/// Per-slot content features: conclusion match, any-atom match, proxy match.
pub const CONTENT_DIM: usize = 3;

const DENSITY_SCALE: f64 = 60.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptionConfig {
    /// Std-dev of additive noise on per-class counts.
    pub count_sigma: f64,
    /// Std-dev of additive noise on the occupancy ratio.
    pub occupancy_sigma: f64,
    /// Std-dev of log-normal noise on density.
    pub density_log_sigma: f64,
    /// Probability that a categorical reading (cluster, color, shape) is replaced at random.
    pub label_flip: f64,
    /// Noise multiplier for the glance used by the answer head's proxy feature.
    pub proxy_scale: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            count_sigma: 0.8,
            occupancy_sigma: 0.08,
            density_log_sigma: 0.2,
            label_flip: 0.15,
            proxy_scale: 2.0,
        }
    }
}

impl PerceptionConfig {
    pub fn exact() -> Self {
        PerceptionConfig {
            count_sigma: 0.0,
            occupancy_sigma: 0.0,
            density_log_sigma: 0.0,
            label_flip: 0.0,
            proxy_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.count_sigma, self.occupancy_sigma, self.density_log_sigma, self.proxy_scale]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && (0.0..=1.0).contains(&self.label_flip);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid perception config {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perception {
    pub counts: [f64; 5],
    pub occupancy: f64,
    pub density: f64,
    pub cluster: ClusterLabel,
    pub color: Color,
    pub shape: ShapeTag,
}

impl Perception {
    fn observe(scene: &Scene, stats: &MorphoStats, cfg: &PerceptionConfig, scale: f64, label: &str) -> Self {
        let mut r = rng::stream(scene.seed, label, &[]);
        let gauss = |sigma: f64, r: &mut rng::StreamRng| -> f64 {
            let z: f64 = StandardNormal.sample(r);
            z * sigma * scale
        };
        let flip = (cfg.label_flip * scale).min(1.0);
        let mut counts = [0.0; 5];
        for (i, c) in ObjectClass::ALL.iter().enumerate() {
            counts[i] = f64::from(scene.count_of(*c)) + gauss(cfg.count_sigma, &mut r);
        }
        let occupancy = stats.occupancy_ratio + gauss(cfg.occupancy_sigma, &mut r);
        let density = stats.density * gauss(cfg.density_log_sigma, &mut r).exp();
        let categorical = |truth: Option<usize>, n: usize, r: &mut rng::StreamRng| -> usize {
            let u: f64 = r.random();
            let pick = r.random_range(0..n);
            match truth {
                Some(t) if u >= flip => t,
                _ => pick,
            }
        };
        let cluster = ClusterLabel::ALL[categorical(Some(stats.clustering_label.index()), 3, &mut r)];
        let color = Color::ALL[categorical(scene.dominant_color().map(Color::index), 6, &mut r)];
        let shape = ShapeTag::ALL[categorical(scene.dominant_shape().map(ShapeTag::index), 4, &mut r)];
        Perception { counts, occupancy, density, cluster, color, shape }
    }

    fn content_for(&self, template: Template, class: Option<ObjectClass>) -> String {
        match template {
            Template::Count => {
                let c = class.map(|c| self.counts[c.index()]).unwrap_or(0.0);
                (c.round().clamp(0.0, f64::from(MAX_COUNT)) as u32).to_string()
            }
            Template::Color => self.color.as_str().to_string(),
            Template::Shape => self.shape.as_str().to_string(),
            Template::Scene => scene_content(DensityBand::of(self.density) == DensityBand::Low).to_string(),
            Template::Utilization => utilization_content(OccupancyBand::of(self.occupancy)).to_string(),
            Template::SpareCapacity => spare_capacity_content(OccupancyBand::of(self.occupancy)).to_string(),
            Template::Zoning => zoning_content(self.cluster).to_string(),
        }
    }
}

/// A question posed about a scene, with everything the policy needs
/// precomputed. Cheap to clone relative to the work it saves.
#[derive(Clone, Debug)]
pub struct Episode {
    pub scene: Scene,
    pub question: McqSample,
    pub template: Template,
    pub class: Option<ObjectClass>,
    pub stats: MorphoStats,
    pub perception: Perception,
    pub proxy_content: String,
    base_context: Vec<f64>,
    vocab_index: Arc<HashMap<EvidenceAtom, usize>>,
}

impl Episode {
    pub fn new(spec: &PolicySpec, scene: &Scene, question: &McqSample) -> Result<Episode> {
        if question.scene_id != scene.id {
            return Err(Error::Config(format!(
                "question {} references scene {}, got {}",
                question.id, question.scene_id, scene.id
            )));
        }
        if question.options.len() < 2 || question.options.len() > spec.k {
            return Err(Error::Config(format!(
                "question {} has {} options; the policy supports 2..={}",
                question.id,
                question.options.len(),
                spec.k
            )));
        }
        let (template, class) = question
            .template()
            .ok_or_else(|| Error::Config(format!("unrecognised question stem {:?}", question.stem)))?;
        let stats = compute_morphostats(scene);
        let perception = Perception::observe(scene, &stats, &spec.perception, 1.0, "perceive");
        let glance = Perception::observe(scene, &stats, &spec.perception, spec.perception.proxy_scale, "glance");
        let proxy_content = glance.content_for(template, class);

        let mut x = vec![0.0; context_dim(spec.vocab_size())];
        x[BIAS] = 1.0;
        x[TEMPLATE + template.index()] = 1.0;
        if let Some(c) = class {
            x[TARGET_CLASS + c.index()] = 1.0;
            let n = perception.counts[c.index()].max(0.0) / f64::from(MAX_COUNT);
            x[COUNT] = n;
            x[COUNT + 1] = n * n;
        }
        let occ = perception.occupancy.clamp(0.0, 1.5);
        x[OCCUPANCY] = occ;
        x[OCCUPANCY + 1] = occ * occ;
        let d = (1.0 + perception.density.max(0.0)).ln() / (1.0 + DENSITY_SCALE).ln();
        x[DENSITY] = d;
        x[DENSITY + 1] = d * d;
        x[CLUSTER + perception.cluster.index()] = 1.0;
        x[COLOR + perception.color.index()] = 1.0;
        x[SHAPE + perception.shape.index()] = 1.0;

        Ok(Episode {
            scene: scene.clone(),
            question: question.clone(),
            template,
            class,
            stats,
            perception,
            proxy_content,
            base_context: x,
            vocab_index: spec.index.clone(),
        })
    }

    /// The same scene and perception with a different option layout.
    pub fn with_question(&self, question: McqSample) -> Episode {
        Episode { question, ..self.clone() }
    }

    pub fn n_options(&self) -> usize {
        self.question.options.len()
    }

    /// Trace-head context after emitting `prefix`.
    pub fn context(&self, prefix: &[EvidenceAtom], l_max: usize) -> Vec<f64> {
        let mut x = self.base_context.clone();
        for atom in prefix {
            x[EMITTED + atom.predicate().index()] = 1.0;
        }
        x[PREFIX_LEN] = prefix.len() as f64 / l_max.max(1) as f64;
        // Out-of-vocabulary atoms only reach here through scoring of foreign traces.
        if let Some(i) = prefix.last().and_then(|a| self.vocab_index.get(a)) {
            x[CONTEXT_DIM + i] = 1.0;
        }
        x
    }

    /// Content features of one option given a (possibly empty) trace.
    pub fn content_features(&self, content: &str, trace: &[EvidenceAtom]) -> [f64; CONTENT_DIM] {
        let concl = trace.last().is_some_and(|a| a.claims_content(content));
        let any = trace.iter().any(|a| a.claims_content(content));
        let proxy = self.proxy_content == content;
        [f64::from(u8::from(concl)), f64::from(u8::from(any)), f64::from(u8::from(proxy))]
    }

    pub fn slot_features(&self, trace: &[EvidenceAtom]) -> Vec<[f64; CONTENT_DIM]> {
        self.question.options.iter().map(|o| self.content_features(o, trace)).collect()
    }

    pub fn conclusion_predicate(&self) -> Predicate {
        self.template.conclusion()
    }
}

/// Every feature the policy reads at one decision, flattened to a fixed
/// dimension: the context block, then `k` slot blocks of content features
/// followed by a one-hot slot index. Slots past the presented option count
/// are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub context_dim: usize,
    pub k: usize,
    pub n_options: usize,
}

impl FeatureVector {
    pub fn dim(context_dim: usize, k: usize) -> usize {
        context_dim + k * (CONTENT_DIM + k)
    }

    pub fn context(&self) -> &[f64] {
        &self.values[..self.context_dim]
    }

    fn slot_block(&self, slot: usize) -> &[f64] {
        let w = CONTENT_DIM + self.k;
        let start = self.context_dim + slot * w;
        &self.values[start..start + w]
    }

    pub fn slot_content(&self, slot: usize) -> &[f64] {
        &self.slot_block(slot)[..CONTENT_DIM]
    }

    pub fn slot_position(&self, slot: usize) -> &[f64] {
        &self.slot_block(slot)[CONTENT_DIM..]
    }
}

/// Features for a question presented in `option_order`, where slot `i` shows
/// the original option `option_order[i]`.
pub fn featurize(
    spec: &PolicySpec,
    scene: &Scene,
    question: &McqSample,
    trace: &[EvidenceAtom],
    option_order: &[usize],
) -> Result<FeatureVector> {
    let ep = Episode::new(spec, scene, question)?;
    let n = question.options.len();
    let mut seen = vec![false; n];
    if option_order.len() != n || !option_order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true)) {
        return Err(Error::PermutationMismatch(format!("{option_order:?} is not a permutation of 0..{n}")));
    }
    let k = spec.k;
    let mut values = ep.context(trace, spec.l_max);
    let context_dim = values.len();
    values.reserve(k * (CONTENT_DIM + k));
    for slot in 0..k {
        match option_order.get(slot) {
            Some(&i) => {
                values.extend_from_slice(&ep.content_features(&question.options[i], trace));
                values.extend((0..k).map(|j| f64::from(u8::from(j == slot))));
            }
            None => values.extend(std::iter::repeat_n(0.0, CONTENT_DIM + k)),
        }
    }
    Ok(FeatureVector { values, context_dim, k, n_options: n })
}
