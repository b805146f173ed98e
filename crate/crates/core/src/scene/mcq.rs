//! Multiple-choice question synthesis.

use super::atom::{
    scene_content, spare_capacity_content, utilization_content, zoning_content, EvidenceAtom, Predicate,
    MAX_COUNT, ZONING_DISTRACTOR,
};
use super::morpho::compute_morphostats;
use super::types::{Category, ClusterLabel, Color, ObjectClass, OccupancyBand, Scene, ShapeTag, Subset};
use crate::error::{Error, Result};
use crate::rng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_K: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McqSample {
    pub id: String,
    pub scene_id: String,
    pub category: Category,
    pub stem: String,
    pub options: Vec<String>,
    pub gold_content: String,
    pub gold_trace: Vec<EvidenceAtom>,
    pub subset: Subset,
}

impl McqSample {
    pub fn gold_slot(&self) -> Option<usize> {
        self.options.iter().position(|o| *o == self.gold_content)
    }

    pub fn template(&self) -> Option<(Template, Option<ObjectClass>)> {
        Template::from_stem(&self.stem)
    }
}

/// Question templates. Reason questions come in three flavours.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Template {
    Count,
    Color,
    Shape,
    Scene,
    Utilization,
    SpareCapacity,
    Zoning,
}

impl Template {
    pub const ALL: [Template; 7] = [
        Template::Count,
        Template::Color,
        Template::Shape,
        Template::Scene,
        Template::Utilization,
        Template::SpareCapacity,
        Template::Zoning,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn category(self) -> Category {
        match self {
            Template::Count => Category::Count,
            Template::Color => Category::Color,
            Template::Shape => Category::Shape,
            Template::Scene => Category::Scene,
            _ => Category::Reason,
        }
    }

    pub fn conclusion(self) -> Predicate {
        match self {
            Template::Count => Predicate::CountEq,
            Template::Color => Predicate::DominantColor,
            Template::Shape => Predicate::DominantShape,
            Template::Scene => Predicate::DensityBand,
            Template::Utilization | Template::SpareCapacity => Predicate::OccupancyBand,
            Template::Zoning => Predicate::ClusterIs,
        }
    }

    /// The full answer domain for this template.
    pub fn domain(self) -> Vec<String> {
        let owned = |v: Vec<&str>| v.into_iter().map(String::from).collect();
        match self {
            Template::Count => (0..=MAX_COUNT).map(|n| n.to_string()).collect(),
            Template::Color => owned(Color::ALL.iter().map(|c| c.as_str()).collect()),
            Template::Shape => owned(ShapeTag::ALL.iter().map(|s| s.as_str()).collect()),
            Template::Scene => owned(vec![scene_content(false), scene_content(true)]),
            Template::Utilization => owned(OccupancyBand::ALL.iter().map(|b| utilization_content(*b)).collect()),
            Template::SpareCapacity => {
                owned(OccupancyBand::ALL.iter().map(|b| spare_capacity_content(*b)).collect())
            }
            Template::Zoning => {
                let mut v: Vec<&str> = ClusterLabel::ALL.iter().map(|l| zoning_content(*l)).collect();
                v.push(ZONING_DISTRACTOR);
                owned(v)
            }
        }
    }

    pub fn stem(self, scene: &Scene, class: Option<ObjectClass>) -> String {
        let region = scene.region_type.display_name();
        match self {
            Template::Count => format!(
                "How many {} are visible in this scene?",
                class.unwrap_or(ObjectClass::Vehicle).plural()
            ),
            Template::Color => "What is the dominant color of the objects in this scene?".into(),
            Template::Shape => "What is the dominant shape of the objects in this scene?".into(),
            Template::Scene => "Is this scene rural or urban?".into(),
            Template::Utilization => format!("How intensively is this {region} being used?"),
            Template::SpareCapacity => format!("How much spare capacity does this {region} have?"),
            Template::Zoning => format!("Which functional layout best describes this {region}?"),
        }
    }

    /// Recover the template (and the counted class) from a canonical stem.
    pub fn from_stem(stem: &str) -> Option<(Template, Option<ObjectClass>)> {
        if let Some(rest) = stem.strip_prefix("How many ") {
            let plural = rest.strip_suffix(" are visible in this scene?")?;
            let class = ObjectClass::ALL.iter().copied().find(|c| c.plural() == plural)?;
            return Some((Template::Count, Some(class)));
        }
        let t = if stem.starts_with("What is the dominant color") {
            Template::Color
        } else if stem.starts_with("What is the dominant shape") {
            Template::Shape
        } else if stem == "Is this scene rural or urban?" {
            Template::Scene
        } else if stem.starts_with("How intensively is this ") {
            Template::Utilization
        } else if stem.starts_with("How much spare capacity") {
            Template::SpareCapacity
        } else if stem.starts_with("Which functional layout") {
            Template::Zoning
        } else {
            return None;
        };
        Some((t, None))
    }
}

fn unsupported(scene: &Scene, category: Category, reason: &str) -> Error {
    Error::UnsupportedCategory {
        scene_id: scene.id.clone(),
        category: category.to_string(),
        reason: reason.to_string(),
    }
}

/// Build a question of the given category whose gold answer and gold trace
/// come from the scene's ground truth.
pub fn synthesize_mcq(scene: &Scene, category: Category, k: usize, seed: u64) -> Result<McqSample> {
    if k < 2 {
        return Err(Error::InvalidParams(format!("option count {k} must be at least 2")));
    }
    let mut rng = rng::from_seed(seed);
    let stats = compute_morphostats(scene);
    let density = EvidenceAtom::DensityBand(stats.density_band());

    let template = match category {
        Category::Count => Template::Count,
        Category::Color => Template::Color,
        Category::Shape => Template::Shape,
        Category::Scene => Template::Scene,
        Category::Reason => *[Template::Utilization, Template::SpareCapacity, Template::Zoning]
            .choose(&mut rng)
            .expect("non-empty"),
    };

    let (class, gold_content, gold_trace) = match template {
        Template::Count => {
            let present: Vec<ObjectClass> =
                ObjectClass::ALL.iter().copied().filter(|c| scene.count_of(*c) > 0).collect();
            let class = *present
                .choose(&mut rng)
                .ok_or_else(|| unsupported(scene, category, "scene has no objects"))?;
            let n = scene.count_of(class);
            if n > MAX_COUNT {
                return Err(unsupported(scene, category, "count exceeds the answer domain"));
            }
            let trace = vec![
                EvidenceAtom::count_range_for(class, n),
                EvidenceAtom::CountEq { class, n },
            ];
            (Some(class), n.to_string(), trace)
        }
        Template::Color => {
            let c = scene
                .dominant_color()
                .ok_or_else(|| unsupported(scene, category, "no unique dominant color"))?;
            (None, c.as_str().to_string(), vec![EvidenceAtom::DominantColor(c)])
        }
        Template::Shape => {
            let s = scene
                .dominant_shape()
                .ok_or_else(|| unsupported(scene, category, "no unique dominant shape"))?;
            (None, s.as_str().to_string(), vec![EvidenceAtom::DominantShape(s)])
        }
        Template::Scene => {
            let gold = scene_content(scene.region_type.is_rural()).to_string();
            if !density.claims_content(&gold) {
                return Err(unsupported(scene, category, "density band contradicts the region type"));
            }
            (None, gold, vec![density.clone()])
        }
        Template::Utilization => {
            let b = stats.occupancy_band();
            (None, utilization_content(b).to_string(), vec![density.clone(), EvidenceAtom::OccupancyBand(b)])
        }
        Template::SpareCapacity => {
            let b = stats.occupancy_band();
            (None, spare_capacity_content(b).to_string(), vec![density.clone(), EvidenceAtom::OccupancyBand(b)])
        }
        Template::Zoning => {
            let l = stats.clustering_label;
            (None, zoning_content(l).to_string(), vec![density.clone(), EvidenceAtom::ClusterIs(l)])
        }
    };

    let domain = template.domain();
    let k_eff = k.min(domain.len());
    let distractors: Vec<String> = domain.into_iter().filter(|d| *d != gold_content).collect();
    let mut options: Vec<String> = distractors
        .choose_multiple(&mut rng, k_eff - 1)
        .cloned()
        .collect();
    options.push(gold_content.clone());
    options.shuffle(&mut rng);

    Ok(McqSample {
        id: format!("mcq-{seed:016x}"),
        scene_id: scene.id.clone(),
        category,
        stem: template.stem(scene, class),
        options,
        gold_content,
        gold_trace,
        subset: Subset::Rl,
    })
}

/// Move the gold option into slot 0 with probability `bias`, otherwise leave
/// the uniform shuffle alone. Used to build shortcut-prone training splits.
pub fn apply_slot_bias<R: Rng>(sample: &mut McqSample, bias: f64, rng: &mut R) {
    if bias > 0.0 && rng.random::<f64>() < bias {
        if let Some(g) = sample.gold_slot() {
            sample.options.swap(0, g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::generate::{generate_scene, CountDist, GenerationParams, Layout, RegionChoice};
    use crate::scene::types::{RegionType, SceneObject};

    fn vehicles(n: usize, capacity: u32) -> Scene {
        Scene {
            id: "s".into(),
            region_type: RegionType::ParkingLot,
            area: 0.5,
            capacity,
            seed: 0,
            objects: (0..n)
                .map(|i| SceneObject {
                    class_label: ObjectClass::Vehicle,
                    center: [0.1 + 0.07 * i as f64, 0.3 + 0.05 * (i % 3) as f64],
                    size: [0.02, 0.03],
                    orientation: 0.5,
                    color: Color::White,
                    shape_tag: ShapeTag::Rectangular,
                })
                .collect(),
        }
    }

    #[test]
    fn count_question_has_gold_and_three_distinct_wrong_counts() {
        let s = synthesize_mcq(&vehicles(3, 10), Category::Count, 4, 1).unwrap();
        assert_eq!(s.gold_content, "3");
        assert_eq!(s.options.len(), 4);
        assert_eq!(s.options.iter().filter(|o| *o == "3").count(), 1);
        let set: std::collections::HashSet<_> = s.options.iter().collect();
        assert_eq!(set.len(), 4);
        assert_eq!(s.stem, "How many vehicles are visible in this scene?");
        assert_eq!(s.template(), Some((Template::Count, Some(ObjectClass::Vehicle))));
    }

    #[test]
    fn sparse_lot_is_sparsely_used() {
        // occupancy 2 / 20 = 0.1
        let scene = vehicles(2, 20);
        let mut seed = 0;
        let s = loop {
            let s = synthesize_mcq(&scene, Category::Reason, 4, seed).unwrap();
            if s.template() == Some((Template::Utilization, None)) {
                break s;
            }
            seed += 1;
        };
        assert_eq!(s.gold_content, "sparsely used");
        assert_eq!(s.options.len(), 4);
    }

    #[test]
    fn same_inputs_same_question() {
        let scene = generate_scene(&GenerationParams::default(), 11).unwrap();
        for cat in Category::ALL {
            let a = synthesize_mcq(&scene, *cat, 4, 5);
            let b = synthesize_mcq(&scene, *cat, 4, 5);
            match (a, b) {
                (Ok(a), Ok(b)) => assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => panic!("nondeterministic support for {cat}"),
            }
        }
    }

    #[test]
    fn empty_scene_cannot_ground_color() {
        let scene = generate_scene(
            &GenerationParams {
                region: RegionChoice::Fixed(RegionType::RuralField),
                count: CountDist::Fixed(0),
                layout: Some(Layout::Scatter),
                ..Default::default()
            },
            2,
        )
        .unwrap();
        assert!(matches!(
            synthesize_mcq(&scene, Category::Color, 4, 0),
            Err(Error::UnsupportedCategory { .. })
        ));
        assert!(matches!(
            synthesize_mcq(&scene, Category::Count, 4, 0),
            Err(Error::UnsupportedCategory { .. })
        ));
    }

    #[test]
    fn scene_questions_offer_two_options() {
        let s = synthesize_mcq(&vehicles(4, 10), Category::Scene, 4, 3).unwrap();
        assert_eq!(s.options.len(), 2);
        assert_eq!(s.gold_content, "urban");
    }

    #[test]
    fn stems_round_trip_through_detection() {
        let scene = vehicles(3, 10);
        for t in Template::ALL {
            let class = (t == Template::Count).then_some(ObjectClass::StorageTank);
            assert_eq!(Template::from_stem(&t.stem(&scene, class)), Some((t, class)));
        }
    }
}
