//! Evidence atoms: the vocabulary reasoning traces are written in.

use super::morpho::MorphoStats;
use super::types::{ClusterLabel, Color, DensityBand, ObjectClass, OccupancyBand, Scene, ShapeTag};
use crate::error::{Error, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use std::fmt;

/// Largest count any atom may mention.
pub const MAX_COUNT: u32 = 24;

/// Count ranges used by the standard vocabulary.
pub const COUNT_BINS: [(u32, u32); 5] = [(0, 0), (1, 3), (4, 7), (8, 15), (16, MAX_COUNT)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Predicate {
    CountEq,
    CountInRange,
    DominantColor,
    DominantShape,
    OccupancyBand,
    ClusterIs,
    DensityBand,
}

impl Predicate {
    pub const ALL: [Predicate; 7] = [
        Predicate::CountEq,
        Predicate::CountInRange,
        Predicate::DominantColor,
        Predicate::DominantShape,
        Predicate::OccupancyBand,
        Predicate::ClusterIs,
        Predicate::DensityBand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Predicate::CountEq => "COUNT_EQ",
            Predicate::CountInRange => "COUNT_IN_RANGE",
            Predicate::DominantColor => "DOMINANT_COLOR",
            Predicate::DominantShape => "DOMINANT_SHAPE",
            Predicate::OccupancyBand => "OCCUPANCY_BAND",
            Predicate::ClusterIs => "CLUSTER_IS",
            Predicate::DensityBand => "DENSITY_BAND",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Predicate::CountEq => 2,
            Predicate::CountInRange => 3,
            _ => 1,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EvidenceAtom {
    CountEq { class: ObjectClass, n: u32 },
    CountInRange { class: ObjectClass, lo: u32, hi: u32 },
    DominantColor(Color),
    DominantShape(ShapeTag),
    OccupancyBand(OccupancyBand),
    ClusterIs(ClusterLabel),
    DensityBand(DensityBand),
}

// Option contents. Every content string belongs to exactly one answer domain.
pub fn utilization_content(b: OccupancyBand) -> &'static str {
    match b {
        OccupancyBand::Sparse => "sparsely used",
        OccupancyBand::Moderate => "moderately used",
        OccupancyBand::Heavy => "heavily used",
        OccupancyBand::NearSaturation => "near saturation",
    }
}

pub fn spare_capacity_content(b: OccupancyBand) -> &'static str {
    match b {
        OccupancyBand::Sparse => "ample spare capacity",
        OccupancyBand::Moderate => "some spare capacity",
        OccupancyBand::Heavy => "limited spare capacity",
        OccupancyBand::NearSaturation => "almost no spare capacity",
    }
}

pub fn zoning_content(l: ClusterLabel) -> &'static str {
    match l {
        ClusterLabel::Grid => "planned grid layout",
        ClusterLabel::Linear => "linear corridor layout",
        ClusterLabel::Scattered => "dispersed layout",
    }
}

/// A zoning option no scene realises; keeps the zoning domain at four values.
pub const ZONING_DISTRACTOR: &str = "radial hub layout";

pub fn scene_content(rural: bool) -> &'static str {
    if rural {
        "rural"
    } else {
        "urban"
    }
}

impl EvidenceAtom {
    pub fn predicate(&self) -> Predicate {
        match self {
            EvidenceAtom::CountEq { .. } => Predicate::CountEq,
            EvidenceAtom::CountInRange { .. } => Predicate::CountInRange,
            EvidenceAtom::DominantColor(_) => Predicate::DominantColor,
            EvidenceAtom::DominantShape(_) => Predicate::DominantShape,
            EvidenceAtom::OccupancyBand(_) => Predicate::OccupancyBand,
            EvidenceAtom::ClusterIs(_) => Predicate::ClusterIs,
            EvidenceAtom::DensityBand(_) => Predicate::DensityBand,
        }
    }

    pub fn count_range_for(class: ObjectClass, n: u32) -> EvidenceAtom {
        let (lo, hi) = COUNT_BINS
            .iter()
            .copied()
            .find(|(lo, hi)| (*lo..=*hi).contains(&n))
            .unwrap_or((n, n));
        EvidenceAtom::CountInRange { class, lo, hi }
    }

    /// Domain check beyond what the type enforces.
    pub fn validate(&self) -> Result<()> {
        match *self {
            EvidenceAtom::CountEq { n, .. } if n > MAX_COUNT => {
                Err(Error::MalformedAtom(format!("{self}: count above {MAX_COUNT}")))
            }
            EvidenceAtom::CountInRange { lo, hi, .. } if lo > hi || hi > MAX_COUNT => {
                Err(Error::MalformedAtom(format!("{self}: range must satisfy lo <= hi <= {MAX_COUNT}")))
            }
            _ => Ok(()),
        }
    }

    /// Exact truth value against the scene's ground truth.
    pub fn holds(&self, scene: &Scene, stats: &MorphoStats) -> bool {
        match *self {
            EvidenceAtom::CountEq { class, n } => scene.count_of(class) == n,
            EvidenceAtom::CountInRange { class, lo, hi } => (lo..=hi).contains(&scene.count_of(class)),
            EvidenceAtom::DominantColor(c) => scene.dominant_color() == Some(c),
            EvidenceAtom::DominantShape(s) => scene.dominant_shape() == Some(s),
            EvidenceAtom::OccupancyBand(b) => stats.occupancy_band() == b,
            EvidenceAtom::ClusterIs(l) => stats.clustering_label == l,
            EvidenceAtom::DensityBand(b) => stats.density_band() == b,
        }
    }

    /// Option contents this atom asserts when used as a conclusion.
    pub fn claims(&self) -> Vec<String> {
        match *self {
            EvidenceAtom::CountEq { n, .. } => vec![n.to_string()],
            EvidenceAtom::CountInRange { .. } => vec![],
            EvidenceAtom::DominantColor(c) => vec![c.as_str().to_string()],
            EvidenceAtom::DominantShape(s) => vec![s.as_str().to_string()],
            EvidenceAtom::OccupancyBand(b) => {
                vec![utilization_content(b).to_string(), spare_capacity_content(b).to_string()]
            }
            EvidenceAtom::ClusterIs(l) => vec![zoning_content(l).to_string()],
            EvidenceAtom::DensityBand(b) => vec![scene_content(b == DensityBand::Low).to_string()],
        }
    }

    pub fn claims_content(&self, content: &str) -> bool {
        self.claims().iter().any(|c| c == content)
    }

    fn args(&self) -> Vec<Value> {
        match self {
            EvidenceAtom::CountEq { class, n } => vec![class.as_str().into(), (*n).into()],
            EvidenceAtom::CountInRange { class, lo, hi } => {
                vec![class.as_str().into(), (*lo).into(), (*hi).into()]
            }
            EvidenceAtom::DominantColor(c) => vec![c.as_str().into()],
            EvidenceAtom::DominantShape(s) => vec![s.as_str().into()],
            EvidenceAtom::OccupancyBand(b) => vec![b.as_str().into()],
            EvidenceAtom::ClusterIs(l) => vec![l.as_str().into()],
            EvidenceAtom::DensityBand(b) => vec![b.as_str().into()],
        }
    }

    /// Parse the wire form `{"predicate": ..., "args": [...]}`.
    pub fn from_raw(raw: &RawAtom) -> Result<EvidenceAtom> {
        let pred = Predicate::ALL
            .iter()
            .copied()
            .find(|p| p.name() == raw.predicate)
            .ok_or_else(|| Error::MalformedAtom(format!("unknown predicate {:?}", raw.predicate)))?;
        if raw.args.len() != pred.arity() {
            return Err(Error::MalformedAtom(format!(
                "{} takes {} argument(s), got {}",
                pred.name(),
                pred.arity(),
                raw.args.len()
            )));
        }
        fn word<'a>(v: &'a Value, what: &str) -> Result<&'a str> {
            v.as_str().ok_or_else(|| Error::MalformedAtom(format!("{what} must be a string, got {v}")))
        }
        fn int(v: &Value) -> Result<u32> {
            v.as_u64()
                .and_then(|n| u32::try_from(n).ok())
                .ok_or_else(|| Error::MalformedAtom(format!("expected a nonnegative integer, got {v}")))
        }
        fn named<T>(v: &Value, what: &str, parse: fn(&str) -> Option<T>) -> Result<T> {
            let s = word(v, what)?;
            parse(s).ok_or_else(|| Error::MalformedAtom(format!("unknown {what} {s:?}")))
        }
        let a = &raw.args;
        let atom = match pred {
            Predicate::CountEq => EvidenceAtom::CountEq {
                class: named(&a[0], "class", ObjectClass::parse)?,
                n: int(&a[1])?,
            },
            Predicate::CountInRange => EvidenceAtom::CountInRange {
                class: named(&a[0], "class", ObjectClass::parse)?,
                lo: int(&a[1])?,
                hi: int(&a[2])?,
            },
            Predicate::DominantColor => EvidenceAtom::DominantColor(named(&a[0], "color", Color::parse)?),
            Predicate::DominantShape => EvidenceAtom::DominantShape(named(&a[0], "shape", ShapeTag::parse)?),
            Predicate::OccupancyBand => {
                EvidenceAtom::OccupancyBand(named(&a[0], "occupancy band", OccupancyBand::parse)?)
            }
            Predicate::ClusterIs => EvidenceAtom::ClusterIs(named(&a[0], "cluster label", ClusterLabel::parse)?),
            Predicate::DensityBand => EvidenceAtom::DensityBand(named(&a[0], "density band", DensityBand::parse)?),
        };
        atom.validate()?;
        Ok(atom)
    }

    pub fn to_raw(&self) -> RawAtom {
        RawAtom {
            predicate: self.predicate().name().to_string(),
            args: self.args(),
        }
    }
}

impl fmt::Display for EvidenceAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<String> = self
            .args()
            .iter()
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect();
        write!(f, "{}({})", self.predicate().name(), args.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawAtom {
    pub predicate: String,
    pub args: Vec<Value>,
}

impl Serialize for EvidenceAtom {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_raw().serialize(s)
    }
}

impl<'de> Deserialize<'de> for EvidenceAtom {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawAtom::deserialize(d)?;
        EvidenceAtom::from_raw(&raw).map_err(serde::de::Error::custom)
    }
}

/// Every well-formed atom over the closed domains, in a fixed order.
pub fn standard_vocabulary() -> Vec<EvidenceAtom> {
    let mut v = Vec::new();
    for &class in ObjectClass::ALL {
        for n in 0..=MAX_COUNT {
            v.push(EvidenceAtom::CountEq { class, n });
        }
    }
    for &class in ObjectClass::ALL {
        for (lo, hi) in COUNT_BINS {
            v.push(EvidenceAtom::CountInRange { class, lo, hi });
        }
    }
    v.extend(Color::ALL.iter().map(|&c| EvidenceAtom::DominantColor(c)));
    v.extend(ShapeTag::ALL.iter().map(|&s| EvidenceAtom::DominantShape(s)));
    v.extend(OccupancyBand::ALL.iter().map(|&b| EvidenceAtom::OccupancyBand(b)));
    v.extend(ClusterLabel::ALL.iter().map(|&l| EvidenceAtom::ClusterIs(l)));
    v.extend(DensityBand::ALL.iter().map(|&b| EvidenceAtom::DensityBand(b)));
    v
}
