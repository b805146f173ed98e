//! Rule-based trace verification and the dataset quality gate.

use super::atom::EvidenceAtom;
use super::mcq::McqSample;
use super::morpho::{compute_morphostats, MorphoStats};
use super::types::Scene;
use crate::error::Result;
use std::collections::HashSet;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceVerdict {
    pub atom_truth: Vec<bool>,
    /// Non-empty and every atom true.
    pub sound: bool,
}

pub fn verify_trace(scene: &Scene, trace: &[EvidenceAtom]) -> Result<TraceVerdict> {
    verify_with_stats(scene, &compute_morphostats(scene), trace)
}

pub fn verify_with_stats(scene: &Scene, stats: &MorphoStats, trace: &[EvidenceAtom]) -> Result<TraceVerdict> {
    for atom in trace {
        atom.validate()?;
    }
    let atom_truth: Vec<bool> = trace.iter().map(|a| a.holds(scene, stats)).collect();
    let sound = !atom_truth.is_empty() && atom_truth.iter().all(|t| *t);
    Ok(TraceVerdict { atom_truth, sound })
}

/// Soundness relative to a question: every atom true and the concluding atom
/// asserts the gold content.
pub fn reasoning_is_sound(scene: &Scene, stats: &MorphoStats, question: &McqSample, trace: &[EvidenceAtom]) -> Result<bool> {
    let verdict = verify_with_stats(scene, stats, trace)?;
    Ok(verdict.sound && trace.last().is_some_and(|a| a.claims_content(&question.gold_content)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GateRejection {
    TooFewOptions,
    DuplicateOptions,
    GoldNotUnique,
    UnsoundTrace(Vec<bool>),
    ConclusionMismatch,
    Malformed(String),
}

/// Quality gate applied to every synthesized sample before it is emitted.
pub fn gate(scene: &Scene, sample: &McqSample) -> std::result::Result<(), GateRejection> {
    if sample.options.len() < 2 {
        return Err(GateRejection::TooFewOptions);
    }
    if sample.options.iter().collect::<HashSet<_>>().len() != sample.options.len() {
        return Err(GateRejection::DuplicateOptions);
    }
    if sample.options.iter().filter(|o| **o == sample.gold_content).count() != 1 {
        return Err(GateRejection::GoldNotUnique);
    }
    let verdict = verify_trace(scene, &sample.gold_trace).map_err(|e| GateRejection::Malformed(e.to_string()))?;
    if !verdict.sound {
        return Err(GateRejection::UnsoundTrace(verdict.atom_truth));
    }
    if !sample
        .gold_trace
        .last()
        .is_some_and(|a| a.claims_content(&sample.gold_content))
    {
        return Err(GateRejection::ConclusionMismatch);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::scene::types::{Color, ObjectClass, OccupancyBand, RegionType, SceneObject, ShapeTag};

    fn lot(n: usize, capacity: u32) -> Scene {
        Scene {
            id: "lot".into(),
            region_type: RegionType::ParkingLot,
            area: 0.4,
            capacity,
            seed: 0,
            objects: (0..n)
                .map(|i| SceneObject {
                    class_label: ObjectClass::Vehicle,
                    center: [0.2 + 0.2 * i as f64, 0.5],
                    size: [0.02, 0.03],
                    orientation: 0.0,
                    color: Color::Gray,
                    shape_tag: ShapeTag::Rectangular,
                })
                .collect(),
        }
    }

    #[test]
    fn true_count_is_sound() {
        let v = verify_trace(&lot(3, 10), &[EvidenceAtom::CountEq { class: ObjectClass::Vehicle, n: 3 }]).unwrap();
        assert_eq!(v.atom_truth, vec![true]);
        assert!(v.sound);
    }

    #[test]
    fn false_count_is_unsound() {
        let v = verify_trace(&lot(3, 10), &[EvidenceAtom::CountEq { class: ObjectClass::Vehicle, n: 5 }]).unwrap();
        assert_eq!(v.atom_truth, vec![false]);
        assert!(!v.sound);
    }

    #[test]
    fn near_saturation_claim_on_sparse_lot_is_unsound() {
        // occupancy 2 / 20 = 0.1
        let v = verify_trace(&lot(2, 20), &[EvidenceAtom::OccupancyBand(OccupancyBand::NearSaturation)]).unwrap();
        assert!(!v.sound);
        let v = verify_trace(&lot(2, 20), &[EvidenceAtom::OccupancyBand(OccupancyBand::Sparse)]).unwrap();
        assert!(v.sound);
    }

    #[test]
    fn out_of_domain_atom_is_malformed() {
        let bad = EvidenceAtom::CountInRange { class: ObjectClass::Ship, lo: 5, hi: 2 };
        assert!(matches!(verify_trace(&lot(1, 4), &[bad]), Err(Error::MalformedAtom(_))));
    }

    #[test]
    fn empty_trace_is_unsound() {
        assert!(!verify_trace(&lot(1, 4), &[]).unwrap().sound);
    }
}
