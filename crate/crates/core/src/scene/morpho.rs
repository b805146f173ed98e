//! Morphological statistics: density, spacing, occupancy and clustering.

use super::types::{ClusterLabel, DensityBand, OccupancyBand, Scene};
use serde::{Deserialize, Serialize};

/// RMS lattice residual (scene units) at or below which centers form a grid.
pub const TAU_GRID: f64 = 0.02;
/// RMS perpendicular residual at or below which centers form a line.
pub const TAU_LINE: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphoStats {
    pub count: u32,
    pub density: f64,
    pub mean_nn_spacing: f64,
    pub occupancy_ratio: f64,
    pub clustering_label: ClusterLabel,
}

impl MorphoStats {
    pub fn occupancy_band(&self) -> OccupancyBand {
        OccupancyBand::of(self.occupancy_ratio)
    }

    pub fn density_band(&self) -> DensityBand {
        DensityBand::of(self.density)
    }
}

pub fn compute_morphostats(scene: &Scene) -> MorphoStats {
    let centers = scene.centers();
    let count = centers.len() as u32;
    MorphoStats {
        count,
        density: f64::from(count) / scene.area,
        mean_nn_spacing: mean_nn_spacing(&centers),
        occupancy_ratio: f64::from(count) / f64::from(scene.capacity),
        clustering_label: classify_clustering(&centers),
    }
}

pub fn mean_nn_spacing(centers: &[[f64; 2]]) -> f64 {
    if centers.len() < 2 {
        return 0.0;
    }
    let total: f64 = centers
        .iter()
        .enumerate()
        .map(|(i, p)| {
            centers
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / centers.len() as f64
}

pub fn classify_clustering(centers: &[[f64; 2]]) -> ClusterLabel {
    if centers.len() < 3 {
        return ClusterLabel::Scattered;
    }
    if lattice_residual(centers).is_some_and(|r| r <= TAU_GRID) {
        ClusterLabel::Grid
    } else if line_residual(centers) <= TAU_LINE {
        ClusterLabel::Linear
    } else {
        ClusterLabel::Scattered
    }
}

/// One-dimensional grouping of coordinates into `groups` clusters by cutting
/// the `groups - 1` widest gaps of the sorted values. Returns per-point group
/// ids (in input order) and the sum of squared deviations from group means.
fn split_axis(values: &[f64], groups: usize) -> (Vec<usize>, f64) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();

    let mut gaps: Vec<usize> = (0..n - 1).collect();
    gaps.sort_by(|&a, &b| {
        let ga = sorted[a + 1] - sorted[a];
        let gb = sorted[b + 1] - sorted[b];
        gb.total_cmp(&ga).then(a.cmp(&b))
    });
    let mut cuts: Vec<usize> = gaps[..groups - 1].to_vec();
    cuts.sort_unstable();

    let mut group_of_rank = vec![0usize; n];
    let mut g = 0;
    let mut next_cut = cuts.iter().peekable();
    for (rank, slot) in group_of_rank.iter_mut().enumerate() {
        *slot = g;
        if next_cut.peek() == Some(&&rank) {
            next_cut.next();
            g += 1;
        }
    }

    let mut sums = vec![0.0; groups];
    let mut counts = vec![0usize; groups];
    for (rank, &v) in sorted.iter().enumerate() {
        sums[group_of_rank[rank]] += v;
        counts[group_of_rank[rank]] += 1;
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let ss: f64 = sorted
        .iter()
        .enumerate()
        .map(|(rank, v)| (v - means[group_of_rank[rank]]).powi(2))
        .sum();

    let mut group = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        group[i] = group_of_rank[rank];
    }
    (group, ss)
}

/// Best RMS distance of the centers to an axis-aligned (rectilinear) lattice
/// with at least two rows and two columns. A lattice only counts when every
/// center lands on its own node and more than half of the nodes are occupied;
/// this keeps diagonal lines from being read as sparse lattices.
pub fn lattice_residual(centers: &[[f64; 2]]) -> Option<f64> {
    let n = centers.len();
    if n < 3 {
        return None;
    }
    let xs: Vec<f64> = centers.iter().map(|c| c[0]).collect();
    let ys: Vec<f64> = centers.iter().map(|c| c[1]).collect();
    let cols: Vec<(Vec<usize>, f64)> = (2..=n).map(|c| split_axis(&xs, c)).collect();
    let rows: Vec<(Vec<usize>, f64)> = (2..=n).map(|r| split_axis(&ys, r)).collect();

    let mut best: Option<f64> = None;
    for (ci, (col_of, ssx)) in cols.iter().enumerate() {
        let c = ci + 2;
        for (ri, (row_of, ssy)) in rows.iter().enumerate() {
            let r = ri + 2;
            if 2 * n <= r * c {
                break;
            }
            let mut seen = vec![false; r * c];
            let distinct = (0..n).all(|i| {
                let node = row_of[i] * c + col_of[i];
                !std::mem::replace(&mut seen[node], true)
            });
            if !distinct {
                continue;
            }
            let rms = ((ssx + ssy) / n as f64).sqrt();
            if best.is_none_or(|b| rms < b) {
                best = Some(rms);
            }
        }
    }
    best
}

/// RMS perpendicular distance to the total-least-squares line.
pub fn line_residual(centers: &[[f64; 2]]) -> f64 {
    let n = centers.len() as f64;
    let mx = centers.iter().map(|c| c[0]).sum::<f64>() / n;
    let my = centers.iter().map(|c| c[1]).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for c in centers {
        let (dx, dy) = (c[0] - mx, c[1] - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let half_trace = 0.5 * (sxx + syy);
    let disc = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
    let lambda_min = (half_trace - disc).max(0.0);
    (lambda_min / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::types::{Color, ObjectClass, RegionType, SceneObject, ShapeTag};

    fn scene_with(centers: &[[f64; 2]], area: f64, capacity: u32) -> Scene {
        Scene {
            id: "t".into(),
            region_type: RegionType::ParkingLot,
            area,
            capacity,
            seed: 0,
            objects: centers
                .iter()
                .map(|&c| SceneObject {
                    class_label: ObjectClass::Vehicle,
                    center: c,
                    size: [0.02, 0.02],
                    orientation: 0.0,
                    color: Color::Red,
                    shape_tag: ShapeTag::Rectangular,
                })
                .collect(),
        }
    }

    fn lattice(rows: usize, cols: usize) -> Vec<[f64; 2]> {
        let mut v = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                v.push([(j as f64 + 0.5) / cols as f64, (i as f64 + 0.5) / rows as f64]);
            }
        }
        v
    }

    #[test]
    fn two_point_spacing() {
        let s = scene_with(&[[0.0, 0.0], [0.0, 1.0]], 1.0, 4);
        assert_eq!(compute_morphostats(&s).mean_nn_spacing, 1.0);
    }

    #[test]
    fn density_is_count_over_area() {
        let s = scene_with(&[[0.1, 0.1], [0.5, 0.2], [0.9, 0.7]], 2.0, 10);
        let m = compute_morphostats(&s);
        assert_eq!(m.density, 1.5);
        assert_eq!(m.occupancy_ratio, 0.3);
    }

    #[test]
    fn empty_scene() {
        let m = compute_morphostats(&scene_with(&[], 1.0, 4));
        assert_eq!(m.count, 0);
        assert_eq!(m.mean_nn_spacing, 0.0);
        assert_eq!(m.clustering_label, ClusterLabel::Scattered);
    }

    #[test]
    fn exact_lattice_has_zero_residual() {
        let pts = lattice(3, 3);
        assert_eq!(lattice_residual(&pts), Some(0.0));
        assert_eq!(classify_clustering(&pts), ClusterLabel::Grid);
        let m = compute_morphostats(&scene_with(&pts, 1.0, 9));
        assert_eq!(m.clustering_label, ClusterLabel::Grid);
    }

    #[test]
    fn partial_lattice_is_grid() {
        let pts: Vec<_> = lattice(2, 3).into_iter().take(5).collect();
        assert_eq!(classify_clustering(&pts), ClusterLabel::Grid);
    }

    #[test]
    fn diagonal_points_are_linear() {
        let pts = [[0.1, 0.1], [0.2, 0.2], [0.35, 0.35], [0.6, 0.6], [0.9, 0.9]];
        assert!(line_residual(&pts) < 1e-12);
        assert_eq!(classify_clustering(&pts), ClusterLabel::Linear);
    }

    #[test]
    fn degenerate_inputs_are_scattered() {
        assert_eq!(classify_clustering(&[]), ClusterLabel::Scattered);
        assert_eq!(classify_clustering(&[[0.1, 0.1], [0.2, 0.2]]), ClusterLabel::Scattered);
    }

    #[test]
    fn spread_points_are_scattered() {
        let pts = [[0.1, 0.8], [0.7, 0.15], [0.45, 0.5], [0.9, 0.95], [0.2, 0.3], [0.6, 0.75]];
        assert_eq!(classify_clustering(&pts), ClusterLabel::Scattered);
    }
}
