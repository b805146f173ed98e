//! Procedural scene generation.

use super::types::{Color, ObjectClass, RegionType, Scene, SceneObject, ShapeTag, OCCUPANCY_EDGES};
use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Line layouts keep their endpoints this far inside the unit square, which
/// bounds the admissible perpendicular jitter.
pub const LINE_MARGIN: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Row-major fill of an axis-aligned lattice with nodes at
    /// `((j + 0.5) / cols, (i + 0.5) / rows)`. `shape` is `[rows, cols]`; when
    /// absent the lattice is sized from the object count.
    Grid { shape: Option<[u32; 2]>, jitter: f64 },
    /// Points along a random segment with perpendicular jitter.
    Line { jitter: f64 },
    /// Uniform over the unit square.
    Scatter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionChoice {
    Fixed(RegionType),
    /// Weights in `RegionType::ALL` order.
    Weighted([f64; 5]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountDist {
    /// Pick an occupancy band uniformly, then a count inside it.
    BandBalanced,
    Fixed(u32),
    Uniform { min: u32, max: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub region: RegionChoice,
    /// Inclusive capacity range; region default when absent.
    pub capacity: Option<[u32; 2]>,
    pub count: CountDist,
    /// Fixed layout; region-dependent mix when absent.
    pub layout: Option<Layout>,
    /// Inclusive area range; region default when absent.
    pub area: Option<[f64; 2]>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            region: RegionChoice::Weighted([1.0; 5]),
            capacity: None,
            count: CountDist::BandBalanced,
            layout: None,
            area: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if let RegionChoice::Weighted(w) = &self.region {
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidParams("region weights must be nonnegative with positive sum".into()));
            }
        }
        if let Some([lo, hi]) = self.capacity {
            if lo == 0 {
                return Err(Error::InvalidParams("capacity must be positive".into()));
            }
            if lo > hi {
                return Err(Error::InvalidParams(format!("capacity range {lo}..={hi} is empty")));
            }
        }
        if let Some([lo, hi]) = self.area {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::InvalidParams(format!("area range [{lo}, {hi}] is invalid")));
            }
        }
        if let CountDist::Uniform { min, max } = self.count {
            if min > max {
                return Err(Error::InvalidParams(format!("count range {min}..={max} is empty")));
            }
        }
        match &self.layout {
            Some(Layout::Grid { shape, jitter }) => {
                check_jitter(*jitter)?;
                if let Some([r, c]) = shape {
                    if *r == 0 || *c == 0 {
                        return Err(Error::InvalidParams("lattice shape must be positive".into()));
                    }
                    check_grid_jitter(*r, *c, *jitter)?;
                }
            }
            Some(Layout::Line { jitter }) => {
                check_jitter(*jitter)?;
                if *jitter > LINE_MARGIN {
                    return Err(Error::InvalidParams(format!(
                        "line jitter {jitter} exceeds the {LINE_MARGIN} margin and could leave the unit square"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn check_jitter(jitter: f64) -> Result<()> {
    if !(jitter.is_finite() && jitter >= 0.0) {
        return Err(Error::InvalidParams(format!("jitter {jitter} must be finite and nonnegative")));
    }
    Ok(())
}

fn check_grid_jitter(rows: u32, cols: u32, jitter: f64) -> Result<()> {
    let limit = 0.5 / f64::from(rows.max(cols));
    if jitter > limit {
        return Err(Error::InvalidParams(format!(
            "grid jitter {jitter} exceeds {limit} for a {rows}x{cols} lattice and could leave the unit square"
        )));
    }
    Ok(())
}

pub fn lattice_node(row: u32, col: u32, rows: u32, cols: u32) -> [f64; 2] {
    [
        (f64::from(col) + 0.5) / f64::from(cols),
        (f64::from(row) + 0.5) / f64::from(rows),
    ]
}

fn region_capacity(region: RegionType) -> [u32; 2] {
    match region {
        RegionType::ParkingLot => [8, 24],
        RegionType::Residential => [6, 24],
        RegionType::LogisticsHub => [6, 20],
        RegionType::Port => [4, 16],
        RegionType::RuralField => [3, 8],
    }
}

fn region_layout_weights(region: RegionType) -> [f64; 3] {
    // grid, line, scatter
    match region {
        RegionType::ParkingLot => [0.5, 0.2, 0.3],
        RegionType::Residential => [0.6, 0.1, 0.3],
        RegionType::LogisticsHub => [0.2, 0.6, 0.2],
        RegionType::Port => [0.2, 0.5, 0.3],
        RegionType::RuralField => [0.15, 0.15, 0.7],
    }
}

fn region_class_weights(region: RegionType) -> [f64; 5] {
    // vehicle, building, storage-tank, ship, plane
    match region {
        RegionType::ParkingLot => [0.85, 0.1, 0.0, 0.0, 0.05],
        RegionType::Residential => [0.2, 0.8, 0.0, 0.0, 0.0],
        RegionType::LogisticsHub => [0.35, 0.2, 0.45, 0.0, 0.0],
        RegionType::Port => [0.0, 0.15, 0.3, 0.55, 0.0],
        RegionType::RuralField => [0.3, 0.55, 0.0, 0.0, 0.15],
    }
}

fn class_shape_weights(class: ObjectClass) -> [f64; 4] {
    // rectangular, circular, linear, L-shaped
    match class {
        ObjectClass::Vehicle => [0.85, 0.0, 0.15, 0.0],
        ObjectClass::Building => [0.5, 0.05, 0.0, 0.45],
        ObjectClass::StorageTank => [0.05, 0.95, 0.0, 0.0],
        ObjectClass::Ship => [0.2, 0.0, 0.8, 0.0],
        ObjectClass::Plane => [0.0, 0.0, 0.5, 0.5],
    }
}

pub(crate) fn pick_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Generate a scene. The result is a pure function of `(params, seed)`.
pub fn generate_scene(params: &GenerationParams, seed: u64) -> Result<Scene> {
    params.validate()?;
    let mut rng = rng::from_seed(seed);

    let region = match &params.region {
        RegionChoice::Fixed(r) => *r,
        RegionChoice::Weighted(w) => RegionType::ALL[pick_weighted(&mut rng, w)],
    };
    let [cap_lo, cap_hi] = params.capacity.unwrap_or_else(|| region_capacity(region));
    let capacity = rng.random_range(cap_lo..=cap_hi);

    let area = match params.area {
        Some([lo, hi]) => uniform(&mut rng, lo, hi),
        None if region.is_rural() => uniform(&mut rng, 3.0, 6.0),
        // Urban regions pack roughly 20 to 50 slots per unit area.
        None => f64::from(capacity) * uniform(&mut rng, 0.02, 0.05),
    };

    let count = match params.count {
        CountDist::Fixed(n) => n,
        CountDist::Uniform { min, max } => rng.random_range(min..=max),
        CountDist::BandBalanced => {
            // Urban scenes keep density >= 4 so the urban/rural reading is
            // recoverable from the density band.
            let floor = if region.is_rural() { 0 } else { (4.0 * area).ceil() as u32 };
            band_balanced_count(&mut rng, capacity, floor.min(capacity))
        }
    };
    if count > capacity {
        return Err(Error::InvalidParams(format!("object count {count} exceeds capacity {capacity}")));
    }

    let layout = match &params.layout {
        Some(l) => l.clone(),
        None => match pick_weighted(&mut rng, &region_layout_weights(region)) {
            0 => Layout::Grid { shape: None, jitter: 0.006 },
            1 => Layout::Line { jitter: 0.006 },
            _ => Layout::Scatter,
        },
    };
    let centers = place(&mut rng, &layout, count as usize)?;

    let theme = Color::ALL[rng.random_range(0..Color::ALL.len())];
    let class_w = region_class_weights(region);
    let objects = centers
        .into_iter()
        .map(|center| {
            let class_label = ObjectClass::ALL[pick_weighted(&mut rng, &class_w)];
            let shape_tag = ShapeTag::ALL[pick_weighted(&mut rng, &class_shape_weights(class_label))];
            let color = if rng.random::<f64>() < 0.55 {
                theme
            } else {
                Color::ALL[rng.random_range(0..Color::ALL.len())]
            };
            SceneObject {
                class_label,
                center,
                size: [uniform(&mut rng, 0.01, 0.04), uniform(&mut rng, 0.01, 0.04)],
                orientation: rng.random::<f64>() * PI,
                color,
                shape_tag,
            }
        })
        .collect();

    Ok(Scene {
        id: format!("scene-{seed:016x}"),
        region_type: region,
        area,
        capacity,
        seed,
        objects,
    })
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn band_balanced_count<R: Rng>(rng: &mut R, capacity: u32, floor: u32) -> u32 {
    let cap = f64::from(capacity);
    let band = rng.random_range(0..4);
    let lo_edge = if band == 0 { 0.0 } else { OCCUPANCY_EDGES[band - 1] };
    let lo = ((lo_edge * cap).ceil() as u32).max(floor);
    let hi = if band == 3 {
        capacity
    } else {
        // largest n with n / capacity strictly below the upper edge
        let edge = OCCUPANCY_EDGES[band] * cap;
        let mut h = edge.ceil() as u32;
        while h > 0 && f64::from(h) / cap >= OCCUPANCY_EDGES[band] {
            h -= 1;
        }
        h
    };
    if lo <= hi {
        rng.random_range(lo..=hi)
    } else {
        rng.random_range(floor..=capacity)
    }
}

fn place<R: Rng>(rng: &mut R, layout: &Layout, n: usize) -> Result<Vec<[f64; 2]>> {
    match layout {
        Layout::Scatter => Ok((0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()),
        Layout::Grid { shape, jitter } => {
            let (rows, cols) = match shape {
                Some([r, c]) => (*r, *c),
                None => {
                    let cols = ((n as f64).sqrt().ceil() as u32).max(1);
                    let rows = (n as u32).div_ceil(cols).max(1);
                    (rows, cols)
                }
            };
            if (rows as usize) * (cols as usize) < n {
                return Err(Error::InvalidParams(format!(
                    "{n} objects do not fit a {rows}x{cols} lattice"
                )));
            }
            check_grid_jitter(rows, cols, *jitter)?;
            Ok((0..n)
                .map(|k| {
                    let [x, y] = lattice_node(k as u32 / cols, k as u32 % cols, rows, cols);
                    if *jitter == 0.0 {
                        [x, y]
                    } else {
                        [
                            (x + uniform(rng, -jitter, *jitter)).clamp(0.0, 1.0),
                            (y + uniform(rng, -jitter, *jitter)).clamp(0.0, 1.0),
                        ]
                    }
                })
                .collect())
        }
        Layout::Line { jitter } => {
            let (lo, hi) = (LINE_MARGIN, 1.0 - LINE_MARGIN);
            let mut ends = ([lo, lo], [hi, hi]);
            for _ in 0..64 {
                let p = [uniform(rng, lo, hi), uniform(rng, lo, hi)];
                let q = [uniform(rng, lo, hi), uniform(rng, lo, hi)];
                if ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() >= 0.4 {
                    ends = (p, q);
                    break;
                }
            }
            let (p, q) = ends;
            let d = [q[0] - p[0], q[1] - p[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let normal = [-d[1] / len, d[0] / len];
            Ok((0..n)
                .map(|_| {
                    let t = rng.random::<f64>();
                    let u = if *jitter == 0.0 { 0.0 } else { uniform(rng, -jitter, *jitter) };
                    [
                        (p[0] + t * d[0] + u * normal[0]).clamp(0.0, 1.0),
                        (p[1] + t * d[1] + u * normal[1]).clamp(0.0, 1.0),
                    ]
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::morpho::compute_morphostats;
    use crate::scene::types::ClusterLabel;

    #[test]
    fn zero_jitter_lattice_is_exact() {
        let params = GenerationParams {
            region: RegionChoice::Fixed(RegionType::Residential),
            capacity: Some([9, 9]),
            count: CountDist::Fixed(9),
            layout: Some(Layout::Grid { shape: Some([3, 3]), jitter: 0.0 }),
            area: None,
        };
        let scene = generate_scene(&params, 7).unwrap();
        assert_eq!(scene.objects.len(), 9);
        for (k, o) in scene.objects.iter().enumerate() {
            assert_eq!(o.center, lattice_node(k as u32 / 3, k as u32 % 3, 3, 3));
        }
        assert_eq!(compute_morphostats(&scene).clustering_label, ClusterLabel::Grid);
    }

    #[test]
    fn same_seed_same_scene() {
        let params = GenerationParams::default();
        for seed in [0, 1, 99, u64::MAX] {
            let a = serde_json::to_string(&generate_scene(&params, seed).unwrap()).unwrap();
            let b = serde_json::to_string(&generate_scene(&params, seed).unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn full_scatter_has_unit_occupancy() {
        let params = GenerationParams {
            region: RegionChoice::Fixed(RegionType::ParkingLot),
            capacity: Some([40, 40]),
            count: CountDist::Fixed(40),
            layout: Some(Layout::Scatter),
            area: None,
        };
        let scene = generate_scene(&params, 3).unwrap();
        assert_eq!(compute_morphostats(&scene).occupancy_ratio, 1.0);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = GenerationParams { capacity: Some([0, 4]), ..Default::default() };
        assert!(matches!(generate_scene(&p, 1), Err(Error::InvalidParams(_))));
        p.capacity = Some([9, 9]);
        p.layout = Some(Layout::Grid { shape: Some([3, 3]), jitter: 0.2 });
        assert!(matches!(generate_scene(&p, 1), Err(Error::InvalidParams(_))));
        p.layout = Some(Layout::Line { jitter: 0.15 });
        assert!(matches!(generate_scene(&p, 1), Err(Error::InvalidParams(_))));
        p.layout = None;
        p.count = CountDist::Fixed(10);
        assert!(matches!(generate_scene(&p, 1), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn default_scenes_satisfy_invariants() {
        let params = GenerationParams::default();
        for seed in 0..300 {
            let s = generate_scene(&params, seed).unwrap();
            assert!(s.check_invariants(), "seed {seed}");
            let m = compute_morphostats(&s);
            // urban scenes stay out of the low density band
            assert_eq!(s.region_type.is_rural(), m.density_band() == crate::scene::types::DensityBand::Low, "seed {seed}");
        }
    }
}
