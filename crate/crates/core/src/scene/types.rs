use serde::{Deserialize, Serialize};
use std::fmt;

macro_rules! closed_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $s)] $var),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$var => $s),+ }
            }

            pub fn parse(s: &str) -> Option<$name> {
                match s { $($s => Some($name::$var),)+ _ => None }
            }

            pub fn index(self) -> usize {
                Self::ALL.iter().position(|v| *v == self).unwrap()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

closed_enum!(ObjectClass {
    Vehicle => "vehicle",
    Building => "building",
    StorageTank => "storage-tank",
    Ship => "ship",
    Plane => "plane",
});

closed_enum!(Color {
    Red => "red",
    White => "white",
    Gray => "gray",
    Blue => "blue",
    Green => "green",
    Dark => "dark",
});

closed_enum!(ShapeTag {
    Rectangular => "rectangular",
    Circular => "circular",
    Linear => "linear",
    LShaped => "L-shaped",
});

closed_enum!(RegionType {
    ParkingLot => "parking-lot",
    Residential => "residential",
    LogisticsHub => "logistics-hub",
    Port => "port",
    RuralField => "rural-field",
});

closed_enum!(ClusterLabel {
    Grid => "grid",
    Linear => "linear",
    Scattered => "scattered",
});

closed_enum!(
    /// Occupancy bands: sparse [0,0.25), moderate [0.25,0.6), heavy [0.6,0.9),
    /// near-saturation [0.9,1].
    OccupancyBand {
        Sparse => "sparse",
        Moderate => "moderate",
        Heavy => "heavy",
        NearSaturation => "near-saturation",
    }
);

closed_enum!(
    /// Density bands in objects per unit area: low [0,4), medium [4,12), high [12,inf).
    DensityBand {
        Low => "low",
        Medium => "medium",
        High => "high",
    }
);

closed_enum!(Category {
    Count => "count",
    Color => "color",
    Shape => "shape",
    Scene => "scene",
    Reason => "reason",
});

closed_enum!(Subset {
    Sft => "SFT",
    Rl => "RL",
    Eval => "EVAL",
});

impl ObjectClass {
    pub fn plural(self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "vehicles",
            ObjectClass::Building => "buildings",
            ObjectClass::StorageTank => "storage tanks",
            ObjectClass::Ship => "ships",
            ObjectClass::Plane => "planes",
        }
    }
}

impl RegionType {
    pub fn display_name(self) -> &'static str {
        match self {
            RegionType::ParkingLot => "parking lot",
            RegionType::Residential => "residential area",
            RegionType::LogisticsHub => "logistics hub",
            RegionType::Port => "port",
            RegionType::RuralField => "rural field",
        }
    }

    /// Urban/rural reading of the region used for scene questions.
    pub fn is_rural(self) -> bool {
        self == RegionType::RuralField
    }
}

pub const OCCUPANCY_EDGES: [f64; 3] = [0.25, 0.6, 0.9];
pub const DENSITY_EDGES: [f64; 2] = [4.0, 12.0];

impl OccupancyBand {
    pub fn of(ratio: f64) -> OccupancyBand {
        if ratio < OCCUPANCY_EDGES[0] {
            OccupancyBand::Sparse
        } else if ratio < OCCUPANCY_EDGES[1] {
            OccupancyBand::Moderate
        } else if ratio < OCCUPANCY_EDGES[2] {
            OccupancyBand::Heavy
        } else {
            OccupancyBand::NearSaturation
        }
    }
}

impl DensityBand {
    pub fn of(density: f64) -> DensityBand {
        if density < DENSITY_EDGES[0] {
            DensityBand::Low
        } else if density < DENSITY_EDGES[1] {
            DensityBand::Medium
        } else {
            DensityBand::High
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class_label: ObjectClass,
    pub center: [f64; 2],
    pub size: [f64; 2],
    pub orientation: f64,
    pub color: Color,
    pub shape_tag: ShapeTag,
}

impl SceneObject {
    pub fn is_valid(&self) -> bool {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        in_unit(self.center[0])
            && in_unit(self.center[1])
            && self.size.iter().all(|s| s.is_finite() && *s > 0.0)
            && (0.0..std::f64::consts::PI).contains(&self.orientation)
    }
}

/// A synthetic ground-truth world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub region_type: RegionType,
    pub area: f64,
    pub capacity: u32,
    pub seed: u64,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn count_of(&self, class: ObjectClass) -> u32 {
        self.objects.iter().filter(|o| o.class_label == class).count() as u32
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        self.objects.iter().map(|o| o.center).collect()
    }

    /// Unique most frequent color, `None` on ties or an empty scene.
    pub fn dominant_color(&self) -> Option<Color> {
        unique_mode(self.objects.iter().map(|o| o.color.index()), Color::ALL.len())
            .map(|i| Color::ALL[i])
    }

    pub fn dominant_shape(&self) -> Option<ShapeTag> {
        unique_mode(self.objects.iter().map(|o| o.shape_tag.index()), ShapeTag::ALL.len())
            .map(|i| ShapeTag::ALL[i])
    }

    pub fn check_invariants(&self) -> bool {
        self.capacity > 0
            && self.area.is_finite()
            && self.area > 0.0
            && self.objects.len() as u64 <= u64::from(self.capacity)
            && self.objects.iter().all(SceneObject::is_valid)
    }
}

fn unique_mode(values: impl Iterator<Item = usize>, n: usize) -> Option<usize> {
    let mut counts = vec![0usize; n];
    for v in values {
        counts[v] += 1;
    }
    let best = *counts.iter().max()?;
    if best == 0 || counts.iter().filter(|&&c| c == best).count() > 1 {
        return None;
    }
    counts.iter().position(|&c| c == best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_edges() {
        assert_eq!(OccupancyBand::of(0.1), OccupancyBand::Sparse);
        assert_eq!(OccupancyBand::of(0.25), OccupancyBand::Moderate);
        assert_eq!(OccupancyBand::of(0.6), OccupancyBand::Heavy);
        assert_eq!(OccupancyBand::of(0.9), OccupancyBand::NearSaturation);
        assert_eq!(OccupancyBand::of(1.0), OccupancyBand::NearSaturation);
        assert_eq!(DensityBand::of(3.99), DensityBand::Low);
        assert_eq!(DensityBand::of(4.0), DensityBand::Medium);
        assert_eq!(DensityBand::of(12.0), DensityBand::High);
    }

    #[test]
    fn enum_names_round_trip() {
        for c in ShapeTag::ALL {
            assert_eq!(ShapeTag::parse(c.as_str()), Some(*c));
            let json = serde_json::to_string(c).unwrap();
            assert_eq!(json, format!("\"{}\"", c.as_str()));
        }
        assert_eq!(serde_json::to_string(&Subset::Rl).unwrap(), "\"RL\"");
    }

    #[test]
    fn mode_ties_have_no_dominant() {
        assert_eq!(unique_mode([1, 1, 2].into_iter(), 3), Some(1));
        assert_eq!(unique_mode([1, 2].into_iter(), 3), None);
        assert_eq!(unique_mode(std::iter::empty(), 3), None);
    }
}
