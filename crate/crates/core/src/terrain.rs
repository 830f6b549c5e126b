//! Procedural generation of the 12 parametric terrain families and the
//! 10-level difficulty curriculum.
//!
//! Every patch is an 8x8 m heightfield at 0.04 m resolution with a flat
//! spawn platform at its center. Exactly one family-specific parameter is
//! modulated across the 10 levels; the per-family ranges live in
//! [`difficulty_range`] and are documented in the README table.

use crate::raster::HeightRaster;
use crate::{derive_seed, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Patch edge length (m).
pub const PATCH_SIZE: f64 = 8.0;
/// Grid resolution (m).
pub const RESOLUTION: f64 = 0.04;
/// Cells per axis: ceil(8 / 0.04) + 1.
pub const GRID: usize = 201;
/// Number of curriculum levels.
pub const LEVELS: u8 = 10;
/// Heights are clamped into [-ENVELOPE, ENVELOPE].
pub const ENVELOPE: f64 = 2.0;
/// Chebyshev radius of the flat spawn platform at the patch center.
pub const PLATFORM_RADIUS: f64 = 0.8;

/// The 12 terrain families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainFamily {
    Stairs,
    SlopesGaps,
    Pyramids,
    SlopedRough,
    SteppingStones,
    RandomObjects,
    TiltedBoxes,
    Rings,
    Pits,
    Beams,
    HoveringObjects,
    Pallets,
}

impl TerrainFamily {
    pub const ALL: [TerrainFamily; 12] = [
        TerrainFamily::Stairs,
        TerrainFamily::SlopesGaps,
        TerrainFamily::Pyramids,
        TerrainFamily::SlopedRough,
        TerrainFamily::SteppingStones,
        TerrainFamily::RandomObjects,
        TerrainFamily::TiltedBoxes,
        TerrainFamily::Rings,
        TerrainFamily::Pits,
        TerrainFamily::Beams,
        TerrainFamily::HoveringObjects,
        TerrainFamily::Pallets,
    ];

    /// Families where valid footholds are sparse.
    pub const SPARSE: [TerrainFamily; 4] = [
        TerrainFamily::SteppingStones,
        TerrainFamily::Beams,
        TerrainFamily::SlopesGaps,
        TerrainFamily::Pallets,
    ];

    /// Families with dense stepping locations.
    pub const DENSE: [TerrainFamily; 4] = [
        TerrainFamily::Stairs,
        TerrainFamily::Pits,
        TerrainFamily::SlopedRough,
        TerrainFamily::Rings,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TerrainFamily::Stairs => "stairs",
            TerrainFamily::SlopesGaps => "slopes_gaps",
            TerrainFamily::Pyramids => "pyramids",
            TerrainFamily::SlopedRough => "sloped_rough",
            TerrainFamily::SteppingStones => "stepping_stones",
            TerrainFamily::RandomObjects => "random_objects",
            TerrainFamily::TiltedBoxes => "tilted_boxes",
            TerrainFamily::Rings => "rings",
            TerrainFamily::Pits => "pits",
            TerrainFamily::Beams => "beams",
            TerrainFamily::HoveringObjects => "hovering_objects",
            TerrainFamily::Pallets => "pallets",
        }
    }

    pub fn from_name(name: &str) -> Result<TerrainFamily> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown terrain family `{name}`")))
    }

    fn index(&self) -> u64 {
        Self::ALL.iter().position(|f| f == self).unwrap() as u64
    }
}

/// Modulated difficulty parameter per family: (level-0 value, level-9 value).
///
/// The value interpolates linearly over the 10 levels. For `beams` the
/// parameter is the beam width and narrows as difficulty rises; for all
/// other families the parameter grows.
pub fn difficulty_range(family: TerrainFamily) -> (f64, f64) {
    match family {
        TerrainFamily::Stairs => (0.05, 0.25),         // step height (m)
        TerrainFamily::SlopesGaps => (0.10, 0.60),     // gap width (m)
        TerrainFamily::Pyramids => (0.15, 1.05),       // pyramid height (m)
        TerrainFamily::SlopedRough => (0.05, 0.40),    // slope grade (m/m)
        TerrainFamily::SteppingStones => (0.05, 0.42), // stone spacing (m)
        TerrainFamily::RandomObjects => (0.05, 0.35),  // max object height (m)
        TerrainFamily::TiltedBoxes => (0.05, 0.35),    // top tilt grade (m/m)
        TerrainFamily::Rings => (0.05, 0.35),          // ridge height (m)
        TerrainFamily::Pits => (0.10, 1.00),           // pit depth (m)
        TerrainFamily::Beams => (0.40, 0.14),          // beam width (m)
        TerrainFamily::HoveringObjects => (0.10, 0.50),// max plate height (m)
        TerrainFamily::Pallets => (0.05, 0.45),        // pallet gap (m)
    }
}

fn difficulty(family: TerrainFamily, level: u8) -> f64 {
    let (lo, hi) = difficulty_range(family);
    lo + (hi - lo) * level as f64 / (LEVELS - 1) as f64
}

/// One generated terrain patch.
#[derive(Clone, Debug)]
pub struct TerrainPatch {
    pub family: TerrainFamily,
    pub level: u8,
    pub variant_seed: u64,
    pub raster: HeightRaster,
}

/// Per-agent curriculum position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurriculumState {
    pub family: TerrainFamily,
    pub level: u8,
}

/// Episode summary consumed by the curriculum rule.
#[derive(Clone, Copy, Debug)]
pub struct AgentResult {
    pub reached_border: bool,
    pub traversed_fraction: f64,
}

/// Promotion on border crossing, demotion below a quarter of the patch,
/// clamped to the 10 levels. The demotion rule is artifact hygiene, not a
/// behavior of the reference setup.
pub fn curriculum_update(state: CurriculumState, result: AgentResult) -> CurriculumState {
    debug_assert!((0.0..=1.0).contains(&result.traversed_fraction));
    let level = if result.reached_border {
        (state.level + 1).min(LEVELS - 1)
    } else if result.traversed_fraction < 0.25 {
        state.level.saturating_sub(1)
    } else {
        state.level
    };
    CurriculumState { family: state.family, level }
}

/// Mixes two cell indices into the patch stream for per-feature jitter that
/// does not depend on rasterization order.
fn cell_hash(seed: u64, i: i64, j: i64) -> u64 {
    derive_seed(seed, (i as u64).wrapping_mul(0x1000_0000_1) ^ (j as u64))
}

/// Uniform in [0, 1) from a hash.
fn hash_unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

struct Rect {
    cx: f64,
    cy: f64,
    half_a: f64,
    half_b: f64,
    yaw: f64,
    height: f64,
}

impl Rect {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let (s, c) = self.yaw.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        u.abs() <= self.half_a && v.abs() <= self.half_b
    }
}

/// Generates one patch. Bit-identical for identical `(family, level,
/// variant_seed)`; the layout depends only on `(family, variant_seed)` so
/// neighboring levels differ purely in the modulated parameter.
pub fn generate_patch(family: TerrainFamily, level: u8, variant_seed: u64) -> TerrainPatch {
    assert!(level < LEVELS, "terrain level {level} out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(variant_seed, family.index()));
    let p = difficulty(family, level);
    let half = PATCH_SIZE / 2.0;
    let mut raster =
        HeightRaster::filled(GRID, GRID, RESOLUTION, (-half, -half), 0.0);

    let mut fill = |f: &mut dyn FnMut(f64, f64) -> f64| {
        for r in 0..GRID {
            for c in 0..GRID {
                let (x, y) = (-half + c as f64 * RESOLUTION, -half + r as f64 * RESOLUTION);
                let cheb = x.abs().max(y.abs());
                let h = if cheb <= PLATFORM_RADIUS { platform_height(family, p) } else { f(x, y) };
                raster.set(r, c, h.clamp(-ENVELOPE, ENVELOPE) as f32);
            }
        }
    };

    match family {
        TerrainFamily::Stairs => {
            let run = 0.31;
            fill(&mut |x, y| {
                let cheb = x.abs().max(y.abs());
                let ring = ((cheb - 0.93) / run).ceil().max(0.0);
                (-ring * p).max(-1.5)
            });
        }
        TerrainFamily::SlopesGaps => {
            let grade = 0.12;
            fill(&mut |x, _y| {
                let ax = x.abs();
                let surface = grade * (ax - PLATFORM_RADIUS).max(0.0);
                let in_gap =
                    (ax >= 1.6 && ax < 1.6 + p) || (ax >= 2.8 && ax < 2.8 + p);
                if in_gap {
                    surface - 1.0
                } else {
                    surface
                }
            });
        }
        TerrainFamily::Pyramids => {
            fill(&mut |x, y| {
                let cheb = x.abs().max(y.abs());
                if cheb >= 3.0 {
                    0.0
                } else {
                    p * ((3.0 - cheb) / (3.0 - PLATFORM_RADIUS)).clamp(0.0, 1.0)
                }
            });
        }
        TerrainFamily::SlopedRough => {
            let amp = 0.02 + 0.04 * level as f64 / (LEVELS - 1) as f64;
            let seed = rng.gen::<u64>();
            fill(&mut |x, y| {
                let cheb = x.abs().max(y.abs());
                let base = -p * (cheb - PLATFORM_RADIUS).max(0.0);
                let i = ((x + half) / RESOLUTION).round() as i64;
                let j = ((y + half) / RESOLUTION).round() as i64;
                base + amp * (2.0 * hash_unit(cell_hash(seed, i, j)) - 1.0)
            });
        }
        TerrainFamily::SteppingStones => {
            let stone = 0.30;
            let pitch = stone + p;
            let seed = rng.gen::<u64>();
            fill(&mut |x, y| {
                let ix = ((x + half) / pitch).floor();
                let iy = ((y + half) / pitch).floor();
                let fx = (x + half) - ix * pitch;
                let fy = (y + half) - iy * pitch;
                if fx < stone && fy < stone {
                    0.03 * (2.0 * hash_unit(cell_hash(seed, ix as i64, iy as i64)) - 1.0)
                } else {
                    -0.5
                }
            });
        }
        TerrainFamily::RandomObjects | TerrainFamily::HoveringObjects => {
            let (count, size_lo, size_hi) = if family == TerrainFamily::RandomObjects {
                (24, 0.2, 0.5)
            } else {
                (16, 0.15, 0.3)
            };
            let mut rects = Vec::with_capacity(count);
            while rects.len() < count {
                let cx: f64 = rng.gen_range(-3.5..3.5);
                let cy: f64 = rng.gen_range(-3.5..3.5);
                let half_a = rng.gen_range(size_lo..size_hi);
                let half_b = rng.gen_range(size_lo..size_hi);
                let yaw = rng.gen_range(0.0..std::f64::consts::PI);
                let height = p * rng.gen_range(0.4..1.0);
                if cx.abs().max(cy.abs()) < PLATFORM_RADIUS + 0.5 {
                    continue;
                }
                rects.push(Rect { cx, cy, half_a, half_b, yaw, height });
            }
            fill(&mut |x, y| {
                rects
                    .iter()
                    .filter(|rc| rc.contains(x, y))
                    .map(|rc| rc.height)
                    .fold(0.0, f64::max)
            });
        }
        TerrainFamily::TiltedBoxes => {
            // 8x8 grid of 1 m boxes, each with a random base height and a
            // tilted top whose grade is the modulated parameter.
            let mut boxes = Vec::with_capacity(64);
            for _ in 0..64 {
                let base: f64 = rng.gen_range(0.0..0.10);
                let frac: f64 = rng.gen_range(0.5..1.0);
                let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                boxes.push((base, frac, theta));
            }
            fill(&mut |x, y| {
                let bi = ((x + half).floor() as usize).min(7);
                let bj = ((y + half).floor() as usize).min(7);
                let (base, frac, theta) = boxes[bj * 8 + bi];
                let cx = -half + bi as f64 + 0.5;
                let cy = -half + bj as f64 + 0.5;
                let t = p * frac;
                let s = ((x - cx) * theta.cos() + (y - cy) * theta.sin()).clamp(-0.5, 0.5);
                base + t * s
            });
        }
        TerrainFamily::Rings => {
            fill(&mut |x, y| {
                let rho = (x * x + y * y).sqrt();
                let on_ridge = [1.5, 2.5, 3.5].iter().any(|r| (rho - r).abs() <= 0.125);
                if on_ridge {
                    p
                } else {
                    0.0
                }
            });
        }
        TerrainFamily::Pits => {
            fill(&mut |x, y| {
                let cheb = x.abs().max(y.abs());
                if cheb <= 2.0 {
                    -p
                } else {
                    0.0
                }
            });
        }
        TerrainFamily::Beams => {
            fill(&mut |x, y| {
                let cheb = x.abs().max(y.abs());
                if cheb >= 3.6 {
                    return 0.0; // border ring
                }
                let on_x_beam = y.abs() <= p / 2.0;
                let on_y_beam = x.abs() <= p / 2.0;
                if on_x_beam || on_y_beam {
                    0.0
                } else {
                    -0.5
                }
            });
        }
        TerrainFamily::Pallets => {
            let (pal_x, pal_y, deck) = (1.2, 0.8, 0.144);
            let pitch_x = pal_x + p;
            let pitch_y = pal_y + p;
            let seed = rng.gen::<u64>();
            fill(&mut |x, y| {
                let ix = ((x + half) / pitch_x).floor();
                let iy = ((y + half) / pitch_y).floor();
                let fx = (x + half) - ix * pitch_x;
                let fy = (y + half) - iy * pitch_y;
                if fx < pal_x && fy < pal_y {
                    let stack = 3.0 + (cell_hash(seed, ix as i64, iy as i64) % 2) as f64;
                    -0.5 + stack * deck
                } else {
                    -0.5
                }
            });
        }
    }

    TerrainPatch { family, level, variant_seed, raster }
}

fn platform_height(family: TerrainFamily, p: f64) -> f64 {
    match family {
        TerrainFamily::Pyramids => p,
        TerrainFamily::Pits => -p,
        _ => 0.0,
    }
}

/// A flat 8x8 m patch at height zero (used by the smoke-training setup).
pub fn flat_patch() -> HeightRaster {
    HeightRaster::filled(GRID, GRID, RESOLUTION, (-PATCH_SIZE / 2.0, -PATCH_SIZE / 2.0), 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Max height jump between adjacent cells along the center row.
    fn max_step_along_center(raster: &HeightRaster) -> f64 {
        let r = GRID / 2;
        (1..GRID)
            .map(|c| (raster.get(r, c) as f64 - raster.get(r, c - 1) as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Longest run of cells at least 0.5 m below the local surface along the
    /// center row, in cells.
    fn max_gap_cells(raster: &HeightRaster) -> usize {
        let r = GRID / 2;
        let mut best = 0;
        let mut run = 0;
        for c in 0..GRID {
            let (x, _) = raster.cell_center(r, c);
            let surface = 0.12 * (x.abs() - PLATFORM_RADIUS).max(0.0);
            if (raster.get(r, c) as f64) < surface - 0.5 {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        best
    }

    #[test]
    fn stairs_level0_step_height_is_range_minimum() {
        let patch = generate_patch(TerrainFamily::Stairs, 0, 7);
        let step = max_step_along_center(&patch.raster);
        assert!((step - 0.05).abs() < 1e-6, "step={step}");
    }

    #[test]
    fn gap_width_grows_with_level() {
        let lo = generate_patch(TerrainFamily::SlopesGaps, 0, 3);
        let hi = generate_patch(TerrainFamily::SlopesGaps, 9, 3);
        assert!(max_gap_cells(&hi.raster) > max_gap_cells(&lo.raster));
    }

    #[test]
    fn generation_is_deterministic() {
        for family in TerrainFamily::ALL {
            let a = generate_patch(family, 4, 99);
            let b = generate_patch(family, 4, 99);
            assert_eq!(a.raster, b.raster, "family {family:?} not reproducible");
        }
    }

    #[test]
    fn one_hundred_twenty_distinct_pairs() {
        let mut pairs = std::collections::HashSet::new();
        for family in TerrainFamily::ALL {
            for level in 0..LEVELS {
                pairs.insert((family, level));
            }
        }
        assert_eq!(pairs.len(), 120);
    }

    #[test]
    fn grid_dimensions_match_patch_size() {
        assert_eq!(GRID, (PATCH_SIZE / RESOLUTION).ceil() as usize + 1);
        let patch = generate_patch(TerrainFamily::Rings, 0, 0);
        assert_eq!(patch.raster.rows(), GRID);
        assert_eq!(patch.raster.cols(), GRID);
    }

    #[test]
    fn curriculum_rules() {
        let s = CurriculumState { family: TerrainFamily::Stairs, level: 3 };
        let up = curriculum_update(s, AgentResult { reached_border: true, traversed_fraction: 1.0 });
        assert_eq!(up.level, 4);
        let s0 = CurriculumState { family: TerrainFamily::Stairs, level: 0 };
        let down =
            curriculum_update(s0, AgentResult { reached_border: false, traversed_fraction: 0.1 });
        assert_eq!(down.level, 0);
        let s9 = CurriculumState { family: TerrainFamily::Stairs, level: 9 };
        let top = curriculum_update(s9, AgentResult { reached_border: true, traversed_fraction: 1.0 });
        assert_eq!(top.level, 9);
        let hold =
            curriculum_update(s, AgentResult { reached_border: false, traversed_fraction: 0.5 });
        assert_eq!(hold.level, 3);
    }

    #[test]
    fn unknown_family_is_config_error() {
        assert!(TerrainFamily::from_name("lava").is_err());
        assert_eq!(TerrainFamily::from_name("beams").unwrap(), TerrainFamily::Beams);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn heights_stay_inside_envelope(
            family_idx in 0usize..12,
            level in 0u8..10,
            seed in 0u64..1000,
        ) {
            let patch = generate_patch(TerrainFamily::ALL[family_idx], level, seed);
            for &h in patch.raster.data() {
                prop_assert!(h.is_finite());
                prop_assert!((-2.0..=2.0).contains(&(h as f64)));
            }
        }
    }
}
