//! Elevation-map access with noise and drift overlays, plus the per-leg
//! line height scan.
//!
//! Map noise approximates a Laplace distribution with two nested uniforms:
//! a bound is drawn from `U(0, h_max)` and every cell is then drawn from
//! `U(-bound, bound)`. Drift works the same way: one map-wide offset plus
//! one offset per foot, summed. The noise field is frozen between resample
//! events (the environment resamples every 8 s).

use crate::raster::HeightRaster;
use rand::Rng;

/// Upper bound of the noise-bound distribution (m).
pub const NOISE_MAX: f64 = 0.2;
/// Upper bound of the drift-bound distribution (m).
pub const DRIFT_MAX: f64 = 0.2;
/// Seconds between noise/drift resamples.
pub const RESAMPLE_INTERVAL: f64 = 8.0;

/// Which overlay a map query sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// Ground-truth heights.
    True,
    /// Heights plus the frozen noise field plus the total drift of one foot.
    NoisyDrifted { foot: usize },
}

/// Frozen noise field and drift offsets.
#[derive(Clone, Debug)]
pub struct NoiseState {
    pub noise_bound: f64,
    pub drift_bound: f64,
    /// Per-cell noise, same grid as the underlying raster.
    pub field: Vec<f32>,
    /// Map-wide drift offset.
    pub map_drift: f64,
    /// Per-foot drift offsets.
    pub foot_drift: [f64; 4],
    pub last_resample_time: f64,
}

impl NoiseState {
    pub fn zeroed(cells: usize) -> Self {
        Self {
            noise_bound: 0.0,
            drift_bound: 0.0,
            field: vec![0.0; cells],
            map_drift: 0.0,
            foot_drift: [0.0; 4],
            last_resample_time: 0.0,
        }
    }

    /// Total drift seen by a foot: map drift plus that foot's own offset.
    pub fn total_drift(&self, foot: usize) -> f64 {
        self.map_drift + self.foot_drift[foot]
    }
}

/// Heightfield plus overlays. Planner queries use `True` mode during
/// training; policy observations always go through `NoisyDrifted`.
#[derive(Clone, Debug)]
pub struct ElevationMap {
    pub raster: HeightRaster,
    pub noise: NoiseState,
    /// Extra map-wide offset used by the drift evaluation sweep; it shifts
    /// every drift-aware query and, when the sweep asks for it, the planner
    /// input as well.
    pub eval_drift: f64,
}

/// Result of a height query.
#[derive(Clone, Copy, Debug)]
pub struct HeightSample {
    pub height: f64,
    /// False when the query point fell outside the raster and was clamped
    /// to the edge.
    pub in_bounds: bool,
}

impl ElevationMap {
    pub fn new(raster: HeightRaster) -> Self {
        let cells = raster.rows() * raster.cols();
        Self { raster, noise: NoiseState::zeroed(cells), eval_drift: 0.0 }
    }

    /// Resamples the noise field and the five drift values.
    pub fn resample_noise<R: Rng>(&mut self, rng: &mut R, time: f64) {
        let noise_bound = rng.gen_range(0.0..NOISE_MAX);
        for cell in self.noise.field.iter_mut() {
            *cell = if noise_bound > 0.0 {
                rng.gen_range(-noise_bound..noise_bound) as f32
            } else {
                0.0
            };
        }
        let drift_bound = rng.gen_range(0.0..DRIFT_MAX);
        let mut draw = |bound: f64| if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 };
        self.noise.map_drift = draw(drift_bound);
        for foot in 0..4 {
            self.noise.foot_drift[foot] = draw(drift_bound);
        }
        self.noise.noise_bound = noise_bound;
        self.noise.drift_bound = drift_bound;
        self.noise.last_resample_time = time;
    }

    /// Clears noise and per-foot drift (used by evaluation setups).
    pub fn zero_noise(&mut self) {
        let cells = self.raster.rows() * self.raster.cols();
        self.noise = NoiseState::zeroed(cells);
    }

    /// Bilinear height at world xy under the requested overlay.
    /// Out-of-bounds queries clamp to the nearest edge and flag it.
    pub fn sample_height(&self, x: f64, y: f64, mode: SampleMode) -> HeightSample {
        let (true_h, in_bounds) = self.raster.sample_bilinear(x, y);
        match mode {
            SampleMode::True => HeightSample { height: true_h, in_bounds },
            SampleMode::NoisyDrifted { foot } => {
                let n = self.sample_noise_bilinear(x, y);
                let height =
                    true_h + n + self.noise.total_drift(foot) + self.eval_drift;
                HeightSample { height, in_bounds }
            }
        }
    }

    fn sample_noise_bilinear(&self, x: f64, y: f64) -> f64 {
        let r = &self.raster;
        let gx = ((x - r.origin_x) / r.resolution).clamp(0.0, (r.cols() - 1) as f64);
        let gy = ((y - r.origin_y) / r.resolution).clamp(0.0, (r.rows() - 1) as f64);
        let c0 = gx.floor() as usize;
        let r0 = gy.floor() as usize;
        let c1 = (c0 + 1).min(r.cols() - 1);
        let r1 = (r0 + 1).min(r.rows() - 1);
        let tx = gx - c0 as f64;
        let ty = gy - r0 as f64;
        let at = |rr: usize, cc: usize| self.noise.field[rr * r.cols() + cc] as f64;
        at(r0, c0) * (1.0 - tx) * (1.0 - ty)
            + at(r0, c1) * tx * (1.0 - ty)
            + at(r1, c0) * (1.0 - tx) * ty
            + at(r1, c1) * tx * ty
    }

    /// Ten evenly spaced noisy height samples along the segment from the
    /// foot to its target foothold, endpoints included.
    pub fn height_scan(
        &self,
        foot_xy: (f64, f64),
        foothold_xy: (f64, f64),
        foot: usize,
    ) -> [f64; 10] {
        let mut out = [0.0; 10];
        for (k, slot) in out.iter_mut().enumerate() {
            let t = k as f64 / 9.0;
            let x = foot_xy.0 + (foothold_xy.0 - foot_xy.0) * t;
            let y = foot_xy.1 + (foothold_xy.1 - foot_xy.1) * t;
            *slot = self.sample_height(x, y, SampleMode::NoisyDrifted { foot }).height;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_map(height: f32) -> ElevationMap {
        let mut raster = terrain::flat_patch();
        for r in 0..raster.rows() {
            for c in 0..raster.cols() {
                raster.set(r, c, height);
            }
        }
        ElevationMap::new(raster)
    }

    #[test]
    fn flat_map_samples_constant() {
        let map = flat_map(0.3);
        for &(x, y) in &[(0.0, 0.0), (1.23, -2.4), (3.99, 3.99)] {
            let s = map.sample_height(x, y, SampleMode::True);
            assert!((s.height - 0.3f32 as f64).abs() < 1e-12);
            assert!(s.in_bounds);
        }
    }

    #[test]
    fn cell_center_returns_stored_value() {
        let mut map = flat_map(0.0);
        map.raster.set(100, 120, 0.77);
        let (x, y) = map.raster.cell_center(100, 120);
        let s = map.sample_height(x, y, SampleMode::True);
        assert_eq!(s.height, 0.77f32 as f64);
    }

    #[test]
    fn midpoint_is_average_of_neighbors() {
        let mut map = flat_map(0.0);
        map.raster.set(100, 100, 0.2);
        map.raster.set(100, 101, 0.3);
        let (x0, y0) = map.raster.cell_center(100, 100);
        let s = map.sample_height(x0 + terrain::RESOLUTION / 2.0, y0, SampleMode::True);
        let expect = (0.2f32 as f64 + 0.3f32 as f64) / 2.0;
        assert!((s.height - expect).abs() < 1e-9);
    }

    #[test]
    fn zero_bound_gives_zero_noise_field() {
        let mut map = flat_map(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        map.resample_noise(&mut rng, 0.0);
        // Force the degenerate case directly.
        map.noise.field.iter_mut().for_each(|c| *c = 0.0);
        map.noise.noise_bound = 0.0;
        map.noise.map_drift = 0.0;
        map.noise.foot_drift = [0.0; 4];
        let a = map.sample_height(0.5, 0.5, SampleMode::True).height;
        let b = map.sample_height(0.5, 0.5, SampleMode::NoisyDrifted { foot: 2 }).height;
        assert_eq!(a, b);
    }

    #[test]
    fn nested_uniform_noise_std_matches_oracle() {
        // Var = E[bound^2]/3 = (NOISE_MAX^2/3)/3; std = NOISE_MAX/3.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sum_sq = 0.0;
        let n = 1_000_000;
        for _ in 0..n {
            let bound = rng.gen_range(0.0..NOISE_MAX);
            let v: f64 = if bound > 0.0 { rng.gen_range(-bound..bound) } else { 0.0 };
            sum_sq += v * v;
        }
        let std = (sum_sq / n as f64).sqrt();
        let oracle = NOISE_MAX / 3.0; // 0.0667 m
        assert!((std - oracle).abs() / oracle < 0.02, "std={std} oracle={oracle}");

        // The map sampler must reproduce the same distribution. The bound is
        // drawn once per resample, so the estimator needs many rounds.
        let mut map = flat_map(0.0);
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for round in 0..600 {
            map.resample_noise(&mut rng, round as f64 * RESAMPLE_INTERVAL);
            for &c in map.noise.field.iter().take(2000) {
                sum_sq += (c as f64) * (c as f64);
                count += 1;
            }
        }
        let std = (sum_sq / count as f64).sqrt();
        assert!((std - oracle).abs() / oracle < 0.05, "map std={std} oracle={oracle}");
    }

    #[test]
    fn per_foot_drift_symmetric_and_mean_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut map = flat_map(0.0);
        let mut sum = 0.0;
        let mut sum_abs = 0.0;
        let n = 200_000;
        for i in 0..n {
            map.resample_noise(&mut rng, i as f64);
            for foot in 0..4 {
                let d = map.noise.total_drift(foot);
                sum += d;
                sum_abs += d.abs();
            }
        }
        let count = (n * 4) as f64;
        let mean = sum / count;
        let mean_abs = sum_abs / count;
        // Sum of two iid U(-b, b) is triangular with E|.| = 2b/3; averaged
        // over b ~ U(0, DRIFT_MAX) this gives DRIFT_MAX/3.
        let oracle = DRIFT_MAX / 3.0;
        assert!(mean.abs() < 0.001, "mean={mean}");
        assert!((mean_abs - oracle).abs() / oracle < 0.02, "mean_abs={mean_abs} oracle={oracle}");
    }

    #[test]
    fn height_scan_on_flat_ground_is_zero() {
        let map = flat_map(0.0);
        let scan = map.height_scan((0.4, 0.2), (0.4, 0.2), 0);
        assert_eq!(scan, [0.0; 10]);
    }

    #[test]
    fn height_scan_on_ramp_is_linear() {
        // Build a ramp: h = 0.1 * x.
        let mut map = flat_map(0.0);
        for r in 0..map.raster.rows() {
            for c in 0..map.raster.cols() {
                let (x, _) = map.raster.cell_center(r, c);
                map.raster.set(r, c, (0.1 * x) as f32);
            }
        }
        let scan = map.height_scan((0.0, 0.0), (0.9, 0.0), 1);
        for (k, h) in scan.iter().enumerate() {
            let x = 0.9 * k as f64 / 9.0;
            assert!((h - 0.1 * x).abs() < 1e-6, "k={k} h={h}");
        }
    }

    #[test]
    fn zero_noise_scan_equals_true_mode() {
        let mut map = flat_map(0.0);
        for r in 0..map.raster.rows() {
            for c in 0..map.raster.cols() {
                let (x, y) = map.raster.cell_center(r, c);
                map.raster.set(r, c, (0.05 * x - 0.02 * y) as f32);
            }
        }
        let (foot, hold) = ((-0.3, 0.4), (0.5, -0.2));
        let scan = map.height_scan(foot, hold, 3);
        for (k, h) in scan.iter().enumerate() {
            let t = k as f64 / 9.0;
            let x = foot.0 + (hold.0 - foot.0) * t;
            let y = foot.1 + (hold.1 - foot.1) * t;
            let truth = map.sample_height(x, y, SampleMode::True).height;
            assert_eq!(*h, truth);
        }
    }

    #[test]
    fn noise_field_is_frozen_between_resamples() {
        let mut map = flat_map(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        map.resample_noise(&mut rng, 0.0);
        let snapshot = map.noise.field.clone();
        // Queries do not mutate the field.
        for _ in 0..100 {
            map.sample_height(1.0, 1.0, SampleMode::NoisyDrifted { foot: 0 });
        }
        assert_eq!(snapshot, map.noise.field);
        assert_eq!(map.noise.last_resample_time, 0.0);
    }

    #[test]
    fn four_legs_scan_forty_values() {
        let map = flat_map(0.0);
        let total: usize =
            (0..4).map(|f| map.height_scan((0.0, 0.0), (0.3, 0.0), f).len()).sum();
        assert_eq!(total, 40);
    }
}
