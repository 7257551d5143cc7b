//! Turns dense LiDAR sweeps into radar-like clouds.
//!
//! The transformation is a fixed chain of independently neutralizable stages:
//! forward field-of-view crop, elevation compression toward the cloud's mean
//! height, polar (range/azimuth) measurement noise, and subsampling to a
//! per-frame point budget drawn from the radar frame-size envelope.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Point, PointCloud};

/// Ranges below this are clamped when weighting by inverse square range.
const MIN_WEIGHT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeepProbabilityMode {
    Uniform,
    RangeWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarizationConfig {
    pub target_points_min: usize,
    pub target_points_max: usize,
    pub range_noise_sigma: f64,
    pub azimuth_noise_sigma: f64,
    pub elevation_scale: f64,
    pub fov_azimuth_half_angle: f64,
    pub keep_probability_mode: KeepProbabilityMode,
    pub seed: u64,
}

impl Default for RadarizationConfig {
    fn default() -> Self {
        Self {
            target_points_min: 1000,
            target_points_max: 10000,
            range_noise_sigma: 0.15,
            azimuth_noise_sigma: 0.005,
            elevation_scale: 0.25,
            fov_azimuth_half_angle: 1.05,
            keep_probability_mode: KeepProbabilityMode::Uniform,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid radarization config: {0}")]
pub struct ConfigError(pub String);

impl RadarizationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.target_points_min == 0 || self.target_points_min > self.target_points_max {
            return Err(ConfigError("need 0 < target_points_min <= target_points_max".into()));
        }
        if !(self.range_noise_sigma >= 0.0 && self.azimuth_noise_sigma >= 0.0) {
            return Err(ConfigError("noise sigmas must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.elevation_scale) {
            return Err(ConfigError("elevation_scale must lie in [0, 1]".into()));
        }
        if self.fov_azimuth_half_angle.is_nan() || self.fov_azimuth_half_angle < 0.0 {
            return Err(ConfigError("fov_azimuth_half_angle must be >= 0".into()));
        }
        Ok(())
    }
}

/// Keeps points with `|atan2(y, x)| <= half_angle`.
pub fn crop_fov(cloud: &PointCloud, half_angle: f64) -> PointCloud {
    if half_angle >= std::f64::consts::PI {
        return cloud.clone();
    }
    PointCloud {
        frame_id: cloud.frame_id.clone(),
        points: cloud.points.iter().copied().filter(|p| p.y.atan2(p.x).abs() <= half_angle).collect(),
    }
}

/// Pulls heights toward the cloud mean: `z <- mean + scale * (z - mean)`.
pub fn compress_elevation(cloud: &PointCloud, elevation_scale: f64) -> PointCloud {
    if elevation_scale == 1.0 || cloud.is_empty() {
        return cloud.clone();
    }
    let mean = cloud.points.iter().map(|p| p.z).sum::<f64>() / cloud.len() as f64;
    PointCloud {
        frame_id: cloud.frame_id.clone(),
        points: cloud
            .points
            .iter()
            .map(|p| Point { z: mean + elevation_scale * (p.z - mean), ..*p })
            .collect(),
    }
}

/// Shifts a point's horizontal range by `dr` and azimuth by `daz`, keeping z.
/// Range is clamped at zero.
pub fn perturb_polar(p: &Point, dr: f64, daz: f64) -> Point {
    if dr == 0.0 && daz == 0.0 {
        return *p;
    }
    let range = p.x.hypot(p.y);
    let az = p.y.atan2(p.x);
    let r = (range + dr).max(0.0);
    let (s, c) = (az + daz).sin_cos();
    Point { x: r * c, y: r * s, ..*p }
}

pub fn inject_sensor_noise<R: Rng + ?Sized>(
    cloud: &PointCloud,
    range_sigma: f64,
    azimuth_sigma: f64,
    rng: &mut R,
) -> PointCloud {
    if range_sigma == 0.0 && azimuth_sigma == 0.0 {
        return cloud.clone();
    }
    let nr = Normal::new(0.0, range_sigma).expect("sigma validated");
    let na = Normal::new(0.0, azimuth_sigma).expect("sigma validated");
    PointCloud {
        frame_id: cloud.frame_id.clone(),
        points: cloud
            .points
            .iter()
            .map(|p| {
                let dr = nr.sample(rng);
                let da = na.sample(rng);
                perturb_polar(p, dr, da)
            })
            .collect(),
    }
}

/// Indices (ascending) of the subsample kept by [`sparsify`].
pub fn sparsify_indices<R: Rng + ?Sized>(
    cloud: &PointCloud,
    target_count: usize,
    mode: KeepProbabilityMode,
    rng: &mut R,
) -> Vec<usize> {
    let n = cloud.len();
    if n <= target_count {
        return (0..n).collect();
    }
    let mut idx = match mode {
        KeepProbabilityMode::Uniform => rand::seq::index::sample(rng, n, target_count).into_vec(),
        KeepProbabilityMode::RangeWeighted => {
            // Weighted sampling without replacement (Efraimidis-Spirakis):
            // key = ln(u) / w with w = 1 / r^2, keep the largest keys.
            let mut keyed: Vec<(f64, usize)> = cloud
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let r = p.x.hypot(p.y).hypot(p.z).max(MIN_WEIGHT_RANGE);
                    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                    (u.ln() * r * r, i)
                })
                .collect();
            keyed.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            keyed.truncate(target_count);
            keyed.into_iter().map(|(_, i)| i).collect()
        }
    };
    idx.sort_unstable();
    idx
}

/// Subsamples without replacement to exactly `target_count` points; input
/// order is preserved. Clouds at or below the target pass through.
pub fn sparsify<R: Rng + ?Sized>(
    cloud: &PointCloud,
    target_count: usize,
    mode: KeepProbabilityMode,
    rng: &mut R,
) -> PointCloud {
    if cloud.len() <= target_count {
        return cloud.clone();
    }
    cloud.select(&sparsify_indices(cloud, target_count, mode, rng))
}

/// Full chain: FoV crop, elevation compression, polar noise, sparsification.
pub fn radarize<R: Rng + ?Sized>(cloud: &PointCloud, config: &RadarizationConfig, rng: &mut R) -> PointCloud {
    let cropped = crop_fov(cloud, config.fov_azimuth_half_angle);
    let flattened = compress_elevation(&cropped, config.elevation_scale);
    let noisy = inject_sensor_noise(&flattened, config.range_noise_sigma, config.azimuth_noise_sigma, rng);
    let target = rng.random_range(config.target_points_min..=config.target_points_max);
    sparsify(&noisy, target, config.keep_probability_mode, rng)
}
