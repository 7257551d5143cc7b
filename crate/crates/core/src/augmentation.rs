//! Training-time augmentation with label-consistent geometry.
//!
//! Thirteen augmentations, each gated by its own probability: flip-x,
//! flip-y, global z-rotation, global x/y translation, random scaling,
//! sample drop, global noise, Gaussian point perturbation, rotate
//! perturbation, jitter, ground-truth pasting and per-object noise.
//! The pipeline runs them in a fixed order (see [`apply_pipeline`]).

use std::collections::HashSet;
use std::f64::consts::FRAC_PI_4;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Frame, FrameLabel, GroundTruthDatabase};
use crate::geometry::{
    normalize_angle, points_in_box, rotated_bev_iou, transform_frame, OrientedBox3D, Point, PointCloud,
};

pub use crate::geometry::SimilarityTransform;

/// Resampling budget per object before its move is skipped.
pub const OBJECT_NOISE_ATTEMPTS: usize = 10;
/// Jitter offsets are clipped to this many sigmas per axis.
pub const JITTER_CLIP_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationProbabilities {
    pub flip_x: f64,
    pub flip_y: f64,
    pub rotation: f64,
    pub translation_x: f64,
    pub translation_y: f64,
    pub scaling: f64,
    pub sample_drop: f64,
    pub global_noise: f64,
    pub point_perturb: f64,
    pub rotate_perturb: f64,
    pub jitter: f64,
    pub gt_sampling: f64,
    pub object_noise: f64,
}

impl Default for AugmentationProbabilities {
    fn default() -> Self {
        Self {
            flip_x: 0.5,
            flip_y: 0.5,
            rotation: 1.0,
            translation_x: 0.5,
            translation_y: 0.5,
            scaling: 1.0,
            sample_drop: 0.5,
            global_noise: 0.5,
            point_perturb: 0.5,
            rotate_perturb: 0.5,
            jitter: 0.5,
            gt_sampling: 0.5,
            object_noise: 0.5,
        }
    }
}

impl AugmentationProbabilities {
    pub fn all(p: f64) -> Self {
        Self {
            flip_x: p,
            flip_y: p,
            rotation: p,
            translation_x: p,
            translation_y: p,
            scaling: p,
            sample_drop: p,
            global_noise: p,
            point_perturb: p,
            rotate_perturb: p,
            jitter: p,
            gt_sampling: p,
            object_noise: p,
        }
    }

    fn values(&self) -> [f64; 13] {
        [
            self.flip_x,
            self.flip_y,
            self.rotation,
            self.translation_x,
            self.translation_y,
            self.scaling,
            self.sample_drop,
            self.global_noise,
            self.point_perturb,
            self.rotate_perturb,
            self.jitter,
            self.gt_sampling,
            self.object_noise,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub probabilities: AugmentationProbabilities,
    pub rotation_range: [f64; 2],
    pub scale_range: [f64; 2],
    pub translation_sigma: f64,
    pub sample_drop_ratio_range: [f64; 2],
    pub global_noise_sigma: f64,
    pub point_perturb_sigma: f64,
    pub jitter_sigma: f64,
    pub rotate_perturb_sigma: f64,
    pub object_noise_rotation_sigma: f64,
    pub object_noise_translation_sigma: f64,
    pub gt_sample_max_per_class: usize,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            probabilities: AugmentationProbabilities::default(),
            rotation_range: [-FRAC_PI_4, FRAC_PI_4],
            scale_range: [0.95, 1.05],
            translation_sigma: 0.5,
            sample_drop_ratio_range: [0.0, 0.3],
            global_noise_sigma: 0.05,
            point_perturb_sigma: 0.02,
            jitter_sigma: 0.01,
            rotate_perturb_sigma: 0.02,
            object_noise_rotation_sigma: 0.1,
            object_noise_translation_sigma: 0.25,
            gt_sample_max_per_class: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid augmentation config: {0}")]
pub struct AugmentationConfigError(pub String);

impl AugmentationConfig {
    /// Every stage disabled.
    pub fn disabled() -> Self {
        Self { probabilities: AugmentationProbabilities::all(0.0), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), AugmentationConfigError> {
        let err = |m: &str| Err(AugmentationConfigError(m.to_string()));
        if self.probabilities.values().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return err("probabilities must lie in [0, 1]");
        }
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(self.rotation_range) || !ordered(self.scale_range) || !ordered(self.sample_drop_ratio_range) {
            return err("ranges must be finite and ordered");
        }
        if self.scale_range[0] <= 0.0 {
            return err("scale range must be positive");
        }
        if self.sample_drop_ratio_range[0] < 0.0 || self.sample_drop_ratio_range[1] > 1.0 {
            return err("sample drop ratio must lie in [0, 1]");
        }
        let sigmas = [
            self.translation_sigma,
            self.global_noise_sigma,
            self.point_perturb_sigma,
            self.jitter_sigma,
            self.rotate_perturb_sigma,
            self.object_noise_rotation_sigma,
            self.object_noise_translation_sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return err("sigmas must be finite and >= 0");
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(range: [f64; 2], rng: &mut R) -> f64 {
    if range[0] == range[1] {
        return range[0];
    }
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

fn gate<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    p > 0.0 && (p >= 1.0 || rng.random::<f64>() < p)
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated")
}

/// Draws flips, z-rotation, xy-translation and scale. Disabled components
/// stay at identity.
pub fn sample_global_transform<R: Rng + ?Sized>(config: &AugmentationConfig, rng: &mut R) -> SimilarityTransform {
    let p = &config.probabilities;
    let mut t = SimilarityTransform::identity();
    t.mirror_x = gate(p.flip_x, rng);
    t.mirror_y = gate(p.flip_y, rng);
    if gate(p.rotation, rng) {
        t.rotation_z = uniform(config.rotation_range, rng);
    }
    if gate(p.translation_x, rng) {
        t.translation[0] = normal(config.translation_sigma).sample(rng);
    }
    if gate(p.translation_y, rng) {
        t.translation[1] = normal(config.translation_sigma).sample(rng);
    }
    if gate(p.scaling, rng) {
        t.scale = uniform(config.scale_range, rng);
    }
    t
}

pub fn apply_global(frame: &Frame, t: &SimilarityTransform) -> Frame {
    let (cloud, boxes) = transform_frame(&frame.cloud, &frame.boxes(), t);
    Frame {
        frame_id: frame.frame_id.clone(),
        cloud,
        labels: frame
            .labels
            .iter()
            .zip(boxes)
            .map(|(l, b)| FrameLabel { bbox: b, ..l.clone() })
            .collect(),
    }
}

/// Drops each point independently with probability `ratio`.
pub fn sample_drop<R: Rng + ?Sized>(cloud: &PointCloud, ratio: f64, rng: &mut R) -> PointCloud {
    if ratio <= 0.0 {
        return cloud.clone();
    }
    PointCloud {
        frame_id: cloud.frame_id.clone(),
        points: cloud.points.iter().copied().filter(|_| rng.random::<f64>() >= ratio).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbMode {
    /// One offset vector shared by every point.
    GlobalNoise,
    /// Independent per-point offsets.
    GaussianPerturb,
    /// Per-point offsets clipped to 3 sigma per axis.
    Jitter,
    /// Independent per-point rotation about the z axis.
    RotatePerturb,
}

pub fn perturb_points<R: Rng + ?Sized>(
    cloud: &PointCloud,
    mode: PerturbMode,
    sigma: f64,
    rng: &mut R,
) -> PointCloud {
    if sigma == 0.0 {
        return cloud.clone();
    }
    let n = normal(sigma);
    let clip = JITTER_CLIP_SIGMAS * sigma;
    let points = match mode {
        PerturbMode::GlobalNoise => {
            let d = [n.sample(rng), n.sample(rng), n.sample(rng)];
            cloud.points.iter().map(|p| Point { x: p.x + d[0], y: p.y + d[1], z: p.z + d[2], ..*p }).collect()
        }
        PerturbMode::GaussianPerturb | PerturbMode::Jitter => cloud
            .points
            .iter()
            .map(|p| {
                let mut d = [n.sample(rng), n.sample(rng), n.sample(rng)];
                if mode == PerturbMode::Jitter {
                    d.iter_mut().for_each(|v| *v = v.clamp(-clip, clip));
                }
                Point { x: p.x + d[0], y: p.y + d[1], z: p.z + d[2], ..*p }
            })
            .collect(),
        PerturbMode::RotatePerturb => cloud
            .points
            .iter()
            .map(|p| {
                let (s, c) = n.sample(rng).sin_cos();
                Point { x: c * p.x - s * p.y, y: s * p.x + c * p.y, ..*p }
            })
            .collect(),
    };
    PointCloud { frame_id: cloud.frame_id.clone(), points }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectNoiseParams {
    pub rotation_sigma: f64,
    pub translation_sigma: f64,
}

fn overlaps_any(candidate: &OrientedBox3D, boxes: &[OrientedBox3D], skip: Option<usize>) -> bool {
    boxes
        .iter()
        .enumerate()
        .any(|(j, b)| Some(j) != skip && rotated_bev_iou(candidate, b) > 0.0)
}

/// Moves each labeled object, together with its interior points, by a small
/// random rotation about its center and an xy shift. A draw is rejected if
/// the moved footprint overlaps another box or would swallow points that were
/// not part of the object; after [`OBJECT_NOISE_ATTEMPTS`] rejections the
/// object stays put.
pub fn object_noise<R: Rng + ?Sized>(frame: &Frame, params: &ObjectNoiseParams, rng: &mut R) -> Frame {
    if params.rotation_sigma == 0.0 && params.translation_sigma == 0.0 {
        return frame.clone();
    }
    let rot = normal(params.rotation_sigma);
    let shift = normal(params.translation_sigma);
    let mut out = frame.clone();
    let mut boxes = frame.boxes();
    let interiors: Vec<Vec<usize>> = boxes.iter().map(|b| points_in_box(&frame.cloud, b)).collect();

    for i in 0..boxes.len() {
        let own: HashSet<usize> = interiors[i].iter().copied().collect();
        for _ in 0..OBJECT_NOISE_ATTEMPTS {
            let dtheta = rot.sample(rng);
            let dx = shift.sample(rng);
            let dy = shift.sample(rng);
            if dtheta == 0.0 && dx == 0.0 && dy == 0.0 {
                break;
            }
            let old = boxes[i];
            let candidate = OrientedBox3D {
                cx: old.cx + dx,
                cy: old.cy + dy,
                yaw: normalize_angle(old.yaw + dtheta),
                ..old
            };
            if overlaps_any(&candidate, &boxes, Some(i)) {
                continue;
            }
            let captures_foreign = out
                .cloud
                .points
                .iter()
                .enumerate()
                .any(|(k, p)| !own.contains(&k) && candidate.contains(p));
            if captures_foreign {
                continue;
            }
            let (s, c) = dtheta.sin_cos();
            for &k in &interiors[i] {
                let p = &mut out.cloud.points[k];
                let (lx, ly) = (p.x - old.cx, p.y - old.cy);
                p.x = candidate.cx + c * lx - s * ly;
                p.y = candidate.cy + s * lx + c * ly;
            }
            boxes[i] = candidate;
            out.labels[i].bbox = candidate;
            break;
        }
    }
    out
}

/// Pastes up to `max_per_class` database objects per class at their stored
/// poses, skipping any whose footprint overlaps a box already in the frame.
pub fn sample_ground_truths<R: Rng + ?Sized>(
    frame: &Frame,
    db: &GroundTruthDatabase,
    max_per_class: usize,
    rng: &mut R,
) -> Frame {
    let mut out = frame.clone();
    if max_per_class == 0 {
        return out;
    }
    let mut boxes = frame.boxes();
    for class in db.classes() {
        let entries = db.entries(class);
        let k = max_per_class.min(entries.len());
        for idx in rand::seq::index::sample(rng, entries.len(), k) {
            let entry = &entries[idx];
            if overlaps_any(&entry.bbox, &boxes, None) {
                continue;
            }
            boxes.push(entry.bbox);
            out.labels.push(FrameLabel::new(class, entry.occlusion, entry.bbox));
            out.cloud.points.extend(entry.world_points());
        }
    }
    out
}

/// Runs the stages in order: ground-truth pasting, object noise, global
/// transform, point perturbations, sample drop.
pub fn apply_pipeline<R: Rng + ?Sized>(
    frame: &Frame,
    config: &AugmentationConfig,
    db: Option<&GroundTruthDatabase>,
    rng: &mut R,
) -> Frame {
    let p = &config.probabilities;
    let mut f = frame.clone();
    if let Some(db) = db {
        if gate(p.gt_sampling, rng) {
            f = sample_ground_truths(&f, db, config.gt_sample_max_per_class, rng);
        }
    }
    if gate(p.object_noise, rng) {
        let params = ObjectNoiseParams {
            rotation_sigma: config.object_noise_rotation_sigma,
            translation_sigma: config.object_noise_translation_sigma,
        };
        f = object_noise(&f, &params, rng);
    }
    let t = sample_global_transform(config, rng);
    f = apply_global(&f, &t);

    let perturbations = [
        (p.global_noise, PerturbMode::GlobalNoise, config.global_noise_sigma),
        (p.point_perturb, PerturbMode::GaussianPerturb, config.point_perturb_sigma),
        (p.rotate_perturb, PerturbMode::RotatePerturb, config.rotate_perturb_sigma),
        (p.jitter, PerturbMode::Jitter, config.jitter_sigma),
    ];
    for (prob, mode, sigma) in perturbations {
        if gate(prob, rng) {
            f.cloud = perturb_points(&f.cloud, mode, sigma, rng);
        }
    }
    if gate(p.sample_drop, rng) {
        let ratio = uniform(config.sample_drop_ratio_range, rng);
        f.cloud = sample_drop(&f.cloud, ratio, rng);
    }
    f
}
