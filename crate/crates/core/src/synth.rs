//! Synthetic scenes with known ground truth, plus a detector stand-in that
//! perturbs ground truth in a controlled way. Used as the oracle source for
//! geometry, codec and evaluation checks, and to run the CLI without data.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bev::CropRegion;
use crate::codec::Detection;
use crate::dataset::{Frame, FrameLabel, Occlusion};
use crate::geometry::{box_to_bev_polygon, rotated_bev_iou, OrientedBox3D, Point, PointCloud};

pub const PLACEMENT_ATTEMPTS: usize = 1000;
/// Joint normalized deviation (in sigmas) at which a detection's score reaches 0.
pub const SCORE_FALLOFF_SIGMAS: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("could not place object {placed} of {requested} without overlap")]
    PlacementFailure { placed: usize, requested: usize },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub n_objects: usize,
    pub length_range: [f64; 2],
    pub width_range: [f64; 2],
    pub height_range: [f64; 2],
    pub points_per_object: [usize; 2],
    pub clutter_points: [usize; 2],
    pub crop: CropRegion,
    /// Ground height on which objects rest.
    pub ground_z: f64,
    pub class_name: String,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_objects: 10,
            length_range: [3.5, 4.5],
            width_range: [1.6, 1.9],
            height_range: [1.4, 1.7],
            points_per_object: [5, 60],
            clutter_points: [500, 5000],
            crop: CropRegion::default(),
            ground_z: -1.25,
            class_name: "Car".into(),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let pos = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
        if !pos(self.length_range) || !pos(self.width_range) || !pos(self.height_range) {
            return Err(SynthError::InvalidSpec("object extents must be positive and ordered".into()));
        }
        if self.points_per_object[0] == 0 || self.points_per_object[0] > self.points_per_object[1] {
            return Err(SynthError::InvalidSpec("points_per_object must be positive and ordered".into()));
        }
        if self.clutter_points[0] > self.clutter_points[1] || !self.crop.is_valid() {
            return Err(SynthError::InvalidSpec("clutter range or crop invalid".into()));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(r: [f64; 2], rng: &mut R) -> f64 {
    r[0] + (r[1] - r[0]) * rng.random::<f64>()
}

fn inside_crop(b: &OrientedBox3D, crop: &CropRegion) -> bool {
    let (z0, z1) = b.z_range();
    z0 >= crop.z[0] && z1 <= crop.z[1] && box_to_bev_polygon(b).vertices.iter().all(|v| crop.contains_xy(v[0], v[1]))
}

/// Non-overlapping objects resting on the ground plane, each filled with
/// uniform interior points, plus clutter spread over the whole crop. Boxes
/// that would stick out of the crop are redrawn.
pub fn generate_scene<R: Rng + ?Sized>(spec: &SceneSpec, frame_id: &str, rng: &mut R) -> Result<Frame, SynthError> {
    spec.validate()?;
    let crop = &spec.crop;
    let mut labels: Vec<FrameLabel> = Vec::with_capacity(spec.n_objects);
    let mut points = Vec::new();
    for placed in 0..spec.n_objects {
        let length = uniform(spec.length_range, rng);
        let width = uniform(spec.width_range, rng);
        let height = uniform(spec.height_range, rng);
        let mut accepted = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let cx = uniform(crop.x, rng);
            let cy = uniform(crop.y, rng);
            let yaw = -PI + 2.0 * PI * rng.random::<f64>();
            let b = OrientedBox3D::new([cx, cy, spec.ground_z + 0.5 * height], length, width, height, yaw);
            if inside_crop(&b, crop) && labels.iter().all(|l| rotated_bev_iou(&l.bbox, &b) == 0.0) {
                accepted = Some(b);
                break;
            }
        }
        let b = accepted.ok_or(SynthError::PlacementFailure { placed, requested: spec.n_objects })?;
        let occlusion = Occlusion::ALL[rng.random_range(0..3)];
        let n = rng.random_range(spec.points_per_object[0]..=spec.points_per_object[1]);
        for _ in 0..n {
            let local = [
                (rng.random::<f64>() - 0.5) * b.length,
                (rng.random::<f64>() - 0.5) * b.width,
                (rng.random::<f64>() - 0.5) * b.height,
            ];
            points.push(b.to_world(local, rng.random::<f64>()));
        }
        labels.push(FrameLabel::new(spec.class_name.clone(), occlusion, b));
    }
    let clutter = rng.random_range(spec.clutter_points[0]..=spec.clutter_points[1]);
    for _ in 0..clutter {
        points.push(Point::new(uniform(crop.x, rng), uniform(crop.y, rng), uniform(crop.z, rng), rng.random::<f64>()));
    }
    Ok(Frame { frame_id: frame_id.to_string(), cloud: PointCloud::new(frame_id, points), labels })
}

/// Dense spinning-LiDAR-like sweep: each beam ray hits the ground plane at
/// `-sensor_height` or a 60 m cylindrical wall, whichever comes first.
pub fn dense_lidar_sweep<R: Rng + ?Sized>(frame_id: &str, beams: usize, azimuth_steps: usize, rng: &mut R) -> PointCloud {
    const SENSOR_HEIGHT: f64 = 1.73;
    const WALL_RANGE: f64 = 60.0;
    let mut points = Vec::with_capacity(beams * azimuth_steps);
    for b in 0..beams {
        // Elevations spread over [-24.8, +2] degrees, as on a 64-beam unit.
        let t = if beams > 1 { b as f64 / (beams - 1) as f64 } else { 0.5 };
        let elev = (-24.8 + 26.8 * t).to_radians();
        for s in 0..azimuth_steps {
            let az = -PI + 2.0 * PI * (s as f64 + rng.random::<f64>()) / azimuth_steps as f64;
            let range = if elev < 0.0 { (SENSOR_HEIGHT / (-elev).tan()).min(WALL_RANGE) } else { WALL_RANGE };
            let range = range * (1.0 + 0.01 * (rng.random::<f64>() - 0.5));
            let z = (range * elev.tan()).max(-SENSOR_HEIGHT);
            let (sa, ca) = az.sin_cos();
            points.push(Point::new(range * ca, range * sa, z, rng.random::<f64>()));
        }
    }
    PointCloud::new(frame_id, points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSpec {
    pub position_sigma: f64,
    pub yaw_sigma: f64,
    pub drop_rate: f64,
    pub fp_rate: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self { position_sigma: 0.0, yaw_sigma: 0.0, drop_rate: 0.0, fp_rate: 0.0 }
    }
}

/// Score for a detection perturbed by `(dx, dy, dyaw)`: one minus the joint
/// normalized deviation over [`SCORE_FALLOFF_SIGMAS`], floored at zero.
pub fn perturbation_score(dx: f64, dy: f64, dyaw: f64, spec: &PerturbationSpec) -> f64 {
    let mut m2 = 0.0;
    if spec.position_sigma > 0.0 {
        m2 += (dx * dx + dy * dy) / (spec.position_sigma * spec.position_sigma);
    }
    if spec.yaw_sigma > 0.0 {
        m2 += (dyaw * dyaw) / (spec.yaw_sigma * spec.yaw_sigma);
    }
    (1.0 - m2.sqrt() / SCORE_FALLOFF_SIGMAS).max(0.0)
}

/// Simulated detector output for `frame`.
///
/// Exactly `floor(drop_rate * n)` ground-truth objects are dropped within each
/// occlusion level, so recall per difficulty set is known in advance. Every
/// kept object becomes a detection with Gaussian center/yaw noise, and
/// `floor(fp_rate * n_gt)` random false positives are added with scores in
/// `[0, 0.5]`.
pub fn perturb_to_detections<R: Rng + ?Sized>(
    frame: &Frame,
    spec: &PerturbationSpec,
    crop: &CropRegion,
    rng: &mut R,
) -> Vec<Detection> {
    let n = frame.labels.len();
    let mut dropped = vec![false; n];
    for occ in Occlusion::ALL {
        let members: Vec<usize> = (0..n).filter(|&i| frame.labels[i].occlusion == occ).collect();
        let k = ((spec.drop_rate.clamp(0.0, 1.0) * members.len() as f64).floor() as usize).min(members.len());
        for pick in rand::seq::index::sample(rng, members.len(), k) {
            dropped[members[pick]] = true;
        }
    }
    let pos = Normal::new(0.0, spec.position_sigma.max(0.0)).expect("finite sigma");
    let rot = Normal::new(0.0, spec.yaw_sigma.max(0.0)).expect("finite sigma");
    let mut out = Vec::new();
    for (label, gone) in frame.labels.iter().zip(&dropped) {
        if *gone {
            continue;
        }
        let (dx, dy, dyaw) = (pos.sample(rng), pos.sample(rng), rot.sample(rng));
        let b = &label.bbox;
        let bbox = if dx == 0.0 && dy == 0.0 && dyaw == 0.0 {
            *b
        } else {
            OrientedBox3D::new([b.cx + dx, b.cy + dy, b.cz], b.length, b.width, b.height, b.yaw + dyaw)
        };
        out.push(Detection { class_name: label.class_name.clone(), score: perturbation_score(dx, dy, dyaw, spec), bbox });
    }
    let n_fp = (spec.fp_rate.max(0.0) * n as f64).floor() as usize;
    let class = frame.labels.first().map(|l| l.class_name.clone()).unwrap_or_else(|| "Car".into());
    for _ in 0..n_fp {
        let h = 1.5;
        let bbox = OrientedBox3D::new(
            [uniform(crop.x, rng), uniform(crop.y, rng), -1.25 + 0.5 * h],
            uniform([3.5, 4.5], rng),
            uniform([1.6, 1.9], rng),
            h,
            -PI + 2.0 * PI * rng.random::<f64>(),
        );
        out.push(Detection { class_name: class.clone(), score: 0.5 * rng.random::<f64>(), bbox });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::points_in_box;
    use crate::rng::seeded;

    #[test]
    fn empty_scene_is_clutter_only() {
        let spec = SceneSpec { n_objects: 0, ..Default::default() };
        let f = generate_scene(&spec, "s", &mut seeded(1)).unwrap();
        assert!(f.labels.is_empty());
        assert!((500..=5000).contains(&f.cloud.len()));
        assert!(f.cloud.points.iter().all(|p| spec.crop.contains(p)));
    }

    #[test]
    fn objects_hold_their_points_and_do_not_overlap() {
        let spec = SceneSpec { n_objects: 30, ..Default::default() };
        let f = generate_scene(&spec, "s", &mut seeded(2)).unwrap();
        assert_eq!(f.labels.len(), 30);
        for (i, a) in f.labels.iter().enumerate() {
            assert!(points_in_box(&f.cloud, &a.bbox).len() >= spec.points_per_object[0]);
            assert!(a.bbox.is_valid());
            for b in &f.labels[i + 1..] {
                assert_eq!(rotated_bev_iou(&a.bbox, &b.bbox), 0.0);
            }
        }
        assert_eq!(generate_scene(&spec, "s", &mut seeded(2)).unwrap(), f);
    }

    #[test]
    fn placement_failure_is_reported() {
        let spec = SceneSpec { n_objects: 50, crop: CropRegion { x: [-5.0, 5.0], y: [-5.0, 5.0], z: [-2.0, 4.0] }, ..Default::default() };
        assert!(matches!(generate_scene(&spec, "s", &mut seeded(2)), Err(SynthError::PlacementFailure { .. })));
    }

    #[test]
    fn detections_exact_or_empty() {
        let f = generate_scene(&SceneSpec::default(), "s", &mut seeded(3)).unwrap();
        let crop = CropRegion::default();
        let exact = perturb_to_detections(&f, &PerturbationSpec::default(), &crop, &mut seeded(4));
        assert_eq!(exact.len(), f.labels.len());
        for (d, l) in exact.iter().zip(&f.labels) {
            assert_eq!(d.bbox, l.bbox);
            assert_eq!(d.score, 1.0);
        }
        let none = perturb_to_detections(&f, &PerturbationSpec { drop_rate: 1.0, ..Default::default() }, &crop, &mut seeded(4));
        assert!(none.is_empty());
        let fps = perturb_to_detections(&f, &PerturbationSpec { fp_rate: 0.5, ..Default::default() }, &crop, &mut seeded(4));
        assert_eq!(fps.len(), f.labels.len() + f.labels.len() / 2);
        assert!(fps[f.labels.len()..].iter().all(|d| d.score <= 0.5));
    }

    #[test]
    fn scores_order_by_perturbation() {
        let spec = SceneSpec { n_objects: 40, ..Default::default() };
        let f = generate_scene(&spec, "s", &mut seeded(5)).unwrap();
        let p = PerturbationSpec { position_sigma: 0.2, yaw_sigma: 0.05, ..Default::default() };
        let dets = perturb_to_detections(&f, &p, &spec.crop, &mut seeded(6));
        let mag = |d: &Detection, l: &FrameLabel| {
            let dyaw = crate::geometry::normalize_angle(d.bbox.yaw - l.bbox.yaw);
            (((d.bbox.cx - l.bbox.cx).powi(2) + (d.bbox.cy - l.bbox.cy).powi(2)) / 0.04 + dyaw * dyaw / 0.0025).sqrt()
        };
        let mut pairs: Vec<(f64, f64)> = dets.iter().zip(&f.labels).map(|(d, l)| (d.score, mag(d, l))).collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        for w in pairs.windows(2) {
            if w[1].0 > 0.0 {
                assert!(w[0].1 <= w[1].1 + 1e-9);
            }
        }
    }

    #[test]
    fn dense_sweep_size() {
        let c = dense_lidar_sweep("d", 64, 1000, &mut seeded(1));
        assert_eq!(c.len(), 64_000);
        assert!(c.points.iter().all(|p| p.is_finite() && p.z >= -1.73 - 1e-9));
    }
}
