//! Point and box math in the sensor frame (x forward, y left, z up).
//!
//! Boxes are parameterized by center, extents and a yaw about +z, with yaw
//! kept in `[-pi, pi)`. Rotated BEV overlap is computed by clipping the two
//! footprint quads against each other (Sutherland-Hodgman), which is exact
//! for convex inputs.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Slack applied to the half-extent test in [`points_in_box`] so that points
/// lying on a face survive round-off from co-transformation.
pub const BOUNDARY_EPS: f64 = 1e-9;

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle(angle: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut a = angle - two_pi * ((angle + PI) / two_pi).floor();
    // floor() can leave us exactly on the open end through round-off.
    if a >= PI {
        a -= two_pi;
    }
    if a < -PI {
        a = -PI;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub frame_id: String,
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(frame_id: impl Into<String>, points: Vec<Point>) -> Self {
        Self { frame_id: frame_id.into(), points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cloud holding the points at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            frame_id: self.frame_id.clone(),
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }
}

/// 7-DoF box: center, extents (length along heading, width, height) and yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
}

impl OrientedBox3D {
    /// Builds a box, wrapping `yaw` into `[-pi, pi)`.
    pub fn new(center: [f64; 3], length: f64, width: f64, height: f64, yaw: f64) -> Self {
        Self {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            length,
            width,
            height,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn is_valid(&self) -> bool {
        let finite = [self.cx, self.cy, self.cz, self.length, self.width, self.height, self.yaw]
            .iter()
            .all(|v| v.is_finite());
        finite
            && self.length > 0.0
            && self.width > 0.0
            && self.height > 0.0
            && (-PI..PI).contains(&self.yaw)
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.cz - 0.5 * self.height, self.cz + 0.5 * self.height)
    }

    /// Coordinates of `p` in the box frame: translated to the center and de-rotated by yaw.
    pub fn to_local(&self, p: &Point) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p.x - self.cx;
        let dy = p.y - self.cy;
        [c * dx + s * dy, -s * dx + c * dy, p.z - self.cz]
    }

    /// Inverse of [`Self::to_local`].
    pub fn to_world(&self, local: [f64; 3], intensity: f64) -> Point {
        let (s, c) = self.yaw.sin_cos();
        Point {
            x: self.cx + c * local[0] - s * local[1],
            y: self.cy + s * local[0] + c * local[1],
            z: self.cz + local[2],
            intensity,
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        let [lx, ly, lz] = self.to_local(p);
        lx.abs() <= 0.5 * self.length + BOUNDARY_EPS
            && ly.abs() <= 0.5 * self.width + BOUNDARY_EPS
            && lz.abs() <= 0.5 * self.height + BOUNDARY_EPS
    }

    /// Lexicographic total order over the seven parameters.
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        let a = [self.cx, self.cy, self.cz, self.length, self.width, self.height, self.yaw];
        let b = [other.cx, other.cy, other.cz, other.length, other.width, other.height, other.yaw];
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

/// Box footprint in the ground plane, corners counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevPolygon {
    pub vertices: [[f64; 2]; 4],
}

impl BevPolygon {
    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    pub fn is_convex_ccw(&self) -> bool {
        (0..4).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % 4];
            let c = self.vertices[(i + 2) % 4];
            cross(a, b, c) > 0.0
        })
    }
}

pub fn box_to_bev_polygon(b: &OrientedBox3D) -> BevPolygon {
    let hl = 0.5 * b.length;
    let hw = 0.5 * b.width;
    let (s, c) = b.yaw.sin_cos();
    let corner = |lx: f64, ly: f64| [b.cx + c * lx - s * ly, b.cy + s * lx + c * ly];
    BevPolygon {
        vertices: [corner(hl, hw), corner(-hl, hw), corner(-hl, -hw), corner(hl, -hw)],
    }
}

/// z-component of (b - a) x (c - a); positive when c is left of a->b.
fn cross(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Shoelace area; positive for counter-clockwise rings.
pub fn polygon_area(vertices: &[[f64; 2]]) -> f64 {
    if vertices.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (i, a) in vertices.iter().enumerate() {
        let b = vertices[(i + 1) % vertices.len()];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}

fn line_intersection(s: [f64; 2], e: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let ds = [e[0] - s[0], e[1] - s[1]];
    let dc = [b[0] - a[0], b[1] - a[1]];
    let denom = ds[0] * dc[1] - ds[1] * dc[0];
    if denom == 0.0 {
        return s;
    }
    let t = ((a[0] - s[0]) * dc[1] - (a[1] - s[1]) * dc[0]) / denom;
    [s[0] + t * ds[0], s[1] + t * ds[1]]
}

/// Clips `subject` against the convex CCW polygon `clip` (Sutherland-Hodgman).
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        for &cur in &input {
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
            prev = cur;
        }
    }
    output
}

/// Footprint intersection area of two boxes.
pub fn bev_intersection_area(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    // Fixed argument order keeps the result bit-identical under swapping.
    let (a, b) = if a.total_cmp(b) == Ordering::Greater { (b, a) } else { (a, b) };
    if a == b {
        return box_to_bev_polygon(a).area();
    }
    let pa = box_to_bev_polygon(a);
    let pb = box_to_bev_polygon(b);
    // Cheap reject on circumscribed circles.
    let ra = 0.5 * a.length.hypot(a.width);
    let rb = 0.5 * b.length.hypot(b.width);
    if (a.cx - b.cx).hypot(a.cy - b.cy) > ra + rb {
        return 0.0;
    }
    polygon_area(&clip_convex(&pa.vertices, &pb.vertices)).max(0.0)
}

pub fn rotated_bev_iou(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = bev_intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.length * a.width + b.length * b.width - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn iou_3d(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    if a == b {
        return 1.0;
    }
    let (a_lo, a_hi) = a.z_range();
    let (b_lo, b_hi) = b.z_range();
    let z_overlap = a_hi.min(b_hi) - a_lo.max(b_lo);
    if z_overlap <= 0.0 {
        return 0.0;
    }
    let inter_area = bev_intersection_area(a, b);
    if inter_area <= 0.0 {
        return 0.0;
    }
    let inter = inter_area * z_overlap;
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Indices of points inside `b`; points on a face count as inside.
pub fn points_in_box(cloud: &PointCloud, b: &OrientedBox3D) -> Vec<usize> {
    cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| b.contains(p))
        .map(|(i, _)| i)
        .collect()
}

/// Similarity transform of the ground plane: `p' = t + s * R(theta) * M * p`,
/// where `M` mirrors the flagged axes. z is scaled by `s` and otherwise untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub rotation_z: f64,
    pub translation: [f64; 2],
    pub scale: f64,
    pub mirror_x: bool,
    pub mirror_y: bool,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub const fn identity() -> Self {
        Self { rotation_z: 0.0, translation: [0.0, 0.0], scale: 1.0, mirror_x: false, mirror_y: false }
    }

    pub fn rotation(theta: f64) -> Self {
        Self { rotation_z: theta, ..Self::identity() }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        let mx = if self.mirror_x { -p.x } else { p.x };
        let my = if self.mirror_y { -p.y } else { p.y };
        let (s, c) = self.rotation_z.sin_cos();
        Point {
            x: self.scale * (c * mx - s * my) + self.translation[0],
            y: self.scale * (s * mx + c * my) + self.translation[1],
            z: self.scale * p.z,
            intensity: p.intensity,
        }
    }

    pub fn apply_yaw(&self, yaw: f64) -> f64 {
        let mut y = yaw;
        if self.mirror_x {
            y = PI - y;
        }
        if self.mirror_y {
            y = -y;
        }
        normalize_angle(y + self.rotation_z)
    }

    pub fn apply_box(&self, b: &OrientedBox3D) -> OrientedBox3D {
        let c = self.apply_point(&Point::new(b.cx, b.cy, b.cz, 0.0));
        OrientedBox3D {
            cx: c.x,
            cy: c.y,
            cz: c.z,
            length: b.length * self.scale,
            width: b.width * self.scale,
            height: b.height * self.scale,
            yaw: self.apply_yaw(b.yaw),
        }
    }

    /// Exact algebraic inverse (up to round-off).
    pub fn inverse(&self) -> Self {
        // M R(-theta) == R(theta) M for a single reflection; a double
        // reflection is a half-turn and commutes with R.
        let single_mirror = self.mirror_x != self.mirror_y;
        let rotation = if single_mirror { self.rotation_z } else { -self.rotation_z };
        let partial = Self {
            rotation_z: rotation,
            translation: [0.0, 0.0],
            scale: 1.0 / self.scale,
            mirror_x: self.mirror_x,
            mirror_y: self.mirror_y,
        };
        let t = partial.apply_point(&Point::new(self.translation[0], self.translation[1], 0.0, 0.0));
        Self { translation: [-t.x, -t.y], ..partial }
    }
}

/// Maps a cloud and its boxes through `t` together.
pub fn transform_frame(
    cloud: &PointCloud,
    boxes: &[OrientedBox3D],
    t: &SimilarityTransform,
) -> (PointCloud, Vec<OrientedBox3D>) {
    if t.is_identity() {
        return (cloud.clone(), boxes.to_vec());
    }
    let points = cloud.points.iter().map(|p| t.apply_point(p)).collect();
    let boxes = boxes.iter().map(|b| t.apply_box(b)).collect();
    (PointCloud { frame_id: cloud.frame_id.clone(), points }, boxes)
}
