//! Prior-box grid, regression target encoding/decoding and rotated NMS.
//!
//! The output grid divides the BEV raster by `stride`; every output cell
//! carries the nine prior boxes (3 lengths x 3 orientations, fixed width).
//! Each anchor slot holds eight fields, see [`FIELD_ORDER`]. Yaw is
//! regressed as `(cos, sin)` of the absolute heading.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bev::GridConfig;
use crate::dataset::FrameLabel;
use crate::geometry::{normalize_angle, rotated_bev_iou, OrientedBox3D};
use crate::io::{write_atomic, IoError};

pub const FIELDS_PER_ANCHOR: usize = 8;
pub const FIELD_ORDER: [&str; FIELDS_PER_ANCHOR] = ["objectness", "tx", "ty", "tl", "tw", "t_re", "t_im", "class"];

const F_OBJ: usize = 0;
const F_TX: usize = 1;
const F_TY: usize = 2;
const F_TL: usize = 3;
const F_TW: usize = 4;
const F_RE: usize = 5;
const F_IM: usize = 6;
const F_CLASS: usize = 7;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("label {index} has its center outside the crop region")]
    LabelOutsideCrop { index: usize },
    #[error("label {index} has unknown class {class:?}")]
    UnknownClass { index: usize, class: String },
    #[error("tensor shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("cannot decode angle from (0, 0)")]
    DegenerateAngle,
    #[error("invalid codec configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorSpec {
    pub width: f64,
    pub lengths: Vec<f64>,
    pub orientations: Vec<f64>,
    pub height: f64,
    pub z_center: f64,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        Self {
            width: 1.7,
            lengths: vec![4.2, 3.85, 3.5],
            orientations: vec![0.0, 1.57, -1.57],
            height: 1.5,
            z_center: -0.5,
        }
    }
}

impl AnchorSpec {
    pub fn count(&self) -> usize {
        self.lengths.len() * self.orientations.len()
    }

    /// `(length, orientation)` of anchor `a`; lengths vary slowest.
    pub fn shape(&self, a: usize) -> (f64, f64) {
        let no = self.orientations.len();
        (self.lengths[a / no], self.orientations[a % no])
    }

    pub fn anchor_box(&self, a: usize, cx: f64, cy: f64) -> OrientedBox3D {
        let (length, yaw) = self.shape(a);
        OrientedBox3D::new([cx, cy, self.z_center], length, self.width, self.height, yaw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub anchors: AnchorSpec,
    pub grid: GridConfig,
    pub stride: usize,
    pub classes: Vec<String>,
    pub score_threshold: f64,
    pub nms_iou_threshold: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            anchors: AnchorSpec::default(),
            grid: GridConfig::default(),
            stride: 32,
            classes: vec!["Car".into()],
            score_threshold: 0.5,
            nms_iou_threshold: 0.4,
        }
    }
}

/// Output-cell layout over the crop region.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub spec: AnchorSpec,
    pub cells_x: usize,
    pub cells_y: usize,
    pub origin: [f64; 2],
    pub cell_size: [f64; 2],
    pub classes: Vec<String>,
}

impl AnchorGrid {
    pub fn new(config: &CodecConfig) -> Result<Self, CodecError> {
        let g = &config.grid;
        if config.stride == 0 || g.width < config.stride || g.height < config.stride || !g.crop.is_valid() {
            return Err(CodecError::InvalidConfig("grid must hold at least one output cell".into()));
        }
        let a = &config.anchors;
        if a.count() == 0 || a.width <= 0.0 || a.height <= 0.0 || a.lengths.iter().any(|l| *l <= 0.0) {
            return Err(CodecError::InvalidConfig("anchor extents must be positive".into()));
        }
        if config.classes.is_empty() {
            return Err(CodecError::InvalidConfig("at least one class is required".into()));
        }
        let cells_x = g.width / config.stride;
        let cells_y = g.height / config.stride;
        Ok(Self {
            spec: config.anchors.clone(),
            cells_x,
            cells_y,
            origin: [g.crop.x[0], g.crop.y[0]],
            cell_size: [(g.crop.x[1] - g.crop.x[0]) / cells_x as f64, (g.crop.y[1] - g.crop.y[0]) / cells_y as f64],
            classes: config.classes.clone(),
        })
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.spec.count()
    }

    pub fn len(&self) -> usize {
        self.cells_x * self.cells_y * self.anchors_per_cell() * FIELDS_PER_ANCHOR
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn in_region(&self, x: f64, y: f64) -> bool {
        let hi = [
            self.origin[0] + self.cell_size[0] * self.cells_x as f64,
            self.origin[1] + self.cell_size[1] * self.cells_y as f64,
        ];
        (self.origin[0]..=hi[0]).contains(&x) && (self.origin[1]..=hi[1]).contains(&y)
    }

    /// Output cell containing `(x, y)`; the upper edge folds into the last cell.
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let ix = ((x - self.origin[0]) / self.cell_size[0]).floor() as usize;
        let iy = ((y - self.origin[1]) / self.cell_size[1]).floor() as usize;
        (ix.min(self.cells_x - 1), iy.min(self.cells_y - 1))
    }

    pub fn cell_origin(&self, ix: usize, iy: usize) -> [f64; 2] {
        [self.origin[0] + ix as f64 * self.cell_size[0], self.origin[1] + iy as f64 * self.cell_size[1]]
    }

    /// Anchor `a` placed at the center of cell `(ix, iy)`.
    pub fn anchor(&self, ix: usize, iy: usize, a: usize) -> OrientedBox3D {
        let o = self.cell_origin(ix, iy);
        self.spec.anchor_box(a, o[0] + 0.5 * self.cell_size[0], o[1] + 0.5 * self.cell_size[1])
    }

    fn slot(&self, ix: usize, iy: usize, a: usize) -> usize {
        ((iy * self.cells_x + ix) * self.anchors_per_cell() + a) * FIELDS_PER_ANCHOR
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub cells_x: usize,
    pub cells_y: usize,
    pub anchors: usize,
    pub fields_per_anchor: usize,
    pub field_order: Vec<String>,
    pub layout: String,
    pub dtype: String,
    pub classes: Vec<String>,
}

/// Dense `(cells_y, cells_x, anchors, fields)` tensor; used for both targets
/// and network predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTensor {
    pub cells_x: usize,
    pub cells_y: usize,
    pub anchors: usize,
    pub data: Vec<f64>,
}

impl TargetTensor {
    pub fn zeros(grid: &AnchorGrid) -> Self {
        Self { cells_x: grid.cells_x, cells_y: grid.cells_y, anchors: grid.anchors_per_cell(), data: vec![0.0; grid.len()] }
    }

    pub fn positives(&self) -> usize {
        self.data.chunks_exact(FIELDS_PER_ANCHOR).filter(|s| s[F_OBJ] > 0.0).count()
    }

    pub fn header(&self, classes: &[String]) -> TensorHeader {
        TensorHeader {
            cells_x: self.cells_x,
            cells_y: self.cells_y,
            anchors: self.anchors,
            fields_per_anchor: FIELDS_PER_ANCHOR,
            field_order: FIELD_ORDER.iter().map(|s| s.to_string()).collect(),
            layout: "cell_y,cell_x,anchor,field".into(),
            dtype: "float32-le".into(),
            classes: classes.to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect()
    }

    pub fn from_bytes(header: &TensorHeader, bytes: &[u8]) -> Result<Self, CodecError> {
        let n = header.cells_x * header.cells_y * header.anchors * header.fields_per_anchor;
        if header.fields_per_anchor != FIELDS_PER_ANCHOR || bytes.len() != n * 4 {
            return Err(CodecError::ShapeMismatch { expected: n * 4, got: bytes.len() });
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Ok(Self { cells_x: header.cells_x, cells_y: header.cells_y, anchors: header.anchors, data })
    }

    pub fn write(&self, tensor_path: &Path, header_path: &Path, classes: &[String]) -> Result<(), CodecError> {
        write_atomic(tensor_path, &self.to_bytes())?;
        let mut h = serde_json::to_vec_pretty(&self.header(classes)).expect("header serializes");
        h.push(b'\n');
        write_atomic(header_path, &h)?;
        Ok(())
    }
}

pub fn encode_angle(yaw: f64) -> (f64, f64) {
    let (s, c) = yaw.sin_cos();
    (c, s)
}

pub fn decode_angle(re: f64, im: f64) -> Result<f64, CodecError> {
    if re == 0.0 && im == 0.0 {
        return Err(CodecError::DegenerateAngle);
    }
    Ok(normalize_angle(im.atan2(re)))
}

/// Targets plus where each label ended up (`None` when its cell ran out of anchors).
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTargets {
    pub tensor: TargetTensor,
    pub assignments: Vec<Option<(usize, usize, usize)>>,
}

/// IoU of a label against the anchor shape co-centered with it.
fn shape_iou(spec: &AnchorSpec, b: &OrientedBox3D, a: usize) -> f64 {
    rotated_bev_iou(b, &spec.anchor_box(a, b.cx, b.cy))
}

/// Assigns each label to the output cell holding its center and to the
/// best-matching anchor shape in that cell. When labels compete for an
/// anchor, the higher-IoU pair wins and the other label falls back to its
/// next-best free anchor.
pub fn assign_and_encode(labels: &[FrameLabel], grid: &AnchorGrid) -> Result<EncodedTargets, CodecError> {
    let mut class_of = Vec::with_capacity(labels.len());
    for (index, l) in labels.iter().enumerate() {
        if !grid.in_region(l.bbox.cx, l.bbox.cy) {
            return Err(CodecError::LabelOutsideCrop { index });
        }
        let class = grid
            .classes
            .iter()
            .position(|c| *c == l.class_name)
            .ok_or_else(|| CodecError::UnknownClass { index, class: l.class_name.clone() })?;
        class_of.push(class);
    }

    let mut by_cell: std::collections::BTreeMap<(usize, usize), Vec<usize>> = Default::default();
    for (i, l) in labels.iter().enumerate() {
        let (ix, iy) = grid.cell_of(l.bbox.cx, l.bbox.cy);
        by_cell.entry((iy, ix)).or_default().push(i);
    }

    let na = grid.anchors_per_cell();
    let mut tensor = TargetTensor::zeros(grid);
    let mut assignments = vec![None; labels.len()];
    for ((iy, ix), members) in by_cell {
        let ious: Vec<Vec<f64>> = members.iter().map(|&i| (0..na).map(|a| shape_iou(&grid.spec, &labels[i].bbox, a)).collect()).collect();
        let mut label_done = vec![false; members.len()];
        let mut anchor_used = vec![false; na];
        for _ in 0..members.len().min(na) {
            let mut best: Option<(f64, usize, usize)> = None;
            for (m, row) in ious.iter().enumerate() {
                if label_done[m] {
                    continue;
                }
                for (a, &v) in row.iter().enumerate() {
                    if anchor_used[a] {
                        continue;
                    }
                    // Strict comparison keeps the lowest anchor, then lowest label, on ties.
                    let better = match best {
                        None => true,
                        Some((bv, ba, _)) => v > bv || (v == bv && a < ba),
                    };
                    if better {
                        best = Some((v, a, m));
                    }
                }
            }
            let (_, a, m) = best.expect("a free label and anchor remain");
            label_done[m] = true;
            anchor_used[a] = true;
            let i = members[m];
            let b = &labels[i].bbox;
            let origin = grid.cell_origin(ix, iy);
            let (anchor_len, _) = grid.spec.shape(a);
            let (re, im) = encode_angle(b.yaw);
            let s = grid.slot(ix, iy, a);
            let fields = &mut tensor.data[s..s + FIELDS_PER_ANCHOR];
            fields[F_OBJ] = 1.0;
            fields[F_TX] = (b.cx - origin[0]) / grid.cell_size[0];
            fields[F_TY] = (b.cy - origin[1]) / grid.cell_size[1];
            fields[F_TL] = (b.length / anchor_len).ln();
            fields[F_TW] = (b.width / grid.spec.width).ln();
            fields[F_RE] = re;
            fields[F_IM] = im;
            fields[F_CLASS] = class_of[i] as f64;
            assignments[i] = Some((ix, iy, a));
        }
    }
    Ok(EncodedTargets { tensor, assignments })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_name: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: OrientedBox3D,
}

/// Turns every anchor slot with objectness `>= score_threshold` into a
/// detection. z and height come from the anchor defaults.
pub fn decode_predictions(
    tensor: &TargetTensor,
    grid: &AnchorGrid,
    score_threshold: f64,
) -> Result<Vec<Detection>, CodecError> {
    let expected = grid.len();
    if tensor.data.len() != expected
        || tensor.cells_x != grid.cells_x
        || tensor.cells_y != grid.cells_y
        || tensor.anchors != grid.anchors_per_cell()
    {
        return Err(CodecError::ShapeMismatch { expected, got: tensor.data.len() });
    }
    let na = grid.anchors_per_cell();
    let mut out = Vec::new();
    for iy in 0..grid.cells_y {
        for ix in 0..grid.cells_x {
            let origin = grid.cell_origin(ix, iy);
            for a in 0..na {
                let s = grid.slot(ix, iy, a);
                let f = &tensor.data[s..s + FIELDS_PER_ANCHOR];
                if f[F_OBJ].is_nan() || f[F_OBJ] < score_threshold {
                    continue;
                }
                let (anchor_len, _) = grid.spec.shape(a);
                let yaw = decode_angle(f[F_RE], f[F_IM])?;
                let class = (f[F_CLASS].round().max(0.0) as usize).min(grid.classes.len() - 1);
                out.push(Detection {
                    class_name: grid.classes[class].clone(),
                    score: f[F_OBJ].clamp(0.0, 1.0),
                    bbox: OrientedBox3D::new(
                        [origin[0] + f[F_TX] * grid.cell_size[0], origin[1] + f[F_TY] * grid.cell_size[1], grid.spec.z_center],
                        anchor_len * f[F_TL].exp(),
                        grid.spec.width * f[F_TW].exp(),
                        grid.spec.height,
                        yaw,
                    ),
                });
            }
        }
    }
    Ok(out)
}

/// Greedy per-class NMS. Returns the kept detections in their input order.
pub fn nms_rotated(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let d = &detections[i];
        let suppressed = kept.iter().any(|&k| {
            let o = &detections[k];
            o.class_name == d.class_name && rotated_bev_iou(&o.bbox, &d.bbox) >= iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept.into_iter().map(|i| detections[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Occlusion;
    use std::f64::consts::FRAC_PI_2;

    fn grid() -> AnchorGrid {
        AnchorGrid::new(&CodecConfig::default()).unwrap()
    }

    fn car(cx: f64, cy: f64, l: f64, w: f64, yaw: f64) -> FrameLabel {
        FrameLabel::new("Car", Occlusion::Visible, OrientedBox3D::new([cx, cy, -0.5], l, w, 1.5, yaw))
    }

    #[test]
    fn grid_shape() {
        let g = grid();
        assert_eq!((g.cells_x, g.cells_y, g.anchors_per_cell()), (32, 32, 9));
        assert_eq!(g.cell_size, [4.375, 4.375]);
        for iy in 0..g.cells_y {
            for ix in 0..g.cells_x {
                for a in 0..9 {
                    let b = g.anchor(ix, iy, a);
                    assert!(g.in_region(b.cx, b.cy));
                }
            }
        }
    }

    #[test]
    fn angle_codec() {
        assert_eq!(encode_angle(0.0), (1.0, 0.0));
        let (re, im) = encode_angle(FRAC_PI_2);
        assert!(re.abs() < 1e-15 && im == 1.0);
        let (re, im) = encode_angle(-1.57);
        assert!((re - 0.000796).abs() < 1e-6 && (im + 1.0).abs() < 1e-6);
        assert_eq!(decode_angle(1.0, 0.0).unwrap(), 0.0);
        assert_eq!(decode_angle(0.0, -1.0).unwrap(), -FRAC_PI_2);
        assert_eq!(decode_angle(2.0, 0.0).unwrap(), 0.0);
        assert!(matches!(decode_angle(0.0, 0.0), Err(CodecError::DegenerateAngle)));
    }

    #[test]
    fn exact_anchor_shape_encodes_to_zero_offsets() {
        let g = grid();
        let enc = assign_and_encode(&[car(0.3, 0.2, 4.2, 1.7, 0.0)], &g).unwrap();
        let (ix, iy, a) = enc.assignments[0].unwrap();
        assert_eq!(a, 0);
        assert_eq!(g.spec.shape(a), (4.2, 0.0));
        let s = g.slot(ix, iy, a);
        let f = &enc.tensor.data[s..s + 8];
        assert_eq!((f[F_TL], f[F_TW], f[F_RE], f[F_IM]), (0.0, 0.0, 1.0, 0.0));
        assert_eq!(enc.tensor.positives(), 1);
    }

    #[test]
    fn yaw_150_picks_positive_quarter_turn_anchor() {
        let g = grid();
        let label = car(5.0, -3.0, 4.2, 1.7, 1.50);
        let ious: Vec<f64> = (0..9).map(|a| shape_iou(&g.spec, &label.bbox, a)).collect();
        let best = (0..9).max_by(|&a, &b| ious[a].total_cmp(&ious[b]).then(b.cmp(&a))).unwrap();
        assert_eq!(g.spec.shape(best), (4.2, 1.57));
        let enc = assign_and_encode(&[label], &g).unwrap();
        assert_eq!(enc.assignments[0].unwrap().2, best);
    }

    #[test]
    fn shared_slot_goes_to_better_match() {
        let g = grid();
        let a = car(1.0, 1.0, 4.2, 1.7, 0.0);
        let b = car(1.5, 1.5, 4.0, 1.7, 0.05);
        let enc = assign_and_encode(&[b.clone(), a.clone()], &g).unwrap();
        assert_eq!(enc.assignments[1].unwrap().2, 0);
        assert_ne!(enc.assignments[0].unwrap().2, 0);
        assert_eq!(enc.tensor.positives(), 2);
        let dets = decode_predictions(&enc.tensor, &g, 0.5).unwrap();
        for l in [&a, &b] {
            assert!(dets.iter().any(|d| (d.bbox.cx - l.bbox.cx).abs() < 1e-9 && (d.bbox.length - l.bbox.length).abs() < 1e-9));
        }
    }

    #[test]
    fn encode_errors_and_empty() {
        let g = grid();
        assert_eq!(assign_and_encode(&[], &g).unwrap().tensor.positives(), 0);
        assert!(matches!(assign_and_encode(&[car(80.0, 0.0, 4.0, 1.7, 0.0)], &g), Err(CodecError::LabelOutsideCrop { index: 0 })));
        let ped = FrameLabel::new("Pedestrian", Occlusion::Visible, OrientedBox3D::new([0.0; 3], 0.8, 0.6, 1.7, 0.0));
        assert!(matches!(assign_and_encode(&[ped], &g), Err(CodecError::UnknownClass { .. })));
    }

    #[test]
    fn decode_cases() {
        let g = grid();
        let zero = TargetTensor::zeros(&g);
        assert!(decode_predictions(&zero, &g, 0.5).unwrap().is_empty());
        let mut t = zero.clone();
        let s = g.slot(3, 4, 0);
        t.data[s..s + 8].copy_from_slice(&[0.9, 0.5, 0.5, 2f64.ln(), 0.0, 1.0, 0.0, 0.0]);
        let d = decode_predictions(&t, &g, 0.5).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d[0].bbox.length - 8.4).abs() < 1e-12);
        assert_eq!(d[0].score, 0.9);
        let short = TargetTensor { data: vec![0.0; 3], ..zero };
        assert!(matches!(decode_predictions(&short, &g, 0.5), Err(CodecError::ShapeMismatch { .. })));
    }

    #[test]
    fn nms_cases() {
        let det = |x: f64, s: f64| Detection { class_name: "Car".into(), score: s, bbox: OrientedBox3D::new([x, 0.0, 0.0], 4.0, 2.0, 1.5, 0.0) };
        assert_eq!(nms_rotated(&[det(0.0, 0.3)], 0.4).len(), 1);
        let kept = nms_rotated(&[det(0.0, 0.8), det(0.0, 0.9)], 0.4);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
        assert_eq!(nms_rotated(&[det(0.0, 0.8), det(10.0, 0.9)], 0.4).len(), 2);
        let mut other = det(0.0, 0.7);
        other.class_name = "Van".into();
        assert_eq!(nms_rotated(&[det(0.0, 0.8), other], 0.4).len(), 2);
    }

    #[test]
    fn tensor_bytes_round_trip_shape() {
        let g = grid();
        let t = TargetTensor::zeros(&g);
        let h = t.header(&g.classes);
        assert_eq!(h.fields_per_anchor, 8);
        let back = TargetTensor::from_bytes(&h, &t.to_bytes()).unwrap();
        assert_eq!(back, t);
        assert!(TargetTensor::from_bytes(&h, &[0u8; 8]).is_err());
    }
}
