//! Difficulty-stratified average precision.
//!
//! Detections are greedily matched to ground truth at a fixed IoU threshold
//! (3D by default, BEV as an auxiliary variant). Ground truth outside the
//! evaluated difficulty set is ignored: it does not count toward recall, and
//! detections that hit it are dropped instead of being counted as false
//! positives.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::codec::Detection;
use crate::dataset::{in_difficulty, Difficulty, Frame, FrameLabel};
use crate::geometry::{iou_3d, rotated_bev_iou, OrientedBox3D};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("detections reference unknown frame id {0:?}")]
    UnknownFrameId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IouKind {
    #[serde(rename = "3d")]
    ThreeD,
    #[serde(rename = "bev")]
    Bev,
}

impl IouKind {
    pub fn iou(self, a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
        match self {
            IouKind::ThreeD => iou_3d(a, b),
            IouKind::Bev => rotated_bev_iou(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ApMode {
    ElevenPoint,
    FortyPoint,
}

impl ApMode {
    /// Recall levels at which interpolated precision is sampled.
    pub fn recall_levels(self) -> Vec<f64> {
        match self {
            ApMode::ElevenPoint => (0..=10).map(|k| k as f64 / 10.0).collect(),
            ApMode::FortyPoint => (1..=40).map(|k| k as f64 / 40.0).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatchOutcome {
    Tp,
    Fp,
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatch {
    /// One outcome per input detection, in input order.
    pub outcomes: Vec<MatchOutcome>,
    /// Ground truth inside the difficulty set.
    pub total_gt: usize,
    pub matched_gt: usize,
}

/// Greedy matching in descending score order. Equal scores are ordered by
/// box geometry, so permuting tied detections cannot change the result.
pub fn match_frame(
    detections: &[Detection],
    gt: &[FrameLabel],
    iou_threshold: f64,
    difficulty: Difficulty,
    kind: IouKind,
) -> FrameMatch {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&detections[a], &detections[b]);
        db.score.total_cmp(&da.score).then_with(|| da.bbox.total_cmp(&db.bbox)).then_with(|| da.class_name.cmp(&db.class_name))
    });
    let counted: Vec<bool> = gt.iter().map(|g| in_difficulty(g, difficulty)).collect();
    let mut taken = vec![false; gt.len()];
    let mut outcomes = vec![MatchOutcome::Fp; detections.len()];
    for i in order {
        let d = &detections[i];
        let mut best: Option<(f64, usize)> = None;
        let mut hits_ignored = false;
        for (j, g) in gt.iter().enumerate() {
            if g.class_name != d.class_name {
                continue;
            }
            let iou = kind.iou(&d.bbox, &g.bbox);
            if iou < iou_threshold {
                continue;
            }
            if !counted[j] {
                hits_ignored = true;
                continue;
            }
            if taken[j] {
                continue;
            }
            if best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, j));
            }
        }
        outcomes[i] = match best {
            Some((_, j)) => {
                taken[j] = true;
                MatchOutcome::Tp
            }
            None if hits_ignored => MatchOutcome::Ignored,
            None => MatchOutcome::Fp,
        };
    }
    FrameMatch {
        outcomes,
        total_gt: counted.iter().filter(|c| **c).count(),
        matched_gt: taken.iter().filter(|t| **t).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub total_gt: usize,
}

impl PrCurve {
    /// Builds the curve from scored outcomes; ignored detections are skipped.
    pub fn from_scored(scored: &[(f64, MatchOutcome)], total_gt: usize) -> Self {
        let mut order: Vec<usize> = (0..scored.len()).collect();
        order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
        let mut tp = 0usize;
        let mut seen = 0usize;
        let mut points = Vec::new();
        for i in order {
            let (score, outcome) = scored[i];
            match outcome {
                MatchOutcome::Ignored => continue,
                MatchOutcome::Tp => tp += 1,
                MatchOutcome::Fp => {}
            }
            seen += 1;
            let recall = if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 };
            points.push(PrPoint { recall, precision: tp as f64 / seen as f64, score });
        }
        Self { points, total_gt }
    }
}

/// Mean interpolated precision, `max{precision : recall >= r}`, over the
/// mode's recall levels. Zero when there is no ground truth.
pub fn compute_ap(pr: &PrCurve, mode: ApMode) -> f64 {
    if pr.total_gt == 0 {
        return 0.0;
    }
    // Suffix maxima of precision give the interpolated envelope.
    let mut envelope = vec![0.0f64; pr.points.len()];
    let mut run = 0.0f64;
    for (k, p) in pr.points.iter().enumerate().rev() {
        run = run.max(p.precision);
        envelope[k] = run;
    }
    let levels = mode.recall_levels();
    let mut sum = 0.0;
    for r in &levels {
        // Recall is non-decreasing, so the first qualifying point carries the max.
        if let Some(k) = pr.points.iter().position(|p| p.recall >= *r) {
            sum += envelope[k];
        }
    }
    sum / levels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub mode: ApMode,
    /// Restrict to these classes; all classes present when empty.
    pub classes: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5, mode: ApMode::ElevenPoint, classes: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub class_name: String,
    pub difficulty: Difficulty,
    pub iou_kind: IouKind,
    pub ap_eleven_point: f64,
    pub ap_forty_point: f64,
    pub total_gt: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ignored: usize,
    pub curve: PrCurve,
}

impl ApResult {
    pub fn ap(&self, mode: ApMode) -> f64 {
        match mode {
            ApMode::ElevenPoint => self.ap_eleven_point,
            ApMode::FortyPoint => self.ap_forty_point,
        }
    }
}

/// Reference AP values quoted for side-by-side display. Never used as
/// expected outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub name: String,
    pub source: String,
    pub class_name: String,
    pub difficulty: Difficulty,
    pub ap: f64,
}

pub const RADAR_CAMERA_FUSION: &str = "radar-camera fusion (Astyx)";
pub const RADAR_ONLY_BEV: &str = "radar-only BEV detector (Astyx)";
pub const COMPLEX_YOLO_KITTI: &str = "Complex-YOLO LiDAR (KITTI)";

pub fn reference_baselines() -> Vec<Baseline> {
    let mk = |name: &str, difficulty, ap| Baseline {
        name: name.to_string(),
        source: "paper".to_string(),
        class_name: "Car".to_string(),
        difficulty,
        ap,
    };
    vec![
        mk(RADAR_CAMERA_FUSION, Difficulty::Easy, 0.61),
        mk(RADAR_CAMERA_FUSION, Difficulty::Moderate, 0.48),
        mk(RADAR_CAMERA_FUSION, Difficulty::Hard, 0.45),
        mk(RADAR_ONLY_BEV, Difficulty::Easy, 0.75),
        mk(COMPLEX_YOLO_KITTI, Difficulty::Easy, 0.8589),
        mk(COMPLEX_YOLO_KITTI, Difficulty::Moderate, 0.7740),
        mk(COMPLEX_YOLO_KITTI, Difficulty::Hard, 0.7733),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub baseline: String,
    pub class_name: String,
    pub difficulty: Difficulty,
    pub iou_kind: IouKind,
    pub measured_ap: f64,
    pub baseline_ap: f64,
    pub delta: f64,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub results: Vec<ApResult>,
    pub baselines: Vec<Baseline>,
    pub comparisons: Vec<BaselineComparison>,
}

impl EvalReport {
    pub fn get(&self, class_name: &str, difficulty: Difficulty, kind: IouKind) -> Option<&ApResult> {
        self.results
            .iter()
            .find(|r| r.class_name == class_name && r.difficulty == difficulty && r.iou_kind == kind)
    }
}

/// Detections keyed by frame id.
pub type DetectionSet = BTreeMap<String, Vec<Detection>>;

pub fn evaluate_dataset(detections: &DetectionSet, frames: &[Frame], config: &EvalConfig) -> Result<EvalReport, EvalError> {
    let index: HashMap<&str, usize> = frames.iter().enumerate().map(|(i, f)| (f.frame_id.as_str(), i)).collect();
    if let Some(unknown) = detections.keys().find(|k| !index.contains_key(k.as_str())) {
        return Err(EvalError::UnknownFrameId(unknown.clone()));
    }
    let mut classes: BTreeSet<String> = frames.iter().flat_map(|f| f.labels.iter().map(|l| l.class_name.clone())).collect();
    classes.extend(detections.values().flatten().map(|d| d.class_name.clone()));
    if !config.classes.is_empty() {
        classes.retain(|c| config.classes.contains(c));
    }

    let empty: Vec<Detection> = Vec::new();
    let mut results = Vec::new();
    for class in &classes {
        let per_frame: Vec<(Vec<Detection>, Vec<FrameLabel>)> = frames
            .iter()
            .map(|f| {
                let dets = detections.get(&f.frame_id).unwrap_or(&empty);
                (
                    dets.iter().filter(|d| &d.class_name == class).cloned().collect(),
                    f.labels.iter().filter(|l| &l.class_name == class).cloned().collect(),
                )
            })
            .collect();
        for kind in [IouKind::ThreeD, IouKind::Bev] {
            for difficulty in Difficulty::ALL {
                let mut scored = Vec::new();
                let mut total_gt = 0;
                for (dets, gts) in &per_frame {
                    let m = match_frame(dets, gts, config.iou_threshold, difficulty, kind);
                    total_gt += m.total_gt;
                    scored.extend(dets.iter().zip(&m.outcomes).map(|(d, o)| (d.score, *o)));
                }
                let count = |o: MatchOutcome| scored.iter().filter(|s| s.1 == o).count();
                let curve = PrCurve::from_scored(&scored, total_gt);
                results.push(ApResult {
                    class_name: class.clone(),
                    difficulty,
                    iou_kind: kind,
                    ap_eleven_point: compute_ap(&curve, ApMode::ElevenPoint),
                    ap_forty_point: compute_ap(&curve, ApMode::FortyPoint),
                    total_gt,
                    true_positives: count(MatchOutcome::Tp),
                    false_positives: count(MatchOutcome::Fp),
                    ignored: count(MatchOutcome::Ignored),
                    curve,
                });
            }
        }
    }

    let baselines = reference_baselines();
    let mut comparisons = Vec::new();
    for b in &baselines {
        for kind in [IouKind::ThreeD, IouKind::Bev] {
            let Some(r) = results.iter().find(|r| r.class_name == b.class_name && r.difficulty == b.difficulty && r.iou_kind == kind)
            else {
                continue;
            };
            let measured = r.ap(config.mode);
            let replication = b.name == RADAR_ONLY_BEV
                && kind == IouKind::ThreeD
                && config.mode == ApMode::ElevenPoint
                && config.iou_threshold == 0.5;
            comparisons.push(BaselineComparison {
                baseline: b.name.clone(),
                class_name: b.class_name.clone(),
                difficulty: b.difficulty,
                iou_kind: kind,
                measured_ap: measured,
                baseline_ap: b.ap,
                delta: measured - b.ap,
                label: replication.then(|| format!("comparable to paper AP {}", b.ap)),
            });
        }
    }
    Ok(EvalReport { config: config.clone(), results, baselines, comparisons })
}
