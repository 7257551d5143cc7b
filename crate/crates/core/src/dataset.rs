//! Dataset ingestion: binary clouds, KITTI-style label text, frame
//! manifests, seeded splits, difficulty sets and the ground-truth database
//! used for object pasting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{points_in_box, OrientedBox3D, Point, PointCloud};
use crate::io::{read_bytes, write_atomic, IoError};

const POINT_RECORD_BYTES: usize = 16;
const LABEL_FIELDS: usize = 15;

/// Classes skipped by the label parser (KITTI "don't care" regions).
const IGNORED_CLASSES: &[&str] = &["DontCare"];

pub const DEFAULT_MIN_POINTS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("point buffer length {0} is not a multiple of 16")]
    MalformedLength(usize),
    #[error("non-finite value in point record {0}")]
    NonFinite(usize),
    #[error("label line {line}: expected 15 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("label line {line}: cannot parse field {field} ({value:?})")]
    ParseError { line: usize, field: usize, value: String },
    #[error("label line {line}: box extents must be positive")]
    InvalidBox { line: usize },
    #[error("cannot split an empty dataset")]
    EmptyDataset,
    #[error("duplicate frame id {0:?}")]
    DuplicateFrameId(String),
    #[error("malformed JSON in {}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Occlusion {
    Visible = 0,
    PartiallyOccluded = 1,
    FullyOccluded = 2,
}

impl Occlusion {
    pub const ALL: [Occlusion; 3] = [Occlusion::Visible, Occlusion::PartiallyOccluded, Occlusion::FullyOccluded];

    /// Out-of-range levels clamp to the nearest defined one.
    pub fn from_level(level: i64) -> Self {
        match level {
            i64::MIN..=0 => Occlusion::Visible,
            1 => Occlusion::PartiallyOccluded,
            _ => Occlusion::FullyOccluded,
        }
    }

    pub fn level(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "Easy",
            Difficulty::Moderate => "Moderate",
            Difficulty::Hard => "Hard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub class_name: String,
    pub occlusion: Occlusion,
    #[serde(rename = "box")]
    pub bbox: OrientedBox3D,
}

impl FrameLabel {
    pub fn new(class_name: impl Into<String>, occlusion: Occlusion, bbox: OrientedBox3D) -> Self {
        Self { class_name: class_name.into(), occlusion, bbox }
    }

    pub fn difficulties(&self) -> Vec<Difficulty> {
        classify_difficulty(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: String,
    pub cloud: PointCloud,
    pub labels: Vec<FrameLabel>,
}

impl Frame {
    pub fn boxes(&self) -> Vec<OrientedBox3D> {
        self.labels.iter().map(|l| l.bbox).collect()
    }
}

/// Decodes packed little-endian `f32` records `(x, y, z, intensity)`.
pub fn parse_point_cloud(bytes: &[u8]) -> Result<Vec<Point>, DatasetError> {
    if !bytes.len().is_multiple_of(POINT_RECORD_BYTES) {
        return Err(DatasetError::MalformedLength(bytes.len()));
    }
    bytes
        .chunks_exact(POINT_RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| {
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
            let vals = [f(0), f(1), f(2), f(3)];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite(i));
            }
            Ok(Point::new(vals[0] as f64, vals[1] as f64, vals[2] as f64, vals[3] as f64))
        })
        .collect()
}

pub fn serialize_point_cloud(points: &[Point]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * POINT_RECORD_BYTES);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Parses KITTI 15-field label lines. The box is read in the sensor frame:
/// fields 9-11 are (h, w, l), 12-14 the center and 15 the yaw.
pub fn parse_labels(text: &str) -> Result<Vec<FrameLabel>, DatasetError> {
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != LABEL_FIELDS {
            return Err(DatasetError::FieldCount { line, found: fields.len() });
        }
        if IGNORED_CLASSES.contains(&fields[0]) {
            continue;
        }
        let num = |k: usize| -> Result<f64, DatasetError> {
            fields[k - 1]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DatasetError::ParseError { line, field: k, value: fields[k - 1].to_string() })
        };
        // Fields 2 (truncation) and 4-8 (alpha, 2D box) are validated but unused.
        for k in [2, 4, 5, 6, 7, 8] {
            num(k)?;
        }
        let occlusion = Occlusion::from_level(num(3)?.round() as i64);
        let (h, w, l) = (num(9)?, num(10)?, num(11)?);
        let center = [num(12)?, num(13)?, num(14)?];
        let yaw = num(15)?;
        if h <= 0.0 || w <= 0.0 || l <= 0.0 {
            return Err(DatasetError::InvalidBox { line });
        }
        labels.push(FrameLabel::new(fields[0], occlusion, OrientedBox3D::new(center, l, w, h, yaw)));
    }
    Ok(labels)
}

/// Inverse of [`parse_labels`]; floats use the shortest round-trip form.
pub fn format_labels(labels: &[FrameLabel]) -> String {
    let mut out = String::new();
    for l in labels {
        let b = &l.bbox;
        let _ = writeln!(
            out,
            "{} 0.0 {} 0.0 0.0 0.0 0.0 0.0 {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            l.class_name,
            l.occlusion.level(),
            b.height,
            b.width,
            b.length,
            b.cx,
            b.cy,
            b.cz,
            b.yaw
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Split sizes for `n` frames: floor(0.7n), floor(0.15n), remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 70 / 100;
    let val = n * 15 / 100;
    (train, val, n - train - val)
}

/// Seeded 7 : 1.5 : 1.5 split.
pub fn split_dataset(frame_ids: &[String], seed: u64) -> Result<DatasetSplit, DatasetError> {
    if frame_ids.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut ids = frame_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let (train, val, _) = split_sizes(ids.len());
    let test = ids.split_off(train + val);
    let val_ids = ids.split_off(train);
    Ok(DatasetSplit { train: ids, val: val_ids, test, seed })
}

/// Easy takes only visible objects, Moderate drops fully occluded ones,
/// Hard takes everything.
pub fn classify_difficulty(label: &FrameLabel) -> Vec<Difficulty> {
    match label.occlusion {
        Occlusion::Visible => vec![Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard],
        Occlusion::PartiallyOccluded => vec![Difficulty::Moderate, Difficulty::Hard],
        Occlusion::FullyOccluded => vec![Difficulty::Hard],
    }
}

pub fn in_difficulty(label: &FrameLabel, difficulty: Difficulty) -> bool {
    match difficulty {
        Difficulty::Easy => label.occlusion == Occlusion::Visible,
        Difficulty::Moderate => label.occlusion != Occlusion::FullyOccluded,
        Difficulty::Hard => true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtEntry {
    #[serde(rename = "box")]
    pub bbox: OrientedBox3D,
    pub occlusion: Occlusion,
    /// Points in box-local coordinates.
    pub points: PointCloud,
    pub source_frame_id: String,
}

impl GtEntry {
    pub fn world_points(&self) -> Vec<Point> {
        self.points
            .points
            .iter()
            .map(|p| self.bbox.to_world([p.x, p.y, p.z], p.intensity))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthDatabase {
    entries: BTreeMap<String, Vec<GtEntry>>,
}

impl GroundTruthDatabase {
    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self, class_name: &str) -> &[GtEntry] {
        self.entries.get(class_name).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &GtEntry)> {
        self.entries.iter().flat_map(|(k, v)| v.iter().map(move |e| (k.as_str(), e)))
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, GtEntry)>) -> Self {
        let mut map: BTreeMap<String, Vec<GtEntry>> = BTreeMap::new();
        for (class, entry) in entries {
            map.entry(class).or_default().push(entry);
        }
        Self { entries: map }
    }

    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        let mut index = Vec::new();
        for (class, entries) in &self.entries {
            for (i, e) in entries.iter().enumerate() {
                let file = format!("{}_{}_{i:05}.bin", sanitize(class), sanitize(&e.source_frame_id));
                write_atomic(&dir.join(&file), &serialize_point_cloud(&e.points.points))?;
                index.push(GtIndexRecord {
                    class_name: class.clone(),
                    source_frame_id: e.source_frame_id.clone(),
                    occlusion: e.occlusion,
                    bbox: e.bbox,
                    num_points: e.points.len(),
                    points_file: file,
                });
            }
        }
        let json = serde_json::to_vec_pretty(&index).expect("index serializes");
        write_atomic(&dir.join("index.json"), &json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let path = dir.join("index.json");
        let index: Vec<GtIndexRecord> =
            serde_json::from_slice(&read_bytes(&path)?).map_err(|source| DatasetError::Json { path, source })?;
        let mut entries = Vec::with_capacity(index.len());
        for rec in index {
            let points = parse_point_cloud(&read_bytes(&dir.join(&rec.points_file))?)?;
            entries.push((
                rec.class_name,
                GtEntry {
                    bbox: rec.bbox,
                    occlusion: rec.occlusion,
                    points: PointCloud::new(rec.source_frame_id.clone(), points),
                    source_frame_id: rec.source_frame_id,
                },
            ));
        }
        Ok(Self::from_entries(entries))
    }
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtIndexRecord {
    class_name: String,
    source_frame_id: String,
    occlusion: Occlusion,
    #[serde(rename = "box")]
    bbox: OrientedBox3D,
    num_points: usize,
    points_file: String,
}

/// Collects every label with at least `min_points` interior points.
pub fn build_gt_database(frames: &[Frame], min_points: usize) -> GroundTruthDatabase {
    let min_points = min_points.max(1);
    let mut out = Vec::new();
    for frame in frames {
        for label in &frame.labels {
            let inside = points_in_box(&frame.cloud, &label.bbox);
            if inside.len() < min_points {
                continue;
            }
            let local = inside
                .iter()
                .map(|&i| {
                    let p = &frame.cloud.points[i];
                    let [x, y, z] = label.bbox.to_local(p);
                    Point::new(x, y, z, p.intensity)
                })
                .collect();
            out.push((
                label.class_name.clone(),
                GtEntry {
                    bbox: label.bbox,
                    occlusion: label.occlusion,
                    points: PointCloud::new(frame.frame_id.clone(), local),
                    source_frame_id: frame.frame_id.clone(),
                },
            ));
        }
    }
    GroundTruthDatabase::from_entries(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub frame_id: String,
    pub cloud_path: String,
    pub label_path: String,
}

/// Frame manifest; relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let entries: Vec<ManifestEntry> = serde_json::from_slice(&read_bytes(path)?)
            .map_err(|source| DatasetError::Json { path: path.to_path_buf(), source })?;
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.frame_id.as_str()) {
                return Err(DatasetError::DuplicateFrameId(e.frame_id.clone()));
            }
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { base_dir, entries })
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(&self.entries).expect("manifest serializes");
        v.push(b'\n');
        v
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_frame(&self, entry: &ManifestEntry) -> Result<Frame, DatasetError> {
        let points = parse_point_cloud(&read_bytes(&self.resolve(&entry.cloud_path))?)?;
        let text = read_bytes(&self.resolve(&entry.label_path))?;
        let labels = parse_labels(&String::from_utf8_lossy(&text))?;
        Ok(Frame { frame_id: entry.frame_id.clone(), cloud: PointCloud::new(entry.frame_id.clone(), points), labels })
    }

    pub fn frame_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.frame_id.clone()).collect()
    }
}

/// Writes `frames` as `clouds/<id>.bin`, `labels/<id>.txt` and `manifest.json` under `dir`.
pub fn write_frames(dir: &Path, frames: &[Frame]) -> Result<PathBuf, DatasetError> {
    let mut entries = Vec::with_capacity(frames.len());
    for f in frames {
        let cloud_path = format!("clouds/{}.bin", sanitize(&f.frame_id));
        let label_path = format!("labels/{}.txt", sanitize(&f.frame_id));
        write_atomic(&dir.join(&cloud_path), &serialize_point_cloud(&f.cloud.points))?;
        write_atomic(&dir.join(&label_path), format_labels(&f.labels).as_bytes())?;
        entries.push(ManifestEntry { frame_id: f.frame_id.clone(), cloud_path, label_path });
    }
    let manifest = Manifest { base_dir: dir.to_path_buf(), entries };
    let path = dir.join("manifest.json");
    write_atomic(&path, &manifest.to_json())?;
    Ok(path)
}
