//! Bird's-eye-view encoding: crop to the detection region, then rasterize
//! into height / intensity / density channels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{Point, PointCloud};
use crate::io::{write_atomic, IoError};

/// Axis-aligned detection region in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropRegion {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl Default for CropRegion {
    fn default() -> Self {
        Self { x: [-70.0, 70.0], y: [-70.0, 70.0], z: [-2.0, 4.0] }
    }
}

impl CropRegion {
    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.z].iter().all(|r| r[0].is_finite() && r[1].is_finite() && r[0] < r[1])
    }

    pub fn contains(&self, p: &Point) -> bool {
        (self.x[0]..=self.x[1]).contains(&p.x)
            && (self.y[0]..=self.y[1]).contains(&p.y)
            && (self.z[0]..=self.z[1]).contains(&p.z)
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        (self.x[0]..=self.x[1]).contains(&x) && (self.y[0]..=self.y[1]).contains(&y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub crop: CropRegion,
    /// Point count at which the density channel saturates.
    pub density_saturation: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { width: 1024, height: 1024, crop: CropRegion::default(), density_saturation: 64 }
    }
}

impl GridConfig {
    pub fn resolution_x(&self) -> f64 {
        (self.crop.x[1] - self.crop.x[0]) / self.width as f64
    }

    pub fn resolution_y(&self) -> f64 {
        (self.crop.y[1] - self.crop.y[0]) / self.height as f64
    }

    pub fn validate(&self) -> Result<(), BevError> {
        if self.width == 0 || self.height == 0 || !self.crop.is_valid() || self.density_saturation < 2 {
            return Err(BevError::InvalidConfig);
        }
        Ok(())
    }

    /// `(column, row)` of the cell holding `(x, y)`; the upper edge folds into the last cell.
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let ix = ((x - self.crop.x[0]) / self.resolution_x()).floor() as usize;
        let iy = ((y - self.crop.y[0]) / self.resolution_y()).floor() as usize;
        (ix.min(self.width - 1), iy.min(self.height - 1))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BevError {
    #[error("point {index} at ({x}, {y}, {z}) lies outside the crop region")]
    OutOfCrop { index: usize, x: f64, y: f64, z: f64 },
    #[error("invalid grid configuration")]
    InvalidConfig,
    #[error(transparent)]
    Io(#[from] IoError),
}

pub const CHANNEL_ORDER: [&str; 3] = ["height", "intensity", "density"];

/// Three-channel raster, each channel row-major over `(row = y cell, column = x cell)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub config: GridConfig,
    pub height_map: Vec<f32>,
    pub intensity_map: Vec<f32>,
    pub density_map: Vec<f32>,
    /// Raw points per cell.
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BevHeader {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub crop: CropRegion,
    pub channel_order: Vec<String>,
    pub layout: String,
    pub dtype: String,
}

impl BevGrid {
    pub fn index(&self, column: usize, row: usize) -> usize {
        row * self.config.width + column
    }

    pub fn channels(&self) -> [&[f32]; 3] {
        [&self.height_map, &self.intensity_map, &self.density_map]
    }

    pub fn header(&self) -> BevHeader {
        BevHeader {
            width: self.config.width,
            height: self.config.height,
            resolution: self.config.resolution_x(),
            crop: self.config.crop,
            channel_order: CHANNEL_ORDER.iter().map(|s| s.to_string()).collect(),
            layout: "channel,row(y),column(x)".into(),
            dtype: "float32-le".into(),
        }
    }

    /// Channel-major little-endian `f32` tensor.
    pub fn tensor_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(3 * self.counts.len() * 4);
        for ch in self.channels() {
            for v in ch {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn write(&self, tensor_path: &Path, header_path: &Path) -> Result<(), BevError> {
        write_atomic(tensor_path, &self.tensor_bytes())?;
        let mut h = serde_json::to_vec_pretty(&self.header()).expect("header serializes");
        h.push(b'\n');
        write_atomic(header_path, &h)?;
        Ok(())
    }

    /// Binary PPM (P6) of one channel, grey levels replicated in RGB.
    pub fn channel_ppm(&self, channel: usize) -> Vec<u8> {
        let ch = self.channels()[channel];
        let mut out = format!("P6\n{} {}\n255\n", self.config.width, self.config.height).into_bytes();
        for v in ch {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            out.extend_from_slice(&[g, g, g]);
        }
        out
    }
}

/// Keeps points inside the closed region, preserving order.
pub fn crop_cloud(cloud: &PointCloud, region: &CropRegion) -> PointCloud {
    PointCloud {
        frame_id: cloud.frame_id.clone(),
        points: cloud.points.iter().copied().filter(|p| region.contains(p)).collect(),
    }
}

pub fn rasterize(cloud: &PointCloud, config: &GridConfig) -> Result<BevGrid, BevError> {
    config.validate()?;
    let cells = config.width * config.height;
    let crop = &config.crop;
    let mut max_z = vec![f64::NEG_INFINITY; cells];
    let mut max_i = vec![0.0f64; cells];
    let mut counts = vec![0u32; cells];
    for (index, p) in cloud.points.iter().enumerate() {
        if !crop.contains(p) {
            return Err(BevError::OutOfCrop { index, x: p.x, y: p.y, z: p.z });
        }
        let (ix, iy) = config.cell_of(p.x, p.y);
        let c = iy * config.width + ix;
        max_z[c] = max_z[c].max(p.z);
        max_i[c] = max_i[c].max(p.intensity);
        counts[c] += 1;
    }
    let z_span = crop.z[1] - crop.z[0];
    let log_sat = (config.density_saturation as f64).ln();
    let mut grid = BevGrid {
        config: *config,
        height_map: vec![0.0; cells],
        intensity_map: vec![0.0; cells],
        density_map: vec![0.0; cells],
        counts,
    };
    for c in 0..cells {
        let n = grid.counts[c];
        if n == 0 {
            continue;
        }
        grid.height_map[c] = ((max_z[c] - crop.z[0]) / z_span).clamp(0.0, 1.0) as f32;
        grid.intensity_map[c] = max_i[c].clamp(0.0, 1.0) as f32;
        grid.density_map[c] = ((n as f64 + 1.0).ln() / log_sat).min(1.0) as f32;
    }
    Ok(grid)
}
