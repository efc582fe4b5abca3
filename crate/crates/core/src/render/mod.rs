//! Conditioning images from posed meshes.
//!
//! * [`pncc_colors`] and [`vertex_id_colors`] assign per-vertex colors,
//! * [`rasterize`] draws the colored mesh through a pinhole [`Camera`],
//! * [`render_skeleton`] draws the projected 2D skeleton,
//! * [`render_control_pair`] composes all of the above for one label and
//!   returns the projected ground-truth keypoints used later for scoring.

mod camera;
mod colors;
mod raster;
mod skeleton;

use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body_model::{BodyModel, BodyModelError, SmplxParams};
use crate::keypoints::{Keypoints2D, COCO_BONES, COCO_KEYPOINT_NAMES};

pub use camera::{project, Camera, CameraRig, Z_NEAR};
pub use colors::{pncc_colors, vertex_id_colors, viridis, VIRIDIS_STOPS};
pub use raster::{rasterize, rasterize_triangles};
pub use skeleton::{bresenham, palette_color, render_skeleton, SkeletonStyle, BONE_PALETTE, JOINT_COLOR};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("non-finite vertex coordinate")]
    NonFinite,
    #[error("{colors} colors for {vertices} vertices")]
    ColorCount { colors: usize, vertices: usize },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error(transparent)]
    Body(#[from] BodyModelError),
    #[error("png {path}: {message}")]
    Png { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    Pncc,
    VertexId,
    Skeleton,
}

/// Rendered conditioning image. Pixels are row-major RGB in `[0, 1]`;
/// `depth` holds camera-space z of the visible fragment, `+inf` for background.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub kind: ControlKind,
}

impl ControlImage {
    pub fn background(width: usize, height: usize, kind: ControlKind) -> Self {
        Self {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
            depth: vec![f64::INFINITY; width * height],
            kind,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn is_blank(&self) -> bool {
        self.pixels.iter().all(|p| *p == [0.0; 3])
    }

    /// 8-bit RGB bytes, `round(255 c)` per channel.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        write_png(path, self.width as u32, self.height as u32, &self.to_rgb8())
    }

    /// Sum of absolute channel differences.
    pub fn l1_distance(&self, other: &ControlImage) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>())
            .sum()
    }
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> RenderError {
    RenderError::Png {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes 8-bit RGB data as PNG.
pub fn write_png(path: impl AsRef<Path>, width: u32, height: u32, rgb: &[u8]) -> Result<(), RenderError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| png_err(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(rgb).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

/// Reads a PNG and returns `(width, height, rgb8)`; alpha is dropped.
pub fn read_png(path: impl AsRef<Path>) -> Result<(u32, u32, Vec<u8>), RenderError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| png_err(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| png_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    buf.truncate(info.buffer_size());
    let rgb = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|g| [*g; 3]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0]; 3]).collect(),
        png::ColorType::Indexed => return Err(png_err(path, "unexpanded palette image")),
    };
    Ok((info.width, info.height, rgb))
}

/// Per-vertex color scheme for the mesh control image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorScheme {
    #[default]
    Pncc,
    VertexId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub colors: ColorScheme,
    pub skeleton: SkeletonStyle,
    pub rig: CameraRig,
}

/// Bones for the model's keypoint layout: COCO limbs for the COCO layout,
/// parent-child pairs when keypoints are the joints, none otherwise.
pub fn bones_for(model: &BodyModel) -> Vec<(usize, usize)> {
    if model.keypoint_names().iter().map(String::as_str).eq(COCO_KEYPOINT_NAMES) {
        COCO_BONES.to_vec()
    } else if model.num_keypoints() != model.num_joints() {
        Vec::new()
    } else {
        model
            .parents()
            .iter()
            .enumerate()
            .filter_map(|(j, p)| p.map(|p| (p, j)))
            .collect()
    }
}

/// Mesh control image, skeleton image and ground-truth 2D keypoints of one label.
#[derive(Debug, Clone)]
pub struct ControlPair {
    pub mesh: ControlImage,
    pub skeleton: ControlImage,
    pub keypoints: Keypoints2D,
}

pub fn render_control_pair(
    model: &BodyModel,
    params: &SmplxParams,
    camera: &Camera,
    options: &RenderOptions,
) -> Result<ControlPair, RenderError> {
    camera.validate()?;
    let posed = model.forward(params)?;
    let (colors, kind) = match options.colors {
        ColorScheme::Pncc => (pncc_colors(&posed.vertices)?, ControlKind::Pncc),
        ColorScheme::VertexId => (vertex_id_colors(posed.vertices.len())?, ControlKind::VertexId),
    };
    let mut mesh = rasterize(&posed, &colors, camera)?;
    mesh.kind = kind;
    let keypoints = project(camera, &model.keypoints(&posed));
    let skeleton = render_skeleton(&keypoints, &bones_for(model), camera.resolution, &options.skeleton);
    Ok(ControlPair {
        mesh,
        skeleton,
        keypoints,
    })
}

#[cfg(test)]
mod tests;
