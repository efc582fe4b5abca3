//! 2D skeleton conditioning image: Bresenham bones and filled joint discs.

use serde::{Deserialize, Serialize};

use super::{ControlImage, ControlKind};
use crate::keypoints::Keypoints2D;

/// Bone colors, 8-bit RGB; bone `i` uses entry `i % len`.
pub const BONE_PALETTE: [[u8; 3]; 19] = [
    [255, 0, 0],
    [255, 85, 0],
    [255, 170, 0],
    [255, 255, 0],
    [170, 255, 0],
    [85, 255, 0],
    [0, 255, 0],
    [0, 255, 85],
    [0, 255, 170],
    [0, 255, 255],
    [0, 170, 255],
    [0, 85, 255],
    [0, 0, 255],
    [85, 0, 255],
    [170, 0, 255],
    [255, 0, 255],
    [255, 0, 170],
    [255, 0, 85],
    [255, 128, 128],
];

pub const JOINT_COLOR: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkeletonStyle {
    /// Bone thickness in pixels (square brush).
    pub line_width: u32,
    /// Joint disc radius in pixels; 0 draws no discs.
    pub joint_radius: u32,
}

impl Default for SkeletonStyle {
    fn default() -> Self {
        Self {
            line_width: 4,
            joint_radius: 4,
        }
    }
}

pub fn palette_color(i: usize) -> [f64; 3] {
    BONE_PALETTE[i % BONE_PALETTE.len()].map(|c| c as f64 / 255.0)
}

/// Integer Bresenham line between two pixel positions, inclusive.
pub fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64) -> Vec<(i64, i64)> {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x, y));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Liang-Barsky clip of a segment to `[lo, hi]` on both axes.
fn clip_segment(p: [f64; 2], q: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> Option<([f64; 2], [f64; 2])> {
    let d = [q[0] - p[0], q[1] - p[1]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for axis in 0..2 {
        for (num, den) in [(p[axis] - lo[axis], -d[axis]), (hi[axis] - p[axis], d[axis])] {
            if den == 0.0 {
                if num < 0.0 {
                    return None;
                }
            } else {
                let t = num / den;
                if den < 0.0 {
                    t0 = t0.max(t);
                } else {
                    t1 = t1.min(t);
                }
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    let at = |t: f64| [p[0] + d[0] * t, p[1] + d[1] * t];
    Some((at(t0), at(t1)))
}

fn put(image: &mut ControlImage, x: i64, y: i64, color: [f64; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < image.width && (y as usize) < image.height {
        let idx = y as usize * image.width + x as usize;
        image.pixels[idx] = color;
    }
}

fn draw_bone(image: &mut ControlImage, p: [f64; 2], q: [f64; 2], width: u32, color: [f64; 3]) {
    let lo = [-1.0, -1.0];
    let hi = [image.width as f64 + 1.0, image.height as f64 + 1.0];
    let Some((p, q)) = clip_segment(p, q, lo, hi) else {
        return;
    };
    let w = width.max(1) as i64;
    let (brush_lo, brush_hi) = (-((w - 1) / 2), w / 2);
    for (x, y) in bresenham(p[0].floor() as i64, p[1].floor() as i64, q[0].floor() as i64, q[1].floor() as i64) {
        for oy in brush_lo..=brush_hi {
            for ox in brush_lo..=brush_hi {
                put(image, x + ox, y + oy, color);
            }
        }
    }
}

fn draw_disc(image: &mut ControlImage, c: [f64; 2], radius: u32, color: [f64; 3]) {
    if radius == 0 {
        return;
    }
    let (cx, cy) = (c[0].floor(), c[1].floor());
    if !(cx.abs() < 1e9 && cy.abs() < 1e9) {
        return;
    }
    let (cx, cy, r) = (cx as i64, cy as i64, radius as i64);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                put(image, cx + dx, cy + dy, color);
            }
        }
    }
}

/// Draws bones between visible joint pairs (skipping any bone with an
/// invisible endpoint), then joint discs on top.
pub fn render_skeleton(
    joints: &Keypoints2D,
    bones: &[(usize, usize)],
    resolution: [u32; 2],
    style: &SkeletonStyle,
) -> ControlImage {
    let mut image = ControlImage::background(resolution[0] as usize, resolution[1] as usize, ControlKind::Skeleton);
    let joint_color = JOINT_COLOR.map(|c| c as f64 / 255.0);
    for (i, &(a, b)) in bones.iter().enumerate() {
        if a >= joints.len() || b >= joints.len() || !joints.visible[a] || !joints.visible[b] {
            continue;
        }
        draw_bone(&mut image, joints.points[a], joints.points[b], style.line_width, palette_color(i));
    }
    for (p, _) in joints.points.iter().zip(&joints.visible).filter(|(_, v)| **v) {
        draw_disc(&mut image, *p, style.joint_radius, joint_color);
    }
    image
}
