//! Z-buffered triangle rasterizer with perspective-correct color interpolation.
//!
//! Pixels are sampled at their centers `(x + 0.5, y + 0.5)`. Coverage uses
//! edge functions with a top-left fill rule so a pixel center lying exactly on
//! an edge shared by two triangles is claimed by exactly one of them. Faces
//! are processed in index order and the depth test is strict, which makes the
//! output independent of anything but the inputs. Back faces are drawn; faces
//! with a vertex at or behind the near plane are dropped.

use nalgebra::Vector3;

use super::camera::{Camera, Z_NEAR};
use super::{ControlImage, ControlKind, RenderError};
use crate::body_model::PosedMesh;

#[derive(Clone, Copy)]
struct ScreenVertex {
    x: f64,
    y: f64,
    inv_z: f64,
    color: [f64; 3],
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Whether pixel centers exactly on edge `a -> b` belong to the triangle,
/// for triangles with positive [`edge`] area.
#[inline]
fn owns_edge(a: &ScreenVertex, b: &ScreenVertex) -> bool {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

/// Rasterizes camera-space triangles given as vertex triples.
pub fn rasterize_triangles(
    camera: &Camera,
    camera_vertices: &[Vector3<f64>],
    colors: &[[f64; 3]],
    faces: &[[u32; 3]],
    kind: ControlKind,
) -> ControlImage {
    let (w, h) = (camera.width(), camera.height());
    let mut image = ControlImage::background(w, h, kind);
    for face in faces {
        let mut tri = [ScreenVertex {
            x: 0.0,
            y: 0.0,
            inv_z: 0.0,
            color: [0.0; 3],
        }; 3];
        let mut clipped = false;
        for (slot, &vi) in tri.iter_mut().zip(face) {
            let pc = camera_vertices[vi as usize];
            if pc.z <= Z_NEAR {
                clipped = true;
                break;
            }
            let [x, y] = camera.to_pixel(&pc);
            *slot = ScreenVertex {
                x,
                y,
                inv_z: 1.0 / pc.z,
                color: colors[vi as usize],
            };
        }
        if clipped {
            continue;
        }
        let mut area = edge(tri[0].x, tri[0].y, tri[1].x, tri[1].y, tri[2].x, tri[2].y);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            tri.swap(1, 2);
            area = -area;
        }
        draw_triangle(&mut image, &tri, area);
    }
    image
}

fn draw_triangle(image: &mut ControlImage, tri: &[ScreenVertex; 3], area: f64) {
    let (w, h) = (image.width as f64, image.height as f64);
    let min_x = tri.iter().map(|v| v.x).fold(f64::INFINITY, f64::min);
    let max_x = tri.iter().map(|v| v.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = tri.iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
    let max_y = tri.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max);
    if max_x < 0.0 || max_y < 0.0 || min_x >= w || min_y >= h {
        return;
    }
    // pixel x covers centers in [x0, x1]
    let x0 = (min_x - 0.5).ceil().max(0.0) as usize;
    let x1 = (max_x - 0.5).floor().min(w - 1.0);
    let y0 = (min_y - 0.5).ceil().max(0.0) as usize;
    let y1 = (max_y - 0.5).floor().min(h - 1.0);
    if x1 < 0.0 || y1 < 0.0 {
        return;
    }
    let (x1, y1) = (x1 as usize, y1 as usize);

    let [a, b, c] = tri;
    let own = [owns_edge(b, c), owns_edge(c, a), owns_edge(a, b)];
    let inside = |w: f64, owned: bool| w > 0.0 || (w == 0.0 && owned);

    for py in y0..=y1 {
        let cy = py as f64 + 0.5;
        for px in x0..=x1 {
            let cx = px as f64 + 0.5;
            let w0 = edge(b.x, b.y, c.x, c.y, cx, cy);
            let w1 = edge(c.x, c.y, a.x, a.y, cx, cy);
            let w2 = edge(a.x, a.y, b.x, b.y, cx, cy);
            if !(inside(w0, own[0]) && inside(w1, own[1]) && inside(w2, own[2])) {
                continue;
            }
            let (l0, l1, l2) = (w0 / area, w1 / area, w2 / area);
            let inv_z = l0 * a.inv_z + l1 * b.inv_z + l2 * c.inv_z;
            let z = 1.0 / inv_z;
            let idx = py * image.width + px;
            if !(z < image.depth[idx]) {
                continue;
            }
            let color: [f64; 3] = std::array::from_fn(|ch| {
                if a.color[ch] == b.color[ch] && b.color[ch] == c.color[ch] {
                    // flat channel: no interpolation error
                    return a.color[ch];
                }
                let num = l0 * a.color[ch] * a.inv_z + l1 * b.color[ch] * b.inv_z + l2 * c.color[ch] * c.inv_z;
                (num * z).clamp(0.0, 1.0)
            });
            image.depth[idx] = z;
            image.pixels[idx] = color;
        }
    }
}

/// Rasterizes a posed mesh with per-vertex colors.
pub fn rasterize(mesh: &PosedMesh, colors: &[[f64; 3]], camera: &Camera) -> Result<ControlImage, RenderError> {
    if colors.len() != mesh.vertices.len() {
        return Err(RenderError::ColorCount {
            colors: colors.len(),
            vertices: mesh.vertices.len(),
        });
    }
    let cam_vertices: Vec<_> = mesh.vertices.iter().map(|v| camera.world_to_camera(v)).collect();
    Ok(rasterize_triangles(camera, &cam_vertices, colors, &mesh.faces, ControlKind::Pncc))
}
