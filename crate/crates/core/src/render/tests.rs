use std::path::PathBuf;

use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

use super::*;
use crate::body_model::{BodyModel, PosedMesh, SmplxParams};

fn fixture_model() -> BodyModel {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/testmodel_8joint.json");
    BodyModel::load(path).unwrap()
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/golden")
}

fn simple_camera(size: u32) -> Camera {
    let f = size as f64;
    let c = size as f64 / 2.0;
    Camera::new([f, f], [c, c], [size, size], Matrix3::identity(), Vector3::zeros()).unwrap()
}

fn mesh(vertices: Vec<Vector3<f64>>, faces: Vec<[u32; 3]>) -> PosedMesh {
    PosedMesh {
        vertices,
        joints: Vec::new(),
        faces,
        joint_rotations: Vec::new(),
    }
}

#[test]
fn empty_face_list_is_background() {
    let m = mesh(vec![Vector3::new(0.0, 0.0, 1.0)], Vec::new());
    let img = rasterize(&m, &[[1.0, 0.0, 0.0]], &simple_camera(32)).unwrap();
    assert!(img.is_blank());
    assert!(img.depth.iter().all(|d| *d == f64::INFINITY));
}

#[test]
fn color_count_mismatch() {
    let m = mesh(vec![Vector3::new(0.0, 0.0, 1.0)], Vec::new());
    assert!(matches!(
        rasterize(&m, &[], &simple_camera(8)),
        Err(RenderError::ColorCount { colors: 0, vertices: 1 })
    ));
}

#[test]
fn constant_color_triangle_is_exact() {
    let c = [0.3, 0.7, 0.123456789];
    let m = mesh(
        vec![Vector3::new(-0.4, -0.4, 1.0), Vector3::new(0.4, -0.3, 2.0), Vector3::new(0.0, 0.5, 3.0)],
        vec![[0, 1, 2]],
    );
    let img = rasterize(&m, &[c; 3], &simple_camera(64)).unwrap();
    let mut covered = 0;
    for (p, d) in img.pixels.iter().zip(&img.depth) {
        if d.is_finite() {
            covered += 1;
            assert_eq!(*p, c);
            assert!(*d > 0.0);
        }
    }
    assert!(covered > 100);
}

#[test]
fn triangle_behind_near_plane_dropped() {
    let m = mesh(
        vec![Vector3::new(-1.0, -1.0, 1.0), Vector3::new(1.0, -1.0, 1.0), Vector3::new(0.0, 1.0, 0.0)],
        vec![[0, 1, 2]],
    );
    let img = rasterize(&m, &[[1.0; 3]; 3], &simple_camera(16)).unwrap();
    assert!(img.is_blank());
}

#[test]
fn shared_edge_pixels_claimed_once() {
    // square split along its diagonal, vertices on pixel centers
    let cam = Camera::new([1.0, 1.0], [0.0, 0.0], [16, 16], Matrix3::identity(), Vector3::zeros()).unwrap();
    let v = vec![
        Vector3::new(2.5, 2.5, 1.0),
        Vector3::new(12.5, 2.5, 1.0),
        Vector3::new(12.5, 12.5, 1.0),
        Vector3::new(2.5, 12.5, 1.0),
    ];
    let colors = [[1.0; 3]; 4];
    let a = rasterize_triangles(&cam, &v, &colors, &[[0, 1, 2]], ControlKind::Pncc);
    let b = rasterize_triangles(&cam, &v, &colors, &[[0, 2, 3]], ControlKind::Pncc);
    let both = rasterize_triangles(&cam, &v, &colors, &[[0, 1, 2], [0, 2, 3]], ControlKind::Pncc);
    let mut union = 0;
    for i in 0..256 {
        let (ia, ib) = (a.depth[i].is_finite(), b.depth[i].is_finite());
        assert!(!(ia && ib), "pixel {i} claimed twice");
        union += (ia || ib) as usize;
        assert_eq!(ia || ib, both.depth[i].is_finite());
    }
    // centers 2.5..12.5 inclusive on top/left edges only: 10x10 pixels
    assert_eq!(union, 100);
}

#[test]
fn coverage_tracks_area() {
    for size in [64u32, 100, 257] {
        let cam = Camera::new([1.0, 1.0], [0.0, 0.0], [size, size], Matrix3::identity(), Vector3::zeros()).unwrap();
        let s = size as f64;
        let v = vec![Vector3::new(0.1 * s, 0.05 * s, 1.0), Vector3::new(0.93 * s, 0.3 * s, 1.0), Vector3::new(0.4 * s, 0.97 * s, 1.0)];
        let img = rasterize_triangles(&cam, &v, &[[1.0; 3]; 3], &[[0, 1, 2]], ControlKind::Pncc);
        let covered = img.depth.iter().filter(|d| d.is_finite()).count() as f64 / (s * s);
        let (a, b, c) = (v[0], v[1], v[2]);
        let area = ((b - a).cross(&(c - a))).norm() / 2.0 / (s * s);
        assert!((covered - area).abs() <= 2.0 / s, "size {size}: {covered} vs {area}");
    }
}

/// Depth of the plane through `tri` along the camera ray of pixel center `(px, py)`.
fn ray_plane_depth(cam: &Camera, tri: &[Vector3<f64>; 3], px: f64, py: f64) -> f64 {
    let dir = Vector3::new((px - cam.principal[0]) / cam.focal[0], (py - cam.principal[1]) / cam.focal[1], 1.0);
    let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    n.dot(&tri[0]) / n.dot(&dir)
}

fn point_in_triangle(cam: &Camera, tri: &[Vector3<f64>; 3], px: f64, py: f64) -> Option<bool> {
    let p: Vec<[f64; 2]> = tri.iter().map(|v| cam.to_pixel(v)).collect();
    let e = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
    let w = [e(p[1], p[2]), e(p[2], p[0]), e(p[0], p[1])];
    // skip centers within rounding of an edge
    if w.iter().any(|x| x.abs() < 1e-6) {
        return None;
    }
    Some(w.iter().all(|x| *x > 0.0) || w.iter().all(|x| *x < 0.0))
}

fn arb_triangle() -> impl Strategy<Value = [Vector3<f64>; 3]> {
    prop::array::uniform3((-1.0f64..1.0, -1.0f64..1.0, 1.0f64..6.0)).prop_map(|v| v.map(|(x, y, z)| Vector3::new(x * z, y * z, z)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn depth_test_keeps_nearer_fragment(t0 in arb_triangle(), t1 in arb_triangle()) {
        let cam = simple_camera(32);
        let verts: Vec<_> = t0.iter().chain(&t1).copied().collect();
        let colors = [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
        let img = rasterize_triangles(&cam, &verts, &colors, &[[0, 1, 2], [3, 4, 5]], ControlKind::Pncc);
        for py in 0..32 {
            for px in 0..32 {
                let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                let (Some(in0), Some(in1)) = (point_in_triangle(&cam, &t0, cx, cy), point_in_triangle(&cam, &t1, cx, cy)) else {
                    continue;
                };
                let got = img.pixels[py * 32 + px];
                match (in0, in1) {
                    (false, false) => prop_assert_eq!(got, [0.0; 3]),
                    (true, false) => prop_assert_eq!(got, colors[0]),
                    (false, true) => prop_assert_eq!(got, colors[3]),
                    (true, true) => {
                        let d0 = ray_plane_depth(&cam, &t0, cx, cy);
                        let d1 = ray_plane_depth(&cam, &t1, cx, cy);
                        if (d0 - d1).abs() > 1e-9 * d0.abs().max(1.0) {
                            prop_assert_eq!(got, if d0 < d1 { colors[0] } else { colors[3] });
                            prop_assert!((img.depth[py * 32 + px] - d0.min(d1)).abs() < 1e-9 * d0.max(d1));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pncc_in_unit_cube(pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..40)) {
        let v: Vec<_> = pts.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect();
        let c = pncc_colors(&v).unwrap();
        for axis in 0..3 {
            let vals: Vec<f64> = c.iter().map(|p| p[axis]).collect();
            prop_assert!(vals.iter().all(|x| (0.0..=1.0).contains(x)));
            let degenerate = v.iter().all(|p| p[axis] == v[0][axis]);
            if degenerate {
                prop_assert!(vals.iter().all(|x| *x == 0.5));
            } else {
                prop_assert!(vals.contains(&0.0) && vals.contains(&1.0));
            }
        }
    }
}

#[test]
fn pncc_changes_under_half_turn() {
    let model = fixture_model();
    let params = SmplxParams::zeros(model.num_joints());
    let cam = Camera::framing(model.template_vertices(), &CameraRig::default()).unwrap();
    let front = render_control_pair(&model, &params, &cam, &RenderOptions::default()).unwrap();
    let mut turned = params.clone();
    turned.theta[0] = [0.0, 0.0, std::f64::consts::PI];
    let back = render_control_pair(&model, &turned, &cam, &RenderOptions::default()).unwrap();
    assert!(front.mesh.l1_distance(&back.mesh) > 0.0);
}

#[test]
fn control_pair_matches_projection_and_is_deterministic() {
    let model = fixture_model();
    let mut params = SmplxParams::zeros(model.num_joints());
    params.theta[4] = [0.0, 0.4, 0.0];
    params.beta[0] = 0.5;
    let cam = Camera::framing(model.template_vertices(), &CameraRig::default()).unwrap();
    let a = render_control_pair(&model, &params, &cam, &RenderOptions::default()).unwrap();
    let b = render_control_pair(&model, &params, &cam, &RenderOptions::default()).unwrap();
    let posed = model.forward(&params).unwrap();
    assert_eq!(a.keypoints, project(&cam, &model.keypoints(&posed)));
    assert_eq!(a.mesh, b.mesh);
    assert_eq!(a.skeleton.to_rgb8(), b.skeleton.to_rgb8());
    assert_eq!(a.keypoints.len(), 17);
    assert!(!a.mesh.is_blank() && !a.skeleton.is_blank());
    assert!(a.mesh.pixels.iter().flatten().all(|c| (0.0..=1.0).contains(c)));

    let vid = RenderOptions {
        colors: ColorScheme::VertexId,
        ..Default::default()
    };
    let c = render_control_pair(&model, &params, &cam, &vid).unwrap();
    assert_eq!(c.mesh.kind, ControlKind::VertexId);
    assert_eq!(c.keypoints, a.keypoints);
}

#[test]
fn half_turned_camera_sees_nothing() {
    let model = fixture_model();
    let params = SmplxParams::zeros(model.num_joints());
    let cam = Camera::framing(model.template_vertices(), &CameraRig::default()).unwrap().yawed(180.0);
    let pair = render_control_pair(&model, &params, &cam, &RenderOptions::default()).unwrap();
    assert_eq!(pair.keypoints.num_visible(), 0);
    assert!(pair.skeleton.is_blank());
    assert!(pair.mesh.is_blank());
}

#[test]
fn png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = ControlImage::background(5, 3, ControlKind::Pncc);
    img.pixels[4] = [1.0, 0.5, 0.25];
    img.pixels[14] = [0.002, 0.998, 1.0];
    let path = dir.path().join("x.png");
    img.write_png(&path).unwrap();
    let (w, h, rgb) = read_png(&path).unwrap();
    assert_eq!((w, h), (5, 3));
    assert_eq!(rgb, img.to_rgb8());
    assert_eq!(&rgb[12..15], &[255, 128, 64]);
    assert_eq!(&rgb[42..45], &[1, 254, 255]);
}

#[test]
fn zero_pose_matches_golden_images() {
    let model = fixture_model();
    let params = SmplxParams::zeros(model.num_joints());
    let cam = Camera::framing(model.template_vertices(), &CameraRig::default()).unwrap();
    let pair = render_control_pair(&model, &params, &cam, &RenderOptions::default()).unwrap();
    let dir = golden_dir();
    let bless = std::env::var_os("MESHFORGE_BLESS").is_some();
    for (name, img) in [("testmodel_zero_pncc.png", &pair.mesh), ("testmodel_zero_skeleton.png", &pair.skeleton)] {
        let path = dir.join(name);
        if bless {
            std::fs::create_dir_all(&dir).unwrap();
            img.write_png(&path).unwrap();
        }
        let (w, h, rgb) = read_png(&path).unwrap_or_else(|e| panic!("{e}; run with MESHFORGE_BLESS=1 to create"));
        assert_eq!((w as usize, h as usize), (img.width, img.height));
        assert!(rgb == img.to_rgb8(), "{name} differs from golden");
    }
}
