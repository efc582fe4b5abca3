//! Writes the bundled 8-joint test body model.
//!
//! The body is Z-up, faces -Y and is built from octagonal rings: a torso,
//! a head capped by an apex vertex, and two arms and legs. Joints are ring
//! centroids, skinning weights are dyadic so rows sum to exactly 1, and the
//! 17 COCO body keypoints are regressed from ring vertices.
//!
//! Usage: `cargo run -p meshforge --example gen_test_model -- fixtures/testmodel_8joint.json`

use std::f64::consts::PI;

use meshforge::body_model::{ModelSpecDoc, NUM_BETAS};

const RING: usize = 8;

#[derive(Clone, Copy)]
enum Axis {
    Z,
    X(f64),
}

struct Part {
    axis: Axis,
    center: [f64; 2],
    /// (position along the axis, radius)
    rings: Vec<(f64, f64)>,
    /// per-ring list of (joint, weight)
    skin: Vec<Vec<(usize, f64)>>,
    apex: Option<(f64, Vec<(usize, f64)>)>,
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn ring_point(axis: Axis, center: [f64; 2], along: f64, radius: f64, k: usize) -> [f64; 3] {
    let phi = 2.0 * PI * k as f64 / RING as f64;
    let (c, s) = (radius * phi.cos(), radius * phi.sin());
    let p = match axis {
        Axis::Z => [center[0] + c, center[1] + s, along],
        // arm pointing along sign*X; ring spans Y (c) and Z (s)
        Axis::X(sign) => [sign * along, center[0] + c, center[1] + s],
    };
    [round4(p[0]), round4(p[1]), round4(p[2])]
}

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "fixtures/testmodel_8joint.json".into());
    let joint_names = ["root", "spine", "neck", "head", "left_arm", "right_arm", "left_leg", "right_leg"];
    let parents: Vec<i64> = vec![-1, 0, 1, 2, 1, 1, 0, 0];
    let nj = joint_names.len();

    let parts = vec![
        Part {
            axis: Axis::Z,
            center: [0.0, 0.0],
            rings: vec![(0.90, 0.14), (1.15, 0.13), (1.45, 0.16)],
            skin: vec![vec![(0, 1.0)], vec![(0, 0.5), (1, 0.5)], vec![(1, 0.75), (2, 0.25)]],
            apex: None,
        },
        Part {
            axis: Axis::Z,
            center: [0.0, 0.0],
            rings: vec![(1.60, 0.09), (1.75, 0.10)],
            skin: vec![vec![(2, 0.5), (3, 0.5)], vec![(3, 1.0)]],
            apex: Some((1.84, vec![(3, 1.0)])),
        },
        Part {
            axis: Axis::X(1.0),
            center: [0.0, 1.40],
            rings: vec![(0.18, 0.05), (0.45, 0.045), (0.72, 0.04)],
            skin: vec![vec![(1, 0.5), (4, 0.5)], vec![(4, 1.0)], vec![(4, 1.0)]],
            apex: None,
        },
        Part {
            axis: Axis::X(-1.0),
            center: [0.0, 1.40],
            rings: vec![(0.18, 0.05), (0.45, 0.045), (0.72, 0.04)],
            skin: vec![vec![(1, 0.5), (5, 0.5)], vec![(5, 1.0)], vec![(5, 1.0)]],
            apex: None,
        },
        Part {
            axis: Axis::Z,
            center: [0.1, 0.0],
            rings: vec![(0.92, 0.07), (0.50, 0.055), (0.08, 0.045)],
            skin: vec![vec![(0, 0.5), (6, 0.5)], vec![(6, 1.0)], vec![(6, 1.0)]],
            apex: None,
        },
        Part {
            axis: Axis::Z,
            center: [-0.1, 0.0],
            rings: vec![(0.92, 0.07), (0.50, 0.055), (0.08, 0.045)],
            skin: vec![vec![(0, 0.5), (7, 0.5)], vec![(7, 1.0)], vec![(7, 1.0)]],
            apex: None,
        },
    ];

    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut skin_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    // (part, ring) -> first vertex index
    let mut ring_start: Vec<Vec<usize>> = Vec::new();
    let mut part_of_vertex: Vec<(usize, usize)> = Vec::new();
    let mut faces: Vec<u32> = Vec::new();

    for (pi, part) in parts.iter().enumerate() {
        let mut starts = Vec::new();
        for (ri, &(along, radius)) in part.rings.iter().enumerate() {
            starts.push(vertices.len());
            for k in 0..RING {
                vertices.push(ring_point(part.axis, part.center, along, radius, k));
                skin_rows.push(part.skin[ri].clone());
                part_of_vertex.push((pi, ri));
            }
        }
        for pair in starts.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            for k in 0..RING {
                let k1 = (k + 1) % RING;
                faces.extend([a + k, a + k1, b + k1].map(|i| i as u32));
                faces.extend([a + k, b + k1, b + k].map(|i| i as u32));
            }
        }
        // bottom cap as a fan
        let first = starts[0];
        for k in 1..RING - 1 {
            faces.extend([first, first + k + 1, first + k].map(|i| i as u32));
        }
        let last = *starts.last().unwrap();
        match &part.apex {
            Some((along, skin)) => {
                let apex = vertices.len();
                let p = match part.axis {
                    Axis::Z => [part.center[0], part.center[1], *along],
                    Axis::X(sign) => [sign * along, part.center[0], part.center[1]],
                };
                vertices.push(p);
                skin_rows.push(skin.clone());
                part_of_vertex.push((pi, part.rings.len()));
                for k in 0..RING {
                    faces.extend([last + k, last + (k + 1) % RING, apex].map(|i| i as u32));
                }
            }
            None => {
                for k in 1..RING - 1 {
                    faces.extend([last, last + k, last + k + 1].map(|i| i as u32));
                }
            }
        }
        ring_start.push(starts);
    }
    let nv = vertices.len();

    let ring_row = |part: usize, ring: usize| -> Vec<f64> {
        let mut row = vec![0.0; nv];
        for k in 0..RING {
            row[ring_start[part][ring] + k] = 1.0 / RING as f64;
        }
        row
    };
    let vertex_row = |ids: &[usize]| -> Vec<f64> {
        let mut row = vec![0.0; nv];
        for &i in ids {
            row[i] += 1.0 / ids.len() as f64;
        }
        row
    };

    // joints: ring centroids
    let joint_rows = [
        ring_row(0, 0),
        ring_row(0, 1),
        ring_row(0, 2),
        ring_row(1, 0),
        ring_row(2, 0),
        ring_row(3, 0),
        ring_row(4, 0),
        ring_row(5, 0),
    ];

    // head: ring k=6 faces -Y (front); k=0 is +X (subject's left)
    let h0 = ring_start[1][0];
    let h1 = ring_start[1][1];
    let keypoint_names = [
        "nose", "left_eye", "right_eye", "left_ear", "right_ear", "left_shoulder",
        "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hip",
        "right_hip", "left_knee", "right_knee", "left_ankle", "right_ankle",
    ];
    let keypoint_rows = [
        vertex_row(&[h0 + 6, h1 + 6]),
        vertex_row(&[h1 + 6, h1 + 7]),
        vertex_row(&[h1 + 6, h1 + 5]),
        vertex_row(&[h0, h1]),
        vertex_row(&[h0 + 4, h1 + 4]),
        ring_row(2, 0),
        ring_row(3, 0),
        ring_row(2, 1),
        ring_row(3, 1),
        ring_row(2, 2),
        ring_row(3, 2),
        ring_row(4, 0),
        ring_row(5, 0),
        ring_row(4, 1),
        ring_row(5, 1),
        ring_row(4, 2),
        ring_row(5, 2),
    ];

    let mut skinning = vec![0.0; nv * nj];
    for (v, row) in skin_rows.iter().enumerate() {
        for &(j, w) in row {
            skinning[v * nj + j] = w;
        }
    }

    // shape basis: 0 height, 1 girth, 2 arm length, 3 leg length, 4 shoulder
    // width, 5..9 low-amplitude smooth patterns
    let mut shape_dirs = vec![0.0; nv * 3 * NUM_BETAS];
    for (v, p) in vertices.iter().enumerate() {
        let (part, ring) = part_of_vertex[v];
        let mut dirs = [[0.0f64; 3]; NUM_BETAS];
        dirs[0] = [0.0, 0.0, 0.05 * p[2]];
        let radial = match parts[part].axis {
            Axis::Z => [p[0] - parts[part].center[0], p[1] - parts[part].center[1], 0.0],
            Axis::X(_) => [0.0, p[1] - parts[part].center[0], p[2] - parts[part].center[1]],
        };
        dirs[1] = radial.map(|c| 0.15 * c);
        if let Axis::X(sign) = parts[part].axis {
            dirs[2] = [sign * 0.03 * ring as f64, 0.0, 0.0];
            dirs[4] = [sign * 0.02, 0.0, 0.0];
        }
        if part >= 4 {
            dirs[3] = [0.0, 0.0, -0.03 * ring as f64];
        }
        for (b, dir) in dirs.iter_mut().enumerate().skip(5) {
            let f = b as f64;
            *dir = [
                0.004 * (f * p[2] * 3.0).sin(),
                0.004 * (f * p[0] * 5.0).cos(),
                0.004 * (f * p[1] * 7.0 + p[2]).sin(),
            ];
        }
        for c in 0..3 {
            for b in 0..NUM_BETAS {
                shape_dirs[(v * 3 + c) * NUM_BETAS + b] = round4(dirs[b][c]);
            }
        }
    }

    let doc = ModelSpecDoc {
        num_vertices: nv,
        num_joints: nj,
        num_betas: NUM_BETAS,
        num_expression: 0,
        template_vertices: vertices.iter().flatten().copied().collect(),
        faces,
        parents,
        joint_names: joint_names.iter().map(|s| s.to_string()).collect(),
        joint_regressor: joint_rows.concat(),
        skinning_weights: skinning,
        shape_dirs,
        expr_dirs: Vec::new(),
        keypoint_names: keypoint_names.iter().map(|s| s.to_string()).collect(),
        keypoint_regressor: keypoint_rows.concat(),
    };
    let text = serde_json::to_string(&doc).expect("serialize model");
    std::fs::write(&out, text).expect("write model");
    eprintln!("wrote {out}: {nv} vertices, {} faces, {nj} joints", doc.faces.len() / 3);
}
