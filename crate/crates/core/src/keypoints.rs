//! 2D keypoints and the default COCO-17 body layout.

use serde::{Deserialize, Serialize};

/// Projected or detected 2D keypoints in pixels with per-point visibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoints2D {
    #[serde(with = "crate::flat")]
    pub points: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl Keypoints2D {
    pub fn new(points: Vec<[f64; 2]>, visible: Vec<bool>) -> Self {
        assert_eq!(points.len(), visible.len(), "one visibility flag per point");
        Self { points, visible }
    }

    /// All points visible.
    pub fn visible_points(points: Vec<[f64; 2]>) -> Self {
        let visible = vec![true; points.len()];
        Self { points, visible }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_visible(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    /// Iterator over the visible points.
    pub fn iter_visible(&self) -> impl Iterator<Item = &[f64; 2]> {
        self.points.iter().zip(&self.visible).filter(|(_, v)| **v).map(|(p, _)| p)
    }

    /// Applies `f` to every point, keeping visibility.
    pub fn map_points(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        Self {
            points: self.points.iter().map(|p| f(*p)).collect(),
            visible: self.visible.clone(),
        }
    }
}

pub const COCO_KEYPOINT_NAMES: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Published COCO per-keypoint sigmas.
pub const COCO_SIGMAS: [f64; 17] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107,
    0.087, 0.087, 0.089, 0.089,
];

/// COCO limb list, zero-based keypoint indices.
pub const COCO_BONES: [(usize, usize); 19] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];
