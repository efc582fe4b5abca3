use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::RenderError;
use crate::keypoints::Keypoints2D;

/// Points at or in front of this camera-space depth are not projected.
pub const Z_NEAR: f64 = 1e-4;

/// Pinhole camera with a world-to-camera rigid extrinsic.
///
/// Camera axes: x right, y down, z forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// (fx, fy) in pixels
    pub focal: [f64; 2],
    /// (cx, cy) in pixels
    pub principal: [f64; 2],
    /// (width, height)
    pub resolution: [u32; 2],
    /// Row-major world-to-camera rotation.
    #[serde(with = "crate::flat::mat3")]
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

/// Automatic framing of a subject for the default camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRig {
    pub width: u32,
    pub height: u32,
    /// Focal length in pixels for a 1024 px tall image; scaled with height.
    pub focal_per_1024: f64,
    /// Fraction of the image height the bounding sphere spans.
    pub fill: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            focal_per_1024: 5000.0,
            fill: 0.8,
        }
    }
}

/// Front view of a Z-up subject facing -Y: camera x = world +X,
/// camera y = world -Z, camera z = world +Y.
const FRONT_VIEW: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]];

impl Camera {
    pub fn new(
        focal: [f64; 2],
        principal: [f64; 2],
        resolution: [u32; 2],
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, RenderError> {
        let cam = Self {
            focal,
            principal,
            resolution,
            rotation: rotation.transpose().into(),
            translation: translation.into(),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.focal[0] > 0.0 && self.focal[1] > 0.0) {
            return Err(RenderError::InvalidCamera("focal lengths must be positive".into()));
        }
        if self.resolution[0] == 0 || self.resolution[1] == 0 {
            return Err(RenderError::InvalidCamera("resolution must be positive".into()));
        }
        let r = self.rotation_matrix();
        let err = (r.transpose() * r - Matrix3::identity()).amax();
        if !(err <= 1e-6) {
            return Err(RenderError::InvalidCamera(format!(
                "extrinsic rotation is not orthonormal (max |R^T R - I| = {err:e})"
            )));
        }
        if self.principal.iter().chain(&self.translation).any(|v| !v.is_finite()) {
            return Err(RenderError::InvalidCamera("non-finite intrinsics or translation".into()));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from(self.rotation).transpose()
    }

    pub fn width(&self) -> usize {
        self.resolution[0] as usize
    }

    pub fn height(&self) -> usize {
        self.resolution[1] as usize
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + Vector3::from(self.translation)
    }

    /// Pixel coordinates of a camera-space point (no visibility check).
    pub fn to_pixel(&self, pc: &Vector3<f64>) -> [f64; 2] {
        [
            self.focal[0] * pc.x / pc.z + self.principal[0],
            self.focal[1] * pc.y / pc.z + self.principal[1],
        ]
    }

    /// Default camera framing `vertices`: long focal length, looking along
    /// world +Y with Z up, placed so the bounding sphere spans `rig.fill` of
    /// the image height.
    pub fn framing(vertices: &[Vector3<f64>], rig: &CameraRig) -> Result<Self, RenderError> {
        if vertices.is_empty() {
            return Err(RenderError::EmptyMesh);
        }
        let (lo, hi) = vertices.iter().fold(
            (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), v| (lo.inf(v), hi.sup(v)),
        );
        let center = (lo + hi) * 0.5;
        let radius = vertices
            .iter()
            .map(|v| (v - center).norm())
            .fold(0.0, f64::max)
            .max(1e-6);
        let f = rig.focal_per_1024 * rig.height as f64 / 1024.0;
        let distance = 2.0 * f * radius / (rig.fill * rig.height as f64);
        let rotation = Matrix3::from(FRONT_VIEW).transpose();
        let eye = center - Vector3::y() * distance;
        Self::new(
            [f, f],
            [rig.width as f64 / 2.0, rig.height as f64 / 2.0],
            [rig.width, rig.height],
            rotation,
            -(rotation * eye),
        )
    }

    /// Same camera turned by `degrees` about its own vertical (y) axis.
    pub fn yawed(&self, degrees: f64) -> Self {
        let turn = crate::body_model::rodrigues(&(Vector3::y() * degrees.to_radians()));
        Self {
            rotation: (turn * self.rotation_matrix()).transpose().into(),
            translation: (turn * Vector3::from(self.translation)).into(),
            ..self.clone()
        }
    }
}

/// Pinhole projection. Points with camera depth `<= Z_NEAR` are invisible;
/// off-image points keep their coordinates and stay visible.
pub fn project(camera: &Camera, points: &[Vector3<f64>]) -> Keypoints2D {
    let mut out = Vec::with_capacity(points.len());
    let mut visible = Vec::with_capacity(points.len());
    for p in points {
        let pc = camera.world_to_camera(p);
        if pc.z > Z_NEAR {
            out.push(camera.to_pixel(&pc));
            visible.push(true);
        } else {
            out.push([0.0, 0.0]);
            visible.push(false);
        }
    }
    Keypoints2D::new(out, visible)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_camera(f: f64, c: f64, res: u32) -> Camera {
        Camera::new([f, f], [c, c], [res, res], Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn projection_examples() {
        let cam = identity_camera(100.0, 50.0, 100);
        let k = project(&cam, &[Vector3::new(0.0, 0.0, 3.0)]);
        assert_eq!(k.points[0], [50.0, 50.0]);
        assert!(k.visible[0]);

        let k = project(&cam, &[Vector3::new(1.0, 0.0, 5.0)]);
        assert_eq!(k.points[0], [70.0, 50.0]);

        let k = project(&cam, &[Vector3::new(0.0, 0.0, -1.0)]);
        assert!(!k.visible[0]);

        // off-image but in front: visible, coordinates retained
        let k = project(&cam, &[Vector3::new(10.0, 0.0, 1.0)]);
        assert!(k.visible[0]);
        assert_eq!(k.points[0], [1050.0, 50.0]);
    }

    #[test]
    fn projection_scales_with_intrinsics() {
        let pts: Vec<_> = (0..20)
            .map(|i| Vector3::new(i as f64 * 0.1 - 1.0, 0.3 - i as f64 * 0.05, 2.0 + i as f64))
            .collect();
        let base = identity_camera(80.0, 32.0, 64);
        let c = 4.0;
        let scaled = identity_camera(80.0 * c, 32.0 * c, 256);
        let a = project(&base, &pts);
        let b = project(&scaled, &pts);
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!([p[0] * c, p[1] * c], *q);
        }
    }

    #[test]
    fn rejects_invalid_cameras() {
        let r = Matrix3::identity() * 1.1;
        assert!(Camera::new([1.0, 1.0], [0.0, 0.0], [4, 4], r, Vector3::zeros()).is_err());
        assert!(Camera::new([0.0, 1.0], [0.0, 0.0], [4, 4], Matrix3::identity(), Vector3::zeros()).is_err());
        assert!(Camera::new([1.0, 1.0], [0.0, 0.0], [0, 4], Matrix3::identity(), Vector3::zeros()).is_err());
    }

    #[test]
    fn framing_centres_subject() {
        let verts = vec![Vector3::new(-0.5, -0.1, 0.0), Vector3::new(0.5, 0.1, 1.8)];
        let cam = Camera::framing(&verts, &CameraRig::default()).unwrap();
        let center = project(&cam, &[Vector3::new(0.0, 0.0, 0.9)]);
        assert!((center.points[0][0] - 256.0).abs() < 1e-9);
        assert!((center.points[0][1] - 256.0).abs() < 1e-9);
        // head (high z) projects above feet (small image y)
        let k = project(&cam, &verts);
        assert!(k.points[1][1] < k.points[0][1]);

        let away = project(&cam.yawed(180.0), &verts);
        assert_eq!(away.num_visible(), 0);
    }
}
