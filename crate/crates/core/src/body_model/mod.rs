//! Parametric articulated body model.
//!
//! A [`BodyModel`] holds a rest-pose template mesh, a topologically ordered
//! kinematic tree, a joint regressor, skinning weights and shape blendshapes.
//! [`BodyModel::forward`] evaluates the posing function: shape blendshapes are
//! added to the template, joints are regressed from the shaped mesh, per-joint
//! world transforms are composed down the tree from parent-relative
//! axis-angle rotations, and the mesh is deformed by linear blend skinning.
//! Pose-corrective blendshapes are not modelled.
//!
//! Models are loaded from a JSON document (see `docs/model_spec.md`); every
//! structural invariant is checked on load.

mod rotation;

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rotation::{
    canonicalize_axis_angle, rodrigues, skew, wrap_degrees, EulerAngles, GIMBAL_PITCH_DEG,
};

/// Number of shape coefficients carried by [`SmplxParams`].
pub const NUM_BETAS: usize = 10;
/// Number of expression coefficients carried by [`SmplxParams`].
pub const NUM_EXPRESSION: usize = 10;

const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BodyModelError {
    #[error("cannot read model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed model document: {0}")]
    Malformed(String),
    #[error("invalid model: {0}")]
    Invariant(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("model has no joint named {0:?}")]
    MissingJoint(String),
}

type Result<T> = std::result::Result<T, BodyModelError>;

/// On-disk model document. Arrays are flat and row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpecDoc {
    pub num_vertices: usize,
    pub num_joints: usize,
    pub num_betas: usize,
    #[serde(default)]
    pub num_expression: usize,
    pub template_vertices: Vec<f64>,
    pub faces: Vec<u32>,
    /// Parent joint index, `-1` for the root.
    pub parents: Vec<i64>,
    pub joint_names: Vec<String>,
    /// `num_joints x num_vertices`
    pub joint_regressor: Vec<f64>,
    /// `num_vertices x num_joints`
    pub skinning_weights: Vec<f64>,
    /// `num_vertices x 3 x num_betas`
    pub shape_dirs: Vec<f64>,
    /// `num_vertices x 3 x num_expression`
    #[serde(default)]
    pub expr_dirs: Vec<f64>,
    /// Named 2D-keypoint layout regressed from posed vertices.
    #[serde(default)]
    pub keypoint_names: Vec<String>,
    /// `len(keypoint_names) x num_vertices`
    #[serde(default)]
    pub keypoint_regressor: Vec<f64>,
}

/// Immutable body model; safe to share across worker threads.
#[derive(Debug, Clone)]
pub struct BodyModel {
    template_vertices: Vec<Vector3<f64>>,
    faces: Vec<[u32; 3]>,
    parents: Vec<Option<usize>>,
    joint_names: Vec<String>,
    /// dense rows, one per joint
    joint_regressor: Vec<Vec<f64>>,
    /// dense rows, one per vertex
    skinning_weights: Vec<Vec<f64>>,
    /// `shape_dirs[v][b]` is the displacement of vertex `v` for coefficient `b`
    shape_dirs: Vec<Vec<Vector3<f64>>>,
    expr_dirs: Vec<Vec<Vector3<f64>>>,
    keypoint_names: Vec<String>,
    keypoint_regressor: Vec<Vec<f64>>,
}

/// Pose, shape, expression and global translation of one body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmplxParams {
    /// Parent-relative axis-angle per joint, radians. Serialized flat.
    #[serde(with = "crate::flat")]
    pub theta: Vec<[f64; 3]>,
    pub beta: Vec<f64>,
    pub psi: Vec<f64>,
    pub translation: [f64; 3],
}

impl SmplxParams {
    pub fn zeros(num_joints: usize) -> Self {
        Self {
            theta: vec![[0.0; 3]; num_joints],
            beta: vec![0.0; NUM_BETAS],
            psi: vec![0.0; NUM_EXPRESSION],
            translation: [0.0; 3],
        }
    }

    /// Copy with every axis-angle row canonicalized to magnitude `<= pi`.
    pub fn canonicalized(&self) -> Result<Self> {
        let theta = self
            .theta
            .iter()
            .map(|row| canonicalize_axis_angle(*row))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            theta,
            ..self.clone()
        })
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self.theta.iter().flatten().all(|v| v.is_finite())
            && self.beta.iter().all(|v| v.is_finite())
            && self.psi.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(BodyModelError::NonFinite("pose parameters".into()))
        }
    }
}

/// Output of [`BodyModel::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct PosedMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub joints: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
    /// World rotation of every joint.
    pub joint_rotations: Vec<Matrix3<f64>>,
}

/// Rigid transform `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Rigid {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Rigid {
    fn compose(&self, other: &Rigid) -> Rigid {
        Rigid {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

fn dense_rows(flat: &[f64], rows: usize, cols: usize, what: &str) -> Result<Vec<Vec<f64>>> {
    if flat.len() != rows * cols {
        return Err(BodyModelError::Malformed(format!(
            "{what}: expected {rows}x{cols} = {} values, found {}",
            rows * cols,
            flat.len()
        )));
    }
    if cols == 0 {
        return Ok(vec![Vec::new(); rows]);
    }
    Ok(flat.chunks_exact(cols).map(<[f64]>::to_vec).collect())
}

fn blend_dirs(flat: &[f64], num_vertices: usize, count: usize, what: &str) -> Result<Vec<Vec<Vector3<f64>>>> {
    if count == 0 {
        if !flat.is_empty() {
            return Err(BodyModelError::Malformed(format!("{what}: data present but count is 0")));
        }
        return Ok(vec![Vec::new(); num_vertices]);
    }
    if flat.len() != num_vertices * 3 * count {
        return Err(BodyModelError::Malformed(format!(
            "{what}: expected {num_vertices}x3x{count} values, found {}",
            flat.len()
        )));
    }
    Ok((0..num_vertices)
        .map(|v| {
            (0..count)
                .map(|b| {
                    let at = |c: usize| flat[(v * 3 + c) * count + b];
                    Vector3::new(at(0), at(1), at(2))
                })
                .collect()
        })
        .collect())
}

impl BodyModel {
    /// Reads and validates a model document.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| BodyModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let doc: ModelSpecDoc =
            serde_json::from_str(&text).map_err(|e| BodyModelError::Malformed(e.to_string()))?;
        Self::from_doc(doc)
    }

    pub fn from_doc(doc: ModelSpecDoc) -> Result<Self> {
        let nv = doc.num_vertices;
        let nj = doc.num_joints;
        if nv == 0 || nj == 0 {
            return Err(BodyModelError::Malformed("model needs vertices and joints".into()));
        }
        if doc.num_betas != NUM_BETAS {
            return Err(BodyModelError::Malformed(format!(
                "num_betas must be {NUM_BETAS}, found {}",
                doc.num_betas
            )));
        }
        if doc.num_expression != 0 && doc.num_expression != NUM_EXPRESSION {
            return Err(BodyModelError::Malformed(format!(
                "num_expression must be 0 or {NUM_EXPRESSION}, found {}",
                doc.num_expression
            )));
        }
        if doc.template_vertices.len() != nv * 3 {
            return Err(BodyModelError::Malformed(format!(
                "template_vertices: expected {} values, found {}",
                nv * 3,
                doc.template_vertices.len()
            )));
        }
        if doc.faces.len() % 3 != 0 {
            return Err(BodyModelError::Malformed("faces length is not a multiple of 3".into()));
        }
        if doc.parents.len() != nj || doc.joint_names.len() != nj {
            return Err(BodyModelError::Malformed(
                "parents and joint_names must have num_joints entries".into(),
            ));
        }
        let all_numbers = doc
            .template_vertices
            .iter()
            .chain(&doc.joint_regressor)
            .chain(&doc.skinning_weights)
            .chain(&doc.shape_dirs)
            .chain(&doc.expr_dirs)
            .chain(&doc.keypoint_regressor);
        if all_numbers.into_iter().any(|v| !v.is_finite()) {
            return Err(BodyModelError::NonFinite("model arrays".into()));
        }

        let template_vertices: Vec<_> = doc
            .template_vertices
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        let faces: Vec<[u32; 3]> = doc.faces.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        for (f, face) in faces.iter().enumerate() {
            if face.iter().any(|&i| i as usize >= nv) {
                return Err(BodyModelError::Invariant(format!(
                    "face {f} references a vertex index >= {nv}"
                )));
            }
        }

        let mut parents = Vec::with_capacity(nj);
        for (j, &p) in doc.parents.iter().enumerate() {
            if j == 0 {
                if p != -1 {
                    return Err(BodyModelError::Invariant("joint 0 must be the root (parent -1)".into()));
                }
                parents.push(None);
            } else if p < 0 || p as usize >= j {
                return Err(BodyModelError::Invariant(format!(
                    "parent[{j}] = {p} violates topological order (must be in 0..{j})"
                )));
            } else {
                parents.push(Some(p as usize));
            }
        }

        let joint_regressor = dense_rows(&doc.joint_regressor, nj, nv, "joint_regressor")?;
        for (j, row) in joint_regressor.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(BodyModelError::Invariant(format!(
                    "joint_regressor row {j} sums to {sum}, expected 1"
                )));
            }
        }
        let skinning_weights = dense_rows(&doc.skinning_weights, nv, nj, "skinning_weights")?;
        for (v, row) in skinning_weights.iter().enumerate() {
            if let Some(w) = row.iter().find(|w| **w < 0.0) {
                return Err(BodyModelError::Invariant(format!(
                    "skinning_weights row {v} has negative weight {w}"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(BodyModelError::Invariant(format!(
                    "skinning_weights row {v} sums to {sum}, expected 1"
                )));
            }
        }
        let shape_dirs = blend_dirs(&doc.shape_dirs, nv, doc.num_betas, "shape_dirs")?;
        let expr_dirs = blend_dirs(&doc.expr_dirs, nv, doc.num_expression, "expr_dirs")?;

        let keypoint_regressor = dense_rows(
            &doc.keypoint_regressor,
            doc.keypoint_names.len(),
            nv,
            "keypoint_regressor",
        )?;
        for (k, row) in keypoint_regressor.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(BodyModelError::Invariant(format!(
                    "keypoint_regressor row {k} sums to {sum}, expected 1"
                )));
            }
        }

        Ok(Self {
            template_vertices,
            faces,
            parents,
            joint_names: doc.joint_names,
            joint_regressor,
            skinning_weights,
            shape_dirs,
            expr_dirs,
            keypoint_names: doc.keypoint_names,
            keypoint_regressor,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn template_vertices(&self) -> &[Vector3<f64>] {
        &self.template_vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn joint_regressor(&self) -> &[Vec<f64>] {
        &self.joint_regressor
    }

    pub fn shape_dir(&self, vertex: usize, coefficient: usize) -> Vector3<f64> {
        self.shape_dirs[vertex][coefficient]
    }

    pub fn has_expression_basis(&self) -> bool {
        self.expr_dirs.first().is_some_and(|d| !d.is_empty())
    }

    /// Names of the 2D keypoint layout; falls back to joint names.
    pub fn keypoint_names(&self) -> &[String] {
        if self.keypoint_names.is_empty() {
            &self.joint_names
        } else {
            &self.keypoint_names
        }
    }

    pub fn num_keypoints(&self) -> usize {
        self.keypoint_names().len()
    }

    fn check_params(&self, params: &SmplxParams) -> Result<()> {
        if params.theta.len() != self.num_joints() {
            return Err(BodyModelError::Dimension(format!(
                "theta has {} rows, model has {} joints",
                params.theta.len(),
                self.num_joints()
            )));
        }
        check_beta(&params.beta)?;
        if params.psi.len() != NUM_EXPRESSION {
            return Err(BodyModelError::Dimension(format!(
                "psi has {} entries, expected {NUM_EXPRESSION}",
                params.psi.len()
            )));
        }
        params.check_finite()
    }

    fn shaped_vertices(&self, beta: &[f64], psi: Option<&[f64]>) -> Vec<Vector3<f64>> {
        self.template_vertices
            .iter()
            .enumerate()
            .map(|(v, rest)| {
                let mut p = *rest;
                for (b, coef) in beta.iter().enumerate() {
                    p += self.shape_dirs[v][b] * *coef;
                }
                if let Some(psi) = psi {
                    for (e, dir) in self.expr_dirs[v].iter().enumerate() {
                        p += dir * psi[e];
                    }
                }
                p
            })
            .collect()
    }

    fn regress(&self, vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        self.joint_regressor
            .iter()
            .map(|row| {
                row.iter()
                    .zip(vertices)
                    .fold(Vector3::zeros(), |acc, (w, v)| acc + v * *w)
            })
            .collect()
    }

    /// Joint locations of the shaped rest mesh.
    pub fn regress_joints(&self, beta: &[f64]) -> Result<Vec<Vector3<f64>>> {
        check_beta(beta)?;
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(BodyModelError::NonFinite("beta".into()));
        }
        Ok(self.regress(&self.shaped_vertices(beta, None)))
    }

    /// Per-joint skinning transforms relative to the rest pose, plus world rotations.
    fn skinning_transforms(&self, params: &SmplxParams, rest_joints: &[Vector3<f64>]) -> Vec<Rigid> {
        let translation = Vector3::from(params.translation);
        let mut relative: Vec<Rigid> = Vec::with_capacity(self.num_joints());
        for (j, parent) in self.parents.iter().enumerate() {
            let rotation = rodrigues(&Vector3::from(params.theta[j]));
            // rotate about the rest joint: x -> R x + (J - R J)
            let local = Rigid {
                rotation,
                translation: rest_joints[j] - rotation * rest_joints[j],
            };
            let world = match parent {
                None => Rigid {
                    rotation: local.rotation,
                    translation: local.translation + translation,
                },
                Some(p) => relative[*p].compose(&local),
            };
            relative.push(world);
        }
        relative
    }

    /// Poses the model: shape blendshapes, joint regression, kinematic chain
    /// and linear blend skinning.
    pub fn forward(&self, params: &SmplxParams) -> Result<PosedMesh> {
        self.check_params(params)?;
        let psi = self.has_expression_basis().then_some(params.psi.as_slice());
        let shaped = self.shaped_vertices(&params.beta, psi);
        let rest_joints = self.regress(&shaped);
        let transforms = self.skinning_transforms(params, &rest_joints);

        let joints = transforms
            .iter()
            .zip(&rest_joints)
            .map(|(t, j)| t.apply(j))
            .collect();
        let vertices = shaped
            .iter()
            .zip(&self.skinning_weights)
            .map(|(v, weights)| {
                let mut rotation = Matrix3::zeros();
                let mut offset = Vector3::zeros();
                for (w, t) in weights.iter().zip(&transforms) {
                    if *w != 0.0 {
                        rotation += t.rotation * *w;
                        offset += t.translation * *w;
                    }
                }
                rotation * v + offset
            })
            .collect();

        Ok(PosedMesh {
            vertices,
            joints,
            faces: self.faces.clone(),
            joint_rotations: transforms.iter().map(|t| t.rotation).collect(),
        })
    }

    /// 3D keypoints of a posed mesh in the model's keypoint layout.
    pub fn keypoints(&self, mesh: &PosedMesh) -> Vec<Vector3<f64>> {
        if self.keypoint_regressor.is_empty() {
            return mesh.joints.clone();
        }
        self.keypoint_regressor
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&mesh.vertices)
                    .fold(Vector3::zeros(), |acc, (w, v)| acc + v * *w)
            })
            .collect()
    }

    /// Ground-truth head orientation: Euler decomposition of the composed
    /// rotation along the chain ending at the `head` joint.
    pub fn head_pose(&self, params: &SmplxParams) -> Result<EulerAngles> {
        for name in ["root", "neck", "head"] {
            if self.joint_index(name).is_none() {
                return Err(BodyModelError::MissingJoint(name.into()));
            }
        }
        self.check_params(params)?;
        let head = self.joint_index("head").expect("checked above");
        let mut chain = vec![head];
        while let Some(p) = self.parents[*chain.last().expect("non-empty")] {
            chain.push(p);
        }
        let rotation = chain
            .iter()
            .rev()
            .fold(Matrix3::identity(), |acc, j| acc * rodrigues(&Vector3::from(params.theta[*j])));
        Ok(EulerAngles::from_matrix(&rotation))
    }
}

fn check_beta(beta: &[f64]) -> Result<()> {
    if beta.len() != NUM_BETAS {
        return Err(BodyModelError::Dimension(format!(
            "beta has {} entries, expected {NUM_BETAS}",
            beta.len()
        )));
    }
    Ok(())
}
