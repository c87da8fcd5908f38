//! Gaussian primitives, pinhole cameras and the covariance algebra used to
//! splat a 3D Gaussian onto the image plane.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Screen-space low-pass dilation added to projected covariances (pixel²).
pub const DILATION: f64 = 0.3;
/// Gaussians at or in front of this camera-space depth are culled.
pub const Z_NEAR: f64 = 0.01;

pub const SCENE_HEADER: &str = "# evsplat scene v1: x y z qw qx qy qz ls1 ls2 ls3 opacity_logit r g b";

/// Number of scalars per Gaussian in the flat parameter layout.
pub const PARAMS_PER_GAUSSIAN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3D {
    pub mean: [f64; 3],
    /// Quaternion `(w, x, y, z)`; normalized before use.
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl Gaussian3D {
    pub fn isotropic(mean: [f64; 3], scale: f64, opacity: f64, color: [f64; 3]) -> Self {
        let ls = scale.ln();
        Self {
            mean,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [ls; 3],
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn to_array(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut a = [0.0; PARAMS_PER_GAUSSIAN];
        a[0..3].copy_from_slice(&self.mean);
        a[3..7].copy_from_slice(&self.rotation);
        a[7..10].copy_from_slice(&self.log_scale);
        a[10] = self.opacity_logit;
        a[11..14].copy_from_slice(&self.color);
        a
    }

    pub fn from_slice(a: &[f64]) -> Self {
        Self {
            mean: [a[0], a[1], a[2]],
            rotation: [a[3], a[4], a[5], a[6]],
            log_scale: [a[7], a[8], a[9]],
            opacity_logit: a[10],
            color: [a[11], a[12], a[13]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian3D>,
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian3D>) -> Self {
        Self { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::InvalidScene(format!("gaussian {i} has a non-finite parameter")));
            }
            if g.rotation.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidScene(format!("gaussian {i} has a zero quaternion")));
            }
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.gaussians.iter().flat_map(|g| g.to_array()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self {
            gaussians: flat.chunks_exact(PARAMS_PER_GAUSSIAN).map(Gaussian3D::from_slice).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(SCENE_HEADER);
        s.push('\n');
        for g in &self.gaussians {
            let a = g.to_array();
            let fields: Vec<String> = a.iter().map(|v| format!("{v}")).collect();
            writeln!(s, "{}", fields.join(" ")).unwrap();
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Scene> {
        let mut gaussians = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg,
            };
            let vals = line
                .split_whitespace()
                .map(|f| f.parse::<f64>().map_err(|_| err(format!("bad number `{f}`"))))
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != PARAMS_PER_GAUSSIAN {
                return Err(err(format!(
                    "expected {PARAMS_PER_GAUSSIAN} fields per gaussian, got {}",
                    vals.len()
                )));
            }
            gaussians.push(Gaussian3D::from_slice(&vals));
        }
        let scene = Scene { gaussians };
        scene.validate()?;
        Ok(scene)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Scene> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Scene::parse(&fs::read_to_string(path)?, path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera at `eye` looking at `target`, y axis pointing down in the image.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        // Rows of the world-to-camera rotation are the camera axes in world space.
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = UnitQuaternion::from_matrix(&r);
        let translation = -(rotation * eye);
        Self { rotation, translation }
    }

    /// Spherical-linear rotation, linear translation.
    pub fn interpolate(&self, other: &Pose, t: f64) -> Pose {
        let rotation = if t == 0.0 {
            self.rotation
        } else if t == 1.0 {
            other.rotation
        } else {
            self.rotation
                .try_slerp(&other.rotation, t, 1e-12)
                .unwrap_or(self.rotation)
        };
        Pose {
            rotation,
            translation: self.translation.lerp(&other.translation, t),
        }
    }

    /// `(w, x, y, z)` followed by the translation.
    pub fn to_wxyz_t(&self) -> ([f64; 4], [f64; 3]) {
        let q = self.rotation.quaternion();
        (
            [q.w, q.i, q.j, q.k],
            [self.translation.x, self.translation.y, self.translation.z],
        )
    }

    pub fn from_wxyz_t(q: [f64; 4], t: [f64; 3]) -> Result<Pose> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if quat.norm() == 0.0 || !quat.norm().is_finite() {
            return Err(Error::invalid("pose quaternion must be nonzero and finite"));
        }
        Ok(Pose {
            rotation: UnitQuaternion::from_quaternion(quat),
            translation: Vector3::new(t[0], t[1], t[2]),
        })
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub intrinsics: Intrinsics,
}

impl Camera {
    pub fn new(pose: &Pose, intrinsics: Intrinsics) -> Result<Camera> {
        let cam = Camera {
            rotation: pose.rotation.to_rotation_matrix().into_inner(),
            translation: pose.translation,
            intrinsics,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if k.width == 0 || k.height == 0 {
            return Err(Error::invalid("sensor must have nonzero size"));
        }
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity()).norm();
        if err >= 1e-6 {
            return Err(Error::invalid(format!("camera rotation not orthonormal (error {err:e})")));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    /// Pixel coordinates of a camera-space point; pixel `(x, y)` has its
    /// center at `(x + 0.5, y + 0.5)`.
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let k = &self.intrinsics;
        Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_from_quat(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn normalize_quat(q: &[f64; 4]) -> Result<([f64; 4], f64)> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::invalid("quaternion must be nonzero and finite"));
    }
    Ok(([q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm], norm))
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn covariance_3d(q: &[f64; 4], log_scale: &[f64; 3]) -> Result<Matrix3<f64>> {
    let (qn, _) = normalize_quat(q)?;
    let r = rotation_from_quat(&qn);
    let s = Matrix3::from_diagonal(&Vector3::new(log_scale[0].exp(), log_scale[1].exp(), log_scale[2].exp()));
    let m = r * s;
    Ok(m * m.transpose())
}

/// Affine approximation of the perspective projection at a camera-space point.
pub fn perspective_jacobian(fx: f64, fy: f64, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let (x, y, z) = (p.x, p.y, p.z);
    Matrix2x3::new(fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z))
}

/// Image-plane covariance `J W Σ Wᵀ Jᵀ + dilation·I`, or `None` when the
/// mean is at or in front of the near plane.
pub fn project_covariance(sigma: &Matrix3<f64>, cam: &Camera, mu_cam: &Vector3<f64>) -> Option<Matrix2<f64>> {
    if mu_cam.z <= Z_NEAR {
        return None;
    }
    let j = perspective_jacobian(cam.intrinsics.fx, cam.intrinsics.fy, mu_cam);
    Some(project_with(&j, &cam.rotation, sigma))
}

pub(crate) fn project_with(j: &Matrix2x3<f64>, w: &Matrix3<f64>, sigma: &Matrix3<f64>) -> Matrix2<f64> {
    let t = j * w;
    t * sigma * t.transpose() + Matrix2::identity() * DILATION
}

/// `exp(-½ δᵀ Σ'⁻¹ δ)`, or `None` if the covariance is singular.
pub fn gaussian_weight(delta: &Vector2<f64>, sigma2d: &Matrix2<f64>) -> Option<f64> {
    let inv = sigma2d.try_inverse()?;
    Some((-0.5 * delta.dot(&(inv * delta))).exp())
}
