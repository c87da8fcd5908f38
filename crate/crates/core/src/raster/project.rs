use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::Result;
use crate::splat::{normalize_quat, perspective_jacobian, rotation_from_quat, sigmoid, Camera, Scene, DILATION, Z_NEAR};

use super::RasterSettings;

/// A Gaussian after projection, plus the intermediates the backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct Splat {
    pub index: usize,
    pub depth: f64,
    pub mean2d: Vector2<f64>,
    /// Inverse screen covariance as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    /// Inclusive pixel rectangle `(x0, x1, y0, y1)`; `None` if off screen.
    pub bbox: Option<(usize, usize, usize, usize)>,

    pub mu_cam: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub sigma3: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub scale: Vector3<f64>,
    pub quat: [f64; 4],
    pub quat_norm: f64,
}

impl Splat {
    #[inline]
    pub fn covers(&self, x: usize, y: usize) -> bool {
        match self.bbox {
            Some((x0, x1, y0, y1)) => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            None => false,
        }
    }

    pub fn conic_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.conic[0], self.conic[1], self.conic[1], self.conic[2])
    }
}

/// Inclusive pixel index range whose centers lie within `radius` of `center`.
fn pixel_span(center: f64, radius: f64, size: usize) -> Option<(usize, usize)> {
    let lo = (center - radius - 0.5).ceil().max(0.0);
    let hi = (center + radius - 0.5).floor().min(size as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize))
}

/// Projects every visible Gaussian and sorts front to back (ties by index).
pub(crate) fn project_scene(scene: &Scene, cam: &Camera, settings: &RasterSettings) -> Result<Vec<Splat>> {
    scene.validate()?;
    let k = cam.intrinsics;
    let mut splats = Vec::with_capacity(scene.len());
    for (index, g) in scene.gaussians.iter().enumerate() {
        let mu = Vector3::new(g.mean[0], g.mean[1], g.mean[2]);
        let mu_cam = cam.to_camera(&mu);
        if mu_cam.z <= Z_NEAR {
            continue;
        }
        let (quat, quat_norm) = normalize_quat(&g.rotation)?;
        let rotation = rotation_from_quat(&quat);
        let scale = Vector3::new(g.log_scale[0].exp(), g.log_scale[1].exp(), g.log_scale[2].exp());
        let m = rotation * Matrix3::from_diagonal(&scale);
        let sigma3 = m * m.transpose();
        let jacobian = perspective_jacobian(k.fx, k.fy, &mu_cam);
        let t = jacobian * cam.rotation;
        let cov = t * sigma3 * t.transpose();
        let (a, b, c) = (cov[(0, 0)] + DILATION, 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)] + DILATION);
        let det = a * c - b * b;
        if !(det > 0.0) {
            continue;
        }
        let conic = [c / det, -b / det, a / det];
        let mean2d = cam.project(&mu_cam);
        let mid = 0.5 * (a + c);
        let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
        let radius = settings.extent_sigmas * lambda_max.sqrt();
        let bbox = match (
            pixel_span(mean2d.x, radius, k.width),
            pixel_span(mean2d.y, radius, k.height),
        ) {
            (Some((x0, x1)), Some((y0, y1))) => Some((x0, x1, y0, y1)),
            _ => None,
        };
        splats.push(Splat {
            index,
            depth: mu_cam.z,
            mean2d,
            conic,
            opacity: sigmoid(g.opacity_logit),
            color: g.color,
            bbox,
            mu_cam,
            jacobian,
            sigma3,
            rotation,
            scale,
            quat,
            quat_norm,
        });
    }
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    Ok(splats)
}
