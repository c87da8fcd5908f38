//! Analytic adjoint of [`render`](super::render).

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::splat::{Camera, Scene, PARAMS_PER_GAUSSIAN};

use super::{composite_pixel, project_scene, Contribution, RasterSettings, RenderPath, Splat, TileBins};

/// Partials of a scalar loss with respect to one Gaussian's parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaussianGrad {
    pub mean: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl GaussianGrad {
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
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGradients {
    pub gaussians: Vec<GaussianGrad>,
}

impl SceneGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            gaussians: vec![GaussianGrad::default(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.gaussians.iter().flat_map(|g| g.to_array()).collect()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &SceneGradients, scale: f64) {
        for (a, b) in self.gaussians.iter_mut().zip(&other.gaussians) {
            let mut sum = a.to_array();
            for (x, y) in sum.iter_mut().zip(b.to_array()) {
                *x += scale * y;
            }
            *a = GaussianGrad::from_slice(&sum);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.gaussians.iter().all(|g| g.to_array().iter().all(|v| v.is_finite()))
    }
}

/// Screen-space partials of one splat: mean (2), conic (a, b, c) as a
/// symmetric-matrix gradient, opacity logit and color.
const GRAD2D: usize = 9;

type Grad2D = [f64; GRAD2D];

fn pixel_backward(
    splats: &[Splat],
    contributions: &[Contribution],
    upstream: [f64; 3],
    background: [f64; 3],
    mut accumulate: impl FnMut(usize, &Grad2D),
) {
    // Color of everything behind the current splat, normalized by the
    // transmittance in front of it.
    let mut behind = background;
    for c in contributions.iter().rev() {
        let s = &splats[c.splat];
        let mut g = [0.0; GRAD2D];
        let mut d_alpha = 0.0;
        for ch in 0..3 {
            g[6 + ch] = c.alpha * c.transmittance * upstream[ch];
            d_alpha += c.transmittance * (s.color[ch] - behind[ch]) * upstream[ch];
            behind[ch] = c.alpha * s.color[ch] + (1.0 - c.alpha) * behind[ch];
        }
        if !c.clamped {
            let sig = s.opacity;
            g[5] = d_alpha * c.weight * sig * (1.0 - sig);
            let d_power = d_alpha * sig * c.weight;
            let [qa, qb, qc] = s.conic;
            g[0] = d_power * (qa * c.dx + qb * c.dy);
            g[1] = d_power * (qb * c.dx + qc * c.dy);
            g[2] = -0.5 * d_power * c.dx * c.dx;
            g[3] = -0.5 * d_power * c.dx * c.dy;
            g[4] = -0.5 * d_power * c.dy * c.dy;
        }
        accumulate(c.splat, &g);
    }
}

fn upstream_at(upstream: &Image, x: usize, y: usize) -> [f64; 3] {
    [upstream.get(x, y, 0), upstream.get(x, y, 1), upstream.get(x, y, 2)]
}

fn add_into(dst: &mut Grad2D, src: &Grad2D) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Gradients of a scalar loss with respect to every Gaussian parameter, given
/// `upstream = dL/d image` for the render of `scene` from `cam`.
pub fn render_backward(
    scene: &Scene,
    cam: &Camera,
    background: [f64; 3],
    upstream: &Image,
    settings: &RasterSettings,
) -> Result<SceneGradients> {
    let (width, height) = (cam.width(), cam.height());
    if upstream.width() != width || upstream.height() != height || upstream.channels() != 3 {
        return Err(Error::invalid(format!(
            "upstream gradient is {}x{}x{}, render is {width}x{height}x3",
            upstream.width(),
            upstream.height(),
            upstream.channels()
        )));
    }
    let splats = project_scene(scene, cam, settings)?;
    let mut screen = vec![[0.0; GRAD2D]; splats.len()];

    match settings.path {
        RenderPath::Reference => {
            let mut rec = Vec::new();
            for y in 0..height {
                for x in 0..width {
                    rec.clear();
                    composite_pixel(&splats, 0..splats.len(), x, y, settings, background, Some(&mut rec));
                    pixel_backward(&splats, &rec, upstream_at(upstream, x, y), background, |pos, g| {
                        add_into(&mut screen[pos], g)
                    });
                }
            }
        }
        RenderPath::Tiled => {
            let bins = TileBins::build(&splats, width, height, settings.tile_size);
            let tile_grads = |tile: usize| -> Vec<Grad2D> {
                let (x0, x1, y0, y1) = bins.tile_rect(tile, width, height);
                let list = &bins.lists[tile];
                // Local buffer indexed by position within this tile's list.
                let mut local = vec![[0.0; GRAD2D]; list.len()];
                let mut rec = Vec::new();
                for y in y0..y1 {
                    for x in x0..x1 {
                        rec.clear();
                        composite_pixel(&splats, list.iter().copied(), x, y, settings, background, Some(&mut rec));
                        pixel_backward(&splats, &rec, upstream_at(upstream, x, y), background, |pos, g| {
                            let slot = list.binary_search(&pos).expect("splat in tile list");
                            add_into(&mut local[slot], g)
                        });
                    }
                }
                local
            };
            if settings.deterministic {
                let per_tile: Vec<Vec<Grad2D>> = (0..bins.lists.len()).into_par_iter().map(tile_grads).collect();
                for (tile, local) in per_tile.iter().enumerate() {
                    for (slot, g) in local.iter().enumerate() {
                        add_into(&mut screen[bins.lists[tile][slot]], g);
                    }
                }
            } else {
                screen = (0..bins.lists.len())
                    .into_par_iter()
                    .fold(
                        || vec![[0.0; GRAD2D]; splats.len()],
                        |mut acc, tile| {
                            for (slot, g) in tile_grads(tile).iter().enumerate() {
                                add_into(&mut acc[bins.lists[tile][slot]], g);
                            }
                            acc
                        },
                    )
                    .reduce(
                        || vec![[0.0; GRAD2D]; splats.len()],
                        |mut a, b| {
                            for (x, y) in a.iter_mut().zip(&b) {
                                add_into(x, y);
                            }
                            a
                        },
                    );
            }
        }
    }

    let mut grads = SceneGradients::zeros(scene.len());
    for (s, g) in splats.iter().zip(&screen) {
        grads.gaussians[s.index] = lift_to_world(s, g, cam);
    }
    Ok(grads)
}

/// Chains screen-space partials through projection, covariance assembly,
/// the scale exponential and quaternion normalization.
fn lift_to_world(s: &Splat, g: &Grad2D, cam: &Camera) -> GaussianGrad {
    let k = &cam.intrinsics;
    let w = &cam.rotation;
    let (x, y, z) = (s.mu_cam.x, s.mu_cam.y, s.mu_cam.z);

    // Conic -> screen covariance: dΣ' = -Q dQ Q.
    let q = s.conic_matrix();
    let d_conic = Matrix2::new(g[2], g[3], g[3], g[4]);
    let d_cov2 = -(q * d_conic * q);

    // Σ' = T Σ Tᵀ with T = J W.
    let t = s.jacobian * w;
    let d_sigma3: Matrix3<f64> = t.transpose() * d_cov2 * t;
    let d_t: Matrix2x3<f64> = d_cov2 * t * s.sigma3.transpose() + d_cov2.transpose() * t * s.sigma3;
    let d_j: Matrix2x3<f64> = d_t * w.transpose();

    // Mean: pixel position plus the Jacobian's dependence on depth.
    let (du, dv) = (g[0], g[1]);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut d_mu_cam = Vector3::new(
        du * k.fx / z,
        dv * k.fy / z,
        -du * k.fx * x / z2 - dv * k.fy * y / z2,
    );
    d_mu_cam.x += d_j[(0, 2)] * (-k.fx / z2);
    d_mu_cam.y += d_j[(1, 2)] * (-k.fy / z2);
    d_mu_cam.z += d_j[(0, 0)] * (-k.fx / z2)
        + d_j[(0, 2)] * (2.0 * k.fx * x / z3)
        + d_j[(1, 1)] * (-k.fy / z2)
        + d_j[(1, 2)] * (2.0 * k.fy * y / z3);
    let d_mu = w.transpose() * d_mu_cam;

    // Σ = M Mᵀ with M = R S.
    let m = s.rotation * Matrix3::from_diagonal(&s.scale);
    let d_m = (d_sigma3 + d_sigma3.transpose()) * m;
    let mut d_log_scale = [0.0; 3];
    for i in 0..3 {
        let d_si: f64 = (0..3).map(|r| d_m[(r, i)] * s.rotation[(r, i)]).sum();
        d_log_scale[i] = d_si * s.scale[i];
    }
    let d_r = d_m * Matrix3::from_diagonal(&s.scale);
    let d_qn = rotation_vjp(&s.quat, &d_r);
    let dot: f64 = (0..4).map(|i| d_qn[i] * s.quat[i]).sum();
    let mut d_quat = [0.0; 4];
    for i in 0..4 {
        d_quat[i] = (d_qn[i] - s.quat[i] * dot) / s.quat_norm;
    }

    GaussianGrad {
        mean: [d_mu.x, d_mu.y, d_mu.z],
        rotation: d_quat,
        log_scale: d_log_scale,
        opacity_logit: g[5],
        color: [g[6], g[7], g[8]],
    }
}

/// Vector-Jacobian product of the unit-quaternion rotation matrix.
fn rotation_vjp(q: &[f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let r = |i: usize, j: usize| d_r[(i, j)];
    let dw = 2.0
        * (-z * r(0, 1) + y * r(0, 2) + z * r(1, 0) - x * r(1, 2) - y * r(2, 0) + x * r(2, 1));
    let dx = 2.0 * (y * r(0, 1) + z * r(0, 2) + y * r(1, 0) - w * r(1, 2) + z * r(2, 0) + w * r(2, 1))
        - 4.0 * x * (r(1, 1) + r(2, 2));
    let dy = 2.0 * (x * r(0, 1) + w * r(0, 2) + x * r(1, 0) + z * r(1, 2) - w * r(2, 0) + z * r(2, 1))
        - 4.0 * y * (r(0, 0) + r(2, 2));
    let dz = 2.0 * (-w * r(0, 1) + x * r(0, 2) + w * r(1, 0) + y * r(1, 2) + x * r(2, 0) + y * r(2, 1))
        - 4.0 * z * (r(0, 0) + r(1, 1));
    [dw, dx, dy, dz]
}
