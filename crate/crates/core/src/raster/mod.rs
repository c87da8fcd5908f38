//! Differentiable Gaussian splat rasterization.
//!
//! Gaussians are projected to screen space, sorted front to back by
//! camera-space depth (ties by index) and alpha-composited per pixel. Two
//! paths share one per-pixel kernel: a serial reference that visits every
//! splat for every pixel, and a tiled path that bins splats into screen tiles
//! and renders tiles in parallel.

mod backward;
mod project;

use std::hash::{Hash, Hasher};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::splat::{Camera, Scene};

pub use backward::{render_backward, GaussianGrad, SceneGradients};
pub(crate) use project::{project_scene, Splat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderPath {
    /// Serial, every splat tested at every pixel.
    Reference,
    /// Screen tiles rendered in parallel.
    Tiled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterSettings {
    pub alpha_max: f64,
    pub alpha_min: f64,
    pub transmittance_min: f64,
    /// Splat footprint half-width in standard deviations.
    pub extent_sigmas: f64,
    pub tile_size: usize,
    pub path: RenderPath,
    /// Reduce per-tile gradient buffers in tile order rather than with a
    /// work-stealing tree reduction.
    pub deterministic: bool,
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self {
            alpha_max: 0.99,
            alpha_min: 1.0 / 255.0,
            transmittance_min: 1e-4,
            extent_sigmas: 3.0,
            tile_size: 16,
            path: RenderPath::Tiled,
            deterministic: true,
        }
    }
}

impl RasterSettings {
    pub fn reference() -> Self {
        Self {
            path: RenderPath::Reference,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    pub alpha: Image,
}

/// One splat's contribution at one pixel, recorded for the backward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    /// Position in the depth-sorted splat list.
    pub splat: usize,
    pub alpha: f64,
    pub weight: f64,
    pub transmittance: f64,
    pub clamped: bool,
    pub dx: f64,
    pub dy: f64,
}

/// Front-to-back compositing at one pixel. Visits `candidates` (positions in
/// the sorted list, ascending) and returns the color and final transmittance.
#[inline]
pub(crate) fn composite_pixel(
    splats: &[Splat],
    candidates: impl Iterator<Item = usize>,
    x: usize,
    y: usize,
    settings: &RasterSettings,
    background: [f64; 3],
    mut record: Option<&mut Vec<Contribution>>,
) -> ([f64; 3], f64) {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut t = 1.0;
    let mut color = [0.0; 3];
    for pos in candidates {
        let s = &splats[pos];
        if !s.covers(x, y) {
            continue;
        }
        let dx = px - s.mean2d.x;
        let dy = py - s.mean2d.y;
        let power = -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) - s.conic[1] * dx * dy;
        let weight = power.exp();
        let raw = s.opacity * weight;
        let clamped = raw > settings.alpha_max;
        let alpha = if clamped { settings.alpha_max } else { raw };
        if alpha < settings.alpha_min {
            continue;
        }
        let next = t * (1.0 - alpha);
        if next < settings.transmittance_min {
            break;
        }
        for c in 0..3 {
            color[c] += s.color[c] * alpha * t;
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.push(Contribution {
                splat: pos,
                alpha,
                weight,
                transmittance: t,
                clamped,
                dx,
                dy,
            });
        }
        t = next;
    }
    for c in 0..3 {
        color[c] += background[c] * t;
    }
    (color, t)
}

/// Splat positions whose footprint intersects each tile, in depth order.
pub(crate) struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub lists: Vec<Vec<usize>>,
}

impl TileBins {
    pub fn build(splats: &[Splat], width: usize, height: usize, tile_size: usize) -> Self {
        let tile_size = tile_size.max(1);
        let tiles_x = width.div_ceil(tile_size);
        let tiles_y = height.div_ceil(tile_size);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        for (pos, s) in splats.iter().enumerate() {
            let Some((x0, x1, y0, y1)) = s.bbox else { continue };
            for ty in y0 / tile_size..=y1 / tile_size {
                for tx in x0 / tile_size..=x1 / tile_size {
                    lists[ty * tiles_x + tx].push(pos);
                }
            }
        }
        Self {
            tile_size,
            tiles_x,
            lists,
        }
    }

    pub fn tile_rect(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (x0, (x0 + self.tile_size).min(width), y0, (y0 + self.tile_size).min(height))
    }
}

fn check_background(background: [f64; 3]) -> Result<()> {
    if background.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("background color must be finite"))
    }
}

/// Renders `scene` from `cam` over a constant `background`.
pub fn render(scene: &Scene, cam: &Camera, background: [f64; 3], settings: &RasterSettings) -> Result<RenderOutput> {
    check_background(background)?;
    let splats = project_scene(scene, cam, settings)?;
    let (width, height) = (cam.width(), cam.height());
    let mut image = Image::new(width, height, 3);
    let mut alpha = Image::new(width, height, 1);

    match settings.path {
        RenderPath::Reference => {
            for y in 0..height {
                for x in 0..width {
                    let (c, t) = composite_pixel(&splats, 0..splats.len(), x, y, settings, background, None);
                    for (ch, v) in c.iter().enumerate() {
                        image.set(x, y, ch, *v);
                    }
                    alpha.set(x, y, 0, 1.0 - t);
                }
            }
        }
        RenderPath::Tiled => {
            let bins = TileBins::build(&splats, width, height, settings.tile_size);
            let tiles: Vec<Vec<(usize, usize, [f64; 3], f64)>> = (0..bins.lists.len())
                .into_par_iter()
                .map(|tile| {
                    let (x0, x1, y0, y1) = bins.tile_rect(tile, width, height);
                    let list = &bins.lists[tile];
                    let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let (c, t) =
                                composite_pixel(&splats, list.iter().copied(), x, y, settings, background, None);
                            out.push((x, y, c, t));
                        }
                    }
                    out
                })
                .collect();
            for (x, y, c, t) in tiles.into_iter().flatten() {
                for (ch, v) in c.iter().enumerate() {
                    image.set(x, y, ch, *v);
                }
                alpha.set(x, y, 0, 1.0 - t);
            }
        }
    }
    Ok(RenderOutput { image, alpha })
}

/// Hash of the discrete structure of a render: which splats contribute to
/// which pixel, in what order, and whether their opacity was clamped. Two
/// parameter settings with equal signatures lie on the same smooth piece of
/// the render function.
pub fn support_signature(scene: &Scene, cam: &Camera, settings: &RasterSettings) -> Result<u64> {
    let splats = project_scene(scene, cam, settings)?;
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    let mut rec = Vec::new();
    for y in 0..cam.height() {
        for x in 0..cam.width() {
            rec.clear();
            composite_pixel(&splats, 0..splats.len(), x, y, settings, [0.0; 3], Some(&mut rec));
            rec.len().hash(&mut hasher);
            for c in &rec {
                splats[c.splat].index.hash(&mut hasher);
                c.clamped.hash(&mut hasher);
            }
        }
    }
    Ok(hasher.finish())
}
