//! Scene initialization, the per-view objective with its gradient, Adam
//! optimization and image-quality metrics.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::{uniform_timestamps, EventBinImage, EventStream};
use crate::image::Image;
use crate::objective::{
    blur_loss_grad, event_loss, estimate_event_bin_with, event_loss_grad, l1, ssim, synthesize_blur, to_grayscale,
    to_grayscale_adjoint, total_loss, EventQuantization, LossBreakdown, LossWeights,
};
use crate::raster::{render, render_backward, RasterSettings, SceneGradients};
use crate::splat::{logit, Camera, Gaussian3D, Intrinsics, Pose, Scene, PARAMS_PER_GAUSSIAN};

pub const PSNR_CAP: f64 = 100.0;

/// Per-group Adam step sizes. The position rate decays exponentially from
/// `position` to `position_final` over the run and is multiplied by the
/// scene extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub position_final: f64,
    pub color: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final: 1.6e-6,
            color: 2.5e-3,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub weights: LossWeights,
    pub lr: LearningRates,
    pub seed: u64,
    pub background: [f64; 3],
    pub deterministic: bool,
    /// Checkpoint and flush the loss log every this many iterations.
    pub checkpoint_every: usize,
    /// Frame pairs drawn per iteration for the event loss.
    pub event_pairs: usize,
    pub quantization: EventQuantization,
    /// Interval between densification hook calls.
    pub densify_every: usize,
    /// Overrides the camera-derived scene extent used to scale the position rate.
    pub scene_extent: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            weights: LossWeights::default(),
            lr: LearningRates::default(),
            seed: 0,
            background: [0.0; 3],
            deterministic: true,
            checkpoint_every: 1000,
            event_pairs: 1,
            quantization: EventQuantization::StraightThrough,
            densify_every: 100,
            scene_extent: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        let lr = &self.lr;
        for (name, v) in [
            ("position", lr.position),
            ("position_final", lr.position_final),
            ("color", lr.color),
            ("opacity", lr.opacity),
            ("scale", lr.scale),
            ("rotation", lr.rotation),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("learning rate `{name}` must be non-negative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.weights.w_dssim) || !(self.weights.w_event >= 0.0) {
            return Err(Error::invalid("loss weights out of range"));
        }
        self.weights.thresholds.validate()
    }

    pub fn raster_settings(&self) -> RasterSettings {
        RasterSettings {
            deterministic: self.deterministic,
            ..RasterSettings::default()
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str, path: &Path) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("`{key}`: bad number `{v}`")));
            let int = |v: &str| v.parse::<usize>().map_err(|_| err(format!("`{key}`: bad integer `{v}`")));
            match key {
                "iterations" => self.iterations = int(value)?,
                "w_dssim" => self.weights.w_dssim = num(value)?,
                "w_event" => self.weights.w_event = num(value)?,
                "n_latents" => self.weights.n = int(value)?,
                "c_pos" => self.weights.thresholds.c_pos = num(value)?,
                "c_neg" => self.weights.thresholds.c_neg = num(value)?,
                "lr_position" => self.lr.position = num(value)?,
                "lr_position_final" => self.lr.position_final = num(value)?,
                "lr_color" => self.lr.color = num(value)?,
                "lr_opacity" => self.lr.opacity = num(value)?,
                "lr_scale" => self.lr.scale = num(value)?,
                "lr_rotation" => self.lr.rotation = num(value)?,
                "seed" => self.seed = value.parse().map_err(|_| err(format!("bad seed `{value}`")))?,
                "deterministic" => {
                    self.deterministic = value.parse().map_err(|_| err(format!("bad boolean `{value}`")))?
                }
                "checkpoint_every" => self.checkpoint_every = int(value)?,
                "event_pairs" => self.event_pairs = int(value)?,
                "densify_every" => self.densify_every = int(value)?,
                "scene_extent" => self.scene_extent = Some(num(value)?),
                "quantization" => {
                    self.quantization = match value {
                        "straight_through" => EventQuantization::StraightThrough,
                        "surrogate" => EventQuantization::Surrogate,
                        _ => return Err(err(format!("unknown quantization `{value}`"))),
                    }
                }
                "background" => {
                    let parts = value
                        .split(',')
                        .map(|v| num(v.trim()))
                        .collect::<Result<Vec<f64>>>()?;
                    if parts.len() != 3 {
                        return Err(err("background needs three comma-separated values".into()));
                    }
                    self.background = [parts[0], parts[1], parts[2]];
                }
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        Ok(())
    }
}

/// One blurry observation: the image, its exposure, the in-exposure poses
/// and the events recorded during the exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub name: String,
    pub blurry: Image,
    pub exposure: (f64, f64),
    pub poses: Vec<Pose>,
    pub stream: EventStream,
    pub intrinsics: Intrinsics,
}

impl View {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.poses.len() != n {
            return Err(Error::PoseCountMismatch {
                view: self.name.clone(),
                expected: n,
                found: self.poses.len(),
            });
        }
        if self.stream.t_start() != self.exposure.0 || self.stream.t_end() != self.exposure.1 {
            return Err(Error::invalid(format!(
                "view `{}`: event window differs from exposure",
                self.name
            )));
        }
        let k = &self.intrinsics;
        if self.blurry.width() != k.width || self.blurry.height() != k.height || self.blurry.channels() != 3 {
            return Err(Error::invalid(format!(
                "view `{}`: blurry image does not match the {}x{} sensor",
                self.name, k.width, k.height
            )));
        }
        self.stream.check_bounds(k.width, k.height)
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        self.poses.iter().map(|p| Camera::new(p, self.intrinsics)).collect()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        uniform_timestamps(self.exposure.0, self.exposure.1, self.poses.len())
    }

    /// Recorded signed event counts between latent instants `n < m` (0-based).
    pub fn event_bin(&self, n: usize, m: usize) -> Result<EventBinImage> {
        let ts = self.timestamps();
        self.stream.bin_image(ts[n], ts[m], self.intrinsics.width, self.intrinsics.height)
    }

    /// Index of the mid-exposure pose, `ceil(N / 2)` counted from one.
    pub fn mid_index(&self) -> usize {
        mid_index(self.poses.len())
    }
}

pub fn mid_index(n: usize) -> usize {
    n.div_ceil(2).saturating_sub(1)
}

/// A frame pair `(n, m)` with `n < m`, indices into a view's poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramePair {
    pub n: usize,
    pub m: usize,
}

/// Uniform draw over unordered pairs `n < m` of `0..count`.
pub fn sample_pair(rng: &mut impl Rng, count: usize) -> Option<FramePair> {
    if count < 2 {
        return None;
    }
    let total = count * (count - 1) / 2;
    let mut k = rng.random_range(0..total);
    for n in 0..count {
        let row = count - 1 - n;
        if k < row {
            return Some(FramePair { n, m: n + 1 + k });
        }
        k -= row;
    }
    unreachable!()
}

/// Everything needed to evaluate the loss of one view.
pub struct ViewObjective<'a> {
    pub view: &'a View,
    pub cameras: Vec<Camera>,
    pub pairs: Vec<(FramePair, EventBinImage)>,
    pub weights: LossWeights,
    pub background: [f64; 3],
    pub settings: RasterSettings,
    pub quantization: EventQuantization,
}

impl<'a> ViewObjective<'a> {
    pub fn new(
        view: &'a View,
        pairs: &[FramePair],
        weights: LossWeights,
        background: [f64; 3],
        settings: RasterSettings,
        quantization: EventQuantization,
    ) -> Result<Self> {
        let cameras = view.cameras()?;
        let pairs = pairs
            .iter()
            .map(|&p| {
                if !(p.n < p.m && p.m < view.poses.len()) {
                    return Err(Error::invalid(format!("frame pair ({}, {}) out of range", p.n, p.m)));
                }
                Ok((p, view.event_bin(p.n, p.m)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            view,
            cameras,
            pairs,
            weights,
            background,
            settings,
            quantization,
        })
    }

    fn render_all(&self, scene: &Scene) -> Result<Vec<Image>> {
        self.cameras
            .iter()
            .map(|cam| Ok(render(scene, cam, self.background, &self.settings)?.image))
            .collect()
    }

    pub fn loss(&self, scene: &Scene) -> Result<LossBreakdown> {
        let frames = self.render_all(scene)?;
        let blur = synthesize_blur(&frames)?;
        let l = l1(&blur, &self.view.blurry)?;
        let d = if self.weights.w_dssim == 0.0 {
            0.0
        } else {
            (1.0 - ssim(&blur, &self.view.blurry)?) / 2.0
        };
        let mut ev = 0.0;
        if self.weights.w_event != 0.0 {
            for (p, gt) in &self.pairs {
                let l_n = to_grayscale(&frames[p.n])?;
                let l_m = to_grayscale(&frames[p.m])?;
                let est = estimate_event_bin_with(&l_n, &l_m, self.weights.thresholds, self.quantization)?;
                ev += event_loss(&est, gt)?;
            }
            if !self.pairs.is_empty() {
                ev /= self.pairs.len() as f64;
            }
        }
        Ok(total_loss(l, d, ev, &self.weights))
    }

    pub fn loss_and_grad(&self, scene: &Scene) -> Result<(LossBreakdown, SceneGradients)> {
        let frames = self.render_all(scene)?;
        let blur = synthesize_blur(&frames)?;
        let (l, d, g_blur) = blur_loss_grad(&blur, &self.view.blurry, self.weights.w_dssim)?;
        let count = frames.len() as f64;
        let mut upstream: Vec<Image> = (0..frames.len()).map(|_| g_blur.map(|g| g / count)).collect();

        let mut ev = 0.0;
        if self.weights.w_event != 0.0 && !self.pairs.is_empty() {
            let scale = self.weights.w_event / self.pairs.len() as f64;
            for (p, gt) in &self.pairs {
                let l_n = to_grayscale(&frames[p.n])?;
                let l_m = to_grayscale(&frames[p.m])?;
                let (loss, g_n, g_m) =
                    event_loss_grad(&l_n, &l_m, gt, self.weights.thresholds, self.quantization)?;
                ev += loss;
                for (idx, g) in [(p.n, g_n), (p.m, g_m)] {
                    let rgb = to_grayscale_adjoint(&g);
                    for (u, v) in upstream[idx].data_mut().iter_mut().zip(rgb.data()) {
                        *u += scale * v;
                    }
                }
            }
            ev /= self.pairs.len() as f64;
        }

        let mut grads = SceneGradients::zeros(scene.len());
        for (cam, up) in self.cameras.iter().zip(&upstream) {
            let g = render_backward(scene, cam, self.background, up, &self.settings)?;
            grads.add_scaled(&g, 1.0);
        }
        Ok((total_loss(l, d, ev, &self.weights), grads))
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr_of: impl Fn(usize) -> f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr_of(i) * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Camera-center spread: 1.1 times the largest distance from the mean center.
pub fn scene_extent(views: &[View]) -> f64 {
    let centers: Vec<_> = views.iter().flat_map(|v| v.poses.iter().map(|p| p.camera_center())).collect();
    if centers.is_empty() {
        return 1.0;
    }
    let mean = centers.iter().fold(nalgebra::Vector3::zeros(), |a, c| a + c) / centers.len() as f64;
    let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max) * 1.1;
    if radius > 1e-6 {
        radius
    } else {
        1.0
    }
}

pub type DensifyHook = Box<dyn FnMut(&mut Scene, usize) + Send>;

pub struct Trainer {
    scene: Scene,
    config: TrainConfig,
    adam: Adam,
    rng: ChaCha8Rng,
    iteration: usize,
    extent: f64,
    densify: Option<DensifyHook>,
}

impl Trainer {
    pub fn new(scene: Scene, config: TrainConfig, extent: f64) -> Result<Self> {
        config.validate()?;
        scene.validate()?;
        let adam = Adam::new(scene.len() * PARAMS_PER_GAUSSIAN);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            scene,
            config,
            adam,
            rng,
            iteration: 0,
            extent,
            densify: None,
        })
    }

    /// Called every `densify_every` iterations; the scene's cardinality must
    /// not change.
    pub fn set_densify_hook(&mut self, hook: DensifyHook) {
        self.densify = Some(hook);
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn into_scene(self) -> Scene {
        self.scene
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn position_lr(&self) -> f64 {
        let lr = &self.config.lr;
        let t = (self.iteration as f64 / self.config.iterations.max(1) as f64).clamp(0.0, 1.0);
        let rate = if lr.position > 0.0 && lr.position_final > 0.0 {
            (lr.position.ln() * (1.0 - t) + lr.position_final.ln() * t).exp()
        } else {
            lr.position * (1.0 - t) + lr.position_final * t
        };
        rate * self.extent
    }

    /// One optimization step on `view`: render its poses, compare the
    /// synthesized blur and a random frame pair's event counts with the
    /// recordings, backpropagate and apply Adam.
    pub fn step(&mut self, view: &View) -> Result<LossBreakdown> {
        let weights = self.config.weights;
        let pair_count = if weights.w_event > 0.0 { self.config.event_pairs } else { 0 };
        let pairs: Vec<FramePair> = (0..pair_count)
            .filter_map(|_| sample_pair(&mut self.rng, view.poses.len()))
            .collect();
        let objective = ViewObjective::new(
            view,
            &pairs,
            weights,
            self.config.background,
            self.config.raster_settings(),
            self.config.quantization,
        )?;
        let (breakdown, grads) = objective.loss_and_grad(&self.scene)?;
        if !breakdown.total.is_finite() || !grads.is_finite() {
            return Err(Error::TrainingDiverged {
                iteration: self.iteration,
                loss: breakdown.total,
            });
        }

        let lr = self.config.lr;
        let group_lr = [self.position_lr(), lr.rotation, lr.scale, lr.opacity, lr.color];
        let group_of = |k: usize| match k {
            0..=2 => 0,
            3..=6 => 1,
            7..=9 => 2,
            10 => 3,
            _ => 4,
        };
        let mut params = self.scene.to_flat();
        self.adam
            .update(&mut params, &grads.to_flat(), |i| group_lr[group_of(i % PARAMS_PER_GAUSSIAN)]);
        self.scene = Scene::from_flat(&params);
        for g in &mut self.scene.gaussians {
            for c in &mut g.color {
                *c = c.clamp(0.0, 1.0);
            }
        }

        self.iteration += 1;
        if self.config.densify_every > 0 && self.iteration % self.config.densify_every == 0 {
            if let Some(hook) = self.densify.as_mut() {
                let before = self.scene.len();
                hook(&mut self.scene, self.iteration);
                if self.scene.len() != before {
                    return Err(Error::invalid("densify hook changed the number of gaussians"));
                }
            }
        }
        Ok(breakdown)
    }

    /// Samples a view uniformly (with replacement) and steps on it.
    pub fn step_random(&mut self, views: &[View]) -> Result<LossBreakdown> {
        if views.is_empty() {
            return Err(Error::invalid("no views to train on"));
        }
        let i = self.rng.random_range(0..views.len());
        self.step(&views[i])
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub scene: Scene,
    pub log: Vec<LossBreakdown>,
}

pub fn write_loss_log(log: &[LossBreakdown], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str(LossBreakdown::csv_header());
    out.push('\n');
    for (i, b) in log.iter().enumerate() {
        out.push_str(&b.csv_row(i));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Runs `config.iterations` steps from `initial`. With an output directory,
/// writes `checkpoint_XXXXXX.txt` and `train_log.csv` every
/// `checkpoint_every` iterations and `scene.txt` at the end.
pub fn train(views: &[View], initial: Scene, config: &TrainConfig, output_dir: Option<&Path>) -> Result<TrainOutcome> {
    if views.is_empty() {
        return Err(Error::invalid("training needs at least one view"));
    }
    for v in views {
        v.validate(config.weights.n)?;
    }
    let extent = config.scene_extent.unwrap_or_else(|| scene_extent(views));
    let mut trainer = Trainer::new(initial, config.clone(), extent)?;
    if let Some(dir) = output_dir {
        fs::create_dir_all(dir)?;
    }
    let mut log = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        log.push(trainer.step_random(views)?);
        if let Some(dir) = output_dir {
            let done = it + 1;
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
                trainer.scene().write(dir.join(format!("checkpoint_{done:06}.txt")))?;
                write_loss_log(&log, dir.join("train_log.csv"))?;
            }
        }
    }
    let scene = trainer.into_scene();
    if let Some(dir) = output_dir {
        scene.write(dir.join("scene.txt"))?;
        write_loss_log(&log, dir.join("train_log.csv"))?;
        fs::File::options().append(true).open(dir.join("train_log.csv"))?.flush()?;
    }
    Ok(TrainOutcome { scene, log })
}

/// Initial point with an optional color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitPoint {
    pub position: [f64; 3],
    pub color: Option<[f64; 3]>,
}

pub const INIT_OPACITY: f64 = 0.1;
pub const SINGLE_POINT_SCALE: f64 = 0.1;

/// One isotropic Gaussian per point, sized by the mean distance to its three
/// nearest neighbours.
pub fn init_scene_from_points(points: &[InitPoint]) -> Result<Scene> {
    if points.is_empty() {
        return Err(Error::invalid("cannot initialize a scene from zero points"));
    }
    let dist = |a: &[f64; 3], b: &[f64; 3]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    let gaussians = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let scale = if points.len() == 1 {
                SINGLE_POINT_SCALE
            } else {
                let mut d: Vec<f64> = points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| dist(&p.position, &q.position))
                    .collect();
                d.sort_by(f64::total_cmp);
                let k = d.len().min(3);
                (d[..k].iter().sum::<f64>() / k as f64).max(1e-7)
            };
            Gaussian3D {
                mean: p.position,
                rotation: [1.0, 0.0, 0.0, 0.0],
                log_scale: [scale.ln(); 3],
                opacity_logit: logit(INIT_OPACITY),
                color: p.color.unwrap_or([0.5; 3]),
            }
        })
        .collect();
    Ok(Scene::new(gaussians))
}

/// `-10 log10(MSE)`, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

/// Structural similarity reported as a metric (same definition as the loss).
pub fn ssim_metric(a: &Image, b: &Image) -> Result<f64> {
    ssim(a, b)
}
