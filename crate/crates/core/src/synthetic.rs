//! Synthetic scenes with known ground truth: shaken cameras, averaged
//! latent renders as blurry frames and simulated events.

use std::fs;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{format_points, Manifest, PoseRecord, TestViewRecord, ThresholdRecord, ViewRecord, FORMAT_VERSION, MANIFEST_NAME};
use crate::error::{Error, Result};
use crate::event::{format_events, simulate_events, uniform_timestamps, Thresholds};
use crate::image::Image;
use crate::objective::{synthesize_blur, to_grayscale};
use crate::raster::{render, RasterSettings};
use crate::splat::{Gaussian3D, Intrinsics, Pose, Scene};
use crate::train::{mid_index, InitPoint};

/// In-exposure camera motion: SLERP in rotation, linear in translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub start: Pose,
    pub end: Pose,
}

impl Trajectory {
    pub fn fixed(pose: Pose) -> Self {
        Self { start: pose, end: pose }
    }

    /// `n` poses at evenly spaced fractions of the exposure.
    pub fn sample(&self, n: usize) -> Vec<Pose> {
        (0..n)
            .map(|i| {
                let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                canonical_pose(self.start.interpolate(&self.end, t))
            })
            .collect()
    }
}

/// Returns the pose that survives a write/read of its manifest record
/// unchanged, so rendering from the loaded dataset reproduces the dumps.
fn canonical_pose(pose: Pose) -> Pose {
    let mut rec = PoseRecord::from_pose(&pose);
    for _ in 0..8 {
        let next = PoseRecord::from_pose(&rec.to_pose().expect("unit quaternion"));
        if next == rec {
            break;
        }
        rec = next;
    }
    rec.to_pose().expect("unit quaternion")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub scene: Scene,
    pub intrinsics: Intrinsics,
    pub trajectories: Vec<Trajectory>,
    pub test_poses: Vec<Pose>,
    pub n_latents: usize,
    pub thresholds: Thresholds,
    pub exposure: (f64, f64),
    pub background: [f64; 3],
    /// Standard deviation of the noise added to ground-truth means for the
    /// initial point cloud.
    pub point_noise: f64,
    pub seed: u64,
}

fn look_at_target(eye: Vector3<f64>, target: Vector3<f64>) -> Pose {
    Pose::look_at(eye, target, Vector3::new(0.0, -1.0, 0.0))
}

/// Shifts a camera by `offset` (world units) and tilts it by `angles` (radians
/// about the camera axes).
fn shaken(pose: &Pose, offset: Vector3<f64>, angles: Vector3<f64>) -> Pose {
    let tilt = UnitQuaternion::from_euler_angles(angles.x, angles.y, angles.z);
    let center = pose.camera_center() + offset;
    let rotation = tilt * pose.rotation;
    Pose {
        rotation,
        translation: -(rotation * center),
    }
}

impl SyntheticSpec {
    /// 64x64 sensor, ~200 random Gaussians around depth 4, eight shaken
    /// training views and three held-out poses.
    pub fn standard(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gaussians = (0..200)
            .map(|_| {
                let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
                Gaussian3D {
                    mean: [
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                        rng.random_range(3.6..4.4),
                    ],
                    rotation: q.map(|v| v / norm),
                    log_scale: std::array::from_fn(|_| rng.random_range(0.12f64.ln()..0.3f64.ln())),
                    opacity_logit: crate::splat::logit(rng.random_range(0.5..0.95)),
                    color: std::array::from_fn(|_| rng.random_range(0.05..0.95)),
                }
            })
            .collect();
        let target = Vector3::new(0.0, 0.0, 4.0);
        let trajectories = (0..8)
            .map(|k| {
                let theta = std::f64::consts::TAU * k as f64 / 8.0 + rng.random_range(-0.2..0.2);
                let r = rng.random_range(0.3..0.5);
                let start = look_at_target(Vector3::new(r * theta.cos(), r * theta.sin(), 0.0), target);
                let dir = rng.random_range(0.0..std::f64::consts::TAU);
                let shift = rng.random_range(0.08..0.14);
                let offset = Vector3::new(shift * dir.cos(), shift * dir.sin(), 0.0);
                let angles = Vector3::from_fn(|_, _| rng.random_range(-0.01..0.01));
                Trajectory {
                    start,
                    end: shaken(&start, offset, angles),
                }
            })
            .collect();
        let test_poses = [(0.0, 0.0), (0.22, -0.12), (-0.15, 0.25)]
            .iter()
            .map(|&(x, y)| look_at_target(Vector3::new(x, y, 0.0), target))
            .collect();
        Self {
            scene: Scene::new(gaussians),
            intrinsics: Intrinsics {
                fx: 64.0,
                fy: 64.0,
                cx: 32.0,
                cy: 32.0,
                width: 64,
                height: 64,
            },
            trajectories,
            test_poses,
            n_latents: 5,
            thresholds: Thresholds::default(),
            exposure: (0.0, 1.0),
            background: [0.25, 0.25, 0.3],
            point_noise: 0.05,
            seed,
        }
    }

    /// Two large Gaussians on a 32x32 sensor with two shaken views.
    pub fn two_gaussians(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = Scene::new(vec![
            Gaussian3D::isotropic([-0.6, 0.1, 4.0], 0.45, 0.9, [0.9, 0.3, 0.2]),
            Gaussian3D::isotropic([0.55, -0.2, 4.2], 0.4, 0.85, [0.2, 0.5, 0.9]),
        ]);
        let target = Vector3::new(0.0, 0.0, 4.0);
        let trajectories = [(-0.2, 0.0), (0.2, 0.1)]
            .iter()
            .map(|&(x, y)| {
                let start = look_at_target(Vector3::new(x, y, 0.0), target);
                let offset = Vector3::new(rng.random_range(0.1..0.2), rng.random_range(-0.05..0.05), 0.0);
                Trajectory {
                    start,
                    end: shaken(&start, offset, Vector3::zeros()),
                }
            })
            .collect();
        Self {
            scene,
            intrinsics: Intrinsics {
                fx: 32.0,
                fy: 32.0,
                cx: 16.0,
                cy: 16.0,
                width: 32,
                height: 32,
            },
            trajectories,
            test_poses: vec![look_at_target(Vector3::zeros(), target)],
            n_latents: 5,
            thresholds: Thresholds::default(),
            exposure: (0.0, 1.0),
            background: [0.3, 0.3, 0.3],
            point_noise: 0.15,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::InvalidSpec(msg);
        self.scene.validate().map_err(|e| bad(e.to_string()))?;
        self.thresholds.validate().map_err(|e| bad(e.to_string()))?;
        if self.scene.is_empty() {
            return Err(bad("scene has no gaussians".into()));
        }
        if self.n_latents < 2 {
            return Err(bad("at least two latent frames per exposure are needed".into()));
        }
        if !(self.exposure.0 < self.exposure.1) {
            return Err(bad("exposure timestamps must be strictly increasing".into()));
        }
        if self.trajectories.is_empty() {
            return Err(bad("no training views".into()));
        }
        let k = &self.intrinsics;
        if k.width == 0 || k.height == 0 || !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(bad("invalid intrinsics".into()));
        }
        Ok(())
    }

    /// Ground-truth means perturbed by Gaussian noise, without colors.
    pub fn init_points(&self) -> Vec<InitPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0f_9013);
        let noise = Normal::new(0.0, self.point_noise.max(0.0)).expect("finite std");
        self.scene
            .gaussians
            .iter()
            .map(|g| InitPoint {
                position: g.mean.map(|m| m + noise.sample(&mut rng)),
                color: None,
            })
            .collect()
    }
}

/// Renders `poses` and rounds to f32 so later dumps are exact.
pub fn render_latents(scene: &Scene, poses: &[Pose], intrinsics: Intrinsics, background: [f64; 3]) -> Result<Vec<Image>> {
    let settings = RasterSettings::default();
    poses
        .iter()
        .map(|p| {
            let cam = crate::splat::Camera::new(p, intrinsics)?;
            Ok(render(scene, &cam, background, &settings)?.image.round_to_f32())
        })
        .collect()
}

fn any_coverage(scene: &Scene, poses: &[Pose], intrinsics: Intrinsics) -> Result<bool> {
    let settings = RasterSettings::default();
    for p in poses {
        let cam = crate::splat::Camera::new(p, intrinsics)?;
        if render(scene, &cam, [0.0; 3], &settings)?.alpha.data().iter().any(|&a| a > 0.0) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Writes a complete dataset into `out_dir` and returns its manifest.
///
/// Per view: `blurry.f32`/`.png`, `events.txt`, `sharp.f32`/`.png` (mid
/// pose) and `latent_<i>.f32`. Per test pose: `sharp.f32`/`.png`. Also
/// `points.txt`, `gt_scene.txt` and `manifest.json`.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let out = out_dir.as_ref();
    let n = spec.n_latents;
    let intr = spec.intrinsics;
    let timestamps = uniform_timestamps(spec.exposure.0, spec.exposure.1, n);

    let view_poses: Vec<Vec<Pose>> = spec.trajectories.iter().map(|t| t.sample(n)).collect();
    let all_poses: Vec<Pose> = view_poses.iter().flatten().copied().collect();
    if !any_coverage(&spec.scene, &all_poses, intr)? {
        return Err(Error::InvalidSpec("every gaussian is culled or off screen in all views".into()));
    }

    fs::create_dir_all(out)?;
    let mut views = Vec::with_capacity(view_poses.len());
    for (i, poses) in view_poses.iter().enumerate() {
        let name = format!("view_{i:03}");
        fs::create_dir_all(out.join(&name))?;
        let latents = render_latents(&spec.scene, poses, intr, spec.background)?;
        if latents.iter().any(|l| l.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidSpec(format!("{name}: non-finite latent render")));
        }
        let blurry = synthesize_blur(&latents)?.round_to_f32();
        let gray = latents.iter().map(to_grayscale).collect::<Result<Vec<_>>>()?;
        let stream = simulate_events(&gray, &timestamps, spec.thresholds)?;

        let rel = |f: &str| format!("{name}/{f}");
        blurry.write_dump(out.join(rel("blurry.f32")))?;
        blurry.write_png(out.join(rel("blurry.png")))?;
        fs::write(out.join(rel("events.txt")), format_events(&stream))?;
        let sharp = &latents[mid_index(n)];
        sharp.write_dump(out.join(rel("sharp.f32")))?;
        sharp.write_png(out.join(rel("sharp.png")))?;
        let mut latent_paths = Vec::with_capacity(n);
        for (j, l) in latents.iter().enumerate() {
            let p = rel(&format!("latent_{j}.f32"));
            l.write_dump(out.join(&p))?;
            latent_paths.push(p);
        }
        views.push(ViewRecord {
            name: name.clone(),
            blurry: rel("blurry.f32"),
            exposure: spec.exposure,
            poses: poses.iter().map(PoseRecord::from_pose).collect(),
            events: rel("events.txt"),
            sharp: Some(rel("sharp.f32")),
            latents: latent_paths,
        });
    }

    let mut test_views = Vec::with_capacity(spec.test_poses.len());
    for (i, pose) in spec.test_poses.iter().enumerate() {
        let name = format!("test_{i:03}");
        fs::create_dir_all(out.join(&name))?;
        let pose = canonical_pose(*pose);
        let img = render_latents(&spec.scene, &[pose], intr, spec.background)?.remove(0);
        img.write_dump(out.join(format!("{name}/sharp.f32")))?;
        img.write_png(out.join(format!("{name}/sharp.png")))?;
        test_views.push(TestViewRecord {
            name: name.clone(),
            pose: PoseRecord::from_pose(&pose),
            sharp: Some(format!("{name}/sharp.f32")),
        });
    }

    fs::write(out.join("points.txt"), format_points(&spec.init_points()))?;
    spec.scene.write(out.join("gt_scene.txt"))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        intrinsics: intr,
        n_latents: n,
        thresholds: ThresholdRecord {
            c_pos: spec.thresholds.c_pos,
            c_neg: spec.thresholds.c_neg,
        },
        background: spec.background,
        points: "points.txt".into(),
        views,
        test_views,
    };
    manifest.write(out.join(MANIFEST_NAME))?;
    Ok(manifest)
}
