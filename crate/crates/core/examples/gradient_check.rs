//! Compares analytic render gradients of the blur + event objective with
//! central finite differences on one random scene.
//!
//! cargo run --release --example gradient_check -- [seed]

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evsplat::event::{simulate_events, uniform_timestamps, Thresholds};
use evsplat::objective::{synthesize_blur, to_grayscale, EventQuantization, LossWeights};
use evsplat::raster::RasterSettings;
use evsplat::splat::{logit, Gaussian3D, Intrinsics, Pose, Scene, PARAMS_PER_GAUSSIAN};
use evsplat::synthetic::render_latents;
use evsplat::train::{FramePair, View, ViewObjective};

const NAMES: [&str; PARAMS_PER_GAUSSIAN] =
    ["x", "y", "z", "qw", "qx", "qy", "qz", "ls1", "ls2", "ls3", "opacity", "r", "g", "b"];

fn random_scene(rng: &mut ChaCha8Rng, count: usize) -> Scene {
    Scene::new(
        (0..count)
            .map(|_| Gaussian3D {
                mean: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(3.0..5.0)],
                rotation: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                log_scale: std::array::from_fn(|_| rng.random_range(-2.0..-0.7)),
                opacity_logit: logit(rng.random_range(0.2..0.9)),
                color: std::array::from_fn(|_| rng.random_range(0.05..0.95)),
            })
            .collect(),
    )
}

fn main() -> evsplat::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intr = Intrinsics { fx: 32.0, fy: 32.0, cx: 16.0, cy: 16.0, width: 32, height: 32 };
    let bg = [0.3, 0.3, 0.3];
    let th = Thresholds::default();
    let up = Vector3::new(0.0, -1.0, 0.0);
    let start = Pose::look_at(Vector3::zeros(), Vector3::new(0.0, 0.0, 4.0), up);
    let end = Pose::look_at(Vector3::new(0.12, 0.0, 0.0), Vector3::new(0.12, 0.0, 4.0), up);
    let poses: Vec<Pose> = (0..3).map(|i| start.interpolate(&end, i as f64 / 2.0)).collect();

    let target = random_scene(&mut rng, 4);
    let latents = render_latents(&target, &poses, intr, bg)?;
    let gray = latents.iter().map(to_grayscale).collect::<evsplat::Result<Vec<_>>>()?;
    let view = View {
        name: "probe".into(),
        blurry: synthesize_blur(&latents)?,
        exposure: (0.0, 1.0),
        poses,
        stream: simulate_events(&gray, &uniform_timestamps(0.0, 1.0, 3), th)?,
        intrinsics: intr,
    };
    let weights = LossWeights { w_event: 0.5, n: 3, ..LossWeights::default() };
    let obj = ViewObjective::new(&view, &[FramePair { n: 0, m: 2 }], weights, bg, RasterSettings::default(), EventQuantization::Surrogate)?;

    let scene = random_scene(&mut rng, 4);
    let (loss, grads) = obj.loss_and_grad(&scene)?;
    println!("loss {:.6} (l1 {:.5}, dssim {:.5}, event {:.5})", loss.total, loss.l1, loss.dssim, loss.event_loss);
    let base = scene.to_flat();
    let analytic = grads.to_flat();
    let h = 1e-5;
    for i in 0..PARAMS_PER_GAUSSIAN {
        let (mut p, mut m) = (base.clone(), base.clone());
        p[i] += h;
        m[i] -= h;
        let fd = (obj.loss(&Scene::from_flat(&p))?.total - obj.loss(&Scene::from_flat(&m))?.total) / (2.0 * h);
        println!("gaussian 0 {:>8}: analytic {:+.6e}  finite difference {:+.6e}", NAMES[i], analytic[i], fd);
    }
    Ok(())
}
