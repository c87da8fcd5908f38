//! Generates the standard synthetic dataset, trains with and without the
//! event term, and compares held-out PSNR.
//!
//! cargo run --release --example train_synthetic -- [iterations] [seed]

use std::time::Instant;

use evsplat::dataset::load_dataset;
use evsplat::eval::{evaluate, EvalMode};
use evsplat::raster::RasterSettings;
use evsplat::synthetic::{generate_synthetic, SyntheticSpec};
use evsplat::train::{init_scene_from_points, train, TrainConfig};

fn main() -> evsplat::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map(|s| s.parse().expect("iterations")).unwrap_or(2000);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(0);

    let dir = tempfile::tempdir()?;
    generate_synthetic(&SyntheticSpec::standard(seed), dir.path())?;
    let data = load_dataset(dir.path())?;
    let init = init_scene_from_points(&data.points)?;
    let settings = RasterSettings::default();

    let report = |label: &str, scene: &evsplat::splat::Scene| -> evsplat::Result<()> {
        let deblur = evaluate(scene, &data, EvalMode::Deblur, &settings)?.mean();
        let novel = evaluate(scene, &data, EvalMode::NovelView, &settings)?.mean();
        println!(
            "{label:<12} deblur {:7.3} dB / {:.4}   novel-view {:7.3} dB / {:.4}",
            deblur.psnr, deblur.ssim, novel.psnr, novel.ssim
        );
        Ok(())
    };
    report("init", &init)?;

    for w_event in [0.005, 0.0] {
        let mut config = TrainConfig {
            iterations,
            seed,
            background: data.background(),
            ..TrainConfig::default()
        };
        config.weights.w_event = w_event;
        config.weights.thresholds = data.thresholds;
        let start = Instant::now();
        let out = train(&data.views, init.clone(), &config, None)?;
        let last = out.log.last().expect("non-empty log");
        println!(
            "w_event={w_event}: {iterations} iterations in {:.1}s, final total loss {:.5}",
            start.elapsed().as_secs_f64(),
            last.total
        );
        report(if w_event > 0.0 { "full" } else { "blur-only" }, &out.scene)?;
    }
    Ok(())
}
