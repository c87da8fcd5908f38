//! Scores the ground-truth scene and a perturbed copy against the standard
//! dataset in both evaluation modes.
//!
//! cargo run --release --example evaluate_metrics

use evsplat::dataset::load_dataset;
use evsplat::eval::{evaluate, EvalMode};
use evsplat::raster::RasterSettings;
use evsplat::splat::Scene;
use evsplat::synthetic::{generate_synthetic, SyntheticSpec};

fn main() -> evsplat::Result<()> {
    let tmp = tempfile::tempdir()?;
    let spec = SyntheticSpec::standard(0);
    generate_synthetic(&spec, tmp.path())?;
    let data = load_dataset(tmp.path())?;
    let mut perturbed: Scene = spec.scene.clone();
    for g in &mut perturbed.gaussians {
        g.mean[0] += 0.03;
        g.color = g.color.map(|c| (c * 0.9).min(1.0));
    }
    for (label, scene) in [("ground truth", &spec.scene), ("perturbed", &perturbed)] {
        for mode in [EvalMode::Deblur, EvalMode::NovelView] {
            let table = evaluate(scene, &data, mode, &RasterSettings::default())?;
            println!("{label}, {mode}:\n{}", table.to_text());
        }
    }
    Ok(())
}
