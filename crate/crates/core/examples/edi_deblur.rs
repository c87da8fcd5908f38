//! Deblurs the standard synthetic dataset with the event double integral and
//! compares against the true latent frames.
//!
//! cargo run --release --example edi_deblur -- [output_dir]

use evsplat::dataset::load_dataset;
use evsplat::edi::reconstruct_latents;
use evsplat::synthetic::{generate_synthetic, SyntheticSpec};
use evsplat::train::psnr;

fn main() -> evsplat::Result<()> {
    let out = std::env::args().nth(1);
    let tmp = tempfile::tempdir()?;
    generate_synthetic(&SyntheticSpec::standard(0), tmp.path())?;
    let data = load_dataset(tmp.path())?;
    for (view, truth) in data.views.iter().zip(&data.truth) {
        let set = reconstruct_latents(&view.blurry, &view.stream, data.n_latents(), data.thresholds)?;
        let blurry: f64 = truth.latents.iter().map(|l| psnr(&view.blurry, l).unwrap()).sum::<f64>() / truth.latents.len() as f64;
        let edi: f64 = set.images.iter().zip(&truth.latents).map(|(a, b)| psnr(a, b).unwrap()).sum::<f64>() / set.images.len() as f64;
        println!("{}: {:5} events, blurry {blurry:.2} dB -> EDI {edi:.2} dB", view.name, view.stream.len());
        if let Some(dir) = &out {
            let dir = std::path::Path::new(dir).join(&view.name);
            std::fs::create_dir_all(&dir)?;
            view.blurry.write_png(dir.join("blurry.png"))?;
            for (i, img) in set.images.iter().enumerate() {
                img.write_png(dir.join(format!("edi_{i}.png")))?;
            }
        }
    }
    Ok(())
}
