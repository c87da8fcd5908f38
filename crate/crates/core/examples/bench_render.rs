//! Times the serial and tiled renderers on the standard synthetic scene.
//!
//! cargo run --release --example bench_render

use evsplat::bench::{bench_render, BenchConfig};
use evsplat::raster::{RasterSettings, RenderPath};
use evsplat::splat::Camera;
use evsplat::synthetic::SyntheticSpec;

fn main() -> evsplat::Result<()> {
    let spec = SyntheticSpec::standard(0);
    let cam = Camera::new(&spec.test_poses[0], spec.intrinsics)?;
    for path in [RenderPath::Reference, RenderPath::Tiled] {
        let settings = RasterSettings { path, ..RasterSettings::default() };
        let report = bench_render(&spec.scene, &cam, spec.background, &settings, &BenchConfig::default())?;
        println!("{path:?}: {}", report.summary());
    }
    Ok(())
}
