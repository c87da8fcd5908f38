//! Renders a few anisotropic Gaussians and writes the image and its alpha.
//!
//! cargo run --example render_scene -- [out.png]

use nalgebra::Vector3;

use evsplat::raster::{render, RasterSettings};
use evsplat::splat::{Camera, Gaussian3D, Intrinsics, Pose, Scene};

fn main() -> evsplat::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "render.png".into());
    let mut elongated = Gaussian3D::isotropic([0.3, -0.2, 3.5], 0.1, 0.9, [0.95, 0.8, 0.2]);
    elongated.log_scale = [0.6f64.ln(), 0.08f64.ln(), 0.08f64.ln()];
    let angle = 0.4f64;
    elongated.rotation = [(angle / 2.0).cos(), 0.0, 0.0, (angle / 2.0).sin()];
    let scene = Scene::new(vec![
        Gaussian3D::isotropic([0.0, 0.0, 4.0], 0.5, 0.8, [0.2, 0.4, 0.9]),
        Gaussian3D::isotropic([-0.7, 0.5, 4.5], 0.3, 0.7, [0.9, 0.2, 0.3]),
        elongated,
    ]);
    let intrinsics = Intrinsics { fx: 96.0, fy: 96.0, cx: 48.0, cy: 48.0, width: 96, height: 96 };
    let pose = Pose::look_at(Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 4.0), Vector3::new(0.0, -1.0, 0.0));
    let cam = Camera::new(&pose, intrinsics)?;
    let out = render(&scene, &cam, [0.05, 0.05, 0.05], &RasterSettings::default())?;
    out.image.write_png(&path)?;
    let coverage = out.alpha.data().iter().sum::<f64>() / out.alpha.data().len() as f64;
    println!("wrote {path}; mean coverage {coverage:.3}");
    Ok(())
}
