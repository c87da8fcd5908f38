use std::fs;
use std::path::Path;

use evsplat::dataset::{load_dataset, Manifest, MANIFEST_NAME};
use evsplat::edi::reconstruct_latents_unclamped;
use evsplat::eval::{evaluate, EvalMode};
use evsplat::event::format_events;
use evsplat::objective::synthesize_blur;
use evsplat::raster::RasterSettings;
use evsplat::splat::Scene;
use evsplat::synthetic::{generate_synthetic, SyntheticSpec, Trajectory};
use evsplat::train::PSNR_CAP;
use evsplat::Error;

fn generate(spec: &SyntheticSpec) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(spec, dir.path()).unwrap();
    dir
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn manifest_scene_and_events_round_trip_byte_identical() {
    let dir = generate(&SyntheticSpec::two_gaussians(0));
    let data = load_dataset(dir.path()).unwrap();
    let original = fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap();
    assert_eq!(data.manifest.to_json().unwrap(), original);
    for (rec, view) in data.manifest.views.iter().zip(&data.views) {
        assert_eq!(format_events(&view.stream), fs::read_to_string(dir.path().join(&rec.events)).unwrap());
    }
    let scene_text = fs::read_to_string(dir.path().join("gt_scene.txt")).unwrap();
    let scene = Scene::read(dir.path().join("gt_scene.txt")).unwrap();
    assert_eq!(scene.to_text(), scene_text);
}

#[test]
fn generator_is_deterministic() {
    let spec = SyntheticSpec::two_gaussians(4);
    let (a, b) = (generate(&spec), generate(&spec));
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
}

#[test]
fn blurry_is_the_mean_of_the_latents() {
    let dir = generate(&SyntheticSpec::two_gaussians(1));
    let data = load_dataset(dir.path()).unwrap();
    for (view, truth) in data.views.iter().zip(&data.truth) {
        assert_eq!(truth.latents.len(), 5);
        let blur = synthesize_blur(&truth.latents).unwrap().round_to_f32();
        assert_eq!(blur, view.blurry);
    }
}

#[test]
fn static_camera_gives_sharp_blur_and_no_events() {
    let mut spec = SyntheticSpec::two_gaussians(0);
    spec.trajectories = spec.trajectories.iter().map(|t| Trajectory::fixed(t.start)).collect();
    let dir = generate(&spec);
    let data = load_dataset(dir.path()).unwrap();
    for (view, truth) in data.views.iter().zip(&data.truth) {
        assert!(view.stream.is_empty());
        assert_eq!(&view.blurry, truth.sharp.as_ref().unwrap());
    }
}

#[test]
fn edi_recovers_two_gaussian_latents_within_quantization() {
    let dir = generate(&SyntheticSpec::two_gaussians(0));
    let data = load_dataset(dir.path()).unwrap();
    let c = data.thresholds.c_pos.max(data.thresholds.c_neg);
    for (view, truth) in data.views.iter().zip(&data.truth) {
        let rec = reconstruct_latents_unclamped(&view.blurry, &view.stream, 5, data.thresholds).unwrap();
        let worst = rec
            .images
            .iter()
            .zip(&truth.latents)
            .flat_map(|(r, t)| r.data().iter().zip(t.data()).map(|(a, b)| (a / b).ln().abs()))
            .fold(0.0, f64::max);
        assert!(worst <= c + 1e-9, "{}: |log ratio| {worst}", view.name);
    }
}

#[test]
fn ground_truth_scene_scores_at_cap() {
    let dir = generate(&SyntheticSpec::two_gaussians(0));
    let data = load_dataset(dir.path()).unwrap();
    let gt = Scene::read(dir.path().join("gt_scene.txt")).unwrap();
    for mode in [EvalMode::Deblur, EvalMode::NovelView] {
        let table = evaluate(&gt, &data, mode, &RasterSettings::default()).unwrap();
        for row in table.rows.iter().chain([&table.mean()]) {
            assert_eq!(row.psnr, PSNR_CAP);
            assert!((row.ssim - 1.0).abs() < 1e-12);
        }
    }
}

fn edit_manifest(dir: &Path, f: impl FnOnce(&mut Manifest)) {
    let path = dir.join(MANIFEST_NAME);
    let mut m = Manifest::read(&path).unwrap();
    f(&mut m);
    m.write(&path).unwrap();
}

#[test]
fn pose_count_mismatch_names_the_view() {
    let dir = generate(&SyntheticSpec::two_gaussians(0));
    edit_manifest(dir.path(), |m| {
        m.views[1].poses.pop();
    });
    match load_dataset(dir.path()) {
        Err(Error::PoseCountMismatch { view, expected, found }) => {
            assert_eq!((view.as_str(), expected, found), ("view_001", 5, 4));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn late_event_is_out_of_window_with_line() {
    let dir = generate(&SyntheticSpec::two_gaussians(0));
    let path = dir.path().join("view_000/events.txt");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("1.5 0 0 1\n");
    let line = text.lines().count();
    fs::write(&path, text).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::OutOfWindow { line: l, tau, .. }) => {
            assert_eq!(l, line);
            assert_eq!(tau, 1.5);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unsorted_events_and_missing_files_are_distinct() {
    let dir = generate(&SyntheticSpec::two_gaussians(0));
    let path = dir.path().join("view_000/events.txt");
    fs::write(&path, "# tau x y p\n0.5 0 0 1\n0.25 1 1 -1\n").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::UnsortedEvents { line: 3, .. })));

    let dir = generate(&SyntheticSpec::two_gaussians(0));
    fs::remove_file(dir.path().join("view_001/blurry.f32")).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::MissingFile(p)) => assert!(p.ends_with("view_001/blurry.f32")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_ground_truth_makes_mode_unavailable() {
    let dir = generate(&SyntheticSpec::two_gaussians(0));
    edit_manifest(dir.path(), |m| {
        m.test_views[0].sharp = None;
    });
    let data = load_dataset(dir.path()).unwrap();
    let scene = Scene::read(dir.path().join("gt_scene.txt")).unwrap();
    assert!(matches!(
        evaluate(&scene, &data, EvalMode::NovelView, &RasterSettings::default()),
        Err(Error::ModeUnavailable { .. })
    ));
    assert!(evaluate(&scene, &data, EvalMode::Deblur, &RasterSettings::default()).is_ok());
}
