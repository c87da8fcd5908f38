//! Dataset manifest (`format_version: 1`) and an eager, fully validating loader.
//!
//! The manifest is a JSON document whose paths are relative to its own
//! directory:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "intrinsics": { "fx": 64.0, "fy": 64.0, "cx": 32.0, "cy": 32.0, "width": 64, "height": 64 },
//!   "n_latents": 5,
//!   "thresholds": { "c_pos": 0.2, "c_neg": 0.3 },
//!   "background": [0.2, 0.2, 0.2],
//!   "points": "points.txt",
//!   "views": [{
//!     "name": "view_000",
//!     "blurry": "view_000/blurry.f32",
//!     "exposure": [0.0, 1.0],
//!     "poses": [{ "q": [1.0, 0.0, 0.0, 0.0], "t": [0.0, 0.0, 0.0] }],
//!     "events": "view_000/events.txt",
//!     "sharp": "view_000/sharp.f32",
//!     "latents": ["view_000/latent_0.f32"]
//!   }],
//!   "test_views": [{ "name": "test_000", "pose": { "q": [1.0, 0.0, 0.0, 0.0], "t": [0.0, 0.0, 0.0] }, "sharp": "test_000/sharp.f32" }]
//! }
//! ```
//!
//! Images ending in `.png` are read as 8-bit PNG, anything else as a float dump.
//! The points file holds `x y z` or `x y z r g b` per line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{read_events, Thresholds};
use crate::image::Image;
use crate::splat::{Intrinsics, Pose};
use crate::train::{InitPoint, View};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Rotation quaternion `(w, x, y, z)`, world to camera.
    pub q: [f64; 4],
    pub t: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(pose: &Pose) -> Self {
        let (q, t) = pose.to_wxyz_t();
        Self { q, t }
    }

    pub fn to_pose(&self) -> Result<Pose> {
        Pose::from_wxyz_t(self.q, self.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub c_pos: f64,
    pub c_neg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub name: String,
    pub blurry: String,
    pub exposure: (f64, f64),
    pub poses: Vec<PoseRecord>,
    pub events: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharp: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub latents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestViewRecord {
    pub name: String,
    pub pose: PoseRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub intrinsics: Intrinsics,
    pub n_latents: usize,
    pub thresholds: ThresholdRecord,
    pub background: [f64; 3],
    pub points: String,
    pub views: Vec<ViewRecord>,
    #[serde(default)]
    pub test_views: Vec<TestViewRecord>,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("unsupported format_version {}", manifest.format_version),
            });
        }
        Ok(manifest)
    }

    pub fn thresholds(&self) -> Result<Thresholds> {
        Thresholds::new(self.thresholds.c_pos, self.thresholds.c_neg)
    }
}

/// Ground truth attached to a training view, when the dataset provides it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViewTruth {
    /// Sharp image at the mid-exposure pose.
    pub sharp: Option<Image>,
    pub latents: Vec<Image>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestView {
    pub name: String,
    pub pose: Pose,
    pub sharp: Option<Image>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub thresholds: Thresholds,
    pub views: Vec<View>,
    pub truth: Vec<ViewTruth>,
    pub test_views: Vec<TestView>,
    pub points: Vec<InitPoint>,
}

impl Dataset {
    pub fn intrinsics(&self) -> Intrinsics {
        self.manifest.intrinsics
    }

    pub fn n_latents(&self) -> usize {
        self.manifest.n_latents
    }

    pub fn background(&self) -> [f64; 3] {
        self.manifest.background
    }
}

fn load_image(root: &Path, rel: &str, intr: &Intrinsics) -> Result<Image> {
    let path = root.join(rel);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let img = Image::read_any(&path)?;
    if img.width() != intr.width || img.height() != intr.height || img.channels() != 3 {
        return Err(Error::Parse {
            path,
            line: 0,
            msg: format!(
                "image is {}x{}x{}, expected {}x{}x3",
                img.width(),
                img.height(),
                img.channels(),
                intr.width,
                intr.height
            ),
        });
    }
    Ok(img)
}

/// Reads `x y z [r g b]` lines.
pub fn parse_points(text: &str, path: &Path) -> Result<Vec<InitPoint>> {
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg,
        };
        let vals = line
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|_| err(format!("bad number `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite coordinate".into()));
        }
        let color = match vals.len() {
            3 => None,
            6 => Some([vals[3], vals[4], vals[5]]),
            n => return Err(err(format!("expected 3 or 6 values, got {n}"))),
        };
        points.push(InitPoint {
            position: [vals[0], vals[1], vals[2]],
            color,
        });
    }
    Ok(points)
}

pub fn format_points(points: &[InitPoint]) -> String {
    let mut s = String::from("# x y z [r g b]\n");
    for p in points {
        let [x, y, z] = p.position;
        match p.color {
            Some([r, g, b]) => s.push_str(&format!("{x} {y} {z} {r} {g} {b}\n")),
            None => s.push_str(&format!("{x} {y} {z}\n")),
        }
    }
    s
}

/// Loads and validates everything a manifest references. Accepts either the
/// manifest path or its directory.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let manifest = Manifest::read(&manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let intr = manifest.intrinsics;
    if intr.width == 0 || intr.height == 0 || !(intr.fx > 0.0 && intr.fy > 0.0) {
        return Err(Error::invalid("intrinsics must have positive size and focal lengths"));
    }
    let thresholds = manifest.thresholds()?;
    let n = manifest.n_latents;
    if n == 0 {
        return Err(Error::invalid("n_latents must be at least 1"));
    }

    let points_path = root.join(&manifest.points);
    if !points_path.exists() {
        return Err(Error::MissingFile(points_path));
    }
    let points = parse_points(&fs::read_to_string(&points_path)?, &points_path)?;

    let mut views = Vec::with_capacity(manifest.views.len());
    let mut truth = Vec::with_capacity(manifest.views.len());
    for rec in &manifest.views {
        if rec.poses.len() != n {
            return Err(Error::PoseCountMismatch {
                view: rec.name.clone(),
                expected: n,
                found: rec.poses.len(),
            });
        }
        let (t0, t1) = rec.exposure;
        if !(t0 < t1) {
            return Err(Error::invalid(format!("view `{}`: empty exposure window", rec.name)));
        }
        let poses = rec.poses.iter().map(PoseRecord::to_pose).collect::<Result<Vec<_>>>()?;
        let blurry = load_image(&root, &rec.blurry, &intr)?;
        let stream = read_events(root.join(&rec.events), t0, t1, intr.width, intr.height)?;
        let sharp = rec.sharp.as_ref().map(|p| load_image(&root, p, &intr)).transpose()?;
        let latents = rec
            .latents
            .iter()
            .map(|p| load_image(&root, p, &intr))
            .collect::<Result<Vec<_>>>()?;
        if !latents.is_empty() && latents.len() != n {
            return Err(Error::invalid(format!(
                "view `{}`: {} latent images for {} poses",
                rec.name,
                latents.len(),
                n
            )));
        }
        let view = View {
            name: rec.name.clone(),
            blurry,
            exposure: rec.exposure,
            poses,
            stream,
            intrinsics: intr,
        };
        view.validate(n)?;
        views.push(view);
        truth.push(ViewTruth { sharp, latents });
    }

    let test_views = manifest
        .test_views
        .iter()
        .map(|rec| {
            Ok(TestView {
                name: rec.name.clone(),
                pose: rec.pose.to_pose()?,
                sharp: rec.sharp.as_ref().map(|p| load_image(&root, p, &intr)).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Dataset {
        root,
        manifest,
        thresholds,
        views,
        truth,
        test_views,
        points,
    })
}
