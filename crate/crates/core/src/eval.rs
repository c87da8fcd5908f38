//! PSNR/SSIM evaluation of a trained scene against a dataset's sharp images.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::{render, RasterSettings};
use crate::splat::{Camera, Pose, Scene};
use crate::train::{psnr, ssim_metric};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Mid-exposure pose of each training view.
    Deblur,
    /// Held-out test poses.
    NovelView,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Deblur => "deblur",
            EvalMode::NovelView => "novel-view",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deblur" => Ok(EvalMode::Deblur),
            "novel-view" | "novel_view" | "novel" => Ok(EvalMode::NovelView),
            _ => Err(Error::invalid(format!("unknown evaluation mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub mode: EvalMode,
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn mean(&self) -> MetricsRow {
        let n = self.rows.len().max(1) as f64;
        MetricsRow {
            name: "mean".into(),
            psnr: self.rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: self.rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("view,psnr,ssim\n");
        for r in self.rows.iter().chain(std::iter::once(&self.mean())) {
            s.push_str(&format!("{},{},{}\n", r.name, r.psnr, r.ssim));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mean = self.mean();
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain([4, mean.name.len()])
            .max()
            .unwrap_or(4);
        let mut s = format!("{:<width$}  {:>9}  {:>7}\n", "view", "PSNR", "SSIM");
        for r in &self.rows {
            s.push_str(&format!("{:<width$}  {:>9.3}  {:>7.4}\n", r.name, r.psnr, r.ssim));
        }
        s.push_str(&format!("{}\n", "-".repeat(width + 20)));
        s.push_str(&format!("{:<width$}  {:>9.3}  {:>7.4}\n", mean.name, mean.psnr, mean.ssim));
        s
    }
}

fn score(scene: &Scene, pose: &Pose, truth: &Image, dataset: &Dataset, settings: &RasterSettings) -> Result<(f64, f64)> {
    let cam = Camera::new(pose, dataset.intrinsics())?;
    let img = render(scene, &cam, dataset.background(), settings)?.image;
    Ok((psnr(&img, truth)?, ssim_metric(&img, truth)?))
}

/// Renders the poses selected by `mode` and scores them against ground truth.
pub fn evaluate(scene: &Scene, dataset: &Dataset, mode: EvalMode, settings: &RasterSettings) -> Result<MetricsTable> {
    let unavailable = |reason: String| Error::ModeUnavailable {
        mode: mode.name().into(),
        reason,
    };
    let targets: Vec<(String, Pose, &Image)> = match mode {
        EvalMode::Deblur => dataset
            .views
            .iter()
            .zip(&dataset.truth)
            .map(|(v, t)| {
                let sharp = t
                    .sharp
                    .as_ref()
                    .ok_or_else(|| unavailable(format!("view `{}` has no sharp image", v.name)))?;
                Ok((v.name.clone(), v.poses[v.mid_index()], sharp))
            })
            .collect::<Result<_>>()?,
        EvalMode::NovelView => dataset
            .test_views
            .iter()
            .map(|t| {
                let sharp = t
                    .sharp
                    .as_ref()
                    .ok_or_else(|| unavailable(format!("test view `{}` has no sharp image", t.name)))?;
                Ok((t.name.clone(), t.pose, sharp))
            })
            .collect::<Result<_>>()?,
    };
    if targets.is_empty() {
        return Err(unavailable("dataset has no views for this mode".into()));
    }
    let rows = targets
        .par_iter()
        .map(|(name, pose, truth)| {
            let (p, s) = score(scene, pose, truth, dataset, settings)?;
            Ok(MetricsRow {
                name: name.clone(),
                psnr: p,
                ssim: s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsTable { mode, rows })
}
