//! Render timing.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::raster::{render, RasterSettings};
use crate::splat::{Camera, Scene};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub warmup_frames: usize,
    pub repeats: usize,
    pub frames_per_repeat: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup_frames: 20,
            repeats: 10,
            frames_per_repeat: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// Median frame time of each repeat, in milliseconds.
    pub repeat_ms: Vec<f64>,
    /// Mean frame time of each repeat, in milliseconds.
    pub repeat_mean_ms: Vec<f64>,
    pub ms_per_frame: f64,
    pub fps: f64,
    /// Coefficient of variation of `repeat_ms`.
    pub spread: f64,
    /// Coefficient of variation of `repeat_mean_ms`; sensitive to preemption.
    pub mean_spread: f64,
}

fn mean_and_cv(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt() / mean)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

impl BenchReport {
    /// Builds a report from per-frame times (milliseconds) grouped by repeat.
    pub fn from_frame_times(mut repeats: Vec<Vec<f64>>) -> Result<Self> {
        if repeats.is_empty() || repeats.iter().any(|r| r.is_empty()) {
            return Err(Error::invalid("benchmark needs at least one frame per repeat"));
        }
        let repeat_mean_ms: Vec<f64> = repeats.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
        let repeat_ms: Vec<f64> = repeats.iter_mut().map(|r| median(r)).collect();
        let (ms, spread) = mean_and_cv(&repeat_ms);
        let (_, mean_spread) = mean_and_cv(&repeat_mean_ms);
        Ok(Self {
            ms_per_frame: ms,
            fps: 1000.0 / ms,
            spread,
            mean_spread,
            repeat_ms,
            repeat_mean_ms,
        })
    }

    pub fn summary(&self) -> String {
        format!(
            "{:.3} ms/frame  {:.1} FPS  spread {:.2}% over {} repeats (of per-repeat medians; {:.2}% of means)",
            self.ms_per_frame,
            self.fps,
            100.0 * self.spread,
            self.repeat_ms.len(),
            100.0 * self.mean_spread
        )
    }
}

pub fn bench_render(
    scene: &Scene,
    cam: &Camera,
    background: [f64; 3],
    settings: &RasterSettings,
    config: &BenchConfig,
) -> Result<BenchReport> {
    if config.repeats == 0 || config.frames_per_repeat == 0 {
        return Err(Error::invalid("repeats and frames per repeat must be positive"));
    }
    for _ in 0..config.warmup_frames {
        std::hint::black_box(render(scene, cam, background, settings)?);
    }
    let mut repeats = Vec::with_capacity(config.repeats);
    for _ in 0..config.repeats {
        let mut frames = Vec::with_capacity(config.frames_per_repeat);
        for _ in 0..config.frames_per_repeat {
            let start = Instant::now();
            std::hint::black_box(render(scene, cam, background, settings)?);
            frames.push(start.elapsed().as_secs_f64() * 1000.0);
        }
        repeats.push(frames);
    }
    BenchReport::from_frame_times(repeats)
}
