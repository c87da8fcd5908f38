//! Loss terms: blur synthesis, L1 + D-SSIM image loss, event-count estimation
//! with a straight-through gradient, the event MSE and their weighted sum.
//!
//! Every differentiable term comes as a value function and a `*_grad`
//! companion returning the gradient with respect to its first argument(s).

use crate::error::{Error, Result};
use crate::event::{safe_log, EventBinImage, Thresholds, LOG_FLOOR};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_dssim: f64,
    pub w_event: f64,
    /// Latent frames per exposure.
    pub n: usize,
    pub thresholds: Thresholds,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_dssim: 0.2,
            w_event: 0.005,
            n: 5,
            thresholds: Thresholds::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w_dssim) {
            return Err(Error::invalid(format!("w_dssim must lie in [0, 1], got {}", self.w_dssim)));
        }
        if !(self.w_event >= 0.0 && self.w_event.is_finite()) {
            return Err(Error::invalid(format!("w_event must be non-negative, got {}", self.w_event)));
        }
        if self.n < 2 {
            return Err(Error::invalid(format!("latent count must be at least 2, got {}", self.n)));
        }
        self.thresholds.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub dssim: f64,
    pub blur_loss: f64,
    pub event_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn csv_header() -> &'static str {
        "iter,l1,dssim,blur,event,total"
    }

    pub fn csv_row(&self, iter: usize) -> String {
        format!(
            "{iter},{},{},{},{},{}",
            self.l1, self.dssim, self.blur_loss, self.event_loss, self.total
        )
    }
}

/// How the event-count estimate treats the quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventQuantization {
    /// Truncate toward zero in the forward pass; identity in the backward pass.
    StraightThrough,
    /// No quantization: the smooth `d / C` estimate in both passes.
    Surrogate,
}

/// Per-pixel mean of `images`.
pub fn synthesize_blur(images: &[Image]) -> Result<Image> {
    let first = images.first().ok_or_else(|| Error::invalid("synthesize_blur needs at least one image"))?;
    for img in &images[1..] {
        img.check_same_shape(first, "synthesize_blur")?;
    }
    let n = images.len() as f64;
    let mut out = first.clone();
    for img in &images[1..] {
        for (o, v) in out.data_mut().iter_mut().zip(img.data()) {
            *o += v;
        }
    }
    for o in out.data_mut() {
        *o /= n;
    }
    Ok(out)
}

pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "l1")?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.data().len() as f64)
}

pub fn l1_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let value = l1(a, b)?;
    let n = a.data().len() as f64;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x - y;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((value, Image::from_vec(a.width(), a.height(), a.channels(), data)?))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable "valid" Gaussian filtering of one plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`].
fn filter_valid_adjoint(map: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for i in 0..SSIM_WINDOW {
                tmp[(y + i) * ow + x] += k[i] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for i in 0..SSIM_WINDOW {
                out[y * w + x + i] += k[i] * v;
            }
        }
    }
    out
}

fn planes(img: &Image) -> Vec<Vec<f64>> {
    let c = img.channels();
    (0..c)
        .map(|ch| img.data().iter().skip(ch).step_by(c).copied().collect())
        .collect()
}

fn check_ssim_inputs(a: &Image, b: &Image) -> Result<()> {
    a.check_same_shape(b, "ssim")?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    Ok(())
}

struct SsimStats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
}

fn ssim_stats(pa: &[f64], pb: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> SsimStats {
    let mu_a = filter_valid(pa, w, h, k);
    let mu_b = filter_valid(pb, w, h, k);
    let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let s_aa = filter_valid(&sq(pa, pa), w, h, k);
    let s_bb = filter_valid(&sq(pb, pb), w, h, k);
    let s_ab = filter_valid(&sq(pa, pb), w, h, k);
    let n = mu_a.len();
    let (mut a1, mut a2, mut b1, mut b2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        a1[i] = 2.0 * ma * mb + SSIM_C1;
        a2[i] = 2.0 * (s_ab[i] - ma * mb) + SSIM_C2;
        b1[i] = ma * ma + mb * mb + SSIM_C1;
        b2[i] = (s_aa[i] - ma * ma) + (s_bb[i] - mb * mb) + SSIM_C2;
    }
    SsimStats { mu_a, mu_b, a1, a2, b1, b2 }
}

/// Mean SSIM over channels and valid window positions (11x11 Gaussian
/// window, σ = 1.5, C1 = 0.01², C2 = 0.03²).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_ssim_inputs(a, b)?;
    let k = gaussian_kernel();
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    let mut count = 0usize;
    for (pa, pb) in planes(a).iter().zip(planes(b).iter()) {
        let st = ssim_stats(pa, pb, w, h, &k);
        for i in 0..st.a1.len() {
            total += st.a1[i] * st.a2[i] / (st.b1[i] * st.b2[i]);
        }
        count += st.a1.len();
    }
    Ok(total / count as f64)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    check_ssim_inputs(a, b)?;
    let k = gaussian_kernel();
    let (w, h, c) = (a.width(), a.height(), a.channels());
    let pas = planes(a);
    let pbs = planes(b);
    let positions = (w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW);
    let norm = 1.0 / (positions * c) as f64;
    let mut total = 0.0;
    let mut grad = Image::new(w, h, c);
    for ch in 0..c {
        let (pa, pb) = (&pas[ch], &pbs[ch]);
        let st = ssim_stats(pa, pb, w, h, &k);
        let mut d_mu = vec![0.0; positions];
        let mut d_saa = vec![0.0; positions];
        let mut d_sab = vec![0.0; positions];
        for i in 0..positions {
            let (ma, mb) = (st.mu_a[i], st.mu_b[i]);
            let denom = st.b1[i] * st.b2[i];
            let s = st.a1[i] * st.a2[i] / denom;
            total += s;
            d_mu[i] = norm
                * ((2.0 * mb * st.a2[i] - 2.0 * mb * st.a1[i]) / denom
                    - s * (2.0 * ma / st.b1[i] - 2.0 * ma / st.b2[i]));
            d_saa[i] = -norm * s / st.b2[i];
            d_sab[i] = norm * 2.0 * st.a1[i] / denom;
        }
        let g_mu = filter_valid_adjoint(&d_mu, w, h, &k);
        let g_saa = filter_valid_adjoint(&d_saa, w, h, &k);
        let g_sab = filter_valid_adjoint(&d_sab, w, h, &k);
        for p in 0..w * h {
            grad.data_mut()[p * c + ch] = g_mu[p] + 2.0 * pa[p] * g_saa[p] + pb[p] * g_sab[p];
        }
    }
    Ok((total * norm, grad))
}

/// `(1 - SSIM) / 2`.
pub fn dssim(a: &Image, b: &Image) -> Result<f64> {
    Ok((1.0 - ssim(a, b)?) / 2.0)
}

/// `(1 - w)·L1 + w·D-SSIM`.
pub fn blur_loss(pred_blur: &Image, target_blur: &Image, w_dssim: f64) -> Result<f64> {
    let l = l1(pred_blur, target_blur)?;
    let d = if w_dssim == 0.0 { 0.0 } else { dssim(pred_blur, target_blur)? };
    Ok((1.0 - w_dssim) * l + w_dssim * d)
}

/// Returns `(l1, dssim, d blur_loss / d pred_blur)`.
pub fn blur_loss_grad(pred_blur: &Image, target_blur: &Image, w_dssim: f64) -> Result<(f64, f64, Image)> {
    let (l, mut grad) = l1_grad(pred_blur, target_blur)?;
    for g in grad.data_mut() {
        *g *= 1.0 - w_dssim;
    }
    let (s, s_grad) = ssim_grad(pred_blur, target_blur)?;
    if w_dssim != 0.0 {
        for (g, sg) in grad.data_mut().iter_mut().zip(s_grad.data()) {
            *g -= 0.5 * w_dssim * sg;
        }
    }
    Ok((l, (1.0 - s) / 2.0, grad))
}

pub fn to_grayscale(image: &Image) -> Result<Image> {
    if image.channels() != 3 {
        return Err(Error::invalid("to_grayscale expects an RGB image"));
    }
    let data = image
        .data()
        .chunks_exact(3)
        .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
        .collect();
    Image::from_vec(image.width(), image.height(), 1, data)
}

/// Adjoint of [`to_grayscale`].
pub fn to_grayscale_adjoint(grad_gray: &Image) -> Image {
    let data = grad_gray
        .data()
        .iter()
        .flat_map(|&g| [LUMA[0] * g, LUMA[1] * g, LUMA[2] * g])
        .collect();
    Image::from_vec(grad_gray.width(), grad_gray.height(), 3, data).expect("rgb shape")
}

/// Log difference scaled by the threshold of its sign: `d / c_pos` when the
/// intensity rises, `d / c_neg` otherwise.
#[inline]
fn scaled_log_diff(l_n: f64, l_m: f64, th: &Thresholds) -> (f64, f64) {
    let d = safe_log(l_m) - safe_log(l_n);
    let c = if d > 0.0 { th.c_pos } else { th.c_neg };
    (d / c, c)
}

/// Estimated signed event count between two intensity frames: `floor(d /
/// c_pos)` for brightening pixels, `ceil(d / c_neg)` otherwise.
pub fn estimate_event_bin(l_n: &Image, l_m: &Image, thresholds: Thresholds) -> Result<Image> {
    estimate_event_bin_with(l_n, l_m, thresholds, EventQuantization::StraightThrough)
}

pub fn estimate_event_bin_with(
    l_n: &Image,
    l_m: &Image,
    thresholds: Thresholds,
    mode: EventQuantization,
) -> Result<Image> {
    l_n.check_same_shape(l_m, "estimate_event_bin")?;
    let data = l_n
        .data()
        .iter()
        .zip(l_m.data())
        .map(|(&a, &b)| {
            let (q, _) = scaled_log_diff(a, b, &thresholds);
            match mode {
                EventQuantization::StraightThrough => q.trunc(),
                EventQuantization::Surrogate => q,
            }
        })
        .collect();
    Image::from_vec(l_n.width(), l_n.height(), l_n.channels(), data)
}

/// Mean squared difference between estimated and recorded counts.
pub fn event_loss(estimated: &Image, ground_truth: &EventBinImage) -> Result<f64> {
    if estimated.width() != ground_truth.width()
        || estimated.height() != ground_truth.height()
        || estimated.channels() != 1
    {
        return Err(Error::invalid("event_loss: estimate and ground truth differ in size"));
    }
    let sum: f64 = estimated
        .data()
        .iter()
        .zip(ground_truth.counts())
        .map(|(e, &g)| (e - g as f64).powi(2))
        .sum();
    Ok(sum / estimated.data().len() as f64)
}

/// Event loss between two intensity frames and its gradients with respect
/// to both frames. The quantizer is treated as identity in the backward pass.
pub fn event_loss_grad(
    l_n: &Image,
    l_m: &Image,
    ground_truth: &EventBinImage,
    thresholds: Thresholds,
    mode: EventQuantization,
) -> Result<(f64, Image, Image)> {
    let est = estimate_event_bin_with(l_n, l_m, thresholds, mode)?;
    let loss = event_loss(&est, ground_truth)?;
    let n = est.data().len() as f64;
    let mut g_n = Image::new(l_n.width(), l_n.height(), 1);
    let mut g_m = Image::new(l_n.width(), l_n.height(), 1);
    for i in 0..est.data().len() {
        let (a, b) = (l_n.data()[i], l_m.data()[i]);
        let (_, c) = scaled_log_diff(a, b, &thresholds);
        let d_est = 2.0 * (est.data()[i] - ground_truth.counts()[i] as f64) / n;
        let d_diff = d_est / c;
        if b > LOG_FLOOR {
            g_m.data_mut()[i] = d_diff / b;
        }
        if a > LOG_FLOOR {
            g_n.data_mut()[i] = -d_diff / a;
        }
    }
    Ok((loss, g_n, g_m))
}

/// `total = blur_loss + w_event · event_loss` with `blur_loss = (1 - w)·l1 + w·dssim`.
pub fn total_loss(l1: f64, dssim: f64, event_loss: f64, weights: &LossWeights) -> LossBreakdown {
    let blur_loss = (1.0 - weights.w_dssim) * l1 + weights.w_dssim * dssim;
    LossBreakdown {
        l1,
        dssim,
        blur_loss,
        event_loss,
        total: blur_loss + weights.w_event * event_loss,
    }
}
