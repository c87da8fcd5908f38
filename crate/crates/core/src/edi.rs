//! Event-based double integral deblurring.
//!
//! A blurry frame is modelled as the mean of `n` sharp frames at equally
//! spaced instants. Events between consecutive instants give each frame's
//! intensity relative to the first as a product of `exp(±C)` factors, which
//! pins down the first frame and hence all of them.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::event::{bin_events, uniform_timestamps, EventStream, Thresholds};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSet {
    pub images: Vec<Image>,
    pub timestamps: Vec<f64>,
}

/// Per-pixel multiplicative factors `E_i` relative to the first instant.
///
/// `E_1 = 1`, `E_{i+1} = E_i * exp(c_pos * #pos_i - c_neg * #neg_i)`.
pub fn exposure_factors(
    stream: &EventStream,
    n: usize,
    width: usize,
    height: usize,
    thresholds: Thresholds,
) -> Result<Vec<Image>> {
    thresholds.validate()?;
    stream.check_bounds(width, height)?;
    let bins = bin_events(stream, n)?;
    let mut log_factor = vec![0.0f64; width * height];
    let mut out = Vec::with_capacity(n);
    out.push(Image::filled(width, height, 1, 1.0));
    for bin in &bins {
        for e in &bin.events {
            log_factor[e.y as usize * width + e.x as usize] += thresholds.step(e.polarity);
        }
        let data = log_factor.iter().map(|l| l.exp()).collect();
        out.push(Image::from_vec(width, height, 1, data)?);
    }
    Ok(out)
}

/// Reconstructs latent frames without clamping. The mean of the returned
/// frames equals `blurry` up to rounding.
pub fn reconstruct_latents_unclamped(
    blurry: &Image,
    stream: &EventStream,
    n: usize,
    thresholds: Thresholds,
) -> Result<LatentSet> {
    let (width, height, channels) = (blurry.width(), blurry.height(), blurry.channels());
    let factors = exposure_factors(stream, n, width, height, thresholds).map_err(|e| match e {
        Error::MalformedStream(msg) => Error::invalid(format!("event stream does not match blurry image: {msg}")),
        other => other,
    })?;

    let mut images: Vec<Vec<f64>> = vec![vec![0.0; width * height * channels]; n];
    let row_len = width * channels;
    // Per-row work, written into per-frame row slices.
    let rows: Vec<Vec<Vec<f64>>> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut frames = vec![vec![0.0; row_len]; n];
            for x in 0..width {
                let sum: f64 = factors.iter().map(|f| f.get(x, y, 0)).sum();
                for c in 0..channels {
                    let first = n as f64 * blurry.get(x, y, c) / sum;
                    for (i, f) in factors.iter().enumerate() {
                        frames[i][x * channels + c] = first * f.get(x, y, 0);
                    }
                }
            }
            frames
        })
        .collect();
    for (y, frames) in rows.into_iter().enumerate() {
        for (i, row) in frames.into_iter().enumerate() {
            images[i][y * row_len..(y + 1) * row_len].copy_from_slice(&row);
        }
    }
    let images = images
        .into_iter()
        .map(|d| Image::from_vec(width, height, channels, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentSet {
        images,
        timestamps: uniform_timestamps(stream.t_start(), stream.t_end(), n),
    })
}

/// Reconstructs `n` sharp frames and clamps them to `[0, 1]`. The luminance
/// factor is applied identically to every color channel.
pub fn reconstruct_latents(
    blurry: &Image,
    stream: &EventStream,
    n: usize,
    thresholds: Thresholds,
) -> Result<LatentSet> {
    let mut set = reconstruct_latents_unclamped(blurry, stream, n, thresholds)?;
    for img in &mut set.images {
        for v in img.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Event, Polarity};
    use proptest::prelude::*;

    fn stream(events: Vec<Event>) -> EventStream {
        EventStream::new(events, 0.0, 1.0).unwrap()
    }

    #[test]
    fn empty_stream_has_unit_factors() {
        let f = exposure_factors(&stream(vec![]), 4, 3, 2, Thresholds::default()).unwrap();
        assert_eq!(f.len(), 4);
        assert!(f.iter().all(|img| img.data().iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn single_positive_event_factor() {
        let th = Thresholds::new(0.2, 0.3).unwrap();
        let s = stream(vec![Event::new(0, 0, 0.5, Polarity::Positive)]);
        let f = exposure_factors(&s, 2, 1, 1, th).unwrap();
        assert_eq!(f[0].get(0, 0, 0), 1.0);
        assert!((f[1].get(0, 0, 0) - 1.2214027581601699).abs() < 1e-12);
    }

    #[test]
    fn symmetric_events_cancel() {
        let th = Thresholds::new(0.2, 0.2).unwrap();
        let s = stream(vec![
            Event::new(0, 0, 0.3, Polarity::Positive),
            Event::new(0, 0, 0.6, Polarity::Negative),
        ]);
        let f = exposure_factors(&s, 2, 1, 1, th).unwrap();
        assert!((f[1].get(0, 0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn no_events_reproduce_blurry() {
        let blurry = Image::from_fn(3, 2, 3, |x, y, c| 0.1 + 0.1 * (x + y + c) as f64);
        let set = reconstruct_latents(&blurry, &stream(vec![]), 5, Thresholds::default()).unwrap();
        assert_eq!(set.images.len(), 5);
        for img in &set.images {
            for (a, b) in img.data().iter().zip(blurry.data()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn one_event_two_frames_analytic() {
        let th = Thresholds::new(0.2, 0.3).unwrap();
        let blurry = Image::filled(1, 1, 1, 0.5);
        let s = stream(vec![Event::new(0, 0, 0.5, Polarity::Positive)]);
        let set = reconstruct_latents(&blurry, &s, 2, th).unwrap();
        let i1 = 2.0 * 0.5 / (1.0 + 0.2f64.exp());
        assert!((set.images[0].get(0, 0, 0) - i1).abs() < 1e-12);
        assert!((set.images[1].get(0, 0, 0) - i1 * 0.2f64.exp()).abs() < 1e-12);
        assert!((set.images[0].get(0, 0, 0) - 0.4502).abs() < 1e-4);
        assert!((set.images[1].get(0, 0, 0) - 0.5498).abs() < 1e-4);
    }

    #[test]
    fn dimension_mismatch_is_invalid_argument() {
        let blurry = Image::filled(2, 2, 3, 0.5);
        let s = stream(vec![Event::new(5, 0, 0.5, Polarity::Positive)]);
        assert!(matches!(
            reconstruct_latents(&blurry, &s, 3, Thresholds::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    proptest! {
        #[test]
        fn mean_of_latents_matches_blurry(
            blur in 0.01f64..1.0,
            raw in prop::collection::vec((1u32..1000, any::<bool>()), 0..12),
            n in 2usize..8,
        ) {
            let mut events: Vec<Event> = raw.into_iter().map(|(t, p)| {
                Event::new(0, 0, t as f64 / 1000.0, if p { Polarity::Positive } else { Polarity::Negative })
            }).collect();
            events.sort_by(Event::canonical_cmp);
            let set = reconstruct_latents_unclamped(&Image::filled(1, 1, 3, blur), &stream(events), n, Thresholds::default()).unwrap();
            for c in 0..3 {
                let mean = set.images.iter().map(|i| i.get(0, 0, c)).sum::<f64>() / n as f64;
                prop_assert!((mean - blur).abs() < 1e-12);
                prop_assert!(set.images.iter().all(|i| i.get(0, 0, c) >= 0.0));
            }
        }

        #[test]
        fn extra_positive_event_shifts_mass_later(bin in 0usize..4, base in prop::collection::vec(1u32..1000, 0..6)) {
            let n = 5;
            let ts = uniform_timestamps(0.0, 1.0, n);
            let mk = |extra: bool| {
                let mut events: Vec<Event> = base.iter().map(|&t| Event::new(0, 0, t as f64 / 1000.0, Polarity::Negative)).collect();
                if extra {
                    events.push(Event::new(0, 0, 0.5 * (ts[bin] + ts[bin + 1]), Polarity::Positive));
                }
                events.sort_by(Event::canonical_cmp);
                reconstruct_latents_unclamped(&Image::filled(1, 1, 1, 0.4), &stream(events), n, Thresholds::default()).unwrap()
            };
            let (before, after) = (mk(false), mk(true));
            for j in 0..n {
                let (a, b) = (before.images[j].get(0, 0, 0), after.images[j].get(0, 0, 0));
                if j > bin { prop_assert!(b > a) } else { prop_assert!(b < a) }
            }
        }
    }
}
