//! Event data model: streams, equal-interval binning, signed bin images, the
//! ideal contrast-threshold simulator and the plain-text event file format.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;

/// Intensities are clamped to this value before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-4;

#[inline]
pub fn safe_log(v: f64) -> f64 {
    v.max(LOG_FLOOR).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn sign(self) -> i32 {
        match self {
            Polarity::Negative => -1,
            Polarity::Positive => 1,
        }
    }

    pub fn from_sign(p: i64) -> Option<Self> {
        match p {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub x: u32,
    pub y: u32,
    pub tau: f64,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(x: u32, y: u32, tau: f64, polarity: Polarity) -> Self {
        Self { x, y, tau, polarity }
    }

    /// Canonical stream order: timestamp, then row, column and polarity.
    pub fn canonical_cmp(&self, other: &Event) -> Ordering {
        self.tau
            .total_cmp(&other.tau)
            .then(self.y.cmp(&other.y))
            .then(self.x.cmp(&other.x))
            .then(self.polarity.cmp(&other.polarity))
    }
}

/// Positive and negative contrast thresholds in log-intensity units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub c_pos: f64,
    pub c_neg: f64,
}

impl Thresholds {
    pub fn new(c_pos: f64, c_neg: f64) -> Result<Self> {
        let t = Self { c_pos, c_neg };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_pos > 0.0 && self.c_neg > 0.0 && self.c_pos.is_finite() && self.c_neg.is_finite()) {
            return Err(Error::invalid(format!(
                "contrast thresholds must be positive, got c_pos={} c_neg={}",
                self.c_pos, self.c_neg
            )));
        }
        Ok(())
    }

    /// Log-intensity step carried by one event of the given polarity.
    pub fn step(&self, polarity: Polarity) -> f64 {
        match polarity {
            Polarity::Positive => self.c_pos,
            Polarity::Negative => -self.c_neg,
        }
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { c_pos: 0.2, c_neg: 0.3 }
    }
}

/// Events of one exposure window `(t_start, t_end]`, sorted by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    t_start: f64,
    t_end: f64,
}

impl EventStream {
    pub fn new(events: Vec<Event>, t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_start < t_end) {
            return Err(Error::invalid(format!("exposure window ({t_start}, {t_end}] is empty")));
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, e) in events.iter().enumerate() {
            if !(e.tau > t_start && e.tau <= t_end) {
                return Err(Error::MalformedStream(format!(
                    "event {i} at tau={} outside exposure window ({t_start}, {t_end}]",
                    e.tau
                )));
            }
            if e.tau < prev {
                return Err(Error::MalformedStream(format!(
                    "event {i} at tau={} precedes previous event at {prev}",
                    e.tau
                )));
            }
            prev = e.tau;
        }
        Ok(Self { events, t_start, t_end })
    }

    pub fn empty(t_start: f64, t_end: f64) -> Result<Self> {
        Self::new(Vec::new(), t_start, t_end)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        match self
            .events
            .iter()
            .position(|e| e.x as usize >= width || e.y as usize >= height)
        {
            Some(i) => Err(Error::MalformedStream(format!(
                "event {i} at ({}, {}) outside {width}x{height} sensor",
                self.events[i].x, self.events[i].y
            ))),
            None => Ok(()),
        }
    }

    /// Events with `t_lo < tau <= t_hi`.
    pub fn slice(&self, t_lo: f64, t_hi: f64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.tau <= t_lo);
        let hi = self.events.partition_point(|e| e.tau <= t_hi);
        &self.events[lo..hi.max(lo)]
    }

    /// Signed per-pixel counts of the events in `(t_lo, t_hi]`.
    pub fn bin_image(&self, t_lo: f64, t_hi: f64, width: usize, height: usize) -> Result<EventBinImage> {
        accumulate_bin_image(self.slice(t_lo, t_hi), (t_lo, t_hi), width, height)
    }
}

/// `n` equally spaced instants from `t_start` to `t_end` inclusive; the last
/// entry is exactly `t_end`.
pub fn uniform_timestamps(t_start: f64, t_end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![t_start];
    }
    let dt = (t_end - t_start) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { t_end } else { t_start + dt * i as f64 })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventBin {
    pub events: Vec<Event>,
    /// Half-open `(t_i, t_{i+1}]`.
    pub interval: (f64, f64),
}

/// Splits a stream into `n - 1` bins over `n` equally spaced timestamps.
pub fn bin_events(stream: &EventStream, n: usize) -> Result<Vec<EventBin>> {
    if n < 2 {
        return Err(Error::invalid(format!("bin_events needs n >= 2, got {n}")));
    }
    let ts = uniform_timestamps(stream.t_start, stream.t_end, n);
    let mut bins: Vec<EventBin> = ts
        .windows(2)
        .map(|w| EventBin {
            events: Vec::new(),
            interval: (w[0], w[1]),
        })
        .collect();
    let mut b = 0;
    for e in &stream.events {
        if !(e.tau > stream.t_start && e.tau <= stream.t_end) {
            return Err(Error::MalformedStream(format!(
                "event at tau={} outside exposure window",
                e.tau
            )));
        }
        while e.tau > bins[b].interval.1 {
            b += 1;
        }
        bins[b].events.push(*e);
    }
    Ok(bins)
}

/// Per-pixel signed event counts over an interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventBinImage {
    width: usize,
    height: usize,
    counts: Vec<i32>,
    interval: (u64, u64),
}

impl EventBinImage {
    pub fn zeros(width: usize, height: usize, interval: (f64, f64)) -> Self {
        Self {
            width,
            height,
            counts: vec![0; width * height],
            interval: (interval.0.to_bits(), interval.1.to_bits()),
        }
    }

    pub fn from_counts(width: usize, height: usize, counts: Vec<i32>, interval: (f64, f64)) -> Result<Self> {
        if counts.len() != width * height {
            return Err(Error::invalid(format!(
                "{} counts for a {width}x{height} bin image",
                counts.len()
            )));
        }
        Ok(Self {
            width,
            height,
            counts,
            interval: (interval.0.to_bits(), interval.1.to_bits()),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn counts(&self) -> &[i32] {
        &self.counts
    }

    pub fn interval(&self) -> (f64, f64) {
        (f64::from_bits(self.interval.0), f64::from_bits(self.interval.1))
    }

    pub fn get(&self, x: usize, y: usize) -> i32 {
        self.counts[y * self.width + x]
    }

    /// Counts as a single-channel real image.
    pub fn to_image(&self) -> Image {
        let data = self.counts.iter().map(|&c| c as f64).collect();
        Image::from_vec(self.width, self.height, 1, data).expect("bin image shape")
    }

    /// Elementwise sum with a bin image over an adjacent interval.
    pub fn merged(&self, other: &EventBinImage) -> Result<EventBinImage> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::invalid("bin images differ in size"));
        }
        let (lo, _) = self.interval();
        let (_, hi) = other.interval();
        let mut out = EventBinImage::zeros(self.width, self.height, (lo, hi));
        for ((o, a), b) in out.counts.iter_mut().zip(&self.counts).zip(&other.counts) {
            *o = a + b;
        }
        Ok(out)
    }
}

/// Signed polarity sum per pixel; positive and negative events cancel.
pub fn accumulate_bin_image(
    events: &[Event],
    interval: (f64, f64),
    width: usize,
    height: usize,
) -> Result<EventBinImage> {
    let mut img = EventBinImage::zeros(width, height, interval);
    for e in events {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= width || y >= height {
            return Err(Error::MalformedStream(format!(
                "event at ({x}, {y}) outside {width}x{height} sensor"
            )));
        }
        if !(e.tau > interval.0 && e.tau <= interval.1) {
            return Err(Error::MalformedStream(format!(
                "event at tau={} outside interval ({}, {}]",
                e.tau, interval.0, interval.1
            )));
        }
        img.counts[y * width + x] += e.polarity.sign();
    }
    Ok(img)
}

/// Ideal contrast-threshold event camera driven by a sequence of intensity frames.
///
/// Each pixel keeps a reference log intensity starting at the first frame. When
/// the next frame differs from the reference by at least one threshold,
/// `floor(|diff| / C)` events are spread uniformly over the frame interval and
/// the reference advances by exactly that many quanta.
pub fn simulate_events(latents: &[Image], timestamps: &[f64], thresholds: Thresholds) -> Result<EventStream> {
    thresholds.validate()?;
    if latents.len() < 2 {
        return Err(Error::invalid("simulate_events needs at least two frames"));
    }
    if timestamps.len() != latents.len() {
        return Err(Error::invalid(format!(
            "{} frames but {} timestamps",
            latents.len(),
            timestamps.len()
        )));
    }
    if timestamps.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("timestamps must be strictly increasing"));
    }
    let first = &latents[0];
    if first.channels() != 1 {
        return Err(Error::invalid("simulate_events expects single-channel intensity frames"));
    }
    for l in &latents[1..] {
        l.check_same_shape(first, "simulate_events")?;
    }
    let (width, height) = (first.width(), first.height());

    let mut events: Vec<Event> = (0..height)
        .into_par_iter()
        .flat_map_iter(|y| {
            let mut row = Vec::new();
            for x in 0..width {
                let mut reference = safe_log(first.get(x, y, 0));
                for (i, frame) in latents.iter().enumerate().skip(1) {
                    let diff = safe_log(frame.get(x, y, 0)) - reference;
                    let (polarity, c) = if diff > 0.0 {
                        (Polarity::Positive, thresholds.c_pos)
                    } else {
                        (Polarity::Negative, thresholds.c_neg)
                    };
                    let k = (diff.abs() / c).floor() as usize;
                    if k == 0 {
                        continue;
                    }
                    let (t0, t1) = (timestamps[i - 1], timestamps[i]);
                    for j in 1..=k {
                        let tau = if j == k { t1 } else { t0 + (t1 - t0) * (j as f64 / k as f64) };
                        row.push(Event::new(x as u32, y as u32, tau, polarity));
                    }
                    reference += k as f64 * thresholds.step(polarity);
                }
            }
            row
        })
        .collect();
    events.sort_by(Event::canonical_cmp);
    EventStream::new(events, timestamps[0], timestamps[timestamps.len() - 1])
}

/// Serializes events as `tau x y p` lines.
pub fn format_events(stream: &EventStream) -> String {
    let mut s = String::with_capacity(stream.len() * 24 + 16);
    s.push_str("# tau x y p\n");
    for e in &stream.events {
        writeln!(s, "{} {} {} {}", e.tau, e.x, e.y, e.polarity.sign()).unwrap();
    }
    s
}

pub fn write_events(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_events(stream))?;
    Ok(())
}

/// Parses an event file, checking order, exposure window and sensor bounds
/// with line-precise diagnostics.
pub fn parse_events(
    text: &str,
    path: &Path,
    t_start: f64,
    t_end: f64,
    width: usize,
    height: usize,
) -> Result<EventStream> {
    let mut events = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(format!("expected `tau x y p`, got {} fields", fields.len())));
        }
        let tau: f64 = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad timestamp `{}`", fields[0])))?;
        let x: u32 = fields[1]
            .parse()
            .map_err(|_| parse_err(format!("bad x `{}`", fields[1])))?;
        let y: u32 = fields[2]
            .parse()
            .map_err(|_| parse_err(format!("bad y `{}`", fields[2])))?;
        let polarity = fields[3]
            .parse::<i64>()
            .ok()
            .and_then(Polarity::from_sign)
            .ok_or_else(|| parse_err(format!("polarity must be 1 or -1, got `{}`", fields[3])))?;
        if x as usize >= width || y as usize >= height {
            return Err(parse_err(format!("pixel ({x}, {y}) outside {width}x{height} sensor")));
        }
        if !(tau > t_start && tau <= t_end) {
            return Err(Error::OutOfWindow {
                path: path.to_path_buf(),
                line,
                tau,
                t_start,
                t_end,
            });
        }
        if tau < prev {
            return Err(Error::UnsortedEvents {
                path: path.to_path_buf(),
                line,
                tau,
                previous: prev,
            });
        }
        prev = tau;
        events.push(Event::new(x, y, tau, polarity));
    }
    EventStream::new(events, t_start, t_end)
}

pub fn read_events(
    path: impl AsRef<Path>,
    t_start: f64,
    t_end: f64,
    width: usize,
    height: usize,
) -> Result<EventStream> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    parse_events(&text, path, t_start, t_end, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(x: u32, y: u32, tau: f64, p: i64) -> Event {
        Event::new(x, y, tau, Polarity::from_sign(p).unwrap())
    }

    fn single_pixel(values: &[f64]) -> Vec<Image> {
        values.iter().map(|&v| Image::filled(1, 1, 1, v)).collect()
    }

    #[test]
    fn bins_use_half_open_upper_inclusion() {
        let events = [0.1, 0.3, 0.5, 0.7, 0.9].iter().map(|&t| ev(0, 0, t, 1)).collect();
        let stream = EventStream::new(events, 0.0, 1.0).unwrap();
        let bins = bin_events(&stream, 5).unwrap();
        let sizes: Vec<usize> = bins.iter().map(|b| b.events.len()).collect();
        assert_eq!(sizes, vec![1, 2, 1, 1]);
    }

    #[test]
    fn empty_stream_gives_empty_bins() {
        let stream = EventStream::empty(0.0, 1.0).unwrap();
        let bins = bin_events(&stream, 5).unwrap();
        assert_eq!(bins.len(), 4);
        assert!(bins.iter().all(|b| b.events.is_empty()));
    }

    #[test]
    fn event_on_boundary_belongs_to_lower_bin() {
        let ts = uniform_timestamps(0.0, 1.0, 5);
        let stream = EventStream::new(vec![ev(0, 0, ts[1], 1)], 0.0, 1.0).unwrap();
        let bins = bin_events(&stream, 5).unwrap();
        assert_eq!(bins[0].events.len(), 1);
        assert!(bins[1].events.is_empty());
    }

    #[test]
    fn bin_events_rejects_small_n() {
        let stream = EventStream::empty(0.0, 1.0).unwrap();
        assert!(matches!(bin_events(&stream, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn stream_rejects_out_of_window_and_unsorted() {
        assert!(matches!(
            EventStream::new(vec![ev(0, 0, 0.0, 1)], 0.0, 1.0),
            Err(Error::MalformedStream(_))
        ));
        assert!(matches!(
            EventStream::new(vec![ev(0, 0, 0.5, 1), ev(0, 0, 0.4, 1)], 0.0, 1.0),
            Err(Error::MalformedStream(_))
        ));
    }

    #[test]
    fn accumulate_cases() {
        let empty = accumulate_bin_image(&[], (0.0, 1.0), 3, 2).unwrap();
        assert!(empty.counts().iter().all(|&c| c == 0));

        let mixed = [ev(1, 1, 0.1, 1), ev(1, 1, 0.2, 1), ev(1, 1, 0.3, -1)];
        let img = accumulate_bin_image(&mixed, (0.0, 1.0), 3, 2).unwrap();
        assert_eq!(img.get(1, 1), 1);
        assert_eq!(img.counts().iter().filter(|&&c| c != 0).count(), 1);

        let two = [ev(0, 0, 0.1, 1), ev(2, 1, 0.2, 1)];
        let img = accumulate_bin_image(&two, (0.0, 1.0), 3, 2).unwrap();
        assert_eq!(img.get(0, 0), 1);
        assert_eq!(img.get(2, 1), 1);
        assert_eq!(img.counts().iter().sum::<i32>(), 2);
    }

    #[test]
    fn accumulate_rejects_out_of_bounds() {
        let err = accumulate_bin_image(&[ev(3, 0, 0.5, 1)], (0.0, 1.0), 3, 2).unwrap_err();
        assert!(matches!(err, Error::MalformedStream(_)));
    }

    #[test]
    fn constant_latents_produce_no_events() {
        let latents = single_pixel(&[0.4, 0.4, 0.4]);
        let s = simulate_events(&latents, &[0.0, 0.5, 1.0], Thresholds::default()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn positive_step_quantizes_with_carry() {
        let th = Thresholds::new(0.2, 0.3).unwrap();
        let latents = single_pixel(&[1.0, 0.45f64.exp()]);
        let s = simulate_events(&latents, &[0.0, 1.0], th).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.events().iter().all(|e| e.polarity == Polarity::Positive));
        // Residual 0.05 carried: another +0.16 crosses the threshold once more.
        let latents = single_pixel(&[1.0, 0.45f64.exp(), 0.61f64.exp()]);
        let s = simulate_events(&latents, &[0.0, 1.0, 2.0], th).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.slice(1.0, 2.0).len(), 1);
    }

    #[test]
    fn negative_step_quantizes() {
        let th = Thresholds::new(0.2, 0.3).unwrap();
        let latents = single_pixel(&[1.0, (-0.65f64).exp()]);
        let s = simulate_events(&latents, &[0.0, 1.0], th).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.events().iter().all(|e| e.polarity == Polarity::Negative));
    }

    #[test]
    fn simulator_rejects_mismatched_frames() {
        let latents = vec![Image::filled(2, 2, 1, 0.5), Image::filled(3, 2, 1, 0.5)];
        assert!(matches!(
            simulate_events(&latents, &[0.0, 1.0], Thresholds::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn text_format_reports_line_numbers() {
        let p = Path::new("events.txt");
        let ok = parse_events("# c\n0.25 1 0 1\n0.5 0 1 -1\n", p, 0.0, 1.0, 2, 2).unwrap();
        assert_eq!(ok.len(), 2);
        match parse_events("0.25 1 0 1\n1.5 0 1 -1\n", p, 0.0, 1.0, 2, 2) {
            Err(Error::OutOfWindow { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_events("0.5 1 0 1\n\n0.25 0 1 -1\n", p, 0.0, 1.0, 2, 2) {
            Err(Error::UnsortedEvents { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_events("0.5 1 0 0\n", p, 0.0, 1.0, 2, 2),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    fn arb_stream() -> impl Strategy<Value = EventStream> {
        prop::collection::vec((0u32..4, 0u32..3, 1u32..=1000, any::<bool>()), 0..60).prop_map(|raw| {
            let mut events: Vec<Event> = raw
                .into_iter()
                .map(|(x, y, t, p)| {
                    let pol = if p { Polarity::Positive } else { Polarity::Negative };
                    Event::new(x, y, t as f64 / 1000.0, pol)
                })
                .collect();
            events.sort_by(Event::canonical_cmp);
            EventStream::new(events, 0.0, 1.0).unwrap()
        })
    }

    proptest! {
        #[test]
        fn bins_partition_the_stream(stream in arb_stream(), n in 2usize..9) {
            let bins = bin_events(&stream, n).unwrap();
            prop_assert_eq!(bins.len(), n - 1);
            let joined: Vec<Event> = bins.iter().flat_map(|b| b.events.clone()).collect();
            prop_assert_eq!(&joined[..], stream.events());
            for b in &bins {
                prop_assert!(b.events.iter().all(|e| e.tau > b.interval.0 && e.tau <= b.interval.1));
            }
        }

        #[test]
        fn bin_images_are_additive(stream in arb_stream(), n in 2usize..9) {
            let ts = uniform_timestamps(0.0, 1.0, n);
            let whole = stream.bin_image(0.0, 1.0, 4, 3).unwrap();
            let mut acc = stream.bin_image(ts[0], ts[1], 4, 3).unwrap();
            for w in ts.windows(2).skip(1) {
                acc = acc.merged(&stream.bin_image(w[0], w[1], 4, 3).unwrap()).unwrap();
            }
            prop_assert_eq!(acc.counts(), whole.counts());
        }

        #[test]
        fn event_text_round_trips(stream in arb_stream()) {
            let text = format_events(&stream);
            let back = parse_events(&text, Path::new("e"), 0.0, 1.0, 4, 3).unwrap();
            prop_assert_eq!(&back, &stream);
            prop_assert_eq!(format_events(&back), text);
        }

        #[test]
        fn simulation_is_deterministic(vals in prop::collection::vec(0.01f64..1.0, 8)) {
            let latents: Vec<Image> = vals.chunks(2).map(|c| Image::from_vec(2, 1, 1, c.to_vec()).unwrap()).collect();
            let ts = uniform_timestamps(0.0, 1.0, latents.len());
            let a = simulate_events(&latents, &ts, Thresholds::default()).unwrap();
            let b = simulate_events(&latents, &ts, Thresholds::default()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
