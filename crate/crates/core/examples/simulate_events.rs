//! Simulates events for a bright square sliding across a dark sensor and
//! prints per-bin signed counts.
//!
//! cargo run --example simulate_events

use evsplat::event::{bin_events, simulate_events, uniform_timestamps, Thresholds};
use evsplat::image::Image;

fn main() -> evsplat::Result<()> {
    let (w, h, n) = (24, 8, 6);
    let frames: Vec<Image> = (0..n)
        .map(|i| {
            let left = 4 + 2 * i;
            Image::from_fn(w, h, 1, |x, y, _| if (left..left + 6).contains(&x) && (2..6).contains(&y) { 0.8 } else { 0.1 })
        })
        .collect();
    let timestamps = uniform_timestamps(0.0, 1.0, n);
    let thresholds = Thresholds::new(0.2, 0.3)?;
    let stream = simulate_events(&frames, &timestamps, thresholds)?;
    println!("{} events in ({}, {}]", stream.len(), stream.t_start(), stream.t_end());
    for (i, bin) in bin_events(&stream, n)?.iter().enumerate() {
        let pos = bin.events.iter().filter(|e| e.polarity.sign() > 0).count();
        println!(
            "bin {i} ({:.2}, {:.2}]: {pos} positive, {} negative",
            bin.interval.0,
            bin.interval.1,
            bin.events.len() - pos
        );
    }
    let counts = stream.bin_image(0.0, 1.0, w, h)?;
    println!("net counts over the exposure (row 3):");
    let row: Vec<String> = (0..w).map(|x| format!("{:+}", counts.get(x, 3))).collect();
    println!("{}", row.join(" "));
    Ok(())
}
