//! Generate the default synthetic dataset and draw a few chips as ASCII art.
//!
//! `cargo run --example synthetic_chips [noise_std]`

use confoundnet::data::{synth_generate, Split, SynthConfig};

fn main() -> confoundnet::Result<()> {
    let mut cfg = SynthConfig::default();
    if let Some(noise) = std::env::args().nth(1) {
        cfg.noise_std = noise.parse().expect("noise_std must be a number");
    }
    let dataset = synth_generate(&cfg)?;
    for (name, [train, test]) in dataset.class_names.iter().zip(dataset.counts()) {
        println!("{name}: {train} train, {test} test");
    }
    let shades = [' ', '.', ':', '+', '#'];
    for class in 0..dataset.class_count() {
        let chip = dataset
            .chips
            .iter()
            .find(|c| c.class_label == class && c.split == Split::Train)
            .expect("every class has training chips");
        let az = chip.azimuth.map_or(f64::NAN, |a| a.degrees());
        println!("\n{} at azimuth {az:.1} deg, nuisance {:.2} deg", dataset.class_names[class], chip.nuisance);
        let (lo, hi) = chip
            .image
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        for row in chip.image.data.chunks(chip.width()) {
            let line: String = row
                .iter()
                .map(|v| shades[(((v - lo) / (hi - lo)) * 4.999) as usize])
                .collect();
            println!("{line}");
        }
    }
    Ok(())
}
