//! Mirror augmentation: every training chip gains a left-right flipped copy
//! labelled with the negated azimuth. Because the synthetic targets are
//! mirror-symmetric, the flipped chip is exactly what the generator renders
//! at the negated heading.
//!
//! `cargo run --example flip_augmentation`

use confoundnet::data::{flip_augment, Split, SynthConfig, synth_generate};

fn main() -> confoundnet::Result<()> {
    let cfg = SynthConfig {
        train_per_class: 50,
        test_per_class: 10,
        ..SynthConfig::default()
    };
    let dataset = synth_generate(&cfg)?;
    let train = dataset.split(Split::Train);
    let augmented = flip_augment(&train)?;
    println!("training chips: {} -> {}", train.len(), augmented.len());
    for (orig, flip) in train.iter().zip(&augmented[train.len()..]).take(5) {
        println!(
            "class {} azimuth {:6.1} deg -> {:6.1} deg",
            orig.class_label,
            orig.azimuth.unwrap().degrees(),
            flip.azimuth.unwrap().degrees()
        );
    }
    match flip_augment(&dataset.split(Split::Test)) {
        Err(e) => println!("test split: {e}"),
        Ok(_) => unreachable!("the test split is never augmented"),
    }
    Ok(())
}
