//! Write a synthetic dataset in the on-disk ingestion format, read it back
//! and compare.
//!
//! `cargo run --example dataset_roundtrip [dir]`

use confoundnet::data::{export_dataset, load_dataset, synth_generate, SynthConfig, METADATA_FILE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("confoundnet_roundtrip"));
    let cfg = SynthConfig {
        train_per_class: 10,
        test_per_class: 4,
        ..SynthConfig::default()
    };
    let original = synth_generate(&cfg)?;
    export_dataset(&original, &dir)?;
    let loaded = load_dataset(&dir)?;
    let metadata = std::fs::read_to_string(dir.join(METADATA_FILE))?;
    println!("wrote {} chips to {}", original.chips.len(), dir.display());
    for line in metadata.lines().take(4) {
        println!("  {line}");
    }
    let worst = original
        .chips
        .iter()
        .zip(&loaded.chips)
        .flat_map(|(a, b)| a.image.data.iter().zip(&b.image.data).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!("read back {} chips, max pixel difference {worst:e}", loaded.chips.len());
    Ok(())
}
