//! Matched-pair comparison of the baseline and pose-aware networks over
//! several seeds. Each pair shares every common initial parameter and sees
//! the same batches, so the pose term is the only difference.
//!
//! `cargo run --release --example ab_comparison [seeds] [epochs]`

use confoundnet::experiment::{cmd_ab, RunConfig};
use confoundnet::network::PoseMode;

fn main() -> confoundnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::default();
    cfg.network.pose_mode = PoseMode::Azimuth;
    if let Some(n) = args.next() {
        cfg.ab_seeds = (0..n.parse().expect("seed count")).collect();
    }
    if let Some(e) = args.next() {
        cfg.hyper.epochs = e.parse().expect("epochs");
    }
    let report = cmd_ab(&cfg, None, true)?;
    print!("{report}");
    Ok(())
}
