//! Train briefly with the pose head, drop it, and confirm the classifier is
//! untouched: identical logits bit for bit, and fewer parameters.
//!
//! `cargo run --release --example strip_pose_head`

use confoundnet::data::stack_images;
use confoundnet::experiment::{prepare_data, RunConfig};
use confoundnet::network::{Network, PoseMode};
use confoundnet::trainer::{evaluate, train};

fn main() -> confoundnet::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.network.pose_mode = PoseMode::Azimuth;
    cfg.hyper.epochs = 2;
    let data = prepare_data(&cfg)?;
    let trained = train(Network::build(cfg.network.clone(), 0)?, &data.train, None, &cfg.hyper)?.net;
    let stripped = trained.strip_pose_head()?;
    println!(
        "parameters: {} with pose head, {} without",
        trained.param_count(),
        stripped.param_count()
    );
    let probe: Vec<_> = data.test.iter().take(100).collect();
    let batch = stack_images(&probe)?;
    let (a, b) = (trained.logits(&batch)?, stripped.logits(&batch)?);
    let identical = a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("logits identical on {} chips: {identical}", probe.len());
    println!(
        "test accuracy: {:.2}% with head, {:.2}% without",
        evaluate(&trained, &data.test)?.accuracy,
        evaluate(&stripped, &data.test)?.accuracy
    );
    Ok(())
}
