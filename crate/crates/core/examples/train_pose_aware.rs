//! Train the pose-aware network on the default synthetic dataset and print
//! the per-epoch record. Takes about a minute on one core.
//!
//! `cargo run --release --example train_pose_aware [epochs]`

use confoundnet::experiment::{prepare_data, RunConfig};
use confoundnet::network::{Network, PoseMode};
use confoundnet::trainer::train_with;

fn main() -> confoundnet::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.network.pose_mode = PoseMode::Azimuth;
    if let Some(e) = std::env::args().nth(1) {
        cfg.hyper.epochs = e.parse().expect("epochs must be an integer");
    }
    let data = prepare_data(&cfg)?;
    let net = Network::build(cfg.network.clone(), cfg.hyper.seed)?;
    println!(
        "{} training chips (mirrored), {} test chips, {} parameters ({} in the pose head)",
        data.train.len(),
        data.test.len(),
        net.param_count(),
        net.pose_head_param_count()
    );
    println!("epoch  combined    class     pose  train%   test%  pose err (rad)");
    let outcome = train_with(net, &data.train, Some(&data.test), &cfg.hyper, |r| {
        println!(
            "{:>5} {:>9.4} {:>8.4} {:>8.4} {:>7.2} {:>7.2} {:>9.4}",
            r.epoch,
            r.combined_loss,
            r.class_loss,
            r.pose_loss.unwrap_or(f64::NAN),
            r.train_acc,
            r.test_acc.unwrap_or(f64::NAN),
            r.mean_pose_err_rad.unwrap_or(f64::NAN)
        );
    })?;
    if let Some(confusion) = &outcome.metrics.confusion {
        println!("\nconfusion (row %):");
        print!("{}", confusion.to_csv(&data.class_names));
    }
    Ok(())
}
