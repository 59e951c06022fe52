//! The rotation metric: quaternion distance, its ground-plane form, and the
//! pose loss on a small batch of raw head outputs.
//!
//! `cargo run --example quaternion_metric`

use std::f64::consts::PI;

use confoundnet::pose::{azimuth_dist, pose_loss_azimuth, quat_dist, quat_from_azimuth, Azimuth, Quaternion};
use confoundnet::tensor::Tensor;

fn main() -> confoundnet::Result<()> {
    println!("{:>8} {:>8} {:>12} {:>12}", "theta1", "theta2", "azimuth", "quaternion");
    for (a, b) in [(0.0, 0.0), (0.0, 90.0), (0.0, 180.0), (10.0, 350.0), (45.0, 225.0), (30.0, 400.0)] {
        let (t1, t2) = (Azimuth::from_degrees(a), Azimuth::from_degrees(b));
        let q = quat_dist(&quat_from_azimuth(t1), &quat_from_azimuth(t2))?;
        println!("{a:>8.1} {b:>8.1} {:>12.6} {q:>12.6}", azimuth_dist(t1, t2));
    }

    // q and -q are the same rotation
    let q = Quaternion::new(0.5, -0.5, 0.5, 0.5);
    println!("\ndist(q, -q) = {}", quat_dist(&q, &-q)?);
    println!("dist(identity, 180 deg about x) = {:.6} (pi/2 = {:.6})", quat_dist(&Quaternion::IDENTITY, &Quaternion::new(0.0, 1.0, 0.0, 0.0))?, PI / 2.0);

    // raw (cos, sin) half-angle outputs from a pose head; scale does not matter
    let raw = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 3.0, 3.0, -0.2, 0.0])?;
    let truth = [Azimuth::new(0.0), Azimuth::from_degrees(90.0), Azimuth::from_degrees(10.0)];
    let loss = pose_loss_azimuth(&raw, &truth)?;
    println!("\npose loss {:.6}, per example {:?}", loss.loss, loss.distances);
    println!("gradient {:?}", loss.grad.data);
    Ok(())
}
