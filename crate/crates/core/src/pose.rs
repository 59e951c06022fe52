//! Rotation representations and the pose metric used by the auxiliary head.
//!
//! Distances are `arccos(|q1 · q2|)` between unit quaternions. The absolute
//! value identifies `q` with `−q`, so the function is a metric on SO(3) with
//! range `[0, π/2]`. For ground-plane targets a rotation reduces to an azimuth
//! about the vertical axis and the distance collapses to
//! `arccos(|cos((θ1 − θ2) / 2)|)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `|dot|` is capped here inside the arccos derivative so it stays finite.
pub const DOT_GRAD_CAP: f64 = 1.0 - 1e-7;

/// Raw predictions shorter than this are treated as "no pose": maximal
/// distance, zero gradient.
pub const MIN_RAW_NORM: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalize(&self) -> Result<Quaternion> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateRotation);
        }
        Ok(Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }
}

impl std::ops::Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Heading angle in radians, always in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(into = "f64", try_from = "f64")]
pub struct Azimuth(f64);

impl Azimuth {
    /// Canonicalizes any finite angle into `[0, 2π)`.
    pub fn new(theta: f64) -> Self {
        assert!(theta.is_finite(), "azimuth must be finite, got {theta}");
        let t = theta.rem_euclid(TAU);
        // rem_euclid can round up to exactly 2π for tiny negative inputs
        Azimuth(if t >= TAU { 0.0 } else { t })
    }

    pub fn from_degrees(deg: f64) -> Self {
        Azimuth::new(deg.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }
}

impl From<Azimuth> for f64 {
    fn from(a: Azimuth) -> f64 {
        a.0
    }
}

impl TryFrom<f64> for Azimuth {
    type Error = String;

    fn try_from(v: f64) -> std::result::Result<Self, String> {
        if v.is_finite() {
            Ok(Azimuth::new(v))
        } else {
            Err(format!("non-finite azimuth {v}"))
        }
    }
}

/// Rotation by `theta` about the vertical (z) axis.
pub fn quat_from_azimuth(theta: Azimuth) -> Quaternion {
    let half = 0.5 * theta.radians();
    Quaternion::new(half.cos(), 0.0, 0.0, half.sin())
}

/// `arccos(|q1 · q2|)` on the normalized inputs.
pub fn quat_dist(q1: &Quaternion, q2: &Quaternion) -> Result<f64> {
    let a = q1.normalize()?.as_array();
    let b = q2.normalize()?.as_array();
    Ok(unit_dist(&a, &b))
}

/// `arccos(|a · b|)` for unit vectors, evaluated as the equivalent
/// `2·atan2(|a − s·b|, |a + s·b|)` with `s = sign(a · b)`: arccos loses about
/// half the digits near `|a · b| = 1`, the half-angle form does not.
fn unit_dist(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let s = if dot >= 0.0 { 1.0 } else { -1.0 };
    let (mut minus, mut plus) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        minus += (x - s * y) * (x - s * y);
        plus += (x + s * y) * (x + s * y);
    }
    2.0 * minus.sqrt().atan2(plus.sqrt())
}

/// Ground-plane specialization of [`quat_dist`], `arccos(|cos(Δθ / 2)|)`:
/// the distance from `Δθ / 2` to the nearest multiple of `π`.
pub fn azimuth_dist(t1: Azimuth, t2: Azimuth) -> f64 {
    let half = (0.5 * (t1.radians() - t2.radians())).rem_euclid(PI);
    half.min(PI - half)
}

/// The heading of the left-right mirror image of a target seen at `theta`.
pub fn negate_azimuth(theta: Azimuth) -> Azimuth {
    if theta.radians() == 0.0 {
        theta
    } else {
        Azimuth::new(TAU - theta.radians())
    }
}

/// Summed pose-regression loss and its gradient at the raw head outputs.
#[derive(Debug, Clone)]
pub struct PoseLoss {
    pub loss: f64,
    pub grad: Tensor,
    /// Per-example distance in radians.
    pub distances: Vec<f64>,
}

/// Project a truth rotation onto the head's output space: the full
/// `(w, x, y, z)` for 4 outputs, the ground-plane pair `(w, z)` for 2.
fn truth_components(q: &Quaternion, dim: usize) -> Result<Vec<f64>> {
    let v = match dim {
        2 => vec![q.w, q.z],
        4 => q.as_array().to_vec(),
        _ => unreachable!("checked by caller"),
    };
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateRotation);
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

/// Distance between the normalized raw prediction and a unit truth vector,
/// with the gradient with respect to the raw prediction added into `grad`.
fn raw_distance(raw: &[f64], truth: &[f64], grad: &mut [f64]) -> f64 {
    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < MIN_RAW_NORM {
        return FRAC_PI_2;
    }
    let unit: Vec<f64> = raw.iter().map(|r| r / n).collect();
    let d: f64 = unit.iter().zip(truth).map(|(u, t)| u * t).sum();
    let dist = unit_dist(&unit, truth);
    let sign = if d >= 0.0 { 1.0 } else { -1.0 };
    let capped = d.abs().min(DOT_GRAD_CAP);
    let outer = -sign / (1.0 - capped * capped).sqrt();
    for ((g, u), t) in grad.iter_mut().zip(&unit).zip(truth) {
        *g += outer * (t - d * u) / n;
    }
    dist
}

/// `Σ_i dist(normalize(pred_raw_i), truth_i)`.
///
/// `pred_raw` is `N × p_d` with `p_d = 2` (ground plane, `(a, b) ↦ (a, 0, 0, b)`)
/// or `p_d = 4` (full quaternion).
pub fn pose_loss(pred_raw: &Tensor, truth: &[Quaternion]) -> Result<PoseLoss> {
    let &[n, dim] = pred_raw.shape() else {
        return Err(Error::Dimension(format!(
            "pose predictions must be N×p_d, got {:?}",
            pred_raw.shape()
        )));
    };
    if dim != 2 && dim != 4 {
        return Err(Error::Dimension(format!(
            "pose head width must be 2 or 4, got {dim}"
        )));
    }
    if truth.len() != n {
        return Err(Error::Batch {
            predictions: n,
            truths: truth.len(),
        });
    }
    let mut grad = Tensor::zeros(&[n, dim]);
    let mut distances = Vec::with_capacity(n);
    for (i, q) in truth.iter().enumerate() {
        let t = truth_components(q, dim)?;
        let raw = &pred_raw.data[i * dim..(i + 1) * dim];
        let g = &mut grad.data[i * dim..(i + 1) * dim];
        distances.push(raw_distance(raw, &t, g));
    }
    grad.check_finite("pose_loss")?;
    Ok(PoseLoss {
        loss: distances.iter().sum(),
        grad,
        distances,
    })
}

/// [`pose_loss`] with azimuth truths.
pub fn pose_loss_azimuth(pred_raw: &Tensor, truth: &[Azimuth]) -> Result<PoseLoss> {
    let q: Vec<Quaternion> = truth.iter().map(|&a| quat_from_azimuth(a)).collect();
    pose_loss(pred_raw, &q)
}
