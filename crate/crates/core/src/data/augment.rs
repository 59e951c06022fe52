use super::{Chip, Split};
use crate::error::{Error, Result};
use crate::pose::negate_azimuth;
use crate::tensor::Tensor;

/// Mirror every channel of a `C × H × W` image about its vertical centre line.
pub fn mirror_left_right(image: &Tensor) -> Tensor {
    let w = *image.shape().last().expect("image has a width");
    let mut out = image.clone();
    for (dst, src) in out.data.chunks_mut(w).zip(image.data.chunks(w)) {
        for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
            *d = *s;
        }
    }
    out.zero_grad();
    out
}

/// Appends a left-right mirrored copy of every chip, labelled with the
/// negated azimuth. Originals come first and are left untouched.
pub fn flip_augment(chips: &[Chip]) -> Result<Vec<Chip>> {
    if let Some(i) = chips.iter().position(|c| c.split != Split::Train) {
        return Err(Error::Usage(format!(
            "flip augmentation is for training chips only (chip {i} is in the test split)"
        )));
    }
    let flipped = chips.iter().map(|c| Chip {
        image: mirror_left_right(&c.image),
        azimuth: c.azimuth.map(negate_azimuth),
        augmented: true,
        ..c.clone()
    });
    Ok(chips.iter().cloned().chain(flipped).collect())
}

/// Zero mean, unit variance per chip. Constant images become all zeros.
pub fn normalize_chip(chip: &mut Chip) {
    let data = &mut chip.image.data;
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        data.fill(0.0);
        return;
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    data.iter_mut().for_each(|v| *v -= mean);
    let std = (data.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    data.iter_mut().for_each(|v| *v /= std);
}

pub fn normalize(mut chips: Vec<Chip>) -> Vec<Chip> {
    chips.iter_mut().for_each(normalize_chip);
    chips
}
