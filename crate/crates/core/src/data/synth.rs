//! Rotating-target chip generator.
//!
//! Each class owns a fixed binary template: a left-right symmetric "vehicle"
//! with a front/back asymmetry so that its heading is identifiable. A chip is
//! the template rotated to a sampled azimuth with bilinear resampling, scaled
//! by the nuisance angle, then corrupted by multiplicative speckle and
//! additive noise. Left-right symmetry makes a mirrored chip look exactly like
//! the same target at the negated azimuth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Chip, Dataset, Split};
use crate::error::{Error, Result};
use crate::pose::Azimuth;
use crate::tensor::Tensor;

/// Nuisance angle (degrees) at which a chip is rendered at template scale.
pub const REFERENCE_NUISANCE_DEG: f64 = 17.0;
/// Relative scale change per degree of nuisance offset.
const SCALE_PER_DEGREE: f64 = 0.02;
const TEMPLATE_SALT: u64 = 0x7465_6d70_6c61_7465;
const MAX_TEMPLATE_TRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub classes: usize,
    pub image_size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub train_nuisance_deg: f64,
    pub test_nuisance_deg: f64,
    /// Half-width of the uniform jitter around each split's nuisance angle.
    pub nuisance_spread_deg: f64,
    pub noise_std: f64,
    pub speckle_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 4,
            image_size: 32,
            train_per_class: 400,
            test_per_class: 100,
            train_nuisance_deg: 17.0,
            test_nuisance_deg: 15.0,
            nuisance_spread_deg: 1.0,
            noise_std: 0.5,
            speckle_std: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("synthetic data needs at least two classes".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config("image_size must be at least 8".into()));
        }
        if self.train_per_class == 0 && self.test_per_class == 0 {
            return Err(Error::Config("no chips requested".into()));
        }
        let nonneg = [self.nuisance_spread_deg, self.noise_std, self.speckle_std];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("noise and spread parameters must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes).map(|c| format!("target{c}")).collect()
    }
}

/// Bilinear sample with zeros outside the image.
fn bilinear(img: &[f64], size: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let at = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= size as f64 || yi >= size as f64 {
            0.0
        } else {
            img[yi as usize * size + xi as usize]
        }
    };
    at(x0, y0) * (1.0 - fx) * (1.0 - fy)
        + at(x0 + 1.0, y0) * fx * (1.0 - fy)
        + at(x0, y0 + 1.0) * (1.0 - fx) * fy
        + at(x0 + 1.0, y0 + 1.0) * fx * fy
}

/// Render `template` rotated by `azimuth` about the image centre and scaled
/// for the given nuisance angle. Noise-free.
pub fn render(template: &[f64], size: usize, azimuth: Azimuth, nuisance_deg: f64) -> Vec<f64> {
    let scale = 1.0 + SCALE_PER_DEGREE * (nuisance_deg - REFERENCE_NUISANCE_DEG);
    let (sin, cos) = azimuth.radians().sin_cos();
    let c = (size as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; size * size];
    for py in 0..size {
        for px in 0..size {
            let u = px as f64 - c;
            let v = py as f64 - c;
            let sx = (cos * u + sin * v) / scale + c;
            let sy = (-sin * u + cos * v) / scale + c;
            out[py * size + px] = bilinear(template, size, sx, sy);
        }
    }
    out
}

fn standardized(img: &[f64]) -> Vec<f64> {
    let n = img.len() as f64;
    let mean = img.iter().sum::<f64>() / n;
    let var = img.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return vec![0.0; img.len()];
    }
    img.iter().map(|v| (v - mean) / std).collect()
}

/// Fraction of pixels whose standardized values differ by more than 0.1.
fn differing_fraction(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (standardized(a), standardized(b));
    a.iter().zip(&b).filter(|(x, y)| (*x - *y).abs() > 0.1).count() as f64 / a.len() as f64
}

fn fill_rect(img: &mut [f64], size: usize, cx: f64, x0: f64, x1: f64, y0: f64, y1: f64) {
    // Mirrored about the vertical centre line.
    for py in 0..size {
        let y = py as f64;
        if y < y0 || y > y1 {
            continue;
        }
        for px in 0..size {
            let dx = (px as f64 - cx).abs();
            if dx >= x0 && dx <= x1 {
                img[py * size + px] = 1.0;
            }
        }
    }
}

fn random_template(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = size as f64;
    let c = (s - 1.0) / 2.0;
    let mut img = vec![0.0; size * size];
    // hull
    let half_w = rng.random_range(0.08..0.16) * s;
    let half_l = rng.random_range(0.22..0.34) * s;
    let shift = rng.random_range(-0.06..0.06) * s;
    fill_rect(&mut img, size, c, 0.0, half_w, c - half_l + shift, c + half_l + shift);
    // forward-pointing barrel or nose
    let barrel_w = rng.random_range(0.0..0.05) * s;
    let barrel_len = rng.random_range(0.08..0.14) * s;
    let front = c - half_l + shift;
    fill_rect(&mut img, size, c, 0.0, barrel_w, front - barrel_len, front);
    // side features (tracks, turret, sponsons)
    for _ in 0..rng.random_range(1..4) {
        let x0 = rng.random_range(0.0..0.14) * s;
        let w = rng.random_range(0.03..0.09) * s;
        let y0 = c + rng.random_range(-0.3..0.25) * s;
        let h = rng.random_range(0.05..0.2) * s;
        fill_rect(&mut img, size, c, x0, x0 + w, y0, (y0 + h).min(c + 0.36 * s));
    }
    img
}

/// One binary template per class, each left-right symmetric and clearly
/// different from its own half-turn rotation and from every other template.
pub fn class_templates(cfg: &SynthConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let size = cfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TEMPLATE_SALT);
    let mut templates: Vec<Vec<f64>> = Vec::with_capacity(cfg.classes);
    let mut tries = 0;
    while templates.len() < cfg.classes {
        tries += 1;
        if tries > MAX_TEMPLATE_TRIES {
            return Err(Error::Config(
                "could not draw distinct rotation-asymmetric templates".into(),
            ));
        }
        let t = random_template(size, &mut rng);
        let turned = render(&t, size, Azimuth::new(std::f64::consts::PI), REFERENCE_NUISANCE_DEG);
        if differing_fraction(&t, &turned) < 0.1 {
            continue;
        }
        if templates.iter().any(|o| differing_fraction(&t, o) < 0.1) {
            continue;
        }
        templates.push(t);
    }
    Ok(templates)
}

/// Deterministic synthetic dataset: train chips first, then test chips,
/// each grouped by class. Chip `i` draws its randomness from its own stream.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    let templates = class_templates(cfg)?;
    let size = cfg.image_size;
    let mut chips = Vec::with_capacity(cfg.classes * (cfg.train_per_class + cfg.test_per_class));
    let mut index = 0u64;
    for (split, per_class, centre) in [
        (Split::Train, cfg.train_per_class, cfg.train_nuisance_deg),
        (Split::Test, cfg.test_per_class, cfg.test_nuisance_deg),
    ] {
        for (class, template) in templates.iter().enumerate() {
            for _ in 0..per_class {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(index + 1);
                index += 1;
                let azimuth = Azimuth::new(rng.random_range(0.0..std::f64::consts::TAU));
                let nuisance = if cfg.nuisance_spread_deg > 0.0 {
                    centre + rng.random_range(-cfg.nuisance_spread_deg..=cfg.nuisance_spread_deg)
                } else {
                    centre
                };
                let mut img = render(template, size, azimuth, nuisance);
                if cfg.speckle_std > 0.0 || cfg.noise_std > 0.0 {
                    for p in &mut img {
                        let n1: f64 = rng.sample(StandardNormal);
                        let n2: f64 = rng.sample(StandardNormal);
                        *p = *p * (1.0 + cfg.speckle_std * n1) + cfg.noise_std * n2;
                    }
                }
                chips.push(Chip {
                    image: Tensor::from_vec(&[1, size, size], img)?,
                    class_label: class,
                    azimuth: Some(azimuth),
                    nuisance,
                    split,
                    augmented: false,
                });
            }
        }
    }
    Ok(Dataset {
        class_names: cfg.class_names(),
        chips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::mirror_left_right;

    fn clean() -> SynthConfig {
        SynthConfig {
            noise_std: 0.0,
            speckle_std: 0.0,
            nuisance_spread_deg: 0.0,
            train_nuisance_deg: REFERENCE_NUISANCE_DEG,
            train_per_class: 3,
            test_per_class: 1,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_azimuth_clean_chip_is_template() {
        let cfg = clean();
        let templates = class_templates(&cfg).unwrap();
        for t in &templates {
            assert_eq!(&render(t, 32, Azimuth::new(0.0), REFERENCE_NUISANCE_DEG), t);
        }
    }

    #[test]
    fn templates_are_binary_symmetric_and_heading_identifiable() {
        let cfg = clean();
        for t in class_templates(&cfg).unwrap() {
            assert!(t.iter().all(|&v| v == 0.0 || v == 1.0));
            let chip = Tensor::from_vec(&[1, 32, 32], t.clone()).unwrap();
            assert_eq!(mirror_left_right(&chip).data, t);
            let turned = render(&t, 32, Azimuth::new(std::f64::consts::PI), 17.0);
            assert!(differing_fraction(&t, &turned) >= 0.1);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            train_per_class: 5,
            test_per_class: 2,
            ..SynthConfig::default()
        };
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.chips.len(), 4 * 7);
        assert_eq!(a.counts(), vec![[5, 2]; 4]);
        let other = synth_generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn splits_use_disjoint_nuisance_ranges() {
        let d = synth_generate(&SynthConfig {
            train_per_class: 20,
            test_per_class: 20,
            ..SynthConfig::default()
        })
        .unwrap();
        for c in &d.chips {
            match c.split {
                Split::Train => assert!((16.0..=18.0).contains(&c.nuisance)),
                Split::Test => assert!((14.0..=16.0).contains(&c.nuisance)),
            }
        }
    }

    #[test]
    fn mirrored_chip_matches_negated_heading() {
        let cfg = clean();
        let t = &class_templates(&cfg).unwrap()[0];
        let theta = Azimuth::new(0.9);
        let a = Tensor::from_vec(&[1, 32, 32], render(t, 32, theta, 17.0)).unwrap();
        let b = render(t, 32, crate::pose::negate_azimuth(theta), 17.0);
        let m = mirror_left_right(&a);
        let err = m.data.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(synth_generate(&SynthConfig { classes: 1, ..clean() }).is_err());
        assert!(synth_generate(&SynthConfig { noise_std: -1.0, ..clean() }).is_err());
    }
}
