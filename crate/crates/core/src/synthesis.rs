//! Random-contrast synthesis from label maps and anomaly intensity encoding.
//!
//! A healthy image `I0` is drawn label by label: every label gets a random
//! mean and spread, and every voxel an independent Gaussian draw around them.
//! A pathology probability `P` is then written into the image as
//! `I = I0 + ΔI · P`, where `ΔI` pulls intensities away from white matter by
//! default and towards the opposite extreme for a random fraction of volumes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::filter::gaussian_smooth;
use crate::rng::SplitMix64;
use crate::volume::{LabelRole, LabelVolume, Mask3, ScalarField3};

/// A fixed `(mean, std)` for one label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelContrast {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastParams {
    /// Bounds for the per-label mean.
    pub mean_range: [f64; 2],
    /// Bounds for the per-label standard deviation.
    pub std_range: [f64; 2],
    /// Labels whose contrast is pinned instead of drawn.
    pub overrides: BTreeMap<u32, LabelContrast>,
}

impl Default for ContrastParams {
    fn default() -> Self {
        Self {
            mean_range: [0.1, 0.9],
            std_range: [0.02, 0.10],
            overrides: BTreeMap::new(),
        }
    }
}

fn check_unit_range(name: &str, [lo, hi]: [f64; 2], strict: bool) -> Result<()> {
    let ordered = if strict { lo < hi } else { lo <= hi };
    if !(0.0 <= lo && ordered && hi <= 1.0) {
        return Err(Error::param(format!("{name} must satisfy 0 <= lo < hi <= 1, got [{lo}, {hi}]")));
    }
    Ok(())
}

impl ContrastParams {
    pub fn validate(&self) -> Result<()> {
        check_unit_range("mean_range", self.mean_range, true)?;
        // A degenerate spread range is allowed so piecewise-constant images
        // can be requested.
        check_unit_range("std_range", self.std_range, false)?;
        for (label, c) in &self.overrides {
            if !(c.std >= 0.0 && c.mean.is_finite() && c.std.is_finite()) {
                return Err(Error::param(format!("override for label {label} needs finite mean and std >= 0")));
            }
        }
        Ok(())
    }
}

/// What was drawn for each label.
pub type ContrastDraws = BTreeMap<u32, LabelContrast>;

/// Draws `I0` for `labels`. See [`synthesize_contrast_with_draws`].
pub fn synthesize_contrast(labels: &LabelVolume, params: &ContrastParams, seed: u64) -> Result<ScalarField3> {
    Ok(synthesize_contrast_with_draws(labels, params, seed)?.0)
}

/// Draws a healthy image and reports the per-label parameters used.
///
/// Labels are visited in ascending order; each draws its mean and then its
/// spread (even when overridden, so that adding an override does not shift
/// the other labels' draws). Background voxels are exactly zero. Voxel values
/// are clamped to `[0, 1]`.
pub fn synthesize_contrast_with_draws(
    labels: &LabelVolume,
    params: &ContrastParams,
    seed: u64,
) -> Result<(ScalarField3, ContrastDraws)> {
    params.validate()?;
    let present = labels.labels();
    let mut rng = SplitMix64::new(seed);
    let mut draws = ContrastDraws::new();
    for &label in &present {
        let mean = rng.uniform(params.mean_range[0], params.mean_range[1]);
        let std = rng.uniform(params.std_range[0], params.std_range[1]);
        let drawn = if let Some(o) = params.overrides.get(&label) {
            *o
        } else {
            match labels.role(label) {
                None => {
                    return Err(Error::Configuration(format!(
                        "label {label} has no role and no contrast override"
                    )))
                }
                Some(LabelRole::Background) => LabelContrast { mean: 0.0, std: 0.0 },
                Some(_) => LabelContrast { mean, std },
            }
        };
        draws.insert(label, drawn);
    }

    let background: Vec<bool> = present
        .iter()
        .map(|l| labels.role(*l) == Some(LabelRole::Background) && !params.overrides.contains_key(l))
        .collect();
    let lookup: BTreeMap<u32, (LabelContrast, bool)> = present
        .iter()
        .zip(&background)
        .map(|(l, b)| (*l, (draws[l], *b)))
        .collect();

    let image = labels.grid().map(|label| {
        let (c, is_background) = lookup[&label];
        if is_background {
            0.0
        } else {
            rng.normal(c.mean, c.std).clamp(0.0, 1.0)
        }
    });
    Ok((image, draws))
}

fn masked_mean(image: &ScalarField3, mask: &Mask3, what: &str) -> Result<f64> {
    let values = image.masked_values(mask)?;
    if values.is_empty() {
        return Err(Error::degenerate(format!("no {what} voxels")));
    }
    // Incremental mean: exact on constant regions, stable on large ones.
    let mut mean = 0.0;
    for (k, v) in values.iter().enumerate() {
        mean += (v - mean) / (k + 1) as f64;
    }
    Ok(mean)
}

/// Mean intensity over white-matter and gray-matter voxels.
pub fn tissue_means(image: &ScalarField3, labels: &LabelVolume) -> Result<(f64, f64)> {
    check_shape("tissue_means", labels.shape(), image.shape())?;
    let white = masked_mean(image, &labels.role_mask(LabelRole::WhiteMatter), "white-matter")?;
    let gray = masked_mean(image, &labels.role_mask(LabelRole::GrayMatter), "gray-matter")?;
    Ok((white, gray))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodeParams {
    /// Probability that a volume's intensity shift has the opposite sign.
    pub sign_flip_prob: f64,
    /// Gaussian smoothing of `ΔI` in voxels; 0 disables it.
    pub delta_smooth_sigma: f64,
    /// The anomaly support is `{P > support_threshold}`.
    pub support_threshold: f64,
}

impl Default for EncodeParams {
    fn default() -> Self {
        Self {
            sign_flip_prob: 0.2,
            delta_smooth_sigma: 1.0,
            support_threshold: 0.0,
        }
    }
}

impl EncodeParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sign_flip_prob) {
            return Err(Error::param(format!("sign_flip_prob must lie in [0, 1], got {}", self.sign_flip_prob)));
        }
        if !(self.delta_smooth_sigma >= 0.0 && self.delta_smooth_sigma.is_finite()) {
            return Err(Error::param("delta_smooth_sigma must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.support_threshold) {
            return Err(Error::param("support_threshold must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Result of writing an anomaly into a healthy image.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub image: ScalarField3,
    pub delta: ScalarField3,
    pub support: Mask3,
    pub draw: EncodeDraw,
}

/// The random choices behind an [`Encoding`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodeDraw {
    pub white_mean: f64,
    pub gray_mean: f64,
    pub flipped: bool,
    pub delta_mean: f64,
    pub delta_std: f64,
}

/// `I = clamp(I0 + ΔI·P, 0, 1)` with `ΔI ~ N(∓μ_w/2, μ_w/2)` on the support
/// of `P` and zero elsewhere.
///
/// The sign is negative when white matter is brighter than gray matter and
/// positive otherwise; one Bernoulli draw per volume inverts it.
pub fn encode_anomaly(
    healthy: &ScalarField3,
    pathology: &ScalarField3,
    labels: &LabelVolume,
    params: &EncodeParams,
    seed: u64,
) -> Result<Encoding> {
    params.validate()?;
    check_shape("encode_anomaly", healthy.shape(), pathology.shape())?;
    pathology.check_probability("pathology probability")?;
    let (white_mean, gray_mean) = tissue_means(healthy, labels)?;

    let mut rng = SplitMix64::new(seed);
    let flipped = rng.bernoulli(params.sign_flip_prob);
    let magnitude = white_mean / 2.0;
    let natural = if white_mean > gray_mean { -magnitude } else { magnitude };
    let delta_mean = if flipped { -natural } else { natural };
    let delta_std = magnitude;

    let support = pathology.above(params.support_threshold);
    let mut delta = support.map(|inside| if inside { rng.normal(delta_mean, delta_std) } else { 0.0 });

    if params.delta_smooth_sigma > 0.0 && !support.is_none_set() {
        // Normalised convolution: smoothing only mixes values from inside the
        // support, so the border is not dragged towards zero.
        let s = [params.delta_smooth_sigma; 3];
        let num = gaussian_smooth(&delta, s);
        let den = gaussian_smooth(&support.to_field(), s);
        delta = num.zip_map(&den, |n, d| if d > 0.0 { n / d } else { 0.0 })?;
        delta = delta.zip_map(&support, |v, m| if m { v } else { 0.0 })?;
    }

    let mut image = healthy.clone();
    for ((out, d), p) in image.data_mut().iter_mut().zip(delta.data()).zip(pathology.data()) {
        if *p > 0.0 {
            *out = (*out + d * p).clamp(0.0, 1.0);
        }
    }
    Ok(Encoding {
        image,
        delta,
        support,
        draw: EncodeDraw {
            white_mean,
            gray_mean,
            flipped,
            delta_mean,
            delta_std,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Grid, Shape3, Spacing3};

    /// Left half white matter (2), right half gray matter (3), a background rim.
    fn phantom(n: usize) -> LabelVolume {
        let grid = Grid::from_fn(Shape3::cube(n), Spacing3::default(), |i, j, k| {
            let rim = [i, j, k].iter().any(|&c| c == 0 || c == n - 1);
            if rim {
                0
            } else if i < n / 2 {
                2
            } else {
                3
            }
        });
        LabelVolume::with_freesurfer_roles(grid)
    }

    fn no_spread() -> ContrastParams {
        ContrastParams { std_range: [0.0, 0.0], ..Default::default() }
    }

    #[test]
    fn zero_spread_gives_piecewise_constant_image() {
        let labels = phantom(10);
        let (img, draws) = synthesize_contrast_with_draws(&labels, &no_spread(), 5).unwrap();
        for (v, l) in img.data().iter().zip(labels.data()) {
            assert_eq!(*v, draws[l].mean);
        }
    }

    #[test]
    fn background_is_exactly_zero() {
        let labels = phantom(10);
        let img = synthesize_contrast(&labels, &ContrastParams::default(), 9).unwrap();
        for (v, l) in img.data().iter().zip(labels.data()) {
            if *l == 0 {
                assert_eq!(*v, 0.0);
            } else {
                assert!((0.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn empirical_mean_matches_draw() {
        let labels = phantom(32);
        let (img, draws) = synthesize_contrast_with_draws(&labels, &ContrastParams::default(), 17).unwrap();
        let wm = labels.role_mask(LabelRole::WhiteMatter);
        let values = img.masked_values(&wm).unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let c = draws[&2];
        assert!((mean - c.mean).abs() < 4.0 * c.std / n.sqrt(), "{mean} vs {c:?}");
    }

    #[test]
    fn overrides_pin_contrast_without_shifting_other_draws() {
        let labels = phantom(8);
        let base = synthesize_contrast_with_draws(&labels, &no_spread(), 3).unwrap().1;
        let mut p = no_spread();
        p.overrides.insert(2, LabelContrast { mean: 0.5, std: 0.0 });
        let (img, draws) = synthesize_contrast_with_draws(&labels, &p, 3).unwrap();
        assert_eq!(draws[&2].mean, 0.5);
        assert_eq!(draws[&3], base[&3]);
        assert_eq!(img.get(2, 4, 4), 0.5);
    }

    #[test]
    fn unknown_label_without_override_is_a_configuration_error() {
        let grid = Grid::from_fn(Shape3::cube(4), Spacing3::default(), |i, _, _| if i == 0 { 0 } else { 9999 });
        let labels = LabelVolume::new(grid.clone(), BTreeMap::new()).unwrap();
        assert!(matches!(
            synthesize_contrast(&labels, &ContrastParams::default(), 1),
            Err(Error::Configuration(_))
        ));
        let mut p = ContrastParams::default();
        p.overrides.insert(9999, LabelContrast { mean: 0.3, std: 0.0 });
        assert!(synthesize_contrast(&labels, &p, 1).is_ok());
    }

    #[test]
    fn contrast_is_deterministic() {
        let labels = phantom(12);
        let a = synthesize_contrast(&labels, &ContrastParams::default(), 44).unwrap();
        let b = synthesize_contrast(&labels, &ContrastParams::default(), 44).unwrap();
        assert_eq!(a, b);
    }

    fn two_tone(labels: &LabelVolume, white: f64, gray: f64) -> ScalarField3 {
        let mut p = no_spread();
        p.overrides.insert(2, LabelContrast { mean: white, std: 0.0 });
        p.overrides.insert(3, LabelContrast { mean: gray, std: 0.0 });
        synthesize_contrast(labels, &p, 0).unwrap()
    }

    #[test]
    fn tissue_means_of_two_tone_image() {
        let labels = phantom(10);
        let img = two_tone(&labels, 0.8, 0.4);
        assert_eq!(tissue_means(&img, &labels).unwrap(), (0.8, 0.4));
        // Swapping roles swaps the result.
        let mut roles = labels.roles().clone();
        roles.insert(2, LabelRole::GrayMatter);
        roles.insert(3, LabelRole::WhiteMatter);
        let swapped = LabelVolume::new(labels.grid().clone(), roles).unwrap();
        assert_eq!(tissue_means(&img, &swapped).unwrap(), (0.4, 0.8));
    }

    #[test]
    fn missing_tissue_class_is_degenerate() {
        let grid = Grid::from_fn(Shape3::cube(4), Spacing3::default(), |_, _, _| 2u32);
        let labels = LabelVolume::with_freesurfer_roles(grid);
        let img = ScalarField3::filled(labels.shape(), Spacing3::default(), 0.5);
        assert!(matches!(tissue_means(&img, &labels), Err(Error::Degenerate(_))));
    }

    #[test]
    fn zero_probability_leaves_image_untouched() {
        let labels = phantom(10);
        let img = synthesize_contrast(&labels, &ContrastParams::default(), 2).unwrap();
        let p = ScalarField3::zeros(img.shape(), img.spacing());
        let enc = encode_anomaly(&img, &p, &labels, &EncodeParams::default(), 7).unwrap();
        assert_eq!(enc.image, img);
        assert_eq!(enc.delta.max_abs(), 0.0);
        assert!(enc.support.is_none_set());
    }

    #[test]
    fn delta_mean_follows_white_gray_order() {
        let labels = phantom(24);
        let img = two_tone(&labels, 0.8, 0.4);
        let p = ScalarField3::from_fn(img.shape(), img.spacing(), |i, j, k| {
            if (4..20).contains(&i) && (4..20).contains(&j) && (4..20).contains(&k) { 0.7 } else { 0.0 }
        });
        let params = EncodeParams { sign_flip_prob: 0.0, delta_smooth_sigma: 0.0, ..Default::default() };
        let enc = encode_anomaly(&img, &p, &labels, &params, 3).unwrap();
        let inside = enc.delta.masked_values(&enc.support).unwrap();
        let n = inside.len() as f64;
        let mean = inside.iter().sum::<f64>() / n;
        assert!((mean + 0.4).abs() < 4.0 * 0.4 / n.sqrt(), "{mean}");
        // Outside the support the shift is zero and the image is unchanged.
        for idx in 0..img.data().len() {
            if !enc.support.data()[idx] {
                assert_eq!(enc.delta.data()[idx], 0.0);
                assert_eq!(enc.image.data()[idx], img.data()[idx]);
            }
        }
        // Reversed tissue order reverses the sign.
        let img = two_tone(&labels, 0.3, 0.6);
        let enc = encode_anomaly(&img, &p, &labels, &params, 3).unwrap();
        assert!(enc.draw.delta_mean > 0.0);
        assert_eq!(enc.draw.delta_mean, 0.15);
    }

    #[test]
    fn flip_always_inverts_sign() {
        let labels = phantom(10);
        let img = two_tone(&labels, 0.8, 0.4);
        let p = ScalarField3::filled(img.shape(), img.spacing(), 0.5);
        let params = EncodeParams { sign_flip_prob: 1.0, ..Default::default() };
        let enc = encode_anomaly(&img, &p, &labels, &params, 4).unwrap();
        assert!(enc.draw.flipped);
        assert_eq!(enc.draw.delta_mean, 0.4);
    }

    #[test]
    fn smoothing_keeps_shift_on_support() {
        let labels = phantom(16);
        let img = two_tone(&labels, 0.8, 0.4);
        let p = ScalarField3::from_fn(img.shape(), img.spacing(), |i, _, _| if i < 8 { 1.0 } else { 0.0 });
        let raw = encode_anomaly(&img, &p, &labels, &EncodeParams { delta_smooth_sigma: 0.0, ..Default::default() }, 5).unwrap();
        let smooth = encode_anomaly(&img, &p, &labels, &EncodeParams::default(), 5).unwrap();
        assert_eq!(raw.support, smooth.support);
        let spread = |e: &Encoding| {
            let v = e.delta.masked_values(&e.support).unwrap();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        assert!(spread(&smooth) < spread(&raw));
        for (d, m) in smooth.delta.data().iter().zip(smooth.support.data()) {
            if !*m {
                assert_eq!(*d, 0.0);
            }
        }
    }

    #[test]
    fn rejects_invalid_probability() {
        let labels = phantom(6);
        let img = two_tone(&labels, 0.8, 0.4);
        let p = ScalarField3::filled(img.shape(), img.spacing(), 1.5);
        assert!(matches!(
            encode_anomaly(&img, &p, &labels, &EncodeParams::default(), 1),
            Err(Error::Invariant(_))
        ));
    }
}
