//! Training objectives and image-quality metrics, evaluated numerically.
//!
//! Nothing here differentiates; a trainer that consumes these values supplies
//! its own gradients.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::fields::partial;
use crate::filter::box_mean;
use crate::math;
use crate::volume::{Mask3, ScalarField3};

/// Where a training pair comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    /// Generated pair: the healthy target is known everywhere.
    Synthetic,
    /// Real scan: the target is unreliable inside the pathology.
    Real,
}

impl DataKind {
    fn indicator(self) -> f64 {
        match self {
            DataKind::Synthetic => 0.0,
            DataKind::Real => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconLossParams {
    pub data: DataKind,
    /// Weight of the gradient-difference term.
    pub lambda_grad: f64,
    /// Extra attention on pathology voxels of synthetic pairs.
    pub lambda_p: f64,
}

impl Default for ReconLossParams {
    fn default() -> Self {
        Self { data: DataKind::Synthetic, lambda_grad: 0.0, lambda_p: 1.0 }
    }
}

/// Per-voxel weight: 1 on healthy voxels, `(1 + λ_p)(1 − d)` on pathology.
pub fn recon_weight(params: &ReconLossParams, in_pathology: bool) -> f64 {
    if in_pathology {
        (1.0 + params.lambda_p) * (1.0 - params.data.indicator())
    } else {
        1.0
    }
}

/// Weighted reconstruction loss, averaged over the voxels of `region`.
///
/// The gradient term is taken on the weighted-support error
/// `e = (prediction − target)·[k > 0]`. For synthetic pairs this is
/// `∇prediction − ∇target`; for real pairs it keeps pathology voxels from
/// leaking into the stencils of their healthy neighbours, so the loss does not
/// depend on the prediction inside the pathology at all.
pub fn recon_loss(
    prediction: &ScalarField3,
    target: &ScalarField3,
    pathology: &Mask3,
    region: &Mask3,
    params: &ReconLossParams,
) -> Result<f64> {
    check_shape("recon_loss target", prediction.shape(), target.shape())?;
    check_shape("recon_loss pathology", prediction.shape(), pathology.shape())?;
    check_shape("recon_loss region", prediction.shape(), region.shape())?;
    if !(params.lambda_grad >= 0.0 && params.lambda_p >= 0.0) {
        return Err(Error::param("recon loss weights must be >= 0"));
    }
    let n = region.count();
    if n == 0 {
        return Err(Error::degenerate("recon_loss region is empty"));
    }
    let weights = pathology.map(|p| recon_weight(params, p));
    let err = prediction.zip_map(target, |a, b| a - b)?;
    let grads = if params.lambda_grad > 0.0 {
        let supported = err.zip_map(&weights, |e, k| if k > 0.0 { e } else { 0.0 })?;
        Some([partial(&supported, 0), partial(&supported, 1), partial(&supported, 2)])
    } else {
        None
    };
    let mut total = 0.0;
    for idx in 0..err.data().len() {
        if !region.data()[idx] {
            continue;
        }
        let k = weights.data()[idx];
        if k == 0.0 {
            continue;
        }
        let mut term = err.data()[idx].abs();
        if let Some(g) = &grads {
            let l1: f64 = g.iter().map(|c| c.data()[idx].abs()).sum();
            term += params.lambda_grad * l1;
        }
        total += k * term;
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastLossParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_contrast: f64,
}

impl Default for ContrastLossParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 1.0, lambda_contrast: 2.0 }
    }
}

/// `log Σ exp(xᵢ)` without overflow; `-∞` for an empty sequence.
pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = values.map(|v| math::exp(v - m)).sum();
    m + math::ln(s)
}

fn log_add_exp(x: f64, y: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + math::ln_1p(math::exp(lo - hi))
}

/// Intra-subject contrastive loss over `region`:
/// `−log( Σ e^{a/α} / (Σ e^{b/γ} + Σ e^{a/β}) )` with `a = Ĩ·Ī` (prediction
/// times the aligned contralateral image) and `b = Ĩ·I` (prediction times the
/// diseased input). An empty region contributes 0.
pub fn contrast_loss(
    prediction: &ScalarField3,
    input: &ScalarField3,
    mirrored: &ScalarField3,
    region: &Mask3,
    params: &ContrastLossParams,
) -> Result<f64> {
    check_shape("contrast_loss input", prediction.shape(), input.shape())?;
    check_shape("contrast_loss mirrored", prediction.shape(), mirrored.shape())?;
    check_shape("contrast_loss region", prediction.shape(), region.shape())?;
    for (name, t) in [("alpha", params.alpha), ("beta", params.beta), ("gamma", params.gamma)] {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::param(format!("temperature {name} must be positive, got {t}")));
        }
    }
    if region.is_none_set() {
        return Ok(0.0);
    }
    let idx = || (0..region.data().len()).filter(|&i| region.data()[i]);
    let p = prediction.data();
    let a = |i: usize| p[i] * mirrored.data()[i];
    let b = |i: usize| p[i] * input.data()[i];
    let num = log_sum_exp(idx().map(|i| a(i) / params.alpha));
    let den_b = log_sum_exp(idx().map(|i| b(i) / params.gamma));
    let den_a = log_sum_exp(idx().map(|i| a(i) / params.beta));
    Ok(log_add_exp(den_b, den_a) - num)
}

pub fn total_loss(recon: f64, contrast: f64, lambda_contrast: f64) -> f64 {
    recon + lambda_contrast * contrast
}

fn masked_pairs<'a>(a: &'a ScalarField3, b: &'a ScalarField3, mask: &'a Mask3, what: &'static str) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    check_shape(what, a.shape(), b.shape())?;
    check_shape(what, a.shape(), mask.shape())?;
    if mask.is_none_set() {
        return Err(Error::degenerate(format!("{what}: evaluation mask is empty")));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .zip(mask.data())
        .filter(|(_, m)| **m)
        .map(|((x, y), _)| (*x, *y)))
}

/// Mean absolute difference over `mask`.
pub fn metric_l1(a: &ScalarField3, b: &ScalarField3, mask: &Mask3) -> Result<f64> {
    let n = mask.count() as f64;
    Ok(masked_pairs(a, b, mask, "metric_l1")?.map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

/// `10·log10(1/MSE)` for data on `[0, 1]`; `+∞` when the inputs agree.
pub fn metric_psnr(a: &ScalarField3, b: &ScalarField3, mask: &Mask3) -> Result<f64> {
    let n = mask.count() as f64;
    let mse = masked_pairs(a, b, mask, "metric_psnr")?.map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * math::log10(mse) })
}

/// Half-width of the SSIM window (7 voxels per axis).
pub const SSIM_RADIUS: usize = 3;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean local SSIM over window centres inside `mask`. Windows are 7³ boxes,
/// truncated at the grid border; dynamic range 1.
pub fn metric_ssim(a: &ScalarField3, b: &ScalarField3, mask: &Mask3) -> Result<f64> {
    let _ = masked_pairs(a, b, mask, "metric_ssim")?;
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let r = SSIM_RADIUS;
    let mu_a = box_mean(a, r);
    let mu_b = box_mean(b, r);
    let aa = box_mean(&a.map(|v| v * v), r);
    let bb = box_mean(&b.map(|v| v * v), r);
    let ab = box_mean(&a.zip_map(b, |x, y| x * y)?, r);
    let mut total = 0.0;
    let mut n = 0usize;
    for idx in 0..a.data().len() {
        if !mask.data()[idx] {
            continue;
        }
        let (ma, mb) = (mu_a.data()[idx], mu_b.data()[idx]);
        let var_a = aa.data()[idx] - ma * ma;
        let var_b = bb.data()[idx] - mb * mb;
        let cov = ab.data()[idx] - ma * mb;
        let num = (2.0 * (ma * mb) + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
        n += 1;
    }
    Ok(total / n as f64)
}

/// `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn metric_dice(a: &Mask3, b: &Mask3) -> Result<f64> {
    check_shape("metric_dice", a.shape(), b.shape())?;
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (x, y) in a.data().iter().zip(b.data()) {
        na += *x as usize;
        nb += *y as usize;
        both += (*x && *y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// `|input − reconstruction|` min-max rescaled to `[0, 1]` over `mask`
/// (every voxel when `None`); zero outside the mask and everywhere when the
/// difference is constant.
pub fn anomaly_map(input: &ScalarField3, reconstruction: &ScalarField3, mask: Option<&Mask3>) -> Result<ScalarField3> {
    check_shape("anomaly_map", input.shape(), reconstruction.shape())?;
    let full;
    let mask = match mask {
        Some(m) => {
            check_shape("anomaly_map mask", input.shape(), m.shape())?;
            m
        }
        None => {
            full = Mask3::full(input.shape(), input.spacing());
            &full
        }
    };
    let diff = input.zip_map(reconstruction, |a, b| (a - b).abs())?;
    let values = diff.masked_values(mask)?;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    diff.zip_map(mask, |d, m| if m && span > 0.0 { (d - lo) / span } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::volume::{Shape3, Spacing3};

    fn field(n: usize, seed: u64) -> ScalarField3 {
        let mut rng = SplitMix64::new(seed);
        ScalarField3::from_fn(Shape3::cube(n), Spacing3::default(), |_, _, _| rng.next_f64())
    }

    fn mask(n: usize, seed: u64, p: f64) -> Mask3 {
        let mut rng = SplitMix64::new(seed);
        Mask3::from_fn(Shape3::cube(n), Spacing3::default(), |_, _, _| rng.bernoulli(p))
    }

    #[test]
    fn recon_is_zero_for_perfect_prediction() {
        let t = field(6, 1);
        let p = mask(6, 2, 0.3);
        let region = Mask3::full(t.shape(), t.spacing());
        for data in [DataKind::Synthetic, DataKind::Real] {
            let params = ReconLossParams { data, lambda_grad: 0.5, lambda_p: 1.0 };
            assert_eq!(recon_loss(&t, &t, &p, &region, &params).unwrap(), 0.0);
        }
    }

    #[test]
    fn recon_two_voxel_toy() {
        let s = Shape3::new(2, 1, 1);
        let target = ScalarField3::new(s, Spacing3::default(), alloc::vec![0.5, 0.5]).unwrap();
        let pred = ScalarField3::new(s, Spacing3::default(), alloc::vec![0.6, 0.6]).unwrap();
        let path = Mask3::new(s, Spacing3::default(), alloc::vec![true, false]).unwrap();
        let region = Mask3::full(s, Spacing3::default());
        let loss = recon_loss(&pred, &target, &path, &region, &ReconLossParams::default()).unwrap();
        assert!((loss - 0.15).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn real_data_ignores_pathology_voxels() {
        let n = 8;
        let t = field(n, 3);
        let pred = field(n, 4);
        let path = mask(n, 5, 0.2);
        let region = Mask3::full(t.shape(), t.spacing());
        let params = ReconLossParams { data: DataKind::Real, lambda_grad: 0.7, lambda_p: 1.0 };
        let base = recon_loss(&pred, &t, &path, &region, &params).unwrap();
        let mut rng = SplitMix64::new(6);
        let perturbed = pred.zip_map(&path, |v, m| if m { rng.next_f64() } else { v }).unwrap();
        assert_eq!(recon_loss(&perturbed, &t, &path, &region, &params).unwrap(), base);
        // Synthetic pairs do see the change.
        let params = ReconLossParams { data: DataKind::Synthetic, ..params };
        assert_ne!(
            recon_loss(&perturbed, &t, &path, &region, &params).unwrap(),
            recon_loss(&pred, &t, &path, &region, &params).unwrap()
        );
    }

    #[test]
    fn recon_gradient_term_on_ramp_offset() {
        // A constant offset has zero gradient difference in the interior of a
        // full-support synthetic pair.
        let s = Shape3::cube(5);
        let target = ScalarField3::from_fn(s, Spacing3::default(), |i, j, k| (i + j + k) as f64 * 0.01);
        let pred = target.map(|v| v + 0.1);
        let none = Mask3::empty(s, Spacing3::default());
        let region = Mask3::full(s, Spacing3::default());
        let p = ReconLossParams { lambda_grad: 3.0, ..Default::default() };
        let loss = recon_loss(&pred, &target, &none, &region, &p).unwrap();
        assert!((loss - 0.1).abs() < 1e-12);
    }

    #[test]
    fn contrast_oracles() {
        let n = 4;
        let s = Shape3::cube(n);
        let pred = field(n, 7);
        let img = field(n, 8);
        let region = mask(n, 9, 0.5);
        let params = ContrastLossParams { alpha: 0.7, beta: 0.7, gamma: 0.7, lambda_contrast: 2.0 };
        // Mirrored equal to input makes a = b.
        let l = contrast_loss(&pred, &img, &img, &region, &params).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);

        let one = Shape3::new(1, 1, 1);
        let f = |v: f64| ScalarField3::filled(one, Spacing3::default(), v);
        let region1 = Mask3::full(one, Spacing3::default());
        let unit = ContrastLossParams { alpha: 1.0, beta: 1.0, gamma: 1.0, lambda_contrast: 2.0 };
        let l = contrast_loss(&f(1.0), &f(0.0), &f(1.0), &region1, &unit).unwrap();
        assert!((l - math::ln_1p(math::exp(-1.0))).abs() < 1e-12);

        let empty = Mask3::empty(s, Spacing3::default());
        assert_eq!(contrast_loss(&pred, &img, &img, &empty, &params).unwrap(), 0.0);
        let bad = ContrastLossParams { alpha: 0.0, ..params };
        assert!(contrast_loss(&pred, &img, &img, &region, &bad).is_err());
    }

    #[test]
    fn contrast_monotonicity_and_finiteness() {
        let n = 5;
        let pred = field(n, 10);
        let img = field(n, 11);
        let mir = field(n, 12);
        let region = mask(n, 13, 0.6);
        let p = ContrastLossParams::default();
        let base = contrast_loss(&pred, &img, &mir, &region, &p).unwrap();
        let brighter_mirror = mir.map(|v| v + 0.2);
        assert!(contrast_loss(&pred, &img, &brighter_mirror, &region, &p).unwrap() < base);
        let brighter_input = img.map(|v| v + 0.2);
        assert!(contrast_loss(&pred, &brighter_input, &mir, &region, &p).unwrap() > base);
        let cold = ContrastLossParams { alpha: 0.01, beta: 0.01, gamma: 0.01, lambda_contrast: 2.0 };
        assert!(contrast_loss(&pred, &img, &mir, &region, &cold).unwrap().is_finite());
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(0.3, 5.0, 0.0), 0.3);
        let v = total_loss(0.15, core::f64::consts::LN_2, 2.0);
        assert!((v - 1.536_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn metric_fixed_points() {
        let a = field(9, 14);
        let m = Mask3::full(a.shape(), a.spacing());
        assert_eq!(metric_l1(&a, &a, &m).unwrap(), 0.0);
        assert_eq!(metric_psnr(&a, &a, &m).unwrap(), f64::INFINITY);
        assert_eq!(metric_ssim(&a, &a, &m).unwrap(), 1.0);
        let r = mask(9, 15, 0.4);
        assert_eq!(metric_dice(&r, &r).unwrap(), 1.0);
        let empty = Mask3::empty(a.shape(), a.spacing());
        assert_eq!(metric_dice(&empty, &empty).unwrap(), 1.0);
        assert!(matches!(metric_l1(&a, &a, &empty), Err(Error::Degenerate(_))));
    }

    #[test]
    fn dice_hand_cases() {
        let s = Shape3::new(8, 1, 1);
        let mk = |bits: [bool; 8]| Mask3::new(s, Spacing3::default(), bits.to_vec()).unwrap();
        let a = mk([true, true, true, true, false, false, false, false]);
        let b = mk([false, false, true, true, true, true, false, false]);
        let c = mk([false, false, false, false, false, false, true, true]);
        assert_eq!(metric_dice(&a, &b).unwrap(), 0.5);
        assert_eq!(metric_dice(&a, &c).unwrap(), 0.0);
        assert_eq!(metric_dice(&a, &b).unwrap(), metric_dice(&b, &a).unwrap());
    }

    #[test]
    fn psnr_of_known_error() {
        let a = ScalarField3::filled(Shape3::cube(3), Spacing3::default(), 0.5);
        let b = a.map(|v| v + 0.1);
        let m = Mask3::full(a.shape(), a.spacing());
        assert!((metric_psnr(&a, &b, &m).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn l1_triangle_inequality() {
        let m = mask(6, 16, 0.7);
        for s in 0..10u64 {
            let (x, y, z) = (field(6, 3 * s), field(6, 3 * s + 1), field(6, 3 * s + 2));
            let lhs = metric_l1(&x, &z, &m).unwrap();
            let rhs = metric_l1(&x, &y, &m).unwrap() + metric_l1(&y, &z, &m).unwrap();
            assert!(lhs <= rhs + 1e-15);
        }
    }

    #[test]
    fn ssim_drops_with_noise() {
        let a = field(10, 17);
        let m = Mask3::full(a.shape(), a.spacing());
        let mut rng = SplitMix64::new(18);
        let b = a.map(|v| v + rng.normal(0.0, 0.05));
        let c = a.map(|v| v + rng.normal(0.0, 0.2));
        let sb = metric_ssim(&a, &b, &m).unwrap();
        let sc = metric_ssim(&a, &c, &m).unwrap();
        assert!(1.0 > sb && sb > sc);
    }

    #[test]
    fn anomaly_map_cases() {
        let a = field(6, 19);
        assert_eq!(anomaly_map(&a, &a, None).unwrap().max(), 0.0);
        let mut b = a.clone();
        b.set(2, 3, 4, a.get(2, 3, 4) + 0.3);
        let map = anomaly_map(&a, &b, None).unwrap();
        for (idx, v) in map.data().iter().enumerate() {
            let expected = if idx == a.shape().index(2, 3, 4) { 1.0 } else { 0.0 };
            assert_eq!(*v, expected);
        }
    }

    #[test]
    fn anomaly_map_recovers_stronger_lesion() {
        let s = Shape3::cube(20);
        let healthy = ScalarField3::filled(s, Spacing3::default(), 0.6);
        let big = |i: usize, j: usize, k: usize| (4..10).contains(&i) && (4..10).contains(&j) && (4..10).contains(&k);
        let small = |i: usize, j: usize, k: usize| (14..17).contains(&i) && (14..17).contains(&j) && (14..17).contains(&k);
        let diseased = ScalarField3::from_fn(s, Spacing3::default(), |i, j, k| {
            if big(i, j, k) {
                0.2
            } else if small(i, j, k) {
                0.5
            } else {
                0.6
            }
        });
        let map = anomaly_map(&diseased, &healthy, None).unwrap();
        let found = map.above(0.5);
        let truth = Mask3::from_fn(s, Spacing3::default(), big);
        assert!(metric_dice(&found, &truth).unwrap() >= 0.9);
    }
}
