//! Seeded 3D gradient (Perlin) noise and percentile thresholding.
//!
//! The lattice has `res[a] + 1` nodes along axis `a`. Each node holds a unit
//! gradient built from two angles drawn uniformly on `[0, 2π)`:
//! `(sin φ cos θ, sin φ sin θ, cos φ)`. All θ values are drawn first, then all
//! φ values, both in row-major node order. A voxel at index `i` along an axis
//! of length `n` lies in cell `i / d` at fractional offset `(i mod d) / d`,
//! where `d = n / res`. The value is the trilinear blend, under the quintic
//! fade `t³(6t² − 15t + 10)`, of the eight corner gradients dotted with the
//! offset from each corner.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::math;
use crate::rng::SplitMix64;
use crate::volume::{Mask3, ScalarField3, Shape3, Spacing3};

/// Lower bound of the rescaled probability inside a thresholded anomaly.
pub const ANOMALY_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerlinParams {
    pub shape: Shape3,
    /// Noise periods per axis; each shape component must be a multiple.
    pub res: [usize; 3],
    #[serde(default)]
    pub tileable: [bool; 3],
    pub seed: u64,
    #[serde(default)]
    pub percentile: Option<f64>,
}

impl PerlinParams {
    pub fn new(shape: Shape3, res: [usize; 3], seed: u64) -> Self {
        Self {
            shape,
            res,
            tileable: [false; 3],
            seed,
            percentile: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if self.res[a] == 0 {
                return Err(Error::param(format!("perlin res[{a}] must be positive")));
            }
            if self.shape[a] == 0 || self.shape[a] % self.res[a] != 0 {
                return Err(Error::param(format!(
                    "perlin shape {:?} is not divisible by res {:?} on axis {a}",
                    self.shape, self.res
                )));
            }
        }
        if let Some(p) = self.percentile {
            if !(p > 0.0 && p < 100.0) {
                return Err(Error::param(format!("percentile must lie in (0, 100), got {p}")));
            }
        }
        Ok(())
    }
}

#[inline]
pub fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Gradient lattice for one noise realisation.
#[derive(Debug, Clone)]
pub struct GradientLattice {
    res: [usize; 3],
    gradients: Vec<[f64; 3]>,
}

impl GradientLattice {
    pub fn new(res: [usize; 3], tileable: [bool; 3], seed: u64) -> Self {
        let dims = [res[0] + 1, res[1] + 1, res[2] + 1];
        let n = dims[0] * dims[1] * dims[2];
        let mut rng = SplitMix64::new(seed);
        let theta: Vec<f64> = (0..n).map(|_| core::f64::consts::TAU * rng.next_f64()).collect();
        let phi: Vec<f64> = (0..n).map(|_| core::f64::consts::TAU * rng.next_f64()).collect();
        let mut gradients: Vec<[f64; 3]> = theta
            .iter()
            .zip(phi.iter())
            .map(|(&t, &p)| {
                let sp = math::sin(p);
                [sp * math::cos(t), sp * math::sin(t), math::cos(p)]
            })
            .collect();
        let node = |i: usize, j: usize, k: usize| (i * dims[1] + j) * dims[2] + k;
        // Same order as the reference: axis 0, then 1, then 2.
        if tileable[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    gradients[node(res[0], j, k)] = gradients[node(0, j, k)];
                }
            }
        }
        if tileable[1] {
            for i in 0..dims[0] {
                for k in 0..dims[2] {
                    gradients[node(i, res[1], k)] = gradients[node(i, 0, k)];
                }
            }
        }
        if tileable[2] {
            for i in 0..dims[0] {
                for j in 0..dims[1] {
                    gradients[node(i, j, res[2])] = gradients[node(i, j, 0)];
                }
            }
        }
        Self { res, gradients }
    }

    #[inline]
    fn gradient(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        self.gradients[(i * (self.res[1] + 1) + j) * (self.res[2] + 1) + k]
    }

    /// Noise at cell `(ci, cj, ck)` with fractional offset `(fx, fy, fz)`.
    #[inline]
    pub fn eval_cell(&self, cell: [usize; 3], frac: [f64; 3], faded: [f64; 3]) -> f64 {
        let [ci, cj, ck] = cell;
        let [x, y, z] = frac;
        let dot = |g: [f64; 3], a: f64, b: f64, c: f64| g[0] * a + g[1] * b + g[2] * c;
        let n000 = dot(self.gradient(ci, cj, ck), x, y, z);
        let n100 = dot(self.gradient(ci + 1, cj, ck), x - 1.0, y, z);
        let n010 = dot(self.gradient(ci, cj + 1, ck), x, y - 1.0, z);
        let n110 = dot(self.gradient(ci + 1, cj + 1, ck), x - 1.0, y - 1.0, z);
        let n001 = dot(self.gradient(ci, cj, ck + 1), x, y, z - 1.0);
        let n101 = dot(self.gradient(ci + 1, cj, ck + 1), x - 1.0, y, z - 1.0);
        let n011 = dot(self.gradient(ci, cj + 1, ck + 1), x, y - 1.0, z - 1.0);
        let n111 = dot(self.gradient(ci + 1, cj + 1, ck + 1), x - 1.0, y - 1.0, z - 1.0);
        let [tx, ty, tz] = faded;
        let n00 = n000 * (1.0 - tx) + tx * n100;
        let n10 = n010 * (1.0 - tx) + tx * n110;
        let n01 = n001 * (1.0 - tx) + tx * n101;
        let n11 = n011 * (1.0 - tx) + tx * n111;
        let n0 = (1.0 - ty) * n00 + ty * n10;
        let n1 = (1.0 - ty) * n01 + ty * n11;
        (1.0 - tz) * n0 + tz * n1
    }

    /// Noise at continuous lattice coordinates in `[0, res]` per axis.
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let x = p[a].clamp(0.0, self.res[a] as f64);
            let mut c = math::floor(x) as usize;
            if c >= self.res[a] {
                c = self.res[a] - 1;
            }
            cell[a] = c;
            frac[a] = x - c as f64;
        }
        self.eval_cell(cell, frac, frac.map(fade))
    }
}

struct AxisTable {
    cell: Vec<usize>,
    frac: Vec<f64>,
    faded: Vec<f64>,
}

impl AxisTable {
    fn new(n: usize, res: usize, offset: usize, len: usize) -> Self {
        let d = n / res;
        let mut cell = Vec::with_capacity(len);
        let mut frac = Vec::with_capacity(len);
        for i in offset..offset + len {
            cell.push(i / d);
            frac.push((i % d) as f64 / d as f64);
        }
        let faded = frac.iter().map(|&t| fade(t)).collect();
        Self { cell, frac, faded }
    }
}

/// Evaluates the noise of `params` on the sub-block starting at `offset` with
/// extent `window`. Identical, value for value, to cropping the full field.
pub fn perlin_noise_window(params: &PerlinParams, offset: [usize; 3], window: Shape3) -> Result<ScalarField3> {
    params.validate()?;
    for a in 0..3 {
        if offset[a] + window[a] > params.shape[a] {
            return Err(Error::param(format!(
                "window {:?} at offset {:?} exceeds noise shape {:?}",
                window, offset, params.shape
            )));
        }
    }
    let lattice = GradientLattice::new(params.res, params.tileable, params.seed);
    let tables: [AxisTable; 3] = core::array::from_fn(|a| AxisTable::new(params.shape[a], params.res[a], offset[a], window[a]));
    let mut data = Vec::with_capacity(window.len());
    for i in 0..window[0] {
        for j in 0..window[1] {
            for k in 0..window[2] {
                data.push(lattice.eval_cell(
                    [tables[0].cell[i], tables[1].cell[j], tables[2].cell[k]],
                    [tables[0].frac[i], tables[1].frac[j], tables[2].frac[k]],
                    [tables[0].faded[i], tables[1].faded[j], tables[2].faded[k]],
                ));
            }
        }
    }
    ScalarField3::new(window, Spacing3::default(), data)
}

/// Full noise field for `params` (the `percentile` field is ignored here; see
/// [`threshold_to_anomaly`]).
pub fn perlin_noise_3d(params: &PerlinParams) -> Result<ScalarField3> {
    perlin_noise_window(params, [0; 3], params.shape)
}

/// Centre crop of a noise realization generated on `pad`. The crop offset is
/// `(pad - shape) / 2` per axis.
pub fn perlin_noise_cropped(pad: &PerlinParams, shape: Shape3) -> Result<ScalarField3> {
    for a in 0..3 {
        if shape[a] > pad.shape[a] {
            return Err(Error::param(format!(
                "requested shape {:?} exceeds pad shape {:?}",
                shape, pad.shape
            )));
        }
    }
    let offset = core::array::from_fn(|a| (pad.shape[a] - shape[a]) / 2);
    perlin_noise_window(pad, offset, shape)
}

/// Percentile with linear interpolation between order statistics
/// (rank `q/100 · (n − 1)`). `sorted` must be ascending and non-empty.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = q / 100.0 * (n - 1) as f64;
    let lo = math::floor(rank) as usize;
    let hi = (lo + 1).min(n - 1);
    let w = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * w
}

/// Rescales the values of `field` on `mask` affinely onto
/// `[ANOMALY_FLOOR, 1]`; zero elsewhere. A constant support maps to 1.
pub fn rescale_to_probability(field: &ScalarField3, mask: &Mask3) -> Result<ScalarField3> {
    check_shape("rescale_to_probability", field.shape(), mask.shape())?;
    let values = field.masked_values(mask)?;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    field.zip_map(mask, |v, m| {
        if !m {
            0.0
        } else if span > 0.0 {
            (ANOMALY_FLOOR + (1.0 - ANOMALY_FLOOR) * (v - lo) / span).clamp(0.0, 1.0)
        } else {
            1.0
        }
    })
}

/// Thresholds noise at its `percentile` over `domain` and turns the retained
/// region into a probability map.
///
/// Returns `(P0, mask)` with `mask = (noise ≥ threshold) ∧ domain`.
pub fn threshold_to_anomaly(noise: &ScalarField3, percentile: f64, domain: &Mask3) -> Result<(ScalarField3, Mask3)> {
    check_shape("threshold_to_anomaly", noise.shape(), domain.shape())?;
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::param(format!("percentile must lie in (0, 100), got {percentile}")));
    }
    let mut values = noise.masked_values(domain)?;
    if values.is_empty() {
        return Err(Error::degenerate("threshold domain is empty"));
    }
    values.sort_unstable_by(f64::total_cmp);
    let threshold = percentile_sorted(&values, percentile);
    let mask = noise.zip_map(domain, |v, d| d && v >= threshold)?;
    let p0 = rescale_to_probability(noise, &mask)?;
    Ok((p0, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indivisible_shape() {
        let p = PerlinParams::new(Shape3::new(10, 8, 8), [3, 2, 2], 1);
        assert!(matches!(perlin_noise_3d(&p), Err(Error::Parameter(_))));
        let mut p = PerlinParams::new(Shape3::cube(8), [2, 2, 2], 1);
        p.percentile = Some(100.0);
        assert!(p.validate().is_err());
    }

    #[test]
    fn lattice_points_vanish() {
        for seed in 0..5 {
            let f = perlin_noise_3d(&PerlinParams::new(Shape3::cube(16), [1, 1, 1], seed)).unwrap();
            assert_eq!(f.get(0, 0, 0), 0.0);
            let g = perlin_noise_3d(&PerlinParams::new(Shape3::cube(16), [4, 4, 4], seed)).unwrap();
            for i in (0..16).step_by(4) {
                assert_eq!(g.get(i, 4, 8), 0.0);
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let p = PerlinParams::new(Shape3::new(16, 8, 12), [2, 2, 3], 99);
        assert_eq!(perlin_noise_3d(&p).unwrap(), perlin_noise_3d(&p).unwrap());
        let q = PerlinParams { seed: 100, ..p.clone() };
        assert_ne!(perlin_noise_3d(&p).unwrap(), perlin_noise_3d(&q).unwrap());
    }

    #[test]
    fn window_matches_crop() {
        let p = PerlinParams::new(Shape3::new(20, 16, 12), [4, 2, 3], 5);
        let full = perlin_noise_3d(&p).unwrap();
        let win = perlin_noise_window(&p, [3, 5, 2], Shape3::new(7, 6, 8)).unwrap();
        for i in 0..7 {
            for j in 0..6 {
                for k in 0..8 {
                    assert_eq!(win.get(i, j, k), full.get(i + 3, j + 5, k + 2));
                }
            }
        }
    }

    #[test]
    fn tileable_axis_wraps() {
        let mut p = PerlinParams::new(Shape3::cube(8), [2, 2, 2], 17);
        p.tileable = [true, false, false];
        let lattice = GradientLattice::new(p.res, p.tileable, p.seed);
        for s in 0..20 {
            let y = s as f64 * 0.1;
            let z = 1.3 - s as f64 * 0.05;
            let a = lattice.sample([0.0, y, z]);
            let b = lattice.sample([2.0, y, z]);
            assert!((a - b).abs() < 1e-12);
        }
        // Axis 1 is not tileable: generically differs.
        let a = lattice.sample([0.5, 0.0, 0.5]);
        let b = lattice.sample([0.5, 2.0, 0.5]);
        assert!((a - b).abs() > 1e-9);
    }

    #[test]
    fn sample_agrees_with_grid() {
        let p = PerlinParams::new(Shape3::cube(12), [3, 3, 3], 8);
        let f = perlin_noise_3d(&p).unwrap();
        let lattice = GradientLattice::new(p.res, p.tileable, p.seed);
        let v = lattice.sample([5.0 / 4.0, 7.0 / 4.0, 10.0 / 4.0]);
        assert!((v - f.get(5, 7, 10)).abs() < 1e-15);
    }

    #[test]
    fn percentile_matches_linear_interpolation() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile_sorted(&v, 50.0), 3.0);
        assert_eq!(percentile_sorted(&v, 25.0), 2.0);
        assert!((percentile_sorted(&v, 90.0) - 4.6).abs() < 1e-12);
    }

    #[test]
    fn threshold_near_zero_keeps_domain() {
        let f = perlin_noise_3d(&PerlinParams::new(Shape3::cube(16), [2, 2, 2], 3)).unwrap();
        let domain = Mask3::full(f.shape(), f.spacing());
        let (p0, mask) = threshold_to_anomaly(&f, 1e-9, &domain).unwrap();
        // Interpolated threshold sits a hair above the minimum: only the
        // global minimum drops out.
        let min = f.min();
        let dropped: Vec<f64> = f.data().iter().zip(mask.data()).filter(|(_, m)| !**m).map(|(v, _)| *v).collect();
        assert!(dropped.iter().all(|v| *v == min), "{dropped:?}");
        assert!(mask.count() >= domain.count() - 1);
        assert!(p0.masked_values(&mask).unwrap().iter().all(|v| *v >= ANOMALY_FLOOR));
        assert!((p0.max() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_noise_is_degenerate_but_handled() {
        let f = ScalarField3::filled(Shape3::cube(6), Spacing3::default(), 0.2);
        let mut domain = Mask3::full(f.shape(), f.spacing());
        domain.set(0, 0, 0, false);
        let (p0, mask) = threshold_to_anomaly(&f, 50.0, &domain).unwrap();
        assert_eq!(mask, domain);
        assert_eq!(p0.get(0, 0, 0), 0.0);
        assert_eq!(p0.get(3, 3, 3), 1.0);
    }

    #[test]
    fn empty_domain_is_rejected() {
        let f = ScalarField3::filled(Shape3::cube(4), Spacing3::default(), 0.2);
        let domain = Mask3::empty(f.shape(), f.spacing());
        assert!(matches!(threshold_to_anomaly(&f, 50.0, &domain), Err(Error::Degenerate(_))));
    }

    proptest::proptest! {
        #[test]
        fn anomaly_is_probability_inside_domain(seed in 0u64..500, q in 1.0f64..99.0) {
            let f = perlin_noise_3d(&PerlinParams::new(Shape3::cube(8), [2, 2, 2], seed)).unwrap();
            let domain = Mask3::from_fn(f.shape(), f.spacing(), |i, j, _| i + j < 10);
            let (p0, mask) = threshold_to_anomaly(&f, q, &domain).unwrap();
            p0.check_probability("P0").unwrap();
            for idx in 0..p0.data().len() {
                if !domain.data()[idx] {
                    proptest::prop_assert_eq!(p0.data()[idx], 0.0);
                    proptest::prop_assert!(!mask.data()[idx]);
                }
            }
        }
    }
}
