//! Separable smoothing and grid resampling.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::volume::{ScalarField3, Shape3};

/// Normalised 1D Gaussian taps for standard deviation `sigma` (voxels),
/// truncated at 3σ.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return vec![1.0];
    }
    let radius = math::ceil(3.0 * sigma) as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|x| {
            let x = x as f64;
            math::exp(-0.5 * x * x / (sigma * sigma))
        })
        .collect();
    let total: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= total;
    }
    taps
}

/// Convolves along one axis with edge replication.
pub fn convolve_axis(field: &ScalarField3, axis: usize, taps: &[f64]) -> ScalarField3 {
    if taps.len() == 1 {
        return field.clone();
    }
    let shape = field.shape();
    let n = shape[axis] as isize;
    let stride = shape.strides()[axis];
    let radius = (taps.len() / 2) as isize;
    let src = field.data();
    let mut out = ScalarField3::zeros(shape, field.spacing());
    let dst = out.data_mut();
    let mut line = vec![0.0; n as usize];
    // Iterate over every line parallel to `axis`.
    let [nx, ny, nz] = shape.0;
    let mut starts = Vec::with_capacity(shape.len() / shape[axis].max(1));
    for i in 0..if axis == 0 { 1 } else { nx } {
        for j in 0..if axis == 1 { 1 } else { ny } {
            for k in 0..if axis == 2 { 1 } else { nz } {
                starts.push(shape.index(i, j, k));
            }
        }
    }
    for s in starts {
        for (p, slot) in line.iter_mut().enumerate() {
            *slot = src[s + p * stride];
        }
        for p in 0..n {
            let mut acc = 0.0;
            for (t, w) in taps.iter().enumerate() {
                let q = (p + t as isize - radius).clamp(0, n - 1);
                acc += w * line[q as usize];
            }
            dst[s + p as usize * stride] = acc;
        }
    }
    out
}

/// Separable Gaussian smoothing with per-axis standard deviations in voxels.
pub fn gaussian_smooth(field: &ScalarField3, sigma: [f64; 3]) -> ScalarField3 {
    let mut out = field.clone();
    for (axis, s) in sigma.iter().enumerate() {
        if *s > 0.0 && field.shape()[axis] > 1 {
            out = convolve_axis(&out, axis, &gaussian_kernel(*s));
        }
    }
    out
}

/// Box mean over a `(2r+1)` window per axis; windows are truncated at the
/// grid border and normalised by the number of voxels they cover.
pub fn box_mean(field: &ScalarField3, radius: usize) -> ScalarField3 {
    let mut out = field.clone();
    for axis in 0..3 {
        out = box_mean_axis(&out, axis, radius);
    }
    out
}

fn box_mean_axis(field: &ScalarField3, axis: usize, radius: usize) -> ScalarField3 {
    let shape = field.shape();
    let n = shape[axis];
    let stride = shape.strides()[axis];
    let src = field.data();
    let mut out = ScalarField3::zeros(shape, field.spacing());
    let dst = out.data_mut();
    let [nx, ny, nz] = shape.0;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..if axis == 0 { 1 } else { nx } {
        for j in 0..if axis == 1 { 1 } else { ny } {
            for k in 0..if axis == 2 { 1 } else { nz } {
                let s = shape.index(i, j, k);
                for p in 0..n {
                    prefix[p + 1] = prefix[p] + src[s + p * stride];
                }
                for p in 0..n {
                    let lo = p.saturating_sub(radius);
                    let hi = (p + radius + 1).min(n);
                    dst[s + p * stride] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
                }
            }
        }
    }
    out
}

/// Trilinear resampling onto `target` with cell-centred alignment (voxel
/// centres of both grids cover the same physical extent). Positions beyond the
/// outermost source centres clamp to the border.
pub fn resample_linear(field: &ScalarField3, target: Shape3) -> ScalarField3 {
    let src_shape = field.shape();
    let coord = |axis: usize, x: usize| -> f64 {
        let scale = src_shape[axis] as f64 / target[axis] as f64;
        let p = (x as f64 + 0.5) * scale - 0.5;
        p.clamp(0.0, (src_shape[axis] - 1) as f64)
    };
    let xs: Vec<f64> = (0..target[0]).map(|x| coord(0, x)).collect();
    let ys: Vec<f64> = (0..target[1]).map(|x| coord(1, x)).collect();
    let zs: Vec<f64> = (0..target[2]).map(|x| coord(2, x)).collect();
    let spacing = field.spacing();
    let new_spacing = crate::volume::Spacing3([
        spacing[0] * src_shape[0] as f64 / target[0] as f64,
        spacing[1] * src_shape[1] as f64 / target[1] as f64,
        spacing[2] * src_shape[2] as f64 / target[2] as f64,
    ]);
    ScalarField3::from_fn(target, new_spacing, |i, j, k| field.sample_linear([xs[i], ys[j], zs[k]]))
}

/// Trilinear upsampling of a coarse control grid whose corner nodes coincide
/// with the corner voxels of `target`.
pub fn upsample_corner_aligned(coarse: &ScalarField3, target: Shape3) -> ScalarField3 {
    let cs = coarse.shape();
    let coord = |axis: usize, x: usize| -> f64 {
        if target[axis] <= 1 {
            0.0
        } else {
            x as f64 * (cs[axis] - 1) as f64 / (target[axis] - 1) as f64
        }
    };
    let xs: Vec<f64> = (0..target[0]).map(|x| coord(0, x)).collect();
    let ys: Vec<f64> = (0..target[1]).map(|x| coord(1, x)).collect();
    let zs: Vec<f64> = (0..target[2]).map(|x| coord(2, x)).collect();
    ScalarField3::from_fn(target, Default::default(), |i, j, k| coarse.sample_linear([xs[i], ys[j], zs[k]]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Spacing3;

    #[test]
    fn kernel_is_normalised_and_symmetric() {
        let k = gaussian_kernel(1.7);
        let s: f64 = k.iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
        for i in 0..k.len() / 2 {
            assert_eq!(k[i], k[k.len() - 1 - i]);
        }
    }

    #[test]
    fn smoothing_preserves_constants() {
        let f = ScalarField3::filled(Shape3::new(9, 7, 5), Spacing3::default(), 0.3);
        let g = gaussian_smooth(&f, [1.5, 2.0, 0.7]);
        for v in g.data() {
            assert!((v - 0.3).abs() < 1e-14);
        }
    }

    #[test]
    fn box_mean_matches_brute_force() {
        let shape = Shape3::new(6, 5, 4);
        let f = ScalarField3::from_fn(shape, Spacing3::default(), |i, j, k| (i * 7 + j * 3 + k * k) as f64);
        let g = box_mean(&f, 1);
        for i in 0..6usize {
            for j in 0..5usize {
                for k in 0..4usize {
                    let mut s = 0.0;
                    let mut c = 0;
                    for a in i.saturating_sub(1)..(i + 2).min(6) {
                        for b in j.saturating_sub(1)..(j + 2).min(5) {
                            for d in k.saturating_sub(1)..(k + 2).min(4) {
                                s += f.get(a, b, d);
                                c += 1;
                            }
                        }
                    }
                    assert!((g.get(i, j, k) - s / c as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn resample_round_trip_shape() {
        let f = ScalarField3::from_fn(Shape3::new(10, 8, 6), Spacing3::default(), |i, _, _| i as f64);
        let down = resample_linear(&f, Shape3::new(5, 4, 3));
        let up = resample_linear(&down, f.shape());
        assert_eq!(up.shape(), f.shape());
        // Linear ramps survive away from the clamped border.
        for i in 2..8 {
            assert!((up.get(i, 3, 3) - i as f64).abs() < 1e-9, "{} vs {i}", up.get(i, 3, 3));
        }
    }

    #[test]
    fn corner_aligned_upsample_hits_nodes() {
        let coarse = ScalarField3::from_fn(Shape3::cube(3), Spacing3::default(), |i, j, k| (i + 2 * j + 3 * k) as f64);
        let fine = upsample_corner_aligned(&coarse, Shape3::cube(9));
        assert_eq!(fine.get(0, 0, 0), 0.0);
        assert_eq!(fine.get(8, 8, 8), 12.0);
        assert_eq!(fine.get(4, 0, 0), 1.0);
    }
}
