//! Velocity and diffusion fields built from noise potentials.
//!
//! `V = ∇ × Ψ` is divergence-free by construction and `D = Φ²` is
//! non-negative by construction. Potentials are generated on a padded lattice
//! and centre-cropped so that the noise scale does not depend on the subject
//! shape.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{perlin_noise_cropped, PerlinParams};
use crate::rng::derive_seed;
use crate::volume::{ScalarField3, Shape3, Spacing3, VectorField3};

/// Edge length of the padded lattice the potentials are generated on.
pub const PAD_EXTENT: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldParams {
    pub perlin_res: [usize; 3],
    pub v_multiplier: f64,
    pub d_multiplier: f64,
}

impl Default for FieldParams {
    fn default() -> Self {
        Self {
            perlin_res: [4, 4, 4],
            v_multiplier: 1.0,
            d_multiplier: 0.8,
        }
    }
}

/// Velocity and diffusion for one transport problem.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportFields {
    pub velocity: VectorField3,
    pub diffusion: ScalarField3,
}

impl TransportFields {
    pub fn new(velocity: VectorField3, diffusion: ScalarField3) -> Result<Self> {
        crate::error::check_shape("transport fields", velocity.shape(), diffusion.shape())?;
        if let Some(v) = diffusion.data().iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::invariant(format!("diffusion must be non-negative, found {v}")));
        }
        Ok(Self { velocity, diffusion })
    }

    /// No transport at all.
    pub fn still(shape: Shape3, spacing: Spacing3) -> Self {
        Self {
            velocity: VectorField3::zeros(shape, spacing),
            diffusion: ScalarField3::zeros(shape, spacing),
        }
    }

    /// Relabels the grid spacing of both fields (values are unchanged).
    pub fn with_spacing(self, spacing: Spacing3) -> Result<Self> {
        let [x, y, z] = self.velocity.into_components();
        Ok(Self {
            velocity: VectorField3::new(x.with_spacing(spacing)?, y.with_spacing(spacing)?, z.with_spacing(spacing)?)?,
            diffusion: self.diffusion.with_spacing(spacing)?,
        })
    }

    pub fn generate(shape: Shape3, params: &FieldParams, velocity_seed: u64, diffusion_seed: u64) -> Result<Self> {
        let velocity = make_velocity(shape, params.perlin_res, params.v_multiplier, velocity_seed)?;
        let diffusion = make_diffusion(shape, params.perlin_res, params.d_multiplier, diffusion_seed)?;
        Ok(Self { velocity, diffusion })
    }
}

/// Partial derivative along `axis`: central differences inside, first-order
/// one-sided differences on the two boundary planes.
pub fn partial(field: &ScalarField3, axis: usize) -> ScalarField3 {
    let shape = field.shape();
    let n = shape[axis];
    let stride = shape.strides()[axis];
    let h = field.spacing()[axis];
    let src = field.data();
    let mut out = ScalarField3::zeros(shape, field.spacing());
    let dst = out.data_mut();
    for (idx, slot) in dst.iter_mut().enumerate() {
        let i = shape.coords(idx)[axis];
        *slot = if i == 0 {
            (src[idx + stride] - src[idx]) / h
        } else if i == n - 1 {
            (src[idx] - src[idx - stride]) / h
        } else {
            (src[idx + stride] - src[idx - stride]) / (2.0 * h)
        };
    }
    out
}

fn check_min_extent(shape: Shape3, what: &'static str) -> Result<()> {
    if shape.0.iter().any(|&n| n < 3) {
        return Err(Error::Dimension {
            context: what,
            expected: Shape3::cube(3),
            found: shape,
        });
    }
    Ok(())
}

/// `∇ × Ψ = (∂yΨz − ∂zΨy, ∂zΨx − ∂xΨz, ∂xΨy − ∂yΨx)`.
pub fn curl(psi: &VectorField3) -> Result<VectorField3> {
    check_min_extent(psi.shape(), "curl (every axis needs at least 3 voxels)")?;
    let [px, py, pz] = psi.components();
    let dy_pz = partial(pz, 1);
    let dz_py = partial(py, 2);
    let dz_px = partial(px, 2);
    let dx_pz = partial(pz, 0);
    let dx_py = partial(py, 0);
    let dy_px = partial(px, 1);
    let vx = dy_pz.zip_map(&dz_py, |a, b| a - b)?;
    let vy = dz_px.zip_map(&dx_pz, |a, b| a - b)?;
    let vz = dx_py.zip_map(&dy_px, |a, b| a - b)?;
    VectorField3::new(vx, vy, vz)
}

/// Discrete divergence with the same stencils as [`partial`].
pub fn divergence(v: &VectorField3) -> Result<ScalarField3> {
    check_min_extent(v.shape(), "divergence (every axis needs at least 3 voxels)")?;
    let [vx, vy, vz] = v.components();
    let a = partial(vx, 0);
    let b = partial(vy, 1);
    let c = partial(vz, 2);
    let ab = a.zip_map(&b, |x, y| x + y)?;
    ab.zip_map(&c, |x, y| x + y)
}

/// Largest `|∇·V|` over voxels at least `margin` voxels from every face.
pub fn interior_max_abs(field: &ScalarField3, margin: usize) -> f64 {
    let s = field.shape();
    let mut m = 0.0f64;
    for i in margin..s[0].saturating_sub(margin) {
        for j in margin..s[1].saturating_sub(margin) {
            for k in margin..s[2].saturating_sub(margin) {
                m = m.max(field.get(i, j, k).abs());
            }
        }
    }
    m
}

fn pad_params(perlin_res: [usize; 3], seed: u64) -> PerlinParams {
    PerlinParams {
        shape: Shape3::cube(PAD_EXTENT),
        res: perlin_res,
        tileable: [true, false, false],
        seed,
        percentile: None,
    }
}

/// Potential `Ψ`: three independent noise fields, tileable along axis 0,
/// generated on the padded lattice and centre-cropped to `shape`.
pub fn make_potential(shape: Shape3, perlin_res: [usize; 3], seed: u64) -> Result<VectorField3> {
    let comp = |c: u64| perlin_noise_cropped(&pad_params(perlin_res, derive_seed(seed, c)), shape);
    VectorField3::new(comp(0)?, comp(1)?, comp(2)?)
}

pub fn make_velocity(shape: Shape3, perlin_res: [usize; 3], v_multiplier: f64, seed: u64) -> Result<VectorField3> {
    if !v_multiplier.is_finite() {
        return Err(Error::param(format!("v_multiplier must be finite, got {v_multiplier}")));
    }
    let psi = make_potential(shape, perlin_res, seed)?;
    Ok(curl(&psi)?.scale(v_multiplier))
}

/// `Φ · d_multiplier`, the square root of the diffusion field.
pub fn make_diffusion_potential(shape: Shape3, perlin_res: [usize; 3], d_multiplier: f64, seed: u64) -> Result<ScalarField3> {
    if !(d_multiplier >= 0.0 && d_multiplier.is_finite()) {
        return Err(Error::param(format!("d_multiplier must be finite and non-negative, got {d_multiplier}")));
    }
    let phi = perlin_noise_cropped(&pad_params(perlin_res, seed), shape)?;
    Ok(phi.scale(d_multiplier))
}

pub fn make_diffusion(shape: Shape3, perlin_res: [usize; 3], d_multiplier: f64, seed: u64) -> Result<ScalarField3> {
    Ok(make_diffusion_potential(shape, perlin_res, d_multiplier, seed)?.map(|p| p * p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(shape: Shape3, f: impl Fn(f64, f64, f64) -> f64) -> ScalarField3 {
        ScalarField3::from_fn(shape, Spacing3::default(), |i, j, k| f(i as f64, j as f64, k as f64))
    }

    #[test]
    fn curl_of_constant_is_zero() {
        let s = Shape3::new(5, 6, 7);
        let psi = VectorField3::uniform(s, Spacing3::default(), [0.3, -1.0, 2.0]);
        assert_eq!(curl(&psi).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn curl_of_xy_potential() {
        let s = Shape3::new(6, 7, 5);
        let z = ScalarField3::zeros(s, Spacing3::default());
        let psi = VectorField3::new(z.clone(), z, field(s, |x, y, _| x * y)).unwrap();
        let v = curl(&psi).unwrap();
        for i in 1..5 {
            for j in 1..6 {
                for k in 1..4 {
                    assert_eq!(v.component(0).get(i, j, k), i as f64);
                    assert_eq!(v.component(1).get(i, j, k), -(j as f64));
                    assert_eq!(v.component(2).get(i, j, k), 0.0);
                }
            }
        }
    }

    #[test]
    fn curl_honours_spacing() {
        let s = Shape3::cube(5);
        let sp = Spacing3([2.0, 0.5, 1.0]);
        let z = ScalarField3::zeros(s, sp);
        // Ψz = physical y = 0.5 j  ⇒  Vx = ∂yΨz = 1.
        let pz = ScalarField3::from_fn(s, sp, |_, j, _| 0.5 * j as f64);
        let v = curl(&VectorField3::new(z.clone(), z, pz).unwrap()).unwrap();
        assert!((v.component(0).get(2, 2, 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn curl_rejects_thin_grids() {
        let psi = VectorField3::zeros(Shape3::new(2, 5, 5), Spacing3::default());
        assert!(matches!(curl(&psi), Err(Error::Dimension { .. })));
    }

    #[test]
    fn curl_is_divergence_free_inside() {
        let s = Shape3::new(12, 10, 9);
        let psi = VectorField3::new(
            field(s, |x, y, z| (0.3 * x).sin() * (0.2 * y + z).cos()),
            field(s, |x, y, z| x * y * z * 0.01 + (0.5 * z).sin()),
            field(s, |x, y, z| (x - y).cos() * (0.1 * z).exp()),
        )
        .unwrap();
        let v = curl(&psi).unwrap();
        let div = divergence(&v).unwrap();
        assert!(interior_max_abs(&div, 2) <= 1e-12 * v.max_abs());
    }

    #[test]
    fn zero_multipliers() {
        let s = Shape3::cube(8);
        assert_eq!(make_velocity(s, [4, 4, 4], 0.0, 3).unwrap().max_abs(), 0.0);
        assert_eq!(make_diffusion(s, [4, 4, 4], 0.0, 3).unwrap().max(), 0.0);
    }

    #[test]
    fn velocity_scales_exactly() {
        let s = Shape3::cube(10);
        let a = make_velocity(s, [4, 4, 4], 1.5, 21).unwrap();
        let b = make_velocity(s, [4, 4, 4], 3.0, 21).unwrap();
        assert_eq!(a.scale(2.0), b);
    }

    #[test]
    fn diffusion_is_square_of_potential() {
        let s = Shape3::cube(10);
        let phi = make_diffusion_potential(s, [4, 4, 4], 0.8, 4).unwrap();
        let d = make_diffusion(s, [4, 4, 4], 0.8, 4).unwrap();
        for (p, dv) in phi.data().iter().zip(d.data()) {
            assert_eq!(p * p, *dv);
            assert!(*dv >= 0.0);
        }
    }

    #[test]
    fn oversize_shape_rejected() {
        assert!(make_velocity(Shape3::new(201, 10, 10), [4, 4, 4], 1.0, 0).is_err());
    }

    #[test]
    fn transport_fields_reject_negative_diffusion() {
        let s = Shape3::cube(4);
        let mut d = ScalarField3::zeros(s, Spacing3::default());
        d.set(1, 1, 1, -1e-3);
        assert!(TransportFields::new(VectorField3::zeros(s, Spacing3::default()), d).is_err());
    }
}
