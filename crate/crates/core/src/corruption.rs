//! Acquisition-style corruption at three severity levels.
//!
//! Stages run in the order a scanner would introduce them: spatial
//! deformation (shared by every channel of a sample), then loss of
//! resolution, a multiplicative bias field and additive noise (image only).
//! Every stage draws from its own seed stream, so disabling one stage does not
//! change what the others do.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{convolve_axis, gaussian_kernel, gaussian_smooth, resample_linear, upsample_corner_aligned};
use crate::math;
use crate::rng::{derive_seed, SplitMix64};
use crate::sample::SampleRecord;
use crate::volume::{MaskOp, ScalarField3, Shape3, Spacing3, VectorField3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Mild,
    Medium,
    Severe,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Mild, Severity::Medium, Severity::Severe];

    pub fn name(self) -> &'static str {
        match self {
            Severity::Mild => "mild",
            Severity::Medium => "medium",
            Severity::Severe => "severe",
        }
    }

    pub fn parse(s: &str) -> Option<Severity> {
        Severity::ALL.into_iter().find(|l| l.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformationParams {
    pub rotation_max_deg: f64,
    pub shearing_max: f64,
    pub scaling_max: f64,
    /// Nonlinear displacement amplitude as a fraction of the largest extent.
    pub nonlinear_scale_min: f64,
    pub nonlinear_scale_max: f64,
    /// Upper bound of the smoothing kernel width in voxels (lower bound 1).
    pub nonlinear_sigma_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionParams {
    pub p_low_field: f64,
    pub p_anisotropic: f64,
    /// Isotropic downsampling factor range for the low-field branch.
    pub low_field_factor: [f64; 2],
    /// Single-axis downsampling factor range for thick-slice acquisitions.
    pub anisotropic_factor: [f64; 2],
}

/// Log-bias field `G` with mean in `[mean_min, mean_max]` and amplitude in
/// `[sigma_min, sigma_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasParams {
    pub mean_min: f64,
    pub mean_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Additive Gaussian noise; bounds are on the 0–255 intensity scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionLevel {
    pub level: Severity,
    pub deformation: DeformationParams,
    pub resolution: ResolutionParams,
    pub bias_field: BiasParams,
    pub noise: NoiseParams,
}

impl CorruptionLevel {
    pub fn table(level: Severity) -> Self {
        let deformation = DeformationParams {
            rotation_max_deg: 15.0,
            shearing_max: 0.2,
            scaling_max: 0.2,
            nonlinear_scale_min: 0.03,
            nonlinear_scale_max: 0.06,
            nonlinear_sigma_max: 4.0,
        };
        let (p_low_field, p_anisotropic) = match level {
            Severity::Mild => (0.1, 0.0),
            Severity::Medium => (0.3, 0.1),
            Severity::Severe => (0.5, 0.25),
        };
        let bias_field = match level {
            Severity::Mild => BiasParams { mean_min: 0.01, mean_max: 0.02, sigma_min: 0.01, sigma_max: 0.05 },
            Severity::Medium => BiasParams { mean_min: 0.02, mean_max: 0.03, sigma_min: 0.05, sigma_max: 0.3 },
            Severity::Severe => BiasParams { mean_min: 0.02, mean_max: 0.04, sigma_min: 0.1, sigma_max: 0.6 },
        };
        let noise = match level {
            Severity::Mild => NoiseParams { sigma_min: 0.01, sigma_max: 1.0 },
            Severity::Medium => NoiseParams { sigma_min: 0.5, sigma_max: 5.0 },
            Severity::Severe => NoiseParams { sigma_min: 5.0, sigma_max: 15.0 },
        };
        Self {
            level,
            deformation,
            resolution: ResolutionParams {
                p_low_field,
                p_anisotropic,
                low_field_factor: [1.5, 3.0],
                anisotropic_factor: [2.0, 8.0],
            },
            bias_field,
            noise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.resolution;
        for (name, p) in [("p_low_field", r.p_low_field), ("p_anisotropic", r.p_anisotropic)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        let ordered = |name: &str, lo: f64, hi: f64| {
            if lo <= hi && lo.is_finite() && hi.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("{name}: need finite lo <= hi, got [{lo}, {hi}]")))
            }
        };
        let d = &self.deformation;
        ordered("nonlinear_scale", d.nonlinear_scale_min, d.nonlinear_scale_max)?;
        ordered("nonlinear_sigma", 1.0, d.nonlinear_sigma_max)?;
        ordered("low_field_factor", r.low_field_factor[0], r.low_field_factor[1])?;
        ordered("anisotropic_factor", r.anisotropic_factor[0], r.anisotropic_factor[1])?;
        ordered("bias mean", self.bias_field.mean_min, self.bias_field.mean_max)?;
        ordered("bias sigma", self.bias_field.sigma_min, self.bias_field.sigma_max)?;
        ordered("noise sigma", self.noise.sigma_min, self.noise.sigma_max)?;
        if r.low_field_factor[0] < 1.0 || r.anisotropic_factor[0] < 1.0 {
            return Err(Error::param("downsampling factors must be >= 1"));
        }
        Ok(())
    }
}

/// The full severity table, mild to severe.
pub fn level_table() -> Vec<CorruptionLevel> {
    Severity::ALL.into_iter().map(CorruptionLevel::table).collect()
}

/// Row-major homogeneous transform mapping output voxel positions to source
/// positions.
pub type Matrix4 = [[f64; 4]; 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDraw {
    pub rotation_deg: [f64; 3],
    /// Upper-triangular shear coefficients `(xy, xz, yz)`.
    pub shear: [f64; 3],
    pub scale: [f64; 3],
}

impl AffineDraw {
    pub const IDENTITY: AffineDraw = AffineDraw {
        rotation_deg: [0.0; 3],
        shear: [0.0; 3],
        scale: [1.0; 3],
    };
}

type Matrix3 = [[f64; 3]; 3];

fn matmul3(a: &Matrix3, b: &Matrix3) -> Matrix3 {
    core::array::from_fn(|i| core::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

pub fn determinant3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Linear block of a homogeneous transform.
pub fn linear_part(m: &Matrix4) -> Matrix3 {
    core::array::from_fn(|i| core::array::from_fn(|j| m[i][j]))
}

/// `R · Sh · S` applied about `center`, with `R = Rz · Ry · Rx`.
pub fn affine_matrix(draw: &AffineDraw, center: [f64; 3]) -> Matrix4 {
    let [ax, ay, az] = draw.rotation_deg.map(|d| d * core::f64::consts::PI / 180.0);
    let (sx, cx) = (math::sin(ax), math::cos(ax));
    let (sy, cy) = (math::sin(ay), math::cos(ay));
    let (sz, cz) = (math::sin(az), math::cos(az));
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    let [hxy, hxz, hyz] = draw.shear;
    let sh = [[1.0, hxy, hxz], [0.0, 1.0, hyz], [0.0, 0.0, 1.0]];
    let s = [[draw.scale[0], 0.0, 0.0], [0.0, draw.scale[1], 0.0], [0.0, 0.0, draw.scale[2]]];
    let a = matmul3(&matmul3(&matmul3(&rz, &ry), &rx), &matmul3(&sh, &s));
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[i][j];
        }
        m[i][3] = center[i] - (0..3).map(|j| a[i][j] * center[j]).sum::<f64>();
    }
    m[3][3] = 1.0;
    m
}

fn volume_center(shape: Shape3) -> [f64; 3] {
    core::array::from_fn(|a| (shape[a] as f64 - 1.0) / 2.0)
}

pub fn draw_affine(params: &DeformationParams, seed: u64) -> AffineDraw {
    let mut rng = SplitMix64::new(seed);
    let r = params.rotation_max_deg;
    let h = params.shearing_max;
    let s = params.scaling_max;
    AffineDraw {
        rotation_deg: core::array::from_fn(|_| rng.uniform(-r, r)),
        shear: core::array::from_fn(|_| rng.uniform(-h, h)),
        scale: core::array::from_fn(|_| rng.uniform(1.0 - s, 1.0 + s)),
    }
}

/// Random affine about the centre of a volume of `shape`.
pub fn random_affine(level: &CorruptionLevel, shape: Shape3, seed: u64) -> (Matrix4, AffineDraw) {
    let draw = draw_affine(&level.deformation, seed);
    (affine_matrix(&draw, volume_center(shape)), draw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearDraw {
    /// Largest displacement component, in voxels.
    pub amplitude: f64,
    pub sigma: f64,
    pub control_points: [usize; 3],
}

/// Control-point spacing of the coarse displacement lattice, in voxels.
const CONTROL_SPACING: usize = 16;

/// Smooth random displacement (voxel units) whose largest component equals
/// the drawn amplitude.
pub fn random_nonlinear(level: &CorruptionLevel, shape: Shape3, seed: u64) -> (VectorField3, NonlinearDraw) {
    let d = &level.deformation;
    let mut rng = SplitMix64::new(seed);
    let fraction = rng.uniform(d.nonlinear_scale_min, d.nonlinear_scale_max);
    let sigma = rng.uniform(1.0, d.nonlinear_sigma_max);
    let amplitude = fraction * shape.max_extent() as f64;
    let control = Shape3(shape.0.map(|n| (n.div_ceil(CONTROL_SPACING) + 1).max(2)));
    let draw = NonlinearDraw { amplitude, sigma, control_points: control.0 };
    let comps: [ScalarField3; 3] = core::array::from_fn(|_| {
        let coarse = ScalarField3::from_fn(control, Spacing3::default(), |_, _, _| rng.standard_normal());
        gaussian_smooth(&upsample_corner_aligned(&coarse, shape), [sigma; 3])
    });
    let peak = comps.iter().map(|c| c.max_abs()).fold(0.0, f64::max);
    let factor = if peak > 0.0 { amplitude / peak } else { 0.0 };
    let [x, y, z] = comps.map(|c| c.scale(factor));
    (VectorField3::new(x, y, z).expect("components share a shape"), draw)
}

/// Displacement of `source(x) = A(x + u(x))` in voxel units.
pub fn compose_displacement(affine: &Matrix4, nonlinear: Option<&VectorField3>, shape: Shape3, spacing: Spacing3) -> Result<VectorField3> {
    if let Some(u) = nonlinear {
        crate::error::check_shape("compose_displacement", shape, u.shape())?;
    }
    let mut comps: [ScalarField3; 3] = core::array::from_fn(|_| ScalarField3::zeros(shape, spacing));
    for idx in 0..shape.len() {
        let c = shape.coords(idx);
        let mut p = [c[0] as f64, c[1] as f64, c[2] as f64];
        if let Some(u) = nonlinear {
            for (a, pa) in p.iter_mut().enumerate() {
                *pa += u.component(a).data()[idx];
            }
        }
        for (a, comp) in comps.iter_mut().enumerate() {
            let src = affine[a][0] * p[0] + affine[a][1] * p[1] + affine[a][2] * p[2] + affine[a][3];
            comp.data_mut()[idx] = src - c[a] as f64;
        }
    }
    let [x, y, z] = comps;
    VectorField3::new(x, y, z)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResolutionDraw {
    /// Isotropic downsampling factor if the low-field branch fired.
    pub low_field: Option<f64>,
    /// `(axis, factor)` if the thick-slice branch fired.
    pub anisotropic: Option<(usize, f64)>,
}

pub fn draw_resolution(params: &ResolutionParams, seed: u64) -> ResolutionDraw {
    let mut rng = SplitMix64::new(seed);
    let low = rng.bernoulli(params.p_low_field);
    let low_factor = rng.uniform(params.low_field_factor[0], params.low_field_factor[1]);
    let aniso = rng.bernoulli(params.p_anisotropic);
    let axis = rng.index(3);
    let aniso_factor = rng.uniform(params.anisotropic_factor[0], params.anisotropic_factor[1]);
    ResolutionDraw {
        low_field: low.then_some(low_factor),
        anisotropic: aniso.then_some((axis, aniso_factor)),
    }
}

/// Blur (σ = factor/2 voxels) and downsample the selected axes by `factor`,
/// then resample back to the original grid.
fn down_up(image: &ScalarField3, factors: [f64; 3]) -> Result<ScalarField3> {
    let shape = image.shape();
    let mut blurred = image.clone();
    for (axis, f) in factors.iter().enumerate() {
        if *f > 1.0 && shape[axis] > 1 {
            blurred = convolve_axis(&blurred, axis, &gaussian_kernel(0.5 * f));
        }
    }
    let low = Shape3(core::array::from_fn(|a| {
        ((math::round(shape[a] as f64 / factors[a].max(1.0))) as usize).clamp(1, shape[a])
    }));
    let down = resample_linear(&blurred, low);
    resample_linear(&down, shape).with_spacing(image.spacing())
}

/// Applies the drawn resolution loss; output shape equals input shape.
pub fn degrade_resolution(image: &ScalarField3, draw: &ResolutionDraw) -> Result<ScalarField3> {
    let mut out = image.clone();
    if let Some(f) = draw.low_field {
        out = down_up(&out, [f; 3])?;
    }
    if let Some((axis, f)) = draw.anisotropic {
        if axis > 2 {
            return Err(Error::param(format!("anisotropic axis must be 0..=2, got {axis}")));
        }
        let mut factors = [1.0; 3];
        factors[axis] = f;
        out = down_up(&out, factors)?;
    }
    Ok(out.map(|v| v.clamp(0.0, 1.0)))
}

pub fn simulate_resolution(image: &ScalarField3, level: &CorruptionLevel, seed: u64) -> Result<(ScalarField3, ResolutionDraw)> {
    let draw = draw_resolution(&level.resolution, seed);
    Ok((degrade_resolution(image, &draw)?, draw))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasDraw {
    pub mean: f64,
    pub amplitude: f64,
}

/// Coarse control lattice of the bias field per axis.
const BIAS_CONTROL: usize = 4;

/// Unit-variance, zero-mean smooth random field.
fn smooth_unit_field(shape: Shape3, spacing: Spacing3, rng: &mut SplitMix64) -> Result<ScalarField3> {
    let control = Shape3(shape.0.map(|n| BIAS_CONTROL.min(n.max(2))));
    let coarse = ScalarField3::from_fn(control, Spacing3::default(), |_, _, _| rng.standard_normal());
    let g = upsample_corner_aligned(&coarse, shape).with_spacing(spacing)?;
    let mean = g.mean();
    let var = g.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / g.data().len() as f64;
    let sd = math::sqrt(var);
    Ok(g.map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 }))
}

/// `B = exp(mean + amplitude · g)` with `g` smooth, zero-mean and unit-variance.
pub fn bias_field(shape: Shape3, spacing: Spacing3, mean: f64, amplitude: f64, seed: u64) -> Result<ScalarField3> {
    let mut rng = SplitMix64::new(seed);
    let g = smooth_unit_field(shape, spacing, &mut rng)?;
    Ok(g.map(|v| math::exp(mean + amplitude * v)))
}

pub fn apply_bias_field(image: &ScalarField3, level: &CorruptionLevel, seed: u64) -> Result<(ScalarField3, BiasDraw)> {
    let p = &level.bias_field;
    let mut rng = SplitMix64::new(seed);
    let draw = BiasDraw {
        mean: rng.uniform(p.mean_min, p.mean_max),
        amplitude: rng.uniform(p.sigma_min, p.sigma_max),
    };
    let b = bias_field(image.shape(), image.spacing(), draw.mean, draw.amplitude, derive_seed(seed, 1))?;
    Ok((image.zip_map(&b, |v, f| (v * f).clamp(0.0, 1.0))?, draw))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseDraw {
    /// Standard deviation in normalised `[0, 1]` units.
    pub sigma: f64,
}

/// Adds `N(0, sigma)` per voxel and clamps to `[0, 1]`.
pub fn add_noise(image: &ScalarField3, sigma: f64, seed: u64) -> ScalarField3 {
    if sigma == 0.0 {
        return image.clone();
    }
    let mut rng = SplitMix64::new(seed);
    image.map(|v| (v + rng.normal(0.0, sigma)).clamp(0.0, 1.0))
}

pub fn apply_noise(image: &ScalarField3, level: &CorruptionLevel, seed: u64) -> (ScalarField3, NoiseDraw) {
    let mut rng = SplitMix64::new(seed);
    let sigma = rng.uniform(level.noise.sigma_min, level.noise.sigma_max) / 255.0;
    (add_noise(image, sigma, derive_seed(seed, 1)), NoiseDraw { sigma })
}

/// Which stages `corrupt` runs; `level = None` disables corruption entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionSettings {
    pub level: Option<Severity>,
    pub deformation: bool,
    pub resolution: bool,
    pub bias_field: bool,
    pub noise: bool,
}

impl Default for CorruptionSettings {
    fn default() -> Self {
        Self {
            level: None,
            deformation: true,
            resolution: true,
            bias_field: true,
            noise: true,
        }
    }
}

impl CorruptionSettings {
    pub fn at(level: Severity) -> Self {
        Self { level: Some(level), ..Default::default() }
    }
}

/// Everything `corrupt` drew, for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRecord {
    pub level: Severity,
    pub seed: u64,
    pub affine: Option<AffineDraw>,
    pub affine_matrix: Option<Matrix4>,
    pub nonlinear: Option<NonlinearDraw>,
    pub resolution: Option<ResolutionDraw>,
    pub bias_field: Option<BiasDraw>,
    pub noise: Option<NoiseDraw>,
}

mod stage {
    pub const AFFINE: u64 = 0;
    pub const NONLINEAR: u64 = 1;
    pub const RESOLUTION: u64 = 2;
    pub const BIAS: u64 = 3;
    pub const NOISE: u64 = 4;
}

/// Corrupts a sample. The deformation is applied identically to the image,
/// the healthy reference, the pathology map and both masks; the remaining
/// stages touch the image only, so the references stay clean.
pub fn corrupt(sample: &SampleRecord, settings: &CorruptionSettings, seed: u64) -> Result<SampleRecord> {
    let Some(level) = settings.level else {
        return Ok(sample.clone());
    };
    let table = CorruptionLevel::table(level);
    let mut out = sample.clone();
    let shape = sample.image.shape();
    let mut record = CorruptionRecord {
        level,
        seed,
        affine: None,
        affine_matrix: None,
        nonlinear: None,
        resolution: None,
        bias_field: None,
        noise: None,
    };

    if settings.deformation {
        let (matrix, affine) = random_affine(&table, shape, derive_seed(seed, stage::AFFINE));
        let (u, nonlinear) = random_nonlinear(&table, shape, derive_seed(seed, stage::NONLINEAR));
        let disp = compose_displacement(&matrix, Some(&u), shape, sample.image.spacing())?;
        out.image = sample.image.apply_deformation(&disp)?.map(|v| v.clamp(0.0, 1.0));
        out.healthy = sample.healthy.apply_deformation(&disp)?.map(|v| v.clamp(0.0, 1.0));
        out.brain_mask = sample.brain_mask.warp_nearest(&disp)?;
        // Trilinear weights bleed across the nearest-neighbour brain border;
        // re-confine so the anomaly still lives inside the warped domain.
        out.pathology = sample
            .pathology
            .apply_deformation(&disp)?
            .zip_map(&out.brain_mask, |v, m| if m { v.clamp(0.0, 1.0) } else { 0.0 })?;
        out.anomaly_mask = sample.anomaly_mask.warp_nearest(&disp)?.combine(&out.brain_mask, MaskOp::Intersect)?;
        record.affine = Some(affine);
        record.affine_matrix = Some(matrix);
        record.nonlinear = Some(nonlinear);
    }
    if settings.resolution {
        let (img, draw) = simulate_resolution(&out.image, &table, derive_seed(seed, stage::RESOLUTION))?;
        out.image = img;
        record.resolution = Some(draw);
    }
    if settings.bias_field {
        let (img, draw) = apply_bias_field(&out.image, &table, derive_seed(seed, stage::BIAS))?;
        out.image = img;
        record.bias_field = Some(draw);
    }
    if settings.noise {
        let (img, draw) = apply_noise(&out.image, &table, derive_seed(seed, stage::NOISE));
        out.image = img;
        record.noise = Some(draw);
    }
    out.provenance.corruption = Some(record);
    Ok(out)
}
