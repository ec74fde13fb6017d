//! One generated training sample, end to end.
//!
//! ```text
//! labels ──► domain ──► P0 ──(transport for T)──► P ─┐
//!    └─────────► healthy contrast I0 ────────────────┴─► encode ─► I
//! ```
//!
//! Every random choice comes from its own stream derived from the sample seed,
//! and all of them are recorded in [`Provenance`].

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::corruption::CorruptionRecord;
use crate::error::{check_shape, Error, Result};
use crate::fields::{FieldParams, TransportFields};
use crate::noise::{perlin_noise_window, rescale_to_probability, threshold_to_anomaly, PerlinParams};
use crate::rng::{derive_seed, streams, SplitMix64};
use crate::synthesis::{encode_anomaly, synthesize_contrast_with_draws, ContrastParams, EncodeDraw, EncodeParams, LabelContrast};
use crate::transport::{transport_with_snapshots, SolverConfig, TransportReport};
use crate::volume::{LabelVolume, Mask3, ScalarField3, Shape3};

/// How the initial anomaly `P0` is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathologyInit {
    /// No anomaly.
    None,
    /// A supplied lesion mask or probability map in subject space.
    Mask,
    /// Thresholded noise at a percentile drawn from `percentile_range`.
    Perlin { res: [usize; 3], percentile_range: [f64; 2] },
}

impl Default for PathologyInit {
    fn default() -> Self {
        PathologyInit::Perlin { res: [4, 4, 4], percentile_range: [95.0, 99.5] }
    }
}

/// How each sample's transport time is chosen from `[0, solver.t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSampling {
    Uniform,
    /// Always integrate for the full horizon.
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub pathology: PathologyInit,
    pub fields: FieldParams,
    pub solver: SolverConfig,
    pub time_sampling: TimeSampling,
    pub contrast: ContrastParams,
    pub encode: EncodeParams,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            pathology: PathologyInit::default(),
            fields: FieldParams::default(),
            solver: SolverConfig::default(),
            time_sampling: TimeSampling::Uniform,
            contrast: ContrastParams::default(),
            encode: EncodeParams::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.contrast.validate()?;
        self.encode.validate()?;
        if let PathologyInit::Perlin { res, percentile_range: [lo, hi] } = &self.pathology {
            if res.iter().any(|r| *r == 0) {
                return Err(Error::param("perlin res must be positive"));
            }
            if !(0.0 < *lo && lo <= hi && *hi < 100.0) {
                return Err(Error::param(format!("percentile_range must satisfy 0 < lo <= hi < 100, got [{lo}, {hi}]")));
            }
        }
        if self.fields.perlin_res.iter().any(|r| *r == 0) {
            return Err(Error::param("field perlin_res must be positive"));
        }
        Ok(())
    }
}

/// Seeds of every stream a sample draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSeeds {
    pub pathology: u64,
    pub velocity: u64,
    pub diffusion: u64,
    pub transport_time: u64,
    pub contrast: u64,
    pub encode: u64,
    pub corruption: u64,
}

impl StreamSeeds {
    pub fn derive(seed: u64) -> Self {
        Self {
            pathology: derive_seed(seed, streams::PATHOLOGY),
            velocity: derive_seed(seed, streams::VELOCITY),
            diffusion: derive_seed(seed, streams::DIFFUSION),
            transport_time: derive_seed(seed, streams::TRANSPORT_TIME),
            contrast: derive_seed(seed, streams::CONTRAST),
            encode: derive_seed(seed, streams::ENCODE),
            corruption: derive_seed(seed, streams::CORRUPTION),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathologyProvenance {
    pub kind: String,
    pub percentile: Option<f64>,
    /// Voxels with `P0 > 0`.
    pub initial_support: usize,
}

/// Everything needed to explain (and reproduce) a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub streams: StreamSeeds,
    pub pathology: PathologyProvenance,
    pub transport_time: f64,
    pub transport: TransportReport,
    pub contrast: BTreeMap<u32, LabelContrast>,
    pub encode: Option<EncodeDraw>,
    pub corruption: Option<CorruptionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// Diseased image `I`.
    pub image: ScalarField3,
    /// Healthy ground truth `I0`.
    pub healthy: ScalarField3,
    /// Pathology probability `P`.
    pub pathology: ScalarField3,
    /// Anomaly support `Ω_P`.
    pub anomaly_mask: Mask3,
    /// Brain domain the anomaly was confined to.
    pub brain_mask: Mask3,
    pub provenance: Provenance,
}

/// The rounded-up lattice shape that `res` divides, used so that any subject
/// shape can be thresholded without resizing.
pub fn lattice_shape(shape: Shape3, res: [usize; 3]) -> Shape3 {
    Shape3(core::array::from_fn(|a| shape[a].div_ceil(res[a]) * res[a]))
}

/// Builds `P0` inside `domain`. `source` is required for [`PathologyInit::Mask`].
pub fn initial_pathology(
    init: &PathologyInit,
    domain: &Mask3,
    source: Option<&ScalarField3>,
    seed: u64,
) -> Result<(ScalarField3, PathologyProvenance)> {
    let shape = domain.shape();
    let spacing = domain.spacing();
    let (p0, kind, percentile) = match init {
        PathologyInit::None => (ScalarField3::zeros(shape, spacing), "none", None),
        PathologyInit::Mask => {
            let src = source.ok_or_else(|| Error::Configuration("pathology init 'mask' needs a source volume".into()))?;
            check_shape("pathology source", shape, src.shape())?;
            let support = src.zip_map(domain, |v, d| d && v > 0.0)?;
            let p0 = if support.is_none_set() {
                ScalarField3::zeros(shape, spacing)
            } else {
                rescale_to_probability(src, &support)?.with_spacing(spacing)?
            };
            (p0, "mask", None)
        }
        PathologyInit::Perlin { res, percentile_range } => {
            let mut rng = SplitMix64::new(seed);
            let percentile = rng.uniform(percentile_range[0], percentile_range[1]);
            let params = PerlinParams {
                shape: lattice_shape(shape, *res),
                res: *res,
                tileable: [false; 3],
                seed: derive_seed(seed, 1),
                percentile: None,
            };
            let noise = perlin_noise_window(&params, [0; 3], shape)?.with_spacing(spacing)?;
            let (p0, _) = threshold_to_anomaly(&noise, percentile, domain)?;
            (p0, "perlin", Some(percentile))
        }
    };
    let initial_support = p0.data().iter().filter(|v| **v > 0.0).count();
    Ok((p0, PathologyProvenance { kind: kind.into(), percentile, initial_support }))
}

/// Transport time for one sample.
pub fn draw_transport_time(sampling: TimeSampling, t_max: f64, seed: u64) -> f64 {
    match sampling {
        TimeSampling::Max => t_max,
        TimeSampling::Uniform => SplitMix64::new(seed).uniform(0.0, t_max),
    }
}

/// Generates one clean (uncorrupted) sample.
pub fn make_sample(labels: &LabelVolume, source: Option<&ScalarField3>, config: &GenerationConfig, seed: u64) -> Result<SampleRecord> {
    make_sample_with_snapshots(labels, source, config, seed, &[], |_, _| {})
}

/// As [`make_sample`], also reporting `P` at the requested transport times
/// (each within the sample's drawn time `T`).
pub fn make_sample_with_snapshots(
    labels: &LabelVolume,
    source: Option<&ScalarField3>,
    config: &GenerationConfig,
    seed: u64,
    snapshot_times: &[f64],
    on_snapshot: impl FnMut(f64, &ScalarField3),
) -> Result<SampleRecord> {
    config.validate()?;
    let seeds = StreamSeeds::derive(seed);
    let shape = labels.shape();
    let spacing = labels.spacing();
    let domain = labels.foreground();
    if domain.is_none_set() {
        return Err(Error::degenerate("label volume has no foreground voxels"));
    }

    let (p0, pathology_prov) = initial_pathology(&config.pathology, &domain, source, seeds.pathology)?;
    let t = draw_transport_time(config.time_sampling, config.solver.t_max, seeds.transport_time);
    let solver = SolverConfig { t_max: t, ..config.solver.clone() };

    let moves = t > 0.0 && pathology_prov.initial_support > 0;
    let fields = if moves {
        TransportFields::generate(shape, &config.fields, seeds.velocity, seeds.diffusion)?
    } else {
        TransportFields::still(shape, spacing)
    };
    let fields = fields.with_spacing(spacing)?;
    let (pathology, report) = transport_with_snapshots(&p0, &fields, &domain, &solver, snapshot_times, on_snapshot)?;

    let (healthy, contrast) = synthesize_contrast_with_draws(labels, &config.contrast, seeds.contrast)?;
    let support = pathology.above(config.encode.support_threshold);
    let (image, anomaly_mask, encode) = if support.is_none_set() {
        (healthy.clone(), support, None)
    } else {
        let enc = encode_anomaly(&healthy, &pathology, labels, &config.encode, seeds.encode)?;
        (enc.image, enc.support, Some(enc.draw))
    };

    Ok(SampleRecord {
        image,
        healthy,
        pathology,
        anomaly_mask,
        brain_mask: domain,
        provenance: Provenance {
            seed,
            streams: seeds,
            pathology: pathology_prov,
            transport_time: t,
            transport: report,
            contrast,
            encode,
            corruption: None,
        },
    })
}
