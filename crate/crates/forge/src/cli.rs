//! The `forge` command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use forge_core::corruption::{corrupt, level_table, CorruptionLevel, CorruptionSettings, Severity};
use forge_core::fields::{FieldParams, TransportFields};
use forge_core::noise::{perlin_noise_window, threshold_to_anomaly, PerlinParams};
use forge_core::phantom::brain_phantom;
use forge_core::objective::{metric_dice, metric_l1, metric_psnr, metric_ssim};
use forge_core::sample::lattice_shape;
use forge_core::transport::{transport_with_snapshots, SolverConfig, Stepper};
use forge_core::volume::{Mask3, ScalarField3, Shape3, Spacing3};

use crate::config::PipelineConfig;
use crate::io::{read_mask, read_scalar, read_vector, write_volume, VolumeRef};
use crate::pipeline::{read_sample, resolve_workers, run_pipeline, write_sample, RunOptions, SampleProvenance, WORKERS_ENV};
use crate::snapshot::export_snapshot;

#[derive(Debug, Parser)]
#[command(name = "forge", version, about = "Fluid-driven synthetic anomaly generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset from a pipeline configuration.
    Gen(GenArgs),
    /// Integrate advection-diffusion from given P0, V and D volumes.
    Transport(TransportArgs),
    /// Write a thresholded noise anomaly P0 (or the raw noise).
    Perlin(PerlinArgs),
    /// Write a random velocity field and diffusion map.
    Fields(FieldsArgs),
    /// Corrupt an existing sample directory at a severity level.
    Corrupt(CorruptArgs),
    /// Print L1 / PSNR / SSIM / Dice as JSON.
    Metrics(MetricsArgs),
    /// Export P at several transport times as slices and raw fields.
    Snapshot(SnapshotArgs),
    /// Print the corruption parameter table as JSON.
    Levels(LevelsArgs),
    /// Write a synthetic brain-shaped label map.
    Phantom(PhantomArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StepperArg {
    Euler,
    Rk45,
}

impl From<StepperArg> for Stepper {
    fn from(s: StepperArg) -> Self {
        match s {
            StepperArg::Euler => Stepper::FixedEuler,
            StepperArg::Rk45 => Stepper::AdaptiveRk45,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Mild,
    Medium,
    Severe,
}

impl From<LevelArg> for Severity {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::Mild => Severity::Mild,
            LevelArg::Medium => Severity::Medium,
            LevelArg::Severe => Severity::Severe,
        }
    }
}

/// Comma-separated triple such as `160,160,160`; a single value is repeated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triple<T>(pub [T; 3]);

impl<T: FromStr + Copy> FromStr for Triple<T> {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<T> = s
            .split(',')
            .map(|p| p.trim().parse::<T>().map_err(|_| format!("cannot parse {p:?}")))
            .collect::<Result<_, _>>()?;
        match parts.as_slice() {
            [v] => Ok(Triple([*v; 3])),
            [a, b, c] => Ok(Triple([*a, *b, *c])),
            _ => Err(format!("expected 1 or 3 comma-separated values, got {}", parts.len())),
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    /// Overrides `master_seed` from the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output_dir` from the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value = "rk45")]
    pub stepper: StepperArg,
    #[arg(long, default_value_t = 0.9)]
    pub cfl_safety: f64,
    /// Do not clamp P to [0, 1] after each step.
    #[arg(long)]
    pub no_clamp: bool,
}

impl SolverArgs {
    fn config(&self, t_max: f64) -> SolverConfig {
        SolverConfig {
            t_max,
            cfl_safety: self.cfl_safety,
            stepper: self.stepper.into(),
            clamp_each_step: !self.no_clamp,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TransportArgs {
    #[arg(long)]
    pub p0: PathBuf,
    /// Velocity field (3-component volume).
    #[arg(long)]
    pub v: PathBuf,
    /// Diffusion coefficient map.
    #[arg(long)]
    pub d: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub tmax: f64,
    /// Domain mask; the whole box when omitted.
    #[arg(long)]
    pub domain: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct PerlinArgs {
    #[arg(long)]
    pub shape: Triple<usize>,
    #[arg(long, default_value = "4,4,4")]
    pub res: Triple<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Threshold percentile; without it the raw noise is written.
    #[arg(long)]
    pub percentile: Option<f64>,
    /// Restrict the anomaly to this mask.
    #[arg(long)]
    pub domain: Option<PathBuf>,
    #[arg(long, default_value = "1,1,1")]
    pub spacing: Triple<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FieldsArgs {
    #[arg(long)]
    pub shape: Triple<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "4,4,4")]
    pub res: Triple<usize>,
    #[arg(long, default_value_t = FieldParams::default().v_multiplier)]
    pub v_mult: f64,
    #[arg(long, default_value_t = FieldParams::default().d_multiplier)]
    pub d_mult: f64,
    #[arg(long, default_value = "1,1,1")]
    pub spacing: Triple<f64>,
    #[arg(long)]
    pub out_v: PathBuf,
    #[arg(long)]
    pub out_d: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    /// Sample directory as written by `forge gen`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub level: LevelArg,
    /// Corruption seed; defaults to the sample's own corruption stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Destination directory; defaults to `<in>_<level>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Evaluation region; the whole volume when omitted.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Predicted segmentation for Dice.
    #[arg(long, requires = "target_seg")]
    pub pred_seg: Option<PathBuf>,
    /// Reference segmentation for Dice.
    #[arg(long, requires = "pred_seg")]
    pub target_seg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SnapshotArgs {
    #[arg(long)]
    pub p0: PathBuf,
    /// Velocity field; generated from `--seed` when omitted.
    #[arg(long, requires = "d")]
    pub v: Option<PathBuf>,
    /// Diffusion map; generated from `--seed` when omitted.
    #[arg(long, requires = "v")]
    pub d: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub domain: Option<PathBuf>,
    /// Comma-separated times, e.g. `0,5,10`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub times: Vec<f64>,
    /// Integration horizon; defaults to the largest requested time.
    #[arg(long)]
    pub tmax: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value = "64")]
    pub shape: Triple<usize>,
    #[arg(long, default_value = "1,1,1")]
    pub spacing: Triple<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LevelsArgs {
    /// Only this level.
    #[arg(long, value_enum)]
    pub level: Option<LevelArg>,
}

/// Runs a parsed command, printing JSON reports to stdout. Returns the
/// process exit code.
pub fn run(cli: Cli, invocation: Vec<String>) -> anyhow::Result<i32> {
    match cli.command {
        Command::Gen(a) => gen(a, invocation),
        Command::Transport(a) => transport_cmd(a),
        Command::Perlin(a) => perlin_cmd(a),
        Command::Fields(a) => fields_cmd(a),
        Command::Corrupt(a) => corrupt_cmd(a),
        Command::Metrics(a) => {
            emit(&serde_json::to_string_pretty(&metrics_report(&a)?)?)?;
            Ok(0)
        }
        Command::Snapshot(a) => snapshot_cmd(a),
        Command::Levels(a) => {
            emit(&levels_json(a.level.map(Into::into))?)?;
            Ok(0)
        }
        Command::Phantom(a) => {
            let labels = brain_phantom(Shape3(a.shape.0), Spacing3(a.spacing.0));
            write_volume(VolumeRef::Label(&labels), &a.out)?;
            Ok(0)
        }
    }
}

fn gen(a: GenArgs, invocation: Vec<String>) -> anyhow::Result<i32> {
    let (mut config, config_hash) = PipelineConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        config.master_seed = seed;
    }
    if let Some(out) = a.out {
        config.output_dir = out;
    }
    let workers = resolve_workers(a.workers)?;
    let manifest = run_pipeline(&config, &RunOptions { workers, invocation, config_hash })?;
    eprintln!(
        "forge gen: {} samples, {} failed, written to {}",
        manifest.total,
        manifest.failed,
        config.output_dir.display()
    );
    for s in manifest.samples.iter().filter(|s| s.error.is_some()) {
        eprintln!("  {}: {}", s.dir, s.error.as_deref().unwrap_or_default());
    }
    Ok(if manifest.all_ok() { 0 } else { 1 })
}

fn domain_or_full(path: Option<&Path>, like: &ScalarField3) -> anyhow::Result<Mask3> {
    match path {
        Some(p) => Ok(read_mask(p)?),
        None => Ok(Mask3::full(like.shape(), like.spacing())),
    }
}

fn transport_cmd(a: TransportArgs) -> anyhow::Result<i32> {
    let p0 = read_scalar(&a.p0)?;
    let fields = TransportFields::new(read_vector(&a.v)?, read_scalar(&a.d)?)?;
    let domain = domain_or_full(a.domain.as_deref(), &p0)?;
    let cfg = a.solver.config(a.tmax);
    let (p, report) = transport_with_snapshots(&p0, &fields, &domain, &cfg, &[], |_, _| {})?;
    write_volume(VolumeRef::Scalar(&p), &a.out)?;
    emit(&serde_json::to_string_pretty(&report)?)?;
    Ok(0)
}

fn perlin_cmd(a: PerlinArgs) -> anyhow::Result<i32> {
    let shape = Shape3(a.shape.0);
    let spacing = Spacing3(a.spacing.0);
    let params = PerlinParams { shape: lattice_shape(shape, a.res.0), res: a.res.0, tileable: [false; 3], seed: a.seed, percentile: None };
    let noise = perlin_noise_window(&params, [0; 3], shape)?.with_spacing(spacing)?;
    let out = match a.percentile {
        None => noise,
        Some(pct) => {
            let domain = match &a.domain {
                Some(p) => read_mask(p)?,
                None => Mask3::full(shape, spacing),
            };
            threshold_to_anomaly(&noise, pct, &domain)?.0
        }
    };
    write_volume(VolumeRef::Scalar(&out), &a.out)?;
    Ok(0)
}

fn fields_cmd(a: FieldsArgs) -> anyhow::Result<i32> {
    let params = FieldParams { perlin_res: a.res.0, v_multiplier: a.v_mult, d_multiplier: a.d_mult };
    let fields = generated_fields(Shape3(a.shape.0), Spacing3(a.spacing.0), &params, a.seed)?;
    write_volume(VolumeRef::Vector(&fields.velocity), &a.out_v)?;
    write_volume(VolumeRef::Scalar(&fields.diffusion), &a.out_d)?;
    emit(&serde_json::to_string_pretty(&json!({
        "max_speed": fields.velocity.max_norm(),
        "max_diffusion": fields.diffusion.max(),
    }))?)?;
    Ok(0)
}

/// Fields for a stand-alone command: velocity and diffusion streams are
/// split from `seed` the same way a sample splits its own seed.
fn generated_fields(shape: Shape3, spacing: Spacing3, params: &FieldParams, seed: u64) -> anyhow::Result<TransportFields> {
    let seeds = forge_core::sample::StreamSeeds::derive(seed);
    Ok(TransportFields::generate(shape, params, seeds.velocity, seeds.diffusion)?.with_spacing(spacing)?)
}

fn corrupt_cmd(a: CorruptArgs) -> anyhow::Result<i32> {
    let (record, provenance) = read_sample(&a.input).with_context(|| format!("reading sample {}", a.input.display()))?;
    if record.provenance.corruption.is_some() {
        bail!("{} is already corrupted", a.input.display());
    }
    let level: Severity = a.level.into();
    let seed = a.seed.unwrap_or(record.provenance.streams.corruption);
    let out_record = corrupt(&record, &CorruptionSettings::at(level), seed)?;
    let out = a.out.unwrap_or_else(|| {
        let name = a.input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "sample".into());
        a.input.with_file_name(format!("{name}_{}", level.name()))
    });
    write_sample(&out_record, &out)?;
    let prov = SampleProvenance { sample: out_record.provenance.clone(), ..provenance };
    let path = out.join("provenance.json");
    std::fs::write(&path, serde_json::to_string_pretty(&prov)?).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("forge corrupt: wrote {}", out.display());
    Ok(0)
}

/// `{l1, psnr, ssim, dice}`; an infinite PSNR is reported as `"inf"` and
/// Dice is `null` without segmentations.
pub fn metrics_report(a: &MetricsArgs) -> anyhow::Result<Value> {
    let pred = read_scalar(&a.pred)?;
    let target = read_scalar(&a.target)?;
    let mask = domain_or_full(a.mask.as_deref(), &pred)?;
    let psnr = metric_psnr(&pred, &target, &mask)?;
    let dice = match (&a.pred_seg, &a.target_seg) {
        (Some(p), Some(t)) => json!(metric_dice(&read_mask(p)?, &read_mask(t)?)?),
        _ => Value::Null,
    };
    Ok(json!({
        "l1": metric_l1(&pred, &target, &mask)?,
        "psnr": if psnr.is_infinite() { json!("inf") } else { json!(psnr) },
        "ssim": metric_ssim(&pred, &target, &mask)?,
        "dice": dice,
    }))
}

fn snapshot_cmd(a: SnapshotArgs) -> anyhow::Result<i32> {
    if a.times.is_empty() {
        bail!("--times needs at least one value");
    }
    let p0 = read_scalar(&a.p0)?;
    let domain = domain_or_full(a.domain.as_deref(), &p0)?;
    let fields = match (&a.v, &a.d) {
        (Some(v), Some(d)) => TransportFields::new(read_vector(v)?, read_scalar(d)?)?,
        _ => generated_fields(p0.shape(), p0.spacing(), &FieldParams::default(), a.seed)?,
    };
    let latest = a.times.iter().copied().fold(0.0, f64::max);
    let t_max = a.tmax.unwrap_or(latest);
    let cfg = a.solver.config(t_max);
    let mut index = 0;
    let mut written = Vec::new();
    let mut failure = None;
    transport_with_snapshots(&p0, &fields, &domain, &cfg, &a.times, |t, p| {
        if failure.is_none() {
            match export_snapshot(p, index, t, &a.out_dir) {
                Ok(paths) => written.extend(paths),
                Err(e) => failure = Some(e),
            }
        }
        index += 1;
    })?;
    if let Some(e) = failure {
        return Err(anyhow!(e));
    }
    emit(&serde_json::to_string_pretty(&json!({
        "times": a.times,
        "images": written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    }))?)?;
    Ok(0)
}

/// Prints a report on stdout. A closed pipe (`forge levels | head`) ends
/// the output quietly instead of failing.
fn emit(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Pretty JSON of the corruption table (or one level of it).
pub fn levels_json(level: Option<Severity>) -> anyhow::Result<String> {
    let table: Vec<CorruptionLevel> = match level {
        Some(l) => vec![CorruptionLevel::table(l)],
        None => level_table(),
    };
    Ok(serde_json::to_string_pretty(&table)?)
}
