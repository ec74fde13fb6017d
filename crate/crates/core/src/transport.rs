//! Forward advection-diffusion of a probability field.
//!
//! Semi-discretisation on the voxel grid:
//!
//! * advection `−V·∇P` with first-order upwind differences,
//! * diffusion `∇·(D∇P)` in flux form with face diffusivity equal to the
//!   arithmetic mean of the two adjacent voxels,
//! * zero-flux (zero-Neumann) conditions on the boundary of the domain mask:
//!   an upwind difference that would read outside the domain uses the centre
//!   value, and diffusive faces that cross the boundary carry no flux.
//!
//! Time integration is either forward Euler at the CFL-limited step or an
//! adaptive Dormand-Prince 5(4) pair whose step is also capped by the CFL
//! bound.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::fields::TransportFields;
use crate::math;
use crate::volume::{Mask3, ScalarField3, Shape3, Spacing3, VectorField3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    FixedEuler,
    AdaptiveRk45,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub t_max: f64,
    pub cfl_safety: f64,
    pub stepper: Stepper,
    pub atol: f64,
    pub rtol: f64,
    pub clamp_each_step: bool,
    /// Abort after this many attempted steps.
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            t_max: 10.0,
            cfl_safety: 0.9,
            stepper: Stepper::AdaptiveRk45,
            atol: 1e-6,
            rtol: 1e-4,
            clamp_each_step: true,
            max_steps: 100_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(Error::param(format!("t_max must be finite and >= 0, got {}", self.t_max)));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::param(format!("cfl_safety must lie in (0, 1], got {}", self.cfl_safety)));
        }
        if !(self.atol > 0.0 && self.rtol >= 0.0) {
            return Err(Error::param("rk tolerances must be positive"));
        }
        Ok(())
    }
}

/// Counters from one integration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TransportReport {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
    pub final_time: f64,
}

/// Precomputed spatial operator: `rhs = advection + diffusion`.
struct Operator<'a> {
    shape: Shape3,
    strides: [usize; 3],
    inv_h: [f64; 3],
    domain: &'a [bool],
    velocity: Option<[&'a [f64]; 3]>,
    /// `face[a][idx] = D̄ / h²` for the face between `idx` and `idx + stride[a]`;
    /// zero if that face leaves the grid or the domain.
    face: Option<[Vec<f64>; 3]>,
}

impl<'a> Operator<'a> {
    fn new(
        velocity: Option<&'a VectorField3>,
        diffusion: Option<&'a ScalarField3>,
        domain: &'a Mask3,
        spacing: Spacing3,
    ) -> Self {
        let shape = domain.shape();
        let strides = shape.strides();
        let h = spacing.0;
        let dom = domain.data();
        let velocity = velocity
            .filter(|v| v.max_abs() > 0.0)
            .map(|v| [v.component(0).data(), v.component(1).data(), v.component(2).data()]);
        let face = diffusion.filter(|d| d.max() > 0.0).map(|d| {
            let d = d.data();
            core::array::from_fn(|a| {
                let mut c = vec![0.0; shape.len()];
                let s = strides[a];
                let n = shape[a];
                for (idx, slot) in c.iter_mut().enumerate() {
                    if shape.coords(idx)[a] + 1 < n && dom[idx] && dom[idx + s] {
                        *slot = 0.5 * (d[idx] + d[idx + s]) / (h[a] * h[a]);
                    }
                }
                c
            })
        });
        Self {
            shape,
            strides,
            inv_h: [1.0 / h[0], 1.0 / h[1], 1.0 / h[2]],
            domain: dom,
            velocity,
            face,
        }
    }

    fn is_trivial(&self) -> bool {
        self.velocity.is_none() && self.face.is_none()
    }

    /// Writes the right-hand side for state `p` into `out`.
    fn apply(&self, p: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        if self.velocity.is_some() {
            self.add_advection(p, out);
        }
        if self.face.is_some() {
            self.add_diffusion(p, out);
        }
    }

    fn add_advection(&self, p: &[f64], out: &mut [f64]) {
        let Some(vel) = self.velocity else { return };
        let [nx, ny, nz] = self.shape.0;
        let dom = self.domain;
        let n = [nx, ny, nz];
        for i in 0..nx {
            for j in 0..ny {
                let row = self.shape.index(i, j, 0);
                for k in 0..nz {
                    let idx = row + k;
                    if !dom[idx] {
                        continue;
                    }
                    let c = [i, j, k];
                    let center = p[idx];
                    let mut acc = 0.0;
                    for a in 0..3 {
                        let v = vel[a][idx];
                        let s = self.strides[a];
                        let diff = if v > 0.0 {
                            let up = if c[a] > 0 && dom[idx - s] { p[idx - s] } else { center };
                            center - up
                        } else if v < 0.0 {
                            let down = if c[a] + 1 < n[a] && dom[idx + s] { p[idx + s] } else { center };
                            down - center
                        } else {
                            continue;
                        };
                        acc += v * diff * self.inv_h[a];
                    }
                    out[idx] -= acc;
                }
            }
        }
    }

    fn add_diffusion(&self, p: &[f64], out: &mut [f64]) {
        let Some(face) = &self.face else { return };
        let len = p.len();
        for a in 0..3 {
            let s = self.strides[a];
            let c = &face[a];
            for idx in 0..len - s.min(len) {
                let w = c[idx];
                if w != 0.0 {
                    let flux = w * (p[idx + s] - p[idx]);
                    out[idx] += flux;
                    out[idx + s] -= flux;
                }
            }
        }
    }
}

fn checked_inputs(p: &ScalarField3, velocity: Option<&VectorField3>, diffusion: Option<&ScalarField3>, domain: &Mask3) -> Result<()> {
    check_shape("transport domain", p.shape(), domain.shape())?;
    if let Some(v) = velocity {
        check_shape("transport velocity", p.shape(), v.shape())?;
    }
    if let Some(d) = diffusion {
        check_shape("transport diffusion", p.shape(), d.shape())?;
        if let Some(idx) = d.data().iter().position(|v| !(*v >= 0.0)) {
            return Err(Error::invariant(format!(
                "diffusion must be non-negative; voxel {:?} holds {}",
                d.shape().coords(idx),
                d.data()[idx]
            )));
        }
    }
    Ok(())
}

/// `−Σᵢ Vᵢ · (upwind ∂ᵢP)` inside the domain, zero outside.
pub fn advection_rhs(p: &ScalarField3, velocity: &VectorField3, domain: &Mask3) -> Result<ScalarField3> {
    checked_inputs(p, Some(velocity), None, domain)?;
    let op = Operator::new(Some(velocity), None, domain, p.spacing());
    let mut out = ScalarField3::zeros(p.shape(), p.spacing());
    op.apply(p.data(), out.data_mut());
    Ok(out)
}

/// `Σᵢ (F_{i+½} − F_{i−½}) / hᵢ` with `F = D̄ (P_{i+1} − P_i) / hᵢ`.
pub fn diffusion_rhs(p: &ScalarField3, diffusion: &ScalarField3, domain: &Mask3) -> Result<ScalarField3> {
    checked_inputs(p, None, Some(diffusion), domain)?;
    let op = Operator::new(None, Some(diffusion), domain, p.spacing());
    let mut out = ScalarField3::zeros(p.shape(), p.spacing());
    op.apply(p.data(), out.data_mut());
    Ok(out)
}

/// CFL-limited step: `safety / max(Σ|Vᵢ|/hᵢ + 2D Σ 1/hᵢ²)`, or `t_max` when
/// nothing moves.
pub fn stable_dt(velocity: &VectorField3, diffusion: &ScalarField3, spacing: Spacing3, cfl_safety: f64, t_max: f64) -> f64 {
    let h = spacing.0;
    let inv_h2: f64 = h.iter().map(|x| 1.0 / (x * x)).sum();
    let [vx, vy, vz] = velocity.components();
    let d = diffusion.data();
    let mut worst = 0.0f64;
    for idx in 0..d.len() {
        let adv = vx.data()[idx].abs() / h[0] + vy.data()[idx].abs() / h[1] + vz.data()[idx].abs() / h[2];
        worst = worst.max(adv + 2.0 * d[idx] * inv_h2);
    }
    if worst > 0.0 {
        cfl_safety / worst
    } else {
        t_max
    }
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Fifth minus fourth order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const GROW_MAX: f64 = 5.0;
const SHRINK_MIN: f64 = 0.2;
const CONTROLLER_SAFETY: f64 = 0.9;

/// Clamps into `[0, 1]`; returns whether anything changed.
fn clamp_unit(p: &mut [f64]) -> bool {
    let mut changed = false;
    for v in p.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
            changed = true;
        } else if *v > 1.0 {
            *v = 1.0;
            changed = true;
        }
    }
    changed
}

fn check_finite(p: &[f64], step: usize, time: f64) -> Result<()> {
    match p.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(idx) => Err(Error::NumericalInstability {
            step,
            time,
            detail: format!("non-finite value {} at flat index {idx}", p[idx]),
        }),
    }
}

/// Integrates `dP/dt = −V·∇P + ∇·(D∇P)` from 0 to `cfg.t_max`.
pub fn transport(p0: &ScalarField3, fields: &TransportFields, domain: &Mask3, cfg: &SolverConfig) -> Result<ScalarField3> {
    Ok(transport_with_snapshots(p0, fields, domain, cfg, &[], |_, _| {})?.0)
}

/// As [`transport`], additionally landing exactly on every time in `stops`
/// (each in `[0, t_max]`) and handing the state there to `on_stop`.
///
/// The step sequence up to a stop is the same as for a fresh run whose
/// `t_max` equals that stop, so the two states agree.
pub fn transport_with_snapshots(
    p0: &ScalarField3,
    fields: &TransportFields,
    domain: &Mask3,
    cfg: &SolverConfig,
    stops: &[f64],
    mut on_stop: impl FnMut(f64, &ScalarField3),
) -> Result<(ScalarField3, TransportReport)> {
    cfg.validate()?;
    checked_inputs(p0, Some(&fields.velocity), Some(&fields.diffusion), domain)?;
    p0.check_probability("initial anomaly P0")?;
    if let Some(idx) = p0
        .data()
        .iter()
        .zip(domain.data())
        .position(|(&v, &m)| !m && v != 0.0)
    {
        return Err(Error::invariant(format!(
            "P0 must be zero outside the domain; voxel {:?} holds {}",
            p0.shape().coords(idx),
            p0.data()[idx]
        )));
    }
    let mut stops: Vec<f64> = stops.to_vec();
    for &s in &stops {
        if !(s >= 0.0 && s <= cfg.t_max) {
            return Err(Error::param(format!("snapshot time {s} outside [0, {}]", cfg.t_max)));
        }
    }
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let spacing = p0.spacing();
    let op = Operator::new(Some(&fields.velocity), Some(&fields.diffusion), domain, spacing);
    let dt_cfl = stable_dt(&fields.velocity, &fields.diffusion, spacing, cfg.cfl_safety, cfg.t_max);

    let mut state = p0.clone();
    let mut report = TransportReport::default();
    let mut stop_iter = stops.into_iter().peekable();
    while stop_iter.peek() == Some(&0.0) {
        on_stop(0.0, &state);
        stop_iter.next();
    }
    if cfg.t_max == 0.0 {
        return Ok((state, report));
    }
    if op.is_trivial() {
        // Zero right-hand side: the state is stationary.
        for s in stop_iter {
            on_stop(s, &state);
        }
        report.final_time = cfg.t_max;
        report.accepted_steps = 1;
        return Ok((state, report));
    }

    match cfg.stepper {
        Stepper::FixedEuler => integrate_euler(&op, &mut state, cfg, dt_cfl, &mut stop_iter, &mut on_stop, &mut report)?,
        Stepper::AdaptiveRk45 => integrate_rk45(&op, &mut state, cfg, dt_cfl, &mut stop_iter, &mut on_stop, &mut report)?,
    }
    Ok((state, report))
}

fn next_target(stops: &mut core::iter::Peekable<alloc::vec::IntoIter<f64>>, t_max: f64) -> f64 {
    stops.peek().copied().unwrap_or(t_max)
}

fn integrate_euler(
    op: &Operator<'_>,
    state: &mut ScalarField3,
    cfg: &SolverConfig,
    dt_cfl: f64,
    stops: &mut core::iter::Peekable<alloc::vec::IntoIter<f64>>,
    on_stop: &mut impl FnMut(f64, &ScalarField3),
    report: &mut TransportReport,
) -> Result<()> {
    let mut rhs = vec![0.0; state.data().len()];
    let mut t = 0.0;
    while t < cfg.t_max {
        if report.accepted_steps >= cfg.max_steps {
            return Err(Error::NumericalInstability {
                step: report.accepted_steps,
                time: t,
                detail: "step limit reached".into(),
            });
        }
        let target = next_target(stops, cfg.t_max);
        let (dt, lands) = if t + dt_cfl >= target { (target - t, true) } else { (dt_cfl, false) };
        op.apply(state.data(), &mut rhs);
        report.rhs_evaluations += 1;
        for (p, r) in state.data_mut().iter_mut().zip(&rhs) {
            *p += dt * r;
        }
        if cfg.clamp_each_step {
            clamp_unit(state.data_mut());
        }
        report.accepted_steps += 1;
        check_finite(state.data(), report.accepted_steps, t + dt)?;
        t = if lands { target } else { t + dt };
        if lands && stops.peek() == Some(&target) {
            on_stop(target, state);
            stops.next();
        }
    }
    report.final_time = t;
    Ok(())
}

fn integrate_rk45(
    op: &Operator<'_>,
    state: &mut ScalarField3,
    cfg: &SolverConfig,
    dt_cfl: f64,
    stops: &mut core::iter::Peekable<alloc::vec::IntoIter<f64>>,
    on_stop: &mut impl FnMut(f64, &ScalarField3),
    report: &mut TransportReport,
) -> Result<()> {
    let n = state.data().len();
    let mut k: [Vec<f64>; 7] = core::array::from_fn(|_| vec![0.0; n]);
    let mut stage = vec![0.0; n];
    let mut next = vec![0.0; n];

    let mut t = 0.0;
    let mut h = dt_cfl;
    let mut k1_valid = false;
    let mut attempts = 0usize;

    while t < cfg.t_max {
        attempts += 1;
        if attempts > cfg.max_steps {
            return Err(Error::NumericalInstability {
                step: report.accepted_steps,
                time: t,
                detail: "step limit reached".into(),
            });
        }
        let target = next_target(stops, cfg.t_max);
        let (step, lands) = if t + h >= target { (target - t, true) } else { (h, false) };
        let y = state.data();

        if !k1_valid {
            op.apply(y, &mut k[0]);
            report.rhs_evaluations += 1;
        }
        let stage_rows: [&[f64]; 5] = [&[A21], &[A31, A32], &[A41, A42, A43], &[A51, A52, A53, A54], &[A61, A62, A63, A64, A65]];
        for (s, row) in stage_rows.iter().enumerate() {
            for i in 0..n {
                let mut acc = 0.0;
                for (c, kk) in row.iter().zip(k.iter()) {
                    acc += c * kk[i];
                }
                stage[i] = y[i] + step * acc;
            }
            let (head, tail) = k.split_at_mut(s + 1);
            let _ = head;
            op.apply(&stage, &mut tail[0]);
            report.rhs_evaluations += 1;
        }
        for i in 0..n {
            next[i] = y[i] + step * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
        }
        op.apply(&next, &mut k[6]);
        report.rhs_evaluations += 1;

        let mut err_norm = 0.0f64;
        for i in 0..n {
            let e = step * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            let scale = cfg.atol + cfg.rtol * y[i].abs().max(next[i].abs());
            err_norm = err_norm.max(e.abs() / scale);
        }
        if !err_norm.is_finite() {
            return Err(Error::NumericalInstability {
                step: report.accepted_steps,
                time: t,
                detail: "non-finite error estimate".into(),
            });
        }

        if err_norm <= 1.0 {
            let changed = if cfg.clamp_each_step { clamp_unit(&mut next) } else { false };
            state.data_mut().copy_from_slice(&next);
            report.accepted_steps += 1;
            check_finite(state.data(), report.accepted_steps, t + step)?;
            t = if lands { target } else { t + step };
            // First-same-as-last: k7 is the derivative at the new state unless
            // clamping moved it.
            if changed {
                k1_valid = false;
            } else {
                k.swap(0, 6);
                k1_valid = true;
            }
            let factor = if err_norm == 0.0 {
                GROW_MAX
            } else {
                (CONTROLLER_SAFETY * math::powf(err_norm, -0.2)).clamp(SHRINK_MIN, GROW_MAX)
            };
            // A step truncated to land on a stop does not shrink the proposal.
            let base = if lands { h.max(step) } else { step };
            h = (base * factor).min(dt_cfl);
            if lands && stops.peek() == Some(&target) {
                on_stop(target, state);
                stops.next();
            }
        } else {
            report.rejected_steps += 1;
            let factor = (CONTROLLER_SAFETY * math::powf(err_norm, -0.2)).clamp(SHRINK_MIN, 1.0);
            h = step * factor;
            k1_valid = true;
        }
    }
    report.final_time = t;
    Ok(())
}
