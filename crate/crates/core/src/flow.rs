//! Ricci flow, normalized Ricci flow and the projected Ricci flow as ODEs on metric
//! coefficients, integrated with an embedded Dormand-Prince 5(4) pair.

use serde::Serialize;

use crate::algebra::{HomogeneousSpace, InvariantBasis};
use crate::curvature;
use crate::error::{input, Error, Result};
use crate::linalg::{self, Mat};

pub const POS_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Adaptive step with the embedded 4th-order error estimate.
    Dopri5,
    /// Fixed step of the given size, no error control.
    Dopri5Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub initial_step: f64,
    pub max_steps: usize,
    /// Positivity margin for stopping.
    pub pos_tol: f64,
    /// Stop once the distance to the fixed point falls to this value (projected flow only).
    pub fixed_point_tol: Option<f64>,
    /// Required together with `fixed_point_tol`: fiber diameter bound at the stop.
    pub fiber_tol: Option<f64>,
    /// Stop once the distance to the fixed point exceeds this value (projected flow only).
    pub divergence_tol: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Dopri5,
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            max_step: 0.1,
            initial_step: 1e-3,
            max_steps: 1_000_000,
            pos_tol: POS_TOL,
            fixed_point_tol: None,
            fiber_tol: None,
            divergence_tol: None,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.max_step > 0.0 && self.initial_step > 0.0 && self.pos_tol >= 0.0;
        if !ok {
            return input("integrator tolerances and step sizes must be positive");
        }
        if let Method::Dopri5Fixed(h) = self.method {
            if !(h > 0.0 && h.is_finite()) {
                return input("fixed step must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Horizon,
    PositivityLoss,
    FixedPoint,
    Divergence,
    MaxSteps,
}

/// What the step hook tells the driver after an accepted step.
pub enum StepControl {
    Continue,
    /// Stop and keep the new state.
    StopKeep(StopReason),
    /// Stop and discard the new state.
    StopDiscard(StopReason),
}

pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stop: StopReason,
    pub accepted: usize,
    pub rejected: usize,
}

// Dormand-Prince 5(4) tableau
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// One Dormand-Prince step; returns the 5th-order state and the error estimate.
fn dopri_step<F>(f: &F, t: f64, y: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    let n = y.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    for s in 0..7 {
        let mut ys = y.to_vec();
        for (j, kj) in k.iter().enumerate() {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..n {
                    ys[i] += h * a * kj[i];
                }
            }
        }
        k.push(f(t + C[s] * h, &ys)?);
    }
    let mut y5 = y.to_vec();
    let mut err = vec![0.0; n];
    for s in 0..7 {
        for i in 0..n {
            y5[i] += h * B5[s] * k[s][i];
            err[i] += h * (B5[s] - B4[s]) * k[s][i];
        }
    }
    Ok((y5, err))
}

/// Integrate `y' = f(t, y)` from `t0` to `t1` (either direction). `hook` runs after each
/// accepted step and may rescale the state or stop the integration.
pub fn integrate<F, H>(f: F, y0: &[f64], t0: f64, t1: f64, cfg: &IntegratorConfig, mut hook: H) -> Result<OdeSolution>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
    H: FnMut(f64, &mut Vec<f64>) -> Result<StepControl>,
{
    cfg.validate()?;
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut sol = OdeSolution { times: vec![t0], states: vec![y.clone()], stop: StopReason::Horizon, accepted: 0, rejected: 0 };
    let span = (t1 - t0).abs();
    if span == 0.0 {
        return Ok(sol);
    }
    let mut h = match cfg.method {
        Method::Dopri5 => cfg.initial_step.min(cfg.max_step),
        Method::Dopri5Fixed(h) => h,
    };
    let integration_error = |t: f64, reason: String, y: &[f64]| Error::Integration { t, reason, last_state: y.to_vec() };
    loop {
        let remaining = (t1 - t) * dir;
        if remaining <= 1e-14 * span.max(1.0) {
            sol.stop = StopReason::Horizon;
            return Ok(sol);
        }
        if sol.accepted >= cfg.max_steps {
            sol.stop = StopReason::MaxSteps;
            return Ok(sol);
        }
        let step = h.min(remaining);
        let (ynew, err) = match dopri_step(&f, t, &y, dir * step) {
            Ok(v) => v,
            Err(e) => return Err(integration_error(t, format!("right-hand side failed: {e}"), &y)),
        };
        if ynew.iter().any(|v| !v.is_finite()) {
            if let Method::Dopri5Fixed(_) = cfg.method {
                return Err(integration_error(t, "non-finite state".into(), &y));
            }
            h = step * 0.2;
            sol.rejected += 1;
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(integration_error(t, "step size underflow".into(), &y));
            }
            continue;
        }
        let accept = match cfg.method {
            Method::Dopri5Fixed(_) => true,
            Method::Dopri5 => {
                let mut s = 0.0;
                for i in 0..y.len() {
                    let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(ynew[i].abs());
                    s += (err[i] / sc).powi(2);
                }
                let en = (s / y.len().max(1) as f64).sqrt();
                let factor = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
                let ok = en <= 1.0;
                h = (step * factor).min(cfg.max_step);
                if !ok {
                    sol.rejected += 1;
                    if h < 1e-14 * t.abs().max(1.0) {
                        return Err(integration_error(t, "step size underflow".into(), &y));
                    }
                }
                ok
            }
        };
        if !accept {
            continue;
        }
        let tnew = if step == remaining { t1 } else { t + dir * step };
        let mut ynew = ynew;
        match hook(tnew, &mut ynew) {
            Ok(StepControl::Continue) => {}
            Ok(StepControl::StopKeep(r)) => {
                sol.accepted += 1;
                sol.times.push(tnew);
                sol.states.push(ynew);
                sol.stop = r;
                return Ok(sol);
            }
            Ok(StepControl::StopDiscard(r)) => {
                sol.stop = r;
                return Ok(sol);
            }
            Err(e) => return Err(integration_error(tnew, e.to_string(), &y)),
        }
        sol.accepted += 1;
        t = tnew;
        y = ynew;
        sol.times.push(t);
        sol.states.push(y.clone());
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Ricci,
    Normalized,
    Projected,
}

impl FlowKind {
    pub fn tag(self) -> &'static str {
        match self {
            FlowKind::Ricci => "rf",
            FlowKind::Normalized => "nrf",
            FlowKind::Projected => "prf",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepDiagnostics {
    pub scal: f64,
    /// `det P` for the Ricci and normalized flows, `⟨⟨P, P⟩⟩` for the projected flow.
    pub norm: f64,
    /// Smallest eigenvalue of the vertical block (of all of `P` without a toral split).
    pub min_eig_t: f64,
    pub fiber_diameter: f64,
    pub rho: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowTrajectory {
    pub kind: FlowKind,
    pub times: Vec<f64>,
    /// Coefficients in the orthonormal basis used by the flow.
    pub states: Vec<Vec<f64>>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub stop: StopReason,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl FlowTrajectory {
    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one time")
    }
}

fn vertical_stats(space: &HomogeneousSpace, p: &Mat) -> (f64, f64) {
    if space.has_toral_split() {
        let (pt, _) = space.split_blocks(p);
        let ev = linalg::sym_eigenvalues(&pt);
        let lo = ev.first().copied().unwrap_or(0.0);
        let hi = ev.last().copied().unwrap_or(0.0);
        (lo, hi.max(0.0).sqrt())
    } else {
        (linalg::min_eigenvalue(p), 0.0)
    }
}

fn metric_diagnostics(space: &HomogeneousSpace, p: &Mat) -> Result<StepDiagnostics> {
    let s = curvature::scal(space, p)?;
    let (min_eig_t, fiber_diameter) = vertical_stats(space, p);
    Ok(StepDiagnostics {
        scal: s,
        norm: p.determinant(),
        min_eig_t: if space.has_toral_split() { min_eig_t } else { linalg::min_eigenvalue(p) },
        fiber_diameter,
        rho: s / space.dim_m() as f64,
    })
}

fn horizon_end(t0: f64, horizon: f64, direction: Direction) -> Result<f64> {
    if !(horizon.is_finite() && horizon >= 0.0) {
        return input("time horizon must be finite and non-negative");
    }
    Ok(t0 + direction.sign() * horizon)
}

fn check_coeffs(basis: &InvariantBasis, x: &[f64]) -> Result<()> {
    if x.len() != basis.len() {
        return input(format!("expected {} coefficients, got {}", basis.len(), x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return input("coefficients must be finite");
    }
    Ok(())
}

/// `P' = −2 Ric(P)` on coefficients of `basis`.
pub fn ricci_flow(space: &HomogeneousSpace, basis: &InvariantBasis, x0: &[f64], cfg: &IntegratorConfig, direction: Direction, t0: f64, horizon: f64) -> Result<FlowTrajectory> {
    check_coeffs(basis, x0)?;
    let p0 = basis.matrix(x0);
    if linalg::min_eigenvalue(&p0) <= cfg.pos_tol {
        return input("initial metric is not positive definite");
    }
    let rhs = |_t: f64, x: &[f64]| -> Result<Vec<f64>> {
        let ric = curvature::ricci(space, &basis.matrix(x))?;
        Ok(basis.coefficients(&ric).iter().map(|v| -2.0 * v).collect())
    };
    let hook = |_t: f64, x: &mut Vec<f64>| -> Result<StepControl> {
        if linalg::min_eigenvalue(&basis.matrix(x)) <= cfg.pos_tol {
            return Ok(StepControl::StopDiscard(StopReason::PositivityLoss));
        }
        Ok(StepControl::Continue)
    };
    let sol = integrate(rhs, x0, t0, horizon_end(t0, horizon, direction)?, cfg, hook)?;
    finish(FlowKind::Ricci, sol, |x| metric_diagnostics(space, &basis.matrix(x)))
}

fn finish(kind: FlowKind, sol: OdeSolution, diag: impl Fn(&[f64]) -> Result<StepDiagnostics>) -> Result<FlowTrajectory> {
    let diagnostics = sol.states.iter().map(|x| diag(x)).collect::<Result<Vec<_>>>()?;
    Ok(FlowTrajectory {
        kind,
        times: sol.times,
        states: sol.states,
        diagnostics,
        stop: sol.stop,
        accepted_steps: sol.accepted,
        rejected_steps: sol.rejected,
    })
}

/// `P' = −2 Ric⁰(P)` on unit-volume metrics, rescaled to `det P = 1` after each step.
pub fn normalized_flow(space: &HomogeneousSpace, basis: &InvariantBasis, x0: &[f64], cfg: &IntegratorConfig, direction: Direction, t0: f64, horizon: f64) -> Result<FlowTrajectory> {
    check_coeffs(basis, x0)?;
    let p0 = basis.matrix(x0);
    if linalg::min_eigenvalue(&p0) <= cfg.pos_tol {
        return input("initial metric is not positive definite");
    }
    if (p0.determinant() - 1.0).abs() > 1e-8 {
        return input("normalized flow needs a unit-volume initial metric");
    }
    let m = space.dim_m() as f64;
    let rhs = |_t: f64, x: &[f64]| -> Result<Vec<f64>> {
        let ric0 = curvature::traceless_ricci(space, &basis.matrix(x))?;
        Ok(basis.coefficients(&ric0).iter().map(|v| -2.0 * v).collect())
    };
    let hook = |_t: f64, x: &mut Vec<f64>| -> Result<StepControl> {
        let p = basis.matrix(x);
        if linalg::min_eigenvalue(&p) <= cfg.pos_tol {
            return Ok(StepControl::StopDiscard(StopReason::PositivityLoss));
        }
        let c = p.determinant().powf(-1.0 / m);
        x.iter_mut().for_each(|v| *v *= c);
        Ok(StepControl::Continue)
    };
    let sol = integrate(rhs, x0, t0, horizon_end(t0, horizon, direction)?, cfg, hook)?;
    finish(FlowKind::Normalized, sol, |x| metric_diagnostics(space, &basis.matrix(x)))
}

/// The base Einstein metric and the inner product used by the projected flow.
#[derive(Clone, Debug)]
pub struct ProjectedFlowContext {
    pub base_metric: Mat,
    pub lambda: f64,
    pub einstein_residual: f64,
    weight: Mat,
    dim_n: usize,
}

impl ProjectedFlowContext {
    /// Build from a unit-volume Einstein metric on the base (in its `m`-frame, which is the
    /// `n`-frame of the total space).
    pub fn new(space: &HomogeneousSpace, base: &HomogeneousSpace, pbar: &Mat) -> Result<Self> {
        if !space.has_toral_split() {
            return input("projected flow needs a toral split");
        }
        if pbar.nrows() != space.dim_n() || pbar.ncols() != space.dim_n() {
            return input("base metric has the wrong size");
        }
        let ric0 = curvature::traceless_ricci(base, pbar)?;
        let resid = ric0.norm();
        if resid > 1e-8 {
            return input(format!("base metric is not Einstein (|Ric⁰| = {resid:e})"));
        }
        let det = pbar.determinant();
        if (det - 1.0).abs() > 1e-8 {
            return input(format!("base metric must have unit volume (det = {det})"));
        }
        let lambda = curvature::scal(base, pbar)? / space.dim_n() as f64;
        if lambda <= 0.0 {
            return input("Einstein constant must be positive");
        }
        let weight = linalg::direct_sum(&Mat::identity(space.dim_t(), space.dim_t()), &linalg::spd_inverse(pbar)?);
        Ok(Self { base_metric: pbar.clone(), lambda, einstein_residual: resid, weight, dim_n: space.dim_n() })
    }

    /// `⟨⟨B1, B2⟩⟩ = (1/dim N) tr(W B1 W B2)` with `W = Id_t ⊕ P̄⁻¹`.
    pub fn inner(&self, b1: &Mat, b2: &Mat) -> f64 {
        linalg::trace_product(&(&self.weight * b1), &(&self.weight * b2)) / self.dim_n as f64
    }

    /// The collapsed fixed point `0 ⊕ P̄`.
    pub fn fixed_point(&self) -> Mat {
        let t = self.weight.nrows() - self.dim_n;
        linalg::direct_sum(&Mat::zeros(t, t), &self.base_metric)
    }

    pub fn distance(&self, p: &Mat) -> f64 {
        let d = p - self.fixed_point();
        self.inner(&d, &d).max(0.0).sqrt()
    }

    /// `ρ = ⟨⟨Ric, P⟩⟩ / ⟨⟨P, P⟩⟩`.
    pub fn rho(&self, ric: &Mat, p: &Mat) -> f64 {
        self.inner(ric, p) / self.inner(p, p)
    }

    /// `R = Ric − ρ P`.
    pub fn projected_ricci(&self, ric: &Mat, p: &Mat) -> Mat {
        ric - p * self.rho(ric, p)
    }
}

fn submersion_ricci(space: &HomogeneousSpace, p: &Mat) -> Result<Mat> {
    let (pt, pn) = space.split_blocks(p);
    curvature::ricci_submersion(space, &pt, &pn)
}

/// `P' = −2 R(P)` on generalized submersion metrics (coefficients of a submersion basis),
/// renormalized to `⟨⟨P, P⟩⟩ = 1` after each step.
#[allow(clippy::too_many_arguments)]
pub fn projected_flow(
    space: &HomogeneousSpace,
    base: &HomogeneousSpace,
    basis: &InvariantBasis,
    ctx: &ProjectedFlowContext,
    x0: &[f64],
    cfg: &IntegratorConfig,
    direction: Direction,
    horizon: f64,
) -> Result<FlowTrajectory> {
    projected_flow_corrected(space, base, basis, ctx, x0, cfg, direction, horizon, &|_: &mut [f64]| {})
}

/// As [`projected_flow`], with `correct` applied to the state after every accepted step and
/// before renormalization.
#[allow(clippy::too_many_arguments)]
pub fn projected_flow_corrected(
    space: &HomogeneousSpace,
    base: &HomogeneousSpace,
    basis: &InvariantBasis,
    ctx: &ProjectedFlowContext,
    x0: &[f64],
    cfg: &IntegratorConfig,
    direction: Direction,
    horizon: f64,
    correct: &dyn Fn(&mut [f64]),
) -> Result<FlowTrajectory> {
    check_coeffs(basis, x0)?;
    let p0 = basis.matrix(x0);
    let n0 = ctx.inner(&p0, &p0);
    if (n0 - 1.0).abs() > 1e-10 {
        return input(format!("initial metric must lie on the unit sphere (norm {n0})"));
    }
    let (_, pn0) = space.split_blocks(&p0);
    if linalg::min_eigenvalue(&pn0) <= 0.0 {
        return input("horizontal block of the initial metric must be positive definite");
    }
    let rhs = |_t: f64, x: &[f64]| -> Result<Vec<f64>> {
        let p = basis.matrix(x);
        let ric = submersion_ricci(space, &p)?;
        let r = ctx.projected_ricci(&ric, &p);
        Ok(basis.coefficients(&r).iter().map(|v| -2.0 * v).collect())
    };
    let hook = |_t: f64, x: &mut Vec<f64>| -> Result<StepControl> {
        correct(x);
        let p = basis.matrix(x);
        let (pt, pn) = space.split_blocks(&p);
        if linalg::min_eigenvalue(&pn) <= 0.0 {
            return Err(Error::Input("horizontal block became singular".into()));
        }
        if linalg::min_eigenvalue(&pt) < -cfg.pos_tol {
            return Ok(StepControl::StopDiscard(StopReason::PositivityLoss));
        }
        let c = 1.0 / ctx.inner(&p, &p).sqrt();
        x.iter_mut().for_each(|v| *v *= c);
        let p = &p * c;
        let dist = ctx.distance(&p);
        if let Some(tol) = cfg.divergence_tol {
            if dist > tol {
                return Ok(StepControl::StopKeep(StopReason::Divergence));
            }
        }
        if let Some(tol) = cfg.fixed_point_tol {
            let fiber_ok = match cfg.fiber_tol {
                Some(ft) => vertical_stats(space, &p).1 <= ft,
                None => true,
            };
            if dist <= tol && fiber_ok {
                return Ok(StepControl::StopKeep(StopReason::FixedPoint));
            }
        }
        Ok(StepControl::Continue)
    };
    let sol = integrate(rhs, x0, 0.0, horizon_end(0.0, horizon, direction)?, cfg, hook)?;
    finish(FlowKind::Projected, sol, |x| projected_diagnostics(space, base, ctx, &basis.matrix(x)))
}

pub fn projected_diagnostics(space: &HomogeneousSpace, base: &HomogeneousSpace, ctx: &ProjectedFlowContext, p: &Mat) -> Result<StepDiagnostics> {
    let (pt, pn) = space.split_blocks(p);
    let ric = submersion_ricci(space, p)?;
    let (min_eig_t, fiber_diameter) = vertical_stats(space, p);
    Ok(StepDiagnostics {
        scal: curvature::scal_submersion(space, base, &pt, &pn)?,
        norm: ctx.inner(p, p),
        min_eig_t,
        fiber_diameter,
        rho: ctx.rho(&ric, p),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RicciTime {
    pub sigma: Vec<f64>,
    pub s: Vec<f64>,
    /// Least-squares slope of `log σ` against `t` over the far half of the trajectory.
    pub log_sigma_slope: Option<f64>,
    pub s_monotone: bool,
}

/// Undo the projection: `σ = exp(−2∫ρ)`, `s = ∫σ`, and `σ(t) P(t)` solves the Ricci flow in time `s`.
pub fn reconstruct_ricci_time(traj: &FlowTrajectory) -> RicciTime {
    let n = traj.times.len();
    let mut log_sigma = vec![0.0; n];
    let mut s = vec![0.0; n];
    for i in 1..n {
        let dt = traj.times[i] - traj.times[i - 1];
        log_sigma[i] = log_sigma[i - 1] - dt * (traj.diagnostics[i].rho + traj.diagnostics[i - 1].rho);
        s[i] = s[i - 1] + 0.5 * dt * (log_sigma[i].exp() + log_sigma[i - 1].exp());
    }
    let sigma: Vec<f64> = log_sigma.iter().map(|v| v.exp()).collect();
    let dir = if n > 1 && traj.times[n - 1] < traj.times[0] { -1.0 } else { 1.0 };
    let s_monotone = s.windows(2).all(|w| (w[1] - w[0]) * dir >= 0.0);
    let half = n / 2;
    let log_sigma_slope = linalg::fit_slope(&traj.times[half..], &log_sigma[half..]);
    RicciTime { sigma, s, log_sigma_slope, s_monotone }
}

/// Finite-difference Jacobian of the normalized-flow vector field at `x`, in basis coefficients.
pub fn normalized_flow_jacobian(space: &HomogeneousSpace, basis: &InvariantBasis, x: &[f64]) -> Result<Mat> {
    let n = x.len();
    let field = |y: &[f64]| -> Result<Vec<f64>> {
        let ric0 = curvature::traceless_ricci(space, &basis.matrix(y))?;
        Ok(basis.coefficients(&ric0).iter().map(|v| -2.0 * v).collect())
    };
    let h = 1e-6 * (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt());
    let mut jac = Mat::zeros(n, n);
    for a in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[a] += h;
        xm[a] -= h;
        let (fp, fm) = (field(&xp)?, field(&xm)?);
        for b in 0..n {
            jac[(b, a)] = (fp[b] - fm[b]) / (2.0 * h);
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dopri5_exponential() {
        let cfg = IntegratorConfig::default();
        let sol = integrate(|_t, y: &[f64]| Ok(vec![-y[0]]), &[1.0], 0.0, 2.0, &cfg, |_, _| Ok(StepControl::Continue)).unwrap();
        let y = sol.states.last().unwrap()[0];
        assert!((y - (-2.0f64).exp()).abs() < 1e-9);
        assert_eq!(*sol.times.last().unwrap(), 2.0);
    }

    #[test]
    fn fixed_step_order() {
        let err = |h: f64| {
            let cfg = IntegratorConfig { method: Method::Dopri5Fixed(h), ..Default::default() };
            let sol = integrate(|_t, y: &[f64]| Ok(vec![y[0] * y[0]]), &[1.0], 0.0, 0.5, &cfg, |_, _| Ok(StepControl::Continue)).unwrap();
            (sol.states.last().unwrap()[0] - 2.0).abs()
        };
        let (e1, e2) = (err(0.05), err(0.025));
        assert!(e1 / e2 > 16.0, "{e1} {e2}");
    }

    #[test]
    fn backward_integration() {
        let cfg = IntegratorConfig::default();
        let sol = integrate(|_t, y: &[f64]| Ok(vec![y[0]]), &[1.0], 0.0, -1.0, &cfg, |_, _| Ok(StepControl::Continue)).unwrap();
        assert!((sol.states.last().unwrap()[0] - (-1.0f64).exp()).abs() < 1e-9);
        assert!(sol.times.windows(2).all(|w| w[1] < w[0]));
    }
}
