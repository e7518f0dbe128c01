//! Ancient solutions of the projected flow emanating from the collapsed fixed point
//! `0 ⊕ P̄`: linearization, unstable subspace, backward shooting and collapse certificates.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{submersion_basis, HomogeneousSpace, InvariantBasis};
use crate::curvature;
use crate::einstein::{analyze_point, find_einstein, EinsteinConfig, EinsteinPoint, EngineBackend};
use crate::error::{input, Error, Result};
use crate::flow::{self, Direction, FlowTrajectory, IntegratorConfig, ProjectedFlowContext, StopReason};
use crate::linalg::{self, Mat};

/// Eigenvalues with real part above this count as unstable.
pub const UNSTABLE_TOL: f64 = 1e-6;

/// A group of numerically equal unstable eigenvalues. `geometric < algebraic` signals a
/// Jordan block, whose modes decay like `|t|^k e^{μt}` backward.
#[derive(Clone, Debug, Serialize)]
pub struct UnstableCluster {
    pub eigenvalue: f64,
    pub algebraic: usize,
    pub geometric: usize,
    /// Length of the longest Jordan chain.
    pub chain: usize,
}

/// Linearized projected flow at the collapsed fixed point.
#[derive(Clone, Debug)]
pub struct CollapsedFixedPoint<'a> {
    pub space: &'a HomogeneousSpace,
    pub base: &'a HomogeneousSpace,
    pub basis: InvariantBasis,
    pub ctx: ProjectedFlowContext,
    /// `dR` at the fixed point in basis coefficients (all directions, not only the tangent).
    pub d_r: Mat,
    /// `A = −2 dR` restricted to the sphere tangent, in a `⟨⟨·,·⟩⟩`-orthonormal tangent frame.
    pub linearization: Mat,
    /// Eigenvalues of `A` (real part, imaginary part), sorted by decreasing real part.
    pub eigenvalues: Vec<(f64, f64)>,
    pub unstable_eigenvalues: Vec<f64>,
    /// Basis of the unstable subspace in coefficients: first `nu` vectors have vertical part
    /// equal to a multiple of the matching vertical basis element, the rest are horizontal.
    pub unstable_basis: Vec<Vec<f64>>,
    /// Projection of deviations from the fixed point onto the unstable subspace along the
    /// complementary invariant subspace (full coefficients), when the splitting is well posed.
    pub unstable_projector: Option<Mat>,
    pub unstable_clusters: Vec<UnstableCluster>,
    pub nu: usize,
    pub expected_dim: Option<usize>,
    /// `max |dR_tt + λ Id|`.
    pub vertical_block_residual: f64,
    /// `max |dR_tn|`, the block coupling horizontal directions into vertical ones.
    pub upper_block_residual: f64,
    /// Horizontal block of `dR` against finite differences of the base map.
    pub horizontal_block_residual: f64,
}

impl CollapsedFixedPoint<'_> {
    pub fn unstable_dim(&self) -> usize {
        self.unstable_basis.len()
    }

    pub fn family_dim(&self) -> usize {
        self.unstable_dim().saturating_sub(1)
    }

    /// Unit coefficients `c` whose direction `Σ cᵢvᵢ` has vertical block proportional to `bt`.
    pub fn vertical_direction(&self, bt: &Mat) -> Result<Vec<f64>> {
        let t = self.space.dim_t();
        if bt.nrows() != t || bt.ncols() != t {
            return input("vertical block has the wrong size");
        }
        let target = self.basis.coefficients(&linalg::direct_sum(bt, &Mat::zeros(self.space.dim_n(), self.space.dim_n())));
        let d = self.unstable_dim();
        let a = Mat::from_fn(self.nu, d, |i, j| self.unstable_basis[j][i]);
        let b = DVector::from_iterator(self.nu, target[..self.nu].iter().copied());
        let mut c = linalg::lstsq(&a, &b)?;
        // Prefer the combination without horizontal unstable modes.
        for j in self.nu..d {
            c[j] = 0.0;
        }
        let n = c.norm();
        if n == 0.0 {
            return input("vertical block is zero");
        }
        Ok((c / n).iter().copied().collect())
    }

    /// Vertical part `P_t` of a basis-coefficient vector.
    fn vertical_block(&self, x: &[f64]) -> Mat {
        self.space.split_blocks(&self.basis.matrix(x)).0
    }
}

/// `ν + q`: invariant symmetric forms on the torus plus the coindex of the base metric.
pub fn expected_unstable_dim(space: &HomogeneousSpace, base_coindex: usize) -> Result<usize> {
    Ok(submersion_basis(space)?.t_block_dim + base_coindex)
}

/// Verify an Einstein point on the base (coordinates of [`EngineBackend`]) and return the
/// unit-volume metric with its analysis.
pub fn base_einstein_metric(base: &HomogeneousSpace, coords: &[f64]) -> Result<(Mat, EinsteinPoint)> {
    let backend = EngineBackend::new(base)?;
    let cfg = EinsteinConfig::default();
    let point = find_einstein(&backend, coords, &cfg)?;
    let point = analyze_point(&backend, &point.coefficients, &cfg)?;
    Ok((backend.metric(&point.coefficients), point))
}

fn gram(ctx: &ProjectedFlowContext, basis: &InvariantBasis) -> Mat {
    let k = basis.len();
    Mat::from_fn(k, k, |a, b| ctx.inner(&basis.elements[a], &basis.elements[b]))
}

/// `dR` at `P` along `B`, given `Ric(P)` and `dRic(B)`.
fn d_projected(ctx: &ProjectedFlowContext, p: &Mat, ric: &Mat, d_ric: &Mat, b: &Mat) -> Mat {
    let pp = ctx.inner(p, p);
    let rp = ctx.inner(ric, p);
    let rho = rp / pp;
    let d_rho = (ctx.inner(d_ric, p) + ctx.inner(ric, b)) / pp - 2.0 * rp * ctx.inner(p, b) / (pp * pp);
    d_ric - p * d_rho - b * rho
}

/// Linearize the projected flow at `0 ⊕ P̄` and extract the unstable subspace. With
/// `expected_dim`, a mismatching unstable count is a structural error.
pub fn linearize_at_collapse<'a>(
    space: &'a HomogeneousSpace,
    base: &'a HomogeneousSpace,
    ctx: ProjectedFlowContext,
    expected_dim: Option<usize>,
) -> Result<CollapsedFixedPoint<'a>> {
    let basis = submersion_basis(space)?;
    let k = basis.len();
    let nu = basis.t_block_dim;
    let f = ctx.fixed_point();
    let (ft, fnn) = space.split_blocks(&f);
    let dirs: Vec<(Mat, Mat)> = basis.elements.iter().map(|e| space.split_blocks(e)).collect();
    let (ric, d_rics) = curvature::ricci_and_differentials(space, &ft, &fnn, &dirs)?;
    let mut d_r = Mat::zeros(k, k);
    for (a, e) in basis.elements.iter().enumerate() {
        let col = basis.coefficients(&d_projected(&ctx, &f, &ric, &d_rics[a], e));
        for b in 0..k {
            d_r[(b, a)] = col[b];
        }
    }
    let lambda = ctx.lambda;
    let mut vertical_block_residual: f64 = 0.0;
    let mut upper_block_residual: f64 = 0.0;
    for b in 0..nu {
        for a in 0..k {
            if a < nu {
                let target = if a == b { -lambda } else { 0.0 };
                vertical_block_residual = vertical_block_residual.max((d_r[(b, a)] - target).abs());
            } else {
                upper_block_residual = upper_block_residual.max(d_r[(b, a)].abs());
            }
        }
    }
    let horizontal_block_residual = horizontal_check(space, base, &basis, &ctx, &d_r)?;

    // Orthonormal frame of the sphere tangent {B : ⟨⟨B, F⟩⟩ = 0} under ⟨⟨·,·⟩⟩.
    let g = gram(&ctx, &basis);
    let fc = DVector::from_vec(basis.coefficients(&f));
    let normal = &g * &fc;
    let mut seeds: Vec<DVector<f64>> = vec![fc.clone()];
    seeds.extend((0..k).map(|i| DVector::from_fn(k, |j, _| if i == j { 1.0 } else { 0.0 })));
    let mut frame = linalg::orthonormalize(&seeds, &g, 1e-10);
    if frame.len() != k || (frame[0].dot(&normal) - 1.0).abs() > 1e-8 {
        return Err(Error::Numerical("could not build a tangent frame of the sphere".into()));
    }
    frame.remove(0);
    let u = Mat::from_columns(&frame);
    let a_full = &d_r * -2.0;
    let lin = u.transpose() * &g * &a_full * &u;

    let ev = lin.clone().complex_eigenvalues();
    let mut eigenvalues: Vec<(f64, f64)> = ev.iter().map(|z| (z.re, z.im)).collect();
    eigenvalues.sort_by(|a, b| b.0.total_cmp(&a.0));
    let unstable: Vec<(f64, f64)> = eigenvalues.iter().copied().filter(|z| z.0 > UNSTABLE_TOL).collect();
    if unstable.iter().any(|z| z.1.abs() > 1e-8) {
        return Err(Error::Structural("unstable eigenvalues are not real".into()));
    }
    let unstable_eigenvalues: Vec<f64> = unstable.iter().map(|z| z.0).collect();

    // Unstable subspace from eigenvalue clusters.
    let scale = lin.amax().max(1.0);
    let mut clusters: Vec<(f64, usize)> = Vec::new();
    for &mu in &unstable_eigenvalues {
        match clusters.last_mut() {
            Some((c, n)) if (mu - *c).abs() <= 1e-6 * scale => *n += 1,
            _ => clusters.push((mu, 1)),
        }
    }
    let tdim = lin.nrows();
    let mut w_cols: Vec<DVector<f64>> = Vec::new();
    let mut w_tan: Vec<DVector<f64>> = Vec::new();
    let mut annihilator = Mat::identity(tdim, tdim);
    let mut unstable_clusters = Vec::new();
    for &(mu, mult) in &clusters {
        let mut shifted = lin.clone();
        for i in 0..tdim {
            shifted[(i, i)] -= mu;
        }
        let mut power = shifted.clone();
        let mut ns = linalg::null_space(&power, 1e-7 * scale).0;
        let geometric = ns.ncols();
        let mut chain = 1;
        while ns.ncols() < mult && chain < mult {
            power = &power * &shifted;
            chain += 1;
            ns = linalg::null_space(&power, 1e-7 * scale.powi(chain as i32)).0;
        }
        unstable_clusters.push(UnstableCluster { eigenvalue: mu, algebraic: mult, geometric, chain });
        if ns.ncols() != mult {
            return Err(Error::Numerical(format!("eigenvalue {mu} has {mult} copies but a {}-dimensional eigenspace", ns.ncols())));
        }
        for c in 0..ns.ncols() {
            w_cols.push(&u * ns.column(c));
            w_tan.push(ns.column(c).into_owned());
        }
        annihilator = power * annihilator;
    }
    let unstable_projector = spectral_projector(&w_tan, &annihilator, &u, &g, nu);
    let w = if w_cols.is_empty() { Mat::zeros(k, 0) } else { Mat::from_columns(&w_cols) };
    let unstable_basis = adapt_unstable_basis(&w, nu, &g)?;

    let count = unstable_basis.len();
    if let Some(expected) = expected_dim {
        if count != expected {
            return Err(Error::Structural(format!("found {count} unstable directions, expected {expected}")));
        }
    }
    Ok(CollapsedFixedPoint {
        space,
        base,
        basis,
        ctx,
        d_r,
        linearization: lin,
        eigenvalues,
        unstable_eigenvalues,
        unstable_basis,
        unstable_projector,
        unstable_clusters,
        nu,
        expected_dim,
        vertical_block_residual,
        upper_block_residual,
        horizontal_block_residual,
    })
}

/// `U [W 0] [W S]⁻¹ Uᵀ G`, where the columns of `S` span the range of `annihilator`
/// (the invariant complement of the unstable subspace `W`).
fn spectral_projector(w_tan: &[DVector<f64>], annihilator: &Mat, u: &Mat, g: &Mat, nu: usize) -> Option<Mat> {
    let tdim = u.ncols();
    let d = w_tan.len();
    if d == 0 {
        return None;
    }
    let svd = annihilator.clone().svd(true, false);
    let uu = svd.u.as_ref()?;
    let smax = svd.singular_values.max();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let s_cols: Vec<DVector<f64>> = order.iter().take(tdim - d).filter(|&&i| svd.singular_values[i] > 1e-10 * smax).map(|&i| uu.column(i).into_owned()).collect();
    if s_cols.len() != tdim - d {
        return None;
    }
    let mut cols = w_tan.to_vec();
    cols.extend(s_cols);
    let m = Mat::from_columns(&cols);
    let minv = m.clone().try_inverse()?;
    let mut keep = Mat::zeros(tdim, tdim);
    for c in 0..d {
        keep.set_column(c, &m.column(c));
    }
    let mut proj = u * keep * minv * u.transpose() * g;
    // Horizontal deviations stay horizontal: the vertical rows vanish on horizontal columns.
    let k = proj.nrows();
    proj.view_mut((0, nu), (nu, k - nu)).fill(0.0);
    Some(proj)
}

/// Reorganize a basis of the unstable subspace (columns of `w`): vectors with vertical part
/// equal to each vertical basis element, then a `G`-orthonormal basis of the horizontal part.
fn adapt_unstable_basis(w: &Mat, nu: usize, g: &Mat) -> Result<Vec<Vec<f64>>> {
    let d = w.ncols();
    if d == 0 {
        return Ok(Vec::new());
    }
    let top = w.rows(0, nu).into_owned();
    let (kernel, _) = linalg::null_space(&top, 1e-9);
    let horizontal: Vec<DVector<f64>> = (0..kernel.ncols()).map(|c| w * kernel.column(c)).collect();
    let mut horizontal = linalg::orthonormalize(&horizontal, g, 1e-12);
    // Vertical coordinates vanish on this part up to rounding.
    for h in horizontal.iter_mut() {
        h.rows_mut(0, nu).fill(0.0);
    }
    let mut out: Vec<Vec<f64>> = Vec::new();
    if nu > 0 && d > horizontal.len() {
        let svd = top.clone().svd(true, true);
        for a in 0..nu {
            let e = DVector::from_fn(nu, |i, _| if i == a { 1.0 } else { 0.0 });
            let y = svd.solve(&e, 1e-10).map_err(|e| Error::Numerical(e.to_string()))?;
            let mut v = w * y;
            for h in &horizontal {
                let c = (h.transpose() * g * &v)[(0, 0)];
                v -= h * c;
            }
            let nrm = (v.transpose() * g * &v)[(0, 0)].sqrt();
            out.push((v / nrm).iter().copied().collect());
        }
    }
    out.extend(horizontal.iter().map(|h| h.iter().copied().collect()));
    if out.len() != d {
        return Err(Error::Numerical(format!("unstable subspace of dimension {d} split into {} vectors", out.len())));
    }
    Ok(out)
}

/// Compare the horizontal block of `dR` with central differences of the projected Ricci
/// map on the base, evaluated through the general curvature engine.
fn horizontal_check(space: &HomogeneousSpace, base: &HomogeneousSpace, basis: &InvariantBasis, ctx: &ProjectedFlowContext, d_r: &Mat) -> Result<f64> {
    let nu = basis.t_block_dim;
    let k = basis.len();
    let t = space.dim_t();
    let map = |pn: &Mat| -> Result<Mat> {
        let ric_n = curvature::ricci(base, pn)?;
        let p = linalg::direct_sum(&Mat::zeros(t, t), pn);
        let ric = linalg::direct_sum(&Mat::zeros(t, t), &ric_n);
        Ok(ctx.projected_ricci(&ric, &p))
    };
    let mut worst: f64 = 0.0;
    let h = 1e-5 * (1.0 + ctx.base_metric.norm());
    for a in nu..k {
        let (_, bn) = space.split_blocks(&basis.elements[a]);
        let rp = map(&(&ctx.base_metric + &bn * h))?;
        let rm = map(&(&ctx.base_metric - &bn * h))?;
        let fd = basis.coefficients(&((rp - rm) / (2.0 * h)));
        let col = d_r.column(a);
        let scale = fd.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for b in 0..k {
            worst = worst.max((col[b] - fd[b]).abs() / scale);
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct ShootConfig {
    pub integrator: IntegratorConfig,
    pub backward_horizon: f64,
    pub forward_horizon: f64,
    pub fixed_point_tol: f64,
    pub fiber_tol: f64,
    /// Tolerance for matching decay rates and the log σ slope.
    pub rate_tol: f64,
    pub scal_tol: f64,
    pub horizontal_tol: f64,
    /// Remove the stable component of the deviation after each backward step, which
    /// otherwise grows from rounding at the rate of the most negative eigenvalue.
    pub stabilize: bool,
}

impl Default for ShootConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig { rel_tol: 1e-12, abs_tol: 1e-14, ..IntegratorConfig::default() },
            backward_horizon: 100.0,
            forward_horizon: 5.0,
            fixed_point_tol: 1e-9,
            fiber_tol: 1e-7,
            rate_tol: 0.05,
            scal_tol: 1e-4,
            horizontal_tol: 1e-6,
            stabilize: true,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CollapseReport {
    pub certificates: Vec<Certificate>,
    pub collapsing: bool,
    pub ancient: bool,
    pub failing: Vec<&'static str>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AncientCandidate {
    pub coefficients: Vec<f64>,
    pub epsilon: f64,
    /// `P_t ≡ 0`: a trajectory of the base flow, not a metric on the total space.
    pub degenerate_vertical: bool,
    pub initial_state: Vec<f64>,
    pub backward: FlowTrajectory,
    pub forward: Option<FlowTrajectory>,
    pub forward_error: Option<String>,
    pub backward_decay_rate: Option<f64>,
    pub matched_eigenvalue: Option<f64>,
    pub scal_limit_target: f64,
    pub scal_at_stop: f64,
    pub fiber_diameter_at_stop: f64,
    pub horizontal_deviation_at_stop: f64,
    pub min_vertical_eigenvalue: f64,
    pub log_sigma_slope: Option<f64>,
    pub s_range: (f64, f64),
    pub s_monotone: bool,
    /// `|scal − limit|` never increases along the backward run (tolerance 1e-10).
    pub scal_monotone: bool,
    pub report: CollapseReport,
    pub accepted: bool,
}

/// Backward decay rate `μ` of the distance samples with `0 < d ≤ cutoff`.
///
/// With `jordan = 1` this is the least-squares slope of `log d` against `t`. A Jordan chain of
/// length `J` makes `d² e^{−2μt}` a polynomial of degree `2(J − 1)`; the rate is then the `μ`
/// minimizing the relative residual of that polynomial fit, located by a scan over
/// `(0, mu_max]` and golden-section refinement.
pub fn fit_decay_rate(times: &[f64], dists: &[f64], cutoff: f64, jordan: usize, mu_max: f64) -> Option<f64> {
    let rows: Vec<(f64, f64)> = times.iter().zip(dists).filter(|(_, d)| **d > 0.0 && **d <= cutoff).map(|(t, d)| (*t, d.ln())).collect();
    let (ts, ls): (Vec<f64>, Vec<f64>) = rows.iter().copied().unzip();
    if jordan <= 1 {
        return linalg::fit_slope(&ts, &ls);
    }
    let degree = 2 * (jordan - 1);
    if rows.len() < degree + 4 || mu_max.is_nan() || mu_max <= 0.0 {
        return None;
    }
    let tc = ts.iter().sum::<f64>() / ts.len() as f64;
    let span = ts.iter().fold(0.0f64, |m, t| m.max((t - tc).abs())).max(1e-300);
    let residual = |mu: f64| -> f64 {
        // y = d² e^{−2μt}, scaled to avoid overflow; rows q(t)/y = 1.
        let logs: Vec<f64> = rows.iter().map(|(t, l)| 2.0 * l - 2.0 * mu * t).collect();
        let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let a = Mat::from_fn(rows.len(), degree + 1, |i, j| ((rows[i].0 - tc) / span).powi(j as i32) * (shift - logs[i]).exp());
        let b = DVector::from_element(rows.len(), 1.0);
        match linalg::lstsq(&a, &b) {
            Ok(c) => (&a * c - b).norm_squared(),
            Err(_) => f64::INFINITY,
        }
    };
    let n = 400;
    let grid: Vec<f64> = (1..=n).map(|i| mu_max * i as f64 / n as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&m| residual(m)).collect();
    let best = (0..n).min_by(|&i, &j| vals[i].total_cmp(&vals[j]))?;
    let (mut lo, mut hi) = (grid[best.saturating_sub(1)], grid[(best + 1).min(n - 1)]);
    if best == 0 {
        lo = 0.5 * grid[0];
    }
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut f1, mut f2) = (residual(x1), residual(x2));
    for _ in 0..80 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = residual(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = residual(x2);
        }
    }
    Some(0.5 * (lo + hi))
}

impl CollapsedFixedPoint<'_> {
    /// Longest possible Jordan chain among the unstable clusters.
    pub fn max_jordan_chain(&self) -> usize {
        self.unstable_clusters.iter().map(|c| c.chain).max().unwrap_or(1)
    }
}

/// Check the sign condition on the vertical block of a perturbation direction.
/// `Ok(true)` means degenerate (zero vertical block), `Ok(false)` positive definite.
fn vertical_precondition(fp: &CollapsedFixedPoint, v: &[f64]) -> Result<bool> {
    let bt = fp.vertical_block(v);
    let ev = linalg::sym_eigenvalues(&bt);
    let scale = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let lo = ev.first().copied().unwrap_or(0.0) / scale;
    let hi = ev.iter().fold(0.0f64, |m, x| m.max(x.abs())) / scale;
    if hi <= 1e-12 {
        return Ok(true);
    }
    if lo > 1e-12 {
        return Ok(false);
    }
    input("vertical part of the perturbation is not positive definite")
}

/// Direction `Σ c_i v_i` in basis coefficients.
pub fn direction(fp: &CollapsedFixedPoint, c: &[f64]) -> Result<Vec<f64>> {
    if c.len() != fp.unstable_dim() {
        return input(format!("expected {} direction coefficients, got {}", fp.unstable_dim(), c.len()));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return input("direction coefficients must be finite");
    }
    let mut v = vec![0.0; fp.basis.len()];
    for (ci, ui) in c.iter().zip(&fp.unstable_basis) {
        for (x, u) in v.iter_mut().zip(ui) {
            *x += ci * u;
        }
    }
    Ok(v)
}

/// Shoot an ancient solution: start at distance `epsilon` from the fixed point along the
/// unstable direction `c`, integrate backward to the fixed point and forward until
/// positivity loss or the horizon, and certify the collapse.
pub fn shoot_ancient(fp: &CollapsedFixedPoint, c: &[f64], epsilon: f64, cfg: &ShootConfig) -> Result<AncientCandidate> {
    let cn = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (cn - 1.0).abs() > 1e-9 {
        return input(format!("direction coefficients must have unit norm (got {cn})"));
    }
    if !(epsilon == 0.0 || (1e-8..=1e-3).contains(&epsilon)) {
        return input("epsilon must be 0 or lie in [1e-8, 1e-3]");
    }
    let v = direction(fp, c)?;
    let degenerate_vertical = vertical_precondition(fp, &v)?;

    let f = fp.ctx.fixed_point();
    let fc = fp.basis.coefficients(&f);
    let vm = fp.basis.matrix(&v);
    let vn = fp.ctx.inner(&vm, &vm).sqrt();
    let theta = 2.0 * (epsilon / 2.0).asin();
    let x0: Vec<f64> = fc.iter().zip(&v).map(|(a, b)| theta.cos() * a + theta.sin() * b / vn).collect();

    let mut back_cfg = cfg.integrator.clone();
    back_cfg.fixed_point_tol = Some(cfg.fixed_point_tol);
    back_cfg.fiber_tol = Some(cfg.fiber_tol);
    back_cfg.divergence_tol = Some((10.0 * epsilon).max(1e-12));
    let horizon = if epsilon == 0.0 { 0.0 } else { cfg.backward_horizon };
    let correct = |x: &mut [f64]| {
        if let (true, Some(proj)) = (cfg.stabilize, &fp.unstable_projector) {
            let dev = DVector::from_iterator(x.len(), x.iter().zip(&fc).map(|(a, b)| a - b));
            let kept = proj * dev;
            for (i, v) in x.iter_mut().enumerate() {
                *v = fc[i] + kept[i];
            }
        }
    };
    let backward = flow::projected_flow_corrected(fp.space, fp.base, &fp.basis, &fp.ctx, &x0, &back_cfg, Direction::Backward, horizon, &correct)?;
    let (forward, forward_error) = if epsilon == 0.0 {
        (None, None)
    } else {
        let mut fwd_cfg = cfg.integrator.clone();
        fwd_cfg.fixed_point_tol = None;
        fwd_cfg.fiber_tol = None;
        fwd_cfg.divergence_tol = None;
        match flow::projected_flow(fp.space, fp.base, &fp.basis, &fp.ctx, &x0, &fwd_cfg, Direction::Forward, cfg.forward_horizon) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };

    let dists: Vec<f64> = backward.states.iter().map(|x| fp.ctx.distance(&fp.basis.matrix(x))).collect();
    let mu_max = 2.0 * fp.unstable_eigenvalues.first().copied().unwrap_or(0.0);
    let backward_decay_rate = fit_decay_rate(&backward.times, &dists, 0.1 * epsilon, fp.max_jordan_chain(), mu_max);
    let matched_eigenvalue = backward_decay_rate.and_then(|r| {
        fp.unstable_eigenvalues.iter().copied().min_by(|a, b| (a - r).abs().total_cmp(&(b - r).abs()))
    });

    let last = backward.diagnostics.last().expect("trajectory is never empty");
    let scal_limit_target = fp.ctx.lambda * fp.space.dim_n() as f64;
    let (_, pn_stop) = fp.space.split_blocks(&fp.basis.matrix(backward.last_state()));
    let horizontal_deviation_at_stop = (pn_stop - &fp.ctx.base_metric).norm();
    let min_vertical_eigenvalue = backward.diagnostics.iter().map(|d| d.min_eig_t).fold(f64::INFINITY, f64::min);
    let rt = flow::reconstruct_ricci_time(&backward);
    let s_range = rt.s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(*s), hi.max(*s)));
    let gaps: Vec<f64> = backward.diagnostics.iter().map(|d| (d.scal - scal_limit_target).abs()).collect();
    let scal_monotone = gaps.windows(2).all(|w| w[1] <= w[0] + 1e-10);

    let mut cand = AncientCandidate {
        coefficients: c.to_vec(),
        epsilon,
        degenerate_vertical,
        initial_state: x0,
        forward,
        forward_error,
        backward_decay_rate,
        matched_eigenvalue,
        scal_limit_target,
        scal_at_stop: last.scal,
        fiber_diameter_at_stop: last.fiber_diameter,
        horizontal_deviation_at_stop,
        min_vertical_eigenvalue,
        log_sigma_slope: rt.log_sigma_slope,
        s_range,
        s_monotone: rt.s_monotone,
        scal_monotone,
        report: CollapseReport { certificates: vec![], collapsing: false, ancient: false, failing: vec![] },
        accepted: false,
        backward,
    };
    cand.report = verify_collapse(fp, &cand, cfg);
    cand.accepted = epsilon > 0.0 && cand.report.collapsing && cand.report.ancient;
    Ok(cand)
}

/// Collapse and ancientness certificates for a shot.
pub fn verify_collapse(fp: &CollapsedFixedPoint, cand: &AncientCandidate, cfg: &ShootConfig) -> CollapseReport {
    let mut certs = Vec::new();
    let mut push = |name: &'static str, value: f64, threshold: f64, passed: bool| certs.push(Certificate { name, value, threshold, passed });
    let reached = cand.backward.stop == StopReason::FixedPoint;
    push("backward_reaches_fixed_point", if reached { 1.0 } else { 0.0 }, 1.0, reached);
    let rate_err = match (cand.backward_decay_rate, cand.matched_eigenvalue) {
        (Some(r), Some(mu)) => (r - mu).abs() / mu,
        _ => f64::INFINITY,
    };
    push("decay_rate_matches_unstable_eigenvalue", rate_err, cfg.rate_tol, rate_err <= cfg.rate_tol);
    push("fiber_diameter_at_stop", cand.fiber_diameter_at_stop, cfg.fiber_tol, cand.fiber_diameter_at_stop <= cfg.fiber_tol);
    push("horizontal_block_deviation", cand.horizontal_deviation_at_stop, cfg.horizontal_tol, cand.horizontal_deviation_at_stop <= cfg.horizontal_tol);
    let scal_gap = (cand.scal_at_stop - cand.scal_limit_target).abs();
    push("scal_limit", scal_gap, cfg.scal_tol, scal_gap <= cfg.scal_tol);
    let target = -2.0 * fp.ctx.lambda;
    let slope_err = cand.log_sigma_slope.map(|s| (s - target).abs() / target.abs()).unwrap_or(f64::INFINITY);
    push("log_sigma_slope", slope_err, cfg.rate_tol, slope_err <= cfg.rate_tol);
    let positive = cand.degenerate_vertical || cand.min_vertical_eigenvalue > 0.0;
    push("positivity", cand.min_vertical_eigenvalue, 0.0, positive);

    let failing: Vec<&'static str> = certs.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    let ok = |n: &str| certs.iter().find(|c| c.name == n).map(|c| c.passed).unwrap_or(false);
    let collapsing = ok("backward_reaches_fixed_point") && ok("fiber_diameter_at_stop") && ok("horizontal_block_deviation") && ok("scal_limit");
    let ancient = ok("log_sigma_slope") && ok("positivity") && ok("decay_rate_matches_unstable_eigenvalue");
    CollapseReport { certificates: certs, collapsing, ancient, failing }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanRecord {
    pub index: usize,
    pub coefficients: Vec<f64>,
    pub epsilon: f64,
    pub accepted: bool,
    pub degenerate_vertical: bool,
    pub rejection: Option<String>,
    pub backward_decay_rate: Option<f64>,
    pub log_sigma_slope: Option<f64>,
    pub scal_at_stop: Option<f64>,
    pub fiber_diameter_at_stop: Option<f64>,
    pub backward_time: Option<f64>,
    pub certificates: Vec<Certificate>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FamilyScan {
    pub records: Vec<ScanRecord>,
    /// Full shots by grid index (`None` where the shot was rejected before integrating).
    #[serde(skip)]
    pub candidates: Vec<Option<AncientCandidate>>,
    pub accepted_count: usize,
    /// Rank of the accepted direction vectors minus one (time translation).
    pub family_dimension: usize,
    pub expected_family_dimension: usize,
}

/// Random unit directions in the unstable subspace whose vertical part is positive definite.
pub fn positive_grid(fp: &CollapsedFixedPoint, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = fp.unstable_dim();
    let mut out = Vec::new();
    let mut tries = 0;
    while out.len() < count && tries < 10_000 * count.max(1) && d > 0 {
        tries += 1;
        let mut c: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        c.iter_mut().for_each(|x| *x /= n);
        if let Ok(v) = direction(fp, &c) {
            if matches!(vertical_precondition(fp, &v), Ok(false)) {
                out.push(c);
            }
        }
    }
    out
}

/// Shoot from every grid direction (in parallel) and summarize the accepted family.
pub fn family_scan(fp: &CollapsedFixedPoint, grid: &[Vec<f64>], epsilon: f64, cfg: &ShootConfig) -> FamilyScan {
    let shots: Vec<(ScanRecord, Option<AncientCandidate>)> = grid
        .par_iter()
        .enumerate()
        .map(|(index, c)| match shoot_ancient(fp, c, epsilon, cfg) {
            Ok(cand) => {
                let record = ScanRecord {
                    index,
                    coefficients: c.clone(),
                    epsilon,
                    accepted: cand.accepted && !cand.degenerate_vertical,
                    degenerate_vertical: cand.degenerate_vertical,
                    rejection: if cand.accepted { None } else { Some(format!("failing certificates: {}", cand.report.failing.join(", "))) },
                    backward_decay_rate: cand.backward_decay_rate,
                    log_sigma_slope: cand.log_sigma_slope,
                    scal_at_stop: Some(cand.scal_at_stop),
                    fiber_diameter_at_stop: Some(cand.fiber_diameter_at_stop),
                    backward_time: Some(cand.backward.last_time()),
                    certificates: cand.report.certificates.clone(),
                };
                (record, Some(cand))
            }
            Err(e) => {
                let record = ScanRecord {
                    index,
                    coefficients: c.clone(),
                    epsilon,
                    accepted: false,
                    degenerate_vertical: false,
                    rejection: Some(e.to_string()),
                    backward_decay_rate: None,
                    log_sigma_slope: None,
                    scal_at_stop: None,
                    fiber_diameter_at_stop: None,
                    backward_time: None,
                    certificates: vec![],
                };
                (record, None)
            }
        })
        .collect();
    let (records, candidates): (Vec<ScanRecord>, Vec<Option<AncientCandidate>>) = shots.into_iter().unzip();
    let accepted: Vec<&ScanRecord> = records.iter().filter(|r| r.accepted).collect();
    let family_dimension = if accepted.is_empty() {
        0
    } else {
        let d = fp.unstable_dim();
        let m = Mat::from_fn(accepted.len(), d, |i, j| accepted[i].coefficients[j]);
        let sv = m.singular_values();
        sv.iter().filter(|&&s| s > 1e-8).count().saturating_sub(1)
    };
    FamilyScan {
        accepted_count: accepted.len(),
        records,
        candidates,
        family_dimension,
        expected_family_dimension: fp.family_dim(),
    }
}
