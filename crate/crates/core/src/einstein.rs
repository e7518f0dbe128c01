//! Einstein metrics as critical points of the normalized scalar curvature, and the
//! Hessian spectrum and coindex at those points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{invariant_sym_basis, HomogeneousSpace, InvariantBasis};
use crate::catalog::DiagonalModel;
use crate::curvature;
use crate::error::{input, Error, Result};
use crate::linalg::{self, Mat};
use nalgebra::DVector;

pub const EINSTEIN_TOL: f64 = 1e-10;
pub const NULL_TOL: f64 = 1e-6;
pub const MAX_ITER: usize = 200;

/// `⟨B1, B2⟩_P = det(P)^{1/2} tr(P⁻¹ B1 P⁻¹ B2)`.
pub fn l2_inner(p: &Mat, b1: &Mat, b2: &Mat) -> Result<f64> {
    let pinv = linalg::spd_inverse(p)?;
    let det = p.determinant();
    Ok(det.sqrt() * linalg::trace_product(&(&pinv * b1), &(&pinv * b2)))
}

/// `det(P)^{1/m} scal(P)`.
pub fn normalized_scal(space: &HomogeneousSpace, p: &Mat) -> Result<f64> {
    let s = curvature::scal(space, p)?;
    let det = p.determinant();
    Ok(det.powf(1.0 / space.dim_m() as f64) * s)
}

/// The gradient identity `d˜scal(B) = −det^{(2−m)/2m} ⟨Ric⁰, B⟩_P` evaluated along `B`.
pub fn normalized_scal_differential(space: &HomogeneousSpace, p: &Mat, b: &Mat) -> Result<f64> {
    let ric0 = curvature::traceless_ricci(space, p)?;
    let m = space.dim_m() as f64;
    let det = p.determinant();
    Ok(-det.powf((2.0 - m) / (2.0 * m)) * l2_inner(p, &ric0, b)?)
}

/// Something that can evaluate the normalized scalar curvature and its gradient in a
/// fixed coordinate system on the invariant metrics.
pub trait ScalarBackend: Sync {
    fn name(&self) -> &'static str;
    /// Number of coordinates.
    fn coords(&self) -> usize;
    /// Dimension of the manifold.
    fn manifold_dim(&self) -> usize;
    fn is_metric(&self, x: &[f64]) -> bool;
    fn log_det(&self, x: &[f64]) -> Result<f64>;
    fn log_det_gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn normalized_scal(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// `(λ, ‖Ric⁰‖)` with `λ = scal / m`.
    fn einstein_data(&self, x: &[f64]) -> Result<(f64, f64)>;
}

/// Structure-constant backend: coordinates are module-scale coefficients of the invariant basis.
pub struct EngineBackend<'a> {
    pub space: &'a HomogeneousSpace,
    pub basis: InvariantBasis,
    scales: Vec<f64>,
}

impl<'a> EngineBackend<'a> {
    pub fn new(space: &'a HomogeneousSpace) -> Result<Self> {
        let basis = invariant_sym_basis(space)?;
        let scales = basis.operator_scales();
        Ok(Self { space, basis, scales })
    }

    pub fn metric(&self, x: &[f64]) -> Mat {
        self.basis.matrix_scaled(x)
    }

    fn checked_metric(&self, x: &[f64]) -> Result<Mat> {
        if x.len() != self.coords() {
            return input(format!("expected {} coefficients, got {}", self.coords(), x.len()));
        }
        let p = self.metric(x);
        if linalg::min_eigenvalue(&p) <= 0.0 {
            return input("coefficients do not define a positive-definite metric");
        }
        Ok(p)
    }
}

impl ScalarBackend for EngineBackend<'_> {
    fn name(&self) -> &'static str {
        "structure_constants"
    }

    fn coords(&self) -> usize {
        self.basis.len()
    }

    fn manifold_dim(&self) -> usize {
        self.space.dim_m()
    }

    fn is_metric(&self, x: &[f64]) -> bool {
        x.len() == self.coords() && x.iter().all(|v| v.is_finite()) && linalg::min_eigenvalue(&self.metric(x)) > 0.0
    }

    fn log_det(&self, x: &[f64]) -> Result<f64> {
        let p = self.checked_metric(x)?;
        Ok(p.determinant().ln())
    }

    fn log_det_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pinv = linalg::spd_inverse(&self.checked_metric(x)?)?;
        Ok(self.basis.elements.iter().zip(&self.scales).map(|(e, s)| linalg::trace_product(&pinv, e) / s).collect())
    }

    fn normalized_scal(&self, x: &[f64]) -> Result<f64> {
        normalized_scal(self.space, &self.checked_metric(x)?)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.checked_metric(x)?;
        let pinv = linalg::spd_inverse(&p)?;
        let ric0 = curvature::traceless_ricci(self.space, &p)?;
        let w = &pinv * ric0 * &pinv;
        let f = p.determinant().powf(1.0 / self.manifold_dim() as f64);
        Ok(self.basis.elements.iter().zip(&self.scales).map(|(e, s)| -f * linalg::trace_product(&w, e) / s).collect())
    }

    fn einstein_data(&self, x: &[f64]) -> Result<(f64, f64)> {
        let p = self.checked_metric(x)?;
        let s = curvature::scal(self.space, &p)?;
        let ric0 = curvature::traceless_ricci(self.space, &p)?;
        Ok((s / self.manifold_dim() as f64, ric0.norm()))
    }
}

/// Closed-form diagonal backend; coordinates are the module scales.
pub struct DiagonalBackend<'a> {
    pub model: &'a DiagonalModel,
}

impl ScalarBackend for DiagonalBackend<'_> {
    fn name(&self) -> &'static str {
        "diagonal_model"
    }

    fn coords(&self) -> usize {
        self.model.modules()
    }

    fn manifold_dim(&self) -> usize {
        self.model.dim()
    }

    fn is_metric(&self, x: &[f64]) -> bool {
        x.len() == self.coords() && x.iter().all(|v| v.is_finite() && *v > 0.0)
    }

    fn log_det(&self, x: &[f64]) -> Result<f64> {
        self.model.scal(x)?;
        Ok(self.model.log_det(x))
    }

    fn log_det_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.model.scal(x)?;
        Ok(self.model.dims.iter().zip(x).map(|(d, v)| *d as f64 / v).collect())
    }

    fn normalized_scal(&self, x: &[f64]) -> Result<f64> {
        self.model.normalized_scal(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let s = self.model.scal(x)?;
        let g = self.model.scal_gradient(x)?;
        let m = self.manifold_dim() as f64;
        let f = (self.model.log_det(x) / m).exp();
        Ok((0..x.len()).map(|k| f * (self.model.dims[k] as f64 / (m * x[k]) * s + g[k])).collect())
    }

    fn einstein_data(&self, x: &[f64]) -> Result<(f64, f64)> {
        let s = self.model.scal(x)?;
        let m = self.manifold_dim() as f64;
        let r = self.model.ricci_eigenvalues(x)?;
        let res: f64 = (0..x.len()).map(|k| self.model.dims[k] as f64 * (r[k] - s / m * x[k]).powi(2)).sum();
        Ok((s / m, res.sqrt()))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EinsteinConfig {
    pub tol: f64,
    pub null_tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step for Jacobians and Hessians.
    pub fd_step: f64,
}

impl Default for EinsteinConfig {
    fn default() -> Self {
        Self { tol: EINSTEIN_TOL, null_tol: NULL_TOL, max_iter: MAX_ITER, fd_step: 1e-5 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EinsteinPoint {
    pub backend: String,
    /// Unit-volume coordinates.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub normalized_scal: f64,
    pub residual: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub hessian_spectrum: Vec<f64>,
    pub scaling_eigenvalue: f64,
    pub hessian_asymmetry: f64,
    pub coindex: usize,
    pub nullity: usize,
    pub negative_count: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct HessianReport {
    pub spectrum: Vec<f64>,
    /// `|H x̄|`, the Hessian applied to the (unit) scaling direction.
    pub scaling_eigenvalue: f64,
    pub asymmetry: f64,
    /// Number of positive eigenvalues (directions of increase of the normalized scalar curvature).
    pub coindex: usize,
    pub nullity: usize,
    pub negative_count: usize,
}

/// Scale `x` onto the unit-volume slice.
pub fn unit_volume(backend: &dyn ScalarBackend, x: &[f64]) -> Result<Vec<f64>> {
    let ld = backend.log_det(x)?;
    let c = (-ld / backend.manifold_dim() as f64).exp();
    Ok(x.iter().map(|v| v * c).collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central-difference Jacobian of the gradient (the Hessian before symmetrization).
fn gradient_jacobian(backend: &dyn ScalarBackend, x: &[f64], rel_step: f64) -> Result<Mat> {
    let n = x.len();
    let h = rel_step * (1.0 + norm(x));
    let mut jac = Mat::zeros(n, n);
    for a in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[a] += h;
        xm[a] -= h;
        let gp = backend.gradient(&xp)?;
        let gm = backend.gradient(&xm)?;
        for b in 0..n {
            jac[(b, a)] = (gp[b] - gm[b]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Newton iteration on the unit-volume slice for a critical point of the normalized scalar curvature.
pub fn find_einstein(backend: &dyn ScalarBackend, seed: &[f64], cfg: &EinsteinConfig) -> Result<EinsteinPoint> {
    if !backend.is_metric(seed) {
        return input("seed is not a positive-definite metric");
    }
    let n = seed.len();
    let mut x = unit_volume(backend, seed)?;
    let mut g = backend.gradient(&x)?;
    let (mut lambda, mut residual) = backend.einstein_data(&x)?;
    let mut iter = 0;
    while residual > cfg.tol {
        if iter >= cfg.max_iter {
            return Err(Error::Search { iterations: iter, best_residual: residual, best_point: x });
        }
        iter += 1;
        let h = gradient_jacobian(backend, &x, cfg.fd_step)?;
        let ldg = backend.log_det_gradient(&x)?;
        let mu = 1e-8 * h.norm();
        let mut a = Mat::zeros(2 * n + 1, n);
        let mut rhs = DVector::zeros(2 * n + 1);
        a.view_mut((0, 0), (n, n)).copy_from(&h);
        for k in 0..n {
            rhs[k] = -g[k];
            a[(n, k)] = ldg[k];
            a[(n + 1 + k, k)] = mu;
        }
        let step = linalg::lstsq(&a, &rhs)?;
        let g0 = norm(&g);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, si)| xi + t * si).collect();
            if backend.is_metric(&trial) {
                let trial = unit_volume(backend, &trial)?;
                let gt = backend.gradient(&trial)?;
                if norm(&gt) < g0 || t < 1e-6 {
                    x = trial;
                    g = gt;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Search { iterations: iter, best_residual: residual, best_point: x });
        }
        (lambda, residual) = backend.einstein_data(&x)?;
    }
    let hess = hessian_spectrum_coindex(backend, &x, cfg)?;
    Ok(EinsteinPoint {
        backend: backend.name().to_string(),
        normalized_scal: backend.normalized_scal(&x)?,
        coefficients: x,
        lambda,
        residual,
        gradient_norm: norm(&g),
        iterations: iter,
        hessian_spectrum: hess.spectrum,
        scaling_eigenvalue: hess.scaling_eigenvalue,
        hessian_asymmetry: hess.asymmetry,
        coindex: hess.coindex,
        nullity: hess.nullity,
        negative_count: hess.negative_count,
    })
}

/// Hessian of the normalized scalar curvature at a critical point, by central differences
/// of the analytic gradient, with its signature.
pub fn hessian_spectrum_coindex(backend: &dyn ScalarBackend, x: &[f64], cfg: &EinsteinConfig) -> Result<HessianReport> {
    let x = unit_volume(backend, x)?;
    let jac = gradient_jacobian(backend, &x, cfg.fd_step)?;
    let asymmetry = linalg::asymmetry(&jac);
    let h = linalg::sym_part(&jac);
    let spectrum = linalg::sym_eigenvalues(&h);
    let xv = DVector::from_column_slice(&x);
    let scaling_eigenvalue = (&h * &xv).norm() / xv.norm();
    let positive = spectrum.iter().filter(|&&v| v > cfg.null_tol).count();
    let negative = spectrum.iter().filter(|&&v| v < -cfg.null_tol).count();
    let zeros = spectrum.len() - positive - negative;
    Ok(HessianReport {
        spectrum,
        scaling_eigenvalue,
        asymmetry,
        coindex: positive,
        nullity: zeros.saturating_sub(1),
        negative_count: negative,
    })
}

/// Evaluate an already-known point without iterating: residual, spectrum and signature.
pub fn analyze_point(backend: &dyn ScalarBackend, x: &[f64], cfg: &EinsteinConfig) -> Result<EinsteinPoint> {
    if !backend.is_metric(x) {
        return input("coefficients are not a positive-definite metric");
    }
    let x = unit_volume(backend, x)?;
    let (lambda, residual) = backend.einstein_data(&x)?;
    let g = backend.gradient(&x)?;
    let hess = hessian_spectrum_coindex(backend, &x, cfg)?;
    Ok(EinsteinPoint {
        backend: backend.name().to_string(),
        normalized_scal: backend.normalized_scal(&x)?,
        coefficients: x,
        lambda,
        residual,
        gradient_norm: norm(&g),
        iterations: 0,
        hessian_spectrum: hess.spectrum,
        scaling_eigenvalue: hess.scaling_eigenvalue,
        hessian_asymmetry: hess.asymmetry,
        coindex: hess.coindex,
        nullity: hess.nullity,
        negative_count: hess.negative_count,
    })
}

/// Smallest (lexicographic) image of `x` under the given coordinate permutations.
pub fn canonical_coords(x: &[f64], perms: &[Vec<usize>]) -> Vec<f64> {
    let mut best = x.to_vec();
    for p in perms {
        if p.len() != x.len() {
            continue;
        }
        let y: Vec<f64> = p.iter().map(|&i| x[i]).collect();
        if lex_less(&y, &best) {
            best = y;
        }
    }
    best
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > 1e-9 * (1.0 + x.abs()) {
            return x < y;
        }
    }
    false
}

/// Random positive seeds in the backend coordinates (log-uniform on module scales for the
/// leading identity coordinates, small symmetric noise elsewhere).
pub fn random_seeds(backend: &dyn ScalarBackend, count: usize, rng_seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 100 * count.max(1) {
        attempts += 1;
        let x: Vec<f64> = (0..backend.coords()).map(|_| rng.gen_range(-1.2f64..1.2).exp()).collect();
        if backend.is_metric(&x) {
            out.push(x);
        }
    }
    out
}

/// Run `find_einstein` from each seed in parallel and merge distinct results, sorted by
/// normalized scalar curvature and then by coordinates.
pub fn find_einstein_multi(backend: &dyn ScalarBackend, seeds: &[Vec<f64>], perms: &[Vec<usize>], cfg: &EinsteinConfig) -> Vec<EinsteinPoint> {
    let found: Vec<EinsteinPoint> = seeds.par_iter().filter_map(|s| find_einstein(backend, s, cfg).ok()).collect();
    let mut canon: Vec<EinsteinPoint> = found
        .into_iter()
        .map(|mut p| {
            p.coefficients = canonical_coords(&p.coefficients, perms);
            p
        })
        .collect();
    canon.sort_by(|a, b| {
        a.normalized_scal
            .total_cmp(&b.normalized_scal)
            .then_with(|| if lex_less(&a.coefficients, &b.coefficients) { std::cmp::Ordering::Less } else if lex_less(&b.coefficients, &a.coefficients) { std::cmp::Ordering::Greater } else { std::cmp::Ordering::Equal })
    });
    let mut out: Vec<EinsteinPoint> = Vec::new();
    for p in canon {
        let dup = out.iter().any(|q| {
            p.coefficients.iter().zip(&q.coefficients).all(|(a, b)| (a - b).abs() <= 1e-6 * (1.0 + a.abs()))
        });
        if !dup {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{g2_model, lookup, so4_model, sun_model};

    fn space(id: &str) -> HomogeneousSpace {
        HomogeneousSpace::new(lookup(id).unwrap().space_spec().unwrap().clone()).unwrap()
    }

    #[test]
    fn l2_inner_identity() {
        let p = Mat::identity(5, 5);
        assert!((l2_inner(&p, &p, &p).unwrap() - 5.0).abs() < 1e-14);
        assert!(l2_inner(&Mat::zeros(2, 2), &p, &p).is_err());
    }

    #[test]
    fn su3_ke_point() {
        let sp = space("su3_full_flag");
        let be = EngineBackend::new(&sp).unwrap();
        let ke = lookup("su3_full_flag").unwrap().einstein("ke").unwrap().coords.clone();
        let pt = analyze_point(&be, &ke, &EinsteinConfig::default()).unwrap();
        assert!(pt.residual < 1e-9);
        assert!((pt.normalized_scal - 2.5198421).abs() < 1e-6);
        assert!((pt.lambda - 0.4199737).abs() < 1e-6);
        let expect = [-1.0 / 3.0, 0.0, 4.0 / 3.0];
        for (a, b) in pt.hessian_spectrum.iter().zip(expect) {
            assert!((a - b).abs() < 1e-5, "{:?}", pt.hessian_spectrum);
        }
        assert_eq!(pt.coindex, 1);
    }

    #[test]
    fn newton_from_nearby_seed() {
        let sp = space("su3_full_flag");
        let be = EngineBackend::new(&sp).unwrap();
        let pt = find_einstein(&be, &[1.0, 1.1, 1.9], &EinsteinConfig::default()).unwrap();
        let ke = lookup("su3_full_flag").unwrap().einstein("ke").unwrap().coords.clone();
        assert!(pt.coefficients.iter().zip(&ke).all(|(a, b)| (a - b).abs() < 1e-8), "{:?}", pt.coefficients);
    }

    #[test]
    fn backends_agree_on_gradient() {
        let sp = space("su4_full_flag");
        let be = EngineBackend::new(&sp).unwrap();
        let model = sun_model(4);
        let de = DiagonalBackend { model: &model };
        let x = [0.7, 1.3, 0.9, 1.1, 2.0, 0.6];
        let a = be.gradient(&x).unwrap();
        let b = de.gradient(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10, "{a:?} {b:?}");
        }
    }

    #[test]
    fn diagonal_models() {
        let g2 = g2_model();
        let be = DiagonalBackend { model: &g2 };
        let ke = lookup("g2_full_flag").unwrap().einstein("ke").unwrap().coords.clone();
        let pt = analyze_point(&be, &ke, &EinsteinConfig::default()).unwrap();
        assert!(pt.gradient_norm < 1e-8 && pt.residual < 1e-8, "{pt:?}");
        assert_eq!((pt.coindex, pt.negative_count, pt.nullity), (1, 4, 0));
        let so4 = so4_model();
        let be = DiagonalBackend { model: &so4 };
        assert!((be.normalized_scal(&[1.0, 1.0]).unwrap() - 2.0).abs() < 1e-14);
    }
}
