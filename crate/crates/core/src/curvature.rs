//! S-tensor, Riemann, Ricci and scalar curvature of invariant metrics, computed in the
//! adapted Q-orthonormal frame of `m`.
//!
//! Metrics are symmetric endomorphisms `P` of `m` (`g(U, V) = Q(P U, V)`). The S-tensor
//! is stored as one matrix per frame vector: `s[i][(k, j)]` is the `k`-th coordinate of
//! `S(e_i) e_j`.

use serde::Serialize;

use crate::algebra::{HomogeneousSpace, TripleTable};
use crate::error::{input, Result};
use crate::linalg::{self, Mat};

pub type STensor = Vec<Mat>;

fn check_square(space: &HomogeneousSpace, p: &Mat, what: &str) -> Result<()> {
    let m = space.dim_m();
    if p.nrows() != m || p.ncols() != m {
        return input(format!("{what} is {}x{}, expected {m}x{m}", p.nrows(), p.ncols()));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return input(format!("{what} has non-finite entries"));
    }
    Ok(())
}

/// S-tensor of a positive-definite metric from the general defining identity.
pub fn s_tensor(space: &HomogeneousSpace, p: &Mat) -> Result<STensor> {
    check_square(space, p, "metric")?;
    let pinv = linalg::spd_inverse(p)?;
    let m = space.dim_m();
    // w[i] = P⁻¹ C_i P where (C_i)_{ab} = c_{ai}^b
    let w: Vec<Mat> = (0..m)
        .map(|i| {
            let ci = Mat::from_fn(m, m, |a, b| space.cm(a, i, b));
            &pinv * ci * p
        })
        .collect();
    Ok((0..m)
        .map(|i| Mat::from_fn(m, m, |k, j| -0.5 * (space.cm(i, j, k) + w[i][(k, j)] + w[j][(k, i)])))
        .collect())
}

/// Residual of the defining identity `−2Q(S(V1)V2,V3) = Q([V1,V2]_m,V3) + …` over all
/// frame triples.
pub fn s_identity_residual(space: &HomogeneousSpace, p: &Mat, s: &STensor) -> Result<f64> {
    let pinv = linalg::spd_inverse(p)?;
    let m = space.dim_m();
    let mut r: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let mut rhs = space.cm(i, j, k);
                for a in 0..m {
                    for b in 0..m {
                        rhs += pinv[(a, k)] * (space.cm(a, i, b) * p[(b, j)] + space.cm(a, j, b) * p[(b, i)]);
                    }
                }
                r = r.max((-2.0 * s[i][(k, j)] - rhs).abs());
            }
        }
    }
    Ok(r)
}

/// The four blocks of the submersion S-tensor, optionally without the terms that do not
/// depend on the metric. `left` plays the role of `P_n⁻¹`. Linear in each of
/// `(pt, pn)` and `left` separately, which is what makes the differential a sum of two calls.
fn s_blocks(space: &HomogeneousSpace, pt: &Mat, pn: &Mat, left: &Mat, with_constant: bool) -> STensor {
    let m = space.dim_m();
    let t = space.dim_t();
    let n = m - t;
    let c = |a: usize, b: usize, d: usize| space.cm(a, b, d);
    let mut s: STensor = vec![Mat::zeros(m, m); m];

    // ad(P_t T) restricted to n -> n, for T = e_a
    for a in 0..t {
        let mut adpt = Mat::zeros(n, n);
        for b in 0..t {
            let w = pt[(b, a)];
            if w == 0.0 {
                continue;
            }
            for j in 0..n {
                for l in 0..n {
                    adpt[(l, j)] += w * c(b, t + j, t + l);
                }
            }
        }
        let half = left * adpt * 0.5;
        for j in 0..n {
            for k in 0..n {
                let mut v = half[(k, j)];
                if with_constant {
                    v -= c(a, t + j, t + k);
                }
                s[a][(t + k, t + j)] = v;
            }
        }
    }

    for i in 0..n {
        let x = t + i;
        // ad(X) restricted n -> n
        let adx = Mat::from_fn(n, n, |l, j| c(x, t + j, t + l));
        // S(X) T̃ = −½ P_n⁻¹ ad(X) P_t T̃
        if t > 0 {
            let adx_t = Mat::from_fn(n, t, |l, b| c(x, b, t + l));
            let blk = left * adx_t * pt * (-0.5);
            for a in 0..t {
                for k in 0..n {
                    s[x][(t + k, a)] = blk[(k, a)];
                }
            }
        }
        // ad(P_n X) restricted n -> n
        let mut adpx = Mat::zeros(n, n);
        for i2 in 0..n {
            let w = pn[(i2, i)];
            if w == 0.0 {
                continue;
            }
            for j in 0..n {
                for l in 0..n {
                    adpx[(l, j)] += w * c(t + i2, t + j, t + l);
                }
            }
        }
        let blk = left * (&adx * pn - adpx) * (-0.5);
        for j in 0..n {
            for k in 0..n {
                s[x][(t + k, t + j)] = blk[(k, j)];
            }
            if with_constant {
                for k in 0..m {
                    s[x][(k, t + j)] -= 0.5 * c(x, t + j, k);
                }
            }
        }
    }
    s
}

fn check_submersion(space: &HomogeneousSpace, pt: &Mat, pn: &Mat) -> Result<()> {
    if !space.has_toral_split() {
        return input("submersion metrics need a toral split");
    }
    let (t, n) = (space.dim_t(), space.dim_n());
    if pt.nrows() != t || pt.ncols() != t || pn.nrows() != n || pn.ncols() != n {
        return input(format!("submersion blocks must be {t}x{t} and {n}x{n}"));
    }
    if pt.iter().chain(pn.iter()).any(|v| !v.is_finite()) {
        return input("submersion metric has non-finite entries");
    }
    Ok(())
}

/// S-tensor of a generalized submersion metric `P_t ⊕ P_n`; `P_t` may be degenerate.
pub fn s_tensor_submersion(space: &HomogeneousSpace, pt: &Mat, pn: &Mat) -> Result<STensor> {
    check_submersion(space, pt, pn)?;
    let pninv = linalg::spd_inverse(pn)?;
    Ok(s_blocks(space, pt, pn, &pninv, true))
}

/// Directional derivative of the submersion S-tensor along `B_t ⊕ B_n`.
pub fn s_tensor_submersion_differential(space: &HomogeneousSpace, pt: &Mat, pn: &Mat, bt: &Mat, bn: &Mat) -> Result<STensor> {
    check_submersion(space, pt, pn)?;
    check_submersion(space, bt, bn)?;
    let pninv = linalg::spd_inverse(pn)?;
    let dleft = -(&pninv * bn * &pninv);
    let mut a = s_blocks(space, pt, pn, &dleft, false);
    let b = s_blocks(space, bt, bn, &pninv, false);
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    Ok(a)
}

/// Riemann tensor: `rm[i * m + j]` is the operator `Rm(e_i, e_j)` on `m`.
pub fn riemann(space: &HomogeneousSpace, s: &STensor) -> Vec<Mat> {
    let m = space.dim_m();
    let dh = space.dim_h();
    let adh = space.ad_h_on_m();
    let mut out = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            let mut r = Mat::zeros(m, m);
            for (a, ad) in adh.iter().enumerate() {
                let w = space.cg(dh + i, dh + j, a);
                if w != 0.0 {
                    r += ad * w;
                }
            }
            r -= &s[i] * &s[j] - &s[j] * &s[i];
            for (w_idx, sw) in s.iter().enumerate() {
                let w = space.cm(i, j, w_idx);
                if w != 0.0 {
                    r -= sw * w;
                }
            }
            out.push(r);
        }
    }
    out
}

/// Ricci contraction `Ric_ik = Σ_z Rm(e_i, e_z)_{zk}`.
pub fn ricci_from_riemann(space: &HomogeneousSpace, rm: &[Mat]) -> Mat {
    let m = space.dim_m();
    Mat::from_fn(m, m, |i, k| (0..m).map(|z| rm[i * m + z][(z, k)]).sum())
}

/// `Ric` contraction pieces, split so the differential reuses them.
struct RicciParts<'a> {
    space: &'a HomogeneousSpace,
}

impl RicciParts<'_> {
    /// Metric-independent part coming from `ad([V1, V2]_h)`.
    fn isotropy(&self) -> Mat {
        let sp = self.space;
        let m = sp.dim_m();
        let dh = sp.dim_h();
        let adh = sp.ad_h_on_m();
        Mat::from_fn(m, m, |i, k| {
            let mut v = 0.0;
            for z in 0..m {
                for (a, ad) in adh.iter().enumerate() {
                    v += sp.cg(dh + i, dh + z, a) * ad[(z, k)];
                }
            }
            v
        })
    }

    /// `−Σ_z ([A_i, B_z])_{zk}`.
    fn commutator(&self, a: &STensor, b: &STensor) -> Mat {
        let m = self.space.dim_m();
        let mut out = Mat::zeros(m, m);
        for i in 0..m {
            for z in 0..m {
                for k in 0..m {
                    let mut v = 0.0;
                    for y in 0..m {
                        v += a[i][(z, y)] * b[z][(y, k)] - b[z][(z, y)] * a[i][(y, k)];
                    }
                    out[(i, k)] -= v;
                }
            }
        }
        out
    }

    /// `−Σ_{z,w} c_izw (B_w)_{zk}`.
    fn linear(&self, b: &STensor) -> Mat {
        let sp = self.space;
        let m = sp.dim_m();
        Mat::from_fn(m, m, |i, k| {
            let mut v = 0.0;
            for z in 0..m {
                for (w, bw) in b.iter().enumerate() {
                    let c = sp.cm(i, z, w);
                    if c != 0.0 {
                        v -= c * bw[(z, k)];
                    }
                }
            }
            v
        })
    }
}

/// Ricci endomorphism from an S-tensor.
pub fn ricci_from_s(space: &HomogeneousSpace, s: &STensor) -> Mat {
    let parts = RicciParts { space };
    let ric = parts.isotropy() + parts.commutator(s, s) + parts.linear(s);
    linalg::sym_part(&ric)
}

/// Ricci endomorphism of a positive-definite metric.
pub fn ricci(space: &HomogeneousSpace, p: &Mat) -> Result<Mat> {
    let s = s_tensor(space, p)?;
    Ok(ricci_from_s(space, &s))
}

pub fn scal(space: &HomogeneousSpace, p: &Mat) -> Result<f64> {
    let ric = ricci(space, p)?;
    let pinv = linalg::spd_inverse(p)?;
    Ok(linalg::trace_product(&pinv, &ric))
}

/// `Ric⁰ = Ric − (scal / m) P`.
pub fn traceless_ricci(space: &HomogeneousSpace, p: &Mat) -> Result<Mat> {
    let ric = ricci(space, p)?;
    let pinv = linalg::spd_inverse(p)?;
    let sc = linalg::trace_product(&pinv, &ric);
    Ok(ric - p * (sc / space.dim_m() as f64))
}

/// Ricci curvature of a generalized submersion metric, returned as a full `m × m` matrix.
pub fn ricci_submersion(space: &HomogeneousSpace, pt: &Mat, pn: &Mat) -> Result<Mat> {
    let s = s_tensor_submersion(space, pt, pn)?;
    Ok(ricci_from_s(space, &s))
}

/// Analytic directional derivative of the submersion Ricci curvature at `P_t ⊕ P_n` along `B_t ⊕ B_n`.
pub fn ricci_differential(space: &HomogeneousSpace, pt: &Mat, pn: &Mat, bt: &Mat, bn: &Mat) -> Result<Mat> {
    let s = s_tensor_submersion(space, pt, pn)?;
    let ds = s_tensor_submersion_differential(space, pt, pn, bt, bn)?;
    let parts = RicciParts { space };
    let d = parts.commutator(&ds, &s) + parts.commutator(&s, &ds) + parts.linear(&ds);
    Ok(linalg::sym_part(&d))
}

/// `Ric`, `dRic` and the S-tensor bundled for callers that need all three.
pub fn ricci_and_differentials(space: &HomogeneousSpace, pt: &Mat, pn: &Mat, dirs: &[(Mat, Mat)]) -> Result<(Mat, Vec<Mat>)> {
    let s = s_tensor_submersion(space, pt, pn)?;
    let parts = RicciParts { space };
    let ric = linalg::sym_part(&(parts.isotropy() + parts.commutator(&s, &s) + parts.linear(&s)));
    let mut out = Vec::with_capacity(dirs.len());
    for (bt, bn) in dirs {
        let ds = s_tensor_submersion_differential(space, pt, pn, bt, bn)?;
        let d = parts.commutator(&ds, &s) + parts.commutator(&s, &ds) + parts.linear(&ds);
        out.push(linalg::sym_part(&d));
    }
    Ok((ric, out))
}

/// `|A|²` of the torus fibration for a submersion metric, valid for degenerate `P_t`:
/// `¼ Σ_{k,l ∈ t} (P_t)_{kl} tr(P_n⁻¹ M_k P_n⁻¹ M_lᵀ)` with `(M_k)_{cd} = c_{cd}^k`.
pub fn oneill_norm_sq(space: &HomogeneousSpace, pt: &Mat, pninv: &Mat) -> f64 {
    let t = space.dim_t();
    let n = space.dim_n();
    let mk: Vec<Mat> = (0..t).map(|k| Mat::from_fn(n, n, |c, d| space.cm(t + c, t + d, k))).collect();
    let mut total = 0.0;
    for k in 0..t {
        let left = pninv * &mk[k] * pninv;
        for l in 0..t {
            if pt[(k, l)] != 0.0 {
                total += pt[(k, l)] * linalg::trace_product(&left, &mk[l].transpose());
            }
        }
    }
    0.25 * total
}

/// Scalar curvature of a generalized submersion metric via `scal_N(P_n) − |A|²`.
/// Stays well conditioned when `P_t` is tiny.
pub fn scal_submersion(space: &HomogeneousSpace, base: &HomogeneousSpace, pt: &Mat, pn: &Mat) -> Result<f64> {
    check_submersion(space, pt, pn)?;
    let pninv = linalg::spd_inverse(pn)?;
    let ric_n = ricci(base, pn)?;
    Ok(linalg::trace_product(&pninv, &ric_n) - oneill_norm_sq(space, pt, &pninv))
}

#[derive(Clone, Debug, Serialize)]
pub struct OneillDiagnostics {
    /// `Σ_{j1,j2} A_{j1 j2} / (x_{j1} x_{j2})` from the horizontal closed form.
    pub a_norm_sq: f64,
    /// `Σ_{i,j} A_{ji}` from the mixed closed form; equals `a_norm_sq`.
    pub a_mixed_total: f64,
    pub scal_total: f64,
    pub scal_base: f64,
    pub identity_residual: f64,
}

/// Module scales of a metric that is a multiple of the identity on every module, or an error.
pub fn module_scales(space: &HomogeneousSpace, p: &Mat) -> Result<Vec<f64>> {
    check_square(space, p, "metric")?;
    let scale = p.amax().max(1.0);
    let mut xs = Vec::with_capacity(space.module_count());
    for q in 0..space.module_count() {
        let r = space.module_range(q);
        xs.push(p[(r.start, r.start)]);
    }
    let d = Mat::from_diagonal(&nalgebra::DVector::from_iterator(
        p.nrows(),
        (0..space.module_count()).flat_map(|q| std::iter::repeat_n(xs[q], space.module_range(q).len())),
    ));
    if (p - d).amax() > 1e-12 * scale {
        return input("metric is not diagonal with respect to the module decomposition");
    }
    Ok(xs)
}

/// O'Neill diagnostics for a module-diagonal submersion metric.
pub fn oneill_diagnostics(space: &HomogeneousSpace, base: &HomogeneousSpace, triples: &TripleTable, p: &Mat) -> Result<OneillDiagnostics> {
    let r = space.spec().toral_split.ok_or_else(|| crate::Error::Input("space has no toral split".into()))?;
    let x = module_scales(space, p)?;
    if x.iter().any(|v| *v <= 0.0) {
        return input("O'Neill diagnostics need a positive-definite metric");
    }
    let l = space.module_count();
    let mut a_norm_sq = 0.0;
    for j1 in r..l {
        for j2 in r..l {
            let a: f64 = (0..r).map(|i| triples.get(i, j1, j2) * x[i]).sum::<f64>() * 0.25;
            a_norm_sq += a / (x[j1] * x[j2]);
        }
    }
    let mut a_mixed_total = 0.0;
    for i in 0..r {
        for j in r..l {
            a_mixed_total += 0.25 * (r..l).map(|jp| triples.get(i, j, jp) * x[i] / (x[j] * x[jp])).sum::<f64>();
        }
    }
    let scal_total = scal(space, p)?;
    let (_, pn) = space.split_blocks(p);
    let scal_base = scal(base, &pn)?;
    Ok(OneillDiagnostics {
        a_norm_sq,
        a_mixed_total,
        scal_total,
        scal_base,
        identity_residual: (scal_total - scal_base + a_norm_sq).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{triple_coefficients, HomogeneousSpace};
    use crate::catalog::{lookup, sun_model};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(id: &str) -> HomogeneousSpace {
        HomogeneousSpace::new(lookup(id).unwrap().space_spec().unwrap().clone()).unwrap()
    }

    fn diag(space: &HomogeneousSpace, x: &[f64]) -> Mat {
        let mut p = Mat::zeros(space.dim_m(), space.dim_m());
        for (q, v) in x.iter().enumerate() {
            for i in space.module_range(q) {
                p[(i, i)] = *v;
            }
        }
        p
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
        let a = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + Mat::identity(n, n) * 0.5
    }

    #[test]
    fn bi_invariant_ricci_is_quarter() {
        for id in ["su2", "su3_group", "so4_group"] {
            let sp = space(id);
            let p = Mat::identity(sp.dim_m(), sp.dim_m());
            let ric = ricci(&sp, &p).unwrap();
            assert!((ric - &p * 0.25).amax() < 1e-12, "{id}");
            let s = s_tensor(&sp, &p).unwrap();
            for i in 0..sp.dim_m() {
                for j in 0..sp.dim_m() {
                    for k in 0..sp.dim_m() {
                        assert!((s[i][(k, j)] + 0.5 * sp.cm(i, j, k)).abs() < 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn su3_flag_triples_and_closed_form() {
        let sp = space("su3_full_flag");
        let t = triple_coefficients(&sp);
        assert!((t.get(0, 1, 2) - 1.0 / 3.0).abs() < 1e-12);
        assert!(t.max_abs_diff(&sun_model(3).triples) < 1e-12);
        let model = sun_model(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.2..3.0)).collect();
            let p = diag(&sp, &x);
            let a = scal(&sp, &p).unwrap();
            let b = model.scal(&x).unwrap();
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn riemann_contraction_matches_fast_ricci() {
        let sp = space("su3_full_flag");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = diag(&sp, &[0.7, 1.3, 2.1]);
        let s = s_tensor(&sp, &p).unwrap();
        let rm = riemann(&sp, &s);
        let r1 = ricci_from_riemann(&sp, &rm);
        let r2 = ricci_from_s(&sp, &s);
        assert!((r1.clone() - r2).amax() < 1e-12);
        assert!(linalg::asymmetry(&r1) < 1e-12);
        let sg = space("su3_group");
        let p = random_spd(&mut rng, 8);
        let s = s_tensor(&sg, &p).unwrap();
        assert!(s_identity_residual(&sg, &p, &s).unwrap() < 1e-12);
        let r1 = ricci_from_riemann(&sg, &riemann(&sg, &s));
        assert!(linalg::asymmetry(&r1) < 1e-10);
        assert!((r1 - ricci_from_s(&sg, &s)).amax() < 1e-12);
    }

    #[test]
    fn submersion_s_tensor_matches_general() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for id in ["su2", "su3_group", "aloff_wallach_1_2", "so4_group", "so4_slope_1_2", "su4_t2"] {
            let sp = space(id);
            let basis = crate::algebra::submersion_basis(&sp).unwrap();
            let coeffs: Vec<f64> = (0..basis.len()).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let mut p = basis.matrix(&coeffs) + Mat::identity(sp.dim_m(), sp.dim_m());
            p = linalg::sym_part(&p);
            let (pt, pn) = sp.split_blocks(&p);
            let a = s_tensor(&sp, &p).unwrap();
            let b = s_tensor_submersion(&sp, &pt, &pn).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).amax() < 1e-12, "{id}");
            }
            let ric = ricci(&sp, &p).unwrap();
            assert!(sp.off_block_norm(&ric) < 1e-10, "{id}");
        }
    }

    #[test]
    fn degenerate_vertical_reduces_to_base() {
        let sp = space("su3_group");
        let base = sp.base().unwrap();
        let pn = diag(&base, &[0.8, 1.1, 1.7]);
        let pt = Mat::zeros(2, 2);
        let s = s_tensor_submersion(&sp, &pt, &pn).unwrap();
        for a in 0..2 {
            for j in 0..8 {
                let expect_t = j >= 2;
                for k in 0..8 {
                    let ad = if expect_t && k >= 2 { -sp.cm(a, j, k) } else { 0.0 };
                    assert!((s[a][(k, j)] - ad).abs() < 1e-13);
                }
            }
        }
        let ric = ricci_submersion(&sp, &pt, &pn).unwrap();
        let ric_n = ricci(&base, &pn).unwrap();
        let (rt, rn) = sp.split_blocks(&ric);
        assert!(rt.amax() < 1e-12);
        assert!((rn - ric_n).amax() < 1e-12);
    }

    #[test]
    fn ricci_differential_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sp = space("su3_group");
        let pt = random_spd(&mut rng, 2) * 0.3;
        let base = sp.base().unwrap();
        let pn = diag(&base, &[0.9, 1.2, 1.6]);
        let bt = linalg::sym_part(&Mat::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0)));
        let bn = diag(&base, &[0.3, -0.2, 0.5]);
        let d = ricci_differential(&sp, &pt, &pn, &bt, &bn).unwrap();
        let h = 1e-5;
        let rp = ricci_submersion(&sp, &(&pt + &bt * h), &(&pn + &bn * h)).unwrap();
        let rm = ricci_submersion(&sp, &(&pt - &bt * h), &(&pn - &bn * h)).unwrap();
        let fd = (rp - rm) / (2.0 * h);
        assert!((&d - &fd).norm() <= 1e-6 * fd.norm(), "{} vs {}", d, fd);
    }

    #[test]
    fn oneill_identity_on_su3() {
        let sp = space("su3_group");
        let base = sp.base().unwrap();
        let t = triple_coefficients(&sp);
        let p = diag(&sp, &[0.3, 0.7, 1.0, 1.4, 0.9]);
        let d = oneill_diagnostics(&sp, &base, &t, &p).unwrap();
        assert!(d.identity_residual < 1e-10, "{d:?}");
        assert!((d.a_norm_sq - d.a_mixed_total).abs() < 1e-12);
        let (pt, pn) = sp.split_blocks(&p);
        let via = scal_submersion(&sp, &base, &pt, &pn).unwrap();
        assert!((via - d.scal_total).abs() < 1e-10);
    }
}
