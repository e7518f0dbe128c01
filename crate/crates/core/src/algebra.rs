//! Lie-algebra data, reductive decompositions and the invariant-metric basis.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{input, Error, Result};
use crate::linalg::{self, Mat};

/// Absolute tolerance for every algebraic identity check.
pub const TOL_ALG: f64 = 1e-9;

/// Structure constants `c[i][j][k]` (so that `[e_i, e_j] = Σ_k c_ij^k e_k`) together with an
/// Ad-invariant inner product `q`, both in an arbitrary basis.
#[derive(Clone, Debug)]
pub struct LieAlgebraSpec {
    dim: usize,
    c: Vec<f64>,
    q: Mat,
}

/// Zero entries below `1e-13` of the largest magnitude (rounding left by least squares).
fn snap_to_zero(values: &mut [f64]) {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in values.iter_mut() {
        if v.abs() <= 1e-13 * scale {
            *v = 0.0;
        }
    }
}

impl LieAlgebraSpec {
    /// Build from a dense `dim³` tensor laid out as `c[(i * dim + j) * dim + k]`.
    pub fn from_dense(dim: usize, c: Vec<f64>, q: Mat) -> Result<Self> {
        if dim == 0 {
            return input("Lie algebra dimension must be positive");
        }
        if c.len() != dim * dim * dim {
            return input(format!("structure tensor has {} entries, expected {}", c.len(), dim.pow(3)));
        }
        if q.nrows() != dim || q.ncols() != dim {
            return input(format!("Q is {}x{}, expected {dim}x{dim}", q.nrows(), q.ncols()));
        }
        if c.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return input("non-finite entry in Lie algebra data");
        }
        Ok(Self { dim, c, q })
    }

    /// Build from sparse `(i, j, k, value)` entries. A missing antisymmetric partner
    /// `(j, i, k)` is filled in as `-value`.
    pub fn from_sparse(dim: usize, entries: &[(usize, usize, usize, f64)], q: Mat) -> Result<Self> {
        let mut c = vec![0.0; dim * dim * dim];
        let mut set = vec![false; dim * dim * dim];
        let idx = |i: usize, j: usize, k: usize| (i * dim + j) * dim + k;
        for &(i, j, k, v) in entries {
            if i >= dim || j >= dim || k >= dim {
                return input(format!("structure constant index ({i},{j},{k}) out of range for dim {dim}"));
            }
            c[idx(i, j, k)] = v;
            set[idx(i, j, k)] = true;
        }
        for &(i, j, k, v) in entries {
            if !set[idx(j, i, k)] {
                c[idx(j, i, k)] = -v;
            }
        }
        Self::from_dense(dim, c, q)
    }

    /// Build from a basis of complex matrices closed under the commutator. The inner
    /// product is minus the Killing form, so the algebra must be compact semisimple.
    pub fn from_matrix_basis(basis: &[DMatrix<Complex64>]) -> Result<Self> {
        let dim = basis.len();
        if dim == 0 {
            return input("empty matrix basis");
        }
        let n = basis[0].nrows();
        let flatten = |m: &DMatrix<Complex64>| -> DVector<f64> {
            let mut v = DVector::zeros(2 * n * n);
            for (idx, z) in m.iter().enumerate() {
                v[2 * idx] = z.re;
                v[2 * idx + 1] = z.im;
            }
            v
        };
        let mut vmat = Mat::zeros(2 * n * n, dim);
        for (a, m) in basis.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return input("matrix basis elements differ in size");
            }
            vmat.set_column(a, &flatten(m));
        }
        let mut c = vec![0.0; dim * dim * dim];
        for i in 0..dim {
            for j in (i + 1)..dim {
                let comm = &basis[i] * &basis[j] - &basis[j] * &basis[i];
                let w = flatten(&comm);
                let coeffs = linalg::lstsq(&vmat, &w)?;
                let resid = (&vmat * &coeffs - &w).amax();
                if resid > 1e-10 {
                    return Err(Error::Input(format!("matrix basis not closed under brackets (residual {resid:e})")));
                }
                for k in 0..dim {
                    c[(i * dim + j) * dim + k] = coeffs[k];
                    c[(j * dim + i) * dim + k] = -coeffs[k];
                }
            }
        }
        snap_to_zero(&mut c);
        let mut alg = Self { dim, c, q: Mat::identity(dim, dim) };
        let mut q = -alg.killing_form();
        snap_to_zero(q.as_mut_slice());
        alg.q = linalg::sym_part(&q);
        Ok(alg)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn with_q(&self, q: Mat) -> Result<Self> {
        Self::from_dense(self.dim, self.c.clone(), q)
    }

    #[inline]
    pub fn c(&self, i: usize, j: usize, k: usize) -> f64 {
        self.c[(i * self.dim + j) * self.dim + k]
    }

    pub fn structure_tensor(&self) -> &[f64] {
        &self.c
    }

    /// `[X, Y] = Σ X_i Y_j c_ij^k e_k`.
    pub fn bracket(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim || y.len() != self.dim {
            return input(format!("bracket arguments have lengths {} and {}, expected {}", x.len(), y.len(), self.dim));
        }
        Ok(self.bracket_unchecked(x, y))
    }

    fn bracket_unchecked(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n];
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let w = x[i] * y[j];
                if w == 0.0 {
                    continue;
                }
                let row = &self.c[(i * n + j) * n..(i * n + j + 1) * n];
                for k in 0..n {
                    out[k] += w * row[k];
                }
            }
        }
        out
    }

    /// Matrix of `ad(e_i)`: column `j` holds `[e_i, e_j]`.
    pub fn ad(&self, i: usize) -> Mat {
        let n = self.dim;
        Mat::from_fn(n, n, |k, j| self.c(i, j, k))
    }

    pub fn killing_form(&self) -> Mat {
        let ads: Vec<Mat> = (0..self.dim).map(|i| self.ad(i)).collect();
        Mat::from_fn(self.dim, self.dim, |i, j| linalg::trace_product(&ads[i], &ads[j]))
    }

    pub fn antisymmetry_residual(&self) -> f64 {
        let n = self.dim;
        let mut r: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    r = r.max((self.c(i, j, k) + self.c(j, i, k)).abs());
                }
            }
        }
        r
    }

    pub fn jacobi_residual(&self) -> f64 {
        let n = self.dim;
        let mut r: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let mut s = 0.0;
                        for m in 0..n {
                            s += self.c(i, j, m) * self.c(m, k, l)
                                + self.c(j, k, m) * self.c(m, i, l)
                                + self.c(k, i, m) * self.c(m, j, l);
                        }
                        r = r.max(s.abs());
                    }
                }
            }
        }
        r
    }

    /// Max over basis triples of `|Q([e_i,e_j],e_l) + Q(e_j,[e_i,e_l])|`.
    pub fn q_invariance_residual(&self) -> f64 {
        let n = self.dim;
        let mut r: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += self.c(i, j, k) * self.q[(k, l)] + self.c(i, l, k) * self.q[(j, k)];
                    }
                    r = r.max(s.abs());
                }
            }
        }
        r
    }
}

/// A reductive homogeneous space `G/H` with a fixed module decomposition of `m`.
#[derive(Clone, Debug)]
pub struct HomogeneousSpaceSpec {
    pub algebra: LieAlgebraSpec,
    /// Vectors (in the algebra basis) spanning the isotropy subalgebra.
    pub h_basis: Vec<Vec<f64>>,
    /// Orthogonal maps of the algebra (in its basis) generating the component group of `H`.
    pub isotropy_generators: Vec<Mat>,
    /// Each module is a list of algebra basis indices.
    pub modules: Vec<Vec<usize>>,
    /// The first `r` modules span the torus directions `t`, the rest span `n`.
    pub toral_split: Option<usize>,
}

/// A validated space with its cached Q-orthonormal adapted frame.
///
/// Frame order is `h` first and then the modules in order, so with a toral split
/// the `m`-coordinates are `t` followed by `n`.
#[derive(Clone, Debug)]
pub struct HomogeneousSpace {
    spec: HomogeneousSpaceSpec,
    frame: Mat,
    dim_h: usize,
    module_offsets: Vec<usize>,
    dim_t: usize,
    /// Structure constants in the frame, `n³` entries.
    cf: Vec<f64>,
    /// Isotropy generators restricted to `m`, in the frame.
    gens_m: Vec<Mat>,
    /// `ad(h_a)|m` in the frame for every frame vector of `h`.
    ad_h_m: Vec<Mat>,
}

impl HomogeneousSpace {
    pub fn new(spec: HomogeneousSpaceSpec) -> Result<Self> {
        let n = spec.algebra.dim();
        for (a, v) in spec.h_basis.iter().enumerate() {
            if v.len() != n {
                return input(format!("h_basis vector {a} has length {}, expected {n}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return input(format!("h_basis vector {a} is not finite"));
            }
        }
        let mut seen = vec![false; n];
        for (p, module) in spec.modules.iter().enumerate() {
            if module.is_empty() {
                return input(format!("module {p} is empty"));
            }
            for &i in module {
                if i >= n {
                    return input(format!("module {p} index {i} out of range"));
                }
                if seen[i] {
                    return input(format!("basis index {i} appears in more than one module"));
                }
                seen[i] = true;
            }
        }
        let dim_m: usize = spec.modules.iter().map(|m| m.len()).sum();
        if let Some(r) = spec.toral_split {
            if r == 0 || r >= spec.modules.len() {
                return input(format!("toral_split {r} must lie strictly between 0 and the module count"));
            }
        }
        for (a, g) in spec.isotropy_generators.iter().enumerate() {
            if g.nrows() != n || g.ncols() != n {
                return input(format!("isotropy generator {a} has wrong shape"));
            }
        }
        let q = spec.algebra.q().clone();
        if linalg::min_eigenvalue(&q) <= 0.0 || linalg::asymmetry(&q) > TOL_ALG {
            return input("Q is not symmetric positive definite");
        }

        let h_vecs: Vec<DVector<f64>> = spec.h_basis.iter().map(|v| DVector::from_column_slice(v)).collect();
        let h_frame = linalg::orthonormalize(&h_vecs, &q, 1e-10);
        let dim_h = h_frame.len();
        if dim_h + dim_m != n {
            return input(format!("dim h ({dim_h}) + dim m ({dim_m}) does not equal dim g ({n})"));
        }
        let mut cols = h_frame.clone();
        let mut module_offsets = vec![0];
        for (p, module) in spec.modules.iter().enumerate() {
            let mut prior = cols.clone();
            let raw: Vec<DVector<f64>> = module.iter().map(|&i| DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 })).collect();
            prior.extend(raw);
            let orth = linalg::orthonormalize(&prior, &q, 1e-10);
            if orth.len() != cols.len() + module.len() {
                return input(format!("module {p} is linearly dependent on h or earlier modules"));
            }
            cols = orth;
            module_offsets.push(cols.len() - dim_h);
        }
        let frame = Mat::from_columns(&cols);
        let dim_t = match spec.toral_split {
            Some(r) => module_offsets[r],
            None => 0,
        };

        let alg = &spec.algebra;
        let finv = frame.transpose() * &q;
        let mut cf = vec![0.0; n * n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let br = alg.bracket_unchecked(frame.column(a).as_slice(), frame.column(b).as_slice());
                let coords = &finv * DVector::from_vec(br);
                for d in 0..n {
                    cf[(a * n + b) * n + d] = coords[d];
                    cf[(b * n + a) * n + d] = -coords[d];
                }
            }
        }
        let gens_m = spec
            .isotropy_generators
            .iter()
            .map(|g| {
                let gf = &finv * g * &frame;
                gf.view((dim_h, dim_h), (dim_m, dim_m)).into_owned()
            })
            .collect();
        let ad_h_m = (0..dim_h)
            .map(|a| Mat::from_fn(dim_m, dim_m, |k, j| cf[(a * n + dim_h + j) * n + dim_h + k]))
            .collect();
        Ok(Self { spec, frame, dim_h, module_offsets, dim_t, cf, gens_m, ad_h_m })
    }

    pub fn spec(&self) -> &HomogeneousSpaceSpec {
        &self.spec
    }

    pub fn dim_g(&self) -> usize {
        self.spec.algebra.dim()
    }

    pub fn dim_h(&self) -> usize {
        self.dim_h
    }

    pub fn dim_m(&self) -> usize {
        *self.module_offsets.last().unwrap()
    }

    /// Dimension of the torus directions (0 without a toral split).
    pub fn dim_t(&self) -> usize {
        self.dim_t
    }

    pub fn dim_n(&self) -> usize {
        self.dim_m() - self.dim_t
    }

    pub fn has_toral_split(&self) -> bool {
        self.spec.toral_split.is_some()
    }

    pub fn module_count(&self) -> usize {
        self.spec.modules.len()
    }

    /// `m`-coordinate range of module `p`.
    pub fn module_range(&self, p: usize) -> std::ops::Range<usize> {
        self.module_offsets[p]..self.module_offsets[p + 1]
    }

    pub fn module_dims(&self) -> Vec<usize> {
        (0..self.module_count()).map(|p| self.module_range(p).len()).collect()
    }

    /// Columns are the adapted frame vectors in the algebra basis.
    pub fn frame(&self) -> &Mat {
        &self.frame
    }

    /// Structure constant in the adapted frame (indices over all of `g`).
    #[inline]
    pub fn cg(&self, a: usize, b: usize, d: usize) -> f64 {
        let n = self.dim_g();
        self.cf[(a * n + b) * n + d]
    }

    /// Structure constant with all three indices in `m`.
    #[inline]
    pub fn cm(&self, i: usize, j: usize, k: usize) -> f64 {
        let h = self.dim_h;
        self.cg(h + i, h + j, h + k)
    }

    /// `ad(h_a)|m` for each frame vector of `h`.
    pub fn ad_h_on_m(&self) -> &[Mat] {
        &self.ad_h_m
    }

    /// `ad(T)|m` for each frame vector of `t`, with the `h`-component dropped.
    pub fn ad_t_on_m(&self) -> Vec<Mat> {
        let m = self.dim_m();
        (0..self.dim_t).map(|a| Mat::from_fn(m, m, |k, j| self.cm(a, j, k))).collect()
    }

    pub fn generators_on_m(&self) -> &[Mat] {
        &self.gens_m
    }

    /// The base `G/K` of the torus fibration, with `k = h + t` and the `n`-modules.
    /// Its `m`-coordinates coincide with the `n`-coordinates of this space.
    pub fn base(&self) -> Result<HomogeneousSpace> {
        let r = self.spec.toral_split.ok_or_else(|| Error::Input("space has no toral split".into()))?;
        let mut h_basis = self.spec.h_basis.clone();
        for module in &self.spec.modules[..r] {
            for &i in module {
                let mut v = vec![0.0; self.dim_g()];
                v[i] = 1.0;
                h_basis.push(v);
            }
        }
        HomogeneousSpace::new(HomogeneousSpaceSpec {
            algebra: self.spec.algebra.clone(),
            h_basis,
            isotropy_generators: self.spec.isotropy_generators.clone(),
            modules: self.spec.modules[r..].to_vec(),
            toral_split: None,
        })
    }

    /// Split a metric on `m` into its `t` and `n` diagonal blocks.
    pub fn split_blocks(&self, p: &Mat) -> (Mat, Mat) {
        let t = self.dim_t;
        let nn = self.dim_n();
        (p.view((0, 0), (t, t)).into_owned(), p.view((t, t), (nn, nn)).into_owned())
    }

    /// Norm of the `t`-`n` off-diagonal block.
    pub fn off_block_norm(&self, p: &Mat) -> f64 {
        let t = self.dim_t;
        let nn = self.dim_n();
        p.view((0, t), (t, nn)).norm()
    }
}

/// One line of a validation report.
#[derive(Clone, Debug, serde::Serialize)]
pub struct Check {
    pub name: &'static str,
    pub residual: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &'static str, residual: f64) {
        self.checks.push(Check { name, residual, passed: residual <= TOL_ALG, detail: String::new() });
    }
}

/// Check every structural hypothesis on the algebra and the decomposition.
pub fn validate(spec: &HomogeneousSpaceSpec) -> ValidationReport {
    let mut rep = ValidationReport { checks: Vec::new() };
    let alg = &spec.algebra;
    let n = alg.dim();
    let q = alg.q();

    let q_res = if linalg::min_eigenvalue(q) > 0.0 { linalg::asymmetry(q) } else { f64::INFINITY };
    rep.push("q_symmetric_positive_definite", q_res);
    rep.push("structure_antisymmetry", alg.antisymmetry_residual());
    rep.push("jacobi_identity", alg.jacobi_residual());
    rep.push("q_ad_invariance", alg.q_invariance_residual());

    let unit = |i: usize| DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
    let mut hm: f64 = 0.0;
    let mut mm: f64 = 0.0;
    let shapes_ok = spec.h_basis.iter().all(|v| v.len() == n) && spec.modules.iter().flatten().all(|&i| i < n);
    if shapes_ok {
        for v in &spec.h_basis {
            let hv = DVector::from_column_slice(v);
            for &i in spec.modules.iter().flatten() {
                hm = hm.max((hv.transpose() * q * unit(i))[(0, 0)].abs());
            }
        }
        for (p, a) in spec.modules.iter().enumerate() {
            for b in &spec.modules[p + 1..] {
                for &i in a {
                    for &j in b {
                        mm = mm.max(q[(i, j)].abs());
                    }
                }
            }
        }
    }
    rep.push("m_orthogonal_to_h", if shapes_ok { hm } else { f64::INFINITY });
    rep.push("modules_orthogonal", if shapes_ok { mm } else { f64::INFINITY });

    let space = match HomogeneousSpace::new(spec.clone()) {
        Ok(s) => s,
        Err(e) => {
            rep.checks.push(Check { name: "adapted_frame", residual: f64::INFINITY, passed: false, detail: e.to_string() });
            return rep;
        }
    };
    rep.push("adapted_frame", 0.0);

    let dh = space.dim_h();
    let dm = space.dim_m();
    let module_of: Vec<usize> = (0..dm)
        .map(|i| (0..space.module_count()).find(|&p| space.module_range(p).contains(&i)).unwrap())
        .collect();

    let mut sub: f64 = 0.0;
    for a in 0..dh {
        for b in 0..dh {
            for i in 0..dm {
                sub = sub.max(space.cg(a, b, dh + i).abs());
            }
        }
    }
    rep.push("h_subalgebra", sub);

    let mut inv: f64 = 0.0;
    for a in 0..dh {
        for i in 0..dm {
            for b in 0..dh {
                inv = inv.max(space.cg(a, dh + i, b).abs());
            }
            for k in 0..dm {
                if module_of[k] != module_of[i] {
                    inv = inv.max(space.cg(a, dh + i, dh + k).abs());
                }
            }
        }
    }
    rep.push("modules_ad_h_invariant", inv);

    let frame = space.frame();
    let finv = frame.transpose() * q;
    let (mut orth, mut auto, mut pres): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for g in &spec.isotropy_generators {
        orth = orth.max((g.transpose() * q * g - q).amax());
        let gf = &finv * g * frame;
        for a in 0..n {
            for b in 0..n {
                // g[e_a, e_b] - [g e_a, g e_b] in the frame
                let mut lhs = vec![0.0; n];
                for d in 0..n {
                    let c = space.cg(a, b, d);
                    if c != 0.0 {
                        for e in 0..n {
                            lhs[e] += c * gf[(e, d)];
                        }
                    }
                }
                for d in 0..n {
                    let mut rhs = 0.0;
                    for x in 0..n {
                        let gx = gf[(x, a)];
                        if gx == 0.0 {
                            continue;
                        }
                        for y in 0..n {
                            rhs += gx * gf[(y, b)] * space.cg(x, y, d);
                        }
                    }
                    auto = auto.max((lhs[d] - rhs).abs());
                }
            }
        }
        let block = |i: usize| if i < dh { usize::MAX } else { module_of[i - dh] };
        for r in 0..n {
            for c in 0..n {
                if block(r) != block(c) {
                    pres = pres.max(gf[(r, c)].abs());
                }
            }
        }
    }
    rep.push("generators_orthogonal", orth);
    rep.push("generators_automorphisms", auto);
    rep.push("generators_preserve_decomposition", pres);

    if spec.toral_split.is_some() {
        let dt = space.dim_t();
        let k_idx: Vec<usize> = (0..dh + dt).collect();
        let mut toral: f64 = 0.0;
        for &a in &k_idx {
            for &b in &k_idx {
                for i in 0..dm {
                    toral = toral.max(space.cg(a, b, dh + i).abs());
                }
            }
        }
        rep.push("toral_subalgebra", toral);

        let mut ninv: f64 = 0.0;
        for &a in &k_idx {
            for j in dt..dm {
                for d in 0..dh + dt {
                    ninv = ninv.max(space.cg(a, dh + j, d).abs());
                }
            }
        }
        rep.push("n_ad_k_invariant", ninv);

        let dn = space.dim_n();
        let mut stacked = Mat::zeros(k_idx.len() * dn, dn);
        for (row, &a) in k_idx.iter().enumerate() {
            for j in 0..dn {
                for k in 0..dn {
                    stacked[(row * dn + k, j)] = space.cg(a, dh + dt + j, dh + dt + k);
                }
            }
        }
        let (_, sv) = linalg::null_space(&stacked, 0.0);
        let smin = sv.first().copied().unwrap_or(f64::INFINITY);
        rep.checks.push(Check {
            name: "k_maximal",
            residual: smin,
            passed: smin > TOL_ALG,
            detail: format!("smallest singular value of stacked ad(k)|n = {smin:e}"),
        });
    }
    rep
}

/// Orthonormal (trace pairing) basis of the invariant symmetric endomorphisms of `m`.
#[derive(Clone, Debug)]
pub struct InvariantBasis {
    pub elements: Vec<Mat>,
    /// Number of leading elements supported on the `t` block.
    pub t_block_dim: usize,
}

impl InvariantBasis {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn matrix(&self, coeffs: &[f64]) -> Mat {
        let m = self.elements.first().map(|e| e.nrows()).unwrap_or(0);
        let mut out = Mat::zeros(m, m);
        for (x, e) in coeffs.iter().zip(&self.elements) {
            out += e * *x;
        }
        out
    }

    pub fn coefficients(&self, p: &Mat) -> Vec<f64> {
        self.elements.iter().map(|e| linalg::trace_product(e, p)).collect()
    }

    /// Operator norms of the elements; dividing by these gives the "module scale"
    /// coordinates in which `Id_module` has coefficient 1.
    pub fn operator_scales(&self) -> Vec<f64> {
        self.elements
            .iter()
            .map(|e| {
                let ev = linalg::sym_eigenvalues(e);
                ev.iter().fold(0.0f64, |a, v| a.max(v.abs()))
            })
            .collect()
    }

    /// Matrix from module-scale coordinates.
    pub fn matrix_scaled(&self, coords: &[f64]) -> Mat {
        let s = self.operator_scales();
        let c: Vec<f64> = coords.iter().zip(&s).map(|(x, s)| x / s).collect();
        self.matrix(&c)
    }

    pub fn coefficients_scaled(&self, p: &Mat) -> Vec<f64> {
        let s = self.operator_scales();
        self.coefficients(p).iter().zip(&s).map(|(x, s)| x * s).collect()
    }
}

enum Block {
    Diagonal(std::ops::Range<usize>),
    OffDiagonal(std::ops::Range<usize>, std::ops::Range<usize>),
}

/// Invariant symmetric matrices supported on `block`, commuting with each operator
/// in `ops` and fixed by conjugation with each of `gens`.
fn invariant_block(space: &HomogeneousSpace, block: Block, ops: &[Mat], gens: &[Mat]) -> Result<Vec<Mat>> {
    let m = space.dim_m();
    let mut params: Vec<Mat> = Vec::new();
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    match &block {
        Block::Diagonal(r) => {
            for i in r.clone() {
                for j in i..r.end {
                    let mut e = Mat::zeros(m, m);
                    if i == j {
                        e[(i, i)] = 1.0;
                    } else {
                        e[(i, j)] = r2;
                        e[(j, i)] = r2;
                    }
                    params.push(e);
                }
            }
        }
        Block::OffDiagonal(a, b) => {
            for i in a.clone() {
                for j in b.clone() {
                    let mut e = Mat::zeros(m, m);
                    e[(i, j)] = r2;
                    e[(j, i)] = r2;
                    params.push(e);
                }
            }
        }
    }
    if params.is_empty() {
        return Ok(Vec::new());
    }
    let rows = (ops.len() + gens.len()) * m * m;
    let mut cons = Mat::zeros(rows.max(1), params.len());
    for (col, e) in params.iter().enumerate() {
        let mut off = 0;
        for op in ops {
            let comm = e * op - op * e;
            for (k, v) in comm.iter().enumerate() {
                cons[(off + k, col)] = *v;
            }
            off += m * m;
        }
        for g in gens {
            let diff = g * e * g.transpose() - e;
            for (k, v) in diff.iter().enumerate() {
                cons[(off + k, col)] = *v;
            }
            off += m * m;
        }
    }
    let (ns, sv) = linalg::null_space(&cons, 1e-8);
    // A clean gap between the kernel and the rest is required.
    let smallest_nonzero = sv.iter().copied().find(|&s| s > 1e-8).unwrap_or(f64::INFINITY);
    if smallest_nonzero < 1e-5 {
        return Err(Error::Numerical(format!(
            "invariant constraint system is ill-conditioned (singular value {smallest_nonzero:e} near the kernel threshold)"
        )));
    }
    // Module identities go first so the basis is canonical.
    let mut seeds: Vec<DVector<f64>> = Vec::new();
    if let Block::Diagonal(r) = &block {
        for p in 0..space.module_count() {
            let mr = space.module_range(p);
            if mr.start >= r.start && mr.end <= r.end {
                let mut id = Mat::zeros(m, m);
                for i in mr.clone() {
                    id[(i, i)] = 1.0;
                }
                let coords = DVector::from_iterator(params.len(), params.iter().map(|e| linalg::trace_product(e, &id)));
                let in_kernel = (&cons * &coords).amax();
                if in_kernel > 1e-8 {
                    return Err(Error::Numerical(format!("identity on module {p} is not invariant (residual {in_kernel:e})")));
                }
                seeds.push(coords);
            }
        }
    }
    let nullity = ns.ncols();
    for c in 0..nullity {
        seeds.push(ns.column(c).into_owned());
    }
    let eye = Mat::identity(params.len(), params.len());
    let orth = linalg::orthonormalize(&seeds, &eye, 1e-6);
    if orth.len() != nullity {
        return Err(Error::Numerical(format!("invariant basis rank {} differs from kernel dimension {nullity}", orth.len())));
    }
    Ok(orth
        .iter()
        .map(|v| {
            let mut e = Mat::zeros(m, m);
            for (x, p) in v.iter().zip(&params) {
                e += p * *x;
            }
            e
        })
        .collect())
}

/// Basis of `Sym(m)^{Ad(H)}`. With a toral split the elements are ordered as the `t`
/// block (`t_block_dim` of them), the `n` block, then the mixed `t`-`n` part.
pub fn invariant_sym_basis(space: &HomogeneousSpace) -> Result<InvariantBasis> {
    let ops = space.ad_h_on_m();
    let gens = space.generators_on_m();
    let m = space.dim_m();
    if !space.has_toral_split() {
        let elements = invariant_block(space, Block::Diagonal(0..m), ops, gens)?;
        return Ok(InvariantBasis { elements, t_block_dim: 0 });
    }
    let t = space.dim_t();
    let mut elements = invariant_block(space, Block::Diagonal(0..t), ops, gens)?;
    let t_block_dim = elements.len();
    elements.extend(invariant_block(space, Block::Diagonal(t..m), ops, gens)?);
    elements.extend(invariant_block(space, Block::OffDiagonal(0..t, t..m), ops, gens)?);
    Ok(InvariantBasis { elements, t_block_dim })
}

/// Basis of the submersion metrics `Sym(t)^{Ad(H)} ⊕ Sym(n)^{Ad(K)}`, `t` part first.
pub fn submersion_basis(space: &HomogeneousSpace) -> Result<InvariantBasis> {
    if !space.has_toral_split() {
        return input("submersion basis requires a toral split");
    }
    let t = space.dim_t();
    let m = space.dim_m();
    let h_ops = space.ad_h_on_m();
    let mut k_ops: Vec<Mat> = h_ops.to_vec();
    k_ops.extend(space.ad_t_on_m());
    let gens = space.generators_on_m();
    let mut elements = invariant_block(space, Block::Diagonal(0..t), h_ops, gens)?;
    let t_block_dim = elements.len();
    elements.extend(invariant_block(space, Block::Diagonal(t..m), &k_ops, gens)?);
    Ok(InvariantBasis { elements, t_block_dim })
}

/// Fully symmetric table of `[ijk] = Σ Q([e_α,e_β],e_γ)²` over modules.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleTable {
    n: usize,
    data: Vec<f64>,
}

impl TripleTable {
    pub fn new(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n * n] }
    }

    pub fn modules(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    /// Set `[ijk]` and all its permutations.
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let n = self.n;
        for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
            self.data[(a * n + b) * n + c] = v;
        }
    }

    pub fn max_abs_diff(&self, other: &TripleTable) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }
}

/// Triple coefficients from structure constants in `m`-coordinates given by `c`.
pub fn triple_coefficients_from(space: &HomogeneousSpace, c: impl Fn(usize, usize, usize) -> f64) -> TripleTable {
    let l = space.module_count();
    let mut table = TripleTable::new(l);
    for p in 0..l {
        for q in 0..l {
            for r in 0..l {
                let mut s = 0.0;
                for a in space.module_range(p) {
                    for b in space.module_range(q) {
                        for g in space.module_range(r) {
                            let v = c(a, b, g);
                            s += v * v;
                        }
                    }
                }
                table.data[(p * l + q) * l + r] = s;
            }
        }
    }
    table
}

pub fn triple_coefficients(space: &HomogeneousSpace) -> TripleTable {
    triple_coefficients_from(space, |a, b, g| space.cm(a, b, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn su2() -> LieAlgebraSpec {
        LieAlgebraSpec::from_sparse(3, &[(0, 1, 2, 1.0), (1, 2, 0, 1.0), (2, 0, 1, 1.0)], Mat::identity(3, 3)).unwrap()
    }

    #[test]
    fn su2_bracket() {
        let a = su2();
        assert_eq!(a.bracket(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        let x = [0.3, -1.2, 0.7];
        assert!(a.bracket(&x, &x).unwrap().iter().all(|v| v.abs() < 1e-15));
        assert!(a.bracket(&x, &[1.0]).is_err());
        assert!(a.jacobi_residual() < 1e-15);
        assert!(a.q_invariance_residual() < 1e-15);
    }

    fn catalog_space(id: &str) -> HomogeneousSpace {
        HomogeneousSpace::new(crate::catalog::lookup(id).unwrap().space_spec().unwrap().clone()).unwrap()
    }

    #[test]
    fn catalog_spaces_validate() {
        for e in crate::catalog::catalog() {
            if let Some(spec) = e.space_spec() {
                let rep = validate(spec);
                assert!(rep.passed(), "{}: {:?}", e.id, rep.checks.iter().filter(|c| !c.passed).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn invariant_basis_dimensions() {
        let cases = [
            ("su3_full_flag", 3, 0),
            ("so4_full_flag", 2, 0),
            ("su4_full_flag", 6, 0),
            ("su3_group", 36, 3),
            ("aloff_wallach_1_2", 4, 1),
            ("so4_group", 21, 3),
            ("so4_slope_1_2", 3, 1),
            ("su4_t2", 7, 1),
            ("su2", 6, 1),
        ];
        for (id, total, nu) in cases {
            let sp = catalog_space(id);
            let b = invariant_sym_basis(&sp).unwrap();
            assert_eq!((b.len(), b.t_block_dim), (total, nu), "{id}");
            for (i, e) in b.elements.iter().enumerate() {
                assert!(linalg::asymmetry(e) < 1e-12);
                for op in sp.ad_h_on_m() {
                    assert!((e * op - op * e).amax() < 1e-10, "{id}");
                }
                for (j, f) in b.elements.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((linalg::trace_product(e, f) - expect).abs() < 1e-10);
                }
            }
        }
        let flag = catalog_space("su3_full_flag");
        let b = invariant_sym_basis(&flag).unwrap();
        let back = b.coefficients_scaled(&b.matrix_scaled(&[1.0, 2.0, 3.0]));
        assert!(back.iter().zip([1.0, 2.0, 3.0]).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn submersion_basis_dimensions() {
        for (id, total, nu) in [("su3_group", 6, 3), ("su4_group", 12, 6), ("su4_s1", 9, 3), ("su4_t2", 7, 1), ("so4_group", 5, 3), ("aloff_wallach_1_2", 4, 1)] {
            let sp = catalog_space(id);
            let b = submersion_basis(&sp).unwrap();
            assert_eq!((b.len(), b.t_block_dim), (total, nu), "{id}");
        }
    }

    #[test]
    fn partial_torus_breaks_maximality() {
        let mut spec = crate::catalog::lookup("su3_group").unwrap().space_spec().unwrap().clone();
        spec.toral_split = Some(1);
        let rep = validate(&spec);
        assert!(!rep.get("k_maximal").unwrap().passed);
        assert!(rep.get("toral_subalgebra").unwrap().passed);
    }

    #[test]
    fn base_shares_horizontal_frame() {
        let sp = catalog_space("su3_group");
        let base = sp.base().unwrap();
        let t = sp.dim_t();
        for i in 0..base.dim_m() {
            for j in 0..base.dim_m() {
                for k in 0..base.dim_m() {
                    assert!((base.cm(i, j, k) - sp.cm(t + i, t + j, t + k)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sparse_index_out_of_range() {
        assert!(LieAlgebraSpec::from_sparse(2, &[(0, 1, 5, 1.0)], Mat::identity(2, 2)).is_err());
    }

    #[test]
    fn perturbed_q_fails_invariance() {
        let a = su2();
        let mut q = Mat::identity(3, 3);
        q[(0, 0)] = 1.5;
        let bad = a.with_q(q).unwrap();
        let spec = HomogeneousSpaceSpec {
            algebra: bad,
            h_basis: vec![],
            isotropy_generators: vec![],
            modules: vec![vec![0, 1, 2]],
            toral_split: None,
        };
        let rep = validate(&spec);
        assert!(!rep.get("q_ad_invariance").unwrap().passed);
        assert!(rep.get("jacobi_identity").unwrap().passed);
    }
}
