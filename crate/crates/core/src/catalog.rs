//! Example spaces: full flag manifolds, compact groups and circle bundles over them,
//! plus closed-form diagonal scalar-curvature models.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::algebra::{HomogeneousSpaceSpec, LieAlgebraSpec, TripleTable};
use crate::error::{input, Error, Result};

/// A known Einstein metric in module-scale coordinates (coefficient of `Id` on each module).
#[derive(Clone, Debug, Serialize)]
pub struct KnownEinstein {
    pub label: String,
    pub coords: Vec<f64>,
    pub coindex: Option<usize>,
}

/// Scalar curvature of a module-diagonal metric as a closed form in the module scales:
/// `scal = Σ d_i b_i / (2 x_i) − ¼ Σ_{i,j,k} [ijk] x_k / (x_i x_j)`.
#[derive(Clone, Debug)]
pub struct DiagonalModel {
    pub dims: Vec<usize>,
    /// Casimir-type constants; 1 for every module when Q is minus the Killing form.
    pub b: Vec<f64>,
    pub triples: TripleTable,
}

impl DiagonalModel {
    pub fn new(dims: Vec<usize>, triples: TripleTable) -> Self {
        let b = vec![1.0; dims.len()];
        Self { dims, b, triples }
    }

    pub fn modules(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().sum()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.modules() {
            return input(format!("expected {} coefficients, got {}", self.modules(), x.len()));
        }
        if x.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return input("diagonal model coefficients must be positive and finite");
        }
        Ok(())
    }

    pub fn scal(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let l = self.modules();
        let mut s = 0.0;
        for i in 0..l {
            s += self.dims[i] as f64 * self.b[i] / (2.0 * x[i]);
        }
        for i in 0..l {
            for j in 0..l {
                for k in 0..l {
                    let c = self.triples.get(i, j, k);
                    if c != 0.0 {
                        s -= 0.25 * c * x[k] / (x[i] * x[j]);
                    }
                }
            }
        }
        Ok(s)
    }

    /// `log det P` for the diagonal metric.
    pub fn log_det(&self, x: &[f64]) -> f64 {
        self.dims.iter().zip(x).map(|(d, v)| *d as f64 * v.ln()).sum()
    }

    /// `det(P)^{1/m} scal`.
    pub fn normalized_scal(&self, x: &[f64]) -> Result<f64> {
        let s = self.scal(x)?;
        Ok((self.log_det(x) / self.dim() as f64).exp() * s)
    }

    /// `∂scal/∂x_k`.
    pub fn scal_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let l = self.modules();
        let mut g: Vec<f64> = (0..l).map(|i| -(self.dims[i] as f64) * self.b[i] / (2.0 * x[i] * x[i])).collect();
        for i in 0..l {
            for j in 0..l {
                for k in 0..l {
                    let c = self.triples.get(i, j, k);
                    if c == 0.0 {
                        continue;
                    }
                    let w = 0.25 * c;
                    g[k] -= w / (x[i] * x[j]);
                    g[i] += w * x[k] / (x[i] * x[i] * x[j]);
                    g[j] += w * x[k] / (x[i] * x[j] * x[j]);
                }
            }
        }
        Ok(g)
    }

    /// Diagonal entry of the Ricci form on each module: `r_k = −(x_k² / d_k) ∂scal/∂x_k`.
    pub fn ricci_eigenvalues(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.scal_gradient(x)?;
        Ok((0..self.modules()).map(|k| -x[k] * x[k] / self.dims[k] as f64 * g[k]).collect())
    }

    /// Module permutations that preserve dimensions and the triple table.
    pub fn symmetries(&self) -> Vec<Vec<usize>> {
        let l = self.modules();
        let mut out = Vec::new();
        if l > 7 {
            return vec![(0..l).collect()];
        }
        let mut perm: Vec<usize> = (0..l).collect();
        permute(&mut perm, 0, &mut |p| {
            if (0..l).any(|i| self.dims[p[i]] != self.dims[i] || self.b[p[i]] != self.b[i]) {
                return;
            }
            for i in 0..l {
                for j in 0..l {
                    for k in 0..l {
                        if (self.triples.get(p[i], p[j], p[k]) - self.triples.get(i, j, k)).abs() > 1e-12 {
                            return;
                        }
                    }
                }
            }
            out.push(p.to_vec());
        });
        out
    }
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

#[derive(Clone, Debug)]
pub enum Representation {
    StructureConstants(Box<HomogeneousSpaceSpec>),
    DiagonalModel,
}

#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub id: String,
    pub description: String,
    pub representation: Representation,
    /// Closed-form scalar model for this space (or for its base, when the entry is a fibration).
    pub model: Option<DiagonalModel>,
    /// Einstein metrics of this space, or of the base for a fibration.
    pub known_einstein: Vec<KnownEinstein>,
    pub known_coindex: Option<usize>,
    pub symmetry_permutations: Vec<Vec<usize>>,
    /// Catalog id of the base `G/K` when the entry carries a toral split.
    pub base_id: Option<String>,
}

impl CatalogEntry {
    pub fn space_spec(&self) -> Option<&HomogeneousSpaceSpec> {
        match &self.representation {
            Representation::StructureConstants(s) => Some(s),
            Representation::DiagonalModel => None,
        }
    }

    pub fn einstein(&self, label: &str) -> Option<&KnownEinstein> {
        self.known_einstein.iter().find(|k| k.label == label)
    }
}

fn cm(n: usize, f: impl Fn(usize, usize) -> Complex64) -> DMatrix<Complex64> {
    DMatrix::from_fn(n, n, f)
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// `i · diag(w)` for a real trace-free weight vector.
fn cartan_element(w: &[f64]) -> DMatrix<Complex64> {
    let n = w.len();
    cm(n, |a, b| if a == b { Complex64::new(0.0, w[a]) } else { zero() })
}

/// The two real root vectors `E_ij − E_ji` and `i(E_ij + E_ji)` in `su(n)`.
fn root_pair(n: usize, i: usize, j: usize) -> [DMatrix<Complex64>; 2] {
    let a = cm(n, |r, c| {
        if r == i && c == j {
            Complex64::new(1.0, 0.0)
        } else if r == j && c == i {
            Complex64::new(-1.0, 0.0)
        } else {
            zero()
        }
    });
    let s = cm(n, |r, c| if (r == i && c == j) || (r == j && c == i) { Complex64::new(0.0, 1.0) } else { zero() });
    [a, s]
}

/// Mutually trace-orthogonal Cartan weights `(1,…,1,−k,0,…)`.
fn standard_cartan(n: usize) -> Vec<Vec<f64>> {
    (1..n)
        .map(|k| {
            let mut w = vec![0.0; n];
            for x in w.iter_mut().take(k) {
                *x = 1.0;
            }
            w[k] = -(k as f64);
            w
        })
        .collect()
}

/// Gram-Schmidt completion of `first` (trace-orthogonal, trace-free weights) to a basis
/// of the trace-free diagonal weights.
fn complete_cartan(n: usize, first: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut out: Vec<Vec<f64>> = first.to_vec();
    for cand in standard_cartan(n) {
        let mut v = cand.clone();
        for u in &out {
            let c = dot(&v, u) / dot(u, u);
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= c * ui;
            }
        }
        if dot(&v, &v).sqrt() > 1e-9 {
            out.push(v);
        }
        if out.len() == n - 1 {
            break;
        }
    }
    out
}

/// Root pairs of `su(n)` in module order. For `n = 4` this is the order
/// `12, 23, 24, 13, 14, 34` used by the closed-form model.
pub fn su_root_order(n: usize) -> Vec<(usize, usize)> {
    match n {
        3 => vec![(0, 1), (1, 2), (0, 2)],
        4 => vec![(0, 1), (1, 2), (1, 3), (0, 2), (0, 3), (2, 3)],
        _ => {
            let mut v = Vec::new();
            for d in 1..n {
                for i in 0..n - d {
                    v.push((i, i + d));
                }
            }
            v
        }
    }
}

/// `su(n)` in the basis `cartan weights…, root pairs…`; the Cartan weights given must be
/// trace-free and mutually orthogonal.
fn su_algebra(n: usize, cartan: &[Vec<f64>]) -> Result<LieAlgebraSpec> {
    let mut basis: Vec<DMatrix<Complex64>> = cartan.iter().map(|w| cartan_element(w)).collect();
    for (i, j) in su_root_order(n) {
        basis.extend(root_pair(n, i, j));
    }
    LieAlgebraSpec::from_matrix_basis(&basis)
}

fn unit(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// Build an `su(n)` space with `h_dim` Cartan directions in `h`, `t_dim` Cartan directions as
/// one-dimensional torus modules, and the root pairs as modules.
fn su_space(n: usize, cartan: &[Vec<f64>], h_dim: usize, toral: bool) -> Result<HomogeneousSpaceSpec> {
    let algebra = su_algebra(n, cartan)?;
    let dim = algebra.dim();
    let r = n - 1;
    let h_basis = (0..h_dim).map(|i| unit(dim, i)).collect();
    let mut modules: Vec<Vec<usize>> = Vec::new();
    if toral {
        for i in h_dim..r {
            modules.push(vec![i]);
        }
    }
    let t_mods = modules.len();
    for p in 0..su_root_order(n).len() {
        modules.push(vec![r + 2 * p, r + 2 * p + 1]);
    }
    Ok(HomogeneousSpaceSpec {
        algebra,
        h_basis,
        isotropy_generators: vec![],
        modules,
        toral_split: if toral { Some(t_mods) } else { None },
    })
}

/// `su(2) ⊕ su(2)` in the basis `a3, b3, a1, a2, b1, b2`, realised block-diagonally, with
/// the Cartan part replaced by the supplied combinations of `(a3, b3)`.
fn so4_algebra(cartan: &[[f64; 2]; 2]) -> Result<LieAlgebraSpec> {
    let i = Complex64::new(0.0, 1.0);
    let one = Complex64::new(1.0, 0.0);
    // Pauli-type generators i·σ_k in a 2x2 block placed at `off`
    let block = |off: usize, k: usize| {
        cm(4, |r, c| {
            if r < off || c < off || r >= off + 2 || c >= off + 2 {
                return zero();
            }
            let (r, c) = (r - off, c - off);
            match k {
                1 => if r != c { i } else { zero() },
                2 => {
                    if r == 0 && c == 1 {
                        one
                    } else if r == 1 && c == 0 {
                        -one
                    } else {
                        zero()
                    }
                }
                _ => if r == c { if r == 0 { i } else { -i } } else { zero() },
            }
        })
    };
    let a3 = block(0, 3);
    let b3 = block(2, 3);
    let mut basis = Vec::new();
    for w in cartan {
        basis.push(&a3 * Complex64::new(w[0], 0.0) + &b3 * Complex64::new(w[1], 0.0));
    }
    basis.extend([block(0, 1), block(0, 2), block(2, 1), block(2, 2)]);
    LieAlgebraSpec::from_matrix_basis(&basis)
}

fn so4_space(cartan: &[[f64; 2]; 2], h_dim: usize, toral: bool) -> Result<HomogeneousSpaceSpec> {
    let algebra = so4_algebra(cartan)?;
    let h_basis = (0..h_dim).map(|i| unit(6, i)).collect();
    let mut modules: Vec<Vec<usize>> = Vec::new();
    if toral {
        for i in h_dim..2 {
            modules.push(vec![i]);
        }
    }
    let t_mods = modules.len();
    modules.push(vec![2, 3]);
    modules.push(vec![4, 5]);
    Ok(HomogeneousSpaceSpec {
        algebra,
        h_basis,
        isotropy_generators: vec![],
        modules,
        toral_split: if toral { Some(t_mods) } else { None },
    })
}

/// Triple table of the full flag `SU(n)/T^{n−1}` with `Q = −Killing`: `1/n` on every
/// triangle `{ij, jk, ik}` of roots.
pub fn sun_triples(n: usize) -> TripleTable {
    let order = su_root_order(n);
    let idx = |a: usize, b: usize| order.iter().position(|&(x, y)| (x, y) == (a.min(b), a.max(b))).unwrap();
    let mut t = TripleTable::new(order.len());
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                t.set(idx(i, j), idx(j, k), idx(i, k), 1.0 / n as f64);
            }
        }
    }
    t
}

pub fn sun_model(n: usize) -> DiagonalModel {
    DiagonalModel::new(vec![2; n * (n - 1) / 2], sun_triples(n))
}

pub fn g2_model() -> DiagonalModel {
    let mut t = TripleTable::new(6);
    t.set(0, 2, 3, 1.0 / 3.0);
    for (a, b, c) in [(0, 1, 2), (0, 3, 4), (1, 4, 5), (2, 3, 5)] {
        t.set(a, b, c, 0.25);
    }
    DiagonalModel::new(vec![2; 6], t)
}

pub fn so4_model() -> DiagonalModel {
    DiagonalModel::new(vec![2, 2], TripleTable::new(2))
}

fn su3_ke() -> Vec<f64> {
    let s = (27.0f64 / 2.0).cbrt() / 3.0;
    vec![s, s, 2.0 * s]
}

fn su4_ke() -> Vec<f64> {
    let s = (1024.0f64 / 3.0).powf(1.0 / 6.0) / 4.0;
    [3.0, 2.0, 1.0, 1.0, 2.0, 1.0].iter().map(|v| v * s).collect()
}

fn g2_ke() -> Vec<f64> {
    let s = (4608.0f64 / 5.0).powf(1.0 / 6.0) / 12.0;
    [1.0, 3.0, 4.0, 5.0, 6.0, 9.0].iter().map(|v| v * s).collect()
}

fn known(label: &str, coords: Vec<f64>, coindex: Option<usize>) -> KnownEinstein {
    KnownEinstein { label: label.to_string(), coords, coindex }
}

fn su3_known() -> Vec<KnownEinstein> {
    vec![known("ke", su3_ke(), Some(1)), known("normal", vec![1.0; 3], Some(2))]
}

fn su4_known() -> Vec<KnownEinstein> {
    vec![known("ke", su4_ke(), Some(2)), known("normal", vec![1.0; 6], Some(3))]
}

fn so4_known() -> Vec<KnownEinstein> {
    vec![known("normal", vec![1.0, 1.0], Some(1))]
}

fn entry(
    id: String,
    description: &str,
    spec: Option<HomogeneousSpaceSpec>,
    model: Option<DiagonalModel>,
    known_einstein: Vec<KnownEinstein>,
    base_id: Option<&str>,
) -> CatalogEntry {
    let known_coindex = known_einstein.first().and_then(|k| k.coindex);
    let symmetry_permutations = model.as_ref().map(|m| m.symmetries()).unwrap_or_default();
    CatalogEntry {
        id,
        description: description.to_string(),
        representation: match spec {
            Some(s) => Representation::StructureConstants(Box::new(s)),
            None => Representation::DiagonalModel,
        },
        model,
        known_einstein,
        known_coindex,
        symmetry_permutations,
        base_id: base_id.map(str::to_string),
    }
}

fn su2_space() -> Result<HomogeneousSpaceSpec> {
    let i = Complex64::new(0.0, 1.0);
    let one = Complex64::new(1.0, 0.0);
    let basis = vec![
        DMatrix::from_row_slice(2, 2, &[i, zero(), zero(), -i]),
        DMatrix::from_row_slice(2, 2, &[zero(), i, i, zero()]),
        DMatrix::from_row_slice(2, 2, &[zero(), one, -one, zero()]),
    ];
    let algebra = LieAlgebraSpec::from_matrix_basis(&basis)?;
    Ok(HomogeneousSpaceSpec {
        algebra,
        h_basis: vec![],
        isotropy_generators: vec![],
        modules: vec![vec![0], vec![1, 2]],
        toral_split: Some(1),
    })
}

fn parse_pair(rest: &str, id: &str) -> Result<(i64, i64)> {
    let parts: Vec<&str> = rest.split('_').collect();
    if parts.len() != 2 {
        return input(format!("catalog id {id} needs two integer parameters"));
    }
    let p: i64 = parts[0].parse().map_err(|_| Error::Input(format!("bad parameter in {id}")))?;
    let q: i64 = parts[1].parse().map_err(|_| Error::Input(format!("bad parameter in {id}")))?;
    if p.abs() > 1000 || q.abs() > 1000 {
        return input(format!("parameters in {id} out of range"));
    }
    Ok((p, q))
}

/// Ids of all fixed entries (parametric families are listed with default parameters).
pub fn catalog_ids() -> Vec<&'static str> {
    vec![
        "su2",
        "su3_full_flag",
        "su3_group",
        "aloff_wallach_1_2",
        "su4_full_flag",
        "su4_group",
        "su4_s1",
        "su4_t2",
        "g2_full_flag",
        "so4_full_flag",
        "so4_group",
        "so4_slope_1_2",
        "sun_flag_3",
        "sun_flag_4",
        "sun_flag_5",
    ]
}

pub fn catalog() -> Vec<CatalogEntry> {
    catalog_ids().into_iter().map(|id| lookup(id).expect("built-in catalog entry")).collect()
}

/// Resolve a catalog id, including the parametric families `aloff_wallach_p_q`,
/// `so4_slope_p_q` and `sun_flag_n`.
pub fn lookup(id: &str) -> Result<CatalogEntry> {
    let su3_c = standard_cartan(3);
    let su4_c = standard_cartan(4);
    let so4_c = [[1.0, 0.0], [0.0, 1.0]];
    Ok(match id {
        "su2" => entry(id.into(), "SU(2) fibred by S¹ over S²", Some(su2_space()?), None, vec![known("round", vec![1.0], Some(0))], Some("su2_base")),
        "su3_full_flag" => entry(id.into(), "SU(3)/T²", Some(su_space(3, &su3_c, 2, false)?), Some(sun_model(3)), su3_known(), None),
        "su3_group" => entry(id.into(), "SU(3) fibred by T² over SU(3)/T²", Some(su_space(3, &su3_c, 0, true)?), Some(sun_model(3)), su3_known(), Some("su3_full_flag")),
        "su4_full_flag" => entry(id.into(), "SU(4)/T³", Some(su_space(4, &su4_c, 3, false)?), Some(sun_model(4)), su4_known(), None),
        "su4_group" => entry(id.into(), "SU(4) fibred by T³ over SU(4)/T³", Some(su_space(4, &su4_c, 0, true)?), Some(sun_model(4)), su4_known(), Some("su4_full_flag")),
        "su4_s1" => {
            let h = vec![1.0, 2.0, 4.0, -7.0];
            let cartan = complete_cartan(4, &[h]);
            entry(id.into(), "SU(4)/S¹ fibred by T² over SU(4)/T³", Some(su_space(4, &cartan, 1, true)?), Some(sun_model(4)), su4_known(), Some("su4_full_flag"))
        }
        "su4_t2" => {
            let t = vec![1.0, 2.0, 4.0, -7.0];
            let mut cartan = complete_cartan(4, &[t]);
            cartan.rotate_left(1);
            entry(id.into(), "SU(4)/T² fibred by S¹ over SU(4)/T³", Some(su_space(4, &cartan, 2, true)?), Some(sun_model(4)), su4_known(), Some("su4_full_flag"))
        }
        "g2_full_flag" => entry(id.into(), "G₂/T² (closed-form model only)", None, Some(g2_model()), vec![known("ke", g2_ke(), Some(1))], None),
        "so4_full_flag" => entry(id.into(), "SO(4)/T²", Some(so4_space(&so4_c, 2, false)?), Some(so4_model()), so4_known(), None),
        "so4_group" => entry(id.into(), "SO(4) fibred by T² over SO(4)/T²", Some(so4_space(&so4_c, 0, true)?), Some(so4_model()), so4_known(), Some("so4_full_flag")),
        "su2_base" => {
            let mut e = entry(id.into(), "S² = SU(2)/S¹", None, Some(DiagonalModel::new(vec![2], TripleTable::new(1))), vec![known("round", vec![1.0], Some(0))], None);
            let full = su2_space()?;
            e.representation = Representation::StructureConstants(Box::new(HomogeneousSpaceSpec {
                h_basis: vec![unit(3, 0)],
                modules: vec![vec![1, 2]],
                toral_split: None,
                ..full
            }));
            e
        }
        _ => {
            if let Some(rest) = id.strip_prefix("aloff_wallach_") {
                let (p, q) = parse_pair(rest, id)?;
                let (p, q) = (p as f64, q as f64);
                let h = vec![p, q, -p - q];
                let t = vec![p + 2.0 * q, -(2.0 * p + q), p - q];
                if t.iter().all(|v| *v == 0.0) || h.iter().all(|v| *v == 0.0) {
                    return input(format!("degenerate slope in {id}"));
                }
                entry(id.into(), "Aloff-Wallach space SU(3)/S¹ fibred by S¹ over SU(3)/T²", Some(su_space(3, &[h, t], 1, true)?), Some(sun_model(3)), su3_known(), Some("su3_full_flag"))
            } else if let Some(rest) = id.strip_prefix("so4_slope_") {
                let (p, q) = parse_pair(rest, id)?;
                if p == 0 && q == 0 {
                    return input(format!("degenerate slope in {id}"));
                }
                let (p, q) = (p as f64, q as f64);
                entry(id.into(), "SO(4)/S¹ fibred by S¹ over SO(4)/T²", Some(so4_space(&[[p, q], [q, -p]], 1, true)?), Some(so4_model()), so4_known(), Some("so4_full_flag"))
            } else if let Some(rest) = id.strip_prefix("sun_flag_") {
                let n: usize = rest.parse().map_err(|_| Error::Input(format!("bad parameter in {id}")))?;
                if !(3..=8).contains(&n) {
                    return input(format!("{id}: n must lie in 3..=8"));
                }
                let spec = if n <= 4 { Some(su_space(n, &standard_cartan(n), n - 1, false)?) } else { None };
                let l = n * (n - 1) / 2;
                let mut e = entry(id.into(), "SU(n)/T^{n-1}", spec, Some(sun_model(n)), vec![known("normal", vec![1.0; l], Some(n - 1))], None);
                if n > 7 {
                    e.symmetry_permutations = vec![(0..l).collect()];
                }
                e
            } else {
                return input(format!("unknown catalog id '{id}'"));
            }
        }
    })
}
