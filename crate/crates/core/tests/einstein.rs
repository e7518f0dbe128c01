use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rflab::algebra::{invariant_sym_basis, HomogeneousSpace};
use rflab::catalog::lookup;
use rflab::curvature;
use rflab::einstein::*;
use rflab::linalg::{self, Mat};

fn space(id: &str) -> HomogeneousSpace {
    HomogeneousSpace::new(lookup(id).unwrap().space_spec().unwrap().clone()).unwrap()
}

fn known(id: &str, label: &str) -> Vec<f64> {
    lookup(id).unwrap().einstein(label).unwrap().coords.clone()
}

fn signature(spectrum: &[f64]) -> (usize, usize, usize) {
    let pos = spectrum.iter().filter(|v| **v > 1e-6).count();
    let neg = spectrum.iter().filter(|v| **v < -1e-6).count();
    (pos, neg, spectrum.len() - pos - neg)
}

/// Closed form on SU(4)/T³ in module scales.
fn su4_flag_scal(l: &[f64]) -> f64 {
    let inv: f64 = l.iter().map(|v| 1.0 / v).sum();
    let cross: f64 = [[0, 1, 3], [0, 2, 4], [1, 2, 5], [3, 4, 5]]
        .iter()
        .map(|&[i, j, k]| l[i] / (l[j] * l[k]) + l[j] / (l[i] * l[k]) + l[k] / (l[i] * l[j]))
        .sum();
    inv - cross / 8.0
}

#[test]
fn l2_inner_of_identities_is_the_dimension() {
    let p = Mat::identity(6, 6);
    assert!((l2_inner(&p, &p, &p).unwrap() - 6.0).abs() < 1e-14);
}

#[test]
fn normalized_scal_reference_values() {
    let flag = space("su3_full_flag");
    let backend = EngineBackend::new(&flag).unwrap();
    let s = 2f64.cbrt();
    let p = backend.metric(&[1.0 / s, 1.0 / s, 2.0 / s]);
    assert!((normalized_scal(&flag, &p).unwrap() - 2.5198421).abs() < 1e-6);
    assert!((normalized_scal(&flag, &(&p * 7.3)).unwrap() - normalized_scal(&flag, &p).unwrap()).abs() < 1e-12);

    let so4 = space("so4_full_flag");
    let q = EngineBackend::new(&so4).unwrap().metric(&[1.0, 1.0]);
    assert!((normalized_scal(&so4, &q).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn differential_of_normalized_scal_matches_finite_differences() {
    let sp = space("su3_full_flag");
    let basis = invariant_sym_basis(&sp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..10 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..2.0)).collect();
        let p = basis.matrix(&x);
        let b = basis.matrix(&(0..3).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let analytic = normalized_scal_differential(&sp, &p, &b).unwrap();
        let h = 1e-5;
        let fd = (normalized_scal(&sp, &(&p + &b * h)).unwrap() - normalized_scal(&sp, &(&p - &b * h)).unwrap()) / (2.0 * h);
        assert!((analytic - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{analytic} vs {fd}");
    }
}

#[test]
fn ke_seed_direction_converges_to_ke() {
    let sp = space("su3_full_flag");
    let backend = EngineBackend::new(&sp).unwrap();
    let point = find_einstein(&backend, &[1.05, 0.95, 2.1], &EinsteinConfig::default()).unwrap();
    let point = analyze_point(&backend, &point.coefficients, &EinsteinConfig::default()).unwrap();
    let ke = known("su3_full_flag", "ke");
    assert!(point.coefficients.iter().zip(&ke).all(|(a, b)| (a - b).abs() < 1e-8), "{:?}", point.coefficients);
    assert_eq!(point.coindex, 1);
    let mut spectrum = point.hessian_spectrum.clone();
    spectrum.sort_by(f64::total_cmp);
    for (got, want) in spectrum.iter().zip([-1.0 / 3.0, 0.0, 4.0 / 3.0]) {
        assert!((got - want).abs() <= 1e-6, "{spectrum:?}");
    }
}

#[test]
fn normal_metric_is_einstein_at_its_seed() {
    let sp = space("su3_full_flag");
    let backend = EngineBackend::new(&sp).unwrap();
    let point = find_einstein(&backend, &[1.0, 1.0, 1.0], &EinsteinConfig::default()).unwrap();
    assert!(point.residual <= 1e-10);
    let c = point.coefficients[0];
    assert!(point.coefficients.iter().all(|v| (v - c).abs() < 1e-12));
    let p = backend.metric(&[1.0, 1.0, 1.0]);
    assert!(curvature::traceless_ricci(&sp, &p).unwrap().amax() < 1e-12);
}

#[test]
fn so4_flag_has_only_the_product_metric() {
    let sp = space("so4_full_flag");
    let backend = EngineBackend::new(&sp).unwrap();
    for seed in random_seeds(&backend, 6, 9) {
        let point = find_einstein(&backend, &seed, &EinsteinConfig::default()).unwrap();
        assert!((point.coefficients[0] - point.coefficients[1]).abs() < 1e-8, "{seed:?} -> {:?}", point.coefficients);
    }
}

#[test]
fn su4_and_g2_hessian_signatures() {
    let su4 = space("su4_full_flag");
    let engine = EngineBackend::new(&su4).unwrap();
    let point = analyze_point(&engine, &known("su4_full_flag", "ke"), &EinsteinConfig::default()).unwrap();
    assert_eq!(signature(&point.hessian_spectrum), (2, 3, 1));
    assert_eq!(point.coindex, 2);

    let entry = lookup("g2_full_flag").unwrap();
    let model = DiagonalBackend { model: entry.model.as_ref().unwrap() };
    let point = analyze_point(&model, &known("g2_full_flag", "ke"), &EinsteinConfig::default()).unwrap();
    assert_eq!(signature(&point.hessian_spectrum), (1, 4, 1));
    assert_eq!(point.coindex, 1);
}

#[test]
fn catalog_records_the_einstein_points() {
    let su3 = known("su3_full_flag", "ke");
    let s = (27.0f64 / 2.0).cbrt() / 3.0;
    assert!(su3.iter().zip([s, s, 2.0 * s]).all(|(a, b)| (a - b).abs() < 1e-14));
    assert_eq!(lookup("su3_full_flag").unwrap().einstein("ke").unwrap().coindex, Some(1));

    let g2 = lookup("g2_full_flag").unwrap();
    let s = (4608.0f64 / 5.0).powf(1.0 / 6.0) / 12.0;
    let k = g2.einstein("ke").unwrap();
    assert!(k.coords.iter().zip([1.0, 3.0, 4.0, 5.0, 6.0, 9.0]).all(|(a, b)| (a - b * s).abs() < 1e-14));
    assert_eq!(k.coindex, Some(1));

    let so4 = lookup("so4_full_flag").unwrap();
    let k = so4.einstein("normal").unwrap();
    assert_eq!((k.coords.clone(), k.coindex), (vec![1.0, 1.0], Some(1)));
}

#[test]
fn su4_closed_form_at_ke_is_lambda_times_dimension() {
    let sp = space("su4_full_flag");
    let ke = known("su4_full_flag", "ke");
    let p = EngineBackend::new(&sp).unwrap().metric(&ke);
    let ric = curvature::ricci(&sp, &p).unwrap();
    let lambda = ric[(0, 0)] / p[(0, 0)];
    assert!((ric - &p * lambda).amax() < 1e-10);
    assert!((su4_flag_scal(&ke) - lambda * sp.dim_m() as f64).abs() <= 1e-8);
}

#[test]
fn engine_and_model_backends_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for id in ["su3_full_flag", "su4_full_flag", "so4_full_flag"] {
        let sp = space(id);
        let entry = lookup(id).unwrap();
        let engine = EngineBackend::new(&sp).unwrap();
        let model = DiagonalBackend { model: entry.model.as_ref().unwrap() };
        for _ in 0..100 {
            let x: Vec<f64> = (0..engine.coords()).map(|_| rng.gen_range(0.2..3.0)).collect();
            let a = engine.normalized_scal(&x).unwrap();
            let b = model.normalized_scal(&x).unwrap();
            assert!((a - b).abs() <= 1e-10 * b.abs(), "{id}: {a} vs {b}");
            let ga = engine.gradient(&x).unwrap();
            let gb = model.gradient(&x).unwrap();
            assert!(ga.iter().zip(&gb).all(|(u, v)| (u - v).abs() <= 1e-9 * v.abs().max(1.0)), "{id}");
        }
    }
}

#[test]
fn invalid_points_are_rejected() {
    let sp = space("su3_full_flag");
    let backend = EngineBackend::new(&sp).unwrap();
    assert!(find_einstein(&backend, &[1.0, -1.0, 1.0], &EinsteinConfig::default()).is_err());
    assert!(find_einstein(&backend, &[1.0, 1.0], &EinsteinConfig::default()).is_err());
    assert!(analyze_point(&backend, &[f64::NAN, 1.0, 1.0], &EinsteinConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn l2_inner_is_bilinear(d in prop::collection::vec(0.3f64..3.0, 4), u in prop::collection::vec(-1.0f64..1.0, 4), v in prop::collection::vec(-1.0f64..1.0, 4), w in prop::collection::vec(-1.0f64..1.0, 4), a in -3.0f64..3.0) {
        let diag = |x: &[f64]| Mat::from_diagonal(&nalgebra::DVector::from_column_slice(x));
        let p = diag(&d);
        let (bu, bv, bw) = (diag(&u), diag(&v), diag(&w));
        let lhs = l2_inner(&p, &(&bu + &bv * a), &bw).unwrap();
        let rhs = l2_inner(&p, &bu, &bw).unwrap() + a * l2_inner(&p, &bv, &bw).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        prop_assert!((l2_inner(&p, &bu, &bw).unwrap() - l2_inner(&p, &bw, &bu).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn normalized_scal_ignores_scale(x in prop::collection::vec(0.2f64..4.0, 3), k in 0.05f64..20.0) {
        let sp = space("su3_full_flag");
        let p = EngineBackend::new(&sp).unwrap().metric(&x);
        let a = normalized_scal(&sp, &p).unwrap();
        let b = normalized_scal(&sp, &(&p * k)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn gradient_vanishes_only_at_einstein_metrics(x in prop::collection::vec(0.3f64..3.0, 3)) {
        let sp = space("su3_full_flag");
        let backend = EngineBackend::new(&sp).unwrap();
        let g = backend.gradient(&x).unwrap();
        let (_, residual) = backend.einstein_data(&x).unwrap();
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert_eq!(gnorm < 1e-10, residual < 1e-8);
        let p = backend.metric(&x);
        prop_assert!(linalg::min_eigenvalue(&p) > 0.0);
    }
}
