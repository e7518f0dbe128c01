use rflab::algebra::HomogeneousSpace;
use rflab::ancient::*;
use rflab::catalog::lookup;
use rflab::flow::ProjectedFlowContext;
use rflab::linalg::Mat;
use rflab::Error;

struct Setup {
    space: HomogeneousSpace,
    base: HomogeneousSpace,
    ctx: ProjectedFlowContext,
    base_coindex: usize,
}

fn setup(id: &str, label: &str) -> Setup {
    let entry = lookup(id).unwrap();
    let space = HomogeneousSpace::new(entry.space_spec().unwrap().clone()).unwrap();
    let base = space.base().unwrap();
    let base_entry = lookup(entry.base_id.as_deref().unwrap()).unwrap();
    let coords = base_entry.einstein(label).unwrap().coords.clone();
    let (pbar, point) = base_einstein_metric(&base, &coords).unwrap();
    let ctx = ProjectedFlowContext::new(&space, &base, &pbar).unwrap();
    Setup { space, base, ctx, base_coindex: point.coindex }
}

impl Setup {
    fn linearize(&self) -> CollapsedFixedPoint<'_> {
        let expected = self.space.dim_t() * (self.space.dim_t() + 1) / 2 + self.base_coindex;
        linearize_at_collapse(&self.space, &self.base, self.ctx.clone(), Some(expected)).unwrap()
    }
}

#[test]
fn su3_collapsed_fixed_point_structure() {
    let s = setup("su3_group", "ke");
    let fp = s.linearize();
    assert_eq!(fp.unstable_dim(), 4);
    assert!(fp.vertical_block_residual <= 1e-8);
    assert!(fp.upper_block_residual <= 1e-8);
    assert!(fp.horizontal_block_residual <= 1e-6);
    for mu in &fp.unstable_eigenvalues {
        assert!((mu - 0.8399474).abs() < 1e-6, "{mu}");
    }
    // A wrong expectation is a structural failure.
    let err = linearize_at_collapse(&s.space, &s.base, s.ctx.clone(), Some(5)).unwrap_err();
    assert!(matches!(err, Error::Structural(_)));
}

#[test]
fn unstable_counts_on_other_fibrations() {
    let aw = setup("aloff_wallach_1_1", "ke");
    let fp = aw.linearize();
    assert_eq!((fp.nu, fp.unstable_dim(), fp.family_dim()), (1, 2, 1));

    let so4 = setup("so4_group", "normal");
    let fp = so4.linearize();
    assert_eq!((fp.unstable_dim(), fp.family_dim()), (4, 3));

    let normal = setup("su3_group", "normal");
    let fp = normal.linearize();
    assert_eq!(fp.unstable_dim(), 5);
}

#[test]
fn pure_vertical_shot_decays_at_twice_lambda() {
    let s = setup("su3_group", "ke");
    let fp = s.linearize();
    let c = fp.vertical_direction(&Mat::identity(2, 2)).unwrap();
    let cand = shoot_ancient(&fp, &c, 1e-7, &ShootConfig::default()).unwrap();
    let two_lambda = 2.0 * s.ctx.lambda;
    let rate = cand.backward_decay_rate.unwrap();
    assert!((rate - two_lambda).abs() <= 0.05 * two_lambda, "{rate}");
    assert!((cand.scal_at_stop - 6.0 * s.ctx.lambda).abs() <= 1e-4);
    assert!((cand.scal_limit_target - 2.5198).abs() < 1e-4);
    assert!(cand.accepted, "{:?}", cand.report.failing);
    assert!(cand.report.collapsing && cand.report.ancient);
    assert!(cand.scal_monotone);
    assert!(cand.forward.is_some());
    let rho = cand.backward.diagnostics.last().unwrap().rho;
    assert!((rho - s.ctx.lambda).abs() <= 1e-6, "{rho}");
}

#[test]
fn zero_epsilon_stays_put() {
    let s = setup("su3_group", "ke");
    let fp = s.linearize();
    let c = fp.vertical_direction(&Mat::identity(2, 2)).unwrap();
    let cand = shoot_ancient(&fp, &c, 0.0, &ShootConfig::default()).unwrap();
    assert_eq!(cand.backward.states.len(), 1);
    assert!(s.ctx.distance(&fp.basis.matrix(cand.backward.last_state())) < 1e-14);
    assert!(!cand.accepted);
}

#[test]
fn shot_preconditions() {
    let s = setup("su3_group", "ke");
    let fp = s.linearize();
    let neg = fp.vertical_direction(&(-Mat::identity(2, 2))).unwrap();
    assert!(matches!(shoot_ancient(&fp, &neg, 1e-7, &ShootConfig::default()), Err(Error::Input(_))));
    let mut unnormalized = fp.vertical_direction(&Mat::identity(2, 2)).unwrap();
    unnormalized[0] *= 2.0;
    assert!(shoot_ancient(&fp, &unnormalized, 1e-7, &ShootConfig::default()).is_err());
    let c = fp.vertical_direction(&Mat::identity(2, 2)).unwrap();
    assert!(shoot_ancient(&fp, &c, 1e-2, &ShootConfig::default()).is_err());
    assert!(shoot_ancient(&fp, &c[..2], 1e-7, &ShootConfig::default()).is_err());
}

#[test]
fn horizontal_only_shot_is_degenerate() {
    let s = setup("su3_group", "ke");
    let fp = s.linearize();
    let mut c = vec![0.0; fp.unstable_dim()];
    c[fp.nu] = 1.0;
    let cand = shoot_ancient(&fp, &c, 1e-7, &ShootConfig::default()).unwrap();
    assert!(cand.degenerate_vertical);
    for d in &cand.backward.diagnostics {
        assert!(d.fiber_diameter < 1e-12);
    }
    let scan = family_scan(&fp, &[c], 1e-7, &ShootConfig::default());
    assert_eq!(scan.accepted_count, 0);
    assert!(scan.records[0].degenerate_vertical);
}

#[test]
fn su3_family_is_three_dimensional() {
    let s = setup("su3_group", "ke");
    let fp = s.linearize();
    let grid = positive_grid(&fp, 8, 3);
    assert_eq!(grid.len(), 8);
    let scan = family_scan(&fp, &grid, 1e-7, &ShootConfig::default());
    assert!(scan.accepted_count >= 4, "{:?}", scan.records.iter().map(|r| &r.rejection).collect::<Vec<_>>());
    assert_eq!(scan.family_dimension, 3);
    assert_eq!(scan.expected_family_dimension, 3);
    assert!(scan.records.windows(2).all(|w| w[0].index < w[1].index));
    for r in scan.records.iter().filter(|r| r.accepted) {
        let rate = r.backward_decay_rate.unwrap();
        assert!(fp.unstable_eigenvalues.iter().any(|mu| (rate - mu).abs() <= 0.05 * mu));
    }
}

#[test]
fn rejected_cone_gives_empty_family() {
    let s = setup("su3_group", "ke");
    let fp = s.linearize();
    let grid: Vec<Vec<f64>> = positive_grid(&fp, 4, 9).into_iter().map(|c| c.iter().map(|v| -v).collect()).collect();
    let scan = family_scan(&fp, &grid, 1e-7, &ShootConfig::default());
    assert_eq!(scan.accepted_count, 0);
    assert!(scan.records.iter().all(|r| r.rejection.is_some()));
}

#[test]
fn su4_over_full_flag_gives_two_parameter_family() {
    let s = setup("su4_t2", "ke");
    let fp = s.linearize();
    assert_eq!(fp.unstable_dim(), 3);
    let grid = positive_grid(&fp, 4, 5);
    let scan = family_scan(&fp, &grid, 1e-7, &ShootConfig::default());
    assert_eq!(scan.family_dimension, 2);
}

#[test]
fn projector_fixes_the_unstable_subspace() {
    let s = setup("su3_group", "ke");
    let fp = s.linearize();
    let proj = fp.unstable_projector.as_ref().unwrap();
    assert!((proj * proj - proj).amax() < 1e-8);
    for v in &fp.unstable_basis {
        let x = nalgebra::DVector::from_column_slice(v);
        assert!((proj * &x - &x).amax() < 1e-8);
    }
}
