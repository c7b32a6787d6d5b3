use soft_diamond::analysis::{
    constraint_contour, diagonal_axis_ratio, kappa_for_axis_radius, kde, kurtosis, linspace, magnitude_prune,
    paired_t_test, prune_curve, silverman_bandwidth, sparsity, toy_lse_solve, trapezoid, weight_kde, Quadratic,
};
use soft_diamond::data::make_synthetic_split;
use soft_diamond::netcore::{mlp, Model};
use soft_diamond::stable::{self, log_pdf};
use soft_diamond::trainer::{train, PriorGradient};
use soft_diamond::{QuadratureConfig, StableParams, TrainConfig};

fn sas(alpha: f64, gamma: f64) -> StableParams {
    StableParams::symmetric(alpha, gamma, 0.0).unwrap()
}

fn ratio(alpha: f64, gamma: f64) -> f64 {
    diagonal_axis_ratio(&sas(alpha, gamma), 1.0, &QuadratureConfig::default()).unwrap()
}

#[test]
fn gaussian_contour_is_a_circle() {
    let q = QuadratureConfig::default();
    let p = sas(2.0, 1.0);
    let kappa = kappa_for_axis_radius(&p, 1.0, &q).unwrap();
    let c = constraint_contour(&p, kappa, 180, &q).unwrap();
    assert_eq!(c.points.first(), c.points.last());
    for pt in &c.points {
        assert!((pt.radius() - 1.0).abs() < 0.005 * 1.0, "{pt:?}");
        assert!((pt.radius() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn contour_points_lie_on_the_level_set() {
    let q = QuadratureConfig::default();
    for alpha in [1.5, 1.0, 0.5] {
        let p = sas(alpha, 1.0);
        let kappa = kappa_for_axis_radius(&p, 1.0, &q).unwrap();
        let c = constraint_contour(&p, kappa, 72, &q).unwrap();
        for pt in &c.points {
            let level = log_pdf(&p, pt.theta1, &q).unwrap() + log_pdf(&p, pt.theta2, &q).unwrap();
            assert!((level - kappa).abs() < 1e-8, "α={alpha} {pt:?}: {level} vs {kappa}");
        }
    }
}

#[test]
fn contours_sharpen_as_alpha_falls() {
    let r: Vec<f64> = [2.0, 1.5, 1.0, 0.5].iter().map(|&a| ratio(a, 1.0)).collect();
    assert!((r[0] - 1.0).abs() < 1e-9);
    assert!(r.windows(2).all(|w| w[1] < w[0]), "{r:?}");
    // Below 1/√2 the level set is star-shaped (pinched between the axes).
    assert!(r[3] < 0.5f64.sqrt(), "{r:?}");
}

#[test]
fn cauchy_diagonal_radius_has_a_closed_form() {
    // (1 + x²)² = 2 at the diagonal point (x, x) of the level through (1, 0).
    let x = (2f64.sqrt() - 1.0).sqrt();
    assert!((ratio(1.0, 1.0) - x * 2f64.sqrt()).abs() < 1e-9);
}

#[test]
fn contours_round_out_as_gamma_grows() {
    let r: Vec<f64> = [0.3, 1.0, 1.5].iter().map(|&g| ratio(1.5, g)).collect();
    assert!(r.windows(2).all(|w| w[1] > w[0]), "{r:?}");
}

fn objective() -> Quadratic {
    Quadratic { centre: [1.5, 0.5], a: [[1.0, 0.0], [0.0, 4.0]] }
}

#[test]
fn feasible_optimum_is_returned_unchanged() {
    let q = QuadratureConfig::default();
    let p = sas(1.5, 1.0);
    let kappa = kappa_for_axis_radius(&p, 1.0, &q).unwrap();
    let obj = Quadratic { centre: [0.2, -0.1], a: [[2.0, 0.3], [0.3, 1.0]] };
    assert_eq!(toy_lse_solve(&obj, &p, kappa, &q).unwrap(), [0.2, -0.1]);
}

#[test]
fn gaussian_solution_is_the_radial_projection() {
    let q = QuadratureConfig::default();
    let p = sas(2.0, 1.0);
    let kappa = kappa_for_axis_radius(&p, 1.0, &q).unwrap();
    let obj = Quadratic { centre: [1.2, 0.9], a: [[1.0, 0.0], [0.0, 1.0]] };
    let s = toy_lse_solve(&obj, &p, kappa, &q).unwrap();
    let norm = 1.5;
    assert!((s[0] - 1.2 / norm).abs() < 1e-6 && (s[1] - 0.9 / norm).abs() < 1e-6, "{s:?}");
}

#[test]
fn smaller_alpha_gives_sparser_toy_solution() {
    let q = QuadratureConfig::default();
    let small: Vec<f64> = [2.0, 1.5, 1.0, 0.5]
        .iter()
        .map(|&a| {
            let p = sas(a, 1.0);
            let kappa = kappa_for_axis_radius(&p, 1.0, &q).unwrap();
            let s = toy_lse_solve(&objective(), &p, kappa, &q).unwrap();
            s[0].abs().min(s[1].abs())
        })
        .collect();
    assert!(small.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{small:?}");
    assert!(small[3] < 0.5 * small[0], "{small:?}");
}

#[test]
fn kde_conserves_mass() {
    let p = sas(1.5, 0.05);
    let draws = stable::sample(&p, 2000, 3);
    let bw = silverman_bandwidth(&draws);
    // Heavy tails put some draws beyond any finite grid; keep those that the
    // grid covers with a margin of many bandwidths.
    let inner: Vec<f64> = draws.iter().copied().filter(|x| x.abs() < 1.0).collect();
    let d = kde(&inner, bw, &linspace(-2.0, 2.0, 4001)).unwrap();
    assert!((trapezoid(&linspace(-2.0, 2.0, 4001), &d) - 1.0).abs() < 1e-3);
}

#[test]
fn kurtosis_of_known_samples() {
    // Two-point symmetric law has kurtosis 1; uniform on a lattice tends to 1.8.
    assert_eq!(kurtosis(&[-1.0, 1.0, -1.0, 1.0]), Some(1.0));
    let u: Vec<f64> = (0..10001).map(|i| i as f64 / 10000.0).collect();
    assert!((kurtosis(&u).unwrap() - 1.8).abs() < 1e-3);
    assert_eq!(kurtosis(&[2.0, 2.0]), None);
}

#[test]
fn paired_test_matches_reference_values() {
    let a = [0.91, 0.88, 0.95, 0.90, 0.93];
    let b = [0.89, 0.88, 0.91, 0.86, 0.92];
    let r = paired_t_test(&a, &b).unwrap();
    assert!((r.t - 2.75).abs() < 1e-9);
    assert!((r.p_value - 0.02568721542218397).abs() < 1e-9);
    assert_eq!(r.df, 4.0);
    assert!(paired_t_test(&a, &b[..3]).is_err());
}

fn trained_model() -> (Model, soft_diamond::LabeledDataset) {
    let (tr, te) = make_synthetic_split(300, 200, 4, &[2, 4, 4], 1.5, 8).unwrap();
    let mut m = Model::new(&[2, 4, 4], &mlp(4, 16)).unwrap();
    m.init_xavier_uniform(3);
    let cfg = TrainConfig { epochs: 4, batch_size: 32, ..TrainConfig::default() };
    train(&mut m, &tr, None, &PriorGradient::None, &cfg).unwrap();
    (m, te)
}

#[test]
fn pruning_accuracy_does_not_increase_with_fraction() {
    let (m, te) = trained_model();
    let fractions: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).chain([0.95, 0.99]).collect();
    let curve = prune_curve(&m, &fractions, &te).unwrap();
    assert_eq!(curve[0].1, soft_diamond::trainer::evaluate(&m, &te).unwrap().accuracy);
    // Dropping near-zero weights can flip a test sample or two either way,
    // so the curve is only monotone up to one percentage point.
    let mut lowest = curve[0].1;
    for &(f, a) in &curve[1..] {
        assert!(a <= lowest + 0.0125, "fraction {f}: {curve:?}");
        lowest = lowest.min(a);
    }
    // Removing almost every weight collapses the classifier towards chance.
    assert!(curve.last().unwrap().1 < curve[0].1);
    assert!(curve.last().unwrap().1 <= 0.5);
    let s = sparsity(&m, 0.0);
    let (pruned, mask) = magnitude_prune(&m, 0.5).unwrap();
    let zeroed: usize = mask.iter().flatten().filter(|k| !**k).count();
    assert_eq!(zeroed, (0.5 * s.total as f64).floor() as usize);
    assert!(sparsity(&pruned, 0.0).fraction >= 0.5 - 1.0 / s.total as f64);
}

#[test]
fn pruning_masks_are_nested() {
    let (m, _) = trained_model();
    let masks: Vec<_> = [0.1, 0.3, 0.5, 0.9].iter().map(|&f| magnitude_prune(&m, f).unwrap().1).collect();
    for w in masks.windows(2) {
        for (a, b) in w[0].iter().flatten().zip(w[1].iter().flatten()) {
            assert!(*a || !*b, "a weight pruned at a smaller fraction survived a larger one");
        }
    }
}

#[test]
fn sparsity_report_is_consistent() {
    let (m, _) = trained_model();
    let s = sparsity(&m, 1e-3);
    assert_eq!(s.per_layer.iter().map(|l| l.total).sum::<usize>(), s.total);
    assert_eq!(s.per_layer.iter().map(|l| l.near_zero).sum::<usize>(), s.near_zero);
    assert_eq!(s.fraction, s.near_zero as f64 / s.total as f64);
    let grid = linspace(-2.0, 2.0, 2001);
    let d = weight_kde(&m, 0.05, &grid).unwrap();
    assert!((trapezoid(&grid, &d) - 1.0).abs() < 1e-3);
}
