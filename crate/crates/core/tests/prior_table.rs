use proptest::prelude::*;
use soft_diamond::prior_table::{DerivTable, DEFAULT_EPSILON, DEFAULT_N_GRID};
use soft_diamond::{QuadratureConfig, StableParams};

fn table(alpha: f64, gamma: f64, eps: f64, n: usize) -> DerivTable {
    let p = StableParams::symmetric(alpha, gamma, 0.0).unwrap();
    DerivTable::build(p, eps, n, &QuadratureConfig::default()).unwrap()
}

/// Largest error against `−2θ/(1+θ²)` over grid points shared by every
/// resolution (multiples of 0.008).
fn cauchy_max_error(t: &DerivTable) -> f64 {
    let stride = (0.008 / t.delta()).round() as i64;
    let n = t.n_grid() as i64;
    (-n / stride..=n / stride)
        .map(|j| {
            let k = j * stride;
            let th = t.grid_point(k);
            (t.value_at_key(k) - (-2.0 * th / (1.0 + th * th))).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn centred_difference_error_is_second_order() {
    let errs: Vec<f64> = [100, 200, 400].iter().map(|&n| cauchy_max_error(&table(1.0, 1.0, 0.8, n))).collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..=4.5).contains(&ratio), "errors {errs:?}");
    }
}

#[test]
fn default_domain_has_expected_step() {
    let t = table(1.5, 1.0, DEFAULT_EPSILON, DEFAULT_N_GRID);
    assert!((t.delta() - 0.002).abs() < 1e-15);
    assert_eq!(t.values().len(), 801);
    assert_eq!(t.value_at_key(0), 0.0);
}

#[test]
fn rebuild_is_bit_identical() {
    let a = table(0.5, 1.0, 0.8, 400);
    let b = table(0.5, 1.0, 0.8, 400);
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(a.checksum(), b.checksum());
}

#[test]
fn gaussian_substitution_matches_closed_form_exactly() {
    let p = StableParams::symmetric(2.0, 1.0, 0.0).unwrap();
    let exact = DerivTable::from_fn(p, 0.8, 400, |th| -th / 2.0).unwrap();
    for k in -400..=400 {
        assert_eq!(exact.value_at_key(k), -exact.grid_point(k) / 2.0);
    }
    // The centred difference of a Gaussian density differs by O(δ²).
    let built = table(2.0, 1.0, 0.8, 400);
    for k in -400..=400 {
        assert!((built.value_at_key(k) - exact.value_at_key(k)).abs() < 1e-6);
    }
}

#[test]
fn heavier_tails_pull_harder_near_zero() {
    // Slope of (ln h)' at the origin is −Γ(3/α)/(2γ²Γ(1/α)); its magnitude
    // grows as α falls.
    let slopes: Vec<f64> = [2.0, 1.5, 1.0, 0.5]
        .iter()
        .map(|&a| {
            let t = table(a, 1.0, 0.8, 400);
            -t.value_at_key(1) / t.grid_point(1)
        })
        .collect();
    assert!(slopes.windows(2).all(|w| w[1] > w[0]), "{slopes:?}");
    assert!((slopes[0] - 0.5).abs() < 1e-5);
    assert!((slopes[2] - 2.0).abs() < 1e-4);
}

#[test]
fn saturated_lookups_return_endpoint_values() {
    let t = table(1.5, 1.0, 0.8, 400);
    assert!(t.is_saturated(0.81) && t.is_saturated(-5.0) && !t.is_saturated(0.8));
    assert_eq!(t.derivative(5.0), t.value_at_key(400));
    assert_eq!(t.derivative(-5.0), t.value_at_key(-400));
    assert_eq!(t.derivative(f64::INFINITY), t.value_at_key(400));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn key_is_floor_inside_domain(k in -399i64..399, frac in 0.0f64..0.999) {
        let t = DerivTable::from_fn(StableParams::symmetric(1.0, 1.0, 0.0).unwrap(), 0.8, 400, |x| x).unwrap();
        let theta = (k as f64 + frac) * t.delta();
        prop_assert_eq!(t.key_of(theta), k);
    }

    #[test]
    fn lookup_pulls_toward_zero_outside_first_cell(alpha in prop::sample::select(vec![0.5, 1.0, 1.5, 2.0]), theta in -3.0f64..3.0) {
        let t = table(alpha, 1.0, 0.8, 400);
        let d = t.derivative(theta);
        if theta >= t.delta() {
            prop_assert!(d < 0.0);
        } else if theta < 0.0 {
            prop_assert!(d > 0.0);
        } else {
            prop_assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn values_are_odd(alpha in 0.5f64..2.0, gamma in 0.5f64..2.0) {
        let t = table(alpha, gamma, 0.8, 100);
        for k in 0..=100i64 {
            prop_assert!((t.value_at_key(k) + t.value_at_key(-k)).abs() < 1e-9);
        }
    }

    #[test]
    fn scaled_lookup_is_c_times_derivative(c in 1e-6f64..10.0, theta in -1.0f64..1.0) {
        let t = table(1.5, 1.0, 0.8, 400).with_scale(c).unwrap();
        prop_assert_eq!(t.lookup_grad(theta), c * t.derivative(theta));
    }
}
