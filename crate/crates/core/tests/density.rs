use std::f64::consts::PI;

use proptest::prelude::*;
use soft_diamond::stable::{self, pdf, pdf_quadrature, tail_mass, QuadratureConfig, StableParams};
use statrs::function::gamma::ln_gamma;

fn sas(alpha: f64, gamma: f64) -> StableParams {
    StableParams::symmetric(alpha, gamma, 0.0).unwrap()
}

/// Convergent large-argument series for `α < 1`, in units of `γ`.
fn series_small_alpha(alpha: f64, x: f64) -> f64 {
    let mut sum = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let s = (kf * PI * alpha / 2.0).sin();
        let mag = (ln_gamma(alpha * kf + 1.0) - ln_gamma(kf + 1.0) - (alpha * kf + 1.0) * x.ln()).exp();
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sum += sign * s * mag;
        if mag < 1e-18 {
            break;
        }
    }
    sum / PI
}

/// Convergent small-argument series for `α > 1`, in units of `γ`.
fn series_large_alpha(alpha: f64, x: f64) -> f64 {
    let mut sum = 0.0;
    for k in 0..200 {
        let kf = k as f64;
        let mag = (ln_gamma((2.0 * kf + 1.0) / alpha) - ln_gamma(2.0 * kf + 1.0)).exp() * x.powi(2 * k);
        sum += if k % 2 == 0 { mag } else { -mag };
        if k > 2 && mag < 1e-18 {
            break;
        }
    }
    sum / (PI * alpha)
}

#[test]
fn reference_values_for_small_alpha() {
    let q = QuadratureConfig::default();
    let cases = [
        (0.3, 1.0, 0.1, 0.44716892775367256),
        (0.3, 1.0, 1.0, 0.053395871244663169),
        (0.3, 1.0, 3.7, 0.012993271990888402),
        (0.3, 1.0, 10.0, 0.0041644333274876547),
        (0.3, 1.0, 50.0, 0.0006095013722821153),
        (0.5, 1.0, 0.1, 0.47643560578945242),
        (0.5, 1.0, 1.0, 0.086107146912604118),
        (0.5, 1.0, 3.7, 0.018243897246738415),
        (0.5, 1.0, 10.0, 0.0048722553837211162),
        (0.5, 1.0, 50.0, 0.00050334191453220795),
        (0.5, 2.0, 1.0, 0.085381200862603112),
        (0.7, 1.0, 1.0, 0.11702720820789359),
        (0.7, 1.0, 10.0, 0.0044993356942449159),
        (0.7, 0.5, 1.0, 0.10028208712322895),
    ];
    for (a, g, t, want) in cases {
        let got = pdf(&sas(a, g), t, &q).unwrap();
        assert!((got - want).abs() < 1e-9, "α={a} γ={g} θ={t}: {got} vs {want}");
    }
}

#[test]
fn quadrature_matches_large_argument_series() {
    let q = QuadratureConfig::default();
    for alpha in [0.4, 0.6, 0.8, 0.9] {
        for gamma in [0.5, 1.0, 2.0] {
            for x in [1.5, 2.0, 4.0, 8.0, 25.0] {
                let want = series_small_alpha(alpha, x) / gamma;
                let got = pdf(&sas(alpha, gamma), x * gamma, &q).unwrap();
                assert!((got - want).abs() < 1e-9, "α={alpha} γ={gamma} x={x}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn quadrature_matches_small_argument_series() {
    let q = QuadratureConfig::default();
    for alpha in [1.2, 1.5, 1.8, 1.95] {
        for x in [0.0, 0.25, 0.5, 1.0, 1.5] {
            let want = series_large_alpha(alpha, x);
            let got = pdf(&sas(alpha, 1.0), x, &q).unwrap();
            assert!((got - want).abs() < 1e-9, "α={alpha} x={x}: {got} vs {want}");
        }
    }
}

#[test]
fn forced_quadrature_matches_closed_forms() {
    let q = QuadratureConfig::default();
    for gamma in [0.5, 1.0, 2.0] {
        for alpha in [1.0, 2.0] {
            let p = sas(alpha, gamma);
            for i in 0..=200 {
                let t = -10.0 + 0.1 * i as f64;
                let closed = pdf(&p, t, &q).unwrap();
                let quad = pdf_quadrature(&p, t, &q).unwrap();
                assert!((closed - quad).abs() <= 1e-9, "α={alpha} γ={gamma} θ={t}: {closed} vs {quad}");
            }
        }
    }
}

#[test]
fn cauchy_example_values() {
    let q = QuadratureConfig::default();
    let v = pdf(&sas(1.0, 1.0), 1.0, &q).unwrap();
    assert!((v - 1.0 / (2.0 * PI)).abs() < 1e-15);
    let v = pdf(&sas(2.0, 1.0), 2.0, &q).unwrap();
    assert!((v - (-1.0f64).exp() / (2.0 * PI.sqrt())).abs() < 1e-15);
}

/// Composite Simpson rule for `∫₀^L h` plus the analytic tail.
fn total_mass(alpha: f64, gamma: f64, len: f64, n: usize) -> f64 {
    let q = QuadratureConfig::default();
    let p = sas(alpha, gamma);
    let h = len / n as f64;
    let mut s = 0.0;
    for i in 0..=n {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        s += w * pdf_quadrature(&p, i as f64 * h, &q).unwrap();
    }
    2.0 * s * h / 3.0 + tail_mass(&p, len).unwrap()
}

#[test]
fn mass_is_one_after_tail_correction() {
    for (alpha, gamma, len) in [(1.5, 1.0, 20.0), (1.0, 1.0, 20.0), (2.0, 0.5, 10.0), (1.2, 2.0, 40.0)] {
        let m = total_mass(alpha, gamma, len, 8000);
        assert!((m - 1.0).abs() < 1e-8, "α={alpha} γ={gamma}: {m}");
    }
}

#[test]
fn tails_are_heavier_for_smaller_alpha() {
    let alphas = [2.0, 1.5, 1.0, 0.7, 0.5];
    for d in [5.0, 10.0, 50.0] {
        let t: Vec<f64> = alphas.iter().map(|&a| tail_mass(&sas(a, 1.0), d).unwrap()).collect();
        assert!(t.windows(2).all(|w| w[1] > w[0]), "distance {d}: {t:?}");
    }
}

#[test]
fn cauchy_tail_mass_matches_arctangent() {
    for d in [0.5f64, 1.0, 3.0, 30.0] {
        let want = 2.0 / PI * (PI / 2.0 - d.atan());
        assert!((tail_mass(&sas(1.0, 1.0), d).unwrap() - want).abs() < 1e-14);
    }
}

#[test]
fn heavier_tails_give_larger_sample_extremes() {
    let a07 = sas(0.7, 1.0);
    let a2 = sas(2.0, 1.0);
    let max_abs = |v: Vec<f64>| v.into_iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let wins = (0..100u64)
        .filter(|&s| max_abs(stable::sample(&a07, 1000, s)) > max_abs(stable::sample(&a2, 1000, 1000 + s)))
        .count();
    assert!(wins >= 95, "{wins}/100");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn density_is_positive_symmetric_and_unimodal(alpha in 0.3f64..2.0, gamma in 0.3f64..3.0, t in 0.0f64..20.0) {
        let q = QuadratureConfig::default();
        let p = sas(alpha, gamma);
        let h = pdf(&p, t, &q).unwrap();
        prop_assert!(h > 0.0);
        prop_assert_eq!(h, pdf(&p, -t, &q).unwrap());
        let farther = pdf(&p, t + 0.5, &q).unwrap();
        prop_assert!(farther < h + 1e-12);
        let mode = pdf(&p, 0.0, &q).unwrap();
        prop_assert!(h <= mode + 1e-12);
    }

    #[test]
    fn gamma_is_a_scale(alpha in 0.4f64..2.0, gamma in 0.3f64..3.0, x in 0.0f64..6.0) {
        let q = QuadratureConfig::default();
        let unit = pdf(&sas(alpha, 1.0), x, &q).unwrap();
        let scaled = pdf(&sas(alpha, gamma), x * gamma, &q).unwrap();
        prop_assert!((scaled * gamma - unit).abs() < 5e-9);
    }

    #[test]
    fn location_shifts_density(alpha in 0.4f64..2.0, mu in -3.0f64..3.0, t in -5.0f64..5.0) {
        let q = QuadratureConfig::default();
        let shifted = StableParams::symmetric(alpha, 1.0, mu).unwrap();
        let a = pdf(&shifted, t + mu, &q).unwrap();
        let b = pdf(&sas(alpha, 1.0), t, &q).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn log_pdf_is_log_of_pdf(alpha in 0.4f64..2.0, t in -8.0f64..8.0) {
        let q = QuadratureConfig::default();
        let p = sas(alpha, 1.0);
        let lp = stable::log_pdf(&p, t, &q).unwrap();
        prop_assert!((lp - pdf(&p, t, &q).unwrap().ln()).abs() < 1e-9);
    }

    #[test]
    fn sampler_is_deterministic_per_seed(alpha in 0.3f64..2.0, seed in any::<u64>()) {
        let p = sas(alpha, 1.0);
        prop_assert_eq!(stable::sample(&p, 16, seed), stable::sample(&p, 16, seed));
    }
}
