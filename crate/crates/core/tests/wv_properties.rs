use proptest::prelude::*;
use wavemoments::model::{parse_model, simulate, theoretical_wv};
use wavemoments::psi::{PsiKind, PsiSpec};
use wavemoments::wavelet::decompose_slice;
use wavemoments::wv::{estimate_wv_robust, estimate_wv_standard};
use wavemoments::WaveletFamily;

fn families() -> impl Strategy<Value = WaveletFamily> {
    prop_oneof![
        Just(WaveletFamily::Haar),
        Just(WaveletFamily::Daubechies(4)),
        Just(WaveletFamily::Daubechies(8)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn infinite_tuning_constant_reproduces_standard(seed in 0u64..10_000, fam in families()) {
        let x = simulate(&parse_model("AR1 + WN").unwrap().spec, &[0.7, 1.0, 0.3], 600, seed, 0).unwrap();
        let pyr = decompose_slice(&x, 5, fam).unwrap();
        let a = estimate_wv_standard(&pyr).unwrap().nu2;
        for kind in [PsiKind::Huber, PsiKind::Tukey] {
            let b = estimate_wv_robust(&pyr, &PsiSpec::new(kind, f64::INFINITY).unwrap()).unwrap().nu2;
            for (u, v) in a.iter().zip(&b) {
                prop_assert!(((u - v) / u).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn estimates_scale_with_the_data(seed in 0u64..10_000, k in 0.01f64..100.0) {
        let x = simulate(&parse_model("WN").unwrap().spec, &[1.0], 512, seed, 0).unwrap();
        let y: Vec<f64> = x.iter().map(|v| v * k).collect();
        let spec = PsiSpec::default();
        let a = estimate_wv_robust(&decompose_slice(&x, 4, WaveletFamily::Haar).unwrap(), &spec).unwrap().nu2;
        let b = estimate_wv_robust(&decompose_slice(&y, 4, WaveletFamily::Haar).unwrap(), &spec).unwrap().nu2;
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((v / (u * k * k) - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn shift_invariance(seed in 0u64..10_000, c in -1e3f64..1e3) {
        let x = simulate(&parse_model("AR1").unwrap().spec, &[0.5, 1.0], 400, seed, 0).unwrap();
        let y: Vec<f64> = x.iter().map(|v| v + c).collect();
        let a = decompose_slice(&x, 4, WaveletFamily::Daubechies(4)).unwrap();
        let b = decompose_slice(&y, 4, WaveletFamily::Daubechies(4)).unwrap();
        for j in 1..=4 {
            for (u, v) in a.level(j).iter().zip(b.level(j)) {
                prop_assert!((u - v).abs() < 1e-9 * (1.0 + c.abs()));
            }
        }
    }

    #[test]
    fn robust_estimate_is_positive_and_finite(seed in 0u64..10_000) {
        let x = simulate(&parse_model("RW + WN").unwrap().spec, &[0.1, 1.0], 700, seed, 0).unwrap();
        let est = estimate_wv_robust(&decompose_slice(&x, 5, WaveletFamily::Haar).unwrap(), &PsiSpec::default()).unwrap();
        prop_assert!(est.nu2.iter().all(|v| v.is_finite() && *v > 0.0));
        let w = est.weights.unwrap();
        prop_assert!(w.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn monte_carlo_mean_matches_theory() {
    let m = parse_model("AR1 + WN").unwrap().spec;
    let theta = [0.8, 1.0, 0.5];
    let nu = theoretical_wv(&m, &theta, WaveletFamily::Haar, 6).unwrap();
    let reps = 300;
    let mut mean = vec![0.0; 6];
    let mut mean_r = vec![0.0; 6];
    for r in 0..reps {
        let x = simulate(&m, &theta, 2048, 77, r).unwrap();
        let pyr = decompose_slice(&x, 6, WaveletFamily::Haar).unwrap();
        for (acc, v) in mean.iter_mut().zip(estimate_wv_standard(&pyr).unwrap().nu2) {
            *acc += v / reps as f64;
        }
        for (acc, v) in mean_r.iter_mut().zip(estimate_wv_robust(&pyr, &PsiSpec::default()).unwrap().nu2) {
            *acc += v / reps as f64;
        }
    }
    for j in 0..6 {
        assert!((mean[j] / nu[j] - 1.0).abs() < 0.03, "standard level {}: {} vs {}", j + 1, mean[j], nu[j]);
        assert!((mean_r[j] / nu[j] - 1.0).abs() < 0.05, "robust level {}: {} vs {}", j + 1, mean_r[j], nu[j]);
    }
}

#[test]
fn robust_estimate_resists_isolated_outliers() {
    let m = parse_model("WN").unwrap().spec;
    let mut x = simulate(&m, &[1.0], 4096, 8, 0).unwrap();
    for t in (0..4096).step_by(100) {
        x[t] += 30.0;
    }
    let pyr = decompose_slice(&x, 3, WaveletFamily::Haar).unwrap();
    let rob = estimate_wv_robust(&pyr, &PsiSpec::default()).unwrap().nu2;
    let std = estimate_wv_standard(&pyr).unwrap().nu2;
    assert!((rob[0] / 0.5 - 1.0).abs() < 0.1, "{rob:?}");
    assert!(std[0] > 2.0 * 0.5);
}
