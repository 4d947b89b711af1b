use wavemoments::gmwm::{fit_series, fit_wv, CovarianceChoice, FitOptions, OmegaKind, PipelineConfig, WeightingMatrix};
use wavemoments::lab::reference_scenarios;
use wavemoments::model::{parse_model, simulate, theoretical_wv};
use wavemoments::wavelet::decompose_slice;
use wavemoments::wv::{estimate_wv_standard, WvEstimate, WvEstimator};
use wavemoments::{ModelSpec, WaveletFamily};

fn exact(model: &ModelSpec, theta: &[f64], levels: usize) -> WvEstimate {
    let x = simulate(model, theta, 2048, 0, 0).unwrap();
    let pyr = decompose_slice(&x, levels, WaveletFamily::Haar).unwrap();
    let mut est = estimate_wv_standard(&pyr).unwrap();
    est.nu2 = theoretical_wv(model, theta, WaveletFamily::Haar, levels).unwrap();
    est
}

#[test]
fn recovers_reference_models_from_their_own_wv() {
    for sc in reference_scenarios(1000, 1, 0) {
        let est = exact(&sc.model, &sc.theta, 9);
        let omega = WeightingMatrix::relative(&est.nu2).unwrap();
        let fit = fit_wv(&est, &sc.model, &omega, &FitOptions::default(), None).unwrap();
        for (i, (a, b)) in fit.theta.iter().zip(&sc.theta).enumerate() {
            assert!(((a - b) / b).abs() < 1e-4, "{}: parameter {i} = {a}, expected {b}; {:?}", sc.id, fit.theta);
        }
    }
}

#[test]
fn recovers_nonstationary_composite() {
    let m = parse_model("RW + DR + WN + QN").unwrap().spec;
    let theta = [0.01, 0.05, 1.0, 0.2];
    let est = exact(&m, &theta, 10);
    let omega = WeightingMatrix::relative(&est.nu2).unwrap();
    let fit = fit_wv(&est, &m, &omega, &FitOptions::default(), None).unwrap();
    for (a, b) in fit.theta.iter().zip(&theta) {
        assert!(((a - b) / b).abs() < 1e-4, "{:?}", fit.theta);
    }
}

#[test]
fn ar1_pipeline_is_close_to_truth() {
    let m = parse_model("AR1").unwrap().spec;
    let x = simulate(&m, &[0.8, 2.0], 8192, 21, 0).unwrap();
    for cov in [
        CovarianceChoice::Batched { blocks: None },
        CovarianceChoice::BlockBootstrap {
            replicates: 50,
            block_len: None,
        },
        CovarianceChoice::Parametric { replicates: 50 },
    ] {
        let cfg = PipelineConfig {
            covariance: cov,
            ..Default::default()
        };
        let out = fit_series(&x, &m, None, &cfg).unwrap();
        assert!((out.fit.theta[0] - 0.8).abs() < 0.05, "{cov:?}: {:?}", out.fit.theta);
        assert!((out.fit.theta[1] - 2.0).abs() < 0.3, "{cov:?}: {:?}", out.fit.theta);
        let p = &out.fit.params[0];
        assert!(p.ci_lower.unwrap() < p.estimate && p.estimate < p.ci_upper.unwrap());
        assert!(out.wv.ci_lower.is_some());
    }
}

#[test]
fn doubling_length_halves_parameter_variance() {
    let m = parse_model("WN").unwrap().spec;
    let mut vars = Vec::new();
    for n in [4096, 8192] {
        let x = simulate(&m, &[1.0], n, 3, 0).unwrap();
        let cfg = PipelineConfig {
            estimator: WvEstimator::Standard,
            covariance: CovarianceChoice::Parametric { replicates: 400 },
            omega: OmegaKind::Diagonal,
            ..Default::default()
        };
        let out = fit_series(&x, &m, None, &cfg).unwrap();
        vars.push(out.fit.covariance.unwrap()[(0, 0)]);
    }
    let ratio = vars[0] / vars[1];
    assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
}

#[test]
fn pinned_start_values_are_honoured() {
    let parsed = parse_model("AR1(rho=0.5) + WN").unwrap();
    let x = simulate(&parse_model("AR1 + WN").unwrap().spec, &[0.5, 1.0, 0.5], 4096, 5, 0).unwrap();
    let out = fit_series(&x, &parsed.spec, Some(&parsed.values), &PipelineConfig::default()).unwrap();
    assert!(out.fit.theta.iter().all(|v| v.is_finite()));
}
