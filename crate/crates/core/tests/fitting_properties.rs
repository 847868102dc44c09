use kramers_lambda::fitting::{
    fit_exponential_recovery, fit_four_voigt, fit_polarization_model, fit_polarization_model_weighted, FourVoigtModel, ParametricModel,
    PolarizationModel, RecoveryModel,
};
use kramers_lambda::spectrum::{linear_grid, polarization_depth, AbsorptionSpectrum, SpectrumMetadata};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

fn central_difference<M: ParametricModel>(model: &M, x: f64, p: &[f64]) -> Vec<f64> {
    (0..p.len())
        .map(|j| {
            let h = 1e-6 * p[j].abs().max(1e-3);
            let mut up = p.to_vec();
            let mut down = p.to_vec();
            up[j] += h;
            down[j] -= h;
            (model.evaluate(x, &up) - model.evaluate(x, &down)) / (2.0 * h)
        })
        .collect()
}

fn assert_gradient_close(analytic: &[f64], numeric: &[f64]) {
    for (a, n) in analytic.iter().zip(numeric) {
        assert!((a - n).abs() <= 1e-5 * a.abs().max(n.abs()).max(1e-3), "{a} vs {n}");
    }
}

#[test]
fn polarization_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let p = [rng.random_range(0.01..5.0), rng.random_range(0.01..5.0)];
        let phi: f64 = rng.random_range(0.0..180.0);
        let mut g = [0.0; 2];
        assert!(PolarizationModel.gradient(phi, &p, &mut g));
        assert_gradient_close(&g, &central_difference(&PolarizationModel, phi, &p));
    }
}

#[test]
fn recovery_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = RecoveryModel { components: 2 };
    for _ in 0..20 {
        let p = [
            rng.random_range(0.5..1.5),
            rng.random_range(0.1..1.0),
            rng.random_range(0.005..0.05),
            rng.random_range(0.1..1.0),
            rng.random_range(0.1..1.0),
        ];
        let t: f64 = rng.random_range(0.0..0.5);
        let mut g = [0.0; 5];
        assert!(model.gradient(t, &p, &mut g));
        assert_gradient_close(&g, &central_difference(&model, t, &p));
    }
}

fn four_line_truth() -> FourVoigtModel {
    FourVoigtModel {
        d_ad: 0.75,
        d_bc: 2.62,
        centers_ghz: [-5.67, -2.10, 2.10, 5.67],
        gaussian_fwhm_ghz: 2.0,
        lorentzian_fwhm_ghz: None,
        baseline: 0.0,
    }
}

fn noisy_spectrum(model: &FourVoigtModel, sigma: f64, points: usize, rng: &mut ChaCha8Rng) -> AbsorptionSpectrum {
    let grid = linear_grid(-12.0, 12.0, points).unwrap();
    let noise = Normal::new(0.0, sigma).unwrap();
    let depth = grid.iter().map(|&x| (model.evaluate(x) + noise.sample(rng)).max(0.0)).collect();
    AbsorptionSpectrum::new(grid, depth, SpectrumMetadata::default()).unwrap()
}

#[test]
fn four_voigt_round_trip_with_noise() {
    let truth = four_line_truth();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = noisy_spectrum(&truth, 0.01 * 2.62, 481, &mut rng);
        let init = FourVoigtModel::initial_guess(&spec, None).unwrap();
        let fit = fit_four_voigt(&spec, &init).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert!((fit.param("d_ad").unwrap() / 0.75 - 1.0).abs() < 0.05, "seed {seed}: {fit:?}");
        assert!((fit.param("d_bc").unwrap() / 2.62 - 1.0).abs() < 0.05);
        assert!((fit.derived("r_ad_bc").unwrap().value - 0.75 / 2.62).abs() < 0.02);
    }
}

#[test]
fn ratio_error_matches_parametric_bootstrap() {
    let truth = four_line_truth();
    let sigma = 0.02;
    let points = 161;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let spec = noisy_spectrum(&truth, sigma, points, &mut rng);
    let init = FourVoigtModel::initial_guess(&spec, None).unwrap();
    let fit = fit_four_voigt(&spec, &init).unwrap();
    let quoted = fit.derived("r_ad_bc").unwrap().error;

    let p = &fit.parameters;
    let fitted = FourVoigtModel {
        d_ad: p[0],
        d_bc: p[1],
        centers_ghz: [p[2], p[3], p[4], p[5]],
        gaussian_fwhm_ghz: p[6],
        lorentzian_fwhm_ghz: None,
        baseline: p[7],
    };
    let resid_sigma = fit.residual_norm / ((points - p.len()) as f64).sqrt();
    let grid = linear_grid(-12.0, 12.0, points).unwrap();
    let clean: Vec<f64> = grid.iter().map(|&x| fitted.evaluate(x)).collect();

    let samples: Vec<f64> = (0..10_000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(1_000_000 + i);
            let noise = Normal::new(0.0, resid_sigma).unwrap();
            let depth = clean.iter().map(|d| d + noise.sample(&mut rng)).collect();
            let s = AbsorptionSpectrum::new(grid.clone(), depth, SpectrumMetadata::default());
            // a negative sample depth cannot be represented; keep the point at zero
            let s = s.unwrap_or_else(|_| {
                let depth = clean.iter().map(|d| (d + noise.sample(&mut rng)).max(0.0)).collect();
                AbsorptionSpectrum::new(grid.clone(), depth, SpectrumMetadata::default()).unwrap()
            });
            fit_four_voigt(&s, &fitted).unwrap().derived("r_ad_bc").unwrap().value
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let sd = (samples.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64).sqrt();
    assert!((quoted / sd - 1.0).abs() < 0.2, "covariance {quoted} vs bootstrap {sd}");
}

#[test]
fn polarization_round_trip_with_noise() {
    let angles: Vec<f64> = (0..10).map(|i| i as f64 * 20.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (dp, ds) in [(0.75, 0.070), (2.62, 0.025)] {
        let noise = Normal::new(0.0, 0.002).unwrap();
        let depths: Vec<f64> = angles.iter().map(|&a| polarization_depth(dp, ds, a) + noise.sample(&mut rng)).collect();
        let fit = fit_polarization_model(&angles, &depths).unwrap();
        assert!((fit.param("d_parallel").unwrap() / dp - 1.0).abs() < 0.05);
        assert!((fit.param("d_perpendicular").unwrap() / ds - 1.0).abs() < 0.05);
    }
}

#[test]
fn weighted_polarization_fit() {
    let angles: Vec<f64> = (0..10).map(|i| i as f64 * 10.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let depths: Vec<f64> = angles.iter().map(|&a| polarization_depth(2.62, 0.025, a) + rng.random_range(-0.01..0.01)).collect();

    // equal errors reproduce the unweighted estimate
    let plain = fit_polarization_model(&angles, &depths).unwrap();
    let equal = fit_polarization_model_weighted(&angles, &depths, &vec![0.3; angles.len()]).unwrap();
    for (a, b) in plain.parameters.iter().zip(&equal.parameters) {
        assert!((a - b).abs() < 1e-9 * a.abs());
    }

    // a point with a tiny error is followed closely
    let mut errors = vec![0.01; angles.len()];
    errors[9] = 1e-6;
    let pinned = fit_polarization_model_weighted(&angles, &depths, &errors).unwrap();
    assert!((polarization_depth(pinned.parameters[0], pinned.parameters[1], 90.0) - depths[9]).abs() < 1e-6);

    assert!(fit_polarization_model_weighted(&angles, &depths, &[0.0; 10]).is_err());
    assert!(fit_polarization_model_weighted(&angles, &depths, &[0.1; 3]).is_err());
}

#[test]
fn recovery_round_trip_with_noise() {
    let delays: Vec<f64> = (0..80).map(|i| 0.001 * 1.1f64.powi(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Normal::new(0.0, 0.002).unwrap();
    let y: Vec<f64> = delays
        .iter()
        .map(|&t| 1.0 - 0.45 * (-t / 0.018).exp() - 0.5 * (-t / 0.320).exp() + noise.sample(&mut rng))
        .collect();
    let fit = fit_exponential_recovery(&delays, &y, 2).unwrap();
    assert!((fit.param("tau_1").unwrap() / 0.018 - 1.0).abs() < 0.1);
    assert!((fit.param("tau_2").unwrap() / 0.320 - 1.0).abs() < 0.1);
    assert!((fit.derived("zero_delay").unwrap().value - 0.05).abs() < 0.01, "{fit:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn accepted_steps_never_increase_the_residual(
        dp in 0.05..4.0f64, ds in 0.01..1.0f64, seed in 0u64..1000, scale in 0.0..0.05f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angles: Vec<f64> = (0..12).map(|i| i as f64 * 15.0).collect();
        let depths: Vec<f64> = angles
            .iter()
            .map(|&a| polarization_depth(dp, ds, a) * (1.0 + scale * rng.random_range(-1.0..1.0)))
            .collect();
        let fit = fit_polarization_model(&angles, &depths).unwrap();
        prop_assert!(fit.residual_norm <= fit.initial_residual_norm);
    }
}
