use kramers_lambda::fitting::fit_exponential_recovery;
use kramers_lambda::pump::{
    hole_spectrum, hole_width_mhz, recovery_curve, residual_fraction, simulate_pump, sweep_schedule, PumpConfig,
    PumpMode, PumpResult, RelaxationComponent,
};
use kramers_lambda::spectrum::LineShapeParams;

fn run(config: PumpConfig) -> PumpResult {
    simulate_pump(&config).unwrap()
}

fn zero_delay(config: PumpConfig) -> f64 {
    run(config).summary.residual_fraction
}

fn single_component(tau_s: f64) -> Vec<RelaxationComponent> {
    vec![RelaxationComponent { weight: 1.0, tau_s }]
}

fn probe() -> LineShapeParams {
    // 0.1 MHz homogeneous Lorentzian, widths in GHz
    LineShapeParams::new(0.0, 1e-4, 1.0).unwrap()
}

#[test]
fn populations_are_conserved_in_both_modes() {
    for mode in [PumpMode::SweepAveraged, PumpMode::ClassResolved] {
        let r = run(PumpConfig { mode, ..Default::default() });
        assert!(r.max_population_drift <= 1e-9, "{mode:?}: {}", r.max_population_drift);
        assert!(r.min_population >= -1e-12);
        for c in &r.state.classes {
            assert!((c.total() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn residual_decreases_with_branching_ratio() {
    let values: Vec<f64> = [0.0, 0.02, 0.05, 0.1, 0.27, 0.5, 1.0, 3.0]
        .iter()
        .map(|&r| zero_delay(PumpConfig { branching_ratio: r, ..Default::default() }))
        .collect();
    assert!(values.windows(2).all(|w| w[1] <= w[0]), "{values:?}");
}

#[test]
fn residual_decreases_with_pump_duration() {
    let values: Vec<f64> = [0.0, 0.001, 0.01, 0.05, 0.1, 0.3]
        .iter()
        .map(|&d| zero_delay(PumpConfig { pump_duration_s: d, ..Default::default() }))
        .collect();
    assert!(values.windows(2).all(|w| w[1] <= w[0]), "{values:?}");
}

#[test]
fn residual_grows_with_relaxation_rate() {
    let values: Vec<f64> = [8.0, 4.0, 2.0, 1.0, 0.5, 0.25]
        .iter()
        .map(|&k| {
            let spin_relaxation = vec![
                RelaxationComponent { weight: 0.5, tau_s: 0.018 * k },
                RelaxationComponent { weight: 0.5, tau_s: 0.320 * k },
            ];
            zero_delay(PumpConfig { spin_relaxation, ..Default::default() })
        })
        .collect();
    assert!(values.windows(2).all(|w| w[1] >= w[0]), "{values:?}");
}

#[test]
fn averaged_and_class_resolved_modes_agree() {
    let avg = run(PumpConfig::default()).summary;
    let cls = run(PumpConfig { mode: PumpMode::ClassResolved, ..Default::default() }).summary;
    for (a, c) in [
        (avg.residual_fraction, cls.residual_fraction),
        (avg.mean_n_g2, cls.mean_n_g2),
        (avg.mean_n_trap, cls.mean_n_trap),
    ] {
        assert!((a / c - 1.0).abs() < 0.05, "{a} vs {c}");
    }
}

// Without spin relaxation only g1 and e exchange population; flips leave for good.
#[test]
fn unrelaxed_pumping_matches_two_level_closed_form() {
    let (w, r, t1, t) = (2.0e3, 0.27, 100e-6, 0.1);
    let config = PumpConfig { spin_relaxation: vec![], branching_ratio: r, ..Default::default() };
    let res = run(config);

    let k = 1.0 / t1;
    let m = [[-w, w + k / (1.0 + r)], [w, -(w + k)]];
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr - 4.0 * det).sqrt();
    let (lp, lm) = (0.5 * (tr + disc), 0.5 * (tr - disc));
    // exp(Mt) = [(λ₊e^{λ₋t} − λ₋e^{λ₊t}) I + (e^{λ₊t} − e^{λ₋t}) M] / (λ₊ − λ₋), applied to (0.5, 0)
    let (ep, em) = ((lp * t).exp(), (lm * t).exp());
    let g1 = 0.5 * ((lp * em - lm * ep) + (ep - em) * m[0][0]) / (lp - lm);
    assert!((res.summary.mean_n_g1 - g1).abs() < 1e-9, "{} vs {g1}", res.summary.mean_n_g1);

    for r in [0.01, 0.27, 1.0] {
        let weak = PumpConfig {
            spin_relaxation: vec![],
            branching_ratio: r,
            average_pump_rate_per_s: 100.0,
            pump_duration_s: 10.0,
            ..Default::default()
        };
        assert!(zero_delay(weak) < 1e-3);
    }
}

#[test]
fn single_component_recovery_closed_form() {
    let tau = 0.018;
    let config = PumpConfig { spin_relaxation: single_component(tau), ..Default::default() };
    let res = run(config.clone());
    let k = 1.0 / config.excited_lifetime_s;
    let r = config.branching_ratio;
    let inside: Vec<_> = res
        .state
        .offsets_mhz
        .iter()
        .zip(&res.state.classes)
        .filter(|(x, _)| config.in_window(**x))
        .map(|(_, c)| *c)
        .collect();

    let oracle = |t: f64| -> f64 {
        let total: f64 = inside
            .iter()
            .map(|c| {
                let d0 = c.n_g1 - c.n_g2;
                let d = d0 * (-t / tau).exp()
                    + c.n_e * k * (1.0 - r) / (1.0 + r) * ((-k * t).exp() - (-t / tau).exp()) / (1.0 / tau - k);
                let s = 1.0 - c.n_e * (-k * t).exp();
                let g1 = 0.5 * (s + d);
                g1 / 0.5
            })
            .sum();
        total / inside.len() as f64
    };
    for t in [0.0, 1e-4, 1e-3, 0.005, 0.018, 0.05, 0.2] {
        let got = residual_fraction(&res, t).unwrap();
        assert!((got - oracle(t).min(1.0)).abs() < 1e-9, "t = {t}: {got} vs {}", oracle(t));
    }

    // once the excited level has emptied, recovery is a single exponential
    let t1 = 0.002;
    let f1 = residual_fraction(&res, t1).unwrap();
    for t in [0.005, 0.018, 0.05, 0.1] {
        let expected = 1.0 - (1.0 - f1) * (-(t - t1) / tau).exp();
        assert!((residual_fraction(&res, t).unwrap() - expected).abs() < 1e-6);
    }
}

#[test]
fn full_recovery_after_long_delay() {
    let res = run(PumpConfig::default());
    assert!((residual_fraction(&res, 20.0 * 0.320).unwrap() - 1.0).abs() < 1e-3);
    let none = run(PumpConfig { branching_ratio: 0.0, ..Default::default() });
    let relaxed = residual_fraction(&none, 20.0 * 0.320).unwrap();
    assert!((relaxed - 1.0).abs() < 1e-9);
}

#[test]
fn fitted_recovery_returns_configured_time_constants() {
    let delays: Vec<f64> = (0..60).map(|i| 0.001 * 1.12f64.powi(i)).collect();

    let single = run(PumpConfig { spin_relaxation: single_component(0.018), ..Default::default() });
    let y = recovery_curve(&single, &delays).unwrap();
    let fit = fit_exponential_recovery(&delays, &y, 1).unwrap();
    assert!((fit.param("tau_1").unwrap() / 0.018 - 1.0).abs() < 0.02);

    let double = run(PumpConfig::default());
    let y = recovery_curve(&double, &delays).unwrap();
    let fit = fit_exponential_recovery(&delays, &y, 2).unwrap();
    assert!((fit.param("tau_1").unwrap() / 0.018 - 1.0).abs() < 0.10);
    assert!((fit.param("tau_2").unwrap() / 0.320 - 1.0).abs() < 0.10);
    let truth = residual_fraction(&double, 0.0).unwrap();
    assert!((fit.derived("zero_delay").unwrap().value - truth).abs() < 0.01);
}

#[test]
fn hole_from_full_depletion_matches_box_convolution() {
    let config = PumpConfig {
        branching_ratio: 1.0,
        spin_relaxation: vec![],
        average_pump_rate_per_s: 1e5,
        ..Default::default()
    };
    let res = run(config.clone());
    assert!(res.summary.residual_fraction < 1e-9);
    let spectra = hole_spectrum(&res, &probe()).unwrap();
    let width = hole_width_mhz(&spectra).unwrap();
    let expected = config.pump_window_mhz + config.homogeneous_linewidth_mhz;
    assert!((width / expected - 1.0).abs() < 0.10, "{width}");

    // deficit of a box of full width W convolved with a Lorentzian of half width γ
    let (half, gamma) = (0.5 * config.pump_window_mhz, 0.5 * config.homogeneous_linewidth_mhz);
    let class_half = half + 0.5 * config.class_grid.step_mhz;
    for (nu, d) in spectra.hole.frequency_ghz.iter().zip(&spectra.hole.depth) {
        let x = nu * 1e3;
        let analytic = (((x + class_half) / gamma).atan() - ((x - class_half) / gamma).atan()) / std::f64::consts::PI;
        assert!((1.0 - d - analytic).abs() < 0.02, "{x} MHz: {} vs {analytic}", 1.0 - d);
    }
}

#[test]
fn default_scenario_hole() {
    let config = PumpConfig::default();
    let res = run(config.clone());
    let spectra = hole_spectrum(&res, &probe()).unwrap();
    let width = hole_width_mhz(&spectra).unwrap();
    assert!((width - 20.0).abs() <= 2.0, "{width}");
    for (i, nu) in spectra.hole.frequency_ghz.iter().enumerate() {
        assert!(spectra.hole.depth[i] <= spectra.pre_pump.depth[i] + 1e-12);
        if config.in_window(nu * 1e3) {
            assert!(spectra.anti_hole.depth[i] > spectra.pre_pump.depth[i]);
        }
    }
}

#[test]
fn zero_duration_pump_leaves_flat_spectrum() {
    let res = run(PumpConfig { pump_duration_s: 0.0, ..Default::default() });
    let spectra = hole_spectrum(&res, &probe()).unwrap();
    assert_eq!(spectra.hole, spectra.pre_pump);
    assert_eq!(spectra.anti_hole, spectra.pre_pump);
    assert!(hole_width_mhz(&spectra).is_none());
}

#[test]
fn sweep_dwell_is_uniform_over_the_window() {
    let config = PumpConfig::default();
    let s = sweep_schedule(&config);
    let bins = 400;
    let width = config.pump_window_mhz / bins as f64;
    let mut total = 0.0;
    for i in 0..bins {
        let lo = -0.5 * config.pump_window_mhz + i as f64 * width;
        let dwell = s.dwell_time_s(lo, lo + width);
        assert!((dwell - s.period_s / bins as f64).abs() < 1e-9 * s.period_s);
        total += dwell;
    }
    assert!((total - config.pump_duration_s / config.sweep_count as f64).abs() < 1e-9 * s.period_s);

    // sample the triangle wave directly
    let samples = 200_000;
    let mut hits = vec![0usize; 10];
    for n in 0..samples {
        let t = (n as f64 + 0.5) / samples as f64 * s.period_s;
        let x = s.offset_mhz(t) + 0.5 * config.pump_window_mhz;
        hits[((x / config.pump_window_mhz * 10.0) as usize).min(9)] += 1;
    }
    for h in hits {
        assert!((h as f64 / samples as f64 - 0.1).abs() < 1e-3);
    }
}
