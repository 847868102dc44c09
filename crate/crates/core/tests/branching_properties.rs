use kramers_lambda::branching::{branching_ratios, optimal_angle, LambdaCoefficients, LambdaSystem};
use kramers_lambda::zeeman::{FieldConfig, GTensor, SpinBasis};
use num_complex::Complex64;
use proptest::prelude::*;

fn r_parallel_closed_form(ground: &GTensor, excited: &GTensor, theta_deg: f64) -> f64 {
    let t = theta_deg.to_radians().tan();
    let chi_g = (ground.g_perpendicular / ground.g_parallel * t).atan();
    let chi_e = (excited.g_perpendicular / excited.g_parallel * t).atan();
    (0.5 * (chi_g - chi_e)).tan().powi(2)
}

fn system(theta: f64) -> LambdaSystem {
    let field = FieldConfig::new(0.31, theta).unwrap();
    LambdaSystem::new(&GTensor::nd_yvo4_ground(), &GTensor::nd_yvo4_excited(), &field).unwrap()
}

// Doublets with negative principal values, ground direct and excited reversed,
// as for the reference material.
fn pair() -> impl Strategy<Value = (GTensor, GTensor)> {
    (-4.0..-0.05f64, -4.0..-0.05f64, -4.0..-0.05f64, -4.0..-0.05f64).prop_map(|(a, b, c, d)| {
        (GTensor::new(a, b, SpinBasis::Direct).unwrap(), GTensor::new(c, d, SpinBasis::Reversed).unwrap())
    })
}

#[test]
fn diagonalization_matches_closed_form_on_degree_grid() {
    let (g, e) = (GTensor::nd_yvo4_ground(), GTensor::nd_yvo4_excited());
    for i in 0..=90 {
        let theta = i as f64;
        let r = system(theta).branching.r_parallel;
        let oracle = if i == 90 { 0.0 } else { r_parallel_closed_form(&g, &e, theta) };
        assert!((r - oracle).abs() < 1e-9, "θ = {theta}: {r} vs {oracle}");
    }
}

#[test]
fn reference_values() {
    assert!((system(45.0).branching.r_parallel - 0.270).abs() < 0.002);
    assert!((system(51.0).branching.r_parallel - 0.278).abs() < 0.001);
}

#[test]
fn optimum_matches_dense_brute_force() {
    let (g, e) = (GTensor::nd_yvo4_ground(), GTensor::nd_yvo4_excited());
    let (mut best_theta, mut best_r) = (0.0, f64::MIN);
    for i in 0..=9000 {
        let theta = i as f64 * 0.01;
        let r = system(theta).branching.r_parallel;
        if r > best_r {
            best_theta = theta;
            best_r = r;
        }
    }
    let opt = optimal_angle(&g, &e, 0.31, 1.0).unwrap();
    assert!((opt.theta_deg - best_theta).abs() <= 0.01);
    assert!(opt.r_parallel >= best_r - 1e-12);
    assert!((opt.theta_deg - 51.0).abs() < 0.5);
}

#[test]
fn strength_rows_are_invariant_under_angle() {
    for i in 0..=90 {
        let table = system(i as f64).table;
        let pi: f64 = table.lines.iter().map(|l| l.strength_pi).sum();
        let sigma: f64 = table.lines.iter().map(|l| l.strength_sigma).sum();
        assert!((pi - 2.0).abs() < 1e-9 && (sigma - 2.0).abs() < 1e-9, "θ = {i}: {pi} {sigma}");
    }
}

proptest! {
    #[test]
    fn closed_form_holds_for_any_same_sign_pair((g, e) in pair(), theta in 0.0..89.0f64) {
        let field = FieldConfig::new(0.5, theta).unwrap();
        let r = LambdaSystem::new(&g, &e, &field).unwrap().branching;
        let oracle = r_parallel_closed_form(&g, &e, theta);
        prop_assert!((r.r_parallel - oracle).abs() <= 1e-9 * (1.0 + oracle));
    }

    #[test]
    fn reciprocity((g, e) in pair(), theta in 0.5..89.5f64) {
        let field = FieldConfig::new(0.5, theta).unwrap();
        let r = LambdaSystem::new(&g, &e, &field).unwrap().branching;
        prop_assume!(!r.parallel_infinite && !r.perpendicular_infinite && r.r_parallel > 1e-6 && r.r_parallel < 1e6);
        prop_assert!((r.r_parallel * r.r_perpendicular - 1.0).abs() < 1e-9);
    }

    #[test]
    fn endpoints_vanish((g, e) in pair(), b in 0.01..6.0f64) {
        for theta in [0.0, 90.0] {
            let r = LambdaSystem::new(&g, &e, &FieldConfig::new(b, theta).unwrap()).unwrap().branching;
            prop_assert!(r.r_parallel.abs() < 1e-9);
        }
    }

    #[test]
    fn global_phases_do_not_change_ratios(theta in 0.0..=90.0f64, p1 in 0.0..6.3f64, p2 in 0.0..6.3f64) {
        let c = system(theta).coefficients;
        let (u, v) = (Complex64::from_polar(1.0, p1), Complex64::from_polar(1.0, p2));
        let shifted = LambdaCoefficients { alpha: c.alpha * u, beta: c.beta * u, gamma: c.gamma * v, delta: c.delta * v, ..c };
        let (a, b) = (branching_ratios(&c), branching_ratios(&shifted));
        prop_assert_eq!(a.parallel_infinite, b.parallel_infinite);
        prop_assert_eq!(a.perpendicular_infinite, b.perpendicular_infinite);
        prop_assert!((a.r_parallel - b.r_parallel).abs() < 1e-12);
        if !a.perpendicular_infinite {
            prop_assert!((a.r_perpendicular - b.r_perpendicular).abs() <= 1e-9 * (1.0 + a.r_perpendicular));
        }
    }
}
