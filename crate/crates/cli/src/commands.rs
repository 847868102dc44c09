use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use kramers_lambda::branching::{branching_scan_misaligned, optimal_angle, LambdaSystem, TransitionLabel};
use kramers_lambda::fitting::{
    FitResult,
    fit_exponential_recovery, fit_four_voigt, fit_polarization_model, fit_polarization_model_weighted, FourVoigtModel,
    PolarizationBranching,
};
use kramers_lambda::io::{format_float, read_spectrum, read_table, write_json, write_spectrum, write_table, Table};
use kramers_lambda::pump::{hole_spectrum, hole_width_mhz, recovery_curve, residual_fraction, simulate_pump};
use kramers_lambda::spectrum::{linear_grid, polarization_depth, synthesize_spectrum, LineShapeParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

const OPTIMUM_RESOLUTION_DEG: f64 = 0.1;

fn out_path(config: &RunConfig, name: &str) -> std::path::PathBuf {
    config.output.directory.join(name)
}

fn lambda_system(config: &RunConfig) -> Result<LambdaSystem, CliError> {
    Ok(LambdaSystem::new(&config.materials.ground, &config.materials.excited, &config.field)?)
}

/// Inclusive grid `min, min + step, …` that stops at or before `max`.
fn angle_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(step.is_finite() && step > 0.0) {
        return Err(CliError::Usage(format!("--step {step} must be a positive number of degrees")));
    }
    if !(0.0..=90.0).contains(&min) || !(0.0..=90.0).contains(&max) || min > max {
        return Err(CliError::Usage(format!("need 0 <= --theta-min <= --theta-max <= 90, got {min} and {max}")));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| (min + i as f64 * step).min(max)).collect())
}

#[derive(Serialize)]
struct Optimum {
    field_tesla: f64,
    misalignment_deg: f64,
    theta_deg: f64,
    r_parallel: f64,
}

pub fn branching(
    config: &RunConfig,
    theta_min: f64,
    theta_max: f64,
    step: f64,
    misalignment: f64,
    optimize: bool,
) -> Result<(), CliError> {
    let grid = angle_grid(theta_min, theta_max, step)?;
    if !misalignment.is_finite() {
        return Err(CliError::Usage("--misalignment must be finite".into()));
    }
    let (g, e, b) = (&config.materials.ground, &config.materials.excited, config.field.magnitude_tesla);
    let scan = branching_scan_misaligned(g, e, b, &grid, misalignment)?;
    let rows: Vec<Vec<f64>> = scan.iter().map(|p| vec![p.theta_deg, p.r_parallel, p.r_perpendicular]).collect();
    let path = out_path(config, "branching.csv");
    write_table(&path, &["theta_deg", "r_parallel", "r_perpendicular"], &rows, &[])?;
    println!("wrote {} angles to {}", rows.len(), path.display());

    if optimize {
        if misalignment != 0.0 {
            return Err(CliError::Usage("--optimize works on the aligned field only".into()));
        }
        let opt = optimal_angle(g, e, b, OPTIMUM_RESOLUTION_DEG)?;
        let mut file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|err| CliError::Usage(format!("{}: {err}", path.display())))?;
        writeln!(
            file,
            "# optimum theta_deg={} r_parallel={}",
            format_float(opt.theta_deg),
            format_float(opt.r_parallel)
        )
        .map_err(|err| CliError::Usage(format!("{}: {err}", path.display())))?;
        let optimum = Optimum { field_tesla: b, misalignment_deg: misalignment, theta_deg: opt.theta_deg, r_parallel: opt.r_parallel };
        write_json(&out_path(config, "optimum.json"), &optimum)?;
        println!("optimum: theta = {:.2} deg, R_parallel = {:.4}", opt.theta_deg, opt.r_parallel);
    }
    Ok(())
}

#[derive(Serialize)]
struct LineReport<'a> {
    field_tesla: f64,
    theta_deg: f64,
    ground_splitting_ghz: f64,
    excited_splitting_ghz: f64,
    r_parallel: f64,
    r_perpendicular: f64,
    lines: &'a [kramers_lambda::Transition; 4],
}

pub fn spectrum(config: &RunConfig, phi: Option<f64>, phi_scan: bool, noise: f64, seed: u64) -> Result<(), CliError> {
    let phi = phi.unwrap_or(config.optics.phi_deg);
    if !phi.is_finite() {
        return Err(CliError::Usage("--phi must be finite".into()));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(CliError::Usage(format!("--noise {noise} must be >= 0")));
    }
    let o = &config.optics;
    let system = lambda_system(config)?;
    let shape = o.line_shape()?;
    let grid = linear_grid(o.grid_start_ghz, o.grid_stop_ghz, o.grid_points)?;
    let mut spec = synthesize_spectrum(&system.table, &shape, o.total_depth_pi, o.total_depth_sigma, phi, &grid)?;
    spec.add_background(o.background_depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).map_err(|e| CliError::Numerical(e.to_string()))?;
    if noise > 0.0 {
        let scale = noise * spec.depth.iter().cloned().fold(0.0, f64::max);
        // depths are optical densities, so noise cannot push them below zero
        spec.depth.iter_mut().for_each(|d| *d = (*d + scale * unit.sample(&mut rng)).max(0.0));
    }
    let path = out_path(config, "spectrum.csv");
    write_spectrum(&path, &spec)?;
    let report = LineReport {
        field_tesla: config.field.magnitude_tesla,
        theta_deg: config.field.theta_deg,
        ground_splitting_ghz: system.ground.splitting_ghz(),
        excited_splitting_ghz: system.excited.splitting_ghz(),
        r_parallel: system.branching.r_parallel,
        r_perpendicular: system.branching.r_perpendicular,
        lines: &system.table.lines,
    };
    write_json(&out_path(config, "lines.json"), &report)?;
    println!("wrote {} points to {}", spec.len(), path.display());

    if phi_scan {
        // peak depth of one line of each pair, the two modes attenuated separately
        let pair_depth = |label: TransitionLabel, phi: f64| {
            let line = system.table.line(label);
            polarization_depth(o.total_depth_pi * line.strength_pi, o.total_depth_sigma * line.strength_sigma, phi)
        };
        // each tabulated depth carries its own relative error
        let mut noisy = |d: f64| (d * (1.0 + noise * unit.sample(&mut rng))).max(0.0);
        let n = (180.0 / o.phi_step_deg + 1e-9).floor() as usize + 1;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let phi = (i as f64 * o.phi_step_deg).min(180.0);
                let (ad, bc) = (pair_depth(TransitionLabel::A, phi), pair_depth(TransitionLabel::B, phi));
                if noise > 0.0 { vec![phi, noisy(ad), noisy(bc)] } else { vec![phi, ad, bc] }
            })
            .collect();
        write_table(&out_path(config, "phi_scan.csv"), &["phi_deg", "d_ad", "d_bc"], &rows, &[])?;
    }
    Ok(())
}

fn required_column(table: &Table, name: &str, path: &Path) -> Result<Vec<f64>, CliError> {
    table
        .column(name)
        .ok_or_else(|| CliError::Usage(format!("{}: missing column '{name}'", path.display())))
}

fn warn(fit: &FitResult) {
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
    if !fit.converged {
        eprintln!("warning: fit stopped without converging ({:?})", fit.termination);
    }
}

pub fn fit_voigt4(config: &RunConfig, data: &Path) -> Result<(), CliError> {
    let spec = read_spectrum(data)?;
    let system = lambda_system(config)?;
    let init = FourVoigtModel::initial_guess(&spec, Some(&system.table))?;
    let fit = fit_four_voigt(&spec, &init)?;
    warn(&fit);
    write_json(&out_path(config, "fit.json"), &fit)?;
    let r = fit.derived("r_ad_bc").ok_or_else(|| CliError::Numerical("fit did not report r_ad_bc".into()))?;
    println!("R = d_ad / d_bc = {:.4} +/- {:.4}", r.value, r.error);
    Ok(())
}

#[derive(Serialize)]
struct PolarizationReport {
    ad: FitResult,
    bc: FitResult,
    branching: PolarizationBranching,
    reciprocity_consistent: bool,
}

pub fn fit_polarization(config: &RunConfig, data: &Path) -> Result<(), CliError> {
    let table = read_table(data)?;
    let phi = required_column(&table, "phi_deg", data)?;
    // optional `<pair>_error` columns weight each depth by 1/σ²
    let pair = |name: &str| -> Result<FitResult, CliError> {
        let depths = required_column(&table, name, data)?;
        Ok(match table.column(&format!("{name}_error")) {
            Some(errors) => fit_polarization_model_weighted(&phi, &depths, &errors)?,
            None => fit_polarization_model(&phi, &depths)?,
        })
    };
    let (ad, bc) = (pair("d_ad")?, pair("d_bc")?);
    warn(&ad);
    warn(&bc);
    let branching = PolarizationBranching::from_fits(&ad, &bc)?;
    let report = PolarizationReport { reciprocity_consistent: branching.reciprocity_consistent(), ad, bc, branching };
    write_json(&out_path(config, "fit.json"), &report)?;
    println!("R_parallel = {:.4} +/- {:.4}", branching.r_parallel, branching.r_parallel_error);
    println!(
        "1/R_perpendicular = {:.4} +/- {:.4}",
        branching.inverse_r_perpendicular, branching.inverse_r_perpendicular_error
    );
    Ok(())
}

pub fn fit_recovery(config: &RunConfig, data: &Path, components: usize) -> Result<(), CliError> {
    let table = read_table(data)?;
    let delays_s: Vec<f64> = required_column(&table, "delay_ms", data)?.iter().map(|t| t * 1e-3).collect();
    let fractions = required_column(&table, "residual_fraction", data)?;
    let fit = fit_exponential_recovery(&delays_s, &fractions, components)?;
    warn(&fit);
    write_json(&out_path(config, "fit.json"), &fit)?;
    for k in 1..=components {
        let name = format!("tau_{k}");
        if let (Some(v), Some(e)) = (fit.param(&name), fit.error(&name)) {
            println!("{name} = {:.3} +/- {:.3} ms", v * 1e3, e * 1e3);
        }
    }
    if let Some(z) = fit.derived("zero_delay") {
        println!("zero-delay residual = {:.4} +/- {:.4}", z.value, z.error);
    }
    Ok(())
}

#[derive(Serialize)]
struct ResidualAtDelay {
    delay_ms: f64,
    residual_fraction: f64,
}

#[derive(Serialize)]
struct PumpReport {
    summary: kramers_lambda::pump::PumpSummary,
    polarization_percent: f64,
    max_population_drift: f64,
    min_population: f64,
    hole_width_mhz: Option<f64>,
    /// Zero-delay residual extrapolated from a fit to the simulated recovery.
    zero_delay_extrapolation: Option<f64>,
    zero_delay_extrapolation_error: Option<f64>,
    residuals: Vec<ResidualAtDelay>,
}

/// Delays for the extrapolation fit: 1 ms upward by 12% steps, about 0.9 s.
fn extrapolation_delays_s() -> Vec<f64> {
    (0..60).map(|i| 0.001 * 1.12f64.powi(i)).collect()
}

pub fn pump(config: &RunConfig, delays_ms: &[f64]) -> Result<(), CliError> {
    if let Some(d) = delays_ms.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(CliError::Usage(format!("--delays: {d} ms is not a finite non-negative delay")));
    }
    let result = simulate_pump(&config.pump)?;

    let class_rows: Vec<Vec<f64>> = result
        .state
        .offsets_mhz
        .iter()
        .zip(&result.state.classes)
        .map(|(x, c)| vec![*x, c.n_g1, c.n_g2, c.n_e, c.n_trap])
        .collect();
    write_table(&out_path(config, "classes.csv"), &["offset_mhz", "n_g1", "n_g2", "n_e", "n_trap"], &class_rows, &[])?;

    let probe = LineShapeParams::new(0.0, config.pump.homogeneous_linewidth_mhz * 1e-3, 1.0)?;
    let spectra = hole_spectrum(&result, &probe)?;
    let hole_rows: Vec<Vec<f64>> = (0..spectra.hole.len())
        .map(|i| {
            vec![
                spectra.hole.frequency_ghz[i],
                spectra.pre_pump.depth[i],
                spectra.hole.depth[i],
                spectra.anti_hole.depth[i],
            ]
        })
        .collect();
    write_table(
        &out_path(config, "hole_spectrum.csv"),
        &["frequency_ghz", "pre_pump", "hole", "anti_hole"],
        &hole_rows,
        &[],
    )?;

    let residuals: Vec<ResidualAtDelay> = delays_ms
        .iter()
        .map(|&d| Ok(ResidualAtDelay { delay_ms: d, residual_fraction: residual_fraction(&result, d * 1e-3)? }))
        .collect::<Result<_, CliError>>()?;
    let rows: Vec<Vec<f64>> = residuals.iter().map(|r| vec![r.delay_ms, r.residual_fraction]).collect();
    write_table(&out_path(config, "residual.csv"), &["delay_ms", "residual_fraction"], &rows, &[])?;

    let components = config.pump.spin_relaxation.len();
    let (zero, zero_err) = if components == 0 || result.summary.residual_fraction >= 1.0 {
        (None, None)
    } else {
        let delays = extrapolation_delays_s();
        let curve = recovery_curve(&result, &delays)?;
        match fit_exponential_recovery(&delays, &curve, components) {
            Ok(fit) => {
                let z = fit.derived("zero_delay");
                (z.map(|z| z.value), z.map(|z| z.error))
            }
            Err(e) => {
                eprintln!("warning: zero-delay extrapolation failed: {e}");
                (None, None)
            }
        }
    };

    let report = PumpReport {
        summary: result.summary,
        polarization_percent: 100.0 * result.summary.spin_polarization,
        max_population_drift: result.max_population_drift,
        min_population: result.min_population,
        hole_width_mhz: hole_width_mhz(&spectra),
        zero_delay_extrapolation: zero,
        zero_delay_extrapolation_error: zero_err,
        residuals,
    };
    write_json(&out_path(config, "summary.json"), &report)?;
    println!(
        "residual at zero delay {:.4}, spin polarization {:.2}%",
        result.summary.residual_fraction, report.polarization_percent
    );
    for r in &report.residuals {
        println!("delay {} ms: residual {:.4}", format_float(r.delay_ms), r.residual_fraction);
    }
    Ok(())
}
