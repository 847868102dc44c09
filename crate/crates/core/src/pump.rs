//! Rate-equation model of swept-laser optical pumping across an inhomogeneous line.
//!
//! Each frequency class carries four populations: the pumped spin level `g1`, the
//! other spin level `g2`, the excited level `e` and a slow reservoir `trap`. The
//! laser drives `g1 ↔ e`. The excited level decays with lifetime `T1`, returning to
//! `g1` with probability `1/(1+R)` and flipping with probability `R/(1+R)`.
//!
//! Spin relaxation has at most two components, sorted by time constant. Flip decays
//! are routed to `g2` in proportion to the fast weight and to `trap` in proportion
//! to the slow weight. `g1` and `g2` equilibrate with the fast time constant. The
//! reservoir empties into both spin levels equally with the slow time constant.
//! After the pump, `g1` recovers as a sum of these two exponentials (plus a
//! negligible `T1` term).

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::PumpError;
use crate::spectrum::{voigt_unit, voigt_unit_area, AbsorptionSpectrum, LineShapeParams, SpectrumMetadata};

const DRIFT_LIMIT: f64 = 1e-6;
const ODE_TOLERANCE: f64 = 1e-8;
const MAX_CLASSES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxationComponent {
    pub weight: f64,
    pub tau_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PumpMode {
    /// Every class inside the window sees the average rate for the whole pump.
    #[default]
    SweepAveraged,
    /// Each class sees the swept laser through its homogeneous Lorentzian.
    ClassResolved,
}

/// Frequency classes span the window plus `margin_mhz` on each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassGrid {
    pub margin_mhz: f64,
    pub step_mhz: f64,
}

impl Default for ClassGrid {
    fn default() -> Self {
        Self { margin_mhz: 5.0, step_mhz: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PumpConfig {
    pub branching_ratio: f64,
    pub excited_lifetime_s: f64,
    /// Empty disables spin relaxation entirely.
    pub spin_relaxation: Vec<RelaxationComponent>,
    pub pump_window_mhz: f64,
    pub sweep_count: u32,
    pub pump_duration_s: f64,
    /// Calibrated so the default scenario leaves about 5% of the ions in `g1`.
    pub average_pump_rate_per_s: f64,
    pub class_grid: ClassGrid,
    pub homogeneous_linewidth_mhz: f64,
    pub mode: PumpMode,
}

impl Default for PumpConfig {
    fn default() -> Self {
        Self {
            branching_ratio: 0.27,
            excited_lifetime_s: 100e-6,
            spin_relaxation: vec![
                RelaxationComponent { weight: 0.5, tau_s: 0.018 },
                RelaxationComponent { weight: 0.5, tau_s: 0.320 },
            ],
            pump_window_mhz: 20.0,
            sweep_count: 1000,
            pump_duration_s: 0.1,
            average_pump_rate_per_s: 2.0e3,
            class_grid: ClassGrid::default(),
            homogeneous_linewidth_mhz: 0.1,
            mode: PumpMode::SweepAveraged,
        }
    }
}

impl PumpConfig {
    pub fn validate(&self) -> Result<(), PumpError> {
        let bad = |msg: String| Err(PumpError::InvalidConfig(msg));
        if !(self.branching_ratio.is_finite() && self.branching_ratio >= 0.0) {
            return bad(format!("branching_ratio {} must be finite and >= 0", self.branching_ratio));
        }
        let positive = [
            ("excited_lifetime_s", self.excited_lifetime_s),
            ("pump_window_mhz", self.pump_window_mhz),
            ("class_grid.step_mhz", self.class_grid.step_mhz),
            ("homogeneous_linewidth_mhz", self.homogeneous_linewidth_mhz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} = {v} must be finite and > 0"));
            }
        }
        let non_negative = [
            ("pump_duration_s", self.pump_duration_s),
            ("average_pump_rate_per_s", self.average_pump_rate_per_s),
            ("class_grid.margin_mhz", self.class_grid.margin_mhz),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if self.sweep_count == 0 {
            return bad("sweep_count must be >= 1".into());
        }
        if self.spin_relaxation.len() > 2 {
            return bad(format!("{} relaxation components given; at most 2 supported", self.spin_relaxation.len()));
        }
        for (i, c) in self.spin_relaxation.iter().enumerate() {
            if !(c.tau_s.is_finite() && c.tau_s > 0.0) {
                return bad(format!("spin_relaxation[{i}].tau_s = {} must be finite and > 0", c.tau_s));
            }
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return bad(format!("spin_relaxation[{i}].weight = {} must be >= 0", c.weight));
            }
        }
        if !self.spin_relaxation.is_empty() {
            let total: f64 = self.spin_relaxation.iter().map(|c| c.weight).sum();
            if (total - 1.0).abs() > 1e-9 {
                return bad(format!("relaxation weights sum to {total}, expected 1"));
            }
        }
        let n = self.class_count();
        if n > MAX_CLASSES {
            return bad(format!("class grid has {n} classes (limit {MAX_CLASSES})"));
        }
        Ok(())
    }

    fn half_span_steps(&self) -> usize {
        let half = 0.5 * self.pump_window_mhz + self.class_grid.margin_mhz;
        (half / self.class_grid.step_mhz - 1e-9).ceil().max(0.0) as usize
    }

    fn class_count(&self) -> usize {
        2 * self.half_span_steps() + 1
    }

    /// Class offsets from the window center, symmetric about zero.
    pub fn class_offsets_mhz(&self) -> Vec<f64> {
        let k = self.half_span_steps() as i64;
        (-k..=k).map(|i| i as f64 * self.class_grid.step_mhz).collect()
    }

    pub fn in_window(&self, offset_mhz: f64) -> bool {
        offset_mhz.abs() <= 0.5 * self.pump_window_mhz * (1.0 + 1e-12)
    }

    /// Rate matrix for state `[g1, g2, e, trap]` at pump rate `w`.
    /// Every column sums to zero.
    pub fn rate_matrix(&self, w: f64) -> Matrix4<f64> {
        let k = 1.0 / self.excited_lifetime_s;
        let r = self.branching_ratio;
        let stay = k / (1.0 + r);
        let flip = k * r / (1.0 + r);

        let mut comps = self.spin_relaxation.clone();
        comps.sort_by(|a, b| a.tau_s.total_cmp(&b.tau_s));
        let (w_fast, exchange, w_slow, release) = match comps.as_slice() {
            [] => (1.0, 0.0, 0.0, 0.0),
            [only] => (1.0, 0.5 / only.tau_s, 0.0, 0.0),
            [fast, slow, ..] => (fast.weight, 0.5 / fast.tau_s, slow.weight, 1.0 / slow.tau_s),
        };

        #[rustfmt::skip]
        let a = Matrix4::new(
            -w - exchange, exchange,  w + stay,          0.5 * release,
            exchange,      -exchange, flip * w_fast,     0.5 * release,
            w,             0.0,       -w - k,            0.0,
            0.0,           0.0,       flip * w_slow,     -release,
        );
        a
    }

    fn peak_pump_rate(&self) -> f64 {
        self.average_pump_rate_per_s * self.pump_window_mhz / (0.5 * std::f64::consts::PI * self.homogeneous_linewidth_mhz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPopulation {
    pub n_g1: f64,
    pub n_g2: f64,
    pub n_e: f64,
    pub n_trap: f64,
}

impl Default for ClassPopulation {
    fn default() -> Self {
        Self { n_g1: 0.5, n_g2: 0.5, n_e: 0.0, n_trap: 0.0 }
    }
}

impl ClassPopulation {
    pub fn total(&self) -> f64 {
        self.n_g1 + self.n_g2 + self.n_e + self.n_trap
    }

    fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.n_g1, self.n_g2, self.n_e, self.n_trap)
    }

    fn from_vector(v: &Vector4<f64>) -> Self {
        Self { n_g1: v[0], n_g2: v[1], n_e: v[2], n_trap: v[3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpState {
    pub offsets_mhz: Vec<f64>,
    pub classes: Vec<ClassPopulation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpSummary {
    /// Window-averaged `n_g1` relative to its initial value 0.5.
    pub residual_fraction: f64,
    /// `1 − n_g1`, window-averaged.
    pub spin_polarization: f64,
    pub mean_n_g1: f64,
    pub mean_n_g2: f64,
    pub mean_n_e: f64,
    pub mean_n_trap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpResult {
    pub config: PumpConfig,
    pub state: PumpState,
    /// Largest deviation of any class total from 1 seen during the run.
    pub max_population_drift: f64,
    /// Smallest population component seen during the run.
    pub min_population: f64,
    pub summary: PumpSummary,
}

/// Triangle-wave laser detuning: starts at the lower window edge, reaches the
/// upper edge after half a period and returns. One period per sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSchedule {
    pub window_mhz: f64,
    pub period_s: f64,
    pub sweep_count: u32,
}

pub fn sweep_schedule(config: &PumpConfig) -> SweepSchedule {
    SweepSchedule {
        window_mhz: config.pump_window_mhz,
        period_s: config.pump_duration_s / config.sweep_count.max(1) as f64,
        sweep_count: config.sweep_count,
    }
}

impl SweepSchedule {
    pub fn offset_mhz(&self, t_s: f64) -> f64 {
        let half = 0.5 * self.window_mhz;
        if self.period_s <= 0.0 {
            return -half;
        }
        let u = (t_s / self.period_s).rem_euclid(1.0);
        if u <= 0.5 {
            -half + 2.0 * u * self.window_mhz
        } else {
            half - (2.0 * u - 1.0) * self.window_mhz
        }
    }

    /// Time per period spent with the laser inside `[lo_mhz, hi_mhz]`.
    pub fn dwell_time_s(&self, lo_mhz: f64, hi_mhz: f64) -> f64 {
        let half = 0.5 * self.window_mhz;
        let overlap = (hi_mhz.min(half) - lo_mhz.max(-half)).max(0.0);
        self.period_s * overlap / self.window_mhz
    }

    /// Times within one period at which the laser passes `offset_mhz`.
    pub fn crossing_times_s(&self, offset_mhz: f64) -> Option<(f64, f64)> {
        let half = 0.5 * self.window_mhz;
        if offset_mhz.abs() > half {
            return None;
        }
        let up = 0.5 * self.period_s * (offset_mhz + half) / self.window_mhz;
        Some((up, self.period_s - up))
    }
}

/// Run the pump and return the final per-class populations.
pub fn simulate_pump(config: &PumpConfig) -> Result<PumpResult, PumpError> {
    config.validate()?;
    let offsets = config.class_offsets_mhz();
    let steps = config.sweep_count as usize;
    let period = config.pump_duration_s / steps as f64;

    let propagators: Vec<Propagator> = match config.mode {
        _ if config.pump_duration_s == 0.0 => vec![Propagator::identity(); offsets.len()],
        PumpMode::SweepAveraged => {
            let inside = Propagator::exact(config.rate_matrix(config.average_pump_rate_per_s) * period);
            let outside = Propagator::exact(config.rate_matrix(0.0) * period);
            offsets.iter().map(|&x| if config.in_window(x) { inside } else { outside }).collect()
        }
        PumpMode::ClassResolved => {
            let schedule = sweep_schedule(config);
            offsets
                .par_iter()
                .enumerate()
                .map(|(i, &x)| one_period_propagator(config, &schedule, x).map_err(|e| e.for_class(i)))
                .collect::<Result<_, _>>()?
        }
    };

    let mut max_drift = propagators.iter().map(|p| p.drift).fold(0.0, f64::max);
    let mut min_pop = 0.0f64;
    let mut classes = Vec::with_capacity(offsets.len());
    for (i, prop) in propagators.iter().enumerate() {
        let mut v = ClassPopulation::default().to_vector();
        if config.pump_duration_s > 0.0 {
            for _ in 0..steps {
                v = prop.matrix * v;
                let drift = (v.sum() - 1.0).abs();
                max_drift = max_drift.max(drift);
                min_pop = min_pop.min(v.min());
                if drift > DRIFT_LIMIT || v.min() < -DRIFT_LIMIT {
                    return Err(PumpError::Consistency { class: i, drift: drift.max(-v.min()) });
                }
            }
        }
        classes.push(ClassPopulation::from_vector(&v));
    }

    let state = PumpState { offsets_mhz: offsets, classes };
    let summary = summarize(config, &state);
    Ok(PumpResult { config: config.clone(), state, max_population_drift: max_drift, min_population: min_pop, summary })
}

fn summarize(config: &PumpConfig, state: &PumpState) -> PumpSummary {
    let inside: Vec<&ClassPopulation> = state
        .offsets_mhz
        .iter()
        .zip(&state.classes)
        .filter(|(x, _)| config.in_window(**x))
        .map(|(_, c)| c)
        .collect();
    let n = inside.len().max(1) as f64;
    let mean = |f: fn(&ClassPopulation) -> f64| inside.iter().map(|c| f(c)).sum::<f64>() / n;
    let g1 = mean(|c| c.n_g1);
    PumpSummary {
        residual_fraction: (g1 / 0.5).clamp(0.0, 1.0),
        spin_polarization: 1.0 - g1,
        mean_n_g1: g1,
        mean_n_g2: mean(|c| c.n_g2),
        mean_n_e: mean(|c| c.n_e),
        mean_n_trap: mean(|c| c.n_trap),
    }
}

/// Evolve one class in the dark for `dt_s`.
pub fn relax(state: &ClassPopulation, config: &PumpConfig, dt_s: f64) -> Result<ClassPopulation, PumpError> {
    if !(dt_s.is_finite() && dt_s >= 0.0) {
        return Err(PumpError::InvalidConfig(format!("delay {dt_s} s must be finite and >= 0")));
    }
    let m = (config.rate_matrix(0.0) * dt_s).exp();
    Ok(ClassPopulation::from_vector(&(m * state.to_vector())))
}

/// Window-averaged `n_g1` relative to 0.5 after a dark delay following the pump.
/// Clamped to `[0, 1]`.
pub fn residual_fraction(result: &PumpResult, delay_s: f64) -> Result<f64, PumpError> {
    Ok(recovery_curve(result, &[delay_s])?[0])
}

/// [`residual_fraction`] at each delay.
pub fn recovery_curve(result: &PumpResult, delays_s: &[f64]) -> Result<Vec<f64>, PumpError> {
    let config = &result.config;
    delays_s
        .iter()
        .map(|&dt| {
            if !(dt.is_finite() && dt >= 0.0) {
                return Err(PumpError::InvalidConfig(format!("delay {dt} s must be finite and >= 0")));
            }
            let m = (config.rate_matrix(0.0) * dt).exp();
            let classes = result.state.classes.iter().map(|c| ClassPopulation::from_vector(&(m * c.to_vector())));
            let relaxed = PumpState { offsets_mhz: result.state.offsets_mhz.clone(), classes: classes.collect() };
            Ok(summarize(config, &relaxed).residual_fraction)
        })
        .collect()
}

/// Probe spectra after the pump, on the class grid (offsets in GHz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleSpectra {
    pub pre_pump: AbsorptionSpectrum,
    /// Lines starting from `g1`: depleted inside the window.
    pub hole: AbsorptionSpectrum,
    /// Lines starting from the flipped spin state (`g2` and `trap`): enhanced
    /// where pumped ions accumulate.
    pub anti_hole: AbsorptionSpectrum,
}

/// Convolve the per-class population change with the probe line shape.
///
/// The inhomogeneous line is taken as flat over the class grid with depth
/// `probe.peak_depth`. Widths in `probe` are in GHz.
pub fn hole_spectrum(result: &PumpResult, probe: &LineShapeParams) -> Result<HoleSpectra, PumpError> {
    probe.validate()?;
    let step = result.config.class_grid.step_mhz * 1e-3;
    let grid: Vec<f64> = result.state.offsets_mhz.iter().map(|x| x * 1e-3).collect();
    let (g, l) = (probe.gaussian_fwhm_ghz, probe.lorentzian_fwhm_ghz);
    let norm = step / voigt_unit_area(g, l);
    let convolve = |change: &dyn Fn(&ClassPopulation) -> f64| -> Vec<f64> {
        grid.iter()
            .map(|&nu| {
                let s: f64 = grid
                    .iter()
                    .zip(&result.state.classes)
                    .map(|(&x, c)| {
                        let dc = change(c);
                        if dc == 0.0 { 0.0 } else { dc * voigt_unit(nu - x, g, l) }
                    })
                    .sum();
                (probe.peak_depth * (1.0 + norm * s)).max(0.0)
            })
            .collect()
    };
    let hole = convolve(&|c| c.n_g1 / 0.5 - 1.0);
    let anti = convolve(&|c| (c.n_g2 + c.n_trap) / 0.5 - 1.0);
    let pre = vec![probe.peak_depth; grid.len()];
    let meta = SpectrumMetadata::default();
    Ok(HoleSpectra {
        pre_pump: AbsorptionSpectrum::new(grid.clone(), pre, meta)?,
        hole: AbsorptionSpectrum::new(grid.clone(), hole, meta)?,
        anti_hole: AbsorptionSpectrum::new(grid, anti, meta)?,
    })
}

/// Full width at half maximum of the depth deficit `pre_pump − hole`, in MHz.
pub fn hole_width_mhz(spectra: &HoleSpectra) -> Option<f64> {
    let nu = &spectra.hole.frequency_ghz;
    let deficit: Vec<f64> = spectra.pre_pump.depth.iter().zip(&spectra.hole.depth).map(|(p, h)| p - h).collect();
    let (peak, &max) = deficit.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if max <= 0.0 {
        return None;
    }
    let half = 0.5 * max;
    let crossing = |i: usize, j: usize| nu[i] + (half - deficit[i]) * (nu[j] - nu[i]) / (deficit[j] - deficit[i]);
    let left = (0..peak).rev().find(|&i| deficit[i] < half).map(|i| crossing(i, i + 1))?;
    let right = (peak + 1..deficit.len()).find(|&i| deficit[i] < half).map(|i| crossing(i - 1, i))?;
    Some((right - left) * 1e3)
}

#[derive(Debug, Clone, Copy)]
struct Propagator {
    matrix: Matrix4<f64>,
    drift: f64,
}

impl Propagator {
    fn identity() -> Self {
        Self { matrix: Matrix4::identity(), drift: 0.0 }
    }

    fn exact(generator: Matrix4<f64>) -> Self {
        let matrix = generator.exp();
        Self { matrix, drift: column_drift(&matrix) }
    }
}

fn column_drift(m: &Matrix4<f64>) -> f64 {
    m.column_iter().map(|c| (c.sum() - 1.0).abs()).fold(0.0, f64::max)
}

enum StepFailure {
    Underflow { t_s: f64, step_s: f64 },
    Drift(f64),
}

impl StepFailure {
    fn for_class(self, class: usize) -> PumpError {
        match self {
            StepFailure::Underflow { t_s, step_s } => PumpError::StepUnderflow { t_s, step_s },
            StepFailure::Drift(drift) => PumpError::Consistency { class, drift },
        }
    }
}

// Propagator over one sweep period for the class at `offset_mhz`. The schedule is
// periodic, so the full pump is this matrix applied once per sweep.
fn one_period_propagator(config: &PumpConfig, schedule: &SweepSchedule, offset_mhz: f64) -> Result<Propagator, StepFailure> {
    let w_peak = config.peak_pump_rate();
    let half_width = 0.5 * config.homogeneous_linewidth_mhz;
    let dark = config.rate_matrix(0.0);
    let pump_direction = config.rate_matrix(1.0) - dark;
    let rhs = |t: f64, u: &Matrix4<f64>| {
        let detuning = (offset_mhz - schedule.offset_mhz(t)) / half_width;
        let w = w_peak / (1.0 + detuning * detuning);
        (dark + pump_direction * w) * u
    };

    let period = schedule.period_s;
    let mut breaks = vec![0.0, 0.5 * period, period];
    if let Some((up, down)) = schedule.crossing_times_s(offset_mhz) {
        breaks.extend([up, down]);
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * period);

    // time for the laser to cross one homogeneous linewidth
    let transit = 0.5 * period * config.homogeneous_linewidth_mhz / schedule.window_mhz;
    let mut u = Matrix4::identity();
    let mut drift = 0.0f64;
    for seg in breaks.windows(2) {
        u = dopri5(&rhs, seg[0], seg[1], u, 0.1 * transit, period / 16.0, &mut drift)?;
    }
    Ok(Propagator { matrix: u, drift })
}

// Dormand–Prince 5(4) with mixed absolute/relative error control at ODE_TOLERANCE.
fn dopri5<F>(
    f: &F,
    t0: f64,
    t1: f64,
    mut y: Matrix4<f64>,
    h_init: f64,
    h_max: f64,
    drift: &mut f64,
) -> Result<Matrix4<f64>, StepFailure>
where
    F: Fn(f64, &Matrix4<f64>) -> Matrix4<f64>,
{
    const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A21: f64 = 1.0 / 5.0;
    const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
    const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
    const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
    const A6: [f64; 5] = [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0];
    const B: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];

    let mut t = t0;
    let mut h = h_init.min(h_max).min(t1 - t0);
    let mut k1 = f(t, &y);
    while t < t1 {
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        let k2 = f(t + C[0] * h, &(y + k1 * (A21 * h)));
        let k3 = f(t + C[1] * h, &(y + (k1 * A3[0] + k2 * A3[1]) * h));
        let k4 = f(t + C[2] * h, &(y + (k1 * A4[0] + k2 * A4[1] + k3 * A4[2]) * h));
        let k5 = f(t + C[3] * h, &(y + (k1 * A5[0] + k2 * A5[1] + k3 * A5[2] + k4 * A5[3]) * h));
        let k6 = f(t + C[4] * h, &(y + (k1 * A6[0] + k2 * A6[1] + k3 * A6[2] + k4 * A6[3] + k5 * A6[4]) * h));
        let y_new = y + (k1 * B[0] + k3 * B[2] + k4 * B[3] + k5 * B[4] + k6 * B[5]) * h;
        let t_new = if last { t1 } else { t + h };
        let k7 = f(t_new, &y_new);
        let err = (k1 * E[0] + k3 * E[2] + k4 * E[3] + k5 * E[4] + k6 * E[5] + k7 * E[6]) * h;

        let norm = err
            .iter()
            .zip(y.iter().zip(y_new.iter()))
            .map(|(e, (a, b))| (e / (ODE_TOLERANCE * (1.0 + a.abs().max(b.abs())))).abs())
            .fold(0.0, f64::max);
        let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
        if norm <= 1.0 {
            t = t_new;
            y = y_new;
            k1 = k7;
            let d = column_drift(&y);
            *drift = drift.max(d);
            if d > DRIFT_LIMIT {
                return Err(StepFailure::Drift(d));
            }
            h = (h * factor).min(h_max);
        } else {
            h *= factor.min(1.0);
            if h < 1e-14 * (t1 - t0).max(t.abs()) {
                return Err(StepFailure::Underflow { t_s: t, step_s: h });
            }
        }
    }
    Ok(y)
}
