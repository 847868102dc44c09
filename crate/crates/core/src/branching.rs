//! Four-level Λ-system built from a ground and an excited Zeeman doublet.
//!
//! Lower ground level `|φ1⟩ = α|Ψ+1/2⟩ + β|Ψ−1/2⟩`, lower excited level
//! `|φ3⟩ = γ|Ψ+3/2⟩ + δ|Ψ−3/2⟩`. For light polarized along c (π) the
//! spin-preserving amplitude is `α*δ + β*γ` and the spin-flip amplitude
//! `αγ − βδ`; for light perpendicular to c (σ) they are `α*γ − β*δ` and
//! `βγ + αδ`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::zeeman::{check_theta, doublet_eigensystem, DoubletEigensystem, FieldConfig, GTensor};

/// Denominators below this are treated as zero and the ratio reported as infinite.
pub const DENOMINATOR_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaCoefficients {
    pub alpha: Complex64,
    pub beta: Complex64,
    pub gamma: Complex64,
    pub delta: Complex64,
    pub field: FieldConfig,
}

impl LambdaCoefficients {
    fn pi_preserving(&self) -> f64 {
        (self.alpha.conj() * self.delta + self.beta.conj() * self.gamma).norm_sqr()
    }

    fn pi_flip(&self) -> f64 {
        (self.alpha * self.gamma - self.beta * self.delta).norm_sqr()
    }

    fn sigma_preserving(&self) -> f64 {
        (self.alpha.conj() * self.gamma - self.beta.conj() * self.delta).norm_sqr()
    }

    fn sigma_flip(&self) -> f64 {
        (self.beta * self.gamma + self.alpha * self.delta).norm_sqr()
    }
}

/// Take (α, β) from the lower ground level and (γ, δ) from the lower excited level.
pub fn lambda_coefficients(
    ground: &DoubletEigensystem,
    excited: &DoubletEigensystem,
) -> Result<LambdaCoefficients, ModelError> {
    if ground.field != excited.field {
        return Err(ModelError::FieldMismatch);
    }
    Ok(LambdaCoefficients {
        alpha: ground.coeff_low[0],
        beta: ground.coeff_low[1],
        gamma: excited.coeff_low[0],
        delta: excited.coeff_low[1],
        field: ground.field,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchingResult {
    pub r_parallel: f64,
    pub r_perpendicular: f64,
    pub parallel_infinite: bool,
    pub perpendicular_infinite: bool,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den < DENOMINATOR_FLOOR {
        (f64::INFINITY, true)
    } else {
        (num / den, false)
    }
}

pub fn branching_ratios(coeffs: &LambdaCoefficients) -> BranchingResult {
    let (r_parallel, parallel_infinite) = ratio(coeffs.pi_flip(), coeffs.pi_preserving());
    let (r_perpendicular, perpendicular_infinite) = ratio(coeffs.sigma_flip(), coeffs.sigma_preserving());
    BranchingResult { r_parallel, r_perpendicular, parallel_infinite, perpendicular_infinite }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionLabel {
    A,
    B,
    C,
    D,
}

impl TransitionLabel {
    pub const ALL: [TransitionLabel; 4] = [Self::A, Self::B, Self::C, Self::D];

    pub fn as_char(self) -> char {
        match self {
            Self::A => 'a',
            Self::B => 'b',
            Self::C => 'c',
            Self::D => 'd',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundLevel {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub label: TransitionLabel,
    pub offset_ghz: f64,
    pub strength_pi: f64,
    pub strength_sigma: f64,
    pub spin_flip: bool,
    pub ground_level: GroundLevel,
}

/// Lines a–d sorted by frequency offset from the zero-field line.
///
/// Strengths are squared transition amplitudes of unit-norm states: for each
/// polarization, the spin-preserving and spin-flip line out of one excited level
/// sum to 1, so each row of four sums to 2 at every field angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub lines: [Transition; 4],
    pub field: Option<FieldConfig>,
}

impl TransitionTable {
    pub fn line(&self, label: TransitionLabel) -> &Transition {
        &self.lines[label as usize]
    }

    pub fn offsets_ghz(&self) -> [f64; 4] {
        self.lines.map(|l| l.offset_ghz)
    }
}

pub fn transition_table(
    coeffs: &LambdaCoefficients,
    ground_split_ghz: f64,
    excited_split_ghz: f64,
) -> Result<TransitionTable, ModelError> {
    for (name, s) in [("ground", ground_split_ghz), ("excited", excited_split_ghz)] {
        if !s.is_finite() || s < 0.0 {
            return Err(ModelError::InvalidArgument(format!("{name} splitting {s} GHz must be >= 0")));
        }
    }
    let (pi_keep, pi_flip) = (coeffs.pi_preserving(), coeffs.pi_flip());
    let (sigma_keep, sigma_flip) = (coeffs.sigma_preserving(), coeffs.sigma_flip());
    let (dg, de) = (ground_split_ghz, excited_split_ghz);

    // (offset, flip, ground level); ground levels at ∓dg/2, excited at ∓de/2.
    let mut raw = [
        (-0.5 * (dg + de), true, GroundLevel::Upper),   // φ2 → φ3
        (0.5 * (de - dg), false, GroundLevel::Upper),   // φ2 → φ4
        (0.5 * (dg - de), false, GroundLevel::Lower),   // φ1 → φ3
        (0.5 * (dg + de), true, GroundLevel::Lower),    // φ1 → φ4
    ];
    raw.sort_by(|x, y| x.0.total_cmp(&y.0));

    let lines = std::array::from_fn(|i| {
        let (offset_ghz, spin_flip, ground_level) = raw[i];
        let (strength_pi, strength_sigma) =
            if spin_flip { (pi_flip, sigma_flip) } else { (pi_keep, sigma_keep) };
        Transition {
            label: TransitionLabel::ALL[i],
            offset_ghz,
            strength_pi,
            strength_sigma,
            spin_flip,
            ground_level,
        }
    });
    Ok(TransitionTable { lines, field: Some(coeffs.field) })
}

/// Everything derived from one pair of doublets at one field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSystem {
    pub ground: DoubletEigensystem,
    pub excited: DoubletEigensystem,
    pub coefficients: LambdaCoefficients,
    pub branching: BranchingResult,
    pub table: TransitionTable,
}

impl LambdaSystem {
    pub fn new(ground_g: &GTensor, excited_g: &GTensor, field: &FieldConfig) -> Result<Self, ModelError> {
        let ground = doublet_eigensystem(ground_g, field)?;
        let excited = doublet_eigensystem(excited_g, field)?;
        let coefficients = lambda_coefficients(&ground, &excited)?;
        let branching = branching_ratios(&coefficients);
        let table = transition_table(&coefficients, ground.splitting_ghz(), excited.splitting_ghz())?;
        Ok(Self { ground, excited, coefficients, branching, table })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub theta_deg: f64,
    pub r_parallel: f64,
    pub r_perpendicular: f64,
}

pub fn branching_scan(
    ground_g: &GTensor,
    excited_g: &GTensor,
    field_tesla: f64,
    theta_grid_deg: &[f64],
) -> Result<Vec<ScanPoint>, ModelError> {
    branching_scan_misaligned(ground_g, excited_g, field_tesla, theta_grid_deg, 0.0)
}

/// Scan with the field tilted by `misalignment_deg` inside the c–E plane.
///
/// The nominal angle is still reported. Tilted angles are folded back into
/// [0°, 90°], over which R(θ) is even and symmetric about 90°.
pub fn branching_scan_misaligned(
    ground_g: &GTensor,
    excited_g: &GTensor,
    field_tesla: f64,
    theta_grid_deg: &[f64],
    misalignment_deg: f64,
) -> Result<Vec<ScanPoint>, ModelError> {
    if !misalignment_deg.is_finite() {
        return Err(ModelError::InvalidArgument("misalignment must be finite".into()));
    }
    theta_grid_deg
        .iter()
        .map(|&theta| {
            check_theta(theta)?;
            let actual = fold_angle(theta + misalignment_deg);
            let field = FieldConfig::new(field_tesla, actual)?;
            let r = LambdaSystem::new(ground_g, excited_g, &field)?.branching;
            Ok(ScanPoint { theta_deg: theta, r_parallel: r.r_parallel, r_perpendicular: r.r_perpendicular })
        })
        .collect()
}

fn fold_angle(theta_deg: f64) -> f64 {
    let t = theta_deg.rem_euclid(180.0);
    let t = if t > 90.0 { 180.0 - t } else { t };
    t.clamp(0.0, 90.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalAngle {
    pub theta_deg: f64,
    pub r_parallel: f64,
}

/// Maximize R∥(θ) over [0°, 90°]: coarse grid at `resolution_deg`, then
/// golden-section refinement around the best grid point.
pub fn optimal_angle(
    ground_g: &GTensor,
    excited_g: &GTensor,
    field_tesla: f64,
    resolution_deg: f64,
) -> Result<OptimalAngle, ModelError> {
    if !(resolution_deg.is_finite() && resolution_deg > 0.0) {
        return Err(ModelError::InvalidArgument(format!("resolution {resolution_deg}° must be > 0")));
    }
    if !(field_tesla.is_finite() && field_tesla > 0.0) {
        return Err(ModelError::InvalidArgument("branching ratios need a nonzero field".into()));
    }
    let r_at = |theta: f64| -> Result<f64, ModelError> {
        let field = FieldConfig::new(field_tesla, theta.clamp(0.0, 90.0))?;
        Ok(LambdaSystem::new(ground_g, excited_g, &field)?.branching.r_parallel)
    };

    let steps = (90.0 / resolution_deg).ceil() as usize;
    let mut best = (0.0, r_at(0.0)?);
    for i in 1..=steps {
        let theta = (i as f64 * resolution_deg).min(90.0);
        let r = r_at(theta)?;
        if r > best.1 {
            best = (theta, r);
        }
    }

    let (mut lo, mut hi) = ((best.0 - resolution_deg).max(0.0), (best.0 + resolution_deg).min(90.0));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (r_at(x1)?, r_at(x2)?);
    while hi - lo > 1e-9 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = r_at(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = r_at(x1)?;
        }
    }
    let theta = 0.5 * (lo + hi);
    let r = r_at(theta)?;
    Ok(if r >= best.1 { OptimalAngle { theta_deg: theta, r_parallel: r } } else {
        OptimalAngle { theta_deg: best.0, r_parallel: best.1 }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn system(theta: f64) -> LambdaSystem {
        let field = FieldConfig::new(0.31, theta).unwrap();
        LambdaSystem::new(&GTensor::nd_yvo4_ground(), &GTensor::nd_yvo4_excited(), &field).unwrap()
    }

    #[test]
    fn coefficients_at_axial_field() {
        let c = system(0.0).coefficients;
        assert_abs_diff_eq!(c.alpha.norm(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.beta.norm(), 0.0, epsilon = 1e-15);
        // lower excited level is |Ψ−3/2⟩, so γ = 0 and δ = 1
        assert_abs_diff_eq!(c.gamma.norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.delta.norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn coefficients_at_perpendicular_field() {
        let c = system(90.0).coefficients;
        for z in [c.alpha, c.beta, c.gamma, c.delta] {
            assert_abs_diff_eq!(z.norm(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        }
    }

    #[test]
    fn coefficients_at_45_are_half_mixing_angle() {
        let c = system(45.0).coefficients;
        let chi = 2.5803f64.atan();
        assert_abs_diff_eq!(c.alpha.re, (chi / 2.0).cos(), epsilon = 1e-4);
        assert_abs_diff_eq!(c.beta.re, (chi / 2.0).sin(), epsilon = 1e-4);
        assert!(c.alpha.im.abs() < 1e-15 && c.beta.im.abs() < 1e-15);
    }

    #[test]
    fn mismatched_fields_are_rejected() {
        let g = doublet_eigensystem(&GTensor::nd_yvo4_ground(), &FieldConfig::new(0.31, 10.0).unwrap()).unwrap();
        let e = doublet_eigensystem(&GTensor::nd_yvo4_excited(), &FieldConfig::new(0.31, 20.0).unwrap()).unwrap();
        assert_eq!(lambda_coefficients(&g, &e), Err(ModelError::FieldMismatch));
    }

    #[test]
    fn branching_reference_values() {
        assert_eq!(system(0.0).branching.r_parallel, 0.0);
        assert!(system(0.0).branching.perpendicular_infinite);
        assert_abs_diff_eq!(system(45.0).branching.r_parallel, 0.270, epsilon = 1e-3);
        assert_abs_diff_eq!(system(51.0).branching.r_parallel, 0.278, epsilon = 1e-3);
    }

    #[test]
    fn table_offsets_at_45() {
        let t = system(45.0).table;
        let o = t.offsets_ghz();
        assert_abs_diff_eq!(o[0], -5.67, epsilon = 0.02);
        assert_abs_diff_eq!(o[1], -2.10, epsilon = 0.02);
        assert_abs_diff_eq!(o[2], 2.10, epsilon = 0.02);
        assert_abs_diff_eq!(o[3], 5.67, epsilon = 0.02);
        assert!(t.lines[0].spin_flip && t.lines[3].spin_flip);
        assert!(!t.lines[1].spin_flip && !t.lines[2].spin_flip);
        assert_abs_diff_eq!(o[0], -o[3], epsilon = 1e-9);
        assert_abs_diff_eq!(o[1], -o[2], epsilon = 1e-9);
    }

    #[test]
    fn axial_pi_forbids_outer_lines() {
        let t = system(0.0).table;
        assert_eq!(t.line(TransitionLabel::A).strength_pi, 0.0);
        assert_eq!(t.line(TransitionLabel::D).strength_pi, 0.0);
        assert_abs_diff_eq!(t.line(TransitionLabel::C).offset_ghz, 0.466, epsilon = 1e-3);
        assert_abs_diff_eq!(t.line(TransitionLabel::B).offset_ghz, -0.466, epsilon = 1e-3);
    }

    #[test]
    fn scan_endpoints_and_empty_grid() {
        let (g, e) = (GTensor::nd_yvo4_ground(), GTensor::nd_yvo4_excited());
        assert!(branching_scan(&g, &e, 0.31, &[]).unwrap().is_empty());
        let pts = branching_scan(&g, &e, 0.31, &[0.0, 45.0, 90.0]).unwrap();
        assert_eq!(pts[0].r_parallel, 0.0);
        assert!(pts[0].r_perpendicular.is_infinite());
        assert_abs_diff_eq!(pts[1].r_perpendicular, 1.0 / 0.270, epsilon = 0.02);
        assert!(pts[2].r_parallel < 1e-9);
        assert!(branching_scan(&g, &e, 0.31, &[95.0]).is_err());
    }

    #[test]
    fn misalignment_lifts_axial_zero() {
        let (g, e) = (GTensor::nd_yvo4_ground(), GTensor::nd_yvo4_excited());
        let pts = branching_scan_misaligned(&g, &e, 0.31, &[0.0], 3.0).unwrap();
        assert_eq!(pts[0].theta_deg, 0.0);
        assert!(pts[0].r_parallel > 1e-3);
        let mirrored = branching_scan_misaligned(&g, &e, 0.31, &[0.0], -3.0).unwrap();
        assert_abs_diff_eq!(pts[0].r_parallel, mirrored[0].r_parallel, epsilon = 1e-12);
    }

    #[test]
    fn optimum_matches_reported_maximum() {
        let opt = optimal_angle(&GTensor::nd_yvo4_ground(), &GTensor::nd_yvo4_excited(), 0.31, 1.0).unwrap();
        assert_abs_diff_eq!(opt.theta_deg, 51.0, epsilon = 0.5);
        assert_abs_diff_eq!(opt.r_parallel, 0.278, epsilon = 1e-3);
    }

    #[test]
    fn equal_anisotropy_gives_zero_branching() {
        let g = GTensor::nd_yvo4_ground();
        let e = GTensor::new(2.0 * g.g_parallel, 2.0 * g.g_perpendicular, crate::zeeman::SpinBasis::Reversed).unwrap();
        let opt = optimal_angle(&g, &e, 0.31, 1.0).unwrap();
        assert!(opt.r_parallel < 1e-12);
    }

    #[test]
    fn optimal_angle_rejects_bad_resolution() {
        let (g, e) = (GTensor::nd_yvo4_ground(), GTensor::nd_yvo4_excited());
        assert!(optimal_angle(&g, &e, 0.31, 0.0).is_err());
        assert!(optimal_angle(&g, &e, 0.0, 1.0).is_err());
    }
}
