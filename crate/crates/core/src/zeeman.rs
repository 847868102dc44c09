//! Effective spin-1/2 Zeeman model of a single Kramers doublet.
//!
//! A doublet with axial g-tensor `diag(g⊥, g⊥, g∥)` in a field `B` is described
//! by `H = μB · B·g·S`. Energies are reported in GHz. Eigenvectors are expressed
//! in the field-free doublet basis `{|Ψ+μ⟩, |Ψ−μ⟩}`; which of those two states
//! carries `M_S = +1/2` is fixed per doublet by [`SpinBasis`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Bohr magneton over Planck's constant, in GHz per tesla.
pub const BOHR_MAGNETON_GHZ_PER_T: f64 = 13.99624;

/// How the effective spin states map onto the crystal-field doublet basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpinBasis {
    /// `M_S = +1/2` is `|Ψ+μ⟩` (the 4I9/2 Z1 ground doublet).
    Direct,
    /// `M_S = +1/2` is `|Ψ−μ⟩` (the 4F3/2 Y1 excited doublet).
    Reversed,
}

/// Axial g-tensor of one Kramers doublet.
///
/// Signs are kept. The Nd:YVO4 doublets use negative principal values, which
/// fixes the level ordering at zero polar angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GTensor {
    pub g_parallel: f64,
    pub g_perpendicular: f64,
    pub basis: SpinBasis,
}

impl GTensor {
    pub fn new(g_parallel: f64, g_perpendicular: f64, basis: SpinBasis) -> Result<Self, ModelError> {
        for (name, g) in [("g_parallel", g_parallel), ("g_perpendicular", g_perpendicular)] {
            if !g.is_finite() || g == 0.0 {
                return Err(ModelError::InvalidGTensor(format!("{name} = {g} must be finite and nonzero")));
            }
        }
        Ok(Self { g_parallel, g_perpendicular, basis })
    }

    /// Nd³⁺:YVO₄ 4I9/2 (Z1): |g∥| = 0.915, |g⊥| = 2.361.
    pub fn nd_yvo4_ground() -> Self {
        Self { g_parallel: -0.915, g_perpendicular: -2.361, basis: SpinBasis::Direct }
    }

    /// Nd³⁺:YVO₄ 4F3/2 (Y1): |g∥| = 1.13, |g⊥| = 0.28.
    pub fn nd_yvo4_excited() -> Self {
        Self { g_parallel: -1.13, g_perpendicular: -0.28, basis: SpinBasis::Reversed }
    }

    /// Same tensor with both principal values negated.
    pub fn negated(&self) -> Self {
        Self { g_parallel: -self.g_parallel, g_perpendicular: -self.g_perpendicular, basis: self.basis }
    }

    /// Index (0 = `|Ψ+μ⟩`, 1 = `|Ψ−μ⟩`) of the lower level for a field along c.
    pub fn axial_low_index(&self) -> usize {
        // H = (μB·B·g∥/2) σz in the spin basis: M_S = +1/2 is lower iff g∥ < 0.
        let spin_up_low = self.g_parallel < 0.0;
        match (spin_up_low, self.basis) {
            (true, SpinBasis::Direct) | (false, SpinBasis::Reversed) => 0,
            (true, SpinBasis::Reversed) | (false, SpinBasis::Direct) => 1,
        }
    }
}

/// Static magnetic field. The polar angle is measured from the crystal c-axis (z);
/// the azimuth defaults to 0, i.e. the field lies in the x–z plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub magnitude_tesla: f64,
    pub theta_deg: f64,
    #[serde(default)]
    pub azimuth_deg: f64,
}

impl FieldConfig {
    pub fn new(magnitude_tesla: f64, theta_deg: f64) -> Result<Self, ModelError> {
        Self::with_azimuth(magnitude_tesla, theta_deg, 0.0)
    }

    pub fn with_azimuth(magnitude_tesla: f64, theta_deg: f64, azimuth_deg: f64) -> Result<Self, ModelError> {
        let field = Self { magnitude_tesla, theta_deg, azimuth_deg };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.magnitude_tesla.is_finite() || self.magnitude_tesla < 0.0 {
            return Err(ModelError::InvalidField(format!(
                "magnitude {} T must be finite and non-negative",
                self.magnitude_tesla
            )));
        }
        check_theta(self.theta_deg)?;
        if !self.azimuth_deg.is_finite() {
            return Err(ModelError::InvalidField("azimuth must be finite".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_theta(theta_deg: f64) -> Result<(), ModelError> {
    if !(0.0..=90.0).contains(&theta_deg) {
        return Err(ModelError::ThetaOutOfRange(theta_deg));
    }
    Ok(())
}

/// Zeeman levels of one doublet and their eigenvectors in `{|Ψ+μ⟩, |Ψ−μ⟩}`.
///
/// Each eigenvector is phased so that its first nonzero component is real and
/// non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubletEigensystem {
    pub energy_low_ghz: f64,
    pub energy_high_ghz: f64,
    pub coeff_low: [Complex64; 2],
    pub coeff_high: [Complex64; 2],
    pub field: FieldConfig,
    pub(crate) axial_low_index: usize,
}

impl DoubletEigensystem {
    pub fn splitting_ghz(&self) -> f64 {
        self.energy_high_ghz - self.energy_low_ghz
    }

    /// Angle χ by which the lower level is rotated away from its field-along-c
    /// state; `tan χ = (g⊥/g∥) tan θ` for an in-plane field.
    pub fn mixing_angle_rad(&self) -> f64 {
        let major = self.coeff_low[self.axial_low_index].norm();
        let minor = self.coeff_low[1 - self.axial_low_index].norm();
        2.0 * minor.atan2(major)
    }
}

/// `sqrt((g∥ cos θ)² + (g⊥ sin θ)²)`, the factor that sets the splitting.
pub fn effective_g(g: &GTensor, theta_deg: f64) -> Result<f64, ModelError> {
    check_theta(theta_deg)?;
    let theta = theta_deg.to_radians();
    Ok((g.g_parallel * theta.cos()).hypot(g.g_perpendicular * theta.sin()))
}

/// Zeeman Hamiltonian in GHz, written in the `{|Ψ+μ⟩, |Ψ−μ⟩}` basis.
pub fn zeeman_hamiltonian(g: &GTensor, field: &FieldConfig) -> Result<[[Complex64; 2]; 2], ModelError> {
    field.validate()?;
    let (theta, phi) = (field.theta_deg.to_radians(), field.azimuth_deg.to_radians());
    let scale = 0.5 * BOHR_MAGNETON_GHZ_PER_T * field.magnitude_tesla;
    let hx = scale * g.g_perpendicular * theta.sin() * phi.cos();
    let hy = scale * g.g_perpendicular * theta.sin() * phi.sin();
    let hz = scale * g.g_parallel * theta.cos();
    // Spin basis {+1/2, −1/2}: [[hz, hx − i hy], [hx + i hy, −hz]].
    let off = Complex64::new(hx, -hy);
    Ok(match g.basis {
        SpinBasis::Direct => [[Complex64::new(hz, 0.0), off], [off.conj(), Complex64::new(-hz, 0.0)]],
        SpinBasis::Reversed => [[Complex64::new(-hz, 0.0), off.conj()], [off, Complex64::new(hz, 0.0)]],
    })
}

/// Diagonalize the doublet Hamiltonian.
///
/// At zero field the doublet is degenerate; the splitting is zero and the
/// field-free basis states are returned as `(low, high)`.
pub fn doublet_eigensystem(g: &GTensor, field: &FieldConfig) -> Result<DoubletEigensystem, ModelError> {
    let h = zeeman_hamiltonian(g, field)?;
    let a = h[0][0].re;
    let d = h[1][1].re;
    let b = h[0][1];
    let mean = 0.5 * (a + d);
    let half_diff = 0.5 * (a - d);
    let radius = half_diff.hypot(b.norm());

    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    if radius == 0.0 {
        return Ok(DoubletEigensystem {
            energy_low_ghz: mean,
            energy_high_ghz: mean,
            coeff_low: [one, zero],
            coeff_high: [zero, one],
            field: *field,
            axial_low_index: g.axial_low_index(),
        });
    }

    let low = eigenvector(a, d, b, mean - radius);
    let high = eigenvector(a, d, b, mean + radius);
    Ok(DoubletEigensystem {
        energy_low_ghz: mean - radius,
        energy_high_ghz: mean + radius,
        coeff_low: low,
        coeff_high: high,
        field: *field,
        axial_low_index: g.axial_low_index(),
    })
}

/// Energy gap `E_high − E_low` in GHz.
pub fn zeeman_splitting(g: &GTensor, field: &FieldConfig) -> Result<f64, ModelError> {
    Ok(doublet_eigensystem(g, field)?.splitting_ghz())
}

// Null vector of [[a − λ, b], [b*, d − λ]], taken from whichever row is better
// conditioned.
fn eigenvector(a: f64, d: f64, b: Complex64, lambda: f64) -> [Complex64; 2] {
    let from_first = [b, Complex64::new(lambda - a, 0.0)];
    let from_second = [Complex64::new(lambda - d, 0.0), b.conj()];
    let norm_sqr = |v: &[Complex64; 2]| v[0].norm_sqr() + v[1].norm_sqr();
    let v = if norm_sqr(&from_first) >= norm_sqr(&from_second) { from_first } else { from_second };
    let norm = norm_sqr(&v).sqrt();
    fix_phase([v[0] / norm, v[1] / norm])
}

pub(crate) fn fix_phase(v: [Complex64; 2]) -> [Complex64; 2] {
    let pivot = if v[0].norm() > 0.0 { v[0] } else { v[1] };
    let phase = pivot.conj() / pivot.norm();
    [v[0] * phase, v[1] * phase]
}
