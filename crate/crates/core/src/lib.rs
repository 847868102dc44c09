//! Zeeman structure, Λ-system branching ratios, absorption spectra, fitting and
//! optical-pumping simulation for Kramers ions in axial crystal fields.

pub mod branching;
pub mod error;
pub mod fitting;
pub mod io;
pub mod pump;
pub mod spectrum;
pub mod zeeman;

pub use branching::{
    branching_ratios, branching_scan, lambda_coefficients, optimal_angle, transition_table, BranchingResult,
    LambdaCoefficients, LambdaSystem, Transition, TransitionLabel, TransitionTable,
};
pub use error::{Error, FitError, IoError, ModelError, PumpError};
pub use spectrum::{polarization_depth, synthesize_spectrum, voigt_depth, AbsorptionSpectrum, LineShapeParams};
pub use zeeman::{doublet_eigensystem, zeeman_splitting, DoubletEigensystem, FieldConfig, GTensor, SpinBasis};
pub use pump::{hole_spectrum, residual_fraction, simulate_pump, sweep_schedule, PumpConfig, PumpResult, PumpState};
