//! Stress-tensor reconstruction from ODMR lineshifts and birefringence
//! inversion.

mod biref;
mod stress;

pub use biref::{
    analyze_birefringence, biref_intensity, biref_invert, canonical_phase, stress_magnitude,
    stress_magnitude_value, BirefInversion, BirefStack, BirefringenceResult, Optics,
    AMBIGUITY_SIN_DELTA, ISOTROPIC_SIN_DELTA,
};
pub use stress::{
    lineshifts_from_centers, lineshifts_from_odmr, lineshifts_from_stress,
    lineshifts_from_stress_components, stress_from_lineshifts, stress_tensor, LineshiftReference,
    OrientationLineshifts, Pairing, SpinStressConstants, StressMaps,
};
