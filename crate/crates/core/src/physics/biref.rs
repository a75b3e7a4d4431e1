//! Polarimetric birefringence: stress angle and retardance from a stack of
//! frames taken at several polarizer angles, and the stress magnitude that
//! retardance implies.
//!
//! Per pixel the intensity is `I(α) = ½I₀[1 + sin 2(α − φ) sin δ]`, which is
//! linear in `(c₀, c_s, c_c)` for `I = c₀ + c_s sin 2α + c_c cos 2α`.

use serde::{Deserialize, Serialize};

use crate::datacube::{DataCube, MapImage, MapQuantity, Quantity, SweepAxis, SweepKind};
use crate::error::{Error, Result};
use crate::util::cholesky_solve;

/// Retardance above which `δ` may have wrapped past a quarter wave.
pub const AMBIGUITY_SIN_DELTA: f64 = 0.999;
/// `sin δ` below this is treated as isotropic and `φ` is masked.
pub const ISOTROPIC_SIN_DELTA: f64 = 1e-9;

/// Forward intensity for polarizer angle `alpha_deg`.
pub fn biref_intensity(alpha_deg: f64, phi_deg: f64, sin_delta: f64, i0: f64) -> f64 {
    let arg = 2.0 * (alpha_deg - phi_deg).to_radians();
    0.5 * i0 * (1.0 + arg.sin() * sin_delta)
}

/// Intensity frames indexed by polarizer angle (degrees).
#[derive(Debug, Clone, PartialEq)]
pub struct BirefStack {
    cube: DataCube,
}

impl BirefStack {
    /// `frames` is `[angle][y][x]`; angles must be strictly increasing.
    pub fn new(width: usize, height: usize, angles_deg: Vec<f64>, frames: Vec<f64>) -> Result<Self> {
        let sweep = SweepAxis::new(SweepKind::AngleDeg, angles_deg)?;
        Self::from_cube(DataCube::new(width, height, sweep, Quantity::Intensity, frames)?)
    }

    pub fn from_cube(cube: DataCube) -> Result<Self> {
        if cube.sweep().kind() != SweepKind::AngleDeg {
            return Err(Error::UnitMismatch {
                expected: SweepKind::AngleDeg.name(),
                found: cube.sweep().kind().name(),
            });
        }
        if cube.quantity() != Quantity::Intensity {
            return Err(Error::QuantityMismatch {
                expected: Quantity::Intensity.name(),
                found: cube.quantity().name(),
            });
        }
        let plane = cube.width() * cube.height();
        if let Some(i) = cube.data().iter().position(|v| *v < 0.0) {
            return Err(Error::NegativeIntensity {
                point: i / plane,
                y: (i % plane) / cube.width(),
                x: i % cube.width(),
            });
        }
        Ok(Self { cube })
    }

    pub fn angles_deg(&self) -> &[f64] {
        self.cube.sweep().values()
    }

    pub fn width(&self) -> usize {
        self.cube.width()
    }

    pub fn height(&self) -> usize {
        self.cube.height()
    }

    pub fn as_cube(&self) -> &DataCube {
        &self.cube
    }

    pub fn into_cube(self) -> DataCube {
        self.cube
    }
}

/// Optical constants for converting retardance to stress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optics {
    pub wavelength_m: f64,
    pub thickness_m: f64,
    pub refractive_index: f64,
    /// Isotropic piezo-optical coefficient, Pa⁻¹.
    pub q_iso_per_pa: f64,
}

impl Default for Optics {
    fn default() -> Self {
        Self {
            wavelength_m: 530e-9,
            thickness_m: 0.5e-3,
            refractive_index: 2.42,
            q_iso_per_pa: 0.3e-12,
        }
    }
}

impl Optics {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("wavelength", self.wavelength_m),
            ("thickness", self.thickness_m),
            ("refractive index", self.refractive_index),
            ("q_iso", self.q_iso_per_pa),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-pixel output of [`biref_invert`].
#[derive(Debug, Clone, PartialEq)]
pub struct BirefInversion {
    /// Degrees in `[0, 180)`.
    pub phi: MapImage,
    /// In `[0, 1]`.
    pub sin_delta: MapImage,
    pub i0: MapImage,
    /// `sin δ` above [`AMBIGUITY_SIN_DELTA`]: the principal-value retardance
    /// may be wrong.
    pub ambiguous: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BirefringenceResult {
    pub inversion: BirefInversion,
    /// Pa.
    pub stress: MapImage,
    pub optics: Optics,
}

/// Canonical `(φ, sin δ)` for harmonic coefficients: `sin δ ≥ 0` and
/// `φ ∈ [0°, 180°)`. Returns `None` when `c₀ ≤ 0`; `φ` is `None` for an
/// isotropic pixel.
pub fn canonical_phase(c0: f64, cs: f64, cc: f64) -> Option<(Option<f64>, f64)> {
    if !(c0 > 0.0) {
        return None;
    }
    let sin_delta = cs.hypot(cc) / c0;
    if sin_delta < ISOTROPIC_SIN_DELTA {
        return Some((None, 0.0));
    }
    let phi = 0.5 * (-cc).atan2(cs).to_degrees();
    let mut phi = phi.rem_euclid(180.0);
    if phi >= 180.0 {
        phi = 0.0;
    }
    Some((Some(phi), sin_delta))
}

/// Harmonic least-squares inversion of every pixel.
///
/// Pixels with `c₀ ≤ 0` are masked in every map. Fails with
/// [`Error::RankDeficient`] when fewer than four angles are distinct modulo
/// 180°.
pub fn biref_invert(stack: &BirefStack) -> Result<BirefInversion> {
    let angles = stack.angles_deg();
    let mut reduced: Vec<f64> = angles.iter().map(|a| a.rem_euclid(180.0)).collect();
    reduced.sort_by(f64::total_cmp);
    reduced.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if reduced.len() > 1 && reduced[0] + 180.0 - reduced[reduced.len() - 1] < 1e-9 {
        reduced.pop();
    }
    if reduced.len() < 4 {
        return Err(Error::RankDeficient(format!(
            "{} distinct polarizer angles modulo 180°, need 4",
            reduced.len()
        )));
    }

    let basis: Vec<[f64; 3]> = angles
        .iter()
        .map(|a| {
            let t = 2.0 * a.to_radians();
            [1.0, t.sin(), t.cos()]
        })
        .collect();
    let mut normal = [0.0; 9];
    for b in &basis {
        for r in 0..3 {
            for c in 0..3 {
                normal[r * 3 + c] += b[r] * b[c];
            }
        }
    }
    let mut probe = normal;
    let mut rhs = [0.0; 3];
    if !cholesky_solve(&mut probe, &mut rhs, 3) {
        return Err(Error::RankDeficient("angle set does not span the harmonics".into()));
    }

    let cube = stack.as_cube();
    let (w, h) = (cube.width(), cube.height());
    let n = w * h;
    let mut phi = vec![f64::NAN; n];
    let mut sin_delta = vec![f64::NAN; n];
    let mut i0 = vec![f64::NAN; n];
    let mut phi_ok = vec![false; n];
    let mut ok = vec![false; n];
    let mut ambiguous = vec![false; n];
    for i in 0..n {
        let mut rhs = [0.0; 3];
        for (p, b) in basis.iter().enumerate() {
            let v = cube.frame(p)[i];
            for r in 0..3 {
                rhs[r] += b[r] * v;
            }
        }
        let mut a = normal;
        if !cholesky_solve(&mut a, &mut rhs, 3) {
            continue;
        }
        let Some((angle, sd)) = canonical_phase(rhs[0], rhs[1], rhs[2]) else {
            continue;
        };
        ok[i] = true;
        i0[i] = 2.0 * rhs[0];
        ambiguous[i] = sd > AMBIGUITY_SIN_DELTA;
        sin_delta[i] = sd.min(1.0);
        if let Some(a) = angle {
            phi[i] = a;
            phi_ok[i] = true;
        }
    }
    Ok(BirefInversion {
        phi: MapImage::with_mask(w, h, MapQuantity::AngleDeg, phi, phi_ok)?,
        sin_delta: MapImage::with_mask(w, h, MapQuantity::SinRetardance, sin_delta, ok.clone())?,
        i0: MapImage::with_mask(w, h, MapQuantity::Intensity, i0, ok)?,
        ambiguous,
    })
}

/// `|σ| = (2/3π) δλ / (L n³ q_iso)` with `δ = arcsin(sin δ)`.
pub fn stress_magnitude_value(sin_delta: f64, optics: &Optics) -> Result<f64> {
    optics.validate()?;
    if !(sin_delta >= 0.0) || sin_delta > 1.0 + 1e-9 {
        return Err(Error::OutOfDomain(format!("sin δ = {sin_delta} is outside [0, 1]")));
    }
    let delta = sin_delta.min(1.0).asin();
    let n3 = optics.refractive_index.powi(3);
    Ok(2.0 / (3.0 * std::f64::consts::PI) * delta * optics.wavelength_m
        / (optics.thickness_m * n3 * optics.q_iso_per_pa))
}

/// Stress magnitude map (Pa); masked pixels stay masked.
pub fn stress_magnitude(sin_delta: &MapImage, optics: &Optics) -> Result<MapImage> {
    let mut out = Vec::with_capacity(sin_delta.data().len());
    for (v, ok) in sin_delta.data().iter().zip(sin_delta.valid()) {
        out.push(if *ok {
            stress_magnitude_value(*v, optics)?
        } else {
            f64::NAN
        });
    }
    MapImage::with_mask(
        sin_delta.width(),
        sin_delta.height(),
        MapQuantity::StressPa,
        out,
        sin_delta.valid().to_vec(),
    )
}

/// Inversion followed by the stress magnitude.
pub fn analyze_birefringence(stack: &BirefStack, optics: &Optics) -> Result<BirefringenceResult> {
    let inversion = biref_invert(stack)?;
    let stress = stress_magnitude(&inversion.sin_delta, optics)?;
    Ok(BirefringenceResult {
        inversion,
        stress,
        optics: *optics,
    })
}
