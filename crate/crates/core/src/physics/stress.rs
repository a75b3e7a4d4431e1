//! Stress tensor components from the common-mode lineshifts of the four NV
//! orientation classes.
//!
//! With `M = (M₁, M₂, M₃, M₄)` in MHz:
//!
//! ```text
//! σ_diag = (M₁ + M₂ + M₃ + M₄) / (4 a₁)
//! σ_XY   = (M₁ + M₂ − M₃ − M₄) / (8 a₂)
//! σ_XZ   = (M₁ − M₂ + M₃ − M₄) / (8 a₂)
//! σ_YZ   = (M₁ − M₂ − M₃ + M₄) / (8 a₂)
//! ```
//!
//! The sign pattern is a 4×4 Hadamard matrix `H` with `HᵀH = 4I`, so the
//! inverse is `M = Hᵀ u / 4` with `u = (4a₁σ_diag, 8a₂σ_XY, 8a₂σ_XZ, 8a₂σ_YZ)`.

use serde::{Deserialize, Serialize};

use crate::datacube::{MapImage, MapQuantity};
use crate::error::{Error, Result};
use crate::fitengine::FitResultCube;
use crate::util::median_in_place;

const HADAMARD: [[f64; 4]; 4] = [
    [1.0, 1.0, 1.0, 1.0],
    [1.0, 1.0, -1.0, -1.0],
    [1.0, -1.0, 1.0, -1.0],
    [1.0, -1.0, -1.0, 1.0],
];

/// Spin–stress coupling constants in MHz/GPa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinStressConstants {
    pub a1_mhz_per_gpa: f64,
    pub a2_mhz_per_gpa: f64,
}

impl Default for SpinStressConstants {
    fn default() -> Self {
        Self {
            a1_mhz_per_gpa: 4.86,
            a2_mhz_per_gpa: -3.7,
        }
    }
}

impl SpinStressConstants {
    pub fn new(a1: f64, a2: f64) -> Result<Self> {
        let k = Self {
            a1_mhz_per_gpa: a1,
            a2_mhz_per_gpa: a2,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a1_mhz_per_gpa > 0.0 && self.a1_mhz_per_gpa.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "a1 must be positive, got {}",
                self.a1_mhz_per_gpa
            )));
        }
        if self.a2_mhz_per_gpa == 0.0 || !self.a2_mhz_per_gpa.is_finite() {
            return Err(Error::InvalidParameter("a2 must be non-zero".into()));
        }
        Ok(())
    }

    fn scales(&self) -> [f64; 4] {
        let (a1, a2) = (self.a1_mhz_per_gpa, self.a2_mhz_per_gpa);
        [4.0 * a1, 8.0 * a2, 8.0 * a2, 8.0 * a2]
    }
}

/// `(σ_diag, σ_XY, σ_XZ, σ_YZ)` in GPa from four lineshifts in MHz.
pub fn stress_from_lineshifts(m: [f64; 4], k: &SpinStressConstants) -> [f64; 4] {
    let s = k.scales();
    let mut out = [0.0; 4];
    for (r, row) in HADAMARD.iter().enumerate() {
        let dot: f64 = row.iter().zip(&m).map(|(h, v)| h * v).sum();
        out[r] = dot / s[r];
    }
    out
}

/// Inverse of [`stress_from_lineshifts`].
pub fn lineshifts_from_stress_components(sigma: [f64; 4], k: &SpinStressConstants) -> [f64; 4] {
    let s = k.scales();
    let u: [f64; 4] = std::array::from_fn(|r| sigma[r] * s[r]);
    let mut m = [0.0; 4];
    for (i, mi) in m.iter_mut().enumerate() {
        *mi = HADAMARD.iter().zip(&u).map(|(row, v)| row[i] * v).sum::<f64>() / 4.0;
    }
    m
}

/// How the zero of each orientation's lineshift is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineshiftReference {
    /// Subtract each orientation's median centre over valid pixels.
    SpatialMedian,
    /// Subtract a fixed zero-field splitting (MHz).
    FixedZeroField(f64),
}

/// Which two of the eight frequency-ordered resonance groups form each of
/// the four orientation classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairing(pub [(usize, usize); 4]);

impl Default for Pairing {
    /// Outermost with innermost: `(0,7), (1,6), (2,5), (3,4)`.
    fn default() -> Self {
        Pairing([(0, 7), (1, 6), (2, 5), (3, 4)])
    }
}

impl Pairing {
    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; 8];
        for &(a, b) in &self.0 {
            for i in [a, b] {
                if i >= 8 {
                    return Err(Error::Pairing(format!("group index {i} out of range")));
                }
                if seen[i] {
                    return Err(Error::Pairing(format!("group {i} used twice")));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

/// Per-pixel lineshift maps `M_z,i` (MHz) for the four orientations.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationLineshifts {
    pub maps: [MapImage; 4],
    pub reference: LineshiftReference,
}

/// Stress component maps in GPa.
#[derive(Debug, Clone, PartialEq)]
pub struct StressMaps {
    pub diag: MapImage,
    pub xy: MapImage,
    pub xz: MapImage,
    pub yz: MapImage,
}

impl StressMaps {
    pub fn components(&self) -> [&MapImage; 4] {
        [&self.diag, &self.xy, &self.xz, &self.yz]
    }

    pub fn from_planes(width: usize, height: usize, planes: [Vec<f64>; 4]) -> Result<Self> {
        let [diag, xy, xz, yz] = planes;
        let map = |d| MapImage::new(width, height, MapQuantity::StressGpa, d);
        Ok(Self {
            diag: map(diag)?,
            xy: map(xy)?,
            xz: map(xz)?,
            yz: map(yz)?,
        })
    }
}

fn same_shape(maps: &[&MapImage]) -> Result<(usize, usize)> {
    let (w, h) = (maps[0].width(), maps[0].height());
    if maps.iter().any(|m| m.width() != w || m.height() != h) {
        return Err(Error::DimensionMismatch("maps differ in size".into()));
    }
    Ok((w, h))
}

/// Lineshifts from eight resonance-centre maps (MHz), already in frequency
/// order. Each orientation's centre is the mean of its two resonances.
pub fn lineshifts_from_centers(
    centers: &[MapImage],
    pairing: &Pairing,
    reference: LineshiftReference,
) -> Result<OrientationLineshifts> {
    if centers.len() != 8 {
        return Err(Error::Pairing(format!(
            "need 8 resonance maps, got {}",
            centers.len()
        )));
    }
    pairing.validate()?;
    let refs: Vec<&MapImage> = centers.iter().collect();
    let (w, h) = same_shape(&refs)?;

    let mut maps = Vec::with_capacity(4);
    for &(a, b) in &pairing.0 {
        let (ma, mb) = (&centers[a], &centers[b]);
        let mut valid = Vec::with_capacity(w * h);
        let mut mid = Vec::with_capacity(w * h);
        for i in 0..w * h {
            let ok = ma.valid()[i] && mb.valid()[i];
            valid.push(ok);
            mid.push(if ok {
                0.5 * (ma.data()[i] + mb.data()[i])
            } else {
                f64::NAN
            });
        }
        let zero = match reference {
            LineshiftReference::FixedZeroField(d) => d,
            LineshiftReference::SpatialMedian => {
                let mut v: Vec<f64> = mid.iter().copied().filter(|v| v.is_finite()).collect();
                if v.is_empty() {
                    f64::NAN
                } else {
                    median_in_place(&mut v)
                }
            }
        };
        let shifted = mid.iter().map(|c| c - zero).collect();
        maps.push(MapImage::with_mask(
            w,
            h,
            MapQuantity::LineshiftMhz,
            shifted,
            valid,
        )?);
    }
    let maps: [MapImage; 4] = maps.try_into().expect("four orientations");
    Ok(OrientationLineshifts { maps, reference })
}

/// Lineshifts from the eight per-group triplet fits. Non-converged pixels
/// are masked.
pub fn lineshifts_from_odmr(
    results: &[FitResultCube],
    pairing: &Pairing,
    reference: LineshiftReference,
) -> Result<OrientationLineshifts> {
    let centers = results
        .iter()
        .map(|r| r.param_map(1))
        .collect::<Result<Vec<_>>>()?;
    lineshifts_from_centers(&centers, pairing, reference)
}

/// Per-pixel stress components; masked where any lineshift is masked.
pub fn stress_tensor(m: &OrientationLineshifts, k: &SpinStressConstants) -> Result<StressMaps> {
    k.validate()?;
    let refs: Vec<&MapImage> = m.maps.iter().collect();
    let (w, h) = same_shape(&refs)?;
    let mut planes: [Vec<f64>; 4] = Default::default();
    for i in 0..w * h {
        let s = if m.maps.iter().all(|map| map.valid()[i]) {
            stress_from_lineshifts(std::array::from_fn(|o| m.maps[o].data()[i]), k)
        } else {
            [f64::NAN; 4]
        };
        for c in 0..4 {
            planes[c].push(s[c]);
        }
    }
    StressMaps::from_planes(w, h, planes)
}

/// Lineshifts that produce the given stress maps.
pub fn lineshifts_from_stress(
    s: &StressMaps,
    k: &SpinStressConstants,
) -> Result<OrientationLineshifts> {
    k.validate()?;
    let comps = s.components();
    let (w, h) = same_shape(&comps)?;
    let mut planes: [Vec<f64>; 4] = Default::default();
    for i in 0..w * h {
        let m = if comps.iter().all(|c| c.valid()[i]) {
            lineshifts_from_stress_components(std::array::from_fn(|c| comps[c].data()[i]), k)
        } else {
            [f64::NAN; 4]
        };
        for o in 0..4 {
            planes[o].push(m[o]);
        }
    }
    let maps = planes.map(|p| MapImage::new(w, h, MapQuantity::LineshiftMhz, p));
    let [a, b, c, d] = maps;
    Ok(OrientationLineshifts {
        maps: [a?, b?, c?, d?],
        reference: LineshiftReference::FixedZeroField(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> SpinStressConstants {
        SpinStressConstants::default()
    }

    #[test]
    fn symmetric_lineshift_is_pure_diagonal() {
        let s = stress_from_lineshifts([4.86; 4], &k());
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!(s[1..].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn in_plane_shear_value() {
        let s = stress_from_lineshifts([1.0, 1.0, -1.0, -1.0], &k());
        assert!((s[1] - 4.0 / (8.0 * -3.7)).abs() < 1e-12);
        assert!((s[1] + 0.135_135).abs() < 1e-6);
        assert_eq!([s[0], s[2], s[3]], [0.0, 0.0, 0.0]);
        assert_eq!(stress_from_lineshifts([0.0; 4], &k()), [0.0; 4]);
    }

    #[test]
    fn inverse_of_unit_diagonal() {
        let m = lineshifts_from_stress_components([1.0, 0.0, 0.0, 0.0], &k());
        for v in m {
            assert!((v - 4.86).abs() < 1e-12);
        }
        assert_eq!(lineshifts_from_stress_components([0.0; 4], &k()), [0.0; 4]);
        let m = lineshifts_from_stress_components([0.1, 0.0, 0.0, 0.0], &k());
        assert!(m.iter().all(|v| (v - 0.486).abs() < 1e-12));
    }

    #[test]
    fn constants_are_validated() {
        assert!(SpinStressConstants::new(0.0, -3.7).is_err());
        assert!(SpinStressConstants::new(4.86, 0.0).is_err());
    }

    #[test]
    fn pairing_validation() {
        assert!(Pairing::default().validate().is_ok());
        assert!(Pairing([(0, 7), (1, 6), (2, 5), (3, 3)]).validate().is_err());
        assert!(Pairing([(0, 8), (1, 6), (2, 5), (3, 4)]).validate().is_err());
    }

    fn center_maps(values: [f64; 8]) -> Vec<MapImage> {
        values
            .iter()
            .map(|&v| MapImage::filled(3, 2, MapQuantity::FrequencyMhz, v).unwrap())
            .collect()
    }

    #[test]
    fn spatially_constant_centers_give_zero_shift_under_median() {
        let centers = center_maps([2810.0, 2830.0, 2850.0, 2860.0, 2880.0, 2890.0, 2910.0, 2930.0]);
        let m = lineshifts_from_centers(&centers, &Pairing::default(), LineshiftReference::SpatialMedian)
            .unwrap();
        for map in &m.maps {
            assert!(map.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn common_mode_passes_and_zeeman_cancels() {
        let base = [2810.0, 2830.0, 2850.0, 2860.0, 2880.0, 2890.0, 2910.0, 2930.0];
        let mut centers = center_maps(base);
        let bump = |maps: &mut Vec<MapImage>, g: usize, dv: f64| {
            let mut d = maps[g].data().to_vec();
            d[4] += dv;
            maps[g] = MapImage::new(3, 2, MapQuantity::FrequencyMhz, d).unwrap();
        };
        // Orientation 1 is groups (0, 7): common-mode +0.5 MHz at pixel 4.
        bump(&mut centers, 0, 0.5);
        bump(&mut centers, 7, 0.5);
        // Orientation 2 is groups (1, 6): symmetric Zeeman change at pixel 4.
        bump(&mut centers, 6, 0.7);
        bump(&mut centers, 1, -0.7);
        let m = lineshifts_from_centers(
            &centers,
            &Pairing::default(),
            LineshiftReference::SpatialMedian,
        )
        .unwrap();
        assert!((m.maps[0].data()[4] - 0.5).abs() < 1e-12);
        assert!(m.maps[1].data()[4].abs() < 1e-12);
    }

    #[test]
    fn masked_pixels_propagate() {
        let mut centers = center_maps([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let mut d = centers[2].data().to_vec();
        d[1] = f64::NAN;
        centers[2] = MapImage::new(3, 2, MapQuantity::FrequencyMhz, d).unwrap();
        let m = lineshifts_from_centers(
            &centers,
            &Pairing::default(),
            LineshiftReference::FixedZeroField(4.5),
        )
        .unwrap();
        assert!(!m.maps[2].valid()[1]);
        let s = stress_tensor(&m, &k()).unwrap();
        assert!(!s.diag.valid()[1] && s.diag.valid()[0]);
    }
}
