//! Synthetic cubes with known truth, used as the oracle for the fitting and
//! reconstruction pipelines.
//!
//! Noise is additive Gaussian from the counter RNG in [`crate::rng`]. The
//! draw for pixel `i` at sweep point `p` is number `i · points + p` of the
//! run seed, so output depends only on the inputs and the seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datacube::{DataCube, MapImage, Quantity, SweepAxis, SweepKind};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::physics::{
    biref_intensity, lineshifts_from_stress, BirefStack, OrientationLineshifts,
    SpinStressConstants, StressMaps,
};
use crate::rng;

/// Per-pixel true parameters for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthMaps {
    pub spec: ModelSpec,
    /// One map per model parameter, in model order.
    pub planes: Vec<MapImage>,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl TruthMaps {
    /// `planes[k]` holds parameter `k` as `[y][x]`.
    pub fn new(spec: ModelSpec, width: usize, height: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        spec.validate()?;
        if planes.len() != spec.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} truth planes for a {}-parameter model",
                planes.len(),
                spec.n_params()
            )));
        }
        let quantities = spec.param_quantities();
        let planes = planes
            .into_iter()
            .zip(quantities)
            .map(|(p, q)| MapImage::new(width, height, *q, p))
            .collect::<Result<Vec<_>>>()?;
        let truth = Self {
            spec,
            planes,
            noise_sigma: 0.0,
            rng_seed: 0,
        };
        for i in 0..width * height {
            truth.spec.check_params(&truth.params_at(i))?;
        }
        Ok(truth)
    }

    /// Every pixel gets `params`.
    pub fn uniform(spec: ModelSpec, width: usize, height: usize, params: &[f64]) -> Result<Self> {
        let planes = params.iter().map(|&v| vec![v; width * height]).collect();
        Self::new(spec, width, height, planes)
    }

    /// Truth from a per-pixel function `f(x, y)`.
    pub fn from_fn(
        spec: ModelSpec,
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut planes = vec![Vec::with_capacity(width * height); spec.n_params()];
        for y in 0..height {
            for x in 0..width {
                let p = f(x, y);
                if p.len() != spec.n_params() {
                    return Err(Error::InvalidParameter(format!(
                        "truth function returned {} values, model takes {}",
                        p.len(),
                        spec.n_params()
                    )));
                }
                for (plane, v) in planes.iter_mut().zip(p) {
                    plane.push(v);
                }
            }
        }
        Self::new(spec, width, height, planes)
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    /// Parameters of pixel `i` (row-major).
    pub fn params_at(&self, i: usize) -> Vec<f64> {
        self.planes.iter().map(|p| p.data()[i]).collect()
    }
}

fn check_noise(noise_sigma: f64) -> Result<()> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be non-negative, got {noise_sigma}"
        )));
    }
    Ok(())
}

/// Fills `data` (`[point][pixel]`) from `value(pixel, point)` plus noise.
fn fill_frames(
    data: &mut [f64],
    pixels: usize,
    points: usize,
    noise_sigma: f64,
    rng_seed: u64,
    value: impl Fn(usize, usize) -> f64 + Sync,
) {
    data.par_chunks_mut(pixels).enumerate().for_each(|(p, frame)| {
        for (i, v) in frame.iter_mut().enumerate() {
            *v = value(i, p);
            if noise_sigma > 0.0 {
                *v += noise_sigma * rng::gaussian(rng_seed, (i * points + p) as u64);
            }
        }
    });
}

/// Evaluates the model at every pixel and sweep point and adds Gaussian
/// noise. The returned truth records the noise level and seed.
pub fn generate_cube(
    truth: &TruthMaps,
    sweep: &SweepAxis,
    noise_sigma: f64,
    rng_seed: u64,
) -> Result<(DataCube, TruthMaps)> {
    let spec = truth.spec;
    spec.check_sweep(sweep)?;
    check_noise(noise_sigma)?;
    let (w, h) = (truth.width(), truth.height());
    let np = sweep.len();
    let params: Vec<Vec<f64>> = (0..w * h).map(|i| truth.params_at(i)).collect();
    let xs = sweep.values();
    let mut data = vec![0.0; np * w * h];
    fill_frames(&mut data, w * h, np, noise_sigma, rng_seed, |i, p| {
        spec.value(xs[p], &params[i])
    });
    let cube = DataCube::new(w, h, sweep.clone(), spec.quantity(), data)?;
    let mut recorded = truth.clone();
    recorded.noise_sigma = noise_sigma;
    recorded.rng_seed = rng_seed;
    Ok((cube, recorded))
}

/// Polarizer-angle stack from per-pixel `(φ, sin δ, I₀)` maps plus Gaussian
/// noise. Angles are sorted; noisy intensities are clipped at zero.
pub fn generate_biref_stack(
    phi_deg: &MapImage,
    sin_delta: &MapImage,
    i0: &MapImage,
    angles_deg: &[f64],
    noise_sigma: f64,
    rng_seed: u64,
) -> Result<BirefStack> {
    check_noise(noise_sigma)?;
    let (w, h) = (phi_deg.width(), phi_deg.height());
    for m in [sin_delta, i0] {
        if m.width() != w || m.height() != h {
            return Err(Error::DimensionMismatch("truth maps differ in size".into()));
        }
    }
    if let Some(v) = i0.data().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidParameter(format!("I0 must be non-negative, got {v}")));
    }
    if phi_deg.valid_count() != w * h || sin_delta.valid_count() != w * h {
        return Err(Error::NonFiniteInput);
    }
    if let Some(a) = angles_deg.iter().find(|a| !(**a >= 0.0 && **a < 180.0)) {
        return Err(Error::InvalidSweep(format!("polarizer angle {a} outside [0, 180)")));
    }
    let mut angles = angles_deg.to_vec();
    angles.sort_by(f64::total_cmp);
    let sweep = SweepAxis::new(SweepKind::AngleDeg, angles)?;
    let (phi, sd, amp) = (phi_deg.data(), sin_delta.data(), i0.data());
    let xs = sweep.values();
    let mut data = vec![0.0; xs.len() * w * h];
    fill_frames(&mut data, w * h, xs.len(), noise_sigma, rng_seed, |i, p| {
        biref_intensity(xs[p], phi[i], sd[i], amp[i])
    });
    for v in &mut data {
        *v = v.max(0.0);
    }
    BirefStack::from_cube(DataCube::new(w, h, sweep, Quantity::Intensity, data)?)
}

/// Layout of an eight-group ODMR scene: four orientation classes, each a
/// pair of hyperfine triplets at `D + M ± split`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdmrSceneParams {
    /// Half-splittings per orientation (MHz), strictly decreasing so the
    /// default outermost-with-innermost pairing holds.
    pub split_mhz: [f64; 4],
    pub zero_field_mhz: f64,
    pub linewidth_mhz: f64,
    /// Per-triplet dip amplitude.
    pub amplitude: f64,
    pub hyperfine_mhz: f64,
    pub constants: SpinStressConstants,
}

impl Default for OdmrSceneParams {
    fn default() -> Self {
        Self {
            split_mhz: [60.0, 45.0, 30.0, 15.0],
            zero_field_mhz: 2870.0,
            linewidth_mhz: 1.0,
            amplitude: 0.01,
            hyperfine_mhz: crate::models::DEFAULT_HYPERFINE_MHZ,
            constants: SpinStressConstants::default(),
        }
    }
}

impl OdmrSceneParams {
    /// Unstressed group centres in frequency order.
    pub fn group_centers(&self) -> [f64; 8] {
        let d = self.zero_field_mhz;
        let s = self.split_mhz;
        [
            d - s[0],
            d - s[1],
            d - s[2],
            d - s[3],
            d + s[3],
            d + s[2],
            d + s[1],
            d + s[0],
        ]
    }
}

#[derive(Debug, Clone)]
pub struct OdmrScene {
    pub cube: DataCube,
    pub stress: StressMaps,
    pub lineshifts: OrientationLineshifts,
    pub params: OdmrSceneParams,
    /// Adjacent groups come closer than their fitting windows somewhere.
    pub overlap_warning: bool,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

/// Eight-group contrast spectra whose per-orientation common-mode shifts
/// are the lineshifts implied by `stress`.
pub fn generate_odmr_scene(
    params: &OdmrSceneParams,
    sweep: &SweepAxis,
    stress: &StressMaps,
    noise_sigma: f64,
    rng_seed: u64,
) -> Result<OdmrScene> {
    let spec = ModelSpec::odmr(params.hyperfine_mhz);
    spec.check_sweep(sweep)?;
    check_noise(noise_sigma)?;
    spec.check_params(&[params.amplitude, params.zero_field_mhz, params.linewidth_mhz])?;
    let s = params.split_mhz;
    if !(s[3] > 0.0 && s.windows(2).all(|w| w[0] > w[1])) {
        return Err(Error::InvalidParameter(
            "orientation splittings must be positive and strictly decreasing".into(),
        ));
    }
    let lineshifts = lineshifts_from_stress(stress, &params.constants)?;
    let (w, h) = (stress.diag.width(), stress.diag.height());
    if lineshifts.maps.iter().any(|m| m.valid_count() != w * h) {
        return Err(Error::NonFiniteInput);
    }

    // Orientation of each frequency-ordered group, and the sign of its split.
    const GROUP_ORIENTATION: [(usize, f64); 8] = [
        (0, -1.0),
        (1, -1.0),
        (2, -1.0),
        (3, -1.0),
        (3, 1.0),
        (2, 1.0),
        (1, 1.0),
        (0, 1.0),
    ];
    let centers: Vec<[f64; 8]> = (0..w * h)
        .map(|i| {
            GROUP_ORIENTATION.map(|(o, sign)| {
                params.zero_field_mhz + lineshifts.maps[o].data()[i] + sign * s[o]
            })
        })
        .collect();

    let xs = sweep.values();
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let half = (3.0 * params.linewidth_mhz).max(3.0 * params.hyperfine_mhz);
    let mut overlap_warning = false;
    for c in &centers {
        if c[0] - params.hyperfine_mhz < lo || c[7] + params.hyperfine_mhz > hi {
            return Err(Error::InvalidSweep(format!(
                "resonances span {:.3}..{:.3} MHz, sweep covers {lo}..{hi}",
                c[0], c[7]
            )));
        }
        if c.windows(2).any(|p| p[1] - p[0] < 2.0 * half) {
            overlap_warning = true;
        }
    }

    let amp = params.amplitude;
    let gamma = params.linewidth_mhz;
    let mut data = vec![0.0; xs.len() * w * h];
    fill_frames(&mut data, w * h, xs.len(), noise_sigma, rng_seed, |i, p| {
        let dip: f64 = centers[i]
            .iter()
            .map(|&c| 1.0 - spec.value(xs[p], &[amp, c, gamma]))
            .sum();
        1.0 - dip
    });
    Ok(OdmrScene {
        cube: DataCube::new(w, h, sweep.clone(), Quantity::Contrast, data)?,
        stress: stress.clone(),
        lineshifts,
        params: *params,
        overlap_warning,
        noise_sigma,
        rng_seed,
    })
}

/// A stress "channel": a Gaussian ridge of compressive diagonal stress along
/// the image diagonal, with weaker shear following the same profile.
pub fn stress_channel(width: usize, height: usize, peak_gpa: f64, width_px: f64) -> Result<StressMaps> {
    if !(width_px > 0.0) {
        return Err(Error::InvalidParameter("channel width must be positive".into()));
    }
    let n = width * height;
    let mut planes: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(n));
    let (wf, hf) = (width.max(2) as f64 - 1.0, height.max(2) as f64 - 1.0);
    for y in 0..height {
        for x in 0..width {
            // Distance from the line through (0, 0.2h) and (w, 0.8h).
            let (u, v) = (x as f64 / wf, y as f64 / hf);
            let d = ((v - 0.2 - 0.6 * u) * hf) / (1.0 + 0.36 * (hf / wf).powi(2)).sqrt();
            let profile = (-(d / width_px).powi(2)).exp();
            planes[0].push(peak_gpa * profile);
            planes[1].push(0.3 * peak_gpa * profile);
            planes[2].push(-0.2 * peak_gpa * profile);
            planes[3].push(0.1 * peak_gpa * profile * (u - 0.5));
        }
    }
    StressMaps::from_planes(width, height, planes)
}
