//! Closed-form measurement models and their analytic partial derivatives.
//!
//! | kind           | sweep | parameters                 | output     |
//! |----------------|-------|----------------------------|------------|
//! | `OdmrTriplet`  | MHz   | A, f_center (MHz), Γ (MHz) | contrast   |
//! | `Rabi`         | µs    | A, f (MHz), κ (1/µs)       | contrast   |
//! | `Ramsey`       | µs    | A₋₁, A₀, A₊₁, κ (1/µs)     | visibility |
//! | `Hahn`         | ms    | A, κ (1/ms)                | visibility |
//! | `T1`           | ms    | A, κ (1/ms) [, ε]          | contrast   |
//!
//! Lorentzians are normalized to unit peak height so that `A` is the
//! fractional depth of the central hyperfine line.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::datacube::{MapQuantity, Quantity, SweepAxis, SweepKind};
use crate::error::{Error, Result};

pub const MAX_PARAMS: usize = 4;

/// ¹⁴N hyperfine splitting.
pub const DEFAULT_HYPERFINE_MHZ: f64 = 2.158;
/// Ramsey MW detuning.
pub const DEFAULT_DETUNING_MHZ: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    OdmrTriplet,
    Rabi,
    Ramsey,
    Hahn,
    T1,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::OdmrTriplet => "odmr",
            ModelKind::Rabi => "rabi",
            ModelKind::Ramsey => "ramsey",
            ModelKind::Hahn => "hahn",
            ModelKind::T1 => "t1",
        }
    }
}

/// Stretch exponent handling for the T1 model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stretch {
    Fixed(f64),
    Free,
}

/// Which model to fit, plus its fixed constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hyperfine_mhz: f64,
    pub detuning_mhz: f64,
    pub stretch: Stretch,
}

/// Per-parameter box constraints. `None` means unbounded on that side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: [Option<f64>; MAX_PARAMS],
    pub upper: [Option<f64>; MAX_PARAMS],
}

impl Bounds {
    pub fn unbounded() -> Self {
        Self {
            lower: [None; MAX_PARAMS],
            upper: [None; MAX_PARAMS],
        }
    }

    #[inline]
    pub fn clamp(&self, i: usize, v: f64) -> f64 {
        let mut v = v;
        if let Some(lo) = self.lower[i] {
            v = v.max(lo);
        }
        if let Some(hi) = self.upper[i] {
            v = v.min(hi);
        }
        v
    }

    pub fn contains(&self, params: &[f64]) -> bool {
        params
            .iter()
            .enumerate()
            .all(|(i, &v)| self.clamp(i, v) == v)
    }

    #[inline]
    pub fn at_bound(&self, i: usize, v: f64) -> bool {
        self.lower[i] == Some(v) || self.upper[i] == Some(v)
    }
}

impl ModelSpec {
    fn with_kind(kind: ModelKind) -> Self {
        Self {
            kind,
            hyperfine_mhz: DEFAULT_HYPERFINE_MHZ,
            detuning_mhz: DEFAULT_DETUNING_MHZ,
            stretch: Stretch::Fixed(1.0),
        }
    }

    pub fn odmr(hyperfine_mhz: f64) -> Self {
        Self {
            hyperfine_mhz,
            ..Self::with_kind(ModelKind::OdmrTriplet)
        }
    }

    pub fn rabi() -> Self {
        Self::with_kind(ModelKind::Rabi)
    }

    pub fn ramsey(detuning_mhz: f64, hyperfine_mhz: f64) -> Self {
        Self {
            detuning_mhz,
            hyperfine_mhz,
            ..Self::with_kind(ModelKind::Ramsey)
        }
    }

    pub fn hahn() -> Self {
        Self::with_kind(ModelKind::Hahn)
    }

    pub fn t1(stretch: Stretch) -> Self {
        Self {
            stretch,
            ..Self::with_kind(ModelKind::T1)
        }
    }

    /// Default spec for a model kind.
    pub fn for_kind(kind: ModelKind) -> Self {
        Self::with_kind(kind)
    }

    pub fn n_params(&self) -> usize {
        match self.kind {
            ModelKind::OdmrTriplet | ModelKind::Rabi => 3,
            ModelKind::Ramsey => 4,
            ModelKind::Hahn => 2,
            ModelKind::T1 => match self.stretch {
                Stretch::Fixed(_) => 2,
                Stretch::Free => 3,
            },
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self.kind {
            ModelKind::OdmrTriplet => &["amplitude", "f_center", "linewidth"],
            ModelKind::Rabi => &["amplitude", "frequency", "kappa"],
            ModelKind::Ramsey => &["amp_minus", "amp_zero", "amp_plus", "kappa"],
            ModelKind::Hahn => &["amplitude", "kappa"],
            ModelKind::T1 => match self.stretch {
                Stretch::Fixed(_) => &["amplitude", "kappa"],
                Stretch::Free => &["amplitude", "kappa", "stretch"],
            },
        }
    }

    pub fn param_quantities(&self) -> &'static [MapQuantity] {
        use MapQuantity::*;
        match self.kind {
            ModelKind::OdmrTriplet => &[Amplitude, FrequencyMhz, LinewidthMhz],
            ModelKind::Rabi => &[Amplitude, FrequencyMhz, RatePerUs],
            ModelKind::Ramsey => &[Amplitude, Amplitude, Amplitude, RatePerUs],
            ModelKind::Hahn => &[Amplitude, RatePerMs],
            ModelKind::T1 => match self.stretch {
                Stretch::Fixed(_) => &[Amplitude, RatePerMs],
                Stretch::Free => &[Amplitude, RatePerMs, StretchExponent],
            },
        }
    }

    /// The reduced quantity this model describes.
    pub fn quantity(&self) -> Quantity {
        match self.kind {
            ModelKind::OdmrTriplet | ModelKind::Rabi | ModelKind::T1 => Quantity::Contrast,
            ModelKind::Ramsey | ModelKind::Hahn => Quantity::Visibility,
        }
    }

    pub fn sweep_kind(&self) -> SweepKind {
        match self.kind {
            ModelKind::OdmrTriplet => SweepKind::FrequencyMhz,
            ModelKind::Rabi | ModelKind::Ramsey => SweepKind::TimeUs,
            ModelKind::Hahn | ModelKind::T1 => SweepKind::TimeMs,
        }
    }

    pub fn check_sweep(&self, sweep: &SweepAxis) -> Result<()> {
        if sweep.kind() != self.sweep_kind() {
            return Err(Error::UnitMismatch {
                expected: self.sweep_kind().name(),
                found: sweep.kind().name(),
            });
        }
        Ok(())
    }

    /// Validates the fixed constants.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::OdmrTriplet if !(self.hyperfine_mhz >= 0.0) => Err(
                Error::InvalidParameter(format!("hyperfine splitting {}", self.hyperfine_mhz)),
            ),
            ModelKind::Ramsey
                if !(self.hyperfine_mhz >= 0.0 && self.detuning_mhz > self.hyperfine_mhz) =>
            {
                Err(Error::InvalidParameter(format!(
                    "Ramsey needs detuning > hyperfine >= 0, got {} and {}",
                    self.detuning_mhz, self.hyperfine_mhz
                )))
            }
            ModelKind::T1 => match self.stretch {
                Stretch::Fixed(e) if !(e > 0.0 && e <= 3.0) => Err(Error::InvalidParameter(
                    format!("stretch exponent {e} outside (0, 3]"),
                )),
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Checks that a parameter vector is admissible for this model.
    pub fn check_params(&self, p: &[f64]) -> Result<()> {
        self.validate()?;
        if p.len() != self.n_params() {
            return Err(Error::InvalidParameter(format!(
                "{} model takes {} parameters, got {}",
                self.kind.name(),
                self.n_params(),
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} = {v}")));
        match self.kind {
            ModelKind::OdmrTriplet => {
                if p[0] < 0.0 {
                    return bad("amplitude", p[0]);
                }
                if !(p[2] > 0.0) {
                    return bad("linewidth", p[2]);
                }
            }
            ModelKind::Rabi => {
                if p[0] < 0.0 {
                    return bad("amplitude", p[0]);
                }
                if !(p[1] > 0.0) {
                    return bad("frequency", p[1]);
                }
                if p[2] < 0.0 {
                    return bad("kappa", p[2]);
                }
            }
            ModelKind::Ramsey => {
                if let Some(a) = p[..3].iter().find(|a| **a < 0.0) {
                    return bad("amplitude", *a);
                }
                if p[3] < 0.0 {
                    return bad("kappa", p[3]);
                }
            }
            ModelKind::Hahn | ModelKind::T1 => {
                if p[0] < 0.0 {
                    return bad("amplitude", p[0]);
                }
                if p[1] < 0.0 {
                    return bad("kappa", p[1]);
                }
                if self.stretch == Stretch::Free && self.kind == ModelKind::T1 {
                    if !(p[2] > 0.0 && p[2] <= 3.0) {
                        return bad("stretch exponent", p[2]);
                    }
                }
            }
        }
        Ok(())
    }

    /// Box constraints used by the fit engine.
    pub fn default_bounds(&self) -> Bounds {
        let mut b = Bounds::unbounded();
        match self.kind {
            ModelKind::OdmrTriplet => {
                b.lower[0] = Some(0.0);
                b.upper[0] = Some(1.0);
                b.lower[2] = Some(1e-6);
            }
            ModelKind::Rabi => {
                b.lower[0] = Some(0.0);
                b.upper[0] = Some(2.0);
                b.lower[1] = Some(1e-9);
                b.lower[2] = Some(0.0);
            }
            ModelKind::Ramsey => {
                b.lower[..4].copy_from_slice(&[Some(0.0); 4]);
            }
            ModelKind::Hahn | ModelKind::T1 => {
                b.lower[0] = Some(0.0);
                b.lower[1] = Some(0.0);
                if self.n_params() == 3 {
                    b.lower[2] = Some(0.05);
                    b.upper[2] = Some(3.0);
                }
            }
        }
        b
    }

    fn stretch_exponent(&self, p: &[f64]) -> f64 {
        match self.stretch {
            Stretch::Fixed(e) => e,
            Stretch::Free => p[2],
        }
    }

    /// Model value at sweep coordinate `x`. Parameters are not validated.
    #[inline]
    pub fn value(&self, x: f64, p: &[f64]) -> f64 {
        match self.kind {
            ModelKind::OdmrTriplet => {
                let h = 0.5 * p[2];
                let h2 = h * h;
                let d = self.hyperfine_mhz;
                let s: f64 = [p[1] - d, p[1], p[1] + d]
                    .iter()
                    .map(|c| {
                        let u = x - c;
                        h2 / (u * u + h2)
                    })
                    .sum();
                1.0 - p[0] * s
            }
            ModelKind::Rabi => {
                let envelope = (-x * p[2]).exp();
                1.0 - 0.5 * p[0] * (1.0 - (TAU * p[1] * x).cos() * envelope)
            }
            ModelKind::Ramsey => {
                let (f, d) = (self.detuning_mhz, self.hyperfine_mhz);
                let osc = p[0] * (1.0 - (TAU * (f - d) * x).sin())
                    + p[1] * (1.0 - (TAU * f * x).sin())
                    + p[2] * (1.0 - (TAU * (f + d) * x).sin());
                osc * (-x * p[3]).exp()
            }
            ModelKind::Hahn => p[0] * (-x * p[1]).exp(),
            ModelKind::T1 => {
                let e = self.stretch_exponent(p);
                1.0 - p[0] * (-(x * p[1]).powf(e)).exp()
            }
        }
    }

    /// Model value and its gradient with respect to the free parameters.
    #[inline]
    pub fn value_and_grad(&self, x: f64, p: &[f64], grad: &mut [f64]) -> f64 {
        match self.kind {
            ModelKind::OdmrTriplet => {
                let h = 0.5 * p[2];
                let h2 = h * h;
                let d = self.hyperfine_mhz;
                let (mut s, mut ds_dc, mut ds_dg) = (0.0, 0.0, 0.0);
                for c in [p[1] - d, p[1], p[1] + d] {
                    let u = x - c;
                    let den = u * u + h2;
                    s += h2 / den;
                    ds_dc += 2.0 * h2 * u / (den * den);
                    ds_dg += h * u * u / (den * den);
                }
                grad[0] = -s;
                grad[1] = -p[0] * ds_dc;
                grad[2] = -p[0] * ds_dg;
                1.0 - p[0] * s
            }
            ModelKind::Rabi => {
                let envelope = (-x * p[2]).exp();
                let (sin, cos) = (TAU * p[1] * x).sin_cos();
                let ce = cos * envelope;
                let half_a = 0.5 * p[0];
                grad[0] = -0.5 * (1.0 - ce);
                grad[1] = -half_a * TAU * x * sin * envelope;
                grad[2] = -half_a * x * ce;
                1.0 - half_a * (1.0 - ce)
            }
            ModelKind::Ramsey => {
                let (f, d) = (self.detuning_mhz, self.hyperfine_mhz);
                let envelope = (-x * p[3]).exp();
                let terms = [
                    1.0 - (TAU * (f - d) * x).sin(),
                    1.0 - (TAU * f * x).sin(),
                    1.0 - (TAU * (f + d) * x).sin(),
                ];
                let osc = p[0] * terms[0] + p[1] * terms[1] + p[2] * terms[2];
                let v = osc * envelope;
                for k in 0..3 {
                    grad[k] = terms[k] * envelope;
                }
                grad[3] = -x * v;
                v
            }
            ModelKind::Hahn => {
                let e = (-x * p[1]).exp();
                grad[0] = e;
                grad[1] = -x * p[0] * e;
                p[0] * e
            }
            ModelKind::T1 => {
                let eps = self.stretch_exponent(p);
                let t = x * p[1];
                let u = t.powf(eps);
                let decay = (-u).exp();
                grad[0] = -decay;
                // d(τκ)^ε/dκ = ε τ (τκ)^(ε-1); vanishes at τ = 0.
                let du_dk = if x == 0.0 {
                    0.0
                } else {
                    eps * x * t.powf(eps - 1.0)
                };
                grad[1] = p[0] * decay * du_dk;
                if self.n_params() == 3 {
                    let du_de = if t > 0.0 { u * t.ln() } else { 0.0 };
                    grad[2] = p[0] * decay * du_de;
                }
                1.0 - p[0] * decay
            }
        }
    }
}

/// Evaluates a model over a sweep after validating parameters and units.
pub fn eval(spec: &ModelSpec, params: &[f64], sweep: &SweepAxis) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    spec.check_sweep(sweep)?;
    Ok(sweep.values().iter().map(|&x| spec.value(x, params)).collect())
}

/// Analytic Jacobian, row-major `[point][param]`.
pub fn jacobian(spec: &ModelSpec, params: &[f64], sweep: &SweepAxis) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    spec.check_sweep(sweep)?;
    let n = spec.n_params();
    let mut out = vec![0.0; sweep.len() * n];
    for (row, &x) in out.chunks_exact_mut(n).zip(sweep.values()) {
        spec.value_and_grad(x, params, row);
    }
    Ok(out)
}

fn eval_at(spec: ModelSpec, params: &[f64], xs: &[f64]) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    Ok(xs.iter().map(|&x| spec.value(x, params)).collect())
}

/// Hahn-echo visibility `A·exp(−τκ)`, τ in ms.
pub fn eval_hahn(tau_ms: &[f64], amplitude: f64, kappa: f64) -> Result<Vec<f64>> {
    eval_at(ModelSpec::hahn(), &[amplitude, kappa], tau_ms)
}

/// Stretched-exponential relaxation contrast `1 − A·exp(−(τκ)^ε)`, τ in ms.
pub fn eval_t1(tau_ms: &[f64], amplitude: f64, kappa: f64, stretch: f64) -> Result<Vec<f64>> {
    eval_at(ModelSpec::t1(Stretch::Fixed(stretch)), &[amplitude, kappa], tau_ms)
}

/// Decaying Rabi oscillation contrast, τ in µs, f in MHz.
pub fn eval_rabi(tau_us: &[f64], amplitude: f64, freq_mhz: f64, kappa: f64) -> Result<Vec<f64>> {
    eval_at(ModelSpec::rabi(), &[amplitude, freq_mhz, kappa], tau_us)
}

/// Three detuned decaying sinusoids (one per hyperfine line), τ in µs.
pub fn eval_ramsey(
    tau_us: &[f64],
    amplitudes: [f64; 3],
    kappa: f64,
    detuning_mhz: f64,
    hyperfine_mhz: f64,
) -> Result<Vec<f64>> {
    let [a, b, c] = amplitudes;
    eval_at(
        ModelSpec::ramsey(detuning_mhz, hyperfine_mhz),
        &[a, b, c, kappa],
        tau_us,
    )
}

/// Hyperfine-triplet Lorentzian dip contrast, frequencies in MHz.
pub fn eval_odmr(
    freq_mhz: &[f64],
    amplitude: f64,
    center_mhz: f64,
    linewidth_mhz: f64,
    hyperfine_mhz: f64,
) -> Result<Vec<f64>> {
    eval_at(
        ModelSpec::odmr(hyperfine_mhz),
        &[amplitude, center_mhz, linewidth_mhz],
        freq_mhz,
    )
}
