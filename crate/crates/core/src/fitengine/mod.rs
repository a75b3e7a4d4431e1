//! Levenberg–Marquardt fitting, coarse-to-fine seeding and the per-pixel
//! batch driver.

mod batch;
mod lm;
mod odmr;
mod seed;

pub use batch::{fit_cube, fit_t1_two_stage, FitResultCube};
pub use lm::{lm_fit, lm_fit_traced, minimize, CurveModel};
pub use odmr::{find_odmr_peaks, fit_odmr_cube, OdmrWindow};
pub use seed::{heuristic_seed, multi_start_fit, seed_by_dicing, BlockSeed, BlockState, SeedGrid};

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::models::{Bounds, MAX_PARAMS};

/// Solver and batch settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub damping_init: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Converged when an accepted step lowers χ² by less than this fraction.
    pub chisq_rel_tol: f64,
    /// Converged when `|Δp| <= step_tol * (|p| + step_tol)`.
    pub step_tol: f64,
    /// Overrides the model's default box constraints when set.
    #[serde(skip)]
    pub bounds: Option<Bounds>,
    /// Worker threads for batch fits; 0 uses every available core.
    pub workers: usize,
    /// Starts per block fit during seeding, the first being the heuristic.
    pub restarts: usize,
    /// Relative jitter applied to restart seeds.
    pub jitter: f64,
    /// Seed for restart jitter.
    pub rng_seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            damping_init: 1e-3,
            damping_up: 10.0,
            damping_down: 10.0,
            chisq_rel_tol: 1e-9,
            step_tol: 1e-8,
            bounds: None,
            workers: 0,
            restarts: 5,
            jitter: 0.2,
            rng_seed: 0,
        }
    }
}

impl FitOptions {
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

/// Why a fit stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    SingularNormalMatrix,
    BoundsStuck,
    /// No usable seed was available for this pixel.
    SeedFailed,
    /// Converged, but the fitted resonance left its frequency window.
    OutsideWindow,
}

impl FitStatus {
    pub fn code(self) -> u8 {
        match self {
            FitStatus::Converged => 0,
            FitStatus::MaxIterations => 1,
            FitStatus::SingularNormalMatrix => 2,
            FitStatus::BoundsStuck => 3,
            FitStatus::SeedFailed => 4,
            FitStatus::OutsideWindow => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => FitStatus::Converged,
            1 => FitStatus::MaxIterations,
            2 => FitStatus::SingularNormalMatrix,
            3 => FitStatus::BoundsStuck,
            4 => FitStatus::SeedFailed,
            5 => FitStatus::OutsideWindow,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FitStatus::Converged => "converged",
            FitStatus::MaxIterations => "max_iterations",
            FitStatus::SingularNormalMatrix => "singular_normal_matrix",
            FitStatus::BoundsStuck => "bounds_stuck",
            FitStatus::SeedFailed => "seed_failed",
            FitStatus::OutsideWindow => "outside_window",
        }
    }

    pub fn is_converged(self) -> bool {
        self == FitStatus::Converged
    }
}

/// Fixed-capacity parameter vector.
#[derive(Clone, Copy, PartialEq)]
pub struct Params {
    values: [f64; MAX_PARAMS],
    len: usize,
}

impl Params {
    pub fn new(values: &[f64]) -> Self {
        assert!(values.len() <= MAX_PARAMS, "too many parameters");
        let mut v = [0.0; MAX_PARAMS];
        v[..values.len()].copy_from_slice(values);
        Self {
            values: v,
            len: values.len(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.len]
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values[..self.len]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.as_slice().to_vec()
    }
}

impl Deref for Params {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        self.as_slice()
    }
}

impl std::fmt::Debug for Params {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.as_slice()).finish()
    }
}

/// Result of one least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOutcome {
    pub params: Params,
    /// Sum of squared residuals (unit weights).
    pub chisq: f64,
    pub iterations: u32,
    pub status: FitStatus,
}

impl FitOutcome {
    pub fn converged(&self) -> bool {
        self.status.is_converged()
    }

    /// `None` when converged.
    pub fn failure_reason(&self) -> Option<FitStatus> {
        (!self.converged()).then_some(self.status)
    }
}

pub(crate) fn thread_pool(workers: usize) -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    builder.build().expect("failed to build worker pool")
}
