use rayon::prelude::*;

use super::lm::minimize;
use super::seed::{check_cube_for_model, multi_start_fit, seed_by_dicing, SeedGrid};
use super::{thread_pool, FitOptions, FitOutcome, FitStatus, Params};
use crate::datacube::{DataCube, MapImage, MapQuantity};
use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelSpec, Stretch};
use crate::rng;

/// Per-pixel fit results, stored as planes co-registered with the input cube.
#[derive(Debug, Clone)]
pub struct FitResultCube {
    width: usize,
    height: usize,
    points: usize,
    model: ModelSpec,
    /// `[param][y][x]`
    params: Vec<f64>,
    chisq: Vec<f64>,
    iterations: Vec<u32>,
    status: Vec<FitStatus>,
}

impl FitResultCube {
    fn from_outcomes(
        width: usize,
        height: usize,
        points: usize,
        model: ModelSpec,
        outcomes: &[FitOutcome],
    ) -> Self {
        let plane = width * height;
        let n = model.n_params();
        let mut params = vec![0.0; n * plane];
        for (i, o) in outcomes.iter().enumerate() {
            for k in 0..n {
                params[k * plane + i] = o.params[k];
            }
        }
        Self {
            width,
            height,
            points,
            model,
            params,
            chisq: outcomes.iter().map(|o| o.chisq).collect(),
            iterations: outcomes.iter().map(|o| o.iterations).collect(),
            status: outcomes.iter().map(|o| o.status).collect(),
        }
    }

    /// A result in which every pixel carries the same failure status.
    pub fn all_failed(
        width: usize,
        height: usize,
        points: usize,
        model: ModelSpec,
        status: FitStatus,
    ) -> Self {
        let plane = width * height;
        Self {
            width,
            height,
            points,
            model,
            params: vec![f64::NAN; model.n_params() * plane],
            chisq: vec![f64::NAN; plane],
            iterations: vec![0; plane],
            status: vec![status; plane],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Sweep points each pixel was fitted on.
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn n_params(&self) -> usize {
        self.model.n_params()
    }

    pub fn param_plane(&self, k: usize) -> &[f64] {
        let plane = self.width * self.height;
        &self.params[k * plane..(k + 1) * plane]
    }

    pub fn chisq_plane(&self) -> &[f64] {
        &self.chisq
    }

    pub fn iterations_plane(&self) -> &[u32] {
        &self.iterations
    }

    pub fn status_plane(&self) -> &[FitStatus] {
        &self.status
    }

    /// Overrides the status of one pixel, e.g. to exclude it from maps.
    pub fn set_status(&mut self, x: usize, y: usize, status: FitStatus) {
        self.status[y * self.width + x] = status;
    }

    pub(crate) fn status_mut(&mut self) -> &mut [FitStatus] {
        &mut self.status
    }

    pub fn outcome(&self, x: usize, y: usize) -> FitOutcome {
        let i = y * self.width + x;
        let p: Vec<f64> = (0..self.n_params()).map(|k| self.param_plane(k)[i]).collect();
        FitOutcome {
            params: Params::new(&p),
            chisq: self.chisq[i],
            iterations: self.iterations[i],
            status: self.status[i],
        }
    }

    pub fn converged_mask(&self) -> Vec<bool> {
        self.status.iter().map(|s| s.is_converged()).collect()
    }

    pub fn converged_fraction(&self) -> f64 {
        let n = self.status.iter().filter(|s| s.is_converged()).count();
        n as f64 / self.status.len() as f64
    }

    /// Parameter `k` as a map with non-converged pixels masked.
    pub fn param_map(&self, k: usize) -> Result<MapImage> {
        MapImage::with_mask(
            self.width,
            self.height,
            self.model.param_quantities()[k],
            self.param_plane(k).to_vec(),
            self.converged_mask(),
        )
    }

    pub fn status_map(&self) -> Result<MapImage> {
        MapImage::new(
            self.width,
            self.height,
            MapQuantity::FitStatus,
            self.status.iter().map(|s| f64::from(s.code())).collect(),
        )
    }

    pub fn iterations_map(&self) -> Result<MapImage> {
        MapImage::new(
            self.width,
            self.height,
            MapQuantity::Iterations,
            self.iterations.iter().map(|&i| f64::from(i)).collect(),
        )
    }

    /// Bit-level equality of every plane.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.width == other.width
            && self.height == other.height
            && self.points == other.points
            && self.model == other.model
            && bits(&self.params) == bits(&other.params)
            && bits(&self.chisq) == bits(&other.chisq)
            && self.iterations == other.iterations
            && self.status == other.status
    }
}

/// Fits every pixel of `cube`, each from its block seed.
///
/// Rows are distributed over `options.workers` threads; each pixel writes
/// only its own slot, so the result does not depend on the worker count.
pub fn fit_cube(
    cube: &DataCube,
    spec: &ModelSpec,
    seeds: &SeedGrid,
    options: &FitOptions,
) -> Result<FitResultCube> {
    check_cube_for_model(cube, spec)?;
    if seeds.width() != cube.width() || seeds.height() != cube.height() {
        return Err(Error::DimensionMismatch(format!(
            "seed grid is {}x{}, cube is {}x{}",
            seeds.width(),
            seeds.height(),
            cube.width(),
            cube.height()
        )));
    }
    if let Some(b) = seeds.blocks().iter().find(|b| b.params.len() != spec.n_params()) {
        return Err(Error::InvalidParameter(format!(
            "seed has {} parameters, model takes {}",
            b.params.len(),
            spec.n_params()
        )));
    }
    let bounds = options.bounds.unwrap_or_else(|| spec.default_bounds());
    let (w, np) = (cube.width(), cube.points());
    let xs = cube.sweep().values();

    let placeholder = FitOutcome {
        params: Params::new(&[]),
        chisq: 0.0,
        iterations: 0,
        status: FitStatus::SeedFailed,
    };
    let mut outcomes = vec![placeholder; w * cube.height()];
    thread_pool(options.workers).install(|| {
        outcomes
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(y, row)| {
                let mut traces = vec![0.0; w * np];
                cube.gather_row(y, &mut traces);
                for (x, slot) in row.iter_mut().enumerate() {
                    let ys = &traces[x * np..(x + 1) * np];
                    *slot = minimize(spec, xs, ys, seeds.seed_for(x, y), &bounds, options, None);
                }
            });
    });
    Ok(FitResultCube::from_outcomes(
        w,
        cube.height(),
        np,
        *spec,
        &outcomes,
    ))
}

/// Relaxometry fit in two stages: the stretch exponent is fitted once on the
/// image-mean trace, then frozen for the per-pixel fits.
pub fn fit_t1_two_stage(
    cube: &DataCube,
    dicing: usize,
    options: &FitOptions,
) -> Result<FitResultCube> {
    let free = ModelSpec::t1(Stretch::Free);
    check_cube_for_model(cube, &free)?;
    let mean = cube.mean_trace();
    let stream = rng::substream(options.rng_seed, u64::MAX);
    let stage1 = multi_start_fit(&free, cube.sweep().values(), &mean, options, stream)
        .ok_or_else(|| {
            Error::SeedingFailed("stretch-exponent fit on the mean trace did not converge".into())
        })?;
    let frozen = ModelSpec::t1(Stretch::Fixed(stage1.params[2]));
    debug_assert_eq!(frozen.kind, ModelKind::T1);
    let seeds = seed_by_dicing(cube, &frozen, dicing, options)?;
    fit_cube(cube, &frozen, &seeds, options)
}
