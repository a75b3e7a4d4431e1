//! Coarse-to-fine seeding: N×N block averages are fitted with a multi-start
//! LM, and each block result seeds every pixel it covers.

use rayon::prelude::*;

use super::lm::minimize;
use super::{thread_pool, FitOptions, FitOutcome, Params};
use crate::datacube::DataCube;
use crate::error::{Error, Result};
use crate::models::{Bounds, ModelKind, ModelSpec, Stretch, MAX_PARAMS};
use crate::rng;
use crate::util::{cholesky_solve, linear_regression, mean};

pub const MAX_DICING: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockState {
    /// Seed fitted on the block's own mean trace.
    Fitted,
    /// Every restart failed; seed copied from the nearest fitted block.
    Inherited,
    /// The block covers no pixels (dicing finer than the image).
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSeed {
    pub params: Params,
    /// χ² of the block fit, NaN unless fitted.
    pub chisq: f64,
    pub state: BlockState,
    pub pixels: usize,
}

/// Per-block seeds covering an image.
///
/// Pixel `(x, y)` belongs to block column `x·N / width` and block row
/// `y·N / height`, so block sizes differ by at most one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedGrid {
    dicing: usize,
    width: usize,
    height: usize,
    blocks: Vec<BlockSeed>,
}

impl SeedGrid {
    /// A single seed shared by every pixel.
    pub fn uniform(width: usize, height: usize, params: &[f64]) -> Self {
        Self {
            dicing: 1,
            width,
            height,
            blocks: vec![BlockSeed {
                params: Params::new(params),
                chisq: f64::NAN,
                state: BlockState::Fitted,
                pixels: width * height,
            }],
        }
    }

    pub fn dicing(&self) -> usize {
        self.dicing
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn blocks(&self) -> &[BlockSeed] {
        &self.blocks
    }

    #[inline]
    pub fn block_index(&self, x: usize, y: usize) -> usize {
        let bx = x * self.dicing / self.width;
        let by = y * self.dicing / self.height;
        by * self.dicing + bx
    }

    #[inline]
    pub fn seed_for(&self, x: usize, y: usize) -> &Params {
        &self.blocks[self.block_index(x, y)].params
    }

    /// Blocks whose own fit failed and that borrowed a neighbour's seed.
    pub fn inherited_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.state == BlockState::Inherited)
            .count()
    }

    /// Number of block fits performed (non-empty blocks).
    pub fn block_fits(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.state != BlockState::Empty)
            .count()
    }
}

/// Data-driven starting point for a fit of `spec` to one trace.
pub fn heuristic_seed(spec: &ModelSpec, xs: &[f64], ys: &[f64]) -> Params {
    let bounds = spec.default_bounds();
    let mut p = match spec.kind {
        ModelKind::Rabi => rabi_seed(xs, ys),
        ModelKind::Hahn => {
            let (a, k) = exp_decay_seed(xs, ys);
            Params::new(&[a, k])
        }
        ModelKind::T1 => {
            let signal: Vec<f64> = ys.iter().map(|y| 1.0 - y).collect();
            let (a, k) = exp_decay_seed(xs, &signal);
            match spec.stretch {
                Stretch::Fixed(e) => {
                    let env: Vec<f64> = xs.iter().map(|x| (-(x * k).powf(e)).exp()).collect();
                    Params::new(&[scale_fit(&env, &signal).unwrap_or(a), k])
                }
                Stretch::Free => Params::new(&[a, k, 1.0]),
            }
        }
        ModelKind::Ramsey => ramsey_seed(spec, xs, ys),
        ModelKind::OdmrTriplet => odmr_seed(xs, ys),
    };
    for (i, v) in p.as_mut_slice().iter_mut().enumerate() {
        *v = bounds.clamp(i, *v);
    }
    p
}

fn span(xs: &[f64]) -> f64 {
    (xs[xs.len() - 1] - xs[0]).max(f64::MIN_POSITIVE)
}

/// Least-squares scale `a` minimizing `|y − a·g|²`.
fn scale_fit(g: &[f64], y: &[f64]) -> Option<f64> {
    let gg: f64 = g.iter().map(|v| v * v).sum();
    let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
    (gg > 0.0).then(|| gy / gg)
}

/// Log-linear regression on the positive part of a decaying signal.
fn exp_decay_seed(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let top = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let fallback_k = 1.0 / span(xs);
    if !(top > 0.0) {
        return (0.0, fallback_k);
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > 0.02 * top)
        .map(|(&x, &y)| (x, y.ln()))
        .unzip();
    let k = match linear_regression(&lx, &ly) {
        Some((_, slope)) if -slope > 0.0 => -slope,
        _ => fallback_k,
    };
    let env: Vec<f64> = xs.iter().map(|x| (-x * k).exp()).collect();
    let a = scale_fit(&env, ys).unwrap_or(top).max(0.0);
    (a, k)
}

/// Frequency with the largest discrete-spectrum power of the mean-removed
/// trace, refined by parabolic interpolation.
pub(crate) fn dominant_frequency(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    let total = span(xs);
    let dt = total / (n - 1) as f64;
    let m = mean(ys);
    let z: Vec<f64> = ys.iter().map(|y| y - m).collect();
    let f_lo = 0.5 / total;
    let f_hi = 0.5 / dt;
    let df = 1.0 / (8.0 * total);
    let steps = ((f_hi - f_lo) / df).floor() as usize + 1;
    let power = |f: f64| {
        let w = std::f64::consts::TAU * f;
        let (mut c, mut s) = (0.0, 0.0);
        for (&x, &v) in xs.iter().zip(&z) {
            let (sn, cs) = (w * x).sin_cos();
            c += v * cs;
            s += v * sn;
        }
        c * c + s * s
    };
    let spectrum: Vec<f64> = (0..steps).map(|i| power(f_lo + i as f64 * df)).collect();
    let (imax, &pmax) = spectrum
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(pmax > 0.0) {
        return None;
    }
    let mut f = f_lo + imax as f64 * df;
    if imax > 0 && imax + 1 < steps {
        let (a, b, c) = (spectrum[imax - 1], spectrum[imax], spectrum[imax + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            f += 0.5 * (a - c) / denom * df;
        }
    }
    Some(f)
}

fn rabi_seed(xs: &[f64], ys: &[f64]) -> Params {
    let k = 1.0 / span(xs);
    let f = dominant_frequency(xs, ys).unwrap_or(1.0 / span(xs));
    let g: Vec<f64> = xs
        .iter()
        .map(|x| -0.5 * (1.0 - (std::f64::consts::TAU * f * x).cos() * (-x * k).exp()))
        .collect();
    let centered: Vec<f64> = ys.iter().map(|y| y - 1.0).collect();
    let a = scale_fit(&g, &centered).unwrap_or(2.0 * (1.0 - mean(ys)));
    Params::new(&[a.max(1e-6), f, k])
}

fn ramsey_seed(spec: &ModelSpec, xs: &[f64], ys: &[f64]) -> Params {
    // Decay rate from the upper envelope of local maxima.
    let (mx, my): (Vec<f64>, Vec<f64>) = (1..ys.len().saturating_sub(1))
        .filter(|&i| ys[i] > ys[i - 1] && ys[i] >= ys[i + 1] && ys[i] > 0.0)
        .map(|i| (xs[i], ys[i].ln()))
        .unzip();
    let k = match linear_regression(&mx, &my) {
        Some((_, slope)) if -slope > 0.0 => -slope,
        _ => 1.0 / span(xs),
    };
    // Amplitudes are linear once κ is fixed.
    let mut basis = [0.0; 3];
    let mut ata = [0.0; 9];
    let mut aty = [0.0; 3];
    for (&x, &y) in xs.iter().zip(ys) {
        for (j, b) in basis.iter_mut().enumerate() {
            let mut unit = [0.0, 0.0, 0.0, k];
            unit[j] = 1.0;
            *b = spec.value(x, &unit);
        }
        for i in 0..3 {
            aty[i] += basis[i] * y;
            for j in 0..3 {
                ata[i * 3 + j] += basis[i] * basis[j];
            }
        }
    }
    let amps = if cholesky_solve(&mut ata, &mut aty, 3) {
        aty.map(|a| a.max(0.0))
    } else {
        [ys[0].max(0.0) / 3.0; 3]
    };
    Params::new(&[amps[0], amps[1], amps[2], k])
}

fn odmr_seed(xs: &[f64], ys: &[f64]) -> Params {
    let (imin, &ymin) = ys
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty trace");
    let mut center = xs[imin];
    if imin > 0 && imin + 1 < ys.len() {
        let (a, b, c) = (ys[imin - 1], ys[imin], ys[imin + 1]);
        let denom = a - 2.0 * b + c;
        if denom > 0.0 {
            let h = 0.5 * (xs[imin + 1] - xs[imin - 1]);
            center += 0.5 * (a - c) / denom * h;
        }
    }
    let depth = (1.0 - ymin).max(1e-6);
    let half = 1.0 - 0.5 * depth;
    let mut lo = imin;
    while lo > 0 && ys[lo] < half {
        lo -= 1;
    }
    let mut hi = imin;
    while hi + 1 < ys.len() && ys[hi] < half {
        hi += 1;
    }
    let step = span(xs) / (xs.len() - 1) as f64;
    let width = (xs[hi] - xs[lo]).max(2.0 * step);
    Params::new(&[depth.min(1.0), center, width])
}

fn jittered(spec: &ModelSpec, base: &Params, bounds: &Bounds, jitter: f64, stream: u64, restart: usize) -> Params {
    let mut p = *base;
    let n = p.len();
    for i in 0..n {
        let u = 2.0 * rng::uniform(stream, (restart * MAX_PARAMS + i) as u64) - 1.0;
        let v = p[i];
        let moved = if spec.kind == ModelKind::OdmrTriplet && i == 1 {
            // Location parameter: jitter on the scale of the linewidth.
            v + jitter * u * base[2]
        } else {
            v * (1.0 + jitter * u)
        };
        p.as_mut_slice()[i] = bounds.clamp(i, moved);
    }
    p
}

/// Multi-start fit: the heuristic seed followed by jittered restarts.
/// Returns the lowest-χ² converged outcome, if any.
pub fn multi_start_fit(
    spec: &ModelSpec,
    xs: &[f64],
    ys: &[f64],
    options: &FitOptions,
    stream: u64,
) -> Option<FitOutcome> {
    let bounds = options.bounds.unwrap_or_else(|| spec.default_bounds());
    let base = heuristic_seed(spec, xs, ys);
    let mut best: Option<FitOutcome> = None;
    for restart in 0..options.restarts.max(1) {
        let seed = if restart == 0 {
            base
        } else {
            jittered(spec, &base, &bounds, options.jitter, stream, restart)
        };
        let out = minimize(spec, xs, ys, &seed, &bounds, options, None);
        if out.converged() && best.map_or(true, |b| out.chisq < b.chisq) {
            best = Some(out);
        }
    }
    best
}

pub(crate) fn check_cube_for_model(cube: &DataCube, spec: &ModelSpec) -> Result<()> {
    spec.validate()?;
    if cube.quantity() != spec.quantity() {
        return Err(Error::QuantityMismatch {
            expected: spec.quantity().name(),
            found: cube.quantity().name(),
        });
    }
    spec.check_sweep(cube.sweep())?;
    if cube.points() < spec.n_params() + 1 {
        return Err(Error::SeriesTooShort {
            points: cube.points(),
            params: spec.n_params(),
        });
    }
    Ok(())
}

/// Fits the mean trace of each of the N×N blocks and returns per-block seeds.
pub fn seed_by_dicing(
    cube: &DataCube,
    spec: &ModelSpec,
    dicing: usize,
    options: &FitOptions,
) -> Result<SeedGrid> {
    if !(1..=MAX_DICING).contains(&dicing) {
        return Err(Error::InvalidParameter(format!(
            "dicing {dicing} outside 1..={MAX_DICING}"
        )));
    }
    check_cube_for_model(cube, spec)?;
    let (w, h, np) = (cube.width(), cube.height(), cube.points());
    let mut grid = SeedGrid {
        dicing,
        width: w,
        height: h,
        blocks: Vec::new(),
    };
    let nblocks = dicing * dicing;

    let mut counts = vec![0usize; nblocks];
    for y in 0..h {
        for x in 0..w {
            counts[grid.block_index(x, y)] += 1;
        }
    }
    let mut sums = vec![0.0; nblocks * np];
    for p in 0..np {
        let frame = cube.frame(p);
        for y in 0..h {
            for x in 0..w {
                sums[grid.block_index(x, y) * np + p] += frame[y * w + x];
            }
        }
    }
    let traces: Vec<Vec<f64>> = (0..nblocks)
        .map(|b| {
            let c = counts[b].max(1) as f64;
            sums[b * np..(b + 1) * np].iter().map(|s| s / c).collect()
        })
        .collect();

    let xs = cube.sweep().values();
    let fits: Vec<Option<FitOutcome>> = thread_pool(options.workers).install(|| {
        (0..nblocks)
            .into_par_iter()
            .map(|b| {
                if counts[b] == 0 {
                    return None;
                }
                let stream = rng::substream(options.rng_seed, b as u64);
                multi_start_fit(spec, xs, &traces[b], options, stream)
            })
            .collect()
    });

    let fitted: Vec<usize> = (0..nblocks).filter(|&b| fits[b].is_some()).collect();
    if fitted.is_empty() {
        return Err(Error::SeedingFailed(format!(
            "all {} block fits failed for the {} model",
            counts.iter().filter(|c| **c > 0).count(),
            spec.kind.name()
        )));
    }

    for b in 0..nblocks {
        let seed = match fits[b] {
            Some(out) => BlockSeed {
                params: out.params,
                chisq: out.chisq,
                state: BlockState::Fitted,
                pixels: counts[b],
            },
            None => {
                let (bx, by) = ((b % dicing) as i64, (b / dicing) as i64);
                let nearest = *fitted
                    .iter()
                    .min_by_key(|&&f| {
                        let (fx, fy) = ((f % dicing) as i64, (f / dicing) as i64);
                        ((fx - bx).pow(2) + (fy - by).pow(2), f)
                    })
                    .unwrap();
                BlockSeed {
                    params: fits[nearest].unwrap().params,
                    chisq: f64::NAN,
                    state: if counts[b] == 0 {
                        BlockState::Empty
                    } else {
                        BlockState::Inherited
                    },
                    pixels: counts[b],
                }
            }
        };
        grid.blocks.push(seed);
    }
    Ok(grid)
}
