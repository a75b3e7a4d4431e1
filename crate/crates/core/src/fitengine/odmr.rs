//! Resonance-group detection on a mean ODMR spectrum and the per-group
//! triplet fits.

use serde::{Deserialize, Serialize};

use super::batch::{fit_cube, FitResultCube};
use super::lm::minimize;
use super::seed::seed_by_dicing;
use super::{FitOptions, FitStatus};
use crate::datacube::{DataCube, Quantity, SweepAxis, SweepKind};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::util::median_in_place as median;

/// One resonance group (a hyperfine triplet) and the frequency window used
/// to fit it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdmrWindow {
    pub center_mhz: f64,
    pub linewidth_mhz: f64,
    pub amplitude: f64,
    pub lower_mhz: f64,
    pub upper_mhz: f64,
    /// Set when this window overlaps a neighbouring one.
    pub overlaps: bool,
}

/// Locates resonance groups in a mean contrast spectrum.
///
/// Dips are local maxima of `1 − contrast` above both a noise floor
/// (5× the robust noise of point-to-point differences) and 10 % of the
/// deepest dip. Dips closer than 1.5 hyperfine spacings join one group; each
/// group is then refined by a triplet fit on its own window of half-width
/// `max(3Γ, 3δ_hf)`.
///
/// Fails with [`Error::PeakCount`] unless exactly `expected_groups` groups are
/// found; the error carries the groups that were found.
pub fn find_odmr_peaks(
    sweep: &SweepAxis,
    spectrum: &[f64],
    expected_groups: usize,
    hyperfine_mhz: f64,
    options: &FitOptions,
) -> Result<Vec<OdmrWindow>> {
    if sweep.kind() != SweepKind::FrequencyMhz {
        return Err(Error::UnitMismatch {
            expected: SweepKind::FrequencyMhz.name(),
            found: sweep.kind().name(),
        });
    }
    if spectrum.len() != sweep.len() {
        return Err(Error::DimensionMismatch(
            "spectrum and sweep lengths differ".into(),
        ));
    }
    if spectrum.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let spec = ModelSpec::odmr(hyperfine_mhz);
    spec.validate()?;
    let xs = sweep.values();
    let n = xs.len();
    let step = (xs[n - 1] - xs[0]) / (n - 1) as f64;

    let mut baseline: Vec<f64> = spectrum.to_vec();
    let base = median(&mut baseline);
    let dip: Vec<f64> = spectrum.iter().map(|y| base - y).collect();
    let mut diffs: Vec<f64> = dip.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let noise = median(&mut diffs) / (0.6745 * std::f64::consts::SQRT_2);
    let deepest = dip.iter().copied().fold(0.0, f64::max);
    let threshold = (5.0 * noise).max(0.1 * deepest);

    let minima: Vec<usize> = (1..n - 1)
        .filter(|&i| dip[i] > threshold && dip[i] >= dip[i - 1] && dip[i] > dip[i + 1])
        .collect();

    let join = 1.5 * hyperfine_mhz.max(step);
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &i in &minima {
        match clusters.last_mut() {
            Some(c) if xs[i] - xs[*c.last().unwrap()] <= join => c.push(i),
            _ => clusters.push(vec![i]),
        }
    }

    let bounds = spec.default_bounds();
    let mut windows: Vec<OdmrWindow> = clusters
        .iter()
        .map(|c| {
            let first = xs[c[0]];
            let last = xs[*c.last().unwrap()];
            let deepest_idx = *c.iter().max_by(|a, b| dip[**a].total_cmp(&dip[**b])).unwrap();
            let spread = last - first;
            let center0 = if c.len() >= 3 && (spread - 2.0 * hyperfine_mhz).abs() < 0.5 * hyperfine_mhz
            {
                0.5 * (first + last)
            } else {
                xs[deepest_idx]
            };
            // Half-depth width around the deepest dip.
            let half = 0.5 * dip[deepest_idx];
            let (mut lo, mut hi) = (deepest_idx, deepest_idx);
            while lo > 0 && dip[lo] > half {
                lo -= 1;
            }
            while hi + 1 < n && dip[hi] > half {
                hi += 1;
            }
            let gamma0 = (xs[hi] - xs[lo]).max(2.0 * step);
            let amp0 = (dip[deepest_idx] / 1.1).clamp(1e-6, 1.0);
            let mut window = make_window(center0, gamma0, amp0, hyperfine_mhz);

            let idx: Vec<usize> = (0..n)
                .filter(|&i| xs[i] >= window.lower_mhz && xs[i] <= window.upper_mhz)
                .collect();
            if idx.len() > spec.n_params() {
                let wx: Vec<f64> = idx.iter().map(|&i| xs[i]).collect();
                // Fit against the baseline-normalized spectrum.
                let wy: Vec<f64> = idx.iter().map(|&i| 1.0 - dip[i]).collect();
                let seed = [
                    bounds.clamp(0, amp0),
                    center0,
                    bounds.clamp(2, gamma0),
                ];
                let out = minimize(&spec, &wx, &wy, &seed, &bounds, options, None);
                if out.converged()
                    && out.params[1] >= window.lower_mhz
                    && out.params[1] <= window.upper_mhz
                {
                    window = make_window(out.params[1], out.params[2], out.params[0], hyperfine_mhz);
                }
            }
            window
        })
        .collect();

    for k in 1..windows.len() {
        if windows[k - 1].upper_mhz > windows[k].lower_mhz {
            windows[k - 1].overlaps = true;
            windows[k].overlaps = true;
        }
    }
    if windows.len() != expected_groups {
        return Err(Error::PeakCount {
            expected: expected_groups,
            found: windows,
        });
    }
    Ok(windows)
}

fn make_window(center: f64, gamma: f64, amplitude: f64, hyperfine: f64) -> OdmrWindow {
    let half = (3.0 * gamma).max(3.0 * hyperfine);
    OdmrWindow {
        center_mhz: center,
        linewidth_mhz: gamma,
        amplitude,
        lower_mhz: center - half,
        upper_mhz: center + half,
        overlaps: false,
    }
}

/// Fits the hyperfine-triplet model separately inside each window, one
/// result cube per window, in window order.
///
/// A group whose seeding fails yields a result with every pixel marked
/// [`FitStatus::SeedFailed`]; converged pixels whose centre leaves the window
/// are marked [`FitStatus::OutsideWindow`]. Neither aborts the other groups.
pub fn fit_odmr_cube(
    cube: &DataCube,
    windows: &[OdmrWindow],
    hyperfine_mhz: f64,
    dicing: usize,
    options: &FitOptions,
) -> Result<Vec<FitResultCube>> {
    let spec = ModelSpec::odmr(hyperfine_mhz);
    spec.validate()?;
    if cube.quantity() != Quantity::Contrast {
        return Err(Error::QuantityMismatch {
            expected: Quantity::Contrast.name(),
            found: cube.quantity().name(),
        });
    }
    spec.check_sweep(cube.sweep())?;
    let xs = cube.sweep().values();
    let (w, h) = (cube.width(), cube.height());

    windows
        .iter()
        .map(|win| {
            let idx: Vec<usize> = (0..xs.len())
                .filter(|&i| xs[i] >= win.lower_mhz && xs[i] <= win.upper_mhz)
                .collect();
            if idx.len() < spec.n_params() + 1 || idx.len() < SweepAxis::MIN_POINTS {
                return Ok(FitResultCube::all_failed(
                    w,
                    h,
                    idx.len(),
                    spec,
                    FitStatus::SeedFailed,
                ));
            }
            let sub = cube.select_points(&idx)?;
            let seeds = match seed_by_dicing(&sub, &spec, dicing, options) {
                Ok(s) => s,
                Err(Error::SeedingFailed(_)) => {
                    return Ok(FitResultCube::all_failed(
                        w,
                        h,
                        idx.len(),
                        spec,
                        FitStatus::SeedFailed,
                    ))
                }
                Err(e) => return Err(e),
            };
            let mut result = fit_cube(&sub, &spec, &seeds, options)?;
            let (lo, hi) = (xs[idx[0]], xs[idx[idx.len() - 1]]);
            let centers = result.param_plane(1).to_vec();
            for (status, c) in result.status_mut().iter_mut().zip(centers) {
                if status.is_converged() && !(c >= lo && c <= hi) {
                    *status = FitStatus::OutsideWindow;
                }
            }
            Ok(result)
        })
        .collect()
}
