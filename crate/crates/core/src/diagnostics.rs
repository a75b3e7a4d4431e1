//! Fit-quality maps and population statistics over parameter maps.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datacube::{DataCube, MapImage, MapQuantity};
use crate::error::{Error, Result};
use crate::fitengine::{minimize, CurveModel, FitOptions, FitResultCube, FitStatus};
use crate::models::Bounds;
use crate::util::{median_in_place, pairwise_sum};

/// Minimum unmasked pixels for the Gaussian fit.
pub const MIN_GAUSSIAN_PIXELS: usize = 100;

/// χ² per pixel; failed fits are masked.
pub fn chisq_map(results: &FitResultCube) -> Result<MapImage> {
    MapImage::with_mask(
        results.width(),
        results.height(),
        MapQuantity::ChiSquared,
        results.chisq_plane().to_vec(),
        results.converged_mask(),
    )
}

/// Residual sum of squares recomputed from the cube and the fitted
/// parameters, independently of the solver. Pixels without parameters are
/// NaN.
pub fn recompute_chisq(cube: &DataCube, results: &FitResultCube) -> Result<Vec<f64>> {
    if cube.width() != results.width()
        || cube.height() != results.height()
        || cube.points() != results.points()
    {
        return Err(Error::DimensionMismatch("cube does not match fit results".into()));
    }
    let spec = *results.model();
    let xs = cube.sweep().values();
    let mut out = Vec::with_capacity(cube.width() * cube.height());
    for y in 0..cube.height() {
        for x in 0..cube.width() {
            let params = results.outcome(x, y).params;
            if params.iter().any(|v| !v.is_finite()) {
                out.push(f64::NAN);
                continue;
            }
            let r2: Vec<f64> = xs
                .iter()
                .enumerate()
                .map(|(p, &t)| {
                    let r = cube.value(p, x, y) - spec.value(t, &params);
                    r * r
                })
                .collect();
            out.push(pairwise_sum(&r2));
        }
    }
    Ok(out)
}

/// Type-7 percentiles (linear interpolation between order statistics) of
/// the unmasked pixels. Percentiles are in `[0, 100]`.
pub fn percentile_report(map: &MapImage, percentiles: &[f64]) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = map.valid_values().collect();
    if v.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "percentiles need at least 2 unmasked pixels, map has {}",
            v.len()
        )));
    }
    v.sort_by(f64::total_cmp);
    percentiles
        .iter()
        .map(|&q| {
            if !(0.0..=100.0).contains(&q) {
                return Err(Error::InvalidParameter(format!("percentile {q} outside [0, 100]")));
            }
            Ok(type7(&v, q / 100.0))
        })
        .collect()
}

fn type7(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `a·exp(−(x − μ)² / (2σ²))`.
struct Gaussian;

impl CurveModel for Gaussian {
    fn n_params(&self) -> usize {
        3
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        let z = (x - p[1]) / p[2];
        p[0] * (-0.5 * z * z).exp()
    }

    fn value_and_grad(&self, x: f64, p: &[f64], grad: &mut [f64]) -> f64 {
        let z = (x - p[1]) / p[2];
        let e = (-0.5 * z * z).exp();
        let v = p[0] * e;
        grad[0] = e;
        grad[1] = v * z / p[2];
        grad[2] = v * z * z / p[2];
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub mean: f64,
    pub sigma: f64,
    pub status: FitStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramStats {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// `None` when the map is constant or too small to fit.
    pub gaussian: Option<GaussianFit>,
    pub median: f64,
    /// `(p, fraction of pixels with |v − median| ≤ p·|median|)`.
    pub fraction_within: Vec<(f64, f64)>,
    pub count: usize,
}

impl HistogramStats {
    /// Whether the Gaussian fit converged to a positive width.
    pub fn gaussian_ok(&self) -> bool {
        self.gaussian
            .is_some_and(|g| g.status.is_converged() && g.sigma > 0.0)
    }
}

/// Freedman–Diaconis bin count, capped to `[1, 1000]`.
pub fn freedman_diaconis_bins(sorted: &[f64]) -> usize {
    let n = sorted.len();
    let span = sorted[n - 1] - sorted[0];
    let iqr = type7(sorted, 0.75) - type7(sorted, 0.25);
    if span <= 0.0 {
        return 1;
    }
    if iqr <= 0.0 {
        return ((n as f64).sqrt().ceil() as usize).clamp(1, 1000);
    }
    let width = 2.0 * iqr / (n as f64).cbrt();
    ((span / width).ceil() as usize).clamp(1, 1000)
}

/// Histogram, Gaussian fit, median and fraction-within table over the
/// unmasked pixels. `bins = None` uses the Freedman–Diaconis rule.
pub fn histogram_stats(map: &MapImage, bins: Option<usize>, p_list: &[f64]) -> Result<HistogramStats> {
    let mut v: Vec<f64> = map.valid_values().collect();
    if v.is_empty() {
        return Err(Error::InvalidParameter("map has no unmasked pixels".into()));
    }
    if let Some(p) = p_list.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::InvalidParameter(format!("fraction threshold {p} is negative")));
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let nbins = match bins {
        Some(0) => return Err(Error::InvalidParameter("bin count must be positive".into())),
        Some(b) => b,
        None => freedman_diaconis_bins(&v),
    };
    let (lo, hi) = (v[0], v[n - 1]);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let width = (hi - lo) / nbins as f64;
    let edges: Vec<f64> = (0..=nbins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0u64; nbins];
    for &x in &v {
        let k = (((x - lo) / width) as usize).min(nbins - 1);
        counts[k] += 1;
    }

    let median = median_in_place(&mut v.clone());
    let fraction_within = p_list
        .iter()
        .map(|&p| {
            let tol = p * median.abs();
            let inside = v.iter().filter(|x| (*x - median).abs() <= tol).count();
            (p, inside as f64 / n as f64)
        })
        .collect();

    let gaussian = if n >= MIN_GAUSSIAN_PIXELS && v[n - 1] > v[0] && nbins >= 3 {
        Some(fit_gaussian(&edges, &counts, &v))
    } else {
        None
    };
    Ok(HistogramStats {
        edges,
        counts,
        gaussian,
        median,
        fraction_within,
        count: n,
    })
}

fn fit_gaussian(edges: &[f64], counts: &[u64], values: &[f64]) -> GaussianFit {
    let centers: Vec<f64> = edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    let dev: Vec<f64> = values.iter().map(|x| (x - mean) * (x - mean)).collect();
    let sd = (pairwise_sum(&dev) / (n - 1.0)).sqrt();
    let peak = ys.iter().copied().fold(0.0, f64::max);
    let mut bounds = Bounds::unbounded();
    bounds.lower[0] = Some(0.0);
    bounds.lower[2] = Some(1e-12 * sd.max(mean.abs()).max(f64::MIN_POSITIVE));
    let out = minimize(
        &Gaussian,
        &centers,
        &ys,
        &[peak, mean, sd],
        &bounds,
        &FitOptions::default(),
        None,
    );
    GaussianFit {
        amplitude: out.params[0],
        mean: out.params[1],
        sigma: out.params[2],
        status: out.status,
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Histogram and fraction-within tables as CSV.
pub fn histogram_csv(stats: &HistogramStats) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bin_lower", "bin_upper", "count"])?;
    for (e, c) in stats.edges.windows(2).zip(&stats.counts) {
        w.write_record([e[0].to_string(), e[1].to_string(), c.to_string()])?;
    }
    into_bytes(w)
}

pub fn summary_csv(stats: &HistogramStats) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["statistic", "value"])?;
    w.write_record(["count".to_string(), stats.count.to_string()])?;
    w.write_record(["median".to_string(), stats.median.to_string()])?;
    if let Some(g) = stats.gaussian {
        w.write_record(["gaussian_amplitude".to_string(), g.amplitude.to_string()])?;
        w.write_record(["gaussian_mean".to_string(), g.mean.to_string()])?;
        w.write_record(["gaussian_sigma".to_string(), g.sigma.to_string()])?;
        w.write_record(["gaussian_status".to_string(), g.status.name().to_string()])?;
    } else {
        w.write_record(["gaussian_status", "not_fitted"])?;
    }
    for (p, f) in &stats.fraction_within {
        w.write_record([format!("fraction_within_{p}"), f.to_string()])?;
    }
    into_bytes(w)
}

pub fn percentile_csv(percentiles: &[f64], values: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["percentile", "value"])?;
    for (p, v) in percentiles.iter().zip(values) {
        w.write_record([p.to_string(), v.to_string()])?;
    }
    into_bytes(w)
}

fn into_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn write_csv(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    atomic_write(path.as_ref(), bytes)
}

/// 8-bit binary PGM, linearly scaled from the unmasked min to max. Masked
/// pixels are black.
pub fn pgm_bytes(map: &MapImage) -> Vec<u8> {
    let (lo, hi) = map
        .valid_values()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    for (v, ok) in map.data().iter().zip(map.valid()) {
        out.push(if *ok {
            (1.0 + 254.0 * (v - lo) / span).round() as u8
        } else {
            0
        });
    }
    out
}

pub fn write_pgm(path: impl AsRef<Path>, map: &MapImage) -> Result<()> {
    atomic_write(path.as_ref(), &pgm_bytes(map))
}
