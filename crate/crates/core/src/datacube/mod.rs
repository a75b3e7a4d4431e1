//! Acquisition cubes, reduced cubes and 2D result maps.
//!
//! All rasters use frame-major storage: a cube value lives at
//! `data[(point * height + y) * width + x]`. Raw stacks interleave their two
//! channels per frame, `data[((point * 2 + channel) * height + y) * width + x]`.

mod qdc;

pub use qdc::{load_qdc, read_qdc, save_qdc, write_qdc, QdcObject};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical meaning of the sweep (third) axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    FrequencyMhz,
    TimeUs,
    TimeMs,
    AngleDeg,
}

impl SweepKind {
    pub fn code(self) -> u8 {
        match self {
            SweepKind::FrequencyMhz => 0,
            SweepKind::TimeUs => 1,
            SweepKind::AngleDeg => 2,
            SweepKind::TimeMs => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SweepKind::FrequencyMhz,
            1 => SweepKind::TimeUs,
            2 => SweepKind::AngleDeg,
            3 => SweepKind::TimeMs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::FrequencyMhz => "frequency_MHz",
            SweepKind::TimeUs => "time_us",
            SweepKind::TimeMs => "time_ms",
            SweepKind::AngleDeg => "angle_deg",
        }
    }
}

/// Ordered sweep values with their unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    kind: SweepKind,
    values: Vec<f64>,
}

impl SweepAxis {
    pub const MIN_POINTS: usize = 4;

    pub fn new(kind: SweepKind, values: Vec<f64>) -> Result<Self> {
        if values.len() < Self::MIN_POINTS {
            return Err(Error::InvalidSweep(format!(
                "{} points, need at least {}",
                values.len(),
                Self::MIN_POINTS
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSweep(format!("non-finite value at index {i}")));
        }
        if let Some(i) = values.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotonicSweep { index: i + 1 });
        }
        Ok(Self { kind, values })
    }

    /// `points` evenly spaced values from `start` to `stop` inclusive.
    pub fn linspace(kind: SweepKind, start: f64, stop: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidSweep(format!("{points} points")));
        }
        let step = (stop - start) / (points - 1) as f64;
        let values = (0..points).map(|i| start + step * i as f64).collect();
        Self::new(kind, values)
    }

    pub fn kind(&self) -> SweepKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sub-axis made of the given (increasing) point indices.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.kind, indices.iter().map(|&i| self.values[i]).collect())
    }
}

/// Channel pairing of a raw two-channel acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channels {
    /// Channel 0 is MW on, channel 1 is the MW-off reference.
    SignalReference,
    /// Channel 0 ends with the + phase π/2 pulse, channel 1 with the − phase.
    PlusMinus,
}

impl Channels {
    pub fn code(self) -> u8 {
        match self {
            Channels::SignalReference => 0,
            Channels::PlusMinus => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Channels::SignalReference),
            1 => Some(Channels::PlusMinus),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channels::SignalReference => "signal_reference",
            Channels::PlusMinus => "plus_minus",
        }
    }
}

/// What a reduced cube holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Contrast,
    Visibility,
    Intensity,
}

impl Quantity {
    pub fn code(self) -> u8 {
        match self {
            Quantity::Contrast => 0,
            Quantity::Visibility => 1,
            Quantity::Intensity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Quantity::Contrast,
            1 => Quantity::Visibility,
            2 => Quantity::Intensity,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Contrast => "contrast",
            Quantity::Visibility => "visibility",
            Quantity::Intensity => "intensity",
        }
    }
}

fn check_window(
    width: usize,
    height: usize,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
) -> Result<()> {
    let fits = w > 0
        && h > 0
        && x0.checked_add(w).is_some_and(|e| e <= width)
        && y0.checked_add(h).is_some_and(|e| e <= height);
    if fits {
        Ok(())
    } else {
        Err(Error::WindowOutOfBounds {
            x0,
            y0,
            w,
            h,
            width,
            height,
        })
    }
}

/// Two-channel raw photoluminescence frames, as stored by the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStack {
    width: usize,
    height: usize,
    sweep: SweepAxis,
    channels: Channels,
    data: Vec<f32>,
}

impl RawStack {
    pub fn new(
        width: usize,
        height: usize,
        sweep: SweepAxis,
        channels: Channels,
        data: Vec<f32>,
    ) -> Result<Self> {
        let expected = sweep.len() * 2 * width * height;
        if width == 0 || height == 0 || data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height}x{}x2 stack needs {expected} values, got {}",
                sweep.len(),
                data.len()
            )));
        }
        for (i, v) in data.iter().enumerate() {
            if !(*v >= 0.0) || !v.is_finite() {
                let plane = width * height;
                return Err(Error::NegativeIntensity {
                    point: i / (2 * plane),
                    y: (i % plane) / width,
                    x: i % width,
                });
            }
        }
        Ok(Self {
            width,
            height,
            sweep,
            channels,
            data,
        })
    }

    /// Builds a stack from two per-channel cubes laid out `[point][y][x]`.
    pub fn from_channels(
        width: usize,
        height: usize,
        sweep: SweepAxis,
        channels: Channels,
        first: &[f32],
        second: &[f32],
    ) -> Result<Self> {
        let plane = width * height;
        if first.len() != second.len() || first.len() != plane * sweep.len() {
            return Err(Error::DimensionMismatch(
                "channel planes do not match stack dimensions".into(),
            ));
        }
        let mut data = Vec::with_capacity(first.len() * 2);
        for (a, b) in first.chunks_exact(plane).zip(second.chunks_exact(plane)) {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Self::new(width, height, sweep, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn sweep(&self) -> &SweepAxis {
        &self.sweep
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// One channel of one frame, `[y][x]`.
    pub fn frame(&self, point: usize, channel: usize) -> &[f32] {
        let plane = self.width * self.height;
        let start = (point * 2 + channel) * plane;
        &self.data[start..start + plane]
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<RawStack> {
        check_window(self.width, self.height, x0, y0, w, h)?;
        let mut data = Vec::with_capacity(self.sweep.len() * 2 * w * h);
        for p in 0..self.sweep.len() {
            for c in 0..2 {
                let frame = self.frame(p, c);
                for y in y0..y0 + h {
                    let row = y * self.width;
                    data.extend_from_slice(&frame[row + x0..row + x0 + w]);
                }
            }
        }
        Ok(RawStack {
            width: w,
            height: h,
            sweep: self.sweep.clone(),
            channels: self.channels,
            data,
        })
    }
}

/// Reduced (x, y, sweep-point) cube of contrast, visibility or intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCube {
    width: usize,
    height: usize,
    sweep: SweepAxis,
    quantity: Quantity,
    data: Vec<f64>,
}

impl DataCube {
    pub fn new(
        width: usize,
        height: usize,
        sweep: SweepAxis,
        quantity: Quantity,
        data: Vec<f64>,
    ) -> Result<Self> {
        let expected = sweep.len() * width * height;
        if width == 0 || height == 0 || data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height}x{} cube needs {expected} values, got {}",
                sweep.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            width,
            height,
            sweep,
            quantity,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn points(&self) -> usize {
        self.sweep.len()
    }

    pub fn sweep(&self) -> &SweepAxis {
        &self.sweep
    }

    pub fn quantity(&self) -> Quantity {
        self.quantity
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, point: usize) -> &[f64] {
        let plane = self.width * self.height;
        &self.data[point * plane..(point + 1) * plane]
    }

    #[inline]
    pub fn value(&self, point: usize, x: usize, y: usize) -> f64 {
        self.data[(point * self.height + y) * self.width + x]
    }

    /// The trace of pixel `(x, y)` along the sweep.
    pub fn pixel_series(&self, x: usize, y: usize) -> Result<(&SweepAxis, Vec<f64>)> {
        if x >= self.width || y >= self.height {
            return Err(Error::IndexOutOfRange {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        let series = (0..self.points()).map(|p| self.value(p, x, y)).collect();
        Ok((&self.sweep, series))
    }

    /// Copies the traces of row `y` into `out`, laid out `[x][point]`.
    pub(crate) fn gather_row(&self, y: usize, out: &mut [f64]) {
        let n = self.points();
        debug_assert_eq!(out.len(), n * self.width);
        for p in 0..n {
            let row = &self.frame(p)[y * self.width..(y + 1) * self.width];
            for (x, v) in row.iter().enumerate() {
                out[x * n + p] = *v;
            }
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<DataCube> {
        check_window(self.width, self.height, x0, y0, w, h)?;
        let mut data = Vec::with_capacity(self.points() * w * h);
        for p in 0..self.points() {
            let frame = self.frame(p);
            for y in y0..y0 + h {
                let row = y * self.width;
                data.extend_from_slice(&frame[row + x0..row + x0 + w]);
            }
        }
        Ok(DataCube {
            width: w,
            height: h,
            sweep: self.sweep.clone(),
            quantity: self.quantity,
            data,
        })
    }

    /// Sub-cube holding only the given sweep points.
    pub fn select_points(&self, indices: &[usize]) -> Result<DataCube> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.points()) {
            return Err(Error::InvalidSweep(format!("point index {bad} out of range")));
        }
        let sweep = self.sweep.select(indices)?;
        let mut data = Vec::with_capacity(indices.len() * self.width * self.height);
        for &p in indices {
            data.extend_from_slice(self.frame(p));
        }
        Ok(DataCube {
            width: self.width,
            height: self.height,
            sweep,
            quantity: self.quantity,
            data,
        })
    }

    /// Per-point mean over every pixel, summed in a fixed order.
    pub fn mean_trace(&self) -> Vec<f64> {
        let plane = (self.width * self.height) as f64;
        (0..self.points())
            .map(|p| crate::util::pairwise_sum(self.frame(p)) / plane)
            .collect()
    }
}

/// Ratio of MW-on to MW-off photoluminescence, per frame and pixel.
pub fn contrast_reduce(stack: &RawStack) -> Result<DataCube> {
    if stack.channels != Channels::SignalReference {
        return Err(Error::ChannelMismatch {
            expected: Channels::SignalReference.name(),
            found: stack.channels.name(),
        });
    }
    let plane = stack.width * stack.height;
    let mut data = Vec::with_capacity(plane * stack.sweep.len());
    for p in 0..stack.sweep.len() {
        let on = stack.frame(p, 0);
        let off = stack.frame(p, 1);
        for (i, (&s, &r)) in on.iter().zip(off).enumerate() {
            if !(r > 0.0) {
                return Err(Error::NonPositiveReference {
                    point: p,
                    y: i / stack.width,
                    x: i % stack.width,
                });
            }
            data.push(f64::from(s) / f64::from(r));
        }
    }
    DataCube::new(
        stack.width,
        stack.height,
        stack.sweep.clone(),
        Quantity::Contrast,
        data,
    )
}

/// Normalized difference of the two opposite-phase readouts.
pub fn visibility_reduce(stack: &RawStack) -> Result<DataCube> {
    if stack.channels != Channels::PlusMinus {
        return Err(Error::ChannelMismatch {
            expected: Channels::PlusMinus.name(),
            found: stack.channels.name(),
        });
    }
    let plane = stack.width * stack.height;
    let mut data = Vec::with_capacity(plane * stack.sweep.len());
    for p in 0..stack.sweep.len() {
        let plus = stack.frame(p, 0);
        let minus = stack.frame(p, 1);
        for (i, (&a, &b)) in plus.iter().zip(minus).enumerate() {
            let (a, b) = (f64::from(a), f64::from(b));
            let sum = a + b;
            if !(sum > 0.0) {
                return Err(Error::ZeroSum {
                    point: p,
                    y: i / stack.width,
                    x: i % stack.width,
                });
            }
            data.push((a - b) / sum);
        }
    }
    DataCube::new(
        stack.width,
        stack.height,
        stack.sweep.clone(),
        Quantity::Visibility,
        data,
    )
}

/// Physical quantity of a 2D map; fixes its label and unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapQuantity {
    Generic,
    ChiSquared,
    FitStatus,
    Amplitude,
    FrequencyMhz,
    LinewidthMhz,
    RatePerUs,
    RatePerMs,
    StretchExponent,
    LineshiftMhz,
    StressGpa,
    AngleDeg,
    SinRetardance,
    Intensity,
    StressPa,
    Iterations,
}

impl MapQuantity {
    const ALL: [MapQuantity; 16] = [
        MapQuantity::Generic,
        MapQuantity::ChiSquared,
        MapQuantity::FitStatus,
        MapQuantity::Amplitude,
        MapQuantity::FrequencyMhz,
        MapQuantity::LinewidthMhz,
        MapQuantity::RatePerUs,
        MapQuantity::RatePerMs,
        MapQuantity::StretchExponent,
        MapQuantity::LineshiftMhz,
        MapQuantity::StressGpa,
        MapQuantity::AngleDeg,
        MapQuantity::SinRetardance,
        MapQuantity::Intensity,
        MapQuantity::StressPa,
        MapQuantity::Iterations,
    ];

    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|q| *q == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            MapQuantity::Generic => "value",
            MapQuantity::ChiSquared => "sum of squared residuals",
            MapQuantity::FitStatus => "fit status",
            MapQuantity::Amplitude => "amplitude",
            MapQuantity::FrequencyMhz => "frequency",
            MapQuantity::LinewidthMhz => "linewidth",
            MapQuantity::RatePerUs | MapQuantity::RatePerMs => "decay rate",
            MapQuantity::StretchExponent => "stretch exponent",
            MapQuantity::LineshiftMhz => "lineshift",
            MapQuantity::StressGpa | MapQuantity::StressPa => "stress",
            MapQuantity::AngleDeg => "angle",
            MapQuantity::SinRetardance => "sin retardance",
            MapQuantity::Intensity => "intensity",
            MapQuantity::Iterations => "iterations",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            MapQuantity::FrequencyMhz | MapQuantity::LinewidthMhz | MapQuantity::LineshiftMhz => {
                "MHz"
            }
            MapQuantity::RatePerUs => "1/us",
            MapQuantity::RatePerMs => "1/ms",
            MapQuantity::StressGpa => "GPa",
            MapQuantity::StressPa => "Pa",
            MapQuantity::AngleDeg => "deg",
            _ => "",
        }
    }
}

/// A 2D per-pixel map with an explicit validity mask.
///
/// Invalid pixels always hold NaN; valid pixels are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct MapImage {
    width: usize,
    height: usize,
    quantity: MapQuantity,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl MapImage {
    /// Builds a map; non-finite values are treated as masked.
    pub fn new(width: usize, height: usize, quantity: MapQuantity, data: Vec<f64>) -> Result<Self> {
        let valid = data.iter().map(|v| v.is_finite()).collect();
        Self::with_mask(width, height, quantity, data, valid)
    }

    pub fn with_mask(
        width: usize,
        height: usize,
        quantity: MapQuantity,
        mut data: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height || valid.len() != data.len()
        {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} map with {} values and {} mask flags",
                data.len(),
                valid.len()
            )));
        }
        for (i, (v, ok)) in data.iter_mut().zip(&valid).enumerate() {
            if *ok {
                if !v.is_finite() {
                    return Err(Error::OutOfDomain(format!(
                        "unmasked non-finite value at pixel {i}"
                    )));
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(Self {
            width,
            height,
            quantity,
            data,
            valid,
        })
    }

    pub fn filled(width: usize, height: usize, quantity: MapQuantity, value: f64) -> Result<Self> {
        Self::new(width, height, quantity, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn quantity(&self) -> MapQuantity {
        self.quantity
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.data[i])
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.data
            .iter()
            .zip(&self.valid)
            .filter_map(|(v, ok)| ok.then_some(*v))
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<MapImage> {
        check_window(self.width, self.height, x0, y0, w, h)?;
        let mut data = Vec::with_capacity(w * h);
        let mut valid = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
            valid.extend_from_slice(&self.valid[row + x0..row + x0 + w]);
        }
        Self::with_mask(w, h, self.quantity, data, valid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(n: usize) -> SweepAxis {
        SweepAxis::linspace(SweepKind::TimeUs, 0.0, 1.0, n).unwrap()
    }

    fn stack(channels: Channels, first: Vec<f32>, second: Vec<f32>, w: usize, h: usize) -> RawStack {
        let n = first.len() / (w * h);
        RawStack::from_channels(w, h, axis(n), channels, &first, &second).unwrap()
    }

    #[test]
    fn sweep_rejects_short_and_non_monotonic() {
        assert!(matches!(
            SweepAxis::new(SweepKind::TimeUs, vec![0.0, 1.0, 2.0]),
            Err(Error::InvalidSweep(_))
        ));
        assert!(matches!(
            SweepAxis::new(SweepKind::TimeUs, vec![0.0, 1.0, 1.0, 2.0]),
            Err(Error::NonMonotonicSweep { index: 2 })
        ));
    }

    #[test]
    fn contrast_of_identical_channels_is_one() {
        let v: Vec<f32> = (0..20).map(|i| 1.0 + i as f32).collect();
        let cube = contrast_reduce(&stack(Channels::SignalReference, v.clone(), v, 2, 2)).unwrap();
        assert!(cube.data().iter().all(|&c| c == 1.0));
        assert_eq!(cube.quantity(), Quantity::Contrast);
    }

    #[test]
    fn contrast_direct_value() {
        let s = stack(Channels::SignalReference, vec![0.97; 4], vec![1.0; 4], 1, 1);
        let cube = contrast_reduce(&s).unwrap();
        assert!((cube.data()[0] - 0.97).abs() < 1e-7);
    }

    #[test]
    fn contrast_reports_first_bad_reference() {
        let mut off = vec![1.0f32; 2 * 3 * 4];
        // point 2, y 1, x 0 in a 2x3 frame
        off[2 * 6 + 2] = 0.0;
        let s = stack(Channels::SignalReference, vec![1.0; 24], off, 2, 3);
        match contrast_reduce(&s) {
            Err(Error::NonPositiveReference { point, y, x }) => assert_eq!((point, y, x), (2, 1, 0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn contrast_rejects_wrong_channels() {
        let s = stack(Channels::PlusMinus, vec![1.0; 4], vec![1.0; 4], 1, 1);
        assert!(matches!(contrast_reduce(&s), Err(Error::ChannelMismatch { .. })));
    }

    #[test]
    fn visibility_values() {
        let s = stack(
            Channels::PlusMinus,
            vec![0.5, 1.0, 0.6, 0.3],
            vec![0.5, 0.0, 0.4, 0.3],
            1,
            1,
        );
        let cube = visibility_reduce(&s).unwrap();
        let d = cube.data();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 1.0);
        assert!((d[2] - 0.2).abs() < 1e-7);
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn visibility_zero_sum_errors() {
        let s = stack(
            Channels::PlusMinus,
            vec![0.5, 0.0, 0.5, 0.5],
            vec![0.5, 0.0, 0.5, 0.5],
            1,
            1,
        );
        assert!(matches!(
            visibility_reduce(&s),
            Err(Error::ZeroSum { point: 1, y: 0, x: 0 })
        ));
    }

    #[test]
    fn raw_stack_rejects_negative_intensity() {
        let err = RawStack::from_channels(
            1,
            1,
            axis(4),
            Channels::PlusMinus,
            &[1.0, 1.0, -1.0, 1.0],
            &[1.0; 4],
        );
        assert!(matches!(err, Err(Error::NegativeIntensity { point: 2, .. })));
    }

    #[test]
    fn pixel_series_and_bounds() {
        let data: Vec<f64> = (0..20).map(f64::from).collect();
        let cube = DataCube::new(2, 2, axis(5), Quantity::Contrast, data).unwrap();
        let (_, s) = cube.pixel_series(0, 0).unwrap();
        assert_eq!(s, vec![0.0, 4.0, 8.0, 12.0, 16.0]);
        let (_, s) = cube.pixel_series(1, 1).unwrap();
        assert_eq!(s, vec![3.0, 7.0, 11.0, 15.0, 19.0]);
        assert!(matches!(
            cube.pixel_series(2, 0),
            Err(Error::IndexOutOfRange { .. })
        ));

        let constant = DataCube::new(2, 2, axis(5), Quantity::Contrast, vec![0.5; 20]).unwrap();
        assert!(constant.pixel_series(1, 0).unwrap().1.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn crop_identity_single_pixel_and_bounds() {
        let data: Vec<f64> = (0..60).map(f64::from).collect();
        let cube = DataCube::new(4, 3, axis(5), Quantity::Contrast, data).unwrap();
        assert_eq!(cube.crop(0, 0, 4, 3).unwrap(), cube);

        let one = cube.crop(2, 1, 1, 1).unwrap();
        assert_eq!(one.data(), cube.pixel_series(2, 1).unwrap().1.as_slice());

        let sub = cube.crop(1, 1, 2, 2).unwrap();
        for p in 0..5 {
            for j in 0..2 {
                for i in 0..2 {
                    assert_eq!(sub.value(p, i, j), cube.value(p, 1 + i, 1 + j));
                }
            }
        }
        assert!(matches!(
            cube.crop(3, 0, 2, 1),
            Err(Error::WindowOutOfBounds { .. })
        ));
        assert!(cube.crop(0, 0, 0, 1).is_err());
    }

    #[test]
    fn map_masks_non_finite() {
        let m = MapImage::new(2, 1, MapQuantity::Generic, vec![1.0, f64::NAN]).unwrap();
        assert_eq!(m.valid(), &[true, false]);
        assert_eq!(m.valid_count(), 1);
        assert!(MapImage::with_mask(
            2,
            1,
            MapQuantity::Generic,
            vec![1.0, f64::NAN],
            vec![true, true]
        )
        .is_err());
    }

    #[test]
    fn map_quantity_codes_round_trip() {
        for q in MapQuantity::ALL {
            assert_eq!(MapQuantity::from_code(q.code()), Some(q));
        }
    }
}
