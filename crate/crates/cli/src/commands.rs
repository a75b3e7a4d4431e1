use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use qdm_core::datacube::{
    contrast_reduce, load_qdc, visibility_reduce, DataCube, MapImage, MapQuantity, QdcObject,
    SweepAxis,
};
use qdm_core::diagnostics::{
    chisq_map, histogram_csv, histogram_stats, percentile_csv, percentile_report, pgm_bytes,
    summary_csv,
};
use qdm_core::fitengine::{
    find_odmr_peaks, fit_cube, fit_odmr_cube, fit_t1_two_stage, seed_by_dicing, FitOptions,
    FitResultCube,
};
use qdm_core::models::{ModelKind, ModelSpec, Stretch};
use qdm_core::physics::{
    analyze_birefringence, lineshifts_from_centers, stress_tensor, BirefStack, LineshiftReference,
    Optics, Pairing, SpinStressConstants,
};
use qdm_core::synth::{
    generate_biref_stack, generate_cube, generate_odmr_scene, stress_channel, OdmrSceneParams,
    TruthMaps,
};
use qdm_core::{rng, Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::output::{Outputs, RunManifest};

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic cube (or stack) with its truth maps.
    Synth(SynthArgs),
    /// Reduce a raw two-channel stack to a contrast or visibility cube.
    Reduce(ReduceArgs),
    /// Fit every pixel of a cube.
    Fit(FitArgs),
    /// Stress tensor maps from the eight resonance-centre maps of an ODMR fit.
    Stress(StressArgs),
    /// Stress angle, retardance and stress magnitude from a polarizer stack.
    Biref(BirefArgs),
    /// Histogram, Gaussian fit and percentile tables for a map.
    Stats(StatsArgs),
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Reduce(a) => reduce(a),
        Command::Fit(a) => fit(a),
        Command::Stress(a) => stress(a),
        Command::Biref(a) => biref(a),
        Command::Stats(a) => stats(a),
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelArg {
    Odmr,
    Rabi,
    Ramsey,
    Hahn,
    T1,
}

impl ModelArg {
    fn kind(self) -> ModelKind {
        match self {
            ModelArg::Odmr => ModelKind::OdmrTriplet,
            ModelArg::Rabi => ModelKind::Rabi,
            ModelArg::Ramsey => ModelKind::Ramsey,
            ModelArg::Hahn => ModelKind::Hahn,
            ModelArg::T1 => ModelKind::T1,
        }
    }
}

#[derive(Args, Serialize)]
pub struct ModelConstants {
    #[arg(long, default_value_t = qdm_core::models::DEFAULT_DETUNING_MHZ)]
    detuning_mhz: f64,
    #[arg(long, default_value_t = qdm_core::models::DEFAULT_HYPERFINE_MHZ)]
    hyperfine_mhz: f64,
}

#[derive(Args, Serialize)]
pub struct StressConstants {
    #[arg(long, default_value_t = 4.86)]
    a1: f64,
    #[arg(long, default_value_t = -3.7, allow_hyphen_values = true)]
    a2: f64,
}

impl StressConstants {
    fn get(&self) -> Result<SpinStressConstants> {
        SpinStressConstants::new(self.a1, self.a2)
    }
}

#[derive(Args, Serialize)]
pub struct OpticsArgs {
    #[arg(long, default_value_t = 530e-9)]
    wavelength_m: f64,
    #[arg(long, default_value_t = 0.5e-3)]
    thickness_m: f64,
    #[arg(long, default_value_t = 2.42)]
    refractive_index: f64,
    #[arg(long, default_value_t = 0.3e-12)]
    qiso: f64,
}

impl OpticsArgs {
    fn get(&self) -> Result<Optics> {
        let o = Optics {
            wavelength_m: self.wavelength_m,
            thickness_m: self.thickness_m,
            refractive_index: self.refractive_index,
            q_iso_per_pa: self.qiso,
        };
        o.validate()?;
        Ok(o)
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("not a number: {t:?}")))
        })
        .collect()
}

/// `"free"` or a fixed exponent.
fn parse_stretch(s: &str) -> Result<Stretch> {
    if s.eq_ignore_ascii_case("free") {
        return Ok(Stretch::Free);
    }
    s.parse::<f64>()
        .map(Stretch::Fixed)
        .map_err(|_| Error::InvalidParameter(format!("stretch must be \"free\" or a number, got {s:?}")))
}

fn model_spec(model: ModelArg, c: &ModelConstants, stretch: Stretch) -> ModelSpec {
    let mut spec = ModelSpec::for_kind(model.kind());
    spec.hyperfine_mhz = c.hyperfine_mhz;
    spec.detuning_mhz = c.detuning_mhz;
    if model == ModelArg::T1 {
        spec.stretch = stretch;
    }
    spec
}

fn load_cube(path: &Path) -> Result<DataCube> {
    load_qdc(path)?.into_cube()
}

fn load_map(path: &Path) -> Result<MapImage> {
    load_qdc(path)?.into_map()
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Odmr,
    Rabi,
    Ramsey,
    Hahn,
    T1,
    /// Eight-group ODMR spectra over a stress channel.
    OdmrScene,
    /// Polarizer-angle stack with random per-pixel truth.
    Biref,
}

#[derive(Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    kind: SynthKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Sweep points (angles for `biref`); defaults depend on the kind.
    #[arg(long)]
    points: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    start: Option<f64>,
    #[arg(long)]
    stop: Option<f64>,
    /// Comma-separated truth parameters in model order.
    #[arg(long)]
    params: Option<String>,
    /// Parameter that varies linearly across x.
    #[arg(long)]
    vary: Option<String>,
    /// Relative half-range of the `--vary` gradient.
    #[arg(long, default_value_t = 0.0)]
    spread: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed stretch exponent for `t1`.
    #[arg(long, default_value_t = 1.0)]
    stretch: f64,
    #[command(flatten)]
    model: ModelConstants,
    #[command(flatten)]
    stress: StressConstants,
    /// Peak diagonal stress of the scene channel, GPa.
    #[arg(long, default_value_t = 0.05, allow_hyphen_values = true)]
    peak_gpa: f64,
    #[arg(long, default_value_t = 6.0)]
    channel_width_px: f64,
    #[arg(long, default_value = "60,45,30,15")]
    split_mhz: String,
    #[arg(long, default_value_t = 1.0)]
    linewidth_mhz: f64,
    #[arg(long, default_value_t = 0.01)]
    amplitude: f64,
}

fn synth_defaults(kind: ModelKind) -> (&'static [f64], f64, f64, usize) {
    match kind {
        ModelKind::OdmrTriplet => (&[0.02, 2870.0, 1.0], 2860.0, 2880.0, 60),
        ModelKind::Rabi => (&[0.03, 1.0, 0.3], 0.0, 3.0, 60),
        ModelKind::Ramsey => (&[0.1, 0.1, 0.1, 0.5], 0.0, 2.0, 60),
        ModelKind::Hahn => (&[0.1, 0.5], 0.0, 5.0, 60),
        ModelKind::T1 => (&[0.1, 1.0], 0.0, 5.0, 60),
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut out = Outputs::new(&args.out);
    let mut manifest = RunManifest::new("synth", &args);
    manifest.rng_seed = Some(args.seed);
    manifest.constants = json!({
        "hyperfine_mhz": args.model.hyperfine_mhz,
        "detuning_mhz": args.model.detuning_mhz,
        "a1_mhz_per_gpa": args.stress.a1,
        "a2_mhz_per_gpa": args.stress.a2,
    });
    let (w, h) = (args.width, args.height);
    match args.kind {
        SynthKind::Biref => {
            let n = args.points.unwrap_or(18);
            let angles: Vec<f64> = (0..n).map(|i| i as f64 * 180.0 / n as f64).collect();
            let s = rng::substream(args.seed, 1);
            let draw = |k: u64, i: usize| rng::uniform(s, 3 * i as u64 + k);
            let phi: Vec<f64> = (0..w * h).map(|i| 180.0 * draw(0, i)).collect();
            let sd: Vec<f64> = (0..w * h).map(|i| 0.95 * draw(1, i)).collect();
            let i0: Vec<f64> = (0..w * h).map(|i| 1.0 + draw(2, i)).collect();
            let phi = MapImage::new(w, h, MapQuantity::AngleDeg, phi)?;
            let sd = MapImage::new(w, h, MapQuantity::SinRetardance, sd)?;
            let i0 = MapImage::new(w, h, MapQuantity::Intensity, i0)?;
            let stack = generate_biref_stack(&phi, &sd, &i0, &angles, args.noise, args.seed)?;
            out.add_qdc("stack.qdc", stack.into_cube())?;
            out.add_qdc("truth_phi.qdc", phi)?;
            out.add_qdc("truth_sin_delta.qdc", sd)?;
            out.add_qdc("truth_i0.qdc", i0)?;
        }
        SynthKind::OdmrScene => {
            let split = parse_list(&args.split_mhz)?;
            let split: [f64; 4] = split
                .try_into()
                .map_err(|_| Error::InvalidParameter("--split-mhz takes four values".into()))?;
            let params = OdmrSceneParams {
                split_mhz: split,
                linewidth_mhz: args.linewidth_mhz,
                amplitude: args.amplitude,
                hyperfine_mhz: args.model.hyperfine_mhz,
                constants: args.stress.get()?,
                ..Default::default()
            };
            let d = params.zero_field_mhz;
            let reach = split[0] + 10.0;
            let sweep = SweepAxis::linspace(
                qdm_core::datacube::SweepKind::FrequencyMhz,
                args.start.unwrap_or(d - reach),
                args.stop.unwrap_or(d + reach),
                args.points.unwrap_or(801),
            )?;
            let truth = stress_channel(w, h, args.peak_gpa, args.channel_width_px)?;
            let scene = generate_odmr_scene(&params, &sweep, &truth, args.noise, args.seed)?;
            manifest.results = json!({
                "overlap_warning": scene.overlap_warning,
                "group_centers_mhz": params.group_centers(),
            });
            if scene.overlap_warning {
                eprintln!("warning: resonance groups overlap their fitting windows");
            }
            out.add_qdc("cube.qdc", scene.cube)?;
            for (name, map) in ["sigma_diag", "sigma_xy", "sigma_xz", "sigma_yz"]
                .iter()
                .zip(truth.components())
            {
                out.add_qdc(format!("truth_{name}.qdc"), map.clone())?;
            }
            for (i, map) in scene.lineshifts.maps.iter().enumerate() {
                out.add_qdc(format!("truth_lineshift_{}.qdc", i + 1), map.clone())?;
            }
        }
        _ => {
            let model = match args.kind {
                SynthKind::Odmr => ModelArg::Odmr,
                SynthKind::Rabi => ModelArg::Rabi,
                SynthKind::Ramsey => ModelArg::Ramsey,
                SynthKind::Hahn => ModelArg::Hahn,
                _ => ModelArg::T1,
            };
            let spec = model_spec(model, &args.model, Stretch::Fixed(args.stretch));
            spec.validate()?;
            let (dp, start, stop, points) = synth_defaults(spec.kind);
            let params = match &args.params {
                Some(s) => parse_list(s)?,
                None => dp.to_vec(),
            };
            let vary = match &args.vary {
                None => None,
                Some(name) => Some(
                    spec.param_names()
                        .iter()
                        .position(|n| n == name)
                        .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter {name:?}")))?,
                ),
            };
            let spread = args.spread;
            let truth = TruthMaps::from_fn(spec, w, h, |x, _| {
                let mut p = params.clone();
                if let Some(k) = vary {
                    let u = if w > 1 { 2.0 * x as f64 / (w - 1) as f64 - 1.0 } else { 0.0 };
                    p[k] *= 1.0 + spread * u;
                }
                p
            })?;
            let sweep = SweepAxis::linspace(
                spec.sweep_kind(),
                args.start.unwrap_or(start),
                args.stop.unwrap_or(stop),
                args.points.unwrap_or(points),
            )?;
            let (cube, truth) = generate_cube(&truth, &sweep, args.noise, args.seed)?;
            out.add_qdc("cube.qdc", cube)?;
            for (name, map) in spec.param_names().iter().zip(truth.planes) {
                out.add_qdc(format!("truth_{name}.qdc"), map)?;
            }
        }
    }
    out.commit(manifest)
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReduceMode {
    Contrast,
    Visibility,
}

#[derive(Args, Serialize)]
pub struct ReduceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: ReduceMode,
}

fn reduce(args: ReduceArgs) -> Result<()> {
    let raw = load_qdc(&args.input)?.into_raw()?;
    let cube = match args.mode {
        ReduceMode::Contrast => contrast_reduce(&raw)?,
        ReduceMode::Visibility => visibility_reduce(&raw)?,
    };
    let mut manifest = RunManifest::new("reduce", &args);
    manifest.inputs.push(args.input.clone());
    let mut out = Outputs::new(&args.out);
    out.add_qdc("cube.qdc", cube)?;
    out.commit(manifest)
}

#[derive(Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long, default_value_t = 8)]
    dicing: usize,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    /// `t1` stretch exponent: "free" runs the two-stage fit.
    #[arg(long, default_value = "free")]
    stretch: String,
    /// Resonance groups expected in an `odmr` cube.
    #[arg(long, default_value_t = 8)]
    groups: usize,
    #[command(flatten)]
    constants: ModelConstants,
}

fn write_fit(out: &mut Outputs, prefix: &str, result: &FitResultCube) -> Result<()> {
    for (k, name) in result.model().param_names().iter().enumerate() {
        out.add_qdc(format!("{prefix}{name}.qdc"), result.param_map(k)?)?;
    }
    out.add_qdc(format!("{prefix}chisq.qdc"), chisq_map(result)?)?;
    out.add_qdc(format!("{prefix}status.qdc"), result.status_map()?)?;
    out.add_qdc(format!("{prefix}iterations.qdc"), result.iterations_map()?)?;
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let cube = load_cube(&args.input)?;
    let options = FitOptions {
        max_iterations: args.max_iterations,
        workers: args.threads,
        rng_seed: args.seed,
        ..Default::default()
    };
    let stretch = parse_stretch(&args.stretch)?;
    let spec = model_spec(args.model, &args.constants, stretch);
    spec.validate()?;

    let mut manifest = RunManifest::new("fit", &args);
    manifest.inputs.push(args.input.clone());
    manifest.rng_seed = Some(args.seed);
    manifest.constants = json!({
        "hyperfine_mhz": spec.hyperfine_mhz,
        "detuning_mhz": spec.detuning_mhz,
    });
    let mut out = Outputs::new(&args.out);

    match args.model {
        ModelArg::Odmr => {
            if cube.quantity() != spec.quantity() {
                return Err(Error::QuantityMismatch {
                    expected: spec.quantity().name(),
                    found: cube.quantity().name(),
                });
            }
            let windows = find_odmr_peaks(
                cube.sweep(),
                &cube.mean_trace(),
                args.groups,
                spec.hyperfine_mhz,
                &options,
            )?;
            let results = fit_odmr_cube(&cube, &windows, spec.hyperfine_mhz, args.dicing, &options)?;
            for (g, r) in results.iter().enumerate() {
                write_fit(&mut out, &format!("group{g}_"), r)?;
            }
            manifest.results = json!({
                "windows": windows,
                "converged_fraction": results.iter().map(|r| r.converged_fraction()).collect::<Vec<_>>(),
            });
            out.add_json("windows.json", &windows)?;
        }
        ModelArg::T1 if stretch == Stretch::Free => {
            let r = fit_t1_two_stage(&cube, args.dicing, &options)?;
            let stretch = match r.model().stretch {
                Stretch::Fixed(e) => e,
                Stretch::Free => f64::NAN,
            };
            manifest.results = json!({
                "stretch_exponent": stretch,
                "converged_fraction": r.converged_fraction(),
            });
            write_fit(&mut out, "", &r)?;
        }
        _ => {
            let seeds = seed_by_dicing(&cube, &spec, args.dicing, &options)?;
            let r = fit_cube(&cube, &spec, &seeds, &options)?;
            manifest.results = json!({
                "converged_fraction": r.converged_fraction(),
                "inherited_blocks": seeds.inherited_count(),
            });
            write_fit(&mut out, "", &r)?;
        }
    }
    out.commit(manifest)
}

#[derive(Args, Serialize)]
pub struct StressArgs {
    /// Directory written by `fit --model odmr`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fixed zero-field splitting (MHz); the per-orientation spatial median
    /// is used when absent.
    #[arg(long)]
    zero_field_mhz: Option<f64>,
    /// Eight comma-separated group indices, paired consecutively.
    #[arg(long)]
    pairing: Option<String>,
    #[command(flatten)]
    constants: StressConstants,
}

fn stress(args: StressArgs) -> Result<()> {
    let k = args.constants.get()?;
    let pairing = match &args.pairing {
        None => Pairing::default(),
        Some(s) => {
            let idx: Vec<usize> = s
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| Error::Pairing(format!("not an index: {t:?}")))
                })
                .collect::<Result<_>>()?;
            if idx.len() != 8 {
                return Err(Error::Pairing(format!("need 8 indices, got {}", idx.len())));
            }
            Pairing(std::array::from_fn(|i| (idx[2 * i], idx[2 * i + 1])))
        }
    };
    let reference = match args.zero_field_mhz {
        Some(d) => LineshiftReference::FixedZeroField(d),
        None => LineshiftReference::SpatialMedian,
    };
    let mut manifest = RunManifest::new("stress", &args);
    let mut centers = Vec::with_capacity(8);
    for g in 0..8 {
        let path = args.input.join(format!("group{g}_f_center.qdc"));
        centers.push(load_map(&path)?);
        manifest.inputs.push(path);
    }
    let m = lineshifts_from_centers(&centers, &pairing, reference)?;
    let s = stress_tensor(&m, &k)?;
    manifest.constants = json!({ "a1_mhz_per_gpa": k.a1_mhz_per_gpa, "a2_mhz_per_gpa": k.a2_mhz_per_gpa });
    let mut out = Outputs::new(&args.out);
    for (i, map) in m.maps.iter().enumerate() {
        out.add_qdc(format!("lineshift_{}.qdc", i + 1), map.clone())?;
    }
    for (name, map) in ["sigma_diag", "sigma_xy", "sigma_xz", "sigma_yz"]
        .iter()
        .zip(s.components())
    {
        out.add_qdc(format!("{name}.qdc"), map.clone())?;
    }
    out.commit(manifest)
}

#[derive(Args, Serialize)]
pub struct BirefArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    optics: OpticsArgs,
}

fn biref(args: BirefArgs) -> Result<()> {
    let optics = args.optics.get()?;
    let stack = BirefStack::from_cube(load_cube(&args.input)?)?;
    let r = analyze_birefringence(&stack, &optics)?;
    let mut manifest = RunManifest::new("biref", &args);
    manifest.inputs.push(args.input.clone());
    manifest.constants = serde_json::to_value(optics).unwrap_or_default();
    manifest.results = json!({
        "ambiguous_pixels": r.inversion.ambiguous.iter().filter(|a| **a).count(),
    });
    let (w, h) = (stack.width(), stack.height());
    let mut out = Outputs::new(&args.out);
    out.add_qdc("phi.qdc", r.inversion.phi)?;
    out.add_qdc("sin_delta.qdc", r.inversion.sin_delta)?;
    out.add_qdc("i0.qdc", r.inversion.i0)?;
    out.add_qdc("stress_pa.qdc", r.stress)?;
    let flags = r.inversion.ambiguous.iter().map(|&a| f64::from(u8::from(a))).collect();
    out.add_qdc("ambiguous.qdc", MapImage::new(w, h, MapQuantity::Generic, flags)?)?;
    out.commit(manifest)
}

#[derive(Args, Serialize)]
pub struct StatsArgs {
    /// A map file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "10,50,90")]
    percentiles: String,
    /// Relative distances from the median for the fraction-within table.
    #[arg(long, default_value = "0.05,0.1")]
    within: String,
    /// Histogram bins; Freedman–Diaconis when absent.
    #[arg(long)]
    bins: Option<usize>,
    /// Also write a PGM preview.
    #[arg(long)]
    pgm: bool,
}

fn stats(args: StatsArgs) -> Result<()> {
    let map = match load_qdc(&args.input)? {
        QdcObject::Map(m) => m,
        other => {
            return Err(Error::ChannelMismatch {
                expected: "map",
                found: other.kind_name(),
            })
        }
    };
    let pct = parse_list(&args.percentiles)?;
    let within = parse_list(&args.within)?;
    let values = percentile_report(&map, &pct)?;
    let hist = histogram_stats(&map, args.bins, &within)?;
    let mut manifest = RunManifest::new("stats", &args);
    manifest.inputs.push(args.input.clone());
    manifest.results = json!({
        "percentiles": pct.iter().zip(&values).map(|(p, v)| json!({"p": p, "value": v})).collect::<Vec<_>>(),
        "median": hist.median,
        "gaussian": hist.gaussian,
        "fraction_within": hist.fraction_within,
    });
    let mut out = Outputs::new(&args.out);
    out.add_bytes("percentiles.csv", percentile_csv(&pct, &values)?);
    out.add_bytes("histogram.csv", histogram_csv(&hist)?);
    out.add_bytes("summary.csv", summary_csv(&hist)?);
    if args.pgm {
        out.add_bytes("map.pgm", pgm_bytes(&map));
    }
    out.commit(manifest)
}
