//! Command-line front-end for `fiberphoton`.
//!
//! Every subcommand writes CSV or JSON to `--out` (or stdout). JSON documents
//! carry a `schema_version`. Exit codes: 0 success, 1 runtime or numeric
//! failure, 2 usage error.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fiberphoton::correlator::{correlate_stream, G2Histogram};
use fiberphoton::emitter_model::{correct_g2_background, DriveField, TwoLevelEmitter};
use fiberphoton::fitkit::{fit_curve_with, FitModel, FitOptions, FitResult, RabiDamping, Series};
use fiberphoton::interface_optics::{
    collection_efficiency, radiated_pattern_with_points, spherical_collection_efficiency, DipoleEmitter, FiberSpec,
    Hemisphere, OpticalInterface, Orientation, SweepRow, MIN_QUADRATURE_POINTS,
};
use fiberphoton::spectra::{
    bundled_dbatt_spectrum, in_band_fraction, optimize_window, raman_reduction_factor, synth_excitation_scan,
    window_snr, FilterWindow, ScanConfig, SpectrumTrace, WindowObjective,
};
use fiberphoton::stream_sim::{simulate, SimConfig};
use fiberphoton::tags::{Channel, TagStream};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

pub mod config;

use config::{mhz, RunConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "FIBERPHOTON_THREADS";
pub const SWEEP_CSV_HEADER: &str = "distance_um,eta_parallel,eta_orthogonal,eta_spherical";

/// A problem with the invocation itself: bad flags, values or config keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "fiberphoton", version, about = "Fiber-coupled single-molecule photon source toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Far-field angular pattern of a dipole above the fiber face.
    DipolePattern(DipolePatternArgs),
    /// Collection efficiency into the fiber versus molecule-fiber distance.
    CollectEff(CollectEffArgs),
    /// Monte-Carlo two-detector time-tag stream from a TOML run config.
    Simulate(SimulateArgs),
    /// Cross-correlation histogram of a tag stream.
    Correlate(CorrelateArgs),
    /// Fit one of the line, saturation, broadening or g2 models to a CSV series.
    Fit(FitArgs),
    /// Simulate, correlate and fit a resonantly driven molecule end to end.
    #[command(name = "demo-fig7")]
    DemoFig7(DemoArgs),
    /// Synthetic fluorescence-excitation scan of randomly placed molecules.
    ScanSynth(ScanArgs),
    /// In-band fraction and signal-to-background of a spectral filter window.
    Filter(FilterArgs),
    /// Reduction of a λ⁻⁴ Raman background between two wavelengths.
    Raman(RamanArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrientationArg {
    Parallel,
    Orthogonal,
    Tilted,
}

#[derive(Debug, Clone, Args)]
pub struct OpticsArgs {
    /// Refractive index of the medium holding the molecule (default 1.53) [dimensionless]
    #[arg(long)]
    pub n_upper: Option<f64>,
    /// Refractive index of the fiber side (default 1.501) [dimensionless]
    #[arg(long)]
    pub n_lower: Option<f64>,
    /// Emission wavelength (default 589) [nm]
    #[arg(long)]
    pub wavelength_nm: Option<f64>,
    /// TOML run config providing [interface], [dipole] and [fiber]; flags override it [path]
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl OpticsArgs {
    fn run_config(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => config::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    fn interface(&self, cfg: &RunConfig) -> Result<OpticalInterface> {
        let (mut up, mut low) = (1.53, 1.501);
        if cfg.interface.is_some() {
            let i = cfg.interface()?;
            (up, low) = (i.n_upper(), i.n_lower());
        }
        OpticalInterface::new(self.n_upper.unwrap_or(up), self.n_lower.unwrap_or(low))
            .map_err(|e| usage(format!("interface_optics: {e}")))
    }

    fn wavelength(&self, cfg: &RunConfig) -> Result<f64> {
        let base = match &cfg.dipole {
            Some(d) => d.wavelength_nm,
            None => 589.0,
        };
        Ok(self.wavelength_nm.unwrap_or(base))
    }
}

#[derive(Debug, Clone, Args)]
pub struct DipolePatternArgs {
    #[command(flatten)]
    pub optics: OpticsArgs,
    /// Dipole orientation (default parallel) [choice]
    #[arg(long, value_enum)]
    pub orientation: Option<OrientationArg>,
    /// Tilt from the interface normal for --orientation tilted [deg]
    #[arg(long)]
    pub tilt_deg: Option<f64>,
    /// Height of the dipole above the fiber face (default 0) [µm]
    #[arg(long)]
    pub d_um: Option<f64>,
    /// Polar intervals per hemisphere (at least 4096) [count]
    #[arg(long, default_value_t = MIN_QUADRATURE_POINTS)]
    pub points: usize,
    /// Output CSV; stdout if omitted [path]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CollectEffArgs {
    #[command(flatten)]
    pub optics: OpticsArgs,
    /// Fiber numerical aperture (default 0.41) [dimensionless]
    #[arg(long)]
    pub na: Option<f64>,
    /// Fiber core diameter (default 2.4) [µm]
    #[arg(long)]
    pub core_um: Option<f64>,
    /// Core refractive index (default: --n-lower) [dimensionless]
    #[arg(long)]
    pub n_core: Option<f64>,
    /// Single molecule-fiber distance instead of a sweep [µm]
    #[arg(long, conflicts_with_all = ["d_min_um", "d_max_um", "points"])]
    pub d_um: Option<f64>,
    /// Sweep start [µm]
    #[arg(long, default_value_t = 0.0)]
    pub d_min_um: f64,
    /// Sweep end [µm]
    #[arg(long, default_value_t = 6.0)]
    pub d_max_um: f64,
    /// Sweep grid points [count]
    #[arg(long, default_value_t = 25)]
    pub points: usize,
    /// Isotropic emitter without interface only (skips the dipole columns) [flag]
    #[arg(long)]
    pub spherical: bool,
    /// Output CSV; stdout if omitted [path]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TagFormat {
    Csv,
    Ttg1,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// TOML run config with [emitter], [drive] and [sim] [path]
    #[arg(long)]
    pub config: PathBuf,
    /// Output tag file [path]
    #[arg(long)]
    pub out: PathBuf,
    /// Tag file encoding (default: csv for a .csv extension, else ttg1) [choice]
    #[arg(long, value_enum)]
    pub format: Option<TagFormat>,
    /// Overrides sim.seed [integer]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct CorrelateArgs {
    /// One merged tag file, or two files whose tags are taken as channel A and channel B [path]
    #[arg(required = true, num_args = 1..=2)]
    pub inputs: Vec<PathBuf>,
    /// Histogram bin width (default 500) [ps]
    #[arg(long)]
    pub bin_ps: Option<u64>,
    /// Half-range of the delay axis (default 100000) [ps]
    #[arg(long)]
    pub range_ps: Option<u64>,
    /// Acquisition time for normalization (default: span of the stream) [ps]
    #[arg(long)]
    pub t_total_ps: Option<u64>,
    /// TOML run config providing [correlate] [path]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output histogram CSV; stdout if omitted [path]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Lorentzian,
    Saturation,
    PowerBroadening,
    RabiG2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DampingArg {
    FourierLimited,
    Free,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Model to fit [choice]
    #[arg(value_enum)]
    pub model: ModelArg,
    /// CSV with columns x,y[,sigma], or a histogram CSV from `correlate` [path]
    #[arg(long)]
    pub data: PathBuf,
    /// Coherence model for rabi-g2 (default fourier-limited) [choice]
    #[arg(long, value_enum)]
    pub damping: Option<DampingArg>,
    /// Starting values in parameter order, comma separated, in the model's units [list]
    #[arg(long, value_delimiter = ',')]
    pub init: Option<Vec<f64>>,
    /// Parameter names held at their starting value, comma separated [list]
    #[arg(long, value_delimiter = ',')]
    pub hold: Vec<String>,
    /// y is photon counts: use Poisson weights when no sigma column is given [flag]
    #[arg(long)]
    pub counts: bool,
    /// Slope of a background linear in x, subtracted before fitting [y-unit per x-unit]
    #[arg(long, default_value_t = 0.0)]
    pub bg_slope: f64,
    /// Constant background subtracted before fitting [y-unit]
    #[arg(long, default_value_t = 0.0)]
    pub bg_offset: f64,
    /// Iteration limit [count]
    #[arg(long, default_value_t = fiberphoton::fitkit::DEFAULT_MAX_ITERATIONS)]
    pub max_iterations: usize,
    /// Output JSON; stdout if omitted [path]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    /// TOML run config with [emitter], [drive], [sim] and optionally [correlate]; replaces the built-in parameters [path]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Simulated acquisition time [s]
    #[arg(long, default_value_t = 0.025)]
    pub duration_s: f64,
    /// Random seed [integer]
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Signal fraction per channel [dimensionless]
    #[arg(long, default_value_t = 0.8)]
    pub rho: f64,
    /// Histogram bin width [ps]
    #[arg(long, default_value_t = 500)]
    pub bin_ps: u64,
    /// Half-range of the delay axis [ps]
    #[arg(long, default_value_t = 100_000)]
    pub range_ps: u64,
    /// Directory for histogram.csv and fit.json [path]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ScanArgs {
    /// Number of molecules [count]
    #[arg(long, default_value_t = 5)]
    pub molecules: usize,
    /// Scan start, laser detuning [MHz]
    #[arg(long, default_value_t = -5000.0, allow_hyphen_values = true)]
    pub f_min_mhz: f64,
    /// Scan end, laser detuning [MHz]
    #[arg(long, default_value_t = 5000.0, allow_hyphen_values = true)]
    pub f_max_mhz: f64,
    /// Scan points [count]
    #[arg(long, default_value_t = 4001)]
    pub points: usize,
    /// Excitation power [nW]
    #[arg(long, default_value_t = 50.0)]
    pub power_nw: f64,
    /// Saturation power [nW]
    #[arg(long, default_value_t = 60.0)]
    pub i_sat_nw: f64,
    /// Low-power linewidth, FWHM [MHz]
    #[arg(long, default_value_t = 28.5)]
    pub gamma0_mhz: f64,
    /// Saturated count rate of a parallel molecule on the fiber face [cps]
    #[arg(long, default_value_t = 50e3)]
    pub r_inf_cps: f64,
    /// Flat background rate [cps]
    #[arg(long, default_value_t = 500.0)]
    pub background_cps: f64,
    /// Dwell time per scan point [s]
    #[arg(long, default_value_t = 0.01)]
    pub dwell_s: f64,
    /// Molecules are placed uniformly within this distance of the fiber face [µm]
    #[arg(long, default_value_t = 1.0)]
    pub layer_um: f64,
    /// Draw Poisson counts instead of expected values [flag]
    #[arg(long)]
    pub noise: bool,
    /// Random seed [integer]
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV frequency_mhz,counts; stdout if omitted [path]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file listing the placed molecules [path]
    #[arg(long)]
    pub lines_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    SignalToBackground,
    ShotNoise,
}

#[derive(Debug, Clone, Args)]
pub struct FilterArgs {
    /// Emission spectrum CSV wavelength_nm,counts (default: the bundled DBATT-like spectrum) [path]
    #[arg(long, conflicts_with = "uniform_nm")]
    pub spectrum: Option<PathBuf>,
    /// Use a flat emission spectrum over LO HI instead [nm]
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub uniform_nm: Option<Vec<f64>>,
    /// Pass band CUT_ON CUT_OFF (default 626 678) [nm]
    #[arg(long, num_args = 2, value_names = ["CUT_ON", "CUT_OFF"])]
    pub window: Option<Vec<f64>>,
    /// Background spectrum CSV for signal-to-background [path]
    #[arg(long, conflicts_with = "flat_background")]
    pub background: Option<PathBuf>,
    /// Flat background level for signal-to-background, per nm [counts]
    #[arg(long)]
    pub flat_background: Option<f64>,
    /// Search the best window on a grid (needs a background) [flag]
    #[arg(long)]
    pub optimize: bool,
    /// Figure of merit for --optimize [choice]
    #[arg(long, value_enum, default_value_t = ObjectiveArg::SignalToBackground)]
    pub objective: ObjectiveArg,
    /// Edge grid spacing for --optimize [nm]
    #[arg(long, default_value_t = 1.0)]
    pub step_nm: f64,
    /// TOML run config providing [spectra] [path]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output JSON; stdout if omitted [path]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RamanArgs {
    /// Detection wavelength before the change [nm]
    pub from_nm: f64,
    /// Detection wavelength after the change [nm]
    pub to_nm: f64,
    /// Output JSON; stdout if omitted [path]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Applies `FIBERPHOTON_THREADS` to the global rayon pool (0 or unset = auto).
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| usage(format!("{THREADS_ENV} must be a non-negative integer, got `{raw}`")))?;
    if n > 0 {
        // A pool may already exist when called twice in one process (tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::DipolePattern(a) => dipole_pattern(&a),
        Command::CollectEff(a) => collect_eff(&a),
        Command::Simulate(a) => simulate_cmd(&a),
        Command::Correlate(a) => correlate_cmd(&a),
        Command::Fit(a) => fit_cmd(&a),
        Command::DemoFig7(a) => demo(&a),
        Command::ScanSynth(a) => scan_synth(&a),
        Command::Filter(a) => filter(&a),
        Command::Raman(a) => raman(&a),
    }
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot open {}", path.display()))?))
}

fn dipole_pattern(a: &DipolePatternArgs) -> Result<()> {
    let cfg = a.optics.run_config()?;
    let iface = a.optics.interface(&cfg)?;
    let mut dipole = if cfg.dipole.is_some() {
        cfg.dipole()?
    } else {
        DipoleEmitter::new(Orientation::Parallel, 0.0, 589.0)?
    };
    let orientation = match (a.orientation, a.tilt_deg) {
        (Some(OrientationArg::Parallel), _) => Orientation::Parallel,
        (Some(OrientationArg::Orthogonal), _) => Orientation::Orthogonal,
        (Some(OrientationArg::Tilted), Some(deg)) => Orientation::Tilted(deg.to_radians()),
        (Some(OrientationArg::Tilted), None) => return Err(usage("--orientation tilted needs --tilt-deg")),
        (None, _) => dipole.orientation(),
    };
    dipole = DipoleEmitter::new(orientation, a.d_um.unwrap_or(dipole.height_um()), a.optics.wavelength(&cfg)?)
        .map_err(|e| usage(format!("interface_optics: {e}")))?;
    let (upper, lower) = radiated_pattern_with_points(&dipole, &iface, a.points);
    let total = upper.total_power();
    let mut w = sink(&a.out)?;
    writeln!(w, "hemisphere,theta_deg,density,density_p,density_s")?;
    for pattern in [&upper, &lower] {
        let name = match pattern.hemisphere() {
            Hemisphere::Upper => "upper",
            Hemisphere::Lower => "lower",
        };
        let (d, dp, ds) = (pattern.density(), pattern.density_p(), pattern.density_s());
        for (i, t) in pattern.theta().iter().enumerate() {
            writeln!(w, "{name},{},{},{},{}", t.to_degrees(), d[i] / total, dp[i] / total, ds[i] / total)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Distances at which a sweep's columns must not increase: the spherical
/// column everywhere, the dipole columns from the crossover distance on.
pub fn check_sweep_monotone(rows: &[SweepRow], crossover_um: f64) -> Result<(), String> {
    const SLACK: f64 = 1e-9;
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.eta_spherical > a.eta_spherical * (1.0 + 1e-15) {
            return Err(format!("spherical efficiency rises between {} and {} µm", a.distance_um, b.distance_um));
        }
        if a.distance_um >= crossover_um {
            for (name, x, y) in [
                ("parallel", a.eta_parallel, b.eta_parallel),
                ("orthogonal", a.eta_orthogonal, b.eta_orthogonal),
            ] {
                if y > x * (1.0 + SLACK) {
                    return Err(format!("{name} efficiency rises between {} and {} µm", a.distance_um, b.distance_um));
                }
            }
        }
    }
    Ok(())
}

fn collect_eff(a: &CollectEffArgs) -> Result<()> {
    let cfg = a.optics.run_config()?;
    let iface = a.optics.interface(&cfg)?;
    let wavelength = a.optics.wavelength(&cfg)?;
    let base = if cfg.fiber.is_some() { cfg.fiber()? } else { FiberSpec::uhna7() };
    let fiber = FiberSpec::new(
        a.na.unwrap_or(base.numerical_aperture()),
        a.core_um.map(|d| 0.5 * d).unwrap_or(base.core_radius_um()),
        a.n_core.or(a.optics.n_lower).unwrap_or(base.n_core()),
    )
    .map_err(|e| usage(format!("interface_optics: {e}")))?;
    let distances: Vec<f64> = match a.d_um {
        Some(d) => vec![d],
        None => {
            if !(a.d_min_um >= 0.0 && a.d_max_um > a.d_min_um && a.points >= 2) {
                return Err(usage("need 0 <= --d-min-um < --d-max-um and --points >= 2"));
            }
            let step = (a.d_max_um - a.d_min_um) / (a.points - 1) as f64;
            (0..a.points)
                .map(|i| if i + 1 == a.points { a.d_max_um } else { a.d_min_um + step * i as f64 })
                .collect()
        }
    };
    if distances.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(usage("distances must be finite and >= 0"));
    }
    let rows: Vec<SweepRow> = distances
        .par_iter()
        .map(|&d| -> Result<SweepRow> {
            let eta_spherical = spherical_collection_efficiency(&fiber, d).context("interface_optics")?;
            if a.spherical {
                return Ok(SweepRow {
                    distance_um: d,
                    eta_parallel: f64::NAN,
                    eta_orthogonal: f64::NAN,
                    eta_spherical,
                });
            }
            let par = DipoleEmitter::new(Orientation::Parallel, d, wavelength).context("interface_optics")?;
            let orth = par.with_orientation(Orientation::Orthogonal).context("interface_optics")?;
            Ok(SweepRow {
                distance_um: d,
                eta_parallel: collection_efficiency(&par, &iface, &fiber),
                eta_orthogonal: collection_efficiency(&orth, &iface, &fiber),
                eta_spherical,
            })
        })
        .collect::<Result<_>>()?;
    if a.spherical {
        if let Some(w) = rows.windows(2).find(|w| w[1].eta_spherical > w[0].eta_spherical) {
            bail!("interface_optics: spherical efficiency rises after {} µm", w[0].distance_um);
        }
    } else {
        check_sweep_monotone(&rows, fiber.crossover_distance_um()).map_err(|e| anyhow::anyhow!("interface_optics: {e}"))?;
    }
    let mut w = sink(&a.out)?;
    if a.spherical {
        writeln!(w, "distance_um,eta_spherical")?;
        for r in &rows {
            writeln!(w, "{},{}", r.distance_um, r.eta_spherical)?;
        }
    } else {
        writeln!(w, "{SWEEP_CSV_HEADER}")?;
        for r in &rows {
            writeln!(w, "{},{},{},{}", r.distance_um, r.eta_parallel, r.eta_orthogonal, r.eta_spherical)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_tags(stream: &TagStream, path: &Path, format: Option<TagFormat>) -> Result<()> {
    let format = format.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => TagFormat::Csv,
        _ => TagFormat::Ttg1,
    });
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    match format {
        TagFormat::Csv => stream.write_csv(file),
        TagFormat::Ttg1 => stream.write_ttg1(file),
    }
    .context("tags")
}

fn simulate_cmd(a: &SimulateArgs) -> Result<()> {
    let cfg = config::load(&a.config)?;
    let mut sim = cfg.sim()?;
    if let Some(seed) = a.seed {
        sim.seed = seed;
    }
    let stream = simulate(&sim).context("stream_sim")?;
    write_tags(&stream, &a.out, a.format)
}

fn read_tags(path: &Path) -> Result<TagStream> {
    TagStream::read_any(open(path)?).with_context(|| format!("tags: {}", path.display()))
}

fn correlate_cmd(a: &CorrelateArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => config::load(p)?,
        None => RunConfig::default(),
    };
    let (cfg_w, cfg_t) = cfg.correlate.as_ref().map(|c| (c.bin_ps, c.range_ps)).unwrap_or((500, 100_000));
    let w = a.bin_ps.unwrap_or(cfg_w);
    let range = a.range_ps.unwrap_or(cfg_t);
    if w == 0 || range == 0 || (2 * range) % w != 0 {
        return Err(usage(format!("bin width {w} ps must divide twice the range {range} ps")));
    }
    let stream = match a.inputs.as_slice() {
        [one] => read_tags(one)?,
        [first, second] => {
            let ta: Vec<u64> = read_tags(first)?.tags().iter().map(|t| t.timestamp_ps).collect();
            let tb: Vec<u64> = read_tags(second)?.tags().iter().map(|t| t.timestamp_ps).collect();
            TagStream::from_channels(&ta, &tb).context("tags")?
        }
        _ => unreachable!("clap limits the inputs to one or two"),
    };
    let mut h = correlate_stream(&stream, w, range, rayon::current_num_threads()).context("correlator")?;
    if let Some(t) = a.t_total_ps {
        h.normalize(t).context("correlator")?;
    }
    let mut out = sink(&a.out)?;
    h.write_csv(&mut out).context("correlator")?;
    out.flush()?;
    Ok(())
}

fn model_of(m: ModelArg, damping: Option<DampingArg>) -> FitModel {
    match m {
        ModelArg::Lorentzian => FitModel::LorentzianLine,
        ModelArg::Saturation => FitModel::Saturation,
        ModelArg::PowerBroadening => FitModel::PowerBroadening,
        ModelArg::RabiG2 => FitModel::RabiG2 {
            damping: match damping.unwrap_or(DampingArg::FourierLimited) {
                DampingArg::FourierLimited => RabiDamping::FourierLimited,
                DampingArg::Free => RabiDamping::Free,
            },
        },
    }
}

/// Reads `x,y[,sigma]` rows, or a histogram CSV (`tau_ps,count,g2,g2_err`)
/// as delay in seconds against normalized g2.
pub fn read_series(reader: impl BufRead, counts: bool) -> Result<Series> {
    let mut lines = reader.lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    let histogram = first.trim() == fiberphoton::correlator::HISTOGRAM_CSV_HEADER;
    let numeric = |s: &str| s.split(',').all(|f| f.trim().parse::<f64>().is_ok());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    if numeric(&first) {
        rows.push(first.split(',').map(|f| f.trim().parse().unwrap()).collect());
    }
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|_| usage(format!("fitkit: line {}: cannot parse `{line}`", i + 2)))?);
    }
    if histogram {
        // g2_err is √count·scale; empty bins get the one-count floor.
        let scale = rows
            .iter()
            .find(|r| r.len() == 4 && r[1] > 0.0)
            .map(|r| r[2] / r[1])
            .ok_or_else(|| usage("fitkit: histogram is empty or not normalized"))?;
        let x = rows.iter().map(|r| r[0] * 1e-12).collect();
        let y = rows.iter().map(|r| r[2]).collect();
        let s = rows.iter().map(|r| r[1].max(1.0).sqrt() * scale).collect();
        return Ok(Series::new(x, y).with_sigma(s));
    }
    let width = rows.first().map(Vec::len).unwrap_or(0);
    if !(2..=3).contains(&width) || rows.iter().any(|r| r.len() != width) {
        return Err(usage("fitkit: expected 2 or 3 numeric columns (x,y[,sigma]) in every row"));
    }
    let x = rows.iter().map(|r| r[0]).collect();
    let y = rows.iter().map(|r| r[1]).collect();
    let mut series = Series::new(x, y);
    if width == 3 {
        series = series.with_sigma(rows.iter().map(|r| r[2]).collect());
    }
    if counts {
        series = series.as_counts();
    }
    Ok(series)
}

fn fit_cmd(a: &FitArgs) -> Result<()> {
    let model = model_of(a.model, a.damping);
    let mut data = read_series(open(&a.data)?, a.counts)?;
    if a.bg_slope != 0.0 || a.bg_offset != 0.0 {
        for (y, x) in data.y.iter_mut().zip(&data.x) {
            *y -= a.bg_offset + a.bg_slope * x;
        }
    }
    let names = model.param_names();
    let mut hold = Vec::new();
    for name in &a.hold {
        let i = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| usage(format!("fitkit: unknown parameter `{name}`; expected one of {names:?}")))?;
        hold.push(i);
    }
    if let Some(init) = &a.init {
        if init.len() != names.len() {
            return Err(usage(format!("fitkit: --init needs {} values ({names:?})", names.len())));
        }
    }
    let options = FitOptions {
        max_iterations: a.max_iterations,
        hold,
        ..FitOptions::default()
    };
    let fit = fit_curve_with(model, &data, a.init.as_deref(), &options).map_err(|e| match e {
        fiberphoton::fitkit::FitError::NonFiniteModel => anyhow::Error::new(e).context("fitkit"),
        other => usage(format!("fitkit: {other}")),
    })?;
    write_json(&a.out, &fit)
}

#[derive(Debug, Serialize)]
pub struct DemoReport {
    pub schema_version: u32,
    pub seed: u64,
    pub duration_s: f64,
    pub tags_a: usize,
    pub tags_b: usize,
    pub rabi_true_mhz: f64,
    pub rabi_fit_mhz: f64,
    pub rabi_fit_err_mhz: f64,
    pub gamma_par_fit_mhz: f64,
    pub rho_true: f64,
    pub rho_fit: f64,
    pub rho_fit_err: f64,
    /// Mixed-model g2(0) = 1 − ρ².
    pub g2_zero: f64,
    pub g2_zero_err: f64,
    /// Measured g2 in the bin starting at zero delay, and its background-corrected value.
    pub g2_zero_bin: f64,
    pub g2_zero_bin_corrected: f64,
    pub reduced_chi2: f64,
    pub converged: bool,
}

fn demo_config(a: &DemoArgs) -> Result<(SimConfig, u64, u64, f64)> {
    if let Some(path) = &a.config {
        let cfg = config::load(path)?;
        let sim = cfg.sim()?;
        let (w, t) = cfg.correlate.as_ref().map(|c| (c.bin_ps, c.range_ps)).unwrap_or((a.bin_ps, a.range_ps));
        let rho = cfg.sim.as_ref().and_then(|s| s.rho).unwrap_or(1.0);
        return Ok((sim, w, t, rho));
    }
    if !(a.rho > 0.0 && a.rho <= 1.0) {
        return Err(usage("--rho must be in (0, 1]"));
    }
    let emitter = TwoLevelEmitter::fourier_limited(mhz(17.0), 0.0)?;
    let drive = DriveField::resonant(mhz(42.0))?;
    let mut sim = SimConfig::new(drive, emitter, a.duration_s, a.seed);
    // No dead time: the fitted mixed model is then exact at every delay.
    sim.dead_time_s = 0.0;
    let sim = sim.with_signal_fraction(a.rho);
    sim.validate().map_err(|e| usage(format!("stream_sim: {e}")))?;
    Ok((sim, a.bin_ps, a.range_ps, a.rho))
}

fn demo(a: &DemoArgs) -> Result<()> {
    let (sim, w, range, rho_true) = demo_config(a)?;
    if w == 0 || range == 0 || (2 * range) % w != 0 {
        return Err(usage(format!("bin width {w} ps must divide twice the range {range} ps")));
    }
    let stream = simulate(&sim).context("stream_sim")?;
    let h: G2Histogram = correlate_stream(&stream, w, range, rayon::current_num_threads()).context("correlator")?;
    let (x, y, e) = h.fit_series();
    let model = FitModel::RabiG2 {
        damping: RabiDamping::FourierLimited,
    };
    let fit: FitResult =
        fit_curve_with(model, &Series::new(x, y).with_sigma(e), None, &FitOptions::default()).context("fitkit")?;
    let rabi = fit.get("rabi").expect("rabi parameter");
    let gpar = fit.get("gamma_par").expect("gamma_par parameter");
    let rho = fit.get("rho").expect("rho parameter");
    let g0 = 1.0 - rho.value * rho.value;
    let zero_bin = h.g2[h.bin_of(0).expect("zero delay lies inside the range")];
    let report = DemoReport {
        schema_version: SCHEMA_VERSION,
        seed: sim.seed,
        duration_s: sim.duration_s,
        tags_a: stream.count(Channel::A),
        tags_b: stream.count(Channel::B),
        rabi_true_mhz: sim.drive.rabi() / (2.0 * PI * 1e6),
        rabi_fit_mhz: rabi.value / (2.0 * PI * 1e6),
        rabi_fit_err_mhz: rabi.std_error / (2.0 * PI * 1e6),
        gamma_par_fit_mhz: gpar.value / (2.0 * PI * 1e6),
        rho_true,
        rho_fit: rho.value,
        rho_fit_err: rho.std_error,
        g2_zero: g0,
        g2_zero_err: 2.0 * rho.value * rho.std_error,
        g2_zero_bin: zero_bin,
        g2_zero_bin_corrected: correct_g2_background(zero_bin, rho.value).context("emitter_model")?.value,
        reduced_chi2: fit.reduced_chi2,
        converged: fit.converged,
    };
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let mut out = BufWriter::new(File::create(dir.join("histogram.csv"))?);
        h.write_csv(&mut out).context("correlator")?;
        out.flush()?;
        write_json(&Some(dir.join("fit.json")), &fit)?;
    }
    write_json(&None, &report)
}

fn scan_synth(a: &ScanArgs) -> Result<()> {
    let cfg = ScanConfig {
        n_molecules: a.molecules,
        f_min_mhz: a.f_min_mhz,
        f_max_mhz: a.f_max_mhz,
        points: a.points,
        power_nw: a.power_nw,
        i_sat_nw: a.i_sat_nw,
        gamma0_mhz: a.gamma0_mhz,
        r_inf_cps: a.r_inf_cps,
        background_cps: a.background_cps,
        dwell_s: a.dwell_s,
        layer_um: a.layer_um,
        noise: a.noise,
        seed: a.seed,
    };
    let scan = synth_excitation_scan(&cfg).map_err(|e| usage(format!("spectra: {e}")))?;
    let mut w = sink(&a.out)?;
    writeln!(w, "frequency_mhz,counts")?;
    for (f, c) in scan.frequency_mhz.iter().zip(&scan.counts) {
        writeln!(w, "{f},{c}")?;
    }
    w.flush()?;
    if let Some(path) = &a.lines_out {
        write_json(&Some(path.clone()), &json!({ "schema_version": SCHEMA_VERSION, "config": cfg, "lines": scan.lines }))?;
    }
    Ok(())
}

fn read_spectrum(path: &Path, label: &str) -> Result<SpectrumTrace> {
    SpectrumTrace::read_csv(open(path)?, label).with_context(|| format!("spectra: {}", path.display()))
}

fn filter(a: &FilterArgs) -> Result<()> {
    let spectrum = match (&a.spectrum, &a.uniform_nm) {
        (Some(p), _) => read_spectrum(p, "signal")?,
        (None, Some(r)) => SpectrumTrace::uniform(r[0], r[1], 1001, 1.0).map_err(|e| usage(format!("spectra: {e}")))?,
        (None, None) => bundled_dbatt_spectrum(),
    };
    let (on, off) = match (&a.window, &a.config) {
        (Some(v), _) => (v[0], v[1]),
        (None, Some(p)) => {
            let cfg = config::load(p)?;
            let s = cfg.spectra.ok_or_else(|| usage("config: missing section `[spectra]`"))?;
            (s.cut_on_nm, s.cut_off_nm)
        }
        (None, None) => {
            let w = FilterWindow::stokes_band();
            (w.cut_on(), w.cut_off())
        }
    };
    let window = FilterWindow::new(on, off).map_err(|e| usage(format!("spectra: {e}")))?;
    let band = in_band_fraction(&spectrum, &window);
    let background = match (&a.background, a.flat_background) {
        (Some(p), _) => Some(read_spectrum(p, "background")?),
        (None, Some(level)) => {
            let (lo, hi) = spectrum.range();
            Some(SpectrumTrace::uniform(lo, hi, 2, level).map_err(|e| usage(format!("spectra: {e}")))?)
        }
        (None, None) => None,
    };
    let snr = match &background {
        Some(b) => Some(window_snr(&spectrum, b, &window).context("spectra")?),
        None => None,
    };
    let best = match (&background, a.optimize) {
        (Some(b), true) => {
            let objective = match a.objective {
                ObjectiveArg::SignalToBackground => WindowObjective::SignalToBackground,
                ObjectiveArg::ShotNoise => WindowObjective::ShotNoiseSnr,
            };
            Some(optimize_window(&spectrum, b, objective, a.step_nm).context("spectra")?)
        }
        (None, true) => return Err(usage("--optimize needs --background or --flat-background")),
        _ => None,
    };
    write_json(
        &a.out,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "spectrum": spectrum.label,
            "window": window,
            "in_band_fraction": band.fraction,
            "diagnostic": band.diagnostic,
            "snr": snr,
            "optimized": best,
        }),
    )
}

fn raman(a: &RamanArgs) -> Result<()> {
    let factor = raman_reduction_factor(a.from_nm, a.to_nm).map_err(|e| usage(format!("spectra: {e}")))?;
    write_json(
        &a.out,
        &json!({ "schema_version": SCHEMA_VERSION, "from_nm": a.from_nm, "to_nm": a.to_nm, "factor": factor }),
    )
}
