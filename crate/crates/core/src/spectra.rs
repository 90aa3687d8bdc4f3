//! Spectral bookkeeping for filter design.
//!
//! A [`SpectrumTrace`] is treated as the piecewise-linear function through its
//! samples, so every band integral is the exact trapezoid integral of that
//! function, including partial intervals at the window edges. Filter edges
//! are ideal steps.

use std::io::{BufRead, BufWriter, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emitter_model::{broadened_linewidth, lorentzian_line};
use crate::interface_optics::{
    collection_efficiency_with_points, DipoleEmitter, FiberSpec, OpticalInterface, Orientation,
};

pub const SPECTRUM_CSV_HEADER: &str = "wavelength_nm,counts";

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("wavelength grid must be strictly increasing with at least two points")]
    BadGrid,
    #[error("grid and counts lengths differ ({grid} vs {counts})")]
    LengthMismatch { grid: usize, counts: usize },
    #[error("counts must be finite and non-negative")]
    BadCounts,
    #[error("cut_on ({cut_on} nm) must be below cut_off ({cut_off} nm)")]
    BadWindow { cut_on: f64, cut_off: f64 },
    #[error("spectra carry different units: `{0}` vs `{1}`")]
    UnitMismatch(String, String),
    #[error("spectra do not overlap")]
    NoOverlap,
    #[error("search step must be positive, got {0} nm")]
    BadStep(f64),
    #[error("wavelengths must be positive, got {0} and {1}")]
    BadWavelength(f64, f64),
    #[error("invalid scan parameter: {0}")]
    BadScan(String),
    #[error("malformed spectrum file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTrace {
    wavelength_nm: Vec<f64>,
    counts: Vec<f64>,
    pub label: String,
    /// Unit of `counts`, compared before spectra are combined.
    pub unit: String,
}

impl SpectrumTrace {
    pub fn new(wavelength_nm: Vec<f64>, counts: Vec<f64>, label: impl Into<String>) -> Result<Self, SpectraError> {
        if wavelength_nm.len() != counts.len() {
            return Err(SpectraError::LengthMismatch {
                grid: wavelength_nm.len(),
                counts: counts.len(),
            });
        }
        if wavelength_nm.len() < 2
            || wavelength_nm.iter().any(|v| !v.is_finite())
            || wavelength_nm.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(SpectraError::BadGrid);
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(SpectraError::BadCounts);
        }
        Ok(Self {
            wavelength_nm,
            counts,
            label: label.into(),
            unit: "counts".into(),
        })
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = unit.into();
        self
    }

    /// Constant level on `n` evenly spaced points over `[lo, hi]`.
    pub fn uniform(lo_nm: f64, hi_nm: f64, n: usize, level: f64) -> Result<Self, SpectraError> {
        Self::from_fn(lo_nm, hi_nm, n, "uniform", |_| level)
    }

    pub fn from_fn(
        lo_nm: f64,
        hi_nm: f64,
        n: usize,
        label: impl Into<String>,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self, SpectraError> {
        if n < 2 || !(hi_nm > lo_nm) {
            return Err(SpectraError::BadGrid);
        }
        let step = (hi_nm - lo_nm) / (n - 1) as f64;
        let grid: Vec<f64> = (0..n)
            .map(|i| if i + 1 == n { hi_nm } else { lo_nm + step * i as f64 })
            .collect();
        let counts = grid.iter().map(|&x| f(x)).collect();
        Self::new(grid, counts, label)
    }

    pub fn wavelength_nm(&self) -> &[f64] {
        &self.wavelength_nm
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn range(&self) -> (f64, f64) {
        (self.wavelength_nm[0], *self.wavelength_nm.last().unwrap())
    }

    fn mean_step(&self) -> f64 {
        let (lo, hi) = self.range();
        (hi - lo) / (self.wavelength_nm.len() - 1) as f64
    }

    /// Linear interpolation; zero outside the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        let g = &self.wavelength_nm;
        let (lo, hi) = self.range();
        if !(x >= lo && x <= hi) {
            return 0.0;
        }
        let i = g.partition_point(|&v| v <= x).clamp(1, g.len() - 1);
        let t = (x - g[i - 1]) / (g[i] - g[i - 1]);
        self.counts[i - 1] + t * (self.counts[i] - self.counts[i - 1])
    }

    /// Exact integral of the interpolant over `[a, b]` clipped to the grid.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = self.range();
        let a = a.max(lo);
        let b = b.min(hi);
        if !(b > a) {
            return 0.0;
        }
        let g = &self.wavelength_nm;
        let first = g.partition_point(|&v| v <= a);
        let last = g.partition_point(|&v| v < b);
        let mut knots = Vec::with_capacity(last.saturating_sub(first) + 2);
        knots.push(a);
        knots.extend_from_slice(&g[first..last]);
        knots.push(b);
        knots
            .windows(2)
            .map(|w| 0.5 * (w[1] - w[0]) * (self.value_at(w[0]) + self.value_at(w[1])))
            .sum()
    }

    pub fn total(&self) -> f64 {
        let (lo, hi) = self.range();
        self.integrate(lo, hi)
    }

    /// Interpolates onto `grid`, which must lie inside this trace's range.
    fn resample(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&x| self.value_at(x)).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SpectraError> {
        let mut w = BufWriter::new(out);
        writeln!(w, "{SPECTRUM_CSV_HEADER}")?;
        for (x, c) in self.wavelength_nm.iter().zip(&self.counts) {
            writeln!(w, "{x},{c}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, label: impl Into<String>) -> Result<Self, SpectraError> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| SpectraError::Malformed("empty file".into()))??;
        if header.trim() != SPECTRUM_CSV_HEADER {
            return Err(SpectraError::Malformed(format!(
                "expected header `{SPECTRUM_CSV_HEADER}`, found `{header}`"
            )));
        }
        let (mut grid, mut counts) = (Vec::new(), Vec::new());
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = line
                .split_once(',')
                .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)));
            let (x, c) = parsed.ok_or_else(|| SpectraError::Malformed(format!("line {}: `{line}`", i + 2)))?;
            grid.push(x);
            counts.push(c);
        }
        Self::new(grid, counts, label)
    }
}

/// Ideal band-pass between two step edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterWindow {
    cut_on: f64,
    cut_off: f64,
}

impl FilterWindow {
    pub fn new(cut_on_nm: f64, cut_off_nm: f64) -> Result<Self, SpectraError> {
        if cut_on_nm.is_finite() && cut_off_nm.is_finite() && cut_on_nm < cut_off_nm {
            Ok(Self {
                cut_on: cut_on_nm,
                cut_off: cut_off_nm,
            })
        } else {
            Err(SpectraError::BadWindow {
                cut_on: cut_on_nm,
                cut_off: cut_off_nm,
            })
        }
    }

    /// The long-pass / short-pass pair used for the Stokes-shifted band.
    pub fn stokes_band() -> Self {
        Self::new(626.0, 678.0).expect("valid")
    }

    pub fn cut_on(&self) -> f64 {
        self.cut_on
    }

    pub fn cut_off(&self) -> f64 {
        self.cut_off
    }

    pub fn width(&self) -> f64 {
        self.cut_off - self.cut_on
    }

    pub fn contains(&self, other: &FilterWindow) -> bool {
        self.cut_on <= other.cut_on && other.cut_off <= self.cut_off
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InBand {
    pub fraction: f64,
    pub diagnostic: Option<String>,
}

pub fn in_band_fraction(spectrum: &SpectrumTrace, window: &FilterWindow) -> InBand {
    let (lo, hi) = spectrum.range();
    if window.cut_off <= lo || window.cut_on >= hi {
        return InBand {
            fraction: 0.0,
            diagnostic: Some(format!(
                "window [{}, {}] nm does not overlap the grid [{lo}, {hi}] nm",
                window.cut_on, window.cut_off
            )),
        };
    }
    let total = spectrum.total();
    if total <= 0.0 {
        return InBand {
            fraction: 0.0,
            diagnostic: Some("spectrum integrates to zero".into()),
        };
    }
    InBand {
        fraction: (spectrum.integrate(window.cut_on, window.cut_off) / total).clamp(0.0, 1.0),
        diagnostic: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSnr {
    pub signal: f64,
    pub background: f64,
    pub ratio: f64,
    /// The background integral was zero and replaced by machine epsilon.
    pub background_floored: bool,
}

/// Signal and background on a shared grid: the finer of the two, clipped to
/// their overlap, with the other trace linearly interpolated onto it.
fn common_grid(signal: &SpectrumTrace, background: &SpectrumTrace) -> Result<(SpectrumTrace, SpectrumTrace), SpectraError> {
    if signal.unit != background.unit {
        return Err(SpectraError::UnitMismatch(signal.unit.clone(), background.unit.clone()));
    }
    let (s_lo, s_hi) = signal.range();
    let (b_lo, b_hi) = background.range();
    let lo = s_lo.max(b_lo);
    let hi = s_hi.min(b_hi);
    if !(hi > lo) {
        return Err(SpectraError::NoOverlap);
    }
    let finer = if signal.mean_step() <= background.mean_step() { signal } else { background };
    let mut grid: Vec<f64> = finer.wavelength_nm.iter().copied().filter(|&x| x > lo && x < hi).collect();
    grid.insert(0, lo);
    grid.push(hi);
    let s = SpectrumTrace::new(grid.clone(), signal.resample(&grid), signal.label.clone())?.with_unit(signal.unit.clone());
    let b = SpectrumTrace::new(grid.clone(), background.resample(&grid), background.label.clone())?
        .with_unit(background.unit.clone());
    Ok((s, b))
}

fn snr_from(s: f64, b: f64) -> WindowSnr {
    let floored = b <= 0.0;
    let b_eff = if floored { f64::EPSILON } else { b };
    WindowSnr {
        signal: s,
        background: b,
        ratio: s / b_eff,
        background_floored: floored,
    }
}

pub fn window_snr(signal: &SpectrumTrace, background: &SpectrumTrace, window: &FilterWindow) -> Result<WindowSnr, SpectraError> {
    let (s, b) = common_grid(signal, background)?;
    Ok(snr_from(s.integrate(window.cut_on, window.cut_off), b.integrate(window.cut_on, window.cut_off)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowObjective {
    /// `S / B`
    SignalToBackground,
    /// `S / √(S + B)`
    ShotNoiseSnr,
}

impl WindowObjective {
    pub fn score(self, s: f64, b: f64) -> f64 {
        match self {
            WindowObjective::SignalToBackground => snr_from(s, b).ratio,
            WindowObjective::ShotNoiseSnr => {
                let total = s + b;
                if total > 0.0 {
                    s / total.sqrt()
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowChoice {
    pub window: FilterWindow,
    pub score: f64,
    pub snr: WindowSnr,
}

const TIE_TOLERANCE: f64 = 1e-12;

/// True if `(score, w)` should replace the current best.
fn beats(score: f64, w: &FilterWindow, best_score: f64, best: &FilterWindow) -> bool {
    let tol = TIE_TOLERANCE * best_score.abs().max(1.0);
    if score > best_score + tol {
        return true;
    }
    if score < best_score - tol {
        return false;
    }
    if w.width() != best.width() {
        return w.width() > best.width();
    }
    w.cut_on < best.cut_on
}

/// Candidate edges `lo + k·step` inside the overlap, plus the upper end.
pub fn edge_grid(lo: f64, hi: f64, step_nm: f64) -> Vec<f64> {
    let n = ((hi - lo) / step_nm + 1e-9).floor() as usize;
    let mut edges: Vec<f64> = (0..=n).map(|k| lo + step_nm * k as f64).collect();
    if hi - edges[n] > 1e-9 * step_nm {
        edges.push(hi);
    }
    edges
}

/// Exhaustive search over every edge pair on the step grid.
pub fn optimize_window(
    signal: &SpectrumTrace,
    background: &SpectrumTrace,
    objective: WindowObjective,
    step_nm: f64,
) -> Result<WindowChoice, SpectraError> {
    if !(step_nm.is_finite() && step_nm > 0.0) {
        return Err(SpectraError::BadStep(step_nm));
    }
    let (s, b) = common_grid(signal, background)?;
    let (lo, hi) = s.range();
    let edges = edge_grid(lo, hi, step_nm);
    // Cumulative integrals at each edge make every window O(1).
    let cum = |t: &SpectrumTrace| -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = vec![0.0];
        for w in edges.windows(2) {
            acc += t.integrate(w[0], w[1]);
            out.push(acc);
        }
        out
    };
    let cs = cum(&s);
    let cb = cum(&b);
    let mut best: Option<WindowChoice> = None;
    for i in 0..edges.len() {
        for j in i + 1..edges.len() {
            let window = FilterWindow {
                cut_on: edges[i],
                cut_off: edges[j],
            };
            let (sv, bv) = (cs[j] - cs[i], cb[j] - cb[i]);
            let score = objective.score(sv, bv);
            let replace = match &best {
                None => true,
                Some(cur) => beats(score, &window, cur.score, &cur.window),
            };
            if replace {
                best = Some(WindowChoice {
                    window,
                    score,
                    snr: snr_from(sv, bv),
                });
            }
        }
    }
    best.ok_or(SpectraError::NoOverlap)
}

/// Factor by which a λ⁻⁴ Raman background drops when the detection moves
/// from `lambda_from` to `lambda_to`.
pub fn raman_reduction_factor(lambda_from_nm: f64, lambda_to_nm: f64) -> Result<f64, SpectraError> {
    if !(lambda_from_nm.is_finite() && lambda_to_nm.is_finite() && lambda_from_nm > 0.0 && lambda_to_nm > 0.0) {
        return Err(SpectraError::BadWavelength(lambda_from_nm, lambda_to_nm));
    }
    Ok((lambda_to_nm / lambda_from_nm).powi(4))
}

/// Wavelength of a line shifted to the red by `shift_cm` wavenumbers.
pub fn stokes_wavelength_nm(lambda_nm: f64, shift_cm: f64) -> f64 {
    1e7 / (1e7 / lambda_nm - shift_cm)
}

fn gaussian(x: f64, center: f64, fwhm: f64) -> f64 {
    let s = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    (-0.5 * ((x - center) / s).powi(2)).exp()
}

/// Illustrative single-molecule emission spectrum: a zero-phonon line at
/// 589 nm, its 241 cm⁻¹ vibronic replica and broad red sidebands. The shape
/// is made up for filter studies and carries no spectroscopic accuracy.
pub fn bundled_dbatt_spectrum() -> SpectrumTrace {
    let zpl = 589.0;
    let vib = stokes_wavelength_nm(zpl, 241.0);
    let bands = [
        (zpl, 0.4, 1.0),
        (vib, 0.8, 0.35),
        (stokes_wavelength_nm(zpl, 1250.0), 6.0, 0.10),
        (stokes_wavelength_nm(zpl, 1600.0), 10.0, 0.12),
        (stokes_wavelength_nm(zpl, 2400.0), 25.0, 0.06),
        (stokes_wavelength_nm(zpl, 3000.0), 40.0, 0.04),
    ];
    SpectrumTrace::from_fn(580.0, 760.0, 1801, "synthetic DBATT-like", |x| {
        bands.iter().map(|&(c, w, a)| a * gaussian(x, c, w)).sum::<f64>()
    })
    .expect("valid grid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub n_molecules: usize,
    /// Laser detuning range in MHz.
    pub f_min_mhz: f64,
    pub f_max_mhz: f64,
    pub points: usize,
    pub power_nw: f64,
    pub i_sat_nw: f64,
    /// Low-power linewidth (FWHM) in MHz.
    pub gamma0_mhz: f64,
    /// Saturated count rate of a parallel molecule on the fiber face.
    pub r_inf_cps: f64,
    pub background_cps: f64,
    pub dwell_s: f64,
    /// Molecules sit uniformly within this distance of the fiber face.
    pub layer_um: f64,
    /// Draw Poisson counts instead of expected values.
    pub noise: bool,
    pub seed: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            n_molecules: 5,
            f_min_mhz: -5000.0,
            f_max_mhz: 5000.0,
            points: 4001,
            power_nw: 50.0,
            i_sat_nw: 60.0,
            gamma0_mhz: 28.5,
            r_inf_cps: 50e3,
            background_cps: 500.0,
            dwell_s: 0.01,
            layer_um: 1.0,
            noise: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthLine {
    pub center_mhz: f64,
    pub fwhm_mhz: f64,
    pub peak_cps: f64,
    pub distance_um: f64,
    /// Dipole tilt from the interface normal, radians.
    pub tilt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationScan {
    pub frequency_mhz: Vec<f64>,
    pub counts: Vec<f64>,
    pub lines: Vec<SynthLine>,
}

const SCAN_QUADRATURE_POINTS: usize = 4096;

/// Synthetic fluorescence-excitation scan of randomly placed molecules.
pub fn synth_excitation_scan(cfg: &ScanConfig) -> Result<ExcitationScan, SpectraError> {
    let positive = [cfg.power_nw, cfg.i_sat_nw, cfg.gamma0_mhz, cfg.r_inf_cps, cfg.dwell_s, cfg.layer_um];
    if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(SpectraError::BadScan("power, saturation, width, rate, dwell and layer must be > 0".into()));
    }
    if !(cfg.background_cps.is_finite() && cfg.background_cps >= 0.0) {
        return Err(SpectraError::BadScan("background must be >= 0".into()));
    }
    if cfg.points < 2 || !(cfg.f_max_mhz > cfg.f_min_mhz) {
        return Err(SpectraError::BadScan("need at least 2 points over a non-empty range".into()));
    }
    let interface = OpticalInterface::tetradecane_on_fiber();
    let fiber = FiberSpec::uhna7();
    let wavelength = 589.0;
    let efficiency = |orientation: Orientation, d: f64| -> f64 {
        let dipole = DipoleEmitter::new(orientation, d, wavelength).expect("valid dipole");
        collection_efficiency_with_points(&dipole, &interface, &fiber, Some(SCAN_QUADRATURE_POINTS))
    };
    let eta_ref = efficiency(Orientation::Parallel, 0.0);
    let s = cfg.power_nw / cfg.i_sat_nw;
    let fwhm = broadened_linewidth(s, cfg.gamma0_mhz);
    let sat = s / (1.0 + s);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lines: Vec<SynthLine> = (0..cfg.n_molecules)
        .map(|_| {
            let center = rng.random_range(cfg.f_min_mhz..cfg.f_max_mhz);
            let distance = rng.random_range(0.0..cfg.layer_um);
            // Isotropic orientations: cos of the tilt from the normal is uniform.
            let tilt = rng.random_range(0.0f64..1.0).acos();
            let eta = efficiency(Orientation::Tilted(tilt), distance);
            SynthLine {
                center_mhz: center,
                fwhm_mhz: fwhm,
                peak_cps: cfg.r_inf_cps * sat * eta / eta_ref,
                distance_um: distance,
                tilt,
            }
        })
        .collect();

    let step = (cfg.f_max_mhz - cfg.f_min_mhz) / (cfg.points - 1) as f64;
    let frequency: Vec<f64> = (0..cfg.points).map(|i| cfg.f_min_mhz + step * i as f64).collect();
    let counts = frequency
        .iter()
        .map(|&f| {
            let rate = cfg.background_cps
                + lines
                    .iter()
                    .map(|l| lorentzian_line(f, l.center_mhz, l.fwhm_mhz, l.peak_cps, 0.0))
                    .sum::<f64>();
            let mean = rate * cfg.dwell_s;
            if cfg.noise && mean > 0.0 {
                Poisson::new(mean).expect("positive mean").sample(&mut rng)
            } else {
                mean
            }
        })
        .collect();
    Ok(ExcitationScan {
        frequency_mhz: frequency,
        counts,
        lines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_spectrum_length_ratio() {
        let s = SpectrumTrace::uniform(600.0, 700.0, 101, 3.0).unwrap();
        let f = in_band_fraction(&s, &FilterWindow::stokes_band());
        assert!((f.fraction - 0.52).abs() < 1e-12);
        assert!(f.diagnostic.is_none());
        let all = in_band_fraction(&s, &FilterWindow::new(500.0, 800.0).unwrap());
        assert_eq!(all.fraction, 1.0);
    }

    #[test]
    fn disjoint_window_reports_diagnostic() {
        let s = SpectrumTrace::uniform(600.0, 700.0, 11, 1.0).unwrap();
        let f = in_band_fraction(&s, &FilterWindow::new(710.0, 720.0).unwrap());
        assert_eq!(f.fraction, 0.0);
        assert!(f.diagnostic.is_some());
    }

    #[test]
    fn partial_interval_is_exact() {
        // Linear ramp: the integral of x over [a, b] is known in closed form.
        let s = SpectrumTrace::from_fn(0.0, 10.0, 3, "ramp", |x| x).unwrap();
        let got = s.integrate(1.3, 7.9);
        assert!((got - 0.5 * (7.9f64.powi(2) - 1.3f64.powi(2))).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_traces() {
        assert!(SpectrumTrace::new(vec![1.0, 1.0], vec![0.0, 0.0], "").is_err());
        assert!(SpectrumTrace::new(vec![1.0, 2.0], vec![0.0, -1.0], "").is_err());
        assert!(SpectrumTrace::new(vec![1.0, 2.0], vec![0.0], "").is_err());
        assert!(FilterWindow::new(678.0, 626.0).is_err());
    }

    #[test]
    fn snr_flags_zero_background() {
        let s = SpectrumTrace::uniform(600.0, 700.0, 11, 1.0).unwrap();
        let b = SpectrumTrace::uniform(600.0, 700.0, 11, 0.0).unwrap();
        let r = window_snr(&s, &b, &FilterWindow::stokes_band()).unwrap();
        assert!(r.background_floored);
        assert!((r.signal - 52.0).abs() < 1e-9);
        let same = window_snr(&s, &s, &FilterWindow::stokes_band()).unwrap();
        assert_eq!(same.ratio, 1.0);
        let other = b.clone().with_unit("cps");
        assert!(matches!(
            window_snr(&s, &other, &FilterWindow::stokes_band()),
            Err(SpectraError::UnitMismatch(..))
        ));
    }

    #[test]
    fn flat_inputs_pick_full_range() {
        let s = SpectrumTrace::uniform(600.0, 700.0, 51, 2.0).unwrap();
        let b = SpectrumTrace::uniform(600.0, 700.0, 51, 1.0).unwrap();
        let c = optimize_window(&s, &b, WindowObjective::SignalToBackground, 5.0).unwrap();
        assert_eq!((c.window.cut_on(), c.window.cut_off()), (600.0, 700.0));
    }

    #[test]
    fn spike_is_enclosed() {
        let s = SpectrumTrace::from_fn(600.0, 700.0, 101, "spike", |x| if (x - 640.0).abs() < 0.5 { 10.0 } else { 0.0 })
            .unwrap();
        let b = SpectrumTrace::uniform(600.0, 700.0, 101, 1.0).unwrap();
        let c = optimize_window(&s, &b, WindowObjective::SignalToBackground, 1.0).unwrap();
        assert!(c.window.cut_on() <= 640.0 && c.window.cut_off() >= 640.0);
    }

    #[test]
    fn raman_examples() {
        assert!((raman_reduction_factor(589.0, 780.0).unwrap() - 3.0755).abs() < 1e-3);
        assert_eq!(raman_reduction_factor(600.0, 600.0).unwrap(), 1.0);
        assert_eq!(raman_reduction_factor(500.0, 1000.0).unwrap(), 16.0);
        assert!(raman_reduction_factor(0.0, 1.0).is_err());
    }

    #[test]
    fn vibronic_band_position() {
        let v = stokes_wavelength_nm(589.0, 241.0);
        assert!((1e7 / 589.0 - 1e7 / v - 241.0).abs() < 1e-9);
        let spec = bundled_dbatt_spectrum();
        assert!(spec.value_at(589.0) > spec.value_at(592.0));
    }

    #[test]
    fn empty_scan_is_flat_and_seeded_scans_repeat() {
        let cfg = ScanConfig {
            n_molecules: 0,
            points: 101,
            ..ScanConfig::default()
        };
        let flat = synth_excitation_scan(&cfg).unwrap();
        assert!(flat.counts.iter().all(|&c| c == cfg.background_cps * cfg.dwell_s));
        let noisy = ScanConfig {
            n_molecules: 3,
            noise: true,
            seed: 9,
            points: 101,
            ..ScanConfig::default()
        };
        assert_eq!(synth_excitation_scan(&noisy).unwrap(), synth_excitation_scan(&noisy).unwrap());
    }
}
