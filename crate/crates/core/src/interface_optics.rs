//! Far-field emission of a point dipole next to a planar dielectric interface
//! and the fraction of it collected by a fiber end-facet.
//!
//! Geometry: the emitter sits at height `d ≥ 0` in the upper medium
//! (`n_upper`), the fiber occupies the lower half-space (`n_lower`) with its
//! axis along the interface normal through the dipole. Polar angles are
//! measured from the hemisphere axis, i.e. from `+z` in the upper half-space
//! and from `-z` in the lower one.
//!
//! The upper far field is the coherent sum of the direct wave and the wave
//! reflected at the interface, with Fresnel coefficients and the round-trip
//! phase `2 k d cos θ`, `k = 2π n_upper / λ`. The lower far field is the
//! transmitted angular spectrum. When `n_lower > n_upper` the lower
//! hemisphere also receives evanescent ("forbidden") components beyond
//! `asin(n_upper/n_lower)`, attenuated as `exp(-2 k d |cos θ₁|)`.
//!
//! All densities are per unit solid angle and normalized to the total power
//! of the same dipole in a homogeneous `n_upper` medium, so an interface-free
//! configuration integrates to exactly one.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum number of polar samples used for any quadrature.
pub const MIN_QUADRATURE_POINTS: usize = 4096;

const MAX_QUADRATURE_POINTS: usize = 1 << 21;

/// Relative change between successive grid doublings at which refinement stops.
const REFINE_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("refractive index {0} is below 1 or not finite")]
    InvalidIndex(f64),
    #[error("dipole tilt {0} rad is outside [0, π/2]")]
    InvalidTilt(f64),
    #[error("dipole height {0} µm must be finite and ≥ 0")]
    InvalidHeight(f64),
    #[error("wavelength {0} nm must be finite and > 0")]
    InvalidWavelength(f64),
    #[error("numerical aperture {0} must lie in (0, 1]")]
    InvalidAperture(f64),
    #[error("numerical aperture {na} exceeds core index {n_core}")]
    ApertureExceedsCore { na: f64, n_core: f64 },
    #[error("core radius {0} µm must be > 0")]
    InvalidCoreRadius(f64),
    #[error("distance {0} µm must be finite and ≥ 0")]
    InvalidDistance(f64),
    #[error("invalid sweep: d_min={d_min}, d_max={d_max}, points={points}")]
    InvalidSweep { d_min: f64, d_max: f64, points: usize },
}

fn check_index(n: f64) -> Result<f64, OpticsError> {
    if n.is_finite() && n >= 1.0 {
        Ok(n)
    } else {
        Err(OpticsError::InvalidIndex(n))
    }
}

/// Two lossless half-spaces separated by a plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalInterface {
    n_upper: f64,
    n_lower: f64,
}

impl OpticalInterface {
    pub fn new(n_upper: f64, n_lower: f64) -> Result<Self, OpticsError> {
        Ok(Self {
            n_upper: check_index(n_upper)?,
            n_lower: check_index(n_lower)?,
        })
    }

    /// n-tetradecane host on a UHNA-class fiber core.
    pub fn tetradecane_on_fiber() -> Self {
        Self {
            n_upper: 1.53,
            n_lower: 1.501,
        }
    }

    pub fn n_upper(&self) -> f64 {
        self.n_upper
    }

    pub fn n_lower(&self) -> f64 {
        self.n_lower
    }

    /// Angle in the upper medium beyond which waves are totally reflected,
    /// if the lower medium is optically thinner.
    pub fn critical_angle(&self) -> Option<f64> {
        (self.n_lower < self.n_upper).then(|| (self.n_lower / self.n_upper).asin())
    }

    /// Angle in the lower medium beyond which only evanescent components of
    /// the emitter reach it, if the lower medium is optically denser.
    pub fn forbidden_light_angle(&self) -> Option<f64> {
        (self.n_upper < self.n_lower).then(|| (self.n_upper / self.n_lower).asin())
    }
}

/// Dipole orientation relative to the interface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// In the interface plane.
    Parallel,
    /// Along the interface normal.
    Orthogonal,
    /// Tilted by the given angle (radians) from the interface normal.
    Tilted(f64),
}

impl Orientation {
    /// Angle from the interface normal in radians.
    pub fn tilt(&self) -> f64 {
        match *self {
            Orientation::Parallel => FRAC_PI_2,
            Orientation::Orthogonal => 0.0,
            Orientation::Tilted(alpha) => alpha,
        }
    }

    /// Incoherent power weights `(orthogonal, parallel) = (cos²α, sin²α)`.
    pub fn weights(&self) -> (f64, f64) {
        match *self {
            Orientation::Parallel => (0.0, 1.0),
            Orientation::Orthogonal => (1.0, 0.0),
            Orientation::Tilted(alpha) => {
                let c = alpha.cos();
                (c * c, 1.0 - c * c)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleEmitter {
    orientation: Orientation,
    height_um: f64,
    wavelength_nm: f64,
}

impl DipoleEmitter {
    pub fn new(
        orientation: Orientation,
        height_um: f64,
        wavelength_nm: f64,
    ) -> Result<Self, OpticsError> {
        if let Orientation::Tilted(alpha) = orientation {
            if !(0.0..=FRAC_PI_2).contains(&alpha) {
                return Err(OpticsError::InvalidTilt(alpha));
            }
        }
        if !(height_um.is_finite() && height_um >= 0.0) {
            return Err(OpticsError::InvalidHeight(height_um));
        }
        if !(wavelength_nm.is_finite() && wavelength_nm > 0.0) {
            return Err(OpticsError::InvalidWavelength(wavelength_nm));
        }
        Ok(Self {
            orientation,
            height_um,
            wavelength_nm,
        })
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn height_um(&self) -> f64 {
        self.height_um
    }

    pub fn wavelength_nm(&self) -> f64 {
        self.wavelength_nm
    }

    /// Same emitter moved to another height.
    pub fn at_height(&self, height_um: f64) -> Result<Self, OpticsError> {
        Self::new(self.orientation, height_um, self.wavelength_nm)
    }

    /// Same emitter with another orientation.
    pub fn with_orientation(&self, orientation: Orientation) -> Result<Self, OpticsError> {
        Self::new(orientation, self.height_um, self.wavelength_nm)
    }
}

/// Step-index fiber whose core is treated as a sharp disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberSpec {
    numerical_aperture: f64,
    core_radius_um: f64,
    n_core: f64,
}

impl FiberSpec {
    pub fn new(numerical_aperture: f64, core_radius_um: f64, n_core: f64) -> Result<Self, OpticsError> {
        if !(numerical_aperture > 0.0 && numerical_aperture <= 1.0) {
            return Err(OpticsError::InvalidAperture(numerical_aperture));
        }
        let n_core = check_index(n_core)?;
        if numerical_aperture > n_core {
            return Err(OpticsError::ApertureExceedsCore {
                na: numerical_aperture,
                n_core,
            });
        }
        if !(core_radius_um.is_finite() && core_radius_um > 0.0) {
            return Err(OpticsError::InvalidCoreRadius(core_radius_um));
        }
        Ok(Self {
            numerical_aperture,
            core_radius_um,
            n_core,
        })
    }

    /// UHNA7: NA 0.41, 2.4 µm core diameter.
    pub fn uhna7() -> Self {
        Self {
            numerical_aperture: 0.41,
            core_radius_um: 1.2,
            n_core: 1.501,
        }
    }

    /// 460-HP class visible single-mode fiber: NA 0.13.
    pub fn hp460() -> Self {
        Self {
            numerical_aperture: 0.13,
            core_radius_um: 1.2,
            n_core: 1.501,
        }
    }

    pub fn numerical_aperture(&self) -> f64 {
        self.numerical_aperture
    }

    pub fn core_radius_um(&self) -> f64 {
        self.core_radius_um
    }

    pub fn n_core(&self) -> f64 {
        self.n_core
    }

    /// Distance at which the core's geometric solid angle takes over from the NA:
    /// `r / tan(asin NA)`.
    pub fn crossover_distance_um(&self) -> f64 {
        let na = self.numerical_aperture;
        if na >= 1.0 {
            return 0.0;
        }
        self.core_radius_um * (1.0 - na * na).sqrt() / na
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hemisphere {
    Upper,
    Lower,
}

/// Azimuth-averaged power density per steradian split by origin:
/// the orthogonal dipole part (p-polarized) and the parallel dipole's p and s parts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Density {
    perp: f64,
    par_p: f64,
    par_s: f64,
}

impl Density {
    fn total(&self) -> f64 {
        self.perp + self.par_p + self.par_s
    }

    fn weighted(self, w_perp: f64, w_par: f64) -> Self {
        Self {
            perp: w_perp * self.perp,
            par_p: w_par * self.par_p,
            par_s: w_par * self.par_s,
        }
    }
}

const ORTHO_NORM: f64 = 3.0 / (8.0 * PI);
const PARALLEL_NORM: f64 = 3.0 / (16.0 * PI);

/// Evaluates the far-field densities of one dipole/interface configuration.
#[derive(Debug, Clone, Copy)]
struct FarField {
    n1: f64,
    n2: f64,
    /// `2 k₁ d`, dimensionless.
    round_trip: f64,
    w_perp: f64,
    w_par: f64,
}

impl FarField {
    fn new(dipole: &DipoleEmitter, interface: &OpticalInterface) -> Self {
        let k1 = 2.0 * PI * interface.n_upper / (dipole.wavelength_nm * 1e-3);
        let (w_perp, w_par) = dipole.orientation.weights();
        Self {
            n1: interface.n_upper,
            n2: interface.n_lower,
            round_trip: 2.0 * k1 * dipole.height_um,
            w_perp,
            w_par,
        }
    }

    /// `cos θ` in a medium of index `n_to` for a wave at `cos θ = cos_from`
    /// in index `n_from`; imaginary with positive imaginary part when
    /// evanescent. Written via `cos_from` so grazing angles keep precision.
    fn cos_in(n_from: f64, n_to: f64, cos_from: f64) -> Complex64 {
        let x = ((n_to - n_from) * (n_to + n_from) + (n_from * cos_from).powi(2)) / (n_to * n_to);
        if x >= 0.0 {
            Complex64::new(x.sqrt(), 0.0)
        } else {
            Complex64::new(0.0, (-x).sqrt())
        }
    }

    fn upper(&self, theta: f64) -> Density {
        let (n1, n2) = (self.n1, self.n2);
        let (s1, c1) = theta.sin_cos();
        let c1c = Complex64::new(c1, 0.0);
        let c2 = Self::cos_in(n1, n2, c1);
        let rs = (c1c * n1 - c2 * n2) / (c1c * n1 + c2 * n2);
        let rp = (c1c * n2 - c2 * n1) / (c1c * n2 + c2 * n1);
        let phase = Complex64::from_polar(1.0, self.round_trip * c1);
        let one = Complex64::new(1.0, 0.0);
        Density {
            perp: ORTHO_NORM * s1 * s1 * (one + rp * phase).norm_sqr(),
            par_p: PARALLEL_NORM * c1 * c1 * (one - rp * phase).norm_sqr(),
            par_s: PARALLEL_NORM * (one + rs * phase).norm_sqr(),
        }
        .weighted(self.w_perp, self.w_par)
    }

    fn lower(&self, theta: f64) -> Density {
        let (n1, n2) = (self.n1, self.n2);
        let (s2, c2) = theta.sin_cos();
        let c2c = Complex64::new(c2, 0.0);
        // Transverse wavevector is continuous: n1 sin θ₁ = n2 sin θ₂.
        let sin1 = n2 * s2 / n1;
        let c1 = Self::cos_in(n2, n1, c2);
        // Transmission coefficients divided by cos θ₁; the 1/|cos θ₁|² Jacobian
        // of the angular spectrum cancels against them.
        let ts_red = Complex64::new(2.0 * n1, 0.0) / (c1 * n1 + c2c * n2);
        let tp_red = Complex64::new(2.0 * n1, 0.0) / (c1 * n2 + c2c * n1);
        let decay = (-self.round_trip * c1.im).exp();
        let jacobian = n2.powi(3) * c2 * c2 / n1.powi(3) * decay;
        Density {
            perp: jacobian * ORTHO_NORM * sin1 * sin1 * tp_red.norm_sqr(),
            par_p: jacobian * PARALLEL_NORM * c1.norm_sqr() * tp_red.norm_sqr(),
            par_s: jacobian * PARALLEL_NORM * ts_red.norm_sqr(),
        }
        .weighted(self.w_perp, self.w_par)
    }

    fn density(&self, hemisphere: Hemisphere, theta: f64) -> Density {
        match hemisphere {
            Hemisphere::Upper => self.upper(theta),
            Hemisphere::Lower => self.lower(theta),
        }
    }

    fn kink(&self, hemisphere: Hemisphere) -> Option<f64> {
        let interface = OpticalInterface {
            n_upper: self.n1,
            n_lower: self.n2,
        };
        match hemisphere {
            Hemisphere::Upper => interface.critical_angle(),
            Hemisphere::Lower => interface.forbidden_light_angle(),
        }
    }

    /// Power radiated into the polar cap `[0, theta_max]` of one hemisphere,
    /// trapezoidal in θ with a node on the kink, `n` intervals in total.
    fn cap_power(&self, hemisphere: Hemisphere, theta_max: f64, n: usize) -> f64 {
        let kink = self.kink(hemisphere).filter(|&k| k > 0.0 && k < theta_max);
        let integrand = |t: f64| 2.0 * PI * t.sin() * self.density(hemisphere, t).total();
        match kink {
            Some(k) => {
                let n_left = ((n as f64 * k / theta_max).round() as usize).clamp(1, n - 1);
                trapezoid(integrand, 0.0, k, n_left) + trapezoid(integrand, k, theta_max, n - n_left)
            }
            None => trapezoid(integrand, 0.0, theta_max, n),
        }
    }

    /// Cap power refined by grid doubling until successive values agree.
    fn cap_power_converged(&self, hemisphere: Hemisphere, theta_max: f64) -> f64 {
        if theta_max <= 0.0 {
            return 0.0;
        }
        refine(|n| self.cap_power(hemisphere, theta_max, n))
    }

    fn total_power(&self) -> f64 {
        self.cap_power_converged(Hemisphere::Upper, FRAC_PI_2)
            + self.cap_power_converged(Hemisphere::Lower, FRAC_PI_2)
    }
}

fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let interior: f64 = (1..n).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + interior)
}

fn refine(eval: impl Fn(usize) -> f64) -> f64 {
    let mut n = MIN_QUADRATURE_POINTS;
    let mut prev = eval(n);
    while n < MAX_QUADRATURE_POINTS {
        n *= 2;
        let next = eval(n);
        let scale = next.abs().max(f64::MIN_POSITIVE);
        if (next - prev).abs() <= REFINE_TOLERANCE * scale {
            return next;
        }
        prev = next;
    }
    prev
}

/// Sampled far-field pattern of one hemisphere.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularPattern {
    hemisphere: Hemisphere,
    theta: Vec<f64>,
    perp: Vec<f64>,
    par_p: Vec<f64>,
    par_s: Vec<f64>,
    total_power: f64,
}

impl AngularPattern {
    pub fn hemisphere(&self) -> Hemisphere {
        self.hemisphere
    }

    /// Polar grid in radians, from the hemisphere axis to grazing.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Azimuth-averaged density per steradian at each grid node.
    pub fn density(&self) -> Vec<f64> {
        (0..self.theta.len())
            .map(|i| self.perp[i] + self.par_p[i] + self.par_s[i])
            .collect()
    }

    /// p-polarized share of the azimuth-averaged density.
    pub fn density_p(&self) -> Vec<f64> {
        self.perp.iter().zip(&self.par_p).map(|(a, b)| a + b).collect()
    }

    /// s-polarized share of the azimuth-averaged density.
    pub fn density_s(&self) -> &[f64] {
        &self.par_s
    }

    /// Azimuthally resolved density at grid node `i`, with `phi` measured
    /// from the in-plane dipole component.
    pub fn density_at(&self, i: usize, phi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        self.perp[i] + 2.0 * (self.par_p[i] * c * c + self.par_s[i] * s * s)
    }

    /// Total far-field power over both hemispheres, shared by the upper and lower pattern.
    pub fn total_power(&self) -> f64 {
        self.total_power
    }

    /// Power in this hemisphere (trapezoid over the stored grid).
    pub fn hemisphere_power(&self) -> f64 {
        let d = self.density();
        self.theta
            .windows(2)
            .zip(d.windows(2))
            .map(|(t, p)| {
                0.5 * (t[1] - t[0]) * 2.0 * PI * (t[0].sin() * p[0] + t[1].sin() * p[1])
            })
            .sum()
    }
}

fn sample_pattern(field: &FarField, hemisphere: Hemisphere, n: usize, total_power: f64) -> AngularPattern {
    let mut theta: Vec<f64> = (0..=n).map(|i| FRAC_PI_2 * i as f64 / n as f64).collect();
    if let Some(k) = field.kink(hemisphere) {
        let n_left = ((n as f64 * k / FRAC_PI_2).round() as usize).clamp(1, n - 1);
        theta = (0..=n_left)
            .map(|i| k * i as f64 / n_left as f64)
            .chain((1..=n - n_left).map(|i| k + (FRAC_PI_2 - k) * i as f64 / (n - n_left) as f64))
            .collect();
    }
    let mut pattern = AngularPattern {
        hemisphere,
        theta,
        perp: Vec::with_capacity(n + 1),
        par_p: Vec::with_capacity(n + 1),
        par_s: Vec::with_capacity(n + 1),
        total_power,
    };
    for &t in &pattern.theta {
        let d = field.density(hemisphere, t);
        pattern.perp.push(d.perp);
        pattern.par_p.push(d.par_p);
        pattern.par_s.push(d.par_s);
    }
    pattern
}

/// Upper and lower far-field patterns on `n` polar intervals each (at least
/// [`MIN_QUADRATURE_POINTS`]). `total_power` is the grid-converged both-hemisphere integral.
pub fn radiated_pattern_with_points(
    dipole: &DipoleEmitter,
    interface: &OpticalInterface,
    n: usize,
) -> (AngularPattern, AngularPattern) {
    let n = n.max(MIN_QUADRATURE_POINTS);
    let field = FarField::new(dipole, interface);
    let total = field.total_power();
    (
        sample_pattern(&field, Hemisphere::Upper, n, total),
        sample_pattern(&field, Hemisphere::Lower, n, total),
    )
}

pub fn radiated_pattern(dipole: &DipoleEmitter, interface: &OpticalInterface) -> (AngularPattern, AngularPattern) {
    radiated_pattern_with_points(dipole, interface, MIN_QUADRATURE_POINTS)
}

/// Share of the total power radiated into the pattern's hemisphere.
pub fn hemisphere_fraction(pattern: &AngularPattern) -> f64 {
    (pattern.hemisphere_power() / pattern.total_power).clamp(0.0, 1.0)
}

/// Share of the total power radiated into the lower hemisphere, grid-converged.
pub fn lower_hemisphere_fraction(dipole: &DipoleEmitter, interface: &OpticalInterface) -> f64 {
    let field = FarField::new(dipole, interface);
    let lower = field.cap_power_converged(Hemisphere::Lower, FRAC_PI_2);
    let upper = field.cap_power_converged(Hemisphere::Upper, FRAC_PI_2);
    lower / (lower + upper)
}

/// Half-angle of the collected cone: the NA limit or the core's geometric
/// solid angle, whichever is smaller.
pub fn acceptance_half_angle(fiber: &FiberSpec, distance_um: f64) -> Result<f64, OpticsError> {
    if !(distance_um.is_finite() && distance_um >= 0.0) {
        return Err(OpticsError::InvalidDistance(distance_um));
    }
    let na_limit = fiber.numerical_aperture.asin();
    if distance_um == 0.0 {
        return Ok(na_limit);
    }
    Ok(na_limit.min((fiber.core_radius_um / distance_um).atan()))
}

/// Fraction of the total far-field power that falls into the fiber's
/// acceptance cone. The dipole height doubles as the molecule–fiber distance.
pub fn collection_efficiency(
    dipole: &DipoleEmitter,
    interface: &OpticalInterface,
    fiber: &FiberSpec,
) -> f64 {
    collection_efficiency_with_points(dipole, interface, fiber, None)
}

/// As [`collection_efficiency`], on a fixed number of polar intervals instead
/// of refining to convergence.
pub fn collection_efficiency_with_points(
    dipole: &DipoleEmitter,
    interface: &OpticalInterface,
    fiber: &FiberSpec,
    points: Option<usize>,
) -> f64 {
    let field = FarField::new(dipole, interface);
    let half_angle = acceptance_half_angle(fiber, dipole.height_um).expect("validated height");
    let (cone, total) = match points {
        Some(n) => {
            let n = n.max(2);
            (
                field.cap_power(Hemisphere::Lower, half_angle, n),
                field.cap_power(Hemisphere::Upper, FRAC_PI_2, n)
                    + field.cap_power(Hemisphere::Lower, FRAC_PI_2, n),
            )
        }
        None => (
            field.cap_power_converged(Hemisphere::Lower, half_angle),
            field.total_power(),
        ),
    };
    (cone / total).clamp(0.0, 1.0)
}

/// Collection efficiency for an isotropic emitter with no interface.
pub fn spherical_collection_efficiency(fiber: &FiberSpec, distance_um: f64) -> Result<f64, OpticsError> {
    let half_angle = acceptance_half_angle(fiber, distance_um)?;
    // 1 - cos θ = 2 sin²(θ/2) keeps precision for tiny cones.
    Ok((0.5 * half_angle).sin().powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub distance_um: f64,
    pub eta_parallel: f64,
    pub eta_orthogonal: f64,
    pub eta_spherical: f64,
}

/// Collection efficiency on a uniform distance grid for parallel, orthogonal
/// and isotropic emitters. Only the template's wavelength is used.
pub fn efficiency_sweep(
    template: &DipoleEmitter,
    interface: &OpticalInterface,
    fiber: &FiberSpec,
    d_min_um: f64,
    d_max_um: f64,
    n_points: usize,
) -> Result<Vec<SweepRow>, OpticsError> {
    if !(d_min_um.is_finite() && d_max_um.is_finite() && d_min_um >= 0.0 && d_max_um > d_min_um && n_points >= 2) {
        return Err(OpticsError::InvalidSweep {
            d_min: d_min_um,
            d_max: d_max_um,
            points: n_points,
        });
    }
    let step = (d_max_um - d_min_um) / (n_points - 1) as f64;
    (0..n_points)
        .map(|i| {
            let d = if i + 1 == n_points { d_max_um } else { d_min_um + step * i as f64 };
            let par = DipoleEmitter::new(Orientation::Parallel, d, template.wavelength_nm)?;
            let orth = par.with_orientation(Orientation::Orthogonal)?;
            Ok(SweepRow {
                distance_um: d,
                eta_parallel: collection_efficiency(&par, interface, fiber),
                eta_orthogonal: collection_efficiency(&orth, interface, fiber),
                eta_spherical: spherical_collection_efficiency(fiber, d)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SODIUM_NM: f64 = 589.0;

    fn dipole(o: Orientation, d: f64) -> DipoleEmitter {
        DipoleEmitter::new(o, d, SODIUM_NM).unwrap()
    }

    #[test]
    fn index_matched_is_half_and_half() {
        let iface = OpticalInterface::new(1.5, 1.5).unwrap();
        for o in [Orientation::Parallel, Orientation::Orthogonal, Orientation::Tilted(0.7)] {
            for d in [0.0, 0.3, 2.0] {
                let f = lower_hemisphere_fraction(&dipole(o, d), &iface);
                assert!((f - 0.5).abs() < 1e-12, "{o:?} d={d}: {f}");
            }
        }
    }

    #[test]
    fn index_matched_matches_free_dipole_pointwise() {
        let iface = OpticalInterface::new(1.33, 1.33).unwrap();
        for (o, free) in [
            (Orientation::Parallel, (|t: f64| PARALLEL_NORM * (1.0 + t.cos().powi(2))) as fn(f64) -> f64),
            (Orientation::Orthogonal, |t: f64| ORTHO_NORM * t.sin().powi(2)),
        ] {
            let (up, lo) = radiated_pattern(&dipole(o, 0.4), &iface);
            assert!((up.total_power() - 1.0).abs() < 1e-7, "{}", up.total_power());
            for pat in [&up, &lo] {
                for (t, p) in pat.theta().iter().zip(pat.density()) {
                    let expect = free(*t);
                    assert!((p - expect).abs() <= 1e-6 * expect.max(1e-300) + 1e-15, "{o:?} θ={t}");
                }
            }
        }
    }

    #[test]
    fn parallel_is_tilted_half_pi() {
        let iface = OpticalInterface::tetradecane_on_fiber();
        let a = lower_hemisphere_fraction(&dipole(Orientation::Parallel, 0.1), &iface);
        let b = lower_hemisphere_fraction(&dipole(Orientation::Tilted(FRAC_PI_2), 0.1), &iface);
        assert_eq!(a, b);
        let c = lower_hemisphere_fraction(&dipole(Orientation::Orthogonal, 0.1), &iface);
        let e = lower_hemisphere_fraction(&dipole(Orientation::Tilted(0.0), 0.1), &iface);
        assert_eq!(c, e);
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert_eq!(OpticalInterface::new(0.9, 1.5), Err(OpticsError::InvalidIndex(0.9)));
        assert!(matches!(
            DipoleEmitter::new(Orientation::Tilted(2.0), 0.0, 589.0),
            Err(OpticsError::InvalidTilt(_))
        ));
        assert!(matches!(
            DipoleEmitter::new(Orientation::Tilted(-0.1), 0.0, 589.0),
            Err(OpticsError::InvalidTilt(_))
        ));
        assert!(matches!(
            DipoleEmitter::new(Orientation::Parallel, -1.0, 589.0),
            Err(OpticsError::InvalidHeight(_))
        ));
        assert!(matches!(
            DipoleEmitter::new(Orientation::Parallel, 0.0, 0.0),
            Err(OpticsError::InvalidWavelength(_))
        ));
        assert!(FiberSpec::new(1.2, 1.0, 1.5).is_err());
        assert!(FiberSpec::new(0.4, 0.0, 1.5).is_err());
        assert!(acceptance_half_angle(&FiberSpec::uhna7(), -0.5).is_err());
    }

    #[test]
    fn acceptance_angle_limits() {
        let full = FiberSpec::new(1.0, 1.2, 1.5).unwrap();
        assert_eq!(acceptance_half_angle(&full, 0.0).unwrap(), FRAC_PI_2);
        let f = FiberSpec::uhna7();
        let d_star = f.crossover_distance_um();
        let left = acceptance_half_angle(&f, d_star * (1.0 - 1e-12)).unwrap();
        let right = acceptance_half_angle(&f, d_star * (1.0 + 1e-12)).unwrap();
        assert!((left - right).abs() < 1e-10);
        assert!((left - 0.41f64.asin()).abs() < 1e-10);
    }

    #[test]
    fn spherical_far_limit() {
        let f = FiberSpec::uhna7();
        assert!(spherical_collection_efficiency(&f, 1e9).unwrap() < 1e-18);
        let near = spherical_collection_efficiency(&f, 0.0).unwrap();
        let closed = (1.0 - (1.0 - 0.41f64 * 0.41).sqrt()) / 2.0;
        assert!((near - closed).abs() < 1e-15);
        assert!((near - 0.0440).abs() < 5e-5);
    }

    #[test]
    fn sweep_rejects_bad_ranges() {
        let t = dipole(Orientation::Parallel, 0.0);
        let i = OpticalInterface::tetradecane_on_fiber();
        let f = FiberSpec::uhna7();
        assert!(efficiency_sweep(&t, &i, &f, 1.0, 1.0, 5).is_err());
        assert!(efficiency_sweep(&t, &i, &f, -1.0, 1.0, 5).is_err());
        assert!(efficiency_sweep(&t, &i, &f, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn stored_grid_has_node_on_critical_angle() {
        let iface = OpticalInterface::tetradecane_on_fiber();
        let (up, _) = radiated_pattern(&dipole(Orientation::Parallel, 0.0), &iface);
        let tc = iface.critical_angle().unwrap();
        assert!(up.theta().iter().any(|&t| (t - tc).abs() < 1e-15));
    }
}
