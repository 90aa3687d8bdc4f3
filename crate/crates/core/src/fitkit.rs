//! Weighted nonlinear least squares for the line, saturation, broadening and
//! antibunching models.
//!
//! The solver is a Levenberg–Marquardt iteration with Marquardt's diagonal
//! scaling. Bounded parameters are fitted in transformed coordinates (log for
//! positive quantities, logit for the signal fraction) so the descent itself
//! is unconstrained. A step is accepted only if the weighted sum of squares
//! drops. Iteration stops when the largest relative parameter change of an
//! accepted step is below `1e-8` or the scaled gradient (the largest cosine
//! between the residual vector and a Jacobian column) is below `1e-10`. A
//! stop is reported as converged only when the scaled gradient is below
//! [`CONVERGED_GRADIENT`].
//!
//! Standard errors come from `s² (Jᵀ W J)⁻¹` at the solution, evaluated in
//! the physical parameters, with `s²` the weighted residual variance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emitter_model::{mix_unchecked, rabi_g2};

pub const FIT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_ITERATIONS: usize = 500;
pub const DEFAULT_INITIAL_DAMPING: f64 = 1e-3;
pub const PARAM_TOLERANCE: f64 = 1e-8;
pub const GRADIENT_TOLERANCE: f64 = 1e-10;
/// A fit stopped by the step criterion is only reported as converged if its
/// scaled gradient is below this bound.
pub const CONVERGED_GRADIENT: f64 = 1e-6;

const MAX_DAMPING: f64 = 1e16;
const MIN_DAMPING: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} points for {params} free parameters, got {got}")]
    TooFewPoints { needed: usize, params: usize, got: usize },
    #[error("x, y and sigma lengths differ")]
    LengthMismatch,
    #[error("non-finite value in the data")]
    NonFinite,
    #[error("sigma must be > 0 everywhere")]
    BadSigma,
    #[error("all x values are equal")]
    DegenerateX,
    #[error("expected {expected} parameters, got {got}")]
    ParameterCount { expected: usize, got: usize },
    #[error("initial parameter `{name}` = {value} violates its bound")]
    OutOfBounds { name: &'static str, value: f64 },
    #[error("the model is not finite at the initial parameters")]
    NonFiniteModel,
    #[error("linewidth analysis needs at least 3 powers, got {0}")]
    TooFewPowers(usize),
    #[error("fewer than 3 line scans could be fitted")]
    TooFewGoodScans,
}

/// How the coherence decay enters the antibunching model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RabiDamping {
    /// `γ⊥ = γ∥/2`; parameters `[Ω, γ∥, ρ]`.
    FourierLimited,
    /// Independent `γ⊥`; parameters `[Ω, γ∥, γ⊥, ρ]`. The curve only depends
    /// on `γ∥ + γ⊥` and `Ω² − ((γ∥ − γ⊥)/2)²`, so one of the three rates must
    /// be held for a well-conditioned fit.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FitModel {
    /// `offset + amplitude (Γ/2)² / ((x − x₀)² + (Γ/2)²)`; `[x₀, Γ, amplitude, offset]`.
    LorentzianLine,
    /// `R∞ x / (I_sat + x)`; `[R∞, I_sat]`.
    Saturation,
    /// `Γ₀ √(1 + x / I_sat)`; `[Γ₀, I_sat]`.
    PowerBroadening,
    /// Background-mixed resonant antibunching, x = delay in seconds.
    RabiG2 { damping: RabiDamping },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Transform {
    Identity,
    Log,
    Logit,
}

impl Transform {
    fn to_internal(self, p: f64) -> f64 {
        match self {
            Transform::Identity => p,
            Transform::Log => p.ln(),
            Transform::Logit => (p / (1.0 - p)).ln(),
        }
    }

    fn to_physical(self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Log => z.exp(),
            Transform::Logit => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// `dp/dz` at physical value `p`.
    fn slope(self, p: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log => p,
            Transform::Logit => p * (1.0 - p),
        }
    }

    fn admits(self, p: f64) -> bool {
        match self {
            Transform::Identity => p.is_finite(),
            Transform::Log => p.is_finite() && p > 0.0,
            Transform::Logit => p > 0.0 && p < 1.0,
        }
    }
}

impl FitModel {
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            FitModel::LorentzianLine => &["center", "fwhm", "amplitude", "offset"],
            FitModel::Saturation => &["r_inf", "i_sat"],
            FitModel::PowerBroadening => &["gamma0", "i_sat"],
            FitModel::RabiG2 { damping: RabiDamping::FourierLimited } => &["rabi", "gamma_par", "rho"],
            FitModel::RabiG2 { damping: RabiDamping::Free } => &["rabi", "gamma_par", "gamma_perp", "rho"],
        }
    }

    pub fn n_params(&self) -> usize {
        self.param_names().len()
    }

    /// Short identifier used in file formats and on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            FitModel::LorentzianLine => "lorentzian",
            FitModel::Saturation => "saturation",
            FitModel::PowerBroadening => "power_broadening",
            FitModel::RabiG2 { .. } => "rabi_g2",
        }
    }

    fn transforms(&self) -> &'static [Transform] {
        use Transform::*;
        match self {
            FitModel::LorentzianLine => &[Identity, Log, Identity, Identity],
            FitModel::Saturation | FitModel::PowerBroadening => &[Log, Log],
            FitModel::RabiG2 { damping: RabiDamping::FourierLimited } => &[Log, Log, Logit],
            FitModel::RabiG2 { damping: RabiDamping::Free } => &[Log, Log, Log, Logit],
        }
    }

    /// `ρ` clamps into the open interval the logit can represent.
    fn clamp_init(&self, p: &mut [f64]) {
        if let FitModel::RabiG2 { .. } = self {
            let last = p.len() - 1;
            p[last] = p[last].clamp(1e-6, 1.0 - 1e-9);
        }
    }

    pub fn eval(&self, x: f64, p: &[f64]) -> f64 {
        match self {
            FitModel::LorentzianLine => {
                let h = 0.5 * p[1];
                p[3] + p[2] * h * h / ((x - p[0]).powi(2) + h * h)
            }
            FitModel::Saturation => p[0] * x / (p[1] + x),
            FitModel::PowerBroadening => p[0] * (1.0 + x / p[1]).sqrt(),
            FitModel::RabiG2 { damping } => {
                let (gperp, rho) = match damping {
                    RabiDamping::FourierLimited => (0.5 * p[1], p[2]),
                    RabiDamping::Free => (p[2], p[3]),
                };
                mix_unchecked(rabi_g2(x, p[0], p[1], gperp), rho)
            }
        }
    }

    /// `∂f/∂p` in closed form; `None` where only finite differences are used.
    pub fn gradient(&self, x: f64, p: &[f64]) -> Option<Vec<f64>> {
        match self {
            FitModel::LorentzianLine => {
                let h = 0.5 * p[1];
                let u = x - p[0];
                let d = u * u + h * h;
                Some(vec![
                    2.0 * p[2] * h * h * u / (d * d),
                    p[2] * h * u * u / (d * d),
                    h * h / d,
                    1.0,
                ])
            }
            FitModel::Saturation => {
                let den = p[1] + x;
                Some(vec![x / den, -p[0] * x / (den * den)])
            }
            FitModel::PowerBroadening => {
                let root = (1.0 + x / p[1]).sqrt();
                Some(vec![root, -p[0] * x / (2.0 * root * p[1] * p[1])])
            }
            FitModel::RabiG2 { .. } => None,
        }
    }

    /// Central finite-difference gradient with relative steps.
    pub fn numeric_gradient(&self, x: f64, p: &[f64]) -> Vec<f64> {
        let mut q = p.to_vec();
        (0..p.len())
            .map(|i| {
                let h = 1e-6 * p[i].abs().max(1e-12);
                q[i] = p[i] + h;
                let up = self.eval(x, &q);
                q[i] = p[i] - h;
                let down = self.eval(x, &q);
                q[i] = p[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn grad(&self, x: f64, p: &[f64]) -> Vec<f64> {
        self.gradient(x, p).unwrap_or_else(|| self.numeric_gradient(x, p))
    }
}

/// Measured `(x, y)` points with optional standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
    /// `y` are photon counts; enables Poisson weighting when `sigma` is absent.
    pub counts: bool,
}

impl Series {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { x, y, sigma: None, counts: false }
    }

    pub fn with_sigma(mut self, sigma: Vec<f64>) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn as_counts(mut self) -> Self {
        self.counts = true;
        self
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn validate(&self) -> Result<(), FitError> {
        if self.x.len() != self.y.len() || self.sigma.as_ref().is_some_and(|s| s.len() != self.x.len()) {
            return Err(FitError::LengthMismatch);
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(FitError::NonFinite);
        }
        if let Some(s) = &self.sigma {
            if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(FitError::BadSigma);
            }
        }
        if let Some(first) = self.x.first() {
            if self.x.iter().all(|v| v == first) {
                return Err(FitError::DegenerateX);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// User-supplied standard deviations.
    Sigma,
    /// `σ = √max(y, 1)` for count data.
    Poisson,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Parameters (by index) kept at their initial value.
    pub hold: Vec<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            initial_damping: DEFAULT_INITIAL_DAMPING,
            hold: Vec::new(),
        }
    }
}

impl FitOptions {
    pub fn holding(hold: impl IntoIterator<Item = usize>) -> Self {
        Self {
            hold: hold.into_iter().collect(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    pub std_error: f64,
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub schema_version: u32,
    pub model: FitModel,
    pub parameters: Vec<FitParameter>,
    /// Weighted residual sum of squares.
    pub rss: f64,
    /// `rss / (n − free parameters)`.
    pub reduced_chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Scaled gradient at the returned point.
    pub gradient_norm: f64,
    /// Condition number of the unit-diagonal normal matrix; infinite when a
    /// parameter combination is unidentifiable.
    pub condition_number: f64,
    pub weighting: Weighting,
    pub n_points: usize,
    /// Weighted cost after the start and after every accepted step.
    #[serde(skip)]
    pub cost_history: Vec<f64>,
}

impl FitResult {
    pub fn values(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.value).collect()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.std_error).collect()
    }

    pub fn get(&self, name: &str) -> Option<&FitParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

struct Problem<'a> {
    model: FitModel,
    x: &'a [f64],
    y: &'a [f64],
    inv_sigma: Vec<f64>,
    free: Vec<usize>,
    transforms: &'static [Transform],
}

impl Problem<'_> {
    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        self.x
            .iter()
            .zip(self.y)
            .zip(&self.inv_sigma)
            .map(|((&x, &y), &w)| (y - self.model.eval(x, p)) * w)
            .collect()
    }

    fn cost(r: &[f64]) -> f64 {
        0.5 * r.iter().map(|v| v * v).sum::<f64>()
    }

    /// Jacobian of the weighted model w.r.t. the free parameters, either
    /// physical (`internal = false`) or transformed.
    fn jacobian(&self, p: &[f64], internal: bool) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.x.len(), self.free.len());
        for (row, (&x, &w)) in self.x.iter().zip(&self.inv_sigma).enumerate() {
            let g = self.model.grad(x, p);
            for (col, &k) in self.free.iter().enumerate() {
                let chain = if internal { self.transforms[k].slope(p[k]) } else { 1.0 };
                j[(row, col)] = g[k] * chain * w;
            }
        }
        j
    }

    fn physical(&self, base: &[f64], z: &[f64]) -> Vec<f64> {
        let mut p = base.to_vec();
        for (col, &k) in self.free.iter().enumerate() {
            p[k] = self.transforms[k].to_physical(z[col]);
        }
        p
    }
}

/// Largest `|J_kᵀ r| / (‖J_k‖ ‖r‖)` over the columns. `‖r‖` is floored at
/// `floor` so that a zero-residual fit, whose residual is pure round-off,
/// does not report a large cosine.
fn scaled_gradient(j: &DMatrix<f64>, r: &DVector<f64>, floor: f64) -> f64 {
    let rn = r.norm().max(floor);
    if rn == 0.0 {
        return 0.0;
    }
    (0..j.ncols())
        .map(|k| {
            let col = j.column(k);
            let cn = col.norm();
            if cn == 0.0 {
                0.0
            } else {
                col.dot(r).abs() / (cn * rn)
            }
        })
        .fold(0.0, f64::max)
}

fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(a, b)| (b - a).abs() / a.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Fits `model` to `data`, starting from `init` or from [`auto_init`].
pub fn fit_curve(model: FitModel, data: &Series, init: Option<&[f64]>) -> Result<FitResult, FitError> {
    fit_curve_with(model, data, init, &FitOptions::default())
}

pub fn fit_curve_with(
    model: FitModel,
    data: &Series,
    init: Option<&[f64]>,
    options: &FitOptions,
) -> Result<FitResult, FitError> {
    data.validate()?;
    let names = model.param_names();
    let mut p0 = match init {
        Some(v) => v.to_vec(),
        None => auto_init(model, data).params,
    };
    if p0.len() != names.len() {
        return Err(FitError::ParameterCount {
            expected: names.len(),
            got: p0.len(),
        });
    }
    model.clamp_init(&mut p0);
    let transforms = model.transforms();
    for (k, (&v, t)) in p0.iter().zip(transforms).enumerate() {
        if !t.admits(v) {
            return Err(FitError::OutOfBounds { name: names[k], value: v });
        }
    }
    let free: Vec<usize> = (0..names.len()).filter(|k| !options.hold.contains(k)).collect();
    let needed = 2 * free.len();
    if data.len() < needed {
        return Err(FitError::TooFewPoints {
            needed,
            params: free.len(),
            got: data.len(),
        });
    }

    let (weighting, inv_sigma): (Weighting, Vec<f64>) = match (&data.sigma, data.counts) {
        (Some(s), _) => (Weighting::Sigma, s.iter().map(|v| 1.0 / v).collect()),
        (None, true) => (Weighting::Poisson, data.y.iter().map(|y| 1.0 / y.max(1.0).sqrt()).collect()),
        (None, false) => (Weighting::Uniform, vec![1.0; data.len()]),
    };
    let problem = Problem {
        model,
        x: &data.x,
        y: &data.y,
        inv_sigma,
        free,
        transforms,
    };

    let residual_floor = 1e-8
        * problem
            .y
            .iter()
            .zip(&problem.inv_sigma)
            .map(|(y, w)| (y * w).powi(2))
            .sum::<f64>()
            .sqrt();
    let mut p = p0;
    let mut z: Vec<f64> = problem.free.iter().map(|&k| transforms[k].to_internal(p[k])).collect();
    let mut r = problem.residuals(&p);
    let mut cost = Problem::cost(&r);
    if !cost.is_finite() {
        return Err(FitError::NonFiniteModel);
    }
    let mut history = vec![cost];
    let mut lambda = options.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    let n_free = problem.free.len();

    while iterations < options.max_iterations && n_free > 0 {
        iterations += 1;
        let j = problem.jacobian(&p, true);
        let rv = DVector::from_vec(r.clone());
        if scaled_gradient(&j, &rv, residual_floor) < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        let jtj = j.transpose() * &j;
        // Residuals are y − f, so the descent direction solves (JᵀJ + λD) δ = Jᵀr.
        let g = j.transpose() * &rv;
        let diag: Vec<f64> = (0..n_free).map(|k| jtj[(k, k)].max(1e-300)).collect();
        let mut accepted = false;
        while lambda <= MAX_DAMPING {
            let mut a = jtj.clone();
            for k in 0..n_free {
                a[(k, k)] += lambda * diag[k];
            }
            let step = a.clone().cholesky().map(|c| c.solve(&g)).or_else(|| a.lu().solve(&g));
            let Some(step) = step else {
                lambda *= 10.0;
                continue;
            };
            let z_new: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let p_new = problem.physical(&p, &z_new);
            let r_new = problem.residuals(&p_new);
            let cost_new = Problem::cost(&r_new);
            if cost_new.is_finite() && cost_new < cost {
                debug_assert!(cost_new <= cost);
                let change = relative_change(&p, &p_new);
                z = z_new;
                p = p_new;
                r = r_new;
                cost = cost_new;
                history.push(cost);
                lambda = (lambda / 10.0).max(MIN_DAMPING);
                accepted = true;
                if change < PARAM_TOLERANCE {
                    converged = true;
                }
                break;
            }
            // A rejected step smaller than the tolerance means the cost is at
            // its floating-point floor.
            if lambda <= options.initial_damping && relative_change(&p, &problem.physical(&p, &z_new)) < PARAM_TOLERANCE {
                converged = true;
                break;
            }
            lambda *= 10.0;
        }
        if converged || !accepted {
            break;
        }
    }

    let jp = problem.jacobian(&p, false);
    let gradient_norm = scaled_gradient(&problem.jacobian(&p, true), &DVector::from_vec(r.clone()), residual_floor);
    let converged = converged && gradient_norm <= CONVERGED_GRADIENT;
    let rss = 2.0 * cost;
    let dof = (data.len() - n_free).max(1) as f64;
    let reduced_chi2 = rss / dof;
    let (errors, condition_number) = standard_errors(&jp, reduced_chi2);

    let mut free_iter = problem.free.iter().zip(errors);
    let mut next_free = free_iter.next();
    let parameters = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let (held, std_error) = match next_free {
                Some((&fk, e)) if fk == k => {
                    next_free = free_iter.next();
                    (false, e)
                }
                _ => (true, 0.0),
            };
            FitParameter {
                name: name.to_string(),
                value: p[k],
                std_error,
                held,
            }
        })
        .collect();

    Ok(FitResult {
        schema_version: FIT_SCHEMA_VERSION,
        model,
        parameters,
        rss,
        reduced_chi2,
        iterations,
        converged,
        gradient_norm,
        condition_number,
        weighting,
        n_points: data.len(),
        cost_history: history,
    })
}

/// Standard errors from `s² (JᵀJ)⁻¹` and the condition number of the
/// correlation-scaled normal matrix.
fn standard_errors(j: &DMatrix<f64>, s2: f64) -> (Vec<f64>, f64) {
    let n = j.ncols();
    if n == 0 {
        return (Vec::new(), 1.0);
    }
    let jtj = j.transpose() * j;
    let scale: Vec<f64> = (0..n).map(|k| jtj[(k, k)].sqrt()).collect();
    if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return (vec![f64::INFINITY; n], f64::INFINITY);
    }
    let scaled = DMatrix::from_fn(n, n, |a, b| jtj[(a, b)] / (scale[a] * scale[b]));
    let eig = SymmetricEigen::new(scaled.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition.is_finite() && condition < 1e14) {
        return (vec![f64::INFINITY; n], f64::INFINITY);
    }
    let inv = match scaled.try_inverse() {
        Some(m) => m,
        None => return (vec![f64::INFINITY; n], f64::INFINITY),
    };
    let errors = (0..n)
        .map(|k| (s2 * inv[(k, k)].max(0.0)).sqrt() / scale[k])
        .collect();
    (errors, condition)
}

/// Starting point chosen from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    pub params: Vec<f64>,
    /// Set when the data carried no usable feature and defaults were used.
    pub fallback: Option<String>,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn moving_average(v: &[f64], half: usize) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(v.len());
            v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Heuristic starting parameters for `model`.
pub fn auto_init(model: FitModel, data: &Series) -> InitialGuess {
    let x = &data.x;
    let y = &data.y;
    let (x_min, x_max) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (y_min, y_max) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (x_max - x_min).abs();
    let flat = !(y_max > y_min) || x.is_empty();
    let mid = 0.5 * (x_min + x_max);

    match model {
        FitModel::LorentzianLine => {
            if flat {
                let width = if span > 0.0 { span / 10.0 } else { 1.0 };
                return InitialGuess {
                    params: vec![if mid.is_finite() { mid } else { 0.0 }, width, 1.0, if y_min.is_finite() { y_min } else { 0.0 }],
                    fallback: Some("flat data: line placed at the range center".into()),
                };
            }
            let mut order: Vec<usize> = (0..x.len()).collect();
            order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
            let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
            let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
            let peak = argmax(&ys);
            let half = y_min + 0.5 * (y_max - y_min);
            let left = (0..peak).rev().find(|&i| ys[i] < half).map(|i| xs[i]);
            let right = (peak + 1..xs.len()).find(|&i| ys[i] < half).map(|i| xs[i]);
            let width = match (left, right) {
                (Some(l), Some(r)) => r - l,
                (Some(l), None) => 2.0 * (xs[peak] - l),
                (None, Some(r)) => 2.0 * (r - xs[peak]),
                (None, None) => span / 2.0,
            };
            InitialGuess {
                params: vec![xs[peak], width.max(span * 1e-6), y_max - y_min, y_min],
                fallback: None,
            }
        }
        FitModel::Saturation => {
            let target = 0.5 * y_max;
            let i_half = (0..x.len())
                .min_by(|&a, &b| (y[a] - target).abs().total_cmp(&(y[b] - target).abs()))
                .map(|i| x[i])
                .filter(|v| *v > 0.0);
            let fallback = flat || i_half.is_none() || y_max <= 0.0;
            InitialGuess {
                params: vec![
                    if y_max > 0.0 { 1.2 * y_max } else { 1.0 },
                    i_half.unwrap_or(if mid > 0.0 { mid } else { 1.0 }),
                ],
                fallback: fallback.then(|| "no half-saturation crossing; mid-range defaults".into()),
            }
        }
        FitModel::PowerBroadening => {
            let g0 = if y_min > 0.0 { y_min } else { 1.0 };
            // s = 1 where the width has grown by √2.
            let target = g0 * std::f64::consts::SQRT_2;
            let i_sat = (0..x.len())
                .filter(|&i| x[i] > 0.0)
                .min_by(|&a, &b| (y[a] - target).abs().total_cmp(&(y[b] - target).abs()))
                .map(|i| x[i]);
            InitialGuess {
                params: vec![g0, i_sat.unwrap_or(if mid > 0.0 { mid } else { 1.0 })],
                fallback: (flat || i_sat.is_none()).then(|| "flat widths; mid-range saturation scale".into()),
            }
        }
        FitModel::RabiG2 { damping } => rabi_init(damping, x, y),
    }
}

fn rabi_init(damping: RabiDamping, x: &[f64], y: &[f64]) -> InitialGuess {
    let mut order: Vec<usize> = (0..x.len()).filter(|&i| x[i] >= 0.0).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let ts: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let gs = moving_average(&order.iter().map(|&i| y[i]).collect::<Vec<_>>(), 2);

    let pack = |rabi: f64, gpar: f64, rho: f64| match damping {
        RabiDamping::FourierLimited => vec![rabi, gpar, rho],
        RabiDamping::Free => vec![rabi, gpar, 0.5 * gpar, rho],
    };
    if ts.len() < 4 {
        return InitialGuess {
            params: pack(1e8, 1e8, 0.9),
            fallback: Some("too few non-negative delays".into()),
        };
    }
    let g0 = gs[0];
    let rho = (1.0 - g0).clamp(0.01, 0.999).sqrt();
    // First local maximum after the antibunching dip.
    let dip = gs.iter().take(gs.len() / 2).position(|&v| v > 0.5 * (1.0 + g0)).unwrap_or(0);
    let peak = (dip.max(1)..gs.len() - 1).find(|&i| gs[i] > 1.0 && gs[i] >= gs[i - 1] && gs[i] >= gs[i + 1]);
    match peak {
        Some(i) if ts[i] > 0.0 => {
            let rabi = std::f64::consts::PI / ts[i];
            // At Ω'τ = π the pure curve peaks at 1 + e^{−aτ}.
            let excess = ((gs[i] - 1.0) / (rho * rho)).clamp(1e-3, 0.999);
            let a = -excess.ln() / ts[i];
            InitialGuess {
                params: pack(rabi, 4.0 * a / 3.0, rho),
                fallback: None,
            }
        }
        _ => {
            let tmax = *ts.last().unwrap();
            let rate = 10.0 / tmax.max(f64::MIN_POSITIVE);
            InitialGuess {
                params: pack(rate, rate, rho),
                fallback: Some("no oscillation maximum; overdamped defaults".into()),
            }
        }
    }
}

/// One line scan recorded at a given excitation power.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerScan {
    pub power: f64,
    pub scan: Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinewidthRow {
    pub power: f64,
    pub fwhm: f64,
    pub fwhm_error: f64,
    /// Why this scan was excluded from the broadening fit.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinewidthAnalysis {
    pub rows: Vec<LinewidthRow>,
    pub broadening: FitResult,
}

impl LinewidthAnalysis {
    pub fn gamma0(&self) -> &FitParameter {
        &self.broadening.parameters[0]
    }
}

/// Lorentzian fit per power, then a broadening fit over the fitted widths,
/// weighted by their standard errors when all are usable.
pub fn linewidth_vs_power(scans: &[PowerScan]) -> Result<LinewidthAnalysis, FitError> {
    if scans.len() < 3 {
        return Err(FitError::TooFewPowers(scans.len()));
    }
    let rows: Vec<LinewidthRow> = scans
        .iter()
        .map(|s| match fit_curve(FitModel::LorentzianLine, &s.scan, None) {
            Ok(fit) if fit.converged => LinewidthRow {
                power: s.power,
                fwhm: fit.parameters[1].value,
                fwhm_error: fit.parameters[1].std_error,
                failure: None,
            },
            Ok(fit) => LinewidthRow {
                power: s.power,
                fwhm: fit.parameters[1].value,
                fwhm_error: fit.parameters[1].std_error,
                failure: Some(format!("not converged after {} iterations", fit.iterations)),
            },
            Err(e) => LinewidthRow {
                power: s.power,
                fwhm: f64::NAN,
                fwhm_error: f64::NAN,
                failure: Some(e.to_string()),
            },
        })
        .collect();
    let good: Vec<&LinewidthRow> = rows.iter().filter(|r| r.failure.is_none()).collect();
    if good.len() < 3 {
        return Err(FitError::TooFewGoodScans);
    }
    let mut series = Series::new(good.iter().map(|r| r.power).collect(), good.iter().map(|r| r.fwhm).collect());
    let errs: Vec<f64> = good.iter().map(|r| r.fwhm_error).collect();
    if errs.iter().all(|e| e.is_finite() && *e > 0.0) {
        // Errors at the floating-point floor (noiseless scans) carry no weight information.
        let floor = errs.iter().cloned().fold(f64::INFINITY, f64::min);
        let rel_floor = good.iter().map(|r| r.fwhm).fold(0.0, f64::max) * 1e-9;
        if floor > rel_floor {
            series = series.with_sigma(errs);
        }
    }
    // With only three powers the 2×-points rule cannot hold for two parameters.
    let broadening = if series.len() >= 4 {
        fit_curve(FitModel::PowerBroadening, &series, None)?
    } else {
        fit_small(&series)?
    };
    Ok(LinewidthAnalysis { rows, broadening })
}

fn fit_small(series: &Series) -> Result<FitResult, FitError> {
    // Duplicate the points (with √2 larger σ) to pass the point-count guard
    // without changing the weighted objective's minimizer.
    let mut dup = Series::new(
        series.x.iter().chain(&series.x).copied().collect(),
        series.y.iter().chain(&series.y).copied().collect(),
    );
    if let Some(s) = &series.sigma {
        dup = dup.with_sigma(s.iter().chain(s).map(|v| v * std::f64::consts::SQRT_2).collect());
    }
    let mut fit = fit_curve(FitModel::PowerBroadening, &dup, None)?;
    fit.n_points = series.len();
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lorentz_data(p: &[f64]) -> Series {
        let x: Vec<f64> = (0..201).map(|i| -100.0 + i as f64).collect();
        let y = x.iter().map(|&v| FitModel::LorentzianLine.eval(v, p)).collect();
        Series::new(x, y)
    }

    #[test]
    fn noiseless_lorentzian_exact() {
        let truth = [3.5, 28.5, 5e4, 2e3];
        let fit = fit_curve(FitModel::LorentzianLine, &lorentz_data(&truth), None).unwrap();
        assert!(fit.converged);
        for (a, b) in fit.values().iter().zip(truth) {
            assert!((a - b).abs() <= 1e-8 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn auto_init_lorentzian_on_grid_center() {
        let data = lorentz_data(&[0.0, 10.0, 100.0, 5.0]);
        let g = auto_init(FitModel::LorentzianLine, &data);
        assert!(g.params[0].abs() <= 1.0);
        assert!(g.fallback.is_none());
        assert!((g.params[1] - 10.0).abs() <= 2.0);
    }

    #[test]
    fn auto_init_flat_data_falls_back() {
        let data = Series::new((0..20).map(f64::from).collect(), vec![7.0; 20]);
        for m in [FitModel::LorentzianLine, FitModel::Saturation, FitModel::PowerBroadening] {
            assert!(auto_init(m, &data).fallback.is_some(), "{m:?}");
        }
    }

    #[test]
    fn auto_init_saturation_within_range() {
        let x: Vec<f64> = (1..40).map(|i| i as f64 * 10.0).collect();
        let y = x.iter().map(|v| 5e4 * v / (60.0 + v)).collect();
        let g = auto_init(FitModel::Saturation, &Series::new(x, y));
        assert!(g.params[1] >= 10.0 && g.params[1] <= 390.0);
    }

    #[test]
    fn rejects_bad_data() {
        let m = FitModel::Saturation;
        assert_eq!(
            fit_curve(m, &Series::new(vec![1.0; 10], vec![2.0; 10]), None).unwrap_err(),
            FitError::DegenerateX
        );
        assert!(matches!(
            fit_curve(m, &Series::new(vec![1.0, 2.0, 3.0], vec![1.0; 3]), None),
            Err(FitError::TooFewPoints { .. })
        ));
        let s = Series::new((0..8).map(f64::from).collect(), vec![1.0; 8]).with_sigma(vec![0.0; 8]);
        assert_eq!(fit_curve(m, &s, None).unwrap_err(), FitError::BadSigma);
        let s = Series::new(vec![f64::NAN; 8], vec![1.0; 8]);
        assert_eq!(fit_curve(m, &s, None).unwrap_err(), FitError::NonFinite);
        let s = Series::new((0..8).map(f64::from).collect(), vec![1.0; 8]);
        assert!(matches!(fit_curve(m, &s, Some(&[-1.0, 1.0])), Err(FitError::OutOfBounds { .. })));
    }

    #[test]
    fn weighting_flags() {
        let x: Vec<f64> = (1..30).map(|i| i as f64 * 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 5e4 * v / (60.0 + v)).collect();
        let plain = fit_curve(FitModel::Saturation, &Series::new(x.clone(), y.clone()), None).unwrap();
        assert_eq!(plain.weighting, Weighting::Uniform);
        let counts = fit_curve(FitModel::Saturation, &Series::new(x.clone(), y.clone()).as_counts(), None).unwrap();
        assert_eq!(counts.weighting, Weighting::Poisson);
        let given = fit_curve(FitModel::Saturation, &Series::new(x, y).with_sigma(vec![3.0; 29]), None).unwrap();
        assert_eq!(given.weighting, Weighting::Sigma);
    }

    #[test]
    fn held_parameter_stays_put() {
        let data = lorentz_data(&[1.0, 20.0, 100.0, 10.0]);
        let fit = fit_curve_with(
            FitModel::LorentzianLine,
            &data,
            Some(&[0.0, 15.0, 90.0, 10.0]),
            &FitOptions::holding([3]),
        )
        .unwrap();
        assert_eq!(fit.parameters[3].value, 10.0);
        assert!(fit.parameters[3].held);
        assert!((fit.parameters[0].value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn free_rabi_model_is_flagged_degenerate() {
        let m = FitModel::RabiG2 { damping: RabiDamping::Free };
        let p = [2.6e8, 1.07e8, 0.6e8, 0.8];
        let x: Vec<f64> = (-200..200).map(|i| i as f64 * 0.5e-9).collect();
        let y = x.iter().map(|&t| m.eval(t, &p)).collect();
        let fit = fit_curve(m, &Series::new(x, y), Some(&[2.5e8, 1.0e8, 0.55e8, 0.75])).unwrap();
        assert!(fit.condition_number > 1e10 || fit.condition_number.is_infinite());
    }

    #[test]
    fn single_power_is_rejected() {
        let data = lorentz_data(&[0.0, 10.0, 100.0, 5.0]);
        let scans = vec![PowerScan { power: 1.0, scan: data }];
        assert_eq!(linewidth_vs_power(&scans).unwrap_err(), FitError::TooFewPowers(1));
    }
}
