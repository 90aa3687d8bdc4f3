//! Monte-Carlo photon streams from a driven two-level emitter.
//!
//! Emissions come from a fixed-step quantum-jump (stochastic wavefunction)
//! trajectory. Between jumps the unnormalized amplitudes evolve under the
//! non-Hermitian Hamiltonian
//!
//! ```text
//! H_eff = -Δ |e⟩⟨e| + Ω/2 (|e⟩⟨g| + |g⟩⟨e|) - i γ∥/2 |e⟩⟨e|
//! ```
//!
//! propagated exactly over one step. A jump is taken in the first step at
//! which the squared norm falls below a uniform threshold drawn after the
//! previous jump; per step that is the probability `γ∥ ρ_ee dt` to first order.
//! Pure dephasing `γ⊥ − γ∥/2` enters as uniformly random phase kicks on the
//! excited amplitude at Poisson-distributed steps.
//!
//! The detection chain then thins, splits, adds Poissonian background,
//! quantizes onto the tagger grid and applies a per-channel dead time.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emitter_model::{steady_state_population, DriveField, TwoLevelEmitter};
use crate::tags::{Channel, TagStream};

/// Largest allowed `dt · max(Ω, γ∥, γ⊥, |Δ|)`.
pub const STABILITY_FACTOR: f64 = 0.01;

pub const DEFAULT_DEAD_TIME_S: f64 = 50e-9;
pub const DEFAULT_RESOLUTION_PS: u64 = 1;

const EMISSION_STREAM: u64 = 0;
const DETECTION_STREAM: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("time step {dt} s exceeds the stability bound {max} s")]
    Unstable { dt: f64, max: f64 },
    #[error("invalid simulation parameter `{name}` = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub duration_s: f64,
    pub dt_s: f64,
    pub seed: u64,
    pub drive: DriveField,
    pub emitter: TwoLevelEmitter,
    /// Overall probability that an emitted photon produces a tag.
    pub eta_det: f64,
    /// Probability that a detected photon goes to channel A.
    pub split_ratio: f64,
    pub bg_rate_a: f64,
    pub bg_rate_b: f64,
    pub dead_time_s: f64,
    pub resolution_ps: u64,
}

impl SimConfig {
    /// Ideal detection, 50:50 split, no background, default dead time and
    /// resolution, and the largest stable step.
    pub fn new(drive: DriveField, emitter: TwoLevelEmitter, duration_s: f64, seed: u64) -> Self {
        Self {
            duration_s,
            dt_s: max_stable_dt(&drive, &emitter),
            seed,
            drive,
            emitter,
            eta_det: 1.0,
            split_ratio: 0.5,
            bg_rate_a: 0.0,
            bg_rate_b: 0.0,
            dead_time_s: DEFAULT_DEAD_TIME_S,
            resolution_ps: DEFAULT_RESOLUTION_PS,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SimError::InvalidParameter { name, value: v })
            }
        };
        let non_negative = |name, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(SimError::InvalidParameter { name, value: v })
            }
        };
        let unit = |name, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(SimError::InvalidParameter { name, value: v })
            }
        };
        positive("duration_s", self.duration_s)?;
        positive("dt_s", self.dt_s)?;
        unit("eta_det", self.eta_det)?;
        unit("split_ratio", self.split_ratio)?;
        non_negative("bg_rate_a", self.bg_rate_a)?;
        non_negative("bg_rate_b", self.bg_rate_b)?;
        non_negative("dead_time_s", self.dead_time_s)?;
        if self.resolution_ps < 1 {
            return Err(SimError::InvalidParameter {
                name: "resolution_ps",
                value: 0.0,
            });
        }
        let max = max_stable_dt(&self.drive, &self.emitter);
        if self.dt_s > max * (1.0 + 1e-9) {
            return Err(SimError::Unstable { dt: self.dt_s, max });
        }
        Ok(())
    }

    /// Mean emitted photon rate in steady state, `γ∥ ρ_ee`.
    pub fn emission_rate(&self) -> f64 {
        self.emitter.gamma_par() * steady_state_population(&self.drive, &self.emitter)
    }

    /// Expected signal tag rate on a channel, ignoring dead time.
    pub fn signal_rate(&self, channel: Channel) -> f64 {
        let share = match channel {
            Channel::A => self.split_ratio,
            Channel::B => 1.0 - self.split_ratio,
        };
        self.eta_det * self.emission_rate() * share
    }

    /// Sets both background rates so that each channel carries signal fraction `rho`.
    pub fn with_signal_fraction(mut self, rho: f64) -> Self {
        let bg = |s: f64| s * (1.0 - rho) / rho;
        self.bg_rate_a = bg(self.signal_rate(Channel::A));
        self.bg_rate_b = bg(self.signal_rate(Channel::B));
        self
    }
}

/// `STABILITY_FACTOR / max(Ω, γ∥, γ⊥, |Δ|)`.
pub fn max_stable_dt(drive: &DriveField, emitter: &TwoLevelEmitter) -> f64 {
    let fastest = drive
        .rabi()
        .max(emitter.gamma_par())
        .max(emitter.gamma_perp())
        .max(drive.detuning().abs());
    STABILITY_FACTOR / fastest
}

type Mat2 = [[Complex64; 2]; 2];

/// `exp(-i H_eff dt)` for the basis `(g, e)`.
fn propagator(drive: &DriveField, gamma_par: f64, dt: f64) -> Mat2 {
    let i = Complex64::i();
    let m12 = -i * (0.5 * drive.rabi() * dt);
    let m22 = Complex64::new(-0.5 * gamma_par * dt, drive.detuning() * dt);
    let a = 0.5 * m22;
    // M = a·I + B with B traceless, B² = q² I.
    let q = (a * a + m12 * m12).sqrt();
    let (cosh_q, sinh_q_over_q) = if q.norm() < 1e-4 {
        let q2 = q * q;
        (1.0 + q2 / 2.0 + q2 * q2 / 24.0, 1.0 + q2 / 6.0 + q2 * q2 / 120.0)
    } else {
        (q.cosh(), q.sinh() / q)
    };
    let ea = a.exp();
    [
        [ea * (cosh_q - a * sinh_q_over_q), ea * sinh_q_over_q * m12],
        [ea * sinh_q_over_q * m12, ea * (cosh_q + a * sinh_q_over_q)],
    ]
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Emission times in seconds along one quantum-jump trajectory starting in the ground state.
///
/// The state is propagated in fixed steps; a jump happens when the squared
/// norm falls below a uniform threshold, at the time found by linear
/// interpolation of the norm inside the step. Evolution restarts from the
/// ground state at that instant, so emission times are not tied to a lattice.
pub fn simulate_emissions(config: &SimConfig) -> Result<Vec<f64>, SimError> {
    config.validate()?;
    let dt = config.dt_s;
    let duration = config.duration_s;
    let u = propagator(&config.drive, config.emitter.gamma_par(), dt);
    let mut rng = rng_for(config.seed, EMISSION_STREAM);

    let dephasing = config.emitter.pure_dephasing_rate();
    let kick_wait = (dephasing > 0.0).then(|| Exp::new(dephasing).expect("positive rate"));
    let mut next_kick = match &kick_wait {
        Some(d) => d.sample(&mut rng),
        None => f64::INFINITY,
    };

    let expected = (config.emission_rate() * duration * 1.05) as usize;
    let mut emissions = Vec::with_capacity(expected);
    let (mut g, mut e) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
    let mut threshold: f64 = rng.random();
    let mut origin = 0.0;
    let mut k = 0u64;
    let mut norm = 1.0;

    loop {
        let t0 = origin + k as f64 * dt;
        if t0 + dt > duration {
            break;
        }
        let g_next = u[0][0] * g + u[0][1] * e;
        e = u[1][0] * g + u[1][1] * e;
        g = g_next;
        k += 1;
        let t1 = t0 + dt;
        if t1 >= next_kick {
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            e *= Complex64::from_polar(1.0, phi);
            next_kick += kick_wait.as_ref().expect("scheduled kick").sample(&mut rng);
        }
        let next_norm = g.norm_sqr() + e.norm_sqr();
        if next_norm < threshold {
            let t_jump = t0 + dt * (norm - threshold) / (norm - next_norm);
            emissions.push(t_jump);
            g = Complex64::new(1.0, 0.0);
            e = Complex64::new(0.0, 0.0);
            threshold = rng.random();
            origin = t_jump;
            k = 0;
            norm = 1.0;
        } else {
            norm = next_norm;
        }
    }
    Ok(emissions)
}

fn poisson_times(rng: &mut ChaCha8Rng, rate: f64, duration: f64) -> Vec<f64> {
    if rate <= 0.0 {
        return Vec::new();
    }
    let gap = Exp::new(rate).expect("positive rate");
    let mut out = Vec::with_capacity((rate * duration * 1.1) as usize + 16);
    let mut t = gap.sample(rng);
    while t < duration {
        out.push(t);
        t += gap.sample(rng);
    }
    out
}

fn to_grid(t_s: f64, resolution_ps: u64) -> u64 {
    let ps = (t_s * 1e12).floor() as u64;
    ps / resolution_ps * resolution_ps
}

/// Drops every tag that follows the last kept tag by less than `dead_ps`.
pub fn apply_dead_time(sorted: &[u64], dead_ps: u64) -> Vec<u64> {
    let mut out = Vec::with_capacity(sorted.len());
    for &t in sorted {
        match out.last() {
            Some(&last) if t - last < dead_ps => {}
            _ => out.push(t),
        }
    }
    out
}

/// Turns emission times into a two-detector tag stream.
pub fn detect_and_split(emissions: &[f64], config: &SimConfig) -> Result<TagStream, SimError> {
    config.validate()?;
    let mut rng = rng_for(config.seed, DETECTION_STREAM);
    let res = config.resolution_ps;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for &t in emissions {
        if rng.random::<f64>() < config.eta_det {
            let ts = to_grid(t, res);
            if rng.random::<f64>() < config.split_ratio {
                a.push(ts);
            } else {
                b.push(ts);
            }
        }
    }
    a.extend(poisson_times(&mut rng, config.bg_rate_a, config.duration_s).into_iter().map(|t| to_grid(t, res)));
    b.extend(poisson_times(&mut rng, config.bg_rate_b, config.duration_s).into_iter().map(|t| to_grid(t, res)));
    a.sort_unstable();
    b.sort_unstable();
    let dead_ps = (config.dead_time_s * 1e12).round() as u64;
    let a = apply_dead_time(&a, dead_ps);
    let b = apply_dead_time(&b, dead_ps);
    Ok(TagStream::from_channels(&a, &b).expect("sorted channels"))
}

/// Emission trajectory followed by the detection chain.
pub fn simulate(config: &SimConfig) -> Result<TagStream, SimError> {
    let emissions = simulate_emissions(config)?;
    detect_and_split(&emissions, config)
}
