use std::f64::consts::PI;

use fiberphoton::correlator::{correlate_stream, G2Histogram};
use fiberphoton::emitter_model::*;
use fiberphoton::stream_sim::*;
use fiberphoton::tags::Channel;

fn config(rabi_mhz: f64, gperp_ratio: f64, duration: f64, seed: u64) -> SimConfig {
    let gpar = 2.0 * PI * 17e6;
    let emitter = TwoLevelEmitter::new(gpar, gperp_ratio * gpar, 0.0).unwrap();
    let drive = DriveField::resonant(2.0 * PI * rabi_mhz * 1e6).unwrap();
    let mut cfg = SimConfig::new(drive, emitter, duration, seed);
    cfg.dead_time_s = 0.0;
    cfg
}

/// Mixed-model g² averaged over each bin (midpoint rule on 64 sub-points).
fn bin_average(h: &G2Histogram, cfg: &SimConfig, rho: f64) -> Vec<f64> {
    let w = h.bin_width_ps as f64 * 1e-12;
    (0..h.n_bins())
        .map(|k| {
            let start = h.bin_start_ps(k) as f64 * 1e-12;
            (0..64)
                .map(|j| {
                    let t = start + (j as f64 + 0.5) / 64.0 * w;
                    let g = rabi_g2(t, cfg.drive.rabi(), cfg.emitter.gamma_par(), cfg.emitter.gamma_perp());
                    background_mix_g2(g, rho).unwrap()
                })
                .sum::<f64>()
                / 64.0
        })
        .collect()
}

struct Agreement {
    chi2_per_bin: f64,
    outliers: usize,
    bins: usize,
}

fn compare(h: &G2Histogram, cfg: &SimConfig, rho: f64) -> Agreement {
    let (_, y, e) = h.fit_series();
    let model = bin_average(h, cfg, rho);
    let z: Vec<f64> = y.iter().zip(&e).zip(&model).map(|((y, e), m)| (y - m) / e).collect();
    Agreement {
        chi2_per_bin: z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64,
        outliers: z.iter().filter(|v| v.abs() > 3.0).count(),
        bins: z.len(),
    }
}

#[test]
fn emission_rate_matches_steady_state() {
    for (rabi, ratio) in [(42.0, 0.5), (10.0, 0.5), (42.0, 1.5)] {
        let cfg = config(rabi, ratio, 2e-3, 3);
        let n = simulate_emissions(&cfg).unwrap().len() as f64;
        let expected = cfg.emission_rate() * cfg.duration_s;
        // Antibunched emission is sub-Poissonian, so √N is a loose bound.
        assert!((n - expected).abs() < 4.0 * expected.sqrt(), "Ω={rabi}: {n} vs {expected}");
    }
}

#[test]
fn detection_and_split_fractions() {
    let mut cfg = config(42.0, 0.5, 2e-3, 4);
    cfg.eta_det = 0.3;
    cfg.split_ratio = 0.7;
    let emissions = simulate_emissions(&cfg).unwrap();
    let stream = detect_and_split(&emissions, &cfg).unwrap();
    let n = emissions.len() as f64;
    let na = stream.count(Channel::A) as f64;
    let nb = stream.count(Channel::B) as f64;
    let pa = 0.3 * 0.7;
    let pb = 0.3 * 0.3;
    assert!((na - pa * n).abs() < 4.0 * (n * pa * (1.0 - pa)).sqrt());
    assert!((nb - pb * n).abs() < 4.0 * (n * pb * (1.0 - pb)).sqrt());
}

#[test]
fn histogram_follows_the_analytic_curve() {
    // Fourier-limited and dephased coherence, with background.
    for (ratio, rho, seed) in [(0.5, 0.8, 21), (1.4, 0.9, 22)] {
        let cfg = config(42.0, ratio, 0.02, seed).with_signal_fraction(rho);
        let stream = simulate(&cfg).unwrap();
        let h = correlate_stream(&stream, 2000, 100_000, 4).unwrap();
        let a = compare(&h, &cfg, rho);
        assert!((0.6..1.5).contains(&a.chi2_per_bin), "γ⊥/γ∥={ratio}: χ²/bin {}", a.chi2_per_bin);
        assert!(a.outliers <= (a.bins / 20).max(2), "{} of {} bins beyond 3σ", a.outliers, a.bins);
    }
}

#[test]
fn halving_the_step_changes_nothing_measurable() {
    let coarse = config(42.0, 0.5, 0.01, 31);
    let mut fine = coarse;
    fine.dt_s = 0.5 * coarse.dt_s;
    fine.seed = 32;
    let mut rates = Vec::new();
    for cfg in [coarse, fine] {
        let stream = simulate(&cfg).unwrap();
        let h = correlate_stream(&stream, 2000, 100_000, 4).unwrap();
        let a = compare(&h, &cfg, 1.0);
        assert!((0.6..1.5).contains(&a.chi2_per_bin), "dt={}: χ²/bin {}", cfg.dt_s, a.chi2_per_bin);
        rates.push(stream.len() as f64);
    }
    assert!((rates[0] - rates[1]).abs() < 4.0 * (rates[0] + rates[1]).sqrt());
}

#[test]
fn dead_time_spacing_holds_per_channel() {
    let mut cfg = config(42.0, 0.5, 1e-3, 8);
    cfg.dead_time_s = 20e-9;
    let stream = simulate(&cfg).unwrap();
    for ch in [Channel::A, Channel::B] {
        let t = stream.channel(ch);
        assert!(t.windows(2).all(|w| w[1] - w[0] >= 20_000));
    }
}
