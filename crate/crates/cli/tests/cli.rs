use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::CommandFactory;
use fiberphoton::tags::TagStream;
use fiberphoton_cli::Cli;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fiberphoton"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn fiberphoton")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> serde_json::Value {
    serde_json::from_str(&ok(args)).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

#[test]
fn every_flag_documents_its_unit() {
    let mut root = Cli::command();
    root.build();
    for sub in root.get_subcommands().filter(|s| s.get_name() != "help") {
        for arg in sub.get_arguments() {
            let id = arg.get_id().as_str();
            if id == "help" || id == "version" {
                continue;
            }
            let help = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
            let unit = help.rsplit_once('[').map(|(_, u)| u);
            assert!(
                matches!(unit, Some(u) if u.ends_with(']') && u.len() > 1),
                "{} --{id}: help `{help}` has no trailing [unit]",
                sub.get_name()
            );
        }
        // The rendered help is what users see; it must carry the same text.
        let text = ok(&[sub.get_name(), "--help"]);
        for arg in sub.get_arguments().filter(|a| a.get_long().is_some() && a.get_id() != "help") {
            assert!(text.contains(&format!("--{}", arg.get_long().unwrap())));
        }
        assert!(text.contains('['), "{}", sub.get_name());
    }
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["raman", "589", "780"]), 0);
    assert_eq!(code(&["collect-eff", "--bogus"]), 2);
    assert_eq!(code(&["raman", "589"]), 2);
    assert_eq!(code(&["raman", "589", "-1"]), 2);
    assert_eq!(code(&["collect-eff", "--na", "2", "--d-um", "0"]), 2);
    assert_eq!(code(&["correlate", "/nonexistent/tags.csv"]), 1);
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("garbage.csv");
    std::fs::write(&garbage, "not,a,tag,file\n").unwrap();
    assert_eq!(code(&["correlate", garbage.to_str().unwrap()]), 1);
}

#[test]
fn thread_cap_is_validated() {
    let out = bin().env("FIBERPHOTON_THREADS", "lots").args(["raman", "589", "780"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let golden = data("golden_tags.csv");
    let g = golden.to_str().unwrap();
    let args = ["correlate", g, "--bin-ps", "2000", "--range-ps", "40000"];
    let one = bin().env("FIBERPHOTON_THREADS", "1").args(args).output().unwrap();
    let many = bin().env("FIBERPHOTON_THREADS", "0").args(args).output().unwrap();
    assert!(one.status.success() && many.status.success());
    assert_eq!(one.stdout, many.stdout);
}

#[test]
fn efficiency_anchors() {
    let csv = ok(&["collect-eff", "--d-um", "0"]);
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((row[1] - 0.061).abs() < 0.015, "{row:?}");
    assert!(row[2] > 0.0 && row[2] < row[1]);
    let csv = ok(&["collect-eff", "--na", "0.13", "--d-um", "0"]);
    let eta: f64 = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((eta - 0.005).abs() < 0.002, "{eta}");
    let csv = ok(&["collect-eff", "--na", "1", "--d-um", "0", "--spherical"]);
    let eta: f64 = csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((eta - 0.5).abs() < 1e-12);
}

#[test]
fn efficiency_sweep_table() {
    let csv = ok(&["collect-eff", "--na", "0.41", "--core-um", "2.4", "--n-upper", "1.53", "--n-lower", "1.501", "--d-max-um", "6", "--points", "7"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(fiberphoton_cli::SWEEP_CSV_HEADER));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[6][0], 6.0);
    assert!(rows.windows(2).all(|w| w[1][3] <= w[0][3]));
}

#[test]
fn monotonicity_guard_rejects_rising_sweeps() {
    use fiberphoton::interface_optics::SweepRow;
    let row = |d, p, s| SweepRow {
        distance_um: d,
        eta_parallel: p,
        eta_orthogonal: p / 10.0,
        eta_spherical: s,
    };
    // Ripple below the crossover is allowed, a rise beyond it is not.
    assert!(fiberphoton_cli::check_sweep_monotone(&[row(0.0, 0.05, 0.04), row(1.0, 0.051, 0.04)], 2.67).is_ok());
    assert!(fiberphoton_cli::check_sweep_monotone(&[row(3.0, 0.05, 0.04), row(4.0, 0.051, 0.03)], 2.67).is_err());
    assert!(fiberphoton_cli::check_sweep_monotone(&[row(0.0, 0.05, 0.03), row(1.0, 0.04, 0.04)], 2.67).is_err());
}

#[test]
fn spectra_commands() {
    let r = json(&["raman", "589", "780"]);
    assert_eq!(r["schema_version"], 1);
    assert!((r["factor"].as_f64().unwrap() - 3.07).abs() < 0.01);
    assert_eq!(json(&["raman", "589", "589"])["factor"].as_f64(), Some(1.0));
    let f = json(&["filter", "--uniform-nm", "600", "700", "--window", "626", "678"]);
    assert!((f["in_band_fraction"].as_f64().unwrap() - 0.52).abs() < 1e-12);
    assert_eq!(f["schema_version"], 1);
}

#[test]
fn golden_histogram_is_stable() {
    let golden = data("golden_tags.csv");
    let csv = ok(&["correlate", golden.to_str().unwrap(), "--bin-ps", "2000", "--range-ps", "40000"]);
    assert_eq!(csv, std::fs::read_to_string(data("golden_hist.csv")).unwrap());
    // Counts against the independent brute-force table.
    let ours: Vec<String> = csv.lines().skip(1).map(|l| l.split(',').take(2).collect::<Vec<_>>().join(",")).collect();
    let brute: Vec<String> = std::fs::read_to_string(data("golden_counts.csv")).unwrap().lines().skip(1).map(String::from).collect();
    assert_eq!(ours, brute);
}

#[test]
fn noiseless_lorentzian_is_exact() {
    let fit = json(&["fit", "lorentzian", "--data", data("lorentzian_noiseless.csv").to_str().unwrap()]);
    assert_eq!(fit["schema_version"], 1);
    assert_eq!(fit["converged"], true);
    for (p, truth) in fit["parameters"].as_array().unwrap().iter().zip([12.0, 28.5, 4000.0, 150.0]) {
        let v = p["value"].as_f64().unwrap();
        assert!((v - truth).abs() <= 1e-8 * truth, "{}: {v}", p["name"]);
    }
}

#[test]
fn linear_background_is_subtracted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sat.csv");
    let mut text = String::from("power_nw,cps\n");
    for i in 1..=30 {
        let x = 10.0 * i as f64;
        text.push_str(&format!("{x},{}\n", 50e3 * x / (x + 60.0) + 20.0 * x + 300.0));
    }
    std::fs::write(&path, text).unwrap();
    let p = path.to_str().unwrap();
    let fit = json(&["fit", "saturation", "--data", p, "--bg-slope", "20", "--bg-offset", "300"]);
    let values: Vec<f64> = fit["parameters"].as_array().unwrap().iter().map(|p| p["value"].as_f64().unwrap()).collect();
    assert!((values[0] - 50e3).abs() < 1e-6 * 50e3 && (values[1] - 60.0).abs() < 1e-6 * 60.0, "{values:?}");
    assert_eq!(code(&["fit", "saturation", "--data", p, "--hold", "nonsense"]), 2);
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.ttg1");
    let o = out.to_str().unwrap();
    let cfg = write_config(dir.path(), "[emitter]\n[drive]\nrabi_mhz = 42.0\n[sim]\nduration_s = 1e-4\nseed = 1\n");
    let r = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", o]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("emitter.gamma_par_mhz"));
    let cfg = write_config(dir.path(), "[emitter]\ngamma_par_mhz = 17.0\ngamma_par = 1.0\n");
    let r = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", o]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("gamma_par"));
}

#[test]
fn simulate_is_deterministic_and_formats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = data("run.toml");
    let c = cfg.to_str().unwrap();
    let paths: Vec<PathBuf> = ["a.ttg1", "b.ttg1", "c.csv"].iter().map(|n| dir.path().join(n)).collect();
    for p in &paths {
        ok(&["simulate", "--config", c, "--out", p.to_str().unwrap()]);
    }
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
    let bin_stream = TagStream::read_any(&std::fs::read(&paths[0]).unwrap()[..]).unwrap();
    let csv_stream = TagStream::read_any(&std::fs::read(&paths[2]).unwrap()[..]).unwrap();
    assert!(bin_stream.len() > 1000);
    assert_eq!(bin_stream, csv_stream);
    let other = dir.path().join("d.ttg1");
    ok(&["simulate", "--config", c, "--out", other.to_str().unwrap(), "--seed", "12"]);
    assert_ne!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&other).unwrap());

    // Both encodings give the same histogram, byte for byte.
    let h1 = ok(&["correlate", paths[0].to_str().unwrap(), "--config", c]);
    let h2 = ok(&["correlate", paths[2].to_str().unwrap(), "--config", c]);
    assert_eq!(h1, h2);
}

#[test]
fn demo_recovers_rabi_frequency_and_antibunching() {
    let args = ["demo-fig7", "--duration-s", "0.01", "--seed", "3"];
    let first = ok(&args);
    assert_eq!(first, ok(&args));
    let r: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(r["schema_version"], 1);
    let rabi = r["rabi_fit_mhz"].as_f64().unwrap();
    assert!((rabi - 42.0).abs() < 0.05 * 42.0, "{rabi}");
    let g0 = r["g2_zero"].as_f64().unwrap();
    let err = r["g2_zero_err"].as_f64().unwrap();
    assert!((g0 - 0.36).abs() < 3.0 * err.max(1e-3), "{g0} ± {err}");
}

#[test]
fn scan_synth_is_seeded() {
    let a = ok(&["scan-synth", "--noise", "--seed", "4", "--points", "501"]);
    assert_eq!(a, ok(&["scan-synth", "--noise", "--seed", "4", "--points", "501"]));
    assert_ne!(a, ok(&["scan-synth", "--noise", "--seed", "5", "--points", "501"]));
    assert!(a.starts_with("frequency_mhz,counts\n"));
    assert_eq!(a.lines().count(), 502);
}

#[test]
fn dipole_pattern_integrates_to_one() {
    let csv = ok(&["dipole-pattern", "--orientation", "orthogonal", "--d-um", "0.2"]);
    let mut total = 0.0;
    for hemi in ["upper", "lower"] {
        let rows: Vec<(f64, f64)> = csv
            .lines()
            .filter(|l| l.starts_with(hemi))
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[1].parse::<f64>().unwrap().to_radians(), f[2].parse().unwrap())
            })
            .collect();
        total += rows
            .windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * 2.0 * std::f64::consts::PI * (w[0].0.sin() * w[0].1 + w[1].0.sin() * w[1].1))
            .sum::<f64>();
    }
    assert!((total - 1.0).abs() < 1e-4, "{total}");
}
