use std::f64::consts::{FRAC_PI_2, PI};

use fiberphoton::interface_optics::*;
use num_complex::Complex64;
use proptest::prelude::*;

/// Composite Simpson rule for a complex integrand.
fn simpson(f: impl Fn(f64) -> Complex64, a: f64, b: f64, n: usize) -> Complex64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(a + i as f64 * h) * w;
    }
    acc * (h / 3.0)
}

/// Total power relative to the same dipole in the homogeneous upper medium,
/// from the reflected part of the Green function (Sommerfeld integral over
/// the transverse wavevector s = k_ρ / k₁). Returns (orthogonal, parallel).
fn ldos_power(n1: f64, n2: f64, d_um: f64, wavelength_nm: f64) -> (f64, f64) {
    let k1 = 2.0 * PI * n1 / (wavelength_nm * 1e-3);
    let m = n2 / n1;
    let i = Complex64::i();
    let kernel = |s: Complex64, sz: Complex64| -> (Complex64, Complex64) {
        let sz2 = (m * m - s * s).sqrt();
        let rs = (sz - sz2) / (sz + sz2);
        let rp = (sz * m * m - sz2) / (sz * m * m + sz2);
        let phase = (i * 2.0 * k1 * d_um * sz).exp();
        (rp * s * s * phase, (rs - sz * sz * rp) * phase)
    };
    // Propagating part: s = sin t, ds / s_z = dt.
    let prop = |t: f64| {
        let s = Complex64::new(t.sin(), 0.0);
        let sz = Complex64::new(t.cos(), 0.0);
        let (perp, par) = kernel(s, sz);
        (perp * s, par * s)
    };
    let n = 200_000;
    let mut perp = simpson(|t| prop(t).0, 0.0, FRAC_PI_2, n);
    let mut par = simpson(|t| prop(t).1, 0.0, FRAC_PI_2, n);
    if m > 1.0 {
        // s = cosh u, s_z = i sinh u, ds / s_z = −i du.
        let evan = |u: f64| {
            let s = Complex64::new(u.cosh(), 0.0);
            let sz = i * u.sinh();
            let (a, b) = kernel(s, sz);
            (a * s * (-i), b * s * (-i))
        };
        let top = m.acosh();
        perp += simpson(|u| evan(u).0, 0.0, top, n);
        par += simpson(|u| evan(u).1, 0.0, top, n);
    }
    (1.0 + 1.5 * perp.re, 1.0 + 0.75 * par.re)
}

#[test]
fn far_field_total_matches_ldos_integral() {
    let cases = [(1.53, 1.501), (1.33, 1.52), (1.0, 1.5), (1.5, 1.0)];
    for (n1, n2) in cases {
        let iface = OpticalInterface::new(n1, n2).unwrap();
        for d in [0.0, 0.05, 0.2, 0.7] {
            let (perp, par) = ldos_power(n1, n2, d, 589.0);
            for (o, want) in [(Orientation::Orthogonal, perp), (Orientation::Parallel, par)] {
                let dip = DipoleEmitter::new(o, d, 589.0).unwrap();
                let (up, _) = radiated_pattern(&dip, &iface);
                let got = up.total_power();
                assert!(
                    (got - want).abs() < 2e-5 * want,
                    "n={n1}/{n2} d={d} {o:?}: far field {got} vs LDOS {want}"
                );
            }
        }
    }
}

#[test]
fn fixed_grid_converges_to_refined_value() {
    let iface = OpticalInterface::tetradecane_on_fiber();
    let dip = DipoleEmitter::new(Orientation::Parallel, 0.0, 589.0).unwrap();
    let fiber = FiberSpec::uhna7();
    let reference = collection_efficiency(&dip, &iface, &fiber);
    let errs: Vec<f64> = [256, 1024, 4096]
        .iter()
        .map(|&n| (collection_efficiency_with_points(&dip, &iface, &fiber, Some(n)) - reference).abs())
        .collect();
    assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    // The total carries a square-root kink at the critical angle, so the
    // error falls roughly as n^-1.5 rather than n^-2.
    assert!(errs[2] < 2e-5 * reference, "{errs:?} {reference}");
}

#[test]
fn dipole_columns_fall_beyond_crossover() {
    let iface = OpticalInterface::tetradecane_on_fiber();
    let fiber = FiberSpec::uhna7();
    let template = DipoleEmitter::new(Orientation::Parallel, 0.0, 589.0).unwrap();
    let d_star = fiber.crossover_distance_um();
    let rows = efficiency_sweep(&template, &iface, &fiber, d_star, 12.0, 60).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].eta_parallel <= w[0].eta_parallel);
        assert!(w[1].eta_orthogonal <= w[0].eta_orthogonal);
        assert!(w[1].eta_spherical <= w[0].eta_spherical);
    }
}

#[test]
fn pattern_integrates_to_hemisphere_fraction() {
    let iface = OpticalInterface::tetradecane_on_fiber();
    for o in [Orientation::Parallel, Orientation::Orthogonal, Orientation::Tilted(0.4)] {
        let dip = DipoleEmitter::new(o, 0.1, 589.0).unwrap();
        let (up, lo) = radiated_pattern_with_points(&dip, &iface, 1 << 16);
        let f = lower_hemisphere_fraction(&dip, &iface);
        let from_pattern = lo.hemisphere_power() / (lo.hemisphere_power() + up.hemisphere_power());
        assert!((f - from_pattern).abs() < 1e-6, "{o:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn efficiencies_are_bounded_and_ordered(
        n1 in 1.0f64..2.0,
        n2 in 1.0f64..2.0,
        d in 0.0f64..5.0,
        tilt in 0.0f64..FRAC_PI_2,
        na in 0.05f64..0.6,
    ) {
        let iface = OpticalInterface::new(n1, n2).unwrap();
        let dip = DipoleEmitter::new(Orientation::Tilted(tilt), d, 600.0).unwrap();
        let lower = lower_hemisphere_fraction(&dip, &iface);
        prop_assert!((0.0..=1.0).contains(&lower));
        let narrow = FiberSpec::new(na, 1.2, 1.5).unwrap();
        let wide = FiberSpec::new((na + 0.3).min(1.0), 1.2, 1.5).unwrap();
        let e1 = collection_efficiency_with_points(&dip, &iface, &narrow, Some(4096));
        let e2 = collection_efficiency_with_points(&dip, &iface, &wide, Some(4096));
        prop_assert!(e1 >= 0.0 && e1 <= e2 + 1e-12);
        prop_assert!(e2 <= lower + 1e-9);
    }

    #[test]
    fn tilted_dipole_is_the_weighted_mixture(tilt in 0.0f64..FRAC_PI_2, d in 0.0f64..2.0) {
        let iface = OpticalInterface::tetradecane_on_fiber();
        let pattern = |o| {
            let dip = DipoleEmitter::new(o, d, 589.0).unwrap();
            radiated_pattern_with_points(&dip, &iface, 4096).1
        };
        let (t, par, orth) = (pattern(Orientation::Tilted(tilt)), pattern(Orientation::Parallel), pattern(Orientation::Orthogonal));
        let (wperp, wpar) = Orientation::Tilted(tilt).weights();
        for ((a, b), c) in t.density().iter().zip(par.density()).zip(orth.density()) {
            prop_assert!((a - (wpar * b + wperp * c)).abs() < 1e-12);
        }
    }

    #[test]
    fn spherical_model_matches_cone_formula(na in 0.01f64..1.0, d in 0.0f64..20.0) {
        let fiber = FiberSpec::new(na, 1.2, 1.5).unwrap();
        let eta = spherical_collection_efficiency(&fiber, d).unwrap();
        let theta = acceptance_half_angle(&fiber, d).unwrap();
        prop_assert!((eta - 0.5 * (1.0 - theta.cos())).abs() < 1e-12);
    }
}
