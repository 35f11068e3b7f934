//! Quantitative acceptance checks. Every check prints one PASS/FAIL line and
//! the test fails if any of them fails.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use paradyn::bundle::{compute_unstable_bundle, riccati_integrate, stationarity_residual};
use paradyn::dynamics::{
    lyapunov_rates, make_system, riccati_coefficients, AnosovSystem, FrameField, Perturbation,
};
use paradyn::microlocal::{
    rigidity_thresholds, threshold_sign_report, unstable_conormal, wavefront_test, ManifoldDim,
    ThresholdLocation, WavefrontVerdict,
};
use paradyn::parax::{bony_remainder, garding_margin, paraproduct_from_blocks, Multiplier, Regularity, SymbolGrid};
use paradyn::resonance::{
    build_escape_weight, compute_resonances, hausdorff, s1_and_delta, weighted_generator, Backend,
};
use paradyn::spectral::{estimate_regularity, holder_field, lp_decompose, sobolev_field, Scale};
use paradyn::{Grid, PeriodicField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CAT: [[i64; 2]; 2] = [[2, 1], [1, 1]];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut out = f();
    let took = start.elapsed();
    out.detail = format!("{} [{:.1} s]", out.detail, took.as_secs_f64());
    if let Some(limit) = limit {
        if took > limit {
            out.pass = false;
            out.detail.push_str(&format!(" exceeds {} s", limit.as_secs()));
        }
    }
    out
}

fn cat_suspension() -> AnosovSystem {
    make_system(CAT, None, Some(1.0)).unwrap()
}

fn perturbed_cat() -> AnosovSystem {
    let p = Perturbation::synthesize(3, 0.1, f64::INFINITY, 1).unwrap();
    make_system(CAT, Some(p), None).unwrap()
}

/// `ab = T_a b + T_b a + R(a, b)` with the remainder formed independently
/// as the diagonal sum `Σ_j Δ_j a Δ_j b`.
fn bony_identity() -> Outcome {
    let g = Grid::new(128, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (s, t) = (rng.random_range(-0.5..2.0), rng.random_range(-0.5..2.0));
        let a = sobolev_field(g, s, &mut rng);
        let b = sobolev_field(g, t, &mut rng);
        let (da, db) = (lp_decompose(&a), lp_decompose(&b));
        let diagonal = da
            .iter()
            .map(|(j, aj)| aj.mul(db.block(j)).unwrap())
            .reduce(|x, y| x.add(&y).unwrap())
            .unwrap();
        let ab = a.mul(&b).unwrap();
        let split = paraproduct_from_blocks(&da, &db)
            .add(&paraproduct_from_blocks(&db, &da))
            .unwrap()
            .add(&diagonal)
            .unwrap();
        let rel = ab.sub(&split).unwrap().sup_norm() / ab.sup_norm();
        let lib = bony_remainder(&a, &b).unwrap().sub(&diagonal).unwrap().sup_norm() / ab.sup_norm();
        worst = worst.max(rel).max(lib);
    }
    outcome(worst <= 1e-12, format!("worst relative defect {worst:.2e} over 100 pairs"))
}

fn remainder_smoothing() -> Outcome {
    let g = Grid::new(512, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = holder_field(g, 0.6, &mut rng);
    let b = sobolev_field(g, 1.0, &mut rng);
    let r = bony_remainder(&a, &b).unwrap();
    match estimate_regularity(&r, Scale::Sobolev, None).unwrap().exponent() {
        Some(e) => outcome(e >= 1.45, format!("estimated exponent {e:.3} (target 1.6)")),
        None => outcome(false, "remainder spectrally trivial".into()),
    }
}

fn cat_bundle() -> Outcome {
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let g = Grid::new(32, 2).unwrap();
    let sys = cat_suspension();
    let frames = FrameField::axes(g);
    let section = compute_unstable_bundle(&sys, &frames, 1e-12, 60).unwrap();
    let err = section
        .slope()
        .values()
        .iter()
        .map(|z| (z.re - golden).abs().max(z.im.abs()))
        .fold(0.0, f64::max);
    let coeffs = riccati_coefficients(&sys, &frames).unwrap();
    let run = riccati_integrate(&sys, &coeffs, &PeriodicField::constant(g, 0.0), 40, 0.01).unwrap();
    let riccati = run.slope.sub(section.slope()).unwrap().sup_norm();
    let stat = stationarity_residual(&sys, &coeffs, &section).unwrap();
    let defect = riccati.max(stat.ode_defect).max(stat.gluing_defect);
    outcome(
        err <= 1e-10 && section.iterations <= 60 && defect <= 1e-6,
        format!(
            "slope error {err:.2e} after {} iterations; Riccati residual {defect:.2e}",
            section.iterations
        ),
    )
}

fn wavefront_concentration() -> Outcome {
    let sys = perturbed_cat();
    let g = Grid::new(512, 2).unwrap();
    let section = compute_unstable_bundle(&sys, &FrameField::axes(g), 1e-13, 100).unwrap();
    let verdict = wavefront_test(section.slope(), unstable_conormal(&sys), 15f64.to_radians(), 1.0, Some((3, 7))).unwrap();
    match verdict {
        WavefrontVerdict::Fitted(f) => outcome(
            f.slope_gap >= 0.8,
            format!(
                "inside slope {:.3}, outside slope {:.3}, gap {:.3} ± {:.3}",
                f.inside_slope, f.outside_slope, f.slope_gap, f.gap_stderr
            ),
        ),
        other => outcome(false, format!("no fit: {other:?}")),
    }
}

fn threshold_crossing() -> Outcome {
    let sys = cat_suspension();
    let rates = lyapunov_rates(&sys, 20.0, 256).unwrap();
    let th = rigidity_thresholds(&rates, ManifoldDim::Three, true).unwrap();
    let below = threshold_sign_report(&sys, 1.9, 20.0, ThresholdLocation::SinkEuStar).unwrap();
    let above = threshold_sign_report(&sys, 2.1, 20.0, ThresholdLocation::SinkEuStar).unwrap();
    outcome(
        below.max_margin < 0.0 && above.min_margin > 0.0 && (th.rigidity_threshold - 2.0).abs() <= 0.01,
        format!(
            "margins {:.4} at s = 1.9, {:.4} at s = 2.1; rigidity threshold {:.5}",
            below.max_margin, above.min_margin, th.rigidity_threshold
        ),
    )
}

fn resonance_weights() -> Outcome {
    let sys = perturbed_cat();
    let rates = lyapunov_rates(&sys, 40.0, 256).unwrap();
    let v = PeriodicField::constant(Grid::new(64, 2).unwrap(), 0.0);
    let slowest = rates.nu_u_min.min(rates.nu_s_min);
    let weights = [(-1.0, 1.0), (-0.8, 1.2)];
    let strip = weights.iter().map(|(u, s): &(f64, f64)| -s.min(u.abs()) * slowest).fold(f64::NEG_INFINITY, f64::max);
    let deep = -3.0;
    let mut sets = Vec::new();
    let mut constants_residual: f64 = 0.0;
    for (u, s) in weights {
        let w = build_escape_weight(&sys, u, s, 15f64.to_radians()).unwrap();
        let op = weighted_generator(&sys, &v, &w, 64, Backend::Map).unwrap();
        let rep = compute_resonances(&op, deep).unwrap();
        let lead = &rep.eigenvalues[0];
        let residual = if (lead.value() - Complex64::new(1.0, 0.0)).norm() < 1e-10 {
            lead.residual
        } else {
            f64::INFINITY
        };
        constants_residual = constants_residual.max(residual);
        sets.push(rep.values());
    }
    let in_strip = |set: &[Complex64]| -> Vec<Complex64> { set.iter().copied().filter(|z| z.norm().ln() > strip).collect() };
    let d_strip = hausdorff(&in_strip(&sets[0]), &in_strip(&sets[1]));
    let d_deep = hausdorff(&sets[0], &sets[1]);
    outcome(
        d_strip <= 1e-6 && d_deep <= 1e-6 && constants_residual <= 1e-10,
        format!(
            "Hausdorff {d_strip:.2e} on log|mu| > {strip:.3} ({} values), {d_deep:.2e} on log|mu| > {deep} ({} values); constants residual {constants_residual:.1e}",
            in_strip(&sets[0]).len(),
            sets[0].len()
        ),
    )
}

fn strip_formula() -> Outcome {
    let sys = cat_suspension();
    let rates = lyapunov_rates(&sys, 20.0, 256).unwrap();
    let v = PeriodicField::constant(Grid::new(16, 2).unwrap(), 0.0);
    let est = s1_and_delta(&sys, &v, 2.0, &rates).unwrap();
    let delta = est.delta.unwrap_or(f64::NAN);
    outcome(
        (delta - 0.4812).abs() <= 1e-3 && est.s1.abs() <= 1e-3,
        format!("delta {delta:.5}, s1 {:.2e}", est.s1),
    )
}

fn garding_subcases() -> Outcome {
    let g = Grid::new(64, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = holder_field(g, 3.0, &mut rng);
    let coeff = w.mul(&w).unwrap();
    let a = SymbolGrid::multiplication(coeff, Regularity::SMOOTH).unwrap();
    let ra = garding_margin(&a, 200, 0.0, &mut rng).unwrap();
    let table = g.lattice_multiplier(|k| {
        let k2 = k[0] * k[0] + k[1] * k[1];
        Complex64::new(k2.sqrt() / (1.0 + k2).sqrt(), 0.0)
    });
    let b = SymbolGrid::fourier_multiplier(g, Multiplier::Table(table));
    let rb = garding_margin(&b, 200, 0.0, &mut rng).unwrap();
    outcome(
        ra.min_quadratic_form >= -1e-12 && rb.min_quadratic_form >= -1e-12,
        format!(
            "min forms {:.2e} (multiplication), {:.2e} (Fourier multiplier)",
            ra.min_quadratic_form, rb.min_quadratic_form
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let checks: [(&str, Option<u64>, fn() -> Outcome); 8] = [
        ("1 bony identity", Some(10), bony_identity),
        ("2 remainder smoothing", Some(30), remainder_smoothing),
        ("3 cat bundle oracle", None, cat_bundle),
        ("4 wavefront concentration", Some(120), wavefront_concentration),
        ("5 threshold crossing", None, threshold_crossing),
        ("6 resonance weight independence", Some(300), resonance_weights),
        ("7 strip formula", None, strip_formula),
        ("8 garding exact subcases", None, garding_subcases),
    ];
    let mut failed = Vec::new();
    for (name, limit, check) in checks {
        let out = timed(limit.map(Duration::from_secs), check);
        println!("{} {name}: {}", if out.pass { "PASS" } else { "FAIL" }, out.detail);
        if !out.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
