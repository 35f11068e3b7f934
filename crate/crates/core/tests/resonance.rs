use num_complex::Complex64;
use paradyn::dynamics::{make_system, AnosovSystem, Perturbation};
use paradyn::resonance::{build_escape_weight, compute_resonances, hausdorff, weighted_generator, Backend};
use paradyn::spectral::holder_field;
use paradyn::{Error, Grid, PeriodicField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn perturbed() -> AnosovSystem {
    let p = Perturbation::synthesize(3, 0.1, f64::INFINITY, 1).unwrap();
    make_system([[2, 1], [1, 1]], Some(p), None).unwrap()
}

fn spectrum(sys: &AnosovSystem, v: &PeriodicField, n: usize, aperture_deg: f64, cut: f64) -> Vec<Complex64> {
    let w = build_escape_weight(sys, -1.0, 1.0, aperture_deg.to_radians()).unwrap();
    let op = weighted_generator(sys, v, &w, n, Backend::Map).unwrap();
    compute_resonances(&op, cut).unwrap().values()
}

fn zero(n: usize) -> PeriodicField {
    PeriodicField::constant(Grid::new(n, 2).unwrap(), 0.0)
}

#[test]
fn constant_potential_scales_the_spectrum() {
    let sys = perturbed();
    let base = spectrum(&sys, &zero(64), 32, 15.0, -3.0);
    let c = -0.3;
    let shifted = spectrum(&sys, &PeriodicField::constant(Grid::new(64, 2).unwrap(), c), 32, 15.0, -3.0 + c);
    let scaled: Vec<Complex64> = base.iter().map(|z| z * c.exp()).collect();
    assert_eq!(shifted.len(), scaled.len());
    assert!(hausdorff(&shifted, &scaled) < 1e-10);
}

#[test]
fn coboundary_potentials_are_isospectral() {
    // e^b conjugates the operators for V and V + b - b∘φ^{-1}.
    let sys = perturbed();
    // b is evaluated pointwise so that b∘φ^{-1} is not aliased.
    let g = Grid::new(128, 2).unwrap();
    let tau = std::f64::consts::TAU;
    let b = |x: [f64; 2]| 0.1 * (tau * x[0]).sin() + 0.05 * (tau * (x[0] + 2.0 * x[1])).cos();
    let v = PeriodicField::from_fn(g, |x| 0.2 * (tau * x[1]).cos());
    let v2 = PeriodicField::from_fn(g, |x| {
        let p = [x[0], x[1]];
        0.2 * (tau * x[1]).cos() + b(p) - b(sys.step_inverse(p))
    });
    for n in [32, 48] {
        let (a, c) = (spectrum(&sys, &v, n, 15.0, -3.0), spectrum(&sys, &v2, n, 15.0, -3.0));
        let d = hausdorff(&a, &c);
        println!("N = {n}: {} eigenvalues, Hausdorff distance {d:.2e}", a.len());
        assert!(a.len() > 1 && d < 1e-6, "{d}");
    }
}

#[test]
fn leading_resonances_are_stable_under_truncation() {
    let sys = perturbed();
    let coarse = spectrum(&sys, &zero(64), 32, 15.0, -1.5);
    let fine = spectrum(&sys, &zero(128), 64, 15.0, -1.5);
    let d = hausdorff(&coarse, &fine);
    assert!((coarse[0] - Complex64::new(1.0, 0.0)).norm() < 1e-10);
    assert!(d < 1e-6, "{d} {coarse:?} {fine:?}");
}

#[test]
fn aperture_does_not_change_the_resonances() {
    let sys = perturbed();
    let narrow = spectrum(&sys, &zero(64), 32, 10.0, -1.5);
    let wide = spectrum(&sys, &zero(64), 32, 20.0, -1.5);
    assert!(hausdorff(&narrow, &wide) < 1e-6);
}

#[test]
fn real_potential_gives_conjugation_symmetric_spectrum() {
    let sys = perturbed();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let v = holder_field(Grid::new(64, 2).unwrap(), 1.5, &mut rng).scale(0.3);
    let mu = spectrum(&sys, &v, 32, 15.0, -2.0);
    let conj: Vec<Complex64> = mu.iter().map(|z| z.conj()).collect();
    assert!(hausdorff(&mu, &conj) < 1e-9);
    // The leading eigenvalue is real and simple, the pressure of V.
    assert!(mu[0].im.abs() < 1e-12 && mu[0].re > 0.0);
}

#[test]
fn truncation_below_the_cone_resolution_is_rejected() {
    let sys = perturbed();
    let w = build_escape_weight(&sys, -1.0, 1.0, 10f64.to_radians()).unwrap();
    let minimum = w.minimum_truncation();
    match weighted_generator(&sys, &zero(64), &w, minimum - 2, Backend::Map) {
        Err(Error::TruncationTooSmall { requested, minimum: m }) => {
            assert_eq!((requested, m), (minimum - 2, minimum));
        }
        other => panic!("expected TruncationTooSmall, got {other:?}"),
    }
}
