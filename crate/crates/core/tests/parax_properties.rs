use num_complex::Complex64;
use paradyn::parax::{
    bony_remainder, elliptic_parametrix_apply, garding_margin, paraproduct, parametrix_residual,
    quantize, regularize_symbol, Cone, Multiplier, Regularity, SymbolGrid,
};
use paradyn::spectral::{
    estimate_regularity, holder_field, lp_decompose, sobolev_field, RegularityEstimate, Scale,
};
use paradyn::{Grid, PeriodicField};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn exponent(u: &PeriodicField, bands: Option<(i32, i32)>) -> f64 {
    match estimate_regularity(u, Scale::Sobolev, bands).unwrap() {
        RegularityEstimate::Fitted(f) => f.exponent,
        RegularityEstimate::SpectrallyTrivial => panic!("unexpected trivial field"),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn paraproduct_matches_block_double_sum() {
    let g = Grid::new(128, 2).unwrap();
    let mut r = rng(11);
    let a = sobolev_field(g, 0.4, &mut r);
    let b = sobolev_field(g, 0.9, &mut r);
    let t = paraproduct(&a, &b).unwrap();
    let da = lp_decompose(&a);
    let db = lp_decompose(&b);
    let mut brute = PeriodicField::zeros(g, a.shape(), a.dtype());
    for (k, bk) in db.iter() {
        for (j, aj) in da.iter() {
            if k >= 0 && j <= k - 1 {
                brute = brute.add(&aj.mul(bk).unwrap()).unwrap();
            }
        }
    }
    assert!(t.sub(&brute).unwrap().sup_norm() <= 1e-13 * a.mul(&b).unwrap().sup_norm().max(1.0));
}

#[test]
fn single_mode_remainder_is_diagonal_weight_sum() {
    // a = b = e^{2πik·x} with |k| = 5 sits in bands 2 and 3 with weights
    // w2, w3; only the diagonal pairs survive in the remainder.
    let g = Grid::new(64, 2).unwrap();
    let k = [3.0, 4.0];
    let e = PeriodicField::from_complex_fn(g, |x| {
        Complex64::from_polar(1.0, 2.0 * PI * (k[0] * x[0] + k[1] * x[1]))
    });
    let r = bony_remainder(&e, &e).unwrap();
    let flat = g.flat_of_freq([3, 4, 0]).unwrap();
    let w: Vec<f64> = paradyn::spectral::band_weights(g).iter().map(|b| b[flat]).collect();
    let diag: f64 = w.iter().map(|x| x * x).sum();
    let e2 = e.mul(&e).unwrap().scale(diag);
    assert!(r.sub(&e2).unwrap().sup_norm() < 1e-13);
}

#[test]
fn remainder_of_constant_is_scaled_low_block() {
    let g = Grid::new(64, 2).unwrap();
    let b = sobolev_field(g, 0.5, &mut rng(3));
    let a = PeriodicField::constant(g, -1.5);
    let r = bony_remainder(&a, &b).unwrap();
    let expect = lp_decompose(&b).block(-1).scale(-1.5);
    assert!(r.sub(&expect).unwrap().sup_norm() < 1e-13);
}

#[test]
fn remainder_gains_sum_of_regularities() {
    let g = Grid::new(512, 2).unwrap();
    let mut r = rng(2024);
    let a = holder_field(g, 0.6, &mut r);
    let b = sobolev_field(g, 1.0, &mut r);
    let rem = bony_remainder(&a, &b).unwrap();
    let est = exponent(&rem, None);
    assert!(est >= 1.45, "remainder exponent {est}");
}

fn first_order_rough(g: Grid, r: f64, axis: usize, seed: u64) -> (SymbolGrid, PeriodicField) {
    let c = holder_field(g, r, &mut rng(seed)).map_real(|v| v * 0.3 + 1.0);
    let mut alpha = [0u32; 3];
    alpha[axis] = 1;
    let p = SymbolGrid::new(g, 1.0, Regularity::Finite(r))
        .with_term(c.clone(), Multiplier::Monomial(alpha))
        .unwrap();
    (p, c)
}

#[test]
fn flat_part_gains_coefficient_regularity() {
    let g = Grid::new(512, 2).unwrap();
    let r = 0.8;
    let (p, _) = first_order_rough(g, r, 0, 7);
    let (_, flat) = regularize_symbol(&p, r).unwrap();
    let u = sobolev_field(g, 0.5, &mut rng(8));
    let out = quantize(&flat, &u).unwrap();
    let gain = exponent(&out, None) - (exponent(&u, None) - 1.0);
    assert!(gain >= r - 0.15, "gain {gain}");
}

#[test]
fn sharp_part_of_single_x_mode() {
    let g = Grid::new(512, 1).unwrap();
    let a = PeriodicField::from_fn(g, |x| (2.0 * PI * 8.0 * x[0]).cos());
    let p = SymbolGrid::multiplication(a.clone(), Regularity::SMOOTH).unwrap();
    let (sharp, _) = regularize_symbol(&p, 1.0).unwrap();
    // Evaluate p♯(x, k) on the lattice directly. Bands -1, 0, 1 (|k| < 4)
    // are left unregularized, so there p♯ is a times their weight.
    let tables = sharp.multiplier_tables();
    let weights = paradyn::spectral::band_weights(g);
    for kf in 0..g.len() {
        let kn = g.wavenumber(kf);
        for x in (0..g.len()).step_by(37) {
            let v = sharp.eval(&tables, x, kf);
            if kn < 4.0 {
                let w = weights[0][kf] + weights[1][kf] + weights[2][kf];
                assert!((v - a.values()[x] * w).norm() < 1e-13, "k = {kn}");
            } else if kn < 16.0 {
                assert!(v.norm() < 1e-13, "k = {kn}");
            }
            if kn >= 128.0 {
                assert!((v - a.values()[x]).norm() < 1e-13, "k = {kn}");
            }
        }
    }
}

#[test]
fn composition_remainder_gains_r_minus_one() {
    let g = Grid::new(256, 2).unwrap();
    let r = 1.5;
    let (p, a) = first_order_rough(g, r, 0, 21);
    let (q, b) = first_order_rough(g, r, 1, 22);
    let (p_sharp, _) = regularize_symbol(&p, r).unwrap();
    let (q_sharp, _) = regularize_symbol(&q, r).unwrap();
    // Symbol of the composition truncated after first order:
    // ab (2πik1)(2πik2) + a ∂1 b (2πik2).
    let comp = SymbolGrid::new(g, 2.0, Regularity::Finite(r - 1.0))
        .with_term(a.mul(&b).unwrap(), Multiplier::Monomial([1, 1, 0]))
        .unwrap()
        .with_term(a.mul(&b.derivative(0).unwrap()).unwrap(), Multiplier::Monomial([0, 1, 0]))
        .unwrap();
    let (comp_sharp, _) = regularize_symbol(&comp, r).unwrap();
    let u = sobolev_field(g, 1.0, &mut rng(23));
    let lhs = quantize(&p_sharp, &quantize(&q_sharp, &u).unwrap()).unwrap();
    let rhs = quantize(&comp_sharp, &u).unwrap();
    let diff = lhs.sub(&rhs).unwrap();
    let gain = exponent(&diff, None) - (exponent(&u, None) - 2.0);
    assert!(gain >= r - 1.0 - 0.15, "gain {gain}");
}

#[test]
fn quantize_derivative_symbol() {
    let g = Grid::new(64, 2).unwrap();
    let v = PeriodicField::from_fn(g, |x| 2.0 + (2.0 * PI * x[1]).sin());
    let a = SymbolGrid::new(g, 1.0, Regularity::SMOOTH)
        .with_term(v.clone(), Multiplier::Monomial([1, 0, 0]))
        .unwrap();
    let u = sobolev_field(g, 2.0, &mut rng(5));
    let lhs = quantize(&a, &u).unwrap();
    let rhs = v.mul(&u.derivative(0).unwrap()).unwrap();
    assert!(lhs.sub(&rhs).unwrap().sup_norm() <= 1e-12 * rhs.sup_norm());
}

#[test]
fn garding_exact_subcases() {
    let g = Grid::new(64, 2).unwrap();
    let a = SymbolGrid::multiplication(
        PeriodicField::from_fn(g, |x| 1.0 + (2.0 * PI * x[0]).cos()),
        Regularity::SMOOTH,
    )
    .unwrap();
    let rep = garding_margin(&a, 200, 0.0, &mut rng(1)).unwrap();
    assert_eq!(rep.exact_nonnegative, Some(true));
    assert!(rep.min_quadratic_form >= -1e-12);

    let table = g.lattice_multiplier(|k| {
        let k2 = k[0] * k[0] + k[1] * k[1];
        Complex64::new(k2 / (1.0 + k2), 0.0)
    });
    let b = SymbolGrid::fourier_multiplier(g, Multiplier::Table(table));
    let rep = garding_margin(&b, 200, 0.0, &mut rng(2)).unwrap();
    assert_eq!(rep.exact_nonnegative, Some(true));
    assert!(rep.min_quadratic_form >= -1e-12);
}

#[test]
fn garding_mixed_symbol_margin() {
    let g = Grid::new(64, 2).unwrap();
    let table = g.lattice_multiplier(|k| {
        let k2 = k[0] * k[0] + k[1] * k[1];
        Complex64::new(k2.sqrt() / (1.0 + k2).sqrt(), 0.0)
    });
    let a = SymbolGrid::new(g, 0.0, Regularity::SMOOTH)
        .with_term(
            PeriodicField::from_fn(g, |x| 1.0 + (2.0 * PI * x[0]).cos()),
            Multiplier::Table(table),
        )
        .unwrap();
    let rep = garding_margin(&a, 200, 0.0, &mut rng(3)).unwrap();
    assert!(rep.subcase.is_none());
    assert!(rep.fitted_c.is_finite());
    assert!(rep.margin_at_unit_c >= 0.0, "margin {}", rep.margin_at_unit_c);
}

#[test]
fn parametrix_gains_one_order_in_cone() {
    let g = Grid::new(256, 2).unwrap();
    let coeff = PeriodicField::from_fn(g, |x| 2.0 + (2.0 * PI * x[0]).sin());
    let a = SymbolGrid::new(g, 1.0, Regularity::SMOOTH)
        .with_term(coeff, Multiplier::Monomial([1, 0, 0]))
        .unwrap();
    let cone = Cone {
        direction: [1.0, 0.0, 0.0],
        aperture: 0.5,
    };
    let f = sobolev_field(g, 0.5, &mut rng(31));
    let chi_f = {
        let t = g.lattice_multiplier(|k| {
            Complex64::new(
                paradyn::parax::Multiplier::ConeCutoff {
                    direction: cone.direction,
                    aperture: cone.aperture,
                }
                .eval(k, g.top_band())
                .unwrap()
                .re,
                0.0,
            )
        });
        f.apply_multiplier(&t).unwrap()
    };
    let res = parametrix_residual(&a, &cone, 2.0, &f).unwrap();
    let gain = exponent(&res, None) - exponent(&chi_f, None);
    assert!(gain >= 0.85, "gain {gain}");
}

#[test]
fn parametrix_rejects_cone_through_characteristic_set() {
    let g = Grid::new(32, 2).unwrap();
    let a = SymbolGrid::new(g, 1.0, Regularity::SMOOTH)
        .with_term(
            PeriodicField::from_fn(g, |x| 2.0 + (2.0 * PI * x[0]).sin()),
            Multiplier::Monomial([1, 0, 0]),
        )
        .unwrap();
    let cone = Cone {
        direction: [0.0, 1.0, 0.0],
        aperture: 0.4,
    };
    let f = PeriodicField::constant(g, 1.0);
    assert!(matches!(
        elliptic_parametrix_apply(&a, &cone, 1.0, &f),
        Err(paradyn::Error::Ellipticity { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bony_identity_and_symmetry(seed in 0u64..1_000_000, s in -0.5f64..2.0, t in -0.5f64..2.0) {
        let g = Grid::new(32, 2).unwrap();
        let mut r = rng(seed);
        let a = sobolev_field(g, s, &mut r);
        let b = sobolev_field(g, t, &mut r);
        let ab = a.mul(&b).unwrap();
        let rem = bony_remainder(&a, &b).unwrap();
        let recon = paraproduct(&a, &b).unwrap()
            .add(&paraproduct(&b, &a).unwrap()).unwrap()
            .add(&rem).unwrap();
        prop_assert!(ab.sub(&recon).unwrap().sup_norm() <= 1e-12 * ab.sup_norm());
        prop_assert_eq!(rem, bony_remainder(&b, &a).unwrap());
    }

    #[test]
    fn paraproduct_is_bilinear(seed in 0u64..1_000_000, lam in -3.0f64..3.0) {
        let g = Grid::new(32, 2).unwrap();
        let mut r = rng(seed);
        let a1 = sobolev_field(g, 0.3, &mut r);
        let a2 = sobolev_field(g, 0.7, &mut r);
        let b = sobolev_field(g, 0.1, &mut r);
        let lhs = paraproduct(&a1.add(&a2.scale(lam)).unwrap(), &b).unwrap();
        let rhs = paraproduct(&a1, &b).unwrap().add(&paraproduct(&a2, &b).unwrap().scale(lam)).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().sup_norm() <= 1e-13 * lhs.sup_norm().max(1.0));
        let lhs = bony_remainder(&b, &a1.add(&a2.scale(lam)).unwrap()).unwrap();
        let rhs = bony_remainder(&b, &a1).unwrap().add(&bony_remainder(&b, &a2).unwrap().scale(lam)).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().sup_norm() <= 1e-13 * lhs.sup_norm().max(1.0));
    }

    #[test]
    fn regularization_splits_exactly(seed in 0u64..1_000_000, r in 0.3f64..1.8) {
        let g = Grid::new(64, 2).unwrap();
        let (p, _) = first_order_rough(g, r, (seed % 2) as usize, seed);
        let (sharp, flat) = regularize_symbol(&p, r).unwrap();
        let u = sobolev_field(g, 1.0, &mut rng(seed + 1));
        let whole = quantize(&p, &u).unwrap();
        let split = quantize(&sharp, &u).unwrap().add(&quantize(&flat, &u).unwrap()).unwrap();
        prop_assert!(whole.sub(&split).unwrap().sup_norm() <= 1e-12 * whole.sup_norm());
    }

    #[test]
    fn quantize_is_linear(seed in 0u64..1_000_000, lam in -2.0f64..2.0) {
        let g = Grid::new(32, 2).unwrap();
        let (p, _) = first_order_rough(g, 0.7, 0, seed);
        let mut r = rng(seed ^ 0x5eed);
        let u = sobolev_field(g, 1.2, &mut r);
        let v = sobolev_field(g, 0.4, &mut r);
        let lhs = quantize(&p, &u.add(&v.scale(lam)).unwrap()).unwrap();
        let rhs = quantize(&p, &u).unwrap().add(&quantize(&p, &v).unwrap().scale(lam)).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().sup_norm() <= 1e-12 * lhs.sup_norm().max(1.0));
    }
}
