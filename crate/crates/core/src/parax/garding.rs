use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{random_phase_field, sobolev_norm};

use super::symbol::{quantize, Regularity, SymbolGrid};

/// The two cases where nonnegativity of the quadratic form is exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subcase {
    /// `a = a(x) >= 0`.
    Multiplication,
    /// `a = μ(k) >= 0`.
    FourierMultiplier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GardingReport {
    pub trials: usize,
    pub order: f64,
    /// Coefficient regularity used in the lower-order norm (capped at 2).
    pub regularity: f64,
    /// Index `m/2 - r/4` of the correcting Sobolev norm.
    pub sobolev_index: f64,
    /// Smallest `C >= 0` making every trial nonnegative.
    pub fitted_c: f64,
    /// `min Re⟨Op(a)u, u⟩ + ‖u‖²` over trials (the margin at `C = 1`).
    pub margin_at_unit_c: f64,
    /// `min Re⟨Op(a)u, u⟩` over trials with `‖u‖ = 1`.
    pub min_quadratic_form: f64,
    pub subcase: Option<Subcase>,
    /// In an exact subcase: whether every trial had `Re⟨Op(a)u, u⟩ >= -1e-12`.
    pub exact_nonnegative: Option<bool>,
}

const SIGN_TOL: f64 = 1e-12;

/// Empirical Gårding sweep over random test fields.
///
/// The symbol must have nonnegative real part at every grid point for
/// `|k| >= cutoff`; otherwise it is rejected.
pub fn garding_margin<R: Rng + ?Sized>(
    a: &SymbolGrid,
    trials: usize,
    cutoff: f64,
    rng: &mut R,
) -> Result<GardingReport> {
    check_sign(a, cutoff)?;
    let grid = a.grid();
    let r = match a.regularity() {
        Regularity::Finite(r) => r.min(2.0),
        Regularity::Smooth(_) => 2.0,
    };
    let index = a.order() / 2.0 - r / 4.0;
    let subcase = if a.is_multiplication() {
        Some(Subcase::Multiplication)
    } else if a.is_x_independent() {
        Some(Subcase::FourierMultiplier)
    } else {
        None
    };
    let half_dim = grid.dim() as f64 / 2.0;
    let mut fitted_c: f64 = 0.0;
    let mut margin = f64::INFINITY;
    let mut min_form = f64::INFINITY;
    for _ in 0..trials {
        // Envelopes from very rough to smooth.
        let decay = half_dim + rng.random_range(-0.9..2.5);
        let u = random_phase_field(grid, decay, rng);
        let u = u.scale(1.0 / u.l2_norm());
        let form = quantize(a, &u)?.inner(&u)?.re;
        let lower = sobolev_norm(&u, index).powi(2);
        min_form = min_form.min(form);
        margin = margin.min(form + lower);
        if form < 0.0 {
            fitted_c = fitted_c.max(-form / lower);
        }
    }
    let exact_nonnegative = subcase.map(|_| min_form >= -SIGN_TOL);
    Ok(GardingReport {
        trials,
        order: a.order(),
        regularity: r,
        sobolev_index: index,
        fitted_c,
        margin_at_unit_c: margin,
        min_quadratic_form: min_form,
        subcase,
        exact_nonnegative,
    })
}

fn check_sign(a: &SymbolGrid, cutoff: f64) -> Result<()> {
    let grid = a.grid();
    let tables = a.multiplier_tables();
    let ks: Vec<usize> = (0..grid.len())
        .filter(|&k| grid.wavenumber(k) >= cutoff)
        .collect();
    // Keep the scan near 2^26 symbol evaluations.
    let stride = ((grid.len() * ks.len()) >> 26).max(1);
    let scale = a
        .terms()
        .iter()
        .zip(&tables)
        .map(|(t, m)| {
            t.coeff.sup_norm() * m.iter().map(|z| z.norm()).fold(0.0, f64::max)
        })
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    for x in (0..grid.len()).step_by(stride) {
        for &k in &ks {
            let v = a.eval(&tables, x, k).re;
            if v < -SIGN_TOL * scale {
                return Err(Error::Precondition(format!(
                    "Re a(x, k) = {v:e} < 0 at x = {:?}, k = {:?}",
                    grid.point(x),
                    grid.wavevector(k)
                )));
            }
        }
    }
    Ok(())
}
