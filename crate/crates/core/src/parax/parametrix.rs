use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{is_effectively_real, Dtype, PeriodicField};

use super::symbol::{cone_cutoff_value, quantize, SymbolGrid};

/// Double frequency cone `{k : angle(k, ±direction) <= aperture}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub direction: [f64; 3],
    /// Half-angle in radians.
    pub aperture: f64,
}

#[derive(Clone, Debug)]
pub struct Parametrix {
    /// `B f`.
    pub value: PeriodicField,
    /// `min |σ(x,k)| / |k|^m` over the cone, beyond the cutoff.
    pub min_ratio: f64,
    /// Whether the separable fast path was used.
    pub separable: bool,
}

const ELLIPTICITY_FLOOR: f64 = 1e-6;
const DIRECT_SUM_LIMIT: usize = 1 << 29;

fn cutoff_table(a: &SymbolGrid, cone: &Cone, cutoff: f64) -> Vec<f64> {
    let grid = a.grid();
    (0..grid.len())
        .map(|flat| {
            let k = grid.wavevector(flat);
            let nyquist = -(grid.size() as i64) / 2;
            // Nyquist modes have no sign, so odd symbols vanish there.
            if grid.wavenumber(flat) < cutoff || k.contains(&nyquist) {
                return 0.0;
            }
            cone_cutoff_value(cone.direction, cone.aperture, [k[0] as f64, k[1] as f64, k[2] as f64])
        })
        .collect()
}

/// Applies `B = Op(χ/σ)` where `χ` is the smooth cone cutoff (restricted to
/// `|k| >= cutoff` and away from Nyquist modes) and `σ` the symbol of `a`. Rejects symbols that are not
/// elliptic of order `m` on the support of `χ`.
pub fn elliptic_parametrix_apply(
    a: &SymbolGrid,
    cone: &Cone,
    cutoff: f64,
    f: &PeriodicField,
) -> Result<Parametrix> {
    let grid = a.grid();
    if f.grid() != grid {
        return Err(Error::GridMismatch {
            left: grid.to_string(),
            right: f.grid().to_string(),
        });
    }
    let chi = cutoff_table(a, cone, cutoff);
    let support: Vec<usize> = (0..grid.len()).filter(|&k| chi[k] > 0.0).collect();
    let tables = a.multiplier_tables();
    let m = a.order();

    // Ellipticity scan.
    let mut worst = (f64::INFINITY, 0usize, 0usize);
    for x in 0..grid.len() {
        for &k in &support {
            let ratio = a.eval(&tables, x, k).norm() / grid.wavenumber(k).powf(m);
            if ratio < worst.0 {
                worst = (ratio, x, k);
            }
        }
    }
    if worst.0 < ELLIPTICITY_FLOOR {
        return Err(Error::Ellipticity {
            x: grid.point(worst.1),
            k: grid.wavevector(worst.2),
            ratio: worst.0,
        });
    }

    let spec = f.spectrum();
    let terms = a.terms();
    if terms.len() == 1 {
        // σ = a0(x) μ(k): B f = a0^{-1} Op(χ/μ) f.
        let mu = &tables[0];
        let mult: Vec<Complex64> = (0..grid.len())
            .map(|k| {
                if chi[k] > 0.0 {
                    chi[k] / mu[k]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let g = f.apply_multiplier(&mult)?;
        let inv = terms[0].coeff.values().iter().map(|c| 1.0 / c).collect();
        let inv = PeriodicField::from_parts(
            grid,
            terms[0].coeff.shape(),
            terms[0].coeff.dtype(),
            inv,
        )?;
        return Ok(Parametrix {
            value: inv.mul(&g)?,
            min_ratio: worst.0,
            separable: true,
        });
    }

    if grid.len() * support.len() > DIRECT_SUM_LIMIT {
        return Err(Error::Config(format!(
            "non-separable parametrix on grid {grid} needs {} symbol evaluations",
            grid.len() * support.len()
        )));
    }
    let dim = grid.dim();
    let values: Vec<Complex64> = (0..grid.len())
        .into_par_iter()
        .map(|x| {
            let p = grid.point(x);
            support
                .iter()
                .map(|&k| {
                    let kv = grid.wavevector(k);
                    let phase: f64 = (0..dim).map(|d| kv[d] as f64 * p[d]).sum();
                    let e = Complex64::from_polar(1.0, std::f64::consts::TAU * phase);
                    chi[k] / a.eval(&tables, x, k) * spec[k] * e
                })
                .sum()
        })
        .collect();
    let dtype = if f.is_real() && is_effectively_real(&values) {
        Dtype::F64
    } else {
        Dtype::C128
    };
    Ok(Parametrix {
        value: PeriodicField::from_parts(grid, f.shape(), dtype, values)?,
        min_ratio: worst.0,
        separable: false,
    })
}

/// `Op(χ) f - B Op(a) f`, the defect of the one-step parametrix.
pub fn parametrix_residual(
    a: &SymbolGrid,
    cone: &Cone,
    cutoff: f64,
    f: &PeriodicField,
) -> Result<PeriodicField> {
    let chi: Vec<Complex64> = cutoff_table(a, cone, cutoff)
        .into_iter()
        .map(|c| Complex64::new(c, 0.0))
        .collect();
    let af = quantize(a, f)?;
    let b = elliptic_parametrix_apply(a, cone, cutoff, &af)?;
    f.apply_multiplier(&chi)?.sub(&b.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::parax::{Multiplier, Regularity};
    use crate::spectral::sobolev_field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn global_elliptic_multiplier_inverts_exactly() {
        let g = Grid::new(32, 2).unwrap();
        let a = SymbolGrid::fourier_multiplier(g, Multiplier::JapaneseBracketPow(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = sobolev_field(g, 0.0, &mut rng);
        let cone = Cone {
            direction: [1.0, 0.0, 0.0],
            aperture: PI / 2.0,
        };
        let res = parametrix_residual(&a, &cone, 0.0, &f).unwrap();
        assert!(res.l2_norm() <= 1e-10 * f.l2_norm());
    }

    #[test]
    fn zero_of_symbol_in_cone_is_rejected() {
        let g = Grid::new(16, 2).unwrap();
        let a = SymbolGrid::new(g, 1.0, Regularity::SMOOTH)
            .with_term(PeriodicField::constant(g, 1.0), Multiplier::Monomial([1, 0, 0]))
            .unwrap();
        let cone = Cone {
            direction: [0.0, 1.0, 0.0],
            aperture: 0.3,
        };
        let f = PeriodicField::constant(g, 1.0);
        match elliptic_parametrix_apply(&a, &cone, 1.0, &f) {
            Err(Error::Ellipticity { k, .. }) => assert_eq!(k[0], 0),
            other => panic!("expected ellipticity error, got {other:?}"),
        }
    }
}
