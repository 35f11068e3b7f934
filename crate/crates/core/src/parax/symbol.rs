use std::f64::consts::{FRAC_PI_2, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid, PeriodicField, ValueShape};
use crate::spectral::{band_weight, japanese_bracket, smooth_step};

/// Fourier multiplier part `μ(k)` of a separable symbol term.
#[derive(Clone, Debug, PartialEq)]
pub enum Multiplier {
    One,
    /// `⟨k⟩^s`.
    JapaneseBracketPow(f64),
    /// `(2πik)^α`, the symbol of `∂^α` under the lattice convention.
    Monomial([u32; 3]),
    /// Smooth even angular cutoff: 1 within `aperture` of `±direction`,
    /// 0 beyond `1.5 * aperture`, and 0 at `k = 0`.
    ConeCutoff { direction: [f64; 3], aperture: f64 },
    /// Values on the lattice of one grid (flat order).
    Table(Vec<Complex64>),
    /// `ψ_band(k) · base(k)` with `ψ_j` the dyadic partition.
    Banded { band: i32, base: Box<Multiplier> },
}

/// Smooth angular cutoff around `±direction`.
pub fn cone_cutoff_value(direction: [f64; 3], aperture: f64, k: [f64; 3]) -> f64 {
    let kn = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
    if kn == 0.0 {
        return 0.0;
    }
    if aperture >= FRAC_PI_2 {
        return 1.0;
    }
    let dn = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
    let cos = ((k[0] * direction[0] + k[1] * direction[1] + k[2] * direction[2]).abs()
        / (kn * dn))
        .min(1.0);
    let theta = cos.acos();
    1.0 - smooth_step((theta - aperture) / (0.5 * aperture))
}

impl Multiplier {
    /// Value at a (possibly non-lattice) frequency. Tables have no
    /// continuous extension and return `None`.
    pub fn eval(&self, k: [f64; 3], top: i32) -> Option<Complex64> {
        Some(match self {
            Multiplier::One => Complex64::new(1.0, 0.0),
            Multiplier::JapaneseBracketPow(s) => Complex64::new(japanese_bracket(k).powf(*s), 0.0),
            Multiplier::Monomial(alpha) => {
                let mut z = Complex64::new(1.0, 0.0);
                for a in 0..3 {
                    z *= Complex64::new(0.0, TAU * k[a]).powu(alpha[a]);
                }
                z
            }
            Multiplier::ConeCutoff {
                direction,
                aperture,
            } => Complex64::new(cone_cutoff_value(*direction, *aperture, k), 0.0),
            Multiplier::Table(_) => return None,
            Multiplier::Banded { band, base } => {
                let rho = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
                base.eval(k, top)? * band_weight(*band, rho, top)
            }
        })
    }

    fn contains_table(&self) -> bool {
        match self {
            Multiplier::Table(_) => true,
            Multiplier::Banded { base, .. } => base.contains_table(),
            _ => false,
        }
    }

    /// Values on the lattice of `grid`, in flat order.
    pub fn lattice(&self, grid: Grid) -> Result<Vec<Complex64>> {
        match self {
            Multiplier::Table(values) => {
                if values.len() != grid.len() {
                    return Err(Error::Config(format!(
                        "multiplier table has {} entries, grid {} has {}",
                        values.len(),
                        grid,
                        grid.len()
                    )));
                }
                Ok(values.clone())
            }
            Multiplier::Banded { band, base } if self.contains_table() => {
                let b = base.lattice(grid)?;
                let top = grid.top_band();
                Ok(b.iter()
                    .enumerate()
                    .map(|(flat, z)| z * band_weight(*band, grid.wavenumber(flat), top))
                    .collect())
            }
            _ => {
                let top = grid.top_band();
                Ok(grid.lattice_multiplier(|k| self.eval(k, top).expect("no table")))
            }
        }
    }

    /// Order of growth in `|k|` (tables and cutoffs count as order 0).
    pub fn order(&self) -> f64 {
        match self {
            Multiplier::JapaneseBracketPow(s) => *s,
            Multiplier::Monomial(a) => (a[0] + a[1] + a[2]) as f64,
            Multiplier::Banded { base, .. } => base.order(),
            _ => 0.0,
        }
    }
}

/// Regularity of the coefficients: a Hölder exponent, or smooth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Regularity {
    Finite(f64),
    Smooth(SmoothTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothTag {
    Smooth,
}

impl Regularity {
    pub const SMOOTH: Regularity = Regularity::Smooth(SmoothTag::Smooth);

    pub fn value(&self) -> f64 {
        match self {
            Regularity::Finite(r) => *r,
            Regularity::Smooth(_) => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolTerm {
    pub coeff: PeriodicField,
    pub multiplier: Multiplier,
}

/// A symbol `a(x, k) = Σ_m a_m(x) μ_m(k)` on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolGrid {
    grid: Grid,
    terms: Vec<SymbolTerm>,
    order: f64,
    regularity: Regularity,
}

impl SymbolGrid {
    pub fn new(grid: Grid, order: f64, regularity: Regularity) -> Self {
        Self {
            grid,
            terms: Vec::new(),
            order,
            regularity,
        }
    }

    /// `a(x, k) = μ(k)`.
    pub fn fourier_multiplier(grid: Grid, multiplier: Multiplier) -> Self {
        let order = multiplier.order();
        let mut s = Self::new(grid, order, Regularity::SMOOTH);
        s.terms.push(SymbolTerm {
            coeff: PeriodicField::constant(grid, 1.0),
            multiplier,
        });
        s
    }

    /// `a(x, k) = a(x)`.
    pub fn multiplication(coeff: PeriodicField, regularity: Regularity) -> Result<Self> {
        let mut s = Self::new(coeff.grid(), 0.0, regularity);
        s.push(coeff, Multiplier::One)?;
        Ok(s)
    }

    pub fn push(&mut self, coeff: PeriodicField, multiplier: Multiplier) -> Result<()> {
        if coeff.grid() != self.grid {
            return Err(Error::GridMismatch {
                left: self.grid.to_string(),
                right: coeff.grid().to_string(),
            });
        }
        if coeff.shape() != ValueShape::Scalar {
            return Err(Error::Config("symbol coefficients must be scalar".into()));
        }
        multiplier.lattice(self.grid)?;
        self.terms.push(SymbolTerm { coeff, multiplier });
        Ok(())
    }

    pub fn with_term(mut self, coeff: PeriodicField, multiplier: Multiplier) -> Result<Self> {
        self.push(coeff, multiplier)?;
        Ok(self)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn terms(&self) -> &[SymbolTerm] {
        &self.terms
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn regularity(&self) -> Regularity {
        self.regularity
    }

    pub fn set_order(&mut self, order: f64) {
        self.order = order;
    }

    /// All coefficients constant in `x`.
    pub fn is_x_independent(&self) -> bool {
        self.terms.iter().all(|t| is_constant(&t.coeff))
    }

    /// All multipliers identically one.
    pub fn is_multiplication(&self) -> bool {
        self.terms.iter().all(|t| t.multiplier == Multiplier::One)
    }

    /// Lattice values of every multiplier, in term order.
    pub fn multiplier_tables(&self) -> Vec<Vec<Complex64>> {
        self.terms
            .iter()
            .map(|t| t.multiplier.lattice(self.grid).expect("validated on push"))
            .collect()
    }

    /// `a(x_i, k_l)` for grid point `x_flat` and lattice point `k_flat`.
    pub fn eval(&self, tables: &[Vec<Complex64>], x_flat: usize, k_flat: usize) -> Complex64 {
        self.terms
            .iter()
            .zip(tables)
            .map(|(t, m)| t.coeff.values()[x_flat] * m[k_flat])
            .sum()
    }
}

pub(crate) fn is_constant(u: &PeriodicField) -> bool {
    let v = u.values();
    v.iter().all(|z| *z == v[0])
}

/// Op(a)u `= Σ_m a_m · (μ_m û)^∨`.
pub fn quantize(a: &SymbolGrid, u: &PeriodicField) -> Result<PeriodicField> {
    if u.grid() != a.grid {
        return Err(Error::GridMismatch {
            left: a.grid.to_string(),
            right: u.grid().to_string(),
        });
    }
    let mut acc = PeriodicField::zeros(a.grid, u.shape(), u.dtype());
    for term in &a.terms {
        let m = term.multiplier.lattice(a.grid)?;
        let filtered = if term.multiplier == Multiplier::One {
            u.clone()
        } else {
            u.apply_multiplier(&m)?
        };
        let product = if is_constant(&term.coeff) {
            let c = term.coeff.values()[0];
            if c.im == 0.0 {
                filtered.scale(c.re)
            } else {
                filtered.scale_complex(c)
            }
        } else {
            multiply_components(&term.coeff, &filtered)?
        };
        acc = acc.add(&product)?;
    }
    Ok(acc)
}

fn multiply_components(coeff: &PeriodicField, u: &PeriodicField) -> Result<PeriodicField> {
    if u.shape() == ValueShape::Scalar {
        return coeff.mul(u);
    }
    let parts: Result<Vec<_>> = (0..u.components())
        .map(|c| coeff.mul(&u.component(c)))
        .collect();
    PeriodicField::stack(&parts?)
}

/// Cutoff in the `x`-frequency `|η|` applied to coefficients of band `j`:
/// 1 for `|η| <= 2^j/16`, 0 for `|η| >= 2^j/2`. Bands `j <= 1` are left
/// untouched.
pub fn band_cutoff(j: i32, eta: f64) -> f64 {
    if j <= 1 {
        return 1.0;
    }
    let t = eta / 2f64.powi(j);
    1.0 - smooth_step((t - 1.0 / 16.0) / (0.5 - 1.0 / 16.0))
}

/// Splits `p = p♯ + p♭`: in band `j` of each multiplier, `p♯` keeps the
/// `x`-frequencies of the coefficient that are small compared to `2^j`.
/// `p♭` has order `m - r`.
pub fn regularize_symbol(p: &SymbolGrid, r: f64) -> Result<(SymbolGrid, SymbolGrid)> {
    let grid = p.grid;
    let mut sharp = SymbolGrid::new(grid, p.order, p.regularity);
    let mut flat = SymbolGrid::new(grid, p.order - r, p.regularity);
    for term in &p.terms {
        if is_constant(&term.coeff) {
            sharp.terms.push(term.clone());
            continue;
        }
        for j in -1..=grid.top_band() {
            let banded = Multiplier::Banded {
                band: j,
                base: Box::new(term.multiplier.clone()),
            };
            if j <= 1 {
                sharp.terms.push(SymbolTerm {
                    coeff: term.coeff.clone(),
                    multiplier: banded,
                });
                continue;
            }
            let chi = grid.lattice_multiplier(|eta| {
                let n = (eta[0] * eta[0] + eta[1] * eta[1] + eta[2] * eta[2]).sqrt();
                Complex64::new(band_cutoff(j, n), 0.0)
            });
            let low = term.coeff.apply_multiplier(&chi)?;
            let high = term.coeff.sub(&low)?;
            sharp.terms.push(SymbolTerm {
                coeff: low,
                multiplier: banded.clone(),
            });
            flat.terms.push(SymbolTerm {
                coeff: high,
                multiplier: banded,
            });
        }
    }
    Ok((sharp, flat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::sobolev_field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn identity_symbol_is_identity() {
        let g = Grid::new(32, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = sobolev_field(g, 0.5, &mut rng);
        let a = SymbolGrid::fourier_multiplier(g, Multiplier::One);
        assert_eq!(quantize(&a, &u).unwrap(), u);
    }

    #[test]
    fn bracket_on_mode() {
        let g = Grid::new(32, 2).unwrap();
        let u = PeriodicField::from_fn(g, |x| (2.0 * PI * 2.0 * x[0]).cos());
        let a = SymbolGrid::fourier_multiplier(g, Multiplier::JapaneseBracketPow(0.5));
        let v = quantize(&a, &u).unwrap();
        let expect = u.scale(5f64.powf(0.25));
        assert!(v.sub(&expect).unwrap().sup_norm() < 1e-13);
    }

    #[test]
    fn x_independent_symbol_is_all_sharp() {
        let g = Grid::new(32, 2).unwrap();
        let p = SymbolGrid::fourier_multiplier(g, Multiplier::Monomial([1, 0, 0]));
        let (sharp, flat) = regularize_symbol(&p, 1.0).unwrap();
        assert_eq!(sharp.terms(), p.terms());
        assert!(flat.terms().is_empty());
    }

    #[test]
    fn cutoff_matches_band_supports() {
        assert_eq!(band_cutoff(3, 8.0), 0.0);
        assert_eq!(band_cutoff(4, 8.0), 0.0);
        assert_eq!(band_cutoff(7, 8.0), 1.0);
        assert!(band_cutoff(5, 8.0) > 0.0 && band_cutoff(5, 8.0) < 1.0);
        assert_eq!(band_cutoff(1, 1e9), 1.0);
    }
}
