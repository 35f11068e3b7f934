//! Littlewood–Paley decomposition, Sobolev norms and dyadic regularity fits.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FftNd, Grid, PeriodicField, ValueShape};

/// `exp(-1/(1-t^2))` on `(-1, 1)`, zero outside.
pub fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// Smooth step: 0 for `t <= 0`, 1 for `t >= 1`.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

/// Unnormalized profile of band `j` at radius `rho`.
fn raw_profile(j: i32, rho: f64) -> f64 {
    if j < 0 {
        // 1 on [0, 1/2], decaying to 0 at 1.
        1.0 - smooth_step(2.0 * rho - 1.0)
    } else if rho <= 0.0 {
        0.0
    } else {
        bump(rho.log2() - j as f64)
    }
}

/// Normalized weight of band `j` at radius `rho` for a grid whose top band
/// is `top`.
pub fn band_weight(j: i32, rho: f64, top: i32) -> f64 {
    let total: f64 = (-1..=top).map(|i| raw_profile(i, rho)).sum();
    raw_profile(j, rho) / total
}

/// Partition of unity on the lattice: `weights[j+1][flat]` is the multiplier
/// of band `j`, for `j = -1..=J`.
pub fn band_weights(grid: Grid) -> Vec<Vec<f64>> {
    let top = grid.top_band();
    let nb = (top + 2) as usize;
    let mut weights = vec![vec![0.0; grid.len()]; nb];
    for flat in 0..grid.len() {
        let rho = grid.wavenumber(flat);
        let raw: Vec<f64> = (-1..=top).map(|j| raw_profile(j, rho)).collect();
        let total: f64 = raw.iter().sum();
        debug_assert!(total > 0.0);
        for (b, w) in raw.into_iter().enumerate() {
            weights[b][flat] = w / total;
        }
    }
    weights
}

/// Which dyadic band carries the most weight at radius `rho`.
pub fn dominant_band(rho: f64) -> i32 {
    if rho < 0.75 {
        -1
    } else {
        rho.log2().round() as i32
    }
}

/// The pieces `Δ_j u` for `j = -1..=J`.
#[derive(Clone, Debug)]
pub struct DyadicBlocks {
    blocks: Vec<PeriodicField>,
    top: i32,
}

impl DyadicBlocks {
    pub fn top_band(&self) -> i32 {
        self.top
    }

    /// `Δ_j u`; `j` ranges over `-1..=J`.
    pub fn block(&self, j: i32) -> &PeriodicField {
        &self.blocks[(j + 1) as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, &PeriodicField)> {
        self.blocks.iter().enumerate().map(|(b, f)| (b as i32 - 1, f))
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// `S_k u = Σ_{j <= k} Δ_j u`. Empty sums are zero.
    pub fn partial_sum(&self, k: i32) -> PeriodicField {
        let first = &self.blocks[0];
        let mut acc = PeriodicField::zeros(first.grid(), first.shape(), first.dtype());
        for (j, b) in self.iter() {
            if j > k {
                break;
            }
            acc = acc.add(b).expect("blocks share a grid");
        }
        acc
    }

    pub fn reconstruct(&self) -> PeriodicField {
        self.partial_sum(self.top)
    }

    pub fn into_blocks(self) -> Vec<PeriodicField> {
        self.blocks
    }
}

/// Splits `u` into dyadic frequency bands.
pub fn lp_decompose(u: &PeriodicField) -> DyadicBlocks {
    let grid = u.grid();
    let weights = band_weights(grid);
    let n = grid.len();
    let spec = u.spectrum();
    let fft = FftNd::new(grid);
    let blocks = weights
        .iter()
        .map(|w| {
            let mut data = spec.clone();
            for c in 0..u.components() {
                let plane = &mut data[c * n..(c + 1) * n];
                plane.iter_mut().zip(w).for_each(|(z, &m)| *z *= m);
                fft.inverse(plane);
            }
            PeriodicField::from_parts(grid, u.shape(), u.dtype(), data).expect("same layout")
        })
        .collect();
    DyadicBlocks {
        blocks,
        top: grid.top_band(),
    }
}

/// `⟨k⟩ = (1 + |k|^2)^{1/2}`.
pub fn japanese_bracket(k: [f64; 3]) -> f64 {
    (1.0 + k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt()
}

/// `‖⟨k⟩^s û‖_{ℓ²}`, summed over all components.
pub fn sobolev_norm(u: &PeriodicField, s: f64) -> f64 {
    let grid = u.grid();
    let n = grid.len();
    let spec = u.spectrum();
    let mut sum = 0.0;
    for c in 0..u.components() {
        for flat in 0..n {
            let k = grid.wavevector(flat);
            let br = 1.0 + (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
            sum += br.powf(s) * spec[c * n + flat].norm_sqr();
        }
    }
    sum.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Sobolev,
    Holder,
}

/// Ordinary least squares line through `(x, y)` points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square of the residuals.
    pub residual: f64,
    /// Standard error of the slope (zero for exact fits or two points).
    pub slope_stderr: f64,
    pub points: usize,
}

pub fn fit_line(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let slope_stderr = if points.len() > 2 && sxx > 0.0 {
        (ss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit {
        slope,
        intercept,
        residual: (ss / n).sqrt(),
        slope_stderr,
        points: points.len(),
    }
}

/// Result of a dyadic regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityFit {
    pub scale: Scale,
    /// Estimated exponent (minus the fitted slope).
    pub exponent: f64,
    pub fit: LinearFit,
    /// `(j, log2 ‖Δ_j u‖)` over the fitted bands.
    pub log_norms: Vec<(i32, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RegularityEstimate {
    Fitted(RegularityFit),
    SpectrallyTrivial,
}

impl RegularityEstimate {
    pub fn exponent(&self) -> Option<f64> {
        match self {
            RegularityEstimate::Fitted(f) => Some(f.exponent),
            RegularityEstimate::SpectrallyTrivial => None,
        }
    }

    pub fn is_trivial(&self) -> bool {
        matches!(self, RegularityEstimate::SpectrallyTrivial)
    }
}

/// Default regression window `[3, J-2]`, clipped to something usable on
/// small grids.
pub fn default_bands(grid: Grid) -> (i32, i32) {
    let hi = grid.top_band() - 2;
    if hi - 3 >= 2 {
        (3, hi)
    } else {
        ((hi - 2).max(0), hi.max(2))
    }
}

/// Norms `‖Δ_j u‖` (L² for Sobolev, sup for Hölder) for `j = -1..=J`.
pub fn block_norms(u: &PeriodicField, scale: Scale) -> Vec<(i32, f64)> {
    lp_decompose(u)
        .iter()
        .map(|(j, b)| {
            let v = match scale {
                Scale::Sobolev => b.l2_norm(),
                Scale::Holder => b.sup_norm(),
            };
            (j, v)
        })
        .collect()
}

/// Estimates the Sobolev or Hölder exponent of `u` from the decay of its
/// dyadic block norms over `bands` (inclusive; defaults to `[3, J-2]`).
pub fn estimate_regularity(
    u: &PeriodicField,
    scale: Scale,
    bands: Option<(i32, i32)>,
) -> Result<RegularityEstimate> {
    let grid = u.grid();
    let (lo, hi) = bands.unwrap_or_else(|| default_bands(grid));
    if lo < 0 || hi > grid.top_band() || hi - lo + 1 < 3 {
        return Err(Error::Precondition(format!(
            "band range [{lo}, {hi}] must lie in [0, {}] and span at least 3 bands",
            grid.top_band()
        )));
    }
    let norms = block_norms(u, scale);
    Ok(fit_block_norms(&norms, scale, (lo, hi), u.sup_norm()))
}

/// Regression on precomputed block norms. `reference` is the size of the
/// field; blocks at rounding level relative to it count as empty.
pub fn fit_block_norms(
    norms: &[(i32, f64)],
    scale: Scale,
    (lo, hi): (i32, i32),
    reference: f64,
) -> RegularityEstimate {
    let floor = (64.0 * f64::EPSILON * reference).max(1e-300);
    let selected: Vec<(i32, f64)> = norms
        .iter()
        .copied()
        .filter(|&(j, _)| j >= lo && j <= hi)
        .collect();
    if selected.iter().all(|&(_, v)| v <= floor) {
        return RegularityEstimate::SpectrallyTrivial;
    }
    let log_norms: Vec<(i32, f64)> = selected
        .iter()
        .map(|&(j, v)| (j, v.max(1e-300).log2()))
        .collect();
    let pts: Vec<(f64, f64)> = log_norms.iter().map(|&(j, y)| (j as f64, y)).collect();
    let fit = fit_line(&pts);
    RegularityEstimate::Fitted(RegularityFit {
        scale,
        exponent: -fit.slope,
        fit,
        log_norms,
    })
}

/// Real field with random phases and `|û(k)| = ⟨k⟩^{-decay}`.
pub fn random_phase_field<R: Rng + ?Sized>(grid: Grid, decay: f64, rng: &mut R) -> PeriodicField {
    let n = grid.size();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut done = vec![false; grid.len()];
    for flat in 0..grid.len() {
        if done[flat] {
            continue;
        }
        let idx = grid.multi_index(flat);
        let mut neg = [0usize; 3];
        for a in 0..grid.dim() {
            neg[a] = (n - idx[a]) % n;
        }
        let partner = grid.flat_index(neg);
        let k = grid.wavevector(flat);
        let amp = japanese_bracket([k[0] as f64, k[1] as f64, k[2] as f64]).powf(-decay);
        if partner == flat {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            coeffs[flat] = Complex64::new(sign * amp, 0.0);
        } else {
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            let c = Complex64::from_polar(amp, theta);
            coeffs[flat] = c;
            coeffs[partner] = c.conj();
            done[partner] = true;
        }
        done[flat] = true;
    }
    PeriodicField::from_spectrum(grid, coeffs).expect("length matches grid")
}

/// Random field in `H^s` but no better: `|û(k)| = ⟨k⟩^{-(s + n/2)}`.
pub fn sobolev_field<R: Rng + ?Sized>(grid: Grid, s: f64, rng: &mut R) -> PeriodicField {
    random_phase_field(grid, s + grid.dim() as f64 / 2.0, rng)
}

/// Random field of Hölder–Zygmund regularity `r`. Random phases keep block
/// sup norms within a logarithmic factor of block L² norms, so the same
/// envelope as [`sobolev_field`] gives `C^r`.
pub fn holder_field<R: Rng + ?Sized>(grid: Grid, r: f64, rng: &mut R) -> PeriodicField {
    sobolev_field(grid, r, rng)
}

/// `Σ_{j>=0} 2^{-αj} cos(2π 2^j x_1)` truncated at the grid.
pub fn weierstrass(grid: Grid, alpha: f64) -> PeriodicField {
    let top = grid.top_band();
    PeriodicField::from_fn(grid, |x| {
        (0..=top)
            .map(|j| {
                let f = (1u64 << j) as f64;
                f.powf(-alpha) * (std::f64::consts::TAU * f * x[0]).cos()
            })
            .sum()
    })
}

/// Independent standard normal samples.
pub fn white_noise<R: Rng + ?Sized>(grid: Grid, rng: &mut R) -> PeriodicField {
    let values = (0..grid.len()).map(|_| rng.sample(StandardNormal)).collect();
    PeriodicField::from_real(grid, values).expect("length matches grid")
}

/// Checks that a field is scalar.
pub(crate) fn require_scalar(u: &PeriodicField, what: &str) -> Result<()> {
    if u.shape() != ValueShape::Scalar {
        return Err(Error::Config(format!("{what} must be a scalar field")));
    }
    Ok(())
}
