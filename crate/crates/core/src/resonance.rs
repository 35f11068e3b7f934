//! Anisotropic weights and truncated weighted transfer operators whose
//! eigenvalues approximate Ruelle resonances.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::Matrix2;
use ndarray::{Array1, Array2};
use ndarray_linalg::Eig;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{r2_points, AnosovSystem, RateReport};
use crate::error::{Error, Result};
use crate::field::{FourierSeries, Grid, PeriodicField};
use crate::microlocal::{csv_error, stable_conormal, unstable_conormal};
use crate::spectral::{japanese_bracket, require_scalar, smooth_step};

/// Direction angle of a covector, modulo `π`.
fn angle(k: [f64; 2]) -> f64 {
    k[1].atan2(k[0]).rem_euclid(PI)
}

/// Order function `m(ξ)` depending on the direction of `ξ` only: `s` on the
/// double cone around `E_s*`, `u` on the cone around `E_u*`, and a smooth
/// monotone interpolation along each of the two arcs between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeWeight {
    pub u: f64,
    pub s: f64,
    /// Half-angle of both cones, radians.
    pub aperture: f64,
    pub theta_u: f64,
    pub theta_s: f64,
    /// Number of `(T - t)`-weighted averaging steps applied (1 = none).
    pub averaging: usize,
    /// Worst sampled `m(dφ^{-T} ξ) - m(ξ)`.
    pub certificate: f64,
    /// Inverse-transpose of the linear part; moves directions towards `E_u*`.
    cotangent_map: [[f64; 2]; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightId {
    pub u: f64,
    pub s: f64,
    pub aperture: f64,
}

pub const CERTIFICATE_TOL: f64 = 1e-8;
const CERT_POINTS: usize = 64;
const CERT_ANGLES: usize = 720;
const MAX_AVERAGING: usize = 16;

impl EscapeWeight {
    pub fn id(&self) -> WeightId {
        WeightId {
            u: self.u,
            s: self.s,
            aperture: self.aperture,
        }
    }

    fn base_order(&self, theta: f64) -> f64 {
        let ccw = |from: f64, to: f64| (to - from).rem_euclid(PI);
        let arc = ccw(self.theta_s, self.theta_u);
        let a = self.aperture;
        let d = ccw(self.theta_s, theta);
        // Position along the arc containing θ, measured from E_s*.
        let (pos, len) = if d <= arc { (d, arc) } else { (PI - d, PI - arc) };
        let t = (pos - a) / (len - 2.0 * a);
        self.s + (self.u - self.s) * smooth_step(t)
    }

    fn push_linear(&self, k: [f64; 2]) -> [f64; 2] {
        let m = self.cotangent_map;
        [m[0][0] * k[0] + m[0][1] * k[1], m[1][0] * k[0] + m[1][1] * k[1]]
    }

    /// `m(ξ)`; `m(0) = 0`.
    pub fn order(&self, k: [f64; 2]) -> f64 {
        if k == [0.0, 0.0] {
            return 0.0;
        }
        if self.averaging <= 1 {
            return self.base_order(angle(k));
        }
        let t_max = self.averaging;
        let mut xi = k;
        let (mut acc, mut norm) = (0.0, 0.0);
        for t in 0..t_max {
            let w = (t_max - t) as f64;
            acc += w * self.base_order(angle(xi));
            norm += w;
            xi = self.push_linear(xi);
            let n = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
            xi = [xi[0] / n, xi[1] / n];
        }
        acc / norm
    }

    /// `G(ξ) = m(ξ) log⟨ξ⟩`.
    pub fn log_weight(&self, k: [f64; 2]) -> f64 {
        self.order(k) * japanese_bracket([k[0], k[1], 0.0]).ln()
    }

    /// Smallest truncation whose lattice resolves the cones.
    pub fn minimum_truncation(&self) -> usize {
        let n = (4.0 / self.aperture.sin()).ceil() as usize;
        n + n % 2
    }

    fn worst_defect(&self, sys: &AnosovSystem) -> (f64, [f64; 2], f64) {
        let points = r2_points(CERT_POINTS);
        points
            .par_iter()
            .map(|&x| {
                let d: Matrix2<f64> = sys.derivative(x);
                let dt = d.try_inverse().expect("dφ is invertible").transpose();
                let mut worst = (f64::NEG_INFINITY, x, 0.0);
                for i in 0..CERT_ANGLES {
                    let th = PI * i as f64 / CERT_ANGLES as f64;
                    let k = [th.cos(), th.sin()];
                    let kk = [dt[(0, 0)] * k[0] + dt[(0, 1)] * k[1], dt[(1, 0)] * k[0] + dt[(1, 1)] * k[1]];
                    let defect = self.order(kk) - self.order(k);
                    if defect > worst.0 {
                        worst = (defect, x, th);
                    }
                }
                worst
            })
            .reduce(
                || (f64::NEG_INFINITY, [0.0, 0.0], 0.0),
                |a, b| if b.0 > a.0 { b } else { a },
            )
    }
}

/// Builds and certifies an escape weight. For finitely smooth systems the
/// orders must satisfy `s + |u| < r - 1`.
pub fn build_escape_weight(sys: &AnosovSystem, u: f64, s: f64, aperture: f64) -> Result<EscapeWeight> {
    if !(u < 0.0 && s > 0.0) {
        return Err(Error::Precondition(format!("weight orders need u < 0 < s, got u = {u}, s = {s}")));
    }
    let r = sys.regularity();
    if r.is_finite() && s + u.abs() >= r - 1.0 {
        return Err(Error::Precondition(format!(
            "s + |u| = {} must be below r - 1 = {}",
            s + u.abs(),
            r - 1.0
        )));
    }
    let cu = unstable_conormal(sys);
    let cs = stable_conormal(sys);
    let (theta_u, theta_s) = (angle([cu[0], cu[1]]), angle([cs[0], cs[1]]));
    let gap = (theta_u - theta_s).rem_euclid(PI);
    if !(aperture > 0.0 && 2.0 * aperture < gap.min(PI - gap)) {
        return Err(Error::Precondition(format!(
            "aperture {aperture} too wide for cones {} rad apart",
            gap.min(PI - gap)
        )));
    }
    let a_inv_t = sys.linear().try_inverse().expect("unimodular").transpose();
    let mut w = EscapeWeight {
        u,
        s,
        aperture,
        theta_u,
        theta_s,
        averaging: 1,
        certificate: f64::INFINITY,
        cotangent_map: [[a_inv_t[(0, 0)], a_inv_t[(0, 1)]], [a_inv_t[(1, 0)], a_inv_t[(1, 1)]]],
    };
    loop {
        let (worst, x, th) = w.worst_defect(sys);
        w.certificate = worst;
        if worst <= CERTIFICATE_TOL {
            return Ok(w);
        }
        if w.averaging >= MAX_AVERAGING {
            return Err(Error::Certificate { worst, x, angle: th });
        }
        w.averaging *= 2;
    }
}

/// Lattice modes `k ∈ Z²` with `|k| <= n/2`, ordered by `(k1, k2)`.
pub fn truncation_modes(n: usize) -> Vec<[i64; 2]> {
    let r = (n / 2) as i64;
    let mut out = vec![];
    for k1 in -r..=r {
        for k2 in -r..=r {
            if k1 * k1 + k2 * k2 <= r * r {
                out.push([k1, k2]);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    /// Weighted transfer operator `u ↦ e^V · u∘φ^{-1}` of the time-one map.
    Map,
    /// Constant-roof suspension: the generator `-X + V` splits over the
    /// fiber Fourier index `n`, each block built from the return map.
    Flow { fiber_modes: usize },
}

/// Truncated weighted operator `W^{-1} K W` with `W = diag(⟨k⟩^{-m(k)})`.
#[derive(Clone, Debug)]
pub struct WeightedOperator {
    pub modes: Vec<[i64; 2]>,
    pub truncation: usize,
    pub weight: WeightId,
    pub backend: Backend,
    pub roof: f64,
    /// Matrix in the exponential basis when `V` is complex, or in the real
    /// cosine/sine basis when `V` is real.
    pub matrix: OperatorMatrix,
}

#[derive(Clone, Debug)]
pub enum OperatorMatrix {
    Real(Array2<f64>),
    Complex(Array2<Complex64>),
}

impl OperatorMatrix {
    pub fn dim(&self) -> usize {
        match self {
            OperatorMatrix::Real(a) => a.nrows(),
            OperatorMatrix::Complex(a) => a.nrows(),
        }
    }

    fn residual(&self, mu: Complex64, v: &Array1<Complex64>) -> f64 {
        let n = self.dim();
        let mut r2 = 0.0;
        for i in 0..n {
            let mut acc = -mu * v[i];
            match self {
                OperatorMatrix::Real(a) => {
                    for j in 0..n {
                        acc += a[(i, j)] * v[j];
                    }
                }
                OperatorMatrix::Complex(a) => {
                    for j in 0..n {
                        acc += a[(i, j)] * v[j];
                    }
                }
            }
            r2 += acc.norm_sqr();
        }
        let vn: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        r2.sqrt() / vn
    }
}

/// Quadrature oversampling relative to the truncation.
pub const QUADRATURE_FACTOR: usize = 4;

/// Assembles the truncated weighted operator for the potential `v` (a
/// scalar field on the 2D base, resampled onto the quadrature grid).
pub fn weighted_generator(
    sys: &AnosovSystem,
    v: &PeriodicField,
    weight: &EscapeWeight,
    n: usize,
    backend: Backend,
) -> Result<WeightedOperator> {
    require_scalar(v, "potential")?;
    if v.grid().dim() != 2 {
        return Err(Error::Config("potential must live on the 2D base".into()));
    }
    let minimum = weight.minimum_truncation();
    if n < minimum {
        return Err(Error::TruncationTooSmall { requested: n, minimum });
    }
    let roof = match backend {
        Backend::Map => 1.0,
        Backend::Flow { .. } => sys.roof(),
    };
    let quad = Grid::new((QUADRATURE_FACTOR * n).next_power_of_two(), 2)?;
    let vq = v.resample(quad.size())?;
    let factor: Vec<Complex64> = vq.values().iter().map(|z| (z * roof).exp()).collect();
    let pre: Vec<[f64; 2]> = (0..quad.len())
        .into_par_iter()
        .map(|i| {
            let p = quad.point(i);
            sys.step_inverse([p[0], p[1]])
        })
        .collect();
    let modes = truncation_modes(n);
    let index: Vec<usize> = modes
        .iter()
        .map(|k| quad.flat_of_freq([k[0], k[1], 0]).expect("inside quadrature grid"))
        .collect();
    // Column l holds the Fourier coefficients of e^{RV} e_l∘φ^{-1} at the modes.
    let columns: Vec<Vec<Complex64>> = modes
        .par_iter()
        .map(|l| {
            let vals: Vec<Complex64> = (0..quad.len())
                .map(|i| {
                    let x = pre[i];
                    factor[i] * Complex64::from_polar(1.0, TAU * (l[0] as f64 * x[0] + l[1] as f64 * x[1]))
                })
                .collect();
            let spec = PeriodicField::from_complex(quad, vals)
                .expect("quadrature grid")
                .spectrum();
            index.iter().map(|&j| spec[j]).collect()
        })
        .collect();
    let scale: Vec<f64> = modes
        .iter()
        .map(|k| weight.log_weight([k[0] as f64, k[1] as f64]).exp())
        .collect();
    let dim = modes.len();
    let weighted = |row: usize, col: usize| columns[col][row] * (scale[row] / scale[col]);
    let matrix = if v.is_real() {
        OperatorMatrix::Real(real_form(&modes, weighted))
    } else {
        OperatorMatrix::Complex(Array2::from_shape_fn((dim, dim), |(i, j)| weighted(i, j)))
    };
    Ok(WeightedOperator {
        modes,
        truncation: n,
        weight: weight.id(),
        backend,
        roof,
        matrix,
    })
}

/// Rewrites a conjugation-symmetric operator (`K_{-k,-l} = conj K_{k,l}`) in
/// the real basis `1, √2 cos 2πk·x, √2 sin 2πk·x` over a half lattice.
fn real_form(modes: &[[i64; 2]], entry: impl Fn(usize, usize) -> Complex64 + Sync) -> Array2<f64> {
    let pos = |k: [i64; 2]| modes.binary_search(&k).expect("symmetric mode set");
    // (index of k, index of -k, kind): kind 0 constant, 1 cosine, 2 sine.
    let mut basis: Vec<(usize, usize, u8)> = vec![];
    for (i, k) in modes.iter().enumerate() {
        if *k == [0, 0] {
            basis.push((i, i, 0));
        } else if k[0] > 0 || (k[0] == 0 && k[1] > 0) {
            let j = pos([-k[0], -k[1]]);
            basis.push((i, j, 1));
            basis.push((i, j, 2));
        }
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    // Expansion of each real basis vector in exponentials.
    let coeffs = |b: &(usize, usize, u8)| -> Vec<(usize, Complex64)> {
        match b.2 {
            0 => vec![(b.0, Complex64::new(1.0, 0.0))],
            1 => vec![(b.0, Complex64::new(h, 0.0)), (b.1, Complex64::new(h, 0.0))],
            _ => vec![(b.0, Complex64::new(0.0, -h)), (b.1, Complex64::new(0.0, h))],
        }
    };
    let expansions: Vec<Vec<(usize, Complex64)>> = basis.iter().map(coeffs).collect();
    let n = basis.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            (0..n)
                .map(|b| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for &(k, ck) in &expansions[a] {
                        for &(l, cl) in &expansions[b] {
                            acc += ck.conj() * entry(k, l) * cl;
                        }
                    }
                    acc.re
                })
                .collect()
        })
        .collect();
    Array2::from_shape_fn((n, n), |(a, b)| rows[a][b])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub re: f64,
    pub im: f64,
    pub residual: f64,
}

impl Resonance {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    /// Map backend: eigenvalues `μ` of the weighted transfer operator.
    /// Flow backend: resonances `λ = (Log μ + 2πin)/R` of `-X + V`.
    pub eigenvalues: Vec<Resonance>,
    pub weight: WeightId,
    #[serde(rename = "N")]
    pub n: usize,
    pub backend: Backend,
    pub strip_re_min: f64,
    pub s1: Option<f64>,
    pub delta: Option<f64>,
}

fn sort_key(z: &Complex64) -> (f64, f64) {
    (-z.norm(), z.arg())
}

/// Dense eigen-decomposition; keeps eigenvalues with `log|μ| > strip_re_min`
/// (map) or `Re λ > strip_re_min` (flow), each with its residual
/// `‖(P - μ)v‖/‖v‖` measured on the weighted matrix.
pub fn compute_resonances(op: &WeightedOperator, strip_re_min: f64) -> Result<ResonanceReport> {
    let (vals, vecs) = match &op.matrix {
        OperatorMatrix::Real(a) => a.eig(),
        OperatorMatrix::Complex(a) => a.eig(),
    }
    .map_err(|e| Error::Eigensolver(e.to_string()))?;
    let cut = match op.backend {
        Backend::Map => strip_re_min,
        Backend::Flow { .. } => strip_re_min * op.roof,
    };
    let mut kept: Vec<(Complex64, usize)> = vals
        .iter()
        .enumerate()
        .filter(|(_, mu)| mu.norm() > 0.0 && mu.norm().ln() > cut)
        .map(|(i, mu)| (*mu, i))
        .collect();
    kept.sort_by(|a, b| sort_key(&a.0).partial_cmp(&sort_key(&b.0)).expect("finite eigenvalues"));
    let with_residual: Vec<(Complex64, f64)> = kept
        .par_iter()
        .map(|&(mu, i)| (mu, op.matrix.residual(mu, &vecs.column(i).to_owned())))
        .collect();
    let eigenvalues = match op.backend {
        Backend::Map => with_residual
            .iter()
            .map(|(mu, r)| Resonance {
                re: mu.re,
                im: mu.im,
                residual: *r,
            })
            .collect(),
        Backend::Flow { fiber_modes } => {
            let m = fiber_modes as i64;
            let mut out = vec![];
            for (mu, r) in &with_residual {
                for j in -m..=m {
                    let lam = (mu.ln() + Complex64::new(0.0, TAU * j as f64)) / op.roof;
                    if lam.re > strip_re_min {
                        out.push(Resonance {
                            re: lam.re,
                            im: lam.im,
                            residual: *r,
                        });
                    }
                }
            }
            out.sort_by(|a, b| {
                (-a.re, a.im.abs(), a.im)
                    .partial_cmp(&(-b.re, b.im.abs(), b.im))
                    .expect("finite resonances")
            });
            out
        }
    };
    Ok(ResonanceReport {
        eigenvalues,
        weight: op.weight,
        n: op.truncation,
        backend: op.backend,
        strip_re_min,
        s1: None,
        delta: None,
    })
}

impl ResonanceReport {
    pub fn values(&self) -> Vec<Complex64> {
        self.eigenvalues.iter().map(Resonance::value).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        w.write_record(["re", "im", "residual"]).map_err(csv_error)?;
        for e in &self.eigenvalues {
            w.write_record([e.re.to_string(), e.im.to_string(), e.residual.to_string()])
                .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Hausdorff distance between two finite sets in the plane; infinite if
/// exactly one is empty.
pub fn hausdorff(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let one_way = |x: &[Complex64], y: &[Complex64]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripEstimate {
    /// Largest sampled Birkhoff average of `Re V - div X / 2`.
    pub s1: f64,
    /// `(r - 1) λ_u λ_s / (λ_u + λ_s)`; `None` for smooth systems.
    pub delta: Option<f64>,
    /// Change of `s1` when the averaging time is doubled.
    pub birkhoff_change: f64,
    pub converged: bool,
}

pub const BIRKHOFF_STEPS: usize = 200;
const BIRKHOFF_TOL: f64 = 1e-3;

/// Abscissa `s1` from orbit averages and the strip width `delta` from the
/// slowest expansion rates.
pub fn s1_and_delta(sys: &AnosovSystem, v: &PeriodicField, r: f64, rates: &RateReport) -> Result<StripEstimate> {
    rates.require_converged()?;
    require_scalar(v, "potential")?;
    let series = FourierSeries::from_field(v);
    let roof = sys.roof();
    let average = |steps: usize| -> f64 {
        r2_points(256)
            .par_iter()
            .map(|&x| {
                let mut y = x;
                let (mut acc, mut logdet) = (0.0, 0.0);
                for _ in 0..steps {
                    acc += series.eval([y[0], y[1], 0.0]).re;
                    logdet += sys.derivative(y).determinant().abs().ln();
                    y = sys.step(y);
                }
                (acc - 0.5 * logdet / roof) / steps as f64
            })
            .reduce(|| f64::NEG_INFINITY, f64::max)
    };
    let short = average(BIRKHOFF_STEPS);
    let long = average(2 * BIRKHOFF_STEPS);
    let change = (long - short).abs();
    let delta = r
        .is_finite()
        .then(|| (r - 1.0) * rates.lambda_u * rates.lambda_s / (rates.lambda_u + rates.lambda_s));
    Ok(StripEstimate {
        s1: long,
        delta,
        birkhoff_change: change,
        converged: change <= BIRKHOFF_TOL,
    })
}
