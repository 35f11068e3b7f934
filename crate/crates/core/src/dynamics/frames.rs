use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{compute_stable_bundle, compute_unstable_bundle};
use crate::error::{Error, Result};
use crate::field::{Grid, PeriodicField, ValueShape};

use super::system::AnosovSystem;

/// A pair of vector fields `(H, V)` on the 2D base, stored as two-component
/// fields. The flow direction completes them to a frame of the suspension.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameField {
    pub h: PeriodicField,
    pub v: PeriodicField,
}

const DEGENERACY: f64 = 1e-8;

impl FrameField {
    pub fn constant(grid: Grid, h: [f64; 2], v: [f64; 2]) -> Self {
        let c = |a: f64| PeriodicField::constant(grid, a);
        Self {
            h: PeriodicField::stack(&[c(h[0]), c(h[1])]).expect("same grid"),
            v: PeriodicField::stack(&[c(v[0]), c(v[1])]).expect("same grid"),
        }
    }

    /// Coordinate axes `H = e1`, `V = e2`.
    pub fn axes(grid: Grid) -> Self {
        Self::constant(grid, [1.0, 0.0], [0.0, 1.0])
    }

    pub fn new(h: PeriodicField, v: PeriodicField) -> Result<Self> {
        h.check_grid(&v)?;
        if h.grid().dim() != 2 || h.shape() != ValueShape::Vector(2) || v.shape() != ValueShape::Vector(2) {
            return Err(Error::Config("frames must be two-component fields on a 2D grid".into()));
        }
        let f = Self { h, v };
        f.check()?;
        Ok(f)
    }

    pub fn grid(&self) -> Grid {
        self.h.grid()
    }

    pub fn is_constant(&self) -> bool {
        let flat = |u: &PeriodicField| {
            let v = u.values();
            let n = u.grid().len();
            (0..2).all(|c| v[c * n..(c + 1) * n].iter().all(|z| *z == v[c * n]))
        };
        flat(&self.h) && flat(&self.v)
    }

    /// The frame at grid index `i` as the matrix with columns `H`, `V`.
    pub fn matrix(&self, i: usize) -> Matrix2<f64> {
        frame_matrix(&self.h, &self.v, i)
    }

    /// Minimum over the grid of `|sin ∠(H, V)|`, with its location.
    pub fn transversality(&self) -> (f64, usize) {
        (0..self.grid().len())
            .map(|i| {
                let m = self.matrix(i);
                let s = m.determinant().abs() / (m.column(0).norm() * m.column(1).norm());
                (s, i)
            })
            .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
    }

    pub fn check(&self) -> Result<f64> {
        let (margin, index) = self.transversality();
        if !(margin >= DEGENERACY) {
            return Err(Error::FrameDegenerate { index, det: margin });
        }
        Ok(margin)
    }
}

fn frame_matrix(h: &PeriodicField, v: &PeriodicField, i: usize) -> Matrix2<f64> {
    let n = h.grid().len();
    let (hv, vv) = (h.values(), v.values());
    Matrix2::new(hv[i].re, vv[i].re, hv[n + i].re, vv[n + i].re)
}

fn eigenvalues(m: &Matrix2<f64>) -> (Complex64, Complex64) {
    let half = m.trace() / 2.0;
    let disc = Complex64::new(half * half - m.determinant(), 0.0).sqrt();
    (half + disc, half - disc)
}

/// Applies a holomorphic function to a 2x2 real matrix through its
/// eigenvalues. Fails on negative real eigenvalues, where no real branch exists.
fn matrix_function(
    m: &Matrix2<f64>,
    f: impl Fn(Complex64) -> Complex64,
    df: impl Fn(Complex64) -> Complex64,
) -> Result<Matrix2<f64>> {
    let (l1, l2) = eigenvalues(m);
    for l in [l1, l2] {
        if l.im.abs() <= 1e-14 * l.norm() && l.re <= 0.0 {
            return Err(Error::Precondition(format!(
                "matrix {m:?} has eigenvalue {l} on the closed negative axis"
            )));
        }
    }
    let mc = m.map(|a| Complex64::new(a, 0.0));
    let id = nalgebra::Matrix2::<Complex64>::identity();
    let out = if (l1 - l2).norm() <= 1e-9 * l1.norm() {
        let l = (l1 + l2) / 2.0;
        id * f(l) + (mc - id * l) * df(l)
    } else {
        (mc - id * l2) * (f(l1) / (l1 - l2)) + (mc - id * l1) * (f(l2) / (l2 - l1))
    };
    Ok(out.map(|z| z.re))
}

/// Principal real logarithm of a 2x2 matrix.
pub fn matrix_log(m: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    matrix_function(m, |l| l.ln(), |l| 1.0 / l)
}

/// `m^t = exp(t log m)` on the principal branch.
pub fn matrix_power(m: &Matrix2<f64>, t: f64) -> Result<Matrix2<f64>> {
    matrix_function(m, |l| l.powf(t), |l| t * l.powf(t - 1.0))
}

/// Frame block of the time-one map, indexed by the target point:
/// `M(y) = F(y)^{-1} dφ(φ^{-1}y) F(φ^{-1}y)`, columns are the images of `H`, `V`.
/// Entries `(A1, A2; A3, A4)` act on slopes by `Û ↦ (A3 + A4 Û)/(A1 + A2 Û)`.
pub fn mobius_data(sys: &AnosovSystem, frames: &FrameField) -> Result<Vec<Matrix2<f64>>> {
    let grid = frames.grid();
    frames.check()?;
    let (hp, vp) = if frames.is_constant() {
        (frames.h.clone(), frames.v.clone())
    } else {
        (sys.pullback_inverse(&frames.h)?, sys.pullback_inverse(&frames.v)?)
    };
    let pre = sys.preimage_derivatives(grid);
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let f_inv = frames
                .matrix(i)
                .try_inverse()
                .ok_or(Error::FrameDegenerate { index: i, det: 0.0 })?;
            Ok(f_inv * pre[i].1 * frame_matrix(&hp, &vp, i))
        })
        .collect()
}

/// Frame block of the inverse map at the source point:
/// `N(x) = F(x)^{-1} dφ(x)^{-1} F(φx)`. Acts on slopes over `V` by
/// `Ŝ ↦ (N11 Ŝ + N12)/(N21 Ŝ + N22)`.
pub fn inverse_mobius_data(sys: &AnosovSystem, frames: &FrameField) -> Result<Vec<Matrix2<f64>>> {
    let grid = frames.grid();
    frames.check()?;
    let (hf, vf) = if frames.is_constant() {
        (frames.h.clone(), frames.v.clone())
    } else {
        (sys.pullback_forward(&frames.h)?, sys.pullback_forward(&frames.v)?)
    };
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let p = grid.point(i);
            let d = sys.derivative([p[0], p[1]]);
            let d_inv = d.try_inverse().expect("dφ is invertible");
            let f_inv = frames
                .matrix(i)
                .try_inverse()
                .ok_or(Error::FrameDegenerate { index: i, det: 0.0 })?;
            Ok(f_inv * d_inv * frame_matrix(&hf, &vf, i))
        })
        .collect()
}

/// Coefficients of the slope Riccati equation `X r = c + b r + q r²` on the
/// suspension, in the frame `F(y, τ) = F(y) M(y)^{-τ/R}` interpolating the
/// base frame across the gluing (target-indexed fibers).
#[derive(Clone, Debug)]
pub struct RiccatiCoefficients {
    pub grid: Grid,
    pub roof: f64,
    pub mobius: Vec<Matrix2<f64>>,
    /// `∂_t` of the frame block of `dφ_t` at `t = 0`, from centered
    /// differences with one Richardson step.
    pub generator: Vec<Matrix2<f64>>,
    pub b: Vec<f64>,
    pub q: Vec<f64>,
    pub c: Vec<f64>,
    /// Step used by the difference quotients.
    pub step: f64,
    /// Sup-distance between the difference quotients and `log M / R`.
    pub fd_discrepancy: f64,
    /// `sup (|c| + |q|)`.
    pub smallness: f64,
}

pub const GENERATOR_STEP: f64 = 1e-3;

impl RiccatiCoefficients {
    pub fn rhs(&self, i: usize, r: f64) -> f64 {
        self.c[i] + self.b[i] * r + self.q[i] * r * r
    }

    pub fn sup_b(&self) -> f64 {
        self.b.iter().fold(0.0, |a, b| a.max(b.abs()))
    }
}

fn centered(m: &Matrix2<f64>, roof: f64, h: f64) -> Result<Matrix2<f64>> {
    Ok((matrix_power(m, h / roof)? - matrix_power(m, -h / roof)?) / (2.0 * h))
}

pub fn riccati_coefficients(sys: &AnosovSystem, frames: &FrameField) -> Result<RiccatiCoefficients> {
    let mobius = mobius_data(sys, frames)?;
    let roof = sys.roof();
    let h = GENERATOR_STEP;
    let rows: Vec<(Matrix2<f64>, f64)> = mobius
        .par_iter()
        .map(|m| {
            let d1 = centered(m, roof, h)?;
            let d2 = centered(m, roof, h / 2.0)?;
            let g = (d2 * 4.0 - d1) / 3.0;
            let exact = matrix_log(m)? / roof;
            Ok((g, (g - exact).abs().max()))
        })
        .collect::<Result<_>>()?;
    let generator: Vec<Matrix2<f64>> = rows.iter().map(|r| r.0).collect();
    let fd_discrepancy = rows.iter().fold(0.0f64, |a, r| a.max(r.1));
    let b: Vec<f64> = generator.iter().map(|g| g[(1, 1)] - g[(0, 0)]).collect();
    let q: Vec<f64> = generator.iter().map(|g| -g[(0, 1)]).collect();
    let c: Vec<f64> = generator.iter().map(|g| g[(1, 0)]).collect();
    let smallness = c
        .iter()
        .zip(&q)
        .fold(0.0f64, |a, (c, q)| a.max(c.abs() + q.abs()));
    Ok(RiccatiCoefficients {
        grid: frames.grid(),
        roof,
        mobius,
        generator,
        b,
        q,
        c,
        step: h,
        fd_discrepancy,
        smallness,
    })
}

/// Band-limited frames approximating the invariant directions.
#[derive(Clone, Debug)]
pub struct BuiltFrames {
    pub frames: FrameField,
    /// `‖U_- - H‖_{C^0}` on the grid.
    pub h_error: f64,
    /// `‖U_+ - V‖_{C^0}` on the grid.
    pub v_error: f64,
    /// Radial Fourier cutoff used for both fields; 0 for constant frames.
    pub cutoff: usize,
    /// `H` error at the largest admissible cutoff `N/4`.
    pub floor: f64,
    /// `sup |sin ∠(dφ H∘φ^{-1}, H)|`, how far `H` is from being invariant.
    pub lie_defect: f64,
}

#[derive(Serialize, Deserialize)]
struct FrameSummary {
    h_error: f64,
    v_error: f64,
    cutoff: usize,
    floor: f64,
    lie_defect: f64,
}

impl BuiltFrames {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::to_value(FrameSummary {
            h_error: self.h_error,
            v_error: self.v_error,
            cutoff: self.cutoff,
            floor: self.floor,
            lie_defect: self.lie_defect,
        })
        .expect("plain numbers serialize")
    }
}

fn low_pass(u: &PeriodicField, cutoff: usize) -> Result<PeriodicField> {
    let g = u.grid();
    let mult: Vec<Complex64> = (0..g.len())
        .map(|k| {
            let keep = g.wavenumber(k) <= cutoff as f64;
            Complex64::new(if keep { 1.0 } else { 0.0 }, 0.0)
        })
        .collect();
    let comps: Vec<PeriodicField> = (0..u.components())
        .map(|c| u.component(c).apply_multiplier(&mult))
        .collect::<Result<_>>()?;
    PeriodicField::stack(&comps)
}

fn c0_distance(a: &PeriodicField, b: &PeriodicField) -> f64 {
    let n = a.grid().len();
    let (av, bv) = (a.values(), b.values());
    (0..n)
        .map(|i| ((av[i] - bv[i]).norm_sqr() + (av[n + i] - bv[n + i]).norm_sqr()).sqrt())
        .fold(0.0, f64::max)
}

/// Unit direction fields `(1, Û)/|.|` and `(Ŝ, 1)/|.|` in the axes frame.
fn unit_fields(unstable: &PeriodicField, stable: &PeriodicField) -> Result<(PeriodicField, PeriodicField)> {
    let g = unstable.grid();
    let mk = |u: &PeriodicField, over_h: bool| {
        let s = u.real_values();
        let (mut a, mut b) = (Vec::with_capacity(s.len()), Vec::with_capacity(s.len()));
        for x in s {
            let n = (1.0 + x * x).sqrt();
            if over_h {
                a.push(1.0 / n);
                b.push(x / n);
            } else {
                a.push(x / n);
                b.push(1.0 / n);
            }
        }
        PeriodicField::stack(&[PeriodicField::from_real(g, a)?, PeriodicField::from_real(g, b)?])
    };
    Ok((mk(unstable, true)?, mk(stable, false)?))
}

const BUNDLE_TOL: f64 = 1e-12;
const BUNDLE_ITER: usize = 200;

/// Smooth frames `H ≈ U_-` (along `E_u`) and `V ≈ U_+` (along `E_s`) with
/// `‖U_- - H‖_{C^0} < eps`, obtained by Fourier truncation of the computed
/// bundles at the smallest sufficient power-of-two cutoff `<= N/4`.
pub fn build_frames(sys: &AnosovSystem, grid: Grid, eps: f64) -> Result<BuiltFrames> {
    if sys.is_linear() {
        let sp = sys.splitting();
        return Ok(BuiltFrames {
            frames: FrameField::constant(grid, [sp.e_u[0], sp.e_u[1]], [sp.e_s[0], sp.e_s[1]]),
            h_error: 0.0,
            v_error: 0.0,
            cutoff: 0,
            floor: 0.0,
            lie_defect: 0.0,
        });
    }
    let axes = FrameField::axes(grid);
    let un = compute_unstable_bundle(sys, &axes, BUNDLE_TOL, BUNDLE_ITER)?;
    let st = compute_stable_bundle(sys, &axes, BUNDLE_TOL, BUNDLE_ITER)?;
    let (u_minus, u_plus) = unit_fields(un.slope(), st.slope())?;

    let top = grid.size() / 4;
    let mut cutoffs = vec![];
    let mut k = 1;
    while k <= top {
        cutoffs.push(k);
        k *= 2;
    }
    let errors: Vec<f64> = cutoffs
        .iter()
        .map(|&k| Ok(c0_distance(&u_minus, &low_pass(&u_minus, k)?)))
        .collect::<Result<_>>()?;
    let floor = *errors.last().expect("N >= 4");
    let Some(pos) = errors.iter().position(|&e| e < eps) else {
        return Err(Error::Resolution {
            requested: eps,
            achieved: floor,
            grid: grid.size(),
            required_grid: required_grid(&cutoffs, &errors, eps, grid.size()),
        });
    };
    let cutoff = cutoffs[pos];
    let h = low_pass(&u_minus, cutoff)?;
    let v = low_pass(&u_plus, cutoff)?;
    let h_error = errors[pos];
    let v_error = c0_distance(&u_plus, &v);
    let frames = FrameField::new(h, v)?;
    let lie_defect = invariance_defect(sys, &frames.h)?;
    Ok(BuiltFrames {
        frames,
        h_error,
        v_error,
        cutoff,
        floor,
        lie_defect,
    })
}

/// Extrapolates the cutoff needed for `eps` from the last three errors and
/// converts it to a grid size (`N = 4K`).
fn required_grid(cutoffs: &[usize], errors: &[f64], eps: f64, n: usize) -> usize {
    let pts: Vec<(f64, f64)> = cutoffs
        .iter()
        .zip(errors)
        .rev()
        .take(3)
        .filter(|(_, e)| **e > 0.0)
        .map(|(k, e)| ((*k as f64).log2(), e.log2()))
        .collect();
    if pts.len() < 2 {
        return 2 * n;
    }
    let fit = crate::spectral::fit_line(&pts);
    let (k0, e0) = pts[0];
    if !(fit.slope < 0.0) {
        return 2 * n;
    }
    let needed = k0 + (eps.log2() - e0) / fit.slope;
    let grid = 4.0 * needed.exp2();
    if grid.is_finite() && grid < 1e15 {
        (grid.ceil() as usize).next_power_of_two().max(2 * n)
    } else {
        usize::MAX
    }
}

fn invariance_defect(sys: &AnosovSystem, h: &PeriodicField) -> Result<f64> {
    let grid = h.grid();
    let hp = sys.pullback_inverse(h)?;
    let pre = sys.preimage_derivatives(grid);
    let n = grid.len();
    let (hv, pv) = (h.values(), hp.values());
    Ok((0..n)
        .map(|i| {
            let w = pre[i].1 * Vector2::new(pv[i].re, pv[n + i].re);
            let t = Vector2::new(hv[i].re, hv[n + i].re);
            (w[0] * t[1] - w[1] * t[0]).abs() / (w.norm() * t.norm())
        })
        .fold(0.0, f64::max))
}
