//! The unstable bundle as the attracting fixed point of the graph transform,
//! with a Riccati integrator along the suspension flow as an independent check.

use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    inverse_mobius_data, matrix_power, mobius_data, AnosovSystem, FrameField, RiccatiCoefficients, CONE_KAPPA,
};
use crate::error::{Error, Result};
use crate::field::{Grid, PeriodicField};
use crate::pfld::{read_pfld, write_pfld};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Slope `r_V` of the graph over `H`.
    SlopeR,
    /// Field of linear maps `Û : span H → span V`; the same numbers as
    /// `SlopeR` for one-dimensional blocks.
    LinearMapU,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subbundle {
    /// Graph `H + Û V` over `H`.
    Unstable,
    /// Graph `Ŝ H + V` over `V`.
    Stable,
}

#[derive(Clone, Debug)]
pub struct BundleSection {
    pub representation: Representation,
    pub subbundle: Subbundle,
    slope: PeriodicField,
    pub frames: FrameField,
    /// Sup-norm of the invariance defect; NaN until measured.
    pub residual: f64,
    pub iterations: usize,
    /// Sup-change per iteration.
    pub history: Vec<f64>,
}

impl BundleSection {
    /// A section with unmeasured residual.
    pub fn new(subbundle: Subbundle, slope: PeriodicField, frames: FrameField) -> Result<Self> {
        slope.check_grid(&frames.h)?;
        crate::spectral::require_scalar(&slope, "bundle slope")?;
        if !slope.is_real() {
            return Err(Error::Config("bundle slope must be real".into()));
        }
        Ok(Self {
            representation: Representation::LinearMapU,
            subbundle,
            slope,
            frames,
            residual: f64::NAN,
            iterations: 0,
            history: vec![],
        })
    }

    pub fn slope(&self) -> &PeriodicField {
        &self.slope
    }

    /// Unit vectors spanning the represented line at each grid point.
    pub fn directions(&self) -> Vec<Vector2<f64>> {
        let s = self.slope.real_values();
        (0..s.len())
            .map(|i| {
                let f = self.frames.matrix(i);
                let c = match self.subbundle {
                    Subbundle::Unstable => Vector2::new(1.0, s[i]),
                    Subbundle::Stable => Vector2::new(s[i], 1.0),
                };
                let v = f * c;
                v / v.norm()
            })
            .collect()
    }

    /// Sup over the grid of the distance between orthogonal projectors onto
    /// the two represented lines.
    pub fn projector_distance(&self, other: &BundleSection) -> Result<f64> {
        self.slope.check_grid(&other.slope)?;
        let proj = |v: &Vector2<f64>| v * v.transpose();
        Ok(self
            .directions()
            .iter()
            .zip(other.directions())
            .map(|(a, b)| (proj(a) - proj(&b)).abs().max())
            .fold(0.0, f64::max))
    }
}

const SINGULAR: f64 = 1e-12;

/// Oversampling factor of the quadrature grid used inside a step: with
/// `|k| <= N/2` stored, `A^{-T}` moves frequencies at most `|A|·N/2`, which
/// stays below the Nyquist limit `2N` of the fine grid for the test matrices.
pub const OVERSAMPLE: usize = 4;

/// Precomputed pointwise data of the time-one graph transform on the fine grid.
struct Transform<'a> {
    sys: &'a AnosovSystem,
    subbundle: Subbundle,
    blocks: Vec<Matrix2<f64>>,
    /// Frame matrices in eigen-coordinates of the linear part, for the cone test.
    to_eigen: Vec<Matrix2<f64>>,
    fine: Grid,
}

impl<'a> Transform<'a> {
    fn new(sys: &'a AnosovSystem, frames: &FrameField, subbundle: Subbundle) -> Result<Self> {
        frames.check()?;
        let fine = if sys.is_linear() && frames.is_constant() {
            frames.grid()
        } else {
            Grid::new(frames.grid().size() * OVERSAMPLE, 2)?
        };
        let fine_frames = if fine == frames.grid() {
            frames.clone()
        } else {
            FrameField {
                h: frames.h.resample(fine.size())?,
                v: frames.v.resample(fine.size())?,
            }
        };
        let blocks = match subbundle {
            Subbundle::Unstable => mobius_data(sys, &fine_frames)?,
            Subbundle::Stable => inverse_mobius_data(sys, &fine_frames)?,
        };
        let sp = sys.splitting();
        let basis_inv = Matrix2::from_columns(&[sp.e_u, sp.e_s])
            .try_inverse()
            .expect("eigenbasis is invertible");
        let to_eigen = (0..fine.len()).map(|i| basis_inv * fine_frames.matrix(i)).collect();
        Ok(Self {
            sys,
            subbundle,
            blocks,
            to_eigen,
            fine,
        })
    }

    /// One step: interpolate to the fine grid, transport, act pointwise,
    /// truncate back to the grid of `slope`. Cone exits report fine-grid indices.
    fn apply(&self, slope: &PeriodicField) -> Result<PeriodicField> {
        let size = slope.grid().size();
        let up = slope.resample(self.fine.size())?;
        let moved = match self.subbundle {
            Subbundle::Unstable => self.sys.pullback_inverse(&up)?,
            Subbundle::Stable => self.sys.pullback_forward(&up)?,
        };
        let u = moved.real_values();
        let fine = self.fine;
        let out: Vec<f64> = (0..fine.len())
            .into_par_iter()
            .map(|i| {
                let m = &self.blocks[i];
                let (num, den) = match self.subbundle {
                    Subbundle::Unstable => (m[(1, 0)] + m[(1, 1)] * u[i], m[(0, 0)] + m[(0, 1)] * u[i]),
                    Subbundle::Stable => (m[(0, 0)] * u[i] + m[(0, 1)], m[(1, 0)] * u[i] + m[(1, 1)]),
                };
                let next = num / den;
                let inside = match self.subbundle {
                    Subbundle::Unstable => {
                        let c = self.to_eigen[i] * Vector2::new(1.0, next);
                        c[1].abs() < CONE_KAPPA * c[0].abs()
                    }
                    Subbundle::Stable => {
                        let c = self.to_eigen[i] * Vector2::new(next, 1.0);
                        c[0].abs() < CONE_KAPPA * c[1].abs()
                    }
                };
                if den.abs() < SINGULAR || !next.is_finite() || !inside {
                    let p = fine.point(i);
                    return Err(Error::ConeExit {
                        index: i,
                        point: [p[0], p[1]],
                    });
                }
                Ok(next)
            })
            .collect::<Result<_>>()?;
        PeriodicField::from_real(fine, out)?.resample(size)
    }
}

/// `t` applications of the time-one graph transform: pull back by `φ^{-1}`
/// and act pointwise by the Möbius map of the frame block (the stable
/// section uses `φ` and the inverse blocks).
pub fn graph_transform_step(sys: &AnosovSystem, section: &BundleSection, t: usize) -> Result<BundleSection> {
    let tr = Transform::new(sys, &section.frames, section.subbundle)?;
    let mut slope = section.slope.clone();
    for _ in 0..t {
        slope = tr.apply(&slope)?;
    }
    BundleSection::new(section.subbundle, slope, section.frames.clone())
}

fn sup_diff(a: &PeriodicField, b: &PeriodicField) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

fn iterate_bundle(
    sys: &AnosovSystem,
    frames: &FrameField,
    subbundle: Subbundle,
    tol: f64,
    max_iter: usize,
) -> Result<BundleSection> {
    let tr = Transform::new(sys, frames, subbundle)?;
    let mut slope = PeriodicField::constant(frames.grid(), 0.0);
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let next = tr.apply(&slope)?;
        let change = sup_diff(&next, &slope);
        history.push(change);
        slope = next;
        if change < tol {
            let residual = sup_diff(&tr.apply(&slope)?, &slope);
            let mut s = BundleSection::new(subbundle, slope, frames.clone())?;
            s.residual = residual;
            s.iterations = it;
            s.history = history;
            return Ok(s);
        }
    }
    let tail = history.len().saturating_sub(10);
    Err(Error::NonConvergence {
        iterations: max_iter,
        history: history[tail..].to_vec(),
    })
}

/// Iterates the graph transform from `Û ≡ 0` until the sup-change drops below `tol`.
pub fn compute_unstable_bundle(
    sys: &AnosovSystem,
    frames: &FrameField,
    tol: f64,
    max_iter: usize,
) -> Result<BundleSection> {
    iterate_bundle(sys, frames, Subbundle::Unstable, tol, max_iter)
}

/// The stable counterpart, iterated with the inverse map.
pub fn compute_stable_bundle(
    sys: &AnosovSystem,
    frames: &FrameField,
    tol: f64,
    max_iter: usize,
) -> Result<BundleSection> {
    iterate_bundle(sys, frames, Subbundle::Stable, tol, max_iter)
}

/// Largest RK4 step for which `|b| dt` stays inside the real stability interval.
pub fn rk4_stability_bound(coeffs: &RiccatiCoefficients) -> f64 {
    2.78 / coeffs.sup_b().max(f64::MIN_POSITIVE)
}

#[derive(Clone, Debug)]
pub struct RiccatiRun {
    pub slope: PeriodicField,
    pub dt: f64,
    pub stability_bound: f64,
    pub periods: usize,
}

/// Integrates `X r = c + b r + q r²` along the suspension flow for
/// `periods` return times. Each period first transports `r` across the
/// gluing (pullback by `φ^{-1}`), then runs RK4 along the fibers.
pub fn riccati_integrate(
    sys: &AnosovSystem,
    coeffs: &RiccatiCoefficients,
    r0: &PeriodicField,
    periods: usize,
    dt: f64,
) -> Result<RiccatiRun> {
    let grid = coeffs.grid;
    if r0.grid() != grid {
        return Err(Error::GridMismatch {
            left: grid.to_string(),
            right: r0.grid().to_string(),
        });
    }
    let bound = rk4_stability_bound(coeffs);
    if !(dt > 0.0 && dt <= bound) {
        return Err(Error::Precondition(format!(
            "RK4 step {dt} outside the stability bound {bound}"
        )));
    }
    let roof = coeffs.roof;
    let steps = (roof / dt).ceil() as usize;
    let h = roof / steps as f64;
    let cone = 10.0;
    let mut r = r0.clone();
    for period in 0..periods {
        let moved = sys.pullback_inverse(&r)?.real_values();
        let out: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let f = |r: f64| coeffs.rhs(i, r);
                let mut x = moved[i];
                for s in 0..steps {
                    let k1 = f(x);
                    let k2 = f(x + 0.5 * h * k1);
                    let k3 = f(x + 0.5 * h * k2);
                    let k4 = f(x + h * k3);
                    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                    if !(x.abs() <= cone) {
                        return Err(Error::BlowUp {
                            time: period as f64 * roof + (s + 1) as f64 * h,
                            value: x.abs(),
                        });
                    }
                }
                Ok(x)
            })
            .collect::<Result<_>>()?;
        r = PeriodicField::from_real(grid, out)?;
    }
    Ok(RiccatiRun {
        slope: r,
        dt: h,
        stability_bound: bound,
        periods,
    })
}

/// Defects of a slope field viewed as a section over the suspension,
/// `r(y, τ) = Möb(M(y)^{τ/R}) Û(φ^{-1} y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    /// `sup |−X r + b r + q r² + c|` at the sampled fiber times.
    pub ode_defect: f64,
    /// `sup |r(y, R) − Û(y)|`, the mismatch across the gluing.
    pub gluing_defect: f64,
    /// Difference step of the `X` stencil.
    pub step: f64,
}

/// Fiber times (fractions of the roof) where the `X` derivative is sampled.
pub const FIBER_SAMPLES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn mobius(m: &Matrix2<f64>, u: f64) -> f64 {
    (m[(1, 0)] + m[(1, 1)] * u) / (m[(0, 0)] + m[(0, 1)] * u)
}

/// `X r` by differences of step `h` with one Richardson step: centered in
/// the interior, one-sided (second order, inside the fiber) at the ends.
fn fiber_derivative(r: impl Fn(f64) -> Result<f64>, tau: f64, roof: f64, h: f64) -> Result<f64> {
    let d = |h: f64| -> Result<f64> {
        if tau - h < 0.0 {
            Ok((-3.0 * r(tau)? + 4.0 * r(tau + h)? - r(tau + 2.0 * h)?) / (2.0 * h))
        } else if tau + h > roof {
            Ok((3.0 * r(tau)? - 4.0 * r(tau - h)? + r(tau - 2.0 * h)?) / (2.0 * h))
        } else {
            Ok((r(tau + h)? - r(tau - h)?) / (2.0 * h))
        }
    };
    Ok((4.0 * d(h / 2.0)? - d(h)?) / 3.0)
}

pub fn stationarity_residual(
    sys: &AnosovSystem,
    coeffs: &RiccatiCoefficients,
    section: &BundleSection,
) -> Result<StationarityReport> {
    if section.subbundle != Subbundle::Unstable {
        return Err(Error::Precondition("stationarity is defined for the unstable section".into()));
    }
    let grid = coeffs.grid;
    let roof = coeffs.roof;
    let h = coeffs.step;
    let start = sys.pullback_inverse(section.slope())?.real_values();
    let end = section.slope().real_values();
    let rows: Vec<(f64, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let m = &coeffs.mobius[i];
            let r = |tau: f64| -> Result<f64> { Ok(mobius(&matrix_power(m, tau / roof)?, start[i])) };
            let mut ode = 0.0f64;
            for frac in FIBER_SAMPLES {
                let tau = frac * roof;
                let x = fiber_derivative(r, tau, roof, h)?;
                ode = ode.max((x - coeffs.rhs(i, r(tau)?)).abs());
            }
            Ok((ode, (mobius(m, start[i]) - end[i]).abs()))
        })
        .collect::<Result<_>>()?;
    Ok(StationarityReport {
        ode_defect: rows.iter().fold(0.0, |a, r| a.max(r.0)),
        gluing_defect: rows.iter().fold(0.0, |a, r| a.max(r.1)),
        step: h,
    })
}

/// Map: `sup |Û − step(Û)|`. Suspension: the larger of the fiber ODE defect
/// and the gluing defect of the induced section, with `X` discretized as in
/// [`stationarity_residual`].
pub fn invariance_residual(sys: &AnosovSystem, section: &BundleSection) -> Result<f64> {
    match sys.kind() {
        crate::dynamics::SystemKind::Map => {
            let next = graph_transform_step(sys, section, 1)?;
            Ok(sup_diff(next.slope(), section.slope()))
        }
        crate::dynamics::SystemKind::Suspension { .. } => {
            let coeffs = crate::dynamics::riccati_coefficients(sys, &section.frames)?;
            let rep = stationarity_residual(sys, &coeffs, section)?;
            Ok(rep.ode_defect.max(rep.gluing_defect))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionSidecar {
    pub representation: Representation,
    pub subbundle: Subbundle,
    pub slope: String,
    pub frames: [String; 2],
    pub residual: Option<f64>,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub system_hash: String,
}

/// Writes `NAME_slope.pfld`, `NAME_frame_h.pfld`, `NAME_frame_v.pfld` and the sidecar `NAME.json`.
pub fn save_section(dir: &Path, name: &str, section: &BundleSection, system_hash: &str) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let files = [
        format!("{name}_slope.pfld"),
        format!("{name}_frame_h.pfld"),
        format!("{name}_frame_v.pfld"),
    ];
    write_pfld(&dir.join(&files[0]), &section.slope)?;
    write_pfld(&dir.join(&files[1]), &section.frames.h)?;
    write_pfld(&dir.join(&files[2]), &section.frames.v)?;
    let sidecar = SectionSidecar {
        representation: section.representation,
        subbundle: section.subbundle,
        slope: files[0].clone(),
        frames: [files[1].clone(), files[2].clone()],
        residual: section.residual.is_finite().then_some(section.residual),
        iterations: section.iterations,
        history: section.history.clone(),
        system_hash: system_hash.to_string(),
    };
    let json = dir.join(format!("{name}.json"));
    std::fs::write(&json, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(files.iter().map(|f| dir.join(f)).chain([json]).collect())
}

/// Reads a section and the system hash it was computed for.
pub fn load_section(path: &Path) -> Result<(BundleSection, String)> {
    let sidecar: SectionSidecar = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let frames = FrameField::new(
        read_pfld(&base.join(&sidecar.frames[0]))?,
        read_pfld(&base.join(&sidecar.frames[1]))?,
    )?;
    let mut s = BundleSection::new(sidecar.subbundle, read_pfld(&base.join(&sidecar.slope))?, frames)?;
    s.representation = sidecar.representation;
    s.residual = sidecar.residual.unwrap_or(f64::NAN);
    s.iterations = sidecar.iterations;
    s.history = sidecar.history;
    Ok((s, sidecar.system_hash))
}
