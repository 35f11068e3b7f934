use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::system::{r2_points, AnosovSystem};

/// Uniform expansion and contraction rates per unit time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub nu_u_min: f64,
    pub nu_u_max: f64,
    pub nu_s_min: f64,
    pub nu_s_max: f64,
    /// Slowest expansion and contraction exponents.
    pub lambda_u: f64,
    pub lambda_s: f64,
    pub t_used: f64,
    pub sample_count: usize,
    /// Largest relative change of the four rates when `T` is doubled.
    pub relative_change: f64,
    pub converged: bool,
}

impl RateReport {
    /// Rates of a system with constant expansion (a linear automorphism or its suspension).
    pub fn uniform(nu_u: f64, nu_s: f64) -> Self {
        Self {
            nu_u_min: nu_u,
            nu_u_max: nu_u,
            nu_s_min: nu_s,
            nu_s_max: nu_s,
            lambda_u: nu_u,
            lambda_s: nu_s,
            t_used: f64::INFINITY,
            sample_count: 0,
            relative_change: 0.0,
            converged: true,
        }
    }

    pub fn require_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged(format!(
                "rates moved by {:.3}% when T was doubled from {}",
                100.0 * self.relative_change,
                self.t_used
            )))
        }
    }
}

const ALIGN_STEPS: i64 = 30;
const TOLERANCE: f64 = 0.01;

/// Unit vector along `E_u(x)`, obtained by pushing the linear unstable
/// direction forward from `φ^{-30}(x)`.
pub(crate) fn unstable_direction(sys: &AnosovSystem, x: [f64; 2]) -> Vector2<f64> {
    let mut y = sys.iterate(x, -ALIGN_STEPS);
    let mut v = sys.splitting().e_u;
    for _ in 0..ALIGN_STEPS {
        v = sys.derivative(y) * v;
        v /= v.norm();
        y = sys.step(y);
    }
    v
}

pub(crate) fn stable_direction(sys: &AnosovSystem, x: [f64; 2]) -> Vector2<f64> {
    let mut y = sys.iterate(x, ALIGN_STEPS);
    let mut v = sys.splitting().e_s;
    for _ in 0..ALIGN_STEPS {
        y = sys.step_inverse(y);
        v = sys.derivative(y).try_inverse().expect("dφ is invertible") * v;
        v /= v.norm();
    }
    v
}

/// Log-growth of `E_u` under `dφ^n` and of `E_s` under `dφ^{-n}` along the
/// same orbit segment `x, φx, ..., φ^n x`. The stable direction is followed
/// backwards from the far end, where it is the attracting one.
pub(crate) fn segment_growth(sys: &AnosovSystem, x: [f64; 2], n: usize) -> (f64, f64) {
    let mut u = unstable_direction(sys, x);
    let mut y = x;
    let mut gu = 0.0;
    for _ in 0..n {
        u = sys.derivative(y) * u;
        let nu = u.norm();
        gu += nu.ln();
        u /= nu;
        y = sys.step(y);
    }
    let mut s = stable_direction(sys, y);
    let mut gs = 0.0;
    for _ in 0..n {
        y = sys.step_inverse(y);
        s = sys.derivative(y).try_inverse().expect("dφ is invertible") * s;
        let ns = s.norm();
        gs += ns.ln();
        s /= ns;
    }
    (gu, gs)
}

fn extremes(sys: &AnosovSystem, seeds: &[[f64; 2]], steps: usize) -> [f64; 4] {
    let time = steps as f64 * sys.roof();
    let g: Vec<(f64, f64)> = seeds.par_iter().map(|&x| segment_growth(sys, x, steps)).collect();
    let mut out = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for (u, s) in g {
        let (u, s) = (u / time, s / time);
        out[0] = out[0].min(u);
        out[1] = out[1].max(u);
        out[2] = out[2].min(s);
        out[3] = out[3].max(s);
    }
    out
}

/// Min/max over `samples` low-discrepancy seeds of the average growth rates
/// along `E_u` and `E_s` over time `t` (rounded to whole return times).
pub fn lyapunov_rates(sys: &AnosovSystem, t: f64, samples: usize) -> Result<RateReport> {
    if samples == 0 || !(t > 0.0) {
        return Err(Error::Config("lyapunov_rates needs samples > 0 and T > 0".into()));
    }
    let steps = ((t / sys.roof()).round() as usize).max(1);
    let seeds = r2_points(samples);
    let short = extremes(sys, &seeds, steps);
    let long = extremes(sys, &seeds, 2 * steps);
    let change = short
        .iter()
        .zip(&long)
        .map(|(a, b)| ((b - a) / b).abs())
        .fold(0.0, f64::max);
    Ok(RateReport {
        nu_u_min: long[0],
        nu_u_max: long[1],
        nu_s_min: long[2],
        nu_s_max: long[3],
        lambda_u: long[0],
        lambda_s: long[2],
        t_used: 2.0 * steps as f64 * sys.roof(),
        sample_count: samples,
        relative_change: change,
        converged: change <= TOLERANCE,
    })
}
