use std::path::PathBuf;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{FourierSeries, Grid, PeriodicField, ValueShape};
use crate::pfld::read_pfld;

/// Eigen-data of the hyperbolic matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSplitting {
    /// Expanding eigenvalue (|λ_u| > 1).
    pub lambda_u: f64,
    pub lambda_s: f64,
    /// Unit eigenvectors with nonnegative first nonzero entry.
    pub e_u: Vector2<f64>,
    pub e_s: Vector2<f64>,
}

impl LinearSplitting {
    fn of(a: Matrix2<f64>) -> Self {
        let tr = a.trace();
        let det = a.determinant();
        let disc = (tr * tr - 4.0 * det).sqrt();
        let (l1, l2) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
        let (lu, ls) = if l1.abs() > l2.abs() { (l1, l2) } else { (l2, l1) };
        let vec_for = |l: f64| {
            // (A - l) v = 0 with v = (a12, l - a11) or (l - a22, a21).
            let v1 = Vector2::new(a[(0, 1)], l - a[(0, 0)]);
            let v2 = Vector2::new(l - a[(1, 1)], a[(1, 0)]);
            let v = if v1.norm() > v2.norm() { v1 } else { v2 };
            let v = v / v.norm();
            if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
                -v
            } else {
                v
            }
        };
        Self {
            lambda_u: lu,
            lambda_s: ls,
            e_u: vec_for(lu),
            e_s: vec_for(ls),
        }
    }

    /// Slope of `E_u` over the first axis (`E_u = span(1, slope)`).
    pub fn unstable_slope(&self) -> f64 {
        self.e_u[1] / self.e_u[0]
    }

    /// Coordinates of `v` in the eigenbasis `(e_u, e_s)`.
    pub fn coordinates(&self, v: Vector2<f64>) -> (f64, f64) {
        let basis = Matrix2::from_columns(&[self.e_u, self.e_s]);
        let c = basis.try_inverse().expect("eigenbasis is invertible") * v;
        (c[0], c[1])
    }
}

/// One-dimensional shear profiles `f`, `g`. The map is
/// `φ = A ∘ S2 ∘ S1` with `S1(x) = (x1 + f(x2), x2)` and
/// `S2(z) = (z1, z2 + g(z1))`, which is area preserving for any profiles.
#[derive(Clone, Debug)]
pub struct Perturbation {
    profiles: PeriodicField,
    regularity: f64,
    f: FourierSeries,
    df: FourierSeries,
    g: FourierSeries,
    dg: FourierSeries,
}

impl Perturbation {
    /// `profiles` is a 1D field with two components `(f, g)`.
    pub fn new(profiles: PeriodicField, regularity: f64) -> Result<Self> {
        if profiles.grid().dim() != 1 || profiles.shape() != ValueShape::Vector(2) {
            return Err(Error::Config(
                "perturbation must be a 1D field with two components (f, g)".into(),
            ));
        }
        if !profiles.is_real() {
            return Err(Error::Config("perturbation profiles must be real".into()));
        }
        let f = profiles.component(0);
        let g = profiles.component(1);
        Ok(Self {
            f: FourierSeries::from_field(&f),
            df: FourierSeries::from_field(&f.derivative(0)?),
            g: FourierSeries::from_field(&g),
            dg: FourierSeries::from_field(&g.derivative(0)?),
            profiles,
            regularity,
        })
    }

    /// Random-phase profiles with `|ĉ_k| ∝ k^{-(r+1.05)}` for `k = 1..=modes`
    /// (geometric decay `2^{-k}` when `r` is infinite), scaled so that
    /// `Σ 2πk|ĉ_k| = amplitude`, which bounds `sup|f'|` and `sup|g'|`.
    pub fn synthesize(modes: usize, amplitude: f64, r: f64, seed: u64) -> Result<Self> {
        if modes == 0 {
            return Err(Error::Config("perturbation needs at least one mode".into()));
        }
        let size = (4 * modes + 4).next_power_of_two();
        let grid = Grid::new(size, 1)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = |k: usize| {
            if r.is_finite() {
                (k as f64).powf(-(r + 1.05))
            } else {
                0.5f64.powi(k as i32)
            }
        };
        let norm: f64 = (1..=modes)
            .map(|k| std::f64::consts::TAU * k as f64 * weight(k))
            .sum();
        let mut profile = || {
            let phases: Vec<f64> = (0..modes).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
            let mut coeffs = vec![Complex64::new(0.0, 0.0); size];
            for k in 1..=modes {
                // a cos(2πkt + θ) = (a/2) e^{iθ} e^{2πikt} + c.c.
                let c = Complex64::from_polar(0.5 * amplitude * weight(k) / norm, phases[k - 1]);
                coeffs[k] = c;
                coeffs[size - k] = c.conj();
            }
            PeriodicField::from_spectrum(grid, coeffs)
        };
        let f = profile()?;
        let g = profile()?;
        Self::new(PeriodicField::stack(&[f, g])?, r)
    }

    pub fn profiles(&self) -> &PeriodicField {
        &self.profiles
    }

    pub fn regularity(&self) -> f64 {
        self.regularity
    }

    pub fn f(&self, t: f64) -> f64 {
        self.f.eval_real([t, 0.0, 0.0])
    }

    pub fn df(&self, t: f64) -> f64 {
        self.df.eval_real([t, 0.0, 0.0])
    }

    pub fn g(&self, t: f64) -> f64 {
        self.g.eval_real([t, 0.0, 0.0])
    }

    pub fn dg(&self, t: f64) -> f64 {
        self.dg.eval_real([t, 0.0, 0.0])
    }

    /// `sup |f'| + sup |g'|` on a fine sample.
    pub fn c1_size(&self) -> f64 {
        let n = 4096;
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for i in 0..n {
            let t = i as f64 / n as f64;
            a = a.max(self.df(t).abs());
            b = b.max(self.dg(t).abs());
        }
        a + b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemKind {
    Map,
    /// Constant-roof suspension of the map.
    Suspension { roof: f64 },
}

/// Hyperbolic toral automorphism, possibly perturbed, possibly suspended.
/// Immutable once built.
#[derive(Clone, Debug)]
pub struct AnosovSystem {
    matrix: [[i64; 2]; 2],
    inverse: [[i64; 2]; 2],
    a: Matrix2<f64>,
    a_inv: Matrix2<f64>,
    splitting: LinearSplitting,
    perturbation: Option<Perturbation>,
    kind: SystemKind,
    manifest_hash: String,
}

/// Points of the R2 low-discrepancy sequence on the unit square.
pub fn r2_points(count: usize) -> Vec<[f64; 2]> {
    // Plastic number.
    let p = 1.324_717_957_244_746_f64;
    let (a1, a2) = (1.0 / p, 1.0 / (p * p));
    (0..count)
        .map(|n| {
            let n = n as f64 + 1.0;
            [(0.5 + a1 * n).fract(), (0.5 + a2 * n).fract()]
        })
        .collect()
}

pub(crate) fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(1.0);
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Aperture of the invariant cones `|v_s| <= κ|v_u|` in eigen-coordinates.
pub(crate) const CONE_KAPPA: f64 = 1.0;
const CONE_SAMPLES: usize = 10_000;

/// Validates and builds a system. `roof = None` gives the map itself.
pub fn make_system(
    matrix: [[i64; 2]; 2],
    perturbation: Option<Perturbation>,
    roof: Option<f64>,
) -> Result<AnosovSystem> {
    let trace = matrix[0][0] + matrix[1][1];
    let det = matrix[0][0] * matrix[1][1] - matrix[0][1] * matrix[1][0];
    // Eigenvalues solve z² - tz + det = 0: off the unit circle iff |t| > 2
    // for det = 1, and iff t != 0 for det = -1.
    let hyperbolic = match det {
        1 => trace.abs() > 2,
        -1 => trace != 0,
        _ => false,
    };
    if !hyperbolic {
        return Err(Error::NotHyperbolic {
            matrix,
            trace,
            det,
        });
    }
    let inverse = [
        [det * matrix[1][1], -det * matrix[0][1]],
        [-det * matrix[1][0], det * matrix[0][0]],
    ];
    let kind = match roof {
        None => SystemKind::Map,
        Some(r) if r > 0.0 && r.is_finite() => SystemKind::Suspension { roof: r },
        Some(r) => return Err(Error::Config(format!("roof {r} must be positive"))),
    };
    let to_f = |m: [[i64; 2]; 2]| {
        Matrix2::new(m[0][0] as f64, m[0][1] as f64, m[1][0] as f64, m[1][1] as f64)
    };
    let a = to_f(matrix);
    let mut hasher = Sha256::new();
    hasher.update(format!("{matrix:?}|{kind:?}|").as_bytes());
    if let Some(p) = &perturbation {
        hasher.update(crate::pfld::encode(p.profiles()));
        hasher.update(p.regularity().to_le_bytes());
    }
    let sys = AnosovSystem {
        matrix,
        inverse,
        a,
        a_inv: to_f(inverse),
        splitting: LinearSplitting::of(a),
        perturbation,
        kind,
        manifest_hash: hex::encode(hasher.finalize()),
    };
    sys.check_cones()?;
    Ok(sys)
}

impl AnosovSystem {
    pub fn matrix(&self) -> [[i64; 2]; 2] {
        self.matrix
    }

    pub fn inverse_matrix(&self) -> [[i64; 2]; 2] {
        self.inverse
    }

    pub fn linear(&self) -> Matrix2<f64> {
        self.a
    }

    pub fn splitting(&self) -> LinearSplitting {
        self.splitting
    }

    pub fn perturbation(&self) -> Option<&Perturbation> {
        self.perturbation.as_ref()
    }

    pub fn is_linear(&self) -> bool {
        self.perturbation.is_none()
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    /// Return time of the suspension; 1 for maps.
    pub fn roof(&self) -> f64 {
        match self.kind {
            SystemKind::Map => 1.0,
            SystemKind::Suspension { roof } => roof,
        }
    }

    /// Regularity of the dynamics (infinite for smooth systems).
    pub fn regularity(&self) -> f64 {
        self.perturbation
            .as_ref()
            .map_or(f64::INFINITY, |p| p.regularity())
    }

    /// Content hash identifying the system.
    pub fn manifest_hash(&self) -> &str {
        &self.manifest_hash
    }

    /// The time-one (return) map.
    pub fn step(&self, x: [f64; 2]) -> [f64; 2] {
        let (mut x1, mut x2) = (x[0], x[1]);
        if let Some(p) = &self.perturbation {
            x1 += p.f(x2);
            x2 += p.g(x1);
        }
        let y = self.a * Vector2::new(x1, x2);
        [wrap(y[0]), wrap(y[1])]
    }

    pub fn step_inverse(&self, y: [f64; 2]) -> [f64; 2] {
        let w = self.a_inv * Vector2::new(y[0], y[1]);
        let (mut z1, mut z2) = (wrap(w[0]), wrap(w[1]));
        if let Some(p) = &self.perturbation {
            z2 -= p.g(z1);
            z1 -= p.f(z2);
        }
        [wrap(z1), wrap(z2)]
    }

    /// `dφ(x)` of the time-one map.
    pub fn derivative(&self, x: [f64; 2]) -> Matrix2<f64> {
        match &self.perturbation {
            None => self.a,
            Some(p) => {
                let z1 = x[0] + p.f(x[1]);
                let s1 = Matrix2::new(1.0, p.df(x[1]), 0.0, 1.0);
                let s2 = Matrix2::new(1.0, 0.0, p.dg(z1), 1.0);
                self.a * s2 * s1
            }
        }
    }

    /// `x_n = φ^n(x)` for `n >= 0` or `n < 0`.
    pub fn iterate(&self, x: [f64; 2], n: i64) -> [f64; 2] {
        let mut y = x;
        if n >= 0 {
            for _ in 0..n {
                y = self.step(y);
            }
        } else {
            for _ in 0..(-n) {
                y = self.step_inverse(y);
            }
        }
        y
    }

    fn check_cones(&self) -> Result<()> {
        if self.perturbation.is_none() {
            return Ok(());
        }
        let sp = self.splitting;
        let basis = Matrix2::from_columns(&[sp.e_u, sp.e_s]);
        let basis_inv = basis.try_inverse().expect("eigenbasis is invertible");
        let mut x = [0.123_456_789, 0.618_033_988_7];
        for it in 0..CONE_SAMPLES {
            let d = basis_inv * self.derivative(x) * basis;
            let d_inv = d.try_inverse().expect("area preserving");
            for sign in [-1.0, 1.0] {
                // Unstable cone |v_s| <= κ|v_u| maps strictly inside itself.
                let w = d * Vector2::new(1.0, sign * CONE_KAPPA);
                let v = d_inv * Vector2::new(sign * CONE_KAPPA, 1.0);
                if w[1].abs() >= CONE_KAPPA * w[0].abs() || v[0].abs() >= CONE_KAPPA * v[1].abs() {
                    return Err(Error::ConeViolation {
                        point: x,
                        iterate: it,
                    });
                }
            }
            x = self.step(x);
        }
        Ok(())
    }

    /// `U ∘ φ^{-1}` for a field on a 2D grid, by exact line shifts and a grid
    /// permutation (exact for the linear part, spectrally accurate overall).
    pub fn pullback_inverse(&self, u: &PeriodicField) -> Result<PeriodicField> {
        let mut w = u.clone();
        if let Some(p) = &self.perturbation {
            let grid = u.grid();
            let n = grid.size();
            let pts: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
            // W1(z) = U(z1 - f(z2), z2), lines along axis 0 indexed by z2.
            let sf: Vec<f64> = pts.iter().map(|&t| -p.f(t)).collect();
            w = w.shift_lines(0, &sf)?;
            // W2(w) = W1(w1, w2 - g(w1)), lines along axis 1 indexed by w1.
            let sg: Vec<f64> = pts.iter().map(|&t| -p.g(t)).collect();
            w = w.shift_lines(1, &sg)?;
        }
        w.compose_linear(self.inverse)
    }

    /// `U ∘ φ`.
    pub fn pullback_forward(&self, u: &PeriodicField) -> Result<PeriodicField> {
        let mut w = u.compose_linear(self.matrix)?;
        if let Some(p) = &self.perturbation {
            let n = u.grid().size();
            let pts: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
            let sg: Vec<f64> = pts.iter().map(|&t| p.g(t)).collect();
            w = w.shift_lines(1, &sg)?;
            let sf: Vec<f64> = pts.iter().map(|&t| p.f(t)).collect();
            w = w.shift_lines(0, &sf)?;
        }
        Ok(w)
    }

    /// For every grid point `y`: the preimage `φ^{-1}(y)` and `dφ` there.
    pub fn preimage_derivatives(&self, grid: Grid) -> Vec<([f64; 2], Matrix2<f64>)> {
        (0..grid.len())
            .map(|flat| {
                let p = grid.point(flat);
                let x = self.step_inverse([p[0], p[1]]);
                (x, self.derivative(x))
            })
            .collect()
    }
}

/// Where a perturbation comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum PerturbationSpec {
    File {
        file: PathBuf,
        r_pert: Option<f64>,
    },
    Synth {
        modes: usize,
        amplitude: f64,
        /// Omitted means smooth.
        r_pert: Option<f64>,
        seed: u64,
    },
}

/// Declarative description of a system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemManifest {
    pub matrix: [[i64; 2]; 2],
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default)]
    pub roof: Option<f64>,
}

impl SystemManifest {
    pub fn cat_map() -> Self {
        Self {
            matrix: [[2, 1], [1, 1]],
            perturbation: None,
            roof: None,
        }
    }

    /// Builds the system; relative perturbation files resolve against `base`.
    pub fn build(&self, base: &std::path::Path) -> Result<AnosovSystem> {
        let pert = match &self.perturbation {
            None => None,
            Some(PerturbationSpec::Synth {
                modes,
                amplitude,
                r_pert,
                seed,
            }) => Some(Perturbation::synthesize(
                *modes,
                *amplitude,
                r_pert.unwrap_or(f64::INFINITY),
                *seed,
            )?),
            Some(PerturbationSpec::File { file, r_pert }) => Some(Perturbation::new(
                read_pfld(&base.join(file))?,
                r_pert.unwrap_or(f64::INFINITY),
            )?),
        };
        make_system(self.matrix, pert, self.roof)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat() -> AnosovSystem {
        make_system([[2, 1], [1, 1]], None, None).unwrap()
    }

    #[test]
    fn cat_splitting() {
        let sp = cat().splitting();
        assert!((sp.lambda_u - (3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-14);
        assert!((sp.unstable_slope() - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn non_hyperbolic_rejected() {
        assert!(matches!(
            make_system([[1, 1], [0, 1]], None, None),
            Err(Error::NotHyperbolic { trace: 2, .. })
        ));
        assert!(make_system([[0, 1], [-1, 1]], None, None).is_err());
        assert!(make_system([[0, 1], [1, 0]], None, None).is_err());
        assert!(make_system([[2, 1], [1, 2]], None, None).is_err());
    }

    #[test]
    fn inverse_step_inverts() {
        let p = Perturbation::synthesize(3, 0.1, f64::INFINITY, 4).unwrap();
        let sys = make_system([[2, 1], [1, 1]], Some(p), None).unwrap();
        for x in r2_points(50) {
            let y = sys.step_inverse(sys.step(x));
            let d = ((y[0] - x[0] + 0.5).rem_euclid(1.0) - 0.5).abs()
                + ((y[1] - x[1] + 0.5).rem_euclid(1.0) - 0.5).abs();
            assert!(d < 1e-12);
            assert!((sys.derivative(x).determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_mode_profile_amplitude() {
        let p = Perturbation::synthesize(1, 0.05, f64::INFINITY, 1).unwrap();
        let c1 = p.c1_size();
        assert!((c1 - 0.1).abs() < 1e-6, "{c1}");
    }

    #[test]
    fn large_perturbation_breaks_cones() {
        let p = Perturbation::synthesize(1, 3.0, f64::INFINITY, 2).unwrap();
        assert!(matches!(
            make_system([[2, 1], [1, 1]], Some(p), None),
            Err(Error::ConeViolation { .. })
        ));
    }

    #[test]
    fn pullbacks_match_pointwise_composition() {
        let p = Perturbation::synthesize(2, 0.1, f64::INFINITY, 9).unwrap();
        let sys = make_system([[2, 1], [1, 1]], Some(p), None).unwrap();
        let g = Grid::new(64, 2).unwrap();
        let h = |x: [f64; 2]| (std::f64::consts::TAU * (x[0] + 2.0 * x[1])).sin();
        let u = PeriodicField::from_fn(g, |x| h([x[0], x[1]]));
        let back = sys.pullback_inverse(&u).unwrap();
        let fwd = sys.pullback_forward(&u).unwrap();
        let mut err: f64 = 0.0;
        for flat in 0..g.len() {
            let y = g.point(flat);
            err = err.max((back.values()[flat].re - h(sys.step_inverse([y[0], y[1]]))).abs());
            err = err.max((fwd.values()[flat].re - h(sys.step([y[0], y[1]]))).abs());
        }
        assert!(err < 1e-8, "{err}");
    }
}
