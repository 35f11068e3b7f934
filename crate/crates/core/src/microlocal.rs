//! Wavefront diagnostics by cone-restricted dyadic energies, and the
//! threshold and rigidity conditions built from expansion rates.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dynamics::{r2_points, segment_growth, AnosovSystem, RateReport};
use crate::error::{Error, Result};
use crate::field::PeriodicField;
use crate::spectral::{band_weights, default_bands, fit_line, require_scalar, LinearFit};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandEnergy {
    pub j: i32,
    pub inside: f64,
    pub outside: f64,
}

impl BandEnergy {
    pub fn total(&self) -> f64 {
        self.inside + self.outside
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeEnergyProfile {
    pub direction: [f64; 3],
    /// Half-angle in radians.
    pub aperture: f64,
    pub per_band: Vec<BandEnergy>,
}

const ANGLE_SLACK: f64 = 1e-12;

/// Whether the lattice point lies in the closed double cone. `k = 0` counts as inside.
pub fn in_cone(direction: [f64; 3], aperture: f64, k: [f64; 3]) -> bool {
    let kn = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
    if kn == 0.0 {
        return true;
    }
    let dn = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
    let cos = ((k[0] * direction[0] + k[1] * direction[1] + k[2] * direction[2]) / (kn * dn)).abs();
    cos.min(1.0).acos() <= aperture + ANGLE_SLACK
}

/// Splits `‖Δ_j u‖²` of every dyadic band into the part carried by
/// frequencies inside the double cone around `direction` and the rest.
pub fn cone_energy(u: &PeriodicField, direction: [f64; 3], aperture: f64) -> Result<ConeEnergyProfile> {
    require_scalar(u, "cone_energy")?;
    let dn = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
    if !(dn > 0.0) {
        return Err(Error::Precondition("cone direction must be nonzero".into()));
    }
    let direction = direction.map(|d| d / dn);
    let grid = u.grid();
    let spec = u.spectrum();
    let weights = band_weights(grid);
    let inside: Vec<bool> = (0..grid.len())
        .map(|k| {
            let v = grid.wavevector(k);
            in_cone(direction, aperture, [v[0] as f64, v[1] as f64, v[2] as f64])
        })
        .collect();
    let per_band = weights
        .iter()
        .enumerate()
        .map(|(idx, w)| {
            let (mut a, mut b) = (0.0, 0.0);
            for k in 0..grid.len() {
                let e = w[k] * w[k] * spec[k].norm_sqr();
                if inside[k] {
                    a += e;
                } else {
                    b += e;
                }
            }
            BandEnergy {
                j: idx as i32 - 1,
                inside: a,
                outside: b,
            }
        })
        .collect();
    Ok(ConeEnergyProfile {
        direction,
        aperture,
        per_band,
    })
}

impl ConeEnergyProfile {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        w.write_record(["j", "inside", "outside", "total"]).map_err(csv_error)?;
        for b in &self.per_band {
            w.write_record([
                b.j.to_string(),
                format!("{:e}", b.inside),
                format!("{:e}", b.outside),
                format!("{:e}", b.total()),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    fn fit(&self, inside: bool, bands: (i32, i32)) -> Option<LinearFit> {
        let pts: Vec<(f64, f64)> = self
            .per_band
            .iter()
            .filter(|b| b.j >= bands.0 && b.j <= bands.1)
            .map(|b| (b.j as f64, if inside { b.inside } else { b.outside }))
            .filter(|(_, e)| *e > 0.0)
            .map(|(j, e)| (j, e.log2()))
            .collect();
        (pts.len() >= 3).then(|| fit_line(&pts))
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Verdict of the wavefront proxy for one direction and aperture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum WavefrontVerdict {
    /// No energy above roundoff at nonzero frequency.
    Trivial,
    /// Too few bands with energy in both regions to fit slopes.
    BeyondResolution,
    Fitted(Box<WavefrontFit>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavefrontFit {
    pub aperture: f64,
    pub bands: (i32, i32),
    /// Slopes of `log2` band energy against `j`.
    pub inside_slope: f64,
    pub outside_slope: f64,
    /// `inside_slope - outside_slope`; positive when energy concentrates in the cone.
    pub slope_gap: f64,
    pub gap_stderr: f64,
    /// One-sided 95% test that the gap is positive.
    pub concentrated: bool,
    /// Inside energies inconsistent with `H^s` decay at 95%.
    pub inside_in_wavefront: bool,
    pub outside_in_wavefront: bool,
    pub sobolev_index: f64,
}

impl WavefrontVerdict {
    pub fn fit(&self) -> Option<&WavefrontFit> {
        match self {
            WavefrontVerdict::Fitted(f) => Some(f),
            _ => None,
        }
    }
}

fn t_quantile(dof: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.95)
}

/// Regression test of cone-restricted band energies over `bands`
/// (default `[3, J-2]`). Energies decaying like `H^s` have slope `<= -2s`;
/// a direction is flagged when the slope exceeds `-2s` at 95% confidence.
pub fn wavefront_test(
    u: &PeriodicField,
    direction: [f64; 3],
    aperture: f64,
    s: f64,
    bands: Option<(i32, i32)>,
) -> Result<WavefrontVerdict> {
    let profile = cone_energy(u, direction, aperture)?;
    let bands = bands.unwrap_or_else(|| default_bands(u.grid()));
    let sup = u.sup_norm().max(f64::MIN_POSITIVE);
    let floor = (64.0 * f64::EPSILON * sup).powi(2);
    let high: f64 = profile.per_band.iter().filter(|b| b.j >= 1).map(|b| b.total()).sum();
    if high <= floor {
        return Ok(WavefrontVerdict::Trivial);
    }
    let (Some(fi), Some(fo)) = (profile.fit(true, bands), profile.fit(false, bands)) else {
        return Ok(WavefrontVerdict::BeyondResolution);
    };
    let dof = (fi.points.min(fo.points) as f64 - 2.0).max(1.0);
    let t = t_quantile(dof);
    let gap = fi.slope - fo.slope;
    let gap_err = (fi.slope_stderr.powi(2) + fo.slope_stderr.powi(2)).sqrt();
    let exceeds = |f: &LinearFit| f.slope + 2.0 * s > t * f.slope_stderr;
    Ok(WavefrontVerdict::Fitted(Box::new(WavefrontFit {
        aperture,
        bands,
        inside_slope: fi.slope,
        outside_slope: fo.slope,
        slope_gap: gap,
        gap_stderr: gap_err,
        concentrated: gap > t * gap_err,
        inside_in_wavefront: exceeds(&fi),
        outside_in_wavefront: exceeds(&fo),
        sobolev_index: s,
    })))
}

/// Default aperture (15°) followed by the 10° and 20° sensitivity runs.
pub const APERTURES_DEG: [f64; 3] = [15.0, 10.0, 20.0];

pub fn wavefront_sweep(
    u: &PeriodicField,
    direction: [f64; 3],
    s: f64,
    apertures_deg: &[f64],
) -> Result<Vec<WavefrontVerdict>> {
    apertures_deg
        .iter()
        .map(|a| wavefront_test(u, direction, a.to_radians(), s, None))
        .collect()
}

/// Conormal direction of the linear unstable bundle: the covector
/// annihilating `E_u` (and the flow direction of a suspension).
pub fn unstable_conormal(sys: &AnosovSystem) -> [f64; 3] {
    let e = sys.splitting().e_u;
    [-e[1], e[0], 0.0]
}

pub fn stable_conormal(sys: &AnosovSystem) -> [f64; 3] {
    let e = sys.splitting().e_s;
    [-e[1], e[0], 0.0]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldDim {
    Three,
    General,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// `(ν_u^min + ν_s^min) / ν_s^max`.
    pub regularity_lower_bound: f64,
    /// `(ν_u^max + ν_s^max) / ν_s^min`.
    pub rigidity_threshold: f64,
    /// `2` for volume-preserving flows in dimension 3.
    pub special_value: Option<f64>,
}

pub fn rigidity_thresholds(rates: &RateReport, dim: ManifoldDim, volume_preserving: bool) -> Result<Thresholds> {
    rates.require_converged()?;
    if !(rates.nu_u_min > 0.0 && rates.nu_s_min > 0.0) {
        return Err(Error::Precondition("rates must be positive".into()));
    }
    Ok(Thresholds {
        regularity_lower_bound: (rates.nu_u_min + rates.nu_s_min) / rates.nu_s_max,
        rigidity_threshold: (rates.nu_u_max + rates.nu_s_max) / rates.nu_s_min,
        special_value: (dim == ManifoldDim::Three && volume_preserving).then_some(2.0),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdLocation {
    /// Radial source at `E_s*`: `-(1/T)∫_0^T (3/2 r_+ + (1/2 + s) r_-)`.
    SourceEsStar,
    /// Radial sink at `E_u*`: `-(1/T)∫_0^T ((3/2 - s) r_+ + 1/2 r_-)`.
    SinkEuStar,
    /// Sink read as a source of the reversed flow: `(1/T)∫_{-T}^0 ((3/2 - s) r_+ + 1/2 r_-)`.
    ReversedSourceEuStar,
}

impl ThresholdLocation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "source_es_star" | "source" => Ok(Self::SourceEsStar),
            "sink_eu_star" | "sink" => Ok(Self::SinkEuStar),
            "reversed_source_eu_star" | "reversed" => Ok(Self::ReversedSourceEuStar),
            _ => Err(Error::Config(format!("unknown threshold location '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitMargin {
    pub x: [f64; 2],
    /// Time averages of the expansion rate `r_-` of `E_u` and the contraction rate `r_+` of `E_s`.
    pub r_minus: f64,
    pub r_plus: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub s: f64,
    pub t: f64,
    pub location: ThresholdLocation,
    /// Largest margin over the sampled orbits; negative certifies the condition.
    pub max_margin: f64,
    pub min_margin: f64,
    pub orbits: Vec<OrbitMargin>,
}

pub const THRESHOLD_SAMPLES: usize = 256;

/// Evaluates the Birkhoff integrals of the threshold condition at `s` over
/// sampled orbit segments of length `T`, normalized by `T`.
pub fn threshold_sign_report(
    sys: &AnosovSystem,
    s: f64,
    t: f64,
    location: ThresholdLocation,
) -> Result<ThresholdReport> {
    if !(t > 0.0) {
        return Err(Error::Config("threshold time must be positive".into()));
    }
    let steps = ((t / sys.roof()).round() as usize).max(1);
    let time = steps as f64 * sys.roof();
    let orbits: Vec<OrbitMargin> = r2_points(THRESHOLD_SAMPLES)
        .into_par_iter()
        .map(|x| {
            let start = match location {
                ThresholdLocation::ReversedSourceEuStar => sys.iterate(x, -(steps as i64)),
                _ => x,
            };
            let (gu, gs) = segment_growth(sys, start, steps);
            let (rm, rp) = (gu / time, gs / time);
            let margin = match location {
                ThresholdLocation::SourceEsStar => -(1.5 * rp + (0.5 + s) * rm),
                ThresholdLocation::SinkEuStar => -((1.5 - s) * rp + 0.5 * rm),
                ThresholdLocation::ReversedSourceEuStar => (1.5 - s) * rp + 0.5 * rm,
            };
            OrbitMargin {
                x,
                r_minus: rm,
                r_plus: rp,
                margin,
            }
        })
        .collect();
    let max_margin = orbits.iter().map(|o| o.margin).fold(f64::NEG_INFINITY, f64::max);
    let min_margin = orbits.iter().map(|o| o.margin).fold(f64::INFINITY, f64::min);
    Ok(ThresholdReport {
        s,
        t: time,
        location,
        max_margin,
        min_margin,
        orbits,
    })
}

impl ThresholdReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        w.write_record(["x1", "x2", "r_minus", "r_plus", "margin"]).map_err(csv_error)?;
        for o in &self.orbits {
            w.write_record([
                o.x[0].to_string(),
                o.x[1].to_string(),
                o.r_minus.to_string(),
                o.r_plus.to_string(),
                o.margin.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{lyapunov_rates, make_system};
    use crate::field::Grid;
    use crate::spectral::white_noise;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plane_wave_profile_is_inside() {
        let g = Grid::new(64, 2).unwrap();
        let u = PeriodicField::from_fn(g, |x| (std::f64::consts::TAU * (3.0 * x[0] + x[1])).cos().powi(3));
        let p = cone_energy(&u, [3.0, 1.0, 0.0], 0.05).unwrap();
        let out: f64 = p.per_band.iter().map(|b| b.outside).sum();
        let tot: f64 = p.per_band.iter().map(|b| b.total()).sum();
        assert!(out <= 1e-28 * tot, "{out} {tot}");
        let norm2 = u.l2_norm().powi(2);
        assert!(tot <= norm2 * (1.0 + 1e-12) && tot >= 0.5 * norm2);
    }

    #[test]
    fn white_noise_fraction() {
        let g = Grid::new(256, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = white_noise(g, &mut rng);
        let p = cone_energy(&u, [1.0, 0.3, 0.0], 15f64.to_radians()).unwrap();
        for b in p.per_band.iter().filter(|b| b.j >= 4 && b.j <= 6) {
            let f = b.inside / b.total();
            assert!((f - 1.0 / 6.0).abs() < 0.02, "band {} fraction {f}", b.j);
        }
    }

    #[test]
    fn aperture_monotone() {
        let g = Grid::new(64, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = white_noise(g, &mut rng);
        let mut prev: Option<ConeEnergyProfile> = None;
        for a in [5.0f64, 10.0, 15.0, 20.0, 45.0] {
            let p = cone_energy(&u, [0.2, 1.0, 0.0], a.to_radians()).unwrap();
            if let Some(q) = &prev {
                for (x, y) in q.per_band.iter().zip(&p.per_band) {
                    assert!(y.inside >= x.inside);
                }
            }
            prev = Some(p);
        }
    }

    #[test]
    fn constant_field_is_trivial() {
        let g = Grid::new(64, 2).unwrap();
        let u = PeriodicField::constant(g, 0.618);
        assert_eq!(wavefront_test(&u, [1.0, 0.0, 0.0], 0.2, 1.0, None).unwrap(), WavefrontVerdict::Trivial);
    }

    #[test]
    fn threshold_arithmetic() {
        let r = RateReport {
            nu_u_min: 0.8,
            nu_u_max: 1.2,
            nu_s_min: 0.9,
            nu_s_max: 1.1,
            ..RateReport::uniform(1.0, 1.0)
        };
        let t = rigidity_thresholds(&r, ManifoldDim::General, false).unwrap();
        assert!((t.regularity_lower_bound - 1.7 / 1.1).abs() < 1e-12);
        assert!((t.rigidity_threshold - 2.3 / 0.9).abs() < 1e-12);
        assert_eq!(t.special_value, None);
        let bad = RateReport {
            converged: false,
            ..r
        };
        assert!(rigidity_thresholds(&bad, ManifoldDim::Three, true).is_err());
    }

    #[test]
    fn cat_suspension_thresholds() {
        let sys = make_system([[2, 1], [1, 1]], None, Some(1.0)).unwrap();
        let rates = lyapunov_rates(&sys, 20.0, 64).unwrap();
        let t = rigidity_thresholds(&rates, ManifoldDim::Three, true).unwrap();
        assert!((t.rigidity_threshold - 2.0).abs() < 0.01);
        assert!((t.regularity_lower_bound - 2.0).abs() < 0.01);
        let sink = |s| threshold_sign_report(&sys, s, 20.0, ThresholdLocation::SinkEuStar).unwrap();
        assert!(sink(1.9).max_margin < 0.0);
        assert!(sink(2.1).min_margin > 0.0);
        let src = threshold_sign_report(&sys, -0.4, 20.0, ThresholdLocation::SourceEsStar).unwrap();
        assert!(src.max_margin < 0.0);
    }
}
