//! Sampled fields on the flat torus `T^n = R^n / Z^n` and their Fourier
//! coefficients.
//!
//! Samples sit at `x_i = i / N` along every axis. Fourier coefficients are
//! normalized as `û(k) = N^{-n} Σ_x u(x) e^{-2πi k·x}`, so that the
//! trigonometric interpolant is `u(x) = Σ_k û(k) e^{2πi k·x}` and the L² norm
//! on the unit-volume torus is `‖u‖² = Σ_k |û(k)|²`. Frequencies live on the
//! integer lattice with `-N/2 <= k_i < N/2`.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Isotropic power-of-two grid on `T^dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    size: usize,
    dim: usize,
}

impl Grid {
    pub fn new(size: usize, dim: usize) -> Result<Self> {
        if size < 2 || !size.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(size));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!(
                "domain dimension {dim} not in 1..=3"
            )));
        }
        Ok(Self { size, dim })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of sample points.
    pub fn len(&self) -> usize {
        self.size.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the highest dyadic band, `log2(N) - 1`.
    pub fn top_band(&self) -> i32 {
        self.size.trailing_zeros() as i32 - 1
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            idx[axis] = rest % self.size;
            rest /= self.size;
        }
        idx
    }

    pub fn flat_index(&self, idx: [usize; 3]) -> usize {
        idx[..self.dim]
            .iter()
            .fold(0, |acc, &i| acc * self.size + i)
    }

    /// Signed frequency stored at array position `i` along one axis.
    pub fn freq_of(&self, i: usize) -> i64 {
        if i < self.size / 2 {
            i as i64
        } else {
            i as i64 - self.size as i64
        }
    }

    pub fn wavevector(&self, flat: usize) -> [i64; 3] {
        let idx = self.multi_index(flat);
        let mut k = [0i64; 3];
        for axis in 0..self.dim {
            k[axis] = self.freq_of(idx[axis]);
        }
        k
    }

    pub fn wavenumber(&self, flat: usize) -> f64 {
        let k = self.wavevector(flat);
        ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt()
    }

    /// Array position of frequency `k`, if it is representable.
    pub fn flat_of_freq(&self, k: [i64; 3]) -> Option<usize> {
        let half = (self.size / 2) as i64;
        let mut idx = [0usize; 3];
        for axis in 0..self.dim {
            let ki = k[axis];
            if ki < -half || ki >= half {
                return None;
            }
            idx[axis] = ki.rem_euclid(self.size as i64) as usize;
        }
        for &ki in &k[self.dim..] {
            if ki != 0 {
                return None;
            }
        }
        Some(self.flat_index(idx))
    }

    pub fn point(&self, flat: usize) -> [f64; 3] {
        let idx = self.multi_index(flat);
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = idx[axis] as f64 / self.size as f64;
        }
        x
    }

    /// Evaluates a Fourier multiplier on the lattice. Components sitting on
    /// the Nyquist frequency `-N/2` average the symbol over both signs, which
    /// keeps conjugate-symmetric symbols real-preserving.
    pub fn lattice_multiplier<F>(&self, symbol: F) -> Vec<Complex64>
    where
        F: Fn([f64; 3]) -> Complex64,
    {
        let half = (self.size / 2) as i64;
        (0..self.len())
            .map(|flat| {
                let k = self.wavevector(flat);
                let nyq: Vec<usize> = (0..self.dim).filter(|&a| k[a] == -half).collect();
                if nyq.is_empty() {
                    return symbol([k[0] as f64, k[1] as f64, k[2] as f64]);
                }
                let combos = 1usize << nyq.len();
                let mut acc = Complex64::new(0.0, 0.0);
                for mask in 0..combos {
                    let mut kk = [k[0] as f64, k[1] as f64, k[2] as f64];
                    for (bit, &axis) in nyq.iter().enumerate() {
                        if mask & (1 << bit) != 0 {
                            kk[axis] = half as f64;
                        }
                    }
                    acc += symbol(kk);
                }
                acc / combos as f64
            })
            .collect()
    }
}

impl std::fmt::Display for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let dims = vec![self.size.to_string(); self.dim];
        write!(f, "[{}]", dims.join("x"))
    }
}

/// Shape of the value attached to each grid point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueShape {
    Scalar,
    Vector(usize),
    Matrix(usize),
}

impl ValueShape {
    pub fn components(&self) -> usize {
        match *self {
            ValueShape::Scalar => 1,
            ValueShape::Vector(d) => d,
            ValueShape::Matrix(d) => d * d,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    C128,
}

/// Multidimensional FFT over one grid. Plans are built per instance; nothing
/// is shared between callers.
pub(crate) struct FftNd {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftNd {
    pub(crate) fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            forward: planner.plan_fft_forward(grid.size()),
            inverse: planner.plan_fft_inverse(grid.size()),
        }
    }

    /// Samples to normalized coefficients.
    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &*self.forward);
        let scale = 1.0 / self.grid.len() as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }

    /// Coefficients to samples.
    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &*self.inverse);
    }

    fn transform(&self, data: &mut [Complex64], fft: &dyn Fft<f64>) {
        let n = self.grid.size();
        let len = self.grid.len();
        debug_assert_eq!(data.len(), len);
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let mut lines = vec![Complex64::new(0.0, 0.0); len];
        for axis in 0..self.grid.dim() {
            let stride = n.pow((self.grid.dim() - 1 - axis) as u32);
            if stride == 1 {
                fft.process_with_scratch(data, &mut scratch);
                continue;
            }
            let block = n * stride;
            for outer in (0..len).step_by(block) {
                for j in 0..stride {
                    for i in 0..n {
                        lines[outer + j * n + i] = data[outer + i * stride + j];
                    }
                }
            }
            fft.process_with_scratch(&mut lines, &mut scratch);
            for outer in (0..len).step_by(block) {
                for j in 0..stride {
                    for i in 0..n {
                        data[outer + i * stride + j] = lines[outer + j * n + i];
                    }
                }
            }
        }
    }
}

/// Samples of a scalar, vector or matrix valued function on a torus grid.
///
/// Components are stored as contiguous planes (component-major); within a
/// plane, samples are row-major with axis 0 slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicField {
    grid: Grid,
    shape: ValueShape,
    dtype: Dtype,
    data: Vec<Complex64>,
}

const REAL_TOL: f64 = 1e-12;

impl PeriodicField {
    pub fn zeros(grid: Grid, shape: ValueShape, dtype: Dtype) -> Self {
        Self {
            grid,
            shape,
            dtype,
            data: vec![Complex64::new(0.0, 0.0); grid.len() * shape.components()],
        }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self::from_real(grid, vec![value; grid.len()]).expect("length matches grid")
    }

    pub fn from_fn<F: Fn([f64; 3]) -> f64>(grid: Grid, f: F) -> Self {
        let data = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self::from_real(grid, data).expect("length matches grid")
    }

    pub fn from_complex_fn<F: Fn([f64; 3]) -> Complex64>(grid: Grid, f: F) -> Self {
        let data = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self::from_complex(grid, data).expect("length matches grid")
    }

    pub fn from_real(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::from_parts(
            grid,
            ValueShape::Scalar,
            Dtype::F64,
            values.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn from_complex(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        Self::from_parts(grid, ValueShape::Scalar, Dtype::C128, values)
    }

    /// Builds a field from component-major data.
    pub fn from_parts(
        grid: Grid,
        shape: ValueShape,
        dtype: Dtype,
        mut data: Vec<Complex64>,
    ) -> Result<Self> {
        if data.len() != grid.len() * shape.components() {
            return Err(Error::Config(format!(
                "{} values supplied for grid {} with {} components",
                data.len(),
                grid,
                shape.components()
            )));
        }
        if dtype == Dtype::F64 {
            data.iter_mut().for_each(|z| z.im = 0.0);
        }
        Ok(Self {
            grid,
            shape,
            dtype,
            data,
        })
    }

    /// Stacks scalar fields into a vector-valued field.
    pub fn stack(components: &[PeriodicField]) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Config("no components to stack".into()))?;
        let mut data = Vec::with_capacity(first.grid.len() * components.len());
        let mut dtype = Dtype::F64;
        for c in components {
            first.check_grid(c)?;
            if c.shape != ValueShape::Scalar {
                return Err(Error::Config("stack expects scalar components".into()));
            }
            if c.dtype == Dtype::C128 {
                dtype = Dtype::C128;
            }
            data.extend_from_slice(&c.data);
        }
        Self::from_parts(
            first.grid,
            ValueShape::Vector(components.len()),
            dtype,
            data,
        )
    }

    /// Builds a scalar field from Fourier coefficients. The result is real
    /// when the coefficients are conjugate symmetric (up to rounding).
    pub fn from_spectrum(grid: Grid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::Config("spectrum length does not match grid".into()));
        }
        let mut data = coeffs;
        FftNd::new(grid).inverse(&mut data);
        let dtype = if is_effectively_real(&data) {
            Dtype::F64
        } else {
            Dtype::C128
        };
        Self::from_parts(grid, ValueShape::Scalar, dtype, data)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn shape(&self) -> ValueShape {
        self.shape
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn is_real(&self) -> bool {
        self.dtype == Dtype::F64
    }

    pub fn components(&self) -> usize {
        self.shape.components()
    }

    /// All samples, component-major.
    pub fn values(&self) -> &[Complex64] {
        &self.data
    }

    pub fn component_values(&self, c: usize) -> &[Complex64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn component(&self, c: usize) -> PeriodicField {
        Self {
            grid: self.grid,
            shape: ValueShape::Scalar,
            dtype: self.dtype,
            data: self.component_values(c).to_vec(),
        }
    }

    /// Real parts of a scalar field.
    pub fn real_values(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.data
    }

    pub(crate) fn check_grid(&self, other: &PeriodicField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch {
                left: self.grid.to_string(),
                right: other.grid.to_string(),
            });
        }
        Ok(())
    }

    fn check_compatible(&self, other: &PeriodicField) -> Result<()> {
        self.check_grid(other)?;
        if self.shape != other.shape {
            return Err(Error::GridMismatch {
                left: format!("{:?}", self.shape),
                right: format!("{:?}", other.shape),
            });
        }
        Ok(())
    }

    fn joint_dtype(&self, other: &PeriodicField) -> Dtype {
        if self.is_real() && other.is_real() {
            Dtype::F64
        } else {
            Dtype::C128
        }
    }

    pub fn add(&self, other: &PeriodicField) -> Result<PeriodicField> {
        self.check_compatible(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self::from_parts(self.grid, self.shape, self.joint_dtype(other), data)
    }

    pub fn sub(&self, other: &PeriodicField) -> Result<PeriodicField> {
        self.check_compatible(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self::from_parts(self.grid, self.shape, self.joint_dtype(other), data)
    }

    pub fn scale(&self, factor: f64) -> PeriodicField {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= factor);
        out
    }

    pub fn scale_complex(&self, factor: Complex64) -> PeriodicField {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|z| *z *= factor);
        if factor.im != 0.0 {
            out.dtype = Dtype::C128;
        }
        out
    }

    /// Pointwise product of two scalar fields.
    pub fn mul(&self, other: &PeriodicField) -> Result<PeriodicField> {
        self.check_compatible(other)?;
        if self.shape != ValueShape::Scalar {
            return Err(Error::Config("pointwise product expects scalar fields".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Self::from_parts(self.grid, self.shape, self.joint_dtype(other), data)
    }

    pub fn map_real<F: Fn(f64) -> f64>(&self, f: F) -> PeriodicField {
        let data = self.data.iter().map(|z| Complex64::new(f(z.re), 0.0)).collect();
        Self::from_parts(self.grid, self.shape, Dtype::F64, data).expect("same layout")
    }

    /// `(∫ Σ_c |u_c|²)^{1/2}` on the unit torus.
    pub fn l2_norm(&self) -> f64 {
        let sum: f64 = self.data.iter().map(|z| z.norm_sqr()).sum();
        (sum / self.grid.len() as f64).sqrt()
    }

    /// Maximum over grid points of the Euclidean norm of the value.
    pub fn sup_norm(&self) -> f64 {
        let n = self.grid.len();
        (0..n)
            .map(|i| {
                (0..self.components())
                    .map(|c| self.data[c * n + i].norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `⟨u, v⟩ = ∫ u · conj(v)`.
    pub fn inner(&self, other: &PeriodicField) -> Result<Complex64> {
        self.check_compatible(other)?;
        let sum: Complex64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b.conj())
            .sum();
        Ok(sum / self.grid.len() as f64)
    }

    /// Normalized Fourier coefficients, component-major.
    pub fn spectrum(&self) -> Vec<Complex64> {
        let fft = FftNd::new(self.grid);
        let n = self.grid.len();
        let mut out = self.data.clone();
        for c in 0..self.components() {
            fft.forward(&mut out[c * n..(c + 1) * n]);
        }
        out
    }

    /// Applies a lattice Fourier multiplier (one value per lattice point) to
    /// every component.
    pub fn apply_multiplier(&self, multiplier: &[Complex64]) -> Result<PeriodicField> {
        let n = self.grid.len();
        if multiplier.len() != n {
            return Err(Error::Config("multiplier length does not match grid".into()));
        }
        let fft = FftNd::new(self.grid);
        let mut data = self.data.clone();
        for c in 0..self.components() {
            let plane = &mut data[c * n..(c + 1) * n];
            fft.forward(plane);
            plane.iter_mut().zip(multiplier).for_each(|(z, m)| *z *= m);
            fft.inverse(plane);
        }
        let dtype = if self.is_real() && is_effectively_real(&data) {
            Dtype::F64
        } else {
            Dtype::C128
        };
        Self::from_parts(self.grid, self.shape, dtype, data)
    }

    /// Spectral partial derivative `∂/∂x_axis`.
    pub fn derivative(&self, axis: usize) -> Result<PeriodicField> {
        if axis >= self.grid.dim() {
            return Err(Error::Config(format!("axis {axis} out of range")));
        }
        let m = self.grid.lattice_multiplier(|k| {
            Complex64::new(0.0, 2.0 * std::f64::consts::PI * k[axis])
        });
        self.apply_multiplier(&m)
    }

    /// Trigonometric interpolation onto another grid of the same dimension.
    /// Upsampling is exact; downsampling truncates the spectrum.
    pub fn resample(&self, size: usize) -> Result<PeriodicField> {
        let target = Grid::new(size, self.grid.dim())?;
        if target == self.grid {
            return Ok(self.clone());
        }
        let src_n = self.grid.size();
        let src_half = (src_n / 2) as i64;
        let dst_half = (size / 2) as i64;
        // Per axis: target index -> contributing (source index, weight). The
        // coarse Nyquist mode collects both signs of the fine one; upsampling
        // splits the Nyquist mode evenly between the two signs.
        let src_index = |f: i64| f.rem_euclid(src_n as i64) as usize;
        let table: Vec<Vec<(usize, f64)>> = (0..size)
            .map(|i| {
                let ki = target.freq_of(i);
                if size < src_n {
                    if ki == -dst_half {
                        vec![(src_index(-dst_half), 1.0), (src_index(dst_half), 1.0)]
                    } else {
                        vec![(src_index(ki), 1.0)]
                    }
                } else if ki.abs() < src_half {
                    vec![(src_index(ki), 1.0)]
                } else if ki.abs() == src_half {
                    vec![(src_index(-src_half), 0.5)]
                } else {
                    vec![]
                }
            })
            .collect();
        let dim = self.grid.dim();
        let n_src = self.grid.len();
        let n_dst = target.len();
        let spec = self.spectrum();
        let fft = FftNd::new(target);
        let mut data = vec![Complex64::new(0.0, 0.0); n_dst * self.components()];
        for c in 0..self.components() {
            let plane = &mut data[c * n_dst..(c + 1) * n_dst];
            let src_plane = &spec[c * n_src..(c + 1) * n_src];
            plane.par_iter_mut().enumerate().for_each(|(flat, slot)| {
                let idx = target.multi_index(flat);
                let empty = [(0usize, 1.0f64)];
                let lists: [&[(usize, f64)]; 3] =
                    std::array::from_fn(|a| if a < dim { &table[idx[a]][..] } else { &empty[..] });
                for &(i0, w0) in lists[0] {
                    for &(i1, w1) in lists[1] {
                        for &(i2, w2) in lists[2] {
                            let mut m = [0usize; 3];
                            m[0] = i0;
                            if dim > 1 {
                                m[1] = i1;
                            }
                            if dim > 2 {
                                m[2] = i2;
                            }
                            *slot += src_plane[self.grid.flat_index(m)] * (w0 * w1 * w2);
                        }
                    }
                }
            });
            fft.inverse(plane);
        }
        Self::from_parts(target, self.shape, self.dtype, data)
    }

    /// Returns `x ↦ u(x + d_line · e_axis)` where the shift `d_line` depends on
    /// the line (the remaining coordinates, row-major). Each line is shifted
    /// by exact trigonometric interpolation.
    pub fn shift_lines(&self, axis: usize, shifts: &[f64]) -> Result<PeriodicField> {
        let n = self.grid.size();
        let len = self.grid.len();
        if axis >= self.grid.dim() {
            return Err(Error::Config(format!("axis {axis} out of range")));
        }
        if shifts.len() != len / n {
            return Err(Error::Config("one shift per grid line required".into()));
        }
        let stride = n.pow((self.grid.dim() - 1 - axis) as u32);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut data = self.data.clone();
        for c in 0..self.components() {
            let plane = &mut data[c * len..(c + 1) * len];
            let mut line_no = 0;
            for outer in (0..len).step_by(n * stride) {
                for j in 0..stride {
                    let d = shifts[line_no];
                    line_no += 1;
                    for i in 0..n {
                        line[i] = plane[outer + i * stride + j];
                    }
                    fwd.process(&mut line);
                    for (i, z) in line.iter_mut().enumerate() {
                        let k = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
                        if i == n / 2 {
                            *z *= (std::f64::consts::PI * n as f64 * d).cos();
                        } else {
                            *z *= Complex64::from_polar(1.0, two_pi * k * d);
                        }
                        *z /= n as f64;
                    }
                    inv.process(&mut line);
                    for i in 0..n {
                        plane[outer + i * stride + j] = line[i];
                    }
                }
            }
        }
        Self::from_parts(self.grid, self.shape, self.dtype, data)
    }

    /// Returns `x ↦ u(B x mod 1)` for an integer matrix `B` on a 2D grid.
    /// Grid points map to grid points, so this is an exact permutation.
    pub fn compose_linear(&self, b: [[i64; 2]; 2]) -> Result<PeriodicField> {
        if self.grid.dim() != 2 {
            return Err(Error::Config("linear composition needs a 2D grid".into()));
        }
        let n = self.grid.size() as i64;
        let len = self.grid.len();
        let mut data = vec![Complex64::new(0.0, 0.0); self.data.len()];
        for flat in 0..len {
            let idx = self.grid.multi_index(flat);
            let (i0, i1) = (idx[0] as i64, idx[1] as i64);
            let j0 = (b[0][0] * i0 + b[0][1] * i1).rem_euclid(n) as usize;
            let j1 = (b[1][0] * i0 + b[1][1] * i1).rem_euclid(n) as usize;
            let src = self.grid.flat_index([j0, j1, 0]);
            for c in 0..self.components() {
                data[c * len + flat] = self.data[c * len + src];
            }
        }
        Self::from_parts(self.grid, self.shape, self.dtype, data)
    }
}

pub(crate) fn is_effectively_real(data: &[Complex64]) -> bool {
    let scale = data.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    let imag = data.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    imag <= REAL_TOL * scale.max(f64::MIN_POSITIVE)
}

/// Sparse Fourier series of a scalar field, for evaluation off the grid.
#[derive(Clone, Debug)]
pub struct FourierSeries {
    dim: usize,
    terms: Vec<([f64; 3], Complex64)>,
    real: bool,
}

impl FourierSeries {
    /// Keeps coefficients above `1e-15` of the largest one. Nyquist
    /// coefficients are split evenly between `±N/2`.
    pub fn from_field(field: &PeriodicField) -> Self {
        let grid = field.grid();
        let spec = field.spectrum();
        let peak = spec.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let cut = peak * 1e-15;
        let half = (grid.size() / 2) as i64;
        let mut terms = Vec::new();
        for (flat, &c) in spec.iter().enumerate().take(grid.len()) {
            if c.norm() <= cut || c.norm() == 0.0 {
                continue;
            }
            let k = grid.wavevector(flat);
            let nyq: Vec<usize> = (0..grid.dim()).filter(|&a| k[a] == -half).collect();
            let combos = 1usize << nyq.len();
            for mask in 0..combos {
                let mut kk = [k[0] as f64, k[1] as f64, k[2] as f64];
                for (bit, &axis) in nyq.iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        kk[axis] = half as f64;
                    }
                }
                terms.push((kk, c / combos as f64));
            }
        }
        Self {
            dim: grid.dim(),
            terms,
            real: field.is_real(),
        }
    }

    pub fn eval(&self, x: [f64; 3]) -> Complex64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        self.terms
            .iter()
            .map(|(k, c)| {
                let phase = (0..self.dim).map(|a| k[a] * x[a]).sum::<f64>();
                c * Complex64::from_polar(1.0, two_pi * phase)
            })
            .sum()
    }

    pub fn eval_real(&self, x: [f64; 3]) -> f64 {
        self.eval(x).re
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid2(n: usize) -> Grid {
        Grid::new(n, 2).unwrap()
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(Grid::new(48, 2), Err(Error::NotPowerOfTwo(48))));
        assert!(Grid::new(64, 4).is_err());
    }

    #[test]
    fn flat_and_frequency_indexing_agree() {
        let g = Grid::new(8, 3).unwrap();
        for flat in 0..g.len() {
            assert_eq!(g.flat_index(g.multi_index(flat)), flat);
            assert_eq!(g.flat_of_freq(g.wavevector(flat)), Some(flat));
        }
    }

    #[test]
    fn plancherel_holds() {
        let g = grid2(32);
        let u = PeriodicField::from_fn(g, |x| (2.0 * PI * (3.0 * x[0] - x[1])).sin() + x[0] * x[1]);
        let spec = u.spectrum();
        let coeff_sq: f64 = spec.iter().map(|z| z.norm_sqr()).sum();
        let l2 = u.l2_norm();
        assert!((coeff_sq - l2 * l2).abs() <= 1e-12 * l2 * l2);
    }

    #[test]
    fn derivative_of_mode() {
        let g = grid2(16);
        let u = PeriodicField::from_fn(g, |x| (2.0 * PI * 3.0 * x[1]).sin());
        let du = u.derivative(1).unwrap();
        assert!(du.is_real());
        for flat in 0..g.len() {
            let x = g.point(flat);
            let expect = 6.0 * PI * (2.0 * PI * 3.0 * x[1]).cos();
            assert!((du.values()[flat].re - expect).abs() < 1e-11);
        }
    }

    #[test]
    fn shift_matches_analytic_translation() {
        let g = grid2(32);
        let f = |x: [f64; 3]| (2.0 * PI * (2.0 * x[0] + x[1])).cos() + 0.3 * (2.0 * PI * 5.0 * x[0]).sin();
        let u = PeriodicField::from_fn(g, f);
        let shifts: Vec<f64> = (0..32).map(|i| 0.013 * i as f64).collect();
        let v = u.shift_lines(0, &shifts).unwrap();
        for flat in 0..g.len() {
            let idx = g.multi_index(flat);
            let mut x = g.point(flat);
            x[0] += shifts[idx[1]];
            assert!((v.values()[flat].re - f(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_composition_is_a_permutation() {
        let g = grid2(16);
        let f = |x: [f64; 3]| (2.0 * PI * (x[0] + 2.0 * x[1])).sin();
        let u = PeriodicField::from_fn(g, f);
        let v = u.compose_linear([[2, 1], [1, 1]]).unwrap();
        for flat in 0..g.len() {
            let x = g.point(flat);
            let y = [2.0 * x[0] + x[1], x[0] + x[1], 0.0];
            assert!((v.values()[flat].re - f(y)).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_up_is_exact_interpolation() {
        let g = grid2(16);
        let f = |x: [f64; 3]| (2.0 * PI * (3.0 * x[0] - 2.0 * x[1])).cos();
        let up = PeriodicField::from_fn(g, f).resample(64).unwrap();
        for flat in 0..up.grid().len() {
            assert!((up.values()[flat].re - f(up.grid().point(flat))).abs() < 1e-12);
        }
        let series = FourierSeries::from_field(&PeriodicField::from_fn(g, f));
        let x = [0.1234, 0.777, 0.0];
        assert!((series.eval_real(x) - f(x)).abs() < 1e-12);
    }
}
