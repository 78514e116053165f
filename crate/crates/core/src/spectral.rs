//! Discrete representation of fields on the unit torus `T^2 = [0,1)^2`.
//!
//! Coefficients are stored for wavevectors `k = 2*pi*(m1, m2)` in FFT index
//! order, row-major in x (`index = i * nz + j`). With the normalisation used
//! here `f(x, z) = sum_k c_k exp(i k.(x, z))`, so `c_0` is the mean of `f`
//! and Parseval reads `int |f|^2 = sum |c_k|^2`.
//!
//! Every [`SpectralField`] satisfies three invariants after construction:
//! Hermitian symmetry (real-valued field), the declared z-parity, and the
//! 2/3-rule dealiasing band.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// Relative tolerance for the imaginary residue of a synthesised field.
pub const REALITY_TOL: f64 = 1e-12;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Unnormalised 2D FFT on a row-major `nx x nz` buffer.
fn fft2(buf: &mut [Complex64], nx: usize, nz: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), nx * nz);
    plan(nz, inverse).process(buf);

    let mut t = vec![Complex64::new(0.0, 0.0); nx * nz];
    for i in 0..nx {
        for j in 0..nz {
            t[j * nx + i] = buf[i * nz + j];
        }
    }
    plan(nx, inverse).process(&mut t);
    for j in 0..nz {
        for i in 0..nx {
            buf[i * nz + j] = t[j * nx + i];
        }
    }
}

fn is_smooth_size(mut n: usize) -> bool {
    for p in [2, 3, 5, 7] {
        while n % p == 0 {
            n /= p;
        }
    }
    n == 1
}

/// Largest retained |m| along an axis with `n` points.
///
/// Quadratic products of band-limited fields must not alias back into the
/// band, which needs `n > 3 * band`; for `n` divisible by three the plain
/// `n / 3` band fails that by one mode.
pub fn dealias_band(n: usize) -> usize {
    let k = n / 3;
    if n % 3 == 0 {
        k - 1
    } else {
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "GridRepr")]
pub struct Grid {
    nx: usize,
    nz: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRepr {
    nx: usize,
    nz: usize,
}

impl TryFrom<GridRepr> for Grid {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        Grid::new(r.nx, r.nz)
    }
}

impl Grid {
    pub fn new(nx: usize, nz: usize) -> Result<Self> {
        if nx < 4 || nz < 4 {
            return Err(Error::InvalidGrid { nx, nz, reason: "each axis needs at least 4 points" });
        }
        if !is_smooth_size(nx) || !is_smooth_size(nz) {
            return Err(Error::InvalidGrid {
                nx,
                nz,
                reason: "sizes must factor into the primes 2, 3, 5, 7",
            });
        }
        Ok(Grid { nx, nz })
    }

    pub fn square(n: usize) -> Result<Self> {
        Grid::new(n, n)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.nz)
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn band_x(&self) -> usize {
        dealias_band(self.nx)
    }

    pub fn band_z(&self) -> usize {
        dealias_band(self.nz)
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 / self.nx as f64
    }

    pub fn z(&self, j: usize) -> f64 {
        j as f64 / self.nz as f64
    }

    fn signed(idx: usize, n: usize) -> i64 {
        if idx <= n / 2 {
            idx as i64
        } else {
            idx as i64 - n as i64
        }
    }

    fn unsigned(m: i64, n: usize) -> usize {
        m.rem_euclid(n as i64) as usize
    }

    /// Signed x-mode number of row `i`.
    pub fn mode_x(&self, i: usize) -> i64 {
        Self::signed(i, self.nx)
    }

    pub fn mode_z(&self, j: usize) -> i64 {
        Self::signed(j, self.nz)
    }

    pub fn kx(&self, i: usize) -> f64 {
        TWO_PI * self.mode_x(i) as f64
    }

    pub fn kz(&self, j: usize) -> f64 {
        TWO_PI * self.mode_z(j) as f64
    }

    /// Wavevector of flat index `idx`.
    pub fn wavevector(&self, idx: usize) -> (f64, f64) {
        (self.kx(idx / self.nz), self.kz(idx % self.nz))
    }

    pub fn modes(&self, idx: usize) -> (i64, i64) {
        (self.mode_x(idx / self.nz), self.mode_z(idx % self.nz))
    }

    /// Flat index of mode `(m1, m2)` if it lies inside the dealiasing band.
    pub fn index(&self, m1: i64, m2: i64) -> Option<usize> {
        if m1.unsigned_abs() as usize > self.band_x() || m2.unsigned_abs() as usize > self.band_z() {
            return None;
        }
        Some(Self::unsigned(m1, self.nx) * self.nz + Self::unsigned(m2, self.nz))
    }

    pub fn in_band(&self, idx: usize) -> bool {
        let (m1, m2) = self.modes(idx);
        m1.unsigned_abs() as usize <= self.band_x() && m2.unsigned_abs() as usize <= self.band_z()
    }

    fn neg_index(&self, idx: usize) -> usize {
        let (i, j) = (idx / self.nz, idx % self.nz);
        ((self.nx - i) % self.nx) * self.nz + (self.nz - j) % self.nz
    }

    fn reflect_z_index(&self, idx: usize) -> usize {
        let (i, j) = (idx / self.nz, idx % self.nz);
        i * self.nz + (self.nz - j) % self.nz
    }

    pub fn refined(&self, factor: usize) -> Grid {
        Grid { nx: self.nx * factor, nz: self.nz * factor }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Even,
    Odd,
    None,
}

impl Parity {
    pub fn mul(self, other: Parity) -> Parity {
        match (self, other) {
            (Parity::None, _) | (_, Parity::None) => Parity::None,
            (a, b) if a == b => Parity::Even,
            _ => Parity::Odd,
        }
    }

    pub fn flip(self) -> Parity {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
            Parity::None => Parity::None,
        }
    }

    fn combine(self, other: Parity) -> Parity {
        if self == other {
            self
        } else {
            Parity::None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Z,
}

/// Real grid values on the uniform grid `x_i = i/nx`, `z_j = j/nz`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalField {
    grid: Grid,
    values: Vec<f64>,
}

impl PhysicalField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch { expected: grid.shape(), found: (values.len(), 1) });
        }
        Ok(PhysicalField { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.nx {
            for j in 0..grid.nz {
                values.push(f(grid.x(i), grid.z(j)));
            }
        }
        PhysicalField { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.nz + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Trapezoidal (= spectrally exact for trigonometric polynomials) mean.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> PhysicalField {
        PhysicalField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &PhysicalField, f: impl Fn(f64, f64) -> f64) -> Result<PhysicalField> {
        check_grid(self.grid, other.grid)?;
        Ok(PhysicalField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

fn check_grid(a: Grid, b: Grid) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch { expected: a.shape(), found: b.shape() });
    }
    Ok(())
}

/// Complex Fourier coefficients on the `2*pi*Z^2` lattice with a z-parity tag.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    parity: Parity,
    coeffs: Vec<Complex64>,
}

#[inline]
fn times_ik_pow(c: Complex64, k: f64, order: u32) -> Complex64 {
    let m = c * k.powi(order as i32);
    match order % 4 {
        0 => m,
        1 => Complex64::new(-m.im, m.re),
        2 => -m,
        _ => Complex64::new(m.im, -m.re),
    }
}

impl SpectralField {
    pub fn zeros(grid: Grid, parity: Parity) -> Self {
        SpectralField { grid, parity, coeffs: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        let mut f = SpectralField::zeros(grid, Parity::Even);
        f.coeffs[0] = Complex64::new(value, 0.0);
        f
    }

    /// Wraps coefficients as-is (shape checked only). Intended for decoding
    /// and for building deliberately invalid inputs; use [`Self::from_coeffs`]
    /// for validated construction.
    pub fn from_coeffs_raw(grid: Grid, parity: Parity, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::ShapeMismatch { expected: grid.shape(), found: (coeffs.len(), 1) });
        }
        Ok(SpectralField { grid, parity, coeffs })
    }

    /// Validated construction: rejects Hermitian asymmetry beyond tolerance,
    /// then enforces band, reality and parity exactly.
    pub fn from_coeffs(grid: Grid, parity: Parity, coeffs: Vec<Complex64>) -> Result<Self> {
        let mut f = Self::from_coeffs_raw(grid, parity, coeffs)?;
        if f.coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("spectral coefficients"));
        }
        let residue = f.reality_residue();
        if residue > REALITY_TOL {
            return Err(Error::RealityViolated { residue });
        }
        f.enforce();
        Ok(f)
    }

    /// Builds a field by sampling `f` on the grid and transforming.
    pub fn from_fn(grid: Grid, parity: Parity, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        forward_transform(&PhysicalField::from_fn(grid, f), parity)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient of mode `(m1, m2)`; zero outside the band.
    pub fn coeff(&self, m1: i64, m2: i64) -> Complex64 {
        self.grid.index(m1, m2).map_or(Complex64::new(0.0, 0.0), |i| self.coeffs[i])
    }

    /// Sets mode `(m1, m2)` and its Hermitian and parity partners, then
    /// re-projects so the field invariants hold exactly.
    pub fn set_mode(&mut self, m1: i64, m2: i64, value: Complex64) -> Result<()> {
        let idx = self
            .grid
            .index(m1, m2)
            .ok_or_else(|| Error::InvalidArgument(format!("mode ({m1}, {m2}) outside the dealiasing band")))?;
        let neg = self.grid.neg_index(idx);
        self.coeffs[idx] = value;
        self.coeffs[neg] = value.conj();
        let s = match self.parity {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
            Parity::None => 0.0,
        };
        if s != 0.0 {
            self.coeffs[self.grid.reflect_z_index(idx)] = value * s;
            self.coeffs[self.grid.reflect_z_index(neg)] = value.conj() * s;
        }
        self.enforce();
        Ok(())
    }

    /// Largest `|c_k - conj(c_{-k})|` relative to the largest coefficient.
    pub fn reality_residue(&self) -> f64 {
        let scale = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for idx in 0..self.coeffs.len() {
            let p = self.grid.neg_index(idx);
            worst = worst.max((self.coeffs[idx] - self.coeffs[p].conj()).norm());
        }
        worst / scale
    }

    /// Largest violation of the declared parity relation, relative to the
    /// largest coefficient; zero for parity `None`.
    pub fn parity_residue(&self) -> f64 {
        let s = match self.parity {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
            Parity::None => return 0.0,
        };
        let scale = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for idx in 0..self.coeffs.len() {
            let r = self.grid.reflect_z_index(idx);
            worst = worst.max((self.coeffs[r] - self.coeffs[idx] * s).norm());
        }
        worst / scale
    }

    /// True when every coefficient outside the dealiasing band is exactly zero.
    pub fn is_band_limited(&self) -> bool {
        self.coeffs
            .iter()
            .enumerate()
            .all(|(i, c)| self.grid.in_band(i) || (c.re == 0.0 && c.im == 0.0))
    }

    /// Zero the out-of-band modes, then project onto Hermitian-symmetric and
    /// parity-symmetric coefficients. Idempotent bit-for-bit.
    fn enforce(&mut self) {
        let g = self.grid;
        for (i, c) in self.coeffs.iter_mut().enumerate() {
            if !g.in_band(i) {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        for idx in 0..self.coeffs.len() {
            let p = g.neg_index(idx);
            if p < idx {
                continue;
            }
            let a = (self.coeffs[idx] + self.coeffs[p].conj()) * 0.5;
            self.coeffs[idx] = a;
            self.coeffs[p] = a.conj();
            if p == idx {
                self.coeffs[idx] = Complex64::new(a.re, 0.0);
            }
        }
        let s = match self.parity {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
            Parity::None => return,
        };
        for idx in 0..self.coeffs.len() {
            let r = g.reflect_z_index(idx);
            if r < idx {
                continue;
            }
            if r == idx {
                if s < 0.0 {
                    self.coeffs[idx] = Complex64::new(0.0, 0.0);
                }
                continue;
            }
            let a = (self.coeffs[idx] + self.coeffs[r] * s) * 0.5;
            self.coeffs[idx] = a;
            self.coeffs[r] = a * s;
        }
    }

    /// Re-declares the parity and symmetrises accordingly.
    pub fn with_parity(mut self, parity: Parity) -> Self {
        self.parity = parity;
        self.enforce();
        self
    }

    pub fn to_physical(&self) -> Result<PhysicalField> {
        inverse_transform(self)
    }

    /// Synthesis on a grid refined by an integer factor (zero padding).
    pub fn to_physical_refined(&self, factor: usize) -> Result<PhysicalField> {
        if factor == 1 {
            return self.to_physical();
        }
        let fine = self.grid.refined(factor);
        let mut buf = vec![Complex64::new(0.0, 0.0); fine.len()];
        for (idx, c) in self.coeffs.iter().enumerate() {
            if c.re == 0.0 && c.im == 0.0 {
                continue;
            }
            let (m1, m2) = self.grid.modes(idx);
            let fi = Grid::unsigned(m1, fine.nx) * fine.nz + Grid::unsigned(m2, fine.nz);
            buf[fi] = *c;
        }
        synthesize(fine, buf)
    }

    /// Values along the horizontal line at height `z`, one per grid column
    /// `x_i`. Exact for the trigonometric polynomial at any `z`.
    pub fn eval_z_line(&self, z: f64) -> Vec<f64> {
        let (nx, nz) = self.grid.shape();
        let mut rows = vec![Complex64::new(0.0, 0.0); nx];
        for j in 0..nz {
            let phase = Complex64::from_polar(1.0, self.grid.kz(j) * z);
            for (i, r) in rows.iter_mut().enumerate() {
                *r += self.coeffs[i * nz + j] * phase;
            }
        }
        plan(nx, true).process(&mut rows);
        rows.into_iter().map(|c| c.re).collect()
    }

    /// Applies a Fourier multiplier `sym(k1, k2)`; keeps the parity tag.
    pub fn map_symbol(&self, sym: impl Fn(f64, f64) -> f64) -> SpectralField {
        let mut out = self.clone();
        for (idx, c) in out.coeffs.iter_mut().enumerate() {
            let (k1, k2) = self.grid.wavevector(idx);
            *c *= sym(k1, k2);
        }
        out
    }

    /// Keeps the modes selected by `keep(m1, m2)`.
    pub fn filter_modes(&self, keep: impl Fn(i64, i64) -> bool) -> SpectralField {
        let mut out = self.clone();
        for (idx, c) in out.coeffs.iter_mut().enumerate() {
            let (m1, m2) = self.grid.modes(idx);
            if !keep(m1, m2) && (c.re != 0.0 || c.im != 0.0) {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        out
    }

    pub fn derivative(&self, axis: Axis, order: u32) -> SpectralField {
        let mut out = self.clone();
        let nz = self.grid.nz;
        for (idx, c) in out.coeffs.iter_mut().enumerate() {
            let k = match axis {
                Axis::X => self.grid.kx(idx / nz),
                Axis::Z => self.grid.kz(idx % nz),
            };
            *c = times_ik_pow(*c, k, order);
        }
        if axis == Axis::Z && order % 2 == 1 {
            out.parity = out.parity.flip();
        }
        out
    }

    /// `D^alpha = d_x^ax d_z^az`.
    pub fn mixed_derivative(&self, ax: u32, az: u32) -> SpectralField {
        self.derivative(Axis::X, ax).derivative(Axis::Z, az)
    }

    pub fn scale(&self, a: f64) -> SpectralField {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= a);
        out
    }

    /// `self += a * other`.
    ///
    /// # Panics
    /// If the grids differ.
    /// `self += a * other`; exact zeros of `other` leave `self` bitwise untouched.
    pub fn axpy(&mut self, a: f64, other: &SpectralField) {
        assert_eq!(self.grid, other.grid, "axpy on mismatched grids");
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            if o.re != 0.0 {
                c.re += a * o.re;
            }
            if o.im != 0.0 {
                c.im += a * o.im;
            }
        }
        self.parity = self.parity.combine(other.parity);
    }

    pub fn add(&self, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Multiplies each coefficient by a real per-mode factor.
    pub fn scale_modes(&mut self, factors: &[f64]) {
        for (c, f) in self.coeffs.iter_mut().zip(factors) {
            *c *= *f;
        }
    }

    /// `int f g dx dz` by Parseval.
    pub fn inner(&self, other: &SpectralField) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a.conj() * b).re).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.norm()))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// Bitwise comparison of coefficients (and grid/parity).
    pub fn bitwise_eq(&self, other: &SpectralField) -> bool {
        self.grid == other.grid
            && self.parity == other.parity
            && self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits())
    }
}

fn synthesize(grid: Grid, mut buf: Vec<Complex64>) -> Result<PhysicalField> {
    fft2(&mut buf, grid.nx, grid.nz, true);
    let mut re_max = 0.0f64;
    let mut im_max = 0.0f64;
    for c in &buf {
        re_max = re_max.max(c.re.abs());
        im_max = im_max.max(c.im.abs());
    }
    if !(re_max.is_finite() && im_max.is_finite()) {
        return Err(Error::NonFinite("inverse transform"));
    }
    if im_max > REALITY_TOL * re_max.max(f64::MIN_POSITIVE) && im_max > 0.0 {
        let residue = if re_max > 0.0 { im_max / re_max } else { f64::INFINITY };
        return Err(Error::RealityViolated { residue });
    }
    Ok(PhysicalField { grid, values: buf.into_iter().map(|c| c.re).collect() })
}

/// Analysis: physical values to band-limited coefficients with the declared
/// parity enforced by symmetrisation.
pub fn forward_transform(f: &PhysicalField, parity: Parity) -> Result<SpectralField> {
    if !f.is_finite() {
        return Err(Error::NonFinite("forward transform input"));
    }
    let g = f.grid;
    let mut buf: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut buf, g.nx, g.nz, false);
    let norm = 1.0 / g.len() as f64;
    buf.iter_mut().for_each(|c| *c *= norm);
    let mut out = SpectralField { grid: g, parity, coeffs: buf };
    out.enforce();
    Ok(out)
}

/// Synthesis: coefficients to real grid values. Rejects fields whose
/// imaginary residue exceeds [`REALITY_TOL`] relative to the real part.
pub fn inverse_transform(f: &SpectralField) -> Result<PhysicalField> {
    synthesize(f.grid, f.coeffs.clone())
}

pub fn derivative(f: &SpectralField, axis: Axis, order: u32) -> SpectralField {
    f.derivative(axis, order)
}

/// Dealiased pointwise product. The parity of the result follows the
/// multiplication table (`None` absorbs).
pub fn product(f: &SpectralField, g: &SpectralField) -> Result<SpectralField> {
    check_grid(f.grid, g.grid)?;
    let a = f.to_physical()?;
    let b = g.to_physical()?;
    let p = a.zip_map(&b, |x, y| x * y)?;
    forward_transform(&p, f.parity.mul(g.parity))
}

/// Product of several physical factors summed, transformed once.
pub(crate) fn product_sum(grid: Grid, parity: Parity, terms: &[(&PhysicalField, &PhysicalField)]) -> Result<SpectralField> {
    let mut values = vec![0.0; grid.len()];
    for (a, b) in terms {
        check_grid(grid, a.grid)?;
        check_grid(grid, b.grid)?;
        for ((v, x), y) in values.iter_mut().zip(&a.values).zip(&b.values) {
            *v += x * y;
        }
    }
    forward_transform(&PhysicalField { grid, values }, parity)
}

/// Fourier truncation of grid values without dealiasing: every mode with
/// `keep(m1, m2)` false is removed, everything else (Nyquist included) is kept.
pub fn raw_projection(f: &PhysicalField, keep: impl Fn(i64, i64) -> bool) -> PhysicalField {
    let g = f.grid;
    let mut buf: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut buf, g.nx, g.nz, false);
    for (idx, c) in buf.iter_mut().enumerate() {
        let (i, j) = (idx / g.nz, idx % g.nz);
        if !keep(g.mode_x(i), g.mode_z(j)) {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    fft2(&mut buf, g.nx, g.nz, true);
    let scale = 1.0 / g.len() as f64;
    PhysicalField { grid: g, values: buf.into_iter().map(|c| c.re * scale).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn g32() -> Grid {
        Grid::square(32).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(64, 64).is_ok());
        assert!(Grid::new(48, 30).is_ok());
        assert!(Grid::new(2, 64).is_err());
        assert!(Grid::new(64, 22).is_err());
        assert_eq!(dealias_band(64), 21);
        assert_eq!(dealias_band(48), 15);
    }

    #[test]
    fn constant_field() {
        let f = SpectralField::from_fn(g32(), Parity::Even, |_, _| 1.0).unwrap();
        assert_abs_diff_eq!(f.coeff(0, 0).re, 1.0, epsilon = 1e-15);
        let rest: f64 = f.coeffs().iter().skip(1).map(|c| c.norm()).sum();
        assert!(rest < 1e-14);
    }

    #[test]
    fn cosine_x() {
        let f = SpectralField::from_fn(g32(), Parity::Even, |x, _| (TWO_PI * x).cos()).unwrap();
        for m1 in [-1, 1] {
            assert_abs_diff_eq!(f.coeff(m1, 0).re, 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(f.coeff(m1, 0).im, 0.0, epsilon = 1e-15);
        }
        let total: f64 = f.coeffs().iter().map(|c| c.norm()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn cosine_product_matches_quadrature() {
        // direct quadrature of f e^{-ik.x} over the grid
        let g = g32();
        let func = |x: f64, z: f64| (TWO_PI * x).cos() * (TWO_PI * z).cos();
        let f = SpectralField::from_fn(g, Parity::Even, func).unwrap();
        for m1 in -3i64..=3 {
            for m2 in -3i64..=3 {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..32 {
                    for j in 0..32 {
                        let (x, z) = (g.x(i), g.z(j));
                        acc += Complex64::from_polar(func(x, z), -TWO_PI * (m1 as f64 * x + m2 as f64 * z));
                    }
                }
                acc /= 1024.0;
                assert_abs_diff_eq!(f.coeff(m1, m2).re, acc.re, epsilon = 1e-14);
                assert_abs_diff_eq!(f.coeff(m1, m2).im, acc.im, epsilon = 1e-14);
                let expect = if m1.abs() == 1 && m2.abs() == 1 { 0.25 } else { 0.0 };
                assert_abs_diff_eq!(f.coeff(m1, m2).re, expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn inverse_examples() {
        let g = g32();
        let one = SpectralField::constant(g, 1.0).to_physical().unwrap();
        assert!(one.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let mut c = SpectralField::zeros(g, Parity::Even);
        c.set_mode(0, 1, Complex64::new(0.5, 0.0)).unwrap();
        let p = c.to_physical().unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert_abs_diff_eq!(p.get(i, j), (TWO_PI * g.z(j)).cos(), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn inverse_rejects_non_hermitian() {
        let g = g32();
        let mut coeffs = vec![Complex64::new(0.0, 0.0); g.len()];
        coeffs[g.index(1, 0).unwrap()] = Complex64::new(1.0, 0.0);
        let f = SpectralField::from_coeffs_raw(g, Parity::None, coeffs.clone()).unwrap();
        assert!(matches!(inverse_transform(&f), Err(Error::RealityViolated { .. })));
        assert!(matches!(
            SpectralField::from_coeffs(g, Parity::None, coeffs),
            Err(Error::RealityViolated { .. })
        ));
    }

    #[test]
    fn forward_rejects_bad_input() {
        let g = g32();
        let mut vals = vec![0.0; g.len()];
        vals[3] = f64::NAN;
        let f = PhysicalField::new(g, vals).unwrap();
        assert!(matches!(forward_transform(&f, Parity::None), Err(Error::NonFinite(_))));
        assert!(PhysicalField::new(g, vec![0.0; 10]).is_err());
    }

    #[test]
    fn parity_enforced_by_symmetrisation() {
        let g = g32();
        // sin(2 pi z) has no even part
        let f = SpectralField::from_fn(g, Parity::Even, |x, z| (TWO_PI * z).sin() + (TWO_PI * x).cos()).unwrap();
        let p = f.to_physical().unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert_abs_diff_eq!(p.get(i, j), (TWO_PI * g.x(i)).cos(), epsilon = 1e-14);
            }
        }
        assert_eq!(f.parity_residue(), 0.0);
        assert_eq!(f.reality_residue(), 0.0);
    }

    #[test]
    fn derivative_examples() {
        let g = g32();
        let c = SpectralField::from_fn(g, Parity::Even, |x, _| (TWO_PI * x).cos()).unwrap();
        let d = c.derivative(Axis::X, 1).to_physical().unwrap();
        for i in 0..32 {
            assert_abs_diff_eq!(d.get(i, 5), -TWO_PI * (TWO_PI * g.x(i)).sin(), epsilon = 1e-12);
        }
        let cz = SpectralField::from_fn(g, Parity::Even, |_, z| (TWO_PI * z).cos()).unwrap();
        assert_eq!(cz.derivative(Axis::Z, 1).parity(), Parity::Odd);
        assert_eq!(cz.derivative(Axis::Z, 2).parity(), Parity::Even);
        let d2 = cz.derivative(Axis::Z, 2).to_physical().unwrap();
        for j in 0..32 {
            assert_abs_diff_eq!(d2.get(3, j), -(TWO_PI * TWO_PI) * (TWO_PI * g.z(j)).cos(), epsilon = 1e-11);
        }
    }

    #[test]
    fn product_examples() {
        let g = g32();
        let c = SpectralField::from_fn(g, Parity::Even, |x, _| (TWO_PI * x).cos()).unwrap();
        let one = SpectralField::constant(g, 1.0);
        let p = product(&c, &one).unwrap();
        assert!(p.sub(&c).max_abs_coeff() < 1e-15);

        let sq = product(&c, &c).unwrap();
        assert_abs_diff_eq!(sq.coeff(0, 0).re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sq.coeff(2, 0).re, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(sq.coeff(-2, 0).re, 0.25, epsilon = 1e-15);

        let odd = SpectralField::from_fn(g, Parity::Odd, |_, z| (TWO_PI * z).sin()).unwrap();
        assert_eq!(product(&c, &odd).unwrap().parity(), Parity::Odd);
        assert_eq!(product(&odd, &odd).unwrap().parity(), Parity::Even);
        let none = SpectralField::zeros(g, Parity::None);
        assert_eq!(product(&none, &c).unwrap().parity(), Parity::None);
        assert!(product(&c, &SpectralField::zeros(Grid::square(16).unwrap(), Parity::Even)).is_err());
    }

    #[test]
    fn eval_line_matches_closed_form() {
        let g = g32();
        let f = SpectralField::from_fn(g, Parity::Even, |x, z| (TWO_PI * x).sin() * (2.0 * TWO_PI * z).cos()).unwrap();
        let z = 0.123;
        let line = f.eval_z_line(z);
        for (i, v) in line.iter().enumerate() {
            assert_abs_diff_eq!(*v, (TWO_PI * g.x(i)).sin() * (2.0 * TWO_PI * z).cos(), epsilon = 1e-14);
        }
    }

    #[test]
    fn refined_synthesis_interpolates() {
        let g = Grid::square(16).unwrap();
        let f = SpectralField::from_fn(g, Parity::Even, |x, z| (TWO_PI * x).cos() + (2.0 * TWO_PI * z).cos()).unwrap();
        let fine = f.to_physical_refined(4).unwrap();
        let fg = fine.grid();
        for i in (0..64).step_by(7) {
            for j in (0..64).step_by(5) {
                let e = (TWO_PI * fg.x(i)).cos() + (2.0 * TWO_PI * fg.z(j)).cos();
                assert_abs_diff_eq!(fine.get(i, j), e, epsilon = 1e-14);
            }
        }
    }
}
