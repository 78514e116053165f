//! Hydrostatic velocity state: the horizontal velocity `u` in the space `H`
//! together with the derived vorticity `v = d_z u` and vertical velocity `w`.
//!
//! `H` consists of real fields that are even in z and whose horizontal
//! derivative has zero vertical mean. On the Fourier lattice the second
//! condition says that every mode with `k2 = 0, k1 != 0` vanishes; those
//! are exactly the z-independent modes a pressure gradient can occupy, so
//! projecting onto `H` eliminates `d_x p`.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{Axis, Grid, Parity, SpectralField};

pub mod snapshot;

/// Relative size of the pressure-like modes tolerated by [`VelocityState::new`].
pub const H_MEMBERSHIP_TOL: f64 = 1e-10;

/// `f = project_to_h(f) + removed`, the removed part being z-independent
/// with zero horizontal mean.
#[derive(Debug, Clone)]
pub struct HSplit {
    pub in_h: SpectralField,
    pub removed: SpectralField,
}

/// Zeroes every `k2 = 0, k1 != 0` mode. Idempotent.
pub fn project_to_h(f: &SpectralField) -> SpectralField {
    f.filter_modes(|m1, m2| !(m2 == 0 && m1 != 0))
}

/// Projection onto `H` that also reports the removed component, i.e. the
/// discrete `-d_x p` contribution of a drift.
pub fn split_h(f: &SpectralField) -> HSplit {
    let in_h = project_to_h(f);
    let removed = f.filter_modes(|m1, m2| m2 == 0 && m1 != 0);
    HSplit { in_h, removed }
}

/// Largest `|c(k1, 0)|`, `k1 != 0`, relative to the largest coefficient.
pub fn h_residual(f: &SpectralField) -> f64 {
    let scale = f.max_abs_coeff();
    if scale == 0.0 {
        return 0.0;
    }
    let g = f.grid();
    let mut worst = 0.0f64;
    for m1 in 1..=g.band_x() as i64 {
        worst = worst.max(f.coeff(m1, 0).norm()).max(f.coeff(-m1, 0).norm());
    }
    worst / scale
}

/// `w = -int_0^z d_x u`, computed by antidifferentiating `-d_x u` in z mode
/// by mode. Fails when `d_x u` has a nonzero vertical mean, since the
/// antiderivative would then not be periodic.
pub fn vertical_velocity(u: &SpectralField) -> Result<SpectralField> {
    let residual = h_residual(u);
    if residual > H_MEMBERSHIP_TOL {
        return Err(Error::NonintegrableVerticalVelocity { residual });
    }
    Ok(vertical_velocity_of_h_part(u))
}

/// Antiderivative formula applied to the `k2 != 0` modes only.
pub(crate) fn vertical_velocity_of_h_part(u: &SpectralField) -> SpectralField {
    // w_k = -(i k1 / i k2) u_k = -(k1 / k2) u_k
    let w = u.map_symbol(|k1, k2| if k2 == 0.0 { 0.0 } else { -k1 / k2 });
    w.with_parity(u.parity().flip())
}

/// `v = d_z u`.
pub fn vorticity(u: &SpectralField) -> SpectralField {
    u.derivative(Axis::Z, 1)
}

/// Horizontal velocity with cached vorticity and vertical velocity.
#[derive(Debug, Clone)]
pub struct VelocityState {
    u: SpectralField,
    v: SpectralField,
    w: SpectralField,
    time: f64,
}

impl VelocityState {
    /// Validates parity and `H`-membership and computes the derived fields.
    pub fn new(u: SpectralField, time: f64) -> Result<Self> {
        if u.parity() != Parity::Even {
            return Err(Error::ParityViolation(format!("u must be even in z, got {:?}", u.parity())));
        }
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::InvalidArgument(format!("time must be finite and nonnegative, got {time}")));
        }
        let w = vertical_velocity(&u)?;
        // drop the tolerated residue so the stored u is exactly in H
        let u = project_to_h(&u);
        let v = vorticity(&u);
        Ok(VelocityState { u, v, w, time })
    }

    /// Projects `f` onto `H` first; the usual entry point for initial data.
    pub fn from_projected(f: &SpectralField, time: f64) -> Result<Self> {
        VelocityState::new(project_to_h(&f.clone().with_parity(Parity::Even)), time)
    }

    pub fn u(&self) -> &SpectralField {
        &self.u
    }

    pub fn v(&self) -> &SpectralField {
        &self.v
    }

    pub fn w(&self) -> &SpectralField {
        &self.w
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn grid(&self) -> Grid {
        self.u.grid()
    }

    pub fn with_time(&self, time: f64) -> Self {
        VelocityState { time, ..self.clone() }
    }

    pub fn bitwise_eq(&self, other: &VelocityState) -> bool {
        self.u.bitwise_eq(&other.u) && self.time.to_bits() == other.time.to_bits()
    }
}

/// Random band-limited member of `H` with Gaussian coefficients of standard
/// deviation `amplitude * exp(-|m| / decay)` for `|m1|, |m2| <= max_mode`.
pub fn random_h_field<R: Rng + ?Sized>(
    grid: Grid,
    rng: &mut R,
    amplitude: f64,
    decay: f64,
    max_mode: usize,
) -> SpectralField {
    random_h_field_with(grid, rng, max_mode, |r| amplitude * (-r / decay).exp())
}

/// As [`random_h_field`] with the standard deviation given as a function of `|m|`.
pub fn random_h_field_with<R: Rng + ?Sized>(
    grid: Grid,
    rng: &mut R,
    max_mode: usize,
    sd: impl Fn(f64) -> f64,
) -> SpectralField {
    let mut f = SpectralField::zeros(grid, Parity::Even);
    let mx = max_mode.min(grid.band_x()) as i64;
    let mz = max_mode.min(grid.band_z()) as i64;
    // modes with m1 >= 0, m2 >= 1 (plus the mean); partners follow by symmetry
    let mean: f64 = rng.sample(StandardNormal);
    f.set_mode(0, 0, Complex64::new(sd(0.0) * mean, 0.0)).expect("mean mode");
    for m1 in 0..=mx {
        for m2 in 1..=mz {
            let r = ((m1 * m1 + m2 * m2) as f64).sqrt();
            let sd = sd(r);
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = if m1 == 0 { 0.0 } else { rng.sample(StandardNormal) };
            f.set_mode(m1, m2, Complex64::new(sd * re, sd * im)).expect("mode inside band");
        }
    }
    f
}
