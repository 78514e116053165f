//! Truncated cylindrical Wiener process and the affine noise operator
//! `sigma(u) dW = sum_k dW^k (psi_k u + chi_k)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fields::{random_h_field, VelocityState};
use crate::norms::ds_norm;
use crate::spectral::{forward_transform, Grid, Parity, PhysicalField, SpectralField, TWO_PI};

/// Default truncation level of the noise.
pub const DEFAULT_MODES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XPhase {
    Cos,
    Sin,
}

/// `amplitude * cos|sin(2 pi m1 x) * cos(2 pi m2 z)`, even in z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigMode {
    pub m1: u32,
    pub m2: u32,
    pub x_phase: XPhase,
    pub amplitude: f64,
}

impl TrigMode {
    pub fn constant(amplitude: f64) -> Self {
        TrigMode { m1: 0, m2: 0, x_phase: XPhase::Cos, amplitude }
    }

    pub fn zero() -> Self {
        TrigMode::constant(0.0)
    }

    pub fn eval(&self, x: f64, z: f64) -> f64 {
        let ax = TWO_PI * self.m1 as f64 * x;
        let fx = match self.x_phase {
            XPhase::Cos => ax.cos(),
            XPhase::Sin => ax.sin(),
        };
        self.amplitude * fx * (TWO_PI * self.m2 as f64 * z).cos()
    }

    /// `||.||_{W^{r,inf}}` as the largest sup norm of `D^beta`, `|beta| <= r`.
    pub fn w_inf_norm(&self, r: u32) -> f64 {
        if self.amplitude == 0.0 || (self.m1 == 0 && self.x_phase == XPhase::Sin) {
            return 0.0;
        }
        let k = (TWO_PI * self.m1.max(self.m2) as f64).max(1.0);
        self.amplitude.abs() * k.powi(r as i32)
    }

    /// The mode sampled on `grid`; errors if it lies outside the resolved band.
    pub fn to_field(&self, grid: Grid) -> Result<SpectralField> {
        self.validate(grid)?;
        SpectralField::from_fn(grid, Parity::Even, |x, z| self.eval(x, z))
    }

    fn validate(&self, grid: Grid) -> Result<()> {
        if !self.amplitude.is_finite() {
            return Err(Error::InvalidConfig("noise amplitude must be finite".into()));
        }
        if self.m1 as usize > grid.band_x() || self.m2 as usize > grid.band_z() {
            return Err(Error::InvalidConfig(format!(
                "noise mode ({}, {}) lies outside the resolved band of a {}x{} grid",
                self.m1,
                self.m2,
                grid.nx(),
                grid.nz()
            )));
        }
        Ok(())
    }
}

/// Replayable description of a noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseDescriptor {
    pub psi: Vec<TrigMode>,
    pub chi: Vec<TrigMode>,
}

impl NoiseDescriptor {
    pub fn zero(k: usize) -> Self {
        NoiseDescriptor { psi: vec![TrigMode::zero(); k], chi: vec![TrigMode::zero(); k] }
    }

    /// `k` low modes ordered by `|m|`, with `||psi_k||_{W^{s+1,inf}}`
    /// proportional to `(1+k)^-2` and scaled so the sums of squares equal
    /// `kappa1^2` and `kappa2^2`.
    pub fn envelope(k: usize, s: u32, kappa1: f64, kappa2: f64) -> Self {
        let modes = low_modes(k);
        let env: Vec<f64> = (0..k).map(|i| (1.0 + i as f64).powi(-2)).collect();
        let norm = env.iter().map(|e| e * e).sum::<f64>().sqrt();
        let build = |kappa: f64| {
            modes
                .iter()
                .zip(&env)
                .map(|(&(m1, m2, x_phase), e)| {
                    let unit = TrigMode { m1, m2, x_phase, amplitude: 1.0 };
                    TrigMode { amplitude: kappa * e / norm / unit.w_inf_norm(s + 1), ..unit }
                })
                .collect()
        };
        NoiseDescriptor { psi: build(kappa1), chi: build(kappa2) }
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    /// `(sum_k ||psi_k||^2_{W^{r,inf}})^(1/2)` and the same for `chi`.
    pub fn declared_kappas(&self, r: u32) -> (f64, f64) {
        let sum = |v: &[TrigMode]| v.iter().map(|m| m.w_inf_norm(r).powi(2)).sum::<f64>().sqrt();
        (sum(&self.psi), sum(&self.chi))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("descriptor serialises");
        hex(&Sha256::digest(&json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn low_modes(k: usize) -> Vec<(u32, u32, XPhase)> {
    let mut out = Vec::new();
    let mut r = 0u32;
    while out.len() < k {
        // pure-x modes are pressure gradients and vanish under the projection
        for m1 in 0..=r {
            for m2 in 0..=r {
                if m1.max(m2) != r || (m2 == 0 && m1 > 0) {
                    continue;
                }
                out.push((m1, m2, XPhase::Cos));
                if m1 > 0 {
                    out.push((m1, m2, XPhase::Sin));
                }
            }
        }
        r += 1;
    }
    out.sort_by_key(|&(m1, m2, p)| (m1 * m1 + m2 * m2, m1, m2, p == XPhase::Sin));
    out.truncate(k);
    out
}

/// A descriptor resolved on a grid.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    grid: Grid,
    descriptor: NoiseDescriptor,
    psi: Vec<SpectralField>,
    chi: Vec<SpectralField>,
    psi_phys: Vec<PhysicalField>,
    additive: bool,
}

impl NoiseModel {
    pub fn new(grid: Grid, descriptor: NoiseDescriptor) -> Result<Self> {
        if descriptor.psi.len() != descriptor.chi.len() {
            return Err(Error::InvalidConfig(format!(
                "noise needs as many psi as chi modes ({} vs {})",
                descriptor.psi.len(),
                descriptor.chi.len()
            )));
        }
        let field = |m: &TrigMode| m.to_field(grid);
        let psi = descriptor.psi.iter().map(field).collect::<Result<Vec<_>>>()?;
        let chi = descriptor.chi.iter().map(field).collect::<Result<Vec<_>>>()?;
        let psi_phys = psi.iter().map(|p| p.to_physical()).collect::<Result<Vec<_>>>()?;
        let additive = descriptor.psi.iter().all(|m| m.amplitude == 0.0);
        Ok(NoiseModel { grid, descriptor, psi, chi, psi_phys, additive })
    }

    pub fn zero(grid: Grid, k: usize) -> Self {
        NoiseModel::new(grid, NoiseDescriptor::zero(k)).expect("zero model is valid")
    }

    pub fn default_model(grid: Grid, s: u32, kappa1: f64, kappa2: f64) -> Result<Self> {
        NoiseModel::new(grid, NoiseDescriptor::envelope(DEFAULT_MODES, s, kappa1, kappa2))
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn descriptor(&self) -> &NoiseDescriptor {
        &self.descriptor
    }

    pub fn psi(&self) -> &[SpectralField] {
        &self.psi
    }

    pub fn chi(&self) -> &[SpectralField] {
        &self.chi
    }

    pub fn is_additive(&self) -> bool {
        self.additive
    }

    pub fn is_zero(&self) -> bool {
        self.additive && self.descriptor.chi.iter().all(|m| m.amplitude == 0.0)
    }

    /// Measured `(sum_k (max_{|beta|<=r} ||D^beta psi_k||_inf)^2)^(1/2)` and
    /// the same for `chi`, on the model grid.
    pub fn measured_kappas(&self, r: u32) -> Result<(f64, f64)> {
        let measure = |fields: &[SpectralField]| -> Result<f64> {
            let mut total = 0.0;
            for f in fields {
                let mut best = 0.0f64;
                for a in 0..=r {
                    for b in 0..=(r - a) {
                        best = best.max(f.mixed_derivative(a, b).to_physical()?.max_abs());
                    }
                }
                total += best * best;
            }
            Ok(total.sqrt())
        };
        Ok((measure(&self.psi)?, measure(&self.chi)?))
    }
}

/// Serialisable position of a path generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngToken {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

/// Per-path generator: one ChaCha stream per path index under a shared seed.
#[derive(Debug, Clone)]
pub struct PathRng {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl PathRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        PathRng { seed, stream, rng }
    }

    pub fn from_token(token: RngToken) -> Self {
        let mut r = PathRng::new(token.seed, token.stream);
        r.rng.set_word_pos(token.word_pos);
        r
    }

    pub fn token(&self) -> RngToken {
        RngToken { seed: self.seed, stream: self.stream, word_pos: self.rng.get_word_pos() }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WienerIncrement {
    pub dw: Vec<f64>,
    pub dt: f64,
    /// Generator position before the draw, when drawn from a [`PathRng`].
    pub seed_state: Option<RngToken>,
}

impl WienerIncrement {
    /// An increment with prescribed values, e.g. assembled from a finer path.
    pub fn from_values(dw: Vec<f64>, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        Ok(WienerIncrement { dw, dt, seed_state: None })
    }

    pub fn scaled(&self, a: f64) -> Self {
        WienerIncrement { dw: self.dw.iter().map(|x| a * x).collect(), ..self.clone() }
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

/// `k` independent `N(0, dt)` draws.
pub fn sample_increment(dt: f64, k: usize, rng: &mut PathRng) -> Result<WienerIncrement> {
    check_dt(dt)?;
    let token = rng.token();
    let sd = dt.sqrt();
    let dw = (0..k).map(|_| sd * rng.standard_normal()).collect();
    Ok(WienerIncrement { dw, dt, seed_state: Some(token) })
}

/// `sum_k dW^k (psi_k u + chi_k)`, with the product dealiased.
pub fn apply_noise(u: &SpectralField, inc: &WienerIncrement, model: &NoiseModel) -> Result<SpectralField> {
    if inc.dw.len() != model.len() {
        return Err(Error::InvalidArgument(format!(
            "increment has {} components but the noise has {} modes",
            inc.dw.len(),
            model.len()
        )));
    }
    if u.grid() != model.grid {
        return Err(Error::ShapeMismatch { expected: model.grid.shape(), found: u.grid().shape() });
    }
    if u.parity() != Parity::Even {
        return Err(Error::ParityViolation(format!("noise acts on even fields, got {:?}", u.parity())));
    }
    let mut out = if model.additive {
        SpectralField::zeros(model.grid, Parity::Even)
    } else {
        let mut slope = vec![0.0; model.grid.len()];
        for (dw, p) in inc.dw.iter().zip(&model.psi_phys) {
            if *dw != 0.0 {
                for (s, v) in slope.iter_mut().zip(p.values()) {
                    *s += dw * v;
                }
            }
        }
        let up = u.to_physical()?;
        let prod: Vec<f64> = slope.iter().zip(up.values()).map(|(a, b)| a * b).collect();
        forward_transform(&PhysicalField::new(model.grid, prod)?, Parity::Even)?
    };
    for (dw, c) in inc.dw.iter().zip(&model.chi) {
        if *dw != 0.0 {
            out.axpy(*dw, c);
        }
    }
    Ok(out)
}

/// Smallest constants for which the four noise inequalities hold over the
/// sampled states (non-squared form, derivative bounds maximised over
/// `|alpha| <= s`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseBoundsReport {
    pub samples: usize,
    pub s: u32,
    pub growth: f64,
    pub growth_derivative: f64,
    pub lipschitz: f64,
    pub lipschitz_derivative: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub bound: f64,
    pub pass: bool,
}

impl NoiseBoundsReport {
    pub fn max_constant(&self) -> f64 {
        self.growth.max(self.growth_derivative).max(self.lipschitz).max(self.lipschitz_derivative)
    }
}

/// `max_{|alpha|<=s} (sum_k ||D^alpha d_z f_k||^2)^(1/2)` for a family `f_k`.
fn max_derivative_hs(fields: &[SpectralField], s: u32) -> f64 {
    let Some(first) = fields.first() else {
        return 0.0;
    };
    let g = first.grid();
    let mut power = vec![0.0; g.len()];
    for f in fields {
        for (p, c) in power.iter_mut().zip(f.coeffs()) {
            *p += c.norm_sqr();
        }
    }
    let mut best = 0.0f64;
    for a in 0..=s {
        for b in 0..=(s - a) {
            let sum: f64 = power
                .iter()
                .enumerate()
                .filter(|(_, p)| **p != 0.0)
                .map(|(idx, p)| {
                    let (k1, k2) = g.wavevector(idx);
                    k1.powi(2 * a as i32) * k2.powi(2 * b as i32 + 2) * p
                })
                .sum();
            best = best.max(sum.sqrt());
        }
    }
    best
}

fn hs_family(fields: &[SpectralField]) -> f64 {
    fields.iter().map(|f| f.l2_norm().powi(2)).sum::<f64>().sqrt()
}

fn noise_columns(model: &NoiseModel, u: &SpectralField, with_chi: bool) -> Result<Vec<SpectralField>> {
    let up = u.to_physical()?;
    model
        .psi_phys
        .iter()
        .zip(&model.chi)
        .map(|(p, c)| {
            let prod = p.zip_map(&up, |a, b| a * b)?;
            let mut f = forward_transform(&prod, Parity::Even)?;
            if with_chi {
                f.axpy(1.0, c);
            }
            Ok(f)
        })
        .collect()
}

/// Samples random `u, u#` in `H` over several amplitude decades and measures
/// the constants, passing against `2 (kappa1 + kappa2)` with the kappas
/// taken in `W^{s+1,inf}`.
pub fn verify_noise_bounds(model: &NoiseModel, s: u32, sample_count: usize, rng: &mut PathRng) -> Result<NoiseBoundsReport> {
    if sample_count < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 samples, got {sample_count}")));
    }
    let g = model.grid;
    let (kappa1, kappa2) = model.descriptor.declared_kappas(s + 1);
    let mut rep = NoiseBoundsReport {
        samples: sample_count,
        s,
        growth: 0.0,
        growth_derivative: 0.0,
        lipschitz: 0.0,
        lipschitz_derivative: 0.0,
        kappa1,
        kappa2,
        bound: 2.0 * (kappa1 + kappa2),
        pass: false,
    };
    let max_mode = 8usize;
    for _ in 0..sample_count {
        let amp = 10f64.powf(rng.inner().random_range(-2.0..1.0));
        let u = random_h_field(g, rng.inner(), amp, 2.0, max_mode);
        let damp = amp * 10f64.powf(rng.inner().random_range(-3.0..0.0));
        let du = random_h_field(g, rng.inner(), damp, 2.0, max_mode);
        let us = VelocityState::new(u.clone(), 0.0)?;
        let ds = VelocityState::new(du.clone(), 0.0)?;

        let cols = noise_columns(model, &u, true)?;
        rep.growth = rep.growth.max(hs_family(&cols) / (1.0 + u.l2_norm()));
        rep.growth_derivative = rep.growth_derivative.max(max_derivative_hs(&cols, s) / (1.0 + ds_norm(&us, s)?));

        // sigma(u) - sigma(u#) = sigma_psi(u - u#)
        let diff = noise_columns(model, &du, false)?;
        let dn = du.l2_norm();
        if dn > 0.0 {
            rep.lipschitz = rep.lipschitz.max(hs_family(&diff) / dn);
            rep.lipschitz_derivative = rep.lipschitz_derivative.max(max_derivative_hs(&diff, s) / ds_norm(&ds, s)?);
        }
    }
    rep.pass = rep.max_constant() <= rep.bound;
    Ok(rep)
}
