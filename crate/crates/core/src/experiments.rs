//! Diagnostics built on the solver: the cancellation identity and its
//! failure under Galerkin truncation, Cauchy tables over the projection
//! ladder, pathwise uniqueness, Rayleigh preservation and ensemble moments.
//!
//! Every study returns a report that renders to a [`Table`]; an
//! [`ExperimentMeta`] line ties the table to its configuration.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{check_sample, drive_path, SimConfig, Stepper};
use crate::error::{Error, Result};
use crate::fields::snapshot::read_snapshot;
use crate::fields::{project_to_h, random_h_field, random_h_field_with, split_h, vertical_velocity, vorticity, VelocityState};
use crate::norms::{dskappa_norm, hs_norm, linf_norm, rayleigh_monitor, MAX_SOBOLEV_INDEX};
use crate::regularize::{spectral_projection, ProjectionSpec};
use crate::spectral::{product, raw_projection, Axis, Grid, Parity, PhysicalField, SpectralField, TWO_PI};
use crate::stochastic::{hex, sample_increment, NoiseDescriptor, NoiseModel, PathRng, TrigMode, DEFAULT_MODES};

/// Smallest ensemble accepted by [`ensemble_moments`].
pub const MIN_MOMENT_ENSEMBLE: usize = 8;

/// Gaussian tail factor in the Rayleigh overshoot constant.
pub const JUMP_TAIL_FACTOR: f64 = 8.0;

const INITIAL_SALT: u64 = 0x1a17_1a15_0000_0001;
const PERTURBATION_SALT: u64 = 0x1a17_1a15_0000_0002;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    #[default]
    Zero,
    /// The default envelope of `k` low modes at the run's `s`.
    Envelope {
        #[serde(default = "default_modes")]
        k: usize,
        kappa1: f64,
        kappa2: f64,
    },
    Explicit {
        psi: Vec<TrigMode>,
        chi: Vec<TrigMode>,
    },
}

fn default_modes() -> usize {
    DEFAULT_MODES
}

impl NoiseSpec {
    pub fn descriptor(&self, s: u32) -> NoiseDescriptor {
        match self {
            NoiseSpec::Zero => NoiseDescriptor::zero(0),
            NoiseSpec::Envelope { k, kappa1, kappa2 } => NoiseDescriptor::envelope(*k, s, *kappa1, *kappa2),
            NoiseSpec::Explicit { psi, chi } => NoiseDescriptor { psi: psi.clone(), chi: chi.clone() },
        }
    }

    pub fn build(&self, grid: Grid, s: u32) -> Result<NoiseModel> {
        NoiseModel::new(grid, self.descriptor(s))
    }
}

/// Spectral law of the standard deviation of random initial data, as a function of `|m|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum Spectrum {
    /// `exp(-|m| / decay)`
    Exponential { decay: f64 },
    /// `(1 + |m|)^-exponent`
    Power { exponent: f64 },
}

impl Spectrum {
    pub fn sd(&self, r: f64) -> f64 {
        match *self {
            Spectrum::Exponential { decay } => (-r / decay).exp(),
            Spectrum::Power { exponent } => (1.0 + r).powf(-exponent),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// `u = -a cos(2 pi z) / (2 pi)^2`, so that `d_zz u = a cos(2 pi z)`.
    Shear { amplitude: f64 },
    /// Sum of trigonometric modes plus an optional shear.
    Modes {
        modes: Vec<TrigMode>,
        #[serde(default)]
        shear: f64,
    },
    /// Gaussian member of `H`, drawn afresh for every path.
    Random {
        amplitude: f64,
        spectrum: Spectrum,
        max_mode: usize,
        #[serde(default)]
        shear: f64,
    },
    /// A field snapshot (`<path>.bin` and `<path>.json`).
    Snapshot { path: PathBuf },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Shear { amplitude: 1.0 }
    }
}

/// `-a cos(2 pi z) / (2 pi)^2` with a single pair of coefficients.
pub fn shear_field(grid: Grid, amplitude: f64) -> SpectralField {
    let mut f = SpectralField::zeros(grid, Parity::Even);
    if amplitude != 0.0 {
        f.set_mode(0, 1, Complex64::new(-0.5 * amplitude / (TWO_PI * TWO_PI), 0.0)).expect("mode (0, 1) is resolved");
    }
    f
}

impl InitialSpec {
    /// Initial data of path `path`; random data uses a stream derived from `seed`.
    pub fn build(&self, grid: Grid, seed: u64, path: usize) -> Result<VelocityState> {
        let f = match self {
            InitialSpec::Shear { amplitude } => shear_field(grid, *amplitude),
            InitialSpec::Modes { modes, shear } => {
                let mut f = shear_field(grid, *shear);
                for m in modes {
                    f = f.add(&m.to_field(grid)?);
                }
                f
            }
            InitialSpec::Random { amplitude, spectrum, max_mode, shear } => {
                if !(amplitude.is_finite() && *amplitude >= 0.0) {
                    return Err(Error::InvalidConfig(format!("initial amplitude must be nonnegative, got {amplitude}")));
                }
                let mut rng = PathRng::new(seed ^ INITIAL_SALT, path as u64);
                let f = random_h_field_with(grid, rng.inner(), *max_mode, |r| amplitude * spectrum.sd(r));
                f.add(&shear_field(grid, *shear))
            }
            InitialSpec::Snapshot { path } => {
                let (header, f) = read_snapshot(path)?;
                if f.grid() != grid {
                    return Err(Error::ShapeMismatch { expected: grid.shape(), found: (header.nx, header.nz) });
                }
                f
            }
        };
        VelocityState::from_projected(&f, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentParams {
    pub ensemble_size: usize,
    /// Projection radii `j` of the Cauchy ladder, strictly increasing.
    pub ladder: Vec<f64>,
    /// High-`j` reference run appended to the ladder.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    /// Bound `M` on the initial data: `||u0||_s~ < M/2` is enforced.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_bound: Option<f64>,
    pub n_visc_ladder: Vec<u32>,
    pub p: u32,
    /// Size of the initial perturbation in the uniqueness check.
    pub delta: f64,
    /// Seed of the second run in the uniqueness check (defaults to the run seed).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_b: Option<u64>,
    /// Orders `s` of the cancellation check.
    pub orders: Vec<u32>,
    /// Projection radius of the Galerkin demo (defaults to half the product bandwidth).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub galerkin_n: Option<f64>,
    /// Sobolev index of the Cauchy distances (defaults to the run's `s`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_index: Option<u32>,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        ExperimentParams {
            ensemble_size: 1,
            ladder: Vec::new(),
            reference: None,
            m_bound: None,
            n_visc_ladder: vec![8, 32, 128],
            p: 2,
            delta: 1e-6,
            seed_b: None,
            orders: vec![1, 2, 3],
            galerkin_n: None,
            norm_index: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub experiment: ExperimentParams,
}

impl ExperimentConfig {
    pub fn new(sim: SimConfig) -> Self {
        ExperimentConfig {
            sim,
            noise: NoiseSpec::default(),
            initial: InitialSpec::default(),
            experiment: ExperimentParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.sim.validate()?;
        let x = &self.experiment;
        if x.ensemble_size == 0 {
            return bad("ensemble_size must be positive".into());
        }
        if x.ladder.iter().any(|j| !(j.is_finite() && *j > 0.0)) {
            return bad("ladder entries must be positive".into());
        }
        if x.ladder.windows(2).any(|w| w[0] >= w[1]) {
            return bad("ladder must be strictly increasing".into());
        }
        if let Some(r) = x.reference {
            if !(r.is_finite() && x.ladder.last().is_none_or(|&l| r > l)) {
                return bad(format!("reference {r} must exceed every ladder entry"));
            }
        }
        if let Some(m) = x.m_bound {
            if !(m.is_finite() && m > 0.0) {
                return bad(format!("m_bound must be positive, got {m}"));
            }
        }
        if x.n_visc_ladder.contains(&0) {
            return bad("n_visc_ladder entries must be positive".into());
        }
        if x.p != 2 && x.p != 4 {
            return bad(format!("p must be 2 or 4, got {}", x.p));
        }
        if !(x.delta.is_finite() && x.delta >= 0.0) {
            return bad(format!("delta must be nonnegative, got {}", x.delta));
        }
        if x.orders.iter().chain(x.norm_index.iter()).any(|&s| s > MAX_SOBOLEV_INDEX) {
            return bad(format!("Sobolev orders must not exceed {MAX_SOBOLEV_INDEX}"));
        }
        if let Some(n) = x.galerkin_n {
            ProjectionSpec::new(n)?;
        }
        self.noise_model()?;
        Ok(())
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        self.noise.build(self.sim.grid, self.sim.s)
    }

    /// Initial data of path `path`, checked against `m_bound`.
    pub fn initial_state(&self, path: usize) -> Result<VelocityState> {
        let u0 = self.initial.build(self.sim.grid, self.sim.seed, path)?;
        if let Some(m) = self.experiment.m_bound {
            let n = dskappa_norm(&u0, self.sim.s, self.sim.weight_mode())?.value;
            if n >= 0.5 * m {
                return Err(Error::InvalidConfig(format!("initial data of path {path} has norm {n:e} >= M/2 = {:e}", 0.5 * m)));
            }
        }
        Ok(u0)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex(&Sha256::digest(&json))
    }
}

/// Numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|v| v.is_finite())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One NDJSON line describing an experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMeta {
    pub record: String,
    pub experiment: String,
    pub config_hash: String,
    pub noise_hash: String,
    pub seed: u64,
    pub streams: Vec<u64>,
    pub summary: BTreeMap<String, f64>,
}

impl ExperimentMeta {
    pub fn new(experiment: &str, xcfg: &ExperimentConfig, streams: Vec<u64>) -> Self {
        ExperimentMeta {
            record: "meta".to_string(),
            experiment: experiment.to_string(),
            config_hash: xcfg.content_hash(),
            noise_hash: xcfg.noise.descriptor(xcfg.sim.s).content_hash(),
            seed: xcfg.sim.seed,
            streams,
            summary: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.summary.insert(key.to_string(), value);
        self
    }

    pub fn to_ndjson(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Constants `(c, C)` with `c ||u||_s <= ||u||_s~ <= C ||u||_s` when the
/// weight `d_z v` stays in `[kappa, 1/kappa]`.
pub fn norm_equivalence_constants(kappa: f64) -> (f64, f64) {
    (kappa.sqrt(), 1.0 / kappa.sqrt())
}

/// Smallest cut-off radius with `rho >= (1 + C)(M / c + 4)`.
pub fn rho_requirement(kappa: f64, m: f64) -> f64 {
    let (c, big) = norm_equivalence_constants(kappa);
    (1.0 + big) * (m / c + 4.0)
}

fn normalised(value: f64, scale: f64) -> f64 {
    value.abs() / (scale + f64::MIN_POSITIVE)
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs[..n].iter().zip(&ys[..n]).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs[..n].iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Slope of `ln y` against `x` over the points with `y > 0`.
pub fn fit_exponential_rate(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = xs.iter().zip(ys).filter(|(_, y)| **y > 0.0).map(|(x, y)| (*x, y.ln())).unzip();
    fit_slope(&x, &y)
}

/// `max_t ln(y(t) / y(0)) / t` over `t > 0`; `None` unless `y(0) > 0` and every `y > 0`.
pub fn gronwall_rate(ts: &[f64], ys: &[f64]) -> Option<f64> {
    let y0 = *ys.first()?;
    if !(y0 > 0.0) || ys.iter().any(|y| !(*y > 0.0)) {
        return None;
    }
    ts.iter().zip(ys).filter(|(t, _)| **t > 0.0).map(|(t, y)| (y / y0).ln() / t).reduce(f64::max)
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Normalised `|int d_x^s w d_x^s v|` for a state in `H`.
pub fn cancellation_check(u: &VelocityState, s: u32) -> f64 {
    let a = u.w().derivative(Axis::X, s);
    let b = u.v().derivative(Axis::X, s);
    normalised(a.inner(&b), a.l2_norm() * b.l2_norm())
}

/// [`cancellation_check`] for an arbitrary even field. Modes outside `H`
/// (`k2 = 0`, `k1 != 0`) make `w = -int_0^z d_x u` grow linearly in z on
/// `[0, 1)`; that part enters through the exact z-moments of the Fourier modes.
pub fn cancellation_check_field(u: &SpectralField, s: u32) -> Result<f64> {
    let split = split_h(u);
    let a = vertical_velocity(&split.in_h)?.derivative(Axis::X, s);
    let b = vorticity(u).derivative(Axis::X, s);
    // w = w_H + z alpha(x) with alpha = -d_x c
    let alpha = split.removed.derivative(Axis::X, s + 1).scale(-1.0);
    let g = u.grid();
    let moment = |m2: i64| {
        if m2 == 0 {
            Complex64::new(0.5, 0.0)
        } else {
            Complex64::new(0.0, -1.0 / (TWO_PI * m2 as f64))
        }
    };
    let (mut cross_b, mut cross_a) = (0.0, 0.0);
    for idx in 0..g.len() {
        let (m1, m2) = g.modes(idx);
        let al = alpha.coeff(m1, 0);
        if al.re == 0.0 && al.im == 0.0 {
            continue;
        }
        let mz = moment(m2);
        cross_b += (al.conj() * b.coeffs()[idx] * mz).re;
        cross_a += (al.conj() * a.coeffs()[idx] * mz).re;
    }
    let integral = a.inner(&b) + cross_b;
    let w_sq = a.l2_norm().powi(2) + 2.0 * cross_a + alpha.l2_norm().powi(2) / 3.0;
    Ok(normalised(integral, w_sq.max(0.0).sqrt() * b.l2_norm()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GalerkinReport {
    pub s: u32,
    pub n: f64,
    /// `int P_n(d_x^s w d_z v) d_x^s v / d_z v`
    pub projected: f64,
    /// `int d_x^s w d_z v d_x^s v / d_z v`
    pub reference: f64,
    pub residual: f64,
}

/// Largest `|k|` present in the products formed by [`galerkin_cancellation_demo`].
pub fn product_bandwidth(u: &VelocityState) -> f64 {
    let g = u.grid();
    let (mut a1, mut a2) = (0i64, 0i64);
    for (idx, c) in u.u().coeffs().iter().enumerate() {
        if c.re != 0.0 || c.im != 0.0 {
            let (m1, m2) = g.modes(idx);
            a1 = a1.max(m1.abs());
            a2 = a2.max(m2.abs());
        }
    }
    TWO_PI * ((4 * (a1 * a1 + a2 * a2)) as f64).sqrt()
}

/// Compares the top-order integral with the product `d_x^s w d_z v` passed
/// through `P_n` against the same integral without the projection. The
/// weight `d_z v` is floored at `floor`. Products are formed on a grid
/// refined twice, where they are resolved without aliasing.
pub fn galerkin_cancellation_demo(u: &VelocityState, s: u32, n: f64, floor: f64) -> Result<GalerkinReport> {
    let proj = ProjectionSpec::new(n)?;
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::InvalidArgument(format!("weight floor must be positive, got {floor}")));
    }
    let f = u.w().derivative(Axis::X, s).to_physical_refined(2)?;
    let d = u.v().derivative(Axis::Z, 1).to_physical_refined(2)?;
    let h = u.v().derivative(Axis::X, s).to_physical_refined(2)?;
    let fd = f.zip_map(&d, |a, b| a * b)?;
    let q = h.zip_map(&d, |a, b| a / b.max(floor))?;
    let pfd = raw_projection(&fd, |m1, m2| proj.keeps(TWO_PI * m1 as f64, TWO_PI * m2 as f64));
    let mean_prod = |a: &PhysicalField, b: &PhysicalField| {
        a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum::<f64>() / a.values().len() as f64
    };
    let projected = mean_prod(&pfd, &q);
    let reference = mean_prod(&fd, &q);
    let scale = (mean_prod(&fd, &fd) * mean_prod(&q, &q)).sqrt();
    Ok(GalerkinReport { s, n, projected, reference, residual: normalised(projected - reference, scale) })
}

/// Pairwise distances over the projection ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyReport {
    /// Ladder radii followed by the reference radius, if any.
    pub levels: Vec<f64>,
    pub ladder_len: usize,
    pub norm_index: u32,
    pub paths: usize,
    /// `mean[j][k]`: ensemble mean of `sup_{t <= tau_jk} ||u^j - u^k||`.
    pub mean: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    /// `stopping_times[path][level]`, capped at `t_final`.
    pub stopping_times: Vec<Vec<f64>>,
}

impl CauchyReport {
    /// `sup_{j >= k} mean[j][k]` for each ladder entry `k`.
    pub fn column_maxima(&self) -> Vec<f64> {
        (0..self.ladder_len)
            .map(|k| (k..self.levels.len()).map(|j| self.mean[j][k]).fold(0.0, f64::max))
            .collect()
    }

    pub fn column_maxima_decreasing(&self) -> bool {
        self.column_maxima().windows(2).all(|w| w[1] < w[0])
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.levels.len();
        (0..n).all(|j| (0..n).all(|k| self.mean[j][k].to_bits() == self.mean[k][j].to_bits()))
    }

    pub fn diagonal_is_zero(&self) -> bool {
        (0..self.levels.len()).all(|j| self.mean[j][j] == 0.0)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new("cauchy", &["j", "k", "mean_sup_distance", "stderr", "column_max_k"]);
        let maxima = self.column_maxima();
        for (j, &lj) in self.levels.iter().enumerate() {
            for (k, &lk) in self.levels.iter().enumerate() {
                let cm = maxima.get(k).copied().unwrap_or(f64::NAN);
                t.push(vec![lj, lk, self.mean[j][k], self.stderr[j][k], if cm.is_nan() { 0.0 } else { cm }]);
            }
        }
        t
    }
}

struct Lane<'a> {
    stepper: Stepper<'a>,
    state: VelocityState,
    rng: PathRng,
    w0: Option<f64>,
    stop: Option<f64>,
}

fn ds_distance(a: &VelocityState, b: &VelocityState, s: u32) -> Result<f64> {
    let d = a.u().sub(b.u());
    Ok(d.l2_norm() + hs_norm(&vorticity(&d), s)?)
}

fn cauchy_path(xcfg: &ExperimentConfig, model: &NoiseModel, levels: &[f64], path: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let cfg = &xcfg.sim;
    let s = xcfg.experiment.norm_index.unwrap_or(cfg.s);
    let u0 = xcfg.initial_state(path)?;
    let mut lanes = Vec::with_capacity(levels.len());
    for &j in levels {
        let uj = VelocityState::new(spectral_projection(u0.u(), j)?, 0.0)?;
        let stepper = Stepper::new(cfg, model, &uj)?;
        let sample = stepper.sample(&uj)?;
        let w0 = sample.weighted.as_ref().map(|w| w.value);
        let stop = check_sample(&sample, cfg, cfg.stopping, w0).map(|e| e.time);
        lanes.push(Lane { stepper, state: uj, rng: PathRng::new(cfg.seed, path as u64), w0, stop });
    }
    let l = lanes.len();
    let mut dist = vec![vec![0.0; l]; l];
    let accumulate = |dist: &mut Vec<Vec<f64>>, lanes: &[Lane], live: &[bool]| -> Result<()> {
        for a in 0..l {
            for b in (a + 1)..l {
                if live[a] && live[b] {
                    let d = ds_distance(&lanes[a].state, &lanes[b].state, s)?;
                    dist[a][b] = dist[a][b].max(d);
                    dist[b][a] = dist[a][b];
                }
            }
        }
        Ok(())
    };
    accumulate(&mut dist, &lanes, &vec![true; l])?;
    let mut t_prev = 0.0;
    for t in cfg.time_grid() {
        let live: Vec<bool> = lanes.iter().map(|ln| ln.stop.is_none()).collect();
        if !live.iter().any(|&x| x) {
            break;
        }
        for ln in lanes.iter_mut().filter(|ln| ln.stop.is_none()) {
            let inc = sample_increment(t - t_prev, model.len(), &mut ln.rng)?;
            ln.state = ln.stepper.step(&ln.state, &inc)?.state.with_time(t);
            let sample = ln.stepper.sample(&ln.state)?;
            ln.stop = check_sample(&sample, cfg, cfg.stopping, ln.w0).map(|e| e.time);
        }
        accumulate(&mut dist, &lanes, &live)?;
        t_prev = t;
    }
    let taus = lanes.iter().map(|ln| ln.stop.unwrap_or(cfg.horizon).min(cfg.horizon)).collect();
    Ok((dist, taus))
}

/// Runs every ladder level (and the reference) from `P_j u0` on common noise
/// and tabulates `sup_{t <= tau_j ^ tau_k} ||u^j - u^k||_s` per pair.
pub fn cauchy_study(xcfg: &ExperimentConfig) -> Result<CauchyReport> {
    xcfg.validate()?;
    let x = &xcfg.experiment;
    let mut levels = x.ladder.clone();
    levels.extend(x.reference);
    if levels.len() < 2 {
        return Err(Error::InvalidConfig("the Cauchy study needs a ladder of at least two levels".into()));
    }
    let model = xcfg.noise_model()?;
    let m = x.ensemble_size;
    let per_path: Vec<(Vec<Vec<f64>>, Vec<f64>)> =
        (0..m).into_par_iter().map(|p| cauchy_path(xcfg, &model, &levels, p)).collect::<Result<_>>()?;
    let l = levels.len();
    let mut mean = vec![vec![0.0; l]; l];
    let mut stderr = vec![vec![0.0; l]; l];
    for j in 0..l {
        for k in 0..l {
            let vals: Vec<f64> = per_path.iter().map(|(d, _)| d[j][k]).collect();
            (mean[j][k], stderr[j][k]) = mean_and_stderr(&vals);
        }
    }
    Ok(CauchyReport {
        levels,
        ladder_len: x.ladder.len(),
        norm_index: x.norm_index.unwrap_or(xcfg.sim.s),
        paths: m,
        mean,
        stderr,
        stopping_times: per_path.into_iter().map(|(_, t)| t).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub delta: f64,
    pub seed_a: u64,
    pub seed_b: u64,
    pub times: Vec<f64>,
    /// `||u^1 - u^2||` at every recorded time, the initial time first.
    pub difference: Vec<f64>,
    /// Whether the two runs agree bit for bit at every step.
    pub bitwise_identical: bool,
    pub max_difference: f64,
    /// Smallest `C` with `||u^1 - u^2||(t) <= ||u^1 - u^2||(0) e^{C t}` at every recorded time.
    pub fitted_rate: Option<f64>,
}

impl UniquenessReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new("uniqueness", &["t", "difference"]);
        for (&ti, &d) in self.times.iter().zip(&self.difference) {
            t.push(vec![ti, d]);
        }
        t
    }
}

/// Fixed direction of the initial perturbation, unit L2 norm.
fn perturbation(grid: Grid, seed: u64) -> SpectralField {
    let mut rng = PathRng::new(seed ^ PERTURBATION_SALT, 0);
    let e = project_to_h(&random_h_field(grid, rng.inner(), 1.0, 2.0, 4));
    let n = e.l2_norm();
    e.scale(1.0 / n)
}

/// Two runs of path 0 in lockstep: the second starts from `u0 + delta e`
/// and uses `seed_b`. Both run to `t_final` through their cut-offs.
pub fn uniqueness_check(xcfg: &ExperimentConfig) -> Result<UniquenessReport> {
    xcfg.validate()?;
    let cfg = &xcfg.sim;
    let x = &xcfg.experiment;
    let model = xcfg.noise_model()?;
    let u0 = xcfg.initial_state(0)?;
    let mut u0b = u0.u().clone();
    if x.delta > 0.0 {
        u0b = u0b.add(&perturbation(cfg.grid, cfg.seed).scale(x.delta));
    }
    let u0b = VelocityState::new(u0b, 0.0)?;
    let seed_b = x.seed_b.unwrap_or(cfg.seed);
    let cfg_b = SimConfig { seed: seed_b, ..cfg.clone() };
    let sa = Stepper::new(cfg, &model, &u0)?;
    let sb = Stepper::new(&cfg_b, &model, &u0b)?;
    let (mut a, mut b) = (u0.clone(), u0b);
    let (mut ra, mut rb) = (PathRng::new(cfg.seed, 0), PathRng::new(seed_b, 0));
    let mut times = vec![0.0];
    let mut difference = vec![a.u().sub(b.u()).l2_norm()];
    let mut identical = a.bitwise_eq(&b);
    let mut t_prev = 0.0;
    for t in cfg.time_grid() {
        let ia = sample_increment(t - t_prev, model.len(), &mut ra)?;
        let ib = sample_increment(t - t_prev, model.len(), &mut rb)?;
        a = sa.step(&a, &ia)?.state.with_time(t);
        b = sb.step(&b, &ib)?.state.with_time(t);
        identical &= a.bitwise_eq(&b);
        times.push(t);
        difference.push(a.u().sub(b.u()).l2_norm());
        t_prev = t;
    }
    let max_difference = difference.iter().copied().fold(0.0, f64::max);
    let fitted_rate = gronwall_rate(&times, &difference);
    Ok(UniquenessReport {
        delta: x.delta,
        seed_a: cfg.seed,
        seed_b,
        times,
        difference,
        bitwise_identical: identical,
        max_difference,
        fitted_rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayleighRun {
    pub dt: f64,
    /// Per path: largest `||d_zz u - d_zz u0||_inf` over time.
    pub per_path: Vec<f64>,
    pub max_deviation: f64,
    /// Ensemble mean of `max(0, deviation - kappa)`.
    pub mean_overshoot: f64,
    pub max_overshoot: f64,
    /// Fraction of paths on which `theta_kappa` dropped below 1.
    pub activated_fraction: f64,
    /// `kappa + C sqrt(dt)`.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayleighStudy {
    pub kappa: f64,
    pub paths: usize,
    /// The constant `C` of the bound `kappa + C sqrt(dt)`.
    pub jump_constant: f64,
    pub coarse: RayleighRun,
    pub fine: RayleighRun,
    /// `coarse.mean_overshoot / fine.mean_overshoot`.
    pub shrink_factor: f64,
}

impl RayleighStudy {
    pub fn pass(&self) -> bool {
        self.coarse.pass && self.fine.pass
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(
            "rayleigh",
            &["dt", "max_deviation", "mean_overshoot", "max_overshoot", "activated_fraction", "bound", "pass"],
        );
        for r in [&self.coarse, &self.fine] {
            t.push(vec![
                r.dt,
                r.max_deviation,
                r.mean_overshoot,
                r.max_overshoot,
                r.activated_fraction,
                r.bound,
                if r.pass { 1.0 } else { 0.0 },
            ]);
        }
        t
    }
}

/// `J tail * sum_k ||d_zz P_H(psi_k u0 + chi_k)||_inf + sqrt(dt) ||d_zz drift(u0)||_inf`:
/// the one-step change of `d_zz u` near `u0` with every Gaussian draw below the tail factor.
pub fn rayleigh_jump_constant(cfg: &SimConfig, model: &NoiseModel, u0: &VelocityState) -> Result<f64> {
    let mut sum = 0.0;
    for (psi, chi) in model.psi().iter().zip(model.chi()) {
        let g = project_to_h(&product(psi, u0.u())?.add(chi));
        sum += linf_norm(&g.derivative(Axis::Z, 2))?;
    }
    let drift = Stepper::new(cfg, model, u0)?.drift(u0)?;
    Ok(JUMP_TAIL_FACTOR * sum + cfg.dt.sqrt() * linf_norm(&drift.derivative(Axis::Z, 2))?)
}

fn rayleigh_run(xcfg: &ExperimentConfig, cfg: &SimConfig, model: &NoiseModel, jump: f64) -> Result<RayleighRun> {
    let m = xcfg.experiment.ensemble_size;
    let per: Vec<(f64, bool)> = (0..m)
        .into_par_iter()
        .map(|p| {
            let u0 = xcfg.initial_state(p)?;
            let (mut dev, mut hit) = (0.0f64, false);
            drive_path(cfg, model, &u0, p as u64, |st, state| {
                let c = st.cutoffs(state)?;
                dev = dev.max(c.deviation);
                hit |= c.theta_kappa < 1.0;
                Ok(())
            })?;
            Ok((dev, hit))
        })
        .collect::<Result<_>>()?;
    let per_path: Vec<f64> = per.iter().map(|p| p.0).collect();
    let over: Vec<f64> = per_path.iter().map(|d| (d - cfg.kappa).max(0.0)).collect();
    let max_deviation = per_path.iter().copied().fold(0.0, f64::max);
    let bound = cfg.kappa + jump * cfg.dt.sqrt();
    Ok(RayleighRun {
        dt: cfg.dt,
        max_deviation,
        mean_overshoot: over.iter().sum::<f64>() / m as f64,
        max_overshoot: over.iter().copied().fold(0.0, f64::max),
        activated_fraction: per.iter().filter(|p| p.1).count() as f64 / m as f64,
        bound,
        pass: max_deviation <= bound,
        per_path,
    })
}

/// Runs the ensemble at `dt` and at `dt / 2` and records how far the
/// deviation `||d_zz u - d_zz u0||_inf` gets beyond `kappa`.
pub fn rayleigh_preservation_study(xcfg: &ExperimentConfig) -> Result<RayleighStudy> {
    xcfg.validate()?;
    let cfg = &xcfg.sim;
    let model = xcfg.noise_model()?;
    let m = xcfg.experiment.ensemble_size;
    for p in 0..m {
        let u0 = xcfg.initial_state(p)?;
        let rep = rayleigh_monitor(&u0, (2.0 * cfg.kappa).min(0.499_999), cfg.band)?;
        if !rep.pass {
            return Err(Error::InvalidArgument(format!(
                "initial data of path {p} fails the 2 kappa Rayleigh monitor (min {:e}, max {:e})",
                rep.min_val, rep.max_val
            )));
        }
    }
    let jump = (0..m)
        .map(|p| rayleigh_jump_constant(cfg, &model, &xcfg.initial_state(p)?))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let coarse = rayleigh_run(xcfg, cfg, &model, jump)?;
    let fine_cfg = SimConfig { dt: 0.5 * cfg.dt, ..cfg.clone() };
    let fine = rayleigh_run(xcfg, &fine_cfg, &model, jump)?;
    let shrink_factor = if fine.mean_overshoot > 0.0 {
        coarse.mean_overshoot / fine.mean_overshoot
    } else if coarse.mean_overshoot > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    Ok(RayleighStudy { kappa: cfg.kappa, paths: m, jump_constant: jump, coarse, fine, shrink_factor })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub p: u32,
    pub paths: usize,
    pub n_visc: Option<u32>,
    pub times: Vec<f64>,
    /// Sample mean of `sup_{t' <= t} ||u||_s~^p`.
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Sample mean of `||u(t)||^2`.
    pub energy_mean: Vec<f64>,
    pub energy_stderr: Vec<f64>,
    /// Slope of `ln mean` against time.
    pub fitted_rate: Option<f64>,
    /// Slope of `energy_mean` against time.
    pub energy_rate: Option<f64>,
}

impl MomentSeries {
    pub fn table(&self) -> Table {
        let mut t = Table::new("moments", &["t", "mean_sup_norm_p", "stderr", "energy_mean", "energy_stderr"]);
        for i in 0..self.times.len() {
            t.push(vec![self.times[i], self.mean[i], self.stderr[i], self.energy_mean[i], self.energy_stderr[i]]);
        }
        t
    }
}

/// `sum_k ||P_H chi_k||^2`, the growth rate of `E ||u||^2` for purely additive
/// noise when the drift vanishes.
pub fn ito_rate(model: &NoiseModel) -> f64 {
    model.chi().iter().map(|c| project_to_h(c).l2_norm().powi(2)).sum()
}

/// Ensemble of `ensemble_size` paths run to `t_final`, recording the running
/// supremum of `||u||_s~^p` and the energy `||u||^2`.
pub fn ensemble_moments(xcfg: &ExperimentConfig, p: u32) -> Result<MomentSeries> {
    xcfg.validate()?;
    if p != 2 && p != 4 {
        return Err(Error::InvalidArgument(format!("p must be 2 or 4, got {p}")));
    }
    let m = xcfg.experiment.ensemble_size;
    if m < MIN_MOMENT_ENSEMBLE {
        return Err(Error::InvalidConfig(format!("ensemble moments need at least {MIN_MOMENT_ENSEMBLE} paths, got {m}")));
    }
    let cfg = &xcfg.sim;
    let model = xcfg.noise_model()?;
    let per: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|path| {
            let u0 = xcfg.initial_state(path)?;
            let (mut sups, mut energy) = (Vec::new(), Vec::new());
            let mut sup = 0.0f64;
            drive_path(cfg, &model, &u0, path as u64, |_, state| {
                let n = dskappa_norm(state, cfg.s, cfg.weight_mode())?.value;
                sup = sup.max(n.powi(p as i32));
                sups.push(sup);
                energy.push(state.u().l2_norm().powi(2));
                Ok(())
            })?;
            Ok((sups, energy))
        })
        .collect::<Result<_>>()?;
    let mut times = vec![0.0];
    times.extend(cfg.time_grid());
    let nt = times.len();
    let (mut mean, mut stderr, mut energy_mean, mut energy_stderr) = (vec![0.0; nt], vec![0.0; nt], vec![0.0; nt], vec![0.0; nt]);
    for i in 0..nt {
        (mean[i], stderr[i]) = mean_and_stderr(&per.iter().map(|(s, _)| s[i]).collect::<Vec<_>>());
        (energy_mean[i], energy_stderr[i]) = mean_and_stderr(&per.iter().map(|(_, e)| e[i]).collect::<Vec<_>>());
    }
    let fitted_rate = fit_exponential_rate(&times, &mean);
    let energy_rate = fit_slope(&times, &energy_mean);
    Ok(MomentSeries { p, paths: m, n_visc: cfg.n_visc, times, mean, stderr, energy_mean, energy_stderr, fitted_rate, energy_rate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub n_values: Vec<u32>,
    pub rates: Vec<f64>,
    /// `(max - min) / min` of the fitted rates.
    pub spread: f64,
    pub series: Vec<MomentSeries>,
}

impl UniformityReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new("uniformity", &["n_visc", "fitted_rate"]);
        for (&n, &r) in self.n_values.iter().zip(&self.rates) {
            t.push(vec![n as f64, r]);
        }
        t
    }
}

/// [`ensemble_moments`] for every `n_visc` of the ladder, on common noise.
pub fn viscosity_uniformity(xcfg: &ExperimentConfig, p: u32) -> Result<UniformityReport> {
    if !xcfg.sim.variant.is_approx() {
        return Err(Error::InvalidConfig(format!(
            "the viscosity ladder needs an approximating variant, got {}",
            xcfg.sim.variant.name()
        )));
    }
    let ladder = &xcfg.experiment.n_visc_ladder;
    if ladder.len() < 2 {
        return Err(Error::InvalidConfig("n_visc_ladder needs at least two entries".into()));
    }
    let mut series = Vec::new();
    for &n in ladder {
        let mut x = xcfg.clone();
        x.sim.n_visc = Some(n);
        series.push(ensemble_moments(&x, p)?);
    }
    let rates: Vec<f64> = series.iter().map(|s| s.fitted_rate.unwrap_or(f64::NAN)).collect();
    let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(UniformityReport { n_values: ladder.clone(), rates, spread: (hi - lo) / lo, series })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Variant;
    use crate::fields::random_h_field;
    use crate::stochastic::XPhase;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Grid {
        Grid::square(n).unwrap()
    }

    fn random_state(g: Grid, seed: u64) -> VelocityState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VelocityState::from_projected(&random_h_field(g, &mut rng, 1.0, 3.0, 8), 0.0).unwrap()
    }

    fn mode(m1: u32, m2: u32, x_phase: XPhase, amplitude: f64) -> TrigMode {
        TrigMode { m1, m2, x_phase, amplitude }
    }

    #[test]
    fn rho_requirement_example() {
        // kappa = 1/4: c = 1/2, C = 2
        assert_relative_eq!(rho_requirement(0.25, 1.0), 3.0 * (2.0 + 4.0), max_relative = 1e-15);
        let (c, big) = norm_equivalence_constants(0.1);
        assert_relative_eq!(c * big, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn weight_in_band_respects_equivalence() {
        // d_z v identically 1/kappa, so only the top term is rescaled
        let g = Grid::square(16).unwrap();
        let kappa = 0.2;
        let f = random_h_field(g, &mut ChaCha8Rng::seed_from_u64(4), 1e-3, 2.0, 3);
        let u = VelocityState::from_projected(&f, 0.0).unwrap();
        let mode = crate::norms::WeightMode::Floored { floor: 1.0 / kappa };
        let ratio = dskappa_norm(&u, 3, mode).unwrap().value / crate::norms::ds_norm(&u, 3).unwrap();
        let (c, big) = norm_equivalence_constants(kappa);
        assert!(ratio >= c && ratio <= big, "ratio {ratio}");
    }

    #[test]
    fn cancellation_on_h() {
        let g = grid(64);
        for seed in 0..5 {
            let u = random_state(g, seed);
            for s in 1..=3 {
                assert!(cancellation_check(&u, s) <= 1e-10);
                assert!(cancellation_check_field(u.u(), s).unwrap() <= 1e-10);
            }
        }
        let shear = VelocityState::new(shear_field(g, 1.0), 0.0).unwrap();
        assert_eq!(cancellation_check(&shear, 2), 0.0);
    }

    /// Simpson quadrature on `[0,1]^2`, with the z factor of `w` written out by hand.
    #[test]
    fn broken_h_matches_quadrature() {
        use std::f64::consts::PI;
        let g = grid(32);
        let beta = 0.8;
        let u = SpectralField::from_fn(g, Parity::Even, |x, z| {
            (2.0 * PI * x).cos() * (2.0 * PI * z).cos()
                + 0.7 * (2.0 * PI * x).sin() * (4.0 * PI * z).cos()
                + beta * (2.0 * PI * x).sin()
        })
        .unwrap();
        let got = cancellation_check_field(&u, 1).unwrap();

        let dxw = |x: f64, z: f64| {
            2.0 * PI * (2.0 * PI * x).cos() * (2.0 * PI * z).sin()
                + 0.7 * PI * (2.0 * PI * x).sin() * (4.0 * PI * z).sin()
                + 4.0 * PI * PI * beta * z * (2.0 * PI * x).sin()
        };
        let dxv = |x: f64, z: f64| {
            4.0 * PI * PI * (2.0 * PI * x).sin() * (2.0 * PI * z).sin()
                - 5.6 * PI * PI * (2.0 * PI * x).cos() * (4.0 * PI * z).sin()
        };
        let (nx, nz) = (64usize, 2000usize);
        let (mut i_wv, mut i_ww, mut i_vv) = (0.0, 0.0, 0.0);
        for a in 0..nx {
            let x = a as f64 / nx as f64;
            for b in 0..=nz {
                let z = b as f64 / nz as f64;
                let wt = if b == 0 || b == nz { 1.0 } else if b % 2 == 1 { 4.0 } else { 2.0 };
                let (p, q) = (dxw(x, z), dxv(x, z));
                i_wv += wt * p * q;
                i_ww += wt * p * p;
                i_vv += wt * q * q;
            }
        }
        let expected = i_wv.abs() / (i_ww * i_vv).sqrt();
        assert!(expected > 0.1, "oracle residual {expected}");
        assert!((got - expected).abs() <= 1e-8 * expected, "{got} vs {expected}");
    }

    #[test]
    fn galerkin_demo_examples() {
        let g = grid(32);
        let base = shear_field(g, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pert = random_h_field(g, &mut rng, 0.002, 1.5, 5);
        let u = VelocityState::from_projected(&base.add(&pert), 0.0).unwrap();
        let bw = product_bandwidth(&u);
        let inactive = galerkin_cancellation_demo(&u, 2, bw, 0.1).unwrap();
        assert!(inactive.residual <= 1e-10, "{}", inactive.residual);
        let half = galerkin_cancellation_demo(&u, 2, 0.5 * bw, 0.1).unwrap();
        assert!(half.residual > 1e-3, "{}", half.residual);
        let flat = VelocityState::new(base, 0.0).unwrap();
        assert_eq!(galerkin_cancellation_demo(&flat, 2, 4.0 * TWO_PI, 0.1).unwrap().residual, 0.0);
    }

    fn xcfg(variant: Variant, n: usize, dt: f64, t: f64) -> ExperimentConfig {
        ExperimentConfig::new(SimConfig::new(variant, grid(n), dt, t))
    }

    #[test]
    fn config_round_trip_and_validation() {
        let mut x = xcfg(Variant::NseModified, 16, 1e-3, 0.1);
        x.noise = NoiseSpec::Envelope { k: 4, kappa1: 0.1, kappa2: 0.1 };
        x.initial = InitialSpec::Random {
            amplitude: 1e-3,
            spectrum: Spectrum::Power { exponent: 6.0 },
            max_mode: 4,
            shear: 1.0,
        };
        x.experiment.ladder = vec![TWO_PI, 2.0 * TWO_PI];
        let json = serde_json::to_string(&x).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, x);
        assert_eq!(back.content_hash(), x.content_hash());
        assert!(x.validate().is_ok());

        let mut y = x.clone();
        y.experiment.ladder = vec![2.0, 1.0];
        assert!(y.validate().is_err());
        let mut y = x.clone();
        y.experiment.reference = Some(1.0);
        assert!(y.validate().is_err());
        let mut y = x.clone();
        y.experiment.p = 3;
        assert!(y.validate().is_err());

        let bad = json.replace("\"max_mode\"", "\"max_modes\"");
        assert!(serde_json::from_str::<ExperimentConfig>(&bad).is_err());
    }

    #[test]
    fn initial_data_and_bound() {
        let mut x = xcfg(Variant::NseModified, 16, 1e-3, 0.1);
        let u = x.initial_state(0).unwrap();
        let dzz = u.u().derivative(Axis::Z, 2).to_physical().unwrap();
        assert!((dzz.get(0, 0) - 1.0).abs() < 1e-12);
        x.experiment.m_bound = Some(1e-6);
        assert!(matches!(x.initial_state(0), Err(Error::InvalidConfig(_))));

        x.experiment.m_bound = None;
        x.initial = InitialSpec::Random {
            amplitude: 1.0,
            spectrum: Spectrum::Exponential { decay: 2.0 },
            max_mode: 3,
            shear: 0.0,
        };
        let a = x.initial_state(0).unwrap();
        let b = x.initial_state(0).unwrap();
        let c = x.initial_state(1).unwrap();
        assert!(a.bitwise_eq(&b));
        assert!(!a.bitwise_eq(&c));

        x.initial = InitialSpec::Modes { modes: vec![mode(1, 1, XPhase::Cos, 0.5)], shear: 0.0 };
        let m = x.initial_state(0).unwrap();
        let phys = m.u().to_physical().unwrap();
        assert!((phys.get(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn table_csv() {
        let mut t = Table::new("x", &["a", "b"]);
        t.push(vec![1.0, 0.25]);
        t.push(vec![-3.0, 1e-300]);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s, "a,b\n1e0,2.5e-1\n-3e0,1e-300\n");
        assert_eq!(t.column("b").unwrap(), vec![0.25, 1e-300]);
    }

    #[test]
    fn slopes() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((fit_slope(&xs, &ys).unwrap() - 2.0).abs() < 1e-12);
        let es: Vec<f64> = xs.iter().map(|x| (0.5 * x).exp()).collect();
        assert!((fit_exponential_rate(&xs, &es).unwrap() - 0.5).abs() < 1e-12);
        assert!(fit_slope(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn cauchy_deterministic() {
        let mut x = xcfg(Variant::NseModified, 32, 2e-3, 0.02);
        x.initial = InitialSpec::Random {
            amplitude: 1e-6,
            spectrum: Spectrum::Power { exponent: 11.0 },
            max_mode: 16,
            shear: 0.0,
        };
        x.experiment.ladder = vec![2.0 * TWO_PI, 4.0 * TWO_PI, 6.0 * TWO_PI];
        x.experiment.reference = Some(12.0 * TWO_PI);
        let rep = cauchy_study(&x).unwrap();
        assert!(rep.diagonal_is_zero());
        assert!(rep.is_symmetric());
        assert!(rep.column_maxima_decreasing(), "{:?}", rep.column_maxima());
        assert!(rep.table().is_finite());
        x.experiment.ladder = vec![TWO_PI];
        x.experiment.reference = None;
        assert!(cauchy_study(&x).is_err());
    }

    #[test]
    fn uniqueness_examples() {
        let mut x = xcfg(Variant::NseModified, 16, 5e-3, 0.1);
        x.noise = NoiseSpec::Envelope { k: 4, kappa1: 0.2, kappa2: 0.2 };
        x.initial = InitialSpec::Random {
            amplitude: 1e-3,
            spectrum: Spectrum::Exponential { decay: 2.0 },
            max_mode: 4,
            shear: 1.0,
        };
        x.experiment.delta = 0.0;
        let same = uniqueness_check(&x).unwrap();
        assert!(same.bitwise_identical);
        assert_eq!(same.max_difference, 0.0);

        x.experiment.seed_b = Some(99);
        let other = uniqueness_check(&x).unwrap();
        assert!(!other.bitwise_identical);
        assert!(other.max_difference > 0.0);
    }

    #[test]
    fn uniqueness_linear_response() {
        let mut x = xcfg(Variant::NseModified, 16, 1e-2, 0.5);
        x.initial = InitialSpec::Random {
            amplitude: 0.005,
            spectrum: Spectrum::Exponential { decay: 2.0 },
            max_mode: 3,
            shear: 1.0,
        };
        x.experiment.delta = 1e-6;
        let a = uniqueness_check(&x).unwrap();
        x.experiment.delta = 1e-7;
        let b = uniqueness_check(&x).unwrap();
        let rate = a.fitted_rate.unwrap();
        let last = *a.difference.last().unwrap();
        let d0 = a.difference[0];
        assert!((d0 - 1e-6).abs() < 1e-18);
        assert!(last <= d0 * (rate * 0.5).exp() * (1.0 + 1e-12), "{last} rate {rate}");
        let ratio = b.difference.last().unwrap() / last;
        assert!((ratio - 0.1).abs() <= 0.02, "{ratio}");
    }

    #[test]
    fn rayleigh_trivial_cases() {
        let mut x = xcfg(Variant::EulerModified, 16, 1e-2, 0.1);
        x.sim.band = crate::norms::Band::new(0.05, 0.2).unwrap();
        x.experiment.ensemble_size = 2;
        let r = rayleigh_preservation_study(&x).unwrap();
        assert_eq!(r.coarse.max_deviation, 0.0);
        assert_eq!(r.fine.max_deviation, 0.0);
        assert!(r.pass());

        x.noise = NoiseSpec::Envelope { k: 4, kappa1: 0.5, kappa2: 0.5 };
        x.sim.rho = 1e-3;
        let r = rayleigh_preservation_study(&x).unwrap();
        assert_eq!(r.coarse.max_deviation, 0.0);
        assert_eq!(r.coarse.activated_fraction, 0.0);

        x.sim.band = crate::norms::Band::DEFAULT;
        assert!(rayleigh_preservation_study(&x).is_err());
    }

    #[test]
    fn moments_frozen_and_guard() {
        let mut x = xcfg(Variant::EulerModified, 16, 1e-2, 0.05);
        x.experiment.ensemble_size = 4;
        assert!(ensemble_moments(&x, 2).is_err());
        x.experiment.ensemble_size = 8;
        assert!(ensemble_moments(&x, 3).is_err());
        let m = ensemble_moments(&x, 2).unwrap();
        assert!(m.mean.windows(2).all(|w| w[0] == w[1]));
        assert!(m.energy_mean.windows(2).all(|w| w[0] == w[1]));
        assert!(m.table().is_finite());
    }

    #[test]
    fn ito_rate_of_single_mode() {
        let g = grid(16);
        let desc = NoiseDescriptor { psi: vec![TrigMode::zero()], chi: vec![mode(0, 2, XPhase::Cos, 3.0)] };
        let model = NoiseModel::new(g, desc).unwrap();
        assert!((ito_rate(&model) - 4.5).abs() < 1e-12);
        let desc = NoiseDescriptor { psi: vec![TrigMode::zero()], chi: vec![mode(2, 0, XPhase::Cos, 3.0)] };
        assert!(ito_rate(&NoiseModel::new(g, desc).unwrap()) < 1e-20);
    }

    #[test]
    fn meta_line() {
        let x = xcfg(Variant::NseModified, 16, 1e-3, 0.1);
        let line = ExperimentMeta::new("cancellation", &x, vec![0]).with("residual", 1e-17).to_ndjson().unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["record"], "meta");
        assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
        assert_eq!(v["summary"]["residual"], 1e-17);
    }
}
