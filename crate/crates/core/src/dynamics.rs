//! Drift and diffusion of the cut-off systems, the Euler-Maruyama stepper,
//! and stopping-time detection.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{h_residual, project_to_h, VelocityState};
use crate::norms::{
    ds_norm_report, dskappa_norm, linf_norm, rayleigh_monitor, Band, NormReport, RayleighReport, WeightMode,
    MAX_SOBOLEV_INDEX,
};
use crate::regularize::{theta, CutoffFamily, CutoffSpec};
use crate::spectral::{product_sum, Axis, Grid, Parity, SpectralField, TWO_PI};
use crate::stochastic::{apply_noise, sample_increment, NoiseModel, PathRng, WienerIncrement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Inviscid, both cut-offs.
    EulerModified,
    /// Inviscid plus artificial viscosity `(1/n) Laplacian`.
    EulerApprox,
    /// Vertical viscosity `nu d_zz` inside the cut-offs.
    NseModified,
    /// Vertical viscosity plus artificial horizontal viscosity `(1/n) d_xx`.
    NseApprox,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::EulerModified, Variant::EulerApprox, Variant::NseModified, Variant::NseApprox];

    pub fn is_euler(self) -> bool {
        matches!(self, Variant::EulerModified | Variant::EulerApprox)
    }

    pub fn is_approx(self) -> bool {
        matches!(self, Variant::EulerApprox | Variant::NseApprox)
    }

    pub fn min_s(self) -> u32 {
        if self.is_euler() {
            6
        } else {
            7
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::EulerModified => "euler_modified",
            Variant::EulerApprox => "euler_approx",
            Variant::NseModified => "nse_modified",
            Variant::NseApprox => "nse_approx",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearTreatment {
    Explicit,
    /// Exact integration of the linear part, mode by mode.
    #[default]
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingFlavor {
    /// `||u||_{D} >= rho/2` or deviation `>= kappa/2`.
    #[default]
    Eta,
    /// Weighted norm `>= 2 + initial` or deviation `>= kappa/4`.
    #[serde(rename = "tau_jt")]
    TauJT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub variant: Variant,
    #[serde(default)]
    pub nu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_visc: Option<u32>,
    pub rho: f64,
    pub kappa: f64,
    pub s: u32,
    pub dt: f64,
    #[serde(rename = "t_final")]
    pub horizon: f64,
    pub grid: Grid,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub linear_treatment: LinearTreatment,
    #[serde(default)]
    pub cutoff_family: CutoffFamily,
    #[serde(default)]
    pub band: Band,
    #[serde(default)]
    pub stopping: StoppingFlavor,
    #[serde(default = "default_true")]
    pub halt_on_stop: bool,
    /// Record the weighted norm at every step (always on for `tau_jt`).
    #[serde(default)]
    pub record_weighted: bool,
    /// Weighted norms error when `d_z v < kappa` on the band instead of flooring.
    #[serde(default)]
    pub strict_weight: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
}

fn default_true() -> bool {
    true
}

impl SimConfig {
    /// A valid configuration with the given essentials; everything else at defaults.
    pub fn new(variant: Variant, grid: Grid, dt: f64, horizon: f64) -> Self {
        SimConfig {
            variant,
            nu: if variant.is_euler() { 0.0 } else { 0.01 },
            n_visc: if variant.is_approx() { Some(32) } else { None },
            rho: 1e6,
            kappa: 0.1,
            s: variant.min_s(),
            dt,
            horizon,
            grid,
            seed: 0,
            linear_treatment: LinearTreatment::default(),
            cutoff_family: CutoffFamily::default(),
            band: Band::DEFAULT,
            stopping: StoppingFlavor::default(),
            halt_on_stop: true,
            record_weighted: false,
            strict_weight: false,
            snapshot_every: None,
        }
    }

    /// Index of the D-norm inside `theta_rho`: `s-1` inviscid, `s-2` viscous.
    pub fn cutoff_norm_index(&self) -> u32 {
        if self.variant.is_euler() {
            self.s - 1
        } else {
            self.s - 2
        }
    }

    pub fn nu_eff(&self) -> f64 {
        self.nu + self.n_visc.map_or(0.0, |n| 1.0 / n as f64)
    }

    /// `0.5 / (nu_eff k_max^2)` for the explicit treatment.
    pub fn stability_budget(&self) -> f64 {
        let kx = TWO_PI * self.grid.band_x() as f64;
        let kz = TWO_PI * self.grid.band_z() as f64;
        let nu = self.nu_eff();
        if nu == 0.0 {
            f64::INFINITY
        } else {
            0.5 / (nu * (kx * kx + kz * kz))
        }
    }

    pub fn rho_spec(&self) -> CutoffSpec {
        CutoffSpec { radius: self.rho, family: self.cutoff_family }
    }

    pub fn kappa_spec(&self) -> CutoffSpec {
        CutoffSpec { radius: self.kappa, family: self.cutoff_family }
    }

    pub fn weight_mode(&self) -> WeightMode {
        if self.strict_weight {
            WeightMode::Strict { kappa: self.kappa, band: self.band }
        } else {
            WeightMode::Floored { floor: self.kappa }
        }
    }

    pub fn records_weighted(&self) -> bool {
        self.record_weighted || self.stopping == StoppingFlavor::TauJT
    }

    /// Symbol `lambda(k)` of the dissipative operator, `L u = -lambda u`.
    pub fn linear_symbol(&self, k1: f64, k2: f64) -> f64 {
        let inv_n = self.n_visc.map_or(0.0, |n| 1.0 / n as f64);
        match self.variant {
            Variant::EulerModified => 0.0,
            Variant::EulerApprox => inv_n * (k1 * k1 + k2 * k2),
            Variant::NseModified => self.nu * k2 * k2,
            Variant::NseApprox => inv_n * k1 * k1 + self.nu * k2 * k2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        Grid::new(self.grid.nx(), self.grid.nz())?;
        let v = self.variant;
        if v.is_euler() && self.nu != 0.0 {
            return bad(format!("{} requires nu = 0, got {}", v.name(), self.nu));
        }
        if !v.is_euler() && !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad(format!("{} requires nu > 0, got {}", v.name(), self.nu));
        }
        match (v.is_approx(), self.n_visc) {
            (true, None) => return bad(format!("{} requires n_visc", v.name())),
            (true, Some(0)) => return bad("n_visc must be a positive integer".into()),
            (false, Some(_)) => return bad(format!("n_visc is meaningless for {}", v.name())),
            _ => {}
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if !(self.kappa > 0.0 && self.kappa < 0.5) {
            return bad(format!("kappa must lie in (0, 1/2), got {}", self.kappa));
        }
        if self.s < v.min_s() {
            return bad(format!("{} requires s >= {}, got {}", v.name(), v.min_s(), self.s));
        }
        if self.s > MAX_SOBOLEV_INDEX {
            return bad(format!("s must not exceed {MAX_SOBOLEV_INDEX}, got {}", self.s));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return bad(format!("t_final must be finite and nonnegative, got {}", self.horizon));
        }
        if self.snapshot_every == Some(0) {
            return bad("snapshot_every must be positive".into());
        }
        self.band.validate().map_err(|_| Error::InvalidConfig(format!("empty band [{}, {}]", self.band.lo, self.band.hi)))?;
        if self.linear_treatment == LinearTreatment::Explicit {
            let budget = self.stability_budget();
            if self.dt > budget {
                return Err(Error::StabilityBudget { dt: self.dt, budget });
            }
        }
        Ok(())
    }

    /// Step count and the time after step `i`; the last step is shortened to hit `t_final`.
    pub fn time_grid(&self) -> Vec<f64> {
        let n = ((self.horizon / self.dt) - 1e-9).ceil().max(0.0) as usize;
        (1..=n).map(|i| if i == n { self.horizon } else { i as f64 * self.dt }).collect()
    }
}

/// Cut-off arguments and values for one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffValues {
    pub theta_rho: f64,
    pub theta_kappa: f64,
    /// D-norm at the cut-off index.
    pub norm: f64,
    /// Grid maximum of `|d_zz u - d_zz u0|`.
    pub deviation: f64,
}

impl CutoffValues {
    pub fn product(&self) -> f64 {
        self.theta_rho * self.theta_kappa
    }
}

/// Everything needed to advance one path from a fixed initial state.
pub struct Stepper<'a> {
    cfg: &'a SimConfig,
    model: &'a NoiseModel,
    u0: VelocityState,
    u0_dzz: SpectralField,
    lambda: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(cfg: &'a SimConfig, model: &'a NoiseModel, u0: &VelocityState) -> Result<Self> {
        cfg.validate()?;
        let g = cfg.grid;
        if model.grid() != g {
            return Err(Error::ShapeMismatch { expected: g.shape(), found: model.grid().shape() });
        }
        if u0.grid() != g {
            return Err(Error::ShapeMismatch { expected: g.shape(), found: u0.grid().shape() });
        }
        let lambda = (0..g.len())
            .map(|idx| {
                let (k1, k2) = g.wavevector(idx);
                cfg.linear_symbol(k1, k2)
            })
            .collect();
        Ok(Stepper { cfg, model, u0: u0.clone(), u0_dzz: u0.u().derivative(Axis::Z, 2), lambda })
    }

    pub fn initial(&self) -> &VelocityState {
        &self.u0
    }

    pub fn cutoffs(&self, state: &VelocityState) -> Result<CutoffValues> {
        let norm = ds_norm_report(state, self.cfg.cutoff_norm_index())?.value;
        let deviation = linf_norm(&state.u().derivative(Axis::Z, 2).sub(&self.u0_dzz))?;
        Ok(CutoffValues {
            theta_rho: theta(norm, &self.cfg.rho_spec()),
            theta_kappa: theta(deviation, &self.cfg.kappa_spec()),
            norm,
            deviation,
        })
    }

    /// `P_H(u d_x u + w d_z u)`.
    pub fn nonlinear(&self, state: &VelocityState) -> Result<SpectralField> {
        let u = state.u().to_physical()?;
        let ux = state.u().derivative(Axis::X, 1).to_physical()?;
        let w = state.w().to_physical()?;
        let uz = state.v().to_physical()?;
        let n = product_sum(self.cfg.grid, Parity::Even, &[(&u, &ux), (&w, &uz)])?;
        Ok(project_to_h(&n))
    }

    fn linear_term(&self, u: &SpectralField) -> SpectralField {
        let mut out = u.clone();
        out.scale_modes(&self.lambda);
        out
    }

    /// Full drift `-theta theta P_H(u d_x u + w d_z u - L u)`.
    pub fn drift(&self, state: &VelocityState) -> Result<SpectralField> {
        let c = self.cutoffs(state)?;
        self.drift_with(state, c.product())
    }

    fn drift_with(&self, state: &VelocityState, tt: f64) -> Result<SpectralField> {
        if tt == 0.0 {
            return Ok(SpectralField::zeros(self.cfg.grid, Parity::Even));
        }
        let mut d = self.nonlinear(state)?;
        d.axpy(1.0, &self.linear_term(state.u()));
        Ok(d.scale(-tt))
    }

    /// `theta theta P_H sigma(u) dW`.
    pub fn diffusion(&self, state: &VelocityState, inc: &WienerIncrement) -> Result<SpectralField> {
        let c = self.cutoffs(state)?;
        self.diffusion_with(state, inc, c.product())
    }

    fn diffusion_with(&self, state: &VelocityState, inc: &WienerIncrement, tt: f64) -> Result<SpectralField> {
        if tt == 0.0 || self.model.is_zero() {
            return Ok(SpectralField::zeros(self.cfg.grid, Parity::Even));
        }
        Ok(project_to_h(&apply_noise(state.u(), inc, self.model)?).scale(tt))
    }

    /// One Euler-Maruyama step of length `inc.dt` with a given increment.
    pub fn step(&self, state: &VelocityState, inc: &WienerIncrement) -> Result<StepOutput> {
        let cutoffs = self.cutoffs(state)?;
        let tt = cutoffs.product();
        let dt = inc.dt;
        let t = state.time() + dt;
        if tt == 0.0 {
            return Ok(StepOutput { state: state.with_time(t), cutoffs, increment: inc.clone() });
        }
        let mut next = state.u().clone();
        next.axpy(-dt * tt, &self.nonlinear(state)?);
        next.axpy(1.0, &self.diffusion_with(state, inc, tt)?);
        match self.cfg.linear_treatment {
            LinearTreatment::Explicit => next.axpy(-dt * tt, &self.linear_term(state.u())),
            LinearTreatment::Exponential => {
                if self.lambda.iter().any(|&l| l != 0.0) {
                    let decay: Vec<f64> = self.lambda.iter().map(|l| (-dt * tt * l).exp()).collect();
                    next.scale_modes(&decay);
                }
            }
        }
        if next.coeffs().iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::NonFinite("time step"));
        }
        let next = project_to_h(&next);
        debug_assert_eq!(h_residual(&next), 0.0);
        Ok(StepOutput { state: VelocityState::new(next, t)?, cutoffs, increment: inc.clone() })
    }

    pub fn step_random(&self, state: &VelocityState, dt: f64, rng: &mut PathRng) -> Result<StepOutput> {
        let inc = sample_increment(dt, self.model.len(), rng)?;
        self.step(state, &inc)
    }

    pub(crate) fn sample(&self, state: &VelocityState) -> Result<Sample> {
        let cutoffs = self.cutoffs(state)?;
        let norm = ds_norm_report(state, self.cfg.cutoff_norm_index())?;
        let weighted = if self.cfg.records_weighted() {
            Some(dskappa_norm(state, self.cfg.s, self.cfg.weight_mode())?)
        } else {
            None
        };
        let rayleigh = rayleigh_monitor(state, self.cfg.kappa, self.cfg.band)?;
        Ok(Sample { t: state.time(), cutoffs, norm, weighted, rayleigh })
    }
}

pub struct StepOutput {
    pub state: VelocityState,
    /// Cut-offs evaluated on the state the step started from.
    pub cutoffs: CutoffValues,
    pub increment: WienerIncrement,
}

/// Drift of the cut-off system at `state`, with `v0` taken from `u0`.
pub fn drift(state: &VelocityState, u0: &VelocityState, cfg: &SimConfig) -> Result<SpectralField> {
    let zero = NoiseModel::zero(cfg.grid, 0);
    Stepper::new(cfg, &zero, u0)?.drift(state)
}

pub fn diffusion(
    state: &VelocityState,
    u0: &VelocityState,
    inc: &WienerIncrement,
    model: &NoiseModel,
    cfg: &SimConfig,
) -> Result<SpectralField> {
    Stepper::new(cfg, model, u0)?.diffusion(state, inc)
}

/// One step with a freshly drawn increment of length `cfg.dt`.
pub fn em_step(
    state: &VelocityState,
    u0: &VelocityState,
    cfg: &SimConfig,
    model: &NoiseModel,
    rng: &mut PathRng,
) -> Result<StepOutput> {
    Stepper::new(cfg, model, u0)?.step_random(state, cfg.dt, rng)
}

pub fn em_step_with_increment(
    state: &VelocityState,
    u0: &VelocityState,
    cfg: &SimConfig,
    model: &NoiseModel,
    inc: &WienerIncrement,
) -> Result<StepOutput> {
    Stepper::new(cfg, model, u0)?.step(state, inc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCause {
    NormThreshold,
    RayleighDrift,
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingEvent {
    pub time: f64,
    pub cause: StopCause,
    pub value_at_trigger: f64,
}

/// Diagnostics of one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub cutoffs: CutoffValues,
    pub norm: NormReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighted: Option<NormReport>,
    pub rayleigh: RayleighReport,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub config: SimConfig,
    pub seed: u64,
    pub stream: u64,
    /// Diagnostics of the initial state (time 0); not part of the series.
    pub initial: Sample,
    pub times: Vec<f64>,
    pub norm_series: Vec<NormReport>,
    pub weighted_series: Vec<NormReport>,
    pub cutoff_series: Vec<CutoffValues>,
    pub rayleigh_series: Vec<RayleighReport>,
    pub stopping: Option<StoppingEvent>,
    pub snapshots: Vec<VelocityState>,
    pub final_state: VelocityState,
    pub warnings: Vec<String>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            t: self.times[i],
            cutoffs: self.cutoff_series[i],
            norm: self.norm_series[i].clone(),
            weighted: self.weighted_series.get(i).cloned(),
            rayleigh: self.rayleigh_series[i].clone(),
        }
    }

    /// Initial sample followed by every step.
    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        std::iter::once(self.initial.clone()).chain((0..self.len()).map(|i| self.sample(i)))
    }

    /// Largest deviation `||d_zz u - d_zz u0||` over the recorded times.
    pub fn max_deviation(&self) -> f64 {
        self.cutoff_series.iter().map(|c| c.deviation).fold(self.initial.cutoffs.deviation, f64::max)
    }

    fn push(&mut self, s: Sample) {
        self.times.push(s.t);
        self.norm_series.push(s.norm);
        if let Some(w) = s.weighted {
            self.weighted_series.push(w);
        }
        self.cutoff_series.push(s.cutoffs);
        self.rayleigh_series.push(s.rayleigh);
    }

    /// Header line, one line per step, and a closing stopping line.
    pub fn write_ndjson<W: Write>(&self, out: &mut W) -> Result<()> {
        #[derive(Serialize)]
        struct Header<'a> {
            record: &'static str,
            seed: u64,
            stream: u64,
            config: &'a SimConfig,
            initial: &'a Sample,
            warnings: &'a [String],
        }
        #[derive(Serialize)]
        struct Step<'a> {
            record: &'static str,
            #[serde(flatten)]
            sample: &'a Sample,
        }
        #[derive(Serialize)]
        struct Stop<'a> {
            record: &'static str,
            stopping: &'a Option<StoppingEvent>,
        }
        let header = Header {
            record: "header",
            seed: self.seed,
            stream: self.stream,
            config: &self.config,
            initial: &self.initial,
            warnings: &self.warnings,
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for i in 0..self.len() {
            let s = self.sample(i);
            writeln!(out, "{}", serde_json::to_string(&Step { record: "step", sample: &s })?)?;
        }
        writeln!(out, "{}", serde_json::to_string(&Stop { record: "stop", stopping: &self.stopping })?)?;
        Ok(())
    }
}

pub(crate) fn check_sample(s: &Sample, cfg: &SimConfig, flavor: StoppingFlavor, initial_weighted: Option<f64>) -> Option<StoppingEvent> {
    let ev = |cause, value| Some(StoppingEvent { time: s.t, cause, value_at_trigger: value });
    match flavor {
        StoppingFlavor::Eta => {
            if s.cutoffs.norm >= 0.5 * cfg.rho {
                return ev(StopCause::NormThreshold, s.cutoffs.norm);
            }
            if s.cutoffs.deviation >= 0.5 * cfg.kappa {
                return ev(StopCause::RayleighDrift, s.cutoffs.deviation);
            }
        }
        StoppingFlavor::TauJT => {
            if let (Some(w), Some(w0)) = (s.weighted.as_ref(), initial_weighted) {
                if w.value >= 2.0 + w0 {
                    return ev(StopCause::NormThreshold, w.value);
                }
            }
            if s.cutoffs.deviation >= 0.25 * cfg.kappa {
                return ev(StopCause::RayleighDrift, s.cutoffs.deviation);
            }
        }
    }
    None
}

/// First recorded time (initial state included) at which a threshold of
/// `flavor` is met, else a horizon event at the last recorded time (capped at `t_final`).
pub fn detect_stopping(record: &TrajectoryRecord, cfg: &SimConfig, flavor: StoppingFlavor) -> Option<StoppingEvent> {
    let w0 = record.initial.weighted.as_ref().map(|w| w.value);
    if let Some(e) = record.samples().find_map(|s| check_sample(&s, cfg, flavor, w0)) {
        return Some(e);
    }
    let last = record.times.last().copied().unwrap_or(0.0).min(cfg.horizon);
    Some(StoppingEvent { time: last, cause: StopCause::Horizon, value_at_trigger: last })
}

/// One path on RNG stream `stream` of `cfg.seed`.
pub fn simulate_path(cfg: &SimConfig, model: &NoiseModel, initial: &VelocityState, stream: u64) -> Result<TrajectoryRecord> {
    let stepper = Stepper::new(cfg, model, &initial.with_time(0.0))?;
    let mut warnings = Vec::new();
    let rep = rayleigh_monitor(initial, (2.0 * cfg.kappa).min(0.499_999), cfg.band)?;
    if !rep.pass {
        warnings.push(format!(
            "initial data fails the 2 kappa Rayleigh monitor on [{}, {}] (min {:.4e}, max {:.4e})",
            cfg.band.lo, cfg.band.hi, rep.min_val, rep.max_val
        ));
    }
    let mut state = stepper.initial().clone();
    let init = stepper.sample(&state)?;
    let w0 = init.weighted.as_ref().map(|w| w.value);
    let mut rec = TrajectoryRecord {
        config: cfg.clone(),
        seed: cfg.seed,
        stream,
        initial: init,
        times: Vec::new(),
        norm_series: Vec::new(),
        weighted_series: Vec::new(),
        cutoff_series: Vec::new(),
        rayleigh_series: Vec::new(),
        stopping: None,
        snapshots: Vec::new(),
        final_state: state.clone(),
        warnings,
    };
    rec.stopping = check_sample(&rec.initial, cfg, cfg.stopping, w0);
    if rec.stopping.is_some() && cfg.halt_on_stop {
        return Ok(rec);
    }
    let mut rng = PathRng::new(cfg.seed, stream);
    let mut t_prev = 0.0;
    for (i, t) in cfg.time_grid().into_iter().enumerate() {
        let inc = sample_increment(t - t_prev, model.len(), &mut rng)?;
        let out = stepper.step(&state, &inc)?;
        state = out.state.with_time(t);
        t_prev = t;
        let s = stepper.sample(&state)?;
        if rec.stopping.is_none() {
            rec.stopping = check_sample(&s, cfg, cfg.stopping, w0);
        }
        rec.push(s);
        if cfg.snapshot_every.is_some_and(|k| (i + 1) % k == 0) {
            rec.snapshots.push(state.clone());
        }
        if rec.stopping.is_some() && cfg.halt_on_stop {
            break;
        }
    }
    if rec.stopping.is_none() {
        rec.stopping = Some(StoppingEvent { time: t_prev, cause: StopCause::Horizon, value_at_trigger: t_prev });
    }
    rec.final_state = state;
    Ok(rec)
}

/// Steps one path on stream `stream` all the way to `t_final`, ignoring
/// stopping events. `visit` sees the initial state first, then every new state.
/// The increments are the ones [`simulate_path`] draws for the same stream.
pub fn drive_path(
    cfg: &SimConfig,
    model: &NoiseModel,
    initial: &VelocityState,
    stream: u64,
    mut visit: impl FnMut(&Stepper<'_>, &VelocityState) -> Result<()>,
) -> Result<VelocityState> {
    let stepper = Stepper::new(cfg, model, &initial.with_time(0.0))?;
    let mut state = stepper.initial().clone();
    visit(&stepper, &state)?;
    let mut rng = PathRng::new(cfg.seed, stream);
    let mut t_prev = 0.0;
    for t in cfg.time_grid() {
        let inc = sample_increment(t - t_prev, model.len(), &mut rng)?;
        state = stepper.step(&state, &inc)?.state.with_time(t);
        t_prev = t;
        visit(&stepper, &state)?;
    }
    Ok(state)
}

pub fn simulate(cfg: &SimConfig, model: &NoiseModel, initial: &VelocityState) -> Result<TrajectoryRecord> {
    simulate_path(cfg, model, initial, 0)
}

/// `m` paths on streams `0..m`, collected in path order.
pub fn simulate_ensemble(
    cfg: &SimConfig,
    model: &NoiseModel,
    initial: impl Fn(usize) -> Result<VelocityState> + Sync,
    m: usize,
) -> Result<Vec<TrajectoryRecord>> {
    (0..m).into_par_iter().map(|p| simulate_path(cfg, model, &initial(p)?, p as u64)).collect()
}
