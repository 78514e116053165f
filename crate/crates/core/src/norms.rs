//! Sobolev-type norms on the torus and the local Rayleigh monitor.
//!
//! Unweighted norms are evaluated coefficient-wise by Parseval. The weighted
//! norms replace the pure top-order x-derivative term by
//! `|| d_x^s v / sqrt(w) ||` where `w` is the weight field (`d_z v` of the
//! field itself or of a reference field). That term is not a polynomial
//! quantity, so it is integrated on a grid refined by
//! [`QUADRATURE_REFINEMENT`] in each direction.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::VelocityState;
use crate::spectral::{Axis, Grid, PhysicalField, SpectralField};

pub const MAX_SOBOLEV_INDEX: u32 = 12;

/// Refinement factor of the quadrature grid for weighted terms.
pub const QUADRATURE_REFINEMENT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    L2,
    Hs,
    HsWeighted,
    Ds,
    DsKappa,
    CrossWeighted,
}

/// Closed interval of heights `lo <= z <= hi` inside one period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    /// Interior of the physical channel `(0, 1/2)` used when nothing else is configured.
    pub const DEFAULT: Band = Band { lo: 0.05, hi: 0.45 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let b = Band { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.hi <= self.lo || self.lo < 0.0 || self.hi > 1.0 {
            return Err(Error::EmptyBand { lo: self.lo, hi: self.hi });
        }
        Ok(())
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.lo && z <= self.hi
    }
}

impl Default for Band {
    fn default() -> Self {
        Band::DEFAULT
    }
}

/// How the weight `d_z v` enters the weighted norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightMode {
    /// The weight must be at least `kappa` on the band; off the band it is
    /// floored at `kappa`.
    Strict { kappa: f64, band: Band },
    /// The weight is `max(d_z v, floor)` everywhere.
    Floored { floor: f64 },
}

impl WeightMode {
    fn validate(&self) -> Result<()> {
        match *self {
            WeightMode::Strict { kappa, band } => {
                band.validate()?;
                if !(kappa > 0.0 && kappa.is_finite()) {
                    return Err(Error::InvalidArgument(format!("strict weight needs kappa > 0, got {kappa}")));
                }
            }
            WeightMode::Floored { floor } => {
                if !(floor > 0.0 && floor.is_finite()) {
                    return Err(Error::InvalidArgument(format!("weight floor must be positive, got {floor}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub kind: NormKind,
    pub s: u32,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_mode: Option<WeightMode>,
    pub components: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

impl NormReport {
    fn plain(kind: NormKind, s: u32, value: f64) -> Self {
        NormReport { kind, s, value, weight_mode: None, components: BTreeMap::new(), time: None }
    }

    pub fn at_time(mut self, t: f64) -> Self {
        self.time = Some(t);
        self
    }

    pub fn component(&self, key: &str) -> Option<f64> {
        self.components.get(key).copied()
    }

    /// One NDJSON line (no trailing newline).
    pub fn to_ndjson(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayleighReport {
    pub kappa: f64,
    pub min_val: f64,
    pub max_val: f64,
    pub violated_fraction: f64,
    pub monitored_band: Band,
    pub points: usize,
    pub pass: bool,
}

impl RayleighReport {
    fn from_values(kappa: f64, band: Band, values: impl IntoIterator<Item = f64>) -> Self {
        let (mut lo, mut hi, mut bad, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0usize, 0usize);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
            if v < kappa || v > 1.0 / kappa {
                bad += 1;
            }
            n += 1;
        }
        let pass = n > 0 && lo >= kappa && hi <= 1.0 / kappa;
        RayleighReport {
            kappa,
            min_val: lo,
            max_val: hi,
            violated_fraction: if n == 0 { 0.0 } else { bad as f64 / n as f64 },
            monitored_band: band,
            points: n,
            pass,
        }
    }
}

fn check_s(s: u32) -> Result<()> {
    if s > MAX_SOBOLEV_INDEX {
        return Err(Error::SobolevIndexTooLarge { s, max: MAX_SOBOLEV_INDEX });
    }
    Ok(())
}

/// `sum_{|alpha| <= s} k1^(2 alpha1) k2^(2 alpha2)`.
pub fn sobolev_multiplier(k1: f64, k2: f64, s: u32) -> f64 {
    let (p, q) = (k1 * k1, k2 * k2);
    let mut total = 0.0;
    let mut pa = 1.0;
    for a in 0..=s {
        let mut qb = 1.0;
        for _ in 0..=(s - a) {
            total += pa * qb;
            qb *= q;
        }
        pa *= p;
    }
    total
}

fn weighted_sum(f: &SpectralField, mult: impl Fn(f64, f64) -> f64) -> f64 {
    let g = f.grid();
    f.coeffs()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.re != 0.0 || c.im != 0.0)
        .map(|(idx, c)| {
            let (k1, k2) = g.wavevector(idx);
            mult(k1, k2) * c.norm_sqr()
        })
        .sum()
}

thread_local! {
    static MULTIPLIERS: RefCell<HashMap<(Grid, u32), Rc<Vec<f64>>>> = RefCell::new(HashMap::new());
}

fn multiplier_table(grid: Grid, s: u32) -> Rc<Vec<f64>> {
    MULTIPLIERS.with(|m| {
        m.borrow_mut()
            .entry((grid, s))
            .or_insert_with(|| {
                Rc::new(
                    (0..grid.len())
                        .map(|idx| {
                            let (k1, k2) = grid.wavevector(idx);
                            sobolev_multiplier(k1, k2, s)
                        })
                        .collect(),
                )
            })
            .clone()
    })
}

/// `||f||_{H^s} = sqrt(sum_{|alpha|<=s} ||D^alpha f||^2)`.
pub fn hs_norm(f: &SpectralField, s: u32) -> Result<f64> {
    check_s(s)?;
    let table = multiplier_table(f.grid(), s);
    Ok(f.coeffs().iter().zip(table.iter()).map(|(c, m)| m * c.norm_sqr()).sum::<f64>().sqrt())
}

/// The `H^s` sum without the pure `d_x^s` term.
fn hs_sq_without_top_x(f: &SpectralField, s: u32) -> f64 {
    weighted_sum(f, |k1, k2| sobolev_multiplier(k1, k2, s) - k1.powi(2 * s as i32))
}

/// Grid maximum of `|f|`.
pub fn linf_norm(f: &SpectralField) -> Result<f64> {
    Ok(f.to_physical()?.max_abs())
}

/// `max |f - g|` over the grid. A grid maximum can only underestimate the
/// supremum of the trigonometric polynomial.
pub fn linf_distance(f: &SpectralField, g: &SpectralField) -> Result<f64> {
    if f.grid() != g.grid() {
        return Err(Error::ShapeMismatch { expected: f.grid().shape(), found: g.grid().shape() });
    }
    linf_norm(&f.sub(g))
}

/// Effective weight on the quadrature grid, or the strict-mode violation.
fn effective_weight(dzv: &PhysicalField, mode: WeightMode) -> Result<Vec<f64>> {
    mode.validate()?;
    let g = dzv.grid();
    match mode {
        WeightMode::Floored { floor } => Ok(dzv.values().iter().map(|&w| w.max(floor)).collect()),
        WeightMode::Strict { kappa, band } => {
            let mut out = Vec::with_capacity(g.len());
            let mut banded = Vec::new();
            let mut violated = false;
            for i in 0..g.nx() {
                for j in 0..g.nz() {
                    let w = dzv.get(i, j);
                    if band.contains(g.z(j)) {
                        banded.push(w);
                        violated |= w < kappa;
                        out.push(w);
                    } else {
                        out.push(w.max(kappa));
                    }
                }
            }
            if banded.is_empty() {
                return Err(Error::EmptyBand { lo: band.lo, hi: band.hi });
            }
            if violated {
                return Err(Error::RayleighViolation(Box::new(RayleighReport::from_values(kappa, band, banded))));
            }
            Ok(out)
        }
    }
}

fn weighted_impl(d: &SpectralField, v_ref: &SpectralField, s: u32, mode: WeightMode, kind: NormKind) -> Result<NormReport> {
    check_s(s)?;
    if d.grid() != v_ref.grid() {
        return Err(Error::ShapeMismatch { expected: d.grid().shape(), found: v_ref.grid().shape() });
    }
    let r = QUADRATURE_REFINEMENT;
    let dzv = v_ref.derivative(Axis::Z, 1).to_physical_refined(r)?;
    let weight = effective_weight(&dzv, mode)?;
    let top = d.derivative(Axis::X, s).to_physical_refined(r)?;

    let n = weight.len() as f64;
    let (mut wsq, mut psq) = (0.0, 0.0);
    let (mut inv_min, mut inv_max) = (f64::INFINITY, 0.0f64);
    for (t, w) in top.values().iter().zip(&weight) {
        let t2 = t * t;
        wsq += t2 / w;
        psq += t2;
        let inv = 1.0 / w.sqrt();
        inv_min = inv_min.min(inv);
        inv_max = inv_max.max(inv);
    }
    let (wsq, psq) = (wsq / n, psq / n);
    let lower = hs_sq_without_top_x(d, s);
    let value = (lower + wsq).sqrt();
    if !value.is_finite() {
        return Err(Error::NonFinite("weighted norm"));
    }
    let mut components = BTreeMap::new();
    components.insert("lower_order".to_string(), lower.sqrt());
    components.insert("top_x_weighted".to_string(), wsq.sqrt());
    components.insert("top_x_plain".to_string(), psq.sqrt());
    components.insert("inv_sqrt_weight_min".to_string(), inv_min);
    components.insert("inv_sqrt_weight_max".to_string(), inv_max);
    Ok(NormReport { kind, s, value, weight_mode: Some(mode), components, time: None })
}

/// `||v||_{H~^s}`: all `|alpha| <= s` terms except `d_x^s`, plus
/// `|| d_x^s v / sqrt(d_z v) ||`.
pub fn weighted_hs_norm(v: &SpectralField, s: u32, mode: WeightMode) -> Result<NormReport> {
    weighted_impl(v, v, s, mode, NormKind::HsWeighted)
}

/// Weighted norm of `d` whose top x-derivative term is weighted by
/// `d_z v_ref` of a second field.
pub fn cross_weighted_norm(d: &SpectralField, v_ref: &SpectralField, s: u32, mode: WeightMode) -> Result<NormReport> {
    weighted_impl(d, v_ref, s, mode, NormKind::CrossWeighted)
}

/// `||u||_s = ||u|| + ||d_z u||_{H^s}`.
pub fn ds_norm(u: &VelocityState, s: u32) -> Result<f64> {
    Ok(u.u().l2_norm() + hs_norm(u.v(), s)?)
}

pub fn ds_norm_report(u: &VelocityState, s: u32) -> Result<NormReport> {
    let l2 = u.u().l2_norm();
    let hv = hs_norm(u.v(), s)?;
    let mut r = NormReport::plain(NormKind::Ds, s, l2 + hv).at_time(u.time());
    r.components.insert("l2".to_string(), l2);
    r.components.insert("vorticity_hs".to_string(), hv);
    Ok(r)
}

/// `||u||_s~ = ||u|| + ||d_z u||_{H~^s}`.
pub fn dskappa_norm(u: &VelocityState, s: u32, mode: WeightMode) -> Result<NormReport> {
    let inner = weighted_hs_norm(u.v(), s, mode)?;
    let l2 = u.u().l2_norm();
    let mut components = inner.components;
    components.insert("l2".to_string(), l2);
    components.insert("vorticity_weighted".to_string(), inner.value);
    Ok(NormReport {
        kind: NormKind::DsKappa,
        s,
        value: l2 + inner.value,
        weight_mode: Some(mode),
        components,
        time: Some(u.time()),
    })
}

/// Evaluates `d_z v = d_zz u` at the grid points inside the band and on the
/// two band edges, and checks `kappa <= d_z v <= 1/kappa` there.
pub fn rayleigh_monitor(u: &VelocityState, kappa: f64, band: Band) -> Result<RayleighReport> {
    if !(kappa > 0.0 && kappa < 0.5) {
        return Err(Error::InvalidArgument(format!("kappa must lie in (0, 1/2), got {kappa}")));
    }
    band.validate()?;
    Ok(rayleigh_of_field(&u.u().derivative(Axis::Z, 2), kappa, band)?)
}

pub(crate) fn rayleigh_of_field(dzv: &SpectralField, kappa: f64, band: Band) -> Result<RayleighReport> {
    let phys = dzv.to_physical()?;
    let g = dzv.grid();
    let mut vals = Vec::new();
    for j in 0..g.nz() {
        if band.contains(g.z(j)) {
            vals.extend((0..g.nx()).map(|i| phys.get(i, j)));
        }
    }
    vals.extend(dzv.eval_z_line(band.lo));
    vals.extend(dzv.eval_z_line(band.hi));
    Ok(RayleighReport::from_values(kappa, band, vals))
}
