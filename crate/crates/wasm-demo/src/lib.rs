//! Browser front end: one noisy path drawn as a heatmap of `d_zz u`, the
//! cut-off profiles, and the Galerkin residual against the projection radius.

use hydrostat::dynamics::{em_step, SimConfig, Stepper, Variant};
use hydrostat::experiments::{galerkin_cancellation_demo, product_bandwidth, InitialSpec, NoiseSpec, Spectrum};
use hydrostat::fields::VelocityState;
use hydrostat::norms::Band;
use hydrostat::regularize::{theta, CutoffFamily, CutoffSpec};
use hydrostat::spectral::{Axis, Grid, TWO_PI};
use hydrostat::stochastic::{NoiseModel, PathRng};
use hydrostat::Result;
use wasm_bindgen::prelude::*;

fn js(e: hydrostat::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn random_state(n: usize, seed: u64, shear: f64) -> Result<VelocityState> {
    let spec = InitialSpec::Random {
        amplitude: 1e-3,
        spectrum: Spectrum::Exponential { decay: 1.5 },
        max_mode: 4,
        shear,
    };
    spec.build(Grid::square(n)?, seed, 0)
}

/// One path of the inviscid modified system with the default noise envelope.
pub struct Explorer {
    cfg: SimConfig,
    model: NoiseModel,
    u0: VelocityState,
    state: VelocityState,
    rng: PathRng,
}

impl Explorer {
    pub fn new(n: usize, seed: u64, shear: f64, noise: f64, dt: f64) -> Result<Self> {
        let grid = Grid::square(n)?;
        let mut cfg = SimConfig::new(Variant::EulerModified, grid, dt, 1.0);
        cfg.seed = seed;
        cfg.rho = 1e12;
        cfg.band = Band::new(0.05, 0.2)?;
        cfg.validate()?;
        let model = NoiseSpec::Envelope { k: 4, kappa1: noise, kappa2: noise }.build(grid, cfg.s)?;
        let u0 = random_state(n, seed, shear)?;
        Ok(Explorer { state: u0.clone(), u0, model, rng: PathRng::new(seed, 0), cfg })
    }

    pub fn advance(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            let t = self.state.time() + self.cfg.dt;
            let out = em_step(&self.state, &self.u0, &self.cfg, &self.model, &mut self.rng)?;
            self.state = out.state.with_time(t);
        }
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.state.time()
    }

    /// `d_zz u` on the grid, `values[i * nz + j]` at `(x_i, z_j)`.
    pub fn curvature(&self) -> Result<Vec<f64>> {
        Ok(self.state.u().derivative(Axis::Z, 2).to_physical()?.values().to_vec())
    }

    /// `[theta_rho, theta_kappa, deviation]`.
    pub fn cutoffs(&self) -> Result<[f64; 3]> {
        let c = Stepper::new(&self.cfg, &self.model, &self.u0)?.cutoffs(&self.state)?;
        Ok([c.theta_rho, c.theta_kappa, c.deviation])
    }

    pub fn kappa(&self) -> f64 {
        self.cfg.kappa
    }
}

/// `theta` on `samples` points of `[0, 1.25 radius]`.
pub fn theta_profile(radius: f64, exponential: bool, samples: usize) -> Result<Vec<f64>> {
    let family = if exponential { CutoffFamily::Exponential } else { CutoffFamily::Quintic };
    let spec = CutoffSpec::new(radius, family)?;
    let last = samples.max(2) - 1;
    Ok((0..=last).map(|i| theta(1.25 * radius * i as f64 / last as f64, &spec)).collect())
}

/// `(n, residual)` pairs for projection radii from `2 pi` past the product bandwidth.
pub fn galerkin_sweep(n_grid: usize, seed: u64, s: u32) -> Result<Vec<(f64, f64)>> {
    let u = random_state(n_grid, seed, 1.0)?;
    let bw = product_bandwidth(&u);
    let mut out = Vec::new();
    let mut n = TWO_PI;
    while n <= bw + TWO_PI {
        out.push((n, galerkin_cancellation_demo(&u, s, n, 0.1)?.residual));
        n += 0.5 * TWO_PI;
    }
    Ok(out)
}

#[wasm_bindgen]
pub struct PathExplorer {
    inner: Explorer,
}

#[wasm_bindgen]
impl PathExplorer {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, seed: u32, shear: f64, noise: f64, dt: f64) -> std::result::Result<PathExplorer, JsValue> {
        Explorer::new(n, seed as u64, shear, noise, dt).map(|inner| PathExplorer { inner }).map_err(js)
    }

    pub fn advance(&mut self, steps: usize) -> std::result::Result<(), JsValue> {
        self.inner.advance(steps).map_err(js)
    }

    pub fn time(&self) -> f64 {
        self.inner.time()
    }

    pub fn kappa(&self) -> f64 {
        self.inner.kappa()
    }

    pub fn curvature(&self) -> std::result::Result<Vec<f64>, JsValue> {
        self.inner.curvature().map_err(js)
    }

    pub fn cutoffs(&self) -> std::result::Result<Vec<f64>, JsValue> {
        self.inner.cutoffs().map(|c| c.to_vec()).map_err(js)
    }
}

#[wasm_bindgen]
pub fn theta_curve(radius: f64, exponential: bool, samples: usize) -> std::result::Result<Vec<f64>, JsValue> {
    theta_profile(radius, exponential, samples).map_err(js)
}

/// Flattened `[n0, r0, n1, r1, ...]`.
#[wasm_bindgen]
pub fn galerkin_residuals(n_grid: usize, seed: u32, s: u32) -> std::result::Result<Vec<f64>, JsValue> {
    galerkin_sweep(n_grid, seed as u64, s).map(|v| v.into_iter().flat_map(|(n, r)| [n, r]).collect()).map_err(js)
}
