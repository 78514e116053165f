//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.

use std::time::Instant;

use hydrostat::dynamics::{simulate, LinearTreatment, SimConfig, Stepper, StoppingFlavor, Variant};
use hydrostat::experiments::{
    cancellation_check, cauchy_study, ensemble_moments, fit_slope, galerkin_cancellation_demo, ito_rate,
    product_bandwidth, rayleigh_preservation_study, shear_field, viscosity_uniformity, ExperimentConfig, InitialSpec,
    NoiseSpec, Spectrum,
};
use hydrostat::fields::{random_h_field, VelocityState};
use hydrostat::norms::{rayleigh_monitor, weighted_hs_norm, Band, WeightMode};
use hydrostat::regularize::poincare_check;
use hydrostat::spectral::{Grid, TWO_PI};
use hydrostat::stochastic::{verify_noise_bounds, NoiseModel, PathRng, TrigMode, WienerIncrement, XPhase};
use hydrostat::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn grid(n: usize) -> Grid {
    Grid::square(n).unwrap()
}

fn random_h(g: Grid, rng: &mut ChaCha8Rng) -> VelocityState {
    let amp = 10f64.powf(rng.random_range(-2.0..1.0));
    let decay = rng.random_range(1.0..6.0);
    let max_mode = rng.random_range(2..=g.band_x());
    VelocityState::new(random_h_field(g, rng, amp, decay, max_mode), 0.0).unwrap()
}

fn c1_cancellation() -> Result<Outcome> {
    let g = grid(64);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let u = random_h(g, &mut rng);
        for s in 1..=3 {
            worst = worst.max(cancellation_check(&u, s));
        }
    }
    outcome(worst <= 1e-10, format!("max normalised residual {worst:.3e} over 100 fields, s = 1, 2, 3 (<= 1e-10)"))
}

fn c2_galerkin() -> Result<Outcome> {
    let g = grid(32);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut best_truncated, mut worst_inactive) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let amp = 10f64.powf(rng.random_range(-3.0..-1.0));
        let decay = rng.random_range(1.5..4.0);
        let pert = random_h_field(g, &mut rng, amp, decay, 6);
        let u = VelocityState::from_projected(&shear_field(g, 1.0).add(&pert), 0.0)?;
        let bw = product_bandwidth(&u);
        best_truncated = best_truncated.max(galerkin_cancellation_demo(&u, 2, 0.5 * bw, 0.1)?.residual);
        worst_inactive = worst_inactive.max(galerkin_cancellation_demo(&u, 2, bw, 0.1)?.residual);
    }
    outcome(
        best_truncated > 1e-3 && worst_inactive <= 1e-10,
        format!("truncated max {best_truncated:.3e} (> 1e-3), untruncated max {worst_inactive:.3e} (<= 1e-10)"),
    )
}

fn c3_sandwich() -> Result<Outcome> {
    let g = grid(32);
    let band = Band::new(0.05, 0.2)?;
    let mode = WeightMode::Strict { kappa: 0.1, band };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut ok, mut worst) = (0, f64::NEG_INFINITY);
    let mut fields = Vec::new();
    while fields.len() < 100 {
        let amp = 10f64.powf(rng.random_range(-5.0..-3.0));
        let pert = random_h_field(g, &mut rng, amp, 2.0, 6);
        let u = VelocityState::from_projected(&shear_field(g, 1.0).add(&pert), 0.0)?;
        if rayleigh_monitor(&u, 0.1, band)?.pass {
            fields.push(u);
        }
    }
    for u in &fields {
        let s = rng.random_range(1..=6);
        let r = weighted_hs_norm(u.v(), s, mode)?;
        let c = |k: &str| r.component(k).unwrap();
        let (w, p) = (c("top_x_weighted"), c("top_x_plain"));
        let (lo, hi) = (c("inv_sqrt_weight_min") * p, c("inv_sqrt_weight_max") * p);
        let slack = 1e-12 * hi;
        if lo - slack <= w && w <= hi + slack {
            ok += 1;
        }
        worst = worst.max((lo - w).max(w - hi) / hi.max(f64::MIN_POSITIVE));
    }
    outcome(ok == 100, format!("{ok}/100 strict-mode fields inside the sandwich, worst relative excess {worst:.2e}"))
}

fn c4_poincare() -> Result<Outcome> {
    let g = grid(32);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut checks, mut held, mut worst) = (0, 0, 0.0f64);
    for _ in 0..100 {
        let u = random_h(g, &mut rng);
        for n in [TWO_PI, 2.0 * TWO_PI, 4.0 * TWO_PI] {
            for m in 0..=2 {
                let r = poincare_check(u.u(), n, m)?;
                for c in [r.tail, r.head].into_iter().flatten() {
                    checks += 1;
                    held += c.pass as usize;
                    worst = worst.max(c.ratio / c.bound);
                }
            }
        }
    }
    outcome(held == checks, format!("{held}/{checks} non-vacuous inequalities hold with C = sqrt 2, max ratio/bound {worst:.3}"))
}

fn c5_noise() -> Result<Outcome> {
    let g = grid(32);
    let s = 7;
    let model = NoiseModel::default_model(g, s, 0.1, 0.1)?;
    let rep = verify_noise_bounds(&model, s, 100, &mut PathRng::new(5, 0))?;
    outcome(
        rep.pass,
        format!("max measured constant {:.4} <= 2(kappa1 + kappa2) = {:.4} over {} samples", rep.max_constant(), rep.bound, rep.samples),
    )
}

fn perturbed_shear(g: Grid, seed: u64, amp: f64) -> VelocityState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VelocityState::from_projected(&shear_field(g, 1.0).add(&random_h_field(g, &mut rng, amp, 2.0, 6)), 0.0).unwrap()
}

fn c6_uniqueness() -> Result<Outcome> {
    let g = grid(64);
    let mut identical = 0;
    let mut steps = 0;
    for v in Variant::ALL {
        let mut cfg = SimConfig::new(v, g, 0.01, 0.5);
        cfg.seed = 6;
        cfg.halt_on_stop = false;
        cfg.snapshot_every = Some(1);
        let model = NoiseModel::default_model(g, cfg.s, 0.05, 0.05)?;
        let u0 = perturbed_shear(g, 6, 1e-3);
        let a = simulate(&cfg, &model, &u0)?;
        let b = simulate(&cfg, &model, &u0)?;
        let (mut ja, mut jb) = (Vec::new(), Vec::new());
        a.write_ndjson(&mut ja)?;
        b.write_ndjson(&mut jb)?;
        steps = a.snapshots.len();
        let same = a.snapshots.len() == b.snapshots.len()
            && a.snapshots.iter().zip(&b.snapshots).all(|(x, y)| x.bitwise_eq(y))
            && a.final_state.bitwise_eq(&b.final_state)
            && ja == jb;
        identical += same as usize;
    }
    outcome(identical == 4, format!("{identical}/4 variants bitwise identical at all {steps} steps"))
}

/// Strong additive noise: the first step already carries `d_zz u` past kappa.
fn rayleigh_config() -> ExperimentConfig {
    let g = grid(32);
    let mut sim = SimConfig::new(Variant::EulerModified, g, 1e-3, 0.05);
    sim.band = Band::new(0.05, 0.2).unwrap();
    sim.halt_on_stop = false;
    sim.seed = 7;
    let chi = vec![
        TrigMode { m1: 0, m2: 1, x_phase: XPhase::Cos, amplitude: 0.3 },
        TrigMode { m1: 1, m2: 1, x_phase: XPhase::Cos, amplitude: 0.3 },
        TrigMode { m1: 1, m2: 1, x_phase: XPhase::Sin, amplitude: 0.3 },
        TrigMode { m1: 0, m2: 2, x_phase: XPhase::Cos, amplitude: 0.1 },
    ];
    let mut x = ExperimentConfig::new(sim);
    x.noise = NoiseSpec::Explicit { psi: vec![TrigMode::zero(); chi.len()], chi };
    x.initial = InitialSpec::Shear { amplitude: 1.0 };
    x.experiment.ensemble_size = 32;
    x
}

fn c7_rayleigh() -> Result<Outcome> {
    let r = rayleigh_preservation_study(&rayleigh_config())?;
    outcome(
        r.pass() && r.shrink_factor >= 1.1,
        format!(
            "max deviation {:.4} / {:.4} <= kappa + C sqrt(dt) = {:.4} / {:.4} (C = {:.3}); overshoot shrink factor {:.3} (>= 1.1)",
            r.coarse.max_deviation, r.fine.max_deviation, r.coarse.bound, r.fine.bound, r.jump_constant, r.shrink_factor
        ),
    )
}

fn c8_frozen() -> Result<Outcome> {
    let g = grid(32);
    let mut cfg = SimConfig::new(Variant::NseModified, g, 0.01, 0.5);
    cfg.halt_on_stop = false;
    cfg.snapshot_every = Some(1);
    let u0 = perturbed_shear(g, 8, 1e-2);
    let n0 = hydrostat::norms::ds_norm(&u0, cfg.cutoff_norm_index())?;
    cfg.rho = 0.5 * n0;
    let model = NoiseModel::default_model(g, cfg.s, 0.5, 0.5)?;
    let rec = simulate(&cfg, &model, &u0)?;
    let frozen = rec.snapshots.iter().chain([&rec.final_state]).all(|s| s.u().bitwise_eq(u0.u()));
    outcome(
        frozen && rec.snapshots.len() == 50,
        format!("{} states, all bitwise equal to the initial state: {frozen}", rec.snapshots.len()),
    )
}

fn c9_cauchy() -> Result<Outcome> {
    let mut sim = SimConfig::new(Variant::NseModified, grid(64), 1e-3, 0.05);
    sim.stopping = StoppingFlavor::TauJT;
    sim.seed = 9;
    let mut x = ExperimentConfig::new(sim);
    x.initial = InitialSpec::Random { amplitude: 1e-6, spectrum: Spectrum::Power { exponent: 11.0 }, max_mode: 32, shear: 0.0 };
    let pi = std::f64::consts::PI;
    x.experiment.ladder = vec![4.0 * pi, 8.0 * pi, 16.0 * pi, 32.0 * pi];
    x.experiment.reference = Some(64.0 * pi);
    let r = cauchy_study(&x)?;
    let maxima = r.column_maxima();
    outcome(
        r.diagonal_is_zero() && r.is_symmetric() && r.column_maxima_decreasing(),
        format!(
            "diagonal zero {}, symmetric {}, column maxima {:?} strictly decreasing {}",
            r.diagonal_is_zero(),
            r.is_symmetric(),
            maxima.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>(),
            r.column_maxima_decreasing()
        ),
    )
}

fn c10_ito() -> Result<Outcome> {
    let g = grid(48);
    let mut sim = SimConfig::new(Variant::EulerModified, g, 0.01, 1.0);
    sim.halt_on_stop = false;
    sim.seed = 10;
    let chi: Vec<TrigMode> = (1..=15).map(|m| TrigMode { m1: 0, m2: m, x_phase: XPhase::Cos, amplitude: 1e-8 }).collect();
    let mut x = ExperimentConfig::new(sim);
    x.noise = NoiseSpec::Explicit { psi: vec![TrigMode::zero(); chi.len()], chi };
    x.initial = InitialSpec::Shear { amplitude: 0.0 };
    x.experiment.ensemble_size = 256;
    let m = ensemble_moments(&x, 2)?;
    let expected = ito_rate(&x.noise_model()?);
    let got = m.energy_rate.unwrap_or(f64::NAN);
    let rel = (got / expected - 1.0).abs();
    outcome(rel <= 0.1, format!("fitted rate {got:.4e} vs sum ||P_H chi_k||^2 = {expected:.4e}, relative error {rel:.3} (<= 0.1)"))
}

fn c11_strong_order() -> Result<Outcome> {
    let g = grid(8);
    let c = 1.0;
    let t_final: f64 = 0.2;
    let fine_dt: f64 = 1e-4;
    let factors = [100usize, 50, 20, 10, 5, 2, 1];
    let fine_steps = (t_final / fine_dt).round() as usize;
    let mut cfg = SimConfig::new(Variant::EulerModified, g, fine_dt, t_final);
    cfg.linear_treatment = LinearTreatment::Exponential;
    let model = NoiseModel::new(
        g,
        hydrostat::stochastic::NoiseDescriptor { psi: vec![TrigMode::constant(c)], chi: vec![TrigMode::zero()] },
    )?;
    let u0 = VelocityState::new(shear_field(g, 1e-6), 0.0)?;
    let stepper = Stepper::new(&cfg, &model, &u0)?;
    let paths = 1024;
    let mut err = vec![0.0; factors.len()];
    for p in 0..paths {
        let mut rng = PathRng::new(11, p as u64);
        let dw: Vec<f64> = (0..fine_steps).map(|_| rng.standard_normal() * fine_dt.sqrt()).collect();
        let w_t: f64 = dw.iter().sum();
        let exact = u0.u().scale((c * w_t - 0.5 * c * c * t_final).exp());
        for (e, &f) in err.iter_mut().zip(&factors) {
            let dt = f as f64 * fine_dt;
            let mut state = u0.clone();
            for chunk in dw.chunks(f) {
                let inc = WienerIncrement::from_values(vec![chunk.iter().sum()], dt)?;
                state = stepper.step(&state, &inc)?.state;
            }
            *e += state.u().sub(&exact).l2_norm() / paths as f64;
        }
    }
    let xs: Vec<f64> = factors.iter().map(|&f| (f as f64 * fine_dt).ln()).collect();
    let ys: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let order = fit_slope(&xs, &ys).unwrap_or(f64::NAN);
    outcome((order - 0.5).abs() <= 0.1, format!("empirical strong order {order:.3} over dt in [1e-4, 1e-2], M = {paths} (0.5 +- 0.1)"))
}

fn c12_uniformity() -> Result<Outcome> {
    let g = grid(16);
    let mut sim = SimConfig::new(Variant::EulerApprox, g, 1e-3, 0.05);
    sim.halt_on_stop = false;
    sim.seed = 12;
    let mut x = ExperimentConfig::new(sim);
    x.noise = NoiseSpec::Explicit { psi: vec![TrigMode::constant(10.0)], chi: vec![TrigMode::zero()] };
    x.initial = InitialSpec::Modes { modes: vec![TrigMode { m1: 0, m2: 1, x_phase: XPhase::Cos, amplitude: 1e-9 }], shear: 0.0 };
    x.experiment.ensemble_size = 128;
    x.experiment.n_visc_ladder = vec![8, 32, 128];
    let r = viscosity_uniformity(&x, 2)?;
    outcome(
        r.spread <= 0.25,
        format!("fitted envelope constants {:.3?} for n_visc {:?}, spread {:.3} (<= 0.25)", r.rates, r.n_values, r.spread),
    )
}

type Criterion = (u32, &'static str, f64, fn() -> Result<Outcome>);

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "cancellation identity", 10.0, c1_cancellation),
        (2, "Galerkin failure", 10.0, c2_galerkin),
        (3, "norm-equivalence sandwich", 10.0, c3_sandwich),
        (4, "Poincare and inverse inequalities", 10.0, c4_poincare),
        (5, "noise bounds", 30.0, c5_noise),
        (6, "pathwise uniqueness", 120.0, c6_uniqueness),
        (7, "Rayleigh / cut-off preservation", 300.0, c7_rayleigh),
        (8, "frozen dynamics", 10.0, c8_frozen),
        (9, "deterministic self-convergence", 300.0, c9_cauchy),
        (10, "linear-SDE moment oracle", 300.0, c10_ito),
        (11, "strong order", 300.0, c11_strong_order),
        (12, "uniformity in artificial viscosity", 600.0, c12_uniformity),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let result = run();
        let secs = t0.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && secs <= limit, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += !pass as usize;
        println!("criterion {id:>2} {} {name}: {detail} [{secs:.1} s, limit {limit} s]", if pass { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
