use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hydrostat::dynamics::{simulate_ensemble, LinearTreatment, StopCause};
use hydrostat::experiments::{
    cancellation_check, cauchy_study, ensemble_moments, galerkin_cancellation_demo, ito_rate, product_bandwidth,
    rayleigh_preservation_study, rho_requirement, uniqueness_check, viscosity_uniformity, ExperimentConfig,
    ExperimentMeta, InitialSpec, Table,
};
use hydrostat::norms::{ds_norm, dskappa_norm, rayleigh_monitor};
use hydrostat::regularize::poincare_check;
use hydrostat::spectral::TWO_PI;
use hydrostat::stochastic::{verify_noise_bounds, PathRng};

use crate::output::{sha256_hex, unix_ms, Output, RunManifest};
use crate::{default_run_dir, CliError, Command};

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Hashes of everything the run reads besides the config file.
pub fn input_hashes(xcfg: &ExperimentConfig) -> Result<BTreeMap<String, String>, CliError> {
    let mut h = BTreeMap::new();
    h.insert("resolved_config".to_string(), xcfg.content_hash());
    h.insert("noise".to_string(), xcfg.noise.descriptor(xcfg.sim.s).content_hash());
    if let InitialSpec::Snapshot { path } = &xcfg.initial {
        for ext in ["bin", "json"] {
            let p = with_ext(path, ext);
            h.insert(format!("snapshot.{ext}"), hash_file(&p)?);
        }
    }
    Ok(h)
}

/// Runs one experiment into `out_dir` and writes its manifest.
pub fn execute(
    cmd: &Command,
    xcfg: &ExperimentConfig,
    config_path: Option<&Path>,
    overrides: &[String],
    out_dir: &Path,
) -> Result<RunManifest, CliError> {
    xcfg.validate()?;
    let mut inputs = input_hashes(xcfg)?;
    if let Some(p) = config_path {
        inputs.insert("config_file".to_string(), hash_file(p)?);
    }
    let started = unix_ms();
    let mut out = Output::create(out_dir)?;
    let metas = match cmd {
        Command::Simulate => simulate(xcfg, &mut out)?,
        Command::Cancellation => cancellation(xcfg, &mut out)?,
        Command::GalerkinDemo => galerkin(xcfg, &mut out)?,
        Command::Cauchy => cauchy(xcfg, &mut out)?,
        Command::Uniqueness => uniqueness(xcfg, &mut out)?,
        Command::Rayleigh => rayleigh(xcfg, &mut out)?,
        Command::Moments => moments(xcfg, &mut out)?,
        Command::Uniformity => uniformity(xcfg, &mut out)?,
        Command::VerifyNoise { samples } => verify_noise(xcfg, *samples, &mut out)?,
        Command::Poincare => poincare(xcfg, &mut out)?,
        Command::Validate | Command::Replay { .. } => {
            return Err(CliError::validation(format!("{} does not produce a run", cmd.name())));
        }
    };
    out.meta(&metas)?;
    let manifest = RunManifest {
        command: cmd.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_path: config_path.map(Path::to_path_buf),
        overrides: overrides.to_vec(),
        config: xcfg.clone(),
        output_dir: out_dir.to_path_buf(),
        started_unix_ms: started,
        finished_unix_ms: started,
        inputs,
        outputs: BTreeMap::new(),
    };
    let manifest = out.finish(manifest)?;
    println!("wrote {} artifacts to {}", manifest.outputs.len(), out_dir.display());
    Ok(manifest)
}

pub fn replay(manifest_path: &Path, out: Option<&Path>, out_root: &Path) -> Result<(), CliError> {
    let text = fs::read(manifest_path).map_err(|e| CliError::io(format!("{}: {e}", manifest_path.display())))?;
    let old: RunManifest =
        serde_json::from_slice(&text).map_err(|e| CliError::validation(format!("{}: {e}", manifest_path.display())))?;
    let now = input_hashes(&old.config)?;
    for (k, v) in &now {
        if old.inputs.get(k) != Some(v) {
            return Err(CliError::validation(format!("input `{k}` changed since the manifest was written")));
        }
    }
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| {
        let d = default_run_dir(out_root, &old.command, &old.config);
        with_ext(&d, "replay")
    });
    if dir == old.output_dir {
        return Err(CliError::validation("replay needs an output directory different from the original run"));
    }
    let new = execute(&old.command, &old.config, None, &old.overrides, &dir)?;
    let differing: Vec<&String> = old
        .outputs
        .keys()
        .chain(new.outputs.keys())
        .filter(|k| old.outputs.get(*k) != new.outputs.get(*k))
        .collect();
    if differing.is_empty() {
        println!("replay: {} artifacts identical", new.outputs.len());
        Ok(())
    } else {
        Err(CliError::io(format!("replay differs in {differing:?}")))
    }
}

pub fn validate(xcfg: &ExperimentConfig) -> Result<(), CliError> {
    xcfg.validate()?;
    let sim = &xcfg.sim;
    let budget = sim.stability_budget();
    let budget_text = if budget.is_finite() { format!("{budget:e}") } else { "unbounded".to_string() };
    let binding = match sim.linear_treatment {
        LinearTreatment::Explicit => "explicit linear step",
        LinearTreatment::Exponential => "not binding for the exponential linear step",
    };
    println!("stability budget: {budget_text} (dt {:e}, {binding})", sim.dt);

    let u0 = xcfg.initial_state(0)?;
    let norm0 = dskappa_norm(&u0, sim.s, sim.weight_mode())?.value;
    let (m, m_source) = match xcfg.experiment.m_bound {
        Some(m) => (m, "m_bound"),
        None => (2.0 * norm0, "twice the initial norm"),
    };
    let need = rho_requirement(sim.kappa, m);
    let verdict = if sim.rho >= need { "satisfied" } else { "not satisfied (advisory)" };
    println!(
        "rho advisory: rho {:e}, (1 + C)(M / c + 4) = {need:e} with M {m:e} ({m_source}), initial weighted norm {norm0:e}: {verdict}",
        sim.rho
    );

    let k2 = (2.0 * sim.kappa).min(0.499_999);
    let rep = rayleigh_monitor(&u0, k2, sim.band)?;
    println!(
        "initial Rayleigh monitor on [{}, {}]: d_zz u0 in [{:e}, {:e}], required [{k2}, {:e}]: {}",
        sim.band.lo,
        sim.band.hi,
        rep.min_val,
        rep.max_val,
        1.0 / k2,
        if rep.pass { "pass" } else { "fail (advisory)" }
    );
    println!("ok");
    Ok(())
}

fn simulate(x: &ExperimentConfig, out: &mut Output) -> Result<Vec<ExperimentMeta>, CliError> {
    let model = x.noise_model()?;
    let m = x.experiment.ensemble_size;
    let records = simulate_ensemble(&x.sim, &model, |p| x.initial_state(p), m)?;
    let mut trajectory = Vec::new();
    let mut table = Table::new("paths", &["stream", "steps", "stop_time", "stop_cause", "max_deviation", "final_ds_norm"]);
    let (mut early, mut stop_sum, mut worst) = (0usize, 0.0, 0.0f64);
    for (p, rec) in records.iter().enumerate() {
        rec.write_ndjson(&mut trajectory)?;
        for w in &rec.warnings {
            eprintln!("warning: path {p}: {w}");
        }
        let stop = rec.stopping.expect("simulate_path always records a stopping event");
        let cause = match stop.cause {
            StopCause::Horizon => 0.0,
            StopCause::NormThreshold => 1.0,
            StopCause::RayleighDrift => 2.0,
        };
        if stop.cause != StopCause::Horizon {
            early += 1;
        }
        stop_sum += stop.time;
        worst = worst.max(rec.max_deviation());
        table.push(vec![
            rec.stream as f64,
            rec.len() as f64,
            stop.time,
            cause,
            rec.max_deviation(),
            ds_norm(&rec.final_state, x.sim.s)?,
        ]);
        out.snapshot(&format!("path{p:04}_initial"), x.initial_state(p)?.u(), 0.0)?;
        for (i, s) in rec.snapshots.iter().enumerate() {
            out.snapshot(&format!("path{p:04}_snap{i:04}"), s.u(), s.time())?;
        }
        out.snapshot(&format!("path{p:04}_final"), rec.final_state.u(), rec.final_state.time())?;
    }
    out.ndjson("trajectory.ndjson", &trajectory)?;
    out.table(&table)?;
    println!("paths: {m}, steps per path: {}", x.sim.time_grid().len());
    println!("stopped before t_final: {early}/{m}");
    println!("largest deviation of d_zz u: {worst:e}");
    let meta = ExperimentMeta::new("simulate", x, (0..m as u64).collect())
        .with("paths", m as f64)
        .with("stopped_early", early as f64)
        .with("mean_stop_time", stop_sum / m as f64)
        .with("max_deviation", worst);
    Ok(vec![meta])
}

fn cancellation(x: &ExperimentConfig, out: &mut Output) -> Result<Vec<ExperimentMeta>, CliError> {
    let m = x.experiment.ensemble_size;
    let mut table = Table::new("cancellation", &["path", "s", "residual"]);
    let mut worst = 0.0f64;
    for p in 0..m {
        let u = x.initial_state(p)?;
        for &s in &x.experiment.orders {
            let r = cancellation_check(&u, s);
            worst = worst.max(r);
            table.push(vec![p as f64, s as f64, r]);
        }
    }
    out.table(&table)?;
    println!("cancellation residual {worst:e} (largest over {m} fields, orders {:?})", x.experiment.orders);
    Ok(vec![ExperimentMeta::new("cancellation", x, (0..m as u64).collect()).with("max_residual", worst)])
}

fn galerkin(x: &ExperimentConfig, out: &mut Output) -> Result<Vec<ExperimentMeta>, CliError> {
    let m = x.experiment.ensemble_size;
    let mut table = Table::new(
        "galerkin",
        &["path", "s", "n", "bandwidth", "projected", "reference", "residual", "untruncated_residual"],
    );
    let (mut trunc, mut full) = (0.0f64, 0.0f64);
    for p in 0..m {
        let u = x.initial_state(p)?;
        let bw = product_bandwidth(&u);
        let n = x.experiment.galerkin_n.unwrap_or(0.5 * bw);
        for &s in &x.experiment.orders {
            let r = galerkin_cancellation_demo(&u, s, n, x.sim.kappa)?;
            let f = galerkin_cancellation_demo(&u, s, bw + 1.0, x.sim.kappa)?;
            trunc = trunc.max(r.residual);
            full = full.max(f.residual);
            table.push(vec![p as f64, s as f64, n, bw, r.projected, r.reference, r.residual, f.residual]);
        }
    }
    out.table(&table)?;
    println!("galerkin residual with truncation: {trunc:e}");
    println!("galerkin residual without truncation: {full:e}");
    Ok(vec![ExperimentMeta::new("galerkin-demo", x, (0..m as u64).collect())
        .with("max_truncated_residual", trunc)
        .with("max_untruncated_residual", full)])
}

fn cauchy(x: &ExperimentConfig, out: &mut Output) -> Result<Vec<ExperimentMeta>, CliError> {
    let r = cauchy_study(x)?;
    out.table(&r.table())?;
    let mut cols = vec!["path".to_string()];
    cols.extend(r.levels.iter().map(|l| format!("tau_{:.6}", l)));
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut stops = Table::new("cauchy_stopping", &cols);
    for (p, row) in r.stopping_times.iter().enumerate() {
        let mut v = vec![p as f64];
        v.extend(row);
        stops.push(v);
    }
    out.table(&stops)?;
    let maxima = r.column_maxima();
    println!("column maxima: {}", join(&maxima));
    println!("decreasing: {}", r.column_maxima_decreasing());
    println!("symmetric: {}, zero diagonal: {}", r.is_symmetric(), r.diagonal_is_zero());
    let mut meta = ExperimentMeta::new("cauchy", x, (0..r.paths as u64).collect())
        .with("decreasing", flag(r.column_maxima_decreasing()))
        .with("symmetric", flag(r.is_symmetric()));
    for (k, v) in maxima.iter().enumerate() {
        meta = meta.with(&format!("column_max_{k}"), *v);
    }
    Ok(vec![meta])
}

fn uniqueness(x: &ExperimentConfig, out: &mut Output) -> Result<Vec<ExperimentMeta>, CliError> {
    let r = uniqueness_check(x)?;
    out.table(&r.table())?;
    println!("max difference: {:e}", r.max_difference);
    println!("bitwise identical: {}", r.bitwise_identical);
    let mut meta = ExperimentMeta::new("uniqueness", x, vec![0])
        .with("max_difference", r.max_difference)
        .with("bitwise_identical", flag(r.bitwise_identical))
        .with("seed_b", r.seed_b as f64);
    match r.fitted_rate {
        Some(c) => {
            println!("fitted rate: {c:e}");
            meta = meta.with("fitted_rate", c);
        }
        None => println!("fitted rate: none (zero initial difference)"),
    }
    Ok(vec![meta])
}

fn rayleigh(x: &ExperimentConfig, out: &mut Output) -> Result<Vec<ExperimentMeta>, CliError> {
    let r = rayleigh_preservation_study(x)?;
    out.table(&r.table())?;
    for run in [&r.coarse, &r.fine] {
        println!(
            "dt {:e}: max deviation {:e}, bound {:e}, mean overshoot {:e}: {}",
            run.dt,
            run.max_deviation,
            run.bound,
            run.mean_overshoot,
            if run.pass { "pass" } else { "fail" }
        );
    }
    println!("jump constant {:e}, shrink factor {:e}", r.jump_constant, r.shrink_factor);
    let mut meta = ExperimentMeta::new("rayleigh", x, (0..r.paths as u64).collect())
        .with("jump_constant", r.jump_constant)
        .with("coarse_max_deviation", r.coarse.max_deviation)
        .with("fine_max_deviation", r.fine.max_deviation)
        .with("pass", flag(r.pass()));
    if r.shrink_factor.is_finite() {
        meta = meta.with("shrink_factor", r.shrink_factor);
    }
    Ok(vec![meta])
}

fn moments(x: &ExperimentConfig, out: &mut Output) -> Result<Vec<ExperimentMeta>, CliError> {
    let r = ensemble_moments(x, x.experiment.p)?;
    out.table(&r.table())?;
    let ito = ito_rate(&x.noise_model()?);
    println!("paths: {}, p = {}", r.paths, r.p);
    println!("fitted rate of ln E sup ||u||^p: {}", opt(r.fitted_rate));
    println!("energy rate: {} (Ito correction {ito:e})", opt(r.energy_rate));
    let mut meta = ExperimentMeta::new("moments", x, (0..r.paths as u64).collect()).with("ito_rate", ito);
    if let Some(v) = r.fitted_rate {
        meta = meta.with("fitted_rate", v);
    }
    if let Some(v) = r.energy_rate {
        meta = meta.with("energy_rate", v);
    }
    Ok(vec![meta])
}

fn uniformity(x: &ExperimentConfig, out: &mut Output) -> Result<Vec<ExperimentMeta>, CliError> {
    let r = viscosity_uniformity(x, x.experiment.p)?;
    out.table(&r.table())?;
    for (n, s) in r.n_values.iter().zip(&r.series) {
        let mut t = s.table();
        t.name = format!("moments_n{n}");
        out.table(&t)?;
    }
    for (n, c) in r.n_values.iter().zip(&r.rates) {
        println!("n = {n}: fitted rate {c:e}");
    }
    println!("spread: {:e}", r.spread);
    let paths = x.experiment.ensemble_size as u64;
    let mut meta = ExperimentMeta::new("uniformity", x, (0..paths).collect()).with("spread", r.spread);
    for (n, c) in r.n_values.iter().zip(&r.rates) {
        meta = meta.with(&format!("rate_n{n}"), *c);
    }
    Ok(vec![meta])
}

fn verify_noise(x: &ExperimentConfig, samples: usize, out: &mut Output) -> Result<Vec<ExperimentMeta>, CliError> {
    let model = x.noise_model()?;
    let mut rng = PathRng::new(x.sim.seed, 0);
    let r = verify_noise_bounds(&model, x.sim.s, samples, &mut rng)?;
    let mut t = Table::new(
        "noise_bounds",
        &["samples", "s", "growth", "growth_derivative", "lipschitz", "lipschitz_derivative", "kappa1", "kappa2", "bound", "pass"],
    );
    t.push(vec![
        r.samples as f64,
        r.s as f64,
        r.growth,
        r.growth_derivative,
        r.lipschitz,
        r.lipschitz_derivative,
        r.kappa1,
        r.kappa2,
        r.bound,
        flag(r.pass),
    ]);
    out.table(&t)?;
    println!(
        "noise bounds over {} samples: largest constant {:e}, bound {:e}: {}",
        r.samples,
        r.max_constant(),
        r.bound,
        if r.pass { "pass" } else { "fail" }
    );
    Ok(vec![ExperimentMeta::new("verify-noise", x, vec![0])
        .with("max_constant", r.max_constant())
        .with("bound", r.bound)
        .with("pass", flag(r.pass))])
}

fn poincare(x: &ExperimentConfig, out: &mut Output) -> Result<Vec<ExperimentMeta>, CliError> {
    let radii = if x.experiment.ladder.is_empty() {
        vec![TWO_PI, 2.0 * TWO_PI, 4.0 * TWO_PI]
    } else {
        x.experiment.ladder.clone()
    };
    let m_paths = x.experiment.ensemble_size;
    let mut t = Table::new(
        "poincare",
        &["path", "n", "m", "tail_present", "tail_ratio", "tail_bound", "head_present", "head_ratio", "head_bound", "pass"],
    );
    let (mut checked, mut failed) = (0usize, 0usize);
    for p in 0..m_paths {
        let u = x.initial_state(p)?;
        for &n in &radii {
            for &m in &x.experiment.orders {
                let r = poincare_check(u.u(), n, m)?;
                let cols = |c: &Option<hydrostat::regularize::InequalityCheck>| match c {
                    Some(c) => [1.0, c.ratio, c.bound],
                    None => [0.0, 0.0, 0.0],
                };
                let mut row = vec![p as f64, n, m as f64];
                row.extend(cols(&r.tail));
                row.extend(cols(&r.head));
                row.push(flag(r.pass()));
                t.push(row);
                checked += 1;
                if !r.pass() {
                    failed += 1;
                }
            }
        }
    }
    out.table(&t)?;
    println!("poincare checks: {}/{checked} pass (radii {}, orders {:?})", checked - failed, join(&radii), x.experiment.orders);
    Ok(vec![ExperimentMeta::new("poincare", x, (0..m_paths as u64).collect())
        .with("checks", checked as f64)
        .with("failures", failed as f64)])
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| format!("{v:e}"))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ")
}
