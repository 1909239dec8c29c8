//! The four subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand_distr::{Distribution, StandardNormal};
use sdewhittle::likelihood::{periodogram, Backend, Diagnostic, LoglikResult};
use sdewhittle::sampler::{mwg_run, smmala_run, Chain, ChainSummary, LogDensity};
use sdewhittle::simulate::{rng, simulate_path};
use sdewhittle::spectral::{min_series_length, spectral_density, SeriesLengthReport};
use sdewhittle::target::{LikelihoodData, ModelTarget};
use sdewhittle::{find_equilibrium, linearize, stability_check, Model};
use serde::Serialize;

use crate::config::{InferenceConfig, InitKind, ModelKind, ParameterizationKind, SamplerKind};
use crate::error::{CliError, CliResult};
use crate::io::{append_log, fmt_f64, read_data, write_json, write_lines, write_table};
use crate::models::{
    build_target, default_proposal_sds, equilibrium, likelihood_data, named_params,
    resolve_simulation, theta, Observed, ResolvedSimulation,
};
use crate::with_model;

/// RNG stream used for random chain starts.
pub const INIT_STREAM: u64 = 2;

/// Attempts at drawing a random start with a finite log-target.
pub const INIT_ATTEMPTS: usize = 1000;

fn log_event(cfg: &InferenceConfig, message: &str) -> CliResult<()> {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    append_log(
        &cfg.output_dir.join("run.log"),
        &format!("{secs} {message}"),
    )
}

/// Sidecar written next to a data file.
#[derive(Debug, Serialize)]
pub struct DataSidecar {
    pub model: ModelKind,
    pub params: BTreeMap<String, f64>,
    pub simulation: ResolvedSimulation,
    pub n: usize,
    pub config: InferenceConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutput {
    pub data_path: PathBuf,
    pub n: usize,
}

/// Simulates pseudo-data and writes `t,y` plus a JSON sidecar.
pub fn cmd_simulate(cfg: &InferenceConfig) -> CliResult<SimulateOutput> {
    with_model!(cfg.model, m => simulate_with(&m, cfg))
}

fn simulate_with<M: Model>(model: &M, cfg: &InferenceConfig) -> CliResult<SimulateOutput> {
    let th = theta(model, cfg)?;
    let sim = resolve_simulation(model, cfg, &th)?;
    let x0 = nalgebra::DVector::from_vec(sim.x0.clone());
    let path = simulate_path(
        model,
        &th,
        &x0,
        sim.t_end,
        sim.solver_dt,
        sim.obs_dt,
        sim.seed,
        sim.dynamics,
        &sim.stimulus,
    )?;
    let data_path = cfg.data_path();
    let t = path.obs_times();
    write_table(
        &data_path,
        &["t".into(), "y".into()],
        t.iter().zip(&path.observations).map(|(&t, &y)| vec![t, y]),
    )?;
    let n = path.observations.len();
    let sidecar = DataSidecar {
        model: cfg.model,
        params: named_params(model, &th),
        simulation: sim,
        n,
        config: cfg.clone(),
    };
    write_json(&data_path.with_extension("json"), &sidecar)?;
    log_event(
        cfg,
        &format!("simulate wrote {} ({n} observations)", data_path.display()),
    )?;
    Ok(SimulateOutput { data_path, n })
}

/// Loads the observed series; the sampling interval is the first time step.
pub fn load_observed(cfg: &InferenceConfig) -> CliResult<Observed> {
    let path = cfg.data_path();
    let (t, y) = read_data(&path)?;
    if t.len() < 2 {
        return Err(CliError::Config(format!(
            "{}: need at least two observations",
            path.display()
        )));
    }
    let dt = t[1] - t[0];
    if !(dt > 0.0) {
        return Err(CliError::Config(format!(
            "{}: times must increase",
            path.display()
        )));
    }
    Ok(Observed { y, dt })
}

/// Rejects sampler/backend pairs the target cannot support.
pub fn check_compatibility(cfg: &InferenceConfig) -> CliResult<()> {
    if cfg.sampler.kind == SamplerKind::Smmala && !cfg.backend.has_gradient() {
        return Err(CliError::Incompatible(format!(
            "smMALA needs gradients, which the {:?} backend does not provide; use the whittle backend",
            cfg.backend
        )));
    }
    if cfg.model == ModelKind::HarmonicOscillator
        && cfg.parameterization == ParameterizationKind::SteadyState
    {
        return Err(CliError::Incompatible(
            "the harmonic oscillator has no steady-state parameterization".into(),
        ));
    }
    Ok(())
}

/// Posterior summary of one chain, in model coordinates.
#[derive(Debug, Serialize)]
pub struct InferSummary {
    pub model: ModelKind,
    pub parameterization: ParameterizationKind,
    pub backend: Backend,
    pub sampler: SamplerKind,
    pub step_size: Option<f64>,
    pub best_log_post: Option<f64>,
    pub init: Vec<f64>,
    #[serde(flatten)]
    pub chain: ChainSummary,
}

#[derive(Debug)]
pub struct InferOutput {
    pub summaries: Vec<InferSummary>,
    pub chain_paths: Vec<PathBuf>,
}

/// Runs `chains` independent chains, writing a chain CSV and summary JSON for each.
pub fn cmd_infer(cfg: &InferenceConfig, chains: usize, debug: bool) -> CliResult<InferOutput> {
    check_compatibility(cfg)?;
    if chains == 0 {
        return Err(CliError::Config("--chains must be at least 1".into()));
    }
    with_model!(cfg.model, m => infer_with(&m, cfg, chains, debug))
}

/// Start point in sampling coordinates: the configured values, or a random
/// perturbation of them redrawn until the log-target is finite.
pub fn initial_point<T: LogDensity>(
    target: &T,
    truth: &[f64],
    kind: InitKind,
    scale: f64,
    seed: u64,
) -> CliResult<Vec<f64>> {
    match kind {
        InitKind::Truth => Ok(truth.to_vec()),
        InitKind::Random => {
            let mut r = rng(seed, INIT_STREAM);
            for _ in 0..INIT_ATTEMPTS {
                let cand: Vec<f64> = truth
                    .iter()
                    .map(|v| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        v + scale * z
                    })
                    .collect();
                if target.log_density(&cand).is_finite() {
                    return Ok(cand);
                }
            }
            Err(sdewhittle::Error::InitInvalid.into())
        }
    }
}

fn chain_file(dir: &Path, stem: &str, ext: &str, index: usize, chains: usize) -> PathBuf {
    if chains == 1 {
        dir.join(format!("{stem}.{ext}"))
    } else {
        dir.join(format!("{stem}_{index}.{ext}"))
    }
}

/// The chain with every draw mapped to model coordinates.
pub fn model_coordinates<M: Model>(target: &ModelTarget<M>, chain: &Chain) -> Chain {
    let mut out = chain.clone();
    for (j, t) in target.transforms.iter().enumerate() {
        for v in out.draws.column_mut(j).iter_mut() {
            *v = t.apply(*v);
        }
    }
    out
}

fn write_chain(path: &Path, chain: &Chain) -> CliResult<()> {
    let mut header = vec!["iter".to_string(), "log_post".into(), "accepted".into()];
    header.extend(chain.param_names.iter().cloned());
    write_lines(
        path,
        &header,
        (0..chain.len()).map(|i| {
            let acc = chain.accepted[i].iter().filter(|&&a| a).count();
            let mut cells = vec![i.to_string(), fmt_f64(chain.log_post[i]), acc.to_string()];
            cells.extend(chain.draws.row(i).iter().map(|&v| fmt_f64(v)));
            cells.join(",")
        }),
    )
}

fn infer_with<M: Model + Clone>(
    model: &M,
    cfg: &InferenceConfig,
    chains: usize,
    debug: bool,
) -> CliResult<InferOutput> {
    let th = theta(model, cfg)?;
    let sim = resolve_simulation(model, cfg, &th)?;
    let obs = load_observed(cfg)?;
    let target = build_target(
        model,
        cfg,
        &th,
        likelihood_data(cfg, cfg.backend, &obs, sim.stimulus)?,
    )?;
    let x_star = equilibrium(model, &th)?;
    let truth = target.from_model(&th, x_star.as_slice());
    let s = &cfg.sampler;
    let sds = match &s.proposal_sds {
        Some(v) => v.clone(),
        None => default_proposal_sds(cfg.model, cfg.parameterization, target.dim()),
    };
    if debug {
        write_filter_diagnostic(cfg, &target, &th, &x_star)?;
    }
    let runs: Vec<CliResult<(Vec<f64>, Chain)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..chains)
            .map(|i| {
                let (target, truth, sds) = (&target, &truth, &sds);
                scope.spawn(move || -> CliResult<(Vec<f64>, Chain)> {
                    let seed = s.seed + i as u64;
                    let init = initial_point(target, truth, s.init, s.init_scale, seed)?;
                    let chain = match s.kind {
                        SamplerKind::Mwg => mwg_run(target, &init, sds, s.iters, seed)?,
                        SamplerKind::Smmala => smmala_run(target, &init, s.h, s.iters, seed)?,
                    };
                    Ok((init, chain))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    });
    let mut out = InferOutput {
        summaries: Vec::with_capacity(chains),
        chain_paths: Vec::with_capacity(chains),
    };
    for (i, run) in runs.into_iter().enumerate() {
        let (init, chain) = run?;
        let chain = model_coordinates(&target, &chain);
        let path = chain_file(&cfg.output_dir, "chain", "csv", i, chains);
        write_chain(&path, &chain)?;
        let summary = InferSummary {
            model: cfg.model,
            parameterization: cfg.parameterization,
            backend: cfg.backend,
            sampler: s.kind,
            step_size: (s.kind == SamplerKind::Smmala).then_some(s.h),
            best_log_post: chain.log_post.iter().copied().reduce(f64::max),
            init: init
                .iter()
                .zip(&target.transforms)
                .map(|(&u, t)| t.apply(u))
                .collect(),
            chain: ChainSummary::new(&chain, s.burn_in()),
        };
        write_json(
            &chain_file(&cfg.output_dir, "summary", "json", i, chains),
            &summary,
        )?;
        log_event(
            cfg,
            &format!(
                "infer chain {i}: {} iterations in {:.3} s, acceptance {:.3}",
                chain.len(),
                chain.elapsed_seconds,
                summary.chain.acceptance_rate
            ),
        )?;
        out.summaries.push(summary);
        out.chain_paths.push(path);
    }
    Ok(out)
}

/// Per-observation filter diagnostics at the configured parameters.
fn write_filter_diagnostic<M: Model>(
    cfg: &InferenceConfig,
    target: &ModelTarget<M>,
    th: &[f64],
    x_star: &nalgebra::DVector<f64>,
) -> CliResult<()> {
    let r: LoglikResult = target.loglik_result(th, x_star)?;
    let (name, values) = match r.diagnostic {
        Diagnostic::Innovations(v) => ("innovation", v),
        Diagnostic::ParticleEss(v) => ("particle_ess", v),
        Diagnostic::None => return Ok(()),
    };
    write_table(
        &cfg.output_dir.join("filter_diagnostic.csv"),
        &["index".into(), name.into()],
        values.iter().enumerate().map(|(i, &v)| vec![i as f64, v]),
    )
}

/// Whittle-accuracy report for a requested series length.
#[derive(Debug, Serialize)]
pub struct DiagnoseReport {
    pub model: ModelKind,
    pub dt: f64,
    pub n: usize,
    #[serde(flatten)]
    pub heuristic: SeriesLengthReport,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Runs the series-length heuristic and writes the report plus spectra.
pub fn cmd_diagnose(cfg: &InferenceConfig) -> CliResult<DiagnoseReport> {
    with_model!(cfg.model, m => diagnose_with(&m, cfg))
}

fn diagnose_with<M: Model + Clone>(model: &M, cfg: &InferenceConfig) -> CliResult<DiagnoseReport> {
    let th = theta(model, cfg)?;
    let sim = resolve_simulation(model, cfg, &th)?;
    let eq = find_equilibrium(model, &th, &model.initial_guess(&th))?;
    let sys = linearize(model, &th, &eq);
    if !stability_check(&sys.a)?.is_stable {
        return Err(sdewhittle::Error::Domain("equilibrium is not stable".into()).into());
    }
    let heuristic = min_series_length(&sys, sim.obs_dt)?;
    let n = cfg
        .diagnose
        .n
        .unwrap_or((sim.t_end / sim.obs_dt).round() as usize);
    let report = DiagnoseReport {
        model: cfg.model,
        dt: sim.obs_dt,
        n,
        heuristic,
        verdict: if heuristic.passes(n) {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
    };
    write_json(&cfg.output_dir.join("diagnostic.json"), &report)?;
    write_spectra(model, cfg, &th, &sys, n, sim.obs_dt)?;
    log_event(
        cfg,
        &format!(
            "diagnose n_min {} verdict {:?}",
            heuristic.n_min, report.verdict
        ),
    )?;
    Ok(report)
}

/// Spectra CSV: model densities, and when data exist the periodogram and
/// the gradient of `f̃` in sampling coordinates.
fn write_spectra<M: Model + Clone>(
    model: &M,
    cfg: &InferenceConfig,
    th: &[f64],
    sys: &sdewhittle::LinearSystem,
    n: usize,
    dt: f64,
) -> CliResult<()> {
    let path = cfg.output_dir.join("spectra.csv");
    let observed = cfg
        .data_path()
        .exists()
        .then(|| load_observed(cfg))
        .transpose()?;
    let Some(obs) = observed.filter(|o| o.y.len() >= 4 && o.y.len() % 2 == 0) else {
        let grid = spectral_density(sys, n.max(4), dt)?;
        return write_table(
            &path,
            &["freq_hz".into(), "f".into(), "f_tilde".into()],
            (0..grid.freqs.len()).map(|k| vec![grid.freqs[k], grid.f[k], grid.f_tilde[k]]),
        );
    };
    let pgram = periodogram(&obs.y, obs.dt, cfg.likelihood.remove_mean)?;
    let target = build_target(
        model,
        cfg,
        th,
        LikelihoodData::Whittle {
            periodogram: pgram.clone(),
        },
    )?;
    let x_star = equilibrium(model, th)?;
    let u = target.from_model(th, x_star.as_slice());
    let w = target.whittle_with_gradient(&u)?;
    let grid = w.grid;
    let s = pgram.whittle_ordinates();
    let mut header = vec![
        "freq_hz".to_string(),
        "f".into(),
        "f_tilde".into(),
        "periodogram".into(),
    ];
    header.extend(target.names().iter().map(|n| format!("grad_{n}")));
    let grads = grid.grad_f_tilde.clone().unwrap_or_default();
    write_table(
        &path,
        &header,
        (0..grid.freqs.len()).map(|k| {
            let mut row = vec![grid.freqs[k], grid.f[k], grid.f_tilde[k], s[k]];
            row.extend(grads.iter().map(|g| g[k]));
            row
        }),
    )
}

#[derive(Debug, Serialize)]
pub struct BenchEntry {
    pub backend: Backend,
    pub median_seconds: f64,
    pub loglik: f64,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub model: ModelKind,
    pub n: usize,
    pub repeats: usize,
    pub results: Vec<BenchEntry>,
    /// Kalman median time over Whittle median time, when both were run.
    pub whittle_speedup_over_kalman: Option<f64>,
}

/// Times one log-likelihood evaluation per backend at the configured parameters.
pub fn cmd_bench(cfg: &InferenceConfig) -> CliResult<BenchReport> {
    if cfg.bench.repeats == 0 {
        return Err(CliError::Config("bench.repeats must be at least 1".into()));
    }
    with_model!(cfg.model, m => bench_with(&m, cfg))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn bench_with<M: Model + Clone>(model: &M, cfg: &InferenceConfig) -> CliResult<BenchReport> {
    let th = theta(model, cfg)?;
    let sim = resolve_simulation(model, cfg, &th)?;
    let obs = load_observed(cfg)?;
    let x_star = equilibrium(model, &th)?;
    let mut results = Vec::new();
    for &backend in &cfg.bench.backends {
        let target = build_target(
            model,
            cfg,
            &th,
            likelihood_data(cfg, backend, &obs, sim.stimulus)?,
        )?;
        let mut times = Vec::with_capacity(cfg.bench.repeats);
        let mut loglik = f64::NAN;
        for _ in 0..cfg.bench.repeats {
            let start = Instant::now();
            loglik = target.loglik(&th, &x_star)?;
            times.push(start.elapsed().as_secs_f64());
        }
        results.push(BenchEntry {
            backend,
            median_seconds: median(times),
            loglik,
        });
    }
    let time_of = |b: Backend| {
        results
            .iter()
            .find(|r| r.backend == b)
            .map(|r| r.median_seconds)
    };
    let whittle_speedup_over_kalman = time_of(Backend::Whittle)
        .zip(time_of(Backend::Kalman))
        .map(|(w, k)| k / w);
    let report = BenchReport {
        model: cfg.model,
        n: obs.y.len(),
        repeats: cfg.bench.repeats,
        results,
        whittle_speedup_over_kalman,
    };
    write_json(&cfg.output_dir.join("bench.json"), &report)?;
    log_event(cfg, "bench finished")?;
    Ok(report)
}
