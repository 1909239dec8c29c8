//! Per-model defaults and assembly of posterior targets from a config.

use std::collections::BTreeMap;

use nalgebra::DVector;
use sdewhittle::likelihood::{periodogram, Backend};
use sdewhittle::sampler::{Prior, PriorKind};
use sdewhittle::simulate::{Dynamics, StimulusSpec};
use sdewhittle::target::{LikelihoodData, ModelTarget, Parameterization, Transform};
use sdewhittle::zoo::{
    AnyReparam, FhnParams, FhnReparam, FhnVariant, HoParams, NpmParams, NpmReparam, ReparamMap,
};
use sdewhittle::{find_equilibrium, Model};
use serde::{Deserialize, Serialize};

use crate::config::{InferenceConfig, ModelKind, ParameterizationKind};
use crate::error::{CliError, CliResult};

/// Runs `$body` with `$m` bound to the concrete model of `$kind`.
#[macro_export]
macro_rules! with_model {
    ($kind:expr, $m:ident => $body:expr) => {
        match $kind {
            $crate::config::ModelKind::Fhn => {
                let $m = sdewhittle::zoo::Fhn;
                $body
            }
            $crate::config::ModelKind::Npm => {
                let $m = sdewhittle::zoo::Npm;
                $body
            }
            $crate::config::ModelKind::HarmonicOscillator => {
                let $m = sdewhittle::zoo::HarmonicOscillator;
                $body
            }
        }
    };
}

/// Reference parameter vector of each model.
pub fn reference_theta(kind: ModelKind) -> Vec<f64> {
    match kind {
        ModelKind::Fhn => FhnParams {
            a: -5.0,
            b: 6000.0,
            c: 40.0,
            d: 100.0,
            i0: 100.0,
            sigma_in: 0.0,
            sigma_obs: 0.2,
        }
        .theta(),
        ModelKind::Npm => NpmParams::reference().theta(),
        ModelKind::HarmonicOscillator => HoParams {
            zeta: 0.2,
            omega0: 80.0,
            noise_intensity: 1.0,
            obs_noise_sd: 0.0,
        }
        .theta(),
    }
}

/// Reference values with the config's named overrides applied.
pub fn theta<M: Model>(model: &M, cfg: &InferenceConfig) -> CliResult<Vec<f64>> {
    let mut th = reference_theta(cfg.model);
    for (name, &v) in &cfg.params {
        let i = model
            .param_index(name)
            .ok_or_else(|| CliError::Config(format!("unknown parameter {name}")))?;
        th[i] = v;
    }
    Ok(th)
}

/// All parameter values keyed by name, for sidecars.
pub fn named_params<M: Model>(model: &M, theta: &[f64]) -> BTreeMap<String, f64> {
    model
        .param_names()
        .iter()
        .map(|n| n.to_string())
        .zip(theta.iter().copied())
        .collect()
}

pub fn default_prior(kind: ModelKind) -> Prior {
    match kind {
        ModelKind::Fhn => Prior::fhn_uniform(),
        ModelKind::Npm => Prior::npm(),
        ModelKind::HarmonicOscillator => Prior::new(vec![
            ("zeta", PriorKind::Uniform { lo: 0.0, hi: 5.0 }),
            ("omega0", PriorKind::Uniform { lo: 0.0, hi: 1e4 }),
        ]),
    }
}

pub fn reparam(kind: ModelKind) -> Option<AnyReparam> {
    match kind {
        ModelKind::Fhn => Some(AnyReparam::Fhn(FhnReparam(FhnVariant::VOnly))),
        ModelKind::Npm => Some(AnyReparam::Npm(NpmReparam)),
        ModelKind::HarmonicOscillator => None,
    }
}

/// MwG proposal s.d.s for the deterministic FitzHugh-Nagumo problem.
pub fn default_proposal_sds(kind: ModelKind, p: ParameterizationKind, dim: usize) -> Vec<f64> {
    match (kind, p) {
        (ModelKind::Fhn, ParameterizationKind::Original) if dim == 4 => vec![5.0, 250.0, 1.0, 2.5],
        (ModelKind::Fhn, ParameterizationKind::SteadyState) if dim == 4 => {
            vec![3.5, 250.0, 3.0, 0.015]
        }
        _ => vec![0.1; dim],
    }
}

/// Simulation settings with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSimulation {
    pub t_end: f64,
    pub solver_dt: f64,
    pub obs_dt: f64,
    pub seed: u64,
    pub dynamics: Dynamics,
    pub x0: Vec<f64>,
    pub stimulus: StimulusSpec,
}

/// Fills the unset simulation fields; `x0` defaults to the stable equilibrium.
pub fn resolve_simulation<M: Model>(
    model: &M,
    cfg: &InferenceConfig,
    theta: &[f64],
) -> CliResult<ResolvedSimulation> {
    let s = &cfg.simulate;
    let (t_end, solver_dt, obs_dt, dynamics, stimulus) = match cfg.model {
        ModelKind::Fhn => (
            3.0,
            1e-3,
            1e-2,
            Dynamics::Deterministic,
            StimulusSpec::pulse(1.0, 1.1, 100.0, 0)?,
        ),
        ModelKind::Npm | ModelKind::HarmonicOscillator => {
            (20.0, 1e-4, 2e-3, Dynamics::Stochastic, StimulusSpec::none())
        }
    };
    let x0 = match &s.x0 {
        Some(x) if x.len() != model.dim_state() => {
            return Err(CliError::Config(format!(
                "x0 has {} entries, model has {} states",
                x.len(),
                model.dim_state()
            )))
        }
        Some(x) => x.clone(),
        None => equilibrium(model, theta)?.as_slice().to_vec(),
    };
    Ok(ResolvedSimulation {
        t_end: s.t_end.unwrap_or(t_end),
        solver_dt: s.solver_dt.unwrap_or(solver_dt),
        obs_dt: s.obs_dt.unwrap_or(obs_dt),
        seed: s.seed.unwrap_or(1),
        dynamics: s.dynamics.unwrap_or(dynamics),
        x0,
        stimulus: s.stimulus.unwrap_or(stimulus),
    })
}

pub fn equilibrium<M: Model>(model: &M, theta: &[f64]) -> CliResult<DVector<f64>> {
    Ok(find_equilibrium(model, theta, &model.initial_guess(theta))?.x_star)
}

/// Observed series with its sampling interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Observed {
    pub y: Vec<f64>,
    pub dt: f64,
}

/// Backend-specific likelihood data for an observed series.
pub fn likelihood_data(
    cfg: &InferenceConfig,
    backend: Backend,
    obs: &Observed,
    stimulus: StimulusSpec,
) -> CliResult<LikelihoodData> {
    let l = &cfg.likelihood;
    let y = obs.y.clone();
    let dt = obs.dt;
    Ok(match backend {
        Backend::Whittle => LikelihoodData::Whittle {
            periodogram: periodogram(&y, dt, l.remove_mean)?,
        },
        Backend::Kalman => LikelihoodData::Kalman { y, dt },
        Backend::Ekf => LikelihoodData::Ekf {
            y,
            dt,
            substeps: l.substeps,
        },
        Backend::Particle => LikelihoodData::Particle {
            y,
            dt,
            substeps: l.substeps,
            particles: l.particles,
            seed: l.seed,
        },
        Backend::Ode => LikelihoodData::Ode {
            y,
            dt,
            substeps: l.substeps,
            stimulus,
        },
    })
}

/// Posterior target for the configured parameterization, prior and backend.
pub fn build_target<M: Model + Clone>(
    model: &M,
    cfg: &InferenceConfig,
    theta: &[f64],
    likelihood: LikelihoodData,
) -> CliResult<ModelTarget<M>> {
    let prior = cfg
        .prior
        .clone()
        .unwrap_or_else(|| default_prior(cfg.model));
    let (parameterization, names): (Parameterization, Vec<String>) = match cfg.parameterization {
        ParameterizationKind::Original => {
            let free = prior
                .names()
                .iter()
                .map(|n| {
                    model.param_index(n).ok_or_else(|| {
                        CliError::Config(format!("prior names unknown parameter {n}"))
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            (
                Parameterization::Original { free },
                prior.names().iter().map(|s| s.to_string()).collect(),
            )
        }
        ParameterizationKind::SteadyState => {
            let map = reparam(cfg.model).ok_or_else(|| {
                CliError::Config("this model has no steady-state parameterization".into())
            })?;
            let names = map
                .stochastic_names()
                .iter()
                .map(|s| s.to_string())
                .collect();
            (Parameterization::SteadyState(map), names)
        }
    };
    let transforms = match &cfg.sampler.transforms {
        Some(t) => t.clone(),
        None => names
            .iter()
            .map(|n| match prior.get(n) {
                Some(PriorKind::Lognormal { .. }) => Transform::Log,
                _ => Transform::Identity,
            })
            .collect(),
    };
    ModelTarget::new(
        model.clone(),
        theta.to_vec(),
        parameterization,
        transforms,
        prior,
        likelihood,
    )
    .map_err(|e| CliError::Config(e.to_string()))
}
