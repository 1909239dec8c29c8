//! Pseudo-data generation: SDE paths, deterministic trajectories and noisy observations.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{drift_f64, Model};

/// RNG stream used for state noise; observation noise uses [`OBS_STREAM`].
pub const STATE_STREAM: u64 = 0;
pub const OBS_STREAM: u64 = 1;

/// Seeded generator on a given stream.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StimulusKind {
    #[default]
    None,
    /// Constant input `amplitude` for `start < t < end`.
    Pulse {
        start: f64,
        end: f64,
        amplitude: f64,
    },
}

/// Deterministic input added to the drift of one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct StimulusSpec {
    #[serde(flatten)]
    pub kind: StimulusKind,
    #[serde(default)]
    pub target: usize,
}

impl StimulusSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn pulse(start: f64, end: f64, amplitude: f64, target: usize) -> Result<Self> {
        if !(end > start) {
            return Err(Error::Domain(format!(
                "pulse end {end} must exceed start {start}"
            )));
        }
        Ok(StimulusSpec {
            kind: StimulusKind::Pulse {
                start,
                end,
                amplitude,
            },
            target,
        })
    }

    pub fn value_at(&self, t: f64) -> f64 {
        match self.kind {
            StimulusKind::None => 0.0,
            StimulusKind::Pulse {
                start,
                end,
                amplitude,
            } => {
                if t > start && t < end {
                    amplitude
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self.kind, StimulusKind::None)
    }
}

fn drift_with_stimulus<M: Model>(
    model: &M,
    x: &[f64],
    theta: &[f64],
    stim: &StimulusSpec,
    t: f64,
) -> DVector<f64> {
    let mut f = drift_f64(model, x, theta);
    let u = stim.value_at(t);
    if u != 0.0 {
        f[stim.target] += u;
    }
    f
}

/// Additive noise scale per unit `√h`: `gain·√c` on the noise state.
pub fn noise_scale<M: Model>(model: &M, theta: &[f64]) -> f64 {
    let c: f64 = model.noise_intensity(theta);
    let g: f64 = model.noise_gain(theta);
    g * c.max(0.0).sqrt()
}

/// One Euler–Maruyama step `x + hF(x) + √h·scale·z` with `z` drawn from `rng`.
pub fn em_step<M: Model, R: rand::Rng>(
    model: &M,
    theta: &[f64],
    x: &mut DVector<f64>,
    t: f64,
    h: f64,
    scale: f64,
    stim: &StimulusSpec,
    rng: &mut R,
) {
    let f = drift_with_stimulus(model, x.as_slice(), theta, stim, t);
    x.axpy(h, &f, 1.0);
    if scale != 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        x[model.noise_state()] += h.sqrt() * scale * z;
    }
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<M: Model>(
    model: &M,
    theta: &[f64],
    x: &mut DVector<f64>,
    t: f64,
    h: f64,
    stim: &StimulusSpec,
) {
    let k1 = drift_with_stimulus(model, x.as_slice(), theta, stim, t);
    let x2 = &*x + &k1 * (0.5 * h);
    let k2 = drift_with_stimulus(model, x2.as_slice(), theta, stim, t + 0.5 * h);
    let x3 = &*x + &k2 * (0.5 * h);
    let k3 = drift_with_stimulus(model, x3.as_slice(), theta, stim, t + 0.5 * h);
    let x4 = &*x + &k3 * h;
    let k4 = drift_with_stimulus(model, x4.as_slice(), theta, stim, t + h);
    *x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
}

fn step_count(t_end: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) || !(t_end >= 0.0) {
        return Err(Error::Domain(format!(
            "need h > 0 and T ≥ 0, got h = {h}, T = {t_end}"
        )));
    }
    Ok((t_end / h).round() as usize)
}

/// Rows are states at `t = 0, h, …, T`.
fn integrate<F>(x0: &DVector<f64>, steps: usize, h: f64, mut step: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&mut DVector<f64>, f64),
{
    let d = x0.len();
    let mut out = DMatrix::zeros(steps + 1, d);
    let mut x = x0.clone();
    out.set_row(0, &x.transpose());
    for k in 0..steps {
        let t = k as f64 * h;
        step(&mut x, t);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(t + h));
        }
        out.set_row(k + 1, &x.transpose());
    }
    Ok(out)
}

/// Euler–Maruyama path on `[0, T]`; rows are states at multiples of `solver_dt`.
pub fn euler_maruyama<M: Model>(
    model: &M,
    theta: &[f64],
    x0: &DVector<f64>,
    t_end: f64,
    solver_dt: f64,
    seed: u64,
    stim: &StimulusSpec,
) -> Result<DMatrix<f64>> {
    let steps = step_count(t_end, solver_dt)?;
    let scale = noise_scale(model, theta);
    let mut r = rng(seed, STATE_STREAM);
    integrate(x0, steps, solver_dt, |x, t| {
        em_step(model, theta, x, t, solver_dt, scale, stim, &mut r)
    })
}

/// Deterministic trajectory by fixed-step RK4 with the stimulus added to the drift.
pub fn ode_rk4<M: Model>(
    model: &M,
    theta: &[f64],
    x0: &DVector<f64>,
    t_end: f64,
    solver_dt: f64,
    stim: &StimulusSpec,
) -> Result<DMatrix<f64>> {
    let steps = step_count(t_end, solver_dt)?;
    integrate(x0, steps, solver_dt, |x, t| {
        rk4_step(model, theta, x, t, solver_dt, stim)
    })
}

/// `y_i = obs·x(row i·stride) + σ_obs·z_i` for every complete stride.
///
/// The final row is dropped when it would start a new observation interval,
/// so a path over `[0, T]` yields `T/obs_dt` observations.
pub fn observe(
    states: &DMatrix<f64>,
    obs_row: &DVector<f64>,
    stride: usize,
    sigma_obs: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if stride == 0 {
        return Err(Error::Domain(
            "observation stride must be at least 1".into(),
        ));
    }
    let n = (states.nrows().saturating_sub(1)) / stride;
    let n = n.max(usize::from(states.nrows() > 0));
    let mut r = rng(seed, OBS_STREAM);
    Ok((0..n)
        .map(|i| {
            let row = states.row(i * stride);
            let clean: f64 = row.iter().zip(obs_row.iter()).map(|(x, o)| x * o).sum();
            let z: f64 = if sigma_obs != 0.0 {
                StandardNormal.sample(&mut r)
            } else {
                0.0
            };
            clean + sigma_obs * z
        })
        .collect())
}

/// States on the solver grid plus the subsampled noisy observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub observations: Vec<f64>,
    pub solver_dt: f64,
    pub obs_dt: f64,
    pub seed: u64,
}

impl SimulatedPath {
    pub fn obs_times(&self) -> Vec<f64> {
        (0..self.observations.len())
            .map(|i| i as f64 * self.obs_dt)
            .collect()
    }
}

/// Integer ratio `obs_dt/solver_dt`, or an error if it is not an integer.
pub fn stride(obs_dt: f64, solver_dt: f64) -> Result<usize> {
    let r = obs_dt / solver_dt;
    let k = r.round();
    if k < 1.0 || (r - k).abs() > 1e-9 * r {
        return Err(Error::Domain(format!(
            "observation step {obs_dt} is not a multiple of solver step {solver_dt}"
        )));
    }
    Ok(k as usize)
}

/// How the latent path is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    Stochastic,
    Deterministic,
}

/// Simulates a path over `[0, T]` and observes it every `obs_dt` with noise `σ_obs` from the model.
#[allow(clippy::too_many_arguments)]
pub fn simulate_path<M: Model>(
    model: &M,
    theta: &[f64],
    x0: &DVector<f64>,
    t_end: f64,
    solver_dt: f64,
    obs_dt: f64,
    seed: u64,
    dynamics: Dynamics,
    stim: &StimulusSpec,
) -> Result<SimulatedPath> {
    let k = stride(obs_dt, solver_dt)?;
    let states = match dynamics {
        Dynamics::Stochastic => euler_maruyama(model, theta, x0, t_end, solver_dt, seed, stim)?,
        Dynamics::Deterministic => ode_rk4(model, theta, x0, t_end, solver_dt, stim)?,
    };
    let sigma: f64 = model.obs_noise_sd(theta);
    let observations = observe(&states, &model.obs_row(), k, sigma, seed)?;
    let times = (0..states.nrows()).map(|i| i as f64 * solver_dt).collect();
    Ok(SimulatedPath {
        times,
        states,
        observations,
        solver_dt,
        obs_dt,
        seed,
    })
}
