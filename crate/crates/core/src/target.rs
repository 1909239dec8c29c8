//! Posterior targets over unconstrained sampling coordinates.
//!
//! A sampling vector `u` is mapped coordinate-wise to `z` (identity or
//! exponential), then to the model pair `(θ, x*)` either directly (original
//! parameterization, equilibrium by Newton iteration) or through a
//! steady-state map. The log-target adds the prior in original coordinates,
//! the map's Jacobian correction and the transform's log-Jacobian.

use nalgebra::{DMatrix, DVector};
use num_dual::{Dual64, DualNum, HyperDual64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{
    ekf_loglik, kalman_loglik, ode_loglik_from, particle_loglik, whittle_loglik, FilterInit,
    LoglikResult, Periodogram,
};
use crate::model::{
    drift_param_derivative, find_equilibrium, jacobian, linearize_with_tangents, stability_check,
    LinearSystem, Model, Scalar, Tangent,
};
use crate::sampler::{Evaluation, LogDensity, Prior};
use crate::simulate::StimulusSpec;
use crate::spectral::{spectral_density, spectral_gradient, GradientRoute, SpectrumGrid};
use crate::zoo::{log_jacobian, AnyReparam, ReparamMap, Source};

/// Coordinate-wise map from sampling to model coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Identity,
    /// `z = exp(u)`, for positive quantities.
    Log,
}

impl Transform {
    pub fn apply<S: Scalar>(self, u: S) -> S {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
        }
    }

    pub fn inverse(self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Log => z.ln(),
        }
    }

    /// `log |dz/du|`.
    pub fn log_jacobian<S: Scalar>(self, u: S) -> S {
        match self {
            Transform::Identity => S::from(0.0),
            Transform::Log => u,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parameterization {
    /// Sample the listed parameter indices; the equilibrium is found by Newton iteration.
    Original { free: Vec<usize> },
    /// Sample the map's stochastic coordinates.
    SteadyState(AnyReparam),
}

/// Observed data together with backend settings.
#[derive(Debug, Clone, PartialEq)]
pub enum LikelihoodData {
    Whittle {
        periodogram: Periodogram,
    },
    Kalman {
        y: Vec<f64>,
        dt: f64,
    },
    Ekf {
        y: Vec<f64>,
        dt: f64,
        substeps: usize,
    },
    Particle {
        y: Vec<f64>,
        dt: f64,
        substeps: usize,
        particles: usize,
        seed: u64,
    },
    Ode {
        y: Vec<f64>,
        dt: f64,
        substeps: usize,
        stimulus: StimulusSpec,
    },
}

/// Relative step of the central differences used when analytic spectral
/// gradients are unavailable.
pub const FD_STEP: f64 = 1e-5;

/// Posterior over sampling coordinates for one model, prior and likelihood.
#[derive(Debug, Clone)]
pub struct ModelTarget<M: Model> {
    pub model: M,
    /// Values of parameters that are not sampled.
    pub base: Vec<f64>,
    pub parameterization: Parameterization,
    pub transforms: Vec<Transform>,
    pub prior: Prior,
    pub likelihood: LikelihoodData,
    prior_idx: Vec<usize>,
}

/// Diagnostics of one gradient evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct WhittleEvaluation {
    pub loglik: LoglikResult,
    pub grid: SpectrumGrid,
    pub route: GradientRoute,
}

impl<M: Model> ModelTarget<M> {
    pub fn new(
        model: M,
        base: Vec<f64>,
        parameterization: Parameterization,
        transforms: Vec<Transform>,
        prior: Prior,
        likelihood: LikelihoodData,
    ) -> Result<Self> {
        if base.len() != model.dim_params() {
            return Err(Error::Dimension(format!(
                "base parameter vector has {} entries, model has {}",
                base.len(),
                model.dim_params()
            )));
        }
        let required: Vec<usize> = match &parameterization {
            Parameterization::Original { free } => free.clone(),
            Parameterization::SteadyState(map) => map
                .sources()
                .iter()
                .filter_map(|s| match *s {
                    Source::Param(i) => Some(i),
                    Source::State(_) => None,
                })
                .chain(map.deterministic_indices())
                .collect(),
        };
        let names = model.param_names();
        let mut prior_idx = Vec::with_capacity(prior.components.len());
        for c in &prior.components {
            let i = model.param_index(&c.name).ok_or_else(|| {
                Error::Dimension(format!("prior names unknown parameter {}", c.name))
            })?;
            if !required.contains(&i) {
                return Err(Error::Dimension(format!(
                    "prior component {} is not a sampled parameter",
                    c.name
                )));
            }
            prior_idx.push(i);
        }
        if let Some(&missing) = required.iter().find(|i| !prior_idx.contains(i)) {
            return Err(Error::Dimension(format!("no prior for {}", names[missing])));
        }
        let target = ModelTarget {
            model,
            base,
            parameterization,
            transforms,
            prior,
            likelihood,
            prior_idx,
        };
        if target.transforms.len() != target.dim() {
            return Err(Error::Dimension(format!(
                "{} transforms for {} sampling coordinates",
                target.transforms.len(),
                target.dim()
            )));
        }
        Ok(target)
    }

    fn coords<S: Scalar>(&self, u: &[S]) -> Vec<S> {
        u.iter()
            .zip(&self.transforms)
            .map(|(&v, t)| t.apply(v))
            .collect()
    }

    /// Parameter vector from sampling coordinates, with the map's equilibrium if any.
    fn theta_generic<S: Scalar>(&self, u: &[S]) -> Result<(Vec<S>, Option<Vec<S>>)> {
        let z = self.coords(u);
        match &self.parameterization {
            Parameterization::Original { free } => {
                let mut th: Vec<S> = self.base.iter().map(|&v| S::from(v)).collect();
                for (k, &i) in free.iter().enumerate() {
                    th[i] = z[k];
                }
                Ok((th, None))
            }
            Parameterization::SteadyState(map) => {
                let (th, x) = map.forward(&z, &self.base)?;
                Ok((th, Some(x)))
            }
        }
    }

    /// `(θ, x*)` for sampling coordinates `u`.
    pub fn to_model(&self, u: &[f64]) -> Result<(Vec<f64>, DVector<f64>)> {
        let (th, x) = self.theta_generic(u)?;
        let x = match x {
            Some(x) => DVector::from_vec(x),
            None => find_equilibrium(&self.model, &th, &self.model.initial_guess(&th))?.x_star,
        };
        Ok((th, x))
    }

    /// Sampling coordinates of a known `(θ, x*)` pair.
    pub fn from_model(&self, theta: &[f64], x_star: &[f64]) -> Vec<f64> {
        let z = match &self.parameterization {
            Parameterization::Original { free } => free.iter().map(|&i| theta[i]).collect(),
            Parameterization::SteadyState(map) => map.inverse(theta, x_star),
        };
        z.iter()
            .zip(&self.transforms)
            .map(|(&v, t)| t.inverse(v))
            .collect()
    }

    /// Log prior in original coordinates plus both Jacobian corrections.
    pub fn prior_part<S: Scalar>(&self, u: &[S]) -> Result<S> {
        let (th, _) = self.theta_generic(u)?;
        let vals: Vec<S> = self.prior_idx.iter().map(|&i| th[i]).collect();
        let mut lp = self.prior.log_density(&vals);
        if lp.re() == f64::NEG_INFINITY {
            return Ok(lp);
        }
        if let Parameterization::SteadyState(map) = &self.parameterization {
            lp += log_jacobian(map, &self.coords(u), &self.base)?;
        }
        for (&v, t) in u.iter().zip(&self.transforms) {
            lp += t.log_jacobian(v);
        }
        Ok(lp)
    }

    fn stable_linearization(
        &self,
        theta: &[f64],
        x_star: &DVector<f64>,
        tangents: &[Tangent],
    ) -> Result<(LinearSystem, Vec<crate::model::LinearTangent>)> {
        let (sys, lt) = linearize_with_tangents(&self.model, theta, x_star, tangents);
        if !stability_check(&sys.a)?.is_stable {
            return Err(Error::Domain("equilibrium is not stable".into()));
        }
        Ok((sys, lt))
    }

    /// Log-likelihood at `(θ, x*)`.
    pub fn loglik(&self, theta: &[f64], x_star: &DVector<f64>) -> Result<f64> {
        Ok(self.loglik_result(theta, x_star)?.value)
    }

    /// Log-likelihood at `(θ, x*)` with the backend's diagnostics.
    pub fn loglik_result(&self, theta: &[f64], x_star: &DVector<f64>) -> Result<LoglikResult> {
        Ok(match &self.likelihood {
            LikelihoodData::Whittle { periodogram } => {
                let (sys, _) = self.stable_linearization(theta, x_star, &[])?;
                let grid = spectral_density(&sys, periodogram.n, periodogram.dt)?;
                whittle_loglik(periodogram, &grid)?
            }
            LikelihoodData::Kalman { y, dt } => {
                let (sys, _) = self.stable_linearization(theta, x_star, &[])?;
                kalman_loglik(&sys, y, *dt)?
            }
            LikelihoodData::Ekf { y, dt, substeps } => ekf_loglik(
                &self.model,
                theta,
                y,
                *dt,
                *substeps,
                &FilterInit::Stationary,
                &StimulusSpec::none(),
            )?,
            LikelihoodData::Particle {
                y,
                dt,
                substeps,
                particles,
                seed,
            } => particle_loglik(
                &self.model,
                theta,
                y,
                *dt,
                *substeps,
                *particles,
                *seed,
                &FilterInit::Stationary,
                &StimulusSpec::none(),
            )?,
            LikelihoodData::Ode {
                y,
                dt,
                substeps,
                stimulus,
            } => ode_loglik_from(&self.model, theta, x_star, y, *dt, *substeps, stimulus)?,
        })
    }

    fn try_log_density(&self, u: &[f64]) -> Result<f64> {
        let lp = self.prior_part(u)?;
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        let (th, x) = self.to_model(u)?;
        Ok(lp + self.loglik(&th, &x)?)
    }

    /// Directions `(dθ/du_j, dx*/du_j)` for every sampling coordinate.
    fn tangents(&self, u: &[f64], theta: &[f64], x_star: &DVector<f64>) -> Result<Vec<Tangent>> {
        let p = u.len();
        let mut out = Vec::with_capacity(p);
        for j in 0..p {
            let ud: Vec<Dual64> = u
                .iter()
                .enumerate()
                .map(|(k, &v)| Dual64::new(v, if k == j { 1.0 } else { 0.0 }))
                .collect();
            let (th, x) = self.theta_generic(&ud)?;
            let d_theta = DVector::from_iterator(th.len(), th.iter().map(|v| v.eps));
            let d_x = match x {
                Some(x) => DVector::from_iterator(x.len(), x.iter().map(|v| v.eps)),
                None => {
                    let j_x = jacobian(&self.model, x_star.as_slice(), theta);
                    let rhs = -drift_param_derivative(
                        &self.model,
                        x_star.as_slice(),
                        theta,
                        d_theta.as_slice(),
                    );
                    j_x.lu().solve(&rhs).ok_or_else(|| {
                        Error::Domain("singular Jacobian at the equilibrium".into())
                    })?
                }
            };
            out.push(Tangent { d_theta, d_x });
        }
        Ok(out)
    }

    /// `f̃` on the Whittle grid at sampling coordinates `u`.
    fn f_tilde_at(&self, u: &[f64], n: usize, dt: f64) -> Result<Vec<f64>> {
        let (th, x) = self.to_model(u)?;
        let (sys, _) = self.stable_linearization(&th, &x, &[])?;
        Ok(spectral_density(&sys, n, dt)?.f_tilde)
    }

    /// Whittle log-likelihood with its gradient and Fisher information in
    /// sampling coordinates. Falls back to central differences of `f̃` when
    /// eigenvalues are nearly repeated.
    pub fn whittle_with_gradient(&self, u: &[f64]) -> Result<WhittleEvaluation> {
        let LikelihoodData::Whittle { periodogram } = &self.likelihood else {
            return Err(Error::Domain(
                "gradients are only available for the Whittle likelihood".into(),
            ));
        };
        let (n, dt) = (periodogram.n, periodogram.dt);
        let (th, x) = self.to_model(u)?;
        let tangents = self.tangents(u, &th, &x)?;
        let (sys, lt) = self.stable_linearization(&th, &x, &tangents)?;
        let (mut grid, route) = spectral_gradient(&sys, &lt, n, dt)?;
        if route == GradientRoute::FallbackRequired {
            let mut grads = Vec::with_capacity(u.len());
            for j in 0..u.len() {
                let h = FD_STEP * u[j].abs().max(1.0);
                let mut up = u.to_vec();
                up[j] += h;
                let mut um = u.to_vec();
                um[j] -= h;
                let fp = self.f_tilde_at(&up, n, dt)?;
                let fm = self.f_tilde_at(&um, n, dt)?;
                grads.push(
                    fp.iter()
                        .zip(&fm)
                        .map(|(a, b)| (a - b) / (2.0 * h))
                        .collect(),
                );
            }
            grid.grad_f_tilde = Some(grads);
        }
        let loglik = whittle_loglik(periodogram, &grid)?;
        Ok(WhittleEvaluation {
            loglik,
            grid,
            route,
        })
    }

    /// Gradient and Hessian of [`Self::prior_part`] by hyper-dual numbers.
    pub fn prior_derivatives(&self, u: &[f64]) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let p = u.len();
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let mut value = self.prior_part(u)?;
        if p == 0 {
            return Ok((value, grad, hess));
        }
        for i in 0..p {
            for j in i..p {
                let uh: Vec<HyperDual64> = u
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| HyperDual64::new(v, f64::from(k == i), f64::from(k == j), 0.0))
                    .collect();
                let r = self.prior_part(&uh)?;
                value = r.re();
                if i == j {
                    grad[i] = r.eps1;
                }
                hess[(i, j)] = r.eps1eps2;
                hess[(j, i)] = r.eps1eps2;
            }
        }
        Ok((value, grad, hess))
    }

    fn try_evaluate(&self, u: &[f64]) -> Result<Evaluation> {
        if !matches!(self.likelihood, LikelihoodData::Whittle { .. }) {
            return Ok(Evaluation::value(self.try_log_density(u)?));
        }
        let (lp, g_prior, h_prior) = self.prior_derivatives(u)?;
        if !lp.is_finite() {
            return Ok(Evaluation::rejected());
        }
        let w = self.whittle_with_gradient(u)?;
        let (Some(g_lik), Some(fisher)) = (w.loglik.gradient, w.loglik.fisher) else {
            return Ok(Evaluation::value(lp + w.loglik.value));
        };
        let mut curv = fisher - h_prior;
        let p = u.len();
        let trace = curv.trace();
        let ridge = 1e-8 * if trace > 0.0 { trace / p as f64 } else { 1.0 };
        for i in 0..p {
            curv[(i, i)] += ridge;
        }
        Ok(Evaluation {
            log_post: lp + w.loglik.value,
            gradient: Some(g_lik + g_prior),
            curvature: Some(curv),
        })
    }
}

impl<M: Model> LogDensity for ModelTarget<M> {
    fn dim(&self) -> usize {
        match &self.parameterization {
            Parameterization::Original { free } => free.len(),
            Parameterization::SteadyState(map) => map.sources().len(),
        }
    }

    fn names(&self) -> Vec<String> {
        match &self.parameterization {
            Parameterization::Original { free } => {
                let names = self.model.param_names();
                free.iter().map(|&i| names[i].to_string()).collect()
            }
            Parameterization::SteadyState(map) => map
                .stochastic_names()
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        match self.try_log_density(u) {
            Ok(v) if !v.is_nan() => v,
            _ => f64::NEG_INFINITY,
        }
    }

    fn evaluate(&self, u: &[f64]) -> Evaluation {
        match self.try_evaluate(u) {
            Ok(e) if !e.log_post.is_nan() => e,
            _ => Evaluation::rejected(),
        }
    }
}
