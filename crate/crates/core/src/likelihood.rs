//! Likelihood backends: Whittle, Kalman filter on the linearization,
//! extended Kalman filter, bootstrap particle filter and the deterministic
//! Gaussian likelihood.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{drift_f64, find_equilibrium, jacobian, linearize, LinearSystem, Model};
use crate::simulate::{em_step, noise_scale, rk4_step, rng, StimulusSpec, STATE_STREAM};
use crate::spectral::{whittle_fisher, SpectrumGrid};

/// Squared DFT moduli under the unitary convention, `S_k = |Σ_l x_l e^{−i2πkl/n}|²/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Periodogram {
    /// Values at every index `k = 0, …, n−1`.
    pub s: Vec<f64>,
    pub n: usize,
    pub dt: f64,
    pub mean_removed: bool,
}

impl Periodogram {
    /// Ordinates on the Whittle grid `k = 1, …, n/2 − 1`.
    pub fn whittle_ordinates(&self) -> &[f64] {
        &self.s[1..self.n / 2]
    }
}

pub fn periodogram(y: &[f64], dt: f64, remove_mean: bool) -> Result<Periodogram> {
    let n = y.len();
    if n < 4 || n % 2 != 0 {
        return Err(Error::Length(n));
    }
    let mean = if remove_mean {
        y.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let mut buf: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let s = buf.iter().map(|z| z.norm_sqr() / n as f64).collect();
    Ok(Periodogram {
        s,
        n,
        dt,
        mean_removed: remove_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Whittle,
    Kalman,
    Ekf,
    Particle,
    Ode,
}

impl Backend {
    /// Whether the backend supplies a gradient and curvature.
    pub fn has_gradient(self) -> bool {
        matches!(self, Backend::Whittle)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Diagnostic {
    #[default]
    None,
    /// Effective particle count after weighting, one per observation.
    ParticleEss(Vec<f64>),
    /// One-step-ahead prediction errors of a Kalman-type filter.
    Innovations(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoglikResult {
    pub value: f64,
    pub gradient: Option<DVector<f64>>,
    pub fisher: Option<DMatrix<f64>>,
    pub backend: Backend,
    pub diagnostic: Diagnostic,
}

impl LoglikResult {
    fn plain(value: f64, backend: Backend) -> Self {
        LoglikResult {
            value,
            gradient: None,
            fisher: None,
            backend,
            diagnostic: Diagnostic::None,
        }
    }

    /// Rejection sentinel.
    pub fn neg_infinity(backend: Backend) -> Self {
        Self::plain(f64::NEG_INFINITY, backend)
    }
}

fn check_grid(p: &Periodogram, grid: &SpectrumGrid) -> Result<()> {
    let expected = p.n / 2 - 1;
    if grid.n != p.n || grid.f_tilde.len() != expected || (grid.dt - p.dt).abs() > 1e-12 * p.dt {
        return Err(Error::Dimension(format!(
            "spectrum grid (n = {}, dt = {}) does not match periodogram (n = {}, dt = {})",
            grid.n, grid.dt, p.n, p.dt
        )));
    }
    if let Some(k) = grid.f_tilde.iter().position(|&f| !(f > 0.0)) {
        return Err(Error::NonpositiveDensity(k + 1));
    }
    Ok(())
}

/// `ℓ = Σ_{k=1}^{n/2−1} [−log f̃_k − S_k/f̃_k]`, with gradient and expected
/// information attached when the grid carries `∂f̃`.
pub fn whittle_loglik(p: &Periodogram, grid: &SpectrumGrid) -> Result<LoglikResult> {
    check_grid(p, grid)?;
    let value = p
        .whittle_ordinates()
        .iter()
        .zip(&grid.f_tilde)
        .map(|(s, f)| -f.ln() - s / f)
        .sum();
    let gradient = match grid.grad_f_tilde {
        Some(_) => Some(whittle_grad(p, grid)?),
        None => None,
    };
    Ok(LoglikResult {
        value,
        gradient,
        fisher: whittle_fisher(grid),
        backend: Backend::Whittle,
        diagnostic: Diagnostic::None,
    })
}

/// `∂ℓ/∂θ_m = Σ_k (S_k/f̃_k² − 1/f̃_k)·∂f̃_k/∂θ_m`.
pub fn whittle_grad(p: &Periodogram, grid: &SpectrumGrid) -> Result<DVector<f64>> {
    check_grid(p, grid)?;
    let grad = grid
        .grad_f_tilde
        .as_ref()
        .ok_or_else(|| Error::Dimension("spectrum grid carries no gradient".into()))?;
    let w: Vec<f64> = p
        .whittle_ordinates()
        .iter()
        .zip(&grid.f_tilde)
        .map(|(s, f)| s / (f * f) - 1.0 / f)
        .collect();
    Ok(DVector::from_iterator(
        grad.len(),
        grad.iter()
            .map(|g| g.iter().zip(&w).map(|(a, b)| a * b).sum()),
    ))
}

/// Exact discretization of a linear SDE over one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretized {
    /// `exp(A·dt)`.
    pub phi: DMatrix<f64>,
    /// `∫₀^dt exp(As)·Σ·exp(Aᵀs) ds` with `Σ = c·bbᵀ`.
    pub q: DMatrix<f64>,
    pub h: DVector<f64>,
    /// Observation-noise variance.
    pub r: f64,
}

/// Van Loan block exponential: returns `(exp(A·dt), Q)`.
fn van_loan(a: &DMatrix<f64>, sigma: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = a.nrows();
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(&(-a * dt));
    m.view_mut((0, d), (d, d)).copy_from(&(sigma * dt));
    m.view_mut((d, d), (d, d)).copy_from(&(a.transpose() * dt));
    let e = m.exp();
    let phi = e.view((d, d), (d, d)).transpose();
    let q = &phi * e.view((0, d), (d, d));
    let q = (&q + q.transpose()) * 0.5;
    (phi, q)
}

pub fn discretize_lti(sys: &LinearSystem, dt: f64) -> Discretized {
    let (phi, q) = van_loan(&sys.a, &sys.diffusion(), dt);
    Discretized {
        phi,
        q,
        h: sys.obs_row.clone(),
        r: sys.obs_noise_sd * sys.obs_noise_sd,
    }
}

/// Solution of `P = ΦPΦᵀ + Q` through the Kronecker form `(I − Φ⊗Φ)vec P = vec Q`.
pub fn stationary_covariance(phi: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = phi.nrows();
    let kron = DMatrix::identity(d * d, d * d) - phi.kronecker(phi);
    let rhs = DVector::from_column_slice(q.as_slice());
    let v = kron
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Domain("no stationary covariance (unstable transition)".into()))?;
    let p = DMatrix::from_column_slice(d, d, v.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

fn gauss_logpdf(e: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + e * e / var)
}

/// Scalar-observation measurement update; returns the log predictive density.
fn kalman_update(
    m: &mut DVector<f64>,
    p: &mut DMatrix<f64>,
    h: &DVector<f64>,
    r: f64,
    y: f64,
    innov: &mut Vec<f64>,
) -> Result<f64> {
    let ph = &*p * h;
    let s = h.dot(&ph) + r;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::FilterDivergence(innov.len()));
    }
    let e = y - h.dot(m);
    innov.push(e);
    let k = &ph / s;
    m.axpy(e, &k, 1.0);
    p.ger(-s, &k, &k, 1.0);
    Ok(gauss_logpdf(e, s))
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let d = p.nrows();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

/// Exact Gaussian log-likelihood of the linearized model by the prediction-error
/// decomposition, started from the stationary distribution.
pub fn kalman_loglik(sys: &LinearSystem, y: &[f64], dt: f64) -> Result<LoglikResult> {
    let disc = discretize_lti(sys, dt);
    let mut p = stationary_covariance(&disc.phi, &disc.q)?;
    // Deviations from the equilibrium; observations are offset by obs·x*.
    let offset = disc.h.dot(&sys.x_star);
    let d = sys.dim();
    let mut m = DVector::zeros(d);
    let mut value = 0.0;
    let mut innov = Vec::with_capacity(y.len());
    let mut tmp = DMatrix::zeros(d, d);
    let phi_t = disc.phi.transpose();
    for (i, &yi) in y.iter().enumerate() {
        if i > 0 {
            m = &disc.phi * &m;
            tmp.gemm(1.0, &disc.phi, &p, 0.0);
            p.gemm(1.0, &tmp, &phi_t, 0.0);
            p += &disc.q;
            symmetrize(&mut p);
        }
        value += match kalman_update(&mut m, &mut p, &disc.h, disc.r, yi - offset, &mut innov) {
            Ok(v) => v,
            Err(_) => return Ok(LoglikResult::neg_infinity(Backend::Kalman)),
        };
    }
    Ok(LoglikResult {
        value,
        gradient: None,
        fisher: None,
        backend: Backend::Kalman,
        diagnostic: Diagnostic::Innovations(innov),
    })
}

/// Initial state distribution for the time-domain filters.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterInit {
    /// Stationary distribution of the linearization at the stable equilibrium.
    Stationary,
    /// Known initial state.
    Point(DVector<f64>),
}

fn stable_equilibrium<M: Model>(model: &M, theta: &[f64]) -> Result<LinearSystem> {
    let eq = find_equilibrium(model, theta, &model.initial_guess(theta))?;
    Ok(linearize(model, theta, &eq))
}

fn initial_moments<M: Model>(
    model: &M,
    theta: &[f64],
    dt: f64,
    init: &FilterInit,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    match init {
        FilterInit::Point(x0) => Ok((x0.clone(), DMatrix::zeros(x0.len(), x0.len()))),
        FilterInit::Stationary => {
            let sys = stable_equilibrium(model, theta)?;
            let disc = discretize_lti(&sys, dt);
            let p = stationary_covariance(&disc.phi, &disc.q)?;
            Ok((sys.x_star, p))
        }
    }
}

/// Extended Kalman filter that relinearizes at the current mean on every
/// substep and propagates mean and covariance through the exact solution of
/// the local affine model, so it coincides with the Kalman filter on affine models.
#[allow(clippy::too_many_arguments)]
pub fn ekf_loglik<M: Model>(
    model: &M,
    theta: &[f64],
    y: &[f64],
    dt: f64,
    substeps: usize,
    init: &FilterInit,
    stim: &StimulusSpec,
) -> Result<LoglikResult> {
    if substeps == 0 {
        return Err(Error::Domain("substeps must be at least 1".into()));
    }
    let (mut m, mut p) = initial_moments(model, theta, dt, init)?;
    let d = m.len();
    let h = dt / substeps as f64;
    let obs = model.obs_row();
    let sd: f64 = model.obs_noise_sd(theta);
    let r = sd * sd;
    let c: f64 = model.noise_intensity(theta);
    let mut b = DVector::zeros(d);
    b[model.noise_state()] = model.noise_gain(theta);
    let sigma = &b * b.transpose() * c;
    let mut value = 0.0;
    let mut innov = Vec::with_capacity(y.len());
    for (i, &yi) in y.iter().enumerate() {
        if i > 0 {
            for s in 0..substeps {
                let t = (i - 1) as f64 * dt + s as f64 * h;
                let j = jacobian(model, m.as_slice(), theta);
                let mut f = drift_f64(model, m.as_slice(), theta);
                f[stim.target] += stim.value_at(t);
                let mut aug = DMatrix::zeros(d + 1, d + 1);
                aug.view_mut((0, 0), (d, d)).copy_from(&(&j * h));
                aug.view_mut((0, d), (d, 1)).copy_from(&(&f * h));
                let e = aug.exp();
                m += e.view((0, d), (d, 1));
                let (phi, q) = van_loan(&j, &sigma, h);
                p = &phi * &p * phi.transpose() + q;
                symmetrize(&mut p);
            }
            if !m.iter().all(|v| v.is_finite()) {
                return Ok(LoglikResult::neg_infinity(Backend::Ekf));
            }
        }
        value += match kalman_update(&mut m, &mut p, &obs, r, yi, &mut innov) {
            Ok(v) => v,
            Err(_) => return Ok(LoglikResult::neg_infinity(Backend::Ekf)),
        };
    }
    Ok(LoglikResult {
        value,
        gradient: None,
        fisher: None,
        backend: Backend::Ekf,
        diagnostic: Diagnostic::Innovations(innov),
    })
}

/// Matrix square root `L` with `LLᵀ = P` for a symmetric positive semi-definite `P`.
fn psd_sqrt(p: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(p.clone());
    let mut v = eig.eigenvectors;
    for (k, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        v.column_mut(k).scale_mut(s);
    }
    v
}

/// `log Σ_i exp(a_i) − log n`.
fn log_mean_exp(a: &[f64]) -> f64 {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + (a.iter().map(|v| (v - max).exp()).sum::<f64>() / a.len() as f64).ln()
}

/// Bootstrap particle filter with Euler–Maruyama transitions on the substep grid
/// and systematic resampling after every observation.
///
/// Returns the logarithm of the unbiased likelihood estimator; the diagnostic
/// holds the effective particle count at each observation.
#[allow(clippy::too_many_arguments)]
pub fn particle_loglik<M: Model>(
    model: &M,
    theta: &[f64],
    y: &[f64],
    dt: f64,
    substeps: usize,
    n_particles: usize,
    seed: u64,
    init: &FilterInit,
    stim: &StimulusSpec,
) -> Result<LoglikResult> {
    if n_particles < 2 {
        return Err(Error::Domain(
            "particle filter needs at least 2 particles".into(),
        ));
    }
    if substeps == 0 {
        return Err(Error::Domain("substeps must be at least 1".into()));
    }
    let sd: f64 = model.obs_noise_sd(theta);
    if !(sd > 0.0) {
        return Err(Error::Domain(
            "particle filter needs positive observation noise".into(),
        ));
    }
    let (m0, p0) = initial_moments(model, theta, dt, init)?;
    let mut r = rng(seed, STATE_STREAM);
    let root = psd_sqrt(&p0);
    let d = m0.len();
    let mut particles: Vec<DVector<f64>> = (0..n_particles)
        .map(|_| {
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut r));
            &m0 + &root * z
        })
        .collect();
    let obs = model.obs_row();
    let scale = noise_scale(model, theta);
    let h = dt / substeps as f64;
    let mut value = 0.0;
    let mut ess = Vec::with_capacity(y.len());
    let mut logw = vec![0.0; n_particles];
    for (i, &yi) in y.iter().enumerate() {
        if i > 0 {
            for x in particles.iter_mut() {
                for s in 0..substeps {
                    let t = (i - 1) as f64 * dt + s as f64 * h;
                    em_step(model, theta, x, t, h, scale, stim, &mut r);
                }
            }
        }
        for (lw, x) in logw.iter_mut().zip(&particles) {
            let e = yi - obs.dot(x);
            *lw = if e.is_finite() {
                gauss_logpdf(e, sd * sd)
            } else {
                f64::NEG_INFINITY
            };
        }
        let lme = log_mean_exp(&logw);
        if !lme.is_finite() {
            return Ok(LoglikResult {
                diagnostic: Diagnostic::ParticleEss(ess),
                ..LoglikResult::neg_infinity(Backend::Particle)
            });
        }
        value += lme;
        let w: Vec<f64> = logw
            .iter()
            .map(|lw| (lw - lme).exp() / n_particles as f64)
            .collect();
        ess.push(1.0 / w.iter().map(|v| v * v).sum::<f64>());
        particles = systematic_resample(&particles, &w, r.gen::<f64>());
    }
    Ok(LoglikResult {
        value,
        gradient: None,
        fisher: None,
        backend: Backend::Particle,
        diagnostic: Diagnostic::ParticleEss(ess),
    })
}

/// Systematic resampling with offsets `(u + k)/N`.
fn systematic_resample<T: Clone>(items: &[T], weights: &[f64], u: f64) -> Vec<T> {
    let n = items.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut j = 0;
    for k in 0..n {
        let target = (u + k as f64) / n as f64;
        while cum < target && j + 1 < n {
            j += 1;
            cum += weights[j];
        }
        out.push(items[j].clone());
    }
    out
}

/// `Σ_i log N(y_i; pred_i, σ²)`.
pub fn gaussian_obs_loglik(pred: &[f64], y: &[f64], sigma: f64) -> f64 {
    pred.iter()
        .zip(y)
        .map(|(p, y)| gauss_logpdf(y - p, sigma * sigma))
        .sum()
}

/// Gaussian likelihood of observations around a deterministic RK4 trajectory
/// started at the stable equilibrium.
pub fn ode_loglik<M: Model>(
    model: &M,
    theta: &[f64],
    y: &[f64],
    dt: f64,
    substeps: usize,
    stim: &StimulusSpec,
) -> Result<LoglikResult> {
    let eq = find_equilibrium(model, theta, &model.initial_guess(theta))?;
    ode_loglik_from(model, theta, &eq.x_star, y, dt, substeps, stim)
}

/// [`ode_loglik`] with a known initial state.
pub fn ode_loglik_from<M: Model>(
    model: &M,
    theta: &[f64],
    x0: &DVector<f64>,
    y: &[f64],
    dt: f64,
    substeps: usize,
    stim: &StimulusSpec,
) -> Result<LoglikResult> {
    if substeps == 0 {
        return Err(Error::Domain("substeps must be at least 1".into()));
    }
    let pred = ode_predictions(model, theta, x0, y.len(), dt, substeps, stim);
    let sd: f64 = model.obs_noise_sd(theta);
    let value = if pred.iter().all(|v| v.is_finite()) {
        gaussian_obs_loglik(&pred, y, sd)
    } else {
        f64::NEG_INFINITY
    };
    Ok(LoglikResult::plain(value, Backend::Ode))
}

/// Readouts `obs·x(i·dt)` for `i = 0, …, n−1` along an RK4 trajectory.
pub fn ode_predictions<M: Model>(
    model: &M,
    theta: &[f64],
    x0: &DVector<f64>,
    n: usize,
    dt: f64,
    substeps: usize,
    stim: &StimulusSpec,
) -> Vec<f64> {
    let obs = model.obs_row();
    let h = dt / substeps as f64;
    let mut x = x0.clone();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            for s in 0..substeps {
                rk4_step(
                    model,
                    theta,
                    &mut x,
                    (i - 1) as f64 * dt + s as f64 * h,
                    h,
                    stim,
                );
            }
        }
        out.push(obs.dot(&x));
    }
    out
}
