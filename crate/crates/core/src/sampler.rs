//! Priors, Metropolis-within-Gibbs and simplified manifold MALA kernels, and
//! chain diagnostics.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Scalar;
use crate::simulate::{rng, STATE_STREAM};
use crate::zoo::npm::PRIOR_TABLE;

/// One independent prior component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorKind {
    /// Log-normal with the given density mode, so `ln x ~ N(ln mode + s², s²)`.
    Lognormal {
        mode: f64,
        log_sd: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
}

impl PriorKind {
    pub fn log_density<S: Scalar>(&self, x: S) -> S {
        match *self {
            PriorKind::Lognormal { mode, log_sd } => {
                if x.re() <= 0.0 {
                    return S::from(f64::NEG_INFINITY);
                }
                let mu = mode.ln() + log_sd * log_sd;
                let lx = x.ln();
                let z = (lx - mu) / log_sd;
                -lx - (log_sd * (2.0 * PI).sqrt()).ln() - z * z * 0.5
            }
            PriorKind::Uniform { lo, hi } => {
                if x.re() > lo && x.re() < hi {
                    S::from(-(hi - lo).ln())
                } else {
                    S::from(f64::NEG_INFINITY)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorComponent {
    pub name: String,
    #[serde(flatten)]
    pub kind: PriorKind,
}

/// Product of independent components, one per named parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Prior {
    pub components: Vec<PriorComponent>,
}

impl Prior {
    pub fn new(components: Vec<(&str, PriorKind)>) -> Self {
        Prior {
            components: components
                .into_iter()
                .map(|(n, kind)| PriorComponent {
                    name: n.to_string(),
                    kind,
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&PriorKind> {
        self.components
            .iter()
            .find(|c| c.name == name)
            .map(|c| &c.kind)
    }

    pub fn names(&self) -> Vec<&str> {
        self.components.iter().map(|c| c.name.as_str()).collect()
    }

    /// Sum of component log-densities; values are in component order.
    pub fn log_density<S: Scalar>(&self, values: &[S]) -> S {
        self.components
            .iter()
            .zip(values)
            .fold(S::from(0.0), |acc, (c, &v)| acc + c.kind.log_density(v))
    }

    /// Log-normal prior of the neural population model.
    pub fn npm() -> Self {
        #[derive(Deserialize)]
        struct Entry {
            mode: f64,
            log_sd: f64,
        }
        let table: BTreeMap<String, Entry> =
            toml::from_str(PRIOR_TABLE).expect("bundled prior table parses");
        Prior {
            components: table
                .into_iter()
                .map(|(name, e)| PriorComponent {
                    name,
                    kind: PriorKind::Lognormal {
                        mode: e.mode,
                        log_sd: e.log_sd,
                    },
                })
                .collect(),
        }
    }

    /// Wide uniform prior for the deterministic FitzHugh–Nagumo problem.
    pub fn fhn_uniform() -> Self {
        Prior::new(vec![
            ("a", PriorKind::Uniform { lo: -1e3, hi: 1e3 }),
            ("b", PriorKind::Uniform { lo: 0.0, hi: 1e5 }),
            ("c", PriorKind::Uniform { lo: 0.0, hi: 1e3 }),
            ("I0", PriorKind::Uniform { lo: -1e4, hi: 1e4 }),
        ])
    }
}

/// `log p(θ)` for values given in component order.
pub fn log_prior(prior: &Prior, theta: &[f64]) -> f64 {
    prior.log_density(theta)
}

/// Log-density value with optional gradient and positive-definite curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub log_post: f64,
    pub gradient: Option<DVector<f64>>,
    pub curvature: Option<DMatrix<f64>>,
}

impl Evaluation {
    pub fn value(log_post: f64) -> Self {
        Evaluation {
            log_post,
            gradient: None,
            curvature: None,
        }
    }

    pub fn rejected() -> Self {
        Self::value(f64::NEG_INFINITY)
    }
}

/// Unnormalized log-density over an unconstrained sampling vector.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn names(&self) -> Vec<String>;
    fn log_density(&self, u: &[f64]) -> f64;

    /// Value, gradient and curvature; targets without derivatives return the value only.
    fn evaluate(&self, u: &[f64]) -> Evaluation {
        Evaluation::value(self.log_density(u))
    }
}

/// Sampler output.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// `iters × p` draws, one row per iteration.
    pub draws: DMatrix<f64>,
    pub log_post: Vec<f64>,
    /// Acceptance flags per iteration; one per parameter block for MwG, one for smMALA.
    pub accepted: Vec<Vec<bool>>,
    pub seed: u64,
    pub elapsed_seconds: f64,
    pub param_names: Vec<String>,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.log_post.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_post.is_empty()
    }

    /// Fraction of accepted proposals over all blocks.
    pub fn acceptance_rate(&self) -> f64 {
        let (acc, tot) = self
            .accepted
            .iter()
            .flatten()
            .fold((0usize, 0usize), |(a, t), &b| (a + usize::from(b), t + 1));
        if tot == 0 {
            0.0
        } else {
            acc as f64 / tot as f64
        }
    }

    /// Draws of parameter `j` from iteration `start` on.
    pub fn column_from(&self, j: usize, start: usize) -> Vec<f64> {
        self.draws.column(j).iter().skip(start).copied().collect()
    }
}

fn check_init<T: LogDensity + ?Sized>(target: &T, init: &[f64]) -> Result<()> {
    if init.len() != target.dim() {
        return Err(Error::Dimension(format!(
            "initial point has {} entries, target has {}",
            init.len(),
            target.dim()
        )));
    }
    Ok(())
}

/// Metropolis-within-Gibbs: one Gaussian random-walk update per coordinate per
/// sweep, in declaration order.
pub fn mwg_run<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    proposal_sds: &[f64],
    iters: usize,
    seed: u64,
) -> Result<Chain> {
    check_init(target, init)?;
    if proposal_sds.len() != init.len() {
        return Err(Error::Dimension(
            "one proposal s.d. per parameter required".into(),
        ));
    }
    let start = Instant::now();
    let p = init.len();
    let mut r = rng(seed, STATE_STREAM);
    let mut u = init.to_vec();
    let mut lp = target.log_density(&u);
    if !lp.is_finite() {
        return Err(Error::InitInvalid);
    }
    let mut draws = DMatrix::zeros(iters, p);
    let mut log_post = Vec::with_capacity(iters);
    let mut accepted = Vec::with_capacity(iters);
    for it in 0..iters {
        let mut flags = vec![false; p];
        for j in 0..p {
            let z: f64 = StandardNormal.sample(&mut r);
            let old = u[j];
            u[j] = old + proposal_sds[j] * z;
            let lp_new = target.log_density(&u);
            let log_u = r.gen::<f64>().ln();
            if lp_new.is_finite() && log_u < lp_new - lp {
                lp = lp_new;
                flags[j] = true;
            } else {
                u[j] = old;
            }
        }
        draws.row_mut(it).copy_from_slice(&u);
        log_post.push(lp);
        accepted.push(flags);
    }
    Ok(Chain {
        draws,
        log_post,
        accepted,
        seed,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        param_names: target.names(),
    })
}

/// Cholesky factor of a curvature matrix. When the plain factorization fails
/// the eigenvalues are replaced by their magnitudes, floored at `1e-8` of the
/// largest, so indefinite directions keep their curvature scale.
pub fn regularized_cholesky(g: &DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if !g.iter().all(|v| v.is_finite()) {
        return None;
    }
    if let Some(c) = Cholesky::new(g.clone()) {
        return Some(c);
    }
    let eig = SymmetricEigen::new(g.clone());
    let max = eig.eigenvalues.iter().map(|l| l.abs()).fold(0.0, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let floor = 1e-8 * max;
    let lam = eig.eigenvalues.map(|l| l.abs().max(floor));
    let fixed = &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose();
    Cholesky::new((&fixed + fixed.transpose()) * 0.5)
}

/// State of the smMALA kernel at one point.
struct ManifoldPoint {
    u: DVector<f64>,
    log_post: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl ManifoldPoint {
    /// Proposal `N(u + ½Cg, C)` with `C = h²G⁻¹`.
    fn new(u: DVector<f64>, e: Evaluation, h: f64) -> Option<Self> {
        if !e.log_post.is_finite() {
            return None;
        }
        let g = e.gradient?;
        let chol = regularized_cholesky(&e.curvature?)?;
        let drift = chol.solve(&g) * (0.5 * h * h);
        Some(ManifoldPoint {
            mean: &u + drift,
            u,
            log_post: e.log_post,
            chol,
        })
    }

    /// `log N(x; mean, h²G⁻¹)`.
    fn log_proposal(&self, x: &DVector<f64>, h: f64) -> f64 {
        let p = x.len() as f64;
        let diff = x - &self.mean;
        let l = self.chol.l();
        let quad = (l.transpose() * &diff).norm_squared() / (h * h);
        let log_det_g: f64 = l.diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        -0.5 * quad + 0.5 * log_det_g - p * h.ln() - 0.5 * p * (2.0 * PI).ln()
    }

    fn draw<R: Rng>(&self, h: f64, r: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.u.len(), |_, _| StandardNormal.sample(r));
        let step = self
            .chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + step * h
    }
}

/// Simplified manifold MALA with curvature-preconditioned Langevin proposals
/// and a Metropolis–Hastings correction.
pub fn smmala_run<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    h: f64,
    iters: usize,
    seed: u64,
) -> Result<Chain> {
    check_init(target, init)?;
    if !(h > 0.0) {
        return Err(Error::Domain("step size must be positive".into()));
    }
    let start = Instant::now();
    let p = init.len();
    let mut r = rng(seed, STATE_STREAM);
    let u0 = DVector::from_column_slice(init);
    let e0 = target.evaluate(init);
    if e0.log_post.is_finite() && (e0.gradient.is_none() || e0.curvature.is_none()) {
        return Err(Error::Domain(
            "smMALA needs a target with gradient and curvature".into(),
        ));
    }
    let mut cur = ManifoldPoint::new(u0, e0, h).ok_or(Error::InitInvalid)?;
    let mut draws = DMatrix::zeros(iters, p);
    let mut log_post = Vec::with_capacity(iters);
    let mut accepted = Vec::with_capacity(iters);
    for it in 0..iters {
        let prop = cur.draw(h, &mut r);
        let log_u = r.gen::<f64>().ln();
        let mut acc = false;
        if prop.iter().all(|v| v.is_finite()) {
            let e = target.evaluate(prop.as_slice());
            if let Some(next) = ManifoldPoint::new(prop, e, h) {
                let ratio = next.log_post - cur.log_post + next.log_proposal(&cur.u, h)
                    - cur.log_proposal(&next.u, h);
                if log_u < ratio {
                    cur = next;
                    acc = true;
                }
            }
        }
        draws.row_mut(it).copy_from(&cur.u.transpose());
        log_post.push(cur.log_post);
        accepted.push(vec![acc]);
    }
    Ok(Chain {
        draws,
        log_post,
        accepted,
        seed,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        param_names: target.names(),
    })
}

/// Multivariate normal target with exact gradient and curvature.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl GaussianTarget {
    pub fn new(mean: DVector<f64>, covariance: &DMatrix<f64>) -> Result<Self> {
        let precision = covariance
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Domain("covariance is singular".into()))?;
        Ok(GaussianTarget { mean, precision })
    }
}

impl LogDensity for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }

    fn log_density(&self, u: &[f64]) -> f64 {
        let d = DVector::from_column_slice(u) - &self.mean;
        -0.5 * d.dot(&(&self.precision * &d))
    }

    fn evaluate(&self, u: &[f64]) -> Evaluation {
        let d = DVector::from_column_slice(u) - &self.mean;
        let g = -(&self.precision * &d);
        Evaluation {
            log_post: 0.5 * d.dot(&g),
            gradient: Some(g),
            curvature: Some(self.precision.clone()),
        }
    }
}

/// Effective sample size `n/(1 + 2Σρ_k)` with Geyer's initial positive
/// sequence truncation. Degenerate chains return 1.
pub fn ess(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex64> = x
        .iter()
        .map(|v| Complex64::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(m)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex64::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let c0 = buf[0].re;
    if !(c0 > 1e-300 * n as f64) {
        return 1.0;
    }
    let rho = |k: usize| buf[k].re / c0;
    let mut tau = -1.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = rho(k) + rho(k + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    (n as f64 / tau.max(1e-12)).max(1.0)
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub iterations: usize,
    pub burn_in: usize,
    pub acceptance_rate: f64,
    pub wall_seconds: f64,
    pub seconds_per_iteration: f64,
    pub seed: u64,
    pub params: Vec<ParamSummary>,
}

impl ChainSummary {
    /// Quantiles and ESS over the draws after `burn_in` iterations.
    pub fn new(chain: &Chain, burn_in: usize) -> Self {
        let start = burn_in.min(chain.len());
        let params = chain
            .param_names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let col = chain.column_from(j, start);
                let mut sorted = col.clone();
                sorted.sort_by(f64::total_cmp);
                ParamSummary {
                    name: name.clone(),
                    mean: col.iter().sum::<f64>() / col.len().max(1) as f64,
                    q025: quantile(&sorted, 0.025),
                    q500: quantile(&sorted, 0.5),
                    q975: quantile(&sorted, 0.975),
                    ess: if col.is_empty() { 0.0 } else { ess(&col) },
                }
            })
            .collect();
        ChainSummary {
            iterations: chain.len(),
            burn_in: start,
            acceptance_rate: chain.acceptance_rate(),
            wall_seconds: chain.elapsed_seconds,
            seconds_per_iteration: if chain.is_empty() {
                0.0
            } else {
                chain.elapsed_seconds / chain.len() as f64
            },
            seed: chain.seed,
            params,
        }
    }

    pub fn mean_ess(&self) -> f64 {
        if self.params.is_empty() {
            return 0.0;
        }
        self.params.iter().map(|p| p.ess).sum::<f64>() / self.params.len() as f64
    }
}
