//! Model abstraction, equilibria, stability and linearization.

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_dual::{Dual64, DualNum, HyperDual64};

use crate::error::{Error, Result};

/// Number type a model must be able to evaluate its drift in.
///
/// Plain `f64` is used for simulation; dual and hyper-dual numbers give exact
/// Jacobians and parameter sensitivities by forward-mode differentiation.
pub trait Scalar: DualNum<f64> + Copy {}
impl<T: DualNum<f64> + Copy> Scalar for T {}

/// A differential-equation model `dx = F(x; θ) dt + g(θ) e_j dW` observed
/// through a scalar linear readout with additive Gaussian noise.
///
/// The noise enters a single state equation (`noise_state`) with gain
/// `noise_gain(θ)`; the driving white noise has two-sided spectral density
/// `noise_intensity(θ)`.
pub trait Model: Sync {
    fn dim_state(&self) -> usize;
    fn param_names(&self) -> Vec<&'static str>;
    fn drift<S: Scalar>(&self, x: &[S], theta: &[S], out: &mut [S]);
    fn noise_state(&self) -> usize;
    fn noise_gain<S: Scalar>(&self, theta: &[S]) -> S;
    fn noise_intensity<S: Scalar>(&self, theta: &[S]) -> S;
    fn obs_noise_sd<S: Scalar>(&self, theta: &[S]) -> S;
    fn obs_row(&self) -> DVector<f64>;

    /// Starting point for the equilibrium search.
    fn initial_guess(&self, _theta: &[f64]) -> DVector<f64> {
        DVector::zeros(self.dim_state())
    }

    fn dim_params(&self) -> usize {
        self.param_names().len()
    }

    fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names().iter().position(|n| *n == name)
    }

    /// `(state index, parameter index)` pairs of the diagonal noise map.
    fn noise_channels(&self) -> Vec<(usize, Option<usize>)> {
        vec![(self.noise_state(), None)]
    }
}

pub fn drift_f64<M: Model>(model: &M, x: &[f64], theta: &[f64]) -> DVector<f64> {
    let mut out = vec![0.0; model.dim_state()];
    model.drift(x, theta, &mut out);
    DVector::from_vec(out)
}

/// Jacobian `∂F/∂x` by forward-mode differentiation.
pub fn jacobian<M: Model>(model: &M, x: &[f64], theta: &[f64]) -> DMatrix<f64> {
    let d = model.dim_state();
    let th: Vec<Dual64> = theta.iter().map(|&t| Dual64::from(t)).collect();
    let mut out = vec![Dual64::from(0.0); d];
    let mut jac = DMatrix::zeros(d, d);
    for k in 0..d {
        let xs: Vec<Dual64> = x
            .iter()
            .enumerate()
            .map(|(j, &v)| Dual64::new(v, if j == k { 1.0 } else { 0.0 }))
            .collect();
        model.drift(&xs, &th, &mut out);
        for i in 0..d {
            jac[(i, k)] = out[i].eps;
        }
    }
    jac
}

/// Directional derivative of the drift along a parameter direction, `(∂F/∂θ)·v`.
pub fn drift_param_derivative<M: Model>(
    model: &M,
    x: &[f64],
    theta: &[f64],
    direction: &[f64],
) -> DVector<f64> {
    let d = model.dim_state();
    let xs: Vec<Dual64> = x.iter().map(|&v| Dual64::from(v)).collect();
    let th: Vec<Dual64> = theta
        .iter()
        .zip(direction)
        .map(|(&t, &v)| Dual64::new(t, v))
        .collect();
    let mut out = vec![Dual64::from(0.0); d];
    model.drift(&xs, &th, &mut out);
    DVector::from_iterator(d, out.iter().map(|o| o.eps))
}

/// A solution of `F(x*; θ) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPoint {
    pub x_star: DVector<f64>,
    pub residual_norm: f64,
    pub params: Vec<f64>,
}

pub const EQUILIBRIUM_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 200;

fn scaled_residual(f: &DVector<f64>, x: &DVector<f64>) -> f64 {
    f.norm() / (1.0 + x.norm())
}

/// Damped Newton iteration for an equilibrium, started at `guess`.
///
/// Converged when `‖F‖/(1+‖x‖) ≤ 1e-10`. The step is halved until the
/// residual norm decreases (Armijo condition on `‖F‖`).
pub fn find_equilibrium<M: Model>(
    model: &M,
    theta: &[f64],
    guess: &DVector<f64>,
) -> Result<EquilibriumPoint> {
    let d = model.dim_state();
    if guess.len() != d {
        return Err(Error::Dimension(format!(
            "guess has length {}, model has {} states",
            guess.len(),
            d
        )));
    }
    let mut x = guess.clone();
    let mut fx = drift_f64(model, x.as_slice(), theta);
    for iteration in 0..NEWTON_MAX_ITER {
        if !fx.iter().all(|v| v.is_finite()) {
            return Err(Error::NoConvergence {
                iterations: iteration,
                residual: f64::INFINITY,
            });
        }
        if scaled_residual(&fx, &x) <= EQUILIBRIUM_TOL {
            return Ok(EquilibriumPoint {
                residual_norm: fx.norm(),
                x_star: x,
                params: theta.to_vec(),
            });
        }
        let jac = jacobian(model, x.as_slice(), theta);
        let step = jac.lu().solve(&(-&fx)).ok_or(Error::NoConvergence {
            iterations: iteration,
            residual: fx.norm(),
        })?;
        let f_norm = fx.norm();
        let mut alpha = 1.0;
        loop {
            let trial = &x + &step * alpha;
            let f_trial = drift_f64(model, trial.as_slice(), theta);
            let n_trial = f_trial.norm();
            if n_trial.is_finite() && n_trial <= (1.0 - 1e-4 * alpha) * f_norm {
                x = trial;
                fx = f_trial;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return Err(Error::NoConvergence {
                    iterations: iteration,
                    residual: f_norm,
                });
            }
        }
    }
    let residual = fx.norm();
    if scaled_residual(&fx, &x) <= EQUILIBRIUM_TOL {
        return Ok(EquilibriumPoint {
            residual_norm: residual,
            x_star: x,
            params: theta.to_vec(),
        });
    }
    Err(Error::NoConvergence {
        iterations: NEWTON_MAX_ITER,
        residual,
    })
}

/// Picks the candidate whose observed component is nearest to the data mean.
/// Ties go to the earlier candidate.
pub fn select_equilibrium<'a>(
    candidates: &'a [EquilibriumPoint],
    obs_row: &DVector<f64>,
    data_mean_obs: f64,
) -> Result<&'a EquilibriumPoint> {
    let mut best: Option<(&EquilibriumPoint, f64)> = None;
    for c in candidates {
        let dist = (obs_row.dot(&c.x_star) - data_mean_obs).abs();
        match best {
            Some((_, b)) if b <= dist => {}
            _ => best = Some((c, dist)),
        }
    }
    best.map(|(c, _)| c).ok_or(Error::EmptyCandidates)
}

/// Eigenvalue summary of a Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub eigenvalues: Vec<Complex64>,
    pub max_real_part: f64,
    pub is_stable: bool,
    pub has_repeated_eigenvalues: bool,
}

/// Relative tolerance (times `‖J‖`) below which two eigenvalues count as repeated.
pub const REPEATED_EIGENVALUE_TOL: f64 = 1e-8;

pub fn eigenvalues(j: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if !j.iter().all(|v| v.is_finite()) {
        return Err(Error::EigenFailure("matrix has non-finite entries".into()));
    }
    let schur = Schur::try_new(j.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::EigenFailure("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn stability_check(j: &DMatrix<f64>) -> Result<StabilityReport> {
    let eigenvalues = eigenvalues(j)?;
    let max_real_part = eigenvalues
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let tol = REPEATED_EIGENVALUE_TOL * j.norm();
    let has_repeated_eigenvalues = eigenvalues
        .iter()
        .enumerate()
        .any(|(i, a)| eigenvalues[i + 1..].iter().any(|b| (a - b).norm() <= tol));
    Ok(StabilityReport {
        is_stable: max_real_part < 0.0,
        max_real_part,
        eigenvalues,
        has_repeated_eigenvalues,
    })
}

/// Linear SDE `dδ = A δ dt + b dW`, `δ = x − x*`, observed as `y = obs·x + σ_obs ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub x_star: DVector<f64>,
    pub input_weights: DVector<f64>,
    pub obs_row: DVector<f64>,
    /// Two-sided spectral density of the scalar white noise driving `input_weights`.
    pub noise_intensity: f64,
    pub obs_noise_sd: f64,
}

impl LinearSystem {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Drift of the linearized dynamics at state `x`.
    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * (x - &self.x_star)
    }

    /// Diffusion matrix `c · b bᵀ`.
    pub fn diffusion(&self) -> DMatrix<f64> {
        &self.input_weights * self.input_weights.transpose() * self.noise_intensity
    }
}

/// Linearization of `model` at an equilibrium.
pub fn linearize<M: Model>(model: &M, theta: &[f64], eq: &EquilibriumPoint) -> LinearSystem {
    let d = model.dim_state();
    let mut input_weights = DVector::zeros(d);
    input_weights[model.noise_state()] = model.noise_gain(theta);
    LinearSystem {
        a: jacobian(model, eq.x_star.as_slice(), theta),
        x_star: eq.x_star.clone(),
        input_weights,
        obs_row: model.obs_row(),
        noise_intensity: model.noise_intensity(theta),
        obs_noise_sd: model.obs_noise_sd(theta),
    }
}

/// A direction of change of the pair `(θ, x*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub d_theta: DVector<f64>,
    pub d_x: DVector<f64>,
}

/// Derivative of every [`LinearSystem`] ingredient along one [`Tangent`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTangent {
    pub d_a: DMatrix<f64>,
    pub d_input: DVector<f64>,
    pub d_intensity: f64,
    pub d_obs_sd: f64,
}

impl LinearTangent {
    pub fn zeros(d: usize) -> Self {
        LinearTangent {
            d_a: DMatrix::zeros(d, d),
            d_input: DVector::zeros(d),
            d_intensity: 0.0,
            d_obs_sd: 0.0,
        }
    }
}

/// Linearization at `x_star` together with its derivatives along `tangents`.
///
/// The Jacobian derivative along a tangent is the mixed second derivative
/// `Σ_j ∂²F/∂x_k∂x_j dx_j + Σ_i ∂²F/∂x_k∂θ_i dθ_i`, computed exactly with
/// hyper-dual numbers; `x_star` moving with θ is therefore accounted for.
pub fn linearize_with_tangents<M: Model>(
    model: &M,
    theta: &[f64],
    x_star: &DVector<f64>,
    tangents: &[Tangent],
) -> (LinearSystem, Vec<LinearTangent>) {
    let d = model.dim_state();
    let mut a = DMatrix::zeros(d, d);
    let mut out_tangents: Vec<LinearTangent> =
        tangents.iter().map(|_| LinearTangent::zeros(d)).collect();
    let mut out = vec![HyperDual64::from(0.0); d];
    let noise_state = model.noise_state();

    for (m, t) in tangents.iter().enumerate() {
        let th: Vec<HyperDual64> = theta
            .iter()
            .zip(t.d_theta.iter())
            .map(|(&v, &dv)| HyperDual64::new(v, 0.0, dv, 0.0))
            .collect();
        for k in 0..d {
            let xs: Vec<HyperDual64> = x_star
                .iter()
                .zip(t.d_x.iter())
                .enumerate()
                .map(|(j, (&v, &dv))| HyperDual64::new(v, if j == k { 1.0 } else { 0.0 }, dv, 0.0))
                .collect();
            model.drift(&xs, &th, &mut out);
            for i in 0..d {
                if m == 0 {
                    a[(i, k)] = out[i].eps1;
                }
                out_tangents[m].d_a[(i, k)] = out[i].eps1eps2;
            }
        }
        let th1: Vec<Dual64> = theta
            .iter()
            .zip(t.d_theta.iter())
            .map(|(&v, &dv)| Dual64::new(v, dv))
            .collect();
        out_tangents[m].d_input[noise_state] = model.noise_gain(&th1).eps;
        out_tangents[m].d_intensity = model.noise_intensity(&th1).eps;
        out_tangents[m].d_obs_sd = model.obs_noise_sd(&th1).eps;
    }
    if tangents.is_empty() {
        a = jacobian(model, x_star.as_slice(), theta);
    }
    let mut input_weights = DVector::zeros(d);
    input_weights[noise_state] = model.noise_gain(theta);
    let sys = LinearSystem {
        a,
        x_star: x_star.clone(),
        input_weights,
        obs_row: model.obs_row(),
        noise_intensity: model.noise_intensity(theta),
        obs_noise_sd: model.obs_noise_sd(theta),
    };
    (sys, out_tangents)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// dx/dt = −x + θ₀, noise on x.
    struct Affine1;

    impl Model for Affine1 {
        fn dim_state(&self) -> usize {
            1
        }
        fn param_names(&self) -> Vec<&'static str> {
            vec!["offset"]
        }
        fn drift<S: Scalar>(&self, x: &[S], theta: &[S], out: &mut [S]) {
            out[0] = theta[0] - x[0];
        }
        fn noise_state(&self) -> usize {
            0
        }
        fn noise_gain<S: Scalar>(&self, _theta: &[S]) -> S {
            S::from(1.0)
        }
        fn noise_intensity<S: Scalar>(&self, _theta: &[S]) -> S {
            S::from(1.0)
        }
        fn obs_noise_sd<S: Scalar>(&self, _theta: &[S]) -> S {
            S::from(0.1)
        }
        fn obs_row(&self) -> DVector<f64> {
            DVector::from_element(1, 1.0)
        }
    }

    #[test]
    fn affine_equilibrium_is_the_linear_solve() {
        for g in [-10.0, 0.0, 3.5, 1e3] {
            let eq = find_equilibrium(&Affine1, &[2.0], &DVector::from_element(1, g)).unwrap();
            assert!((eq.x_star[0] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_picks_nearest_observed_value() {
        let mk = |v: f64| EquilibriumPoint {
            x_star: DVector::from_element(1, v),
            residual_norm: 0.0,
            params: vec![],
        };
        let c = vec![mk(-1.0), mk(0.2), mk(1.1)];
        let row = DVector::from_element(1, 1.0);
        assert_eq!(select_equilibrium(&c, &row, 0.15).unwrap().x_star[0], 0.2);
        assert_eq!(
            select_equilibrium(&c[..1], &row, 5.0).unwrap().x_star[0],
            -1.0
        );
        assert_eq!(
            select_equilibrium(&[], &row, 0.0),
            Err(Error::EmptyCandidates)
        );
    }

    #[test]
    fn stability_of_simple_matrices() {
        let r = stability_check(&DMatrix::from_diagonal(&DVector::from_vec(vec![
            -1.0, -2.0,
        ])))
        .unwrap();
        assert!(r.is_stable);
        assert_eq!(r.max_real_part, -1.0);
        let r = stability_check(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        assert!(!r.is_stable);
        assert!(r.max_real_part.abs() < 1e-14);
    }

    #[test]
    fn repeated_eigenvalues_are_flagged() {
        let r = stability_check(&DMatrix::from_diagonal(&DVector::from_vec(vec![
            -1.0, -1.0, -3.0,
        ])))
        .unwrap();
        assert!(r.has_repeated_eigenvalues);
        let r = stability_check(&DMatrix::from_diagonal(&DVector::from_vec(vec![
            -1.0, -1.1,
        ])))
        .unwrap();
        assert!(!r.has_repeated_eigenvalues);
    }

    #[test]
    fn affine_linearization_reproduces_drift() {
        let eq = find_equilibrium(&Affine1, &[2.0], &DVector::zeros(1)).unwrap();
        let sys = linearize(&Affine1, &[2.0], &eq);
        for x in [-3.0, 0.0, 7.25] {
            let xv = DVector::from_element(1, x);
            assert_eq!(sys.drift(&xv)[0], drift_f64(&Affine1, &[x], &[2.0])[0]);
        }
    }
}
