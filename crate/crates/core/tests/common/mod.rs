//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sdewhittle::model::LinearSystem;
use sdewhittle::{Model, Scalar};

/// `dx = (M x + b) dt + g e_j dW`, observed through `obs`.
///
/// Parameters: the entries of `M` (row-major), then `b`, then `[g, c, σ_obs]`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub d: usize,
    pub noise_state: usize,
    pub obs: DVector<f64>,
}

impl Affine {
    pub fn theta(
        &self,
        m: &DMatrix<f64>,
        b: &DVector<f64>,
        gain: f64,
        intensity: f64,
        obs_sd: f64,
    ) -> Vec<f64> {
        let mut t: Vec<f64> = m.transpose().iter().copied().collect();
        t.extend(b.iter());
        t.extend([gain, intensity, obs_sd]);
        t
    }
}

impl Model for Affine {
    fn dim_state(&self) -> usize {
        self.d
    }

    fn param_names(&self) -> Vec<&'static str> {
        vec!["p"; self.d * self.d + self.d + 3]
    }

    fn drift<S: Scalar>(&self, x: &[S], theta: &[S], out: &mut [S]) {
        let d = self.d;
        for i in 0..d {
            let mut acc = theta[d * d + i];
            for j in 0..d {
                acc += theta[i * d + j] * x[j];
            }
            out[i] = acc;
        }
    }

    fn noise_state(&self) -> usize {
        self.noise_state
    }

    fn noise_gain<S: Scalar>(&self, theta: &[S]) -> S {
        theta[self.d * self.d + self.d]
    }

    fn noise_intensity<S: Scalar>(&self, theta: &[S]) -> S {
        theta[self.d * self.d + self.d + 1]
    }

    fn obs_noise_sd<S: Scalar>(&self, theta: &[S]) -> S {
        theta[self.d * self.d + self.d + 2]
    }

    fn obs_row(&self) -> DVector<f64> {
        self.obs.clone()
    }
}

/// Scalar Ornstein-Uhlenbeck process `dx = −αx dt + σ dB`, `y = x + σ_obs ε`.
pub fn ou(alpha: f64, sigma: f64, obs_sd: f64) -> LinearSystem {
    LinearSystem {
        a: DMatrix::from_element(1, 1, -alpha),
        x_star: DVector::zeros(1),
        input_weights: DVector::from_element(1, 1.0),
        obs_row: DVector::from_element(1, 1.0),
        noise_intensity: sigma * sigma,
        obs_noise_sd: obs_sd,
    }
}

pub fn normal_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(r))
}

/// Random matrix whose eigenvalues all have real part at most `-margin`.
pub fn random_stable(r: &mut ChaCha8Rng, d: usize, margin: f64) -> DMatrix<f64> {
    let m = normal_matrix(r, d, d) / (d as f64).sqrt();
    let shift = m
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    m - DMatrix::identity(d, d) * (shift + margin)
}

pub fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.gen::<f64>()
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
