//! Damped harmonic oscillator driven by white noise.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{linearize, EquilibriumPoint, LinearSystem, Model, Scalar};

/// `v'' + 2ζω₀ v' + ω₀² v = P(t)` in companion form `(v, v')`.
///
/// Parameter vector: `[zeta, omega0, noise_intensity, sigma_obs]`; `v` is observed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HarmonicOscillator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoParams {
    pub zeta: f64,
    pub omega0: f64,
    pub noise_intensity: f64,
    pub obs_noise_sd: f64,
}

pub const HO_PARAMS: [&str; 4] = ["zeta", "omega0", "noise_intensity", "sigma_obs"];

impl HoParams {
    pub fn theta(&self) -> Vec<f64> {
        vec![
            self.zeta,
            self.omega0,
            self.noise_intensity,
            self.obs_noise_sd,
        ]
    }

    /// Oscillator equivalent to the FHN linearization at the origin:
    /// `2ζω₀ = a + c`, `ω₀² = ac + b`.
    pub fn from_fhn(
        a: f64,
        b: f64,
        c: f64,
        noise_intensity: f64,
        obs_noise_sd: f64,
    ) -> Result<Self> {
        let w2 = a * c + b;
        if w2 <= 0.0 || a + c <= 0.0 {
            return Err(Error::Domain(
                "FHN origin is not a stable focus/node".into(),
            ));
        }
        let omega0 = w2.sqrt();
        Ok(HoParams {
            zeta: (a + c) / (2.0 * omega0),
            omega0,
            noise_intensity,
            obs_noise_sd,
        })
    }

    /// Angular frequency of the spectral peak, `ω₀√(1−2ζ²)`, when `ζ < 1/√2`.
    pub fn peak_angular_frequency(&self) -> Option<f64> {
        let r = 1.0 - 2.0 * self.zeta * self.zeta;
        (r > 0.0).then(|| self.omega0 * r.sqrt())
    }
}

impl Model for HarmonicOscillator {
    fn dim_state(&self) -> usize {
        2
    }

    fn param_names(&self) -> Vec<&'static str> {
        HO_PARAMS.to_vec()
    }

    fn drift<S: Scalar>(&self, x: &[S], theta: &[S], out: &mut [S]) {
        let (zeta, w0) = (theta[0], theta[1]);
        out[0] = x[1];
        out[1] = -(w0 * w0) * x[0] - zeta * w0 * 2.0 * x[1];
    }

    fn noise_state(&self) -> usize {
        1
    }

    fn noise_gain<S: Scalar>(&self, _theta: &[S]) -> S {
        S::from(1.0)
    }

    fn noise_intensity<S: Scalar>(&self, theta: &[S]) -> S {
        theta[2]
    }

    fn obs_noise_sd<S: Scalar>(&self, theta: &[S]) -> S {
        theta[3]
    }

    fn obs_row(&self) -> DVector<f64> {
        DVector::from_vec(vec![1.0, 0.0])
    }
}

/// Linear system of the oscillator (equilibrium at the origin).
pub fn harmonic_oscillator(params: &HoParams) -> Result<LinearSystem> {
    if params.zeta <= 0.0 || params.omega0 <= 0.0 {
        return Err(Error::Domain("zeta and omega0 must be positive".into()));
    }
    let theta = params.theta();
    let eq = EquilibriumPoint {
        x_star: DVector::zeros(2),
        residual_norm: 0.0,
        params: theta.clone(),
    };
    Ok(linearize(&HarmonicOscillator, &theta, &eq))
}
