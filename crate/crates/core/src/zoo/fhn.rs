//! FitzHugh-Nagumo model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{find_equilibrium, EquilibriumPoint, Model, Scalar};

/// `V' = V(a−V)(V−1) − w + I₀ + I(t)`, `w' = bV − cw + d + P(t)`.
///
/// Parameter vector: `[a, b, c, d, I0, sigma_in, sigma_obs]`. The white
/// noise `P(t)` has two-sided spectral density `sigma_in²`; `V` is observed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Fhn;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FhnParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    #[serde(rename = "I0")]
    pub i0: f64,
    pub sigma_in: f64,
    pub sigma_obs: f64,
}

impl FhnParams {
    pub fn theta(&self) -> Vec<f64> {
        vec![
            self.a,
            self.b,
            self.c,
            self.d,
            self.i0,
            self.sigma_in,
            self.sigma_obs,
        ]
    }

    pub fn from_theta(theta: &[f64]) -> Self {
        FhnParams {
            a: theta[0],
            b: theta[1],
            c: theta[2],
            d: theta[3],
            i0: theta[4],
            sigma_in: theta[5],
            sigma_obs: theta[6],
        }
    }

    /// Stability of the origin equilibrium (`d = I₀ = 0`): `a + c > 0` and `ac + b > 0`.
    pub fn origin_stable(&self) -> bool {
        self.a + self.c > 0.0 && self.a * self.c + self.b > 0.0
    }
}

pub const FHN_PARAMS: [&str; 7] = ["a", "b", "c", "d", "I0", "sigma_in", "sigma_obs"];

/// Cubic nonlinearity `V(a−V)(V−1)`.
pub fn cubic<S: Scalar>(v: S, a: S) -> S {
    v * (a - v) * (v - 1.0)
}

impl Model for Fhn {
    fn dim_state(&self) -> usize {
        2
    }

    fn param_names(&self) -> Vec<&'static str> {
        FHN_PARAMS.to_vec()
    }

    fn drift<S: Scalar>(&self, x: &[S], theta: &[S], out: &mut [S]) {
        let (v, w) = (x[0], x[1]);
        let (a, b, c, d, i0) = (theta[0], theta[1], theta[2], theta[3], theta[4]);
        out[0] = cubic(v, a) - w + i0;
        out[1] = b * v - c * w + d;
    }

    fn noise_state(&self) -> usize {
        1
    }

    fn noise_gain<S: Scalar>(&self, _theta: &[S]) -> S {
        S::from(1.0)
    }

    fn noise_intensity<S: Scalar>(&self, theta: &[S]) -> S {
        theta[5] * theta[5]
    }

    fn obs_noise_sd<S: Scalar>(&self, theta: &[S]) -> S {
        theta[6]
    }

    fn obs_row(&self) -> DVector<f64> {
        DVector::from_vec(vec![1.0, 0.0])
    }

    fn initial_guess(&self, theta: &[f64]) -> DVector<f64> {
        let v = fhn_nullcline_roots(theta)
            .into_iter()
            .min_by(|x, y| x.abs().total_cmp(&y.abs()))
            .unwrap_or(0.0);
        DVector::from_vec(vec![v, (theta[1] * v + theta[3]) / theta[2]])
    }
}

/// Real roots of `V(a−V)(V−1) − (bV+d)/c + I₀ = 0`, ascending.
///
/// Roots come from the eigenvalues of the cubic's companion matrix.
pub fn fhn_nullcline_roots(theta: &[f64]) -> Vec<f64> {
    let (a, b, c, d, i0) = (theta[0], theta[1], theta[2], theta[3], theta[4]);
    if c == 0.0 {
        return Vec::new();
    }
    // V³ − (a+1)V² + (a + b/c)V + (d/c − I₀) = 0
    let p2 = -(a + 1.0);
    let p1 = a + b / c;
    let p0 = d / c - i0;
    let comp = DMatrix::from_row_slice(3, 3, &[-p2, -p1, -p0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let scale = 1.0 + p2.abs().max(p1.abs()).max(p0.abs());
    let mut roots: Vec<f64> = comp
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-7 * scale)
        .map(|z| z.re)
        .collect();
    roots.sort_by(f64::total_cmp);
    roots
}

/// All equilibria of the FHN model, each polished by Newton iteration.
pub fn fhn_equilibria(theta: &[f64]) -> Result<Vec<EquilibriumPoint>> {
    if theta[2] == 0.0 {
        return Err(Error::Domain("c = 0".into()));
    }
    let mut out: Vec<EquilibriumPoint> = Vec::new();
    for v in fhn_nullcline_roots(theta) {
        let guess = DVector::from_vec(vec![v, (theta[1] * v + theta[3]) / theta[2]]);
        let eq = find_equilibrium(&Fhn, theta, &guess)?;
        if !out
            .iter()
            .any(|e| (e.x_star[0] - eq.x_star[0]).abs() < 1e-9 * (1.0 + v.abs()))
        {
            out.push(eq);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{drift_f64, jacobian};

    #[test]
    fn drift_examples() {
        let th = FhnParams {
            a: -5.0,
            b: 6000.0,
            c: 40.0,
            d: 0.0,
            i0: 0.0,
            sigma_in: 1.0,
            sigma_obs: 0.1,
        }
        .theta();
        assert_eq!(drift_f64(&Fhn, &[0.0, 0.0], &th).as_slice(), &[0.0, 0.0]);
        let mut th2 = th.clone();
        th2[4] = 100.0;
        assert_eq!(
            drift_f64(&Fhn, &[1.0, 0.0], &th2).as_slice(),
            &[100.0, 6000.0]
        );
    }

    #[test]
    fn jacobian_at_origin() {
        let th = FhnParams {
            a: -5.0,
            b: 6000.0,
            c: 40.0,
            d: 0.0,
            i0: 0.0,
            sigma_in: 1.0,
            sigma_obs: 0.1,
        }
        .theta();
        let j = jacobian(&Fhn, &[0.0, 0.0], &th);
        assert_eq!(
            j,
            DMatrix::from_row_slice(2, 2, &[5.0, -1.0, 6000.0, -40.0])
        );
    }
}
