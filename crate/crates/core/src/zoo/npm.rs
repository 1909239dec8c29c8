//! Spatially homogeneous Liley-type neural population model (14 states).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::model::{Model, Scalar};

/// Published generating parameter set (units as in the data file).
pub const REFERENCE_TABLE: &str = include_str!("../../data/npm_reference.toml");
/// Log-normal prior modes and log-scale standard deviations.
pub const PRIOR_TABLE: &str = include_str!("../../data/npm_prior.toml");

/// Scale taking charge-transfer weights from micro-ohm-coulomb to mV·s.
pub const Q_SCALE: f64 = 1e-3;
/// Reference solver step the noise standard deviation is normed to, in seconds.
pub const NOISE_REFERENCE_STEP: f64 = 1e-4;

/// Parameters in table units (time constants in ms, q in micro-ohm-coulomb).
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpmParams {
    pub tau_e: f64,
    pub tau_i: f64,
    pub h_r_e: f64,
    pub h_r_i: f64,
    pub h_eq_ee: f64,
    pub h_eq_ei: f64,
    pub h_eq_ie: f64,
    pub h_eq_ii: f64,
    pub N_beta_ee: f64,
    pub N_beta_ei: f64,
    pub N_beta_ie: f64,
    pub N_beta_ii: f64,
    pub S_max_e: f64,
    pub S_max_i: f64,
    pub mu_e: f64,
    pub mu_i: f64,
    pub sigma_hat_e: f64,
    pub sigma_hat_i: f64,
    pub v: f64,
    pub Lambda: f64,
    pub N_alpha_ee: f64,
    pub N_alpha_ei: f64,
    pub gamma_ee: f64,
    pub gamma_ei: f64,
    pub gamma_ie: f64,
    pub gamma_ii: f64,
    pub q_ee: f64,
    pub q_ei: f64,
    pub q_ie: f64,
    pub q_ii: f64,
    pub p_bar_ee: f64,
    pub p_bar_ei: f64,
    pub sigma_p: f64,
    pub sigma_obs: f64,
    #[serde(default = "default_fs")]
    pub sampling_frequency: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
}

fn default_fs() -> f64 {
    500.0
}

fn default_duration() -> f64 {
    20.0
}

impl NpmParams {
    /// The reference parameter set shipped with the crate.
    pub fn reference() -> Self {
        toml::from_str(REFERENCE_TABLE).expect("bundled NPM table parses")
    }

    /// Model parameter vector in the order of [`NPM_PARAMS`] (τ in seconds, σ_p squared).
    pub fn theta(&self) -> Vec<f64> {
        vec![
            self.tau_e * 1e-3,
            self.tau_i * 1e-3,
            self.h_r_e,
            self.h_r_i,
            self.h_eq_ee,
            self.h_eq_ei,
            self.h_eq_ie,
            self.h_eq_ii,
            self.N_beta_ee,
            self.N_beta_ei,
            self.N_beta_ie,
            self.N_beta_ii,
            self.S_max_e,
            self.S_max_i,
            self.mu_e,
            self.mu_i,
            self.sigma_hat_e,
            self.sigma_hat_i,
            self.v,
            self.Lambda,
            self.N_alpha_ee,
            self.N_alpha_ei,
            self.gamma_ee,
            self.gamma_ei,
            self.gamma_ie,
            self.gamma_ii,
            self.q_ee,
            self.q_ei,
            self.q_ie,
            self.q_ii,
            self.p_bar_ee,
            self.p_bar_ei,
            self.sigma_p * self.sigma_p,
            self.sigma_obs,
        ]
    }
}

pub const NPM_PARAMS: [&str; 34] = [
    "tau_e",
    "tau_i",
    "h_r_e",
    "h_r_i",
    "h_eq_ee",
    "h_eq_ei",
    "h_eq_ie",
    "h_eq_ii",
    "N_beta_ee",
    "N_beta_ei",
    "N_beta_ie",
    "N_beta_ii",
    "S_max_e",
    "S_max_i",
    "mu_e",
    "mu_i",
    "sigma_hat_e",
    "sigma_hat_i",
    "v",
    "Lambda",
    "N_alpha_ee",
    "N_alpha_ei",
    "gamma_ee",
    "gamma_ei",
    "gamma_ie",
    "gamma_ii",
    "q_ee",
    "q_ei",
    "q_ie",
    "q_ii",
    "p_bar_ee",
    "p_bar_ei",
    "sigma_p_sq",
    "sigma_obs",
];

/// Indices into the NPM parameter vector.
pub mod ix {
    pub const TAU_E: usize = 0;
    pub const TAU_I: usize = 1;
    pub const H_R_E: usize = 2;
    pub const H_R_I: usize = 3;
    pub const H_EQ_EE: usize = 4;
    pub const H_EQ_EI: usize = 5;
    pub const H_EQ_IE: usize = 6;
    pub const H_EQ_II: usize = 7;
    pub const NB_EE: usize = 8;
    pub const NB_EI: usize = 9;
    pub const NB_IE: usize = 10;
    pub const NB_II: usize = 11;
    pub const SMAX_E: usize = 12;
    pub const SMAX_I: usize = 13;
    pub const MU_E: usize = 14;
    pub const MU_I: usize = 15;
    pub const SIG_E: usize = 16;
    pub const SIG_I: usize = 17;
    pub const V: usize = 18;
    pub const LAMBDA: usize = 19;
    pub const NA_EE: usize = 20;
    pub const NA_EI: usize = 21;
    pub const G_EE: usize = 22;
    pub const G_EI: usize = 23;
    pub const G_IE: usize = 24;
    pub const G_II: usize = 25;
    pub const Q_EE: usize = 26;
    pub const Q_EI: usize = 27;
    pub const Q_IE: usize = 28;
    pub const Q_II: usize = 29;
    pub const P_EE: usize = 30;
    pub const P_EI: usize = 31;
    pub const SIGMA_P_SQ: usize = 32;
    pub const SIGMA_OBS: usize = 33;
}

/// State indices, ordered `(h_e, h_i, I_ee, I_ee', I_ei, I_ei', I_ie, I_ie', I_ii, I_ii', Φ_ee, Φ_ee', Φ_ei, Φ_ei')`.
pub mod st {
    pub const H_E: usize = 0;
    pub const H_I: usize = 1;
    pub const I_EE: usize = 2;
    pub const I_EI: usize = 4;
    pub const I_IE: usize = 6;
    pub const I_II: usize = 8;
    pub const PHI_EE: usize = 10;
    pub const PHI_EI: usize = 12;
}

pub const NPM_STATES: [&str; 14] = [
    "h_e", "h_i", "I_ee", "dI_ee", "I_ei", "dI_ei", "I_ie", "dI_ie", "I_ii", "dI_ii", "Phi_ee",
    "dPhi_ee", "Phi_ei", "dPhi_ei",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Npm;

/// Mean firing rate `S_max / (1 + exp((μ − h)/(σ̂/√2)))`.
pub fn sigmoid<S: Scalar>(h: S, s_max: S, mu: S, sigma_hat: S) -> S {
    s_max / ((((mu - h) * std::f64::consts::SQRT_2) / sigma_hat).exp() + 1.0)
}

/// Reversal-potential weighting `(h_eq − h)/|h_eq − h_r|`.
pub fn psi<S: Scalar>(h_eq: S, h: S, h_r: S) -> S {
    (h_eq - h) / (h_eq - h_r).abs()
}

/// Right-hand side of the critically damped second-order operator
/// `(γ⁻¹ d/dt + 1)² y = r`, as the derivative of `(y, y')`.
fn second_order<S: Scalar>(y: S, dy: S, rate: S, r: S) -> (S, S) {
    (dy, rate * rate * (r - y) - rate * dy * 2.0)
}

impl Model for Npm {
    fn dim_state(&self) -> usize {
        14
    }

    fn param_names(&self) -> Vec<&'static str> {
        NPM_PARAMS.to_vec()
    }

    fn drift<S: Scalar>(&self, x: &[S], t: &[S], out: &mut [S]) {
        use ix::*;
        let (h_e, h_i) = (x[st::H_E], x[st::H_I]);
        let s_e = sigmoid(h_e, t[SMAX_E], t[MU_E], t[SIG_E]);
        let s_i = sigmoid(h_i, t[SMAX_I], t[MU_I], t[SIG_I]);
        let (i_ee, i_ei, i_ie, i_ii) = (x[st::I_EE], x[st::I_EI], x[st::I_IE], x[st::I_II]);
        let (phi_ee, phi_ei) = (x[st::PHI_EE], x[st::PHI_EI]);

        out[st::H_E] = (t[H_R_E] - h_e
            + psi(t[H_EQ_EE], h_e, t[H_R_E]) * i_ee
            + psi(t[H_EQ_IE], h_e, t[H_R_E]) * i_ie)
            / t[TAU_E];
        out[st::H_I] = (t[H_R_I] - h_i
            + psi(t[H_EQ_EI], h_i, t[H_R_I]) * i_ei
            + psi(t[H_EQ_II], h_i, t[H_R_I]) * i_ii)
            / t[TAU_I];

        let r_ee = t[Q_EE] * Q_SCALE * (t[NB_EE] * s_e + phi_ee + t[P_EE]);
        let r_ei = t[Q_EI] * Q_SCALE * (t[NB_EI] * s_e + phi_ei + t[P_EI]);
        let r_ie = t[Q_IE] * Q_SCALE * t[NB_IE] * s_i;
        let r_ii = t[Q_II] * Q_SCALE * t[NB_II] * s_i;
        let pairs = [
            (st::I_EE, t[G_EE], r_ee),
            (st::I_EI, t[G_EI], r_ei),
            (st::I_IE, t[G_IE], r_ie),
            (st::I_II, t[G_II], r_ii),
        ];
        for (k, rate, r) in pairs {
            let (a, b) = second_order(x[k], x[k + 1], rate, r);
            out[k] = a;
            out[k + 1] = b;
        }
        let v_lambda = t[V] * t[LAMBDA];
        for (k, n_alpha) in [(st::PHI_EE, t[NA_EE]), (st::PHI_EI, t[NA_EI])] {
            let (a, b) = second_order(x[k], x[k + 1], v_lambda, n_alpha * s_e);
            out[k] = a;
            out[k + 1] = b;
        }
    }

    fn noise_state(&self) -> usize {
        st::I_EE + 1
    }

    fn noise_gain<S: Scalar>(&self, t: &[S]) -> S {
        t[ix::G_EE] * t[ix::G_EE] * t[ix::Q_EE] * Q_SCALE
    }

    fn noise_intensity<S: Scalar>(&self, t: &[S]) -> S {
        t[ix::SIGMA_P_SQ] / NOISE_REFERENCE_STEP
    }

    fn obs_noise_sd<S: Scalar>(&self, t: &[S]) -> S {
        t[ix::SIGMA_OBS]
    }

    fn obs_row(&self) -> DVector<f64> {
        let mut row = DVector::zeros(14);
        row[st::H_E] = 1.0;
        row
    }

    fn noise_channels(&self) -> Vec<(usize, Option<usize>)> {
        vec![(self.noise_state(), Some(ix::SIGMA_P_SQ))]
    }

    fn initial_guess(&self, theta: &[f64]) -> DVector<f64> {
        let (h_e, h_i) = solve_potentials(theta).unwrap_or((theta[ix::H_R_E], theta[ix::H_R_I]));
        npm_states_from_potentials(theta, h_e, h_i)
    }
}

/// Residual of the two soma equations once every other state is at its
/// steady-state value for the given potentials.
fn potential_residual<S: Scalar>(theta: &[f64], h_e: S, h_i: S) -> [S; 2] {
    use ix::*;
    let t = |i: usize| S::from(theta[i]);
    let s_e = sigmoid(h_e, t(SMAX_E), t(MU_E), t(SIG_E));
    let s_i = sigmoid(h_i, t(SMAX_I), t(MU_I), t(SIG_I));
    let i_ee = t(Q_EE) * Q_SCALE * (t(NB_EE) * s_e + t(NA_EE) * s_e + t(P_EE));
    let i_ei = t(Q_EI) * Q_SCALE * (t(NB_EI) * s_e + t(NA_EI) * s_e + t(P_EI));
    let i_ie = t(Q_IE) * Q_SCALE * t(NB_IE) * s_i;
    let i_ii = t(Q_II) * Q_SCALE * t(NB_II) * s_i;
    [
        t(H_R_E) - h_e
            + psi(t(H_EQ_EE), h_e, t(H_R_E)) * i_ee
            + psi(t(H_EQ_IE), h_e, t(H_R_E)) * i_ie,
        t(H_R_I) - h_i
            + psi(t(H_EQ_EI), h_i, t(H_R_I)) * i_ei
            + psi(t(H_EQ_II), h_i, t(H_R_I)) * i_ii,
    ]
}

/// Damped Newton solve of the reduced two-potential steady-state problem.
///
/// Started at the resting potentials; when that fails, restarted from a grid
/// of offsets around rest in order of increasing distance, so the root
/// nearest to rest is preferred.
pub fn solve_potentials(theta: &[f64]) -> Option<(f64, f64)> {
    let rest = [theta[ix::H_R_E], theta[ix::H_R_I]];
    if let Some(h) = newton_potentials(theta, rest) {
        return Some(h);
    }
    let offsets: Vec<f64> = (-POTENTIAL_GRID_STEPS..=2 * POTENTIAL_GRID_STEPS)
        .map(|k| k as f64 * POTENTIAL_GRID_MV)
        .collect();
    let mut starts: Vec<[f64; 2]> = offsets
        .iter()
        .flat_map(|&de| offsets.iter().map(move |&di| [de, di]))
        .filter(|d| d != &[0.0, 0.0])
        .collect();
    starts.sort_by(|a, b| a[0].hypot(a[1]).total_cmp(&b[0].hypot(b[1])));
    starts
        .into_iter()
        .find_map(|d| newton_potentials(theta, [rest[0] + d[0], rest[1] + d[1]]))
}

/// Spacing and half-width (in steps below rest) of the restart grid, in mV.
const POTENTIAL_GRID_MV: f64 = 2.5;
const POTENTIAL_GRID_STEPS: i32 = 8;

fn newton_potentials(theta: &[f64], start: [f64; 2]) -> Option<(f64, f64)> {
    use num_dual::Dual64;
    let mut h = start;
    let norm = |r: [f64; 2]| r[0].hypot(r[1]);
    let mut r = potential_residual(theta, h[0], h[1]);
    for _ in 0..100 {
        if norm(r) <= 1e-12 * (1.0 + h[0].hypot(h[1])) {
            return Some((h[0], h[1]));
        }
        let c0 = potential_residual(theta, Dual64::new(h[0], 1.0), Dual64::from(h[1]));
        let c1 = potential_residual(theta, Dual64::from(h[0]), Dual64::new(h[1], 1.0));
        let (a, b, c, d) = (c0[0].eps, c1[0].eps, c0[1].eps, c1[1].eps);
        let det = a * d - b * c;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let step = [-(d * r[0] - b * r[1]) / det, -(-c * r[0] + a * r[1]) / det];
        let mut alpha = 1.0;
        loop {
            let trial = [h[0] + alpha * step[0], h[1] + alpha * step[1]];
            let rt = potential_residual(theta, trial[0], trial[1]);
            if norm(rt).is_finite() && norm(rt) < (1.0 - 1e-4 * alpha) * norm(r) {
                h = trial;
                r = rt;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                return (norm(r) <= 1e-9 * (1.0 + h[0].hypot(h[1]))).then_some((h[0], h[1]));
            }
        }
    }
    None
}

/// Steady-state values of every synaptic and long-range state given `(h_e, h_i)`
/// and the input rates in `theta`.
pub fn npm_states_from_potentials(theta: &[f64], h_e: f64, h_i: f64) -> DVector<f64> {
    use ix::*;
    let s_e = sigmoid(h_e, theta[SMAX_E], theta[MU_E], theta[SIG_E]);
    let s_i = sigmoid(h_i, theta[SMAX_I], theta[MU_I], theta[SIG_I]);
    let phi_ee = theta[NA_EE] * s_e;
    let phi_ei = theta[NA_EI] * s_e;
    let mut x = DVector::zeros(14);
    x[st::H_E] = h_e;
    x[st::H_I] = h_i;
    x[st::I_EE] = theta[Q_EE] * Q_SCALE * (theta[NB_EE] * s_e + phi_ee + theta[P_EE]);
    x[st::I_EI] = theta[Q_EI] * Q_SCALE * (theta[NB_EI] * s_e + phi_ei + theta[P_EI]);
    x[st::I_IE] = theta[Q_IE] * Q_SCALE * theta[NB_IE] * s_i;
    x[st::I_II] = theta[Q_II] * Q_SCALE * theta[NB_II] * s_i;
    x[st::PHI_EE] = phi_ee;
    x[st::PHI_EI] = phi_ei;
    x
}
