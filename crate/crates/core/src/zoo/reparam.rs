//! Steady-state reparameterizations: equilibrium coordinates replace input
//! parameters as sampling variables.

use num_dual::Dual;

use crate::error::{Error, Result};
use crate::model::Scalar;
use crate::zoo::fhn::cubic;
use crate::zoo::npm::{ix, psi, sigmoid, st, Q_SCALE};

/// Where a stochastic coordinate lives in the original description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Param(usize),
    State(usize),
}

/// Closed-form map from stochastic coordinates `(θ_s, x₂*)` to the full
/// parameter vector and equilibrium state.
pub trait ReparamMap: Sync {
    fn stochastic_names(&self) -> Vec<&'static str>;
    fn deterministic_names(&self) -> Vec<&'static str>;
    /// Origin of each stochastic coordinate.
    fn sources(&self) -> Vec<Source>;
    /// Indices into the parameter vector of the deterministically updated parameters `θ_d`.
    fn deterministic_indices(&self) -> Vec<usize>;
    /// `(θ, x*)` from the stochastic coordinates; parameters not covered by
    /// the map are taken from `base`.
    fn forward<S: Scalar>(&self, z: &[S], base: &[f64]) -> Result<(Vec<S>, Vec<S>)>;

    /// Positions of the equilibrium coordinates `x₂*` within the stochastic vector.
    fn equilibrium_coords(&self) -> Vec<usize> {
        self.sources()
            .iter()
            .enumerate()
            .filter_map(|(i, s)| matches!(s, Source::State(_)).then_some(i))
            .collect()
    }

    /// Stochastic coordinates of a known `(θ, x*)` pair.
    fn inverse(&self, theta: &[f64], x_star: &[f64]) -> Vec<f64> {
        self.sources()
            .iter()
            .map(|s| match *s {
                Source::Param(i) => theta[i],
                Source::State(i) => x_star[i],
            })
            .collect()
    }
}

/// `log |det ∂θ_d/∂x₂*|`, the density correction of the change of variables.
///
/// The Jacobian block is obtained by differentiating the closed-form map with
/// nested dual numbers, so the result can itself be differentiated by the
/// caller's number type.
pub fn log_jacobian<R: ReparamMap + ?Sized, S: Scalar>(
    map: &R,
    z: &[S],
    base: &[f64],
) -> Result<S> {
    let coords = map.equilibrium_coords();
    let det_idx = map.deterministic_indices();
    let k = coords.len();
    if k != det_idx.len() {
        return Err(Error::Dimension(format!(
            "{} equilibrium coordinates but {} deterministic parameters",
            k,
            det_idx.len()
        )));
    }
    if k == 0 {
        return Ok(S::from(0.0));
    }
    let mut jac = vec![S::from(0.0); k * k];
    for (col, &j) in coords.iter().enumerate() {
        let zd: Vec<Dual<S, f64>> = z
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::new(v, S::from(if i == j { 1.0 } else { 0.0 })))
            .collect();
        let (theta, _) = map.forward(&zd, base)?;
        for (row, &di) in det_idx.iter().enumerate() {
            jac[row * k + col] = theta[di].eps;
        }
    }
    let det = determinant(jac, k);
    if det.re() == 0.0 || !det.re().is_finite() {
        return Err(Error::Domain("singular reparameterization Jacobian".into()));
    }
    Ok(det.abs().ln())
}

/// Determinant by Gaussian elimination with partial pivoting on the real parts.
pub fn determinant<S: Scalar>(mut m: Vec<S>, k: usize) -> S {
    let mut det = S::from(1.0);
    for c in 0..k {
        let p = (c..k)
            .max_by(|&a, &b| m[a * k + c].re().abs().total_cmp(&m[b * k + c].re().abs()))
            .unwrap();
        if m[p * k + c].re() == 0.0 {
            return S::from(0.0);
        }
        if p != c {
            for j in 0..k {
                m.swap(p * k + j, c * k + j);
            }
            det = -det;
        }
        let piv = m[c * k + c];
        det *= piv;
        for r in c + 1..k {
            let f = m[r * k + c] / piv;
            for j in c..k {
                let v = m[c * k + j];
                m[r * k + j] -= f * v;
            }
        }
    }
    det
}

fn lift<S: Scalar>(base: &[f64]) -> Vec<S> {
    base.iter().map(|&v| S::from(v)).collect()
}

/// Which FHN variables are observed, deciding the reparameterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FhnVariant {
    /// `V` observed, `d` known: stochastic `(a, b, c, V*)`, deterministic `I₀` (and `w*`).
    VOnly,
    /// Both observed: stochastic `(a, b, c, V*, w*)`, deterministic `(I₀, d)`.
    VAndW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FhnReparam(pub FhnVariant);

impl ReparamMap for FhnReparam {
    fn stochastic_names(&self) -> Vec<&'static str> {
        match self.0 {
            FhnVariant::VOnly => vec!["a", "b", "c", "V_star"],
            FhnVariant::VAndW => vec!["a", "b", "c", "V_star", "w_star"],
        }
    }

    fn deterministic_names(&self) -> Vec<&'static str> {
        match self.0 {
            FhnVariant::VOnly => vec!["I0"],
            FhnVariant::VAndW => vec!["I0", "d"],
        }
    }

    fn sources(&self) -> Vec<Source> {
        let mut s = vec![
            Source::Param(0),
            Source::Param(1),
            Source::Param(2),
            Source::State(0),
        ];
        if self.0 == FhnVariant::VAndW {
            s.push(Source::State(1));
        }
        s
    }

    fn deterministic_indices(&self) -> Vec<usize> {
        match self.0 {
            FhnVariant::VOnly => vec![4],
            FhnVariant::VAndW => vec![4, 3],
        }
    }

    fn forward<S: Scalar>(&self, z: &[S], base: &[f64]) -> Result<(Vec<S>, Vec<S>)> {
        let mut theta = lift::<S>(base);
        let (a, b, c, v) = (z[0], z[1], z[2], z[3]);
        theta[0] = a;
        theta[1] = b;
        theta[2] = c;
        let w = match self.0 {
            FhnVariant::VOnly => {
                if c.re() == 0.0 {
                    return Err(Error::Domain("c = 0".into()));
                }
                (b * v + theta[3]) / c
            }
            FhnVariant::VAndW => {
                let w = z[4];
                theta[3] = c * w - b * v;
                w
            }
        };
        theta[4] = w - cubic(v, a);
        Ok((theta, vec![v, w]))
    }
}

/// NPM map: stochastic `(γ_ee, γ_ei, γ_ie, γ_ii, q_ee, q_ei, q_ie, q_ii, σ_p², h_e*, h_i*)`,
/// deterministic `(p̄_ee, p̄_ei)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NpmReparam;

impl ReparamMap for NpmReparam {
    fn stochastic_names(&self) -> Vec<&'static str> {
        vec![
            "gamma_ee",
            "gamma_ei",
            "gamma_ie",
            "gamma_ii",
            "q_ee",
            "q_ei",
            "q_ie",
            "q_ii",
            "sigma_p_sq",
            "h_e_star",
            "h_i_star",
        ]
    }

    fn deterministic_names(&self) -> Vec<&'static str> {
        vec!["p_bar_ee", "p_bar_ei"]
    }

    fn sources(&self) -> Vec<Source> {
        vec![
            Source::Param(ix::G_EE),
            Source::Param(ix::G_EI),
            Source::Param(ix::G_IE),
            Source::Param(ix::G_II),
            Source::Param(ix::Q_EE),
            Source::Param(ix::Q_EI),
            Source::Param(ix::Q_IE),
            Source::Param(ix::Q_II),
            Source::Param(ix::SIGMA_P_SQ),
            Source::State(st::H_E),
            Source::State(st::H_I),
        ]
    }

    fn deterministic_indices(&self) -> Vec<usize> {
        vec![ix::P_EE, ix::P_EI]
    }

    fn forward<S: Scalar>(&self, z: &[S], base: &[f64]) -> Result<(Vec<S>, Vec<S>)> {
        use ix::*;
        let mut t = lift::<S>(base);
        for (k, idx) in [G_EE, G_EI, G_IE, G_II, Q_EE, Q_EI, Q_IE, Q_II, SIGMA_P_SQ]
            .into_iter()
            .enumerate()
        {
            t[idx] = z[k];
        }
        let (h_e, h_i) = (z[9], z[10]);
        let s_e = sigmoid(h_e, t[SMAX_E], t[MU_E], t[SIG_E]);
        let s_i = sigmoid(h_i, t[SMAX_I], t[MU_I], t[SIG_I]);
        let phi_ee = t[NA_EE] * s_e;
        let phi_ei = t[NA_EI] * s_e;
        let i_ie = t[Q_IE] * Q_SCALE * t[NB_IE] * s_i;
        let i_ii = t[Q_II] * Q_SCALE * t[NB_II] * s_i;
        let psi_ee = psi(t[H_EQ_EE], h_e, t[H_R_E]);
        let psi_ie = psi(t[H_EQ_IE], h_e, t[H_R_E]);
        let psi_ei = psi(t[H_EQ_EI], h_i, t[H_R_I]);
        let psi_ii = psi(t[H_EQ_II], h_i, t[H_R_I]);
        for (name, v) in [
            ("psi_ee", psi_ee),
            ("psi_ei", psi_ei),
            ("q_ee", t[Q_EE]),
            ("q_ei", t[Q_EI]),
        ] {
            if v.re().abs() < 1e-12 {
                return Err(Error::Domain(format!("{name} vanishes")));
            }
        }
        let i_ee = (h_e - t[H_R_E] - psi_ie * i_ie) / psi_ee;
        let i_ei = (h_i - t[H_R_I] - psi_ii * i_ii) / psi_ei;
        t[P_EE] = i_ee / (t[Q_EE] * Q_SCALE) - t[NB_EE] * s_e - phi_ee;
        t[P_EI] = i_ei / (t[Q_EI] * Q_SCALE) - t[NB_EI] * s_e - phi_ei;

        let zero = S::from(0.0);
        let mut x = vec![zero; 14];
        x[st::H_E] = h_e;
        x[st::H_I] = h_i;
        x[st::I_EE] = i_ee;
        x[st::I_EI] = i_ei;
        x[st::I_IE] = i_ie;
        x[st::I_II] = i_ii;
        x[st::PHI_EE] = phi_ee;
        x[st::PHI_EI] = phi_ei;
        Ok((t, x))
    }
}

/// Either of the provided maps, for callers that choose one at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnyReparam {
    Fhn(FhnReparam),
    Npm(NpmReparam),
}

impl ReparamMap for AnyReparam {
    fn stochastic_names(&self) -> Vec<&'static str> {
        match self {
            AnyReparam::Fhn(m) => m.stochastic_names(),
            AnyReparam::Npm(m) => m.stochastic_names(),
        }
    }

    fn deterministic_names(&self) -> Vec<&'static str> {
        match self {
            AnyReparam::Fhn(m) => m.deterministic_names(),
            AnyReparam::Npm(m) => m.deterministic_names(),
        }
    }

    fn sources(&self) -> Vec<Source> {
        match self {
            AnyReparam::Fhn(m) => m.sources(),
            AnyReparam::Npm(m) => m.sources(),
        }
    }

    fn deterministic_indices(&self) -> Vec<usize> {
        match self {
            AnyReparam::Fhn(m) => m.deterministic_indices(),
            AnyReparam::Npm(m) => m.deterministic_indices(),
        }
    }

    fn forward<S: Scalar>(&self, z: &[S], base: &[f64]) -> Result<(Vec<S>, Vec<S>)> {
        match self {
            AnyReparam::Fhn(m) => m.forward(z, base),
            AnyReparam::Npm(m) => m.forward(z, base),
        }
    }
}
