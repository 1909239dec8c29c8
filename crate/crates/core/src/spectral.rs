//! Transfer functions, spectral densities and their parameter derivatives.

use std::f64::consts::PI;

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LinearSystem, LinearTangent, REPEATED_EIGENVALUE_TOL};

/// Above this bound on `‖L‖·‖R‖` the eigen route is abandoned for dense solves.
pub const MAX_EIGENVECTOR_CONDITION: f64 = 1e14;

/// Relative agreement required between modal sums and dense solves at the
/// spot-check frequencies before the modal route is used on a whole grid.
pub const MODAL_SPOT_CHECK_TOL: f64 = 1e-9;

/// Eigen-derivatives are only trusted below this bound on `‖L‖·‖R‖`.
pub const MAX_DERIVATIVE_CONDITION: f64 = 1e8;

/// Eigenvalues with unit-norm right eigenvectors (columns of `r`) and left
/// eigenvectors (rows of `l`) normalized so that `l·r = I`.
///
/// Ordering is by real part, then imaginary part, both descending. Each right
/// eigenvector is rotated so that `rᵀr` is real and positive.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub lambdas: Vec<Complex64>,
    pub r: DMatrix<Complex64>,
    pub l: DMatrix<Complex64>,
    /// Smallest distance between two eigenvalues.
    pub min_gap: f64,
    /// Frobenius norm of the decomposed matrix.
    pub norm: f64,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    /// Eigenvalues closer than `1e-8·‖A‖`; derivatives are unreliable there.
    pub fn is_nearly_defective(&self) -> bool {
        self.min_gap < REPEATED_EIGENVALUE_TOL * self.norm
    }

    /// `‖L‖_F·‖R‖_F`, an upper bound on the eigenvector condition number.
    pub fn condition(&self) -> f64 {
        self.l.norm() * self.r.norm()
    }

    /// Whether transfer functions may be evaluated through this decomposition.
    pub fn is_well_conditioned(&self) -> bool {
        let c = self.condition();
        c.is_finite() && c < MAX_EIGENVECTOR_CONDITION
    }

    /// Per-mode weights `(obs·r_k, l_k·b)` for a fixed readout and input.
    pub fn modal_weights(
        &self,
        obs: &DVector<f64>,
        input: &DVector<f64>,
    ) -> (Vec<Complex64>, Vec<Complex64>) {
        let d = self.dim();
        let h = (0..d)
            .map(|k| (0..d).map(|i| self.r[(i, k)] * obs[i]).sum())
            .collect();
        let g = (0..d)
            .map(|k| (0..d).map(|i| self.l[(k, i)] * input[i]).sum())
            .collect();
        (h, g)
    }
}

/// Symmetric diagonal balancing `D⁻¹AD` with powers of two (Parlett–Reinsch).
fn balance(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    let mut b = a.clone();
    let mut d = DVector::from_element(n, 1.0);
    let radix: f64 = 2.0;
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let c: f64 = (0..n).filter(|&j| j != i).map(|j| b[(j, i)].abs()).sum();
            let r: f64 = (0..n).filter(|&j| j != i).map(|j| b[(i, j)].abs()).sum();
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            let mut rr = r;
            while cc < rr / radix {
                cc *= radix;
                rr /= radix;
                f *= radix;
            }
            while cc >= rr * radix {
                cc /= radix;
                rr *= radix;
                f /= radix;
            }
            if (cc + rr) < 0.95 * s {
                converged = false;
                d[i] *= f;
                for j in 0..n {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
    }
    (b, d)
}

fn ordering(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im))
}

/// Eigendecomposition of a real matrix.
pub fn eigendecompose(a: &DMatrix<f64>) -> Result<EigenDecomposition> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::Dimension(
            "eigendecomposition needs a non-empty square matrix".into(),
        ));
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::EigenFailure("matrix has non-finite entries".into()));
    }
    let (bal, scale) = balance(a);
    let ac: DMatrix<Complex64> = bal.map(|v| Complex64::new(v, 0.0));
    let schur = Schur::try_new(ac, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::EigenFailure("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let t_norm = t.norm().max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * t_norm;

    // Eigenvectors of the triangular factor by back-substitution.
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for k in 0..n {
        let lambda = t[(k, k)];
        y[(k, k)] = Complex64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let s: Complex64 = (i + 1..=k).map(|j| t[(i, j)] * y[(j, k)]).sum();
            let mut den = t[(i, i)] - lambda;
            if den.norm() < small {
                den = Complex64::new(small, 0.0);
            }
            y[(i, k)] = -s / den;
        }
        let big = (0..=k).map(|i| y[(i, k)].norm()).fold(0.0, f64::max);
        if big > 1e100 {
            for i in 0..=k {
                y[(i, k)] /= big;
            }
        }
    }
    let mut r = &q * y;
    for i in 0..n {
        for k in 0..n {
            r[(i, k)] *= scale[i];
        }
    }
    let lambdas_unsorted: Vec<Complex64> = (0..n).map(|k| t[(k, k)]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| ordering(&lambdas_unsorted[i], &lambdas_unsorted[j]));
    let lambdas: Vec<Complex64> = order.iter().map(|&i| lambdas_unsorted[i]).collect();
    let mut rs = DMatrix::<Complex64>::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut v = r.column(k).into_owned();
        let nrm = v.norm();
        if nrm == 0.0 || !nrm.is_finite() {
            return Err(Error::EigenFailure("degenerate eigenvector".into()));
        }
        v /= Complex64::new(nrm, 0.0);
        let s: Complex64 = v.iter().map(|x| x * x).sum();
        if s.norm() > 0.0 {
            v *= Complex64::from_polar(1.0, -0.5 * s.arg());
        }
        rs.set_column(col, &v);
    }
    let l = rs
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::EigenFailure("eigenvector matrix is singular".into()))?;
    let mut min_gap = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            min_gap = min_gap.min((lambdas[i] - lambdas[j]).norm());
        }
    }
    Ok(EigenDecomposition {
        lambdas,
        r: rs,
        l,
        min_gap,
        norm: a.norm(),
    })
}

/// `T_oi(ω) = Σ_k R[o,k]·L[k,i]/(iω − λ_k)`.
pub fn transfer_element(
    eig: &EigenDecomposition,
    omega: f64,
    out_idx: usize,
    in_idx: usize,
) -> Complex64 {
    let iw = Complex64::new(0.0, omega);
    eig.lambdas
        .iter()
        .enumerate()
        .map(|(k, lam)| eig.r[(out_idx, k)] * eig.l[(k, in_idx)] / (iw - lam))
        .sum()
}

/// Full resolvent `(iωI − A)⁻¹` assembled from the eigendecomposition.
pub fn transfer_matrix(eig: &EigenDecomposition, omega: f64) -> DMatrix<Complex64> {
    let n = eig.dim();
    let iw = Complex64::new(0.0, omega);
    let inv = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        eig.lambdas.iter().map(|l| (iw - l).inv()),
    ));
    &eig.r * inv * &eig.l
}

/// `obs·(iωI − A)⁻¹·b` by a dense complex solve.
pub fn transfer_dense(
    a: &DMatrix<f64>,
    omega: f64,
    obs: &DVector<f64>,
    input: &DVector<f64>,
) -> Result<Complex64> {
    let n = a.nrows();
    let m = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
        let diag = if i == j {
            Complex64::new(0.0, omega)
        } else {
            Complex64::new(0.0, 0.0)
        };
        diag - a[(i, j)]
    });
    let rhs = input.map(|v| Complex64::new(v, 0.0));
    let u = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::EigenFailure(format!("resolvent is singular at ω = {omega}")))?;
    Ok(u.iter().zip(obs.iter()).map(|(u, o)| u * o).sum())
}

/// Model spectral density on the Whittle frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    /// `ν_k = k/(nΔt)`, `k = 1, …, n/2 − 1`, in Hz.
    pub freqs: Vec<f64>,
    /// State-process density `c|T(2πν)|²/Δt`.
    pub f: Vec<f64>,
    /// `f + σ_obs²`.
    pub f_tilde: Vec<f64>,
    /// `∂f̃/∂θ_m` for each parameter direction `m` (outer index).
    pub grad_f_tilde: Option<Vec<Vec<f64>>>,
    pub dt: f64,
    pub n: usize,
}

/// Whittle frequencies `k/(nΔt)` for `k = 1, …, n/2 − 1`.
pub fn frequency_grid(n: usize, dt: f64) -> Vec<f64> {
    (1..n / 2).map(|k| k as f64 / (n as f64 * dt)).collect()
}

fn modal_transfer(hg: &[Complex64], lambdas: &[Complex64], nu: f64) -> Complex64 {
    let iw = Complex64::new(0.0, 2.0 * PI * nu);
    hg.iter().zip(lambdas).map(|(w, lam)| w / (iw - lam)).sum()
}

/// Whether modal sums reproduce dense resolvent solves on `freqs`.
///
/// Checked at the ends of the grid and at the grid points nearest each
/// eigenvalue's oscillation frequency, where cancellation is worst.
fn modal_route_agrees(
    sys: &LinearSystem,
    eig: &EigenDecomposition,
    hg: &[Complex64],
    freqs: &[f64],
) -> Result<bool> {
    if !eig.is_well_conditioned() {
        return Ok(false);
    }
    if freqs.is_empty() {
        return Ok(true);
    }
    let mut probes = vec![0, freqs.len() - 1];
    for lam in &eig.lambdas {
        let nu = lam.im.abs() / (2.0 * PI);
        let idx = freqs.partition_point(|&f| f < nu).min(freqs.len() - 1);
        probes.push(idx);
    }
    probes.sort_unstable();
    probes.dedup();
    for idx in probes {
        let nu = freqs[idx];
        let dense = transfer_dense(&sys.a, 2.0 * PI * nu, &sys.obs_row, &sys.input_weights)?;
        let modal = modal_transfer(hg, &eig.lambdas, nu);
        if (dense - modal).norm() > MODAL_SPOT_CHECK_TOL * dense.norm() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Transfer values `obs·T(2πν)·b` on a list of frequencies, by modal sums
/// when they pass the spot check and by dense solves otherwise.
fn transfer_on_grid(
    sys: &LinearSystem,
    eig: &EigenDecomposition,
    freqs: &[f64],
) -> Result<Vec<Complex64>> {
    let (h, g) = eig.modal_weights(&sys.obs_row, &sys.input_weights);
    let hg: Vec<Complex64> = h.iter().zip(&g).map(|(a, b)| a * b).collect();
    if modal_route_agrees(sys, eig, &hg, freqs)? {
        Ok(freqs
            .iter()
            .map(|&nu| modal_transfer(&hg, &eig.lambdas, nu))
            .collect())
    } else {
        freqs
            .iter()
            .map(|nu| transfer_dense(&sys.a, 2.0 * PI * nu, &sys.obs_row, &sys.input_weights))
            .collect()
    }
}

/// Spectral density `f(ν) = c·|T(2πν)|²/Δt` and `f̃ = f + σ_obs²` on the
/// Whittle grid of a length-`n` series sampled every `dt`.
///
/// Uses modal sums over the eigendecomposition when they agree with dense
/// resolvent solves at spot-check frequencies, and dense solves otherwise.
pub fn spectral_density(sys: &LinearSystem, n: usize, dt: f64) -> Result<SpectrumGrid> {
    let freqs = frequency_grid(n, dt);
    let eig = eigendecompose(&sys.a)?;
    let t = transfer_on_grid(sys, &eig, &freqs)?;
    Ok(grid_from_transfer(sys, freqs, &t, n, dt))
}

fn grid_from_transfer(
    sys: &LinearSystem,
    freqs: Vec<f64>,
    t: &[Complex64],
    n: usize,
    dt: f64,
) -> SpectrumGrid {
    let floor = sys.obs_noise_sd * sys.obs_noise_sd;
    let f: Vec<f64> = t
        .iter()
        .map(|t| sys.noise_intensity * t.norm_sqr() / dt)
        .collect();
    let f_tilde = f.iter().map(|v| v + floor).collect();
    SpectrumGrid {
        freqs,
        f,
        f_tilde,
        grad_f_tilde: None,
        dt,
        n,
    }
}

/// Derivatives of eigenvalues and eigenvectors along parameter directions.
#[derive(Debug, Clone)]
pub struct EigenDerivatives {
    /// `dlambda[m][k] = ∂λ_k/∂θ_m`.
    pub dlambda: Vec<Vec<Complex64>>,
    /// `dr[m]` holds `∂r_k/∂θ_m` in column `k`, gauge `r_kᵀ ∂r_k = 0`.
    pub dr: Vec<DMatrix<Complex64>>,
    /// `dl[m] = −L·dr[m]·L`, preserving `L·R = I`.
    pub dl: Vec<DMatrix<Complex64>>,
    /// False when eigenvalues are nearly repeated or a bordered system is singular.
    pub valid: bool,
}

/// Eigenvalue and eigenvector derivatives from one bordered system per eigenvalue,
/// `[[A − λI, −r], [rᵀ, 0]]·[∂r; ∂λ] = [−∂A·r; 0]`, factorized once and reused
/// for all parameter directions.
pub fn eigen_derivatives(
    a: &DMatrix<f64>,
    d_a: &[DMatrix<f64>],
    eig: &EigenDecomposition,
) -> EigenDerivatives {
    let n = eig.dim();
    let p = d_a.len();
    let mut out = EigenDerivatives {
        dlambda: vec![vec![Complex64::new(0.0, 0.0); n]; p],
        dr: vec![DMatrix::zeros(n, n); p],
        dl: vec![DMatrix::zeros(n, n); p],
        valid: !eig.is_nearly_defective() && eig.condition() < MAX_DERIVATIVE_CONDITION,
    };
    if !out.valid {
        return out;
    }
    let d_ac: Vec<DMatrix<Complex64>> = d_a
        .iter()
        .map(|m| m.map(|v| Complex64::new(v, 0.0)))
        .collect();
    let zero = Complex64::new(0.0, 0.0);
    for k in 0..n {
        let lam = eig.lambdas[k];
        let r = eig.r.column(k);
        let mut border = DMatrix::<Complex64>::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                border[(i, j)] = Complex64::new(a[(i, j)], 0.0) - if i == j { lam } else { zero };
            }
            border[(i, n)] = -r[i];
            border[(n, i)] = r[i];
        }
        let mut rhs = DMatrix::<Complex64>::zeros(n + 1, p);
        for (m, dam) in d_ac.iter().enumerate() {
            let v = -(dam * r);
            for i in 0..n {
                rhs[(i, m)] = v[i];
            }
        }
        let lu = border.lu();
        let Some(sol) = lu.solve(&rhs) else {
            out.valid = false;
            return out;
        };
        if !sol.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            out.valid = false;
            return out;
        }
        for m in 0..p {
            for i in 0..n {
                out.dr[m][(i, k)] = sol[(i, m)];
            }
            out.dlambda[m][k] = sol[(n, m)];
        }
    }
    for m in 0..p {
        out.dl[m] = -(&eig.l * &out.dr[m] * &eig.l);
    }
    out
}

/// Whether a spectral gradient came from the analytic eigen route.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientRoute {
    Analytic,
    /// Eigenvalues nearly repeated or eigenvectors ill conditioned; the caller
    /// must fall back to finite differences.
    FallbackRequired,
}

/// Spectral density together with `∂f̃/∂θ_m` along each tangent.
///
/// `T_θ = Σ_k [(∂h_k g_k + h_k ∂g_k)/(iω − λ_k) + h_k g_k ∂λ_k/(iω − λ_k)²]` with
/// `h_k = obs·r_k`, `g_k = l_k·b`, and
/// `∂f̃ = (∂c|T|² + 2c Re(T̄ T_θ))/Δt + 2σ_obs ∂σ_obs`.
pub fn spectral_gradient(
    sys: &LinearSystem,
    tangents: &[LinearTangent],
    n: usize,
    dt: f64,
) -> Result<(SpectrumGrid, GradientRoute)> {
    let freqs = frequency_grid(n, dt);
    let eig = eigendecompose(&sys.a)?;
    let d_a: Vec<DMatrix<f64>> = tangents.iter().map(|t| t.d_a.clone()).collect();
    let ed = eigen_derivatives(&sys.a, &d_a, &eig);
    if !ed.valid {
        let t = transfer_on_grid(sys, &eig, &freqs)?;
        return Ok((
            grid_from_transfer(sys, freqs, &t, n, dt),
            GradientRoute::FallbackRequired,
        ));
    }
    let d = eig.dim();
    let (h, g) = eig.modal_weights(&sys.obs_row, &sys.input_weights);
    let hg: Vec<Complex64> = h.iter().zip(&g).map(|(a, b)| a * b).collect();
    let mut alpha = vec![vec![Complex64::new(0.0, 0.0); d]; tangents.len()];
    let mut beta = vec![vec![Complex64::new(0.0, 0.0); d]; tangents.len()];
    for (m, tan) in tangents.iter().enumerate() {
        for k in 0..d {
            let dh: Complex64 = (0..d).map(|i| ed.dr[m][(i, k)] * sys.obs_row[i]).sum();
            let dg: Complex64 = (0..d)
                .map(|i| ed.dl[m][(k, i)] * sys.input_weights[i] + eig.l[(k, i)] * tan.d_input[i])
                .sum();
            alpha[m][k] = dh * g[k] + h[k] * dg;
            beta[m][k] = hg[k] * ed.dlambda[m][k];
        }
    }
    let c = sys.noise_intensity;
    let sigma = sys.obs_noise_sd;
    let floor = sigma * sigma;
    let mut f = Vec::with_capacity(freqs.len());
    let mut grad = vec![Vec::with_capacity(freqs.len()); tangents.len()];
    let mut inv = vec![Complex64::new(0.0, 0.0); d];
    for nu in &freqs {
        let iw = Complex64::new(0.0, 2.0 * PI * nu);
        for k in 0..d {
            inv[k] = (iw - eig.lambdas[k]).inv();
        }
        let t: Complex64 = (0..d).map(|k| hg[k] * inv[k]).sum();
        let t2 = t.norm_sqr();
        f.push(c * t2 / dt);
        for (m, tan) in tangents.iter().enumerate() {
            let tm: Complex64 = (0..d)
                .map(|k| alpha[m][k] * inv[k] + beta[m][k] * inv[k] * inv[k])
                .sum();
            let df = (tan.d_intensity * t2 + 2.0 * c * (t.conj() * tm).re) / dt;
            grad[m].push(df + 2.0 * sigma * tan.d_obs_sd);
        }
    }
    let f_tilde = f.iter().map(|v| v + floor).collect();
    Ok((
        SpectrumGrid {
            freqs,
            f,
            f_tilde,
            grad_f_tilde: Some(grad),
            dt,
            n,
        },
        GradientRoute::Analytic,
    ))
}

/// Expected information of the Whittle likelihood,
/// `G_ij = Σ_k ∂_i f̃_k ∂_j f̃_k / f̃_k²`.
pub fn whittle_fisher(grid: &SpectrumGrid) -> Option<DMatrix<f64>> {
    let grad = grid.grad_f_tilde.as_ref()?;
    let p = grad.len();
    let mut g = DMatrix::zeros(p, p);
    for (k, ft) in grid.f_tilde.iter().enumerate() {
        let w = 1.0 / (ft * ft);
        for i in 0..p {
            let gi = grad[i][k] * w;
            for j in 0..=i {
                g[(i, j)] += gi * grad[j][k];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            g[(j, i)] = g[(i, j)];
        }
    }
    Some(g)
}

/// State-process density at every DFT index `k = 0, …, n−1`, extended so that
/// `f_k = f_{n−k}`.
pub fn full_grid_density(sys: &LinearSystem, n: usize, dt: f64) -> Result<Vec<f64>> {
    let eig = eigendecompose(&sys.a)?;
    let half: Vec<f64> = (0..=n / 2).map(|k| k as f64 / (n as f64 * dt)).collect();
    let t = transfer_on_grid(sys, &eig, &half)?;
    let fh: Vec<f64> = t
        .iter()
        .map(|t| sys.noise_intensity * t.norm_sqr() / dt)
        .collect();
    Ok((0..n).map(|k| fh[k.min(n - k)]).collect())
}

/// Autocovariance `γ(h) = (1/n) Σ_k f_k e^{i2πkh/n}` at lags `0, …, n−1`.
pub fn autocovariance_from_spectrum(f_full: &[f64]) -> Result<Vec<f64>> {
    let n = f_full.len();
    let mut buf: Vec<Complex64> = f_full.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    let gamma0 = (buf[0].re * scale).abs();
    let max_imag = buf.iter().map(|z| (z.im * scale).abs()).fold(0.0, f64::max);
    if max_imag > 1e-8 * gamma0.max(f64::MIN_POSITIVE) {
        return Err(Error::ImagResidual(max_imag));
    }
    Ok(buf.iter().map(|z| z.re * scale).collect())
}

/// `φ = Σ_{h=−H}^{H} |h|·|γ(h)| = 2 Σ_{h=1}^{H} h·|γ(h)|`.
///
/// Fails when the last decade of lags contributes more than 1% of the sum.
pub fn phi_statistic(gamma: &[f64], truncation: usize) -> Result<f64> {
    let h_max = truncation.min(gamma.len().saturating_sub(1));
    let terms: Vec<f64> = (1..=h_max).map(|h| h as f64 * gamma[h].abs()).collect();
    let total: f64 = terms.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let start = (h_max * 9) / 10;
    let tail: f64 = terms[start..].iter().sum();
    let share = tail / total;
    if share >= 0.01 {
        return Err(Error::TailNotConverged(share));
    }
    Ok(2.0 * total)
}

/// Result of the Whittle-accuracy heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesLengthReport {
    pub phi: f64,
    pub max_f: f64,
    pub n_min: usize,
    pub t_min: f64,
    /// Number of DFT points the autocovariance was resolved on.
    pub grid_size: usize,
}

impl SeriesLengthReport {
    /// Whether `φ/n < 0.01·max f` holds for a series of length `n`.
    pub fn passes(&self, n: usize) -> bool {
        n >= self.n_min
    }
}

/// Smallest `n` with `φ/n < 0.01·max_k f(ν_k)`.
///
/// The autocovariance is resolved on a DFT grid that is doubled until the
/// tail of `φ` has converged.
pub fn min_series_length(sys: &LinearSystem, dt: f64) -> Result<SeriesLengthReport> {
    let mut n = 1 << 14;
    loop {
        let f_full = full_grid_density(sys, n, dt)?;
        let gamma = autocovariance_from_spectrum(&f_full)?;
        let max_f = f_full[1..n / 2].iter().copied().fold(0.0, f64::max);
        match phi_statistic(&gamma, n / 2) {
            Ok(phi) => {
                let n_min = if max_f > 0.0 {
                    (phi / (0.01 * max_f)).floor() as usize + 1
                } else {
                    1
                };
                return Ok(SeriesLengthReport {
                    phi,
                    max_f,
                    n_min,
                    t_min: n_min as f64 * dt,
                    grid_size: n,
                });
            }
            Err(e) if n >= 1 << 24 => return Err(e),
            Err(_) => n *= 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{find_equilibrium, linearize, Model};
    use crate::zoo::{harmonic_oscillator, HoParams, Npm, NpmParams};

    fn ou(kappa: f64, c: f64, sigma: f64) -> LinearSystem {
        LinearSystem {
            a: DMatrix::from_element(1, 1, -kappa),
            x_star: DVector::zeros(1),
            input_weights: DVector::from_element(1, 1.0),
            obs_row: DVector::from_element(1, 1.0),
            noise_intensity: c,
            obs_noise_sd: sigma,
        }
    }

    #[test]
    fn ou_density_closed_form() {
        let (kappa, c, dt) = (3.0, 2.0, 0.01);
        let grid = spectral_density(&ou(kappa, c, 0.5), 200, dt).unwrap();
        assert_eq!(grid.freqs.len(), 99);
        for ((nu, f), ft) in grid.freqs.iter().zip(&grid.f).zip(&grid.f_tilde) {
            let w = 2.0 * PI * nu;
            let want = c / (w * w + kappa * kappa) / dt;
            assert!((f - want).abs() <= 1e-12 * want);
            assert!((ft - f - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposition_invariants() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.5, -3.0, -0.2, 1.0, 0.1, 0.0, -4.0]);
        let e = eigendecompose(&a).unwrap();
        let lam = DMatrix::from_diagonal(&DVector::from_vec(e.lambdas.clone()));
        let ac = a.map(|v| Complex64::new(v, 0.0));
        assert!((&ac * &e.r - &e.r * lam).norm() <= 1e-12 * a.norm());
        assert!((&e.l * &e.r - DMatrix::identity(3, 3)).norm() <= 1e-12);
        for w in e.lambdas.windows(2) {
            assert!(w[0].re >= w[1].re);
        }
        for k in 0..3 {
            let s: Complex64 = e.r.column(k).iter().map(|x| x * x).sum();
            assert!(s.im.abs() < 1e-12 && s.re > 0.0);
            assert!((e.r.column(k).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transfer_matches_dense_solve() {
        let sys = harmonic_oscillator(&HoParams {
            zeta: 0.2,
            omega0: 80.0,
            noise_intensity: 1.0,
            obs_noise_sd: 0.0,
        })
        .unwrap();
        let e = eigendecompose(&sys.a).unwrap();
        for omega in [0.0, 10.0, 73.0, 500.0] {
            let dense = transfer_dense(&sys.a, omega, &sys.obs_row, &sys.input_weights).unwrap();
            let modal = transfer_element(&e, omega, 0, 1);
            assert!((dense - modal).norm() <= 1e-12 * dense.norm());
        }
    }

    #[test]
    fn oscillator_peak_location() {
        let p = HoParams {
            zeta: 0.2,
            omega0: 80.0,
            noise_intensity: 1.0,
            obs_noise_sd: 0.0,
        };
        let sys = harmonic_oscillator(&p).unwrap();
        let dt = 1e-3;
        let grid = spectral_density(&sys, 200_000, dt).unwrap();
        let (imax, _) = grid
            .f
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let peak = 2.0 * PI * grid.freqs[imax];
        let spacing = 2.0 * PI / (200_000.0 * dt);
        assert!((peak - p.peak_angular_frequency().unwrap()).abs() <= spacing);
    }

    #[test]
    fn eigen_derivatives_match_finite_differences() {
        let a0 = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.5, -3.0, -0.2, 1.0, 0.1, 0.0, -4.0]);
        let da = DMatrix::from_row_slice(3, 3, &[0.3, -0.1, 0.0, 0.2, 0.5, -0.4, 0.0, 1.0, 0.1]);
        let e0 = eigendecompose(&a0).unwrap();
        let ed = eigen_derivatives(&a0, &[da.clone()], &e0);
        assert!(ed.valid);
        let h = 1e-6;
        let ep = eigendecompose(&(&a0 + &da * h)).unwrap();
        let em = eigendecompose(&(&a0 - &da * h)).unwrap();
        // Rescale the perturbed eigenvectors into the gauge rᵀ∂r = 0.
        let gauge = |e: &EigenDecomposition, k: usize| {
            let r0 = e0.r.column(k);
            let r = e.r.column(k);
            let s: Complex64 = r0.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            let n0: Complex64 = r0.iter().map(|x| x * x).sum();
            r.into_owned() * (n0 / s)
        };
        for k in 0..3 {
            let dl = (ep.lambdas[k] - em.lambdas[k]) / (2.0 * h);
            assert!((dl - ed.dlambda[0][k]).norm() < 1e-6 * (1.0 + dl.norm()));
            let dr = (gauge(&ep, k) - gauge(&em, k)) / Complex64::new(2.0 * h, 0.0);
            assert!((&dr - ed.dr[0].column(k)).norm() < 1e-6 * (1.0 + dr.norm()));
        }
    }

    #[test]
    fn repeated_eigenvalues_invalidate_derivatives() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0 - 1e-12]);
        match eigendecompose(&a) {
            Ok(e) => assert!(!eigen_derivatives(&a, &[DMatrix::identity(2, 2)], &e).valid),
            Err(_) => {}
        }
    }

    #[test]
    fn ou_gradient_matches_closed_form() {
        let (kappa, c, sigma, dt) = (3.0, 2.0, 0.5, 0.01);
        let tan = LinearTangent {
            d_a: DMatrix::from_element(1, 1, -1.0),
            d_input: DVector::zeros(1),
            d_intensity: 0.0,
            d_obs_sd: 0.0,
        };
        let (grid, route) = spectral_gradient(&ou(kappa, c, sigma), &[tan], 64, dt).unwrap();
        assert_eq!(route, GradientRoute::Analytic);
        let g = &grid.grad_f_tilde.unwrap()[0];
        for (nu, gk) in grid.freqs.iter().zip(g) {
            let w2 = (2.0 * PI * nu).powi(2);
            let want = -2.0 * kappa * c / (w2 + kappa * kappa).powi(2) / dt;
            assert!((gk - want).abs() <= 1e-10 * want.abs());
        }
    }

    #[test]
    fn ou_autocovariance() {
        let (kappa, c, dt, n) = (1.0, 2.0, 1e-3, 1 << 16);
        let f = full_grid_density(&ou(kappa, c, 0.0), n, dt).unwrap();
        let gamma = autocovariance_from_spectrum(&f).unwrap();
        for h in [0usize, 10, 500, 2000] {
            let want = c / (2.0 * kappa) * (-kappa * h as f64 * dt).exp();
            assert!(
                (gamma[h] - want).abs() < 1e-3 * c / (2.0 * kappa),
                "lag {h}: {} vs {want}",
                gamma[h]
            );
        }
    }

    #[test]
    fn white_noise_needs_one_sample() {
        let gamma = vec![1.0, 0.0, 0.0, 0.0];
        assert_eq!(phi_statistic(&gamma, 3).unwrap(), 0.0);
        assert!(phi_statistic(&[1.0, 0.5, 0.5, 0.5], 3).is_err());
    }

    #[test]
    fn npm_eigen_route_matches_dense_solves() {
        let th = NpmParams::reference().theta();
        let eq = find_equilibrium(&Npm, &th, &Npm.initial_guess(&th)).unwrap();
        let sys = linearize(&Npm, &th, &eq);
        let e = eigendecompose(&sys.a).unwrap();
        assert!(e.is_nearly_defective());
        let (h, g) = e.modal_weights(&sys.obs_row, &sys.input_weights);
        for nu in [0.5, 3.0, 10.0, 40.0, 120.0, 249.0] {
            let omega = 2.0 * PI * nu;
            let dense = transfer_dense(&sys.a, omega, &sys.obs_row, &sys.input_weights).unwrap();
            let iw = Complex64::new(0.0, omega);
            let modal: Complex64 = (0..e.dim())
                .map(|k| h[k] * g[k] / (iw - e.lambdas[k]))
                .sum();
            assert!(
                (dense - modal).norm() <= 1e-8 * dense.norm(),
                "{nu} Hz: {dense} vs {modal}"
            );
        }
    }
}
