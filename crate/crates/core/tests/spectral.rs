mod common;

use std::f64::consts::PI;

use common::{normal_matrix, ou, random_stable, rel_err};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use sdewhittle::model::{linearize_with_tangents, Tangent};
use sdewhittle::simulate::rng;
use sdewhittle::spectral::{
    eigen_derivatives, eigendecompose, min_series_length, phi_statistic, spectral_density,
    spectral_gradient, transfer_dense, transfer_element, transfer_matrix, whittle_fisher,
    GradientRoute,
};
use sdewhittle::zoo::{harmonic_oscillator, HarmonicOscillator, HoParams};

fn ho(zeta: f64, omega0: f64, c: f64, obs: f64) -> HoParams {
    HoParams {
        zeta,
        omega0,
        noise_intensity: c,
        obs_noise_sd: obs,
    }
}

#[test]
fn resolvent_inverts_the_shifted_matrix() {
    let mut r = rng(21, 0);
    for d in [2, 5, 9, 14] {
        let a = random_stable(&mut r, d, 0.3);
        let eig = eigendecompose(&a).unwrap();
        for omega in [0.0, 0.7, 13.0, 400.0] {
            let t = transfer_matrix(&eig, omega);
            let shifted = DMatrix::<Complex64>::from_fn(d, d, |i, j| {
                Complex64::new(
                    if i == j { 0.0 } else { 0.0 },
                    if i == j { omega } else { 0.0 },
                ) - a[(i, j)]
            });
            let prod = t * shifted;
            let err = (prod - DMatrix::<Complex64>::identity(d, d))
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "d {d}, ω {omega}: {err}");
        }
    }
}

#[test]
fn modal_and_dense_transfer_agree() {
    let mut r = rng(22, 0);
    for _ in 0..20 {
        let d = 6;
        let a = random_stable(&mut r, d, 0.2);
        let eig = eigendecompose(&a).unwrap();
        let mut e0 = DVector::zeros(d);
        e0[0] = 1.0;
        let mut e3 = DVector::zeros(d);
        e3[3] = 1.0;
        for omega in [0.1, 2.0, 50.0] {
            let modal = transfer_element(&eig, omega, 0, 3);
            let dense = transfer_dense(&a, omega, &e0, &e3).unwrap();
            assert!((modal - dense).norm() <= 1e-9 * dense.norm().max(1e-12));
        }
    }
}

#[test]
fn ou_density_is_lorentzian() {
    let (alpha, sigma, obs, dt, n) = (3.0, 0.7, 0.05, 0.01, 1000);
    let g = spectral_density(&ou(alpha, sigma, obs), n, dt).unwrap();
    for (k, nu) in g.freqs.iter().enumerate() {
        let w = 2.0 * PI * nu;
        let f = sigma * sigma / (alpha * alpha + w * w) / dt;
        assert!(rel_err(g.f[k], f, 0.0) < 1e-12);
        assert!(rel_err(g.f_tilde[k], f + obs * obs, 0.0) < 1e-12);
    }
    assert_eq!(g.freqs.len(), n / 2 - 1);
    assert!((g.freqs[0] - 1.0 / (n as f64 * dt)).abs() < 1e-15);
}

#[test]
fn oscillator_density_matches_closed_form() {
    let p = ho(0.2, 80.0, 2.0, 0.0);
    let dt = 0.002;
    let g = spectral_density(&harmonic_oscillator(&p).unwrap(), 4096, dt).unwrap();
    for (k, nu) in g.freqs.iter().enumerate() {
        let w = 2.0 * PI * nu;
        let den = (p.omega0 * p.omega0 - w * w).powi(2) + (2.0 * p.zeta * p.omega0 * w).powi(2);
        assert!(rel_err(g.f[k], p.noise_intensity / den / dt, 0.0) < 1e-10);
    }
}

#[test]
fn geometric_autocovariance_phi() {
    for (c, rho) in [(1.0, 0.5), (2.5, 0.9), (0.3, 0.99)] {
        let gamma: Vec<f64> = (0..20_000).map(|h| c * f64::powi(rho, h)).collect();
        let phi = phi_statistic(&gamma, 10_000).unwrap();
        let exact = 2.0 * c * rho / (1.0 - rho).powi(2);
        assert!(rel_err(phi, exact, 0.0) < 1e-8, "ρ {rho}: {phi} vs {exact}");
    }
    // A slowly decaying tail must be rejected rather than truncated.
    let gamma: Vec<f64> = (0..200).map(|h| 0.999f64.powi(h)).collect();
    assert!(phi_statistic(&gamma, 199).is_err());
}

#[test]
fn phi_scales_with_noise_intensity_and_n_min_does_not() {
    let dt = 0.002;
    let base =
        min_series_length(&harmonic_oscillator(&ho(0.2, 80.0, 1.0, 0.0)).unwrap(), dt).unwrap();
    for kappa in [0.01, 7.0, 1e3] {
        let s = min_series_length(
            &harmonic_oscillator(&ho(0.2, 80.0, kappa, 0.0)).unwrap(),
            dt,
        )
        .unwrap();
        assert!(rel_err(s.phi, kappa * base.phi, 0.0) < 1e-9);
        assert!(rel_err(s.max_f, kappa * base.max_f, 0.0) < 1e-9);
        assert!(s.n_min.abs_diff(base.n_min) <= 1);
    }
}

#[test]
fn slower_oscillators_need_longer_series() {
    let dt = 0.002;
    let fast =
        min_series_length(&harmonic_oscillator(&ho(0.2, 80.0, 1.0, 0.0)).unwrap(), dt).unwrap();
    let slow =
        min_series_length(&harmonic_oscillator(&ho(0.2, 20.0, 1.0, 0.0)).unwrap(), dt).unwrap();
    assert!(slow.n_min > fast.n_min);
    assert!(slow.t_min > fast.t_min);
    assert!(fast.passes(fast.n_min) && !fast.passes(fast.n_min - 1));
    assert!((fast.t_min - fast.n_min as f64 * dt).abs() < 1e-12);
}

#[test]
fn eigenvector_derivatives_keep_the_gauge() {
    let mut r = rng(23, 0);
    for _ in 0..10 {
        let d = 7;
        let a = random_stable(&mut r, d, 0.2);
        let da: Vec<DMatrix<f64>> = (0..3).map(|_| normal_matrix(&mut r, d, d)).collect();
        let eig = eigendecompose(&a).unwrap();
        let ed = eigen_derivatives(&a, &da, &eig);
        assert!(ed.valid);
        for m in 0..3 {
            for k in 0..d {
                let dot: Complex64 = (0..d).map(|i| eig.r[(i, k)] * ed.dr[m][(i, k)]).sum();
                assert!(dot.norm() < 1e-10, "{dot}");
            }
            // L·R = I is preserved to first order.
            let dlr = &ed.dl[m] * &eig.r + &eig.l * &ed.dr[m];
            assert!(dlr.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-8);
        }
    }
}

fn ho_gradient(p: &HoParams, n: usize, dt: f64) -> sdewhittle::spectral::SpectrumGrid {
    let theta = p.theta();
    let tangents: Vec<Tangent> = (0..4)
        .map(|i| {
            let mut d_theta = DVector::zeros(4);
            d_theta[i] = 1.0;
            Tangent {
                d_theta,
                d_x: DVector::zeros(2),
            }
        })
        .collect();
    let (sys, lt) =
        linearize_with_tangents(&HarmonicOscillator, &theta, &DVector::zeros(2), &tangents);
    let (grid, route) = spectral_gradient(&sys, &lt, n, dt).unwrap();
    assert_eq!(route, GradientRoute::Analytic);
    grid
}

#[test]
fn noise_derivatives_have_closed_forms() {
    let p = ho(0.3, 50.0, 4.0, 0.2);
    let g = ho_gradient(&p, 2000, 0.002);
    let grad = g.grad_f_tilde.as_ref().unwrap();
    for k in 0..g.freqs.len() {
        assert!(rel_err(grad[2][k], g.f[k] / p.noise_intensity, 0.0) < 1e-10);
        assert!((grad[3][k] - 2.0 * p.obs_noise_sd).abs() < 1e-12);
    }
}

#[test]
fn gradient_matches_central_differences() {
    let p = ho(0.3, 50.0, 4.0, 0.2);
    let (n, dt) = (2000, 0.002);
    let g = ho_gradient(&p, n, dt);
    let grad = g.grad_f_tilde.as_ref().unwrap();
    let theta = p.theta();
    for i in 0..2 {
        let h = 1e-6 * theta[i];
        let mut tp = theta.clone();
        tp[i] += h;
        let mut tm = theta.clone();
        tm[i] -= h;
        let fp = spectral_density(
            &harmonic_oscillator(&ho(tp[0], tp[1], tp[2], tp[3])).unwrap(),
            n,
            dt,
        )
        .unwrap();
        let fm = spectral_density(
            &harmonic_oscillator(&ho(tm[0], tm[1], tm[2], tm[3])).unwrap(),
            n,
            dt,
        )
        .unwrap();
        let scale = grad[i].iter().map(|v| v.abs()).fold(0.0, f64::max);
        for k in 0..g.freqs.len() {
            // The observation floor does not depend on ζ or ω₀; differencing f avoids cancellation.
            let fd = (fp.f[k] - fm.f[k]) / (2.0 * h);
            assert!(
                rel_err(grad[i][k], fd, 1e-6 * scale) < 1e-6,
                "param {i}, k {k}: {} vs {fd}",
                grad[i][k]
            );
        }
    }
}

#[test]
fn fisher_information_is_positive_semidefinite() {
    let g = ho_gradient(&ho(0.3, 50.0, 4.0, 0.2), 2000, 0.002);
    let fisher = whittle_fisher(&g).unwrap();
    assert_eq!(fisher, fisher.transpose());
    let ev = fisher.symmetric_eigenvalues();
    let top = ev.max();
    assert!(ev.iter().all(|&l| l >= -1e-10 * top));
    assert!(spectral_density(&ou(1.0, 1.0, 0.0), 100, 0.1)
        .map(|g| whittle_fisher(&g))
        .unwrap()
        .is_none());
}

#[test]
fn decoupled_eigenvalue_derivatives() {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
    let mut da = DMatrix::zeros(2, 2);
    da[(0, 0)] = 1.0;
    let eig = eigendecompose(&a).unwrap();
    let ed = eigen_derivatives(&a, &[da], &eig);
    assert!(ed.valid);
    let k1 = eig
        .lambdas
        .iter()
        .position(|l| (l.re + 1.0).abs() < 1e-12)
        .unwrap();
    assert!((ed.dlambda[0][k1] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
    assert!(ed.dlambda[0][1 - k1].norm() < 1e-14);
    assert!(ed.dr[0].iter().all(|z| z.norm() < 1e-14));
}

#[test]
fn fhn_eigenvalue_derivative_in_a_matches_the_quadratic_roots() {
    let (a, b, c) = (-5.0, 6000.0, 40.0);
    let j = DMatrix::from_row_slice(2, 2, &[-a, -1.0, b, -c]);
    let dj = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]);
    let eig = eigendecompose(&j).unwrap();
    let ed = eigen_derivatives(&j, &[dj], &eig);
    // λ = (−(a+c) ± √((a+c)² − 4(ac+b)))/2 with a complex square root.
    for (k, lam) in eig.lambdas.iter().enumerate() {
        let disc = Complex64::new((a + c) * (a + c) - 4.0 * (a * c + b), 0.0).sqrt();
        let sign = if lam.im * disc.im > 0.0 { 1.0 } else { -1.0 };
        let ddisc = (2.0 * (a + c) - 4.0 * c) / (2.0 * disc);
        let exact = (-1.0 + sign * ddisc) / 2.0;
        assert!(
            (ed.dlambda[0][k] - exact).norm() < 1e-12,
            "{} vs {exact}",
            ed.dlambda[0][k]
        );
    }
}

#[test]
fn eigenvalue_derivatives_match_finite_differences() {
    let mut r = rng(24, 0);
    let d = 10;
    let a = random_stable(&mut r, d, 0.3);
    let da: Vec<DMatrix<f64>> = (0..5).map(|_| normal_matrix(&mut r, d, d)).collect();
    let eig = eigendecompose(&a).unwrap();
    let ed = eigen_derivatives(&a, &da, &eig);
    assert!(ed.valid);
    let h = 1e-6;
    for (m, dam) in da.iter().enumerate() {
        let ep = eigendecompose(&(&a + dam * h)).unwrap();
        let em = eigendecompose(&(&a - dam * h)).unwrap();
        for (k, lam) in eig.lambdas.iter().enumerate() {
            // Match perturbed eigenvalues by proximity, not by sort position.
            let near = |e: &sdewhittle::spectral::EigenDecomposition| {
                *e.lambdas
                    .iter()
                    .min_by(|x, y| (*x - lam).norm().total_cmp(&(*y - lam).norm()))
                    .unwrap()
            };
            let fd = (near(&ep) - near(&em)) / (2.0 * h);
            let got = ed.dlambda[m][k];
            assert!(
                (got - fd).norm() <= 1e-5 * got.norm().max(1e-3),
                "m {m}, k {k}: {got} vs {fd}"
            );
        }
    }
}

#[test]
fn ou_autocovariance_and_white_noise() {
    use sdewhittle::spectral::{autocovariance_from_spectrum, full_grid_density};
    let (alpha, sigma, dt, n) = (5.0, 1.0, 0.001, 1 << 16);
    let f = full_grid_density(&ou(alpha, sigma, 0.0), n, dt).unwrap();
    let gamma = autocovariance_from_spectrum(&f).unwrap();
    for h in [0usize, 10, 100, 400] {
        let exact = sigma * sigma / (2.0 * alpha) * (-alpha * h as f64 * dt).exp();
        assert!(
            rel_err(gamma[h], exact, 0.0) < 0.01,
            "lag {h}: {} vs {exact}",
            gamma[h]
        );
    }
    for h in 1..100 {
        assert!((gamma[h] - gamma[n - h]).abs() < 1e-12 * gamma[0]);
    }
    let flat = autocovariance_from_spectrum(&[0.3; 64]).unwrap();
    assert!((flat[0] - 0.3).abs() < 1e-15 && flat[1..].iter().all(|v| v.abs() < 1e-15));
    assert_eq!(phi_statistic(&flat, 63).unwrap(), 0.0);
    // Observation noise only: the state process has zero intensity.
    assert_eq!(
        min_series_length(&ou(1.0, 0.0, 0.5), 0.01).unwrap().n_min,
        1
    );
}
