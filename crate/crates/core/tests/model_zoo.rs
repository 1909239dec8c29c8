mod common;

use common::rel_err;
use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use sdewhittle::model::drift_f64;
use sdewhittle::simulate::{ode_rk4, rng, StimulusSpec};
use sdewhittle::spectral::spectral_density;
use sdewhittle::zoo::npm::{ix, sigmoid, st};
use sdewhittle::zoo::{
    harmonic_oscillator, Fhn, FhnParams, FhnReparam, FhnVariant, HoParams, Npm, NpmParams,
    NpmReparam, ReparamMap,
};
use sdewhittle::{find_equilibrium, linearize, stability_check, Model};

fn fhn(a: f64, b: f64, c: f64, d: f64, i0: f64) -> Vec<f64> {
    FhnParams {
        a,
        b,
        c,
        d,
        i0,
        sigma_in: 1.0,
        sigma_obs: 0.01,
    }
    .theta()
}

#[test]
fn fhn_drift_by_substitution() {
    assert_eq!(
        drift_f64(&Fhn, &[0.0, 0.0], &fhn(-5.0, 6000.0, 40.0, 0.0, 0.0)).as_slice(),
        &[0.0, 0.0]
    );
    let f = drift_f64(&Fhn, &[1.0, 0.0], &fhn(-5.0, 6000.0, 40.0, 0.0, 100.0));
    assert_eq!(f.as_slice(), &[100.0, 6000.0]);
    assert_eq!(Fhn.obs_row(), DVector::from_vec(vec![1.0, 0.0]));
    assert_eq!(Fhn.noise_state(), 1);
}

#[test]
fn fhn_steady_state_maps() {
    let map = FhnReparam(FhnVariant::VOnly);
    let (th, x) = map
        .forward(&[-5.0, 6000.0, 40.0, 0.0], &fhn(0.0, 0.0, 0.0, 0.0, 0.0))
        .unwrap();
    assert_eq!((x[1], th[4]), (0.0, 0.0));
    let (th, x) = map
        .forward(&[-5.0, 6000.0, 40.0, 0.0], &fhn(0.0, 0.0, 0.0, 100.0, 0.0))
        .unwrap();
    assert!((x[1] - 2.5).abs() < 1e-15 && (th[4] - 2.5).abs() < 1e-15);
    assert!(map
        .forward(&[-5.0, 6000.0, 0.0, 0.0], &fhn(0.0, 0.0, 0.0, 100.0, 0.0))
        .is_err());
    let (th, _) = FhnReparam(FhnVariant::VAndW)
        .forward(
            &[-5.0, 6000.0, 40.0, 0.0, 0.0],
            &fhn(1.0, 1.0, 1.0, 1.0, 1.0),
        )
        .unwrap();
    assert_eq!((th[4], th[3]), (0.0, 0.0));
}

#[test]
fn fhn_round_trip_recovers_the_equilibrium() {
    let map = FhnReparam(FhnVariant::VOnly);
    let base = fhn(0.0, 0.0, 0.0, 100.0, 0.0);
    let mut r = rng(51, 0);
    for _ in 0..100 {
        let u = |r: &mut _, lo: f64, hi: f64| common::uniform(r, lo, hi);
        let z = [
            u(&mut r, -8.0, -2.0),
            u(&mut r, 4000.0, 8000.0),
            u(&mut r, 30.0, 50.0),
            u(&mut r, -0.5, 0.5),
        ];
        let (theta, x) = map.forward(&z, &base).unwrap();
        let eq = find_equilibrium(&Fhn, &theta, &Fhn.initial_guess(&theta)).unwrap();
        assert!(
            (eq.x_star[0] - x[0]).abs() < 1e-8
                && (eq.x_star[1] - x[1]).abs() < 1e-8 * (1.0 + x[1].abs())
        );
        assert_eq!(map.inverse(&theta, eq.x_star.as_slice())[..3], z[..3]);
    }
}

#[test]
fn oscillator_identities_and_peak() {
    let p = HoParams::from_fhn(-5.0, 6000.0, 40.0, 1.0, 0.0).unwrap();
    assert!((2.0 * p.zeta * p.omega0 - 35.0).abs() < 1e-12);
    assert!((p.omega0 * p.omega0 - 5800.0).abs() < 1e-9);
    assert!((p.omega0 - 76.158).abs() < 1e-3 && (p.zeta - 0.22978).abs() < 1e-5);

    let p = HoParams {
        zeta: 0.2,
        omega0: 80.0,
        noise_intensity: 1.0,
        obs_noise_sd: 0.0,
    };
    let w1 = p.peak_angular_frequency().unwrap();
    assert!((w1 - 76.73).abs() < 5e-3);
    // Fine grid: 0.005 Hz spacing.
    let g = spectral_density(&harmonic_oscillator(&p).unwrap(), 400_000, 5e-4).unwrap();
    let k = (0..g.f.len())
        .max_by(|&i, &j| g.f[i].total_cmp(&g.f[j]))
        .unwrap();
    assert!((2.0 * std::f64::consts::PI * g.freqs[k] - w1).abs() < 0.05);

    let over = HoParams { zeta: 0.8, ..p };
    assert!(over.peak_angular_frequency().is_none());
    let g = spectral_density(&harmonic_oscillator(&over).unwrap(), 4096, 2e-3).unwrap();
    assert!(g.f.windows(2).all(|w| w[1] < w[0]));
    assert!(harmonic_oscillator(&HoParams { zeta: 0.0, ..p }).is_err());
}

#[test]
fn npm_reference_structure() {
    let theta = NpmParams::reference().theta();
    assert_eq!(Npm.dim_state(), 14);
    assert_eq!(Npm.dim_params(), theta.len());
    let s_mid: f64 = sigmoid(
        theta[ix::MU_E],
        theta[ix::SMAX_E],
        theta[ix::MU_E],
        theta[ix::SIG_E],
    );
    assert!((s_mid - 177.6).abs() < 1e-12);
    let eq = find_equilibrium(&Npm, &theta, &Npm.initial_guess(&theta)).unwrap();
    let rep = stability_check(&linearize(&Npm, &theta, &eq).a).unwrap();
    assert!(rep.is_stable, "max real part {}", rep.max_real_part);
    assert_eq!(Npm.obs_row()[st::H_E], 1.0);
    assert_eq!(Npm.obs_row().sum(), 1.0);
}

#[test]
fn npm_map_recovers_the_published_inputs() {
    let theta = NpmParams::reference().theta();
    let eq = find_equilibrium(&Npm, &theta, &Npm.initial_guess(&theta)).unwrap();
    let z = NpmReparam.inverse(&theta, eq.x_star.as_slice());
    let (back, x): (Vec<f64>, Vec<f64>) = NpmReparam.forward(&z, &theta).unwrap();
    assert!(
        rel_err(back[ix::P_EE], 6025.0, 0.0) <= 1e-8,
        "{}",
        back[ix::P_EE]
    );
    assert!(
        rel_err(back[ix::P_EI], 1116.0, 0.0) <= 1e-8,
        "{}",
        back[ix::P_EI]
    );
    for i in 0..14 {
        assert!(
            (x[i] - eq.x_star[i]).abs() <= 1e-8 * (1.0 + eq.x_star[i].abs()),
            "state {i}"
        );
    }
    // Φ*_ee = N^α_ee·S_e(h_e*).
    let s_e: f64 = sigmoid(z[9], theta[ix::SMAX_E], theta[ix::MU_E], theta[ix::SIG_E]);
    assert!(rel_err(x[st::PHI_EE], theta[ix::NA_EE] * s_e, 0.0) < 1e-14);
    // A silent inhibitory population carries no inhibitory currents.
    let mut low = z.clone();
    low[10] = -1e4;
    let (_, x) = NpmReparam.forward(&low, &theta).unwrap();
    assert!(x[st::I_IE].abs() < 1e-12 && x[st::I_II].abs() < 1e-12);
}

#[test]
fn npm_round_trip_in_the_prior_bulk() {
    let theta = NpmParams::reference().theta();
    let eq = find_equilibrium(&Npm, &theta, &Npm.initial_guess(&theta)).unwrap();
    let z0 = NpmReparam.inverse(&theta, eq.x_star.as_slice());
    let mut r = rng(52, 0);
    for _ in 0..100 {
        let z: Vec<f64> = z0
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let e: f64 = StandardNormal.sample(&mut r);
                if i < 9 {
                    v * (0.1 * e).exp()
                } else {
                    v + 0.5 * e
                }
            })
            .collect();
        let (th, x) = NpmReparam.forward(&z, &theta).unwrap();
        let found = find_equilibrium(&Npm, &th, &Npm.initial_guess(&th)).unwrap();
        assert!(
            (found.x_star[st::H_E] - z[9]).abs() < 1e-8
                && (found.x_star[st::H_I] - z[10]).abs() < 1e-8
        );
        for i in 0..14 {
            assert!(
                (found.x_star[i] - x[i]).abs() <= 1e-8 * (1.0 + x[i].abs()),
                "state {i}"
            );
        }
    }
}

#[test]
fn noiseless_npm_stays_at_rest() {
    let mut theta = NpmParams::reference().theta();
    theta[ix::SIGMA_P_SQ] = 0.0;
    let eq = find_equilibrium(&Npm, &theta, &Npm.initial_guess(&theta))
        .unwrap()
        .x_star;
    let path = ode_rk4(&Npm, &theta, &eq, 0.5, 1e-4, &StimulusSpec::none()).unwrap();
    let last = path.row(path.nrows() - 1).transpose();
    for i in 0..14 {
        assert!(
            (last[i] - eq[i]).abs() <= 1e-8 * (1.0 + eq[i].abs()),
            "state {i}"
        );
    }
}
