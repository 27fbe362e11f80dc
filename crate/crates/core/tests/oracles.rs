//! Checks against values computed independently of the library: moment
//! ODEs integrated by RK4, hand-evaluated densities, closed-form integrals.

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector, Matrix2};
use sgmlab::girsanov::{self, exp_mean};
use sgmlab::integrate::{simulate_forward, simulate_reverse};
use sgmlab::linalg::Covariance;
use sgmlab::measures::{make_circle_points, sample_measure};
use sgmlab::metrics::{self, GridAxis, GridSpec};
use sgmlab::prior::{self, KlMethod};
use sgmlab::score::{self, CompiledMixture};
use sgmlab::sde::{self, transition_kernel, SdeKind};
use sgmlab::{DriftPerturbation, GaussianMixture, Measure, MixtureComponent, PointCloud, SdeSpec, StepSchedule};

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn fig1() -> GaussianMixture {
    GaussianMixture::new(vec![
        MixtureComponent {
            mean: v(&[-2.0]),
            covariance: Covariance::isotropic(1, 0.01).unwrap(),
            weight: 1.0 / 3.0,
        },
        MixtureComponent {
            mean: v(&[2.0]),
            covariance: Covariance::isotropic(1, 0.01).unwrap(),
            weight: 2.0 / 3.0,
        },
    ])
    .unwrap()
}

/// RK4 for `M' = A M`, `Σ' = A Σ + Σ Aᵀ + Q` from `M = I`, `Σ = 0`.
fn moment_ode(a: Matrix2<f64>, q: Matrix2<f64>, t: f64, steps: usize) -> (Matrix2<f64>, Matrix2<f64>) {
    let f = |m: &Matrix2<f64>, s: &Matrix2<f64>| (a * m, a * s + s * a.transpose() + q);
    let h = t / steps as f64;
    let (mut m, mut s) = (Matrix2::identity(), Matrix2::zeros());
    for _ in 0..steps {
        let (k1m, k1s) = f(&m, &s);
        let (k2m, k2s) = f(&(m + k1m * (h / 2.0)), &(s + k1s * (h / 2.0)));
        let (k3m, k3s) = f(&(m + k2m * (h / 2.0)), &(s + k2s * (h / 2.0)));
        let (k4m, k4s) = f(&(m + k3m * h), &(s + k3s * h));
        m += (k1m + k2m * 2.0 + k3m * 2.0 + k4m) * (h / 6.0);
        s += (k1s + k2s * 2.0 + k3s * 2.0 + k4s) * (h / 6.0);
    }
    (m, s)
}

#[test]
fn cld_kernel_matches_moment_ode() {
    let a = Matrix2::new(0.0, 1.0, -1.0, -2.0);
    let q = Matrix2::new(0.0, 0.0, 0.0, 4.0);
    let spec = SdeSpec::cld(1, 10.0).unwrap();
    for t in [1e-4, 5e-4, 2e-3, 0.1, 0.7, 3.0] {
        let (m, s) = moment_ode(a, q, t, 4000);
        let k = transition_kernel(&spec, t).unwrap();
        let km = k.mean_map.to_matrix(2);
        let ks = k.covariance.to_matrix();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(km[(i, j)], m[(i, j)], epsilon = 1e-12);
                let scale = s[(i, j)].abs().max(1e-300);
                assert!(
                    (ks[(i, j)] - s[(i, j)]).abs() / scale < 1e-8,
                    "t={t} ({i},{j}) {} vs {}",
                    ks[(i, j)],
                    s[(i, j)]
                );
            }
        }
    }
}

#[test]
fn cld_stationary_covariance_solves_lyapunov() {
    // A Σ + Σ Aᵀ + diag(0, 4) = 0 with Σ = [[a, b], [b, c]]:
    // 2b = 0, c − a − 2b = 0, −2b − 4c + 4 = 0  ⇒  Σ = I.
    let k = transition_kernel(&SdeSpec::cld(2, 60.0).unwrap(), 50.0).unwrap();
    let s = k.covariance.to_matrix();
    assert!((s - DMatrix::identity(4, 4)).amax() < 1e-12);
}

#[test]
fn ou_kernel_matches_moment_ode() {
    // β(x) = −x/2, σ = 1
    let spec = SdeSpec::ou(3, 10.0).unwrap();
    for t in [0.01, 0.5, 2.0] {
        let (m, s) = moment_ode(Matrix2::new(-0.5, 0.0, 0.0, -0.5), Matrix2::identity(), t, 2000);
        let k = transition_kernel(&spec, t).unwrap();
        assert_abs_diff_eq!(k.mean_map.to_matrix(3)[(1, 1)], m[(0, 0)], epsilon = 1e-12);
        assert_abs_diff_eq!(k.covariance.to_matrix()[(2, 2)], s[(0, 0)], epsilon = 1e-12);
    }
    let far = transition_kernel(&spec, 9.9).unwrap();
    assert_abs_diff_eq!(far.covariance.to_matrix()[(0, 0)], 1.0, epsilon = 1e-4);
}

#[test]
fn brownian_kernel_and_pushforwards() {
    let k = transition_kernel(&SdeSpec::brownian(2, 1.0).unwrap(), 0.25).unwrap();
    assert_eq!(k.mean_map.to_matrix(2), DMatrix::identity(2, 2));
    assert_eq!(k.covariance.to_matrix(), DMatrix::identity(2, 2) * 0.25);

    let m: Measure = fig1().into();
    let p = sde::pushforward(&SdeSpec::brownian(1, 1.0).unwrap(), &m, 0.3).unwrap();
    for (c, (mu, w)) in p.components().iter().zip([(-2.0, 1.0 / 3.0), (2.0, 2.0 / 3.0)]) {
        assert_eq!(c.mean[0], mu);
        assert_abs_diff_eq!(c.covariance.trace(), 0.31, epsilon = 1e-15);
        assert_abs_diff_eq!(c.weight, w, epsilon = 1e-15);
    }
    let point: Measure = PointCloud::uniform(vec![v(&[1.5, -0.5])]).unwrap().into();
    let q = sde::pushforward(&SdeSpec::ou(2, 1.0).unwrap(), &point, 0.8).unwrap();
    let c = &q.components()[0];
    assert_abs_diff_eq!(c.mean[0], 1.5 * (-0.4f64).exp(), epsilon = 1e-15);
    assert_abs_diff_eq!(c.covariance.to_matrix()[(1, 1)], 1.0 - (-0.8f64).exp(), epsilon = 1e-15);
}

#[test]
fn log_density_hand_values() {
    let std2 = GaussianMixture::standard_normal(2);
    assert_abs_diff_eq!(
        score::log_density(&std2, &[0.0, 0.0]).unwrap(),
        -1.837_877_066_409_345_3,
        epsilon = 1e-14
    );
    let two = GaussianMixture::new(vec![
        MixtureComponent {
            mean: v(&[-2.0]),
            covariance: Covariance::isotropic(1, 1.0).unwrap(),
            weight: 0.5,
        },
        MixtureComponent {
            mean: v(&[2.0]),
            covariance: Covariance::isotropic(1, 1.0).unwrap(),
            weight: 0.5,
        },
    ])
    .unwrap();
    assert_abs_diff_eq!(
        score::log_density(&two, &[0.0]).unwrap(),
        -2.918_938_533_204_672_7,
        epsilon = 1e-14
    );

    // Fig. 1 mixture at t = 1, x = 0, written out term by term
    let p1 = sde::pushforward(&SdeSpec::brownian(1, 1.0).unwrap(), &fig1().into(), 1.0).unwrap();
    let var: f64 = 1.01;
    let n = |m: f64| (-(0.0 - m) * (0.0 - m) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
    let direct = (n(-2.0) / 3.0 + 2.0 * n(2.0) / 3.0).ln();
    assert_abs_diff_eq!(score::log_density(&p1, &[0.0]).unwrap(), direct, epsilon = 1e-12);

    let singular = GaussianMixture::gaussian(v(&[0.0]), Covariance::zeros(1)).unwrap();
    assert!(score::log_density(&singular, &[0.0]).is_err());
}

#[test]
fn score_hand_values() {
    let b2 = SdeSpec::brownian(2, 1.0).unwrap();
    let origin: Measure = PointCloud::uniform(vec![v(&[0.0, 0.0])]).unwrap().into();
    let s = score::score(&b2, &origin, 1.0, &[2.0, 0.0]).unwrap();
    assert_abs_diff_eq!(s[0], -2.0, epsilon = 1e-15);
    assert_abs_diff_eq!(s[1], 0.0, epsilon = 1e-15);

    let pm: Measure = PointCloud::uniform(vec![v(&[-2.0]), v(&[2.0])]).unwrap().into();
    assert_abs_diff_eq!(
        score::score(&SdeSpec::brownian(1, 1.0).unwrap(), &pm, 1.0, &[0.0]).unwrap()[0],
        0.0
    );

    let circle: Measure = make_circle_points(9, 1.0).unwrap().into();
    let c = score::marginal_at(&b2, &circle, 0.01).unwrap();
    for k in 0..8 {
        let a = 0.37 + k as f64 * 0.77;
        let x = [1.2 * a.cos(), 1.2 * a.sin()];
        let s = c.score(&x);
        let h = 1e-5;
        for j in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[j] += h;
            xm[j] -= h;
            let fd = (c.log_density(&xp) - c.log_density(&xm)) / (2.0 * h);
            assert!((fd - s[j]).abs() <= 1e-5 * s.amax().max(1.0), "{fd} vs {}", s[j]);
        }
    }
}

#[test]
fn reverse_drift_hand_values() {
    let b = SdeSpec::brownian(1, 1.0).unwrap();
    let m: Measure = fig1().into();
    let y = [0.4];
    let s = score::score(&b, &m, 0.7, &y).unwrap()[0];
    assert_abs_diff_eq!(
        score::reverse_drift(&b, &m, &DriftPerturbation::None, 0.3, &y).unwrap()[0],
        s,
        epsilon = 1e-14
    );
    let plus = score::reverse_drift(&b, &m, &DriftPerturbation::constant(vec![1.0]), 0.3, &y).unwrap()[0];
    assert_abs_diff_eq!(plus, s + 1.0, epsilon = 1e-14);

    let ou = SdeSpec::ou(2, 1.0).unwrap();
    let sym: Measure = make_circle_points(4, 1.0).unwrap().into();
    let d = score::reverse_drift(&ou, &sym, &DriftPerturbation::None, 0.5, &[0.0, 0.0]).unwrap();
    assert!(d.amax() < 1e-14);
}

#[test]
fn forward_single_step_and_ou_stationarity() {
    let b = SdeSpec::brownian(1, 1.0).unwrap();
    let zero: Measure = PointCloud::uniform(vec![v(&[0.0])]).unwrap().into();
    let one = StepSchedule::uniform(1.0, 1).unwrap();
    let ens = simulate_forward(&b, &zero, &one, 100_000, 3, &[1.0]).unwrap();
    let xs = ens.coordinate_at(0, 0);
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    assert!((var - 1.0).abs() < 0.05);

    let ou = SdeSpec::ou(1, 1.0).unwrap();
    let ens = simulate_forward(
        &ou,
        &GaussianMixture::standard_normal(1).into(),
        &StepSchedule::uniform(1.0, 200).unwrap(),
        100_000,
        4,
        &[0.5, 1.0],
    )
    .unwrap();
    for r in 0..2 {
        let xs = ens.coordinate_at(r, 0);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.05, "{mean} {var}");
    }
}

#[test]
fn sampling_moments_and_determinism() {
    let n = 100_000;
    let xs: Vec<f64> = sample_measure(&GaussianMixture::standard_normal(1).into(), n, 9)
        .iter()
        .map(|x| x[0])
        .collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    assert!(mean.abs() < 4.0 / (n as f64).sqrt());
    assert!((var - 1.0).abs() < 0.05);
    let p: Measure = PointCloud::uniform(vec![v(&[0.25, 4.0])]).unwrap().into();
    assert!(sample_measure(&p, 17, 1).iter().all(|x| x.as_slice() == [0.25, 4.0]));
    assert_eq!(
        sample_measure(&fig1().into(), 50, 5),
        sample_measure(&fig1().into(), 50, 5)
    );
}

#[test]
fn girsanov_constant_integrands() {
    let spec = SdeSpec::brownian(2, 1.0).unwrap();
    let data: Measure = make_circle_points(9, 1.0).unwrap().into();
    let prior: Measure = GaussianMixture::standard_normal(2).into();
    let sched = StepSchedule::three_segment(1.0).unwrap();
    let times = [0.45, 0.9, 1.0];
    let e = DriftPerturbation::constant(vec![0.6, -0.8]);
    let ens = simulate_reverse(&spec, &data, &e, &prior, &sched, 50, 8, &times, true).unwrap();
    let acc = ens.girsanov.as_ref().unwrap();
    for (r, _) in times.iter().enumerate() {
        let t = ens.state_times[r];
        for p in 0..50 {
            assert_abs_diff_eq!(acc.quad(p, r), t, epsilon = 1e-12);
        }
    }
    let n = girsanov::novikov_from_accumulator(acc, 1.0).unwrap();
    let t_last = *ens.state_times.last().unwrap();
    assert_abs_diff_eq!(n.value.estimate, (0.5 * t_last).exp(), epsilon = 1e-12);
    assert!(n.value.std_error < 1e-12);

    // replay from the seed reproduces the online audit
    let replayed = girsanov::change_of_measure_log_weights(&ens, &e).unwrap();
    for r in 0..times.len() {
        for p in 0..50 {
            assert_abs_diff_eq!(replayed.ito(p, r), acc.ito(p, r), epsilon = 1e-12);
        }
    }

    let none = simulate_reverse(
        &spec,
        &data,
        &DriftPerturbation::None,
        &prior,
        &sched,
        20,
        8,
        &times,
        true,
    )
    .unwrap();
    let acc = none.girsanov.unwrap();
    assert!((0..20).all(|p| acc.log_weight(p, 2) == 0.0));
    assert_eq!(
        girsanov::novikov_from_accumulator(&acc, 1.0).unwrap().value.estimate,
        1.0
    );
}

#[test]
fn losses_for_constant_errors() {
    let data: Measure = fig1().into();
    let sched = StepSchedule::uniform(1.0, 100).unwrap();
    for kind in [SdeKind::Brownian, SdeKind::OrnsteinUhlenbeck] {
        let spec = SdeSpec::new(kind, 1, 1.0).unwrap();
        let fwd = simulate_forward(&spec, &data, &sched, 200, 2, &[1.0]).unwrap();
        let l = girsanov::path_losses(&fwd, &spec, &data, &DriftPerturbation::constant(vec![1.5]), "uniform").unwrap();
        assert_abs_diff_eq!(l.l2, 2.25, epsilon = 1e-12);
        assert_abs_diff_eq!(l.l_exp.estimate, (0.5 * 2.25f64).exp(), epsilon = 1e-12);
        let z = girsanov::path_losses(&fwd, &spec, &data, &DriftPerturbation::None, "uniform").unwrap();
        assert_eq!((z.l2, z.l_exp.estimate), (0.0, 1.0));
    }
    // CLD: σ = 2 enters the exponent
    let cld = SdeSpec::cld(1, 1.0).unwrap();
    let fwd = simulate_forward(&cld, &data, &sched, 50, 2, &[1.0]).unwrap();
    let l = girsanov::path_losses(
        &fwd,
        &cld,
        &data,
        &DriftPerturbation::constant(vec![0.0, 0.5]),
        "uniform",
    )
    .unwrap();
    assert_abs_diff_eq!(l.l2, 0.25, epsilon = 1e-12);
    assert_abs_diff_eq!(l.l_exp.estimate, 0.25f64.exp(), epsilon = 1e-12);
    assert!(girsanov::path_losses(&fwd, &cld, &data, &DriftPerturbation::None, "quadratic").is_err());
}

#[test]
fn drift_distance_trivial_curves() {
    let spec = SdeSpec::brownian(2, 1.0).unwrap();
    let data: Measure = make_circle_points(9, 1.0).unwrap().into();
    let sched = StepSchedule::three_segment(1.0).unwrap();
    let ens = simulate_reverse(
        &spec,
        &data,
        &DriftPerturbation::None,
        &GaussianMixture::standard_normal(2).into(),
        &sched,
        100,
        1,
        &[0.45, 0.9, 1.0],
        false,
    )
    .unwrap();
    let zero = girsanov::drift_distance_curve(&ens, &spec, &data, &DriftPerturbation::None).unwrap();
    assert!(zero.iter().all(|(_, d)| *d == 0.0));
    let c = girsanov::drift_distance_curve(&ens, &spec, &data, &DriftPerturbation::constant(vec![0.0, -1.0])).unwrap();
    assert!(c.iter().all(|(_, d)| (*d - 1.0).abs() < 1e-12));

    // exact empirical drift lands on the training set
    let d = metrics::nearest_distance(&ens.final_states(), data.as_point_cloud().unwrap()).unwrap();
    assert!(d.iter().sum::<f64>() / d.len() as f64 <= 0.05);
}

#[test]
fn circle_geometry_distances() {
    for n in [4, 9, 256] {
        let c = make_circle_points(n, 1.0).unwrap();
        assert!((c.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let d = metrics::nearest_distance(&[v(&[0.0, 0.0])], &c).unwrap();
        assert_abs_diff_eq!(d[0], 1.0, epsilon = 1e-15);
    }
    let four = make_circle_points(4, 1.0).unwrap();
    for (p, e) in four
        .points()
        .iter()
        .zip([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    {
        assert_abs_diff_eq!(p[0], e[0], epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], e[1], epsilon = 1e-15);
    }
}

#[test]
fn kde_bumps_and_annulus() {
    let grid = GridSpec::new(vec![
        GridAxis::new(-1.0, 1.0, 41).unwrap(),
        GridAxis::new(-1.0, 1.0, 41).unwrap(),
    ])
    .unwrap();
    let one = metrics::kde_grid(&[v(&[0.5, -0.25])], 1000.0, &grid, false).unwrap();
    let (imax, vmax) = one
        .values
        .iter()
        .enumerate()
        .fold((0, 0.0), |a, (i, x)| if *x > a.1 { (i, *x) } else { a });
    assert_eq!(vmax, 1.0);
    assert_eq!(grid.points()[imax], vec![0.5, -0.25]);
    let line = GridSpec::new(vec![GridAxis::new(-1.0, 1.0, 5).unwrap()]).unwrap();
    let two = metrics::kde_grid(&[v(&[-0.25]), v(&[0.25])], 1000.0, &line, false).unwrap();
    // grid point 0 sits midway between the two states
    assert!(two.values[2] < 1e-6);
    assert_abs_diff_eq!(two.values[2], 2.0 * (-62.5f64).exp(), epsilon = 1e-40);

    // forward ensemble from the dense circle at t = 0.5 against the exact field
    let spec = SdeSpec::brownian(2, 1.0).unwrap();
    let circle: Measure = make_circle_points(256, 1.0).unwrap().into();
    let ens = simulate_forward(
        &spec,
        &circle,
        &StepSchedule::uniform(1.0, 100).unwrap(),
        20_000,
        6,
        &[0.5],
    )
    .unwrap();
    let g = GridSpec::new(vec![
        GridAxis::new(-3.0, 3.0, 61).unwrap(),
        GridAxis::new(-3.0, 3.0, 61).unwrap(),
    ])
    .unwrap();
    let kde = metrics::kde_grid(&ens.states_at(0), 20.0, &g, true).unwrap();
    let exact = metrics::density_grid(&sde::pushforward(&spec, &circle, 0.5).unwrap(), &g).unwrap();
    assert!(metrics::field_correlation(&kde, &exact).unwrap() > 0.9);
}

#[test]
fn explosion_scaling_single_point_and_high_dimension() {
    let spec = SdeSpec::brownian(3, 1.0).unwrap();
    let single = PointCloud::uniform(vec![v(&[1.0, 2.0, 3.0])]).unwrap();
    let grid = metrics::log_spaced(1e-4, 1e-1, 7);
    let fit = metrics::drift_explosion_slope(&spec, &single, &grid, 50_000, 1).unwrap();
    assert!((fit.slope + 0.5).abs() < 5e-3);
    // E‖Z‖ for Z ~ N(0, I_3) is 2·√(2/π)
    let ez = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
    for (t, m) in &fit.mean_norms {
        assert!((m * t.sqrt() / ez - 1.0).abs() < 0.02);
    }

    let d = 10;
    let pts = sample_measure(&GaussianMixture::standard_normal(d).into(), 10, 77);
    let cloud = PointCloud::uniform(pts).unwrap();
    let spec = SdeSpec::brownian(d, 1.0).unwrap();
    let fit = metrics::drift_explosion_slope(&spec, &cloud, &metrics::log_spaced(1e-4, 1e-2, 4), 5_000, 2).unwrap();
    let (t, m) = fit.mean_norms[0];
    assert!(m >= 0.9 * (d as f64 / t).sqrt());
}

#[test]
fn gaussian_entropy_and_de_bruijn() {
    let n01: Measure = GaussianMixture::standard_normal(1).into();
    let h = metrics::entropy_1d(&n01, 1.0).unwrap();
    assert_abs_diff_eq!(
        h,
        0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 2.0).ln(),
        epsilon = 1e-10
    );
    assert!(metrics::de_bruijn_residual(&n01, 1.0, 1e-3).unwrap() < 1e-6);
}

#[test]
fn prior_fit_examples_and_kl_bound() {
    let two: Measure = PointCloud::uniform(vec![v(&[-1.0]), v(&[1.0])]).unwrap().into();
    let fit = prior::optimal_gaussian_prior(&two, 1.0, false).unwrap();
    assert_eq!(fit.mean[0], 0.0);
    assert_eq!(
        fit.covariance,
        prior::PriorCovariance::Full(DMatrix::from_element(1, 1, 2.0))
    );

    let m: Measure = fig1().into();
    let fit = prior::optimal_gaussian_prior(&m, 1.0, false).unwrap();
    let p1 = sde::pushforward(&SdeSpec::brownian(1, 1.0).unwrap(), &m, 1.0).unwrap();
    let kl = prior::kl_estimate(&p1, &fit.to_mixture().unwrap(), KlMethod::Quadrature1d).unwrap();
    assert!(kl > 0.0 && kl <= fit.kl_bound);
}

/// The isotropic scalar `tr(C)/d + T` beats `tr(C) + T` and every other
/// multiple of the identity, and the full fit beats the best isotropic one
/// for anisotropic data.
#[test]
fn isotropic_scalar_is_trace_over_dimension() {
    let data: Measure = PointCloud::uniform(vec![v(&[-1.5, 0.0]), v(&[1.5, 0.0]), v(&[0.0, 0.3])])
        .unwrap()
        .into();
    let t = 1.0;
    let p = sde::pushforward(&SdeSpec::brownian(2, t).unwrap(), &data, t).unwrap();
    let iso = prior::optimal_gaussian_prior(&data, t, true).unwrap();
    let full = prior::optimal_gaussian_prior(&data, t, false).unwrap();
    let c = match iso.covariance {
        prior::PriorCovariance::Isotropic(c) => c,
        _ => unreachable!(),
    };
    let kl_iso = |c: f64| {
        let q = GaussianMixture::gaussian(iso.mean.clone(), Covariance::isotropic(2, c).unwrap()).unwrap();
        prior::kl_estimate(&p, &q, KlMethod::Quadrature2d).unwrap()
    };
    let best = kl_iso(c);
    for f in [0.8, 0.95, 1.05, 1.25] {
        assert!(kl_iso(c * f) > best);
    }
    let tr = data.covariance().trace();
    assert!(kl_iso(tr + t) > best);
    let kl_full = prior::kl_estimate(&p, &full.to_mixture().unwrap(), KlMethod::Quadrature2d).unwrap();
    assert!(kl_full < best);
}

#[test]
fn kl_quadrature_against_closed_form() {
    let p = GaussianMixture::gaussian(v(&[0.0]), Covariance::isotropic(1, 1.0).unwrap()).unwrap();
    let q = GaussianMixture::gaussian(v(&[0.0]), Covariance::isotropic(1, 2.0).unwrap()).unwrap();
    let hand = 0.5 * (0.5 + 2f64.ln() - 1.0);
    assert_abs_diff_eq!(
        prior::kl_estimate(&p, &q, KlMethod::Quadrature1d).unwrap(),
        hand,
        epsilon = 1e-9
    );
    assert_abs_diff_eq!(hand, 0.096_574, epsilon = 1e-6);
}

#[test]
fn exp_mean_of_known_samples() {
    let e = exp_mean(&[0.0, 2f64.ln()]);
    assert_abs_diff_eq!(e.estimate, 1.5, epsilon = 1e-15);
    // jackknife of the mean equals the usual standard error s/√n
    assert_abs_diff_eq!(e.std_error, 0.5, epsilon = 1e-12);
    let huge = exp_mean(&[800.0, 801.0]);
    assert!(huge.log_scale);
    assert_abs_diff_eq!(huge.estimate, 800.0 + ((1.0 + 1f64.exp()) / 2.0).ln(), epsilon = 1e-12);
}

#[test]
fn compiled_mixture_skips_zero_weights() {
    let g = GaussianMixture::new(vec![
        MixtureComponent {
            mean: v(&[0.0]),
            covariance: Covariance::isotropic(1, 1.0).unwrap(),
            weight: 1.0,
        },
        MixtureComponent {
            mean: v(&[5.0]),
            covariance: Covariance::zeros(1),
            weight: 0.0,
        },
    ])
    .unwrap();
    let c = CompiledMixture::new(&g).unwrap();
    assert_eq!(c.len(), 1);
}
