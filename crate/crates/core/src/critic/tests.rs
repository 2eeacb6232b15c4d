use super::*;
use crate::model::{RngState, ZeroNoise};
use crate::oracle::{policy_quantities, q_params};

fn v1(x: f64) -> Vector {
    Vector::from_element(1, x)
}

fn reference() -> (MfgModel, LinearGaussianPolicy, Vector) {
    let model = MfgModel::scalar_reference();
    let pol = LinearGaussianPolicy::zero(&model);
    (model, pol, v1(0.0))
}

#[test]
fn feature_examples() {
    let (_, pol, _) = reference();
    let f = feature(&v1(1.0), &v1(2.0), &v1(0.0), &pol).unwrap();
    let r2 = std::f64::consts::SQRT_2;
    let want = [1.0, 2.0 * r2, 4.0, 1.0, 2.0];
    for (g, w) in f.iter().zip(want) {
        assert!((g - w).abs() < 1e-15);
    }
    let pol = LinearGaussianPolicy::new(Mat::from_element(1, 1, 0.3), v1(0.1));
    let mu_hat = v1(0.7);
    let u = pol.mean_action(&mu_hat);
    assert!(feature(&mu_hat, &u, &mu_hat, &pol).unwrap().amax() == 0.0);
    assert!(matches!(
        feature(&Vector::zeros(2), &u, &mu_hat, &pol),
        Err(Error::DimMismatch(_))
    ));
}

#[test]
fn noiseless_mean_is_exact() {
    let (model, pol, mu) = reference();
    let m = estimate_mean(&model, &pol, &mu, 50, StartMode::Stationary, &mut ZeroNoise).unwrap();
    assert!((m[0] - 0.2).abs() < 1e-15);
}

#[test]
fn single_step_mean_is_that_state() {
    let (model, pol, mu) = reference();
    let got = estimate_mean(&model, &pol, &mu, 1, StartMode::BurnIn(3), &mut RngState::new(5)).unwrap();
    let mut rng = RngState::new(5);
    let mut x = Vector::zeros(1);
    for _ in 0..4 {
        x = step(&model, &pol, &mu, &x, &mut rng).x_next;
    }
    assert_eq!(got, x);
}

#[test]
fn mean_within_clt_band() {
    let (model, pol, mu) = reference();
    let pq = policy_quantities(&model, &pol, &mu).unwrap();
    let t = 10_000;
    let band = 5.0 * (pq.phi_k[(0, 0)] / t as f64).sqrt();
    let pass = (0..20)
        .filter(|&s| {
            let m = estimate_mean(&model, &pol, &mu, t, StartMode::default(), &mut RngState::new(s)).unwrap();
            (m[0] - pq.mu_kb[0]).abs() < band
        })
        .count();
    assert!(pass >= 18, "{pass} of 20 within band");
}

#[test]
fn formula_radii_monotone_and_contain_truth() {
    let (model, pol, mu) = reference();
    let j0 = policy_quantities(&model, &pol, &mu).unwrap().j;
    let mut last = None::<ProjectionSets>;
    for scale in [1.0, 1.5, 2.0, 4.0] {
        let s = default_projection_sets(&model, &pol.gain, ProjectionSpec::Formula { j0: j0 * scale, c: 10.0 })
            .unwrap();
        if let Some(p) = last {
            assert!(s.zeta1_max >= p.zeta1_max && s.zeta2_radius >= p.zeta2_radius);
            assert!(s.xi1_max >= p.xi1_max && s.xi2_radius >= p.xi2_radius);
        }
        last = Some(s);
    }
    let sets = default_projection_sets(&model, &pol.gain, ProjectionSpec::Formula { j0, c: 10.0 }).unwrap();
    let alpha = q_params(&model, &pol, &mu).unwrap().alpha;
    assert!(sets.contains_zeta(j0, &alpha));
}

#[test]
fn manual_radii_echo() {
    let (model, pol, _) = reference();
    let spec = ProjectionSpec::Manual {
        zeta1_max: 1.0,
        zeta2_radius: 2.0,
        xi1_max: 3.0,
        xi2_radius: 4.0,
    };
    let s = default_projection_sets(&model, &pol.gain, spec).unwrap();
    assert_eq!(
        (s.zeta1_max, s.zeta2_radius, s.xi1_max, s.xi2_radius, s.mode),
        (1.0, 2.0, 3.0, 4.0, ProjectionMode::Manual)
    );
}

#[test]
fn saddle_point_is_fixed_by_exact_update() {
    let model = MfgModel::scalar_reference();
    for (k, b, mu) in [(0.0, 0.0, 0.0), (0.2, -0.1, 0.3), (-0.1, 0.4, -1.0)] {
        let pol = LinearGaussianPolicy::new(Mat::from_element(1, 1, k), v1(b));
        let mu = v1(mu);
        let pq = policy_quantities(&model, &pol, &mu).unwrap();
        let alpha = q_params(&model, &pol, &mu).unwrap().alpha;
        let st = PdState {
            zeta1: pq.j,
            zeta2: alpha.clone(),
            xi1: 0.0,
            xi2: Vector::zeros(alpha.len()),
        };
        let next = expected_update(&model, &pol, &mu, &st, 0.5).unwrap();
        let res = (next.zeta1 - st.zeta1).abs()
            + (&next.zeta2 - &st.zeta2).norm()
            + next.xi1.abs()
            + next.xi2.norm();
        assert!(res < 1e-10, "residual {res}");
    }
}

#[test]
fn oracle_alpha_reassembles_oracle_q() {
    let model = MfgModel::scalar_reference();
    let pol = LinearGaussianPolicy::new(Mat::from_element(1, 1, 0.25), v1(-0.2));
    let mu = v1(0.4);
    let qp = q_params(&model, &pol, &mu).unwrap();
    let est = exact_estimate(&model, &pol, &mu).unwrap();
    assert!((&est.upsilon_hat - &qp.upsilon).amax() < 1e-10);
    assert!((&est.p_hat - &qp.p).amax() < 1e-10);
    assert!((&est.q_hat - &qp.q).amax() < 1e-10);
}

#[test]
fn td_error_has_zero_mean_at_truth() {
    let (model, pol, mu) = reference();
    let pq = policy_quantities(&model, &pol, &mu).unwrap();
    let qp = q_params(&model, &pol, &mu).unwrap();
    let mut rng = RngState::new(77);
    let mut x = sample_stationary_start(&model, &pol, &mu, &mut rng, StartMode::Stationary).unwrap();
    let n = 100_000;
    let (mut sum, mut sum2) = (0.0, 0.0);
    let mut tr = step(&model, &pol, &mu, &x, &mut rng);
    let z = &qp.z_hat;
    let mut psi = Vector::zeros(5);
    let mut psi_n = Vector::zeros(5);
    feature_into(z, &tr.x, &tr.u, &mut psi);
    for _ in 0..n {
        let next = step(&model, &pol, &mu, &tr.x_next, &mut rng);
        feature_into(z, &next.x, &next.u, &mut psi_n);
        let delta = pq.j + (&psi - &psi_n).dot(&qp.alpha) - tr.cost;
        sum += delta;
        sum2 += delta * delta;
        x = next.x.clone();
        tr = next;
        std::mem::swap(&mut psi, &mut psi_n);
    }
    let _ = x;
    let mean = sum / n as f64;
    let var = sum2 / n as f64 - mean * mean;
    // Consecutive TD errors are only weakly dependent; allow a generous band.
    assert!(mean.abs() < 4.0 * (var / n as f64).sqrt(), "mean {mean}, sd {}", var.sqrt());
}

#[test]
fn td0_cost_average_tracks_constant_cost() {
    let (model, pol, mu) = reference();
    let cfg = CriticConfig {
        t: 20_000,
        t_tilde: 10,
        start: StartMode::Stationary,
        ..CriticConfig::default()
    };
    let est = td0(&model, &pol, &mu, &cfg, &mut ZeroNoise).unwrap();
    // Noiseless and started at the mean: every cost equals 0.2² = 0.04.
    let start = 0.5 * 100.0;
    assert!((est.j_hat - 0.04).abs() < 0.02 * start, "{}", est.j_hat);
}

#[test]
fn critics_are_deterministic() {
    let (model, pol, mu) = reference();
    let cfg = CriticConfig {
        t: 2_000,
        t_tilde: 500,
        ..CriticConfig::default()
    };
    for kind in [CriticKind::PdGtd, CriticKind::Td0] {
        let a = evaluate(kind, &model, &pol, &mu, &cfg, &mut RngState::new(9)).unwrap();
        let b = evaluate(kind, &model, &pol, &mu, &cfg, &mut RngState::new(9)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn output_respects_projection() {
    let (model, pol, mu) = reference();
    let cfg = CriticConfig {
        t: 5_000,
        t_tilde: 500,
        gamma0: 5.0,
        projection: ProjectionSpec::Manual {
            zeta1_max: 0.5,
            zeta2_radius: 0.3,
            xi1_max: 0.5,
            xi2_radius: 0.2,
        },
        ..CriticConfig::default()
    };
    for kind in [CriticKind::PdGtd, CriticKind::Td0] {
        let est = evaluate(kind, &model, &pol, &mu, &cfg, &mut RngState::new(2)).unwrap();
        assert!(est.alpha_hat.norm() <= 0.3 * (1.0 + 1e-12));
        assert!((0.0..=0.5).contains(&est.j_hat));
    }
}

#[test]
fn unstable_policy_rejected() {
    let (model, _, mu) = reference();
    let pol = LinearGaussianPolicy::new(Mat::from_element(1, 1, -0.6), v1(0.0));
    let err = pd_gtd(&model, &pol, &mu, &CriticConfig::default(), &mut RngState::new(1)).unwrap_err();
    assert!(matches!(err, Error::Unstable { .. }));
}
