use crate::error::{Error, Result};
use crate::linalg::{self, solve_checked, solve_vec, sym_sqrt, Mat, Vector};
use crate::model::{LinearGaussianPolicy, MfgModel};

/// Closed-form quantities of the drifted LQR problem for one policy and one
/// frozen mean-field state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyQuantities {
    /// Stationary mean `μ_{K,b} = (I − A + BK)⁻¹(Bb + Āμ + d)`.
    pub mu_kb: Vector,
    /// Stationary covariance `Φ_K`.
    pub phi_k: Mat,
    /// Value-function quadratic term `P_K`.
    pub p_k: Mat,
    /// Value-function linear term `f_{K,b}`.
    pub f_kb: Vector,
    pub psi_eps: Mat,
    /// `tr(P_K Ψ_ε)`.
    pub j1: f64,
    /// Drift-dependent part of the cost.
    pub j2: f64,
    /// Expected ergodic cost `J(K, b)`.
    pub j: f64,
}

/// Quadratic action-value representation
/// `Q(x, u) = zᵀΥz + 2(p; q)ᵀz + const` with `z = (x; u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QParams {
    pub upsilon: Mat,
    pub p: Vector,
    pub q: Vector,
    /// `α = (svec Υ; 2[Υẑ + (p; q)])` with `ẑ = (μ_{K,b}; −Kμ_{K,b} + b)`, so
    /// that `Q = ψᵀα + β` for the features centred at `ẑ`.
    pub alpha: Vector,
    pub beta: f64,
    pub z_hat: Vector,
}

impl QParams {
    /// Lower-right `k × k` block `Υ²² = R + BᵀP_KB`.
    pub fn u22(&self) -> Mat {
        let m = self.p.len();
        let k = self.q.len();
        self.upsilon.view((m, m), (k, k)).into_owned()
    }

    /// Lower-left `k × m` block `Υ²¹ = BᵀP_KA`.
    pub fn u21(&self) -> Mat {
        let m = self.p.len();
        let k = self.q.len();
        self.upsilon.view((m, 0), (k, m)).into_owned()
    }

    /// `ψᵀα + β`.
    pub fn value_from_feature(&self, psi: &Vector) -> f64 {
        psi.dot(&self.alpha) + self.beta
    }
}

/// Strong convexity and smoothness of `b ↦ J₂(K, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityDiagnostics {
    /// `σ_min(Y₁ᵀY₁ + Y₂ᵀY₂)`.
    pub nu_k: f64,
    /// `σ_max(Y₁ᵀY₁ + Y₂ᵀY₂)`.
    pub iota_k: f64,
    /// `Y₁ᵀY₁ + Y₂ᵀY₂`. The Hessian of `J₂` in `b` is twice this matrix; the
    /// b-update direction is half the gradient, so `ν_K`, `ι_K` are the
    /// constants relevant to it.
    pub half_hessian: Mat,
}

fn check(model: &MfgModel, policy: &LinearGaussianPolicy, mu: &Vector) -> Result<()> {
    model.check_policy(policy)?;
    model.check_mu(mu)?;
    model.check_stable(&policy.gain)?;
    Ok(())
}

fn check_gain(model: &MfgModel, gain: &Mat) -> Result<()> {
    let (m, k) = (model.state_dim(), model.action_dim());
    if gain.shape() != (k, m) {
        return Err(Error::DimMismatch(format!(
            "gain must be {k}x{m}, got {:?}",
            gain.shape()
        )));
    }
    model.check_stable(gain)?;
    Ok(())
}

/// `I − A + BK`.
fn shifted(model: &MfgModel, gain: &Mat) -> Mat {
    let m = model.state_dim();
    Mat::identity(m, m) - model.closed_loop(gain)
}

pub fn stationary_mean(model: &MfgModel, policy: &LinearGaussianPolicy, mu: &Vector) -> Result<Vector> {
    check(model, policy, mu)?;
    mean_unchecked(model, policy, mu)
}

fn mean_unchecked(model: &MfgModel, policy: &LinearGaussianPolicy, mu: &Vector) -> Result<Vector> {
    let rhs = model.b() * &policy.intercept + model.drift(mu);
    solve_vec(&shifted(model, &policy.gain), &rhs, "I - A + BK")
}

/// `Φ_K`, the solution of `Φ = (A − BK)Φ(A − BK)ᵀ + Ψ_ε`.
pub fn stationary_cov(model: &MfgModel, policy: &LinearGaussianPolicy) -> Result<Mat> {
    model.check_policy(policy)?;
    cov_for_gain(model, &policy.gain)
}

fn cov_for_gain(model: &MfgModel, gain: &Mat) -> Result<Mat> {
    check_gain(model, gain)?;
    linalg::solve_lyapunov_with(&model.closed_loop(gain), &model.psi_eps(), model.tolerances())
}

/// `P_K`, the solution of `P = (Q + KᵀRK) + (A − BK)ᵀP(A − BK)`.
pub fn bellman_p(model: &MfgModel, gain: &Mat) -> Result<Mat> {
    check_gain(model, gain)?;
    let s = model.q() + gain.transpose() * model.r() * gain;
    linalg::solve_lyapunov_with(
        &model.closed_loop(gain).transpose(),
        &linalg::symmetrize(&s),
        model.tolerances(),
    )
}

/// `J₁(K) = tr(P_K Ψ_ε)`.
pub fn j1(model: &MfgModel, gain: &Mat) -> Result<f64> {
    Ok((bellman_p(model, gain)? * model.psi_eps()).trace())
}

/// `J₁(K) − J₁(K*) = tr[Φ_K (K − K*)ᵀ(R + BᵀP_{K*}B)(K − K*)]`, free of the
/// cancellation that subtracting two costs suffers near the optimum.
pub fn j1_gap(model: &MfgModel, gain: &Mat, k_star: &Mat, p_star: &Mat) -> Result<f64> {
    let phi = cov_for_gain(model, gain)?;
    let dk = gain - k_star;
    let w = model.r() + model.b().transpose() * p_star * model.b();
    Ok((phi * dk.transpose() * w * dk).trace())
}

fn j2_from_mean(model: &MfgModel, policy: &LinearGaussianPolicy, mu_kb: &Vector) -> f64 {
    let dev = &policy.intercept - &policy.gain * mu_kb;
    mu_kb.dot(&(model.q() * mu_kb)) + dev.dot(&(model.r() * &dev))
}

/// `J₂(K, b) = (μ_{K,b}; b)ᵀ [[Q + KᵀRK, −KᵀR], [−RK, R]] (μ_{K,b}; b)`.
pub fn j2(model: &MfgModel, policy: &LinearGaussianPolicy, mu: &Vector) -> Result<f64> {
    let mu_kb = stationary_mean(model, policy, mu)?;
    let m = model.state_dim();
    let k = model.action_dim();
    let kt_r = policy.gain.transpose() * model.r();
    let mut big = Mat::zeros(m + k, m + k);
    big.view_mut((0, 0), (m, m))
        .copy_from(&(model.q() + &kt_r * &policy.gain));
    big.view_mut((0, m), (m, k)).copy_from(&(-&kt_r));
    big.view_mut((m, 0), (k, m)).copy_from(&(-kt_r.transpose()));
    big.view_mut((m, m), (k, k)).copy_from(model.r());
    let mut v = Vector::zeros(m + k);
    v.rows_mut(0, m).copy_from(&mu_kb);
    v.rows_mut(m, k).copy_from(&policy.intercept);
    Ok(v.dot(&(big * &v)))
}

pub fn policy_quantities(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
) -> Result<PolicyQuantities> {
    check(model, policy, mu)?;
    let mu_kb = mean_unchecked(model, policy, mu)?;
    let phi_k = cov_for_gain(model, &policy.gain)?;
    let p_k = bellman_p(model, &policy.gain)?;
    let psi_eps = model.psi_eps();
    let f_kb = f_term(model, policy, mu, &p_k)?;
    let j1 = (&p_k * &psi_eps).trace();
    let j2 = j2_from_mean(model, policy, &mu_kb);
    let sigma = model.sigma();
    let j = j1 + j2 + sigma * sigma * model.r().trace() + mu.dot(&(model.q_bar() * mu));
    Ok(PolicyQuantities {
        mu_kb,
        phi_k,
        p_k,
        f_kb,
        psi_eps,
        j1,
        j2,
        j,
    })
}

/// `f_{K,b} = (I − A + BK)^{−ᵀ}[(A − BK)ᵀP_K(Bb + Āμ + d) − KᵀRb]`.
fn f_term(model: &MfgModel, policy: &LinearGaussianPolicy, mu: &Vector, p_k: &Mat) -> Result<Vector> {
    let forcing = model.b() * &policy.intercept + model.drift(mu);
    let rhs = model.closed_loop(&policy.gain).transpose() * p_k * forcing
        - policy.gain.transpose() * model.r() * &policy.intercept;
    solve_vec(&shifted(model, &policy.gain).transpose(), &rhs, "(I - A + BK)ᵀ")
}

/// `Υ_K = [[Q + AᵀP_KA, AᵀP_KB], [BᵀP_KA, R + BᵀP_KB]]`.
pub fn upsilon(model: &MfgModel, p_k: &Mat) -> Mat {
    let (m, k) = (model.state_dim(), model.action_dim());
    let (a, b) = (model.a(), model.b());
    let mut ups = Mat::zeros(m + k, m + k);
    ups.view_mut((0, 0), (m, m))
        .copy_from(&(model.q() + a.transpose() * p_k * a));
    let off = a.transpose() * p_k * b;
    ups.view_mut((0, m), (m, k)).copy_from(&off);
    ups.view_mut((m, 0), (k, m)).copy_from(&off.transpose());
    ups.view_mut((m, m), (k, k))
        .copy_from(&(model.r() + b.transpose() * p_k * b));
    linalg::symmetrize(&ups)
}

fn q_params_from(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
    pq: &PolicyQuantities,
) -> QParams {
    let (m, k) = (model.state_dim(), model.action_dim());
    let ups = upsilon(model, &pq.p_k);
    let inner = &pq.p_k * model.drift(mu) + &pq.f_kb;
    let p = model.a().transpose() * &inner;
    let q = model.b().transpose() * &inner;
    let mut z_hat = Vector::zeros(m + k);
    z_hat.rows_mut(0, m).copy_from(&pq.mu_kb);
    z_hat
        .rows_mut(m, k)
        .copy_from(&policy.mean_action(&pq.mu_kb));
    let mut pq_vec = Vector::zeros(m + k);
    pq_vec.rows_mut(0, m).copy_from(&p);
    pq_vec.rows_mut(m, k).copy_from(&q);
    let lin = (&ups * &z_hat + pq_vec) * 2.0;
    let quad = linalg::pack(&ups);
    let mut alpha = Vector::zeros(quad.len() + m + k);
    alpha.rows_mut(0, quad.len()).copy_from(&quad);
    alpha.rows_mut(quad.len(), m + k).copy_from(&lin);
    let x_hat = z_hat.rows(0, m).into_owned();
    let u_hat = z_hat.rows(m, k).into_owned();
    // The centred feature vanishes at ẑ, so β is the action value there.
    let beta = q_from(model, policy, mu, pq, &ups, &p, &q, &x_hat, &u_hat);
    QParams {
        upsilon: ups,
        p,
        q,
        alpha,
        beta,
        z_hat,
    }
}

pub fn q_params(model: &MfgModel, policy: &LinearGaussianPolicy, mu: &Vector) -> Result<QParams> {
    let pq = policy_quantities(model, policy, mu)?;
    Ok(q_params_from(model, policy, mu, &pq))
}

/// `V_{K,b}(x) = xᵀP_Kx − tr(P_KΦ_K) + 2f_{K,b}ᵀ(x − μ_{K,b}) − μ_{K,b}ᵀP_Kμ_{K,b}`.
pub fn eval_v(model: &MfgModel, policy: &LinearGaussianPolicy, mu: &Vector, x: &Vector) -> Result<f64> {
    let pq = policy_quantities(model, policy, mu)?;
    if x.len() != model.state_dim() {
        return Err(Error::DimMismatch("state has the wrong length".into()));
    }
    Ok(x.dot(&(&pq.p_k * x)) - (&pq.p_k * &pq.phi_k).trace() + 2.0 * pq.f_kb.dot(&(x - &pq.mu_kb))
        - pq.mu_kb.dot(&(&pq.p_k * &pq.mu_kb)))
}

#[allow(clippy::too_many_arguments)]
fn q_from(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
    pq: &PolicyQuantities,
    ups: &Mat,
    p: &Vector,
    q: &Vector,
    x: &Vector,
    u: &Vector,
) -> f64 {
    let (m, k) = (model.state_dim(), model.action_dim());
    let mut z = Vector::zeros(m + k);
    z.rows_mut(0, m).copy_from(x);
    z.rows_mut(m, k).copy_from(u);
    let (b, r, kk) = (&policy.intercept, model.r(), &policy.gain);
    let p_k = &pq.p_k;
    let drift = model.drift(mu);
    let sigma2 = model.sigma() * model.sigma();
    let bbt = model.b() * model.b().transpose();
    z.dot(&(ups * &z)) + 2.0 * (p.dot(x) + q.dot(u))
        - (p_k * &pq.phi_k).trace()
        - sigma2 * (r.trace() + (p_k * bbt).trace())
        - b.dot(&(r * b))
        + 2.0 * b.dot(&(r * kk * &pq.mu_kb))
        - pq.mu_kb
            .dot(&((model.q() + kk.transpose() * r * kk + p_k) * &pq.mu_kb))
        + 2.0 * pq.f_kb.dot(&(&drift - &pq.mu_kb))
        + drift.dot(&(p_k * &drift))
}

/// Action-value function in its explicit quadratic form.
pub fn eval_q(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
    x: &Vector,
    u: &Vector,
) -> Result<f64> {
    if x.len() != model.state_dim() || u.len() != model.action_dim() {
        return Err(Error::DimMismatch("state or action has the wrong length".into()));
    }
    let pq = policy_quantities(model, policy, mu)?;
    let ups = upsilon(model, &pq.p_k);
    let inner = &pq.p_k * model.drift(mu) + &pq.f_kb;
    let p = model.a().transpose() * &inner;
    let q = model.b().transpose() * &inner;
    Ok(q_from(model, policy, mu, &pq, &ups, &p, &q, x, u))
}

/// `∇_K J₁ = 2(Υ²²K − Υ²¹)Φ_K`.
pub fn grad_k_j1(model: &MfgModel, gain: &Mat) -> Result<Mat> {
    let p_k = bellman_p(model, gain)?;
    let phi = cov_for_gain(model, gain)?;
    let btp = model.b().transpose() * &p_k;
    let u22 = model.r() + &btp * model.b();
    let u21 = &btp * model.a();
    Ok((u22 * gain - u21) * phi * 2.0)
}

/// `∇_b J₂ = 2[Υ²²(−Kμ_{K,b} + b) + Υ²¹μ_{K,b} + q_{K,b}]`.
pub fn grad_b_j2(model: &MfgModel, policy: &LinearGaussianPolicy, mu: &Vector) -> Result<Vector> {
    let qp = q_params(model, policy, mu)?;
    let mu_kb = qp.z_hat.rows(0, model.state_dim()).into_owned();
    let dir = qp.u22() * policy.mean_action(&mu_kb) + qp.u21() * mu_kb + &qp.q;
    Ok(dir * 2.0)
}

/// The inner matrix `(I − A)Q⁻¹(I − A)ᵀ + BR⁻¹Bᵀ` and `Q⁻¹(I − A)ᵀ`, `R⁻¹Bᵀ`.
pub(crate) fn drift_system(model: &MfgModel) -> Result<(Mat, Mat, Mat)> {
    let m = model.state_dim();
    let i_a = Mat::identity(m, m) - model.a();
    let qinv_iat = solve_checked(model.q(), &i_a.transpose(), "Q")?;
    let rinv_bt = solve_checked(model.r(), &model.b().transpose(), "R")?;
    let inner = &i_a * &qinv_iat + model.b() * &rinv_bt;
    Ok((linalg::symmetrize(&inner), qinv_iat, rinv_bt))
}

/// `b^K = [KQ⁻¹(I − A)ᵀ − R⁻¹Bᵀ][(I − A)Q⁻¹(I − A)ᵀ + BR⁻¹Bᵀ]⁻¹(Āμ + d)`.
pub fn optimal_b(model: &MfgModel, gain: &Mat, mu: &Vector) -> Result<Vector> {
    model.check_mu(mu)?;
    let (m, k) = (model.state_dim(), model.action_dim());
    if gain.shape() != (k, m) {
        return Err(Error::DimMismatch(format!("gain must be {k}x{m}")));
    }
    let (inner, qinv_iat, rinv_bt) = drift_system(model)?;
    let y = solve_vec(&inner, &model.drift(mu), "(I-A)Q⁻¹(I-A)ᵀ + BR⁻¹Bᵀ")?;
    Ok((gain * qinv_iat - rinv_bt) * y)
}

/// `min_b J₂(K, b) = (Āμ + d)ᵀ[(I − A)Q⁻¹(I − A)ᵀ + BR⁻¹Bᵀ]⁻¹(Āμ + d)`, the
/// same for every stabilising `K`.
pub fn j2_at_optimal_b(model: &MfgModel, mu: &Vector) -> Result<f64> {
    model.check_mu(mu)?;
    let (inner, _, _) = drift_system(model)?;
    let drift = model.drift(mu);
    let y = solve_vec(&inner, &drift, "(I-A)Q⁻¹(I-A)ᵀ + BR⁻¹Bᵀ")?;
    Ok(drift.dot(&y))
}

pub fn convexity_constants(model: &MfgModel, gain: &Mat) -> Result<ConvexityDiagnostics> {
    check_gain(model, gain)?;
    let k = model.action_dim();
    let g = solve_checked(&shifted(model, gain), model.b(), "I - A + BK")?;
    let r_half = sym_sqrt(model.r());
    let q_half = sym_sqrt(model.q());
    let y1 = &r_half * (gain * &g - Mat::identity(k, k));
    let y2 = q_half * &g;
    let h = linalg::symmetrize(&(y1.transpose() * &y1 + y2.transpose() * &y2));
    let sv = h.clone().singular_values();
    Ok(ConvexityDiagnostics {
        nu_k: sv.min(),
        iota_k: sv.max(),
        half_hessian: h,
    })
}

/// Central second differences of `b ↦ J₂(K, b)` with step `h`.
pub fn j2_hessian_fd(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
    h: f64,
) -> Result<Mat> {
    let k = model.action_dim();
    let eval = |db: &Vector| -> Result<f64> {
        let p = LinearGaussianPolicy::new(policy.gain.clone(), &policy.intercept + db);
        j2(model, &p, mu)
    };
    let unit = |i: usize| Vector::from_fn(k, |r, _| if r == i { h } else { 0.0 });
    let mut out = Mat::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let (ei, ej) = (unit(i), unit(j));
            let v = eval(&(&ei + &ej))? - eval(&(&ei - &ej))? - eval(&(&ej - &ei))?
                + eval(&(-&ei - &ej))?;
            out[(i, j)] = v / (4.0 * h * h);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{min_eigenvalue, solve_riccati};
    use crate::model::{random_instance, ModelParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn v1(v: f64) -> Vector {
        Vector::from_element(1, v)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    /// Random instance plus a random stabilising gain (scaled toward the
    /// Riccati gain until the closed loop has spectral radius below 0.9).
    fn instance(seed: u64, m: usize, k: usize) -> (MfgModel, LinearGaussianPolicy, Vector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_instance(&mut rng, m, k, 1.1, 0.4);
        let ric = solve_riccati(model.a(), model.b(), model.q(), model.r()).unwrap();
        let noise = Mat::from_fn(k, m, |i, j| ((i * 7 + j * 3 + seed as usize) % 5) as f64 * 0.1 - 0.2);
        let mut gain = &ric.gain + &noise;
        let mut t = 1.0;
        while linalg::spectral_radius(&model.closed_loop(&gain)) > 0.9 {
            t *= 0.5;
            gain = &ric.gain + &noise * t;
        }
        let b = Vector::from_fn(k, |i, _| 0.3 - 0.2 * i as f64);
        let mu = Vector::from_fn(m, |i, _| 0.5 - 0.25 * i as f64);
        (model, LinearGaussianPolicy::new(gain, b), mu)
    }

    #[test]
    fn scalar_reference_values() {
        let model = MfgModel::scalar_reference();
        let pol = LinearGaussianPolicy::zero(&model);
        let mu = v1(0.0);
        let pq = policy_quantities(&model, &pol, &mu).unwrap();
        assert!(close(pq.mu_kb[0], 0.2, 1e-14));
        assert!(close(pq.phi_k[(0, 0)], 1.0 / 15.0, 1e-14));
        assert!(close(pq.p_k[(0, 0)], 4.0 / 3.0, 1e-14));
        assert!(close(pq.j2, 0.04, 1e-14));
        assert!(close(pq.j, pq.j1 + 0.04 + 0.01, 1e-14));
        let qp = q_params(&model, &pol, &mu).unwrap();
        let want = [4.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 7.0 / 3.0];
        for (g, w) in qp.upsilon.iter().zip(want) {
            assert!(close(*g, w, 1e-14));
        }
    }

    #[test]
    fn zero_forcing_mean() {
        let model = MfgModel::scalar_reference();
        // Bb + Āμ + d = b + 0.2 + 0.1 = 0 at μ = 1, b = −0.3.
        let pol = LinearGaussianPolicy::new(s(0.0), v1(-0.3));
        let m = stationary_mean(&model, &pol, &v1(1.0)).unwrap();
        assert!(m[0].abs() < 1e-15);
    }

    #[test]
    fn dead_beat_closed_loop() {
        // A − BK = 0.
        let model = MfgModel::scalar_reference();
        let pol = LinearGaussianPolicy::new(s(0.5), v1(0.0));
        let phi = stationary_cov(&model, &pol).unwrap();
        assert!(close(phi[(0, 0)], 0.05, 1e-14));
        let p = bellman_p(&model, &pol.gain).unwrap();
        assert!(close(p[(0, 0)], 1.25, 1e-14));
    }

    #[test]
    fn unstable_policy_rejected() {
        let model = MfgModel::scalar_reference();
        let pol = LinearGaussianPolicy::new(s(-0.5), v1(0.0));
        assert!(matches!(
            policy_quantities(&model, &pol, &v1(0.0)),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn no_drift_gives_zero_linear_terms() {
        let (model, pol, _) = instance(5, 3, 2);
        let mut p = model.to_params();
        p.d = Vector::zeros(3);
        let model = MfgModel::new(p).unwrap();
        let pol = LinearGaussianPolicy::new(pol.gain, Vector::zeros(2));
        let mu = Vector::zeros(3);
        let pq = policy_quantities(&model, &pol, &mu).unwrap();
        assert!(pq.f_kb.amax() < 1e-15);
        assert!(pq.j2.abs() < 1e-15);
        let sigma = model.sigma();
        assert!(close(pq.j, pq.j1 + sigma * sigma * model.r().trace(), 1e-14));
        let qp = q_params(&model, &pol, &mu).unwrap();
        assert!(qp.p.amax() < 1e-15 && qp.q.amax() < 1e-15);
    }

    #[test]
    fn two_lyapunov_routes_agree() {
        for seed in 0..10 {
            let (model, pol, mu) = instance(seed, 3, 2);
            let pq = policy_quantities(&model, &pol, &mu).unwrap();
            let other = ((model.q() + pol.gain.transpose() * model.r() * &pol.gain) * &pq.phi_k).trace();
            assert!(close(pq.j1, other, 1e-9), "seed {seed}: {} vs {other}", pq.j1);
            assert!(min_eigenvalue(&(&pq.phi_k - model.psi_omega())) >= -1e-10);
            assert!(min_eigenvalue(&pq.p_k) >= -1e-12);
            let qp = q_params(&model, &pol, &mu).unwrap();
            assert!(min_eigenvalue(&(qp.u22() - model.r())) >= -1e-10);
        }
    }

    #[test]
    fn gradient_vanishes_at_riccati_gain() {
        let (model, _, _) = instance(2, 3, 2);
        let ric = solve_riccati(model.a(), model.b(), model.q(), model.r()).unwrap();
        assert!(grad_k_j1(&model, &ric.gain).unwrap().amax() < 1e-8);
    }

    #[test]
    fn gradient_vanishes_at_optimal_b() {
        let (model, pol, mu) = instance(4, 3, 2);
        let b = optimal_b(&model, &pol.gain, &mu).unwrap();
        let g = grad_b_j2(&model, &LinearGaussianPolicy::new(pol.gain, b), &mu).unwrap();
        assert!(g.amax() < 1e-8);
    }

    #[test]
    fn optimal_b_scalar() {
        let model = MfgModel::scalar_reference();
        let b = optimal_b(&model, &s(0.0), &v1(0.0)).unwrap();
        assert!(close(b[0], -0.08, 1e-14));
        let pol = LinearGaussianPolicy::new(s(0.0), b);
        assert!(close(j2(&model, &pol, &v1(0.0)).unwrap(), 0.008, 1e-13));
        assert!(close(j2_at_optimal_b(&model, &v1(0.0)).unwrap(), 0.008, 1e-13));
        // Golden-section search on b ↦ J₂(0, b).
        let f = |b: f64| j2(&model, &LinearGaussianPolicy::new(s(0.0), v1(b)), &v1(0.0)).unwrap();
        let (mut lo, mut hi) = (-1.0, 1.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = hi - g * (hi - lo);
            let d = lo + g * (hi - lo);
            if f(c) < f(d) {
                hi = d;
            } else {
                lo = c;
            }
        }
        assert!((0.5 * (lo + hi) + 0.08).abs() < 1e-7);
    }

    #[test]
    fn optimal_b_zero_drift() {
        let mut p = MfgModel::scalar_reference().to_params();
        p.d = v1(0.0);
        let model = MfgModel::new(p).unwrap();
        for k in [0.0, 0.3, -0.2] {
            assert_eq!(optimal_b(&model, &s(k), &v1(0.0)).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn optimal_j2_independent_of_gain() {
        let (model, pol, mu) = instance(11, 3, 2);
        let mut values = Vec::new();
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let ric = solve_riccati(model.a(), model.b(), model.q(), model.r()).unwrap();
            let gain = &ric.gain * (1.0 - t) + &pol.gain * t;
            let b = optimal_b(&model, &gain, &mu).unwrap();
            values.push(j2(&model, &LinearGaussianPolicy::new(gain, b), &mu).unwrap());
        }
        let spread = values.iter().cloned().fold(f64::MIN, f64::max)
            - values.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-10, "{values:?}");
    }

    #[test]
    fn convexity_decoupled_input() {
        let mut p = MfgModel::scalar_reference().to_params();
        p.b = s(0.0);
        p.r = s(2.5);
        let model = MfgModel::new(p).unwrap();
        let c = convexity_constants(&model, &s(0.0)).unwrap();
        assert!(close(c.nu_k, 2.5, 1e-14));
        assert!(c.nu_k <= c.iota_k);
    }

    #[test]
    fn hessian_is_twice_half_hessian() {
        let (model, pol, mu) = instance(8, 3, 2);
        let c = convexity_constants(&model, &pol.gain).unwrap();
        assert!(c.nu_k > 0.0 && c.nu_k <= c.iota_k);
        let fd = j2_hessian_fd(&model, &pol, &mu, 1e-3).unwrap();
        let exact = &c.half_hessian * 2.0;
        assert!((&fd - &exact).norm() <= 1e-4 * exact.norm());
    }

    #[test]
    fn q_params_linear_representation() {
        let (model, pol, mu) = instance(13, 2, 2);
        let qp = q_params(&model, &pol, &mu).unwrap();
        for i in 0..20 {
            let x = Vector::from_fn(2, |r, _| ((i * 3 + r) as f64 * 0.37).sin());
            let u = Vector::from_fn(2, |r, _| ((i * 5 + r) as f64 * 0.61).cos());
            let z = Vector::from_iterator(4, x.iter().chain(u.iter()).copied());
            let w = &z - &qp.z_hat;
            let mut psi = linalg::pack(&(&w * w.transpose()));
            psi = Vector::from_iterator(psi.len() + 4, psi.iter().copied().chain(w.iter().copied()));
            let lhs = qp.value_from_feature(&psi);
            let rhs = eval_q(&model, &pol, &mu, &x, &u).unwrap();
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn q_matches_bellman_one_step() {
        // Q(x,u) = c(x,u) − J + E[V(x')], with x' ~ N(Ax + Bu + Āμ + d, Ψ_ω).
        let (model, pol, mu) = instance(17, 3, 2);
        let pq = policy_quantities(&model, &pol, &mu).unwrap();
        let x = Vector::from_vec(vec![0.4, -0.3, 1.2]);
        let u = Vector::from_vec(vec![-0.7, 0.25]);
        let mean = model.a() * &x + model.b() * &u + model.drift(&mu);
        let ev = eval_v(&model, &pol, &mu, &mean).unwrap() + (&pq.p_k * model.psi_omega()).trace();
        let c = crate::model::cost_of(&model, &x, &u, &mu).unwrap();
        let q = eval_q(&model, &pol, &mu, &x, &u).unwrap();
        assert!((q - (c - pq.j + ev)).abs() < 1e-9, "{q} vs {}", c - pq.j + ev);
    }

    #[test]
    fn v_is_expected_q_over_policy() {
        // E_η[Q(x, −Kx + b + ση)] = Q(x, ū) + σ² tr(Υ²²).
        let (model, pol, mu) = instance(19, 3, 2);
        let qp = q_params(&model, &pol, &mu).unwrap();
        let x = Vector::from_vec(vec![-0.2, 0.9, 0.1]);
        let ubar = pol.mean_action(&x);
        let sigma2 = model.sigma() * model.sigma();
        let lhs = eval_q(&model, &pol, &mu, &x, &ubar).unwrap() + sigma2 * qp.u22().trace();
        let v = eval_v(&model, &pol, &mu, &x).unwrap();
        assert!((lhs - v).abs() < 1e-9, "{lhs} vs {v}");
    }

    #[test]
    fn literal_convention_changes_only_noise_terms() {
        let mut p: ModelParams = MfgModel::scalar_reference().to_params();
        p.exploration = crate::model::ExplorationCovariance::Literal;
        let model = MfgModel::new(p).unwrap();
        let pol = LinearGaussianPolicy::zero(&model);
        let phi = stationary_cov(&model, &pol).unwrap();
        assert!(close(phi[(0, 0)], 0.14 / 0.75, 1e-14));
        let mean = stationary_mean(&model, &pol, &v1(0.0)).unwrap();
        assert!(close(mean[0], 0.2, 1e-14));
    }
}
