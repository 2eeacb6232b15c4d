use crate::error::Result;
use crate::linalg::{self, pack, sym_kron, Mat, Vector};
use crate::model::{LinearGaussianPolicy, MfgModel};

use super::policy::{stationary_cov, stationary_mean};

/// The joint state-action chain `z = (x; u)`:
/// `z' = Lz + ν + δ` with `δ ~ N(0, Ψ_δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZChain {
    /// `[[A, B], [−KA, −KB]]`.
    pub l: Mat,
    /// `(Āμ + d; −K(Āμ + d) + b)`.
    pub nu: Vector,
    /// `(μ_{K,b}; −Kμ_{K,b} + b)`.
    pub mu_z: Vector,
    pub sigma_z: Mat,
    /// `[[Ψ_ω, −Ψ_ωKᵀ], [−KΨ_ω, KΨ_ωKᵀ + σ²I]]`.
    pub psi_delta: Mat,
}

/// Closed form of `Θ = E[ψ(ψ − ψ')ᵀ]` and its augmented version
/// `Θ̃ = [[1, 0], [E ψ, Θ]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaClosedForm {
    pub chain: ZChain,
    pub theta: Mat,
    pub theta_tilde: Mat,
    /// `σ_min(Θ̃)`.
    pub lambda_k: f64,
}

pub fn z_chain(model: &MfgModel, policy: &LinearGaussianPolicy, mu: &Vector) -> Result<ZChain> {
    let mu_kb = stationary_mean(model, policy, mu)?;
    let phi = stationary_cov(model, policy)?;
    let (m, k) = (model.state_dim(), model.action_dim());
    let n = m + k;
    let kk = &policy.gain;
    let mut l = Mat::zeros(n, n);
    l.view_mut((0, 0), (m, m)).copy_from(model.a());
    l.view_mut((0, m), (m, k)).copy_from(model.b());
    l.view_mut((m, 0), (k, m)).copy_from(&(-(kk * model.a())));
    l.view_mut((m, m), (k, k)).copy_from(&(-(kk * model.b())));
    let drift = model.drift(mu);
    let mut nu = Vector::zeros(n);
    nu.rows_mut(0, m).copy_from(&drift);
    nu.rows_mut(m, k).copy_from(&policy.mean_action(&drift));
    let mut mu_z = Vector::zeros(n);
    mu_z.rows_mut(0, m).copy_from(&mu_kb);
    mu_z.rows_mut(m, k).copy_from(&policy.mean_action(&mu_kb));
    let sigma2 = model.sigma() * model.sigma();
    let pw = model.psi_omega();
    let mut psi_delta = Mat::zeros(n, n);
    psi_delta.view_mut((0, 0), (m, m)).copy_from(pw);
    let off = -(kk * pw);
    psi_delta.view_mut((m, 0), (k, m)).copy_from(&off);
    psi_delta.view_mut((0, m), (m, k)).copy_from(&off.transpose());
    psi_delta
        .view_mut((m, m), (k, k))
        .copy_from(&(kk * pw * kk.transpose() + Mat::identity(k, k) * sigma2));
    let mut sigma_z = Mat::zeros(n, n);
    sigma_z.view_mut((0, 0), (m, m)).copy_from(&phi);
    let off = -(kk * &phi);
    sigma_z.view_mut((m, 0), (k, m)).copy_from(&off);
    sigma_z.view_mut((0, m), (m, k)).copy_from(&off.transpose());
    sigma_z
        .view_mut((m, m), (k, k))
        .copy_from(&(kk * &phi * kk.transpose() + Mat::identity(k, k) * sigma2));
    Ok(ZChain {
        l,
        nu,
        mu_z,
        sigma_z: linalg::symmetrize(&sigma_z),
        psi_delta: linalg::symmetrize(&psi_delta),
    })
}

/// `E[ψ] = (svec Σ_z; 0)` under the stationary law with exact centring.
pub fn expected_feature(model: &MfgModel, policy: &LinearGaussianPolicy, mu: &Vector) -> Result<Vector> {
    let chain = z_chain(model, policy, mu)?;
    let n = chain.mu_z.len();
    let quad = pack(&chain.sigma_z);
    Ok(Vector::from_iterator(
        quad.len() + n,
        quad.iter().copied().chain(std::iter::repeat_n(0.0, n)),
    ))
}

/// `E[c ψ]` for `z ~ N(μ_z, Σ_z)` with `c = zᵀCz + μᵀQ̄μ`, `C = diag(Q, R)`:
/// quadratic block `svec(2Σ_zCΣ_z + tr(CΣ_z)Σ_z) + (μ_zᵀCμ_z + μᵀQ̄μ) svec Σ_z`,
/// linear block `2Σ_zCμ_z`.
pub fn expected_cost_feature(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
) -> Result<Vector> {
    let chain = z_chain(model, policy, mu)?;
    let (m, k) = (model.state_dim(), model.action_dim());
    let mut c = Mat::zeros(m + k, m + k);
    c.view_mut((0, 0), (m, m)).copy_from(model.q());
    c.view_mut((m, m), (k, k)).copy_from(model.r());
    let s = &chain.sigma_z;
    let mz = &chain.mu_z;
    let level = mz.dot(&(&c * mz)) + mu.dot(&(model.q_bar() * mu));
    let quad_mat = s * &c * s * 2.0 + s * (&c * s).trace() + s * level;
    let quad = pack(&linalg::symmetrize(&quad_mat));
    let lin = s * &c * mz * 2.0;
    Ok(Vector::from_iterator(
        quad.len() + lin.len(),
        quad.iter().copied().chain(lin.iter().copied()),
    ))
}

/// `Θ = diag(2(Σ_z ⊗ₛ Σ_z)(I − L ⊗ₛ L)ᵀ, Σ_z(I − L)ᵀ)` and `Θ̃`.
pub fn theta_closed_form(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
) -> Result<ThetaClosedForm> {
    let chain = z_chain(model, policy, mu)?;
    let n = chain.mu_z.len();
    let tri = linalg::tri_len(n);
    let dim = tri + n;
    let s = &chain.sigma_z;
    let l = &chain.l;
    let quad = sym_kron(s, s)? * (Mat::identity(tri, tri) - sym_kron(l, l)?).transpose() * 2.0;
    let lin = s * (Mat::identity(n, n) - l).transpose();
    let mut theta = Mat::zeros(dim, dim);
    theta.view_mut((0, 0), (tri, tri)).copy_from(&quad);
    theta.view_mut((tri, tri), (n, n)).copy_from(&lin);
    let mut theta_tilde = Mat::zeros(dim + 1, dim + 1);
    theta_tilde[(0, 0)] = 1.0;
    theta_tilde
        .view_mut((1, 0), (tri, 1))
        .copy_from(&pack(s));
    theta_tilde.view_mut((1, 1), (dim, dim)).copy_from(&theta);
    let lambda_k = linalg::sigma_min(&theta_tilde);
    Ok(ThetaClosedForm {
        chain,
        theta,
        theta_tilde,
        lambda_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{lyapunov_residual, solve_lyapunov, spectral_radius};
    use crate::model::random_instance;
    use crate::oracle::{policy_quantities, q_params};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> (MfgModel, LinearGaussianPolicy, Vector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_instance(&mut rng, 2, 1, 0.8, 0.3);
        let gain = Mat::from_row_slice(1, 2, &[0.1, -0.05]);
        let pol = LinearGaussianPolicy::new(gain, Vector::from_element(1, 0.2));
        (model, pol, Vector::from_vec(vec![0.3, -0.1]))
    }

    #[test]
    fn chain_structure() {
        for seed in 0..5 {
            let (model, pol, mu) = instance(seed);
            let ch = z_chain(&model, &pol, &mu).unwrap();
            let rho = spectral_radius(&model.closed_loop(&pol.gain));
            assert!((spectral_radius(&ch.l) - rho).abs() < 1e-9);
            assert!(lyapunov_residual(&ch.l, &ch.psi_delta, &ch.sigma_z) < 1e-10);
            let direct = solve_lyapunov(&ch.l, &ch.psi_delta).unwrap();
            assert!((direct - &ch.sigma_z).amax() < 1e-10);
            // Stationary mean of the joint chain.
            let n = ch.mu_z.len();
            let fixed = &ch.l * &ch.mu_z + &ch.nu;
            assert!((fixed - &ch.mu_z).amax() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn theta_invertible_and_bounded() {
        for seed in 0..5 {
            let (model, pol, mu) = instance(seed);
            let th = theta_closed_form(&model, &pol, &mu).unwrap();
            assert!(th.lambda_k > 0.0);
            let s = linalg::norm2(&th.chain.sigma_z);
            let l = linalg::norm2(&th.chain.l);
            let bound = 2.0 * (s * s * (1.0 + l * l)).max(s * (1.0 + l));
            assert!(linalg::norm2(&th.theta) <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn compact_bellman_equation_holds() {
        for seed in 0..5 {
            let (model, pol, mu) = instance(seed);
            let th = theta_closed_form(&model, &pol, &mu).unwrap();
            let pq = policy_quantities(&model, &pol, &mu).unwrap();
            let qp = q_params(&model, &pol, &mu).unwrap();
            let ecpsi = expected_cost_feature(&model, &pol, &mu).unwrap();
            let dim = qp.alpha.len();
            let mut zeta = Vector::zeros(dim + 1);
            zeta[0] = pq.j;
            zeta.rows_mut(1, dim).copy_from(&qp.alpha);
            let lhs = &th.theta_tilde * zeta;
            let mut rhs = Vector::zeros(dim + 1);
            rhs[0] = pq.j;
            rhs.rows_mut(1, dim).copy_from(&ecpsi);
            assert!((lhs - rhs).amax() < 1e-8);
        }
    }

    #[test]
    fn expected_feature_scalar() {
        let model = MfgModel::scalar_reference();
        let pol = LinearGaussianPolicy::zero(&model);
        let ef = expected_feature(&model, &pol, &Vector::zeros(1)).unwrap();
        // Σ_z = diag(1/15, 0.01) at K = 0.
        let want = [1.0 / 15.0, 0.0, 0.01, 0.0, 0.0];
        for (g, w) in ef.iter().zip(want) {
            assert!((g - w).abs() < 1e-14);
        }
    }
}
