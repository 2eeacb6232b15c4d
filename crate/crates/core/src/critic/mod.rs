//! Model-free policy evaluation.
//!
//! Both critics first estimate the stationary mean `μ̂` from a trajectory of
//! `T̃` steps, then fit `Q(x, u) ≈ ψ̂(x, u)ᵀα + β` from a second trajectory of
//! `T` steps, where the feature
//!
//! ```text
//! ψ̂(x, u) = (svec[(z − ẑ)(z − ẑ)ᵀ]; z − ẑ),   z = (x; u),  ẑ = (μ̂; −Kμ̂ + b)
//! ```
//!
//! is quadratic in the centred state-action pair. [`pd_gtd`] runs projected
//! stochastic primal-dual steps on the saddle-point form of the average-cost
//! Bellman equation; [`td0`] runs projected average-cost TD(0).

mod projection;

pub use projection::{
    default_projection_sets, radius_constants, ProjectionMode, ProjectionSets, ProjectionSpec,
    RadiusConstants,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::{sample_stationary_start, step, LinearGaussianPolicy, MfgModel, NoiseSource, StartMode};
use crate::oracle;

/// Direction used for the `ζ²` primal step of [`pd_gtd`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaUpdate {
    /// `(ψ̂_t − ψ̂_{t+1}) ψ̂_tᵀ ξ²`, an unbiased sample of `Θᵀξ²`, the partial
    /// gradient of the saddle objective.
    #[default]
    Gradient,
    /// `ψ̂_t (ψ̂_t − ψ̂_{t+1})ᵀ ξ²`, a sample of `Θξ²`.
    AsPrinted,
}

/// Budgets and step sizes for one critic call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    /// Length of the evaluation trajectory.
    #[serde(rename = "T")]
    pub t: usize,
    /// Length of the mean-estimation trajectory.
    #[serde(rename = "T_tilde")]
    pub t_tilde: usize,
    /// Step sizes are `γ_t = gamma0 / √t`.
    pub gamma0: f64,
    pub projection: ProjectionSpec,
    pub start: StartMode,
    pub zeta_update: ZetaUpdate,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            t: 100_000,
            t_tilde: 10_000,
            gamma0: 0.5,
            projection: ProjectionSpec::default(),
            start: StartMode::default(),
            zeta_update: ZetaUpdate::default(),
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.t_tilde == 0 {
            return Err(Error::InvalidConfig("critic budgets T and T_tilde must be at least 1".into()));
        }
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma0 must be positive, got {}", self.gamma0)));
        }
        Ok(())
    }

    /// The same configuration with both budgets multiplied by `factor`
    /// (rounded, at least 1).
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |n: usize| ((n as f64 * factor).round() as usize).max(1);
        Self {
            t: scale(self.t),
            t_tilde: scale(self.t_tilde),
            ..self.clone()
        }
    }
}

/// Which policy evaluator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    #[default]
    PdGtd,
    Td0,
    /// Oracle values in place of samples.
    Exact,
}

/// Output of a critic: estimates of `μ_{K,b}`, `Υ_K`, `p_{K,b}`, `q_{K,b}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticEstimate {
    pub mu_hat: Vector,
    pub upsilon_hat: Mat,
    pub p_hat: Vector,
    pub q_hat: Vector,
    pub alpha_hat: Vector,
    /// Step-size weighted average of the `ζ¹` iterates.
    pub j_hat: f64,
    /// Feature centre `(μ̂; −Kμ̂ + b)`.
    pub z_hat: Vector,
}

impl CriticEstimate {
    /// `Υ̂²²`.
    pub fn u22(&self) -> Mat {
        let (m, k) = (self.p_hat.len(), self.q_hat.len());
        self.upsilon_hat.view((m, m), (k, k)).into_owned()
    }

    /// `Υ̂²¹`.
    pub fn u21(&self) -> Mat {
        let (m, k) = (self.p_hat.len(), self.q_hat.len());
        self.upsilon_hat.view((m, 0), (k, m)).into_owned()
    }
}

/// One point of an optional critic trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub iter: usize,
    /// `‖ζ²_t − α‖₂` against a supplied reference.
    pub alpha_err: f64,
}

/// Iterates of the primal-dual method.
#[derive(Debug, Clone, PartialEq)]
pub struct PdState {
    pub zeta1: f64,
    pub zeta2: Vector,
    pub xi1: f64,
    pub xi2: Vector,
}

pub fn feature_dim(m: usize, k: usize) -> usize {
    linalg::tri_len(m + k) + m + k
}

/// `(μ̂; −Kμ̂ + b)`.
pub fn feature_center(mu_hat: &Vector, policy: &LinearGaussianPolicy) -> Vector {
    let u = policy.mean_action(mu_hat);
    Vector::from_iterator(mu_hat.len() + u.len(), mu_hat.iter().chain(u.iter()).copied())
}

pub fn feature(x: &Vector, u: &Vector, mu_hat: &Vector, policy: &LinearGaussianPolicy) -> Result<Vector> {
    let (m, k) = (policy.gain.ncols(), policy.gain.nrows());
    if x.len() != m || mu_hat.len() != m || u.len() != k || policy.intercept.len() != k {
        return Err(Error::DimMismatch(format!(
            "feature expects x, mu_hat of length {m} and u of length {k}"
        )));
    }
    let z_hat = feature_center(mu_hat, policy);
    let mut out = Vector::zeros(feature_dim(m, k));
    feature_into(&z_hat, x, u, &mut out);
    Ok(out)
}

/// Writes `ψ̂` for centre `z_hat` into `out` without allocating.
pub(crate) fn feature_into(z_hat: &Vector, x: &Vector, u: &Vector, out: &mut Vector) {
    let m = x.len();
    let n = z_hat.len();
    let w = |i: usize| if i < m { x[i] - z_hat[i] } else { u[i - m] - z_hat[i] };
    let mut idx = 0;
    for i in 0..n {
        let wi = w(i);
        for j in i..n {
            out[idx] = if i == j { wi * wi } else { std::f64::consts::SQRT_2 * wi * w(j) };
            idx += 1;
        }
    }
    for i in 0..n {
        out[idx + i] = w(i);
    }
}

/// Average of `x_1, …, x_T̃` along a trajectory started by `start`.
pub fn estimate_mean<N: NoiseSource + ?Sized>(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
    t_tilde: usize,
    start: StartMode,
    noise: &mut N,
) -> Result<Vector> {
    if t_tilde == 0 {
        return Err(Error::InvalidConfig("T_tilde must be at least 1".into()));
    }
    let mut x = sample_stationary_start(model, policy, mu, noise, start)?;
    let mut sum = Vector::zeros(model.state_dim());
    for _ in 0..t_tilde {
        x = step(model, policy, mu, &x, noise).x_next;
        sum += &x;
    }
    let mean = sum / t_tilde as f64;
    if !mean.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("mean estimation"));
    }
    Ok(mean)
}

/// Turns a parameter vector into `(Υ̂, p̂, q̂)`:
/// `Υ̂ = smat(α̂₁)`, `(p̂; q̂) = α̂₂/2 − Υ̂ẑ`.
pub fn assemble_estimate(
    alpha_hat: Vector,
    mu_hat: Vector,
    policy: &LinearGaussianPolicy,
    j_hat: f64,
) -> Result<CriticEstimate> {
    let (m, k) = (mu_hat.len(), policy.intercept.len());
    let n = m + k;
    let tri = linalg::tri_len(n);
    if alpha_hat.len() != tri + n {
        return Err(Error::BadLength(alpha_hat.len()));
    }
    let upsilon_hat = linalg::smat(alpha_hat.rows(0, tri).as_slice())?;
    let z_hat = feature_center(&mu_hat, policy);
    let pq = alpha_hat.rows(tri, n) * 0.5 - &upsilon_hat * &z_hat;
    Ok(CriticEstimate {
        p_hat: pq.rows(0, m).into_owned(),
        q_hat: pq.rows(m, k).into_owned(),
        mu_hat,
        upsilon_hat,
        alpha_hat,
        j_hat,
        z_hat,
    })
}

/// The estimate a perfect critic would return: oracle `α`, `μ_{K,b}`, `J`.
pub fn exact_estimate(model: &MfgModel, policy: &LinearGaussianPolicy, mu: &Vector) -> Result<CriticEstimate> {
    let pq = oracle::policy_quantities(model, policy, mu)?;
    let qp = oracle::q_params(model, policy, mu)?;
    assemble_estimate(qp.alpha, pq.mu_kb, policy, pq.j)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Method {
    PrimalDual,
    Td,
}

fn step_size(gamma0: f64, t: usize) -> f64 {
    gamma0 / (t as f64).sqrt()
}

fn run<N: NoiseSource + ?Sized>(
    method: Method,
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
    cfg: &CriticConfig,
    noise: &mut N,
    reference: Option<&Vector>,
    trace_every: usize,
) -> Result<(CriticEstimate, Vec<TracePoint>)> {
    cfg.validate()?;
    model.check_policy(policy)?;
    model.check_mu(mu)?;
    model.check_stable(&policy.gain)?;
    let sets = default_projection_sets(model, &policy.gain, cfg.projection)?;
    let mu_hat = estimate_mean(model, policy, mu, cfg.t_tilde, cfg.start, noise)?;
    let z_hat = feature_center(&mu_hat, policy);
    let dim = feature_dim(model.state_dim(), model.action_dim());

    let mut st = PdState {
        zeta1: 0.5 * sets.zeta1_max,
        zeta2: Vector::zeros(dim),
        xi1: 0.0,
        xi2: Vector::zeros(dim),
    };
    let mut psi = Vector::zeros(dim);
    let mut psi_next = Vector::zeros(dim);
    let mut diff = Vector::zeros(dim);
    let mut alpha_sum = Vector::zeros(dim);
    let mut j_sum = 0.0;
    let mut gamma_sum = 0.0;
    let mut trace = Vec::new();

    let x0 = sample_stationary_start(model, policy, mu, noise, cfg.start)?;
    let mut tr = step(model, policy, mu, &x0, noise);
    feature_into(&z_hat, &tr.x, &tr.u, &mut psi);
    for t in 0..cfg.t {
        let next = step(model, policy, mu, &tr.x_next, noise);
        feature_into(&z_hat, &next.x, &next.u, &mut psi_next);
        diff.copy_from(&psi);
        diff -= &psi_next;
        let c = tr.cost;
        let gamma = step_size(cfg.gamma0, t + 1);
        let delta = st.zeta1 + diff.dot(&st.zeta2) - c;
        if !delta.is_finite() {
            return Err(Error::NonFinite(match method {
                Method::PrimalDual => "primal-dual critic",
                Method::Td => "TD(0) critic",
            }));
        }
        match method {
            Method::PrimalDual => {
                let psi_xi = psi.dot(&st.xi2);
                let zeta1 = st.zeta1 - gamma * (st.xi1 + psi_xi);
                match cfg.zeta_update {
                    ZetaUpdate::Gradient => st.zeta2.axpy(-gamma * psi_xi, &diff, 1.0),
                    ZetaUpdate::AsPrinted => {
                        let d_xi = diff.dot(&st.xi2);
                        st.zeta2.axpy(-gamma * d_xi, &psi, 1.0)
                    }
                }
                let xi1 = (1.0 - gamma) * st.xi1 + gamma * (st.zeta1 - c);
                st.xi2.axpy(gamma * delta, &psi, 1.0 - gamma);
                let (z1, z2) = sets.project_zeta(zeta1, &st.zeta2);
                let (x1, x2) = sets.project_xi(xi1, &st.xi2);
                st = PdState {
                    zeta1: z1,
                    zeta2: z2,
                    xi1: x1,
                    xi2: x2,
                };
            }
            Method::Td => {
                // The cost average is a convex combination only while γ ≤ 1.
                let g1 = gamma.min(1.0);
                let zeta1 = (1.0 - g1) * st.zeta1 + g1 * c;
                st.zeta2.axpy(-gamma * delta, &psi, 1.0);
                let (z1, z2) = sets.project_zeta(zeta1, &st.zeta2);
                st.zeta1 = z1;
                st.zeta2 = z2;
            }
        }
        alpha_sum.axpy(gamma, &st.zeta2, 1.0);
        j_sum += gamma * st.zeta1;
        gamma_sum += gamma;
        if let Some(alpha) = reference {
            if trace_every > 0 && ((t + 1) % trace_every == 0 || t + 1 == cfg.t) {
                trace.push(TracePoint {
                    iter: t + 1,
                    alpha_err: (&st.zeta2 - alpha).norm(),
                });
            }
        }
        tr = next;
        std::mem::swap(&mut psi, &mut psi_next);
    }
    let alpha_hat = alpha_sum / gamma_sum;
    if !alpha_hat.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("critic output"));
    }
    let est = assemble_estimate(alpha_hat, mu_hat, policy, j_sum / gamma_sum)?;
    Ok((est, trace))
}

/// Primal-dual gradient temporal-difference policy evaluation.
pub fn pd_gtd<N: NoiseSource + ?Sized>(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
    cfg: &CriticConfig,
    noise: &mut N,
) -> Result<CriticEstimate> {
    run(Method::PrimalDual, model, policy, mu, cfg, noise, None, 0).map(|r| r.0)
}

/// [`pd_gtd`] recording `‖ζ²_t − α‖₂` every `every` iterations.
pub fn pd_gtd_traced<N: NoiseSource + ?Sized>(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
    cfg: &CriticConfig,
    noise: &mut N,
    reference: &Vector,
    every: usize,
) -> Result<(CriticEstimate, Vec<TracePoint>)> {
    run(Method::PrimalDual, model, policy, mu, cfg, noise, Some(reference), every)
}

/// Projected average-cost TD(0) policy evaluation, projecting `ζ` onto the
/// same `V_ζ` as [`pd_gtd`].
pub fn td0<N: NoiseSource + ?Sized>(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
    cfg: &CriticConfig,
    noise: &mut N,
) -> Result<CriticEstimate> {
    run(Method::Td, model, policy, mu, cfg, noise, None, 0).map(|r| r.0)
}

pub fn td0_traced<N: NoiseSource + ?Sized>(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
    cfg: &CriticConfig,
    noise: &mut N,
    reference: &Vector,
    every: usize,
) -> Result<(CriticEstimate, Vec<TracePoint>)> {
    run(Method::Td, model, policy, mu, cfg, noise, Some(reference), every)
}

/// Dispatches on `kind`; `Exact` ignores `cfg` and `noise`.
pub fn evaluate<N: NoiseSource + ?Sized>(
    kind: CriticKind,
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
    cfg: &CriticConfig,
    noise: &mut N,
) -> Result<CriticEstimate> {
    match kind {
        CriticKind::PdGtd => pd_gtd(model, policy, mu, cfg, noise),
        CriticKind::Td0 => td0(model, policy, mu, cfg, noise),
        CriticKind::Exact => exact_estimate(model, policy, mu),
    }
}

/// One primal-dual step with every sample average replaced by its exact
/// stationary expectation (exact centring, no projection).
pub fn expected_update(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
    state: &PdState,
    gamma: f64,
) -> Result<PdState> {
    let th = oracle::theta_closed_form(model, policy, mu)?;
    let e_psi = oracle::expected_feature(model, policy, mu)?;
    let e_cpsi = oracle::expected_cost_feature(model, policy, mu)?;
    let j = oracle::policy_quantities(model, policy, mu)?.j;
    let grad_zeta1 = state.xi1 + e_psi.dot(&state.xi2);
    let grad_zeta2 = th.theta.transpose() * &state.xi2;
    let grad_xi1 = state.zeta1 - j - state.xi1;
    let grad_xi2 = &e_psi * state.zeta1 + &th.theta * &state.zeta2 - e_cpsi - &state.xi2;
    Ok(PdState {
        zeta1: state.zeta1 - gamma * grad_zeta1,
        zeta2: &state.zeta2 - grad_zeta2 * gamma,
        xi1: state.xi1 + gamma * grad_xi1,
        xi2: &state.xi2 + grad_xi2 * gamma,
    })
}

#[cfg(test)]
mod tests;
