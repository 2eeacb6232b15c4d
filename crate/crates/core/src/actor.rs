//! Natural actor-critic for the drifted LQR problem at a frozen mean-field
//! state: `N` natural-gradient steps on the gain `K`, then `H` gradient steps
//! on the intercept `b` at the final gain, each driven by a fresh critic call.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::critic::{self, CriticConfig, CriticEstimate, CriticKind};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, RiccatiSolution, Vector};
use crate::model::{LinearGaussianPolicy, MfgModel, RngState, StartMode};
use crate::oracle;

/// What to do when a gain step leaves the stable region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Safeguard {
    /// Abort with [`Error::UnstableIterate`].
    None,
    /// Halve the step, up to `max_halvings` times, before aborting.
    #[default]
    RejectUnstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorConfig {
    /// Gain iterations.
    #[serde(rename = "N")]
    pub n: usize,
    /// Intercept iterations.
    #[serde(rename = "H")]
    pub h: usize,
    /// Gain step size; `None` uses the admissible bound computed from the model.
    pub gamma: Option<f64>,
    /// Intercept step size; `None` uses `1/ι_K` at the final gain.
    pub gamma_b: Option<f64>,
    pub critic: CriticKind,
    /// Critic budgets during the gain loop.
    pub k_critic: CriticConfig,
    /// Critic budgets during the intercept loop.
    pub b_critic: CriticConfig,
    pub safeguard: Safeguard,
    pub max_halvings: usize,
    /// Record optimality gaps against the exact solution in the trace.
    pub oracle_diagnostics: bool,
}

impl Default for ActorConfig {
    fn default() -> Self {
        Self {
            n: 10,
            h: 10,
            gamma: None,
            gamma_b: None,
            critic: CriticKind::PdGtd,
            k_critic: CriticConfig::default(),
            b_critic: CriticConfig::default(),
            safeguard: Safeguard::RejectUnstable,
            max_halvings: 10,
            oracle_diagnostics: false,
        }
    }
}

impl ActorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("gamma_b", self.gamma_b)] {
            if let Some(g) = v {
                if !(g > 0.0 && g.is_finite()) {
                    return Err(Error::InvalidConfig(format!("{name} must be positive, got {g}")));
                }
            }
        }
        if self.critic != CriticKind::Exact {
            self.k_critic.validate()?;
            self.b_critic.validate()?;
        }
        Ok(())
    }

    /// Simulator steps one full run consumes.
    pub fn simulator_steps(&self) -> u64 {
        if self.critic == CriticKind::Exact {
            return 0;
        }
        self.n as u64 * critic_steps(&self.k_critic)
            + self.h as u64 * critic_steps(&self.b_critic)
            + mean_steps(&self.b_critic)
    }
}

fn burn(cfg: &CriticConfig) -> u64 {
    match cfg.start {
        StartMode::BurnIn(n) => n as u64,
        StartMode::Stationary => 0,
    }
}

fn mean_steps(cfg: &CriticConfig) -> u64 {
    burn(cfg) + cfg.t_tilde as u64
}

/// Simulator steps of one critic call.
pub fn critic_steps(cfg: &CriticConfig) -> u64 {
    mean_steps(cfg) + burn(cfg) + cfg.t as u64 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    K,
    B,
}

/// One trace row. Gap columns are filled only with oracle diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActorTraceRow {
    pub phase: Phase,
    pub iter: usize,
    /// `ρ(A − BK)` of the current gain.
    pub rho: f64,
    /// `J₁(K) − J₁(K*)`.
    pub j1_gap: Option<f64>,
    /// `J₂(K_N, b) − J₂(K_N, b^{K_N})`.
    pub j2_gap: Option<f64>,
    /// `‖K − K*‖_F`.
    pub k_err: Option<f64>,
    /// `‖b − b^{K_N}‖₂`.
    pub b_err: Option<f64>,
}

/// Rows for the initial iterate and after every update of each loop.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ActorTrace {
    pub rows: Vec<ActorTraceRow>,
    pub oracle: bool,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

impl ActorTrace {
    /// CSV with header `phase,iter,rho` plus the gap columns when the oracle was on.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,iter,rho");
        if self.oracle {
            out.push_str(",J1_gap,J2_gap,K_err,b_err");
        }
        out.push('\n');
        for r in &self.rows {
            let phase = match r.phase {
                Phase::K => "K",
                Phase::B => "b",
            };
            let _ = write!(out, "{phase},{},{:.17e}", r.iter, r.rho);
            if self.oracle {
                let _ = write!(
                    out,
                    ",{},{},{},{}",
                    opt(r.j1_gap),
                    opt(r.j2_gap),
                    opt(r.k_err),
                    opt(r.b_err)
                );
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ActorOutcome {
    pub policy: LinearGaussianPolicy,
    /// Critic estimate of the stationary mean under the returned policy.
    pub mu_hat: Vector,
    pub trace: ActorTrace,
    pub simulator_steps: u64,
}

/// `K − γ(Υ̂²²K − Υ̂²¹)`.
pub fn natural_k_step(gain: &Mat, upsilon_hat: &Mat, gamma: f64) -> Result<Mat> {
    let (k, m) = gain.shape();
    if upsilon_hat.shape() != (m + k, m + k) {
        return Err(Error::DimMismatch(format!(
            "Upsilon must be {0}x{0} for a {k}x{m} gain, got {1:?}",
            m + k,
            upsilon_hat.shape()
        )));
    }
    let u22 = upsilon_hat.view((m, m), (k, k));
    let u21 = upsilon_hat.view((m, 0), (k, m));
    Ok(gain - (u22 * gain - u21) * gamma)
}

/// `b − γᵇ[Υ̂²²(−Kμ̂ + b) + Υ̂²¹μ̂ + q̂]`.
pub fn b_step(gain: &Mat, intercept: &Vector, est: &CriticEstimate, gamma_b: f64) -> Result<Vector> {
    let (k, m) = gain.shape();
    if intercept.len() != k || est.mu_hat.len() != m || est.q_hat.len() != k || est.upsilon_hat.nrows() != m + k {
        return Err(Error::DimMismatch("b_step operands do not match the gain".into()));
    }
    let dir = est.u22() * (intercept - gain * &est.mu_hat) + est.u21() * &est.mu_hat + &est.q_hat;
    Ok(intercept - dir * gamma_b)
}

/// Admissible gain step `[‖R‖₂ + ‖B‖₂² J(K₀, b₀)/σ_min(Ψ_ε)]⁻¹`.
pub fn admissible_step_bound(model: &MfgModel, policy0: &LinearGaussianPolicy, mu: &Vector) -> Result<f64> {
    let j0 = oracle::policy_quantities(model, policy0, mu)?.j;
    let nb = linalg::norm2(model.b());
    let s = linalg::min_eigenvalue(&model.psi_eps());
    Ok(1.0 / (linalg::norm2(model.r()) + nb * nb * j0 / s))
}

/// Contraction factor `1 − γσ_min(Ψ_ε)σ_min(R)/‖Φ_{K*}‖₂` of the exact gain loop.
pub fn k_loop_rate(model: &MfgModel, gamma: f64, k_star: &Mat) -> Result<f64> {
    let pol = LinearGaussianPolicy::new(k_star.clone(), Vector::zeros(model.action_dim()));
    let phi_star = oracle::stationary_cov(model, &pol)?;
    Ok(1.0 - gamma * linalg::min_eigenvalue(&model.psi_eps()) * linalg::min_eigenvalue(model.r())
        / linalg::norm2(&phi_star))
}

struct Diagnostics {
    riccati: RiccatiSolution,
}

impl Diagnostics {
    fn k_row(&self, model: &MfgModel, iter: usize, gain: &Mat, rho: f64) -> ActorTraceRow {
        let j1_gap = oracle::j1_gap(model, gain, &self.riccati.gain, &self.riccati.x).ok();
        ActorTraceRow {
            phase: Phase::K,
            iter,
            rho,
            j1_gap,
            j2_gap: None,
            k_err: Some((gain - &self.riccati.gain).norm()),
            b_err: None,
        }
    }
}

fn b_row(model: &MfgModel, mu: &Vector, iter: usize, policy: &LinearGaussianPolicy, rho: f64, diag: bool) -> ActorTraceRow {
    let (mut j2_gap, mut b_err) = (None, None);
    if diag {
        if let Ok(b_opt) = oracle::optimal_b(model, &policy.gain, mu) {
            b_err = Some((&policy.intercept - &b_opt).norm());
            let j_opt = oracle::j2_at_optimal_b(model, mu).ok();
            let j_now = oracle::j2(model, policy, mu).ok();
            if let (Some(a), Some(b)) = (j_now, j_opt) {
                j2_gap = Some(a - b);
            }
        }
    }
    ActorTraceRow {
        phase: Phase::B,
        iter,
        rho,
        j1_gap: None,
        j2_gap,
        k_err: None,
        b_err,
    }
}

/// Runs the gain loop, then the intercept loop, and returns the final policy
/// with a critic estimate of its stationary mean.
pub fn natural_actor_critic(
    model: &MfgModel,
    mu: &Vector,
    policy0: &LinearGaussianPolicy,
    cfg: &ActorConfig,
    rng: &mut RngState,
) -> Result<ActorOutcome> {
    cfg.validate()?;
    model.check_policy(policy0)?;
    model.check_mu(mu)?;
    let rho0 = model.check_stable(&policy0.gain)?;
    let gamma = match cfg.gamma {
        Some(g) => g,
        None => admissible_step_bound(model, policy0, mu)?,
    };
    let diag = if cfg.oracle_diagnostics {
        Some(Diagnostics {
            riccati: linalg::solve_riccati_with(model.a(), model.b(), model.q(), model.r(), model.tolerances())?,
        })
    } else {
        None
    };
    let mut trace = ActorTrace {
        rows: Vec::with_capacity(cfg.n + cfg.h + 2),
        oracle: cfg.oracle_diagnostics,
    };
    let mut steps = 0u64;
    let b0 = policy0.intercept.clone();
    let mut gain = policy0.gain.clone();
    let mut rho = rho0;
    trace.rows.push(match &diag {
        Some(d) => d.k_row(model, 0, &gain, rho),
        None => plain_row(Phase::K, 0, rho),
    });
    let evaluate = |pol: &LinearGaussianPolicy, ccfg: &CriticConfig, rng: &mut RngState| {
        critic::evaluate(cfg.critic, model, pol, mu, ccfg, rng)
    };
    let k_cost = if cfg.critic == CriticKind::Exact { 0 } else { critic_steps(&cfg.k_critic) };
    let b_cost = if cfg.critic == CriticKind::Exact { 0 } else { critic_steps(&cfg.b_critic) };

    for n in 0..cfg.n {
        let pol = LinearGaussianPolicy::new(gain.clone(), b0.clone());
        let est = evaluate(&pol, &cfg.k_critic, rng)?;
        steps += k_cost;
        let mut g = gamma;
        let mut halvings = 0;
        loop {
            let next = natural_k_step(&gain, &est.upsilon_hat, g)?;
            let r = linalg::spectral_radius(&model.closed_loop(&next));
            if r < 1.0 - model.tolerances().stab_margin {
                gain = next;
                rho = r;
                break;
            }
            if cfg.safeguard == Safeguard::None || halvings >= cfg.max_halvings {
                return Err(Error::UnstableIterate { iteration: n + 1, rho: r });
            }
            halvings += 1;
            g *= 0.5;
            log::debug!("gain step {} left the stable region (rho {r:.4}); halving", n + 1);
        }
        trace.rows.push(match &diag {
            Some(d) => d.k_row(model, n + 1, &gain, rho),
            None => plain_row(Phase::K, n + 1, rho),
        });
    }

    let gamma_b = match cfg.gamma_b {
        Some(g) => g,
        None => 1.0 / oracle::convexity_constants(model, &gain)?.iota_k,
    };
    let mut policy = LinearGaussianPolicy::new(gain, b0);
    trace.rows.push(b_row(model, mu, 0, &policy, rho, cfg.oracle_diagnostics));
    for h in 0..cfg.h {
        let est = evaluate(&policy, &cfg.b_critic, rng)?;
        steps += b_cost;
        policy.intercept = b_step(&policy.gain, &policy.intercept, &est, gamma_b)?;
        if !policy.intercept.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("intercept iterate"));
        }
        trace.rows.push(b_row(model, mu, h + 1, &policy, rho, cfg.oracle_diagnostics));
    }

    let mu_hat = match cfg.critic {
        CriticKind::Exact => oracle::stationary_mean(model, &policy, mu)?,
        _ => {
            steps += mean_steps(&cfg.b_critic);
            critic::estimate_mean(model, &policy, mu, cfg.b_critic.t_tilde, cfg.b_critic.start, rng)?
        }
    };
    Ok(ActorOutcome {
        policy,
        mu_hat,
        trace,
        simulator_steps: steps,
    })
}

fn plain_row(phase: Phase, iter: usize, rho: f64) -> ActorTraceRow {
    ActorTraceRow {
        phase,
        iter,
        rho,
        j1_gap: None,
        j2_gap: None,
        k_err: None,
        b_err: None,
    }
}
