//! The outer mean-field loop: alternate a policy update at the frozen state
//! `μ_s` with a mean-field update `μ_{s+1} ← μ̂`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::actor::{self, ActorConfig};
use crate::critic::{self, CriticKind};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::{LinearGaussianPolicy, MfgModel, RngState};
use crate::oracle::{self, MeanFieldOperator};

/// How `π_{s+1}` is produced from `μ_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyUpdate {
    /// Natural actor-critic warm-started at `π_s`.
    #[default]
    ActorCritic,
    /// The exact best response `Λ₁(μ_s)`.
    BestResponse,
}

/// How `μ_{s+1}` is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanUpdate {
    /// The sampled estimate `μ̂` of the stationary mean under `π_{s+1}`.
    #[default]
    Sampled,
    /// `Λ₂(μ_s, π_{s+1})`.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfgConfig {
    /// Outer iterations.
    #[serde(rename = "S")]
    pub s: usize,
    /// Initial mean-field state; zeros when absent.
    pub mu0: Option<Vec<f64>>,
    /// Initial gain as rows; zeros when absent.
    pub k0: Option<Vec<Vec<f64>>>,
    /// Initial intercept; zeros when absent.
    pub b0: Option<Vec<f64>>,
    /// Actor settings at `s = 0`.
    pub actor: ActorConfig,
    /// Critic budgets at round `s` are the base budgets times `budget_growth^s`.
    pub budget_growth: f64,
    pub policy_update: PolicyUpdate,
    pub mean_update: MeanUpdate,
    pub oracle_diagnostics: bool,
}

impl Default for MfgConfig {
    fn default() -> Self {
        Self {
            s: 8,
            mu0: None,
            k0: None,
            b0: None,
            actor: ActorConfig::default(),
            budget_growth: 1.5,
            policy_update: PolicyUpdate::ActorCritic,
            mean_update: MeanUpdate::Sampled,
            oracle_diagnostics: false,
        }
    }
}

impl MfgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::InvalidConfig("S must be at least 1".into()));
        }
        if !(self.budget_growth > 0.0 && self.budget_growth.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "budget_growth must be positive, got {}",
                self.budget_growth
            )));
        }
        self.actor.validate()
    }

    /// Actor settings for round `s`.
    pub fn actor_at(&self, s: usize) -> ActorConfig {
        let f = self.budget_growth.powi(s as i32);
        ActorConfig {
            k_critic: self.actor.k_critic.scaled(f),
            b_critic: self.actor.b_critic.scaled(f),
            ..self.actor.clone()
        }
    }

    /// Simulator steps a full run consumes.
    pub fn simulator_steps(&self) -> u64 {
        (0..self.s)
            .map(|s| {
                let a = self.actor_at(s);
                match (self.policy_update, self.mean_update) {
                    (PolicyUpdate::ActorCritic, _) => a.simulator_steps(),
                    (PolicyUpdate::BestResponse, MeanUpdate::Sampled) if a.critic != CriticKind::Exact => {
                        let burn = match a.b_critic.start {
                            crate::model::StartMode::BurnIn(n) => n as u64,
                            crate::model::StartMode::Stationary => 0,
                        };
                        burn + a.b_critic.t_tilde as u64
                    }
                    _ => 0,
                }
            })
            .sum()
    }

    pub fn initial_mu(&self, model: &MfgModel) -> Result<Vector> {
        let mu = match &self.mu0 {
            Some(v) => Vector::from_vec(v.clone()),
            None => Vector::zeros(model.state_dim()),
        };
        model.check_mu(&mu)?;
        Ok(mu)
    }

    pub fn initial_policy(&self, model: &MfgModel) -> Result<LinearGaussianPolicy> {
        let mut pol = LinearGaussianPolicy::zero(model);
        if let Some(rows) = &self.k0 {
            pol.gain = linalg::mat_from_rows(rows)?;
        }
        if let Some(b) = &self.b0 {
            pol.intercept = Vector::from_vec(b.clone());
        }
        model.check_policy(&pol)?;
        Ok(pol)
    }
}

/// `μ_{s+1}` from the actor's estimate, or `Λ₂(μ_s, π_{s+1})` in exact mode.
pub fn mean_field_update(
    model: &MfgModel,
    mode: MeanUpdate,
    mu_s: &Vector,
    policy_next: &LinearGaussianPolicy,
    mu_hat: &Vector,
) -> Result<Vector> {
    match mode {
        MeanUpdate::Sampled => Ok(mu_hat.clone()),
        MeanUpdate::Exact => oracle::lambda2(model, mu_s, policy_next),
    }
}

/// Row `s` holds `μ_s` and the policy `π_s` that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MfgTraceRow {
    pub s: usize,
    pub mu: Vec<f64>,
    /// `‖μ_s − μ*‖₂`.
    pub mu_err: Option<f64>,
    /// `‖K_s − K*‖_F`.
    pub k_err: Option<f64>,
    /// `‖b_s − b*‖₂`.
    pub b_err: Option<f64>,
    /// `J(π_s) − J(Λ₁(μ_s))` at `μ_s`.
    pub j_gap: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MfgTrace {
    pub rows: Vec<MfgTraceRow>,
    pub oracle: bool,
    /// `L₀` when it is at least one.
    pub non_contraction: Option<f64>,
    pub simulator_steps: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

impl MfgTrace {
    pub fn to_csv(&self) -> String {
        let m = self.rows.first().map_or(0, |r| r.mu.len());
        let mut out = String::from("s");
        for i in 0..m {
            let _ = write!(out, ",mu_{i}");
        }
        if self.oracle {
            out.push_str(",mu_err,K_err,b_err,J_gap");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{}", r.s);
            for v in &r.mu {
                let _ = write!(out, ",{v:.17e}");
            }
            if self.oracle {
                let _ = write!(out, ",{},{},{},{}", opt(r.mu_err), opt(r.k_err), opt(r.b_err), opt(r.j_gap));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct MfgOutcome {
    pub policy: LinearGaussianPolicy,
    pub mu: Vector,
    pub trace: MfgTrace,
}

struct Reference<'a> {
    op: MeanFieldOperator<'a>,
    mu_star: Vector,
    policy_star: LinearGaussianPolicy,
}

impl Reference<'_> {
    fn row(&self, s: usize, mu: &Vector, pol: &LinearGaussianPolicy) -> MfgTraceRow {
        let model = self.op.model();
        let j_gap = (|| -> Result<f64> {
            let best = self.op.lambda1(mu)?;
            Ok(oracle::policy_quantities(model, pol, mu)?.j - oracle::policy_quantities(model, &best, mu)?.j)
        })()
        .ok();
        MfgTraceRow {
            s,
            mu: mu.iter().copied().collect(),
            mu_err: Some((mu - &self.mu_star).norm()),
            k_err: Some((&pol.gain - &self.policy_star.gain).norm()),
            b_err: Some((&pol.intercept - &self.policy_star.intercept).norm()),
            j_gap,
        }
    }
}

fn plain_row(s: usize, mu: &Vector) -> MfgTraceRow {
    MfgTraceRow {
        s,
        mu: mu.iter().copied().collect(),
        mu_err: None,
        k_err: None,
        b_err: None,
        j_gap: None,
    }
}

/// Runs `S` rounds and returns `(π_S, μ_S)` with a trace of `S + 1` rows.
pub fn solve_mfg(model: &MfgModel, cfg: &MfgConfig, rng: &mut RngState) -> Result<MfgOutcome> {
    cfg.validate()?;
    let mut mu = cfg.initial_mu(model)?;
    let mut policy = cfg.initial_policy(model)?;
    model.check_stable(&policy.gain)?;
    let op = MeanFieldOperator::new(model)?;
    let l0 = op.contraction_constants()?.l0;
    let non_contraction = if l0 < 1.0 {
        None
    } else {
        log::warn!("mean-field operator is not a contraction (L0 = {l0:.4}); iterates may diverge");
        Some(l0)
    };
    let reference = if cfg.oracle_diagnostics {
        let mu_star = match non_contraction {
            None => oracle::affine_fixed_point(&op)?,
            Some(_) => oracle::affine_fixed_point(&op).unwrap_or_else(|_| Vector::from_element(model.state_dim(), f64::NAN)),
        };
        let policy_star = op.lambda1(&mu_star).unwrap_or_else(|_| LinearGaussianPolicy::zero(model));
        Some(Reference {
            op: op.clone(),
            mu_star,
            policy_star,
        })
    } else {
        None
    };
    let record = |s: usize, mu: &Vector, pol: &LinearGaussianPolicy| match &reference {
        Some(r) => r.row(s, mu, pol),
        None => plain_row(s, mu),
    };
    let mut trace = MfgTrace {
        rows: vec![record(0, &mu, &policy)],
        oracle: cfg.oracle_diagnostics,
        non_contraction,
        simulator_steps: 0,
    };
    for s in 0..cfg.s {
        let acfg = cfg.actor_at(s);
        let (next, mu_hat) = match cfg.policy_update {
            PolicyUpdate::ActorCritic => {
                let out = actor::natural_actor_critic(model, &mu, &policy, &acfg, rng)?;
                trace.simulator_steps += out.simulator_steps;
                (out.policy, out.mu_hat)
            }
            PolicyUpdate::BestResponse => {
                let next = op.lambda1(&mu)?;
                let mu_hat = match (cfg.mean_update, acfg.critic) {
                    (MeanUpdate::Sampled, CriticKind::PdGtd | CriticKind::Td0) => {
                        let c = &acfg.b_critic;
                        trace.simulator_steps += c.t_tilde as u64
                            + match c.start {
                                crate::model::StartMode::BurnIn(n) => n as u64,
                                crate::model::StartMode::Stationary => 0,
                            };
                        critic::estimate_mean(model, &next, &mu, c.t_tilde, c.start, rng)?
                    }
                    _ => oracle::lambda2(model, &mu, &next)?,
                };
                (next, mu_hat)
            }
        };
        let mu_next = mean_field_update(model, cfg.mean_update, &mu, &next, &mu_hat)?;
        if !mu_next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("mean-field iterate"));
        }
        policy = next;
        mu = mu_next;
        trace.rows.push(record(s + 1, &mu, &policy));
        log::debug!("round {}: mu = {:?}", s + 1, mu.as_slice());
    }
    Ok(MfgOutcome { policy, mu, trace })
}

/// `‖K − K*‖_F` for a gain against the Riccati gain of `model`.
pub fn gain_error(model: &MfgModel, gain: &Mat) -> Result<f64> {
    Ok((gain - MeanFieldOperator::new(model)?.k_star()).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_instance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exact_cfg(s: usize, policy_update: PolicyUpdate) -> MfgConfig {
        MfgConfig {
            s,
            actor: ActorConfig {
                n: 200,
                h: 200,
                critic: CriticKind::Exact,
                ..ActorConfig::default()
            },
            policy_update,
            mean_update: MeanUpdate::Exact,
            oracle_diagnostics: true,
            ..MfgConfig::default()
        }
    }

    #[test]
    fn sampled_update_passes_through() {
        let model = MfgModel::scalar_reference();
        let pol = LinearGaussianPolicy::zero(&model);
        let mu_hat = Vector::from_element(1, 0.123);
        let out = mean_field_update(&model, MeanUpdate::Sampled, &Vector::zeros(1), &pol, &mu_hat).unwrap();
        assert_eq!(out, mu_hat);
    }

    #[test]
    fn exact_update_is_lambda2() {
        let model = MfgModel::scalar_reference();
        let mu = Vector::from_element(1, 0.4);
        let pol = oracle::lambda1(&model, &mu).unwrap();
        let out = mean_field_update(&model, MeanUpdate::Exact, &mu, &pol, &Vector::zeros(1)).unwrap();
        let want = oracle::lambda2(&model, &mu, &pol).unwrap();
        assert!((out - want).amax() < 1e-12);
    }

    #[test]
    fn best_response_run_matches_fixed_point_iterates() {
        let model = MfgModel::scalar_reference();
        let sol = oracle::exact_nash(&model, &Vector::zeros(1), 1e-14, 1000).unwrap();
        let s = 6.min(sol.iterates.len() - 1);
        let out = solve_mfg(&model, &exact_cfg(s, PolicyUpdate::BestResponse), &mut RngState::new(0)).unwrap();
        for (row, it) in out.trace.rows.iter().zip(&sol.iterates) {
            assert!((row.mu[0] - it[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_actor_run_stays_in_contraction_envelope() {
        let mut models = vec![MfgModel::scalar_reference()];
        models.extend(
            (1u64..200)
                .map(|seed| random_instance(&mut ChaCha8Rng::seed_from_u64(seed), 2, 1, 0.6, 0.1))
                .filter(|m| oracle::contraction_constants(m).is_ok_and(|c| c.l0 < 1.0))
                .take(2),
        );
        assert_eq!(models.len(), 3);
        for (seed, model) in models.into_iter().enumerate() {
            let l0 = oracle::contraction_constants(&model).unwrap().l0;
            let mut cfg = exact_cfg(6, PolicyUpdate::ActorCritic);
            cfg.mu0 = Some(vec![1.0; model.state_dim()]);
            let out = solve_mfg(&model, &cfg, &mut RngState::new(0)).unwrap();
            assert_eq!(out.trace.rows.len(), 7);
            let e0 = out.trace.rows[0].mu_err.unwrap();
            for r in &out.trace.rows {
                assert!(r.mu_err.unwrap() <= l0.powi(r.s as i32) * e0 * (1.0 + 1e-9) + 1e-9, "seed {seed}, s {}", r.s);
            }
            assert!(out.trace.rows.last().unwrap().k_err.unwrap() < 1e-8);
        }
    }

    #[test]
    fn zero_drift_game_stays_at_zero() {
        let mut p = MfgModel::scalar_reference().to_params();
        p.d = Vector::zeros(1);
        let model = MfgModel::new(p).unwrap();
        let out = solve_mfg(&model, &exact_cfg(3, PolicyUpdate::ActorCritic), &mut RngState::new(0)).unwrap();
        assert_eq!(out.mu[0], 0.0);
    }

    #[test]
    fn non_contraction_is_recorded() {
        let mut p = MfgModel::scalar_reference().to_params();
        p.a_bar = Mat::from_element(1, 1, 3.0);
        let model = MfgModel::new(p).unwrap();
        let out = solve_mfg(&model, &exact_cfg(2, PolicyUpdate::BestResponse), &mut RngState::new(0)).unwrap();
        assert!(out.trace.non_contraction.unwrap() >= 1.0);
    }

    #[test]
    fn budgets_grow_geometrically() {
        let cfg = MfgConfig::default();
        let a0 = cfg.actor_at(0);
        let a2 = cfg.actor_at(2);
        assert_eq!(a2.k_critic.t, (a0.k_critic.t as f64 * 2.25).round() as usize);
        assert_eq!(a2.b_critic.t_tilde, (a0.b_critic.t_tilde as f64 * 2.25).round() as usize);
    }

    #[test]
    fn csv_shape() {
        let model = MfgModel::scalar_reference();
        let out = solve_mfg(&model, &exact_cfg(2, PolicyUpdate::BestResponse), &mut RngState::new(0)).unwrap();
        let csv = out.trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "s,mu_0,mu_err,K_err,b_err,J_gap");
        assert_eq!(lines.count(), 3);
    }
}
