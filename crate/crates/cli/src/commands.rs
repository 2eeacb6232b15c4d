use std::fmt::Write as _;
use std::path::Path;

use lqmfg::actor::{self, ActorConfig};
use lqmfg::critic::{self, CriticKind};
use lqmfg::linalg::{mat_to_rows, Vector};
use lqmfg::mfg::{self, MeanUpdate};
use lqmfg::model::RngState;
use lqmfg::oracle::{self, MeanFieldOperator};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::Loaded;
use crate::output::{quantile, with_provenance, write_atomic, write_json};
use crate::{Failure, Flags};

fn first_error<T>(results: Vec<Result<T, Failure>>) -> Result<Vec<T>, Failure> {
    results.into_iter().collect()
}

pub fn solve_exact(run: &Loaded, hash: &str, out: &Path) -> Result<(), Failure> {
    let model = &run.model;
    let sec = &run.config.exact;
    let mu0 = match &sec.mu0 {
        Some(v) => Vector::from_vec(v.clone()),
        None => Vector::zeros(model.state_dim()),
    };
    let sol = oracle::exact_nash(model, &mu0, sec.tol, sec.max_iters)?;
    let d = &sol.diagnostics;
    let doc = json!({
        "config_sha256": hash,
        "seeds": run.seeds,
        "mu_star": sol.mu_star.as_slice(),
        "K_star": mat_to_rows(&sol.policy.gain),
        "b_star": sol.policy.intercept.as_slice(),
        "L0": d.l0,
        "L1": d.l1,
        "L2": d.l2,
        "L3": d.l3,
        "rho_star": d.rho_star,
        "riccati_residual": sol.riccati_residual,
        "fixedpoint_residual": sol.fixedpoint_residual,
        "iterations": sol.iterates.len() - 1,
    });
    write_json(out, "nash.json", &doc)?;
    log::info!("mu* = {:?}, L0 = {:.4}", sol.mu_star.as_slice(), d.l0);
    Ok(())
}

struct BenchRow {
    seed: u64,
    t: usize,
    t_tilde: usize,
    upsilon_err: f64,
    q_err: f64,
    mu_err: f64,
    j_err: f64,
}

pub fn eval_critic(run: &Loaded, flags: &Flags, hash: &str, out: &Path) -> Result<(), Failure> {
    let model = &run.model;
    let sec = &run.config.critic;
    let kind = if flags.exact_critic { CriticKind::Exact } else { sec.kind };
    if sec.t_sweep.is_empty() {
        return Err(Failure::config("critic.T_sweep is empty"));
    }
    let (mu, policy) = sec.at.resolve(model)?;
    model.check_stable(&policy.gain)?;
    let pq = oracle::policy_quantities(model, &policy, &mu)?;
    let qp = oracle::q_params(model, &policy, &mu)?;
    let jobs: Vec<(u64, usize)> = run
        .seeds
        .iter()
        .flat_map(|&s| sec.t_sweep.iter().map(move |&t| (s, t)))
        .collect();
    let results: Vec<Result<BenchRow, Failure>> = jobs
        .par_iter()
        .map(|&(seed, t)| {
            let cfg = lqmfg::critic::CriticConfig { t, ..sec.settings.clone() };
            let est = critic::evaluate(kind, model, &policy, &mu, &cfg, &mut RngState::new(seed))?;
            Ok(BenchRow {
                seed,
                t,
                t_tilde: cfg.t_tilde,
                upsilon_err: (&est.upsilon_hat - &qp.upsilon).norm() / qp.upsilon.norm(),
                q_err: (&est.q_hat - &qp.q).norm(),
                mu_err: (&est.mu_hat - &pq.mu_kb).norm(),
                j_err: (est.j_hat - pq.j).abs(),
            })
        })
        .collect();
    let rows = first_error(results)?;
    let kind_name = serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    let mut body = String::from("seed,kind,T,T_tilde,Upsilon_err,q_err,mu_err,J_err\n");
    for r in &rows {
        let _ = writeln!(
            body,
            "{},{kind_name},{},{},{:e},{:e},{:e},{:e}",
            r.seed, r.t, r.t_tilde, r.upsilon_err, r.q_err, r.mu_err, r.j_err
        );
    }
    let seeds = join(&run.seeds);
    write_atomic(out, "critic_bench.csv", with_provenance(hash, &seeds, &body).as_bytes())
}

fn join(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

#[derive(Serialize)]
struct ActorSeedSummary {
    seed: u64,
    #[serde(rename = "K")]
    k: Vec<Vec<f64>>,
    b: Vec<f64>,
    mu_hat: Vec<f64>,
    #[serde(rename = "K_err")]
    k_err: f64,
    b_err: f64,
    simulator_steps: u64,
}

pub fn run_actor(run: &Loaded, flags: &Flags, hash: &str, out: &Path) -> Result<(), Failure> {
    let model = &run.model;
    let sec = &run.config.actor;
    let cfg = ActorConfig {
        critic: if flags.exact_critic { CriticKind::Exact } else { sec.settings.critic },
        ..sec.settings.clone()
    };
    let (mu, policy0) = sec.at.resolve(model)?;
    let op = MeanFieldOperator::new(model)?;
    let results: Vec<Result<ActorSeedSummary, Failure>> = run
        .seeds
        .par_iter()
        .map(|&seed| {
            let res = actor::natural_actor_critic(model, &mu, &policy0, &cfg, &mut RngState::new(seed))?;
            let csv = with_provenance(hash, &seed.to_string(), &res.trace.to_csv());
            write_atomic(out, &format!("actor_seed{seed}.csv"), csv.as_bytes())?;
            let b_opt = oracle::optimal_b(model, &res.policy.gain, &mu)?;
            Ok(ActorSeedSummary {
                seed,
                k: mat_to_rows(&res.policy.gain),
                b: res.policy.intercept.iter().copied().collect(),
                mu_hat: res.mu_hat.iter().copied().collect(),
                k_err: (&res.policy.gain - op.k_star()).norm(),
                b_err: (&res.policy.intercept - b_opt).norm(),
                simulator_steps: res.simulator_steps,
            })
        })
        .collect();
    let per_seed = first_error(results)?;
    let doc = json!({ "config_sha256": hash, "seeds": run.seeds, "runs": per_seed });
    write_json(out, "actor_summary.json", &doc)
}

/// A seed and its mean-field iterates.
type SeedMeans = (u64, Vec<Vec<f64>>);

#[derive(Serialize)]
struct Band {
    s: usize,
    median: f64,
    q10: f64,
    q90: f64,
    min: f64,
    max: f64,
}

pub fn run_mfg(run: &Loaded, flags: &Flags, hash: &str, out: &Path) -> Result<(), Failure> {
    let model = &run.model;
    let mut cfg = run.config.mfg.clone();
    if flags.exact_critic {
        cfg.actor.critic = CriticKind::Exact;
    }
    if flags.exact_mean {
        cfg.mean_update = MeanUpdate::Exact;
    }
    let op = MeanFieldOperator::new(model)?;
    let l0 = op.contraction_constants()?.l0;
    let mu_star = oracle::affine_fixed_point(&op).ok();
    let results: Vec<Result<SeedMeans, Failure>> = run
        .seeds
        .par_iter()
        .map(|&seed| {
            let res = mfg::solve_mfg(model, &cfg, &mut RngState::new(seed))?;
            let csv = with_provenance(hash, &seed.to_string(), &res.trace.to_csv());
            write_atomic(out, &format!("mfg_seed{seed}.csv"), csv.as_bytes())?;
            Ok((seed, res.trace.rows.into_iter().map(|r| r.mu).collect()))
        })
        .collect();
    let per_seed = first_error(results)?;
    let bands: Option<Vec<Band>> = mu_star.as_ref().map(|star| {
        (0..=cfg.s)
            .map(|s| {
                let mut errs: Vec<f64> = per_seed
                    .iter()
                    .map(|(_, mus)| (Vector::from_vec(mus[s].clone()) - star).norm())
                    .collect();
                errs.sort_by(f64::total_cmp);
                Band {
                    s,
                    median: quantile(&errs, 0.5),
                    q10: quantile(&errs, 0.1),
                    q90: quantile(&errs, 0.9),
                    min: errs[0],
                    max: errs[errs.len() - 1],
                }
            })
            .collect()
    });
    let finals: Vec<_> = per_seed
        .iter()
        .map(|(seed, mus)| json!({ "seed": seed, "mu_S": mus.last() }))
        .collect();
    let doc = json!({
        "config_sha256": hash,
        "seeds": run.seeds,
        "L0": l0,
        "mu_star": mu_star.as_ref().map(|v| v.as_slice().to_vec()),
        "simulator_steps_per_seed": cfg.simulator_steps(),
        "mu_err": bands,
        "final": finals,
    });
    write_json(out, "summary.json", &doc)
}
