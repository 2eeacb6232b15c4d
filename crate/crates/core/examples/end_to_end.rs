//! Model-free solve of the scalar reference game compared with the exact
//! Nash pair.
//!
//! `cargo run --release --example end_to_end`

use lqmfg::actor::ActorConfig;
use lqmfg::critic::{CriticConfig, CriticKind, ProjectionSpec};
use lqmfg::mfg::{solve_mfg, MfgConfig};
use lqmfg::model::{MfgModel, RngState};
use lqmfg::oracle::{self, MeanFieldOperator};

fn main() -> lqmfg::Result<()> {
    let model = MfgModel::scalar_reference();
    let op = MeanFieldOperator::new(&model)?;
    let mu_star = oracle::affine_fixed_point(&op)?;
    let nash = op.lambda1(&mu_star)?;
    println!(
        "exact: mu* = {:.5}, K* = {:.5}, b* = {:.5}, L0 = {:.3}",
        mu_star[0],
        nash.gain[(0, 0)],
        nash.intercept[0],
        op.contraction_constants()?.l0
    );

    let critic = CriticConfig {
        t: 40_000,
        t_tilde: 5_000,
        gamma0: 5.0,
        projection: ProjectionSpec::Manual {
            zeta1_max: 10.0,
            zeta2_radius: 10.0,
            xi1_max: 10.0,
            xi2_radius: 10.0,
        },
        ..CriticConfig::default()
    };
    let cfg = MfgConfig {
        s: 8,
        actor: ActorConfig {
            n: 1,
            h: 1,
            gamma: Some(0.2),
            gamma_b: Some(0.4),
            critic: CriticKind::Td0,
            k_critic: critic.clone(),
            b_critic: critic,
            ..ActorConfig::default()
        },
        oracle_diagnostics: true,
        ..MfgConfig::default()
    };
    let out = solve_mfg(&model, &cfg, &mut RngState::new(1))?;
    print!("{}", out.trace.to_csv());
    println!("simulator steps: {}", out.trace.simulator_steps);
    Ok(())
}
