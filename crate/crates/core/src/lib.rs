//! Exact and model-free solvers for discrete-time linear-quadratic mean-field
//! games.
//!
//! * [`linalg`]: `svec`/`smat`, symmetric Kronecker products, Lyapunov and
//!   Riccati solvers.
//! * [`model`]: the game, linear-Gaussian policies and a seeded simulator.
//! * [`oracle`]: closed forms for costs, value functions, gradients, the
//!   mean-field operator and the exact Nash pair.
//! * [`critic`]: policy evaluation from trajectories.
//! * [`actor`]: natural actor-critic at a fixed mean-field state.
//! * [`mfg`]: the outer mean-field loop.
//!
//! ```
//! use lqmfg::linalg::Vector;
//! use lqmfg::model::MfgModel;
//! use lqmfg::oracle;
//!
//! let model = MfgModel::scalar_reference();
//! let nash = oracle::exact_nash(&model, &Vector::zeros(1), 1e-12, 1000)?;
//! assert!((nash.mu_star[0] - 1.0 / 23.0).abs() < 1e-10);
//! # Ok::<(), lqmfg::Error>(())
//! ```

pub mod error;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod critic;
pub mod actor;
pub mod mfg;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/exact.md")]
    mod exact {}
    #[doc = include_str!("../../../book/src/critic.md")]
    mod critic {}
    #[doc = include_str!("../../../book/src/actor.md")]
    mod actor {}
    #[doc = include_str!("../../../book/src/mfg.md")]
    mod mfg {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
