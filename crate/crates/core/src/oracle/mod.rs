//! Exact closed-form quantities for a fixed linear-Gaussian policy, the
//! feature cross-correlation matrix of the policy-evaluation problem, and the
//! mean-field operator with its contraction constants and fixed point.
//!
//! Every sampled estimator in [`crate::critic`], [`crate::actor`] and
//! [`crate::mfg`] can be checked against the values computed here.

mod nash;
mod policy;
mod theta;

pub use nash::{
    affine_fixed_point, contraction_constants, exact_nash, lambda1, lambda2, lambda_op, ContractionDiagnostics,
    MeanFieldOperator, NashSolution,
};
pub use policy::{
    bellman_p, convexity_constants, eval_q, eval_v, grad_b_j2, grad_k_j1, j1, j1_gap, j2,
    j2_at_optimal_b, j2_hessian_fd, optimal_b, policy_quantities, q_params, stationary_cov,
    stationary_mean, upsilon, ConvexityDiagnostics, PolicyQuantities, QParams,
};
pub use theta::{
    expected_cost_feature, expected_feature, theta_closed_form, z_chain, ThetaClosedForm, ZChain,
};
