use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, solve_checked, solve_riccati_with, solve_vec, Mat, RiccatiSolution, Vector};
use crate::model::{LinearGaussianPolicy, MfgModel};

use super::policy::{drift_system, optimal_b, stationary_mean};

/// The best-response map `Λ₁`, the mean-field propagation `Λ₂` and their
/// composition `Λ`, with the Riccati solution cached (the optimal gain does
/// not depend on `μ`).
#[derive(Debug, Clone)]
pub struct MeanFieldOperator<'a> {
    model: &'a MfgModel,
    riccati: RiccatiSolution,
}

impl<'a> MeanFieldOperator<'a> {
    pub fn new(model: &'a MfgModel) -> Result<Self> {
        let riccati = solve_riccati_with(model.a(), model.b(), model.q(), model.r(), model.tolerances())?;
        Ok(Self { model, riccati })
    }

    pub fn model(&self) -> &MfgModel {
        self.model
    }

    pub fn riccati(&self) -> &RiccatiSolution {
        &self.riccati
    }

    pub fn k_star(&self) -> &Mat {
        &self.riccati.gain
    }

    /// `Λ₁(μ) = π*_μ = (K*, b^{K*}(μ))`.
    pub fn lambda1(&self, mu: &Vector) -> Result<LinearGaussianPolicy> {
        let b = optimal_b(self.model, &self.riccati.gain, mu)?;
        Ok(LinearGaussianPolicy::new(self.riccati.gain.clone(), b))
    }

    /// `Λ₂(μ, π) = (I − A + BK_π)⁻¹(Bb_π + Āμ + d)`.
    pub fn lambda2(&self, mu: &Vector, policy: &LinearGaussianPolicy) -> Result<Vector> {
        stationary_mean(self.model, policy, mu)
    }

    /// `Λ(μ) = Λ₂(μ, Λ₁(μ))`.
    pub fn apply(&self, mu: &Vector) -> Result<Vector> {
        let pi = self.lambda1(mu)?;
        self.lambda2(mu, &pi)
    }
}

pub fn lambda1(model: &MfgModel, mu: &Vector) -> Result<LinearGaussianPolicy> {
    MeanFieldOperator::new(model)?.lambda1(mu)
}

pub fn lambda2(model: &MfgModel, mu: &Vector, policy: &LinearGaussianPolicy) -> Result<Vector> {
    stationary_mean(model, policy, mu)
}

pub fn lambda_op(model: &MfgModel, mu: &Vector) -> Result<Vector> {
    MeanFieldOperator::new(model)?.apply(mu)
}

/// Lipschitz constants of the mean-field operator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionDiagnostics {
    #[serde(skip)]
    pub k_star: Mat,
    /// `ρ(A − BK*)`.
    pub rho_star: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    /// `L₁L₃ + L₂`; `Λ` is a contraction when this is below one.
    pub l0: f64,
}

fn constants_from(model: &MfgModel, k_star: &Mat) -> Result<ContractionDiagnostics> {
    let (inner, qinv_iat, rinv_bt) = drift_system(model)?;
    let first = solve_checked(&inner, model.a_bar(), "(I-A)Q⁻¹(I-A)ᵀ + BR⁻¹Bᵀ")?;
    let second = k_star * qinv_iat - rinv_bt;
    let l1 = linalg::norm2(&first) * linalg::norm2(&second);
    let rho_star = linalg::spectral_radius(&model.closed_loop(k_star));
    let l2 = linalg::norm2(model.a_bar()) / (1.0 - rho_star);
    let l3 = linalg::norm2(model.b()) / (1.0 - rho_star);
    Ok(ContractionDiagnostics {
        k_star: k_star.clone(),
        rho_star,
        l1,
        l2,
        l3,
        l0: l1 * l3 + l2,
    })
}

pub fn contraction_constants(model: &MfgModel) -> Result<ContractionDiagnostics> {
    let op = MeanFieldOperator::new(model)?;
    constants_from(model, op.k_star())
}

impl MeanFieldOperator<'_> {
    pub fn contraction_constants(&self) -> Result<ContractionDiagnostics> {
        constants_from(self.model, self.k_star())
    }
}

/// The Nash equilibrium pair found by Banach iteration on `Λ`.
#[derive(Debug, Clone)]
pub struct NashSolution {
    pub mu_star: Vector,
    pub policy: LinearGaussianPolicy,
    /// `μ₀, Λ(μ₀), Λ²(μ₀), …`, ending at `mu_star`.
    pub iterates: Vec<Vector>,
    /// `‖Λ(μ*) − μ*‖₂`.
    pub fixedpoint_residual: f64,
    pub riccati_residual: f64,
    pub diagnostics: ContractionDiagnostics,
}

/// Iterates `μ ← Λ(μ)` until `‖Λ(μ) − μ‖₂ ≤ tol`. Refuses to start when
/// `L₀ ≥ 1`.
pub fn exact_nash(model: &MfgModel, mu0: &Vector, tol: f64, max_iters: usize) -> Result<NashSolution> {
    model.check_mu(mu0)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    let op = MeanFieldOperator::new(model)?;
    let diagnostics = op.contraction_constants()?;
    if !(diagnostics.l0 < 1.0) {
        return Err(Error::NotContraction { l0: diagnostics.l0 });
    }
    let mut mu = mu0.clone();
    let mut iterates = vec![mu.clone()];
    for iter in 0..max_iters {
        let next = op.apply(&mu)?;
        let residual = (&next - &mu).norm();
        if residual <= tol {
            let policy = op.lambda1(&mu)?;
            return Ok(NashSolution {
                mu_star: mu,
                policy,
                iterates,
                fixedpoint_residual: residual,
                riccati_residual: op.riccati().residual,
                diagnostics,
            });
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("mean-field fixed-point iteration"));
        }
        mu = next;
        iterates.push(mu.clone());
        log::trace!("fixed-point iteration {iter}: residual {residual:.3e}");
    }
    let residual = (op.apply(&mu)? - &mu).norm();
    Err(Error::NoConvergence {
        what: "mean-field fixed-point iteration",
        iterations: max_iters,
        residual,
    })
}

/// Solves the linear fixed-point equation `μ = Λ(μ)` directly; `Λ` is affine.
pub fn affine_fixed_point(op: &MeanFieldOperator<'_>) -> Result<Vector> {
    let m = op.model().state_dim();
    let c = op.apply(&Vector::zeros(m))?;
    let mut slope = Mat::zeros(m, m);
    for j in 0..m {
        let e = Vector::from_fn(m, |i, _| if i == j { 1.0 } else { 0.0 });
        slope.set_column(j, &(op.apply(&e)? - &c));
    }
    solve_vec(&(Mat::identity(m, m) - slope), &c, "I - dΛ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_instance, ModelParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decoupled_game_has_zero_constants() {
        let mut p: ModelParams = MfgModel::scalar_reference().to_params();
        p.a_bar = Mat::zeros(1, 1);
        let model = MfgModel::new(p).unwrap();
        let c = contraction_constants(&model).unwrap();
        assert_eq!(c.l1, 0.0);
        assert_eq!(c.l2, 0.0);
        assert_eq!(c.l0, 0.0);
    }

    #[test]
    fn scalar_reference_is_contraction() {
        let model = MfgModel::scalar_reference();
        let c = contraction_constants(&model).unwrap();
        assert!(c.l0 < 1.0, "L0 = {}", c.l0);
        assert_eq!(c.l0, c.l1 * c.l3 + c.l2);
    }

    #[test]
    fn scalar_slope_matches_difference_quotient() {
        let model = MfgModel::scalar_reference();
        let op = MeanFieldOperator::new(&model).unwrap();
        let at = |x: f64| op.apply(&Vector::from_element(1, x)).unwrap()[0];
        let slope = at(1.0) - at(0.0);
        for (x, h) in [(0.3, 1e-3), (-2.0, 0.5), (5.0, 1e-2)] {
            let dq = (at(x + h) - at(x)) / h;
            assert!((dq - slope).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_drift_fixed_point() {
        let mut p = MfgModel::scalar_reference().to_params();
        p.d = Vector::zeros(1);
        let model = MfgModel::new(p).unwrap();
        let sol = exact_nash(&model, &Vector::zeros(1), 1e-12, 100).unwrap();
        assert_eq!(sol.mu_star[0], 0.0);
        assert_eq!(sol.policy.intercept[0], 0.0);
    }

    #[test]
    fn scalar_nash_matches_affine_solution() {
        let model = MfgModel::scalar_reference();
        let op = MeanFieldOperator::new(&model).unwrap();
        let direct = affine_fixed_point(&op).unwrap();
        let sol = exact_nash(&model, &Vector::zeros(1), 1e-13, 1000).unwrap();
        assert!((sol.mu_star[0] - direct[0]).abs() < 1e-10);
        assert!(sol.fixedpoint_residual < 1e-10);
        let l0 = sol.diagnostics.l0;
        let e0 = (&sol.iterates[0] - &direct).norm();
        for (s, it) in sol.iterates.iter().enumerate() {
            let err = (it - &direct).norm();
            assert!(err <= l0.powi(s as i32) * e0 * (1.0 + 1e-9) + 1e-15);
        }
    }

    #[test]
    fn lipschitz_ratio_below_l0() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = random_instance(&mut rng, 3, 2, 0.7, 0.1);
        let op = MeanFieldOperator::new(&model).unwrap();
        let l0 = op.contraction_constants().unwrap().l0;
        for _ in 0..100 {
            let a = Vector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let b = Vector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let ratio = (op.apply(&a).unwrap() - op.apply(&b).unwrap()).norm() / (&a - &b).norm();
            assert!(ratio <= l0 + 1e-9);
        }
    }

    #[test]
    fn non_contraction_rejected() {
        let mut p = MfgModel::scalar_reference().to_params();
        p.a_bar = Mat::from_element(1, 1, 3.0);
        let model = MfgModel::new(p).unwrap();
        assert!(matches!(
            exact_nash(&model, &Vector::zeros(1), 1e-10, 10),
            Err(Error::NotContraction { .. })
        ));
    }
}
