//! The game: dynamics, costs, the linear-Gaussian policy class and a seeded
//! simulator of the infinite-population state transition
//!
//! ```text
//! x' = A x + B u + Ā μ + d + ω,    ω ~ N(0, Ψ_ω)
//! u  = −K x + b + σ η,             η ~ N(0, I_k)
//! c  = xᵀQx + uᵀRu + μᵀQ̄μ
//! ```

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, mat_from_rows, mat_to_rows, Mat, Tolerances, Vector};
use crate::oracle;

/// How the oracle turns the exploration scale σ into the covariance it adds
/// to the state noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationCovariance {
    /// `Ψ_ε = σ²BBᵀ + Ψ_ω`, the covariance of `Bση + ω`. Matches the simulator.
    #[default]
    Variance,
    /// `Ψ_ε = σBBᵀ + Ψ_ω`. Kept for auditing; disagrees with the simulator
    /// unless `σ = 1`.
    Literal,
}

/// Raw model parameters, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub a: Mat,
    pub b: Mat,
    pub a_bar: Mat,
    pub d: Vector,
    pub q: Mat,
    pub r: Mat,
    pub q_bar: Mat,
    pub psi_omega: Mat,
    pub sigma: f64,
    pub exploration: ExplorationCovariance,
}

/// A validated linear-quadratic mean-field game.
///
/// Immutable after construction; the Cholesky factor of `Ψ_ω` used for noise
/// sampling is computed once.
#[derive(Debug, Clone)]
pub struct MfgModel {
    p: ModelParams,
    psi_chol: Mat,
    tol: Tolerances,
}

fn check_square(name: &str, m: &Mat, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::InvalidModel(format!(
            "{name} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_sym(name: &str, m: &Mat, tol: f64) -> Result<()> {
    let scale = m.amax().max(1.0);
    if linalg::asymmetry(m) > tol * scale {
        return Err(Error::InvalidModel(format!("{name} is not symmetric")));
    }
    Ok(())
}

fn check_pd(name: &str, m: &Mat, strict: bool) -> Result<()> {
    let lo = linalg::min_eigenvalue(m);
    let ok = if strict { lo > 0.0 } else { lo >= -1e-12 * m.amax().max(1.0) };
    if !ok {
        let kind = if strict { "positive definite" } else { "positive semidefinite" };
        return Err(Error::InvalidModel(format!(
            "{name} must be symmetric {kind} (min eigenvalue {lo:.3e})"
        )));
    }
    Ok(())
}

impl MfgModel {
    pub fn new(p: ModelParams) -> Result<Self> {
        Self::with_tolerances(p, Tolerances::default())
    }

    pub fn with_tolerances(p: ModelParams, tol: Tolerances) -> Result<Self> {
        let m = p.a.nrows();
        let k = p.b.ncols();
        if m == 0 || k == 0 {
            return Err(Error::InvalidModel("state and action dimensions must be positive".into()));
        }
        check_square("A", &p.a, m)?;
        if p.b.nrows() != m {
            return Err(Error::InvalidModel(format!(
                "B must have {m} rows, got {}",
                p.b.nrows()
            )));
        }
        check_square("A_bar", &p.a_bar, m)?;
        if p.d.len() != m {
            return Err(Error::InvalidModel(format!("d must have length {m}, got {}", p.d.len())));
        }
        check_square("Q", &p.q, m)?;
        check_square("R", &p.r, k)?;
        check_square("Q_bar", &p.q_bar, m)?;
        check_square("Psi_omega", &p.psi_omega, m)?;
        let all_finite = [&p.a, &p.b, &p.a_bar, &p.q, &p.r, &p.q_bar, &p.psi_omega]
            .iter()
            .all(|x| x.iter().all(|v| v.is_finite()))
            && p.d.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidModel("entries must be finite".into()));
        }
        if !(p.sigma.is_finite() && p.sigma > 0.0) {
            return Err(Error::InvalidModel(format!("sigma must be positive, got {}", p.sigma)));
        }
        for (name, x) in [("Q", &p.q), ("R", &p.r), ("Q_bar", &p.q_bar), ("Psi_omega", &p.psi_omega)] {
            check_sym(name, x, tol.sym_tol)?;
        }
        check_pd("Q", &p.q, true)?;
        check_pd("R", &p.r, true)?;
        check_pd("Q_bar", &p.q_bar, false)?;
        let psi_chol = Cholesky::new(linalg::symmetrize(&p.psi_omega))
            .ok_or(Error::CholeskyFailure("Psi_omega"))?
            .l();
        let mut p = p;
        p.q = linalg::symmetrize(&p.q);
        p.r = linalg::symmetrize(&p.r);
        p.q_bar = linalg::symmetrize(&p.q_bar);
        p.psi_omega = linalg::symmetrize(&p.psi_omega);
        Ok(Self { p, psi_chol, tol })
    }

    /// The fixed scalar test instance: `A = 0.5, B = 1, Ā = 0.2, d = 0.1,
    /// Q = 1, R = 1, Q̄ = 0.5, Ψ_ω = 0.04, σ = 0.1`.
    pub fn scalar_reference() -> Self {
        let s = |v: f64| Mat::from_element(1, 1, v);
        Self::new(ModelParams {
            a: s(0.5),
            b: s(1.0),
            a_bar: s(0.2),
            d: Vector::from_element(1, 0.1),
            q: s(1.0),
            r: s(1.0),
            q_bar: s(0.5),
            psi_omega: s(0.04),
            sigma: 0.1,
            exploration: ExplorationCovariance::Variance,
        })
        .expect("reference instance is valid")
    }

    pub fn params(&self) -> &ModelParams {
        &self.p
    }

    /// Copy of the parameters, for building a modified instance.
    pub fn to_params(&self) -> ModelParams {
        self.p.clone()
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    pub fn state_dim(&self) -> usize {
        self.p.a.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.p.b.ncols()
    }

    pub fn a(&self) -> &Mat {
        &self.p.a
    }
    pub fn b(&self) -> &Mat {
        &self.p.b
    }
    pub fn a_bar(&self) -> &Mat {
        &self.p.a_bar
    }
    pub fn d(&self) -> &Vector {
        &self.p.d
    }
    pub fn q(&self) -> &Mat {
        &self.p.q
    }
    pub fn r(&self) -> &Mat {
        &self.p.r
    }
    pub fn q_bar(&self) -> &Mat {
        &self.p.q_bar
    }
    pub fn psi_omega(&self) -> &Mat {
        &self.p.psi_omega
    }
    pub fn sigma(&self) -> f64 {
        self.p.sigma
    }
    pub fn exploration(&self) -> ExplorationCovariance {
        self.p.exploration
    }

    /// Lower Cholesky factor of `Ψ_ω`.
    pub fn psi_omega_chol(&self) -> &Mat {
        &self.psi_chol
    }

    /// Effective state-noise covariance under a linear-Gaussian policy.
    pub fn psi_eps(&self) -> Mat {
        let bbt = &self.p.b * self.p.b.transpose();
        let scale = match self.p.exploration {
            ExplorationCovariance::Variance => self.p.sigma * self.p.sigma,
            ExplorationCovariance::Literal => self.p.sigma,
        };
        bbt * scale + &self.p.psi_omega
    }

    /// The affine forcing `Āμ + d` seen by an agent when the population sits at `μ`.
    pub fn drift(&self, mu: &Vector) -> Vector {
        &self.p.a_bar * mu + &self.p.d
    }

    /// Closed-loop matrix `A − BK`.
    pub fn closed_loop(&self, gain: &Mat) -> Mat {
        &self.p.a - &self.p.b * gain
    }

    pub fn check_mu(&self, mu: &Vector) -> Result<()> {
        if mu.len() != self.state_dim() {
            return Err(Error::DimMismatch(format!(
                "mean-field state has length {}, model state dimension is {}",
                mu.len(),
                self.state_dim()
            )));
        }
        Ok(())
    }

    pub fn check_policy(&self, policy: &LinearGaussianPolicy) -> Result<()> {
        let (m, k) = (self.state_dim(), self.action_dim());
        if policy.gain.shape() != (k, m) || policy.intercept.len() != k {
            return Err(Error::DimMismatch(format!(
                "policy has K {:?} and b of length {}, model needs K {k}x{m} and b of length {k}",
                policy.gain.shape(),
                policy.intercept.len()
            )));
        }
        Ok(())
    }

    /// `ρ(A − BK)`, erroring with `Unstable` when it is not below `1 − stab_margin`.
    pub fn check_stable(&self, gain: &Mat) -> Result<f64> {
        let rho = linalg::spectral_radius(&self.closed_loop(gain));
        let limit = 1.0 - self.tol.stab_margin;
        if !(rho < limit) {
            return Err(Error::Unstable { rho, limit });
        }
        Ok(rho)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: ModelDoc =
            serde_json::from_str(s).map_err(|e| Error::InvalidModel(format!("model JSON: {e}")))?;
        doc.try_into()
    }

    pub fn to_json_doc(&self) -> ModelDoc {
        ModelDoc::from(self)
    }
}

/// JSON form of a model. Matrices are row-major nested arrays:
///
/// ```json
/// {"A": [[0.5]], "B": [[1.0]], "A_bar": [[0.2]], "d": [0.1],
///  "Q": [[1.0]], "R": [[1.0]], "Q_bar": [[0.5]], "Psi_omega": [[0.04]],
///  "sigma": 0.1}
/// ```
///
/// An optional `"exploration_covariance"` key takes `"variance"` (default)
/// or `"literal"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "A_bar")]
    pub a_bar: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "Q_bar")]
    pub q_bar: Vec<Vec<f64>>,
    #[serde(rename = "Psi_omega")]
    pub psi_omega: Vec<Vec<f64>>,
    pub sigma: f64,
    #[serde(default, rename = "exploration_covariance")]
    pub exploration: ExplorationCovariance,
}

impl TryFrom<ModelDoc> for MfgModel {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        let conv = |name: &str, rows: &[Vec<f64>]| {
            mat_from_rows(rows).map_err(|_| Error::InvalidModel(format!("{name} has ragged rows")))
        };
        MfgModel::new(ModelParams {
            a: conv("A", &doc.a)?,
            b: conv("B", &doc.b)?,
            a_bar: conv("A_bar", &doc.a_bar)?,
            d: Vector::from_vec(doc.d),
            q: conv("Q", &doc.q)?,
            r: conv("R", &doc.r)?,
            q_bar: conv("Q_bar", &doc.q_bar)?,
            psi_omega: conv("Psi_omega", &doc.psi_omega)?,
            sigma: doc.sigma,
            exploration: doc.exploration,
        })
    }
}

impl From<&MfgModel> for ModelDoc {
    fn from(m: &MfgModel) -> Self {
        Self {
            a: mat_to_rows(m.a()),
            b: mat_to_rows(m.b()),
            a_bar: mat_to_rows(m.a_bar()),
            d: m.d().iter().copied().collect(),
            q: mat_to_rows(m.q()),
            r: mat_to_rows(m.r()),
            q_bar: mat_to_rows(m.q_bar()),
            psi_omega: mat_to_rows(m.psi_omega()),
            sigma: m.sigma(),
            exploration: m.exploration(),
        }
    }
}

/// `u = −Kx + b + σ η`. The exploration scale σ belongs to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianPolicy {
    /// `K`, shape `k × m`.
    pub gain: Mat,
    /// `b`, length `k`.
    pub intercept: Vector,
}

impl LinearGaussianPolicy {
    pub fn new(gain: Mat, intercept: Vector) -> Self {
        Self { gain, intercept }
    }

    /// `K = 0, b = 0` for the given model.
    pub fn zero(model: &MfgModel) -> Self {
        Self {
            gain: Mat::zeros(model.action_dim(), model.state_dim()),
            intercept: Vector::zeros(model.action_dim()),
        }
    }

    /// Mean action `−Kx + b`.
    pub fn mean_action(&self, x: &Vector) -> Vector {
        &self.intercept - &self.gain * x
    }
}

/// One simulated step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: Vector,
    pub u: Vector,
    pub cost: f64,
    pub x_next: Vector,
}

/// A source of independent standard normal draws.
pub trait NoiseSource {
    fn fill_standard_normal(&mut self, out: &mut [f64]);
}

/// Explicitly seeded ChaCha8 stream. Workers derive their seeds as
/// `base + index`.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn for_worker(base_seed: u64, index: u64) -> Self {
        Self::new(base_seed.wrapping_add(index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

impl NoiseSource for RngState {
    fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.rng.sample(StandardNormal);
        }
    }
}

/// Noise source that always returns zero, for noiseless checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill_standard_normal(&mut self, out: &mut [f64]) {
        out.fill(0.0);
    }
}

pub fn cost_of(model: &MfgModel, x: &Vector, u: &Vector, mu: &Vector) -> Result<f64> {
    let (m, k) = (model.state_dim(), model.action_dim());
    if x.len() != m || u.len() != k || mu.len() != m {
        return Err(Error::DimMismatch(format!(
            "cost_of expects x, mu of length {m} and u of length {k}, got {}, {}, {}",
            x.len(),
            mu.len(),
            u.len()
        )));
    }
    Ok(cost_unchecked(model, x, u, mu))
}

pub(crate) fn cost_unchecked(model: &MfgModel, x: &Vector, u: &Vector, mu: &Vector) -> f64 {
    x.dot(&(model.q() * x)) + u.dot(&(model.r() * u)) + mu.dot(&(model.q_bar() * mu))
}

/// Samples one transition. Draws `η` first, then the standard normals behind `ω`.
/// Dimensions are the caller's responsibility (see [`MfgModel::check_policy`]).
pub fn step<N: NoiseSource + ?Sized>(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
    x: &Vector,
    noise: &mut N,
) -> Transition {
    let (m, k) = (model.state_dim(), model.action_dim());
    let mut eta = Vector::zeros(k);
    noise.fill_standard_normal(eta.as_mut_slice());
    let mut xi = Vector::zeros(m);
    noise.fill_standard_normal(xi.as_mut_slice());
    let u = policy.mean_action(x) + eta * model.sigma();
    let omega = model.psi_omega_chol() * xi;
    let x_next = model.a() * x + model.b() * &u + model.drift(mu) + omega;
    let cost = cost_unchecked(model, x, &u, mu);
    Transition {
        x: x.clone(),
        u,
        cost,
        x_next,
    }
}

/// How the first state of a sampled trajectory is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "steps")]
pub enum StartMode {
    /// Run this many steps from `x = 0` and keep the last state.
    BurnIn(usize),
    /// Draw exactly from `N(μ_{K,b}, Φ_K)` using the oracle.
    Stationary,
}

impl Default for StartMode {
    fn default() -> Self {
        StartMode::BurnIn(1000)
    }
}

/// Approximate (burn-in) or exact (oracle) draw from the stationary law of
/// the state under `policy`.
pub fn sample_stationary_start<N: NoiseSource + ?Sized>(
    model: &MfgModel,
    policy: &LinearGaussianPolicy,
    mu: &Vector,
    noise: &mut N,
    mode: StartMode,
) -> Result<Vector> {
    model.check_policy(policy)?;
    model.check_mu(mu)?;
    model.check_stable(&policy.gain)?;
    match mode {
        StartMode::BurnIn(steps) => {
            let mut x = Vector::zeros(model.state_dim());
            for _ in 0..steps {
                x = step(model, policy, mu, &x, noise).x_next;
            }
            Ok(x)
        }
        StartMode::Stationary => {
            let mean = oracle::stationary_mean(model, policy, mu)?;
            let cov = oracle::stationary_cov(model, policy)?;
            let chol = Cholesky::new(cov).ok_or(Error::CholeskyFailure("Phi_K"))?;
            let mut xi = Vector::zeros(model.state_dim());
            noise.fill_standard_normal(xi.as_mut_slice());
            Ok(mean + chol.l() * xi)
        }
    }
}

/// Random instance for experiments: `A`, `B`, `Ā` with i.i.d. Gaussian
/// entries, `A` rescaled to spectral radius `a_radius`, `Ā` to spectral norm
/// `a_bar_norm`; `Q`, `R`, `Ψ_ω` well conditioned SPD.
pub fn random_instance<G: Rng + ?Sized>(
    rng: &mut G,
    m: usize,
    k: usize,
    a_radius: f64,
    a_bar_norm: f64,
) -> MfgModel {
    let mut gauss = |r: usize, c: usize| Mat::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut a = gauss(m, m);
    let rho = linalg::spectral_radius(&a);
    if rho > 0.0 {
        a *= a_radius / rho;
    }
    let b = gauss(m, k);
    let mut a_bar = gauss(m, m);
    let nrm = linalg::norm2(&a_bar);
    if nrm > 0.0 {
        a_bar *= a_bar_norm / nrm;
    }
    let d = Vector::from_column_slice(gauss(m, 1).as_slice()) * 0.5;
    let fq = gauss(m, m);
    let fr = gauss(k, k);
    let fqb = gauss(m, m);
    let fp = gauss(m, m);
    let q = &fq * fq.transpose() / (m as f64) + Mat::identity(m, m);
    let r = &fr * fr.transpose() / (k as f64) + Mat::identity(k, k);
    let q_bar = &fqb * fqb.transpose() / (2.0 * m as f64);
    let psi_omega = (&fp * fp.transpose() / (m as f64) + Mat::identity(m, m)) * 0.05;
    MfgModel::new(ModelParams {
        a,
        b,
        a_bar,
        d,
        q,
        r,
        q_bar,
        psi_omega,
        sigma: 0.1 + rng.random::<f64>() * 0.2,
        exploration: ExplorationCovariance::Variance,
    })
    .expect("random instance is valid by construction")
}
