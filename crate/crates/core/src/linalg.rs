//! Dense small-matrix primitives: symmetric vectorisation, the symmetric
//! Kronecker product, spectral radius, discrete Lyapunov and Riccati solvers,
//! and Euclidean ball projection.
//!
//! Everything here works on [`nalgebra::DMatrix`]; the problems this crate
//! targets have state and action dimensions in the single digits, so the
//! vectorised solvers (which square the dimension) are cheap.
//!
//! # Symmetric vectorisation
//!
//! `svec` reads the upper triangle of a symmetric `n×n` matrix row by row and
//! scales every off-diagonal entry by `√2`, which makes it an isometry:
//! `⟨svec(M), svec(N)⟩ = tr(MN)`. `smat` inverts it and `sym_kron` builds the
//! operator `(G ⊗ₛ H) svec(M) = ½ svec(HMGᵀ + GMHᵀ)` in the same ordering.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Numerical tolerances used by the solvers. The defaults are the tested
/// contract; every field can be overridden.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Allowed asymmetry `‖M − Mᵀ‖_max`, relative to `max(1, ‖M‖_max)`.
    pub sym_tol: f64,
    /// A matrix counts as stable when `ρ < 1 − stab_margin`.
    pub stab_margin: f64,
    /// Lyapunov residual bound, relative to `1 + ‖X‖_F`.
    pub lyap_tol: f64,
    /// Riccati residual bound, relative to `1 + ‖X‖_F`.
    pub ric_tol: f64,
    pub max_ric_iters: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            sym_tol: 1e-10,
            stab_margin: 1e-8,
            lyap_tol: 1e-12,
            ric_tol: 1e-10,
            max_ric_iters: 1_000_000,
        }
    }
}

/// A symmetric matrix packed by [`svec`].
#[derive(Debug, Clone, PartialEq)]
pub struct SymVec(Vector);

impl SymVec {
    pub fn from_vector(v: Vector) -> Result<Self> {
        tri_dim(v.len()).ok_or(Error::BadLength(v.len()))?;
        Ok(Self(v))
    }

    /// Side length `n` of the matrix this vector packs.
    pub fn dim(&self) -> usize {
        tri_dim(self.0.len()).expect("length checked on construction")
    }

    pub fn as_vector(&self) -> &Vector {
        &self.0
    }

    pub fn into_vector(self) -> Vector {
        self.0
    }

    pub fn to_matrix(&self) -> Mat {
        unpack(self.0.as_slice(), self.dim())
    }
}

/// `n(n+1)/2`.
pub fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Inverse of [`tri_len`]; `None` when `len` is not a positive triangular number.
pub fn tri_dim(len: usize) -> Option<usize> {
    let n = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (n >= 1 && tri_len(n) == len).then_some(n)
}

fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest entrywise asymmetry `|M_ij − M_ji|`.
pub fn asymmetry(m: &Mat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn svec(m: &Mat) -> Result<SymVec> {
    svec_with_tol(m, Tolerances::default().sym_tol)
}

pub fn svec_with_tol(m: &Mat, sym_tol: f64) -> Result<SymVec> {
    if !m.is_square() {
        return Err(Error::DimMismatch(format!(
            "svec needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let tol = sym_tol * max_abs(m).max(1.0);
    let asym = asymmetry(m);
    if asym > tol {
        return Err(Error::NotSymmetric {
            asymmetry: asym,
            tol,
        });
    }
    Ok(SymVec(pack(m)))
}

/// Packs the upper triangle without checking symmetry. Callers guarantee `m`
/// is symmetric (outer products, congruences).
pub(crate) fn pack(m: &Mat) -> Vector {
    let n = m.nrows();
    let mut out = Vector::zeros(tri_len(n));
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            out[idx] = if i == j { m[(i, j)] } else { SQRT_2 * m[(i, j)] };
            idx += 1;
        }
    }
    out
}

pub(crate) fn unpack(v: &[f64], n: usize) -> Mat {
    let mut m = Mat::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            if i == j {
                m[(i, i)] = v[idx];
            } else {
                let x = v[idx] / SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            idx += 1;
        }
    }
    m
}

pub fn smat(v: &[f64]) -> Result<Mat> {
    let n = tri_dim(v.len()).ok_or(Error::BadLength(v.len()))?;
    Ok(unpack(v, n))
}

/// Symmetric Kronecker product `G ⊗ₛ H` as a matrix on svec-space, built
/// column by column from the defining identity applied to the svec basis.
pub fn sym_kron(g: &Mat, h: &Mat) -> Result<Mat> {
    if !g.is_square() || g.shape() != h.shape() {
        return Err(Error::DimMismatch(format!(
            "sym_kron needs square operands of equal size, got {:?} and {:?}",
            g.shape(),
            h.shape()
        )));
    }
    let n = g.nrows();
    let len = tri_len(n);
    let mut out = Mat::zeros(len, len);
    let mut basis = vec![0.0; len];
    for col in 0..len {
        basis[col] = 1.0;
        let s = unpack(&basis, n);
        basis[col] = 0.0;
        let image = (h * &s * g.transpose() + g * &s * h.transpose()) * 0.5;
        out.set_column(col, &pack(&image));
    }
    Ok(out)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat) -> f64 {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    match m.nrows() {
        0 => 0.0,
        1 => m[(0, 0)].abs(),
        _ => m
            .clone()
            .complex_eigenvalues()
            .iter()
            .fold(0.0_f64, |acc, z| acc.max(z.norm())),
    }
}

/// Spectral norm (largest singular value).
pub fn norm2(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

pub fn sigma_min(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().min()
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Principal square root of a symmetric PSD matrix.
pub fn sym_sqrt(m: &Mat) -> Mat {
    let eig = symmetrize(m).symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// Condition number `σ_max / σ_min`.
pub fn condition_number(m: &Mat) -> f64 {
    norm2(m) / sigma_min(m)
}

/// Solves `a · x = rhs` by LU and rejects the answer when the residual exceeds
/// `1e-8 · ‖rhs‖` (or the factorisation is singular).
pub fn solve_checked(a: &Mat, rhs: &Mat, what: &'static str) -> Result<Mat> {
    if !a.is_square() || a.nrows() != rhs.nrows() {
        return Err(Error::DimMismatch(format!(
            "{what}: cannot solve {:?} system with right-hand side {:?}",
            a.shape(),
            rhs.shape()
        )));
    }
    let x = a.clone().lu().solve(rhs).ok_or(Error::SingularSolve(what))?;
    let residual = (a * &x - rhs).norm();
    if !residual.is_finite() || residual > 1e-8 * rhs.norm().max(f64::MIN_POSITIVE) && residual > 1e-300 {
        return Err(Error::SingularSolve(what));
    }
    Ok(x)
}

pub fn solve_vec(a: &Mat, rhs: &Vector, what: &'static str) -> Result<Vector> {
    let x = solve_checked(a, &Mat::from_column_slice(rhs.len(), 1, rhs.as_slice()), what)?;
    Ok(Vector::from_column_slice(x.as_slice()))
}

pub fn inverse_checked(a: &Mat, what: &'static str) -> Result<Mat> {
    solve_checked(a, &Mat::identity(a.nrows(), a.ncols()), what)
}

fn check_stable(d: &Mat, tol: &Tolerances) -> Result<f64> {
    let rho = spectral_radius(d);
    let limit = 1.0 - tol.stab_margin;
    if !(rho < limit) {
        return Err(Error::Unstable { rho, limit });
    }
    Ok(rho)
}

/// `‖X − D X Dᵀ − S‖_F`.
pub fn lyapunov_residual(d: &Mat, s: &Mat, x: &Mat) -> f64 {
    (x - d * x * d.transpose() - s).norm()
}

pub fn solve_lyapunov(d: &Mat, s: &Mat) -> Result<Mat> {
    solve_lyapunov_with(d, s, &Tolerances::default())
}

/// Solves the discrete Lyapunov equation `X = D X Dᵀ + S` for symmetric `S`
/// through the svec-space system `(I − D ⊗ₛ D) svec(X) = svec(S)`, with
/// iterative refinement until the residual meets `lyap_tol`.
pub fn solve_lyapunov_with(d: &Mat, s: &Mat, tol: &Tolerances) -> Result<Mat> {
    if !d.is_square() || d.shape() != s.shape() {
        return Err(Error::DimMismatch(format!(
            "Lyapunov equation with D {:?} and S {:?}",
            d.shape(),
            s.shape()
        )));
    }
    check_stable(d, tol)?;
    let s_vec = svec_with_tol(s, tol.sym_tol)?.into_vector();
    let n = d.nrows();
    let len = tri_len(n);
    let op = Mat::identity(len, len) - sym_kron(d, d)?;
    let lu = op.clone().lu();
    let mut x_vec = lu.solve(&s_vec).ok_or(Error::SingularSolve("I - D (x)s D"))?;
    let mut x = unpack(x_vec.as_slice(), n);
    for _ in 0..4 {
        let residual = lyapunov_residual(d, s, &x);
        if residual <= tol.lyap_tol * (1.0 + x.norm()) {
            return Ok(x);
        }
        let r_vec = &s_vec - &op * &x_vec;
        let correction = lu.solve(&r_vec).ok_or(Error::SingularSolve("I - D (x)s D"))?;
        x_vec += correction;
        x = unpack(x_vec.as_slice(), n);
    }
    let residual = lyapunov_residual(d, s, &x);
    if residual <= tol.lyap_tol * (1.0 + x.norm()) {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            what: "Lyapunov refinement",
            iterations: 4,
            residual,
        })
    }
}

/// Solution of the discrete algebraic Riccati equation together with the
/// induced optimal gain.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub x: Mat,
    /// `K* = (BᵀXB + R)⁻¹ BᵀXA`, for the policy convention `u = −Kx`.
    pub gain: Mat,
    pub iterations: usize,
    pub residual: f64,
}

fn riccati_map(a: &Mat, b: &Mat, q: &Mat, r: &Mat, x: &Mat) -> Result<Mat> {
    let btx = b.transpose() * x;
    let gram = &btx * b + r;
    let solved = solve_checked(&gram, &(&btx * a), "BᵀXB + R")?;
    Ok(symmetrize(
        &(a.transpose() * x * a + q - a.transpose() * x * b * solved),
    ))
}

/// `‖X − (AᵀXA + Q − AᵀXB(BᵀXB+R)⁻¹BᵀXA)‖_F`.
pub fn riccati_residual(a: &Mat, b: &Mat, q: &Mat, r: &Mat, x: &Mat) -> f64 {
    match riccati_map(a, b, q, r, x) {
        Ok(fx) => (x - fx).norm(),
        Err(_) => f64::INFINITY,
    }
}

pub fn solve_riccati(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<RiccatiSolution> {
    solve_riccati_with(a, b, q, r, &Tolerances::default())
}

/// Value iteration `X ← AᵀXA + Q − AᵀXB(BᵀXB+R)⁻¹BᵀXA` from `X₀ = Q`.
///
/// From `X₀ = Q` the iterates increase monotonically to the stabilising
/// solution whenever it exists, so no damping is required.
pub fn solve_riccati_with(
    a: &Mat,
    b: &Mat,
    q: &Mat,
    r: &Mat,
    tol: &Tolerances,
) -> Result<RiccatiSolution> {
    let m = a.nrows();
    if !a.is_square() || b.nrows() != m || q.shape() != (m, m) || r.shape() != (b.ncols(), b.ncols())
    {
        return Err(Error::DimMismatch(format!(
            "Riccati equation with A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    let mut x = symmetrize(q);
    let mut residual = f64::INFINITY;
    for iter in 1..=tol.max_ric_iters {
        let next = riccati_map(a, b, q, r, &x)?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NoConvergence {
                what: "Riccati iteration",
                iterations: iter,
                residual: f64::INFINITY,
            });
        }
        residual = (&next - &x).norm();
        x = next;
        // The step size bounds the residual of the new iterate up to the
        // contraction factor, so stop a decade below the contract.
        let scale = 1.0 + x.norm();
        if !scale.is_finite() {
            break;
        }
        if residual <= 0.1 * tol.ric_tol * scale {
            let residual = riccati_residual(a, b, q, r, &x);
            let btx = b.transpose() * &x;
            let gain = solve_checked(&(&btx * b + r), &(&btx * a), "BᵀXB + R")?;
            let stable = spectral_radius(&(a - b * &gain)) < 1.0 - tol.stab_margin;
            if !(residual <= tol.ric_tol * scale && stable) {
                return Err(Error::NoConvergence {
                    what: "Riccati iteration",
                    iterations: iter,
                    residual,
                });
            }
            return Ok(RiccatiSolution {
                x,
                gain,
                iterations: iter,
                residual,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "Riccati iteration",
        iterations: tol.max_ric_iters,
        residual,
    })
}

/// Euclidean projection of `v` onto the closed ball `‖· − center‖₂ ≤ radius`.
pub fn project_ball(v: &Vector, center: &Vector, radius: f64) -> Vector {
    let offset = v - center;
    let dist = offset.norm();
    if dist <= radius {
        v.clone()
    } else if radius <= 0.0 {
        center.clone()
    } else {
        center + offset * (radius / dist)
    }
}

/// Row-major nested vectors to a matrix; rows must have equal length.
pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimMismatch("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}
