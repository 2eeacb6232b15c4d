use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, project_ball, Mat, Vector};
use crate::model::MfgModel;

/// How the projection radii are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ProjectionSpec {
    /// Radii from the closed-form bounds, driven by an upper bound `j0` on
    /// the cost of the initial policy and an absolute constant `c` in the
    /// dual radius.
    Formula { j0: f64, c: f64 },
    /// Radii supplied directly.
    Manual {
        zeta1_max: f64,
        zeta2_radius: f64,
        xi1_max: f64,
        xi2_radius: f64,
    },
}

impl Default for ProjectionSpec {
    fn default() -> Self {
        ProjectionSpec::Manual {
            zeta1_max: 100.0,
            zeta2_radius: 100.0,
            xi1_max: 100.0,
            xi2_radius: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    Formula,
    Manual,
}

/// `V_ζ = [0, zeta1_max] × B(0, zeta2_radius)` and
/// `V_ξ = [−xi1_max, xi1_max] × B(0, xi2_radius)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSets {
    pub zeta1_max: f64,
    pub zeta2_radius: f64,
    pub xi1_max: f64,
    pub xi2_radius: f64,
    pub mode: ProjectionMode,
}

/// The constants `M_{ζ,1}`, `M_{ζ,2}`, `M_ξ` behind the formula radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusConstants {
    pub m_zeta1: f64,
    pub m_zeta2: f64,
    pub m_xi: f64,
}

pub fn radius_constants(model: &MfgModel, j0: f64, c: f64) -> RadiusConstants {
    let (a, b, q, r) = (model.a(), model.b(), model.q(), model.r());
    let n2 = linalg::norm2;
    let s_psi = linalg::sigma_min(model.psi_omega());
    let s_q = linalg::sigma_min(q);
    let s_r = linalg::sigma_min(r);
    let ab2 = n2(a) + n2(b);
    let dim_root = (model.state_dim() as f64).sqrt();
    let m_zeta1 = (q.norm() + r.norm())
        + (a.norm_squared() + b.norm_squared()) * dim_root * j0 / s_psi
        + ab2 * j0 * j0 / (s_psi * s_q)
        + ((n2(q) + n2(r)) + ab2 * ab2 * j0 / s_psi) * j0 * (1.0 / s_q + 1.0 / s_r);
    let m_zeta2 = ab2 * (linalg::condition_number(q) + linalg::condition_number(r));
    let m_xi = c * (m_zeta1 + m_zeta2) * j0 * j0 / (s_q * s_q);
    RadiusConstants {
        m_zeta1,
        m_zeta2,
        m_xi,
    }
}

pub fn default_projection_sets(model: &MfgModel, gain: &Mat, spec: ProjectionSpec) -> Result<ProjectionSets> {
    let sets = match spec {
        ProjectionSpec::Manual {
            zeta1_max,
            zeta2_radius,
            xi1_max,
            xi2_radius,
        } => ProjectionSets {
            zeta1_max,
            zeta2_radius,
            xi1_max,
            xi2_radius,
            mode: ProjectionMode::Manual,
        },
        ProjectionSpec::Formula { j0, c } => {
            if !(j0 > 0.0 && j0.is_finite()) || !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "formula radii need positive j0 and c, got {j0} and {c}"
                )));
            }
            let rho = model.check_stable(gain)?;
            let kc = radius_constants(model, j0, c);
            let kf = gain.norm();
            ProjectionSets {
                zeta1_max: j0,
                zeta2_radius: kc.m_zeta1 + kc.m_zeta2 * (1.0 + kf) / (1.0 - rho),
                xi1_max: j0,
                xi2_radius: kc.m_xi * (1.0 + kf * kf).powi(3) / (1.0 - rho),
                mode: ProjectionMode::Formula,
            }
        }
    };
    sets.validate()?;
    Ok(sets)
}

impl ProjectionSets {
    pub fn validate(&self) -> Result<()> {
        let all = [self.zeta1_max, self.zeta2_radius, self.xi1_max, self.xi2_radius];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("projection radii must be positive and finite: {all:?}")))
        }
    }

    pub fn project_zeta(&self, zeta1: f64, zeta2: &Vector) -> (f64, Vector) {
        (
            zeta1.clamp(0.0, self.zeta1_max),
            project_ball(zeta2, &Vector::zeros(zeta2.len()), self.zeta2_radius),
        )
    }

    pub fn project_xi(&self, xi1: f64, xi2: &Vector) -> (f64, Vector) {
        (
            xi1.clamp(-self.xi1_max, self.xi1_max),
            project_ball(xi2, &Vector::zeros(xi2.len()), self.xi2_radius),
        )
    }

    pub fn contains_zeta(&self, zeta1: f64, zeta2: &Vector) -> bool {
        (0.0..=self.zeta1_max).contains(&zeta1) && zeta2.norm() <= self.zeta2_radius * (1.0 + 1e-12)
    }

    pub fn contains_xi(&self, xi1: f64, xi2: &Vector) -> bool {
        xi1.abs() <= self.xi1_max && xi2.norm() <= self.xi2_radius * (1.0 + 1e-12)
    }
}
