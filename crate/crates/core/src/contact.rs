//! Hertz-Mindlin-type patch contact forces with Coulomb cap and rolling
//! resistance, rigid-body accumulation for standalone tests, and
//! distribution of patch forces onto FEA surface nodes.

use crate::collision::PatchContact;
use crate::error::{Error, Result};
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use std::collections::HashMap;

/// Contact-law parameters. Stiffness/damping are direct inputs; the
/// optional [`damping_from_restitution`] helper maps a restitution
/// coefficient onto `gamma_n`.
#[derive(Debug, Clone, Copy)]
pub struct ContactParams {
    /// Area-scaled normal stiffness (Pa/m).
    pub k_n: f64,
    /// Area-scaled tangential stiffness (Pa/m).
    pub k_t: f64,
    /// Normal damping factor (1/s scale, multiplies effective mass).
    pub gamma_n: f64,
    /// Tangential damping factor.
    pub gamma_t: f64,
    pub mu_s: f64,
    pub mu_k: f64,
    /// Rolling resistance coefficient.
    pub mu_r: f64,
    /// Restitution coefficient (config-level; used by the damping helper).
    pub restitution: f64,
    /// Speed below which static friction applies (m/s).
    pub stick_speed: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            k_n: 1e8,
            k_t: 2e8 / 7.0,
            gamma_n: 0.0,
            gamma_t: 0.0,
            mu_s: 0.5,
            mu_k: 0.5,
            mu_r: 0.0,
            restitution: 1.0,
            stick_speed: 1e-4,
        }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_n < 0.0 || self.k_t < 0.0 || self.gamma_n < 0.0 || self.gamma_t < 0.0 {
            return Err(Error::usage("contact stiffness and damping must be >= 0"));
        }
        if !(0.0..=self.mu_s).contains(&self.mu_k) {
            return Err(Error::usage("friction requires 0 <= mu_k <= mu_s"));
        }
        Ok(())
    }
}

/// Standard linear spring-dashpot mapping from a restitution coefficient
/// to the normal damping factor: `gamma_n = 2 beta sqrt(k_n / m_eff)`
/// with `beta = -ln e / sqrt(ln^2 e + pi^2)` (critical damping for
/// `e -> 0`), evaluated at unit area scale.
pub fn damping_from_restitution(k_n: f64, m_eff: f64, e: f64) -> f64 {
    let beta = if e <= 1e-12 {
        1.0
    } else if e >= 1.0 {
        0.0
    } else {
        let l = e.ln();
        -l / (l * l + std::f64::consts::PI * std::f64::consts::PI).sqrt()
    };
    2.0 * beta * (k_n / m_eff).sqrt()
}

/// Per patch-pair Mindlin tangential history.
#[derive(Debug, Clone, Copy, Default)]
pub struct TangentialHistory {
    pub d_t: Vector3<f64>,
    pub last_seen: u64,
}

/// Stable key of a patch pair: owning bodies plus island root labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchPairKey {
    pub body_i: usize,
    pub root_i: u32,
    pub body_j: usize,
    pub root_j: u32,
}

/// Accumulated tangential displacements keyed by stable patch pairs;
/// entries expire when a pair leaves the active contact set.
#[derive(Debug, Default)]
pub struct ContactHistory {
    entries: HashMap<PatchPairKey, TangentialHistory>,
}

impl ContactHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &PatchPairKey) -> Vector3<f64> {
        self.entries.get(key).map_or(Vector3::zeros(), |e| e.d_t)
    }

    pub fn store(&mut self, key: PatchPairKey, d_t: Vector3<f64>, now: u64) {
        self.entries.insert(
            key,
            TangentialHistory {
                d_t,
                last_seen: now,
            },
        );
    }

    /// Drops entries not seen at `now`.
    pub fn expire(&mut self, now: u64) {
        self.entries.retain(|_, e| e.last_seen == now);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Force on the first body of a patch pair.
#[derive(Debug, Clone, Copy)]
pub struct ContactForce {
    pub normal: Vector3<f64>,
    pub tangential: Vector3<f64>,
    pub rolling_torque: Vector3<f64>,
    /// Updated tangential history (already capped and re-projected).
    pub d_t: Vector3<f64>,
}

impl ContactForce {
    pub fn total(&self) -> Vector3<f64> {
        self.normal + self.tangential
    }
}

/// Hertz-Mindlin patch force:
/// `F_n = sqrt(A/pi) (k_n d_n - gamma_n m_eff v_n)`,
/// `F_t = sqrt(A/pi) (-k_t d_t - gamma_t m_eff v_t)` capped by the
/// Coulomb cone, plus rolling resistance
/// `tau_r = -mu_r |F_n| R_eff omega_hat` with `R_eff = sqrt(A/pi)`.
///
/// `rel_vel` is the velocity of body `i` relative to body `j` at the
/// contact point; the returned force acts on body `i` (body `j` sees the
/// negative). The tangential history advances by `v_t dt` and is
/// re-projected perpendicular to the patch normal; when the Coulomb cap
/// engages the stored displacement is truncated consistently with the
/// capped force.
pub fn contact_forces(
    patch: &PatchContact,
    rel_vel: &Vector3<f64>,
    rel_omega: &Vector3<f64>,
    params: &ContactParams,
    m_eff: f64,
    d_t_prev: Vector3<f64>,
    dt: f64,
) -> Option<ContactForce> {
    if patch.area <= 0.0 {
        return None;
    }
    let n = patch.normal;
    let scale = (patch.area / std::f64::consts::PI).sqrt();
    let v_n = n * rel_vel.dot(&n);
    let v_t = rel_vel - v_n;

    let d_n = n * patch.depth;
    let mut f_n = (d_n * params.k_n - v_n * (params.gamma_n * m_eff)) * scale;
    // the spring-dashpot must not pull the bodies together
    if f_n.dot(&n) < 0.0 {
        f_n = Vector3::zeros();
    }
    let f_n_mag = f_n.norm();

    // advance and re-project the tangential history
    let mut d_t = d_t_prev + v_t * dt;
    d_t -= n * d_t.dot(&n);

    let mut f_t = (-d_t * params.k_t - v_t * (params.gamma_t * m_eff)) * scale;
    let mu = if v_t.norm() < params.stick_speed {
        params.mu_s
    } else {
        params.mu_k
    };
    let cap = mu * f_n_mag;
    if f_t.norm() > cap {
        let dir = f_t.normalize();
        f_t = dir * cap;
        if params.k_t > 0.0 {
            d_t = -dir * (cap / (scale * params.k_t));
            d_t -= n * d_t.dot(&n);
        }
    }

    let tau_r = if params.mu_r > 0.0 && rel_omega.norm() > 1e-12 {
        -rel_omega.normalize() * (params.mu_r * f_n_mag * scale)
    } else {
        Vector3::zeros()
    };

    Some(ContactForce {
        normal: f_n,
        tangential: f_t,
        rolling_torque: tau_r,
        d_t,
    })
}

/// Free rigid body for standalone contact validation.
#[derive(Debug, Clone)]
pub struct RigidBody {
    pub mass: f64,
    /// Body-frame principal inertia (kg m^2).
    pub inertia: Vector3<f64>,
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
    /// Body-frame angular velocity (rad/s).
    pub omega: Vector3<f64>,
}

impl RigidBody {
    pub fn new(mass: f64, inertia: Vector3<f64>, position: Vector3<f64>) -> Result<Self> {
        if !(mass > 0.0) || inertia.iter().any(|&i| i <= 0.0) {
            return Err(Error::usage("rigid body needs positive mass and inertia"));
        }
        Ok(RigidBody {
            mass,
            inertia,
            position,
            orientation: UnitQuaternion::identity(),
            velocity: Vector3::zeros(),
            omega: Vector3::zeros(),
        })
    }

    pub fn omega_world(&self) -> Vector3<f64> {
        self.orientation * self.omega
    }

    pub fn inertia_world(&self) -> Matrix3<f64> {
        let r = self.orientation.to_rotation_matrix();
        r.matrix() * Matrix3::from_diagonal(&self.inertia) * r.matrix().transpose()
    }
}

/// Symplectic-Euler update with body-frame Euler equations (gyroscopic
/// term included). `forces` are world-frame (force, application point)
/// pairs; `torques` are world-frame free torques.
pub fn integrate_rigid(
    body: &mut RigidBody,
    forces: &[(Vector3<f64>, Vector3<f64>)],
    torques: &[Vector3<f64>],
    gravity: &Vector3<f64>,
    dt: f64,
) {
    let mut f_total = *gravity * body.mass;
    let mut tau_world = Vector3::zeros();
    for (f, p) in forces {
        f_total += f;
        tau_world += (p - body.position).cross(f);
    }
    for t in torques {
        tau_world += t;
    }
    body.velocity += f_total / body.mass * dt;

    let rot_inv = body.orientation.inverse();
    let tau_body = rot_inv * tau_world;
    let i = body.inertia;
    let w = body.omega;
    let gyro = Vector3::new(
        (i.y - i.z) * w.y * w.z,
        (i.z - i.x) * w.z * w.x,
        (i.x - i.y) * w.x * w.y,
    );
    body.omega += Vector3::new(
        (tau_body.x + gyro.x) / i.x,
        (tau_body.y + gyro.y) / i.y,
        (tau_body.z + gyro.z) / i.z,
    ) * dt;

    body.position += body.velocity * dt;
    let w_world = body.orientation * body.omega;
    let dq = UnitQuaternion::from_scaled_axis(w_world * dt);
    body.orientation = dq * body.orientation;
}

/// Splits a patch force over the `K` nearest surface nodes with
/// normalized inverse-distance weights; the nodal additions sum to the
/// input force exactly.
pub fn distribute_to_nodes(
    force: &Vector3<f64>,
    point: &Vector3<f64>,
    surface_nodes: &[usize],
    positions: impl Fn(usize) -> Vector3<f64>,
    k: usize,
    f_ext: &mut [f64],
) -> Result<()> {
    if k < 1 {
        return Err(Error::usage("distribution parameter K must be >= 1"));
    }
    if surface_nodes.is_empty() {
        return Err(Error::usage("body has no surface nodes"));
    }
    let mut by_dist: Vec<(f64, usize)> = surface_nodes
        .iter()
        .map(|&n| ((positions(n) - point).norm(), n))
        .collect();
    by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let take = k.min(by_dist.len());
    let nearest = &by_dist[..take];
    let eps = 1e-12;
    let weights: Vec<f64> = nearest.iter().map(|(d, _)| 1.0 / (d + eps)).collect();
    let wsum: f64 = weights.iter().sum();
    for ((_, node), w) in nearest.iter().zip(&weights) {
        let share = force * (w / wsum);
        for d in 0..3 {
            f_ext[3 * node + d] += share[d];
        }
    }
    Ok(())
}

/// Clamps the total contact force on one body to `limit`, returning the
/// scale factor applied to every patch force.
pub fn body_force_clamp(total: &Vector3<f64>, limit: f64) -> f64 {
    let mag = total.norm();
    if limit > 0.0 && mag > limit {
        limit / mag
    } else {
        1.0
    }
}

/// Closed-form references for the frictional-contact validation suites.
#[derive(Debug, Clone, Copy)]
pub struct ContactReferences {
    /// Critical slope angle for stick-slip onset (rad).
    pub critical_slope: f64,
    /// Steady sliding acceleration along the slope (m/s^2).
    pub sliding_acceleration: f64,
    /// Critical impact angle separating sticking from gross sliding (rad).
    pub critical_impact_angle: f64,
}

/// `alpha_c = arctan(mu_s)`, `a = g (sin alpha - mu_k cos alpha)`,
/// `theta* = arctan(7/2 mu_s (1 + e))`.
pub fn predict_contact_references(
    mu_s: f64,
    mu_k: f64,
    slope: f64,
    g: f64,
    e: f64,
) -> ContactReferences {
    ContactReferences {
        critical_slope: mu_s.atan(),
        sliding_acceleration: g * (slope.sin() - mu_k * slope.cos()),
        critical_impact_angle: (3.5 * mu_s * (1.0 + e)).atan(),
    }
}

/// Sliding-regime tangential restitution `e_t = 1 - mu (1+e) / tan(theta)`
/// for impact angle `theta` measured from the surface normal. Error for
/// `theta <= theta*` (sticking regime).
pub fn tangential_restitution_sliding(mu: f64, e: f64, theta: f64) -> Result<f64> {
    let theta_star = (3.5 * mu * (1.0 + e)).atan();
    if theta <= theta_star {
        return Err(Error::usage(format!(
            "impact angle {:.1} deg is below theta* = {:.1} deg (sticking regime)",
            theta.to_degrees(),
            theta_star.to_degrees()
        )));
    }
    Ok(1.0 - mu * (1.0 + e) / theta.tan())
}

/// Sliding-regime post-impact spin `|omega'| = (5/2) mu (1+e) |v_n| / R`.
pub fn post_impact_spin_sliding(mu: f64, e: f64, v_n: f64, radius: f64) -> f64 {
    2.5 * mu * (1.0 + e) * v_n.abs() / radius
}
