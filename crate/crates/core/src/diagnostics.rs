//! Measurement utilities for validation: per-body center of mass,
//! momentum, angular velocity, and nodal-averaged von Mises stress.

use crate::assembly::FeModel;
use crate::error::Result;
use crate::materials;
use nalgebra::{Matrix3, Vector3};

fn body_nodes(model: &FeModel, body: usize) -> impl Iterator<Item = usize> + '_ {
    model
        .mesh
        .body_of_node
        .iter()
        .enumerate()
        .filter(move |(_, &b)| b == body)
        .map(|(i, _)| i)
}

/// Lumped-mass center of mass of one body (m).
pub fn center_of_mass(model: &FeModel, q: &[f64], body: usize) -> Vector3<f64> {
    let mut m_total = 0.0;
    let mut acc = Vector3::zeros();
    for i in body_nodes(model, body) {
        let m = model.lumped_masses[i];
        acc += Vector3::new(q[3 * i], q[3 * i + 1], q[3 * i + 2]) * m;
        m_total += m;
    }
    acc / m_total
}

/// Lumped-mass COM velocity of one body (m/s).
pub fn com_velocity(model: &FeModel, v: &[f64], body: usize) -> Vector3<f64> {
    let mut m_total = 0.0;
    let mut acc = Vector3::zeros();
    for i in body_nodes(model, body) {
        let m = model.lumped_masses[i];
        acc += Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]) * m;
        m_total += m;
    }
    acc / m_total
}

/// Angular velocity about the body COM from the lumped-mass angular
/// momentum: `omega = I^{-1} L`.
pub fn angular_velocity(model: &FeModel, q: &[f64], v: &[f64], body: usize) -> Vector3<f64> {
    let com = center_of_mass(model, q, body);
    let vcom = com_velocity(model, v, body);
    let mut l = Vector3::zeros();
    let mut inertia = Matrix3::zeros();
    for i in body_nodes(model, body) {
        let m = model.lumped_masses[i];
        let r = Vector3::new(q[3 * i], q[3 * i + 1], q[3 * i + 2]) - com;
        let u = Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]) - vcom;
        l += r.cross(&u) * m;
        let r2 = r.norm_squared();
        for a in 0..3 {
            for b in 0..3 {
                inertia[(a, b)] += m * (if a == b { r2 } else { 0.0 } - r[a] * r[b]);
            }
        }
    }
    inertia.try_inverse().map_or(Vector3::zeros(), |inv| inv * l)
}

/// Nodal-averaged von Mises stress field (Pa): quadrature-point values
/// (elastic plus viscous stress) averaged per element, then averaged over
/// the elements sharing each node.
pub fn nodal_von_mises(model: &FeModel, q: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let n_qp = model.precomp.n_qp();
    let mut acc = vec![0.0; model.n_nodes()];
    let mut count = vec![0usize; model.n_nodes()];
    for (e, el) in model.mesh.elements.iter().enumerate() {
        let mat = &model.materials[model.elem_body[e]];
        let coords: [Vector3<f64>; crate::model::T10_NODES] = std::array::from_fn(|a| {
            let i = el[a];
            Vector3::new(q[3 * i], q[3 * i + 1], q[3 * i + 2])
        });
        let vels: [Vector3<f64>; crate::model::T10_NODES] = std::array::from_fn(|a| {
            let i = el[a];
            Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2])
        });
        let mut elem_avg = 0.0;
        for qi in 0..n_qp {
            let slot = model.precomp.slot(e, qi);
            let grads = &model.precomp.ref_grads[slot];
            let f = materials::deformation_gradient(&coords, grads);
            let mut p = materials::pk1(&f, mat)?;
            if mat.has_damping() {
                let fdot = materials::deformation_rate(&vels, grads);
                p += materials::pk1_viscous(&f, &fdot, mat);
            }
            elem_avg += materials::cauchy_von_mises(&p, &f)?;
        }
        elem_avg /= n_qp as f64;
        for &i in el {
            acc[i] += elem_avg;
            count[i] += 1;
        }
    }
    for (a, c) in acc.iter_mut().zip(&count) {
        if *c > 0 {
            *a /= *c as f64;
        }
    }
    Ok(acc)
}
