//! Domain types shared by all modules: meshes, system state, the DOF
//! indexing convention, and the backward-Euler step map.

use crate::error::{Error, Result};
use nalgebra::Vector3;

/// Per-element node count for the quadratic tetrahedron.
pub const T10_NODES: usize = 10;

/// Local corner indices of the four sub-faces of a tetrahedron, ordered so
/// the face normal points away from the opposite corner when the element
/// has positive volume.
pub const TET_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

/// A T10 tetrahedral mesh in its reference configuration, together with
/// the oriented surface triangle soup used by collision detection.
///
/// Coefficient index = node index (node-major, component-minor DOF order).
#[derive(Debug, Clone)]
pub struct Mesh {
    /// Reference nodal positions (m).
    pub node_positions_ref: Vec<Vector3<f64>>,
    /// T10 connectivity: 4 corners then 6 mid-edge nodes following the
    /// Gmsh edge order (0-1, 1-2, 2-0, 0-3, 1-3, 2-3).
    pub elements: Vec<[usize; T10_NODES]>,
    /// Outward-oriented surface triangles (corner nodes) with owner body.
    pub surface_triangles: Vec<([usize; 3], usize)>,
    /// Owner body of each node.
    pub body_of_node: Vec<usize>,
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.node_positions_ref.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.n_nodes()
    }

    pub fn n_bodies(&self) -> usize {
        self.body_of_node.iter().copied().max().map_or(0, |b| b + 1)
    }

    /// Signed volume of the corner tetrahedron of element `e`.
    pub fn corner_volume(&self, e: usize) -> f64 {
        let el = &self.elements[e];
        let p = |i: usize| self.node_positions_ref[el[i]];
        let (a, b, c, d) = (p(0), p(1), p(2), p(3));
        (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0
    }

    /// Validates index bounds, node distinctness, corner volumes, surface
    /// body consistency, and outward surface orientation.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if self.body_of_node.len() != n {
            return Err(Error::Mesh(format!(
                "body_of_node has {} entries for {} nodes",
                self.body_of_node.len(),
                n
            )));
        }
        for (e, el) in self.elements.iter().enumerate() {
            for &i in el {
                if i >= n {
                    return Err(Error::Mesh(format!(
                        "element {e} references node {i} >= node count {n}"
                    )));
                }
            }
            let mut sorted = *el;
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Mesh(format!("element {e} has repeated nodes")));
            }
            let body = self.body_of_node[el[0]];
            if el.iter().any(|&i| self.body_of_node[i] != body) {
                return Err(Error::Mesh(format!("element {e} spans multiple bodies")));
            }
            let vol = self.corner_volume(e);
            if vol <= 0.0 {
                return Err(Error::Mesh(format!(
                    "element {e} has non-positive corner volume {vol:.3e}"
                )));
            }
        }
        self.validate_surface()?;
        Ok(())
    }

    /// Every surface triangle must be a boundary face of exactly one
    /// element, wound so its normal points away from that element.
    fn validate_surface(&self) -> Result<()> {
        use std::collections::HashMap;
        // boundary faces: corner-face key -> (element, opposite corner)
        let mut faces: HashMap<[usize; 3], (usize, usize, bool)> = HashMap::new();
        for (e, el) in self.elements.iter().enumerate() {
            for f in &TET_FACES {
                let tri = [el[f[0]], el[f[1]], el[f[2]]];
                let mut key = tri;
                key.sort_unstable();
                let opp = el
                    .iter()
                    .take(4)
                    .copied()
                    .find(|i| !tri.contains(i))
                    .expect("tet face has an opposite corner");
                faces
                    .entry(key)
                    .and_modify(|v| v.2 = false)
                    .or_insert((e, opp, true));
            }
        }
        for (t, &(tri, body)) in self.surface_triangles.iter().enumerate() {
            for &i in &tri {
                if i >= self.n_nodes() {
                    return Err(Error::Mesh(format!("surface triangle {t} out of range")));
                }
                if self.body_of_node[i] != body {
                    return Err(Error::Mesh(format!(
                        "surface triangle {t} node {i} is not in body {body}"
                    )));
                }
            }
            let mut key = tri;
            key.sort_unstable();
            let Some(&(_, opp, boundary)) = faces.get(&key) else {
                return Err(Error::Mesh(format!(
                    "surface triangle {t} is not an element face"
                )));
            };
            if !boundary {
                return Err(Error::Mesh(format!(
                    "surface triangle {t} is an interior face"
                )));
            }
            let p = |i: usize| self.node_positions_ref[i];
            let (a, b, c) = (p(tri[0]), p(tri[1]), p(tri[2]));
            let outward = (b - a).cross(&(c - a)).dot(&(p(opp) - a));
            if outward >= 0.0 {
                return Err(Error::Mesh(format!(
                    "surface triangle {t} is wound inward (flip its orientation)"
                )));
            }
        }
        Ok(())
    }
}

/// Generalized coordinates and velocities over all coefficient indices;
/// the single mutable truth advanced per step.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    /// Flat array of length `3 * n_coef` (m).
    pub q: Vec<f64>,
    /// Flat array of length `3 * n_coef` (m/s).
    pub v: Vec<f64>,
    /// Time (s).
    pub t: f64,
}

impl SystemState {
    /// Rest state at the mesh reference configuration.
    pub fn at_reference(mesh: &Mesh) -> Self {
        let mut q = Vec::with_capacity(mesh.n_dofs());
        for p in &mesh.node_positions_ref {
            q.extend_from_slice(&[p.x, p.y, p.z]);
        }
        let v = vec![0.0; q.len()];
        SystemState { q, v, t: 0.0 }
    }

    pub fn n_dofs(&self) -> usize {
        self.q.len()
    }

    pub fn node_position(&self, node: usize) -> Vector3<f64> {
        Vector3::new(self.q[3 * node], self.q[3 * node + 1], self.q[3 * node + 2])
    }

    pub fn node_velocity(&self, node: usize) -> Vector3<f64> {
        Vector3::new(self.v[3 * node], self.v[3 * node + 1], self.v[3 * node + 2])
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.len() != self.v.len() {
            return Err(Error::usage(format!(
                "q has {} entries but v has {}",
                self.q.len(),
                self.v.len()
            )));
        }
        if self.q.len() % 3 != 0 {
            return Err(Error::usage("state length is not a multiple of 3"));
        }
        if !self.q.iter().chain(self.v.iter()).all(|x| x.is_finite()) {
            return Err(Error::usage("non-finite entry in system state"));
        }
        Ok(())
    }
}

/// DOF indexing convention: `dof(I, d) = 3 I + d`.
#[derive(Debug, Clone, Copy)]
pub struct DofMap;

impl DofMap {
    /// Flat DOF index of coefficient `coef`, spatial component `d`.
    pub fn dof_index(coef: usize, d: usize) -> Result<usize> {
        if d > 2 {
            return Err(Error::usage(format!("component {d} out of range 0..=2")));
        }
        Ok(3 * coef + d)
    }

    /// Inverse of [`DofMap::dof_index`].
    pub fn coef_component(dof: usize) -> (usize, usize) {
        (dof / 3, dof % 3)
    }
}

/// Time stepping parameters.
#[derive(Debug, Clone)]
pub struct TimeStepConfig {
    /// Step size (s).
    pub h: f64,
    pub n_steps: usize,
    /// Gravity (m/s^2), applied as a mass-distributed force field.
    pub gravity: Vector3<f64>,
}

impl TimeStepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(Error::usage(format!("step size h = {} must be > 0", self.h)));
        }
        if self.n_steps < 1 {
            return Err(Error::usage("n_steps must be >= 1"));
        }
        Ok(())
    }
}

impl Default for TimeStepConfig {
    fn default() -> Self {
        TimeStepConfig {
            h: 1e-3,
            n_steps: 1,
            gravity: Vector3::zeros(),
        }
    }
}

/// Backward-Euler step map `q_{n+1} = q_n + h v`.
pub fn step_map(q_n: &[f64], v: &[f64], h: f64) -> Result<Vec<f64>> {
    if q_n.len() != v.len() {
        return Err(Error::usage(format!(
            "step_map length mismatch: {} vs {}",
            q_n.len(),
            v.len()
        )));
    }
    if !(h > 0.0) {
        return Err(Error::usage("step_map requires h > 0"));
    }
    Ok(q_n.iter().zip(v).map(|(q, vi)| q + h * vi).collect())
}

/// In-place variant of [`step_map`] for allocation-free inner loops.
pub fn step_map_into(q_n: &[f64], v: &[f64], h: f64, out: &mut [f64]) {
    debug_assert_eq!(q_n.len(), v.len());
    debug_assert_eq!(q_n.len(), out.len());
    for ((o, q), vi) in out.iter_mut().zip(q_n).zip(v) {
        *o = q + h * vi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_map_zero_velocity() {
        let q = vec![1.0, 2.0, 3.0];
        let v = vec![0.0; 3];
        assert_eq!(step_map(&q, &v, 1e-3).unwrap(), q);
    }

    #[test]
    fn step_map_linearity_example() {
        let q = vec![0.0, 0.0, 0.0];
        let v = vec![1.0, -2.0, 0.5];
        let out = step_map(&q, &v, 0.1).unwrap();
        assert_eq!(out, vec![0.1, -0.2, 0.05]);
    }

    #[test]
    fn step_map_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = 5e-4;
        let out = step_map(&q, &v, h).unwrap();
        for i in 0..30 {
            assert_eq!(out[i], q[i] + h * v[i]);
        }
    }

    #[test]
    fn step_map_is_linear_in_v() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 12;
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v2: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b, h) = (1.7, -0.3, 2e-3);
        let vc: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| a * x + b * y).collect();
        let lhs = step_map(&q, &vc, h).unwrap();
        let s1 = step_map(&q, &v1, h).unwrap();
        let s2 = step_map(&q, &v2, h).unwrap();
        for i in 0..n {
            let rhs = a * (s1[i] - q[i]) + b * (s2[i] - q[i]) + q[i];
            approx::assert_relative_eq!(lhs[i], rhs, max_relative = 1e-14, epsilon = 1e-15);
        }
    }

    #[test]
    fn step_map_rejects_length_mismatch() {
        assert!(matches!(
            step_map(&[0.0], &[0.0, 1.0], 0.1),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn dof_index_examples() {
        assert_eq!(DofMap::dof_index(0, 0).unwrap(), 0);
        assert_eq!(DofMap::dof_index(7, 2).unwrap(), 23);
        assert!(DofMap::dof_index(1, 3).is_err());
    }

    #[test]
    fn dof_roundtrip_is_identity() {
        let n_coef = 57;
        for dof in 0..3 * n_coef {
            let (i, d) = DofMap::coef_component(dof);
            assert_eq!(DofMap::dof_index(i, d).unwrap(), dof);
        }
    }

    #[test]
    fn mesh_rejects_inverted_element() {
        let mut mesh = crate::meshgen::single_tet();
        // Swap two corners to flip the volume sign.
        mesh.elements[0].swap(0, 1);
        assert!(matches!(mesh.validate(), Err(Error::Mesh(_))));
    }

    #[test]
    fn mesh_rejects_flipped_surface_winding() {
        let mut mesh = crate::meshgen::single_tet();
        mesh.validate().unwrap();
        let (tri, body) = mesh.surface_triangles[0];
        mesh.surface_triangles[0] = ([tri[0], tri[2], tri[1]], body);
        assert!(matches!(mesh.validate(), Err(Error::Mesh(_))));
    }
}
