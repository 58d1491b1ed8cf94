//! One-time reference-configuration quantities: T10 shape functions,
//! Keast quadrature, reference shape gradients, Jacobian determinants,
//! and the constant consistent mass matrix.

use crate::error::{Error, Result};
use crate::model::{Mesh, T10_NODES};
use crate::sparse::{CsrMatrix, CsrPattern};
use nalgebra::{Matrix3, Vector3};
use std::sync::Arc;

/// Quadrature rule on the reference tetrahedron (volume 1/6).
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Parent-domain coordinates (xi, eta, zeta).
    pub points: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// 5-point Keast rule, degree 3: a negatively weighted centroid plus the
/// four permutations of barycentric (1/2, 1/6, 1/6, 1/6).
pub fn keast5() -> QuadratureRule {
    let c = 0.25;
    let a = 0.5;
    let b = 1.0 / 6.0;
    QuadratureRule {
        points: vec![
            Vector3::new(c, c, c),
            Vector3::new(b, b, b), // zeta_1 = 1/2
            Vector3::new(a, b, b),
            Vector3::new(b, a, b),
            Vector3::new(b, b, a),
        ],
        weights: vec![
            -4.0 / 5.0 / 6.0,
            9.0 / 20.0 / 6.0,
            9.0 / 20.0 / 6.0,
            9.0 / 20.0 / 6.0,
            9.0 / 20.0 / 6.0,
        ],
    }
}

/// 14-point Keast rule, degree 5. Used for exact consistent-mass
/// integration when requested.
pub fn keast14() -> QuadratureRule {
    // (weight over unit-sum, coordinate a, coordinate b, multiplicity kind)
    const G1_W: f64 = 0.112_687_925_718_016_2;
    const G1_A: f64 = 0.067_342_242_210_098_3;
    const G1_B: f64 = 0.310_885_919_263_300_5;
    const G2_W: f64 = 0.073_493_043_116_361_9;
    const G2_A: f64 = 0.721_794_249_067_326_4;
    const G2_B: f64 = 0.092_735_250_310_891_2;
    const G3_W: f64 = 0.042_546_020_777_081_2;
    const G3_A: f64 = 0.454_496_295_874_350_4;
    const G3_B: f64 = 0.045_503_704_125_649_6;

    let mut points = Vec::with_capacity(14);
    let mut weights = Vec::with_capacity(14);
    let mut push = |bary: [f64; 4], w: f64| {
        points.push(Vector3::new(bary[1], bary[2], bary[3]));
        weights.push(w / 6.0);
    };
    for k in 0..4 {
        let mut z = [G1_B; 4];
        z[k] = G1_A;
        push(z, G1_W);
    }
    for k in 0..4 {
        let mut z = [G2_B; 4];
        z[k] = G2_A;
        push(z, G2_W);
    }
    for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
        let mut z = [G3_B; 4];
        z[i] = G3_A;
        z[j] = G3_A;
        push(z, G3_W);
    }
    QuadratureRule { points, weights }
}

fn barycentric(xi: &Vector3<f64>) -> [f64; 4] {
    [1.0 - xi.x - xi.y - xi.z, xi.x, xi.y, xi.z]
}

const BARY_GRADS: [Vector3<f64>; 4] = [
    Vector3::new(-1.0, -1.0, -1.0),
    Vector3::new(1.0, 0.0, 0.0),
    Vector3::new(0.0, 1.0, 0.0),
    Vector3::new(0.0, 0.0, 1.0),
];

/// Mid-edge order: Gmsh convention (0-1, 1-2, 2-0, 0-3, 1-3, 2-3).
const T10_EDGES: [(usize, usize); 6] = [(0, 1), (1, 2), (2, 0), (0, 3), (1, 3), (2, 3)];

/// Quadratic tetrahedral basis at a parent point: corners
/// `z_i (2 z_i - 1)`, mid-edges `4 z_a z_b`. Extrapolation is permitted.
pub fn t10_shape(xi: &Vector3<f64>) -> [f64; T10_NODES] {
    let z = barycentric(xi);
    let mut n = [0.0; T10_NODES];
    for i in 0..4 {
        n[i] = z[i] * (2.0 * z[i] - 1.0);
    }
    for (k, &(a, b)) in T10_EDGES.iter().enumerate() {
        n[4 + k] = 4.0 * z[a] * z[b];
    }
    n
}

/// Parent-domain gradients of [`t10_shape`]; rows sum to the zero vector.
pub fn t10_shape_grad(xi: &Vector3<f64>) -> [Vector3<f64>; T10_NODES] {
    let z = barycentric(xi);
    let mut g = [Vector3::zeros(); T10_NODES];
    for i in 0..4 {
        g[i] = BARY_GRADS[i] * (4.0 * z[i] - 1.0);
    }
    for (k, &(a, b)) in T10_EDGES.iter().enumerate() {
        g[4 + k] = (BARY_GRADS[b] * z[a] + BARY_GRADS[a] * z[b]) * 4.0;
    }
    g
}

/// Precomputation options.
#[derive(Debug, Clone, Copy)]
pub struct PrecompConfig {
    /// Integrate the (degree-4) mass integrand with the degree-5 14-point
    /// rule instead of sharing the 5-point force rule.
    ///
    /// On by default: the 5-point rule carries a negative centroid weight,
    /// which makes the consistent T10 mass matrix indefinite and breaks
    /// the SPD requirement on the implicit system. The shared-rule variant
    /// remains available for studies.
    pub mass_exact: bool,
}

impl Default for PrecompConfig {
    fn default() -> Self {
        PrecompConfig { mass_exact: true }
    }
}

/// Reference-configuration quantities cached per (element, quadrature
/// point) plus per-element inertia coefficients.
#[derive(Debug, Clone)]
pub struct ElementPrecomp {
    pub rule: QuadratureRule,
    /// Shape values at the rule points (shared by all elements).
    pub shape_vals: Vec<[f64; T10_NODES]>,
    /// `grad_X N_a` at slot `e * n_qp + q` (1/m).
    pub ref_grads: Vec<[Vector3<f64>; T10_NODES]>,
    /// Reference Jacobian determinant at slot `e * n_qp + q` (m^3).
    pub j0: Vec<f64>,
    /// Consistent element inertia coefficients `m_ij` (kg).
    pub elem_mass: Vec<[[f64; T10_NODES]; T10_NODES]>,
    /// Element reference volumes integrated with the force rule (m^3).
    pub elem_volume: Vec<f64>,
    /// Density per body (kg/m^3).
    pub density: Vec<f64>,
}

impl ElementPrecomp {
    pub fn n_qp(&self) -> usize {
        self.rule.len()
    }

    pub fn slot(&self, e: usize, q: usize) -> usize {
        e * self.n_qp() + q
    }

    /// Total mesh mass (kg).
    pub fn total_mass(&self) -> f64 {
        self.elem_mass
            .iter()
            .map(|m| m.iter().flatten().sum::<f64>())
            .sum()
    }
}

fn reference_jacobian(
    mesh: &Mesh,
    el: &[usize; T10_NODES],
    grads: &[Vector3<f64>; T10_NODES],
) -> Matrix3<f64> {
    // J_ij = d X_i / d xi_j = sum_a X[a]_i (grad_xi N_a)_j
    let mut j = Matrix3::zeros();
    for a in 0..T10_NODES {
        let x = mesh.node_positions_ref[el[a]];
        for r in 0..3 {
            for c in 0..3 {
                j[(r, c)] += x[r] * grads[a][c];
            }
        }
    }
    j
}

/// Computes reference shape gradients, Jacobian determinants, and the
/// consistent mass coefficients for every element. The reference map uses
/// all ten nodes, so curved reference elements are supported.
pub fn precompute_elements(
    mesh: &Mesh,
    density_per_body: &[f64],
    config: PrecompConfig,
) -> Result<ElementPrecomp> {
    if density_per_body.len() < mesh.n_bodies() {
        return Err(Error::usage(format!(
            "{} densities for {} bodies",
            density_per_body.len(),
            mesh.n_bodies()
        )));
    }
    let rule = keast5();
    let n_qp = rule.len();
    let parent_grads: Vec<[Vector3<f64>; T10_NODES]> =
        rule.points.iter().map(t10_shape_grad).collect();
    let shape_vals: Vec<[f64; T10_NODES]> = rule.points.iter().map(t10_shape).collect();

    let n_el = mesh.n_elements();
    let mut ref_grads = vec![[Vector3::zeros(); T10_NODES]; n_el * n_qp];
    let mut j0 = vec![0.0; n_el * n_qp];
    let mut elem_volume = vec![0.0; n_el];
    for (e, el) in mesh.elements.iter().enumerate() {
        for q in 0..n_qp {
            let jac = reference_jacobian(mesh, el, &parent_grads[q]);
            let det = jac.determinant();
            if det <= 0.0 {
                return Err(Error::InvertedElement {
                    element: e,
                    qp: q,
                    detail: format!("reference Jacobian determinant {det:.3e}"),
                });
            }
            let inv_t = jac
                .try_inverse()
                .ok_or_else(|| Error::InvertedElement {
                    element: e,
                    qp: q,
                    detail: "singular reference Jacobian".into(),
                })?
                .transpose();
            let slot = e * n_qp + q;
            for a in 0..T10_NODES {
                ref_grads[slot][a] = inv_t * parent_grads[q][a];
            }
            j0[slot] = det;
            elem_volume[e] += det * rule.weights[q];
        }
    }

    // Mass coefficients, optionally with the exact degree-5 rule.
    let mass_rule = if config.mass_exact { keast14() } else { rule.clone() };
    let mass_shape: Vec<[f64; T10_NODES]> = mass_rule.points.iter().map(t10_shape).collect();
    let mass_parent_grads: Vec<[Vector3<f64>; T10_NODES]> =
        mass_rule.points.iter().map(t10_shape_grad).collect();
    let mut elem_mass = vec![[[0.0; T10_NODES]; T10_NODES]; n_el];
    for (e, el) in mesh.elements.iter().enumerate() {
        let rho = density_per_body[mesh.body_of_node[el[0]]];
        for q in 0..mass_rule.len() {
            let det = if config.mass_exact {
                let jac = reference_jacobian(mesh, el, &mass_parent_grads[q]);
                let d = jac.determinant();
                if d <= 0.0 {
                    return Err(Error::InvertedElement {
                        element: e,
                        qp: q,
                        detail: format!("mass-rule Jacobian determinant {d:.3e}"),
                    });
                }
                d
            } else {
                j0[e * n_qp + q]
            };
            let s = &mass_shape[q];
            let w = rho * det * mass_rule.weights[q];
            for i in 0..T10_NODES {
                for j in 0..T10_NODES {
                    elem_mass[e][i][j] += w * s[i] * s[j];
                }
            }
        }
    }

    Ok(ElementPrecomp {
        rule,
        shape_vals,
        ref_grads,
        j0,
        elem_mass,
        elem_volume,
        density: density_per_body.to_vec(),
    })
}

/// Coefficient-level adjacency pattern implied by element connectivity.
pub fn coefficient_pattern(mesh: &Mesh) -> Result<Arc<CsrPattern>> {
    let mut pairs = Vec::with_capacity(mesh.n_elements() * T10_NODES * T10_NODES);
    for el in &mesh.elements {
        for &i in el {
            for &j in el {
                pairs.push((i, j));
            }
        }
    }
    // every node must appear on the diagonal even if unused by elements
    for i in 0..mesh.n_nodes() {
        pairs.push((i, i));
    }
    Ok(Arc::new(CsrPattern::build(pairs, mesh.n_nodes())?))
}

/// Assembles the coefficient-level consistent mass matrix into `pattern`.
pub fn assemble_mass(
    mesh: &Mesh,
    precomp: &ElementPrecomp,
    pattern: &Arc<CsrPattern>,
) -> Result<CsrMatrix> {
    let mut m = CsrMatrix::zeros(Arc::clone(pattern));
    for (e, el) in mesh.elements.iter().enumerate() {
        for a in 0..T10_NODES {
            for b in 0..T10_NODES {
                m.add_at(el[a], el[b], precomp.elem_mass[e][a][b])
                    .map_err(|_| {
                        Error::Structural(format!(
                            "mass pattern is missing element {e} pair ({}, {})",
                            el[a], el[b]
                        ))
                    })?;
            }
        }
    }
    Ok(m)
}

/// Lumped (row-sum) nodal masses, used for diagnostics such as center of
/// mass and momentum.
pub fn lumped_masses(mass: &CsrMatrix) -> Vec<f64> {
    (0..mass.n_rows())
        .map(|r| {
            let p = mass.pattern();
            let (lo, hi) = (p.offsets()[r], p.offsets()[r + 1]);
            mass.values()[lo..hi].iter().sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgen;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Analytic monomial moment over the reference tetrahedron:
    /// integral of xi^p eta^q zeta^r = p! q! r! / (p + q + r + 3)!.
    fn tet_moment(p: u32, q: u32, r: u32) -> f64 {
        fn fact(k: u32) -> f64 {
            (1..=k).map(|x| x as f64).product::<f64>().max(1.0)
        }
        fact(p) * fact(q) * fact(r) / fact(p + q + r + 3)
    }

    #[test]
    fn shape_interpolates_corner() {
        let n = t10_shape(&Vector3::new(1.0, 0.0, 0.0));
        for (i, &v) in n.iter().enumerate() {
            assert_relative_eq!(v, if i == 1 { 1.0 } else { 0.0 }, epsilon = 1e-15);
        }
    }

    #[test]
    fn shape_partition_of_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let xi = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()) * 0.33;
            let s: f64 = t10_shape(&xi).iter().sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn shape_centroid_values() {
        let n = t10_shape(&Vector3::new(0.25, 0.25, 0.25));
        for i in 0..4 {
            assert_relative_eq!(n[i], -0.125, epsilon = 1e-15);
        }
        for i in 4..10 {
            assert_relative_eq!(n[i], 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn grad_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let xi = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()) * 0.3;
            let g = t10_shape_grad(&xi);
            let sum: Vector3<f64> = g.iter().sum();
            assert!(sum.norm() < 1e-13);
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for _ in 0..20 {
            let xi = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()) * 0.3;
            let g = t10_shape_grad(&xi);
            for d in 0..3 {
                let mut xp = xi;
                let mut xm = xi;
                xp[d] += h;
                xm[d] -= h;
                let np = t10_shape(&xp);
                let nm = t10_shape(&xm);
                for a in 0..T10_NODES {
                    let fd = (np[a] - nm[a]) / (2.0 * h);
                    assert!((fd - g[a][d]).abs() < 1e-8, "node {a} comp {d}");
                }
            }
        }
    }

    #[test]
    fn keast5_weights_and_first_moment() {
        let rule = keast5();
        let wsum: f64 = rule.weights.iter().sum();
        assert_relative_eq!(wsum, 1.0 / 6.0, epsilon = 1e-15);
        let xi_moment: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * p.x)
            .sum();
        assert_relative_eq!(xi_moment, 1.0 / 24.0, epsilon = 1e-15);
    }

    #[test]
    fn keast5_exact_to_degree_three() {
        let rule = keast5();
        for p in 0..=3u32 {
            for q in 0..=(3 - p) {
                for r in 0..=(3 - p - q) {
                    let quad: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(pt, w)| w * pt.x.powi(p as i32) * pt.y.powi(q as i32) * pt.z.powi(r as i32))
                        .sum();
                    assert!(
                        (quad - tet_moment(p, q, r)).abs() <= 1e-14,
                        "monomial ({p},{q},{r}): {quad} vs {}",
                        tet_moment(p, q, r)
                    );
                }
            }
        }
    }

    #[test]
    fn keast14_exact_to_degree_five() {
        let rule = keast14();
        for p in 0..=5u32 {
            for q in 0..=(5 - p) {
                for r in 0..=(5 - p - q) {
                    let quad: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(pt, w)| w * pt.x.powi(p as i32) * pt.y.powi(q as i32) * pt.z.powi(r as i32))
                        .sum();
                    assert!(
                        (quad - tet_moment(p, q, r)).abs() <= 1e-14,
                        "monomial ({p},{q},{r})"
                    );
                }
            }
        }
    }

    #[test]
    fn single_tet_mass_conservation() {
        let mesh = meshgen::single_tet();
        let rho = 1000.0;
        for mass_exact in [false, true] {
            let pre = precompute_elements(&mesh, &[rho], PrecompConfig { mass_exact }).unwrap();
            let vol = mesh.corner_volume(0);
            assert_relative_eq!(pre.elem_volume[0], vol, max_relative = 1e-12);
            let msum: f64 = pre.elem_mass[0].iter().flatten().sum();
            assert_relative_eq!(msum, rho * vol, max_relative = 1e-12);
            // symmetry
            for i in 0..T10_NODES {
                for j in 0..T10_NODES {
                    assert_relative_eq!(
                        pre.elem_mass[0][i][j],
                        pre.elem_mass[0][j][i],
                        epsilon = 1e-14
                    );
                }
            }
        }
    }

    #[test]
    fn ref_grads_reproduce_linear_fields() {
        // On an affine element, interpolating a linear field and applying
        // the reference gradients must recover the exact field gradient;
        // cross-checked against finite differences of the interpolation.
        let mesh = meshgen::single_tet();
        let pre = precompute_elements(&mesh, &[1.0], PrecompConfig::default()).unwrap();
        let el = &mesh.elements[0];
        let p = Vector3::new(0.3, -1.1, 2.4);
        for q in 0..pre.n_qp() {
            let slot = pre.slot(0, q);
            let mut grad = Vector3::zeros();
            for a in 0..T10_NODES {
                let u = p.dot(&mesh.node_positions_ref[el[a]]);
                grad += pre.ref_grads[slot][a] * u;
            }
            assert!((grad - p).norm() < 1e-8, "qp {q}: {grad:?}");
        }
    }

    #[test]
    fn inverted_element_is_reported() {
        // Mirror the geometry without touching connectivity: det J < 0
        // everywhere.
        let mut mesh = meshgen::single_tet();
        for p in &mut mesh.node_positions_ref {
            p.x = -p.x;
        }
        let err = precompute_elements(&mesh, &[1.0], PrecompConfig::default());
        assert!(matches!(err, Err(Error::InvertedElement { element: 0, .. })));
    }

    #[test]
    fn res0_mesh_statistics() {
        let mesh = meshgen::t10_box(Vector3::zeros(), Vector3::new(3.0, 2.0, 1.0), (3, 2, 1));
        assert_eq!((mesh.n_nodes(), mesh.n_elements(), mesh.n_dofs()), (105, 36, 315));
    }

    #[test]
    fn assembled_mass_matches_dense_oracle() {
        // two elements sharing a face
        let corners = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        let mesh = meshgen::t10_from_corner_tets(corners, vec![[0, 1, 2, 3], [1, 2, 3, 4]], 0);
        mesh.validate().unwrap();
        let rho = 700.0;
        let pre = precompute_elements(&mesh, &[rho], PrecompConfig::default()).unwrap();
        let pattern = coefficient_pattern(&mesh).unwrap();
        let m = assemble_mass(&mesh, &pre, &pattern).unwrap();

        // dense assembly oracle
        let n = mesh.n_nodes();
        let mut dense = vec![0.0; n * n];
        for (e, el) in mesh.elements.iter().enumerate() {
            for a in 0..T10_NODES {
                for b in 0..T10_NODES {
                    dense[el[a] * n + el[b]] += pre.elem_mass[e][a][b];
                }
            }
        }
        for r in 0..n {
            for c in 0..n {
                assert_relative_eq!(m.get(r, c), dense[r * n + c], epsilon = 1e-12);
            }
        }
        // total mass = rho * total volume
        let total: f64 = m.values().iter().sum();
        let vol: f64 = pre.elem_volume.iter().sum();
        assert_relative_eq!(total, rho * vol, max_relative = 1e-10);
    }

    #[test]
    fn one_element_mass_is_dense_block() {
        let mesh = meshgen::single_tet();
        let pre = precompute_elements(&mesh, &[2.0], PrecompConfig::default()).unwrap();
        let pattern = coefficient_pattern(&mesh).unwrap();
        let m = assemble_mass(&mesh, &pre, &pattern).unwrap();
        for i in 0..T10_NODES {
            for j in 0..T10_NODES {
                assert_relative_eq!(m.get(i, j), pre.elem_mass[0][i][j], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn shared_rule_mass_is_indefinite_but_conserves_mass() {
        // The negative centroid weight of the 5-point rule makes the
        // consistent mass indefinite; the exact-rule default restores SPD.
        let mesh = meshgen::single_tet();
        let pre = precompute_elements(&mesh, &[1000.0], PrecompConfig { mass_exact: false }).unwrap();
        let msum: f64 = pre.elem_mass[0].iter().flatten().sum();
        assert_relative_eq!(msum, 1000.0 * mesh.corner_volume(0), max_relative = 1e-12);
        let mut m = nalgebra::DMatrix::zeros(10, 10);
        for i in 0..10 {
            for j in 0..10 {
                m[(i, j)] = pre.elem_mass[0][i][j];
            }
        }
        let lambda_min = m
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(lambda_min < 0.0, "shared-rule mass unexpectedly SPD");
    }

    #[test]
    fn mass_matrix_is_spd_on_test_meshes() {
        use crate::sparse::{SolveBackend, SolveOptions, SpdSolveContext};
        for (mesh, rho) in [
            (meshgen::single_tet(), 1000.0),
            (
                meshgen::t10_box(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), (2, 2, 2)),
                2700.0,
            ),
        ] {
            let pre = precompute_elements(&mesh, &[rho], PrecompConfig::default()).unwrap();
            let pattern = coefficient_pattern(&mesh).unwrap();
            let m = assemble_mass(&mesh, &pre, &pattern).unwrap();
            for backend in [SolveBackend::Sparse, SolveBackend::Dense] {
                let mut ctx = SpdSolveContext::analyze(
                    m.pattern(),
                    SolveOptions {
                        backend,
                        ..Default::default()
                    },
                )
                .unwrap();
                ctx.factorize(&m).expect("consistent mass must be SPD");
            }
        }
    }
}
