//! Bilateral constraint primitives (CD, DP1), joint composition, residual
//! and fixed-pattern Jacobian evaluation, multiplier updates, and joint
//! reaction recovery.
//!
//! Clamps (Dirichlet conditions) are CD anchors enforced through the ALM
//! machinery, never by matrix row elimination.

use crate::error::{Error, Result};
use crate::model::Mesh;
use crate::sparse::{CsrMatrix, CsrPattern};
use nalgebra::Vector3;
use std::sync::Arc;

/// Time-dependent anchor target. Serializable schedules stand in for a
/// target callback so scenario configs round-trip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetSchedule {
    Constant(f64),
    /// Linear ramp from `start` to `end` over `[t0, t1]`, held outside.
    Ramp { start: f64, end: f64, t0: f64, t1: f64 },
    /// Base displacement following a triangular velocity waveform with
    /// the given peak speed and period, active on `[t0, t1]`. Peak
    /// displacement is `peak_speed * period / 4`.
    TriangleWave {
        base: f64,
        peak_speed: f64,
        period: f64,
        t0: f64,
        t1: f64,
    },
}

impl TargetSchedule {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TargetSchedule::Constant(v) => v,
            TargetSchedule::Ramp { start, end, t0, t1 } => {
                if t <= t0 {
                    start
                } else if t >= t1 {
                    end
                } else {
                    start + (end - start) * (t - t0) / (t1 - t0)
                }
            }
            TargetSchedule::TriangleWave {
                base,
                peak_speed,
                period,
                t0,
                t1,
            } => {
                let tc = t.clamp(t0, t1) - t0;
                // Integrated triangular velocity: displacement swings
                // 0 -> A -> 0 each period with A = peak_speed * period / 4.
                let amp = peak_speed * period / 4.0;
                let phase = (tc / period).fract();
                let disp = if phase < 0.5 {
                    tri_integral(phase / 0.5)
                } else {
                    1.0 - tri_integral((phase - 0.5) / 0.5)
                };
                base + amp * disp
            }
        }
    }
}

/// Integral of a unit triangle pulse (0->1->0 over [0,1]) scaled to end
/// at 1.
fn tri_integral(u: f64) -> f64 {
    if u < 0.5 {
        2.0 * u * u
    } else {
        1.0 - 2.0 * (1.0 - u) * (1.0 - u)
    }
}

/// Second vector of a DP1 row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dp1Vector {
    /// Difference of two node positions `q[b] - q[a]`.
    NodePair(usize, usize),
    /// A fixed world-frame vector.
    World(Vector3<f64>),
}

/// One scalar constraint row.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintRow {
    /// `c = q[3 node + d] - target(t)`.
    CdAnchor {
        node: usize,
        d: usize,
        target: TargetSchedule,
    },
    /// `c = q[3 child + d] - q[3 parent + d] - offset`.
    CdPair {
        parent: usize,
        child: usize,
        d: usize,
        offset: f64,
    },
    /// `c = a(q) . b(q) - c0` with `a = q[a1] - q[a0]`.
    Dp1 {
        a: (usize, usize),
        b: Dp1Vector,
        c0: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Spherical,
    Revolute,
    Clamp,
}

/// Named group of constraint rows.
#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub rows: std::ops::Range<usize>,
}

/// Ordered constraint rows with multipliers, penalty, and the fixed-pattern
/// Jacobian (stored twice: `C_q` and its transpose, updated together).
#[derive(Debug)]
pub struct ConstraintSet {
    rows: Vec<ConstraintRow>,
    pub lambda: Vec<f64>,
    pub rho: f64,
    joints: Vec<Joint>,
    cq: CsrMatrix,
    cqt: CsrMatrix,
    /// nnz position in `cq` -> nnz position in `cqt`.
    t_index: Vec<usize>,
    /// Residual at the last committed (post-inner-solve) configuration.
    committed_c: Option<Vec<f64>>,
}

/// Incrementally composed constraint rows; call [`ConstraintSetBuilder::build`]
/// once all joints are registered.
#[derive(Debug, Default)]
pub struct ConstraintSetBuilder {
    rows: Vec<ConstraintRow>,
    joints: Vec<Joint>,
}

impl ConstraintSetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn push_row(&mut self, row: ConstraintRow) -> usize {
        self.rows.push(row);
        self.rows.len() - 1
    }

    fn push_joint(&mut self, name: &str, kind: JointKind, first: usize) {
        self.joints.push(Joint {
            name: name.to_string(),
            kind,
            rows: first..self.rows.len(),
        });
    }

    /// Clamps all three components of `node` to its reference position.
    pub fn clamp_node(&mut self, name: &str, mesh: &Mesh, node: usize) {
        self.clamp_nodes(name, mesh, &[node]);
    }

    /// Clamps a node set to its reference positions under one joint name.
    pub fn clamp_nodes(&mut self, name: &str, mesh: &Mesh, nodes: &[usize]) {
        let first = self.rows.len();
        for &node in nodes {
            let p = mesh.node_positions_ref[node];
            for d in 0..3 {
                self.rows.push(ConstraintRow::CdAnchor {
                    node,
                    d,
                    target: TargetSchedule::Constant(p[d]),
                });
            }
        }
        self.push_joint(name, JointKind::Clamp, first);
    }

    /// Anchors `node` with per-component target schedules (prescribed
    /// base motion).
    pub fn anchor_node(&mut self, name: &str, node: usize, targets: [TargetSchedule; 3]) {
        let first = self.rows.len();
        for (d, target) in targets.into_iter().enumerate() {
            self.rows.push(ConstraintRow::CdAnchor { node, d, target });
        }
        self.push_joint(name, JointKind::Spherical, first);
    }

    /// Spherical joint: three CD point-coincidence rows between a parent
    /// and child node. Offsets are captured from the reference
    /// configuration so initial residuals vanish.
    pub fn spherical(&mut self, name: &str, mesh: &Mesh, parent: usize, child: usize) {
        let first = self.rows.len();
        let pp = mesh.node_positions_ref[parent];
        let pc = mesh.node_positions_ref[child];
        for d in 0..3 {
            self.rows.push(ConstraintRow::CdPair {
                parent,
                child,
                d,
                offset: pc[d] - pp[d],
            });
        }
        self.push_joint(name, JointKind::Spherical, first);
    }

    /// Revolute joint: the spherical rows plus two DP1 rows aligning the
    /// parent axis (node pair) with the hinge by zeroing its dot products
    /// against two transverse child vectors. `c0` is captured from the
    /// reference configuration.
    pub fn revolute(
        &mut self,
        name: &str,
        mesh: &Mesh,
        parent: usize,
        child: usize,
        parent_axis: (usize, usize),
        child_transverse: [(usize, usize); 2],
    ) -> Result<()> {
        let axis = mesh.node_positions_ref[parent_axis.1] - mesh.node_positions_ref[parent_axis.0];
        if axis.norm() < 1e-12 {
            return Err(Error::usage(format!(
                "revolute joint '{name}': degenerate axis node pair {parent_axis:?}"
            )));
        }
        let first = self.rows.len();
        let pp = mesh.node_positions_ref[parent];
        let pc = mesh.node_positions_ref[child];
        for d in 0..3 {
            self.rows.push(ConstraintRow::CdPair {
                parent,
                child,
                d,
                offset: pc[d] - pp[d],
            });
        }
        for pair in child_transverse {
            let b = mesh.node_positions_ref[pair.1] - mesh.node_positions_ref[pair.0];
            self.rows.push(ConstraintRow::Dp1 {
                a: parent_axis,
                b: Dp1Vector::NodePair(pair.0, pair.1),
                c0: axis.dot(&b),
            });
        }
        self.push_joint(name, JointKind::Revolute, first);
        Ok(())
    }

    /// Revolute anchor to the world: CD anchors for the hinge point plus
    /// two DP1 rows against fixed world vectors transverse to the hinge.
    pub fn revolute_anchor(
        &mut self,
        name: &str,
        mesh: &Mesh,
        node: usize,
        body_axis: (usize, usize),
        world_transverse: [Vector3<f64>; 2],
    ) -> Result<()> {
        let axis = mesh.node_positions_ref[body_axis.1] - mesh.node_positions_ref[body_axis.0];
        if axis.norm() < 1e-12 {
            return Err(Error::usage(format!(
                "revolute anchor '{name}': degenerate axis node pair {body_axis:?}"
            )));
        }
        let first = self.rows.len();
        let p = mesh.node_positions_ref[node];
        for d in 0..3 {
            self.rows.push(ConstraintRow::CdAnchor {
                node,
                d,
                target: TargetSchedule::Constant(p[d]),
            });
        }
        for w in world_transverse {
            self.rows.push(ConstraintRow::Dp1 {
                a: body_axis,
                b: Dp1Vector::World(w),
                c0: axis.dot(&w),
            });
        }
        self.push_joint(name, JointKind::Revolute, first);
        Ok(())
    }

    pub fn build(self, n_dofs: usize, rho: f64) -> Result<ConstraintSet> {
        if !(rho > 0.0) && !self.rows.is_empty() {
            return Err(Error::usage("penalty rho must be > 0"));
        }
        let m = self.rows.len();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (r, row) in self.rows.iter().enumerate() {
            for dof in row_dofs(row) {
                pairs.push((r, dof));
            }
        }
        let cq_pat = Arc::new(CsrPattern::build_rect(pairs.iter().copied(), m, n_dofs)?);
        let cqt_pat = Arc::new(CsrPattern::build_rect(
            pairs.iter().map(|&(r, c)| (c, r)),
            n_dofs,
            m,
        )?);
        let cq = CsrMatrix::zeros(Arc::clone(&cq_pat));
        let cqt = CsrMatrix::zeros(Arc::clone(&cqt_pat));
        let mut t_index = vec![0usize; cq_pat.nnz()];
        for r in 0..m {
            let (lo, hi) = (cq_pat.offsets()[r], cq_pat.offsets()[r + 1]);
            for k in lo..hi {
                let c = cq_pat.columns()[k];
                t_index[k] = cqt_pat
                    .nnz_index(c, r)
                    .expect("transpose pattern mirrors cq");
            }
        }
        Ok(ConstraintSet {
            lambda: vec![0.0; m],
            rho,
            joints: self.joints,
            rows: self.rows,
            cq,
            cqt,
            t_index,
            committed_c: None,
        })
    }
}

fn row_dofs(row: &ConstraintRow) -> Vec<usize> {
    match row {
        ConstraintRow::CdAnchor { node, d, .. } => vec![3 * node + d],
        ConstraintRow::CdPair {
            parent, child, d, ..
        } => vec![3 * parent + d, 3 * child + d],
        ConstraintRow::Dp1 { a, b, .. } => {
            let mut dofs = Vec::with_capacity(12);
            for n in [a.0, a.1] {
                for d in 0..3 {
                    dofs.push(3 * n + d);
                }
            }
            if let Dp1Vector::NodePair(b0, b1) = b {
                for n in [*b0, *b1] {
                    for d in 0..3 {
                        dofs.push(3 * n + d);
                    }
                }
            }
            dofs
        }
    }
}

fn node_pos(q: &[f64], n: usize) -> Vector3<f64> {
    Vector3::new(q[3 * n], q[3 * n + 1], q[3 * n + 2])
}

impl ConstraintSet {
    /// An empty set for unconstrained systems.
    pub fn empty(n_dofs: usize) -> Self {
        ConstraintSetBuilder::new().build(n_dofs, 1.0).unwrap()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_named(&self, name: &str) -> Option<&Joint> {
        self.joints.iter().find(|j| j.name == name)
    }

    pub fn cq(&self) -> &CsrMatrix {
        &self.cq
    }

    pub fn cqt(&self) -> &CsrMatrix {
        &self.cqt
    }

    /// Evaluates the residual `c(q, t)` into `out`.
    pub fn eval_constraints(&self, q: &[f64], t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.rows.len());
        for (r, row) in self.rows.iter().enumerate() {
            out[r] = match row {
                ConstraintRow::CdAnchor { node, d, target } => {
                    q[3 * node + d] - target.eval(t)
                }
                ConstraintRow::CdPair {
                    parent,
                    child,
                    d,
                    offset,
                } => q[3 * child + d] - q[3 * parent + d] - offset,
                ConstraintRow::Dp1 { a, b, c0 } => {
                    let av = node_pos(q, a.1) - node_pos(q, a.0);
                    let bv = match b {
                        Dp1Vector::NodePair(b0, b1) => node_pos(q, *b1) - node_pos(q, *b0),
                        Dp1Vector::World(w) => *w,
                    };
                    av.dot(&bv) - c0
                }
            };
        }
    }

    /// Updates the Jacobian values at `q`; the pattern never changes.
    pub fn eval_jacobian(&mut self, q: &[f64]) {
        self.cq.set_zero();
        self.cqt.set_zero();
        let pat = Arc::clone(self.cq.pattern());
        for (r, row) in self.rows.iter().enumerate() {
            let mut set = |dof: usize, val: f64| {
                let k = pat.nnz_index(r, dof).expect("dof registered in pattern");
                self.cq.values_mut()[k] += val;
                self.cqt.values_mut()[self.t_index[k]] += val;
            };
            match row {
                ConstraintRow::CdAnchor { node, d, .. } => set(3 * node + d, 1.0),
                ConstraintRow::CdPair {
                    parent, child, d, ..
                } => {
                    set(3 * child + d, 1.0);
                    set(3 * parent + d, -1.0);
                }
                ConstraintRow::Dp1 { a, b, .. } => {
                    let av = node_pos(q, a.1) - node_pos(q, a.0);
                    let bv = match b {
                        Dp1Vector::NodePair(b0, b1) => node_pos(q, *b1) - node_pos(q, *b0),
                        Dp1Vector::World(w) => *w,
                    };
                    for d in 0..3 {
                        set(3 * a.1 + d, bv[d]);
                        set(3 * a.0 + d, -bv[d]);
                        if let Dp1Vector::NodePair(b0, b1) = b {
                            set(3 * b1 + d, av[d]);
                            set(3 * b0 + d, -av[d]);
                        }
                    }
                }
            }
        }
    }

    /// Dual ascent `lambda <- lambda + rho c`.
    pub fn multiplier_update(&mut self, c: &[f64]) {
        for (l, &ci) in self.lambda.iter_mut().zip(c) {
            *l += self.rho * ci;
        }
    }

    /// Records the residual of the committed post-inner-solve
    /// configuration; enables [`ConstraintSet::joint_reaction`].
    pub fn set_committed_residual(&mut self, c: &[f64]) {
        self.committed_c = Some(c.to_vec());
    }

    pub fn clear_committed_residual(&mut self) {
        self.committed_c = None;
    }

    pub fn committed_residual(&self) -> Option<&[f64]> {
        self.committed_c.as_deref()
    }

    /// Recovered joint reaction over the joint's CD rows: per component
    /// `F_d = h (lambda_r + rho c_r)`, the force the joint transmits to
    /// the parent (support) side; the child experiences the negative.
    ///
    /// Valid only after a committed step; calling mid-iteration is a
    /// state error.
    pub fn joint_reaction(&self, joint: &Joint, h: f64) -> Result<Vector3<f64>> {
        let c = self.committed_c.as_ref().ok_or_else(|| {
            Error::State("joint_reaction requires a committed (converged) step".into())
        })?;
        let mut f = Vector3::zeros();
        for r in joint.rows.clone() {
            match &self.rows[r] {
                ConstraintRow::CdAnchor { d, .. } | ConstraintRow::CdPair { d, .. } => {
                    f[*d] += h * (self.lambda[r] + self.rho * c[r]);
                }
                ConstraintRow::Dp1 { .. } => {} // orientation rows carry torque, not force
            }
        }
        Ok(f)
    }

    pub fn rows(&self) -> &[ConstraintRow] {
        &self.rows
    }

    /// DOF columns of each row, for Hessian pattern construction.
    pub fn row_dof_lists(&self) -> Vec<Vec<usize>> {
        self.rows.iter().map(row_dofs).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgen;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_tet_mesh() -> Mesh {
        let corners = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        meshgen::t10_from_corner_tets(corners, vec![[0, 1, 2, 3], [1, 2, 3, 4]], 0)
    }

    #[test]
    fn clamp_at_reference_has_zero_residual() {
        let mesh = two_tet_mesh();
        let mut b = ConstraintSetBuilder::new();
        b.clamp_node("clamp", &mesh, 2);
        let set = b.build(mesh.n_dofs(), 10.0).unwrap();
        let state = crate::model::SystemState::at_reference(&mesh);
        let mut c = vec![0.0; set.n_rows()];
        set.eval_constraints(&state.q, 0.0, &mut c);
        assert!(c.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dp1_orthogonal_vectors_zero_residual() {
        let mesh = two_tet_mesh();
        let mut b = ConstraintSetBuilder::new();
        // x-edge (0->1) dotted against a world y vector
        b.push_row(ConstraintRow::Dp1 {
            a: (0, 1),
            b: Dp1Vector::World(Vector3::new(0.0, 1.0, 0.0)),
            c0: 0.0,
        });
        let set = b.build(mesh.n_dofs(), 1.0).unwrap();
        let state = crate::model::SystemState::at_reference(&mesh);
        let mut c = vec![0.0];
        set.eval_constraints(&state.q, 0.0, &mut c);
        assert_eq!(c[0], 0.0);
    }

    #[test]
    fn residual_matches_scalar_oracle() {
        let mesh = two_tet_mesh();
        let mut b = ConstraintSetBuilder::new();
        b.clamp_node("c", &mesh, 0);
        b.spherical("s", &mesh, 1, 4);
        b.push_row(ConstraintRow::Dp1 {
            a: (0, 1),
            b: Dp1Vector::NodePair(2, 3),
            c0: 0.17,
        });
        let set = b.build(mesh.n_dofs(), 1.0).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q: Vec<f64> = (0..mesh.n_dofs()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut c = vec![0.0; set.n_rows()];
        set.eval_constraints(&q, 0.0, &mut c);

        // independent scalar re-implementation
        let p0 = mesh.node_positions_ref[0];
        let off: Vec<f64> = (0..3)
            .map(|d| mesh.node_positions_ref[4][d] - mesh.node_positions_ref[1][d])
            .collect();
        for d in 0..3 {
            assert_relative_eq!(c[d], q[3 * 0 + d] - p0[d], epsilon = 1e-14);
            assert_relative_eq!(c[3 + d], q[3 * 4 + d] - q[3 * 1 + d] - off[d], epsilon = 1e-14);
        }
        let a: Vec<f64> = (0..3).map(|d| q[3 + d] - q[d]).collect();
        let bv: Vec<f64> = (0..3).map(|d| q[9 + d] - q[6 + d]).collect();
        let dot: f64 = (0..3).map(|d| a[d] * bv[d]).sum();
        assert_relative_eq!(c[6], dot - 0.17, epsilon = 1e-13);
    }

    #[test]
    fn anchor_row_is_single_plus_one() {
        let mesh = two_tet_mesh();
        let mut b = ConstraintSetBuilder::new();
        b.clamp_node("c", &mesh, 3);
        let mut set = b.build(mesh.n_dofs(), 1.0).unwrap();
        let state = crate::model::SystemState::at_reference(&mesh);
        set.eval_jacobian(&state.q);
        for d in 0..3 {
            let row = d;
            let (lo, hi) = (
                set.cq().pattern().offsets()[row],
                set.cq().pattern().offsets()[row + 1],
            );
            assert_eq!(hi - lo, 1);
            assert_eq!(set.cq().pattern().columns()[lo], 9 + d);
            assert_eq!(set.cq().values()[lo], 1.0);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mesh = two_tet_mesh();
        let mut b = ConstraintSetBuilder::new();
        b.spherical("s", &mesh, 0, 4);
        b.push_row(ConstraintRow::Dp1 {
            a: (0, 1),
            b: Dp1Vector::NodePair(2, 3),
            c0: 0.0,
        });
        b.push_row(ConstraintRow::Dp1 {
            a: (2, 4),
            b: Dp1Vector::World(Vector3::new(0.3, -0.2, 0.9)),
            c0: 0.1,
        });
        let mut set = b.build(mesh.n_dofs(), 1.0).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q: Vec<f64> = (0..mesh.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            set.eval_jacobian(&q);
            let m = set.n_rows();
            let h = 1e-6;
            let mut cp = vec![0.0; m];
            let mut cm = vec![0.0; m];
            for dof in 0..mesh.n_dofs() {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[dof] += h;
                qm[dof] -= h;
                set.eval_constraints(&qp, 0.0, &mut cp);
                set.eval_constraints(&qm, 0.0, &mut cm);
                for r in 0..m {
                    let fd = (cp[r] - cm[r]) / (2.0 * h);
                    let an = set.cq().get(r, dof);
                    assert!(
                        (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                        "row {r} dof {dof}: fd {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn jacobian_pattern_is_stable_across_evaluations() {
        let mesh = two_tet_mesh();
        let mut b = ConstraintSetBuilder::new();
        b.spherical("s", &mesh, 1, 3);
        b.push_row(ConstraintRow::Dp1 {
            a: (0, 1),
            b: Dp1Vector::NodePair(2, 4),
            c0: 0.0,
        });
        let mut set = b.build(mesh.n_dofs(), 1.0).unwrap();
        let pat = Arc::clone(set.cq().pattern());
        let offsets = pat.offsets().to_vec();
        let columns = pat.columns().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let q: Vec<f64> = (0..mesh.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            set.eval_jacobian(&q);
            assert!(Arc::ptr_eq(set.cq().pattern(), &pat));
        }
        assert_eq!(pat.offsets(), offsets.as_slice());
        assert_eq!(pat.columns(), columns.as_slice());
    }

    #[test]
    fn multiplier_update_examples() {
        let mesh = two_tet_mesh();
        let mut b = ConstraintSetBuilder::new();
        b.clamp_node("c", &mesh, 0);
        let mut set = b.build(mesh.n_dofs(), 10.0).unwrap();

        set.multiplier_update(&[0.0, 0.0, 0.0]);
        assert_eq!(set.lambda, vec![0.0; 3]);

        set.multiplier_update(&[0.1, 0.0, 0.0]);
        assert_relative_eq!(set.lambda[0], 1.0, epsilon = 1e-15);

        // two updates equal one update with summed residuals
        let mut set2 = {
            let mut b = ConstraintSetBuilder::new();
            b.clamp_node("c", &mesh, 0);
            b.build(mesh.n_dofs(), 10.0).unwrap()
        };
        set2.multiplier_update(&[0.06, -0.2, 0.0]);
        set2.multiplier_update(&[0.04, 0.2, 0.0]);
        assert_relative_eq!(set2.lambda[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(set2.lambda[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn joint_row_counts() {
        let mesh = meshgen::t10_box(
            Vector3::zeros(),
            Vector3::new(1.0, 1.0, 1.0),
            (1, 1, 1),
        );
        let mut b = ConstraintSetBuilder::new();
        b.spherical("sph", &mesh, 0, 7);
        b.revolute("rev", &mesh, 0, 7, (0, 2), [(1, 3), (1, 5)]).unwrap();
        let set = b.build(mesh.n_dofs(), 1.0).unwrap();
        let sph = set.joint_named("sph").unwrap();
        let rev = set.joint_named("rev").unwrap();
        assert_eq!(sph.rows.len(), 3);
        assert_eq!(rev.rows.len(), 5);
        // initial configuration: all residuals vanish by construction
        let state = crate::model::SystemState::at_reference(&mesh);
        let mut c = vec![0.0; set.n_rows()];
        set.eval_constraints(&state.q, 0.0, &mut c);
        assert!(c.iter().all(|&x| x.abs() < 1e-14));
    }

    #[test]
    fn degenerate_axis_rejected() {
        let mesh = two_tet_mesh();
        let mut b = ConstraintSetBuilder::new();
        let err = b.revolute("bad", &mesh, 0, 4, (1, 1), [(0, 2), (0, 3)]);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn joint_reaction_requires_committed_step() {
        let mesh = two_tet_mesh();
        let mut b = ConstraintSetBuilder::new();
        b.clamp_node("c", &mesh, 0);
        let mut set = b.build(mesh.n_dofs(), 1e6).unwrap();
        let joint = set.joint_named("c").unwrap().clone();
        assert!(matches!(
            set.joint_reaction(&joint, 1e-3),
            Err(Error::State(_))
        ));
        set.set_committed_residual(&[0.0, 0.0, 1e-9]);
        set.lambda = vec![0.0, 0.0, -981.0 / 1e-3];
        let f = set.joint_reaction(&joint, 1e-3).unwrap();
        assert_relative_eq!(f.z, -981.0 + 1e-3 * 1e6 * 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn reaction_units_balance_a_one_node_system() {
        // A unit point mass pinned by a vertical CD anchor under gravity:
        // at steady state the residual equation gives
        // h (lambda + rho c) = -m g, so the recovered support load is
        // -m g and the constraint force on the node is +m g.
        let m_node = 2.5;
        let g = 9.81;
        let h = 1e-3;
        // residual: 0 = -f_ff + h (lambda + rho c)  with f_ff = -m g
        let lam_plus = -m_node * g / h;
        let reaction = h * lam_plus;
        assert_relative_eq!(reaction, -m_node * g, epsilon = 1e-12);
    }

    #[test]
    fn schedule_shapes() {
        let r = TargetSchedule::Ramp {
            start: 1.0,
            end: 3.0,
            t0: 0.5,
            t1: 1.5,
        };
        assert_eq!(r.eval(0.0), 1.0);
        assert_eq!(r.eval(1.0), 2.0);
        assert_eq!(r.eval(9.0), 3.0);

        let w = TargetSchedule::TriangleWave {
            base: 2.0,
            peak_speed: 0.2,
            period: 0.1,
            t0: 0.0,
            t1: 0.4,
        };
        // displacement amplitude = peak_speed * period / 4 = 5 mm
        let amp = 0.2 * 0.1 / 4.0;
        assert_relative_eq!(w.eval(0.0), 2.0, epsilon = 1e-12);
        assert_relative_eq!(w.eval(0.05), 2.0 + amp, epsilon = 1e-12);
        assert_relative_eq!(w.eval(0.1), 2.0, epsilon = 1e-12);
        // motion ends at the base position after whole periods
        assert_relative_eq!(w.eval(0.4), 2.0, epsilon = 1e-12);
        assert_relative_eq!(w.eval(9.9), 2.0, epsilon = 1e-12);
    }
}
