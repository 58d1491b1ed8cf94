//! Two-stage internal-force evaluation, the augmented-Lagrangian gradient,
//! the body-force vector, and the three-term Newton Hessian assembled into
//! a fixed CSR pattern.
//!
//! Stage 1 evaluates the PK1 stress independently per (element, quadrature
//! point) into a dedicated buffer slot. Stage 2 accumulates nodal
//! contributions; two accumulation strategies are provided:
//!
//! * [`AccumulationMode::Deterministic`] (default for tests) computes
//!   per-element contributions in parallel and reduces them per node in a
//!   fixed precomputed order, so results are bitwise reproducible at any
//!   thread count.
//! * [`AccumulationMode::AtomicScatter`] assigns one task per (element,
//!   local shape function) and scatters with atomic additions, matching
//!   the GPU-style decomposition; summation order is scheduling-dependent.

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::materials::{self, MaterialParams, Tangent};
use crate::model::{Mesh, T10_NODES};
use crate::precompute::{self, ElementPrecomp, PrecompConfig};
use crate::sparse::{CsrMatrix, CsrPattern};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccumulationMode {
    #[default]
    Deterministic,
    AtomicScatter,
}

/// Per-(element, quadrature point) PK1 stress storage; slot `e * n_qp + q`
/// is written exactly once per evaluation pass.
#[derive(Debug, Clone)]
pub struct StressBuffer {
    slots: Vec<Matrix3<f64>>,
    n_qp: usize,
}

impl StressBuffer {
    pub fn new(n_elements: usize, n_qp: usize) -> Self {
        StressBuffer {
            slots: vec![Matrix3::zeros(); n_elements * n_qp],
            n_qp,
        }
    }

    pub fn slot_index(&self, e: usize, q: usize) -> usize {
        e * self.n_qp + q
    }

    pub fn get(&self, e: usize, q: usize) -> &Matrix3<f64> {
        &self.slots[e * self.n_qp + q]
    }

    pub fn as_slice(&self) -> &[Matrix3<f64>] {
        &self.slots
    }
}

/// Mesh, precomputed reference data, materials, and the constant mass
/// matrix: everything the per-step kernels read but never write.
#[derive(Debug)]
pub struct FeModel {
    pub mesh: Mesh,
    pub precomp: ElementPrecomp,
    /// One material per body.
    pub materials: Vec<MaterialParams>,
    pub coef_pattern: Arc<CsrPattern>,
    /// Coefficient-level consistent mass (kg).
    pub mass: CsrMatrix,
    /// Row sums of the mass matrix (kg), for diagnostics.
    pub lumped_masses: Vec<f64>,
    /// Owner body of each element.
    pub elem_body: Vec<usize>,
    // fixed node -> (element, local index) incidence for the
    // deterministic reduction
    incidence_offsets: Vec<usize>,
    incidence: Vec<(u32, u8)>,
}

impl FeModel {
    pub fn new(mesh: Mesh, materials: Vec<MaterialParams>, cfg: PrecompConfig) -> Result<Self> {
        mesh.validate()?;
        if materials.len() != mesh.n_bodies() {
            return Err(Error::usage(format!(
                "{} materials for {} bodies",
                materials.len(),
                mesh.n_bodies()
            )));
        }
        let densities: Vec<f64> = materials.iter().map(|m| m.density).collect();
        let precomp = precompute::precompute_elements(&mesh, &densities, cfg)?;
        let coef_pattern = precompute::coefficient_pattern(&mesh)?;
        let mass = precompute::assemble_mass(&mesh, &precomp, &coef_pattern)?;
        let lumped_masses = precompute::lumped_masses(&mass);
        let elem_body: Vec<usize> = mesh
            .elements
            .iter()
            .map(|el| mesh.body_of_node[el[0]])
            .collect();

        let mut counts = vec![0usize; mesh.n_nodes()];
        for el in &mesh.elements {
            for &i in el {
                counts[i] += 1;
            }
        }
        let mut incidence_offsets = vec![0usize; mesh.n_nodes() + 1];
        for i in 0..mesh.n_nodes() {
            incidence_offsets[i + 1] = incidence_offsets[i] + counts[i];
        }
        let mut cursor = incidence_offsets.clone();
        let mut incidence = vec![(0u32, 0u8); incidence_offsets[mesh.n_nodes()]];
        for (e, el) in mesh.elements.iter().enumerate() {
            for (a, &i) in el.iter().enumerate() {
                incidence[cursor[i]] = (e as u32, a as u8);
                cursor[i] += 1;
            }
        }

        Ok(FeModel {
            mesh,
            precomp,
            materials,
            coef_pattern,
            mass,
            lumped_masses,
            elem_body,
            incidence_offsets,
            incidence,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    pub fn total_mass(&self) -> f64 {
        self.lumped_masses.iter().sum()
    }

    pub fn body_mass(&self, body: usize) -> f64 {
        self.mesh
            .elements
            .iter()
            .enumerate()
            .filter(|(e, _)| self.elem_body[*e] == body)
            .map(|(e, _)| {
                self.precomp.elem_mass[e]
                    .iter()
                    .flatten()
                    .sum::<f64>()
            })
            .sum()
    }

    fn gather_coords(&self, q: &[f64], e: usize) -> [Vector3<f64>; T10_NODES] {
        let el = &self.mesh.elements[e];
        std::array::from_fn(|a| {
            let i = el[a];
            Vector3::new(q[3 * i], q[3 * i + 1], q[3 * i + 2])
        })
    }
}

/// Reusable buffers for the per-step kernels; no allocation happens inside
/// the inner solver loops once this is built.
#[derive(Debug)]
pub struct AssemblyWorkspace {
    pub stress: StressBuffer,
    elem_force: Vec<[Vector3<f64>; T10_NODES]>,
    atomic_bits: Vec<AtomicU64>,
}

impl AssemblyWorkspace {
    pub fn new(model: &FeModel) -> Self {
        let n_el = model.mesh.n_elements();
        AssemblyWorkspace {
            stress: StressBuffer::new(n_el, model.precomp.n_qp()),
            elem_force: vec![[Vector3::zeros(); T10_NODES]; n_el],
            atomic_bits: (0..model.n_dofs()).map(|_| AtomicU64::new(0)).collect(),
        }
    }
}

fn atomic_add(slot: &AtomicU64, val: f64) {
    let mut cur = slot.load(Ordering::Relaxed);
    loop {
        let new = (f64::from_bits(cur) + val).to_bits();
        match slot.compare_exchange_weak(cur, new, Ordering::Relaxed, Ordering::Relaxed) {
            Ok(_) => return,
            Err(c) => cur = c,
        }
    }
}

/// Stage 1: evaluates `P = P_el (+ P_vis)` at every (element, quadrature
/// point) into its dedicated buffer slot. Fully parallel, disjoint writes.
pub fn compute_stress_stage1(
    model: &FeModel,
    q: &[f64],
    v: &[f64],
    buf: &mut StressBuffer,
) -> Result<()> {
    let n_qp = model.precomp.n_qp();
    let kernel = |slot: usize, out: &mut Matrix3<f64>| -> Result<()> {
        let e = slot / n_qp;
        let qi = slot % n_qp;
        let mat = &model.materials[model.elem_body[e]];
        let coords = model.gather_coords(q, e);
        let grads = &model.precomp.ref_grads[slot];
        let f = materials::deformation_gradient(&coords, grads);
        let mut p = materials::pk1(&f, mat).map_err(|_| Error::InvertedElement {
            element: e,
            qp: qi,
            detail: format!("det F = {:.3e}", f.determinant()),
        })?;
        if mat.has_damping() {
            let vels = model.gather_coords(v, e);
            let fdot = materials::deformation_rate(&vels, grads);
            p += materials::pk1_viscous(&f, &fdot, mat);
        }
        *out = p;
        Ok(())
    };
    if buf.slots.len() < PAR_THRESHOLD {
        for (slot, out) in buf.slots.iter_mut().enumerate() {
            kernel(slot, out)?;
        }
        Ok(())
    } else {
        buf.slots
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(slot, out)| kernel(slot, out))
    }
}

/// Stage 2: `f_a^(e) = sum_q P^(e,q) grad_X N_a J0 w_q`, accumulated over
/// all elements sharing each coefficient. Reads the stress buffer filled
/// by stage 1 inside the workspace.
pub fn compute_internal_force_stage2(
    model: &FeModel,
    ws: &mut AssemblyWorkspace,
    mode: AccumulationMode,
    f_int: &mut [f64],
) {
    debug_assert_eq!(f_int.len(), model.n_dofs());
    let n_qp = model.precomp.n_qp();
    let weights = &model.precomp.rule.weights;
    let AssemblyWorkspace {
        stress,
        elem_force,
        atomic_bits,
    } = ws;
    let buf = &*stress;
    match mode {
        AccumulationMode::Deterministic => {
            // per-element local vectors in parallel (disjoint writes)
            let elem_kernel = |e: usize, local: &mut [Vector3<f64>; T10_NODES]| {
                *local = [Vector3::zeros(); T10_NODES];
                for qi in 0..n_qp {
                    let slot = e * n_qp + qi;
                    let p = &buf.slots[slot];
                    let scale = model.precomp.j0[slot] * weights[qi];
                    for a in 0..T10_NODES {
                        local[a] += p * model.precomp.ref_grads[slot][a] * scale;
                    }
                }
            };
            if elem_force.len() < PAR_THRESHOLD {
                for (e, local) in elem_force.iter_mut().enumerate() {
                    elem_kernel(e, local);
                }
            } else {
                elem_force
                    .par_iter_mut()
                    .enumerate()
                    .for_each(|(e, local)| elem_kernel(e, local));
            }
            // fixed-order reduction, one writer per node
            let offsets = &model.incidence_offsets;
            let incidence = &model.incidence;
            let elem_force = &*elem_force;
            let node_kernel = |node: usize, out: &mut [f64]| {
                let mut acc = Vector3::zeros();
                for k in offsets[node]..offsets[node + 1] {
                    let (e, a) = incidence[k];
                    acc += elem_force[e as usize][a as usize];
                }
                out[0] = acc.x;
                out[1] = acc.y;
                out[2] = acc.z;
            };
            if f_int.len() < 3 * PAR_THRESHOLD {
                for (node, out) in f_int.chunks_mut(3).enumerate() {
                    node_kernel(node, out);
                }
            } else {
                f_int
                    .par_chunks_mut(3)
                    .enumerate()
                    .for_each(|(node, out)| node_kernel(node, out));
            }
        }
        AccumulationMode::AtomicScatter => {
            for bits in atomic_bits.iter() {
                bits.store(0, Ordering::Relaxed);
            }
            let atomic = &*atomic_bits;
            // one task per (element, local shape function), quadrature
            // loop inside
            (0..model.mesh.n_elements() * T10_NODES)
                .into_par_iter()
                .for_each(|task| {
                    let e = task / T10_NODES;
                    let a = task % T10_NODES;
                    let mut acc = Vector3::zeros();
                    for qi in 0..n_qp {
                        let slot = e * n_qp + qi;
                        let scale = model.precomp.j0[slot] * weights[qi];
                        acc += buf.slots[slot] * model.precomp.ref_grads[slot][a] * scale;
                    }
                    let node = model.mesh.elements[e][a];
                    for d in 0..3 {
                        atomic_add(&atomic[3 * node + d], acc[d]);
                    }
                });
            for (out, bits) in f_int.iter_mut().zip(atomic_bits.iter()) {
                *out = f64::from_bits(bits.load(Ordering::Relaxed));
            }
        }
    }
}

/// Consistent-mass body force: `f_ff[3I+d] = g_d sum_J M_IJ`.
pub fn compute_force_field(mass: &CsrMatrix, gravity: &Vector3<f64>, f_ff: &mut [f64]) {
    debug_assert_eq!(f_ff.len(), 3 * mass.n_rows());
    for i in 0..mass.n_rows() {
        let p = mass.pattern();
        let (lo, hi) = (p.offsets()[i], p.offsets()[i + 1]);
        let row_mass: f64 = mass.values()[lo..hi].iter().sum();
        for d in 0..3 {
            f_ff[3 * i + d] = gravity[d] * row_mass;
        }
    }
}

/// Augmented-Lagrangian gradient
/// `g = M (v - v_n) / h + f_int - f_ext - f_ff + h C_q^T (lambda + rho c)`.
/// One independent writer per DOF; no accumulation conflicts.
pub fn compute_gradient(
    model: &FeModel,
    v: &[f64],
    v_n: &[f64],
    f_int: &[f64],
    f_ext: &[f64],
    f_ff: &[f64],
    constraint: Option<(&CsrMatrix, &[f64])>,
    h: f64,
    g: &mut [f64],
) -> Result<()> {
    let n = model.n_dofs();
    if [v.len(), v_n.len(), f_int.len(), f_ext.len(), f_ff.len(), g.len()]
        .iter()
        .any(|&l| l != n)
    {
        return Err(Error::usage("compute_gradient dimension mismatch"));
    }
    if let Some((cqt, lrc)) = constraint {
        if cqt.n_rows() != n || cqt.n_cols() != lrc.len() {
            return Err(Error::usage("constraint term dimension mismatch"));
        }
    }
    let mass = &model.mass;
    let kernel = |r: usize, out: &mut f64| {
        let (node, d) = (r / 3, r % 3);
        let p = mass.pattern();
        let mut inertia = 0.0;
        for k in p.offsets()[node]..p.offsets()[node + 1] {
            let j = p.columns()[k];
            inertia += mass.values()[k] * (v[3 * j + d] - v_n[3 * j + d]);
        }
        let mut acc = inertia / h + f_int[r] - f_ext[r] - f_ff[r];
        if let Some((cqt, lrc)) = constraint {
            let tp = cqt.pattern();
            for k in tp.offsets()[r]..tp.offsets()[r + 1] {
                acc += h * cqt.values()[k] * lrc[tp.columns()[k]];
            }
        }
        *out = acc;
    };
    if n < 3 * PAR_THRESHOLD {
        for (r, out) in g.iter_mut().enumerate() {
            kernel(r, out);
        }
    } else {
        g.par_iter_mut().enumerate().for_each(|(r, out)| kernel(r, out));
    }
    Ok(())
}

/// Total elastic strain energy `Pi_int(q)` integrated over the mesh.
pub fn total_strain_energy(model: &FeModel, q: &[f64]) -> Result<f64> {
    let n_qp = model.precomp.n_qp();
    let weights = &model.precomp.rule.weights;
    let mut total = 0.0;
    for e in 0..model.mesh.n_elements() {
        let mat = &model.materials[model.elem_body[e]];
        let coords = model.gather_coords(q, e);
        for qi in 0..n_qp {
            let slot = e * n_qp + qi;
            let f = materials::deformation_gradient(&coords, &model.precomp.ref_grads[slot]);
            total += materials::strain_energy(&f, mat)? * model.precomp.j0[slot] * weights[qi];
        }
    }
    Ok(total)
}

/// Augmented cost whose velocity gradient is [`compute_gradient`]:
/// `Phi = (v-v_n)^T M (v-v_n)/(2h) + Pi_int(q_n + h v)/h - f_ext.v
///  - f_ff.v + lambda.c + rho/2 |c|^2`.
/// Viscous forces are non-potential and excluded; oracles use zero
/// damping.
#[allow(clippy::too_many_arguments)]
pub fn augmented_cost(
    model: &FeModel,
    constraints: Option<&ConstraintSet>,
    q_n: &[f64],
    v: &[f64],
    v_n: &[f64],
    f_ext: &[f64],
    f_ff: &[f64],
    h: f64,
    t_next: f64,
) -> Result<f64> {
    let n = model.n_dofs();
    let q = crate::model::step_map(q_n, v, h)?;
    let mut phi = total_strain_energy(model, &q)? / h;
    // inertia quadratic form
    let mass = &model.mass;
    for node in 0..model.n_nodes() {
        let p = mass.pattern();
        for k in p.offsets()[node]..p.offsets()[node + 1] {
            let j = p.columns()[k];
            for d in 0..3 {
                phi += 0.5 / h
                    * mass.values()[k]
                    * (v[3 * node + d] - v_n[3 * node + d])
                    * (v[3 * j + d] - v_n[3 * j + d]);
            }
        }
    }
    for r in 0..n {
        phi -= (f_ext[r] + f_ff[r]) * v[r];
    }
    if let Some(set) = constraints {
        let mut c = vec![0.0; set.n_rows()];
        set.eval_constraints(&q, t_next, &mut c);
        for (r, &ci) in c.iter().enumerate() {
            phi += set.lambda[r] * ci + 0.5 * set.rho * ci * ci;
        }
    }
    Ok(phi)
}

/// DOF-level Hessian storage with precomputed scatter indices. The
/// pattern (lifted element adjacency plus constraint-induced couplings)
/// is fixed for the simulation.
#[derive(Debug)]
pub struct HessianWorkspace {
    pub h: CsrMatrix,
    /// nnz index of H(3I+d, 3J+d) for each mass nnz (I, J) and d.
    mass_scatter: Vec<[u32; 3]>,
    /// nnz indices of each element's 30 x 30 block, row-major.
    elem_scatter: Vec<u32>,
    /// per constraint row: nnz indices for all (dof_i, dof_j) pairs.
    constraint_scatter: Vec<u32>,
    constraint_offsets: Vec<usize>,
    /// per-element dense blocks for the deterministic path
    elem_blocks: Vec<f64>,
    atomic_bits: Vec<AtomicU64>,
}

/// Below this many independent work items the kernels run serially;
/// rayon task overhead dominates the arithmetic on desk-scale meshes.
const PAR_THRESHOLD: usize = 4096;

const BLOCK: usize = 3 * T10_NODES; // 30 for T10

impl HessianWorkspace {
    pub fn new(model: &FeModel, constraints: &ConstraintSet) -> Result<Self> {
        let n = model.n_dofs();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for node in 0..model.n_nodes() {
            for &j in model.coef_pattern.row_cols(node) {
                for d in 0..3 {
                    for e in 0..3 {
                        pairs.push((3 * node + d, 3 * j + e));
                    }
                }
            }
        }
        let row_dofs = constraints.row_dof_lists();
        for dofs in &row_dofs {
            for &i in dofs {
                for &j in dofs {
                    pairs.push((i, j));
                }
            }
        }
        let pattern = Arc::new(CsrPattern::build(pairs, n)?);
        let h = CsrMatrix::zeros(Arc::clone(&pattern));

        let lookup = |r: usize, c: usize| -> Result<u32> {
            pattern
                .nnz_index(r, c)
                .map(|k| k as u32)
                .ok_or_else(|| Error::Structural(format!("H pattern missing ({r}, {c})")))
        };

        let mut mass_scatter = Vec::with_capacity(model.coef_pattern.nnz());
        for i in 0..model.n_nodes() {
            for &j in model.coef_pattern.row_cols(i) {
                let mut idx = [0u32; 3];
                for d in 0..3 {
                    idx[d] = lookup(3 * i + d, 3 * j + d)?;
                }
                mass_scatter.push(idx);
            }
        }

        let n_el = model.mesh.n_elements();
        let mut elem_scatter = vec![0u32; n_el * BLOCK * BLOCK];
        for (e, el) in model.mesh.elements.iter().enumerate() {
            for a in 0..T10_NODES {
                for d in 0..3 {
                    for b in 0..T10_NODES {
                        for f in 0..3 {
                            let r = 3 * el[a] + d;
                            let c = 3 * el[b] + f;
                            elem_scatter[e * BLOCK * BLOCK + (3 * a + d) * BLOCK + 3 * b + f] =
                                lookup(r, c)?;
                        }
                    }
                }
            }
        }

        let mut constraint_scatter = Vec::new();
        let mut constraint_offsets = vec![0usize];
        for dofs in &row_dofs {
            for &i in dofs {
                for &j in dofs {
                    constraint_scatter.push(lookup(i, j)?);
                }
            }
            constraint_offsets.push(constraint_scatter.len());
        }

        Ok(HessianWorkspace {
            h,
            mass_scatter,
            elem_scatter,
            constraint_scatter,
            constraint_offsets,
            elem_blocks: vec![0.0; n_el * BLOCK * BLOCK],
            atomic_bits: (0..pattern.nnz()).map(|_| AtomicU64::new(0)).collect(),
        })
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        self.h.pattern()
    }
}

/// Assembles `H = M/h + h K_t + h^2 rho C_q^T C_q` into the workspace.
/// The mass contributes only the d = e diagonal of each 3x3 block
/// (isotropic scaling); `K_t` is accumulated per (element, quadrature
/// point) from the material tangent contracted with reference gradients.
pub fn assemble_hessian(
    ws: &mut HessianWorkspace,
    model: &FeModel,
    constraints: &ConstraintSet,
    q: &[f64],
    h: f64,
    mode: AccumulationMode,
) -> Result<()> {
    ws.h.set_zero();

    // element tangent blocks, computed in parallel with disjoint writes
    let n_qp = model.precomp.n_qp();
    let weights = &model.precomp.rule.weights;
    let block_kernel = |e: usize, block: &mut [f64]| -> Result<()> {
            block.fill(0.0);
            let mat = &model.materials[model.elem_body[e]];
            let coords = model.gather_coords(q, e);
            for qi in 0..n_qp {
                let slot = e * n_qp + qi;
                let grads = &model.precomp.ref_grads[slot];
                let f = materials::deformation_gradient(&coords, grads);
                let scale = model.precomp.j0[slot] * weights[qi];
                if mat.model == crate::materials::MaterialModel::Svk {
                    accumulate_svk_block(block, &f, grads, mat, scale);
                    continue;
                }
                let tangent: Tangent =
                    materials::tangent(&f, mat).map_err(|_| Error::InvertedElement {
                        element: e,
                        qp: qi,
                        detail: format!("tangent at det F = {:.3e}", f.determinant()),
                    })?;
                for a in 0..T10_NODES {
                    for b in 0..T10_NODES {
                        // [K_ab]_de = A_dJeL gA_J gB_L * j0 w
                        for d in 0..3 {
                            for ecomp in 0..3 {
                                let mut s = 0.0;
                                for jj in 0..3 {
                                    for ll in 0..3 {
                                        s += tangent.0[d][jj][ecomp][ll]
                                            * grads[a][jj]
                                            * grads[b][ll];
                                    }
                                }
                                block[(3 * a + d) * BLOCK + 3 * b + ecomp] += s * scale;
                            }
                        }
                    }
                }
            }
            Ok(())
        };
    if model.mesh.n_elements() < 256 {
        for (e, block) in ws.elem_blocks.chunks_mut(BLOCK * BLOCK).enumerate() {
            block_kernel(e, block)?;
        }
    } else {
        ws.elem_blocks
            .par_chunks_mut(BLOCK * BLOCK)
            .enumerate()
            .try_for_each(|(e, block)| block_kernel(e, block))?;
    }

    match mode {
        AccumulationMode::Deterministic => {
            let vals = ws.h.values_mut();
            for e in 0..model.mesh.n_elements() {
                let block = &ws.elem_blocks[e * BLOCK * BLOCK..(e + 1) * BLOCK * BLOCK];
                let scatter = &ws.elem_scatter[e * BLOCK * BLOCK..(e + 1) * BLOCK * BLOCK];
                for (idx, &v) in scatter.iter().zip(block) {
                    vals[*idx as usize] += h * v;
                }
            }
        }
        AccumulationMode::AtomicScatter => {
            for bits in &ws.atomic_bits {
                bits.store(0, Ordering::Relaxed);
            }
            let atomic = &ws.atomic_bits;
            let blocks = &ws.elem_blocks;
            let scatter = &ws.elem_scatter;
            (0..model.mesh.n_elements()).into_par_iter().for_each(|e| {
                let block = &blocks[e * BLOCK * BLOCK..(e + 1) * BLOCK * BLOCK];
                let idx = &scatter[e * BLOCK * BLOCK..(e + 1) * BLOCK * BLOCK];
                for (k, &v) in idx.iter().zip(block) {
                    atomic_add(&atomic[*k as usize], h * v);
                }
            });
            let vals = ws.h.values_mut();
            for (out, bits) in vals.iter_mut().zip(&ws.atomic_bits) {
                *out += f64::from_bits(bits.load(Ordering::Relaxed));
            }
        }
    }

    // mass term: only diagonal components of each 3x3 block
    {
        let vals = ws.h.values_mut();
        let mvals = model.mass.values();
        for (k, idx) in ws.mass_scatter.iter().enumerate() {
            let m = mvals[k] / h;
            for d in 0..3 {
                vals[idx[d] as usize] += m;
            }
        }
    }

    // constraint penalty term: one pass per constraint row
    if !constraints.is_empty() {
        let cq = constraints.cq();
        let rho = constraints.rho;
        let vals = ws.h.values_mut();
        for r in 0..constraints.n_rows() {
            let p = cq.pattern();
            let (lo, hi) = (p.offsets()[r], p.offsets()[r + 1]);
            let row_vals = &cq.values()[lo..hi];
            let mut cursor = ws.constraint_offsets[r];
            for &vi in row_vals {
                for &vj in row_vals {
                    vals[ws.constraint_scatter[cursor] as usize] += h * h * rho * vi * vj;
                    cursor += 1;
                }
            }
            debug_assert_eq!(cursor, ws.constraint_offsets[r + 1]);
        }
    }
    Ok(())
}

/// SVK tangent contraction without materializing the rank-4 tensor.
/// From `A_dJeL = delta_de S_JL + lambda F_dJ F_eL
///              + mu (F_dL F_eJ + (F F^T)_de delta_JL)`:
/// `K_de = (gA . S gB) delta_de + lambda (F gA)_d (F gB)_e
///        + mu [(F gB)_d (F gA)_e + (gA . gB) (F F^T)_de]`.
fn accumulate_svk_block(
    block: &mut [f64],
    f: &Matrix3<f64>,
    grads: &[Vector3<f64>; T10_NODES],
    mat: &MaterialParams,
    scale: f64,
) {
    let (lambda, mu) = mat.lame();
    let e_gl = (f.transpose() * f - Matrix3::identity()) * 0.5;
    let s = Matrix3::identity() * (lambda * e_gl.trace()) + e_gl * (2.0 * mu);
    let fft = f * f.transpose();
    let fg: [Vector3<f64>; T10_NODES] = std::array::from_fn(|a| f * grads[a]);
    let sg: [Vector3<f64>; T10_NODES] = std::array::from_fn(|a| s * grads[a]);
    for a in 0..T10_NODES {
        for b in 0..T10_NODES {
            let gsg = grads[a].dot(&sg[b]) * scale;
            let gg = grads[a].dot(&grads[b]) * mu * scale;
            let row = (3 * a) * BLOCK + 3 * b;
            for d in 0..3 {
                for ecomp in 0..3 {
                    let mut v = lambda * scale * fg[a][d] * fg[b][ecomp]
                        + fg[b][d] * fg[a][ecomp] * scale * mu
                        + gg * fft[(d, ecomp)];
                    if d == ecomp {
                        v += gsg;
                    }
                    block[row + d * BLOCK + ecomp] += v;
                }
            }
        }
    }
}

/// Max relative asymmetry of a structurally symmetric CSR matrix, for
/// invariant checks.
pub fn symmetry_error(m: &CsrMatrix) -> f64 {
    let p = m.pattern();
    let mut worst: f64 = 0.0;
    let scale = m
        .values()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-300);
    for r in 0..p.n_rows() {
        for k in p.offsets()[r]..p.offsets()[r + 1] {
            let c = p.columns()[k];
            let v = m.values()[k];
            let vt = m.get(c, r);
            worst = worst.max((v - vt).abs() / scale);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintSetBuilder;
    use crate::meshgen;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_element_model(damping: bool) -> FeModel {
        let corners = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        let mesh = meshgen::t10_from_corner_tets(corners, vec![[0, 1, 2, 3], [1, 2, 3, 4]], 0);
        let mut mat = MaterialParams::svk(5.0e6, 0.3, 1200.0);
        if damping {
            mat = mat.with_damping(100.0, 50.0);
        }
        FeModel::new(mesh, vec![mat], PrecompConfig::default()).unwrap()
    }

    fn random_state(model: &FeModel, rng: &mut impl Rng, scale: f64) -> (Vec<f64>, Vec<f64>) {
        let state = crate::model::SystemState::at_reference(&model.mesh);
        let q: Vec<f64> = state
            .q
            .iter()
            .map(|x| x + rng.gen_range(-scale..scale))
            .collect();
        let v: Vec<f64> = (0..model.n_dofs())
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        (q, v)
    }

    #[test]
    fn stage1_reference_state_is_stress_free() {
        let model = two_element_model(false);
        let state = crate::model::SystemState::at_reference(&model.mesh);
        let mut ws = AssemblyWorkspace::new(&model);
        compute_stress_stage1(&model, &state.q, &state.v, &mut ws.stress).unwrap();
        for p in ws.stress.as_slice() {
            assert!(p.norm() < 1e-8);
        }
    }

    #[test]
    fn stage1_slot_layout_is_e_nqp_plus_q() {
        let model = two_element_model(false);
        let ws = AssemblyWorkspace::new(&model);
        assert_eq!(model.precomp.n_qp(), 5, "five-point rule for T10");
        assert_eq!(ws.stress.slot_index(1, 3), 8);
        assert_eq!(ws.stress.as_slice().len(), 10);
    }

    #[test]
    fn stage1_uniaxial_matches_material_kernel() {
        let mesh = meshgen::single_tet();
        let mat = MaterialParams::svk(1.0e7, 0.3, 1000.0);
        let model = FeModel::new(mesh, vec![mat], PrecompConfig::default()).unwrap();
        let state = crate::model::SystemState::at_reference(&model.mesh);
        let stretch = 1.15;
        let q: Vec<f64> = state
            .q
            .iter()
            .enumerate()
            .map(|(i, x)| if i % 3 == 0 { x * stretch } else { *x })
            .collect();
        let mut ws = AssemblyWorkspace::new(&model);
        compute_stress_stage1(&model, &q, &state.v, &mut ws.stress).unwrap();
        let f = Matrix3::from_diagonal(&Vector3::new(stretch, 1.0, 1.0));
        let expected = materials::pk1_svk(&f, &mat);
        for qi in 0..model.precomp.n_qp() {
            assert!((ws.stress.get(0, qi) - expected).norm() < 1e-8 * expected.norm());
        }
    }

    #[test]
    fn stage2_zero_stress_gives_zero_force() {
        let model = two_element_model(false);
        let mut ws = AssemblyWorkspace::new(&model);
        let mut f_int = vec![1.0; model.n_dofs()];
        compute_internal_force_stage2(&model, &mut ws, AccumulationMode::Deterministic, &mut f_int);
        assert!(f_int.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn internal_force_is_translation_invariant() {
        let model = two_element_model(false);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (q, v) = random_state(&model, &mut rng, 0.05);
        let mut ws = AssemblyWorkspace::new(&model);
        let mut f1 = vec![0.0; model.n_dofs()];
        compute_stress_stage1(&model, &q, &v, &mut ws.stress).unwrap();
        compute_internal_force_stage2(&model, &mut ws, AccumulationMode::Deterministic, &mut f1);

        let shift = Vector3::new(3.1, -2.2, 0.7);
        let q2: Vec<f64> = q
            .iter()
            .enumerate()
            .map(|(i, x)| x + shift[i % 3])
            .collect();
        let mut f2 = vec![0.0; model.n_dofs()];
        compute_stress_stage1(&model, &q2, &v, &mut ws.stress).unwrap();
        compute_internal_force_stage2(&model, &mut ws, AccumulationMode::Deterministic, &mut f2);

        let scale = f1.iter().fold(0.0f64, |a: f64, x: &f64| a.max(x.abs())).max(1.0);
        for (a, b) in f1.iter().zip(&f2) {
            assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn internal_force_matches_fd_of_energy() {
        let model = two_element_model(false);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (q, _) = random_state(&model, &mut rng, 0.03);
        let v0 = vec![0.0; model.n_dofs()];
        let mut ws = AssemblyWorkspace::new(&model);
        compute_stress_stage1(&model, &q, &v0, &mut ws.stress).unwrap();
        let mut f_int = vec![0.0; model.n_dofs()];
        compute_internal_force_stage2(&model, &mut ws, AccumulationMode::Deterministic, &mut f_int);

        let h = 1e-6;
        let norm: f64 = f_int.iter().map(|x| x * x).sum::<f64>().sqrt();
        for dof in 0..model.n_dofs() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[dof] += h;
            qm[dof] -= h;
            let fd = (total_strain_energy(&model, &qp).unwrap()
                - total_strain_energy(&model, &qm).unwrap())
                / (2.0 * h);
            assert!(
                (fd - f_int[dof]).abs() <= 1e-5 * norm.max(1.0),
                "dof {dof}: fd {fd} vs {}",
                f_int[dof]
            );
        }
    }

    #[test]
    fn accumulation_modes_agree() {
        let model = two_element_model(true);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (q, v) = random_state(&model, &mut rng, 0.05);
        let mut ws = AssemblyWorkspace::new(&model);
        compute_stress_stage1(&model, &q, &v, &mut ws.stress).unwrap();
        let mut fd = vec![0.0; model.n_dofs()];
        let mut fa = vec![0.0; model.n_dofs()];
        compute_internal_force_stage2(&model, &mut ws, AccumulationMode::Deterministic, &mut fd);
        compute_internal_force_stage2(&model, &mut ws, AccumulationMode::AtomicScatter, &mut fa);
        let scale: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, b) in fd.iter().zip(&fa) {
            assert!((a - b).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn deterministic_mode_is_bitwise_reproducible() {
        let model = two_element_model(true);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (q, v) = random_state(&model, &mut rng, 0.05);
        let mut ws = AssemblyWorkspace::new(&model);
        let mut runs: Vec<Vec<f64>> = Vec::new();
        for _ in 0..3 {
            compute_stress_stage1(&model, &q, &v, &mut ws.stress).unwrap();
            let mut f = vec![0.0; model.n_dofs()];
            compute_internal_force_stage2(&model, &mut ws, AccumulationMode::Deterministic, &mut f);
            runs.push(f);
        }
        assert_eq!(runs[0], runs[1]);
        assert_eq!(runs[1], runs[2]);
    }

    #[test]
    fn force_field_examples() {
        let model = two_element_model(false);
        let mut f_ff = vec![0.0; model.n_dofs()];
        compute_force_field(&model.mass, &Vector3::zeros(), &mut f_ff);
        assert!(f_ff.iter().all(|&x| x == 0.0));

        let g = Vector3::new(0.0, 0.0, -9.81);
        compute_force_field(&model.mass, &g, &mut f_ff);
        let total_z: f64 = f_ff.iter().skip(2).step_by(3).sum();
        assert_relative_eq!(total_z, -9.81 * model.total_mass(), max_relative = 1e-12);

        // dense oracle on the single tet
        let mesh = meshgen::single_tet();
        let mat = MaterialParams::svk(1e6, 0.3, 321.0);
        let m1 = FeModel::new(mesh, vec![mat], PrecompConfig::default()).unwrap();
        let mut ff = vec![0.0; m1.n_dofs()];
        compute_force_field(&m1.mass, &g, &mut ff);
        for i in 0..m1.n_nodes() {
            let row: f64 = (0..m1.n_nodes()).map(|j| m1.mass.get(i, j)).sum();
            assert_relative_eq!(ff[3 * i + 2], -9.81 * row, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_zero_at_rest_reference() {
        let model = two_element_model(false);
        let state = crate::model::SystemState::at_reference(&model.mesh);
        let n = model.n_dofs();
        let zeros = vec![0.0; n];
        let mut ws = AssemblyWorkspace::new(&model);
        compute_stress_stage1(&model, &state.q, &state.v, &mut ws.stress).unwrap();
        let mut f_int = vec![0.0; n];
        compute_internal_force_stage2(&model, &mut ws, AccumulationMode::Deterministic, &mut f_int);
        let mut g = vec![0.0; n];
        compute_gradient(&model, &state.v, &state.v, &f_int, &zeros, &zeros, None, 1e-3, &mut g)
            .unwrap();
        assert!(g.iter().all(|&x| x.abs() < 1e-8));
    }

    #[test]
    fn gradient_pure_inertia_matches_spmv() {
        let model = two_element_model(false);
        let n = model.n_dofs();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v_n: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let zeros = vec![0.0; n];
        let h = 2e-3;
        let mut g = vec![0.0; n];
        compute_gradient(&model, &v, &v_n, &zeros, &zeros, &zeros, None, h, &mut g).unwrap();

        // oracle: coefficient-level spmv per component
        let n_nodes = model.n_nodes();
        for d in 0..3 {
            let dv: Vec<f64> = (0..n_nodes).map(|i| v[3 * i + d] - v_n[3 * i + d]).collect();
            let mut y = vec![0.0; n_nodes];
            model.mass.spmv(&dv, &mut y).unwrap();
            for i in 0..n_nodes {
                assert_relative_eq!(g[3 * i + d], y[i] / h, max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_fd_of_augmented_cost() {
        // 2-element mesh with one clamp, eta = 0; the module's primary
        // oracle.
        let model = two_element_model(false);
        let n = model.n_dofs();
        let mut b = ConstraintSetBuilder::new();
        b.clamp_node("clamp", &model.mesh, 0);
        let mut set = b.build(n, 1e4).unwrap();
        set.lambda = vec![3.0, -2.0, 1.0];

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let state = crate::model::SystemState::at_reference(&model.mesh);
        let h = 1e-3;
        let mut ws = AssemblyWorkspace::new(&model);

        for _ in 0..5 {
            let (qn_off, v) = random_state(&model, &mut rng, 0.02);
            let v_n: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.02..0.02)).collect();
            let f_ext: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let f_ff: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let q_n = qn_off;
            let t_next = state.t + h;

            let q = crate::model::step_map(&q_n, &v, h).unwrap();
            compute_stress_stage1(&model, &q, &v, &mut ws.stress).unwrap();
            let mut f_int = vec![0.0; n];
            compute_internal_force_stage2(&model, &mut ws, AccumulationMode::Deterministic, &mut f_int);
            set.eval_jacobian(&q);
            let mut c = vec![0.0; set.n_rows()];
            set.eval_constraints(&q, t_next, &mut c);
            let lrc: Vec<f64> = set
                .lambda
                .iter()
                .zip(&c)
                .map(|(l, ci)| l + set.rho * ci)
                .collect();
            let mut g = vec![0.0; n];
            compute_gradient(
                &model,
                &v,
                &v_n,
                &f_int,
                &f_ext,
                &f_ff,
                Some((set.cqt(), &lrc)),
                h,
                &mut g,
            )
            .unwrap();

            let eps = 1e-6;
            let gnorm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            for dof in (0..n).step_by(7) {
                let mut vp = v.clone();
                let mut vm = v.clone();
                vp[dof] += eps;
                vm[dof] -= eps;
                let fp = augmented_cost(&model, Some(&set), &q_n, &vp, &v_n, &f_ext, &f_ff, h, t_next)
                    .unwrap();
                let fm = augmented_cost(&model, Some(&set), &q_n, &vm, &v_n, &f_ext, &f_ff, h, t_next)
                    .unwrap();
                let fd = (fp - fm) / (2.0 * eps);
                assert!(
                    (fd - g[dof]).abs() <= 1e-6 * gnorm.max(1.0),
                    "dof {dof}: fd {fd} vs {}",
                    g[dof]
                );
            }
        }
    }

    #[test]
    fn hessian_inertia_only_limit() {
        // E = 0 zeroes the material tangent: H must equal M/h exactly.
        let corners = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        let mesh = meshgen::t10_from_corner_tets(corners, vec![[0, 1, 2, 3]], 0);
        let mat = MaterialParams::svk(0.0, 0.3, 1000.0);
        let model = FeModel::new(mesh, vec![mat], PrecompConfig::default()).unwrap();
        let set = ConstraintSet::empty(model.n_dofs());
        let mut ws = HessianWorkspace::new(&model, &set).unwrap();
        let state = crate::model::SystemState::at_reference(&model.mesh);
        let h = 5e-4;
        assemble_hessian(&mut ws, &model, &set, &state.q, h, AccumulationMode::Deterministic)
            .unwrap();
        for i in 0..model.n_nodes() {
            for j in 0..model.n_nodes() {
                let m = model.mass.get(i, j);
                for d in 0..3 {
                    for e in 0..3 {
                        let expect = if d == e { m / h } else { 0.0 };
                        assert_eq!(ws.h.get(3 * i + d, 3 * j + e), expect);
                    }
                }
            }
        }
    }

    use crate::constraints::ConstraintSet;

    #[test]
    fn hessian_matches_fd_of_gradient() {
        let mesh = meshgen::single_tet();
        let mat = MaterialParams::svk(5e6, 0.3, 1200.0);
        let model = FeModel::new(mesh, vec![mat], PrecompConfig::default()).unwrap();
        let n = model.n_dofs();
        let set = ConstraintSet::empty(n);
        let mut hws = HessianWorkspace::new(&model, &set).unwrap();
        let mut ws = AssemblyWorkspace::new(&model);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let state = crate::model::SystemState::at_reference(&model.mesh);
        let q_n = state.q.clone();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let v_n = vec![0.0; n];
        let zeros = vec![0.0; n];
        let h = 1e-3;

        let q = crate::model::step_map(&q_n, &v, h).unwrap();
        assemble_hessian(&mut hws, &model, &set, &q, h, AccumulationMode::Deterministic).unwrap();

        let grad = |vv: &[f64], ws: &mut AssemblyWorkspace| -> Vec<f64> {
            let qq = crate::model::step_map(&q_n, vv, h).unwrap();
            compute_stress_stage1(&model, &qq, vv, &mut ws.stress).unwrap();
            let mut f_int = vec![0.0; n];
            compute_internal_force_stage2(&model, ws, AccumulationMode::Deterministic, &mut f_int);
            let mut g = vec![0.0; n];
            compute_gradient(&model, vv, &v_n, &f_int, &zeros, &zeros, None, h, &mut g).unwrap();
            g
        };

        let eps = 1e-6;
        let mut frob_num = 0.0;
        let mut frob_den = 0.0;
        for dof in 0..n {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp[dof] += eps;
            vm[dof] -= eps;
            let gp = grad(&vp, &mut ws);
            let gm = grad(&vm, &mut ws);
            for r in 0..n {
                let fd = (gp[r] - gm[r]) / (2.0 * eps);
                let an = hws.h.get(r, dof);
                frob_num += (fd - an).powi(2);
                frob_den += fd * fd;
            }
        }
        let rel = (frob_num / frob_den).sqrt();
        assert!(rel <= 1e-4, "relative Frobenius error {rel}");
    }

    #[test]
    fn clamp_adds_h2_rho_on_diagonal() {
        let model = two_element_model(false);
        let n = model.n_dofs();
        let rho = 1e8;
        let mut b = ConstraintSetBuilder::new();
        b.clamp_node("c", &model.mesh, 2);
        let mut set = b.build(n, rho).unwrap();
        let state = crate::model::SystemState::at_reference(&model.mesh);
        set.eval_jacobian(&state.q);

        let empty = ConstraintSet::empty(n);
        let mut ws0 = HessianWorkspace::new(&model, &empty).unwrap();
        let mut ws1 = HessianWorkspace::new(&model, &set).unwrap();
        let h = 1e-3;
        assemble_hessian(&mut ws0, &model, &empty, &state.q, h, AccumulationMode::Deterministic)
            .unwrap();
        assemble_hessian(&mut ws1, &model, &set, &state.q, h, AccumulationMode::Deterministic)
            .unwrap();
        for d in 0..3 {
            let k = 3 * 2 + d;
            let gained = ws1.h.get(k, k) - ws0.h.get(k, k);
            assert_relative_eq!(gained, h * h * rho, max_relative = 1e-12);
        }
    }

    #[test]
    fn hessian_is_symmetric_and_modes_agree() {
        let model = two_element_model(false);
        let n = model.n_dofs();
        let mut b = ConstraintSetBuilder::new();
        b.clamp_node("c", &model.mesh, 0);
        b.push_row(crate::constraints::ConstraintRow::Dp1 {
            a: (1, 4),
            b: crate::constraints::Dp1Vector::NodePair(2, 3),
            c0: 0.0,
        });
        let mut set = b.build(n, 1e6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (q, _) = random_state(&model, &mut rng, 0.04);
        set.eval_jacobian(&q);

        let mut ws = HessianWorkspace::new(&model, &set).unwrap();
        let h = 1e-3;
        assemble_hessian(&mut ws, &model, &set, &q, h, AccumulationMode::Deterministic).unwrap();
        assert!(symmetry_error(&ws.h) <= 1e-9);
        let det_vals = ws.h.values().to_vec();

        assemble_hessian(&mut ws, &model, &set, &q, h, AccumulationMode::AtomicScatter).unwrap();
        let scale: f64 = det_vals.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: f64 = ws
            .h
            .values()
            .iter()
            .zip(&det_vals)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 1e-12 * scale);
    }
}
