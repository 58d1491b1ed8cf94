//! The cantilever scaling benchmark family at desk scale: runs the
//! beam-sagging scenario and reports the real-time factor.

use crate::scenes::{self, BeamMaterial};
use std::fmt::Write as _;
use tlfea_core::pipeline::{run_simulation, rtf, RunOptions};
use tlfea_core::solvers::InnerSolverKind;
use tlfea_core::Result;

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub res: usize,
    pub solver: &'static str,
    pub material: &'static str,
    pub dofs: usize,
    pub elements: usize,
    pub steps: usize,
    pub wall_seconds: f64,
    pub rtf: f64,
    pub tip_displacement: f64,
    pub non_converged_steps: usize,
}

pub fn run_cantilever(
    res: usize,
    solver: InnerSolverKind,
    material: BeamMaterial,
    n_steps: usize,
) -> Result<BenchResult> {
    let eps_in = 1e-4; // scaling-family tolerance
    let mut sim = scenes::cantilever(res, material, solver, eps_in, n_steps)?;
    let tip = scenes::cantilever_tip_node(&sim.model);
    let z0 = sim.state.q[3 * tip + 2];
    let report = run_simulation(&mut sim, &RunOptions::default(), |_, _| {})?;
    let z1 = sim.state.q[3 * tip + 2];
    Ok(BenchResult {
        res,
        solver: match solver {
            InnerSolverKind::Newton => "newton",
            InnerSolverKind::AdamW => "adamw",
        },
        material: match material {
            BeamMaterial::Svk => "svk",
            BeamMaterial::MooneyRivlin => "mr",
        },
        dofs: sim.model.n_dofs(),
        elements: sim.model.mesh.n_elements(),
        steps: n_steps,
        wall_seconds: report.wall_seconds,
        rtf: rtf(report.wall_seconds, sim.time.h * n_steps as f64),
        tip_displacement: (z1 - z0).abs(),
        non_converged_steps: report.non_converged_steps,
    })
}

pub fn csv_header() -> &'static str {
    "res,solver,material,dofs,elements,steps,wall_s,rtf,tip_displacement,non_converged"
}

pub fn csv_line(r: &BenchResult) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{},{},{},{},{},{},{:.6},{:.3},{:.6e},{}",
        r.res,
        r.solver,
        r.material,
        r.dofs,
        r.elements,
        r.steps,
        r.wall_seconds,
        r.rtf,
        r.tip_displacement,
        r.non_converged_steps
    );
    s
}
