//! Builds an in-memory [`Simulation`] from a parsed [`Scenario`]: mesh
//! loading and placement, joint composition, load schedules, and the
//! contact world.

use crate::config::*;
use crate::meshio;
use nalgebra::Vector3;
use std::path::Path;
use tlfea_core::assembly::{AccumulationMode, FeModel};
use tlfea_core::collision::DetectionConfig;
use tlfea_core::constraints::{ConstraintSetBuilder, TargetSchedule};
use tlfea_core::contact::{damping_from_restitution, ContactParams};
use tlfea_core::materials::MaterialParams;
use tlfea_core::meshgen;
use tlfea_core::model::{Mesh, TimeStepConfig};
use tlfea_core::pipeline::{ContactWorld, LoadSchedule, Phase, PointLoad, Simulation};
use tlfea_core::precompute::PrecompConfig;
use tlfea_core::solvers::{
    AdamWConfig, AlphaSchedule, InnerSolverKind, NewtonConfig, SolverConfig,
};
use tlfea_core::sparse::OrderingKind;
use tlfea_core::{Error, Result};

fn material_params(cfg: &MaterialCfg) -> MaterialParams {
    match *cfg {
        MaterialCfg::Svk {
            youngs,
            poisson,
            density,
            eta_damp,
            lambda_damp,
        } => MaterialParams::svk(youngs, poisson, density).with_damping(eta_damp, lambda_damp),
        MaterialCfg::MooneyRivlin {
            c10,
            c01,
            kappa,
            density,
            eta_damp,
            lambda_damp,
        } => MaterialParams::mooney_rivlin(c10, c01, kappa, density)
            .with_damping(eta_damp, lambda_damp),
    }
}

fn select_nodes(mesh: &Mesh, body: usize, sel: &NodeSelect) -> Vec<usize> {
    mesh.node_positions_ref
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            if mesh.body_of_node[*i] != body {
                return false;
            }
            let x = p[sel.axis];
            match sel.cmp {
                '<' => x < sel.value,
                '>' => x > sel.value,
                _ => (x - sel.value).abs() <= 1e-9,
            }
        })
        .map(|(i, _)| i)
        .collect()
}

fn body_index(scenario: &Scenario, name: &str) -> Result<usize> {
    scenario
        .bodies
        .iter()
        .position(|b| b.name == name)
        .ok_or_else(|| Error::usage(format!("unknown body '{name}'")))
}

fn nearest_in_body(mesh: &Mesh, body: usize, point: &Vector3<f64>) -> Result<usize> {
    mesh.node_positions_ref
        .iter()
        .enumerate()
        .filter(|(i, _)| mesh.body_of_node[*i] == body)
        .min_by(|(_, a), (_, b)| {
            let da = (*a - point).norm_squared();
            let db = (*b - point).norm_squared();
            da.partial_cmp(&db).unwrap()
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::usage(format!("body {body} has no nodes")))
}

pub fn solver_config(s: &SolverCfg) -> SolverConfig {
    SolverConfig {
        solver: match s.kind {
            SolverKind::Newton => InnerSolverKind::Newton,
            SolverKind::AdamW => InnerSolverKind::AdamW,
        },
        eps_in: s.eps_in,
        eps_rel: s.eps_rel,
        eps_out: s.eps_out,
        k_max: s.max_outer,
        l_max: s.max_inner,
        newton: NewtonConfig {
            line_search: s.line_search,
            ..Default::default()
        },
        adamw: AdamWConfig {
            alpha: if s.adamw_alpha_min > 0.0 && s.adamw_alpha_min < s.adamw_alpha0 {
                AlphaSchedule::ExpDecay {
                    alpha0: s.adamw_alpha0,
                    alpha_min: s.adamw_alpha_min,
                }
            } else {
                AlphaSchedule::Constant(s.adamw_alpha0)
            },
            beta1: s.adamw_beta1,
            beta2: s.adamw_beta2,
            eps_num: s.adamw_eps,
            weight_decay: s.adamw_weight_decay,
            check_interval: s.check_interval,
        },
        mode: AccumulationMode::Deterministic,
        ordering: if s.ordering_natural {
            OrderingKind::Natural
        } else {
            OrderingKind::MinDegree
        },
        backend: Default::default(),
    }
}

/// Loads the scenario's mesh files (relative to `base_dir`), merges the
/// bodies, and assembles the full simulation.
pub fn build_simulation(scenario: &Scenario, base_dir: &Path) -> Result<Simulation> {
    let mut parts = Vec::new();
    for body in &scenario.bodies {
        let path = base_dir.join(&body.mesh);
        let mut mesh = meshio::load_mesh(&path)?;
        meshgen::translate(&mut mesh, body.translate);
        parts.push(mesh);
    }
    let mesh = meshgen::merge(parts);
    mesh.validate()?;
    let materials: Vec<MaterialParams> = scenario
        .bodies
        .iter()
        .map(|b| {
            let m = material_params(&b.material);
            m.validate()?;
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let model = FeModel::new(
        mesh,
        materials,
        PrecompConfig {
            mass_exact: scenario.mass_exact,
        },
    )?;

    // constraints
    let mut builder = ConstraintSetBuilder::new();
    for joint in &scenario.joints {
        add_joint(&mut builder, &model.mesh, scenario, joint)?;
    }
    let constraints = builder.build(model.n_dofs(), scenario.solver.rho)?;

    // loads
    let mut loads = Vec::new();
    for load in &scenario.loads {
        let body = body_index(scenario, &load.body)?;
        let nodes = select_nodes(&model.mesh, body, &load.select);
        if nodes.is_empty() {
            return Err(Error::usage(format!(
                "load on body '{}' selects no nodes",
                load.body
            )));
        }
        loads.push(PointLoad {
            nodes,
            total_force: load.force,
            schedule: match load.schedule {
                LoadScheduleCfg::Constant => LoadSchedule::Constant,
                LoadScheduleCfg::Ramp { t0, t1 } => LoadSchedule::Ramp { t0, t1 },
                LoadScheduleCfg::Window { t_on, t_off } => LoadSchedule::Window { t_on, t_off },
            },
        });
    }

    // contact world
    let contact = match &scenario.contact {
        Some(c) => {
            let env = match &scenario.env_floor {
                Some(f) => floor_triangles(f.half_extent, f.z),
                None => Vec::new(),
            };
            let total_mass = model.total_mass();
            let params = ContactParams {
                k_n: c.k_n,
                k_t: c.k_t,
                gamma_n: c
                    .gamma_n
                    .unwrap_or_else(|| damping_from_restitution(c.k_n, total_mass, c.restitution)),
                gamma_t: c.gamma_t,
                mu_s: c.mu_s,
                mu_k: c.mu_k,
                mu_r: c.mu_r,
                restitution: c.restitution,
                stick_speed: c.stick_speed,
            };
            params.validate()?;
            let detection = DetectionConfig {
                bin_size: scenario.detection.bin_size,
                max_per_bin: scenario.detection.max_per_bin,
                self_collision: false,
                margin_a: scenario.detection.margin_a,
                margin_b: scenario.detection.margin_b,
                n_max: scenario.detection.n_max,
                h: scenario.time.h,
            };
            let mut world = ContactWorld::new(&model, env, params, detection);
            world.distribution_k = c.distribution_k;
            world.force_clamp = c.force_clamp;
            Some(world)
        }
        None => None,
    };

    let time = TimeStepConfig {
        h: scenario.time.h,
        n_steps: scenario.time.n_steps,
        gravity: scenario.time.gravity,
    };
    let mut sim = Simulation::new(
        model,
        constraints,
        solver_config(&scenario.solver),
        time,
        loads,
        contact,
    )?;
    // initial body velocities
    for (b, body) in scenario.bodies.iter().enumerate() {
        if body.velocity != Vector3::zeros() {
            for i in 0..sim.model.n_nodes() {
                if sim.model.mesh.body_of_node[i] == b {
                    for d in 0..3 {
                        sim.state.v[3 * i + d] = body.velocity[d];
                    }
                }
            }
        }
    }
    sim.phases = scenario
        .phases
        .iter()
        .map(|p| Phase {
            name: p.name.clone(),
            t0: p.t0,
            t1: p.t1,
        })
        .collect();
    Ok(sim)
}

pub fn floor_triangles(half: f64, z: f64) -> Vec<[Vector3<f64>; 3]> {
    let a = Vector3::new(-half, -half, z);
    let b = Vector3::new(half, -half, z);
    let c = Vector3::new(half, half, z);
    let d = Vector3::new(-half, half, z);
    vec![[a, b, c], [a, c, d]]
}

fn add_joint(
    builder: &mut ConstraintSetBuilder,
    mesh: &Mesh,
    scenario: &Scenario,
    joint: &JointCfg,
) -> Result<()> {
    match joint {
        JointCfg::Clamp { name, body, select } => {
            let b = body_index(scenario, body)?;
            let nodes = select_nodes(mesh, b, select);
            if nodes.is_empty() {
                return Err(Error::usage(format!("clamp '{name}' selects no nodes")));
            }
            builder.clamp_nodes(name, mesh, &nodes);
        }
        JointCfg::SphericalAnchor { name, body, point } => {
            let b = body_index(scenario, body)?;
            let node = nearest_in_body(mesh, b, point)?;
            let p = mesh.node_positions_ref[node];
            builder.anchor_node(
                name,
                node,
                [
                    TargetSchedule::Constant(p.x),
                    TargetSchedule::Constant(p.y),
                    TargetSchedule::Constant(p.z),
                ],
            );
        }
        JointCfg::RevoluteAnchor {
            name,
            body,
            point,
            axis_a,
            axis_b,
            world_t1,
            world_t2,
        } => {
            let b = body_index(scenario, body)?;
            let node = nearest_in_body(mesh, b, point)?;
            let a0 = nearest_in_body(mesh, b, axis_a)?;
            let a1 = nearest_in_body(mesh, b, axis_b)?;
            builder.revolute_anchor(name, mesh, node, (a0, a1), [*world_t1, *world_t2])?;
        }
        JointCfg::Spherical {
            name,
            parent,
            child,
            parent_point,
            child_point,
        } => {
            let pb = body_index(scenario, parent)?;
            let cb = body_index(scenario, child)?;
            let pn = nearest_in_body(mesh, pb, parent_point)?;
            let cn = nearest_in_body(mesh, cb, child_point)?;
            builder.spherical(name, mesh, pn, cn);
        }
        JointCfg::Revolute {
            name,
            parent,
            child,
            parent_point,
            child_point,
            axis_a,
            axis_b,
            trans1_a,
            trans1_b,
            trans2_a,
            trans2_b,
        } => {
            let pb = body_index(scenario, parent)?;
            let cb = body_index(scenario, child)?;
            let pn = nearest_in_body(mesh, pb, parent_point)?;
            let cn = nearest_in_body(mesh, cb, child_point)?;
            let a0 = nearest_in_body(mesh, pb, axis_a)?;
            let a1 = nearest_in_body(mesh, pb, axis_b)?;
            let t1 = (
                nearest_in_body(mesh, cb, trans1_a)?,
                nearest_in_body(mesh, cb, trans1_b)?,
            );
            let t2 = (
                nearest_in_body(mesh, cb, trans2_a)?,
                nearest_in_body(mesh, cb, trans2_b)?,
            );
            builder.revolute(name, mesh, pn, cn, (a0, a1), [t1, t2])?;
        }
        JointCfg::MotionAnchor {
            name,
            body,
            select,
            axis,
            peak_speed,
            period,
            t0,
            t1,
        } => {
            let b = body_index(scenario, body)?;
            let nodes = select_nodes(mesh, b, select);
            if nodes.is_empty() {
                return Err(Error::usage(format!(
                    "motion anchor '{name}' selects no nodes"
                )));
            }
            for (k, node) in nodes.iter().enumerate() {
                let p = mesh.node_positions_ref[*node];
                let mut targets = [
                    TargetSchedule::Constant(p.x),
                    TargetSchedule::Constant(p.y),
                    TargetSchedule::Constant(p.z),
                ];
                targets[*axis] = TargetSchedule::TriangleWave {
                    base: p[*axis],
                    peak_speed: *peak_speed,
                    period: *period,
                    t0: *t0,
                    t1: *t1,
                };
                builder.anchor_node(&format!("{name}.{k}"), *node, targets);
            }
        }
    }
    Ok(())
}
