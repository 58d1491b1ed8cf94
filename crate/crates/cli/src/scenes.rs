//! In-memory builders for the validation and benchmark scenarios. The
//! same builders back the `validate` suites, the acceptance tests, and
//! the cantilever benchmark family.

use crate::scenario::floor_triangles;
use nalgebra::Vector3;
use tlfea_core::assembly::FeModel;
use tlfea_core::collision::DetectionConfig;
use tlfea_core::constraints::ConstraintSetBuilder;
use tlfea_core::contact::ContactParams;
use tlfea_core::materials::MaterialParams;
use tlfea_core::meshgen;
use tlfea_core::model::TimeStepConfig;
use tlfea_core::pipeline::{ContactWorld, LoadSchedule, PointLoad, Simulation};
use tlfea_core::precompute::PrecompConfig;
use tlfea_core::solvers::{AdamWConfig, AlphaSchedule, InnerSolverKind, SolverConfig};
use tlfea_core::Result;

/// Cantilever material selector for the benchmark family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamMaterial {
    Svk,
    MooneyRivlin,
}

/// Structured divisions for the T10 beam resolution levels; `res0`
/// reproduces the 105-node / 36-element / 315-DOF mesh.
pub fn beam_divisions(res: usize) -> (usize, usize, usize) {
    match res {
        0 => (3, 2, 1),
        2 => (6, 4, 2),
        4 => (12, 8, 4),
        other => (3 * (other + 1), 2 * (other + 1), other + 1),
    }
}

/// The beam-sagging cantilever: a 3 x 2 x 1 m beam fully clamped at
/// `x = 0` with a 5 kN load spread over the free face.
pub fn cantilever(
    res: usize,
    material: BeamMaterial,
    solver: InnerSolverKind,
    eps_in: f64,
    n_steps: usize,
) -> Result<Simulation> {
    let mesh = meshgen::t10_box(
        Vector3::zeros(),
        Vector3::new(3.0, 2.0, 1.0),
        beam_divisions(res),
    );
    let mat = match material {
        BeamMaterial::Svk => MaterialParams::svk(7.0e8, 0.33, 2700.0),
        BeamMaterial::MooneyRivlin => {
            MaterialParams::mooney_rivlin(7.89e7, 5.26e7, 1.03e9, 2700.0)
        }
    };
    let model = FeModel::new(mesh, vec![mat], PrecompConfig::default())?;
    let mut builder = ConstraintSetBuilder::new();
    let clamped = meshgen::nodes_on_plane(&model.mesh, 0, 0.0, 1e-9);
    builder.clamp_nodes("root", &model.mesh, &clamped);
    let constraints = builder.build(model.n_dofs(), 1e10)?;

    let tip_nodes = meshgen::nodes_on_plane(&model.mesh, 0, 3.0, 1e-9);
    let loads = vec![PointLoad {
        nodes: tip_nodes,
        total_force: Vector3::new(0.0, 0.0, -5000.0),
        schedule: LoadSchedule::Constant,
    }];
    let time = TimeStepConfig {
        h: 1e-3,
        n_steps,
        gravity: Vector3::zeros(),
    };
    let config = SolverConfig {
        solver,
        eps_in,
        eps_rel: 0.0,
        eps_out: 1e-6,
        k_max: if solver == InnerSolverKind::AdamW { 2 } else { 4 },
        l_max: if solver == InnerSolverKind::AdamW { 6000 } else { 20 },
        adamw: AdamWConfig {
            alpha: AlphaSchedule::ExpDecay {
                alpha0: 2e-2,
                alpha_min: 2e-7,
            },
            check_interval: 10,
            ..Default::default()
        },
        ..Default::default()
    };
    Simulation::new(model, constraints, config, time, loads, None)
}

/// Node at the centroid of the free face, used for tip tracking.
pub fn cantilever_tip_node(model: &FeModel) -> usize {
    meshgen::nearest_node(&model.mesh, Vector3::new(3.0, 1.0, 0.5))
}

/// Brick on a slope, realized as a flat floor with the gravity vector
/// tilted by the slope angle; the along-slope direction is -x.
pub fn brick_on_slope(alpha: f64) -> Result<Simulation> {
    let size = Vector3::new(0.4, 0.2, 0.1);
    let mesh = meshgen::t10_box(
        Vector3::new(-size.x / 2.0, -size.y / 2.0, 0.0),
        size,
        (4, 2, 1),
    );
    // paper table: E = 1e7; brick geometry/density are free choices
    let mat = MaterialParams::svk(1.0e7, 0.3, 2700.0);
    let model = FeModel::new(mesh, vec![mat], PrecompConfig::default())?;
    let constraints = tlfea_core::constraints::ConstraintSet::empty(model.n_dofs());

    let h = 5e-4;
    let params = ContactParams {
        k_n: 1e8, // paper table
        k_t: 2e8 / 7.0,
        gamma_n: 400.0,
        gamma_t: 200.0,
        mu_s: 0.25,
        mu_k: 0.2,
        mu_r: 0.0,
        restitution: 0.0,
        stick_speed: 1e-4,
    };
    let detection = DetectionConfig {
        h,
        n_max: 10,
        ..Default::default()
    };
    let mut world = ContactWorld::new(&model, floor_triangles(3.0, 0.0), params, detection);
    world.distribution_k = 8;
    world.force_clamp = 0.0;

    let g = 9.81;
    let time = TimeStepConfig {
        h,
        n_steps: 1000, // 0.5 s
        gravity: Vector3::new(-g * alpha.sin(), 0.0, -g * alpha.cos()),
    };
    let config = SolverConfig {
        eps_in: 1e-6,
        eps_out: 1e-6,
        k_max: 3,
        l_max: 10,
        ..Default::default()
    };
    Simulation::new(model, constraints, config, time, vec![], Some(world))
}

/// Oblique impact of a sphere on a flat floor under microgravity. The
/// impact angle is measured from the surface normal; the sphere is
/// launched at `speed` with velocity (sin theta, 0, -cos theta) * speed.
pub fn oblique_impact(theta: f64, mu: f64, restitution: f64, damping: f64) -> Result<Simulation> {
    let r = 0.15;
    let gap = 2e-3;
    let mesh = meshgen::t10_ball(Vector3::new(0.0, 0.0, r + gap), r, 5);
    // experiment-2 material parameters; density gives unit sphere mass
    let mat = MaterialParams::svk(1.0e7, 0.3, 70.7355).with_damping(damping, damping);
    let model = FeModel::new(mesh, vec![mat], PrecompConfig::default())?;
    let constraints = tlfea_core::constraints::ConstraintSet::empty(model.n_dofs());

    let h = 1e-4;
    let m = model.total_mass();
    let params = ContactParams {
        k_n: 2e7,
        k_t: 2e7 * 2.0 / 7.0,
        gamma_n: gamma_for_restitution_area(2e7, m, restitution, 0.004),
        gamma_t: 0.0,
        mu_s: mu,
        mu_k: mu,
        mu_r: 0.0,
        restitution,
        stick_speed: 0.0, // single friction coefficient
    };
    let detection = DetectionConfig {
        h,
        n_max: 10,
        ..Default::default()
    };
    let mut world = ContactWorld::new(&model, floor_triangles(2.0, 0.0), params, detection);
    world.distribution_k = 8;
    world.force_clamp = 0.0;

    let time = TimeStepConfig {
        h,
        n_steps: 900,
        gravity: Vector3::zeros(),
    };
    let config = SolverConfig {
        eps_in: 1e-6,
        eps_out: 1e-6,
        k_max: 3,
        l_max: 10,
        ..Default::default()
    };
    let mut sim = Simulation::new(model, constraints, config, time, vec![], Some(world))?;
    let speed = 2.0;
    let v = Vector3::new(speed * theta.sin(), 0.0, -speed * theta.cos());
    for i in 0..sim.model.n_nodes() {
        for d in 0..3 {
            sim.state.v[3 * i + d] = v[d];
        }
    }
    Ok(sim)
}

/// Damping factor for a target restitution with the SDOF mapping
/// evaluated at a nominal contact area.
fn gamma_for_restitution_area(k_n: f64, m_eff: f64, e: f64, nominal_area: f64) -> f64 {
    if e >= 1.0 {
        return 0.0;
    }
    let l = e.max(1e-12).ln();
    let zeta = -l / (l * l + std::f64::consts::PI * std::f64::consts::PI).sqrt();
    let scale = (nominal_area / std::f64::consts::PI).sqrt();
    // c = scale gamma m_eff, c_crit = 2 sqrt(scale k_n m_eff)
    2.0 * zeta * (k_n / (scale * m_eff)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKindSel {
    Spherical,
    Revolute,
}

/// Two-link vertical chain for the joint force-recovery test: identical
/// 0.5 x 0.04 x 0.04 m links hanging from a world anchor at (0, 0, 0.7),
/// pulled down at the lower tip.
pub fn joint_pull(kind: JointKindSel, pull_newtons: f64) -> Result<Simulation> {
    let link = |z_top: f64| {
        let mut m = meshgen::t10_box(
            Vector3::new(-0.02, -0.02, -0.5),
            Vector3::new(0.04, 0.04, 0.5),
            (1, 1, 6),
        );
        meshgen::translate(&mut m, Vector3::new(0.0, 0.0, z_top));
        m
    };
    let upper = link(0.7);
    let lower = link(0.2);
    let mesh = meshgen::merge(vec![upper, lower]);
    // pull-test material: E = 1e7, nu = 0.3, rho = 1200 (m_b = 0.96 kg),
    // eta = lambda = 1e4
    let mat = MaterialParams::svk(1.0e7, 0.3, 1200.0).with_damping(1e4, 1e4);
    let model = FeModel::new(mesh, vec![mat, mat], PrecompConfig::default())?;

    let mut builder = ConstraintSetBuilder::new();
    let top = meshgen::nearest_node(&model.mesh, Vector3::new(0.0, 0.0, 0.7));
    // both links' joint nodes at the chain interface z = 0.2
    let find = |body: usize, p: Vector3<f64>| -> usize {
        model
            .mesh
            .node_positions_ref
            .iter()
            .enumerate()
            .filter(|(i, _)| model.mesh.body_of_node[*i] == body)
            .min_by(|(_, a), (_, b)| {
                (*a - p)
                    .norm_squared()
                    .partial_cmp(&(*b - p).norm_squared())
                    .unwrap()
            })
            .map(|(i, _)| i)
            .unwrap()
    };
    let mid = Vector3::new(0.0, 0.0, 0.2);
    let parent_mid = find(0, mid);
    let child_mid = find(1, mid);
    match kind {
        JointKindSel::Spherical => {
            let p = model.mesh.node_positions_ref[top];
            builder.anchor_node(
                "upper",
                top,
                [
                    tlfea_core::constraints::TargetSchedule::Constant(p.x),
                    tlfea_core::constraints::TargetSchedule::Constant(p.y),
                    tlfea_core::constraints::TargetSchedule::Constant(p.z),
                ],
            );
            builder.spherical("lower", &model.mesh, parent_mid, child_mid);
        }
        JointKindSel::Revolute => {
            // hinge axes along global y
            let a0 = find(0, Vector3::new(0.0, -0.02, 0.7));
            let a1 = find(0, Vector3::new(0.0, 0.02, 0.7));
            builder.revolute_anchor(
                "upper",
                &model.mesh,
                top,
                (a0, a1),
                [Vector3::x(), Vector3::z()],
            )?;
            let p0 = find(0, Vector3::new(0.0, -0.02, 0.2));
            let p1 = find(0, Vector3::new(0.0, 0.02, 0.2));
            let c_x = (
                find(1, Vector3::new(-0.02, 0.0, 0.2)),
                find(1, Vector3::new(0.02, 0.0, 0.2)),
            );
            let c_z = (
                find(1, Vector3::new(0.0, 0.0, 0.3)),
                find(1, Vector3::new(0.0, 0.0, 0.1)),
            );
            builder.revolute("lower", &model.mesh, parent_mid, child_mid, (p0, p1), [c_x, c_z])?;
        }
    }
    let constraints = builder.build(model.n_dofs(), 1e10)?;

    // downward pull on the lower tip region, ramped over the first 200
    // steps (0.1 s)
    let tip_nodes = meshgen::nodes_on_plane(&model.mesh, 2, -0.3, 1e-9);
    let tip_nodes: Vec<usize> = tip_nodes
        .into_iter()
        .filter(|&n| model.mesh.body_of_node[n] == 1)
        .collect();
    let loads = vec![PointLoad {
        nodes: tip_nodes,
        total_force: Vector3::new(0.0, 0.0, -pull_newtons.abs()),
        schedule: LoadSchedule::Ramp { t0: 0.0, t1: 0.1 },
    }];

    let time = TimeStepConfig {
        h: 5e-4,
        n_steps: 1000,
        gravity: Vector3::new(0.0, 0.0, -9.81),
    };
    let config = SolverConfig {
        eps_in: 1e-6,
        eps_out: 1e-8,
        // 12 rather than the table's 8: the chain starts from rest with
        // cold multipliers, so the very first step needs a few extra
        // dual ascents to push |c| under 1e-8
        k_max: 12,
        l_max: 10,
        ..Default::default()
    };
    Simulation::new(model, constraints, config, time, loads, None)
}

/// Swinging double pendulum (motion test material), for constraint-drift
/// checks.
pub fn joint_motion(kind: JointKindSel, n_steps: usize) -> Result<Simulation> {
    let mut sim = joint_pull(kind, 0.0)?;
    sim.time.n_steps = n_steps;
    // no loads; displace initial velocity so the chain swings in-plane
    for i in 0..sim.model.n_nodes() {
        let p = sim.model.mesh.node_positions_ref[i];
        // small rigid-ish angular kick about the top anchor along y
        let r = p - Vector3::new(0.0, 0.0, 0.7);
        let w = Vector3::new(0.0, 1.2, 0.0);
        let v = w.cross(&r);
        for d in 0..3 {
            sim.state.v[3 * i + d] = v[d];
        }
    }
    Ok(sim)
}
