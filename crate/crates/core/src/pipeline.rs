//! Per-step orchestration of detection, contact force evaluation, and the
//! ALM solve, including the two-worker asynchronous detection contract.
//!
//! In asynchronous mode a dedicated kinematics worker runs broad phase
//! and patch labeling on state snapshots while the stepping worker keeps
//! advancing physics with the freshest available active contact set; the
//! stepper never advances more than `n_max` steps past the timestamp of
//! the set it consumes. All exchange is copy-in/copy-out through a
//! mailbox pair; neither worker touches the other's working storage.
//! Synchronous mode runs detection inline every step and is the
//! deterministic reference.

use crate::assembly::{self, FeModel};
use crate::collision::{self, Acs, DetectionConfig, PatchContact, PrimitiveContact, SoupTopology};
use crate::constraints::ConstraintSet;
use crate::contact::{self, ContactHistory, ContactParams, PatchPairKey};
use crate::error::{Error, Result};
use crate::model::{SystemState, TimeStepConfig};
use crate::solvers::{AlmSolver, SolverConfig, StepProblem, StepReport};
use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::sync::mpsc;
use std::time::Instant;

/// Asynchronous detection settings.
#[derive(Debug, Clone, Copy)]
pub struct AsyncConfig {
    pub enabled: bool,
    /// Max steps the stepper may advance past the last ACS timestamp.
    pub n_max: usize,
    /// Artificial detection delay per pass, for contract tests.
    pub test_delay: Option<std::time::Duration>,
}

impl Default for AsyncConfig {
    fn default() -> Self {
        AsyncConfig {
            enabled: false,
            n_max: 10,
            test_delay: None,
        }
    }
}

/// Nodal point load with a time schedule.
#[derive(Debug, Clone)]
pub struct PointLoad {
    pub nodes: Vec<usize>,
    /// Total force split uniformly over the nodes (N).
    pub total_force: Vector3<f64>,
    pub schedule: LoadSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoadSchedule {
    Constant,
    /// Linear ramp from zero over `[t0, t1]`, held afterwards.
    Ramp { t0: f64, t1: f64 },
    /// Full force inside `[t_on, t_off)`, zero outside.
    Window { t_on: f64, t_off: f64 },
}

impl LoadSchedule {
    pub fn factor(&self, t: f64) -> f64 {
        match *self {
            LoadSchedule::Constant => 1.0,
            LoadSchedule::Ramp { t0, t1 } => ((t - t0) / (t1 - t0)).clamp(0.0, 1.0),
            LoadSchedule::Window { t_on, t_off } => {
                if t >= t_on && t < t_off {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Combined collision world: the deformable surface soup plus fixed
/// environment triangles, with contact-law parameters and the coupling
/// settings.
#[derive(Debug)]
pub struct ContactWorld {
    pub topo: SoupTopology,
    /// Number of deformable bodies; environment bodies follow.
    pub n_deformable_bodies: usize,
    /// DOF count of the deformable mesh; vertex ids >= n_mesh_nodes index
    /// into `static_coords`.
    n_mesh_nodes: usize,
    static_coords: Vec<Vector3<f64>>,
    pub params: ContactParams,
    pub detection: DetectionConfig,
    /// Nearest-node distribution parameter K.
    pub distribution_k: usize,
    /// Per-body total contact force clamp (N); 0 disables.
    pub force_clamp: f64,
    /// Sorted surface node lists per deformable body.
    surface_nodes: Vec<Vec<usize>>,
    /// Per-body masses (deformable bodies only).
    body_mass: Vec<f64>,
}

impl ContactWorld {
    /// Builds the world from the deformable model plus environment
    /// triangle lists (each its own body id after the deformable ones).
    pub fn new(
        model: &FeModel,
        env_triangles: Vec<[Vector3<f64>; 3]>,
        params: ContactParams,
        detection: DetectionConfig,
    ) -> Self {
        let n_def = model.mesh.n_bodies();
        let n_mesh_nodes = model.mesh.n_nodes();
        let mut tri_nodes: Vec<[usize; 3]> = model
            .mesh
            .surface_triangles
            .iter()
            .map(|(t, _)| *t)
            .collect();
        let mut tri_body: Vec<usize> = model
            .mesh
            .surface_triangles
            .iter()
            .map(|(_, b)| *b)
            .collect();
        // deduplicate shared environment vertices so the env soup keeps
        // its edge adjacency (one island per connected surface)
        let mut static_coords: Vec<Vector3<f64>> = Vec::new();
        let mut seen: std::collections::HashMap<[u64; 3], usize> = std::collections::HashMap::new();
        for tri in env_triangles {
            let ids: [usize; 3] = std::array::from_fn(|k| {
                let v = tri[k];
                let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
                *seen.entry(key).or_insert_with(|| {
                    static_coords.push(v);
                    static_coords.len() - 1
                })
            });
            tri_nodes.push([
                n_mesh_nodes + ids[0],
                n_mesh_nodes + ids[1],
                n_mesh_nodes + ids[2],
            ]);
            tri_body.push(n_def);
        }
        let topo = SoupTopology::from_triangles(tri_nodes, tri_body);

        let mut surface_nodes: Vec<Vec<usize>> = vec![Vec::new(); n_def];
        for (tri, body) in &model.mesh.surface_triangles {
            for &n in tri {
                surface_nodes[*body].push(n);
            }
        }
        for list in &mut surface_nodes {
            list.sort_unstable();
            list.dedup();
        }
        let body_mass = (0..n_def).map(|b| model.body_mass(b)).collect();

        ContactWorld {
            topo,
            n_deformable_bodies: n_def,
            n_mesh_nodes,
            static_coords,
            params,
            detection,
            distribution_k: 8,
            force_clamp: 0.0,
            surface_nodes,
            body_mass,
        }
    }

    pub fn n_bodies(&self) -> usize {
        self.n_deformable_bodies + usize::from(!self.static_coords.is_empty())
    }

    fn vertex(&self, id: usize, q: &[f64]) -> Vector3<f64> {
        if id < self.n_mesh_nodes {
            Vector3::new(q[3 * id], q[3 * id + 1], q[3 * id + 2])
        } else {
            self.static_coords[id - self.n_mesh_nodes]
        }
    }

    /// Current triangle vertex positions (copy-out snapshot).
    pub fn positions(&self, q: &[f64]) -> Vec<[Vector3<f64>; 3]> {
        self.topo
            .tri_nodes
            .iter()
            .map(|tri| std::array::from_fn(|k| self.vertex(tri[k], q)))
            .collect()
    }

    /// Per-body max nodal speed; environment bodies are stationary.
    pub fn body_speeds(&self, v: &[f64]) -> Vec<f64> {
        let mut speeds = vec![0.0; self.n_bodies()];
        for (body, nodes) in self.surface_nodes.iter().enumerate() {
            for &n in nodes {
                let s = Vector3::new(v[3 * n], v[3 * n + 1], v[3 * n + 2]).norm();
                if s > speeds[body] {
                    speeds[body] = s;
                }
            }
        }
        speeds
    }

    fn is_deformable(&self, body: usize) -> bool {
        body < self.n_deformable_bodies
    }

    /// Inverse-distance-weighted velocity of a deformable body at a
    /// point, using the same K nearest surface nodes as the force
    /// distribution; environment bodies return zero.
    fn velocity_at(&self, body: usize, point: &Vector3<f64>, q: &[f64], v: &[f64]) -> Vector3<f64> {
        if !self.is_deformable(body) {
            return Vector3::zeros();
        }
        let nodes = &self.surface_nodes[body];
        let mut by_dist: Vec<(f64, usize)> = nodes
            .iter()
            .map(|&n| {
                (
                    (Vector3::new(q[3 * n], q[3 * n + 1], q[3 * n + 2]) - point).norm(),
                    n,
                )
            })
            .collect();
        by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let take = self.distribution_k.min(by_dist.len());
        let mut acc = Vector3::zeros();
        let mut wsum = 0.0;
        for (d, n) in &by_dist[..take] {
            let w = 1.0 / (d + 1e-12);
            acc += Vector3::new(v[3 * n], v[3 * n + 1], v[3 * n + 2]) * w;
            wsum += w;
        }
        acc / wsum
    }

    fn effective_mass(&self, body_a: usize, body_b: usize) -> f64 {
        match (self.is_deformable(body_a), self.is_deformable(body_b)) {
            (true, true) => {
                let (ma, mb) = (self.body_mass[body_a], self.body_mass[body_b]);
                ma * mb / (ma + mb)
            }
            (true, false) => self.body_mass[body_a],
            (false, true) => self.body_mass[body_b],
            (false, false) => 1.0,
        }
    }
}

/// Resolved patch contact ready for diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedContact {
    pub key: PatchPairKey,
    pub patch: PatchContact,
    pub force_on_first: Vector3<f64>,
}

/// Narrow phase plus force evaluation over the candidate set: primitive
/// contacts from current positions, patch reduction, Hertz-Mindlin
/// forces with history, and distribution into `f_ext`.
#[allow(clippy::too_many_arguments)]
pub fn contact_pass(
    world: &ContactWorld,
    acs: &Acs,
    q: &[f64],
    v: &[f64],
    history: &mut ContactHistory,
    dt: f64,
    now: u64,
    f_ext: &mut [f64],
) -> Result<Vec<ResolvedContact>> {
    if acs.pairs.is_empty() {
        return Ok(Vec::new());
    }
    let pos = world.positions(q);
    // group primitive contacts by canonical patch pair
    let mut groups: BTreeMap<(usize, u32, usize, u32), Vec<PrimitiveContact>> = BTreeMap::new();
    for pair in &acs.pairs {
        let (ti, tj) = (pair.i as usize, pair.j as usize);
        let first_is_i = (pair.body_i, pair.root_i) <= (pair.body_j, pair.root_j);
        let (ta, tb, key) = if first_is_i {
            (ti, tj, (pair.body_i, pair.root_i, pair.body_j, pair.root_j))
        } else {
            (tj, ti, (pair.body_j, pair.root_j, pair.body_i, pair.root_i))
        };
        if let Some(prim) = collision::primitive_contact(&pos[ta], &pos[tb]) {
            groups.entry(key).or_default().push(prim);
        }
    }

    let mut resolved = Vec::with_capacity(groups.len());
    let mut body_totals: Vec<Vector3<f64>> = vec![Vector3::zeros(); world.n_bodies()];
    for ((body_a, root_a, body_b, root_b), prims) in groups {
        let patch = match collision::patch_reduce(&prims) {
            Ok(p) => p,
            Err(Error::DegeneratePatch(_)) => continue, // dropped with diagnostic
            Err(e) => return Err(e),
        };
        let key = PatchPairKey {
            body_i: body_a,
            root_i: root_a,
            body_j: body_b,
            root_j: root_b,
        };
        let va = world.velocity_at(body_a, &patch.point, q, v);
        let vb = world.velocity_at(body_b, &patch.point, q, v);
        let rel = va - vb;
        let m_eff = world.effective_mass(body_a, body_b);
        let d_prev = history.get(&key);
        let Some(force) = contact::contact_forces(
            &patch,
            &rel,
            &Vector3::zeros(),
            &world.params,
            m_eff,
            d_prev,
            dt,
        ) else {
            continue;
        };
        history.store(key, force.d_t, now);
        let f = force.total();
        if world.is_deformable(body_a) {
            body_totals[body_a] += f;
        }
        if world.is_deformable(body_b) {
            body_totals[body_b] -= f;
        }
        resolved.push(ResolvedContact {
            key,
            patch,
            force_on_first: f,
        });
    }
    history.expire(now);

    // per-body clamp, then distribute
    let scales: Vec<f64> = body_totals
        .iter()
        .map(|t| contact::body_force_clamp(t, world.force_clamp))
        .collect();
    for rc in &resolved {
        for (body, sign) in [(rc.key.body_i, 1.0), (rc.key.body_j, -1.0)] {
            if !world.is_deformable(body) {
                continue;
            }
            let f = rc.force_on_first * (sign * scales[body]);
            contact::distribute_to_nodes(
                &f,
                &rc.patch.point,
                &world.surface_nodes[body],
                |n| Vector3::new(q[3 * n], q[3 * n + 1], q[3 * n + 2]),
                world.distribution_k,
                f_ext,
            )?;
        }
    }
    Ok(resolved)
}

/// Named simulation phase for per-phase RTF reporting.
#[derive(Debug, Clone)]
pub struct Phase {
    pub name: String,
    pub t0: f64,
    pub t1: f64,
}

/// A complete scenario in memory: model, constraints, loads, contact, and
/// stepping configuration.
pub struct Simulation {
    pub model: FeModel,
    pub constraints: ConstraintSet,
    pub solver: AlmSolver,
    pub time: TimeStepConfig,
    pub loads: Vec<PointLoad>,
    pub contact: Option<ContactWorld>,
    pub state: SystemState,
    pub history: ContactHistory,
    pub phases: Vec<Phase>,
    f_ext: Vec<f64>,
    f_ff: Vec<f64>,
}

impl Simulation {
    pub fn new(
        model: FeModel,
        constraints: ConstraintSet,
        solver_config: SolverConfig,
        time: TimeStepConfig,
        loads: Vec<PointLoad>,
        contact: Option<ContactWorld>,
    ) -> Result<Self> {
        time.validate()?;
        let solver = AlmSolver::new(&model, &constraints, solver_config)?;
        let state = SystemState::at_reference(&model.mesh);
        let n = model.n_dofs();
        let mut f_ff = vec![0.0; n];
        assembly::compute_force_field(&model.mass, &time.gravity, &mut f_ff);
        Ok(Simulation {
            model,
            constraints,
            solver,
            time,
            loads,
            contact,
            state,
            history: ContactHistory::new(),
            phases: Vec::new(),
            f_ext: vec![0.0; n],
            f_ff,
        })
    }

    fn apply_loads(&mut self, t: f64) {
        self.f_ext.fill(0.0);
        for load in &self.loads {
            let factor = load.schedule.factor(t);
            if factor == 0.0 || load.nodes.is_empty() {
                continue;
            }
            let per_node = load.total_force * (factor / load.nodes.len() as f64);
            for &n in &load.nodes {
                for d in 0..3 {
                    self.f_ext[3 * n + d] += per_node[d];
                }
            }
        }
    }

    /// One step: contact forces from the given ACS (explicit coupling),
    /// then the implicit ALM solve.
    pub fn step_once(&mut self, step_idx: u64, acs: Option<&Acs>) -> Result<(StepReport, usize)> {
        let t_next = self.state.t + self.time.h;
        self.apply_loads(t_next);
        let mut n_contacts = 0;
        if let (Some(world), Some(acs)) = (self.contact.as_ref(), acs) {
            let contacts = contact_pass(
                world,
                acs,
                &self.state.q,
                &self.state.v,
                &mut self.history,
                self.time.h,
                step_idx,
                &mut self.f_ext,
            )?;
            n_contacts = contacts.len();
        }
        let mut problem = StepProblem {
            model: &self.model,
            constraints: &mut self.constraints,
            f_ext: &self.f_ext,
            f_ff: &self.f_ff,
            h: self.time.h,
            t_next,
        };
        let report = self.solver.step(&mut problem, &mut self.state)?;
        Ok((report, n_contacts))
    }

    fn detect_now(&self, timestamp: u64) -> Result<Acs> {
        let world = self.contact.as_ref().expect("detection needs a contact world");
        let pos = world.positions(&self.state.q);
        let speeds = world.body_speeds(&self.state.v);
        collision::detect(&world.topo, &pos, &speeds, &world.detection, timestamp)
    }
}

/// Wall-clock runtime divided by simulated time.
pub fn rtf(wall_seconds: f64, simulated_seconds: f64) -> f64 {
    assert!(simulated_seconds > 0.0, "rtf needs simulated time > 0");
    wall_seconds / simulated_seconds
}

/// Per-step trajectory record.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: u64,
    pub t: f64,
    pub inner: usize,
    pub outer: usize,
    pub grad_norm: f64,
    pub constraint_norm: f64,
    pub n_contacts: usize,
    pub wall_ms: f64,
    pub converged: bool,
    pub acs_age: u64,
}

/// Whole-run summary.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub records: Vec<StepRecord>,
    pub wall_seconds: f64,
    pub rtf: f64,
    pub max_acs_age: u64,
    pub full_factorizations: usize,
    pub refactorizations: usize,
    pub non_converged_steps: usize,
    /// (phase name, rtf) when phases were declared.
    pub phase_rtf: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub detection: AsyncConfig,
}

/// On every ACS receipt the stepper immediately publishes a work order
/// with its current state (the 1:1 handoff of the two-thread pattern), so
/// the worker is never starved while the stepper waits on freshness.
fn publish(wo_tx: &mpsc::Sender<WorkOrder>, sim: &Simulation, step: u64) {
    let world = sim.contact.as_ref().unwrap();
    wo_tx
        .send(WorkOrder {
            pos: world.positions(&sim.state.q),
            speeds: world.body_speeds(&sim.state.v),
            timestamp: step,
        })
        .ok();
}

struct WorkOrder {
    pos: Vec<[Vector3<f64>; 3]>,
    speeds: Vec<f64>,
    timestamp: u64,
}

/// Runs the scenario to completion. `sink` observes every step (for
/// output cadence decisions by the caller).
pub fn run_simulation(
    sim: &mut Simulation,
    opts: &RunOptions,
    mut sink: impl FnMut(&SystemState, &StepRecord),
) -> Result<RunReport> {
    let start = Instant::now();
    let mut report = RunReport::default();
    let mut phase_wall: Vec<f64> = vec![0.0; sim.phases.len()];
    let n_steps = sim.time.n_steps as u64;

    let run_serial = !opts.detection.enabled || sim.contact.is_none();
    if run_serial {
        let mut acs: Option<Acs> = None;
        for step in 0..n_steps {
            let step_start = Instant::now();
            if sim.contact.is_some() {
                acs = Some(sim.detect_now(step)?);
            }
            let (sr, n_contacts) = sim.step_once(step, acs.as_ref())?;
            let record = make_record(step, sim, &sr, n_contacts, step_start, 0);
            accumulate(&mut report, &mut phase_wall, sim, &record);
            sink(&sim.state, &record);
            report.records.push(record);
        }
    } else {
        run_async(sim, opts, &mut report, &mut phase_wall, &mut sink)?;
    }

    report.wall_seconds = start.elapsed().as_secs_f64();
    let simulated = sim.time.h * n_steps as f64;
    report.rtf = rtf(report.wall_seconds, simulated);
    report.full_factorizations = sim.solver.total_full_factorizations;
    report.refactorizations = sim.solver.total_refactorizations;
    for (i, phase) in sim.phases.iter().enumerate() {
        let span = (phase.t1 - phase.t0).max(1e-300);
        report
            .phase_rtf
            .push((phase.name.clone(), phase_wall[i] / span));
    }
    Ok(report)
}

fn make_record(
    step: u64,
    sim: &Simulation,
    sr: &StepReport,
    n_contacts: usize,
    step_start: Instant,
    acs_age: u64,
) -> StepRecord {
    StepRecord {
        step,
        t: sim.state.t,
        inner: sr.inner_iters_total,
        outer: sr.outer_iters,
        grad_norm: sr.grad_norm,
        constraint_norm: sr.constraint_norm,
        n_contacts,
        wall_ms: step_start.elapsed().as_secs_f64() * 1e3,
        converged: sr.converged,
        acs_age,
    }
}

fn accumulate(report: &mut RunReport, phase_wall: &mut [f64], sim: &Simulation, rec: &StepRecord) {
    if !rec.converged {
        report.non_converged_steps += 1;
    }
    report.max_acs_age = report.max_acs_age.max(rec.acs_age);
    for (i, phase) in sim.phases.iter().enumerate() {
        if rec.t > phase.t0 && rec.t <= phase.t1 + 1e-12 {
            phase_wall[i] += rec.wall_ms * 1e-3;
        }
    }
}

/// Two-worker mode: the kinematics worker consumes work orders (state
/// snapshots) and produces ACS updates; the stepping worker blocks only
/// when the freshest ACS would be older than `n_max` steps.
fn run_async(
    sim: &mut Simulation,
    opts: &RunOptions,
    report: &mut RunReport,
    phase_wall: &mut [f64],
    sink: &mut impl FnMut(&SystemState, &StepRecord),
) -> Result<()> {
    let n_max = opts.detection.n_max.max(1) as u64;
    let n_steps = sim.time.n_steps as u64;
    let detection = sim.contact.as_ref().unwrap().detection;
    let test_delay = opts.detection.test_delay;

    let (wo_tx, wo_rx) = mpsc::channel::<WorkOrder>();
    let (acs_tx, acs_rx) = mpsc::channel::<Result<Acs>>();

    // seed the first work order from the initial state
    {
        let world = sim.contact.as_ref().unwrap();
        wo_tx.send(WorkOrder {
            pos: world.positions(&sim.state.q),
            speeds: world.body_speeds(&sim.state.v),
            timestamp: 0,
        })
        .expect("kinematics worker alive");
    }

    let topo = sim.contact.as_ref().unwrap().topo.clone();
    std::thread::scope(|scope| -> Result<()> {
        scope.spawn(move || {
            // kinematics worker: broad phase + patch labeling per order
            while let Ok(order) = wo_rx.recv() {
                if let Some(d) = test_delay {
                    std::thread::sleep(d);
                }
                let acs = collision::detect(
                    &topo,
                    &order.pos,
                    &order.speeds,
                    &detection,
                    order.timestamp,
                );
                if acs_tx.send(acs).is_err() {
                    break;
                }
            }
        });

        // wait for the seed ACS so step 0 always has contacts available
        let mut acs = acs_rx
            .recv()
            .map_err(|_| Error::State("kinematics worker exited early".into()))??;
        publish(&wo_tx, sim, 0);

        for step in 0..n_steps {
            let step_start = Instant::now();
            // consume the freshest ACS if one arrived
            while let Ok(next) = acs_rx.try_recv() {
                acs = next?;
                publish(&wo_tx, sim, step);
            }
            // enforce the freshness contract
            while step.saturating_sub(acs.timestamp) >= n_max && step > 0 {
                acs = acs_rx
                    .recv()
                    .map_err(|_| Error::State("kinematics worker exited early".into()))??;
                publish(&wo_tx, sim, step);
            }
            let age = step.saturating_sub(acs.timestamp);
            let (sr, n_contacts) = sim.step_once(step, Some(&acs))?;
            let record = make_record(step, sim, &sr, n_contacts, step_start, age);
            accumulate(report, phase_wall, sim, &record);
            sink(&sim.state, &record);
            report.records.push(record);
        }
        drop(wo_tx);
        Ok(())
    })
}
