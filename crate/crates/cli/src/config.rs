//! Line-oriented scenario configuration: `section.key = value` pairs plus
//! repeatable `[body]`, `[joint]`, `[load]`, and `[phase]` blocks. Unknown
//! keys are errors; parse errors carry line numbers. The serializer emits
//! a canonical form whose re-parse is identical.

use nalgebra::Vector3;
use std::fmt::Write as _;
use tlfea_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub time: TimeCfg,
    pub solver: SolverCfg,
    pub mass_exact: bool,
    pub output: OutputCfg,
    pub detection: DetectionCfg,
    pub contact: Option<ContactCfg>,
    pub env_floor: Option<FloorCfg>,
    pub bodies: Vec<BodyCfg>,
    pub joints: Vec<JointCfg>,
    pub loads: Vec<LoadCfg>,
    pub phases: Vec<PhaseCfg>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeCfg {
    pub h: f64,
    pub n_steps: usize,
    pub gravity: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Newton,
    AdamW,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverCfg {
    pub kind: SolverKind,
    pub eps_in: f64,
    pub eps_rel: f64,
    pub eps_out: f64,
    pub rho: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub line_search: bool,
    pub ordering_natural: bool,
    pub adamw_alpha0: f64,
    pub adamw_alpha_min: f64,
    pub adamw_beta1: f64,
    pub adamw_beta2: f64,
    pub adamw_eps: f64,
    pub adamw_weight_decay: f64,
    pub check_interval: usize,
}

impl Default for SolverCfg {
    fn default() -> Self {
        SolverCfg {
            kind: SolverKind::Newton,
            eps_in: 1e-6,
            eps_rel: 0.0,
            eps_out: 1e-6,
            rho: 1e10,
            max_outer: 3,
            max_inner: 10,
            line_search: true,
            ordering_natural: false,
            adamw_alpha0: 1e-3,
            adamw_alpha_min: 0.0,
            adamw_beta1: 0.9,
            adamw_beta2: 0.999,
            adamw_eps: 1e-8,
            adamw_weight_decay: 0.0,
            check_interval: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputCfg {
    pub every: usize,
    pub dir: String,
}

impl Default for OutputCfg {
    fn default() -> Self {
        OutputCfg {
            every: 0,
            dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionCfg {
    pub async_mode: bool,
    pub n_max: usize,
    pub bin_size: Option<f64>,
    pub margin_a: f64,
    pub margin_b: f64,
    pub max_per_bin: usize,
}

impl Default for DetectionCfg {
    fn default() -> Self {
        DetectionCfg {
            async_mode: false,
            n_max: 10,
            bin_size: None,
            margin_a: 1.0,
            margin_b: 0.5,
            max_per_bin: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactCfg {
    pub k_n: f64,
    pub k_t: f64,
    /// `None` derives gamma_n from the restitution coefficient.
    pub gamma_n: Option<f64>,
    pub gamma_t: f64,
    pub mu_s: f64,
    pub mu_k: f64,
    pub mu_r: f64,
    pub restitution: f64,
    pub distribution_k: usize,
    pub force_clamp: f64,
    pub stick_speed: f64,
}

impl Default for ContactCfg {
    fn default() -> Self {
        ContactCfg {
            k_n: 1e8,
            k_t: 2e8 / 7.0,
            gamma_n: None,
            gamma_t: 0.0,
            mu_s: 0.5,
            mu_k: 0.5,
            mu_r: 0.0,
            restitution: 1.0,
            distribution_k: 8,
            force_clamp: 50_000.0,
            stick_speed: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloorCfg {
    pub z: f64,
    pub half_extent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaterialCfg {
    Svk {
        youngs: f64,
        poisson: f64,
        density: f64,
        eta_damp: f64,
        lambda_damp: f64,
    },
    MooneyRivlin {
        c10: f64,
        c01: f64,
        kappa: f64,
        density: f64,
        eta_damp: f64,
        lambda_damp: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyCfg {
    pub name: String,
    pub mesh: String,
    pub material: MaterialCfg,
    pub translate: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSelect {
    /// axis index 0..2
    pub axis: usize,
    pub value: f64,
    /// `=`, `<`, `>` comparison against `value`
    pub cmp: char,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JointCfg {
    Clamp {
        name: String,
        body: String,
        select: NodeSelect,
    },
    SphericalAnchor {
        name: String,
        body: String,
        point: Vector3<f64>,
    },
    RevoluteAnchor {
        name: String,
        body: String,
        point: Vector3<f64>,
        axis_a: Vector3<f64>,
        axis_b: Vector3<f64>,
        world_t1: Vector3<f64>,
        world_t2: Vector3<f64>,
    },
    Spherical {
        name: String,
        parent: String,
        child: String,
        parent_point: Vector3<f64>,
        child_point: Vector3<f64>,
    },
    Revolute {
        name: String,
        parent: String,
        child: String,
        parent_point: Vector3<f64>,
        child_point: Vector3<f64>,
        axis_a: Vector3<f64>,
        axis_b: Vector3<f64>,
        trans1_a: Vector3<f64>,
        trans1_b: Vector3<f64>,
        trans2_a: Vector3<f64>,
        trans2_b: Vector3<f64>,
    },
    /// Prescribed base motion: anchors every selected node with a
    /// triangular-velocity waveform along one axis.
    MotionAnchor {
        name: String,
        body: String,
        select: NodeSelect,
        axis: usize,
        peak_speed: f64,
        period: f64,
        t0: f64,
        t1: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadScheduleCfg {
    Constant,
    Ramp { t0: f64, t1: f64 },
    Window { t_on: f64, t_off: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadCfg {
    pub body: String,
    pub select: NodeSelect,
    pub force: Vector3<f64>,
    pub schedule: LoadScheduleCfg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCfg {
    pub name: String,
    pub t0: f64,
    pub t1: f64,
}

// ---------------------------------------------------------------------
// parsing
// ---------------------------------------------------------------------

struct KeyLine {
    line: usize,
    key: String,
    value: String,
}

fn err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::usage(format!("config line {line}: {msg}"))
}

fn parse_f64(l: &KeyLine) -> Result<f64> {
    l.value
        .parse()
        .map_err(|e| err(l.line, format!("bad number for '{}': {e}", l.key)))
}

fn parse_usize(l: &KeyLine) -> Result<usize> {
    l.value
        .parse()
        .map_err(|e| err(l.line, format!("bad integer for '{}': {e}", l.key)))
}

fn parse_bool(l: &KeyLine) -> Result<bool> {
    match l.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(err(l.line, format!("expected true/false for '{}', got '{other}'", l.key))),
    }
}

fn parse_vec3(l: &KeyLine) -> Result<Vector3<f64>> {
    let parts: Vec<f64> = l
        .value
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(l.line, format!("bad vector for '{}': {e}", l.key)))?;
    if parts.len() != 3 {
        return Err(err(l.line, format!("'{}' needs 3 components", l.key)));
    }
    Ok(Vector3::new(parts[0], parts[1], parts[2]))
}

fn parse_select(lines: &mut Block) -> Result<NodeSelect> {
    let axis_line = lines.take("select.axis")?;
    let axis = match axis_line.value.as_str() {
        "x" => 0,
        "y" => 1,
        "z" => 2,
        other => return Err(err(axis_line.line, format!("bad axis '{other}'"))),
    };
    let value = parse_f64(&lines.take("select.value")?)?;
    let cmp = match lines.take_opt("select.cmp") {
        Some(c) => {
            let ch = c.value.chars().next().unwrap_or('=');
            if !"=<>".contains(ch) {
                return Err(err(c.line, "select.cmp must be one of = < >"));
            }
            ch
        }
        None => '=',
    };
    Ok(NodeSelect { axis, value, cmp })
}

/// Key-value lines of one block, consumed key by key so leftovers can be
/// reported as unknown.
struct Block {
    header_line: usize,
    lines: Vec<KeyLine>,
}

impl Block {
    fn take(&mut self, key: &str) -> Result<KeyLine> {
        self.take_opt(key)
            .ok_or_else(|| err(self.header_line, format!("missing required key '{key}'")))
    }

    fn take_opt(&mut self, key: &str) -> Option<KeyLine> {
        let idx = self.lines.iter().position(|l| l.key == key)?;
        Some(self.lines.remove(idx))
    }

    fn finish(self, context: &str) -> Result<()> {
        if let Some(l) = self.lines.first() {
            return Err(err(
                l.line,
                format!("unknown key '{}' in {context}", l.key),
            ));
        }
        Ok(())
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    // split into the top-level block and named blocks
    let mut top = Block {
        header_line: 0,
        lines: Vec::new(),
    };
    let mut blocks: Vec<(String, Block)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line_no, "unterminated block header"))?
                .trim()
                .to_string();
            if !["body", "joint", "load", "phase"].contains(&name.as_str()) {
                return Err(err(line_no, format!("unknown block '[{name}]'")));
            }
            blocks.push((
                name,
                Block {
                    header_line: line_no,
                    lines: Vec::new(),
                },
            ));
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, "expected 'key = value'"))?;
        let entry = KeyLine {
            line: line_no,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        };
        match blocks.last_mut() {
            Some((_, b)) => b.lines.push(entry),
            None => top.lines.push(entry),
        }
    }

    // top-level sections
    let name = top
        .take_opt("name")
        .map(|l| l.value)
        .unwrap_or_else(|| "scenario".into());
    let time = TimeCfg {
        h: parse_f64(&top.take("time.h")?)?,
        n_steps: parse_usize(&top.take("time.n_steps")?)?,
        gravity: top
            .take_opt("time.gravity")
            .map(|l| parse_vec3(&l))
            .transpose()?
            .unwrap_or_else(Vector3::zeros),
    };
    let mut solver = SolverCfg::default();
    if let Some(l) = top.take_opt("solver.type") {
        solver.kind = match l.value.as_str() {
            "newton" => SolverKind::Newton,
            "adamw" => SolverKind::AdamW,
            other => return Err(err(l.line, format!("unknown solver '{other}'"))),
        };
    }
    if let Some(l) = top.take_opt("solver.eps_in") {
        solver.eps_in = parse_f64(&l)?;
    }
    if let Some(l) = top.take_opt("solver.eps_rel") {
        solver.eps_rel = parse_f64(&l)?;
    }
    if let Some(l) = top.take_opt("solver.eps_out") {
        solver.eps_out = parse_f64(&l)?;
    }
    if let Some(l) = top.take_opt("solver.rho") {
        solver.rho = parse_f64(&l)?;
    }
    if let Some(l) = top.take_opt("solver.max_outer") {
        solver.max_outer = parse_usize(&l)?;
    }
    if let Some(l) = top.take_opt("solver.max_inner") {
        solver.max_inner = parse_usize(&l)?;
    }
    if let Some(l) = top.take_opt("solver.line_search") {
        solver.line_search = parse_bool(&l)?;
    }
    if let Some(l) = top.take_opt("solver.ordering") {
        solver.ordering_natural = match l.value.as_str() {
            "amd" => false,
            "natural" => true,
            other => return Err(err(l.line, format!("unknown ordering '{other}'"))),
        };
    }
    if let Some(l) = top.take_opt("solver.adamw.alpha0") {
        solver.adamw_alpha0 = parse_f64(&l)?;
    }
    if let Some(l) = top.take_opt("solver.adamw.alpha_min") {
        solver.adamw_alpha_min = parse_f64(&l)?;
    }
    if let Some(l) = top.take_opt("solver.adamw.beta1") {
        solver.adamw_beta1 = parse_f64(&l)?;
    }
    if let Some(l) = top.take_opt("solver.adamw.beta2") {
        solver.adamw_beta2 = parse_f64(&l)?;
    }
    if let Some(l) = top.take_opt("solver.adamw.eps") {
        solver.adamw_eps = parse_f64(&l)?;
    }
    if let Some(l) = top.take_opt("solver.adamw.weight_decay") {
        solver.adamw_weight_decay = parse_f64(&l)?;
    }
    if let Some(l) = top.take_opt("solver.check_interval") {
        solver.check_interval = parse_usize(&l)?;
    }
    let mass_exact = top
        .take_opt("quadrature.mass_exact")
        .map(|l| parse_bool(&l))
        .transpose()?
        .unwrap_or(true);
    let mut output = OutputCfg::default();
    if let Some(l) = top.take_opt("output.every") {
        output.every = parse_usize(&l)?;
    }
    if let Some(l) = top.take_opt("output.dir") {
        output.dir = l.value;
    }
    let mut detection = DetectionCfg::default();
    if let Some(l) = top.take_opt("detection.mode") {
        detection.async_mode = match l.value.as_str() {
            "sync" => false,
            "async" => true,
            other => return Err(err(l.line, format!("unknown detection mode '{other}'"))),
        };
    }
    if let Some(l) = top.take_opt("detection.n_max") {
        detection.n_max = parse_usize(&l)?;
    }
    if let Some(l) = top.take_opt("detection.bin_size") {
        detection.bin_size = if l.value == "auto" {
            None
        } else {
            Some(parse_f64(&l)?)
        };
    }
    if let Some(l) = top.take_opt("detection.margin_a") {
        detection.margin_a = parse_f64(&l)?;
    }
    if let Some(l) = top.take_opt("detection.margin_b") {
        detection.margin_b = parse_f64(&l)?;
    }
    if let Some(l) = top.take_opt("detection.max_per_bin") {
        detection.max_per_bin = parse_usize(&l)?;
    }

    let contact = if top
        .take_opt("contact.enabled")
        .map(|l| parse_bool(&l))
        .transpose()?
        .unwrap_or(false)
    {
        let mut c = ContactCfg::default();
        if let Some(l) = top.take_opt("contact.k_n") {
            c.k_n = parse_f64(&l)?;
        }
        if let Some(l) = top.take_opt("contact.k_t") {
            c.k_t = parse_f64(&l)?;
        }
        if let Some(l) = top.take_opt("contact.gamma_n") {
            c.gamma_n = if l.value == "auto" {
                None
            } else {
                Some(parse_f64(&l)?)
            };
        }
        if let Some(l) = top.take_opt("contact.gamma_t") {
            c.gamma_t = parse_f64(&l)?;
        }
        if let Some(l) = top.take_opt("contact.mu_s") {
            c.mu_s = parse_f64(&l)?;
        }
        if let Some(l) = top.take_opt("contact.mu_k") {
            c.mu_k = parse_f64(&l)?;
        }
        if let Some(l) = top.take_opt("contact.mu_r") {
            c.mu_r = parse_f64(&l)?;
        }
        if let Some(l) = top.take_opt("contact.restitution") {
            c.restitution = parse_f64(&l)?;
        }
        if let Some(l) = top.take_opt("contact.distribution_k") {
            c.distribution_k = parse_usize(&l)?;
        }
        if let Some(l) = top.take_opt("contact.force_clamp") {
            c.force_clamp = parse_f64(&l)?;
        }
        if let Some(l) = top.take_opt("contact.stick_speed") {
            c.stick_speed = parse_f64(&l)?;
        }
        Some(c)
    } else {
        None
    };

    let env_floor = match (top.take_opt("env.floor.z"), top.take_opt("env.floor.half")) {
        (Some(z), Some(half)) => Some(FloorCfg {
            z: parse_f64(&z)?,
            half_extent: parse_f64(&half)?,
        }),
        (None, None) => None,
        (Some(l), None) | (None, Some(l)) => {
            return Err(err(l.line, "env.floor needs both env.floor.z and env.floor.half"))
        }
    };
    top.finish("the top-level section")?;

    // named blocks
    let mut bodies = Vec::new();
    let mut joints = Vec::new();
    let mut loads = Vec::new();
    let mut phases = Vec::new();
    for (kind, mut b) in blocks {
        match kind.as_str() {
            "body" => {
                let name = b.take("name")?.value;
                let mesh = b.take("mesh")?.value;
                let model = b.take("material.model")?;
                let density = parse_f64(&b.take("material.density")?)?;
                let eta = b
                    .take_opt("material.eta_damp")
                    .map(|l| parse_f64(&l))
                    .transpose()?
                    .unwrap_or(0.0);
                let lambda = b
                    .take_opt("material.lambda_damp")
                    .map(|l| parse_f64(&l))
                    .transpose()?
                    .unwrap_or(0.0);
                let material = match model.value.as_str() {
                    "svk" => MaterialCfg::Svk {
                        youngs: parse_f64(&b.take("material.youngs")?)?,
                        poisson: parse_f64(&b.take("material.poisson")?)?,
                        density,
                        eta_damp: eta,
                        lambda_damp: lambda,
                    },
                    "mooney_rivlin" => {
                        let kappa = match (b.take_opt("material.kappa"), b.take_opt("material.d1")) {
                            (Some(k), None) => parse_f64(&k)?,
                            (None, Some(d)) => 2.0 / parse_f64(&d)?,
                            (Some(k), Some(_)) => {
                                return Err(err(k.line, "give material.kappa or material.d1, not both"))
                            }
                            (None, None) => {
                                return Err(err(model.line, "mooney_rivlin needs material.kappa or material.d1"))
                            }
                        };
                        MaterialCfg::MooneyRivlin {
                            c10: parse_f64(&b.take("material.c10")?)?,
                            c01: parse_f64(&b.take("material.c01")?)?,
                            kappa,
                            density,
                            eta_damp: eta,
                            lambda_damp: lambda,
                        }
                    }
                    other => return Err(err(model.line, format!("unknown material model '{other}'"))),
                };
                let translate = b
                    .take_opt("translate")
                    .map(|l| parse_vec3(&l))
                    .transpose()?
                    .unwrap_or_else(Vector3::zeros);
                let velocity = b
                    .take_opt("velocity")
                    .map(|l| parse_vec3(&l))
                    .transpose()?
                    .unwrap_or_else(Vector3::zeros);
                b.finish("[body]")?;
                bodies.push(BodyCfg {
                    name,
                    mesh,
                    material,
                    translate,
                    velocity,
                });
            }
            "joint" => {
                let ty = b.take("type")?;
                let name = b.take("name")?.value;
                let joint = match ty.value.as_str() {
                    "clamp" => JointCfg::Clamp {
                        name,
                        body: b.take("body")?.value,
                        select: parse_select(&mut b)?,
                    },
                    "spherical_anchor" => JointCfg::SphericalAnchor {
                        name,
                        body: b.take("body")?.value,
                        point: parse_vec3(&b.take("point")?)?,
                    },
                    "revolute_anchor" => JointCfg::RevoluteAnchor {
                        name,
                        body: b.take("body")?.value,
                        point: parse_vec3(&b.take("point")?)?,
                        axis_a: parse_vec3(&b.take("axis_a")?)?,
                        axis_b: parse_vec3(&b.take("axis_b")?)?,
                        world_t1: parse_vec3(&b.take("world_t1")?)?,
                        world_t2: parse_vec3(&b.take("world_t2")?)?,
                    },
                    "spherical" => JointCfg::Spherical {
                        name,
                        parent: b.take("parent")?.value,
                        child: b.take("child")?.value,
                        parent_point: parse_vec3(&b.take("parent_point")?)?,
                        child_point: parse_vec3(&b.take("child_point")?)?,
                    },
                    "revolute" => JointCfg::Revolute {
                        name,
                        parent: b.take("parent")?.value,
                        child: b.take("child")?.value,
                        parent_point: parse_vec3(&b.take("parent_point")?)?,
                        child_point: parse_vec3(&b.take("child_point")?)?,
                        axis_a: parse_vec3(&b.take("axis_a")?)?,
                        axis_b: parse_vec3(&b.take("axis_b")?)?,
                        trans1_a: parse_vec3(&b.take("trans1_a")?)?,
                        trans1_b: parse_vec3(&b.take("trans1_b")?)?,
                        trans2_a: parse_vec3(&b.take("trans2_a")?)?,
                        trans2_b: parse_vec3(&b.take("trans2_b")?)?,
                    },
                    "motion_anchor" => JointCfg::MotionAnchor {
                        name,
                        body: b.take("body")?.value,
                        select: parse_select(&mut b)?,
                        axis: match b.take("axis")?.value.as_str() {
                            "x" => 0,
                            "y" => 1,
                            "z" => 2,
                            other => return Err(err(ty.line, format!("bad axis '{other}'"))),
                        },
                        peak_speed: parse_f64(&b.take("peak_speed")?)?,
                        period: parse_f64(&b.take("period")?)?,
                        t0: parse_f64(&b.take("t0")?)?,
                        t1: parse_f64(&b.take("t1")?)?,
                    },
                    other => return Err(err(ty.line, format!("unknown joint type '{other}'"))),
                };
                b.finish("[joint]")?;
                joints.push(joint);
            }
            "load" => {
                let body = b.take("body")?.value;
                let select = parse_select(&mut b)?;
                let force = parse_vec3(&b.take("force")?)?;
                let sched_line = b.take("schedule")?;
                let toks: Vec<&str> = sched_line.value.split_whitespace().collect();
                let schedule = match toks.as_slice() {
                    ["constant"] => LoadScheduleCfg::Constant,
                    ["ramp", t0, t1] => LoadScheduleCfg::Ramp {
                        t0: t0.parse().map_err(|e| err(sched_line.line, e))?,
                        t1: t1.parse().map_err(|e| err(sched_line.line, e))?,
                    },
                    ["window", a, b2] => LoadScheduleCfg::Window {
                        t_on: a.parse().map_err(|e| err(sched_line.line, e))?,
                        t_off: b2.parse().map_err(|e| err(sched_line.line, e))?,
                    },
                    _ => return Err(err(sched_line.line, "schedule must be 'constant', 'ramp t0 t1', or 'window t_on t_off'")),
                };
                b.finish("[load]")?;
                loads.push(LoadCfg {
                    body,
                    select,
                    force,
                    schedule,
                });
            }
            "phase" => {
                let name = b.take("name")?.value;
                let t0 = parse_f64(&b.take("t0")?)?;
                let t1 = parse_f64(&b.take("t1")?)?;
                b.finish("[phase]")?;
                phases.push(PhaseCfg { name, t0, t1 });
            }
            _ => unreachable!("block names validated above"),
        }
    }

    Ok(Scenario {
        name,
        time,
        solver,
        mass_exact,
        output,
        detection,
        contact,
        env_floor,
        bodies,
        joints,
        loads,
        phases,
    })
}

// ---------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------

fn v3(v: &Vector3<f64>) -> String {
    format!("{:e} {:e} {:e}", v.x, v.y, v.z)
}

fn sel(out: &mut String, s: &NodeSelect) {
    let axis = ["x", "y", "z"][s.axis];
    let _ = writeln!(out, "select.axis = {axis}");
    let _ = writeln!(out, "select.value = {:e}", s.value);
    let _ = writeln!(out, "select.cmp = {}", s.cmp);
}

pub fn scenario_to_string(s: &Scenario) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "name = {}", s.name);
    let _ = writeln!(out, "time.h = {:e}", s.time.h);
    let _ = writeln!(out, "time.n_steps = {}", s.time.n_steps);
    let _ = writeln!(out, "time.gravity = {}", v3(&s.time.gravity));
    let kind = match s.solver.kind {
        SolverKind::Newton => "newton",
        SolverKind::AdamW => "adamw",
    };
    let _ = writeln!(out, "solver.type = {kind}");
    let _ = writeln!(out, "solver.eps_in = {:e}", s.solver.eps_in);
    let _ = writeln!(out, "solver.eps_rel = {:e}", s.solver.eps_rel);
    let _ = writeln!(out, "solver.eps_out = {:e}", s.solver.eps_out);
    let _ = writeln!(out, "solver.rho = {:e}", s.solver.rho);
    let _ = writeln!(out, "solver.max_outer = {}", s.solver.max_outer);
    let _ = writeln!(out, "solver.max_inner = {}", s.solver.max_inner);
    let _ = writeln!(out, "solver.line_search = {}", s.solver.line_search);
    let _ = writeln!(
        out,
        "solver.ordering = {}",
        if s.solver.ordering_natural { "natural" } else { "amd" }
    );
    let _ = writeln!(out, "solver.adamw.alpha0 = {:e}", s.solver.adamw_alpha0);
    let _ = writeln!(out, "solver.adamw.alpha_min = {:e}", s.solver.adamw_alpha_min);
    let _ = writeln!(out, "solver.adamw.beta1 = {:e}", s.solver.adamw_beta1);
    let _ = writeln!(out, "solver.adamw.beta2 = {:e}", s.solver.adamw_beta2);
    let _ = writeln!(out, "solver.adamw.eps = {:e}", s.solver.adamw_eps);
    let _ = writeln!(out, "solver.adamw.weight_decay = {:e}", s.solver.adamw_weight_decay);
    let _ = writeln!(out, "solver.check_interval = {}", s.solver.check_interval);
    let _ = writeln!(out, "quadrature.mass_exact = {}", s.mass_exact);
    let _ = writeln!(out, "output.every = {}", s.output.every);
    let _ = writeln!(out, "output.dir = {}", s.output.dir);
    let _ = writeln!(
        out,
        "detection.mode = {}",
        if s.detection.async_mode { "async" } else { "sync" }
    );
    let _ = writeln!(out, "detection.n_max = {}", s.detection.n_max);
    match s.detection.bin_size {
        Some(b) => {
            let _ = writeln!(out, "detection.bin_size = {b:e}");
        }
        None => {
            let _ = writeln!(out, "detection.bin_size = auto");
        }
    }
    let _ = writeln!(out, "detection.margin_a = {:e}", s.detection.margin_a);
    let _ = writeln!(out, "detection.margin_b = {:e}", s.detection.margin_b);
    let _ = writeln!(out, "detection.max_per_bin = {}", s.detection.max_per_bin);
    if let Some(c) = &s.contact {
        let _ = writeln!(out, "contact.enabled = true");
        let _ = writeln!(out, "contact.k_n = {:e}", c.k_n);
        let _ = writeln!(out, "contact.k_t = {:e}", c.k_t);
        match c.gamma_n {
            Some(g) => {
                let _ = writeln!(out, "contact.gamma_n = {g:e}");
            }
            None => {
                let _ = writeln!(out, "contact.gamma_n = auto");
            }
        }
        let _ = writeln!(out, "contact.gamma_t = {:e}", c.gamma_t);
        let _ = writeln!(out, "contact.mu_s = {:e}", c.mu_s);
        let _ = writeln!(out, "contact.mu_k = {:e}", c.mu_k);
        let _ = writeln!(out, "contact.mu_r = {:e}", c.mu_r);
        let _ = writeln!(out, "contact.restitution = {:e}", c.restitution);
        let _ = writeln!(out, "contact.distribution_k = {}", c.distribution_k);
        let _ = writeln!(out, "contact.force_clamp = {:e}", c.force_clamp);
        let _ = writeln!(out, "contact.stick_speed = {:e}", c.stick_speed);
    }
    if let Some(f) = &s.env_floor {
        let _ = writeln!(out, "env.floor.z = {:e}", f.z);
        let _ = writeln!(out, "env.floor.half = {:e}", f.half_extent);
    }
    for b in &s.bodies {
        out.push_str("\n[body]\n");
        let _ = writeln!(out, "name = {}", b.name);
        let _ = writeln!(out, "mesh = {}", b.mesh);
        match &b.material {
            MaterialCfg::Svk {
                youngs,
                poisson,
                density,
                eta_damp,
                lambda_damp,
            } => {
                out.push_str("material.model = svk\n");
                let _ = writeln!(out, "material.youngs = {youngs:e}");
                let _ = writeln!(out, "material.poisson = {poisson:e}");
                let _ = writeln!(out, "material.density = {density:e}");
                let _ = writeln!(out, "material.eta_damp = {eta_damp:e}");
                let _ = writeln!(out, "material.lambda_damp = {lambda_damp:e}");
            }
            MaterialCfg::MooneyRivlin {
                c10,
                c01,
                kappa,
                density,
                eta_damp,
                lambda_damp,
            } => {
                out.push_str("material.model = mooney_rivlin\n");
                let _ = writeln!(out, "material.c10 = {c10:e}");
                let _ = writeln!(out, "material.c01 = {c01:e}");
                let _ = writeln!(out, "material.kappa = {kappa:e}");
                let _ = writeln!(out, "material.density = {density:e}");
                let _ = writeln!(out, "material.eta_damp = {eta_damp:e}");
                let _ = writeln!(out, "material.lambda_damp = {lambda_damp:e}");
            }
        }
        let _ = writeln!(out, "translate = {}", v3(&b.translate));
        let _ = writeln!(out, "velocity = {}", v3(&b.velocity));
    }
    for j in &s.joints {
        out.push_str("\n[joint]\n");
        match j {
            JointCfg::Clamp { name, body, select } => {
                out.push_str("type = clamp\n");
                let _ = writeln!(out, "name = {name}");
                let _ = writeln!(out, "body = {body}");
                sel(&mut out, select);
            }
            JointCfg::SphericalAnchor { name, body, point } => {
                out.push_str("type = spherical_anchor\n");
                let _ = writeln!(out, "name = {name}");
                let _ = writeln!(out, "body = {body}");
                let _ = writeln!(out, "point = {}", v3(point));
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
                out.push_str("type = revolute_anchor\n");
                let _ = writeln!(out, "name = {name}");
                let _ = writeln!(out, "body = {body}");
                let _ = writeln!(out, "point = {}", v3(point));
                let _ = writeln!(out, "axis_a = {}", v3(axis_a));
                let _ = writeln!(out, "axis_b = {}", v3(axis_b));
                let _ = writeln!(out, "world_t1 = {}", v3(world_t1));
                let _ = writeln!(out, "world_t2 = {}", v3(world_t2));
            }
            JointCfg::Spherical {
                name,
                parent,
                child,
                parent_point,
                child_point,
            } => {
                out.push_str("type = spherical\n");
                let _ = writeln!(out, "name = {name}");
                let _ = writeln!(out, "parent = {parent}");
                let _ = writeln!(out, "child = {child}");
                let _ = writeln!(out, "parent_point = {}", v3(parent_point));
                let _ = writeln!(out, "child_point = {}", v3(child_point));
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
                out.push_str("type = revolute\n");
                let _ = writeln!(out, "name = {name}");
                let _ = writeln!(out, "parent = {parent}");
                let _ = writeln!(out, "child = {child}");
                let _ = writeln!(out, "parent_point = {}", v3(parent_point));
                let _ = writeln!(out, "child_point = {}", v3(child_point));
                let _ = writeln!(out, "axis_a = {}", v3(axis_a));
                let _ = writeln!(out, "axis_b = {}", v3(axis_b));
                let _ = writeln!(out, "trans1_a = {}", v3(trans1_a));
                let _ = writeln!(out, "trans1_b = {}", v3(trans1_b));
                let _ = writeln!(out, "trans2_a = {}", v3(trans2_a));
                let _ = writeln!(out, "trans2_b = {}", v3(trans2_b));
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
                out.push_str("type = motion_anchor\n");
                let _ = writeln!(out, "name = {name}");
                let _ = writeln!(out, "body = {body}");
                sel(&mut out, select);
                let _ = writeln!(out, "axis = {}", ["x", "y", "z"][*axis]);
                let _ = writeln!(out, "peak_speed = {peak_speed:e}");
                let _ = writeln!(out, "period = {period:e}");
                let _ = writeln!(out, "t0 = {t0:e}");
                let _ = writeln!(out, "t1 = {t1:e}");
            }
        }
    }
    for l in &s.loads {
        out.push_str("\n[load]\n");
        let _ = writeln!(out, "body = {}", l.body);
        sel(&mut out, &l.select);
        let _ = writeln!(out, "force = {}", v3(&l.force));
        match l.schedule {
            LoadScheduleCfg::Constant => out.push_str("schedule = constant\n"),
            LoadScheduleCfg::Ramp { t0, t1 } => {
                let _ = writeln!(out, "schedule = ramp {t0:e} {t1:e}");
            }
            LoadScheduleCfg::Window { t_on, t_off } => {
                let _ = writeln!(out, "schedule = window {t_on:e} {t_off:e}");
            }
        }
    }
    for p in &s.phases {
        out.push_str("\n[phase]\n");
        let _ = writeln!(out, "name = {}", p.name);
        let _ = writeln!(out, "t0 = {:e}", p.t0);
        let _ = writeln!(out, "t1 = {:e}", p.t1);
    }
    out
}

pub fn load_scenario(path: impl AsRef<std::path::Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::usage(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = sample
time.h = 5e-4
time.n_steps = 100
time.gravity = 0 0 -9.81
solver.type = newton
solver.eps_in = 1e-6
solver.rho = 1e12
solver.max_outer = 3
contact.enabled = true
contact.k_n = 1e8
contact.mu_s = 0.25
contact.mu_k = 0.2
contact.restitution = 0
env.floor.z = 0
env.floor.half = 5

[body]
name = brick
mesh = meshes/brick.tlmesh
material.model = svk
material.youngs = 1e7
material.poisson = 0.3
material.density = 2700

[load]
body = brick
select.axis = x
select.value = 0.4
force = 0 0 -20
schedule = ramp 0 0.1

[joint]
type = clamp
name = base
body = brick
select.axis = x
select.value = 0
"#;

    #[test]
    fn parse_and_roundtrip_identity() {
        let s1 = parse_scenario(SAMPLE).unwrap();
        assert_eq!(s1.name, "sample");
        assert_eq!(s1.bodies.len(), 1);
        assert_eq!(s1.loads.len(), 1);
        assert_eq!(s1.joints.len(), 1);
        assert!(s1.contact.is_some());
        assert_eq!(s1.contact.as_ref().unwrap().k_n, 1e8);
        let text = scenario_to_string(&s1);
        let s2 = parse_scenario(&text).unwrap();
        assert_eq!(s1, s2, "parse -> serialize -> parse is identity");
    }

    #[test]
    fn unknown_key_is_an_error_with_line_number() {
        let bad = "time.h = 1e-3\ntime.n_steps = 1\nbogus.key = 7\n";
        let msg = parse_scenario(bad).unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("bogus.key"), "{msg}");
    }

    #[test]
    fn unknown_block_key_is_an_error() {
        let bad = "time.h = 1e-3\ntime.n_steps = 1\n[body]\nname = x\nmesh = m\nmaterial.model = svk\nmaterial.youngs = 1\nmaterial.poisson = 0.3\nmaterial.density = 1\nwhatever = 3\n";
        let msg = parse_scenario(bad).unwrap_err().to_string();
        assert!(msg.contains("whatever"), "{msg}");
    }

    #[test]
    fn missing_required_key_reports_block() {
        let bad = "time.h = 1e-3\ntime.n_steps = 1\n[body]\nname = x\n";
        let msg = parse_scenario(bad).unwrap_err().to_string();
        assert!(msg.contains("mesh"), "{msg}");
    }

    #[test]
    fn mooney_rivlin_d1_maps_to_kappa() {
        let cfg = "time.h = 1e-3\ntime.n_steps = 1\n[body]\nname = foam\nmesh = m\nmaterial.model = mooney_rivlin\nmaterial.c10 = 417000\nmaterial.c01 = 104000\nmaterial.d1 = 7.36e-7\nmaterial.density = 80\n";
        let s = parse_scenario(cfg).unwrap();
        match &s.bodies[0].material {
            MaterialCfg::MooneyRivlin { kappa, .. } => {
                approx::assert_relative_eq!(*kappa, 2.0 / 7.36e-7, max_relative = 1e-12);
            }
            other => panic!("wrong material: {other:?}"),
        }
    }
}
