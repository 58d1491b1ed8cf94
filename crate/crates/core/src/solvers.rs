//! The ALM outer loop and both inner solvers: AdamW (first order) and
//! Newton with optional Armijo backtracking (second order).
//!
//! One time step solves the velocity-level subproblem
//! `min_v Phi(v) + lambda.c(q_n + h v) + rho/2 |c|^2` for fixed
//! multipliers, commits `q = q_n + h v`, and performs the dual ascent
//! `lambda <- lambda + rho c` until the constraint residual meets the
//! outer tolerance.

use crate::assembly::{
    self, AccumulationMode, AssemblyWorkspace, FeModel, HessianWorkspace,
};
use crate::constraints::ConstraintSet;
use crate::error::Result;
use crate::model::{step_map_into, SystemState};
use crate::sparse::{OrderingKind, SolveBackend, SolveOptions, SpdSolveContext};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InnerSolverKind {
    #[default]
    Newton,
    AdamW,
}

/// Newton inner-solver settings; the Armijo defaults follow the usual
/// c1 = 1e-4, beta = 0.5, j_max = 10.
#[derive(Debug, Clone, Copy)]
pub struct NewtonConfig {
    pub line_search: bool,
    pub c1: f64,
    pub beta: f64,
    pub j_max: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            line_search: true,
            c1: 1e-4,
            beta: 0.5,
            j_max: 10,
        }
    }
}

/// Step-size schedule for AdamW, indexed by the inner iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSchedule {
    Constant(f64),
    /// Geometric decay from `alpha0` to `alpha_min` over `l_max`
    /// iterations.
    ExpDecay { alpha0: f64, alpha_min: f64 },
}

impl AlphaSchedule {
    pub fn alpha(&self, l: usize, l_max: usize) -> f64 {
        match *self {
            AlphaSchedule::Constant(a) => a,
            AlphaSchedule::ExpDecay { alpha0, alpha_min } => {
                if l_max <= 1 {
                    return alpha0;
                }
                let ratio = (alpha_min / alpha0).max(1e-300);
                alpha0 * ratio.powf((l - 1) as f64 / (l_max - 1) as f64)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub alpha: AlphaSchedule,
    pub beta1: f64,
    pub beta2: f64,
    /// Numerical floor in the denominator.
    pub eps_num: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Gradient-norm polling interval.
    pub check_interval: usize,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            alpha: AlphaSchedule::Constant(1e-3),
            beta1: 0.9,
            beta2: 0.999,
            eps_num: 1e-8,
            weight_decay: 0.0,
            check_interval: 10,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub solver: InnerSolverKind,
    /// Absolute inner tolerance on the gradient norm.
    pub eps_in: f64,
    /// Relative inner tolerance against the first gradient norm of the
    /// outer iteration.
    pub eps_rel: f64,
    /// Outer tolerance on the constraint residual norm.
    pub eps_out: f64,
    pub k_max: usize,
    pub l_max: usize,
    pub newton: NewtonConfig,
    pub adamw: AdamWConfig,
    pub mode: AccumulationMode,
    pub ordering: OrderingKind,
    pub backend: SolveBackend,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            solver: InnerSolverKind::Newton,
            eps_in: 1e-6,
            eps_rel: 0.0,
            eps_out: 1e-6,
            k_max: 3,
            l_max: 10,
            newton: NewtonConfig::default(),
            adamw: AdamWConfig::default(),
            mode: AccumulationMode::Deterministic,
            ordering: OrderingKind::MinDegree,
            backend: SolveBackend::Auto,
        }
    }
}

/// AdamW moment accumulators, reset at each outer iteration.
#[derive(Debug)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub s: Vec<f64>,
}

impl AdamWState {
    fn new(n: usize) -> Self {
        AdamWState {
            m: vec![0.0; n],
            s: vec![0.0; n],
        }
    }

    fn reset(&mut self) {
        self.m.fill(0.0);
        self.s.fill(0.0);
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub outer_iters: usize,
    /// Velocity updates across all outer iterations.
    pub inner_iters_total: usize,
    pub grad_norm: f64,
    pub constraint_norm: f64,
    pub backtracks: usize,
    pub full_factorizations: usize,
    pub refactorizations: usize,
    pub line_search_failures: usize,
    pub converged: bool,
    pub wall_seconds: f64,
}

/// Outcome of one Armijo backtracking search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineSearchOutcome {
    /// `phi(alpha) <= (1 - 2 c1 alpha) phi0` held.
    Accepted { alpha: f64, backtracks: usize },
    /// `j_max` reductions exhausted; the last trial step is reported so
    /// the caller may accept it or restore the iterate.
    Exhausted { alpha: f64 },
}

/// Armijo backtracking on the squared gradient norm
/// `phi(alpha) = |g(v + alpha dv)|^2 / 2`.
pub fn armijo<F>(phi0: f64, mut phi_at: F, cfg: &NewtonConfig) -> Result<LineSearchOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut alpha = 1.0;
    for j in 0..=cfg.j_max {
        let phi = phi_at(alpha)?;
        if phi <= (1.0 - 2.0 * cfg.c1 * alpha) * phi0 {
            return Ok(LineSearchOutcome::Accepted {
                alpha,
                backtracks: j,
            });
        }
        if j < cfg.j_max {
            alpha *= cfg.beta;
        }
    }
    Ok(LineSearchOutcome::Exhausted { alpha })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One velocity-level subproblem: the FE model, constraint set, and
/// external load channels for the step.
pub struct StepProblem<'a> {
    pub model: &'a FeModel,
    pub constraints: &'a mut ConstraintSet,
    /// Applied nodal loads including contact forces (N).
    pub f_ext: &'a [f64],
    /// Mass-distributed force field, usually gravity (N).
    pub f_ff: &'a [f64],
    pub h: f64,
    /// Time at the end of the step (for time-dependent targets).
    pub t_next: f64,
}

/// Persistent solver state: workspaces, the analyzed Hessian pattern, and
/// lifetime factorization counters.
pub struct AlmSolver {
    pub config: SolverConfig,
    ws: AssemblyWorkspace,
    hessian: Option<HessianWorkspace>,
    spd: Option<SpdSolveContext>,
    adamw: AdamWState,
    // scratch (no allocation during stepping)
    q_trial: Vec<f64>,
    f_int: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    lrc: Vec<f64>,
    dv: Vec<f64>,
    rhs: Vec<f64>,
    v: Vec<f64>,
    v_save: Vec<f64>,
    v_ref: Vec<f64>,
    /// Lifetime totals across all steps.
    pub total_full_factorizations: usize,
    pub total_refactorizations: usize,
}

impl AlmSolver {
    pub fn new(
        model: &FeModel,
        constraints: &ConstraintSet,
        config: SolverConfig,
    ) -> Result<Self> {
        let n = model.n_dofs();
        let m = constraints.n_rows();
        let (hessian, spd) = match config.solver {
            InnerSolverKind::Newton => {
                let hws = HessianWorkspace::new(model, constraints)?;
                let ctx = SpdSolveContext::analyze(
                    hws.pattern(),
                    SolveOptions {
                        ordering: config.ordering,
                        backend: config.backend,
                    },
                )?;
                (Some(hws), Some(ctx))
            }
            InnerSolverKind::AdamW => (None, None),
        };
        Ok(AlmSolver {
            config,
            ws: AssemblyWorkspace::new(model),
            hessian,
            spd,
            adamw: AdamWState::new(n),
            q_trial: vec![0.0; n],
            f_int: vec![0.0; n],
            g: vec![0.0; n],
            c: vec![0.0; m],
            lrc: vec![0.0; m],
            dv: vec![0.0; n],
            rhs: vec![0.0; n],
            v: vec![0.0; n],
            v_save: vec![0.0; n],
            v_ref: vec![0.0; n],
            total_full_factorizations: 0,
            total_refactorizations: 0,
        })
    }

    /// Hessian pattern (Newton only), exposed for fixed-sparsity checks.
    pub fn hessian_pattern(&self) -> Option<&std::sync::Arc<crate::sparse::CsrPattern>> {
        self.hessian.as_ref().map(|h| h.pattern())
    }

    /// Evaluates stress, internal force, constraints, Jacobian, and the
    /// gradient at the current iterate `self.v`; returns `|g|`.
    fn eval_gradient(&mut self, problem: &mut StepProblem<'_>, q_n: &[f64]) -> Result<f64> {
        step_map_into(q_n, &self.v, problem.h, &mut self.q_trial);
        assembly::compute_stress_stage1(
            problem.model,
            &self.q_trial,
            &self.v,
            &mut self.ws.stress,
        )?;
        assembly::compute_internal_force_stage2(
            problem.model,
            &mut self.ws,
            self.config.mode,
            &mut self.f_int,
        );
        let constraint = if problem.constraints.is_empty() {
            None
        } else {
            problem
                .constraints
                .eval_constraints(&self.q_trial, problem.t_next, &mut self.c);
            problem.constraints.eval_jacobian(&self.q_trial);
            for ((out, l), ci) in self
                .lrc
                .iter_mut()
                .zip(&problem.constraints.lambda)
                .zip(&self.c)
            {
                *out = l + problem.constraints.rho * ci;
            }
            Some((problem.constraints.cqt(), self.lrc.as_slice()))
        };
        assembly::compute_gradient(
            problem.model,
            &self.v,
            &self.v_ref,
            &self.f_int,
            problem.f_ext,
            problem.f_ff,
            constraint,
            problem.h,
            &mut self.g,
        )?;
        Ok(norm(&self.g))
    }

    /// Advances the state by one backward-Euler step.
    pub fn step(&mut self, problem: &mut StepProblem<'_>, state: &mut SystemState) -> Result<StepReport> {
        let start = Instant::now();
        let mut report = StepReport::default();
        let q_n = state.q.clone();
        self.v.copy_from_slice(&state.v);
        self.v_ref.copy_from_slice(&state.v);
        problem.constraints.clear_committed_residual();

        let mut inner_converged = false;
        for k in 1..=self.config.k_max {
            report.outer_iters = k;
            inner_converged = match self.config.solver {
                InnerSolverKind::Newton => self.newton_inner(problem, &q_n, &mut report)?,
                InnerSolverKind::AdamW => self.adamw_inner(problem, &q_n, &mut report)?,
            };

            // commit q = q_n + h v and re-evaluate the residual there
            step_map_into(&q_n, &self.v, problem.h, &mut self.q_trial);
            if self.config.solver == InnerSolverKind::AdamW {
                // Alg. 2 commits the velocity reference between outer
                // iterations, moving the inertia anchor of the residual.
                self.v_ref.copy_from_slice(&self.v);
            }
            if problem.constraints.is_empty() {
                report.constraint_norm = 0.0;
                if inner_converged {
                    break;
                }
                continue;
            }
            problem
                .constraints
                .eval_constraints(&self.q_trial, problem.t_next, &mut self.c);
            report.constraint_norm = norm(&self.c);
            let do_ascent = match self.config.solver {
                InnerSolverKind::AdamW => true,
                InnerSolverKind::Newton => inner_converged,
            };
            if do_ascent {
                let c = self.c.clone();
                problem.constraints.multiplier_update(&c);
            }
            if inner_converged && report.constraint_norm <= self.config.eps_out {
                break;
            }
        }

        report.converged = inner_converged
            && (problem.constraints.is_empty() || report.constraint_norm <= self.config.eps_out);
        state.q.copy_from_slice(&self.q_trial);
        state.v.copy_from_slice(&self.v);
        state.t += problem.h;
        if !problem.constraints.is_empty() {
            problem.constraints.set_committed_residual(&self.c);
        }
        report.wall_seconds = start.elapsed().as_secs_f64();
        Ok(report)
    }

    /// Newton inner loop: evaluate, factorize (once) or refactorize,
    /// solve, and apply the full or Armijo-damped step.
    fn newton_inner(
        &mut self,
        problem: &mut StepProblem<'_>,
        q_n: &[f64],
        report: &mut StepReport,
    ) -> Result<bool> {
        let mut g0 = 0.0;
        let mut gnorm = 0.0;
        let mut have_eval = false;
        for l in 1..=self.config.l_max {
            if !have_eval {
                gnorm = self.eval_gradient(problem, q_n)?;
            }
            have_eval = false;
            report.grad_norm = gnorm;
            if l == 1 {
                g0 = gnorm;
            }
            if gnorm <= self.config.eps_in.max(self.config.eps_rel * g0) {
                return Ok(true);
            }

            let hws = self.hessian.as_mut().expect("Newton solver owns a Hessian");
            assembly::assemble_hessian(
                hws,
                problem.model,
                problem.constraints,
                &self.q_trial,
                problem.h,
                self.config.mode,
            )?;
            let spd = self.spd.as_mut().expect("Newton solver owns a context");
            if spd.is_factored() {
                spd.refactorize(&hws.h)?;
                report.refactorizations += 1;
                self.total_refactorizations += 1;
            } else {
                spd.factorize(&hws.h)?;
                report.full_factorizations += 1;
                self.total_full_factorizations += 1;
            }
            for (r, gi) in self.rhs.iter_mut().zip(&self.g) {
                *r = -gi;
            }
            spd.solve(&self.rhs, &mut self.dv)?;

            if self.config.newton.line_search {
                let phi0 = 0.5 * gnorm * gnorm;
                self.v_save.copy_from_slice(&self.v);
                let newton_cfg = self.config.newton;
                let mut accepted = false;
                let mut alpha = 1.0;
                for j in 0..=newton_cfg.j_max {
                    for ((vt, vs), d) in
                        self.v.iter_mut().zip(&self.v_save).zip(&self.dv)
                    {
                        *vt = vs + alpha * d;
                    }
                    let gtrial = self.eval_gradient(problem, q_n)?;
                    let phi = 0.5 * gtrial * gtrial;
                    if phi <= (1.0 - 2.0 * newton_cfg.c1 * alpha) * phi0 {
                        accepted = true;
                        report.backtracks += j;
                        // the trial evaluation already holds the new
                        // iterate's gradient
                        gnorm = gtrial;
                        have_eval = true;
                        break;
                    }
                    alpha *= newton_cfg.beta;
                }
                if !accepted {
                    // restore the pre-step iterate and leave the inner loop
                    self.v.copy_from_slice(&self.v_save);
                    report.line_search_failures += 1;
                    report.inner_iters_total += 1;
                    return Ok(false);
                }
            } else {
                for (vt, d) in self.v.iter_mut().zip(&self.dv) {
                    *vt += d;
                }
            }
            report.inner_iters_total += 1;
        }
        // budget exhausted: report the criterion on the final iterate
        let gnorm = self.eval_gradient(problem, q_n)?;
        report.grad_norm = gnorm;
        Ok(gnorm <= self.config.eps_in.max(self.config.eps_rel * g0))
    }

    /// AdamW inner loop. The gradient feeding the first moment update is
    /// evaluated at entry (so the l = 1 bias correction is exact); each
    /// iteration then updates moments, applies the decoupled-decay
    /// velocity update, and re-evaluates the gradient.
    fn adamw_inner(
        &mut self,
        problem: &mut StepProblem<'_>,
        q_n: &[f64],
        report: &mut StepReport,
    ) -> Result<bool> {
        let cfg = self.config.adamw;
        self.adamw.reset();
        let mut gnorm = self.eval_gradient(problem, q_n)?;
        let g0 = gnorm;
        report.grad_norm = gnorm;
        let vnorm = norm(&self.v);
        if gnorm <= self.config.eps_in * (1.0 + vnorm) || gnorm <= self.config.eps_rel * g0 {
            return Ok(true);
        }
        for l in 1..=self.config.l_max {
            let alpha = cfg.alpha.alpha(l, self.config.l_max);
            let bc1 = 1.0 - cfg.beta1.powi(l as i32);
            let bc2 = 1.0 - cfg.beta2.powi(l as i32);
            for i in 0..self.v.len() {
                let gi = self.g[i];
                self.adamw.m[i] = cfg.beta1 * self.adamw.m[i] + (1.0 - cfg.beta1) * gi;
                self.adamw.s[i] = cfg.beta2 * self.adamw.s[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = self.adamw.m[i] / bc1;
                let s_hat = self.adamw.s[i] / bc2;
                self.v[i] = (1.0 - alpha * cfg.weight_decay) * self.v[i]
                    - alpha * m_hat / (s_hat.sqrt() + cfg.eps_num);
            }
            report.inner_iters_total += 1;
            gnorm = self.eval_gradient(problem, q_n)?;
            report.grad_norm = gnorm;
            if l % cfg.check_interval == 0 || l == self.config.l_max {
                let vnorm = norm(&self.v);
                if gnorm <= self.config.eps_in * (1.0 + vnorm)
                    || gnorm <= self.config.eps_rel * g0
                {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }
}

/// Convenience wrapper: builds the solver, runs one step, returns state
/// and report. Scenario loops keep a persistent [`AlmSolver`] instead.
pub fn alm_step(
    model: &FeModel,
    constraints: &mut ConstraintSet,
    state: &mut SystemState,
    f_ext: &[f64],
    f_ff: &[f64],
    h: f64,
    config: SolverConfig,
) -> Result<StepReport> {
    let mut solver = AlmSolver::new(model, constraints, config)?;
    let t_next = state.t + h;
    let mut problem = StepProblem {
        model,
        constraints,
        f_ext,
        f_ff,
        h,
        t_next,
    };
    solver.step(&mut problem, state)
}
