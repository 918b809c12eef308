//! Log-barrier interior-point engine: Newton centering with backtracking line
//! search, escalating Hessian regularization, and an auxiliary-slack phase-I.

use nalgebra::{DMatrix, DVector};

use super::{
    max_violation, BoundCon, ConstraintKind, ConvexProgram,
    SmoothConstraint, SolveOptions, SolveReport, SolveStatus, SparseLin,
};

const LINE_SEARCH_ALPHA: f64 = 0.25;
const LINE_SEARCH_BETA: f64 = 0.5;
const MAX_BACKTRACKS: usize = 80;
const REG_INITIAL: f64 = 1e-10;
const REG_CAP: f64 = 1e-2;
const MAX_STAGES: usize = 80;
/// Newton steps allowed per centering stage; with mu = 10 a centered start
/// needs well under this, and moving on with a loosely centered point only
/// delays the gap certificate by a stage.
const MAX_STEPS_PER_STAGE: usize = 60;
/// Decrement below which a stalled line search still counts as centered:
/// deep inside Newton's quadratic zone, where f64 merit resolution is the
/// binding limit rather than true descent.
const STALL_DECREMENT: f64 = 1e-4;
/// Centering tolerance for intermediate barrier stages. Only the stage that
/// certifies the final gap needs the full `newton_tol` polish; path following
/// with mu = 10 stays on track from this much looser centering.
const INTERMEDIATE_DECREMENT: f64 = 1e-4;

struct Counters {
    stages: usize,
    newton_steps: usize,
    merit_trace: Vec<(usize, f64)>,
}

enum CenterEnd {
    Converged,
    EarlyExit,
    Budget,
    Failure(&'static str),
}

struct BarrierOutcome {
    x: Vec<f64>,
    converged: bool,
    #[allow(dead_code)]
    early_exit: bool,
    failure: Option<&'static str>,
    final_t: f64,
}

/// Total barrier merit `-t * c·x + sum(-log slack)`; `None` outside the interior.
fn merit(prog: &ConvexProgram, x: &[f64], t: f64) -> Option<f64> {
    let mut acc = -t * prog.objective_value(x);
    for con in prog.constraints() {
        acc += con.kind.barrier_value(x)?;
    }
    Some(acc)
}

fn strictly_feasible(prog: &ConvexProgram, x: &[f64]) -> bool {
    prog.constraints().iter().all(|c| c.kind.barrier_value(x).is_some())
}

/// Accumulates barrier gradient and Hessian for one constraint at `x`.
fn add_derivs(kind: &ConstraintKind, x: &[f64], grad: &mut DVector<f64>, hess: &mut DMatrix<f64>) {
    match kind {
        ConstraintKind::Linear(c) => {
            let slack = c.rhs - c.lhs.dot(x);
            let w1 = 1.0 / slack;
            let w2 = w1 * w1;
            add_sparse_outer(&c.lhs, w1, w2, grad, hess);
        }
        ConstraintKind::Bound(b) => {
            let v = x[b.var];
            if let Some(lo) = b.lower {
                let s = v - lo;
                grad[b.var] += -1.0 / s;
                hess[(b.var, b.var)] += 1.0 / (s * s);
            }
            if let Some(hi) = b.upper {
                let s = hi - v;
                grad[b.var] += 1.0 / s;
                hess[(b.var, b.var)] += 1.0 / (s * s);
            }
        }
        ConstraintKind::Quadratic(c) => {
            let (norm2, u) = c.residual(x);
            let slack = c.rhs.dot(x) + c.rhs_const - norm2;
            // grad g = 2 M^T u - a over support ∪ rhs support
            let k = c.support.len();
            let mut g_support = vec![0.0; k];
            for (row, &uv) in c.rows.iter().zip(&u) {
                for (gs, &m) in g_support.iter_mut().zip(row) {
                    *gs += 2.0 * uv * m;
                }
            }
            let w1 = 1.0 / slack;
            let w2 = w1 * w1;
            // gradient: (grad g) / slack
            for (&i, &gs) in c.support.iter().zip(&g_support) {
                grad[i] += w1 * gs;
            }
            for (&i, &a) in c.rhs.idx.iter().zip(&c.rhs.coef) {
                grad[i] += w1 * (-a);
            }
            // Hessian: (grad g)(grad g)^T / slack^2 + (2 M^T M) / slack
            let full_support: Vec<(usize, f64)> = c
                .support
                .iter()
                .zip(&g_support)
                .map(|(&i, &g)| (i, g))
                .chain(c.rhs.idx.iter().zip(&c.rhs.coef).map(|(&i, &a)| (i, -a)))
                .collect();
            for &(i, gi) in &full_support {
                for &(j, gj) in &full_support {
                    hess[(i, j)] += w2 * gi * gj;
                }
            }
            for row in &c.rows {
                for (&i, &mi) in c.support.iter().zip(row) {
                    for (&j, &mj) in c.support.iter().zip(row) {
                        hess[(i, j)] += w1 * 2.0 * mi * mj;
                    }
                }
            }
        }
        ConstraintKind::Cone(c) => {
            let (norm2, u) = c.residual(x);
            let r = c.rhs.dot(x) + c.rhs_const;
            let h = r * r - norm2;
            let k = c.support.len();
            // grad h = 2 r a - 2 M^T u
            let mut gh_support = vec![0.0; k];
            for (row, &uv) in c.rows.iter().zip(&u) {
                for (gs, &m) in gh_support.iter_mut().zip(row) {
                    *gs -= 2.0 * uv * m;
                }
            }
            let full_grad: Vec<(usize, f64)> = c
                .support
                .iter()
                .zip(&gh_support)
                .map(|(&i, &g)| (i, g))
                .chain(c.rhs.idx.iter().zip(&c.rhs.coef).map(|(&i, &a)| (i, 2.0 * r * a)))
                .collect();
            let w1 = 1.0 / h;
            let w2 = w1 * w1;
            // psi = -log h: grad = -grad h / h; hess = grad h grad h^T / h^2 - hess h / h
            for &(i, gi) in &full_grad {
                grad[i] += -w1 * gi;
            }
            for &(i, gi) in &full_grad {
                for &(j, gj) in &full_grad {
                    hess[(i, j)] += w2 * gi * gj;
                }
            }
            // hess h = 2 a a^T - 2 M^T M; subtracting it adds 2 M^T M / h - 2 a a^T / h
            for row in &c.rows {
                for (&i, &mi) in c.support.iter().zip(row) {
                    for (&j, &mj) in c.support.iter().zip(row) {
                        hess[(i, j)] += w1 * 2.0 * mi * mj;
                    }
                }
            }
            for (&i, &ai) in c.rhs.idx.iter().zip(&c.rhs.coef) {
                for (&j, &aj) in c.rhs.idx.iter().zip(&c.rhs.coef) {
                    hess[(i, j)] -= w1 * 2.0 * ai * aj;
                }
            }
        }
        ConstraintKind::Smooth(c) => {
            let slack = -c.value(x);
            let support = c.support();
            let k = support.len();
            let mut g = vec![0.0; k];
            c.gradient(x, &mut g);
            let mut h = vec![0.0; k * k];
            c.hessian(x, &mut h);
            let w1 = 1.0 / slack;
            let w2 = w1 * w1;
            for (&i, &gi) in support.iter().zip(&g) {
                grad[i] += w1 * gi;
            }
            for (a, &i) in support.iter().enumerate() {
                for (b, &j) in support.iter().enumerate() {
                    hess[(i, j)] += w2 * g[a] * g[b] + w1 * h[a * k + b];
                }
            }
        }
    }
}

fn add_sparse_outer(
    lin: &SparseLin,
    w1: f64,
    w2: f64,
    grad: &mut DVector<f64>,
    hess: &mut DMatrix<f64>,
) {
    for (&i, &ci) in lin.idx.iter().zip(&lin.coef) {
        grad[i] += w1 * ci;
        for (&j, &cj) in lin.idx.iter().zip(&lin.coef) {
            hess[(i, j)] += w2 * ci * cj;
        }
    }
}

/// Newton direction for `H dx = -g` with escalating diagonal regularization.
fn newton_direction(
    hess: &DMatrix<f64>,
    grad: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = grad.len();
    let mut reg = 0.0;
    loop {
        let mut m = hess.clone();
        if reg > 0.0 {
            for i in 0..n {
                m[(i, i)] += reg;
            }
        }
        if let Some(chol) = m.cholesky() {
            let dx = chol.solve(&(-grad));
            if dx.iter().all(|v| v.is_finite()) {
                return Some(dx);
            }
        }
        reg = if reg == 0.0 { REG_INITIAL } else { reg * 10.0 };
        if reg > REG_CAP {
            return None;
        }
    }
}

/// One centering stage at fixed barrier weight `t`.
#[allow(clippy::too_many_arguments)]
fn center(
    prog: &ConvexProgram,
    x: &mut Vec<f64>,
    t: f64,
    stage_tol: f64,
    opts: &SolveOptions,
    counters: &mut Counters,
    early_exit: Option<&dyn Fn(&[f64]) -> bool>,
    grad: &mut DVector<f64>,
    hess: &mut DMatrix<f64>,
) -> CenterEnd {
    let stage = counters.stages;
    let mut steps_this_stage = 0;
    loop {
        if counters.newton_steps >= opts.max_newton {
            return CenterEnd::Budget;
        }
        if steps_this_stage >= MAX_STEPS_PER_STAGE {
            return CenterEnd::Converged;
        }
        grad.fill(0.0);
        hess.fill(0.0);
        for (i, &c) in prog.objective().iter().enumerate() {
            grad[i] = -t * c;
        }
        for con in prog.constraints() {
            add_derivs(&con.kind, x, grad, hess);
        }
        let Some(dx) = newton_direction(hess, grad) else {
            return CenterEnd::Failure("singular KKT system after regularization");
        };
        let slope = grad.dot(&dx); // should be negative
        let decrement = -slope;
        if decrement <= 2.0 * stage_tol {
            return CenterEnd::Converged;
        }

        // backtracking line search: restore strict feasibility, then Armijo
        // with an f64-noise allowance so true but sub-ulp descent still passes
        let base = merit(prog, x, t).expect("iterate left the interior");
        let noise = 1e-13 * base.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand: Vec<f64> =
                x.iter().zip(dx.iter()).map(|(&xi, &di)| xi + step * di).collect();
            if let Some(m) = merit(prog, &cand, t) {
                if m <= base + LINE_SEARCH_ALPHA * step * slope + noise {
                    accepted = Some((cand, m));
                    break;
                }
            }
            step *= LINE_SEARCH_BETA;
        }
        let Some((cand, m)) = accepted else {
            // no measurable step left: inside the quadratic zone that counts
            // as centered, anywhere else it is a genuine failure
            return if decrement <= STALL_DECREMENT {
                CenterEnd::Converged
            } else {
                CenterEnd::Failure("line search stalled")
            };
        };
        *x = cand;
        counters.newton_steps += 1;
        steps_this_stage += 1;
        counters.merit_trace.push((stage, m));
        if let Some(exit) = early_exit {
            if exit(x) {
                return CenterEnd::EarlyExit;
            }
        }
    }
}

fn barrier_minimize(
    prog: &ConvexProgram,
    x0: Vec<f64>,
    opts: &SolveOptions,
    early_exit: Option<&dyn Fn(&[f64]) -> bool>,
    counters: &mut Counters,
) -> BarrierOutcome {
    debug_assert!(strictly_feasible(prog, &x0), "barrier start must be interior");
    let degree = prog.barrier_degree().max(1.0);
    let mut x = x0;
    let mut t = opts.initial_t;
    let mut grad = DVector::zeros(prog.var_count());
    let mut hess = super::dense_hessian_buffer(prog.var_count());
    loop {
        counters.stages += 1;
        // only the gap-certifying stage needs the full polish
        let is_final = degree / t <= opts.gap_tol;
        let stage_tol = if is_final { opts.newton_tol } else { opts.newton_tol.max(INTERMEDIATE_DECREMENT) };
        let end = center(prog, &mut x, t, stage_tol, opts, counters, early_exit, &mut grad, &mut hess);
        match end {
            CenterEnd::Converged => {}
            CenterEnd::EarlyExit => {
                return BarrierOutcome { x, converged: false, early_exit: true, failure: None, final_t: t }
            }
            CenterEnd::Budget => {
                return BarrierOutcome { x, converged: false, early_exit: false, failure: None, final_t: t }
            }
            CenterEnd::Failure(why) => {
                return BarrierOutcome { x, converged: false, early_exit: false, failure: Some(why), final_t: t }
            }
        }
        if degree / t <= opts.gap_tol {
            return BarrierOutcome { x, converged: true, early_exit: false, failure: None, final_t: t };
        }
        if counters.stages >= MAX_STAGES {
            return BarrierOutcome { x, converged: false, early_exit: false, failure: Some("stage limit"), final_t: t };
        }
        t *= opts.barrier_mu;
    }
}

/// Smooth constraint shifted by the phase-I slack variable: `g(x) - s <= 0`.
#[derive(Clone)]
struct ShiftedSmooth {
    inner: Box<dyn SmoothConstraint>,
    support: Vec<usize>,
}

impl SmoothConstraint for ShiftedSmooth {
    fn support(&self) -> &[usize] {
        &self.support
    }

    fn value(&self, x: &[f64]) -> f64 {
        let aux = *self.support.last().unwrap();
        self.inner.value(x) - x[aux]
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let k = self.support.len();
        self.inner.gradient(x, &mut out[..k - 1]);
        out[k - 1] = -1.0;
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let k = self.support.len();
        out.fill(0.0);
        let mut inner = vec![0.0; (k - 1) * (k - 1)];
        self.inner.hessian(x, &mut inner);
        for a in 0..k - 1 {
            for b in 0..k - 1 {
                out[a * k + b] = inner[a * (k - 1) + b];
            }
        }
    }

    fn clone_box(&self) -> Box<dyn SmoothConstraint> {
        Box::new(self.clone())
    }
}

/// Extends every constraint with the auxiliary infeasibility bound `s`.
fn phase1_program(prog: &ConvexProgram, s_lower: f64, s_upper: f64) -> ConvexProgram {
    let n = prog.var_count();
    let aux = n;
    let mut ext = ConvexProgram::new(n + 1);
    ext.name_var(aux, "phase1_slack");
    ext.set_objective_coef(aux, -1.0); // maximize -s
    for con in prog.constraints() {
        match &con.kind {
            ConstraintKind::Linear(c) => {
                let entries = c
                    .lhs
                    .idx
                    .iter()
                    .zip(&c.lhs.coef)
                    .map(|(&i, &v)| (i, v))
                    .chain([(aux, -1.0)])
                    .collect::<Vec<_>>();
                ext.add_linear(con.name.clone(), entries, c.rhs);
            }
            ConstraintKind::Bound(b) => {
                if let Some(lo) = b.lower {
                    ext.add_linear(
                        format!("{}:lower", con.name),
                        [(b.var, -1.0), (aux, -1.0)],
                        -lo,
                    );
                }
                if let Some(hi) = b.upper {
                    ext.add_linear(
                        format!("{}:upper", con.name),
                        [(b.var, 1.0), (aux, -1.0)],
                        hi,
                    );
                }
            }
            ConstraintKind::Quadratic(c) => {
                let mut shifted = c.clone();
                shifted.rhs.idx.push(aux);
                shifted.rhs.coef.push(1.0);
                ext.add_quadratic(con.name.clone(), shifted);
            }
            ConstraintKind::Cone(c) => {
                let mut shifted = c.clone();
                shifted.rhs.idx.push(aux);
                shifted.rhs.coef.push(1.0);
                ext.add_cone(con.name.clone(), shifted);
            }
            ConstraintKind::Smooth(c) => {
                let mut support = c.support().to_vec();
                support.push(aux);
                ext.add_smooth(
                    con.name.clone(),
                    Box::new(ShiftedSmooth { inner: c.clone(), support }),
                );
            }
        }
    }
    ext.add_bounds("phase1_slack_range", aux, Some(s_lower), Some(s_upper));
    ext
}

/// Default interior guess: midpoint of any two-sided bounds, small offsets
/// inside one-sided ones, zero elsewhere.
fn default_start(prog: &ConvexProgram) -> Vec<f64> {
    let mut x = vec![0.0; prog.var_count()];
    for con in prog.constraints() {
        if let ConstraintKind::Bound(BoundCon { var, lower, upper }) = &con.kind {
            x[*var] = match (lower, upper) {
                (Some(lo), Some(hi)) => 0.5 * (lo + hi),
                (Some(lo), None) => lo + lo.abs().max(1.0),
                (None, Some(hi)) => hi - hi.abs().max(1.0),
                (None, None) => 0.0,
            };
        }
    }
    x
}

/// Nudges a hint just inside its variable bounds without moving interior
/// coordinates, so boundary-hugging warm starts stay usable.
fn clamp_into_bounds(prog: &ConvexProgram, x: &mut [f64]) {
    for con in prog.constraints() {
        if let ConstraintKind::Bound(BoundCon { var, lower, upper }) = &con.kind {
            let v = x[*var];
            x[*var] = match (lower, upper) {
                (Some(lo), Some(hi)) => {
                    let pad = 1e-9 * (hi - lo);
                    v.clamp(lo + pad, hi - pad)
                }
                (Some(lo), None) => v.max(lo + 1e-9 * lo.abs().max(1.0)),
                (None, Some(hi)) => v.min(hi - 1e-9 * hi.abs().max(1.0)),
                (None, None) => v,
            };
        }
    }
}

pub(crate) struct Phase1Failure {
    pub worst_name: String,
    pub worst_violation: f64,
}

/// Runs phase-I. `Ok` holds a strictly feasible point; `Err` names the worst
/// constraint at the best point found.
fn phase1(
    prog: &ConvexProgram,
    opts: &SolveOptions,
    hint: Option<&[f64]>,
    counters: &mut Counters,
) -> Result<Vec<f64>, Phase1Failure> {
    let margin = opts.phase1_margin;
    let mut x0 = hint.map(|h| h.to_vec()).unwrap_or_else(|| default_start(prog));
    clamp_into_bounds(prog, &mut x0);
    // already comfortably interior: done
    let (worst, _) = max_violation(prog, &x0);
    if worst <= -margin {
        return Ok(x0);
    }
    let s0 = worst.max(0.0) + (0.1 * worst.abs()).max(0.01);
    let s_lower = -1.0 - 10.0 * margin;
    let s_upper = s0 + 1.0;
    let ext = phase1_program(prog, s_lower, s_upper);
    let mut x_ext = x0;
    x_ext.push(s0);
    debug_assert!(strictly_feasible(&ext, &x_ext), "phase-I start not interior");
    let aux = prog.var_count();
    let target = -margin;
    let exit = move |x: &[f64]| x[aux] <= target;
    let opts1 = SolveOptions { initial_t: 100.0, warm_start: None, ..opts.clone() };
    let outcome = barrier_minimize(&ext, x_ext, &opts1, Some(&exit), counters);
    let x: Vec<f64> = outcome.x[..prog.var_count()].to_vec();
    let (worst, name) = max_violation(prog, &x);
    if worst < 0.0 {
        Ok(x)
    } else {
        Err(Phase1Failure {
            worst_name: name.unwrap_or_else(|| "unconstrained".into()),
            worst_violation: worst,
        })
    }
}

/// Public phase-I entry: a strictly feasible point of `prog`, or the name and
/// violation of the blocking constraint.
pub fn find_feasible_point(
    prog: &ConvexProgram,
    opts: &SolveOptions,
) -> Result<Vec<f64>, (String, f64)> {
    let mut counters = Counters { stages: 0, newton_steps: 0, merit_trace: Vec::new() };
    phase1(prog, opts, opts.warm_start.as_deref(), &mut counters)
        .map_err(|f| (f.worst_name, f.worst_violation))
}

pub(crate) fn solve_impl(prog: &ConvexProgram, opts: &SolveOptions) -> SolveReport {
    #[cfg(debug_assertions)]
    debug_checks::check_smooth_constraints(prog, opts);

    let mut counters = Counters { stages: 0, newton_steps: 0, merit_trace: Vec::new() };

    // a warm start that is already strictly interior skips phase-I
    let start = match opts.warm_start.as_ref() {
        Some(w) if w.len() == prog.var_count() && {
            let (v, _) = max_violation(prog, w);
            v <= -opts.phase1_margin
        } =>
        {
            w.clone()
        }
        other => match phase1(prog, opts, other.map(|v| v.as_slice()), &mut counters) {
            Ok(x) => x,
            Err(fail) => {
                return SolveReport {
                    status: SolveStatus::Infeasible,
                    point: Vec::new(),
                    objective: f64::NEG_INFINITY,
                    max_violation: fail.worst_violation,
                    gap_bound: f64::INFINITY,
                    barrier_stages: counters.stages,
                    newton_steps: counters.newton_steps,
                    infeasible_constraint: Some(fail.worst_name),
                    merit_trace: counters.merit_trace,
                };
            }
        },
    };

    let outcome = barrier_minimize(prog, start, opts, None, &mut counters);
    let (worst, _) = max_violation(prog, &outcome.x);
    let degree = prog.barrier_degree().max(1.0);
    let gap = degree / outcome.final_t;
    let status = if let Some(_why) = outcome.failure {
        SolveStatus::NumericalFailure
    } else if outcome.converged && worst <= opts.feas_tol {
        SolveStatus::Optimal
    } else {
        SolveStatus::IterationLimit
    };
    SolveReport {
        status,
        objective: prog.objective_value(&outcome.x),
        max_violation: worst.max(0.0),
        gap_bound: gap,
        barrier_stages: counters.stages,
        newton_steps: counters.newton_steps,
        infeasible_constraint: None,
        merit_trace: counters.merit_trace,
        point: outcome.x,
    }
}

#[cfg(debug_assertions)]
mod debug_checks {
    //! Stochastic validation of smooth-constraint callbacks: midpoint
    //! convexity on random pairs plus central-difference gradient checks.

    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn check_smooth_constraints(prog: &ConvexProgram, opts: &SolveOptions) {
        let base = match opts.warm_start.as_ref() {
            Some(w) if w.len() == prog.var_count() => w.clone(),
            _ => return, // no reference point to probe around
        };
        if !super::strictly_feasible(prog, &base) {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for con in prog.constraints() {
            let ConstraintKind::Smooth(c) = &con.kind else { continue };
            let support = c.support().to_vec();
            // gradient vs central differences (1e-5 relative step)
            let mut grad = vec![0.0; support.len()];
            c.gradient(&base, &mut grad);
            for (slot, &i) in support.iter().enumerate() {
                let h = 1e-5 * base[i].abs().max(1e-3);
                let mut up = base.clone();
                up[i] += h;
                let mut dn = base.clone();
                dn[i] -= h;
                let fd = (c.value(&up) - c.value(&dn)) / (2.0 * h);
                let err = (grad[slot] - fd).abs();
                debug_assert!(
                    err <= 1e-4 * fd.abs().max(1.0),
                    "gradient mismatch in {}: analytic {} vs fd {fd}",
                    con.name,
                    grad[slot]
                );
            }
            // midpoint convexity on random pairs around the reference point
            for _ in 0..2 {
                let perturb = |rng: &mut ChaCha8Rng, x: &[f64]| {
                    let mut y = x.to_vec();
                    for &i in &support {
                        let span = 0.05 * x[i].abs().max(1e-3);
                        y[i] += (rng.gen::<f64>() - 0.5) * span;
                    }
                    y
                };
                let a = perturb(&mut rng, &base);
                let b = perturb(&mut rng, &base);
                let mid: Vec<f64> =
                    a.iter().zip(&b).map(|(&u, &v)| 0.5 * (u + v)).collect();
                let (fa, fb, fm) = (c.value(&a), c.value(&b), c.value(&mid));
                if fa.is_finite() && fb.is_finite() && fm.is_finite() {
                    debug_assert!(
                        fm <= 0.5 * (fa + fb) + 1e-7 * (fa.abs() + fb.abs()).max(1.0),
                        "midpoint convexity violated in {}",
                        con.name
                    );
                }
            }
        }
    }
}
