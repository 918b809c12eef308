//! Self-contained convex solver used by both planning subproblems.
//!
//! Programs are posed as `maximize c·x` over a mix of linear rows, variable
//! bounds, convex quadratic rows `|Mx+q|^2 <= a·x + b`, second-order-cone rows
//! `|Mx+q| <= a·x + b`, and smooth scalar convex callbacks `g(x) <= 0`. The
//! solver is a primal log-barrier method with Newton centering, backtracking
//! line search, and a phase-I stage that finds a strictly interior start (or
//! certifies infeasibility, naming the worst constraint).

mod barrier;

use nalgebra::DMatrix;

pub use barrier::find_feasible_point;

/// Sparse linear form `sum coef[k] * x[idx[k]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLin {
    pub idx: Vec<usize>,
    pub coef: Vec<f64>,
}

impl SparseLin {
    pub fn new(entries: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let (idx, coef) = entries.into_iter().unzip();
        Self { idx, coef }
    }

    pub fn empty() -> Self {
        Self { idx: Vec::new(), coef: Vec::new() }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.coef).map(|(&i, &c)| c * x[i]).sum()
    }

    fn max_abs_coef(&self) -> f64 {
        self.coef.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }
}

/// `lhs · x <= rhs`
#[derive(Debug, Clone)]
pub struct LinearCon {
    pub lhs: SparseLin,
    pub rhs: f64,
}

/// `lower <= x[var] <= upper` (either side optional).
#[derive(Debug, Clone)]
pub struct BoundCon {
    pub var: usize,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// `|M x + q|^2 <= a·x + b`, with `M` given densely over a small support set.
#[derive(Debug, Clone)]
pub struct QuadCon {
    pub support: Vec<usize>,
    /// Rows of M, each of length `support.len()`.
    pub rows: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    pub rhs: SparseLin,
    pub rhs_const: f64,
}

/// `|M x + q| <= a·x + b` (second-order cone, barrier `-log((a·x+b)^2 - |Mx+q|^2)`).
#[derive(Debug, Clone)]
pub struct ConeCon {
    pub support: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    pub rhs: SparseLin,
    pub rhs_const: f64,
}

/// Smooth scalar convex constraint `g(x) <= 0` with analytic derivatives.
///
/// Implementations must be convex on the feasible domain and pure; the solver
/// cross-checks both stochastically in debug builds.
pub trait SmoothConstraint: Send + Sync {
    /// Indices of the variables `g` reads.
    fn support(&self) -> &[usize];
    fn value(&self, x: &[f64]) -> f64;
    /// Gradient over the support variables, in support order.
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// Dense `support x support` Hessian, row-major.
    fn hessian(&self, x: &[f64], out: &mut [f64]);
    fn clone_box(&self) -> Box<dyn SmoothConstraint>;
}

impl Clone for Box<dyn SmoothConstraint> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

#[derive(Clone)]
pub enum ConstraintKind {
    Linear(LinearCon),
    Bound(BoundCon),
    Quadratic(QuadCon),
    Cone(ConeCon),
    Smooth(Box<dyn SmoothConstraint>),
}

impl std::fmt::Debug for ConstraintKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Linear(c) => write!(f, "Linear({} terms)", c.lhs.idx.len()),
            Self::Bound(c) => write!(f, "Bound(x{})", c.var),
            Self::Quadratic(c) => write!(f, "Quadratic({} rows)", c.rows.len()),
            Self::Cone(c) => write!(f, "Cone({} rows)", c.rows.len()),
            Self::Smooth(c) => write!(f, "Smooth({} vars)", c.support().len()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub kind: ConstraintKind,
}

/// Declarative convex program: `maximize objective · x` subject to the
/// constraint list. Variable and constraint names feed diagnostics.
#[derive(Debug, Clone, Default)]
pub struct ConvexProgram {
    n: usize,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    var_names: Vec<Option<String>>,
}

impl ConvexProgram {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            objective: vec![0.0; n],
            constraints: Vec::new(),
            var_names: vec![None; n],
        }
    }

    pub fn var_count(&self) -> usize {
        self.n
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn set_objective_coef(&mut self, var: usize, coef: f64) {
        assert!(var < self.n);
        self.objective[var] = coef;
    }

    /// Builds the equivalent minimization objective (`minimize cost·x`).
    pub fn set_minimize_coef(&mut self, var: usize, cost: f64) {
        self.set_objective_coef(var, -cost);
    }

    pub fn name_var(&mut self, var: usize, name: impl Into<String>) {
        self.var_names[var] = Some(name.into());
    }

    pub fn var_name(&self, var: usize) -> String {
        self.var_names[var].clone().unwrap_or_else(|| format!("x{var}"))
    }

    /// Adds `lhs · x <= rhs`, normalized by the largest coefficient magnitude
    /// so violation units are comparable across rows.
    pub fn add_linear(
        &mut self,
        name: impl Into<String>,
        entries: impl IntoIterator<Item = (usize, f64)>,
        rhs: f64,
    ) {
        let mut lhs = SparseLin::new(entries);
        debug_assert!(lhs.idx.iter().all(|&i| i < self.n));
        let scale = lhs.max_abs_coef();
        let rhs = if scale > 0.0 {
            for c in &mut lhs.coef {
                *c /= scale;
            }
            rhs / scale
        } else {
            rhs
        };
        self.constraints.push(Constraint {
            name: name.into(),
            kind: ConstraintKind::Linear(LinearCon { lhs, rhs }),
        });
    }

    pub fn add_bounds(&mut self, name: impl Into<String>, var: usize, lower: Option<f64>, upper: Option<f64>) {
        assert!(var < self.n);
        if let (Some(lo), Some(hi)) = (lower, upper) {
            assert!(lo < hi, "empty or degenerate bound [{lo}, {hi}] on x{var}");
        }
        self.constraints.push(Constraint {
            name: name.into(),
            kind: ConstraintKind::Bound(BoundCon { var, lower, upper }),
        });
    }

    pub fn add_quadratic(&mut self, name: impl Into<String>, con: QuadCon) {
        debug_assert!(con.support.iter().all(|&i| i < self.n));
        debug_assert!(con.rows.iter().all(|r| r.len() == con.support.len()));
        debug_assert_eq!(con.rows.len(), con.offsets.len());
        self.constraints.push(Constraint { name: name.into(), kind: ConstraintKind::Quadratic(con) });
    }

    pub fn add_cone(&mut self, name: impl Into<String>, con: ConeCon) {
        debug_assert!(con.support.iter().all(|&i| i < self.n));
        debug_assert!(con.rows.iter().all(|r| r.len() == con.support.len()));
        self.constraints.push(Constraint { name: name.into(), kind: ConstraintKind::Cone(con) });
    }

    pub fn add_smooth(&mut self, name: impl Into<String>, con: Box<dyn SmoothConstraint>) {
        debug_assert!(con.support().iter().all(|&i| i < self.n));
        self.constraints.push(Constraint { name: name.into(), kind: ConstraintKind::Smooth(con) });
    }

    /// Generalized barrier degree: 1 per scalar log term, 2 per cone.
    pub fn barrier_degree(&self) -> f64 {
        self.constraints.iter().map(|c| c.kind.degree()).sum()
    }
}

impl ConstraintKind {
    pub(crate) fn degree(&self) -> f64 {
        match self {
            Self::Linear(_) | Self::Quadratic(_) | Self::Smooth(_) => 1.0,
            Self::Bound(b) => {
                (b.lower.is_some() as u8 + b.upper.is_some() as u8) as f64
            }
            Self::Cone(_) => 2.0,
        }
    }

    /// Signed violation (positive means infeasible), in row-normalized units.
    pub(crate) fn violation(&self, x: &[f64]) -> f64 {
        match self {
            Self::Linear(c) => c.lhs.dot(x) - c.rhs,
            Self::Bound(b) => {
                let v = x[b.var];
                let lo = b.lower.map_or(f64::NEG_INFINITY, |l| l - v);
                let hi = b.upper.map_or(f64::NEG_INFINITY, |u| v - u);
                lo.max(hi)
            }
            Self::Quadratic(c) => {
                let (norm2, _) = c.residual(x);
                norm2 - (c.rhs.dot(x) + c.rhs_const)
            }
            Self::Cone(c) => {
                let (norm2, _) = c.residual(x);
                norm2.sqrt() - (c.rhs.dot(x) + c.rhs_const)
            }
            Self::Smooth(c) => c.value(x),
        }
    }

    /// Barrier contribution `-sum log(slack)`; `None` when not strictly feasible.
    pub(crate) fn barrier_value(&self, x: &[f64]) -> Option<f64> {
        match self {
            Self::Linear(c) => {
                let slack = c.rhs - c.lhs.dot(x);
                (slack > 0.0).then(|| -slack.ln())
            }
            Self::Bound(b) => {
                let mut acc = 0.0;
                if let Some(lo) = b.lower {
                    let s = x[b.var] - lo;
                    if s <= 0.0 {
                        return None;
                    }
                    acc -= s.ln();
                }
                if let Some(hi) = b.upper {
                    let s = hi - x[b.var];
                    if s <= 0.0 {
                        return None;
                    }
                    acc -= s.ln();
                }
                Some(acc)
            }
            Self::Quadratic(c) => {
                let (norm2, _) = c.residual(x);
                let slack = c.rhs.dot(x) + c.rhs_const - norm2;
                (slack > 0.0).then(|| -slack.ln())
            }
            Self::Cone(c) => {
                let (norm2, _) = c.residual(x);
                let r = c.rhs.dot(x) + c.rhs_const;
                (r > 0.0 && r * r > norm2).then(|| -(r * r - norm2).ln())
            }
            Self::Smooth(c) => {
                let slack = -c.value(x);
                (slack > 0.0).then(|| -slack.ln())
            }
        }
    }
}

impl QuadCon {
    /// `(|Mx+q|^2, Mx+q)` over the support.
    fn residual(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let u: Vec<f64> = self
            .rows
            .iter()
            .zip(&self.offsets)
            .map(|(row, q)| {
                q + row
                    .iter()
                    .zip(&self.support)
                    .map(|(&m, &i)| m * x[i])
                    .sum::<f64>()
            })
            .collect();
        (u.iter().map(|v| v * v).sum(), u)
    }
}

impl ConeCon {
    fn residual(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let u: Vec<f64> = self
            .rows
            .iter()
            .zip(&self.offsets)
            .map(|(row, q)| {
                q + row
                    .iter()
                    .zip(&self.support)
                    .map(|(&m, &i)| m * x[i])
                    .sum::<f64>()
            })
            .collect();
        (u.iter().map(|v| v * v).sum(), u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Feasible within tolerance with duality-gap surrogate below target.
    Optimal,
    /// Phase-I certified there is no strictly feasible point.
    Infeasible,
    /// Newton budget exhausted before reaching the gap target.
    IterationLimit,
    /// Singular KKT system that regularization could not rescue, or a stalled
    /// line search.
    NumericalFailure,
}

/// Solver knobs. Defaults: `t0 = 1`, `mu = 10`, gap target `1e-8`, Newton
/// decrement tolerance `1e-10`, backtracking with `alpha = 0.25`, `beta = 0.5`.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub barrier_mu: f64,
    pub initial_t: f64,
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_newton: usize,
    pub newton_tol: f64,
    /// Strict-interior margin phase-I aims for before handing over.
    pub phase1_margin: f64,
    /// Starting point hint; used directly when strictly feasible, otherwise
    /// passed to phase-I.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            barrier_mu: 10.0,
            initial_t: 1.0,
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_newton: 4000,
            newton_tol: 1e-10,
            phase1_margin: 1e-6,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub point: Vec<f64>,
    /// `objective · point` (the maximization value).
    pub objective: f64,
    /// Largest signed constraint violation at the returned point (<= 0 when
    /// strictly feasible).
    pub max_violation: f64,
    /// Duality-gap surrogate `nu / t` at the final barrier weight.
    pub gap_bound: f64,
    pub barrier_stages: usize,
    pub newton_steps: usize,
    /// Set when phase-I proves infeasibility: the maximally violated row.
    pub infeasible_constraint: Option<String>,
    /// Accepted merit values per centering stage, for monotonicity checks.
    pub merit_trace: Vec<(usize, f64)>,
}

/// Maximizes the program's objective with the log-barrier method.
pub fn solve(prog: &ConvexProgram, opts: &SolveOptions) -> SolveReport {
    barrier::solve_impl(prog, opts)
}

pub(crate) fn max_violation(prog: &ConvexProgram, x: &[f64]) -> (f64, Option<String>) {
    let mut worst = f64::NEG_INFINITY;
    let mut name = None;
    for con in prog.constraints() {
        let v = con.kind.violation(x);
        if v > worst {
            worst = v;
            name = Some(con.name.clone());
        }
    }
    (worst, name)
}

pub(crate) fn dense_hessian_buffer(n: usize) -> DMatrix<f64> {
    DMatrix::zeros(n, n)
}
