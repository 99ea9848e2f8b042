//! Solver-agnostic conic programs.
//!
//! Every model in the crate is assembled as a [`ConicProgram`]: a linear
//! objective, optional weighted squares of affine expressions (the ADMM
//! proximal terms), optional log utilities, linear rows and second-order
//! cones. A [`Backend`] turns that into a [`ConicSolution`]. The default
//! backend is the Clarabel interior-point solver, which handles all of these
//! natively; logs go through exponential cones.
//!
//! Duals are reported as sensitivities: [`ConicSolution::dual`] is the rate at
//! which the optimal objective moves when the constraint's right-hand side
//! grows.

mod clarabel_backend;
mod expr;

use crate::error::{Error, Result};

pub use clarabel_backend::ClarabelBackend;
pub use expr::{LinExpr, Var};

/// Default solver feasibility tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Relative cone slack above which a cone counts as loose.
pub const TIGHTNESS_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConstraintId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarInfo {
    pub name: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// `expr (sense) rhs`, tagged with the constraint family it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct LinConstraint {
    pub expr: LinExpr,
    pub sense: Sense,
    pub rhs: f64,
    pub family: &'static str,
}

/// `‖lhs‖₂ ≤ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub lhs: Vec<LinExpr>,
    pub rhs: LinExpr,
    pub family: &'static str,
}

/// `−weight · ln(arg)` added to the minimised objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTerm {
    pub weight: f64,
    pub arg: LinExpr,
}

#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    pub vars: Vec<VarInfo>,
    pub objective: LinExpr,
    /// `weight · expr²` terms of the minimised objective.
    pub squares: Vec<(f64, LinExpr)>,
    pub logs: Vec<LogTerm>,
    pub constraints: Vec<LinConstraint>,
    pub cones: Vec<SocConstraint>,
}

impl ConicProgram {
    pub fn new() -> ConicProgram {
        ConicProgram::default()
    }

    pub fn var(&mut self, name: impl Into<String>, lower: Option<f64>, upper: Option<f64>) -> Var {
        self.vars.push(VarInfo { name: name.into(), lower, upper });
        Var(self.vars.len() - 1)
    }

    pub fn free(&mut self, name: impl Into<String>) -> Var {
        self.var(name, None, None)
    }

    pub fn nonneg(&mut self, name: impl Into<String>) -> Var {
        self.var(name, Some(0.0), None)
    }

    pub fn bounded(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> Var {
        self.var(name, Some(lower), Some(upper))
    }

    /// Pins a declared variable to `value`.
    pub fn fix(&mut self, v: Var, value: f64) {
        let info = &mut self.vars[v.0];
        info.lower = Some(value);
        info.upper = Some(value);
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn minimize(&mut self, expr: impl Into<LinExpr>) {
        self.objective += expr.into();
    }

    pub fn add_square(&mut self, weight: f64, expr: impl Into<LinExpr>) {
        assert!(weight >= 0.0, "square weight must be nonnegative");
        self.squares.push((weight, expr.into()));
    }

    /// Adds `−weight · ln(arg)` to the objective together with the strict
    /// margin `arg ≥ margin` that keeps the logarithm finite.
    pub fn add_log_utility(&mut self, weight: f64, arg: impl Into<LinExpr>, margin: f64) {
        assert!(weight > 0.0 && margin > 0.0, "log utility needs positive weight and margin");
        let arg = arg.into();
        self.constrain(arg.clone(), Sense::Ge, margin, "log-margin");
        self.logs.push(LogTerm { weight, arg });
    }

    pub fn constrain(&mut self, expr: impl Into<LinExpr>, sense: Sense, rhs: f64, family: &'static str) -> ConstraintId {
        self.constraints.push(LinConstraint { expr: expr.into(), sense, rhs, family });
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn eq(&mut self, expr: impl Into<LinExpr>, rhs: f64, family: &'static str) -> ConstraintId {
        self.constrain(expr, Sense::Eq, rhs, family)
    }

    pub fn le(&mut self, expr: impl Into<LinExpr>, rhs: f64, family: &'static str) -> ConstraintId {
        self.constrain(expr, Sense::Le, rhs, family)
    }

    pub fn ge(&mut self, expr: impl Into<LinExpr>, rhs: f64, family: &'static str) -> ConstraintId {
        self.constrain(expr, Sense::Ge, rhs, family)
    }

    pub fn soc(&mut self, lhs: Vec<LinExpr>, rhs: impl Into<LinExpr>, family: &'static str) -> ConeId {
        self.cones.push(SocConstraint { lhs, rhs: rhs.into(), family });
        ConeId(self.cones.len() - 1)
    }

    /// Moves the right-hand side of an existing row, keeping its structure.
    pub fn set_rhs(&mut self, id: ConstraintId, rhs: f64) {
        self.constraints[id.0].rhs = rhs;
    }

    /// Objective value of the program at `values`, log terms included.
    pub fn objective_at(&self, values: &[f64]) -> f64 {
        let mut total = self.objective.eval(values);
        for (w, e) in &self.squares {
            let v = e.eval(values);
            total += w * v * v;
        }
        for l in &self.logs {
            total -= l.weight * l.arg.eval(values).ln();
        }
        total
    }

    /// Largest violation of any bound, linear row or cone at `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (info, x) in self.vars.iter().zip(values) {
            if let Some(l) = info.lower {
                worst = worst.max(l - x);
            }
            if let Some(u) = info.upper {
                worst = worst.max(x - u);
            }
        }
        for c in &self.constraints {
            let lhs = c.expr.eval(values);
            worst = worst.max(match c.sense {
                Sense::Eq => (lhs - c.rhs).abs(),
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
            });
        }
        for k in &self.cones {
            worst = worst.max(-soc_slack(k, values));
        }
        worst
    }
}

fn soc_slack(cone: &SocConstraint, values: &[f64]) -> f64 {
    let norm = cone.lhs.iter().map(|e| e.eval(values).powi(2)).sum::<f64>().sqrt();
    cone.rhs.eval(values) - norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub values: Vec<f64>,
    /// Objective including squares and log terms.
    pub objective: f64,
    /// Per linear constraint, ∂objective/∂rhs.
    pub duals: Vec<f64>,
    pub iterations: u32,
    /// Constraint family carrying most of the infeasibility certificate.
    pub infeasible_family: Option<String>,
}

impl ConicSolution {
    pub fn value(&self, v: Var) -> f64 {
        self.values[v.0]
    }

    pub fn eval(&self, e: &LinExpr) -> f64 {
        e.eval(&self.values)
    }

    pub fn dual(&self, id: ConstraintId) -> f64 {
        self.duals[id.0]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Converts any non-optimal status into the matching error.
    pub fn require_optimal(self, context: &str) -> Result<ConicSolution> {
        match self.status {
            SolveStatus::Optimal => Ok(self),
            SolveStatus::Infeasible => Err(Error::Infeasible {
                context: context.to_string(),
                family: self.infeasible_family.unwrap_or_else(|| "unknown".into()),
            }),
            SolveStatus::Unbounded => Err(Error::Unbounded { context: context.to_string() }),
            SolveStatus::IterationLimit => Err(Error::Solver {
                context: context.to_string(),
                detail: format!("iteration limit after {} iterations", self.iterations),
            }),
        }
    }
}

/// What a backend can represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub linear: bool,
    pub quadratic: bool,
    pub second_order: bool,
    pub exponential: bool,
}

pub trait Backend: Sync {
    fn name(&self) -> &'static str;
    fn capabilities(&self) -> Capabilities;
    fn solve(&self, program: &ConicProgram, tol: f64) -> Result<ConicSolution>;
}

/// Solves with the default backend.
pub fn solve(program: &ConicProgram, tol: f64) -> Result<ConicSolution> {
    ClarabelBackend.solve(program, tol)
}

/// Slack of one second-order cone at an optimal point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeResidual {
    pub id: ConeId,
    pub family: &'static str,
    /// `rhs − ‖lhs‖₂`.
    pub slack: f64,
    /// Slack divided by the cone's right-hand side.
    pub relative: f64,
    pub loose: bool,
}

/// Slack of every second-order cone; cones whose relative slack exceeds
/// [`TIGHTNESS_THRESHOLD`] are flagged loose.
pub fn cone_residuals(program: &ConicProgram, solution: &ConicSolution) -> Vec<ConeResidual> {
    debug_assert!(solution.is_optimal());
    program
        .cones
        .iter()
        .enumerate()
        .map(|(k, cone)| {
            let slack = soc_slack(cone, &solution.values);
            let scale = cone.rhs.eval(&solution.values).abs();
            let relative = if scale > 0.0 { slack / scale } else { 0.0 };
            ConeResidual { id: ConeId(k), family: cone.family, slack, relative, loose: relative > TIGHTNESS_THRESHOLD }
        })
        .collect()
}
