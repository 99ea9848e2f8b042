use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::{Backend, Capabilities, ConicProgram, ConicSolution, LinExpr, Sense, SolveStatus};
use crate::error::{Error, Result};

/// Interior-point backend built on Clarabel, run single-threaded so repeated
/// solves are bit-identical.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

/// Rows of `A x + s = b` plus the family each row belongs to.
#[derive(Default)]
struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
    family: Vec<&'static str>,
}

impl Rows {
    /// Appends the row `s = b − A x` so that `s` equals `scale · expr`.
    fn push_slack(&mut self, expr: &LinExpr, scale: f64, family: &'static str) -> usize {
        let row = self.b.len();
        for &(var, c) in &expr.terms {
            if c != 0.0 {
                self.i.push(row);
                self.j.push(var.0);
                self.v.push(-c * scale);
            }
        }
        self.b.push(expr.constant * scale);
        self.family.push(family);
        row
    }
}

impl Backend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { linear: true, quadratic: true, second_order: true, exponential: true }
    }

    fn solve(&self, program: &ConicProgram, tol: f64) -> Result<ConicSolution> {
        let n_user = program.num_vars();
        let n = n_user + program.logs.len();
        let mut rows = Rows::default();
        let mut cones = Vec::new();
        // (row, sign) per linear constraint: dual sensitivity is sign · z[row].
        let mut lin_rows = vec![(0usize, 0.0f64); program.constraints.len()];

        // Equalities and fixed variables form the zero cone.
        let start = rows.b.len();
        for (k, c) in program.constraints.iter().enumerate() {
            if c.sense == Sense::Eq {
                let e = c.expr.clone() - c.rhs;
                lin_rows[k] = (rows.push_slack(&(-e), 1.0, c.family), -1.0);
            }
        }
        for (idx, info) in program.vars.iter().enumerate() {
            if let (Some(l), Some(u)) = (info.lower, info.upper) {
                if l == u {
                    rows.push_slack(&(LinExpr::constant(l) - super::Var(idx)), 1.0, "bound");
                }
            }
        }
        if rows.b.len() > start {
            cones.push(SupportedConeT::ZeroConeT(rows.b.len() - start));
        }

        // Inequalities and strict bounds form the nonnegative cone.
        let start = rows.b.len();
        for (k, c) in program.constraints.iter().enumerate() {
            match c.sense {
                Sense::Le => {
                    let slack = LinExpr::constant(c.rhs) - c.expr.clone();
                    lin_rows[k] = (rows.push_slack(&slack, 1.0, c.family), -1.0);
                }
                Sense::Ge => {
                    let slack = c.expr.clone() - c.rhs;
                    lin_rows[k] = (rows.push_slack(&slack, 1.0, c.family), 1.0);
                }
                Sense::Eq => {}
            }
        }
        for (idx, info) in program.vars.iter().enumerate() {
            let v = super::Var(idx);
            match (info.lower, info.upper) {
                (Some(l), Some(u)) if l == u => {}
                (lower, upper) => {
                    if let Some(l) = lower {
                        rows.push_slack(&(v - l), 1.0, "bound");
                    }
                    if let Some(u) = upper {
                        rows.push_slack(&(LinExpr::constant(u) - v), 1.0, "bound");
                    }
                }
            }
        }
        if rows.b.len() > start {
            cones.push(SupportedConeT::NonnegativeConeT(rows.b.len() - start));
        }

        for cone in &program.cones {
            rows.push_slack(&cone.rhs, 1.0, cone.family);
            for e in &cone.lhs {
                rows.push_slack(e, 1.0, cone.family);
            }
            cones.push(SupportedConeT::SecondOrderConeT(1 + cone.lhs.len()));
        }

        // −w·ln(arg): epigraph variable r with (r, 1, arg) in the exponential
        // cone, i.e. e^r ≤ arg, and −w·r in the objective.
        for (k, log) in program.logs.iter().enumerate() {
            let r = super::Var(n_user + k);
            rows.push_slack(&LinExpr::from(r), 1.0, "log");
            rows.push_slack(&LinExpr::constant(1.0), 1.0, "log");
            rows.push_slack(&log.arg, 1.0, "log");
            cones.push(SupportedConeT::ExponentialConeT());
        }

        let mut q = vec![0.0; n];
        for &(v, c) in &program.objective.terms {
            q[v.0] += c;
        }
        for (k, log) in program.logs.iter().enumerate() {
            q[n_user + k] -= log.weight;
        }
        let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
        for (w, e) in &program.squares {
            let e = e.compact();
            for (a, &(va, ca)) in e.terms.iter().enumerate() {
                q[va.0] += 2.0 * w * e.constant * ca;
                for &(vb, cb) in &e.terms[a..] {
                    // Terms are sorted, so va ≤ vb and the entry is upper triangular.
                    pi.push(va.0);
                    pj.push(vb.0);
                    pv.push(2.0 * w * ca * cb);
                }
            }
        }

        let m = rows.b.len();
        let p_mat = CscMatrix::new_from_triplets(n, n, pi, pj, pv);
        let a_mat = CscMatrix::new_from_triplets(m, n, rows.i.clone(), rows.j.clone(), rows.v.clone());
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_threads(1)
            .max_iter(400)
            .tol_feas(tol)
            .tol_gap_abs(tol)
            .tol_gap_rel(tol)
            .build()
            .map_err(|e| Error::Solver { context: "settings".into(), detail: e.to_string() })?;
        let mut solver = DefaultSolver::new(&p_mat, &q, &a_mat, &rows.b, &cones, settings)
            .map_err(|e| Error::Solver { context: "setup".into(), detail: e.to_string() })?;
        solver.solve();
        let sol = &solver.solution;

        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::IterationLimit,
            // Clarabel can stall on the last digits of a solved problem; keep
            // the point when it is essentially feasible and optimal.
            SolverStatus::InsufficientProgress | SolverStatus::NumericalError
                if sol.r_prim.is_finite() && sol.r_prim < 1e-5 && sol.r_dual < 1e-5 =>
            {
                SolveStatus::Optimal
            }
            other => {
                return Err(Error::Solver {
                    context: "clarabel".into(),
                    detail: format!(
                        "status {other:?} after {} iterations (primal residual {:.3e}, dual residual {:.3e}) \
                         on a program with {n_user} variables, {m} rows, {} second-order cones and {} log terms",
                        sol.iterations,
                        sol.r_prim,
                        sol.r_dual,
                        program.cones.len(),
                        program.logs.len()
                    ),
                })
            }
        };

        let values: Vec<f64> = sol.x[..n_user].to_vec();
        let duals = lin_rows.iter().map(|&(row, sign)| sign * sol.z[row]).collect();
        let infeasible_family = (status == SolveStatus::Infeasible).then(|| {
            let mut mass: BTreeMap<&str, f64> = BTreeMap::new();
            for (row, fam) in rows.family.iter().enumerate() {
                *mass.entry(fam).or_default() += sol.z[row].abs();
            }
            mass.into_iter()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(f, _)| f.to_string())
                .unwrap_or_default()
        });
        let objective = if status == SolveStatus::Optimal {
            program.objective_at(&values)
        } else {
            f64::NAN
        };
        Ok(ConicSolution {
            status,
            values,
            objective,
            duals,
            iterations: sol.iterations,
            infeasible_family,
        })
    }
}
