use crate::conic::{self, ConicProgram, ConicSolution, LinExpr, Var};
use crate::error::{Error, Result};

/// One side of a two-agent consensus problem: its private program (objective
/// included) and its local copies of the coupled variables.
#[derive(Debug, Clone)]
pub struct Agent {
    pub name: &'static str,
    pub program: ConicProgram,
    pub coupled: Vec<Var>,
}

/// Penalties, scales and stopping rule of one consensus run.
#[derive(Debug, Clone)]
pub struct AdmmConfig {
    /// Penalty per coupled variable.
    pub rho: Vec<f64>,
    /// Typical magnitude per coupled variable; residuals are divided by it.
    pub scale: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub solver_tol: f64,
    /// Keep the full per-variable message log.
    pub log_messages: bool,
    pub label: &'static str,
}

/// Consensus point and multipliers; reusable as a warm start.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub z: Vec<f64>,
    pub lambda_adn: Vec<f64>,
    pub lambda_gdn: Vec<f64>,
}

impl AdmmState {
    pub fn cold(z: Vec<f64>) -> AdmmState {
        let n = z.len();
        AdmmState { z, lambda_adn: vec![0.0; n], lambda_gdn: vec![0.0; n] }
    }
}

/// What crosses the entity boundary in one iteration: coupled values and
/// multipliers only.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmMessage {
    pub iteration: usize,
    pub adn_values: Vec<f64>,
    pub gdn_values: Vec<f64>,
    pub lambda_adn: Vec<f64>,
    pub lambda_gdn: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Private objectives without the consensus terms.
    pub adn_objective: f64,
    pub gdn_objective: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub label: String,
    pub records: Vec<IterationRecord>,
    pub messages: Vec<AdmmMessage>,
}

impl IterationTrace {
    pub fn final_primal(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.primal_residual)
    }
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    pub state: AdmmState,
    pub trace: IterationTrace,
    pub adn_solution: ConicSolution,
    pub gdn_solution: ConicSolution,
    /// Private objectives at the last local solutions.
    pub adn_objective: f64,
    pub gdn_objective: f64,
}

fn local_program(agent: &Agent, z: &[f64], lambda: &[f64], rho: &[f64]) -> ConicProgram {
    let mut p = agent.program.clone();
    for (k, &v) in agent.coupled.iter().enumerate() {
        p.minimize(LinExpr::term(v, lambda[k]));
        p.add_square(0.5 * rho[k], v - z[k]);
    }
    p
}

fn solve_local(agent: &Agent, z: &[f64], lambda: &[f64], rho: &[f64], tol: f64) -> Result<ConicSolution> {
    let p = local_program(agent, z, lambda, rho);
    conic::solve(&p, tol)?.require_optimal(agent.name)
}

/// Jacobi consensus ADMM between the ADN and GDN agents.
///
/// Both local problems are solved from the same snapshot of `z` and the
/// multipliers, on two threads; the averaging and multiplier update are the
/// serial synchronisation point, so results do not depend on thread timing.
pub fn run_consensus(adn: &Agent, gdn: &Agent, cfg: &AdmmConfig, start: AdmmState) -> Result<AdmmResult> {
    let n = adn.coupled.len();
    assert_eq!(n, gdn.coupled.len(), "agents must share the coupled vector");
    assert_eq!(n, start.z.len());
    let mut state = start;
    let mut trace = IterationTrace { label: cfg.label.to_string(), ..Default::default() };
    let rho = &cfg.rho;

    for it in 1..=cfg.max_iter {
        let (ra, rg) = std::thread::scope(|scope| {
            let h = scope.spawn(|| solve_local(gdn, &state.z, &state.lambda_gdn, rho, cfg.solver_tol));
            let a = solve_local(adn, &state.z, &state.lambda_adn, rho, cfg.solver_tol);
            (a, h.join().expect("GDN local solve panicked"))
        });
        let (sa, sg) = (ra?, rg?);
        let xa: Vec<f64> = adn.coupled.iter().map(|&v| sa.value(v)).collect();
        let xg: Vec<f64> = gdn.coupled.iter().map(|&v| sg.value(v)).collect();

        let mut z_new = vec![0.0; n];
        for k in 0..n {
            z_new[k] = 0.5 * (xa[k] + xg[k]) + 0.5 * (state.lambda_adn[k] + state.lambda_gdn[k]) / rho[k];
        }
        let mut primal: f64 = 0.0;
        let mut dual: f64 = 0.0;
        for k in 0..n {
            state.lambda_adn[k] += rho[k] * (xa[k] - z_new[k]);
            state.lambda_gdn[k] += rho[k] * (xg[k] - z_new[k]);
            primal = primal.max((xa[k] - xg[k]).abs() / cfg.scale[k]);
            dual = dual.max((z_new[k] - state.z[k]).abs() / cfg.scale[k]);
        }
        state.z = z_new;

        let adn_objective = adn.program.objective_at(&sa.values);
        let gdn_objective = gdn.program.objective_at(&sg.values);
        trace.records.push(IterationRecord {
            iteration: it,
            primal_residual: primal,
            dual_residual: dual,
            adn_objective,
            gdn_objective,
        });
        if cfg.log_messages {
            trace.messages.push(AdmmMessage {
                iteration: it,
                adn_values: xa,
                gdn_values: xg,
                lambda_adn: state.lambda_adn.clone(),
                lambda_gdn: state.lambda_gdn.clone(),
                z: state.z.clone(),
            });
        }
        if primal <= cfg.tol && dual <= cfg.tol {
            return Ok(AdmmResult {
                state,
                trace,
                adn_solution: sa,
                gdn_solution: sg,
                adn_objective,
                gdn_objective,
            });
        }
    }
    let tail: Vec<String> = trace
        .records
        .iter()
        .rev()
        .take(5)
        .map(|r| format!("#{} primal {:.2e} dual {:.2e}", r.iteration, r.primal_residual, r.dual_residual))
        .collect();
    Err(Error::NonConvergence {
        what: format!("{} consensus", cfg.label),
        detail: format!("iteration cap {} reached; last residuals: {}", cfg.max_iter, tail.join(", ")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_quadratics_meet_at_the_joint_optimum() {
        // ADN wants x near 1, GDN wants x near 3 with twice the weight:
        // the joint optimum of (x−1)² + 2(x−3)² is x = 7/3.
        let mk = |name, target: f64, w: f64| {
            let mut p = ConicProgram::new();
            let x = p.free("x");
            p.add_square(w, x - target);
            Agent { name, program: p, coupled: vec![x] }
        };
        let adn = mk("adn", 1.0, 1.0);
        let gdn = mk("gdn", 3.0, 2.0);
        let cfg = AdmmConfig {
            rho: vec![2.0],
            scale: vec![1.0],
            tol: 1e-6,
            max_iter: 500,
            solver_tol: 1e-10,
            log_messages: true,
            label: "toy",
        };
        let res = run_consensus(&adn, &gdn, &cfg, AdmmState::cold(vec![0.0])).unwrap();
        assert!((res.state.z[0] - 7.0 / 3.0).abs() < 1e-4);
        assert_eq!(res.trace.messages.len(), res.trace.records.len());
        assert!(res.trace.records.iter().all(|r| r.primal_residual >= 0.0 && r.dual_residual >= 0.0));
        let again = run_consensus(&adn, &gdn, &cfg, AdmmState::cold(vec![0.0])).unwrap();
        assert_eq!(again.trace, res.trace);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let mut p = ConicProgram::new();
        let x = p.free("x");
        p.add_square(1.0, x - 1.0);
        let adn = Agent { name: "adn", program: p.clone(), coupled: vec![x] };
        let mut q = ConicProgram::new();
        let y = q.free("y");
        q.add_square(1.0, y + 1.0);
        let gdn = Agent { name: "gdn", program: q, coupled: vec![y] };
        let cfg = AdmmConfig {
            rho: vec![1.0],
            scale: vec![1.0],
            tol: 1e-12,
            max_iter: 3,
            solver_tol: 1e-9,
            log_messages: false,
            label: "toy",
        };
        assert!(matches!(
            run_consensus(&adn, &gdn, &cfg, AdmmState::cold(vec![0.0])),
            Err(Error::NonConvergence { .. })
        ));
    }
}
