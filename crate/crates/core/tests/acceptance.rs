//! Acceptance run over the bundled scenarios. Prints one PASS or FAIL line
//! per criterion and exits nonzero if any criterion fails.
//!
//! Expensive results (cooperative outcomes, robust solutions) are computed
//! once and shared between the criteria that read them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use hcng_bargain::adn;
use hcng_bargain::bargain::{self, BargainOutcome};
use hcng_bargain::cli::{conversion_marginal_cost, main_with_args};
use hcng_bargain::gdn;
use hcng_bargain::netmodel::{self, BlendState, Scenario, Variant};
use hcng_bargain::oracle;
use hcng_bargain::robust::{self, CaseMask, Coalition, RobustOptions, RobustSolution, UncertaintyBox};
use hcng_bargain::Result;

const SCENARIOS: [&str; 2] = ["tiny4x3", "ieee33_belgian20"];
const VARIANTS: [Variant; 3] = [Variant::Model1, Variant::Model2, Variant::Model3];

/// Participation and equal-split slack on the cost scale of the instance.
const RATIONALITY_TOL: f64 = 1e-6;
const SPLIT_SHARE: f64 = 0.01;
const CENTRAL_REL: f64 = 1e-3;
const CCG_GAP: f64 = 1e-3;
const CCG_MAX_ITER: usize = 15;
const WORST_CASE_REL: f64 = 1e-6;
const CONE_SLACK: f64 = 1e-4;
const BLEND_TOL: f64 = 1e-4;
const BLEND_ROUNDS: usize = 20;
const Q1_BUDGET: Duration = Duration::from_secs(60);
const TINY_ROBUST_BUDGET: Duration = Duration::from_secs(300);

struct Verdicts {
    lines: Vec<(bool, String)>,
}

impl Verdicts {
    fn record(&mut self, name: &str, passed: bool, detail: String) {
        let tag = if passed { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {detail}");
        self.lines.push((passed, name.to_string()));
    }

    fn record_result(&mut self, name: &str, r: Result<(bool, String)>) {
        match r {
            Ok((ok, detail)) => self.record(name, ok, detail),
            Err(e) => self.record(name, false, format!("error: {e}")),
        }
    }
}

fn scenario(name: &str, variant: Variant) -> Scenario {
    let mut s = netmodel::bundled(name).expect("bundled scenario");
    s.variant = variant;
    s
}

struct Cooperative {
    name: &'static str,
    variant: Variant,
    outcome: BargainOutcome,
    seconds: f64,
}

struct Robust {
    solution: RobustSolution,
    seconds: f64,
}

fn bargaining_optimality(tiny: &Cooperative) -> Result<(bool, String)> {
    let s = scenario("tiny4x3", Variant::Model1);
    let o = &tiny.outcome;
    let blend = o.gdn.schedule.blend.clone();
    let started = Instant::now();
    let central = bargain::solve_q1_central(&s, &blend)?;
    let central_secs = started.elapsed().as_secs_f64();
    let admm_cost = o.adn.costs.total + o.gdn.costs.total;
    let rel = (admm_cost - central.joint_cost).abs() / central.joint_cost.abs().max(1.0);

    let grid = oracle::grid_search_q1(&s, &blend, 3)?;
    let tested = grid.baseline - admm_cost;
    let slack = grid.slack;
    let above_grid = tested >= grid.best_benefit - slack;
    let fast = tiny.seconds < Q1_BUDGET.as_secs_f64();
    Ok((
        rel <= CENTRAL_REL && above_grid && fast,
        format!(
            "joint cost ADMM {admm_cost:.4} vs centralised {:.4} (rel {rel:.2e} <= {CENTRAL_REL:e}); benefit {tested:.4} vs grid best {:.4} minus slack {slack:.4} over {} points; cooperative run {:.1} s, centralised {central_secs:.1} s (< {} s)",
            central.joint_cost,
            grid.best_benefit,
            grid.points,
            tiny.seconds,
            Q1_BUDGET.as_secs()
        ),
    ))
}

fn equal_split(coops: &[Cooperative]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for c in coops {
        let (name, variant, o) = (c.name, c.variant.as_str(), &c.outcome);
        if o.no_bargain.is_some() || o.surplus <= 0.0 {
            continue;
        }
        let diff = (o.delta_e - o.delta_g).abs();
        let scan = oracle::transfer_split_check(o);
        let pass = diff <= SPLIT_SHARE * o.surplus && scan.passed;
        ok &= pass;
        parts.push(format!("{name}/{variant} |dE-dG| {diff:.3e} of S {:.4}, scan gap {:.2e}", o.surplus, scan.abs_gap));
    }
    if parts.is_empty() {
        return (false, "no instance produced a positive surplus".into());
    }
    (ok, parts.join("; "))
}

fn participation(coops: &[Cooperative]) -> (bool, String) {
    let mut ok = true;
    let mut worst = f64::INFINITY;
    for c in coops {
        let o = &c.outcome;
        let tol = RATIONALITY_TOL * (o.c0_e.abs() + o.c0_g.abs()).max(1.0);
        ok &= o.delta_e >= -tol && o.delta_g >= -tol;
        worst = worst.min(o.delta_e).min(o.delta_g);
    }
    (ok, format!("{} cooperative runs, smallest surplus share {worst:.3e}", coops.len()))
}

fn marginal(c: &Cooperative) -> Result<Option<f64>> {
    let s = scenario(c.name, c.variant);
    let o = &c.outcome;
    let prices = o.no_bargain.is_none().then_some(&o.decision.prices);
    conversion_marginal_cost(&s, &o.gdn.schedule.blend, &o.adn, prices)
}

fn directional(coops: &[Cooperative]) -> Result<(bool, String)> {
    let get = |v: Variant| coops.iter().find(|c| c.name == "ieee33_belgian20" && c.variant == v);
    let (Some(c1), Some(c2), Some(c3)) = (get(Variant::Model1), get(Variant::Model2), get(Variant::Model3)) else {
        return Ok((false, "an ieee33_belgian20 cooperative run failed".into()));
    };
    let (m1, m3) = (&c1.outcome, &c3.outcome);
    let mc1 = marginal(c1)?;
    let mc2 = marginal(c2)?;
    let costs = m1.c_e < m3.c_e;
    let mcs = matches!((mc1, mc2), (Some(a), Some(b)) if a < b);
    Ok((
        costs && mcs,
        format!(
            "ADN cost model1 {:.2} < model3 {:.2}; conversion marginal cost model1 {} < model2 {} $/kWh",
            m1.c_e,
            m3.c_e,
            mc1.map_or("n/a".into(), |v| format!("{v:.4}")),
            mc2.map_or("n/a".into(), |v| format!("{v:.4}")),
        ),
    ))
}

fn ccg_convergence(robust: &BTreeMap<String, Robust>) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, r) in robust {
        for (label, run) in [("joint", r.solution.joint.as_ref()), ("adn_alone", Some(&r.solution.adn_alone))] {
            let Some(run) = run else { continue };
            let lb = run.lower_bounds();
            let monotone = lb.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
            let pass = run.converged && run.gap <= CCG_GAP && run.iterations.len() <= CCG_MAX_ITER && monotone;
            ok &= pass;
            parts.push(format!(
                "{name}/{label} gap {:.2e} in {} iterations, LB nondecreasing {monotone}",
                run.gap,
                run.iterations.len()
            ));
        }
        if name == "tiny4x3" {
            let fast = r.seconds < TINY_ROBUST_BUDGET.as_secs_f64();
            ok &= fast;
            parts.push(format!("tiny4x3 robust {:.1} s (< {} s)", r.seconds, TINY_ROBUST_BUDGET.as_secs()));
        } else {
            parts.push(format!("{name} robust {:.1} s", r.seconds));
        }
    }
    (ok, parts.join("; "))
}

fn worst_case(tiny: &Robust) -> Result<(bool, String)> {
    let s = scenario("tiny4x3", Variant::Model1);
    let opts = tiny.solution.options;
    let run = tiny.solution.primary();
    let bx = UncertaintyBox::new(&s, opts.case);
    let bcd = robust::solve_sp_bcd(&s, &run.blend, &run.first_stage, &bx, opts)?;
    let report = oracle::certify_worst_case(&s, &run.blend, &run.first_stage, opts, bcd.value)?;
    let mut vertices = bx.vertex_bits(&bcd.worst, 1e-12).is_some();
    for b in &run.bcd {
        vertices &= bx.vertex_bits(&b.worst, 1e-12).is_some();
        vertices &= b.steps.iter().skip(1).all(|st| st.vertex.is_some());
    }
    let close = report.rel_gap <= WORST_CASE_REL;
    Ok((
        close && vertices,
        format!(
            "BCD {:.6} vs enumeration {:.6} over {} vertices (rel {:.2e} <= {WORST_CASE_REL:e}); every adversary output a vertex {vertices}",
            bcd.value, report.oracle_value, report.enumeration_size, report.rel_gap
        ),
    ))
}

fn dominance(robust: &BTreeMap<String, Robust>) -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, r) in robust {
        let s = scenario(name, Variant::Model1);
        let run = r.solution.primary();
        let trading = r.solution.joint.is_some();
        let opts = r.solution.options;
        let det = robust::evaluate_first_stage(&s, &run.blend, &run.deterministic, &run.worst, opts, trading)?;
        let rob = robust::evaluate_first_stage(&s, &run.blend, &run.first_stage, &run.worst, opts, trading)?;
        let pass = det >= rob - RATIONALITY_TOL * rob.abs().max(1.0);
        ok &= pass;
        parts.push(format!("{name} deterministic first stage {det:.4} >= robust {rob:.4}"));
    }
    Ok((ok, parts.join("; ")))
}

fn battery_value(robust: &BTreeMap<String, Robust>) -> Result<(bool, String)> {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, r) in robust {
        let s = scenario(name, Variant::Model1);
        let with = &r.solution.adn_alone;
        let opts = RobustOptions { battery_recourse: false, ..r.solution.options };
        let methane = BlendState::methane(&s.blend, s.horizon());
        let without = robust::ccg_loop(&s, &methane, Coalition::AdnAlone, opts, None)?;
        let margin = without.upper - with.upper;
        let tol = RATIONALITY_TOL * with.upper.abs().max(1.0);
        let never_worse = margin >= -tol;
        let strict = margin > tol;
        ok &= never_worse && strict;
        parts.push(format!(
            "{name} worst-case ADN cost without battery recourse {:.4}, with {:.4} (margin {margin:.2e}; never worse {never_worse}, strictly better {strict})",
            without.upper, with.upper
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn relaxation(coops: &[Cooperative], robust: &BTreeMap<String, Robust>) -> (bool, String) {
    let mut worst_branch: f64 = 0.0;
    let mut worst_pipe: f64 = 0.0;
    let mut count = 0;
    for c in coops {
        let s = scenario(c.name, c.variant);
        worst_branch = worst_branch.max(adn::branchflow_tightness(&s, &c.outcome.adn.schedule));
        worst_pipe = worst_pipe.max(gdn::weymouth_tightness(&s, &c.outcome.gdn.schedule));
        count += 1;
    }
    for (name, r) in robust {
        let s = scenario(name, Variant::Model1);
        for run in r.solution.joint.iter().chain([&r.solution.adn_alone]) {
            worst_branch = worst_branch.max(adn::branchflow_tightness(&s, &run.worst_run.schedule));
            if let Some(g) = &run.gdn {
                worst_pipe = worst_pipe.max(gdn::weymouth_tightness(&s, &g.schedule));
            }
            count += 1;
        }
    }
    (
        worst_branch <= CONE_SLACK && worst_pipe <= CONE_SLACK,
        format!("{count} accepted solutions; worst branch-flow slack {worst_branch:.2e}, worst Weymouth slack {worst_pipe:.2e} (<= {CONE_SLACK:e})"),
    )
}

fn blend(coops: &[Cooperative], robust: &BTreeMap<String, Robust>) -> (bool, String) {
    let mut ok = true;
    let mut rounds = 0;
    let mut max_omega: f64 = 0.0;
    let mut omega_max = f64::INFINITY;
    let mut histories: Vec<(&[f64], &BargainOutcome)> = Vec::new();
    for c in coops {
        histories.push((&c.outcome.blend_history, &c.outcome));
    }
    for r in robust.values() {
        histories.push((&r.solution.outcome.blend_history, &r.solution.outcome));
    }
    for (h, o) in histories {
        let s_omega = o.gdn.schedule.blend.constants.omega_max;
        omega_max = omega_max.min(s_omega);
        let settled = h.last().is_none_or(|last| *last <= BLEND_TOL);
        ok &= settled && h.len() <= BLEND_ROUNDS;
        rounds = rounds.max(h.len());
        for w in &o.gdn.schedule.blend.omega {
            ok &= *w <= s_omega + 1e-9;
            max_omega = max_omega.max(*w);
        }
    }
    (ok, format!("at most {rounds} rounds (<= {BLEND_ROUNDS}) to {BLEND_TOL:e}; largest hydrogen fraction {max_omega:.4} (cap {omega_max})"))
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn determinism() -> (bool, String) {
    let tmp = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut files = 0;
    for mode in ["independent", "cooperative", "robust"] {
        let mut snaps = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("{mode}-{rep}"));
            let args = ["hcng", "run", "--scenario", "tiny4x3", "--mode", mode, "--emit-trace", "--out"];
            let mut argv: Vec<String> = args.iter().map(|a| a.to_string()).collect();
            argv.push(out.display().to_string());
            ok &= main_with_args(argv) == 0;
            snaps.push(snapshot(&out));
        }
        files += snaps[0].len();
        ok &= snaps[0] == snaps[1];
    }
    (ok, format!("{files} files from repeated tiny4x3 runs compared byte for byte"))
}

fn main() {
    let mut v = Verdicts { lines: Vec::new() };
    let total = Instant::now();

    let mut coops = Vec::new();
    let mut failures = Vec::new();
    for name in SCENARIOS {
        for variant in VARIANTS {
            let s = scenario(name, variant);
            let started = Instant::now();
            match bargain::cooperate(&s) {
                Ok(outcome) => {
                    let seconds = started.elapsed().as_secs_f64();
                    coops.push(Cooperative { name, variant, outcome, seconds });
                }
                Err(e) => failures.push(format!("{name}/{}: {e}", variant.as_str())),
            }
        }
    }
    let mut robust = BTreeMap::new();
    for name in SCENARIOS {
        let s = scenario(name, Variant::Model1);
        let started = Instant::now();
        match robust::ccg(&s, RobustOptions { case: CaseMask::Case4, battery_recourse: true }) {
            Ok(solution) => {
                robust.insert(name.to_string(), Robust { solution, seconds: started.elapsed().as_secs_f64() });
            }
            Err(e) => failures.push(format!("{name}/robust: {e}")),
        }
    }
    v.record(
        "every bundled run completes",
        failures.is_empty(),
        if failures.is_empty() { format!("{} cooperative and {} robust runs", coops.len(), robust.len()) } else { failures.join("; ") },
    );

    match coops.iter().find(|c| c.name == "tiny4x3" && c.variant == Variant::Model1) {
        Some(tiny) => v.record_result("bargaining optimality", bargaining_optimality(tiny)),
        None => v.record("bargaining optimality", false, "tiny4x3 cooperative run failed".into()),
    }
    let (ok, d) = equal_split(&coops);
    v.record("equal surplus split", ok, d);
    let (ok, d) = participation(&coops);
    v.record("participation rationality", ok, d);
    v.record_result("directional cost and marginal-cost claims", directional(&coops));
    let complete = robust.len() == SCENARIOS.len();
    let (ok, d) = ccg_convergence(&robust);
    v.record("robust loop convergence", ok && complete, d);
    match robust.get("tiny4x3") {
        Some(r) => v.record_result("worst-case certification", worst_case(r)),
        None => v.record("worst-case certification", false, "tiny4x3 robust run failed".into()),
    }
    let dom = dominance(&robust).map(|(ok, d)| (ok && complete, d));
    v.record_result("robust dominance", dom);
    let bat = battery_value(&robust).map(|(ok, d)| (ok && complete, d));
    v.record_result("battery value", bat);
    let (ok, d) = relaxation(&coops, &robust);
    v.record("relaxation exactness", ok, d);
    let (ok, d) = blend(&coops, &robust);
    v.record("blend fixed point", ok, d);
    let (ok, d) = determinism();
    v.record("determinism", ok, d);

    let failed: Vec<_> = v.lines.iter().filter(|(ok, _)| !ok).map(|(_, n)| n.as_str()).collect();
    println!(
        "{} of {} criteria passed in {:.0} s",
        v.lines.len() - failed.len(),
        v.lines.len(),
        total.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
