use super::master::{solve_mp, Cut};
use super::subproblem::{solve_sp1, solve_sp_bcd, BcdResult};
use super::{FirstStage, Realization, RobustOptions, UncertaintyBox};
use crate::adn::AdnRun;
use crate::bargain::{
    quantity_stage_blended, settle, solve_independent, AdmmState, BargainOutcome, Disagreement, IterationTrace,
    SurplusTerms,
};
use crate::error::{Error, Result};
use crate::gdn::{self, GdnRun, GdnTrade};
use crate::netmodel::{BlendState, Scenario};

/// Who the first stage is chosen for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coalition {
    /// Both networks, trades negotiated; bounds are on the joint cost.
    Bargaining,
    /// The ADN on its own with no trade; its robust fallback cost.
    AdnAlone,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcgIteration {
    pub iteration: usize,
    pub master_value: f64,
    /// Running lower bound after this iteration.
    pub lower: f64,
    /// Worst-case cost of this iteration's first stage.
    pub upper: f64,
    /// Best worst-case cost so far.
    pub upper_best: f64,
    pub gap: f64,
    /// Index of the cut this iteration's worst realization became, if any.
    pub cut: Option<usize>,
    pub bcd_steps: usize,
    pub bcd_converged: bool,
}

#[derive(Debug, Clone)]
pub struct CcgRun {
    pub coalition: Coalition,
    pub blend: BlendState,
    pub iterations: Vec<CcgIteration>,
    pub lower: f64,
    pub upper: f64,
    pub gap: f64,
    pub converged: bool,
    /// Incumbent first stage: the one with the best worst-case cost.
    pub first_stage: FirstStage,
    /// First stage of the cut-free master, i.e. the deterministic decision.
    pub deterministic: FirstStage,
    pub worst: Realization,
    /// Recourse at the incumbent's worst realization.
    pub worst_run: AdnRun,
    pub gdn: Option<GdnRun>,
    pub cuts: Vec<Cut>,
    pub bcd: Vec<BcdResult>,
    pub master_traces: Vec<IterationTrace>,
    pub final_state: Option<AdmmState>,
}

impl CcgRun {
    pub fn lower_bounds(&self) -> Vec<f64> {
        self.iterations.iter().map(|i| i.lower).collect()
    }

    pub fn upper_bounds(&self) -> Vec<f64> {
        self.iterations.iter().map(|i| i.upper).collect()
    }
}

fn relative_gap(upper: f64, lower: f64) -> f64 {
    ((upper - lower) / upper.abs().max(1e-9)).max(0.0)
}

/// The outer loop: master, worst-case search, cut, until the bounds meet.
pub fn ccg_loop(
    s: &Scenario,
    blend: &BlendState,
    coalition: Coalition,
    opts: RobustOptions,
    warm: Option<AdmmState>,
) -> Result<CcgRun> {
    let trading = coalition == Coalition::Bargaining;
    let bx = UncertaintyBox::new(s, opts.case);
    let a = &s.algorithm;
    let mut cuts: Vec<Cut> = Vec::new();
    let mut iterations = Vec::new();
    let mut bcd_log = Vec::new();
    let mut master_traces = Vec::new();
    let mut lower = f64::NEG_INFINITY;
    let mut upper_best = f64::INFINITY;
    let mut state = warm;
    let mut deterministic = None;
    let mut incumbent: Option<(FirstStage, Realization, AdnRun, Option<GdnRun>)> = None;
    let mut converged = false;

    for r in 1..=a.ccg_max_iter {
        let mp = solve_mp(s, blend, &cuts, opts, trading, state.clone())?;
        if deterministic.is_none() {
            deterministic = Some(mp.first_stage.clone());
        }
        state = mp.state.clone().or(state);
        master_traces.push(mp.trace.clone());
        // A lower bound stays valid once found; the running maximum guards
        // against the consensus tolerance nudging a master value down.
        lower = lower.max(mp.value);
        let gdn_value = mp.gdn.as_ref().map_or(0.0, |g| g.objective);

        let bcd = solve_sp_bcd(s, blend, &mp.first_stage, &bx, opts)?;
        let (mut worst_value, mut worst, mut worst_run) = (bcd.value, bcd.worst.clone(), bcd.worst_run.clone());
        // Earlier cuts are realizations too; the search may have missed them.
        for cut in &cuts {
            let run = solve_sp1(s, blend, &mp.first_stage, &cut.realization, opts)?;
            if run.objective > worst_value {
                (worst_value, worst, worst_run) = (run.objective, cut.realization.clone(), run);
            }
        }
        let bcd_steps = bcd.steps.len();
        let bcd_converged = bcd.converged;
        bcd_log.push(bcd);

        let upper = gdn_value + worst_value;
        if upper < upper_best {
            upper_best = upper;
            incumbent = Some((mp.first_stage.clone(), worst.clone(), worst_run.clone(), mp.gdn.clone()));
        }
        let gap = relative_gap(upper_best, lower);
        let known = cuts.iter().position(|c| c.realization == worst);
        let mut record = CcgIteration {
            iteration: r,
            master_value: mp.value,
            lower,
            upper,
            upper_best,
            gap,
            cut: known,
            bcd_steps,
            bcd_converged,
        };
        if gap <= a.ccg_gap_tol {
            converged = true;
            iterations.push(record);
            break;
        }
        if known.is_some() {
            // Nothing new to learn from the adversary.
            iterations.push(record);
            break;
        }
        let adjustment = worst_run
            .schedule
            .adjustment
            .clone()
            .unwrap_or_else(|| vec![vec![0.0; s.horizon()]; s.devices.batteries.len()]);
        cuts.push(Cut { realization: worst, adjustment });
        record.cut = Some(cuts.len() - 1);
        iterations.push(record);
    }

    let (first_stage, worst, worst_run, gdn) = incumbent.expect("at least one outer iteration");
    Ok(CcgRun {
        coalition,
        blend: blend.clone(),
        lower,
        upper: upper_best,
        gap: relative_gap(upper_best, lower),
        converged,
        iterations,
        first_stage,
        deterministic: deterministic.expect("at least one outer iteration"),
        worst,
        worst_run,
        gdn,
        cuts,
        bcd: bcd_log,
        master_traces,
        final_state: state,
    })
}

/// Joint cost of a first stage under one realization: recourse ADN objective
/// plus the GDN objective at the first stage's trades.
pub fn evaluate_first_stage(
    s: &Scenario,
    blend: &BlendState,
    y: &FirstStage,
    u: &Realization,
    opts: RobustOptions,
    trading: bool,
) -> Result<f64> {
    let adn = solve_sp1(s, blend, y, u, opts)?;
    let gdn = if trading { gdn::solve_gdn(s, blend, GdnTrade::Fixed(&y.quantities))?.objective } else { 0.0 };
    Ok(adn.objective + gdn)
}

#[derive(Debug, Clone)]
pub struct RobustSolution {
    pub options: RobustOptions,
    /// The bargaining loop; absent when the variant does not trade.
    pub joint: Option<CcgRun>,
    /// The ADN's standalone robust loop, which fixes its fallback cost.
    pub adn_alone: CcgRun,
    /// Costs and prices settled at the worst case.
    pub outcome: BargainOutcome,
}

impl RobustSolution {
    pub fn converged(&self) -> bool {
        self.adn_alone.converged && self.joint.as_ref().is_none_or(|j| j.converged)
    }

    /// The loop whose first stage is actually implemented.
    pub fn primary(&self) -> &CcgRun {
        self.joint.as_ref().unwrap_or(&self.adn_alone)
    }
}

/// Robust bargaining. The ADN's fallback is its own robust schedule; the
/// joint loop runs inside the blend fixed point, warm-started from the
/// deterministic quantity stage; prices then split the worst-case surplus.
pub fn ccg(s: &Scenario, opts: RobustOptions) -> Result<RobustSolution> {
    let independent = solve_independent(s)?;
    let methane = BlendState::methane(&s.blend, s.horizon());
    let alone = ccg_loop(s, &methane, Coalition::AdnAlone, opts, None)?;
    let disagreement = Disagreement {
        c0_e: alone.worst_run.costs.total,
        c0_g: independent.c0_g,
        adn: alone.worst_run.clone(),
        gdn: independent.gdn.clone(),
    };
    if !s.trading_enabled() {
        let reason = format!("trading is disabled in {}", s.variant.as_str());
        let outcome = BargainOutcome::without_trade(s, disagreement, reason, Vec::new());
        return Ok(RobustSolution { options: opts, joint: None, adn_alone: alone, outcome });
    }

    let (q1, mut blend, mut history) = quantity_stage_blended(s)?;
    let mut warm = Some(q1.state);
    for _ in 0..s.algorithm.blend_max_iter {
        let run = ccg_loop(s, &blend, Coalition::Bargaining, opts, warm.clone())?;
        let gdn_run = run.gdn.clone().expect("the bargaining loop schedules the GDN");
        let next = gdn_run.schedule.implied_blend(s)?;
        let change = next.max_change(&blend);
        history.push(change);
        if change <= s.algorithm.blend_tol {
            let terms = SurplusTerms {
                c0_e: disagreement.c0_e,
                c0_g: disagreement.c0_g,
                a_e: run.worst_run.costs.total,
                a_g: gdn_run.costs.total,
            };
            let trace = run.master_traces.last().cloned().unwrap_or_default();
            let outcome = settle(
                s,
                &blend,
                disagreement,
                run.first_stage.quantities.clone(),
                terms,
                run.worst_run.clone(),
                gdn_run,
                trace,
                history,
            )?;
            return Ok(RobustSolution { options: opts, joint: Some(run), adn_alone: alone, outcome });
        }
        warm = run.final_state.clone();
        blend = next;
    }
    Err(Error::NonConvergence {
        what: "robust blend fixed point".into(),
        detail: format!("hydrogen fraction still moving after {} rounds: {history:?}", history.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::bundled;
    use crate::robust::CaseMask;

    #[test]
    fn zero_radii_stop_at_once() {
        let mut s = bundled("tiny4x3").unwrap();
        s.uncertainty.load_radius = 0.0;
        s.uncertainty.der_radius = 0.0;
        let blend = BlendState::methane(&s.blend, s.horizon());
        let run = ccg_loop(&s, &blend, Coalition::AdnAlone, RobustOptions::default(), None).unwrap();
        assert_eq!(run.iterations.len(), 1);
        assert!(run.converged && run.gap <= 1e-6);
    }

    #[test]
    fn standalone_loop_closes_and_lower_bounds_rise() {
        let s = bundled("tiny4x3").unwrap();
        let blend = BlendState::methane(&s.blend, s.horizon());
        let run = ccg_loop(&s, &blend, Coalition::AdnAlone, RobustOptions::default(), None).unwrap();
        assert!(run.converged, "{:?}", run.iterations);
        let lb = run.lower_bounds();
        assert!(lb.windows(2).all(|w| w[1] >= w[0]));
        assert!(run.iterations.len() >= 2, "an adversarial cut should be needed");
        assert!(run.iterations[1].master_value > run.iterations[0].master_value);
    }

    #[test]
    fn case_one_is_deterministic() {
        let s = bundled("tiny4x3").unwrap();
        let blend = BlendState::methane(&s.blend, s.horizon());
        let opts = RobustOptions { case: CaseMask::Case1, ..Default::default() };
        let run = ccg_loop(&s, &blend, Coalition::AdnAlone, opts, None).unwrap();
        let det = crate::adn::solve_adn(&s, &blend, Default::default()).unwrap();
        assert!((run.upper - det.objective).abs() <= 1e-6 * det.objective.abs().max(1.0));
    }
}
