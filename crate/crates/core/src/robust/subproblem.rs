use super::{FirstStage, PairKind, Realization, RobustOptions, UncertaintyBox};
use crate::adn::{self, AdnOptions, AdnRun, AdnTrade, BatteryMode};
use crate::error::Result;
use crate::netmodel::{BlendState, Scenario};

/// Gradients smaller than this (in $/kW-period) count as ties.
const TIE: f64 = 1e-7;

/// Recourse problem: the cheapest ADN re-dispatch under a fixed first stage
/// and a fixed realization. Shedding is allowed at a penalty so that no
/// realization makes the recourse infeasible.
pub fn solve_sp1(s: &Scenario, blend: &BlendState, y: &FirstStage, u: &Realization, opts: RobustOptions) -> Result<AdnRun> {
    adn::solve_adn(
        s,
        blend,
        AdnOptions {
            trade: AdnTrade::Fixed(&y.quantities),
            realization: Some(u),
            battery: BatteryMode::Pinned { baseline: &y.baseline, adjust: opts.battery_recourse },
            shed: true,
            fuel_pin: None,
        },
    )
}

/// Adversary step: with the recourse fixed the ADN cost is affine in the
/// realization, with slopes given by the balance and DER-availability duals
/// of the recourse solve. Its maximum over the box sits at the vertex that
/// follows the sign of each slope; zero slopes resolve to the adverse side
/// (loads high, DER low).
///
/// Returns the vertex coordinates and the linearised cost there.
pub fn solve_sp2(bx: &UncertaintyBox, sp1: &AdnRun, at: &Realization) -> (Vec<bool>, f64) {
    let mut value = sp1.objective;
    let mut bits = Vec::with_capacity(bx.len());
    for p in &bx.pairs {
        let (slope, current) = match p.kind {
            PairKind::Load => (sp1.balance_duals[p.element][p.period], at.load[p.element][p.period]),
            PairKind::Der => (sp1.der_duals[p.element][p.period], at.der[p.element][p.period]),
        };
        let up = if slope.abs() <= TIE { p.kind == PairKind::Load } else { slope > 0.0 };
        let target = if up { p.upper } else { p.lower };
        value += slope * (target - current);
        bits.push(up);
    }
    (bits, value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdStep {
    pub iteration: usize,
    /// Vertex the recourse was solved at; `None` for the forecast start.
    pub vertex: Option<Vec<bool>>,
    pub recourse_value: f64,
    /// Linearised value the adversary step predicted for the next vertex.
    pub predicted: f64,
}

#[derive(Debug, Clone)]
pub struct BcdResult {
    pub worst: Realization,
    pub worst_vertex: Option<Vec<bool>>,
    pub worst_run: AdnRun,
    /// Recourse objective at the worst realization found.
    pub value: f64,
    pub steps: Vec<BcdStep>,
    /// False when the inner cap stopped the search before a vertex repeated.
    pub converged: bool,
}

/// Alternates recourse and adversary steps from the forecast until the
/// adversary proposes a vertex it has already visited.
pub fn solve_sp_bcd(
    s: &Scenario,
    blend: &BlendState,
    y: &FirstStage,
    bx: &UncertaintyBox,
    opts: RobustOptions,
) -> Result<BcdResult> {
    let forecast = bx.forecast().clone();
    let run = solve_sp1(s, blend, y, &forecast, opts)?;
    let mut best = (run.objective, forecast.clone(), None, run.clone());
    let mut steps = Vec::new();
    if bx.is_empty() {
        steps.push(BcdStep { iteration: 1, vertex: None, recourse_value: run.objective, predicted: run.objective });
        return Ok(BcdResult { worst: forecast, worst_vertex: None, worst_run: run, value: best.0, steps, converged: true });
    }
    let mut visited: Vec<Vec<bool>> = Vec::new();
    let (mut at, mut at_run, mut at_bits) = (forecast, run, None::<Vec<bool>>);
    let mut converged = false;
    for it in 1..=s.algorithm.bcd_max_iter {
        let (bits, predicted) = solve_sp2(bx, &at_run, &at);
        steps.push(BcdStep { iteration: it, vertex: at_bits.clone(), recourse_value: at_run.objective, predicted });
        if visited.contains(&bits) {
            converged = true;
            break;
        }
        visited.push(bits.clone());
        at = bx.vertex(&bits);
        at_run = solve_sp1(s, blend, y, &at, opts)?;
        at_bits = Some(bits);
        if at_run.objective > best.0 {
            best = (at_run.objective, at.clone(), at_bits.clone(), at_run.clone());
        }
    }
    let (value, worst, worst_vertex, worst_run) = best;
    Ok(BcdResult { worst, worst_vertex, worst_run, value, steps, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::bundled;
    use crate::robust::CaseMask;

    fn nominal(s: &Scenario) -> (BlendState, FirstStage, AdnRun) {
        let blend = BlendState::methane(&s.blend, s.horizon());
        let run = adn::solve_adn(s, &blend, AdnOptions::default()).unwrap();
        let y = FirstStage { quantities: crate::bargain::TradeQuantities::zero(s), baseline: run.schedule.battery_net() };
        (blend, y, run)
    }

    #[test]
    fn forecast_needs_no_adjustment() {
        let s = bundled("tiny4x3").unwrap();
        let (blend, y, det) = nominal(&s);
        let u = Realization::forecast(&s);
        let run = solve_sp1(&s, &blend, &y, &u, RobustOptions::default()).unwrap();
        assert!((run.objective - det.objective).abs() <= 1e-6 * det.objective.abs().max(1.0));
        let shed: f64 = run.schedule.shed.as_ref().unwrap().iter().flatten().sum();
        assert!(shed < 1e-6);
    }

    #[test]
    fn zero_radii_take_one_step() {
        let mut s = bundled("tiny4x3").unwrap();
        s.uncertainty.load_radius = 0.0;
        s.uncertainty.der_radius = 0.0;
        let (blend, y, det) = nominal(&s);
        let bx = UncertaintyBox::new(&s, CaseMask::Case4);
        let r = solve_sp_bcd(&s, &blend, &y, &bx, RobustOptions::default()).unwrap();
        assert_eq!(r.steps.len(), 1);
        assert!((r.value - det.objective).abs() <= 1e-6 * det.objective.abs().max(1.0));
    }

    #[test]
    fn adversary_lands_on_distinct_vertices() {
        let s = bundled("tiny4x3").unwrap();
        let (blend, y, _) = nominal(&s);
        let bx = UncertaintyBox::new(&s, CaseMask::Case4);
        let r = solve_sp_bcd(&s, &blend, &y, &bx, RobustOptions::default()).unwrap();
        assert!(r.converged);
        let seen: Vec<_> = r.steps.iter().filter_map(|st| st.vertex.clone()).collect();
        for (i, a) in seen.iter().enumerate() {
            assert!(seen[i + 1..].iter().all(|b| b != a));
        }
        assert!(bx.vertex_bits(&r.worst, 1e-12).is_some());
        // Loads high is always at least as costly.
        let bits = r.worst_vertex.unwrap();
        for (p, up) in bx.pairs.iter().zip(bits) {
            if p.kind == PairKind::Load {
                assert!(up);
            }
        }
    }
}
