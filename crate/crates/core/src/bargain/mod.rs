//! Nash bargaining between the gas and electricity networks.
//!
//! Bargaining runs in two stages. The quantity stage maximises the joint
//! benefit: payments cancel out of the sum of both costs, so it is a plain
//! cost minimisation over the traded quantities, solved by consensus ADMM
//! without either side revealing its network. The price stage then fixes the
//! quantities and maximises the sum of log surpluses over per-period prices.
//! Payments are pure transfers, so that optimum splits the joint surplus
//! equally.

mod admm;
mod price;
mod trade;

use crate::adn::{self, add_adn_block, AdnOptions, AdnRun, AdnTrade};
use crate::conic::{self, ConicProgram};
use crate::error::{Error, Result};
use crate::gdn::{self, add_gdn_block, GdnRun, GdnTrade};
use crate::netmodel::{BlendState, PriceMode, Scenario};

pub use admm::{run_consensus, Agent, AdmmConfig, AdmmMessage, AdmmResult, AdmmState, IterationRecord, IterationTrace};
pub use price::{price_bounds, reference_prices, solve_q2_admm, solve_q2_transfer_bisection, PriceBounds, Q2Outcome, SurplusTerms};
pub use trade::{TradeDecision, TradePrices, TradeQuantities};

/// Standalone costs of both entities with every trade fixed at zero.
#[derive(Debug, Clone)]
pub struct Disagreement {
    pub c0_e: f64,
    pub c0_g: f64,
    pub adn: AdnRun,
    pub gdn: GdnRun,
}

/// Solves both entities on their own; the fallback if bargaining fails.
pub fn solve_independent(s: &Scenario) -> Result<Disagreement> {
    let blend = BlendState::methane(&s.blend, s.horizon());
    let adn = adn::solve_adn(s, &blend, AdnOptions::default())?;
    let gdn = gdn::solve_gdn(s, &blend, GdnTrade::Zero)?;
    Ok(Disagreement { c0_e: adn.costs.total, c0_g: gdn.costs.total, adn, gdn })
}

/// Operating costs of both sides with the trade pinned, before payments.
#[derive(Debug, Clone)]
pub struct FixedTradeEvaluation {
    pub adn: AdnRun,
    pub gdn: GdnRun,
}

impl FixedTradeEvaluation {
    pub fn joint_cost(&self) -> f64 {
        self.adn.costs.total + self.gdn.costs.total
    }
}

pub fn evaluate_trade(s: &Scenario, blend: &BlendState, q: &TradeQuantities) -> Result<FixedTradeEvaluation> {
    let adn = adn::solve_adn(s, blend, AdnOptions { trade: AdnTrade::Fixed(q), ..Default::default() })?;
    let gdn = gdn::solve_gdn(s, blend, GdnTrade::Fixed(q))?;
    Ok(FixedTradeEvaluation { adn, gdn })
}

/// Consensus penalties and residual scales for the traded quantities,
/// flattened electrolyzers first.
pub fn quantity_admm_config(s: &Scenario, blend: &BlendState) -> AdmmConfig {
    let horizon = s.horizon();
    let dt = s.dt();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mu = mean(&s.market.electricity_price).max(1e-6);
    let eps = mean(&s.market.gas_price).max(1e-6);
    let a = &s.algorithm;
    let mut rho = Vec::new();
    let mut scale = Vec::new();
    for e in &s.devices.electrolyzers {
        for _ in 0..horizon {
            scale.push(e.rated_kw);
            rho.push(a.rho[0] * mu * dt / e.rated_kw);
        }
    }
    for f in &s.devices.fuel_cells {
        for t in 0..horizon {
            let cap = adn::max_fuel_volume(s, f, blend.hhv_mix[t]);
            scale.push(cap);
            rho.push(a.rho[1] * eps / cap);
        }
    }
    AdmmConfig {
        rho,
        scale,
        tol: a.admm_tol,
        max_iter: a.admm_max_iter,
        solver_tol: a.solver_tol,
        log_messages: true,
        label: "quantity",
    }
}

/// Rebuilds nested trade quantities from the flattened consensus vector.
pub fn unflatten(s: &Scenario, flat: &[f64]) -> TradeQuantities {
    let horizon = s.horizon();
    let ne = s.devices.electrolyzers.len();
    let mut it = flat.iter().copied();
    let mut take = |n: usize| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..horizon).map(|_| it.next().unwrap_or(0.0)).collect()).collect()
    };
    let p2g = take(ne);
    let g2p = take(s.devices.fuel_cells.len());
    TradeQuantities { p2g, g2p }.clamp_nonnegative()
}

/// The two private agents of the quantity stage.
pub fn quantity_agents(s: &Scenario, blend: &BlendState) -> (Agent, Agent) {
    let mut pa = ConicProgram::new();
    let ab = add_adn_block(&mut pa, s, blend, AdnOptions { trade: AdnTrade::Free, ..Default::default() });
    pa.minimize(ab.cost.objective());
    let coupled_a = ab.p2g.iter().chain(&ab.g2p).flatten().copied().collect();

    let mut pg = ConicProgram::new();
    let gb = add_gdn_block(&mut pg, s, blend, GdnTrade::Free);
    pg.minimize(gb.cost.objective());
    let coupled_g = gb.p2g.iter().chain(&gb.g2p).flatten().copied().collect();
    (
        Agent { name: "ADN quantity subproblem", program: pa, coupled: coupled_a },
        Agent { name: "GDN quantity subproblem", program: pg, coupled: coupled_g },
    )
}

#[derive(Debug, Clone)]
pub struct Q1Outcome {
    pub quantities: TradeQuantities,
    pub evaluation: FixedTradeEvaluation,
    pub state: AdmmState,
    pub trace: IterationTrace,
}

/// Quantity stage by consensus ADMM, optionally warm-started.
pub fn solve_q1_admm(s: &Scenario, blend: &BlendState, warm: Option<AdmmState>) -> Result<Q1Outcome> {
    let (adn_agent, gdn_agent) = quantity_agents(s, blend);
    let cfg = quantity_admm_config(s, blend);
    let start = warm.unwrap_or_else(|| AdmmState::cold(vec![0.0; cfg.rho.len()]));
    let res = run_consensus(&adn_agent, &gdn_agent, &cfg, start)?;
    let quantities = unflatten(s, &res.state.z);
    let evaluation = evaluate_trade(s, blend, &quantities)?;
    Ok(Q1Outcome { quantities, evaluation, state: res.state, trace: res.trace })
}

/// Quantity stage as one centralised program; the reference the ADMM result
/// is checked against.
#[derive(Debug, Clone)]
pub struct CentralQ1 {
    pub quantities: TradeQuantities,
    /// Joint operating cost at the optimum, penalties excluded.
    pub joint_cost: f64,
    pub objective: f64,
}

pub fn solve_q1_central(s: &Scenario, blend: &BlendState) -> Result<CentralQ1> {
    let mut p = ConicProgram::new();
    let gb = add_gdn_block(&mut p, s, blend, GdnTrade::Free);
    let ab = add_adn_block(
        &mut p,
        s,
        blend,
        AdnOptions { trade: AdnTrade::Shared { p2g: &gb.p2g, g2p: &gb.g2p }, ..Default::default() },
    );
    p.minimize(gb.cost.objective() + ab.cost.objective());
    let sol = conic::solve(&p, s.algorithm.solver_tol)?.require_optimal("centralised quantity stage")?;
    let grab = |v: &Vec<Vec<conic::Var>>| -> Vec<Vec<f64>> {
        v.iter().map(|r| r.iter().map(|&x| sol.value(x)).collect()).collect()
    };
    let quantities = TradeQuantities { p2g: grab(&gb.p2g), g2p: grab(&gb.g2p) }.clamp_nonnegative();
    let joint_cost = sol.eval(&gb.cost.operating()) + sol.eval(&ab.cost.operating());
    Ok(CentralQ1 { quantities, joint_cost, objective: sol.objective })
}

/// Product of the two surpluses.
pub fn nash_product(o: &BargainOutcome) -> f64 {
    o.delta_e * o.delta_g
}

#[derive(Debug, Clone)]
pub struct BargainOutcome {
    pub c0_e: f64,
    pub c0_g: f64,
    pub c_e: f64,
    pub c_g: f64,
    pub delta_e: f64,
    pub delta_g: f64,
    /// Joint surplus before the split.
    pub surplus: f64,
    /// Net payment from the ADN to the GDN.
    pub transfer: f64,
    pub decision: TradeDecision,
    pub adn: AdnRun,
    pub gdn: GdnRun,
    pub disagreement: Disagreement,
    pub quantity_trace: IterationTrace,
    pub price_trace: IterationTrace,
    /// Largest hydrogen-fraction change per blend round.
    pub blend_history: Vec<f64>,
    /// Why no trade happened, when it did not.
    pub no_bargain: Option<String>,
}

impl BargainOutcome {
    pub(crate) fn without_trade(s: &Scenario, d: Disagreement, reason: String, blend_history: Vec<f64>) -> BargainOutcome {
        BargainOutcome {
            c0_e: d.c0_e,
            c0_g: d.c0_g,
            c_e: d.c0_e,
            c_g: d.c0_g,
            delta_e: 0.0,
            delta_g: 0.0,
            surplus: 0.0,
            transfer: 0.0,
            decision: TradeDecision::none(s),
            adn: d.adn.clone(),
            gdn: d.gdn.clone(),
            disagreement: d,
            quantity_trace: IterationTrace::default(),
            price_trace: IterationTrace::default(),
            blend_history,
            no_bargain: Some(reason),
        }
    }
}

/// Margin kept between each log argument and zero.
pub fn log_margin(c0: f64) -> f64 {
    1e-6 * c0.abs().max(1.0)
}

/// Settles prices for fixed quantities and assembles the outcome. Used by the
/// deterministic and robust pipelines alike.
#[allow(clippy::too_many_arguments)]
pub fn settle(
    s: &Scenario,
    blend: &BlendState,
    disagreement: Disagreement,
    quantities: TradeQuantities,
    terms: SurplusTerms,
    mut adn_run: AdnRun,
    mut gdn_run: GdnRun,
    quantity_trace: IterationTrace,
    blend_history: Vec<f64>,
) -> Result<BargainOutcome> {
    let surplus = terms.c0_e + terms.c0_g - terms.a_e - terms.a_g;
    let margin = log_margin(terms.c0_e).max(log_margin(terms.c0_g));
    if surplus <= 2.0 * margin || quantities.is_zero(1e-9) {
        let mut o = BargainOutcome::without_trade(
            s,
            disagreement,
            format!("joint surplus {surplus:.6e} leaves nothing to share"),
            blend_history,
        );
        o.quantity_trace = quantity_trace;
        return Ok(o);
    }
    let q2 = match s.algorithm.price_mode {
        PriceMode::ExpCone => solve_q2_admm(s, blend, &quantities, &terms)?,
        PriceMode::TransferBisection => solve_q2_transfer_bisection(s, blend, &quantities, &terms)?,
    };
    let transfer = q2.prices.transfer(&quantities, s.dt());
    let c_e = terms.a_e + transfer;
    let c_g = terms.a_g - transfer;
    adn_run.costs = adn::adn_cost(s, &adn_run.schedule, Some(&q2.prices));
    gdn_run.costs = gdn::gdn_cost(s, &gdn_run.schedule, Some(&q2.prices));
    Ok(BargainOutcome {
        c0_e: terms.c0_e,
        c0_g: terms.c0_g,
        c_e,
        c_g,
        delta_e: terms.c0_e - c_e,
        delta_g: terms.c0_g - c_g,
        surplus,
        transfer,
        decision: TradeDecision { quantities, prices: q2.prices },
        adn: adn_run,
        gdn: gdn_run,
        disagreement,
        quantity_trace,
        price_trace: q2.trace,
        blend_history,
        no_bargain: None,
    })
}

/// Full deterministic bargaining: disagreement point, quantity stage inside
/// the blend fixed point, then the price stage.
pub fn cooperate(s: &Scenario) -> Result<BargainOutcome> {
    let disagreement = solve_independent(s)?;
    if !s.trading_enabled() {
        let reason = format!("trading is disabled in {}", s.variant.as_str());
        return Ok(BargainOutcome::without_trade(s, disagreement, reason, Vec::new()));
    }
    let (q1, blend, history) = quantity_stage_blended(s)?;
    let terms = SurplusTerms {
        c0_e: disagreement.c0_e,
        c0_g: disagreement.c0_g,
        a_e: q1.evaluation.adn.costs.total,
        a_g: q1.evaluation.gdn.costs.total,
    };
    settle(s, &blend, disagreement, q1.quantities, terms, q1.evaluation.adn, q1.evaluation.gdn, q1.trace, history)
}

/// Quantity stage iterated with the blend fixed point. Each round reuses the
/// previous consensus state as a warm start.
pub fn quantity_stage_blended(s: &Scenario) -> Result<(Q1Outcome, BlendState, Vec<f64>)> {
    let mut blend = BlendState::methane(&s.blend, s.horizon());
    let mut warm = None;
    let mut history = Vec::new();
    for _ in 0..s.algorithm.blend_max_iter {
        let q1 = solve_q1_admm(s, &blend, warm)?;
        let next = q1.evaluation.gdn.schedule.implied_blend(s)?;
        let change = next.max_change(&blend);
        history.push(change);
        if change <= s.algorithm.blend_tol {
            return Ok((q1, blend, history));
        }
        warm = Some(q1.state.clone());
        blend = next;
    }
    Err(Error::NonConvergence {
        what: "blend fixed point".into(),
        detail: format!("hydrogen fraction still moving after {} rounds: {history:?}", history.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{bundled, Variant};

    #[test]
    fn zero_load_disagreement() {
        let mut s = bundled("tiny4x3").unwrap();
        for n in &mut s.gas.nodes {
            n.load.clear();
        }
        for b in &mut s.power.buses {
            b.p_load.clear();
            b.q_load.clear();
        }
        let horizon = s.horizon();
        for d in &mut s.devices.ders {
            d.p_forecast = vec![0.0; horizon];
            d.q_injection.clear();
        }
        let d = solve_independent(&s).unwrap();
        assert!(d.c0_e.abs() < 1e-6);
        let ht: f64 = s.devices.hydrogen_tanks.iter().map(|h| adn::tank_cost(&s, h)).sum();
        assert!((d.c0_g - ht).abs() < 1e-6 * ht.max(1.0));
    }

    #[test]
    fn model3_cooperation_is_the_independent_run() {
        let s = bundled("tiny4x3").unwrap().with_variant(Variant::Model3);
        let o = cooperate(&s).unwrap();
        let d = solve_independent(&s).unwrap();
        assert!(o.decision.quantities.is_zero(0.0));
        assert_eq!(o.c_e, d.c0_e);
        assert_eq!(o.c_g, d.c0_g);
        assert_eq!(nash_product(&o), 0.0);
    }

    #[test]
    fn unprofitable_conversion_trades_nothing() {
        let mut s = bundled("tiny4x3").unwrap();
        // Power at 0.03 $/kWh is worth more than the gas an electrolyzer makes
        // from it (about 0.019 $/kWh at 0.30 $/m³) and cheaper than fuel-cell
        // power (about 0.05 $/kWh), so neither direction pays.
        s.market.gas_price = vec![0.30; s.horizon()];
        s.market.electricity_price = vec![0.03; s.horizon()];
        let horizon = s.horizon();
        for d in &mut s.devices.ders {
            d.p_forecast = vec![0.0; horizon];
        }
        let o = cooperate(&s).unwrap();
        assert!(o.decision.quantities.is_zero(1e-2), "{:?}", o.decision.quantities);
        assert!(o.surplus.abs() < 1e-3 * o.c0_e.abs().max(1.0));
    }
}
