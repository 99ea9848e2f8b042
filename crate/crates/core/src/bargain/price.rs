//! Price stage: with quantities fixed, prices only move money between the
//! two sides, so the log-sum objective settles on an equal surplus split.

use super::admm::{run_consensus, Agent, AdmmConfig, AdmmState, IterationRecord, IterationTrace};
use super::trade::{TradePrices, TradeQuantities};
use crate::adn::conversion_wear_cost;
use crate::conic::{ConicProgram, LinExpr, Var};
use crate::error::{Error, Result};
use crate::netmodel::{BlendState, Scenario};

/// Disagreement costs and operating costs under the agreed quantities,
/// payments excluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurplusTerms {
    pub c0_e: f64,
    pub c0_g: f64,
    pub a_e: f64,
    pub a_g: f64,
}

impl SurplusTerms {
    pub fn surplus(&self) -> f64 {
        self.c0_e + self.c0_g - self.a_e - self.a_g
    }

    /// (ΔE, ΔG) after the ADN pays `transfer` to the GDN.
    pub fn split(&self, transfer: f64) -> (f64, f64) {
        (self.c0_e - self.a_e - transfer, self.c0_g - self.a_g + transfer)
    }

    /// The transfer at which both sides gain the same.
    pub fn equal_split_transfer(&self) -> f64 {
        0.5 * ((self.c0_e - self.a_e) - (self.c0_g - self.a_g))
    }
}

/// Commodity reference prices per period: the gas price for blended gas and
/// the methane value of the hydrogen a kWh of electrolysis produces.
pub fn reference_prices(s: &Scenario) -> TradePrices {
    let ets = &s.devices.electrolyzers;
    let eta = if ets.is_empty() { 1.0 } else { ets.iter().map(|e| e.efficiency).sum::<f64>() / ets.len() as f64 };
    let k = eta * s.blend.mj_per_kwh / s.blend.hhv_ch4;
    TradePrices {
        p2g: s.market.gas_price.iter().map(|e| e * k).collect(),
        g2p: s.market.gas_price.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceBounds {
    pub upper: TradePrices,
}

/// Box on the prices: nonnegative, at most `price_cap_factor` times the
/// reference, and for gas sold to fuel cells never above the price at which
/// fuel-cell power stops undercutting grid power in that period.
pub fn price_bounds(s: &Scenario, blend: &BlendState, q: &TradeQuantities) -> PriceBounds {
    let cap = s.algorithm.price_cap_factor;
    let r = reference_prices(s);
    let mut upper = TradePrices {
        p2g: r.p2g.iter().map(|v| v * cap).collect(),
        g2p: r.g2p.iter().map(|v| v * cap).collect(),
    };
    for t in 0..s.horizon() {
        for (k, f) in s.devices.fuel_cells.iter().enumerate() {
            if q.g2p[k][t] > 0.0 {
                let be = g2p_break_even(s, blend, f, t);
                upper.g2p[t] = upper.g2p[t].min(be.max(0.0));
            }
        }
    }
    PriceBounds { upper }
}

/// Gas price ($/m³) at which a fuel cell's power costs exactly the grid price.
pub fn g2p_break_even(s: &Scenario, blend: &BlendState, f: &crate::netmodel::FuelCell, t: usize) -> f64 {
    let wear = conversion_wear_cost(f.power_cost, f.rated_kw, f.lifetime_h);
    let kwh_per_m3 = blend.hhv_mix[t] * f.efficiency / s.blend.mj_per_kwh;
    // Kept a hair below break-even so trading periods stay strictly rational.
    (s.market.electricity_price[t] - wear) * kwh_per_m3 * (1.0 - 1e-6)
}

#[derive(Debug, Clone)]
pub struct Q2Outcome {
    pub prices: TradePrices,
    pub trace: IterationTrace,
}

fn flat(p: &TradePrices) -> Vec<f64> {
    p.p2g.iter().chain(&p.g2p).copied().collect()
}

fn unflat(v: &[f64], horizon: usize) -> TradePrices {
    TradePrices { p2g: v[..horizon].to_vec(), g2p: v[horizon..].to_vec() }
}

/// Transfer expression over price variables laid out p2g first.
fn transfer_expr(vars: &[Var], q: &TradeQuantities, dt: f64) -> LinExpr {
    let horizon = vars.len() / 2;
    let mut e = LinExpr::zero();
    for t in 0..horizon {
        e.add_term(vars[t], -q.p2g_total(t) * dt);
        e.add_term(vars[horizon + t], q.g2p_total(t));
    }
    e
}

/// One side's price subproblem. The surplus inside the logarithm is measured
/// in units of `unit` dollars; rescaling a log argument shifts the objective
/// by a constant only, and keeps the exponential cone well scaled.
#[allow(clippy::too_many_arguments)]
fn price_agent(
    name: &'static str,
    s: &Scenario,
    q: &TradeQuantities,
    bounds: &PriceBounds,
    own: f64,
    sign: f64,
    margin: f64,
    unit: f64,
) -> Agent {
    let horizon = s.horizon();
    let mut p = ConicProgram::new();
    let upper = flat(&bounds.upper);
    let vars: Vec<Var> = (0..2 * horizon).map(|k| p.bounded(format!("price[{k}]"), 0.0, upper[k])).collect();
    // Surplus of this side: own gain before payment, ± the transfer.
    let arg = (transfer_expr(&vars, q, s.dt()) * sign + own) * (1.0 / unit);
    p.add_log_utility(1.0, arg, margin / unit);
    Agent { name, program: p, coupled: vars }
}

/// Price stage by consensus ADMM on the two log surpluses.
pub fn solve_q2_admm(s: &Scenario, blend: &BlendState, q: &TradeQuantities, terms: &SurplusTerms) -> Result<Q2Outcome> {
    let horizon = s.horizon();
    let bounds = price_bounds(s, blend, q);
    let margin = super::log_margin(terms.c0_e).max(super::log_margin(terms.c0_g));
    let half = (0.5 * terms.surplus()).max(margin);
    let adn = price_agent("ADN price subproblem", s, q, &bounds, terms.c0_e - terms.a_e, -1.0, margin, half);
    let gdn = price_agent("GDN price subproblem", s, q, &bounds, terms.c0_g - terms.a_g, 1.0, margin, half);

    let dt = s.dt();
    let qmax_p = (0..horizon).map(|t| q.p2g_total(t) * dt).fold(0.0, f64::max);
    let qmax_g = (0..horizon).map(|t| q.g2p_total(t)).fold(0.0, f64::max);
    let qref = qmax_p.max(qmax_g);
    let rho_of = |w: f64, qm: f64| w * (if qm > 0.0 { qm } else { qref }).powi(2) / (half * half);
    let a = &s.algorithm;
    let upper = flat(&bounds.upper);
    let reference = flat(&reference_prices(s));
    let mut rho = vec![rho_of(a.rho[2], qmax_p); horizon];
    rho.extend(vec![rho_of(a.rho[3], qmax_g); horizon]);
    let cfg = AdmmConfig {
        rho,
        scale: reference.iter().map(|r| r * a.price_cap_factor).map(|v| v.max(1e-9)).collect(),
        tol: a.admm_price_tol,
        max_iter: a.admm_max_iter,
        solver_tol: a.solver_tol,
        log_messages: true,
        label: "price",
    };
    let start: Vec<f64> = reference.iter().zip(&upper).map(|(r, u)| r.min(*u)).collect();
    let res = run_consensus(&adn, &gdn, &cfg, AdmmState::cold(start))?;
    let z: Vec<f64> = res.state.z.iter().zip(&upper).map(|(v, u)| v.clamp(0.0, *u)).collect();
    Ok(Q2Outcome { prices: unflat(&z, horizon), trace: res.trace })
}

/// Price stage without exponential cones: bisection for the equal-split
/// transfer along a path from the reference prices towards the corners of
/// the price box. Every price moves by the same fraction of its distance to
/// the corner, so no single period absorbs the whole transfer.
pub fn solve_q2_transfer_bisection(
    s: &Scenario,
    blend: &BlendState,
    q: &TradeQuantities,
    terms: &SurplusTerms,
) -> Result<Q2Outcome> {
    let horizon = s.horizon();
    let dt = s.dt();
    let bounds = price_bounds(s, blend, q);
    let r = reference_prices(s);
    // Path through the box on which the transfer rises monotonically:
    // λ = −1 is the cheapest corner for the ADN (power dear, gas free),
    // λ = 0 the reference prices clamped into the box, λ = 1 the dearest.
    let centre = TradePrices {
        p2g: (0..horizon).map(|t| r.p2g[t].clamp(0.0, bounds.upper.p2g[t])).collect(),
        g2p: (0..horizon).map(|t| r.g2p[t].clamp(0.0, bounds.upper.g2p[t])).collect(),
    };
    let cheapest = TradePrices { p2g: bounds.upper.p2g.clone(), g2p: vec![0.0; horizon] };
    let dearest = TradePrices { p2g: vec![0.0; horizon], g2p: bounds.upper.g2p.clone() };
    let at = |lambda: f64| {
        let (end, w) = if lambda < 0.0 { (&cheapest, -lambda) } else { (&dearest, lambda) };
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect();
        TradePrices { p2g: mix(&centre.p2g, &end.p2g), g2p: mix(&centre.g2p, &end.g2p) }
    };
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let gap = |lambda: f64| {
        let (de, dg) = terms.split(at(lambda).transfer(q, dt));
        de - dg
    };
    if gap(lo) < 0.0 || gap(hi) > 0.0 {
        return Err(Error::NonConvergence {
            what: "transfer bisection".into(),
            detail: format!(
                "equal-split transfer {:.6e} not reachable within the price box",
                terms.equal_split_transfer()
            ),
        });
    }
    let mut trace = IterationTrace { label: "transfer-bisection".into(), ..Default::default() };
    let scale = terms.surplus().abs().max(1e-12);
    for it in 1..=200 {
        let mid = 0.5 * (lo + hi);
        let g = gap(mid);
        trace.records.push(IterationRecord {
            iteration: it,
            primal_residual: g.abs() / scale,
            dual_residual: (hi - lo).abs(),
            adn_objective: terms.split(at(mid).transfer(q, dt)).0,
            gdn_objective: terms.split(at(mid).transfer(q, dt)).1,
        });
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 || g.abs() <= 1e-12 * scale {
            break;
        }
    }
    Ok(Q2Outcome { prices: at(0.5 * (lo + hi)), trace })
}
