//! Gas distribution network with hydrogen blending.
//!
//! Flows follow the tree orientation from the source, so each Weymouth
//! relation becomes the cone `‖(G/Δt, c·w_down)‖ ≤ c·w_up` in plain pressures.
//! Gas volumes are per period. Loads enter as methane-equivalent volumes
//! converted through the blend fixed for the solve.

use crate::adn::{electrolyzer_yield, max_fuel_volume, tank_cost};
use crate::bargain::{TradePrices, TradeQuantities};
use crate::conic::{self, ConicProgram, ConicSolution, LinExpr, Var};
use crate::error::{Error, Result};
use crate::netmodel::{BlendState, Scenario};

/// How the block sees the traded quantities.
#[derive(Debug, Clone, Copy)]
pub enum GdnTrade<'a> {
    Zero,
    Fixed(&'a TradeQuantities),
    Free,
}

#[derive(Debug, Clone, Default)]
pub struct GdnCostExprs {
    pub hgn: LinExpr,
    pub et: LinExpr,
    pub ht: f64,
    pub pressure_penalty: LinExpr,
}

impl GdnCostExprs {
    pub fn operating(&self) -> LinExpr {
        self.hgn.clone() + self.et.clone() + self.ht
    }

    pub fn objective(&self) -> LinExpr {
        self.operating() + self.pressure_penalty.clone()
    }
}

#[derive(Debug, Clone)]
pub struct GdnBlock {
    pub source: Vec<Var>,
    /// `[pipe][period]`, oriented away from the source.
    pub flow: Vec<Vec<Var>>,
    pub pressure: Vec<Vec<Var>>,
    /// Net hydrogen injection per node, `[node][period]` (empty rows for
    /// nodes without hydrogen devices).
    pub injection: Vec<Vec<LinExpr>>,
    pub tank_flow: Vec<Vec<Var>>,
    pub tank_level: Vec<Vec<Var>>,
    pub p2g: Vec<Vec<Var>>,
    pub g2p: Vec<Vec<Var>>,
    pub cost: GdnCostExprs,
}

/// Appends the GDN scheduling block to `p`.
pub fn add_gdn_block(p: &mut ConicProgram, s: &Scenario, blend: &BlendState, trade: GdnTrade<'_>) -> GdnBlock {
    let horizon = s.horizon();
    let dt = s.dt();
    let tree = s.gas_tree();
    let nn = s.gas.nodes.len();
    let np = s.gas.pipes.len();
    let owns_h2 = s.gdn_owns_hydrogen();
    let mut cost = GdnCostExprs::default();

    let source: Vec<Var> = (0..horizon).map(|t| p.nonneg(format!("source[{t}]"))).collect();
    for t in 0..horizon {
        cost.hgn.add_term(source[t], s.market.gas_price[t]);
    }
    let flow: Vec<Vec<Var>> =
        (0..np).map(|e| (0..horizon).map(|t| p.nonneg(format!("flow[{e}][{t}]"))).collect()).collect();
    let pressure: Vec<Vec<Var>> = s
        .gas
        .nodes
        .iter()
        .map(|n| (0..horizon).map(|t| p.bounded(format!("pressure[{}][{t}]", n.id), n.pressure_min, n.pressure_max)).collect())
        .collect();

    let tau = s.pressure_penalty();
    for e in 0..np {
        let c = s.gas.pipes[e].weymouth;
        let (m, n) = (tree.upstream(e), tree.downstream(e));
        for t in 0..horizon {
            p.soc(vec![flow[e][t] * (1.0 / dt), pressure[n][t] * c], pressure[m][t] * c, "weymouth");
            cost.pressure_penalty.add_term(pressure[m][t], tau).add_term(pressure[n][t], -tau);
        }
    }

    // Trade quantities; the GDN copy of each is its own variable so the ADMM
    // local problems stay separate.
    let (p2g, g2p) = {
        let p2g: Vec<Vec<Var>> = s
            .devices
            .electrolyzers
            .iter()
            .map(|e| (0..horizon).map(|t| p.bounded(format!("gdn.p2g[{}][{t}]", e.id), 0.0, e.rated_kw)).collect())
            .collect();
        let g2p: Vec<Vec<Var>> = s
            .devices
            .fuel_cells
            .iter()
            .map(|f| {
                (0..horizon)
                    .map(|t| p.bounded(format!("gdn.g2p[{}][{t}]", f.id), 0.0, max_fuel_volume(s, f, blend.hhv_mix[t])))
                    .collect()
            })
            .collect();
        let fixed = match trade {
            GdnTrade::Zero => Some(TradeQuantities::zero(s)),
            GdnTrade::Fixed(q) => Some(q.clone()),
            GdnTrade::Free => None,
        };
        let mut fixed = fixed;
        if !owns_h2 {
            // Without electrolyzers the GDN cannot buy electricity.
            let q = fixed.get_or_insert_with(|| TradeQuantities::zero(s));
            q.p2g = TradeQuantities::zero(s).p2g;
        }
        if let Some(q) = &fixed {
            for (vars, vals) in p2g.iter().zip(&q.p2g) {
                for (&v, &x) in vars.iter().zip(vals) {
                    p.fix(v, x);
                }
            }
        }
        if let (Some(q), false) = (&fixed, matches!(trade, GdnTrade::Free)) {
            for (vars, vals) in g2p.iter().zip(&q.g2p) {
                for (&v, &x) in vars.iter().zip(vals) {
                    p.fix(v, x);
                }
            }
        }
        (p2g, g2p)
    };

    // Electrolyzer output split between injection and tanks at the same node.
    let mut injection = vec![Vec::new(); nn];
    let mut tank_flow = Vec::new();
    let mut tank_level = Vec::new();
    if owns_h2 {
        for h in &s.devices.hydrogen_tanks {
            tank_flow.push((0..horizon).map(|t| p.free(format!("tank_flow[{}][{t}]", h.id))).collect::<Vec<_>>());
            tank_level
                .push((0..=horizon).map(|t| p.bounded(format!("tank[{}][{t}]", h.id), 0.0, h.capacity_m3)).collect::<Vec<_>>());
            cost.ht += tank_cost(s, h);
        }
        for (k, _) in s.devices.hydrogen_tanks.iter().enumerate() {
            for t in 0..horizon {
                p.eq(tank_level[k][t + 1] - tank_level[k][t] - tank_flow[k][t], 0.0, "tank-level");
            }
            p.eq(tank_level[k][horizon] - tank_level[k][0], 0.0, "tank-level");
        }
        for n in 0..nn {
            let id = &s.gas.nodes[n].id;
            let ets: Vec<usize> =
                (0..s.devices.electrolyzers.len()).filter(|&k| &s.devices.electrolyzers[k].gas_node == id).collect();
            let tanks: Vec<usize> =
                (0..s.devices.hydrogen_tanks.len()).filter(|&k| &s.devices.hydrogen_tanks[k].gas_node == id).collect();
            if ets.is_empty() && tanks.is_empty() {
                continue;
            }
            for t in 0..horizon {
                let mut inj = LinExpr::zero();
                for &k in &ets {
                    inj.add_term(p2g[k][t], electrolyzer_yield(s, s.devices.electrolyzers[k].efficiency));
                }
                for &k in &tanks {
                    inj.add_term(tank_flow[k][t], -1.0);
                }
                p.ge(inj.clone(), 0.0, "hydrogen");
                injection[n].push(inj);
            }
        }
        for (k, e) in s.devices.electrolyzers.iter().enumerate() {
            let w = crate::adn::conversion_wear_cost(e.power_cost, e.rated_kw, e.lifetime_h) * dt;
            for t in 0..horizon {
                cost.et.add_term(p2g[k][t], w);
            }
        }
    }

    // Blend cap: injected hydrogen stays below the permitted fraction of the
    // total supplied gas.
    let omega_max = s.blend.omega_max;
    for t in 0..horizon {
        let mut h2 = LinExpr::zero();
        for inj in injection.iter().filter(|v| !v.is_empty()) {
            h2.add_expr(&inj[t], 1.0);
        }
        if !h2.terms.is_empty() {
            p.le(h2 * (1.0 - omega_max) - source[t] * omega_max, 0.0, "blend-cap");
        }
    }

    // Nodal balance with loads on the right-hand side.
    let src = tree.root;
    for t in 0..horizon {
        let mut bal: Vec<LinExpr> = vec![LinExpr::zero(); nn];
        for e in 0..np {
            bal[tree.downstream(e)].add_term(flow[e][t], 1.0);
            bal[tree.upstream(e)].add_term(flow[e][t], -1.0);
        }
        bal[src].add_term(source[t], 1.0);
        for n in 0..nn {
            if let Some(inj) = injection[n].get(t) {
                bal[n].add_expr(inj, 1.0);
            }
        }
        for (k, f) in s.devices.fuel_cells.iter().enumerate() {
            bal[s.gas_idx(&f.gas_node)].add_term(g2p[k][t], -1.0);
        }
        for (n, expr) in bal.into_iter().enumerate() {
            p.eq(expr, blend.equivalent_load(s.gas_load(n, t), t), "gas-balance");
        }
    }

    GdnBlock { source, flow, pressure, injection, tank_flow, tank_level, p2g, g2p, cost }
}

/// Solved GDN schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct GdnSchedule {
    pub source: Vec<f64>,
    pub flow: Vec<Vec<f64>>,
    pub pressure: Vec<Vec<f64>>,
    /// Net hydrogen injection per period summed over nodes, m³.
    pub hydrogen: Vec<f64>,
    /// Electrolyzer hydrogen output, `[electrolyzer][period]`, m³.
    pub et_output: Vec<Vec<f64>>,
    pub tank_flow: Vec<Vec<f64>>,
    pub tank_level: Vec<Vec<f64>>,
    pub trade: TradeQuantities,
    pub blend: BlendState,
}

fn grab(sol: &ConicSolution, v: &[Vec<Var>]) -> Vec<Vec<f64>> {
    v.iter().map(|row| row.iter().map(|&x| sol.value(x)).collect()).collect()
}

impl GdnSchedule {
    pub fn extract(s: &Scenario, block: &GdnBlock, sol: &ConicSolution, blend: &BlendState) -> GdnSchedule {
        let horizon = s.horizon();
        let hydrogen = (0..horizon)
            .map(|t| block.injection.iter().filter_map(|v| v.get(t)).map(|e| sol.eval(e)).sum::<f64>().max(0.0))
            .collect();
        let trade = TradeQuantities { p2g: grab(sol, &block.p2g), g2p: grab(sol, &block.g2p) }.clamp_nonnegative();
        let et_output = s
            .devices
            .electrolyzers
            .iter()
            .enumerate()
            .map(|(k, e)| trade.p2g[k].iter().map(|p| p * electrolyzer_yield(s, e.efficiency)).collect())
            .collect();
        GdnSchedule {
            source: block.source.iter().map(|&v| sol.value(v).max(0.0)).collect(),
            flow: grab(sol, &block.flow),
            pressure: grab(sol, &block.pressure),
            hydrogen,
            et_output,
            tank_flow: grab(sol, &block.tank_flow),
            tank_level: grab(sol, &block.tank_level),
            trade,
            blend: blend.clone(),
        }
    }

    /// Blend implied by this schedule's injected volumes.
    pub fn implied_blend(&self, s: &Scenario) -> Result<BlendState> {
        BlendState::from_volumes(&s.blend, &self.hydrogen, &self.source)
    }

    /// Largest nodal balance residual relative to the largest throughput.
    pub fn balance_residual(&self, s: &Scenario) -> f64 {
        let tree = s.gas_tree();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 1e-9;
        let nn = s.gas.nodes.len();
        for t in 0..self.source.len() {
            let mut bal = vec![0.0; nn];
            for e in 0..self.flow.len() {
                bal[tree.downstream(e)] += self.flow[e][t];
                bal[tree.upstream(e)] -= self.flow[e][t];
                scale = scale.max(self.flow[e][t].abs());
            }
            bal[tree.root] += self.source[t];
            scale = scale.max(self.source[t]);
            for (k, e) in s.devices.electrolyzers.iter().enumerate() {
                if s.gdn_owns_hydrogen() {
                    bal[s.gas_idx(&e.gas_node)] += self.et_output[k][t];
                }
            }
            for (k, h) in s.devices.hydrogen_tanks.iter().enumerate() {
                if let Some(f) = self.tank_flow.get(k) {
                    bal[s.gas_idx(&h.gas_node)] -= f[t];
                }
            }
            for (k, f) in s.devices.fuel_cells.iter().enumerate() {
                bal[s.gas_idx(&f.gas_node)] -= self.trade.g2p[k][t];
            }
            for (n, b) in bal.iter().enumerate() {
                worst = worst.max((b - self.blend.equivalent_load(s.gas_load(n, t), t)).abs());
            }
        }
        worst / scale
    }
}

/// Max relative Weymouth slack `(c·w_up − ‖(G/Δt, c·w_down)‖)/(c·w_up)`.
pub fn weymouth_tightness(s: &Scenario, sched: &GdnSchedule) -> f64 {
    let tree = s.gas_tree();
    let dt = s.dt();
    let mut worst: f64 = 0.0;
    for (e, pipe) in s.gas.pipes.iter().enumerate() {
        let (m, n) = (tree.upstream(e), tree.downstream(e));
        for t in 0..sched.source.len() {
            let rhs = pipe.weymouth * sched.pressure[m][t];
            let norm = (sched.flow[e][t] / dt).hypot(pipe.weymouth * sched.pressure[n][t]);
            worst = worst.max((rhs - norm) / rhs);
        }
    }
    worst
}

/// GDN cost stack: `total = hgn + p2g + et + ht − g2p`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GdnCostBreakdown {
    pub total: f64,
    pub hgn: f64,
    /// Payment for electricity bought for electrolyzers.
    pub p2g: f64,
    pub et: f64,
    pub ht: f64,
    /// Revenue from gas sold to fuel cells.
    pub g2p: f64,
    pub pressure_penalty: f64,
}

pub fn gdn_cost(s: &Scenario, sched: &GdnSchedule, prices: Option<&TradePrices>) -> GdnCostBreakdown {
    let dt = s.dt();
    let horizon = sched.source.len();
    let hgn = (0..horizon).map(|t| s.market.gas_price[t] * sched.source[t]).sum();
    let (et, ht) = if s.gdn_owns_hydrogen() {
        let et = s
            .devices
            .electrolyzers
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let w = crate::adn::conversion_wear_cost(e.power_cost, e.rated_kw, e.lifetime_h);
                sched.trade.p2g[k].iter().map(|p| w * p * dt).sum::<f64>()
            })
            .sum();
        (et, s.devices.hydrogen_tanks.iter().map(|h| tank_cost(s, h)).sum())
    } else {
        (0.0, 0.0)
    };
    let (p2g, g2p) = match prices {
        Some(pr) => (
            (0..horizon).map(|t| pr.p2g[t] * sched.trade.p2g_total(t) * dt).sum(),
            (0..horizon).map(|t| pr.g2p[t] * sched.trade.g2p_total(t)).sum(),
        ),
        None => (0.0, 0.0),
    };
    let tree = s.gas_tree();
    let tau = s.pressure_penalty();
    let pressure_penalty = (0..s.gas.pipes.len())
        .map(|e| {
            let (m, n) = (tree.upstream(e), tree.downstream(e));
            (0..horizon).map(|t| tau * (sched.pressure[m][t] - sched.pressure[n][t])).sum::<f64>()
        })
        .sum();
    GdnCostBreakdown { total: hgn + p2g + et + ht - g2p, hgn, p2g, et, ht, g2p, pressure_penalty }
}

/// Re-solves node pressures with every flow held at its scheduled value and
/// the pressure penalty as the only objective. The interior-point solve of
/// the full problem leaves Weymouth cones slack by roughly the ratio of
/// solver tolerance to penalty weight; this pass removes that slack.
pub fn polish_pressures(s: &Scenario, sched: &mut GdnSchedule) -> Result<()> {
    let horizon = sched.source.len();
    let dt = s.dt();
    let tree = s.gas_tree();
    let mut p = ConicProgram::new();
    let pressure: Vec<Vec<Var>> = s
        .gas
        .nodes
        .iter()
        .map(|n| (0..horizon).map(|t| p.bounded(format!("pressure[{}][{t}]", n.id), n.pressure_min, n.pressure_max)).collect())
        .collect();
    for (e, pipe) in s.gas.pipes.iter().enumerate() {
        let (m, n) = (tree.upstream(e), tree.downstream(e));
        for t in 0..horizon {
            let g = sched.flow[e][t].max(0.0) / dt;
            p.soc(vec![LinExpr::constant(g), pressure[n][t] * pipe.weymouth], pressure[m][t] * pipe.weymouth, "weymouth");
            p.minimize(pressure[m][t] - pressure[n][t]);
        }
    }
    let sol = conic::solve(&p, s.algorithm.solver_tol)?.require_optimal("pressure polish")?;
    sched.pressure = grab(&sol, &pressure);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GdnRun {
    pub schedule: GdnSchedule,
    pub costs: GdnCostBreakdown,
    /// Operating cost plus pressure penalty at the solver optimum.
    pub objective: f64,
}

/// Builds, solves and polishes one GDN problem with the blend held fixed.
pub fn solve_gdn(s: &Scenario, blend: &BlendState, trade: GdnTrade<'_>) -> Result<GdnRun> {
    let mut p = ConicProgram::new();
    let block = add_gdn_block(&mut p, s, blend, trade);
    p.minimize(block.cost.objective());
    let sol = conic::solve(&p, s.algorithm.solver_tol)?.require_optimal("GDN schedule")?;
    let mut schedule = GdnSchedule::extract(s, &block, &sol, blend);
    polish_pressures(s, &mut schedule)?;
    let costs = gdn_cost(s, &schedule, None);
    Ok(GdnRun { objective: sol.objective, schedule, costs })
}

/// Runs the blend fixed point for a GDN with fixed trades: solve with the
/// blend of the previous iterate, recompute it from injected volumes, stop
/// when no period's hydrogen fraction moves by more than the tolerance.
pub fn solve_gdn_blended(s: &Scenario, trade: &TradeQuantities) -> Result<(GdnRun, Vec<f64>)> {
    let mut blend = BlendState::methane(&s.blend, s.horizon());
    let mut history = Vec::new();
    for _ in 0..s.algorithm.blend_max_iter {
        let run = solve_gdn(s, &blend, GdnTrade::Fixed(trade))?;
        let next = run.schedule.implied_blend(s)?;
        let change = next.max_change(&blend);
        history.push(change);
        if change <= s.algorithm.blend_tol {
            return Ok((run, history));
        }
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
    use crate::netmodel::bundled;
    use approx::assert_relative_eq;

    fn tiny() -> Scenario {
        bundled("tiny4x3").unwrap()
    }

    #[test]
    fn idle_network_costs_only_the_tank() {
        let mut s = tiny();
        for n in &mut s.gas.nodes {
            n.load.clear();
        }
        let blend = BlendState::methane(&s.blend, s.horizon());
        let run = solve_gdn(&s, &blend, GdnTrade::Zero).unwrap();
        assert!(run.schedule.flow.iter().flatten().all(|g| g.abs() < 1e-6));
        let ht: f64 = s.devices.hydrogen_tanks.iter().map(|h| tank_cost(&s, h)).sum();
        assert_relative_eq!(run.costs.total, ht, max_relative = 1e-9);
        assert!(run.costs.ht > 0.0);
    }

    #[test]
    fn no_trade_cost_is_gas_purchase_plus_tank() {
        let s = tiny();
        let blend = BlendState::methane(&s.blend, s.horizon());
        let run = solve_gdn(&s, &blend, GdnTrade::Zero).unwrap();
        let mut hand = 0.0;
        for t in 0..s.horizon() {
            let load: f64 = (0..s.gas.nodes.len()).map(|n| s.gas_load(n, t)).sum();
            assert_relative_eq!(run.schedule.source[t], load, max_relative = 1e-6);
            hand += s.market.gas_price[t] * load;
        }
        hand += s.devices.hydrogen_tanks.iter().map(|h| tank_cost(&s, h)).sum::<f64>();
        assert_relative_eq!(run.costs.total, hand, max_relative = 1e-6);
        assert_relative_eq!(run.costs.total, run.objective - run.costs.pressure_penalty, max_relative = 1e-6);
        assert!(run.schedule.balance_residual(&s) <= 1e-6);
    }

    #[test]
    fn purchase_cost_arithmetic() {
        let mut s = tiny();
        s.market.gas_price = vec![0.3; s.horizon()];
        let blend = BlendState::methane(&s.blend, s.horizon());
        let mut sched = solve_gdn(&s, &blend, GdnTrade::Zero).unwrap().schedule;
        sched.source = vec![100.0, 100.0, 0.0, 0.0];
        assert_relative_eq!(gdn_cost(&s, &sched, None).hgn, 60.0, max_relative = 1e-12);
    }

    #[test]
    fn electrolyzer_yield_applies_the_unit_base() {
        let s = tiny();
        let e = &s.devices.electrolyzers[0];
        let mut q = TradeQuantities::zero(&s);
        q.p2g[0][1] = 100.0;
        let blend = BlendState::methane(&s.blend, s.horizon());
        let run = solve_gdn(&s, &blend, GdnTrade::Fixed(&q)).unwrap();
        let expected = 100.0 * e.efficiency * s.dt() * 3.6 / s.blend.hhv_h2;
        assert_relative_eq!(run.schedule.et_output[0][1], expected, max_relative = 1e-12);
        if e.efficiency == 0.7 && s.blend.hhv_h2 == 12.7 {
            // 100 kW for six hours at 70 % into 12.7 MJ/m³ hydrogen.
            assert_relative_eq!(expected, 100.0 * 0.7 * 6.0 * 3.6 / 12.7, max_relative = 1e-12);
        }
        // All produced hydrogen is either injected or stored.
        let stored: f64 = run.schedule.tank_flow.iter().map(|f| f[1]).sum();
        assert_relative_eq!(run.schedule.hydrogen[1] + stored, expected, max_relative = 1e-6);
    }

    #[test]
    fn polished_pressures_are_tight_and_penalty_does_not_loosen() {
        let s = tiny();
        let blend = BlendState::methane(&s.blend, s.horizon());
        let with = solve_gdn(&s, &blend, GdnTrade::Zero).unwrap();
        assert!(weymouth_tightness(&s, &with.schedule) <= 1e-4);
        let mut s0 = s.clone();
        s0.algorithm.pressure_penalty = Some(1e-12);
        let mut p = ConicProgram::new();
        let block = add_gdn_block(&mut p, &s0, &blend, GdnTrade::Zero);
        p.minimize(block.cost.operating());
        let sol = conic::solve(&p, s.algorithm.solver_tol).unwrap();
        let loose = GdnSchedule::extract(&s0, &block, &sol, &blend);
        assert!(weymouth_tightness(&s, &with.schedule) <= weymouth_tightness(&s0, &loose) + 1e-12);
    }

    #[test]
    fn higher_gas_prices_never_lower_purchase_cost() {
        let s = tiny();
        let blend = BlendState::methane(&s.blend, s.horizon());
        let base = solve_gdn(&s, &blend, GdnTrade::Zero).unwrap();
        let mut dear = s.clone();
        for e in &mut dear.market.gas_price {
            *e += 0.05;
        }
        let again = solve_gdn(&dear, &blend, GdnTrade::Zero).unwrap();
        assert!(again.costs.hgn >= base.costs.hgn - 1e-9);
    }

    #[test]
    fn blend_loop_converges_and_respects_the_cap() {
        let s = tiny();
        let mut q = TradeQuantities::zero(&s);
        for t in 0..s.horizon() {
            q.p2g[0][t] = s.devices.electrolyzers[0].rated_kw;
        }
        let (run, history) = solve_gdn_blended(&s, &q).unwrap();
        assert!(*history.last().unwrap() <= 1e-4);
        assert!(history.len() <= 20);
        for &w in &run.schedule.blend.omega {
            assert!(w <= s.blend.omega_max + 1e-9);
        }
        let implied = run.schedule.implied_blend(&s).unwrap();
        for &w in &implied.omega {
            assert!(w <= s.blend.omega_max + 1e-7);
        }
    }
}
