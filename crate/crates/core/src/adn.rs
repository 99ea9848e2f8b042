//! Active distribution network: branch-flow SOCP, batteries with cycle-life
//! degradation, DER curtailment and the fuel-cell / electrolyzer interface.
//!
//! Branch quantities live on the per-unit base of the network; device and
//! bus quantities are in kW. Bus balances are written in kW with the load on
//! the right-hand side, so their duals read directly as $/kW-period.

use crate::bargain::TradeQuantities;
use crate::conic::{self, cone_residuals, ConicProgram, ConicSolution, ConstraintId, LinExpr, Var};
use crate::error::{Error, Result};
use crate::netmodel::{BlendState, CycleLife, Scenario};
use crate::robust::Realization;

/// Cycle life of a battery cycled at depth `depth`.
pub fn battery_cycle_life(depth: f64, c: &CycleLife) -> Result<f64> {
    if !(depth > 0.0 && depth <= 1.0) {
        return Err(Error::domain(format!("depth of discharge {depth} outside (0, 1]")));
    }
    Ok(c.a1 * (c.b1 * depth).exp() + c.a2 * (c.b2 * depth).exp())
}

/// Degradation cost per kWh of battery throughput.
pub fn battery_throughput_cost(b: &crate::netmodel::Battery) -> f64 {
    let life = battery_cycle_life(b.depth, &b.cycle_life).expect("validated depth");
    (b.capacity_cost * b.capacity_kwh + b.power_cost * b.rated_kw) / (life * b.capacity_kwh * b.depth)
}

/// Wear cost per kWh delivered by a fuel cell or drawn by an electrolyzer.
pub fn conversion_wear_cost(power_cost: f64, rated_kw: f64, lifetime_h: f64) -> f64 {
    power_cost / (rated_kw * lifetime_h)
}

/// Electric output (kW) of a fuel cell burning `volume` m³ per period.
pub fn fuel_cell_power(s: &Scenario, volume: f64, hhv: f64, efficiency: f64) -> f64 {
    volume * hhv * efficiency / (s.blend.mj_per_kwh * s.dt())
}

/// How the block sees the traded quantities.
#[derive(Debug, Clone, Copy)]
pub enum AdnTrade<'a> {
    /// No trade; conversion devices idle.
    Zero,
    Fixed(&'a TradeQuantities),
    /// Fresh decision variables owned by this block.
    Free,
    /// Variables owned by another block of the same program.
    Shared { p2g: &'a [Vec<Var>], g2p: &'a [Vec<Var>] },
}

/// How battery net output is determined.
#[derive(Debug, Clone, Copy)]
pub enum BatteryMode<'a> {
    /// Unconstrained schedule.
    Free,
    /// Net output equals a baseline of another block plus an adjustment.
    Linked { baseline: &'a [Vec<LinExpr>], adjust: bool },
    /// Net output equals a fixed baseline plus an adjustment.
    Pinned { baseline: &'a [Vec<f64>], adjust: bool },
}

#[derive(Debug, Clone, Copy)]
pub struct AdnOptions<'a> {
    pub trade: AdnTrade<'a>,
    pub realization: Option<&'a Realization>,
    pub battery: BatteryMode<'a>,
    /// Allow paid load shedding, which keeps recourse problems feasible.
    pub shed: bool,
    /// Pins the fuel burned by fuel cell `.0` in period `.1` to `.2` m³.
    pub fuel_pin: Option<(usize, usize, f64)>,
}

impl Default for AdnOptions<'_> {
    fn default() -> Self {
        AdnOptions { trade: AdnTrade::Zero, realization: None, battery: BatteryMode::Free, shed: false, fuel_pin: None }
    }
}

/// Cost expressions of one ADN block.
#[derive(Debug, Clone, Default)]
pub struct AdnCostExprs {
    pub tg: LinExpr,
    pub li: LinExpr,
    pub sofc: LinExpr,
    pub et: LinExpr,
    pub ht: f64,
    pub shed: LinExpr,
    pub loss_penalty: LinExpr,
}

impl AdnCostExprs {
    /// Operating cost before trade payments.
    pub fn operating(&self) -> LinExpr {
        self.tg.clone() + self.li.clone() + self.sofc.clone() + self.et.clone() + self.shed.clone() + self.ht
    }

    /// Operating cost plus the loss penalty, the quantity the ADN minimises.
    pub fn objective(&self) -> LinExpr {
        self.operating() + self.loss_penalty.clone()
    }
}

/// Private electricity-hydrogen loop run by the ADN when it owns the
/// conversion devices.
#[derive(Debug, Clone)]
pub struct SelfLoopVars {
    pub et_power: Vec<Vec<Var>>,
    pub tank_flow: Vec<Vec<Var>>,
    pub tank_level: Vec<Vec<Var>>,
    pub fuel: Vec<Vec<Var>>,
}

/// Variable handles of one ADN block.
#[derive(Debug, Clone)]
pub struct AdnBlock {
    pub grid_p: Vec<Var>,
    pub grid_q: Vec<Var>,
    /// Indexed `[branch][period]`, oriented away from the root.
    pub p: Vec<Vec<Var>>,
    pub q: Vec<Vec<Var>>,
    pub isq: Vec<Vec<Var>>,
    /// Squared voltage, `[bus][period]`.
    pub usq: Vec<Vec<Var>>,
    pub der: Vec<Vec<Var>>,
    pub der_avail: Vec<Vec<ConstraintId>>,
    pub balance: Vec<Vec<ConstraintId>>,
    pub discharge: Vec<Vec<Var>>,
    pub charge: Vec<Vec<Var>>,
    /// Stored energy at the end of each period, `[battery][period]`.
    pub energy: Vec<Vec<Var>>,
    pub adjustment: Option<Vec<Vec<Var>>>,
    /// Traded electricity to each electrolyzer, kW.
    pub p2g: Vec<Vec<Var>>,
    /// Traded gas to each fuel cell, m³.
    pub g2p: Vec<Vec<Var>>,
    pub self_loop: Option<SelfLoopVars>,
    pub shed: Option<Vec<Vec<Var>>>,
    pub cost: AdnCostExprs,
    /// Per-period fuel-cell heating value used for conversion.
    pub fuel_hhv: Vec<f64>,
}

impl AdnBlock {
    /// Net battery output expression, `[battery][period]`.
    pub fn battery_net(&self) -> Vec<Vec<LinExpr>> {
        self.discharge
            .iter()
            .zip(&self.charge)
            .map(|(d, c)| d.iter().zip(c).map(|(&d, &c)| d + c).collect())
            .collect()
    }
}

fn trade_vars(p: &mut ConicProgram, s: &Scenario, blend: &BlendState, prefix: &str) -> (Vec<Vec<Var>>, Vec<Vec<Var>>) {
    let horizon = s.horizon();
    let p2g = s
        .devices
        .electrolyzers
        .iter()
        .map(|e| (0..horizon).map(|t| p.bounded(format!("{prefix}p2g[{}][{t}]", e.id), 0.0, e.rated_kw)).collect())
        .collect();
    let g2p = s
        .devices
        .fuel_cells
        .iter()
        .map(|f| {
            (0..horizon)
                .map(|t| p.bounded(format!("{prefix}g2p[{}][{t}]", f.id), 0.0, max_fuel_volume(s, f, blend.hhv_mix[t])))
                .collect()
        })
        .collect();
    (p2g, g2p)
}

/// Fuel volume per period that drives a fuel cell at its rating.
pub fn max_fuel_volume(s: &Scenario, f: &crate::netmodel::FuelCell, hhv: f64) -> f64 {
    f.rated_kw * s.blend.mj_per_kwh * s.dt() / (hhv * f.efficiency)
}

/// Creates trade variables shaped for the scenario; used by callers that
/// share them between several blocks.
pub fn add_trade_vars(p: &mut ConicProgram, s: &Scenario, blend: &BlendState) -> (Vec<Vec<Var>>, Vec<Vec<Var>>) {
    trade_vars(p, s, blend, "")
}

/// Appends one ADN scheduling block to `p`.
pub fn add_adn_block(p: &mut ConicProgram, s: &Scenario, blend: &BlendState, opts: AdnOptions<'_>) -> AdnBlock {
    let horizon = s.horizon();
    let dt = s.dt();
    let base = s.power.base_kva;
    let tree = s.power_tree();
    let nb = s.power.buses.len();
    let nl = s.power.branches.len();
    let root = tree.root;
    let devices = &s.devices;
    let mut cost = AdnCostExprs::default();

    let grid_p: Vec<Var> = (0..horizon).map(|t| p.nonneg(format!("grid_p[{t}]"))).collect();
    let grid_q: Vec<Var> = (0..horizon).map(|t| p.free(format!("grid_q[{t}]"))).collect();
    for t in 0..horizon {
        cost.tg.add_term(grid_p[t], s.market.electricity_price[t] * dt);
    }

    let mut pf = vec![Vec::with_capacity(horizon); nl];
    let mut qf = vec![Vec::with_capacity(horizon); nl];
    let mut isq = vec![Vec::with_capacity(horizon); nl];
    for l in 0..nl {
        for t in 0..horizon {
            pf[l].push(p.free(format!("p[{l}][{t}]")));
            qf[l].push(p.free(format!("q[{l}][{t}]")));
            isq[l].push(p.nonneg(format!("isq[{l}][{t}]")));
        }
    }
    let usq: Vec<Vec<Var>> = s
        .power
        .buses
        .iter()
        .enumerate()
        .map(|(j, b)| {
            (0..horizon)
                .map(|t| {
                    if j == root {
                        let v0 = s.power.root_voltage * s.power.root_voltage;
                        p.bounded(format!("usq[{}][{t}]", b.id), v0, v0)
                    } else {
                        p.bounded(format!("usq[{}][{t}]", b.id), b.v_min * b.v_min, b.v_max * b.v_max)
                    }
                })
                .collect()
        })
        .collect();

    // Branch flow: voltage drop and the relaxed current definition.
    let loss_weight = s.loss_penalty() * base * dt;
    for l in 0..nl {
        let br = &s.power.branches[l];
        let (i, j) = (tree.upstream(l), tree.downstream(l));
        for t in 0..horizon {
            let drop = usq[j][t] - usq[i][t] + pf[l][t] * (2.0 * br.r) + qf[l][t] * (2.0 * br.x)
                - isq[l][t] * (br.r * br.r + br.x * br.x);
            p.eq(drop, 0.0, "voltage");
            p.soc(
                vec![pf[l][t] * 2.0, qf[l][t] * 2.0, isq[l][t] - usq[i][t]],
                isq[l][t] + usq[i][t],
                "branch-flow",
            );
            cost.loss_penalty.add_term(isq[l][t], loss_weight * br.r);
        }
    }

    // DER dispatch bounded by availability rows so their duals expose the
    // value of extra output.
    let mut der = Vec::new();
    let mut der_avail = Vec::new();
    for (d, g) in devices.ders.iter().enumerate() {
        let mut vars = Vec::with_capacity(horizon);
        let mut rows = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let v = p.nonneg(format!("der[{}][{t}]", g.id));
            let avail = opts.realization.map_or(g.p_forecast[t], |r| r.der[d][t]);
            rows.push(p.le(LinExpr::from(v), avail, "der-availability"));
            vars.push(v);
        }
        der.push(vars);
        der_avail.push(rows);
    }

    // Batteries: discharge ≥ 0, charge ≤ 0, net output depletes storage.
    let mut discharge = Vec::new();
    let mut charge = Vec::new();
    let mut energy = Vec::new();
    let mut adjustment_vars = Vec::new();
    let adjusting = matches!(
        opts.battery,
        BatteryMode::Linked { adjust: true, .. } | BatteryMode::Pinned { adjust: true, .. }
    );
    for (k, b) in devices.batteries.iter().enumerate() {
        let throughput = crate::adn::battery_throughput_cost(b);
        let d: Vec<Var> =
            (0..horizon).map(|t| p.bounded(format!("disc[{}][{t}]", b.id), 0.0, b.rated_kw)).collect();
        let c: Vec<Var> =
            (0..horizon).map(|t| p.bounded(format!("ch[{}][{t}]", b.id), -b.rated_kw, 0.0)).collect();
        let e: Vec<Var> = (0..horizon)
            .map(|t| p.bounded(format!("energy[{}][{t}]", b.id), b.soc_min * b.capacity_kwh, b.soc_max * b.capacity_kwh))
            .collect();
        let e0 = 0.5 * b.capacity_kwh;
        for t in 0..horizon {
            let prev = if t == 0 { LinExpr::constant(e0) } else { LinExpr::from(e[t - 1]) };
            p.eq(e[t] - prev + (d[t] + c[t]) * dt, 0.0, "battery-energy");
            cost.li.add_term(d[t], throughput * dt);
            cost.li.add_term(c[t], -throughput * dt);
        }
        p.eq(LinExpr::from(e[horizon - 1]), e0, "battery-energy");
        let adj: Vec<Var> = if adjusting {
            (0..horizon).map(|t| p.free(format!("adjust[{}][{t}]", b.id))).collect()
        } else {
            Vec::new()
        };
        match opts.battery {
            BatteryMode::Free => {}
            BatteryMode::Linked { baseline, .. } => {
                for t in 0..horizon {
                    let mut net = d[t] + c[t] - baseline[k][t].clone();
                    if adjusting {
                        net -= adj[t];
                    }
                    p.eq(net, 0.0, "battery-baseline");
                }
            }
            BatteryMode::Pinned { baseline, .. } => {
                for t in 0..horizon {
                    let mut net = d[t] + c[t];
                    if adjusting {
                        net -= adj[t];
                    }
                    p.eq(net, baseline[k][t], "battery-baseline");
                }
            }
        }
        discharge.push(d);
        charge.push(c);
        energy.push(e);
        adjustment_vars.push(adj);
    }

    // Traded conversion: the ADN sells power to electrolyzers and buys gas
    // for its fuel cells.
    let (p2g, g2p) = match opts.trade {
        AdnTrade::Zero | AdnTrade::Fixed(_) => {
            let (a, b) = trade_vars(p, s, blend, "adn.");
            let fixed = match opts.trade {
                AdnTrade::Fixed(q) => q.clone(),
                _ => TradeQuantities::zero(s),
            };
            for (vars, vals) in a.iter().zip(&fixed.p2g).chain(b.iter().zip(&fixed.g2p)) {
                for (&v, &x) in vars.iter().zip(vals) {
                    p.fix(v, x);
                }
            }
            (a, b)
        }
        AdnTrade::Free => trade_vars(p, s, blend, "adn."),
        AdnTrade::Shared { p2g, g2p } => (p2g.to_vec(), g2p.to_vec()),
    };

    // Fuel cells burn traded blended gas, or hydrogen from the private loop.
    let self_loop_active = s.adn_self_loop();
    let fuel_hhv: Vec<f64> =
        if self_loop_active { vec![s.blend.hhv_h2; horizon] } else { blend.hhv_mix.clone() };
    let mut self_loop = None;
    let fuel_vars: Vec<Vec<Var>> = if self_loop_active {
        let et_power: Vec<Vec<Var>> = devices
            .electrolyzers
            .iter()
            .map(|e| (0..horizon).map(|t| p.bounded(format!("loop.et[{}][{t}]", e.id), 0.0, e.rated_kw)).collect())
            .collect();
        let fuel: Vec<Vec<Var>> = devices
            .fuel_cells
            .iter()
            .map(|f| {
                (0..horizon)
                    .map(|t| p.bounded(format!("loop.fuel[{}][{t}]", f.id), 0.0, max_fuel_volume(s, f, s.blend.hhv_h2)))
                    .collect()
            })
            .collect();
        let tank_flow: Vec<Vec<Var>> = devices
            .hydrogen_tanks
            .iter()
            .map(|h| (0..horizon).map(|t| p.free(format!("loop.tank_flow[{}][{t}]", h.id))).collect())
            .collect();
        let tank_level: Vec<Vec<Var>> = devices
            .hydrogen_tanks
            .iter()
            .map(|h| (0..=horizon).map(|t| p.bounded(format!("loop.tank[{}][{t}]", h.id), 0.0, h.capacity_m3)).collect())
            .collect();
        for (h, tank) in devices.hydrogen_tanks.iter().enumerate() {
            for t in 0..horizon {
                p.eq(tank_level[h][t + 1] - tank_level[h][t] - tank_flow[h][t], 0.0, "tank-level");
            }
            p.eq(tank_level[h][horizon] - tank_level[h][0], 0.0, "tank-level");
            cost.ht += tank_cost(s, tank);
        }
        // Hydrogen produced equals hydrogen burned plus hydrogen stored.
        for t in 0..horizon {
            let mut net = LinExpr::zero();
            for (k, e) in devices.electrolyzers.iter().enumerate() {
                net.add_term(et_power[k][t], electrolyzer_yield(s, e.efficiency));
                cost.et.add_term(et_power[k][t], conversion_wear_cost(e.power_cost, e.rated_kw, e.lifetime_h) * dt);
            }
            for fuel_k in &fuel {
                net.add_term(fuel_k[t], -1.0);
            }
            for flow in &tank_flow {
                net.add_term(flow[t], -1.0);
            }
            p.eq(net, 0.0, "hydrogen-loop");
        }
        self_loop = Some(SelfLoopVars { et_power, tank_flow, tank_level, fuel: fuel.clone() });
        fuel
    } else {
        g2p.clone()
    };

    if let Some((k, t, v)) = opts.fuel_pin {
        p.eq(LinExpr::from(fuel_vars[k][t]), v, "fuel-pin");
    }

    let shed: Option<Vec<Vec<Var>>> = opts.shed.then(|| {
        (0..nb).map(|j| (0..horizon).map(|t| p.nonneg(format!("shed[{j}][{t}]"))).collect()).collect()
    });
    let shed_price = s.shed_penalty();

    // Nodal active and reactive balances.
    let mut balance = vec![Vec::with_capacity(horizon); nb];
    for t in 0..horizon {
        let mut act: Vec<LinExpr> = vec![LinExpr::zero(); nb];
        let mut react: Vec<LinExpr> = vec![LinExpr::zero(); nb];
        let mut q_rhs = vec![0.0; nb];
        for l in 0..nl {
            let br = &s.power.branches[l];
            let (i, j) = (tree.upstream(l), tree.downstream(l));
            act[j].add_term(pf[l][t], base).add_term(isq[l][t], -br.r * base);
            react[j].add_term(qf[l][t], base).add_term(isq[l][t], -br.x * base);
            act[i].add_term(pf[l][t], -base);
            react[i].add_term(qf[l][t], -base);
        }
        act[root].add_term(grid_p[t], 1.0);
        react[root].add_term(grid_q[t], 1.0);
        for (d, g) in devices.ders.iter().enumerate() {
            let j = s.bus_idx(&g.bus);
            act[j].add_term(der[d][t], 1.0);
            q_rhs[j] -= s.der_q(d, t);
        }
        for (k, b) in devices.batteries.iter().enumerate() {
            let j = s.bus_idx(&b.bus);
            act[j].add_term(discharge[k][t], 1.0).add_term(charge[k][t], 1.0);
        }
        for (k, f) in devices.fuel_cells.iter().enumerate() {
            let j = s.bus_idx(&f.bus);
            let kw_per_m3 = fuel_cell_power(s, 1.0, fuel_hhv[t], f.efficiency);
            act[j].add_term(fuel_vars[k][t], kw_per_m3);
            cost.sofc
                .add_term(fuel_vars[k][t], conversion_wear_cost(f.power_cost, f.rated_kw, f.lifetime_h) * kw_per_m3 * dt);
        }
        for (k, e) in devices.electrolyzers.iter().enumerate() {
            let j = s.bus_idx(&e.bus);
            act[j].add_term(p2g[k][t], -1.0);
            if let Some(lp) = &self_loop {
                act[j].add_term(lp.et_power[k][t], -1.0);
            }
        }
        for j in 0..nb {
            let load = opts.realization.map_or_else(|| s.p_load(j, t), |r| r.load[j][t]);
            if let Some(sh) = &shed {
                act[j].add_term(sh[j][t], 1.0);
                // No cap at the load itself: the penalty exceeds any grid
                // price, so shedding past the load never pays, and leaving
                // the cap out keeps the balance dual the full load gradient.
                cost.shed.add_term(sh[j][t], shed_price * dt);
            }
            balance[j].push(p.eq(std::mem::take(&mut act[j]), load, "power-balance"));
            q_rhs[j] += s.q_load(j, t);
            p.eq(std::mem::take(&mut react[j]), q_rhs[j], "reactive-balance");
        }
    }

    AdnBlock {
        grid_p,
        grid_q,
        p: pf,
        q: qf,
        isq,
        usq,
        der,
        der_avail,
        balance,
        discharge,
        charge,
        energy,
        adjustment: adjusting.then_some(adjustment_vars),
        p2g,
        g2p,
        self_loop,
        shed,
        cost,
        fuel_hhv,
    }
}

/// Hydrogen volume produced per kW of electrolyzer draw over one period.
pub fn electrolyzer_yield(s: &Scenario, efficiency: f64) -> f64 {
    efficiency * s.dt() * s.blend.mj_per_kwh / s.blend.hhv_h2
}

/// Capital cost of a hydrogen tank attributed to the scheduling horizon.
pub fn tank_cost(s: &Scenario, h: &crate::netmodel::HydrogenTank) -> f64 {
    let days = s.horizon() as f64 * s.dt() / 24.0;
    h.capacity_cost * h.capacity_m3 / h.lifetime_days * days
}

/// Solved ADN schedule in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct AdnSchedule {
    pub grid_p: Vec<f64>,
    pub grid_q: Vec<f64>,
    /// Branch flows in kW / kvar, `[branch][period]`.
    pub p_kw: Vec<Vec<f64>>,
    pub q_kvar: Vec<Vec<f64>>,
    /// Squared current and voltage in per unit.
    pub isq: Vec<Vec<f64>>,
    pub usq: Vec<Vec<f64>>,
    pub der: Vec<Vec<f64>>,
    pub discharge: Vec<Vec<f64>>,
    pub charge: Vec<Vec<f64>>,
    pub energy: Vec<Vec<f64>>,
    pub adjustment: Option<Vec<Vec<f64>>>,
    /// Electrolyzer draw (traded or private), kW.
    pub et_power: Vec<Vec<f64>>,
    /// Fuel-cell fuel volume, m³, and electric output, kW.
    pub fuel: Vec<Vec<f64>>,
    pub fuel_cell_power: Vec<Vec<f64>>,
    pub shed: Option<Vec<Vec<f64>>>,
    pub trade: TradeQuantities,
    /// Max relative branch-flow cone slack.
    pub cone_slack: f64,
}

fn grab(sol: &ConicSolution, v: &[Vec<Var>]) -> Vec<Vec<f64>> {
    v.iter().map(|row| row.iter().map(|&x| sol.value(x)).collect()).collect()
}

impl AdnSchedule {
    pub fn extract(s: &Scenario, block: &AdnBlock, program: &ConicProgram, sol: &ConicSolution) -> AdnSchedule {
        let base = s.power.base_kva;
        let scale = |m: Vec<Vec<f64>>| m.into_iter().map(|r| r.into_iter().map(|x| x * base).collect()).collect();
        let (et_power, fuel) = match &block.self_loop {
            Some(lp) => (grab(sol, &lp.et_power), grab(sol, &lp.fuel)),
            None => (grab(sol, &block.p2g), grab(sol, &block.g2p)),
        };
        let fuel_cell_power = s
            .devices
            .fuel_cells
            .iter()
            .enumerate()
            .map(|(k, f)| (0..s.horizon()).map(|t| fuel_cell_power(s, fuel[k][t], block.fuel_hhv[t], f.efficiency)).collect())
            .collect();
        let cone_slack = branch_slack(program, sol, block);
        AdnSchedule {
            grid_p: block.grid_p.iter().map(|&v| sol.value(v)).collect(),
            grid_q: block.grid_q.iter().map(|&v| sol.value(v)).collect(),
            p_kw: scale(grab(sol, &block.p)),
            q_kvar: scale(grab(sol, &block.q)),
            isq: grab(sol, &block.isq),
            usq: grab(sol, &block.usq),
            der: grab(sol, &block.der),
            discharge: grab(sol, &block.discharge),
            charge: grab(sol, &block.charge),
            energy: grab(sol, &block.energy),
            adjustment: block.adjustment.as_ref().map(|a| grab(sol, a)),
            et_power,
            fuel,
            fuel_cell_power,
            shed: block.shed.as_ref().map(|v| grab(sol, v)),
            trade: TradeQuantities { p2g: grab(sol, &block.p2g), g2p: grab(sol, &block.g2p) }.clamp_nonnegative(),
            cone_slack,
        }
    }

    /// Net battery output, `[battery][period]`.
    pub fn battery_net(&self) -> Vec<Vec<f64>> {
        self.discharge
            .iter()
            .zip(&self.charge)
            .map(|(d, c)| d.iter().zip(c).map(|(a, b)| a + b).collect())
            .collect()
    }

    /// Periods where a battery both charges and discharges noticeably.
    pub fn simultaneous_battery_use(&self, s: &Scenario) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, b) in s.devices.batteries.iter().enumerate() {
            for t in 0..self.discharge[k].len() {
                let eps = 1e-6 * b.rated_kw;
                if self.discharge[k][t] > eps && -self.charge[k][t] > eps {
                    out.push((k, t));
                }
            }
        }
        out
    }
}

fn branch_slack(program: &ConicProgram, sol: &ConicSolution, block: &AdnBlock) -> f64 {
    let ours: std::collections::HashSet<Var> = block.isq.iter().flatten().copied().collect();
    cone_residuals(program, sol)
        .into_iter()
        .filter(|r| r.family == "branch-flow")
        .filter(|r| program.cones[r.id.0].rhs.terms.iter().any(|(v, _)| ours.contains(v)))
        .map(|r| r.relative)
        .fold(0.0, f64::max)
}

/// Max relative slack of the branch-flow cones `‖(2P, 2Q, I − U)‖ ≤ I + U`
/// recomputed from a schedule.
pub fn branchflow_tightness(s: &Scenario, sched: &AdnSchedule) -> f64 {
    let tree = s.power_tree();
    let base = s.power.base_kva;
    let mut worst: f64 = 0.0;
    for l in 0..sched.isq.len() {
        let i = tree.upstream(l);
        for t in 0..sched.isq[l].len() {
            let (pp, qq) = (sched.p_kw[l][t] / base, sched.q_kvar[l][t] / base);
            let (ii, uu) = (sched.isq[l][t], sched.usq[i][t]);
            let norm = (4.0 * pp * pp + 4.0 * qq * qq + (ii - uu).powi(2)).sqrt();
            let rhs = ii + uu;
            if rhs > 0.0 {
                worst = worst.max((rhs - norm) / rhs);
            }
        }
    }
    worst
}

/// ADN cost stack. `total = g2p + tg + hess − p2g + et + ht + shed`, where
/// `hess = li + sofc` and the electrolyzer, tank and shedding terms are
/// nonzero only when the ADN runs its own conversion loop or sheds load.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdnCostBreakdown {
    pub total: f64,
    pub tg: f64,
    pub li: f64,
    pub sofc: f64,
    pub hess: f64,
    /// Payment for traded gas.
    pub g2p: f64,
    /// Revenue from electricity sold to electrolyzers.
    pub p2g: f64,
    pub et: f64,
    pub ht: f64,
    pub shed: f64,
    pub loss_penalty: f64,
}

/// Evaluates the ADN cost stack of a schedule at the given trade prices.
pub fn adn_cost(s: &Scenario, sched: &AdnSchedule, prices: Option<&crate::bargain::TradePrices>) -> AdnCostBreakdown {
    let dt = s.dt();
    let horizon = s.horizon();
    let mu = &s.market.electricity_price;
    let tg: f64 = (0..horizon).map(|t| mu[t] * sched.grid_p[t] * dt).sum();
    let mut li = 0.0;
    for (k, b) in s.devices.batteries.iter().enumerate() {
        let k_li = battery_throughput_cost(b);
        li += (0..horizon).map(|t| k_li * (sched.discharge[k][t] - sched.charge[k][t]) * dt).sum::<f64>();
    }
    let mut sofc = 0.0;
    for (k, f) in s.devices.fuel_cells.iter().enumerate() {
        let w = conversion_wear_cost(f.power_cost, f.rated_kw, f.lifetime_h);
        sofc += sched.fuel_cell_power[k].iter().map(|p| w * p * dt).sum::<f64>();
    }
    let (mut et, mut ht) = (0.0, 0.0);
    if s.adn_self_loop() {
        for (k, e) in s.devices.electrolyzers.iter().enumerate() {
            let w = conversion_wear_cost(e.power_cost, e.rated_kw, e.lifetime_h);
            et += sched.et_power[k].iter().map(|p| w * p * dt).sum::<f64>();
        }
        ht = s.devices.hydrogen_tanks.iter().map(|h| tank_cost(s, h)).sum();
    }
    let shed = sched
        .shed
        .as_ref()
        .map_or(0.0, |sh| sh.iter().flatten().map(|x| x * s.shed_penalty() * dt).sum());
    let (g2p, p2g) = match prices {
        Some(pr) => (
            (0..horizon).map(|t| pr.g2p[t] * sched.trade.g2p_total(t)).sum(),
            (0..horizon).map(|t| pr.p2g[t] * sched.trade.p2g_total(t) * dt).sum(),
        ),
        None => (0.0, 0.0),
    };
    let loss_penalty: f64 = s
        .power
        .branches
        .iter()
        .enumerate()
        .map(|(l, br)| sched.isq[l].iter().map(|i| s.loss_penalty() * s.power.base_kva * dt * br.r * i).sum::<f64>())
        .sum();
    let hess = li + sofc;
    AdnCostBreakdown {
        total: g2p + tg + hess - p2g + et + ht + shed,
        tg,
        li,
        sofc,
        hess,
        g2p,
        p2g,
        et,
        ht,
        shed,
        loss_penalty,
    }
}

/// Result of a standalone ADN solve.
#[derive(Debug, Clone)]
pub struct AdnRun {
    pub schedule: AdnSchedule,
    pub costs: AdnCostBreakdown,
    /// Solver objective: operating cost plus loss penalty.
    pub objective: f64,
    pub balance_duals: Vec<Vec<f64>>,
    pub der_duals: Vec<Vec<f64>>,
}

/// Builds and solves one standalone ADN problem.
pub fn solve_adn(s: &Scenario, blend: &BlendState, opts: AdnOptions<'_>) -> Result<AdnRun> {
    let mut p = ConicProgram::new();
    let block = add_adn_block(&mut p, s, blend, opts);
    p.minimize(block.cost.objective());
    let sol = conic::solve(&p, s.algorithm.solver_tol)?.require_optimal("ADN schedule")?;
    let schedule = AdnSchedule::extract(s, &block, &p, &sol);
    let costs = adn_cost(s, &schedule, None);
    let duals = |rows: &Vec<Vec<ConstraintId>>| -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.iter().map(|&c| sol.dual(c)).collect()).collect()
    };
    Ok(AdnRun {
        balance_duals: duals(&block.balance),
        der_duals: duals(&block.der_avail),
        objective: sol.objective,
        schedule,
        costs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{bundled, Battery};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tiny() -> Scenario {
        bundled("tiny4x3").unwrap()
    }

    #[test]
    fn cycle_life_values() {
        let c = CycleLife::default();
        let n = battery_cycle_life(0.8, &c).unwrap();
        assert_relative_eq!(n, 20000.0 * (-4.0f64).exp() + 4000.0 * (-0.8f64).exp(), max_relative = 1e-12);
        assert!((n - 2163.63).abs() < 0.01);
        assert!((battery_cycle_life(1e-9, &c).unwrap() - 24000.0).abs() < 1e-3);
        assert!(battery_cycle_life(0.5, &c).unwrap() > battery_cycle_life(0.9, &c).unwrap());
        assert!(battery_cycle_life(0.0, &c).is_err());
    }

    #[test]
    fn throughput_cost_example() {
        // α·E + β·P = 30000 with E = 200, D = 0.8.
        let b = Battery {
            id: "b".into(),
            bus: "x".into(),
            rated_kw: 100.0,
            capacity_kwh: 200.0,
            capacity_cost: 100.0,
            power_cost: 100.0,
            soc_min: 0.1,
            soc_max: 0.9,
            cycle_life: CycleLife::default(),
            depth: 0.8,
        };
        let k = battery_throughput_cost(&b);
        let n = battery_cycle_life(0.8, &b.cycle_life).unwrap();
        assert_relative_eq!(k * 50.0, 30000.0 * 50.0 / (n * 200.0 * 0.8), max_relative = 1e-12);
        assert!((k * 50.0 - 4.333).abs() < 1e-3);
    }

    #[test]
    fn fuel_cell_conversion_uses_the_unit_base() {
        let s = tiny();
        // 10 m³ at 34.38 MJ/m³ and 55 % efficiency is 189.09 MJ, i.e. 52.525 kWh.
        let kw = fuel_cell_power(&s, 10.0, 34.38, 0.55) * s.dt();
        assert_relative_eq!(kw * 3.6, 189.09, max_relative = 1e-12);
        assert_relative_eq!(kw, 52.525, max_relative = 1e-12);
    }

    #[test]
    fn idle_network_costs_nothing() {
        let mut s = tiny();
        for b in &mut s.power.buses {
            b.p_load.clear();
            b.q_load.clear();
        }
        let horizon = s.horizon();
        for d in &mut s.devices.ders {
            d.p_forecast = vec![0.0; horizon];
            d.q_injection.clear();
        }
        let blend = BlendState::methane(&s.blend, s.horizon());
        let run = solve_adn(&s, &blend, AdnOptions::default()).unwrap();
        assert!(run.costs.total.abs() < 1e-6, "{:?}", run.costs);
        assert!(run.schedule.grid_p.iter().all(|p| p.abs() < 1e-6));
        assert!(run.costs.li.abs() < 1e-6);
    }

    #[test]
    fn without_battery_or_der_the_grid_serves_load_and_losses() {
        let mut s = tiny();
        s.devices.batteries.clear();
        s.devices.ders.clear();
        let blend = BlendState::methane(&s.blend, s.horizon());
        let run = solve_adn(&s, &blend, AdnOptions::default()).unwrap();
        let mut expected = 0.0;
        for t in 0..s.horizon() {
            let load: f64 = (0..s.power.buses.len()).map(|j| s.p_load(j, t)).sum();
            let losses: f64 = s
                .power
                .branches
                .iter()
                .enumerate()
                .map(|(l, br)| br.r * run.schedule.isq[l][t] * s.power.base_kva)
                .sum();
            assert_relative_eq!(run.schedule.grid_p[t], load + losses, max_relative = 1e-6);
            assert!(losses >= 0.0 && losses < 0.05 * load);
            expected += s.market.electricity_price[t] * (load + losses) * s.dt();
        }
        assert_relative_eq!(run.costs.total, expected, max_relative = 1e-6);
        assert!(branchflow_tightness(&s, &run.schedule) <= 1e-4);
    }

    #[test]
    fn default_run_is_tight_and_respects_bounds() {
        let s = tiny();
        let blend = BlendState::methane(&s.blend, s.horizon());
        let run = solve_adn(&s, &blend, AdnOptions::default()).unwrap();
        let sched = &run.schedule;
        assert!(branchflow_tightness(&s, sched) <= 1e-4);
        assert!(sched.cone_slack <= 1e-4);
        for (j, b) in s.power.buses.iter().enumerate() {
            for &u in &sched.usq[j] {
                assert!(u >= b.v_min.powi(2) - 1e-7 && u <= b.v_max.powi(2) + 1e-7);
            }
        }
        for (k, b) in s.devices.batteries.iter().enumerate() {
            let e = &sched.energy[k];
            assert_relative_eq!(e[e.len() - 1], 0.5 * b.capacity_kwh, max_relative = 1e-6);
            for t in 0..s.horizon() {
                assert!(sched.discharge[k][t] >= -1e-7 && sched.charge[k][t] <= 1e-7);
                assert!((sched.discharge[k][t] + sched.charge[k][t]).abs() <= b.rated_kw + 1e-6);
            }
        }
        assert!(sched.simultaneous_battery_use(&s).is_empty());
        // Breakdown and solver objective agree once the penalty is removed.
        assert_relative_eq!(run.costs.total, run.objective - run.costs.loss_penalty, max_relative = 1e-6);
        let c = run.costs;
        assert_relative_eq!(c.total, c.g2p + c.tg + c.hess - c.p2g + c.et + c.ht + c.shed, max_relative = 1e-9);
    }

    #[test]
    fn balance_duals_match_load_perturbation() {
        let s = tiny();
        let blend = BlendState::methane(&s.blend, s.horizon());
        let base = solve_adn(&s, &blend, AdnOptions::default()).unwrap();
        let j = (0..s.power.buses.len()).find(|&j| s.p_load(j, 0) > 0.0).unwrap();
        let mut bumped = s.clone();
        bumped.power.buses[j].p_load[0] += 1.0;
        let again = solve_adn(&bumped, &blend, AdnOptions::default()).unwrap();
        let fd = again.objective - base.objective;
        assert!((fd - base.balance_duals[j][0]).abs() < 2e-3 * fd.abs().max(1e-3), "fd {fd} dual {}", base.balance_duals[j][0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn more_load_never_costs_less(t in 0usize..4, extra in 1.0f64..40.0) {
            let s = tiny();
            let blend = BlendState::methane(&s.blend, s.horizon());
            let j = (0..s.power.buses.len()).find(|&j| s.p_load(j, t) > 0.0).unwrap();
            let base = solve_adn(&s, &blend, AdnOptions::default()).unwrap();
            let mut bumped = s.clone();
            bumped.power.buses[j].p_load[t] += extra;
            let again = solve_adn(&bumped, &blend, AdnOptions::default()).unwrap();
            prop_assert!(again.costs.total >= base.costs.total - 1e-6);
        }
    }
}
