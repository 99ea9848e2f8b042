//! Finite-difference marginal cost of electricity from gas conversion.
//!
//! For every period in which a fuel cell runs, the ADN is re-solved with one
//! extra kWh of load at the fuel cell's bus and the fuel cell forced to
//! deliver exactly that extra kWh: through one more kWh-equivalent of
//! bought gas when trading, through the private hydrogen loop otherwise.
//! The cost change is the marginal cost of that kWh. Near the rating the
//! step is taken downwards instead. Periods are weighted by fuel-cell output.

use crate::adn::{self, adn_cost, max_fuel_volume, AdnOptions, AdnRun, AdnTrade};
use crate::bargain::TradePrices;
use crate::error::Result;
use crate::netmodel::{BlendState, Scenario};
use crate::robust::Realization;

/// Energy step of the finite difference, kWh.
pub const STEP_KWH: f64 = 1.0;

pub fn conversion_marginal_cost(
    s: &Scenario,
    blend: &BlendState,
    run: &AdnRun,
    prices: Option<&TradePrices>,
) -> Result<Option<f64>> {
    let sched = &run.schedule;
    let base_cost = adn_cost(s, sched, prices).total;
    let dt = s.dt();
    let (mut weighted, mut weight) = (0.0, 0.0);
    for t in 0..s.horizon() {
        let Some((k, out)) = sched
            .fuel_cell_power
            .iter()
            .enumerate()
            .map(|(k, row)| (k, row[t]))
            .filter(|(_, p)| *p > 1e-6)
            .fold(None, |best: Option<(usize, f64)>, c| if best.is_none_or(|b| c.1 > b.1) { Some(c) } else { best })
        else {
            continue;
        };
        let f = &s.devices.fuel_cells[k];
        let hhv = if s.adn_self_loop() { s.blend.hhv_h2 } else { blend.hhv_mix[t] };
        let dv = STEP_KWH * s.blend.mj_per_kwh / (hhv * f.efficiency);
        let fuel = sched.fuel[k][t];
        let sign = if fuel + dv <= max_fuel_volume(s, f, hhv) { 1.0 } else { -1.0 };
        let mut u = Realization::forecast(s);
        u.load[s.bus_idx(&f.bus)][t] += sign * STEP_KWH / dt;
        let bumped = if s.adn_self_loop() {
            adn::solve_adn(
                s,
                blend,
                AdnOptions { realization: Some(&u), fuel_pin: Some((k, t, fuel + sign * dv)), ..Default::default() },
            )?
        } else {
            let mut q = sched.trade.clone();
            q.g2p[k][t] = (q.g2p[k][t] + sign * dv).max(0.0);
            adn::solve_adn(s, blend, AdnOptions { trade: AdnTrade::Fixed(&q), realization: Some(&u), ..Default::default() })?
        };
        let mc = sign * (adn_cost(s, &bumped.schedule, prices).total - base_cost) / STEP_KWH;
        weighted += mc * out;
        weight += out;
    }
    Ok((weight > 0.0).then(|| weighted / weight))
}
