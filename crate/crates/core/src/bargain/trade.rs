use serde::{Deserialize, Serialize};

use crate::netmodel::Scenario;

/// Traded quantities: electricity sold to each electrolyzer (kW) and blended
/// gas sold to each fuel cell (m³ per period), indexed `[device][period]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeQuantities {
    pub p2g: Vec<Vec<f64>>,
    pub g2p: Vec<Vec<f64>>,
}

impl TradeQuantities {
    pub fn zero(s: &Scenario) -> TradeQuantities {
        let t = s.horizon();
        TradeQuantities {
            p2g: vec![vec![0.0; t]; s.devices.electrolyzers.len()],
            g2p: vec![vec![0.0; t]; s.devices.fuel_cells.len()],
        }
    }

    /// Electricity sold in period `t` across all electrolyzers, kW.
    pub fn p2g_total(&self, t: usize) -> f64 {
        self.p2g.iter().map(|v| v[t]).sum()
    }

    /// Gas sold in period `t` across all fuel cells, m³.
    pub fn g2p_total(&self, t: usize) -> f64 {
        self.g2p.iter().map(|v| v[t]).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.p2g.iter().chain(&self.g2p).flatten().copied().collect()
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.flatten().iter().all(|v| v.abs() <= tol)
    }

    /// Clamps solver noise below zero.
    pub fn clamp_nonnegative(mut self) -> TradeQuantities {
        for v in self.p2g.iter_mut().chain(self.g2p.iter_mut()).flatten() {
            *v = v.max(0.0);
        }
        self
    }
}

/// Per-period trade prices: $/kWh for electricity, $/m³ for gas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradePrices {
    pub p2g: Vec<f64>,
    pub g2p: Vec<f64>,
}

impl TradePrices {
    pub fn zero(horizon: usize) -> TradePrices {
        TradePrices { p2g: vec![0.0; horizon], g2p: vec![0.0; horizon] }
    }

    /// Net payment from the ADN to the GDN, $.
    pub fn transfer(&self, q: &TradeQuantities, dt: f64) -> f64 {
        (0..self.g2p.len())
            .map(|t| self.g2p[t] * q.g2p_total(t) - self.p2g[t] * q.p2g_total(t) * dt)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeDecision {
    pub quantities: TradeQuantities,
    pub prices: TradePrices,
}

impl TradeDecision {
    pub fn none(s: &Scenario) -> TradeDecision {
        TradeDecision { quantities: TradeQuantities::zero(s), prices: TradePrices::zero(s.horizon()) }
    }
}
