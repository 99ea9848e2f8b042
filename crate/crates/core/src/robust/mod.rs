//! Two-stage robust bargaining against load and DER forecast error.
//!
//! The first stage fixes trades and the battery baseline; the ADN then
//! re-dispatches its batteries once loads and DER output are known. The
//! outer loop adds the worst realization found so far to the master problem
//! as a cut; the inner loop searches for that realization by alternating a
//! recourse solve with a vertex step driven by the recourse duals.

mod ccg;
mod master;
mod subproblem;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bargain::TradeQuantities;
use crate::netmodel::{BoxShape, Scenario};

pub use ccg::{ccg, ccg_loop, evaluate_first_stage, CcgIteration, CcgRun, Coalition, RobustSolution};
pub use master::{solve_mp, Cut, MasterResult};
pub use subproblem::{solve_sp1, solve_sp2, solve_sp_bcd, BcdResult, BcdStep};

/// Realized loads `[bus][period]` and DER availability `[der][period]`, kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub load: Vec<Vec<f64>>,
    pub der: Vec<Vec<f64>>,
}

impl Realization {
    pub fn forecast(s: &Scenario) -> Realization {
        let horizon = s.horizon();
        Realization {
            load: (0..s.power.buses.len()).map(|j| (0..horizon).map(|t| s.p_load(j, t)).collect()).collect(),
            der: s.devices.ders.iter().map(|d| d.p_forecast.clone()).collect(),
        }
    }
}

/// Which forecasts are uncertain; the four experimental cases.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseMask {
    /// Nothing uncertain.
    Case1,
    /// Loads only.
    Case2,
    /// DER output only.
    Case3,
    /// Loads and DER output.
    #[default]
    Case4,
}

impl CaseMask {
    pub fn loads(self) -> bool {
        matches!(self, CaseMask::Case2 | CaseMask::Case4)
    }

    pub fn ders(self) -> bool {
        matches!(self, CaseMask::Case3 | CaseMask::Case4)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CaseMask::Case1 => "case1",
            CaseMask::Case2 => "case2",
            CaseMask::Case3 => "case3",
            CaseMask::Case4 => "case4",
        }
    }
}

impl fmt::Display for CaseMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseMask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "case1" => Ok(CaseMask::Case1),
            "case2" => Ok(CaseMask::Case2),
            "case3" => Ok(CaseMask::Case3),
            "case4" => Ok(CaseMask::Case4),
            other => Err(format!("unknown case {other:?}; expected case1..case4")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairKind {
    Load,
    Der,
}

/// One uncertain (element, period) entry and its interval.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainPair {
    pub kind: PairKind,
    /// Bus index for loads, DER index for DERs.
    pub element: usize,
    pub period: usize,
    pub forecast: f64,
    pub lower: f64,
    pub upper: f64,
}

/// The box of realizations around the forecast, restricted to the entries
/// with a nonzero interval.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyBox {
    pub pairs: Vec<UncertainPair>,
    forecast: Realization,
}

fn interval(forecast: f64, radius: f64, shape: BoxShape) -> (f64, f64) {
    let hi = forecast * (1.0 + radius);
    match shape {
        BoxShape::Symmetric => (forecast * (1.0 - radius), hi),
        BoxShape::AsymmetricUp => (forecast, hi),
    }
}

impl UncertaintyBox {
    pub fn new(s: &Scenario, case: CaseMask) -> UncertaintyBox {
        let u = &s.uncertainty;
        let forecast = Realization::forecast(s);
        let mut pairs = Vec::new();
        let mut push = |kind, element, period, value: f64, radius: f64| {
            let (lower, upper) = interval(value, radius, u.shape);
            if upper - lower > 0.0 {
                pairs.push(UncertainPair { kind, element, period, forecast: value, lower, upper });
            }
        };
        if case.loads() {
            for (j, row) in forecast.load.iter().enumerate() {
                for (t, &v) in row.iter().enumerate() {
                    push(PairKind::Load, j, t, v, u.load_radius);
                }
            }
        }
        if case.ders() {
            for (d, row) in forecast.der.iter().enumerate() {
                for (t, &v) in row.iter().enumerate() {
                    push(PairKind::Der, d, t, v, u.der_radius);
                }
            }
        }
        UncertaintyBox { pairs, forecast }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn forecast(&self) -> &Realization {
        &self.forecast
    }

    /// The vertex with pair `k` at its upper end iff `upper[k]`.
    pub fn vertex(&self, upper: &[bool]) -> Realization {
        let mut r = self.forecast.clone();
        for (p, &up) in self.pairs.iter().zip(upper) {
            let v = if up { p.upper } else { p.lower };
            match p.kind {
                PairKind::Load => r.load[p.element][p.period] = v,
                PairKind::Der => r.der[p.element][p.period] = v,
            }
        }
        r
    }

    fn value(r: &Realization, p: &UncertainPair) -> f64 {
        match p.kind {
            PairKind::Load => r.load[p.element][p.period],
            PairKind::Der => r.der[p.element][p.period],
        }
    }

    /// Vertex coordinates of `r`, or `None` if some entry is interior or
    /// anything outside the box differs from the forecast.
    pub fn vertex_bits(&self, r: &Realization, tol: f64) -> Option<Vec<bool>> {
        let mut bits = Vec::with_capacity(self.pairs.len());
        for p in &self.pairs {
            let v = Self::value(r, p);
            let scale = p.upper.abs().max(1.0);
            if (v - p.upper).abs() <= tol * scale {
                bits.push(true);
            } else if (v - p.lower).abs() <= tol * scale {
                bits.push(false);
            } else {
                return None;
            }
        }
        (self.vertex(&bits) == *r || self.max_gap(&self.vertex(&bits), r) <= tol).then_some(bits)
    }

    fn max_gap(&self, a: &Realization, b: &Realization) -> f64 {
        a.load
            .iter()
            .flatten()
            .zip(b.load.iter().flatten())
            .chain(a.der.iter().flatten().zip(b.der.iter().flatten()))
            .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, r: &Realization, tol: f64) -> bool {
        let mut pinned = self.forecast.clone();
        for p in &self.pairs {
            let v = Self::value(r, p);
            if v < p.lower - tol * p.lower.abs().max(1.0) || v > p.upper + tol * p.upper.abs().max(1.0) {
                return false;
            }
            match p.kind {
                PairKind::Load => pinned.load[p.element][p.period] = v,
                PairKind::Der => pinned.der[p.element][p.period] = v,
            }
        }
        self.max_gap(&pinned, r) <= tol
    }
}

/// First-stage decision: traded quantities and the battery net-output
/// baseline `[battery][period]`, kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    pub quantities: TradeQuantities,
    pub baseline: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustOptions {
    pub case: CaseMask,
    /// Let batteries re-dispatch after the realization; off pins them to the
    /// first-stage baseline.
    pub battery_recourse: bool,
}

impl Default for RobustOptions {
    fn default() -> Self {
        RobustOptions { case: CaseMask::Case4, battery_recourse: true }
    }
}
