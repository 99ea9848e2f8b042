//! Brute-force checks for the decomposition algorithms.
//!
//! The oracles share the entity models with the code they check but none
//! of the algorithms: no consensus iterations, no dual-driven vertex steps,
//! no cut bookkeeping. They enumerate and compare.

use std::thread;

use crate::adn::{self, AdnOptions, AdnTrade, BatteryMode};
use crate::bargain::{BargainOutcome, TradeQuantities};
use crate::error::{Error, Result};
use crate::gdn::{self, GdnTrade};
use crate::netmodel::{BlendState, Scenario};
use crate::robust::{CaseMask, FirstStage, Realization, RobustOptions, UncertaintyBox};

/// Most uncertain entries the vertex enumeration accepts (2^16 vertices).
pub const MAX_UNCERTAIN_PAIRS: usize = 16;
/// Most grid points the quantity grid search accepts.
pub const MAX_GRID_POINTS: usize = 20_000;

/// Comparison of an oracle value with the value under test.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub check: String,
    pub oracle_value: f64,
    pub tested_value: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Number of points the oracle evaluated.
    pub enumeration_size: usize,
}

impl OracleReport {
    /// Relative agreement check: `|tested − oracle| ≤ tol·max(|oracle|, 1)`.
    pub fn agreement(check: &str, oracle_value: f64, tested_value: f64, tolerance: f64, size: usize) -> OracleReport {
        let abs_gap = (tested_value - oracle_value).abs();
        let rel_gap = abs_gap / oracle_value.abs().max(1.0);
        OracleReport {
            check: check.to_string(),
            oracle_value,
            tested_value,
            abs_gap,
            rel_gap,
            tolerance,
            passed: rel_gap <= tolerance,
            enumeration_size: size,
        }
    }
}

/// Runs `f` over `0..n` on all available cores; results come back in index
/// order so reductions over them are deterministic.
fn parallel_map<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = thread::available_parallelism().map_or(1, |w| w.get()).min(n.max(1));
    let chunk = n.div_ceil(workers.max(1)).max(1);
    let f = &f;
    let parts: Vec<Result<Vec<T>>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|lo| scope.spawn(move || (lo..(lo + chunk).min(n)).map(f).collect::<Result<Vec<T>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("oracle worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct WorstCase {
    pub realization: Realization,
    /// Vertex coordinates, `true` at the upper end.
    pub vertex: Vec<bool>,
    pub value: f64,
    pub vertices: usize,
}

/// Max over every box vertex of the cheapest ADN recourse for a fixed first
/// stage. Ties go to the lexicographically smallest vertex.
pub fn enumerate_worst_case(
    s: &Scenario,
    blend: &BlendState,
    y: &FirstStage,
    case: CaseMask,
    battery_recourse: bool,
) -> Result<WorstCase> {
    let bx = UncertaintyBox::new(s, case);
    let n = bx.len();
    if n > MAX_UNCERTAIN_PAIRS {
        return Err(Error::OracleRefused(format!(
            "{n} uncertain entries exceed the enumeration cap of {MAX_UNCERTAIN_PAIRS}"
        )));
    }
    let count = 1usize << n;
    // Vertex k has pair i at its upper end iff bit (n−1−i) of k is set, so
    // increasing k is lexicographic order on the coordinate vector.
    let bits_of = |k: usize| -> Vec<bool> { (0..n).map(|i| (k >> (n - 1 - i)) & 1 == 1).collect() };
    let values = parallel_map(count, |k| {
        let u = bx.vertex(&bits_of(k));
        let run = adn::solve_adn(
            s,
            blend,
            AdnOptions {
                trade: AdnTrade::Fixed(&y.quantities),
                realization: Some(&u),
                battery: BatteryMode::Pinned { baseline: &y.baseline, adjust: battery_recourse },
                shed: true,
                fuel_pin: None,
            },
        )?;
        Ok(run.objective)
    })?;
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    let vertex = bits_of(best);
    Ok(WorstCase { realization: bx.vertex(&vertex), vertex, value: values[best], vertices: count })
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// Best joint benefit: disagreement costs minus joint operating cost.
    pub best_benefit: f64,
    pub best: TradeQuantities,
    /// Joint cost without trade at the blend of the search; benefits are
    /// measured from here.
    pub baseline: f64,
    /// Largest joint-benefit change one grid step can cause, so the true
    /// optimum exceeds the grid best by at most this.
    pub slack: f64,
    pub points: usize,
}

/// Grid search over trade quantities with `resolution` points per traded
/// (device, period) entry, each point priced by standalone fixed-trade
/// solves of both entities.
pub fn grid_search_q1(s: &Scenario, blend: &BlendState, resolution: usize) -> Result<GridResult> {
    let links = s.devices.electrolyzers.len() + s.devices.fuel_cells.len();
    let horizon = s.horizon();
    if links > 2 || horizon > 4 {
        return Err(Error::OracleRefused(format!(
            "grid search needs at most 2 trade links and 4 periods, got {links} and {horizon}"
        )));
    }
    if resolution < 2 {
        return Err(Error::OracleRefused("grid needs at least two points per axis".into()));
    }
    let dims = links * horizon;
    let points = (resolution as f64).powi(dims as i32);
    if points > MAX_GRID_POINTS as f64 {
        return Err(Error::OracleRefused(format!("{points} grid points exceed the cap of {MAX_GRID_POINTS}")));
    }
    let points = points as usize;
    let upper: Vec<f64> = s
        .devices
        .electrolyzers
        .iter()
        .flat_map(|e| vec![e.rated_kw; horizon])
        .chain(
            s.devices
                .fuel_cells
                .iter()
                .flat_map(|f| (0..horizon).map(|t| adn::max_fuel_volume(s, f, blend.hhv_mix[t])).collect::<Vec<_>>()),
        )
        .collect();
    let ne = s.devices.electrolyzers.len();
    let quantities_at = |k: usize| -> TradeQuantities {
        let mut q = TradeQuantities::zero(s);
        let mut rest = k;
        for (d, ub) in upper.iter().enumerate() {
            let level = rest % resolution;
            rest /= resolution;
            let v = ub * level as f64 / (resolution - 1) as f64;
            let (dev, t) = (d / horizon, d % horizon);
            if dev < ne {
                q.p2g[dev][t] = v;
            } else {
                q.g2p[dev - ne][t] = v;
            }
        }
        q
    };
    let c0_e = adn::solve_adn(s, blend, AdnOptions::default())?.costs.total;
    let c0_g = gdn::solve_gdn(s, blend, GdnTrade::Zero)?.costs.total;
    let values = parallel_map(points, |k| {
        let q = quantities_at(k);
        let a = adn::solve_adn(s, blend, AdnOptions { trade: AdnTrade::Fixed(&q), ..Default::default() });
        let g = gdn::solve_gdn(s, blend, GdnTrade::Fixed(&q));
        // Points a side cannot physically absorb are simply not candidates.
        Ok(match (a, g) {
            (Ok(a), Ok(g)) => Some(c0_e + c0_g - a.costs.total - g.costs.total),
            (Err(Error::Infeasible { .. }), _) | (_, Err(Error::Infeasible { .. })) => None,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        })
    })?;
    let mut best_k = 0;
    let mut best = f64::NEG_INFINITY;
    for (k, v) in values.iter().enumerate() {
        if let Some(v) = v {
            if *v > best {
                best = *v;
                best_k = k;
            }
        }
    }
    // One grid step in every coordinate, valued at the dearest unit price
    // either side faces for that commodity.
    let mu_max = s.market.electricity_price.iter().cloned().fold(0.0, f64::max);
    let eps_max = s.market.gas_price.iter().cloned().fold(0.0, f64::max);
    let step = 1.0 / (resolution - 1) as f64;
    let slack: f64 = upper
        .iter()
        .enumerate()
        .map(|(d, ub)| {
            let unit = if d / horizon < ne {
                mu_max * s.dt()
            } else {
                eps_max + mu_max / s.m3_per_kwh(s.blend.hhv_ch4)
            };
            ub * step * unit
        })
        .sum();
    Ok(GridResult { best_benefit: best, best: quantities_at(best_k), baseline: c0_e + c0_g, slack, points })
}

/// Scans the transfer over the whole rational range (every split of `S`
/// from all-to-the-GDN to all-to-the-ADN) at `S/1000` steps for the best
/// log-sum split and compares the ADN's share with the bargained one.
pub fn transfer_split_check(o: &BargainOutcome) -> OracleReport {
    let s = o.surplus;
    let tested_share = if s > 0.0 { o.delta_e / s } else { 0.0 };
    if o.no_bargain.is_some() || s <= 0.0 {
        return OracleReport {
            check: "transfer split".into(),
            oracle_value: 0.0,
            tested_value: tested_share,
            abs_gap: 0.0,
            rel_gap: 0.0,
            tolerance: 0.01,
            passed: (o.delta_e - o.delta_g).abs() <= 1e-9,
            enumeration_size: 0,
        };
    }
    // Own gains before any payment.
    let gain_e = o.delta_e + o.transfer;
    let gain_g = o.delta_g - o.transfer;
    let steps = 1000;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 1..steps {
        let t = gain_e - s * k as f64 / steps as f64;
        let (de, dg) = (gain_e - t, gain_g + t);
        let v = de.ln() + dg.ln();
        if v > best.0 {
            best = (v, de);
        }
    }
    let oracle_share = best.1 / s;
    let abs_gap = (tested_share - oracle_share).abs();
    OracleReport {
        check: "transfer split".into(),
        oracle_value: oracle_share,
        tested_value: tested_share,
        abs_gap,
        rel_gap: abs_gap,
        tolerance: 0.01,
        passed: abs_gap <= 0.01,
        enumeration_size: steps - 1,
    }
}

/// Ensures a robust run's worst case is certified by enumeration.
pub fn certify_worst_case(s: &Scenario, blend: &BlendState, y: &FirstStage, opts: RobustOptions, claimed: f64) -> Result<OracleReport> {
    let w = enumerate_worst_case(s, blend, y, opts.case, opts.battery_recourse)?;
    Ok(OracleReport::agreement("worst case", w.value, claimed, 1e-6, w.vertices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bargain::cooperate;
    use crate::netmodel::bundled;

    fn det_first_stage(s: &Scenario) -> (BlendState, FirstStage) {
        let blend = BlendState::methane(&s.blend, s.horizon());
        let run = adn::solve_adn(s, &blend, AdnOptions::default()).unwrap();
        (blend, FirstStage { quantities: TradeQuantities::zero(s), baseline: run.schedule.battery_net() })
    }

    #[test]
    fn zero_radii_have_one_vertex() {
        let mut s = bundled("tiny4x3").unwrap();
        s.uncertainty.load_radius = 0.0;
        s.uncertainty.der_radius = 0.0;
        let (blend, y) = det_first_stage(&s);
        let w = enumerate_worst_case(&s, &blend, &y, CaseMask::Case4, true).unwrap();
        assert_eq!(w.vertices, 1);
        let det = adn::solve_adn(&s, &blend, AdnOptions::default()).unwrap();
        assert!((w.value - det.objective).abs() <= 1e-6 * det.objective.abs().max(1.0));
    }

    #[test]
    fn single_pair_takes_two_solves() {
        let mut s = bundled("tiny4x3").unwrap();
        s.uncertainty.der_radius = 0.0;
        for b in &mut s.power.buses {
            for (t, p) in b.p_load.iter_mut().enumerate() {
                if t > 0 {
                    *p = 0.0;
                }
            }
        }
        let (blend, y) = det_first_stage(&s);
        let w = enumerate_worst_case(&s, &blend, &y, CaseMask::Case2, true).unwrap();
        assert_eq!(w.vertices, 2);
        assert_eq!(w.vertex, vec![true]);
    }

    #[test]
    fn large_boxes_are_refused() {
        let s = bundled("ieee33_belgian20").unwrap();
        let (blend, y) = det_first_stage(&s);
        assert!(matches!(
            enumerate_worst_case(&s, &blend, &y, CaseMask::Case4, true),
            Err(Error::OracleRefused(_))
        ));
        assert!(matches!(grid_search_q1(&s, &blend, 3), Err(Error::OracleRefused(_))));
    }

    #[test]
    fn split_scan_on_a_symmetric_surplus() {
        let s = bundled("tiny4x3").unwrap();
        let mut o = cooperate(&s).unwrap();
        // Hand-built outcome: S = 10 split evenly.
        o.no_bargain = None;
        o.c0_e = 100.0;
        o.c0_g = 50.0;
        o.c_e = 95.0;
        o.c_g = 45.0;
        o.delta_e = 5.0;
        o.delta_g = 5.0;
        o.surplus = 10.0;
        o.transfer = 3.0;
        let r = transfer_split_check(&o);
        assert!(r.passed, "{r:?}");
        assert!((r.oracle_value - 0.5).abs() < 1e-3);
        o.delta_e = 8.0;
        o.delta_g = 2.0;
        o.transfer = 0.0;
        assert!(!transfer_split_check(&o).passed);
    }

    #[test]
    fn coarse_grid_origin_is_the_disagreement_point() {
        let s = bundled("tiny4x3").unwrap();
        let blend = BlendState::methane(&s.blend, s.horizon());
        let q = TradeQuantities::zero(&s);
        let a = adn::solve_adn(&s, &blend, AdnOptions { trade: AdnTrade::Fixed(&q), ..Default::default() }).unwrap();
        let d = crate::bargain::solve_independent(&s).unwrap();
        assert!((a.costs.total - d.c0_e).abs() < 1e-6);
    }
}
