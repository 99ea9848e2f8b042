use super::{FirstStage, Realization, RobustOptions};
use crate::adn::{add_adn_block, AdnBlock, AdnOptions, AdnTrade, BatteryMode};
use crate::bargain::{
    quantity_admm_config, run_consensus, unflatten, Agent, AdmmState, IterationTrace, TradeQuantities,
};
use crate::conic::{self, ConicProgram, LinExpr, Var};
use crate::error::{Error, Result};
use crate::gdn::{self, add_gdn_block, GdnRun, GdnTrade};
use crate::netmodel::{BlendState, Scenario};

/// A realization the master must be robust against, with the recourse the
/// inner search found for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub realization: Realization,
    pub adjustment: Vec<Vec<f64>>,
}

struct AdnMaster {
    program: ConicProgram,
    nominal: AdnBlock,
    eta: Var,
}

/// The ADN side of the master: a forecast block whose battery schedule is
/// the first-stage baseline, one recourse copy per cut sharing its trades,
/// and an epigraph variable above every block's cost.
fn adn_master(s: &Scenario, blend: &BlendState, cuts: &[Cut], trade: AdnTrade<'_>, opts: RobustOptions) -> AdnMaster {
    let mut p = ConicProgram::new();
    let nominal = add_adn_block(&mut p, s, blend, AdnOptions { trade, ..Default::default() });
    let eta = p.free("eta");
    p.ge(LinExpr::from(eta) - nominal.cost.objective(), 0.0, "epigraph");
    let baseline = nominal.battery_net();
    for cut in cuts {
        let copy = add_adn_block(
            &mut p,
            s,
            blend,
            AdnOptions {
                trade: AdnTrade::Shared { p2g: &nominal.p2g, g2p: &nominal.g2p },
                realization: Some(&cut.realization),
                battery: BatteryMode::Linked { baseline: &baseline, adjust: opts.battery_recourse },
                shed: true,
                fuel_pin: None,
            },
        );
        p.ge(LinExpr::from(eta) - copy.cost.objective(), 0.0, "epigraph");
    }
    p.minimize(LinExpr::from(eta));
    AdnMaster { program: p, nominal, eta }
}

#[derive(Debug, Clone)]
pub struct MasterResult {
    pub first_stage: FirstStage,
    /// Master objective at the first stage: worst ADN cost over the
    /// forecast and the cuts, plus the GDN cost when trading.
    pub value: f64,
    pub adn_value: f64,
    pub gdn: Option<GdnRun>,
    pub state: Option<AdmmState>,
    pub trace: IterationTrace,
}

/// Fixed-trade evaluation of the ADN master: its value and baseline.
fn adn_master_at(s: &Scenario, blend: &BlendState, cuts: &[Cut], q: &TradeQuantities, opts: RobustOptions) -> Result<(f64, Vec<Vec<f64>>)> {
    let m = adn_master(s, blend, cuts, AdnTrade::Fixed(q), opts);
    let sol = conic::solve(&m.program, s.algorithm.solver_tol)?
        .require_optimal("robust master")
        .map_err(|e| name_cut(e, cuts.len()))?;
    let baseline = m.nominal.battery_net().iter().map(|row| row.iter().map(|e| sol.eval(e)).collect()).collect();
    Ok((sol.value(m.eta), baseline))
}

fn name_cut(e: Error, n: usize) -> Error {
    match e {
        Error::Infeasible { family, .. } => Error::Infeasible {
            context: format!("robust master with {n} cuts (latest cut #{n})"),
            family,
        },
        other => other,
    }
}

/// Solves the master. When trading, the ADN master and the GDN negotiate the
/// quantities by consensus ADMM, warm-started from `warm`; otherwise the ADN
/// master is solved alone with trades at zero.
pub fn solve_mp(
    s: &Scenario,
    blend: &BlendState,
    cuts: &[Cut],
    opts: RobustOptions,
    trading: bool,
    warm: Option<AdmmState>,
) -> Result<MasterResult> {
    if !trading {
        let q = TradeQuantities::zero(s);
        let (adn_value, baseline) = adn_master_at(s, blend, cuts, &q, opts)?;
        return Ok(MasterResult {
            first_stage: FirstStage { quantities: q, baseline },
            value: adn_value,
            adn_value,
            gdn: None,
            state: None,
            trace: IterationTrace::default(),
        });
    }
    let m = adn_master(s, blend, cuts, AdnTrade::Free, opts);
    let coupled_a = m.nominal.p2g.iter().chain(&m.nominal.g2p).flatten().copied().collect();
    let adn_agent = Agent { name: "ADN master subproblem", program: m.program, coupled: coupled_a };
    let mut pg = ConicProgram::new();
    let gb = add_gdn_block(&mut pg, s, blend, GdnTrade::Free);
    pg.minimize(gb.cost.objective());
    let coupled_g = gb.p2g.iter().chain(&gb.g2p).flatten().copied().collect();
    let gdn_agent = Agent { name: "GDN master subproblem", program: pg, coupled: coupled_g };
    let mut cfg = quantity_admm_config(s, blend);
    cfg.label = "master";
    let start = warm.unwrap_or_else(|| AdmmState::cold(vec![0.0; cfg.rho.len()]));
    let res = run_consensus(&adn_agent, &gdn_agent, &cfg, start).map_err(|e| name_cut(e, cuts.len()))?;
    let q = unflatten(s, &res.state.z);
    let (adn_value, baseline) = adn_master_at(s, blend, cuts, &q, opts)?;
    let gdn_run = gdn::solve_gdn(s, blend, GdnTrade::Fixed(&q))?;
    Ok(MasterResult {
        first_stage: FirstStage { quantities: q, baseline },
        value: adn_value + gdn_run.objective,
        adn_value,
        gdn: Some(gdn_run),
        state: Some(res.state),
        trace: res.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::bundled;

    #[test]
    fn forecast_cut_is_vacuous() {
        let s = bundled("tiny4x3").unwrap();
        let blend = BlendState::methane(&s.blend, s.horizon());
        let opts = RobustOptions::default();
        let empty = solve_mp(&s, &blend, &[], opts, false, None).unwrap();
        let cut = Cut { realization: Realization::forecast(&s), adjustment: vec![vec![0.0; s.horizon()]; 1] };
        let with = solve_mp(&s, &blend, &[cut], opts, false, None).unwrap();
        assert!((with.value - empty.value).abs() <= 1e-6 * empty.value.abs().max(1.0));
    }
}
