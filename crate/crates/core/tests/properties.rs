//! Invariants that must hold for any admissible input, checked on generated
//! data. Solver-backed properties run few cases; pure arithmetic runs many.

use hcng_bargain::adn::{self, AdnOptions};
use hcng_bargain::bargain::{self, SurplusTerms, TradeQuantities};
use hcng_bargain::conic::{self, ConicProgram, LinExpr};
use hcng_bargain::gdn::{self, GdnTrade};
use hcng_bargain::netmodel::{self, hhv_mix, hydrogen_fraction, BlendState, Scenario};
use hcng_bargain::robust::{self, CaseMask, FirstStage, RobustOptions, UncertaintyBox};
use proptest::prelude::*;

fn tiny() -> Scenario {
    netmodel::bundled("tiny4x3").unwrap()
}

fn solver_cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, ..ProptestConfig::default() }
}

proptest! {
    #[test]
    fn blend_fraction_and_heating_value_stay_in_range(h2 in 0.0f64..500.0, ch4 in 1.0f64..10_000.0) {
        let s = tiny();
        let omega = hydrogen_fraction(h2, ch4).unwrap();
        prop_assert!((0.0..1.0).contains(&omega));
        let hhv = hhv_mix(omega, s.blend.hhv_h2, s.blend.hhv_ch4).unwrap();
        prop_assert!(hhv <= s.blend.hhv_ch4 + 1e-12 && hhv >= s.blend.hhv_h2 - 1e-12);
        // Energy is conserved: blended volume times its heating value equals
        // the energy of the two components.
        let energy = h2 * s.blend.hhv_h2 + ch4 * s.blend.hhv_ch4;
        prop_assert!(((h2 + ch4) * hhv - energy).abs() <= 1e-9 * energy);
    }

    #[test]
    fn equivalent_load_never_shrinks_as_hydrogen_rises(a in 0.0f64..0.2, b in 0.0f64..0.2, load in 0.0f64..5000.0) {
        let s = tiny();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let e = |w: f64| {
            let mix = hhv_mix(w, s.blend.hhv_h2, s.blend.hhv_ch4).unwrap();
            netmodel::equivalent_gas_load(load, mix, s.blend.hhv_ch4).unwrap()
        };
        prop_assert!(e(hi) >= e(lo) - 1e-9);
        prop_assert!((e(0.0) - load).abs() <= 1e-12 * load.max(1.0));
    }

    #[test]
    fn surplus_split_accounts_for_every_dollar(
        c0_e in 0.0f64..1e4, c0_g in 0.0f64..1e4, a_e in 0.0f64..1e4, a_g in 0.0f64..1e4, t in -1e4f64..1e4,
    ) {
        let terms = SurplusTerms { c0_e, c0_g, a_e, a_g };
        let (de, dg) = terms.split(t);
        prop_assert!((de + dg - terms.surplus()).abs() <= 1e-9 * (1.0 + terms.surplus().abs() + t.abs()));
        let (e, g) = terms.split(terms.equal_split_transfer());
        prop_assert!((e - g).abs() <= 1e-9 * (1.0 + c0_e + c0_g + a_e + a_g));
    }

    #[test]
    fn box_vertices_round_trip_and_stay_inside(bits in proptest::collection::vec(any::<bool>(), 8)) {
        let s = tiny();
        let bx = UncertaintyBox::new(&s, CaseMask::Case4);
        prop_assert_eq!(bx.len(), 8);
        let v = bx.vertex(&bits);
        prop_assert!(bx.contains(&v, 1e-12));
        prop_assert_eq!(bx.vertex_bits(&v, 1e-12), Some(bits));
    }

    #[test]
    fn scenario_text_round_trips(load_scale in 0.5f64..1.5, radius in 0.0f64..0.5) {
        let mut s = tiny();
        for b in &mut s.power.buses {
            for p in &mut b.p_load {
                *p *= load_scale;
            }
        }
        s.uncertainty.der_radius = radius;
        let back = netmodel::scenario_from_str(&s.to_toml()).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.content_hash(), s.content_hash());
    }
}

proptest! {
    #![proptest_config(solver_cases(12))]

    #[test]
    fn log_utilities_split_a_shared_budget_evenly(budget in 0.1f64..1e4) {
        let mut p = ConicProgram::new();
        let x = p.bounded("x", 0.0, budget);
        p.add_log_utility(1.0, LinExpr::constant(budget) - x, 1e-9 * budget);
        p.add_log_utility(1.0, x, 1e-9 * budget);
        let sol = conic::solve(&p, 1e-9).unwrap();
        // The objective is flat at the optimum (second order in the error),
        // so the point is only pinned to about the square root of the
        // solver tolerance.
        prop_assert!((sol.value(x) - 0.5 * budget).abs() <= 1e-3 * budget, "x = {} of {budget}", sol.value(x));
    }

    #[test]
    fn more_load_never_costs_the_adn_less(scale in 0.0f64..0.3, period in 0usize..4) {
        let s = tiny();
        let blend = BlendState::methane(&s.blend, s.horizon());
        let base = adn::solve_adn(&s, &blend, AdnOptions::default()).unwrap();
        let mut u = robust::Realization::forecast(&s);
        for row in &mut u.load {
            row[period] *= 1.0 + scale;
        }
        let more = adn::solve_adn(&s, &blend, AdnOptions { realization: Some(&u), ..Default::default() }).unwrap();
        prop_assert!(more.objective >= base.objective - 1e-6 * base.objective.abs().max(1.0));
    }

    #[test]
    fn fixed_trades_keep_both_relaxations_tight(p2g in 0.0f64..150.0, g2p in 0.0f64..60.0, period in 0usize..4) {
        let s = tiny();
        let blend = BlendState::methane(&s.blend, s.horizon());
        let mut q = TradeQuantities::zero(&s);
        q.p2g[0][period] = p2g;
        q.g2p[0][period] = g2p;
        let a = adn::solve_adn(&s, &blend, AdnOptions { trade: adn::AdnTrade::Fixed(&q), ..Default::default() }).unwrap();
        let g = gdn::solve_gdn(&s, &blend, GdnTrade::Fixed(&q)).unwrap();
        prop_assert!(adn::branchflow_tightness(&s, &a.schedule) <= 1e-4);
        prop_assert!(gdn::weymouth_tightness(&s, &g.schedule) <= 1e-4);
        prop_assert!(g.schedule.balance_residual(&s) <= 1e-6);
    }

    #[test]
    fn adversary_outputs_are_vertices_for_any_first_stage(level in 0.0f64..1.0, period in 0usize..4) {
        let s = tiny();
        let blend = BlendState::methane(&s.blend, s.horizon());
        let mut q = TradeQuantities::zero(&s);
        q.p2g[0][period] = 150.0 * level;
        let det = adn::solve_adn(&s, &blend, AdnOptions { trade: adn::AdnTrade::Fixed(&q), ..Default::default() }).unwrap();
        let y = FirstStage { quantities: q, baseline: det.schedule.battery_net() };
        let bx = UncertaintyBox::new(&s, CaseMask::Case4);
        let r = robust::solve_sp_bcd(&s, &blend, &y, &bx, RobustOptions::default()).unwrap();
        prop_assert!(bx.vertex_bits(&r.worst, 1e-12).is_some());
        prop_assert!(r.value >= det.objective - 1e-6 * det.objective.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(solver_cases(4))]

    #[test]
    fn bargaining_is_individually_rational_under_price_shifts(gas in 0.8f64..1.2, power in 0.8f64..1.2) {
        let mut s = tiny();
        for p in &mut s.market.gas_price {
            *p *= gas;
        }
        for p in &mut s.market.electricity_price {
            *p *= power;
        }
        let o = bargain::cooperate(&s).unwrap();
        let tol = 1e-6 * (o.c0_e.abs() + o.c0_g.abs()).max(1.0);
        prop_assert!(o.delta_e >= -tol && o.delta_g >= -tol, "{} {}", o.delta_e, o.delta_g);
        if o.no_bargain.is_none() {
            prop_assert!((o.delta_e - o.delta_g).abs() <= 0.01 * o.surplus);
        }
        for w in &o.gdn.schedule.blend.omega {
            prop_assert!(*w <= s.blend.omega_max + 1e-9);
        }
    }
}
