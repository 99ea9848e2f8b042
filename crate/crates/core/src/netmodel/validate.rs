use std::collections::HashSet;
use std::fmt;

use super::{BoxShape, RadialTree, Scenario, SCHEMA_VERSION};
use crate::adn::battery_cycle_life;

/// One violated invariant, located by its path in the scenario document.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

/// Every invariant a scenario violates, in document order.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scenario failed validation ({} problems)", self.violations.len())?;
        for v in &self.violations {
            write!(f, "\n  {}: {}", v.path, v.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationError {}

struct Checker {
    out: Vec<Violation>,
}

impl Checker {
    fn fail(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.out.push(Violation { path: path.into(), message: message.into() });
    }

    fn check(&mut self, ok: bool, path: impl Into<String>, message: impl Into<String>) {
        if !ok {
            self.fail(path, message);
        }
    }

    fn positive(&mut self, value: f64, path: impl Into<String>) {
        self.check(value > 0.0 && value.is_finite(), path, format!("must be positive, got {value}"));
    }

    fn nonnegative(&mut self, value: f64, path: impl Into<String>) {
        self.check(value >= 0.0 && value.is_finite(), path, format!("must be nonnegative, got {value}"));
    }

    fn series(&mut self, values: &[f64], horizon: usize, optional: bool, path: &str) {
        if values.is_empty() && optional {
            return;
        }
        if values.len() != horizon {
            self.fail(path, format!("has {} entries, horizon is {horizon}", values.len()));
        }
        if let Some(bad) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            self.fail(format!("{path}[{bad}]"), format!("must be nonnegative, got {}", values[bad]));
        }
    }

    fn unique<'a>(&mut self, ids: impl Iterator<Item = &'a str>, path: &str) {
        let mut seen = HashSet::new();
        for id in ids {
            if !seen.insert(id) {
                self.fail(path, format!("duplicate id {id:?}"));
            }
        }
    }
}

impl Scenario {
    /// Checks every structural and numerical invariant, reporting all
    /// violations at once.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut c = Checker { out: Vec::new() };
        let horizon = self.market.gas_price.len();

        c.check(
            self.schema_version == SCHEMA_VERSION,
            "schema_version",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
        );

        c.positive(self.market.dt_hours, "market.dt_hours");
        c.check(horizon > 0, "market.gas_price", "horizon must be at least one period");
        c.series(&self.market.gas_price, horizon, false, "market.gas_price");
        c.series(&self.market.electricity_price, horizon, false, "market.electricity_price");

        let b = &self.blend;
        c.positive(b.hhv_ch4, "blend.hhv_ch4");
        c.positive(b.hhv_h2, "blend.hhv_h2");
        c.check(b.hhv_h2 < b.hhv_ch4, "blend.hhv_h2", "hydrogen heating value must be below methane's");
        c.check((0.0..=1.0).contains(&b.omega_max), "blend.omega_max", "must lie in [0, 1]");
        c.positive(b.mj_per_kwh, "blend.mj_per_kwh");

        self.validate_gas(&mut c, horizon);
        self.validate_power(&mut c, horizon);
        self.validate_devices(&mut c, horizon);

        let u = &self.uncertainty;
        c.nonnegative(u.load_radius, "uncertainty.load_radius");
        c.nonnegative(u.der_radius, "uncertainty.der_radius");
        if u.shape == BoxShape::Symmetric {
            c.check(u.load_radius <= 1.0, "uncertainty.load_radius", "symmetric radius above 1 allows negative loads");
            c.check(u.der_radius <= 1.0, "uncertainty.der_radius", "symmetric radius above 1 allows negative output");
        }

        let a = &self.algorithm;
        for (k, r) in a.rho.iter().enumerate() {
            c.positive(*r, format!("algorithm.rho[{k}]"));
        }
        c.positive(a.admm_tol, "algorithm.admm_tol");
        c.positive(a.admm_price_tol, "algorithm.admm_price_tol");
        c.check(a.admm_max_iter > 0, "algorithm.admm_max_iter", "must be positive");
        if let Some(p) = a.pressure_penalty {
            c.positive(p, "algorithm.pressure_penalty");
        }
        if let Some(p) = a.loss_penalty {
            c.positive(p, "algorithm.loss_penalty");
        }
        if let Some(p) = a.shed_penalty {
            c.positive(p, "algorithm.shed_penalty");
        }
        c.positive(a.blend_tol, "algorithm.blend_tol");
        c.check(a.blend_max_iter > 0, "algorithm.blend_max_iter", "must be positive");
        c.positive(a.ccg_gap_tol, "algorithm.ccg_gap_tol");
        c.check(a.ccg_max_iter > 0, "algorithm.ccg_max_iter", "must be positive");
        c.check(a.bcd_max_iter > 0, "algorithm.bcd_max_iter", "must be positive");
        c.positive(a.solver_tol, "algorithm.solver_tol");
        c.check(a.price_cap_factor > 1.0, "algorithm.price_cap_factor", "must exceed 1");

        if c.out.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { violations: c.out })
        }
    }

    fn validate_gas(&self, c: &mut Checker, horizon: usize) {
        let g = &self.gas;
        c.unique(g.nodes.iter().map(|n| n.id.as_str()), "gas.nodes");
        for (i, n) in g.nodes.iter().enumerate() {
            let path = format!("gas.nodes[{i}]");
            if !(n.pressure_min > 0.0 && n.pressure_min < n.pressure_max) {
                c.fail(
                    format!("{path}.pressure_min"),
                    format!(
                        "node {}: pressure bounds need 0 < min < max, got [{}, {}]",
                        n.id, n.pressure_min, n.pressure_max
                    ),
                );
            }
            c.series(&n.load, horizon, true, &format!("{path}.load"));
        }
        c.check(self.gas_node_index(&g.source).is_some(), "gas.source", format!("unknown node {:?}", g.source));
        let mut edges = Vec::new();
        for (i, p) in g.pipes.iter().enumerate() {
            let path = format!("gas.pipes[{i}]");
            c.positive(p.weymouth, format!("{path}.weymouth"));
            match (self.gas_node_index(&p.from), self.gas_node_index(&p.to)) {
                (Some(a), Some(b)) => edges.push((a, b)),
                _ => c.fail(path, format!("references unknown node ({} -> {})", p.from, p.to)),
            }
        }
        if edges.len() == g.pipes.len() {
            if let Some(root) = self.gas_node_index(&g.source) {
                if let Err(e) = RadialTree::build(g.nodes.len(), &edges, root) {
                    c.fail("gas.pipes", e);
                }
            }
        }
    }

    fn validate_power(&self, c: &mut Checker, horizon: usize) {
        let p = &self.power;
        c.positive(p.base_kva, "power.base_kva");
        c.unique(p.buses.iter().map(|b| b.id.as_str()), "power.buses");
        for (i, b) in p.buses.iter().enumerate() {
            let path = format!("power.buses[{i}]");
            if !(b.v_min > 0.0 && b.v_min < b.v_max) {
                c.fail(
                    format!("{path}.v_min"),
                    format!("bus {}: voltage bounds need 0 < min < max, got [{}, {}]", b.id, b.v_min, b.v_max),
                );
            }
            c.series(&b.p_load, horizon, true, &format!("{path}.p_load"));
            if !b.q_load.is_empty() && b.q_load.len() != horizon {
                c.fail(format!("{path}.q_load"), format!("has {} entries, horizon is {horizon}", b.q_load.len()));
            }
        }
        match self.bus_index(&p.root) {
            None => c.fail("power.root", format!("unknown bus {:?}", p.root)),
            Some(r) => {
                let bus = &p.buses[r];
                c.check(
                    p.root_voltage >= bus.v_min && p.root_voltage <= bus.v_max,
                    "power.root_voltage",
                    "outside the root bus voltage bounds",
                );
            }
        }
        let mut edges = Vec::new();
        for (i, br) in p.branches.iter().enumerate() {
            let path = format!("power.branches[{i}]");
            c.nonnegative(br.r, format!("{path}.r"));
            c.nonnegative(br.x, format!("{path}.x"));
            match (self.bus_index(&br.from), self.bus_index(&br.to)) {
                (Some(a), Some(b)) => edges.push((a, b)),
                _ => c.fail(path, format!("references unknown bus ({} -> {})", br.from, br.to)),
            }
        }
        if edges.len() == p.branches.len() {
            if let Some(root) = self.bus_index(&p.root) {
                if let Err(e) = RadialTree::build(p.buses.len(), &edges, root) {
                    c.fail("power.branches", e);
                }
            }
        }
    }

    fn validate_devices(&self, c: &mut Checker, horizon: usize) {
        let d = &self.devices;
        let bus_ok = |id: &str| self.bus_index(id).is_some();
        let node_ok = |id: &str| self.gas_node_index(id).is_some();

        c.unique(d.electrolyzers.iter().map(|e| e.id.as_str()), "devices.electrolyzers");
        for (i, e) in d.electrolyzers.iter().enumerate() {
            let path = format!("devices.electrolyzers[{i}]");
            c.check(bus_ok(&e.bus), format!("{path}.bus"), format!("unknown bus {:?}", e.bus));
            c.check(node_ok(&e.gas_node), format!("{path}.gas_node"), format!("unknown node {:?}", e.gas_node));
            c.positive(e.rated_kw, format!("{path}.rated_kw"));
            c.check(e.efficiency > 0.0 && e.efficiency <= 1.0, format!("{path}.efficiency"), "must lie in (0, 1]");
            c.nonnegative(e.power_cost, format!("{path}.power_cost"));
            c.positive(e.lifetime_h, format!("{path}.lifetime_h"));
        }
        c.unique(d.fuel_cells.iter().map(|e| e.id.as_str()), "devices.fuel_cells");
        for (i, e) in d.fuel_cells.iter().enumerate() {
            let path = format!("devices.fuel_cells[{i}]");
            c.check(bus_ok(&e.bus), format!("{path}.bus"), format!("unknown bus {:?}", e.bus));
            c.check(node_ok(&e.gas_node), format!("{path}.gas_node"), format!("unknown node {:?}", e.gas_node));
            c.positive(e.rated_kw, format!("{path}.rated_kw"));
            c.check(e.efficiency > 0.0 && e.efficiency <= 1.0, format!("{path}.efficiency"), "must lie in (0, 1]");
            c.nonnegative(e.power_cost, format!("{path}.power_cost"));
            c.positive(e.lifetime_h, format!("{path}.lifetime_h"));
        }
        c.unique(d.hydrogen_tanks.iter().map(|e| e.id.as_str()), "devices.hydrogen_tanks");
        for (i, h) in d.hydrogen_tanks.iter().enumerate() {
            let path = format!("devices.hydrogen_tanks[{i}]");
            c.check(node_ok(&h.gas_node), format!("{path}.gas_node"), format!("unknown node {:?}", h.gas_node));
            c.positive(h.capacity_m3, format!("{path}.capacity_m3"));
            c.nonnegative(h.capacity_cost, format!("{path}.capacity_cost"));
            c.positive(h.lifetime_days, format!("{path}.lifetime_days"));
        }
        c.unique(d.batteries.iter().map(|e| e.id.as_str()), "devices.batteries");
        for (i, b) in d.batteries.iter().enumerate() {
            let path = format!("devices.batteries[{i}]");
            c.check(bus_ok(&b.bus), format!("{path}.bus"), format!("unknown bus {:?}", b.bus));
            c.positive(b.rated_kw, format!("{path}.rated_kw"));
            c.positive(b.capacity_kwh, format!("{path}.capacity_kwh"));
            c.nonnegative(b.capacity_cost, format!("{path}.capacity_cost"));
            c.nonnegative(b.power_cost, format!("{path}.power_cost"));
            c.check(
                b.soc_min >= 0.0 && b.soc_min < b.soc_max && b.soc_max <= 1.0,
                format!("{path}.soc_min"),
                "state-of-charge bounds need 0 <= min < max <= 1",
            );
            c.check(
                b.soc_min <= 0.5 && b.soc_max >= 0.5,
                format!("{path}.soc_min"),
                "the half-full boundary state must lie within the state-of-charge bounds",
            );
            match battery_cycle_life(b.depth, &b.cycle_life) {
                Ok(n) if n > 0.0 => {}
                _ => c.fail(format!("{path}.depth"), "cycle life must be positive at the configured depth"),
            }
        }
        c.unique(d.ders.iter().map(|e| e.id.as_str()), "devices.ders");
        for (i, g) in d.ders.iter().enumerate() {
            let path = format!("devices.ders[{i}]");
            c.check(bus_ok(&g.bus), format!("{path}.bus"), format!("unknown bus {:?}", g.bus));
            c.series(&g.p_forecast, horizon, false, &format!("{path}.p_forecast"));
            if !g.q_injection.is_empty() && g.q_injection.len() != horizon {
                c.fail(format!("{path}.q_injection"), format!("has {} entries, horizon is {horizon}", g.q_injection.len()));
            }
        }
    }
}
