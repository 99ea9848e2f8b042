//! Scenario data: both networks, the device fleet, market series and the
//! algorithm knobs, plus the hydrogen blending arithmetic.
//!
//! Scenarios are TOML documents (see `scenarios/` and the guide's schema
//! chapter). [`load_scenario`] parses and validates; every type here is plain
//! data and immutable once built.

mod blend;
mod topology;
mod validate;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use blend::{equivalent_gas_load, hhv_mix, hydrogen_fraction, BlendState};
pub use topology::RadialTree;
pub use validate::{ValidationError, Violation};

/// Version of the scenario file layout understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

/// Scenarios shipped with the crate, addressable by name from the CLI.
pub const BUNDLED: &[(&str, &str)] = &[
    ("tiny4x3", include_str!("../../scenarios/tiny4x3.toml")),
    ("ieee33_belgian20", include_str!("../../scenarios/ieee33_belgian20.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub variant: Variant,
    pub market: MarketData,
    pub blend: BlendConstants,
    pub gas: GasNetwork,
    pub power: PowerNetwork,
    pub devices: DeviceFleet,
    pub uncertainty: UncertaintySet,
    #[serde(default)]
    pub algorithm: AlgorithmParams,
}

/// Which comparison configuration a run represents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Cooperative GDN and ADN trading through ETs and SOFCs.
    #[default]
    Model1,
    /// No trading; the ADN owns the ETs, hydrogen tanks and SOFCs and runs a
    /// private pure-hydrogen conversion loop.
    Model2,
    /// No trading and no conversion devices; batteries only.
    Model3,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Model1 => "model1",
            Variant::Model2 => "model2",
            Variant::Model3 => "model3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketData {
    /// Length of one scheduling period in hours.
    pub dt_hours: f64,
    /// Natural-gas price per period, $/m³.
    pub gas_price: Vec<f64>,
    /// Electricity price per period, $/kWh.
    pub electricity_price: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendConstants {
    /// Higher heating value of methane, MJ/m³.
    pub hhv_ch4: f64,
    /// Higher heating value of hydrogen, MJ/m³.
    pub hhv_h2: f64,
    /// Cap on the hydrogen volume fraction.
    pub omega_max: f64,
    /// Energy unit base converting kWh to MJ.
    #[serde(default = "default_mj_per_kwh")]
    pub mj_per_kwh: f64,
}

fn default_mj_per_kwh() -> f64 {
    3.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasNetwork {
    /// Node connected to the higher-level gas network.
    pub source: String,
    pub nodes: Vec<GasNode>,
    pub pipes: Vec<GasPipe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasNode {
    pub id: String,
    /// Pressure bounds in bar.
    pub pressure_min: f64,
    pub pressure_max: f64,
    /// Methane-equivalent gas load per period, m³. Empty means no load.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub load: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasPipe {
    pub from: String,
    pub to: String,
    /// Weymouth constant, m³/(h·bar).
    pub weymouth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerNetwork {
    /// Apparent-power base for the per-unit branch quantities, kVA.
    pub base_kva: f64,
    /// Bus interfacing the transmission grid.
    pub root: String,
    /// Fixed voltage magnitude at the root bus, p.u.
    pub root_voltage: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: String,
    pub v_min: f64,
    pub v_max: f64,
    /// Active load forecast per period, kW. Empty means no load.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p_load: Vec<f64>,
    /// Reactive load per period, kvar.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub q_load: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: String,
    pub to: String,
    /// Series resistance and reactance on the network base, p.u.
    pub r: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceFleet {
    #[serde(default)]
    pub electrolyzers: Vec<Electrolyzer>,
    #[serde(default)]
    pub fuel_cells: Vec<FuelCell>,
    #[serde(default)]
    pub hydrogen_tanks: Vec<HydrogenTank>,
    #[serde(default)]
    pub batteries: Vec<Battery>,
    #[serde(default)]
    pub ders: Vec<Der>,
}

/// Electrolytic tank (P2G): draws power at `bus`, injects hydrogen at `gas_node`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Electrolyzer {
    pub id: String,
    pub bus: String,
    pub gas_node: String,
    pub rated_kw: f64,
    pub efficiency: f64,
    /// Investment cost spread over `rated_kw · lifetime_h` kWh of throughput, $.
    pub power_cost: f64,
    pub lifetime_h: f64,
}

/// Solid-oxide fuel cell (G2P): burns gas drawn at `gas_node`, injects power at `bus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuelCell {
    pub id: String,
    pub bus: String,
    pub gas_node: String,
    pub rated_kw: f64,
    pub efficiency: f64,
    pub power_cost: f64,
    pub lifetime_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydrogenTank {
    pub id: String,
    pub gas_node: String,
    pub capacity_m3: f64,
    /// $/m³ of capacity.
    pub capacity_cost: f64,
    pub lifetime_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Battery {
    pub id: String,
    pub bus: String,
    pub rated_kw: f64,
    pub capacity_kwh: f64,
    /// $/kWh of capacity.
    pub capacity_cost: f64,
    /// $/kW of rating.
    pub power_cost: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub cycle_life: CycleLife,
    /// Depth of discharge the cycle life is evaluated at.
    pub depth: f64,
}

/// Coefficients of the double-exponential cycle-life curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleLife {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl Default for CycleLife {
    fn default() -> Self {
        CycleLife { a1: 20000.0, b1: -5.0, a2: 4000.0, b2: -1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Der {
    pub id: String,
    pub bus: String,
    /// Active output forecast per period, kW.
    pub p_forecast: Vec<f64>,
    /// Reactive injection per period, kvar. Empty means zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub q_injection: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySet {
    /// Relative radius of the load box.
    pub load_radius: f64,
    /// Relative radius of the DER box.
    pub der_radius: f64,
    #[serde(default)]
    pub shape: BoxShape,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxShape {
    /// `|real − forecast| ≤ radius · forecast`.
    #[default]
    Symmetric,
    /// `0 ≤ real − forecast ≤ radius · forecast`.
    AsymmetricUp,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriceMode {
    /// Consensus ADMM over per-period prices with log utilities.
    #[default]
    ExpCone,
    /// Scalar bisection on the aggregate transfer.
    TransferBisection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgorithmParams {
    /// Multipliers on the automatically scaled ADMM penalties
    /// (P2G quantity, G2P quantity, P2G price, G2P price).
    pub rho: [f64; 4],
    pub admm_tol: f64,
    pub admm_price_tol: f64,
    pub admm_max_iter: usize,
    /// Weight on the nodal pressure-difference penalty, $/bar. Derived from
    /// gas prices when absent.
    pub pressure_penalty: Option<f64>,
    pub blend_tol: f64,
    pub blend_max_iter: usize,
    pub ccg_gap_tol: f64,
    pub ccg_max_iter: usize,
    pub bcd_max_iter: usize,
    pub solver_tol: f64,
    /// Prices are bounded by this multiple of the commodity reference price.
    pub price_cap_factor: f64,
    pub price_mode: PriceMode,
    /// Penalty on shed load in recourse problems, $/kWh. Derived from
    /// electricity prices when absent.
    pub shed_penalty: Option<f64>,
    /// Weight on network losses, $/kWh, which keeps the branch-flow cones
    /// tight when energy is free. Derived from electricity prices when absent.
    pub loss_penalty: Option<f64>,
}

impl Default for AlgorithmParams {
    fn default() -> Self {
        AlgorithmParams {
            rho: [1.0; 4],
            admm_tol: 1e-3,
            admm_price_tol: 1e-5,
            admm_max_iter: 500,
            pressure_penalty: None,
            blend_tol: 1e-4,
            blend_max_iter: 20,
            ccg_gap_tol: 1e-3,
            ccg_max_iter: 15,
            bcd_max_iter: 50,
            solver_tol: 1e-8,
            price_cap_factor: 10.0,
            price_mode: PriceMode::ExpCone,
            shed_penalty: None,
            loss_penalty: None,
        }
    }
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.market.gas_price.len()
    }

    pub fn dt(&self) -> f64 {
        self.market.dt_hours
    }

    pub fn gas_node_index(&self, id: &str) -> Option<usize> {
        self.gas.nodes.iter().position(|n| n.id == id)
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.power.buses.iter().position(|b| b.id == id)
    }

    pub(crate) fn gas_idx(&self, id: &str) -> usize {
        self.gas_node_index(id).expect("validated gas node reference")
    }

    pub(crate) fn bus_idx(&self, id: &str) -> usize {
        self.bus_index(id).expect("validated bus reference")
    }

    pub fn gas_tree(&self) -> RadialTree {
        let edges: Vec<(usize, usize)> = self
            .gas
            .pipes
            .iter()
            .map(|p| (self.gas_idx(&p.from), self.gas_idx(&p.to)))
            .collect();
        RadialTree::build(self.gas.nodes.len(), &edges, self.gas_idx(&self.gas.source))
            .expect("validated gas tree")
    }

    pub fn power_tree(&self) -> RadialTree {
        let edges: Vec<(usize, usize)> = self
            .power
            .branches
            .iter()
            .map(|b| (self.bus_idx(&b.from), self.bus_idx(&b.to)))
            .collect();
        RadialTree::build(self.power.buses.len(), &edges, self.bus_idx(&self.power.root))
            .expect("validated power tree")
    }

    /// Methane-equivalent gas load of node `n` in period `t`, m³.
    pub fn gas_load(&self, n: usize, t: usize) -> f64 {
        self.gas.nodes[n].load.get(t).copied().unwrap_or(0.0)
    }

    pub fn p_load(&self, j: usize, t: usize) -> f64 {
        self.power.buses[j].p_load.get(t).copied().unwrap_or(0.0)
    }

    pub fn q_load(&self, j: usize, t: usize) -> f64 {
        self.power.buses[j].q_load.get(t).copied().unwrap_or(0.0)
    }

    pub fn der_q(&self, d: usize, t: usize) -> f64 {
        self.devices.ders[d].q_injection.get(t).copied().unwrap_or(0.0)
    }

    /// Pressure-penalty weight in $/bar.
    pub fn pressure_penalty(&self) -> f64 {
        self.algorithm.pressure_penalty.unwrap_or_else(|| {
            let prices = &self.market.gas_price;
            1e-3 * prices.iter().sum::<f64>() / prices.len() as f64
        })
    }

    /// Loss-penalty weight in $/kWh. The default is one percent of the mean
    /// energy price: enough to hold the branch-flow cones within 1e-5 of
    /// tight during curtailment, small enough to leave dispatch unchanged.
    pub fn loss_penalty(&self) -> f64 {
        self.algorithm.loss_penalty.unwrap_or_else(|| {
            let prices = &self.market.electricity_price;
            1e-2 * prices.iter().sum::<f64>() / prices.len() as f64
        })
    }

    /// Value of lost load in $/kWh used by recourse problems.
    pub fn shed_penalty(&self) -> f64 {
        self.algorithm.shed_penalty.unwrap_or_else(|| {
            let max = self.market.electricity_price.iter().cloned().fold(0.0, f64::max);
            100.0 * max.max(0.01)
        })
    }

    /// Cubic metres of gas with heating value `hhv` that carry one kWh.
    pub fn m3_per_kwh(&self, hhv: f64) -> f64 {
        self.blend.mj_per_kwh / hhv
    }

    /// Canonical TOML rendering of the scenario.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    /// SHA-256 over the canonical rendering, hex encoded.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Returns a copy configured as `variant`.
    pub fn with_variant(&self, variant: Variant) -> Scenario {
        let mut s = self.clone();
        s.variant = variant;
        s
    }

    /// True when the GDN operates the electrolyzers and hydrogen tanks.
    /// In model 2 the ADN owns them instead.
    pub fn gdn_owns_hydrogen(&self) -> bool {
        self.variant != Variant::Model2
    }

    /// True when the ADN runs a private electricity–hydrogen loop (model 2).
    pub fn adn_self_loop(&self) -> bool {
        self.variant == Variant::Model2
    }

    /// True when trades between the two entities are allowed.
    pub fn trading_enabled(&self) -> bool {
        self.variant == Variant::Model1
    }
}

/// Parses scenario text without validating it.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Parses and validates scenario text.
pub fn scenario_from_str(text: &str) -> Result<Scenario> {
    let scenario = parse_scenario(text)?;
    scenario.validate()?;
    Ok(scenario)
}

/// Reads a scenario from `path`. A bare bundled name (`tiny4x3`) resolves to
/// the copy compiled into the crate when no such file exists.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    if !path.exists() {
        if let Some(text) = bundled_text(&path.to_string_lossy()) {
            return scenario_from_str(text);
        }
    }
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    scenario_from_str(&text)
}

pub fn bundled_text(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Loads one of the bundled scenarios by name.
pub fn bundled(name: &str) -> Result<Scenario> {
    let text = bundled_text(name)
        .ok_or_else(|| Error::Parse(format!("no bundled scenario named {name:?}")))?;
    scenario_from_str(text)
}

/// Applies `key=value` overrides to scenario text, where `key` is a dotted
/// path into the TOML document and `value` is a TOML literal.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("override {item:?} is not key=value")))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut parts: Vec<&str> = key.trim().split('.').collect();
        let last = parts.pop().unwrap_or_default();
        let mut table = &mut doc;
        for part in parts {
            table = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Parse(format!("override path {key:?} crosses a non-table")))?;
        }
        table.insert(last.to_string(), value);
    }
    Ok(toml::to_string(&doc).expect("table serialises"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse() {
        for (name, _) in BUNDLED {
            let s = bundled(name).unwrap();
            assert_eq!(&s.name, name);
        }
    }

    #[test]
    fn override_sets_nested_values() {
        let text = bundled_text("tiny4x3").unwrap();
        let out = apply_overrides(
            text,
            &["uncertainty.der_radius=0.0".into(), "algorithm.admm_max_iter=7".into()],
        )
        .unwrap();
        let s = scenario_from_str(&out).unwrap();
        assert_eq!(s.uncertainty.der_radius, 0.0);
        assert_eq!(s.algorithm.admm_max_iter, 7);
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = bundled("tiny4x3").unwrap();
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.market.gas_price[0] += 0.01;
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
