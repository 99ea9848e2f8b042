//! CSV artifacts. Every file opens with a comment line carrying the schema
//! version and the scenario hash; floats use Rust's shortest round-trip
//! formatting, so identical results give identical bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::adn::AdnRun;
use crate::bargain::{BargainOutcome, IterationTrace, TradeDecision};
use crate::error::{Error, Result};
use crate::gdn::GdnRun;
use crate::netmodel::{Scenario, SCHEMA_VERSION};
use crate::oracle::OracleReport;
use crate::robust::{CcgRun, RobustSolution};

/// Formats a float for output: shortest round-trip digits, exponent form for
/// very small or large magnitudes, negative zero as zero.
pub fn num(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x:?}")
    }
}

pub fn header_line(scenario_hash: &str) -> String {
    format!("# schema_version={SCHEMA_VERSION} scenario_sha256={scenario_hash}")
}

/// One CSV file being written.
pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(dir: &Path, name: &str, scenario_hash: &str, columns: &[&str]) -> Result<CsvOut> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| Error::Output(format!("{}: {e}", path.display())))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "{}", header_line(scenario_hash))?;
        let mut writer = csv::Writer::from_writer(buf);
        writer.write_record(columns)?;
        Ok(CsvOut { path, writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush()?;
        Ok(self.path)
    }
}

/// Metric/value pairs for `summary.csv`.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub rows: Vec<(String, String)>,
}

impl Summary {
    pub fn text(&mut self, key: &str, value: impl Into<String>) {
        self.rows.push((key.to_string(), value.into()));
    }

    pub fn value(&mut self, key: &str, value: f64) {
        self.rows.push((key.to_string(), num(value)));
    }

    pub fn adn_costs(&mut self, prefix: &str, run: &AdnRun) {
        let c = &run.costs;
        for (k, v) in [
            ("total", c.total),
            ("grid", c.tg),
            ("battery", c.li),
            ("fuel_cell", c.sofc),
            ("storage", c.hess),
            ("gas_purchase", c.g2p),
            ("power_sale", c.p2g),
            ("electrolyzer", c.et),
            ("hydrogen_tank", c.ht),
            ("shed", c.shed),
            ("loss_penalty", c.loss_penalty),
        ] {
            self.value(&format!("{prefix}.{k}"), v);
        }
    }

    pub fn gdn_costs(&mut self, prefix: &str, run: &GdnRun) {
        let c = &run.costs;
        for (k, v) in [
            ("total", c.total),
            ("gas_supply", c.hgn),
            ("power_purchase", c.p2g),
            ("electrolyzer", c.et),
            ("hydrogen_tank", c.ht),
            ("gas_sale", c.g2p),
            ("pressure_penalty", c.pressure_penalty),
        ] {
            self.value(&format!("{prefix}.{k}"), v);
        }
    }

    pub fn outcome(&mut self, o: &BargainOutcome) {
        self.value("c0_adn", o.c0_e);
        self.value("c0_gdn", o.c0_g);
        self.value("c_adn", o.c_e);
        self.value("c_gdn", o.c_g);
        self.value("surplus_adn", o.delta_e);
        self.value("surplus_gdn", o.delta_g);
        self.value("joint_surplus", o.surplus);
        self.value("transfer", o.transfer);
        self.value("nash_product", crate::bargain::nash_product(o));
        self.text("no_bargain", o.no_bargain.clone().unwrap_or_default());
        self.adn_costs("adn", &o.adn);
        self.gdn_costs("gdn", &o.gdn);
    }

    pub fn write(&self, dir: &Path, hash: &str) -> Result<PathBuf> {
        let mut out = CsvOut::create(dir, "summary.csv", hash, &["metric", "value"])?;
        for (k, v) in &self.rows {
            out.row([k.as_str(), v.as_str()])?;
        }
        out.finish()
    }
}

/// Per-period schedules of both entities in long form.
pub fn write_schedules(dir: &Path, s: &Scenario, adn: &AdnRun, gdn: Option<&GdnRun>) -> Result<PathBuf> {
    let hash = s.content_hash();
    let mut out = CsvOut::create(dir, "schedule.csv", &hash, &["period", "entity", "quantity", "element", "value"])?;
    let sch = &adn.schedule;
    for t in 0..s.horizon() {
        let p = t.to_string();
        let mut put = |entity: &str, q: &str, el: &str, v: f64| out.row([p.as_str(), entity, q, el, &num(v)]);
        put("adn", "grid_import_kw", "", sch.grid_p[t])?;
        for (d, der) in s.devices.ders.iter().enumerate() {
            put("adn", "der_kw", &der.id, sch.der[d][t])?;
        }
        for (k, b) in s.devices.batteries.iter().enumerate() {
            put("adn", "battery_net_kw", &b.id, sch.discharge[k][t] + sch.charge[k][t])?;
            put("adn", "battery_energy_kwh", &b.id, sch.energy[k][t])?;
            if let Some(adj) = &sch.adjustment {
                if let Some(row) = adj.get(k).filter(|r| !r.is_empty()) {
                    put("adn", "battery_adjustment_kw", &b.id, row[t])?;
                }
            }
        }
        for (k, f) in s.devices.fuel_cells.iter().enumerate() {
            put("adn", "fuel_cell_kw", &f.id, sch.fuel_cell_power[k][t])?;
        }
        for (k, e) in s.devices.electrolyzers.iter().enumerate() {
            if let Some(row) = sch.et_power.get(k).filter(|r| !r.is_empty()) {
                put("adn", "electrolyzer_kw", &e.id, row[t])?;
            }
        }
        if let Some(shed) = &sch.shed {
            put("adn", "shed_kw", "", shed.iter().map(|r| r[t]).sum())?;
        }
        if let Some(g) = gdn {
            let gs = &g.schedule;
            put("gdn", "source_m3", "", gs.source[t])?;
            put("gdn", "hydrogen_m3", "", gs.hydrogen[t])?;
            put("gdn", "hydrogen_fraction", "", gs.blend.omega[t])?;
            put("gdn", "hhv_mix", "", gs.blend.hhv_mix[t])?;
            for (n, node) in s.gas.nodes.iter().enumerate() {
                put("gdn", "pressure_bar", &node.id, gs.pressure[n][t])?;
            }
            for (tank, level) in s.devices.hydrogen_tanks.iter().zip(&gs.tank_level) {
                put("gdn", "tank_level_m3", &tank.id, level[t + 1])?;
            }
        }
    }
    out.finish()
}

pub fn write_trades(dir: &Path, s: &Scenario, d: &TradeDecision) -> Result<PathBuf> {
    let mut out =
        CsvOut::create(dir, "trades.csv", &s.content_hash(), &["period", "kind", "device", "quantity", "unit", "price"])?;
    for t in 0..s.horizon() {
        let p = t.to_string();
        for (k, e) in s.devices.electrolyzers.iter().enumerate() {
            out.row([p.as_str(), "p2g", &e.id, &num(d.quantities.p2g[k][t]), "kW", &num(d.prices.p2g[t])])?;
        }
        for (k, f) in s.devices.fuel_cells.iter().enumerate() {
            out.row([p.as_str(), "g2p", &f.id, &num(d.quantities.g2p[k][t]), "m3", &num(d.prices.g2p[t])])?;
        }
    }
    out.finish()
}

/// Consensus message log: one row per iteration and coupled variable.
pub fn write_admm_trace(dir: &Path, s: &Scenario, traces: &[&IterationTrace]) -> Result<PathBuf> {
    let mut out = CsvOut::create(
        dir,
        "admm_trace.csv",
        &s.content_hash(),
        &[
            "stage",
            "iteration",
            "variable",
            "gdn_value",
            "adn_value",
            "multiplier_adn",
            "multiplier_gdn",
            "consensus",
            "primal_residual",
            "dual_residual",
        ],
    )?;
    for trace in traces {
        for (rec, msg) in trace.records.iter().zip(&trace.messages) {
            let it = rec.iteration.to_string();
            for k in 0..msg.z.len() {
                out.row([
                    trace.label.as_str(),
                    it.as_str(),
                    &k.to_string(),
                    &num(msg.gdn_values[k]),
                    &num(msg.adn_values[k]),
                    &num(msg.lambda_adn[k]),
                    &num(msg.lambda_gdn[k]),
                    &num(msg.z[k]),
                    &num(rec.primal_residual),
                    &num(rec.dual_residual),
                ])?;
            }
        }
    }
    out.finish()
}

fn loop_name(run: &CcgRun) -> &'static str {
    match run.coalition {
        crate::robust::Coalition::Bargaining => "joint",
        crate::robust::Coalition::AdnAlone => "adn_alone",
    }
}

/// Bound trace, worst cases and recourse of the robust loops.
pub fn write_robust(dir: &Path, s: &Scenario, sol: &RobustSolution) -> Result<Vec<PathBuf>> {
    let hash = s.content_hash();
    let loops: Vec<&CcgRun> = sol.joint.iter().chain(std::iter::once(&sol.adn_alone)).collect();
    let mut trace = CsvOut::create(
        dir,
        "ccg_trace.csv",
        &hash,
        &["loop", "iteration", "master_value", "lower", "upper", "upper_best", "gap", "worst_realization", "bcd_steps", "bcd_converged"],
    )?;
    for run in &loops {
        for it in &run.iterations {
            trace.row([
                loop_name(run),
                &it.iteration.to_string(),
                &num(it.master_value),
                &num(it.lower),
                &num(it.upper),
                &num(it.upper_best),
                &num(it.gap),
                &it.cut.map_or("-".to_string(), |c| c.to_string()),
                &it.bcd_steps.to_string(),
                &it.bcd_converged.to_string(),
            ])?;
        }
    }
    let mut worst = CsvOut::create(dir, "worst_cases.csv", &hash, &["loop", "cut", "kind", "element", "period", "value"])?;
    let mut recourse = CsvOut::create(dir, "recourse.csv", &hash, &["loop", "cut", "battery", "period", "adjustment_kw"])?;
    for run in &loops {
        let realizations = run
            .cuts
            .iter()
            .enumerate()
            .map(|(c, cut)| (c.to_string(), &cut.realization, &cut.adjustment))
            .chain(std::iter::once((
                "final".to_string(),
                &run.worst,
                run.worst_run.schedule.adjustment.as_ref().unwrap_or(&Vec::new()),
            )))
            .map(|(c, r, a)| (c, r.clone(), a.clone()))
            .collect::<Vec<_>>();
        for (c, r, adj) in realizations {
            for (j, bus) in s.power.buses.iter().enumerate() {
                for t in 0..s.horizon() {
                    if s.p_load(j, t) != 0.0 {
                        worst.row([loop_name(run), c.as_str(), "load", &bus.id, &t.to_string(), &num(r.load[j][t])])?;
                    }
                }
            }
            for (d, der) in s.devices.ders.iter().enumerate() {
                for t in 0..s.horizon() {
                    worst.row([loop_name(run), c.as_str(), "der", &der.id, &t.to_string(), &num(r.der[d][t])])?;
                }
            }
            for (k, b) in s.devices.batteries.iter().enumerate() {
                if let Some(row) = adj.get(k).filter(|r| !r.is_empty()) {
                    for (t, v) in row.iter().enumerate() {
                        recourse.row([loop_name(run), c.as_str(), &b.id, &t.to_string(), &num(*v)])?;
                    }
                }
            }
        }
    }
    Ok(vec![trace.finish()?, worst.finish()?, recourse.finish()?])
}

pub fn write_oracle_reports(dir: &Path, s: &Scenario, reports: &[OracleReport]) -> Result<PathBuf> {
    let mut out = CsvOut::create(
        dir,
        "oracle_report.csv",
        &s.content_hash(),
        &["check", "oracle_value", "tested_value", "abs_gap", "rel_gap", "tolerance", "passed", "enumeration_size"],
    )?;
    for r in reports {
        out.row([
            r.check.as_str(),
            &num(r.oracle_value),
            &num(r.tested_value),
            &num(r.abs_gap),
            &num(r.rel_gap),
            &num(r.tolerance),
            if r.passed { "true" } else { "false" },
            &r.enumeration_size.to_string(),
        ])?;
    }
    out.finish()
}

/// A CSV file read back: its comment header and records.
#[derive(Debug, Clone)]
pub struct CsvFile {
    pub header: String,
    pub columns: Vec<String>,
    pub records: Vec<Vec<String>>,
}

pub fn read_csv(path: &Path) -> Result<CsvFile> {
    let file = File::open(path).map_err(|e| Error::Output(format!("{}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    if !header.starts_with("# schema_version=") {
        return Err(Error::Output(format!("{} lacks the schema header", path.display())));
    }
    let mut csv = csv::Reader::from_reader(reader);
    let columns = csv.headers()?.iter().map(str::to_string).collect();
    let mut records = Vec::new();
    for rec in csv.records() {
        records.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(CsvFile { header: header.trim_end().to_string(), columns, records })
}

/// Schema version recorded in a header line.
pub fn schema_of(header: &str) -> Option<&str> {
    header.split_whitespace().find_map(|f| f.strip_prefix("schema_version="))
}
