//! Command-line pipeline: scenario in, CSV artifacts out.
//!
//! Exit codes: 0 success, 1 output or usage trouble, 2 invalid scenario or
//! configuration, 3 solver failure (including infeasibility), 4 an iterative
//! method hit its cap.

mod marginal;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use marginal::{conversion_marginal_cost, STEP_KWH};

use crate::bargain::{cooperate, solve_independent, solve_q1_central, BargainOutcome};
use crate::error::{Error, Result};
use crate::netmodel::{apply_overrides, bundled_text, scenario_from_str, Scenario, Variant};
use crate::oracle::{self, OracleReport};
use crate::report::{self, CsvOut, Summary};
use crate::robust::{self, CaseMask, RobustOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Independent,
    Cooperative,
    Robust,
    OracleSuite,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Independent => "independent",
            Mode::Cooperative => "cooperative",
            Mode::Robust => "robust",
            Mode::OracleSuite => "oracle-suite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Model1,
    Model2,
    Model3,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Model1 => Variant::Model1,
            VariantArg::Model2 => Variant::Model2,
            VariantArg::Model3 => Variant::Model3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CaseArg {
    Case1,
    Case2,
    Case3,
    Case4,
}

impl From<CaseArg> for CaseMask {
    fn from(c: CaseArg) -> CaseMask {
        match c {
            CaseArg::Case1 => CaseMask::Case1,
            CaseArg::Case2 => CaseMask::Case2,
            CaseArg::Case3 => CaseMask::Case3,
            CaseArg::Case4 => CaseMask::Case4,
        }
    }
}

/// One pipeline run.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, value_enum, default_value = "cooperative")]
    pub mode: Mode,
    /// Overrides the variant declared in the scenario.
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long = "case", value_enum, default_value = "case4")]
    pub case: CaseArg,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// `dotted.key=value` scenario overrides, TOML literal values.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Also write per-iteration consensus logs.
    #[arg(long)]
    pub emit_trace: bool,
    /// Pin batteries to their first-stage schedule in robust runs.
    #[arg(long)]
    pub no_battery_recourse: bool,
    /// Recorded for reproducibility; every tie-break in the pipeline is
    /// deterministic, so it does not change results.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Parser)]
#[command(name = "hcng", version, about = "Cooperative gas-electricity dispatch by Nash bargaining")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one pipeline and write its artifacts.
    Run(RunConfig),
    /// Tabulate two or more finished runs side by side.
    Compare {
        /// Run output directories.
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
}

/// Exit code for an error class.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Parse(_) | Error::Validation(_) | Error::Domain(_) => 2,
        Error::Infeasible { .. } | Error::Unbounded { .. } | Error::Solver { .. } | Error::OracleRefused(_) => 3,
        Error::NonConvergence { .. } => 4,
        Error::Output(_) => 1,
    }
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    /// Iterative methods all met their tolerances.
    pub converged: bool,
    pub exit_code: i32,
}

/// Reads, overrides, validates and re-targets the scenario of a run.
pub fn prepare_scenario(cfg: &RunConfig) -> Result<Scenario> {
    let path = Path::new(&cfg.scenario);
    let text = if path.exists() {
        std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?
    } else if let Some(t) = bundled_text(&cfg.scenario) {
        t.to_string()
    } else {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or bundled scenario"),
        });
    };
    let text = if cfg.overrides.is_empty() { text } else { apply_overrides(&text, &cfg.overrides)? };
    let mut s = scenario_from_str(&text)?;
    if let Some(v) = cfg.variant {
        s = s.with_variant(v.into());
    }
    if cfg.mode == Mode::Robust && s.variant == Variant::Model3 {
        return Err(Error::Domain("robust runs need model1 or model2; model3 has no conversion to protect".into()));
    }
    Ok(s)
}

fn marginal_row(sum: &mut Summary, s: &Scenario, o: &BargainOutcome) -> Result<()> {
    let prices = o.no_bargain.is_none().then_some(&o.decision.prices);
    match conversion_marginal_cost(s, &o.gdn.schedule.blend, &o.adn, prices)? {
        Some(mc) => sum.value("marginal_cost.conversion", mc),
        None => sum.text("marginal_cost.conversion", ""),
    }
    sum.value("marginal_cost.step_kwh", STEP_KWH);
    Ok(())
}

fn header(sum: &mut Summary, s: &Scenario, cfg: &RunConfig) {
    sum.text("scenario", s.name.clone());
    sum.text("mode", cfg.mode.as_str());
    sum.text("variant", s.variant.as_str());
    sum.text("seed", cfg.seed.to_string());
}

/// Executes the configured pipeline and writes its artifacts into `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let s = prepare_scenario(cfg)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::Output(format!("{}: {e}", cfg.out.display())))?;
    let dir = cfg.out.as_path();
    let hash = s.content_hash();
    let mut files = Vec::new();
    let mut sum = Summary::default();
    header(&mut sum, &s, cfg);
    let mut converged = true;

    match cfg.mode {
        Mode::Independent => {
            let d = solve_independent(&s)?;
            sum.value("c0_adn", d.c0_e);
            sum.value("c0_gdn", d.c0_g);
            sum.adn_costs("adn", &d.adn);
            sum.gdn_costs("gdn", &d.gdn);
            let blend = d.gdn.schedule.blend.clone();
            match conversion_marginal_cost(&s, &blend, &d.adn, None)? {
                Some(mc) => sum.value("marginal_cost.conversion", mc),
                None => sum.text("marginal_cost.conversion", ""),
            }
            files.push(report::write_schedules(dir, &s, &d.adn, Some(&d.gdn))?);
        }
        Mode::Cooperative => {
            let o = cooperate(&s)?;
            sum.text("case", "");
            sum.outcome(&o);
            marginal_row(&mut sum, &s, &o)?;
            files.push(report::write_schedules(dir, &s, &o.adn, Some(&o.gdn))?);
            if s.trading_enabled() {
                files.push(report::write_trades(dir, &s, &o.decision)?);
            }
            if cfg.emit_trace {
                files.push(report::write_admm_trace(dir, &s, &[&o.quantity_trace, &o.price_trace])?);
            }
        }
        Mode::Robust => {
            let opts = RobustOptions { case: cfg.case.into(), battery_recourse: !cfg.no_battery_recourse };
            let sol = robust::ccg(&s, opts)?;
            converged = sol.converged();
            sum.text("case", opts.case.as_str());
            sum.text("battery_recourse", opts.battery_recourse.to_string());
            sum.outcome(&sol.outcome);
            let primary = sol.primary();
            sum.value("robust.lower", primary.lower);
            sum.value("robust.upper", primary.upper);
            sum.value("robust.gap", primary.gap);
            sum.value("robust.iterations", primary.iterations.len() as f64);
            sum.text("robust.converged", converged.to_string());
            files.push(report::write_schedules(dir, &s, &sol.outcome.adn, Some(&sol.outcome.gdn))?);
            if s.trading_enabled() {
                files.push(report::write_trades(dir, &s, &sol.outcome.decision)?);
            }
            files.extend(report::write_robust(dir, &s, &sol)?);
            if cfg.emit_trace {
                let traces: Vec<_> = sol.joint.iter().flat_map(|j| j.master_traces.iter()).collect();
                files.push(report::write_admm_trace(dir, &s, &traces)?);
            }
        }
        Mode::OracleSuite => {
            let (reports, refusals) = oracle_suite(&s, cfg.case.into())?;
            for (check, why) in &refusals {
                sum.text(&format!("oracle.{check}"), format!("refused: {why}"));
            }
            for r in &reports {
                sum.text(&format!("oracle.{}", r.check), if r.passed { "pass" } else { "fail" });
            }
            converged = reports.iter().all(|r| r.passed);
            files.push(report::write_oracle_reports(dir, &s, &reports)?);
        }
    }
    files.push(sum.write(dir, &hash)?);
    files.sort();
    Ok(RunReport { files, converged, exit_code: if converged { 0 } else { 4 } })
}

/// Every oracle that applies to the scenario. Refusals are returned with
/// their reason rather than silently skipped.
/// A check the suite declined to run, with the reason.
pub type Refusal = (String, String);

pub fn oracle_suite(s: &Scenario, case: CaseMask) -> Result<(Vec<OracleReport>, Vec<Refusal>)> {
    let mut reports = Vec::new();
    let mut refusals = Vec::new();
    let o = cooperate(s)?;
    let blend = o.gdn.schedule.blend.clone();
    if s.trading_enabled() {
        let central = solve_q1_central(s, &blend)?;
        let joint_admm = o.c0_e + o.c0_g - o.adn.costs.total - o.gdn.costs.total;
        let joint_central = o.c0_e + o.c0_g - central.joint_cost;
        let mut r = OracleReport::agreement("quantity stage vs centralised", joint_central, joint_admm, 1e-3, 1);
        // Relative to the joint cost, the scale the consensus tolerance acts on.
        r.rel_gap = r.abs_gap / central.joint_cost.abs().max(1.0);
        r.passed = r.rel_gap <= r.tolerance;
        reports.push(r);
        match oracle::grid_search_q1(s, &blend, 3) {
            Ok(g) => {
                // The continuous optimum beats every grid point up to the
                // consensus tolerance and no grid point by more than the
                // grid's own resolution bound.
                let tested = g.baseline - o.adn.costs.total - o.gdn.costs.total;
                let tol = 1e-3 * (o.adn.costs.total + o.gdn.costs.total).abs().max(1.0);
                let gap = tested - g.best_benefit;
                reports.push(OracleReport {
                    check: "quantity stage vs grid".into(),
                    oracle_value: g.best_benefit,
                    tested_value: tested,
                    abs_gap: gap.abs(),
                    rel_gap: gap.abs() / g.best_benefit.abs().max(1.0),
                    tolerance: tol,
                    passed: gap >= -tol && gap <= g.slack,
                    enumeration_size: g.points,
                })
            }
            Err(Error::OracleRefused(why)) => refusals.push(("quantity stage vs grid".into(), why)),
            Err(e) => return Err(e),
        }
        reports.push(oracle::transfer_split_check(&o));
    }
    let opts = RobustOptions { case, battery_recourse: true };
    let bx = robust::UncertaintyBox::new(s, case);
    if bx.len() > oracle::MAX_UNCERTAIN_PAIRS {
        refusals.push((
            "worst case".into(),
            format!("{} uncertain entries exceed the enumeration cap of {}", bx.len(), oracle::MAX_UNCERTAIN_PAIRS),
        ));
    } else {
        let sol = robust::ccg(s, opts)?;
        let run = sol.primary();
        let y = &run.first_stage;
        let bcd = robust::solve_sp_bcd(s, &run.blend, y, &bx, opts)?;
        reports.push(oracle::certify_worst_case(s, &run.blend, y, opts, bcd.value)?);
    }
    Ok((reports, refusals))
}

/// Side-by-side table of finished runs plus their per-period profiles.
pub fn compare(runs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    if runs.len() < 2 {
        return Err(Error::Domain("compare needs at least two run directories".into()));
    }
    let mut summaries = Vec::new();
    for dir in runs {
        summaries.push(report::read_csv(&dir.join("summary.csv"))?);
    }
    let schema = report::schema_of(&summaries[0].header).map(str::to_string);
    for (dir, f) in runs.iter().zip(&summaries) {
        if report::schema_of(&f.header).map(str::to_string) != schema {
            return Err(Error::Domain(format!("{} was written with a different schema version", dir.display())));
        }
    }
    let hashes: Vec<String> = summaries
        .iter()
        .filter_map(|f| f.header.split_whitespace().find_map(|x| x.strip_prefix("scenario_sha256=")).map(str::to_string))
        .collect();
    let mut unique = hashes.clone();
    unique.dedup();
    let hash = unique.join("+");
    std::fs::create_dir_all(out).map_err(|e| Error::Output(format!("{}: {e}", out.display())))?;

    let names: Vec<String> = runs
        .iter()
        .enumerate()
        .map(|(i, d)| d.file_name().map_or(format!("run{i}"), |n| n.to_string_lossy().into_owned()))
        .collect();
    let mut order: Vec<String> = Vec::new();
    let mut table: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (i, f) in summaries.iter().enumerate() {
        for rec in &f.records {
            let (k, v) = (rec[0].clone(), rec.get(1).cloned().unwrap_or_default());
            let row = table.entry(k.clone()).or_insert_with(|| {
                order.push(k.clone());
                vec![String::new(); runs.len()]
            });
            row[i] = v;
        }
    }
    let mut columns: Vec<&str> = vec!["metric"];
    columns.extend(names.iter().map(String::as_str));
    columns.push("delta_last_minus_first");
    let mut cmp = CsvOut::create(out, "comparison.csv", &hash, &columns)?;
    for k in &order {
        let row = &table[k];
        let delta = match (row[0].parse::<f64>(), row[row.len() - 1].parse::<f64>()) {
            (Ok(a), Ok(b)) => report::num(b - a),
            _ => String::new(),
        };
        let mut rec = vec![k.clone()];
        rec.extend(row.iter().cloned());
        rec.push(delta);
        cmp.row(&rec)?;
    }
    let mut files = vec![cmp.finish()?];

    let mut prof = CsvOut::create(out, "profiles.csv", &hash, &["run", "period", "entity", "quantity", "element", "value"])?;
    for (name, dir) in names.iter().zip(runs) {
        let path = dir.join("schedule.csv");
        if !path.exists() {
            continue;
        }
        for rec in report::read_csv(&path)?.records {
            let mut r = vec![name.clone()];
            r.extend(rec);
            prof.row(&r)?;
        }
    }
    files.push(prof.finish()?);
    Ok(files)
}

/// Entry point shared by the binary: parses arguments, runs, prints a short
/// report and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run(cfg) => run(cfg).map(|r| {
            for f in &r.files {
                println!("wrote {}", f.display());
            }
            if !r.converged {
                eprintln!("warning: an iterative method stopped at its cap; see the trace files");
            }
            r.exit_code
        }),
        Command::Compare { runs, out } => compare(runs, out).map(|files| {
            for f in &files {
                println!("wrote {}", f.display());
            }
            0
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: &str, extra: &[&str]) -> RunConfig {
        let mut args = vec!["hcng", "run", "--scenario", "tiny4x3", "--mode", mode];
        args.extend_from_slice(extra);
        match Cli::try_parse_from(args).unwrap().command {
            Command::Run(c) => c,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_parse() {
        let c = cfg("robust", &["--case", "case2", "--variant", "model2", "--set", "uncertainty.der_radius=0.1"]);
        assert_eq!(c.mode, Mode::Robust);
        assert_eq!(CaseMask::from(c.case), CaseMask::Case2);
        assert_eq!(c.overrides, vec!["uncertainty.der_radius=0.1".to_string()]);
        let s = prepare_scenario(&c).unwrap();
        assert_eq!(s.variant, Variant::Model2);
        assert_eq!(s.uncertainty.der_radius, 0.1);
    }

    #[test]
    fn robust_model3_is_rejected() {
        let c = cfg("robust", &["--variant", "model3"]);
        let e = prepare_scenario(&c).unwrap_err();
        assert_eq!(exit_code(&e), 2);
    }

    #[test]
    fn bad_override_is_a_validation_failure() {
        let c = cfg("independent", &["--set", "market.dt_hours=-1.0"]);
        assert_eq!(exit_code(&prepare_scenario(&c).unwrap_err()), 2);
    }

    #[test]
    fn missing_scenario_exits_two() {
        assert_eq!(main_with_args(["hcng", "run", "--scenario", "/nonexistent/x.toml"]), 2);
    }
}
