//! Experiment drivers behind the `nlmc` command line: single runs, repeats,
//! the epsilon grid over both kernel kinds, the RWM baseline comparison and
//! the numerical diagnostics. Each driver writes its CSV files together with
//! `resolved_config.txt`, from which the run can be replayed exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::{emit_config, kind_name};
use crate::diagnostics::{drift_check, snv_trajectory, DriftReport, SnvTrajectory};
use crate::error::{Error, Result};
use crate::kernels::{NonlinearKind, RwmKernel};
use crate::output::{csv_line, fmt_float};
use crate::rng::{stream, STREAM_DRIFT};
use crate::simulator::{
    calibrate_budget, repeat_baseline, repeat_runs, run, RepeatSummary, RunConfig, RunRecord, RunSummary,
};

pub const RESOLVED_CONFIG: &str = "resolved_config.txt";

/// Iterations per timing probe when the calibration factor is measured.
pub const CALIBRATION_PROBE_ITERS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Repeats,
    Table1,
    BaselineCompare,
    Diagnostics,
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "run" => Command::Run,
            "repeats" => Command::Repeats,
            "table1" | "table1_grid" => Command::Table1,
            "baseline_compare" => Command::BaselineCompare,
            "diagnostics" => Command::Diagnostics,
            other => {
                return Err(Error::Parse {
                    key: "command".into(),
                    value: other.into(),
                    reason: "expected run, repeats, table1, baseline_compare or diagnostics".into(),
                })
            }
        })
    }
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// Configuration as written to `resolved_config.txt`.
    pub resolved: RunConfig,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn runs_header(names: &[String], prefix: &[&str]) -> String {
    let mut cells: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    cells.extend(["run_index".into(), "seed".into()]);
    cells.extend(names.iter().map(|n| format!("estimate_{n}")));
    cells.extend(
        ["accept_rwm_x", "accept_rwm_y", "accept_exchange", "branch_eps_count", "snY_V_final"].map(String::from),
    );
    csv_line(&cells)
}

fn runs_row(r: &RunRecord, names: &[String], prefix: &[String]) -> String {
    let s = &r.summary;
    let mut cells = prefix.to_vec();
    cells.push(r.run_index.to_string());
    cells.push(r.seed.to_string());
    cells.extend(names.iter().map(|n| s.estimate(n).map(fmt_float).unwrap_or_default()));
    cells.push(fmt_float(s.accept_rwm_x));
    cells.push(fmt_float(s.accept_rwm_y));
    cells.push(fmt_float(s.accept_exchange));
    cells.push(s.branches.eps_moves().to_string());
    cells.push(s.snv_final.map(fmt_float).unwrap_or_default());
    csv_line(&cells)
}

fn estimate_names(s: &RunSummary) -> Vec<String> {
    s.estimates.iter().map(|(n, _)| n.clone()).collect()
}

/// `runs.csv` contents for a set of runs.
pub fn runs_csv(records: &[RunRecord]) -> String {
    let names = records.first().map(|r| estimate_names(&r.summary)).unwrap_or_default();
    let mut out = runs_header(&names, &[]) + "\n";
    for r in records {
        out += &runs_row(r, &names, &[]);
        out.push('\n');
    }
    out
}

/// `aggregate.csv` contents: mean and twice the standard deviation across runs.
pub fn aggregate_csv(summary: &RepeatSummary) -> String {
    let mut out = String::from("name,mean,two_sd\n");
    for s in &summary.spreads {
        out += &csv_line(&[s.name.clone(), fmt_float(s.mean), fmt_float(s.two_sd)]);
        out.push('\n');
    }
    out
}

/// Repeats fail as a whole: a numeric abort in any run is reported with its
/// run index instead of silently shrinking the sample.
fn require_all(summary: RepeatSummary, context: &str) -> Result<RepeatSummary> {
    match summary.failures.first() {
        None => Ok(summary),
        Some((i, e)) => Err(match e {
            Error::Numeric { index, message } => {
                Error::Numeric { index: *index, message: format!("{context}run {i}: {message}") }
            }
            other => other.clone(),
        }),
    }
}

/// One cell of the epsilon grid.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub kind: NonlinearKind,
    pub epsilon: f64,
    pub summary: RepeatSummary,
}

#[derive(Debug, Clone)]
pub struct Table1 {
    pub kinds: Vec<NonlinearKind>,
    pub epsilons: Vec<f64>,
    /// Row-major: kind outer, epsilon inner.
    pub cells: Vec<GridCell>,
}

impl Table1 {
    pub fn cell(&self, kind: NonlinearKind, epsilon: f64) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.kind == kind && c.epsilon == epsilon)
    }
}

/// The two kernel kinds compared in the grid: pure selection and exchange.
pub const GRID_KINDS: [NonlinearKind; 2] = [NonlinearKind::SelectMutate { with_mutation: false }, NonlinearKind::Exchange];

/// Runs `repeats` of every `(kind, epsilon)` cell. Every cell uses the base
/// seed, so a cell is identical to a standalone [`repeat_runs`] of the same
/// configuration.
pub fn table1_grid(config: &RunConfig) -> Result<Table1> {
    config.validate()?;
    let epsilons = config.harness.epsilons.clone();
    let mut cells = Vec::new();
    for kind in GRID_KINDS {
        for &epsilon in &epsilons {
            let c = RunConfig { kind, epsilon, ..config.clone() };
            let context = format!("kind={}, epsilon={epsilon}, ", kind_name(kind));
            let summary = repeat_runs(&c, config.harness.repeats).and_then(|s| require_all(s, &context))?;
            cells.push(GridCell { kind, epsilon, summary });
        }
    }
    Ok(Table1 { kinds: GRID_KINDS.to_vec(), epsilons, cells })
}

/// The grid as a table for the estimate `name`: one row per kernel kind,
/// one column per epsilon, cells `mean (±2sd)`.
pub fn table1_csv(table: &Table1, name: &str) -> String {
    let mut header = vec!["kind".to_string()];
    header.extend(table.epsilons.iter().map(|e| format!("eps={e}")));
    let mut out = csv_line(&header) + "\n";
    for &kind in &table.kinds {
        let mut row = vec![kind_name(kind).to_string()];
        for &e in &table.epsilons {
            let cell = table.cell(kind, e).and_then(|c| c.summary.spread(name));
            row.push(cell.map(|s| format!("{} (±{})", fmt_float(s.mean), fmt_float(s.two_sd))).unwrap_or_default());
        }
        out += &csv_line(&row);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub calibration_factor: f64,
    pub baseline_config: RunConfig,
    pub nonlinear_config: RunConfig,
    pub baseline: RepeatSummary,
    pub nonlinear: RepeatSummary,
}

/// Configurations of the two arms: plain RWM for `baseline_iters`, and the
/// nonlinear sampler at `compare_epsilon` with iterations and burn-in scaled
/// by the calibration factor.
pub fn comparison_configs(config: &RunConfig, factor: f64) -> Result<(RunConfig, RunConfig)> {
    let h = &config.harness;
    let baseline = RunConfig { n_iters: h.baseline_iters, ..config.clone() };
    let scale = |n: usize| ((n as f64) * factor).round() as usize;
    let nonlinear = RunConfig {
        epsilon: h.compare_epsilon,
        n_iters: scale(h.baseline_iters).max(2),
        burn_in: scale(config.burn_in),
        ..config.clone()
    };
    baseline.validate()?;
    nonlinear.validate()?;
    Ok((baseline, nonlinear))
}

/// RWM against the nonlinear sampler at roughly equal CPU time. The
/// calibration factor is measured unless the configuration fixes it.
pub fn baseline_compare(config: &RunConfig) -> Result<Comparison> {
    config.validate()?;
    let factor = match config.harness.calibration_factor {
        Some(f) => f,
        None => calibrate_budget(config, CALIBRATION_PROBE_ITERS)?,
    };
    let (baseline_config, nonlinear_config) = comparison_configs(config, factor)?;
    let repeats = config.harness.repeats;
    let baseline = require_all(repeat_baseline(&baseline_config, repeats)?, "rwm ")?;
    let nonlinear = require_all(repeat_runs(&nonlinear_config, repeats)?, "nonlinear ")?;
    Ok(Comparison { calibration_factor: factor, baseline_config, nonlinear_config, baseline, nonlinear })
}

pub fn comparison_csv(cmp: &Comparison) -> String {
    let mut out = String::from("method,n_iters,burn_in,name,mean,two_sd\n");
    for (method, c, s) in [
        ("rwm", &cmp.baseline_config, &cmp.baseline),
        ("nonlinear", &cmp.nonlinear_config, &cmp.nonlinear),
    ] {
        for e in &s.spreads {
            let cells = [
                method.to_string(),
                c.n_iters.to_string(),
                c.burn_in.to_string(),
                e.name.clone(),
                fmt_float(e.mean),
                fmt_float(e.two_sd),
            ];
            out += &csv_line(&cells);
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub drift: DriftReport,
    pub snv: SnvTrajectory,
    pub summary: RunSummary,
}

/// One-step drift of the base kernel at the configured probes, and the
/// `S_n^Y(V)` trajectory of one run. Needs the Lyapunov keys.
pub fn diagnostics(config: &RunConfig) -> Result<Diagnostics> {
    config.validate()?;
    let spec = config.lyapunov.as_ref().ok_or_else(|| Error::MissingKey("s_v".into()))?;
    let pair = spec.build::<f64>(&config.target, config.alpha_tilde)?;
    let model = config.target.build::<f64>()?;
    let kernel = RwmKernel::new(model.clone(), config.sigma_pi_full()?, config.k_iterate)?;
    let d = config.target.dimension();
    let probes: Vec<Vec<f64>> = config.harness.drift_probes.iter().map(|&p| vec![p; d]).collect();
    let mut rng = stream(config.seed, STREAM_DRIFT);
    let h = &config.harness;
    let drift = drift_check(&kernel, &pair, &model, &probes, h.drift_samples, h.drift_radius, &mut rng)?;
    let (snv, summary) = snv_trajectory(config, h.snv_stride)?;
    Ok(Diagnostics { drift, snv, summary })
}

pub fn drift_csv(report: &DriftReport) -> String {
    let mut out = String::from("probe,ratio,std_error,samples,radius,violation\n");
    for p in &report.probes {
        let x = p.x.iter().map(|&v| fmt_float(v)).collect::<Vec<_>>().join(" ");
        let cells = [
            x,
            fmt_float(p.ratio),
            fmt_float(p.std_error),
            p.samples.to_string(),
            fmt_float(report.radius),
            p.violation.to_string(),
        ];
        out += &csv_line(&cells);
        out.push('\n');
    }
    out
}

pub fn snv_csv(t: &SnvTrajectory) -> String {
    let mut out = String::from("n,snY_V\n");
    for &(n, v) in &t.points {
        out += &csv_line(&[n.to_string(), fmt_float(v)]);
        out.push('\n');
    }
    out
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }
}

fn spread_line(s: &mut String, label: &str, summary: &RepeatSummary) {
    for e in &summary.spreads {
        let _ = writeln!(s, "{label}{:<8} {:.4} (±{:.4})", e.name, e.mean, e.two_sd);
    }
}

/// Runs `command` and writes its outputs under `out`.
pub fn execute(command: Command, config: &RunConfig, out: &Path) -> Result<Outcome> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    let mut w = Writer { dir: out, files: Vec::new() };
    let mut resolved = config.clone();
    let mut text = String::new();
    match command {
        Command::Run => {
            let (trace, s) = run(config)?;
            let record = RunRecord { run_index: 0, seed: config.seed, summary: s.clone() };
            w.put("runs.csv", &runs_csv(std::slice::from_ref(&record)))?;
            if config.harness.dump_trace {
                let mut buf = Vec::new();
                trace.measure.write_trace_csv(&mut buf)?;
                w.put("y_trace.csv", &String::from_utf8_lossy(&buf))?;
                if let Some(states) = &trace.x_states {
                    let mut x = String::from("n,x\n");
                    for (i, chunk) in states.chunks(trace.dimension).enumerate() {
                        let cells: Vec<String> = chunk.iter().map(|&v| fmt_float(v)).collect();
                        let _ = writeln!(x, "{},{}", i + 1, cells.join(" "));
                    }
                    w.put("x_trace.csv", &x)?;
                }
            }
            let _ = writeln!(text, "single run, seed {}, {} iterations", config.seed, config.n_iters);
            for (name, v) in &s.estimates {
                let _ = writeln!(text, "  {name:<8} {v:.6}");
            }
            let _ = writeln!(
                text,
                "  acceptance: rwm x {:.3}, rwm y {:.3}, exchange {:.3}; nonlinear moves {}",
                s.accept_rwm_x,
                s.accept_rwm_y,
                s.accept_exchange,
                s.branches.eps_moves()
            );
        }
        Command::Repeats => {
            let s = require_all(repeat_runs(config, config.harness.repeats)?, "")?;
            w.put("runs.csv", &runs_csv(&s.runs))?;
            w.put("aggregate.csv", &aggregate_csv(&s))?;
            let _ = writeln!(text, "{} repeats, mean (±2sd):", s.runs.len());
            spread_line(&mut text, "  ", &s);
        }
        Command::Table1 => {
            let table = table1_grid(config)?;
            let names: Vec<String> = table.cells[0].summary.spreads.iter().map(|s| s.name.clone()).collect();
            let mut runs = runs_header(&names, &["kind", "epsilon"]) + "\n";
            let mut agg = String::from("kind,epsilon,name,mean,two_sd\n");
            for c in &table.cells {
                let prefix = [kind_name(c.kind).to_string(), c.epsilon.to_string()];
                for r in &c.summary.runs {
                    runs += &runs_row(r, &names, &prefix);
                    runs.push('\n');
                }
                for e in &c.summary.spreads {
                    let cells = [prefix[0].clone(), prefix[1].clone(), e.name.clone(), fmt_float(e.mean), fmt_float(e.two_sd)];
                    agg += &csv_line(&cells);
                    agg.push('\n');
                }
            }
            w.put("runs.csv", &runs)?;
            w.put("aggregate.csv", &agg)?;
            w.put("table1.csv", &table1_csv(&table, &names[0]))?;
            let _ = writeln!(text, "estimate of {} (mean ±2sd over {} repeats)", names[0], config.harness.repeats);
            let _ = write!(text, "{:<14}", "kind");
            for e in &table.epsilons {
                let _ = write!(text, "{:>18}", format!("eps={e}"));
            }
            text.push('\n');
            for &kind in &table.kinds {
                let _ = write!(text, "{:<14}", kind_name(kind));
                for &e in &table.epsilons {
                    let s = table.cell(kind, e).and_then(|c| c.summary.spread(&names[0]));
                    let cell = s.map(|s| format!("{:.2} (±{:.2})", s.mean, s.two_sd)).unwrap_or_default();
                    let _ = write!(text, "{cell:>18}");
                }
                text.push('\n');
            }
        }
        Command::BaselineCompare => {
            let cmp = baseline_compare(config)?;
            resolved.harness.calibration_factor = Some(cmp.calibration_factor);
            w.put("runs.csv", &runs_csv(&cmp.nonlinear.runs))?;
            w.put("baseline_runs.csv", &runs_csv(&cmp.baseline.runs))?;
            w.put("aggregate.csv", &aggregate_csv(&cmp.nonlinear))?;
            w.put("comparison.csv", &comparison_csv(&cmp))?;
            let _ = writeln!(
                text,
                "calibration factor {:.4}: rwm {} iterations, nonlinear {} iterations",
                cmp.calibration_factor, cmp.baseline_config.n_iters, cmp.nonlinear_config.n_iters
            );
            spread_line(&mut text, "  rwm       ", &cmp.baseline);
            spread_line(&mut text, "  nonlinear ", &cmp.nonlinear);
        }
        Command::Diagnostics => {
            let d = diagnostics(config)?;
            if let Some(spec) = &mut resolved.lyapunov {
                if spec.log_pi_sup.is_none() {
                    spec.log_pi_sup = Some(spec.resolve_log_pi_sup(&config.target)?);
                }
            }
            w.put("drift.csv", &drift_csv(&d.drift))?;
            w.put("snv.csv", &snv_csv(&d.snv))?;
            let record = RunRecord { run_index: 0, seed: config.seed, summary: d.summary.clone() };
            w.put("runs.csv", &runs_csv(std::slice::from_ref(&record)))?;
            for p in &d.drift.probes {
                let _ = writeln!(
                    text,
                    "KV/V at {:?}: {:.6} (SE {:.2e}){}",
                    p.x,
                    p.ratio,
                    p.std_error,
                    if p.violation { "  DRIFT VIOLATION" } else { "" }
                );
            }
            if let (Some(last), Some(max)) = (d.snv.final_value(), d.snv.max_value()) {
                // a heuristic, not a theorem: a bounded trajectory keeps its
                // running maximum within a small multiple of the final value
                let _ = writeln!(text, "S_n^Y(V): final {last:.6}, max {max:.6}, max/final {:.3}", max / last);
            }
        }
    }
    w.put(RESOLVED_CONFIG, &emit_config(&resolved))?;
    w.put("summary.txt", &text)?;
    Ok(Outcome { resolved, files: w.files, summary: text })
}
