//! Command-line front end.
//!
//! Every command reads an optional TOML config, applies flag overrides,
//! writes its outputs into the output directory and records a JSON manifest
//! with the effective configuration, its hash and the hashes of all files.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backtest::{al_log_scores, model_confidence_set, BacktestReport, McsOptions};
use crate::engine::{
    es_level_for, parse_model_list, read_panels, run_combination, run_rolling, run_simulation_study_with, write_panels,
    write_study_csv, CareTau, ForecastPanel, RollingPlan, StudyOptions, StudyProtocol,
};
use crate::error::{Error, Result};
use crate::series::{adf_test, describe, read_series_file, write_series, IngestOptions, ValueColumn};

#[derive(Debug, Parser)]
#[command(name = "tailrisk", version, about = "VaR and ES forecasting, combination and backtesting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Ingest,
    Forecast,
    Combine,
    Backtest,
    Simulate,
    Report,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a price or return table, write percentage log returns and summary statistics.
    Ingest(Flags),
    /// Roll the models through a return series and write the forecast panel.
    Forecast(Flags),
    /// Append simple-average, median and joint AL combinations to a forecast panel.
    Combine(Flags),
    /// Backtest every column of a forecast panel.
    Backtest(Flags),
    /// Run the simulation study.
    Simulate(Flags),
    /// Print the result tables found in a directory.
    Report(Flags),
}

/// Flags shared by every command; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Take the configuration recorded in a manifest.
    #[arg(long, conflicts_with = "config")]
    pub from_manifest: Option<PathBuf>,
    /// Input file: a price or return table, or a forecast panel.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Tail probability; repeat for several.
    #[arg(long = "alpha")]
    pub alphas: Vec<f64>,
    /// Estimation window of the rolling fits (default 2000).
    #[arg(long)]
    pub initial_window: Option<usize>,
    /// Historical-simulation window (default 168).
    #[arg(long)]
    pub hs_window: Option<usize>,
    /// Training window of the rolling combinations (default 1251).
    #[arg(long)]
    pub combo_window: Option<usize>,
    /// Panel rows at the end that are backtested (default 1200).
    #[arg(long)]
    pub eval_tail: Option<usize>,
    /// Comma-separated model ids, e.g. `HS,GARCH-T,CAViaR-ES-SAV-AR`.
    #[arg(long)]
    pub models: Option<String>,
    /// Base seed for every random draw.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulation-study repetitions.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Also write per-model CSVs for plotting.
    #[arg(long)]
    pub emit_plot_data: bool,
    /// Expectile-level rule for CARE models.
    #[arg(long, value_parser = ["calibrated", "alpha"])]
    pub care_tau: Option<String>,
    /// Simulation-study protocol.
    #[arg(long, value_parser = ["in-sample", "split-sample"])]
    pub protocol: Option<String>,
}

/// Optional keys of the TOML config.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub alphas: Option<Vec<f64>>,
    pub initial_window: Option<usize>,
    pub hs_window: Option<usize>,
    pub combo_window: Option<usize>,
    pub eval_tail: Option<usize>,
    pub models: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub emit_plot_data: Option<bool>,
    pub care_tau: Option<CareTau>,
    pub protocol: Option<StudyProtocol>,
}

/// Effective configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub plan: RollingPlan,
    pub reps: usize,
    pub emit_plot_data: bool,
    pub protocol: StudyProtocol,
}

impl RunConfig {
    pub fn resolve(command: CommandKind, flags: &Flags) -> Result<Self> {
        if let Some(path) = &flags.from_manifest {
            let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| Error::InvalidInput(format!("{}: not a manifest: {e}", path.display())))?;
            if m.config.command != command {
                return Err(Error::InvalidInput(format!(
                    "manifest records a {:?} run, not {command:?}",
                    m.config.command
                )));
            }
            let mut cfg = m.config;
            if let Some(o) = &flags.output {
                cfg.output = o.clone();
            }
            return Ok(cfg);
        }
        let file = match &flags.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                toml::from_str::<ConfigFile>(&text)
                    .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        let mut plan = RollingPlan::default();
        if let Some(v) = flags.initial_window.or(file.initial_window) {
            plan.initial_window = v;
        }
        if let Some(v) = flags.hs_window.or(file.hs_window) {
            plan.hs_window = v;
        }
        if let Some(v) = flags.combo_window.or(file.combo_window) {
            plan.combo_window = v;
        }
        if let Some(v) = flags.eval_tail.or(file.eval_tail) {
            plan.eval_tail = v;
        }
        if !flags.alphas.is_empty() {
            plan.alphas = flags.alphas.clone();
        } else if let Some(a) = file.alphas {
            plan.alphas = a;
        }
        plan.alphas.dedup();
        if let Some(m) = &flags.models {
            plan.models = parse_model_list(m)?;
        } else if let Some(m) = file.models {
            plan.models = parse_model_list(&m.join(","))?;
        }
        if let Some(s) = flags.seed.or(file.seed) {
            plan.seed = s;
        }
        plan.care_tau = match flags.care_tau.as_deref() {
            Some("alpha") => CareTau::Alpha,
            Some(_) => CareTau::Calibrated,
            None => file.care_tau.unwrap_or_default(),
        };
        let protocol = match flags.protocol.as_deref() {
            Some("split-sample") => StudyProtocol::SplitSample,
            Some(_) => StudyProtocol::InSample,
            None => file.protocol.unwrap_or_default(),
        };
        let output = flags
            .output
            .clone()
            .or(file.output)
            .ok_or_else(|| Error::InvalidInput("no output directory (use --output)".into()))?;
        let cfg = RunConfig {
            command,
            input: flags.input.clone().or(file.input),
            output,
            plan,
            reps: flags.reps.or(file.reps).unwrap_or(1),
            emit_plot_data: flags.emit_plot_data || file.emit_plot_data.unwrap_or(false),
            protocol,
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.plan.alphas.is_empty() {
            return Err(Error::InvalidInput("no alpha levels".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidInput("reps must be at least 1".into()));
        }
        let needs_input = !matches!(self.command, CommandKind::Simulate);
        match &self.input {
            Some(p) if needs_input && !p.exists() => {
                Err(Error::InvalidInput(format!("input {} does not exist", p.display())))
            }
            None if needs_input => Err(Error::InvalidInput("no input given (use --input)".into())),
            _ => Ok(()),
        }
    }

    fn input(&self) -> Result<&Path> {
        self.input.as_deref().ok_or_else(|| Error::InvalidInput("no input given (use --input)".into()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(bytes)) })
}

/// Tracks files written by a command so a failed run leaves nothing behind.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
    created_dirs: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        let mut created_dirs = Vec::new();
        let mut missing = Vec::new();
        let mut p = Some(dir);
        while let Some(d) = p {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            p = d.parent();
        }
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        created_dirs.extend(missing);
        Ok(Outputs { dir: dir.to_path_buf(), written: Vec::new(), created_dirs })
    }

    fn path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            if !parent.exists() {
                fs::create_dir_all(parent).map_err(|e| Error::Io(format!("{}: {e}", parent.display())))?;
                self.created_dirs.push(parent.to_path_buf());
            }
        }
        self.written.push(p.clone());
        Ok(p)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        let p = self.path(name)?;
        let f = fs::File::create(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        Ok(BufWriter::new(f))
    }

    fn write_string(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name)?;
        fs::write(&p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display())))
    }

    fn write_manifest(&mut self, name: &str, cfg: &RunConfig, inputs: &[&Path], outputs: &[PathBuf]) -> Result<()> {
        let manifest = Manifest {
            tool: "tailrisk".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash(),
            seed: cfg.plan.seed,
            config: cfg.clone(),
            inputs: inputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| digest_file(p)).collect::<Result<_>>()?,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Internal(e.to_string()))?;
        self.write_string(name, &(text + "\n"))
    }

    /// Writes the manifest covering every file written so far.
    fn finish(&mut self, cfg: &RunConfig, inputs: &[&Path]) -> Result<()> {
        let outs = self.written.clone();
        let name = format!(
            "{}.manifest.json",
            serde_json::to_value(cfg.command).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
        );
        self.write_manifest(&name, cfg, inputs, &outs)
    }

    fn discard(self) {
        for p in self.written.iter().rev() {
            let _ = fs::remove_file(p);
        }
        for d in self.created_dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

/// Wraps an error with the name of the stage that raised it.
fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InsufficientData(m) => Error::InsufficientData(format!("{name}: {m}")),
        Error::InvalidInput(m) => Error::InvalidInput(format!("{name}: {m}")),
        Error::Domain(m) => Error::Domain(format!("{name}: {m}")),
        Error::Degenerate(m) => Error::Degenerate(format!("{name}: {m}")),
        Error::Fitting { message, best } => Error::Fitting { message: format!("{name}: {message}"), best },
        Error::Infeasible(m) => Error::Infeasible(format!("{name}: {m}")),
        Error::Parse { line, message } => Error::Parse { line, message: format!("{name}: {message}") },
        Error::Io(m) => Error::Io(format!("{name}: {m}")),
        Error::Internal(m) => Error::Internal(format!("{name}: {m}")),
        other => other,
    })
}

fn read_panel_file(path: &Path) -> Result<Vec<ForecastPanel>> {
    let f = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_panels(f)
}

fn cmd_ingest(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let input = cfg.input()?;
    let (series, kind) = stage("ingest", read_series_file(input, IngestOptions::default()))?;
    let stats = stage("describe", describe(&series))?;
    let adf = stage("adf", adf_test(&series, 12)).ok();
    write_series(&series, out.create("returns.csv")?)?;
    #[derive(Serialize)]
    struct Summary {
        source: &'static str,
        stats: crate::series::DescriptiveStats,
        adf: Option<crate::series::AdfResult>,
    }
    let summary = Summary {
        source: match kind {
            ValueColumn::Price => "price",
            ValueColumn::Return => "return",
        },
        stats,
        adf,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Internal(e.to_string()))?;
    out.write_string("summary.json", &(text + "\n"))?;
    println!("{} returns written to {}", series.len(), out.dir.join("returns.csv").display());
    out.finish(cfg, &[input])
}

fn cmd_forecast(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let input = cfg.input()?;
    let (series, _) = stage("ingest", read_series_file(input, IngestOptions::default()))?;
    let run = stage("forecast", run_rolling(&series, &cfg.plan))?;
    write_panels(&run.panels, out.create("panel.csv")?)?;
    let mut w = csv::Writer::from_writer(out.create("issues.csv")?);
    w.write_record(["model", "alpha", "row", "dropped", "message"])?;
    for i in &run.issues {
        w.write_record([
            i.model.clone(),
            i.alpha.to_string(),
            i.row.to_string(),
            i.dropped.to_string(),
            i.message.clone(),
        ])?;
    }
    w.flush()?;
    drop(w);
    for p in &run.panels {
        println!("alpha {}: {} forecasts for {} models", p.alpha, p.len(), p.model_ids.len());
    }
    if !run.issues.is_empty() {
        println!("{} cell issues recorded in issues.csv", run.issues.len());
    }
    out.finish(cfg, &[input])
}

fn cmd_combine(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let input = cfg.input()?;
    let panels = stage("read panel", read_panel_file(input))?;
    let mut combined = Vec::new();
    let mut w = csv::Writer::from_writer(out.create("weights.csv")?);
    w.write_record(["alpha", "timestamp", "kind", "model", "weight"])?;
    for p in &panels {
        let run = stage("combine", run_combination(p, &cfg.plan))?;
        for (row, wt) in run.weights.iter().enumerate() {
            let ts = run.panel.timestamps[row].format("%Y-%m-%d %H:%M:%S").to_string();
            for (kind, ws) in [("beta", &wt.beta), ("gamma", &wt.gamma)] {
                for (m, x) in p.model_ids.iter().zip(ws.iter()) {
                    w.write_record([p.alpha.to_string(), ts.clone(), kind.to_string(), m.clone(), x.to_string()])?;
                }
            }
        }
        println!(
            "alpha {}: {} combined forecasts, {} equal-weight fallbacks, {} clamped rows",
            p.alpha,
            run.panel.len(),
            run.fallback_rows.len(),
            run.clamped_rows.len()
        );
        combined.push(run.panel);
    }
    w.flush()?;
    drop(w);
    write_panels(&combined, out.create("combined_panel.csv")?)?;
    out.finish(cfg, &[input])
}

/// Backtests the last `eval_tail` rows of each panel.
pub fn backtest_panels(panels: &[ForecastPanel], eval_tail: usize, seed: u64) -> Result<Vec<BacktestReport>> {
    let mut reports = Vec::new();
    for p in panels {
        if eval_tail == 0 || eval_tail > p.len() {
            return Err(Error::InvalidInput(format!(
                "eval tail {eval_tail} must lie in [1, {}] for the alpha {} panel",
                p.len(),
                p.alpha
            )));
        }
        let tail = p.rows(p.len() - eval_tail, p.len());
        let mut block = Vec::new();
        let mut scores = Vec::new();
        for (j, m) in tail.model_ids.iter().enumerate() {
            let var = tail.var_column(j);
            let es = tail.es_column(j);
            let level = es_level_for(m, p.alpha)?;
            block.push(BacktestReport::evaluate(m, &tail.realized, &var, Some((&es, level)), p.alpha)?);
            scores.push(al_log_scores(&tail.realized, &var, &es, p.alpha).ok());
        }
        let usable: Vec<usize> = (0..scores.len()).filter(|&j| scores[j].is_some()).collect();
        if usable.len() >= 2 && eval_tail >= 100 {
            let losses: Vec<Vec<f64>> = usable.iter().map(|&j| scores[j].clone().expect("usable")).collect();
            let mcs = model_confidence_set(&losses, 0.75, &McsOptions { seed, ..McsOptions::default() })?;
            let in75 = mcs.included_at(0.75);
            let in90 = mcs.included_at(0.90);
            for (k, &j) in usable.iter().enumerate() {
                block[j].mcs75 = Some(in75.contains(&k));
                block[j].mcs90 = Some(in90.contains(&k));
            }
        }
        reports.extend(block);
    }
    Ok(reports)
}

fn cmd_backtest(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let input = cfg.input()?;
    let panels = stage("read panel", read_panel_file(input))?;
    let reports = stage("backtest", backtest_panels(&panels, cfg.plan.eval_tail, cfg.plan.seed))?;
    crate::backtest::write_reports_csv(&reports, out.create("backtest.csv")?)?;
    if cfg.emit_plot_data {
        for p in &panels {
            let tail = p.rows(p.len() - cfg.plan.eval_tail, p.len());
            for (j, m) in tail.model_ids.iter().enumerate() {
                let name = format!("plot/alpha_{}/{}.csv", p.alpha, m.replace(['/', '\\', ' '], "_"));
                let mut w = csv::Writer::from_writer(out.create(&name)?);
                w.write_record(["timestamp", "realized", "var", "es"])?;
                for t in 0..tail.len() {
                    w.write_record([
                        tail.timestamps[t].format("%Y-%m-%d %H:%M:%S").to_string(),
                        tail.realized[t].to_string(),
                        tail.var[t][j].to_string(),
                        tail.es[t][j].to_string(),
                    ])?;
                }
                w.flush()?;
            }
        }
        // weight trajectories written by `combine` next to its panel
        if let Some(weights) = input.parent().map(|d| d.join("weights.csv")).filter(|p| p.exists()) {
            let text = fs::read_to_string(&weights).map_err(|e| Error::Io(format!("{}: {e}", weights.display())))?;
            out.write_string("plot/joint_weights.csv", &text)?;
        }
    }
    print_reports(&reports);
    out.finish(cfg, &[input])
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"))
}

fn print_reports(reports: &[BacktestReport]) {
    println!(
        "{:<22} {:>5} {:>7} {:>7} {:>7} {:>7} {:>10} {:>9} {:>7} {:>5} {:>5}",
        "model", "alpha", "vrate", "vratio", "uc_p", "dq4_p", "qlf", "al", "es_rat", "mcs75", "mcs90"
    );
    for r in reports {
        let flag = |b: Option<bool>| b.map_or("NA", |x| if x { "in" } else { "out" });
        println!(
            "{:<22} {:>5} {:>7.4} {:>7.3} {:>7.4} {:>7.4} {:>10.3} {:>9} {:>7} {:>5} {:>5}",
            r.model_id,
            r.alpha,
            r.vrate,
            r.vratio,
            r.uc_p,
            r.dq4_p,
            r.qlf,
            fmt_opt(r.al_score),
            fmt_opt(r.es_ratio),
            flag(r.mcs75),
            flag(r.mcs90)
        );
    }
}

fn cmd_simulate(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let opts = StudyOptions { protocol: cfg.protocol };
    for rep in 0..cfg.reps {
        let seed = cfg.plan.seed.wrapping_add(rep as u64);
        let study = stage("simulate", run_simulation_study_with(seed, &opts))?;
        let name = format!("study_seed{seed}.csv");
        let mut f = out.create(&name)?;
        write_study_csv(&study, &mut f)?;
        drop(f);
        let mut rep_cfg = cfg.clone();
        rep_cfg.plan.seed = seed;
        rep_cfg.reps = 1;
        let produced = vec![out.dir.join(&name)];
        out.write_manifest(&format!("study_seed{seed}.manifest.json"), &rep_cfg, &[], &produced)?;
        if cfg.emit_plot_data {
            write_panels(std::slice::from_ref(&study.panel), out.create(&format!("plot/study_seed{seed}_panel.csv"))?)?;
        }
        println!("seed {seed}");
        println!(
            "{:<18} {:>6} {:>6} {:>6} {:>9} {:>4} | {:>6} {:>6} {:>6} {:>6} {:>9} {:>4}",
            "model", "vrate", "vratio", "dq4", "qlf", "rank", "level", "esrate", "esratio", "dq4", "qlf", "rank"
        );
        for r in &study.rows {
            let left = r.var.map_or_else(
                || format!("{:>6} {:>6} {:>6} {:>9} {:>4}", "", "", "", "", ""),
                |m| {
                    format!(
                        "{:>6.3} {:>6.3} {:>6} {:>9.3} {:>4}",
                        m.vrate,
                        m.vratio,
                        if m.dq4_accept { "ACCEPT" } else { "REJECT" },
                        m.qlf,
                        m.qlf_rank
                    )
                },
            );
            let right = r.es.map_or_else(String::new, |m| {
                format!(
                    "{:>6.4} {:>6.3} {:>6.3} {:>6} {:>9.3} {:>4}",
                    m.level,
                    m.vrate,
                    m.vratio,
                    if m.dq4_accept { "ACCEPT" } else { "REJECT" },
                    m.qlf,
                    m.qlf_rank
                )
            });
            println!("{:<18} {left} | {right}", r.model);
        }
    }
    out.finish(cfg, &[])
}

fn cmd_report(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let input = cfg.input()?;
    let mut files: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| Error::Io(format!("{}: {e}", input.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                name == "backtest.csv" || (name.starts_with("study_seed") && name.ends_with(".csv"))
            })
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no result tables in {}", input.display())));
    }
    let mut report = String::new();
    for path in files.drain(..) {
        let mut rdr = csv::Reader::from_path(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let headers: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        let rows: Vec<Vec<String>> = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(short_number).collect()))
            .collect::<std::result::Result<_, _>>()?;
        let widths: Vec<usize> = (0..headers.len())
            .map(|c| rows.iter().map(|r| r.get(c).map_or(0, |s| s.len())).chain([headers[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| -> String {
            cells.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect::<Vec<_>>().join("  ")
        };
        report.push_str(&format!("## {}\n\n{}\n", path.display(), line(&headers)));
        for r in &rows {
            report.push_str(&line(r));
            report.push('\n');
        }
        report.push('\n');
    }
    print!("{report}");
    out.write_string("report.txt", &report)?;
    out.finish(cfg, &[])
}

fn short_number(s: &str) -> String {
    match s.parse::<f64>() {
        Ok(v) if s.contains('.') || s.contains('e') => format!("{v:.4}"),
        _ => s.to_string(),
    }
}

/// Runs a parsed command; returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let (kind, flags) = match &cli.command {
        Command::Ingest(f) => (CommandKind::Ingest, f),
        Command::Forecast(f) => (CommandKind::Forecast, f),
        Command::Combine(f) => (CommandKind::Combine, f),
        Command::Backtest(f) => (CommandKind::Backtest, f),
        Command::Simulate(f) => (CommandKind::Simulate, f),
        Command::Report(f) => (CommandKind::Report, f),
    };
    match run(kind, flags) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// 2 for internal invariant violations, 1 for every other error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_internal() {
        2
    } else {
        1
    }
}

pub fn run(kind: CommandKind, flags: &Flags) -> Result<()> {
    let cfg = stage("config", RunConfig::resolve(kind, flags))?;
    let mut out = Outputs::new(&cfg.output)?;
    let result = match kind {
        CommandKind::Ingest => cmd_ingest(&cfg, &mut out),
        CommandKind::Forecast => cmd_forecast(&cfg, &mut out),
        CommandKind::Combine => cmd_combine(&cfg, &mut out),
        CommandKind::Backtest => cmd_backtest(&cfg, &mut out),
        CommandKind::Simulate => cmd_simulate(&cfg, &mut out),
        CommandKind::Report => cmd_report(&cfg, &mut out),
    };
    if result.is_err() {
        out.discard();
    }
    result
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                1
            } else {
                0
            }
        }
    }
}
