//! Pipeline subcommands. Each writes its outputs plus a JSON report that
//! embeds the exact [`Command`] that produced it, so [`reproduce`] can re-run
//! it and compare bytes.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{run_momentum, BacktestError, BacktestResult, StrategyConfig};
use crate::diff_losses::RealTargets;
use crate::garch::{simulate_garch, GarchError};
use crate::io::{ingest_csv, write_returns_csv, write_table, ColumnKind, GenerateConfig, IngestError, SimulateConfig};
use crate::models::{generate_path, load_checkpoint, save_checkpoint, ModelError, ModelParams, MIN_SEQ_LEN};
use crate::series::{mean, sample_std, ReturnSeries};
use crate::stats::pearson;
use crate::stylized_facts::{
    acf, fit_gpd_pot, mean_report, FactError, StylizedFactReport, StylizedFacts, Tail, CFVC_WINDOWS,
    DEFAULT_ACF_LAGS, DEFAULT_TAIL_QUANTILE,
};
use crate::trainer::{train, TrainConfig, TrainError, TrainLogRecord, TrainObserver};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Input(#[from] IngestError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        source: std::io::Error,
    },
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(String),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: String, source: ModelError },
    #[error("incompatible seq_len: {0}")]
    IncompatibleSeqLen(String),
    #[error("estimator failure: {0}")]
    Estimator(String),
    #[error("training aborted: {0}")]
    NonFinite(String),
    #[error("reproduction differs in {0:?}")]
    Mismatch(Vec<String>),
}

impl CliError {
    /// Process exit status; 0 is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(IngestError::Io { .. }) | CliError::Output { .. } => 3,
            CliError::Input(_) => 4,
            CliError::MissingCheckpoint(_) => 5,
            CliError::Checkpoint { .. } => 6,
            CliError::IncompatibleSeqLen(_) => 7,
            CliError::Estimator(_) => 8,
            CliError::NonFinite(_) => 9,
            CliError::Mismatch(_) => 10,
        }
    }
}

impl From<FactError> for CliError {
    fn from(e: FactError) -> Self {
        CliError::Estimator(e.to_string())
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        match e {
            BacktestError::Config(m) => CliError::Config(m),
            e => CliError::Estimator(e.to_string()),
        }
    }
}

impl From<GarchError> for CliError {
    fn from(e: GarchError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } | TrainError::AdamNonFinite(_) => CliError::NonFinite(e.to_string()),
            TrainError::Config(m) => CliError::Config(m),
            TrainError::DatasetTooShort { .. } => CliError::IncompatibleSeqLen(e.to_string()),
            TrainError::Model(ModelError::InvalidArch(m)) => CliError::Config(m),
            e => CliError::Estimator(e.to_string()),
        }
    }
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.display().to_string(),
        source,
    }
}

/// A fully resolved subcommand: everything needed to recreate its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Command {
    Simulate {
        seed: u64,
        config: SimulateConfig,
    },
    Ingest {
        input: PathBuf,
    },
    Train {
        input: PathBuf,
        config: TrainConfig,
    },
    Generate {
        checkpoint: PathBuf,
        seed: u64,
        config: GenerateConfig,
    },
    Evaluate {
        real: PathBuf,
        synth: Vec<PathBuf>,
    },
    Backtest {
        series: Vec<PathBuf>,
        config: StrategyConfig,
    },
    Report {
        reports: Vec<PathBuf>,
        real: Option<PathBuf>,
        synth: Vec<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Ingest { .. } => "ingest",
            Command::Train { .. } => "train",
            Command::Generate { .. } => "generate",
            Command::Evaluate { .. } => "evaluate",
            Command::Backtest { .. } => "backtest",
            Command::Report { .. } => "report",
        }
    }

    pub fn report_file(&self) -> String {
        format!("{}.json", self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub file: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl SeriesSummary {
    fn of(file: String, r: &[f64]) -> Self {
        Self {
            file,
            n: r.len(),
            mean: mean(r),
            std: if r.len() > 1 { sample_std(r) } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedRun {
    pub file: String,
    pub facts: StylizedFacts,
    pub gaps: StylizedFactReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestRow {
    pub file: String,
    pub result: BacktestResult,
}

/// Mean of each metric across paths; optional metrics average the paths that have them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestMean {
    pub ann_return: f64,
    pub ann_vol: f64,
    pub sharpe: Option<f64>,
    pub max_drawdown: f64,
    pub var95: Option<f64>,
    pub cvar95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Results {
    Simulate {
        summary: SeriesSummary,
    },
    Ingest {
        columns: ColumnKind,
        summary: SeriesSummary,
    },
    Train {
        generator_params: usize,
        critic_params: usize,
        targets: Option<RealTargets>,
        final_record: Option<TrainLogRecord>,
    },
    Generate {
        seq_len: usize,
        paths: Vec<SeriesSummary>,
    },
    Evaluate {
        real: StylizedFacts,
        runs: Vec<EvaluatedRun>,
        mean: StylizedFactReport,
    },
    Backtest {
        paths: Vec<BacktestRow>,
        mean: BacktestMean,
        /// Sample std of annualized return across paths (`None` for one path).
        ann_return_cross_std: Option<f64>,
    },
    Report {
        merged: Vec<Report>,
        plots: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: Command,
    /// Files written next to the report, relative to the output directory.
    pub outputs: Vec<String>,
    pub results: Results,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let s = fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let r: Report =
            serde_json::from_str(&s).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "{}: report schema {} (expected {REPORT_SCHEMA_VERSION})",
                path.display(),
                r.schema_version
            )));
        }
        Ok(r)
    }
}

fn read_returns(path: &Path) -> Result<ReturnSeries, CliError> {
    Ok(ingest_csv(path)?.returns())
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

fn load_model(path: &Path) -> Result<ModelParams, CliError> {
    load_checkpoint(path).map_err(|e| match e {
        ModelError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            CliError::MissingCheckpoint(path.display().to_string())
        }
        ModelError::Io(source) => CliError::Input(IngestError::Io {
            path: path.display().to_string(),
            source,
        }),
        source => CliError::Checkpoint {
            path: path.display().to_string(),
            source,
        },
    })
}

fn save_model(params: &ModelParams, path: &Path) -> Result<(), CliError> {
    save_checkpoint(params, path).map_err(|e| match e {
        ModelError::Io(source) => CliError::Output {
            path: path.display().to_string(),
            source,
        },
        source => CliError::Checkpoint {
            path: path.display().to_string(),
            source,
        },
    })
}

/// Runs `cmd`, writing its outputs and `<name>.json` into `out`.
pub fn execute(cmd: &Command, out: &Path) -> Result<Report, CliError> {
    fs::create_dir_all(out).map_err(write_err(out))?;
    let (outputs, results) = match cmd {
        Command::Simulate { seed, config } => run_simulate(*seed, config, out)?,
        Command::Ingest { input } => run_ingest(input, out)?,
        Command::Train { input, config } => run_train(input, config, out)?,
        Command::Generate { checkpoint, seed, config } => run_generate(checkpoint, *seed, config, out)?,
        Command::Evaluate { real, synth } => run_evaluate(real, synth)?,
        Command::Backtest { series, config } => run_backtest(series, config)?,
        Command::Report { reports, real, synth } => run_report(reports, real.as_deref(), synth, out)?,
    };
    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        command: cmd.clone(),
        outputs,
        results,
    };
    let path = out.join(cmd.report_file());
    fs::write(&path, report.to_json()).map_err(write_err(&path))?;
    Ok(report)
}

fn run_simulate(seed: u64, config: &SimulateConfig, out: &Path) -> Result<(Vec<String>, Results), CliError> {
    let r = simulate_garch(&config.garch, config.n, seed)?;
    let file = "returns.csv".to_string();
    let path = out.join(&file);
    write_returns_csv(&path, r.values()).map_err(write_err(&path))?;
    let summary = SeriesSummary::of(file.clone(), r.values());
    Ok((vec![file], Results::Simulate { summary }))
}

fn run_ingest(input: &Path, out: &Path) -> Result<(Vec<String>, Results), CliError> {
    let ing = ingest_csv(input)?;
    let r = ing.returns();
    let file = "returns.csv".to_string();
    let path = out.join(&file);
    write_returns_csv(&path, r.values()).map_err(write_err(&path))?;
    Ok((
        vec![file.clone()],
        Results::Ingest {
            columns: ing.kind(),
            summary: SeriesSummary::of(file, r.values()),
        },
    ))
}

/// Streams the training log and periodic checkpoints to disk.
struct DiskObserver {
    log: std::io::BufWriter<fs::File>,
    log_path: PathBuf,
    dir: PathBuf,
    written: Vec<String>,
}

impl TrainObserver for DiskObserver {
    fn on_record(&mut self, record: &TrainLogRecord) -> Result<(), TrainError> {
        use std::io::Write;
        if record.iteration.is_multiple_of(100) {
            log::info!(
                "iter {} critic {:.5} gen {:.5} anneal {:.2}",
                record.iteration,
                record.critic_loss,
                record.gen_total,
                record.anneal
            );
        }
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(self.log, "{line}")
            .map_err(|e| TrainError::Observer(format!("{}: {e}", self.log_path.display())))
    }

    fn on_checkpoint(&mut self, iteration: usize, generator: &ModelParams, critic: &ModelParams) -> Result<(), TrainError> {
        for (name, params) in [("generator", generator), ("critic", critic)] {
            let rel = format!("checkpoints/{name}_iter{iteration:06}.sfag");
            save_checkpoint(params, &self.dir.join(&rel))
                .map_err(|e| TrainError::Observer(format!("{rel}: {e}")))?;
            self.written.push(rel);
        }
        Ok(())
    }
}

fn run_train(input: &Path, config: &TrainConfig, out: &Path) -> Result<(Vec<String>, Results), CliError> {
    let real = read_returns(input)?;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(write_err(&ckpt_dir))?;
    let log_path = out.join("train_log.jsonl");
    let file = fs::File::create(&log_path).map_err(write_err(&log_path))?;
    let mut obs = DiskObserver {
        log: std::io::BufWriter::new(file),
        log_path: log_path.clone(),
        dir: out.to_path_buf(),
        written: Vec::new(),
    };
    let outcome = match train(&real, config, &mut obs) {
        Ok(o) => o,
        Err(TrainError::Observer(m)) => {
            return Err(CliError::Output {
                path: m,
                source: std::io::Error::other("write failed"),
            })
        }
        Err(e) => return Err(e.into()),
    };
    {
        use std::io::Write;
        obs.log.flush().map_err(write_err(&log_path))?;
    }
    save_model(&outcome.generator, &out.join("generator.sfag"))?;
    save_model(&outcome.critic, &out.join("critic.sfag"))?;
    let mut outputs = vec![
        "generator.sfag".to_string(),
        "critic.sfag".to_string(),
        "train_log.jsonl".to_string(),
    ];
    outputs.extend(obs.written);
    Ok((
        outputs,
        Results::Train {
            generator_params: outcome.generator.num_parameters(),
            critic_params: outcome.critic.num_parameters(),
            targets: outcome.targets,
            final_record: outcome.log.last().cloned(),
        },
    ))
}

fn run_generate(
    checkpoint: &Path,
    seed: u64,
    config: &GenerateConfig,
    out: &Path,
) -> Result<(Vec<String>, Results), CliError> {
    if config.n_paths == 0 || config.windows == 0 {
        return Err(CliError::Config("n_paths and windows must be positive".into()));
    }
    let gen = load_model(checkpoint)?;
    if let Some(expected) = config.seq_len {
        if expected != gen.arch.seq_len {
            return Err(CliError::IncompatibleSeqLen(format!(
                "checkpoint has seq_len {}, config expects {expected}",
                gen.arch.seq_len
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outputs = Vec::new();
    let mut paths = Vec::new();
    for p in 0..config.n_paths {
        let r = generate_path(&gen, config.windows, seed, &mut rng).map_err(|source| CliError::Checkpoint {
            path: checkpoint.display().to_string(),
            source,
        })?;
        let file = format!("path_{p:03}.csv");
        let path = out.join(&file);
        write_returns_csv(&path, r.values()).map_err(write_err(&path))?;
        paths.push(SeriesSummary::of(file.clone(), r.values()));
        outputs.push(file);
    }
    Ok((
        outputs,
        Results::Generate {
            seq_len: gen.arch.seq_len,
            paths,
        },
    ))
}

fn run_evaluate(real: &Path, synth: &[PathBuf]) -> Result<(Vec<String>, Results), CliError> {
    if synth.is_empty() {
        return Err(CliError::Config("evaluate needs at least one synthetic series".into()));
    }
    let real_series = read_returns(real)?;
    let real_facts = StylizedFacts::measure(&real_series, "real")?;
    let mut runs = Vec::new();
    for path in synth {
        let s = read_returns(path)?;
        if s.len() < MIN_SEQ_LEN {
            return Err(CliError::IncompatibleSeqLen(format!(
                "{} has {} returns, the estimators need at least {MIN_SEQ_LEN}",
                path.display(),
                s.len()
            )));
        }
        let facts = StylizedFacts::measure(&s, "synthetic")?;
        let gaps = real_facts.gap(&facts);
        runs.push(EvaluatedRun {
            file: file_label(path),
            facts,
            gaps,
        });
    }
    let gaps: Vec<StylizedFactReport> = runs.iter().map(|r| r.gaps).collect();
    let mean = mean_report(&gaps)?;
    Ok((
        vec![],
        Results::Evaluate {
            real: real_facts,
            runs,
            mean,
        },
    ))
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Vec<f64> = v.flatten().collect();
    (!xs.is_empty()).then(|| mean(&xs))
}

pub fn backtest_mean(rows: &[BacktestResult]) -> BacktestMean {
    let col = |f: fn(&BacktestResult) -> f64| mean(&rows.iter().map(f).collect::<Vec<_>>());
    BacktestMean {
        ann_return: col(|r| r.ann_return),
        ann_vol: col(|r| r.ann_vol),
        sharpe: mean_opt(rows.iter().map(|r| r.sharpe)),
        max_drawdown: col(|r| r.max_drawdown),
        var95: mean_opt(rows.iter().map(|r| r.var95)),
        cvar95: mean_opt(rows.iter().map(|r| r.cvar95)),
    }
}

fn run_backtest(series: &[PathBuf], config: &StrategyConfig) -> Result<(Vec<String>, Results), CliError> {
    if series.is_empty() {
        return Err(CliError::Config("backtest needs at least one series".into()));
    }
    let mut paths = Vec::new();
    for p in series {
        let r = read_returns(p)?;
        let (_, result) = run_momentum(&r, config)?;
        paths.push(BacktestRow {
            file: file_label(p),
            result,
        });
    }
    let results: Vec<BacktestResult> = paths.iter().map(|r| r.result).collect();
    let ann: Vec<f64> = results.iter().map(|r| r.ann_return).collect();
    Ok((
        vec![],
        Results::Backtest {
            mean: backtest_mean(&results),
            ann_return_cross_std: (ann.len() > 1).then(|| sample_std(&ann)),
            paths,
        },
    ))
}

// ---------------------------------------------------------------------------
// report and plot data

fn fmt(v: f64) -> String {
    v.to_string()
}

fn mean_vectors(vs: &[Vec<f64>]) -> Vec<f64> {
    let k = vs[0].len();
    (0..k).map(|i| vs.iter().map(|v| v[i]).sum::<f64>() / vs.len() as f64).collect()
}

/// `corr(r_t, r²_{t+k})` for `k = 1..=max_lag`.
pub fn leverage_by_lag(r: &[f64], max_lag: usize) -> Vec<Option<f64>> {
    (1..=max_lag)
        .map(|k| {
            if r.len() <= k + 2 {
                return None;
            }
            let sq: Vec<f64> = r[k..].iter().map(|v| v * v).collect();
            pearson(&r[..r.len() - k], &sq)
        })
        .collect()
}

struct PlotInputs {
    real: ReturnSeries,
    synth: Vec<ReturnSeries>,
}

fn write_plots(inputs: &PlotInputs, dir: &Path) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(dir).map_err(write_err(dir))?;
    let mut files = Vec::new();
    let mut emit = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<(), CliError> {
        let path = dir.join(name);
        write_table(&path, header, &rows).map_err(write_err(&path))?;
        files.push(format!("plots/{name}"));
        Ok(())
    };
    let k = DEFAULT_ACF_LAGS;
    let have_synth = !inputs.synth.is_empty();

    // (i) linear ACF and (ii) ACF of |r|
    for (name, transform) in [
        ("acf_returns.csv", (|v: f64| v) as fn(f64) -> f64),
        ("acf_abs_returns.csv", f64::abs as fn(f64) -> f64),
    ] {
        let of = |r: &ReturnSeries| -> Result<Vec<f64>, CliError> {
            let x: Vec<f64> = r.values().iter().map(|&v| transform(v)).collect();
            Ok(acf(&x, k)?.values)
        };
        let real = of(&inputs.real)?;
        let synth = if have_synth {
            Some(mean_vectors(&inputs.synth.iter().map(of).collect::<Result<Vec<_>, _>>()?))
        } else {
            None
        };
        let rows = (0..k)
            .map(|i| {
                let mut row = vec![(i + 1).to_string(), fmt(real[i])];
                if let Some(s) = &synth {
                    row.push(fmt(s[i]));
                }
                row
            })
            .collect();
        let header: &[&str] = if have_synth { &["lag", "real", "synthetic"] } else { &["lag", "real"] };
        emit(name, header, rows)?;
    }

    // (iii) lower-tail exceedances with empirical and fitted survival
    let mut pooled = Vec::new();
    for s in &inputs.synth {
        pooled.extend_from_slice(s.values());
    }
    let mut tail_rows = Vec::new();
    let mut sides = vec![("real", inputs.real.clone())];
    if have_synth {
        sides.push(("synthetic", ReturnSeries::synthetic(pooled.clone(), None).expect("finite")));
    }
    for (label, r) in &sides {
        let fit = fit_gpd_pot(r, DEFAULT_TAIL_QUANTILE, Tail::Lower)?;
        let mut ex: Vec<f64> = r.values().iter().map(|v| -v).filter(|&v| v > fit.threshold).map(|v| v - fit.threshold).collect();
        ex.sort_by(|a, b| b.total_cmp(a));
        let n = ex.len() as f64;
        for (i, y) in ex.iter().enumerate() {
            let emp = (i as f64 + 1.0) / n;
            let model = if fit.xi.abs() < 1e-12 {
                (-y / fit.beta).exp()
            } else {
                (1.0 + fit.xi * y / fit.beta).max(0.0).powf(-1.0 / fit.xi)
            };
            tail_rows.push(vec![label.to_string(), (i + 1).to_string(), fmt(y + fit.threshold), fmt(emp), fmt(model)]);
        }
    }
    emit(
        "tail_exceedances.csv",
        &["series", "rank", "loss", "empirical_survival", "gpd_survival"],
        tail_rows,
    )?;

    // (iv) leverage by lag
    let lev_real = leverage_by_lag(inputs.real.values(), k);
    let lev_synth: Vec<Vec<Option<f64>>> = inputs.synth.iter().map(|s| leverage_by_lag(s.values(), k)).collect();
    let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
    let rows = (0..k)
        .map(|i| {
            let mut row = vec![(i + 1).to_string(), opt(lev_real[i])];
            if have_synth {
                row.push(opt(mean_opt(lev_synth.iter().map(|v| v[i]))));
            }
            row
        })
        .collect();
    let header: &[&str] = if have_synth { &["lag", "real", "synthetic"] } else { &["lag", "real"] };
    emit("leverage_by_lag.csv", header, rows)?;

    // (v) coarse-to-fine volatility correlation matrices
    let real_facts = StylizedFacts::measure(&inputs.real, "real")?;
    let mut mats = vec![("real", real_facts.cfvc.corr.clone())];
    if have_synth {
        let ms = inputs
            .synth
            .iter()
            .map(|s| StylizedFacts::measure(s, "synthetic").map(|f| f.cfvc.corr.concat()))
            .collect::<Result<Vec<_>, _>>()?;
        let flat = mean_vectors(&ms);
        mats.push(("synthetic", flat.chunks(CFVC_WINDOWS.len()).map(<[f64]>::to_vec).collect()));
    }
    let mut rows = Vec::new();
    for (label, m) in &mats {
        for (i, wi) in CFVC_WINDOWS.iter().enumerate() {
            for (j, wj) in CFVC_WINDOWS.iter().enumerate() {
                rows.push(vec![label.to_string(), wi.to_string(), wj.to_string(), fmt(m[i][j])]);
            }
        }
    }
    emit("cfvc_matrix.csv", &["series", "row_window", "col_window", "corr"], rows)?;

    // (vi) gain/loss asymmetry: magnitude histograms of up and down days
    let bins = 30;
    let top = inputs.real.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let width = if top > 0.0 { top / bins as f64 } else { 1.0 };
    let mut rows = Vec::new();
    let mut hists = vec![("real", inputs.real.values().to_vec())];
    if have_synth {
        hists.push(("synthetic", pooled));
    }
    for (label, x) in &hists {
        let mut gains = vec![0usize; bins];
        let mut losses = vec![0usize; bins];
        for &v in x {
            let b = ((v.abs() / width) as usize).min(bins - 1);
            if v > 0.0 {
                gains[b] += 1;
            } else if v < 0.0 {
                losses[b] += 1;
            }
        }
        for b in 0..bins {
            rows.push(vec![
                label.to_string(),
                fmt(b as f64 * width),
                fmt((b + 1) as f64 * width),
                gains[b].to_string(),
                losses[b].to_string(),
            ]);
        }
    }
    emit("gain_loss_histogram.csv", &["series", "bin_lo", "bin_hi", "gains", "losses"], rows)?;
    Ok(files)
}

fn run_report(
    reports: &[PathBuf],
    real: Option<&Path>,
    synth: &[PathBuf],
    out: &Path,
) -> Result<(Vec<String>, Results), CliError> {
    let merged = reports.iter().map(|p| Report::load(p)).collect::<Result<Vec<_>, _>>()?;
    let plots = match real {
        Some(real) => {
            let inputs = PlotInputs {
                real: read_returns(real)?,
                synth: synth.iter().map(|p| read_returns(p)).collect::<Result<_, _>>()?,
            };
            write_plots(&inputs, &out.join("plots"))?
        }
        None if !synth.is_empty() => {
            return Err(CliError::Config("plot data needs --real alongside --synth".into()));
        }
        None => vec![],
    };
    Ok((plots.clone(), Results::Report { merged, plots }))
}

// ---------------------------------------------------------------------------
// reproduction

#[derive(Debug, Clone, PartialEq)]
pub struct Reproduction {
    pub report: PathBuf,
    pub compared: Vec<String>,
}

/// Re-runs the command embedded in `report_path` into `out` and checks that
/// the new report and every listed output are byte-identical to the originals.
pub fn reproduce(report_path: &Path, out: &Path) -> Result<Reproduction, CliError> {
    let original = Report::load(report_path)?;
    let orig_dir = report_path.parent().unwrap_or(Path::new("."));
    let fresh = execute(&original.command, out)?;
    let mut compared = vec![original.command.report_file()];
    compared.extend(fresh.outputs.iter().cloned());
    let mut differing = Vec::new();
    if fresh.outputs != original.outputs {
        differing.push("output list".to_string());
    }
    let report_name = original.command.report_file();
    for rel in &compared {
        let a = if *rel == report_name {
            fs::read(report_path)
        } else {
            fs::read(orig_dir.join(rel))
        };
        let b = fs::read(out.join(rel));
        match (a, b) {
            (Ok(a), Ok(b)) if a == b => {}
            _ => differing.push(rel.clone()),
        }
    }
    if differing.is_empty() {
        Ok(Reproduction {
            report: report_path.to_path_buf(),
            compared,
        })
    } else {
        Err(CliError::Mismatch(differing))
    }
}
