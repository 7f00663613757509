//! Command-line front end.
//!
//! Every subcommand works on one run directory (`--out`). Stages read the
//! artifacts of earlier stages from it and record what they wrote in its
//! `manifest.json`.
//!
//! ```text
//! <run>/models/<market>/<day>.json   train
//! <run>/maps/<market>/<day>.json     train
//! <run>/forecasts.csv                forecast
//! <run>/thresholds.csv               calibrate
//! <run>/report.json, bids.csv, ...   backtest
//! ```

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backtest::{
    hex, read_day_forecasts, write_day_forecasts, Backtest, DayForecast, DayModel, ExperimentConfig, ThresholdSource,
};
use crate::calibration::{search_thresholds, ThresholdTable};
use crate::data::{ingest_csv, write_csv};
use crate::error::{Error, Result};
use crate::forecaster::MlpModel;
use crate::gsom::GsomMap;
use crate::market::PriceBook;
use crate::report::{compare_strategies, read_report, write_comparison, write_report_dir};

pub const DATA_DIR_ENV: &str = "RESERVEBID_DATA_DIR";
pub const MANIFEST: &str = "manifest.json";
pub const FORECASTS_CSV: &str = "forecasts.csv";
pub const THRESHOLDS_CSV: &str = "thresholds.csv";

#[derive(Debug, Parser)]
#[command(name = "reservebid", version, about = "Reserve-market bidding backtester")]
pub struct Cli {
    /// Print failures as one JSON object on stderr.
    #[arg(long, global = true)]
    pub error_json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate price CSVs and store them in the data directory.
    Ingest(IngestArgs),
    /// Train one network and one GSOM per market and forecast day.
    Train(RunArgs),
    /// Monte-Carlo forecasts with both uncertainty measures.
    Forecast(RunArgs),
    /// Calibrate per-market uncertainty thresholds.
    Calibrate(RunArgs),
    /// Plan, clear and report every evaluated day.
    Backtest(RunArgs),
    /// Compare the reports of two or more backtest runs.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// `MARKET=PATH` pairs, e.g. `FCR-N=fcrn.csv`.
    #[arg(required = true, value_parser = parse_pair)]
    pub files: Vec<(String, PathBuf)>,

    /// Data directory; defaults to $RESERVEBID_DATA_DIR or ./data.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the experiment and strategy seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub strategy: Option<u8>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub scheme: Option<u8>,
    #[arg(long)]
    pub no_uncertainty: bool,
    #[arg(long)]
    pub perfect_foresight: bool,
    /// Comma-separated market ids to keep from the configuration.
    #[arg(long, value_delimiter = ',')]
    pub markets: Option<Vec<String>>,
    /// Data directory; defaults to $RESERVEBID_DATA_DIR or ./data.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run directories holding a backtest report.
    #[arg(required = true, num_args = 2..)]
    pub runs: Vec<PathBuf>,
    /// Output directory for the comparison tables.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_pair(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((m, p)) if !m.is_empty() && !p.is_empty() => Ok((m.to_string(), PathBuf::from(p))),
        _ => Err(format!("expected MARKET=PATH, got {s}")),
    }
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_path: Option<String>,
    /// SHA-256 of the config file bytes, if a file was given.
    pub config_file_sha256: Option<String>,
    /// SHA-256 of the effective configuration after overrides.
    pub config_sha256: String,
    pub seed: u64,
    pub strategy_seed: u64,
    /// Artifacts written by each stage, relative to the run directory.
    pub stages: BTreeMap<String, Vec<String>>,
}

impl RunManifest {
    pub fn load(run: &Path) -> Result<Option<Self>> {
        let path = run.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_reader(BufReader::new(File::open(path)?))?))
    }

    fn save(&self, run: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(run.join(MANIFEST))?);
        f.write_all(serde_json::to_string_pretty(self)?.as_bytes())?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }
}

pub fn data_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn market_file(dir: &Path, market: &str) -> PathBuf {
    dir.join(format!("{market}.csv"))
}

/// Effective configuration of a run: file, then command-line overrides.
pub fn load_config(args: &RunArgs) -> Result<(ExperimentConfig, Option<String>)> {
    let (mut cfg, file_hash) = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let cfg: ExperimentConfig =
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            (cfg, Some(hex(&Sha256::digest(text.as_bytes()))))
        }
        None => (ExperimentConfig::default(), None),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.strategy.seed = seed;
    }
    if args.scheme.is_some() && args.strategy != Some(3) {
        return Err(Error::arg("--scheme needs --strategy 3"));
    }
    if let Some(s) = args.strategy {
        cfg.strategies = vec![s];
    }
    if let Some(k) = args.scheme {
        cfg.schemes = vec![k];
    }
    cfg.no_uncertainty |= args.no_uncertainty;
    cfg.perfect_foresight |= args.perfect_foresight;
    if let Some(ids) = &args.markets {
        let set = cfg.market_set()?.restrict(ids)?;
        cfg.markets = set.markets().to_vec();
    }
    cfg.validate()?;
    Ok((cfg, file_hash))
}

/// Loads every configured market's series from the data directory.
pub fn load_prices(cfg: &ExperimentConfig, dir: &Path) -> Result<PriceBook> {
    let mut book = PriceBook::new();
    for m in &cfg.markets {
        let path = market_file(dir, &m.id);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                artifact: path.display().to_string(),
                stage: "ingest".into(),
            });
        }
        book.insert(ingest_csv(&path, &m.id)?.series);
    }
    Ok(book)
}

fn require(path: PathBuf, stage: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            artifact: path.display().to_string(),
            stage: stage.into(),
        })
    }
}

fn rel(run: &Path, path: &Path) -> String {
    path.strip_prefix(run).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

struct Run {
    args_config: Option<PathBuf>,
    cfg: ExperimentConfig,
    file_hash: Option<String>,
    dir: PathBuf,
    prices: PriceBook,
}

impl Run {
    fn open(args: &RunArgs) -> Result<Self> {
        let (cfg, file_hash) = load_config(args)?;
        let prices = load_prices(&cfg, &data_dir(args.data_dir.as_deref()))?;
        fs::create_dir_all(&args.out)?;
        Ok(Run {
            args_config: args.config.clone(),
            cfg,
            file_hash,
            dir: args.out.clone(),
            prices,
        })
    }

    fn backtest(&self) -> Result<Backtest<'_>> {
        Backtest::new(self.cfg.clone(), &self.prices)
    }

    /// Days the train and forecast stages cover.
    fn forecast_days(&self, bt: &Backtest) -> Vec<NaiveDate> {
        let mut days = if self.cfg.no_uncertainty { Vec::new() } else { bt.calibration_days() };
        days.extend(bt.eval_days());
        days
    }

    fn record(&self, stage: &str, files: &[PathBuf]) -> Result<()> {
        let mut m = RunManifest::load(&self.dir)?.unwrap_or_default();
        m.tool = "reservebid".into();
        m.version = env!("CARGO_PKG_VERSION").into();
        m.config_path = self.args_config.as_ref().map(|p| p.display().to_string());
        m.config_file_sha256 = self.file_hash.clone();
        m.config_sha256 = self.cfg.hash();
        m.seed = self.cfg.seed;
        m.strategy_seed = self.cfg.strategy.seed;
        let mut names: Vec<String> = files.iter().map(|f| rel(&self.dir, f)).collect();
        names.sort();
        m.stages.insert(stage.into(), names);
        m.save(&self.dir)
    }

    fn model_paths(&self, market: &str, day: NaiveDate) -> (PathBuf, PathBuf) {
        (
            self.dir.join("models").join(market).join(format!("{day}.json")),
            self.dir.join("maps").join(market).join(format!("{day}.json")),
        )
    }

    fn reject_perfect_foresight(&self) -> Result<()> {
        if self.cfg.perfect_foresight {
            return Err(Error::arg("perfect-foresight runs use actual prices and need no models"));
        }
        Ok(())
    }
}

/// Ingests `MARKET=PATH` files; every file is checked before the first error is returned.
pub fn ingest(args: &IngestArgs, out: &mut dyn Write) -> Result<()> {
    let dir = data_dir(args.data_dir.as_deref());
    fs::create_dir_all(&dir)?;
    let mut failures = Vec::new();
    for (market, path) in &args.files {
        match ingest_csv(path, market) {
            Ok(report) => {
                write_csv(&report.series, market_file(&dir, market))?;
                writeln!(out, "{market}: {} records from {}", report.series.len(), path.display())?;
                for g in &report.gaps {
                    writeln!(out, "{market}: gap at {}", crate::data::format_timestamp(*g))?;
                }
            }
            Err(e) => {
                writeln!(out, "{market}: {} failed: {e}", path.display())?;
                failures.push(e);
            }
        }
    }
    match failures.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn train(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let run = Run::open(args)?;
    run.reject_perfect_foresight()?;
    let bt = run.backtest()?;
    bt.preflight()?;
    let mut files = Vec::new();
    for day in run.forecast_days(&bt) {
        for market in bt.markets().ids() {
            let model = bt.train_day(&market, day)?;
            let (mp, gp) = run.model_paths(&market, day);
            fs::create_dir_all(mp.parent().expect("has parent"))?;
            model.mlp.save(&mp)?;
            files.push(mp);
            if let Some(map) = &model.gsom {
                fs::create_dir_all(gp.parent().expect("has parent"))?;
                map.save(&gp)?;
                files.push(gp);
            }
        }
    }
    writeln!(out, "trained {} artifacts in {}", files.len(), run.dir.display())?;
    run.record("train", &files)
}

pub fn forecast(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let run = Run::open(args)?;
    run.reject_perfect_foresight()?;
    let bt = run.backtest()?;
    let mut days = Vec::new();
    for day in run.forecast_days(&bt) {
        let mut markets = Vec::new();
        for market in bt.markets().ids() {
            let (mp, gp) = run.model_paths(&market, day);
            let mlp = MlpModel::load(require(mp, "train")?)?;
            let gsom = if run.cfg.use_gsom {
                Some(GsomMap::load(require(gp, "train")?)?)
            } else {
                None
            };
            markets.push(bt.forecast_with(&DayModel { mlp, gsom }, &market, day)?);
        }
        days.push(DayForecast { day, markets });
    }
    let path = run.dir.join(FORECASTS_CSV);
    write_day_forecasts(BufWriter::new(File::create(&path)?), &days)?;
    writeln!(out, "wrote {} forecast days to {}", days.len(), path.display())?;
    run.record("forecast", &[path])
}

fn read_forecasts(run: &Run) -> Result<Vec<DayForecast>> {
    let path = require(run.dir.join(FORECASTS_CSV), "forecast")?;
    read_day_forecasts(BufReader::new(File::open(path)?))
}

pub fn calibrate(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let run = Run::open(args)?;
    run.reject_perfect_foresight()?;
    let bt = run.backtest()?;
    let all = read_forecasts(&run)?;
    let wanted = bt.calibration_days();
    let chosen: Vec<DayForecast> = if wanted.is_empty() {
        all
    } else {
        let picked: Vec<DayForecast> = all.into_iter().filter(|d| wanted.contains(&d.day)).collect();
        if picked.len() != wanted.len() {
            return Err(Error::MissingArtifact {
                artifact: format!("forecasts for the {} calibration days", wanted.len()),
                stage: "forecast".into(),
            });
        }
        picked
    };
    let table = search_thresholds(&bt.eval_set(&chosen)?)?;
    let path = run.dir.join(THRESHOLDS_CSV);
    table.write_csv(BufWriter::new(File::create(&path)?))?;
    for m in &table.markets {
        writeln!(out, "{}: threshold {}", m.market, m.u_th)?;
    }
    writeln!(out, "UA {}", table.ua.map(|u| u.to_string()).unwrap_or_default())?;
    run.record("calibrate", &[path])
}

pub fn backtest(args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let run = Run::open(args)?;
    let bt = run.backtest()?;
    bt.preflight()?;
    let forecasts: Vec<DayForecast> = if run.cfg.perfect_foresight {
        bt.eval_days().into_iter().map(|d| bt.actual_day(d)).collect::<Result<_>>()?
    } else {
        let eval = bt.eval_days();
        let all = read_forecasts(&run)?;
        let picked: Vec<DayForecast> = all.into_iter().filter(|d| eval.contains(&d.day)).collect();
        if picked.len() != eval.len() {
            return Err(Error::MissingArtifact {
                artifact: format!("forecasts for the {} evaluated days", eval.len()),
                stage: "forecast".into(),
            });
        }
        picked
    };
    let thresholds = match (&run.cfg.thresholds, run.cfg.no_uncertainty || run.cfg.perfect_foresight) {
        (ThresholdSource::Calibrate { .. }, false) => {
            let path = require(run.dir.join(THRESHOLDS_CSV), "calibrate")?;
            ThresholdTable::read_csv(BufReader::new(File::open(path)?))?
        }
        _ => bt.thresholds(&[])?,
    };
    let report = bt.run_with(&forecasts, thresholds)?;
    let files = write_report_dir(&run.dir, &report)?;
    for s in &report.strategies {
        writeln!(
            out,
            "{}: revenue {:.2}, selection accuracy {}",
            s.label,
            s.total_revenue,
            s.selection.accuracy().map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into())
        )?;
    }
    run.record("backtest", &files)
}

pub fn compare(args: &CompareArgs, out: &mut dyn Write) -> Result<()> {
    let reports = args
        .runs
        .iter()
        .map(|d| Ok((d.display().to_string(), read_report(d)?)))
        .collect::<Result<Vec<_>>>()?;
    let cmp = compare_strategies(&reports)?;
    let files = write_comparison(&args.out, &cmp)?;
    for r in &cmp.revenue {
        writeln!(
            out,
            "{}: with uncertainty {}, without {}",
            r.strategy,
            r.with_uncertainty.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
            r.without_uncertainty.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into())
        )?;
    }
    let mut m = RunManifest {
        tool: "reservebid".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        ..Default::default()
    };
    m.stages.insert(
        "compare".into(),
        files.iter().map(|f| rel(&args.out, f)).collect(),
    );
    m.stages
        .insert("inputs".into(), args.runs.iter().map(|r| r.display().to_string()).collect());
    m.save(&args.out)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(a, out),
        Command::Train(a) => train(a, out),
        Command::Forecast(a) => forecast(a, out),
        Command::Calibrate(a) => calibrate(a, out),
        Command::Backtest(a) => backtest(a, out),
        Command::Compare(a) => compare(a, out),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            if cli.error_json {
                let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
                eprintln!("{body}");
            } else {
                eprintln!("error: {e}");
            }
            1
        }
    }
}
