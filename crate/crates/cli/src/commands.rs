//! The subcommands, callable as library functions.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use gridmarket_core::auction::{clear, Mechanism, Quotation, Side};
use gridmarket_core::env::{MarketEnv, ProfileLibrary};
use gridmarket_core::par::{self, Execution};
use gridmarket_marl::{evaluate, policies_from_checkpoint, EvalPolicy, IterationReport, Trainer};
use gridmarket_nn::{Checkpoint, NnError};

use crate::report::{render_table, MetricRow, METRIC_NAMES, PUBLISHED_TABLE};
use crate::{CliError, ExperimentConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const CURVE_FILE: &str = "curve.csv";

/// Start days used for training and held out for evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DaySplit {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

pub fn split_days(n_start_days: usize, test_days: usize) -> Result<DaySplit, CliError> {
    if test_days >= n_start_days {
        return Err(CliError::Config {
            path: "profiles.test_days".into(),
            message: format!("{test_days} test days leave no training days out of {n_start_days}"),
        });
    }
    let cut = n_start_days - test_days;
    Ok(DaySplit {
        train: 0..cut,
        test: cut..n_start_days,
    })
}

pub fn build_library(cfg: &ExperimentConfig) -> Result<ProfileLibrary, CliError> {
    let lib = match &cfg.profiles.path {
        Some(p) => ProfileLibrary::read_csv(p)?,
        None => ProfileLibrary::synthetic(cfg.grids.len(), cfg.profiles.days, cfg.seeds.profiles),
    };
    if lib.n_agents() != cfg.grids.len() {
        return Err(CliError::Config {
            path: "profiles.path".into(),
            message: format!("{} profile series for {} grids", lib.n_agents(), cfg.grids.len()),
        });
    }
    Ok(lib)
}

pub fn build_env(cfg: &ExperimentConfig) -> Result<MarketEnv, CliError> {
    Ok(MarketEnv::from_library(
        cfg.episode_config(),
        cfg.grids.clone(),
        &build_library(cfg)?,
    )?)
}

/// A fresh trainer restricted to the training days.
pub fn build_trainer(cfg: &ExperimentConfig, env: MarketEnv) -> Result<(Trainer, DaySplit), CliError> {
    let split = split_days(env.n_start_days(), cfg.profiles.test_days)?;
    let mut trainer = Trainer::new(env, cfg.variant, cfg.train.clone(), cfg.seeds.train)?;
    trainer.set_train_days(split.train.clone())?;
    Ok((trainer, split))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub episodes: usize,
}

fn curve_header(n_agents: usize) -> Vec<String> {
    let mut h = vec!["episode".to_string(), "start_day".into(), "mean_reward".into()];
    h.extend((0..n_agents).map(|i| format!("reward_agent{i}")));
    h.extend(["policy_loss".into(), "value_loss".into(), "entropy".into()]);
    h
}

fn write_curve_rows<W: Write>(w: &mut csv::Writer<W>, report: &IterationReport) -> Result<(), CliError> {
    for e in &report.episodes {
        let mut row = vec![
            e.episode.to_string(),
            e.start_day.to_string(),
            e.mean_reward.to_string(),
        ];
        row.extend(e.agent_rewards.iter().map(|r| r.to_string()));
        row.extend([
            e.policy_loss.to_string(),
            e.value_loss.to_string(),
            e.entropy.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains until `cfg.train.episodes`, writing the learning curve and a
/// final checkpoint under the output directory. With `resume` the run
/// continues from a checkpoint and appends to the existing curve.
pub fn run_train(cfg: &ExperimentConfig, resume: Option<&Path>, exec: Execution) -> Result<TrainOutcome, CliError> {
    let env = build_env(cfg)?;
    let n_agents = env.n_agents();
    let (mut trainer, _) = build_trainer(cfg, env)?;
    trainer.set_execution(exec);
    fs::create_dir_all(&cfg.output_dir)?;
    let curve = cfg.output_dir.join(CURVE_FILE);
    let file = match resume {
        Some(ck) => {
            trainer.restore(&Checkpoint::read(ck)?)?;
            OpenOptions::new().append(true).create(true).open(&curve)?
        }
        None => File::create(&curve)?,
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if resume.is_none() {
        w.write_record(curve_header(n_agents))?;
    }
    let mut failure = None;
    trainer.train(|report| {
        if failure.is_none() {
            failure = write_curve_rows(&mut w, report).err();
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let checkpoint = cfg.output_dir.join(CHECKPOINT_FILE);
    trainer.save(&checkpoint)?;
    Ok(TrainOutcome {
        checkpoint,
        curve,
        episodes: trainer.episodes_done(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mechanism: Mechanism,
    pub daily: Vec<(usize, MetricRow)>,
    pub mean: Option<MetricRow>,
    pub summary_csv: PathBuf,
    pub daily_csv: PathBuf,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let header = vec!["Metric".to_string(), self.mechanism.name().to_uppercase()];
        let rows: Vec<Vec<String>> = METRIC_NAMES
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let v = self.mean.map_or("-".to_string(), |m| format!("{:.2}", m.values[k]));
                vec![name.to_string(), v]
            })
            .collect();
        render_table(&header, &rows)
    }
}

fn eval_days(cfg: &ExperimentConfig, env: &MarketEnv, days: usize) -> Result<Vec<usize>, CliError> {
    let split = split_days(env.n_start_days(), cfg.profiles.test_days)?;
    if days > split.test.len() {
        return Err(CliError::Config {
            path: "days".into(),
            message: format!("{days} evaluation days requested, {} held out", split.test.len()),
        });
    }
    Ok(split.test.take(days).collect())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.exists() {
        return Err(CliError::Input(format!("checkpoint {} not found", path.display())));
    }
    Ok(Checkpoint::read(path)?)
}

/// What acts during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSource<'a> {
    /// Deterministic actions of the policies in a checkpoint.
    Checkpoint(&'a Path),
    /// Never quotes.
    Abstain,
    /// Uniform random raw actions.
    Random,
}

/// Evaluates on the first `days` held-out days under the configured
/// mechanism.
pub fn run_eval(
    cfg: &ExperimentConfig,
    source: EvalSource,
    days: usize,
    exec: Execution,
) -> Result<EvalReport, CliError> {
    let env = build_env(cfg)?;
    let days = eval_days(cfg, &env, days)?;
    let policies = match source {
        EvalSource::Checkpoint(path) => {
            let ck = load_checkpoint(path)?;
            let (_, policies) = policies_from_checkpoint(&ck, env.observation_len())?;
            if policies.len() != env.n_agents() {
                return Err(NnError::Incompatible(vec![format!(
                    "checkpoint holds {} policies, config has {} grids",
                    policies.len(),
                    env.n_agents()
                )])
                .into());
            }
            policies
        }
        _ => Vec::new(),
    };
    let policy = match source {
        EvalSource::Checkpoint(_) => EvalPolicy::Deterministic(&policies),
        EvalSource::Abstain => EvalPolicy::Abstain,
        EvalSource::Random => EvalPolicy::Random(cfg.seeds.eval),
    };
    let scaler = gridmarket_marl::FeatureScaler::new(env.params(), env.config());
    let results = evaluate(&env, &scaler, &policy, &days, cfg.seeds.eval, exec)?;
    let daily: Vec<(usize, MetricRow)> = results
        .iter()
        .map(|d| (d.start_day, MetricRow::from_totals(&d.metrics.community())))
        .collect();
    let rows: Vec<MetricRow> = daily.iter().map(|(_, r)| *r).collect();
    let mean = MetricRow::mean(&rows);

    fs::create_dir_all(&cfg.output_dir)?;
    let mech = cfg.market.mechanism;
    let daily_csv = cfg.output_dir.join(format!("eval_{}_daily.csv", mech.name()));
    let mut w = csv::Writer::from_path(&daily_csv)?;
    w.write_record(std::iter::once("day").chain(METRIC_NAMES))?;
    for (day, r) in &daily {
        w.write_record(std::iter::once(day.to_string()).chain(r.csv_fields()))?;
    }
    w.flush()?;
    let summary_csv = cfg.output_dir.join(format!("eval_{}.csv", mech.name()));
    let mut w = csv::Writer::from_path(&summary_csv)?;
    w.write_record(std::iter::once("mechanism").chain(METRIC_NAMES))?;
    if let Some(m) = &mean {
        w.write_record(std::iter::once(mech.name().to_string()).chain(m.csv_fields()))?;
    }
    w.flush()?;
    Ok(EvalReport {
        mechanism: mech,
        daily,
        mean,
        summary_csv,
        daily_csv,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    /// MRDAC, VDA, Greedy.
    pub reports: Vec<EvalReport>,
    /// Total profit MRDAC >= VDA >= Greedy.
    pub profit_order: bool,
    /// MRDAC emergency purchase at most that of both others.
    pub emergency_lowest: bool,
    pub csv: PathBuf,
}

impl CompareReport {
    pub fn ranking(&self) -> Vec<Mechanism> {
        let mut r: Vec<(Mechanism, f64)> = self
            .reports
            .iter()
            .map(|e| (e.mechanism, e.mean.map_or(f64::NEG_INFINITY, |m| m.total_profit())))
            .collect();
        r.sort_by(|a, b| b.1.total_cmp(&a.1));
        r.into_iter().map(|(m, _)| m).collect()
    }

    pub fn table(&self) -> String {
        let mut header = vec!["Metric".to_string()];
        header.extend(self.reports.iter().map(|r| r.mechanism.name().to_uppercase()));
        header.extend([
            "published MRDAC".into(),
            "published VDA".into(),
            "published Greedy".into(),
        ]);
        let rows: Vec<Vec<String>> = METRIC_NAMES
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let mut row = vec![name.to_string()];
                row.extend(
                    self.reports
                        .iter()
                        .map(|r| r.mean.map_or("-".to_string(), |m| format!("{:.2}", m.values[k]))),
                );
                row.extend(PUBLISHED_TABLE[k].iter().map(|v| format!("{v:.2}")));
                row
            })
            .collect();
        let mut out = render_table(&header, &rows);
        let names: Vec<String> = self.ranking().iter().map(|m| m.name().to_uppercase()).collect();
        out.push_str(&format!("profit ranking: {}\n", names.join(" > ")));
        out.push_str(&format!(
            "MRDAC >= VDA >= Greedy on profit: {}\n",
            if self.profit_order { "holds" } else { "does not hold" }
        ));
        out.push_str(&format!(
            "MRDAC lowest emergency purchase: {}\n",
            if self.emergency_lowest {
                "holds"
            } else {
                "does not hold"
            }
        ));
        out
    }
}

/// Evaluates one checkpoint per mechanism on the same held-out days and
/// writes a side-by-side table with the published values alongside.
pub fn run_compare(
    cfg: &ExperimentConfig,
    checkpoints: [&Path; 3],
    days: usize,
    exec: Execution,
) -> Result<CompareReport, CliError> {
    for p in checkpoints {
        load_checkpoint(p)?;
    }
    let reports: Vec<EvalReport> = par::map_indexed(exec, 3, |k| {
        run_eval(
            &cfg.with_mechanism(Mechanism::ALL[k]),
            EvalSource::Checkpoint(checkpoints[k]),
            days,
            exec,
        )
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let means: Vec<Option<MetricRow>> = reports.iter().map(|r| r.mean).collect();
    let (profit_order, emergency_lowest) = match (means[0], means[1], means[2]) {
        (Some(m), Some(v), Some(g)) => (
            m.total_profit() >= v.total_profit() && v.total_profit() >= g.total_profit(),
            m.emergency() <= v.emergency().min(g.emergency()),
        ),
        _ => (true, true),
    };
    let csv_path = cfg.output_dir.join("compare.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record([
        "metric",
        "mrdac",
        "vda",
        "greedy",
        "published_mrdac",
        "published_vda",
        "published_greedy",
    ])?;
    for (k, name) in METRIC_NAMES.iter().enumerate() {
        let mut row = vec![name.to_string()];
        row.extend(
            means
                .iter()
                .map(|m| m.map_or(String::new(), |m| m.values[k].to_string())),
        );
        row.extend(PUBLISHED_TABLE[k].iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(CompareReport {
        reports,
        profit_order,
        emergency_lowest,
        csv: csv_path,
    })
}

fn parse_book(path: &Path) -> Result<Vec<Quotation>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let expected = ["agent_id", "side", "price", "quantity"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(CliError::Input(format!(
            "{}: expected columns {}",
            path.display(),
            expected.join(",")
        )));
    }
    let mut book = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let bad = |what: &str| CliError::Input(format!("{}:{line}: invalid {what}", path.display()));
        let agent_id = rec[0].trim().parse().map_err(|_| bad("agent_id"))?;
        let side: Side = rec[1].parse().map_err(|_| bad("side"))?;
        let price: f64 = rec[2].trim().parse().map_err(|_| bad("price"))?;
        let quantity: f64 = rec[3].trim().parse().map_err(|_| bad("quantity"))?;
        if !price.is_finite() || !quantity.is_finite() {
            return Err(bad("number"));
        }
        book.push(Quotation {
            agent_id,
            price,
            quantity,
            side,
        });
    }
    Ok(book)
}

/// Clears a CSV order book and renders trades and residuals as CSV.
pub fn run_clear(book: &Path, mechanism: Mechanism, seed: u64) -> Result<String, CliError> {
    let quotations = parse_book(book)?;
    let result = clear(mechanism, &quotations, seed);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seller_id", "buyer_id", "price", "quantity", "round"])?;
    for t in &result.trades {
        w.write_record([
            t.seller_id.to_string(),
            t.buyer_id.to_string(),
            t.price.to_string(),
            t.quantity.to_string(),
            t.round.to_string(),
        ])?;
    }
    let mut out = String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf8 csv");
    out.push('\n');
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["agent_id", "side", "residual"])?;
    for (side, map) in [(Side::Buy, &result.residual_buy), (Side::Sell, &result.residual_sell)] {
        for (id, q) in map {
            w.write_record([id.to_string(), side.to_string(), q.to_string()])?;
        }
    }
    out.push_str(&String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf8 csv"));
    Ok(out)
}

/// Writes a synthetic profile library.
pub fn run_gen_profiles(n_agents: usize, days: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    if days == 0 || n_agents == 0 {
        return Err(CliError::Input("days and agents must be positive".into()));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ProfileLibrary::synthetic(n_agents, days, seed).write_csv(out)?;
    Ok(())
}
