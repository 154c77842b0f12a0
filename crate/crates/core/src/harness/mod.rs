//! Experiment orchestration: configuration, frozen-policy evaluation,
//! run directories, plot data and the live teaching session.

pub mod checkpoint;
pub mod config;
pub mod session;

use crate::agents::training::{train, TrainError};
use crate::agents::{ActMode, FeedbackLearner};
use crate::environments::Env;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError, ModelKind};
pub use config::{ConfigError, ExperimentConfig, FieldError, PretrainLoss};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed {seed}: {source}")]
    Run { seed: u64, source: TrainError },
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::File {
        path: path.to_path_buf(),
        source,
    }
}

/// One evaluation point of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    /// Mean correct-label fraction of the batches trained on since the
    /// previous evaluation point.
    pub pure_ratio: Option<f64>,
    pub budget_used: u64,
    pub wall_ms: u64,
}

/// Mean and population standard deviation of the return of `episodes`
/// greedy episodes. Episode `i` starts from a reset seeded by the `i`-th
/// draw of a stream keyed on `seed`.
pub fn evaluate_policy<L: FeedbackLearner + ?Sized>(
    learner: &L,
    env: &mut Env,
    episodes: usize,
    seed: u64,
) -> (f64, f64) {
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    // Greedy action selection never draws from this.
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let returns: Vec<f64> = (0..episodes.max(1))
        .map(|_| {
            let mut obs = env.reset(seeds.gen()).observation;
            let mut total = 0.0;
            loop {
                let action = learner.act(&obs, ActMode::Eval, &mut unused);
                let step = env.step(action).expect("episode is live");
                total += step.reward;
                if step.done() {
                    break total;
                }
                obs = step.observation;
            }
        })
        .collect();
    mean_std(&returns)
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Plot label of a configuration: the algorithm plus any disabled
/// filter components.
pub fn series_name(config: &ExperimentConfig) -> String {
    let mut name = config.algorithm.name().to_string();
    if config.algorithm.uses_classifier() {
        if !config.active_relabel {
            name.push_str("_no_ar");
        }
        if !config.online_training {
            name.push_str("_no_ot");
        }
    }
    name
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub v: u32,
    pub series: String,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
    pub per_seed: Vec<String>,
    pub aggregate: String,
}

pub fn seed_file_name(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PLOT_FILE: &str = "plot.csv";

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["step", "eval_return_mean", "eval_return_std", "pure_ratio", "budget_used", "wall_ms"])
        .map_err(|e| csv_error(path, e))?;
    for r in records {
        w.write_record([
            r.step.to_string(),
            r.eval_return_mean.to_string(),
            r.eval_return_std.to_string(),
            r.pure_ratio.map(|p| p.to_string()).unwrap_or_default(),
            r.budget_used.to_string(),
            r.wall_ms.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(file_error(path))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let bad = |what: &str| HarnessError::Format {
            path: path.to_path_buf(),
            message: format!("bad {what} in row {:?}", row),
        };
        out.push(MetricsRecord {
            step: field(0).parse().map_err(|_| bad("step"))?,
            eval_return_mean: field(1).parse().map_err(|_| bad("eval_return_mean"))?,
            eval_return_std: field(2).parse().map_err(|_| bad("eval_return_std"))?,
            pure_ratio: match field(3) {
                "" => None,
                p => Some(p.parse().map_err(|_| bad("pure_ratio"))?),
            },
            budget_used: field(4).parse().map_err(|_| bad("budget_used"))?,
            wall_ms: field(5).parse().map_err(|_| bad("wall_ms"))?,
        });
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Per-step mean and spread of the evaluation return across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatePoint {
    pub step: u64,
    pub mean: f64,
    pub std: f64,
    pub pure_ratio: Option<f64>,
    /// Seeds that reached this step.
    pub runs: usize,
}

pub fn aggregate(runs: &[Vec<MetricsRecord>]) -> Vec<AggregatePoint> {
    let mut by_step: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for run in runs {
        for m in run {
            let entry = by_step.entry(m.step).or_default();
            entry.0.push(m.eval_return_mean);
            if let Some(p) = m.pure_ratio {
                entry.1.push(p);
            }
        }
    }
    by_step
        .into_iter()
        .map(|(step, (returns, pures))| {
            let (mean, std) = mean_std(&returns);
            AggregatePoint {
                step,
                mean,
                std,
                pure_ratio: (!pures.is_empty()).then(|| mean_std(&pures).0),
                runs: returns.len(),
            }
        })
        .collect()
}

fn write_aggregate(path: &Path, points: &[AggregatePoint]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["step", "mean", "std", "pure_ratio", "runs"])
        .map_err(|e| csv_error(path, e))?;
    for p in points {
        w.write_record([
            p.step.to_string(),
            p.mean.to_string(),
            p.std.to_string(),
            p.pure_ratio.map(|v| v.to_string()).unwrap_or_default(),
            p.runs.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(file_error(path))
}

fn read_aggregate(path: &Path) -> Result<Vec<(u64, f64, f64)>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.records()
        .map(|row| {
            let row = row.map_err(|e| csv_error(path, e))?;
            let parse = |i: usize| -> Result<f64, HarnessError> {
                row.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| HarnessError::Format {
                        path: path.to_path_buf(),
                        message: format!("bad column {i} in {row:?}"),
                    })
            };
            Ok((parse(0)? as u64, parse(1)?, parse(2)?))
        })
        .collect()
}

/// Everything [`run_experiment`] produced.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub manifest: Manifest,
    pub runs: Vec<(u64, Vec<MetricsRecord>)>,
    pub aggregate: Vec<AggregatePoint>,
}

fn run_seeds(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Vec<Result<(u64, Vec<MetricsRecord>), HarnessError>> {
    let one = |&seed: &u64| -> Result<(u64, Vec<MetricsRecord>), HarnessError> {
        let out = train(config, seed).map_err(|source| HarnessError::Run { seed, source })?;
        let policy = Checkpoint::of_learner(config.domain, &out.learner);
        let path = out_dir.join(format!("policy_seed_{seed}.json"));
        fs::write(&path, policy.to_json()).map_err(file_error(&path))?;
        if let Some(c) = &out.classifier {
            let path = out_dir.join(format!("classifier_seed_{seed}.json"));
            fs::write(&path, Checkpoint::of_classifier(config.domain, c).to_json()).map_err(file_error(&path))?;
        }
        let path = out_dir.join(seed_file_name(seed));
        write_metrics_csv(&path, &out.metrics)?;
        Ok((seed, out.metrics))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        config.seeds.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        config.seeds.iter().map(one).collect()
    }
}

/// Trains every configured seed and writes per-seed metrics, checkpoints,
/// the aggregate and a manifest into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentResult, HarnessError> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(file_error(out_dir))?;
    let runs = run_seeds(config, out_dir).into_iter().collect::<Result<Vec<_>, _>>()?;
    let points = aggregate(&runs.iter().map(|(_, m)| m.clone()).collect::<Vec<_>>());
    let agg_path = out_dir.join(AGGREGATE_FILE);
    write_aggregate(&agg_path, &points)?;
    let manifest = Manifest {
        v: MANIFEST_VERSION,
        series: series_name(config),
        seeds: config.seeds.clone(),
        config: config.clone(),
        per_seed: config.seeds.iter().map(|&s| seed_file_name(s)).collect(),
        aggregate: AGGREGATE_FILE.to_string(),
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(file_error(&path))?;
    Ok(ExperimentResult {
        manifest,
        runs,
        aggregate: points,
    })
}

pub fn read_manifest(run_dir: &Path) -> Result<Manifest, HarnessError> {
    let path = run_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(file_error(&path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Format {
        path,
        message: e.to_string(),
    })
}

/// Merges the aggregates of finished run directories into one long-format
/// `step,series,mean,std` file. Returns the number of data rows.
pub fn emit_metrics(run_dirs: &[PathBuf], out: &Path) -> Result<usize, HarnessError> {
    let mut w = csv::Writer::from_path(out).map_err(|e| csv_error(out, e))?;
    w.write_record(["step", "series", "mean", "std"])
        .map_err(|e| csv_error(out, e))?;
    let mut rows = 0;
    for dir in run_dirs {
        let manifest = read_manifest(dir)?;
        for (step, mean, std) in read_aggregate(&dir.join(&manifest.aggregate))? {
            w.write_record([step.to_string(), manifest.series.clone(), mean.to_string(), std.to_string()])
                .map_err(|e| csv_error(out, e))?;
            rows += 1;
        }
    }
    w.flush().map_err(file_error(out))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Algorithm;
    use crate::environments::Domain;

    #[test]
    fn mean_std_population() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn series_names_mark_ablations() {
        let mut c = ExperimentConfig::for_domain(Domain::CartPole);
        assert_eq!(series_name(&c), "candere_coach");
        c.active_relabel = false;
        assert_eq!(series_name(&c), "candere_coach_no_ar");
        c.online_training = false;
        assert_eq!(series_name(&c), "candere_coach_no_ar_no_ot");
        c.algorithm = Algorithm::DeepCoach;
        assert_eq!(series_name(&c), "deep_coach");
    }

    #[test]
    fn aggregate_averages_per_step() {
        let rec = |step, r, p| MetricsRecord {
            step,
            eval_return_mean: r,
            eval_return_std: 0.0,
            pure_ratio: p,
            budget_used: 0,
            wall_ms: 0,
        };
        let pts = aggregate(&[
            vec![rec(10, 1.0, Some(0.5)), rec(20, 4.0, None)],
            vec![rec(10, 3.0, Some(1.0))],
        ]);
        assert_eq!(pts.len(), 2);
        assert_eq!((pts[0].mean, pts[0].std, pts[0].pure_ratio, pts[0].runs), (2.0, 1.0, Some(0.75), 2));
        assert_eq!((pts[1].mean, pts[1].pure_ratio, pts[1].runs), (4.0, None, 1));
    }
}
