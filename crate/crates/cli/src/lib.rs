//! Subcommand implementations behind the `candere` binary.

pub mod serve;

use candere::agents::training::run_dataset;
use candere::environments::Env;
use candere::harness::{evaluate_policy, Checkpoint, ExperimentConfig};
use std::fs;
use std::io::BufWriter;
use std::path::Path;

pub type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Resolves a configuration from an optional file plus `key=value`
/// overrides.
pub fn load_config(file: Option<&Path>, overrides: &[String]) -> CliResult<ExperimentConfig> {
    let text = file.map(fs::read_to_string).transpose()?;
    Ok(ExperimentConfig::resolve(text.as_deref(), overrides)?)
}

/// Loads a policy checkpoint and evaluates it greedily.
pub fn eval_checkpoint(path: &Path, episodes: usize, seed: u64) -> CliResult<(f64, f64)> {
    let ck = Checkpoint::from_json(&fs::read_to_string(path)?)?;
    let learner = ck.learner()?;
    let mut env = Env::new(ck.domain);
    Ok(evaluate_policy(&learner, &mut env, episodes, seed))
}

/// Writes the pretraining set a run with `seed` would use as JSONL.
/// Returns the number of tuples written.
pub fn write_pretrain_set(config: &ExperimentConfig, seed: u64, out: &Path) -> CliResult<usize> {
    let data = run_dataset(config, seed)?;
    data.write_jsonl(BufWriter::new(fs::File::create(out)?))?;
    Ok(data.len())
}
