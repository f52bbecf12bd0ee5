//! Executes one experiment and writes its artifacts under
//! `<output_dir>/<run-id>/`:
//!
//! - `config.txt`: canonical config
//! - `metrics.csv`: training records
//! - `checkpoint.bin` and its index
//! - `result.csv`: one results row

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dsn_core::checkpoint;
use dsn_core::data::generate;
use dsn_core::model::DsnModel;
use dsn_core::trainer::{records_csv, train, TrainRecord};
use dsn_core::{Error, Real, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Precision};

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const RESULT_FILE: &str = "result.csv";

pub const RESULT_HEADER: &str = "scenario,label,seed,steps,src_acc,tgt_acc,angle_err";

/// Final metrics of one completed run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub scenario: String,
    pub label: String,
    pub seed: u64,
    pub steps: u64,
    pub source_accuracy: f64,
    pub target_accuracy: f64,
    pub angle_error: Option<f64>,
}

impl RunResult {
    pub fn to_csv(&self) -> String {
        let angle = self.angle_error.map(|a| a.to_string()).unwrap_or_default();
        format!(
            "{RESULT_HEADER}\n{},{},{},{},{},{},{angle}\n",
            self.scenario, self.label, self.seed, self.steps, self.source_accuracy, self.target_accuracy
        )
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("malformed {RESULT_FILE}"));
        let mut lines = text.lines();
        if lines.next() != Some(RESULT_HEADER) {
            return Err(bad());
        }
        let fields: Vec<&str> = lines.next().ok_or_else(bad)?.split(',').collect();
        let [scenario, label, seed, steps, src, tgt, angle] = fields[..] else {
            return Err(bad());
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(RunResult {
            scenario: scenario.into(),
            label: label.into(),
            seed: seed.parse().map_err(|_| bad())?,
            steps: steps.parse().map_err(|_| bad())?,
            source_accuracy: num(src)?,
            target_accuracy: num(tgt)?,
            angle_error: if angle.is_empty() { None } else { Some(num(angle)?) },
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(dir.join(RESULT_FILE))?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub dir: PathBuf,
    pub result: RunResult,
    /// The run directory already held a completed run of this config.
    pub skipped: bool,
}

fn completed(cfg: &ExperimentConfig, dir: &Path) -> Option<RunResult> {
    let stored = fs::read_to_string(dir.join(CONFIG_FILE)).ok()?;
    if stored != cfg.canonical() || !dir.join(CHECKPOINT_FILE).exists() {
        return None;
    }
    RunResult::load(dir).ok()
}

/// Runs `cfg`, or returns the stored result when its run directory already
/// holds a completed run of the same config.
pub fn run(cfg: &ExperimentConfig, quiet: bool) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    let run_id = cfg.run_id();
    if let Some(result) = completed(cfg, &dir) {
        return Ok(RunSummary { run_id, dir, result, skipped: true });
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.canonical())?;
    let _ = fs::remove_file(dir.join(RESULT_FILE));
    let result = match cfg.precision {
        Precision::F64 => train_as::<f64>(cfg, &dir, quiet)?,
        Precision::F32 => train_as::<f32>(cfg, &dir, quiet)?,
    };
    fs::write(dir.join(RESULT_FILE), result.to_csv())?;
    Ok(RunSummary { run_id, dir, result, skipped: false })
}

/// Freshly initialized model for `cfg`; the seed fixes the initialization.
pub fn build_model<T: Real>(cfg: &ExperimentConfig) -> Result<DsnModel<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let mut model = DsnModel::<T>::new(cfg.scenario, cfg.variant, cfg.similarity, &mut rng)?;
    model.recon = cfg.recon;
    Ok(model)
}

fn train_as<T: Real>(cfg: &ExperimentConfig, dir: &Path, quiet: bool) -> Result<RunResult> {
    let data = generate(&cfg.scenario_spec())?;
    let model = build_model::<T>(cfg)?;
    let started = Instant::now();
    let mut records: Vec<TrainRecord> = Vec::new();
    let outcome = train(model, &data, &cfg.train, |r| {
        if !quiet {
            if let Some(tgt) = r.tgt_acc {
                eprintln!(
                    "[{}] step {:>6}  task {:.4}  target acc {:.4}  {:.1}s",
                    cfg.label(),
                    r.step + 1,
                    r.l_task,
                    tgt,
                    started.elapsed().as_secs_f64()
                );
            }
        }
        records.push(r.clone());
    });
    fs::write(dir.join(METRICS_FILE), records_csv(&records))?;
    let outcome = outcome?;
    checkpoint::save(&dir.join(CHECKPOINT_FILE), &outcome.model.params)?;
    Ok(RunResult {
        scenario: cfg.scenario.to_string(),
        label: cfg.label(),
        seed: cfg.seed(),
        steps: cfg.train.steps,
        source_accuracy: outcome.source_eval.accuracy,
        target_accuracy: outcome.target_eval.accuracy,
        angle_error: outcome.target_eval.angle_error,
    })
}

/// Loads the checkpoint at `path` into a model built for `cfg`.
pub fn load_model<T: Real>(cfg: &ExperimentConfig, path: &Path) -> Result<DsnModel<T>> {
    let mut model = build_model::<T>(cfg)?;
    model.set_params(checkpoint::load(path)?)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_row_round_trips() {
        let r = RunResult {
            scenario: "pose_glyph".into(),
            label: "dsn+dann [beta0]".into(),
            seed: 2,
            steps: 100,
            source_accuracy: 0.5,
            target_accuracy: 0.25,
            angle_error: Some(12.5),
        };
        assert_eq!(RunResult::from_csv(&r.to_csv()).unwrap(), r);
        let plain = RunResult { angle_error: None, ..r };
        assert_eq!(RunResult::from_csv(&plain.to_csv()).unwrap(), plain);
    }
}
