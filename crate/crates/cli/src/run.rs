use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use gpo_core::trainer::{train, write_params, GpoConfig, TrainError, TrainOutcome};

use crate::config::ExperimentConfig;
use crate::output::{write_log, write_summary};

/// Why a run stopped early.
#[derive(Debug)]
pub enum RunFailure {
    /// Training aborted; details were written to `diagnostics`.
    Training { error: TrainError, diagnostics: PathBuf },
    Io(anyhow::Error),
}

impl From<anyhow::Error> for RunFailure {
    fn from(e: anyhow::Error) -> Self {
        RunFailure::Io(e)
    }
}

pub struct RunReport {
    pub dir: PathBuf,
    /// `(algorithm, final learner return per seed)`.
    pub finals: Vec<(String, Vec<f64>)>,
}

fn seed_config(base: &GpoConfig, seed: u64) -> GpoConfig {
    GpoConfig { seed, ..base.clone() }
}

fn diagnostics_text(cfg: &GpoConfig, err: &TrainError) -> String {
    let mut text = format!("algorithm: {}\nseed: {}\nerror: {err}\n", cfg.algorithm, cfg.seed);
    if let TrainError::NonFiniteLoss { iteration, minibatch, diagnostics } = err {
        text.push_str(&format!("iteration: {iteration}\nminibatch: {minibatch}\nloss: {diagnostics:#?}\n"));
    }
    text.push_str(&format!("config: {cfg:#?}\n"));
    text
}

fn write_outcome(dir: &Path, seed: u64, out: &TrainOutcome) -> anyhow::Result<()> {
    let csv_path = dir.join(format!("seed{seed}.csv"));
    let file = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    write_log(BufWriter::new(file), &out.log).with_context(|| format!("writing {}", csv_path.display()))?;
    let params_path = dir.join(format!("seed{seed}.params"));
    let file = fs::File::create(&params_path).with_context(|| format!("creating {}", params_path.display()))?;
    write_params(BufWriter::new(file), &out.net, &out.params).with_context(|| format!("writing {}", params_path.display()))?;
    Ok(())
}

/// Trains every (algorithm, seed) pair and writes the per-seed logs,
/// parameter files and `summary.csv`. With `parallel`, the seeds of one
/// algorithm train on separate threads; outputs are identical either way.
pub fn run_experiment(exp: &ExperimentConfig, parallel: bool) -> Result<RunReport, RunFailure> {
    let root = exp.effective_output_dir().join(&exp.name);
    let mut finals = Vec::with_capacity(exp.runs.len());
    for base in &exp.runs {
        let dir = root.join(base.algorithm.name());
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let configs: Vec<GpoConfig> = exp.seeds.iter().map(|&s| seed_config(base, s)).collect();
        let results: Vec<Result<TrainOutcome, TrainError>> = if parallel {
            std::thread::scope(|scope| {
                let handles: Vec<_> = configs.iter().map(|c| scope.spawn(move || train(c))).collect();
                handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
            })
        } else {
            configs.iter().map(train).collect()
        };
        let mut per_seed = Vec::with_capacity(configs.len());
        for (cfg, result) in configs.iter().zip(results) {
            match result {
                Ok(out) => {
                    write_outcome(&dir, cfg.seed, &out)?;
                    let last = out.log.final_learner_return().unwrap_or(f64::NAN);
                    log::info!("{} seed {}: final learner return {last:.4}", cfg.algorithm, cfg.seed);
                    per_seed.push(last);
                }
                Err(error) => {
                    let diagnostics = dir.join(format!("seed{}.diagnostics.txt", cfg.seed));
                    fs::write(&diagnostics, diagnostics_text(cfg, &error)).with_context(|| format!("writing {}", diagnostics.display()))?;
                    return Err(RunFailure::Training { error, diagnostics });
                }
            }
        }
        finals.push((base.algorithm.name().to_string(), per_seed));
    }
    let summary = root.join("summary.csv");
    let file = fs::File::create(&summary).with_context(|| format!("creating {}", summary.display()))?;
    write_summary(BufWriter::new(file), &finals).with_context(|| format!("writing {}", summary.display()))?;
    Ok(RunReport { dir: root, finals })
}
