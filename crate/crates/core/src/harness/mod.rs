//! Batch evaluation over seeded episodes.
//!
//! Episode `e` is sampled with seed `seed ^ e`. Episodes run on the rayon pool
//! and results are gathered by index, so reports do not depend on scheduling.

mod config;
mod synthetic;

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;

pub use config::{Mode, Precision, RunConfig};
pub use synthetic::generate_synthetic;

use crate::episode::{sample_episode, Episode};
use crate::error::{Error, Result};
use crate::finetune::{evaluate_after_finetune, finetune_episode};
use crate::metric::{npc_classify_from_matrix, npc_classify_items};
use crate::rerank::{calibrate_items, CalibrationConfig};
use crate::scalar::Scalar;
use crate::store::{l2_normalize_rows, load_embeddings, EmbeddingSet, Format};

pub const REPORT_SCHEMA: &str = "# rdc-report v1";

/// What one episode produced.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub knn_clamped: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub mode: Mode,
    pub accuracies: Vec<f64>,
    pub initial_losses: Option<Vec<f64>>,
    pub final_losses: Option<Vec<f64>>,
    pub mean: f64,
    pub ci95: f64,
    pub config: RunConfig,
    pub wall_time: Duration,
    /// Episodes in which k had to be clamped to n−1.
    pub clamped_episodes: usize,
}

/// Mean and 95% half-width `1.96·σ/√N`, with σ the population standard deviation.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Run one episode in the given mode. `set` is the full gallery.
pub fn evaluate_episode<T: Scalar>(
    set: &EmbeddingSet<T>,
    episode: &Episode,
    mode: Mode,
    cfg: &CalibrationConfig,
) -> Result<EpisodeOutcome> {
    let features = set.vectors().view();
    let mut outcome = EpisodeOutcome {
        accuracy: 0.0,
        predictions: Vec::new(),
        initial_loss: None,
        final_loss: None,
        knn_clamped: false,
    };
    outcome.predictions = match mode {
        Mode::Npc => npc_classify_items(episode.gather(features)?.view(), episode)?,
        Mode::NpcL2 => {
            let mut items = episode.gather(features)?;
            l2_normalize_rows(&mut items)?;
            npc_classify_items(items.view(), episode)?
        }
        Mode::Rdc | Mode::RdcNoSubspace => {
            let items = episode.gather(features)?;
            let cal = calibrate_items(items.view(), episode, cfg)?;
            outcome.knn_clamped = cal.knn_clamped();
            npc_classify_from_matrix(&cal.output, episode)?
        }
        Mode::Rdcft | Mode::RdcftNoSubspace => {
            let ft = finetune_episode(features, episode, cfg)?;
            outcome.initial_loss = Some(ft.initial_loss().as_f64());
            outcome.final_loss = Some(ft.final_loss().as_f64());
            outcome.knn_clamped = cfg.k >= episode.num_items();
            evaluate_after_finetune(features, episode, &ft.adapter)?
        }
    };
    outcome.accuracy = accuracy(&outcome.predictions, &episode.query_true_labels);
    Ok(outcome)
}

/// Evaluate `config.episodes` episodes drawn from `set`.
pub fn run_on_set<T: Scalar>(set: &EmbeddingSet<T>, config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let cal = config.effective_calibration();
    let outcomes: Vec<Result<EpisodeOutcome>> = (0..config.episodes)
        .into_par_iter()
        .map(|e| {
            let seed = config.seed ^ e as u64;
            sample_episode(set, config.ways, config.shots, config.queries, seed)
                .and_then(|ep| evaluate_episode(set, &ep, config.mode, &cal))
                .map_err(|source| Error::Episode {
                    index: e,
                    source: Box::new(source),
                })
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let accuracies: Vec<f64> = outcomes.iter().map(|o| o.accuracy).collect();
    let (mean, ci95) = mean_ci95(&accuracies);
    let (initial_losses, final_losses) = if config.mode.is_finetune() {
        (
            Some(
                outcomes
                    .iter()
                    .map(|o| o.initial_loss.unwrap_or(f64::NAN))
                    .collect(),
            ),
            Some(
                outcomes
                    .iter()
                    .map(|o| o.final_loss.unwrap_or(f64::NAN))
                    .collect(),
            ),
        )
    } else {
        (None, None)
    };
    Ok(RunReport {
        mode: config.mode,
        accuracies,
        initial_losses,
        final_losses,
        mean,
        ci95,
        config: config.clone(),
        wall_time: start.elapsed(),
        clamped_episodes: outcomes.iter().filter(|o| o.knn_clamped).count(),
    })
}

/// Load `config.input` and evaluate it at the configured precision.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    let input = config
        .input
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("no input file given".into()))?;
    let format = Format::from_path(input);
    match config.precision {
        Precision::F64 => run_on_set(&load_embeddings::<f64>(input, format)?, config),
        Precision::F32 => run_on_set(&load_embeddings::<f32>(input, format)?, config),
    }
}

impl RunReport {
    /// Per-episode CSV. Contains no timing data, so identical configs give
    /// identical bytes.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{REPORT_SCHEMA}")?;
        writeln!(out, "# {}", self.config.echo())?;
        match (&self.initial_losses, &self.final_losses) {
            (Some(init), Some(fin)) => {
                writeln!(out, "episode_index,accuracy,initial_loss,final_loss")?;
                for (e, acc) in self.accuracies.iter().enumerate() {
                    writeln!(out, "{e},{acc},{},{}", init[e], fin[e])?;
                }
            }
            _ => {
                writeln!(out, "episode_index,accuracy")?;
                for (e, acc) in self.accuracies.iter().enumerate() {
                    writeln!(out, "{e},{acc}")?;
                }
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        std::fs::write(path, buf).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Human-readable summary.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "{:<20} {:>9} {:>10} {:>8}",
            "mode", "episodes", "accuracy", "ci95"
        );
        let _ = writeln!(
            s,
            "{:<20} {:>9} {:>9.2}% {:>7.2}%",
            self.mode.name(),
            self.accuracies.len(),
            100.0 * self.mean,
            100.0 * self.ci95
        );
        let _ = writeln!(
            s,
            "task: {}-way {}-shot, {} queries/class",
            c.ways, c.shots, c.queries
        );
        if let (Some(init), Some(fin)) = (&self.initial_losses, &self.final_losses) {
            let n = init.len().max(1) as f64;
            let decreased = init.iter().zip(fin).filter(|(a, b)| b < a).count();
            let _ = writeln!(
                s,
                "loss: mean initial {:.6}, mean final {:.6}, decreased in {}/{} episodes",
                init.iter().sum::<f64>() / n,
                fin.iter().sum::<f64>() / n,
                decreased,
                init.len()
            );
        }
        if self.clamped_episodes > 0 {
            let _ = writeln!(
                s,
                "warning: k exceeded n-1 and was clamped in {} episodes",
                self.clamped_episodes
            );
        }
        let _ = writeln!(s, "wall time: {:.2?}", self.wall_time);
        s
    }
}
