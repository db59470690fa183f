//! End-to-end training, sampling and evaluation on files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dmb_core::evaluation::{elbo_estimate, ElboReport};
use dmb_core::sampler::{generate, SamplerConfig};
use dmb_core::trainer::Trainer;
use dmb_core::StateBatch;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{decode_row, load_dataset};
use crate::metrics::{self, EpochRecord};
use crate::{DmbError, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Per-epoch snapshot name, kept next to the rolling `checkpoint.bin`.
pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("checkpoint-{epoch:04}.bin")
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub checkpoint: Checkpoint,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| DmbError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

/// Runs the alternating loop, writing metrics and checkpoints after every
/// epoch. With `resume`, training continues from that checkpoint and the
/// metrics file is rewritten from its history first.
pub fn train(config: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    create_dir(&config.output_dir)?;
    let dataset = load_dataset(config)?;
    let (mut trainer, mut records) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            (ckpt.restore(config, &dataset)?, ckpt.history)
        }
        None => (
            Trainer::new(config.trainer_config()?, dataset.samples.clone(), dataset.ground_truth.clone())?,
            Vec::new(),
        ),
    };
    let metrics_path = config.output_dir.join(METRICS_FILE);
    metrics::write(&metrics_path, &records)?;
    let vocab = dataset.vocab.as_deref();
    let mut checkpoint = Checkpoint::capture(&trainer, config, vocab, &records);
    while !trainer.finished() {
        let start = Instant::now();
        let epoch = trainer.epoch + 1;
        let m = trainer.run_epoch().map_err(|source| DmbError::Epoch { epoch, source })?;
        let wall_seconds = if config.wall_clock { start.elapsed().as_secs_f64() } else { 0.0 };
        records.push(EpochRecord { metrics: m, wall_seconds });
        metrics::write(&metrics_path, &records)?;
        checkpoint = Checkpoint::capture(&trainer, config, vocab, &records);
        checkpoint.save(&config.output_dir.join(CHECKPOINT_FILE))?;
        checkpoint.save(&config.output_dir.join(epoch_checkpoint_name(epoch)))?;
    }
    Ok(TrainOutcome { records, checkpoint })
}

/// Draws `count` samples from a checkpoint's model.
pub fn sample(ckpt: &Checkpoint, count: usize, steps: usize, seed: u64) -> Result<StateBatch> {
    let config = ckpt.config()?;
    let cfg = SamplerConfig { num_steps: steps, eps_t: config.eps_t };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(generate(
        &cfg,
        &ckpt.terminal()?,
        &ckpt.rates()?,
        &config.schedule()?,
        &ckpt.model()?,
        &mut rng,
        count,
    )?)
}

/// One decoded sample per line.
pub fn render_samples(ckpt: &Checkpoint, samples: &StateBatch) -> String {
    let mut out = String::new();
    for row in samples.rows() {
        out.push_str(&decode_row(ckpt.vocab.as_deref(), row));
        out.push('\n');
    }
    out
}

/// ELBO of the checkpoint's model on its training data.
pub fn evaluate(ckpt: &Checkpoint, mc_samples: usize, seed: u64) -> Result<ElboReport> {
    let config = ckpt.config()?;
    let dataset = load_dataset(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(elbo_estimate(
        &ckpt.model()?,
        &dataset.samples,
        &ckpt.rates()?,
        &config.schedule()?,
        &ckpt.terminal()?,
        mc_samples,
        config.eps_t,
        &mut rng,
    )?)
}

pub fn write_text(path: &PathBuf, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| DmbError::Write {
        path: path.clone(),
        source,
    })
}
