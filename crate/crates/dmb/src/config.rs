//! `key = value` run configuration.
//!
//! One assignment per line, `#` starts a comment, unknown or repeated keys are
//! rejected. Every key has a default, so an empty file is a valid config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dmb_core::matrix_learning::{InitScheme, MatrixLoopConfig};
use dmb_core::sampler::SamplerConfig;
use dmb_core::score::{AdamConfig, ScoreLoopConfig};
use dmb_core::trainer::{P0Init, TrainerConfig};
use dmb_core::NoiseSchedule;

use crate::{DmbError, Result};

pub const SEED_ENV: &str = "DMB_SEED";

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synthetic { samples: usize },
    CharCorpus { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub d: usize,
    pub horizon: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub init_scheme: InitScheme,
    pub p0_init: P0Init,
    pub max_step_matrix: usize,
    pub matrix_step_size: f64,
    pub matrix_batch: usize,
    pub eps_q: f64,
    pub max_step_score: usize,
    pub eps_score: f64,
    pub score_batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub eps_t: f64,
    pub sampler_steps: usize,
    pub mu_trajectories: usize,
    pub elbo_mc_samples: usize,
    pub eps_total: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub output_dir: PathBuf,
    /// When false the metrics `wall_seconds` column is written as 0.
    pub wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 8,
            d: 4,
            horizon: 1.0,
            sigma_min: 0.1,
            sigma_max: 10.0,
            init_scheme: InitScheme::AbsorbingText,
            p0_init: P0Init::Uniform,
            max_step_matrix: 200,
            matrix_step_size: 0.5,
            matrix_batch: 1024,
            eps_q: 1e-6,
            max_step_score: 2000,
            eps_score: 1e-4,
            score_batch: 64,
            lr: 3e-4,
            weight_decay: 0.0,
            hidden: vec![128, 128],
            eps_t: 1e-3,
            sampler_steps: 128,
            mu_trajectories: 4096,
            elbo_mc_samples: 4096,
            eps_total: 1e-3,
            max_epochs: 5,
            seed: 0,
            dataset: DatasetSpec::Synthetic { samples: 10_000 },
            output_dir: PathBuf::from("runs/default"),
            wall_clock: true,
        }
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| DmbError::Config {
        line,
        message: format!("cannot parse `{value}` for `{key}`"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(DmbError::Config {
            line,
            message: format!("`{key}` expects true or false, got `{value}`"),
        }),
    }
}

impl RunConfig {
    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut dataset_kind = String::from("synthetic");
        let mut samples = 10_000usize;
        let mut corpus: Option<PathBuf> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| DmbError::Config {
                line,
                message: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(DmbError::Config {
                    line,
                    message: format!("`{key}` assigned twice"),
                });
            }
            seen.push(key.to_string());
            match key {
                "n" => cfg.n = parse_value(line, key, value)?,
                "d" => cfg.d = parse_value(line, key, value)?,
                "horizon" => cfg.horizon = parse_value(line, key, value)?,
                "sigma_min" => cfg.sigma_min = parse_value(line, key, value)?,
                "sigma_max" => cfg.sigma_max = parse_value(line, key, value)?,
                "init_scheme" => {
                    cfg.init_scheme = match value {
                        "absorbing_text" => InitScheme::AbsorbingText,
                        "uniform_small" => InitScheme::UniformSmall,
                        _ => {
                            return Err(DmbError::Config {
                                line,
                                message: format!("unknown init_scheme `{value}`"),
                            })
                        }
                    }
                }
                "p0_init" => {
                    cfg.p0_init = match value {
                        "uniform" => P0Init::Uniform,
                        "data_marginal" => P0Init::DataMarginal,
                        _ => {
                            return Err(DmbError::Config {
                                line,
                                message: format!("unknown p0_init `{value}`"),
                            })
                        }
                    }
                }
                "max_step_matrix" => cfg.max_step_matrix = parse_value(line, key, value)?,
                "matrix_step_size" => cfg.matrix_step_size = parse_value(line, key, value)?,
                "matrix_batch" => cfg.matrix_batch = parse_value(line, key, value)?,
                "eps_q" => cfg.eps_q = parse_value(line, key, value)?,
                "max_step_score" => cfg.max_step_score = parse_value(line, key, value)?,
                "eps_score" => cfg.eps_score = parse_value(line, key, value)?,
                "score_batch" => cfg.score_batch = parse_value(line, key, value)?,
                "lr" => cfg.lr = parse_value(line, key, value)?,
                "weight_decay" => cfg.weight_decay = parse_value(line, key, value)?,
                "hidden" => {
                    cfg.hidden = value
                        .split(',')
                        .map(|w| parse_value(line, key, w.trim()))
                        .collect::<Result<Vec<usize>>>()?
                }
                "eps_t" => cfg.eps_t = parse_value(line, key, value)?,
                "sampler_steps" => cfg.sampler_steps = parse_value(line, key, value)?,
                "mu_trajectories" => cfg.mu_trajectories = parse_value(line, key, value)?,
                "elbo_mc_samples" => cfg.elbo_mc_samples = parse_value(line, key, value)?,
                "eps_total" => cfg.eps_total = parse_value(line, key, value)?,
                "max_epochs" => cfg.max_epochs = parse_value(line, key, value)?,
                "seed" => cfg.seed = parse_value(line, key, value)?,
                "dataset" => dataset_kind = value.to_string(),
                "synthetic_samples" => samples = parse_value(line, key, value)?,
                "corpus_path" => corpus = Some(base.join(value)),
                "output_dir" => cfg.output_dir = base.join(value),
                "wall_clock" => cfg.wall_clock = parse_bool(line, key, value)?,
                _ => {
                    return Err(DmbError::Config {
                        line,
                        message: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        if !seen.iter().any(|k| k == "output_dir") {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.dataset = match dataset_kind.as_str() {
            "synthetic" => DatasetSpec::Synthetic { samples },
            "char_corpus" => DatasetSpec::CharCorpus {
                path: corpus.ok_or_else(|| DmbError::InvalidConfig("char_corpus needs corpus_path".into()))?,
            },
            other => return Err(DmbError::InvalidConfig(format!("unknown dataset `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, then applies the `DMB_SEED` override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| DmbError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let abs = std::path::absolute(path).map_err(|source| DmbError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, abs.parent().unwrap_or(Path::new("/")))?;
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.seed = seed
                .trim()
                .parse()
                .map_err(|_| DmbError::InvalidConfig(format!("{SEED_ENV}=`{seed}` is not a 64-bit integer")))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DmbError::InvalidConfig(m.to_string()));
        if self.n < 2 || self.d == 0 {
            return bad("n must be at least 2 and d at least 1");
        }
        if self.max_step_matrix == 0 || self.max_step_score == 0 || self.max_epochs == 0 {
            return bad("step and epoch caps must be positive");
        }
        let tolerances = [self.eps_q, self.eps_score, self.eps_total, self.eps_t, self.matrix_step_size];
        if tolerances.iter().any(|v| !(*v > 0.0)) {
            return bad("tolerances and step sizes must be positive");
        }
        if !(self.eps_t < self.horizon) {
            return bad("eps_t must be smaller than the horizon");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if self.score_batch == 0 || self.sampler_steps == 0 || self.mu_trajectories == 0 || self.elbo_mc_samples < 2 {
            return bad("batch, step and sample counts must be positive (elbo_mc_samples >= 2)");
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be nonnegative");
        }
        match &self.dataset {
            DatasetSpec::Synthetic { samples } if *samples == 0 => bad("synthetic_samples must be positive"),
            DatasetSpec::CharCorpus { path } if !path.is_file() => {
                Err(DmbError::InvalidConfig(format!("corpus {} does not exist", path.display())))
            }
            _ => Ok(()),
        }?;
        NoiseSchedule::linear(self.sigma_min, self.sigma_max, self.horizon)?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::linear(self.sigma_min, self.sigma_max, self.horizon)?)
    }

    pub fn trainer_config(&self) -> Result<TrainerConfig> {
        Ok(TrainerConfig {
            n: self.n,
            d: self.d,
            schedule: self.schedule()?,
            init_scheme: self.init_scheme,
            p0_init: self.p0_init,
            matrix: MatrixLoopConfig {
                max_step: self.max_step_matrix,
                eps_q: self.eps_q,
                ..Default::default()
            },
            matrix_step_size: self.matrix_step_size,
            matrix_batch: self.matrix_batch,
            score: ScoreLoopConfig {
                max_step: self.max_step_score,
                eps_score: self.eps_score,
                batch_size: self.score_batch,
                eps_t: self.eps_t,
                ..Default::default()
            },
            adam: AdamConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..Default::default()
            },
            hidden: self.hidden.clone(),
            sampler: SamplerConfig {
                num_steps: self.sampler_steps,
                eps_t: self.eps_t,
            },
            mu_trajectories: self.mu_trajectories,
            elbo_mc_samples: self.elbo_mc_samples,
            eps_total: self.eps_total,
            max_epochs: self.max_epochs,
            seed: self.seed,
        })
    }

    /// Every key in a fixed order; parsing the echo reproduces `self`.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("n", self.n.to_string());
        put("d", self.d.to_string());
        put("horizon", format!("{:?}", self.horizon));
        put("sigma_min", format!("{:?}", self.sigma_min));
        put("sigma_max", format!("{:?}", self.sigma_max));
        put(
            "init_scheme",
            match self.init_scheme {
                InitScheme::AbsorbingText => "absorbing_text",
                InitScheme::UniformSmall => "uniform_small",
            }
            .into(),
        );
        put(
            "p0_init",
            match self.p0_init {
                P0Init::Uniform => "uniform",
                P0Init::DataMarginal => "data_marginal",
            }
            .into(),
        );
        put("max_step_matrix", self.max_step_matrix.to_string());
        put("matrix_step_size", format!("{:?}", self.matrix_step_size));
        put("matrix_batch", self.matrix_batch.to_string());
        put("eps_q", format!("{:?}", self.eps_q));
        put("max_step_score", self.max_step_score.to_string());
        put("eps_score", format!("{:?}", self.eps_score));
        put("score_batch", self.score_batch.to_string());
        put("lr", format!("{:?}", self.lr));
        put("weight_decay", format!("{:?}", self.weight_decay));
        put(
            "hidden",
            self.hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
        );
        put("eps_t", format!("{:?}", self.eps_t));
        put("sampler_steps", self.sampler_steps.to_string());
        put("mu_trajectories", self.mu_trajectories.to_string());
        put("elbo_mc_samples", self.elbo_mc_samples.to_string());
        put("eps_total", format!("{:?}", self.eps_total));
        put("max_epochs", self.max_epochs.to_string());
        put("seed", self.seed.to_string());
        match &self.dataset {
            DatasetSpec::Synthetic { samples } => {
                put("dataset", "synthetic".into());
                put("synthetic_samples", samples.to_string());
            }
            DatasetSpec::CharCorpus { path } => {
                put("dataset", "char_corpus".into());
                put("corpus_path", path.display().to_string());
            }
        }
        put("output_dir", self.output_dir.display().to_string());
        put("wall_clock", self.wall_clock.to_string());
        s
    }
}
