//! The alternating outer loop: matrix learning, score learning, `p_0` update.
//!
//! [`Trainer`] owns every piece of mutable state, including its random
//! stream, so a caller can persist it between epochs and resume exactly.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bridge::{estimate_marginals, permutation_from_data};
use crate::evaluation::{elbo_estimate, ElboReport};
use crate::matrix_learning::{
    matrix_learning_loop, predict_terminal, InitScheme, MatrixLearnState, MatrixLoopConfig,
};
use crate::sampler::{estimate_mu, SamplerConfig};
use crate::score::{score_learning_loop, Adam, AdamConfig, RatioTarget, ScoreLoopConfig, ScoreModel};
use crate::{Error, NoiseSchedule, ProductDistribution, Result, StateBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum P0Init {
    Uniform,
    DataMarginal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub n: usize,
    pub d: usize,
    pub schedule: NoiseSchedule,
    pub init_scheme: InitScheme,
    pub p0_init: P0Init,
    pub matrix: MatrixLoopConfig,
    pub matrix_step_size: f64,
    /// Rows resampled for each matrix-learning loop; 0 uses the whole dataset.
    pub matrix_batch: usize,
    pub score: ScoreLoopConfig,
    pub adam: AdamConfig,
    pub hidden: Vec<usize>,
    pub sampler: SamplerConfig,
    pub mu_trajectories: usize,
    pub elbo_mc_samples: usize,
    pub eps_total: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.n >= 2
            && self.d >= 1
            && self.max_epochs >= 1
            && self.mu_trajectories >= 1
            && self.elbo_mc_samples >= 2
            && self.eps_total > 0.0
            && self.matrix_step_size > 0.0;
        if !positive {
            return Err(Error::domain("trainer configuration has a nonpositive field"));
        }
        if self.sampler.eps_t <= 0.0 || self.sampler.eps_t >= self.schedule.horizon {
            return Err(Error::domain("sampler eps_t must lie in (0, T)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub j_q: f64,
    pub j_score: f64,
    pub elbo: ElboReport,
    /// `KL(mu || p_0)` when the data distribution is known.
    pub kl_mu_p0: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainerConfig,
    pub data: StateBatch,
    pub ground_truth: Option<ProductDistribution>,
    pub matrix: MatrixLearnState,
    pub terminal: ProductDistribution,
    pub model: ScoreModel,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
    pub converged: bool,
}

impl Trainer {
    pub fn new(config: TrainerConfig, data: StateBatch, ground_truth: Option<ProductDistribution>) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Empty("training data"));
        }
        if data.dims() != config.d {
            return Err(Error::shape("dataset dimension differs from configuration"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mu_hat = estimate_marginals(&data, config.n)?;
        let p0 = match config.p0_init {
            P0Init::Uniform => ProductDistribution::uniform(config.d, config.n)?,
            P0Init::DataMarginal => mu_hat.clone(),
        };
        let mut matrix = MatrixLearnState::new(config.init_scheme, p0, config.matrix_step_size)?;
        let terminal = predict_terminal(&matrix, &config.schedule)?;
        let perms = permutation_from_data(&mu_hat, &terminal)?;
        for (q, perm) in matrix.rates.iter_mut().zip(perms) {
            q.set_perm(perm)?;
        }
        let terminal = predict_terminal(&matrix, &config.schedule)?;
        let model = ScoreModel::new(config.d, config.n, &config.hidden, config.schedule.horizon, &mut rng)?;
        let optimizer = Adam::new(config.adam, model.param_count())?;
        Ok(Self {
            config,
            data,
            ground_truth,
            matrix,
            terminal,
            model,
            optimizer,
            rng,
            epoch: 0,
            history: Vec::new(),
            converged: false,
        })
    }

    /// One matrix, score and estimate cycle.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let cfg = &self.config;
        let batch = if cfg.matrix_batch == 0 || cfg.matrix_batch >= self.data.len() {
            self.data.clone()
        } else {
            self.data.resample(cfg.matrix_batch, &mut self.rng)?
        };
        let matrix_report = matrix_learning_loop(&mut self.matrix, &batch, &cfg.schedule, &mut self.terminal, &cfg.matrix)?;
        let score_report = score_learning_loop(
            &mut self.model,
            &mut self.optimizer,
            &self.data,
            &self.matrix.rates,
            &cfg.schedule,
            RatioTarget::Conditional,
            &cfg.score,
            &mut self.rng,
        )?;
        let p0 = estimate_mu(
            &cfg.sampler,
            &self.terminal,
            &self.matrix.rates,
            &cfg.schedule,
            &self.model,
            &mut self.rng,
            cfg.mu_trajectories,
        )?;
        self.matrix.p0_estimate = p0;
        self.terminal = predict_terminal(&self.matrix, &cfg.schedule)?;
        let elbo = elbo_estimate(
            &self.model,
            &self.data,
            &self.matrix.rates,
            &cfg.schedule,
            &self.terminal,
            cfg.elbo_mc_samples,
            cfg.sampler.eps_t,
            &mut self.rng,
        )?;
        let kl_mu_p0 = match &self.ground_truth {
            Some(mu) => Some(mu.kl_to(&self.matrix.p0_estimate)?),
            None => None,
        };
        self.epoch += 1;
        let j_q = matrix_report.final_loss;
        let j_score = score_report.smoothed_loss;
        self.converged = j_q + j_score < cfg.eps_total;
        let metrics = EpochMetrics {
            epoch: self.epoch,
            j_q,
            j_score,
            elbo,
            kl_mu_p0,
            converged: self.converged,
        };
        self.history.push(metrics);
        Ok(metrics)
    }

    pub fn finished(&self) -> bool {
        self.converged || self.epoch >= self.config.max_epochs
    }

    /// Runs epochs until convergence or the epoch cap.
    pub fn run(&mut self) -> Result<&[EpochMetrics]> {
        while !self.finished() {
            self.run_epoch()?;
        }
        Ok(&self.history)
    }
}
