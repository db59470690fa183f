//! Binary snapshots of a training run.
//!
//! Layout: the 8-byte magic `DMBCKPT\0`, one version byte, then tagged
//! sections `[tag: 4 bytes][len: u64 LE][payload]` in a fixed order. All
//! integers are little-endian and every `f64` is stored by its bit pattern,
//! so save, load and save again produce the same bytes.

use std::path::Path;

use dmb_core::evaluation::ElboReport;
use dmb_core::matrix_learning::MatrixLearnState;
use dmb_core::score::{Adam, AdamConfig, ScoreModel};
use dmb_core::trainer::{EpochMetrics, Trainer};
use dmb_core::{FactorizedRateMatrix, ProbVector, ProductDistribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::metrics::EpochRecord;
use crate::{DmbError, Result};

pub const MAGIC: &[u8; 8] = b"DMBCKPT\0";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_echo: String,
    pub epoch: u64,
    pub converged: bool,
    pub perms: Vec<Vec<usize>>,
    pub params: Vec<Vec<f64>>,
    pub matrix_step_size: f64,
    pub matrix_loss_history: Vec<f64>,
    pub p0: Vec<Vec<f64>>,
    pub terminal: Vec<Vec<f64>>,
    pub dims: u64,
    pub states: u64,
    pub horizon: f64,
    pub hidden: Vec<usize>,
    pub score_params: Vec<f64>,
    pub adam: AdamConfig,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_steps: u64,
    pub rng: RngState,
    pub history: Vec<EpochRecord>,
    pub vocab: Option<Vec<u8>>,
}

impl Checkpoint {
    pub fn capture(trainer: &Trainer, config: &RunConfig, vocab: Option<&[u8]>, history: &[EpochRecord]) -> Self {
        let m = &trainer.matrix;
        Self {
            config_echo: config.canonical(),
            epoch: trainer.epoch as u64,
            converged: trainer.converged,
            perms: m.rates.iter().map(|q| q.perm().to_vec()).collect(),
            params: m.rates.iter().map(|q| q.params().to_vec()).collect(),
            matrix_step_size: m.step_size,
            matrix_loss_history: m.loss_history.clone(),
            p0: m.p0_estimate.marginals().iter().map(|p| p.as_slice().to_vec()).collect(),
            terminal: trainer.terminal.marginals().iter().map(|p| p.as_slice().to_vec()).collect(),
            dims: trainer.model.dims() as u64,
            states: trainer.model.states() as u64,
            horizon: trainer.model.horizon(),
            hidden: trainer.model.hidden_widths().to_vec(),
            score_params: trainer.model.params().to_vec(),
            adam: trainer.optimizer.config,
            adam_m: trainer.optimizer.m.clone(),
            adam_v: trainer.optimizer.v.clone(),
            adam_steps: trainer.optimizer.steps,
            rng: RngState::capture(&trainer.rng),
            history: history.to_vec(),
            vocab: vocab.map(<[u8]>::to_vec),
        }
    }

    pub fn rates(&self) -> Result<Vec<FactorizedRateMatrix>> {
        self.perms
            .iter()
            .zip(&self.params)
            .map(|(p, a)| Ok(FactorizedRateMatrix::new(p.clone(), a.clone())?))
            .collect()
    }

    fn distribution(rows: &[Vec<f64>]) -> Result<ProductDistribution> {
        let marginals = rows
            .iter()
            .map(|r| ProbVector::new(r.clone()))
            .collect::<dmb_core::Result<Vec<_>>>()?;
        Ok(ProductDistribution::new(marginals)?)
    }

    pub fn terminal(&self) -> Result<ProductDistribution> {
        Self::distribution(&self.terminal)
    }

    pub fn model(&self) -> Result<ScoreModel> {
        Ok(ScoreModel::from_parts(
            self.dims as usize,
            self.states as usize,
            &self.hidden,
            self.horizon,
            self.score_params.clone(),
        )?)
    }

    /// Rebuilds the trainer. `config` may differ from the echo only in
    /// `max_epochs`, `output_dir` and `wall_clock`.
    pub fn restore(&self, config: &RunConfig, dataset: &Dataset) -> Result<Trainer> {
        if resume_key(&config.canonical()) != resume_key(&self.config_echo) {
            return Err(DmbError::Checkpoint("config differs from the one the checkpoint was written with".into()));
        }
        let matrix = MatrixLearnState {
            rates: self.rates()?,
            p0_estimate: Self::distribution(&self.p0)?,
            step_size: self.matrix_step_size,
            loss_history: self.matrix_loss_history.clone(),
        };
        let mut optimizer = Adam::new(self.adam, self.score_params.len())?;
        optimizer.m = self.adam_m.clone();
        optimizer.v = self.adam_v.clone();
        optimizer.steps = self.adam_steps;
        Ok(Trainer {
            config: config.trainer_config()?,
            data: dataset.samples.clone(),
            ground_truth: dataset.ground_truth.clone(),
            matrix,
            terminal: self.terminal()?,
            model: self.model()?,
            optimizer,
            rng: self.rng.restore(),
            epoch: self.epoch as usize,
            history: self.history.iter().map(|r| r.metrics).collect(),
            converged: self.converged,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        let mut section = |tag: &[u8; 4], w: Writer| {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(w.0.len() as u64).to_le_bytes());
            out.extend_from_slice(&w.0);
        };

        let mut w = Writer::default();
        w.bytes(self.config_echo.as_bytes());
        w.u64(self.epoch);
        w.u8(self.converged as u8);
        section(b"META", w);

        let mut w = Writer::default();
        w.u64(self.perms.len() as u64);
        for (p, a) in self.perms.iter().zip(&self.params) {
            w.usizes(p);
            w.f64s(a);
        }
        w.f64(self.matrix_step_size);
        w.f64s(&self.matrix_loss_history);
        section(b"RATE", w);

        let mut w = Writer::default();
        w.rows(&self.p0);
        w.rows(&self.terminal);
        section(b"DIST", w);

        let mut w = Writer::default();
        w.u64(self.dims);
        w.u64(self.states);
        w.f64(self.horizon);
        w.usizes(&self.hidden);
        w.f64s(&self.score_params);
        section(b"SCOR", w);

        let mut w = Writer::default();
        let c = self.adam;
        for v in [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay] {
            w.f64(v);
        }
        w.f64s(&self.adam_m);
        w.f64s(&self.adam_v);
        w.u64(self.adam_steps);
        section(b"ADAM", w);

        let mut w = Writer::default();
        w.0.extend_from_slice(&self.rng.seed);
        w.u64(self.rng.stream);
        w.0.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        section(b"RNGS", w);

        let mut w = Writer::default();
        w.u64(self.history.len() as u64);
        for r in &self.history {
            let m = &r.metrics;
            w.u64(m.epoch as u64);
            for v in [m.j_q, m.j_score, m.elbo.j_score, m.elbo.kl_term, m.elbo.mc_std_error] {
                w.f64(v);
            }
            match m.kl_mu_p0 {
                Some(v) => {
                    w.u8(1);
                    w.f64(v);
                }
                None => w.u8(0),
            }
            w.u8(m.converged as u8);
            w.f64(r.wall_seconds);
        }
        section(b"HIST", w);

        let mut w = Writer::default();
        match &self.vocab {
            Some(v) => {
                w.u8(1);
                w.bytes(v);
            }
            None => w.u8(0),
        }
        section(b"VOCB", w);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 || &bytes[..8] != MAGIC {
            return Err(DmbError::Checkpoint("missing magic header".into()));
        }
        if bytes[8] != VERSION {
            return Err(DmbError::CheckpointVersion {
                found: bytes[8],
                expected: VERSION,
            });
        }
        let mut outer = Reader { buf: &bytes[9..] };
        let mut meta = outer.section(b"META")?;
        let config_echo = String::from_utf8(meta.bytes()?.to_vec())
            .map_err(|_| DmbError::Checkpoint("config echo is not UTF-8".into()))?;
        let epoch = meta.u64()?;
        let converged = meta.flag()?;
        meta.finish()?;

        let mut r = outer.section(b"RATE")?;
        let dims = r.u64()? as usize;
        let mut perms = Vec::new();
        let mut params = Vec::new();
        for _ in 0..dims {
            perms.push(r.usizes()?);
            params.push(r.f64s()?);
        }
        let matrix_step_size = r.f64()?;
        let matrix_loss_history = r.f64s()?;
        r.finish()?;

        let mut r = outer.section(b"DIST")?;
        let p0 = r.rows()?;
        let terminal = r.rows()?;
        r.finish()?;

        let mut r = outer.section(b"SCOR")?;
        let model_dims = r.u64()?;
        let states = r.u64()?;
        let horizon = r.f64()?;
        let hidden = r.usizes()?;
        let score_params = r.f64s()?;
        r.finish()?;

        let mut r = outer.section(b"ADAM")?;
        let adam = AdamConfig {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
            weight_decay: r.f64()?,
        };
        let adam_m = r.f64s()?;
        let adam_v = r.f64s()?;
        let adam_steps = r.u64()?;
        r.finish()?;

        let mut r = outer.section(b"RNGS")?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        r.finish()?;

        let mut r = outer.section(b"HIST")?;
        let count = r.u64()? as usize;
        let mut history = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let epoch = r.u64()? as usize;
            let j_q = r.f64()?;
            let j_score = r.f64()?;
            let (ej, ek, es) = (r.f64()?, r.f64()?, r.f64()?);
            let kl_mu_p0 = if r.flag()? { Some(r.f64()?) } else { None };
            let converged = r.flag()?;
            let wall_seconds = r.f64()?;
            history.push(EpochRecord {
                metrics: EpochMetrics {
                    epoch,
                    j_q,
                    j_score,
                    elbo: ElboReport::new(ej, ek, es, model_dims as usize)?,
                    kl_mu_p0,
                    converged,
                },
                wall_seconds,
            });
        }
        r.finish()?;

        let mut r = outer.section(b"VOCB")?;
        let vocab = if r.flag()? { Some(r.bytes()?.to_vec()) } else { None };
        r.finish()?;
        outer.finish()?;

        Ok(Self {
            config_echo,
            epoch,
            converged,
            perms,
            params,
            matrix_step_size,
            matrix_loss_history,
            p0,
            terminal,
            dims: model_dims,
            states,
            horizon,
            hidden,
            score_params,
            adam,
            adam_m,
            adam_v,
            adam_steps,
            rng: RngState { seed, stream, word_pos },
            history,
            vocab,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| DmbError::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| DmbError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// The run configuration echoed inside the checkpoint.
    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config_echo, Path::new("/"))
    }
}

/// Config echo without the keys that may change between resumes.
fn resume_key(echo: &str) -> Vec<&str> {
    const FREE: [&str; 3] = ["max_epochs", "output_dir", "wall_clock"];
    echo.lines()
        .filter(|l| !FREE.iter().any(|k| l.split('=').next().map(str::trim) == Some(*k)))
        .collect()
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }

    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f64(*x));
    }

    fn usizes(&mut self, v: &[usize]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.u64(*x as u64));
    }

    fn rows(&mut self, rows: &[Vec<f64>]) {
        self.u64(rows.len() as u64);
        rows.iter().for_each(|r| self.f64s(r));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

fn truncated() -> DmbError {
    DmbError::Checkpoint("truncated data".into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(truncated());
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(DmbError::Checkpoint(format!("invalid flag byte {other}"))),
        }
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn len(&mut self, width: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.checked_mul(width).is_none_or(|bytes| bytes > self.buf.len()) {
            return Err(truncated());
        }
        Ok(n)
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len(8)?;
        (0..n).map(|_| Ok(self.u64()? as usize)).collect()
    }

    fn rows(&mut self) -> Result<Vec<Vec<f64>>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64s()).collect()
    }

    fn section(&mut self, tag: &[u8; 4]) -> Result<Reader<'a>> {
        let found = self.take(4)?;
        if found != tag {
            return Err(DmbError::Checkpoint(format!(
                "expected section {} but found {}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(found)
            )));
        }
        let n = self.len(1)?;
        Ok(Reader { buf: self.take(n)? })
    }

    fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(DmbError::Checkpoint("trailing bytes".into()))
        }
    }
}
