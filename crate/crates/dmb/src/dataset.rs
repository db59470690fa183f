//! Training data: seeded synthetic product distributions or byte corpora.

use std::path::Path;

use dmb_core::{ProbVector, ProductDistribution, StateBatch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::config::{DatasetSpec, RunConfig};
use crate::{DmbError, Result};

/// Stream reserved for dataset generation, apart from the trainer's stream.
const DATA_STREAM: u64 = 0x0da7a;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: StateBatch,
    /// Byte for each state index in char mode, sorted ascending.
    pub vocab: Option<Vec<u8>>,
    /// The generating distribution in synthetic mode.
    pub ground_truth: Option<ProductDistribution>,
}

impl Dataset {
    /// Renders one tuple: bytes in char mode, space-separated indices otherwise.
    pub fn decode(&self, row: &[usize]) -> String {
        decode_row(self.vocab.as_deref(), row)
    }
}

/// Bytes when a vocabulary is given, space-separated indices otherwise.
pub fn decode_row(vocab: Option<&[u8]>, row: &[usize]) -> String {
    match vocab {
        Some(v) => row.iter().map(|&s| v.get(s).map_or('?', |&b| b as char)).collect(),
        None => row.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "),
    }
}

/// Per-dimension marginals drawn from a flat Dirichlet.
pub fn dirichlet_ground_truth(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<ProductDistribution> {
    let gamma = Gamma::new(1.0, 1.0).map_err(|e| DmbError::Dataset(e.to_string()))?;
    let marginals = (0..d)
        .map(|_| {
            let w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
            ProbVector::normalized(w)
        })
        .collect::<dmb_core::Result<Vec<_>>>()?;
    Ok(ProductDistribution::new(marginals)?)
}

pub fn synthetic(n: usize, d: usize, samples: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DATA_STREAM);
    let truth = dirichlet_ground_truth(n, d, &mut rng)?;
    let mut batch = StateBatch::new(d);
    let mut row = vec![0usize; d];
    for _ in 0..samples {
        truth.sample_into(&mut rng, &mut row);
        batch.push(&row)?;
    }
    Ok(Dataset {
        samples: batch,
        vocab: None,
        ground_truth: Some(truth),
    })
}

/// Maps bytes to states by sorted byte value and cuts length-`d` tuples,
/// dropping any trailing remainder.
pub fn char_corpus_from_bytes(bytes: &[u8], n: usize, d: usize) -> Result<Dataset> {
    let mut present = [false; 256];
    for &b in bytes {
        present[b as usize] = true;
    }
    let vocab: Vec<u8> = (0..=255u8).filter(|&b| present[b as usize]).collect();
    if vocab.len() > n {
        return Err(DmbError::VocabularyOverflow { found: vocab.len(), n });
    }
    let mut index = [usize::MAX; 256];
    for (i, &b) in vocab.iter().enumerate() {
        index[b as usize] = i;
    }
    let mut batch = StateBatch::new(d);
    for chunk in bytes.chunks_exact(d) {
        let row: Vec<usize> = chunk.iter().map(|&b| index[b as usize]).collect();
        batch.push(&row)?;
    }
    if batch.is_empty() {
        return Err(DmbError::Dataset(format!("corpus shorter than one tuple of length {d}")));
    }
    Ok(Dataset {
        samples: batch,
        vocab: Some(vocab),
        ground_truth: None,
    })
}

pub fn char_corpus(path: &Path, n: usize, d: usize) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|source| DmbError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    char_corpus_from_bytes(&bytes, n, d)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSpec::Synthetic { samples } => synthetic(cfg.n, cfg.d, *samples, cfg.seed),
        DatasetSpec::CharCorpus { path } => char_corpus(path, cfg.n, cfg.d),
    }
}
