//! Per-epoch metrics rows and their CSV rendering.

use std::path::Path;

use dmb_core::trainer::EpochMetrics;

use crate::{DmbError, Result};

pub const HEADER: &str = "epoch,j_q,j_score,elbo_bits_per_dim,kl_mu_p0,wall_seconds";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub metrics: EpochMetrics,
    pub wall_seconds: f64,
}

impl EpochRecord {
    /// One CSV row; `kl_mu_p0` is empty without a ground truth.
    pub fn csv_row(&self) -> String {
        let m = &self.metrics;
        let kl = m.kl_mu_p0.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            m.epoch, m.j_q, m.j_score, m.elbo.bits_per_dim, kl, self.wall_seconds
        )
    }
}

pub fn render(records: &[EpochRecord]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn write(path: &Path, records: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, render(records)).map_err(|source| DmbError::Write {
        path: path.to_path_buf(),
        source,
    })
}
