use std::path::Path;

use dmb::checkpoint::{Checkpoint, MAGIC, VERSION};
use dmb::config::RunConfig;
use dmb::run::{epoch_checkpoint_name, train, CHECKPOINT_FILE, METRICS_FILE};
use dmb::DmbError;

const TINY: &str = "n = 4
d = 2
synthetic_samples = 200
max_step_matrix = 10
max_step_score = 20
score_batch = 16
hidden = 16
sampler_steps = 16
mu_trajectories = 64
elbo_mc_samples = 64
wall_clock = false
seed = 11
";

fn config(dir: &Path, extra: &str) -> RunConfig {
    let epochs = if extra.contains("max_epochs") { "" } else { "max_epochs = 2\n" };
    let text = format!("{TINY}{epochs}{extra}output_dir = {}\n", dir.display());
    RunConfig::parse(&text, Path::new("/")).unwrap()
}

/// Checkpoint bytes with the config echo blanked, since it names the output directory.
fn state_bytes(c: &Checkpoint) -> Vec<u8> {
    Checkpoint { config_echo: String::new(), ..c.clone() }.to_bytes()
}

#[test]
fn repeated_runs_write_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = train(&config(a.path(), ""), None).unwrap();
    let rb = train(&config(b.path(), ""), None).unwrap();
    assert_eq!(ra.records.len(), 2);
    let ma = std::fs::read(a.path().join(METRICS_FILE)).unwrap();
    assert_eq!(ma, std::fs::read(b.path().join(METRICS_FILE)).unwrap());
    assert_eq!(state_bytes(&ra.checkpoint), state_bytes(&rb.checkpoint));
}

#[test]
fn checkpoint_round_trips_bytes() {
    let dir = tempfile::tempdir().unwrap();
    train(&config(dir.path(), "max_epochs = 1\n"), None).unwrap();
    let bytes = std::fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap();
    let loaded = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(loaded.to_bytes(), bytes);
    assert_eq!(loaded.epoch, 1);
    assert_eq!(&bytes[..8], MAGIC);
}

#[test]
fn version_and_corruption_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&config(dir.path(), "max_epochs = 1\n"), None).unwrap();
    let mut bytes = out.checkpoint.to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::from_bytes(b"NOTACKPT\x01").is_err());
    bytes[8] = VERSION + 1;
    assert!(matches!(
        Checkpoint::from_bytes(&bytes),
        Err(DmbError::CheckpointVersion { expected: VERSION, .. })
    ));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (full, part) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(&config(full.path(), ""), None).unwrap();
    train(&config(part.path(), "max_epochs = 1\n"), None).unwrap();
    let resume = part.path().join(epoch_checkpoint_name(1));
    let resumed = train(&config(part.path(), ""), Some(&resume)).unwrap();
    assert_eq!(resumed.records.len(), 2);
    assert_eq!(
        std::fs::read(full.path().join(METRICS_FILE)).unwrap(),
        std::fs::read(part.path().join(METRICS_FILE)).unwrap()
    );
    let load = |d: &Path| Checkpoint::load(&d.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(state_bytes(&load(full.path())), state_bytes(&load(part.path())));
}

#[test]
fn resume_rejects_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    train(&config(dir.path(), "max_epochs = 1\n"), None).unwrap();
    let resume = dir.path().join(CHECKPOINT_FILE);
    let err = train(&config(dir.path(), "lr = 0.01\n"), Some(&resume)).unwrap_err();
    assert!(matches!(err, DmbError::Checkpoint(_)), "{err}");
}

#[test]
fn epoch_cap_one_records_one_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&config(dir.path(), "max_epochs = 1\n"), None).unwrap();
    assert_eq!(out.records.len(), 1);
    let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(out.records[0].metrics.kl_mu_p0.is_some());
}
