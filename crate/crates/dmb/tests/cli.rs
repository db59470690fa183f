use std::path::Path;

use dmb::cli::{main_with, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("dmb").chain(args.iter().copied());
    let code = main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn solve_prints_log_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.txt", "0.25 0.75\n");
    let q = write(dir.path(), "q.txt", "0.5, 0.5\n");
    let (code, out, _) = run(&["solve", &p, &q]);
    assert_eq!(code, EXIT_OK);
    let a: f64 = out.lines().find_map(|l| l.strip_prefix("a = ")).unwrap().trim().parse().unwrap();
    assert!((a - std::f64::consts::LN_2).abs() < 1e-12);
    let res: f64 = out.lines().find_map(|l| l.strip_prefix("residual = ")).unwrap().parse().unwrap();
    assert!(res <= 1e-9);
}

#[test]
fn solve_rejects_bad_numbers_at_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "p.txt", "0.25 zebra\n");
    let (code, _, err) = run(&["solve", &p, &p]);
    assert_eq!(code, EXIT_RUNTIME);
    assert!(err.contains("zebra"));
}

#[test]
fn selftest_passes() {
    let (code, out, _) = run(&["selftest"]);
    assert_eq!(code, EXIT_OK, "{out}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["train", "/no/such/config"]).0, EXIT_USAGE);
    assert_eq!(run(&["transmogrify"]).0, EXIT_USAGE);
    assert_eq!(run(&[]).0, EXIT_USAGE);
    assert_eq!(run(&["--help"]).0, EXIT_OK);
}

#[test]
fn invalid_config_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.cfg", "n = 1\n");
    assert_eq!(run(&["train", &cfg]).0, EXIT_RUNTIME);
}

#[test]
fn train_sample_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("corpus.txt"), "abcabcabba cab cab ".repeat(20)).unwrap();
    let cfg = write(
        dir.path(),
        "run.cfg",
        "n = 4\nd = 3\ndataset = char_corpus\ncorpus_path = corpus.txt\nmax_step_matrix = 5\nmax_step_score = 10\n\
         score_batch = 8\nhidden = 8\nsampler_steps = 8\nmu_trajectories = 16\nelbo_mc_samples = 16\nmax_epochs = 1\n\
         output_dir = out\n",
    );
    let (code, _, err) = run(&["train", &cfg]);
    assert_eq!(code, EXIT_OK, "{err}");
    let ckpt = dir.path().join("out/checkpoint.bin").display().to_string();
    let dump = dir.path().join("samples.txt");
    let (code, _, err) = run(&["sample", &ckpt, "--count", "5", "--steps", "4", "--out", dump.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let text = std::fs::read_to_string(&dump).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().all(|l| l.len() == 3 && l.bytes().all(|b| b"abc ".contains(&b))));
    let (code, out, err) = run(&["eval", &ckpt, "--mc-samples", "32"]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("bits_per_dim = "));
}
