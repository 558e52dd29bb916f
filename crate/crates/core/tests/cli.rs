use std::path::{Path, PathBuf};
use std::process::Command;

use data2ld::cli::io::read_numeric_csv;
use data2ld::cli::{FitReport, RunConfig, EXIT_CONFIG, EXIT_DATA};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_data2ld"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_bytes(dir: &Path, skip: &[&str]) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| !skip.contains(&e.file_name().to_str().unwrap()))
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_writes_requested_rows_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[simulation]\nn_obs = 21\nsigma = 0.1\nreplicates = 1\nseed = 11\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&a)]).0, 0);
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&b)]).0, 0);
    assert_eq!(dir_bytes(&a, &[]), dir_bytes(&b, &[]));
    let (h, rows) = read_numeric_csv(&a.join("replicate_0000.csv")).unwrap();
    assert_eq!(h, ["t", "y"]);
    assert_eq!(rows.len(), 21);

    let c = tmp.path().join("c");
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&c), "--seed", "12"]).0, 0);
    assert_ne!(
        std::fs::read(a.join("replicate_0000.csv")).unwrap(),
        std::fs::read(c.join("replicate_0000.csv")).unwrap()
    );
}

#[test]
fn zero_noise_gives_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[simulation]\nsigma = 0.0\nreplicates = 1\n");
    let out = tmp.path().join("o");
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&out)]).0, 0);
    let (_, truth) = read_numeric_csv(&out.join("truth.csv")).unwrap();
    let (_, y) = read_numeric_csv(&out.join("replicate_0000.csv")).unwrap();
    assert_eq!(truth, y);
}

#[test]
fn replicates_share_truth_with_distinct_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[simulation]\nreplicates = 3\n");
    let out = tmp.path().join("o");
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&out)]).0, 0);
    let files = dir_bytes(&out, &[]);
    assert_eq!(files.len(), 4);
    let (_, truth) = read_numeric_csv(&out.join("truth.csv")).unwrap();
    let noise: Vec<Vec<f64>> = (0..3)
        .map(|r| {
            let (_, y) = read_numeric_csv(&out.join(format!("replicate_{r:04}.csv"))).unwrap();
            y.iter().zip(&truth).map(|(a, b)| a[1] - b[1]).collect()
        })
        .collect();
    assert_ne!(noise[0], noise[1]);
    assert_ne!(noise[1], noise[2]);
    assert_ne!(noise[0], noise[2]);
}

#[test]
fn fit_recovers_truth_from_noise_free_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[simulation]\nsigma = 0.0\nreplicates = 1\n");
    let sim = tmp.path().join("sim");
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&sim)]).0, 0);
    let fit = tmp.path().join("fit");
    let data = sim.join("replicate_0000.csv");
    let (code, stdout, _) = run(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&fit)]);
    assert_eq!(code, 0);
    assert!(stdout.contains("beta0"));
    let report = FitReport::load(&fit.join("report.toml")).unwrap();
    for (a, b) in report.theta().iter().zip([-0.05, -0.15, 0.39]) {
        assert!((a - b).abs() < 1e-3, "{:?}", report.theta());
    }
    let (h, curve) = read_numeric_csv(&fit.join("curve.csv")).unwrap();
    assert_eq!(h, ["t", "x_hat", "ci_lo", "ci_hi", "pi_lo", "pi_hi"]);
    assert_eq!(curve.len(), 101);
    let (h, ladder) = read_numeric_csv(&fit.join("ladder.csv")).unwrap();
    assert_eq!(h.len(), 7);
    assert_eq!(ladder.len(), report.ladder.len());
}

#[test]
fn fit_output_is_deterministic_and_report_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[simulation]\nreplicates = 1\n");
    let sim = tmp.path().join("sim");
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&sim)]).0, 0);
    let data = sim.join("replicate_0000.csv");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&a)]).0, 0);
    assert_eq!(run(&["fit", "--config", s(&cfg), "--data", s(&data), "--out", s(&b)]).0, 0);
    assert_eq!(dir_bytes(&a, &[]), dir_bytes(&b, &[]));

    let text = std::fs::read_to_string(a.join("report.toml")).unwrap();
    let report = FitReport::from_toml(&text).unwrap();
    assert_eq!(report.to_toml().unwrap(), text);
    // Cross-check the report against the CSV files, bit for bit.
    let (_, curve) = read_numeric_csv(&a.join("curve.csv")).unwrap();
    for (c, row) in report.curve.iter().zip(&curve) {
        let vals = [c.t, c.x_hat, c.ci_lo, c.ci_hi, c.pi_lo, c.pi_hi];
        for (x, y) in vals.iter().zip(row) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    let (_, ladder) = read_numeric_csv(&a.join("ladder.csv")).unwrap();
    for (r, row) in report.ladder.iter().zip(&ladder) {
        assert_eq!(r.rho.to_bits(), row[0].to_bits());
        for (x, y) in r.theta.iter().zip(&row[1..4]) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn bad_data_gives_data_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cases = [
        ("empty.csv", "", "line 1"),
        ("malformed.csv", "t,y\n0,1\n0.6,x\n", "line 3"),
        ("unsorted.csv", "t,y\n0,1\n2,1\n1,1\n", "line 4"),
        ("outside.csv", "t,y\n0,1\n75,1\n", "line 3"),
    ];
    for (name, body, needle) in cases {
        let p = tmp.path().join(name);
        std::fs::write(&p, body).unwrap();
        let (code, _, err) = run(&["fit", "--data", s(&p), "--out", s(&out)]);
        assert_eq!(code, EXIT_DATA, "{name}: {err}");
        assert!(err.contains(needle), "{name}: {err}");
    }
    let missing = tmp.path().join("missing.csv");
    assert_eq!(run(&["fit", "--data", s(&missing), "--out", s(&out)]).0, EXIT_DATA);
}

#[test]
fn bad_config_gives_config_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[ladder]\neps0 = 0.1\n");
    let out = tmp.path().join("o");
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&out)]).0, EXIT_CONFIG);
    assert_eq!(run(&["fit", "--out", s(&out)]).0, EXIT_CONFIG);
    assert_eq!(run(&["nonsense"]).0, EXIT_CONFIG);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn benchmark_single_replicate_marks_low_confidence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[simulation]\nreplicates = 1\n[benchmark]\nestimators = [\"data2ld\", \"nls\"]\n",
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (code, stdout, _) = run(&["benchmark", "--config", s(&cfg), "--out", s(&a), "--threads", "1"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("Coverage"));
    let text = std::fs::read_to_string(a.join("metrics.txt")).unwrap();
    assert!(text.contains('*'), "{text}");
    let metrics = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines().map(|l| l.split(',').collect::<Vec<_>>());
    let header = lines.next().unwrap();
    let col = header.iter().position(|h| *h == "low_confidence").unwrap();
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[col] == "true"));
    assert_eq!(run(&["benchmark", "--config", s(&cfg), "--out", s(&b), "--threads", "2"]).0, 0);
    // Timings aside, outputs do not depend on the thread count.
    assert_eq!(
        dir_bytes(&a, &["timing.csv", "metrics.txt"]),
        dir_bytes(&b, &["timing.csv", "metrics.txt"])
    );
}

#[test]
fn surface_dump_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[surface]\npoints = 11\nrho = [0.9]\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&["surface", "--config", s(&cfg), "--out", s(&a)]).0, 0);
    assert_eq!(run(&["surface", "--config", s(&cfg), "--out", s(&b)]).0, 0);
    assert_eq!(dir_bytes(&a, &[]), dir_bytes(&b, &[]));
    let (h, rows) = read_numeric_csv(&a.join("surface_rho_0.9.csv")).unwrap();
    assert_eq!(h, ["beta0", "beta1", "h"]);
    assert_eq!(rows.len(), 121);
}

#[test]
fn committed_configs_parse_and_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["simulation.toml", "head_impact.toml"] {
        let cfg = RunConfig::load(&dir.join(name)).unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again, "{name}");
    }
    assert_eq!(RunConfig::load(&dir.join("simulation.toml")).unwrap(), RunConfig::default());
    let head = RunConfig::load(&dir.join("head_impact.toml")).unwrap();
    assert_eq!(head.model.domain, (0.0, 56.0));
}
