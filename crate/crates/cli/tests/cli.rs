use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BASE: &str = "\
# small toy-mixture configuration
sigma_pi = 1
sigma_eta = 10
epsilon = 0.2
alpha_tilde = 0.75
n_iters = 4000
burn_in = 100
seed = 31
x0 = uniform:0,10.5
repeats = 3
epsilons = 0.25,0.75
";

fn nlmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlmc")).args(args).output().expect("spawn nlmc")
}

fn invoke(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    nlmc(&args)
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn repeats_replay_from_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let first = dir.path().join("a");
    let o = invoke("repeats", &cfg, &first, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["runs.csv", "aggregate.csv", "resolved_config.txt", "summary.txt"] {
        assert!(first.join(f).exists(), "{f}");
    }
    let second = dir.path().join("b");
    let o = invoke("repeats", &first.join("resolved_config.txt"), &second, &[]);
    assert!(o.status.success());
    assert_eq!(fs::read(first.join("runs.csv")).unwrap(), fs::read(second.join("runs.csv")).unwrap());
    assert_eq!(
        fs::read(first.join("resolved_config.txt")).unwrap(),
        fs::read(second.join("resolved_config.txt")).unwrap()
    );
}

#[test]
fn overrides_apply_and_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out = dir.path().join("o");
    let o = invoke("run", &cfg, &out, &["--set", "epsilon=0.6", "--set", "kind=select"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = fs::read_to_string(out.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("epsilon = 0.6\n"));
    assert!(resolved.contains("kind = select\n"));
    assert!(resolved.contains("y0 = uniform:0,10.5\n"));
    assert_eq!(fs::read_to_string(out.join("runs.csv")).unwrap().lines().count(), 2);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let missing = write_config(dir.path(), &BASE.replace("seed = 31\n", ""));
    let o = invoke("run", &missing, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));

    let cfg = write_config(dir.path(), BASE);
    let o = invoke("run", &cfg, &out, &["--set", "epsilon=1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("(0, 1)"));

    let o = invoke("run", &cfg, &out, &["--set", "colour=blue"]);
    assert_eq!(o.status.code(), Some(2));

    let o = invoke("plot", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numeric_abort_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // a start so far out that the density underflows to zero
    let cfg = write_config(dir.path(), &BASE.replace("x0 = uniform:0,10.5", "x0 = point:1e200"));
    let o = invoke("run", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn table1_grid_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &BASE.replace("repeats = 3", "repeats = 2"));
    let out = dir.path().join("t");
    let o = invoke("table1", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("table1.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "kind,eps=0.25,eps=0.75");
    assert!(lines[1].starts_with("select,") && lines[2].starts_with("exchange,"));
    assert_eq!(fs::read_to_string(out.join("runs.csv")).unwrap().lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn baseline_compare_records_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{BASE}baseline_iters = 3000\ncompare_epsilon = 0.05\n");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("c");
    let o = invoke("baseline_compare", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = fs::read_to_string(out.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("calibration_factor = "));
    let cmp = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(cmp.lines().any(|l| l.starts_with("rwm,3000,")));
    assert!(cmp.lines().any(|l| l.starts_with("nonlinear,")));

    // replaying with the recorded factor reproduces the nonlinear runs exactly
    let again = dir.path().join("c2");
    let o = invoke("baseline_compare", &out.join("resolved_config.txt"), &again, &[]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("runs.csv")).unwrap(), fs::read(again.join("runs.csv")).unwrap());
    assert_eq!(fs::read(out.join("comparison.csv")).unwrap(), fs::read(again.join("comparison.csv")).unwrap());
}

#[test]
fn diagnostics_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{BASE}s_v = 0.1\ns_w = 0.5\nr_star = 0.5\ndrift_samples = 500\nsnv_stride = 1000\n");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("d");
    let o = invoke("diagnostics", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let drift = fs::read_to_string(out.join("drift.csv")).unwrap();
    assert_eq!(drift.lines().count(), 3);
    let snv = fs::read_to_string(out.join("snv.csv")).unwrap();
    assert_eq!(snv.lines().count(), 1 + 5);
    // the estimated supremum is pinned in the resolved configuration
    let resolved = fs::read_to_string(out.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("log_pi_sup = "));

    let without = write_config(dir.path(), BASE);
    let o = invoke("diagnostics", &without, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
}
