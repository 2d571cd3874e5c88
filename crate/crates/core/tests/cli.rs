use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgld-bounds"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn train_writes_header_and_one_row_per_step() {
    let out = cli(&["train", "--steps=5", "--data.n=100", "--optimizer.batch=50"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("step,"));
    assert_eq!(lines.count(), 5);
}

#[test]
fn zero_steps_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    let out = cli(&[
        "train",
        "--steps=0",
        &format!("--output={}", path.display()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# small run\nsteps = 3\ndata.n = 50\noptimizer.batch = 25\nseed = 4\n",
    )
    .unwrap();
    let from_file = cli(&["train", "--config", cfg.to_str().unwrap()]);
    let overridden = cli(&["train", "--config", cfg.to_str().unwrap(), "--steps=2"]);
    assert_eq!(stdout(&from_file).lines().count(), 4);
    assert_eq!(stdout(&overridden).lines().count(), 3);
    let first = |o: &Output| stdout(o).lines().nth(1).unwrap().to_string();
    assert_eq!(first(&from_file), first(&overridden));
}

#[test]
fn invalid_configuration_exits_with_usage_code() {
    for args in [
        &["train", "--batch.size=0"][..],
        &["train", "--unknown_key=1"],
        &["train", "--corruption.p=2"],
        &["bound-calc", "nope"],
        &["verify-lemmas", "nope"],
        &["no-such-command"],
    ] {
        let out = cli(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn bound_calc_prints_sweep() {
    let out = cli(&[
        "bound-calc",
        "cld-finite-t",
        "--sweep.from=1",
        "--sweep.to=4",
        "--sweep.points=4",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("t,bound,"));
}

#[test]
fn verification_failures_exit_with_code_three() {
    let pass = cli(&["verify-lemmas", "chain-rule", "--chains=5"]);
    assert_eq!(pass.status.code(), Some(0));
    assert_eq!(stdout(&pass).lines().count(), 6);
    let fail = cli(&["verify-lemmas", "quadrature"]);
    assert_eq!(fail.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&fail.stderr).contains("quadrature"));
}

#[test]
fn twin_chain_reports_summary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("probes.csv");
    let out = cli(&[
        "twin-chain",
        "--twin.seeds=8",
        "--twin.steps=20",
        &format!("--output={}", path.display()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("cld_bound,"));
    assert!(std::fs::read_to_string(&path).unwrap().lines().count() > 1);
}

#[test]
fn quadrature_command_reports_constant() {
    let out = cli(&["quadrature", "--tol=1e-10"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let value: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("value,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!((value - 18.648_728_066).abs() < 1e-8);
    assert!(text.contains("within_mixture_constant,true"));
}
