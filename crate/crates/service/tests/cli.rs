use std::fs;
use std::path::Path;

use clap::Parser;
use nse_afs::experiments::{read_results, read_runlog, RESULT_COLUMNS};
use nse_afs_service::cli::{execute, Cli, CliError};

const CONFIG: &str = r#"
[domain]
name = "navigation"
map = """
S....
.GG..
.PP..
....*"""

[learning]
k = 2
n_critical = 4

[experiment]
budgets = [2, 6]
trials = 8
seed = 3
methods = ["naive", "oracle", "afs"]
"#;

fn cli(args: &[&str]) -> Result<String, CliError> {
    let parsed = Cli::try_parse_from(std::iter::once("nse-afs").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    execute(parsed.command, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, CONFIG).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_results_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("out");
    let text = cli(&["run", "--config", &config, "--out", out.to_str().unwrap(), "--jobs", "2"]).unwrap();
    assert!(text.contains("afs"));

    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), RESULT_COLUMNS.join(","));
    let rows = read_results(&out.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.domain == "navigation" && r.trials == 8));
    assert!(out.join("timings.csv").exists());
    assert!(!csv.contains("wall"));

    let log = read_runlog(&out.join("runlogs/afs_b6.jsonl")).unwrap();
    assert!(!log.is_empty());
    assert_eq!(log[0].t, 1);
    assert!(fs::read_to_string(out.join("runlogs/naive_b2.jsonl")).unwrap().is_empty());
    let penalties = fs::read_to_string(out.join("penalties/oracle_b2.csv")).unwrap();
    assert_eq!(penalties.lines().next().unwrap(), "state,x,y,action,predicted,true");

    let plot = dir.path().join("plot.csv");
    let text = cli(&["plotdata", "--in", out.to_str().unwrap(), "--out", plot.to_str().unwrap()]).unwrap();
    assert!(text.starts_with("wrote"));
    let plot = fs::read_to_string(plot).unwrap();
    assert!(plot.starts_with("figure,method,budget,x,series,value,stderr"));
    assert!(plot.contains("penalty_vs_budget,afs,6"));
    assert!(plot.contains("utility_vs_iteration,afs"));
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("o");
    cli(&[
        "run", "--config", &config, "--out", out.to_str().unwrap(), "--methods", "naive,single_format:approval",
        "--budgets", "1,3", "--seed", "9", "--jobs", "1",
    ])
    .unwrap();
    let rows = read_results(&out.join("results.csv")).unwrap();
    let names: Vec<(String, f64)> = rows.iter().map(|r| (r.method.clone(), r.budget)).collect();
    assert_eq!(
        names,
        vec![
            ("naive".into(), 1.0),
            ("naive".into(), 3.0),
            ("single_format:approval".into(), 1.0),
            ("single_format:approval".into(), 3.0)
        ]
    );
    assert!(out.join("runlogs/single_format_approval_b3.jsonl").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    cli(&["run", "--config", &config, "--out", a.to_str().unwrap(), "--jobs", "3"]).unwrap();
    cli(&["run", "--config", &config, "--out", b.to_str().unwrap(), "--jobs", "1"]).unwrap();
    for f in ["results.csv", "runlogs/afs_b2.jsonl", "runlogs/afs_b6.jsonl", "penalties/afs_b6.csv", "utilities.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn validate_reports_problems() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let text = cli(&["validate", "--config", &config]).unwrap();
    assert!(text.starts_with("ok: navigation domain, 5x4"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, CONFIG.replace("budgets = [2, 6]", "budgets = [6, 2]")).unwrap();
    let err = cli(&["validate", "--config", bad.to_str().unwrap()]).unwrap_err();
    assert!(err.to_string().contains("experiment.budgets"), "{err}");

    fs::write(&bad, CONFIG.replace("S....", "S..X.")).unwrap();
    let err = cli(&["validate", "--config", bad.to_str().unwrap()]).unwrap_err();
    assert!(err.to_string().contains("row 0, column 3"), "{err}");

    fs::write(&bad, CONFIG.replace("\"afs\"]", "\"ri\"]")).unwrap();
    let err = cli(&["validate", "--config", bad.to_str().unwrap()]).unwrap_err();
    assert!(err.to_string().contains("not available"), "{err}");
}
