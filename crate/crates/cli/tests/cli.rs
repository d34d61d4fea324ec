//! Command-line behaviour: exit codes, report files and export.

use std::path::Path;
use std::process::{Command, Output};

use parastab::sdp::import_sdpa;
use parastab_cli::config::{load_config, preset_text};
use parastab_cli::pipeline::{self, RunOptions};
use parastab_cli::report::{RunReport, Verdict};

fn parastab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parastab"))
        .args(args)
        .env_remove("PARASTAB_WORKERS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn analyze_exit_codes_follow_the_verdict() {
    let ok = parastab(&["--preset", "paper-1d", "analyze"]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(
        text.contains("feasible") && text.contains("0 violations"),
        "{text}"
    );

    let bad = parastab(&[
        "--preset",
        "paper-1d",
        "--set",
        "problem.params.b=7.0",
        "analyze",
    ]);
    assert_eq!(code(&bad), 2, "{}", stderr(&bad));
}

#[test]
fn configuration_errors_exit_with_3() {
    for set in [
        "grid.n=0",
        "grid.bogus=1",
        "solver.barrier_mu_shrink=1.5",
        "method=thm3",
    ] {
        let out = parastab(&["--preset", "paper-1d", "--set", set, "analyze"]);
        assert_eq!(code(&out), 3, "{set}: {}", stderr(&out));
        assert!(stderr(&out).starts_with("error:"), "{set}");
    }
    let out = parastab(&["analyze", "/nonexistent/config.toml"]);
    assert_eq!(code(&out), 3);
    let out = parastab(&[
        "--preset",
        "paper-3d-ball",
        "--set",
        "method=thm2",
        "analyze",
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn bad_worker_count_is_a_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_parastab"))
        .args(["--preset", "paper-1d", "analyze"])
        .env("PARASTAB_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
}

#[test]
fn non_coercive_diffusion_exits_with_5() {
    let out = parastab(&[
        "--preset",
        "paper-1d",
        "--set",
        "problem.A=[1.0, 0.0, 0.0, -1.0]",
        "analyze",
    ]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
}

#[test]
fn feasible_upper_end_is_an_invalid_bracket() {
    let out = parastab(&["--preset", "paper-1d", "--set", "sweep.hi=3.0", "bisect"]);
    assert_eq!(code(&out), 6, "{}", stderr(&out));
}

#[test]
fn json_report_feeds_the_report_command() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("run.json");
    let out = parastab(&[
        "--preset",
        "paper-1d",
        "--set",
        "sweep.tol=0.1",
        "--out",
        report_path.to_str().unwrap(),
        "--json",
        "bisect",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let printed = RunReport::from_json(&String::from_utf8_lossy(&out.stdout)).unwrap();
    let saved = RunReport::from_json(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(printed.thresholds, saved.thresholds);

    let outdir = dir.path().join("tables");
    let out = parastab(&[
        "report",
        report_path.to_str().unwrap(),
        outdir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = std::fs::read_to_string(outdir.join("table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("N,b_max"));
    let row = lines.next().unwrap();
    let (n, b) = row.split_once(',').unwrap();
    assert_eq!(n, "100");
    assert!((b.parse::<f64>().unwrap() - 6.66).abs() < 0.15, "{row}");
    for name in ["summary.csv", "thresholds.dat", "probes.dat"] {
        assert!(outdir.join(name).exists(), "{name}");
    }
}

#[test]
fn report_rejects_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{ not json").unwrap();
    let out = parastab(&[
        "report",
        path.to_str().unwrap(),
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_ne!(code(&out), 0);
}

fn assert_same_export(file: &Path) {
    let cfg = load_config(preset_text("paper-1d").unwrap(), &[]).unwrap();
    let written = std::fs::read_to_string(file).unwrap();
    assert_eq!(written, pipeline::export(&cfg).unwrap());
    let imported = import_sdpa(&written).unwrap();
    let assembled = pipeline::assemble(&cfg, &cfg.problem.params, None)
        .unwrap()
        .system;
    assert_eq!(imported.blocks.len(), assembled.blocks.len());
    assert_eq!(imported.layout.total_len(), assembled.layout.total_len());
}

#[test]
fn export_writes_the_assembled_system() {
    let dir = tempfile::tempdir().unwrap();
    let from_preset = dir.path().join("preset.dat-s");
    let out = parastab(&[
        "--preset",
        "paper-1d",
        "export",
        from_preset.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_same_export(&from_preset);

    let config = dir.path().join("run.toml");
    std::fs::write(&config, preset_text("paper-1d").unwrap()).unwrap();
    let from_file = dir.path().join("file.dat-s");
    let out = parastab(&[
        "export",
        config.to_str().unwrap(),
        from_file.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_same_export(&from_file);
}

#[test]
fn parallel_bisection_matches_sequential() {
    let cfg = load_config(preset_text("paper-1d").unwrap(), &["sweep.tol=0.05".into()]).unwrap();
    let seq = pipeline::bisect(&cfg, RunOptions { parallel: false }).unwrap();
    let par = pipeline::bisect(&cfg, RunOptions { parallel: true }).unwrap();
    assert_eq!(seq.thresholds, par.thresholds);
    let path = |r: &RunReport| {
        r.probes
            .iter()
            .map(|p| (p.value, p.verdict))
            .collect::<Vec<_>>()
    };
    assert_eq!(path(&seq), path(&par));
}

#[test]
fn echoed_config_reproduces_the_verdict() {
    let cfg = load_config(
        preset_text("paper-1d").unwrap(),
        &["problem.params.b=6.5".into()],
    )
    .unwrap();
    let first = pipeline::analyze(&cfg).unwrap();
    let echoed = toml::to_string(&first.config).unwrap();
    let again = pipeline::analyze(&load_config(&echoed, &[]).unwrap()).unwrap();
    assert_eq!(first.probes[0].verdict, Verdict::Feasible);
    assert_eq!(first.probes[0].verdict, again.probes[0].verdict);
    assert_eq!(first.probes[0].margin, again.probes[0].margin);
}
