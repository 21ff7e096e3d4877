use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdc"))
        .args(args)
        .output()
        .unwrap()
}

fn generate(dir: &Path, name: &str) -> String {
    let path = dir.join(name).display().to_string();
    let out = rdc(&[
        "generate",
        "--classes",
        "8",
        "--per-class",
        "12",
        "--dim",
        "16",
        "--seed",
        "3",
        "--out",
        &path,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    path
}

#[test]
fn repeated_runs_write_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "set.csv");
    let reports: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("r{i}.csv")).display().to_string();
            let status = rdc(&[
                "run",
                "--input",
                &input,
                "--episodes",
                "12",
                "--query",
                "4",
                "--k",
                "6",
                "--k2",
                "3",
                "--p",
                "8",
                "--out",
                &out,
            ]);
            assert!(
                status.status.success(),
                "{}",
                String::from_utf8_lossy(&status.stderr)
            );
            fs::read(&out).unwrap()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    let text = String::from_utf8(reports[0].clone()).unwrap();
    assert!(text.starts_with("# rdc-report v1\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 13);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "set.rdce");
    let config = dir.path().join("run.cfg");
    fs::write(
        &config,
        format!("# comment\nmode = npc\ninput = {input}\nepisodes = 3\nquery = 2\n"),
    )
    .unwrap();
    let out = dir.path().join("r.csv").display().to_string();
    let run = rdc(&[
        "run",
        "--config",
        &config.display().to_string(),
        "--mode",
        "npc-l2",
        "--out",
        &out,
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("npc-l2"));
    let report = fs::read_to_string(&out).unwrap();
    assert!(report.contains("mode=npc-l2"));
    assert_eq!(report.lines().count(), 2 + 1 + 3);
}

#[test]
fn finetune_report_has_loss_columns() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "set.csv");
    let out = dir.path().join("ft.csv").display().to_string();
    let run = rdc(&[
        "run",
        "--input",
        &input,
        "--mode",
        "rdcft",
        "--episodes",
        "2",
        "--query",
        "3",
        "--k",
        "6",
        "--k2",
        "3",
        "--p",
        "8",
        "--epochs",
        "3",
        "--out",
        &out,
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let report = fs::read_to_string(&out).unwrap();
    assert!(report.contains("episode_index,accuracy,initial_loss,final_loss"));
}

#[test]
fn bad_input_fails_with_message() {
    let run = rdc(&["run", "--input", "/nonexistent/set.csv", "--episodes", "1"]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).starts_with("error:"));
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "set.csv");
    let run = rdc(&["run", "--input", &input, "--mode", "bogus"]);
    assert!(!run.status.success());
}
