use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn copilot(data_dir: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_copilot"));
    cmd.env("DATA_DIR", data_dir)
        .env_remove("PROVIDER_API_KEY")
        .env("RUST_LOG", "error");
    cmd
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    (
        status.code().unwrap_or(-1),
        String::from_utf8(stdout).unwrap(),
        String::from_utf8(stderr).unwrap(),
    )
}

#[test]
fn no_verb_prints_usage_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = run(&mut copilot(dir.path()));
    assert_eq!(code, 2);
    assert!(format!("{out}{err}").contains("Usage"), "{out}{err}");
}

#[test]
fn fixture_ingest_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let day1 = fixtures().join("day1.jsonl");
    let (code, out, err) = run(copilot(dir.path()).args(["ingest", "--fixture"]).arg(&day1));
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.trim(), "3 new papers");

    let (code, out, _) = run(copilot(dir.path()).args(["ingest", "--fixture"]).arg(&day1));
    assert_eq!(code, 0);
    assert_eq!(out.trim(), "0 new papers, 3 papers already present");
}

#[test]
fn malformed_entries_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = run(
        copilot(dir.path())
            .args(["ingest", "--fixture"])
            .arg(fixtures().join("malformed.jsonl")),
    );
    assert_eq!(code, 3);
    assert_eq!(out.trim(), "1 new paper, 2 malformed entries skipped");
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    for (body, key) in [("k = 0\n", "k"), ("embed_dim = \"wide\"\n", "embed_dim"), ("colour = 3\n", "colour")] {
        let cfg = dir.path().join("copilot.toml");
        std::fs::write(&cfg, body).unwrap();
        let (code, _, err) = run(copilot(dir.path()).arg("--config").arg(&cfg).arg("rebuild-pool"));
        assert_eq!(code, 2, "{body}: {err}");
        assert!(err.contains(key), "{body}: {err}");
    }
    let (code, _, err) = run(copilot(dir.path()).arg("--config").arg(dir.path().join("missing.toml")).arg("rebuild-pool"));
    assert_eq!(code, 2, "{err}");
}

#[test]
fn live_provider_needs_a_key() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(copilot(dir.path()).args(["--provider", "live", "rebuild-pool"]));
    assert_eq!(code, 2);
    assert!(err.contains("PROVIDER_API_KEY"), "{err}");
}

#[test]
fn rebuilt_pool_matches_incremental_pool() {
    let dir = tempfile::tempdir().unwrap();
    let feed = fixtures().join("feed");
    for day in ["2024-06-09", "2024-06-10"] {
        let (code, _, err) = run(copilot(dir.path()).arg("--fixture-mode").arg(&feed).args(["ingest", "--date", day]));
        assert_eq!(code, 0, "{err}");
    }
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
    let (matrix, ids) = (read("papers.pool"), read("papers.ids"));
    let (code, out, err) = run(copilot(dir.path()).arg("--fixture-mode").arg(&feed).arg("rebuild-pool"));
    assert_eq!(code, 0, "{err}");
    assert_eq!(out.trim(), "rebuilt paper pool: 8 rows");
    assert_eq!(read("papers.pool"), matrix);
    assert_eq!(read("papers.ids"), ids);
}

#[test]
fn run_serves_and_holds_the_data_dir_lock() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = copilot(dir.path())
        .arg("--fixture-mode")
        .arg(fixtures().join("feed"))
        .args(["run", "--port", "0", "--no-scheduler"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap_or_else(|| panic!("{line}")).to_string();

    let mut conn = std::net::TcpStream::connect(&addr).unwrap();
    conn.write_all(b"GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    conn.read_to_string(&mut resp).unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    let body: serde_json::Value = serde_json::from_str(resp.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["status"], "ok");

    let (code, _, err) = run(copilot(dir.path()).args(["ingest", "--fixture"]).arg(fixtures().join("day1.jsonl")));
    assert_eq!(code, 1);
    assert!(err.contains("in use"), "{err}");

    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn bench_verbs_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = run(copilot(dir.path()).args([
        "bench", "retrieval", "--sizes", "0,40", "--trials", "2", "--naive-trials", "1",
    ]));
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "scenario,mode,corpus_size,trials,median_ms,p95_ms,embed_calls_per_query");
    assert_eq!(lines.len(), 5);

    let csv = dir.path().join("deploy.csv");
    let (code, _, err) = run(copilot(dir.path())
        .args(["bench", "deploy", "--time-scale", "0.001", "--rounds", "1", "--out"])
        .arg(&csv));
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("reduction"), "{err}");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("toggles,round,step,seconds\n"));
    assert_eq!(text.matches(",all,total,").count(), 2);

    let (code, _, _) = run(copilot(dir.path()).args(["bench", "deploy", "--toggles", "turbo"]));
    assert_eq!(code, 2);
}
