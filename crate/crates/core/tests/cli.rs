use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

fn aes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aes")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Synth {
    _dir: tempfile::TempDir,
    root: PathBuf,
    corpus: PathBuf,
    members: PathBuf,
}

fn synth(seed: u64) -> Synth {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let out = aes(&["synth", "--seed", &seed.to_string(), "--out", p(&root.join("data"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    Synth {
        corpus: root.join("data/corpus.tsv"),
        members: root.join("data/members/manifest.csv"),
        root,
        _dir: dir,
    }
}

fn full_run(s: &Synth, out_dir: &Path) {
    let common = ["--corpus", p(&s.corpus), "--seed", "9", "--out", p(out_dir)];
    let ingest = aes(&[&["ingest"][..], &common].concat());
    assert_eq!(code(&ingest), 0, "{}", stderr(&ingest));
    let with_members = [&common[..], &["--members", p(&s.members)]].concat();
    let eval = aes(&[&["evaluate"][..], &with_members].concat());
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    let ens = aes(&[&["ensemble"][..], &with_members].concat());
    assert_eq!(code(&ens), 0, "{}", stderr(&ens));
    let report = aes(&["report", "--out", p(out_dir)]);
    assert_eq!(code(&report), 0, "{}", stderr(&report));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&aes(&[])), 1);
    assert_eq!(code(&aes(&["ingest", "--corpus", "x.tsv"])), 1);
    assert_eq!(code(&aes(&["ingest", "--corpus", "x.tsv", "--out", "o", "--bogus"])), 1);
    assert_eq!(code(&aes(&["--help"])), 0);
}

#[test]
fn missing_corpus_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.tsv");
    let out = aes(&["ingest", "--corpus", p(&missing), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere.tsv"), "{}", stderr(&out));
}

#[test]
fn pipeline_is_deterministic() {
    let s = synth(4);
    let (a, b) = (s.root.join("a"), s.root.join("b"));
    full_run(&s, &a);
    full_run(&s, &b);
    let mut compared = 0;
    for rel in ["split.csv", "corpus_summary.txt", "report.md", "report.json"] {
        assert_eq!(std::fs::read(a.join(rel)).unwrap(), std::fs::read(b.join(rel)).unwrap(), "{rel}");
        compared += 1;
    }
    for sub in ["tables", "ensemble/ens-all", "ensemble/ens-essay"] {
        for entry in std::fs::read_dir(a.join(sub)).unwrap() {
            let name = entry.unwrap().file_name();
            let (x, y) = (std::fs::read(a.join(sub).join(&name)).unwrap(), std::fs::read(b.join(sub).join(&name)).unwrap());
            assert_eq!(x, y, "{sub}/{name:?}");
            compared += 1;
        }
    }
    assert!(compared > 20);
    let report = std::fs::read_to_string(a.join("report.md")).unwrap();
    assert_eq!(report.matches("## Table").count(), 7);
    assert!(!report.contains("_not run_"));
}

#[test]
fn report_marks_tables_that_were_not_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = aes(&["report", "--out", p(dir.path())]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches("_not run_").count(), 7);
}

#[test]
fn ensemble_config_errors() {
    let s = synth(5);
    let out_dir = s.root.join("o");
    let ingest = aes(&["ingest", "--corpus", p(&s.corpus), "--out", p(&out_dir)]);
    assert_eq!(code(&ingest), 0);
    let base = ["ensemble", "--corpus", p(&s.corpus), "--out", p(&out_dir), "--members", p(&s.members)];

    let unknown = s.root.join("unknown.json");
    std::fs::write(&unknown, r#"{"elite_treshold": 0.7}"#).unwrap();
    let out = aes(&[&base[..], &["--config", p(&unknown)]].concat());
    assert_eq!(code(&out), 1, "{}", stderr(&out));

    let bad = s.root.join("bad.json");
    std::fs::write(&bad, r#"{"tier_low": 3.5, "tier_high": 1.0}"#).unwrap();
    let out = aes(&[&base[..], &["--config", p(&bad)]].concat());
    assert_eq!(code(&out), 1, "{}", stderr(&out));

    let ok = s.root.join("ok.json");
    std::fs::write(&ok, r#"{"correlation": "pearson", "tier_delta": 0.2}"#).unwrap();
    let out = aes(&[&base[..], &["--config", p(&ok)]].concat());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn member_missing_an_essay_is_a_data_error() {
    let s = synth(6);
    let out_dir = s.root.join("o");
    assert_eq!(code(&aes(&["ingest", "--corpus", p(&s.corpus), "--out", p(&out_dir)])), 0);
    let split = std::fs::read_to_string(out_dir.join("split.csv")).unwrap();
    let test_id = split.lines().find(|l| l.ends_with(",test")).unwrap().split(',').next().unwrap().to_string();
    let member = s.root.join("data/members/essay__bert-base.csv");
    let kept: String = std::fs::read_to_string(&member)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with(&format!("{test_id},")))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&member, kept).unwrap();
    let out = aes(&["ensemble", "--corpus", p(&s.corpus), "--out", p(&out_dir), "--members", p(&s.members)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains(&test_id), "{}", stderr(&out));
}

/// Minimal chat-completions endpoint on localhost.
struct MockServer {
    url: String,
    calls: Arc<AtomicUsize>,
    auth: Arc<Mutex<Vec<String>>>,
}

fn mock_server(status: u16) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let calls = Arc::new(AtomicUsize::new(0));
    let auth = Arc::new(Mutex::new(Vec::new()));
    let (c, a) = (calls.clone(), auth.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let (c, a) = (c.clone(), a.clone());
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut writer = stream;
                loop {
                    let mut length = 0;
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    loop {
                        line.clear();
                        reader.read_line(&mut line).unwrap();
                        let lower = line.to_ascii_lowercase();
                        if let Some(v) = lower.strip_prefix("content-length:") {
                            length = v.trim().parse().unwrap();
                        }
                        if lower.starts_with("authorization:") {
                            a.lock().unwrap().push(line.trim().to_string());
                        }
                        if line == "\r\n" {
                            break;
                        }
                    }
                    let mut body = vec![0; length];
                    reader.read_exact(&mut body).unwrap();
                    let n = c.fetch_add(1, Ordering::SeqCst);
                    let request: serde_json::Value = serde_json::from_slice(&body).unwrap();
                    assert!(request["messages"][0]["content"].as_str().unwrap().contains("experienced essay grader"));
                    let reply = if status == 200 {
                        serde_json::json!({ "choices": [{ "message": {
                            "role": "assistant",
                            "content": format!("**SCORE:** {}\n\n**RATIONALE:** The response cites the mast and laws.", n % 5)
                        }}]})
                        .to_string()
                    } else {
                        r#"{"error":"overloaded"}"#.to_string()
                    };
                    let head = format!(
                        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n",
                        reply.len()
                    );
                    if writer.write_all(head.as_bytes()).and_then(|_| writer.write_all(reply.as_bytes())).is_err() {
                        return;
                    }
                }
            });
        }
    });
    MockServer { url, calls, auth }
}

fn write_job(dir: &Path, endpoint: &str, limit: usize) -> PathBuf {
    std::fs::write(dir.join("passage.txt"), "The Mooring Mast, by Marcia Amidon Lusted.").unwrap();
    let job = serde_json::json!({
        "generator_id": "gpt-4.1",
        "passage_file": "passage.txt",
        "limit": limit,
        "provider": {
            "endpoint": endpoint,
            "api_key_env": "AES_TEST_API_KEY",
            "max_attempts": 2,
            "backoff_base_ms": 1,
            "concurrency": 3,
            "timeout_secs": 10
        }
    });
    let path = dir.join("job.json");
    std::fs::write(&path, job.to_string()).unwrap();
    path
}

fn rationales(s: &Synth, job: &Path, out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aes"))
        .args(["rationales", "--corpus", p(&s.corpus), "--out", p(out_dir), "--config", p(job)])
        .env("AES_TEST_API_KEY", "sk-test")
        .output()
        .unwrap()
}

#[test]
fn rationales_against_mock_endpoint_and_resume() {
    let s = synth(7);
    let server = mock_server(200);
    let job = write_job(&s.root, &server.url, 25);
    let out_dir = s.root.join("o");
    let out = rationales(&s, &job, &out_dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(server.calls.load(Ordering::SeqCst), 25);
    assert!(server.auth.lock().unwrap().iter().all(|h| h.ends_with("Bearer sk-test")));

    let csv = std::fs::read_to_string(out_dir.join("rationales/gpt-4.1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 26);
    assert!(csv.contains("The response cites the mast and laws."));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("rationales/gpt-4.1.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["records"], 25);

    let again = rationales(&s, &job, &out_dir);
    assert_eq!(code(&again), 0);
    assert_eq!(server.calls.load(Ordering::SeqCst), 25, "resume must not call again");
}

#[test]
fn exhausted_provider_exits_three() {
    let s = synth(8);
    let server = mock_server(500);
    let job = write_job(&s.root, &server.url, 4);
    let out = rationales(&s, &job, &s.root.join("o"));
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert_eq!(server.calls.load(Ordering::SeqCst), 8);
}

#[test]
fn bad_job_file_is_a_usage_error() {
    let s = synth(9);
    let job = s.root.join("job.json");
    std::fs::write(&job, r#"{"generator_id": "gpt-5"}"#).unwrap();
    let out = rationales(&s, &job, &s.root.join("o"));
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}
