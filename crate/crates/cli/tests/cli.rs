use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

const BIN: &str = env!("CARGO_BIN_EXE_dualchecker");
const YES: &str = r#"{"Answer": "yes", "Confidence": 90, "Rationale": "it saves energy"}"#;

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("DUALCHECKER_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_renders_for_every_verb() {
    for verb in ["distill", "eval", "simulate", "inspect"] {
        let o = run(&[verb, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{verb}");
        assert!(stdout(&o).contains("Usage:"), "{verb}");
    }
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_1() {
    let o = run(&["distill", "--config", "c", "--train", "t", "--unlabeled", "u"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--out"), "{}", stderr(&o));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--scenario", "happy_path", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--resume"]).status.code(), Some(1));
}

#[test]
fn simulate_bundled_scenarios() {
    let o = run(&["simulate", "--scenario", "happy_path"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("completed after 2 batches"), "{}", stdout(&o));

    let o = run(&["simulate", "--list"]);
    assert_eq!(stdout(&o).lines().count(), 3);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let o = run(&["simulate", "--scenario", "malformed_replies", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let events = std::fs::read_to_string(out.join("events.jsonl")).unwrap();
    assert!(events.contains("\"kind\":\"parse_failure\""));
    for line in events.lines().filter(|l| l.contains("\"kind\":\"batch_trained\"")) {
        assert!(!line.contains("\"m3\"") && !line.contains("\"m5\""), "{line}");
    }
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(run(&["simulate", "--scenario", "three_batches", "--out", p(d)]).status.code(), Some(0));
    }
    for f in ["events.jsonl", "student.ckpt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unmet_expectation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--scenario", "happy_path", "--out", p(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("x/scenario.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["expect"]["batches"] = 5.into();
    let path = dir.path().join("wrong.json");
    std::fs::write(&path, v.to_string()).unwrap();
    let o = run(&["simulate", "--scenario", p(&path)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("expected 5 batches"));
}

#[test]
fn simulate_resume_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&["simulate", "--scenario", "three_batches", "--out", p(&out), "--max-batches", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("paused after 1 batches"));
    let o = run(&["inspect", p(&out)]);
    assert!(stdout(&o).contains("status: in progress, 1 of 3 batches done"), "{}", stdout(&o));

    let o = run(&["simulate", "--resume", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("completed after 3 batches"));

    let o = run(&["inspect", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("status: completed, 3 of 3 batches done"), "{text}");
    assert_eq!(text.matches("borderline history: ").count(), 1);
    let history = text.lines().find(|l| l.starts_with("borderline history:")).unwrap();
    assert_eq!(history.split(", ").count(), 3);
    assert!(text.contains("final metrics:\nclass"));

    let o = run(&["simulate", "--scenario", "happy_path", "--out", p(&dir.path().join("h"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&run(&["inspect", p(&dir.path().join("h"))])).contains("reprompt rate: 0.00%"));
}

#[test]
fn inspect_rejects_non_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["inspect", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error"));
}

fn write_data(dir: &Path) -> (PathBuf, PathBuf) {
    let train = dir.join("train.jsonl");
    let unlabeled = dir.join("unlabeled.jsonl");
    let mut t = String::new();
    for i in 0..10 {
        let (text, label) = if i % 2 == 0 {
            (format!("solar panel array number {i} feeds the grid"), 1)
        } else {
            (format!("plastic toy figure number {i} with paint"), 0)
        };
        t.push_str(&format!("{{\"id\": \"t{i}\", \"context\": \"{text}\", \"label\": {label}}}\n"));
    }
    std::fs::write(&train, t).unwrap();
    let u: String = (0..6)
        .map(|i| format!("{{\"id\": \"u{i}\", \"context\": \"wind turbine blade design {i}\"}}\n"))
        .collect();
    std::fs::write(&unlabeled, u).unwrap();
    (train, unlabeled)
}

#[test]
fn distill_with_script_backend_then_eval_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let (train, unlabeled) = write_data(dir.path());
    let line = serde_json::json!({ "reply": YES }).to_string();
    std::fs::write(dir.path().join("script.jsonl"), format!("{line}\n").repeat(200)).unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "task = \"binary_green\"\nn_shot = 3\ndistill_batch_size = 4\nretry_base_delay_ms = 0\n\n[teacher]\nkind = \"script\"\npath = \"script.jsonl\"\n",
    )
    .unwrap();

    let out = dir.path().join("run");
    let args = |extra: &[&str]| {
        let mut v = vec!["distill", "--config", p(&config), "--train", p(&train), "--unlabeled", p(&unlabeled)];
        v.extend_from_slice(extra);
        v.iter().map(|s| s.to_string()).collect::<Vec<_>>()
    };
    let o = Command::new(BIN)
        .args(args(&["--out", p(&out), "--max-batches", "1"]))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("paused after 1 batches"), "{}", stdout(&o));
    // starting over the same directory is refused
    let o = Command::new(BIN).args(args(&["--out", p(&out)])).output().unwrap();
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["distill", "--resume", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("completed after 2 batches"), "{}", stdout(&o));

    let o = run(&["eval", "--model", p(&out), "--data", p(&train), "--average", "micro"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("micro"), "{}", stdout(&o));
    let o = run(&["eval", "--model", p(&out.join("student.ckpt")), "--data", p(&train), "--config", p(&config), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["n_eval"], 10);
    let o = run(&["eval", "--model", p(&out.join("student.ckpt")), "--data", p(&train)]);
    assert_eq!(o.status.code(), Some(2));

    // an override is applied after the file and lands in the snapshot
    let out2 = dir.path().join("run2");
    let o = Command::new(BIN)
        .args(args(&["--out", p(&out2), "--override", "teacher_threshold=0.95"]))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let snapshot = std::fs::read_to_string(out2.join("config.toml")).unwrap();
    assert!(snapshot.contains("teacher_threshold = 0.95"), "{snapshot}");
    let events = std::fs::read_to_string(out2.join("events.jsonl")).unwrap();
    assert!(events.contains("\"kind\":\"reprompt\""));
    assert!(!events.contains("\"kind\":\"batch_trained\""));
}

fn read_request(stream: &mut std::net::TcpStream) -> Option<(String, String)> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut headers = String::new();
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        if line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().ok()?;
        }
        headers.push_str(&line);
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some((headers, String::from_utf8_lossy(&body).into_owned()))
}

#[test]
fn distill_over_http_retries_a_server_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let hits = Arc::new(AtomicUsize::new(0));
    let authorized = Arc::new(AtomicUsize::new(0));
    {
        let (hits, authorized) = (hits.clone(), authorized.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let Some((headers, body)) = read_request(&mut stream) else { continue };
                let n = hits.fetch_add(1, Ordering::SeqCst);
                if headers.to_ascii_lowercase().contains("authorization: bearer fixture-key") {
                    authorized.fetch_add(1, Ordering::SeqCst);
                }
                assert!(body.contains("\"messages\""));
                let (status, payload) = if n == 0 {
                    ("500 Internal Server Error", "{\"error\": \"warming up\"}".to_string())
                } else {
                    let msg = serde_json::json!({
                        "choices": [{"message": {"role": "assistant", "content": YES}}],
                        "usage": {"prompt_tokens": 10, "completion_tokens": 5, "total_tokens": 15}
                    });
                    ("200 OK", msg.to_string())
                };
                let resp = format!(
                    "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
    }

    let dir = tempfile::tempdir().unwrap();
    let (train, unlabeled) = write_data(dir.path());
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "task = \"binary_green\"\nn_shot = 2\nretry_base_delay_ms = 1\n\n[teacher]\nkind = \"http\"\nendpoint = \"http://127.0.0.1:{port}/v1/chat/completions\"\nmodel = \"fixture\"\ntimeout_secs = 10\n"
        ),
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = Command::new(BIN)
        .args(["distill", "--config", p(&config), "--train", p(&train), "--unlabeled", p(&unlabeled), "--out", p(&out)])
        .env("DUALCHECKER_API_KEY", "fixture-key")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let n = hits.load(Ordering::SeqCst);
    assert!(n >= 7, "{n} requests");
    assert_eq!(authorized.load(Ordering::SeqCst), n);
    let transcript = std::fs::read_to_string(out.join("transcript.jsonl")).unwrap();
    assert!(transcript.contains("500"), "{transcript}");
    assert!(!transcript.contains("fixture-key"));
    let snapshot = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(!snapshot.contains("fixture-key"));
    let events = std::fs::read_to_string(out.join("events.jsonl")).unwrap();
    assert_eq!(events.matches("\"kind\":\"teacher_call\"").count(), 6);
}
