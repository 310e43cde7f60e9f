//! End-to-end runs of the `dbroute` binary: outputs, reproducibility,
//! configuration precedence and exit codes.

#[path = "../../sqlgen/tests/common/mod.rs"]
mod sqlgen_common;

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use dbroute::catalog::to_spider_json;
use dbroute::fixtures::{desk_catalog, toy_catalog};
use dbroute::synth::{read_instances, write_instances};
use dbroute::vocab::Vocabulary;
use dbroute::SchemaCatalog;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dbroute"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn dbroute")
}

fn ok(args: &[&str]) -> Vec<u8> {
    let out = run(args);
    assert!(
        out.status.success(),
        "dbroute {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn write_catalog(dir: &Path, name: &str, catalog: &SchemaCatalog) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(&to_spider_json(catalog)).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Desk catalog, a corpus and a fitted model in a temp dir.
struct Pipeline {
    dir: TempDir,
    catalog: PathBuf,
    corpus: PathBuf,
    model: PathBuf,
}

fn pipeline(n: usize) -> Pipeline {
    let dir = TempDir::new().unwrap();
    let catalog = write_catalog(dir.path(), "tables.json", &desk_catalog(7));
    let corpus = dir.path().join("corpus.jsonl");
    let model = dir.path().join("model.json");
    let n = n.to_string();
    ok(&["synthesize", "--catalog", s(&catalog), "--n", &n, "--seed", "1", "--out", s(&corpus)]);
    ok(&["fit", "--corpus", s(&corpus), "--out", s(&model)]);
    Pipeline {
        dir,
        catalog,
        corpus,
        model,
    }
}

#[test]
fn synthesize_full_corpus_size() {
    let dir = TempDir::new().unwrap();
    let catalog = write_catalog(dir.path(), "tables.json", &desk_catalog(7));
    let out = dir.path().join("corpus.jsonl");
    ok(&["synthesize", "--catalog", s(&catalog), "--n", "100000", "--seed", "7", "--out", s(&out)]);
    let records = read_instances(BufReader::new(File::open(&out).unwrap())).unwrap();
    assert_eq!(records.len(), 100_000);
}

#[test]
fn synthesize_writes_n_records_reproducibly() {
    let dir = TempDir::new().unwrap();
    let catalog = write_catalog(dir.path(), "tables.json", &toy_catalog());
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        ok(&["synthesize", "--catalog", s(&catalog), "--n", "500", "--seed", "7", "--jobs", "2", "--out", s(out)]);
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let records = read_instances(BufReader::new(&bytes[..])).unwrap();
    assert_eq!(records.len(), 500);
    let c = dir.path().join("c.jsonl");
    ok(&["synthesize", "--catalog", s(&catalog), "--n", "500", "--seed", "8", "--out", s(&c)]);
    assert_ne!(bytes, std::fs::read(&c).unwrap());
}

#[test]
fn build_graph_and_reuse() {
    let dir = TempDir::new().unwrap();
    let catalog = write_catalog(dir.path(), "tables.json", &toy_catalog());
    let text = ok(&["build-graph", "--catalog", s(&catalog)]);
    let graph = String::from_utf8(text.clone()).unwrap();
    assert!(graph.lines().any(|l| l == "node @"));
    assert!(graph.lines().any(|l| l.starts_with("edge world/country world/countrylanguage")));
    let path = dir.path().join("graph.txt");
    ok(&["build-graph", "--catalog", s(&catalog), "--out", s(&path)]);
    assert_eq!(std::fs::read(&path).unwrap(), text);
    let corpus = ok(&["synthesize", "--catalog", s(&catalog), "--graph", s(&path), "--n", "20"]);
    assert_eq!(corpus.iter().filter(|&&b| b == b'\n').count(), 20);
}

#[test]
fn route_lists_k_candidates() {
    let p = pipeline(2000);
    let q = "show the name of every singer";
    let listing = String::from_utf8(ok(&[
        "route", "--catalog", s(&p.catalog), "--model", s(&p.model), "--question", q, "--k", "5",
    ]))
    .unwrap();
    let ranks: Vec<&str> = listing.lines().filter(|l| !l.starts_with(' ')).collect();
    assert_eq!(ranks.len(), 5, "{listing}");
    assert!(ranks[0].starts_with("1. "));

    let json = |extra: &[&str]| {
        let mut args = vec!["route", "--catalog", s(&p.catalog), "--model", s(&p.model), "--question", q, "--json"];
        args.extend_from_slice(extra);
        let mut v: serde_json::Value = serde_json::from_slice(&ok(&args)).unwrap();
        v.as_object_mut().unwrap().remove("metadata");
        v
    };
    let a = json(&[]);
    assert_eq!(a, json(&[]));
    assert_eq!(a["candidates"].as_array().unwrap().len(), 5);
    let narrow = json(&["--beams", "2", "--groups", "1", "--k", "1"]);
    assert_eq!(narrow["candidates"].as_array().unwrap().len(), 1);
}

#[test]
fn evaluation_reports() {
    let p = pipeline(1500);
    let dev = p.dir.path().join("dev.jsonl");
    ok(&["synthesize", "--catalog", s(&p.catalog), "--n", "60", "--seed", "99", "--out", s(&dev)]);

    let report = p.dir.path().join("report.json");
    let text = String::from_utf8(ok(&[
        "eval-routing", "--method", "bm25", "--catalog", s(&p.catalog), "--dataset", s(&dev), "--out", s(&report),
    ]))
    .unwrap();
    assert!(text.contains("DB R@1") && text.contains("Tbl R@5") && text.contains("Tbl mAP"), "{text}");
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["method"], "bm25");
    assert_eq!(r["overall"]["instances"], 60);

    let text = String::from_utf8(ok(&[
        "eval-routing", "--method", "router", "--catalog", s(&p.catalog), "--model", s(&p.model), "--dataset", s(&dev),
    ]))
    .unwrap();
    assert!(text.lines().any(|l| l.starts_with("router")), "{text}");

    let tuned = p.dir.path().join("tuned.json");
    let text = String::from_utf8(ok(&[
        "baseline-bm25", "--catalog", s(&p.catalog), "--dataset", s(&dev), "--tune", "--corpus", s(&p.corpus), "--out",
        s(&tuned),
    ]))
    .unwrap();
    assert!(text.starts_with("k1="), "{text}");
    let t: serde_json::Value = serde_json::from_slice(&std::fs::read(&tuned).unwrap()).unwrap();
    assert!(t["tuning"]["table_map"].as_f64().is_some());
    assert_eq!(t["report"]["method"], "bm25-tuned");
}

#[test]
fn adapt_dataset_counts() {
    let dir = TempDir::new().unwrap();
    let catalog = write_catalog(dir.path(), "tables.json", &toy_catalog());
    let dev = dir.path().join("dev.json");
    std::fs::write(
        &dev,
        serde_json::json!([
            {"question": "How many singers?", "query": "SELECT count(*) FROM singer", "db_id": "concert_singer"},
            {"question": "Countries in Asia?", "query": "SELECT T1.Name FROM country AS T1 JOIN countrylanguage AS T2 ON T1.Code = T2.CountryCode", "db_id": "world"},
            {"question": "Broken", "query": "SELECT FROM WHERE (", "db_id": "world"},
            {"question": "Elsewhere", "query": "SELECT 1 FROM t", "db_id": "nowhere"}
        ])
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("dev.jsonl");
    let stats: serde_json::Value = serde_json::from_slice(&ok(&[
        "adapt-dataset", "--catalog", s(&catalog), "--dataset", s(&dev), "--out", s(&out),
    ]))
    .unwrap();
    assert_eq!(stats["stats"]["total"], 4);
    assert_eq!(stats["stats"]["kept"], 2);
    assert_eq!(stats["stats"]["parse_failures"], 1);
    assert_eq!(stats["stats"]["unknown_database"], 1);
    let kept = read_instances(BufReader::new(std::fs::File::open(&out).unwrap())).unwrap();
    assert_eq!(kept[1].tables, vec!["country", "countrylanguage"]);
    assert!(kept[0].sql.is_some());
}

#[test]
fn eval_ex_through_http_model() {
    let dir = TempDir::new().unwrap();
    let catalog = write_catalog(dir.path(), "tables.json", &toy_catalog());
    sqlgen_common::fixture_databases(dir.path());
    let data: Vec<_> = sqlgen_common::fixture_dataset().into_iter().filter(|i| i.question.starts_with("How many")).collect();
    let dataset = dir.path().join("ex.jsonl");
    write_instances(&data, std::fs::File::create(&dataset).unwrap()).unwrap();
    let (url, bodies) = sqlgen_common::chat_server(vec![(
        200,
        sqlgen_common::chat_reply("count(*) FROM country WHERE Continent = 'Europe'"),
    )]);
    let report = dir.path().join("ex.json");
    let text = String::from_utf8(ok(&[
        "eval-ex", "--catalog", s(&catalog), "--dataset", s(&dataset), "--db-dir", s(dir.path()), "--source", "oracle",
        "--llm-endpoint", &url, "--out", s(&report),
    ]))
    .unwrap();
    assert!(text.starts_with("EX 100.00% (1 / 1 valid"), "{text}");
    let sent = bodies.lock().unwrap();
    assert_eq!(sent.len(), 1);
    let body: serde_json::Value = serde_json::from_str(&sent[0]).unwrap();
    assert_eq!(body["temperature"], 0.0);
    assert!(body["messages"][0]["content"].as_str().unwrap().contains("# country("));
}

#[test]
fn eval_ex_without_endpoint_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let catalog = write_catalog(dir.path(), "tables.json", &toy_catalog());
    let out = bin()
        .args(["eval-ex", "--catalog", s(&catalog), "--dataset", "x.jsonl", "--db-dir", "."])
        .env_remove("DBROUTE_LLM_ENDPOINT")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chat endpoint"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(&["synthesize", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    // Missing required value.
    let catalog = write_catalog(dir.path(), "tables.json", &toy_catalog());
    assert_eq!(run(&["synthesize", "--catalog", s(&catalog)]).status.code(), Some(1));
    // Unreadable input.
    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["build-graph", "--catalog", s(&missing)]).status.code(), Some(2));
    // Malformed input.
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(run(&["build-graph", "--catalog", s(&bad)]).status.code(), Some(1));
    // Unwritable output.
    let out = dir.path().join("no/such/dir/g.txt");
    assert_eq!(run(&["build-graph", "--catalog", s(&catalog), "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(run(&["fit", "--corpus", s(&missing)]).status.code(), Some(2));
}

#[test]
fn config_file_with_flag_precedence() {
    let dir = TempDir::new().unwrap();
    let catalog = write_catalog(dir.path(), "tables.json", &toy_catalog());
    let cfg = dir.path().join("dbroute.toml");
    std::fs::write(&cfg, format!("catalog = {:?}\nseed = 3\nn = 40\n", s(&catalog))).unwrap();
    let from_file = ok(&["synthesize", "--config", s(&cfg)]);
    let explicit = ok(&["synthesize", "--catalog", s(&catalog), "--seed", "3", "--n", "40"]);
    assert_eq!(from_file, explicit);
    let overridden = ok(&["synthesize", "--config", s(&cfg), "--n", "10", "--seed", "4"]);
    assert_eq!(overridden, ok(&["synthesize", "--catalog", s(&catalog), "--seed", "4", "--n", "10"]));

    std::fs::write(&cfg, "sede = 3\n").unwrap();
    assert_eq!(run(&["synthesize", "--config", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn scorer_stub_speaks_protocol() {
    let dir = TempDir::new().unwrap();
    let catalog = write_catalog(dir.path(), "tables.json", &toy_catalog());
    let hash = Vocabulary::from_catalog(&toy_catalog()).hash();
    let mut child = bin()
        .args(["scorer-stub", "--mode", "uniform", "--catalog", s(&catalog)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let mut stdin = child.stdin.take().unwrap();
        writeln!(stdin, "{}", serde_json::json!({"type": "hello", "vocab_hash": hash})).unwrap();
        writeln!(stdin, "{}", serde_json::json!({"type": "hello", "vocab_hash": "other"})).unwrap();
        writeln!(
            stdin,
            "{}",
            serde_json::json!({"type": "score", "id": 1, "question": "q", "prefix": [], "candidates": ["a", "b", "c", "d"]})
        )
        .unwrap();
    }
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let first: serde_json::Value = serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap();
    assert_eq!(first["type"], "hello");
    let second: serde_json::Value = serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap();
    assert_eq!(second["type"], "error");
    let third: serde_json::Value = serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap();
    let lp: Vec<f64> = serde_json::from_value(third["logprobs"].clone()).unwrap();
    assert_eq!(lp.len(), 4);
    assert!((lp.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(child.wait().unwrap().success());
}

#[test]
fn route_through_external_scorer() {
    let p = pipeline(200);
    let exe = env!("CARGO_BIN_EXE_dbroute");
    let out = String::from_utf8(ok(&[
        "route", "--catalog", s(&p.catalog), "--scorer-cmd", exe, "--scorer-arg", "scorer-stub", "--scorer-arg",
        "--mode", "--scorer-arg", "echo", "--question", "list every singer", "--k", "3",
    ]))
    .unwrap();
    assert_eq!(out.lines().filter(|l| !l.starts_with(' ')).count(), 3, "{out}");
}

fn http(addr: &str, method: &str, path: &str, body: &str) -> Option<(u16, String)> {
    let mut s = TcpStream::connect(addr).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(20))).ok()?;
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .ok()?;
    let mut resp = String::new();
    s.read_to_string(&mut resp).ok()?;
    let status = resp.split_whitespace().nth(1)?.parse().ok()?;
    let body = resp.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    Some((status, body))
}

#[test]
fn serve_answers_requests() {
    let p = pipeline(300);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = bin()
        .args(["serve", "--catalog", s(&p.catalog), "--model", s(&p.model), "--port", &port.to_string()])
        .env_remove("DBROUTE_LLM_ENDPOINT")
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let addr = format!("127.0.0.1:{port}");
    let start = Instant::now();
    let ready = loop {
        match http(&addr, "GET", "/health", "") {
            Some((200, _)) => break true,
            _ if start.elapsed() > Duration::from_secs(60) => break false,
            _ => std::thread::sleep(Duration::from_millis(100)),
        }
    };
    let result = std::panic::catch_unwind(|| {
        assert!(ready, "server never became ready");
        let (status, body) = http(&addr, "POST", "/route", r#"{"question":"list every singer","k":5}"#).unwrap();
        assert_eq!(status, 200, "{body}");
        assert!(body.contains("\"candidates\""));
        let (status, _) = http(&addr, "POST", "/generate", r#"{"question":"q","candidate_index":1}"#).unwrap();
        assert_eq!(status, 424);
    });
    let _ = child.kill();
    let _ = child.wait();
    result.unwrap();
}
