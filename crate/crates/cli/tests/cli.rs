use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

fn tilesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tilesim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const KEY: &str = "00112233445566778899aabbccddeeff";
const TILE: &str = "0a1b2c3d4e5f0001";

#[test]
fn bundled_antitheft_scenario_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let snap = dir.path().join("snap.json");
    let o = tilesim(&[
        "run",
        "--scenario",
        "antitheft-circumvention",
        "--report-out",
        report.to_str().unwrap(),
        "--snapshot-out",
        snap.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["verdicts"][0]["attack"], "a8");
    assert_eq!(r["verdicts"][0]["outcome"], "success");
    for k in ["scenario", "toggles", "verdicts", "assertions"] {
        assert!(r.get(k).is_some(), "report lacks {k}");
    }
    let s: Value = serde_json::from_str(&std::fs::read_to_string(&snap).unwrap()).unwrap();
    assert!(!s["tags"].as_array().unwrap().is_empty());
}

#[test]
fn same_seed_gives_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let logs: Vec<String> = (0..2)
        .map(|i| {
            let p = dir.path().join(format!("log{i}.jsonl"));
            let o = tilesim(&["run", "--scenario", "replay-framing", "--log-out", p.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0));
            std::fs::read_to_string(p).unwrap()
        })
        .collect();
    assert!(!logs[0].is_empty());
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn undefined_actor_exits_2_and_failed_assertion_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"version":1,"name":"bad","seed":1,"duration_secs":10,
            "actors":[{"id":"a","kind":"phone"}],
            "script":[{"at":0,"actor":"nobody","action":"register"}]}"#,
    )
    .unwrap();
    assert_eq!(tilesim(&["run", "--scenario", bad.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(tilesim(&["run", "--scenario", bad.to_str().unwrap()]).status.code(), Some(2));

    let text = tilesim_core::scenario::bundled("antitheft-circumvention").unwrap();
    let mut v: Value = serde_json::from_str(text).unwrap();
    v["assertions"][0]["expect"] = "failure".into();
    let wrong = dir.path().join("wrong.json");
    std::fs::write(&wrong, v.to_string()).unwrap();
    assert_eq!(tilesim(&["run", "--scenario", wrong.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn attack_subcommand_prints_one_verdict() {
    let o = tilesim(&["attack", "a4"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["attack"], "a4");
    assert_eq!(v["outcome"], "success");
    assert_eq!(tilesim(&["attack", "a9"]).status.code(), Some(2));
}

#[test]
fn derive_outputs() {
    let ctr0 = tilesim(&["derive", "--auth-key", KEY, "--tile-id", TILE, "--ctr", "0"]);
    assert!(ctr0.status.success());
    assert_eq!(stdout(&ctr0), stdout(&tilesim(&["derive", "--auth-key", KEY, "--tile-id", TILE, "--ctr", "0"])));
    assert_eq!(stdout(&ctr0).trim().len(), 16);

    let all = stdout(&tilesim(&["derive", "--auth-key", KEY, "--tile-id", TILE, "--all"]));
    let lines: Vec<&str> = all.lines().collect();
    assert_eq!(lines.len(), 8640);
    assert_eq!(lines.iter().collect::<std::collections::BTreeSet<_>>().len(), 8640);
    assert_eq!(lines[0], stdout(&ctr0).trim());

    let act = 1_700_000_000u64;
    let later = (act + 90 * 86_400).to_string();
    let at = tilesim(&["derive", "--auth-key", KEY, "--tile-id", TILE, "--time", &later, "--activation", &act.to_string()]);
    assert_eq!(stdout(&at), stdout(&ctr0));
}

#[test]
fn derive_rejects_bad_hex() {
    let o = tilesim(&["derive", "--auth-key", "not-hex", "--tile-id", TILE, "--ctr", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = tilesim(&["derive", "--auth-key", KEY, "--tile-id", "0a1b", "--ctr", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

struct Served {
    child: Child,
    addr: String,
}

impl Served {
    fn start(extra: &[&str]) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_tilesim"))
            .args(["serve", "--port", "0"])
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on http://").expect("banner").to_owned();
        Self { child, addr }
    }

    fn request(&self, method: &str, path: &str, user: Option<&str>, body: &str) -> (u16, String) {
        let mut s = TcpStream::connect(&self.addr).unwrap();
        let user = user.map(|u| format!("user_uuid: {u}\r\n")).unwrap_or_default();
        write!(
            s,
            "{method} {path} HTTP/1.1\r\nHost: test\r\nContent-Type: application/json\r\n{user}Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        let mut resp = String::new();
        s.read_to_string(&mut resp).unwrap();
        let status = resp[9..12].parse().unwrap();
        let body = resp.split_once("\r\n\r\n").map(|(_, b)| b.to_owned()).unwrap_or_default();
        (status, body)
    }

    fn stop(mut self) -> Output {
        Command::new("kill").args(["-TERM", &self.child.id().to_string()]).status().unwrap();
        let status = self.child.wait().unwrap();
        let mut stderr = Vec::new();
        self.child.stderr.take().unwrap().read_to_end(&mut stderr).unwrap();
        Output { status, stdout: Vec::new(), stderr }
    }
}

#[test]
fn serve_speaks_http_and_snapshots_on_shutdown() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("snap.json");
    let srv = Served::start(&["--snapshot-out", snap.to_str().unwrap()]);

    let reg = r#"{"client_uuid":"000102030405060708090a0b0c0d0e0f","email":"a@example.test","password":"pw"}"#;
    let (status, body) = srv.request("POST", "/api/v1/users", None, reg);
    assert!((200..300).contains(&status), "{status} {body}");
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["status"], "ACTIVATED");
    let user = v["user_uuid"].as_str().unwrap().to_owned();

    let (status, body) = srv.request("GET", "/api/v1/community/stats?latitude=33.7756&longitude=-84.3963", Some(&user), "");
    assert_eq!(status, 200);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["result"]["center_radius"], 5.0);
    assert_eq!(v["result_code"], 0);
    assert!(v["result"]["tilers_around"].is_u64());

    let (status, _) = srv.request("POST", "/api/v1/users", None, "{ nope");
    assert_eq!(status, 400);

    let out = srv.stop();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s: Value = serde_json::from_str(&std::fs::read_to_string(&snap).unwrap()).unwrap();
    assert_eq!(s["users"].as_array().unwrap().len(), 1);
}

#[test]
fn serve_fails_on_busy_port() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = tilesim(&["serve", "--port", &port]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot listen"));
}
