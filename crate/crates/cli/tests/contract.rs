use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};

use storyboard_core::backend::contract::{check_names, run_contract, ContractOptions};
use storyboard_core::backend::{BackendConfig, HttpTransport};

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn sim_serve(scenario: &str) -> (Server, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, scenario).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_storyboard"))
        .args(["sim-serve", path.to_str().unwrap(), "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    (Server(child), url)
}

fn http(url: &str) -> HttpTransport {
    let mut cfg = BackendConfig::default();
    cfg.apply_env_overrides(|_| Some(url.to_string()));
    HttpTransport::new(&cfg)
}

#[test]
fn sim_serve_passes_the_wire_contract() {
    let (_server, url) = sim_serve(r#"{"seed": 5}"#);
    let results = run_contract(&http(&url), &ContractOptions::default());
    assert_eq!(results.iter().map(|r| r.name).collect::<Vec<_>>(), check_names());
    for r in &results {
        assert!(r.outcome.is_ok(), "{}: {:?}", r.name, r.outcome);
    }
}

#[test]
fn malformed_bodies_get_an_error_envelope() {
    use storyboard_core::backend::wire::{Endpoint, ErrorEnvelope};
    use storyboard_core::backend::{Transport, WireRequest};
    let (_server, url) = sim_serve("{}");
    let transport = http(&url);
    let bad = transport.send(&WireRequest { endpoint: Endpoint::Embed, body: b"not json".to_vec() }).unwrap();
    assert_eq!(bad.status, 400);
    let envelope: ErrorEnvelope = serde_json::from_slice(&bad.body).unwrap();
    assert!(!envelope.error.code.is_empty());
}
