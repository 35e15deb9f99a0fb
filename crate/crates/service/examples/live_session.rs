//! Starts the session service on a loopback port and plays a human over
//! plain HTTP: approve or reject every approval item, decline everything else.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;

use serde_json::{json, Value};

use nse_afs_service::{serve_on, SessionStore};

fn http(addr: SocketAddr, method: &str, path: &str, body: Option<&Value>) -> (u16, String) {
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    let mut stream = TcpStream::connect(addr).expect("connect");
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let (head, rest) = raw.split_once("\r\n\r\n").unwrap_or((&raw, ""));
    let status = head.split_whitespace().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    (status, rest.to_string())
}

fn main() {
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    runtime.spawn(serve_on(listener, Arc::new(SessionStore::in_memory())));
    println!("service on http://{addr}");

    let (_, formats) = http(addr, "GET", "/v1/formats", None);
    println!("formats: {formats}");
    let (status, created) = http(addr, "POST", "/v1/sessions", Some(&json!({"preset": "navigation", "budget": 8, "seed": 1})));
    let created: Value = serde_json::from_str(&created).unwrap();
    let id = created["session"].as_str().unwrap().to_string();
    println!("created {id} ({status})");

    loop {
        let (status, body) = http(addr, "GET", &format!("/v1/sessions/{id}/query"), None);
        if status != 200 {
            println!("query -> {status}: {body}");
            break;
        }
        let q: Value = serde_json::from_str(&body).unwrap();
        let format = q["format"].as_str().unwrap();
        let reply = if format == "approval" {
            // Approve only moves that stay on plain ground.
            let answers: Vec<Value> = q["items"]
                .as_array()
                .unwrap()
                .iter()
                .map(|item| {
                    let (x, y) = (item["position"][0].as_i64().unwrap(), item["position"][1].as_i64().unwrap());
                    let (dx, dy) = match item["actions"][0]["name"].as_str().unwrap() {
                        "up" => (0, -1),
                        "down" => (0, 1),
                        "left" => (-1, 0),
                        _ => (1, 0),
                    };
                    let target = q["grid"]["cells"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .find(|c| c["x"].as_i64() == Some(x + dx) && c["y"].as_i64() == Some(y + dy));
                    let plain = target.is_none_or(|c| c["kind"] == "plain");
                    json!({"kind": "approval", "approve": plain})
                })
                .collect();
            json!({"t": q["t"], "answers": answers})
        } else {
            json!({"t": q["t"], "declined": true})
        };
        let (_, summary) = http(addr, "POST", &format!("/v1/sessions/{id}/feedback"), Some(&reply));
        let summary: Value = serde_json::from_str(&summary).unwrap();
        println!(
            "t={} {format}: budget {} rows {}",
            q["t"], summary["remaining_budget"], summary["dataset_size"]
        );
    }

    let (_, model) = http(addr, "GET", &format!("/v1/sessions/{id}/model?metrics=true"), None);
    let model: Value = serde_json::from_str(&model).unwrap();
    println!("final metrics: {}", model["metrics"]);
    let (_, runlog) = http(addr, "GET", &format!("/v1/sessions/{id}/runlog"), None);
    println!("run log has {} records", runlog.lines().count());
}
