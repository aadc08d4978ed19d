#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

/// Small 3-class generator spec: 90 samples, 4 features.
pub const SPEC: &str = r#"
name = "tiny"
class_count = 3
feature_dim = 4
samples_per_class = [30, 30, 30]
mean_spread = 3.0
seed = 11
"#;

pub fn write_spec(dir: &Path) -> PathBuf {
    let path = dir.join("spec.toml");
    fs::write(&path, SPEC).unwrap();
    path
}

/// Run file pointing at `manifest`, with `extra` appended to `[experiment]`.
pub fn write_run_file(dir: &Path, manifest: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "dataset = {:?}\noutput_dir = \"out\"\neval_fraction = 0.2\n\n[experiment]\n\
         budget = 9\niterations = 3\ninit_fraction = 0.05\narchitecture = \"linear\"\n\
         epochs = 30\nseed = 4\n{extra}\n",
        manifest.to_str().unwrap()
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

/// Minimal HTTP/1.1 exchange over a fresh connection.
pub async fn http(addr: &str, method: &str, path: &str, headers: &[(&str, &str)], body: Option<&Value>) -> (u16, Value) {
    let mut stream = TcpStream::connect(addr).await.unwrap();
    let payload = body.map(Value::to_string).unwrap_or_default();
    let mut req = format!("{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n");
    for (k, v) in headers {
        req.push_str(&format!("{k}: {v}\r\n"));
    }
    if body.is_some() {
        req.push_str(&format!("Content-Type: application/json\r\nContent-Length: {}\r\n", payload.len()));
    }
    req.push_str("\r\n");
    req.push_str(&payload);
    stream.write_all(req.as_bytes()).await.unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).await.unwrap();
    let text = String::from_utf8(raw).unwrap();
    let status = text[9..12].parse().unwrap();
    let (head, body) = text.split_once("\r\n\r\n").unwrap();
    let body = if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
        dechunk(body)
    } else {
        body.to_string()
    };
    (status, serde_json::from_str(&body).unwrap_or(Value::Null))
}

fn dechunk(mut body: &str) -> String {
    let mut out = String::new();
    while let Some((size, rest)) = body.split_once("\r\n") {
        let n = usize::from_str_radix(size.trim(), 16).unwrap_or(0);
        if n == 0 {
            break;
        }
        out.push_str(&rest[..n]);
        body = &rest[n + 2..];
    }
    out
}
