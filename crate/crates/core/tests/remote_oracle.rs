//! The remote scoring client against a minimal local HTTP responder.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use deepwolf::engine::Role;
use deepwolf::oracle::{
    remote_score, OracleError, OracleKey, OracleRegistry, RemoteOptions, RemoteOracle, ValueOracle,
    DEFAULT_DEADLINE,
};
use serde_json::Value;

struct Mock {
    url: String,
    requests: mpsc::Receiver<(String, Value)>,
}

/// Answers every request with `status` and `body` after `delay`, and reports
/// each `(path, json body)` it received.
fn mock(status: u16, body: &'static str, delay: Duration) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let tx = tx.clone();
            thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut len = 0usize;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    if h.trim().is_empty() {
                        break;
                    }
                    let lower = h.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                let _ = tx.send((path, serde_json::from_slice(&buf).unwrap_or(Value::Null)));
                thread::sleep(delay);
                let reason = if status == 200 { "OK" } else { "Error" };
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            });
        }
    });
    Mock { url, requests: rx }
}

fn key() -> OracleKey {
    OracleKey::new(Role::Werewolf, 3).unwrap()
}

#[test]
fn passes_probability_through_and_sends_exact_fields() {
    let m = mock(200, r#"{"win_probability": 0.42}"#, Duration::ZERO);
    let s = remote_score(&m.url, key(), "You are #3.\n", "#3) Hello.").unwrap();
    assert_eq!(s.value(), 0.42);
    let (path, body) = m.requests.recv().unwrap();
    assert_eq!(path, "/v1/score");
    assert_eq!(
        body,
        serde_json::json!({"role": "werewolf", "player": 3, "log": "You are #3.\n", "candidate": "#3) Hello."})
    );
}

#[test]
fn out_of_range_probability_is_a_protocol_error() {
    let m = mock(200, r#"{"win_probability": 1.7}"#, Duration::ZERO);
    assert!(matches!(remote_score(&m.url, key(), "", ""), Err(OracleError::Protocol(_))));
}

#[test]
fn missing_field_and_server_error_are_protocol_errors() {
    let m = mock(200, r#"{"p": 0.5}"#, Duration::ZERO);
    assert!(matches!(remote_score(&m.url, key(), "", ""), Err(OracleError::Protocol(_))));
    let m = mock(500, r#"{"error": "boom"}"#, Duration::ZERO);
    assert!(matches!(remote_score(&m.url, key(), "", ""), Err(OracleError::Protocol(_))));
}

#[test]
fn slow_server_times_out_at_the_deadline() {
    let m = mock(200, r#"{"win_probability": 0.5}"#, Duration::from_secs(3));
    let deadline = Duration::from_millis(300);
    let oracle = RemoteOracle::new(&m.url, key(), RemoteOptions { deadline, max_in_flight: 1 });
    let start = Instant::now();
    let err = oracle.score("", "").unwrap_err();
    assert_eq!(err, OracleError::Timeout(deadline));
    assert!(start.elapsed() < Duration::from_secs(2));
}

#[test]
fn default_deadline_is_ten_seconds() {
    assert_eq!(DEFAULT_DEADLINE, Duration::from_secs(10));
    assert_eq!(RemoteOptions::default().deadline, DEFAULT_DEADLINE);
}

#[test]
fn closed_port_is_unreachable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = remote_score(&format!("http://127.0.0.1:{port}"), key(), "", "").unwrap_err();
    assert!(matches!(err, OracleError::Unreachable(_)), "{err:?}");
}

#[test]
fn batch_keeps_request_order() {
    let m = mock(200, r#"{"probabilities": [0.1, 0.9]}"#, Duration::ZERO);
    let reg = OracleRegistry::remote(&m.url, RemoteOptions::default());
    assert_eq!(reg.len(), 20);
    let oracle = reg.lookup(key()).unwrap();
    let scores = oracle.score_batch("log", &["a".into(), "b".into()]).unwrap();
    assert_eq!(scores.iter().map(|s| s.value()).collect::<Vec<_>>(), vec![0.1, 0.9]);
    let (path, body) = m.requests.recv().unwrap();
    assert_eq!(path, "/v1/score_batch");
    assert_eq!(body["items"][1]["candidate"], "b");
    assert_eq!(body["items"][0]["player"], 3);
    // wrong length
    let m = mock(200, r#"{"probabilities": [0.1]}"#, Duration::ZERO);
    let oracle = RemoteOracle::new(&m.url, key(), RemoteOptions::default());
    assert!(matches!(oracle.score_batch("", &["a".into(), "b".into()]), Err(OracleError::Protocol(_))));
}
