//! Exercises the HTTP adapters against a scripted loopback server: wire
//! contract parsing, retry-with-backoff on transient failures, and immediate
//! abort on fatal ones.

use navmem::perception::remote::{ChatEndpointConfig, HttpChatClient, RemoteReasoner, RemoteScorer, RemoteVerifier};
use navmem::perception::{
    AnswerScorer as _, GoalSpec, GoalVerifier as _, InterfaceError, PromptTemplates, Reasoner as _,
};
use navmem::landmark::LandmarkStore;
use navmem::sim::{Scene, SimConfig, Simulator};
use navmem::agent::episode_start_pose;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// One scripted HTTP exchange: response status plus raw body.
struct Exchange {
    status: u16,
    body: String,
}

/// Chat-completion body wrapping `content` the way the endpoint would.
fn chat_body(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

struct ScriptServer {
    base_url: String,
    hits: Arc<AtomicUsize>,
}

/// Serves the scripted exchanges one connection at a time, then parks. The
/// serving thread is deliberately detached: a script left unconsumed (the
/// fatal-abort case) would otherwise block the test on join.
fn start_server(script: Vec<Exchange>) -> ScriptServer {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let base_url = format!("http://{}", listener.local_addr().expect("local addr"));
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for exchange in script {
            let Ok((mut stream, _)) = listener.accept() else { return };
            counter.fetch_add(1, Ordering::SeqCst);
            drain_request(&mut stream);
            let reason = match exchange.status {
                200 => "OK",
                400 => "Bad Request",
                500 => "Internal Server Error",
                s => panic!("unscripted status {s}"),
            };
            let response = format!(
                "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                exchange.status,
                reason,
                exchange.body.len(),
                exchange.body
            );
            let _ = stream.write_all(response.as_bytes());
            let _ = stream.flush();
        }
    });
    ScriptServer { base_url, hits }
}

/// Reads one HTTP request (headers plus content-length body) and discards it.
fn drain_request(stream: &mut std::net::TcpStream) {
    let mut reader = BufReader::new(stream);
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            break;
        }
        if let Some(rest) = trimmed.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = rest.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    let _ = reader.read_exact(&mut body);
}

fn endpoint(base_url: &str, max_attempts: u32) -> ChatEndpointConfig {
    ChatEndpointConfig {
        base_url: base_url.to_string(),
        model: "scripted".into(),
        api_key_env: None,
        timeout_secs: 5,
        max_attempts,
        initial_backoff_ms: 1,
        transcript_path: None,
    }
}

fn client(base_url: &str, max_attempts: u32) -> Arc<HttpChatClient> {
    Arc::new(
        HttpChatClient::new(endpoint(base_url, max_attempts), PromptTemplates::default())
            .expect("client builds"),
    )
}

/// A real observation to feed the verifier; its content is irrelevant to the
/// scripted reply.
fn any_observation() -> navmem::sim::SimObservation {
    let scene = std::sync::Arc::new(Scene::generate(3));
    let start = episode_start_pose(&scene, 3);
    let sim = Simulator::new(scene, SimConfig::default(), start, 3);
    sim.observe()
}

#[test]
fn verifier_parses_yes_no_contract() {
    let server = start_server(vec![Exchange {
        status: 200,
        body: chat_body("Success: yes\nneed forward: no"),
    }]);
    let verifier = RemoteVerifier { client: client(&server.base_url, 3) };
    use navmem::perception::GoalVerifier;
    let outcome = verifier
        .verify(&any_observation(), &GoalSpec::category("sofa"))
        .expect("verification succeeds");
    assert!(outcome.success);
    assert!(!outcome.need_forward);
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_replies_exhaust_retries_into_parse_error() {
    // Both attempts return 200 with a contract-violating reply; the call
    // must retry and then surface a parse error.
    let server = start_server(vec![
        Exchange { status: 200, body: chat_body("I cannot answer that.") },
        Exchange { status: 200, body: chat_body("Still no verdict here.") },
    ]);
    let verifier = RemoteVerifier { client: client(&server.base_url, 2) };
    let err = verifier
        .verify(&any_observation(), &GoalSpec::category("sofa"))
        .expect_err("contract violation must fail");
    assert!(matches!(err, InterfaceError::Parse(_)), "got {err:?}");
    assert_eq!(server.hits.load(Ordering::SeqCst), 2, "both attempts must hit the server");
}

#[test]
fn reasoner_parses_nav_loc_lines() {
    let server = start_server(vec![Exchange {
        status: 200,
        body: chat_body("Analysis: the lamp is by the desk.\nNav Loc 1: [1.0, 2.0, 0.5]"),
    }]);
    let reasoner = RemoteReasoner { client: client(&server.base_url, 3) };
    let store = LandmarkStore::new(1.0, 0.55);
    let candidates = reasoner.locate_landmarks("the lamp", &store, 3).expect("locate succeeds");
    assert_eq!(candidates.len(), 1);
    assert_eq!(candidates[0].position, [1.0, 2.0, 0.5]);
    assert_eq!(candidates[0].confidence, 1.0);
}

#[test]
fn server_error_retries_then_succeeds() {
    let server = start_server(vec![
        Exchange { status: 500, body: "{}".into() },
        Exchange { status: 200, body: chat_body("4") },
    ]);
    let scorer = RemoteScorer { client: client(&server.base_url, 3) };
    let score = scorer.score("what color is the sofa", "red", "red").expect("retry succeeds");
    assert_eq!(score, 4);
    assert_eq!(server.hits.load(Ordering::SeqCst), 2);
}

#[test]
fn client_error_aborts_without_retry() {
    // Script a second exchange that must never be consumed.
    let server = start_server(vec![
        Exchange { status: 400, body: "{}".into() },
        Exchange { status: 200, body: chat_body("Success: yes") },
    ]);
    let verifier = RemoteVerifier { client: client(&server.base_url, 3) };
    let err = verifier
        .verify(&any_observation(), &GoalSpec::category("sofa"))
        .expect_err("4xx must be fatal");
    assert!(matches!(err, InterfaceError::Fatal(_)), "got {err:?}");
    assert_eq!(server.hits.load(Ordering::SeqCst), 1, "fatal errors must not retry");
}

#[test]
fn reasoner_decomposes_waypoint_lines() {
    let server = start_server(vec![Exchange {
        status: 200,
        body: chat_body("Move to the {desk}\nMove to the {lamp}"),
    }]);
    let reasoner = RemoteReasoner { client: client(&server.base_url, 3) };
    let waypoints = reasoner
        .decompose_instruction("go to the desk then find the lamp")
        .expect("decomposition succeeds");
    assert_eq!(waypoints, vec!["desk".to_string(), "lamp".to_string()]);
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    // Bind-then-drop a listener so the port is closed; the client must
    // surface a transport failure after exhausting attempts.
    let port = {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        listener.local_addr().expect("addr").port()
    };
    let scorer = RemoteScorer { client: client(&format!("http://127.0.0.1:{port}"), 2) };
    let err = scorer.score("q", "a", "r").expect_err("closed port must fail");
    assert!(matches!(err, InterfaceError::Unavailable(_)), "got {err:?}");
}
