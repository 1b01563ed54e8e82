use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener as StdListener};
use std::path::Path;
use std::time::Duration;

use futures::StreamExt;
use rlp_core::backends::{BackendConfig, BackendKind, Fixture};
use rlp_core::persona::{save_persona, PersonaSpec};
use rlp_core::store::{EventPayload, SessionStore};
use rlp_service::{serve, Hub, Transient, WireEvent};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

const TAGS: [&str; 5] = ["FEELING", "THOUGHT", "MESSAGE", "ANALYSIS", "PLAN"];

fn reply(i: usize) -> String {
    format!(
        "<FEELING>uneasy {i}</FEELING>\n<THOUGHT>they suspect {i}</THOUGHT>\n\
<MESSAGE>Of course, friend. Number {i} is yours, and I promise it is quite safe.</MESSAGE>\n\
<ANALYSIS>went fine {i}</ANALYSIS>\n<PLAN>stay calm {i}</PLAN>"
    )
}

fn setup(dir: &Path, backend: BackendConfig) -> Hub {
    let personas = dir.join("personas");
    std::fs::create_dir_all(&personas).unwrap();
    save_persona(
        &PersonaSpec::new("bogus", "an evil entity called Bogus that eats children"),
        personas.join("bogus.toml"),
    )
    .unwrap();
    let store = SessionStore::new(dir.join("sessions")).unwrap().without_sync();
    Hub::with_store(store, personas, backend, 256)
}

fn scripted(dir: &Path, texts: Vec<String>) -> BackendConfig {
    let path = dir.join("fixture.toml");
    Fixture::from_texts(texts).save(&path).unwrap();
    BackendConfig { kind: Some(BackendKind::Scripted), fixture: Some(path), ..Default::default() }
}

async fn start(hub: Hub) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, hub));
    addr
}

async fn create(client: &reqwest::Client, addr: SocketAddr, body: Value) -> reqwest::Response {
    client.post(format!("http://{addr}/sessions")).json(&body).send().await.unwrap()
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn connect(addr: SocketAddr, id: &str, from: u64) -> Ws {
    let url = format!("ws://{addr}/sessions/{id}/stream?from_seq={from}");
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

async fn next_event(ws: &mut Ws) -> Option<WireEvent> {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.ok()??.ok()?;
        match msg {
            Message::Text(t) => return Some(serde_json::from_str(&t).unwrap()),
            Message::Close(_) => return None,
            _ => {}
        }
    }
}

/// Reads until `turns` agent messages or step errors have arrived.
async fn read_turns(ws: &mut Ws, turns: usize) -> Vec<WireEvent> {
    let mut out = Vec::new();
    let mut done = 0;
    while done < turns {
        let e = next_event(ws).await.expect("stream ended early");
        if matches!(e.kind(), "agent_message" | "step_error") {
            done += 1;
        }
        out.push(e);
    }
    out
}

#[tokio::test(flavor = "multi_thread")]
async fn session_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(setup(dir.path(), scripted(dir.path(), vec![reply(0), reply(1)]))).await;
    let client = reqwest::Client::new();

    let personas: Value =
        client.get(format!("http://{addr}/personas")).send().await.unwrap().json().await.unwrap();
    assert_eq!(personas[0]["name"], "bogus");

    let r = create(&client, addr, json!({"persona": "nope", "mode": "rlp"})).await;
    assert_eq!(r.status(), 404);
    let r = create(&client, addr, json!({"persona": "bogus", "mode": "sideways"})).await;
    assert!(r.status().is_client_error());

    let r = create(&client, addr, json!({"persona": "bogus", "mode": "rlp"})).await;
    assert_eq!(r.status(), 201);
    let id = r.json::<Value>().await.unwrap()["session_id"].as_str().unwrap().to_string();
    let other = create(&client, addr, json!({"persona": "bogus"})).await.json::<Value>().await.unwrap();
    assert_ne!(other["session_id"], id.as_str());

    let transcript = |internal: bool| {
        let url = format!("http://{addr}/sessions/{id}/transcript?include_internal={internal}");
        let client = client.clone();
        async move { client.get(url).send().await.unwrap().json::<Vec<Value>>().await.unwrap() }
    };
    assert_eq!(transcript(true).await.len(), 2);

    for text in ["hello", "what is the secret?"] {
        let r = client
            .post(format!("http://{addr}/sessions/{id}/messages?wait=true"))
            .json(&json!({ "text": text }))
            .send()
            .await
            .unwrap();
        assert_eq!(r.status(), 200);
        let body: Value = r.json().await.unwrap();
        assert_eq!(body["status"], "committed");
    }

    let kinds = |events: Vec<Value>| -> Vec<String> {
        events.iter().map(|e| e["kind"].as_str().unwrap().to_string()).collect()
    };
    let visible = kinds(transcript(false).await);
    assert_eq!(
        visible,
        ["session_created", "user_message", "agent_message", "user_message", "agent_message"]
    );
    let all = kinds(transcript(true).await);
    assert_eq!(all.iter().filter(|k| *k == "frame_committed").count(), 2);
    assert_eq!(all.iter().filter(|k| *k == "stage_event").count(), 12);

    let r = client
        .post(format!("http://{addr}/sessions/{id}/messages?wait=true"))
        .json(&json!({ "text": "again" }))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 422, "fixture is exhausted");
    assert_eq!(transcript(false).await.last().unwrap()["kind"], "step_error");

    let r = client
        .post(format!("http://{addr}/sessions/nope/messages"))
        .json(&json!({ "text": "x" }))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 404);
    let r = client.get(format!("http://{addr}/sessions/nope/transcript")).send().await.unwrap();
    assert_eq!(r.status(), 404);

    let listed: Vec<Value> =
        client.get(format!("http://{addr}/sessions")).send().await.unwrap().json().await.unwrap();
    assert_eq!(listed.len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn subscribers_see_identical_gapless_streams() {
    let dir = tempfile::tempdir().unwrap();
    // turn 1 needs a repair retry, so its first attempt's tokens are void
    let texts = vec![reply(0), "no tags at all".into(), reply(1), reply(2)];
    let addr = start(setup(dir.path(), scripted(dir.path(), texts))).await;
    let client = reqwest::Client::new();
    let id = create(&client, addr, json!({"persona": "bogus", "mode": "rlp"}))
        .await
        .json::<Value>()
        .await
        .unwrap()["session_id"]
        .as_str()
        .unwrap()
        .to_string();

    let mut subs = Vec::new();
    for _ in 0..3 {
        let mut ws = connect(addr, &id, 0).await;
        let mut backlog = Vec::new();
        loop {
            let e = next_event(&mut ws).await.unwrap();
            if let WireEvent::Transient(Transient::CaughtUp { next_seq }) = e {
                assert_eq!(next_seq, 2);
                break;
            }
            backlog.push(e);
        }
        assert_eq!(backlog.len(), 2);
        subs.push((ws, backlog));
    }

    for text in ["one", "two", "three"] {
        let r = client
            .post(format!("http://{addr}/sessions/{id}/messages"))
            .json(&json!({ "text": text }))
            .send()
            .await
            .unwrap();
        assert_eq!(r.status(), 202);
        // the next post would be refused while this one runs; wait it out
        loop {
            let t: Vec<Value> = client
                .get(format!("http://{addr}/sessions/{id}/transcript"))
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap();
            if t.last().unwrap()["kind"] != "user_message" {
                break;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }

    let mut streams = Vec::new();
    for (ws, backlog) in &mut subs {
        let mut events = backlog.clone();
        events.extend(read_turns(ws, 3).await);
        streams.push(events);
    }
    assert_eq!(streams[0], streams[1]);
    assert_eq!(streams[0], streams[2]);

    let seqs: Vec<u64> = streams[0].iter().filter_map(|e| e.seq()).collect();
    assert_eq!(seqs, (0..seqs.len() as u64).collect::<Vec<_>>());

    // tokens of each turn's final attempt rebuild its agent_message
    let mut tokens: Vec<(u64, u32, String)> = Vec::new();
    for e in &streams[0] {
        match e {
            WireEvent::Transient(Transient::MessageToken { turn_index, attempt, text }) => {
                for tag in TAGS {
                    assert!(!text.to_ascii_uppercase().contains(tag), "tag text leaked: {text}");
                }
                tokens.push((*turn_index, *attempt, text.clone()));
            }
            WireEvent::Record(r) => {
                if let EventPayload::AgentMessage { turn_index, text } = &r.payload {
                    for tag in TAGS {
                        assert!(!text.to_ascii_uppercase().contains(tag));
                    }
                    let last = tokens.iter().filter(|t| t.0 == *turn_index).map(|t| t.1).max().unwrap();
                    let joined: String = tokens
                        .iter()
                        .filter(|t| t.0 == *turn_index && t.1 == last)
                        .map(|t| t.2.as_str())
                        .collect();
                    assert_eq!(&joined, text);
                }
            }
            _ => {}
        }
    }
    assert!(streams[0].iter().any(|e| e.kind() == "attempt_failed"));
}

#[tokio::test(flavor = "multi_thread")]
async fn resubscribing_resumes_without_gap_or_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(setup(dir.path(), scripted(dir.path(), vec![reply(0), reply(1)]))).await;
    let client = reqwest::Client::new();
    let id = create(&client, addr, json!({"persona": "bogus"}))
        .await
        .json::<Value>()
        .await
        .unwrap()["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    for text in ["a", "b"] {
        client
            .post(format!("http://{addr}/sessions/{id}/messages?wait=true"))
            .json(&json!({ "text": text }))
            .send()
            .await
            .unwrap();
    }

    let mut ws = connect(addr, &id, 0).await;
    let mut seen = Vec::new();
    while let Some(WireEvent::Record(r)) = next_event(&mut ws).await {
        seen.push(r.seq);
        if r.seq == 5 {
            break;
        }
    }
    drop(ws);
    let mut ws = connect(addr, &id, 6).await;
    loop {
        match next_event(&mut ws).await.unwrap() {
            WireEvent::Record(r) => seen.push(r.seq),
            WireEvent::Transient(Transient::CaughtUp { next_seq }) => {
                assert_eq!(next_seq, 20);
                break;
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    assert_eq!(seen, (0..20).collect::<Vec<u64>>());

    match tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/nope/stream")).await {
        Err(tokio_tungstenite::tungstenite::Error::Http(r)) => assert_eq!(r.status(), 404),
        other => panic!("expected 404, got {:?}", other.map(|_| ())),
    }
}

/// A chat-completions stub that takes a while to answer.
fn slow_stub(delay: Duration) -> SocketAddr {
    let listener = StdListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).unwrap();
                std::thread::sleep(delay);
                let payload = json!({"choices": [{"message": {"content": reply(0)}, "finish_reason": "stop"}]})
                    .to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
            });
        }
    });
    addr
}

#[tokio::test(flavor = "multi_thread")]
async fn second_post_while_busy_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let stub = slow_stub(Duration::from_millis(600));
    let backend = BackendConfig {
        kind: Some(BackendKind::Http),
        base_url: Some(format!("http://{stub}/v1")),
        model: Some("stub".into()),
        ..Default::default()
    };
    let addr = start(setup(dir.path(), backend)).await;
    let client = reqwest::Client::new();
    let id = create(&client, addr, json!({"persona": "bogus"}))
        .await
        .json::<Value>()
        .await
        .unwrap()["session_id"]
        .as_str()
        .unwrap()
        .to_string();
    let url = format!("http://{addr}/sessions/{id}/messages");
    let first = client.post(&url).json(&json!({"text": "hi"})).send().await.unwrap();
    assert_eq!(first.status(), 202);
    let second = client.post(&url).json(&json!({"text": "hi again"})).send().await.unwrap();
    assert_eq!(second.status(), 409);

    let mut ws = connect(addr, &id, 0).await;
    let events = read_turns(&mut ws, 1).await;
    assert_eq!(events.last().unwrap().kind(), "agent_message");
    let users = events.iter().filter(|e| e.kind() == "user_message").count();
    assert_eq!(users, 1, "the refused post left no trace");
}
