//! Chat client against a local scripted server.

mod common;

use common::{chat_reply, chat_server};
use sqlgen::llm::{ChatConfig, ChatMessage, ChatModel, HttpChatModel, LlmError};

fn config(endpoint: String) -> ChatConfig {
    ChatConfig {
        endpoint,
        backoff_ms: 1,
        ..ChatConfig::default()
    }
}

#[test]
fn reply_and_usage() {
    let (url, seen) = chat_server(vec![(200, chat_reply("SELECT 1"))]);
    let model = HttpChatModel::new(config(url)).unwrap();
    let c = model.complete(&[ChatMessage::user("hi")]).unwrap();
    assert_eq!(c.text, "SELECT 1");
    assert!(c.usage.prompt_tokens > 0 && c.usage.completion_tokens > 0);
    let body: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["messages"][0]["content"], "hi");
}

#[test]
fn temperature_override_is_sent() {
    let (url, seen) = chat_server(vec![(200, chat_reply("SELECT 1"))]);
    let model = HttpChatModel::new(ChatConfig {
        temperature: 0.7,
        ..config(url)
    })
    .unwrap();
    model.complete(&[ChatMessage::user("hi")]).unwrap();
    let body: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(body["temperature"], 0.7);
}

#[test]
fn server_errors_are_retried() {
    let (url, seen) = chat_server(vec![(503, "{}".into()), (500, "{}".into()), (200, chat_reply("SELECT 2"))]);
    let model = HttpChatModel::new(config(url)).unwrap();
    assert_eq!(model.complete(&[ChatMessage::user("q")]).unwrap().text, "SELECT 2");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = chat_server(vec![(400, "{\"error\":\"bad\"}".into())]);
    let model = HttpChatModel::new(config(url)).unwrap();
    assert!(matches!(model.complete(&[ChatMessage::user("q")]), Err(LlmError::Rejected { status: 400, .. })));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_endpoint_gives_up_after_three_attempts() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let model = HttpChatModel::new(config(format!("http://127.0.0.1:{port}"))).unwrap();
    match model.complete(&[ChatMessage::user("q")]) {
        Err(LlmError::Exhausted { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
}
