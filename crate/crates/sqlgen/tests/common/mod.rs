//! Test doubles shared by the integration and acceptance tests: scripted
//! chat models, a minimal chat-completions HTTP server, and SQLite files
//! for the fixture databases.
#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, Mutex};

use dbroute::synth::Instance;
use sqlgen::llm::{approximate_tokens, ChatMessage, ChatModel, Completion, LlmError, Usage};

fn question_of(prompt: &str) -> Option<&str> {
    prompt
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("### ").or_else(|| l.strip_prefix("Question: ")))
}

/// Replies with the gold SQL of the question found in the prompt, minus
/// the primed `SELECT`; selection turns get `[1]`.
pub struct GoldEchoModel {
    pub answers: HashMap<String, String>,
}

impl GoldEchoModel {
    pub fn new(dataset: &[Instance]) -> Self {
        Self {
            answers: dataset
                .iter()
                .map(|i| (i.question.clone(), i.sql.clone().unwrap_or_default()))
                .collect(),
        }
    }
}

impl ChatModel for GoldEchoModel {
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        let prompt = &messages.last().expect("message").content;
        let text = if prompt.contains("[id] format") {
            "[1]".to_string()
        } else {
            let q = question_of(prompt).unwrap_or_default();
            let sql = self.answers.get(q).cloned().unwrap_or_default();
            sql.strip_prefix("SELECT ").map(str::to_string).unwrap_or(sql)
        };
        Ok(Completion {
            usage: Usage {
                prompt_tokens: approximate_tokens(prompt),
                completion_tokens: approximate_tokens(&text),
            },
            text,
        })
    }
}

pub struct EmptyModel;

impl ChatModel for EmptyModel {
    fn complete(&self, _messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        Ok(Completion {
            text: String::new(),
            usage: Usage::default(),
        })
    }
}

/// Chat-completions server answering each connection with the next
/// scripted `(status, body)`; the last one repeats. Returns the base URL
/// and the request bodies received.
pub fn chat_server(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    std::thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0; length];
            let _ = reader.read_exact(&mut body);
            log.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());
            let (status, reply) = &script[i.min(script.len() - 1)];
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    (url, seen)
}

pub fn chat_reply(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 3}
    })
    .to_string()
}

/// `world` and `car` databases with a few rows each, in the
/// `<dir>/<db>/<db>.sqlite` layout.
pub fn fixture_databases(dir: &Path) {
    let create = |db: &str, sql: &str| {
        std::fs::create_dir_all(dir.join(db)).unwrap();
        let conn = rusqlite::Connection::open(dir.join(db).join(format!("{db}.sqlite"))).unwrap();
        conn.execute_batch(sql).unwrap();
    };
    create(
        "world",
        "CREATE TABLE country(Code TEXT PRIMARY KEY, Name TEXT, Continent TEXT, Region TEXT);
         CREATE TABLE countrylanguage(CountryCode TEXT, Language TEXT);
         INSERT INTO country VALUES ('CHN','China','Asia','Eastern Asia'), ('IND','India','Asia','Southern Asia'),
                                    ('FRA','France','Europe','Western Europe');
         INSERT INTO countrylanguage VALUES ('CHN','Chinese'), ('IND','Hindi'), ('IND','English'), ('FRA','French'),
                                            ('CHN','English');",
    );
    create(
        "car",
        "CREATE TABLE continents(ContId INTEGER, Continent TEXT);
         CREATE TABLE countries(CountryId INTEGER, CountryName TEXT, Continent INTEGER);
         CREATE TABLE car_makers(Id INTEGER, Maker TEXT, FullName TEXT, Country TEXT);
         INSERT INTO continents VALUES (1,'asia'), (2,'europe');
         INSERT INTO countries VALUES (1,'japan',1), (2,'germany',2);
         INSERT INTO car_makers VALUES (1,'toyota','Toyota','1'), (2,'bmw','BMW','2');",
    );
}

fn instance(question: &str, database: &str, tables: &[&str], sql: &str) -> Instance {
    Instance {
        question: question.into(),
        database: database.into(),
        tables: tables.iter().map(|t| t.to_string()).collect(),
        seed: None,
        questioner: None,
        sql: Some(sql.into()),
    }
}

/// Questions with gold SQL over the fixture databases.
pub fn fixture_dataset() -> Vec<Instance> {
    vec![
        instance(
            "Which language is the most popular on the Asian continent?",
            "world",
            &["country", "countrylanguage"],
            "SELECT T2.Language FROM country AS T1 JOIN countrylanguage AS T2 ON T1.Code = T2.CountryCode WHERE T1.Continent = 'Asia' GROUP BY T2.Language ORDER BY count(*) DESC LIMIT 1",
        ),
        instance("How many countries are in Europe?", "world", &["country"], "SELECT count(*) FROM country WHERE Continent = 'Europe'"),
        instance("List the full names of all car makers.", "car", &["car_makers"], "SELECT FullName FROM car_makers"),
        instance(
            "Which countries are on the asia continent?",
            "car",
            &["continents", "countries"],
            "SELECT T2.CountryName FROM continents AS T1 JOIN countries AS T2 ON T1.ContId = T2.Continent WHERE T1.Continent = 'asia'",
        ),
    ]
}
