//! Helpers shared across integration test targets: synthetic corpora, a
//! canned-reply HTTP server, and directory snapshots for byte-identity
//! checks.

#![allow(dead_code)]

pub mod judge_replies;
pub mod oracles;
pub mod prompt_cases;
pub mod variation_checks;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::thread::JoinHandle;

use aspect_bench::corpus::{save_corpus, Corpus, Triplet};

pub fn triplet(id: &str, title: &str, document: &str, aspect: &str, summary: &str) -> Triplet {
    Triplet {
        id: id.to_string(),
        title: title.to_string(),
        document: document.to_string(),
        aspect: aspect.to_string(),
        summary: summary.to_string(),
        domain: None,
        extra: BTreeMap::new(),
    }
}

/// Synthetic corpus: four-sentence documents, aspects cycling through four
/// labels, reference = the first sentence.
pub fn synth_corpus(n: usize) -> Corpus {
    const ASPECTS: [&str; 4] = ["History", "Career", "Death", "Production"];
    let triplets = (0..n)
        .map(|i| {
            let aspect = ASPECTS[i % ASPECTS.len()];
            triplet(
                &format!("t{i:03}"),
                &format!("Title {i}"),
                &format!(
                    "Opening {aspect} fact number {i}. Second filler sentence {i}. \
                     Third filler sentence {i}. Fourth filler sentence {i}."
                ),
                aspect,
                &format!("Opening {aspect} fact number {i}."),
            )
        })
        .collect();
    Corpus {
        triplets,
        source_path: None,
    }
}

pub fn write_corpus(corpus: &Corpus, path: &Path) {
    save_corpus(corpus, path).expect("corpus writes");
}

/// Ten-sentence documents whose 5th, 7th, and 9th sentences carry the
/// aspect token; the reference summary is exactly those three sentences.
/// Lead-3 therefore misses every reference sentence, while an extractor
/// that finds aspect-bearing sentences reproduces the reference verbatim.
pub fn aspect_sentence_corpus(n: usize) -> Vec<Triplet> {
    const ASPECTS: [&str; 3] = ["zephyr", "quasar", "obelisk"];
    (0..n)
        .map(|i| {
            let aspect = ASPECTS[i % ASPECTS.len()];
            let mut sentences = Vec::new();
            for s in 0..10usize {
                if s == 4 || s == 6 || s == 8 {
                    sentences.push(format!(
                        "The {aspect} section explains {aspect} behavior in part {s} of item {i}."
                    ));
                } else {
                    sentences.push(format!(
                        "Common filler material occupies slot {s} of item {i}."
                    ));
                }
            }
            let reference = format!("{} {} {}", sentences[4], sentences[6], sentences[8]);
            triplet(
                &format!("d{i:03}"),
                &format!("Entry {i}"),
                &sentences.join(" "),
                aspect,
                &reference,
            )
        })
        .collect()
}

/// Recursively reads every file under `dir`, keyed by relative path.
pub fn snapshot_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&current) else {
            continue;
        };
        for entry in entries {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path
                    .strip_prefix(dir)
                    .expect("path under root")
                    .to_string_lossy()
                    .into_owned();
                files.insert(key, std::fs::read(&path).expect("file reads"));
            }
        }
    }
    files
}

/// Asserts two directory snapshots are byte-identical, reporting the first
/// differing file readably.
pub fn assert_snapshots_equal(
    first: &BTreeMap<String, Vec<u8>>,
    second: &BTreeMap<String, Vec<u8>>,
) {
    assert_eq!(
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>(),
        "file sets differ"
    );
    for (name, bytes) in first {
        assert_eq!(
            String::from_utf8_lossy(bytes),
            String::from_utf8_lossy(&second[name]),
            "file {name} differs"
        );
    }
}

/// One HTTP request as the mock server saw it: headers lowercased.
#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub headers: BTreeMap<String, String>,
    pub body: String,
}

impl RecordedRequest {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).expect("recorded body is JSON")
    }
}

/// Single-threaded canned-reply HTTP server: serves exactly one reply per
/// entry, in order, then stops. `finish()` joins it and returns every
/// request it received.
pub struct MockServer {
    pub addr: SocketAddr,
    handle: JoinHandle<Vec<RecordedRequest>>,
}

impl MockServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn finish(self) -> Vec<RecordedRequest> {
        self.handle.join().expect("mock server thread")
    }
}

pub fn spawn_http(replies: Vec<(u16, String)>) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind localhost");
    let addr = listener.local_addr().expect("local addr");
    let handle = std::thread::spawn(move || {
        let mut recorded = Vec::new();
        for (status, body) in replies {
            let (stream, _) = listener.accept().expect("accept");
            let mut reader = BufReader::new(stream);

            let mut request_line = String::new();
            reader.read_line(&mut request_line).expect("request line");
            let mut parts = request_line.split_whitespace();
            let method = parts.next().unwrap_or_default().to_string();
            let path = parts.next().unwrap_or_default().to_string();

            let mut headers = BTreeMap::new();
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).expect("header line");
                let line = line.trim();
                if line.is_empty() {
                    break;
                }
                if let Some((name, value)) = line.split_once(':') {
                    let name = name.trim().to_ascii_lowercase();
                    let value = value.trim().to_string();
                    if name == "content-length" {
                        content_length = value.parse().expect("content length");
                    }
                    headers.insert(name, value);
                }
            }
            let mut payload = vec![0u8; content_length];
            reader.read_exact(&mut payload).expect("body");
            recorded.push(RecordedRequest {
                method,
                path,
                headers,
                body: String::from_utf8_lossy(&payload).into_owned(),
            });

            let reply = format!(
                "HTTP/1.1 {status} Status\r\ncontent-type: application/json\r\n\
                 content-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            reader
                .into_inner()
                .write_all(reply.as_bytes())
                .expect("write reply");
        }
        recorded
    });
    MockServer { addr, handle }
}

/// A successful chat-completions reply wrapping `content`.
pub fn chat_reply(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

/// Writes a minimal TOML run config into `dir` and returns its path.
/// `corpus` and `out` are paths relative to `dir`.
pub fn write_config_toml(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("aspect-bench.toml");
    std::fs::write(&path, body).expect("config writes");
    path
}
