//! Minimal in-process HTTP stub for exercising the elicitation client and
//! campaigns without a network. Serves scripted or request-dependent JSON
//! responses over a loopback listener.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

type Responder = dyn Fn(&str, usize) -> (u16, String) + Send + Sync;

/// A scripted chat-completion endpoint on 127.0.0.1.
pub struct StubServer {
    addr: String,
    requests: Arc<AtomicUsize>,
    shutdown: Arc<AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

/// Wrap a completion text in the OpenAI-style body shape used by the default
/// endpoint config (`choices.0.message.content`).
pub fn completion_body(text: &str) -> String {
    serde_json::json!({ "choices": [{ "message": { "content": text } }] }).to_string()
}

impl StubServer {
    /// Start a server whose `respond` closure sees the raw request body and a
    /// zero-based request counter, and returns (status, body).
    pub fn start(respond: Box<Responder>) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let shutdown = Arc::new(AtomicBool::new(false));
        let handle = {
            let requests = Arc::clone(&requests);
            let shutdown = Arc::clone(&shutdown);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let count = requests.fetch_add(1, Ordering::SeqCst);
                    handle_connection(stream, &respond, count);
                }
            })
        };
        StubServer {
            addr,
            requests,
            shutdown,
            handle: Some(handle),
        }
    }

    /// Fixed-script variant: one (status, completion text) per request, the
    /// last entry repeating.
    pub fn with_script(script: Vec<(u16, String)>) -> StubServer {
        StubServer::start(Box::new(move |_body, count| {
            let (status, text) = script
                .get(count)
                .or_else(|| script.last())
                .cloned()
                .unwrap();
            (status, completion_body(&text))
        }))
    }

    pub fn url(&self) -> String {
        self.addr.clone()
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // unblock the accept loop
        let _ = TcpStream::connect(self.addr.trim_start_matches("http://"));
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(mut stream: TcpStream, respond: &Responder, count: usize) {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end;
    loop {
        match stream.read(&mut chunk) {
            Ok(0) => return,
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                if let Some(pos) = find_header_end(&buf) {
                    header_end = pos;
                    break;
                }
            }
            Err(_) => return,
        }
    }
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length: usize = headers
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse().ok())?
        })
        .unwrap_or(0);
    let mut body = buf[header_end + 4..].to_vec();
    while body.len() < content_length {
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => body.extend_from_slice(&chunk[..n]),
            Err(_) => return,
        }
    }
    let body = String::from_utf8_lossy(&body).to_string();
    let (status, response_body) = respond(&body, count);
    let reason = match status {
        200 => "OK",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        _ => "Status",
    };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{response_body}",
        response_body.len()
    );
    let _ = stream.write_all(response.as_bytes());
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}
