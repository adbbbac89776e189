//! In-process HTTP test double for the chat-completion protocol.
//!
//! A [`MockServer`] binds a loopback listener, parses each request just far
//! enough to hand the body to a caller-supplied responder, and tracks hit and
//! concurrency counts. One connection per request; responses close the
//! connection.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::thread::JoinHandle;
use std::time::Duration;

/// One request as the server saw it.
#[derive(Debug, Clone)]
pub struct ReceivedRequest {
    /// 0-based arrival order.
    pub hit: usize,
    pub body: String,
}

#[derive(Debug, Clone)]
pub struct MockResponse {
    pub status: u16,
    pub body: String,
    /// Held before responding; lets tests force overlapping requests.
    pub delay: Duration,
}

impl MockResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        Self { status: 200, body: body.into(), delay: Duration::ZERO }
    }

    pub fn status(status: u16) -> Self {
        Self { status, body: String::new(), delay: Duration::ZERO }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

/// Well-formed chat-completion response body.
pub fn chat_body(
    text: &str,
    token_count: u32,
    finish_reason: &str,
    logprobs: Option<&[f64]>,
) -> String {
    let lp = match logprobs {
        Some(values) => {
            let items: Vec<String> =
                values.iter().map(|v| format!("{{\"logprob\":{v}}}")).collect();
            format!(",\"logprobs\":{{\"content\":[{}]}}", items.join(","))
        }
        None => String::new(),
    };
    format!(
        "{{\"choices\":[{{\"message\":{{\"content\":{}}},\"finish_reason\":\"{}\"{}}}],\"usage\":{{\"completion_tokens\":{}}}}}",
        serde_json::to_string(text).expect("strings always serialize"),
        finish_reason,
        lp,
        token_count
    )
}

/// Pulls `messages[0].content` back out of a request body; panics on
/// malformed input because test doubles should fail loudly.
pub fn first_message_content(body: &str) -> String {
    let v: serde_json::Value = serde_json::from_str(body).expect("request body is JSON");
    v["messages"][0]["content"].as_str().expect("content is a string").to_string()
}

type Responder = dyn FnMut(&ReceivedRequest) -> MockResponse + Send;

pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    hits: Arc<AtomicUsize>,
    in_flight: Arc<AtomicUsize>,
    peak_in_flight: Arc<AtomicUsize>,
    accept_loop: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Starts the server on an ephemeral loopback port. The responder runs
    /// under a lock, but delays are honored after it returns, so concurrent
    /// requests still overlap.
    pub fn start<F>(responder: F) -> Self
    where
        F: FnMut(&ReceivedRequest) -> MockResponse + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("loopback bind");
        let addr = listener.local_addr().expect("bound socket has an address");
        let stop = Arc::new(AtomicBool::new(false));
        let hits = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let peak_in_flight = Arc::new(AtomicUsize::new(0));
        let responder: Arc<std::sync::Mutex<Box<Responder>>> =
            Arc::new(std::sync::Mutex::new(Box::new(responder)));

        let accept_loop = {
            let stop = Arc::clone(&stop);
            let hits = Arc::clone(&hits);
            let in_flight = Arc::clone(&in_flight);
            let peak = Arc::clone(&peak_in_flight);
            std::thread::spawn(move || {
                let mut workers = Vec::new();
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { break };
                    let hit = hits.fetch_add(1, Ordering::SeqCst);
                    let current = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(current, Ordering::SeqCst);
                    let responder = Arc::clone(&responder);
                    let in_flight = Arc::clone(&in_flight);
                    workers.push(std::thread::spawn(move || {
                        serve_connection(stream, hit, &responder);
                        in_flight.fetch_sub(1, Ordering::SeqCst);
                    }));
                }
                for w in workers {
                    let _ = w.join();
                }
            })
        };

        Self { addr, stop, hits, in_flight, peak_in_flight, accept_loop: Some(accept_loop) }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests accepted so far.
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneously open requests observed.
    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock accept() with one last connection.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_loop.take() {
            let _ = handle.join();
        }
        debug_assert_eq!(self.in_flight.load(Ordering::SeqCst), 0);
    }
}

fn serve_connection(
    mut stream: TcpStream,
    hit: usize,
    responder: &std::sync::Mutex<Box<Responder>>,
) {
    let Some(body) = read_request(&mut stream) else { return };
    let request = ReceivedRequest { hit, body };
    let response = {
        let mut r = responder.lock().expect("responder lock");
        r(&request)
    };
    if !response.delay.is_zero() {
        std::thread::sleep(response.delay);
    }
    let reason = match response.status {
        200 => "OK",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let payload = format!(
        "HTTP/1.1 {} {}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
        response.status,
        reason,
        response.body.len(),
        response.body
    );
    let _ = stream.write_all(payload.as_bytes());
    let _ = stream.flush();
}

/// Minimal HTTP/1.1 request reader: headers, then content-length bytes.
/// Returns None on anything that is not a well-formed request (including the
/// empty wake-up connection sent on shutdown).
fn read_request(stream: &mut TcpStream) -> Option<String> {
    stream.set_read_timeout(Some(Duration::from_secs(10))).ok()?;
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    if line.trim().is_empty() {
        return None;
    }
    let mut content_length = 0usize;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header).ok()?;
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':')
            && name.eq_ignore_ascii_case("content-length")
        {
            content_length = value.trim().parse().ok()?;
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).ok()?;
    String::from_utf8(body).ok()
}
