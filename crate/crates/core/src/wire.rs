//! Newline-delimited JSON messages shared by the searcher, broker and
//! frontend servers.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieveMode {
    /// Union of postings.
    #[default]
    Any,
    /// Intersection of postings.
    All,
}

/// Backend search request. `shards` is only read by the broker: when set it
/// restricts the fan-out to those configured shard ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub version: u16,
    pub qrep: Vec<f32>,
    pub terms: Vec<(u16, String)>,
    #[serde(default)]
    pub mode: RetrieveMode,
    pub max_candidates: usize,
    pub k: usize,
    pub w_sem: f32,
    pub w_term: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shards: Option<Vec<u32>>,
}

/// New state of one member. `vector` is the member-arm output; the searcher
/// compresses it with its forward-index scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberUpdate {
    pub uid: u64,
    #[serde(with = "crate::field_keys")]
    pub fields: BTreeMap<u16, Vec<String>>,
    pub vector: Vec<f32>,
}

/// Live update. All members owned by one shard become visible together in
/// a single snapshot swap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRequest {
    pub version: u16,
    pub members: Vec<MemberUpdate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSearchRequest {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub facets: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Search(SearchRequest),
    Update(UpdateRequest),
    UserSearch(UserSearchRequest),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub uid: u64,
    pub score: f32,
    pub semantic: f32,
    pub term_match: f32,
}

impl SearchHit {
    /// Score descending, then uid ascending.
    pub fn rank_cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.uid.cmp(&other.uid))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchTiming {
    pub retrieve_us: u64,
    pub score_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitsResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shard_id: Option<u32>,
    pub hits: Vec<SearchHit>,
    pub timing: SearchTiming,
    #[serde(default)]
    pub degraded: Vec<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTrace {
    pub parse_us: u64,
    pub qarm_us: u64,
    pub backend_us: u64,
    pub total_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsResponse {
    pub hits: Vec<SearchHit>,
    pub trace: RequestTrace,
    #[serde(default)]
    pub degraded: Vec<u32>,
    /// Query tokens the embedding dictionary could not resolve.
    #[serde(default)]
    pub misses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Hits(HitsResponse),
    Results(ResultsResponse),
    /// Number of members applied and the shards that applied them.
    Updated { count: usize, shards: Vec<u32> },
    Error(ErrorResponse),
}

impl Response {
    pub fn error(e: &Error) -> Self {
        Response::Error(ErrorResponse {
            code: e.code().to_string(),
            message: e.to_string(),
        })
    }

    /// The error carried by an error response, or a backend error describing
    /// an unexpected response type.
    pub fn into_error(self) -> Error {
        match self {
            Response::Error(e) => e.into(),
            other => Error::Backend(format!("unexpected response {other:?}")),
        }
    }
}

impl From<ErrorResponse> for Error {
    /// Version errors survive the hop so callers can match on them.
    fn from(e: ErrorResponse) -> Self {
        if e.code == "version" {
            if let Some((expected, found)) = parse_version_message(&e.message) {
                return Error::Version { expected, found };
            }
        }
        Error::Backend(format!("{}: {}", e.code, e.message))
    }
}

fn parse_version_message(msg: &str) -> Option<(u16, u16)> {
    let rest = msg.strip_prefix("version mismatch: expected ")?;
    let (expected, found) = rest.split_once(", found ")?;
    Some((expected.trim().parse().ok()?, found.trim().parse().ok()?))
}

/// A persistent newline-JSON client connection.
pub struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    line: String,
}

impl Connection {
    pub fn connect(addr: &str, timeout: Option<Duration>) -> Result<Self> {
        let stream = match timeout {
            Some(t) => {
                let sock = addr
                    .to_socket_addrs()?
                    .next()
                    .ok_or_else(|| Error::Config(format!("cannot resolve {addr}")))?;
                TcpStream::connect_timeout(&sock, t)?
            }
            None => TcpStream::connect(addr)?,
        };
        stream.set_nodelay(true)?;
        stream.set_read_timeout(timeout)?;
        stream.set_write_timeout(timeout)?;
        Ok(Connection {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            line: String::new(),
        })
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> Result<()> {
        self.writer.set_read_timeout(timeout)?;
        self.writer.set_write_timeout(timeout)?;
        Ok(())
    }

    pub fn call(&mut self, req: &Request) -> Result<Response> {
        let mut buf = serde_json::to_vec(req)?;
        buf.push(b'\n');
        self.writer.write_all(&buf)?;
        self.line.clear();
        if self.reader.read_line(&mut self.line)? == 0 {
            return Err(Error::Backend("connection closed by peer".into()));
        }
        Ok(serde_json::from_str(&self.line)?)
    }
}

/// Client for one endpoint keeping a small pool of persistent connections.
/// A connection that errors or times out is dropped rather than reused.
pub struct Client {
    addr: String,
    pool: Mutex<Vec<Connection>>,
}

impl Client {
    pub fn new(addr: impl Into<String>) -> Self {
        Client {
            addr: addr.into(),
            pool: Mutex::new(Vec::new()),
        }
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn call(&self, req: &Request, timeout: Duration) -> Result<Response> {
        let pooled = self.pool.lock().unwrap_or_else(|p| p.into_inner()).pop();
        let mut conn = match pooled {
            Some(c) => {
                c.set_timeout(Some(timeout))?;
                c
            }
            None => Connection::connect(&self.addr, Some(timeout))?,
        };
        let resp = conn.call(req)?;
        self.pool.lock().unwrap_or_else(|p| p.into_inner()).push(conn);
        Ok(resp)
    }

    pub fn search(&self, req: &SearchRequest, timeout: Duration) -> Result<HitsResponse> {
        match self.call(&Request::Search(req.clone()), timeout)? {
            Response::Hits(h) => Ok(h),
            other => Err(other.into_error()),
        }
    }

    pub fn update(&self, req: &UpdateRequest, timeout: Duration) -> Result<Vec<u32>> {
        match self.call(&Request::Update(req.clone()), timeout)? {
            Response::Updated { shards, .. } => Ok(shards),
            other => Err(other.into_error()),
        }
    }
}

/// Serve newline-JSON requests on `stream` until the peer disconnects.
pub(crate) fn serve_connection(stream: TcpStream, handle: impl Fn(Request) -> Response) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(req) => handle(req),
            Err(e) => Response::error(&Error::input(format!("bad request: {e}"))),
        };
        let mut out = serde_json::to_vec(&resp)?;
        out.push(b'\n');
        writer.write_all(&out)?;
    }
}

/// Accept loop: one thread per connection.
pub(crate) fn serve_forever<H>(listener: std::net::TcpListener, handler: std::sync::Arc<H>) -> Result<()>
where
    H: Fn(Request) -> Response + Send + Sync + 'static,
{
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let h = handler.clone();
        std::thread::spawn(move || {
            if let Err(e) = serve_connection(stream, |r| h(r)) {
                log::debug!("connection ended: {e}");
            }
        });
    }
    Ok(())
}
