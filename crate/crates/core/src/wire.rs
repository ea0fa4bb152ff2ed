//! Client for a remote forward model speaking newline-delimited JSON over
//! TCP or a child process's stdio.
//!
//! Requests `{"id":u64,"reactants":[...]}` are pipelined; responses
//! `{"id":u64,"product":string|null,"alpha":f64}` may come back in any order
//! and are matched by id. A batch goes out as one write.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use retrosmc_chem::canonical_smiles;

use crate::forward::{ForwardError, ForwardModel, Prediction, ReactantSet, EPSILON};

/// Environment variable holding the server address.
pub const SERVER_ENV: &str = "RETROSMC_MODEL_SERVER";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    /// Shell command whose stdin/stdout carry the protocol.
    Stdio(String),
}

impl Endpoint {
    /// `host:port` or `stdio:<command>`.
    pub fn parse(s: &str) -> Result<Self, ForwardError> {
        let s = s.trim();
        if let Some(cmd) = s.strip_prefix("stdio:") {
            if cmd.trim().is_empty() {
                return Err(ForwardError::Transport("empty stdio command".into()));
            }
            return Ok(Endpoint::Stdio(cmd.trim().to_string()));
        }
        match s.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => Ok(Endpoint::Tcp(s.to_string())),
            _ => Err(ForwardError::Transport(format!("server address {s:?} is neither host:port nor stdio:<command>"))),
        }
    }

    pub fn from_env() -> Option<Result<Self, ForwardError>> {
        std::env::var(SERVER_ENV).ok().filter(|v| !v.trim().is_empty()).map(|v| Endpoint::parse(&v))
    }
}

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    reactants: &'a [String],
}

#[derive(Deserialize)]
struct Response {
    id: Option<u64>,
    #[serde(default)]
    product: Option<String>,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    error: Option<String>,
}

struct Connection {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(mut c) = self.child.take() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

fn open(endpoint: &Endpoint, timeout: Duration) -> Result<Connection, ForwardError> {
    let io = |e: std::io::Error| ForwardError::Transport(format!("{endpoint:?}: {e}"));
    match endpoint {
        Endpoint::Tcp(addr) => {
            let stream = TcpStream::connect(addr).map_err(io)?;
            stream.set_read_timeout(Some(timeout)).map_err(io)?;
            stream.set_nodelay(true).map_err(io)?;
            let reader: Box<dyn Read + Send> = Box::new(stream.try_clone().map_err(io)?);
            Ok(Connection { reader: BufReader::new(reader), writer: Box::new(stream), child: None })
        }
        Endpoint::Stdio(cmd) => {
            let mut child = Command::new("sh")
                .arg("-c")
                .arg(cmd)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(io)?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            Ok(Connection { reader: BufReader::new(Box::new(stdout)), writer: Box::new(stdin), child: Some(child) })
        }
    }
}

/// Forward model served by another process.
pub struct RemoteModel {
    endpoint: Endpoint,
    conn: Mutex<Option<Connection>>,
    next_id: AtomicU64,
    retries: u32,
    timeout: Duration,
}

impl std::fmt::Debug for RemoteModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteModel").field("endpoint", &self.endpoint).field("retries", &self.retries).finish()
    }
}

enum Failure {
    /// Connection-level trouble; reconnecting may help.
    Transport(String),
    Protocol(String),
}

impl RemoteModel {
    pub fn connect(endpoint: Endpoint, retries: u32, timeout: Duration) -> Result<Self, ForwardError> {
        let conn = open(&endpoint, timeout)?;
        Ok(RemoteModel { endpoint, conn: Mutex::new(Some(conn)), next_id: AtomicU64::new(1), retries, timeout })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn exchange(&self, conn: &mut Connection, batch: &[ReactantSet]) -> Result<Vec<Prediction>, Failure> {
        let first = self.next_id.fetch_add(batch.len() as u64, Ordering::Relaxed);
        let mut wire = String::new();
        for (i, s) in batch.iter().enumerate() {
            wire.push_str(&serde_json::to_string(&Request { id: first + i as u64, reactants: s.members() }).expect("serializable"));
            wire.push('\n');
        }
        conn.writer.write_all(wire.as_bytes()).map_err(|e| Failure::Transport(e.to_string()))?;
        conn.writer.flush().map_err(|e| Failure::Transport(e.to_string()))?;

        let mut slots: Vec<Option<Prediction>> = vec![None; batch.len()];
        let mut pending = batch.len();
        let mut line = String::new();
        while pending > 0 {
            line.clear();
            let n = conn.reader.read_line(&mut line).map_err(|e| Failure::Transport(e.to_string()))?;
            if n == 0 {
                return Err(Failure::Transport("server closed the connection".into()));
            }
            let resp: Response =
                serde_json::from_str(line.trim_end()).map_err(|e| Failure::Protocol(format!("unparsable response {:?}: {e}", line.trim_end())))?;
            if let Some(err) = resp.error {
                return Err(Failure::Protocol(format!("server error for id {:?}: {err}", resp.id)));
            }
            let id = resp.id.ok_or_else(|| Failure::Protocol("response without id".into()))?;
            let idx = id.checked_sub(first).filter(|&d| d < batch.len() as u64).map(|d| d as usize);
            let Some(idx) = idx else {
                return Err(Failure::Protocol(format!("response id {id} matches no pending request")));
            };
            if slots[idx].is_some() {
                return Err(Failure::Protocol(format!("duplicate response for id {id}")));
            }
            let alpha = resp.alpha.ok_or_else(|| Failure::Protocol(format!("response {id} lacks alpha")))?;
            if !(alpha.is_finite() && alpha > 0.0 && alpha <= 1.0) {
                return Err(Failure::Protocol(format!("response {id} alpha {alpha} outside (0, 1]")));
            }
            if let Some(p) = &resp.product {
                match canonical_smiles(p) {
                    Ok(c) if c == *p => {}
                    _ => return Err(Failure::Protocol(format!("response {id} product {p:?} is not canonical SMILES"))),
                }
            }
            slots[idx] = Some(Prediction { product: resp.product, alpha: alpha.max(EPSILON) });
            pending -= 1;
        }
        Ok(slots.into_iter().map(|s| s.expect("all answered")).collect())
    }

    /// Send one raw line and return the next response line, for conformance
    /// probes.
    pub fn raw_exchange(&self, line: &str) -> Result<String, ForwardError> {
        let mut guard = self.conn.lock().expect("connection lock");
        let conn = guard.as_mut().ok_or_else(|| ForwardError::Transport("not connected".into()))?;
        let t = |e: std::io::Error| ForwardError::Transport(e.to_string());
        conn.writer.write_all(line.as_bytes()).map_err(t)?;
        conn.writer.write_all(b"\n").map_err(t)?;
        conn.writer.flush().map_err(t)?;
        let mut out = String::new();
        if conn.reader.read_line(&mut out).map_err(t)? == 0 {
            return Err(ForwardError::Transport("server closed the connection".into()));
        }
        Ok(out.trim_end().to_string())
    }
}

impl ForwardModel for RemoteModel {
    fn predict(&self, s: &ReactantSet) -> Result<Prediction, ForwardError> {
        let mut v = self.predict_batch(std::slice::from_ref(s))?;
        Ok(v.pop().expect("one prediction"))
    }

    fn predict_batch(&self, batch: &[ReactantSet]) -> Result<Vec<Prediction>, ForwardError> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let mut guard = self.conn.lock().expect("connection lock");
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if guard.is_none() {
                match open(&self.endpoint, self.timeout) {
                    Ok(c) => *guard = Some(c),
                    Err(e) => {
                        last = e.to_string();
                        log::warn!("reconnect attempt {} failed: {last}", attempt + 1);
                        std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
                        continue;
                    }
                }
            }
            let conn = guard.as_mut().expect("connected");
            match self.exchange(conn, batch) {
                Ok(p) => return Ok(p),
                Err(Failure::Protocol(m)) => {
                    // the stream may hold stale responses now
                    *guard = None;
                    return Err(ForwardError::Protocol(m));
                }
                Err(Failure::Transport(m)) => {
                    log::warn!("model server transport error: {m}");
                    last = m;
                    *guard = None;
                }
            }
        }
        Err(ForwardError::Transport(format!("giving up after {} attempts: {last}", self.retries + 1)))
    }
}
