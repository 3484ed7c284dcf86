//! Read-only prediction daemon over a line-delimited text protocol.
//!
//! Request, one per line:
//!
//! ```text
//! user<TAB>b1,b2,...<TAB>c1,c2,...[<TAB>gift|base]
//! ```
//!
//! Ids are external strings; behaviors are most recent first and `-` stands
//! for an empty list. The reply is `OK<TAB>server_us<TAB>p1,p2,...` with one
//! probability per candidate in request order, or `ERR<TAB>message`. A bad
//! line gets an error reply and the connection stays open.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Impression, USER, VIDEO};
use crate::exec::Execution;
use crate::graph::{VideoId, Vocabulary};
use crate::model::{AblationMask, Model};
use crate::train::{Assembler, Corpus};
use crate::{Error, Result};

pub const MAX_CANDIDATES: usize = 512;
const UNKNOWN: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMode {
    #[default]
    Gift,
    /// Transfer branches masked out.
    Base,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictRequest {
    pub user: String,
    pub behaviors: Vec<String>,
    pub candidates: Vec<String>,
    pub mode: ScoreMode,
}

fn split_list(s: &str) -> Vec<String> {
    if s.is_empty() || s == "-" {
        Vec::new()
    } else {
        s.split(',').map(str::to_string).collect()
    }
}

fn join_list(xs: &[String]) -> String {
    if xs.is_empty() {
        "-".into()
    } else {
        xs.join(",")
    }
}

impl PredictRequest {
    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        if !(3..=4).contains(&f.len()) {
            return Err(Error::Format { what: "request", msg: format!("expected 3 or 4 fields, got {}", f.len()) });
        }
        if f[0].is_empty() {
            return Err(Error::Format { what: "request", msg: "empty user id".into() });
        }
        let mode = match f.get(3) {
            None | Some(&"gift") => ScoreMode::Gift,
            Some(&"base") => ScoreMode::Base,
            Some(m) => return Err(Error::Format { what: "request", msg: format!("unknown mode {m:?}") }),
        };
        let candidates = split_list(f[2]);
        if candidates.len() > MAX_CANDIDATES {
            return Err(Error::Format {
                what: "request",
                msg: format!("{} candidates exceeds the limit of {MAX_CANDIDATES}", candidates.len()),
            });
        }
        Ok(PredictRequest { user: f[0].to_string(), behaviors: split_list(f[1]), candidates, mode })
    }

    pub fn to_line(&self) -> String {
        let mode = match self.mode {
            ScoreMode::Gift => "gift",
            ScoreMode::Base => "base",
        };
        format!("{}\t{}\t{}\t{mode}", self.user, join_list(&self.behaviors), join_list(&self.candidates))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictResponse {
    pub scores: Vec<f64>,
    pub server_us: u64,
}

impl PredictResponse {
    /// Parses an `OK` line; an `ERR` line becomes an error.
    pub fn parse(line: &str) -> Result<Self> {
        let line = line.trim_end_matches(['\r', '\n']);
        if let Some(msg) = line.strip_prefix("ERR\t") {
            return Err(Error::Format { what: "response", msg: msg.to_string() });
        }
        let mut f = line.splitn(3, '\t');
        let (Some("OK"), Some(us), Some(ps)) = (f.next(), f.next(), f.next()) else {
            return Err(Error::Format { what: "response", msg: format!("unexpected line {line:?}") });
        };
        let server_us = us.parse().map_err(|_| Error::Format { what: "response", msg: "bad timing".into() })?;
        let scores = split_list(ps)
            .iter()
            .map(|p| p.parse().map_err(|_| Error::Format { what: "response", msg: format!("bad score {p:?}") }))
            .collect::<Result<_>>()?;
        Ok(PredictResponse { scores, server_us })
    }
}

/// Frozen model plus everything needed to score a request.
pub struct Scorer {
    model: Model,
    vocab: Vocabulary,
    gift: Assembler,
    base: Assembler,
}

impl Scorer {
    pub fn new(model: Model, corpus: &Corpus, vocab: Vocabulary) -> Self {
        let gift = Assembler::new(&model, corpus, AblationMask::NONE);
        let base = Assembler::new(&model, corpus, AblationMask::base());
        Scorer { model, vocab, gift, base }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn video(&self, ext: &str) -> VideoId {
        VideoId(self.vocab.get(VIDEO, ext).unwrap_or(UNKNOWN))
    }

    /// Library-level scoring; the daemon reports exactly these numbers.
    pub fn score(&self, req: &PredictRequest) -> Vec<f64> {
        let asm = match req.mode {
            ScoreMode::Gift => &self.gift,
            ScoreMode::Base => &self.base,
        };
        let user = self.vocab.get(USER, &req.user).unwrap_or(UNKNOWN);
        let behaviors: Vec<VideoId> = req.behaviors.iter().map(|b| self.video(b)).collect();
        let samples: Vec<_> = req
            .candidates
            .iter()
            .map(|c| {
                let imp =
                    Impression { id: 0, user, behaviors: behaviors.clone(), target: self.video(c), label: false, ts: 0 };
                asm.sample(&imp)
            })
            .collect();
        self.model.predict(&samples, Execution::Sequential)
    }

    /// Handles one protocol line; `exact` prints shortest round-trip floats
    /// instead of six decimals.
    pub fn respond(&self, line: &str, exact: bool) -> String {
        let start = Instant::now();
        match PredictRequest::parse(line) {
            Ok(req) => {
                let scores = self.score(&req);
                let text: Vec<String> =
                    scores.iter().map(|p| if exact { format!("{p}") } else { format!("{p:.6}") }).collect();
                let us = start.elapsed().as_micros();
                format!("OK\t{us}\t{}", join_list(&text))
            }
            Err(e) => format!("ERR\t{e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServerConfig {
    pub threads: usize,
    pub exact: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { threads: 4, exact: false }
    }
}

/// A running daemon; dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop_now();
        }
    }
}

fn handle(scorer: &Scorer, stream: TcpStream, exact: bool, stop: &AtomicBool) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut line = String::new();
    loop {
        match reader.read_line(&mut line) {
            Ok(0) => return Ok(()),
            Ok(_) => {
                if !line.ends_with('\n') {
                    // Partial line at EOF or timeout; keep reading.
                    continue;
                }
                let reply = scorer.respond(&line, exact);
                writer.write_all(reply.as_bytes())?;
                writer.write_all(b"\n")?;
                writer.flush()?;
                line.clear();
            }
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                if stop.load(Ordering::SeqCst) {
                    return Ok(());
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// Binds `addr` and serves on a fixed pool of worker threads. Each
/// connection is served by one worker, so replies keep request order.
pub fn serve(scorer: Arc<Scorer>, addr: &str, cfg: ServerConfig) -> Result<ServerHandle> {
    if cfg.threads == 0 {
        return Err(Error::Invalid("server needs at least one thread".into()));
    }
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel::<TcpStream>();
    let rx = Arc::new(Mutex::new(rx));
    let workers = (0..cfg.threads)
        .map(|_| {
            let (rx, scorer, stop) = (rx.clone(), scorer.clone(), stop.clone());
            std::thread::spawn(move || loop {
                let next = rx.lock().expect("worker queue poisoned").recv();
                let Ok(stream) = next else { return };
                if let Err(e) = handle(&scorer, stream, cfg.exact, &stop) {
                    log::warn!("connection closed with error: {e}");
                }
            })
        })
        .collect();
    let acceptor = {
        let stop = stop.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(s) => {
                        if tx.send(s).is_err() {
                            break;
                        }
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })
    };
    log::info!("serving on {addr} with {} threads", cfg.threads);
    Ok(ServerHandle { addr, stop, acceptor: Some(acceptor), workers })
}

/// Blocking line client for one connection.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> Result<Self> {
        let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(5))?;
        stream.set_nodelay(true)?;
        Ok(Client { reader: BufReader::new(stream.try_clone()?), writer: BufWriter::new(stream) })
    }

    /// Sends one raw line and returns the raw reply without its newline.
    pub fn send_line(&mut self, line: &str) -> Result<String> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(Error::Net(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "server closed")));
        }
        Ok(reply.trim_end_matches('\n').to_string())
    }

    pub fn predict(&mut self, req: &PredictRequest) -> Result<PredictResponse> {
        PredictResponse::parse(&self.send_line(&req.to_line())?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    pub requests: usize,
    pub candidates: usize,
    pub behaviors: usize,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig { requests: 1000, candidates: 20, behaviors: 30, seed: 0 }
    }
}

/// Seeded request stream drawn from the given id pools.
pub fn workload(cfg: &WorkloadConfig, users: &[String], videos: &[String], candidates: &[String]) -> Vec<PredictRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.requests)
        .map(|_| PredictRequest {
            user: users.choose(&mut rng).cloned().unwrap_or_else(|| "anonymous".into()),
            behaviors: (0..rng.random_range(0..=cfg.behaviors)).filter_map(|_| videos.choose(&mut rng).cloned()).collect(),
            candidates: (0..cfg.candidates).filter_map(|_| candidates.choose(&mut rng).cloned()).collect(),
            mode: ScoreMode::Gift,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencySummary {
    pub requests: usize,
    /// Client round-trip percentiles in microseconds; `None` without requests.
    pub p50_us: Option<f64>,
    pub p95_us: Option<f64>,
    pub p99_us: Option<f64>,
    pub mean_server_us: Option<f64>,
    pub throughput_rps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub gift: LatencySummary,
    pub base: LatencySummary,
}

impl BenchReport {
    /// Mean server-side latency of full scoring minus base scoring.
    pub fn delta_us(&self) -> Option<f64> {
        Some(self.gift.mean_server_us? - self.base.mean_server_us?)
    }

    pub fn to_text(&self) -> String {
        let f = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"));
        let mut out = String::from("mode\trequests\tp50_us\tp95_us\tp99_us\tmean_server_us\tthroughput_rps\n");
        for (name, s) in [("gift", &self.gift), ("base", &self.base)] {
            out.push_str(&format!(
                "{name}\t{}\t{}\t{}\t{}\t{}\t{:.1}\n",
                s.requests,
                f(s.p50_us),
                f(s.p95_us),
                f(s.p99_us),
                f(s.mean_server_us),
                s.throughput_rps
            ));
        }
        out.push_str(&format!("delta_server_us\t{}\n", f(self.delta_us())));
        out
    }
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

fn run_mode(addr: SocketAddr, reqs: &[PredictRequest], mode: ScoreMode) -> Result<LatencySummary> {
    let mut client = Client::connect(addr)?;
    let mut rtt = Vec::with_capacity(reqs.len());
    let mut server = 0.0;
    let start = Instant::now();
    for r in reqs {
        let r = PredictRequest { mode, ..r.clone() };
        let t = Instant::now();
        let resp = client.predict(&r)?;
        rtt.push(t.elapsed().as_secs_f64() * 1e6);
        server += resp.server_us as f64;
    }
    let wall = start.elapsed().as_secs_f64();
    rtt.sort_by(f64::total_cmp);
    let n = reqs.len();
    Ok(LatencySummary {
        requests: n,
        p50_us: percentile(&rtt, 0.50),
        p95_us: percentile(&rtt, 0.95),
        p99_us: percentile(&rtt, 0.99),
        mean_server_us: (n > 0).then(|| server / n as f64),
        throughput_rps: if n > 0 && wall > 0.0 { n as f64 / wall } else { 0.0 },
    })
}

/// Replays `reqs` against a running daemon in full and base mode.
pub fn bench(addr: SocketAddr, reqs: &[PredictRequest]) -> Result<BenchReport> {
    let base = run_mode(addr, reqs, ScoreMode::Base)?;
    let gift = run_mode(addr, reqs, ScoreMode::Gift)?;
    Ok(BenchReport { gift, base })
}
