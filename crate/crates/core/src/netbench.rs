//! Throttled all-gather benchmark and the matching analytic cost model.
//!
//! `N` workers each hold one partial-sum tensor. In every repetition a worker
//! encodes its tensor, sends the bytes to every peer over a full mesh,
//! decodes the `N - 1` tensors it receives and adds all `N` contributions in
//! rank order. A worker's own contribution is the value a peer would decode,
//! so every worker ends with the same bits.
//!
//! Each worker's outgoing traffic passes through one token bucket refilled
//! every millisecond, so a worker sending `B` bytes to each of `N - 1` peers
//! needs about `(N - 1) * B / bandwidth` seconds, the same term the analytic
//! model uses. Message framing (an 8-byte length prefix) is neither throttled
//! nor counted.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use half::f16;
use half::slice::HalfFloatSliceExt;
use serde::Serialize;

use crate::codec::Quantizer;
use crate::compressor::{Compressor, Packet};
use crate::error::{Error, Result};
use crate::synth;
use crate::tensor::{element_count, Tensor};
use crate::wire;

pub const REFILL_INTERVAL: Duration = Duration::from_millis(1);
const CHUNK: usize = 64 << 10;
const TOPOLOGY: &str = "full-mesh";

/// Link and codec parameters. Infinite bandwidth or throughput means the
/// corresponding cost is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkModel {
    /// Bytes per second.
    pub bandwidth: f64,
    /// Seconds per message.
    pub latency: f64,
    /// Values per second.
    pub compress_throughput: f64,
    pub decompress_throughput: f64,
}

impl LinkModel {
    pub fn new(bandwidth: f64, latency: f64, compress_throughput: f64, decompress_throughput: f64) -> Result<Self> {
        let positive = |x: f64| x > 0.0;
        if !positive(bandwidth) || !positive(compress_throughput) || !positive(decompress_throughput) {
            return Err(Error::InvalidArgument(
                "bandwidth and codec throughputs must be positive".into(),
            ));
        }
        if !(latency >= 0.0 && latency.is_finite()) {
            return Err(Error::InvalidArgument(format!("latency must be finite and >= 0, got {latency}")));
        }
        Ok(Self {
            bandwidth,
            latency,
            compress_throughput,
            decompress_throughput,
        })
    }

    /// A link with the given bandwidth, no latency and free codecs.
    pub fn bandwidth_only(bandwidth: f64) -> Result<Self> {
        Self::new(bandwidth, 0.0, f64::INFINITY, f64::INFINITY)
    }

    pub fn with_codec(self, t: CodecThroughput) -> Result<Self> {
        Self::new(self.bandwidth, self.latency, t.compress, t.decompress)
    }
}

/// Bytes one worker sends to one peer for a tensor of this shape.
pub fn wire_bytes(shape: &[usize], compressor: &Compressor) -> Result<u64> {
    let n = element_count(shape).ok_or_else(|| Error::ShapeMismatch(format!("shape {shape:?} overflows")))?;
    Ok(match compressor {
        Compressor::Passthrough16 => 2 * n as u64,
        Compressor::Mx(s) => {
            let dims: Vec<u64> = shape.iter().map(|&d| d as u64).collect();
            let (a, b) = crate::codec::stream_lengths(s, &dims)?;
            wire::header_len(shape.len()) as u64 + a + b
        }
        // Sizes of the baselines depend only on the shape.
        other => other.compress(&Tensor::zeros(shape.to_vec()))?.wire_len() as u64,
    })
}

/// Predicted seconds for one all-gather and reduction among `n` workers.
pub fn predict_comm_time(shape: &[usize], compressor: &Compressor, n: usize, link: &LinkModel) -> Result<f64> {
    if n < 2 {
        return Err(Error::MinimumDegreeTwo(n));
    }
    let peers = (n - 1) as f64;
    let bytes = wire_bytes(shape, compressor)? as f64;
    let mut t = link.latency * peers + peers * bytes / link.bandwidth;
    if *compressor != Compressor::Passthrough16 {
        let elements = element_count(shape).unwrap_or(0) as f64;
        t += elements / link.compress_throughput + peers * elements / link.decompress_throughput;
    }
    Ok(t)
}

/// Rate limiter with a fixed refill interval.
#[derive(Debug)]
pub struct TokenBucket {
    per_tick: f64,
    capacity: f64,
    tokens: f64,
    origin: Instant,
    tick: u64,
}

impl TokenBucket {
    /// `bytes_per_second` must be positive and finite. The bucket holds at
    /// most two refills.
    pub fn new(bytes_per_second: f64) -> Self {
        let per_tick = bytes_per_second * REFILL_INTERVAL.as_secs_f64();
        Self {
            per_tick,
            capacity: 2.0 * per_tick,
            tokens: 0.0,
            origin: Instant::now(),
            tick: 0,
        }
    }

    /// Drops accumulated credit; an idle link does not save bandwidth.
    pub fn reset(&mut self) {
        self.tokens = 0.0;
        self.origin = Instant::now();
        self.tick = 0;
    }

    fn refill(&mut self) {
        let now = (self.origin.elapsed().as_nanos() / REFILL_INTERVAL.as_nanos()) as u64;
        if now > self.tick {
            self.tokens = (self.tokens + (now - self.tick) as f64 * self.per_tick).min(self.capacity);
            self.tick = now;
        }
    }

    /// Blocks until `n` bytes of credit have been consumed.
    pub fn acquire(&mut self, n: usize) {
        let mut need = n as f64;
        loop {
            self.refill();
            let take = need.min(self.tokens);
            self.tokens -= take;
            need -= take;
            if need <= 0.0 {
                return;
            }
            let next = self.origin + REFILL_INTERVAL * (self.tick + 1) as u32;
            thread::sleep(next.saturating_duration_since(Instant::now()));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Channel,
    Tcp,
}

impl FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "channel" | "channels" => Ok(TransportKind::Channel),
            "tcp" => Ok(TransportKind::Tcp),
            _ => Err(Error::InvalidArgument(format!("unknown transport `{s}`; expected channel or tcp"))),
        }
    }
}

struct ChannelWriter(Sender<Vec<u8>>);

impl Write for ChannelWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer hung up"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

struct ChannelReader {
    rx: Receiver<Vec<u8>>,
    buf: Vec<u8>,
    pos: usize,
}

impl Read for ChannelReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.buf.len() {
            match self.rx.recv() {
                Ok(b) => {
                    self.buf = b;
                    self.pos = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// Write half of a TCP link; dropping it signals end of stream to the peer
/// even though the read half stays open.
struct TcpSink(TcpStream);

impl Write for TcpSink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()
    }
}

impl Drop for TcpSink {
    fn drop(&mut self) {
        let _ = self.0.shutdown(std::net::Shutdown::Write);
    }
}

type Sink = Box<dyn Write + Send>;
type Source = Box<dyn Read + Send>;

/// `links[i][j]` is worker `i`'s (sink to `j`, source from `j`).
fn build_mesh(n: usize, kind: TransportKind) -> Result<Vec<Vec<Option<(Sink, Source)>>>> {
    let mut links: Vec<Vec<Option<(Sink, Source)>>> = (0..n).map(|_| (0..n).map(|_| None).collect()).collect();
    match kind {
        TransportKind::Channel => {
            let mut rx_of: Vec<Vec<Option<Receiver<Vec<u8>>>>> = (0..n).map(|_| (0..n).map(|_| None).collect()).collect();
            let mut tx_of: Vec<Vec<Option<Sender<Vec<u8>>>>> = (0..n).map(|_| (0..n).map(|_| None).collect()).collect();
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let (tx, rx) = mpsc::channel();
                        tx_of[i][j] = Some(tx);
                        rx_of[j][i] = Some(rx);
                    }
                }
            }
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        let sink: Sink = Box::new(ChannelWriter(tx_of[i][j].take().unwrap()));
                        let source: Source = Box::new(ChannelReader {
                            rx: rx_of[i][j].take().unwrap(),
                            buf: Vec::new(),
                            pos: 0,
                        });
                        links[i][j] = Some((sink, source));
                    }
                }
            }
        }
        TransportKind::Tcp => {
            let tcp = |e: io::Error| Error::TransportFailure(format!("tcp setup: {e}"));
            let listeners = (0..n)
                .map(|_| TcpListener::bind("127.0.0.1:0"))
                .collect::<io::Result<Vec<_>>>()
                .map_err(tcp)?;
            for i in 0..n {
                for j in i + 1..n {
                    let a = TcpStream::connect(listeners[j].local_addr().map_err(tcp)?).map_err(tcp)?;
                    let (b, _) = listeners[j].accept().map_err(tcp)?;
                    for s in [&a, &b] {
                        s.set_nodelay(true).map_err(tcp)?;
                    }
                    let a2 = a.try_clone().map_err(tcp)?;
                    let b2 = b.try_clone().map_err(tcp)?;
                    links[i][j] = Some((Box::new(TcpSink(a)), Box::new(a2)));
                    links[j][i] = Some((Box::new(TcpSink(b)), Box::new(b2)));
                }
            }
        }
    }
    Ok(links)
}

/// Barrier that releases everyone with an error once any party gives up.
struct Gate {
    state: Mutex<(usize, u64, bool)>,
    cv: Condvar,
    parties: usize,
}

impl Gate {
    fn new(parties: usize) -> Self {
        Self {
            state: Mutex::new((0, 0, false)),
            cv: Condvar::new(),
            parties,
        }
    }

    fn wait(&self) -> Result<()> {
        let mut g = self.state.lock().unwrap();
        if g.2 {
            return Err(Error::TransportFailure("another worker failed".into()));
        }
        let generation = g.1;
        g.0 += 1;
        if g.0 == self.parties {
            g.0 = 0;
            g.1 += 1;
            self.cv.notify_all();
            return Ok(());
        }
        while g.1 == generation && !g.2 {
            g = self.cv.wait(g).unwrap();
        }
        if g.2 {
            Err(Error::TransportFailure("another worker failed".into()))
        } else {
            Ok(())
        }
    }

    fn poison(&self) {
        self.state.lock().unwrap().2 = true;
        self.cv.notify_all();
    }
}

/// The per-worker encode and decode steps shared by the benchmark and the
/// throughput calibration.
enum WorkerCodec {
    Raw16,
    Mx(Quantizer),
    Other(Compressor),
}

impl WorkerCodec {
    fn new(c: &Compressor) -> Self {
        match c {
            Compressor::Passthrough16 => WorkerCodec::Raw16,
            Compressor::Mx(s) => WorkerCodec::Mx(Quantizer::new(*s)),
            other => WorkerCodec::Other(*other),
        }
    }

    /// Wire bytes plus the values a peer will decode from them.
    fn encode(&self, t: &Tensor) -> Result<(Vec<u8>, Vec<f32>)> {
        match self {
            WorkerCodec::Raw16 => {
                let mut h = vec![f16::ZERO; t.len()];
                h.convert_from_f32_slice(t.data());
                let mut own = vec![0.0f32; t.len()];
                h.convert_to_f32_slice(&mut own);
                let mut bytes = Vec::with_capacity(2 * h.len());
                for v in h.reinterpret_cast() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                Ok((bytes, own))
            }
            WorkerCodec::Mx(q) => {
                let (ct, own) = q.compress_with_reconstruction(t.shape(), t.data())?;
                Ok((wire::serialize(&ct)?, own))
            }
            WorkerCodec::Other(c) => {
                let p = c.compress(t)?;
                Ok((p.to_bytes()?, p.decompress()?.into_data()))
            }
        }
    }

    fn accumulate(&self, bytes: &[u8], acc: &mut [f32]) -> Result<()> {
        match self {
            WorkerCodec::Raw16 => {
                if bytes.len() != 2 * acc.len() {
                    return Err(Error::TruncatedStream {
                        needed: 2 * acc.len() as u64,
                        available: bytes.len() as u64,
                    });
                }
                let mut h = [f16::ZERO; 1024];
                let mut f = [0.0f32; 1024];
                for (src, dst) in bytes.chunks(2048).zip(acc.chunks_mut(1024)) {
                    let k = dst.len();
                    for (v, c) in h[..k].iter_mut().zip(src.chunks_exact(2)) {
                        *v = f16::from_bits(u16::from_le_bytes([c[0], c[1]]));
                    }
                    h[..k].convert_to_f32_slice(&mut f[..k]);
                    for (a, v) in dst.iter_mut().zip(&f[..k]) {
                        *a += v;
                    }
                }
                Ok(())
            }
            WorkerCodec::Mx(q) => q.decompress_accumulate(&wire::deserialize(bytes)?, acc),
            WorkerCodec::Other(_) => {
                let t = Packet::from_mxc1(bytes)?.decompress()?;
                if t.len() != acc.len() {
                    return Err(Error::ShapeMismatch("received tensor has the wrong size".into()));
                }
                for (a, v) in acc.iter_mut().zip(t.data()) {
                    *a += v;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub workers: usize,
    pub shape: Vec<usize>,
    pub compressor: Compressor,
    /// Only bandwidth and latency are used; infinite bandwidth disables throttling.
    pub link: LinkModel,
    pub repetitions: usize,
    pub transport: TransportKind,
    pub seed: u64,
}

impl BenchConfig {
    /// A `[rows, 4096]` activation whose 16-bit size is `mib` MiB.
    pub fn activation_shape(mib: f64) -> Result<Vec<usize>> {
        let elements = (mib * (1 << 20) as f64 / 2.0).round() as usize;
        if elements == 0 || elements % 4096 != 0 {
            return Err(Error::InvalidArgument(format!(
                "{mib} MiB is not a whole number of 4096-wide 16-bit rows"
            )));
        }
        Ok(vec![elements / 4096, 4096])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub workers: usize,
    pub scheme: String,
    pub transport: TransportKind,
    pub topology: &'static str,
    pub elements: u64,
    pub bandwidth: f64,
    pub repetitions: usize,
    pub median_s: f64,
    pub stddev_s: f64,
    pub times_s: Vec<f64>,
    pub bytes_per_worker: u64,
    /// Uncompressed median over this median, when a baseline was supplied.
    pub speedup: Option<f64>,
}

impl BenchResult {
    pub fn with_baseline(mut self, baseline: &BenchResult) -> Self {
        self.speedup = Some(baseline.median_s / self.median_s);
        self
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Sample standard deviation.
pub fn stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Worker inputs: outlier-injected Gaussians held at 16-bit precision.
pub fn worker_inputs(workers: usize, shape: &[usize], seed: u64) -> Result<Vec<Tensor>> {
    let n = element_count(shape).ok_or_else(|| Error::ShapeMismatch(format!("shape {shape:?} overflows")))?;
    (0..workers)
        .map(|r| {
            let mut rng = synth::rng(seed.wrapping_mul(1_000_003).wrapping_add(r as u64));
            let mut data = synth::with_outliers(&mut rng, n);
            let mut h = vec![f16::ZERO; n];
            h.convert_from_f32_slice(&data);
            h.convert_to_f32_slice(&mut data);
            Tensor::new(shape.to_vec(), data)
        })
        .collect()
}

struct WorkerOutcome {
    starts: Vec<Instant>,
    ends: Vec<Instant>,
    digests: Vec<u64>,
    bytes_sent: u64,
    last: Vec<f32>,
}

fn digest(values: &[f32]) -> u64 {
    let mut h = DefaultHasher::new();
    for v in values {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

fn io_failure(e: io::Error) -> Error {
    Error::TransportFailure(e.to_string())
}

fn sender_loop(
    rank: usize,
    n: usize,
    mut sinks: Vec<Option<Sink>>,
    jobs: Receiver<Arc<Vec<u8>>>,
    link: LinkModel,
) -> Result<()> {
    let mut bucket = link.bandwidth.is_finite().then(|| TokenBucket::new(link.bandwidth));
    let latency = Duration::from_secs_f64(link.latency);
    for msg in jobs {
        if let Some(b) = bucket.as_mut() {
            b.reset();
        }
        for k in 1..n {
            let peer = (rank + k) % n;
            let sink = sinks[peer].as_mut().unwrap();
            if !latency.is_zero() {
                thread::sleep(latency);
            }
            sink.write_all(&(msg.len() as u64).to_le_bytes()).map_err(io_failure)?;
            for chunk in msg.chunks(CHUNK) {
                if let Some(b) = bucket.as_mut() {
                    b.acquire(chunk.len());
                }
                sink.write_all(chunk).map_err(io_failure)?;
            }
            sink.flush().map_err(io_failure)?;
        }
    }
    Ok(())
}

type Inbox = Receiver<(usize, Result<Vec<u8>>)>;

/// Forwards framed messages from one peer. End of stream is reported too, so
/// a worker waiting on a peer that went away does not block forever.
fn receiver_loop(peer: usize, mut source: Source, out: Sender<(usize, Result<Vec<u8>>)>) {
    loop {
        let mut len = [0u8; 8];
        let r = source.read_exact(&mut len).and_then(|_| {
            let mut buf = vec![0u8; u64::from_le_bytes(len) as usize];
            source.read_exact(&mut buf).map(|_| buf)
        });
        let stop = r.is_err();
        if out.send((peer, r.map_err(io_failure))).is_err() || stop {
            return;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn worker_loop(
    rank: usize,
    n: usize,
    input: &Tensor,
    codec: &WorkerCodec,
    reps: usize,
    gate: &Gate,
    jobs: Sender<Arc<Vec<u8>>>,
    inbox: Inbox,
) -> Result<WorkerOutcome> {
    let mut out = WorkerOutcome {
        starts: Vec::with_capacity(reps),
        ends: Vec::with_capacity(reps),
        digests: Vec::with_capacity(reps),
        bytes_sent: 0,
        last: Vec::new(),
    };
    let mut closed = vec![false; n];
    for _ in 0..reps {
        gate.wait()?;
        if let Some(peer) = closed.iter().position(|&c| c) {
            return Err(Error::TransportFailure(format!("peer {peer} closed its link")));
        }
        let start = Instant::now();
        let (bytes, own) = codec.encode(input)?;
        let msg = Arc::new(bytes);
        jobs.send(msg.clone())
            .map_err(|_| Error::TransportFailure("sender thread stopped".into()))?;
        let mut received: Vec<Option<Vec<u8>>> = (0..n).map(|_| None).collect();
        let mut pending = n - 1;
        while pending > 0 {
            let (peer, r) = inbox
                .recv()
                .map_err(|_| Error::TransportFailure("all peers hung up".into()))?;
            match r {
                Ok(b) => {
                    received[peer] = Some(b);
                    pending -= 1;
                }
                // A peer that already delivered this round may close after its last round.
                Err(_) if received[peer].is_some() => closed[peer] = true,
                Err(e) => return Err(e),
            }
        }
        let mut acc = vec![0.0f32; input.len()];
        for (r, b) in received.iter().enumerate() {
            if r == rank {
                for (a, v) in acc.iter_mut().zip(&own) {
                    *a += v;
                }
            } else {
                codec.accumulate(b.as_deref().unwrap(), &mut acc)?;
            }
        }
        out.ends.push(Instant::now());
        out.starts.push(start);
        out.bytes_sent = (n as u64 - 1) * msg.len() as u64;
        out.digests.push(digest(&acc));
        out.last = acc;
    }
    Ok(out)
}

/// Runs `repetitions` timed all-gather rounds and checks that every worker
/// reduced to the same tensor.
pub fn run_allgather_bench(cfg: &BenchConfig) -> Result<BenchResult> {
    let n = cfg.workers;
    if n < 2 {
        return Err(Error::MinimumDegreeTwo(n));
    }
    if cfg.repetitions < 3 {
        return Err(Error::InvalidArgument(format!(
            "at least 3 repetitions are needed, got {}",
            cfg.repetitions
        )));
    }
    let inputs = worker_inputs(n, &cfg.shape, cfg.seed)?;
    let codec = WorkerCodec::new(&cfg.compressor);
    let mesh = build_mesh(n, cfg.transport)?;
    let gate = Gate::new(n);

    let outcomes: Vec<Result<WorkerOutcome>> = thread::scope(|scope| {
        let mut workers = Vec::new();
        let mut helpers = Vec::new();
        for (rank, row) in mesh.into_iter().enumerate() {
            let (inbox_tx, inbox_rx) = mpsc::channel();
            let mut sinks = Vec::with_capacity(n);
            for (peer, link) in row.into_iter().enumerate() {
                match link {
                    Some((sink, source)) => {
                        sinks.push(Some(sink));
                        let tx = inbox_tx.clone();
                        helpers.push(scope.spawn(move || {
                            receiver_loop(peer, source, tx);
                            Ok(())
                        }));
                    }
                    None => sinks.push(None),
                }
            }
            drop(inbox_tx);
            let (jobs_tx, jobs_rx) = mpsc::channel();
            let link = cfg.link;
            helpers.push(scope.spawn(move || sender_loop(rank, n, sinks, jobs_rx, link)));
            let (input, codec, gate) = (&inputs[rank], &codec, &gate);
            let reps = cfg.repetitions;
            workers.push(scope.spawn(move || {
                let r = worker_loop(rank, n, input, codec, reps, gate, jobs_tx, inbox_rx);
                if r.is_err() {
                    gate.poison();
                }
                r.map_err(|e| e.in_worker(rank))
            }));
        }
        let results: Vec<_> = workers
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::TransportFailure("worker panicked".into()))))
            .collect();
        for h in helpers {
            let _ = h.join();
        }
        results
    });

    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    for (i, o) in outcomes.iter().enumerate().skip(1) {
        if o.digests != outcomes[0].digests
            || o.last.iter().zip(&outcomes[0].last).any(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Err(Error::ResultMismatch { a: 0, b: i });
        }
    }
    let times: Vec<f64> = (0..cfg.repetitions)
        .map(|r| {
            let start = outcomes.iter().map(|o| o.starts[r]).min().unwrap();
            let end = outcomes.iter().map(|o| o.ends[r]).max().unwrap();
            (end - start).as_secs_f64()
        })
        .collect();
    Ok(BenchResult {
        workers: n,
        scheme: cfg.compressor.to_string(),
        transport: cfg.transport,
        topology: TOPOLOGY,
        elements: inputs[0].len() as u64,
        bandwidth: cfg.link.bandwidth,
        repetitions: cfg.repetitions,
        median_s: median(&times),
        stddev_s: stddev(&times),
        times_s: times,
        bytes_per_worker: outcomes[0].bytes_sent,
        speedup: None,
    })
}

/// Per-worker codec throughput in values per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CodecThroughput {
    pub compress: f64,
    pub decompress: f64,
}

/// Times the encode and decode steps the benchmark workers run, with
/// `concurrency` threads working at once (matching the benchmark's worker
/// count makes the figures comparable on a shared machine). Reports the
/// median over `runs` rounds.
pub fn calibrate_codec_throughput(
    compressor: &Compressor,
    shape: &[usize],
    runs: usize,
    concurrency: usize,
    seed: u64,
) -> Result<CodecThroughput> {
    if runs < 5 {
        return Err(Error::InvalidArgument(format!("calibration needs at least 5 runs, got {runs}")));
    }
    let concurrency = concurrency.max(1);
    let inputs = worker_inputs(concurrency, shape, seed)?;
    let codec = WorkerCodec::new(compressor);
    let elements = inputs[0].len() as f64;
    let mut enc = Vec::with_capacity(runs);
    let mut dec = Vec::with_capacity(runs);
    for _ in 0..runs {
        let per_thread: Vec<(f64, f64)> = thread::scope(|scope| {
            let handles: Vec<_> = inputs
                .iter()
                .map(|t| {
                    let codec = &codec;
                    scope.spawn(move || -> Result<(f64, f64)> {
                        let t0 = Instant::now();
                        let (bytes, _) = codec.encode(t)?;
                        let te = t0.elapsed().as_secs_f64();
                        let mut acc = vec![0.0f32; t.len()];
                        let t1 = Instant::now();
                        codec.accumulate(&bytes, &mut acc)?;
                        Ok((te, t1.elapsed().as_secs_f64()))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidArgument("calibration thread panicked".into()))))
                .collect::<Result<Vec<_>>>()
        })?;
        let mean = |f: fn(&(f64, f64)) -> f64| per_thread.iter().map(f).sum::<f64>() / per_thread.len() as f64;
        enc.push(elements / mean(|p| p.0));
        dec.push(elements / mean(|p| p.1));
    }
    Ok(CodecThroughput {
        compress: median(&enc),
        decompress: median(&dec),
    })
}
