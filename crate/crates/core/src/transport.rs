//! Party runtime and message fabric.
//!
//! Every party runs on its own thread and talks to the others through a
//! [`Transport`]: either the in-process simulated network or a TCP mesh. The
//! [`Net`] wrapper adds the communication patterns used by the protocols and
//! keeps per-link traffic statistics.
//!
//! Round accounting: a party's round counter goes up each time it receives
//! after having sent. A gather followed by a scatter is therefore one round.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::Fp;
use crate::offline::Material;
use crate::pss::PackingConfig;

pub const WIRE_MAGIC: [u8; 4] = *b"PKM1";
const HANDSHAKE_MAGIC: [u8; 4] = *b"PKH1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Offline,
    Online,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Offline => "offline",
            Phase::Online => "online",
        }
    }
    fn idx(self) -> usize {
        self as usize
    }
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Phase::Offline),
            1 => Ok(Phase::Online),
            _ => Err(Error::Malformed(format!("phase byte {b}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub phase: Phase,
    pub payload: Vec<u64>,
}

impl Message {
    pub fn wire_len(&self) -> usize {
        9 + 8 * self.payload.len()
    }
}

/// Frame layout: magic, phase byte, little-endian u32 count, then the
/// elements as little-endian u64.
pub fn encode_message(msg: &Message) -> Vec<u8> {
    let mut out = Vec::with_capacity(msg.wire_len());
    out.extend_from_slice(&WIRE_MAGIC);
    out.push(msg.phase as u8);
    out.extend_from_slice(&(msg.payload.len() as u32).to_le_bytes());
    for v in &msg.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_message<R: Read>(r: &mut R) -> Result<Message> {
    let mut head = [0u8; 9];
    r.read_exact(&mut head)?;
    if head[..4] != WIRE_MAGIC {
        return Err(Error::Malformed("bad frame magic".into()));
    }
    let phase = Phase::from_byte(head[4])?;
    let count = u32::from_le_bytes(head[5..9].try_into().unwrap()) as usize;
    let mut body = vec![0u8; count * 8];
    r.read_exact(&mut body)?;
    let payload = body.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Message { phase, payload })
}

pub fn decode_message(bytes: &[u8]) -> Result<Message> {
    let mut cur = bytes;
    let m = read_message(&mut cur)?;
    if !cur.is_empty() {
        return Err(Error::Malformed("trailing bytes".into()));
    }
    Ok(m)
}

pub trait Transport: Send {
    fn id(&self) -> usize;
    fn n(&self) -> usize;
    fn send(&mut self, to: usize, msg: Message) -> Result<()>;
    fn recv(&mut self, from: usize, timeout: Duration) -> Result<Message>;
}

/// Link characteristics for the simulated network.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NetworkModel {
    /// one-way latency
    pub latency: Duration,
    /// bits per second per directed link; `None` means unlimited
    pub bandwidth_bps: Option<f64>,
}

impl NetworkModel {
    pub fn lan() -> Self {
        NetworkModel::default()
    }
    /// 40 ms round trip, 100 Mbps.
    pub fn wan() -> Self {
        NetworkModel { latency: Duration::from_millis(20), bandwidth_bps: Some(100e6) }
    }
    fn is_instant(&self) -> bool {
        self.latency.is_zero() && self.bandwidth_bps.is_none()
    }
}

struct Envelope {
    msg: Message,
    deliver_at: Option<Instant>,
}

pub struct SimEndpoint {
    id: usize,
    n: usize,
    model: NetworkModel,
    tx: Vec<Option<Sender<Envelope>>>,
    rx: Vec<Option<Receiver<Envelope>>>,
    link_free_at: Vec<Instant>,
}

/// Builds a fully connected in-process network. Endpoint `j - 1` belongs to
/// party `j`.
pub fn sim_fabric(n: usize, model: NetworkModel) -> Vec<SimEndpoint> {
    let mut txs: Vec<Vec<Option<Sender<Envelope>>>> = (0..n).map(|_| (0..n).map(|_| None).collect()).collect();
    let mut rxs: Vec<Vec<Option<Receiver<Envelope>>>> = (0..n).map(|_| (0..n).map(|_| None).collect()).collect();
    for from in 0..n {
        for to in 0..n {
            if from != to {
                let (s, r) = unbounded();
                txs[from][to] = Some(s);
                rxs[to][from] = Some(r);
            }
        }
    }
    let now = Instant::now();
    txs.into_iter()
        .zip(rxs)
        .enumerate()
        .map(|(i, (tx, rx))| SimEndpoint { id: i + 1, n, model, tx, rx, link_free_at: vec![now; n] })
        .collect()
}

impl Transport for SimEndpoint {
    fn id(&self) -> usize {
        self.id
    }
    fn n(&self) -> usize {
        self.n
    }
    fn send(&mut self, to: usize, msg: Message) -> Result<()> {
        let deliver_at = if self.model.is_instant() {
            None
        } else {
            let now = Instant::now();
            let start = now.max(self.link_free_at[to - 1]);
            let tx_time = match self.model.bandwidth_bps {
                Some(bps) => Duration::from_secs_f64(msg.wire_len() as f64 * 8.0 / bps),
                None => Duration::ZERO,
            };
            self.link_free_at[to - 1] = start + tx_time;
            Some(start + tx_time + self.model.latency)
        };
        let ch = self.tx[to - 1].as_ref().ok_or(Error::PeerDisconnected(to))?;
        ch.send(Envelope { msg, deliver_at }).map_err(|_| Error::PeerDisconnected(to))
    }
    fn recv(&mut self, from: usize, timeout: Duration) -> Result<Message> {
        let ch = self.rx[from - 1].as_ref().ok_or(Error::PeerDisconnected(from))?;
        let env = match ch.recv_timeout(timeout) {
            Ok(e) => e,
            Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(from)),
            Err(RecvTimeoutError::Disconnected) => return Err(Error::PeerDisconnected(from)),
        };
        if let Some(at) = env.deliver_at {
            let now = Instant::now();
            if at > now {
                thread::sleep(at - now);
            }
        }
        Ok(env.msg)
    }
}

/// One TCP stream per pair of parties. Reader threads push incoming frames
/// into per-peer queues so that receives can time out.
pub struct TcpEndpoint {
    id: usize,
    n: usize,
    writers: Vec<Option<BufWriter<TcpStream>>>,
    rx: Vec<Option<Receiver<Message>>>,
}

impl TcpEndpoint {
    /// Connects party `id` to everyone listed in `addrs` (index `j - 1` is
    /// party `j`). Party `i` dials every `j < i` and accepts every `j > i` on
    /// `listener`.
    pub fn establish(id: usize, listener: TcpListener, addrs: &[SocketAddr], timeout: Duration) -> Result<Self> {
        let n = addrs.len();
        let deadline = Instant::now() + timeout;
        let mut streams: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();
        for j in 1..id {
            let mut s = loop {
                match TcpStream::connect_timeout(&addrs[j - 1], Duration::from_millis(500)) {
                    Ok(s) => break s,
                    Err(_) if Instant::now() < deadline => thread::sleep(Duration::from_millis(20)),
                    Err(_) => return Err(Error::Timeout(j)),
                }
            };
            s.set_nodelay(true)?;
            let mut hello = HANDSHAKE_MAGIC.to_vec();
            hello.extend_from_slice(&(id as u32).to_le_bytes());
            s.write_all(&hello)?;
            streams[j - 1] = Some(s);
        }
        listener.set_nonblocking(true)?;
        let mut pending = n - id;
        while pending > 0 {
            match listener.accept() {
                Ok((mut s, _)) => {
                    s.set_nonblocking(false)?;
                    s.set_nodelay(true)?;
                    s.set_read_timeout(Some(timeout))?;
                    let mut hello = [0u8; 8];
                    s.read_exact(&mut hello)?;
                    s.set_read_timeout(None)?;
                    if hello[..4] != HANDSHAKE_MAGIC {
                        return Err(Error::Malformed("bad handshake".into()));
                    }
                    let peer = u32::from_le_bytes(hello[4..].try_into().unwrap()) as usize;
                    if peer <= id || peer > n || streams[peer - 1].is_some() {
                        return Err(Error::Malformed(format!("unexpected peer id {peer}")));
                    }
                    streams[peer - 1] = Some(s);
                    pending -= 1;
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        let missing = (id + 1..=n).find(|&j| streams[j - 1].is_none()).unwrap_or(id);
                        return Err(Error::Timeout(missing));
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e.into()),
            }
        }
        let mut writers = Vec::with_capacity(n);
        let mut rx = Vec::with_capacity(n);
        for s in streams {
            match s {
                None => {
                    writers.push(None);
                    rx.push(None);
                }
                Some(s) => {
                    let reader = s.try_clone()?;
                    let (tx, r) = unbounded();
                    thread::spawn(move || {
                        let mut reader = BufReader::new(reader);
                        // ends on EOF or a malformed frame; dropping tx signals disconnect
                        while let Ok(m) = read_message(&mut reader) {
                            if tx.send(m).is_err() {
                                break;
                            }
                        }
                    });
                    writers.push(Some(BufWriter::new(s)));
                    rx.push(Some(r));
                }
            }
        }
        Ok(TcpEndpoint { id, n, writers, rx })
    }
}

impl Transport for TcpEndpoint {
    fn id(&self) -> usize {
        self.id
    }
    fn n(&self) -> usize {
        self.n
    }
    fn send(&mut self, to: usize, msg: Message) -> Result<()> {
        let w = self.writers[to - 1].as_mut().ok_or(Error::PeerDisconnected(to))?;
        w.write_all(&encode_message(&msg)).map_err(|_| Error::PeerDisconnected(to))?;
        w.flush().map_err(|_| Error::PeerDisconnected(to))
    }
    fn recv(&mut self, from: usize, timeout: Duration) -> Result<Message> {
        let ch = self.rx[from - 1].as_ref().ok_or(Error::PeerDisconnected(from))?;
        match ch.recv_timeout(timeout) {
            Ok(m) => Ok(m),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(from)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::PeerDisconnected(from)),
        }
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        for s in self.writers.iter_mut().flatten() {
            let _ = s.flush();
            let _ = s.get_ref().shutdown(std::net::Shutdown::Both);
        }
    }
}

/// Traffic on one directed link in one phase, counted by the sender.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub messages: u64,
    pub elements: u64,
    pub rounds: u64,
}

/// Per-party totals for one phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyCounters {
    pub sent_elements: u64,
    pub recv_elements: u64,
    pub sent_messages: u64,
    pub rounds: u64,
    pub flights: u64,
}

impl PartyCounters {
    pub fn delta(&self, earlier: &PartyCounters) -> PartyCounters {
        PartyCounters {
            sent_elements: self.sent_elements - earlier.sent_elements,
            recv_elements: self.recv_elements - earlier.recv_elements,
            sent_messages: self.sent_messages - earlier.sent_messages,
            rounds: self.rounds - earlier.rounds,
            flights: self.flights - earlier.flights,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub links: BTreeMap<(usize, usize, Phase), LinkStats>,
    pub parties: BTreeMap<(usize, Phase), PartyCounters>,
}

impl ChannelStats {
    pub fn merge(&mut self, other: &ChannelStats) {
        for (k, v) in &other.links {
            let e = self.links.entry(*k).or_default();
            e.messages += v.messages;
            e.elements += v.elements;
            e.rounds += v.rounds;
        }
        for (k, v) in &other.parties {
            let e = self.parties.entry(*k).or_default();
            e.sent_elements += v.sent_elements;
            e.recv_elements += v.recv_elements;
            e.sent_messages += v.sent_messages;
            e.rounds += v.rounds;
            e.flights += v.flights;
        }
    }

    pub fn party(&self, id: usize, phase: Phase) -> PartyCounters {
        self.parties.get(&(id, phase)).copied().unwrap_or_default()
    }

    /// Elements sent by all parties.
    pub fn total_elements(&self, phase: Phase) -> u64 {
        self.links.iter().filter(|(k, _)| k.2 == phase).map(|(_, v)| v.elements).sum()
    }

    /// Rounds of the run: the maximum over parties.
    pub fn rounds(&self, phase: Phase) -> u64 {
        self.parties.iter().filter(|(k, _)| k.1 == phase).map(|(_, v)| v.rounds).max().unwrap_or(0)
    }

    pub fn flights(&self, phase: Phase) -> u64 {
        self.parties.iter().filter(|(k, _)| k.1 == phase).map(|(_, v)| v.flights).max().unwrap_or(0)
    }

    /// Largest per-party (sent + received) element count.
    pub fn max_party_traffic(&self, phase: Phase) -> u64 {
        self.parties
            .iter()
            .filter(|(k, _)| k.1 == phase)
            .map(|(_, v)| v.sent_elements + v.recv_elements)
            .max()
            .unwrap_or(0)
    }

    /// `sender,receiver,phase,elements,rounds`, one row per directed link and
    /// phase, zero rows included.
    pub fn to_csv(&self, n: usize) -> String {
        let mut out = String::from("sender,receiver,phase,elements,rounds\n");
        for phase in [Phase::Offline, Phase::Online] {
            for s in 1..=n {
                for r in 1..=n {
                    if s == r {
                        continue;
                    }
                    let l = self.links.get(&(s, r, phase)).copied().unwrap_or_default();
                    out.push_str(&format!("{s},{r},{},{},{}\n", phase.as_str(), l.elements, l.rounds));
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<ChannelStats> {
        let mut stats = ChannelStats::default();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Format(format!("line {}: expected 5 fields", i + 1)));
            }
            let num = |s: &str| s.trim().parse::<u64>().map_err(|e| Error::Format(format!("line {}: {e}", i + 1)));
            let phase = match f[2].trim() {
                "offline" => Phase::Offline,
                "online" => Phase::Online,
                other => return Err(Error::Format(format!("unknown phase {other}"))),
            };
            let (s, r) = (num(f[0])? as usize, num(f[1])? as usize);
            let l = LinkStats { messages: 0, elements: num(f[3])?, rounds: num(f[4])? };
            stats.links.insert((s, r, phase), l);
        }
        Ok(stats)
    }
}

/// A party's view of the network.
pub struct Net {
    id: usize,
    n: usize,
    transport: Box<dyn Transport>,
    phase: Phase,
    timeout: Duration,
    awaiting: [bool; 2],
    counters: [PartyCounters; 2],
    links: BTreeMap<(usize, usize, Phase), LinkStats>,
    link_epoch: BTreeMap<(usize, Phase), u64>,
    transcript: Sha256,
}

impl Net {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Net {
            id: transport.id(),
            n: transport.n(),
            transport,
            phase: Phase::Online,
            timeout: DEFAULT_TIMEOUT,
            awaiting: [false; 2],
            counters: [PartyCounters::default(); 2],
            links: BTreeMap::new(),
            link_epoch: BTreeMap::new(),
            transcript: Sha256::new(),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn is_leader(&self) -> bool {
        self.id == 1
    }
    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }
    pub fn phase(&self) -> Phase {
        self.phase
    }
    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    pub fn counters(&self, phase: Phase) -> PartyCounters {
        self.counters[phase.idx()]
    }

    pub fn stats(&self) -> ChannelStats {
        let mut s = ChannelStats { links: self.links.clone(), parties: BTreeMap::new() };
        for phase in [Phase::Offline, Phase::Online] {
            s.parties.insert((self.id, phase), self.counters[phase.idx()]);
        }
        s
    }

    /// SHA-256 over every message sent and received, in program order.
    pub fn transcript_hash(&self) -> [u8; 32] {
        self.transcript.clone().finalize().into()
    }

    fn absorb(&mut self, dir: u8, peer: usize, phase: Phase, payload: &[u64]) {
        self.transcript.update([dir, phase as u8]);
        self.transcript.update((peer as u32).to_le_bytes());
        self.transcript.update((payload.len() as u64).to_le_bytes());
        for v in payload {
            self.transcript.update(v.to_le_bytes());
        }
    }

    pub fn send_raw(&mut self, to: usize, payload: Vec<u64>) -> Result<()> {
        let phase = self.phase;
        let p = phase.idx();
        self.absorb(0, to, phase, &payload);
        self.awaiting[p] = true;
        let epoch = self.counters[p].rounds;
        let fresh = self.link_epoch.insert((to, phase), epoch) != Some(epoch);
        let link = self.links.entry((self.id, to, phase)).or_default();
        link.messages += 1;
        link.elements += payload.len() as u64;
        if fresh {
            link.rounds += 1;
        }
        self.counters[p].sent_elements += payload.len() as u64;
        self.counters[p].sent_messages += 1;
        self.transport.send(to, Message { phase, payload })
    }

    pub fn recv_raw(&mut self, from: usize, count: usize) -> Result<Vec<u64>> {
        let msg = self.transport.recv(from, self.timeout)?;
        if msg.phase != self.phase {
            return Err(Error::Malformed(format!("phase mismatch from party {from}")));
        }
        if msg.payload.len() != count {
            return Err(Error::CountMismatch { from, expected: count, got: msg.payload.len() });
        }
        let p = self.phase.idx();
        if self.awaiting[p] {
            self.counters[p].rounds += 1;
            self.awaiting[p] = false;
        }
        self.counters[p].recv_elements += count as u64;
        self.absorb(1, from, self.phase, &msg.payload);
        Ok(msg.payload)
    }

    pub fn send<const L: u32>(&mut self, to: usize, values: &[Fp<L>]) -> Result<()> {
        self.send_raw(to, values.iter().map(|v| v.value()).collect())
    }

    pub fn recv<const L: u32>(&mut self, from: usize, count: usize) -> Result<Vec<Fp<L>>> {
        self.recv_raw(from, count)?
            .into_iter()
            .map(|v| Fp::from_canonical(v).map_err(|_| Error::Malformed(format!("non-canonical element from {from}"))))
            .collect()
    }

    fn flight(&mut self) {
        self.counters[self.phase.idx()].flights += 1;
    }

    /// Everybody sends `values` to party 1. Party 1 gets all contributions
    /// indexed by sender (its own first).
    pub fn gather_at_p1<const L: u32>(&mut self, values: Vec<Fp<L>>) -> Result<Option<Vec<Vec<Fp<L>>>>> {
        self.flight();
        if self.id != 1 {
            self.send(1, &values)?;
            return Ok(None);
        }
        let count = values.len();
        let mut all = Vec::with_capacity(self.n);
        all.push(values);
        for j in 2..=self.n {
            all.push(self.recv(j, count)?);
        }
        Ok(Some(all))
    }

    /// Party 1 sends `outgoing[j - 1]` to party `j`; everybody returns its part.
    pub fn scatter_from_p1<const L: u32>(
        &mut self,
        outgoing: Option<Vec<Vec<Fp<L>>>>,
        count: usize,
    ) -> Result<Vec<Fp<L>>> {
        self.flight();
        if self.id != 1 {
            return self.recv(1, count);
        }
        let outgoing = outgoing.ok_or_else(|| Error::InvalidConfig("party 1 must provide scatter data".into()))?;
        let mut mine = Vec::new();
        for (j, v) in outgoing.into_iter().enumerate() {
            if v.len() != count {
                return Err(Error::CountMismatch { from: 1, expected: count, got: v.len() });
            }
            if j == 0 {
                mine = v;
            } else {
                self.send(j + 1, &v)?;
            }
        }
        Ok(mine)
    }

    pub fn broadcast_from_p1<const L: u32>(&mut self, values: Option<Vec<Fp<L>>>, count: usize) -> Result<Vec<Fp<L>>> {
        self.flight();
        if self.id != 1 {
            return self.recv(1, count);
        }
        let values = values.ok_or_else(|| Error::InvalidConfig("party 1 must provide broadcast data".into()))?;
        for j in 2..=self.n {
            self.send(j, &values)?;
        }
        Ok(values)
    }

    /// All-to-all: `outgoing[j - 1]` goes to party `j`. Returns what every
    /// party sent to us, indexed by sender (our own entry passes through).
    pub fn exchange_all<const L: u32>(&mut self, outgoing: Vec<Vec<Fp<L>>>) -> Result<Vec<Vec<Fp<L>>>> {
        self.flight();
        if outgoing.len() != self.n {
            return Err(Error::ShapeMismatch("exchange_all needs one vector per party".into()));
        }
        let count = outgoing[0].len();
        let mut incoming: Vec<Vec<Fp<L>>> = vec![Vec::new(); self.n];
        for (j, v) in outgoing.into_iter().enumerate() {
            if j + 1 == self.id {
                incoming[j] = v;
            } else {
                self.send(j + 1, &v)?;
            }
        }
        for j in 1..=self.n {
            if j != self.id {
                incoming[j - 1] = self.recv(j, count)?;
            }
        }
        Ok(incoming)
    }
}

/// Everything a party needs to run protocols.
pub struct Party<const L: u32> {
    pub id: usize,
    pub cfg: Arc<PackingConfig<L>>,
    pub net: Net,
    pub rng: ChaCha20Rng,
    pub material: Material<L>,
    pub ell_x: u32,
}

/// Independent per-party randomness derived from a common seed.
pub fn party_rng(seed: u64, id: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

impl<const L: u32> Party<L> {
    pub fn new(cfg: Arc<PackingConfig<L>>, net: Net, seed: u64, ell_x: u32, material: Material<L>) -> Self {
        let id = net.id();
        Party { id, cfg, net, rng: party_rng(seed, id), material, ell_x }
    }

    pub fn n(&self) -> usize {
        self.cfg.n()
    }
    pub fn d(&self) -> usize {
        self.cfg.d()
    }
    pub fn k(&self) -> usize {
        self.cfg.k()
    }
}

/// Parameters shared by the in-process runners.
#[derive(Clone, Copy, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub ell_x: u32,
    pub network: NetworkModel,
    pub timeout: Duration,
}

impl RunConfig {
    pub fn new(seed: u64, ell_x: u32) -> Self {
        RunConfig { seed, ell_x, network: NetworkModel::lan(), timeout: DEFAULT_TIMEOUT }
    }
}

pub struct RunOutcome<const L: u32, R> {
    pub outputs: Vec<R>,
    pub stats: ChannelStats,
    pub transcripts: Vec<[u8; 32]>,
    pub leftover: Vec<Material<L>>,
    pub wall: Duration,
}

/// Runs `f` once per party on its own thread over the given transports.
/// `materials[j - 1]` is handed to party `j`.
pub fn run_parties<const L: u32, R, F>(
    cfg: &Arc<PackingConfig<L>>,
    run: &RunConfig,
    transports: Vec<Box<dyn Transport>>,
    materials: Vec<Material<L>>,
    f: F,
) -> Result<RunOutcome<L, R>>
where
    R: Send,
    F: Fn(&mut Party<L>) -> Result<R> + Sync,
{
    let n = cfg.n();
    if transports.len() != n || materials.len() != n {
        return Err(Error::InvalidConfig("need one transport and one material store per party".into()));
    }
    let start = Instant::now();
    let results: Vec<Result<(R, ChannelStats, [u8; 32], Material<L>)>> = thread::scope(|scope| {
        let handles: Vec<_> = transports
            .into_iter()
            .zip(materials)
            .map(|(t, m)| {
                let f = &f;
                let cfg = cfg.clone();
                scope.spawn(move || {
                    let mut net = Net::new(t);
                    net.set_timeout(run.timeout);
                    let mut party = Party::new(cfg, net, run.seed, run.ell_x, m);
                    let out = f(&mut party)?;
                    let stats = party.net.stats();
                    let hash = party.net.transcript_hash();
                    Ok((out, stats, hash, party.material))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::Malformed("party thread panicked".into())))).collect()
    });
    let wall = start.elapsed();
    // report the root cause rather than the disconnects it triggered elsewhere
    if results.iter().any(|r| r.is_err()) {
        let mut errs: Vec<Error> = results.into_iter().filter_map(|r| r.err()).collect();
        let pos = errs.iter().position(|e| !matches!(e.root(), Error::PeerDisconnected(_))).unwrap_or(0);
        return Err(errs.swap_remove(pos));
    }
    let mut outcome =
        RunOutcome { outputs: Vec::new(), stats: ChannelStats::default(), transcripts: Vec::new(), leftover: Vec::new(), wall };
    for r in results {
        let (o, s, h, m) = r?;
        outcome.outputs.push(o);
        outcome.stats.merge(&s);
        outcome.transcripts.push(h);
        outcome.leftover.push(m);
    }
    Ok(outcome)
}

/// Runs all parties in-process over the simulated network.
pub fn run_simulated<const L: u32, R, F>(
    cfg: &Arc<PackingConfig<L>>,
    run: &RunConfig,
    materials: Vec<Material<L>>,
    f: F,
) -> Result<RunOutcome<L, R>>
where
    R: Send,
    F: Fn(&mut Party<L>) -> Result<R> + Sync,
{
    let transports = sim_fabric(cfg.n(), run.network).into_iter().map(|e| Box::new(e) as Box<dyn Transport>).collect();
    run_parties(cfg, run, transports, materials, f)
}

/// Runs all parties in-process over real TCP connections on localhost.
pub fn run_tcp_local<const L: u32, R, F>(
    cfg: &Arc<PackingConfig<L>>,
    run: &RunConfig,
    materials: Vec<Material<L>>,
    f: F,
) -> Result<RunOutcome<L, R>>
where
    R: Send,
    F: Fn(&mut Party<L>) -> Result<R> + Sync,
{
    let n = cfg.n();
    let listeners: Vec<TcpListener> = (0..n).map(|_| TcpListener::bind("127.0.0.1:0")).collect::<std::io::Result<_>>()?;
    let addrs: Vec<SocketAddr> = listeners.iter().map(|l| l.local_addr()).collect::<std::io::Result<_>>()?;
    let timeout = run.timeout;
    let endpoints: Vec<Result<TcpEndpoint>> = thread::scope(|scope| {
        let handles: Vec<_> = listeners
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let addrs = &addrs;
                scope.spawn(move || TcpEndpoint::establish(i + 1, l, addrs, timeout))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::Malformed("connect thread panicked".into())))).collect()
    });
    let transports = endpoints
        .into_iter()
        .map(|e| e.map(|e| Box::new(e) as Box<dyn Transport>))
        .collect::<Result<Vec<_>>>()?;
    run_parties(cfg, run, transports, materials, f)
}
