//! Process-group communicator over loopback TCP.
//!
//! Ranks find each other through environment variables (`PSM_COMM_ADDR`,
//! `PSM_COMM_RANK`, `PSM_COMM_SIZE`, optional `PSM_COMM_TIMEOUT_SECS`). Rank 0
//! listens on `PSM_COMM_ADDR` and relays every collective (star topology).
//! Bulk point-to-point traffic goes over direct rank-to-rank connections.
//!
//! Every frame is a little-endian `u32` payload length, a one-byte tag and the
//! payload. All blocking reads are bounded by the collective timeout, so a rank
//! that skips a collective turns into [`CommError::PeerLost`] on its peers
//! instead of a hang.

use std::cell::RefCell;
use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::rc::{Rc, Weak};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

pub const ENV_ADDR: &str = "PSM_COMM_ADDR";
pub const ENV_RANK: &str = "PSM_COMM_RANK";
pub const ENV_SIZE: &str = "PSM_COMM_SIZE";
pub const ENV_TIMEOUT: &str = "PSM_COMM_TIMEOUT_SECS";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
/// Cap on broadcast and gather payloads.
pub const MAX_CONTROL_PAYLOAD: usize = 16 << 20;

pub const TAG_HELLO: u8 = 1;
pub const TAG_BCAST: u8 = 2;
pub const TAG_GATHER: u8 = 3;
pub const TAG_BARRIER: u8 = 4;
pub const TAG_DATA: u8 = 5;
pub const TAG_BYE: u8 = 6;

#[derive(Debug, Error)]
pub enum CommError {
    #[error("rendezvous incomplete: {0}")]
    RendezvousTimeout(String),
    #[error("malformed communicator environment: {0}")]
    EnvMalformed(String),
    #[error("lost peer rank {peer}: {reason}")]
    PeerLost { peer: usize, reason: String },
    #[error("payload of {len} bytes exceeds the {max} byte limit")]
    PayloadTooLarge { len: usize, max: usize },
    #[error("an implicitly initialized communicator is already live in this process")]
    AlreadyInitialized,
    #[error("communicator runtime has been finalized")]
    Finalized,
    #[error("invalid rank {rank} for communicator of size {size}")]
    InvalidRank { rank: usize, size: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CommError {
    pub fn name(&self) -> &'static str {
        match self {
            CommError::RendezvousTimeout(_) => "RendezvousTimeout",
            CommError::EnvMalformed(_) => "EnvMalformed",
            CommError::PeerLost { .. } => "PeerLost",
            CommError::PayloadTooLarge { .. } => "PayloadTooLarge",
            CommError::AlreadyInitialized => "AlreadyInitialized",
            CommError::Finalized => "Finalized",
            CommError::InvalidRank { .. } => "InvalidRank",
            CommError::Io(_) => "IoFailed",
        }
    }
}

pub type CommResult<T> = std::result::Result<T, CommError>;

/// Where and how to join a process group.
#[derive(Clone, Debug)]
pub struct CommConfig {
    pub addr: String,
    pub rank: usize,
    pub size: usize,
    pub timeout: Duration,
}

impl CommConfig {
    /// Reads the rendezvous variables; `Ok(None)` when none are set.
    pub fn from_env() -> CommResult<Option<CommConfig>> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> CommResult<Option<CommConfig>> {
        let (addr, rank, size) = (get(ENV_ADDR), get(ENV_RANK), get(ENV_SIZE));
        let (addr, rank, size) = match (addr, rank, size) {
            (None, None, None) => return Ok(None),
            (Some(a), Some(r), Some(s)) => (a, r, s),
            _ => {
                return Err(CommError::EnvMalformed(format!(
                    "{ENV_ADDR}, {ENV_RANK} and {ENV_SIZE} must be set together"
                )))
            }
        };
        let rank: usize = rank
            .trim()
            .parse()
            .map_err(|_| CommError::EnvMalformed(format!("{ENV_RANK}={rank}")))?;
        let size: usize = size
            .trim()
            .parse()
            .map_err(|_| CommError::EnvMalformed(format!("{ENV_SIZE}={size}")))?;
        if size == 0 || rank >= size {
            return Err(CommError::EnvMalformed(format!("rank {rank} / size {size}")));
        }
        let timeout = match get(ENV_TIMEOUT) {
            None => DEFAULT_TIMEOUT,
            Some(t) => t
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|s| s.is_finite() && *s > 0.0)
                .map(Duration::from_secs_f64)
                .ok_or_else(|| CommError::EnvMalformed(format!("{ENV_TIMEOUT}={t}")))?,
        };
        Ok(Some(CommConfig {
            addr,
            rank,
            size,
            timeout,
        }))
    }
}

static IMPLICIT_LIVE: AtomicBool = AtomicBool::new(false);

thread_local! {
    static WORLD: RefCell<Weak<RefCell<Transport>>> = const { RefCell::new(Weak::new()) };
}

/// Handle on a process group. Confined to the thread that created it.
#[derive(Debug)]
pub struct Communicator {
    rank: usize,
    size: usize,
    owns_runtime: bool,
    transport: Option<Rc<RefCell<Transport>>>,
    finalized: bool,
}

impl Communicator {
    /// Single-process group: rank 0 of 1.
    pub fn solo() -> Self {
        Communicator {
            rank: 0,
            size: 1,
            owns_runtime: true,
            transport: None,
            finalized: false,
        }
    }

    /// Joins the group described by the environment, or falls back to
    /// [`Communicator::solo`] when no rendezvous variables are set. The
    /// returned handle owns the runtime.
    pub fn init_implicit() -> CommResult<Self> {
        match CommConfig::from_env()? {
            None => Ok(Self::solo()),
            Some(cfg) if cfg.size == 1 => Ok(Self::solo()),
            Some(cfg) => {
                if IMPLICIT_LIVE.swap(true, Ordering::SeqCst) {
                    return Err(CommError::AlreadyInitialized);
                }
                match Self::init(cfg) {
                    Ok(comm) => {
                        comm.transport.as_ref().expect("multi-rank").borrow_mut().implicit = true;
                        WORLD.with(|w| {
                            *w.borrow_mut() = Rc::downgrade(comm.transport.as_ref().expect("multi-rank"))
                        });
                        Ok(comm)
                    }
                    Err(e) => {
                        IMPLICIT_LIVE.store(false, Ordering::SeqCst);
                        Err(e)
                    }
                }
            }
        }
    }

    /// Attaches to the live implicit runtime of this thread if there is one,
    /// otherwise initializes it implicitly.
    pub fn world() -> CommResult<Self> {
        let live = WORLD.with(|w| w.borrow().upgrade());
        match live {
            Some(t) if t.borrow().alive => {
                let (rank, size) = {
                    let t = t.borrow();
                    (t.rank, t.size)
                };
                Ok(Communicator {
                    rank,
                    size,
                    owns_runtime: false,
                    transport: Some(t),
                    finalized: false,
                })
            }
            _ => Self::init_implicit(),
        }
    }

    /// Explicitly joins a group. The returned handle owns the runtime.
    pub fn init(cfg: CommConfig) -> CommResult<Self> {
        if cfg.size == 0 || cfg.rank >= cfg.size {
            return Err(CommError::InvalidRank {
                rank: cfg.rank,
                size: cfg.size,
            });
        }
        if cfg.size == 1 {
            return Ok(Self::solo());
        }
        let transport = Transport::rendezvous(&cfg)?;
        Ok(Communicator {
            rank: cfg.rank,
            size: cfg.size,
            owns_runtime: true,
            transport: Some(Rc::new(RefCell::new(transport))),
            finalized: false,
        })
    }

    /// A second handle on the same runtime that never tears it down.
    pub fn attach(&self) -> Communicator {
        Communicator {
            rank: self.rank,
            size: self.size,
            owns_runtime: false,
            transport: self.transport.clone(),
            finalized: false,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_master(&self) -> bool {
        self.rank == 0
    }

    pub fn owns_runtime(&self) -> bool {
        self.owns_runtime
    }

    pub fn timeout(&self) -> Duration {
        self.transport
            .as_ref()
            .map_or(DEFAULT_TIMEOUT, |t| t.borrow().timeout)
    }

    fn live(&self) -> CommResult<Option<std::cell::RefMut<'_, Transport>>> {
        if self.finalized {
            return Err(CommError::Finalized);
        }
        match &self.transport {
            None => Ok(None),
            Some(t) => {
                let t = t.borrow_mut();
                if !t.alive {
                    return Err(CommError::Finalized);
                }
                Ok(Some(t))
            }
        }
    }

    fn check_rank(&self, rank: usize) -> CommResult<()> {
        if rank >= self.size {
            return Err(CommError::InvalidRank {
                rank,
                size: self.size,
            });
        }
        Ok(())
    }

    /// Every rank returns `root`'s payload.
    pub fn broadcast(&self, root: usize, payload: &[u8]) -> CommResult<Vec<u8>> {
        self.check_rank(root)?;
        if self.rank == root && payload.len() > MAX_CONTROL_PAYLOAD {
            return Err(CommError::PayloadTooLarge {
                len: payload.len(),
                max: MAX_CONTROL_PAYLOAD,
            });
        }
        match self.live()? {
            None => Ok(payload.to_vec()),
            Some(mut t) => t.broadcast(root, payload),
        }
    }

    /// Returns all payloads ordered by rank at `root`, and an empty list
    /// everywhere else.
    pub fn gather(&self, root: usize, payload: &[u8]) -> CommResult<Vec<Vec<u8>>> {
        self.check_rank(root)?;
        if payload.len() > MAX_CONTROL_PAYLOAD {
            return Err(CommError::PayloadTooLarge {
                len: payload.len(),
                max: MAX_CONTROL_PAYLOAD,
            });
        }
        match self.live()? {
            None => Ok(vec![payload.to_vec()]),
            Some(mut t) => t.gather(root, payload),
        }
    }

    pub fn barrier(&self) -> CommResult<()> {
        match self.live()? {
            None => Ok(()),
            Some(mut t) => t.barrier(),
        }
    }

    /// Point-to-point send with no payload cap.
    pub fn send(&self, dest: usize, payload: &[u8]) -> CommResult<()> {
        self.check_rank(dest)?;
        if dest == self.rank {
            return Err(CommError::InvalidRank {
                rank: dest,
                size: self.size,
            });
        }
        match self.live()? {
            None => unreachable!("a solo communicator has no other rank"),
            Some(mut t) => t.send(dest, payload),
        }
    }

    pub fn recv(&self, src: usize) -> CommResult<Vec<u8>> {
        self.check_rank(src)?;
        if src == self.rank {
            return Err(CommError::InvalidRank {
                rank: src,
                size: self.size,
            });
        }
        match self.live()? {
            None => unreachable!("a solo communicator has no other rank"),
            Some(mut t) => t.recv(src),
        }
    }

    /// Ends this handle. Tears the transport down only if the handle owns it.
    pub fn finalize(mut self) -> CommResult<()> {
        self.finalize_in_place()
    }

    fn finalize_in_place(&mut self) -> CommResult<()> {
        if self.finalized {
            return Ok(());
        }
        self.finalized = true;
        if !self.owns_runtime {
            return Ok(());
        }
        match self.transport.take() {
            None => Ok(()),
            Some(t) => t.borrow_mut().teardown(),
        }
    }
}

impl Drop for Communicator {
    fn drop(&mut self) {
        if self.owns_runtime && !self.finalized {
            if let Some(t) = self.transport.take() {
                t.borrow_mut().close();
            }
        }
    }
}

#[derive(Debug)]
struct Transport {
    rank: usize,
    size: usize,
    timeout: Duration,
    /// Control links: to every other rank on rank 0, to rank 0 elsewhere.
    links: HashMap<usize, TcpStream>,
    data_listener: TcpListener,
    peer_addrs: Vec<SocketAddr>,
    data_out: HashMap<usize, TcpStream>,
    data_in: HashMap<usize, TcpStream>,
    alive: bool,
    implicit: bool,
}

fn resolve(addr: &str) -> CommResult<SocketAddr> {
    addr.to_socket_addrs()
        .map_err(|e| CommError::EnvMalformed(format!("{ENV_ADDR}={addr}: {e}")))?
        .next()
        .ok_or_else(|| CommError::EnvMalformed(format!("{ENV_ADDR}={addr} does not resolve")))
}

fn write_frame(stream: &mut TcpStream, tag: u8, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame exceeds u32 length"))?;
    let mut header = [0u8; 5];
    header[..4].copy_from_slice(&len.to_le_bytes());
    header[4] = tag;
    stream.write_all(&header)?;
    stream.write_all(payload)?;
    stream.flush()
}

fn read_frame(stream: &mut TcpStream, timeout: Duration) -> io::Result<(u8, Vec<u8>)> {
    stream.set_read_timeout(Some(timeout))?;
    let mut header = [0u8; 5];
    stream.read_exact(&mut header)?;
    let len = u32::from_le_bytes(header[..4].try_into().expect("4 bytes")) as usize;
    let mut payload = vec![0u8; len];
    stream.read_exact(&mut payload)?;
    Ok((header[4], payload))
}

fn lost(peer: usize, reason: impl std::fmt::Display) -> CommError {
    CommError::PeerLost {
        peer,
        reason: reason.to_string(),
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn take_u32(buf: &mut &[u8]) -> Option<u32> {
    let (head, rest) = buf.split_at_checked(4)?;
    *buf = rest;
    Some(u32::from_le_bytes(head.try_into().ok()?))
}

fn take_bytes<'a>(buf: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
    let (head, rest) = buf.split_at_checked(n)?;
    *buf = rest;
    Some(head)
}

fn encode_list(items: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, items.len() as u32);
    for item in items {
        put_u32(&mut out, item.len() as u32);
        out.extend_from_slice(item);
    }
    out
}

fn decode_list(mut buf: &[u8]) -> Option<Vec<Vec<u8>>> {
    let n = take_u32(&mut buf)?;
    let mut items = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let len = take_u32(&mut buf)? as usize;
        items.push(take_bytes(&mut buf, len)?.to_vec());
    }
    buf.is_empty().then_some(items)
}

fn accept_until(listener: &TcpListener, deadline: Instant) -> io::Result<TcpStream> {
    listener.set_nonblocking(true)?;
    loop {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                stream.set_nodelay(true)?;
                return Ok(stream);
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(io::Error::new(io::ErrorKind::TimedOut, "accept timed out"));
                }
                thread::sleep(Duration::from_millis(1));
            }
            Err(e) => return Err(e),
        }
    }
}

fn remaining(deadline: Instant) -> Duration {
    deadline
        .saturating_duration_since(Instant::now())
        .max(Duration::from_millis(1))
}

impl Transport {
    fn rendezvous(cfg: &CommConfig) -> CommResult<Transport> {
        let deadline = Instant::now() + cfg.timeout;
        let root_addr = resolve(&cfg.addr)?;
        let incomplete = |what: String| CommError::RendezvousTimeout(what);
        let mut links = HashMap::new();
        let (data_listener, peer_addrs) = if cfg.rank == 0 {
            let listener = TcpListener::bind(root_addr)?;
            let mut addrs: Vec<Option<SocketAddr>> = vec![None; cfg.size];
            addrs[0] = Some(listener.local_addr()?);
            while links.len() < cfg.size - 1 {
                let mut stream = accept_until(&listener, deadline).map_err(|_| {
                    incomplete(format!("{} of {} ranks joined", links.len() + 1, cfg.size))
                })?;
                let (tag, hello) = read_frame(&mut stream, remaining(deadline))
                    .map_err(|e| incomplete(format!("hello: {e}")))?;
                let mut buf = hello.as_slice();
                let parsed = (|| {
                    let rank = take_u32(&mut buf)? as usize;
                    let size = take_u32(&mut buf)? as usize;
                    let addr: SocketAddr = std::str::from_utf8(buf).ok()?.parse().ok()?;
                    Some((rank, size, addr))
                })();
                match parsed {
                    Some((rank, size, addr))
                        if tag == TAG_HELLO
                            && size == cfg.size
                            && rank > 0
                            && rank < cfg.size
                            && addrs[rank].is_none() =>
                    {
                        addrs[rank] = Some(addr);
                        links.insert(rank, stream);
                    }
                    _ => return Err(incomplete("malformed or duplicate hello".into())),
                }
            }
            let addrs: Vec<SocketAddr> = addrs.into_iter().map(|a| a.expect("all joined")).collect();
            let table = encode_list(
                &addrs
                    .iter()
                    .map(|a| a.to_string().into_bytes())
                    .collect::<Vec<_>>(),
            );
            for (rank, stream) in links.iter_mut() {
                write_frame(stream, TAG_HELLO, &table)
                    .map_err(|e| incomplete(format!("reply to rank {rank}: {e}")))?;
            }
            (listener, addrs)
        } else {
            let listener = TcpListener::bind(SocketAddr::new(root_addr.ip(), 0))?;
            let mut stream = loop {
                match TcpStream::connect_timeout(&root_addr, remaining(deadline)) {
                    Ok(s) => break s,
                    Err(_) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                    Err(e) => return Err(incomplete(format!("cannot reach rank 0: {e}"))),
                }
            };
            stream.set_nodelay(true)?;
            let mut hello = Vec::new();
            put_u32(&mut hello, cfg.rank as u32);
            put_u32(&mut hello, cfg.size as u32);
            hello.extend_from_slice(listener.local_addr()?.to_string().as_bytes());
            write_frame(&mut stream, TAG_HELLO, &hello)
                .map_err(|e| incomplete(format!("hello: {e}")))?;
            let (tag, reply) = read_frame(&mut stream, remaining(deadline))
                .map_err(|e| incomplete(format!("waiting for peers: {e}")))?;
            let addrs = (tag == TAG_HELLO)
                .then(|| decode_list(&reply))
                .flatten()
                .and_then(|list| {
                    list.iter()
                        .map(|a| std::str::from_utf8(a).ok()?.parse::<SocketAddr>().ok())
                        .collect::<Option<Vec<_>>>()
                })
                .filter(|a| a.len() == cfg.size)
            .ok_or_else(|| incomplete("malformed peer table".into()))?;
            links.insert(0, stream);
            (listener, addrs)
        };
        Ok(Transport {
            rank: cfg.rank,
            size: cfg.size,
            timeout: cfg.timeout,
            links,
            data_listener,
            peer_addrs,
            data_out: HashMap::new(),
            data_in: HashMap::new(),
            alive: true,
            implicit: false,
        })
    }

    fn send_ctl(&mut self, peer: usize, tag: u8, payload: &[u8]) -> CommResult<()> {
        let stream = self.links.get_mut(&peer).ok_or_else(|| lost(peer, "no link"))?;
        write_frame(stream, tag, payload).map_err(|e| lost(peer, e))
    }

    fn recv_ctl(&mut self, peer: usize, tag: u8) -> CommResult<Vec<u8>> {
        let timeout = self.timeout;
        let stream = self.links.get_mut(&peer).ok_or_else(|| lost(peer, "no link"))?;
        let (got, payload) = read_frame(stream, timeout).map_err(|e| lost(peer, e))?;
        if got != tag {
            return Err(lost(
                peer,
                format!("collective mismatch: expected tag {tag}, got {got}"),
            ));
        }
        Ok(payload)
    }

    fn broadcast(&mut self, root: usize, payload: &[u8]) -> CommResult<Vec<u8>> {
        if self.rank == 0 {
            let data = if root == 0 {
                payload.to_vec()
            } else {
                self.recv_ctl(root, TAG_BCAST)?
            };
            for peer in 1..self.size {
                if peer != root {
                    self.send_ctl(peer, TAG_BCAST, &data)?;
                }
            }
            Ok(data)
        } else if self.rank == root {
            self.send_ctl(0, TAG_BCAST, payload)?;
            Ok(payload.to_vec())
        } else {
            self.recv_ctl(0, TAG_BCAST)
        }
    }

    fn gather(&mut self, root: usize, payload: &[u8]) -> CommResult<Vec<Vec<u8>>> {
        if self.rank == 0 {
            let mut all = Vec::with_capacity(self.size);
            all.push(payload.to_vec());
            for peer in 1..self.size {
                all.push(self.recv_ctl(peer, TAG_GATHER)?);
            }
            if root == 0 {
                Ok(all)
            } else {
                self.send_ctl(root, TAG_GATHER, &encode_list(&all))?;
                Ok(Vec::new())
            }
        } else {
            self.send_ctl(0, TAG_GATHER, payload)?;
            if self.rank == root {
                let list = self.recv_ctl(0, TAG_GATHER)?;
                decode_list(&list).ok_or_else(|| lost(0, "malformed gather reply"))
            } else {
                Ok(Vec::new())
            }
        }
    }

    fn barrier(&mut self) -> CommResult<()> {
        if self.rank == 0 {
            for peer in 1..self.size {
                self.recv_ctl(peer, TAG_BARRIER)?;
            }
            for peer in 1..self.size {
                self.send_ctl(peer, TAG_BARRIER, &[])?;
            }
        } else {
            self.send_ctl(0, TAG_BARRIER, &[])?;
            self.recv_ctl(0, TAG_BARRIER)?;
        }
        Ok(())
    }

    fn send(&mut self, dest: usize, payload: &[u8]) -> CommResult<()> {
        if u32::try_from(payload.len()).is_err() {
            return Err(CommError::PayloadTooLarge {
                len: payload.len(),
                max: u32::MAX as usize,
            });
        }
        if !self.data_out.contains_key(&dest) {
            let mut stream = TcpStream::connect_timeout(&self.peer_addrs[dest], self.timeout)
                .map_err(|e| lost(dest, e))?;
            stream.set_nodelay(true)?;
            write_frame(&mut stream, TAG_HELLO, &(self.rank as u32).to_le_bytes())
                .map_err(|e| lost(dest, e))?;
            self.data_out.insert(dest, stream);
        }
        let stream = self.data_out.get_mut(&dest).expect("connected above");
        write_frame(stream, TAG_DATA, payload).map_err(|e| lost(dest, e))
    }

    fn recv(&mut self, src: usize) -> CommResult<Vec<u8>> {
        let deadline = Instant::now() + self.timeout;
        while !self.data_in.contains_key(&src) {
            let mut stream = accept_until(&self.data_listener, deadline)
                .map_err(|e| lost(src, format!("no data connection: {e}")))?;
            let (tag, hello) =
                read_frame(&mut stream, remaining(deadline)).map_err(|e| lost(src, e))?;
            let from = match (tag, <[u8; 4]>::try_from(hello.as_slice())) {
                (TAG_HELLO, Ok(b)) => u32::from_le_bytes(b) as usize,
                _ => return Err(lost(src, "malformed data hello")),
            };
            self.data_in.insert(from, stream);
        }
        let timeout = self.timeout;
        let stream = self.data_in.get_mut(&src).expect("present");
        let (tag, payload) = read_frame(stream, timeout).map_err(|e| lost(src, e))?;
        if tag != TAG_DATA {
            return Err(lost(src, format!("expected data frame, got tag {tag}")));
        }
        Ok(payload)
    }

    fn teardown(&mut self) -> CommResult<()> {
        if !self.alive {
            return Ok(());
        }
        let result = if self.rank == 0 {
            // Peers that already vanished are not an error at teardown.
            for peer in 1..self.size {
                let _ = self.recv_ctl(peer, TAG_BYE);
            }
            Ok(())
        } else {
            self.send_ctl(0, TAG_BYE, &[])
        };
        self.close();
        result
    }

    fn close(&mut self) {
        for stream in self
            .links
            .values()
            .chain(self.data_in.values())
            .chain(self.data_out.values())
        {
            let _ = stream.shutdown(Shutdown::Both);
        }
        self.links.clear();
        self.data_in.clear();
        self.data_out.clear();
        self.alive = false;
        if self.implicit {
            self.implicit = false;
            IMPLICIT_LIVE.store(false, Ordering::SeqCst);
        }
    }
}

/// Reserves a free loopback port for a rank-0 listener.
pub fn free_loopback_addr() -> io::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    Ok(listener.local_addr()?.to_string())
}
