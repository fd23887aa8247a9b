//! Packet-log serialization and the collection channel.
//!
//! Two codecs: a headerless `dt_us,dx,dy` CSV, and a binary session format
//! (27-byte header followed by 8-byte frames). The collector accepts one
//! binary session per TCP connection, terminated by EOF, and persists it as
//! `<session>.csv` plus `<session>.meta` in its output directory.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use log::{info, warn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::sensor::{EventStream, Packet, SensorConfig};

pub const MAGIC: [u8; 4] = *b"MEM1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 27;
pub const FRAME_LEN: usize = 8;
/// Header: magic(4) version(1) dpi(4) poll(4) saturation(2) session id(12).
pub const SESSION_ID_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionHeader {
    pub version: u8,
    pub dpi: u32,
    pub poll_rate_hz: u32,
    pub count_saturation: u16,
    pub session_id: [u8; SESSION_ID_LEN],
}

impl SessionHeader {
    pub fn new(meta: &SensorConfig, session_id: [u8; SESSION_ID_LEN]) -> Self {
        Self {
            version: VERSION,
            dpi: meta.dpi,
            poll_rate_hz: meta.poll_rate_hz,
            count_saturation: meta.count_saturation,
            session_id,
        }
    }

    pub fn random(meta: &SensorConfig, rng: &mut impl Rng) -> Self {
        Self::new(meta, rng.gen())
    }

    pub fn session_hex(&self) -> String {
        self.session_id.iter().fold(String::with_capacity(2 * SESSION_ID_LEN), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Sensor settings carried by the header. The tracking limit is not
    /// transmitted and takes the default.
    pub fn sensor_config(&self) -> SensorConfig {
        SensorConfig {
            dpi: self.dpi,
            poll_rate_hz: self.poll_rate_hz,
            count_saturation: self.count_saturation,
            ..SensorConfig::default()
        }
    }

    /// `key=value` lines written next to each collected session.
    pub fn to_meta(&self) -> String {
        format!(
            "version={}\ndpi={}\npoll_rate_hz={}\ncount_saturation={}\nsession_id={}\n",
            self.version,
            self.dpi,
            self.poll_rate_hz,
            self.count_saturation,
            self.session_hex()
        )
    }
}

/// Parses the `key=value` lines produced by [`SessionHeader::to_meta`].
/// Missing keys take the defaults; unknown keys are ignored.
pub fn parse_meta(text: &str) -> Result<SessionHeader> {
    let mut hdr = SessionHeader::new(&SensorConfig::default(), [0; SESSION_ID_LEN]);
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line, msg };
        let (key, value) = raw
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, found '{raw}'")))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |_| err(format!("invalid value '{value}' for {key}"));
        match key {
            "version" => hdr.version = value.parse().map_err(bad)?,
            "dpi" => hdr.dpi = value.parse().map_err(bad)?,
            "poll_rate_hz" => hdr.poll_rate_hz = value.parse().map_err(bad)?,
            "count_saturation" => hdr.count_saturation = value.parse().map_err(bad)?,
            "session_id" => {
                if value.len() != 2 * SESSION_ID_LEN || !value.is_ascii() {
                    return Err(err(format!("session_id must be {} hex digits", 2 * SESSION_ID_LEN)));
                }
                for (i, b) in hdr.session_id.iter_mut().enumerate() {
                    *b = u8::from_str_radix(&value[2 * i..2 * i + 2], 16)
                        .map_err(|_| err(format!("session_id '{value}' is not hex")))?;
                }
            }
            _ => {}
        }
    }
    hdr.sensor_config().validate()?;
    Ok(hdr)
}

pub fn encode_csv(ev: &EventStream) -> String {
    let mut out = String::with_capacity(ev.len() * 12);
    for p in ev.packets() {
        let _ = writeln!(out, "{},{},{}", p.dt_us, p.dx, p.dy);
    }
    out
}

/// Parses `dt_us,dx,dy` lines. Errors carry the 1-based line number.
pub fn decode_csv(text: &str, meta: SensorConfig) -> Result<EventStream> {
    let sat = meta.count_saturation as i64;
    let mut packets = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        let err = |msg: String| Error::Parse { line, msg };
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        }
        let dt: i64 = fields[0]
            .parse()
            .map_err(|_| err(format!("dt_us '{}' is not an integer", fields[0])))?;
        if dt <= 0 || dt > u32::MAX as i64 {
            return Err(err(format!("dt_us must be in 1..=2^32-1, got {dt}")));
        }
        let mut counts = [0i64; 2];
        for (c, f) in counts.iter_mut().zip(&fields[1..]) {
            *c = f.parse().map_err(|_| err(format!("count '{f}' is not an integer")))?;
            if c.abs() > sat {
                return Err(err(format!("count {c} exceeds saturation {sat}")));
            }
        }
        packets.push(Packet::new(dt as u32, counts[0] as i32, counts[1] as i32));
    }
    EventStream::new(packets, meta)
}

pub fn encode_wire(hdr: &SessionHeader, ev: &EventStream) -> Result<Vec<u8>> {
    if hdr.version != VERSION {
        return Err(Error::Codec(format!("unsupported version {}", hdr.version)));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + FRAME_LEN * ev.len());
    out.extend_from_slice(&MAGIC);
    out.push(hdr.version);
    out.extend_from_slice(&hdr.dpi.to_le_bytes());
    out.extend_from_slice(&hdr.poll_rate_hz.to_le_bytes());
    out.extend_from_slice(&hdr.count_saturation.to_le_bytes());
    out.extend_from_slice(&hdr.session_id);
    for (i, p) in ev.packets().iter().enumerate() {
        let narrow = |v: i32| {
            i16::try_from(v).map_err(|_| Error::Codec(format!("packet {i}: count {v} does not fit in i16")))
        };
        out.extend_from_slice(&p.dt_us.to_le_bytes());
        out.extend_from_slice(&narrow(p.dx)?.to_le_bytes());
        out.extend_from_slice(&narrow(p.dy)?.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_header(bytes: &[u8]) -> Result<SessionHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Codec(format!(
            "truncated header: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Codec("bad magic".into()));
    }
    let version = bytes[4];
    if version != VERSION {
        return Err(Error::Codec(format!("unsupported version {version}")));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let mut session_id = [0u8; SESSION_ID_LEN];
    session_id.copy_from_slice(&bytes[15..HEADER_LEN]);
    Ok(SessionHeader {
        version,
        dpi: u32_at(5),
        poll_rate_hz: u32_at(9),
        count_saturation: u16::from_le_bytes([bytes[13], bytes[14]]),
        session_id,
    })
}

pub fn decode_wire(bytes: &[u8]) -> Result<(SessionHeader, EventStream)> {
    let hdr = decode_header(bytes)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() % FRAME_LEN != 0 {
        return Err(Error::Codec(format!(
            "truncated frame: {} trailing bytes",
            body.len() % FRAME_LEN
        )));
    }
    let packets = body
        .chunks_exact(FRAME_LEN)
        .map(|f| {
            Packet::new(
                u32::from_le_bytes([f[0], f[1], f[2], f[3]]),
                i16::from_le_bytes([f[4], f[5]]) as i32,
                i16::from_le_bytes([f[6], f[7]]) as i32,
            )
        })
        .collect();
    let ev = EventStream::new(packets, hdr.sensor_config()).map_err(|e| Error::Codec(e.to_string()))?;
    Ok((hdr, ev))
}

/// Streams one session to a collector and closes the connection. No retries.
pub fn collector_upload(addr: impl ToSocketAddrs, hdr: &SessionHeader, ev: &EventStream) -> Result<()> {
    let bytes = encode_wire(hdr, ev)?;
    let mut stream = TcpStream::connect(addr).map_err(Error::Transport)?;
    stream.write_all(&bytes).map_err(Error::Transport)?;
    stream.flush().map_err(Error::Transport)?;
    stream.shutdown(Shutdown::Write).map_err(Error::Transport)?;
    // Wait for the server to close its side so the session is fully handed over.
    let mut sink = [0u8; 64];
    loop {
        match stream.read(&mut sink) {
            Ok(0) => break,
            Ok(_) => continue,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) if e.kind() == io::ErrorKind::ConnectionReset => break,
            Err(e) => return Err(Error::Transport(e)),
        }
    }
    Ok(())
}

#[derive(Debug, Default)]
struct Counters {
    stored: AtomicUsize,
    rejected: AtomicUsize,
}

/// Handle to a running collector. Dropping it stops the accept loop.
pub struct Collector {
    addr: SocketAddr,
    output_dir: PathBuf,
    stop: Arc<AtomicBool>,
    counters: Arc<Counters>,
    acceptor: Option<JoinHandle<()>>,
}

impl Collector {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn output_dir(&self) -> &Path {
        &self.output_dir
    }

    /// Sessions persisted so far.
    pub fn stored(&self) -> usize {
        self.counters.stored.load(Ordering::SeqCst)
    }

    /// Connections discarded as malformed.
    pub fn rejected(&self) -> usize {
        self.counters.rejected.load(Ordering::SeqCst)
    }

    /// Blocks until the accept loop exits (it only exits on shutdown).
    pub fn wait(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock accept().
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Collector {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop_accepting();
        }
    }
}

/// Binds the collector and starts accepting sessions on a background thread.
pub fn collector_serve(bind: impl ToSocketAddrs, output_dir: impl AsRef<Path>) -> Result<Collector> {
    let output_dir = output_dir.as_ref().to_path_buf();
    fs::create_dir_all(&output_dir)?;
    if fs::metadata(&output_dir)?.permissions().readonly() {
        return Err(Error::param(format!("{} is not writable", output_dir.display())));
    }
    let listener = TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let counters = Arc::new(Counters::default());
    info!("collector listening on {addr}, writing to {}", output_dir.display());

    let acceptor = {
        let stop = Arc::clone(&stop);
        let counters = Arc::clone(&counters);
        let dir = output_dir.clone();
        thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let stream = match conn {
                    Ok(s) => s,
                    Err(e) => {
                        warn!("accept failed: {e}");
                        continue;
                    }
                };
                let counters = Arc::clone(&counters);
                let dir = dir.clone();
                thread::spawn(move || {
                    let peer = stream.peer_addr().ok();
                    match handle_session(stream, &dir) {
                        Ok(id) => {
                            info!("stored session {id} from {peer:?}");
                            counters.stored.fetch_add(1, Ordering::SeqCst);
                        }
                        Err(e) => {
                            warn!("discarded session from {peer:?}: {e}");
                            counters.rejected.fetch_add(1, Ordering::SeqCst);
                        }
                    }
                });
            }
        })
    };

    Ok(Collector {
        addr,
        output_dir,
        stop,
        counters,
        acceptor: Some(acceptor),
    })
}

fn handle_session(mut stream: TcpStream, dir: &Path) -> Result<String> {
    let mut bytes = Vec::new();
    stream.read_to_end(&mut bytes)?;
    let (hdr, ev) = decode_wire(&bytes)?;
    let id = hdr.session_hex();
    write_atomic(&dir.join(format!("{id}.csv")), encode_csv(&ev).as_bytes())?;
    write_atomic(&dir.join(format!("{id}.meta")), hdr.to_meta().as_bytes())?;
    let _ = stream.shutdown(Shutdown::Both);
    Ok(id)
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".part");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}
