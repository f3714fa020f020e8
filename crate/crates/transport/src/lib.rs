//! Real-network mode: the same session engines, fed by actual sockets.
//!
//! The sender paces a UDP burst on a fixed schedule and measures its own slop; the
//! receiver timestamps each datagram at dequeue with the monotonic clock, records
//! first and decodes later, and hands the engines a trace indistinguishable from a
//! simulated one. A framed TCP side channel carries the burst header, the slip
//! trailer, and the index announcement — everything public by design.
//!
//! Over loopback there is no link-layer ARQ, so the ±round-trip arrival clusters the
//! timing analysis hunts for will not appear; this mode validates plumbing and
//! timing tolerance, not the security model.

use erasurekey::protocol::{IndexAnnouncement, ReceivedPacket};
use erasurekey::wire::{KeyPacket, WIRE_SIZE};
use erasurekey::Nanos;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream, UdpSocket};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("socket error: {0}")]
    Socket(#[from] std::io::Error),
    #[error("burst end not detected within {waited_ms} ms")]
    Timeout { waited_ms: u64 },
    #[error("message of {bytes} bytes exceeds the {MAX_MESSAGE_BYTES}-byte cap")]
    TooLarge { bytes: usize },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("send gap of {got:?} is below the {MIN_SEND_GAP:?} floor")]
    GapTooSmall { got: Duration },
}

/// Pacing floor: below this, user-space scheduling slop swamps the schedule.
pub const MIN_SEND_GAP: Duration = Duration::from_millis(1);

/// Upper bound on one framed public-channel message.
pub const MAX_MESSAGE_BYTES: usize = 16 * 1024 * 1024;

/// A send deviating from its slot by more than this fraction of the gap is flagged.
const SLIP_FRACTION: u32 = 4;

/// How one packet's transmission went: where it was scheduled, where it actually
/// left, and whether the deviation was big enough to poison timing analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SendOutcome {
    pub index: u32,
    pub intended_ns: Nanos,
    pub actual_ns: Nanos,
    pub slipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SendReport {
    pub outcomes: Vec<SendOutcome>,
    /// Indices whose send slipped; both sides exclude these from key material.
    pub slipped_indices: Vec<u32>,
}

/// Emit the burst at a fixed interval, one datagram per packet. Scheduling is
/// absolute (slot k at `k * send_gap` from the first send), so local slop does not
/// accumulate; slop is measured per packet and reported, never hidden.
pub fn send_burst_udp(
    socket: &UdpSocket,
    dest: SocketAddr,
    packets: &[KeyPacket],
    send_gap: Duration,
) -> Result<SendReport, TransportError> {
    if send_gap < MIN_SEND_GAP {
        return Err(TransportError::GapTooSmall { got: send_gap });
    }
    let slip_bound = send_gap / SLIP_FRACTION;
    let origin = Instant::now();
    let mut outcomes = Vec::with_capacity(packets.len());
    let mut slipped_indices = Vec::new();

    for (k, packet) in packets.iter().enumerate() {
        let target = send_gap * k as u32;
        loop {
            let elapsed = origin.elapsed();
            if elapsed >= target {
                break;
            }
            let remaining = target - elapsed;
            if remaining > Duration::from_micros(500) {
                std::thread::sleep(remaining - Duration::from_micros(400));
            } else {
                std::hint::spin_loop();
            }
        }
        let actual = origin.elapsed();
        socket.send_to(&packet.encode(), dest)?;
        let deviation = actual.checked_sub(target).unwrap_or_default();
        let slipped = deviation > slip_bound;
        if slipped {
            slipped_indices.push(packet.index);
        }
        outcomes.push(SendOutcome {
            index: packet.index,
            intended_ns: target.as_nanos() as Nanos,
            actual_ns: actual.as_nanos() as Nanos,
            slipped,
        });
    }
    Ok(SendReport { outcomes, slipped_indices })
}

/// Burst-reception policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiveConfig {
    /// Only frames for this session are kept.
    pub session_id: u64,
    /// Stop as soon as this index arrives (the sender's last).
    pub final_index: Option<u32>,
    /// Stop after this long with no datagram at all (burst-end heuristic;
    /// 5 × send_gap by convention).
    pub idle_cutoff: Duration,
    /// Hard deadline for the whole burst.
    pub overall_timeout: Duration,
}

impl ReceiveConfig {
    pub fn new(session_id: u64, n: u32, send_gap: Duration) -> Self {
        Self {
            session_id,
            final_index: Some(n),
            idle_cutoff: send_gap * 5,
            // Generous: the nominal burst duration plus slack for a slow start.
            overall_timeout: send_gap * (n + 50) + Duration::from_secs(5),
        }
    }
}

/// Receive one burst. Each datagram is timestamped at dequeue on the monotonic
/// clock and buffered raw; decoding, integrity filtering, and first-wins
/// deduplication all happen after burst end so the timestamping path never blocks
/// on processing. Returns packets in arrival order.
pub fn receive_burst_udp(
    socket: &UdpSocket,
    config: &ReceiveConfig,
) -> Result<Vec<ReceivedPacket>, TransportError> {
    let origin = Instant::now();
    let deadline = origin + config.overall_timeout;
    let mut raw: Vec<(Nanos, Vec<u8>)> = Vec::new();
    let mut last_arrival = origin;
    let mut buf = [0u8; 512];

    loop {
        let now = Instant::now();
        if now >= deadline {
            if raw.is_empty() {
                return Err(TransportError::Timeout {
                    waited_ms: config.overall_timeout.as_millis() as u64,
                });
            }
            break; // Treat what we have as the burst; tail loss is protocol's problem.
        }
        let idle_deadline = last_arrival + config.idle_cutoff;
        if !raw.is_empty() && now >= idle_deadline {
            break;
        }
        let wait = if raw.is_empty() { deadline - now } else { idle_deadline.min(deadline) - now };
        socket.set_read_timeout(Some(wait.max(Duration::from_millis(1))))?;
        match socket.recv_from(&mut buf) {
            Ok((len, _)) => {
                let stamp = origin.elapsed().as_nanos() as Nanos;
                last_arrival = Instant::now();
                raw.push((stamp, buf[..len].to_vec()));
                // Early exit on the announced final index: peek without validating.
                if let (Some(n), true) = (config.final_index, len == WIRE_SIZE) {
                    let idx = u32::from_be_bytes(buf[12..16].try_into().expect("fixed slice"));
                    if idx == n {
                        break;
                    }
                }
            }
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut => {}
            Err(e) => return Err(e.into()),
        }
    }

    let mut seen = std::collections::BTreeSet::new();
    let mut received = Vec::with_capacity(raw.len());
    for (arrival, bytes) in raw {
        let Ok(packet) = KeyPacket::decode(&bytes) else { continue };
        if packet.session_id != config.session_id || !seen.insert(packet.index) {
            continue;
        }
        received.push(ReceivedPacket { packet, arrival });
    }
    Ok(received)
}

/// Sent ahead of the burst so the receiver knows what to wait for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstHeader {
    pub session_id: u64,
    pub n: u32,
    pub send_gap_ns: i64,
}

/// Receiver's acknowledgement that it is listening on the UDP port. The sender
/// must not start the burst before this arrives: datagrams queued in the kernel
/// before the receiver's first `recv` all get dequeue timestamps at loop entry,
/// which would flatten the arrival schedule the timing analysis depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstReady {
    pub session_id: u64,
}

/// Sent after the burst: which sends slipped their schedule slot. A late send is
/// indistinguishable from link-layer delay at the receiver, so both sides drop
/// these indices from key material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstTrailer {
    pub session_id: u64,
    pub slipped_indices: Vec<u32>,
}

/// Write one framed message: u32 big-endian length, then canonical JSON.
pub fn send_message<T: Serialize>(stream: &mut TcpStream, value: &T) -> Result<(), TransportError> {
    let body = erasurekey::canonical_json(value);
    if body.len() > MAX_MESSAGE_BYTES {
        return Err(TransportError::TooLarge { bytes: body.len() });
    }
    stream.write_all(&(body.len() as u32).to_be_bytes())?;
    stream.write_all(body.as_bytes())?;
    stream.flush()?;
    Ok(())
}

/// Read one framed message. The length prefix is checked against the cap before
/// any allocation.
pub fn recv_message<T: DeserializeOwned>(stream: &mut TcpStream) -> Result<T, TransportError> {
    let mut len_buf = [0u8; 4];
    stream.read_exact(&mut len_buf)?;
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > MAX_MESSAGE_BYTES {
        return Err(TransportError::TooLarge { bytes: len });
    }
    let mut body = vec![0u8; len];
    stream.read_exact(&mut body)?;
    serde_json::from_slice(&body).map_err(|e| TransportError::Malformed(e.to_string()))
}

/// Receive and structurally validate an index announcement.
pub fn recv_announcement(stream: &mut TcpStream) -> Result<IndexAnnouncement, TransportError> {
    let ann: IndexAnnouncement = recv_message(stream)?;
    ann.validate().map_err(|e| TransportError::Malformed(e.to_string()))?;
    Ok(ann)
}
