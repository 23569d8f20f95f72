//! ThinkGear (TGAM) packet codec and stream framer.
//!
//! Frame layout, as emitted by [`encode_packet`]:
//!
//! ```text
//! 0xAA                sync
//! PLENGTH             payload length (0..=169)
//! 0x02 QUALITY        poor-signal value, 0 = clean, 200 = off-head
//! 0x83 0x18 B0..B23   eight 24-bit big-endian band powers
//! 0x04 ATTENTION      eSense attention, 0..=100
//! 0x05 MEDITATION     eSense meditation, 0..=100
//! CHKSUM              !(sum of payload bytes mod 256)
//! ```
//!
//! Payload rows with codes below `0x80` carry one value byte; codes at or above
//! `0x80` are followed by a length byte. Rows the decoder does not know are
//! skipped with that rule and reported in [`DecodedFrame::unknown_codes`].

use std::io::{self, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SYNC: u8 = 0xAA;
/// Largest payload length a frame can declare; anything at or above the sync
/// value is rejected.
pub const MAX_PAYLOAD_LEN: usize = 169;
/// sync + length + payload + checksum
pub const MAX_FRAME_LEN: usize = MAX_PAYLOAD_LEN + 3;

pub const CODE_POOR_SIGNAL: u8 = 0x02;
pub const CODE_ATTENTION: u8 = 0x04;
pub const CODE_MEDITATION: u8 = 0x05;
pub const CODE_EEG_POWER: u8 = 0x83;
pub const CODE_EXTENDED: u8 = 0x55;
const EEG_POWER_LEN: u8 = 24;

pub const MAX_BAND_POWER: u32 = 0x00FF_FFFF;
pub const MAX_ESENSE: u8 = 100;
pub const MAX_POOR_SIGNAL: u8 = 200;

pub const BAND_NAMES: [&str; 8] = [
    "delta",
    "theta",
    "low_alpha",
    "high_alpha",
    "low_beta",
    "high_beta",
    "low_gamma",
    "mid_gamma",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("checksum mismatch: expected {expected:#04x}, found {found:#04x}")]
    ChecksumMismatch { expected: u8, found: u8 },
    #[error("truncated frame: need {needed} bytes, have {available}")]
    TruncatedFrame { needed: usize, available: usize },
    #[error("frame does not start with sync byte (found {0:#04x})")]
    MissingSync(u8),
    #[error("invalid payload length {0}")]
    InvalidLength(u8),
    #[error("malformed payload at byte {0}")]
    MalformedPayload(usize),
    #[error("payload has no {0} row")]
    MissingField(&'static str),
    #[error("{field} value {value} out of range")]
    FieldOutOfRange { field: &'static str, value: u32 },
}

/// The eight EEG band powers carried by a `0x83` row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BandPowers {
    pub delta: u32,
    pub theta: u32,
    pub low_alpha: u32,
    pub high_alpha: u32,
    pub low_beta: u32,
    pub high_beta: u32,
    pub low_gamma: u32,
    pub mid_gamma: u32,
}

impl BandPowers {
    pub fn from_array(v: [u32; 8]) -> Self {
        BandPowers {
            delta: v[0],
            theta: v[1],
            low_alpha: v[2],
            high_alpha: v[3],
            low_beta: v[4],
            high_beta: v[5],
            low_gamma: v[6],
            mid_gamma: v[7],
        }
    }

    pub fn to_array(self) -> [u32; 8] {
        [
            self.delta,
            self.theta,
            self.low_alpha,
            self.high_alpha,
            self.low_beta,
            self.high_beta,
            self.low_gamma,
            self.mid_gamma,
        ]
    }
}

/// One decoded sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TgamPacket {
    pub poor_signal: u8,
    pub bands: BandPowers,
    pub attention: u8,
    pub meditation: u8,
}

impl TgamPacket {
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.poor_signal > MAX_POOR_SIGNAL {
            return Err(CodecError::FieldOutOfRange {
                field: "poor_signal",
                value: self.poor_signal as u32,
            });
        }
        if self.attention > MAX_ESENSE {
            return Err(CodecError::FieldOutOfRange {
                field: "attention",
                value: self.attention as u32,
            });
        }
        if self.meditation > MAX_ESENSE {
            return Err(CodecError::FieldOutOfRange {
                field: "meditation",
                value: self.meditation as u32,
            });
        }
        for (name, v) in BAND_NAMES.iter().zip(self.bands.to_array()) {
            if v > MAX_BAND_POWER {
                return Err(CodecError::FieldOutOfRange {
                    field: name,
                    value: v,
                });
            }
        }
        Ok(())
    }
}

/// Ones' complement of the low byte of the payload sum.
pub fn compute_checksum(payload: &[u8]) -> u8 {
    !payload.iter().fold(0u8, |acc, &b| acc.wrapping_add(b))
}

pub fn encode_packet(p: &TgamPacket) -> Result<Vec<u8>, CodecError> {
    p.validate()?;
    let mut payload = Vec::with_capacity(32);
    payload.extend_from_slice(&[CODE_POOR_SIGNAL, p.poor_signal]);
    payload.extend_from_slice(&[CODE_EEG_POWER, EEG_POWER_LEN]);
    for v in p.bands.to_array() {
        payload.extend_from_slice(&v.to_be_bytes()[1..]);
    }
    payload.extend_from_slice(&[CODE_ATTENTION, p.attention, CODE_MEDITATION, p.meditation]);

    let mut frame = Vec::with_capacity(payload.len() + 3);
    frame.push(SYNC);
    frame.push(payload.len() as u8);
    frame.extend_from_slice(&payload);
    frame.push(compute_checksum(&payload));
    Ok(frame)
}

/// A checksum-valid frame and what the payload parser made of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedFrame {
    pub packet: TgamPacket,
    /// Bytes occupied by the frame, sync and checksum included.
    pub len: usize,
    pub unknown_codes: Vec<u8>,
}

/// Decode the frame at the start of `bytes`. Trailing bytes are ignored.
pub fn decode_frame(bytes: &[u8]) -> Result<DecodedFrame, CodecError> {
    let payload = frame_payload(bytes)?;
    let (packet, unknown_codes) = parse_payload(payload)?;
    Ok(DecodedFrame {
        packet,
        len: payload.len() + 3,
        unknown_codes,
    })
}

pub fn decode_packet(bytes: &[u8]) -> Result<TgamPacket, CodecError> {
    decode_frame(bytes).map(|f| f.packet)
}

fn frame_payload(bytes: &[u8]) -> Result<&[u8], CodecError> {
    match bytes.first() {
        None => {
            return Err(CodecError::TruncatedFrame {
                needed: 2,
                available: 0,
            })
        }
        Some(&b) if b != SYNC => return Err(CodecError::MissingSync(b)),
        _ => {}
    }
    let plen = *bytes.get(1).ok_or(CodecError::TruncatedFrame {
        needed: 2,
        available: bytes.len(),
    })?;
    if plen as usize > MAX_PAYLOAD_LEN {
        return Err(CodecError::InvalidLength(plen));
    }
    let needed = plen as usize + 3;
    if bytes.len() < needed {
        return Err(CodecError::TruncatedFrame {
            needed,
            available: bytes.len(),
        });
    }
    let payload = &bytes[2..2 + plen as usize];
    let found = bytes[2 + plen as usize];
    let expected = compute_checksum(payload);
    if found != expected {
        return Err(CodecError::ChecksumMismatch { expected, found });
    }
    Ok(payload)
}

fn parse_payload(payload: &[u8]) -> Result<(TgamPacket, Vec<u8>), CodecError> {
    let mut poor = None;
    let mut bands = None;
    let mut attention = None;
    let mut meditation = None;
    let mut unknown = Vec::new();

    let mut i = 0;
    while i < payload.len() {
        while i < payload.len() && payload[i] == CODE_EXTENDED {
            i += 1;
        }
        if i >= payload.len() {
            return Err(CodecError::MalformedPayload(i));
        }
        let code = payload[i];
        i += 1;
        let value: &[u8] = if code < 0x80 {
            let v = payload
                .get(i..i + 1)
                .ok_or(CodecError::MalformedPayload(i))?;
            i += 1;
            v
        } else {
            let len = *payload.get(i).ok_or(CodecError::MalformedPayload(i))? as usize;
            i += 1;
            let v = payload
                .get(i..i + len)
                .ok_or(CodecError::MalformedPayload(i))?;
            i += len;
            v
        };
        match code {
            CODE_POOR_SIGNAL => poor = Some(value[0]),
            CODE_ATTENTION => attention = Some(value[0]),
            CODE_MEDITATION => meditation = Some(value[0]),
            CODE_EEG_POWER => {
                if value.len() != EEG_POWER_LEN as usize {
                    return Err(CodecError::MalformedPayload(i - value.len() - 1));
                }
                let mut v = [0u32; 8];
                for (slot, c) in v.iter_mut().zip(value.chunks_exact(3)) {
                    *slot = u32::from_be_bytes([0, c[0], c[1], c[2]]);
                }
                bands = Some(BandPowers::from_array(v));
            }
            other => unknown.push(other),
        }
    }

    let packet = TgamPacket {
        poor_signal: poor.ok_or(CodecError::MissingField("poor_signal"))?,
        bands: bands.ok_or(CodecError::MissingField("eeg_power"))?,
        attention: attention.ok_or(CodecError::MissingField("attention"))?,
        meditation: meditation.ok_or(CodecError::MissingField("meditation"))?,
    };
    packet.validate()?;
    Ok((packet, unknown))
}

/// Why the framer discarded bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    /// Bytes before the next sync byte.
    Garbage,
    /// A sync byte followed by an impossible length.
    InvalidLength(u8),
    /// A complete frame whose checksum or payload was bad.
    Corrupt(CodecError),
    /// The stream ended inside a frame.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSkip {
    pub reason: SkipReason,
    /// Stream offset of the first skipped byte.
    pub offset: u64,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramedPacket {
    pub frame: DecodedFrame,
    pub offset: u64,
}

pub type FrameResult = Result<FramedPacket, FrameSkip>;

/// Resynchronizing frame reader over any byte source.
///
/// Every yielded item consumes at least one byte. A corrupt frame is skipped as
/// a unit unless a valid frame starts inside it, in which case skipping stops
/// at that frame.
pub struct FrameReader<R> {
    src: R,
    buf: Vec<u8>,
    pos: usize,
    /// Stream offset of `buf[0]`.
    base: u64,
    eof: bool,
    io_error: Option<io::Error>,
}

impl<R: Read> FrameReader<R> {
    pub fn new(src: R) -> Self {
        FrameReader {
            src,
            buf: Vec::new(),
            pos: 0,
            base: 0,
            eof: false,
            io_error: None,
        }
    }

    /// The I/O error that ended the stream early, if any.
    pub fn take_io_error(&mut self) -> Option<io::Error> {
        self.io_error.take()
    }

    fn available(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Fill until `want` bytes are buffered past `pos`, or the source ends.
    fn fill(&mut self, want: usize) {
        if self.pos > 0 && self.pos >= self.buf.len() / 2 {
            self.buf.drain(..self.pos);
            self.base += self.pos as u64;
            self.pos = 0;
        }
        let mut chunk = [0u8; 4096];
        while !self.eof && self.available() < want {
            match self.src.read(&mut chunk) {
                Ok(0) => self.eof = true,
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => {
                    self.io_error = Some(e);
                    self.eof = true;
                }
            }
        }
    }

    fn skip(&mut self, reason: SkipReason, n: usize) -> FrameSkip {
        let offset = self.base + self.pos as u64;
        self.pos += n;
        FrameSkip {
            reason,
            offset,
            skipped: n,
        }
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = FrameResult;

    fn next(&mut self) -> Option<FrameResult> {
        // Two maximal frames of lookahead is enough to decide every case below.
        self.fill(2 * MAX_FRAME_LEN + 1);
        let window = &self.buf[self.pos..];
        if window.is_empty() {
            return None;
        }

        if window[0] != SYNC {
            let mut n = window
                .iter()
                .position(|&b| b == SYNC)
                .unwrap_or(window.len());
            // The garbage run may continue past the buffered window.
            while n == self.available() && !self.eof {
                self.fill(self.available() + 4096);
                n = self.buf[self.pos..]
                    .iter()
                    .position(|&b| b == SYNC)
                    .unwrap_or(self.available());
            }
            return Some(Err(self.skip(SkipReason::Garbage, n)));
        }

        // A run of sync bytes: the last one starts the frame.
        let run = window.iter().take_while(|&&b| b == SYNC).count();
        if run > 1 {
            if run == window.len() {
                return Some(Err(self.skip(SkipReason::Truncated, run)));
            }
            self.pos += run - 1;
            let leading = run - 1;
            return match self.next() {
                Some(Ok(p)) => Some(Ok(p)),
                Some(Err(mut s)) => {
                    s.offset -= leading as u64;
                    s.skipped += leading;
                    Some(Err(s))
                }
                None => unreachable!("bytes remain after a sync run"),
            };
        }

        let window = &self.buf[self.pos..];
        match decode_frame(window) {
            Ok(frame) => {
                let offset = self.base + self.pos as u64;
                self.pos += frame.len;
                Some(Ok(FramedPacket { frame, offset }))
            }
            Err(CodecError::TruncatedFrame { .. }) => {
                let n = self.available();
                Some(Err(self.skip(SkipReason::Truncated, n)))
            }
            Err(CodecError::InvalidLength(l)) => {
                Some(Err(self.skip(SkipReason::InvalidLength(l), 1)))
            }
            Err(err) => {
                let frame_len = window[1] as usize + 3;
                let resume = (1..frame_len)
                    .find(|&q| window[q] == SYNC && decode_frame(&window[q..]).is_ok())
                    .unwrap_or(frame_len);
                Some(Err(self.skip(SkipReason::Corrupt(err), resume)))
            }
        }
    }
}

/// Frame a complete in-memory byte sequence.
pub fn frame_stream(bytes: &[u8]) -> Vec<FrameResult> {
    FrameReader::new(bytes).collect()
}
