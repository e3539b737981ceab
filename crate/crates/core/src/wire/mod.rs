//! Length-prefixed binary protocol spoken between dashcams, the coordinator
//! and workers over stream sockets.
//!
//! Every message is `length: u32 BE | type: u8 | payload`, where `length`
//! counts the type byte plus the payload. All integers are big-endian.
//!
//! | type | name   | payload                                                                  |
//! |------|--------|--------------------------------------------------------------------------|
//! | 0x01 | HELLO  | role u8, source u8, worker_id u32, name_len u16, name (UTF-8)            |
//! | 0x02 | FRAME  | frame_id u64, source u8, capture_ts_us u64, blob_len u32, blob           |
//! | 0x03 | RESULT | frame_id u64, source u8, analysis_time_us u32, queue_len_after u16, flags u8, detections_len u16, detections |
//! | 0x04 | RATE   | per_camera_rate_millifps u32                                             |
//! | 0x05 | BYE    | (empty)                                                                  |
//! | 0x06 | PING   | (empty)                                                                  |
//!
//! HELLO roles are 0 = dashcam, 1 = worker. A client sends worker_id 0; the
//! coordinator answers a worker's HELLO with its assigned id. RESULT flags:
//! bit 0 = alarm, bit 1 = analyzer error. Detections are newline-separated
//! UTF-8 labels.

pub mod dashcam;

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::model::{AnalysisResult, Detection, FrameDescriptor, VideoSource, WorkerId};

pub const TYPE_HELLO: u8 = 0x01;
pub const TYPE_FRAME: u8 = 0x02;
pub const TYPE_RESULT: u8 = 0x03;
pub const TYPE_RATE: u8 = 0x04;
pub const TYPE_BYE: u8 = 0x05;
pub const TYPE_PING: u8 = 0x06;

/// Largest accepted `length` field.
pub const MAX_MESSAGE_LEN: u32 = 64 * 1024 * 1024;

const FRAME_HEADER: usize = 8 + 1 + 8 + 4;
const RESULT_HEADER: usize = 8 + 1 + 4 + 2 + 1 + 2;
const HELLO_HEADER: usize = 1 + 1 + 4 + 2;

pub const FLAG_ALARM: u8 = 0x01;
pub const FLAG_ERROR: u8 = 0x02;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum WireError {
    /// Not a protocol error: at least `needed` more bytes are required.
    #[error("need {needed} more bytes")]
    Incomplete { needed: usize },
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("length field {0} is out of range")]
    BadLength(u32),
    #[error("{kind} payload length mismatch: expected {expected}, got {got}")]
    LengthMismatch {
        kind: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid {0}")]
    BadField(&'static str),
}

impl WireError {
    pub fn is_incomplete(&self) -> bool {
        matches!(self, WireError::Incomplete { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Dashcam,
    Worker,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hello {
    pub role: Role,
    pub source: VideoSource,
    pub worker_id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePayload {
    pub frame_id: u64,
    pub source: VideoSource,
    pub capture_ts_us: u64,
    pub blob: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultPayload {
    pub frame_id: u64,
    pub source: VideoSource,
    pub analysis_time_us: u32,
    pub queue_len_after: u16,
    pub flags: u8,
    pub detections: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatePayload {
    pub per_camera_rate_millifps: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Hello(Hello),
    Frame(FramePayload),
    Result(ResultPayload),
    Rate(RatePayload),
    Bye,
    Ping,
}

impl Message {
    pub fn type_byte(&self) -> u8 {
        match self {
            Message::Hello(_) => TYPE_HELLO,
            Message::Frame(_) => TYPE_FRAME,
            Message::Result(_) => TYPE_RESULT,
            Message::Rate(_) => TYPE_RATE,
            Message::Bye => TYPE_BYE,
            Message::Ping => TYPE_PING,
        }
    }

    pub fn rate(rate_fps: f64) -> Self {
        Message::Rate(RatePayload {
            per_camera_rate_millifps: to_millifps(rate_fps),
        })
    }
}

/// Frames per second to integer millifps, rounded and saturating.
pub fn to_millifps(rate: f64) -> u32 {
    if !(rate > 0.0) {
        return 0;
    }
    (rate * 1000.0).round().min(u32::MAX as f64) as u32
}

pub fn from_millifps(m: u32) -> f64 {
    m as f64 / 1000.0
}

impl From<&FrameDescriptor> for FramePayload {
    fn from(f: &FrameDescriptor) -> Self {
        FramePayload {
            frame_id: f.frame_id,
            source: f.source,
            capture_ts_us: f.capture_ts_us,
            blob: f.payload.clone(),
        }
    }
}

impl From<FramePayload> for FrameDescriptor {
    fn from(p: FramePayload) -> Self {
        FrameDescriptor::with_payload(p.frame_id, p.source, p.capture_ts_us, p.blob)
    }
}

pub fn encode_detections(d: &[Detection]) -> Vec<u8> {
    d.iter()
        .map(|d| d.label.replace('\n', " "))
        .collect::<Vec<_>>()
        .join("\n")
        .into_bytes()
}

pub fn decode_detections(bytes: &[u8]) -> Vec<Detection> {
    String::from_utf8_lossy(bytes)
        .split('\n')
        .filter(|l| !l.is_empty())
        .map(Detection::new)
        .collect()
}

impl ResultPayload {
    pub fn from_result(r: &AnalysisResult) -> Self {
        let mut flags = 0;
        if r.alarm {
            flags |= FLAG_ALARM;
        }
        if r.error {
            flags |= FLAG_ERROR;
        }
        let mut detections = encode_detections(&r.detections);
        detections.truncate(u16::MAX as usize);
        ResultPayload {
            frame_id: r.frame_id,
            source: r.source,
            analysis_time_us: (r.analysis_time * 1e6).round().clamp(1.0, u32::MAX as f64) as u32,
            queue_len_after: r.queue_len_after.min(u16::MAX as u32) as u16,
            flags,
            detections,
        }
    }

    pub fn into_result(self, worker: WorkerId) -> AnalysisResult {
        AnalysisResult {
            frame_id: self.frame_id,
            source: self.source,
            worker_id: worker,
            detections: decode_detections(&self.detections),
            analysis_time: (self.analysis_time_us.max(1)) as f64 * 1e-6,
            queue_len_after: self.queue_len_after as u32,
            alarm: self.flags & FLAG_ALARM != 0,
            error: self.flags & FLAG_ERROR != 0,
        }
    }
}

/// Appends the encoded message to `out`.
///
/// Panics if a variable-length field exceeds its length prefix (blob over
/// 4 GiB, name or detections over 64 KiB).
pub fn encode_into(msg: &Message, out: &mut Vec<u8>) {
    let start = out.len();
    out.extend_from_slice(&[0, 0, 0, 0]);
    out.push(msg.type_byte());
    match msg {
        Message::Hello(h) => {
            out.push(match h.role {
                Role::Dashcam => 0,
                Role::Worker => 1,
            });
            out.push(h.source.as_byte());
            out.extend_from_slice(&h.worker_id.to_be_bytes());
            let name = h.name.as_bytes();
            out.extend_from_slice(&u16::try_from(name.len()).expect("name fits u16").to_be_bytes());
            out.extend_from_slice(name);
        }
        Message::Frame(f) => {
            out.extend_from_slice(&f.frame_id.to_be_bytes());
            out.push(f.source.as_byte());
            out.extend_from_slice(&f.capture_ts_us.to_be_bytes());
            out.extend_from_slice(&u32::try_from(f.blob.len()).expect("blob fits u32").to_be_bytes());
            out.extend_from_slice(&f.blob);
        }
        Message::Result(r) => {
            out.extend_from_slice(&r.frame_id.to_be_bytes());
            out.push(r.source.as_byte());
            out.extend_from_slice(&r.analysis_time_us.to_be_bytes());
            out.extend_from_slice(&r.queue_len_after.to_be_bytes());
            out.push(r.flags);
            out.extend_from_slice(
                &u16::try_from(r.detections.len())
                    .expect("detections fit u16")
                    .to_be_bytes(),
            );
            out.extend_from_slice(&r.detections);
        }
        Message::Rate(r) => out.extend_from_slice(&r.per_camera_rate_millifps.to_be_bytes()),
        Message::Bye | Message::Ping => {}
    }
    let len = (out.len() - start - 4) as u32;
    out[start..start + 4].copy_from_slice(&len.to_be_bytes());
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let mut out = Vec::new();
    encode_into(msg, &mut out);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        s
    }
    fn u8(&mut self) -> u8 {
        self.take(1)[0]
    }
    fn u16(&mut self) -> u16 {
        u16::from_be_bytes(self.take(2).try_into().unwrap())
    }
    fn u32(&mut self) -> u32 {
        u32::from_be_bytes(self.take(4).try_into().unwrap())
    }
    fn u64(&mut self) -> u64 {
        u64::from_be_bytes(self.take(8).try_into().unwrap())
    }
}

fn source(b: u8) -> Result<VideoSource, WireError> {
    VideoSource::from_byte(b).ok_or(WireError::BadField("source"))
}

fn expect_len(kind: &'static str, expected: usize, got: usize) -> Result<(), WireError> {
    if expected == got {
        Ok(())
    } else {
        Err(WireError::LengthMismatch {
            kind,
            expected,
            got,
        })
    }
}

fn expect_at_least(kind: &'static str, min: usize, got: usize) -> Result<(), WireError> {
    if got >= min {
        Ok(())
    } else {
        Err(WireError::LengthMismatch {
            kind,
            expected: min,
            got,
        })
    }
}

fn decode_payload(kind: u8, p: &[u8]) -> Result<Message, WireError> {
    let mut c = Cursor { buf: p, pos: 0 };
    let msg = match kind {
        TYPE_HELLO => {
            expect_at_least("HELLO", HELLO_HEADER, p.len())?;
            let role = match c.u8() {
                0 => Role::Dashcam,
                1 => Role::Worker,
                _ => return Err(WireError::BadField("role")),
            };
            let src = source(c.u8())?;
            let worker_id = c.u32();
            let name_len = c.u16() as usize;
            expect_len("HELLO", HELLO_HEADER + name_len, p.len())?;
            let name = std::str::from_utf8(c.take(name_len))
                .map_err(|_| WireError::BadField("name"))?
                .to_owned();
            Message::Hello(Hello {
                role,
                source: src,
                worker_id,
                name,
            })
        }
        TYPE_FRAME => {
            expect_at_least("FRAME", FRAME_HEADER, p.len())?;
            let frame_id = c.u64();
            let src = source(c.u8())?;
            let capture_ts_us = c.u64();
            let blob_len = c.u32() as usize;
            expect_len("FRAME", FRAME_HEADER + blob_len, p.len())?;
            Message::Frame(FramePayload {
                frame_id,
                source: src,
                capture_ts_us,
                blob: c.take(blob_len).to_vec(),
            })
        }
        TYPE_RESULT => {
            expect_at_least("RESULT", RESULT_HEADER, p.len())?;
            let frame_id = c.u64();
            let src = source(c.u8())?;
            let analysis_time_us = c.u32();
            let queue_len_after = c.u16();
            let flags = c.u8();
            if flags & !(FLAG_ALARM | FLAG_ERROR) != 0 {
                return Err(WireError::BadField("flags"));
            }
            let det_len = c.u16() as usize;
            expect_len("RESULT", RESULT_HEADER + det_len, p.len())?;
            Message::Result(ResultPayload {
                frame_id,
                source: src,
                analysis_time_us,
                queue_len_after,
                flags,
                detections: c.take(det_len).to_vec(),
            })
        }
        TYPE_RATE => {
            expect_len("RATE", 4, p.len())?;
            Message::Rate(RatePayload {
                per_camera_rate_millifps: c.u32(),
            })
        }
        TYPE_BYE => {
            expect_len("BYE", 0, p.len())?;
            Message::Bye
        }
        TYPE_PING => {
            expect_len("PING", 0, p.len())?;
            Message::Ping
        }
        other => return Err(WireError::UnknownType(other)),
    };
    Ok(msg)
}

/// Decodes one message from the front of `buf`, returning it with the number
/// of bytes consumed (`length + 4`).
pub fn decode(buf: &[u8]) -> Result<(Message, usize), WireError> {
    if buf.len() < 4 {
        return Err(WireError::Incomplete {
            needed: 4 - buf.len(),
        });
    }
    let len = u32::from_be_bytes(buf[..4].try_into().unwrap());
    if len == 0 || len > MAX_MESSAGE_LEN {
        return Err(WireError::BadLength(len));
    }
    // the type byte is checked as soon as it is available
    if buf.len() > 4 && !(TYPE_HELLO..=TYPE_PING).contains(&buf[4]) {
        return Err(WireError::UnknownType(buf[4]));
    }
    let total = 4 + len as usize;
    if buf.len() < total {
        return Err(WireError::Incomplete {
            needed: total - buf.len(),
        });
    }
    let msg = decode_payload(buf[4], &buf[5..total])?;
    Ok((msg, total))
}

/// Result of decoding a whole byte stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamDecode {
    pub messages: Vec<Message>,
    /// Bytes consumed by complete messages.
    pub consumed: usize,
    /// First protocol error and the offset of the message that raised it.
    pub error: Option<(usize, WireError)>,
}

/// Decodes messages until the input runs out or a protocol error occurs.
/// A trailing partial message is left unconsumed without an error.
pub fn decode_stream(buf: &[u8]) -> StreamDecode {
    let mut messages = Vec::new();
    let mut pos = 0;
    while pos < buf.len() {
        match decode(&buf[pos..]) {
            Ok((m, n)) => {
                messages.push(m);
                pos += n;
            }
            Err(e) if e.is_incomplete() => break,
            Err(e) => {
                return StreamDecode {
                    messages,
                    consumed: pos,
                    error: Some((pos, e)),
                }
            }
        }
    }
    StreamDecode {
        messages,
        consumed: pos,
        error: None,
    }
}

pub fn write_message<W: Write + ?Sized>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode(msg))
}

/// Blocking read of exactly one message. EOF before the first byte is
/// reported as `UnexpectedEof`; protocol errors as `InvalidData`.
pub fn read_message<R: Read + ?Sized>(r: &mut R) -> io::Result<Message> {
    let mut head = [0u8; 5];
    r.read_exact(&mut head)?;
    let len = u32::from_be_bytes(head[..4].try_into().unwrap());
    if len == 0 || len > MAX_MESSAGE_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            WireError::BadLength(len),
        ));
    }
    let mut buf = vec![0u8; 4 + len as usize];
    buf[..5].copy_from_slice(&head);
    r.read_exact(&mut buf[5..])?;
    decode(&buf)
        .map(|(m, _)| m)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_golden_bytes() {
        let bytes = encode(&Message::Rate(RatePayload {
            per_camera_rate_millifps: 27920,
        }));
        assert_eq!(bytes, [0x00, 0x00, 0x00, 0x05, 0x04, 0x00, 0x00, 0x6D, 0x10]);
    }

    #[test]
    fn empty_frame_is_26_bytes() {
        let bytes = encode(&Message::Frame(FramePayload {
            frame_id: 1,
            source: VideoSource::Outer,
            capture_ts_us: 2,
            blob: Vec::new(),
        }));
        assert_eq!(bytes.len(), 4 + 1 + 21);
    }

    #[test]
    fn decode_consumes_exactly_one_message() {
        let mut buf = encode(&Message::Ping);
        buf.extend(encode(&Message::Bye));
        let (m, n) = decode(&buf).unwrap();
        assert_eq!(m, Message::Ping);
        assert_eq!(n, 5);
    }

    #[test]
    fn truncated_input_asks_for_more() {
        let bytes = encode(&Message::rate(12.5));
        for cut in 0..bytes.len() {
            assert!(decode(&bytes[..cut]).unwrap_err().is_incomplete(), "cut {cut}");
        }
    }

    #[test]
    fn unknown_type_is_a_protocol_error() {
        assert_eq!(
            decode(&[0, 0, 0, 1, 0x7f]).unwrap_err(),
            WireError::UnknownType(0x7f)
        );
        // detected before the rest of the payload arrives
        assert_eq!(
            decode(&[0, 0, 0, 9, 0x00]).unwrap_err(),
            WireError::UnknownType(0x00)
        );
    }

    #[test]
    fn length_mismatch_is_a_protocol_error() {
        // RATE with a 3-byte payload
        let err = decode(&[0, 0, 0, 4, TYPE_RATE, 0, 0, 1]).unwrap_err();
        assert!(matches!(err, WireError::LengthMismatch { kind: "RATE", .. }));
        assert_eq!(decode(&[0, 0, 0, 0]).unwrap_err(), WireError::BadLength(0));
    }

    #[test]
    fn result_round_trips_through_model() {
        let r = AnalysisResult {
            frame_id: 42,
            source: VideoSource::Inner,
            worker_id: WorkerId(3),
            detections: vec![Detection::new("distraction"), Detection::new("hand")],
            analysis_time: 0.0315,
            queue_len_after: 2,
            alarm: true,
            error: false,
        };
        let wire = ResultPayload::from_result(&r);
        let (m, _) = decode(&encode(&Message::Result(wire))).unwrap();
        let Message::Result(p) = m else { panic!() };
        assert_eq!(p.into_result(WorkerId(3)), r);
    }

    #[test]
    fn millifps_conversion() {
        assert_eq!(to_millifps(27.92), 27920);
        assert_eq!(to_millifps(0.0), 0);
        assert_eq!(to_millifps(-3.0), 0);
        assert_eq!(from_millifps(30_000), 30.0);
    }
}
