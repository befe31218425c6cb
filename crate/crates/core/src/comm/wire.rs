//! Length-prefixed binary frames.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DDCA"
//! 4       1     version (1)
//! 5       1     type: 0 HELLO, 1 CONTRIBUTE, 2 RESULT, 3 DONE, 4 ERROR
//! 6       4     round, u32 little-endian
//! 10      8     payload length in bytes, u64 little-endian
//! 18      ...   payload
//! ```
//!
//! CONTRIBUTE and RESULT carry `f64` little-endian vectors, HELLO carries
//! `worker_id: u32, dim: u32`, DONE is empty and ERROR carries UTF-8 text.

use std::io::{self, Read, Write};

use super::CommError;

pub const MAGIC: [u8; 4] = *b"DDCA";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;
/// Frames announcing more than this many payload bytes are rejected before
/// any allocation.
pub const MAX_PAYLOAD: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0,
    Contribute = 1,
    Result = 2,
    Done = 3,
    Error = 4,
}

impl MessageType {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => MessageType::Hello,
            1 => MessageType::Contribute,
            2 => MessageType::Result,
            3 => MessageType::Done,
            4 => MessageType::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Hello { worker_id: u32, dim: u32 },
    Contribute(Vec<f64>),
    Result(Vec<f64>),
    Done,
    Error(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub round: u32,
    pub body: Body,
}

impl WireMessage {
    pub fn new(round: u32, body: Body) -> Self {
        WireMessage { round, body }
    }

    pub fn msg_type(&self) -> MessageType {
        match self.body {
            Body::Hello { .. } => MessageType::Hello,
            Body::Contribute(_) => MessageType::Contribute,
            Body::Result(_) => MessageType::Result,
            Body::Done => MessageType::Done,
            Body::Error(_) => MessageType::Error,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload = match &self.body {
            Body::Hello { worker_id, dim } => {
                let mut p = Vec::with_capacity(8);
                p.extend_from_slice(&worker_id.to_le_bytes());
                p.extend_from_slice(&dim.to_le_bytes());
                p
            }
            Body::Contribute(v) | Body::Result(v) => {
                v.iter().flat_map(|x| x.to_le_bytes()).collect()
            }
            Body::Done => Vec::new(),
            Body::Error(msg) => msg.as_bytes().to_vec(),
        };
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type() as u8);
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    /// Decodes one complete frame; returns the message and bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(WireMessage, usize), CommError> {
        if buf.len() < HEADER_LEN {
            return Err(CommError::Protocol("truncated frame header".into()));
        }
        let header: [u8; HEADER_LEN] = buf[..HEADER_LEN].try_into().expect("length checked");
        let (msg_type, round, len) = parse_header(&header)?;
        let end = HEADER_LEN + len as usize;
        if buf.len() < end {
            return Err(CommError::Protocol("truncated frame payload".into()));
        }
        let body = parse_body(msg_type, &buf[HEADER_LEN..end])?;
        Ok((WireMessage { round, body }, end))
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> io::Result<()> {
        out.write_all(&self.encode())?;
        out.flush()
    }

    /// Reads exactly one frame, keeping broken connections apart from
    /// malformed frames.
    pub fn read_from<R: Read>(input: &mut R) -> Result<WireMessage, ReadError> {
        let mut header = [0u8; HEADER_LEN];
        input.read_exact(&mut header).map_err(ReadError::Io)?;
        let (msg_type, round, len) = parse_header(&header).map_err(ReadError::Frame)?;
        let mut payload = vec![0u8; len as usize];
        input.read_exact(&mut payload).map_err(ReadError::Io)?;
        let body = parse_body(msg_type, &payload).map_err(ReadError::Frame)?;
        Ok(WireMessage { round, body })
    }
}

#[derive(Debug)]
pub enum ReadError {
    Io(io::Error),
    Frame(CommError),
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(MessageType, u32, u64), CommError> {
    if h[..4] != MAGIC {
        return Err(CommError::Protocol("bad magic".into()));
    }
    if h[4] != VERSION {
        return Err(CommError::Protocol(format!("unsupported version {}", h[4])));
    }
    let msg_type = MessageType::from_byte(h[5])
        .ok_or_else(|| CommError::Protocol(format!("unknown message type {}", h[5])))?;
    let round = u32::from_le_bytes(h[6..10].try_into().expect("4 bytes"));
    let len = u64::from_le_bytes(h[10..18].try_into().expect("8 bytes"));
    if len > MAX_PAYLOAD {
        return Err(CommError::Protocol(format!("payload of {len} bytes too large")));
    }
    let ok = match msg_type {
        MessageType::Hello => len == 8,
        MessageType::Contribute | MessageType::Result => len % 8 == 0,
        MessageType::Done => len == 0,
        MessageType::Error => true,
    };
    if !ok {
        return Err(CommError::Protocol(format!(
            "payload length {len} invalid for {msg_type:?}"
        )));
    }
    Ok((msg_type, round, len))
}

fn parse_body(msg_type: MessageType, payload: &[u8]) -> Result<Body, CommError> {
    Ok(match msg_type {
        MessageType::Hello => Body::Hello {
            worker_id: u32::from_le_bytes(payload[..4].try_into().expect("4 bytes")),
            dim: u32::from_le_bytes(payload[4..8].try_into().expect("4 bytes")),
        },
        MessageType::Contribute | MessageType::Result => {
            let v = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if msg_type == MessageType::Contribute {
                Body::Contribute(v)
            } else {
                Body::Result(v)
            }
        }
        MessageType::Done => Body::Done,
        MessageType::Error => Body::Error(
            String::from_utf8(payload.to_vec())
                .map_err(|_| CommError::Protocol("ERROR payload is not UTF-8".into()))?,
        ),
    })
}
