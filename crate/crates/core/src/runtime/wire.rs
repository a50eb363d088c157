//! Length-prefixed binary messages exchanged between node daemons.
//!
//! ```text
//! frame  = len: u32 | body (len bytes)
//! body   = version: u8 | msg_type: u8 | source_node: u16 | inference_id: u64
//!          | null_flag: u8 | dim: u32 | dim × f32 payload
//! ```
//!
//! All integers and reals are little-endian. A null activation has
//! `null_flag = 1` and `dim = 0`.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const WIRE_VERSION: u8 = 1;
/// Body bytes before the payload.
pub const HEADER_LEN: usize = 17;
/// Frames larger than this are rejected before allocating.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0,
    Data = 1,
    Keepalive = 2,
    KeepaliveAck = 3,
    Shutdown = 4,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => MsgType::Hello,
            1 => MsgType::Data,
            2 => MsgType::Keepalive,
            3 => MsgType::KeepaliveAck,
            4 => MsgType::Shutdown,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub source_node: u16,
    pub inference_id: u64,
    /// `None` is the null activation Φ.
    pub payload: Option<Vec<f32>>,
}

impl WireMessage {
    pub fn data(source_node: u16, inference_id: u64, payload: Option<Vec<f32>>) -> Self {
        Self { msg_type: MsgType::Data, source_node, inference_id, payload }
    }

    pub fn control(msg_type: MsgType, source_node: u16) -> Self {
        Self { msg_type, source_node, inference_id: 0, payload: Some(Vec::new()) }
    }

    pub fn is_null(&self) -> bool {
        self.payload.is_none()
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame of {0} bytes is shorter than the {HEADER_LEN}-byte header")]
    Truncated(usize),
    #[error("unsupported protocol version {0}")]
    Version(u8),
    #[error("unknown message type {0}")]
    MsgType(u8),
    #[error("invalid null flag {0}")]
    NullFlag(u8),
    #[error("null message declares dim {0}")]
    NullWithPayload(u32),
    #[error("dim {dim} needs {expected} body bytes, frame has {got}")]
    Length { dim: u32, expected: usize, got: usize },
    #[error("frame length {0} exceeds the limit")]
    Oversized(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Message body without the length prefix.
pub fn encode_body(msg: &WireMessage) -> Vec<u8> {
    let dim = msg.payload.as_ref().map_or(0, Vec::len);
    let mut buf = Vec::with_capacity(HEADER_LEN + dim * 4);
    buf.push(WIRE_VERSION);
    buf.push(msg.msg_type as u8);
    buf.extend_from_slice(&msg.source_node.to_le_bytes());
    buf.extend_from_slice(&msg.inference_id.to_le_bytes());
    buf.push(u8::from(msg.payload.is_none()));
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for x in msg.payload.iter().flatten() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

/// Length prefix followed by the body.
pub fn encode(msg: &WireMessage) -> Vec<u8> {
    let body = encode_body(msg);
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
    frame.extend_from_slice(&body);
    frame
}

pub fn decode_body(body: &[u8]) -> Result<WireMessage, WireError> {
    if body.len() < HEADER_LEN {
        return Err(WireError::Truncated(body.len()));
    }
    if body[0] != WIRE_VERSION {
        return Err(WireError::Version(body[0]));
    }
    let msg_type = MsgType::from_u8(body[1]).ok_or(WireError::MsgType(body[1]))?;
    let source_node = u16::from_le_bytes([body[2], body[3]]);
    let inference_id = u64::from_le_bytes(body[4..12].try_into().expect("8 bytes"));
    let null_flag = body[12];
    let dim = u32::from_le_bytes(body[13..17].try_into().expect("4 bytes"));
    let expected = HEADER_LEN + dim as usize * 4;
    if body.len() != expected {
        return Err(WireError::Length { dim, expected, got: body.len() });
    }
    let payload = match null_flag {
        0 => Some(body[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()),
        1 if dim == 0 => None,
        1 => return Err(WireError::NullWithPayload(dim)),
        other => return Err(WireError::NullFlag(other)),
    };
    Ok(WireMessage { msg_type, source_node, inference_id, payload })
}

/// Decodes one complete frame (prefix included).
pub fn decode(frame: &[u8]) -> Result<WireMessage, WireError> {
    if frame.len() < 4 {
        return Err(WireError::Truncated(frame.len()));
    }
    let len = u32::from_le_bytes(frame[..4].try_into().expect("4 bytes")) as usize;
    let body = &frame[4..];
    if body.len() != len {
        return Err(WireError::Length { dim: 0, expected: len, got: body.len() });
    }
    decode_body(body)
}

pub fn write_message<W: Write>(out: &mut W, msg: &WireMessage) -> Result<(), WireError> {
    out.write_all(&encode(msg))?;
    out.flush()?;
    Ok(())
}

/// Reads one frame. `Ok(None)` on a clean end of stream at a frame boundary.
pub fn read_message<R: Read>(input: &mut R) -> Result<Option<WireMessage>, WireError> {
    let mut prefix = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match input.read(&mut prefix[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(prefix) as usize;
    if len > MAX_FRAME {
        return Err(WireError::Oversized(len));
    }
    let mut body = vec![0u8; len];
    input.read_exact(&mut body)?;
    decode_body(&body).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn data_frame_layout() {
        let msg = WireMessage::data(3, 0x0102030405060708, Some(vec![1.0, -2.5]));
        let frame = encode(&msg);
        let mut expected = Vec::new();
        expected.extend_from_slice(&25u32.to_le_bytes());
        expected.extend_from_slice(&[1, 1, 3, 0, 8, 7, 6, 5, 4, 3, 2, 1, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(frame, expected);
        assert_eq!(decode(&frame).unwrap(), msg);
    }

    #[test]
    fn null_frame_layout() {
        let msg = WireMessage::data(9, 42, None);
        let frame = encode(&msg);
        assert_eq!(frame.len(), 4 + HEADER_LEN);
        assert_eq!(frame[4 + 12], 1);
        assert_eq!(&frame[4 + 13..], &[0, 0, 0, 0]);
        assert!(decode(&frame).unwrap().is_null());
    }

    #[test]
    fn malformed_bodies() {
        let good = encode_body(&WireMessage::data(1, 1, Some(vec![0.5])));
        let mut bad = good.clone();
        bad[0] = 2;
        assert!(matches!(decode_body(&bad), Err(WireError::Version(2))));
        let mut bad = good.clone();
        bad[1] = 9;
        assert!(matches!(decode_body(&bad), Err(WireError::MsgType(9))));
        let mut bad = good.clone();
        bad[12] = 1;
        assert!(matches!(decode_body(&bad), Err(WireError::NullWithPayload(1))));
        let mut bad = good.clone();
        bad[12] = 7;
        assert!(matches!(decode_body(&bad), Err(WireError::NullFlag(7))));
        assert!(matches!(decode_body(&good[..10]), Err(WireError::Truncated(10))));
        assert!(matches!(decode_body(&good[..good.len() - 1]), Err(WireError::Length { .. })));
    }

    #[test]
    fn stream_round_trip_and_clean_eof() {
        let msgs = vec![
            WireMessage::control(MsgType::Hello, 4),
            WireMessage::data(4, 7, Some(vec![3.0; 5])),
            WireMessage::data(4, 8, None),
            WireMessage::control(MsgType::Shutdown, 0),
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_message(&mut buf, m).unwrap();
        }
        let mut cursor = buf.as_slice();
        for m in &msgs {
            assert_eq!(read_message(&mut cursor).unwrap().as_ref(), Some(m));
        }
        assert!(read_message(&mut cursor).unwrap().is_none());
        let mut cut = &buf[..2];
        assert!(read_message(&mut cut).is_err());
    }

    fn any_message() -> impl Strategy<Value = WireMessage> {
        let kind = prop_oneof![
            Just(MsgType::Hello),
            Just(MsgType::Data),
            Just(MsgType::Keepalive),
            Just(MsgType::KeepaliveAck),
            Just(MsgType::Shutdown),
        ];
        let payload = prop_oneof![
            1 => Just(None),
            4 => prop::collection::vec(any::<f32>().prop_filter("NaN never equals itself", |x| !x.is_nan()), 0..300)
                .prop_map(Some),
        ];
        (kind, any::<u16>(), any::<u64>(), payload).prop_map(|(msg_type, source_node, inference_id, payload)| {
            WireMessage { msg_type, source_node, inference_id, payload }
        })
    }

    proptest! {
        #[test]
        fn round_trip(msg in any_message()) {
            let frame = encode(&msg);
            prop_assert_eq!(frame.len(), 4 + HEADER_LEN + msg.payload.as_ref().map_or(0, Vec::len) * 4);
            prop_assert_eq!(decode(&frame).unwrap(), msg);
        }
    }
}
