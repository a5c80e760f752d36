//! Detector wire protocol v1, little-endian over a byte stream.
//!
//! ```text
//! handshake (child -> parent): "DTP1" capability:u8       1=I, 2=P/B, 3=both
//! request:  len:u32 | frame_index:u32 kind:u8 target_class:u16 H:u32 W:u32 payload:f32[]
//!           kind 1: pixels[3][H][W]
//!           kind 2: mv_acc[4][H/4][W/4] r_acc[3][H][W]
//! response: len:u32 | status:u8 count:u16 {class_id:u16 conf:f32 x:f32 y:f32 w:f32 h:f32}*
//!           inference_micros:u64
//! ```
//! `len` counts the bytes after itself.

use super::{
    BBox, Capability, Detection, Detector, DetectorError, DetectorRequest, DetectorResponse,
    RequestKind, RequestPayload,
};
use crate::planes::{MotionField, Planes, ResidualPlanes};
use std::borrow::Cow;
use std::io::{self, Read, Write};
use thiserror::Error;

pub const HANDSHAKE_MAGIC: &[u8; 4] = b"DTP1";
/// Upper bound on a single message body.
pub const MAX_MESSAGE_LEN: u32 = 1 << 30;

const REQUEST_HEADER_LEN: usize = 15;
const DETECTION_LEN: usize = 22;

pub const STATUS_OK: u8 = 0;
pub const STATUS_CAPABILITY_MISMATCH: u8 = 1;
pub const STATUS_MALFORMED: u8 = 2;
pub const STATUS_INTERNAL: u8 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("bad handshake {0:?}")]
    Handshake(Vec<u8>),
    #[error("message too short: {0}")]
    Truncated(String),
    #[error("length field says {declared} bytes, body has {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("invalid field: {0}")]
    Invalid(String),
}

impl From<ProtocolError> for DetectorError {
    fn from(e: ProtocolError) -> Self {
        DetectorError::Transport(e.to_string())
    }
}

/// A response as it appears on the wire, including failures.
#[derive(Debug, Clone, PartialEq)]
pub struct WireResponse {
    pub status: u8,
    pub detections: Vec<Detection>,
    pub inference_micros: u64,
}

impl WireResponse {
    pub fn ok(resp: &DetectorResponse) -> Self {
        Self {
            status: STATUS_OK,
            detections: resp.detections.clone(),
            inference_micros: resp.inference_micros,
        }
    }

    pub fn failure(status: u8) -> Self {
        Self {
            status,
            detections: Vec::new(),
            inference_micros: 0,
        }
    }
}

pub fn encode_handshake(capability: Capability) -> [u8; 5] {
    let mut out = [0; 5];
    out[..4].copy_from_slice(HANDSHAKE_MAGIC);
    out[4] = capability.code();
    out
}

pub fn decode_handshake(bytes: &[u8]) -> Result<Capability, ProtocolError> {
    if bytes.len() != 5 || &bytes[..4] != HANDSHAKE_MAGIC {
        return Err(ProtocolError::Handshake(bytes.to_vec()));
    }
    Capability::from_code(bytes[4]).ok_or_else(|| ProtocolError::Handshake(bytes.to_vec()))
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Length-prefixed request frame.
pub fn encode_request(req: &DetectorRequest<'_>) -> Vec<u8> {
    let floats = match &req.payload {
        RequestPayload::IFrame { pixels } => pixels.data().len(),
        RequestPayload::PbFrame { mv_acc, r_acc } => {
            mv_acc.planes().data().len() + r_acc.planes().data().len()
        }
    };
    let body_len = REQUEST_HEADER_LEN + 4 * floats;
    let mut out = Vec::with_capacity(4 + body_len);
    out.extend_from_slice(&(body_len as u32).to_le_bytes());
    out.extend_from_slice(&req.frame_index.to_le_bytes());
    out.push(req.kind().code());
    out.extend_from_slice(&req.target_class.to_le_bytes());
    out.extend_from_slice(&req.height.to_le_bytes());
    out.extend_from_slice(&req.width.to_le_bytes());
    match &req.payload {
        RequestPayload::IFrame { pixels } => put_f32s(&mut out, pixels.data()),
        RequestPayload::PbFrame { mv_acc, r_acc } => {
            put_f32s(&mut out, mv_acc.planes().data());
            put_f32s(&mut out, r_acc.planes().data());
        }
    }
    out
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b[..4].try_into().unwrap())
}

fn le_f32(b: &[u8]) -> f32 {
    f32::from_le_bytes(b[..4].try_into().unwrap())
}

fn f32s(b: &[u8]) -> Vec<f32> {
    b.chunks_exact(4).map(le_f32).collect()
}

/// Decodes a request body (without its length prefix).
pub fn decode_request_body(body: &[u8]) -> Result<DetectorRequest<'static>, ProtocolError> {
    if body.len() < REQUEST_HEADER_LEN {
        return Err(ProtocolError::Truncated(format!("request header needs 15 bytes, got {}", body.len())));
    }
    let frame_index = le_u32(&body[0..]);
    let kind = RequestKind::from_code(body[4])
        .ok_or_else(|| ProtocolError::Invalid(format!("request kind {}", body[4])))?;
    let target_class = le_u16(&body[5..]);
    let height = le_u32(&body[7..]);
    let width = le_u32(&body[11..]);
    if !height.is_multiple_of(4) || !width.is_multiple_of(4) {
        return Err(ProtocolError::Invalid(format!("frame {width}x{height} not a multiple of 4")));
    }
    let (h, w) = (height as usize, width as usize);
    let payload = &body[REQUEST_HEADER_LEN..];
    let expected = match kind {
        RequestKind::IFrame => 3 * h * w,
        RequestKind::PbFrame => 4 * (h / 4) * (w / 4) + 3 * h * w,
    };
    if payload.len() != 4 * expected {
        return Err(ProtocolError::LengthMismatch {
            declared: 4 * expected,
            actual: payload.len(),
        });
    }
    let payload = match kind {
        RequestKind::IFrame => RequestPayload::IFrame {
            pixels: Cow::Owned(Planes::from_vec(3, h, w, f32s(payload)).expect("sized")),
        },
        RequestKind::PbFrame => {
            let split = 4 * 4 * (h / 4) * (w / 4);
            let mv = Planes::from_vec(4, h / 4, w / 4, f32s(&payload[..split])).expect("sized");
            let r = Planes::from_vec(3, h, w, f32s(&payload[split..])).expect("sized");
            RequestPayload::PbFrame {
                mv_acc: Cow::Owned(MotionField::from_planes(mv).expect("4 channels")),
                r_acc: Cow::Owned(ResidualPlanes::from_planes(r).expect("3 channels")),
            }
        }
    };
    Ok(DetectorRequest {
        frame_index,
        target_class,
        height,
        width,
        payload,
    })
}

/// Length-prefixed response frame.
pub fn encode_response(resp: &WireResponse) -> Vec<u8> {
    let body_len = 11 + DETECTION_LEN * resp.detections.len();
    let mut out = Vec::with_capacity(4 + body_len);
    out.extend_from_slice(&(body_len as u32).to_le_bytes());
    out.push(resp.status);
    out.extend_from_slice(&(resp.detections.len() as u16).to_le_bytes());
    for d in &resp.detections {
        out.extend_from_slice(&d.class_id.to_le_bytes());
        for v in [d.confidence, d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&resp.inference_micros.to_le_bytes());
    out
}

pub fn decode_response_body(body: &[u8]) -> Result<WireResponse, ProtocolError> {
    if body.len() < 11 {
        return Err(ProtocolError::Truncated(format!("response needs at least 11 bytes, got {}", body.len())));
    }
    let status = body[0];
    let count = le_u16(&body[1..]) as usize;
    let expected = 11 + DETECTION_LEN * count;
    if body.len() != expected {
        return Err(ProtocolError::LengthMismatch {
            declared: expected,
            actual: body.len(),
        });
    }
    let mut detections = Vec::with_capacity(count);
    for chunk in body[3..3 + DETECTION_LEN * count].chunks_exact(DETECTION_LEN) {
        let d = Detection {
            class_id: le_u16(chunk),
            confidence: le_f32(&chunk[2..]),
            bbox: BBox {
                x: le_f32(&chunk[6..]),
                y: le_f32(&chunk[10..]),
                w: le_f32(&chunk[14..]),
                h: le_f32(&chunk[18..]),
            },
        };
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(ProtocolError::Invalid(format!("confidence {}", d.confidence)));
        }
        detections.push(d);
    }
    let inference_micros = u64::from_le_bytes(body[expected - 8..].try_into().unwrap());
    Ok(WireResponse {
        status,
        detections,
        inference_micros,
    })
}

/// Reads one length-prefixed body. `Ok(None)` on a clean EOF before the
/// length field.
pub fn read_message(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "EOF inside length prefix")),
            n => got += n,
        }
    }
    let len = u32::from_le_bytes(len);
    if len > MAX_MESSAGE_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("message length {len} too large")));
    }
    let mut body = vec![0; len as usize];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

/// Serves `detector` over a byte stream until EOF.
///
/// Capability mismatches are answered with status 1 and serving continues.
/// A malformed request is answered with status 2 and ends the session with
/// an error.
pub fn serve(detector: &mut dyn Detector, input: &mut impl Read, output: &mut impl Write) -> Result<(), DetectorError> {
    let io_err = |e: io::Error| DetectorError::Transport(e.to_string());
    output.write_all(&encode_handshake(detector.capability())).map_err(io_err)?;
    output.flush().map_err(io_err)?;
    while let Some(body) = read_message(input).map_err(io_err)? {
        let reply = match decode_request_body(&body) {
            Ok(req) => match detector.detect(&req) {
                Ok(resp) => WireResponse::ok(&resp),
                Err(DetectorError::CapabilityMismatch { .. }) => {
                    WireResponse::failure(STATUS_CAPABILITY_MISMATCH)
                }
                Err(_) => WireResponse::failure(STATUS_INTERNAL),
            },
            Err(e) => {
                output.write_all(&encode_response(&WireResponse::failure(STATUS_MALFORMED))).map_err(io_err)?;
                output.flush().map_err(io_err)?;
                return Err(e.into());
            }
        };
        output.write_all(&encode_response(&reply)).map_err(io_err)?;
        output.flush().map_err(io_err)?;
    }
    Ok(())
}
