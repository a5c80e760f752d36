//! Binary sidecar container. All integers and floats are little-endian.
//!
//! ```text
//! "GOPR" version:u16
//! frame_width:u32 frame_height:u32 frame_count:u32
//! per frame, display order:
//!   index:u32 kind:u8 flags:u8 fwd_ref:u32 bwd_ref:u32 gt:u8
//!   mv:f32[4][H/4][W/4] residual:f32[3][H][W] [pixels:f32[3][H][W]]
//! ```
//! `flags` bit 0 marks pixels present, bit 1 marks `gt` meaningful. A zero
//! reference means "absent".

use super::{CompressedFrame, FrameKind, GopStream, StreamError};
use crate::planes::{MotionField, Planes, ResidualPlanes};

pub const MAGIC: &[u8; 4] = b"GOPR";
pub const VERSION: u16 = 1;

const FLAG_PIXELS: u8 = 0b01;
const FLAG_GT: u8 = 0b10;

/// Parses either container flavour; JSON is recognised by a leading `{`.
pub fn parse_stream(bytes: &[u8]) -> Result<GopStream, StreamError> {
    match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
        Some(b'{') => super::parse_stream_json(bytes),
        _ => parse_stream_binary(bytes),
    }
}

pub fn emit_stream(s: &GopStream) -> Vec<u8> {
    let (w, h) = (s.frame_width() as usize, s.frame_height() as usize);
    let per_frame = 15 + 4 * (4 * (h / 4) * (w / 4) + 3 * h * w);
    let mut out = Vec::with_capacity(18 + s.len() * per_frame);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&s.frame_width().to_le_bytes());
    out.extend_from_slice(&s.frame_height().to_le_bytes());
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    for f in s.frames() {
        let mut flags = 0;
        if f.pixels.is_some() {
            flags |= FLAG_PIXELS;
        }
        if f.gt_presence.is_some() {
            flags |= FLAG_GT;
        }
        out.extend_from_slice(&f.index.to_le_bytes());
        out.push(f.kind.code());
        out.push(flags);
        out.extend_from_slice(&f.fwd_ref.unwrap_or(0).to_le_bytes());
        out.extend_from_slice(&f.bwd_ref.unwrap_or(0).to_le_bytes());
        out.push(u8::from(f.gt_presence.unwrap_or(false)));
        put_f32s(&mut out, f.mv.planes().data());
        put_f32s(&mut out, f.residual.planes().data());
        if let Some(px) = &f.pixels {
            put_f32s(&mut out, px.data());
        }
    }
    out
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], StreamError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(StreamError::MalformedHeader(format!(
                "truncated while reading {what} at byte {} ({} bytes available)",
                self.pos,
                self.buf.len()
            ))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8, StreamError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, StreamError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, StreamError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn planes(&mut self, c: usize, h: usize, w: usize, what: &str) -> Result<Planes, StreamError> {
        let n = c * h * w;
        let bytes = self.take(n * 4, what)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Planes::from_vec(c, h, w, data).expect("length computed from shape"))
    }
}

pub fn parse_stream_binary(bytes: &[u8]) -> Result<GopStream, StreamError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(StreamError::MalformedHeader(format!("bad magic {magic:?}")));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(StreamError::MalformedHeader(format!("unsupported version {version}")));
    }
    let width = r.u32("frame_width")?;
    let height = r.u32("frame_height")?;
    let count = r.u32("frame_count")?;
    if width == 0 || height == 0 || width % 4 != 0 || height % 4 != 0 {
        return Err(StreamError::DimensionMismatch(format!(
            "frame size {width}x{height} is not a positive multiple of 4"
        )));
    }
    let (w, h) = (width as usize, height as usize);
    let frame_floats = 4 * (h / 4) * (w / 4) + 3 * h * w;
    // Reject absurd counts before allocating.
    if (count as usize).saturating_mul(15 + 4 * frame_floats) > bytes.len() {
        return Err(StreamError::MalformedHeader(format!(
            "frame_count {count} exceeds what {} bytes can hold",
            bytes.len()
        )));
    }

    let mut frames = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let index = r.u32("index")?;
        let kind_code = r.u8("kind")?;
        let kind = FrameKind::from_code(kind_code).ok_or_else(|| StreamError::InvalidFrame {
            index,
            reason: format!("unknown frame kind {kind_code}"),
        })?;
        let flags = r.u8("flags")?;
        if flags & !(FLAG_PIXELS | FLAG_GT) != 0 {
            return Err(StreamError::InvalidFrame {
                index,
                reason: format!("reserved flag bits set: {flags:#04x}"),
            });
        }
        let fwd = r.u32("fwd_ref")?;
        let bwd = r.u32("bwd_ref")?;
        let gt = r.u8("gt")?;
        let gt_presence = match (flags & FLAG_GT != 0, gt) {
            (true, 0) => Some(false),
            (true, 1) => Some(true),
            (false, 0) => None,
            (_, v) => {
                return Err(StreamError::InvalidFrame {
                    index,
                    reason: format!("gt byte {v} with flags {flags:#04x}"),
                })
            }
        };
        let mv = MotionField::from_planes(r.planes(4, h / 4, w / 4, "motion vectors")?)
            .expect("four channels");
        let residual =
            ResidualPlanes::from_planes(r.planes(3, h, w, "residual")?).expect("three channels");
        let pixels = if flags & FLAG_PIXELS != 0 {
            Some(r.planes(3, h, w, "pixels")?)
        } else {
            None
        };
        frames.push(CompressedFrame {
            index,
            kind,
            mv,
            residual,
            pixels,
            fwd_ref: (fwd != 0).then_some(fwd),
            bwd_ref: (bwd != 0).then_some(bwd),
            gt_presence,
        });
    }
    if r.pos != bytes.len() {
        return Err(StreamError::MalformedHeader(format!(
            "{} trailing bytes after {count} frames",
            bytes.len() - r.pos
        )));
    }
    GopStream::new(width, height, frames)
}
