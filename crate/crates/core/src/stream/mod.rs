//! Compressed-video feature model: typed frames with motion vectors,
//! residuals and (for I-frames) decoded pixels, grouped into GOPs.
//!
//! A [`GopStream`] can only be built through [`GopStream::new`], which checks
//! every structural invariant, so downstream modules never re-validate.

mod json;
mod sidecar;

pub use json::{emit_stream_json, parse_stream_json};
pub use sidecar::{emit_stream, parse_stream, parse_stream_binary, MAGIC, VERSION};

use crate::planes::{MotionField, Planes, ResidualPlanes};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum FrameKind {
    I,
    P,
    B,
}

impl FrameKind {
    pub fn code(self) -> u8 {
        match self {
            FrameKind::I => 0,
            FrameKind::P => 1,
            FrameKind::B => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FrameKind::I),
            1 => Some(FrameKind::P),
            2 => Some(FrameKind::B),
            _ => None,
        }
    }

    /// I- and P-frames can be referenced by later frames.
    pub fn is_anchor(self) -> bool {
        matches!(self, FrameKind::I | FrameKind::P)
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'I' => Some(FrameKind::I),
            'P' => Some(FrameKind::P),
            'B' => Some(FrameKind::B),
            _ => None,
        }
    }
}

impl std::fmt::Display for FrameKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let c = match self {
            FrameKind::I => "I",
            FrameKind::P => "P",
            FrameKind::B => "B",
        };
        f.write_str(c)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dangling reference in frame {index}: {detail}")]
    DanglingReference { index: u32, detail: String },
    #[error("I-frame {index} carries no decoded pixels")]
    MissingIFramePixels { index: u32 },
    #[error("invalid frame {index}: {reason}")]
    InvalidFrame { index: u32, reason: String },
    #[error("invalid JSON stream: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedFrame {
    /// Display-order index, 1-based.
    pub index: u32,
    pub kind: FrameKind,
    pub mv: MotionField,
    pub residual: ResidualPlanes,
    /// Decoded `3 × H × W` image, present exactly on I-frames.
    pub pixels: Option<Planes>,
    pub fwd_ref: Option<u32>,
    pub bwd_ref: Option<u32>,
    /// Ground-truth presence of the target object, when known.
    pub gt_presence: Option<bool>,
}

impl CompressedFrame {
    pub fn references(&self) -> impl Iterator<Item = u32> {
        self.fwd_ref.into_iter().chain(self.bwd_ref)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GopStream {
    frame_width: u32,
    frame_height: u32,
    frames: Vec<CompressedFrame>,
    decode_order: Vec<u32>,
}

impl GopStream {
    /// Validates `frames` (display order) and derives the decode order.
    pub fn new(
        frame_width: u32,
        frame_height: u32,
        frames: Vec<CompressedFrame>,
    ) -> Result<Self, StreamError> {
        let decode_order = validate(frame_width, frame_height, &frames)?;
        Ok(Self {
            frame_width,
            frame_height,
            frames,
            decode_order,
        })
    }

    pub fn frame_width(&self) -> u32 {
        self.frame_width
    }

    pub fn frame_height(&self) -> u32 {
        self.frame_height
    }

    pub fn frames(&self) -> &[CompressedFrame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<CompressedFrame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame indices such that every frame follows the frames it references.
    pub fn decode_order(&self) -> &[u32] {
        &self.decode_order
    }

    pub fn first_index(&self) -> Option<u32> {
        self.frames.first().map(|f| f.index)
    }

    pub fn frame(&self, index: u32) -> Option<&CompressedFrame> {
        let first = self.first_index()?;
        let pos = index.checked_sub(first)? as usize;
        self.frames.get(pos)
    }

    /// Frames in decode order.
    pub fn frames_in_decode_order(&self) -> impl Iterator<Item = &CompressedFrame> {
        self.decode_order.iter().map(move |&i| {
            self.frame(i)
                .expect("decode order only holds indices of this stream")
        })
    }

    pub fn gop_count(&self) -> usize {
        self.frames.iter().filter(|f| f.kind == FrameKind::I).count()
    }

    /// Splits into one stream per GOP. Each piece starts at an I-frame and
    /// keeps the original frame indices.
    pub fn split_gops(&self) -> Vec<GopStream> {
        let mut gops = Vec::new();
        let mut current: Vec<CompressedFrame> = Vec::new();
        for frame in &self.frames {
            if frame.kind == FrameKind::I && !current.is_empty() {
                gops.push(std::mem::take(&mut current));
            }
            current.push(frame.clone());
        }
        if !current.is_empty() {
            gops.push(current);
        }
        gops.into_iter()
            .map(|frames| {
                GopStream::new(self.frame_width, self.frame_height, frames)
                    .expect("a GOP of a valid stream is itself valid")
            })
            .collect()
    }

    /// Display-order ground truth, `None` if any frame lacks it.
    pub fn ground_truth(&self) -> Option<Vec<bool>> {
        self.frames.iter().map(|f| f.gt_presence).collect()
    }
}

pub fn split_gops(s: &GopStream) -> Vec<GopStream> {
    s.split_gops()
}

fn validate(width: u32, height: u32, frames: &[CompressedFrame]) -> Result<Vec<u32>, StreamError> {
    if width == 0 || height == 0 || !width.is_multiple_of(4) || !height.is_multiple_of(4) {
        return Err(StreamError::DimensionMismatch(format!(
            "frame size {width}x{height} is not a positive multiple of 4"
        )));
    }
    let (w, h) = (width as usize, height as usize);
    let (wb, hb) = (w / 4, h / 4);

    let first = frames.first().map(|f| f.index).unwrap_or(1);
    if first == 0 {
        return Err(StreamError::InvalidFrame {
            index: 0,
            reason: "frame indices are 1-based".into(),
        });
    }

    for (pos, f) in frames.iter().enumerate() {
        let idx = f.index;
        if idx as usize != first as usize + pos {
            return Err(StreamError::InvalidFrame {
                index: idx,
                reason: format!("expected display index {}", first as usize + pos),
            });
        }
        f.mv.planes()
            .expect_dims(4, hb, wb)
            .map_err(|e| StreamError::DimensionMismatch(format!("frame {idx} motion field: {e}")))?;
        f.residual
            .planes()
            .expect_dims(3, h, w)
            .map_err(|e| StreamError::DimensionMismatch(format!("frame {idx} residual: {e}")))?;
        if let Some(px) = &f.pixels {
            px.expect_dims(3, h, w)
                .map_err(|e| StreamError::DimensionMismatch(format!("frame {idx} pixels: {e}")))?;
        }
        for (what, p) in [("motion field", f.mv.planes()), ("residual", f.residual.planes())]
            .into_iter()
            .chain(f.pixels.iter().map(|p| ("pixels", p)))
        {
            if let Err(e) = p.check_finite() {
                return Err(StreamError::InvalidFrame {
                    index: idx,
                    reason: format!("{what}: {e}"),
                });
            }
        }
    }

    let anchor_before = |pos: usize| frames[..pos].iter().rev().find(|f| f.kind.is_anchor());
    let anchor_after = |pos: usize| frames[pos + 1..].iter().find(|f| f.kind.is_anchor());
    let dangling = |index: u32, detail: String| StreamError::DanglingReference { index, detail };

    for (pos, f) in frames.iter().enumerate() {
        let idx = f.index;
        match f.kind {
            FrameKind::I => {
                if f.pixels.is_none() {
                    return Err(StreamError::MissingIFramePixels { index: idx });
                }
                if f.fwd_ref.is_some() || f.bwd_ref.is_some() {
                    return Err(dangling(idx, "I-frames reference nothing".into()));
                }
                if !f.mv.planes().is_all_zero() {
                    return Err(StreamError::InvalidFrame {
                        index: idx,
                        reason: "I-frame motion field must be zero".into(),
                    });
                }
            }
            FrameKind::P | FrameKind::B => {
                if f.pixels.is_some() {
                    return Err(StreamError::InvalidFrame {
                        index: idx,
                        reason: "only I-frames carry pixels".into(),
                    });
                }
                let expected_fwd = anchor_before(pos).map(|a| a.index);
                match (f.fwd_ref, expected_fwd) {
                    (Some(r), Some(e)) if r == e => {}
                    (Some(r), _) if r >= idx => {
                        return Err(dangling(idx, format!("forward reference {r} is not earlier")))
                    }
                    (r, e) => {
                        return Err(dangling(
                            idx,
                            format!("forward reference {r:?}, nearest preceding I/P-frame is {e:?}"),
                        ))
                    }
                }
                if f.kind == FrameKind::P {
                    if let Some(r) = f.bwd_ref {
                        return Err(dangling(idx, format!("P-frame has backward reference {r}")));
                    }
                    let mv = f.mv.planes();
                    if !(mv.channel(2).iter().chain(mv.channel(3)).all(|&v| v == 0.0)) {
                        return Err(StreamError::InvalidFrame {
                            index: idx,
                            reason: "P-frame backward motion channels must be zero".into(),
                        });
                    }
                } else {
                    let next = anchor_after(pos);
                    match (f.bwd_ref, next) {
                        (Some(r), Some(a)) if a.kind == FrameKind::P && a.index == r => {}
                        (Some(r), _) if r <= idx => {
                            return Err(dangling(idx, format!("backward reference {r} is not later")))
                        }
                        (r, a) => {
                            return Err(dangling(
                                idx,
                                format!(
                                    "backward reference {r:?} must be the nearest following P-frame in the GOP ({:?})",
                                    a.filter(|a| a.kind == FrameKind::P).map(|a| a.index)
                                ),
                            ))
                        }
                    }
                }
            }
        }
    }

    let mut order = Vec::with_capacity(frames.len());
    let mut pending_b = Vec::new();
    for f in frames {
        if f.kind.is_anchor() {
            order.push(f.index);
            order.append(&mut pending_b);
        } else {
            pending_b.push(f.index);
        }
    }
    debug_assert!(pending_b.is_empty());
    Ok(order)
}
