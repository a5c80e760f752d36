//! JSON mirror of the sidecar container, for hand-written fixtures and
//! debug dumps. Arrays are flat, channel-major then row-major.

use super::{CompressedFrame, FrameKind, GopStream, StreamError};
use crate::planes::{MotionField, Planes, ResidualPlanes};
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
struct StreamDoc {
    #[serde(default = "default_version")]
    version: u16,
    frame_width: u32,
    frame_height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_count: Option<u32>,
    frames: Vec<FrameDoc>,
}

fn default_version() -> u16 {
    super::VERSION
}

#[derive(Serialize, Deserialize)]
struct FrameDoc {
    index: u32,
    kind: FrameKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fwd_ref: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bwd_ref: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt: Option<bool>,
    mv: MvDoc,
    residual: ImageDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pixels: Option<ImageDoc>,
}

#[derive(Serialize, Deserialize)]
struct MvDoc {
    width_blocks: usize,
    height_blocks: usize,
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct ImageDoc {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

pub fn parse_stream_json(bytes: &[u8]) -> Result<GopStream, StreamError> {
    let doc: StreamDoc = serde_json::from_slice(bytes).map_err(|e| StreamError::Json(e.to_string()))?;
    if doc.version != super::VERSION {
        return Err(StreamError::MalformedHeader(format!("unsupported version {}", doc.version)));
    }
    if let Some(n) = doc.frame_count {
        if n as usize != doc.frames.len() {
            return Err(StreamError::MalformedHeader(format!(
                "frame_count {n} but {} frames listed",
                doc.frames.len()
            )));
        }
    }
    let (w, h) = (doc.frame_width as usize, doc.frame_height as usize);
    let frames = doc
        .frames
        .into_iter()
        .map(|f| {
            let index = f.index;
            let dim_err = |what: &str, e: crate::planes::ShapeError| {
                StreamError::DimensionMismatch(format!("frame {index} {what}: {e}"))
            };
            if (f.mv.height_blocks, f.mv.width_blocks) != (h / 4, w / 4) {
                return Err(StreamError::DimensionMismatch(format!(
                    "frame {index} motion field is {}x{} blocks, frame needs {}x{}",
                    f.mv.height_blocks,
                    f.mv.width_blocks,
                    h / 4,
                    w / 4
                )));
            }
            let mv = Planes::from_vec(4, f.mv.height_blocks, f.mv.width_blocks, f.mv.data)
                .map_err(|e| dim_err("motion field", e))?;
            let residual = image(f.residual, w, h).map_err(|e| dim_err("residual", e))?;
            let pixels = f
                .pixels
                .map(|p| image(p, w, h))
                .transpose()
                .map_err(|e| dim_err("pixels", e))?;
            Ok(CompressedFrame {
                index,
                kind: f.kind,
                mv: MotionField::from_planes(mv).expect("four channels"),
                residual: ResidualPlanes::from_planes(residual).expect("three channels"),
                pixels,
                fwd_ref: f.fwd_ref,
                bwd_ref: f.bwd_ref,
                gt_presence: f.gt,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    GopStream::new(doc.frame_width, doc.frame_height, frames)
}

fn image(doc: ImageDoc, w: usize, h: usize) -> Result<Planes, crate::planes::ShapeError> {
    let p = Planes::from_vec(3, doc.height, doc.width, doc.data)?;
    p.expect_dims(3, h, w)?;
    Ok(p)
}

pub fn emit_stream_json(s: &GopStream) -> String {
    let image_doc = |p: &Planes| ImageDoc {
        width: p.width(),
        height: p.height(),
        data: p.data().to_vec(),
    };
    let doc = StreamDoc {
        version: super::VERSION,
        frame_width: s.frame_width(),
        frame_height: s.frame_height(),
        frame_count: Some(s.len() as u32),
        frames: s
            .frames()
            .iter()
            .map(|f| FrameDoc {
                index: f.index,
                kind: f.kind,
                fwd_ref: f.fwd_ref,
                bwd_ref: f.bwd_ref,
                gt: f.gt_presence,
                mv: MvDoc {
                    width_blocks: f.mv.width_blocks(),
                    height_blocks: f.mv.height_blocks(),
                    data: f.mv.planes().data().to_vec(),
                },
                residual: image_doc(f.residual.planes()),
                pixels: f.pixels.as_ref().map(image_doc),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("stream documents always serialize")
}
