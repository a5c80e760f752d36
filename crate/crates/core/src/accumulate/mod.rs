//! Accumulated motion vectors and residuals linking every P/B-frame of a GOP
//! to the GOP's I-frame.
//!
//! For the first P-frame the accumulated features are its own motion vectors
//! and residual. Every later P-frame adds its own features to its forward
//! anchor's accumulated features, sampled through its own forward motion.
//! A B-frame does the same through both references: the forward pair of
//! channels follows the forward anchor, the backward pair follows the
//! backward anchor, and the two warped residuals are blended with weight
//! 0.5 each.
//!
//! [`AccumulatorState`] computes this incrementally in decode order and only
//! keeps anchors that some unprocessed frame still references.
//! [`brute_force_accumulate`] recomputes the same quantity from scratch and
//! serves as a test oracle.

mod brute_force;
mod warp;

pub use brute_force::{brute_force_accumulate, brute_force_accumulate_f64, OracleFeatures};
pub use warp::{warp_field, warp_full_res, Interpolation};

use crate::planes::{MotionField, Planes, ResidualPlanes};
use crate::stream::{CompressedFrame, FrameKind, GopStream};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

/// Motion-compensation weight of each reference on B-frame residuals.
pub const BIPRED_WEIGHT: f32 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccumulateError {
    #[error("frame {frame} needs anchor {anchor}, which has not been processed or was evicted")]
    MissingAnchor { frame: u32, anchor: u32 },
    #[error("frame {frame} does not belong to this GOP: {reason}")]
    GopMismatch { frame: u32, reason: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatedFeatures {
    pub frame_index: u32,
    pub kind: FrameKind,
    pub mv_acc: MotionField,
    pub r_acc: ResidualPlanes,
}

impl AccumulatedFeatures {
    pub fn zeros(frame_index: u32, kind: FrameKind, height: usize, width: usize) -> Self {
        Self {
            frame_index,
            kind,
            mv_acc: MotionField::for_frame(height, width),
            r_acc: ResidualPlanes::zeros(height, width),
        }
    }

    /// JSON dump in the stream mirror's field layout, for inspecting fixtures.
    pub fn to_debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "frame_index": self.frame_index,
            "kind": self.kind,
            "mv_acc": {
                "width_blocks": self.mv_acc.width_blocks(),
                "height_blocks": self.mv_acc.height_blocks(),
                "data": self.mv_acc.planes().data(),
            },
            "r_acc": {
                "width": self.r_acc.width(),
                "height": self.r_acc.height(),
                "data": self.r_acc.planes().data(),
            },
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Registered {
    kind: FrameKind,
    fwd_ref: Option<u32>,
    bwd_ref: Option<u32>,
    processed: bool,
}

/// Incremental accumulation state for one GOP.
#[derive(Debug, Clone)]
pub struct AccumulatorState {
    width: usize,
    height: usize,
    i_frame_index: u32,
    interpolation: Interpolation,
    frames: HashMap<u32, Registered>,
    /// Unprocessed frames still referencing each anchor.
    pending_refs: HashMap<u32, usize>,
    anchor_mv: BTreeMap<u32, MotionField>,
    anchor_residual: BTreeMap<u32, ResidualPlanes>,
}

impl AccumulatorState {
    /// Registers the reference structure of a single-GOP stream.
    pub fn for_gop(gop: &GopStream, interpolation: Interpolation) -> Result<Self, AccumulateError> {
        let first = gop.frames().first().ok_or_else(|| AccumulateError::GopMismatch {
            frame: 0,
            reason: "empty GOP".into(),
        })?;
        if first.kind != FrameKind::I {
            return Err(AccumulateError::GopMismatch {
                frame: first.index,
                reason: "a GOP starts with its I-frame".into(),
            });
        }
        if let Some(extra) = gop.frames()[1..].iter().find(|f| f.kind == FrameKind::I) {
            return Err(AccumulateError::GopMismatch {
                frame: extra.index,
                reason: "second I-frame; split the stream into GOPs first".into(),
            });
        }
        let mut frames = HashMap::new();
        let mut pending_refs: HashMap<u32, usize> = HashMap::new();
        for f in gop.frames() {
            frames.insert(
                f.index,
                Registered {
                    kind: f.kind,
                    fwd_ref: f.fwd_ref,
                    bwd_ref: f.bwd_ref,
                    processed: false,
                },
            );
            for r in f.references() {
                *pending_refs.entry(r).or_default() += 1;
            }
        }
        Ok(Self {
            width: gop.frame_width() as usize,
            height: gop.frame_height() as usize,
            i_frame_index: first.index,
            interpolation,
            frames,
            pending_refs,
            anchor_mv: BTreeMap::new(),
            anchor_residual: BTreeMap::new(),
        })
    }

    pub fn i_frame_index(&self) -> u32 {
        self.i_frame_index
    }

    /// Number of retained anchors.
    pub fn anchor_count(&self) -> usize {
        self.anchor_mv.len()
    }

    pub fn retained_anchors(&self) -> Vec<u32> {
        self.anchor_mv.keys().copied().collect()
    }

    /// Computes the accumulated features of `frame`, which must be the next
    /// frame of this GOP in decode order (its references already processed).
    pub fn accumulate_frame(
        &mut self,
        frame: &CompressedFrame,
    ) -> Result<AccumulatedFeatures, AccumulateError> {
        let idx = frame.index;
        let reg = *self.frames.get(&idx).ok_or_else(|| AccumulateError::GopMismatch {
            frame: idx,
            reason: "not registered in this GOP".into(),
        })?;
        if reg.processed {
            return Err(AccumulateError::GopMismatch {
                frame: idx,
                reason: "already processed".into(),
            });
        }
        if (reg.kind, reg.fwd_ref, reg.bwd_ref) != (frame.kind, frame.fwd_ref, frame.bwd_ref) {
            return Err(AccumulateError::GopMismatch {
                frame: idx,
                reason: "kind or references differ from the registered GOP".into(),
            });
        }
        let (h, w) = (self.height, self.width);
        if frame.mv.planes().dims() != (4, h / 4, w / 4) || frame.residual.planes().dims() != (3, h, w) {
            return Err(AccumulateError::ShapeMismatch(format!(
                "frame {idx} features do not match a {w}x{h} GOP"
            )));
        }

        let features = match frame.kind {
            FrameKind::I => {
                self.anchor_mv.clear();
                self.anchor_residual.clear();
                AccumulatedFeatures::zeros(idx, FrameKind::I, h, w)
            }
            FrameKind::P => {
                let fwd = frame.fwd_ref.expect("validated P-frame");
                let (anchor_mv, anchor_r) = self.anchor(idx, fwd)?;
                if fwd == self.i_frame_index {
                    AccumulatedFeatures {
                        frame_index: idx,
                        kind: FrameKind::P,
                        mv_acc: frame.mv.clone(),
                        r_acc: frame.residual.clone(),
                    }
                } else {
                    let disp = frame.mv.forward();
                    let mut mv_acc = frame.mv.clone();
                    let warped = warp_field(&anchor_mv.forward(), &disp, 0.25, self.interpolation)?;
                    add_into_channels(mv_acc.planes_mut(), 0, &warped, 1.0);
                    let mut r_acc = frame.residual.clone();
                    let warped_r = warp_full_res(anchor_r.planes(), &disp, self.interpolation)?;
                    r_acc.planes_mut().add_scaled(&warped_r, 1.0);
                    AccumulatedFeatures {
                        frame_index: idx,
                        kind: FrameKind::P,
                        mv_acc,
                        r_acc,
                    }
                }
            }
            FrameKind::B => {
                let fwd = frame.fwd_ref.expect("validated B-frame");
                let bwd = frame.bwd_ref.expect("validated B-frame");
                let (fwd_mv, fwd_r) = self.anchor(idx, fwd)?;
                let (bwd_mv, bwd_r) = self.anchor(idx, bwd)?;
                let (fdisp, bdisp) = (frame.mv.forward(), frame.mv.backward());

                let mut mv_acc = frame.mv.clone();
                let wf = warp_field(&fwd_mv.forward(), &fdisp, 0.25, self.interpolation)?;
                let wb = warp_field(&bwd_mv.forward(), &bdisp, 0.25, self.interpolation)?;
                add_into_channels(mv_acc.planes_mut(), 0, &wf, 1.0);
                add_into_channels(mv_acc.planes_mut(), 2, &wb, 1.0);

                let mut r_acc = frame.residual.clone();
                let rf = warp_full_res(fwd_r.planes(), &fdisp, self.interpolation)?;
                let rb = warp_full_res(bwd_r.planes(), &bdisp, self.interpolation)?;
                r_acc.planes_mut().add_scaled(&rf, BIPRED_WEIGHT);
                r_acc.planes_mut().add_scaled(&rb, BIPRED_WEIGHT);
                AccumulatedFeatures {
                    frame_index: idx,
                    kind: FrameKind::B,
                    mv_acc,
                    r_acc,
                }
            }
        };

        self.frames.get_mut(&idx).expect("registered").processed = true;
        if self.pending_refs.get(&idx).copied().unwrap_or(0) > 0 {
            self.anchor_mv.insert(idx, features.mv_acc.clone());
            self.anchor_residual.insert(idx, features.r_acc.clone());
        }
        for r in frame.references() {
            let left = self.pending_refs.get_mut(&r).expect("counted at registration");
            *left -= 1;
            if *left == 0 {
                self.anchor_mv.remove(&r);
                self.anchor_residual.remove(&r);
            }
        }
        Ok(features)
    }

    fn anchor(&self, frame: u32, anchor: u32) -> Result<(&MotionField, &ResidualPlanes), AccumulateError> {
        match (self.anchor_mv.get(&anchor), self.anchor_residual.get(&anchor)) {
            (Some(mv), Some(r)) => Ok((mv, r)),
            _ => Err(AccumulateError::MissingAnchor { frame, anchor }),
        }
    }
}

fn add_into_channels(dst: &mut Planes, first_channel: usize, src: &Planes, weight: f32) {
    for c in 0..src.channels() {
        let s = src.channel(c);
        for (d, v) in dst.channel_mut(first_channel + c).iter_mut().zip(s) {
            *d += weight * v;
        }
    }
}

/// Accumulates a single-GOP stream in decode order; results in display order.
pub fn accumulate_gop(
    gop: &GopStream,
    interpolation: Interpolation,
) -> Result<Vec<AccumulatedFeatures>, AccumulateError> {
    let mut state = AccumulatorState::for_gop(gop, interpolation)?;
    let first = gop.first_index().unwrap_or(1);
    let mut out: Vec<Option<AccumulatedFeatures>> = vec![None; gop.len()];
    for frame in gop.frames_in_decode_order() {
        let f = state.accumulate_frame(frame)?;
        out[(frame.index - first) as usize] = Some(f);
    }
    Ok(out.into_iter().map(|f| f.expect("every frame decoded")).collect())
}

/// Accumulates every GOP of `stream`; results in display order.
pub fn accumulate_stream(
    stream: &GopStream,
    interpolation: Interpolation,
) -> Result<Vec<AccumulatedFeatures>, AccumulateError> {
    let mut out = Vec::with_capacity(stream.len());
    for gop in stream.split_gops() {
        out.extend(accumulate_gop(&gop, interpolation)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::tests::frames_for_pattern;

    fn residual_const(h: usize, w: usize, v: f32) -> ResidualPlanes {
        ResidualPlanes::from_planes(Planes::from_fn(3, h, w, |_, _, _| v)).unwrap()
    }

    #[test]
    fn i_frame_is_zero_and_first_p_is_raw() {
        let mut frames = frames_for_pattern("IP", 8, 8);
        frames[1].mv.set_forward(1, 0, 2.5, -1.0);
        frames[1].residual = residual_const(8, 8, 3.0);
        frames[0].residual = residual_const(8, 8, 9.0);
        let gop = GopStream::new(8, 8, frames.clone()).unwrap();
        let acc = accumulate_gop(&gop, Interpolation::Bilinear).unwrap();
        assert!(acc[0].mv_acc.planes().is_all_zero());
        assert!(acc[0].r_acc.planes().is_all_zero());
        assert_eq!(acc[1].mv_acc, frames[1].mv);
        assert_eq!(acc[1].r_acc, frames[1].residual);
    }

    #[test]
    fn static_chain_sums_residuals() {
        let mut frames = frames_for_pattern("IPP", 8, 8);
        frames[1].residual = residual_const(8, 8, 1.25);
        frames[2].residual = residual_const(8, 8, -0.5);
        let gop = GopStream::new(8, 8, frames).unwrap();
        let acc = accumulate_gop(&gop, Interpolation::Bilinear).unwrap();
        assert!(acc[2].mv_acc.planes().is_all_zero());
        assert!(acc[2].r_acc.planes().data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn b_frame_blends_both_anchors() {
        let mut frames = frames_for_pattern("IBP", 8, 8);
        frames[1].residual = residual_const(8, 8, 1.0);
        frames[2].residual = residual_const(8, 8, 4.0);
        let gop = GopStream::new(8, 8, frames).unwrap();
        let acc = accumulate_gop(&gop, Interpolation::Bilinear).unwrap();
        // 1 + 0.5 * 0 (I) + 0.5 * 4 (P)
        assert!(acc[1].r_acc.planes().data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn uniform_translation_chain_adds_displacements() {
        // Each P moves content by one block to the right: mv = (4, 0).
        let mut frames = frames_for_pattern("IPP", 16, 16);
        for f in &mut frames[1..] {
            for by in 0..4 {
                for bx in 0..4 {
                    f.mv.set_forward(by, bx, 4.0, 0.0);
                }
            }
        }
        let gop = GopStream::new(16, 16, frames).unwrap();
        let acc = accumulate_gop(&gop, Interpolation::Bilinear).unwrap();
        let mv = acc[2].mv_acc.planes();
        for by in 0..4 {
            for bx in 0..4 {
                assert_eq!(mv.get(0, by, bx), 8.0);
                assert_eq!(mv.get(1, by, bx), 0.0);
            }
        }
    }

    #[test]
    fn decode_order_violation_is_missing_anchor() {
        let gop = GopStream::new(8, 8, frames_for_pattern("IBP", 8, 8)).unwrap();
        let mut state = AccumulatorState::for_gop(&gop, Interpolation::Bilinear).unwrap();
        state.accumulate_frame(&gop.frames()[0]).unwrap();
        let err = state.accumulate_frame(&gop.frames()[1]).unwrap_err();
        assert_eq!(err, AccumulateError::MissingAnchor { frame: 2, anchor: 3 });
    }

    #[test]
    fn foreign_frame_is_gop_mismatch() {
        let gop = GopStream::new(8, 8, frames_for_pattern("IP", 8, 8)).unwrap();
        let other = GopStream::new(8, 8, frames_for_pattern("IPP", 8, 8)).unwrap();
        let mut state = AccumulatorState::for_gop(&gop, Interpolation::Bilinear).unwrap();
        state.accumulate_frame(&gop.frames()[0]).unwrap();
        assert!(matches!(
            state.accumulate_frame(&other.frames()[2]),
            Err(AccumulateError::GopMismatch { frame: 3, .. })
        ));
        let two = GopStream::new(8, 8, frames_for_pattern("IPIP", 8, 8)).unwrap();
        assert!(AccumulatorState::for_gop(&two, Interpolation::Bilinear).is_err());
    }

    #[test]
    fn anchors_are_evicted_once_unreferenced() {
        let gop = GopStream::new(8, 8, frames_for_pattern("IBBPBBP", 8, 8)).unwrap();
        let mut state = AccumulatorState::for_gop(&gop, Interpolation::Bilinear).unwrap();
        let mut seen = Vec::new();
        for f in gop.frames_in_decode_order() {
            state.accumulate_frame(f).unwrap();
            seen.push(state.retained_anchors());
        }
        // decode order: 1 4 2 3 7 5 6
        assert_eq!(
            seen,
            vec![vec![1], vec![1, 4], vec![1, 4], vec![4], vec![4, 7], vec![4, 7], vec![]]
        );
    }
}
