//! Pluggable detectors for I-frames (decoded pixels) and P/B-frames
//! (accumulated compressed-domain features).
//!
//! Built-in detectors read synthetic ground truth, which isolates scheduler
//! behaviour from model quality. External detectors are child processes
//! speaking the length-prefixed protocol in [`wire`].

mod binding;
mod builtin;
mod external;
mod truth;
pub mod wire;

pub use binding::{DetectorBinding, Role, ENV_I_DETECTOR, ENV_PB_DETECTOR};
pub use builtin::{NoisyDetector, NullDetector, OracleDetector, ORACLE_CONFIDENCE};
pub use external::ExternalDetector;
pub use truth::{GroundTruth, TruthObject};

use crate::planes::{MotionField, Planes, ResidualPlanes};
use serde::{Deserialize, Serialize};
use std::borrow::Cow;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl BBox {
    pub fn full_frame(width: u32, height: u32) -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            w: width as f32,
            h: height as f32,
        }
    }

    /// Clips the box to a `width × height` frame.
    pub fn clamp_to(self, width: u32, height: u32) -> Self {
        let (fw, fh) = (width as f32, height as f32);
        let x0 = self.x.clamp(0.0, fw);
        let y0 = self.y.clamp(0.0, fh);
        let x1 = (self.x + self.w).clamp(x0, fw);
        let y1 = (self.y + self.h).clamp(y0, fh);
        Self {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u16,
    pub confidence: f32,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    IFrame,
    PbFrame,
}

impl RequestKind {
    pub fn code(self) -> u8 {
        match self {
            RequestKind::IFrame => 1,
            RequestKind::PbFrame => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(RequestKind::IFrame),
            2 => Some(RequestKind::PbFrame),
            _ => None,
        }
    }
}

/// Which request kinds a detector accepts. Encoded as a bit set on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    IFrame,
    PbFrame,
    Both,
}

impl Capability {
    pub fn code(self) -> u8 {
        match self {
            Capability::IFrame => 1,
            Capability::PbFrame => 2,
            Capability::Both => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Capability::IFrame),
            2 => Some(Capability::PbFrame),
            3 => Some(Capability::Both),
            _ => None,
        }
    }

    pub fn supports(self, kind: RequestKind) -> bool {
        self.code() & kind.code() != 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RequestPayload<'a> {
    /// Decoded `3 × H × W` image.
    IFrame { pixels: Cow<'a, Planes> },
    /// Accumulated features; no pixels.
    PbFrame {
        mv_acc: Cow<'a, MotionField>,
        r_acc: Cow<'a, ResidualPlanes>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRequest<'a> {
    pub frame_index: u32,
    pub target_class: u16,
    pub height: u32,
    pub width: u32,
    pub payload: RequestPayload<'a>,
}

impl<'a> DetectorRequest<'a> {
    pub fn i_frame(frame_index: u32, target_class: u16, pixels: &'a Planes) -> Self {
        Self {
            frame_index,
            target_class,
            height: pixels.height() as u32,
            width: pixels.width() as u32,
            payload: RequestPayload::IFrame {
                pixels: Cow::Borrowed(pixels),
            },
        }
    }

    pub fn pb_frame(
        frame_index: u32,
        target_class: u16,
        mv_acc: &'a MotionField,
        r_acc: &'a ResidualPlanes,
    ) -> Self {
        Self {
            frame_index,
            target_class,
            height: r_acc.height() as u32,
            width: r_acc.width() as u32,
            payload: RequestPayload::PbFrame {
                mv_acc: Cow::Borrowed(mv_acc),
                r_acc: Cow::Borrowed(r_acc),
            },
        }
    }

    pub fn kind(&self) -> RequestKind {
        match self.payload {
            RequestPayload::IFrame { .. } => RequestKind::IFrame,
            RequestPayload::PbFrame { .. } => RequestKind::PbFrame,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectorResponse {
    pub detections: Vec<Detection>,
    /// Detector-reported inference time.
    pub inference_micros: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("detector with capability {capability:?} cannot serve {kind:?} requests")]
    CapabilityMismatch {
        capability: Capability,
        kind: RequestKind,
    },
    #[error("detector transport failure: {0}")]
    Transport(String),
    #[error("detector did not answer within {0:?}")]
    Timeout(Duration),
    #[error("invalid detector configuration: {0}")]
    Config(String),
}

pub trait Detector: Send {
    fn name(&self) -> &str;

    fn capability(&self) -> Capability;

    fn detect(&mut self, req: &DetectorRequest<'_>) -> Result<DetectorResponse, DetectorError>;
}

/// True iff some detection of `target_class` reaches `tau_conf`.
pub fn presence(resp: &DetectorResponse, tau_conf: f64, target_class: u16) -> bool {
    resp.detections
        .iter()
        .any(|d| d.class_id == target_class && d.confidence as f64 >= tau_conf)
}

pub(crate) fn check_capability(
    capability: Capability,
    req: &DetectorRequest<'_>,
) -> Result<(), DetectorError> {
    if capability.supports(req.kind()) {
        Ok(())
    } else {
        Err(DetectorError::CapabilityMismatch {
            capability,
            kind: req.kind(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn face(conf: f32) -> Detection {
        Detection {
            class_id: 0,
            confidence: conf,
            bbox: BBox::full_frame(8, 8),
        }
    }

    #[test]
    fn presence_thresholds_confidence() {
        let resp = DetectorResponse {
            detections: vec![face(0.35)],
            inference_micros: 0,
        };
        assert!(presence(&resp, 0.3, 0));
        assert!(!presence(&resp, 0.4, 0));
        assert!(!presence(&resp, 0.3, 1));
        assert!(!presence(&DetectorResponse::default(), 0.0, 0));
    }

    #[test]
    fn capability_bits() {
        assert!(Capability::Both.supports(RequestKind::IFrame));
        assert!(Capability::Both.supports(RequestKind::PbFrame));
        assert!(!Capability::IFrame.supports(RequestKind::PbFrame));
        assert!(!Capability::PbFrame.supports(RequestKind::IFrame));
        for c in [Capability::IFrame, Capability::PbFrame, Capability::Both] {
            assert_eq!(Capability::from_code(c.code()), Some(c));
        }
    }

    #[test]
    fn bbox_clamp() {
        let b = BBox { x: -2.0, y: 6.0, w: 5.0, h: 5.0 }.clamp_to(8, 8);
        assert_eq!(b, BBox { x: 0.0, y: 6.0, w: 3.0, h: 2.0 });
    }

    proptest! {
        #[test]
        fn presence_is_monotone_in_tau_conf(
            confs in proptest::collection::vec(0.0f32..=1.0, 0..6),
            a in 0.0f64..=1.0, b in 0.0f64..=1.0,
        ) {
            let resp = DetectorResponse {
                detections: confs.into_iter().map(face).collect(),
                inference_micros: 0,
            };
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(presence(&resp, lo, 0) || !presence(&resp, hi, 0));
        }
    }
}
