//! Privacy-object detection on compressed video.
//!
//! I-frames are decoded and sent to an I-frame detector. Each P/B-frame
//! accumulates motion vectors and residuals back to its GOP's I-frame; a
//! frame whose accumulated features look abnormal goes to a lightweight
//! detector, every other frame reuses the I-frame verdict.

pub mod accumulate;
pub mod anomaly;
pub mod capability;
pub mod cli;
pub mod detector;
pub mod planes;
pub mod scheduler;
pub mod stream;
pub mod synth;

pub use accumulate::{accumulate_gop, AccumulatedFeatures, AccumulatorState, Interpolation};
pub use anomaly::{detect_abnormal, AnomalyConfig, AnomalyVerdict};
pub use planes::{MotionField, Planes, ResidualPlanes};
pub use scheduler::{run_pipeline, PipelineConfig, RunReport};
pub use stream::{emit_stream, parse_stream, CompressedFrame, FrameKind, GopStream};
