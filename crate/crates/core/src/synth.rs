//! Synthetic compressed streams with exact ground truth.

use crate::detector::{BBox, GroundTruth, TruthObject};
use crate::planes::{MotionField, Planes, ResidualPlanes};
use crate::stream::{CompressedFrame, FrameKind, GopStream};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MotionModel {
    #[default]
    Static,
    /// Scene content moves by `(dx, dy)` pixels per frame.
    UniformTranslation { dx: f32, dy: f32 },
    /// Independent uniform vectors in `[-max_mag, max_mag]` per block.
    PerBlockRandom { seed: u64, max_mag: f32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub frame_index: u32,
    pub bbox: BBox,
    pub intensity: f32,
    #[serde(default)]
    pub class_id: u16,
    /// A non-moving object pins its blocks to zero motion.
    #[serde(default)]
    pub moving: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// `(height, width)` in pixels.
    pub frame_size: (u32, u32),
    pub gop_pattern: String,
    pub gop_count: u32,
    #[serde(default)]
    pub motion_model: MotionModel,
    #[serde(default)]
    pub residual_noise_sigma: f64,
    #[serde(default)]
    pub injections: Vec<Injection>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub target_class: u16,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidSpec(msg.into())
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let spec: SynthSpec = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn gop_len(&self) -> u32 {
        self.gop_pattern.len() as u32
    }

    pub fn frame_count(&self) -> u32 {
        self.gop_len() * self.gop_count
    }

    pub fn kinds(&self) -> Vec<FrameKind> {
        self.gop_pattern.chars().filter_map(FrameKind::from_char).collect()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let (h, w) = self.frame_size;
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(invalid(format!("frame size {h}x{w} must be positive multiples of 4")));
        }
        if self.gop_count == 0 {
            return Err(invalid("gop_count must be at least 1"));
        }
        let kinds: Vec<Option<FrameKind>> = self.gop_pattern.chars().map(FrameKind::from_char).collect();
        if kinds.is_empty() || kinds.iter().any(Option::is_none) {
            return Err(invalid(format!("pattern {:?} must be a non-empty string over I, P, B", self.gop_pattern)));
        }
        let kinds: Vec<FrameKind> = kinds.into_iter().flatten().collect();
        if kinds[0] != FrameKind::I || kinds[1..].contains(&FrameKind::I) {
            return Err(invalid(format!("pattern {:?} must start with its only I", self.gop_pattern)));
        }
        if kinds.last() == Some(&FrameKind::B) {
            return Err(invalid(format!("pattern {:?}: every B needs a following P", self.gop_pattern)));
        }
        if !(self.residual_noise_sigma.is_finite() && self.residual_noise_sigma >= 0.0) {
            return Err(invalid("residual_noise_sigma must be finite and non-negative"));
        }
        match self.motion_model {
            MotionModel::Static => {}
            MotionModel::UniformTranslation { dx, dy } if dx.is_finite() && dy.is_finite() => {}
            MotionModel::PerBlockRandom { max_mag, .. } if max_mag.is_finite() && max_mag >= 0.0 => {}
            m => return Err(invalid(format!("bad motion model {m:?}"))),
        }
        for inj in &self.injections {
            if inj.frame_index == 0 || inj.frame_index > self.frame_count() {
                return Err(invalid(format!("injection frame {} outside 1..={}", inj.frame_index, self.frame_count())));
            }
            let b = inj.bbox;
            let inside = [b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite())
                && b.x >= 0.0
                && b.y >= 0.0
                && b.w > 0.0
                && b.h > 0.0
                && b.x + b.w <= w as f32
                && b.y + b.h <= h as f32;
            if !inside {
                return Err(invalid(format!("injection bbox {b:?} not inside {w}x{h}")));
            }
            if !inj.intensity.is_finite() {
                return Err(invalid("injection intensity must be finite"));
            }
        }
        Ok(())
    }

    /// Generates GOP `gop` (0-based) on its own, keeping global frame indices.
    pub fn generate_gop(&self, gop: u32) -> Result<(GopStream, GroundTruth), SynthError> {
        self.validate()?;
        if gop >= self.gop_count {
            return Err(invalid(format!("GOP {gop} outside 0..{}", self.gop_count)));
        }
        let mut truth = GroundTruth::new();
        let frames = self.gop_frames(gop, &mut truth);
        let (h, w) = self.frame_size;
        let stream = GopStream::new(w, h, frames).map_err(|e| invalid(e.to_string()))?;
        Ok((stream, truth))
    }

    fn gop_frames(&self, gop: u32, truth: &mut GroundTruth) -> Vec<CompressedFrame> {
        let (h, w) = (self.frame_size.0 as usize, self.frame_size.1 as usize);
        let (hb, wb) = (h / MotionField::BLOCK, w / MotionField::BLOCK);
        let kinds = self.kinds();
        let first = gop * self.gop_len() + 1;
        let last = first + self.gop_len() - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ u64::from(gop + 1).wrapping_mul(GOLDEN));
        let noise = (self.residual_noise_sigma > 0.0)
            .then(|| Normal::new(0.0, self.residual_noise_sigma).expect("validated sigma"));
        let gop_injections: Vec<&Injection> = self
            .injections
            .iter()
            .filter(|i| (first..=last).contains(&i.frame_index))
            .collect();

        let mut frames = Vec::with_capacity(kinds.len());
        for (pos, &kind) in kinds.iter().enumerate() {
            let index = first + pos as u32;
            let fwd = kinds[..pos].iter().rposition(|k| k.is_anchor());
            let bwd = kinds[pos + 1..].iter().position(|k| k.is_anchor()).map(|p| pos + 1 + p);
            let fwd_ref = (kind != FrameKind::I).then(|| first + fwd.expect("pattern starts with I") as u32);
            let bwd_ref = (kind == FrameKind::B).then(|| first + bwd.expect("validated pattern") as u32);

            let mut mv = MotionField::zeros(hb, wb);
            if kind != FrameKind::I {
                let fwd_dist = (index - fwd_ref.unwrap_or(index)) as f32;
                let bwd_dist = (bwd_ref.unwrap_or(index) - index) as f32;
                let mut block_rng = match self.motion_model {
                    MotionModel::PerBlockRandom { seed, .. } => {
                        Some(ChaCha8Rng::seed_from_u64(seed ^ u64::from(index).wrapping_mul(GOLDEN)))
                    }
                    _ => None,
                };
                for by in 0..hb {
                    for bx in 0..wb {
                        let (f, b) = match self.motion_model {
                            MotionModel::Static => ((0.0, 0.0), (0.0, 0.0)),
                            // Content at p came from p - d*(dx, dy) in an earlier frame.
                            MotionModel::UniformTranslation { dx, dy } => {
                                ((-dx * fwd_dist, -dy * fwd_dist), (dx * bwd_dist, dy * bwd_dist))
                            }
                            MotionModel::PerBlockRandom { max_mag, .. } => {
                                let r = block_rng.as_mut().expect("seeded above");
                                let mut draw = || if max_mag > 0.0 { r.random_range(-max_mag..=max_mag) } else { 0.0 };
                                ((draw(), draw()), (draw(), draw()))
                            }
                        };
                        mv.set_forward(by, bx, f.0, f.1);
                        if kind == FrameKind::B {
                            mv.set_backward(by, bx, b.0, b.1);
                        }
                    }
                }
                for inj in gop_injections.iter().filter(|i| !i.moving && i.frame_index <= index) {
                    for (by, bx) in covered_blocks(inj.bbox) {
                        mv.set_forward(by, bx, 0.0, 0.0);
                        mv.set_backward(by, bx, 0.0, 0.0);
                    }
                }
            }

            let mut residual = ResidualPlanes::zeros(h, w);
            if kind != FrameKind::I {
                if let Some(n) = &noise {
                    for v in residual.planes_mut().data_mut() {
                        *v = n.sample(&mut rng) as f32;
                    }
                }
                for inj in gop_injections.iter().filter(|i| i.frame_index == index) {
                    paint(residual.planes_mut(), inj.bbox, inj.intensity, true);
                }
            }

            let pixels = (kind == FrameKind::I).then(|| {
                let mut px = Planes::from_fn(3, h, w, |c, y, x| ((x * 7 + y * 13 + c * 29 + gop as usize * 31) % 256) as f32);
                for inj in gop_injections.iter().filter(|i| i.frame_index == index) {
                    paint(&mut px, inj.bbox, inj.intensity, false);
                }
                px
            });

            truth.mark_known(index);
            let mut present = false;
            for inj in gop_injections.iter().filter(|i| i.frame_index <= index) {
                let bbox = self.track(inj, index - inj.frame_index);
                truth.add(index, TruthObject { class_id: inj.class_id, bbox });
                present |= inj.class_id == self.target_class;
            }

            frames.push(CompressedFrame {
                index,
                kind,
                mv,
                residual,
                pixels,
                fwd_ref,
                bwd_ref,
                gt_presence: Some(present),
            });
        }
        frames
    }

    /// Box of `inj` after `elapsed` frames.
    fn track(&self, inj: &Injection, elapsed: u32) -> BBox {
        let (h, w) = self.frame_size;
        match (inj.moving, self.motion_model) {
            (true, MotionModel::UniformTranslation { dx, dy }) => {
                let b = inj.bbox;
                let t = elapsed as f32;
                BBox {
                    x: (b.x + dx * t).clamp(0.0, w as f32 - b.w),
                    y: (b.y + dy * t).clamp(0.0, h as f32 - b.h),
                    ..b
                }
            }
            _ => inj.bbox,
        }
    }
}

fn pixel_span(start: f32, len: f32) -> std::ops::Range<usize> {
    start.floor() as usize..(start + len).ceil() as usize
}

fn covered_blocks(b: BBox) -> impl Iterator<Item = (usize, usize)> {
    let s = MotionField::BLOCK as f32;
    let ys = (b.y / s).floor() as usize..((b.y + b.h) / s).ceil() as usize;
    let xs = (b.x / s).floor() as usize..((b.x + b.w) / s).ceil() as usize;
    ys.flat_map(move |by| xs.clone().map(move |bx| (by, bx)))
}

fn paint(p: &mut Planes, b: BBox, value: f32, additive: bool) {
    for c in 0..p.channels() {
        for y in pixel_span(b.y, b.h) {
            for x in pixel_span(b.x, b.w) {
                let v = if additive { p.get(c, y, x) + value } else { value };
                p.set(c, y, x, v);
            }
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<GopStream, SynthError> {
    generate_with_truth(spec).map(|(s, _)| s)
}

/// Generates the stream together with per-frame object boxes.
pub fn generate_with_truth(spec: &SynthSpec) -> Result<(GopStream, GroundTruth), SynthError> {
    spec.validate()?;
    let mut truth = GroundTruth::new();
    let frames: Vec<CompressedFrame> = (0..spec.gop_count).flat_map(|g| spec.gop_frames(g, &mut truth)).collect();
    let (h, w) = spec.frame_size;
    let stream = GopStream::new(w, h, frames).map_err(|e| invalid(e.to_string()))?;
    Ok((stream, truth))
}
