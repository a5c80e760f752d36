//! Non-incremental recomputation of accumulated features in `f64`.
//!
//! Every call unrolls the whole reference chain back to the I-frame and
//! redoes each warp from the raw frame data. Nothing is cached and none of
//! the incremental path's sampling code is reused.

use super::{AccumulateError, AccumulatedFeatures, Interpolation};
use crate::planes::{MotionField, Planes, ResidualPlanes};
use crate::stream::{FrameKind, GopStream};

/// Accumulated features in double precision, channel-major like [`Planes`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFeatures {
    pub frame_index: u32,
    pub height: usize,
    pub width: usize,
    /// `4 × height/4 × width/4`
    pub mv: Vec<f64>,
    /// `3 × height × width`
    pub residual: Vec<f64>,
}

impl OracleFeatures {
    fn zeros(frame_index: u32, height: usize, width: usize) -> Self {
        Self {
            frame_index,
            height,
            width,
            mv: vec![0.0; 4 * (height / 4) * (width / 4)],
            residual: vec![0.0; 3 * height * width],
        }
    }

    /// Largest absolute element-wise deviation from `acc`, over both fields.
    pub fn max_abs_diff(&self, acc: &AccumulatedFeatures) -> f64 {
        let mv = self.mv.iter().zip(acc.mv_acc.planes().data());
        let r = self.residual.iter().zip(acc.r_acc.planes().data());
        mv.chain(r).map(|(a, b)| (a - *b as f64).abs()).fold(0.0, f64::max)
    }
}

pub fn brute_force_accumulate(
    stream: &GopStream,
    frame_index: u32,
    interpolation: Interpolation,
) -> Result<AccumulatedFeatures, AccumulateError> {
    let o = brute_force_accumulate_f64(stream, frame_index, interpolation)?;
    let kind = stream.frame(frame_index).expect("checked by the oracle").kind;
    let (hb, wb) = (o.height / 4, o.width / 4);
    Ok(AccumulatedFeatures {
        frame_index,
        kind,
        mv_acc: MotionField::from_planes(
            Planes::from_vec(4, hb, wb, o.mv.iter().map(|&v| v as f32).collect()).unwrap(),
        )
        .unwrap(),
        r_acc: ResidualPlanes::from_planes(
            Planes::from_vec(3, o.height, o.width, o.residual.iter().map(|&v| v as f32).collect())
                .unwrap(),
        )
        .unwrap(),
    })
}

pub fn brute_force_accumulate_f64(
    stream: &GopStream,
    frame_index: u32,
    interpolation: Interpolation,
) -> Result<OracleFeatures, AccumulateError> {
    let (h, w) = (stream.frame_height() as usize, stream.frame_width() as usize);
    let frame = stream.frame(frame_index).ok_or_else(|| AccumulateError::GopMismatch {
        frame: frame_index,
        reason: "not in stream".into(),
    })?;
    let lookup = |anchor: u32| {
        stream
            .frame(anchor)
            .filter(|a| a.kind.is_anchor())
            .map(|a| a.index)
            .ok_or(AccumulateError::MissingAnchor {
                frame: frame_index,
                anchor,
            })
    };
    let hb = h / 4;
    let wb = w / 4;
    let own_mv = |c: usize| -> Vec<f64> {
        frame.mv.planes().channel(c).iter().map(|&v| v as f64).collect()
    };
    let own_res: Vec<f64> = frame.residual.planes().data().iter().map(|&v| v as f64).collect();

    match frame.kind {
        FrameKind::I => Ok(OracleFeatures::zeros(frame_index, h, w)),
        FrameKind::P => {
            let fwd = lookup(frame.fwd_ref.ok_or(AccumulateError::MissingAnchor {
                frame: frame_index,
                anchor: 0,
            })?)?;
            let (dx, dy) = (own_mv(0), own_mv(1));
            let fwd_kind = stream.frame(fwd).unwrap().kind;
            let mut out = OracleFeatures::zeros(frame_index, h, w);
            out.mv = frame.mv.planes().data().iter().map(|&v| v as f64).collect();
            out.residual = own_res;
            if fwd_kind == FrameKind::P {
                let prev = brute_force_accumulate_f64(stream, fwd, interpolation)?;
                for c in 0..2 {
                    let src = &prev.mv[c * hb * wb..(c + 1) * hb * wb];
                    let s = sample_grid(src, hb, wb, &dx, &dy, 0.25, interpolation);
                    add(&mut out.mv[c * hb * wb..(c + 1) * hb * wb], &s, 1.0);
                }
                let (fdx, fdy) = replicate(&dx, &dy, hb, wb);
                for c in 0..3 {
                    let src = &prev.residual[c * h * w..(c + 1) * h * w];
                    let s = sample_grid(src, h, w, &fdx, &fdy, 1.0, interpolation);
                    add(&mut out.residual[c * h * w..(c + 1) * h * w], &s, 1.0);
                }
            }
            Ok(out)
        }
        FrameKind::B => {
            let missing = AccumulateError::MissingAnchor {
                frame: frame_index,
                anchor: 0,
            };
            let fwd = lookup(frame.fwd_ref.ok_or(missing.clone())?)?;
            let bwd = lookup(frame.bwd_ref.ok_or(missing)?)?;
            let mut out = OracleFeatures::zeros(frame_index, h, w);
            out.mv = frame.mv.planes().data().iter().map(|&v| v as f64).collect();
            out.residual = own_res;
            for (anchor, dx_c, first_out) in [(fwd, 0usize, 0usize), (bwd, 2, 2)] {
                let prev = brute_force_accumulate_f64(stream, anchor, interpolation)?;
                let (dx, dy) = (own_mv(dx_c), own_mv(dx_c + 1));
                for c in 0..2 {
                    let src = &prev.mv[c * hb * wb..(c + 1) * hb * wb];
                    let s = sample_grid(src, hb, wb, &dx, &dy, 0.25, interpolation);
                    let o = first_out + c;
                    add(&mut out.mv[o * hb * wb..(o + 1) * hb * wb], &s, 1.0);
                }
                let (fdx, fdy) = replicate(&dx, &dy, hb, wb);
                for c in 0..3 {
                    let src = &prev.residual[c * h * w..(c + 1) * h * w];
                    let s = sample_grid(src, h, w, &fdx, &fdy, 1.0, interpolation);
                    add(&mut out.residual[c * h * w..(c + 1) * h * w], &s, 0.5);
                }
            }
            Ok(out)
        }
    }
}

fn add(dst: &mut [f64], src: &[f64], weight: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += weight * s;
    }
}

/// Nearest-neighbour upsampling of block vectors to pixels.
fn replicate(dx: &[f64], dy: &[f64], hb: usize, wb: usize) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (hb * 4, wb * 4);
    let mut ox = vec![0.0; h * w];
    let mut oy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let b = (y >> 2) * wb + (x >> 2);
            ox[y * w + x] = dx[b];
            oy[y * w + x] = dy[b];
        }
    }
    (ox, oy)
}

/// Samples a single plane at `(x + s*dx, y + s*dy)` with clamped coordinates.
fn sample_grid(
    src: &[f64],
    h: usize,
    w: usize,
    dx: &[f64],
    dy: &[f64],
    s: f64,
    interpolation: Interpolation,
) -> Vec<f64> {
    let at = |yy: isize, xx: isize| -> f64 {
        let yy = yy.clamp(0, h as isize - 1) as usize;
        let xx = xx.clamp(0, w as isize - 1) as usize;
        src[yy * w + xx]
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let py = (y as f64 + s * dy[i]).max(0.0).min((h - 1) as f64);
            let px = (x as f64 + s * dx[i]).max(0.0).min((w - 1) as f64);
            let v = match interpolation {
                Interpolation::Nearest => at(py.round() as isize, px.round() as isize),
                Interpolation::Bilinear => {
                    let (iy, ix) = (py.floor() as isize, px.floor() as isize);
                    let (ty, tx) = (py - iy as f64, px - ix as f64);
                    let mut acc = 0.0;
                    for (oy, wy) in [(0, 1.0 - ty), (1, ty)] {
                        for (ox, wx) in [(0, 1.0 - tx), (1, tx)] {
                            if wy * wx != 0.0 {
                                acc += wy * wx * at(iy + oy, ix + ox);
                            }
                        }
                    }
                    acc
                }
            };
            out.push(v);
        }
    }
    out
}
