use super::AccumulateError;
use crate::planes::Planes;
use serde::{Deserialize, Serialize};

/// Sampling rule used when composing a field with a displaced identity grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Bilinear,
    /// Rounds the sampling position; keeps integer fixtures exact.
    Nearest,
}

/// Samples `field` at the identity grid displaced by `displacement`.
///
/// `out[c][y][x] = sample(field[c], y + scale*dy[y][x], x + scale*dx[y][x])`,
/// where channel 0 of `displacement` is dx and channel 1 is dy, in pixel
/// units. Sampling positions are clamped to the field border.
pub fn warp_field(
    field: &Planes,
    displacement: &Planes,
    scale: f32,
    interpolation: Interpolation,
) -> Result<Planes, AccumulateError> {
    let (_, h, w) = field.dims();
    if displacement.dims() != (2, h, w) {
        return Err(AccumulateError::ShapeMismatch(format!(
            "displacement {:?} does not match a 2x{h}x{w} output grid",
            displacement.dims()
        )));
    }
    if !(scale > 0.0) {
        return Err(AccumulateError::ShapeMismatch(format!("scale must be positive, got {scale}")));
    }
    Ok(sample_with(field, h, w, |y, x| {
        let i = y * w + x;
        (
            displacement.channel(0)[i] as f64,
            displacement.channel(1)[i] as f64,
        )
    }, scale as f64, interpolation))
}

/// Warps a full-resolution field by a quarter-resolution displacement,
/// replicating each block vector over its 4x4 pixels.
pub fn warp_full_res(
    field: &Planes,
    block_displacement: &Planes,
    interpolation: Interpolation,
) -> Result<Planes, AccumulateError> {
    let (_, h, w) = field.dims();
    let (dc, hb, wb) = block_displacement.dims();
    if dc != 2 || hb * 4 != h || wb * 4 != w {
        return Err(AccumulateError::ShapeMismatch(format!(
            "block displacement {:?} does not tile a {h}x{w} field",
            block_displacement.dims()
        )));
    }
    Ok(sample_with(field, h, w, |y, x| {
        let i = (y / 4) * wb + x / 4;
        (
            block_displacement.channel(0)[i] as f64,
            block_displacement.channel(1)[i] as f64,
        )
    }, 1.0, interpolation))
}

fn sample_with(
    field: &Planes,
    h: usize,
    w: usize,
    disp: impl Fn(usize, usize) -> (f64, f64),
    scale: f64,
    interpolation: Interpolation,
) -> Planes {
    let channels = field.channels();
    let mut out = Planes::zeros(channels, h, w);
    if h == 0 || w == 0 {
        return out;
    }
    let (ymax, xmax) = ((h - 1) as f64, (w - 1) as f64);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = disp(y, x);
            let sy = (y as f64 + scale * dy).clamp(0.0, ymax);
            let sx = (x as f64 + scale * dx).clamp(0.0, xmax);
            match interpolation {
                Interpolation::Nearest => {
                    let (ny, nx) = (sy.round() as usize, sx.round() as usize);
                    for c in 0..channels {
                        let v = field.channel(c)[ny * w + nx];
                        out.channel_mut(c)[y * w + x] = v;
                    }
                }
                Interpolation::Bilinear => {
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                    for c in 0..channels {
                        let p = field.channel(c);
                        let top = (1.0 - fx) * p[y0 * w + x0] as f64 + fx * p[y0 * w + x1] as f64;
                        let bot = (1.0 - fx) * p[y1 * w + x0] as f64 + fx * p[y1 * w + x1] as f64;
                        out.channel_mut(c)[y * w + x] = ((1.0 - fy) * top + fy * bot) as f32;
                    }
                }
            }
        }
    }
    out
}
