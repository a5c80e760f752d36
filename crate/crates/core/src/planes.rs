//! Dense channel-major grids and the two compressed-domain feature types
//! built on them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShapeError {
    #[error("expected {expected} elements for shape {channels}x{height}x{width}, got {actual}")]
    Length {
        channels: usize,
        height: usize,
        width: usize,
        expected: usize,
        actual: usize,
    },
    #[error("expected {expected_channels}x{expected_height}x{expected_width}, got {channels}x{height}x{width}")]
    Dims {
        expected_channels: usize,
        expected_height: usize,
        expected_width: usize,
        channels: usize,
        height: usize,
        width: usize,
    },
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
}

/// A `channels × height × width` grid of `f32`, stored channel-major then
/// row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planes {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Planes {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self, ShapeError> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(ShapeError::Length {
                channels,
                height,
                width,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(c < self.channels && y < self.height && x < self.width);
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copy of channels `range` as a new grid.
    pub fn select_channels(&self, range: std::ops::Range<usize>) -> Planes {
        let n = self.plane_len();
        Planes {
            channels: range.len(),
            height: self.height,
            width: self.width,
            data: self.data[range.start * n..range.end * n].to_vec(),
        }
    }

    pub fn check_finite(&self) -> Result<(), ShapeError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(ShapeError::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn expect_dims(&self, channels: usize, height: usize, width: usize) -> Result<(), ShapeError> {
        if self.dims() == (channels, height, width) {
            Ok(())
        } else {
            Err(ShapeError::Dims {
                expected_channels: channels,
                expected_height: height,
                expected_width: width,
                channels: self.channels,
                height: self.height,
                width: self.width,
            })
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// `self += weight * other`, element-wise.
    pub fn add_scaled(&mut self, other: &Planes, weight: f32) {
        assert_eq!(self.dims(), other.dims());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += weight * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Planes) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .fold(0.0, f64::max)
    }
}

/// Block motion vectors on the quarter-resolution grid, in full-resolution
/// pixel units. Channels: forward dx, forward dy, backward dx, backward dy.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField(Planes);

impl MotionField {
    pub const CHANNELS: usize = 4;
    /// Pixels per block edge.
    pub const BLOCK: usize = 4;

    pub fn zeros(height_blocks: usize, width_blocks: usize) -> Self {
        Self(Planes::zeros(Self::CHANNELS, height_blocks, width_blocks))
    }

    pub fn for_frame(frame_height: usize, frame_width: usize) -> Self {
        Self::zeros(frame_height / Self::BLOCK, frame_width / Self::BLOCK)
    }

    pub fn from_planes(planes: Planes) -> Result<Self, ShapeError> {
        if planes.channels() != Self::CHANNELS {
            return Err(ShapeError::Dims {
                expected_channels: Self::CHANNELS,
                expected_height: planes.height(),
                expected_width: planes.width(),
                channels: planes.channels(),
                height: planes.height(),
                width: planes.width(),
            });
        }
        Ok(Self(planes))
    }

    pub fn height_blocks(&self) -> usize {
        self.0.height()
    }

    pub fn width_blocks(&self) -> usize {
        self.0.width()
    }

    pub fn planes(&self) -> &Planes {
        &self.0
    }

    pub fn planes_mut(&mut self) -> &mut Planes {
        &mut self.0
    }

    pub fn into_planes(self) -> Planes {
        self.0
    }

    /// Forward displacement (channels 0, 1).
    pub fn forward(&self) -> Planes {
        self.0.select_channels(0..2)
    }

    /// Backward displacement (channels 2, 3).
    pub fn backward(&self) -> Planes {
        self.0.select_channels(2..4)
    }

    /// `(fdx, fdy, bdx, bdy)` for a block.
    pub fn vector(&self, by: usize, bx: usize) -> [f32; 4] {
        [
            self.0.get(0, by, bx),
            self.0.get(1, by, bx),
            self.0.get(2, by, bx),
            self.0.get(3, by, bx),
        ]
    }

    pub fn set_forward(&mut self, by: usize, bx: usize, dx: f32, dy: f32) {
        self.0.set(0, by, bx, dx);
        self.0.set(1, by, bx, dy);
    }

    pub fn set_backward(&mut self, by: usize, bx: usize, dx: f32, dy: f32) {
        self.0.set(2, by, bx, dx);
        self.0.set(3, by, bx, dy);
    }
}

/// Per-pixel prediction residual, three full-resolution planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPlanes(Planes);

impl ResidualPlanes {
    pub const CHANNELS: usize = 3;

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Planes::zeros(Self::CHANNELS, height, width))
    }

    pub fn from_planes(planes: Planes) -> Result<Self, ShapeError> {
        if planes.channels() != Self::CHANNELS {
            return Err(ShapeError::Dims {
                expected_channels: Self::CHANNELS,
                expected_height: planes.height(),
                expected_width: planes.width(),
                channels: planes.channels(),
                height: planes.height(),
                width: planes.width(),
            });
        }
        Ok(Self(planes))
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn planes(&self) -> &Planes {
        &self.0
    }

    pub fn planes_mut(&mut self) -> &mut Planes {
        &mut self.0
    }

    pub fn into_planes(self) -> Planes {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Planes::from_vec(2, 2, 2, vec![0.0; 7]).unwrap_err();
        assert!(matches!(err, ShapeError::Length { expected: 8, actual: 7, .. }));
    }

    #[test]
    fn layout_is_channel_major() {
        let p = Planes::from_fn(2, 3, 4, |c, y, x| (c * 100 + y * 10 + x) as f32);
        assert_eq!(p.get(1, 2, 3), 123.0);
        assert_eq!(p.channel(1)[0], 100.0);
        assert_eq!(p.data()[p.index(1, 2, 3)], 123.0);
    }

    #[test]
    fn motion_field_channel_split() {
        let mut mv = MotionField::zeros(2, 2);
        mv.set_forward(1, 0, 1.5, -2.0);
        mv.set_backward(0, 1, 3.0, 4.0);
        assert_eq!(mv.forward().get(0, 1, 0), 1.5);
        assert_eq!(mv.forward().get(1, 1, 0), -2.0);
        assert_eq!(mv.backward().get(1, 0, 1), 4.0);
        assert_eq!(mv.vector(0, 1), [0.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn finite_check() {
        let mut p = Planes::zeros(1, 2, 2);
        assert!(p.check_finite().is_ok());
        p.set(0, 1, 1, f32::NAN);
        assert_eq!(p.check_finite(), Err(ShapeError::NonFinite(3)));
    }
}
