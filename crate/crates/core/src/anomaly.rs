//! Abnormal predicted-frame test.
//!
//! A grid cell is flagged when its accumulated motion is zero in every
//! channel (nothing was compensated) while its pooled accumulated residual
//! lies outside `mu ± k·sigma` in at least one channel. A frame is abnormal
//! when the flagged fraction of cells exceeds `tau_ab`.

use crate::accumulate::AccumulatedFeatures;
use crate::planes::{Planes, ResidualPlanes};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnomalyError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid anomaly config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Average,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalyConfig {
    pub tau_ab: f64,
    pub zero_epsilon: f64,
    pub sigma_k: f64,
    pub pooling: Pooling,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            tau_ab: 2e-2,
            zero_epsilon: 0.0,
            sigma_k: 3.0,
            pooling: Pooling::Average,
        }
    }
}

impl AnomalyConfig {
    pub fn with_tau_ab(tau_ab: f64) -> Self {
        Self {
            tau_ab,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AnomalyError> {
        if !(self.tau_ab > 0.0 && self.tau_ab < 1.0) {
            return Err(AnomalyError::InvalidConfig(format!("tau_ab {} not in (0, 1)", self.tau_ab)));
        }
        if !(self.zero_epsilon >= 0.0) {
            return Err(AnomalyError::InvalidConfig(format!(
                "zero_epsilon {} is negative",
                self.zero_epsilon
            )));
        }
        if !(self.sigma_k > 0.0 && self.sigma_k.is_finite()) {
            return Err(AnomalyError::InvalidConfig(format!("sigma_k {} must be positive", self.sigma_k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    pub abnormal: bool,
    pub flagged_fraction: f64,
    /// Cells with zero accumulated motion.
    pub t1_count: usize,
    /// Cells with an out-of-band pooled residual.
    pub t2_count: usize,
    pub joint_count: usize,
    pub mu: f64,
    pub sigma: f64,
    /// `sigma == 0`: no cell can be an outlier, verdict forced normal.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate_sigma: bool,
}

/// 4x4 pooling of each residual plane.
pub fn downsample_residual(r: &ResidualPlanes, pooling: Pooling) -> Result<Planes, AnomalyError> {
    let (c, h, w) = r.planes().dims();
    if h % 4 != 0 || w % 4 != 0 {
        return Err(AnomalyError::ShapeMismatch(format!("{h}x{w} is not a multiple of 4")));
    }
    let (hb, wb) = (h / 4, w / 4);
    let mut out = Planes::zeros(c, hb, wb);
    for ch in 0..c {
        let src = r.planes().channel(ch);
        let dst = out.channel_mut(ch);
        for by in 0..hb {
            for bx in 0..wb {
                let block = (0..4).flat_map(|dy| {
                    let row = (by * 4 + dy) * w + bx * 4;
                    src[row..row + 4].iter().copied()
                });
                dst[by * wb + bx] = match pooling {
                    Pooling::Average => (block.map(f64::from).sum::<f64>() / 16.0) as f32,
                    Pooling::Max => block.fold(f32::NEG_INFINITY, f32::max),
                };
            }
        }
    }
    Ok(out)
}

pub fn detect_abnormal(
    features: &AccumulatedFeatures,
    cfg: &AnomalyConfig,
) -> Result<AnomalyVerdict, AnomalyError> {
    let mv = features.mv_acc.planes();
    let pooled = downsample_residual(&features.r_acc, cfg.pooling)?;
    let (_, hb, wb) = pooled.dims();
    if (mv.height(), mv.width()) != (hb, wb) {
        return Err(AnomalyError::ShapeMismatch(format!(
            "motion grid {}x{} vs pooled residual {hb}x{wb}",
            mv.height(),
            mv.width()
        )));
    }
    let cells = hb * wb;

    let n = pooled.data().len() as f64;
    let mu = pooled.data().iter().map(|&v| v as f64).sum::<f64>() / n.max(1.0);
    let var = pooled
        .data()
        .iter()
        .map(|&v| (v as f64 - mu).powi(2))
        .sum::<f64>()
        / n.max(1.0);
    let sigma = var.sqrt();
    let degenerate_sigma = sigma == 0.0;
    let (lo, hi) = (mu - cfg.sigma_k * sigma, mu + cfg.sigma_k * sigma);

    let (mut t1_count, mut t2_count, mut joint_count) = (0, 0, 0);
    for i in 0..cells {
        let t1 = (0..4).all(|c| (mv.channel(c)[i] as f64).abs() <= cfg.zero_epsilon);
        let t2 = !degenerate_sigma
            && (0..pooled.channels()).any(|c| {
                let v = pooled.channel(c)[i] as f64;
                v < lo || v > hi
            });
        t1_count += usize::from(t1);
        t2_count += usize::from(t2);
        joint_count += usize::from(t1 && t2);
    }
    let flagged_fraction = if cells == 0 { 0.0 } else { joint_count as f64 / cells as f64 };
    Ok(AnomalyVerdict {
        abnormal: flagged_fraction > cfg.tau_ab,
        flagged_fraction,
        t1_count,
        t2_count,
        joint_count,
        mu,
        sigma,
        degenerate_sigma,
    })
}
