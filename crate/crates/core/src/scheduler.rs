//! GOP-level pipeline: I-frames go to the I-frame detector, each P/B-frame
//! either reuses its GOP's I-frame verdict or, when abnormal, goes to the
//! P/B-frame detector on its accumulated features.

use crate::accumulate::{AccumulateError, AccumulatorState, Interpolation};
use crate::anomaly::{detect_abnormal, AnomalyConfig, AnomalyError, AnomalyVerdict};
use crate::detector::{
    presence, Detection, Detector, DetectorBinding, DetectorError, DetectorRequest, GroundTruth, Role,
};
use crate::stream::{FrameKind, GopStream};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Anomaly(#[from] AnomalyError),
    #[error(transparent)]
    Accumulate(#[from] AccumulateError),
    #[error("detector setup failed: {0}")]
    Detector(#[from] DetectorError),
    #[error("{verdicts} verdicts but {truth} ground-truth labels")]
    LengthMismatch { verdicts: usize, truth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub tau_conf: f64,
    pub anomaly: AnomalyConfig,
    pub target_class: u16,
    pub i_detector: DetectorBinding,
    pub pb_detector: DetectorBinding,
    /// `false` sends every P/B-frame to the P/B detector.
    pub reuse_enabled: bool,
    pub interpolation: Interpolation,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau_conf: 0.1,
            anomaly: AnomalyConfig::default(),
            target_class: 0,
            i_detector: DetectorBinding::default(),
            pb_detector: DetectorBinding::default(),
            reuse_enabled: true,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.tau_conf) {
            return Err(PipelineError::Config(format!("tau_conf {} not in [0, 1]", self.tau_conf)));
        }
        self.anomaly.validate()?;
        Ok(())
    }

    /// Applies a seed to every noisy detector binding.
    pub fn set_seed(&mut self, seed: u64) {
        self.i_detector.set_seed(seed);
        // distinct stream for the second detector
        self.pb_detector.set_seed(seed.wrapping_add(1));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    IDetect,
    Reuse,
    PbDetect,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub accumulate_micros: f64,
    pub anomaly_micros: f64,
    /// Transport-measured detector time.
    pub detect_micros: f64,
    pub total_micros: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameVerdict {
    pub frame_index: u32,
    pub kind: FrameKind,
    pub presence: bool,
    pub source: VerdictSource,
    pub anomaly: Option<AnomalyVerdict>,
    pub timing: FrameTiming,
    /// Detector-reported inference time, when a detector ran.
    pub inference_micros: Option<u64>,
    pub detections: Vec<Detection>,
    /// Set when this verdict is degraded by a detector failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub verdicts: Vec<FrameVerdict>,
    pub accuracy: Option<f64>,
    pub reuse_ratio: f64,
    pub mean_latency_micros: f64,
    pub anomaly_latency_fraction: f64,
    pub i_frames: usize,
    pub pb_frames: usize,
    pub reused_frames: usize,
    pub pb_detected_frames: usize,
    pub detector_failures: usize,
}

impl RunReport {
    pub fn mean_latency_ms(&self) -> f64 {
        self.mean_latency_micros / 1000.0
    }

    /// Objective value with latency measured in milliseconds per frame.
    pub fn objective(&self, alpha: f64) -> Option<f64> {
        self.accuracy.map(|acc| score_objective(acc, self.mean_latency_ms(), alpha))
    }

    /// Copy with every wall-clock-derived field zeroed, for comparing runs.
    pub fn without_timing(&self) -> RunReport {
        let mut r = self.clone();
        for v in &mut r.verdicts {
            v.timing = FrameTiming::default();
        }
        r.mean_latency_micros = 0.0;
        r.anomaly_latency_fraction = 0.0;
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    fn summarize(config: PipelineConfig, verdicts: Vec<FrameVerdict>, truth: Option<Vec<bool>>) -> Self {
        let count = |s: VerdictSource| verdicts.iter().filter(|v| v.source == s).count();
        let i_frames = count(VerdictSource::IDetect);
        let reused_frames = count(VerdictSource::Reuse);
        let pb_detected_frames = count(VerdictSource::PbDetect);
        let pb_frames = reused_frames + pb_detected_frames;
        let total: f64 = verdicts.iter().map(|v| v.timing.total_micros).sum();
        let anomaly: f64 = verdicts.iter().map(|v| v.timing.anomaly_micros).sum();
        let accuracy = truth.and_then(|gt| evaluate_accuracy(&verdicts, &gt).ok());
        RunReport {
            config,
            accuracy,
            reuse_ratio: if pb_frames == 0 {
                0.0
            } else {
                reused_frames as f64 / pb_frames as f64
            },
            mean_latency_micros: if verdicts.is_empty() { 0.0 } else { total / verdicts.len() as f64 },
            anomaly_latency_fraction: if total > 0.0 { anomaly / total } else { 0.0 },
            i_frames,
            pb_frames,
            reused_frames,
            pb_detected_frames,
            detector_failures: verdicts.iter().filter(|v| v.error.is_some()).count(),
            verdicts,
        }
    }
}

fn micros_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e6
}

/// Runs the pipeline with detectors built from the config's bindings.
/// Built-in detectors read the stream's per-frame presence labels.
pub fn run_pipeline(stream: &GopStream, cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let truth = Arc::new(GroundTruth::from_stream(stream, cfg.target_class));
    run_pipeline_with_truth(stream, cfg, &truth)
}

pub fn run_pipeline_with_truth(
    stream: &GopStream,
    cfg: &PipelineConfig,
    truth: &Arc<GroundTruth>,
) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let mut i_det = cfg.i_detector.instantiate(Role::IFrame, truth)?;
    let mut pb_det = cfg.pb_detector.instantiate(Role::PbFrame, truth)?;
    run_with_detectors(stream, cfg, i_det.as_mut(), pb_det.as_mut())
}

/// Runs the pipeline with caller-provided detectors.
pub fn run_with_detectors(
    stream: &GopStream,
    cfg: &PipelineConfig,
    i_det: &mut dyn Detector,
    pb_det: &mut dyn Detector,
) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let mut verdicts = Vec::with_capacity(stream.len());
    for gop in stream.split_gops() {
        verdicts.extend(run_gop(&gop, cfg, i_det, pb_det)?);
    }
    Ok(RunReport::summarize(cfg.clone(), verdicts, stream.ground_truth()))
}

struct CachedIVerdict {
    presence: bool,
    error: Option<String>,
}

fn run_gop(
    gop: &GopStream,
    cfg: &PipelineConfig,
    i_det: &mut dyn Detector,
    pb_det: &mut dyn Detector,
) -> Result<Vec<FrameVerdict>, PipelineError> {
    let first = gop.first_index().unwrap_or(1);
    let mut out: Vec<Option<FrameVerdict>> = vec![None; gop.len()];
    let mut state = AccumulatorState::for_gop(gop, cfg.interpolation)?;
    let mut cached: Option<CachedIVerdict> = None;

    for frame in gop.frames_in_decode_order() {
        let start = Instant::now();
        let features = state.accumulate_frame(frame)?;
        let mut timing = FrameTiming {
            accumulate_micros: micros_since(start),
            ..FrameTiming::default()
        };

        let run_detector = |det: &mut dyn Detector, req: DetectorRequest<'_>, timing: &mut FrameTiming| {
            let t = Instant::now();
            let result = det.detect(&req);
            timing.detect_micros = micros_since(t);
            result
        };

        let mut verdict = match frame.kind {
            FrameKind::I => {
                let pixels = frame.pixels.as_ref().expect("validated I-frame");
                let req = DetectorRequest::i_frame(frame.index, cfg.target_class, pixels);
                let result = run_detector(i_det, req, &mut timing);
                let v = detector_verdict(frame.index, frame.kind, VerdictSource::IDetect, None, result, cfg);
                cached = Some(CachedIVerdict {
                    presence: v.presence,
                    error: v.error.clone(),
                });
                v
            }
            FrameKind::P | FrameKind::B => {
                let anomaly = if cfg.reuse_enabled {
                    let t = Instant::now();
                    let a = detect_abnormal(&features, &cfg.anomaly)?;
                    timing.anomaly_micros = micros_since(t);
                    Some(a)
                } else {
                    None
                };
                let reuse = anomaly.as_ref().is_some_and(|a| !a.abnormal);
                if reuse {
                    let c = cached.as_ref().expect("I-frame is decoded first");
                    FrameVerdict {
                        frame_index: frame.index,
                        kind: frame.kind,
                        presence: c.presence,
                        source: VerdictSource::Reuse,
                        anomaly,
                        timing: FrameTiming::default(),
                        inference_micros: None,
                        detections: Vec::new(),
                        error: c.error.as_ref().map(|e| format!("reused failed I-frame verdict: {e}")),
                    }
                } else {
                    let req = DetectorRequest::pb_frame(frame.index, cfg.target_class, &features.mv_acc, &features.r_acc);
                    let result = run_detector(pb_det, req, &mut timing);
                    detector_verdict(frame.index, frame.kind, VerdictSource::PbDetect, anomaly, result, cfg)
                }
            }
        };
        timing.total_micros = micros_since(start);
        verdict.timing = timing;
        out[(frame.index - first) as usize] = Some(verdict);
    }
    Ok(out.into_iter().map(|v| v.expect("every frame decoded")).collect())
}

fn detector_verdict(
    frame_index: u32,
    kind: FrameKind,
    source: VerdictSource,
    anomaly: Option<AnomalyVerdict>,
    result: Result<crate::detector::DetectorResponse, DetectorError>,
    cfg: &PipelineConfig,
) -> FrameVerdict {
    match result {
        Ok(resp) => FrameVerdict {
            frame_index,
            kind,
            presence: presence(&resp, cfg.tau_conf, cfg.target_class),
            source,
            anomaly,
            timing: FrameTiming::default(),
            inference_micros: Some(resp.inference_micros),
            detections: resp.detections,
            error: None,
        },
        Err(e) => {
            log::warn!("frame {frame_index}: detector failed: {e}");
            FrameVerdict {
                frame_index,
                kind,
                presence: false,
                source,
                anomaly,
                timing: FrameTiming::default(),
                inference_micros: None,
                detections: Vec::new(),
                error: Some(e.to_string()),
            }
        }
    }
}

/// Fraction of frames whose presence verdict matches the label.
pub fn evaluate_accuracy(verdicts: &[FrameVerdict], gt: &[bool]) -> Result<f64, PipelineError> {
    if verdicts.len() != gt.len() {
        return Err(PipelineError::LengthMismatch {
            verdicts: verdicts.len(),
            truth: gt.len(),
        });
    }
    if gt.is_empty() {
        return Ok(1.0);
    }
    let correct = verdicts.iter().zip(gt).filter(|(v, &g)| v.presence == g).count();
    Ok(correct as f64 / gt.len() as f64)
}

/// `accuracy + alpha * latency`; pass a negative `alpha` to penalize latency.
pub fn score_objective(accuracy: f64, latency: f64, alpha: f64) -> f64 {
    accuracy + alpha * latency
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub tau_conf: f64,
    pub tau_ab: f64,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
}

pub const SWEEP_CSV_HEADER: &str = "tau_conf,tau_ab,accuracy,reuse_ratio,mean_latency_ms,anomaly_fraction";

impl SweepResult {
    pub fn get(&self, tau_conf: f64, tau_ab: f64) -> Option<&RunReport> {
        self.entries
            .iter()
            .find(|e| e.tau_conf == tau_conf && e.tau_ab == tau_ab)
            .map(|e| &e.report)
    }

    /// One row per configuration, `tau_conf`-major.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            let acc = e.report.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{:.6},{:.3},{:.6}\n",
                e.tau_conf,
                e.tau_ab,
                acc,
                e.report.reuse_ratio,
                e.report.mean_latency_ms(),
                e.report.anomaly_latency_fraction
            ));
        }
        out
    }

    /// Entry maximizing the objective; entries without accuracy are skipped.
    pub fn best_by_objective(&self, alpha: f64) -> Option<&SweepEntry> {
        self.entries
            .iter()
            .filter_map(|e| e.report.objective(alpha).map(|s| (s, e)))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, e)| e)
    }
}

/// One run per `(tau_conf, tau_ab)` pair, `tau_conf`-major.
pub fn sweep(
    stream: &GopStream,
    tau_conf_list: &[f64],
    tau_ab_list: &[f64],
    base: &PipelineConfig,
) -> Result<SweepResult, PipelineError> {
    let truth = Arc::new(GroundTruth::from_stream(stream, base.target_class));
    sweep_with_truth(stream, tau_conf_list, tau_ab_list, base, &truth)
}

pub fn sweep_with_truth(
    stream: &GopStream,
    tau_conf_list: &[f64],
    tau_ab_list: &[f64],
    base: &PipelineConfig,
    truth: &Arc<GroundTruth>,
) -> Result<SweepResult, PipelineError> {
    if tau_conf_list.is_empty() || tau_ab_list.is_empty() {
        return Err(PipelineError::Config("sweep needs at least one tau_conf and one tau_ab".into()));
    }
    let mut entries = Vec::with_capacity(tau_conf_list.len() * tau_ab_list.len());
    for &tau_conf in tau_conf_list {
        for &tau_ab in tau_ab_list {
            let mut cfg = base.clone();
            cfg.tau_conf = tau_conf;
            cfg.anomaly.tau_ab = tau_ab;
            let report = run_pipeline_with_truth(stream, &cfg, truth)?;
            entries.push(SweepEntry {
                tau_conf,
                tau_ab,
                report,
            });
        }
    }
    Ok(SweepResult { entries })
}
