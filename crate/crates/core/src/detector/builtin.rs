use super::{
    check_capability, BBox, Capability, Detection, Detector, DetectorError, DetectorRequest,
    DetectorResponse, GroundTruth,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use std::time::Duration;

/// Confidence attached to every built-in detection.
pub const ORACLE_CONFIDENCE: f32 = 0.9;

fn pause(delay: Duration) -> u64 {
    if !delay.is_zero() {
        std::thread::sleep(delay);
    }
    delay.as_micros() as u64
}

fn truth_detections(truth: &GroundTruth, req: &DetectorRequest<'_>) -> Vec<Detection> {
    truth
        .objects(req.frame_index)
        .unwrap_or_default()
        .iter()
        .map(|o| Detection {
            class_id: o.class_id,
            confidence: ORACLE_CONFIDENCE,
            bbox: o.bbox.clamp_to(req.width, req.height),
        })
        .collect()
}

/// Reports exactly the ground-truth objects of each frame.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    truth: Arc<GroundTruth>,
    capability: Capability,
    delay: Duration,
}

impl OracleDetector {
    pub fn new(truth: Arc<GroundTruth>) -> Self {
        Self {
            truth,
            capability: Capability::Both,
            delay: Duration::ZERO,
        }
    }

    pub fn with_capability(mut self, capability: Capability) -> Self {
        self.capability = capability;
        self
    }

    /// Synthetic per-call latency, also reported as the inference time.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

impl Detector for OracleDetector {
    fn name(&self) -> &str {
        "oracle"
    }

    fn capability(&self) -> Capability {
        self.capability
    }

    fn detect(&mut self, req: &DetectorRequest<'_>) -> Result<DetectorResponse, DetectorError> {
        check_capability(self.capability, req)?;
        let detections = truth_detections(&self.truth, req);
        let inference_micros = pause(self.delay);
        Ok(DetectorResponse {
            detections,
            inference_micros,
        })
    }
}

/// The oracle with its target-class verdict flipped with probability
/// `1 - accuracy`. The flip for a frame depends only on the seed, the frame
/// index and the request kind, so verdicts are reproducible regardless of
/// call order.
#[derive(Debug, Clone)]
pub struct NoisyDetector {
    truth: Arc<GroundTruth>,
    accuracy: f64,
    seed: u64,
    capability: Capability,
    delay: Duration,
}

impl NoisyDetector {
    pub fn new(truth: Arc<GroundTruth>, accuracy: f64, seed: u64) -> Result<Self, DetectorError> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(DetectorError::Config(format!("capability {accuracy} not in [0, 1]")));
        }
        Ok(Self {
            truth,
            accuracy,
            seed,
            capability: Capability::Both,
            delay: Duration::ZERO,
        })
    }

    pub fn with_capability(mut self, capability: Capability) -> Self {
        self.capability = capability;
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    fn flips(&self, req: &DetectorRequest<'_>) -> bool {
        let key = (u64::from(req.frame_index) << 8) | u64::from(req.kind().code());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.random_bool(1.0 - self.accuracy)
    }
}

impl Detector for NoisyDetector {
    fn name(&self) -> &str {
        "noisy"
    }

    fn capability(&self) -> Capability {
        self.capability
    }

    fn detect(&mut self, req: &DetectorRequest<'_>) -> Result<DetectorResponse, DetectorError> {
        check_capability(self.capability, req)?;
        let mut detections = truth_detections(&self.truth, req);
        if self.flips(req) {
            let has_target = detections.iter().any(|d| d.class_id == req.target_class);
            if has_target {
                detections.retain(|d| d.class_id != req.target_class);
            } else {
                detections.push(Detection {
                    class_id: req.target_class,
                    confidence: ORACLE_CONFIDENCE,
                    bbox: BBox::full_frame(req.width, req.height),
                });
            }
        }
        let inference_micros = pause(self.delay);
        Ok(DetectorResponse {
            detections,
            inference_micros,
        })
    }
}

/// Never detects anything.
#[derive(Debug, Clone, Default)]
pub struct NullDetector {
    delay: Duration,
}

impl NullDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

impl Detector for NullDetector {
    fn name(&self) -> &str {
        "null"
    }

    fn capability(&self) -> Capability {
        Capability::Both
    }

    fn detect(&mut self, _req: &DetectorRequest<'_>) -> Result<DetectorResponse, DetectorError> {
        Ok(DetectorResponse {
            detections: Vec::new(),
            inference_micros: pause(self.delay),
        })
    }
}
