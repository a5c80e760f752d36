//! Analytic system capability and its Monte-Carlo check against real
//! pipeline runs with noisy detectors.

use crate::detector::{BBox, DetectorBinding, GroundTruth, Role};
use crate::scheduler::{run_with_detectors, PipelineConfig, PipelineError, VerdictSource};
use crate::synth::{Injection, MotionModel, SynthError, SynthSpec};
use crate::stream::{FrameKind, GopStream};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CapabilityError {
    #[error("invalid probability: {0}")]
    InvalidProbability(String),
    #[error("invalid Monte-Carlo setup: {0}")]
    InvalidSetup(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Deserialize)]
struct ParamsDoc {
    p_i: f64,
    p_pb: Option<f64>,
    p_ab: f64,
    p_new: f64,
    c_i: f64,
    c_pb: f64,
}

/// Frame-type, abnormality and novelty probabilities plus detector
/// capabilities. `p_pb` defaults to `1 - p_i` when omitted from a document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsDoc")]
pub struct CapabilityParams {
    pub p_i: f64,
    pub p_pb: f64,
    pub p_ab: f64,
    pub p_new: f64,
    pub c_i: f64,
    pub c_pb: f64,
}

impl TryFrom<ParamsDoc> for CapabilityParams {
    type Error = CapabilityError;

    fn try_from(d: ParamsDoc) -> Result<Self, Self::Error> {
        let p = CapabilityParams {
            p_i: d.p_i,
            p_pb: d.p_pb.unwrap_or(1.0 - d.p_i),
            p_ab: d.p_ab,
            p_new: d.p_new,
            c_i: d.c_i,
            c_pb: d.c_pb,
        };
        p.validate()?;
        Ok(p)
    }
}

impl CapabilityParams {
    pub fn new(p_i: f64, p_ab: f64, p_new: f64, c_i: f64, c_pb: f64) -> Result<Self, CapabilityError> {
        let p = Self {
            p_i,
            p_pb: 1.0 - p_i,
            p_ab,
            p_new,
            c_i,
            c_pb,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CapabilityError> {
        for (name, v) in [
            ("p_i", self.p_i),
            ("p_pb", self.p_pb),
            ("p_ab", self.p_ab),
            ("p_new", self.p_new),
            ("c_i", self.c_i),
            ("c_pb", self.c_pb),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CapabilityError::InvalidProbability(format!("{name} = {v} not in [0, 1]")));
            }
        }
        if (self.p_i + self.p_pb - 1.0).abs() > 1e-9 {
            return Err(CapabilityError::InvalidProbability(format!(
                "p_i + p_pb = {} must equal 1",
                self.p_i + self.p_pb
            )));
        }
        Ok(())
    }
}

/// `p_i·c_i + p_pb·[(1 − p_ab)(1 − p_new)·c_i + p_ab·c_pb]`.
pub fn system_capability(p: &CapabilityParams) -> Result<f64, CapabilityError> {
    p.validate()?;
    Ok(p.p_i * p.c_i + p.p_pb * ((1.0 - p.p_ab) * (1.0 - p.p_new) * p.c_i + p.p_ab * p.c_pb))
}

/// `∂C_sys/∂p_ab = p_pb·(c_pb − (1 − p_new)·c_i)`.
pub fn capability_slope_p_ab(p: &CapabilityParams) -> f64 {
    p.p_pb * (p.c_pb - (1.0 - p.p_new) * p.c_i)
}

/// True when reusing more frames (lowering `p_ab`) raises capability,
/// i.e. the reuse gain `(1 − p_new)·c_i` exceeds `c_pb`.
pub fn reuse_improves_capability(p: &CapabilityParams) -> bool {
    capability_slope_p_ab(p) < 0.0
}

/// Formula value when stale reused frames keep the credit of a flipped
/// I-frame verdict instead of scoring zero.
pub fn partial_credit_capability(p: &CapabilityParams) -> Result<f64, CapabilityError> {
    Ok(system_capability(p)? + p.p_pb * (1.0 - p.p_ab) * p.p_new * (1.0 - p.c_i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloConfig {
    pub frames_per_trial: usize,
    pub trials: usize,
    pub seed: u64,
    /// `(height, width)`.
    pub frame_size: (u32, u32),
    pub residual_noise_sigma: f64,
    /// Residual added to an 8×8 block to make a whole GOP abnormal.
    pub hot_intensity: f32,
    pub tau_ab: f64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            frames_per_trial: 10_000,
            trials: 10,
            seed: 0,
            frame_size: (32, 32),
            residual_noise_sigma: 1.0,
            hot_intensity: 80.0,
            tau_ab: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub frames: usize,
    /// Stale reused frames scored as incorrect.
    pub accuracy: f64,
    /// Plain presence accuracy; stale reused frames may be right by chance.
    pub plain_accuracy: f64,
    pub p_i: f64,
    pub p_ab: f64,
    pub p_new: f64,
    pub c_i: f64,
    pub c_pb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub requested: CapabilityParams,
    pub gop_pattern: String,
    pub analytic: f64,
    /// Formula evaluated at the pooled empirical rates.
    pub analytic_at_empirical: f64,
    pub partial_credit_analytic: f64,
    pub mean: f64,
    /// 95% Student-t half-width; absent for a single trial.
    pub ci_half_width: Option<f64>,
    pub plain_mean: f64,
    pub empirical: TrialOutcome,
    pub trials: Vec<TrialOutcome>,
}

impl MonteCarloReport {
    pub fn analytic_within_ci(&self) -> bool {
        self.ci_half_width
            .is_some_and(|hw| (self.mean - self.analytic).abs() <= hw)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,frames,accuracy,plain_accuracy,p_i,p_ab,p_new,c_i,c_pb\n");
        for (i, t) in self.trials.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                t.frames, t.accuracy, t.plain_accuracy, t.p_i, t.p_ab, t.p_new, t.c_i, t.c_pb
            ));
        }
        out
    }
}

/// Pattern with one I, `1/p_i − 2` B-frames and a closing P.
pub fn pattern_for_p_i(p_i: f64) -> Result<String, CapabilityError> {
    if !(p_i > 0.0 && p_i <= 1.0) {
        return Err(CapabilityError::InvalidSetup(format!("p_i = {p_i} needs at least one I-frame")));
    }
    let len = (1.0 / p_i).round() as usize;
    Ok(match len {
        0 | 1 => "I".to_string(),
        n => format!("I{}P", "B".repeat(n - 2)),
    })
}

struct GopPlan {
    i_presence: bool,
    hot: bool,
    /// Per frame after the I-frame: presence differs from the I-frame's.
    novel: Vec<bool>,
}

/// Runs the pipeline on generated static streams where each GOP is abnormal
/// with probability `p_ab` and each P/B-frame independently carries a new
/// object state with probability `p_new`. Detectors are noisy with
/// capabilities `c_i` and `c_pb`.
pub fn monte_carlo_capability(
    params: &CapabilityParams,
    mc: &MonteCarloConfig,
) -> Result<MonteCarloReport, CapabilityError> {
    params.validate()?;
    if mc.trials == 0 || mc.frames_per_trial == 0 {
        return Err(CapabilityError::InvalidSetup("trials and frames_per_trial must be positive".into()));
    }
    let pattern = pattern_for_p_i(params.p_i)?;
    let trials = (0..mc.trials)
        .map(|t| run_trial(params, mc, &pattern, mc.seed.wrapping_add(t as u64)))
        .collect::<Result<Vec<_>, _>>()?;

    let n = trials.len() as f64;
    let mean = trials.iter().map(|t| t.accuracy).sum::<f64>() / n;
    let plain_mean = trials.iter().map(|t| t.plain_accuracy).sum::<f64>() / n;
    let ci_half_width = (trials.len() > 1).then(|| {
        let var = trials.iter().map(|t| (t.accuracy - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive degrees of freedom");
        t.inverse_cdf(0.975) * (var / n).sqrt()
    });
    let pooled = |f: fn(&TrialOutcome) -> f64| trials.iter().map(f).sum::<f64>() / n;
    let empirical = TrialOutcome {
        frames: trials.iter().map(|t| t.frames).sum(),
        accuracy: mean,
        plain_accuracy: plain_mean,
        p_i: pooled(|t| t.p_i),
        p_ab: pooled(|t| t.p_ab),
        p_new: pooled(|t| t.p_new),
        c_i: pooled(|t| t.c_i),
        c_pb: pooled(|t| t.c_pb),
    };
    let at_empirical = CapabilityParams {
        p_i: empirical.p_i,
        p_pb: 1.0 - empirical.p_i,
        p_ab: empirical.p_ab,
        p_new: empirical.p_new,
        ..*params
    };
    Ok(MonteCarloReport {
        requested: *params,
        gop_pattern: pattern,
        analytic: system_capability(params)?,
        analytic_at_empirical: system_capability(&at_empirical)?,
        partial_credit_analytic: partial_credit_capability(params)?,
        mean,
        ci_half_width,
        plain_mean,
        empirical,
        trials,
    })
}

fn run_trial(
    params: &CapabilityParams,
    mc: &MonteCarloConfig,
    pattern: &str,
    seed: u64,
) -> Result<TrialOutcome, CapabilityError> {
    let gop_len = pattern.len();
    let gop_count = mc.frames_per_trial.div_ceil(gop_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plans: Vec<GopPlan> = (0..gop_count)
        .map(|_| GopPlan {
            i_presence: rng.random_bool(0.5),
            hot: rng.random_bool(params.p_ab),
            novel: (1..gop_len).map(|_| rng.random_bool(params.p_new)).collect(),
        })
        .collect();

    let target_class = 0;
    let mut truth = GroundTruth::new();
    let (h, w) = mc.frame_size;
    for (g, plan) in plans.iter().enumerate() {
        for k in 0..gop_len {
            let index = (g * gop_len + k + 1) as u32;
            let present = plan.i_presence ^ (k > 0 && plan.novel[k - 1]);
            truth.mark_known(index);
            if present {
                truth.add(index, crate::detector::TruthObject {
                    class_id: target_class,
                    bbox: BBox::full_frame(w, h),
                });
            }
        }
    }
    let truth = Arc::new(truth);

    let mut cfg = PipelineConfig {
        tau_conf: 0.5,
        target_class,
        i_detector: DetectorBinding::Noisy {
            capability: params.c_i,
            seed: 0,
            delay_ms: 0.0,
        },
        pb_detector: DetectorBinding::Noisy {
            capability: params.c_pb,
            seed: 0,
            delay_ms: 0.0,
        },
        ..PipelineConfig::default()
    };
    cfg.anomaly.tau_ab = mc.tau_ab;
    cfg.set_seed(seed);
    let mut i_det = cfg.i_detector.instantiate(Role::IFrame, &truth).map_err(PipelineError::from)?;
    let mut pb_det = cfg.pb_detector.instantiate(Role::PbFrame, &truth).map_err(PipelineError::from)?;

    // The hot block sits in the first P-frame, which every other P/B-frame
    // of the GOP accumulates.
    let first_p = pattern.find('P');
    let hot_box = BBox { x: 0.0, y: 0.0, w: 8.0, h: 8.0 };
    let base = SynthSpec {
        frame_size: mc.frame_size,
        gop_pattern: pattern.to_string(),
        gop_count: gop_count as u32,
        motion_model: MotionModel::Static,
        residual_noise_sigma: mc.residual_noise_sigma,
        injections: Vec::new(),
        seed: seed ^ 0x5EED,
        target_class,
    };

    let mut tally = Tally::default();
    for (g, plan) in plans.iter().enumerate() {
        let mut spec = base.clone();
        if let (true, Some(p)) = (plan.hot, first_p) {
            spec.injections.push(Injection {
                frame_index: (g * gop_len + p + 1) as u32,
                bbox: hot_box,
                intensity: mc.hot_intensity,
                // a class other than the target leaves presence untouched
                class_id: target_class + 1,
                moving: false,
            });
        }
        let (gop, _) = spec.generate_gop(g as u32)?;
        let gop = relabel(gop, &truth, target_class)?;
        let report = run_with_detectors(&gop, &cfg, i_det.as_mut(), pb_det.as_mut())?;
        for v in &report.verdicts {
            let gt = truth.presence(v.frame_index, target_class).unwrap_or(false);
            let k = (v.frame_index as usize - 1) % gop_len;
            let stale = k > 0 && plan.novel[k - 1];
            tally.add(v.kind, v.source, v.presence == gt, stale);
        }
    }
    Ok(tally.outcome())
}

fn relabel(gop: GopStream, truth: &GroundTruth, target_class: u16) -> Result<GopStream, CapabilityError> {
    let (w, h) = (gop.frame_width(), gop.frame_height());
    let mut frames = gop.into_frames();
    for f in &mut frames {
        f.gt_presence = truth.presence(f.index, target_class);
    }
    GopStream::new(w, h, frames).map_err(|e| CapabilityError::InvalidSetup(e.to_string()))
}

#[derive(Default)]
struct Tally {
    frames: usize,
    scored: usize,
    plain: usize,
    i_frames: usize,
    i_correct: usize,
    pb_frames: usize,
    pb_detected: usize,
    pb_correct: usize,
    novel: usize,
}

impl Tally {
    fn add(&mut self, kind: FrameKind, source: VerdictSource, correct: bool, stale: bool) {
        self.frames += 1;
        self.plain += correct as usize;
        match source {
            VerdictSource::IDetect => {
                self.i_frames += 1;
                self.i_correct += correct as usize;
                self.scored += correct as usize;
            }
            VerdictSource::Reuse => {
                self.scored += (correct && !stale) as usize;
            }
            VerdictSource::PbDetect => {
                self.pb_detected += 1;
                self.pb_correct += correct as usize;
                self.scored += correct as usize;
            }
        }
        if kind != FrameKind::I {
            self.pb_frames += 1;
            self.novel += stale as usize;
        }
    }

    fn outcome(&self) -> TrialOutcome {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        TrialOutcome {
            frames: self.frames,
            accuracy: ratio(self.scored, self.frames),
            plain_accuracy: ratio(self.plain, self.frames),
            p_i: ratio(self.i_frames, self.frames),
            p_ab: ratio(self.pb_detected, self.pb_frames),
            p_new: ratio(self.novel, self.pb_frames),
            c_i: ratio(self.i_correct, self.i_frames),
            c_pb: ratio(self.pb_correct, self.pb_detected),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(p_i: f64, p_ab: f64, p_new: f64, c_i: f64, c_pb: f64) -> CapabilityParams {
        CapabilityParams::new(p_i, p_ab, p_new, c_i, c_pb).unwrap()
    }

    #[test]
    fn worked_example() {
        let c = system_capability(&p(0.2, 0.2, 0.0, 0.99, 0.9)).unwrap();
        let direct = 0.2 * 0.99 + 0.8 * (0.8 * 0.99 + 0.2 * 0.9);
        assert!((c - 0.9756).abs() < 1e-12);
        assert_eq!(c, direct);
    }

    #[test]
    fn degenerate_streams() {
        assert_eq!(system_capability(&p(1.0, 0.3, 0.5, 0.7, 0.1)).unwrap(), 0.7);
        assert_eq!(system_capability(&p(0.0, 1.0, 0.5, 0.7, 0.4)).unwrap(), 0.4);
    }

    #[test]
    fn rejects_bad_probabilities() {
        assert!(matches!(
            CapabilityParams::new(0.2, 1.2, 0.0, 0.9, 0.9),
            Err(CapabilityError::InvalidProbability(_))
        ));
        let mut q = p(0.2, 0.2, 0.0, 0.9, 0.9);
        q.p_pb = 0.7;
        assert!(system_capability(&q).is_err());
    }

    #[test]
    fn params_document() {
        let q: CapabilityParams =
            serde_json::from_str(r#"{"p_i":0.25,"p_ab":0.1,"p_new":0.01,"c_i":0.99,"c_pb":0.9}"#).unwrap();
        assert_eq!(q.p_pb, 0.75);
        assert!(serde_json::from_str::<CapabilityParams>(r#"{"p_i":2,"p_ab":0,"p_new":0,"c_i":1,"c_pb":1}"#).is_err());
    }

    #[test]
    fn patterns() {
        assert_eq!(pattern_for_p_i(0.2).unwrap(), "IBBBP");
        assert_eq!(pattern_for_p_i(0.5).unwrap(), "IP");
        assert_eq!(pattern_for_p_i(1.0).unwrap(), "I");
        assert!(pattern_for_p_i(0.0).is_err());
    }

    #[test]
    fn perfect_detectors_without_novelty_are_exact() {
        let mc = MonteCarloConfig {
            frames_per_trial: 500,
            trials: 3,
            ..MonteCarloConfig::default()
        };
        let r = monte_carlo_capability(&p(0.2, 0.3, 0.0, 1.0, 1.0), &mc).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.ci_half_width, Some(0.0));
    }

    #[test]
    fn hot_gops_drive_the_abnormal_rate() {
        let mc = MonteCarloConfig {
            frames_per_trial: 2000,
            trials: 2,
            ..MonteCarloConfig::default()
        };
        let r = monte_carlo_capability(&p(0.2, 0.25, 0.0, 1.0, 1.0), &mc).unwrap();
        assert!((r.empirical.p_ab - 0.25).abs() < 0.05, "{:?}", r.empirical);
        assert_eq!(r.empirical.p_i, 0.2);
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.0f64..=1.0
    }

    proptest! {
        #[test]
        fn linear_in_detector_capabilities(
            p_i in unit(), p_ab in unit(), p_new in unit(), c_i in unit(), c_pb in unit(), t in unit()
        ) {
            let f = |ci: f64, cpb: f64| system_capability(&p(p_i, p_ab, p_new, ci, cpb)).unwrap();
            let mid_i = f(t * c_i + (1.0 - t) * 0.3, c_pb);
            prop_assert!((mid_i - (t * f(c_i, c_pb) + (1.0 - t) * f(0.3, c_pb))).abs() < 1e-12);
            let mid_pb = f(c_i, t * c_pb + (1.0 - t) * 0.3);
            prop_assert!((mid_pb - (t * f(c_i, c_pb) + (1.0 - t) * f(c_i, 0.3))).abs() < 1e-12);
        }

        #[test]
        fn slope_matches_finite_difference(
            p_i in unit(), p_ab in 0.0f64..0.99, p_new in unit(), c_i in unit(), c_pb in unit()
        ) {
            let q = p(p_i, p_ab, p_new, c_i, c_pb);
            let h = 1e-3;
            let fd = (system_capability(&CapabilityParams { p_ab: p_ab + h, ..q }).unwrap()
                - system_capability(&q).unwrap()) / h;
            prop_assert!((fd - capability_slope_p_ab(&q)).abs() < 1e-9);
        }

        #[test]
        fn reuse_region(p_i in 0.0f64..0.99, p_new in unit(), c_i in unit(), c_pb in unit()) {
            let lo = p(p_i, 0.1, p_new, c_i, c_pb);
            let hi = CapabilityParams { p_ab: 0.9, ..lo };
            let gain = system_capability(&lo).unwrap() - system_capability(&hi).unwrap();
            if (1.0 - p_new) * c_i > c_pb + 1e-9 {
                prop_assert!(reuse_improves_capability(&lo));
                prop_assert!(gain > 0.0);
            } else if (1.0 - p_new) * c_i < c_pb - 1e-9 {
                prop_assert!(!reuse_improves_capability(&lo));
                prop_assert!(gain < 0.0);
            }
        }

        #[test]
        fn bounded_by_unit_interval(p_i in unit(), p_ab in unit(), p_new in unit(), c_i in unit(), c_pb in unit()) {
            let c = system_capability(&p(p_i, p_ab, p_new, c_i, c_pb)).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&c));
        }
    }
}
