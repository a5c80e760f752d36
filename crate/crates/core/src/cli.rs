//! Command-line front end.

use crate::capability::{monte_carlo_capability, system_capability, CapabilityParams, MonteCarloConfig};
use crate::detector::{
    wire, Capability, Detector, DetectorBinding, GroundTruth, NoisyDetector, NullDetector, OracleDetector,
};
use crate::scheduler::{run_pipeline, sweep, PipelineConfig, PipelineError, RunReport};
use crate::stream::{emit_stream, emit_stream_json, parse_stream, GopStream};
use crate::synth::{generate, SynthSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_TAU_CONF_GRID: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const DEFAULT_TAU_AB_GRID: [f64; 5] = [4e-3, 8e-3, 1.2e-2, 1.6e-2, 2e-2];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("detector failure: {0}")]
    Detector(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Detector(_) => 2,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Detector(d) => CliError::Detector(d.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "gop-reuse", version, about = "Privacy-object detection on compressed video with I-frame result reuse")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic stream from a JSON spec.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Output sidecar; a `.json` extension selects the JSON mirror.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the pipeline on a stream and write a report.
    Run {
        #[command(flatten)]
        common: RunArgs,
        #[arg(long)]
        tau_conf: Option<f64>,
        #[arg(long)]
        tau_ab: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of thresholds; writes `sweep.csv` and `sweep.json` into `--out`.
    Sweep {
        #[command(flatten)]
        common: RunArgs,
        #[arg(long = "tau-conf")]
        tau_conf: Vec<f64>,
        #[arg(long = "tau-ab")]
        tau_ab: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the capability formula, optionally against simulation.
    Capability {
        /// Parameter document (JSON or TOML).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        monte_carlo: bool,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 10_000)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a stream file and print a summary. Never writes files.
    Validate {
        #[arg(long)]
        stream: PathBuf,
    },
    /// Serve a built-in detector over the stdio wire protocol.
    ServeDetector {
        /// `oracle`, `null` or `noisy:<capability>`.
        #[arg(long, default_value = "oracle")]
        detector: String,
        #[arg(long, value_enum, default_value_t = ServeCapability::Both)]
        capability: ServeCapability,
        /// Stream whose labels feed the oracle.
        #[arg(long)]
        stream: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        target_class: u16,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ServeCapability {
    I,
    Pb,
    Both,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub stream: PathBuf,
    /// Pipeline config (JSON or TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Detector shorthand: `oracle`, `null`, `noisy:<c>`, `external[:path]`.
    #[arg(long)]
    pub detector_i: Option<String>,
    #[arg(long)]
    pub detector_pb: Option<String>,
    /// Send every P/B-frame to the P/B detector.
    #[arg(long)]
    pub no_reuse: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

impl RunArgs {
    fn load(&self) -> Result<(GopStream, PipelineConfig), CliError> {
        let stream = read_stream(&self.stream)?;
        let mut cfg: PipelineConfig = match &self.config {
            Some(p) => read_document(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = &self.detector_i {
            cfg.i_detector = DetectorBinding::parse_shorthand(s).map_err(input)?;
        }
        if let Some(s) = &self.detector_pb {
            cfg.pb_detector = DetectorBinding::parse_shorthand(s).map_err(input)?;
        }
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if self.no_reuse {
            cfg.reuse_enabled = false;
        }
        Ok((stream, cfg))
    }
}

fn read_stream(path: &Path) -> Result<GopStream, CliError> {
    let bytes = std::fs::read(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    parse_stream(&bytes).map_err(|e| input(format!("{}: {e}", path.display())))
}

/// Reads a JSON or TOML document; JSON is chosen by extension or a leading `{`.
pub fn read_document<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    let parsed = if is_json {
        serde_json::from_str(&text).map_err(input)
    } else {
        toml::from_str(&text).map_err(input)
    };
    parsed.map_err(|e| input(format!("{}: {e}", path.display())))
}

/// Writes `bytes` through a temporary file in the target directory and
/// renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    tmp.write_all(bytes).and_then(|_| tmp.as_file().sync_all()).map_err(input)?;
    tmp.persist(path).map_err(|e| input(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn frames_csv(report: &RunReport) -> String {
    let mut out = String::from("frame_index,kind,source,presence,flagged_fraction,total_micros,error\n");
    for v in &report.verdicts {
        let flagged = v.anomaly.as_ref().map(|a| a.flagged_fraction.to_string()).unwrap_or_default();
        let source = serde_json::to_value(v.source).expect("enum serializes");
        out.push_str(&format!(
            "{},{},{},{},{},{:.1},{}\n",
            v.frame_index,
            v.kind,
            source.as_str().unwrap_or_default(),
            v.presence,
            flagged,
            v.timing.total_micros,
            v.error.as_deref().unwrap_or_default().replace(',', ";")
        ));
    }
    out
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config, out, seed } => {
            let text = std::fs::read_to_string(&config).map_err(|e| input(format!("{}: {e}", config.display())))?;
            let mut spec = SynthSpec::from_json(&text).map_err(input)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let stream = generate(&spec).map_err(input)?;
            let bytes = if out.extension().is_some_and(|e| e == "json") {
                emit_stream_json(&stream).into_bytes()
            } else {
                emit_stream(&stream)
            };
            write_atomic(&out, &bytes)
        }
        Command::Run {
            common,
            tau_conf,
            tau_ab,
            out,
        } => {
            let (stream, mut cfg) = common.load()?;
            if let Some(t) = tau_conf {
                cfg.tau_conf = t;
            }
            if let Some(t) = tau_ab {
                cfg.anomaly.tau_ab = t;
            }
            let report = run_pipeline(&stream, &cfg)?;
            let text = match common.format {
                Format::Json => report.to_json(),
                Format::Csv => frames_csv(&report),
            };
            emit(out.as_deref(), &text)?;
            if report.detector_failures > 0 {
                return Err(CliError::Detector(format!(
                    "{} frame(s) degraded by detector failures",
                    report.detector_failures
                )));
            }
            Ok(())
        }
        Command::Sweep {
            common,
            tau_conf,
            tau_ab,
            out,
        } => {
            let (stream, cfg) = common.load()?;
            let tau_conf = if tau_conf.is_empty() { DEFAULT_TAU_CONF_GRID.to_vec() } else { tau_conf };
            let tau_ab = if tau_ab.is_empty() { DEFAULT_TAU_AB_GRID.to_vec() } else { tau_ab };
            let result = sweep(&stream, &tau_conf, &tau_ab, &cfg)?;
            let csv = result.to_csv();
            let json = serde_json::to_string_pretty(&result).expect("reports always serialize");
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
                    write_atomic(&dir.join("sweep.csv"), csv.as_bytes())?;
                    write_atomic(&dir.join("sweep.json"), json.as_bytes())?;
                }
                None => emit(None, if common.format == Format::Csv { &csv } else { &json })?,
            }
            let failures: usize = result.entries.iter().map(|e| e.report.detector_failures).sum();
            if failures > 0 {
                return Err(CliError::Detector(format!("{failures} frame(s) degraded by detector failures")));
            }
            Ok(())
        }
        Command::Capability {
            config,
            monte_carlo,
            trials,
            frames,
            seed,
            format,
            out,
        } => {
            let params: CapabilityParams = read_document(&config)?;
            let analytic = system_capability(&params).map_err(input)?;
            let text = if monte_carlo {
                let mc = MonteCarloConfig {
                    trials,
                    frames_per_trial: frames,
                    seed,
                    ..MonteCarloConfig::default()
                };
                let report = monte_carlo_capability(&params, &mc).map_err(input)?;
                match format {
                    Format::Json => serde_json::to_string_pretty(&report).expect("reports always serialize"),
                    Format::Csv => report.to_csv(),
                }
            } else {
                match format {
                    Format::Json => serde_json::to_string_pretty(&serde_json::json!({
                        "params": params,
                        "c_sys": analytic,
                    }))
                    .expect("reports always serialize"),
                    Format::Csv => format!(
                        "p_i,p_pb,p_ab,p_new,c_i,c_pb,c_sys\n{},{},{},{},{},{},{}\n",
                        params.p_i, params.p_pb, params.p_ab, params.p_new, params.c_i, params.c_pb, analytic
                    ),
                }
            };
            emit(out.as_deref(), &(text + "\n"))
        }
        Command::Validate { stream } => {
            let s = read_stream(&stream)?;
            let count = |k| s.frames().iter().filter(|f| f.kind == k).count();
            let summary = serde_json::json!({
                "width": s.frame_width(),
                "height": s.frame_height(),
                "frames": s.len(),
                "gops": s.gop_count(),
                "i_frames": count(crate::stream::FrameKind::I),
                "p_frames": count(crate::stream::FrameKind::P),
                "b_frames": count(crate::stream::FrameKind::B),
                "has_ground_truth": s.ground_truth().is_some(),
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            Ok(())
        }
        Command::ServeDetector {
            detector,
            capability,
            stream,
            target_class,
            seed,
        } => {
            let truth = match &stream {
                Some(p) => GroundTruth::from_stream(&read_stream(p)?, target_class),
                None => GroundTruth::new(),
            };
            let truth = Arc::new(truth);
            let cap = match capability {
                ServeCapability::I => Capability::IFrame,
                ServeCapability::Pb => Capability::PbFrame,
                ServeCapability::Both => Capability::Both,
            };
            let mut det: Box<dyn Detector> = match DetectorBinding::parse_shorthand(&detector).map_err(input)? {
                DetectorBinding::Oracle { .. } => Box::new(OracleDetector::new(truth).with_capability(cap)),
                DetectorBinding::Noisy { capability, .. } => {
                    Box::new(NoisyDetector::new(truth, capability, seed).map_err(input)?.with_capability(cap))
                }
                DetectorBinding::Null { .. } => Box::new(NullDetector::new()),
                DetectorBinding::External { .. } => return Err(input("serve-detector needs a built-in detector")),
            };
            let mut stdin = std::io::stdin().lock();
            let mut stdout = std::io::stdout().lock();
            wire::serve(det.as_mut(), &mut stdin, &mut stdout).map_err(|e| CliError::Detector(e.to_string()))
        }
    }
}
