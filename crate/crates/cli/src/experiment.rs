//! Grid runner: every input × surface × jitter × noise cell goes through the
//! pipeline, leaving its artifacts in its own directory and its scores in a
//! shared `metrics.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mousecap_core::metrics::{format_metric, MetricsReport};
use mousecap_core::pipeline::{self, STAGE_RAW, STAGE_WIENER};
use mousecap_core::signal::{generate_tone_sweep, read_wav, resample_uniform};
use mousecap_core::telemetry::{encode_csv, write_atomic, SessionHeader, SESSION_ID_LEN};
use mousecap_core::{SweepSpec, Waveform};
use thiserror::Error;

use crate::config::{ExperimentConfig, Input};
use crate::io::write_wav_atomic;

pub const METRICS_HEADER: &str = "utterance,surface,jitter_us,noise_counts,stage,si_snr_db,stoi";
/// Noiseless sensor capture scored against the input audio.
pub const STAGE_REFERENCE: &str = "reference";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot read input {path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: mousecap_core::Error,
    },
    #[error("output directory {path} is not writable: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Default)]
pub struct RunSummary {
    pub cells: usize,
    pub rows: usize,
    pub failures: Vec<(String, String)>,
}

struct Cell<'a> {
    utterance: String,
    audio: &'a Waveform,
    surface: usize,
    jitter_us: f64,
    noise_counts: f64,
}

impl Cell<'_> {
    fn name(&self, cfg: &ExperimentConfig) -> String {
        format!(
            "{}_{}_j{}_n{}",
            self.utterance, cfg.surfaces[self.surface].name, self.jitter_us, self.noise_counts
        )
    }
}

fn load_input(input: &Input) -> Result<Waveform, RunError> {
    match input {
        Input::Sweep(spec) => generate_tone_sweep(spec, SweepSpec::DEFAULT_RATE).map_err(|source| RunError::Input {
            path: PathBuf::from("sweep"),
            source,
        }),
        Input::Wav(path) => read_wav(path).map_err(|source| RunError::Input {
            path: path.clone(),
            source,
        }),
    }
}

/// Runs the whole grid. Inputs and the output directory are checked before
/// any cell starts; a failing cell is logged and the rest still run.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, RunError> {
    let audio: Vec<Waveform> = cfg.inputs.iter().map(load_input).collect::<Result<_, _>>()?;
    let out = &cfg.output;
    let output_err = |source| RunError::Output {
        path: out.clone(),
        source,
    };
    fs::create_dir_all(out).map_err(output_err)?;
    let metrics_path = out.join("metrics.csv");
    let mut metrics = format!("{METRICS_HEADER}\n");
    write_atomic(&metrics_path, metrics.as_bytes()).map_err(output_err)?;

    let mut summary = RunSummary::default();
    let mut errors = String::new();
    for (input, wave) in cfg.inputs.iter().zip(&audio) {
        for surface in 0..cfg.surfaces.len() {
            for &jitter_us in &cfg.jitter_us {
                for &noise_counts in &cfg.noise_counts {
                    let cell = Cell {
                        utterance: input.utterance(),
                        audio: wave,
                        surface,
                        jitter_us,
                        noise_counts,
                    };
                    let name = cell.name(cfg);
                    summary.cells += 1;
                    match run_cell(cfg, &cell, &out.join(&name)) {
                        Ok(rows) => {
                            info!("{name}: {} rows", rows.lines().count());
                            summary.rows += rows.lines().count();
                            metrics.push_str(&rows);
                            write_atomic(&metrics_path, metrics.as_bytes()).map_err(output_err)?;
                        }
                        Err(e) => {
                            warn!("{name}: {e}");
                            let _ = writeln!(errors, "{name}: {e}");
                            summary.failures.push((name, e.to_string()));
                        }
                    }
                }
            }
        }
    }
    write_atomic(&out.join("errors.log"), errors.as_bytes()).map_err(output_err)?;
    Ok(summary)
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell, dir: &Path) -> anyhow::Result<String> {
    let surface = &cfg.surfaces[cell.surface];
    let sc = cfg.scenario(surface, cell.jitter_us, cell.noise_counts);
    let result = pipeline::run(cell.audio, &sc, None, cfg.seed)?;

    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("events.csv"), encode_csv(&result.events).as_bytes())?;
    let hdr = SessionHeader::new(&cfg.sensor, [0; SESSION_ID_LEN]);
    write_atomic(&dir.join("events.meta"), hdr.to_meta().as_bytes())?;

    let mut report = MetricsReport::new(cell.utterance.clone());
    let heard = resample_uniform(cell.audio, cfg.target_rate)?;
    let n = heard.len().min(result.reference.len());
    let trim = |w: &Waveform| Waveform::new(w.samples()[..n].to_vec(), w.rate());
    report.score(STAGE_REFERENCE, &trim(&heard)?, &trim(&result.reference)?)?;
    for (stage, wave) in [(STAGE_RAW, &result.raw), (STAGE_WIENER, &result.wiener)] {
        if cfg.wants(stage) {
            write_wav_atomic(&dir.join(format!("{stage}.wav")), wave)?;
            report.score(stage, &result.reference, wave)?;
        }
    }

    let mut rows = String::new();
    for s in &report.stages {
        let _ = writeln!(
            rows,
            "{},{},{},{},{},{},{}",
            cell.utterance,
            surface.name,
            cell.jitter_us,
            cell.noise_counts,
            s.stage,
            format_metric(s.si_snr_db),
            s.stoi.map_or_else(String::new, format_metric)
        );
    }
    Ok(rows)
}
