//! Experiment configuration: line-based `key = value` text.
//!
//! ```text
//! # one utterance per input; "sweep" renders the built-in tone sweep
//! input = sweep, clips/a.wav
//! surfaces = plastic, paper
//! jitter_us = 0, 25, 50
//! noise_counts = 0, 1
//! output = out
//! seed = 7
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use mousecap_core::pipeline::{NoiseSource, PriorSource, Scenario, STAGE_RAW, STAGE_WIENER};
use mousecap_core::sensor::{SensorConfig, SurfaceModel};
use mousecap_core::SweepSpec;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Sweep(SweepSpec),
    Wav(PathBuf),
}

impl Input {
    pub fn utterance(&self) -> String {
        match self {
            Input::Sweep(_) => "sweep".into(),
            Input::Wav(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "input".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub inputs: Vec<Input>,
    pub surfaces: Vec<SurfaceModel>,
    pub sensor: SensorConfig,
    pub poll_jitter_us: f64,
    pub jitter_us: Vec<f64>,
    pub noise_counts: Vec<f64>,
    pub stages: Vec<String>,
    pub prior: PriorSource,
    pub noise: NoiseSource,
    pub target_rate: u32,
    pub output: PathBuf,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let defaults = Scenario::default();
        let mut inputs_raw: Option<Vec<String>> = None;
        let mut sweep_seconds: Option<Vec<f64>> = None;
        let mut surfaces = vec!["plastic".to_string()];
        let mut overrides: Vec<(usize, String, f64)> = Vec::new();
        let mut cfg = ExperimentConfig {
            inputs: Vec::new(),
            surfaces: Vec::new(),
            sensor: defaults.sensor,
            poll_jitter_us: defaults.poll_jitter_us,
            jitter_us: vec![0.0],
            noise_counts: vec![0.0],
            stages: vec![STAGE_RAW.into(), STAGE_WIENER.into()],
            prior: defaults.prior,
            noise: defaults.noise,
            target_rate: defaults.target_rate,
            output: PathBuf::new(),
            seed: 0,
        };
        let mut output: Option<String> = None;
        let mut seen = HashSet::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let syntax = |msg: String| ConfigError::Syntax { line, msg };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected 'key = value', found '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(syntax(format!("duplicate key '{key}'")));
            }
            let list = || -> Vec<String> {
                value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            };
            let num = |s: &str| -> Result<f64, ConfigError> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| syntax(format!("'{s}' is not a number")))
            };
            let nums = || -> Result<Vec<f64>, ConfigError> { list().iter().map(|s| num(s)).collect() };
            let int = |s: &str| -> Result<u64, ConfigError> {
                s.parse::<u64>().map_err(|_| syntax(format!("'{s}' is not a non-negative integer")))
            };
            match key {
                "input" => inputs_raw = Some(list()),
                "sweep_seconds" => sweep_seconds = Some(nums()?),
                "surfaces" => surfaces = list(),
                "dpi" => cfg.sensor.dpi = int(value)? as u32,
                "poll_rate_hz" => cfg.sensor.poll_rate_hz = int(value)? as u32,
                "count_saturation" => {
                    cfg.sensor.count_saturation = u16::try_from(int(value)?)
                        .map_err(|_| syntax("count_saturation exceeds 65535".into()))?
                }
                "ips_cap" => cfg.sensor.ips_cap = num(value)?,
                "poll_jitter_us" => cfg.poll_jitter_us = num(value)?,
                "jitter_us" => cfg.jitter_us = nums()?,
                "noise_counts" => cfg.noise_counts = nums()?,
                "stages" => cfg.stages = list(),
                "prior" => cfg.prior = value.parse().map_err(|e| syntax(format!("{e}")))?,
                "noise" => cfg.noise = value.parse().map_err(|e| syntax(format!("{e}")))?,
                "target_rate" => {
                    cfg.target_rate =
                        u32::try_from(int(value)?).map_err(|_| syntax("target_rate out of range".into()))?
                }
                "output" => output = Some(value.to_string()),
                "seed" => cfg.seed = int(value)?,
                k if k.starts_with("surface.") => overrides.push((line, k["surface.".len()..].to_string(), num(value)?)),
                other => return Err(syntax(format!("unknown key '{other}'"))),
            }
        }

        let invalid = |m: String| ConfigError::Invalid(m);
        let output = output.ok_or_else(|| invalid("missing 'output'".into()))?;
        cfg.output = base.join(output);

        let mut sweep = SweepSpec::default();
        if let Some(secs) = &sweep_seconds {
            let [a, b, c, d] = secs[..] else {
                return Err(invalid("sweep_seconds needs four durations".into()));
            };
            sweep.tone1_s = a;
            sweep.sweep1_s = b;
            sweep.sweep2_s = c;
            sweep.tone2_s = d;
        }
        let inputs_raw = inputs_raw.ok_or_else(|| invalid("missing 'input'".into()))?;
        for item in inputs_raw {
            cfg.inputs.push(if item == "sweep" {
                Input::Sweep(sweep.clone())
            } else {
                Input::Wav(base.join(item))
            });
        }

        for name in &surfaces {
            let mut s = SurfaceModel::preset(name).map_err(|e| invalid(e.to_string()))?;
            for (line, field, v) in &overrides {
                let slot = match field.as_str() {
                    "gain" => &mut s.gain,
                    "resonance_hz" => &mut s.resonance_hz,
                    "resonance_q" => &mut s.resonance_q,
                    "h2" => &mut s.h2,
                    "h3" => &mut s.h3,
                    "noise_rms" => &mut s.noise_rms,
                    "noise_peak_hz" => &mut s.noise_peak_hz,
                    other => {
                        return Err(ConfigError::Syntax {
                            line: *line,
                            msg: format!("unknown surface field '{other}'"),
                        })
                    }
                };
                *slot = *v;
            }
            s.validate().map_err(|e| invalid(e.to_string()))?;
            cfg.surfaces.push(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.inputs.is_empty() {
            return invalid("no inputs");
        }
        if self.surfaces.is_empty() {
            return invalid("no surfaces");
        }
        if self.jitter_us.is_empty() || self.noise_counts.is_empty() {
            return invalid("degradation lists must not be empty");
        }
        if self.jitter_us.iter().chain(&self.noise_counts).any(|v| *v < 0.0) || self.poll_jitter_us < 0.0 {
            return invalid("degradation values must be non-negative");
        }
        if self.sensor.validate().is_err() {
            return invalid("sensor fields must be positive");
        }
        if self.target_rate == 0 {
            return invalid("target_rate must be positive");
        }
        if self.stages.is_empty() {
            return invalid("no stages");
        }
        for s in &self.stages {
            if s != STAGE_RAW && s != STAGE_WIENER {
                return Err(ConfigError::Invalid(format!(
                    "unknown stage '{s}' (expected {STAGE_RAW} or {STAGE_WIENER})"
                )));
            }
        }
        let mut names = HashSet::new();
        for i in &self.inputs {
            if !names.insert(i.utterance()) {
                return Err(ConfigError::Invalid(format!("duplicate utterance name '{}'", i.utterance())));
            }
        }
        let mut surfaces = HashSet::new();
        if !self.surfaces.iter().all(|s| surfaces.insert(s.name.clone())) {
            return invalid("duplicate surface");
        }
        Ok(())
    }

    pub fn scenario(&self, surface: &SurfaceModel, jitter_us: f64, noise_counts: f64) -> Scenario {
        Scenario {
            surface: surface.clone(),
            sensor: self.sensor,
            poll_jitter_us: self.poll_jitter_us,
            jitter_us,
            noise_counts,
            target_rate: self.target_rate,
            prior: self.prior,
            noise: self.noise,
            ..Scenario::default()
        }
    }

    pub fn wants(&self, stage: &str) -> bool {
        self.stages.iter().any(|s| s == stage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::parse(text, Path::new("/base"))
    }

    #[test]
    fn minimal() {
        let c = parse("input = sweep\noutput = out\n").unwrap();
        assert_eq!(c.inputs, vec![Input::Sweep(SweepSpec::default())]);
        assert_eq!(c.output, PathBuf::from("/base/out"));
        assert_eq!(c.surfaces[0].name, "plastic");
        assert_eq!(c.jitter_us, vec![0.0]);
        assert_eq!(c.stages, vec![STAGE_RAW, STAGE_WIENER]);
    }

    #[test]
    fn full() {
        let c = parse(
            "# grid\ninput = a.wav, /abs/b.wav  # two clips\nsurfaces = paper, cardboard\n\
             surface.noise_rms = 0\njitter_us = 0, 25\nnoise_counts = 1\nstages = wiener\n\
             prior = speech\nnoise = idle\ndpi = 1600\npoll_rate_hz = 1000\nseed = 9\noutput = o\n\
             sweep_seconds = 1, 1, 1, 1\n",
        )
        .unwrap();
        assert_eq!(c.inputs[0], Input::Wav(PathBuf::from("/base/a.wav")));
        assert_eq!(c.inputs[1], Input::Wav(PathBuf::from("/abs/b.wav")));
        assert_eq!(c.inputs[1].utterance(), "b");
        assert!(c.surfaces.iter().all(|s| s.noise_rms == 0.0));
        assert_eq!(c.surfaces[1].name, "cardboard");
        assert_eq!(c.jitter_us, vec![0.0, 25.0]);
        assert!(c.wants(STAGE_WIENER) && !c.wants(STAGE_RAW));
        assert_eq!((c.prior, c.noise), (PriorSource::Speech, NoiseSource::Idle));
        assert_eq!((c.sensor.dpi, c.sensor.poll_rate_hz, c.seed), (1600, 1000, 9));
    }

    #[test]
    fn errors() {
        let line = |t: &str| match parse(t) {
            Err(ConfigError::Syntax { line, .. }) => line,
            other => panic!("{other:?}"),
        };
        assert_eq!(line("input = sweep\nbogus = 1\n"), 2);
        assert_eq!(line("input = sweep\ninput = sweep\n"), 2);
        assert_eq!(line("no equals sign\n"), 1);
        assert_eq!(line("jitter_us = 1, x\n"), 1);
        assert_eq!(line("output = o\ninput = sweep\nsurface.colour = 1\n"), 3);
        assert!(matches!(parse("input = sweep\n"), Err(ConfigError::Invalid(_))));
        assert!(matches!(parse("output = o\n"), Err(ConfigError::Invalid(_))));
        assert!(parse("input = sweep\noutput = o\nsurfaces = glass\n").is_err());
        assert!(parse("input = sweep\noutput = o\nstages = denoise\n").is_err());
        assert!(parse("input = a.wav, x/a.wav\noutput = o\n").is_err());
        assert!(parse("input = sweep\noutput = o\njitter_us = -1\n").is_err());
        assert!(parse("input = sweep\noutput = o\nsweep_seconds = 1, 2\n").is_err());
    }
}
