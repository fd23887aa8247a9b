//! End-to-end scenario: audio on a surface, captured by a simulated mouse,
//! degraded, reconstructed and scored against the noiseless capture.

use std::fmt;
use std::str::FromStr;

use crate::dsp::mean;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::reconstruct::{
    estimate_noise_psd, events_to_signal, wiener_filter, NoiseProfile, PsdProfile, SpeechPrior, StftParams,
    DEFAULT_TARGET_RATE,
};
use crate::sensor::{
    inject_count_noise, inject_timing_jitter, simulate_sensor, surface_response, EventStream, SensorConfig,
    SurfaceModel,
};
use crate::signal::{resample_uniform, Waveform};

pub const STAGE_RAW: &str = "events_to_signal";
pub const STAGE_WIENER: &str = "wiener";

/// Where the Wiener filter's speech spectrum comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorSource {
    /// Spectrum of the noiseless capture of the same input.
    Reference,
    /// The bundled average speech spectrum.
    Speech,
}

/// Where the Wiener filter's noise spectrum comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSource {
    /// A capture of the idle surface through the same channel.
    Idle,
    /// The difference between the raw reconstruction and the reference.
    Residual,
}

macro_rules! text_enum {
    ($t:ty, $($v:ident => $s:literal),+) => {
        impl $t {
            pub fn as_str(&self) -> &'static str {
                match self { $(Self::$v => $s),+ }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($s => Ok(Self::$v),)+
                    other => Err(Error::param(format!("unknown {} '{other}'", stringify!($t)))),
                }
            }
        }
    };
}

text_enum!(PriorSource, Reference => "reference", Speech => "speech");
text_enum!(NoiseSource, Idle => "idle", Residual => "residual");

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub surface: SurfaceModel,
    pub sensor: SensorConfig,
    /// Poll-timing jitter of the sensor itself, µs.
    pub poll_jitter_us: f64,
    /// Timing jitter injected into the recorded log, µs.
    pub jitter_us: f64,
    /// Count noise injected into the recorded log.
    pub noise_counts: f64,
    pub target_rate: u32,
    pub stft: StftParams,
    pub prior: PriorSource,
    pub noise: NoiseSource,
    /// Length of the idle capture used for [`NoiseSource::Idle`].
    pub idle_s: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            surface: SurfaceModel::plastic(),
            sensor: SensorConfig::default(),
            poll_jitter_us: 1.0,
            jitter_us: 0.0,
            noise_counts: 0.0,
            target_rate: DEFAULT_TARGET_RATE,
            stft: StftParams::default(),
            prior: PriorSource::Reference,
            noise: NoiseSource::Residual,
            idle_s: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub events: EventStream,
    /// Noiseless sensor-domain signal on the output grid.
    pub reference: Waveform,
    pub raw: Waveform,
    pub wiener: Waveform,
}

impl PipelineOutput {
    pub fn score(&self, utterance: &str) -> Result<MetricsReport> {
        let mut report = MetricsReport::new(utterance);
        report.score(STAGE_RAW, &self.reference, &self.raw)?;
        report.score(STAGE_WIENER, &self.reference, &self.wiener)?;
        Ok(report)
    }
}

/// Independent stream of randomness for each stage of a run.
fn sub_seed(seed: u64, stage: u64) -> u64 {
    let mut z = seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Surface capture of `audio` through the sensor plus the recorded-log
/// degradations.
pub fn capture(audio: &Waveform, sc: &Scenario, seed: u64) -> Result<EventStream> {
    let rate_needed = 2 * sc.sensor.poll_rate_hz;
    let audio = if audio.rate() < rate_needed {
        resample_uniform(audio, rate_needed)?
    } else {
        audio.clone()
    };
    let disp = surface_response(&audio, &sc.surface, sub_seed(seed, 1))?;
    let ev = simulate_sensor(&disp, &sc.sensor, sc.poll_jitter_us, sub_seed(seed, 2))?;
    let ev = inject_timing_jitter(&ev, sc.jitter_us, sub_seed(seed, 3))?;
    inject_count_noise(&ev, sc.noise_counts, sub_seed(seed, 4))
}

/// What an ideal sensor would report for `audio`: counts moved during each
/// poll interval, `D·(d(t) − d(t − 1/S))` on the noiseless surface,
/// resampled to `len` samples at the target rate with the mean removed.
pub fn reference_signal(audio: &Waveform, sc: &Scenario, len: usize) -> Result<Waveform> {
    let disp = surface_response(audio, &sc.surface.noiseless(), 0)?;
    let d = disp.samples();
    let rate = disp.rate() as f64;
    let lag = rate / sc.sensor.poll_rate_hz as f64;
    let dpi = sc.sensor.dpi as f64;
    let delayed = |i: usize| {
        let pos = i as f64 - lag;
        if pos <= 0.0 {
            return d.first().copied().unwrap_or(0.0);
        }
        let k = pos.floor() as usize;
        let frac = pos - k as f64;
        d[k] * (1.0 - frac) + d.get(k + 1).copied().unwrap_or(d[k]) * frac
    };
    let counts: Vec<f64> = (0..d.len()).map(|i| dpi * (d[i] - delayed(i))).collect();
    let resampled = resample_uniform(&Waveform::new(counts, disp.rate())?, sc.target_rate)?;
    let mut r = resampled.into_samples();
    r.resize(len, 0.0);
    let m = mean(&r);
    r.iter_mut().for_each(|v| *v -= m);
    Waveform::new(r, sc.target_rate)
}

/// Noise spectrum of the channel measured on an idle surface.
pub fn idle_noise_profile(sc: &Scenario, seed: u64) -> Result<NoiseProfile> {
    let rate = (2 * sc.sensor.poll_rate_hz).max(sc.target_rate);
    let len = (sc.idle_s * rate as f64).round() as usize;
    let silence = Waveform::zeros(len, rate)?;
    let ev = capture(&silence, sc, seed)?;
    let sig = if ev.is_empty() {
        Waveform::zeros(len, sc.target_rate)?
    } else {
        events_to_signal(&ev, sc.target_rate)?.x
    };
    if sig.len() < sc.stft.fft_size {
        return Ok(PsdProfile::new(vec![0.0; sc.stft.fft_size / 2 + 1], sc.stft.fft_size, sc.target_rate)?);
    }
    estimate_noise_psd(&sig, &sc.stft)
}

/// Runs the full chain on one input.
pub fn run(audio: &Waveform, sc: &Scenario, speech: Option<&SpeechPrior>, seed: u64) -> Result<PipelineOutput> {
    let events = capture(audio, sc, seed)?;
    let raw = events_to_signal(&events, sc.target_rate)?.x;
    let reference = reference_signal(audio, sc, raw.len())?;

    let residual = |a: &Waveform| -> Result<Waveform> {
        let diff = raw.samples().iter().zip(a.samples()).map(|(x, y)| x - y).collect();
        Waveform::new(diff, sc.target_rate)
    };
    let noise = match sc.noise {
        NoiseSource::Idle => idle_noise_profile(sc, sub_seed(seed, 5))?,
        NoiseSource::Residual => estimate_noise_psd(&residual(&reference)?, &sc.stft)?,
    };
    let prior = match (sc.prior, speech) {
        (PriorSource::Reference, _) => estimate_noise_psd(&reference, &sc.stft)?,
        (PriorSource::Speech, Some(p)) => p.clone(),
        (PriorSource::Speech, None) => PsdProfile::bundled_speech(),
    };
    let wiener = wiener_filter(&raw, &noise, &prior, &sc.stft)?;
    Ok(PipelineOutput {
        events,
        reference,
        raw,
        wiener,
    })
}
