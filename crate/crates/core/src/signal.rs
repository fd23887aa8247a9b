//! Uniformly sampled audio: the [`Waveform`] container, WAV I/O, tone-and-sweep
//! and speech-like test signals, and band-limited uniform resampling.

use std::f64::consts::PI;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::{bessel_i0, sinc, Biquad};
use crate::error::{Error, Result};

/// A mono signal sampled at a fixed rate. Samples are finite; the nominal
/// amplitude range is [-1, 1] for audio, but displacement traces reuse the
/// type with physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::param("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::param(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Applies `f` sample-wise, keeping the rate.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.samples.iter().map(|&x| f(x)).collect(), self.sample_rate)
    }
}

/// The four-segment tone-and-sweep probe: tone, linear chirp from 0 Hz,
/// linear chirp from 0 Hz, tone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub tone1_hz: f64,
    pub tone1_s: f64,
    pub sweep1_max_hz: f64,
    pub sweep1_s: f64,
    pub sweep2_max_hz: f64,
    pub sweep2_s: f64,
    pub tone2_hz: f64,
    pub tone2_s: f64,
    pub amplitude: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            tone1_hz: 200.0,
            tone1_s: 5.0,
            sweep1_max_hz: 1000.0,
            sweep1_s: 4.0,
            sweep2_max_hz: 16000.0,
            sweep2_s: 4.0,
            tone2_hz: 400.0,
            tone2_s: 5.0,
            amplitude: 0.8,
        }
    }
}

impl SweepSpec {
    pub const DEFAULT_RATE: u32 = 48_000;

    pub fn total_s(&self) -> f64 {
        self.tone1_s + self.sweep1_s + self.sweep2_s + self.tone2_s
    }

    fn validate(&self) -> Result<()> {
        let durations = [self.tone1_s, self.sweep1_s, self.sweep2_s, self.tone2_s];
        if durations.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::param("sweep segment durations must be positive"));
        }
        let freqs = [
            self.tone1_hz,
            self.sweep1_max_hz,
            self.sweep2_max_hz,
            self.tone2_hz,
        ];
        if freqs.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::param("sweep frequencies must be non-negative"));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::param("sweep amplitude must be finite"));
        }
        Ok(())
    }
}

pub fn generate_tone_sweep(spec: &SweepSpec, rate: u32) -> Result<Waveform> {
    spec.validate()?;
    if rate == 0 {
        return Err(Error::param("sample rate must be positive"));
    }
    // (start Hz, end Hz, seconds) for each linear-frequency segment.
    let segments = [
        (spec.tone1_hz, spec.tone1_hz, spec.tone1_s),
        (0.0, spec.sweep1_max_hz, spec.sweep1_s),
        (0.0, spec.sweep2_max_hz, spec.sweep2_s),
        (spec.tone2_hz, spec.tone2_hz, spec.tone2_s),
    ];
    let fs = rate as f64;
    let mut out = Vec::with_capacity((spec.total_s() * fs).round() as usize);
    let mut phase0 = 0.0;
    for (f0, f1, dur) in segments {
        let n = (dur * fs).round() as usize;
        let slope = (f1 - f0) / dur;
        for i in 0..n {
            let t = i as f64 / fs;
            let phase = phase0 + 2.0 * PI * (f0 * t + 0.5 * slope * t * t);
            out.push(spec.amplitude * phase.sin());
        }
        let t_end = n as f64 / fs;
        phase0 = (phase0 + 2.0 * PI * (f0 * t_end + 0.5 * slope * t_end * t_end)) % (2.0 * PI);
    }
    Waveform::new(out, rate)
}

pub fn sine(freq_hz: f64, amplitude: f64, duration_s: f64, rate: u32) -> Result<Waveform> {
    let n = (duration_s * rate as f64).round() as usize;
    let w = 2.0 * PI * freq_hz / rate as f64;
    Waveform::new((0..n).map(|i| amplitude * (w * i as f64).sin()).collect(), rate)
}

/// Seeded speech-like test signal: a glottal harmonic series with a wandering
/// pitch, shaped by per-syllable vowel formants, syllabic amplitude envelope,
/// occasional fricative noise bursts and short pauses.
pub fn speech_like(duration_s: f64, rate: u32, seed: u64) -> Result<Waveform> {
    if rate == 0 || !(duration_s > 0.0) {
        return Err(Error::param("duration and rate must be positive"));
    }
    const VOWELS: [[f64; 3]; 6] = [
        [730.0, 1090.0, 2440.0],
        [270.0, 2290.0, 3010.0],
        [530.0, 1840.0, 2480.0],
        [570.0, 840.0, 2410.0],
        [300.0, 870.0, 2240.0],
        [660.0, 1720.0, 2410.0],
    ];
    let fs = rate as f64;
    let n = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Syllable plan: (start sample, length, vowel index, voiced?, pause?)
    let mut plan = Vec::new();
    let mut pos = 0usize;
    while pos < n {
        let len = ((0.16 + 0.14 * rng.gen::<f64>()) * fs) as usize;
        // An utterance never opens with a pause.
        let pause = rng.gen::<f64>() < 0.15 && !plan.is_empty();
        let fricative = !pause && rng.gen::<f64>() < 0.3;
        plan.push((pos, len.max(1), rng.gen_range(0..VOWELS.len()), fricative, pause));
        pos += len.max(1);
    }

    let nyquist = fs / 2.0;
    let mut voiced = vec![0.0; n];
    let mut phase = 0.0;
    let f0_base = 110.0 + 40.0 * rng.gen::<f64>();
    let mut syl = 0;
    for (i, v) in voiced.iter_mut().enumerate() {
        while syl + 1 < plan.len() && i >= plan[syl + 1].0 {
            syl += 1;
        }
        let (start, len, vowel, _, pause) = plan[syl];
        if pause {
            continue;
        }
        let t = i as f64 / fs;
        let f0 = f0_base * (1.0 + 0.08 * (2.0 * PI * 0.7 * t).sin() + 0.03 * (2.0 * PI * 5.0 * t).sin());
        phase += 2.0 * PI * f0 / fs;
        let frac = (i - start) as f64 / len as f64;
        let env = (PI * frac).sin().powf(0.7);
        let formants = &VOWELS[vowel];
        let mut acc = 0.0;
        let mut k = 1.0;
        while k * f0 < nyquist * 0.9 {
            let f = k * f0;
            let gain: f64 = formants
                .iter()
                .enumerate()
                .map(|(j, &fc)| {
                    let bw = 80.0 + 40.0 * j as f64;
                    1.0 / (1.0 + ((f - fc) / bw).powi(2)) / (1.0 + j as f64)
                })
                .sum::<f64>()
                / k.sqrt();
            acc += gain * (k * phase).sin();
            k += 1.0;
        }
        *v = env * acc;
    }

    // Fricatives: high-passed noise over the first third of the syllable.
    let hiss_filter = Biquad::bandpass((4500.0f64).min(0.4 * fs), 1.5, fs);
    let white: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let hiss = hiss_filter.filter(&white);
    let mut out = voiced;
    for &(start, len, _, fricative, _) in &plan {
        if !fricative {
            continue;
        }
        let flen = len / 3;
        for j in 0..flen {
            let i = start + j;
            if i >= n {
                break;
            }
            out[i] += 0.25 * (PI * j as f64 / flen as f64).sin() * hiss[i];
        }
    }
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|x| *x *= 0.7 / peak);
    }
    Waveform::new(out, rate)
}

/// Reads a PCM WAV file (16-bit integer or 32-bit float). Multichannel input
/// is mixed down by averaging the channels of each frame.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let reader = WavReader::open(path.as_ref()).map_err(map_hound)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format("zero channels".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (fmt, bits) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bits}-bit {fmt:?} samples"
            )))
        }
    };
    let mono = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(mono, spec.sample_rate)
}

/// Writes 16-bit PCM mono. Samples are scaled by 2¹⁵ and clamped, so values
/// produced by [`read_wav`] are written back unchanged.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path.as_ref(), spec).map_err(map_hound)?;
    for &s in w.samples() {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        hound::Error::FormatError(msg) => Error::Format(msg.to_string()),
        hound::Error::Unsupported => Error::UnsupportedFormat("unsupported WAV encoding".into()),
        hound::Error::TooWide => Error::UnsupportedFormat("sample too wide".into()),
        other => Error::Format(other.to_string()),
    }
}

const RESAMPLE_ZERO_CROSSINGS: usize = 32;
const RESAMPLE_KAISER_BETA: f64 = 8.0;
// Passband edge relative to the lower Nyquist; leaves room for the
// transition band so that content above the lower Nyquist is rejected.
const RESAMPLE_CUTOFF: f64 = 0.92;
const MAX_POLYPHASE_TABLE: usize = 1 << 22;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Band-limited resampling with a Kaiser-windowed sinc kernel spanning 64
/// zero crossings of the lower of the two rates.
pub fn resample_uniform(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::param("target rate must be positive"));
    }
    let source = w.rate() as u64;
    let target = target_rate as u64;
    if source == target {
        return Ok(w.clone());
    }
    let g = gcd(source, target);
    let up = target / g;
    let down = source / g;
    let ratio = (target as f64 / source as f64).min(1.0);
    let cutoff = RESAMPLE_CUTOFF * ratio;
    // Half-width in input samples.
    let half = (RESAMPLE_ZERO_CROSSINGS as f64 / ratio).ceil() as i64;
    let taps = (2 * half) as usize;
    let out_len = (w.len() as f64 * target as f64 / source as f64).round() as usize;

    let kernel = |x: f64| -> f64 {
        let r = x / half as f64;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let win = bessel_i0(RESAMPLE_KAISER_BETA * (1.0 - r * r).sqrt()) / bessel_i0(RESAMPLE_KAISER_BETA);
        cutoff * sinc(cutoff * x) * win
    };

    let table: Option<Vec<f64>> = if (up as usize).saturating_mul(taps) <= MAX_POLYPHASE_TABLE {
        let mut t = Vec::with_capacity(up as usize * taps);
        for phase in 0..up {
            let frac = phase as f64 / up as f64;
            for j in 0..taps {
                let offset = j as i64 - half + 1;
                t.push(kernel(offset as f64 - frac));
            }
        }
        Some(t)
    } else {
        None
    };

    let x = w.samples();
    let n_in = x.len() as i64;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos = n * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let frac = phase as f64 / up as f64;
        let mut acc = 0.0;
        for j in 0..taps {
            let k = base + j as i64 - half + 1;
            if k < 0 || k >= n_in {
                continue;
            }
            let h = match &table {
                Some(t) => t[phase as usize * taps + j],
                None => kernel((j as i64 - half + 1) as f64 - frac),
            };
            acc += h * x[k as usize];
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}
