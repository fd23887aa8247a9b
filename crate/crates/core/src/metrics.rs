//! Objective evaluation: scale-invariant SNR, short-time objective
//! intelligibility, and label accuracy.

use std::fmt::Write as _;

use crate::dsp::{hann_symmetric, FftPair};
use crate::error::{Error, Result};
use crate::signal::{resample_uniform, Waveform};

/// SI-SNR values are capped here so that perfect estimates stay finite.
pub const SI_SNR_CAP_DB: f64 = 60.0;

pub fn si_snr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::param(format!(
            "length mismatch: reference {} vs estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.rate() != estimate.rate() {
        return Err(Error::param("sample rate mismatch"));
    }
    si_snr_slices(reference.samples(), estimate.samples())
}

pub(crate) fn si_snr_slices(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    let n = reference.len() as f64;
    let mr = reference.iter().sum::<f64>() / n;
    let me = estimate.iter().sum::<f64>() / n;
    let r: Vec<f64> = reference.iter().map(|x| x - mr).collect();
    let e: Vec<f64> = estimate.iter().map(|x| x - me).collect();
    let rr: f64 = r.iter().map(|x| x * x).sum();
    if !(rr > 0.0) {
        return Err(Error::param("reference is all zero"));
    }
    let er: f64 = e.iter().zip(&r).map(|(a, b)| a * b).sum();
    let alpha = er / rr;
    let mut target = 0.0;
    let mut noise = 0.0;
    for (ei, ri) in e.iter().zip(&r) {
        let s = alpha * ri;
        target += s * s;
        noise += (ei - s) * (ei - s);
    }
    if noise <= 0.0 || noise <= target * 1e-6_f64.powi(2) {
        return Ok(SI_SNR_CAP_DB);
    }
    if target <= 0.0 {
        // Estimate orthogonal to (or silent against) the reference.
        return Ok(-SI_SNR_CAP_DB);
    }
    Ok((10.0 * (target / noise).log10()).clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

const STOI_RATE: u32 = 10_000;
const STOI_FRAME: usize = 256;
const STOI_FFT: usize = 512;
const STOI_HOP: usize = STOI_FRAME / 2;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
const STOI_SEGMENT: usize = 30;
const STOI_BETA_DB: f64 = -15.0;
const STOI_DYN_RANGE_DB: f64 = 40.0;

/// Classic short-time objective intelligibility (15 one-third octave bands,
/// 384 ms segments, −15 dB clipping).
pub fn stoi(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::param("length mismatch"));
    }
    if reference.rate() != estimate.rate() {
        return Err(Error::param("sample rate mismatch"));
    }
    if reference.rate() < STOI_RATE {
        return Err(Error::param("STOI needs a sample rate of at least 10 kHz"));
    }
    let x = resample_uniform(reference, STOI_RATE)?;
    let y = resample_uniform(estimate, STOI_RATE)?;
    let (x, y) = remove_silent_frames(x.samples(), y.samples());

    let fft = FftPair::new(STOI_FFT);
    let window = hann_symmetric(STOI_FRAME);
    let bands = third_octave_bands();
    let x_tob = band_envelopes(&x, &fft, &window, &bands);
    let y_tob = band_envelopes(&y, &fft, &window, &bands);
    let frames = x_tob.first().map_or(0, Vec::len);
    if frames < STOI_SEGMENT {
        return Err(Error::InsufficientSignal(format!(
            "{frames} active frames, need at least {STOI_SEGMENT} (384 ms)"
        )));
    }

    let clip = 10f64.powf(-STOI_BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in STOI_SEGMENT..=frames {
        for j in 0..STOI_BANDS {
            let xs = &x_tob[j][m - STOI_SEGMENT..m];
            let ys = &y_tob[j][m - STOI_SEGMENT..m];
            let xn = norm(xs);
            let yn = norm(ys);
            let scale = xn / (yn + f64::EPSILON);
            let yp: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(&yv, &xv)| (yv * scale).min(xv * (1.0 + clip)))
                .collect();
            total += correlation(xs, &yp);
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(0.0, 1.0))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x - ma, y - mb);
        num += x * y;
        da += x * x;
        db += y * y;
    }
    num / ((da.sqrt() + f64::EPSILON) * (db.sqrt() + f64::EPSILON))
}

/// Bin ranges `[lo, hi)` of the one-third octave bands on the 512-point grid.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = STOI_FFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins)
        .map(|k| k as f64 * STOI_RATE as f64 / STOI_FFT as f64)
        .collect();
    let nearest = |f: f64| -> usize {
        freqs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - f).abs().total_cmp(&(b.1 - f).abs()))
            .map(|(i, _)| i)
            .unwrap()
    };
    (0..STOI_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = STOI_MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = STOI_MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

fn band_envelopes(
    x: &[f64],
    fft: &FftPair,
    window: &[f64],
    bands: &[(usize, usize)],
) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); bands.len()];
    if x.len() <= STOI_FRAME {
        return out;
    }
    let mut start = 0;
    while start < x.len() - STOI_FRAME {
        let frame: Vec<f64> = x[start..start + STOI_FRAME]
            .iter()
            .zip(window)
            .map(|(a, b)| a * b)
            .collect();
        let spec = fft.real_spectrum(&frame);
        for (j, &(lo, hi)) in bands.iter().enumerate() {
            let power: f64 = spec[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            out[j].push(power.sqrt());
        }
        start += STOI_HOP;
    }
    out
}

/// Drops frames whose reference energy is more than 40 dB below the loudest
/// reference frame, then overlap-adds the survivors back into signals.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let window = hann_symmetric(STOI_FRAME);
    if x.len() < STOI_FRAME {
        return (Vec::new(), Vec::new());
    }
    let starts: Vec<usize> = (0..=x.len() - STOI_FRAME).step_by(STOI_HOP).collect();
    let frame = |s: &[f64], start: usize| -> Vec<f64> {
        s[start..start + STOI_FRAME]
            .iter()
            .zip(&window)
            .map(|(a, b)| a * b)
            .collect()
    };
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| 20.0 * (norm(&frame(x, s)) + f64::EPSILON).log10())
        .collect();
    let loudest = energies.iter().cloned().fold(f64::MIN, f64::max);
    let keep: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| loudest - STOI_DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    if keep.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let len = (keep.len() - 1) * STOI_HOP + STOI_FRAME;
    let mut xo = vec![0.0; len];
    let mut yo = vec![0.0; len];
    for (i, &s) in keep.iter().enumerate() {
        let fx = frame(x, s);
        let fy = frame(y, s);
        for k in 0..STOI_FRAME {
            xo[i * STOI_HOP + k] += fx[k];
            yo[i * STOI_HOP + k] += fy[k];
        }
    }
    (xo, yo)
}

pub fn accuracy<T: PartialEq>(predictions: &[T], truths: &[T]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::param("prediction and truth lengths differ"));
    }
    if truths.is_empty() {
        return Err(Error::param("no labels to score"));
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truths.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageScore {
    pub stage: String,
    pub si_snr_db: f64,
    pub stoi: Option<f64>,
}

/// Per-utterance scores for each pipeline stage, the last stage being the
/// headline figure.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub utterance: String,
    pub stages: Vec<StageScore>,
}

impl MetricsReport {
    pub fn new(utterance: impl Into<String>) -> Self {
        Self {
            utterance: utterance.into(),
            stages: Vec::new(),
        }
    }

    /// Scores `estimate` against `reference` and records it under `stage`.
    /// STOI is left empty when the signal is too short for it.
    pub fn score(&mut self, stage: &str, reference: &Waveform, estimate: &Waveform) -> Result<&StageScore> {
        let si = si_snr(reference, estimate)?;
        let st = match stoi(reference, estimate) {
            Ok(v) => Some(v),
            Err(Error::InsufficientSignal(_)) => None,
            Err(e) => return Err(e),
        };
        self.stages.push(StageScore {
            stage: stage.to_string(),
            si_snr_db: si,
            stoi: st,
        });
        Ok(self.stages.last().unwrap())
    }

    pub fn si_snr_db(&self) -> Option<f64> {
        self.stages.last().map(|s| s.si_snr_db)
    }

    pub fn stoi(&self) -> Option<f64> {
        self.stages.last().and_then(|s| s.stoi)
    }

    pub const CSV_HEADER: &'static str = "utterance,stage,si_snr_db,stoi";

    /// Rows of `utterance,stage,si_snr_db,stoi`, without header.
    pub fn to_csv_rows(&self) -> String {
        let mut out = String::new();
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.utterance,
                s.stage,
                format_metric(s.si_snr_db),
                s.stoi.map_or_else(String::new, format_metric)
            );
        }
        out
    }
}

pub fn format_metric(v: f64) -> String {
    format!("{v:.4}")
}
