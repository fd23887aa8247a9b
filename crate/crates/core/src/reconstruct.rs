//! From packets back to audio: non-uniform resampling onto a uniform grid,
//! silence trimming, spectral noise profiles, Wiener filtering, and the
//! log-mel front end with its Griffin-Lim inverse.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::dsp::{hann, mean, sinc, welch_psd, Stft};
use crate::error::{Error, Result};
use crate::sensor::EventStream;
use crate::signal::Waveform;
use crate::tensor::Tensor;

/// Output rate of the reconstruction pipeline.
pub const DEFAULT_TARGET_RATE: u32 = 16_000;
/// Half-width of the band-limited interpolation kernel, in kernel periods.
pub const SINC_HALF_WIDTH: usize = 32;
pub const WIENER_GAIN_FLOOR: f64 = 0.05;
/// Lower bound applied to mel power before taking the log.
pub const LOG_FLOOR: f64 = 1e-10;

/// The two motion axes of a reconstructed stream.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisSignals {
    pub x: Waveform,
    pub y: Waveform,
}

impl AxisSignals {
    pub fn channels(&self) -> [&Waveform; 2] {
        [&self.x, &self.y]
    }
}

/// Raised-cosine tapered main lobe of the sinc, zero outside `|x| < 1`.
fn lobe(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (0.5 + 0.5 * (PI * x).cos()) * sinc(x)
    }
}

/// Weighted local polynomial fit evaluated at offset zero, for two value
/// channels sharing the same abscissae and weights. Falls back to the
/// weighted mean when the system is degenerate.
fn local_fit(d: &[f64], w: &[f64], vx: &[f64], vy: &[f64], degree: usize) -> (f64, f64) {
    let s0: f64 = w.iter().sum();
    let wmean = |v: &[f64]| w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / s0;
    if s0 <= 0.0 {
        return (0.0, 0.0);
    }
    let mut m = Matrix3::<f64>::zeros();
    let mut bx = Vector3::<f64>::zeros();
    let mut by = Vector3::<f64>::zeros();
    let n = degree + 1;
    for i in 0..d.len() {
        let p = [1.0, d[i], d[i] * d[i]];
        for r in 0..n {
            bx[r] += w[i] * p[r] * vx[i];
            by[r] += w[i] * p[r] * vy[i];
            for c in 0..n {
                m[(r, c)] += w[i] * p[r] * p[c];
            }
        }
    }
    for r in n..3 {
        m[(r, r)] = 1.0;
    }
    let scale = m.diagonal().max();
    match m.lu().try_inverse() {
        Some(inv) if m.determinant().abs() > 1e-12 * scale.powi(n as i32) => {
            ((inv * bx)[0], (inv * by)[0])
        }
        _ => (wmean(vx), wmean(vy)),
    }
}

/// Resamples a packet stream onto a uniform grid at `target_rate`, one
/// waveform per axis.
///
/// Each non-zero packet is a sample of the motion signal at its arrival
/// time. A density-normalized local polynomial estimate first places the
/// samples on a uniform grid whose period is the longer of the output period
/// and the sensor poll period; that grid is then interpolated to the output
/// rate with a Hann-tapered sinc truncated at ±32 periods. Zero packets only
/// contribute their time, so splitting an interval with one leaves the output
/// unchanged. The output spans `[0, t_last]` and has its mean removed.
pub fn events_to_signal(ev: &EventStream, target_rate: u32) -> Result<AxisSignals> {
    if ev.is_empty() {
        return Err(Error::EmptyInput("event stream has no packets".into()));
    }
    if target_rate == 0 {
        return Err(Error::param("target rate must be positive"));
    }
    let period = 1.0 / target_rate as f64;
    let arrivals = ev.arrival_times_us();
    let t_last = *arrivals.last().unwrap() as f64 * 1e-6;
    let out_len = (t_last / period).floor() as usize + 1;

    let mut t = Vec::new();
    let mut vx = Vec::new();
    let mut vy = Vec::new();
    for (p, &a) in ev.packets().iter().zip(&arrivals) {
        if !p.is_zero() {
            t.push(a as f64 * 1e-6);
            vx.push(p.dx as f64);
            vy.push(p.dy as f64);
        }
    }
    if t.is_empty() {
        let z = Waveform::zeros(out_len, target_rate)?;
        return Ok(AxisSignals { x: z.clone(), y: z });
    }

    let kp = period.max(1.0 / ev.meta().poll_rate_hz as f64);
    let (ux, uy) = regularize(&t, &vx, &vy, kp, t_last);
    let mut x = interpolate_uniform(&ux, kp, period, out_len);
    let mut y = interpolate_uniform(&uy, kp, period, out_len);
    for ch in [&mut x, &mut y] {
        let m = mean(ch);
        ch.iter_mut().for_each(|v| *v -= m);
    }
    Ok(AxisSignals {
        x: Waveform::new(x, target_rate)?,
        y: Waveform::new(y, target_rate)?,
    })
}

/// Estimates both channels at multiples of `kp` covering `[0, t_end]`.
fn regularize(t: &[f64], vx: &[f64], vy: &[f64], kp: f64, t_end: f64) -> (Vec<f64>, Vec<f64>) {
    let n = t.len();
    // Voronoi cell widths: each sample speaks for the interval it is nearest to.
    let cells: Vec<f64> = (0..n)
        .map(|i| match (i, n) {
            (_, 1) => kp,
            (0, _) => t[1] - t[0],
            (i, n) if i == n - 1 => t[n - 1] - t[n - 2],
            (i, _) => 0.5 * (t[i + 1] - t[i - 1]),
        })
        .collect();

    let grid_len = (t_end / kp).floor() as usize + 2;
    let mut ux = Vec::with_capacity(grid_len);
    let mut uy = Vec::with_capacity(grid_len);
    let mut d = Vec::new();
    let mut w = Vec::new();
    for m in 0..grid_len {
        let tm = m as f64 * kp;
        let j = t.partition_point(|&ti| ti <= tm);
        if j == 0 {
            ux.push(vx[0]);
            uy.push(vy[0]);
            continue;
        }
        if j == n {
            ux.push(vx[n - 1]);
            uy.push(vy[n - 1]);
            continue;
        }
        let gap = t[j] - t[j - 1];
        let mut h = kp.max(gap);
        let mut degree = 1;
        // Across a wide gap a line through the two bracketing samples bends
        // too little; reach one more sample on each side and fit a parabola.
        if gap > kp && j >= 2 && j + 1 < n {
            h = h.max(tm - t[j - 2]).max(t[j + 1] - tm);
            degree = 2;
        }
        h *= 1.0 + 1e-9;
        let a = t.partition_point(|&ti| ti <= tm - h);
        let b = t.partition_point(|&ti| ti < tm + h);
        d.clear();
        w.clear();
        for i in a..b {
            let di = (t[i] - tm) / h;
            d.push(di);
            w.push(cells[i] * lobe(di));
        }
        let (x, y) = local_fit(&d, &w, &vx[a..b], &vy[a..b], degree);
        ux.push(x);
        uy.push(y);
    }
    (ux, uy)
}

/// Band-limited interpolation of samples spaced `kp` onto a grid spaced
/// `period`, normalized by the kernel weight sum at each output point.
fn interpolate_uniform(u: &[f64], kp: f64, period: f64, out_len: usize) -> Vec<f64> {
    let ratio = period / kp;
    let half = SINC_HALF_WIDTH as f64;
    let last = u.len() as i64 - 1;
    (0..out_len)
        .map(|n| {
            let c = n as f64 * ratio;
            let lo = ((c - half).ceil() as i64).max(0);
            let hi = ((c + half).floor() as i64).min(last);
            let (mut acc, mut norm) = (0.0, 0.0);
            for m in lo..=hi {
                let x = c - m as f64;
                let k = sinc(x) * (0.5 + 0.5 * (PI * x / half).cos());
                acc += k * u[m as usize];
                norm += k;
            }
            if norm.abs() > 1e-12 {
                acc / norm
            } else {
                0.0
            }
        })
        .collect()
}

/// Drops leading and trailing windows whose RMS sits more than
/// `|threshold_db|` below the loudest window.
pub fn trim_silence(w: &Waveform, threshold_db: f64, window_ms: f64) -> Result<Waveform> {
    if !(threshold_db < 0.0) {
        return Err(Error::param("threshold must be negative dB relative to peak"));
    }
    if !(window_ms > 0.0) {
        return Err(Error::param("window length must be positive"));
    }
    let win = ((window_ms * 1e-3 * w.rate() as f64).round() as usize).max(1);
    let x = w.samples();
    let levels: Vec<f64> = x
        .chunks(win)
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
        .collect();
    let peak = levels.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Waveform::new(Vec::new(), w.rate());
    }
    let floor = peak * 10f64.powf(threshold_db / 20.0);
    let first = levels.iter().position(|&l| l >= floor).unwrap();
    let last = levels.iter().rposition(|&l| l >= floor).unwrap();
    let end = ((last + 1) * win).min(x.len());
    Waveform::new(x[first * win..end].to_vec(), w.rate())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub fft_size: usize,
    pub hop: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        Self { fft_size: 512, hop: 128 }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::param(format!(
                "need 0 < hop <= fft_size and fft_size >= 2, got hop {} fft_size {}",
                self.hop, self.fft_size
            )));
        }
        Ok(())
    }
}

/// One-sided power spectral density (power per Hz, `fft_size/2 + 1` bins).
#[derive(Debug, Clone, PartialEq)]
pub struct PsdProfile {
    psd: Vec<f64>,
    fft_size: usize,
    rate: u32,
}

/// Sensor noise spectrum.
pub type NoiseProfile = PsdProfile;
/// Average speech spectrum used as the Wiener prior.
pub type SpeechPrior = PsdProfile;

const BUNDLED_PRIOR: &str = include_str!("../data/speech_prior.txt");

impl PsdProfile {
    pub fn new(psd: Vec<f64>, fft_size: usize, rate: u32) -> Result<Self> {
        if rate == 0 {
            return Err(Error::param("rate must be positive"));
        }
        if fft_size < 2 || psd.len() != fft_size / 2 + 1 {
            return Err(Error::param(format!(
                "{} bins do not match fft size {fft_size}",
                psd.len()
            )));
        }
        if psd.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::param("psd values must be finite and non-negative"));
        }
        Ok(Self { psd, fft_size, rate })
    }

    /// Average speech spectrum shipped with the crate (16 kHz, 512-point).
    pub fn bundled_speech() -> Self {
        Self::from_text(BUNDLED_PRIOR).expect("bundled speech prior is well formed")
    }

    pub fn psd(&self) -> &[f64] {
        &self.psd
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("rate={}\nfft_size={}\n", self.rate, self.fft_size);
        for p in &self.psd {
            writeln!(s, "{p:e}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut rate = None;
        let mut fft_size = None;
        let mut psd = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Parse { line: lineno, msg };
            if let Some((k, v)) = line.split_once('=') {
                if !psd.is_empty() {
                    return Err(bad("header line after data".into()));
                }
                let n: usize = v.trim().parse().map_err(|_| bad(format!("bad value {v:?}")))?;
                match k.trim() {
                    "rate" => rate = Some(n as u32),
                    "fft_size" => fft_size = Some(n),
                    other => return Err(bad(format!("unknown key {other:?}"))),
                }
            } else {
                psd.push(line.parse::<f64>().map_err(|_| bad(format!("bad number {line:?}")))?);
            }
        }
        let rate = rate.ok_or_else(|| Error::Format("missing rate".into()))?;
        let fft_size = fft_size.ok_or_else(|| Error::Format("missing fft_size".into()))?;
        Self::new(psd, fft_size, rate)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    fn check_compatible(&self, rate: u32, params: &StftParams) -> Result<()> {
        if self.rate != rate || self.fft_size != params.fft_size {
            return Err(Error::param(format!(
                "profile is {} Hz / {} points, signal needs {} Hz / {} points",
                self.rate, self.fft_size, rate, params.fft_size
            )));
        }
        Ok(())
    }
}

/// Welch estimate of a noise recording's power spectral density.
pub fn estimate_noise_psd(noise: &Waveform, params: &StftParams) -> Result<NoiseProfile> {
    params.validate()?;
    if noise.len() < params.fft_size {
        return Err(Error::param(format!(
            "noise has {} samples, fewer than one {}-point frame",
            noise.len(),
            params.fft_size
        )));
    }
    let psd = welch_psd(noise.samples(), params.fft_size, params.hop, noise.rate() as f64);
    PsdProfile::new(psd, params.fft_size, noise.rate())
}

/// Short-time Wiener filter with a prior-shaped speech estimate.
///
/// The prior's shape is rescaled per call so its total equals the average
/// excess of observed frame power over the noise floor. Gains are floored at
/// [`WIENER_GAIN_FLOOR`] and are exactly one where the noise PSD is zero.
pub fn wiener_filter(
    w: &Waveform,
    noise: &NoiseProfile,
    prior: &SpeechPrior,
    params: &StftParams,
) -> Result<Waveform> {
    let plan = WienerPlan::new(w, noise, prior, params)?;
    let Some(mut frames) = plan.frames else {
        return Ok(w.clone());
    };
    for f in frames.iter_mut() {
        for (c, g) in f.iter_mut().zip(&plan.gains) {
            *c *= *g;
        }
    }
    let out = plan.stft.synthesize(&frames, plan.padded_len);
    Waveform::new(out[plan.pad..plan.pad + w.len()].to_vec(), w.rate())
}

/// Per-bin gains [`wiener_filter`] would apply to `w`.
pub fn wiener_gains(
    w: &Waveform,
    noise: &NoiseProfile,
    prior: &SpeechPrior,
    params: &StftParams,
) -> Result<Vec<f64>> {
    Ok(WienerPlan::new(w, noise, prior, params)?.gains)
}

struct WienerPlan {
    stft: Stft,
    frames: Option<Vec<Vec<Complex64>>>,
    gains: Vec<f64>,
    pad: usize,
    padded_len: usize,
}

impl WienerPlan {
    fn new(w: &Waveform, noise: &NoiseProfile, prior: &SpeechPrior, params: &StftParams) -> Result<Self> {
        params.validate()?;
        noise.check_compatible(w.rate(), params)?;
        prior.check_compatible(w.rate(), params)?;
        let n = params.fft_size;
        let stft = Stft::new(hann(n), n, params.hop);
        if w.is_empty() {
            return Ok(Self {
                stft,
                frames: None,
                gains: vec![1.0; n / 2 + 1],
                pad: 0,
                padded_len: 0,
            });
        }
        let win_energy: f64 = stft.window.iter().map(|v| v * v).sum();

        // Pad so that every input sample is covered by complete frames.
        let pad = n;
        let body = w.len();
        let padded_len = pad + body + pad + (params.hop - (body + pad) % params.hop) % params.hop;
        let mut padded = vec![0.0; padded_len];
        padded[pad..pad + body].copy_from_slice(w.samples());
        let frames = stft.analyze(&padded);

        let noise_frame: Vec<f64> = noise
            .psd()
            .iter()
            .map(|p| p * w.rate() as f64 * win_energy)
            .collect();
        let excess: f64 = frames
            .iter()
            .map(|f| {
                f.iter()
                    .zip(&noise_frame)
                    .map(|(c, nk)| (c.norm_sqr() - nk).max(0.0))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / frames.len().max(1) as f64;
        let prior_total: f64 = prior.psd().iter().sum();
        let scale = if prior_total > 0.0 { excess / prior_total } else { 0.0 };
        let gains = prior
            .psd()
            .iter()
            .zip(&noise_frame)
            .map(|(p, &nk)| {
                if nk <= 0.0 {
                    1.0
                } else {
                    let s = p * scale;
                    (s / (s + nk)).max(WIENER_GAIN_FLOOR)
                }
            })
            .collect();
        Ok(Self {
            stft,
            frames: Some(frames),
            gains,
            pad,
            padded_len,
        })
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank on the HTK mel scale spanning 0 Hz to `rate/2`:
/// `mel_bins` rows over `n_fft/2 + 1` linear bins.
pub fn mel_filterbank(mel_bins: usize, n_fft: usize, rate: f64) -> Vec<Vec<f64>> {
    let bins = n_fft / 2 + 1;
    let top = hz_to_mel(rate / 2.0);
    let edges: Vec<f64> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(top * i as f64 / (mel_bins + 1) as f64))
        .collect();
    (0..mel_bins)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * rate / n_fft as f64;
                    if f > lo && f < hi {
                        if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        }
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Center frequency of each mel filter.
pub fn mel_centers(mel_bins: usize, rate: f64) -> Vec<f64> {
    let top = hz_to_mel(rate / 2.0);
    (1..=mel_bins)
        .map(|i| mel_to_hz(top * i as f64 / (mel_bins + 1) as f64))
        .collect()
}

/// Log-mel spectrogram of one or two equally long channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// `[channel][frame][mel bin]`.
    channels: Vec<Vec<Vec<f64>>>,
    mel_bins: usize,
    win_ms: f64,
    hop_ms: f64,
    rate: u32,
}

impl Spectrogram {
    pub fn new(channels: Vec<Vec<Vec<f64>>>, mel_bins: usize, win_ms: f64, hop_ms: f64, rate: u32) -> Result<Self> {
        if mel_bins == 0 {
            return Err(Error::param("need at least one mel bin"));
        }
        if !(1..=2).contains(&channels.len()) {
            return Err(Error::param("spectrogram needs one or two channels"));
        }
        let frames = channels[0].len();
        for ch in &channels {
            if ch.len() != frames {
                return Err(Error::param("channels differ in frame count"));
            }
            for row in ch {
                if row.len() != mel_bins || row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::param("frame has wrong width or non-finite values"));
                }
            }
        }
        Ok(Self {
            channels,
            mel_bins,
            win_ms,
            hop_ms,
            rate,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_frames(&self) -> usize {
        self.channels[0].len()
    }

    pub fn mel_bins(&self) -> usize {
        self.mel_bins
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn win_ms(&self) -> f64 {
        self.win_ms
    }

    pub fn hop_ms(&self) -> f64 {
        self.hop_ms
    }

    pub fn channel(&self, c: usize) -> &[Vec<f64>] {
        &self.channels[c]
    }

    pub fn win_len(&self) -> usize {
        ms_to_samples(self.win_ms, self.rate)
    }

    pub fn hop_len(&self) -> usize {
        ms_to_samples(self.hop_ms, self.rate)
    }

    pub fn n_fft(&self) -> usize {
        self.win_len().next_power_of_two()
    }

    /// `(channels, mel_bins, frames)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.n_channels() * self.mel_bins * self.n_frames());
        for ch in &self.channels {
            for m in 0..self.mel_bins {
                data.extend(ch.iter().map(|row| row[m] as f32));
            }
        }
        Tensor::new(vec![self.n_channels(), self.mel_bins, self.n_frames()], data)
            .expect("dimensions match data")
    }

    pub fn from_tensor(t: &Tensor, win_ms: f64, hop_ms: f64, rate: u32) -> Result<Self> {
        let &[c, m, frames] = t.dims() else {
            return Err(Error::param(format!("expected 3 dims, got {:?}", t.dims())));
        };
        let data = t.data();
        let channels = (0..c)
            .map(|ci| {
                (0..frames)
                    .map(|ti| (0..m).map(|mi| data[(ci * m + mi) * frames + ti] as f64).collect())
                    .collect()
            })
            .collect();
        Self::new(channels, m, win_ms, hop_ms, rate)
    }
}

fn ms_to_samples(ms: f64, rate: u32) -> usize {
    (ms * 1e-3 * rate as f64).round() as usize
}

pub fn log_mel_spectrogram(channels: &[&Waveform], mel_bins: usize, win_ms: f64, hop_ms: f64) -> Result<Spectrogram> {
    let first = channels
        .first()
        .ok_or_else(|| Error::param("no channels given"))?;
    let rate = first.rate();
    if rate < 8000 {
        return Err(Error::param(format!("rate {rate} Hz is below 8 kHz")));
    }
    if channels.iter().any(|c| c.rate() != rate || c.len() != first.len()) {
        return Err(Error::param("channels differ in rate or length"));
    }
    let win = ms_to_samples(win_ms, rate);
    let hop = ms_to_samples(hop_ms, rate);
    if win < 2 || hop == 0 || mel_bins == 0 {
        return Err(Error::param("window, hop and mel bins must be positive"));
    }
    if first.len() < win {
        return Err(Error::param(format!(
            "{} samples is shorter than one {win}-sample window",
            first.len()
        )));
    }
    let n_fft = win.next_power_of_two();
    let stft = Stft::new(hann(win), n_fft, hop);
    let bank = mel_filterbank(mel_bins, n_fft, rate as f64);
    let out = channels
        .iter()
        .map(|w| {
            stft.analyze(w.samples())
                .iter()
                .map(|spec| {
                    let power: Vec<f64> = spec.iter().map(|c| c.norm_sqr()).collect();
                    bank.iter()
                        .map(|row| {
                            let e: f64 = row.iter().zip(&power).map(|(a, b)| a * b).sum();
                            e.max(LOG_FLOOR).ln()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Spectrogram::new(out, mel_bins, win_ms, hop_ms, rate)
}

/// Renders a single-channel log-mel spectrogram back to audio: mel power is
/// mapped to linear bins through the filterbank pseudo-inverse, then phase is
/// recovered with `iterations` rounds of Griffin-Lim from a seeded random
/// start.
pub fn invert_spectrogram(s: &Spectrogram, iterations: usize, seed: u64) -> Result<Waveform> {
    if s.n_channels() != 1 {
        return Err(Error::param("spectrogram inversion needs a single channel"));
    }
    let win = s.win_len();
    let hop = s.hop_len();
    if win < 2 || hop == 0 {
        return Err(Error::param("window and hop must be positive"));
    }
    let frames = s.n_frames();
    if frames == 0 {
        return Waveform::new(Vec::new(), s.rate());
    }
    let n_fft = s.n_fft();
    let bins = n_fft / 2 + 1;
    let bank = mel_filterbank(s.mel_bins(), n_fft, s.rate() as f64);
    let fb = DMatrix::from_fn(s.mel_bins(), bins, |r, c| bank[r][c]);
    let pinv = fb
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::param(format!("filterbank pseudo-inverse failed: {e}")))?;

    let mags: Vec<Vec<f64>> = s
        .channel(0)
        .iter()
        .map(|row| {
            // Cells sitting on the log floor carry no energy.
            let mel = DMatrix::from_iterator(row.len(), 1, row.iter().map(|v| (v.exp() - LOG_FLOOR).max(0.0)));
            let lin = &pinv * mel;
            lin.iter().map(|p| p.max(0.0).sqrt()).collect()
        })
        .collect();

    let stft = Stft::new(hann(win), n_fft, hop);
    let len = (frames - 1) * hop + win;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec: Vec<Vec<Complex64>> = mags
        .iter()
        .map(|m| {
            m.iter()
                .map(|&a| Complex64::from_polar(a, rng.gen_range(0.0..2.0 * PI)))
                .collect()
        })
        .collect();
    let mut x = stft.synthesize(&spec, len);
    for _ in 0..iterations {
        let est = stft.analyze(&x);
        for (f, (target, m)) in spec.iter_mut().zip(est.iter().zip(&mags)) {
            for (c, (e, &a)) in f.iter_mut().zip(target.iter().zip(m)) {
                let r = e.norm();
                *c = if r > 0.0 { e * (a / r) } else { Complex64::new(a, 0.0) };
            }
        }
        x = stft.synthesize(&spec, len);
    }
    Waveform::new(x, s.rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{peak_frequency, rms};
    use crate::metrics::si_snr_slices;
    use crate::sensor::{Packet, SensorConfig};
    use crate::signal::sine;
    use rand_distr::{Distribution, Exp, Normal};

    fn config(poll: u32) -> SensorConfig {
        SensorConfig {
            poll_rate_hz: poll,
            count_saturation: 32767,
            ..SensorConfig::default()
        }
    }

    #[test]
    fn on_grid_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vals: Vec<i32> = (0..400).map(|_| rng.gen_range(-100..=100)).collect();
        let packets: Vec<Packet> = vals.iter().map(|&v| Packet::new(100, v, -v)).collect();
        let ev = EventStream::new(packets, config(10_000)).unwrap();
        let out = events_to_signal(&ev, 10_000).unwrap();
        assert_eq!(out.x.len(), 401);
        // Before the first packet the output holds its value, so compare
        // against the first sample to cancel the removed mean.
        let x = out.x.samples();
        for (i, &v) in vals.iter().enumerate() {
            assert!((x[i + 1] - x[1] - (v - vals[0]) as f64).abs() < 1e-3, "sample {i}");
        }
    }

    #[test]
    fn poisson_sine() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gaps = Exp::new(4000.0).unwrap();
        let mut t = 0.0f64;
        let mut packets = Vec::new();
        let mut last_us = 0u64;
        loop {
            t += gaps.sample(&mut rng);
            if t >= 1.0 {
                break;
            }
            let us = (t * 1e6).round() as u64;
            if us == last_us {
                continue;
            }
            let v = (100.0 * (2.0 * PI * 100.0 * us as f64 * 1e-6).sin()).round() as i32;
            packets.push(Packet::new((us - last_us) as u32, v, 0));
            last_us = us;
        }
        let ev = EventStream::new(packets, config(8000)).unwrap();
        let out = events_to_signal(&ev, 16_000).unwrap();
        let reference: Vec<f64> = (0..out.x.len())
            .map(|n| (2.0 * PI * 100.0 * n as f64 / 16_000.0).sin())
            .collect();
        let snr = si_snr_slices(&reference, out.x.samples()).unwrap();
        assert!(snr >= 30.0, "{snr}");
    }

    #[test]
    fn zero_packets_are_transparent() {
        let base = vec![Packet::new(125, 3, 1), Packet::new(250, -2, 0), Packet::new(125, 4, -1)];
        let split = vec![
            Packet::new(125, 3, 1),
            Packet::new(100, 0, 0),
            Packet::new(150, -2, 0),
            Packet::new(125, 4, -1),
        ];
        let a = events_to_signal(&EventStream::new(base, config(8000)).unwrap(), 16_000).unwrap();
        let b = events_to_signal(&EventStream::new(split, config(8000)).unwrap(), 16_000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_and_all_zero_streams() {
        assert!(matches!(
            events_to_signal(&EventStream::empty(config(8000)), 16_000),
            Err(Error::EmptyInput(_))
        ));
        let ev = EventStream::new(vec![Packet::new(1000, 0, 0)], config(8000)).unwrap();
        let out = events_to_signal(&ev, 16_000).unwrap();
        assert_eq!(out.x.len(), 17);
        assert!(out.x.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trim_recovers_tone() {
        let rate = 16_000;
        let tone = sine(440.0, 0.5, 1.0, rate).unwrap();
        let mut x = vec![0.0; 8000];
        x.extend_from_slice(tone.samples());
        x.extend(vec![0.0; 8000]);
        let out = trim_silence(&Waveform::new(x, rate).unwrap(), -40.0, 20.0).unwrap();
        assert!((out.len() as i64 - 16_000).abs() <= 2 * 320);
        assert!(trim_silence(&Waveform::zeros(1000, rate).unwrap(), -40.0, 20.0).unwrap().is_empty());
        assert_eq!(trim_silence(&tone, -40.0, 20.0).unwrap(), tone);
        assert!(trim_silence(&tone, 3.0, 20.0).is_err());
    }

    fn white(len: usize, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sigma).unwrap();
        (0..len).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn noise_psd_levels() {
        let p = StftParams::default();
        let w = Waveform::new(white(160_000, 0.3, 3), 16_000).unwrap();
        let prof = estimate_noise_psd(&w, &p).unwrap();
        let level = 0.09 / 16_000.0;
        for &v in &prof.psd()[1..256] {
            assert!((10.0 * (v / level).log10()).abs() < 1.5);
        }
        let tone = sine(1000.0, 1.0, 1.0, 16_000).unwrap();
        let prof = estimate_noise_psd(&tone, &p).unwrap();
        let arg = (0..prof.psd().len())
            .max_by(|&a, &b| prof.psd()[a].total_cmp(&prof.psd()[b]))
            .unwrap();
        assert_eq!(arg, 32);
        let z = estimate_noise_psd(&Waveform::zeros(4000, 16_000).unwrap(), &p).unwrap();
        assert!(z.psd().iter().all(|&v| v == 0.0));
        assert!(estimate_noise_psd(&Waveform::zeros(100, 16_000).unwrap(), &p).is_err());
    }

    #[test]
    fn profile_text_roundtrip() {
        let p = PsdProfile::new(vec![0.0, 1.5e-7, 3.25], 4, 8000).unwrap();
        assert_eq!(PsdProfile::from_text(&p.to_text()).unwrap(), p);
        assert!(matches!(
            PsdProfile::from_text("rate=8000\nfft_size=4\n1\nx\n"),
            Err(Error::Parse { line: 4, .. })
        ));
        assert!(PsdProfile::from_text("rate=8000\n1\n2\n3\n").is_err());
        let prior = PsdProfile::bundled_speech();
        assert_eq!((prior.rate(), prior.fft_size()), (16_000, 512));
    }

    #[test]
    fn wiener_identity_with_zero_noise() {
        let p = StftParams::default();
        let x = Waveform::new(white(5000, 0.2, 4), 16_000).unwrap();
        let zero = PsdProfile::new(vec![0.0; 257], 512, 16_000).unwrap();
        let out = wiener_filter(&x, &zero, &PsdProfile::bundled_speech(), &p).unwrap();
        let diff: Vec<f64> = x.samples().iter().zip(out.samples()).map(|(a, b)| a - b).collect();
        assert_eq!(out.len(), x.len());
        assert!(rms(&diff) < 1e-6);
    }

    #[test]
    fn wiener_denoises_sine() {
        let p = StftParams::default();
        let clean = sine(500.0, 1.0, 2.0, 16_000).unwrap();
        let sigma = (0.5f64).sqrt();
        let noisy: Vec<f64> = clean
            .samples()
            .iter()
            .zip(white(clean.len(), sigma, 5))
            .map(|(a, b)| a + b)
            .collect();
        let before = si_snr_slices(clean.samples(), &noisy).unwrap();
        let noise = PsdProfile::new(vec![sigma * sigma / 16_000.0; 257], 512, 16_000).unwrap();
        let prior = estimate_noise_psd(&clean, &p).unwrap();
        let out = wiener_filter(&Waveform::new(noisy, 16_000).unwrap(), &noise, &prior, &p).unwrap();
        let after = si_snr_slices(clean.samples(), out.samples()).unwrap();
        assert!(before.abs() < 0.5);
        assert!(after - before >= 10.0, "{before} -> {after}");
    }

    #[test]
    fn wiener_suppresses_pure_noise() {
        let p = StftParams::default();
        let sigma = 0.1;
        let noise = PsdProfile::new(vec![sigma * sigma / 16_000.0; 257], 512, 16_000).unwrap();
        for seed in 0..5 {
            let x = Waveform::new(white(32_000, sigma, 10 + seed), 16_000).unwrap();
            let out = wiener_filter(&x, &noise, &PsdProfile::bundled_speech(), &p).unwrap();
            assert!(rms(out.samples()) <= 0.35 * rms(x.samples()));
        }
    }

    #[test]
    fn wiener_rejects_mismatch() {
        let p = StftParams::default();
        let x = Waveform::zeros(1000, 8000).unwrap();
        let prior = PsdProfile::bundled_speech();
        assert!(wiener_filter(&x, &prior, &prior, &p).is_err());
    }

    #[test]
    fn log_mel_zero_floor_and_frames() {
        let w = Waveform::zeros(16_000, 16_000).unwrap();
        let s = log_mel_spectrogram(&[&w], 80, 25.0, 10.0).unwrap();
        assert_eq!(s.n_frames(), 98);
        assert!(s.channel(0).iter().flatten().all(|&v| v == LOG_FLOOR.ln()));
        assert!(log_mel_spectrogram(&[&Waveform::zeros(100, 16_000).unwrap()], 80, 25.0, 10.0).is_err());
        assert!(log_mel_spectrogram(&[&Waveform::zeros(8000, 4000).unwrap()], 80, 25.0, 10.0).is_err());
    }

    #[test]
    fn log_mel_tone_bin() {
        let w = sine(1000.0, 0.5, 0.5, 16_000).unwrap();
        let s = log_mel_spectrogram(&[&w], 80, 25.0, 10.0).unwrap();
        let centers = mel_centers(80, 16_000.0);
        let nearest = (0..80)
            .min_by(|&a, &b| (centers[a] - 1000.0).abs().total_cmp(&(centers[b] - 1000.0).abs()))
            .unwrap();
        for row in s.channel(0) {
            let arg = (0..80).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, nearest);
        }
    }

    #[test]
    fn log_mel_scaling() {
        let w = sine(700.0, 0.05, 0.3, 16_000).unwrap();
        let w10 = w.map(|v| 10.0 * v).unwrap();
        let a = log_mel_spectrogram(&[&w], 40, 25.0, 10.0).unwrap();
        let b = log_mel_spectrogram(&[&w10], 40, 25.0, 10.0).unwrap();
        for (ra, rb) in a.channel(0).iter().zip(b.channel(0)) {
            for (x, y) in ra.iter().zip(rb) {
                if *x > LOG_FLOOR.ln() + 1e-9 && *y > LOG_FLOOR.ln() + 1e-9 + 100f64.ln() {
                    assert!((y - x - 100f64.ln()).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn filterbank_coverage() {
        let bank = mel_filterbank(80, 512, 16_000.0);
        assert!(bank.iter().all(|row| row.iter().sum::<f64>() > 0.0));
        for k in 1..256 {
            assert!(bank.iter().any(|row| row[k] > 0.0), "bin {k}");
        }
    }

    #[test]
    fn invert_tone_peak() {
        let w = sine(440.0, 0.5, 1.0, 16_000).unwrap();
        let s = log_mel_spectrogram(&[&w], 80, 25.0, 10.0).unwrap();
        let out = invert_spectrogram(&s, 60, 3).unwrap();
        // The spectrogram cannot place a tone more finely than one STFT bin.
        let (f, _) = peak_frequency(out.samples(), 16_000.0);
        let bin = 16_000.0 / s.n_fft() as f64;
        assert!((f - 440.0).abs() <= bin, "{f}");
        assert_eq!(out, invert_spectrogram(&s, 60, 3).unwrap());
    }

    #[test]
    fn invert_floor_is_silent() {
        let w = Waveform::zeros(8000, 16_000).unwrap();
        let s = log_mel_spectrogram(&[&w], 80, 25.0, 10.0).unwrap();
        let out = invert_spectrogram(&s, 10, 0).unwrap();
        assert!(rms(out.samples()) <= 1e-4);
    }

    #[test]
    fn spectrogram_tensor_roundtrip() {
        let a = sine(300.0, 0.3, 0.2, 16_000).unwrap();
        let b = sine(900.0, 0.3, 0.2, 16_000).unwrap();
        let s = log_mel_spectrogram(&[&a, &b], 20, 25.0, 10.0).unwrap();
        let t = s.to_tensor();
        assert_eq!(t.dims(), &[2, 20, s.n_frames()]);
        let back = Spectrogram::from_tensor(&t, 25.0, 10.0, 16_000).unwrap();
        for c in 0..2 {
            for (r1, r2) in back.channel(c).iter().zip(s.channel(c)) {
                for (x, y) in r1.iter().zip(r2) {
                    assert_eq!(*x, *y as f32 as f64);
                }
            }
        }
    }
}
