//! Shared spectral building blocks: windows, FFT helpers, STFT with
//! weighted overlap-add, Welch averaging and a resonant biquad.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window (the variant that satisfies COLA at hop = n/4).
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Symmetric Hann window, as used by the intelligibility metric.
pub fn hann_symmetric(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    // Matches the MATLAB reference `hanning(n)`, which drops the zero endpoints.
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Zeroth-order modified Bessel function of the first kind.
pub fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Forward/inverse complex FFT pair of one size, planned once.
#[derive(Clone)]
pub struct FftPair {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    /// Unnormalized inverse; callers divide by `size` where needed.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
    }

    /// One-sided spectrum (`size/2 + 1` bins) of a real frame, zero padded.
    pub fn real_spectrum(&self, frame: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.size];
        for (b, &x) in buf.iter_mut().zip(frame) {
            b.re = x;
        }
        self.forward(&mut buf);
        buf.truncate(self.size / 2 + 1);
        buf
    }

    /// Inverse of [`real_spectrum`](Self::real_spectrum), normalized.
    pub fn real_inverse(&self, half: &[Complex64]) -> Vec<f64> {
        let n = self.size;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[..half.len()].copy_from_slice(half);
        for k in 1..(n + 1) / 2 {
            buf[n - k] = half[k].conj();
        }
        self.inverse(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    }
}

/// Magnitude spectrum of a whole signal, returning the bin with the largest
/// magnitude (excluding DC) together with the bin width in Hz.
pub fn peak_frequency(samples: &[f64], rate: f64) -> (f64, f64) {
    let n = samples.len().max(2);
    let fft = FftPair::new(n);
    let spec = fft.real_spectrum(samples);
    let (bin, _) = spec
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| (k, c.norm_sqr()))
        .fold((1, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
    let width = rate / n as f64;
    (bin as f64 * width, width)
}

/// Short-time Fourier transform configuration.
#[derive(Clone)]
pub struct Stft {
    pub fft: FftPair,
    pub window: Vec<f64>,
    pub hop: usize,
}

impl Stft {
    pub fn new(window: Vec<f64>, fft_size: usize, hop: usize) -> Self {
        assert!(window.len() <= fft_size && hop > 0);
        Self {
            fft: FftPair::new(fft_size),
            window,
            hop,
        }
    }

    pub fn win_len(&self) -> usize {
        self.window.len()
    }

    /// Frames starting at 0, hop, 2·hop, ... that fit entirely in `x`.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.win_len() {
            0
        } else {
            (len - self.win_len()) / self.hop + 1
        }
    }

    pub fn analyze(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let w = self.win_len();
        (0..self.frame_count(x.len()))
            .map(|t| {
                let start = t * self.hop;
                let frame: Vec<f64> = x[start..start + w]
                    .iter()
                    .zip(&self.window)
                    .map(|(a, b)| a * b)
                    .collect();
                self.fft.real_spectrum(&frame)
            })
            .collect()
    }

    /// Weighted overlap-add synthesis with the analysis window reused as the
    /// synthesis window, normalized by the summed squared window so that
    /// `synthesize(analyze(x))` reproduces every covered sample.
    pub fn synthesize(&self, frames: &[Vec<Complex64>], len: usize) -> Vec<f64> {
        let w = self.win_len();
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        for (t, spec) in frames.iter().enumerate() {
            let start = t * self.hop;
            let time = self.fft.real_inverse(spec);
            for i in 0..w {
                let n = start + i;
                if n >= len {
                    break;
                }
                out[n] += time[i] * self.window[i];
                norm[n] += self.window[i] * self.window[i];
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-12 {
                *o /= n;
            } else {
                *o = 0.0;
            }
        }
        out
    }
}

/// Welch averaged periodogram: mean of |FFT|² over Hann frames, scaled by
/// `1 / (rate · Σw²)` so white noise of variance σ² yields σ²/rate per bin.
pub fn welch_psd(x: &[f64], fft_size: usize, hop: usize, rate: f64) -> Vec<f64> {
    let stft = Stft::new(hann(fft_size), fft_size, hop);
    let frames = stft.analyze(x);
    let bins = fft_size / 2 + 1;
    let mut psd = vec![0.0; bins];
    if frames.is_empty() {
        return psd;
    }
    for f in &frames {
        for (p, c) in psd.iter_mut().zip(f) {
            *p += c.norm_sqr();
        }
    }
    let win_energy: f64 = stft.window.iter().map(|w| w * w).sum();
    let scale = 1.0 / (frames.len() as f64 * rate * win_energy);
    psd.iter_mut().for_each(|p| *p *= scale);
    psd
}

/// Second-order resonant band-pass (constant 0 dB peak gain), direct form I.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    pub fn bandpass(center_hz: f64, q: f64, rate: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / rate;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b1: 0.0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b0 * x0 + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }

    /// |H(e^{jω})| at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, rate: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / rate;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b0 + z1 * self.b1 + z2 * self.b2;
        let den = Complex64::new(1.0, 0.0) + z1 * self.a1 + z2 * self.a2;
        (num / den).norm()
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stft_roundtrip_is_identity_inside_coverage() {
        let n = 256;
        let stft = Stft::new(hann(n), n, n / 4);
        let x: Vec<f64> = (0..2048).map(|i| ((i * 7919) % 113) as f64 / 113.0 - 0.5).collect();
        let y = stft.synthesize(&stft.analyze(&x), x.len());
        for i in n..x.len() - n {
            assert!((x[i] - y[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn bandpass_peaks_at_center() {
        let bq = Biquad::bandpass(1000.0, 2.0, 16000.0);
        assert!((bq.magnitude(1000.0, 16000.0) - 1.0).abs() < 1e-9);
        assert!(bq.magnitude(500.0, 16000.0) < 1.0);
        assert!(bq.magnitude(2000.0, 16000.0) < 1.0);
    }

    #[test]
    fn bessel_matches_known_value() {
        // I0(1) = 1.2660658777520082
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_2).abs() < 1e-14);
    }
}
