//! Physical side of the channel: how a desk surface turns sound into
//! displacement, and how an optical mouse sensor turns displacement into
//! sparse count packets. Also the frame-correlation motion estimator used
//! inside the sensor and the degradation injectors applied to recorded logs.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::{rms, Biquad};
use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Q of the resonator that colours the sensor noise.
pub const NOISE_Q: f64 = 2.0;

/// Membrane model: a memoryless cubic nonlinearity followed by a resonant
/// band-pass, plus coloured sensor noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceModel {
    pub name: String,
    /// Inches of displacement per full-scale audio unit.
    pub gain: f64,
    pub resonance_hz: f64,
    pub resonance_q: f64,
    pub h2: f64,
    pub h3: f64,
    /// RMS of the additive displacement noise, inches.
    pub noise_rms: f64,
    pub noise_peak_hz: f64,
    pub thickness_mm: f64,
    /// kg/m³
    pub density: f64,
    /// m/s
    pub wave_speed: f64,
}

impl SurfaceModel {
    /// Thin rigid sheet: strong response with audible harmonics.
    pub fn plastic() -> Self {
        Self {
            name: "plastic".into(),
            gain: 8.0e-4,
            resonance_hz: 550.0,
            resonance_q: 2.5,
            h2: 0.2,
            h3: 0.05,
            noise_rms: 4.0e-6,
            noise_peak_hz: 1000.0,
            thickness_mm: 1.0,
            density: 1200.0,
            wave_speed: 2300.0,
        }
    }

    /// Light sheet that dissipates energy quickly: broad response, quiet.
    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            gain: 3.0e-4,
            resonance_hz: 700.0,
            resonance_q: 1.0,
            h2: 0.1,
            h3: 0.02,
            noise_rms: 3.0e-6,
            noise_peak_hz: 1000.0,
            thickness_mm: 0.1,
            density: 800.0,
            wave_speed: 1500.0,
        }
    }

    /// Thick absorbing board: weak response, noisy.
    pub fn cardboard() -> Self {
        Self {
            name: "cardboard".into(),
            gain: 1.5e-4,
            resonance_hz: 400.0,
            resonance_q: 1.5,
            h2: 0.0,
            h3: 0.0,
            noise_rms: 1.6e-5,
            noise_peak_hz: 1000.0,
            thickness_mm: 4.0,
            density: 700.0,
            wave_speed: 1000.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "plastic" => Ok(Self::plastic()),
            "paper" => Ok(Self::paper()),
            "cardboard" => Ok(Self::cardboard()),
            other => Err(Error::param(format!("unknown surface preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.gain >= 0.0
            && self.resonance_hz > 0.0
            && self.resonance_q > 0.0
            && self.noise_rms >= 0.0
            && self.noise_peak_hz > 0.0
            && self.thickness_mm > 0.0
            && self.density > 0.0
            && self.wave_speed > 0.0
            && self.h2.is_finite()
            && self.h3.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("invalid surface model '{}'", self.name)))
        }
    }

    /// Same surface with the noise source switched off.
    pub fn noiseless(&self) -> Self {
        Self {
            noise_rms: 0.0,
            ..self.clone()
        }
    }
}

/// Displacement (inches, at the audio rate) of the surface under the mouse.
pub fn surface_response(audio: &Waveform, surface: &SurfaceModel, seed: u64) -> Result<Waveform> {
    surface.validate()?;
    let fs = audio.rate() as f64;
    let shaped: Vec<f64> = audio
        .samples()
        .iter()
        .map(|&a| surface.gain * (a + surface.h2 * a * a + surface.h3 * a * a * a))
        .collect();
    let mut d = Biquad::bandpass(surface.resonance_hz.min(0.49 * fs), surface.resonance_q, fs).filter(&shaped);
    if surface.noise_rms > 0.0 && !d.is_empty() {
        let noise = coloured_noise(d.len(), fs, surface.noise_peak_hz, surface.noise_rms, seed);
        d.iter_mut().zip(noise).for_each(|(x, n)| *x += n);
    }
    Waveform::new(d, audio.rate())
}

/// White Gaussian noise through a Q=2 resonator at `peak_hz`, scaled to the
/// requested RMS.
pub fn coloured_noise(len: usize, rate: f64, peak_hz: f64, target_rms: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let mut n = Biquad::bandpass(peak_hz.min(0.49 * rate), NOISE_Q, rate).filter(&white);
    let r = rms(&n);
    if r > 0.0 {
        let k = target_rms / r;
        n.iter_mut().for_each(|x| *x *= k);
    }
    n
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorConfig {
    /// Counts per inch.
    pub dpi: u32,
    pub poll_rate_hz: u32,
    /// Maximum tracking speed, inches per second.
    pub ips_cap: f64,
    /// Largest |count| a single report can carry.
    pub count_saturation: u16,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            dpi: 20_000,
            poll_rate_hz: 8_000,
            ips_cap: 650.0,
            count_saturation: 127,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dpi == 0 || self.poll_rate_hz == 0 || !(self.ips_cap > 0.0) || self.count_saturation == 0 {
            return Err(Error::param("sensor config fields must be positive"));
        }
        Ok(())
    }
}

/// One HID-style report: time since the previous report and the motion
/// counts on each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Packet {
    pub dt_us: u32,
    pub dx: i32,
    pub dy: i32,
}

impl Packet {
    pub fn new(dt_us: u32, dx: i32, dy: i32) -> Self {
        Self { dt_us, dx, dy }
    }

    pub fn is_zero(&self) -> bool {
        self.dx == 0 && self.dy == 0
    }
}

/// Recorded packet log plus the sensor settings it was captured with.
///
/// Every packet has `dt_us > 0` and counts within the saturation bound.
/// Zero-motion packets only appear after degradation; the sensor itself
/// never emits them.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    packets: Vec<Packet>,
    meta: SensorConfig,
}

impl EventStream {
    pub fn new(packets: Vec<Packet>, meta: SensorConfig) -> Result<Self> {
        meta.validate()?;
        let sat = meta.count_saturation as i32;
        for (i, p) in packets.iter().enumerate() {
            if p.dt_us == 0 {
                return Err(Error::param(format!("packet {i}: dt_us must be positive")));
            }
            if p.dx.abs() > sat || p.dy.abs() > sat {
                return Err(Error::param(format!(
                    "packet {i}: counts ({}, {}) exceed saturation {sat}",
                    p.dx, p.dy
                )));
            }
        }
        Ok(Self { packets, meta })
    }

    pub fn empty(meta: SensorConfig) -> Self {
        Self {
            packets: Vec::new(),
            meta,
        }
    }

    pub fn packets(&self) -> &[Packet] {
        &self.packets
    }

    pub fn meta(&self) -> &SensorConfig {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn total_time_us(&self) -> u64 {
        self.packets.iter().map(|p| p.dt_us as u64).sum()
    }

    /// Arrival time of each packet, µs from the start of the log.
    pub fn arrival_times_us(&self) -> Vec<u64> {
        self.packets
            .iter()
            .scan(0u64, |t, p| {
                *t += p.dt_us as u64;
                Some(*t)
            })
            .collect()
    }
}

/// Fraction of X-axis motion seen on the Y axis.
pub const Y_COUPLING: f64 = 0.4;

/// Per-axis error-feedback quantizer. The carry starts at one half so that
/// `floor(motion + carry)` rounds symmetrically around the rest position.
#[derive(Debug, Clone, Copy)]
struct AxisQuantizer {
    carry: f64,
    saturation: i32,
}

impl AxisQuantizer {
    fn new(saturation: u16) -> Self {
        Self {
            carry: 0.5,
            saturation: saturation as i32,
        }
    }

    fn push(&mut self, counts: f64) -> i32 {
        let v = counts + self.carry;
        let mut q = v.floor();
        self.carry = v - q;
        let sat = self.saturation as f64;
        if q > sat {
            self.carry += q - sat;
            q = sat;
        } else if q < -sat {
            self.carry += q + sat;
            q = -sat;
        }
        q as i32
    }
}

/// Linear interpolation of a sampled trace at `t` seconds, held at the ends.
fn sample_at(x: &[f64], rate: f64, t: f64) -> f64 {
    let pos = t * rate;
    if pos <= 0.0 {
        return x[0];
    }
    let i = pos.floor() as usize;
    if i + 1 >= x.len() {
        return x[x.len() - 1];
    }
    let frac = pos - i as f64;
    x[i] * (1.0 - frac) + x[i + 1] * frac
}

/// Polls the surface displacement on the sensor clock and emits a packet for
/// every poll whose quantized motion is non-zero.
///
/// The X axis follows the displacement, the Y axis follows `0.4×` it.
/// Poll intervals are `1/S` plus Gaussian jitter (floored at 1 µs); motion
/// per interval is clamped to the tracking limit before quantization.
pub fn simulate_sensor(
    displacement: &Waveform,
    cfg: &SensorConfig,
    jitter_sigma_us: f64,
    seed: u64,
) -> Result<EventStream> {
    cfg.validate()?;
    let rate = displacement.rate() as f64;
    if rate < 2.0 * cfg.poll_rate_hz as f64 {
        return Err(Error::param(format!(
            "displacement rate {rate} Hz must be at least twice the polling rate {} Hz",
            cfg.poll_rate_hz
        )));
    }
    if !(jitter_sigma_us >= 0.0) {
        return Err(Error::param("jitter sigma must be non-negative"));
    }
    let x = displacement.samples();
    if x.is_empty() {
        return Ok(EventStream::empty(*cfg));
    }
    let duration_us = displacement.duration_s() * 1e6;
    let nominal_us = 1e6 / cfg.poll_rate_hz as f64;
    let max_step = cfg.ips_cap / cfg.poll_rate_hz as f64;
    let jitter = Normal::new(0.0, jitter_sigma_us).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dpi = cfg.dpi as f64;

    let mut qx = AxisQuantizer::new(cfg.count_saturation);
    let mut qy = AxisQuantizer::new(cfg.count_saturation);
    let mut packets = Vec::new();
    let mut t_us = 0.0f64;
    let mut prev_d = sample_at(x, rate, 0.0);
    let mut last_emit_us: u64 = 0;
    loop {
        let step = if jitter_sigma_us > 0.0 {
            (nominal_us + jitter.sample(&mut rng)).max(1.0)
        } else {
            nominal_us
        };
        t_us += step;
        if t_us > duration_us {
            break;
        }
        let d = sample_at(x, rate, t_us * 1e-6);
        let delta = (d - prev_d).clamp(-max_step, max_step);
        prev_d = d;
        let dx = qx.push(dpi * delta);
        let dy = qy.push(dpi * Y_COUPLING * delta);
        if dx != 0 || dy != 0 {
            let now = t_us.round() as u64;
            let dt = (now - last_emit_us).max(1);
            packets.push(Packet::new(dt as u32, dx, dy));
            last_emit_us = now;
        }
    }
    EventStream::new(packets, *cfg)
}

/// Re-times each packet by `max(1, round(dt + n))`, `n ~ N(0, σ²)`.
pub fn inject_timing_jitter(ev: &EventStream, sigma_us: f64, seed: u64) -> Result<EventStream> {
    if !(sigma_us >= 0.0) {
        return Err(Error::param("jitter sigma must be non-negative"));
    }
    if sigma_us == 0.0 {
        return Ok(ev.clone());
    }
    let normal = Normal::new(0.0, sigma_us).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let packets = ev
        .packets()
        .iter()
        .map(|p| {
            let dt = (p.dt_us as f64 + normal.sample(&mut rng)).round().max(1.0);
            Packet::new(dt.min(u32::MAX as f64) as u32, p.dx, p.dy)
        })
        .collect();
    EventStream::new(packets, ev.meta)
}

/// Adds independent rounded Gaussian noise to both count channels. Results
/// stay within the saturation bound; zero-motion packets are kept.
pub fn inject_count_noise(ev: &EventStream, sigma_counts: f64, seed: u64) -> Result<EventStream> {
    if !(sigma_counts >= 0.0) {
        return Err(Error::param("count noise sigma must be non-negative"));
    }
    if sigma_counts == 0.0 {
        return Ok(ev.clone());
    }
    let normal = Normal::new(0.0, sigma_counts).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sat = ev.meta.count_saturation as i32;
    let packets = ev
        .packets()
        .iter()
        .map(|p| {
            let nx = normal.sample(&mut rng).round() as i32;
            let ny = normal.sample(&mut rng).round() as i32;
            Packet::new(p.dt_us, (p.dx + nx).clamp(-sat, sat), (p.dy + ny).clamp(-sat, sat))
        })
        .collect();
    EventStream::new(packets, ev.meta)
}

/// Light-intensity image from the sensor's CMOS array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFrame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl PixelFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::param("frames must be at least 2x2"));
        }
        if pixels.len() != width * height {
            return Err(Error::param("pixel count does not match dimensions"));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::param("pixel intensities must lie in [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Uniform random speckle.
    pub fn speckle(width: usize, height: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..width * height).map(|_| rng.gen::<f64>()).collect();
        Self::new(width, height, px)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Circular shift: `out(x, y) = self(x − dx, y − dy)`.
    pub fn shifted(&self, dx: i64, dy: i64) -> Self {
        let (w, h) = (self.width as i64, self.height as i64);
        let mut px = vec![0.0; self.pixels.len()];
        for y in 0..h {
            for x in 0..w {
                let sx = (x - dx).rem_euclid(w);
                let sy = (y - dy).rem_euclid(h);
                px[(y * w + x) as usize] = self.pixels[(sy * w + sx) as usize];
            }
        }
        Self {
            width: self.width,
            height: self.height,
            pixels: px,
        }
    }

    /// Adds Gaussian noise at the given SNR (relative to the frame's own
    /// variance) and clips back into [0, 1].
    pub fn with_noise(&self, snr_db: f64, seed: u64) -> Self {
        let m = self.pixels.iter().sum::<f64>() / self.pixels.len() as f64;
        let var = self.pixels.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / self.pixels.len() as f64;
        let sigma = (var / 10f64.powf(snr_db / 10.0)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = self
            .pixels
            .iter()
            .map(|p| (p + sigma * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0))
            .collect();
        Self {
            width: self.width,
            height: self.height,
            pixels: px,
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft2(data: &mut [Complex64], width: usize, height: usize, inverse: bool) {
    let (row, col) = PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        if inverse {
            (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
        } else {
            (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
        }
    });
    for r in data.chunks_exact_mut(width) {
        row.process(r);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
}

/// Maps a circular index into `[−n/2, n/2)` (even n) or `[−(n−1)/2, (n−1)/2]`.
fn signed_shift(index: usize, n: usize) -> i64 {
    let i = index as i64;
    let n = n as i64;
    if i >= (n + 1) / 2 {
        i - n
    } else {
        i
    }
}

/// Integer pixel motion between two frames: the argmax of the circular
/// cross-correlation `IFFT(FFT(I_t) · conj(FFT(I_{t−1})))`, with each
/// coordinate mapped into `[−n/2, n/2)`. Returns `(dx, dy)` along width and
/// height.
pub fn estimate_displacement_fft(frame_t: &PixelFrame, frame_prev: &PixelFrame) -> Result<(i64, i64)> {
    if frame_t.width != frame_prev.width || frame_t.height != frame_prev.height {
        return Err(Error::param("frame dimensions differ"));
    }
    let (w, h) = (frame_t.width, frame_t.height);
    let to_complex = |f: &PixelFrame| -> Vec<Complex64> {
        f.pixels.iter().map(|&p| Complex64::new(p, 0.0)).collect()
    };
    let mut a = to_complex(frame_t);
    let mut b = to_complex(frame_prev);
    fft2(&mut a, w, h, false);
    fft2(&mut b, w, h, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y.conj();
    }
    fft2(&mut a, w, h, true);
    let best = a
        .iter()
        .enumerate()
        .fold((0usize, f64::MIN), |acc, (i, c)| if c.re > acc.1 { (i, c.re) } else { acc })
        .0;
    Ok((signed_shift(best % w, w), signed_shift(best / w, h)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::welch_psd;
    use std::f64::consts::PI;

    fn tone(freq: f64, rate: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / rate).sin()).collect()
    }

    fn cfg(dpi: u32, poll: u32) -> SensorConfig {
        SensorConfig {
            dpi,
            poll_rate_hz: poll,
            ips_cap: 650.0,
            count_saturation: 127,
        }
    }

    #[test]
    fn silent_audio_without_noise_is_still() {
        let a = Waveform::zeros(4800, 48_000).unwrap();
        let d = surface_response(&a, &SurfaceModel::plastic().noiseless(), 1).unwrap();
        assert!(d.samples().iter().all(|&x| x == 0.0));
        let ev = simulate_sensor(&d, &cfg(20_000, 8000), 0.0, 1).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn noise_has_requested_level_and_peak() {
        let rate = 16_000;
        let a = Waveform::zeros(10 * rate as usize, rate).unwrap();
        let surface = SurfaceModel {
            noise_rms: 1e-5,
            ..SurfaceModel::plastic()
        };
        let d = surface_response(&a, &surface, 9).unwrap();
        let r = rms(d.samples());
        assert!((r - 1e-5).abs() <= 1e-6, "rms {r}");
        let psd = welch_psd(d.samples(), 1024, 256, rate as f64);
        let (k, _) = psd
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |a, (k, &p)| if p > a.1 { (k, p) } else { a });
        let f = k as f64 * rate as f64 / 1024.0;
        assert!((f - 1000.0).abs() <= 200.0, "peak {f}");
    }

    #[test]
    fn second_harmonic_matches_small_signal_expansion() {
        let rate = 48_000.0;
        let n = 48_000;
        let amp = 0.5;
        let surface = SurfaceModel {
            h2: 0.2,
            h3: 0.0,
            noise_rms: 0.0,
            ..SurfaceModel::plastic()
        };
        let a = Waveform::new(tone(300.0, rate, n, amp), 48_000).unwrap();
        let d = surface_response(&a, &surface, 0).unwrap();
        // Skip the resonator's start-up transient; 0.5 s holds whole periods.
        let seg = &d.samples()[24_000..];
        let line = |f: f64| -> f64 {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, x) in seg.iter().enumerate() {
                let ph = 2.0 * PI * f * i as f64 / rate;
                re += x * ph.cos();
                im += x * ph.sin();
            }
            (re * re + im * im).sqrt()
        };
        let bpf = Biquad::bandpass(surface.resonance_hz, surface.resonance_q, rate);
        let expected = surface.h2 * amp / 2.0 * bpf.magnitude(600.0, rate) / bpf.magnitude(300.0, rate);
        let measured = line(600.0) / line(300.0);
        let db = 20.0 * (measured / expected).log10();
        assert!(db.abs() <= 3.0, "ratio {measured} vs {expected}");
    }

    #[test]
    fn constant_velocity_counts_are_conserved() {
        // 1 inch/s for one second at 48 kHz.
        let rate = 48_000u32;
        let d: Vec<f64> = (0..=rate).map(|i| i as f64 / rate as f64).collect();
        let w = Waveform::new(d, rate).unwrap();
        let ev = simulate_sensor(&w, &cfg(20_000, 8000), 0.0, 0).unwrap();
        let total: i64 = ev.packets().iter().map(|p| p.dx as i64).sum();
        assert!((total - 20_000).abs() <= 1, "{total}");
        assert!(ev.packets().iter().all(|p| !p.is_zero() && p.dt_us > 0));
    }

    #[test]
    fn low_rate_displacement_is_rejected() {
        let w = Waveform::zeros(100, 8000).unwrap();
        assert!(matches!(
            simulate_sensor(&w, &cfg(20_000, 8000), 0.0, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn saturation_preserves_totals() {
        let rate = 48_000u32;
        // 50 inch/s at 1000 dpi, 1 kHz polling: 50 counts per poll, clamped to 1.
        let d: Vec<f64> = (0..rate / 10).map(|i| 50.0 * i as f64 / rate as f64).collect();
        let w = Waveform::new(d, rate).unwrap();
        let c = SensorConfig {
            dpi: 1000,
            poll_rate_hz: 1000,
            ips_cap: 1000.0,
            count_saturation: 1,
        };
        let ev = simulate_sensor(&w, &c, 0.0, 0).unwrap();
        assert!(ev.packets().iter().all(|p| p.dx.abs() <= 1 && p.dy.abs() <= 1));
        assert!(ev.packets().iter().all(|p| p.dx == 1));
    }

    #[test]
    fn ips_cap_limits_motion() {
        let rate = 48_000u32;
        let d: Vec<f64> = (0..rate).map(|i| 10.0 * i as f64 / rate as f64).collect();
        let w = Waveform::new(d, rate).unwrap();
        let c = SensorConfig {
            dpi: 100,
            poll_rate_hz: 1000,
            ips_cap: 2.0,
            count_saturation: 127,
        };
        let ev = simulate_sensor(&w, &c, 0.0, 0).unwrap();
        let total: i64 = ev.packets().iter().map(|p| p.dx as i64).sum();
        // 2 in/s for ~1 s at 100 dpi.
        assert!((total - 200).abs() <= 1, "{total}");
    }

    #[test]
    fn zero_sigma_injectors_are_identity() {
        let ev = EventStream::new(vec![Packet::new(125, 1, 0), Packet::new(250, -2, 3)], cfg(20_000, 8000)).unwrap();
        assert_eq!(inject_timing_jitter(&ev, 0.0, 3).unwrap(), ev);
        assert_eq!(inject_count_noise(&ev, 0.0, 3).unwrap(), ev);
        assert!(inject_timing_jitter(&ev, -1.0, 3).is_err());
        assert!(inject_count_noise(&ev, f64::NAN, 3).is_err());
    }

    #[test]
    fn stream_validation() {
        let c = cfg(20_000, 8000);
        assert!(EventStream::new(vec![Packet::new(0, 1, 0)], c).is_err());
        assert!(EventStream::new(vec![Packet::new(5, 128, 0)], c).is_err());
        assert!(EventStream::new(vec![Packet::new(5, 0, 0)], c).is_ok());
    }

    #[test]
    fn identical_frames_have_no_motion() {
        let f = PixelFrame::speckle(18, 18, 4).unwrap();
        assert_eq!(estimate_displacement_fft(&f, &f).unwrap(), (0, 0));
    }

    #[test]
    fn frame_size_mismatch() {
        let a = PixelFrame::speckle(18, 18, 4).unwrap();
        let b = PixelFrame::speckle(18, 16, 4).unwrap();
        assert!(estimate_displacement_fft(&a, &b).is_err());
        assert!(PixelFrame::new(1, 4, vec![0.0; 4]).is_err());
        assert!(PixelFrame::new(2, 2, vec![0.0, 0.5, 1.0, 1.5]).is_err());
    }

    #[test]
    fn presets_by_name() {
        for n in ["plastic", "paper", "cardboard"] {
            assert_eq!(SurfaceModel::preset(n).unwrap().name, n);
        }
        assert!(SurfaceModel::preset("glass").is_err());
    }
}
