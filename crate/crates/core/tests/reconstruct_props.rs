use mousecap_core::dsp::{peak_frequency, rms};
use mousecap_core::reconstruct::{
    estimate_noise_psd, events_to_signal, wiener_gains, invert_spectrogram, log_mel_spectrogram, mel_filterbank, wiener_filter,
    PsdProfile, StftParams,
};
use mousecap_core::sensor::{simulate_sensor, EventStream, Packet, SensorConfig};
use mousecap_core::signal::{sine, speech_like};
use mousecap_core::Waveform;
use proptest::prelude::*;

fn stream() -> impl Strategy<Value = Vec<Packet>> {
    prop::collection::vec(
        (1u32..2000, -20i32..=20, -20i32..=20).prop_map(|(dt, dx, dy)| Packet::new(dt, dx, dy)),
        1..300,
    )
}

fn cfg() -> SensorConfig {
    SensorConfig::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn output_spans_the_stream(packets in stream(), rate in prop::sample::select(vec![8000u32, 16_000, 44_100])) {
        let ev = EventStream::new(packets, cfg()).unwrap();
        let out = events_to_signal(&ev, rate).unwrap();
        let t_last = ev.total_time_us() as f64 * 1e-6;
        let period = 1.0 / rate as f64;
        let dur = out.x.len() as f64 * period;
        prop_assert!(dur >= t_last - period && dur <= t_last + period);
        prop_assert_eq!(out.x.len(), out.y.len());
        prop_assert!(out.x.samples().iter().sum::<f64>().abs() < 1e-6 * out.x.len() as f64);
    }

    #[test]
    fn splitting_an_interval_with_a_zero_packet_is_invisible(
        packets in stream(),
        pick in any::<prop::sample::Index>(),
        frac in 0.01f64..0.99,
    ) {
        let i = pick.index(packets.len());
        let p = packets[i];
        prop_assume!(p.dt_us >= 2);
        let head = ((p.dt_us as f64 * frac) as u32).clamp(1, p.dt_us - 1);
        let mut split = packets.clone();
        split[i] = Packet::new(p.dt_us - head, p.dx, p.dy);
        split.insert(i, Packet::new(head, 0, 0));
        let a = events_to_signal(&EventStream::new(packets, cfg()).unwrap(), 16_000).unwrap();
        let b = events_to_signal(&EventStream::new(split, cfg()).unwrap(), 16_000).unwrap();
        let diff: Vec<f64> = a.x.samples().iter().zip(b.x.samples()).map(|(p, q)| p - q).collect();
        prop_assert!(rms(&diff) <= 1e-6);
    }

    #[test]
    fn unity_gain_wiener_is_identity(x in prop::collection::vec(-1.0f64..1.0, 1..4000)) {
        let p = StftParams::default();
        let w = Waveform::new(x, 16_000).unwrap();
        let zero = PsdProfile::new(vec![0.0; 257], 512, 16_000).unwrap();
        let out = wiener_filter(&w, &zero, &PsdProfile::bundled_speech(), &p).unwrap();
        prop_assert_eq!(out.len(), w.len());
        let diff: Vec<f64> = w.samples().iter().zip(out.samples()).map(|(a, b)| a - b).collect();
        prop_assert!(rms(&diff) <= 1e-6);
    }

    #[test]
    fn wiener_never_amplifies(seed in any::<u64>(), level in 1e-4f64..1e-1, tone in 100.0f64..7000.0) {
        let p = StftParams::default();
        let noise_sig = speech_like(1.0, 16_000, seed).unwrap();
        let x: Vec<f64> = noise_sig
            .samples()
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.3 * (2.0 * std::f64::consts::PI * tone * i as f64 / 16_000.0).sin())
            .collect();
        let w = Waveform::new(x, 16_000).unwrap();
        let noise = PsdProfile::new(vec![level / 16_000.0; 257], 512, 16_000).unwrap();
        let prior = PsdProfile::bundled_speech();
        let gains = wiener_gains(&w, &noise, &prior, &p).unwrap();
        prop_assert!(gains.iter().all(|g| (0.05..=1.0).contains(g)));
        // Synthesis is the adjoint of a tight frame, so shrinking every
        // coefficient can only shrink the signal.
        let out = wiener_filter(&w, &noise, &prior, &p).unwrap();
        let energy = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        prop_assert!(energy(out.samples()) <= energy(w.samples()) + 1e-9);
    }

    #[test]
    fn filterbank_rows_and_columns_are_covered(
        rate in prop::sample::select(vec![8000u32, 16_000, 22_050, 44_100, 48_000]),
        mel_bins in 1usize..=80,
    ) {
        let win = (0.025 * rate as f64).round() as usize;
        let n_fft = win.next_power_of_two();
        let bank = mel_filterbank(mel_bins, n_fft, rate as f64);
        prop_assert!(bank.iter().all(|row| row.iter().sum::<f64>() > 0.0));
        for k in 1..n_fft / 2 {
            prop_assert!(bank.iter().any(|row| row[k] > 0.0), "bin {}", k);
        }
    }
}

#[test]
fn sensor_tone_keeps_its_frequency() {
    let rate = 48_000;
    let disp: Vec<f64> = (0..rate)
        .map(|i| 0.001 * (2.0 * std::f64::consts::PI * 500.0 * i as f64 / rate as f64).sin())
        .collect();
    let cfg = SensorConfig {
        count_saturation: 32_767,
        ..SensorConfig::default()
    };
    let ev = simulate_sensor(&Waveform::new(disp, rate as u32).unwrap(), &cfg, 0.0, 0).unwrap();
    let out = events_to_signal(&ev, 16_000).unwrap();
    let (f, width) = peak_frequency(out.x.samples(), 16_000.0);
    assert!((f - 500.0).abs() <= width, "{f}");
}

#[test]
fn spectrogram_roundtrip_is_self_consistent() {
    let w = speech_like(2.0, 16_000, 21).unwrap();
    let s = log_mel_spectrogram(&[&w], 80, 25.0, 10.0).unwrap();
    let back = invert_spectrogram(&s, 60, 1).unwrap();
    let s2 = log_mel_spectrogram(&[&back], 80, 25.0, 10.0).unwrap();
    assert_eq!(s.n_frames(), s2.n_frames());
    let (mut total, mut count) = (0.0, 0usize);
    for (a, b) in s.channel(0).iter().zip(s2.channel(0)) {
        for (x, y) in a.iter().zip(b) {
            total += (x - y).abs();
            count += 1;
        }
    }
    let mae = total / count as f64;
    assert!(mae <= 1.0, "{mae}");
}

#[test]
fn noise_estimate_feeds_wiener() {
    let p = StftParams::default();
    let noise = Waveform::new(speech_like(1.0, 16_000, 2).unwrap().samples().to_vec(), 16_000).unwrap();
    let prof = estimate_noise_psd(&noise, &p).unwrap();
    let tone = sine(300.0, 0.5, 1.0, 16_000).unwrap();
    let out = wiener_filter(&tone, &prof, &PsdProfile::bundled_speech(), &p).unwrap();
    assert_eq!(out.len(), tone.len());
    assert!(rms(out.samples()) <= rms(tone.samples()) + 1e-12);
}
