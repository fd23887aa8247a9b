use std::fs;

use mousecap_core::signal::{read_wav, sine, write_wav};
use mousecap_core::Waveform;
use proptest::prelude::*;

#[test]
fn wav_roundtrip_within_one_lsb() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tone.wav");
    let w = sine(440.0, 0.9, 1.0, 16_000).unwrap();
    write_wav(&path, &w).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back.rate(), 16_000);
    assert_eq!(back.len(), w.len());
    let worst = w
        .samples()
        .iter()
        .zip(back.samples())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 2f64.powi(-15), "{worst}");
}

#[test]
fn rewriting_a_read_file_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.wav");
    let second = dir.path().join("b.wav");
    write_wav(&first, &sine(1234.0, 0.5, 0.25, 22_050).unwrap()).unwrap();
    write_wav(&second, &read_wav(&first).unwrap()).unwrap();
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arbitrary_samples_roundtrip(
        samples in prop::collection::vec(-1.0f64..=1.0, 0..2000),
        rate in prop::sample::select(vec![8000u32, 16_000, 44_100, 48_000]),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let w = Waveform::new(samples, rate).unwrap();
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        prop_assert_eq!(back.rate(), rate);
        prop_assert_eq!(back.len(), w.len());
        for (a, b) in w.samples().iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 2f64.powi(-15));
        }
    }
}
