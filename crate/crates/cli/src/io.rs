use std::fs;
use std::path::{Path, PathBuf};

use mousecap_core::sensor::{EventStream, SensorConfig};
use mousecap_core::signal::write_wav;
use mousecap_core::telemetry::{decode_csv, parse_meta, SessionHeader};
use mousecap_core::Waveform;

const WAV_PEAK: f64 = 0.99;

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes a stage signal as 16-bit WAV, peak-normalised so count-domain
/// signals survive quantisation. Written beside the target, then renamed.
pub fn write_wav_atomic(path: &Path, w: &Waveform) -> anyhow::Result<()> {
    let peak = w.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scaled = if peak > 0.0 { w.map(|v| v * WAV_PEAK / peak)? } else { w.clone() };
    let tmp = tmp_path(path);
    write_wav(&tmp, &scaled)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn meta_path(events: &Path) -> PathBuf {
    events.with_extension("meta")
}

/// Loads an events CSV with the sensor settings from its `.meta` sibling,
/// or the defaults when there is none.
pub fn read_events(path: &Path) -> anyhow::Result<(SessionHeader, EventStream)> {
    let meta = meta_path(path);
    let hdr = if meta.exists() {
        parse_meta(&fs::read_to_string(&meta)?)?
    } else {
        SessionHeader::new(&SensorConfig::default(), Default::default())
    };
    let ev = decode_csv(&fs::read_to_string(path)?, hdr.sensor_config())?;
    Ok((hdr, ev))
}
