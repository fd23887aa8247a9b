//! Resolution and sampling bounds for recovering sound through a mouse
//! sensor, phoneme coverage by polling rate, and a vulnerability ranking of
//! commercial mice.
//!
//! Units: DPI is counts per inch and one inch is 25.4 mm. The surface wave
//! speed is given in m/s and converted to mm/s, so wavelengths are in mm.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const MM_PER_INCH: f64 = 25.4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityQuery {
    /// Acoustic frequency, Hz.
    pub freq_hz: f64,
    /// Sensor resolution, counts per inch.
    pub dpi: f64,
    /// Polling rate, Hz.
    pub poll_rate_hz: f64,
    /// Surface wave speed, m/s.
    pub wave_speed_m_s: f64,
}

impl FeasibilityQuery {
    fn validate(&self) -> Result<()> {
        let all = [self.freq_hz, self.dpi, self.poll_rate_hz, self.wave_speed_m_s];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::param("feasibility query fields must be positive"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavelengthCheck {
    pub verdict: Verdict,
    /// Smallest detectable movement over half the surface wavelength; the
    /// check passes iff this is strictly below one.
    pub margin: f64,
    pub wavelength_mm: f64,
    pub min_step_mm: f64,
}

/// Passes iff the smallest detectable movement `25.4 / D` mm is strictly
/// less than half the surface wavelength `λ = ν / f`.
pub fn dpi_wavelength_check(q: &FeasibilityQuery) -> Result<WavelengthCheck> {
    q.validate()?;
    let wavelength_mm = q.wave_speed_m_s * 1000.0 / q.freq_hz;
    let min_step_mm = MM_PER_INCH / q.dpi;
    let half = wavelength_mm / 2.0;
    Ok(WavelengthCheck {
        verdict: if min_step_mm < half {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        margin: min_step_mm / half,
        wavelength_mm,
        min_step_mm,
    })
}

/// Highest recoverable acoustic frequency for a polling rate.
pub fn nyquist_limit(poll_rate_hz: f64) -> Result<f64> {
    if !(poll_rate_hz.is_finite() && poll_rate_hz > 0.0) {
        return Err(Error::param("polling rate must be positive"));
    }
    Ok(poll_rate_hz / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeEntry {
    pub phoneme: String,
    pub char_freq_hz: f64,
    pub weight: f64,
}

const BUNDLED_PHONEMES: &str = include_str!("../data/phonemes.csv");
const BUNDLED_MICE: &str = include_str!("../data/mice.csv");

/// Parses `phoneme,freq_hz,weight` rows. A header row and `#` comments are
/// skipped.
pub fn parse_phoneme_table(text: &str) -> Result<Vec<PhonemeEntry>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let line_no = idx + 1;
        if line.is_empty() || line.starts_with('#') || line.starts_with("phoneme,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad {what} '{s}'"),
            })
        };
        let entry = PhonemeEntry {
            phoneme: fields[0].to_string(),
            char_freq_hz: num(fields[1], "frequency")?,
            weight: num(fields[2], "weight")?,
        };
        if !(entry.char_freq_hz > 0.0) || !(entry.weight >= 0.0) {
            return Err(Error::Parse {
                line: line_no,
                msg: "frequency must be positive and weight non-negative".into(),
            });
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn bundled_phonemes() -> Vec<PhonemeEntry> {
    parse_phoneme_table(BUNDLED_PHONEMES).expect("bundled phoneme table is valid")
}

/// Percentage of (weighted) phonemes whose characteristic frequency is at or
/// below the Nyquist limit of `poll_rate_hz`. Weights are normalized here.
pub fn phoneme_coverage(poll_rate_hz: f64, table: &[PhonemeEntry]) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::param("phoneme table is empty"));
    }
    let limit = nyquist_limit(poll_rate_hz)?;
    let total: f64 = table.iter().map(|e| e.weight).sum();
    if !(total > 0.0) {
        return Err(Error::param("phoneme weights sum to zero"));
    }
    let covered: f64 = table
        .iter()
        .filter(|e| e.char_freq_hz <= limit)
        .map(|e| e.weight)
        .sum();
    Ok(100.0 * covered / total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MouseRecord {
    pub vendor_model: String,
    pub sensor: String,
    pub dpi: u32,
    pub ips: u32,
    pub poll_rate_hz: u32,
    pub price_usd: f64,
}

pub const MOUSE_DB_HEADER: &str = "vendor_model,sensor,dpi,ips,poll_rate_hz,price_usd";

pub fn parse_mouse_db(text: &str) -> Result<Vec<MouseRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == MOUSE_DB_HEADER => {}
        Some((i, _)) => {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected header '{MOUSE_DB_HEADER}'"),
            })
        }
        None => return Ok(Vec::new()),
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 6 fields, found {}", f.len()),
            });
        }
        let int = |s: &str, what: &str| -> Result<u32> {
            match s.parse::<u32>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(Error::Parse {
                    line: line_no,
                    msg: format!("{what} must be a positive integer, got '{s}'"),
                }),
            }
        };
        out.push(MouseRecord {
            vendor_model: f[0].to_string(),
            sensor: f[1].to_string(),
            dpi: int(f[2], "dpi")?,
            ips: int(f[3], "ips")?,
            poll_rate_hz: int(f[4], "poll_rate_hz")?,
            price_usd: f[5].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad price '{}'", f[5]),
            })?,
        });
    }
    Ok(out)
}

pub fn bundled_mice() -> Vec<MouseRecord> {
    parse_mouse_db(BUNDLED_MICE).expect("bundled mouse database is valid")
}

pub const RED_DPI: u32 = 20_000;
pub const RED_POLL_HZ: u32 = 4_000;

/// Exposure class, most severe first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Exposure {
    /// High DPI and high polling rate.
    Red,
    /// High polling rate only.
    Orange,
    /// High DPI only.
    Yellow,
    None,
}

impl Exposure {
    pub fn classify(dpi: u32, poll_rate_hz: u32) -> Self {
        match (dpi >= RED_DPI, poll_rate_hz >= RED_POLL_HZ) {
            (true, true) => Exposure::Red,
            (false, true) => Exposure::Orange,
            (true, false) => Exposure::Yellow,
            (false, false) => Exposure::None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Exposure::Red => "red",
            Exposure::Orange => "orange",
            Exposure::Yellow => "yellow",
            Exposure::None => "none",
        }
    }
}

impl fmt::Display for Exposure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Exposure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "red" => Ok(Exposure::Red),
            "orange" => Ok(Exposure::Orange),
            "yellow" => Ok(Exposure::Yellow),
            "none" => Ok(Exposure::None),
            other => Err(Error::param(format!("unknown exposure class '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedMouse {
    pub record: MouseRecord,
    pub class: Exposure,
    /// Upper bound on recoverable phonemes, percent.
    pub coverage_pct: f64,
}

pub fn rank_mice(db: &[MouseRecord], phonemes: &[PhonemeEntry]) -> Result<Vec<RankedMouse>> {
    let mut out = db
        .iter()
        .map(|r| {
            Ok(RankedMouse {
                class: Exposure::classify(r.dpi, r.poll_rate_hz),
                coverage_pct: phoneme_coverage(r.poll_rate_hz as f64, phonemes)?,
                record: r.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| match a.class.cmp(&b.class) {
        Ordering::Equal => a.record.vendor_model.cmp(&b.record.vendor_model),
        o => o,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(f: f64, d: f64, v: f64) -> FeasibilityQuery {
        FeasibilityQuery {
            freq_hz: f,
            dpi: d,
            poll_rate_hz: 8000.0,
            wave_speed_m_s: v,
        }
    }

    #[test]
    fn eight_khz_at_twenty_thousand_dpi_passes() {
        let c = dpi_wavelength_check(&q(8000.0, 20000.0, 3000.0)).unwrap();
        assert_eq!(c.verdict, Verdict::Pass);
        // (25.4/20000) / (375/2)
        assert!((c.margin - 6.773_333e-6).abs() < 1e-11, "{}", c.margin);
    }

    #[test]
    fn equality_boundary_fails() {
        // D = 50.8·f/ν with ν in mm/s: 50.8·8000/3_000_000 = 0.135466..., so
        // pick ν to make D exact: f = 1000, ν = 0.508 m/s → D = 100.
        let c = dpi_wavelength_check(&q(1000.0, 100.0, 0.508)).unwrap();
        assert_eq!(c.margin, 1.0);
        assert_eq!(c.verdict, Verdict::Fail);
    }

    #[test]
    fn coarse_dpi_fails() {
        let c = dpi_wavelength_check(&q(8000.0, 0.1, 3000.0)).unwrap();
        assert_eq!(c.verdict, Verdict::Fail);
        assert!(c.margin > 1.0);
        assert!((c.min_step_mm - 254.0).abs() < 1e-9);
        assert!((c.wavelength_mm / 2.0 - 187.5).abs() < 1e-9);
    }

    #[test]
    fn nyquist_values() {
        assert_eq!(nyquist_limit(8000.0).unwrap(), 4000.0);
        assert_eq!(nyquist_limit(4000.0).unwrap(), 2000.0);
        assert_eq!(nyquist_limit(1.0).unwrap(), 0.5);
        assert!(nyquist_limit(0.0).is_err());
    }

    #[test]
    fn bundled_table_shape() {
        let t = bundled_phonemes();
        assert_eq!(t.len(), 39);
        assert!(phoneme_coverage(8000.0, &[]).is_err());
        assert_eq!(phoneme_coverage(1e9, &t).unwrap(), 100.0);
    }

    #[test]
    fn classes() {
        assert_eq!(Exposure::classify(20000, 8000), Exposure::Red);
        assert_eq!(Exposure::classify(12000, 8000), Exposure::Orange);
        assert_eq!(Exposure::classify(26000, 1000), Exposure::Yellow);
        assert_eq!(Exposure::classify(800, 125), Exposure::None);
    }

    #[test]
    fn mouse_db_parse_errors() {
        assert!(parse_mouse_db("nope\n").is_err());
        let bad = format!("{MOUSE_DB_HEADER}\nA,B,0,1,1,1\n");
        assert!(matches!(parse_mouse_db(&bad), Err(Error::Parse { line: 2, .. })));
    }
}

