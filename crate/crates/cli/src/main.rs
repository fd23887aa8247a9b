mod config;
mod experiment;
mod io;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use mousecap_core::feasibility::{
    bundled_mice, bundled_phonemes, dpi_wavelength_check, nyquist_limit, parse_mouse_db, parse_phoneme_table,
    rank_mice, FeasibilityQuery,
};
use mousecap_core::metrics::{format_metric, MetricsReport};
use mousecap_core::pipeline::{capture, Scenario};
use mousecap_core::reconstruct::{estimate_noise_psd, events_to_signal, wiener_filter, PsdProfile, StftParams};
use mousecap_core::sensor::{SensorConfig, SurfaceModel};
use mousecap_core::signal::{generate_tone_sweep, read_wav};
use mousecap_core::telemetry::{
    collector_serve, collector_upload, encode_csv, write_atomic, SessionHeader, SESSION_ID_LEN,
};
use mousecap_core::SweepSpec;

use crate::config::ExperimentConfig;
use crate::io::{meta_path, read_events, write_wav_atomic};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "mousecap", version, about = "Simulate, reconstruct and score audio recovered from mouse motion reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Axis {
    X,
    Y,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Capture audio through a simulated surface and mouse sensor into an
    /// events CSV (with a `.meta` sibling).
    Simulate {
        /// Input WAV; omit and pass --sweep for the built-in test sweep.
        #[arg(long, required_unless_present = "sweep", conflicts_with = "sweep")]
        input: Option<PathBuf>,
        #[arg(long)]
        sweep: bool,
        #[arg(long, default_value = "plastic")]
        surface: String,
        #[arg(long, default_value_t = 20_000)]
        dpi: u32,
        #[arg(long, default_value_t = 8_000)]
        poll_rate: u32,
        #[arg(long, default_value_t = 127)]
        count_saturation: u16,
        #[arg(long, default_value_t = 1.0)]
        poll_jitter_us: f64,
        /// Timing jitter added to the recorded log, µs.
        #[arg(long, default_value_t = 0.0)]
        jitter_us: f64,
        /// Count noise added to the recorded log.
        #[arg(long, default_value_t = 0.0)]
        noise_counts: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Turn an events CSV back into audio, optionally Wiener-filtered.
    Reconstruct {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 16_000)]
        target_rate: u32,
        #[arg(long, value_enum, default_value = "x")]
        axis: Axis,
        /// Noise PSD file; enables Wiener filtering.
        #[arg(long)]
        noise_psd: Option<PathBuf>,
        /// Speech prior PSD file, or "speech" for the bundled one.
        #[arg(long, default_value = "speech", requires = "noise_psd")]
        prior: String,
    },
    /// Measure the average power spectrum of a WAV (e.g. an idle capture).
    EstimateNoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 512)]
        fft_size: usize,
        #[arg(long, default_value_t = 128)]
        hop: usize,
    },
    /// SI-SNR and STOI of an estimate against a reference.
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        est: PathBuf,
    },
    /// Can a sensor resolve surface vibration at this frequency?
    Feasibility {
        /// Acoustic frequency, Hz.
        #[arg(long = "f")]
        freq: f64,
        #[arg(long)]
        dpi: f64,
        /// Surface wave speed, m/s.
        #[arg(long)]
        wave_speed: f64,
        #[arg(long, default_value_t = 8000.0)]
        poll_rate: f64,
    },
    /// Classify mice by exposure and phoneme coverage.
    RankMice {
        /// Mouse database CSV, or "default".
        #[arg(long, default_value = "default")]
        db: String,
        /// Phoneme table, or "default".
        #[arg(long, default_value = "default")]
        phonemes: String,
    },
    /// Receive uploaded sessions until interrupted.
    Collect {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Send an events CSV to a collector.
    Upload {
        #[arg(long)]
        addr: String,
        #[arg(long)]
        events: PathBuf,
    },
    /// Run an experiment grid described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => return run_experiment(&config),
        cmd => dispatch(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn run_experiment(path: &Path) -> ExitCode {
    let cfg = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: config {}: {e}", path.display());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match experiment::run(&cfg) {
        Ok(s) => {
            println!(
                "{} cells, {} rows, {} failed -> {}",
                s.cells,
                s.rows,
                s.failures.len(),
                cfg.output.join("metrics.csv").display()
            );
            if s.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                for (cell, err) in &s.failures {
                    eprintln!("cell {cell} failed: {err}");
                }
                ExitCode::from(EXIT_FAILURE)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn read_text(path: &str) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {path}"))
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Simulate {
            input,
            sweep: _,
            surface,
            dpi,
            poll_rate,
            count_saturation,
            poll_jitter_us,
            jitter_us,
            noise_counts,
            seed,
            output,
        } => {
            let audio = match input {
                Some(p) => read_wav(&p).with_context(|| format!("reading {}", p.display()))?,
                None => generate_tone_sweep(&SweepSpec::default(), SweepSpec::DEFAULT_RATE)?,
            };
            let sensor = SensorConfig {
                dpi,
                poll_rate_hz: poll_rate,
                count_saturation,
                ..SensorConfig::default()
            };
            let sc = Scenario {
                surface: SurfaceModel::preset(&surface)?,
                sensor,
                poll_jitter_us,
                jitter_us,
                noise_counts,
                ..Scenario::default()
            };
            let ev = capture(&audio, &sc, seed)?;
            write_atomic(&output, encode_csv(&ev).as_bytes())?;
            let hdr = SessionHeader::new(&sensor, [0; SESSION_ID_LEN]);
            write_atomic(&meta_path(&output), hdr.to_meta().as_bytes())?;
            println!("{} packets -> {}", ev.len(), output.display());
        }
        Command::Reconstruct {
            events,
            output,
            target_rate,
            axis,
            noise_psd,
            prior,
        } => {
            let (_, ev) = read_events(&events)?;
            let sig = events_to_signal(&ev, target_rate)?;
            let mut w = match axis {
                Axis::X => sig.x,
                Axis::Y => sig.y,
            };
            if let Some(noise) = noise_psd {
                let noise = PsdProfile::read(&noise)?;
                let prior = if prior == "speech" {
                    PsdProfile::bundled_speech()
                } else {
                    PsdProfile::read(&prior)?
                };
                w = wiener_filter(&w, &noise, &prior, &StftParams::default())?;
            }
            write_wav_atomic(&output, &w)?;
            println!("{} samples at {} Hz -> {}", w.len(), w.rate(), output.display());
        }
        Command::EstimateNoise {
            input,
            output,
            fft_size,
            hop,
        } => {
            let params = StftParams { fft_size, hop };
            let psd = estimate_noise_psd(&read_wav(&input)?, &params)?;
            let tmp = output.with_extension("tmp");
            psd.write(&tmp)?;
            fs::rename(&tmp, &output)?;
        }
        Command::Score { reference, est } => {
            let r = read_wav(&reference).with_context(|| format!("reading {}", reference.display()))?;
            let e = read_wav(&est).with_context(|| format!("reading {}", est.display()))?;
            let mut report = MetricsReport::new("");
            let s = report.score("score", &r, &e)?;
            println!("si_snr_db={}", format_metric(s.si_snr_db));
            println!("stoi={}", s.stoi.map_or_else(|| "n/a".into(), format_metric));
        }
        Command::Feasibility {
            freq,
            dpi,
            wave_speed,
            poll_rate,
        } => {
            let c = dpi_wavelength_check(&FeasibilityQuery {
                freq_hz: freq,
                dpi,
                poll_rate_hz: poll_rate,
                wave_speed_m_s: wave_speed,
            })?;
            println!("{}", c.verdict);
            println!("nyquist_hz={}", nyquist_limit(poll_rate)?);
            println!("wavelength_mm={}", c.wavelength_mm);
            println!("min_step_mm={}", c.min_step_mm);
            println!("margin={}", c.margin);
        }
        Command::RankMice { db, phonemes } => {
            let mice = if db == "default" {
                bundled_mice()
            } else {
                parse_mouse_db(&read_text(&db)?)?
            };
            let table = if phonemes == "default" {
                bundled_phonemes()
            } else {
                parse_phoneme_table(&read_text(&phonemes)?)?
            };
            println!("class,vendor_model,sensor,dpi,poll_rate_hz,coverage_pct");
            for r in rank_mice(&mice, &table)? {
                println!(
                    "{},{},{},{},{},{:.2}",
                    r.class, r.record.vendor_model, r.record.sensor, r.record.dpi, r.record.poll_rate_hz, r.coverage_pct
                );
            }
        }
        Command::Collect { bind, output } => {
            fs::create_dir_all(&output)?;
            let server = collector_serve(bind.as_str(), &output)?;
            println!("listening on {}", server.local_addr());
            server.wait();
        }
        Command::Upload { addr, events } => {
            let (hdr, ev) = read_events(&events)?;
            collector_upload(addr.as_str(), &hdr, &ev)?;
            println!("uploaded {} packets as session {}", ev.len(), hdr.session_hex());
        }
        Command::Run { .. } => bail!("run is handled separately"),
    }
    Ok(())
}
