//! `spd`: reproducible experiments for the 2D-material single-photon
//! detector toolkit. Every command reads one TOML config (or the built-in
//! defaults), applies command-line overrides, and writes plain CSV/JSON.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use spd_core::analysis::{
    count_rate, detect_events, edge_times, eqe_from_frequency_sweep, estimate_eqe_with, occupation_histogram,
    CountingResult, EdgeOptions, Peak, WindowedRate,
};
use spd_core::config::ExperimentConfig;
use spd_core::detsim::{simulate, synthesize_trace, EventRecord, Origin, TimeTrace};
use spd_core::materials::PolarizationState;
use spd_core::source::{calibrate_flux, PowerReading};
use spd_core::tmm::{absorption_map, optimize_thicknesses, stack_response, thickness_grid};

#[derive(Parser)]
#[command(name = "spd", version, about = "Single-photon detector experiments")]
struct Cli {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Thin-film absorption of the configured stack.
    Tmm {
        #[arg(value_enum)]
        mode: TmmMode,
    },
    /// Source utilities.
    Source {
        #[command(subcommand)]
        action: SourceAction,
    },
    /// Monte Carlo of the detection cycle.
    Simulate(SimulateArgs),
    /// Analysis of simulated or recorded runs.
    Analyze {
        #[command(subcommand)]
        action: AnalyzeAction,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TmmMode {
    Point,
    Map,
    Optimize,
}

#[derive(Subcommand)]
enum SourceAction {
    /// Device-plane photon number from a tapped power reading.
    Calibrate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Shutter {
    Open,
    Closed,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "open")]
    shutter: Shutter,
    /// Virtual measurement time, seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long = "rep-rate")]
    rep_rate: Option<f64>,
    /// Mean photons per pulse entering the optical chain.
    #[arg(long = "n-bar")]
    n_bar: Option<f64>,
}

#[derive(Subcommand)]
enum AnalyzeAction {
    /// Event recovery, occupation histogram and edge times of a trace.
    Trace {
        /// Run directory holding trace.bin and trace.json.
        run: PathBuf,
    },
    /// Dark-subtracted efficiency from paired shutter-open/closed runs.
    Counts {
        /// Shutter-open run directories.
        #[arg(long, required = true, num_args = 1..)]
        light: Vec<PathBuf>,
        /// Shutter-closed run directories, paired in order with --light.
        #[arg(long, required = true, num_args = 1..)]
        dark: Vec<PathBuf>,
    },
    /// Linear fit of counts against repetition rate.
    Sweep {
        /// Run directories, or one directory containing them.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (mut cfg, base) = match &cli.config {
        Some(path) => (ExperimentConfig::load(path)?, path.parent().map(Path::to_path_buf)),
        None => (ExperimentConfig::default(), None),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.run.out = out.clone();
    }
    if let Command::Simulate(args) = &cli.command {
        if let Some(d) = args.duration {
            cfg.run.duration_s = d;
        }
        if let Some(f) = args.rep_rate {
            cfg.source.repetition_rate_hz = f;
        }
        if let Some(n) = args.n_bar {
            cfg.source.mean_photons = n;
        }
        if args.shutter == Shutter::Closed {
            cfg.source.mean_photons = 0.0;
        }
    }
    cfg.validate().context("invalid configuration")?;
    let out = cfg.run.out.clone();
    fs::create_dir_all(&out).with_context(|| format!("cannot create output directory {}", out.display()))?;

    match cli.command {
        Command::Tmm { mode } => cmd_tmm(&cfg, base.as_deref(), mode, &out),
        Command::Source {
            action: SourceAction::Calibrate,
        } => cmd_calibrate(&cfg, &out),
        Command::Simulate(args) => cmd_simulate(&cfg, args.shutter, &out),
        Command::Analyze { action } => match action {
            AnalyzeAction::Trace { run } => cmd_analyze_trace(&cfg, &run, &out),
            AnalyzeAction::Counts { light, dark } => cmd_analyze_counts(&cfg, &light, &dark, &out),
            AnalyzeAction::Sweep { runs } => cmd_analyze_sweep(&runs, &out),
        },
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct PointReport {
    wavelength_nm: f64,
    axis: PolarizationState,
    reflectance: f64,
    transmittance: f64,
    absorptance: BTreeMap<String, f64>,
    total_absorptance: f64,
    energy_sum: f64,
    absorber: String,
    absorber_absorptance: f64,
}

#[derive(Serialize)]
struct OptimumReport {
    wavelength_nm: f64,
    axis: PolarizationState,
    top_layer: String,
    bottom_layer: String,
    absorber: String,
    top_nm: f64,
    bottom_nm: f64,
    absorptance: f64,
    coarse_absorptance: f64,
}

fn cmd_tmm(cfg: &ExperimentConfig, base: Option<&Path>, mode: TmmMode, out: &Path) -> Result<()> {
    let s = &cfg.stack;
    let template = s.template(base)?;
    match mode {
        TmmMode::Point => {
            let r = stack_response(&template.stack, s.wavelength_nm, s.axis)?;
            let absorptance = template
                .stack
                .layers
                .iter()
                .zip(&r.absorptance)
                .map(|(l, a)| (l.name.clone(), *a))
                .collect();
            let report = PointReport {
                wavelength_nm: s.wavelength_nm,
                axis: s.axis,
                reflectance: r.reflectance,
                transmittance: r.transmittance,
                absorptance,
                total_absorptance: r.total_absorptance(),
                energy_sum: r.energy_sum(),
                absorber: s.absorber.clone(),
                absorber_absorptance: r.absorptance[template.absorber],
            };
            write_json(&out.join("tmm_point.json"), &report)
        }
        TmmMode::Map => {
            let step = s.optimize.grid_step_nm;
            let top = thickness_grid(s.bounds.top_nm.0, s.bounds.top_nm.1, step)?;
            let bottom = thickness_grid(s.bounds.bottom_nm.0, s.bounds.bottom_nm.1, step)?;
            let map = absorption_map(&template, &top, &bottom, s.wavelength_nm, s.axis)?;
            write_text(&out.join("tmm_map.csv"), &map.to_csv())
        }
        TmmMode::Optimize => {
            let opt = optimize_thicknesses(&template, s.bounds, s.wavelength_nm, s.axis, s.optimize)?;
            let report = OptimumReport {
                wavelength_nm: s.wavelength_nm,
                axis: s.axis,
                top_layer: s.top_layer.clone(),
                bottom_layer: s.bottom_layer.clone(),
                absorber: s.absorber.clone(),
                top_nm: opt.top_nm,
                bottom_nm: opt.bottom_nm,
                absorptance: opt.absorptance,
                coarse_absorptance: opt.coarse_absorptance,
            };
            write_json(&out.join("tmm_optimum.json"), &report)
        }
    }
}

fn cmd_calibrate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let src = &cfg.source;
    let Some(c) = src.calibration else {
        bail!("source.calibration: section required for `source calibrate`");
    };
    let reading = PowerReading {
        mean_power_w: c.tap_power_w,
        relative_uncertainty: c.relative_uncertainty,
        polarization: src.polarization,
    };
    let cal = calibrate_flux(
        &reading,
        c.tap_fraction,
        &src.chain,
        src.wavelength_nm,
        src.repetition_rate_hz,
    )?;
    write_json(&out.join("calibration.json"), &cal)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct EventCounts {
    captures: usize,
    photon: usize,
    dark: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct TraceInfo {
    samples: usize,
    sample_rate_hz: f64,
    duration_s: f64,
}

/// Everything needed to reproduce and interpret one simulated run.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    seed: u64,
    config_sha256: String,
    shutter: Shutter,
    duration_s: f64,
    repetition_rate_hz: f64,
    /// Mean photons per pulse at the detector, after the optical chain.
    device_mean_photons: f64,
    efficiency: f64,
    expected_dark_events: f64,
    counts: EventCounts,
    trace: Option<TraceInfo>,
    config: ExperimentConfig,
}

fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let text = cfg.to_toml()?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn cmd_simulate(cfg: &ExperimentConfig, shutter: Shutter, out: &Path) -> Result<()> {
    let seed = cfg.run.seed;
    let duration = cfg.run.duration_s;
    let train = cfg.source.device_train();
    let record = simulate(&cfg.detector, &train, duration, seed)?;

    let events_path = out.join("events.csv");
    let mut csv = Vec::new();
    record.write_csv(&mut csv)?;
    write_text(&events_path, std::str::from_utf8(&csv)?)?;

    let trace_duration = cfg.run.trace_duration_s.min(duration);
    let trace = if trace_duration > 0.0 {
        let trace = synthesize_trace(&record, &cfg.detector, trace_duration, cfg.run.sample_rate_hz, seed)?;
        trace.write(out.join("trace.bin"), out.join("trace.json"))?;
        println!("{}", out.join("trace.bin").display());
        println!("{}", out.join("trace.json").display());
        Some(TraceInfo {
            samples: trace.len(),
            sample_rate_hz: trace.sample_rate_hz,
            duration_s: trace.duration_s(),
        })
    } else {
        None
    };

    write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    let manifest = Manifest {
        tool: "spd".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config_sha256: config_hash(cfg)?,
        shutter,
        duration_s: duration,
        repetition_rate_hz: train.repetition_rate_hz,
        device_mean_photons: train.mean_photons,
        efficiency: cfg.detector.efficiency(train.polarization),
        expected_dark_events: cfg.detector.dark_rate_hz * duration,
        counts: EventCounts {
            captures: record.len(),
            photon: record.count(Origin::Photon),
            dark: record.count(Origin::Dark),
        },
        trace,
        config: cfg.clone(),
    };
    write_json(&out.join("manifest.json"), &manifest)
}

fn read_manifest(run: &Path) -> Result<Manifest> {
    let path = run.join("manifest.json");
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed {}", path.display()))
}

fn read_events(run: &Path) -> Result<EventRecord> {
    let path = run.join("events.csv");
    let file = fs::File::open(&path).with_context(|| format!("cannot read {}", path.display()))?;
    EventRecord::read_csv(BufReader::new(file)).with_context(|| format!("malformed {}", path.display()))
}

#[derive(Serialize)]
struct EdgeSummary {
    measured: usize,
    fall_us_median: Option<f64>,
    rise_us_median: Option<f64>,
}

#[derive(Serialize)]
struct TraceReport {
    duration_s: f64,
    events: usize,
    count_rate: WindowedRate,
    peaks: Vec<Peak>,
    peak_spacings_v: Vec<f64>,
    edges: EdgeSummary,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn cmd_analyze_trace(cfg: &ExperimentConfig, run: &Path, out: &Path) -> Result<()> {
    let trace = TimeTrace::read(run.join("trace.bin"), run.join("trace.json"))
        .with_context(|| format!("cannot read trace in {}", run.display()))?;
    let a = &cfg.analysis;
    let events = detect_events(&trace, &a.detect)?;
    let duration = trace.duration_s();
    let window = (duration >= a.count_window_s).then_some(a.count_window_s);
    let rate = count_rate(&events, duration, window)?;
    let hist = occupation_histogram(&trace, a.histogram_bin_v)?;

    let (mut falls, mut rises) = (Vec::new(), Vec::new());
    for (c, r) in events.captures.iter().zip(&events.releases) {
        if let Some(r) = r {
            if let Ok(e) = edge_times(&trace, *c, *r, &EdgeOptions::default()) {
                falls.push(e.fall_us);
                rises.push(e.rise_us);
            }
        }
    }

    let mut csv = Vec::new();
    events.write_csv(&mut csv)?;
    write_text(&out.join("detected_events.csv"), std::str::from_utf8(&csv)?)?;
    write_text(&out.join("histogram.csv"), &hist.to_csv())?;
    let report = TraceReport {
        duration_s: duration,
        events: events.len(),
        count_rate: rate,
        peak_spacings_v: hist.spacings(),
        peaks: hist.peaks,
        edges: EdgeSummary {
            measured: falls.len(),
            fall_us_median: median(falls),
            rise_us_median: median(rises),
        },
    };
    write_json(&out.join("trace_analysis.json"), &report)
}

fn cmd_analyze_counts(cfg: &ExperimentConfig, light: &[PathBuf], dark: &[PathBuf], out: &Path) -> Result<()> {
    ensure!(
        light.len() == dark.len(),
        "--light and --dark need the same number of runs ({} vs {})",
        light.len(),
        dark.len()
    );
    let mut results: Vec<CountingResult> = Vec::new();
    for (l, d) in light.iter().zip(dark) {
        let (ml, md) = (read_manifest(l)?, read_manifest(d)?);
        ensure!(ml.shutter == Shutter::Open, "{}: not a shutter-open run", l.display());
        ensure!(
            md.shutter == Shutter::Closed,
            "{}: not a shutter-closed run",
            d.display()
        );
        ensure!(
            ml.duration_s == md.duration_s,
            "{} and {} have different durations",
            l.display(),
            d.display()
        );
        let (nl, nd) = (read_events(l)?.len() as u64, read_events(d)?.len() as u64);
        results.push(estimate_eqe_with(
            nl,
            nd,
            ml.device_mean_photons,
            ml.repetition_rate_hz,
            ml.duration_s,
            cfg.analysis.flux_uncertainty,
        )?);
    }
    let mut csv = String::from(CountingResult::CSV_HEADER);
    csv.push('\n');
    for r in &results {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(&out.join("counts.csv"), &csv)?;
    write_json(&out.join("counts.json"), &results)
}

fn sweep_dirs(runs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if runs.len() == 1 && !runs[0].join("manifest.json").exists() {
        let mut dirs: Vec<PathBuf> = fs::read_dir(&runs[0])
            .with_context(|| format!("cannot list {}", runs[0].display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("manifest.json").exists())
            .collect();
        dirs.sort();
        return Ok(dirs);
    }
    Ok(runs.to_vec())
}

#[derive(Serialize)]
struct SweepPoint {
    run: String,
    repetition_rate_hz: f64,
    counts: u64,
}

#[derive(Serialize)]
struct SweepReport {
    mean_photons: f64,
    duration_s: f64,
    points: Vec<SweepPoint>,
    fit: spd_core::analysis::FitResult,
}

fn cmd_analyze_sweep(runs: &[PathBuf], out: &Path) -> Result<()> {
    let dirs = sweep_dirs(runs)?;
    ensure!(!dirs.is_empty(), "no run directories found");
    let mut points = Vec::new();
    let mut common: Option<(f64, f64)> = None;
    for dir in &dirs {
        let m = read_manifest(dir)?;
        let key = (m.device_mean_photons, m.duration_s);
        match common {
            None => common = Some(key),
            Some(c) => ensure!(
                c == key,
                "{}: n̄ and duration must match across the sweep",
                dir.display()
            ),
        }
        points.push(SweepPoint {
            run: dir.display().to_string(),
            repetition_rate_hz: m.repetition_rate_hz,
            counts: read_events(dir)?.len() as u64,
        });
    }
    let (n_bar, duration) = common.expect("at least one run");
    let data: Vec<(f64, u64)> = points.iter().map(|p| (p.repetition_rate_hz, p.counts)).collect();
    let fit = eqe_from_frequency_sweep(&data, n_bar, duration)?;
    write_json(
        &out.join("fit.json"),
        &SweepReport {
            mean_photons: n_bar,
            duration_s: duration,
            points,
            fit,
        },
    )
}
