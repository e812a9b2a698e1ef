//! Event-driven Monte Carlo of the detection cycle.
//!
//! Each laser pulse carries a Poisson number of photons. A photon is absorbed
//! in the black-phosphorus layer with the polarization-weighted absorptance
//! and the photo-electron is captured in the island with probability `iqe`.
//! Dark captures arrive as a homogeneous Poisson process. A capture is
//! refused while the island holds `max_occupancy` electrons or while the
//! readout is dead (non-paralyzable, started by every accepted capture).
//! Every trapped electron is released after an exponential dwell.
//!
//! The per-pulse photon draw is done by thinning: capture-eligible photons
//! per pulse are Poisson with mean `n̄ · A · iqe`, so only pulses with at
//! least one such photon are visited, by jumping a geometric number of
//! pulses ahead. Photons of one pulse arrive together and the readout sees
//! them as a single capture.
//!
//! Times inside this module are microseconds unless a name says otherwise.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::source::{CoherentPulseTrain, Polarization};

#[derive(Debug, Error)]
pub enum DetsimError {
    #[error("invalid detector parameter: {0}")]
    InvalidParams(String),
    #[error("duration must be positive, got {0} s")]
    Duration(f64),
    #[error("sample rate {got} Hz cannot resolve edges; need at least {required} Hz")]
    SampleRateTooLow { got: f64, required: f64 },
    #[error("capture times must be sorted (index {0})")]
    Unsorted(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DetsimError>;

/// Independent random streams carved out of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Photon = 0,
    Dark = 1,
    Dwell = 2,
    Noise = 3,
}

/// Deterministic generator for `(seed, trial, purpose)`.
pub fn stream_rng(seed: u64, trial: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial * 4 + stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub absorptance_armchair: f64,
    pub absorptance_zigzag: f64,
    pub iqe: f64,
    pub dark_rate_hz: f64,
    /// 10–90 % fall of the capture edge.
    pub fall_time_us: f64,
    /// 10–90 % rise of the release edge.
    pub rise_time_us: f64,
    /// Mean of the exponential dwell before auto-reset.
    pub hold_time_mean_us: f64,
    pub dead_time_us: f64,
    pub max_occupancy: u32,
    /// Output drop per trapped electron, volts.
    pub step_amplitude_v: f64,
    pub noise_sigma_v: f64,
    pub baseline_v: f64,
}

impl Default for DetectorParams {
    /// Device A: 51.8 % armchair absorptance, 75 % internal efficiency,
    /// 720 Hz dark rate.
    fn default() -> Self {
        Self {
            absorptance_armchair: 0.518,
            absorptance_zigzag: 0.0,
            iqe: 0.75,
            dark_rate_hz: 720.0,
            fall_time_us: 2.3,
            rise_time_us: 2.1,
            hold_time_mean_us: 10.0,
            dead_time_us: 50.0,
            max_occupancy: 4,
            step_amplitude_v: 0.1,
            noise_sigma_v: 0.01,
            baseline_v: 0.0,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("absorptance_armchair", self.absorptance_armchair),
            ("absorptance_zigzag", self.absorptance_zigzag),
            ("iqe", self.iqe),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(DetsimError::InvalidParams(format!("{name} = {v} outside [0, 1]")));
            }
        }
        let non_negative = [
            ("dark_rate_hz", self.dark_rate_hz),
            ("fall_time_us", self.fall_time_us),
            ("rise_time_us", self.rise_time_us),
            ("hold_time_mean_us", self.hold_time_mean_us),
            ("dead_time_us", self.dead_time_us),
            ("noise_sigma_v", self.noise_sigma_v),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DetsimError::InvalidParams(format!("{name} = {v} must be >= 0")));
            }
        }
        if self.max_occupancy < 1 {
            return Err(DetsimError::InvalidParams("max_occupancy must be >= 1".into()));
        }
        if !self.step_amplitude_v.is_finite() || !self.baseline_v.is_finite() {
            return Err(DetsimError::InvalidParams("non-finite voltage".into()));
        }
        Ok(())
    }

    /// Absorptance seen by a beam of the given polarization.
    pub fn absorptance(&self, polarization: Polarization) -> f64 {
        let f = polarization.armchair_fraction();
        f * self.absorptance_armchair + (1.0 - f) * self.absorptance_zigzag
    }

    /// Probability that one incident photon yields a capture, ignoring
    /// occupancy and dead-time losses.
    pub fn efficiency(&self, polarization: Polarization) -> f64 {
        self.absorptance(polarization) * self.iqe
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Photon,
    Dark,
    /// Recovered from a trace, cause not known.
    Unknown,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Photon => "photon",
            Origin::Dark => "dark",
            Origin::Unknown => "unknown",
        })
    }
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "photon" => Ok(Origin::Photon),
            "dark" => Ok(Origin::Dark),
            "unknown" => Ok(Origin::Unknown),
            other => Err(format!("unknown origin `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionKind {
    Capture,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub t_us: f64,
    pub kind: TransitionKind,
    pub origin: Origin,
}

/// Captures in time order. `releases[i]` belongs to `captures[i]` and is
/// `None` when the electron was still trapped at the end of the record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventRecord {
    pub captures: Vec<f64>,
    pub origins: Vec<Origin>,
    pub releases: Vec<Option<f64>>,
}

impl EventRecord {
    pub fn len(&self) -> usize {
        self.captures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captures.is_empty()
    }

    pub fn push(&mut self, capture_us: f64, origin: Origin, release_us: Option<f64>) {
        self.captures.push(capture_us);
        self.origins.push(origin);
        self.releases.push(release_us);
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.origins.iter().filter(|&&o| o == origin).count()
    }

    /// All captures and releases merged in time order; at equal times
    /// releases come first.
    pub fn transitions(&self) -> Vec<Transition> {
        let mut out = Vec::with_capacity(self.captures.len() * 2);
        for i in 0..self.captures.len() {
            out.push(Transition {
                t_us: self.captures[i],
                kind: TransitionKind::Capture,
                origin: self.origins[i],
            });
            if let Some(r) = self.releases[i] {
                out.push(Transition {
                    t_us: r,
                    kind: TransitionKind::Release,
                    origin: self.origins[i],
                });
            }
        }
        out.sort_by(|a, b| {
            a.t_us.total_cmp(&b.t_us).then_with(|| {
                let rank = |k| (k == TransitionKind::Capture) as u8;
                rank(a.kind).cmp(&rank(b.kind))
            })
        });
        out
    }

    /// Island occupancy just after `t_us`.
    pub fn occupancy_at(&self, t_us: f64) -> usize {
        self.captures
            .iter()
            .zip(&self.releases)
            .filter(|(&c, r)| c <= t_us && r.is_none_or(|r| r > t_us))
            .count()
    }

    /// Ledger check: captures sorted, each release after its capture, and
    /// occupancy within `[0, max_occupancy]` at every transition.
    pub fn validate(&self, max_occupancy: u32) -> std::result::Result<(), String> {
        if self.origins.len() != self.captures.len() || self.releases.len() != self.captures.len() {
            return Err("misaligned record".into());
        }
        if let Some(i) = self.captures.windows(2).position(|w| w[1] < w[0]) {
            return Err(format!("capture {} out of order", i + 1));
        }
        for (i, (&c, r)) in self.captures.iter().zip(&self.releases).enumerate() {
            if let Some(r) = r {
                if *r < c {
                    return Err(format!("release of capture {i} precedes it"));
                }
            }
        }
        let mut occ: i64 = 0;
        for t in self.transitions() {
            occ += match t.kind {
                TransitionKind::Capture => 1,
                TransitionKind::Release => -1,
            };
            if occ < 0 || occ > max_occupancy as i64 {
                return Err(format!("occupancy {occ} at t = {} us", t.t_us));
            }
        }
        Ok(())
    }

    /// CSV `timestamp_us,kind,origin`, one row per transition.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "timestamp_us,kind,origin")?;
        for t in self.transitions() {
            let kind = match t.kind {
                TransitionKind::Capture => "capture",
                TransitionKind::Release => "release",
            };
            writeln!(w, "{},{},{}", t.t_us, kind, t.origin)?;
        }
        Ok(())
    }

    /// Reads the CSV export. The format does not carry capture/release
    /// pairing, so each release is matched to the oldest open capture.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut record = EventRecord::default();
        let mut open = std::collections::VecDeque::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() || (idx == 0 && line.starts_with("timestamp")) {
                continue;
            }
            let bad = |msg: String| DetsimError::Parse { line: line_no, msg };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 fields, got {}", fields.len())));
            }
            let t: f64 = fields[0].parse().map_err(|e| bad(format!("timestamp: {e}")))?;
            let origin: Origin = fields[2].parse().map_err(bad)?;
            match fields[1] {
                "capture" => {
                    open.push_back(record.len());
                    record.push(t, origin, None);
                }
                "release" => {
                    let i = open
                        .pop_front()
                        .ok_or_else(|| bad("release without open capture".into()))?;
                    record.releases[i] = Some(t);
                }
                other => return Err(bad(format!("unknown kind `{other}`"))),
            }
        }
        Ok(record)
    }
}

/// Sampled `V_OUT`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrace {
    pub sample_rate_hz: f64,
    pub baseline_v: f64,
    pub samples: Vec<f64>,
}

/// JSON sidecar of the binary trace export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub sample_rate: f64,
    pub baseline: f64,
    pub duration: f64,
}

impl TimeTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn dt_us(&self) -> f64 {
        1e6 / self.sample_rate_hz
    }

    pub fn time_us(&self, index: usize) -> f64 {
        index as f64 * self.dt_us()
    }

    pub fn sidecar(&self) -> TraceSidecar {
        TraceSidecar {
            sample_rate: self.sample_rate_hz,
            baseline: self.baseline_v,
            duration: self.duration_s(),
        }
    }

    /// Writes little-endian f64 samples to `bin` and the JSON sidecar next to
    /// it.
    pub fn write(&self, bin: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.samples.len() * 8);
        for s in &self.samples {
            bytes.extend_from_slice(&s.to_le_bytes());
        }
        std::fs::write(bin, bytes)?;
        std::fs::write(sidecar, serde_json::to_string_pretty(&self.sidecar())? + "\n")?;
        Ok(())
    }

    pub fn read(bin: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<Self> {
        let meta: TraceSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar)?)?;
        let bytes = std::fs::read(bin)?;
        if bytes.len() % 8 != 0 {
            return Err(DetsimError::Parse {
                line: 0,
                msg: format!("trace length {} is not a multiple of 8 bytes", bytes.len()),
            });
        }
        let samples = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self {
            sample_rate_hz: meta.sample_rate,
            baseline_v: meta.baseline,
            samples,
        })
    }
}

/// Number of pulses fired in `[0, duration)`.
fn pulse_count(duration_s: f64, rep_rate_hz: f64) -> u64 {
    let x = duration_s * rep_rate_hz;
    let n = x.ceil();
    // guard against x landing a hair above an integer
    if n - x > 1.0 - 1e-9 {
        x.floor() as u64
    } else {
        n as u64
    }
}

/// Times of the pulses that carry at least one capture-eligible photon.
struct PulseAttempts {
    rng: ChaCha8Rng,
    geometric: Option<Geometric>,
    period_us: f64,
    next_pulse: u64,
    n_pulses: u64,
}

impl PulseAttempts {
    fn new(mu: f64, rep_rate_hz: f64, duration_s: f64, rng: ChaCha8Rng) -> Self {
        let q = -(-mu).exp_m1();
        Self {
            rng,
            geometric: (q > 0.0).then(|| Geometric::new(q.min(1.0)).expect("probability in (0, 1]")),
            period_us: 1e6 / rep_rate_hz,
            next_pulse: 0,
            n_pulses: pulse_count(duration_s, rep_rate_hz),
        }
    }
}

impl Iterator for PulseAttempts {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let geometric = self.geometric.as_ref()?;
        let skip = geometric.sample(&mut self.rng);
        let k = self.next_pulse.checked_add(skip)?;
        if k >= self.n_pulses {
            self.next_pulse = self.n_pulses;
            return None;
        }
        self.next_pulse = k + 1;
        Some(k as f64 * self.period_us)
    }
}

struct DarkArrivals {
    rng: ChaCha8Rng,
    exp: Option<Exp<f64>>,
    t_us: f64,
    end_us: f64,
}

impl Iterator for DarkArrivals {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let exp = self.exp.as_ref()?;
        self.t_us += exp.sample(&mut self.rng);
        (self.t_us < self.end_us).then_some(self.t_us)
    }
}

/// Runs one trial. Deterministic in `(params, source, duration, seed)`.
pub fn simulate(
    params: &DetectorParams,
    source: &CoherentPulseTrain,
    duration_s: f64,
    seed: u64,
) -> Result<EventRecord> {
    simulate_trial(params, source, duration_s, seed, 0)
}

/// Trial `trial` of a family sharing `seed`; trials use disjoint streams.
pub fn simulate_trial(
    params: &DetectorParams,
    source: &CoherentPulseTrain,
    duration_s: f64,
    seed: u64,
    trial: u64,
) -> Result<EventRecord> {
    params.validate()?;
    source
        .validate()
        .map_err(|e| DetsimError::InvalidParams(e.to_string()))?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(DetsimError::Duration(duration_s));
    }
    let end_us = duration_s * 1e6;
    let mu = source.mean_photons * params.efficiency(source.polarization);

    let mut pulses = PulseAttempts::new(
        mu,
        source.repetition_rate_hz,
        duration_s,
        stream_rng(seed, trial, Stream::Photon),
    )
    .peekable();
    let mut dark = DarkArrivals {
        rng: stream_rng(seed, trial, Stream::Dark),
        exp: (params.dark_rate_hz > 0.0).then(|| Exp::new(params.dark_rate_hz * 1e-6).expect("positive rate")),
        t_us: 0.0,
        end_us,
    }
    .peekable();
    let mut dwell_rng = stream_rng(seed, trial, Stream::Dwell);
    let dwell =
        (params.hold_time_mean_us > 0.0).then(|| Exp::new(1.0 / params.hold_time_mean_us).expect("positive mean"));

    let mut record = EventRecord::default();
    // pending releases keyed by time bits (non-negative floats order like their bits)
    let mut trapped: BinaryHeap<Reverse<u64>> = BinaryHeap::new();
    let mut dead_until = f64::NEG_INFINITY;

    loop {
        let (t, origin) = match (pulses.peek(), dark.peek()) {
            (None, None) => break,
            (Some(&tp), Some(&td)) if td < tp => (dark.next().unwrap(), Origin::Dark),
            (Some(_), _) => (pulses.next().unwrap(), Origin::Photon),
            (None, Some(_)) => (dark.next().unwrap(), Origin::Dark),
        };
        while let Some(&Reverse(bits)) = trapped.peek() {
            if f64::from_bits(bits) <= t {
                trapped.pop();
            } else {
                break;
            }
        }
        if t < dead_until || trapped.len() >= params.max_occupancy as usize {
            continue;
        }
        let hold = dwell.as_ref().map_or(0.0, |d| d.sample(&mut dwell_rng));
        let release = t + hold;
        trapped.push(Reverse(release.to_bits()));
        dead_until = t + params.dead_time_us;
        record.push(t, origin, (release < end_us).then_some(release));
    }
    Ok(record)
}

/// Independent trials run in parallel; results are ordered by trial index.
pub fn simulate_trials(
    params: &DetectorParams,
    source: &CoherentPulseTrain,
    duration_s: f64,
    seed: u64,
    trials: u64,
) -> Result<Vec<EventRecord>> {
    (0..trials)
        .into_par_iter()
        .map(|trial| simulate_trial(params, source, duration_s, seed, trial))
        .collect()
}

/// Non-paralyzable dead time: drops every capture closer than `dead_time_us`
/// to the previously accepted one.
pub fn apply_dead_time(captures: &[f64], dead_time_us: f64) -> Result<Vec<f64>> {
    if let Some(i) = captures.windows(2).position(|w| w[1] < w[0]) {
        return Err(DetsimError::Unsorted(i + 1));
    }
    let mut kept = Vec::with_capacity(captures.len());
    let mut last = f64::NEG_INFINITY;
    for &c in captures {
        if c - last >= dead_time_us {
            kept.push(c);
            last = c;
        }
    }
    Ok(kept)
}

/// Expected accepted rate of a Poisson stream of rate `rate` behind a
/// non-paralyzable dead time (same units, inverse of each other).
pub fn dead_time_throughput(rate: f64, dead_time: f64) -> f64 {
    rate / (1.0 + rate * dead_time)
}

/// Time constant of a single-exponential edge with the given 10–90 % time.
pub fn edge_time_constant(ten_ninety: f64) -> f64 {
    ten_ninety / 9f64.ln()
}

/// Renders `V_OUT` for an event record: each trapped electron lowers the
/// output by `step_amplitude_v` through a single-exponential edge, and each
/// release restores it, plus white Gaussian noise.
pub fn synthesize_trace(
    events: &EventRecord,
    params: &DetectorParams,
    duration_s: f64,
    sample_rate_hz: f64,
    seed: u64,
) -> Result<TimeTrace> {
    params.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(DetsimError::Duration(duration_s));
    }
    let fastest = params.fall_time_us.min(params.rise_time_us);
    let required = 10.0 / (fastest * 1e-6);
    if !(sample_rate_hz >= required) {
        return Err(DetsimError::SampleRateTooLow {
            got: sample_rate_hz,
            required,
        });
    }

    let n = (duration_s * sample_rate_hz).round() as usize;
    let dt = 1e6 / sample_rate_hz;
    let tau_f = edge_time_constant(params.fall_time_us);
    let tau_r = edge_time_constant(params.rise_time_us);
    let (decay_f, decay_r) = ((-dt / tau_f).exp(), (-dt / tau_r).exp());
    let step = params.step_amplitude_v;

    let transitions = events.transitions();
    let mut next = 0;
    let mut occupancy = 0i64;
    let (mut fall_residual, mut rise_residual) = (0.0f64, 0.0f64);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        fall_residual *= decay_f;
        rise_residual *= decay_r;
        while next < transitions.len() && transitions[next].t_us <= t {
            let tr = &transitions[next];
            match tr.kind {
                TransitionKind::Capture => {
                    occupancy += 1;
                    fall_residual += (-(t - tr.t_us) / tau_f).exp();
                }
                TransitionKind::Release => {
                    occupancy -= 1;
                    rise_residual += (-(t - tr.t_us) / tau_r).exp();
                }
            }
            next += 1;
        }
        let drop = step * (occupancy as f64 - fall_residual + rise_residual);
        samples.push(params.baseline_v - drop);
    }

    if params.noise_sigma_v > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma_v).expect("finite sigma");
        let mut rng = stream_rng(seed, 0, Stream::Noise);
        for s in &mut samples {
            *s += normal.sample(&mut rng);
        }
    }
    Ok(TimeTrace {
        sample_rate_hz,
        baseline_v: params.baseline_v,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::Polarization;

    fn quiet() -> DetectorParams {
        DetectorParams {
            dark_rate_hz: 0.0,
            noise_sigma_v: 0.0,
            ..Default::default()
        }
    }

    fn source(mean: f64, f: f64) -> CoherentPulseTrain {
        CoherentPulseTrain::new(1550.0, f, mean, Polarization::Unpolarized).unwrap()
    }

    #[test]
    fn no_stimulus_no_events() {
        let rec = simulate(&quiet(), &source(0.0, 1e4), 1.0, 3).unwrap();
        assert!(rec.is_empty());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            simulate(&quiet(), &source(0.1, 1e4), 0.0, 1),
            Err(DetsimError::Duration(_))
        ));
        let bad = DetectorParams { iqe: 1.2, ..quiet() };
        assert!(matches!(
            simulate(&bad, &source(0.1, 1e4), 1.0, 1),
            Err(DetsimError::InvalidParams(_))
        ));
        let bad = DetectorParams {
            max_occupancy: 0,
            ..quiet()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn same_seed_same_record() {
        let p = DetectorParams::default();
        let s = source(0.2, 1e4);
        let a = simulate(&p, &s, 0.5, 77).unwrap();
        let b = simulate(&p, &s, 0.5, 77).unwrap();
        let c = simulate(&p, &s, 0.5, 78).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ledger_holds() {
        let p = DetectorParams {
            dark_rate_hz: 40_000.0,
            dead_time_us: 0.0,
            hold_time_mean_us: 30.0,
            max_occupancy: 3,
            ..Default::default()
        };
        let rec = simulate(&p, &source(0.5, 1e5), 0.2, 5).unwrap();
        rec.validate(3).unwrap();
        let max_occ = rec.captures.iter().map(|&c| rec.occupancy_at(c)).max().unwrap();
        assert_eq!(max_occ, 3);
    }

    #[test]
    fn pulse_count_edges() {
        assert_eq!(pulse_count(1.0, 1e4), 10_000);
        assert_eq!(pulse_count(0.00015, 1e4), 2);
        assert_eq!(pulse_count(100.0, 1e4), 1_000_000);
    }

    #[test]
    fn dead_time_examples() {
        assert_eq!(apply_dead_time(&[0.0, 10.0, 25.0], 0.0).unwrap(), vec![0.0, 10.0, 25.0]);
        assert_eq!(apply_dead_time(&[0.0, 10.0, 25.0], 20.0).unwrap(), vec![0.0, 25.0]);
        assert!(matches!(
            apply_dead_time(&[0.0, 5.0, 1.0], 1.0),
            Err(DetsimError::Unsorted(2))
        ));
        assert!((dead_time_throughput(40e3, 50e-6) - 13_333.333_333_333_334).abs() < 1e-6);
    }

    #[test]
    fn sample_rate_guard() {
        let p = quiet();
        let err = synthesize_trace(&EventRecord::default(), &p, 1e-3, 1e6, 0).unwrap_err();
        assert!(matches!(err, DetsimError::SampleRateTooLow { .. }));
    }

    #[test]
    fn quiet_trace_is_flat() {
        let p = DetectorParams {
            baseline_v: 0.25,
            ..quiet()
        };
        let tr = synthesize_trace(&EventRecord::default(), &p, 1e-3, 10e6, 0).unwrap();
        assert_eq!(tr.len(), 10_000);
        assert!(tr.samples.iter().all(|&s| s == 0.25));
    }

    #[test]
    fn overlapping_captures_stack() {
        let p = quiet();
        let mut rec = EventRecord::default();
        rec.push(100.0, Origin::Dark, Some(400.0));
        rec.push(150.0, Origin::Dark, Some(300.0));
        let tr = synthesize_trace(&rec, &p, 500e-6, 10e6, 0).unwrap();
        let at = |t_us: f64| tr.samples[(t_us / tr.dt_us()) as usize];
        let step = p.step_amplitude_v;
        assert!((at(140.0) + step).abs() < 1e-6);
        assert!((at(290.0) + 2.0 * step).abs() < 1e-6);
        assert!((at(390.0) + step).abs() < 1e-6);
        assert!(at(490.0).abs() < 1e-6);
        assert_eq!(rec.occupancy_at(290.0), 2);
    }

    #[test]
    fn csv_round_trip_preserves_transitions() {
        let p = DetectorParams {
            dark_rate_hz: 20_000.0,
            dead_time_us: 0.0,
            ..Default::default()
        };
        let rec = simulate(&p, &source(0.3, 1e5), 0.05, 11).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let back = EventRecord::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.captures, rec.captures);
        assert_eq!(back.origins, rec.origins);
        let times = |r: &EventRecord| r.transitions().iter().map(|t| t.t_us).collect::<Vec<_>>();
        assert_eq!(times(&back), times(&rec));
        back.validate(p.max_occupancy).unwrap();
    }

    #[test]
    fn csv_rejects_garbage() {
        let err = EventRecord::read_csv("timestamp_us,kind,origin\n1.0,capture,alien\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DetsimError::Parse { line: 2, .. }));
        let err = EventRecord::read_csv("timestamp_us,kind,origin\n1.0,release,dark\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DetsimError::Parse { line: 2, .. }));
    }

    #[test]
    fn trace_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tr = TimeTrace {
            sample_rate_hz: 1e6,
            baseline_v: 0.1,
            samples: vec![0.1, -0.2, 3.5e-9, f64::MIN_POSITIVE],
        };
        let (bin, json) = (dir.path().join("t.bin"), dir.path().join("t.json"));
        tr.write(&bin, &json).unwrap();
        assert_eq!(std::fs::metadata(&bin).unwrap().len(), 32);
        assert_eq!(TimeTrace::read(&bin, &json).unwrap(), tr);
    }
}
