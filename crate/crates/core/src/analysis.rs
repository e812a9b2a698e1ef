//! Trace analysis and counting statistics: threshold event recovery,
//! occupation histograms, count rates, dark-subtracted efficiency and the
//! repetition-frequency slope fit.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::detsim::{EventRecord, Origin, TimeTrace};
use crate::source::DEFAULT_POWER_UNCERTAINTY;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate trace: {0}")]
    DegenerateTrace(String),
    #[error("photon flux must be positive")]
    ZeroFlux,
    #[error("sweep needs at least 3 distinct repetition rates, got {0}")]
    RankDeficient(usize),
    #[error("event at {0} us does not lie inside the trace")]
    EventOutsideTrace(f64),
    #[error("edge not resolved: {0}")]
    EdgeUnresolved(String),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectOptions {
    /// Capture when the trace drops this far below the baseline, volts.
    pub threshold_v: f64,
    /// Release when the trace climbs back above `threshold - hysteresis`
    /// below the baseline.
    pub hysteresis_v: f64,
    pub min_width_us: f64,
    /// Length of the blocks used for the rolling-mode baseline. Clamped to
    /// the trace length.
    pub baseline_window_us: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            threshold_v: 0.05,
            hysteresis_v: 0.025,
            min_width_us: 1.0,
            baseline_window_us: 10_000.0,
        }
    }
}

/// Most populated value of `samples` at resolution `bin`, refined by the
/// mean of the samples within one bin of it.
fn mode(samples: &[f64], bin: f64) -> f64 {
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if hi == lo {
        return lo;
    }
    let bin = bin.max((hi - lo) / 1.0e6);
    let nbins = ((hi - lo) / bin).floor() as usize + 1;
    let mut counts = vec![0u32; nbins];
    for &x in samples {
        counts[((x - lo) / bin) as usize] += 1;
    }
    let best = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let center = lo + (best as f64 + 0.5) * bin;
    let (sum, n) = samples
        .iter()
        .filter(|&&x| (x - center).abs() <= bin)
        .fold((0.0, 0usize), |(s, n), &x| (s + x, n + 1));
    if n == 0 {
        center
    } else {
        sum / n as f64
    }
}

/// Rolling-mode baseline, one value per sample, linearly interpolated
/// between block centres.
pub fn rolling_baseline(trace: &TimeTrace, window_us: f64, bin_v: f64) -> Vec<f64> {
    let n = trace.samples.len();
    let window = ((window_us / trace.dt_us()).round() as usize).clamp(1, n.max(1));
    let blocks: Vec<(f64, f64)> = trace
        .samples
        .chunks(window)
        .enumerate()
        .map(|(b, chunk)| {
            let centre = (b * window) as f64 + 0.5 * (chunk.len() as f64 - 1.0);
            (centre, mode(chunk, bin_v))
        })
        .collect();
    if blocks.len() == 1 {
        return vec![blocks[0].1; n];
    }
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let x = i as f64;
        while k + 2 < blocks.len() && x > blocks[k + 1].0 {
            k += 1;
        }
        let (x0, y0) = blocks[k];
        let (x1, y1) = blocks[k + 1];
        let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        out.push(y0 + t * (y1 - y0));
    }
    out
}

fn crossing_time(trace: &TimeTrace, i: usize, level: f64) -> f64 {
    // linear interpolation between samples i-1 and i
    let dt = trace.dt_us();
    if i == 0 {
        return 0.0;
    }
    let (a, b) = (trace.samples[i - 1], trace.samples[i]);
    let frac = if b == a {
        1.0
    } else {
        ((level - a) / (b - a)).clamp(0.0, 1.0)
    };
    ((i - 1) as f64 + frac) * dt
}

/// Threshold-with-hysteresis event recovery. Captures are downward crossings
/// of `baseline - threshold`; releases are upward crossings of
/// `baseline - (threshold - hysteresis)`. Events shorter than `min_width_us`
/// are dropped. Recovered events have [`Origin::Unknown`].
pub fn detect_events(trace: &TimeTrace, opts: &DetectOptions) -> Result<EventRecord> {
    if !(opts.hysteresis_v > 0.0 && opts.threshold_v > opts.hysteresis_v) {
        return Err(AnalysisError::InvalidArgument(format!(
            "need threshold > hysteresis > 0, got {} and {}",
            opts.threshold_v, opts.hysteresis_v
        )));
    }
    if !(opts.min_width_us >= 0.0 && opts.baseline_window_us > 0.0) {
        return Err(AnalysisError::InvalidArgument("widths must be positive".into()));
    }
    let s = &trace.samples;
    if s.len() < 2 {
        return Err(AnalysisError::DegenerateTrace(format!("{} samples", s.len())));
    }
    if s.iter().all(|&x| x == s[0]) {
        return Err(AnalysisError::DegenerateTrace("constant trace".into()));
    }
    let baseline = rolling_baseline(trace, opts.baseline_window_us, 0.5 * opts.hysteresis_v);
    let release_depth = opts.threshold_v - opts.hysteresis_v;

    let mut record = EventRecord::default();
    let mut open: Option<f64> = None;
    for i in 0..s.len() {
        let depth = baseline[i] - s[i];
        match open {
            None if depth > opts.threshold_v => {
                open = Some(crossing_time(trace, i, baseline[i] - opts.threshold_v));
            }
            Some(c) if depth < release_depth => {
                let r = crossing_time(trace, i, baseline[i] - release_depth);
                if r - c >= opts.min_width_us {
                    record.push(c, Origin::Unknown, Some(r));
                }
                open = None;
            }
            _ => {}
        }
    }
    if let Some(c) = open {
        record.push(c, Origin::Unknown, None);
    }
    Ok(record)
}

/// Agreement between recovered and true captures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub truth: usize,
    pub detected: usize,
    pub matched: usize,
}

impl MatchSummary {
    pub fn recall(&self) -> f64 {
        if self.truth == 0 {
            1.0
        } else {
            self.matched as f64 / self.truth as f64
        }
    }

    pub fn precision(&self) -> f64 {
        if self.detected == 0 {
            1.0
        } else {
            self.matched as f64 / self.detected as f64
        }
    }
}

/// Pairs sorted capture times one-to-one when they lie within
/// `tolerance_us` of each other.
pub fn match_captures(truth: &[f64], detected: &[f64], tolerance_us: f64) -> MatchSummary {
    let (mut i, mut j, mut matched) = (0, 0, 0);
    while i < truth.len() && j < detected.len() {
        let d = detected[j] - truth[i];
        if d.abs() <= tolerance_us {
            matched += 1;
            i += 1;
            j += 1;
        } else if d < 0.0 {
            j += 1;
        } else {
            i += 1;
        }
    }
    MatchSummary {
        truth: truth.len(),
        detected: detected.len(),
        matched,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Bin-centroid voltage of the peak.
    pub voltage: f64,
    pub count: u64,
    pub prominence: u64,
    /// Occupation number; the highest-voltage peak is |0⟩.
    pub occupancy: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationHistogram {
    pub bin_width_v: f64,
    /// Lower edge of bin 0.
    pub first_edge_v: f64,
    pub counts: Vec<u64>,
    /// Sorted by descending voltage.
    pub peaks: Vec<Peak>,
}

impl OccupationHistogram {
    pub fn bin_center(&self, i: usize) -> f64 {
        self.first_edge_v + (i as f64 + 0.5) * self.bin_width_v
    }

    /// Gaps between neighbouring peaks, top to bottom.
    pub fn spacings(&self) -> Vec<f64> {
        self.peaks.windows(2).map(|w| w[0].voltage - w[1].voltage).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("voltage_v,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.bin_center(i), c));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakOptions {
    /// Minimum prominence as a fraction of the tallest bin.
    pub prominence_fraction: f64,
    /// Minimum prominence in units of the Poisson error of the peak height.
    pub prominence_sigmas: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self {
            prominence_fraction: 0.01,
            prominence_sigmas: 5.0,
        }
    }
}

/// Value histogram of a trace with its occupation peaks.
pub fn occupation_histogram(trace: &TimeTrace, bin_width_v: f64) -> Result<OccupationHistogram> {
    occupation_histogram_with(trace, bin_width_v, &PeakOptions::default())
}

pub fn occupation_histogram_with(
    trace: &TimeTrace,
    bin_width_v: f64,
    opts: &PeakOptions,
) -> Result<OccupationHistogram> {
    if !(bin_width_v > 0.0 && bin_width_v.is_finite()) {
        return Err(AnalysisError::InvalidArgument(format!("bin width {bin_width_v}")));
    }
    if trace.samples.is_empty() {
        return Err(AnalysisError::DegenerateTrace("no samples".into()));
    }
    let (lo, hi) = trace
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let first_edge = (lo / bin_width_v).floor() * bin_width_v;
    let nbins = ((hi - first_edge) / bin_width_v).floor() as usize + 1;
    if nbins > 50_000_000 {
        return Err(AnalysisError::InvalidArgument(
            "bin width too small for trace range".into(),
        ));
    }
    let mut counts = vec![0u64; nbins];
    for &x in &trace.samples {
        let i = (((x - first_edge) / bin_width_v) as usize).min(nbins - 1);
        counts[i] += 1;
    }

    let tallest = *counts.iter().max().unwrap_or(&0);
    let floor = opts.prominence_fraction * tallest as f64;
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < nbins {
        // a plateau of equal counts is one candidate
        let mut j = i;
        while j + 1 < nbins && counts[j + 1] == counts[i] {
            j += 1;
        }
        let h = counts[i];
        let left_lower = i == 0 || counts[i - 1] < h;
        let right_lower = j + 1 == nbins || counts[j + 1] < h;
        if h > 0 && left_lower && right_lower {
            let prominence = h - prominence_base(&counts, i, j, h);
            let needed = floor.max(opts.prominence_sigmas * (h as f64).sqrt());
            if prominence as f64 >= needed {
                let centre = (i + j) / 2;
                let (a, b) = (centre.saturating_sub(2), (centre + 2).min(nbins - 1));
                let (wsum, w) = (a..=b).fold((0.0, 0.0), |(ws, w), k| {
                    (
                        ws + counts[k] as f64 * (first_edge + (k as f64 + 0.5) * bin_width_v),
                        w + counts[k] as f64,
                    )
                });
                peaks.push(Peak {
                    voltage: wsum / w,
                    count: h,
                    prominence,
                    occupancy: 0,
                });
            }
        }
        i = j + 1;
    }
    peaks.sort_by(|a, b| b.voltage.total_cmp(&a.voltage));
    for (k, p) in peaks.iter_mut().enumerate() {
        p.occupancy = k;
    }
    Ok(OccupationHistogram {
        bin_width_v,
        first_edge_v: first_edge,
        counts,
        peaks,
    })
}

/// Higher of the two minima separating the plateau `[i, j]` from taller
/// bins (or the histogram ends).
fn prominence_base(counts: &[u64], i: usize, j: usize, h: u64) -> u64 {
    let mut left_min = h;
    let mut k = i;
    while k > 0 {
        k -= 1;
        if counts[k] > h {
            break;
        }
        left_min = left_min.min(counts[k]);
    }
    // bins beyond the histogram are empty
    if k == 0 && counts[0] <= h {
        left_min = 0;
    }
    let mut right_min = h;
    let mut k = j;
    while k + 1 < counts.len() {
        k += 1;
        if counts[k] > h {
            break;
        }
        right_min = right_min.min(counts[k]);
    }
    if k + 1 == counts.len() && counts[k] <= h {
        right_min = 0;
    }
    left_min.max(right_min)
}

/// `N / T` with its Poisson error and the one-sided 95 % upper limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRate {
    pub count: u64,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub sigma_hz: f64,
    pub upper_95_hz: f64,
}

pub fn rate_from_count(count: u64, duration_s: f64) -> Result<CountRate> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(AnalysisError::InvalidArgument(format!("duration {duration_s}")));
    }
    let n = count as f64;
    // Garwood limit: half the 95 % quantile of χ² with 2N + 2 dof
    let chi = ChiSquared::new(2.0 * n + 2.0).expect("positive dof");
    Ok(CountRate {
        count,
        duration_s,
        rate_hz: n / duration_s,
        sigma_hz: n.sqrt() / duration_s,
        upper_95_hz: 0.5 * chi.inverse_cdf(0.95) / duration_s,
    })
}

/// Rate over the record plus a constant-rate check across windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedRate {
    pub overall: CountRate,
    pub window_s: f64,
    pub window_counts: Vec<u64>,
    /// Pearson χ² of the window counts against their mean.
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Counts captures in `[0, duration)`. With `window_s`, also splits the
/// record into whole windows and tests them for a common rate.
pub fn count_rate(events: &EventRecord, duration_s: f64, window_s: Option<f64>) -> Result<WindowedRate> {
    let end_us = duration_s * 1e6;
    let inside: Vec<f64> = events
        .captures
        .iter()
        .copied()
        .filter(|&t| t >= 0.0 && t < end_us)
        .collect();
    let overall = rate_from_count(inside.len() as u64, duration_s)?;
    let Some(window_s) = window_s else {
        return Ok(WindowedRate {
            overall,
            window_s: duration_s,
            window_counts: vec![inside.len() as u64],
            chi2: 0.0,
            dof: 0,
            p_value: 1.0,
        });
    };
    if !(window_s > 0.0 && window_s <= duration_s) {
        return Err(AnalysisError::InvalidArgument(format!("window {window_s} s")));
    }
    let nw = (duration_s / window_s + 1e-9).floor() as usize;
    let mut window_counts = vec![0u64; nw];
    for t in inside {
        let w = (t * 1e-6 / window_s) as usize;
        if w < nw {
            window_counts[w] += 1;
        }
    }
    let mean = window_counts.iter().sum::<u64>() as f64 / nw as f64;
    let (chi2, dof, p_value) = if nw < 2 || mean == 0.0 {
        (0.0, 0, 1.0)
    } else {
        let chi2 = window_counts
            .iter()
            .map(|&c| (c as f64 - mean).powi(2) / mean)
            .sum::<f64>();
        let dof = nw - 1;
        let p = 1.0 - ChiSquared::new(dof as f64).expect("dof >= 1").cdf(chi2);
        (chi2, dof, p)
    };
    Ok(WindowedRate {
        overall,
        window_s,
        window_counts,
        chi2,
        dof,
        p_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountingResult {
    pub counts_light: u64,
    pub counts_dark: u64,
    pub duration_s: f64,
    pub photon_flux_hz: f64,
    pub eqe: f64,
    pub eqe_sigma: f64,
    /// Set when dark counts exceed light counts; `eqe` is then negative
    /// and left unclamped.
    pub negative: bool,
}

impl CountingResult {
    pub const CSV_HEADER: &'static str = "photon_flux,counts,eqe,eqe_sigma";

    /// Row matching [`Self::CSV_HEADER`]; `counts` is dark-subtracted.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.photon_flux_hz,
            self.counts_light as i64 - self.counts_dark as i64,
            self.eqe,
            self.eqe_sigma
        )
    }
}

/// Dark-subtracted efficiency from equal-length light and dark runs, with
/// the default 5 % flux-calibration uncertainty.
pub fn estimate_eqe(
    counts_light: u64,
    counts_dark: u64,
    mean_photons: f64,
    rep_rate_hz: f64,
    duration_s: f64,
) -> Result<CountingResult> {
    estimate_eqe_with(
        counts_light,
        counts_dark,
        mean_photons,
        rep_rate_hz,
        duration_s,
        DEFAULT_POWER_UNCERTAINTY,
    )
}

/// As [`estimate_eqe`], with an explicit relative flux uncertainty. Counting
/// and calibration errors add in quadrature.
pub fn estimate_eqe_with(
    counts_light: u64,
    counts_dark: u64,
    mean_photons: f64,
    rep_rate_hz: f64,
    duration_s: f64,
    flux_uncertainty: f64,
) -> Result<CountingResult> {
    if !(duration_s > 0.0) {
        return Err(AnalysisError::InvalidArgument(format!("duration {duration_s}")));
    }
    let flux = mean_photons * rep_rate_hz;
    if !(flux > 0.0 && flux.is_finite()) {
        return Err(AnalysisError::ZeroFlux);
    }
    let photons = flux * duration_s;
    let net = counts_light as f64 - counts_dark as f64;
    let eqe = net / photons;
    let counting = ((counts_light + counts_dark) as f64).sqrt() / photons;
    let calibration = eqe.abs() * flux_uncertainty;
    Ok(CountingResult {
        counts_light,
        counts_dark,
        duration_s,
        photon_flux_hz: flux,
        eqe,
        eqe_sigma: counting.hypot(calibration),
        negative: net < 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub slope_sigma: f64,
    pub intercept_sigma: f64,
    pub eqe_from_slope: f64,
    pub eqe_sigma: f64,
    /// Standard errors propagated from Poisson counting variance
    /// (`Var y = y`) instead of the residual scatter.
    pub slope_sigma_poisson: f64,
    pub intercept_sigma_poisson: f64,
    pub points: usize,
    /// Residuals divided by their estimated standard deviation.
    pub standardized_residuals: Vec<f64>,
}

/// Ordinary least squares `y = slope·x + intercept` with standard errors
/// from the residual variance.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64, f64, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(AnalysisError::InvalidArgument("x and y lengths differ".into()));
    }
    let n = x.len();
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(AnalysisError::RankDeficient(distinct.len()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|&xi| (xi - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(&xi, &yi)| (xi - mx) * (yi - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| yi - (slope * xi + intercept))
        .collect();
    let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / (nf - 2.0);
    let slope_sigma = (s2 / sxx).sqrt();
    let intercept_sigma = (s2 * (1.0 / nf + mx * mx / sxx)).sqrt();
    let standardized = x
        .iter()
        .zip(&residuals)
        .map(|(&xi, &r)| {
            let leverage = 1.0 / nf + (xi - mx).powi(2) / sxx;
            let sd = (s2 * (1.0 - leverage)).sqrt();
            if sd > 0.0 {
                r / sd
            } else {
                0.0
            }
        })
        .collect();
    Ok((slope, intercept, slope_sigma, intercept_sigma, standardized))
}

/// Fits raw counts against repetition rate at fixed `n̄`; the slope is
/// `EQE · n̄ · duration` and the intercept collects rate-independent
/// (dark) counts.
pub fn eqe_from_frequency_sweep(points: &[(f64, u64)], mean_photons: f64, duration_s: f64) -> Result<FitResult> {
    if !(mean_photons > 0.0 && duration_s > 0.0) {
        return Err(AnalysisError::ZeroFlux);
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1 as f64).collect();
    let (slope, intercept, slope_sigma, intercept_sigma, standardized_residuals) = linear_fit(&x, &y)?;
    let scale = mean_photons * duration_s;

    // both estimates are linear in y: slope = Σ a_i y_i, intercept = Σ b_i y_i
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&xi| (xi - mx).powi(2)).sum();
    let (mut var_slope, mut var_icept) = (0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(&y) {
        let a = (xi - mx) / sxx;
        let b = 1.0 / n - mx * a;
        var_slope += a * a * yi.max(1.0);
        var_icept += b * b * yi.max(1.0);
    }
    Ok(FitResult {
        slope,
        intercept,
        slope_sigma,
        intercept_sigma,
        eqe_from_slope: slope / scale,
        eqe_sigma: slope_sigma / scale,
        slope_sigma_poisson: var_slope.sqrt(),
        intercept_sigma_poisson: var_icept.sqrt(),
        points: points.len(),
        standardized_residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeTimes {
    pub fall_us: f64,
    pub rise_us: f64,
    /// Pulse depth below the baseline, volts.
    pub depth_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeOptions {
    /// Quiet stretch before the capture used for the baseline level.
    pub baseline_window_us: f64,
    /// Gap between that stretch and the detected capture time.
    pub guard_us: f64,
    /// Required depth in units of the baseline noise.
    pub min_snr: f64,
}

impl Default for EdgeOptions {
    fn default() -> Self {
        Self {
            baseline_window_us: 5.0,
            guard_us: 3.0,
            min_snr: 8.0,
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// 10–90 % fall and rise times of one detected event, from linear
/// interpolation between samples. `capture_us` and `release_us` are the
/// threshold crossings reported by [`detect_events`].
pub fn edge_times(trace: &TimeTrace, capture_us: f64, release_us: f64, opts: &EdgeOptions) -> Result<EdgeTimes> {
    let dt = trace.dt_us();
    let n = trace.samples.len();
    let idx = |t: f64| (t / dt).floor() as isize;
    let base_lo = idx(capture_us - opts.guard_us - opts.baseline_window_us);
    let base_hi = idx(capture_us - opts.guard_us);
    let width = release_us - capture_us;
    let after = idx(release_us + opts.guard_us + opts.baseline_window_us);
    if base_lo < 0 || after >= n as isize || !(width > 0.0) {
        return Err(AnalysisError::EventOutsideTrace(capture_us));
    }
    let s = &trace.samples;
    let mut pre: Vec<f64> = s[base_lo as usize..=base_hi as usize].to_vec();
    let baseline = median(&mut pre);
    let mut dev: Vec<f64> = pre.iter().map(|x| (x - baseline).abs()).collect();
    let noise = 1.4826 * median(&mut dev);

    let p_lo = idx(capture_us + 0.4 * width).max(0) as usize;
    let p_hi = (idx(capture_us + 0.7 * width).max(0) as usize).max(p_lo);
    let mut mid: Vec<f64> = s[p_lo..=p_hi].to_vec();
    let plateau = median(&mut mid);
    let depth = baseline - plateau;
    if !(depth > 0.0) || depth < opts.min_snr * noise {
        return Err(AnalysisError::EdgeUnresolved(format!(
            "depth {depth} V against noise {noise} V"
        )));
    }
    let level10 = baseline - 0.1 * depth;
    let level90 = baseline - 0.9 * depth;

    let c = (idx(capture_us).max(1) as usize).min(n - 1);
    // fall: last sample above the 10 % level before the crossing, first
    // sample below the 90 % level after it
    let mut i = c;
    while i > 0 && s[i] <= level10 {
        i -= 1;
    }
    let t10 = crossing_time(trace, i + 1, level10);
    let mut j = c;
    while j < n && s[j] >= level90 {
        j += 1;
    }
    if j >= n || i == 0 {
        return Err(AnalysisError::EdgeUnresolved("fall edge crossing not found".into()));
    }
    let t90 = crossing_time(trace, j, level90);

    let r = (idx(release_us).max(1) as usize).min(n - 1);
    let mut i = r;
    while i > 0 && s[i] >= level90 {
        i -= 1;
    }
    let r90 = crossing_time(trace, i + 1, level90);
    let mut j = r;
    while j < n && s[j] <= level10 {
        j += 1;
    }
    if j >= n || i == 0 {
        return Err(AnalysisError::EdgeUnresolved("rise edge crossing not found".into()));
    }
    let r10 = crossing_time(trace, j, level10);

    Ok(EdgeTimes {
        fall_us: t90 - t10,
        rise_us: r10 - r90,
        depth_v: depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn trace(samples: Vec<f64>, rate: f64) -> TimeTrace {
        TimeTrace {
            sample_rate_hz: rate,
            baseline_v: 0.0,
            samples,
        }
    }

    fn square_pulse(depth: f64) -> TimeTrace {
        let mut s = vec![0.0; 1000];
        for x in &mut s[300..600] {
            *x = -depth;
        }
        trace(s, 1e6)
    }

    #[test]
    fn single_pulse_one_event() {
        let opts = DetectOptions {
            threshold_v: 0.05,
            hysteresis_v: 0.02,
            min_width_us: 1.0,
            baseline_window_us: 10_000.0,
        };
        let rec = detect_events(&square_pulse(0.1), &opts).unwrap();
        assert_eq!(rec.len(), 1);
        assert!((rec.captures[0] - 299.5).abs() < 1e-9);
        assert!((rec.releases[0].unwrap() - 599.7).abs() < 1e-9);
    }

    #[test]
    fn detect_argument_checks() {
        let t = square_pulse(0.1);
        let bad = DetectOptions {
            threshold_v: 0.01,
            hysteresis_v: 0.02,
            ..Default::default()
        };
        assert!(matches!(
            detect_events(&t, &bad),
            Err(AnalysisError::InvalidArgument(_))
        ));
        let flat = trace(vec![0.3; 100], 1e6);
        assert!(matches!(
            detect_events(&flat, &DetectOptions::default()),
            Err(AnalysisError::DegenerateTrace(_))
        ));
        assert!(detect_events(&trace(vec![0.0], 1e6), &DetectOptions::default()).is_err());
    }

    #[test]
    fn narrow_glitch_filtered() {
        let mut s = vec![0.0; 1000];
        s[500] = -0.2;
        let opts = DetectOptions {
            min_width_us: 2.0,
            ..Default::default()
        };
        assert!(detect_events(&trace(s, 1e6), &opts).unwrap().is_empty());
    }

    #[test]
    fn baseline_follows_offset() {
        let mut t = square_pulse(0.1);
        for x in &mut t.samples {
            *x += 1.5;
        }
        let rec = detect_events(&t, &DetectOptions::default()).unwrap();
        assert_eq!(rec.len(), 1);
    }

    #[test]
    fn matching_is_one_to_one() {
        let m = match_captures(&[10.0, 20.0, 30.0], &[10.4, 10.6, 29.0, 50.0], 1.0);
        assert_eq!(m.matched, 2);
        assert_relative_eq!(m.recall(), 2.0 / 3.0);
        assert_relative_eq!(m.precision(), 0.5);
    }

    #[test]
    fn constant_trace_single_peak() {
        let h = occupation_histogram(&trace(vec![0.2; 500], 1e6), 0.01).unwrap();
        assert_eq!(h.peaks.len(), 1);
        assert!((h.peaks[0].voltage - 0.2).abs() < 0.01);
        assert_eq!(h.peaks[0].occupancy, 0);
    }

    #[test]
    fn two_level_trace_two_peaks() {
        let step = 0.1;
        let mut s = vec![0.0; 4000];
        for x in &mut s[1000..2500] {
            *x = -step;
        }
        let h = occupation_histogram(&trace(s, 1e6), step / 20.0).unwrap();
        assert_eq!(h.peaks.len(), 2);
        assert!((h.spacings()[0] - step).abs() < step / 20.0);
        assert!(h.peaks[0].voltage > h.peaks[1].voltage);
        assert!(occupation_histogram(&trace(vec![0.0; 3], 1e6), 0.0).is_err());
    }

    #[test]
    fn rate_examples() {
        let r = rate_from_count(7200, 10.0).unwrap();
        assert_relative_eq!(r.rate_hz, 720.0);
        assert_relative_eq!(r.sigma_hz, 8.485_281_374_238_57, max_relative = 1e-12);
        let z = rate_from_count(0, 10.0).unwrap();
        assert_eq!(z.rate_hz, 0.0);
        // -ln(0.05) = 2.995732
        assert_relative_eq!(z.upper_95_hz, 0.299_573_227_355_399, max_relative = 1e-6);
        assert!(rate_from_count(1, 0.0).is_err());
    }

    #[test]
    fn windowed_rate_of_uniform_record() {
        let mut rec = EventRecord::default();
        for i in 0..1000 {
            rec.push(i as f64 * 1000.0 + 0.5, Origin::Dark, None);
        }
        let w = count_rate(&rec, 1.0, Some(0.1)).unwrap();
        assert_eq!(w.window_counts, vec![100; 10]);
        assert_eq!(w.chi2, 0.0);
        assert_eq!(w.overall.count, 1000);
        assert!(count_rate(&rec, 1.0, Some(2.0)).is_err());
    }

    #[test]
    fn eqe_examples() {
        let r = estimate_eqe(500, 500, 0.1, 1e4, 1.0).unwrap();
        assert_eq!(r.eqe, 0.0);
        assert!(!r.negative);
        let r = estimate_eqe(400, 500, 0.1, 1e4, 1.0).unwrap();
        assert!(r.negative);
        assert_relative_eq!(r.eqe, -0.1);
        // counting σ = sqrt(1100)/1000, calibration σ = 0.1·0.05
        let r = estimate_eqe(600, 500, 0.1, 1e4, 1.0).unwrap();
        assert_relative_eq!(r.eqe, 0.1, max_relative = 1e-12);
        assert_relative_eq!(
            r.eqe_sigma,
            (1100.0f64 / 1e6 + 0.005f64.powi(2)).sqrt(),
            max_relative = 1e-12
        );
        assert_eq!(estimate_eqe(1, 0, 0.0, 1e4, 1.0), Err(AnalysisError::ZeroFlux));
        assert_eq!(r.csv_row(), "1000,100,0.1,0.03354101966249685");
    }

    #[test]
    fn exact_line_recovered() {
        let pts: Vec<(f64, u64)> = [1e3, 2e3, 5e3, 1e4, 2e4]
            .iter()
            .map(|&f| (f, (0.02 * f + 80.0) as u64))
            .collect();
        let fit = eqe_from_frequency_sweep(&pts, 0.05, 1.0).unwrap();
        assert_relative_eq!(fit.slope, 0.02, max_relative = 1e-12);
        assert_relative_eq!(fit.intercept, 80.0, epsilon = 1e-9);
        assert!(fit.slope_sigma < 1e-12);
        // intercept variance Σ b_i² y_i with b_i = 1/n - x̄ (x_i - x̄)/Sxx
        let b = [
            0.2 - 7600.0 * (1e3 - 7600.0) / 241.2e6,
            0.2 - 7600.0 * (2e3 - 7600.0) / 241.2e6,
            0.2 - 7600.0 * (5e3 - 7600.0) / 241.2e6,
            0.2 - 7600.0 * (1e4 - 7600.0) / 241.2e6,
            0.2 - 7600.0 * (2e4 - 7600.0) / 241.2e6,
        ];
        let y = [100.0, 120.0, 180.0, 280.0, 480.0];
        let var: f64 = b.iter().zip(&y).map(|(b, y)| b * b * y).sum();
        assert_relative_eq!(fit.intercept_sigma_poisson, var.sqrt(), max_relative = 1e-9);
        assert_relative_eq!(fit.eqe_from_slope, 0.4, max_relative = 1e-12);
    }

    #[test]
    fn rank_deficient_sweep() {
        let pts = [(1e3, 10), (1e3, 12), (1e3, 11)];
        assert_eq!(
            eqe_from_frequency_sweep(&pts, 0.05, 1.0).unwrap_err(),
            AnalysisError::RankDeficient(1)
        );
        let pts = [(1e3, 10), (2e3, 12)];
        assert!(eqe_from_frequency_sweep(&pts, 0.05, 1.0).is_err());
    }

    #[test]
    fn ideal_step_edges_within_one_sample() {
        let t = square_pulse(0.1);
        let e = edge_times(&t, 299.5, 599.5, &EdgeOptions::default()).unwrap();
        assert!(e.fall_us <= t.dt_us() && e.fall_us >= 0.0);
        assert!(e.rise_us <= t.dt_us() && e.rise_us >= 0.0);
        assert_relative_eq!(e.depth_v, 0.1);
    }

    #[test]
    fn exponential_edge_ten_ninety_is_tau_ln9() {
        let tau = 1.0;
        let rate = 100e6;
        let dt = 1e6 / rate;
        let s: Vec<f64> = (0..20_000)
            .map(|i| {
                let t = i as f64 * dt;
                let fall = if t >= 50.0 {
                    1.0 - (-(t - 50.0) / tau).exp()
                } else {
                    0.0
                };
                let rise = if t >= 120.0 {
                    1.0 - (-(t - 120.0) / tau).exp()
                } else {
                    0.0
                };
                -(fall - rise)
            })
            .collect();
        let tr = trace(s, rate);
        let e = edge_times(&tr, 50.7, 120.7, &EdgeOptions::default()).unwrap();
        assert_relative_eq!(e.fall_us, tau * 9f64.ln(), max_relative = 1e-4);
        assert_relative_eq!(e.rise_us, tau * 9f64.ln(), max_relative = 1e-4);
    }

    #[test]
    fn edge_outside_trace() {
        let t = square_pulse(0.1);
        assert!(matches!(
            edge_times(&t, 2.0, 900.0, &EdgeOptions::default()),
            Err(AnalysisError::EventOutsideTrace(_))
        ));
    }
}
