use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spd_core::analysis::{
    count_rate, detect_events, edge_times, eqe_from_frequency_sweep, estimate_eqe, match_captures, DetectOptions,
    EdgeOptions,
};
use spd_core::detsim::{simulate, simulate_trial, synthesize_trace, DetectorParams, EventRecord, Origin};
use spd_core::source::{CoherentPulseTrain, Polarization};

fn device(dark_hz: f64) -> DetectorParams {
    DetectorParams {
        absorptance_armchair: 0.54,
        absorptance_zigzag: 0.0,
        iqe: 0.79,
        dark_rate_hz: dark_hz,
        dead_time_us: 0.0,
        ..DetectorParams::default()
    }
}

fn unpolarized(f: f64, n_bar: f64) -> CoherentPulseTrain {
    CoherentPulseTrain::new(1550.0, f, n_bar, Polarization::Unpolarized).unwrap()
}

/// Well separated capture/release pairs with dwell times long enough to
/// resolve both edges.
fn separated_events(n: usize, seed: u64) -> (EventRecord, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rec = EventRecord::default();
    let mut t = 50.0;
    for _ in 0..n {
        let dwell = rng.random_range(10.0..40.0);
        rec.push(t, Origin::Photon, Some(t + dwell));
        t += dwell + rng.random_range(40.0..120.0);
    }
    (rec, (t + 50.0) * 1e-6)
}

#[test]
fn pure_noise_gives_no_events() {
    let params = DetectorParams {
        noise_sigma_v: 0.05 / 6.0,
        ..DetectorParams::default()
    };
    let trace = synthesize_trace(&EventRecord::default(), &params, 0.1, 20e6, 1).unwrap();
    let opts = DetectOptions {
        threshold_v: 0.05,
        hysteresis_v: 0.025,
        min_width_us: 1.0,
        ..DetectOptions::default()
    };
    assert!(detect_events(&trace, &opts).unwrap().is_empty());
}

#[test]
fn synthesized_events_are_recovered() {
    let params = DetectorParams {
        noise_sigma_v: 0.1 / 8.0,
        ..DetectorParams::default()
    };
    let (truth, duration) = separated_events(1000, 31);
    let trace = synthesize_trace(&truth, &params, duration, 50e6, 31).unwrap();
    let found = detect_events(&trace, &DetectOptions::default()).unwrap();
    let m = match_captures(&truth.captures, &found.captures, 2.0);
    assert!(m.recall() >= 0.999 && m.precision() >= 0.999, "{m:?}");

    let rate = count_rate(&found, duration, None).unwrap();
    assert!((rate.overall.count as f64 - 1000.0).abs() <= 1.0);
}

#[test]
fn edge_times_recovered_at_50_msps() {
    let params = DetectorParams {
        noise_sigma_v: 0.0,
        ..DetectorParams::default()
    };
    let (truth, duration) = separated_events(20, 5);
    let trace = synthesize_trace(&truth, &params, duration, 50e6, 5).unwrap();
    let found = detect_events(&trace, &DetectOptions::default()).unwrap();
    assert_eq!(found.len(), 20);
    for (c, r) in found.captures.iter().zip(&found.releases) {
        let e = edge_times(&trace, *c, r.unwrap(), &EdgeOptions::default()).unwrap();
        assert!((e.fall_us / 2.3 - 1.0).abs() < 0.05, "{e:?}");
        assert!((e.rise_us / 2.1 - 1.0).abs() < 0.05, "{e:?}");
    }
}

#[test]
fn dark_windows_share_one_rate() {
    let rec = simulate(&device(720.0), &unpolarized(1e4, 0.0), 20.0, 12).unwrap();
    let w = count_rate(&rec, 20.0, Some(1.0)).unwrap();
    assert_eq!(w.window_counts.len(), 20);
    assert!(w.p_value > 0.01, "{w:?}");
    assert!((w.overall.rate_hz - 720.0).abs() < 4.0 * w.overall.sigma_hz);
}

#[test]
fn shutter_difference_recovers_configured_eqe() {
    let params = device(720.0);
    let (f, n_bar, t) = (1e4, 0.05, 600.0);
    let truth = params.efficiency(Polarization::Unpolarized);
    assert!((truth - 0.2133).abs() < 1e-12);
    let light = simulate(&params, &unpolarized(f, n_bar), t, 100).unwrap();
    let dark = simulate(&params, &unpolarized(f, 0.0), t, 101).unwrap();
    let r = estimate_eqe(light.len() as u64, dark.len() as u64, n_bar, f, t).unwrap();
    assert!((r.eqe - truth).abs() < 3.0 * r.eqe_sigma, "{r:?}");
}

#[test]
fn doubling_absorptance_doubles_eqe() {
    let (f, n_bar, t) = (1e4, 0.05, 300.0);
    let half = DetectorParams {
        absorptance_armchair: 0.214,
        ..device(720.0)
    };
    let full = DetectorParams {
        absorptance_armchair: 0.428,
        ..device(720.0)
    };
    let src = CoherentPulseTrain::new(1550.0, f, n_bar, Polarization::Linear { angle_deg: 0.0 }).unwrap();
    let dark = simulate(&half, &unpolarized(f, 0.0), t, 7).unwrap().len() as u64;
    let a = estimate_eqe(simulate(&half, &src, t, 8).unwrap().len() as u64, dark, n_bar, f, t).unwrap();
    let b = estimate_eqe(simulate(&full, &src, t, 9).unwrap().len() as u64, dark, n_bar, f, t).unwrap();
    let ratio = b.eqe / a.eqe;
    let ratio_sigma = ratio * ((a.eqe_sigma / a.eqe).powi(2) + (b.eqe_sigma / b.eqe).powi(2)).sqrt();
    assert!((ratio - 2.0).abs() < 3.0 * ratio_sigma, "{ratio} ± {ratio_sigma}");
}

#[test]
fn dark_subtraction_is_linear_in_common_offsets() {
    let base = estimate_eqe(5200, 4300, 0.05, 1e4, 1.0).unwrap();
    for extra in [1u64, 100, 10_000] {
        let shifted = estimate_eqe(5200 + extra, 4300 + extra, 0.05, 1e4, 1.0).unwrap();
        assert!((shifted.eqe - base.eqe).abs() < 1e-12);
        assert!(shifted.eqe_sigma >= base.eqe_sigma);
    }
}

#[test]
fn estimator_error_shrinks_as_root_duration() {
    let params = device(720.0);
    let truth = params.efficiency(Polarization::Unpolarized);
    let (f, n_bar) = (1e4, 0.05);
    let rms = |t: f64| {
        let trials = 24;
        let sq: f64 = (0..trials)
            .map(|k| {
                let l = simulate_trial(&params, &unpolarized(f, n_bar), t, 500, k)
                    .unwrap()
                    .len() as u64;
                let d = simulate_trial(&params, &unpolarized(f, 0.0), t, 600, k).unwrap().len() as u64;
                (estimate_eqe(l, d, n_bar, f, t).unwrap().eqe - truth).powi(2)
            })
            .sum();
        (sq / trials as f64).sqrt()
    };
    let ratio = rms(4.0) / rms(64.0);
    // √16 = 4; a 24-trial RMS scatters by roughly 15 %
    assert!((2.5..6.0).contains(&ratio), "{ratio}");
}

#[test]
fn frequency_sweep_slope_and_residuals() {
    let params = device(720.0);
    let truth = params.efficiency(Polarization::Unpolarized);
    let (n_bar, t) = (0.05, 20.0);
    let freqs = [1e3, 2e3, 5e3, 1e4, 2e4];
    let mut residuals = Vec::new();
    let mut slopes = Vec::new();
    for sweep in 0..20u64 {
        let points: Vec<(f64, u64)> = freqs
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let rec = simulate_trial(&params, &unpolarized(f, n_bar), t, 900 + sweep, i as u64).unwrap();
                (f, rec.len() as u64)
            })
            .collect();
        let fit = eqe_from_frequency_sweep(&points, n_bar, t).unwrap();
        slopes.push(fit.eqe_from_slope);
        residuals.extend(fit.standardized_residuals);
    }
    // sweep-to-sweep scatter, since each fit's own error has only 3 dof
    let k = slopes.len() as f64;
    let mean_slope = slopes.iter().sum::<f64>() / k;
    let sd = (slopes.iter().map(|s| (s - mean_slope).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    assert!(
        (mean_slope - truth).abs() < 3.0 * sd / k.sqrt(),
        "{mean_slope} ± {}",
        sd / k.sqrt()
    );
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let m2 = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let m3 = residuals.iter().map(|r| (r - mean).powi(3)).sum::<f64>() / n;
    let skew = m3 / m2.powf(1.5);
    assert!(skew.abs() < 0.5, "skew {skew}");
}
