//! Weak coherent pulse trains: Poisson photon statistics, the polarizer /
//! splitter / attenuator chain that sets the mean photon number, and the
//! power-meter calibration that infers it.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Planck constant, J·s (exact SI value).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Speed of light in vacuum, m/s (exact SI value).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Relative uncertainty of the calibrated power meter.
pub const DEFAULT_POWER_UNCERTAINTY: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum SourceError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("tap fraction must lie in (0, 1), got {0}")]
    TapFraction(f64),
    #[error("stage {index}: {msg}")]
    InvalidStage { index: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, SourceError>;

fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(SourceError::NonPositive { name, value })
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<f64> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(SourceError::Negative { name, value })
    }
}

/// Energy of one photon, J.
pub fn photon_energy(wavelength_nm: f64) -> f64 {
    PLANCK * SPEED_OF_LIGHT / (wavelength_nm * 1e-9)
}

/// Probability that a coherent state of mean `mean` holds exactly `n`
/// photons: `e^{-n̄} n̄^n / n!`, evaluated in log space.
pub fn poisson_pmf(mean: f64, n: u64) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let n_f = n as f64;
    let log_p = -mean + n_f * mean.ln() - statrs::function::gamma::ln_gamma(n_f + 1.0);
    log_p.exp()
}

/// Probability of two or more photons in a pulse, `1 - e^{-n̄}(1 + n̄)`.
pub fn multi_photon_probability(mean: f64) -> f64 {
    // -expm1(-n̄) = 1 - e^{-n̄} keeps precision when n̄ ≪ 1
    -(-mean).exp_m1() - mean * (-mean).exp()
}

/// `n̄ = P̄ λ / (h c f)`.
pub fn mean_photons_from_power(power_w: f64, wavelength_nm: f64, rep_rate_hz: f64) -> Result<f64> {
    let p = positive("power", power_w)?;
    let w = positive("wavelength", wavelength_nm)?;
    let f = positive("repetition rate", rep_rate_hz)?;
    Ok(p / (photon_energy(w) * f))
}

/// `P̄ = n̄ h ν f`.
pub fn power_from_mean_photons(mean: f64, wavelength_nm: f64, rep_rate_hz: f64) -> Result<f64> {
    let n = positive("mean photon number", mean)?;
    let w = positive("wavelength", wavelength_nm)?;
    let f = positive("repetition rate", rep_rate_hz)?;
    Ok(n * photon_energy(w) * f)
}

/// Beam polarization in the lab frame. Angles are measured from the
/// detector's armchair axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Polarization {
    Linear { angle_deg: f64 },
    Unpolarized,
}

impl Default for Polarization {
    fn default() -> Self {
        Polarization::Linear { angle_deg: 0.0 }
    }
}

impl Polarization {
    /// Fraction of power along the armchair axis.
    pub fn armchair_fraction(&self) -> f64 {
        match *self {
            Polarization::Linear { angle_deg } => angle_deg.to_radians().cos().powi(2),
            Polarization::Unpolarized => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentPulseTrain {
    pub wavelength_nm: f64,
    pub repetition_rate_hz: f64,
    pub mean_photons: f64,
    #[serde(default)]
    pub polarization: Polarization,
}

impl CoherentPulseTrain {
    pub fn new(
        wavelength_nm: f64,
        repetition_rate_hz: f64,
        mean_photons: f64,
        polarization: Polarization,
    ) -> Result<Self> {
        let train = Self {
            wavelength_nm,
            repetition_rate_hz,
            mean_photons,
            polarization,
        };
        train.validate()?;
        Ok(train)
    }

    pub fn validate(&self) -> Result<()> {
        positive("wavelength", self.wavelength_nm)?;
        positive("repetition rate", self.repetition_rate_hz)?;
        non_negative("mean photon number", self.mean_photons)?;
        Ok(())
    }

    /// Photons per second, `n̄ f`.
    pub fn photon_flux(&self) -> f64 {
        self.mean_photons * self.repetition_rate_hz
    }

    pub fn average_power(&self) -> f64 {
        self.photon_flux() * photon_energy(self.wavelength_nm)
    }

    /// Photon number of one pulse.
    pub fn sample_pulse<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        sample_poisson(self.mean_photons, rng)
    }

    pub fn sample_pulses<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<u64> {
        if self.mean_photons == 0.0 {
            return vec![0; count];
        }
        let dist = Poisson::new(self.mean_photons).expect("mean validated positive");
        (0..count).map(|_| dist.sample(rng) as u64).collect()
    }
}

pub(crate) fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Stage {
    /// Linear polarizer with its transmission axis at `angle_deg`.
    Polarizer { angle_deg: f64 },
    /// Beam splitter; the chain follows the pass arm, which carries
    /// `1 - tap_fraction` of the power.
    Splitter { tap_fraction: f64 },
    /// Neutral-density attenuation.
    Attenuator { transmittance: f64 },
    /// Multimode fiber: scrambles polarization without loss.
    Fiber,
}

impl Stage {
    /// Power transmittance for an input state, and the output state.
    pub fn transmit(&self, input: Polarization) -> (f64, Polarization) {
        match *self {
            Stage::Polarizer { angle_deg } => {
                let t = match input {
                    Polarization::Linear { angle_deg: a } => (angle_deg - a).to_radians().cos().powi(2),
                    Polarization::Unpolarized => 0.5,
                };
                (t, Polarization::Linear { angle_deg })
            }
            Stage::Splitter { tap_fraction } => (1.0 - tap_fraction, input),
            Stage::Attenuator { transmittance } => (transmittance, input),
            Stage::Fiber => (1.0, Polarization::Unpolarized),
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |msg: String| Err(SourceError::InvalidStage { index, msg });
        match *self {
            Stage::Polarizer { angle_deg } if !angle_deg.is_finite() => bad("non-finite angle".into()),
            Stage::Splitter { tap_fraction } if !(0.0..=1.0).contains(&tap_fraction) => {
                bad(format!("tap fraction {tap_fraction} outside [0, 1]"))
            }
            Stage::Attenuator { transmittance } if !(transmittance > 0.0 && transmittance <= 1.0) => {
                bad(format!("transmittance {transmittance} outside (0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpticalChain {
    pub stages: Vec<Stage>,
}

impl OpticalChain {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        let chain = Self { stages };
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        self.stages.iter().enumerate().try_for_each(|(i, s)| s.validate(i))
    }

    /// Product of stage transmittances for `input`, and the output state.
    pub fn transmit(&self, input: Polarization) -> (f64, Polarization) {
        self.stages.iter().fold((1.0, input), |(t, pol), stage| {
            let (ts, out) = stage.transmit(pol);
            (t * ts, out)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerReading {
    pub mean_power_w: f64,
    #[serde(default = "default_uncertainty")]
    pub relative_uncertainty: f64,
    #[serde(default)]
    pub polarization: Polarization,
}

fn default_uncertainty() -> f64 {
    DEFAULT_POWER_UNCERTAINTY
}

impl PowerReading {
    pub fn new(mean_power_w: f64) -> Result<Self> {
        non_negative("power", mean_power_w)?;
        Ok(Self {
            mean_power_w,
            relative_uncertainty: DEFAULT_POWER_UNCERTAINTY,
            polarization: Polarization::default(),
        })
    }
}

/// Anything whose intensity scales with the chain transmittance.
pub trait Attenuate: Sized {
    fn apply_chain(&self, chain: &OpticalChain) -> Self;
}

impl Attenuate for CoherentPulseTrain {
    /// Attenuation keeps the state coherent; only `n̄` shrinks.
    fn apply_chain(&self, chain: &OpticalChain) -> Self {
        let (t, polarization) = chain.transmit(self.polarization);
        Self {
            mean_photons: self.mean_photons * t,
            polarization,
            ..*self
        }
    }
}

impl Attenuate for PowerReading {
    fn apply_chain(&self, chain: &OpticalChain) -> Self {
        let (t, polarization) = chain.transmit(self.polarization);
        Self {
            mean_power_w: self.mean_power_w * t,
            polarization,
            ..*self
        }
    }
}

pub fn apply_chain<T: Attenuate>(input: &T, chain: &OpticalChain) -> T {
    input.apply_chain(chain)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub n_bar: f64,
    pub n_bar_sigma: f64,
    pub power_device_watts: f64,
}

/// Infers the device-plane `n̄` from a power reading on the tap arm of a
/// splitter. The pass arm carries `(1 - tap)/tap` times the tapped power and
/// then traverses `post_tap`. The meter's relative uncertainty maps
/// one-to-one onto `n̄`.
pub fn calibrate_flux(
    reading: &PowerReading,
    tap_fraction: f64,
    post_tap: &OpticalChain,
    wavelength_nm: f64,
    rep_rate_hz: f64,
) -> Result<Calibration> {
    if !(tap_fraction > 0.0 && tap_fraction < 1.0) {
        return Err(SourceError::TapFraction(tap_fraction));
    }
    non_negative("power", reading.mean_power_w)?;
    non_negative("relative uncertainty", reading.relative_uncertainty)?;
    post_tap.validate()?;
    positive("wavelength", wavelength_nm)?;
    positive("repetition rate", rep_rate_hz)?;

    let (t, _) = post_tap.transmit(reading.polarization);
    let power_device = reading.mean_power_w * (1.0 - tap_fraction) / tap_fraction * t;
    let n_bar = power_device / (photon_energy(wavelength_nm) * rep_rate_hz);
    Ok(Calibration {
        n_bar,
        n_bar_sigma: n_bar * reading.relative_uncertainty,
        power_device_watts: power_device,
    })
}
