//! One TOML document per experiment. Every section has defaults, so an
//! empty document is a valid configuration for the default device.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::DetectOptions;
use crate::detsim::DetectorParams;
use crate::materials::{self, MaterialDispersion, PolarizationState};
use crate::source::{
    apply_chain, CoherentPulseTrain, OpticalChain, Polarization, SourceError, DEFAULT_POWER_UNCERTAINTY,
};
use crate::tmm::{self, Layer, LayerStack, OptimizeOptions, SweepTemplate, ThicknessBounds};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{key}: {msg}")]
    Invalid { key: String, msg: String },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

fn invalid(key: impl Into<String>, msg: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        msg: msg.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stack: StackConfig,
    pub source: SourceConfig,
    pub detector: DetectorParams,
    pub analysis: AnalysisConfig,
    pub run: RunConfig,
}

/// One layer, top to bottom. `material` is a bundled material name or a
/// path to a dispersion file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub material: String,
    pub thickness_nm: f64,
}

impl LayerSpec {
    fn new(name: &str, material: &str, thickness_nm: f64) -> Self {
        Self {
            name: name.into(),
            material: material.into(),
            thickness_nm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackConfig {
    pub wavelength_nm: f64,
    pub axis: PolarizationState,
    pub incident: String,
    pub exit: String,
    pub layers: Vec<LayerSpec>,
    /// Labels of the swept spacers and of the reported absorber.
    pub top_layer: String,
    pub bottom_layer: String,
    pub absorber: String,
    pub bounds: ThicknessBounds,
    pub optimize: OptimizeOptions,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            wavelength_nm: 1550.0,
            axis: PolarizationState::Armchair,
            incident: "air".into(),
            exit: "Si".into(),
            layers: vec![
                LayerSpec::new(tmm::TOP_HBN, "hBN", 347.0),
                LayerSpec::new(tmm::ABSORBER, "BP", tmm::BP_THICKNESS_NM),
                LayerSpec::new("mos2", "MoS2", tmm::MOS2_THICKNESS_NM),
                LayerSpec::new("wse2", "WSe2", tmm::WSE2_THICKNESS_NM),
                LayerSpec::new(tmm::BOTTOM_HBN, "hBN", 85.0),
                LayerSpec::new("au", "Au", tmm::AU_THICKNESS_NM),
                LayerSpec::new("ti", "Ti", tmm::TI_THICKNESS_NM),
                LayerSpec::new("sio2", "SiO2", tmm::SIO2_THICKNESS_NM),
            ],
            top_layer: tmm::TOP_HBN.into(),
            bottom_layer: tmm::BOTTOM_HBN.into(),
            absorber: tmm::ABSORBER.into(),
            bounds: ThicknessBounds::default(),
            optimize: OptimizeOptions::default(),
        }
    }
}

fn resolve_material(spec: &str, base: Option<&Path>) -> std::result::Result<MaterialDispersion, String> {
    let looks_like_path = spec.contains('/') || spec.contains('\\') || spec.contains('.');
    if !looks_like_path {
        return materials::bundled(spec).map_err(|e| e.to_string());
    }
    let path = match base {
        Some(b) if Path::new(spec).is_relative() => b.join(spec),
        _ => PathBuf::from(spec),
    };
    materials::load_dispersion(&path).map_err(|e| format!("{}: {e}", path.display()))
}

impl StackConfig {
    /// Builds the stack, loading file-based materials relative to `base`.
    pub fn build(&self, base: Option<&Path>) -> Result<LayerStack> {
        let incident = resolve_material(&self.incident, base).map_err(|m| invalid("stack.incident", m))?;
        let exit = resolve_material(&self.exit, base).map_err(|m| invalid("stack.exit", m))?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let m =
                resolve_material(&l.material, base).map_err(|m| invalid(format!("stack.layers[{i}].material"), m))?;
            layers.push(Layer::new(l.name.clone(), Arc::new(m), l.thickness_nm));
        }
        Ok(LayerStack::new(Arc::new(incident), layers, Arc::new(exit)))
    }

    pub fn template(&self, base: Option<&Path>) -> Result<SweepTemplate> {
        let stack = self.build(base)?;
        SweepTemplate::from_labels(stack, &self.top_layer, &self.bottom_layer, &self.absorber)
            .map_err(|e| invalid("stack", e))
    }

    fn validate(&self) -> Result<()> {
        if !(self.wavelength_nm > 0.0 && self.wavelength_nm.is_finite()) {
            return Err(invalid("stack.wavelength_nm", "must be positive"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !(l.thickness_nm >= 0.0 && l.thickness_nm.is_finite()) {
                return Err(invalid(format!("stack.layers[{i}].thickness_nm"), "must be >= 0"));
            }
        }
        for (key, label) in [
            ("stack.top_layer", &self.top_layer),
            ("stack.bottom_layer", &self.bottom_layer),
            ("stack.absorber", &self.absorber),
        ] {
            if !self.layers.iter().any(|l| &l.name == label) {
                return Err(invalid(key, format!("no layer named `{label}`")));
            }
        }
        for (key, (lo, hi)) in [
            ("stack.bounds.top_nm", self.bounds.top_nm),
            ("stack.bounds.bottom_nm", self.bounds.bottom_nm),
        ] {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return Err(invalid(key, format!("bad bounds [{lo}, {hi}]")));
            }
        }
        if !(self.optimize.grid_step_nm > 0.0) {
            return Err(invalid("stack.optimize.grid_step_nm", "must be positive"));
        }
        if !(self.optimize.tolerance_nm > 0.0) {
            return Err(invalid("stack.optimize.tolerance_nm", "must be positive"));
        }
        Ok(())
    }
}

/// Tapped power reading used by `source calibrate`; the post-tap chain is
/// [`SourceConfig::chain`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub tap_power_w: f64,
    pub tap_fraction: f64,
    #[serde(default = "default_uncertainty")]
    pub relative_uncertainty: f64,
}

fn default_uncertainty() -> f64 {
    DEFAULT_POWER_UNCERTAINTY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub wavelength_nm: f64,
    pub repetition_rate_hz: f64,
    /// Mean photon number per pulse entering the chain.
    pub mean_photons: f64,
    pub polarization: Polarization,
    pub chain: OpticalChain,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationConfig>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            wavelength_nm: 1550.0,
            repetition_rate_hz: 10_000.0,
            mean_photons: 0.05,
            polarization: Polarization::Unpolarized,
            chain: OpticalChain::default(),
            calibration: None,
        }
    }
}

impl SourceConfig {
    pub fn train(&self) -> CoherentPulseTrain {
        CoherentPulseTrain {
            wavelength_nm: self.wavelength_nm,
            repetition_rate_hz: self.repetition_rate_hz,
            mean_photons: self.mean_photons,
            polarization: self.polarization,
        }
    }

    /// The pulse train as it reaches the detector.
    pub fn device_train(&self) -> CoherentPulseTrain {
        apply_chain(&self.train(), &self.chain)
    }

    fn validate(&self) -> Result<()> {
        self.train().validate().map_err(|e| {
            let key = match e {
                SourceError::NonPositive { name: "wavelength", .. } => "source.wavelength_nm",
                SourceError::NonPositive {
                    name: "repetition rate",
                    ..
                } => "source.repetition_rate_hz",
                _ => "source.mean_photons",
            };
            invalid(key, e)
        })?;
        self.chain.validate().map_err(|e| match e {
            SourceError::InvalidStage { index, msg } => invalid(format!("source.chain.stages[{index}]"), msg),
            other => invalid("source.chain", other),
        })?;
        if let Some(c) = &self.calibration {
            if !(c.tap_fraction > 0.0 && c.tap_fraction < 1.0) {
                return Err(invalid("source.calibration.tap_fraction", "must lie in (0, 1)"));
            }
            if !(c.tap_power_w >= 0.0) {
                return Err(invalid("source.calibration.tap_power_w", "must be >= 0"));
            }
            if !(c.relative_uncertainty >= 0.0) {
                return Err(invalid("source.calibration.relative_uncertainty", "must be >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub detect: DetectOptions,
    pub histogram_bin_v: f64,
    /// Window for the constant-rate check of count records.
    pub count_window_s: f64,
    pub flux_uncertainty: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            detect: DetectOptions::default(),
            histogram_bin_v: 0.002,
            count_window_s: 1.0,
            flux_uncertainty: DEFAULT_POWER_UNCERTAINTY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub duration_s: f64,
    pub seed: u64,
    pub out: PathBuf,
    /// Only the first `trace_duration_s` of a run is rendered as a trace.
    pub trace_duration_s: f64,
    pub sample_rate_hz: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            duration_s: 1.0,
            seed: 0,
            out: PathBuf::from("out"),
            trace_duration_s: 0.01,
            sample_rate_hz: 50.0e6,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Checks every section, naming the offending key on failure.
    pub fn validate(&self) -> Result<()> {
        self.stack.validate()?;
        self.source.validate()?;
        self.detector.validate().map_err(|e| {
            let text = e.to_string();
            let msg = text.trim_start_matches("invalid detector parameter: ");
            let field = msg.split_whitespace().next().unwrap_or("");
            invalid(format!("detector.{field}"), msg)
        })?;
        let d = &self.analysis.detect;
        if !(d.hysteresis_v > 0.0 && d.threshold_v > d.hysteresis_v) {
            return Err(invalid("analysis.detect", "need threshold_v > hysteresis_v > 0"));
        }
        if !(self.analysis.histogram_bin_v > 0.0) {
            return Err(invalid("analysis.histogram_bin_v", "must be positive"));
        }
        if !(self.analysis.count_window_s > 0.0) {
            return Err(invalid("analysis.count_window_s", "must be positive"));
        }
        if !(self.run.duration_s > 0.0 && self.run.duration_s.is_finite()) {
            return Err(invalid("run.duration_s", "must be positive"));
        }
        if !(self.run.trace_duration_s >= 0.0) {
            return Err(invalid("run.trace_duration_s", "must be >= 0"));
        }
        if !(self.run.sample_rate_hz > 0.0) {
            return Err(invalid("run.sample_rate_hz", "must be positive"));
        }
        Ok(())
    }
}
