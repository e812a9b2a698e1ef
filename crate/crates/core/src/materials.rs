//! Tabulated complex refractive indices.
//!
//! Each material is a table of `(wavelength_nm, n, k)` rows, linearly
//! interpolated in `n` and `k` separately. Anisotropic materials (black
//! phosphorus) carry an armchair and a zigzag column pair sampled on the same
//! wavelength grid. Wavelengths outside the table are rejected rather than
//! extrapolated.
//!
//! The on-disk format is plain text: `#` comment lines (a provenance header is
//! mandatory) followed by CSV rows `wavelength_nm,n,k` or
//! `wavelength_nm,n_ac,k_ac,n_zz,k_zz`. A single column-name row is allowed
//! after the comments.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaterialError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: negative extinction k = {k}")]
    NegativeExtinction { line: usize, k: f64 },
    #[error("line {line}: negative refractive index n = {n}")]
    NegativeIndex { line: usize, n: f64 },
    #[error("line {line}: wavelength {wavelength} nm is not strictly increasing")]
    Unsorted { line: usize, wavelength: f64 },
    #[error("dispersion file has no provenance header")]
    MissingProvenance,
    #[error("dispersion table is empty")]
    Empty,
    #[error("{material}: wavelength {wavelength} nm outside table range [{min}, {max}] nm")]
    OutOfRange {
        material: String,
        wavelength: f64,
        min: f64,
        max: f64,
    },
    #[error("{0}: anisotropic material needs an armchair or zigzag axis")]
    AxisRequired(String),
    #[error("unknown bundled material `{0}`")]
    UnknownMaterial(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MaterialError>;

/// Polarization with respect to the black-phosphorus crystal axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarizationState {
    Armchair,
    Zigzag,
    /// Responses are the arithmetic mean of the armchair and zigzag responses.
    Unpolarized,
}

impl std::fmt::Display for PolarizationState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PolarizationState::Armchair => "armchair",
            PolarizationState::Zigzag => "zigzag",
            PolarizationState::Unpolarized => "unpolarized",
        })
    }
}

/// Real and imaginary parts of the refractive index at one wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nk {
    pub n: f64,
    pub k: f64,
}

impl Nk {
    pub fn new(n: f64, k: f64) -> Self {
        Self { n, k }
    }

    pub fn complex(self) -> Complex64 {
        Complex64::new(self.n, self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialDispersion {
    name: String,
    provenance: Vec<String>,
    wavelength_nm: Vec<f64>,
    armchair: Vec<Nk>,
    zigzag: Option<Vec<Nk>>,
}

impl MaterialDispersion {
    /// Isotropic table. Rows must be sorted by wavelength with `n, k >= 0`.
    pub fn isotropic(name: impl Into<String>, rows: &[(f64, f64, f64)]) -> Result<Self> {
        let wavelength_nm = rows.iter().map(|r| r.0).collect();
        let nk = rows.iter().map(|r| Nk::new(r.1, r.2)).collect();
        let m = Self {
            name: name.into(),
            provenance: Vec::new(),
            wavelength_nm,
            armchair: nk,
            zigzag: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// Two-axis table; each row is `(wavelength, armchair, zigzag)`.
    pub fn anisotropic(name: impl Into<String>, rows: &[(f64, Nk, Nk)]) -> Result<Self> {
        let m = Self {
            name: name.into(),
            provenance: Vec::new(),
            wavelength_nm: rows.iter().map(|r| r.0).collect(),
            armchair: rows.iter().map(|r| r.1).collect(),
            zigzag: Some(rows.iter().map(|r| r.2).collect()),
        };
        m.validate()?;
        Ok(m)
    }

    /// Constant-index material valid over `[lo, hi]` nm.
    pub fn constant(name: impl Into<String>, nk: Nk, lo: f64, hi: f64) -> Result<Self> {
        Self::isotropic(name, &[(lo, nk.n, nk.k), (hi, nk.n, nk.k)])
    }

    pub fn with_provenance(mut self, lines: Vec<String>) -> Self {
        self.provenance = lines;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    pub fn is_anisotropic(&self) -> bool {
        self.zigzag.is_some()
    }

    pub fn len(&self) -> usize {
        self.wavelength_nm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelength_nm.is_empty()
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelength_nm
    }

    pub fn range(&self) -> (f64, f64) {
        (self.wavelength_nm[0], self.wavelength_nm[self.wavelength_nm.len() - 1])
    }

    pub fn covers(&self, wavelength_nm: f64) -> bool {
        let (lo, hi) = self.range();
        wavelength_nm >= lo && wavelength_nm <= hi
    }

    fn validate(&self) -> Result<()> {
        if self.wavelength_nm.is_empty() {
            return Err(MaterialError::Empty);
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, &w) in self.wavelength_nm.iter().enumerate() {
            let line = i + 1;
            if !(w.is_finite() && w > 0.0) {
                return Err(MaterialError::Parse {
                    line,
                    msg: format!("wavelength {w} must be positive"),
                });
            }
            if w <= prev {
                return Err(MaterialError::Unsorted { line, wavelength: w });
            }
            prev = w;
            let axes = std::iter::once(&self.armchair).chain(self.zigzag.as_ref());
            for column in axes {
                let nk = column[i];
                if !(nk.n.is_finite() && nk.k.is_finite()) {
                    return Err(MaterialError::Parse {
                        line,
                        msg: "non-finite index".into(),
                    });
                }
                if nk.n < 0.0 {
                    return Err(MaterialError::NegativeIndex { line, n: nk.n });
                }
                if nk.k < 0.0 {
                    return Err(MaterialError::NegativeExtinction { line, k: nk.k });
                }
            }
        }
        Ok(())
    }

    /// Complex index `n + ik` at `wavelength_nm`, linearly interpolated.
    ///
    /// Isotropic materials ignore `axis`. Anisotropic materials require
    /// armchair or zigzag.
    pub fn index_at(&self, wavelength_nm: f64, axis: PolarizationState) -> Result<Complex64> {
        let column = match (&self.zigzag, axis) {
            (None, _) => &self.armchair,
            (Some(_), PolarizationState::Armchair) => &self.armchair,
            (Some(zz), PolarizationState::Zigzag) => zz,
            (Some(_), PolarizationState::Unpolarized) => return Err(MaterialError::AxisRequired(self.name.clone())),
        };
        let (lo, hi) = self.range();
        if !(wavelength_nm >= lo && wavelength_nm <= hi) {
            return Err(MaterialError::OutOfRange {
                material: self.name.clone(),
                wavelength: wavelength_nm,
                min: lo,
                max: hi,
            });
        }
        let w = &self.wavelength_nm;
        // first node strictly greater than the query
        let upper = w.partition_point(|&x| x <= wavelength_nm);
        if upper == 0 {
            return Ok(column[0].complex());
        }
        let i = upper - 1;
        if w[i] == wavelength_nm || i + 1 == w.len() {
            return Ok(column[i].complex());
        }
        let t = (wavelength_nm - w[i]) / (w[i + 1] - w[i]);
        let (a, b) = (column[i], column[i + 1]);
        Ok(Complex64::new(a.n + t * (b.n - a.n), a.k + t * (b.k - a.k)))
    }

    /// Parses the dispersion text format. `fallback_name` is used when the
    /// header carries no `# material:` line.
    pub fn parse(text: &str, fallback_name: &str) -> Result<Self> {
        let mut provenance = Vec::new();
        let mut name = None;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut width = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(n) = comment.strip_prefix("material:") {
                    name = Some(n.trim().to_string());
                }
                provenance.push(comment.to_string());
                continue;
            }
            if rows.is_empty() && line.starts_with("wavelength") {
                continue;
            }
            let values = line
                .split(',')
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| MaterialError::Parse {
                        line: line_no,
                        msg: format!("`{}`: {e}", f.trim()),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != 3 && values.len() != 5 {
                return Err(MaterialError::Parse {
                    line: line_no,
                    msg: format!("expected 3 or 5 columns, found {}", values.len()),
                });
            }
            match width {
                None => width = Some(values.len()),
                Some(w) if w != values.len() => {
                    return Err(MaterialError::Parse {
                        line: line_no,
                        msg: format!("expected {w} columns, found {}", values.len()),
                    })
                }
                _ => {}
            }
            rows.push((line_no, values));
        }
        if provenance.is_empty() {
            return Err(MaterialError::MissingProvenance);
        }
        if rows.is_empty() {
            return Err(MaterialError::Empty);
        }

        // Row-level checks report the file line number.
        let mut prev = f64::NEG_INFINITY;
        for (line, v) in &rows {
            let line = *line;
            if !(v[0].is_finite() && v[0] > 0.0) {
                return Err(MaterialError::Parse {
                    line,
                    msg: format!("wavelength {} must be positive", v[0]),
                });
            }
            if v[0] <= prev {
                return Err(MaterialError::Unsorted { line, wavelength: v[0] });
            }
            prev = v[0];
            for pair in v[1..].chunks(2) {
                if pair[0] < 0.0 {
                    return Err(MaterialError::NegativeIndex { line, n: pair[0] });
                }
                if pair[1] < 0.0 {
                    return Err(MaterialError::NegativeExtinction { line, k: pair[1] });
                }
            }
        }

        let anisotropic = width == Some(5);
        let m = Self {
            name: name.unwrap_or_else(|| fallback_name.to_string()),
            provenance,
            wavelength_nm: rows.iter().map(|(_, v)| v[0]).collect(),
            armchair: rows.iter().map(|(_, v)| Nk::new(v[1], v[2])).collect(),
            zigzag: anisotropic.then(|| rows.iter().map(|(_, v)| Nk::new(v[3], v[4])).collect()),
        };
        m.validate()?;
        Ok(m)
    }

    /// Renders the table back into the dispersion text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut wrote_name = false;
        for line in &self.provenance {
            wrote_name |= line.starts_with("material:");
            let _ = writeln!(out, "# {line}");
        }
        if !wrote_name {
            let _ = writeln!(out, "# material: {}", self.name);
        }
        match &self.zigzag {
            None => {
                out.push_str("wavelength_nm,n,k\n");
                for (w, nk) in self.wavelength_nm.iter().zip(&self.armchair) {
                    let _ = writeln!(out, "{w},{},{}", nk.n, nk.k);
                }
            }
            Some(zz) => {
                out.push_str("wavelength_nm,n_ac,k_ac,n_zz,k_zz\n");
                for ((w, ac), zz) in self.wavelength_nm.iter().zip(&self.armchair).zip(zz) {
                    let _ = writeln!(out, "{w},{},{},{},{}", ac.n, ac.k, zz.n, zz.k);
                }
            }
        }
        out
    }
}

/// Reads and validates a dispersion file.
pub fn load_dispersion(path: impl AsRef<Path>) -> Result<MaterialDispersion> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("material");
    MaterialDispersion::parse(&text, stem)
}

pub fn save_dispersion(material: &MaterialDispersion, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, material.to_text())?;
    Ok(())
}

const BUNDLED: &[(&str, &str)] = &[
    ("air", include_str!("../data/air.csv")),
    ("hBN", include_str!("../data/hbn.csv")),
    ("BP", include_str!("../data/bp.csv")),
    ("MoS2", include_str!("../data/mos2.csv")),
    ("WSe2", include_str!("../data/wse2.csv")),
    ("Au", include_str!("../data/au.csv")),
    ("Ti", include_str!("../data/ti.csv")),
    ("SiO2", include_str!("../data/sio2.csv")),
    ("Si", include_str!("../data/si.csv")),
];

/// Names of the materials shipped with the crate.
pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Looks up a shipped material by name (case-insensitive).
pub fn bundled(name: &str) -> Result<MaterialDispersion> {
    BUNDLED
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(n, text)| MaterialDispersion::parse(text, n))
        .unwrap_or_else(|| Err(MaterialError::UnknownMaterial(name.to_string())))
}
