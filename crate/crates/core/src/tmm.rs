//! Normal-incidence transfer-matrix optics for planar stacks.
//!
//! Layers are described by characteristic matrices in the admittance form
//!
//! ```text
//! M = [[cos δ, i sin δ / η], [i η sin δ, cos δ]],   δ = 2π N d / λ,   η = N
//! ```
//!
//! with `N = n - ik`. Tabulated indices are stored as `n + ik`, so they are
//! conjugated on the way in. Admittances are in units of the free-space
//! admittance.
//!
//! Anisotropic layers are handled as two independent scalar problems, one per
//! crystal axis; an unpolarized response is the mean of the two.

use std::ops::Mul;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::materials::{self, MaterialDispersion, MaterialError, Nk, PolarizationState};

#[derive(Debug, Error)]
pub enum TmmError {
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("layer `{name}` has negative thickness {thickness} nm")]
    NegativeThickness { name: String, thickness: f64 },
    #[error("incident medium `{0}` must be lossless at the evaluation wavelength")]
    LossyIncidentMedium(String),
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("sweep grid must be strictly increasing")]
    UnsortedGrid,
    #[error("invalid thickness bounds [{0}, {1}] nm")]
    InvalidBounds(f64, f64),
    #[error("no layer labelled `{0}` in stack")]
    UnknownLayer(String),
    #[error("layer index {0} out of range")]
    LayerIndex(usize),
}

pub type Result<T> = std::result::Result<T, TmmError>;

/// 2×2 complex matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Matrix2(pub [[Complex64; 2]; 2]);

impl Matrix2 {
    pub fn identity() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Matrix2([[one, zero], [zero, one]])
    }

    pub fn det(&self) -> Complex64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn apply(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        let m = &self.0;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }
}

impl Mul for Matrix2 {
    type Output = Matrix2;

    fn mul(self, rhs: Matrix2) -> Matrix2 {
        let (a, b) = (&self.0, &rhs.0);
        let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Matrix2(out)
    }
}

/// Characteristic matrix of a homogeneous film with physics-convention index
/// `index = n + ik`.
pub fn film_matrix(index: Complex64, thickness_nm: f64, wavelength_nm: f64) -> Matrix2 {
    let eta = index.conj();
    let delta = eta * (2.0 * std::f64::consts::PI * thickness_nm / wavelength_nm);
    let (c, s) = (delta.cos(), delta.sin());
    let i = Complex64::i();
    Matrix2([[c, i * s / eta], [i * eta * s, c]])
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub name: String,
    pub material: Arc<MaterialDispersion>,
    pub thickness_nm: f64,
}

impl Layer {
    pub fn new(name: impl Into<String>, material: Arc<MaterialDispersion>, thickness_nm: f64) -> Self {
        Self {
            name: name.into(),
            material,
            thickness_nm,
        }
    }
}

pub fn characteristic_matrix(layer: &Layer, wavelength_nm: f64, axis: PolarizationState) -> Result<Matrix2> {
    let index = layer.material.index_at(wavelength_nm, axis)?;
    Ok(film_matrix(index, layer.thickness_nm, wavelength_nm))
}

/// Layers listed top (light side) to bottom; the exit medium is
/// semi-infinite.
#[derive(Debug, Clone)]
pub struct LayerStack {
    pub incident: Arc<MaterialDispersion>,
    pub layers: Vec<Layer>,
    pub exit: Arc<MaterialDispersion>,
}

/// Default layer thicknesses of the device cross-section, in nm.
pub const BP_THICKNESS_NM: f64 = 25.0;
pub const MOS2_THICKNESS_NM: f64 = 5.0;
pub const WSE2_THICKNESS_NM: f64 = 5.0;
pub const AU_THICKNESS_NM: f64 = 40.0;
pub const TI_THICKNESS_NM: f64 = 30.0;
pub const SIO2_THICKNESS_NM: f64 = 285.0;

/// Layer labels used by [`LayerStack::device`] and [`SweepTemplate::device`].
pub const TOP_HBN: &str = "top_hbn";
pub const BOTTOM_HBN: &str = "bottom_hbn";
pub const ABSORBER: &str = "bp";

impl LayerStack {
    pub fn new(incident: Arc<MaterialDispersion>, layers: Vec<Layer>, exit: Arc<MaterialDispersion>) -> Self {
        Self { incident, layers, exit }
    }

    /// air / hBN / BP / MoS2 / WSe2 / hBN / Au / Ti / SiO2 / Si, using the
    /// bundled optical constants.
    pub fn device(top_hbn_nm: f64, bottom_hbn_nm: f64) -> Result<Self> {
        let m = |name: &str| materials::bundled(name).map(Arc::new);
        let hbn = m("hBN")?;
        Ok(Self {
            incident: m("air")?,
            layers: vec![
                Layer::new(TOP_HBN, hbn.clone(), top_hbn_nm),
                Layer::new(ABSORBER, m("BP")?, BP_THICKNESS_NM),
                Layer::new("mos2", m("MoS2")?, MOS2_THICKNESS_NM),
                Layer::new("wse2", m("WSe2")?, WSE2_THICKNESS_NM),
                Layer::new(BOTTOM_HBN, hbn, bottom_hbn_nm),
                Layer::new("au", m("Au")?, AU_THICKNESS_NM),
                Layer::new("ti", m("Ti")?, TI_THICKNESS_NM),
                Layer::new("sio2", m("SiO2")?, SIO2_THICKNESS_NM),
            ],
            exit: m("Si")?,
        })
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| TmmError::UnknownLayer(name.to_string()))
    }

    /// Same media in the opposite order (exit becomes incident).
    pub fn reversed(&self) -> Self {
        Self {
            incident: self.exit.clone(),
            layers: self.layers.iter().rev().cloned().collect(),
            exit: self.incident.clone(),
        }
    }

    fn has_anisotropic(&self) -> bool {
        std::iter::once(&self.incident)
            .chain(self.layers.iter().map(|l| &l.material))
            .chain(std::iter::once(&self.exit))
            .any(|m| m.is_anisotropic())
    }

    /// Looks up every index at one wavelength and axis.
    pub fn resolve(&self, wavelength_nm: f64, axis: PolarizationState) -> Result<ResolvedStack> {
        for l in &self.layers {
            if !(l.thickness_nm >= 0.0) {
                return Err(TmmError::NegativeThickness {
                    name: l.name.clone(),
                    thickness: l.thickness_nm,
                });
            }
        }
        let incident = self.incident.index_at(wavelength_nm, axis)?;
        if incident.im != 0.0 {
            return Err(TmmError::LossyIncidentMedium(self.incident.name().to_string()));
        }
        let layers = self
            .layers
            .iter()
            .map(|l| Ok((l.material.index_at(wavelength_nm, axis)?, l.thickness_nm)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ResolvedStack {
            wavelength_nm,
            incident: incident.re,
            layers,
            exit: self.exit.index_at(wavelength_nm, axis)?,
        })
    }
}

/// A stack with indices fixed at one wavelength and axis: `(n + ik, d_nm)`
/// per layer. Thicknesses may be edited in place for sweeps.
#[derive(Debug, Clone)]
pub struct ResolvedStack {
    pub wavelength_nm: f64,
    pub incident: f64,
    pub layers: Vec<(Complex64, f64)>,
    pub exit: Complex64,
}

impl ResolvedStack {
    pub fn total_matrix(&self) -> Matrix2 {
        self.layers.iter().fold(Matrix2::identity(), |acc, &(n, d)| {
            acc * film_matrix(n, d, self.wavelength_nm)
        })
    }

    pub fn response(&self) -> OpticalResponse {
        let eta0 = self.incident;
        let eta_exit = self.exit.conj();

        // Tangential (E, H) at every interface, walking up from the exit
        // medium where E = 1 and H = η_exit.
        let mut fields = Vec::with_capacity(self.layers.len() + 1);
        let mut v = [Complex64::new(1.0, 0.0), eta_exit];
        fields.push(v);
        for &(n, d) in self.layers.iter().rev() {
            v = film_matrix(n, d, self.wavelength_nm).apply(v);
            fields.push(v);
        }
        fields.reverse();

        let (b, c) = (fields[0][0], fields[0][1]);
        let denom = eta0 * b + c;
        let r = (eta0 * b - c) / denom;
        // incident irradiance in the same units as Re(E H*)
        let incident_flux = denom.norm_sqr() / (4.0 * eta0);
        let flux = |f: &[Complex64; 2]| (f[0] * f[1].conj()).re / incident_flux;

        let absorptance = fields.windows(2).map(|pair| flux(&pair[0]) - flux(&pair[1])).collect();
        OpticalResponse {
            reflectance: r.norm_sqr(),
            transmittance: flux(&fields[fields.len() - 1]),
            absorptance,
        }
    }
}

/// Fractions of incident power; `absorptance` is aligned with the stack layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalResponse {
    pub reflectance: f64,
    pub transmittance: f64,
    pub absorptance: Vec<f64>,
}

impl OpticalResponse {
    pub fn total_absorptance(&self) -> f64 {
        self.absorptance.iter().sum()
    }

    /// `R + T + ΣA`, which is 1 up to rounding.
    pub fn energy_sum(&self) -> f64 {
        self.reflectance + self.transmittance + self.total_absorptance()
    }

    /// Component-wise arithmetic mean.
    pub fn mean(a: &OpticalResponse, b: &OpticalResponse) -> OpticalResponse {
        OpticalResponse {
            reflectance: 0.5 * (a.reflectance + b.reflectance),
            transmittance: 0.5 * (a.transmittance + b.transmittance),
            absorptance: a
                .absorptance
                .iter()
                .zip(&b.absorptance)
                .map(|(x, y)| 0.5 * (x + y))
                .collect(),
        }
    }
}

/// Reflectance, transmittance and per-layer absorptance at normal incidence.
/// `Unpolarized` is the mean of the armchair and zigzag responses.
pub fn stack_response(stack: &LayerStack, wavelength_nm: f64, axis: PolarizationState) -> Result<OpticalResponse> {
    match axis {
        PolarizationState::Unpolarized => unpolarized_absorption(stack, wavelength_nm),
        _ => Ok(stack.resolve(wavelength_nm, axis)?.response()),
    }
}

pub fn unpolarized_absorption(stack: &LayerStack, wavelength_nm: f64) -> Result<OpticalResponse> {
    let ac = stack.resolve(wavelength_nm, PolarizationState::Armchair)?.response();
    if !stack.has_anisotropic() {
        return Ok(ac);
    }
    let zz = stack.resolve(wavelength_nm, PolarizationState::Zigzag)?.response();
    Ok(OpticalResponse::mean(&ac, &zz))
}

/// A stack plus the indices of the two swept spacer layers and the absorber
/// whose absorptance is reported.
#[derive(Debug, Clone)]
pub struct SweepTemplate {
    pub stack: LayerStack,
    pub top: usize,
    pub bottom: usize,
    pub absorber: usize,
}

impl SweepTemplate {
    pub fn new(stack: LayerStack, top: usize, bottom: usize, absorber: usize) -> Result<Self> {
        for i in [top, bottom, absorber] {
            if i >= stack.layers.len() {
                return Err(TmmError::LayerIndex(i));
            }
        }
        Ok(Self {
            stack,
            top,
            bottom,
            absorber,
        })
    }

    pub fn from_labels(stack: LayerStack, top: &str, bottom: &str, absorber: &str) -> Result<Self> {
        let (t, b, a) = (
            stack.layer_index(top)?,
            stack.layer_index(bottom)?,
            stack.layer_index(absorber)?,
        );
        Self::new(stack, t, b, a)
    }

    pub fn device() -> Result<Self> {
        Self::from_labels(LayerStack::device(0.0, 0.0)?, TOP_HBN, BOTTOM_HBN, ABSORBER)
    }

    fn axes(&self, axis: PolarizationState) -> Vec<PolarizationState> {
        match axis {
            PolarizationState::Unpolarized if self.stack.has_anisotropic() => {
                vec![PolarizationState::Armchair, PolarizationState::Zigzag]
            }
            PolarizationState::Unpolarized => vec![PolarizationState::Armchair],
            other => vec![other],
        }
    }

    /// Absorber absorptance as a function of the two spacer thicknesses.
    pub fn evaluator(
        &self,
        wavelength_nm: f64,
        axis: PolarizationState,
    ) -> Result<impl Fn(f64, f64) -> f64 + Sync + '_> {
        let resolved = self
            .axes(axis)
            .into_iter()
            .map(|a| self.stack.resolve(wavelength_nm, a))
            .collect::<Result<Vec<_>>>()?;
        let (top, bottom, absorber) = (self.top, self.bottom, self.absorber);
        Ok(move |t_top: f64, t_bottom: f64| {
            let sum: f64 = resolved
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.layers[top].1 = t_top;
                    r.layers[bottom].1 = t_bottom;
                    r.response().absorptance[absorber]
                })
                .sum();
            sum / resolved.len() as f64
        })
    }
}

/// Absorber absorptance on a (top, bottom) thickness grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionMap {
    pub top_nm: Vec<f64>,
    pub bottom_nm: Vec<f64>,
    /// `values[i][j]` is the absorptance at `top_nm[i]`, `bottom_nm[j]`.
    pub values: Vec<Vec<f64>>,
}

impl AbsorptionMap {
    /// Largest cell as `(top, bottom, value)`.
    pub fn max(&self) -> (f64, f64, f64) {
        let mut best = (self.top_nm[0], self.bottom_nm[0], f64::NEG_INFINITY);
        for (i, row) in self.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > best.2 {
                    best = (self.top_nm[i], self.bottom_nm[j], v);
                }
            }
        }
        best
    }

    /// Rows `t_top,t_bottom,A` with top thickness as the outer loop.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_top_nm,t_bottom_nm,absorptance\n");
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", self.top_nm[i], self.bottom_nm[j], v));
            }
        }
        out
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(TmmError::EmptyGrid);
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(TmmError::UnsortedGrid);
    }
    Ok(())
}

/// Inclusive grid `lo, lo + step, ...` that always ends on `hi`.
pub fn thickness_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi >= lo && step > 0.0) {
        return Err(TmmError::InvalidBounds(lo, hi));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| lo + i as f64 * step).collect();
    if hi - grid[grid.len() - 1] > 1e-9 * step.max(1.0) {
        grid.push(hi);
    } else {
        let last = grid.len() - 1;
        grid[last] = hi;
    }
    Ok(grid)
}

pub fn absorption_map(
    template: &SweepTemplate,
    top_grid: &[f64],
    bottom_grid: &[f64],
    wavelength_nm: f64,
    axis: PolarizationState,
) -> Result<AbsorptionMap> {
    check_grid(top_grid)?;
    check_grid(bottom_grid)?;
    let eval = template.evaluator(wavelength_nm, axis)?;
    let values = top_grid
        .par_iter()
        .map(|&t| bottom_grid.iter().map(|&b| eval(t, b)).collect())
        .collect();
    Ok(AbsorptionMap {
        top_nm: top_grid.to_vec(),
        bottom_nm: bottom_grid.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThicknessBounds {
    pub top_nm: (f64, f64),
    pub bottom_nm: (f64, f64),
}

impl Default for ThicknessBounds {
    fn default() -> Self {
        Self {
            top_nm: (0.0, 400.0),
            bottom_nm: (0.0, 400.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub grid_step_nm: f64,
    pub refine_rounds: usize,
    pub tolerance_nm: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            grid_step_nm: 2.0,
            refine_rounds: 4,
            tolerance_nm: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub top_nm: f64,
    pub bottom_nm: f64,
    pub absorptance: f64,
    /// Best value seen on the coarse grid before refinement.
    pub coarse_absorptance: f64,
}

/// Maximizes `f` on `[lo, hi]` by golden-section search, returning
/// `(x, f(x))`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Coarse grid search followed by alternating golden-section refinement of
/// each spacer thickness inside one grid step of the incumbent.
pub fn optimize_thicknesses(
    template: &SweepTemplate,
    bounds: ThicknessBounds,
    wavelength_nm: f64,
    axis: PolarizationState,
    options: OptimizeOptions,
) -> Result<Optimum> {
    let (tlo, thi) = bounds.top_nm;
    let (blo, bhi) = bounds.bottom_nm;
    let top_grid = thickness_grid(tlo, thi, options.grid_step_nm)?;
    let bottom_grid = thickness_grid(blo, bhi, options.grid_step_nm)?;
    let map = absorption_map(template, &top_grid, &bottom_grid, wavelength_nm, axis)?;
    let (mut t, mut b, coarse) = map.max();
    let mut best = coarse;

    let eval = template.evaluator(wavelength_nm, axis)?;
    let step = options.grid_step_nm;
    for _ in 0..options.refine_rounds {
        let before = best;
        if thi > tlo {
            let (lo, hi) = ((t - step).max(tlo), (t + step).min(thi));
            let (x, v) = golden_section_max(|x| eval(x, b), lo, hi, options.tolerance_nm);
            if v > best {
                t = x;
                best = v;
            }
        }
        if bhi > blo {
            let (lo, hi) = ((b - step).max(blo), (b + step).min(bhi));
            let (x, v) = golden_section_max(|x| eval(t, x), lo, hi, options.tolerance_nm);
            if v > best {
                b = x;
                best = v;
            }
        }
        if best - before <= 1e-15 {
            break;
        }
    }
    Ok(Optimum {
        top_nm: t,
        bottom_nm: b,
        absorptance: best,
        coarse_absorptance: coarse,
    })
}

/// Convenience for tests and examples: a constant-index material valid over
/// a wide wavelength range.
pub fn constant_material(name: &str, n: f64, k: f64) -> Arc<MaterialDispersion> {
    Arc::new(
        MaterialDispersion::constant(name, Nk::new(n, k), 1.0, 1.0e6)
            .expect("constant material parameters must be non-negative"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn zero_thickness_is_identity() {
        let m = film_matrix(Complex64::new(2.7, 0.4), 0.0, 1550.0);
        let id = Matrix2::identity();
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(m.0[i][j], id.0[i][j], 1e-15));
            }
        }
    }

    #[test]
    fn half_wave_lossless_layer_is_minus_identity() {
        let n = 2.0;
        let d = 1550.0 / (2.0 * n);
        let m = film_matrix(Complex64::new(n, 0.0), d, 1550.0);
        assert!(close(m.0[0][0], Complex64::new(-1.0, 0.0), 1e-12));
        assert!(close(m.0[1][1], Complex64::new(-1.0, 0.0), 1e-12));
        assert!(m.0[0][1].norm() < 1e-12);
        assert!(m.0[1][0].norm() < 1e-12);
    }

    #[test]
    fn eighth_wave_layer_is_anti_diagonal() {
        // δ = 2π·2·(λ/8)/λ = π/2, so cos δ = 0 and sin δ = 1
        let lambda = 1550.0;
        let m = film_matrix(Complex64::new(2.0, 0.0), lambda / 8.0, lambda);
        assert!(m.0[0][0].norm() < 1e-12);
        assert!(m.0[1][1].norm() < 1e-12);
        assert!(close(m.0[0][1], Complex64::new(0.0, 0.5), 1e-12));
        assert!(close(m.0[1][0], Complex64::new(0.0, 2.0), 1e-12));
    }

    #[test]
    fn unit_determinant_for_lossy_layers() {
        for &(n, k, d) in &[
            (1.5, 0.0, 100.0),
            (3.5, 0.27, 25.0),
            (0.52, 10.7, 40.0),
            (3.7, 4.6, 300.0),
        ] {
            let m = film_matrix(Complex64::new(n, k), d, 1550.0);
            // cos² + sin² cancels between entries of size |M|, so rounding scales with |M|²
            let scale = m.0.iter().flatten().map(|z| z.norm_sqr()).fold(1.0, f64::max);
            assert!(
                (m.det() - Complex64::new(1.0, 0.0)).norm() < 1e-12 * scale,
                "{n} {k} {d}"
            );
        }
    }

    #[test]
    fn bare_interface_matches_fresnel() {
        let stack = LayerStack::new(
            constant_material("air", 1.0, 0.0),
            vec![],
            constant_material("n3", 3.0, 0.0),
        );
        let r = stack_response(&stack, 1550.0, PolarizationState::Armchair).unwrap();
        assert!((r.reflectance - 0.25).abs() < 1e-12);
        assert!((r.transmittance - 0.75).abs() < 1e-12);
        assert!(r.absorptance.is_empty());
    }

    #[test]
    fn lossless_stack_absorbs_nothing() {
        let stack = LayerStack::new(
            constant_material("air", 1.0, 0.0),
            vec![
                Layer::new("a", constant_material("a", 2.1, 0.0), 137.0),
                Layer::new("b", constant_material("b", 1.45, 0.0), 311.0),
            ],
            constant_material("si", 3.48, 0.0),
        );
        let r = stack_response(&stack, 1550.0, PolarizationState::Armchair).unwrap();
        for a in &r.absorptance {
            assert!(a.abs() < 1e-12);
        }
        assert!((r.reflectance + r.transmittance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_wave_antireflection() {
        // ideal single-layer AR coating: n_film = sqrt(n_sub), d = λ/(4 n_film)
        let ns: f64 = 2.25;
        let nf = ns.sqrt();
        let stack = LayerStack::new(
            constant_material("air", 1.0, 0.0),
            vec![Layer::new("ar", constant_material("ar", nf, 0.0), 1000.0 / (4.0 * nf))],
            constant_material("sub", ns, 0.0),
        );
        let r = stack_response(&stack, 1000.0, PolarizationState::Armchair).unwrap();
        assert!(r.reflectance < 1e-20);
    }

    #[test]
    fn lossy_incident_medium_rejected() {
        let stack = LayerStack::new(
            constant_material("metal", 0.5, 10.0),
            vec![],
            constant_material("air", 1.0, 0.0),
        );
        assert!(matches!(
            stack_response(&stack, 1550.0, PolarizationState::Armchair),
            Err(TmmError::LossyIncidentMedium(_))
        ));
    }

    #[test]
    fn dispersion_out_of_range_propagates() {
        let stack = LayerStack::device(100.0, 100.0).unwrap();
        assert!(matches!(
            stack_response(&stack, 900.0, PolarizationState::Armchair),
            Err(TmmError::Material(MaterialError::OutOfRange { .. }))
        ));
    }

    #[test]
    fn grid_construction() {
        let g = thickness_grid(0.0, 400.0, 2.0).unwrap();
        assert_eq!(g.len(), 201);
        assert_eq!(g[200], 400.0);
        let g = thickness_grid(0.0, 5.0, 2.0).unwrap();
        assert_eq!(g, vec![0.0, 2.0, 4.0, 5.0]);
        assert_eq!(thickness_grid(7.0, 7.0, 2.0).unwrap(), vec![7.0]);
        assert!(thickness_grid(5.0, 1.0, 2.0).is_err());
        assert!(thickness_grid(f64::NAN, 1.0, 2.0).is_err());
    }

    #[test]
    fn map_rejects_bad_grids() {
        let t = SweepTemplate::device().unwrap();
        assert!(matches!(
            absorption_map(&t, &[], &[1.0], 1550.0, PolarizationState::Armchair),
            Err(TmmError::EmptyGrid)
        ));
        assert!(matches!(
            absorption_map(&t, &[2.0, 1.0], &[1.0], 1550.0, PolarizationState::Armchair),
            Err(TmmError::UnsortedGrid)
        ));
    }

    #[test]
    fn single_cell_map_equals_point_response() {
        let t = SweepTemplate::device().unwrap();
        let map = absorption_map(&t, &[120.0], &[230.0], 1550.0, PolarizationState::Armchair).unwrap();
        let stack = LayerStack::device(120.0, 230.0).unwrap();
        let r = stack_response(&stack, 1550.0, PolarizationState::Armchair).unwrap();
        assert_eq!(map.values[0][0], r.absorptance[t.absorber]);
    }

    #[test]
    fn collapsed_bounds_return_the_point() {
        let t = SweepTemplate::device().unwrap();
        let bounds = ThicknessBounds {
            top_nm: (80.0, 80.0),
            bottom_nm: (150.0, 150.0),
        };
        let opt = optimize_thicknesses(&t, bounds, 1550.0, PolarizationState::Armchair, Default::default()).unwrap();
        assert_eq!((opt.top_nm, opt.bottom_nm), (80.0, 150.0));
        let r = stack_response(
            &LayerStack::device(80.0, 150.0).unwrap(),
            1550.0,
            PolarizationState::Armchair,
        )
        .unwrap();
        assert_eq!(opt.absorptance, r.absorptance[t.absorber]);
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, v) = golden_section_max(|x| -(x - 1.234).powi(2), 0.0, 3.0, 1e-8);
        assert!((x - 1.234).abs() < 1e-7);
        assert!(v.abs() < 1e-12);
    }
}
