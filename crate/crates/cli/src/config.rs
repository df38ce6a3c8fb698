//! Run configuration: one TOML file with a section per stage. Unknown keys
//! are rejected and every value is checked before any compute starts.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use trihom_core::{
    FhnParams, GridSpec, InitialValue, Level, PhysicalParams, ShapeSpec, Stimulus, StimulusShape, Tensor,
};

use crate::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySection,
    pub conductivity: ConductivitySection,
    #[serde(default)]
    pub ionic: IonicSection,
    #[serde(rename = "macro")]
    pub macro_: Option<MacroSection>,
    pub micro: Option<MicroSection>,
    pub nondim: Option<NondimSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub meso: CellSpec,
    pub micro: Option<CellSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub resolution: Vec<usize>,
    pub lengths: Option<Vec<f64>>,
    pub shape: ShapeConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeConfig {
    Full,
    Ball { center: Vec<f64>, radius: f64 },
    Laminate { axis: usize, fraction: f64 },
    RoundedBox { center: Vec<f64>, half_widths: Vec<f64>, corner_radius: f64 },
}

/// A conductivity given as a scalar, a diagonal, or a full matrix (rows).
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum TensorInput {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Extracellular tensor plus the two-level intracellular tensor.
    Bidomain,
    /// Hole-free two-phase cell.
    Composite,
    /// Matrix phase only, inclusion insulating.
    Perforated,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegionInput {
    #[default]
    Intra,
    Whole,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductivitySection {
    pub mode: Mode,
    pub sigma_i: Option<TensorInput>,
    pub sigma_e: Option<TensorInput>,
    pub sigma_in: Option<TensorInput>,
    pub sigma_out: Option<TensorInput>,
    /// Perforated mode: conductivity of the matrix phase.
    pub sigma: Option<TensorInput>,
    #[serde(default)]
    pub intra_region: RegionInput,
    #[serde(default)]
    pub allow_blocked: bool,
    #[serde(default = "default_cell_tol")]
    pub tol: f64,
    pub max_iter: Option<usize>,
}

fn default_cell_tol() -> f64 {
    1e-10
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IonicSection {
    #[serde(default = "IonicSection::a")]
    pub a: f64,
    #[serde(default = "IonicSection::b")]
    pub b: f64,
    #[serde(default = "IonicSection::lambda")]
    pub lambda: f64,
    #[serde(default = "IonicSection::theta")]
    pub theta: f64,
}

impl IonicSection {
    fn a() -> f64 {
        FhnParams::default().a
    }
    fn b() -> f64 {
        FhnParams::default().b
    }
    fn lambda() -> f64 {
        FhnParams::default().lambda
    }
    fn theta() -> f64 {
        FhnParams::default().theta
    }

    pub fn params(&self) -> FhnParams {
        FhnParams { a: self.a, b: self.b, lambda: self.lambda, theta: self.theta }
    }
}

impl Default for IonicSection {
    fn default() -> Self {
        let p = FhnParams::default();
        IonicSection { a: p.a, b: p.b, lambda: p.lambda, theta: p.theta }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum TensorSource {
    /// Homogenized tensors computed from the cell.
    #[default]
    Corrected,
    /// Phase conductivity times volume fraction, no correctors.
    VolumeAverage,
    /// `m_i`, `m_e` and `mu_m` given in the section.
    Explicit,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusConfig {
    pub kind: StimulusKind,
    pub center: Vec<f64>,
    pub half_widths: Option<Vec<f64>>,
    pub radii: Option<Vec<f64>>,
    pub amplitude: f64,
    pub t_on: f64,
    pub t_off: f64,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum StimulusKind {
    Box,
    Ellipse,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroSection {
    /// Defaults to the micro domain when a `[micro]` section is present.
    pub lengths: Option<Vec<f64>>,
    pub resolution: Vec<usize>,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub tensors: TensorSource,
    pub m_i: Option<TensorInput>,
    pub m_e: Option<TensorInput>,
    pub mu_m: Option<f64>,
    #[serde(default)]
    pub v0: f64,
    #[serde(default)]
    pub w0: f64,
    #[serde(default = "default_elliptic_tol")]
    pub elliptic_tol: f64,
    #[serde(default = "default_parabolic_tol")]
    pub parabolic_tol: f64,
    #[serde(default = "default_threshold")]
    pub activation_threshold: f64,
    /// Write a snapshot every this many steps (0: initial and final only).
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default)]
    pub stimulus: Vec<StimulusConfig>,
}

fn default_elliptic_tol() -> f64 {
    1e-8
}
fn default_parabolic_tol() -> f64 {
    1e-10
}
fn default_threshold() -> f64 {
    0.5
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroSection {
    pub epsilon: f64,
    pub cells: [usize; 2],
    /// Defaults to the macro values.
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    #[serde(default = "default_micro_tol")]
    pub tol: f64,
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default)]
    pub v0: f64,
    #[serde(default)]
    pub w0: f64,
    /// Tile `[geometry.micro]` holes this many times per meso cell and axis.
    pub mitochondria_per_cell: Option<usize>,
    /// Defaults to the macro stimuli.
    pub stimulus: Option<Vec<StimulusConfig>>,
}

fn default_micro_tol() -> f64 {
    1e-12
}

/// Physical inputs for the scale calculator (lengths in cm, R_m in kΩ·cm²,
/// C_m in µF/cm², conductivities in mS/cm).
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NondimSection {
    pub ell_mes: f64,
    pub ell_mic: f64,
    pub length: Option<f64>,
    pub r_m: f64,
    pub c_m: f64,
    pub lambda_i: f64,
    pub lambda_e: f64,
    #[serde(default = "one")]
    pub delta_v: f64,
    #[serde(default = "one")]
    pub delta_w: f64,
}

fn one() -> f64 {
    1.0
}

impl NondimSection {
    pub fn params(&self) -> PhysicalParams {
        PhysicalParams {
            ell_mes: self.ell_mes,
            ell_mic: self.ell_mic,
            length: self.length,
            r_m: self.r_m,
            c_m: self.c_m,
            lambda_i: self.lambda_i,
            lambda_e: self.lambda_e,
            delta_v: self.delta_v,
            delta_w: self.delta_w,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub write_labels: bool,
    #[serde(default = "yes")]
    pub write_correctors: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn yes() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out_dir(), write_labels: true, write_correctors: true }
    }
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl TensorInput {
    pub fn to_tensor(&self, dim: usize, name: &str) -> Result<Tensor, CliError> {
        let t = match self {
            TensorInput::Scalar(s) => Tensor::from_diagonal_element(dim, dim, *s),
            TensorInput::Diagonal(d) if d.len() == dim => Tensor::from_diagonal(&d.clone().into()),
            TensorInput::Matrix(rows) if rows.len() == dim && rows.iter().all(|r| r.len() == dim) => {
                Tensor::from_fn(dim, dim, |r, c| rows[r][c])
            }
            _ => return Err(cfg_err(format!("{name} must be a scalar, {dim} diagonal entries or a {dim}x{dim} matrix"))),
        };
        if t.iter().any(|x| !x.is_finite()) {
            return Err(cfg_err(format!("{name} has non-finite entries")));
        }
        Ok(t)
    }

    /// The scalar if the tensor is `s·I`.
    pub fn scalar(&self) -> Option<f64> {
        match self {
            TensorInput::Scalar(s) => Some(*s),
            TensorInput::Diagonal(d) if d.iter().all(|x| *x == d[0]) => Some(d[0]),
            _ => None,
        }
    }
}

impl CellSpec {
    pub fn grid(&self) -> Result<GridSpec, CliError> {
        let lengths = self.lengths.clone().unwrap_or_else(|| vec![1.0; self.resolution.len()]);
        GridSpec::new(&self.resolution, &lengths).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn shape(&self) -> ShapeSpec {
        match &self.shape {
            ShapeConfig::Full => ShapeSpec::Full,
            ShapeConfig::Ball { center, radius } => ShapeSpec::Ball { center: center.clone(), radius: *radius },
            ShapeConfig::Laminate { axis, fraction } => ShapeSpec::Laminate { axis: *axis, fraction: *fraction },
            ShapeConfig::RoundedBox { center, half_widths, corner_radius } => ShapeSpec::RoundedBox {
                center: center.clone(),
                half_widths: half_widths.clone(),
                corner_radius: *corner_radius,
            },
        }
    }

    fn validate(&self, level: Level) -> Result<(), CliError> {
        let grid = self.grid()?;
        self.shape().validate(&grid).map_err(|e| cfg_err(format!("{level:?} geometry: {e}")))
    }
}

impl StimulusConfig {
    pub fn to_stimulus(&self) -> Result<Stimulus, CliError> {
        let shape = match (self.kind, &self.half_widths, &self.radii) {
            (StimulusKind::Box, Some(h), None) => {
                StimulusShape::Box { center: self.center.clone(), half_widths: h.clone() }
            }
            (StimulusKind::Ellipse, None, Some(r)) => {
                StimulusShape::Ellipse { center: self.center.clone(), radii: r.clone() }
            }
            _ => return Err(cfg_err("a box stimulus takes half_widths, an ellipse takes radii")),
        };
        Ok(Stimulus { shape, amplitude: self.amplitude, t_on: self.t_on, t_off: self.t_off })
    }
}

impl MacroSection {
    pub fn initial(&self) -> (InitialValue, InitialValue) {
        (InitialValue::Uniform(self.v0), InitialValue::Uniform(self.w0))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dim(&self) -> usize {
        self.geometry.meso.resolution.len()
    }

    /// Schema checks that need no solve.
    pub fn validate(&self) -> Result<(), CliError> {
        let dim = self.dim();
        self.geometry.meso.validate(Level::Meso)?;
        if let Some(m) = &self.geometry.micro {
            m.validate(Level::Micro)?;
            if m.resolution.len() != dim {
                return Err(cfg_err("micro and meso geometries differ in dimension"));
            }
        }
        let c = &self.conductivity;
        if !(c.tol > 0.0 && c.tol < 1.0) {
            return Err(cfg_err(format!("conductivity.tol must be in (0, 1), got {}", c.tol)));
        }
        let need = |t: &Option<TensorInput>, name: &str| -> Result<Tensor, CliError> {
            t.as_ref().ok_or_else(|| cfg_err(format!("conductivity.{name} is required in {:?} mode", c.mode)))?.to_tensor(dim, name)
        };
        match c.mode {
            Mode::Bidomain => {
                need(&c.sigma_i, "sigma_i")?;
                need(&c.sigma_e, "sigma_e")?;
            }
            Mode::Composite => {
                need(&c.sigma_in, "sigma_in")?;
                need(&c.sigma_out, "sigma_out")?;
            }
            Mode::Perforated => {
                need(&c.sigma, "sigma")?;
            }
        }
        self.ionic.params().validate().map_err(|e| cfg_err(format!("ionic: {e}")))?;
        if let Some(m) = &self.macro_ {
            self.validate_macro(m)?;
        }
        if let Some(m) = &self.micro {
            self.validate_micro(m)?;
        }
        if let Some(p) = &self.nondim {
            p.params().validate().map_err(|e| cfg_err(format!("nondim: {e}")))?;
        }
        Ok(())
    }

    fn validate_macro(&self, m: &MacroSection) -> Result<(), CliError> {
        let dim = self.dim();
        if !(m.dt.is_finite() && m.dt > 0.0) {
            return Err(cfg_err(format!("macro.dt must be > 0, got {}", m.dt)));
        }
        if !(m.t_end.is_finite() && m.t_end >= 0.0) {
            return Err(cfg_err(format!("macro.t_end must be >= 0, got {}", m.t_end)));
        }
        if m.resolution.len() != dim || m.resolution.iter().any(|&n| n < 16) {
            return Err(cfg_err(format!("macro.resolution needs {dim} entries, each >= 16")));
        }
        match &m.lengths {
            Some(l) if l.len() != dim || l.iter().any(|x| !(*x > 0.0)) => {
                return Err(cfg_err(format!("macro.lengths needs {dim} positive entries")))
            }
            None if self.micro.is_none() => return Err(cfg_err("macro.lengths is required without [micro]")),
            _ => {}
        }
        match m.tensors {
            TensorSource::Explicit => {
                for (t, name) in [(&m.m_i, "m_i"), (&m.m_e, "m_e")] {
                    t.as_ref()
                        .ok_or_else(|| cfg_err(format!("macro.{name} is required with tensors = \"explicit\"")))?
                        .to_tensor(dim, name)?;
                }
                if m.mu_m.is_none() {
                    return Err(cfg_err("macro.mu_m is required with tensors = \"explicit\""));
                }
            }
            _ => {
                if self.conductivity.mode != Mode::Bidomain {
                    return Err(cfg_err("computed macro tensors need conductivity.mode = \"bidomain\""));
                }
                if m.m_i.is_some() || m.m_e.is_some() {
                    return Err(cfg_err("macro.m_i/m_e are only read with tensors = \"explicit\""));
                }
            }
        }
        if let Some(mu) = m.mu_m {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(cfg_err(format!("macro.mu_m must be > 0, got {mu}")));
            }
        }
        if !(m.elliptic_tol > 0.0 && m.parabolic_tol > 0.0) {
            return Err(cfg_err("macro tolerances must be > 0"));
        }
        for s in &m.stimulus {
            let st = s.to_stimulus()?;
            if st.shape_center().len() != dim {
                return Err(cfg_err(format!("stimulus needs {dim} coordinates")));
            }
        }
        Ok(())
    }

    fn validate_micro(&self, m: &MicroSection) -> Result<(), CliError> {
        if self.dim() != 2 {
            return Err(cfg_err("[micro] runs are 2D only"));
        }
        if self.conductivity.mode != Mode::Bidomain {
            return Err(cfg_err("[micro] needs conductivity.mode = \"bidomain\""));
        }
        if !(m.epsilon > 0.0 && m.epsilon.is_finite()) {
            return Err(cfg_err(format!("micro.epsilon must be > 0, got {}", m.epsilon)));
        }
        if m.cells.iter().any(|&c| c == 0 || c > 8) {
            return Err(cfg_err("micro.cells must be between 1 and 8 per axis"));
        }
        let dt = m.dt.or(self.macro_.as_ref().map(|x| x.dt));
        let t_end = m.t_end.or(self.macro_.as_ref().map(|x| x.t_end));
        match (dt, t_end) {
            (Some(dt), Some(t)) if dt > 0.0 && dt.is_finite() && t >= 0.0 && t.is_finite() => {}
            (Some(_), Some(_)) => return Err(cfg_err("micro dt must be > 0 and t_end >= 0")),
            _ => return Err(cfg_err("micro.dt and micro.t_end are required without [macro]")),
        }
        if !(m.tol > 0.0 && m.tol < 1.0) {
            return Err(cfg_err("micro.tol must be in (0, 1)"));
        }
        if m.mitochondria_per_cell.is_some() && self.geometry.micro.is_none() {
            return Err(cfg_err("micro.mitochondria_per_cell needs [geometry.micro]"));
        }
        if let Some(st) = &m.stimulus {
            for s in st {
                s.to_stimulus()?;
            }
        }
        Ok(())
    }
}

/// Extension used by validation only.
trait StimulusCenter {
    fn shape_center(&self) -> &[f64];
}

impl StimulusCenter for Stimulus {
    fn shape_center(&self) -> &[f64] {
        match &self.shape {
            StimulusShape::Box { center, .. } | StimulusShape::Ellipse { center, .. } => center,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[geometry.meso]
resolution = [16, 16]
shape = { kind = "ball", center = [0.5, 0.5], radius = 0.25 }

[conductivity]
mode = "perforated"
sigma = 1.0
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.conductivity.tol, 1e-10);
        assert_eq!(c.output.dir, PathBuf::from("out"));
        assert_eq!(c.ionic.params(), FhnParams::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("sigma = 1.0", "sigma = 1.0\nsigmaa = 2.0");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
        let text = MINIMAL.replace("radius = 0.25", "radius = 0.25, colour = 1");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn nonpositive_dt_is_rejected_before_compute() {
        let text = format!("{MINIMAL}\n[macro]\nlengths = [1.0, 1.0]\nresolution = [16, 16]\ndt = 0.0\nt_end = 1.0\ntensors = \"explicit\"\nm_i = 1.0\nm_e = 1.0\nmu_m = 1.0\n");
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("dt"), "{err}");
    }

    #[test]
    fn tensor_inputs() {
        let t = TensorInput::Diagonal(vec![2.0, 1.0]).to_tensor(2, "m").unwrap();
        assert_eq!(t[(0, 0)], 2.0);
        assert_eq!(t[(1, 0)], 0.0);
        let t = TensorInput::Matrix(vec![vec![2.0, 0.5], vec![0.5, 1.0]]).to_tensor(2, "m").unwrap();
        assert_eq!(t[(0, 1)], 0.5);
        assert!(TensorInput::Diagonal(vec![1.0]).to_tensor(2, "m").is_err());
        assert_eq!(TensorInput::Scalar(3.0).scalar(), Some(3.0));
        assert_eq!(TensorInput::Diagonal(vec![2.0, 1.0]).scalar(), None);
    }

    #[test]
    fn bad_shape_is_a_config_error() {
        let text = MINIMAL.replace("radius = 0.25", "radius = -1.0");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
    }
}
