//! Stage runners. Each subcommand is a prefix of the full pipeline:
//! geometry → cell problems → tensors → macro run → micro run → comparison.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use trihom_core::fieldio::FieldDump;
use trihom_core::tensors::{homogenize_with_correctors, two_level_tensor, IntraCoefficient, IntraRegion};
use trihom_core::{
    assemble, build_cell, check_compatibility, compare_to_macro, derive_scales, membrane_ratio, ConductivityField,
    CorrectorField, ErrorReport, GridSpec, HomogenizedTensor, Label, Level, MacroConfig, MacroRun,
    MacroSolver, MembraneTrajectory, MicroConfig, MicroSolver, Mitochondria, NodalGrid, PhysicalParams, Rescaling,
    ShapeSpec, SolveOptions, Tensor, TensorLevel, TrihomError, UnitCellGeometry,
};

use crate::config::{MacroSection, Mode, RegionInput, RunConfig, TensorSource};
use crate::output::{self, fmt_f64};
use crate::{stage, CliError};

/// Tensor audit limits applied to every pipeline run.
pub const SYMMETRY_LIMIT: f64 = 1e-8;
pub const MEAN_U_E_LIMIT: f64 = 1e-10;
pub const CURRENT_BALANCE_LIMIT: f64 = 1e-9;

pub struct Geometries {
    pub meso: UnitCellGeometry,
    /// `[geometry.micro]`, or a FULL 8^d cell when the section is absent.
    pub micro: UnitCellGeometry,
    pub micro_given: bool,
}

pub fn build_geometries(cfg: &RunConfig) -> Result<Geometries, CliError> {
    let meso = build_cell(&cfg.geometry.meso.grid()?, &cfg.geometry.meso.shape(), Level::Meso)
        .map_err(stage("geometry"))?;
    let (micro, micro_given) = match &cfg.geometry.micro {
        Some(s) => (build_cell(&s.grid()?, &s.shape(), Level::Micro).map_err(stage("geometry"))?, true),
        None => {
            let spec = GridSpec::unit(cfg.dim(), 8).map_err(stage("geometry"))?;
            (build_cell(&spec, &ShapeSpec::Full, Level::Micro).map_err(stage("geometry"))?, false)
        }
    };
    Ok(Geometries { meso, micro, micro_given })
}

pub fn write_geometry(dir: &Path, g: &Geometries) -> Result<Vec<PathBuf>, CliError> {
    let mut files = vec![dir.join("meso_labels.bin")];
    output::write_labels(&files[0], &g.meso)?;
    if g.micro_given {
        files.push(dir.join("micro_labels.bin"));
        output::write_labels(&files[1], &g.micro)?;
    }
    Ok(files)
}

pub fn solve_options(cfg: &RunConfig) -> SolveOptions {
    let c = &cfg.conductivity;
    SolveOptions { tol: c.tol, max_iter: c.max_iter, allow_blocked: c.allow_blocked }
}

/// Which cell problems a command runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Meso,
    Micro,
    All,
}

/// One homogenized tensor with the correctors behind it.
#[derive(Clone, Debug)]
pub struct CellPass {
    pub tensor: HomogenizedTensor,
    pub cell: Level,
    pub correctors: Vec<CorrectorField>,
    /// `|Γ|/|cell|` of the cell the pass ran on (0 without an interface).
    pub mu_m: f64,
    /// `|(F, 1)| / ‖F‖` per direction; 0 where the load is cancellation noise
    /// and is replaced by zero.
    pub compatibility: Vec<f64>,
}

fn ratio_or_zero(geom: &UnitCellGeometry) -> Result<f64, CliError> {
    match membrane_ratio(geom) {
        Ok(r) => Ok(r),
        Err(TrihomError::EmptyInterface) => Ok(0.0),
        Err(e) => Err(stage("geometry")(e)),
    }
}

/// `|(F, 1)| / ‖F‖` of the assembled load for every direction.
pub fn load_defects(geom: &UnitCellGeometry, field: &ConductivityField, opts: &SolveOptions) -> Result<Vec<f64>, CliError> {
    (0..geom.spec().dim())
        .map(|q| {
            let sys = assemble(geom, field, q, opts.allow_blocked).map_err(stage("correctors"))?;
            let norm = sys.rhs.iter().map(|x| x * x).sum::<f64>().sqrt();
            Ok(if norm <= 1e-10 * sys.load_scale { 0.0 } else { check_compatibility(&sys) / norm })
        })
        .collect()
}

fn single_pass(
    level: TensorLevel,
    geom: &UnitCellGeometry,
    field: ConductivityField,
    opts: &SolveOptions,
) -> Result<CellPass, CliError> {
    let compat = load_defects(geom, &field, opts)?;
    let (tensor, correctors) = homogenize_with_correctors(level, geom, &field, geom.spec().cell_volume(), opts)
        .map_err(stage("correctors"))?;
    Ok(CellPass { tensor, cell: geom.level(), correctors, mu_m: ratio_or_zero(geom)?, compatibility: compat })
}

fn tensor(cfg: &RunConfig, t: &Option<crate::config::TensorInput>, name: &str) -> Result<Tensor, CliError> {
    t.as_ref()
        .ok_or_else(|| CliError::Config(format!("conductivity.{name} is missing")))?
        .to_tensor(cfg.dim(), name)
}

/// Run the cell problems of the configured mode.
pub fn cell_passes(cfg: &RunConfig, g: &Geometries, opts: &SolveOptions, scope: Scope) -> Result<Vec<CellPass>, CliError> {
    let c = &cfg.conductivity;
    let micro = scope != Scope::Meso;
    let meso = scope != Scope::Micro;
    let field_err = stage("correctors");
    let mut out = Vec::new();
    match c.mode {
        Mode::Bidomain => {
            let s_i = tensor(cfg, &c.sigma_i, "sigma_i")?;
            let s_e = tensor(cfg, &c.sigma_e, "sigma_e")?;
            if meso {
                let f = ConductivityField::on_label(&g.meso, Label::Extra, s_e).map_err(&field_err)?;
                out.push(single_pass(TensorLevel::ExtraMeso, &g.meso, f, opts)?);
            }
            if micro {
                let f = ConductivityField::on_label(&g.micro, Label::Cytosol, s_i.clone()).map_err(&field_err)?;
                out.push(single_pass(TensorLevel::IntraMicro, &g.micro, f, opts)?);
            }
            if meso {
                let region = match c.intra_region {
                    RegionInput::Intra => IntraRegion::Intra,
                    RegionInput::Whole => IntraRegion::Whole,
                };
                let coef = IntraCoefficient::uniform(&g.meso, s_i);
                let r = two_level_tensor(&g.meso, region, &g.micro, &coef, opts).map_err(stage("correctors"))?;
                let compat = load_defects(&g.meso, &r.field, opts)?;
                out.push(CellPass {
                    tensor: r.meso,
                    cell: Level::Meso,
                    correctors: r.correctors,
                    mu_m: ratio_or_zero(&g.meso)?,
                    compatibility: compat,
                });
            }
        }
        Mode::Composite => {
            if scope == Scope::Micro {
                return Err(CliError::Config("composite mode has no micro-level cell problem".into()));
            }
            let s_in = tensor(cfg, &c.sigma_in, "sigma_in")?;
            let s_out = tensor(cfg, &c.sigma_out, "sigma_out")?;
            let lv = g.meso.level();
            let f = ConductivityField::per_label(&g.meso, &[(lv.inclusion(), s_in), (lv.matrix(), s_out)])
                .map_err(&field_err)?;
            out.push(single_pass(TensorLevel::CompositeMeso, &g.meso, f, opts)?);
        }
        Mode::Perforated => {
            let s = tensor(cfg, &c.sigma, "sigma")?;
            if meso {
                let f = ConductivityField::on_label(&g.meso, Label::Extra, s.clone()).map_err(&field_err)?;
                out.push(single_pass(TensorLevel::ExtraMeso, &g.meso, f, opts)?);
            }
            if micro && g.micro_given {
                let f = ConductivityField::on_label(&g.micro, Label::Cytosol, s).map_err(&field_err)?;
                out.push(single_pass(TensorLevel::IntraMicro, &g.micro, f, opts)?);
            }
            if scope == Scope::Micro && !g.micro_given {
                return Err(CliError::Config("--level micro needs [geometry.micro]".into()));
            }
        }
    }
    Ok(out)
}

/// Smallest eigenvalue of `t` restricted to the axes not listed in `blocked`
/// (`None` if every axis is blocked).
pub fn min_eigenvalue_on_open_axes(t: &Tensor, blocked: &[usize]) -> Option<f64> {
    let open: Vec<usize> = (0..t.nrows()).filter(|a| !blocked.contains(a)).collect();
    if open.is_empty() {
        return None;
    }
    let sub = Tensor::from_fn(open.len(), open.len(), |r, c| t[(open[r], open[c])]);
    sub.symmetric_eigenvalues().iter().copied().reduce(f64::min)
}

/// Audit failures: symmetry defect, non-positive tensor on percolating axes,
/// incompatible loads.
pub fn tensor_issues(passes: &[CellPass]) -> Vec<String> {
    let mut issues = Vec::new();
    for p in passes {
        let t = &p.tensor;
        let name = t.level.name();
        if t.provenance.symmetry_defect > SYMMETRY_LIMIT {
            issues.push(format!("{name}: symmetry defect {:e} > {SYMMETRY_LIMIT:e}", t.provenance.symmetry_defect));
        }
        match min_eigenvalue_on_open_axes(&t.entries, &t.provenance.blocked_axes) {
            Some(e) if e <= 0.0 => issues.push(format!("{name}: min eigenvalue {e:e} <= 0 on percolating axes")),
            None => issues.push(format!("{name}: no percolating axis")),
            _ => {}
        }
        for (k, r) in p.compatibility.iter().enumerate() {
            if *r > 1e-12 {
                issues.push(format!("{name}: direction {k} load defect {r:e} > 1e-12"));
            }
        }
    }
    issues
}

pub fn write_correctors(dir: &Path, passes: &[CellPass]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in passes {
        for c in &p.correctors {
            let name = format!("{}_chi{}", p.tensor.level.name().to_lowercase(), c.direction);
            let path = dir.join(format!("{name}.bin"));
            let dump = FieldDump::new(&name, c.spec.resolution().to_vec(), c.values.clone())
                .with("level", p.tensor.level.name())
                .with("direction", c.direction)
                .with("lengths", output::join_floats(c.spec.lengths()))
                .with("residual", fmt_f64(c.residual))
                .with("tol", fmt_f64(c.tol))
                .with("iterations", c.iterations);
            output::write_field(&path, &dump)?;
            files.push(path);
        }
    }
    Ok(files)
}

/// Tensors, membrane ratio and domain for the macro run.
#[derive(Clone, Debug)]
pub struct MacroInputs {
    pub m_i: Tensor,
    pub m_e: Tensor,
    pub mu_m: f64,
    pub lengths: Vec<f64>,
    pub source: TensorSource,
}

fn volume_fraction(geom: &UnitCellGeometry, label: Label) -> f64 {
    geom.count(label) as f64 / geom.spec().num_voxels() as f64
}

/// Domain of the resolved micro problem.
pub fn micro_domain(cfg: &RunConfig) -> Option<Vec<f64>> {
    let m = cfg.micro.as_ref()?;
    let l = cfg.geometry.meso.lengths.clone().unwrap_or_else(|| vec![1.0; cfg.dim()]);
    Some((0..cfg.dim()).map(|a| m.epsilon * m.cells[a] as f64 * l[a]).collect())
}

/// Whether the macro tensors need the cell problems.
pub fn needs_cell_passes(cfg: &RunConfig) -> bool {
    cfg.macro_.as_ref().is_some_and(|m| m.tensors == TensorSource::Corrected)
}

pub fn macro_inputs(cfg: &RunConfig, g: &Geometries, passes: &[CellPass]) -> Result<MacroInputs, CliError> {
    let m = cfg.macro_.as_ref().ok_or_else(|| CliError::Config("missing [macro] section".into()))?;
    let dim = cfg.dim();
    let c = &cfg.conductivity;
    let (m_i, m_e) = match m.tensors {
        TensorSource::Explicit => (
            m.m_i.as_ref().expect("validated").to_tensor(dim, "m_i")?,
            m.m_e.as_ref().expect("validated").to_tensor(dim, "m_e")?,
        ),
        TensorSource::Corrected => {
            let find = |lv: TensorLevel| {
                passes
                    .iter()
                    .find(|p| p.tensor.level == lv)
                    .map(|p| p.tensor.entries.clone())
                    .ok_or_else(|| CliError::Config(format!("no {} tensor was computed", lv.name())))
            };
            (find(TensorLevel::IntraTwoLevel)?, find(TensorLevel::ExtraMeso)?)
        }
        TensorSource::VolumeAverage => {
            let f_i = match c.intra_region {
                RegionInput::Intra => volume_fraction(&g.meso, Label::Intra),
                RegionInput::Whole => 1.0,
            };
            let f_cyt = volume_fraction(&g.micro, Label::Cytosol);
            let f_e = volume_fraction(&g.meso, Label::Extra);
            (tensor(cfg, &c.sigma_i, "sigma_i")? * (f_i * f_cyt), tensor(cfg, &c.sigma_e, "sigma_e")? * f_e)
        }
    };
    let mu_m = match m.mu_m {
        Some(mu) => mu,
        None => match membrane_ratio(&g.meso) {
            Ok(r) => r,
            Err(TrihomError::EmptyInterface) => {
                return Err(CliError::Config("macro.mu_m is required when the meso cell has no membrane".into()))
            }
            Err(e) => return Err(stage("geometry")(e)),
        },
    };
    let lengths = match (&m.lengths, micro_domain(cfg)) {
        (Some(l), _) => l.clone(),
        (None, Some(l)) => l,
        (None, None) => return Err(CliError::Config("macro.lengths is required".into())),
    };
    Ok(MacroInputs { m_i, m_e, mu_m, lengths, source: m.tensors })
}

pub struct MacroSnapshot {
    pub step: usize,
    pub t: f64,
    pub v: Vec<f64>,
    pub u_e: Vec<f64>,
}

pub struct MacroOutcome {
    pub inputs: MacroInputs,
    pub grid: NodalGrid,
    pub node_shape: Vec<usize>,
    pub run: MacroRun,
    pub snapshots: Vec<MacroSnapshot>,
    pub dt: f64,
    pub elliptic_tol: f64,
    pub parabolic_tol: f64,
}

fn snapshot_due(step: usize, every: usize, last: usize) -> bool {
    step == 0 || step == last || (every > 0 && step % every == 0)
}

pub fn macro_config(cfg: &RunConfig, m: &MacroSection, inputs: &MacroInputs) -> Result<MacroConfig, CliError> {
    let mut mc = MacroConfig::new(
        inputs.lengths.clone(),
        m.resolution.clone(),
        inputs.m_i.clone(),
        inputs.m_e.clone(),
        inputs.mu_m,
    );
    mc.dt = m.dt;
    mc.t_end = m.t_end;
    mc.ionic = cfg.ionic.params();
    mc.stimuli = m.stimulus.iter().map(|s| s.to_stimulus()).collect::<Result<_, _>>()?;
    let (v0, w0) = m.initial();
    mc.v0 = v0;
    mc.w0 = w0;
    mc.elliptic_tol = m.elliptic_tol;
    mc.parabolic_tol = m.parabolic_tol;
    mc.activation_threshold = m.activation_threshold;
    Ok(mc)
}

pub fn run_macro(cfg: &RunConfig, inputs: MacroInputs) -> Result<MacroOutcome, CliError> {
    let m = cfg.macro_.as_ref().ok_or_else(|| CliError::Config("missing [macro] section".into()))?;
    let mc = macro_config(cfg, m, &inputs)?;
    let solver = MacroSolver::new(mc).map_err(stage("macro"))?;
    let last = solver.config().num_steps();
    let mut snapshots = Vec::new();
    let run = solver
        .run(|s| {
            if snapshot_due(s.step, m.snapshot_every, last) {
                snapshots.push(MacroSnapshot { step: s.step, t: s.t, v: s.v.clone(), u_e: s.u_e.clone() });
            }
            Ok(())
        })
        .map_err(stage("macro"))?;
    Ok(MacroOutcome {
        inputs,
        grid: solver.grid(),
        node_shape: solver.node_shape(),
        run,
        snapshots,
        dt: m.dt,
        elliptic_tol: m.elliptic_tol,
        parabolic_tol: m.parabolic_tol,
    })
}

pub fn write_macro(dir: &Path, o: &MacroOutcome) -> Result<(), CliError> {
    let lengths = output::join_floats(&o.grid.lengths);
    let res = o.grid.resolution.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",");
    for s in &o.snapshots {
        for (name, values, path) in [
            ("v", &s.v, output::macro_v_file(dir, s.step)),
            ("u_e", &s.u_e, output::macro_u_e_file(dir, s.step)),
        ] {
            let dump = FieldDump::new(name, o.node_shape.clone(), values.clone())
                .with("t", fmt_f64(s.t))
                .with("step", s.step)
                .with("lengths", &lengths)
                .with("resolution", &res);
            output::write_field(&path, &dump)?;
        }
    }
    let act = FieldDump::new("activation", o.node_shape.clone(), o.run.activation.clone())
        .with("threshold_crossing", "first")
        .with("lengths", &lengths)
        .with("resolution", &res);
    output::write_field(&dir.join("activation.bin"), &act)?;
    let mut summary =
        String::from("step,t,v_min,v_max,mean_u_e,activated_fraction,elliptic_iterations,parabolic_iterations\n");
    for r in &o.run.rows {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            fmt_f64(r.t),
            fmt_f64(r.v_min),
            fmt_f64(r.v_max),
            fmt_f64(r.mean_u_e),
            fmt_f64(r.activated_fraction),
            r.elliptic_iterations,
            r.parabolic_iterations
        ));
    }
    output::write_text(&dir.join("summary.csv"), &summary)?;
    let mut vel = String::from("axis,velocity\n");
    for (a, v) in o.run.velocity.iter().enumerate() {
        vel.push_str(&format!("{a},{}\n", v.map(fmt_f64).unwrap_or_default()));
    }
    output::write_text(&dir.join("velocity.csv"), &vel)
}

pub struct MicroOutcome {
    pub epsilon: f64,
    pub dt: f64,
    pub tol: f64,
    pub trajectory: MembraneTrajectory,
    pub node_shape: Vec<usize>,
    pub u_i: Vec<f64>,
    pub u_e: Vec<f64>,
    pub max_abs_mean_u_e: f64,
    pub max_current_balance: f64,
    pub max_iterations: usize,
}

pub fn micro_config(cfg: &RunConfig, g: &Geometries) -> Result<MicroConfig, CliError> {
    let m = cfg.micro.as_ref().ok_or_else(|| CliError::Config("missing [micro] section".into()))?;
    let c = &cfg.conductivity;
    let mut mc = MicroConfig::new(
        g.meso.clone(),
        m.epsilon,
        m.cells,
        tensor(cfg, &c.sigma_i, "sigma_i")?,
        tensor(cfg, &c.sigma_e, "sigma_e")?,
    );
    let mac = cfg.macro_.as_ref();
    mc.dt = m.dt.or(mac.map(|x| x.dt)).expect("validated");
    mc.t_end = m.t_end.or(mac.map(|x| x.t_end)).expect("validated");
    mc.ionic = cfg.ionic.params();
    let stim = match (&m.stimulus, mac) {
        (Some(s), _) => s.clone(),
        (None, Some(x)) => x.stimulus.clone(),
        (None, None) => Vec::new(),
    };
    mc.stimuli = stim.iter().map(|s| s.to_stimulus()).collect::<Result<_, _>>()?;
    mc.v0 = m.v0;
    mc.w0 = m.w0;
    mc.tol = m.tol;
    if let Some(per_cell) = m.mitochondria_per_cell {
        mc.mitochondria = Some(Mitochondria { cell: g.micro.clone(), per_cell });
    }
    Ok(mc)
}

pub fn run_micro(cfg: &RunConfig, g: &Geometries) -> Result<MicroOutcome, CliError> {
    let m = cfg.micro.as_ref().ok_or_else(|| CliError::Config("missing [micro] section".into()))?;
    let mc = micro_config(cfg, g)?;
    let (dt, tol) = (mc.dt, mc.tol);
    let solver = MicroSolver::new(mc).map_err(stage("micro"))?;
    let steps = solver.config().num_steps();
    let every = if m.snapshot_every == 0 { steps.max(1) } else { m.snapshot_every };
    let mut run = solver.run(every).map_err(stage("micro"))?;
    if steps % every != 0 {
        let s = &run.state;
        run.snapshots.push(trihom_core::microref::MembraneSnapshot { t: s.t, v: s.v.clone(), w: s.w.clone() });
    }
    let nodes = solver.mesh().nodes_per_axis();
    Ok(MicroOutcome {
        epsilon: m.epsilon,
        dt,
        tol,
        u_i: solver.u_i_nodes(&run.state),
        u_e: solver.u_e_nodes(&run.state),
        node_shape: nodes[..2].to_vec(),
        trajectory: solver.trajectory(std::mem::take(&mut run.snapshots)),
        max_abs_mean_u_e: run.max_abs_mean_u_e,
        max_current_balance: run.max_current_balance,
        max_iterations: run.max_iterations,
    })
}

pub fn write_micro(dir: &Path, o: &MicroOutcome) -> Result<(), CliError> {
    for snap in &o.trajectory.snapshots {
        let step = (snap.t / o.dt).round() as usize;
        output::write_membrane(&output::membrane_file(dir, step), &o.trajectory, snap, step, o.epsilon)?;
    }
    let t = o.trajectory.snapshots.last().map_or(0.0, |s| s.t);
    let lengths = output::join_floats(&o.trajectory.domain);
    for (name, values) in [("u_i", &o.u_i), ("u_e", &o.u_e)] {
        let dump = FieldDump::new(name, o.node_shape.clone(), values.clone())
            .with("t", fmt_f64(t))
            .with("lengths", &lengths)
            .with("epsilon", fmt_f64(o.epsilon));
        output::write_field(&dir.join(format!("{name}_final.bin")), &dump)?;
    }
    Ok(())
}

/// Compare every micro snapshot after t = 0 that has a macro snapshot at the
/// same time.
pub fn compare(
    micro: &MembraneTrajectory,
    grid: &NodalGrid,
    macro_v: &[(f64, Vec<f64>)],
) -> Result<ErrorReport, CliError> {
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
    let mut sub = micro.clone();
    sub.snapshots.retain(|s| s.t > 0.0 && macro_v.iter().any(|(t, _)| same(*t, s.t)));
    if sub.snapshots.is_empty() {
        return Err(CliError::Config(
            "micro and macro runs share no snapshot time after t = 0 (align snapshot_every)".into(),
        ));
    }
    compare_to_macro(&sub, grid, macro_v).map_err(stage("validation"))
}

/// Scales and rescaling factors as `(quantity, value)` rows.
pub fn nondim_table(p: &PhysicalParams) -> Result<Vec<(&'static str, f64)>, CliError> {
    let s = derive_scales(p).map_err(stage("nondim"))?;
    let r = Rescaling::new(p).map_err(stage("nondim"))?;
    Ok(vec![
        ("epsilon", s.epsilon),
        ("epsilon_alt", s.epsilon_alt),
        ("epsilon_defect", s.epsilon_defect),
        ("delta", s.delta),
        ("tau", s.tau),
        ("lambda", s.lambda),
        ("conductivity_scale", s.conductivity_scale),
        ("length", s.length),
        ("current_scale", r.current),
        ("gate_scale", r.gate),
    ])
}

pub fn nondim_csv(rows: &[(&str, f64)]) -> String {
    let mut out = String::from("quantity,value\n");
    for (k, v) in rows {
        out.push_str(&format!("{k},{}\n", fmt_f64(*v)));
    }
    out
}

fn json_f64(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

/// Timing and key results of one stage.
#[derive(Clone, Debug)]
pub struct StageRecord {
    pub name: &'static str,
    pub seconds: f64,
    pub details: Value,
}

/// Everything a full pipeline run produced.
pub struct Artifacts {
    pub dir: PathBuf,
    pub geometries: Geometries,
    pub passes: Vec<CellPass>,
    pub macro_run: Option<MacroOutcome>,
    pub micro_run: Option<MicroOutcome>,
    pub validation: Option<ErrorReport>,
    pub stages: Vec<StageRecord>,
    /// Audit failures; non-empty means exit status 4.
    pub issues: Vec<String>,
}

fn timed<T>(
    stages: &mut Vec<StageRecord>,
    name: &'static str,
    f: impl FnOnce() -> Result<(T, Value), CliError>,
) -> Result<T, CliError> {
    let start = Instant::now();
    let (out, details) = f()?;
    stages.push(StageRecord { name, seconds: start.elapsed().as_secs_f64(), details });
    Ok(out)
}

fn pass_json(p: &CellPass) -> Value {
    let pr = &p.tensor.provenance;
    json!({
        "level": p.tensor.level.name(),
        "max_residual": json_f64(pr.max_residual),
        "max_iterations": pr.max_iterations,
        "symmetry_defect": json_f64(pr.symmetry_defect),
        "max_load_defect": json_f64(p.compatibility.iter().copied().fold(0.0, f64::max)),
        "blocked_axes": pr.blocked_axes,
    })
}

/// Run every stage the config enables and write the artifact tree below `dir`:
///
/// ```text
/// geometry/   meso_labels.bin [micro_labels.bin]
/// correctors/ <level>_chi<k>.bin
/// tensors.csv
/// macro/      v_<step>.bin u_e_<step>.bin activation.bin summary.csv velocity.csv
/// micro/      membrane_<step>.csv u_i_final.bin u_e_final.bin
/// validation/ report.csv
/// nondim.csv
/// manifest.json
/// ```
pub fn run_pipeline(cfg: &RunConfig, dir: &Path) -> Result<Artifacts, CliError> {
    std::fs::create_dir_all(dir)?;
    let mut stages = Vec::new();
    let mut issues = Vec::new();
    let opts = solve_options(cfg);

    let geometries = timed(&mut stages, "geometry", || {
        let g = build_geometries(cfg)?;
        if cfg.output.write_labels {
            write_geometry(&dir.join("geometry"), &g)?;
        }
        let d = json!({
            "meso_resolution": g.meso.spec().resolution(),
            "micro_resolution": g.micro.spec().resolution(),
        });
        Ok((g, d))
    })?;

    let passes = timed(&mut stages, "tensors", || {
        let passes = cell_passes(cfg, &geometries, &opts, Scope::All)?;
        if cfg.output.write_correctors {
            write_correctors(&dir.join("correctors"), &passes)?;
        }
        output::write_text(&dir.join("tensors.csv"), &output::tensors_csv(&passes))?;
        let d = Value::Array(passes.iter().map(pass_json).collect());
        Ok((passes, d))
    })?;
    issues.extend(tensor_issues(&passes));

    let macro_run = match &cfg.macro_ {
        None => None,
        Some(_) => Some(timed(&mut stages, "macro", || {
            let inputs = macro_inputs(cfg, &geometries, &passes)?;
            let o = run_macro(cfg, inputs)?;
            write_macro(&dir.join("macro"), &o)?;
            let d = json!({
                "tensor_source": format!("{:?}", o.inputs.source),
                "mu_m": json_f64(o.inputs.mu_m),
                "lengths": o.inputs.lengths,
                "steps": o.run.rows.len() - 1,
                "elliptic_tol": o.elliptic_tol,
                "parabolic_tol": o.parabolic_tol,
                "max_elliptic_residual": json_f64(o.run.max_elliptic_residual),
                "max_parabolic_residual": json_f64(o.run.max_parabolic_residual),
                "max_abs_mean_u_e": json_f64(o.run.max_abs_mean_u_e),
                "max_current_balance": json_f64(o.run.max_current_balance),
                "velocity": o.run.velocity.iter().map(|v| v.map_or(Value::Null, json_f64)).collect::<Vec<_>>(),
            });
            Ok((o, d))
        })?),
    };
    if let Some(o) = &macro_run {
        if o.run.max_abs_mean_u_e > MEAN_U_E_LIMIT {
            issues.push(format!("macro: mean(u_e) reached {:e} > {MEAN_U_E_LIMIT:e}", o.run.max_abs_mean_u_e));
        }
    }

    let micro_run = match &cfg.micro {
        None => None,
        Some(_) => Some(timed(&mut stages, "micro", || {
            let o = run_micro(cfg, &geometries)?;
            write_micro(&dir.join("micro"), &o)?;
            let d = json!({
                "epsilon": o.epsilon,
                "tol": o.tol,
                "membrane_nodes": o.trajectory.positions.len(),
                "max_iterations": o.max_iterations,
                "max_abs_mean_u_e": json_f64(o.max_abs_mean_u_e),
                "max_current_balance": json_f64(o.max_current_balance),
            });
            Ok((o, d))
        })?),
    };
    if let Some(o) = &micro_run {
        if o.max_abs_mean_u_e > MEAN_U_E_LIMIT {
            issues.push(format!("micro: mean(u_e) reached {:e} > {MEAN_U_E_LIMIT:e}", o.max_abs_mean_u_e));
        }
        if o.max_current_balance > CURRENT_BALANCE_LIMIT {
            issues.push(format!(
                "micro: current balance reached {:e} > {CURRENT_BALANCE_LIMIT:e}",
                o.max_current_balance
            ));
        }
    }

    let validation = match (&micro_run, &macro_run) {
        (Some(mi), Some(ma)) => Some(timed(&mut stages, "validation", || {
            let macro_v: Vec<(f64, Vec<f64>)> = ma.snapshots.iter().map(|s| (s.t, s.v.clone())).collect();
            let r = compare(&mi.trajectory, &ma.grid, &macro_v)?;
            output::write_text(&dir.join("validation").join("report.csv"), &output::report_csv(Some(mi.epsilon), &r))?;
            let d = json!({ "times": r.times, "errors": r.errors, "rms": json_f64(r.combined) });
            Ok((r, d))
        })?),
        _ => None,
    };

    if let Some(n) = &cfg.nondim {
        timed(&mut stages, "nondim", || {
            let rows = nondim_table(&n.params())?;
            output::write_text(&dir.join("nondim.csv"), &nondim_csv(&rows))?;
            let d: serde_json::Map<String, Value> = rows.iter().map(|(k, v)| (k.to_string(), json_f64(*v))).collect();
            Ok(((), Value::Object(d)))
        })?;
    }

    let manifest = json!({
        "tool": "trihom",
        "cli_version": env!("CARGO_PKG_VERSION"),
        "core_version": trihom_core::VERSION,
        "threads": rayon::current_num_threads(),
        "tolerances": {
            "cell": opts.tol,
            "cell_max_iter": opts.max_iter,
            "allow_blocked": opts.allow_blocked,
            "macro_elliptic": cfg.macro_.as_ref().map(|m| m.elliptic_tol),
            "macro_parabolic": cfg.macro_.as_ref().map(|m| m.parabolic_tol),
            "micro": cfg.micro.as_ref().map(|m| m.tol),
        },
        "stages": stages.iter().map(|s| json!({
            "name": s.name,
            "wall_seconds": s.seconds,
            "details": s.details,
        })).collect::<Vec<_>>(),
        "issues": issues,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is plain JSON");
    output::write_text(&dir.join("manifest.json"), &(text + "\n"))?;

    Ok(Artifacts {
        dir: dir.to_path_buf(),
        geometries,
        passes,
        macro_run,
        micro_run,
        validation,
        stages,
        issues,
    })
}
