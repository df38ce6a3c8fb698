//! Artifact writers and readers. Floats are written in their shortest
//! round-trip form, so a reader recovers the exact `f64`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use trihom_core::fieldio::FieldDump;
use trihom_core::microref::MembraneSnapshot;
use trihom_core::{ErrorReport, MembraneTrajectory, UnitCellGeometry};

use crate::pipeline::CellPass;
use crate::CliError;

/// Shortest round-trip text for `x`, switching to exponent form for very
/// large or small magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn join_f64(xs: &[f64], sep: &str) -> String {
    xs.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(sep)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn io_err(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {what}", path.display())))
}

pub fn write_labels(path: &Path, geom: &UnitCellGeometry) -> Result<(), CliError> {
    let mut w = create(path)?;
    geom.write_labels(&mut w).map_err(|e| io_err(path, e))?;
    w.flush()?;
    Ok(())
}

pub fn write_field(path: &Path, dump: &FieldDump) -> Result<(), CliError> {
    let mut w = create(path)?;
    dump.write(&mut w).map_err(|e| io_err(path, e))?;
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<FieldDump, CliError> {
    let r = BufReader::new(File::open(path)?);
    FieldDump::read(r).map_err(|e| io_err(path, e))
}

/// `tensors.csv`: one row per homogenized tensor.
pub fn tensors_csv(passes: &[CellPass]) -> String {
    let dim = passes.first().map_or(0, |p| p.tensor.entries.nrows());
    let mut cols = vec!["level".to_string(), "dim".into(), "resolution".into()];
    for a in 0..dim {
        for b in 0..dim {
            cols.push(format!("m_{a}{b}"));
        }
    }
    cols.extend((0..dim).map(|k| format!("eig_{k}")));
    cols.extend(
        [
            "symmetry_defect",
            "mu_m",
            "max_residual",
            "max_iterations",
            "normalization_volume",
            "active_volume",
            "blocked_axes",
        ]
        .map(String::from),
    );
    let mut out = cols.join(",");
    out.push('\n');
    for p in passes {
        let t = &p.tensor;
        let pr = &t.provenance;
        let mut row = vec![
            t.level.name().to_string(),
            dim.to_string(),
            pr.resolution.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x"),
        ];
        for a in 0..dim {
            for b in 0..dim {
                row.push(fmt_f64(t.entries[(a, b)]));
            }
        }
        row.extend(t.eigenvalues().into_iter().map(fmt_f64));
        row.push(fmt_f64(pr.symmetry_defect));
        row.push(fmt_f64(p.mu_m));
        row.push(fmt_f64(pr.max_residual));
        row.push(pr.max_iterations.to_string());
        row.push(fmt_f64(pr.normalization_volume));
        row.push(fmt_f64(pr.active_volume));
        row.push(pr.blocked_axes.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(";"));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// One row of a parsed `tensors.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRow {
    pub level: String,
    pub entries: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub blocked_axes: Vec<usize>,
}

pub fn read_tensors_csv(path: &Path) -> Result<Vec<TensorRow>, CliError> {
    let text = fs::read_to_string(path)?;
    let bad = |what: &str| io_err(path, what);
    let mut lines = text.lines();
    lines.next().ok_or_else(|| bad("empty file"))?;
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let dim: usize = f.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad dim"))?;
        if f.len() != 3 + dim * dim + dim + 7 {
            return Err(bad("wrong column count"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let mut entries = vec![vec![0.0; dim]; dim];
        for a in 0..dim {
            for b in 0..dim {
                entries[a][b] = num(f[3 + a * dim + b])?;
            }
        }
        let eigenvalues = (0..dim).map(|k| num(f[3 + dim * dim + k])).collect::<Result<_, _>>()?;
        let blocked = f[f.len() - 1];
        let blocked_axes = if blocked.is_empty() {
            Vec::new()
        } else {
            blocked.split(';').map(|s| s.parse().map_err(|_| bad("bad axis"))).collect::<Result<_, _>>()?
        };
        rows.push(TensorRow { level: f[0].to_string(), entries, eigenvalues, blocked_axes });
    }
    Ok(rows)
}

/// Membrane snapshot file name for a step.
pub fn membrane_file(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("membrane_{step:06}.csv"))
}

/// `# TRIHOM-MEMBRANE t=<t> step=<k> epsilon=<ε> domain=<w>,<h>` then
/// `x,y,weight,v,w` rows, one per membrane node.
pub fn write_membrane(
    path: &Path,
    traj: &MembraneTrajectory,
    snap: &MembraneSnapshot,
    step: usize,
    epsilon: f64,
) -> Result<(), CliError> {
    let mut w = create(path)?;
    writeln!(
        w,
        "# TRIHOM-MEMBRANE t={} step={step} epsilon={} domain={}",
        fmt_f64(snap.t),
        fmt_f64(epsilon),
        join_f64(&traj.domain, ",")
    )?;
    writeln!(w, "x,y,weight,v,w")?;
    for k in 0..traj.positions.len() {
        let p = traj.positions[k];
        writeln!(
            w,
            "{},{},{},{},{}",
            fmt_f64(p[0]),
            fmt_f64(p[1]),
            fmt_f64(traj.weights[k]),
            fmt_f64(snap.v[k]),
            fmt_f64(snap.w[k])
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Read every `membrane_*.csv` in `dir` back into a trajectory (snapshots in
/// time order). All files must share the same membrane nodes.
pub fn read_membrane_dir(dir: &Path) -> Result<MembraneTrajectory, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("membrane_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(io_err(dir, "no membrane_*.csv files"));
    }
    let mut traj: Option<MembraneTrajectory> = None;
    for path in &files {
        let text = fs::read_to_string(path)?;
        let bad = |what: &str| io_err(path, what);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file"))?;
        let rest = header.strip_prefix("# TRIHOM-MEMBRANE ").ok_or_else(|| bad("missing header"))?;
        let mut t = None;
        let mut domain = None;
        for kv in rest.split(' ') {
            match kv.split_once('=') {
                Some(("t", v)) => t = v.parse::<f64>().ok(),
                Some(("domain", v)) => {
                    let d: Vec<f64> = v.split(',').filter_map(|x| x.parse().ok()).collect();
                    if d.len() == 2 {
                        domain = Some([d[0], d[1]]);
                    }
                }
                _ => {}
            }
        }
        let (t, domain) = t.zip(domain).ok_or_else(|| bad("header lacks t or domain"))?;
        if lines.next() != Some("x,y,weight,v,w") {
            return Err(bad("missing column header"));
        }
        let (mut pos, mut wts, mut v, mut w) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for line in lines {
            let f: Vec<f64> = line.split(',').map(|s| s.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad("bad number"))?;
            if f.len() != 5 {
                return Err(bad("expected 5 columns"));
            }
            pos.push([f[0], f[1]]);
            wts.push(f[2]);
            v.push(f[3]);
            w.push(f[4]);
        }
        let snap = MembraneSnapshot { t, v, w };
        match &mut traj {
            None => traj = Some(MembraneTrajectory { domain, positions: pos, weights: wts, snapshots: vec![snap] }),
            Some(tr) => {
                if tr.positions != pos || tr.weights != wts || tr.domain != domain {
                    return Err(bad("membrane nodes differ from the first snapshot"));
                }
                tr.snapshots.push(snap);
            }
        }
    }
    let mut traj = traj.unwrap();
    traj.snapshots.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(traj)
}

/// Macro snapshot file names.
pub fn macro_v_file(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("v_{step:06}.bin"))
}

pub fn macro_u_e_file(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("u_e_{step:06}.bin"))
}

/// Every `v_*.bin` in `dir` as `(t, values)` plus the grid they share.
pub fn read_macro_dir(dir: &Path) -> Result<(Vec<f64>, Vec<usize>, Vec<(f64, Vec<f64>)>), CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("v_") && n.ends_with(".bin"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(io_err(dir, "no v_*.bin files"));
    }
    let mut grid: Option<(Vec<f64>, Vec<usize>)> = None;
    let mut out = Vec::new();
    for path in &files {
        let d = read_field(path)?;
        let bad = |what: &str| io_err(path, what);
        let t: f64 = d.meta("t").and_then(|s| s.parse().ok()).ok_or_else(|| bad("missing t"))?;
        let lengths: Vec<f64> = d
            .meta("lengths")
            .ok_or_else(|| bad("missing lengths"))?
            .split(',')
            .map(|s| s.parse().map_err(|_| bad("bad lengths")))
            .collect::<Result<_, _>>()?;
        let resolution: Vec<usize> = d
            .meta("resolution")
            .ok_or_else(|| bad("missing resolution"))?
            .split(',')
            .map(|s| s.parse().map_err(|_| bad("bad resolution")))
            .collect::<Result<_, _>>()?;
        match &grid {
            None => grid = Some((lengths, resolution)),
            Some(g) if *g != (lengths, resolution) => return Err(bad("grid differs between snapshots")),
            _ => {}
        }
        out.push((t, d.values));
    }
    let (lengths, resolution) = grid.unwrap();
    Ok((lengths, resolution, out))
}

/// `kind,t,l2_error`: one `time` row per compared snapshot, then one `rms` row.
pub fn report_csv(epsilon: Option<f64>, report: &ErrorReport) -> String {
    let mut out = String::from("kind,epsilon,t,l2_error\n");
    let eps = epsilon.map(fmt_f64).unwrap_or_default();
    for (t, e) in report.times.iter().zip(&report.errors) {
        out.push_str(&format!("time,{eps},{},{}\n", fmt_f64(*t), fmt_f64(*e)));
    }
    out.push_str(&format!("rms,{eps},,{}\n", fmt_f64(report.combined)));
    out
}

pub fn join_floats(xs: &[f64]) -> String {
    join_f64(xs, ",")
}
