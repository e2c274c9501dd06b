//! Output writers and readers: Voigt tables, trajectory CSV, field
//! snapshots, mesh exports. All floats carry 17 significant digits so every
//! file round-trips to the identical f64 bits.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::CellwallError;
use crate::tensor::{Tensor4, Voigt6};

pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(path: &Path, content: &str) -> Result<(), CellwallError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CellwallError::io(parent.display().to_string(), e))?;
        }
    }
    let mut f = std::fs::File::create(path)
        .map_err(|e| CellwallError::io(path.display().to_string(), e))?;
    f.write_all(content.as_bytes())
        .map_err(|e| CellwallError::io(path.display().to_string(), e))
}

fn read_file(path: &Path) -> Result<String, CellwallError> {
    std::fs::read_to_string(path).map_err(|e| CellwallError::io(path.display().to_string(), e))
}

/// Six lines of six fields, row order (11, 22, 33, 23, 13, 12), MPa.
pub fn write_voigt_table(tensor: &Tensor4, path: &Path) -> Result<(), CellwallError> {
    let c = tensor.voigt();
    let mut s = String::new();
    for i in 0..6 {
        let row: Vec<String> = (0..6).map(|j| format_f64(c[(i, j)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    write_file(path, &s)
}

pub fn read_voigt_table(path: &Path) -> Result<Tensor4, CellwallError> {
    let text = read_file(path)?;
    let mut c = Voigt6::zeros();
    let mut rows = 0;
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        if i >= 6 {
            return Err(CellwallError::Config(format!(
                "{}: more than 6 rows in Voigt table",
                path.display()
            )));
        }
        let vals: Result<Vec<f64>, _> =
            line.split_whitespace().map(|t| t.parse::<f64>()).collect();
        let vals = vals.map_err(|e| {
            CellwallError::Config(format!("{}: bad float in row {i}: {e}", path.display()))
        })?;
        if vals.len() != 6 {
            return Err(CellwallError::Config(format!(
                "{}: row {i} has {} fields, expected 6",
                path.display(),
                vals.len()
            )));
        }
        for (j, v) in vals.into_iter().enumerate() {
            c[(i, j)] = v;
        }
        rows += 1;
    }
    if rows != 6 {
        return Err(CellwallError::Config(format!(
            "{}: {rows} rows in Voigt table, expected 6",
            path.display()
        )));
    }
    Tensor4::from_voigt(c)
}

/// One per-step record of the simulation trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub time: f64,
    /// min/mean/max per species, order p1, p2, n1, n2, b.
    pub species_stats: [[f64; 3]; 5],
    pub strain_norm: f64,
    pub inner_iters: usize,
    pub contraction_ratio: f64,
}

pub fn trajectory_header() -> String {
    let mut h = String::from("time");
    for name in crate::chemistry::SPECIES_NAMES {
        for stat in ["min", "mean", "max"] {
            let _ = write!(h, ",{name}_{stat}");
        }
    }
    h.push_str(",strain_norm,inner_iters,contraction_ratio\n");
    h
}

pub fn write_trajectory(rows: &[TrajectoryRow], path: &Path) -> Result<(), CellwallError> {
    let mut s = trajectory_header();
    for r in rows {
        let _ = write!(s, "{}", format_f64(r.time));
        for sp in &r.species_stats {
            for v in sp {
                let _ = write!(s, ",{}", format_f64(*v));
            }
        }
        let _ = writeln!(
            s,
            ",{},{},{}",
            format_f64(r.strain_norm),
            r.inner_iters,
            format_f64(r.contraction_ratio)
        );
    }
    write_file(path, &s)
}

/// Nodal fields sufficient for a bit-identical restart.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub step: usize,
    pub dt: f64,
    /// Species nodal values, order p1, p2, n1, n2, b.
    pub species: [Vec<f64>; 5],
    /// Displacement, three components per node.
    pub u: Vec<f64>,
}

pub fn write_snapshot(snap: &Snapshot, path: &Path) -> Result<(), CellwallError> {
    let n = snap.species[0].len();
    let mut s = String::new();
    s.push_str("cellwall snapshot v1\n");
    let _ = writeln!(s, "time {}", format_f64(snap.time));
    let _ = writeln!(s, "step {}", snap.step);
    let _ = writeln!(s, "dt {}", format_f64(snap.dt));
    let _ = writeln!(s, "nodes {n}");
    s.push_str("fields p1 p2 n1 n2 b u1 u2 u3\n");
    for i in 0..n {
        let mut row: Vec<String> = (0..5).map(|k| format_f64(snap.species[k][i])).collect();
        for c in 0..3 {
            row.push(format_f64(snap.u[3 * i + c]));
        }
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    write_file(path, &s)
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, CellwallError> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    let bad = |msg: &str| CellwallError::Config(format!("{}: {msg}", path.display()));
    if lines.next() != Some("cellwall snapshot v1") {
        return Err(bad("missing snapshot header"));
    }
    let mut expect = |key: &str| -> Result<String, CellwallError> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))?;
        line.strip_prefix(key)
            .map(|v| v.trim().to_string())
            .ok_or_else(|| bad(&format!("expected '{key}' line")))
    };
    let time: f64 = expect("time ")?.parse().map_err(|_| bad("bad time"))?;
    let step: usize = expect("step ")?.parse().map_err(|_| bad("bad step"))?;
    let dt: f64 = expect("dt ")?.parse().map_err(|_| bad("bad dt"))?;
    let n: usize = expect("nodes ")?.parse().map_err(|_| bad("bad node count"))?;
    expect("fields ")?;
    let mut species: [Vec<f64>; 5] = Default::default();
    for sp in &mut species {
        sp.reserve(n);
    }
    let mut u = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let line = lines.next().ok_or_else(|| bad("truncated node data"))?;
        let vals: Result<Vec<f64>, _> =
            line.split_whitespace().map(|t| t.parse::<f64>()).collect();
        let vals = vals.map_err(|_| bad("bad float in node data"))?;
        if vals.len() != 8 {
            return Err(bad("node row must have 8 fields"));
        }
        for k in 0..5 {
            species[k].push(vals[k]);
        }
        u.extend_from_slice(&vals[5..8]);
    }
    Ok(Snapshot {
        time,
        step,
        dt,
        species,
        u,
    })
}

/// Machine-readable failure record for aborted runs.
pub fn write_failure_record(
    path: &Path,
    step: usize,
    time: f64,
    error: &CellwallError,
) -> Result<(), CellwallError> {
    let mut s = String::new();
    let _ = writeln!(s, "status = \"failed\"");
    let _ = writeln!(s, "step = {step}");
    let _ = writeln!(s, "time = {}", format_f64(time));
    let _ = writeln!(s, "error = {:?}", error.to_string());
    write_file(path, &s)
}

/// Plain-text unit-cell mesh export: vertex coordinates, triangles with
/// region tags, interface edges.
pub fn write_unit_cell_mesh(
    mesh: &crate::mesh::UnitCellMesh,
    path: &Path,
) -> Result<(), CellwallError> {
    let mut s = String::new();
    let _ = writeln!(s, "vertices {}", mesh.vertices.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {}", format_f64(v[0]), format_f64(v[1]));
    }
    let _ = writeln!(s, "triangles {}", mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let tag = match mesh.region[t] {
            crate::mesh::Region::Matrix => "M",
            crate::mesh::Region::Fibril => "F",
        };
        let _ = writeln!(s, "{} {} {} {tag}", tri[0], tri[1], tri[2]);
    }
    let _ = writeln!(s, "interface_edges {}", mesh.interface_edges.len());
    for e in &mesh.interface_edges {
        let _ = writeln!(s, "{} {}", e[0], e[1]);
    }
    write_file(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn voigt_table_round_trip_exact() {
        let t = crate::materials::isotropic_tensor(21.2, 0.29).unwrap();
        let dir = tempdir().unwrap();
        let p = dir.path().join("voigt.txt");
        write_voigt_table(&t, &p).unwrap();
        let back = read_voigt_table(&p).unwrap();
        assert_eq!(t.voigt(), back.voigt());
    }

    #[test]
    fn empty_trajectory_is_header_only() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("traj.csv");
        write_trajectory(&[], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, trajectory_header());
        assert!(text.starts_with("time,p1_min,p1_mean,p1_max,"));
    }

    #[test]
    fn snapshot_write_read_write_byte_identical() {
        let snap = Snapshot {
            time: 0.123456789123456789,
            step: 17,
            dt: 1.0 / 3.0,
            species: [
                vec![1.0, 2.0],
                vec![0.1, 0.2],
                vec![std::f64::consts::PI, 0.0],
                vec![1e-300, 1e300],
                vec![-0.0, 5.5],
            ],
            u: vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6],
        };
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.snap");
        let p2 = dir.path().join("b.snap");
        write_snapshot(&snap, &p1).unwrap();
        let back = read_snapshot(&p1).unwrap();
        write_snapshot(&back, &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(back.time.to_bits(), snap.time.to_bits());
    }

    #[test]
    fn io_errors_carry_path() {
        let err = read_voigt_table(Path::new("/nonexistent/voigt.txt")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/voigt.txt"));
    }
}
