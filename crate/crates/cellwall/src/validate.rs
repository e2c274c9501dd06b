//! Independent oracles and property suites: RK4 well-mixed reference,
//! Monte-Carlo ball-measure oracle, the effective-tensor reproduction
//! harness, and symmetry/bounds checks. None of these reuse the solver
//! under test: the RK4 oracle touches only the kinetics formulas, the
//! Monte-Carlo oracle only geometry.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cell_homog::{
    effective_elasticity, solve_elastic_correctors, StiffnessField,
};
use crate::chemistry::KineticsParams;
use crate::error::CellwallError;
use crate::io::format_f64;
use crate::materials::{
    effective_at_modulus, isotropic_tensor, transversely_isotropic_tensor,
};
use crate::mesh::{build_unit_cell_mesh, volume_fractions};
use crate::tensor::Tensor4;

/// Published reference entries for the effective stiffness at the standard
/// inputs: C11, C12, C13, C33, C44, C66 in MPa.
pub const REFERENCE_VOIGT: [f64; 6] = [21.2, 8.9, 23.3, 43367.5, 14.0, 5.7];

/// Well-mixed right-hand side of the five-species system at a frozen
/// mechanical coupling value. `scale` is 1 for Model I and the matrix volume
/// fraction for Model II (whose homogenized reactions carry that factor).
pub fn well_mixed_rhs(s: [f64; 5], coupling: f64, scale: f64, k: &KineticsParams) -> [f64; 5] {
    let nval = coupling.max(0.0);
    let r_ee = k.r_ee(s[0].max(0.0), s[1].max(0.0));
    let r_dc = k.r_dc(s[2].max(0.0), s[3].max(0.0));
    let r_b = k.r_b(s[4].max(0.0));
    [
        scale * (-r_ee),
        0.0,
        scale * (r_ee - 2.0 * r_dc - k.r_d * s[2].max(0.0) + 2.0 * r_b * nval),
        scale * (-r_dc + r_b * nval),
        scale * (r_dc - r_b * nval),
    ]
}

/// Classic fourth-order one-step integration.
pub fn rk4_integrate(
    y0: [f64; 5],
    t_end: f64,
    dt: f64,
    coupling: f64,
    scale: f64,
    k: &KineticsParams,
) -> [f64; 5] {
    let steps = (t_end / dt).round().max(1.0) as usize;
    let h = t_end / steps as f64;
    let mut y = y0;
    for _ in 0..steps {
        let k1 = well_mixed_rhs(y, coupling, scale, k);
        let k2 = well_mixed_rhs(add_scaled(y, k1, 0.5 * h), coupling, scale, k);
        let k3 = well_mixed_rhs(add_scaled(y, k2, 0.5 * h), coupling, scale, k);
        let k4 = well_mixed_rhs(add_scaled(y, k3, h), coupling, scale, k);
        for i in 0..5 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

fn add_scaled(y: [f64; 5], d: [f64; 5], s: f64) -> [f64; 5] {
    let mut out = y;
    for i in 0..5 {
        out[i] += s * d[i];
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct WellMixedReference {
    pub state: [f64; 5],
    /// Relative change when dt_ref is halved; certifies the oracle.
    pub richardson: f64,
}

/// Reference solution with a Richardson self-check: halving the reference
/// step must change the result by less than 1e-10 relative.
pub fn well_mixed_oracle(
    y0: [f64; 5],
    coupling: f64,
    scale: f64,
    k: &KineticsParams,
    t_end: f64,
    dt_ref: f64,
) -> Result<WellMixedReference, CellwallError> {
    if dt_ref <= 0.0 || t_end <= 0.0 {
        return Err(CellwallError::InvalidChemistry(
            "oracle needs positive t_end and dt_ref".into(),
        ));
    }
    let coarse = rk4_integrate(y0, t_end, dt_ref, coupling, scale, k);
    let fine = rk4_integrate(y0, t_end, dt_ref / 2.0, coupling, scale, k);
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for i in 0..5 {
        num = num.max((coarse[i] - fine[i]).abs());
        den = den.max(fine[i].abs());
    }
    let richardson = num / den.max(1e-300);
    if richardson >= 1e-10 {
        return Err(CellwallError::InvalidChemistry(format!(
            "well-mixed oracle failed its Richardson self-check: {richardson:.3e} (dt_ref too coarse)"
        )));
    }
    Ok(WellMixedReference {
        state: fine,
        richardson,
    })
}

/// Monte-Carlo estimate of |B_delta(center) ∩ box|: uniform samples in the
/// ball, fraction landing inside the box, times the full ball volume.
pub fn monte_carlo_ball_measure(
    center: [f64; 3],
    delta: f64,
    extents: [f64; 3],
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inside = 0usize;
    for _ in 0..samples {
        // Uniform point in the ball: direction times radius ~ U^(1/3).
        let mut v;
        loop {
            v = [
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0f64),
                rng.gen_range(-1.0..1.0f64),
            ];
            let n2: f64 = v.iter().map(|x| x * x).sum();
            if n2 > 0.0 && n2 <= 1.0 {
                break;
            }
        }
        let p = [
            center[0] + delta * v[0],
            center[1] + delta * v[1],
            center[2] + delta * v[2],
        ];
        if (0.0..=extents[0]).contains(&p[0])
            && (0.0..=extents[1]).contains(&p[1])
            && (0.0..=extents[2]).contains(&p[2])
        {
            inside += 1;
        }
    }
    let ball = 4.0 / 3.0 * std::f64::consts::PI * delta.powi(3);
    ball * inside as f64 / samples as f64
}

#[derive(Debug, Clone)]
pub struct Table1Report {
    pub h: f64,
    pub tensor: Tensor4,
    /// Relative deviation from the reference for (C11, C12, C13, C33, C44, C66).
    pub rel_dev: [f64; 6],
    /// Largest entry outside the tetragonal pattern, relative to C11.
    pub max_coupling: f64,
    /// C11 vs C22, C44 vs C55, C13 vs C23 relative mismatches.
    pub symmetry: [f64; 3],
    pub min_eig: f64,
    pub theta_m: f64,
}

/// Effective-tensor reproduction at the standard constituent parameters
/// (matrix E = 10 MPa from the affine law at b = 2.48, nu = 0.3; stiff
/// transversely isotropic fibril at r = 0.25).
pub fn table1_harness(h: f64, solver_tol: f64) -> Result<Table1Report, CellwallError> {
    let mesh = build_unit_cell_mesh(0.25, h)?;
    let fibril = transversely_isotropic_tensor(15000.0, 0.3, 0.068, 0.11, 84842.0)?;
    let tensor = effective_at_modulus(&mesh, &fibril, 0.3, 10.0, solver_tol)?;
    let c = tensor.voigt();
    let picks = [
        c[(0, 0)],
        c[(0, 1)],
        c[(0, 2)],
        c[(2, 2)],
        c[(3, 3)],
        c[(5, 5)],
    ];
    let mut rel_dev = [0.0; 6];
    for i in 0..6 {
        rel_dev[i] = (picks[i] - REFERENCE_VOIGT[i]).abs() / REFERENCE_VOIGT[i].abs();
    }
    let mut max_coupling: f64 = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            let tetragonal = (i < 3 && j < 3) || i == j;
            if !tetragonal {
                max_coupling = max_coupling.max(c[(i, j)].abs());
            }
        }
    }
    max_coupling /= c[(0, 0)];
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs());
    let symmetry = [
        rel(c[(0, 0)], c[(1, 1)]),
        rel(c[(3, 3)], c[(4, 4)]),
        rel(c[(0, 2)], c[(1, 2)]),
    ];
    let (theta_m, _) = volume_fractions(&mesh);
    Ok(Table1Report {
        h,
        tensor,
        rel_dev,
        max_coupling,
        symmetry,
        min_eig: tensor.min_voigt_eigenvalue(),
        theta_m,
    })
}

impl Table1Report {
    pub fn format(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "effective stiffness at h = {}", self.h);
        let c = self.tensor.voigt();
        for i in 0..6 {
            let row: Vec<String> = (0..6).map(|j| format!("{:12.4}", c[(i, j)])).collect();
            let _ = writeln!(s, "  {}", row.join(" "));
        }
        let names = ["C11", "C12", "C13", "C33", "C44", "C66"];
        for (i, n) in names.iter().enumerate() {
            let _ = writeln!(
                s,
                "  {n}: ref {:>10} dev {:.3e}",
                REFERENCE_VOIGT[i], self.rel_dev[i]
            );
        }
        let _ = writeln!(
            s,
            "  max off-pattern coupling {:.3e}  symmetry {:.3e} {:.3e} {:.3e}",
            self.max_coupling, self.symmetry[0], self.symmetry[1], self.symmetry[2]
        );
        let _ = writeln!(s, "  min Voigt eigenvalue {:.6e}", self.min_eig);
        s
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        pass,
        detail,
    }
}

/// Symmetry, ellipticity, degeneration, and upper-bound checks on the cell
/// problems. `h` controls the mesh for the internal solves.
pub fn bounds_and_symmetry_suite(h: f64, seed: u64) -> Result<Vec<Check>, CellwallError> {
    let mut out = Vec::new();
    let solver_tol = 1e-12;

    // Tetragonal pattern of the standard composite.
    let report = table1_harness(h, solver_tol)?;
    out.push(check(
        "tetragonal_pattern",
        report.symmetry.iter().all(|&s| s < 1e-8) && report.max_coupling < 1e-6,
        format!(
            "symmetry {:?} coupling {:.3e}",
            report.symmetry, report.max_coupling
        ),
    ));
    out.push(check(
        "ellipticity",
        report.min_eig > 0.0,
        format!("min eigenvalue {:.6e}", report.min_eig),
    ));

    // Homogeneous medium: correctors vanish, effective tensor equals the
    // constituent.
    let mesh = build_unit_cell_mesh(0.25, h)?;
    let iso = isotropic_tensor(10.0, 0.3)?;
    let field = StiffnessField {
        matrix: iso,
        fibril: iso,
    };
    let correctors = solve_elastic_correctors(&mesh, &field, solver_tol)?;
    let max_corr = correctors
        .w
        .iter()
        .flat_map(|w| w.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let hom = effective_elasticity(&mesh, &field, &correctors)?;
    out.push(check(
        "homogeneous_degeneration",
        max_corr < 1e-10 && hom.rel_diff(&iso) < 1e-10,
        format!("corrector sup {:.3e} deviation {:.3e}", max_corr, hom.rel_diff(&iso)),
    ));

    // Voigt (arithmetic-mean) upper bound for random isotropic constituents.
    let (theta_m, theta_f) = volume_fractions(&mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bound_ok = true;
    let mut worst = f64::INFINITY;
    for _ in 0..10 {
        let em = rng.gen_range(1.0..10.0);
        let ef = rng.gen_range(1.0..100.0);
        let num = rng.gen_range(0.0..0.45);
        let nuf = rng.gen_range(0.0..0.45);
        let cm = isotropic_tensor(em, num)?;
        let cf = isotropic_tensor(ef, nuf)?;
        let f = StiffnessField {
            matrix: cm,
            fibril: cf,
        };
        let corr = solve_elastic_correctors(&mesh, &f, solver_tol)?;
        let hom = effective_elasticity(&mesh, &f, &corr)?;
        let voigt_bound = cm.scale(theta_m).add(&cf.scale(theta_f));
        // The bound holds in the quadratic-form sense.
        let gap = voigt_bound.sub(&hom).min_voigt_eigenvalue();
        worst = worst.min(gap);
        if gap < -1e-8 * voigt_bound.voigt().norm() {
            bound_ok = false;
        }
    }
    out.push(check(
        "voigt_upper_bound",
        bound_ok,
        format!("smallest bound gap eigenvalue {worst:.3e} over 10 draws"),
    ));

    Ok(out)
}

/// Writes a golden reference file with a provenance header. The values come
/// from an oracle whose self-convergence has already been certified.
pub fn write_golden(
    path: &Path,
    description: &str,
    tolerances: &str,
    values: &[(String, f64)],
) -> Result<(), CellwallError> {
    let git = std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into());
    let mut s = String::new();
    let _ = writeln!(s, "# golden reference: {description}");
    let _ = writeln!(s, "# git: {git}");
    let _ = writeln!(s, "# tolerances: {tolerances}");
    for (name, v) in values {
        let _ = writeln!(s, "{name} {}", format_f64(*v));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CellwallError::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, s).map_err(|e| CellwallError::io(path.display().to_string(), e))
}

pub fn read_golden(path: &Path) -> Result<Vec<(String, f64)>, CellwallError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CellwallError::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let name = it
            .next()
            .ok_or_else(|| CellwallError::Config("bad golden line".into()))?;
        let v: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| CellwallError::Config(format!("bad golden value for {name}")))?;
        out.push((name.to_string(), v));
    }
    Ok(out)
}
