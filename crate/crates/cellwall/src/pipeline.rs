//! Orchestration: turns a configuration into the effective model the macro
//! solver consumes (affine tensor family, effective diffusion, localization),
//! with an on-disk cache keyed by a fingerprint of the geometry and material
//! sections so the cell solves run once per configuration.

use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;

use crate::cell_homog::{
    effective_diffusion, localization_field, solve_elastic_correctors, solve_scalar_correctors,
    LocalizationField, StiffnessField,
};
use crate::config::SimConfig;
use crate::error::CellwallError;
use crate::io::format_f64;
use crate::materials::{
    build_affine_family, isotropic_tensor, transversely_isotropic_tensor, AffineTensorFamily,
};
use crate::mesh::{build_unit_cell_mesh, volume_fractions, Region};
use crate::tensor::Voigt6;

/// Everything the macroscopic solver needs from the cell problems.
#[derive(Debug, Clone)]
pub struct EffectiveModel {
    pub family: AffineTensorFamily,
    /// Effective diffusion tensor for unit molecular diffusivity; species
    /// tensors are this scaled by their molecular coefficient.
    pub d_unit: Matrix3<f64>,
    /// Strain localization, computed at the initial cross-link density.
    pub localization: Option<LocalizationField>,
    pub theta_m: f64,
    pub mesh_id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepareStats {
    pub cache_hit: bool,
    /// Number of cell corrector solves performed (0 on a clean cache hit).
    pub cell_solves: usize,
}

/// Stable fingerprint over the inputs that determine the effective model.
pub fn model_fingerprint(config: &SimConfig) -> String {
    let mut canon = String::new();
    let g = &config.geometry;
    let m = &config.materials;
    let _ = write!(
        canon,
        "geometry r={} h={} | materials nu={} law={},{} fibril={},{},{},{},{} anchors={},{}",
        format_f64(g.radius),
        format_f64(g.h_cell),
        format_f64(m.nu_m),
        format_f64(m.law_slope),
        format_f64(m.law_intercept),
        format_f64(m.fibril_e),
        format_f64(m.fibril_nu1),
        format_f64(m.fibril_n),
        format_f64(m.fibril_nu2),
        format_f64(m.fibril_z),
        format_f64(m.anchors[0]),
        format_f64(m.anchors[1]),
    );
    let _ = write!(
        canon,
        " | norm_eff={} | b0={}",
        config.coupling.normalize_effective_by_theta_m,
        format_f64(config.initial.b),
    );
    let mut h = std::collections::hash_map::DefaultHasher::new();
    canon.hash(&mut h);
    format!("{:016x}", h.finish())
}

/// Runs (or loads) the cell solves for the given configuration. Pass a cache
/// directory to reuse results across invocations; the directory is safe to
/// delete wholesale.
pub fn prepare_effective_model(
    config: &SimConfig,
    cache_dir: Option<&Path>,
) -> Result<(EffectiveModel, PrepareStats), CellwallError> {
    config.validate()?;
    let fingerprint = model_fingerprint(config);
    if let Some(dir) = cache_dir {
        let slot = dir.join(&fingerprint);
        if slot.is_dir() {
            match load_cached_model(&slot, config) {
                Ok(model) => {
                    return Ok((
                        model,
                        PrepareStats {
                            cache_hit: true,
                            cell_solves: 0,
                        },
                    ))
                }
                Err(e) => {
                    eprintln!(
                        "warning: effective-model cache at {} is unusable ({e}); recomputing",
                        slot.display()
                    );
                }
            }
        }
    }

    let model = compute_effective_model(config)?;
    if let Some(dir) = cache_dir {
        store_cached_model(&dir.join(&fingerprint), &model)?;
    }
    Ok((
        model,
        PrepareStats {
            cache_hit: false,
            cell_solves: 4,
        },
    ))
}

fn compute_effective_model(config: &SimConfig) -> Result<EffectiveModel, CellwallError> {
    let g = &config.geometry;
    let m = &config.materials;
    let mesh = build_unit_cell_mesh(g.radius, g.h_cell)?;
    let (theta_m, _) = volume_fractions(&mesh);
    let tol = config.stepping.solver_tol;

    let fibril = transversely_isotropic_tensor(
        m.fibril_e,
        m.fibril_nu1,
        m.fibril_n,
        m.fibril_nu2,
        m.fibril_z,
    )?;

    let family = build_affine_family(
        &mesh,
        &fibril,
        m.nu_m,
        (m.anchors[0], m.anchors[1]),
        m.law(),
        tol,
    )?;

    let scalar = solve_scalar_correctors(&mesh, &Matrix3::identity(), tol)?;
    let mut d_unit = effective_diffusion(&mesh, &Matrix3::identity(), &scalar)?;
    if config.coupling.normalize_effective_by_theta_m {
        d_unit /= theta_m;
    }

    // Localization at the initial cross-link density; the affine family covers
    // the b-dependence of the effective stiffness, while the strain
    // localization is frozen at this reference state.
    let e0 = m.law().evaluate(config.initial.b)?;
    let field = StiffnessField {
        matrix: isotropic_tensor(e0, m.nu_m)?,
        fibril,
    };
    let correctors = solve_elastic_correctors(&mesh, &field, tol)?;
    let localization = localization_field(&mesh, &correctors)?;

    Ok(EffectiveModel {
        family,
        d_unit,
        localization: Some(localization),
        theta_m,
        mesh_id: mesh.id(),
    })
}

const META_HEADER: &str = "cellwall effective model v1";

fn store_cached_model(slot: &Path, model: &EffectiveModel) -> Result<(), CellwallError> {
    std::fs::create_dir_all(slot)
        .map_err(|e| CellwallError::io(slot.display().to_string(), e))?;
    let mut meta = String::new();
    let _ = writeln!(meta, "{META_HEADER}");
    let _ = writeln!(meta, "mesh_id {}", model.mesh_id);
    let _ = writeln!(meta, "theta_m {}", format_f64(model.theta_m));
    let _ = writeln!(
        meta,
        "anchors {} {}",
        format_f64(model.family.anchors.0),
        format_f64(model.family.anchors.1)
    );
    let _ = writeln!(
        meta,
        "law {} {}",
        format_f64(model.family.law.slope),
        format_f64(model.family.law.intercept)
    );
    write_text(&slot.join("meta.txt"), &meta)?;
    crate::io::write_voigt_table(&model.family.slope_tensor, &slot.join("slope.voigt"))?;
    crate::io::write_voigt_table(&model.family.offset_tensor, &slot.join("offset.voigt"))?;

    let mut d = String::new();
    for i in 0..3 {
        let row: Vec<String> = (0..3).map(|j| format_f64(model.d_unit[(i, j)])).collect();
        let _ = writeln!(d, "{}", row.join(" "));
    }
    write_text(&slot.join("d_unit.txt"), &d)?;

    if let Some(loc) = &model.localization {
        let mut s = String::new();
        let _ = writeln!(s, "triangles {}", loc.id_plus_s.len());
        for t in 0..loc.id_plus_s.len() {
            let tag = match loc.region[t] {
                Region::Matrix => "M",
                Region::Fibril => "F",
            };
            let mut row = vec![tag.to_string(), format_f64(loc.areas[t])];
            let w = &loc.id_plus_s[t];
            for i in 0..6 {
                for j in 0..6 {
                    row.push(format_f64(w[(i, j)]));
                }
            }
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        write_text(&slot.join("localization.txt"), &s)?;
    }
    Ok(())
}

fn load_cached_model(slot: &Path, config: &SimConfig) -> Result<EffectiveModel, CellwallError> {
    let meta = read_text(&slot.join("meta.txt"))?;
    let mut lines = meta.lines();
    let bad = |msg: &str| CellwallError::Config(format!("{}: {msg}", slot.display()));
    if lines.next() != Some(META_HEADER) {
        return Err(bad("unrecognized cache header"));
    }
    let mut mesh_id = None;
    let mut theta_m = None;
    let mut anchors = None;
    let mut law = None;
    for line in lines {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("mesh_id") => {
                mesh_id = Some(
                    it.next()
                        .and_then(|v| v.parse::<u64>().ok())
                        .ok_or_else(|| bad("bad mesh_id"))?,
                )
            }
            Some("theta_m") => {
                theta_m = Some(
                    it.next()
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or_else(|| bad("bad theta_m"))?,
                )
            }
            Some("anchors") => {
                let a: Vec<f64> = it.filter_map(|v| v.parse().ok()).collect();
                if a.len() != 2 {
                    return Err(bad("bad anchors"));
                }
                anchors = Some((a[0], a[1]));
            }
            Some("law") => {
                let a: Vec<f64> = it.filter_map(|v| v.parse().ok()).collect();
                if a.len() != 2 {
                    return Err(bad("bad law"));
                }
                law = Some(crate::materials::YoungModulusLaw {
                    slope: a[0],
                    intercept: a[1],
                });
            }
            _ => {}
        }
    }
    let mesh_id = mesh_id.ok_or_else(|| bad("missing mesh_id"))?;
    let theta_m = theta_m.ok_or_else(|| bad("missing theta_m"))?;
    let anchors = anchors.ok_or_else(|| bad("missing anchors"))?;
    let law = law.ok_or_else(|| bad("missing law"))?;
    if law != config.materials.law()
        || anchors != (config.materials.anchors[0], config.materials.anchors[1])
    {
        return Err(bad("material fingerprint mismatch"));
    }

    let slope_tensor = crate::io::read_voigt_table(&slot.join("slope.voigt"))?;
    let offset_tensor = crate::io::read_voigt_table(&slot.join("offset.voigt"))?;

    let d_text = read_text(&slot.join("d_unit.txt"))?;
    let mut d_unit = Matrix3::<f64>::zeros();
    let rows: Vec<&str> = d_text.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != 3 {
        return Err(bad("d_unit must have 3 rows"));
    }
    for (i, row) in rows.iter().enumerate() {
        let vals: Vec<f64> = row
            .split_whitespace()
            .map(|v| v.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("bad float in d_unit"))?;
        if vals.len() != 3 {
            return Err(bad("d_unit rows must have 3 fields"));
        }
        for j in 0..3 {
            d_unit[(i, j)] = vals[j];
        }
    }

    let loc_path = slot.join("localization.txt");
    let localization = if loc_path.is_file() {
        let text = read_text(&loc_path)?;
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| bad("empty localization"))?;
        let nt: usize = head
            .strip_prefix("triangles ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad localization header"))?;
        let mut id_plus_s = Vec::with_capacity(nt);
        let mut areas = Vec::with_capacity(nt);
        let mut region = Vec::with_capacity(nt);
        for _ in 0..nt {
            let line = lines.next().ok_or_else(|| bad("truncated localization"))?;
            let mut it = line.split_whitespace();
            region.push(match it.next() {
                Some("M") => Region::Matrix,
                Some("F") => Region::Fibril,
                _ => return Err(bad("bad region tag")),
            });
            let vals: Vec<f64> = it
                .map(|v| v.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("bad float in localization"))?;
            if vals.len() != 37 {
                return Err(bad("localization rows must have 38 fields"));
            }
            areas.push(vals[0]);
            let mut w = Voigt6::zeros();
            for i in 0..6 {
                for j in 0..6 {
                    w[(i, j)] = vals[1 + 6 * i + j];
                }
            }
            id_plus_s.push(w);
        }
        Some(LocalizationField {
            id_plus_s,
            areas,
            region,
            mesh_id,
            theta_m,
        })
    } else {
        None
    };

    Ok(EffectiveModel {
        family: AffineTensorFamily {
            slope_tensor,
            offset_tensor,
            law,
            mesh_id,
            anchors,
        },
        d_unit,
        localization,
        theta_m,
        mesh_id,
    })
}

fn write_text(path: &PathBuf, content: &str) -> Result<(), CellwallError> {
    std::fs::write(path, content).map_err(|e| CellwallError::io(path.display().to_string(), e))
}

fn read_text(path: &PathBuf) -> Result<String, CellwallError> {
    std::fs::read_to_string(path).map_err(|e| CellwallError::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_config() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.geometry.h_cell = 0.12;
        cfg
    }

    #[test]
    fn second_invocation_hits_cache_with_zero_solves() {
        let cfg = small_config();
        let dir = tempdir().unwrap();
        let (m1, s1) = prepare_effective_model(&cfg, Some(dir.path())).unwrap();
        assert!(!s1.cache_hit);
        assert!(s1.cell_solves > 0);
        let (m2, s2) = prepare_effective_model(&cfg, Some(dir.path())).unwrap();
        assert!(s2.cache_hit);
        assert_eq!(s2.cell_solves, 0);
        // Bit-identical reload.
        assert_eq!(m1.family.slope_tensor.voigt(), m2.family.slope_tensor.voigt());
        assert_eq!(m1.family.offset_tensor.voigt(), m2.family.offset_tensor.voigt());
        assert_eq!(m1.d_unit, m2.d_unit);
        assert_eq!(m1.theta_m.to_bits(), m2.theta_m.to_bits());
        let l1 = m1.localization.as_ref().unwrap();
        let l2 = m2.localization.as_ref().unwrap();
        assert_eq!(l1.id_plus_s, l2.id_plus_s);
        assert_eq!(l1.areas, l2.areas);
    }

    #[test]
    fn changed_material_misses_cache() {
        let cfg = small_config();
        let dir = tempdir().unwrap();
        prepare_effective_model(&cfg, Some(dir.path())).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.materials.nu_m = 0.25;
        let (_, stats) = prepare_effective_model(&cfg2, Some(dir.path())).unwrap();
        assert!(!stats.cache_hit);
    }

    #[test]
    fn homogeneous_cell_gives_isotropic_family_and_identity_localization() {
        let mut cfg = small_config();
        cfg.geometry.radius = 0.0;
        let (model, _) = prepare_effective_model(&cfg, None).unwrap();
        // Without an inclusion the family reproduces the isotropic matrix
        // tensor at any modulus.
        let direct = isotropic_tensor(10.0, cfg.materials.nu_m).unwrap();
        let fam = model.family.evaluate_at_modulus(10.0);
        assert!(fam.rel_diff(&direct) < 1e-10, "{}", fam.rel_diff(&direct));
        let loc = model.localization.as_ref().unwrap();
        assert!(loc.average_deviation_from_identity() < 1e-10);
        for w in &loc.id_plus_s {
            assert!((w - Voigt6::identity()).norm() < 1e-9);
        }
        assert!((model.theta_m - 1.0).abs() < 1e-12);
        // Effective diffusion collapses to the identity.
        assert!((model.d_unit - Matrix3::identity()).norm() < 1e-10);
    }
}
