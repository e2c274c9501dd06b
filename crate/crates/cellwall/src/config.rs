//! Simulation configuration: TOML schema with strict key checking, defaults,
//! and a validation pass that reports every problem at once.

use serde::{Deserialize, Serialize};

use crate::chemistry::{CouplingVariant, FluxParams, KineticsParams};
use crate::error::CellwallError;
use crate::materials::YoungModulusLaw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    I,
    II,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    /// Fibril radius in the unit cell, in [0, 0.5).
    pub radius: f64,
    /// Target cell mesh size.
    pub h_cell: f64,
    /// Macroscopic box extents (a1, a2, a3).
    pub extents: [f64; 3],
    /// Macroscopic cells per direction.
    pub macro_cells: [usize; 3],
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            radius: 0.25,
            h_cell: 0.05,
            extents: [1.0, 1.0, 1.0],
            macro_cells: [4, 4, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialsConfig {
    /// Matrix Poisson ratio.
    pub nu_m: f64,
    /// Affine law E(b) = slope * b + intercept (MPa per uM, MPa).
    pub law_slope: f64,
    pub law_intercept: f64,
    /// Fibril transverse isotropy: in-plane modulus, in-plane Poisson,
    /// modulus ratio (axial = e / n), axial Poisson, axial shear modulus.
    pub fibril_e: f64,
    pub fibril_nu1: f64,
    pub fibril_n: f64,
    pub fibril_nu2: f64,
    pub fibril_z: f64,
    /// Anchor matrix moduli for the affine family construction.
    pub anchors: [f64; 2],
}

impl Default for MaterialsConfig {
    fn default() -> Self {
        Self {
            nu_m: 0.3,
            law_slope: 0.775,
            law_intercept: 8.08,
            fibril_e: 15000.0,
            fibril_nu1: 0.3,
            fibril_n: 0.068,
            fibril_nu2: 0.11,
            fibril_z: 84842.0,
            anchors: [8.0, 12.0],
        }
    }
}

impl MaterialsConfig {
    pub fn law(&self) -> YoungModulusLaw {
        YoungModulusLaw {
            slope: self.law_slope,
            intercept: self.law_intercept,
        }
    }
}

/// Microscopic (molecular) diffusivities per species; the effective tensors
/// scale these by the unit-coefficient cell solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub d_p1: f64,
    pub d_p2: f64,
    pub d_n1: f64,
    pub d_n2: f64,
    /// Only used by Model II (cross-links do not diffuse in Model I).
    pub d_b: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            d_p1: 1.0,
            d_p2: 1.0,
            d_n1: 1.0,
            d_n2: 1.0,
            d_b: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingConfig {
    /// Ball radius; None means 0.1 * a1.
    pub delta: Option<f64>,
    pub variant: CouplingVariant,
    pub model: Model,
    /// Divide the ball integral by the intersected ball measure.
    pub normalize_ball_average: bool,
    /// Divide effective tensors by the matrix volume fraction.
    pub normalize_effective_by_theta_m: bool,
    /// Test hook: freeze the coupling value at a constant.
    pub frozen_coupling: Option<f64>,
    /// Subcell sampling per axis for ball-boundary elements.
    pub oversample: usize,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            delta: None,
            variant: CouplingVariant::Stress,
            model: Model::I,
            normalize_ball_average: false,
            normalize_effective_by_theta_m: false,
            frozen_coupling: None,
            oversample: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadsConfig {
    /// Turgor pressure on Gamma_I (traction -p_i nu), MPa.
    pub p_i: f64,
    /// Traction magnitude along the outward normal on Gamma_E.
    pub f_e: f64,
    /// Traction magnitude along the outward normal on Gamma_U.
    pub f_u: f64,
}

impl Default for LoadsConfig {
    fn default() -> Self {
        Self {
            p_i: 0.2,
            f_e: 0.1,
            f_u: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReactionTreatment {
    /// Two-stage explicit (Heun), second order.
    Explicit,
    /// Explicit n/p with the Model I b-update implicit in closed form.
    SemiImplicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteppingConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Relative sup-norm tolerance on b for the inner fixed point.
    pub inner_tol: f64,
    pub max_inner: usize,
    /// Linear solver relative tolerance.
    pub solver_tol: f64,
    /// Number of allowed automatic dt halvings before a hard error.
    pub max_halvings: usize,
    pub reaction: ReactionTreatment,
    /// Boundedness cap per species; exceeding it aborts the run.
    pub species_cap: f64,
}

impl Default for SteppingConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_end: 1.0,
            inner_tol: 1e-10,
            max_inner: 50,
            solver_tol: 1e-12,
            max_halvings: 10,
            reaction: ReactionTreatment::Explicit,
            species_cap: 1e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsConfig {
    pub directory: String,
    /// Write a field snapshot every this many steps (0 disables).
    pub snapshot_every: usize,
    pub seed: u64,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            snapshot_every: 0,
            seed: 7,
        }
    }
}

/// Spatially uniform initial values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub p1: f64,
    pub p2: f64,
    pub n1: f64,
    pub n2: f64,
    pub b: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            p1: 1.0,
            p2: 0.5,
            n1: 1.0,
            n2: 1.0,
            b: 2.48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub geometry: GeometryConfig,
    pub materials: MaterialsConfig,
    pub kinetics: KineticsParams,
    pub fluxes: FluxParams,
    pub diffusion: DiffusionConfig,
    pub coupling: CouplingConfig,
    pub loads: LoadsConfig,
    pub stepping: SteppingConfig,
    pub outputs: OutputsConfig,
    pub initial: InitialConfig,
}

impl SimConfig {
    pub fn delta(&self) -> f64 {
        self.coupling.delta.unwrap_or(0.1 * self.geometry.extents[0])
    }

    /// Validates everything and reports the full list of problems.
    pub fn validate(&self) -> Result<(), CellwallError> {
        let mut errs = Vec::new();
        let g = &self.geometry;
        if !(0.0..0.5).contains(&g.radius) {
            errs.push(format!(
                "geometry.radius must be in [0, 0.5), got {} (radius must be < 0.5)",
                g.radius
            ));
        }
        if !(g.h_cell > 0.0 && g.h_cell <= 0.25) {
            errs.push(format!("geometry.h_cell must be in (0, 0.25], got {}", g.h_cell));
        }
        if g.extents.iter().any(|&a| a <= 0.0) {
            errs.push(format!("geometry.extents must be positive, got {:?}", g.extents));
        }
        if g.macro_cells.iter().any(|&n| n == 0) {
            errs.push(format!(
                "geometry.macro_cells must be at least 1, got {:?}",
                g.macro_cells
            ));
        }
        let m = &self.materials;
        if m.nu_m <= -1.0 || m.nu_m >= 0.5 {
            errs.push(format!("materials.nu_m must lie in (-1, 0.5), got {}", m.nu_m));
        }
        for (name, v) in [
            ("materials.fibril_e", m.fibril_e),
            ("materials.fibril_n", m.fibril_n),
            ("materials.fibril_z", m.fibril_z),
        ] {
            if v <= 0.0 {
                errs.push(format!("{name} must be positive, got {v}"));
            }
        }
        if m.anchors[0] <= 0.0 || m.anchors[1] <= 0.0 || m.anchors[0] == m.anchors[1] {
            errs.push(format!(
                "materials.anchors must be positive and distinct, got {:?}",
                m.anchors
            ));
        }
        if m.law_slope < 0.0 || m.law_intercept < 0.0 {
            errs.push("materials law coefficients must be nonnegative".into());
        }
        if let Err(e) = self.kinetics.validate() {
            errs.push(format!("kinetics: {e}"));
        }
        if let Err(e) = self.fluxes.validate() {
            errs.push(format!("fluxes: {e}"));
        }
        for (name, v) in [
            ("diffusion.d_p1", self.diffusion.d_p1),
            ("diffusion.d_p2", self.diffusion.d_p2),
            ("diffusion.d_n1", self.diffusion.d_n1),
            ("diffusion.d_n2", self.diffusion.d_n2),
            ("diffusion.d_b", self.diffusion.d_b),
        ] {
            if v < 0.0 {
                errs.push(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if let Some(d) = self.coupling.delta {
            if d <= 0.0 {
                errs.push(format!("coupling.delta must be positive, got {d}"));
            }
        }
        if self.coupling.oversample == 0 {
            errs.push("coupling.oversample must be at least 1".into());
        }
        let s = &self.stepping;
        if s.dt <= 0.0 {
            errs.push(format!("stepping.dt must be positive, got {}", s.dt));
        }
        if s.t_end <= 0.0 {
            errs.push(format!("stepping.t_end must be positive, got {}", s.t_end));
        }
        if s.inner_tol <= 0.0 {
            errs.push(format!("stepping.inner_tol must be positive, got {}", s.inner_tol));
        }
        if s.max_inner == 0 {
            errs.push("stepping.max_inner must be at least 1".into());
        }
        if s.solver_tol <= 0.0 || s.solver_tol >= 1.0 {
            errs.push(format!(
                "stepping.solver_tol must lie in (0, 1), got {}",
                s.solver_tol
            ));
        }
        if s.species_cap <= 0.0 {
            errs.push("stepping.species_cap must be positive".into());
        }
        let i = &self.initial;
        for (name, v) in [
            ("initial.p1", i.p1),
            ("initial.p2", i.p2),
            ("initial.n1", i.n1),
            ("initial.n2", i.n2),
            ("initial.b", i.b),
        ] {
            if v < 0.0 {
                errs.push(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CellwallError::ConfigList(errs))
        }
    }
}

pub fn parse_config_str(text: &str) -> Result<SimConfig, CellwallError> {
    let cfg: SimConfig =
        toml::from_str(text).map_err(|e| CellwallError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &std::path::Path) -> Result<SimConfig, CellwallError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CellwallError::io(path.display().to_string(), e))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_fills_defaults_and_round_trips() {
        let cfg = parse_config_str("").unwrap();
        assert_eq!(cfg, SimConfig::default());
        let echoed = toml::to_string(&cfg).unwrap();
        let back = parse_config_str(&echoed).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn radius_out_of_range_rejected() {
        let err = parse_config_str("[geometry]\nradius = 0.6\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("radius must be < 0.5"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected_with_name() {
        let err = parse_config_str("[loads]\nturgur_pressure = 0.2\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("turgur_pressure"), "{msg}");
    }

    #[test]
    fn multiple_errors_reported_together() {
        let err = parse_config_str(
            "[geometry]\nradius = 0.7\nh_cell = -0.1\n[stepping]\ndt = 0.0\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("radius"));
        assert!(msg.contains("h_cell"));
        assert!(msg.contains("dt"));
    }

    #[test]
    fn default_delta_tracks_extent() {
        let cfg = parse_config_str("[geometry]\nextents = [2.0, 1.0, 1.0]\n").unwrap();
        assert_eq!(cfg.delta(), 0.2);
        let cfg = parse_config_str("[coupling]\ndelta = 0.33\n").unwrap();
        assert_eq!(cfg.delta(), 0.33);
    }
}
