//! Reaction kinetics and boundary fluxes for the five species: p1
//! (methylesterified pectin), p2 (PME enzyme), n1 (demethylesterified
//! pectin), n2 (calcium), b (calcium-pectin cross-links).
//!
//! Two demethylesterified acid groups bind one calcium ion per cross-link;
//! that factor of two lives here and nowhere else, so the conserved quantity
//! n1 + 2b can be tested against these functions directly.

use serde::{Deserialize, Serialize};

use crate::error::CellwallError;
use crate::tensor::Tensor4;
use nalgebra::Matrix3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KineticsParams {
    /// De-esterification rate, R_eE = k_ee * p1 * p2.
    pub k_ee: f64,
    /// Cross-link formation rate and Michaelis constant:
    /// R_dc = k_dc1 * n2 / (k_dc2 + n2) * n1.
    pub k_dc1: f64,
    pub k_dc2: f64,
    /// Breakage coefficient, R_b = k_b * b.
    pub k_b: f64,
    /// Demethylesterified pectin decay rate.
    pub r_d: f64,
    /// Undershoot tolerance: inputs in [-clamp_tol, 0) are clamped to zero,
    /// anything below is an error.
    pub clamp_tol: f64,
}

impl Default for KineticsParams {
    fn default() -> Self {
        Self {
            k_ee: 1.0,
            k_dc1: 1.0,
            k_dc2: 1.0,
            k_b: 1.0,
            r_d: 0.0,
            clamp_tol: 1e-12,
        }
    }
}

impl KineticsParams {
    pub fn validate(&self) -> Result<(), CellwallError> {
        for (name, v) in [
            ("k_ee", self.k_ee),
            ("k_dc1", self.k_dc1),
            ("k_dc2", self.k_dc2),
            ("k_b", self.k_b),
            ("r_d", self.r_d),
            ("clamp_tol", self.clamp_tol),
        ] {
            if !(v >= 0.0) {
                return Err(CellwallError::InvalidChemistry(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn clamp(&self, species: &'static str, x: f64) -> Result<f64, CellwallError> {
        if x < -self.clamp_tol {
            return Err(CellwallError::NegativeSpecies { species, value: x });
        }
        Ok(x.max(0.0))
    }

    pub fn r_ee(&self, p1: f64, p2: f64) -> f64 {
        self.k_ee * p1 * p2
    }

    pub fn r_dc(&self, n1: f64, n2: f64) -> f64 {
        self.k_dc1 * n2 / (self.k_dc2 + n2) * n1
    }

    pub fn r_b(&self, b: f64) -> f64 {
        self.k_b * b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluxParams {
    // PME enzyme
    pub beta_e_cap: f64, // beta_E
    pub zeta_e_cap: f64, // zeta_E
    pub gamma_e_cap: f64, // gamma_E
    // methylesterified pectin
    pub beta_e: f64,
    pub zeta_e: f64,
    pub gamma_e: f64,
    // demethylesterified pectin outflow
    pub gamma_d: f64,
    // calcium
    pub gamma_c1: f64,
    pub gamma_c2: f64,
    pub zeta_c1: f64,
    pub zeta_c2: f64,
    // abstract outflow rates
    pub gamma_p: f64,
    pub gamma_b: f64,
}

impl Default for FluxParams {
    fn default() -> Self {
        Self {
            beta_e_cap: 0.0,
            zeta_e_cap: 0.0,
            gamma_e_cap: 0.0,
            beta_e: 0.0,
            zeta_e: 0.0,
            gamma_e: 0.0,
            gamma_d: 0.0,
            gamma_c1: 0.0,
            gamma_c2: 0.0,
            zeta_c1: 0.0,
            zeta_c2: 0.0,
            gamma_p: 0.0,
            gamma_b: 0.0,
        }
    }
}

impl FluxParams {
    pub fn validate(&self) -> Result<(), CellwallError> {
        for (name, v) in [
            ("beta_e_cap", self.beta_e_cap),
            ("zeta_e_cap", self.zeta_e_cap),
            ("gamma_e_cap", self.gamma_e_cap),
            ("beta_e", self.beta_e),
            ("zeta_e", self.zeta_e),
            ("gamma_e", self.gamma_e),
            ("gamma_d", self.gamma_d),
            ("gamma_c1", self.gamma_c1),
            ("gamma_c2", self.gamma_c2),
            ("zeta_c1", self.zeta_c1),
            ("zeta_c2", self.zeta_c2),
            ("gamma_p", self.gamma_p),
            ("gamma_b", self.gamma_b),
        ] {
            if !(v >= 0.0) {
                return Err(CellwallError::InvalidChemistry(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-point species values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpeciesState {
    pub p1: f64,
    pub p2: f64,
    pub n1: f64,
    pub n2: f64,
    pub b: f64,
}

impl SpeciesState {
    pub fn as_array(&self) -> [f64; 5] {
        [self.p1, self.p2, self.n1, self.n2, self.b]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            p1: a[0],
            p2: a[1],
            n1: a[2],
            n2: a[3],
            b: a[4],
        }
    }
}

pub const SPECIES_NAMES: [&str; 5] = ["p1", "p2", "n1", "n2", "b"];

/// Pectin reaction terms: dp/dt = -F_p with F_p = (R_eE, 0). The enzyme is
/// not used up.
pub fn reaction_p(
    p1: f64,
    p2: f64,
    params: &KineticsParams,
) -> Result<(f64, f64), CellwallError> {
    let p1 = params.clamp("p1", p1)?;
    let p2 = params.clamp("p2", p2)?;
    Ok((params.r_ee(p1, p2), 0.0))
}

/// Combined n reaction: F_n + R_n with
/// F_n = (R_eE - 2 R_dc - R_d n1, -R_dc) and R_n = (2 R_b N, R_b N).
pub fn reaction_n(
    p: (f64, f64),
    n: (f64, f64),
    b: f64,
    n_coupling: f64,
    params: &KineticsParams,
) -> Result<(f64, f64), CellwallError> {
    let p1 = params.clamp("p1", p.0)?;
    let p2 = params.clamp("p2", p.1)?;
    let n1 = params.clamp("n1", n.0)?;
    let n2 = params.clamp("n2", n.1)?;
    let b = params.clamp("b", b)?;
    if n_coupling < 0.0 {
        return Err(CellwallError::InvalidChemistry(format!(
            "coupling value must be nonnegative, got {n_coupling}"
        )));
    }
    let r_ee = params.r_ee(p1, p2);
    let r_dc = params.r_dc(n1, n2);
    let r_b = params.r_b(b);
    Ok((
        r_ee - 2.0 * r_dc - params.r_d * n1 + 2.0 * r_b * n_coupling,
        -r_dc + r_b * n_coupling,
    ))
}

/// Model I cross-link rate: db/dt = R_dc - R_b(b) * N.
pub fn reaction_b_model_i(
    n: (f64, f64),
    b: f64,
    n_coupling: f64,
    params: &KineticsParams,
) -> Result<f64, CellwallError> {
    let n1 = params.clamp("n1", n.0)?;
    let n2 = params.clamp("n2", n.1)?;
    let b = params.clamp("b", b)?;
    Ok(params.r_dc(n1, n2) - params.r_b(b) * n_coupling)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingVariant {
    Stress,
    Strain,
}

/// Pointwise mechanical signal: positive part of the stress trace (STRESS)
/// or the strain trace (STRAIN).
pub fn signal(
    strain: &Matrix3<f64>,
    stiffness: &Tensor4,
    variant: CouplingVariant,
) -> f64 {
    let tr = match variant {
        CouplingVariant::Stress => stiffness.stress_trace(strain),
        CouplingVariant::Strain => strain.trace(),
    };
    tr.max(0.0)
}

/// Model II pointwise rates: (Q_n1, Q_n2, Q_b) with the modulation
/// P = signal(strain): Q_n = (2 R_b, R_b) * P, Q_b = R_dc - R_b * P.
pub fn reaction_nb_model_ii(
    n: (f64, f64),
    b: f64,
    strain: &Matrix3<f64>,
    stiffness_at_b: &Tensor4,
    params: &KineticsParams,
    variant: CouplingVariant,
) -> Result<(f64, f64, f64), CellwallError> {
    let n1 = params.clamp("n1", n.0)?;
    let n2 = params.clamp("n2", n.1)?;
    let b = params.clamp("b", b)?;
    let p = signal(strain, stiffness_at_b, variant);
    let r_b = params.r_b(b);
    let r_dc = params.r_dc(n1, n2);
    Ok((2.0 * r_b * p, r_b * p, r_dc - r_b * p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundarySide {
    GammaI,
    GammaE,
}

/// Normal flux values (inward positive) for the five species at one boundary
/// point. `total_pe` is the current integral of p1 over the wall, `n_coupling`
/// the mechanical signal gating the calcium channels. The cross-link outflow
/// on the exterior side only applies in Model II (diffusing cross-links).
pub fn boundary_fluxes(
    state: &SpeciesState,
    total_pe: f64,
    side: BoundarySide,
    n_coupling: f64,
    params: &FluxParams,
    model_ii: bool,
) -> Result<[f64; 5], CellwallError> {
    if total_pe < 0.0 {
        return Err(CellwallError::InvalidChemistry(format!(
            "total_pe must be nonnegative, got {total_pe}"
        )));
    }
    Ok(match side {
        BoundarySide::GammaI => [
            params.beta_e / (1.0 + params.zeta_e * total_pe),
            params.beta_e_cap * total_pe - params.zeta_e_cap * state.p2,
            0.0,
            n_coupling * (params.gamma_c1 - params.gamma_c2 * state.n2),
            0.0,
        ],
        BoundarySide::GammaE => [
            -params.gamma_e * state.p1,
            -params.gamma_e_cap * state.p2,
            -params.gamma_d * state.n1,
            params.zeta_c1 - params.zeta_c2 * state.n2,
            if model_ii { -params.gamma_b * state.b } else { 0.0 },
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn reaction_p_vanishes_without_substrate() {
        let k = KineticsParams::default();
        assert_eq!(reaction_p(0.0, 5.0, &k).unwrap(), (0.0, 0.0));
        let k2 = KineticsParams {
            k_ee: 2.0,
            ..KineticsParams::default()
        };
        assert_eq!(reaction_p(3.0, 0.5, &k2).unwrap(), (3.0, 0.0));
    }

    #[test]
    fn reaction_n_structure() {
        let k = KineticsParams::default();
        assert_eq!(
            reaction_n((0.0, 0.0), (0.0, 7.0), 0.0, 0.0, &k).unwrap(),
            (0.0, 0.0)
        );
        // Saturation: n2 large makes R_dc approach k_dc1 * n1.
        let (_, dn2) = reaction_n((0.0, 0.0), (2.0, 1e12), 0.0, 0.0, &k).unwrap();
        assert_relative_eq!(dn2, -2.0, max_relative = 1e-10);
        // Release terms: k_b = 1, b = 2, N = 3 adds (12, 6).
        let (dn1, dn2) = reaction_n((0.0, 0.0), (0.0, 0.0), 2.0, 3.0, &k).unwrap();
        assert_eq!((dn1, dn2), (12.0, 6.0));
    }

    #[test]
    fn reaction_b_model_i_cases() {
        let k = KineticsParams::default();
        // b = 0: pure formation, nonnegative.
        assert!(reaction_b_model_i((1.0, 1.0), 0.0, 5.0, &k).unwrap() >= 0.0);
        // n = 0: linear decay rate -k_b N b.
        let r = reaction_b_model_i((0.0, 0.0), 2.0, 3.0, &k).unwrap();
        assert_eq!(r, -6.0);
    }

    #[test]
    fn conservation_of_binding_sites() {
        // With R_eE = R_d = 0: d/dt (n1 + 2b) = 0 pointwise.
        let k = KineticsParams {
            k_ee: 0.0,
            r_d: 0.0,
            ..KineticsParams::default()
        };
        for (n1, n2, b, nn) in [(1.0, 2.0, 0.5, 3.0), (0.3, 0.1, 2.0, 0.0), (4.0, 5.0, 6.0, 7.0)]
        {
            let (dn1, _) = reaction_n((0.0, 0.0), (n1, n2), b, nn, &k).unwrap();
            let db = reaction_b_model_i((n1, n2), b, nn, &k).unwrap();
            assert!((dn1 + 2.0 * db).abs() < 1e-14);
        }
    }

    #[test]
    fn model_ii_signal_cases() {
        let k = KineticsParams::default();
        let iso = crate::materials::isotropic_tensor(10.0, 0.3).unwrap();
        // Pure compression: positive part cuts off.
        let e = Matrix3::identity() * -0.1;
        let (qn1, qn2, _) =
            reaction_nb_model_ii((1.0, 1.0), 2.0, &e, &iso, &k, CouplingVariant::Stress).unwrap();
        assert_eq!((qn1, qn2), (0.0, 0.0));
        // Isotropic extension: tr(E e) = (3 lambda + 2 mu) 3 eps.
        let (lambda, mu) = crate::materials::lame_parameters(10.0, 0.3);
        let eps = 0.02;
        let e = Matrix3::identity() * eps;
        let p = signal(&e, &iso, CouplingVariant::Stress);
        assert_relative_eq!(p, (3.0 * lambda + 2.0 * mu) * 3.0 * eps, max_relative = 1e-12);
        // Strain variant ignores the stiffness.
        let e = Matrix3::from_diagonal(&nalgebra::Vector3::new(0.1, -0.3, 0.05));
        let p = signal(&e, &iso, CouplingVariant::Strain);
        assert_relative_eq!(p, 0.0, epsilon = 1e-15);
        let e = Matrix3::from_diagonal(&nalgebra::Vector3::new(0.1, 0.3, 0.05));
        let p = signal(&e, &iso, CouplingVariant::Strain);
        assert_relative_eq!(p, 0.45, epsilon = 1e-15);
    }

    #[test]
    fn boundary_flux_cases() {
        let f = FluxParams {
            beta_e: 2.0,
            zeta_e: 5.0,
            gamma_c1: 3.0,
            gamma_c2: 1.5,
            ..FluxParams::default()
        };
        let s = SpeciesState {
            n2: 2.0,
            ..SpeciesState::default()
        };
        // Zero pectin stock: inflow at full rate.
        let j = boundary_fluxes(&s, 0.0, BoundarySide::GammaI, 1.0, &f, false).unwrap();
        assert_eq!(j[0], 2.0);
        // Gating equilibrium n2 = gamma_c1 / gamma_c2.
        assert_relative_eq!(j[3], 0.0, epsilon = 1e-15);
        // Zero signal closes the channel regardless of n2.
        let s2 = SpeciesState {
            n2: 100.0,
            ..SpeciesState::default()
        };
        let j = boundary_fluxes(&s2, 0.0, BoundarySide::GammaI, 0.0, &f, false).unwrap();
        assert_eq!(j[3], 0.0);
        // Cross-link outflow only in Model II.
        let f2 = FluxParams {
            gamma_b: 1.0,
            ..FluxParams::default()
        };
        let s3 = SpeciesState {
            b: 4.0,
            ..SpeciesState::default()
        };
        let j1 = boundary_fluxes(&s3, 0.0, BoundarySide::GammaE, 0.0, &f2, false).unwrap();
        let j2 = boundary_fluxes(&s3, 0.0, BoundarySide::GammaE, 0.0, &f2, true).unwrap();
        assert_eq!(j1[4], 0.0);
        assert_eq!(j2[4], -4.0);
    }

    #[test]
    fn undershoot_policy() {
        let k = KineticsParams::default();
        // Tiny undershoot clamps to zero.
        assert_eq!(reaction_p(-1e-13, 1.0, &k).unwrap(), (0.0, 0.0));
        // Larger violations are hard errors.
        assert!(matches!(
            reaction_p(-1e-9, 1.0, &k),
            Err(CellwallError::NegativeSpecies { .. })
        ));
    }

    proptest! {
        #[test]
        fn sign_structure_randomized(
            p1 in 0.0..10.0f64, p2 in 0.0..10.0f64,
            n1 in 0.0..10.0f64, n2 in 0.0..10.0f64,
            b in 0.0..10.0f64, nn in 0.0..10.0f64,
        ) {
            let k = KineticsParams::default();
            let (fp1, fp2) = reaction_p(p1, p2, &k).unwrap();
            prop_assert!(fp1 >= 0.0);
            prop_assert_eq!(fp2, 0.0);
            // F_n,1 at n1 = 0 is nonnegative (no sinks without substrate).
            let (dn1, _) = reaction_n((p1, p2), (0.0, n2), b, nn, &k).unwrap();
            prop_assert!(dn1 >= 0.0);
            // F_n,2 at n2 = 0 is nonnegative.
            let (_, dn2) = reaction_n((p1, p2), (n1, 0.0), b, nn, &k).unwrap();
            prop_assert!(dn2 >= 0.0);
            // Formation-only at b = 0.
            prop_assert!(reaction_b_model_i((n1, n2), 0.0, nn, &k).unwrap() >= 0.0);
        }
    }
}
