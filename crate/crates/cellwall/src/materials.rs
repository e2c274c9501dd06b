//! Constituent stiffness tensors and the affine dependence of the effective
//! tensor on the matrix Young's modulus.

use nalgebra::{Matrix3, SymmetricEigen};

use crate::cell_homog::{effective_elasticity, solve_elastic_correctors, StiffnessField};
use crate::error::CellwallError;
use crate::mesh::UnitCellMesh;
use crate::tensor::{Tensor4, Voigt6};

/// Lame parameters from engineering constants.
pub fn lame_parameters(young: f64, poisson: f64) -> (f64, f64) {
    let mu = young / (2.0 * (1.0 + poisson));
    let lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
    (lambda, mu)
}

/// Isotropic stiffness tensor, sigma = 2 mu e + lambda tr(e) I. Units MPa.
pub fn isotropic_tensor(young: f64, poisson: f64) -> Result<Tensor4, CellwallError> {
    if young <= 0.0 {
        return Err(CellwallError::InvalidMaterial(format!(
            "Young's modulus must be positive, got {young}"
        )));
    }
    if poisson <= -1.0 || poisson >= 0.5 {
        return Err(CellwallError::InvalidMaterial(format!(
            "Poisson ratio must lie in (-1, 0.5), got {poisson}"
        )));
    }
    let (lambda, mu) = lame_parameters(young, poisson);
    let mut c = Voigt6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[(i, j)] = lambda;
        }
        c[(i, i)] = lambda + 2.0 * mu;
        c[(i + 3, i + 3)] = mu;
    }
    Tensor4::from_voigt(c)
}

/// Transversely isotropic stiffness with symmetry axis y3, built from the
/// five engineering constants: in-plane modulus `e_f`, in-plane Poisson ratio
/// `nu_f1`, modulus ratio `n_f` (axial modulus = e_f / n_f), axial Poisson
/// ratio `nu_f2`, and axial shear modulus `z_f`. The 6x6 compliance is
/// assembled and inverted.
pub fn transversely_isotropic_tensor(
    e_f: f64,
    nu_f1: f64,
    n_f: f64,
    nu_f2: f64,
    z_f: f64,
) -> Result<Tensor4, CellwallError> {
    if e_f <= 0.0 || n_f <= 0.0 || z_f <= 0.0 {
        return Err(CellwallError::InvalidMaterial(
            "moduli E_F, n_F, Z_F must be positive".into(),
        ));
    }
    let e_p = e_f; // in-plane
    let e_a = e_f / n_f; // axial (fibril direction)
    let mut s = Voigt6::zeros();
    s[(0, 0)] = 1.0 / e_p;
    s[(1, 1)] = 1.0 / e_p;
    s[(2, 2)] = 1.0 / e_a;
    s[(0, 1)] = -nu_f1 / e_p;
    s[(1, 0)] = -nu_f1 / e_p;
    s[(0, 2)] = -nu_f2 / e_a;
    s[(2, 0)] = -nu_f2 / e_a;
    s[(1, 2)] = -nu_f2 / e_a;
    s[(2, 1)] = -nu_f2 / e_a;
    s[(3, 3)] = 1.0 / z_f;
    s[(4, 4)] = 1.0 / z_f;
    s[(5, 5)] = 2.0 * (1.0 + nu_f1) / e_p;
    let eig = SymmetricEigen::new(s);
    let min_eig = eig.eigenvalues.min();
    if min_eig <= 0.0 {
        return Err(CellwallError::ComplianceNotPd { min_eig });
    }
    let c = s
        .try_inverse()
        .ok_or(CellwallError::ComplianceNotPd { min_eig })?;
    Tensor4::from_voigt(c)
}

/// Affine law for the matrix Young's modulus as a function of the
/// cross-link density b (in uM). E(b) = slope * b + intercept, MPa.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct YoungModulusLaw {
    pub slope: f64,
    pub intercept: f64,
}

impl Default for YoungModulusLaw {
    fn default() -> Self {
        // Experimental fit for calcium-pectin stiffening.
        Self {
            slope: 0.775,
            intercept: 8.08,
        }
    }
}

impl YoungModulusLaw {
    pub fn evaluate(&self, b: f64) -> Result<f64, CellwallError> {
        if b < 0.0 {
            return Err(CellwallError::InvalidMaterial(format!(
                "cross-link density must be nonnegative, got {b}"
            )));
        }
        Ok(self.slope * b + self.intercept)
    }
}

/// The effective tensor as an affine function of the matrix Young's modulus:
/// evaluate_at_modulus(E) = E * slope_tensor + offset_tensor. Built from two
/// anchor cell solves; exact for isotropic matrix laws.
#[derive(Debug, Clone)]
pub struct AffineTensorFamily {
    pub slope_tensor: Tensor4,
    pub offset_tensor: Tensor4,
    pub law: YoungModulusLaw,
    pub mesh_id: u64,
    pub anchors: (f64, f64),
}

impl AffineTensorFamily {
    pub fn evaluate_at_modulus(&self, young: f64) -> Tensor4 {
        self.slope_tensor.scale(young).add(&self.offset_tensor)
    }

    pub fn evaluate(&self, b: f64) -> Result<Tensor4, CellwallError> {
        Ok(self.evaluate_at_modulus(self.law.evaluate(b)?))
    }
}

/// Solves the six cell problems at two anchor moduli and assembles the
/// affine family.
pub fn build_affine_family(
    mesh: &UnitCellMesh,
    fibril: &Tensor4,
    nu_m: f64,
    anchors: (f64, f64),
    law: YoungModulusLaw,
    solver_tol: f64,
) -> Result<AffineTensorFamily, CellwallError> {
    let (e_a, e_b) = anchors;
    if e_a <= 0.0 || e_b <= 0.0 {
        return Err(CellwallError::InvalidMaterial(
            "anchor moduli must be positive".into(),
        ));
    }
    if (e_a - e_b).abs() < 1e-12 * e_a.abs().max(e_b.abs()) {
        return Err(CellwallError::InvalidMaterial(
            "anchor moduli must be distinct".into(),
        ));
    }
    let hom_a = effective_at_modulus(mesh, fibril, nu_m, e_a, solver_tol)?;
    let hom_b = effective_at_modulus(mesh, fibril, nu_m, e_b, solver_tol)?;
    let slope_tensor = hom_b.sub(&hom_a).scale(1.0 / (e_b - e_a));
    let offset_tensor = hom_a.sub(&slope_tensor.scale(e_a));
    Ok(AffineTensorFamily {
        slope_tensor,
        offset_tensor,
        law,
        mesh_id: mesh.id(),
        anchors,
    })
}

/// One direct cell solve: matrix isotropic at the given modulus, fixed fibril.
pub fn effective_at_modulus(
    mesh: &UnitCellMesh,
    fibril: &Tensor4,
    nu_m: f64,
    young_m: f64,
    solver_tol: f64,
) -> Result<Tensor4, CellwallError> {
    let matrix = isotropic_tensor(young_m, nu_m)?;
    let field = StiffnessField {
        matrix,
        fibril: *fibril,
    };
    let correctors = solve_elastic_correctors(mesh, &field, solver_tol)?;
    effective_elasticity(mesh, &field, &correctors)
}

/// Rotation matrix about the y3 axis.
pub fn rotation_about_axis3(angle: f64) -> Matrix3<f64> {
    Matrix3::new(
        angle.cos(),
        -angle.sin(),
        0.0,
        angle.sin(),
        angle.cos(),
        0.0,
        0.0,
        0.0,
        1.0,
    )
}
