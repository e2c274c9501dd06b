//! Unit-cell corrector problems and effective tensors.
//!
//! Scalar correctors live on the matrix region only (the fibril is
//! impermeable); elastic correctors live on the whole cell with the 2.5D
//! strain operator: fields depend on (y1, y2), carry three displacement
//! components, and all y3 derivatives vanish.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::error::CellwallError;
use crate::fem::sparse::CsrMatrix;
use crate::fem::{solve_spd, DofMap, Precond};
use crate::mesh::{Region, UnitCellMesh};
use crate::tensor::{Tensor4, Voigt6};

#[derive(Debug, Clone)]
pub struct StiffnessField {
    pub matrix: Tensor4,
    pub fibril: Tensor4,
}

impl StiffnessField {
    pub fn at(&self, region: Region) -> &Tensor4 {
        match region {
            Region::Matrix => &self.matrix,
            Region::Fibril => &self.fibril,
        }
    }
}

fn iteration_cap(n: usize) -> usize {
    (5.0 * (n as f64).sqrt()).ceil() as usize + 100
}

/// Scalar correctors v^1, v^2 on the matrix region, stored as full
/// vertex-length vectors (zero away from the matrix region). The third
/// corrector vanishes identically for in-plane diffusion tensors and is left
/// implicit.
#[derive(Debug, Clone)]
pub struct ScalarCorrectorSet {
    pub v: [Vec<f64>; 2],
    pub mesh_id: u64,
    pub iterations: [usize; 2],
}

/// In-plane 2x2 block of the diffusion tensor must be symmetric positive
/// definite.
fn check_diffusion(d: &Matrix3<f64>) -> Result<(), CellwallError> {
    if (d - d.transpose()).norm() > 1e-12 * d.norm() {
        return Err(CellwallError::CoefficientNotPd);
    }
    let (a, b, c) = (d[(0, 0)], d[(0, 1)], d[(1, 1)]);
    if a <= 0.0 || a * c - b * b <= 0.0 {
        return Err(CellwallError::CoefficientNotPd);
    }
    Ok(())
}

struct ScalarSpace {
    map: DofMap,
    /// Lumped matrix-region measure per reduced dof.
    weights: Vec<f64>,
}

fn scalar_space(mesh: &UnitCellMesh) -> ScalarSpace {
    let nv = mesh.vertices.len();
    let mut active = vec![false; nv];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if mesh.region[t] == Region::Matrix {
            for &v in tri {
                active[v] = true;
            }
        }
    }
    let master = mesh.periodic_master_map();
    // A slave vertex is active iff its master is (they are all on the outer
    // boundary, which belongs to the matrix region).
    let map = DofMap::new(&master, &active);
    let mut weights = vec![0.0; map.n_reduced];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if mesh.region[t] == Region::Matrix {
            let w = mesh.triangle_area(t) / 3.0;
            for &v in tri {
                if let Some(r) = map.reduced_of[v] {
                    weights[r] += w;
                }
            }
        }
    }
    ScalarSpace { map, weights }
}

pub fn solve_scalar_correctors(
    mesh: &UnitCellMesh,
    d: &Matrix3<f64>,
    tol: f64,
) -> Result<ScalarCorrectorSet, CellwallError> {
    check_diffusion(d)?;
    let space = scalar_space(mesh);
    let n = space.map.n_reduced;

    let mut triplets = Vec::new();
    let mut rhs = [vec![0.0; n], vec![0.0; n]];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if mesh.region[t] != Region::Matrix {
            continue;
        }
        let (g, area) = mesh.p1_gradients(t);
        let red: Vec<usize> = tri.iter().map(|&v| space.map.reduced_of[v].unwrap()).collect();
        for a in 0..3 {
            let dga = [
                d[(0, 0)] * g[a][0] + d[(0, 1)] * g[a][1],
                d[(1, 0)] * g[a][0] + d[(1, 1)] * g[a][1],
            ];
            for b in 0..3 {
                triplets.push((red[a], red[b], area * (dga[0] * g[b][0] + dga[1] * g[b][1])));
            }
            for j in 0..2 {
                // forcing -div(D b_j): columns of the in-plane block
                rhs[j][red[a]] -= area * (d[(0, j)] * g[a][0] + d[(1, j)] * g[a][1]);
            }
        }
    }
    let a = CsrMatrix::from_triplets(n, n, triplets);
    let kernel = vec![vec![1.0; n]];
    let cap = iteration_cap(n);
    let mut v_full: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut iterations = [0usize; 2];
    for j in 0..2 {
        let (mut x, its) = solve_spd(&a, &rhs[j], &kernel, Precond::Sgs, tol, cap)?;
        crate::fem::enforce_functionals(&mut x, &kernel, &[space.weights.clone()], &[0.0])?;
        v_full[j] = space.map.expand(&x);
        iterations[j] = its;
    }
    Ok(ScalarCorrectorSet {
        v: v_full,
        mesh_id: mesh.id(),
        iterations,
    })
}

/// Effective diffusion tensor, Eq. (16) form: the matrix-region integral of
/// D + D grad(v^j), not normalized by the matrix volume fraction.
pub fn effective_diffusion(
    mesh: &UnitCellMesh,
    d: &Matrix3<f64>,
    correctors: &ScalarCorrectorSet,
) -> Result<Matrix3<f64>, CellwallError> {
    if correctors.mesh_id != mesh.id() {
        return Err(CellwallError::StaleLocalization {
            expected: mesh.id(),
            got: correctors.mesh_id,
        });
    }
    let mut deff = Matrix3::<f64>::zeros();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if mesh.region[t] != Region::Matrix {
            continue;
        }
        let (g, area) = mesh.p1_gradients(t);
        // In-plane gradient of each corrector on this element; the third
        // corrector is identically zero.
        let mut gv = [[0.0; 2]; 3];
        for j in 0..2 {
            for a in 0..3 {
                let val = correctors.v[j][tri[a]];
                gv[j][0] += g[a][0] * val;
                gv[j][1] += g[a][1] * val;
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                deff[(i, j)] +=
                    area * (d[(i, j)] + d[(i, 0)] * gv[j][0] + d[(i, 1)] * gv[j][1]);
            }
        }
    }
    Ok(deff)
}

/// The 6x9 strain-displacement matrix of the 2.5D operator on a P1 triangle:
/// three displacement components per vertex, engineering Voigt rows, e33 = 0.
fn b_matrix_tri(g: &[[f64; 2]; 3]) -> nalgebra::SMatrix<f64, 6, 9> {
    let mut b = nalgebra::SMatrix::<f64, 6, 9>::zeros();
    for a in 0..3 {
        let c = 3 * a;
        b[(0, c)] = g[a][0];
        b[(1, c + 1)] = g[a][1];
        // row 2 (e33) stays zero
        b[(3, c + 2)] = g[a][1]; // gamma_23 = d v3 / d y2
        b[(4, c + 2)] = g[a][0]; // gamma_13 = d v3 / d y1
        b[(5, c)] = g[a][1];
        b[(5, c + 1)] = g[a][0];
    }
    b
}

/// Elastic correctors w^(I), I = 1..6 in Voigt order, each stored as a full
/// displacement vector (3 components per vertex).
#[derive(Debug, Clone)]
pub struct ElasticCorrectorSet {
    pub w: [Vec<f64>; 6],
    pub mesh_id: u64,
    pub iterations: [usize; 6],
}

pub fn solve_elastic_correctors(
    mesh: &UnitCellMesh,
    field: &StiffnessField,
    tol: f64,
) -> Result<ElasticCorrectorSet, CellwallError> {
    for (which, t) in [(0usize, &field.matrix), (1, &field.fibril)] {
        let min_eig = t.min_voigt_eigenvalue();
        if min_eig <= 0.0 {
            return Err(CellwallError::LossOfEllipticity {
                element: which,
                min_eig,
            });
        }
    }
    let nv = mesh.vertices.len();
    let vmaster = mesh.periodic_master_map();
    let mut master = vec![0usize; 3 * nv];
    for v in 0..nv {
        for c in 0..3 {
            master[3 * v + c] = 3 * vmaster[v] + c;
        }
    }
    let map = DofMap::new(&master, &vec![true; 3 * nv]);
    let n = map.n_reduced;

    let mut triplets = Vec::new();
    let mut rhs: Vec<Vec<f64>> = vec![vec![0.0; n]; 6];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let (g, area) = mesh.p1_gradients(t);
        let b = b_matrix_tri(&g);
        let cv = field.at(mesh.region[t]).voigt();
        let ke = b.transpose() * cv * b * area;
        let fe = b.transpose() * cv * area; // columns: -rhs for each unit strain
        let mut red = [0usize; 9];
        for a in 0..3 {
            for c in 0..3 {
                red[3 * a + c] = map.reduced_of[3 * tri[a] + c].unwrap();
            }
        }
        for p in 0..9 {
            for q in 0..9 {
                triplets.push((red[p], red[q], ke[(p, q)]));
            }
            for i in 0..6 {
                rhs[i][red[p]] -= fe[(p, i)];
            }
        }
    }
    let a = CsrMatrix::from_triplets(n, n, triplets);

    // Kernel: three constant displacement fields (reduced representation).
    let mut kernel = vec![vec![0.0; n]; 3];
    for v in 0..nv {
        for c in 0..3 {
            if let Some(r) = map.reduced_of[3 * v + c] {
                kernel[c][r] = 1.0;
            }
        }
    }
    // Zero-mean functionals per component with lumped cell measure.
    let mut weights = vec![vec![0.0; n]; 3];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let w = mesh.triangle_area(t) / 3.0;
        for &v in tri {
            for c in 0..3 {
                if let Some(r) = map.reduced_of[3 * v + c] {
                    weights[c][r] += w;
                }
            }
        }
    }

    let cap = iteration_cap(n);
    let results: Vec<Result<(Vec<f64>, usize), CellwallError>> = rhs
        .par_iter()
        .map(|b_i| {
            let (mut x, its) = solve_spd(&a, b_i, &kernel, Precond::Sgs, tol, cap)?;
            crate::fem::enforce_functionals(
                &mut x,
                &kernel,
                &[weights[0].clone(), weights[1].clone(), weights[2].clone()],
                &[0.0, 0.0, 0.0],
            )?;
            Ok((x, its))
        })
        .collect();

    let mut w: [Vec<f64>; 6] = Default::default();
    let mut iterations = [0usize; 6];
    for (i, r) in results.into_iter().enumerate() {
        let (x, its) = r?;
        w[i] = map.expand(&x);
        iterations[i] = its;
    }
    Ok(ElasticCorrectorSet {
        w,
        mesh_id: mesh.id(),
        iterations,
    })
}

/// Corrector strain columns on one element: S[:,I] = e_y(w^(I)) in
/// engineering Voigt components.
fn corrector_strains(
    mesh: &UnitCellMesh,
    correctors: &ElasticCorrectorSet,
    t: usize,
) -> (Voigt6, f64) {
    let tri = mesh.triangles[t];
    let (g, area) = mesh.p1_gradients(t);
    let b = b_matrix_tri(&g);
    let mut s = Voigt6::zeros();
    for i in 0..6 {
        let mut ue = nalgebra::SMatrix::<f64, 9, 1>::zeros();
        for a in 0..3 {
            for c in 0..3 {
                ue[3 * a + c] = correctors.w[i][3 * tri[a] + c];
            }
        }
        let col = b * ue;
        for r in 0..6 {
            s[(r, i)] = col[r];
        }
    }
    (s, area)
}

/// Effective elasticity tensor through the symmetric variational identity
/// sum over elements of |T| (I+S)^T C (I+S); major symmetry is exact at the
/// discrete level.
pub fn effective_elasticity(
    mesh: &UnitCellMesh,
    field: &StiffnessField,
    correctors: &ElasticCorrectorSet,
) -> Result<Tensor4, CellwallError> {
    if correctors.mesh_id != mesh.id() {
        return Err(CellwallError::StaleLocalization {
            expected: mesh.id(),
            got: correctors.mesh_id,
        });
    }
    let mut acc = Voigt6::zeros();
    for t in 0..mesh.triangles.len() {
        let (s, area) = corrector_strains(mesh, correctors, t);
        let p = Voigt6::identity() + s;
        let cv = field.at(mesh.region[t]).voigt();
        acc += p.transpose() * cv * p * area;
    }
    acc = (acc + acc.transpose()) * 0.5;
    let out = Tensor4::from_voigt(acc)?;
    let min_eig = out.min_voigt_eigenvalue();
    if min_eig <= 0.0 {
        return Err(CellwallError::LossOfEllipticity {
            element: usize::MAX,
            min_eig,
        });
    }
    Ok(out)
}

/// Strain localization: per element the Voigt map I + S taking a macroscopic
/// strain to the cell-level strain at that element.
#[derive(Debug, Clone)]
pub struct LocalizationField {
    pub id_plus_s: Vec<Voigt6>,
    pub areas: Vec<f64>,
    pub region: Vec<Region>,
    pub mesh_id: u64,
    pub theta_m: f64,
}

pub fn localization_field(
    mesh: &UnitCellMesh,
    correctors: &ElasticCorrectorSet,
) -> Result<LocalizationField, CellwallError> {
    if correctors.mesh_id != mesh.id() {
        return Err(CellwallError::StaleLocalization {
            expected: mesh.id(),
            got: correctors.mesh_id,
        });
    }
    let nt = mesh.triangles.len();
    let mut id_plus_s = Vec::with_capacity(nt);
    let mut areas = Vec::with_capacity(nt);
    for t in 0..nt {
        let (s, area) = corrector_strains(mesh, correctors, t);
        id_plus_s.push(Voigt6::identity() + s);
        areas.push(area);
    }
    let (theta_m, _) = crate::mesh::volume_fractions(mesh);
    Ok(LocalizationField {
        id_plus_s,
        areas,
        region: mesh.region.clone(),
        mesh_id: mesh.id(),
        theta_m,
    })
}

impl LocalizationField {
    /// The cell average of the localization map is the identity (partition
    /// of unity of the correctors); returns the deviation norm.
    pub fn average_deviation_from_identity(&self) -> f64 {
        let mut avg = Voigt6::zeros();
        let total: f64 = self.areas.iter().sum();
        for (m, &a) in self.id_plus_s.iter().zip(&self.areas) {
            avg += m * a;
        }
        (avg / total - Voigt6::identity()).norm()
    }

    /// Direct quadrature of C (I+S) over the cell; agrees with the effective
    /// tensor up to the corrector solve residual.
    pub fn stiffness_integral(&self, field: &StiffnessField) -> Voigt6 {
        let mut acc = Voigt6::zeros();
        for t in 0..self.id_plus_s.len() {
            let cv = field.at(self.region[t]).voigt();
            acc += cv * self.id_plus_s[t] * self.areas[t];
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::isotropic_tensor;
    use crate::mesh::build_unit_cell_mesh;
    use approx::assert_relative_eq;

    #[test]
    fn homogeneous_cell_keeps_diffusion_tensor() {
        // No inclusion: the corrector vanishes and the effective tensor is D.
        let mesh = build_unit_cell_mesh(0.0, 0.2).unwrap();
        let d = Matrix3::identity() * 1.7;
        let c = solve_scalar_correctors(&mesh, &d, 1e-12).unwrap();
        for j in 0..2 {
            for &v in &c.v[j] {
                assert!(v.abs() < 1e-10);
            }
        }
        let deff = effective_diffusion(&mesh, &d, &c).unwrap();
        assert!((deff - d).norm() < 1e-10);
    }

    #[test]
    fn scalar_correctors_have_zero_mean() {
        let mesh = build_unit_cell_mesh(0.25, 0.08).unwrap();
        let d = Matrix3::identity();
        let c = solve_scalar_correctors(&mesh, &d, 1e-12).unwrap();
        for j in 0..2 {
            let mut mean = 0.0;
            for (t, tri) in mesh.triangles.iter().enumerate() {
                if mesh.region[t] == Region::Matrix {
                    let w = mesh.triangle_area(t) / 3.0;
                    for &v in tri {
                        mean += w * c.v[j][v];
                    }
                }
            }
            assert!(mean.abs() < 1e-12, "mean {mean}");
        }
    }

    #[test]
    fn effective_diffusion_structure() {
        let mesh = build_unit_cell_mesh(0.25, 0.08).unwrap();
        let d = Matrix3::identity();
        let (theta_m, _) = crate::mesh::volume_fractions(&mesh);
        let c = solve_scalar_correctors(&mesh, &d, 1e-12).unwrap();
        let deff = effective_diffusion(&mesh, &d, &c).unwrap();
        // Out-of-plane component is exactly the matrix fraction.
        assert_relative_eq!(deff[(2, 2)], theta_m, epsilon = 1e-12);
        // In-plane isotropy from mesh symmetry; strict upper bound by theta_M.
        assert_relative_eq!(deff[(0, 0)], deff[(1, 1)], max_relative = 1e-8);
        assert!((deff - deff.transpose()).norm() < 1e-8 * deff.norm());
        assert!(deff[(0, 0)] < theta_m);
        assert!(deff[(0, 0)] > 0.0);
        assert!(deff[(0, 1)].abs() < 1e-8);
    }

    #[test]
    fn homogeneous_cell_keeps_elasticity_tensor() {
        let mesh = build_unit_cell_mesh(0.25, 0.1).unwrap();
        let c = isotropic_tensor(10.0, 0.3).unwrap();
        let field = StiffnessField {
            matrix: c,
            fibril: c,
        };
        let w = solve_elastic_correctors(&mesh, &field, 1e-13).unwrap();
        let hom = effective_elasticity(&mesh, &field, &w).unwrap();
        assert!(hom.rel_diff(&c) < 1e-10, "rel diff {}", hom.rel_diff(&c));
    }

    #[test]
    fn stale_corrector_set_rejected() {
        let mesh_a = build_unit_cell_mesh(0.25, 0.1).unwrap();
        let mesh_b = build_unit_cell_mesh(0.25, 0.09).unwrap();
        let d = Matrix3::identity();
        let c = solve_scalar_correctors(&mesh_a, &d, 1e-10).unwrap();
        assert!(matches!(
            effective_diffusion(&mesh_b, &d, &c),
            Err(CellwallError::StaleLocalization { .. })
        ));
    }

    #[test]
    fn localization_average_is_identity() {
        let mesh = build_unit_cell_mesh(0.25, 0.1).unwrap();
        let field = StiffnessField {
            matrix: isotropic_tensor(10.0, 0.3).unwrap(),
            fibril: isotropic_tensor(100.0, 0.2).unwrap(),
        };
        let w = solve_elastic_correctors(&mesh, &field, 1e-12).unwrap();
        let loc = localization_field(&mesh, &w).unwrap();
        assert!(
            loc.average_deviation_from_identity() < 1e-10,
            "deviation {}",
            loc.average_deviation_from_identity()
        );
        // Consistency with the effective tensor.
        let hom = effective_elasticity(&mesh, &field, &w).unwrap();
        let direct = loc.stiffness_integral(&field);
        let rel = (direct - hom.voigt()).norm() / hom.voigt().norm();
        assert!(rel < 1e-10, "localization consistency {rel}");
    }

    #[test]
    fn effective_tensor_tetragonal_on_coarse_mesh() {
        let mesh = build_unit_cell_mesh(0.25, 0.1).unwrap();
        let field = StiffnessField {
            matrix: isotropic_tensor(10.0, 0.3).unwrap(),
            fibril: isotropic_tensor(1000.0, 0.2).unwrap(),
        };
        let w = solve_elastic_correctors(&mesh, &field, 1e-12).unwrap();
        let hom = effective_elasticity(&mesh, &field, &w).unwrap();
        let c = hom.voigt();
        assert_relative_eq!(c[(0, 0)], c[(1, 1)], max_relative = 1e-8);
        assert_relative_eq!(c[(3, 3)], c[(4, 4)], max_relative = 1e-8);
        assert_relative_eq!(c[(0, 2)], c[(1, 2)], max_relative = 1e-8);
        // Normal-shear couplings vanish by symmetry.
        for i in 0..3 {
            for j in 3..6 {
                assert!(c[(i, j)].abs() <= 1e-6 * c[(0, 0)], "coupling ({i},{j})");
            }
        }
    }
}
