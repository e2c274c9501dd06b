//! Mechano-chemical coupling operators: the nonlocal ball average N_delta
//! and the cell-averaged Model II reaction rates.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::cell_homog::LocalizationField;
use crate::chemistry::{CouplingVariant, KineticsParams};
use crate::error::CellwallError;
use crate::fem::hex;
use crate::mesh::{MacroMesh, Region};
use crate::tensor::Tensor4;

/// Precomputed quadrature for the ball integrals: per evaluation point a
/// list of (element, reference coordinates, weight) samples covering
/// B_delta(x) intersected with the box.
#[derive(Debug, Clone)]
pub struct BallQuadrature {
    pub delta: f64,
    pub samples: Vec<Vec<(usize, [f64; 3], f64)>>,
}

impl BallQuadrature {
    /// `oversample` subdivisions per axis for elements cut by the ball
    /// boundary (midpoint rule on subcells).
    pub fn build(
        mesh: &MacroMesh,
        centers: &[[f64; 3]],
        delta: f64,
        oversample: usize,
    ) -> Result<Self, CellwallError> {
        let diam = (mesh.extents[0].powi(2) + mesh.extents[1].powi(2) + mesh.extents[2].powi(2))
            .sqrt();
        if delta <= 0.0 || delta > diam {
            return Err(CellwallError::InvalidCoupling(format!(
                "ball radius delta = {delta} must lie in (0, domain diameter = {diam:.6}]"
            )));
        }
        let s = oversample.max(1);
        let [n1, n2, _n3] = mesh.cells;
        let sp = mesh.spacing();
        let vol = mesh.element_volume();
        let gauss = hex::gauss_points();
        let samples = centers
            .par_iter()
            .map(|&c| {
                let mut list = Vec::new();
                for (e, _) in mesh.hexes.iter().enumerate() {
                    let i = e % n1;
                    let j = (e / n1) % n2;
                    let k = e / (n1 * n2);
                    let lo = [i as f64 * sp[0], j as f64 * sp[1], k as f64 * sp[2]];
                    let hi = [lo[0] + sp[0], lo[1] + sp[1], lo[2] + sp[2]];
                    // Nearest and farthest squared distances from c to the box.
                    let mut near = 0.0;
                    let mut far = 0.0;
                    for d in 0..3 {
                        let n = (lo[d] - c[d]).max(0.0).max(c[d] - hi[d]);
                        near += n * n;
                        let f = (c[d] - lo[d]).abs().max((hi[d] - c[d]).abs());
                        far += f * f;
                    }
                    let d2 = delta * delta;
                    if near >= d2 {
                        continue;
                    }
                    if far <= d2 {
                        // Fully inside: element Gauss points.
                        for g in gauss {
                            list.push((e, g, vol / 8.0));
                        }
                    } else {
                        // Straddling: midpoint rule on s^3 subcells.
                        let sub = vol / (s * s * s) as f64;
                        for a in 0..s {
                            for b in 0..s {
                                for cc in 0..s {
                                    let xi = [
                                        (2.0 * (a as f64 + 0.5) / s as f64) - 1.0,
                                        (2.0 * (b as f64 + 0.5) / s as f64) - 1.0,
                                        (2.0 * (cc as f64 + 0.5) / s as f64) - 1.0,
                                    ];
                                    let x = [
                                        lo[0] + 0.5 * (xi[0] + 1.0) * sp[0],
                                        lo[1] + 0.5 * (xi[1] + 1.0) * sp[1],
                                        lo[2] + 0.5 * (xi[2] + 1.0) * sp[2],
                                    ];
                                    let r2 = (x[0] - c[0]).powi(2)
                                        + (x[1] - c[1]).powi(2)
                                        + (x[2] - c[2]).powi(2);
                                    if r2 < d2 {
                                        list.push((e, xi, sub));
                                    }
                                }
                            }
                        }
                    }
                }
                list
            })
            .collect();
        Ok(Self { delta, samples })
    }

    pub fn weight_sum(&self, point: usize) -> f64 {
        self.samples[point].iter().map(|s| s.2).sum()
    }
}

fn element_displacements(mesh: &MacroMesh, u: &[f64], e: usize) -> [f64; 24] {
    let mut ue = [0.0; 24];
    for (a, &node) in mesh.hexes[e].iter().enumerate() {
        for c in 0..3 {
            ue[3 * a + c] = u[3 * node + c];
        }
    }
    ue
}

/// The nonlocal coupling values: per evaluation point the positive part of
/// the ball integral of tr(E_hom(b) e(u)) (STRESS) or tr e(u) (STRAIN).
/// Following the macroscopic equations the integral is NOT divided by the
/// ball measure unless `normalize` is set.
pub fn n_delta_eff(
    mesh: &MacroMesh,
    quad: &BallQuadrature,
    u: &[f64],
    elem_tensors: &[Tensor4],
    variant: CouplingVariant,
    normalize: bool,
) -> Vec<f64> {
    let sp = mesh.spacing();
    quad.samples
        .par_iter()
        .enumerate()
        .map(|(p, list)| {
            let mut acc = 0.0;
            let mut last_e = usize::MAX;
            let mut ue = [0.0; 24];
            for &(e, xi, w) in list {
                if e != last_e {
                    ue = element_displacements(mesh, u, e);
                    last_e = e;
                }
                let strain = hex::strain_at(xi, sp, &ue);
                let tr = match variant {
                    CouplingVariant::Stress => elem_tensors[e].stress_trace(&strain),
                    CouplingVariant::Strain => strain.trace(),
                };
                acc += w * tr;
            }
            if normalize {
                let ws = quad.weight_sum(p);
                if ws > 0.0 {
                    acc /= ws;
                }
            }
            acc.max(0.0)
        })
        .collect()
}

/// Engineering Voigt strain vector back to the symmetric tensor.
fn voigt_to_strain(v: &nalgebra::SVector<f64, 6>) -> Matrix3<f64> {
    Matrix3::new(
        v[0],
        0.5 * v[5],
        0.5 * v[4],
        0.5 * v[5],
        v[1],
        0.5 * v[3],
        0.5 * v[4],
        0.5 * v[3],
        v[2],
    )
}

/// Model II effective rates (Q_n1, Q_n2, Q_b): the matrix-region cell
/// integral of the pointwise rates evaluated at the localized strain
/// W(y) e(u). The localization must match the cell mesh the caller prepared.
pub fn q_eff(
    n: (f64, f64),
    b: f64,
    macro_strain: &Matrix3<f64>,
    localization: &LocalizationField,
    matrix_stiffness_at_b: &Tensor4,
    params: &KineticsParams,
    variant: CouplingVariant,
    expected_mesh_id: u64,
) -> Result<(f64, f64, f64), CellwallError> {
    if localization.mesh_id != expected_mesh_id {
        return Err(CellwallError::StaleLocalization {
            expected: expected_mesh_id,
            got: localization.mesh_id,
        });
    }
    let eps = crate::tensor::strain_to_voigt(macro_strain);
    let mut p_integral = 0.0;
    let mut matrix_area = 0.0;
    for t in 0..localization.id_plus_s.len() {
        if localization.region[t] != Region::Matrix {
            continue;
        }
        let micro_v = localization.id_plus_s[t] * eps;
        let micro = voigt_to_strain(&micro_v);
        let p = crate::chemistry::signal(&micro, matrix_stiffness_at_b, variant);
        p_integral += localization.areas[t] * p;
        matrix_area += localization.areas[t];
    }
    let n1 = n.0.max(0.0);
    let n2 = n.1.max(0.0);
    let r_b = params.r_b(b.max(0.0));
    let r_dc = params.r_dc(n1, n2);
    Ok((
        2.0 * r_b * p_integral,
        r_b * p_integral,
        matrix_area * r_dc - r_b * p_integral,
    ))
}
