//! Trilinear hexahedral element on axis-aligned boxes, 2x2x2 Gauss rule.
//!
//! Node ordering matches the macro mesh: bottom face (0,0,0) (1,0,0) (1,1,0)
//! (0,1,0), then the top face in the same order.

use nalgebra::{Matrix3, SMatrix};

use crate::tensor::Tensor4;

pub const HEX_NODES: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

const G: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)

pub fn gauss_points() -> [[f64; 3]; 8] {
    let mut pts = [[0.0; 3]; 8];
    for (k, n) in HEX_NODES.iter().enumerate() {
        pts[k] = [G * n[0], G * n[1], G * n[2]];
    }
    pts
}

pub fn shape(xi: [f64; 3]) -> [f64; 8] {
    let mut n = [0.0; 8];
    for (a, node) in HEX_NODES.iter().enumerate() {
        n[a] = 0.125
            * (1.0 + xi[0] * node[0])
            * (1.0 + xi[1] * node[1])
            * (1.0 + xi[2] * node[2]);
    }
    n
}

/// Physical gradients of the eight shape functions for element spacing
/// (hx, hy, hz).
pub fn shape_gradients(xi: [f64; 3], spacing: [f64; 3]) -> [[f64; 3]; 8] {
    let s = [2.0 / spacing[0], 2.0 / spacing[1], 2.0 / spacing[2]];
    let mut g = [[0.0; 3]; 8];
    for (a, node) in HEX_NODES.iter().enumerate() {
        g[a] = [
            0.125 * node[0] * (1.0 + xi[1] * node[1]) * (1.0 + xi[2] * node[2]) * s[0],
            0.125 * (1.0 + xi[0] * node[0]) * node[1] * (1.0 + xi[2] * node[2]) * s[1],
            0.125 * (1.0 + xi[0] * node[0]) * (1.0 + xi[1] * node[1]) * node[2] * s[2],
        ];
    }
    g
}

/// Scalar diffusion stiffness integral of grad(phi) . D grad(phi).
pub fn scalar_stiffness(spacing: [f64; 3], d: &Matrix3<f64>) -> SMatrix<f64, 8, 8> {
    let detj = spacing[0] * spacing[1] * spacing[2] / 8.0;
    let mut k = SMatrix::<f64, 8, 8>::zeros();
    for xi in gauss_points() {
        let g = shape_gradients(xi, spacing);
        for a in 0..8 {
            let dga = [
                d[(0, 0)] * g[a][0] + d[(0, 1)] * g[a][1] + d[(0, 2)] * g[a][2],
                d[(1, 0)] * g[a][0] + d[(1, 1)] * g[a][1] + d[(1, 2)] * g[a][2],
                d[(2, 0)] * g[a][0] + d[(2, 1)] * g[a][1] + d[(2, 2)] * g[a][2],
            ];
            for b in 0..8 {
                k[(a, b)] += detj * (dga[0] * g[b][0] + dga[1] * g[b][1] + dga[2] * g[b][2]);
            }
        }
    }
    k
}

/// Strain-displacement matrix (engineering Voigt rows) at one quadrature
/// point; columns are grouped per node: (u1, u2, u3) for node a at 3a..3a+3.
pub fn b_matrix(g: &[[f64; 3]; 8]) -> SMatrix<f64, 6, 24> {
    let mut b = SMatrix::<f64, 6, 24>::zeros();
    for a in 0..8 {
        let c = 3 * a;
        b[(0, c)] = g[a][0];
        b[(1, c + 1)] = g[a][1];
        b[(2, c + 2)] = g[a][2];
        // engineering shears: gamma_23, gamma_13, gamma_12
        b[(3, c + 1)] = g[a][2];
        b[(3, c + 2)] = g[a][1];
        b[(4, c)] = g[a][2];
        b[(4, c + 2)] = g[a][0];
        b[(5, c)] = g[a][1];
        b[(5, c + 1)] = g[a][0];
    }
    b
}

/// Elastic stiffness integral of e(phi) : C : e(phi).
pub fn vector_stiffness(spacing: [f64; 3], c: &Tensor4) -> SMatrix<f64, 24, 24> {
    let detj = spacing[0] * spacing[1] * spacing[2] / 8.0;
    let cv = c.voigt();
    let mut k = SMatrix::<f64, 24, 24>::zeros();
    for xi in gauss_points() {
        let b = b_matrix(&shape_gradients(xi, spacing));
        k += b.transpose() * cv * b * detj;
    }
    k
}

/// Symmetric strain tensor at a reference point from nodal displacements.
pub fn strain_at(xi: [f64; 3], spacing: [f64; 3], u: &[f64; 24]) -> Matrix3<f64> {
    let g = shape_gradients(xi, spacing);
    let mut grad = Matrix3::<f64>::zeros();
    for a in 0..8 {
        for i in 0..3 {
            for j in 0..3 {
                grad[(i, j)] += u[3 * a + i] * g[a][j];
            }
        }
    }
    (grad + grad.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::isotropic_tensor;
    use approx::assert_relative_eq;

    #[test]
    fn partition_of_unity() {
        let n = shape([0.3, -0.7, 0.1]);
        assert_relative_eq!(n.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        let g = shape_gradients([0.3, -0.7, 0.1], [0.5, 1.0, 2.0]);
        for d in 0..3 {
            let s: f64 = g.iter().map(|ga| ga[d]).sum();
            assert!(s.abs() < 1e-14);
        }
    }

    #[test]
    fn scalar_stiffness_annihilates_constants_and_reproduces_linear() {
        let sp = [0.5, 0.25, 1.0];
        let d = Matrix3::identity();
        let k = scalar_stiffness(sp, &d);
        let ones = SMatrix::<f64, 8, 1>::repeat(1.0);
        assert!((k * ones).amax() < 1e-14);
        // Energy of u = x over one element equals the element volume.
        let mut u = SMatrix::<f64, 8, 1>::zeros();
        for a in 0..8 {
            u[a] = 0.5 * sp[0] * (1.0 + HEX_NODES[a][0]);
        }
        let e = (u.transpose() * k * u)[0];
        assert_relative_eq!(e, sp[0] * sp[1] * sp[2], epsilon = 1e-13);
    }

    #[test]
    fn vector_stiffness_annihilates_rigid_motions() {
        let sp = [1.0, 0.5, 2.0];
        let c = isotropic_tensor(10.0, 0.3).unwrap();
        let k = vector_stiffness(sp, &c);
        // translations
        for comp in 0..3 {
            let mut u = SMatrix::<f64, 24, 1>::zeros();
            for a in 0..8 {
                u[3 * a + comp] = 1.0;
            }
            assert!((k * u).amax() < 1e-12);
        }
        // rotation about x3: u = (-y, x, 0)
        let mut u = SMatrix::<f64, 24, 1>::zeros();
        for a in 0..8 {
            let x = 0.5 * sp[0] * HEX_NODES[a][0];
            let y = 0.5 * sp[1] * HEX_NODES[a][1];
            u[3 * a] = -y;
            u[3 * a + 1] = x;
        }
        assert!((k * u).amax() < 1e-12, "rotation not in kernel");
    }

    #[test]
    fn strain_of_linear_field_is_exact() {
        let sp = [0.5, 1.0, 0.25];
        let mut u = [0.0; 24];
        // u = (0.1 x + 0.05 y, 0.2 y, -0.3 z + 0.02 x)
        for a in 0..8 {
            let x = 0.5 * sp[0] * HEX_NODES[a][0];
            let y = 0.5 * sp[1] * HEX_NODES[a][1];
            let z = 0.5 * sp[2] * HEX_NODES[a][2];
            u[3 * a] = 0.1 * x + 0.05 * y;
            u[3 * a + 1] = 0.2 * y;
            u[3 * a + 2] = -0.3 * z + 0.02 * x;
        }
        let e = strain_at([0.2, -0.4, 0.9], sp, &u);
        assert_relative_eq!(e[(0, 0)], 0.1, epsilon = 1e-13);
        assert_relative_eq!(e[(1, 1)], 0.2, epsilon = 1e-13);
        assert_relative_eq!(e[(2, 2)], -0.3, epsilon = 1e-13);
        assert_relative_eq!(e[(0, 1)], 0.025, epsilon = 1e-13);
        assert_relative_eq!(e[(0, 2)], 0.01, epsilon = 1e-13);
    }
}
