//! Rank-4 stiffness tensors with minor/major symmetries and their Voigt 6x6 view.
//!
//! Voigt ordering is (11, 22, 33, 23, 13, 12) with the engineering shear
//! convention: strain vectors carry gamma = 2*e for the shear components, so
//! stiffness components satisfy E_ijkl = C[I][J] with no extra factors.

use nalgebra::{Matrix3, SMatrix, SymmetricEigen};

use crate::error::CellwallError;

pub type Voigt6 = SMatrix<f64, 6, 6>;

/// Index map from a tensor pair (i,j) to the Voigt index.
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

pub fn voigt_index(i: usize, j: usize) -> usize {
    debug_assert!(i < 3 && j < 3);
    if i == j {
        i
    } else {
        6 - i - j
    }
}

/// Rank-4 tensor with both minor symmetries (exact by storage) and major
/// symmetry (exact by storage of the symmetric 6x6 Voigt matrix). Units MPa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor4 {
    c: Voigt6,
}

impl Tensor4 {
    /// Builds from a Voigt 6x6 matrix; symmetrizes round-off level asymmetry
    /// and rejects anything worse than 1e-10 relative.
    pub fn from_voigt(c: Voigt6) -> Result<Self, CellwallError> {
        let norm = c.norm().max(f64::MIN_POSITIVE);
        let asym = (c - c.transpose()).norm() / norm;
        if asym > 1e-10 {
            return Err(CellwallError::TensorSymmetry { residual: asym });
        }
        Ok(Self {
            c: (c + c.transpose()) * 0.5,
        })
    }

    pub fn zero() -> Self {
        Self { c: Voigt6::zeros() }
    }

    pub fn voigt(&self) -> &Voigt6 {
        &self.c
    }

    /// Full tensor component E_ijkl.
    pub fn component(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.c[(voigt_index(i, j), voigt_index(k, l))]
    }

    /// Applies the tensor to a symmetric strain, sigma = E : e.
    pub fn apply(&self, strain: &Matrix3<f64>) -> Matrix3<f64> {
        let ev = strain_to_voigt(strain);
        let sv = self.c * ev;
        stress_from_voigt(&sv)
    }

    /// tr(E : e), the stress trace used by the coupling operators.
    pub fn stress_trace(&self, strain: &Matrix3<f64>) -> f64 {
        let ev = strain_to_voigt(strain);
        let sv = self.c * ev;
        sv[0] + sv[1] + sv[2]
    }

    pub fn min_voigt_eigenvalue(&self) -> f64 {
        let eig = SymmetricEigen::new(self.c);
        eig.eigenvalues.min()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { c: self.c * s }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { c: self.c + other.c }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { c: self.c - other.c }
    }

    /// Rotates the tensor by the orthogonal matrix `q` (component loop over
    /// all eight indices; small and only used by symmetry checks).
    pub fn rotate(&self, q: &Matrix3<f64>) -> Self {
        let mut out = Voigt6::zeros();
        for (pi, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
            for (pj, &(k, l)) in VOIGT_PAIRS.iter().enumerate() {
                let mut v = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        for c in 0..3 {
                            for d in 0..3 {
                                v += q[(i, a)] * q[(j, b)] * q[(k, c)] * q[(l, d)]
                                    * self.component(a, b, c, d);
                            }
                        }
                    }
                }
                out[(pi, pj)] = v;
            }
        }
        // Result of rotating a symmetric tensor is symmetric; construct directly.
        Self {
            c: (out + out.transpose()) * 0.5,
        }
    }

    pub fn rel_diff(&self, other: &Self) -> f64 {
        let denom = self.c.norm().max(other.c.norm()).max(f64::MIN_POSITIVE);
        (self.c - other.c).norm() / denom
    }
}

/// Symmetric 3x3 strain to engineering Voigt vector (e11,e22,e33,2e23,2e13,2e12).
pub fn strain_to_voigt(e: &Matrix3<f64>) -> nalgebra::SVector<f64, 6> {
    nalgebra::SVector::<f64, 6>::from_column_slice(&[
        e[(0, 0)],
        e[(1, 1)],
        e[(2, 2)],
        2.0 * e[(1, 2)],
        2.0 * e[(0, 2)],
        2.0 * e[(0, 1)],
    ])
}

/// Stress Voigt vector (no engineering factors) back to a symmetric 3x3 matrix.
pub fn stress_from_voigt(s: &nalgebra::SVector<f64, 6>) -> Matrix3<f64> {
    Matrix3::new(
        s[0], s[5], s[4], //
        s[5], s[1], s[3], //
        s[4], s[3], s[2],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn voigt_index_map() {
        assert_eq!(voigt_index(0, 0), 0);
        assert_eq!(voigt_index(1, 1), 1);
        assert_eq!(voigt_index(2, 2), 2);
        assert_eq!(voigt_index(1, 2), 3);
        assert_eq!(voigt_index(2, 1), 3);
        assert_eq!(voigt_index(0, 2), 4);
        assert_eq!(voigt_index(0, 1), 5);
    }

    #[test]
    fn rejects_asymmetric_voigt() {
        let mut c = Voigt6::identity();
        c[(0, 1)] = 1.0;
        assert!(Tensor4::from_voigt(c).is_err());
    }

    #[test]
    fn diag_voigt_applies_like_identity_on_normal_strains() {
        // lambda = 0, mu = 0.5 gives diag(1,1,1,0.5,0.5,0.5)
        let c = Voigt6::from_diagonal(&nalgebra::SVector::<f64, 6>::from_column_slice(&[
            1.0, 1.0, 1.0, 0.5, 0.5, 0.5,
        ]));
        let t = Tensor4::from_voigt(c).unwrap();
        let e = Matrix3::new(2.0, 0.5, 0.0, 0.5, -1.0, 0.0, 0.0, 0.0, 3.0);
        let s = t.apply(&e);
        // 2*mu*e with mu = 0.5 reproduces e
        assert_relative_eq!(s[(0, 0)], 2.0, epsilon = 1e-14);
        assert_relative_eq!(s[(0, 1)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(s[(1, 1)], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn rotation_preserves_isotropic_tensor() {
        let t = crate::materials::isotropic_tensor(10.0, 0.3).unwrap();
        let a = 0.7_f64;
        let q = Matrix3::new(
            a.cos(),
            -a.sin(),
            0.0,
            a.sin(),
            a.cos(),
            0.0,
            0.0,
            0.0,
            1.0,
        );
        assert!(t.rotate(&q).rel_diff(&t) < 1e-12);
    }
}
