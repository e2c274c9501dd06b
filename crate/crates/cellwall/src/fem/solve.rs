//! Preconditioned conjugate gradients for symmetric positive semidefinite
//! systems whose kernel is known explicitly (constants, rigid motions).
//!
//! The iterates are kept orthogonal to the kernel by projection; afterwards a
//! kernel component is added back so that prescribed affine functionals (zero
//! means, zero rotation moment) hold exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::CellwallError;
use crate::fem::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precond {
    Jacobi,
    /// Symmetric Gauss-Seidel.
    Sgs,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Euclidean orthonormalization (modified Gram-Schmidt); near-dependent
/// vectors are dropped.
fn orthonormalize(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for b in &basis {
            let c = dot(&w, b);
            axpy(&mut w, -c, b);
        }
        let n = dot(&w, &w).sqrt();
        if n > 1e-12 * (dot(v, v).sqrt().max(1.0)) {
            for wi in &mut w {
                *wi /= n;
            }
            basis.push(w);
        }
    }
    basis
}

fn project_out(x: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(x, b);
        axpy(x, -c, b);
    }
}

struct SgsData {
    diag: Vec<f64>,
}

fn apply_precond(
    a: &CsrMatrix,
    precond: Precond,
    data: &SgsData,
    r: &[f64],
    z: &mut [f64],
) {
    match precond {
        Precond::Jacobi => {
            for i in 0..r.len() {
                z[i] = r[i] / data.diag[i];
            }
        }
        Precond::Sgs => {
            // z = (D+U)^{-1} D (D+L)^{-1} r
            let n = r.len();
            // forward solve (D+L) t = r
            for i in 0..n {
                let (cols, vals) = a.row(i);
                let mut s = r[i];
                for (c, v) in cols.iter().zip(vals) {
                    if *c < i {
                        s -= v * z[*c];
                    }
                }
                z[i] = s / data.diag[i];
            }
            // scale by D
            for i in 0..n {
                z[i] *= data.diag[i];
            }
            // backward solve (D+U) z = t
            for i in (0..n).rev() {
                let (cols, vals) = a.row(i);
                let mut s = z[i];
                for (c, v) in cols.iter().zip(vals) {
                    if *c > i {
                        s -= v * z[*c];
                    }
                }
                z[i] = s / data.diag[i];
            }
        }
    }
}

/// Solves A x = b for a symmetric positive semidefinite A whose kernel is
/// spanned by `kernel`. Returns the solution component orthogonal to the
/// kernel together with the iteration count. Convergence is measured by the
/// true residual relative to |b|.
pub fn solve_spd(
    a: &CsrMatrix,
    b: &[f64],
    kernel: &[Vec<f64>],
    precond: Precond,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize), CellwallError> {
    let n = b.len();
    assert_eq!(a.n_rows, n);
    let basis = orthonormalize(kernel);
    let diag = a.diagonal();
    if diag.iter().any(|&d| d <= 0.0) {
        return Err(CellwallError::CoefficientNotPd);
    }
    let data = SgsData { diag };

    let mut r = b.to_vec();
    project_out(&mut r, &basis);
    let bnorm = dot(&r, &r).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut z = vec![0.0; n];
    apply_precond(a, precond, &data, &r, &mut z);
    project_out(&mut z, &basis);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(CellwallError::SolverDiverged {
                iterations: it,
                residual: dot(&r, &r).sqrt() / bnorm,
            });
        }
        let alpha = rz / pap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        project_out(&mut r, &basis);
        let rnorm = dot(&r, &r).sqrt();
        if rnorm <= tol * bnorm {
            project_out(&mut x, &basis);
            return Ok((x, it));
        }
        apply_precond(a, precond, &data, &r, &mut z);
        project_out(&mut z, &basis);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(CellwallError::SolverDiverged {
        iterations: max_iter,
        residual: dot(&r, &r).sqrt() / bnorm,
    })
}

/// Adds a kernel component to `x` so that the affine functionals take their
/// target values: f_i(x + sum c_j k_j) = targets_i. The functionals must be
/// independent when restricted to the kernel span.
pub fn enforce_functionals(
    x: &mut [f64],
    kernel: &[Vec<f64>],
    functionals: &[Vec<f64>],
    targets: &[f64],
) -> Result<(), CellwallError> {
    assert_eq!(functionals.len(), targets.len());
    if functionals.is_empty() {
        return Ok(());
    }
    let k = kernel.len();
    let m = functionals.len();
    assert!(
        k >= m,
        "kernel dimension {k} too small for {m} functionals"
    );
    let mut g = DMatrix::<f64>::zeros(m, k);
    let mut rhs = DVector::<f64>::zeros(m);
    let mut scale: f64 = 0.0;
    for (i, f) in functionals.iter().enumerate() {
        for (j, kv) in kernel.iter().enumerate() {
            g[(i, j)] = dot(f, kv);
        }
        rhs[i] = targets[i] - dot(f, x);
        scale = scale.max(g.row(i).amax());
    }
    // Least-norm solve via the Gram matrix G G^T (square when k = m).
    let gg = &g * g.transpose();
    let chol = gg.clone().cholesky().ok_or(CellwallError::DependentConstraints {
        pivot: gg.determinant().abs().powf(1.0 / m as f64),
    })?;
    // Pivot check: smallest diagonal of the Cholesky factor against scale.
    let l = chol.l();
    let min_piv = (0..m).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_piv < 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(CellwallError::DependentConstraints { pivot: min_piv });
    }
    let lambda = chol.solve(&rhs);
    let coeff = g.transpose() * lambda;
    for (j, kv) in kernel.iter().enumerate() {
        axpy(x, coeff[j], kv);
    }
    Ok(())
}
