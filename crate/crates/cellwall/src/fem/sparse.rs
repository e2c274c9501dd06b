//! Compressed sparse row matrices assembled from triplets.

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed and
    /// entries that cancel exactly are dropped.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals = Vec::with_capacity(t.len());
        let mut i = 0;
        while i < t.len() {
            let (r, c, mut v) = t[i];
            debug_assert!(r < n_rows && c < n_cols);
            let mut j = i + 1;
            while j < t.len() && t[j].0 == r && t[j].1 == c {
                v += t[j].2;
                j += 1;
            }
            if v != 0.0 {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
            }
            i = j;
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let mut s = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                s += v * x[*c];
            }
            y[r] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_rows.min(self.n_cols)];
        for r in 0..d.len() {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                if *c == r {
                    d[r] = *v;
                }
            }
        }
        d
    }

    /// Maximum relative asymmetry |a_ij - a_ji| / max|a|; meant for tests.
    pub fn asymmetry(&self) -> f64 {
        use std::collections::HashMap;
        let mut map: HashMap<(usize, usize), f64> = HashMap::new();
        let mut amax: f64 = 0.0;
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                map.insert((r, *c), *v);
                amax = amax.max(v.abs());
            }
        }
        let mut worst: f64 = 0.0;
        for (&(r, c), &v) in &map {
            let vt = map.get(&(c, r)).copied().unwrap_or(0.0);
            worst = worst.max((v - vt).abs());
        }
        worst / amax.max(f64::MIN_POSITIVE)
    }
}

/// Maps full dof indices to a reduced numbering after master-slave
/// elimination (periodic identification) and removal of inactive dofs.
#[derive(Debug, Clone)]
pub struct DofMap {
    /// Reduced index of each full dof; slaves point at their master's
    /// reduced index; None for inactive dofs.
    pub reduced_of: Vec<Option<usize>>,
    pub n_reduced: usize,
}

impl DofMap {
    /// `master_of[d]` is the canonical dof each full dof folds into (equal to
    /// d itself for masters); `active` marks dofs that carry unknowns.
    pub fn new(master_of: &[usize], active: &[bool]) -> Self {
        let n = master_of.len();
        debug_assert_eq!(active.len(), n);
        let mut reduced_of = vec![None; n];
        let mut next = 0usize;
        for d in 0..n {
            if master_of[d] == d && active[d] {
                reduced_of[d] = Some(next);
                next += 1;
            }
        }
        for d in 0..n {
            let m = master_of[d];
            if m != d && active[d] {
                reduced_of[d] = reduced_of[m];
                debug_assert!(reduced_of[m].is_some(), "slave folded into inactive master");
            }
        }
        Self {
            reduced_of,
            n_reduced: next,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            reduced_of: (0..n).map(Some).collect(),
            n_reduced: n,
        }
    }

    /// Expands a reduced vector back to full dofs (inactive dofs get zero).
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.reduced_of
            .iter()
            .map(|r| r.map_or(0.0, |i| x[i]))
            .collect()
    }
}

/// Folds a full system into the reduced one: A_red = P^T A P, b_red = P^T b,
/// where P prolongates reduced dofs to full dofs.
pub fn apply_constraints(
    a: &CsrMatrix,
    b: &[f64],
    map: &DofMap,
) -> (CsrMatrix, Vec<f64>) {
    let mut triplets = Vec::with_capacity(a.nnz());
    for r in 0..a.n_rows {
        let Some(rr) = map.reduced_of[r] else { continue };
        let (cols, vals) = a.row(r);
        for (c, v) in cols.iter().zip(vals) {
            if let Some(cc) = map.reduced_of[*c] {
                triplets.push((rr, cc, *v));
            }
        }
    }
    let a_red = CsrMatrix::from_triplets(map.n_reduced, map.n_reduced, triplets);
    let mut b_red = vec![0.0; map.n_reduced];
    for (d, bv) in b.iter().enumerate() {
        if let Some(rr) = map.reduced_of[d] {
            b_red[rr] += bv;
        }
    }
    (a_red, b_red)
}
