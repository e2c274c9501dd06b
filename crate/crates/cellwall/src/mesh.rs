//! Meshes: the 2D periodic unit cell with a circular fibril inclusion, and
//! the 3D macroscopic box periodic in x3.
//!
//! The unit-cell generator is a structured O-grid: concentric rings inside
//! the disk (with 2:1 ring coarsening toward the center), a graded layer
//! fan between the circle and the square boundary, and a closing fan at the
//! center. All vertex coordinates are generated in coordinates centered at
//! the cell midpoint from a single octant via exact sign/swap transforms, so
//! the vertex set is mirror-symmetric under y -> (1-y1, y2) and
//! y -> (y2, y1) to round-off.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::hash::{Hash, Hasher};

use crate::error::CellwallError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Matrix,
    Fibril,
}

#[derive(Debug, Clone)]
pub struct UnitCellMesh {
    /// Vertex coordinates in [0,1]^2.
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub region: Vec<Region>,
    /// Edges resolving the matrix/fibril interface.
    pub interface_edges: Vec<[usize; 2]>,
    /// (slave, master) vertex pairs: right->left and top->bottom faces.
    pub periodic_pairs: Vec<(usize, usize)>,
    pub mesh_size_h: f64,
    pub radius: f64,
    id: u64,
}

impl UnitCellMesh {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        let pc = self.vertices[c];
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1])).abs()
    }

    /// Constant gradients (g1, g2) of the three P1 shape functions and the
    /// triangle area.
    pub fn p1_gradients(&self, t: usize) -> ([[f64; 2]; 3], f64) {
        let [a, b, c] = self.triangles[t];
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        let pc = self.vertices[c];
        let det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
        let area = 0.5 * det.abs();
        let inv = 1.0 / det;
        let g = [
            [(pb[1] - pc[1]) * inv, (pc[0] - pb[0]) * inv],
            [(pc[1] - pa[1]) * inv, (pa[0] - pc[0]) * inv],
            [(pa[1] - pb[1]) * inv, (pb[0] - pa[0]) * inv],
        ];
        (g, area)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn fibril_area(&self) -> f64 {
        (0..self.triangles.len())
            .filter(|&t| self.region[t] == Region::Fibril)
            .map(|t| self.triangle_area(t))
            .sum()
    }

    /// Canonical master vertex for each vertex under periodic identification
    /// (chains through corners are resolved).
    pub fn periodic_master_map(&self) -> Vec<usize> {
        let mut master: Vec<usize> = (0..self.vertices.len()).collect();
        for &(slave, m) in &self.periodic_pairs {
            master[slave] = m;
        }
        for v in 0..master.len() {
            let mut m = master[v];
            while master[m] != m {
                m = master[m];
            }
            master[v] = m;
        }
        master
    }

    /// Every interior edge shared by exactly two triangles, boundary edges
    /// by one.
    pub fn is_conforming(&self) -> bool {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let a = t[k];
                let b = t[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                *count.entry(key).or_insert(0) += 1;
            }
        }
        count.values().all(|&c| c == 1 || c == 2)
    }
}

/// Directions 2*pi*j/n generated from one octant with exact sign/swap
/// transforms; n must be a multiple of 8.
fn ring_dirs(n: usize) -> Vec<[f64; 2]> {
    debug_assert!(n % 8 == 0);
    let n8 = n / 8;
    let mut base = Vec::with_capacity(n8 + 1);
    for j in 0..=n8 {
        let t = 2.0 * PI * j as f64 / n as f64;
        base.push([t.cos(), t.sin()]);
    }
    base[0] = [1.0, 0.0];
    base[n8] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];
    let mut dirs = Vec::with_capacity(n);
    for j in 0..n {
        let d = if j <= n8 {
            let [c, s] = base[j];
            [c, s]
        } else if j <= 2 * n8 {
            let [c, s] = base[2 * n8 - j];
            [s, c]
        } else if j <= 3 * n8 {
            let [c, s] = base[j - 2 * n8];
            [-s, c]
        } else if j <= 4 * n8 {
            let [c, s] = base[4 * n8 - j];
            [-c, s]
        } else if j <= 5 * n8 {
            let [c, s] = base[j - 4 * n8];
            [-c, -s]
        } else if j <= 6 * n8 {
            let [c, s] = base[6 * n8 - j];
            [-s, -c]
        } else if j <= 7 * n8 {
            let [c, s] = base[j - 6 * n8];
            [s, -c]
        } else {
            let [c, s] = base[8 * n8 - j];
            [c, -s]
        };
        dirs.push(d);
    }
    dirs
}

/// Intersection of the ray through `dir` with the boundary of the centered
/// square [-1/2,1/2]^2; the dominant coordinate comes out exactly +-0.5.
fn square_boundary_point(dir: [f64; 2]) -> [f64; 2] {
    let (a0, a1) = (dir[0].abs(), dir[1].abs());
    if a0 >= a1 {
        [dir[0] / a0 * 0.5, dir[1] / a0 * 0.5]
    } else {
        [dir[0] / a1 * 0.5, dir[1] / a1 * 0.5]
    }
}

struct MeshBuilder {
    vertices: Vec<[f64; 2]>, // centered coordinates during construction
    triangles: Vec<[usize; 3]>,
    region: Vec<Region>,
}

impl MeshBuilder {
    fn new() -> Self {
        Self {
            vertices: Vec::new(),
            triangles: Vec::new(),
            region: Vec::new(),
        }
    }

    fn add_vertex(&mut self, p: [f64; 2]) -> usize {
        self.vertices.push(p);
        self.vertices.len() - 1
    }

    fn add_tri(&mut self, a: usize, b: usize, c: usize, region: Region) {
        self.triangles.push([a, b, c]);
        self.region.push(region);
    }

    fn dist2(&self, a: usize, b: usize) -> f64 {
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        (pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)
    }

    /// Splits the quad (q0,q1,q2,q3) along its shorter diagonal; near-equal
    /// diagonals (quads on symmetry axes) get a symmetric 4-way centroid
    /// split so the triangulation stays invariant under the cell's mirrors.
    fn split_quad(&mut self, q: [usize; 4], region: Region) {
        let d02 = self.dist2(q[0], q[2]);
        let d13 = self.dist2(q[1], q[3]);
        let tol = 1e-9 * (d02 + d13);
        if d02 + tol < d13 {
            self.add_tri(q[0], q[1], q[2], region);
            self.add_tri(q[0], q[2], q[3], region);
        } else if d13 + tol < d02 {
            self.add_tri(q[0], q[1], q[3], region);
            self.add_tri(q[1], q[2], q[3], region);
        } else {
            let c = centroid4(
                self.vertices[q[0]],
                self.vertices[q[1]],
                self.vertices[q[2]],
                self.vertices[q[3]],
            );
            let cv = self.add_vertex(c);
            for k in 0..4 {
                self.add_tri(q[k], q[(k + 1) % 4], cv, region);
            }
        }
    }

    /// Connects a ring (count n) to the next ring with the same count.
    fn connect_equal(&mut self, inner: &[usize], outer: &[usize], region: Region) {
        let n = inner.len();
        debug_assert_eq!(n, outer.len());
        for j in 0..n {
            let jn = (j + 1) % n;
            self.split_quad([inner[j], inner[jn], outer[jn], outer[j]], region);
        }
    }

    /// Connects a coarse ring (count n) to a fine ring (count 2n) outside it.
    fn connect_half(&mut self, coarse: &[usize], fine: &[usize], region: Region) {
        let n = coarse.len();
        debug_assert_eq!(2 * n, fine.len());
        for j in 0..n {
            let jn = (j + 1) % n;
            let f0 = fine[2 * j];
            let f1 = fine[2 * j + 1];
            let f2 = fine[(2 * j + 2) % (2 * n)];
            self.add_tri(coarse[j], f0, f1, region);
            self.add_tri(coarse[j], f1, coarse[jn], region);
            self.add_tri(coarse[jn], f1, f2, region);
        }
    }
}

fn centroid4(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> [f64; 2] {
    [
        (a[0] + b[0] + c[0] + d[0]) * 0.25,
        (a[1] + b[1] + c[1] + d[1]) * 0.25,
    ]
}

/// Builds the periodic unit-cell mesh. `radius` = 0 yields a pure-matrix
/// structured mesh (no inclusion); otherwise 0 < radius < 0.5 is required.
pub fn build_unit_cell_mesh(radius: f64, target_h: f64) -> Result<UnitCellMesh, CellwallError> {
    if !(0.0..0.5).contains(&radius) {
        return Err(CellwallError::InvalidMesh(format!(
            "radius must be in [0, 0.5), got {radius} (inclusion touching the cell boundary is not supported)"
        )));
    }
    if !(target_h > 0.0 && target_h <= 0.25) {
        return Err(CellwallError::InvalidMesh(format!(
            "target_h must lie in (0, 0.25], got {target_h}"
        )));
    }
    let mesh = if radius == 0.0 {
        build_square_mesh(target_h)
    } else {
        build_ogrid_mesh(radius, target_h)
    };
    Ok(mesh)
}

fn build_square_mesh(h: f64) -> UnitCellMesh {
    let n = (1.0 / h).ceil() as usize;
    let mut mb = MeshBuilder::new();
    let coord = |i: usize| i as f64 / n as f64 - 0.5;
    let mut ids = vec![vec![0usize; n + 1]; n + 1];
    for j in 0..=n {
        for i in 0..=n {
            ids[j][i] = mb.add_vertex([coord(i), coord(j)]);
        }
    }
    for j in 0..n {
        for i in 0..n {
            mb.split_quad(
                [ids[j][i], ids[j][i + 1], ids[j + 1][i + 1], ids[j + 1][i]],
                Region::Matrix,
            );
        }
    }
    finalize(mb, Vec::new(), h, 0.0)
}

fn build_ogrid_mesh(radius: f64, h: f64) -> UnitCellMesh {
    // Angular resolution: boundary arc <= h and circle chord error <= h^2.
    let mut n_oct = ((2.0 * PI / (h * std::f64::consts::SQRT_2)) / 8.0).ceil() as usize;
    n_oct = n_oct.max(1);
    loop {
        let dtheta = 2.0 * PI / (8 * n_oct) as f64;
        let sagitta = radius * (1.0 - (dtheta / 2.0).cos());
        if sagitta <= h * h {
            break;
        }
        n_oct += 1;
    }
    let n_a = 8 * n_oct;
    let dtheta = 2.0 * PI / n_a as f64;
    let cap = 0.75 * h;

    let mut mb = MeshBuilder::new();
    let dirs = ring_dirs(n_a);

    // Circle ring (shared between fibril and matrix sides).
    let circle: Vec<usize> = dirs
        .iter()
        .map(|d| mb.add_vertex([radius * d[0], radius * d[1]]))
        .collect();

    // --- Fibril side: rings inward with 2:1 coarsening, closed by a fan. ---
    let mut fib_rings: Vec<Vec<usize>> = vec![circle.clone()];
    let mut s = radius;
    let mut n_cur = n_a;
    let mut d = (radius * dtheta).min(cap);
    loop {
        let s_next = s - d;
        if s_next <= 0.7 * d {
            break;
        }
        let mut n_next = n_cur;
        if n_cur >= 16 && (n_cur / 2) % 8 == 0 && 2.0 * PI * s_next / (n_cur as f64) < 0.5 * d {
            n_next = n_cur / 2;
        }
        let ring_d = ring_dirs(n_next);
        let ring: Vec<usize> = ring_d
            .iter()
            .map(|dd| mb.add_vertex([s_next * dd[0], s_next * dd[1]]))
            .collect();
        fib_rings.push(ring);
        s = s_next;
        n_cur = n_next;
        d = (d / 0.7).min(cap);
    }
    // Connect fibril rings (ring k+1 is inside ring k).
    for k in 0..fib_rings.len() - 1 {
        let outer = &fib_rings[k].clone();
        let inner = &fib_rings[k + 1].clone();
        if inner.len() == outer.len() {
            mb.connect_equal(inner, outer, Region::Fibril);
        } else {
            mb.connect_half(inner, outer, Region::Fibril);
        }
    }
    // Closing fan.
    let center = mb.add_vertex([0.0, 0.0]);
    let last = fib_rings.last().unwrap().clone();
    let n_last = last.len();
    for j in 0..n_last {
        mb.add_tri(center, last[j], last[(j + 1) % n_last], Region::Fibril);
    }

    // --- Matrix side: graded layers from the circle to the square boundary. ---
    let boundary: Vec<[f64; 2]> = dirs.iter().map(|&dd| square_boundary_point(dd)).collect();
    let l_max = boundary
        .iter()
        .zip(dirs.iter())
        .map(|(bp, dd)| {
            let cx = radius * dd[0];
            let cy = radius * dd[1];
            ((bp[0] - cx).powi(2) + (bp[1] - cy).powi(2)).sqrt()
        })
        .fold(0.0_f64, f64::max);
    // Spacings grow away from the interface by 1/0.7, capped at 0.75 h.
    let mut spacings = Vec::new();
    let mut dd = (radius * dtheta).min(cap);
    let mut sum = 0.0;
    while sum < l_max {
        spacings.push(dd);
        sum += dd;
        dd = (dd / 0.7).min(cap);
    }
    let mut fractions: Vec<f64> = Vec::with_capacity(spacings.len());
    let mut acc = 0.0;
    for sp in &spacings {
        acc += sp;
        fractions.push(acc / sum);
    }
    if let Some(fl) = fractions.last_mut() {
        *fl = 1.0;
    }

    let mut prev = circle.clone();
    for (li, &f) in fractions.iter().enumerate() {
        let is_last = li + 1 == fractions.len();
        let ring: Vec<usize> = (0..n_a)
            .map(|j| {
                if is_last {
                    mb.add_vertex(boundary[j])
                } else {
                    let c = [radius * dirs[j][0], radius * dirs[j][1]];
                    let p = [
                        c[0] + f * (boundary[j][0] - c[0]),
                        c[1] + f * (boundary[j][1] - c[1]),
                    ];
                    mb.add_vertex(p)
                }
            })
            .collect();
        mb.connect_equal(&prev, &ring, Region::Matrix);
        prev = ring;
    }

    let interface: Vec<[usize; 2]> = (0..n_a).map(|j| [circle[j], circle[(j + 1) % n_a]]).collect();
    finalize(mb, interface, h, radius)
}

/// Shifts to [0,1]^2, finds periodic pairs, computes the mesh id.
fn finalize(
    mb: MeshBuilder,
    interface_edges: Vec<[usize; 2]>,
    h: f64,
    radius: f64,
) -> UnitCellMesh {
    let centered = mb.vertices;
    let vertices: Vec<[f64; 2]> = centered.iter().map(|p| [p[0] + 0.5, p[1] + 0.5]).collect();

    // Boundary vertices carry exact +-0.5 coordinates in centered form.
    let on = |x: f64, v: f64| (x - v).abs() < 1e-13;
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut bottom = Vec::new();
    let mut top = Vec::new();
    for (i, p) in centered.iter().enumerate() {
        if on(p[0], -0.5) {
            left.push(i);
        }
        if on(p[0], 0.5) {
            right.push(i);
        }
        if on(p[1], -0.5) {
            bottom.push(i);
        }
        if on(p[1], 0.5) {
            top.push(i);
        }
    }
    let by_coord = |ids: &mut Vec<usize>, axis: usize| {
        ids.sort_by(|&a, &b| centered[a][axis].partial_cmp(&centered[b][axis]).unwrap());
    };
    by_coord(&mut left, 1);
    by_coord(&mut right, 1);
    by_coord(&mut bottom, 0);
    by_coord(&mut top, 0);
    assert_eq!(left.len(), right.len(), "periodic face vertex counts differ");
    assert_eq!(bottom.len(), top.len(), "periodic face vertex counts differ");
    let mut periodic_pairs = Vec::new();
    for (&s, &m) in right.iter().zip(left.iter()) {
        debug_assert!((centered[s][1] - centered[m][1]).abs() < 1e-12);
        periodic_pairs.push((s, m));
    }
    for (&s, &m) in top.iter().zip(bottom.iter()) {
        debug_assert!((centered[s][0] - centered[m][0]).abs() < 1e-12);
        periodic_pairs.push((s, m));
    }

    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    radius.to_bits().hash(&mut hasher);
    h.to_bits().hash(&mut hasher);
    vertices.len().hash(&mut hasher);
    mb.triangles.len().hash(&mut hasher);
    let id = hasher.finish();

    UnitCellMesh {
        vertices,
        triangles: mb.triangles,
        region: mb.region,
        interface_edges,
        periodic_pairs,
        mesh_size_h: h,
        radius,
        id,
    }
}

/// Matrix and fibril volume fractions from the triangle areas; they sum to
/// one exactly because both come from the same area sum.
pub fn volume_fractions(mesh: &UnitCellMesh) -> (f64, f64) {
    let total = mesh.total_area();
    let fib = mesh.fibril_area();
    let theta_f = fib / total;
    (1.0 - theta_f, theta_f)
}

// ---------------------------------------------------------------------------
// Macroscopic box mesh
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceTag {
    /// x1 = 0, in contact with the cell interior (turgor side).
    GammaI,
    /// x1 = a1, the exterior side.
    GammaE,
    /// x2 = 0 and x2 = a2.
    GammaU,
    /// x3 = 0 and x3 = a3, identified periodically.
    PeriodicX3,
}

#[derive(Debug, Clone)]
pub struct BoundaryFace {
    pub nodes: [usize; 4],
    pub tag: FaceTag,
    pub area: f64,
    /// Outward unit normal.
    pub normal: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct MacroMesh {
    pub extents: [f64; 3],
    pub cells: [usize; 3],
    pub nodes: Vec<[f64; 3]>,
    pub hexes: Vec<[usize; 8]>,
    pub boundary_faces: Vec<BoundaryFace>,
    /// (slave on x3 = a3, master on x3 = 0) node pairs.
    pub periodic_pairs: Vec<(usize, usize)>,
}

impl MacroMesh {
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [n1, n2, _] = self.cells;
        i + (n1 + 1) * (j + (n2 + 1) * k)
    }

    pub fn spacing(&self) -> [f64; 3] {
        [
            self.extents[0] / self.cells[0] as f64,
            self.extents[1] / self.cells[1] as f64,
            self.extents[2] / self.cells[2] as f64,
        ]
    }

    pub fn element_volume(&self) -> f64 {
        let [hx, hy, hz] = self.spacing();
        hx * hy * hz
    }

    pub fn periodic_master_map(&self) -> Vec<usize> {
        let mut master: Vec<usize> = (0..self.nodes.len()).collect();
        for &(s, m) in &self.periodic_pairs {
            master[s] = m;
        }
        master
    }
}

pub fn build_macro_mesh(extents: [f64; 3], cells: [usize; 3]) -> Result<MacroMesh, CellwallError> {
    if extents.iter().any(|&a| a <= 0.0) {
        return Err(CellwallError::InvalidMesh(format!(
            "box extents must be positive, got {extents:?}"
        )));
    }
    if cells.iter().any(|&n| n == 0) {
        return Err(CellwallError::InvalidMesh(format!(
            "cell counts must be at least 1, got {cells:?}"
        )));
    }
    let [n1, n2, n3] = cells;
    let [a1, a2, a3] = extents;
    let mut nodes = Vec::with_capacity((n1 + 1) * (n2 + 1) * (n3 + 1));
    for k in 0..=n3 {
        for j in 0..=n2 {
            for i in 0..=n1 {
                nodes.push([
                    a1 * i as f64 / n1 as f64,
                    a2 * j as f64 / n2 as f64,
                    a3 * k as f64 / n3 as f64,
                ]);
            }
        }
    }
    let idx = |i: usize, j: usize, k: usize| i + (n1 + 1) * (j + (n2 + 1) * k);
    let mut hexes = Vec::with_capacity(n1 * n2 * n3);
    for k in 0..n3 {
        for j in 0..n2 {
            for i in 0..n1 {
                hexes.push([
                    idx(i, j, k),
                    idx(i + 1, j, k),
                    idx(i + 1, j + 1, k),
                    idx(i, j + 1, k),
                    idx(i, j, k + 1),
                    idx(i + 1, j, k + 1),
                    idx(i + 1, j + 1, k + 1),
                    idx(i, j + 1, k + 1),
                ]);
            }
        }
    }
    let (hx, hy, hz) = (a1 / n1 as f64, a2 / n2 as f64, a3 / n3 as f64);
    let mut boundary_faces = Vec::new();
    // x1 faces
    for k in 0..n3 {
        for j in 0..n2 {
            boundary_faces.push(BoundaryFace {
                nodes: [idx(0, j, k), idx(0, j + 1, k), idx(0, j + 1, k + 1), idx(0, j, k + 1)],
                tag: FaceTag::GammaI,
                area: hy * hz,
                normal: [-1.0, 0.0, 0.0],
            });
            boundary_faces.push(BoundaryFace {
                nodes: [
                    idx(n1, j, k),
                    idx(n1, j + 1, k),
                    idx(n1, j + 1, k + 1),
                    idx(n1, j, k + 1),
                ],
                tag: FaceTag::GammaE,
                area: hy * hz,
                normal: [1.0, 0.0, 0.0],
            });
        }
    }
    // x2 faces
    for k in 0..n3 {
        for i in 0..n1 {
            boundary_faces.push(BoundaryFace {
                nodes: [idx(i, 0, k), idx(i + 1, 0, k), idx(i + 1, 0, k + 1), idx(i, 0, k + 1)],
                tag: FaceTag::GammaU,
                area: hx * hz,
                normal: [0.0, -1.0, 0.0],
            });
            boundary_faces.push(BoundaryFace {
                nodes: [
                    idx(i, n2, k),
                    idx(i + 1, n2, k),
                    idx(i + 1, n2, k + 1),
                    idx(i, n2, k + 1),
                ],
                tag: FaceTag::GammaU,
                area: hx * hz,
                normal: [0.0, 1.0, 0.0],
            });
        }
    }
    // x3 faces (periodic)
    for j in 0..n2 {
        for i in 0..n1 {
            boundary_faces.push(BoundaryFace {
                nodes: [idx(i, j, 0), idx(i + 1, j, 0), idx(i + 1, j + 1, 0), idx(i, j + 1, 0)],
                tag: FaceTag::PeriodicX3,
                area: hx * hy,
                normal: [0.0, 0.0, -1.0],
            });
            boundary_faces.push(BoundaryFace {
                nodes: [
                    idx(i, j, n3),
                    idx(i + 1, j, n3),
                    idx(i + 1, j + 1, n3),
                    idx(i, j + 1, n3),
                ],
                tag: FaceTag::PeriodicX3,
                area: hx * hy,
                normal: [0.0, 0.0, 1.0],
            });
        }
    }
    let mut periodic_pairs = Vec::with_capacity((n1 + 1) * (n2 + 1));
    for j in 0..=n2 {
        for i in 0..=n1 {
            periodic_pairs.push((idx(i, j, n3), idx(i, j, 0)));
        }
    }
    Ok(MacroMesh {
        extents,
        cells,
        nodes,
        hexes,
        boundary_faces,
        periodic_pairs,
    })
}
