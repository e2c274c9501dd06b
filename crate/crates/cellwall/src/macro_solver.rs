//! Coupled macroscopic time stepping: quasi-static elasticity with
//! cross-link dependent stiffness, implicit species diffusion, explicit
//! reactions, and the inner fixed-point loop between mechanics and
//! chemistry.

use nalgebra::Matrix3;

use crate::chemistry::{reaction_b_model_i, reaction_n, reaction_p, CouplingVariant};
use crate::config::{Model, ReactionTreatment, SimConfig};
use crate::coupling::{n_delta_eff, BallQuadrature};
use crate::error::CellwallError;
use crate::fem::sparse::apply_constraints;
use crate::fem::{enforce_functionals, hex, solve_spd, CsrMatrix, DofMap, Precond};
use crate::io::TrajectoryRow;
use crate::materials::isotropic_tensor;
use crate::mesh::{build_macro_mesh, FaceTag, MacroMesh, Region};
use crate::pipeline::EffectiveModel;
use crate::tensor::Tensor4;

#[derive(Debug, Clone)]
pub struct MacroState {
    pub time: f64,
    pub step: usize,
    /// Nodal species values, order p1, p2, n1, n2, b.
    pub species: [Vec<f64>; 5],
    /// Nodal displacement, three components per node.
    pub u: Vec<f64>,
    /// Cached effective stiffness per element (at the accepted b).
    pub elem_tensors: Vec<Tensor4>,
    /// Last coupling samples per node (N_delta for Model I, the localized
    /// positive-trace integral for Model II).
    pub n_delta: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub inner_iters: usize,
    pub contraction_ratio: f64,
    pub dt_used: f64,
    pub elasticity_iters: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TimeStepperPolicy {
    pub dt: f64,
    pub inner_tol: f64,
    pub max_inner: usize,
    pub reaction: ReactionTreatment,
}

/// Per-node mechanical input to the chemistry update.
enum CouplingData {
    /// Nonlocal ball values N_delta per node (Model I).
    ModelI(Vec<f64>),
    /// Model II: per-node positive-trace integrals over the cell matrix
    /// region. For the stress variant the stored value is per unit matrix
    /// Young's modulus and gets scaled by E(b) at evaluation time.
    ModelII {
        p_unit: Vec<f64>,
        scale_by_modulus: bool,
    },
}

pub struct MacroSystem {
    pub mesh: MacroMesh,
    pub model: EffectiveModel,
    pub config: SimConfig,
    scalar_map: DofMap,
    vector_map: DofMap,
    /// Lumped nodal volume.
    lumped: Vec<f64>,
    /// Reduced scalar stiffness triplets for the unit diffusivity tensor.
    k0_triplets: Vec<(usize, usize, f64)>,
    m_red: Vec<f64>,
    /// Lumped boundary measure per node and side.
    bdry_i: Vec<f64>,
    bdry_e: Vec<f64>,
    ball: BallQuadrature,
    /// Elements adjacent to each node (for strain recovery).
    node_elems: Vec<Vec<usize>>,
    /// Unit-modulus isotropic matrix tensor (nu_M), for stress-variant
    /// localization signals.
    matrix_unit: Tensor4,
}

impl MacroSystem {
    pub fn new(config: SimConfig, model: EffectiveModel) -> Result<Self, CellwallError> {
        config.validate()?;
        let mesh = build_macro_mesh(config.geometry.extents, config.geometry.macro_cells)?;
        let nn = mesh.nodes.len();
        let master = mesh.periodic_master_map();
        let scalar_map = DofMap::new(&master, &vec![true; nn]);
        let mut vmaster = vec![0usize; 3 * nn];
        for v in 0..nn {
            for c in 0..3 {
                vmaster[3 * v + c] = 3 * master[v] + c;
            }
        }
        let vector_map = DofMap::new(&vmaster, &vec![true; 3 * nn]);

        let vol8 = mesh.element_volume() / 8.0;
        let mut lumped = vec![0.0; nn];
        for h in &mesh.hexes {
            for &v in h {
                lumped[v] += vol8;
            }
        }
        let mut m_red = vec![0.0; scalar_map.n_reduced];
        for v in 0..nn {
            if let Some(r) = scalar_map.reduced_of[v] {
                m_red[r] += lumped[v];
            }
        }

        let sp = mesh.spacing();
        let k0 = hex::scalar_stiffness(sp, &model.d_unit);
        let mut k0_triplets = Vec::with_capacity(mesh.hexes.len() * 64);
        for h in &mesh.hexes {
            for a in 0..8 {
                let ra = scalar_map.reduced_of[h[a]].unwrap();
                for b in 0..8 {
                    let rb = scalar_map.reduced_of[h[b]].unwrap();
                    k0_triplets.push((ra, rb, k0[(a, b)]));
                }
            }
        }

        let mut bdry_i = vec![0.0; nn];
        let mut bdry_e = vec![0.0; nn];
        for f in &mesh.boundary_faces {
            let w = f.area / 4.0;
            match f.tag {
                FaceTag::GammaI => {
                    for &v in &f.nodes {
                        bdry_i[v] += w;
                    }
                }
                FaceTag::GammaE => {
                    for &v in &f.nodes {
                        bdry_e[v] += w;
                    }
                }
                _ => {}
            }
        }

        let centers = mesh.nodes.clone();
        let ball = BallQuadrature::build(
            &mesh,
            &centers,
            config.delta(),
            config.coupling.oversample,
        )?;

        let mut node_elems = vec![Vec::new(); nn];
        for (e, h) in mesh.hexes.iter().enumerate() {
            for &v in h {
                node_elems[v].push(e);
            }
        }

        let matrix_unit = isotropic_tensor(1.0, config.materials.nu_m)?;

        Ok(Self {
            mesh,
            model,
            config,
            scalar_map,
            vector_map,
            lumped,
            k0_triplets,
            m_red,
            bdry_i,
            bdry_e,
            ball,
            node_elems,
            matrix_unit,
        })
    }

    pub fn initial_state(&self) -> Result<MacroState, CellwallError> {
        let nn = self.mesh.nodes.len();
        let i = &self.config.initial;
        let species = [
            vec![i.p1; nn],
            vec![i.p2; nn],
            vec![i.n1; nn],
            vec![i.n2; nn],
            vec![i.b; nn],
        ];
        let elem_tensors = self.element_tensors(&species[4])?;
        Ok(MacroState {
            time: 0.0,
            step: 0,
            species,
            u: vec![0.0; 3 * nn],
            elem_tensors,
            n_delta: vec![0.0; nn],
        })
    }

    pub fn state_from_snapshot(&self, snap: &crate::io::Snapshot) -> Result<MacroState, CellwallError> {
        let nn = self.mesh.nodes.len();
        if snap.species[0].len() != nn {
            return Err(CellwallError::Config(format!(
                "snapshot has {} nodes, mesh has {nn}",
                snap.species[0].len()
            )));
        }
        let elem_tensors = self.element_tensors(&snap.species[4])?;
        Ok(MacroState {
            time: snap.time,
            step: snap.step,
            species: snap.species.clone(),
            u: snap.u.clone(),
            elem_tensors,
            n_delta: vec![0.0; nn],
        })
    }

    /// Effective stiffness per element from the mean nodal b.
    pub fn element_tensors(&self, b: &[f64]) -> Result<Vec<Tensor4>, CellwallError> {
        let mut out = Vec::with_capacity(self.mesh.hexes.len());
        for (e, h) in self.mesh.hexes.iter().enumerate() {
            let mut mean = 0.0;
            for &v in h {
                mean += b[v];
            }
            mean /= 8.0;
            let t = self.model.family.evaluate(mean.max(0.0))?;
            let min_eig = t.min_voigt_eigenvalue();
            if min_eig <= 0.0 {
                return Err(CellwallError::LossOfEllipticity { element: e, min_eig });
            }
            out.push(t);
        }
        Ok(out)
    }

    /// Quasi-static elasticity solve under the current stiffness field.
    pub fn solve_elasticity(
        &self,
        elem_tensors: &[Tensor4],
    ) -> Result<(Vec<f64>, usize), CellwallError> {
        let mesh = &self.mesh;
        let nn = mesh.nodes.len();
        let sp = mesh.spacing();
        let mut triplets = Vec::with_capacity(mesh.hexes.len() * 24 * 24);
        for (e, h) in mesh.hexes.iter().enumerate() {
            let ke = hex::vector_stiffness(sp, &elem_tensors[e]);
            let mut dofs = [0usize; 24];
            for a in 0..8 {
                for c in 0..3 {
                    dofs[3 * a + c] = 3 * h[a] + c;
                }
            }
            for p in 0..24 {
                for q in 0..24 {
                    triplets.push((dofs[p], dofs[q], ke[(p, q)]));
                }
            }
        }
        let a_full = CsrMatrix::from_triplets(3 * nn, 3 * nn, triplets);

        // Tractions: s * nu with s = -p_I on Gamma_I, f_e on Gamma_E, f_u on
        // Gamma_U.
        let mut f_full = vec![0.0; 3 * nn];
        let loads = &self.config.loads;
        for face in &mesh.boundary_faces {
            let s = match face.tag {
                FaceTag::GammaI => -loads.p_i,
                FaceTag::GammaE => loads.f_e,
                FaceTag::GammaU => loads.f_u,
                FaceTag::PeriodicX3 => continue,
            };
            if s == 0.0 {
                continue;
            }
            let w = face.area / 4.0;
            for &v in &face.nodes {
                for c in 0..3 {
                    f_full[3 * v + c] += s * face.normal[c] * w;
                }
            }
        }

        let (a_red, b_red) = apply_constraints(&a_full, &f_full, &self.vector_map);
        let n = self.vector_map.n_reduced;

        // Kernel: three translations and the rotation about x3.
        let center = [self.config.geometry.extents[0] / 2.0, self.config.geometry.extents[1] / 2.0];
        let mut kernel = vec![vec![0.0; n]; 4];
        for v in 0..nn {
            for c in 0..3 {
                let d = 3 * v + c;
                if let Some(r) = self.vector_map.reduced_of[d] {
                    if c < 3 {
                        kernel[c][r] = 1.0;
                    }
                    match c {
                        0 => kernel[3][r] = -(mesh.nodes[v][1] - center[1]),
                        1 => kernel[3][r] = mesh.nodes[v][0] - center[0],
                        _ => {}
                    }
                }
            }
        }

        // Functionals: zero mean displacement (3) and zero rotation moment.
        let mut funcs = vec![vec![0.0; n]; 4];
        for v in 0..nn {
            for c in 0..3 {
                if let Some(r) = self.vector_map.reduced_of[3 * v + c] {
                    funcs[c][r] += self.lumped[v];
                }
            }
        }
        // integral of (grad u)_12 - (grad u)_21 over the box.
        let detj = mesh.element_volume() / 8.0;
        for h in &mesh.hexes {
            for xi in hex::gauss_points() {
                let g = hex::shape_gradients(xi, sp);
                for a in 0..8 {
                    if let Some(r) = self.vector_map.reduced_of[3 * h[a]] {
                        funcs[3][r] += detj * g[a][1];
                    }
                    if let Some(r) = self.vector_map.reduced_of[3 * h[a] + 1] {
                        funcs[3][r] -= detj * g[a][0];
                    }
                }
            }
        }

        let cap = (5.0 * (n as f64).sqrt()).ceil() as usize + 200;
        let (mut x, iters) = solve_spd(
            &a_red,
            &b_red,
            &kernel,
            Precond::Sgs,
            self.config.stepping.solver_tol,
            cap,
        )?;
        enforce_functionals(&mut x, &kernel, &funcs, &[0.0; 4])?;
        Ok((self.vector_map.expand(&x), iters))
    }

    /// Constraint residuals of the displacement space: the three mean
    /// components relative to |u| and the rotation moment relative to
    /// |grad u| (all from lumped/Gauss quadrature).
    pub fn w_constraint_residuals(&self, u: &[f64]) -> [f64; 4] {
        let mesh = &self.mesh;
        let sp = mesh.spacing();
        let vol: f64 = self.lumped.iter().sum();
        let mut means = [0.0; 3];
        let mut unorm2 = 0.0;
        for (v, &m) in self.lumped.iter().enumerate() {
            for c in 0..3 {
                means[c] += m * u[3 * v + c];
                unorm2 += m * u[3 * v + c] * u[3 * v + c];
            }
        }
        let unorm = (unorm2 / vol).sqrt().max(f64::MIN_POSITIVE);
        let mut rot = 0.0;
        let mut gnorm2 = 0.0;
        let detj = mesh.element_volume() / 8.0;
        for h in &mesh.hexes {
            let mut ue = [0.0; 24];
            for (a, &v) in h.iter().enumerate() {
                for c in 0..3 {
                    ue[3 * a + c] = u[3 * v + c];
                }
            }
            for xi in hex::gauss_points() {
                let g = hex::shape_gradients(xi, sp);
                let mut grad = Matrix3::<f64>::zeros();
                for a in 0..8 {
                    for i in 0..3 {
                        for j in 0..3 {
                            grad[(i, j)] += ue[3 * a + i] * g[a][j];
                        }
                    }
                }
                rot += detj * (grad[(0, 1)] - grad[(1, 0)]);
                gnorm2 += detj * grad.norm_squared();
            }
        }
        let gnorm = (gnorm2 / vol).sqrt().max(f64::MIN_POSITIVE);
        [
            means[0].abs() / (vol * unorm),
            means[1].abs() / (vol * unorm),
            means[2].abs() / (vol * unorm),
            rot.abs() / (vol * gnorm),
        ]
    }

    pub fn element_strain(&self, u: &[f64], e: usize) -> Matrix3<f64> {
        let sp = self.mesh.spacing();
        let mut ue = [0.0; 24];
        for (a, &v) in self.mesh.hexes[e].iter().enumerate() {
            for c in 0..3 {
                ue[3 * a + c] = u[3 * v + c];
            }
        }
        hex::strain_at([0.0, 0.0, 0.0], sp, &ue)
    }

    pub fn nodal_strains(&self, u: &[f64]) -> Vec<Matrix3<f64>> {
        let centroid: Vec<Matrix3<f64>> = (0..self.mesh.hexes.len())
            .map(|e| self.element_strain(u, e))
            .collect();
        self.node_elems
            .iter()
            .map(|elems| {
                let mut m = Matrix3::<f64>::zeros();
                for &e in elems {
                    m += centroid[e];
                }
                m / elems.len() as f64
            })
            .collect()
    }

    pub fn strain_norm(&self, u: &[f64]) -> f64 {
        let vol = self.mesh.element_volume();
        (0..self.mesh.hexes.len())
            .map(|e| vol * self.element_strain(u, e).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn integral(&self, field: &[f64]) -> f64 {
        self.lumped.iter().zip(field).map(|(m, v)| m * v).sum()
    }

    pub fn surface_integral_gamma_e(&self, field: &[f64]) -> f64 {
        self.bdry_e.iter().zip(field).map(|(m, v)| m * v).sum()
    }

    fn coupling_data(&self, state_u: &[f64], elem_tensors: &[Tensor4]) -> CouplingData {
        let cfg = &self.config.coupling;
        match cfg.model {
            Model::I => {
                let values = if let Some(frozen) = cfg.frozen_coupling {
                    vec![frozen; self.mesh.nodes.len()]
                } else {
                    n_delta_eff(
                        &self.mesh,
                        &self.ball,
                        state_u,
                        elem_tensors,
                        cfg.variant,
                        cfg.normalize_ball_average,
                    )
                };
                CouplingData::ModelI(values)
            }
            Model::II => {
                if let Some(frozen) = cfg.frozen_coupling {
                    let v = self.model.theta_m * frozen;
                    return CouplingData::ModelII {
                        p_unit: vec![v; self.mesh.nodes.len()],
                        scale_by_modulus: false,
                    };
                }
                let strains = self.nodal_strains(state_u);
                let loc = self
                    .model
                    .localization
                    .as_ref()
                    .expect("Model II requires a localization field");
                let eps6: Vec<_> = strains
                    .iter()
                    .map(crate::tensor::strain_to_voigt)
                    .collect();
                let p_unit: Vec<f64> = eps6
                    .iter()
                    .map(|eps| {
                        let mut acc = 0.0;
                        for t in 0..loc.id_plus_s.len() {
                            if loc.region[t] != Region::Matrix {
                                continue;
                            }
                            let micro = loc.id_plus_s[t] * eps;
                            let tr = match cfg.variant {
                                CouplingVariant::Stress => {
                                    // unit-modulus matrix stress trace
                                    let sv = self.matrix_unit.voigt() * micro;
                                    sv[0] + sv[1] + sv[2]
                                }
                                CouplingVariant::Strain => micro[0] + micro[1] + micro[2],
                            };
                            acc += loc.areas[t] * tr.max(0.0);
                        }
                        acc
                    })
                    .collect();
                CouplingData::ModelII {
                    p_unit,
                    scale_by_modulus: cfg.variant == CouplingVariant::Stress,
                }
            }
        }
    }

    /// Pointwise reaction rates d/dt of the five species at one node.
    fn node_rates(
        &self,
        s: [f64; 5],
        coupling: &CouplingData,
        node: usize,
    ) -> Result<[f64; 5], CellwallError> {
        let k = &self.config.kinetics;
        match coupling {
            CouplingData::ModelI(nv) => {
                let nval = nv[node].max(0.0);
                let (fp1, _) = reaction_p(s[0], s[1], k)?;
                let (dn1, dn2) = reaction_n((s[0], s[1]), (s[2], s[3]), s[4], nval, k)?;
                let db = reaction_b_model_i((s[2], s[3]), s[4], nval, k)?;
                Ok([-fp1, 0.0, dn1, dn2, db])
            }
            CouplingData::ModelII {
                p_unit,
                scale_by_modulus,
            } => {
                let theta = self.model.theta_m;
                let b = s[4].max(0.0);
                let p_int = if *scale_by_modulus {
                    self.model.family.law.evaluate(b)? * p_unit[node]
                } else {
                    p_unit[node]
                };
                let (fp1, _) = reaction_p(s[0], s[1], k)?;
                let n1 = s[2].max(0.0);
                let n2 = s[3].max(0.0);
                let r_ee = k.r_ee(s[0].max(0.0), s[1].max(0.0));
                let r_dc = k.r_dc(n1, n2);
                let r_b = k.r_b(b);
                Ok([
                    -theta * fp1,
                    0.0,
                    theta * (r_ee - 2.0 * r_dc - k.r_d * n1) + 2.0 * r_b * p_int,
                    theta * (-r_dc) + r_b * p_int,
                    theta * r_dc - r_b * p_int,
                ])
            }
        }
    }

    /// Reaction substep over dt for all nodes.
    fn react(
        &self,
        species: &[Vec<f64>; 5],
        dt: f64,
        coupling: &CouplingData,
        treatment: ReactionTreatment,
    ) -> Result<[Vec<f64>; 5], CellwallError> {
        let nn = self.mesh.nodes.len();
        let mut out = species.clone();
        for v in 0..nn {
            let s0 = [
                species[0][v],
                species[1][v],
                species[2][v],
                species[3][v],
                species[4][v],
            ];
            let s_new = match treatment {
                ReactionTreatment::Explicit => {
                    // Heun: second-order, conserves every linear invariant of
                    // the rate functions exactly.
                    let r0 = self.node_rates(s0, coupling, v)?;
                    let mut s1 = s0;
                    for i in 0..5 {
                        s1[i] += dt * r0[i];
                    }
                    let r1 = self.node_rates(s1, coupling, v)?;
                    let mut s = s0;
                    for i in 0..5 {
                        s[i] += 0.5 * dt * (r0[i] + r1[i]);
                    }
                    s
                }
                ReactionTreatment::SemiImplicit => self.semi_implicit_node(s0, dt, coupling, v)?,
            };
            for i in 0..5 {
                out[i][v] = s_new[i];
            }
        }
        Ok(out)
    }

    /// Closed-form implicit Euler for b (affine in b at frozen n and
    /// coupling), forward Euler for the rest; the n release terms use the
    /// updated b so that n1 + 2b is conserved exactly.
    fn semi_implicit_node(
        &self,
        s0: [f64; 5],
        dt: f64,
        coupling: &CouplingData,
        node: usize,
    ) -> Result<[f64; 5], CellwallError> {
        let k = &self.config.kinetics;
        let p1 = s0[0].max(0.0);
        let p2 = s0[1].max(0.0);
        let n1 = s0[2].max(0.0);
        let n2 = s0[3].max(0.0);
        let b0 = s0[4].max(0.0);
        let r_ee = k.r_ee(p1, p2);
        let r_dc = k.r_dc(n1, n2);
        match coupling {
            CouplingData::ModelI(nv) => {
                let nval = nv[node].max(0.0);
                let b1 = (b0 + dt * r_dc) / (1.0 + dt * k.k_b * nval);
                let release = k.r_b(b1) * nval;
                let db = r_dc - release;
                Ok([
                    s0[0] - dt * r_ee,
                    s0[1],
                    s0[2] + dt * (r_ee - 2.0 * r_dc - k.r_d * n1 + 2.0 * release),
                    s0[3] + dt * (-r_dc + release),
                    s0[4] + dt * db,
                ])
            }
            CouplingData::ModelII {
                p_unit,
                scale_by_modulus,
            } => {
                let theta = self.model.theta_m;
                // Coefficient of b in the breakage term at the frozen state.
                let coeff = if *scale_by_modulus {
                    k.k_b * self.model.family.law.evaluate(b0)? * p_unit[node]
                } else {
                    k.k_b * p_unit[node]
                };
                let b1 = (b0 + dt * theta * r_dc) / (1.0 + dt * coeff);
                let breakage = coeff * b1;
                Ok([
                    s0[0] - dt * theta * r_ee,
                    s0[1],
                    s0[2] + dt * (theta * (r_ee - 2.0 * r_dc - k.r_d * n1) + 2.0 * breakage),
                    s0[3] + dt * (theta * (-r_dc) + breakage),
                    s0[4] + dt * (theta * r_dc - breakage),
                ])
            }
        }
    }

    /// Implicit diffusion substep with Robin boundary terms; index 4 (b)
    /// only diffuses in Model II.
    fn diffuse(
        &self,
        species: &[Vec<f64>; 5],
        dt: f64,
        coupling: &CouplingData,
    ) -> Result<[Vec<f64>; 5], CellwallError> {
        let nn = self.mesh.nodes.len();
        let theta_inv = 1.0 / self.model.theta_m;
        let d = &self.config.diffusion;
        let fx = &self.config.fluxes;
        let model_ii = self.config.coupling.model == Model::II;
        let diffusivities = [d.d_p1, d.d_p2, d.d_n1, d.d_n2, d.d_b];
        let total_pe = self.integral(&species[0]);
        if total_pe < 0.0 {
            return Err(CellwallError::InvalidChemistry(format!(
                "total pectin integral is negative: {total_pe}"
            )));
        }
        // Gating value at boundary nodes (calcium channels).
        let gating: Vec<f64> = match coupling {
            CouplingData::ModelI(nv) => nv.iter().map(|v| v.max(0.0)).collect(),
            CouplingData::ModelII { p_unit, .. } => p_unit.iter().map(|v| v.max(0.0)).collect(),
        };

        let mut out = species.clone();
        for sp_idx in 0..5 {
            if sp_idx == 4 && !model_ii {
                continue; // cross-links do not diffuse in Model I
            }
            // Robin coefficients (on c_new) and explicit flux data per node.
            let mut robin = vec![0.0; nn]; // multiplies c on the boundary
            let mut g = vec![0.0; nn]; // state-independent inward flux
            for v in 0..nn {
                let wi = self.bdry_i[v];
                let we = self.bdry_e[v];
                if wi > 0.0 {
                    match sp_idx {
                        0 => g[v] += wi * fx.beta_e / (1.0 + fx.zeta_e * total_pe),
                        1 => {
                            g[v] += wi * fx.beta_e_cap * total_pe;
                            robin[v] += wi * fx.zeta_e_cap;
                        }
                        3 => {
                            g[v] += wi * gating[v] * fx.gamma_c1;
                            robin[v] += wi * gating[v] * fx.gamma_c2;
                        }
                        _ => {}
                    }
                }
                if we > 0.0 {
                    match sp_idx {
                        0 => robin[v] += we * (fx.gamma_e + fx.gamma_p),
                        1 => robin[v] += we * fx.gamma_e_cap,
                        2 => robin[v] += we * fx.gamma_d,
                        3 => {
                            g[v] += we * fx.zeta_c1;
                            robin[v] += we * fx.zeta_c2;
                        }
                        4 => robin[v] += we * fx.gamma_b,
                        _ => {}
                    }
                }
            }
            // Reduced system: (M + dt (d K0 + theta^-1 Robin)) c = M c_old + dt theta^-1 g
            let n = self.scalar_map.n_reduced;
            let mut triplets: Vec<(usize, usize, f64)> = self
                .k0_triplets
                .iter()
                .map(|&(r, c, v)| (r, c, dt * diffusivities[sp_idx] * v))
                .collect();
            for r in 0..n {
                triplets.push((r, r, self.m_red[r]));
            }
            let mut rhs = vec![0.0; n];
            for v in 0..nn {
                if let Some(r) = self.scalar_map.reduced_of[v] {
                    rhs[r] += self.lumped[v] * species[sp_idx][v] + dt * theta_inv * g[v];
                    if robin[v] != 0.0 {
                        triplets.push((r, r, dt * theta_inv * robin[v]));
                    }
                }
            }
            let a = CsrMatrix::from_triplets(n, n, triplets);
            let cap = (5.0 * (n as f64).sqrt()).ceil() as usize + 200;
            let (x, _) = solve_spd(
                &a,
                &rhs,
                &[],
                Precond::Sgs,
                self.config.stepping.solver_tol,
                cap,
            )?;
            out[sp_idx] = self.scalar_map.expand(&x);
        }
        Ok(out)
    }

    fn check_species(&self, species: &[Vec<f64>; 5]) -> Result<(), CellwallError> {
        let tol = self.config.kinetics.clamp_tol;
        let cap = self.config.stepping.species_cap;
        for (i, field) in species.iter().enumerate() {
            for &v in field {
                if v < -tol {
                    return Err(CellwallError::NegativeSpecies {
                        species: crate::chemistry::SPECIES_NAMES[i],
                        value: v,
                    });
                }
                if v > cap {
                    return Err(CellwallError::InvalidChemistry(format!(
                        "species {} exceeded the boundedness cap: {v} > {cap}",
                        crate::chemistry::SPECIES_NAMES[i]
                    )));
                }
            }
        }
        Ok(())
    }

    /// One time step at fixed dt: inner fixed point over
    /// b -> stiffness -> u -> coupling -> chemistry -> b.
    pub fn step(
        &self,
        state: &MacroState,
        policy: &TimeStepperPolicy,
    ) -> Result<(MacroState, StepStats), CellwallError> {
        let dt = policy.dt;
        let frozen = self.config.coupling.frozen_coupling.is_some();
        let mut b_iter = state.species[4].clone();
        let mut prev_change = f64::INFINITY;
        for k in 1..=policy.max_inner {
            let (elem_tensors, u, el_iters) = if frozen && self.config.coupling.model == Model::I
            {
                // Mechanics is bypassed entirely when the coupling value is
                // frozen for Model I.
                (state.elem_tensors.clone(), state.u.clone(), 0)
            } else {
                let tensors = self.element_tensors(&b_iter)?;
                let (u, its) = if frozen {
                    (state.u.clone(), 0)
                } else {
                    self.solve_elasticity(&tensors)?
                };
                (tensors, u, its)
            };
            let coupling = self.coupling_data(&u, &elem_tensors);
            let reacted = self.react(&state.species, dt, &coupling, policy.reaction)?;
            let diffused = self.diffuse(&reacted, dt, &coupling)?;
            self.check_species(&diffused)?;

            let mut change: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for v in 0..b_iter.len() {
                change = change.max((diffused[4][v] - b_iter[v]).abs());
                scale = scale.max(diffused[4][v].abs());
            }
            let rel = change / scale.max(1e-30);
            let ratio = if prev_change.is_finite() && prev_change > 0.0 {
                change / prev_change
            } else {
                0.0
            };
            b_iter = diffused[4].clone();
            let n_delta = match &coupling {
                CouplingData::ModelI(v) => v.clone(),
                CouplingData::ModelII { p_unit, .. } => p_unit.clone(),
            };
            let next = MacroState {
                time: state.time + dt,
                step: state.step + 1,
                species: diffused,
                u,
                elem_tensors,
                n_delta,
            };
            if rel <= policy.inner_tol {
                return Ok((
                    next,
                    StepStats {
                        inner_iters: k,
                        contraction_ratio: ratio,
                        dt_used: dt,
                        elasticity_iters: el_iters,
                    },
                ));
            }
            prev_change = change;
        }
        Err(CellwallError::FixedPointFailure {
            last_change: prev_change,
            dt_floor: dt,
        })
    }

    /// Steps with automatic dt halving on inner-loop failure.
    pub fn step_adaptive(
        &self,
        state: &MacroState,
        policy: &TimeStepperPolicy,
    ) -> Result<(MacroState, StepStats), CellwallError> {
        let mut dt = policy.dt;
        for _ in 0..=self.config.stepping.max_halvings {
            let attempt = TimeStepperPolicy { dt, ..*policy };
            match self.step(state, &attempt) {
                Ok(r) => return Ok(r),
                Err(CellwallError::FixedPointFailure { .. }) => {
                    dt *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        Err(CellwallError::FixedPointFailure {
            last_change: f64::NAN,
            dt_floor: dt,
        })
    }

    pub fn species_stats(&self, species: &[Vec<f64>; 5]) -> [[f64; 3]; 5] {
        let vol: f64 = self.lumped.iter().sum();
        let mut out = [[0.0; 3]; 5];
        for (i, field) in species.iter().enumerate() {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            let mut mean = 0.0;
            for (v, &x) in field.iter().enumerate() {
                min = min.min(x);
                max = max.max(x);
                mean += self.lumped[v] * x;
            }
            out[i] = [min, mean / vol, max];
        }
        out
    }
}

#[derive(Debug)]
pub struct RunResult {
    pub trajectory: Vec<TrajectoryRow>,
    pub final_state: MacroState,
    pub dt_final: f64,
}

/// Runs the simulation from the given state to t_end, writing the
/// trajectory, snapshots, and on failure a machine-readable record.
pub fn run_simulation(
    system: &MacroSystem,
    start: MacroState,
    out_dir: Option<&std::path::Path>,
) -> Result<RunResult, CellwallError> {
    let cfg = &system.config.stepping;
    let mut policy = TimeStepperPolicy {
        dt: cfg.dt,
        inner_tol: cfg.inner_tol,
        max_inner: cfg.max_inner,
        reaction: cfg.reaction,
    };
    let mut state = start;
    let mut rows = Vec::new();
    let snapshot_every = system.config.outputs.snapshot_every;
    while state.time < cfg.t_end - 1e-12 * cfg.t_end {
        let remaining = cfg.t_end - state.time;
        let dt = policy.dt.min(remaining);
        let attempt = TimeStepperPolicy { dt, ..policy };
        let result = system.step_adaptive(&state, &attempt);
        let (next, stats) = match result {
            Ok(r) => r,
            Err(e) => {
                if let Some(dir) = out_dir {
                    let _ = crate::io::write_trajectory(&rows, &dir.join("trajectory.csv"));
                    let _ = crate::io::write_failure_record(
                        &dir.join("failure.toml"),
                        state.step,
                        state.time,
                        &e,
                    );
                }
                return Err(e);
            }
        };
        // Keep a halved dt for the rest of the run.
        if stats.dt_used < dt {
            policy.dt = stats.dt_used;
        }
        state = next;
        rows.push(TrajectoryRow {
            time: state.time,
            species_stats: system.species_stats(&state.species),
            strain_norm: system.strain_norm(&state.u),
            inner_iters: stats.inner_iters,
            contraction_ratio: stats.contraction_ratio,
        });
        if let Some(dir) = out_dir {
            if snapshot_every > 0 && state.step % snapshot_every == 0 {
                let snap = crate::io::Snapshot {
                    time: state.time,
                    step: state.step,
                    dt: policy.dt,
                    species: state.species.clone(),
                    u: state.u.clone(),
                };
                crate::io::write_snapshot(&snap, &dir.join(format!("snap_{:06}.txt", state.step)))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        crate::io::write_trajectory(&rows, &dir.join("trajectory.csv"))?;
    }
    Ok(RunResult {
        dt_final: policy.dt,
        final_state: state,
        trajectory: rows,
    })
}
