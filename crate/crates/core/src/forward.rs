//! Finite element forward solver for the electrode model
//!
//! ```text
//! ∇·(σ∇u) = 0 in Ω,   ν·σ∇u = ζ(U − u) on ∂Ω,   ∫_{E_m} ν·σ∇u dS = I_m,
//! ```
//!
//! through the symmetric bilinear form
//! `B((w,W),(v,V)) = ∫_Ω σ∇w·∇v dx + ∫_{∂Ω} ζ (W − w)(V − v) dS`.
//!
//! The additive constant is removed by expanding the electrode potentials in
//! an (M−1)-dimensional basis; the resulting system is symmetric positive
//! definite and is factorized once per configuration.

use std::io::Write;
use std::sync::{Arc, Mutex};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::contact::ConductanceProfile;
use crate::error::{Error, Result};
use crate::fem::{edge_basis, edge_basis_dt, gauss_legendre, triangle_rule, TriangleGeometry};
use crate::mesh::{ElementOrder, Mesh, Point};
use crate::phantom::Phantom;

/// Isotropic real conductivity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConductivityField {
    Constant(f64),
    /// Values at the mesh vertices, linear on each triangle.
    NodalP1(Vec<f64>),
    /// Analytic field sampled at quadrature points.
    Phantom(Phantom),
}

impl ConductivityField {
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        match self {
            ConductivityField::Constant(s) if !(s.is_finite() && *s > 0.0) => Err(
                Error::Parameter(format!("conductivity must be positive, got {s}")),
            ),
            ConductivityField::Constant(_) => Ok(()),
            ConductivityField::NodalP1(v) => {
                if v.len() != mesh.nodes().len() {
                    return Err(Error::Contract(format!(
                        "nodal conductivity has {} values for {} mesh nodes",
                        v.len(),
                        mesh.nodes().len()
                    )));
                }
                match v.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
                    Some(i) => Err(Error::Parameter(format!(
                        "conductivity at node {i} must be positive, got {}",
                        v[i]
                    ))),
                    None => Ok(()),
                }
            }
            ConductivityField::Phantom(p) => p.validate(),
        }
    }

    /// Value inside triangle `t` at barycentric point `bary`.
    pub fn at_triangle(&self, mesh: &Mesh, t: usize, geo: &TriangleGeometry, bary: [f64; 3]) -> f64 {
        match self {
            ConductivityField::Constant(s) => *s,
            ConductivityField::NodalP1(v) => {
                let [a, b, c] = mesh.triangles()[t];
                bary[0] * v[a] + bary[1] * v[b] + bary[2] * v[c]
            }
            ConductivityField::Phantom(p) => p.eval(geo.point(bary)),
        }
    }

    /// Trace on boundary edge `e` at local parameter `t`.
    pub fn on_edge(&self, mesh: &Mesh, e: usize, t: f64) -> f64 {
        match self {
            ConductivityField::Constant(s) => *s,
            ConductivityField::NodalP1(v) => {
                let [a, b] = mesh.boundary_edges()[e].nodes;
                (1.0 - t) * v[a] + t * v[b]
            }
            ConductivityField::Phantom(p) => {
                let [x, y] = mesh.edge_points(e);
                p.eval([x[0] + t * (y[0] - x[0]), x[1] + t * (y[1] - x[1])])
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ConductivityField::Constant(_))
    }

    /// Same field multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            ConductivityField::Constant(s) => ConductivityField::Constant(c * s),
            ConductivityField::NodalP1(v) => {
                ConductivityField::NodalP1(v.iter().map(|s| c * s).collect())
            }
            ConductivityField::Phantom(p) => {
                let mut p = p.clone();
                p.background *= c;
                p.bumps.iter_mut().for_each(|b| b.amplitude *= c);
                p.disks.iter_mut().for_each(|d| d.value *= c);
                ConductivityField::Phantom(p)
            }
        }
    }
}

/// Net electrode currents; components sum to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CurrentPattern(Vec<f64>);

impl CurrentPattern {
    pub fn new(currents: Vec<f64>) -> Result<Self> {
        let sum: f64 = currents.iter().sum();
        let scale = currents.iter().map(|c| c.abs()).fold(0.0, f64::max);
        if !sum.is_finite() || sum.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Contract("current pattern must be zero-mean".into()));
        }
        Ok(Self(currents))
    }

    pub fn zeros(electrodes: usize) -> Self {
        Self(vec![0.0; electrodes])
    }

    /// `e_to − e_from` (0-based electrode indices).
    pub fn pair(electrodes: usize, from: usize, to: usize) -> Self {
        let mut v = vec![0.0; electrodes];
        v[to] += 1.0;
        v[from] -= 1.0;
        Self(v)
    }

    /// Basis pattern `e_m − e_M` for `m < M − 1` (0-based).
    pub fn basis(electrodes: usize, m: usize) -> Self {
        Self::pair(electrodes, electrodes - 1, m)
    }

    /// The patterns `e_M − e_m`, `m = 1..M−1`, used for model comparisons.
    pub fn reference_set(electrodes: usize) -> Vec<Self> {
        (0..electrodes - 1)
            .map(|m| Self::pair(electrodes, m, electrodes - 1))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|x| c * x).collect())
    }
}

impl TryFrom<Vec<f64>> for CurrentPattern {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CurrentPattern> for Vec<f64> {
    fn from(p: CurrentPattern) -> Self {
        p.0
    }
}

/// How the additive constant of the potential pair is fixed in the linear
/// system. Solutions are always returned with zero-mean electrode potentials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Grounding {
    /// Electrode potentials in the basis `{e_m − e_M}`.
    #[default]
    ZeroMean,
    /// `U_M = 0`.
    LastElectrode,
}

impl Grounding {
    /// `M × (M−1)` matrix mapping reduced unknowns to electrode potentials.
    fn basis(self, electrodes: usize) -> Vec<Vec<f64>> {
        (0..electrodes)
            .map(|m| {
                (0..electrodes - 1)
                    .map(|a| match self {
                        _ if m == a => 1.0,
                        Grounding::ZeroMean if m == electrodes - 1 => -1.0,
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect()
    }
}

/// Lower triangle of the grounded system matrix.
pub fn assemble_matrix(
    mesh: &Mesh,
    sigma: &ConductivityField,
    profile: &ConductanceProfile,
    grounding: Grounding,
) -> Result<SparseColMat<usize, f64>> {
    sigma.validate(mesh)?;
    let electrodes = mesh.electrode_count();
    if profile.layout().len() != electrodes {
        return Err(Error::Contract(format!(
            "profile has {} electrodes, mesh has {electrodes}",
            profile.layout().len()
        )));
    }
    let order = mesh.order();
    let nl = order.local_dofs();
    let ndof = mesh.dof_count();
    let mut triplets: Vec<Triplet<usize, usize, f64>> =
        Vec::with_capacity(mesh.triangles().len() * nl * (nl + 1) / 2 + 8 * mesh.boundary_edges().len());

    let rule = triangle_rule(match order {
        ElementOrder::Linear => 2,
        ElementOrder::Quadratic => 4,
    });
    let mut grads = [[0.0; 2]; 6];
    let mut local = [[0.0; 6]; 6];
    for t in 0..mesh.triangles().len() {
        let geo = TriangleGeometry::new(mesh.triangle_points(t));
        if !(geo.area > 0.0) {
            return Err(Error::Assembly(format!(
                "triangle {t} is degenerate or inverted (area {})",
                geo.area
            )));
        }
        for row in local.iter_mut() {
            row.fill(0.0);
        }
        match order {
            ElementOrder::Linear => {
                let mean: f64 = match sigma {
                    ConductivityField::Constant(s) => *s,
                    _ => rule
                        .iter()
                        .map(|&(b, w)| w * sigma.at_triangle(mesh, t, &geo, b))
                        .sum(),
                };
                let g = &geo.grad_bary;
                for i in 0..3 {
                    for j in 0..=i {
                        local[i][j] = geo.area * mean * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                    }
                }
            }
            ElementOrder::Quadratic => {
                for &(b, w) in rule {
                    let s = sigma.at_triangle(mesh, t, &geo, b);
                    geo.basis_gradients(order, b, &mut grads);
                    let f = w * geo.area * s;
                    for i in 0..6 {
                        for j in 0..=i {
                            local[i][j] += f * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                        }
                    }
                }
            }
        }
        let dofs = mesh.triangle_dofs(t);
        for i in 0..nl {
            for j in 0..=i {
                let (r, c) = (dofs[i].max(dofs[j]), dofs[i].min(dofs[j]));
                triplets.push(Triplet::new(r, c, local[i][j]));
            }
        }
    }

    // Boundary terms ∫ ζ (W − w)(V − v) dS.
    let mut coupling: Vec<(usize, usize, f64)> = Vec::new();
    let mut contact = vec![0.0; electrodes];
    let ne = order.edge_dofs();
    let gauss = gauss_legendre(match order {
        ElementOrder::Linear => 2,
        ElementOrder::Quadratic => 3,
    });
    let mut phi = [0.0; 3];
    for (e, edge) in mesh.boundary_edges().iter().enumerate() {
        let [s0, s1] = edge.arc;
        let pieces = profile.pieces_in(s0, s1);
        if pieces.is_empty() {
            continue;
        }
        let [p, q] = mesh.edge_points(e);
        let jac = (q[0] - p[0]).hypot(q[1] - p[1]) / (s1 - s0);
        let dofs = mesh.edge_dofs(e);
        for piece in &pieces {
            let mut mass = [[0.0; 3]; 3];
            let mut load = [0.0; 3];
            let len = piece.arc[1] - piece.arc[0];
            for &(x, w) in gauss {
                let s = piece.arc[0] + x * len;
                let weight = w * len * jac * piece.value_at(s);
                edge_basis(order, (s - s0) / (s1 - s0), &mut phi);
                for i in 0..ne {
                    load[i] += weight * phi[i];
                    for j in 0..=i {
                        mass[i][j] += weight * phi[i] * phi[j];
                    }
                }
                contact[piece.electrode] += weight;
            }
            for i in 0..ne {
                coupling.push((dofs[i], piece.electrode, load[i]));
                for j in 0..=i {
                    let (r, c) = (dofs[i].max(dofs[j]), dofs[i].min(dofs[j]));
                    triplets.push(Triplet::new(r, c, mass[i][j]));
                }
            }
        }
    }
    if let Some(m) = contact.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Singular(format!(
            "contact conductance vanishes on electrode {}",
            m + 1
        )));
    }

    let basis = grounding.basis(electrodes);
    for (dof, m, val) in coupling {
        for (a, &pm) in basis[m].iter().enumerate() {
            if pm != 0.0 {
                triplets.push(Triplet::new(ndof + a, dof, -val * pm));
            }
        }
    }
    for a in 0..electrodes - 1 {
        for b in 0..=a {
            let v: f64 = (0..electrodes)
                .map(|m| contact[m] * basis[m][a] * basis[m][b])
                .sum();
            if v != 0.0 {
                triplets.push(Triplet::new(ndof + a, ndof + b, v));
            }
        }
    }
    let n = ndof + electrodes - 1;
    SparseColMat::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::Assembly(format!("sparse matrix construction: {e:?}")))
}

/// Last symbolic factorization computed on a mesh, reused while the matrix
/// pattern stays the same.
#[derive(Default)]
pub(crate) struct SymbolicCache(Mutex<Option<CachedSymbolic>>);

struct CachedSymbolic {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    symbolic: SymbolicLlt<usize>,
}

impl Clone for SymbolicCache {
    fn clone(&self) -> Self {
        Self::default()
    }
}

impl std::fmt::Debug for SymbolicCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SymbolicCache")
    }
}

impl SymbolicCache {
    fn factorize(&self, matrix: &SparseColMat<usize, f64>) -> Result<Llt<usize, f64>> {
        let pattern = matrix.symbolic();
        let mut slot = self.0.lock().unwrap_or_else(|e| e.into_inner());
        let reuse = slot
            .as_ref()
            .filter(|c| c.col_ptr == pattern.col_ptr() && c.row_idx == pattern.row_idx())
            .map(|c| c.symbolic.clone());
        let symbolic = match reuse {
            Some(s) => s,
            None => {
                let s = SymbolicLlt::try_new(pattern, Side::Lower)
                    .map_err(|e| Error::Assembly(format!("symbolic factorization: {e:?}")))?;
                *slot = Some(CachedSymbolic {
                    col_ptr: pattern.col_ptr().to_vec(),
                    row_idx: pattern.row_idx().to_vec(),
                    symbolic: s.clone(),
                });
                s
            }
        };
        drop(slot);
        Llt::try_new_with_symbolic(symbolic, matrix.as_ref(), Side::Lower)
            .map_err(|e| Error::Singular(format!("Cholesky factorization failed: {e:?}")))
    }
}

/// Assembled and factorized system for one (mesh, σ, ζ) configuration.
pub struct ForwardSystem {
    mesh: Arc<Mesh>,
    sigma: ConductivityField,
    profile: ConductanceProfile,
    grounding: Grounding,
    basis: Vec<Vec<f64>>,
    llt: Llt<usize, f64>,
}

impl ForwardSystem {
    pub fn new(mesh: Arc<Mesh>, sigma: &ConductivityField, profile: &ConductanceProfile) -> Result<Self> {
        Self::with_grounding(mesh, sigma, profile, Grounding::ZeroMean)
    }

    pub fn with_grounding(
        mesh: Arc<Mesh>,
        sigma: &ConductivityField,
        profile: &ConductanceProfile,
        grounding: Grounding,
    ) -> Result<Self> {
        let matrix = assemble_matrix(&mesh, sigma, profile, grounding)?;
        let llt = mesh.symbolic.factorize(&matrix)?;
        Ok(Self {
            basis: grounding.basis(mesh.electrode_count()),
            mesh,
            sigma: sigma.clone(),
            profile: profile.clone(),
            grounding,
            llt,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn sigma(&self) -> &ConductivityField {
        &self.sigma
    }

    pub fn profile(&self) -> &ConductanceProfile {
        &self.profile
    }

    pub fn electrode_count(&self) -> usize {
        self.mesh.electrode_count()
    }

    pub fn solve(&self, pattern: &CurrentPattern) -> Result<ForwardSolution> {
        Ok(self
            .solve_many(std::slice::from_ref(pattern))?
            .pop()
            .expect("one solution per pattern"))
    }

    /// Solves all patterns with one blocked triangular solve.
    pub fn solve_many(&self, patterns: &[CurrentPattern]) -> Result<Vec<ForwardSolution>> {
        let electrodes = self.electrode_count();
        let ndof = self.mesh.dof_count();
        let n = ndof + electrodes - 1;
        if let Some(p) = patterns.iter().find(|p| p.len() != electrodes) {
            return Err(Error::Contract(format!(
                "current pattern has {} entries for {electrodes} electrodes",
                p.len()
            )));
        }
        let mut rhs = Mat::<f64>::zeros(n, patterns.len());
        for (k, p) in patterns.iter().enumerate() {
            for a in 0..electrodes - 1 {
                rhs[(ndof + a, k)] = (0..electrodes)
                    .map(|m| p.as_slice()[m] * self.basis[m][a])
                    .sum();
            }
        }
        self.llt.solve_in_place(rhs.as_mut());
        let mut out = Vec::with_capacity(patterns.len());
        for (k, p) in patterns.iter().enumerate() {
            let col = rhs.col(k);
            if (0..n).any(|i| !col[i].is_finite()) {
                return Err(Error::Numerical("non-finite forward solution".into()));
            }
            let mut potentials: Vec<f64> = (0..electrodes)
                .map(|m| (0..electrodes - 1).map(|a| self.basis[m][a] * col[ndof + a]).sum())
                .collect();
            let mean = potentials.iter().sum::<f64>() / electrodes as f64;
            potentials.iter_mut().for_each(|v| *v -= mean);
            let u = (0..ndof).map(|i| col[i] - mean).collect();
            out.push(ForwardSolution {
                mesh: Arc::clone(&self.mesh),
                u,
                electrode_potentials: potentials,
                pattern: p.clone(),
                grounding: self.grounding,
            });
        }
        Ok(out)
    }

    /// Solutions for the basis patterns `e_m − e_M`, `m = 1..M−1`.
    pub fn solve_basis(&self) -> Result<Vec<ForwardSolution>> {
        let electrodes = self.electrode_count();
        let patterns: Vec<_> = (0..electrodes - 1)
            .map(|m| CurrentPattern::basis(electrodes, m))
            .collect();
        self.solve_many(&patterns)
    }

    pub fn measurement_map(&self) -> Result<MeasurementMap> {
        MeasurementMap::from_basis_solutions(&self.solve_basis()?)
    }
}

/// Discrete `(u, U)` for one current pattern, normalized so that `Σ U_m = 0`.
#[derive(Clone, Debug)]
pub struct ForwardSolution {
    mesh: Arc<Mesh>,
    /// Nodal (P1) or dof (P2) coefficients.
    pub u: Vec<f64>,
    pub electrode_potentials: Vec<f64>,
    pub pattern: CurrentPattern,
    pub grounding: Grounding,
}

impl ForwardSolution {
    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    /// Trace of `u` on boundary edge `e` at local parameter `t`.
    pub fn trace(&self, e: usize, t: f64) -> f64 {
        let mut phi = [0.0; 3];
        let order = self.mesh.order();
        edge_basis(order, t, &mut phi);
        self.mesh
            .edge_dofs(e)
            .iter()
            .zip(phi)
            .map(|(&d, p)| self.u[d] * p)
            .sum()
    }

    /// `d/dt` of the trace on edge `e`; divide by the edge length for the
    /// tangential derivative.
    pub fn trace_dt(&self, e: usize, t: f64) -> f64 {
        let mut dphi = [0.0; 3];
        edge_basis_dt(self.mesh.order(), t, &mut dphi);
        self.mesh
            .edge_dofs(e)
            .iter()
            .zip(dphi)
            .map(|(&d, p)| self.u[d] * p)
            .sum()
    }

    /// Boundary edge containing reference arclength `s` and the local
    /// parameter there. Endpoints of electrodes map to the edge inside.
    pub(crate) fn locate(&self, s: f64) -> (usize, f64) {
        let n = self.mesh.boundary_edges().len();
        let h = self.mesh.h();
        let e = ((s / h).floor() as usize).min(n - 1);
        let [s0, s1] = self.mesh.boundary_edges()[e].arc;
        (e, (s - s0) / (s1 - s0))
    }

    /// `U_m − u(s)` at reference arclength `s` on electrode `m`.
    pub fn contact_gap(&self, m: usize, s: f64) -> f64 {
        let (e, t) = self.locate(s);
        self.electrode_potentials[m] - self.trace(e, t)
    }

    /// Physical point of boundary edge `e` at parameter `t`.
    pub fn edge_point(&self, e: usize, t: f64) -> Point {
        let [p, q] = self.mesh.edge_points(e);
        [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
    }

    pub fn to_json(&self) -> SolutionJson {
        SolutionJson {
            electrode_potentials: self.electrode_potentials.clone(),
            pattern: self.pattern.as_slice().to_vec(),
            level: self.mesh.level(),
            order: self.mesh.order(),
            grounding: "zero-mean".into(),
        }
    }

    /// Writes `node, x, y, u` rows for all dofs.
    pub fn write_nodal_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "x", "y", "u"])?;
        for (i, (p, u)) in self.mesh.dof_coords().iter().zip(&self.u).enumerate() {
            w.serialize((i, p[0], p[1], u))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionJson {
    #[serde(rename = "U")]
    pub electrode_potentials: Vec<f64>,
    pub pattern: Vec<f64>,
    pub level: u32,
    pub order: ElementOrder,
    pub grounding: String,
}

/// Current-to-voltage map in the basis `{e_m − e_M}`:
/// `R[n][m] = (e_n − e_M) · U(e_m − e_M)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementMap {
    dim: usize,
    values: Vec<f64>,
}

impl MeasurementMap {
    pub fn from_basis_solutions(solutions: &[ForwardSolution]) -> Result<Self> {
        let dim = solutions.len();
        let electrodes = dim + 1;
        let mut values = vec![0.0; dim * dim];
        for (m, sol) in solutions.iter().enumerate() {
            if sol.electrode_potentials.len() != electrodes {
                return Err(Error::Contract("basis solution has wrong size".into()));
            }
            let last = sol.electrode_potentials[electrodes - 1];
            for n in 0..dim {
                values[n * dim + m] = sol.electrode_potentials[n] - last;
            }
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.dim + col]
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `max |R − Rᵀ|` divided by the Frobenius norm.
    pub fn relative_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / self.norm()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }
}

/// `ν·σ∇u` on the boundary through the Robin identity `ζ (U − u)`.
pub struct BoundaryFlux<'a> {
    solution: &'a ForwardSolution,
    profile: &'a ConductanceProfile,
}

pub fn boundary_flux<'a>(
    solution: &'a ForwardSolution,
    profile: &'a ConductanceProfile,
) -> BoundaryFlux<'a> {
    BoundaryFlux { solution, profile }
}

impl BoundaryFlux<'_> {
    pub fn eval(&self, s: f64) -> Result<f64> {
        let zeta = self.profile.eval(s)?;
        if zeta == 0.0 {
            return Ok(0.0);
        }
        let m = self
            .profile
            .layout()
            .electrode_at(s)
            .expect("nonzero conductance lies on an electrode");
        Ok(zeta * self.solution.contact_gap(m, s))
    }

    /// `∫_{E_m} ν·σ∇u dS` for the 0-based electrode `m`.
    pub fn electrode_current(&self, m: usize) -> f64 {
        let mesh = self.solution.mesh();
        let [a, b] = self.profile.layout().arc(m);
        let mut total = 0.0;
        for (e, edge) in mesh.boundary_edges().iter().enumerate() {
            let [s0, s1] = edge.arc;
            if s1 <= a || s0 >= b {
                continue;
            }
            let [p, q] = mesh.edge_points(e);
            let jac = (q[0] - p[0]).hypot(q[1] - p[1]) / (s1 - s0);
            for piece in self.profile.pieces_in(s0, s1) {
                if piece.electrode != m {
                    continue;
                }
                let len = piece.arc[1] - piece.arc[0];
                for &(x, w) in gauss_legendre(3) {
                    let s = piece.arc[0] + x * len;
                    let gap = self.solution.electrode_potentials[m]
                        - self.solution.trace(e, (s - s0) / (s1 - s0));
                    total += w * len * jac * piece.value_at(s) * gap;
                }
            }
        }
        total
    }
}
