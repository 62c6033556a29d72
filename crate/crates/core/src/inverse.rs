//! Least-squares estimation of conductivity and contact parameters from
//! electrode measurements: homogeneous fits and MAP reconstructions with a
//! Gaussian smoothness prior, solved by Levenberg–Marquardt.
//!
//! Parameters are logarithms of the physical values. Sensitivities come from
//! the adjoint identity `∂(U·Ĩ)/∂p = −∂_p B((u,U),(ũ,Ũ))`, with all adjoint
//! states obtained as combinations of the `M−1` basis solutions.

use std::io::Write;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::contact::{ConductanceProfile, ProfileKind};
use crate::error::{Error, Result};
use crate::fem::{gauss_legendre, TriangleGeometry};
use crate::forward::{ConductivityField, CurrentPattern, ForwardSolution, ForwardSystem};
use crate::mesh::{ElectrodeLayout, ElementOrder, Mesh, Point};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub electrodes: Vec<[f64; 2]>,
    /// Mesh level of the simulation that produced the data.
    pub level: u32,
    pub model: ProfileKind,
    /// Standard deviation actually added to each voltage.
    pub noise_abs: f64,
}

/// Stacked electrode potentials for a set of current patterns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub patterns: Vec<CurrentPattern>,
    /// `patterns.len() × M` values, pattern-major.
    pub voltages: Vec<f64>,
    /// Noise level relative to the largest voltage difference.
    pub noise_std: f64,
    pub seed: u64,
    pub meta: FrameMeta,
}

impl MeasurementFrame {
    pub fn electrodes(&self) -> usize {
        self.meta.electrodes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.electrodes();
        if self.patterns.iter().any(|p| p.len() != m) || self.voltages.len() != m * self.patterns.len() {
            return Err(Error::Contract(format!(
                "frame with {} patterns and {} voltages does not match {m} electrodes",
                self.patterns.len(),
                self.voltages.len()
            )));
        }
        Ok(())
    }

    /// Voltages shifted to zero mean per pattern.
    pub fn normalized_voltages(&self) -> Vec<f64> {
        let m = self.electrodes();
        let mut v = self.voltages.clone();
        for chunk in v.chunks_mut(m) {
            let mean = chunk.iter().sum::<f64>() / m as f64;
            chunk.iter_mut().for_each(|x| *x -= mean);
        }
        v
    }

    pub fn layout(&self) -> Result<ElectrodeLayout> {
        ElectrodeLayout::new(self.meta.electrodes.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(text)?;
        f.validate()?;
        Ok(f)
    }
}

/// Logarithms of the conductivity (one value, or one per mesh node) and of
/// the per-electrode contact parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub log_sigma: Vec<f64>,
    pub log_zeta: Vec<f64>,
}

impl ParameterVector {
    pub fn homogeneous(sigma: f64, zeta: &[f64]) -> Result<Self> {
        Self::nodal(&[sigma], zeta)
    }

    pub fn nodal(sigma: &[f64], zeta: &[f64]) -> Result<Self> {
        if sigma.iter().chain(zeta).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter("parameters must be positive and finite".into()));
        }
        Ok(Self {
            log_sigma: sigma.iter().map(|s| s.ln()).collect(),
            log_zeta: zeta.iter().map(|z| z.ln()).collect(),
        })
    }

    pub fn is_homogeneous(&self) -> bool {
        self.log_sigma.len() == 1
    }

    pub fn len(&self) -> usize {
        self.log_sigma.len() + self.log_zeta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.log_sigma.iter().chain(&self.log_zeta).copied().collect()
    }

    /// Same shape as `self` with values from `y`.
    pub fn with_values(&self, y: &[f64]) -> Self {
        let n = self.log_sigma.len();
        Self {
            log_sigma: y[..n].to_vec(),
            log_zeta: y[n..].to_vec(),
        }
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|v| v.exp()).collect()
    }

    pub fn zeta(&self) -> Vec<f64> {
        self.log_zeta.iter().map(|v| v.exp()).collect()
    }

    pub fn sigma_field(&self) -> ConductivityField {
        if self.is_homogeneous() {
            ConductivityField::Constant(self.log_sigma[0].exp())
        } else {
            ConductivityField::NodalP1(self.sigma())
        }
    }

    pub fn profile(&self, layout: &ElectrodeLayout, kind: ProfileKind) -> Result<ConductanceProfile> {
        ConductanceProfile::new(layout, kind, &self.zeta())
    }
}

/// `U(I) = Σ_b I_b U(e_b − e_M)` from the basis potentials.
fn combine(basis: &[Vec<f64>], pattern: &CurrentPattern) -> Vec<f64> {
    let m = pattern.len();
    let mut out = vec![0.0; m];
    for (b, u) in basis.iter().enumerate() {
        let c = pattern.as_slice()[b];
        if c != 0.0 {
            out.iter_mut().zip(u).for_each(|(o, x)| *o += c * x);
        }
    }
    out
}

/// Noiseless zero-mean voltages for `patterns` on `mesh`.
pub fn simulate_frame(
    mesh: &Arc<Mesh>,
    sigma: &ConductivityField,
    profile: &ConductanceProfile,
    patterns: &[CurrentPattern],
) -> Result<Vec<f64>> {
    let basis: Vec<_> = ForwardSystem::new(mesh.clone(), sigma, profile)?
        .solve_basis()?
        .into_iter()
        .map(|s| s.electrode_potentials)
        .collect();
    Ok(patterns.iter().flat_map(|p| combine(&basis, p)).collect())
}

/// Conductivity and contacts used to generate synthetic data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub sigma: ConductivityField,
    pub profile: crate::contact::ProfileJson,
}

/// Simulates `patterns` on a mesh of level `fine_level`, which must exceed
/// the reconstruction level by at least two, and adds Gaussian noise with
/// standard deviation `noise_std · max_{i,j} |U_i − U_j|`.
pub fn synthesize_data(
    truth: &Truth,
    patterns: &[CurrentPattern],
    fine_level: u32,
    reconstruction_level: u32,
    noise_std: f64,
    seed: u64,
) -> Result<MeasurementFrame> {
    if fine_level < reconstruction_level + 2 {
        return Err(Error::Contract(format!(
            "data level {fine_level} must exceed the reconstruction level {reconstruction_level} by at least 2"
        )));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Parameter(format!("noise level must be nonnegative, got {noise_std}")));
    }
    let profile = ConductanceProfile::from_json(&truth.profile)?;
    let mesh = Arc::new(Mesh::build(fine_level, profile.layout(), ElementOrder::Linear)?);
    let mut voltages = simulate_frame(&mesh, &truth.sigma, &profile, patterns)?;
    let (lo, hi) = voltages
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let noise_abs = noise_std * (hi - lo);
    if noise_abs > 0.0 {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_abs).map_err(|e| Error::Parameter(e.to_string()))?;
        voltages.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    Ok(MeasurementFrame {
        patterns: patterns.to_vec(),
        voltages,
        noise_std,
        seed,
        meta: FrameMeta {
            electrodes: profile.layout().arcs().to_vec(),
            level: fine_level,
            model: profile.kind(),
            noise_abs,
        },
    })
}

/// Forward map `y ↦ U(y)` on a fixed piecewise linear mesh.
#[derive(Clone, Debug)]
pub struct ForwardModel {
    pub mesh: Arc<Mesh>,
    pub kind: ProfileKind,
    pub patterns: Vec<CurrentPattern>,
}

impl ForwardModel {
    pub fn new(mesh: Arc<Mesh>, kind: ProfileKind, patterns: Vec<CurrentPattern>) -> Result<Self> {
        if mesh.order() != ElementOrder::Linear {
            return Err(Error::Parameter("reconstructions use piecewise linear elements".into()));
        }
        if kind == ProfileKind::Custom {
            return Err(Error::Parameter("contact estimation needs a box or hat profile".into()));
        }
        if patterns.iter().any(|p| p.len() != mesh.electrode_count()) {
            return Err(Error::Contract("pattern length differs from the electrode count".into()));
        }
        Ok(Self { mesh, kind, patterns })
    }

    fn check(&self, y: &ParameterVector) -> Result<()> {
        let n = self.mesh.nodes().len();
        if !(y.log_sigma.len() == 1 || y.log_sigma.len() == n) || y.log_zeta.len() != self.mesh.electrode_count() {
            return Err(Error::Contract(format!(
                "parameter vector with {} conductivity and {} contact values does not fit a mesh with {n} nodes and {} electrodes",
                y.log_sigma.len(),
                y.log_zeta.len(),
                self.mesh.electrode_count()
            )));
        }
        Ok(())
    }

    fn basis_solutions(&self, y: &ParameterVector) -> Result<(ConductanceProfile, Vec<ForwardSolution>)> {
        self.check(y)?;
        let profile = y.profile(self.mesh.layout(), self.kind)?;
        let sys = ForwardSystem::new(self.mesh.clone(), &y.sigma_field(), &profile)?;
        Ok((profile, sys.solve_basis()?))
    }

    pub fn voltages(&self, y: &ParameterVector) -> Result<Vec<f64>> {
        let (_, sols) = self.basis_solutions(y)?;
        Ok(self.stack(&sols))
    }

    fn stack(&self, sols: &[ForwardSolution]) -> Vec<f64> {
        let basis: Vec<_> = sols.iter().map(|s| s.electrode_potentials.clone()).collect();
        self.patterns.iter().flat_map(|p| combine(&basis, p)).collect()
    }

    /// Voltages and `∂U/∂y` (rows pattern-major, columns as in
    /// [`ParameterVector::to_vec`]).
    pub fn evaluate(&self, y: &ParameterVector) -> Result<(Vec<f64>, Mat<f64>)> {
        let (profile, sols) = self.basis_solutions(y)?;
        let voltages = self.stack(&sols);
        let sens = self.basis_sensitivities(y, &profile, &sols);
        let m = self.mesh.electrode_count();
        let rows = self.patterns.len() * m;
        let mut jac = Mat::<f64>::zeros(rows, y.len());
        let mut t = vec![0.0; m - 1];
        for (p, s) in sens.iter().enumerate() {
            for (k, pat) in self.patterns.iter().enumerate() {
                // t = S_p I_k restricted to the basis coefficients
                for (a, ta) in t.iter_mut().enumerate() {
                    *ta = (0..m - 1).map(|b| s[a * (m - 1) + b] * pat.as_slice()[b]).sum();
                }
                let mean = t.iter().sum::<f64>() / m as f64;
                for i in 0..m {
                    let ti = if i < m - 1 { t[i] } else { 0.0 };
                    jac[(k * m + i, p)] = -(ti - mean);
                }
            }
        }
        Ok((voltages, jac))
    }

    /// `S_p[a][b] = p ∂_p B(z_a, z_b)` for every log-parameter `p`, flattened
    /// row-major.
    fn basis_sensitivities(
        &self,
        y: &ParameterVector,
        profile: &ConductanceProfile,
        sols: &[ForwardSolution],
    ) -> Vec<Vec<f64>> {
        let mesh = &self.mesh;
        let nb = sols.len();
        let mut out = vec![vec![0.0; nb * nb]; y.len()];
        let sigma = y.sigma();
        let mut grads = vec![[0.0; 2]; nb];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let geo = TriangleGeometry::new(mesh.triangle_points(t));
            for (g, s) in grads.iter_mut().zip(sols) {
                let mut v = [0.0; 2];
                for (k, &node) in tri.iter().enumerate() {
                    v[0] += s.u[node] * geo.grad_bary[k][0];
                    v[1] += s.u[node] * geo.grad_bary[k][1];
                }
                *g = v;
            }
            if y.is_homogeneous() {
                let w = geo.area * sigma[0];
                accumulate(&mut out[0], &grads, w);
            } else {
                for &node in tri {
                    accumulate(&mut out[node], &grads, geo.area / 3.0 * sigma[node]);
                }
            }
        }
        let offset = y.log_sigma.len();
        let heights = profile.heights();
        let mut gaps = vec![0.0; nb];
        for (e, edge) in mesh.boundary_edges().iter().enumerate() {
            let [s0, s1] = edge.arc;
            for piece in profile.pieces_in(s0, s1) {
                let m = piece.electrode;
                let len = piece.arc[1] - piece.arc[0];
                for &(x, w) in gauss_legendre(3) {
                    let s = piece.arc[0] + x * len;
                    let tt = (s - s0) / (s1 - s0);
                    for (g, sol) in gaps.iter_mut().zip(sols) {
                        *g = sol.electrode_potentials[m] - sol.trace(e, tt);
                    }
                    let weight = w * len * profile.height_sensitivity(&piece, s) * heights[m];
                    let target = &mut out[offset + m];
                    for a in 0..nb {
                        for b in 0..nb {
                            target[a * nb + b] += weight * gaps[a] * gaps[b];
                        }
                    }
                }
            }
        }
        out
    }
}

fn accumulate(target: &mut [f64], grads: &[Point], w: f64) {
    let nb = grads.len();
    for a in 0..nb {
        for b in 0..nb {
            target[a * nb + b] += w * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
        }
    }
}

/// `∂U/∂y` at `y` for the patterns of `frame`.
pub fn jacobian(mesh: &Arc<Mesh>, kind: ProfileKind, y: &ParameterVector, frame: &MeasurementFrame) -> Result<Mat<f64>> {
    Ok(ForwardModel::new(mesh.clone(), kind, frame.patterns.clone())?.evaluate(y)?.1)
}

/// Gaussian prior on the nodal conductivity with a squared-exponential
/// covariance, stored through its whitening factor.
#[derive(Clone, Debug)]
pub struct PriorModel {
    pub mean: f64,
    pub std: f64,
    pub correlation_length: f64,
    pub noise_std: f64,
    /// Lower triangular `G` with `GᵀG = noise² C⁻¹`.
    whitener: Mat<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub mean: f64,
    pub std: f64,
    pub correlation_length: f64,
}

impl Default for PriorConfig {
    /// 0.25 mS/cm with equal pointwise deviation and a 4 cm correlation
    /// length on a 106 cm tank, rescaled to the perimeter of the unit square.
    fn default() -> Self {
        Self {
            mean: 0.025,
            std: 0.025,
            correlation_length: 0.04 * 4.0 / 1.06,
        }
    }
}

impl PriorModel {
    pub fn new(nodes: &[Point], config: &PriorConfig, noise_std: f64) -> Result<Self> {
        let PriorConfig { mean, std, correlation_length } = *config;
        if [mean, std, correlation_length, noise_std].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter(
                "prior mean, deviation, correlation length and noise level must be positive".into(),
            ));
        }
        let n = nodes.len();
        let var = std * std;
        let two_l2 = 2.0 * correlation_length * correlation_length;
        let c = Mat::<f64>::from_fn(n, n, |i, j| {
            let d2 = (nodes[i][0] - nodes[j][0]).powi(2) + (nodes[i][1] - nodes[j][1]).powi(2);
            var * (-d2 / two_l2).exp() + if i == j { 1e-8 * var } else { 0.0 }
        });
        let llt = c
            .llt(Side::Lower)
            .map_err(|e| Error::Numerical(format!("prior covariance is not positive definite: {e:?}")))?;
        // G = noise · L⁻¹
        let mut g = Mat::<f64>::identity(n, n) * faer::Scale(noise_std);
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(
            llt.L(),
            g.as_mut(),
            faer::Par::Seq,
        );
        Ok(Self {
            mean,
            std,
            correlation_length,
            noise_std,
            whitener: g,
        })
    }

    pub fn dim(&self) -> usize {
        self.whitener.nrows()
    }

    pub fn whitener(&self) -> &Mat<f64> {
        &self.whitener
    }

    /// `G (σ − σ₀)`.
    pub fn apply(&self, sigma: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..=i).map(|j| self.whitener[(i, j)] * (sigma[j] - self.mean)).sum())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LMConfig {
    /// `None` selects `1e-3 · tr(JᵀJ) / dim`.
    pub initial_damping: Option<f64>,
    pub damping_up: f64,
    pub damping_down: f64,
    pub max_iterations: usize,
    /// Stop when `‖Jᵀr‖∞` falls below this fraction of its initial value.
    pub gradient_tolerance: f64,
    /// Stop when the largest change of a log-parameter is below this.
    pub step_tolerance: f64,
}

impl Default for LMConfig {
    fn default() -> Self {
        Self {
            initial_damping: None,
            damping_up: 10.0,
            damping_down: 10.0,
            max_iterations: 50,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-10,
        }
    }
}

impl LMConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.initial_damping.is_none_or(|l| l > 0.0)
            && self.damping_up > 1.0
            && self.damping_down > 1.0
            && self.max_iterations > 0
            && self.gradient_tolerance > 0.0
            && self.step_tolerance > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter("LM settings must be positive, damping factors above 1".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub data_misfit: f64,
    pub prior_term: f64,
    pub lambda: f64,
}

struct Evaluation {
    data: Vec<f64>,
    prior: Vec<f64>,
    jac: Mat<f64>,
}

impl Evaluation {
    fn data_misfit(&self) -> f64 {
        self.data.iter().map(|r| r * r).sum()
    }

    fn prior_term(&self) -> f64 {
        self.prior.iter().map(|r| r * r).sum()
    }

    fn objective(&self) -> f64 {
        self.data_misfit() + self.prior_term()
    }

    fn gradient(&self) -> Vec<f64> {
        let r: Vec<f64> = self.data.iter().chain(&self.prior).copied().collect();
        (0..self.jac.ncols())
            .map(|j| (0..r.len()).map(|i| self.jac[(i, j)] * r[i]).sum())
            .collect()
    }
}

struct LmOutcome {
    y: Vec<f64>,
    history: Vec<IterationLog>,
    converged: bool,
}

fn levenberg_marquardt(
    y0: Vec<f64>,
    mut eval: impl FnMut(&[f64]) -> Result<Evaluation>,
    config: &LMConfig,
) -> Result<LmOutcome> {
    config.validate()?;
    let mut y = y0;
    let mut cur = eval(&y)?;
    let n = y.len();
    let jtj = |e: &Evaluation| e.jac.transpose() * &e.jac;
    let mut normal = jtj(&cur);
    let mut lambda = config
        .initial_damping
        .unwrap_or_else(|| 1e-3 * (0..n).map(|i| normal[(i, i)]).sum::<f64>() / n as f64);
    let mut grad = cur.gradient();
    let g0 = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let mut history = vec![IterationLog {
        iter: 0,
        data_misfit: cur.data_misfit(),
        prior_term: cur.prior_term(),
        lambda,
    }];
    if g0 == 0.0 {
        return Ok(LmOutcome { y, history, converged: true });
    }
    let mut converged = false;
    let mut iter = 0;
    'outer: while iter < config.max_iterations {
        iter += 1;
        loop {
            let mut a = normal.clone();
            for i in 0..n {
                a[(i, i)] += lambda;
            }
            let mut step = Mat::<f64>::from_fn(n, 1, |i, _| -grad[i]);
            match a.llt(Side::Lower) {
                Ok(llt) => llt.solve_in_place(step.as_mut()),
                Err(_) => {
                    lambda *= config.damping_up;
                    continue;
                }
            }
            let trial: Vec<f64> = (0..n).map(|i| y[i] + step[(i, 0)]).collect();
            let max_step = (0..n).fold(0.0f64, |m, i| m.max(step[(i, 0)].abs()));
            let next = match eval(&trial) {
                Ok(e) if e.objective().is_finite() => Some(e),
                Ok(_) | Err(Error::Singular(_)) | Err(Error::Numerical(_)) => None,
                Err(e) => return Err(e),
            };
            match next {
                Some(e) if e.objective() <= cur.objective() => {
                    y = trial;
                    cur = e;
                    normal = jtj(&cur);
                    grad = cur.gradient();
                    lambda /= config.damping_down;
                    history.push(IterationLog {
                        iter,
                        data_misfit: cur.data_misfit(),
                        prior_term: cur.prior_term(),
                        lambda,
                    });
                    let gmax = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
                    if max_step < config.step_tolerance || gmax <= config.gradient_tolerance * g0 {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    if max_step < config.step_tolerance {
                        converged = true;
                        break 'outer;
                    }
                    lambda *= config.damping_up;
                    if lambda > 1e30 {
                        break 'outer;
                    }
                }
            }
        }
    }
    Ok(LmOutcome { y, history, converged })
}

/// Estimate and bookkeeping of one fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub kind: ProfileKind,
    pub level: u32,
    pub params: ParameterVector,
    /// Physical conductivity, one value or one per node.
    pub sigma: Vec<f64>,
    pub contacts: Vec<f64>,
    pub history: Vec<IterationLog>,
    pub converged: bool,
    /// `‖U(y) − Ũ‖ / ‖Ũ‖`.
    pub relative_discrepancy: f64,
}

impl ReconstructionResult {
    /// `x, y, sigma` per mesh node.
    pub fn write_nodal_csv(&self, mesh: &Mesh, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "sigma"])?;
        for (i, p) in mesh.nodes().iter().enumerate() {
            let s = if self.sigma.len() == 1 { self.sigma[0] } else { self.sigma[i] };
            w.serialize((p[0], p[1], s))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_iterations_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "data_misfit", "prior_term", "lambda"])?;
        for h in &self.history {
            w.serialize((h.iter, h.data_misfit, h.prior_term, h.lambda))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn contacts_json(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind,
            "contacts": self.contacts,
            "sigma": if self.sigma.len() == 1 { serde_json::json!(self.sigma[0]) } else { serde_json::Value::Null },
            "relative_discrepancy": self.relative_discrepancy,
            "converged": self.converged,
            "iterations": self.history.last().map_or(0, |h| h.iter),
        })
    }

    /// Relative `L²(Ω)` distance between two nodal conductivities on `mesh`.
    pub fn relative_l2_distance(&self, other: &Self, mesh: &Mesh) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        let value = |r: &Self, i: usize| if r.sigma.len() == 1 { r.sigma[0] } else { r.sigma[i] };
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let area = mesh.signed_area(t);
            // exact for products of linear functions
            let d: Vec<f64> = tri.iter().map(|&i| value(self, i) - value(other, i)).collect();
            let b: Vec<f64> = tri.iter().map(|&i| value(other, i)).collect();
            let q = |v: &[f64]| area / 6.0 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[0] * v[1] + v[1] * v[2] + v[2] * v[0]);
            num += q(&d);
            den += q(&b);
        }
        (num / den).sqrt()
    }
}

fn finish(
    model: &ForwardModel,
    template: &ParameterVector,
    outcome: LmOutcome,
    data: &[f64],
) -> Result<ReconstructionResult> {
    let params = template.with_values(&outcome.y);
    let fitted = model.voltages(&params)?;
    let num: f64 = fitted.iter().zip(data).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = data.iter().map(|b| b * b).sum();
    Ok(ReconstructionResult {
        kind: model.kind,
        level: model.mesh.level(),
        sigma: params.sigma(),
        contacts: params.zeta(),
        params,
        history: outcome.history,
        converged: outcome.converged,
        relative_discrepancy: (num / den).sqrt(),
    })
}

fn model_for(frame: &MeasurementFrame, level: u32, kind: ProfileKind) -> Result<ForwardModel> {
    frame.validate()?;
    let layout = frame.layout()?;
    let mesh = Arc::new(Mesh::build(level, &layout, ElementOrder::Linear)?);
    ForwardModel::new(mesh, kind, frame.patterns.clone())
}

/// Fits one conductivity value and per-electrode contact parameters.
pub fn fit_homogeneous(
    frame: &MeasurementFrame,
    level: u32,
    kind: ProfileKind,
    sigma0: f64,
    zeta0: f64,
    config: &LMConfig,
) -> Result<ReconstructionResult> {
    let model = model_for(frame, level, kind)?;
    let data = frame.normalized_voltages();
    let template = ParameterVector::homogeneous(sigma0, &vec![zeta0; frame.electrodes()])?;
    let outcome = levenberg_marquardt(
        template.to_vec(),
        |y| {
            let (v, jac) = model.evaluate(&template.with_values(y))?;
            Ok(Evaluation {
                data: v.iter().zip(&data).map(|(a, b)| a - b).collect(),
                prior: Vec::new(),
                jac,
            })
        },
        config,
    )?;
    finish(&model, &template, outcome, &data)
}

/// MAP estimate of the nodal conductivity and unregularized contacts.
pub fn reconstruct_map(
    frame: &MeasurementFrame,
    level: u32,
    kind: ProfileKind,
    prior: &PriorConfig,
    init: &ParameterVector,
    config: &LMConfig,
) -> Result<ReconstructionResult> {
    let model = model_for(frame, level, kind)?;
    let nodes = model.mesh.nodes().len();
    let noise = frame.meta.noise_abs;
    if !(noise > 0.0) {
        return Err(Error::Parameter("MAP estimation needs a frame with positive noise level".into()));
    }
    let prior = PriorModel::new(model.mesh.nodes(), prior, noise)?;
    let template = if init.is_homogeneous() {
        ParameterVector {
            log_sigma: vec![init.log_sigma[0]; nodes],
            log_zeta: init.log_zeta.clone(),
        }
    } else {
        init.clone()
    };
    model.check(&template)?;
    let data = frame.normalized_voltages();
    let rows = data.len();
    let outcome = levenberg_marquardt(
        template.to_vec(),
        |y| {
            let params = template.with_values(y);
            let (v, jac) = model.evaluate(&params)?;
            let sigma = params.sigma();
            let g = prior.whitener();
            let mut full = Mat::<f64>::zeros(rows + nodes, params.len());
            full.as_mut().submatrix_mut(0, 0, rows, params.len()).copy_from(&jac);
            // d(G(σ − σ₀))/d log σ = G diag(σ)
            for j in 0..nodes {
                for i in j..nodes {
                    full[(rows + i, j)] = g[(i, j)] * sigma[j];
                }
            }
            Ok(Evaluation {
                data: v.iter().zip(&data).map(|(a, b)| a - b).collect(),
                prior: prior.apply(&sigma),
                jac: full,
            })
        },
        config,
    )?;
    finish(&model, &template, outcome, &data)
}
