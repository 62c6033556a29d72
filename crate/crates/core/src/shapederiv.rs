//! Boundary integrals for the derivative of the electrode potentials with
//! respect to boundary and electrode perturbations.
//!
//! For current patterns `I`, `Ĩ` with solutions `(u, U)`, `(ũ, Ũ)`:
//!
//! ```text
//! U'[h]·Ĩ = ∫ h_ν ζ (∂u/∂ν − κ(U − u))(Ũ − ũ) dS
//!         + ∫ h_τ ζ̇ (U − u)(Ũ − ũ) dS
//!         − ∫ h_ν σ (∇u)_τ (∇ũ)_τ dS
//! ```
//!
//! In two dimensions `h_τ` is a signed scalar along the counter-clockwise
//! tangent and `ζ̇` is the arclength derivative, including the point masses of
//! box profiles.

use std::io::Write;
use std::sync::Arc;

use crate::contact::ConductanceProfile;
use crate::error::{Error, Result};
use crate::fem::gauss_legendre;
use crate::forward::{boundary_flux, ConductivityField, ForwardSolution};
use crate::mesh::Mesh;

type ArcFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Boundary perturbation `h` as functions of reference arclength.
#[derive(Clone)]
pub struct PerturbationField {
    pub h_nu: ArcFn,
    pub h_tau: ArcFn,
}

impl std::fmt::Debug for PerturbationField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PerturbationField { .. }")
    }
}

impl PerturbationField {
    pub fn new(
        h_nu: impl Fn(f64) -> f64 + Send + Sync + 'static,
        h_tau: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            h_nu: Arc::new(h_nu),
            h_tau: Arc::new(h_tau),
        }
    }

    /// `h_ν ≡ 1`, `h_τ ≡ 1`.
    pub fn unit() -> Self {
        Self::new(|_| 1.0, |_| 1.0)
    }

    pub fn zero() -> Self {
        Self::new(|_| 0.0, |_| 0.0)
    }

    /// Field of the map `(x₁, x₂) ↦ (x₁ + t x₁, x₂)`, which moves the right
    /// side outwards and stretches the bottom and top sides.
    pub fn stretch_x() -> Self {
        Self::new(
            |s| if (1.0..2.0).contains(&s) { 1.0 } else { 0.0 },
            |s| match s {
                s if s < 1.0 => s,
                s if (2.0..3.0).contains(&s) => -(3.0 - s),
                _ => 0.0,
            },
        )
    }

    /// Tangential motion of the electrodes only: `h_τ = shift(s)`.
    pub fn tangential(shift: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(|_| 0.0, shift)
    }

    /// `α a + β b`.
    pub fn combine(alpha: f64, a: &Self, beta: f64, b: &Self) -> Self {
        let (an, at, bn, bt) = (a.h_nu.clone(), a.h_tau.clone(), b.h_nu.clone(), b.h_tau.clone());
        Self::new(
            move |s| alpha * an(s) + beta * bn(s),
            move |s| alpha * at(s) + beta * bt(s),
        )
    }
}

/// Sum of principal curvatures as a function of reference arclength.
#[derive(Clone)]
pub struct CurvatureField(pub ArcFn);

impl CurvatureField {
    pub fn new(kappa: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(kappa))
    }

    /// Zero on the open sides of the square; corners carry no quadrature
    /// weight.
    pub fn flat() -> Self {
        Self::new(|_| 0.0)
    }
}

impl std::fmt::Debug for CurvatureField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("CurvatureField { .. }")
    }
}

fn check_pair(a: &ForwardSolution, b: &ForwardSolution) -> Result<()> {
    let (x, y) = (a.mesh(), b.mesh());
    if Arc::ptr_eq(x, y) || (x.order() == y.order() && x.nodes() == y.nodes()) {
        Ok(())
    } else {
        Err(Error::Contract("solutions live on different meshes".into()))
    }
}

/// Integrates `f(s, ζ, gap_m, gap_n)` against `dS` over the electrodes,
/// splitting edges where `ζ` changes formula.
fn electrode_integral(
    a: &ForwardSolution,
    b: &ForwardSolution,
    profile: &ConductanceProfile,
    f: impl Fn(f64, f64, f64, f64, &crate::contact::Piece) -> f64,
) -> Result<f64> {
    check_pair(a, b)?;
    let mesh = a.mesh();
    let mut total = 0.0;
    for (e, edge) in mesh.boundary_edges().iter().enumerate() {
        let [s0, s1] = edge.arc;
        let pieces = profile.pieces_in(s0, s1);
        if pieces.is_empty() {
            continue;
        }
        let jac = edge_jacobian(mesh, e);
        for piece in &pieces {
            let m = piece.electrode;
            let len = piece.arc[1] - piece.arc[0];
            for &(x, w) in gauss_legendre(4) {
                let s = piece.arc[0] + x * len;
                let t = (s - s0) / (s1 - s0);
                let ga = a.electrode_potentials[m] - a.trace(e, t);
                let gb = b.electrode_potentials[m] - b.trace(e, t);
                total += w * len * jac * f(s, piece.value_at(s), ga, gb, piece);
            }
        }
    }
    Ok(total)
}

fn edge_jacobian(mesh: &Mesh, e: usize) -> f64 {
    let [s0, s1] = mesh.boundary_edges()[e].arc;
    let [p, q] = mesh.edge_points(e);
    (q[0] - p[0]).hypot(q[1] - p[1]) / (s1 - s0)
}

/// `∫ ζ² (U^m − u^m)(U^n − u^n) dS`.
pub fn integral_i1(a: &ForwardSolution, b: &ForwardSolution, profile: &ConductanceProfile) -> Result<f64> {
    electrode_integral(a, b, profile, |_, z, ga, gb, _| z * z * ga * gb)
}

/// `∫ ζ̇ (U^m − u^m)(U^n − u^n) dS`, with the jumps of a box profile
/// contributing nodal trace values at the electrode ends.
pub fn integral_i2(a: &ForwardSolution, b: &ForwardSolution, profile: &ConductanceProfile) -> Result<f64> {
    integral_i2_weighted(a, b, profile, &|_| 1.0)
}

fn integral_i2_weighted(
    a: &ForwardSolution,
    b: &ForwardSolution,
    profile: &ConductanceProfile,
    h_tau: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    // slopes are taken in reference arclength, so the edge jacobian cancels
    let smooth = electrode_integral(a, b, profile, |s, _, ga, gb, piece| {
        h_tau(s) * piece.slope() * ga * gb
    })?;
    let jumps: f64 = profile
        .arclength_derivative()
        .delta_part
        .iter()
        .map(|d| {
            let m = d.electrode;
            h_tau(d.s) * d.weight * a.contact_gap(m, d.s) * b.contact_gap(m, d.s)
        })
        .sum();
    Ok(smooth + jumps)
}

/// `∫ (∇u^m)_τ (∇u^n)_τ dS` over the whole boundary.
pub fn integral_i3(a: &ForwardSolution, b: &ForwardSolution) -> Result<f64> {
    gradient_term(a, b, &ConductivityField::Constant(1.0), &|_| 1.0)
}

fn gradient_term(
    a: &ForwardSolution,
    b: &ForwardSolution,
    sigma: &ConductivityField,
    h_nu: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    check_pair(a, b)?;
    let mesh = a.mesh();
    let mut total = 0.0;
    for (e, edge) in mesh.boundary_edges().iter().enumerate() {
        let [s0, s1] = edge.arc;
        let [p, q] = mesh.edge_points(e);
        let len = (q[0] - p[0]).hypot(q[1] - p[1]);
        for &(t, w) in gauss_legendre(4) {
            let weight = h_nu(s0 + t * (s1 - s0));
            if weight == 0.0 {
                continue;
            }
            total += w * weight * sigma.on_edge(mesh, e, t) * a.trace_dt(e, t) * b.trace_dt(e, t) / len;
        }
    }
    Ok(total)
}

/// The three terms of `U'[h]·Ĩ` and the symmetric rewrite of the first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeDerivative {
    /// `∫ h_ν ζ (∂u/∂ν − κ(U − u))(Ũ − ũ) dS` with the flux from the Robin
    /// identity.
    pub normal: f64,
    /// `∫ h_ν ζ (ζ/σ − κ)(U − u)(Ũ − ũ) dS`.
    pub normal_symmetric: f64,
    pub tangential: f64,
    pub gradient: f64,
}

impl ShapeDerivative {
    pub fn value(&self) -> f64 {
        self.normal + self.tangential - self.gradient
    }
}

pub fn shape_derivative(
    sol: &ForwardSolution,
    sol_t: &ForwardSolution,
    profile: &ConductanceProfile,
    pert: &PerturbationField,
    kappa: &CurvatureField,
    sigma: &ConductivityField,
) -> Result<ShapeDerivative> {
    check_pair(sol, sol_t)?;
    let mesh = sol.mesh().clone();
    let flux = boundary_flux(sol, profile);
    let sigma_at = |s: f64| {
        let (e, t) = sol.locate(s);
        sigma.on_edge(&mesh, e, t)
    };
    let h_nu = &*pert.h_nu;
    let k = &*kappa.0;
    let normal = electrode_integral(sol, sol_t, profile, |s, z, ga, gb, _| {
        let hn = h_nu(s);
        if hn == 0.0 {
            return 0.0;
        }
        let dudn = flux.eval(s).unwrap_or(z * ga) / sigma_at(s);
        hn * z * (dudn - k(s) * ga) * gb
    })?;
    let normal_symmetric = electrode_integral(sol, sol_t, profile, |s, z, ga, gb, _| {
        let hn = h_nu(s);
        if hn == 0.0 {
            return 0.0;
        }
        hn * z * (z / sigma_at(s) - k(s)) * ga * gb
    })?;
    let tangential = integral_i2_weighted(sol, sol_t, profile, &*pert.h_tau)?;
    let gradient = gradient_term(sol, sol_t, sigma, h_nu)?;
    Ok(ShapeDerivative {
        normal,
        normal_symmetric,
        tangential,
        gradient,
    })
}

/// `𝓘₁, 𝓘₂, 𝓘₃` over all pattern pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeIntegrals {
    pub labels: Vec<String>,
    pub i1: Vec<Vec<f64>>,
    pub i2: Vec<Vec<f64>>,
    pub i3: Vec<Vec<f64>>,
}

impl DerivativeIntegrals {
    pub fn compute(solutions: &[ForwardSolution], profile: &ConductanceProfile) -> Result<Self> {
        let n = solutions.len();
        let mut out = Self {
            labels: solutions.iter().map(|s| pattern_label(s.pattern.as_slice())).collect(),
            i1: vec![vec![0.0; n]; n],
            i2: vec![vec![0.0; n]; n],
            i3: vec![vec![0.0; n]; n],
        };
        for m in 0..n {
            for k in 0..=m {
                let (a, b) = (&solutions[m], &solutions[k]);
                let v = [integral_i1(a, b, profile)?, integral_i2(a, b, profile)?, integral_i3(a, b)?];
                for (mat, v) in [&mut out.i1, &mut out.i2, &mut out.i3].into_iter().zip(v) {
                    mat[m][k] = v;
                    mat[k][m] = v;
                }
            }
        }
        Ok(out)
    }

    pub fn matrix(&self, i: usize) -> &[Vec<f64>] {
        match i {
            1 => &self.i1,
            2 => &self.i2,
            3 => &self.i3,
            _ => panic!("integral index {i} not in 1..=3"),
        }
    }

    /// One matrix as CSV with a header row naming the patterns.
    pub fn write_csv(&self, i: usize, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["pattern".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(self.matrix(i)) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `e8-e1` style name of a pattern with one source and one sink.
fn pattern_label(p: &[f64]) -> String {
    let pos: Vec<_> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    let neg: Vec<_> = (0..p.len()).filter(|&i| p[i] < 0.0).collect();
    match (pos.as_slice(), neg.as_slice()) {
        ([a], [b]) => format!("e{}-e{}", a + 1, b + 1),
        _ => format!("{p:?}"),
    }
}

/// `δ = (Σ_{n≤m} |A − B|²)^{1/2} / (Σ_{n≤m} |B|²)^{1/2}`.
pub fn relative_matrix_error(a: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for m in 0..reference.len() {
        for n in 0..=m {
            num += (a[m][n] - reference[m][n]).powi(2);
            den += reference[m][n].powi(2);
        }
    }
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::ProfileKind;
    use crate::forward::{CurrentPattern, ForwardSystem};
    use crate::mesh::{ElectrodeLayout, ElementOrder};

    fn solutions(
        level: u32,
        order: ElementOrder,
        kind: ProfileKind,
        height: f64,
    ) -> (Vec<ForwardSolution>, ConductanceProfile) {
        let layout = ElectrodeLayout::default8();
        let mesh = Arc::new(Mesh::build(level, &layout, order).unwrap());
        let profile = ConductanceProfile::uniform(&layout, kind, height).unwrap();
        let sys = ForwardSystem::new(mesh, &ConductivityField::Constant(1.0), &profile).unwrap();
        (sys.solve_many(&CurrentPattern::reference_set(8)).unwrap(), profile)
    }

    #[test]
    fn integrals_are_symmetric_and_vanish_for_zero_current() {
        for kind in [ProfileKind::Box, ProfileKind::Hat] {
            let (sols, profile) = solutions(5, ElementOrder::Linear, kind, 20.0);
            let d = DerivativeIntegrals::compute(&sols, &profile).unwrap();
            for i in 1..=3 {
                let mat = d.matrix(i);
                assert!(mat[0][0] != 0.0);
                for m in 0..7 {
                    for n in 0..7 {
                        let (a, b) = (integral_pair(i, &sols[m], &sols[n], &profile), integral_pair(i, &sols[n], &sols[m], &profile));
                        assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-300));
                    }
                }
            }
            let layout = ElectrodeLayout::default8();
            let mesh = sols[0].mesh().clone();
            let sys = ForwardSystem::new(mesh, &ConductivityField::Constant(1.0), &profile).unwrap();
            let zero = sys.solve(&CurrentPattern::zeros(layout.len())).unwrap();
            assert_eq!(integral_i3(&zero, &sols[2]).unwrap(), 0.0);
            assert_eq!(integral_i1(&zero, &sols[2], &profile).unwrap(), 0.0);
        }
    }

    fn integral_pair(i: usize, a: &ForwardSolution, b: &ForwardSolution, p: &ConductanceProfile) -> f64 {
        match i {
            1 => integral_i1(a, b, p).unwrap(),
            2 => integral_i2(a, b, p).unwrap(),
            _ => integral_i3(a, b).unwrap(),
        }
    }

    #[test]
    fn mismatched_meshes_are_rejected() {
        let (a, profile) = solutions(3, ElementOrder::Linear, ProfileKind::Hat, 20.0);
        let (b, _) = solutions(4, ElementOrder::Linear, ProfileKind::Hat, 20.0);
        assert!(matches!(integral_i1(&a[0], &b[0], &profile), Err(Error::Contract(_))));
    }

    #[test]
    fn hat_profile_has_no_jump_terms() {
        let (sols, profile) = solutions(4, ElementOrder::Linear, ProfileKind::Hat, 20.0);
        assert!(profile.arclength_derivative().delta_part.is_empty());
        // a constant h_τ makes the smooth part the full value
        let v = integral_i2(&sols[0], &sols[1], &profile).unwrap();
        let t = integral_i2_weighted(&sols[0], &sols[1], &profile, &|_| 1.0).unwrap();
        assert_eq!(v, t);
    }

    #[test]
    fn derivative_is_linear_and_symmetric() {
        let (sols, profile) = solutions(5, ElementOrder::Quadratic, ProfileKind::Box, 20.0);
        let sigma = ConductivityField::Constant(1.0);
        let kappa = CurvatureField::flat();
        let h1 = PerturbationField::unit();
        let h2 = PerturbationField::new(|s: f64| (3.0 * s).sin(), |s: f64| s * s - 1.0);
        let eval = |h: &PerturbationField, a: usize, b: usize| {
            shape_derivative(&sols[a], &sols[b], &profile, h, &kappa, &sigma).unwrap()
        };
        let combo = PerturbationField::combine(2.0, &h1, -0.5, &h2);
        let lhs = eval(&combo, 1, 4).value();
        let rhs = 2.0 * eval(&h1, 1, 4).value() - 0.5 * eval(&h2, 1, 4).value();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(rhs.abs()));
        assert_eq!(eval(&PerturbationField::zero(), 1, 4).value(), 0.0);
        let (x, y) = (eval(&h2, 2, 5), eval(&h2, 5, 2));
        assert!((x.value() - y.value()).abs() < 1e-10 * x.value().abs());
        assert!((x.normal - x.normal_symmetric).abs() < 1e-12 * x.normal.abs());
    }

    #[test]
    fn electrode_shift_matches_finite_difference() {
        // Moving one electrode along the side on a fixed mesh only exercises
        // the ζ̇ term.
        let layout = ElectrodeLayout::default8();
        let mesh = Arc::new(Mesh::build(7, &layout, ElementOrder::Quadratic).unwrap());
        let sigma = ConductivityField::Constant(1.0);
        let profile = ConductanceProfile::uniform(&layout, ProfileKind::Hat, 20.0).unwrap();
        let moved = 2;
        let patterns = [CurrentPattern::pair(8, 0, 2), CurrentPattern::pair(8, 7, 3)];
        let potentials = |eps: f64| {
            let l = layout.shifted(|m| if m == moved { eps } else { 0.0 }).unwrap();
            let p = profile.with_layout(&l).unwrap();
            let sys = ForwardSystem::new(mesh.clone(), &sigma, &p).unwrap();
            sys.solve(&patterns[0]).unwrap().electrode_potentials
        };
        let eps = 1e-4;
        let (up, um) = (potentials(eps), potentials(-eps));
        let fd: f64 = (0..8)
            .map(|i| (up[i] - um[i]) / (2.0 * eps) * patterns[1].as_slice()[i])
            .sum();
        let sys = ForwardSystem::new(mesh, &sigma, &profile).unwrap();
        let sols = sys.solve_many(&patterns).unwrap();
        let [a, b] = layout.arc(moved);
        let h = PerturbationField::tangential(move |s| if (a..=b).contains(&s) { 1.0 } else { 0.0 });
        let d = shape_derivative(&sols[0], &sols[1], &profile, &h, &CurvatureField::flat(), &sigma).unwrap();
        assert!(
            (d.value() - fd).abs() < 0.01 * fd.abs(),
            "formula {} vs difference quotient {fd}",
            d.value()
        );
    }

    #[test]
    fn matrix_csv_has_named_patterns() {
        let (sols, profile) = solutions(3, ElementOrder::Linear, ProfileKind::Box, 5.0);
        let d = DerivativeIntegrals::compute(&sols, &profile).unwrap();
        let mut buf = Vec::new();
        d.write_csv(2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("pattern,e8-e1,e8-e2,"));
        assert_eq!(text.lines().count(), 8);
        assert_eq!(relative_matrix_error(&d.i1, &d.i1), 0.0);
    }
}
