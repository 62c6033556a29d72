//! Model comparison and convergence experiments: the relative difference
//! `d_U` between box and hat contacts, optimal hat scaling, FEM convergence
//! rates of the electrode potentials, and convergence of the derivative
//! integrals.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contact::{ConductanceProfile, ProfileKind};
use crate::error::{Error, Result};
use crate::forward::{ConductivityField, CurrentPattern, ForwardSystem};
use crate::mesh::{ElectrodeLayout, ElementOrder, Mesh};
use crate::shapederiv::{relative_matrix_error, DerivativeIntegrals};

/// Electrode potentials for the patterns `e_M − e_m`, `m = 1..M−1`.
pub fn reference_potentials(
    mesh: &Arc<Mesh>,
    sigma: &ConductivityField,
    profile: &ConductanceProfile,
) -> Result<Vec<Vec<f64>>> {
    let sys = ForwardSystem::new(mesh.clone(), sigma, profile)?;
    Ok(sys
        .solve_many(&CurrentPattern::reference_set(mesh.electrode_count()))?
        .into_iter()
        .map(|s| s.electrode_potentials)
        .collect())
}

/// `(Σ‖a_m − b_m‖²)^{1/2} / (Σ‖b_m‖²)^{1/2}`.
pub fn relative_error(a: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.iter().zip(reference) {
        for (p, q) in x.iter().zip(y) {
            num += (p - q) * (p - q);
            den += q * q;
        }
    }
    (num / den).sqrt()
}

/// `d_U` between the hat model and the box model on one mesh.
pub fn relative_difference(
    mesh: &Arc<Mesh>,
    sigma: &ConductivityField,
    zeta_box: &ConductanceProfile,
    zeta_hat: &ConductanceProfile,
) -> Result<f64> {
    if zeta_box.layout() != zeta_hat.layout() {
        return Err(Error::Contract("profiles use different layouts".into()));
    }
    let reference = reference_potentials(mesh, sigma, zeta_box)?;
    let other = reference_potentials(mesh, sigma, zeta_hat)?;
    Ok(relative_error(&other, &reference))
}

/// `n` logarithmically spaced ratios `σ/ζ_el` from `lo` to `hi`.
pub fn ratio_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

/// The default sweep, twenty ratios over `[1e-4, 10]`.
pub fn default_ratios() -> Vec<f64> {
    ratio_grid(20, 1e-4, 10.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub zeta_box: f64,
    pub zeta_hat: f64,
    pub d_u: f64,
    /// The minimizer lies at the edge of the (widened) bracket.
    pub at_bracket_edge: bool,
    pub evaluations: usize,
}

/// Hat half-height minimizing `d_U'` for a box height `zeta_el`, by golden
/// section search over `ln ζ'` in `[ζ/10, 100ζ]`, relative tolerance `1e-4`.
pub fn optimize_scaling(mesh: &Arc<Mesh>, sigma: &ConductivityField, zeta_el: f64) -> Result<ScalingResult> {
    if !(zeta_el > 0.0 && zeta_el.is_finite()) {
        return Err(Error::Parameter(format!("box height must be positive, got {zeta_el}")));
    }
    let layout = mesh.layout().clone();
    let boxp = ConductanceProfile::uniform(&layout, ProfileKind::Box, zeta_el)?;
    let reference = reference_potentials(mesh, sigma, &boxp)?;
    let mut evaluations = 0;
    let mut objective = |x: f64| -> Result<f64> {
        evaluations += 1;
        let hat = ConductanceProfile::uniform(&layout, ProfileKind::Hat, x.exp())?;
        Ok(relative_error(&reference_potentials(mesh, sigma, &hat)?, &reference))
    };
    let (mut lo, mut hi) = ((zeta_el / 10.0).ln(), (100.0 * zeta_el).ln());
    let mut best = golden_section(&mut objective, lo, hi, 1e-4)?;
    let mut widened = false;
    loop {
        let near_lo = best.0 - lo < 1e-3;
        let near_hi = hi - best.0 < 1e-3;
        if !(near_lo || near_hi) || widened {
            let at_bracket_edge = near_lo || near_hi;
            return Ok(ScalingResult {
                zeta_box: zeta_el,
                zeta_hat: best.0.exp(),
                d_u: best.1,
                at_bracket_edge,
                evaluations,
            });
        }
        widened = true;
        let width = hi - lo;
        if near_lo {
            (lo, hi) = (lo - width, lo + 0.1 * width);
        } else {
            (lo, hi) = (hi - 0.1 * width, hi + width);
        }
        best = golden_section(&mut objective, lo, hi, 1e-4)?;
    }
}

/// Minimizes a unimodal function on `[a, b]` until the bracket is shorter
/// than `tol`. Returns `(argmin, min)`.
pub fn golden_section(
    f: &mut impl FnMut(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > tol {
        if fc < fd {
            (b, d, fd) = (d, c, fc);
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            (a, c, fc) = (c, d, fd);
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc < fd { (c, fc) } else { (d, fd) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferenceSample {
    pub ratio: f64,
    pub d_u: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferenceCurve {
    pub level: u32,
    pub samples: Vec<DifferenceSample>,
}

impl DifferenceCurve {
    /// Largest `d_U` and its ratio.
    pub fn peak(&self) -> Option<(f64, f64)> {
        self.samples
            .iter()
            .filter_map(|s| s.d_u.map(|d| (s.ratio, d)))
            .max_by(|x, y| x.1.total_cmp(&y.1))
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["ratio", "d_U"])?;
        for s in &self.samples {
            w.write_record([fmt(s.ratio), s.d_u.map_or_else(|| "nan".into(), fmt)])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

/// `d_U` at equal parameters for each ratio `σ/ζ_el`, with `σ = 1`. Failed
/// points are recorded rather than aborting the sweep.
pub fn difference_curve(mesh: &Arc<Mesh>, ratios: &[f64]) -> DifferenceCurve {
    let sigma = ConductivityField::Constant(1.0);
    let layout = mesh.layout().clone();
    let samples = ratios
        .par_iter()
        .map(|&ratio| {
            let run = || -> Result<f64> {
                let z = 1.0 / ratio;
                let b = ConductanceProfile::uniform(&layout, ProfileKind::Box, z)?;
                let h = ConductanceProfile::uniform(&layout, ProfileKind::Hat, z)?;
                let d = relative_difference(mesh, &sigma, &b, &h)?;
                if d.is_finite() {
                    Ok(d)
                } else {
                    Err(Error::Numerical(format!("d_U not finite at ratio {ratio}")))
                }
            };
            match run() {
                Ok(d) => DifferenceSample { ratio, d_u: Some(d), error: None },
                Err(e) => DifferenceSample { ratio, d_u: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    DifferenceCurve {
        level: mesh.level(),
        samples,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSample {
    pub ratio: f64,
    pub result: Option<ScalingResult>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub level: u32,
    pub samples: Vec<ScalingSample>,
}

impl ScalingCurve {
    pub fn peak(&self) -> Option<(f64, f64)> {
        self.samples
            .iter()
            .filter_map(|s| s.result.as_ref().map(|r| (s.ratio, r.d_u)))
            .max_by(|x, y| x.1.total_cmp(&y.1))
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["zeta_el", "zeta_el_opt", "d_U_opt"])?;
        for s in &self.samples {
            match &s.result {
                Some(r) => w.write_record([fmt(r.zeta_box), fmt(r.zeta_hat), fmt(r.d_u)])?,
                None => w.write_record([fmt(1.0 / s.ratio), "nan".into(), "nan".into()])?,
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Optimal hat scaling for each ratio `σ/ζ_el`, with `σ = 1`.
pub fn scaling_curve(mesh: &Arc<Mesh>, ratios: &[f64]) -> ScalingCurve {
    let sigma = ConductivityField::Constant(1.0);
    let samples = ratios
        .par_iter()
        .map(|&ratio| match optimize_scaling(mesh, &sigma, 1.0 / ratio) {
            Ok(r) => ScalingSample { ratio, result: Some(r), error: None },
            Err(e) => ScalingSample { ratio, result: None, error: Some(e.to_string()) },
        })
        .collect();
    ScalingCurve {
        level: mesh.level(),
        samples,
    }
}

/// Box heights whose ratios `sigma_mean / ζ` are log-uniform on `[lo, hi]`.
pub fn random_box_heights(electrodes: usize, sigma_mean: f64, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..electrodes)
        .map(|_| sigma_mean / rng.gen_range(lo.ln()..hi.ln()).exp())
        .collect()
}

/// Hat half-heights matched to box heights by [`optimize_scaling`] on a
/// coarse eight-electrode mesh, using that `d_U` depends on `σ/ζ` only.
pub fn matched_hat_heights(box_heights: &[f64], sigma_mean: f64, level: u32) -> Result<Vec<f64>> {
    let mesh = Arc::new(Mesh::build(level, &ElectrodeLayout::default8(), ElementOrder::Linear)?);
    let sigma = ConductivityField::Constant(1.0);
    box_heights
        .par_iter()
        .map(|&z| Ok(sigma_mean * optimize_scaling(&mesh, &sigma, z / sigma_mean)?.zeta_hat))
        .collect()
}

/// One forward model in a convergence study.
#[derive(Clone, Debug)]
pub struct ModelCase {
    pub label: String,
    pub sigma: ConductivityField,
    pub profile: ConductanceProfile,
}

impl ModelCase {
    pub fn new(label: impl Into<String>, sigma: ConductivityField, profile: ConductanceProfile) -> Self {
        Self {
            label: label.into(),
            sigma,
            profile,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub model: String,
    pub order: ElementOrder,
    pub level: u32,
    pub h: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub model: String,
    pub order: ElementOrder,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub reference_level: u32,
    pub rows: Vec<RateRow>,
    pub fits: Vec<RateFit>,
}

impl RateTable {
    pub fn slope(&self, model: &str, order: ElementOrder) -> Option<f64> {
        self.fits
            .iter()
            .find(|f| f.model == model && f.order == order)
            .map(|f| f.slope)
    }

    pub fn errors(&self, model: &str, order: ElementOrder) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.model == model && r.order == order)
            .map(|r| (r.h, r.error))
            .collect()
    }

    /// `model, order, h, error, slope`, the fitted slope repeated per row.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "order", "h", "error", "slope"])?;
        for r in &self.rows {
            let slope = self.slope(&r.model, r.order).unwrap_or(f64::NAN);
            w.write_record([
                r.model.clone(),
                r.order.degree().to_string(),
                fmt(r.h),
                fmt(r.error),
                format!("{slope:.4}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Least-squares slope of `ln error` against `ln h` over the `window`
/// smallest `h`.
pub fn fit_slope(samples: &[(f64, f64)], window: usize) -> f64 {
    let mut s: Vec<_> = samples.to_vec();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pts: Vec<(f64, f64)> = s
        .iter()
        .take(window.max(2))
        .map(|&(h, e)| (h.ln(), e.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Levels whose slope is fitted.
pub const SLOPE_WINDOW: usize = 4;

fn check_levels(levels: &[u32], reference_level: u32) -> Result<()> {
    let max = levels.iter().copied().max().ok_or_else(|| Error::Parameter("no levels".into()))?;
    if reference_level < max + 2 {
        return Err(Error::Contract(format!(
            "reference level {reference_level} must exceed the finest level {max} by at least 2"
        )));
    }
    Ok(())
}

/// Relative errors of the electrode potentials against a fine-mesh solution
/// of the same model, for every case and element order.
pub fn convergence_study(
    layout: &ElectrodeLayout,
    cases: &[ModelCase],
    orders: &[ElementOrder],
    levels: &[u32],
    reference_level: u32,
) -> Result<RateTable> {
    check_levels(levels, reference_level)?;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &order in orders {
        let reference_mesh = Arc::new(Mesh::build(reference_level, layout, order)?);
        let references: Vec<_> = cases
            .iter()
            .map(|c| reference_potentials(&reference_mesh, &c.sigma, &c.profile))
            .collect::<Result<_>>()?;
        drop(reference_mesh);
        let per_level: Vec<Vec<RateRow>> = levels
            .par_iter()
            .map(|&level| -> Result<Vec<RateRow>> {
                let mesh = Arc::new(Mesh::build(level, layout, order)?);
                cases
                    .iter()
                    .zip(&references)
                    .map(|(c, r)| {
                        Ok(RateRow {
                            model: c.label.clone(),
                            order,
                            level,
                            h: mesh.h(),
                            error: relative_error(&reference_potentials(&mesh, &c.sigma, &c.profile)?, r),
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for c in cases {
            let samples: Vec<_> = per_level
                .iter()
                .flatten()
                .filter(|r| r.model == c.label)
                .map(|r| (r.h, r.error))
                .collect();
            fits.push(RateFit {
                model: c.label.clone(),
                order,
                slope: fit_slope(&samples, SLOPE_WINDOW),
            });
        }
        rows.extend(per_level.into_iter().flatten());
    }
    rows.sort_by(|a, b| {
        (a.order.degree(), &a.model, a.level).cmp(&(b.order.degree(), &b.model, b.level))
    });
    Ok(RateTable {
        reference_level,
        rows,
        fits,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeRow {
    /// Integral index 1, 2 or 3.
    pub i: usize,
    pub model: String,
    pub level: u32,
    pub h: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeRates {
    pub reference_level: u32,
    pub rows: Vec<DerivativeRow>,
}

impl DerivativeRates {
    /// `(h, δ_i)` for one model, coarse to fine.
    pub fn curve(&self, i: usize, model: &str) -> Vec<(f64, f64)> {
        let mut v: Vec<_> = self
            .rows
            .iter()
            .filter(|r| r.i == i && r.model == model)
            .map(|r| (r.h, r.delta))
            .collect();
        v.sort_by(|a, b| b.0.total_cmp(&a.0));
        v
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "model", "h", "delta"])?;
        for r in &self.rows {
            w.write_record([r.i.to_string(), r.model.clone(), fmt(r.h), fmt(r.delta)])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn derivative_integrals(mesh: &Arc<Mesh>, case: &ModelCase) -> Result<DerivativeIntegrals> {
    let sys = ForwardSystem::new(mesh.clone(), &case.sigma, &case.profile)?;
    let sols = sys.solve_many(&CurrentPattern::reference_set(mesh.electrode_count()))?;
    DerivativeIntegrals::compute(&sols, &case.profile)
}

/// `δ₁, δ₂, δ₃` with piecewise linear elements.
pub fn derivative_convergence(
    layout: &ElectrodeLayout,
    cases: &[ModelCase],
    levels: &[u32],
    reference_level: u32,
) -> Result<DerivativeRates> {
    check_levels(levels, reference_level)?;
    let reference_mesh = Arc::new(Mesh::build(reference_level, layout, ElementOrder::Linear)?);
    let references: Vec<_> = cases
        .iter()
        .map(|c| derivative_integrals(&reference_mesh, c))
        .collect::<Result<_>>()?;
    drop(reference_mesh);
    let per_level: Vec<Vec<DerivativeRow>> = levels
        .par_iter()
        .map(|&level| -> Result<Vec<DerivativeRow>> {
            let mesh = Arc::new(Mesh::build(level, layout, ElementOrder::Linear)?);
            let mut rows = Vec::new();
            for (c, r) in cases.iter().zip(&references) {
                let d = derivative_integrals(&mesh, c)?;
                for i in 1..=3 {
                    rows.push(DerivativeRow {
                        i,
                        model: c.label.clone(),
                        level,
                        h: mesh.h(),
                        delta: relative_matrix_error(d.matrix(i), r.matrix(i)),
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<_> = per_level.into_iter().flatten().collect();
    rows.sort_by(|a, b| (a.i, &a.model, a.level).cmp(&(b.i, &b.model, b.level)));
    Ok(DerivativeRates {
        reference_level,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh(level: u32) -> Arc<Mesh> {
        Arc::new(Mesh::build(level, &ElectrodeLayout::default8(), ElementOrder::Linear).unwrap())
    }

    #[test]
    fn identical_models_have_zero_difference() {
        let m = mesh(4);
        let hat = ConductanceProfile::uniform(m.layout(), ProfileKind::Hat, 20.0).unwrap();
        let d = relative_difference(&m, &ConductivityField::Constant(1.0), &hat, &hat).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn difference_depends_on_ratio_only() {
        let m = mesh(5);
        let d = |s: f64, z: f64| {
            let b = ConductanceProfile::uniform(m.layout(), ProfileKind::Box, z).unwrap();
            let h = ConductanceProfile::uniform(m.layout(), ProfileKind::Hat, z).unwrap();
            relative_difference(&m, &ConductivityField::Constant(s), &b, &h).unwrap()
        };
        let (a, b) = (d(1.0, 20.0), d(10.0, 200.0));
        assert!((a - b).abs() <= 1e-8 * a);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, fx) = golden_section(&mut |x| Ok((x - 0.3) * (x - 0.3) + 2.0), -1.0, 2.0, 1e-8).unwrap();
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn optimum_is_no_worse_than_equal_parameters() {
        let m = mesh(4);
        let sigma = ConductivityField::Constant(1.0);
        let r = optimize_scaling(&m, &sigma, 20.0).unwrap();
        let b = ConductanceProfile::uniform(m.layout(), ProfileKind::Box, 20.0).unwrap();
        let h = ConductanceProfile::uniform(m.layout(), ProfileKind::Hat, 20.0).unwrap();
        assert!(r.d_u <= relative_difference(&m, &sigma, &b, &h).unwrap());
        assert!(!r.at_bracket_edge);
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let s: Vec<_> = (2..8).map(|k| {
            let h = 0.5f64.powi(k);
            (h, 3.0 * h.powf(2.5))
        }).collect();
        assert!((fit_slope(&s, 4) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn reference_level_margin_is_enforced() {
        let layout = ElectrodeLayout::default8();
        let err = convergence_study(&layout, &[], &[ElementOrder::Linear], &[3, 4], 5).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn sweep_records_each_ratio_in_order() {
        let m = mesh(3);
        let ratios = ratio_grid(4, 1e-3, 1.0);
        assert!((ratios[3] - 1.0).abs() < 1e-12 && (ratios[0] - 1e-3).abs() < 1e-15);
        let c = difference_curve(&m, &ratios);
        assert_eq!(c.samples.len(), 4);
        for (s, r) in c.samples.iter().zip(&ratios) {
            assert_eq!(s.ratio, *r);
            assert!(s.d_u.unwrap() >= 0.0);
        }
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn small_convergence_table() {
        let layout = ElectrodeLayout::default8();
        let sigma = ConductivityField::Constant(1.0);
        let cases = [
            ModelCase::new("box", sigma.clone(), ConductanceProfile::uniform(&layout, ProfileKind::Box, 20.0).unwrap()),
            ModelCase::new("hat", sigma, ConductanceProfile::uniform(&layout, ProfileKind::Hat, 20.0).unwrap()),
        ];
        let t = convergence_study(&layout, &cases, &[ElementOrder::Linear], &[3, 4, 5], 7).unwrap();
        assert_eq!(t.rows.len(), 6);
        for model in ["box", "hat"] {
            let e = t.errors(model, ElementOrder::Linear);
            assert!(e.windows(2).all(|w| w[1].1 < w[0].1), "{model}: {e:?}");
            assert!(t.slope(model, ElementOrder::Linear).unwrap() > 1.0);
        }
        let d = derivative_convergence(&layout, &cases, &[3, 4], 6).unwrap();
        assert_eq!(d.rows.len(), 12);
        assert!(d.rows.iter().all(|r| r.delta > 0.0));
    }
}
