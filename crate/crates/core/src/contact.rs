//! Boundary contact conductance `ζ` as a function of arclength.
//!
//! On every electrode `ζ` is piecewise linear between knots; it vanishes on
//! the gaps. The box model is constant on each electrode, the hat model rises
//! linearly from zero at both electrode ends to twice the half-height
//! parameter at the electrode midpoint, so both models integrate to
//! `height * width` over an electrode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{ElectrodeLayout, PERIMETER};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Box,
    Hat,
    /// Piecewise linear with user-given knots.
    Custom,
}

impl std::str::FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(ProfileKind::Box),
            "hat" => Ok(ProfileKind::Hat),
            "custom" => Ok(ProfileKind::Custom),
            other => Err(Error::Parameter(format!("unknown profile kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProfileKind::Box => "box",
            ProfileKind::Hat => "hat",
            ProfileKind::Custom => "custom",
        })
    }
}

/// A maximal sub-interval of an electrode on which `ζ` is linear.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub electrode: usize,
    pub arc: [f64; 2],
    /// One-sided limits of `ζ` at the two ends of `arc`.
    pub values: [f64; 2],
}

impl Piece {
    pub fn value_at(&self, s: f64) -> f64 {
        let t = (s - self.arc[0]) / (self.arc[1] - self.arc[0]);
        self.values[0] + t * (self.values[1] - self.values[0])
    }

    pub fn slope(&self) -> f64 {
        (self.values[1] - self.values[0]) / (self.arc[1] - self.arc[0])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConductanceProfile {
    layout: ElectrodeLayout,
    kind: ProfileKind,
    heights: Vec<f64>,
    /// Per electrode, knots `(s, ζ(s))` spanning the whole arc.
    knots: Vec<Vec<[f64; 2]>>,
}

fn check_heights(layout: &ElectrodeLayout, heights: &[f64]) -> Result<()> {
    if heights.len() != layout.len() {
        return Err(Error::Parameter(format!(
            "{} heights given for {} electrodes",
            heights.len(),
            layout.len()
        )));
    }
    if let Some((m, h)) = heights
        .iter()
        .enumerate()
        .find(|(_, h)| !(h.is_finite() && **h > 0.0))
    {
        return Err(Error::Parameter(format!(
            "contact height of electrode {} must be positive, got {h}",
            m + 1
        )));
    }
    Ok(())
}

fn shape_knots(kind: ProfileKind, [a, b]: [f64; 2], height: f64) -> Vec<[f64; 2]> {
    match kind {
        ProfileKind::Box => vec![[a, height], [b, height]],
        ProfileKind::Hat => vec![[a, 0.0], [0.5 * (a + b), 2.0 * height], [b, 0.0]],
        ProfileKind::Custom => unreachable!("custom profiles carry their own knots"),
    }
}

impl ConductanceProfile {
    /// Box or hat profile with one positive height (box) or half-height (hat)
    /// per electrode.
    pub fn new(layout: &ElectrodeLayout, kind: ProfileKind, heights: &[f64]) -> Result<Self> {
        if kind == ProfileKind::Custom {
            return Err(Error::Parameter(
                "custom profiles are built with ConductanceProfile::custom".into(),
            ));
        }
        check_heights(layout, heights)?;
        let knots = layout
            .arcs()
            .iter()
            .zip(heights)
            .map(|(&arc, &h)| shape_knots(kind, arc, h))
            .collect();
        Ok(Self {
            layout: layout.clone(),
            kind,
            heights: heights.to_vec(),
            knots,
        })
    }

    /// Same height on every electrode.
    pub fn uniform(layout: &ElectrodeLayout, kind: ProfileKind, height: f64) -> Result<Self> {
        Self::new(layout, kind, &vec![height; layout.len()])
    }

    /// Piecewise linear profile from explicit knots. Each electrode's knots
    /// must start at `a_m`, end at `b_m`, increase strictly, be nonnegative and
    /// not all zero. The reported height is the mean value over the electrode.
    pub fn custom(layout: &ElectrodeLayout, knots: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        if knots.len() != layout.len() {
            return Err(Error::Parameter(format!(
                "{} knot lists given for {} electrodes",
                knots.len(),
                layout.len()
            )));
        }
        let mut heights = Vec::with_capacity(knots.len());
        for (m, (k, &[a, b])) in knots.iter().zip(layout.arcs()).enumerate() {
            let bad = |msg: &str| Error::Parameter(format!("electrode {}: {msg}", m + 1));
            if k.len() < 2 {
                return Err(bad("need at least two knots"));
            }
            if (k[0][0] - a).abs() > 1e-12 || (k[k.len() - 1][0] - b).abs() > 1e-12 {
                return Err(bad("knots must span the electrode arc"));
            }
            if k.windows(2).any(|w| w[1][0] <= w[0][0]) {
                return Err(bad("knot positions must increase"));
            }
            if k.iter().any(|p| !(p[1].is_finite() && p[1] >= 0.0)) {
                return Err(bad("knot values must be nonnegative"));
            }
            let integral: f64 = k
                .windows(2)
                .map(|w| 0.5 * (w[0][1] + w[1][1]) * (w[1][0] - w[0][0]))
                .sum();
            if integral <= 0.0 {
                return Err(bad("conductance vanishes on the whole electrode"));
            }
            heights.push(integral / (b - a));
        }
        Ok(Self {
            layout: layout.clone(),
            kind: ProfileKind::Custom,
            heights,
            knots,
        })
    }

    pub fn layout(&self) -> &ElectrodeLayout {
        &self.layout
    }

    pub fn kind(&self) -> ProfileKind {
        self.kind
    }

    /// Box heights, hat half-heights, or custom mean values.
    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn knots(&self, m: usize) -> &[[f64; 2]] {
        &self.knots[m]
    }

    /// Same shape with new heights. For custom profiles the knots are scaled.
    pub fn with_heights(&self, heights: &[f64]) -> Result<Self> {
        match self.kind {
            ProfileKind::Custom => {
                check_heights(&self.layout, heights)?;
                let knots = self
                    .knots
                    .iter()
                    .zip(heights.iter().zip(&self.heights))
                    .map(|(k, (new, old))| k.iter().map(|&[s, v]| [s, v * new / old]).collect())
                    .collect();
                Self::custom(&self.layout, knots)
            }
            kind => Self::new(&self.layout, kind, heights),
        }
    }

    /// Same kind and heights on another layout with the same electrode count.
    pub fn with_layout(&self, layout: &ElectrodeLayout) -> Result<Self> {
        if layout.len() != self.layout.len() {
            return Err(Error::Parameter("electrode count differs".into()));
        }
        match self.kind {
            ProfileKind::Custom => {
                let knots = self
                    .knots
                    .iter()
                    .zip(self.layout.arcs().iter().zip(layout.arcs()))
                    .map(|(k, (&[a0, b0], &[a1, b1]))| {
                        k.iter()
                            .map(|&[s, v]| [a1 + (s - a0) * (b1 - a1) / (b0 - a0), v])
                            .collect()
                    })
                    .collect();
                Self::custom(layout, knots)
            }
            kind => Self::new(layout, kind, &self.heights),
        }
    }

    #[cfg(test)]
    pub(crate) fn zero_electrode_for_tests(&mut self, m: usize) {
        self.knots[m].iter_mut().for_each(|k| k[1] = 0.0);
    }

    /// `ζ(s)`. At a jump (box ends) the value inside the electrode is returned.
    pub fn eval(&self, s: f64) -> Result<f64> {
        if !(0.0..PERIMETER).contains(&s) {
            return Err(Error::Domain {
                what: "arclength",
                value: s,
                range: "[0, 4)",
            });
        }
        Ok(self.value(s))
    }

    pub(crate) fn value(&self, s: f64) -> f64 {
        let Some(m) = self.layout.electrode_at(s) else {
            return 0.0;
        };
        let k = &self.knots[m];
        let i = k.partition_point(|p| p[0] <= s).clamp(1, k.len() - 1);
        let (p, q) = (k[i - 1], k[i]);
        p[1] + (s - p[0]) / (q[0] - p[0]) * (q[1] - p[1])
    }

    /// `∫_{E_m} ζ dS`.
    pub fn electrode_integral(&self, m: usize) -> f64 {
        self.knots[m]
            .windows(2)
            .map(|w| 0.5 * (w[0][1] + w[1][1]) * (w[1][0] - w[0][0]))
            .sum()
    }

    /// Pieces of `ζ` overlapping the arclength interval `[s0, s1]`, clipped to
    /// it, in increasing order. Gaps produce no pieces.
    pub fn pieces_in(&self, s0: f64, s1: f64) -> Vec<Piece> {
        let mut out = Vec::new();
        for (m, &[a, b]) in self.layout.arcs().iter().enumerate() {
            if b <= s0 || a >= s1 {
                continue;
            }
            for w in self.knots[m].windows(2) {
                let (p, q) = (w[0], w[1]);
                let lo = p[0].max(s0);
                let hi = q[0].min(s1);
                if hi <= lo {
                    continue;
                }
                let at = |s: f64| p[1] + (s - p[0]) / (q[0] - p[0]) * (q[1] - p[1]);
                out.push(Piece {
                    electrode: m,
                    arc: [lo, hi],
                    values: [at(lo), at(hi)],
                });
            }
        }
        out.sort_by(|x, y| x.arc[0].total_cmp(&y.arc[0]));
        out
    }

    /// `∂ζ/∂height_m` restricted to electrode `m`, evaluated inside a piece.
    /// All kinds are linear in their heights.
    pub fn height_sensitivity(&self, piece: &Piece, s: f64) -> f64 {
        piece.value_at(s) / self.heights[piece.electrode]
    }

    pub fn arclength_derivative(&self) -> ConductanceDerivative {
        let mut smooth_part = Vec::new();
        let mut delta_part = Vec::new();
        for (m, k) in self.knots.iter().enumerate() {
            for w in k.windows(2) {
                smooth_part.push(SlopeSegment {
                    electrode: m,
                    arc: [w[0][0], w[1][0]],
                    slope: (w[1][1] - w[0][1]) / (w[1][0] - w[0][0]),
                });
            }
            let (first, last) = (k[0], k[k.len() - 1]);
            if first[1] != 0.0 {
                delta_part.push(Delta {
                    electrode: m,
                    s: first[0],
                    weight: first[1],
                });
            }
            if last[1] != 0.0 {
                delta_part.push(Delta {
                    electrode: m,
                    s: last[0],
                    weight: -last[1],
                });
            }
        }
        ConductanceDerivative {
            smooth_part,
            delta_part,
        }
    }

    pub fn to_json(&self) -> ProfileJson {
        ProfileJson {
            kind: self.kind,
            electrodes: self
                .layout
                .arcs()
                .iter()
                .enumerate()
                .map(|(m, &arc)| ElectrodeJson {
                    arc,
                    height: self.heights[m],
                    knots: (self.kind == ProfileKind::Custom).then(|| self.knots[m].clone()),
                })
                .collect(),
        }
    }

    pub fn from_json(json: &ProfileJson) -> Result<Self> {
        let layout = ElectrodeLayout::new(json.electrodes.iter().map(|e| e.arc).collect())?;
        match json.kind {
            ProfileKind::Custom => {
                let knots = json
                    .electrodes
                    .iter()
                    .enumerate()
                    .map(|(m, e)| {
                        e.knots.clone().ok_or_else(|| {
                            Error::Parameter(format!("electrode {} lacks knots", m + 1))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::custom(&layout, knots)
            }
            kind => {
                let heights: Vec<f64> = json.electrodes.iter().map(|e| e.height).collect();
                Self::new(&layout, kind, &heights)
            }
        }
    }
}

/// Linear part of `dζ/ds` on one knot interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeSegment {
    pub electrode: usize,
    pub arc: [f64; 2],
    pub slope: f64,
}

/// Point mass of `dζ/ds` at a jump of `ζ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Delta {
    pub electrode: usize,
    pub s: f64,
    pub weight: f64,
}

/// Distributional arclength derivative of a profile.
#[derive(Clone, Debug, PartialEq)]
pub struct ConductanceDerivative {
    pub smooth_part: Vec<SlopeSegment>,
    pub delta_part: Vec<Delta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeJson {
    pub arc: [f64; 2],
    pub height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<[f64; 2]>>,
}

/// `{ kind, electrodes: [{arc: [a, b], height}] }`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileJson {
    pub kind: ProfileKind,
    pub electrodes: Vec<ElectrodeJson>,
}
