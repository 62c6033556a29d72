//! Structured triangulations of the unit square and the electrode layout on
//! its boundary.
//!
//! The boundary is parameterized by arclength `s ∈ [0, 4)`, starting at the
//! corner `(0, 0)` and running counter-clockwise. Every grid square is split
//! by its south-west to north-east diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Perimeter of the unit square.
pub const PERIMETER: f64 = 4.0;

const GRID_TOL: f64 = 1e-9;

/// Polynomial degree of the Lagrange elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ElementOrder {
    Linear,
    Quadratic,
}

impl ElementOrder {
    pub fn degree(self) -> u8 {
        match self {
            ElementOrder::Linear => 1,
            ElementOrder::Quadratic => 2,
        }
    }

    /// Degrees of freedom per triangle.
    pub fn local_dofs(self) -> usize {
        match self {
            ElementOrder::Linear => 3,
            ElementOrder::Quadratic => 6,
        }
    }

    /// Degrees of freedom per boundary edge.
    pub fn edge_dofs(self) -> usize {
        match self {
            ElementOrder::Linear => 2,
            ElementOrder::Quadratic => 3,
        }
    }
}

impl TryFrom<u8> for ElementOrder {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            1 => Ok(ElementOrder::Linear),
            2 => Ok(ElementOrder::Quadratic),
            other => Err(Error::Parameter(format!(
                "element order must be 1 or 2, got {other}"
            ))),
        }
    }
}

impl From<ElementOrder> for u8 {
    fn from(order: ElementOrder) -> u8 {
        order.degree()
    }
}

/// Maps an arclength parameter to the corresponding point of the boundary.
pub fn arclength_to_point(s: f64) -> Result<Point> {
    if !(0.0..PERIMETER).contains(&s) {
        return Err(Error::Domain {
            what: "arclength",
            value: s,
            range: "[0, 4)",
        });
    }
    Ok(match s {
        s if s < 1.0 => [s, 0.0],
        s if s < 2.0 => [1.0, s - 1.0],
        s if s < 3.0 => [3.0 - s, 1.0],
        s => [0.0, 4.0 - s],
    })
}

/// Unit tangent (counter-clockwise) and outward normal of the side containing
/// `s`. The side index is `floor(s)`.
pub fn side_frame(s: f64) -> (Point, Point) {
    match s.rem_euclid(PERIMETER).floor() as u8 {
        0 => ([1.0, 0.0], [0.0, -1.0]),
        1 => ([0.0, 1.0], [1.0, 0.0]),
        2 => ([-1.0, 0.0], [0.0, 1.0]),
        _ => ([0.0, -1.0], [-1.0, 0.0]),
    }
}

/// Electrode positions as arclength intervals `[a_m, b_m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    arcs: Vec<[f64; 2]>,
}

impl ElectrodeLayout {
    /// Validates a layout: at least two electrodes, positive widths, no
    /// electrode touching a corner, and positive gaps between all pairs.
    pub fn new(arcs: Vec<[f64; 2]>) -> Result<Self> {
        if arcs.len() < 2 {
            return Err(Error::Layout(format!(
                "at least two electrodes required, got {}",
                arcs.len()
            )));
        }
        for (m, &[a, b]) in arcs.iter().enumerate() {
            if !(a.is_finite() && b.is_finite()) || !(0.0..PERIMETER).contains(&a) || b > PERIMETER
            {
                return Err(Error::Layout(format!(
                    "electrode {} arc [{a}, {b}) not inside [0, 4)",
                    m + 1
                )));
            }
            if b <= a {
                return Err(Error::Layout(format!(
                    "electrode {} has nonpositive width",
                    m + 1
                )));
            }
            let side = a.floor();
            if a <= side || b >= side + 1.0 {
                return Err(Error::Layout(format!(
                    "electrode {} arc [{a}, {b}) touches or spans a corner",
                    m + 1
                )));
            }
        }
        let mut sorted = arcs.clone();
        sorted.sort_by(|x, y| x[0].total_cmp(&y[0]));
        for pair in sorted.windows(2) {
            if pair[1][0] <= pair[0][1] {
                return Err(Error::Layout(format!(
                    "arcs [{}, {}) and [{}, {}) overlap or touch",
                    pair[0][0], pair[0][1], pair[1][0], pair[1][1]
                )));
            }
        }
        Ok(Self { arcs })
    }

    /// `per_side` electrodes of equal `width` on every side, centered in equal
    /// sub-intervals of the side. Electrodes are numbered counter-clockwise
    /// from the bottom-left corner.
    pub fn uniform(per_side: usize, width: f64) -> Result<Self> {
        let mut arcs = Vec::with_capacity(4 * per_side);
        for side in 0..4 {
            for k in 0..per_side {
                let center = side as f64 + (k as f64 + 0.5) / per_side as f64;
                arcs.push([center - width / 2.0, center + width / 2.0]);
            }
        }
        Self::new(arcs)
    }

    /// Eight electrodes of width 1/4, two per side.
    pub fn default8() -> Self {
        Self::uniform(2, 0.25).expect("valid built-in layout")
    }

    /// Twelve electrodes of width 1/8, three per side, all endpoints and
    /// midpoints on the 1/16 grid.
    pub fn default12() -> Self {
        let mut arcs = Vec::with_capacity(12);
        for side in 0..4 {
            let s = side as f64;
            arcs.push([s + 0.125, s + 0.25]);
            arcs.push([s + 0.4375, s + 0.5625]);
            arcs.push([s + 0.75, s + 0.875]);
        }
        Self::new(arcs).expect("valid built-in layout")
    }

    /// Sixteen electrodes of width 1/8, four per side.
    pub fn default16() -> Self {
        Self::uniform(4, 0.125).expect("valid built-in layout")
    }

    /// Looks up one of the built-in layouts by name.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "default8" => Ok(Self::default8()),
            "default12" => Ok(Self::default12()),
            "default16" => Ok(Self::default16()),
            other => Err(Error::Layout(format!("unknown layout name {other:?}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    pub fn arcs(&self) -> &[[f64; 2]] {
        &self.arcs
    }

    pub fn arc(&self, m: usize) -> [f64; 2] {
        self.arcs[m]
    }

    pub fn width(&self, m: usize) -> f64 {
        self.arcs[m][1] - self.arcs[m][0]
    }

    /// Electrode (0-based) whose closed arc contains `s`.
    pub fn electrode_at(&self, s: f64) -> Option<usize> {
        self.arcs.iter().position(|&[a, b]| a <= s && s <= b)
    }

    /// Same layout with every arc shifted along the boundary by `shift(m)`.
    pub fn shifted(&self, shift: impl Fn(usize) -> f64) -> Result<Self> {
        Self::new(
            self.arcs
                .iter()
                .enumerate()
                .map(|(m, &[a, b])| [a + shift(m), b + shift(m)])
                .collect(),
        )
    }
}

/// One boundary edge, oriented counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    /// Reference arclength interval `[s0, s1]`.
    pub arc: [f64; 2],
    /// 0-based electrode index if the edge lies inside an electrode arc.
    pub electrode: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    level: u32,
    order: ElementOrder,
    layout: ElectrodeLayout,
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    dof_coords: Vec<Point>,
    tri_dofs: Vec<usize>,
    edge_dofs: Vec<usize>,
    pub(crate) symbolic: crate::forward::SymbolicCache,
}

fn on_grid(value: f64, width: f64) -> bool {
    let r = value / width;
    (r - r.round()).abs() < GRID_TOL
}

impl Mesh {
    /// Uniform mesh with `2^level + 1` nodes per side.
    pub fn build(level: u32, layout: &ElectrodeLayout, order: ElementOrder) -> Result<Self> {
        if !(2..=12).contains(&level) {
            return Err(Error::Parameter(format!(
                "refinement level must be in 2..=12, got {level}"
            )));
        }
        let n = 1usize << level;
        let h = 1.0 / n as f64;
        for &[a, b] in layout.arcs() {
            for value in [a, b] {
                if !on_grid(value, h) {
                    return Err(Error::Alignment { value, width: h });
                }
            }
        }

        let np = n + 1;
        let vid = |i: usize, j: usize| j * np + i;
        let mut nodes = Vec::with_capacity(np * np);
        for j in 0..np {
            for i in 0..np {
                nodes.push([i as f64 * h, j as f64 * h]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (sw, se, ne, nw) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                triangles.push([sw, se, ne]);
                triangles.push([sw, ne, nw]);
            }
        }

        let mut boundary_edges = Vec::with_capacity(4 * n);
        for e in 0..4 * n {
            let (side, k) = (e / n, e % n);
            let pair = match side {
                0 => [vid(k, 0), vid(k + 1, 0)],
                1 => [vid(n, k), vid(n, k + 1)],
                2 => [vid(n - k, n), vid(n - k - 1, n)],
                _ => [vid(0, n - k), vid(0, n - k - 1)],
            };
            let arc = [e as f64 * h, (e + 1) as f64 * h];
            let mid = 0.5 * (arc[0] + arc[1]);
            let electrode = layout
                .arcs()
                .iter()
                .position(|&[a, b]| a <= mid && mid <= b);
            boundary_edges.push(BoundaryEdge {
                nodes: pair,
                arc,
                electrode,
            });
        }

        let (dof_coords, tri_dofs, edge_dofs) = match order {
            ElementOrder::Linear => {
                let tri_dofs = triangles.iter().flatten().copied().collect();
                let edge_dofs = boundary_edges.iter().flat_map(|e| e.nodes).collect();
                (nodes.clone(), tri_dofs, edge_dofs)
            }
            ElementOrder::Quadratic => {
                // P2 dofs live on the grid of the next level: vertex (i, j)
                // becomes (2i, 2j) and an edge midpoint sits at the index sum.
                let fp = 2 * n + 1;
                let fh = h / 2.0;
                let mut coords = Vec::with_capacity(fp * fp);
                for j in 0..fp {
                    for i in 0..fp {
                        coords.push([i as f64 * fh, j as f64 * fh]);
                    }
                }
                let fine = |v: usize| (2 * (v % np), 2 * (v / np));
                let mid = |a: usize, b: usize| {
                    let (ia, ja) = fine(a);
                    let (ib, jb) = fine(b);
                    ((ja + jb) / 2) * fp + (ia + ib) / 2
                };
                let vertex = |v: usize| {
                    let (i, j) = fine(v);
                    j * fp + i
                };
                let mut tri_dofs = Vec::with_capacity(6 * triangles.len());
                for &[a, b, c] in &triangles {
                    tri_dofs.extend([
                        vertex(a),
                        vertex(b),
                        vertex(c),
                        mid(a, b),
                        mid(b, c),
                        mid(c, a),
                    ]);
                }
                let mut edge_dofs = Vec::with_capacity(3 * boundary_edges.len());
                for e in &boundary_edges {
                    let [a, b] = e.nodes;
                    edge_dofs.extend([vertex(a), vertex(b), mid(a, b)]);
                }
                (coords, tri_dofs, edge_dofs)
            }
        };

        Ok(Self {
            level,
            order,
            layout: layout.clone(),
            nodes,
            triangles,
            boundary_edges,
            dof_coords,
            tri_dofs,
            edge_dofs,
            symbolic: Default::default(),
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn order(&self) -> ElementOrder {
        self.order
    }

    pub fn layout(&self) -> &ElectrodeLayout {
        &self.layout
    }

    pub fn electrode_count(&self) -> usize {
        self.layout.len()
    }

    /// Boundary edge width `2^{-level}` of the (P1) grid.
    pub fn h(&self) -> f64 {
        1.0 / (1u64 << self.level) as f64
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn dof_count(&self) -> usize {
        self.dof_coords.len()
    }

    pub fn dof_coords(&self) -> &[Point] {
        &self.dof_coords
    }

    /// Global dofs of triangle `t`: the three vertices, then (P2) the
    /// midpoints of edges 01, 12, 20.
    pub fn triangle_dofs(&self, t: usize) -> &[usize] {
        let k = self.order.local_dofs();
        &self.tri_dofs[k * t..k * (t + 1)]
    }

    /// Global dofs of boundary edge `e`: start, end, then (P2) midpoint.
    pub fn edge_dofs(&self, e: usize) -> &[usize] {
        let k = self.order.edge_dofs();
        &self.edge_dofs[k * e..k * (e + 1)]
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Physical endpoints of boundary edge `e`.
    pub fn edge_points(&self, e: usize) -> [Point; 2] {
        let [a, b] = self.boundary_edges[e].nodes;
        [self.nodes[a], self.nodes[b]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [p, q, r] = self.triangle_points(t);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    /// Boundary edges of electrode `m`, numbered from 1, in arclength order.
    pub fn electrode_edges(&self, m: usize) -> Result<Vec<usize>> {
        if m == 0 || m > self.layout.len() {
            return Err(Error::Index {
                what: "electrode",
                index: m,
                valid: format!("1..={}", self.layout.len()),
            });
        }
        Ok(self
            .boundary_edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.electrode == Some(m - 1))
            .map(|(i, _)| i)
            .collect())
    }

    /// Copy of the mesh with every node (and dof) moved by `map`. Reference
    /// arclengths are kept, so coefficients defined on the reference boundary
    /// follow the deformation. `map` must be affine on each triangle for P2
    /// midpoints to stay midpoints.
    pub fn mapped(&self, map: impl Fn(Point) -> Point) -> Self {
        let mut out = self.clone();
        out.nodes.iter_mut().for_each(|p| *p = map(*p));
        out.dof_coords.iter_mut().for_each(|p| *p = map(*p));
        out
    }

    pub fn to_json(&self) -> MeshJson {
        MeshJson {
            level: self.level,
            order: self.order,
            electrodes: self.layout.arcs.clone(),
            nodes: self.nodes.clone(),
            triangles: self.triangles.clone(),
            boundary_edges: self.boundary_edges.clone(),
        }
    }
}

/// Serialized form of a mesh.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshJson {
    pub level: u32,
    pub order: ElementOrder,
    pub electrodes: Vec<[f64; 2]>,
    pub nodes: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
}
