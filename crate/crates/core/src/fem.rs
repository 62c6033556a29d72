//! Lagrange P1/P2 shape functions and quadrature rules.

use crate::mesh::{ElementOrder, Point};

/// Gauss–Legendre nodes and weights on `[0, 1]`, exact up to degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> &'static [(f64, f64)] {
    const G1: [(f64, f64); 1] = [(0.5, 1.0)];
    const G2: [(f64, f64); 2] = [
        (0.211_324_865_405_187_1, 0.5),
        (0.788_675_134_594_812_9, 0.5),
    ];
    const G3: [(f64, f64); 3] = [
        (0.112_701_665_379_258_3, 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.887_298_334_620_741_7, 5.0 / 18.0),
    ];
    const G4: [(f64, f64); 4] = [
        (0.069_431_844_202_973_71, 0.173_927_422_568_726_93),
        (0.330_009_478_207_571_87, 0.326_072_577_431_273_07),
        (0.669_990_521_792_428_1, 0.326_072_577_431_273_07),
        (0.930_568_155_797_026_3, 0.173_927_422_568_726_93),
    ];
    match n {
        1 => &G1,
        2 => &G2,
        3 => &G3,
        4 => &G4,
        _ => panic!("Gauss-Legendre rule with {n} points not tabulated"),
    }
}

/// Symmetric triangle rule as (barycentric point, weight / area).
pub fn triangle_rule(degree: u32) -> &'static [([f64; 3], f64)] {
    const D1: [([f64; 3], f64); 1] = [([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1.0)];
    const D2: [([f64; 3], f64); 3] = [
        ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
        ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
        ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
    ];
    // Dunavant, degree 4
    const A: f64 = 0.445_948_490_915_965;
    const WA: f64 = 0.223_381_589_678_011;
    const B: f64 = 0.091_576_213_509_771;
    const WB: f64 = 0.109_951_743_655_322;
    const D4: [([f64; 3], f64); 6] = [
        ([A, A, 1.0 - 2.0 * A], WA),
        ([A, 1.0 - 2.0 * A, A], WA),
        ([1.0 - 2.0 * A, A, A], WA),
        ([B, B, 1.0 - 2.0 * B], WB),
        ([B, 1.0 - 2.0 * B, B], WB),
        ([1.0 - 2.0 * B, B, B], WB),
    ];
    match degree {
        0 | 1 => &D1,
        2 => &D2,
        3 | 4 => &D4,
        _ => panic!("no triangle rule of degree {degree}"),
    }
}

/// Affine triangle geometry: area and barycentric gradients.
#[derive(Clone, Copy, Debug)]
pub struct TriangleGeometry {
    pub area: f64,
    pub grad_bary: [Point; 3],
    pub vertices: [Point; 3],
}

impl TriangleGeometry {
    pub fn new(vertices: [Point; 3]) -> Self {
        let [p0, p1, p2] = vertices;
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let inv = 1.0 / det;
        let grad_bary = [
            [(p1[1] - p2[1]) * inv, (p2[0] - p1[0]) * inv],
            [(p2[1] - p0[1]) * inv, (p0[0] - p2[0]) * inv],
            [(p0[1] - p1[1]) * inv, (p1[0] - p0[0]) * inv],
        ];
        Self {
            area: 0.5 * det,
            grad_bary,
            vertices,
        }
    }

    pub fn point(&self, bary: [f64; 3]) -> Point {
        let v = &self.vertices;
        [
            bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0],
            bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1],
        ]
    }

    /// Physical gradients of the local basis at `bary`, in mesh dof order.
    pub fn basis_gradients(&self, order: ElementOrder, bary: [f64; 3], out: &mut [Point]) {
        let g = &self.grad_bary;
        match order {
            ElementOrder::Linear => out[..3].copy_from_slice(g),
            ElementOrder::Quadratic => {
                for i in 0..3 {
                    let f = 4.0 * bary[i] - 1.0;
                    out[i] = [f * g[i][0], f * g[i][1]];
                }
                for (k, (a, b)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
                    out[3 + k] = [
                        4.0 * (bary[a] * g[b][0] + bary[b] * g[a][0]),
                        4.0 * (bary[a] * g[b][1] + bary[b] * g[a][1]),
                    ];
                }
            }
        }
    }

    pub fn basis_values(order: ElementOrder, bary: [f64; 3], out: &mut [f64]) {
        match order {
            ElementOrder::Linear => out[..3].copy_from_slice(&bary),
            ElementOrder::Quadratic => {
                for i in 0..3 {
                    out[i] = bary[i] * (2.0 * bary[i] - 1.0);
                }
                out[3] = 4.0 * bary[0] * bary[1];
                out[4] = 4.0 * bary[1] * bary[2];
                out[5] = 4.0 * bary[2] * bary[0];
            }
        }
    }
}

/// Trace basis on a boundary edge at local parameter `t ∈ [0, 1]`, ordered
/// start, end, (midpoint).
pub fn edge_basis(order: ElementOrder, t: f64, out: &mut [f64]) {
    match order {
        ElementOrder::Linear => {
            out[0] = 1.0 - t;
            out[1] = t;
        }
        ElementOrder::Quadratic => {
            out[0] = (1.0 - t) * (1.0 - 2.0 * t);
            out[1] = t * (2.0 * t - 1.0);
            out[2] = 4.0 * t * (1.0 - t);
        }
    }
}

/// `d/dt` of [`edge_basis`].
pub fn edge_basis_dt(order: ElementOrder, t: f64, out: &mut [f64]) {
    match order {
        ElementOrder::Linear => {
            out[0] = -1.0;
            out[1] = 1.0;
        }
        ElementOrder::Quadratic => {
            out[0] = 4.0 * t - 3.0;
            out[1] = 4.0 * t - 1.0;
            out[2] = 4.0 - 8.0 * t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rules_integrate_monomials() {
        for n in 1..=4 {
            for p in 0..2 * n {
                let q: f64 = gauss_legendre(n)
                    .iter()
                    .map(|&(x, w)| w * x.powi(p as i32))
                    .sum();
                assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn triangle_rules_integrate_monomials() {
        // ∫_T λ0^a λ1^b λ2^c = 2|T| a! b! c! / (a+b+c+2)!
        let fact = |n: u32| (1..=n).product::<u32>() as f64;
        for degree in [1u32, 2, 4] {
            for a in 0..=degree {
                for b in 0..=degree - a {
                    let c = degree - a - b;
                    let q: f64 = triangle_rule(degree)
                        .iter()
                        .map(|(l, w)| w * l[0].powi(a as i32) * l[1].powi(b as i32) * l[2].powi(c as i32))
                        .sum();
                    let exact = 2.0 * fact(a) * fact(b) * fact(c) / fact(a + b + c + 2);
                    assert!((q - exact).abs() < 1e-12, "{a} {b} {c}");
                }
            }
        }
    }

    #[test]
    fn quadratic_basis_is_nodal_and_gradients_consistent() {
        let geo = TriangleGeometry::new([[0.1, 0.2], [0.7, 0.25], [0.3, 0.9]]);
        let nodes = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.5, 0.5, 0.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
        ];
        let mut v = [0.0; 6];
        for (k, b) in nodes.iter().enumerate() {
            TriangleGeometry::basis_values(ElementOrder::Quadratic, *b, &mut v);
            for (j, vj) in v.iter().enumerate() {
                assert!((vj - f64::from(u8::from(j == k))).abs() < 1e-15);
            }
        }
        // finite-difference check of physical gradients
        let bary = [0.2, 0.3, 0.5];
        let mut g = [[0.0; 2]; 6];
        geo.basis_gradients(ElementOrder::Quadratic, bary, &mut g);
        let x = geo.point(bary);
        let to_bary = |p: Point| {
            let l1 = geo.grad_bary[1][0] * (p[0] - geo.vertices[0][0])
                + geo.grad_bary[1][1] * (p[1] - geo.vertices[0][1]);
            let l2 = geo.grad_bary[2][0] * (p[0] - geo.vertices[0][0])
                + geo.grad_bary[2][1] * (p[1] - geo.vertices[0][1]);
            [1.0 - l1 - l2, l1, l2]
        };
        let eps = 1e-6;
        for dir in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[dir] += eps;
            xm[dir] -= eps;
            let (mut vp, mut vm) = ([0.0; 6], [0.0; 6]);
            TriangleGeometry::basis_values(ElementOrder::Quadratic, to_bary(xp), &mut vp);
            TriangleGeometry::basis_values(ElementOrder::Quadratic, to_bary(xm), &mut vm);
            for k in 0..6 {
                let fd = (vp[k] - vm[k]) / (2.0 * eps);
                assert!((fd - g[k][dir]).abs() < 1e-7);
            }
        }
    }
}
