//! Reference-element machinery: P1/P2 Lagrange bases, triangle and edge
//! quadrature, and affine element maps.
//!
//! The reference triangle has vertices (0,0), (1,0), (0,1) with barycentric
//! coordinates `λ₀ = 1 − s − t`, `λ₁ = s`, `λ₂ = t`. P2 local nodes are the
//! three vertices followed by the midpoints of edges (0,1), (1,2), (2,0).

use crate::error::{Error, Result};

const BARY_TOL: f64 = 1e-14;

/// Reference gradients of the barycentric coordinates.
const GRAD_LAMBDA: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

/// Vertex pairs behind the P2 edge nodes 3, 4, 5.
pub const P2_EDGE_PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    P1,
    P2,
}

impl BasisKind {
    pub fn n_basis(self) -> usize {
        match self {
            BasisKind::P1 => 3,
            BasisKind::P2 => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval {
    pub values: Vec<f64>,
    /// Gradients with respect to the reference coordinates `(s, t)`.
    pub ref_grads: Vec<[f64; 2]>,
}

fn check_barycentric(bary: [f64; 3]) -> Result<()> {
    let sum: f64 = bary.iter().sum();
    if bary.iter().any(|&l| !(l >= -BARY_TOL)) || (sum - 1.0).abs() > BARY_TOL {
        return Err(Error::InvalidArgument(format!(
            "point {bary:?} is not inside the reference simplex"
        )));
    }
    Ok(())
}

/// Values and reference gradients of every basis function at a barycentric point.
pub fn eval_basis(kind: BasisKind, bary: [f64; 3]) -> Result<BasisEval> {
    check_barycentric(bary)?;
    Ok(eval_unchecked(kind, bary))
}

fn eval_unchecked(kind: BasisKind, l: [f64; 3]) -> BasisEval {
    match kind {
        BasisKind::P1 => BasisEval {
            values: l.to_vec(),
            ref_grads: GRAD_LAMBDA.to_vec(),
        },
        BasisKind::P2 => {
            let mut values = Vec::with_capacity(6);
            let mut ref_grads = Vec::with_capacity(6);
            for i in 0..3 {
                values.push(l[i] * (2.0 * l[i] - 1.0));
                let c = 4.0 * l[i] - 1.0;
                ref_grads.push([c * GRAD_LAMBDA[i][0], c * GRAD_LAMBDA[i][1]]);
            }
            for &(i, j) in &P2_EDGE_PAIRS {
                values.push(4.0 * l[i] * l[j]);
                ref_grads.push([
                    4.0 * (l[j] * GRAD_LAMBDA[i][0] + l[i] * GRAD_LAMBDA[j][0]),
                    4.0 * (l[j] * GRAD_LAMBDA[i][1] + l[i] * GRAD_LAMBDA[j][1]),
                ]);
            }
            BasisEval { values, ref_grads }
        }
    }
}

/// Points are barycentric triples for triangle rules and `[s, 1 − s, 0]`
/// parameter pairs for edge rules. Triangle weights sum to 1/2, edge weights to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub exactness_degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn push_orbit3(&mut self, a: f64, w: f64) {
        let b = 1.0 - 2.0 * a;
        for p in [[a, a, b], [a, b, a], [b, a, a]] {
            self.points.push(p);
            self.weights.push(0.5 * w);
        }
    }

    fn push_orbit6(&mut self, a: f64, b: f64, w: f64) {
        let c = 1.0 - a - b;
        for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            self.points.push(p);
            self.weights.push(0.5 * w);
        }
    }

    fn empty(degree: usize) -> Self {
        Self {
            points: Vec::new(),
            weights: Vec::new(),
            exactness_degree: degree,
        }
    }
}

/// Symmetric triangle rule exact to at least `min_degree` (1..=6).
pub fn triangle_quadrature(min_degree: usize) -> Result<QuadratureRule> {
    let rule = match min_degree {
        1 => QuadratureRule {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![0.5],
            exactness_degree: 1,
        },
        2 => {
            let mut r = QuadratureRule::empty(2);
            r.push_orbit3(1.0 / 6.0, 1.0 / 3.0);
            r
        }
        3 | 4 => {
            // Six-point rule of Dunavant.
            let mut r = QuadratureRule::empty(4);
            r.push_orbit3(0.445_948_490_915_964_886_318_329, 0.223_381_589_678_011_465_944_827);
            r.push_orbit3(0.091_576_213_509_770_743_459_571, 0.109_951_743_655_321_867_388_506);
            r
        }
        5 => {
            // Seven-point rule of Radon, closed form.
            let s15 = 15f64.sqrt();
            let mut r = QuadratureRule::empty(5);
            r.points.push([1.0 / 3.0; 3]);
            r.weights.push(0.5 * 9.0 / 40.0);
            r.push_orbit3((6.0 - s15) / 21.0, (155.0 - s15) / 1200.0);
            r.push_orbit3((6.0 + s15) / 21.0, (155.0 + s15) / 1200.0);
            r
        }
        6 => {
            // Twelve-point rule of Dunavant.
            let mut r = QuadratureRule::empty(6);
            r.push_orbit3(0.249_286_745_170_910_421_291_639, 0.116_786_275_726_379_366_030_690);
            r.push_orbit3(0.063_089_014_491_502_228_340_332, 0.050_844_906_370_206_816_920_937);
            r.push_orbit6(
                0.053_145_049_844_816_947_353_249,
                0.310_352_451_033_784_405_416_607,
                0.082_851_075_618_373_575_193_554,
            );
            r
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "no triangle rule for degree {min_degree}; supported range is 1..=6"
            )))
        }
    };
    Ok(rule)
}

/// Gauss–Legendre rule on the unit interval exact to at least `min_degree` (1..=5).
pub fn edge_quadrature(min_degree: usize) -> Result<QuadratureRule> {
    let (nodes, weights, degree): (Vec<f64>, Vec<f64>, usize) = match min_degree {
        1 => (vec![0.5], vec![1.0], 1),
        2 | 3 => {
            let d = 0.5 / 3f64.sqrt();
            (vec![0.5 - d, 0.5 + d], vec![0.5, 0.5], 3)
        }
        4 | 5 => {
            let d = 0.5 * (0.6f64).sqrt();
            (
                vec![0.5 - d, 0.5, 0.5 + d],
                vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
                5,
            )
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "no edge rule for degree {min_degree}; supported range is 1..=5"
            )))
        }
    };
    Ok(QuadratureRule {
        points: nodes.iter().map(|&s| [s, 1.0 - s, 0.0]).collect(),
        weights,
        exactness_degree: degree,
    })
}

/// Basis values and reference gradients tabulated at the points of a rule.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub kind: BasisKind,
    pub values: Vec<Vec<f64>>,
    pub ref_grads: Vec<Vec<[f64; 2]>>,
}

impl Tabulation {
    pub fn new(kind: BasisKind, rule: &QuadratureRule) -> Self {
        let evals: Vec<BasisEval> = rule.points.iter().map(|&p| eval_unchecked(kind, p)).collect();
        Self {
            kind,
            values: evals.iter().map(|e| e.values.clone()).collect(),
            ref_grads: evals.into_iter().map(|e| e.ref_grads).collect(),
        }
    }
}

/// Affine map from the reference triangle onto a physical triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub origin: [f64; 2],
    /// Columns are the images of the reference edge vectors.
    pub jacobian: [[f64; 2]; 2],
    pub inv_transpose: [[f64; 2]; 2],
    pub det: f64,
}

impl AffineMap {
    pub fn new(coords: [[f64; 2]; 3]) -> Self {
        let [p0, p1, p2] = coords;
        let j = [[p1[0] - p0[0], p2[0] - p0[0]], [p1[1] - p0[1], p2[1] - p0[1]]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        // J^{-T} = (1/det) [[j11, -j10], [-j01, j00]]
        let inv_transpose = [
            [j[1][1] / det, -j[1][0] / det],
            [-j[0][1] / det, j[0][0] / det],
        ];
        Self {
            origin: p0,
            jacobian: j,
            inv_transpose,
            det,
        }
    }

    pub fn abs_det(&self) -> f64 {
        self.det.abs()
    }

    /// Physical point for barycentric coordinates `[λ₀, λ₁, λ₂]`.
    pub fn map_bary(&self, bary: [f64; 3]) -> [f64; 2] {
        let (s, t) = (bary[1], bary[2]);
        [
            self.origin[0] + self.jacobian[0][0] * s + self.jacobian[0][1] * t,
            self.origin[1] + self.jacobian[1][0] * s + self.jacobian[1][1] * t,
        ]
    }

    pub fn physical_grad(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv_transpose[0][0] * g[0] + self.inv_transpose[0][1] * g[1],
            self.inv_transpose[1][0] * g[0] + self.inv_transpose[1][1] * g[1],
        ]
    }
}
