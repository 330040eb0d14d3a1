//! Quadrature over simplicial meshes.
//!
//! Two rule families are provided. The sub-simplex vertex rule splits
//! each element into `2^{d n}` children and averages vertex values with
//! weight `|K_i|/(d+1)`; it is exact on piecewise linears and is the
//! rule applied to neural-network coefficient terms. The reference rule
//! is a fixed degree-4 Gauss rule, used wherever "exact" integration is
//! meant (load vectors, error norms, the exact assembly mode).

use crate::mesh::{Mesh, Point};
use crate::scalar::Real;

/// Precomputed quadrature points and weights, grouped per element.
///
/// Rules are built once per (mesh, level) pair and reused; training
/// evaluates coefficient networks at the same points thousands of times.
#[derive(Debug, Clone)]
pub struct QuadratureRule<T> {
    level: Option<u32>,
    points: Vec<Point<T>>,
    weights: Vec<T>,
    elem_offset: Vec<usize>,
}

impl<T: Real> QuadratureRule<T> {
    /// Sub-simplex vertex rule `Q_h` at subdivision level `n`.
    pub fn subsimplex(mesh: &Mesh<T>, level: u32) -> Self {
        let d = mesh.dim();
        let verts = d + 1;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut elem_offset = Vec::with_capacity(mesh.element_count() + 1);
        elem_offset.push(0);
        for k in 0..mesh.element_count() {
            let sub = mesh.subdivide_element(k, level).expect("valid element");
            let w = sub.child_measure / T::of(verts as f64);
            for child in &sub.children {
                for v in child.iter().take(verts) {
                    points.push(*v);
                    weights.push(w);
                }
            }
            elem_offset.push(points.len());
        }
        QuadratureRule {
            level: Some(level),
            points,
            weights,
            elem_offset,
        }
    }

    /// Fixed degree-4 Gauss reference rule.
    pub fn reference(mesh: &Mesh<T>) -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut elem_offset = Vec::with_capacity(mesh.element_count() + 1);
        elem_offset.push(0);
        match mesh.dim() {
            1 => {
                let s = T::of((3.0f64 / 5.0).sqrt() * 0.5);
                let half = T::of(0.5);
                let locs = [half - s, half, half + s];
                let ws = [T::of(5.0 / 18.0), T::of(8.0 / 18.0), T::of(5.0 / 18.0)];
                for k in 0..mesh.element_count() {
                    let e = mesh.element(k);
                    let a = mesh.node(e[0])[0];
                    let b = mesh.node(e[1])[0];
                    let len = b - a;
                    for (t, w) in locs.iter().zip(&ws) {
                        points.push([a + *t * len, T::zero()]);
                        weights.push(*w * len);
                    }
                    elem_offset.push(points.len());
                }
            }
            _ => {
                // 6-point degree-4 rule on the triangle (Dunavant).
                let groups = [
                    (0.445948490915965f64, 0.223381589678011f64),
                    (0.091576213509771, 0.109951743655322),
                ];
                for k in 0..mesh.element_count() {
                    let e = mesh.element(k);
                    let [p0, p1, p2] =
                        [mesh.node(e[0]), mesh.node(e[1]), mesh.node(e[2])];
                    let area = mesh.element_measure(k);
                    for &(a, w) in &groups {
                        let bary = [
                            [a, a, 1.0 - 2.0 * a],
                            [a, 1.0 - 2.0 * a, a],
                            [1.0 - 2.0 * a, a, a],
                        ];
                        for lam in bary {
                            let l = [T::of(lam[0]), T::of(lam[1]), T::of(lam[2])];
                            points.push([
                                l[0] * p0[0] + l[1] * p1[0] + l[2] * p2[0],
                                l[0] * p0[1] + l[1] * p1[1] + l[2] * p2[1],
                            ]);
                            weights.push(T::of(w) * area);
                        }
                    }
                    elem_offset.push(points.len());
                }
            }
        }
        QuadratureRule {
            level: None,
            points,
            weights,
            elem_offset,
        }
    }

    /// Subdivision level, `None` for the Gauss reference rule.
    pub fn level(&self) -> Option<u32> {
        self.level
    }

    pub fn element_count(&self) -> usize {
        self.elem_offset.len() - 1
    }

    pub fn points_of(&self, k: usize) -> (&[Point<T>], &[T]) {
        let lo = self.elem_offset[k];
        let hi = self.elem_offset[k + 1];
        (&self.points[lo..hi], &self.weights[lo..hi])
    }

    /// Integrate `f(element, point)` over the mesh, summing elements in
    /// index order so the reduction is deterministic.
    pub fn integrate<F: Fn(usize, &Point<T>) -> T>(&self, f: F) -> T {
        let mut total = T::zero();
        for k in 0..self.element_count() {
            let (pts, ws) = self.points_of(k);
            let mut local = T::zero();
            for (p, &w) in pts.iter().zip(ws) {
                local += w * f(k, p);
            }
            total += local;
        }
        total
    }
}

/// Global sub-simplex rule `Q_h(v)` at level `n`.
pub fn integrate<T: Real>(mesh: &Mesh<T>, v: impl Fn(usize, &Point<T>) -> T, n: u32) -> T {
    QuadratureRule::subsimplex(mesh, n).integrate(v)
}

/// Broken inner product `(w, v)_h = Q_h(w v)`.
pub fn broken_inner<T: Real>(
    mesh: &Mesh<T>,
    w: impl Fn(usize, &Point<T>) -> T,
    v: impl Fn(usize, &Point<T>) -> T,
    n: u32,
) -> T {
    QuadratureRule::subsimplex(mesh, n).integrate(|k, x| w(k, x) * v(k, x))
}

/// Penalty term `Q_h(|grad q|^2)` from a gradient evaluator.
pub fn penalty_quadrature<T: Real>(
    mesh: &Mesh<T>,
    grad_q: impl Fn(usize, &Point<T>) -> [T; 2],
    n: u32,
) -> T {
    QuadratureRule::subsimplex(mesh, n).integrate(|k, x| {
        let g = grad_q(k, x);
        g[0] * g[0] + g[1] * g[1]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{unit_interval_mesh, unit_square_mesh};
    use proptest::prelude::*;
    

    #[test]
    fn weights_sum_to_element_measure() {
        for mesh in [unit_interval_mesh::<f64>(3).unwrap(), unit_square_mesh(2).unwrap()] {
            for n in 0..3 {
                let rule = QuadratureRule::subsimplex(&mesh, n);
                for k in 0..mesh.element_count() {
                    let (_, ws) = rule.points_of(k);
                    let sum: f64 = ws.iter().sum();
                    assert!((sum - mesh.element_measure(k)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn exact_on_affine() {
        let mesh = unit_square_mesh::<f64>(3).unwrap();
        for n in 0..3 {
            // Basis of affine functions; exact integrals over (0,1)^2.
            let cases: [(fn(&[f64; 2]) -> f64, f64); 3] =
                [(|_| 1.0, 1.0), (|x| x[0], 0.5), (|x| x[1], 0.5)];
            for (f, exact) in cases {
                let got = integrate(&mesh, |_, x| f(x), n);
                assert!((got - exact).abs() <= 1e-13, "n={n} got={got}");
            }
        }
    }

    #[test]
    fn x_squared_trapezoid_values() {
        let mesh = unit_interval_mesh::<f64>(2).unwrap();
        let got0 = integrate(&mesh, |_, x| x[0] * x[0], 0);
        assert!((got0 - 0.375).abs() < 1e-14);
        let got1 = integrate(&mesh, |_, x| x[0] * x[0], 1);
        assert!((got1 - 0.34375).abs() < 1e-14);
        // Error ratio 4 per level.
        let e0 = (got0 - 1.0 / 3.0).abs();
        let e1 = (got1 - 1.0 / 3.0).abs();
        assert!((e0 / e1 - 4.0).abs() < 1e-10);
    }

    #[test]
    fn constant_field() {
        let mesh = unit_interval_mesh::<f64>(5).unwrap();
        let got = integrate(&mesh, |_, _| 3.25, 2);
        assert!((got - 3.25).abs() < 1e-13);
        assert!((broken_inner(&mesh, |_, _| 1.0, |_, _| 1.0, 0) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn broken_inner_error_rate() {
        // (w, v)_h for w = v = exp(x) against the degree-4 Gauss oracle;
        // error should decay about 4x per level. (Periodic integrands
        // are useless here: the vertex rule is trapezoid-exact on them.)
        let mesh = unit_interval_mesh::<f64>(8).unwrap();
        let f = |x: &[f64; 2]| x[0].exp();
        let oracle = QuadratureRule::reference(&mesh).integrate(|_, x| f(x) * f(x));
        let mut prev = f64::NAN;
        for n in 0..4 {
            let err = (broken_inner(&mesh, |_, x| f(x), |_, x| f(x), n) - oracle).abs();
            if n > 0 {
                let ratio = prev / err;
                assert!((3.0..5.0).contains(&ratio), "n={n} ratio={ratio}");
            }
            prev = err;
        }
    }

    #[test]
    fn penalty_cases() {
        let mesh = unit_interval_mesh::<f64>(8).unwrap();
        // Constant q.
        assert_eq!(penalty_quadrature(&mesh, |_, _| [0.0, 0.0], 1), 0.0);
        // q = x: |q'|^2 = 1 at every level.
        for n in 0..3 {
            let got = penalty_quadrature(&mesh, |_, _| [1.0, 0.0], n);
            assert!((got - 1.0).abs() < 1e-13);
        }
        // q with q' = exp(x): integral of |q'|^2 is (e^2 - 1)/2,
        // quadrature error decays at rate 2^{-2n}.
        let grad = |x: &[f64; 2]| [x[0].exp(), 0.0];
        let exact = (1.0f64.exp().powi(2) - 1.0) / 2.0;
        let mut prev = f64::NAN;
        for n in 0..4 {
            let err = (penalty_quadrature(&mesh, |_, x| grad(x), n) - exact).abs();
            if n > 0 {
                let ratio = prev / err;
                assert!((3.0..5.0).contains(&ratio), "n={n} ratio={ratio}");
            }
            prev = err;
        }
    }

    #[test]
    fn reference_rule_degree4_1d() {
        // Exact for quartics on each element.
        let mesh = unit_interval_mesh::<f64>(1).unwrap();
        let got = QuadratureRule::reference(&mesh).integrate(|_, x| x[0].powi(4));
        assert!((got - 0.2).abs() < 1e-14);
    }

    #[test]
    fn reference_rule_degree4_2d() {
        let mesh = unit_square_mesh::<f64>(1).unwrap();
        let cases: [(fn(&[f64; 2]) -> f64, f64); 3] = [
            (|x| x[0].powi(4), 0.2),
            (|x| x[0].powi(2) * x[1].powi(2), 1.0 / 9.0),
            (|x| x[0].powi(3) * x[1], 1.0 / 8.0),
        ];
        for (f, exact) in cases {
            let got = QuadratureRule::reference(&mesh).integrate(|_, x| f(x));
            assert!((got - exact).abs() < 1e-13, "got={got} want={exact}");
        }
    }

    proptest! {
        #[test]
        fn broken_inner_symmetric_bilinear(seed in 0u64..200) {
            let mesh = unit_interval_mesh::<f64>(4).unwrap();
            let a = (seed as f64) * 0.01 + 0.3;
            let w = move |x: &[f64;2]| (a * x[0]).cos() + 0.5;
            let v = move |x: &[f64;2]| (3.0 * x[0] - a).sin();
            let wv = broken_inner(&mesh, |_, x| w(x), |_, x| v(x), 1);
            let vw = broken_inner(&mesh, |_, x| v(x), |_, x| w(x), 1);
            prop_assert!((wv - vw).abs() < 1e-12);
            // Linearity in the first slot.
            let w2 = move |x: &[f64;2]| 2.0 * w(x);
            let doubled = broken_inner(&mesh, |_, x| w2(x), |_, x| v(x), 1);
            prop_assert!((doubled - 2.0 * wv).abs() < 1e-12);
            // Nonnegativity of (v, v)_h.
            let vv = broken_inner(&mesh, |_, x| v(x), |_, x| v(x), 1);
            prop_assert!(vv >= 0.0);
        }
    }
}
