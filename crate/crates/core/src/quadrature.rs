//! Symmetric quadrature rules on the reference triangle and tetrahedron.

/// Points in barycentric coordinates; weights sum to the reference measure
/// (1/2 for the triangle, 1/6 for the tetrahedron).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub dim: usize,
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// The rule used for all assembly in dimension `dim`.
    pub fn for_dim(dim: usize) -> QuadratureRule {
        match dim {
            2 => Self::triangle_degree4(),
            3 => Self::tetrahedron_degree5(),
            _ => panic!("unsupported dimension {dim}"),
        }
    }

    pub fn reference_measure(&self) -> f64 {
        if self.dim == 2 {
            0.5
        } else {
            1.0 / 6.0
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Six-point degree-4 rule (Dunavant).
    pub fn triangle_degree4() -> QuadratureRule {
        let orbits = [
            (0.445_948_490_915_965, 0.223_381_589_678_011),
            (0.091_576_213_509_771, 0.109_951_743_655_322),
        ];
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (a, w) in orbits {
            let b = 1.0 - 2.0 * a;
            for p in [[b, a, a, 0.0], [a, b, a, 0.0], [a, a, b, 0.0]] {
                points.push(p);
                weights.push(0.5 * w);
            }
        }
        QuadratureRule {
            dim: 2,
            points,
            weights,
            degree: 4,
        }
    }

    /// Fourteen-point degree-5 rule with positive weights.
    pub fn tetrahedron_degree5() -> QuadratureRule {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (a, w) in [
            (0.092_735_250_310_891_2, 0.012_248_840_519_393_66),
            (0.310_885_919_263_300_6, 0.018_781_320_953_002_64),
        ] {
            let b = 1.0 - 3.0 * a;
            for k in 0..4 {
                let mut p = [a; 4];
                p[k] = b;
                points.push(p);
                weights.push(w);
            }
        }
        let (a, w) = (0.454_496_295_874_350_4, 0.007_091_003_462_846_911);
        let b = 0.5 - a;
        for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
            let mut p = [b; 4];
            p[i] = a;
            p[j] = a;
            points.push(p);
            weights.push(w);
        }
        QuadratureRule {
            dim: 3,
            points,
            weights,
            degree: 5,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Exact integral of prod_k x_k^{e_k} over the reference simplex.
    fn monomial_exact(exps: &[u32]) -> f64 {
        let num: f64 = exps.iter().map(|&e| factorial(e)).product();
        num / factorial(exps.iter().sum::<u32>() + exps.len() as u32)
    }

    fn check(rule: &QuadratureRule) {
        assert!(rule.weights.iter().all(|&w| w > 0.0));
        let sum: f64 = rule.weights.iter().sum();
        assert!((sum - rule.reference_measure()).abs() < 1e-14);
        for p in &rule.points {
            let s: f64 = p[..=rule.dim].iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        let deg = rule.degree as u32;
        let mut checked = 0;
        for e0 in 0..=deg {
            for e1 in 0..=deg - e0 {
                let e2_max = if rule.dim == 3 { deg - e0 - e1 } else { 0 };
                for e2 in 0..=e2_max {
                    let exps: Vec<u32> = if rule.dim == 3 { vec![e0, e1, e2] } else { vec![e0, e1] };
                    let q: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| {
                            w * exps
                                .iter()
                                .enumerate()
                                .map(|(k, &e)| p[k + 1].powi(e as i32))
                                .product::<f64>()
                        })
                        .sum();
                    let exact = monomial_exact(&exps);
                    assert!((q - exact).abs() < 1e-13, "{exps:?}: {q} vs {exact}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn triangle_rule_is_degree_four() {
        check(&QuadratureRule::triangle_degree4());
        // and not degree five
        let r = QuadratureRule::triangle_degree4();
        let q: f64 = r.points.iter().zip(&r.weights).map(|(p, w)| w * p[1].powi(5)).sum();
        assert!((q - monomial_exact(&[5, 0])).abs() > 1e-8);
    }

    #[test]
    fn tetrahedron_rule_is_degree_five() {
        check(&QuadratureRule::tetrahedron_degree5());
    }
}
