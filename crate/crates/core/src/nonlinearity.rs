//! Monotone nonlinearities `a(x, y)` with analytic first and second
//! `y`-derivatives.

use std::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::Point;

/// Growth information attached to a nonlinearity. `growth_exponent` is the
/// `r` in `|a(x,y)| <= C_a (1 + |y|^r)`-type bounds; the three strings name
/// the functions bounding `a(x,0)`, `a_y` and `a_yy`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthMetadata {
    pub name: String,
    pub growth_exponent: f64,
    pub constant: f64,
    pub bound_names: [String; 3],
}

pub trait Nonlinearity: Debug + Send + Sync {
    fn a(&self, x: &Point, y: f64) -> f64;
    fn a_y(&self, x: &Point, y: f64) -> f64;
    fn a_yy(&self, x: &Point, y: f64) -> f64;
    fn metadata(&self) -> GrowthMetadata;
}

/// Registry of built-in nonlinearities; `coefficient` must be nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Builtin {
    /// `a = 0`
    Zero,
    /// `a = c y`
    Linear {
        #[serde(default = "one")]
        coefficient: f64,
    },
    /// `a = c y^3`
    Cubic {
        #[serde(default = "one")]
        coefficient: f64,
    },
    /// `a = c arctan(y)`
    Arctan {
        #[serde(default = "one")]
        coefficient: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Builtin {
    pub fn coefficient(&self) -> f64 {
        match *self {
            Builtin::Zero => 0.0,
            Builtin::Linear { coefficient }
            | Builtin::Cubic { coefficient }
            | Builtin::Arctan { coefficient } => coefficient,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Builtin::Zero => "zero",
            Builtin::Linear { .. } => "linear",
            Builtin::Cubic { .. } => "cubic",
            Builtin::Arctan { .. } => "arctan",
        }
    }
}

impl Nonlinearity for Builtin {
    fn a(&self, _x: &Point, y: f64) -> f64 {
        match *self {
            Builtin::Zero => 0.0,
            Builtin::Linear { coefficient } => coefficient * y,
            Builtin::Cubic { coefficient } => coefficient * y * y * y,
            Builtin::Arctan { coefficient } => coefficient * y.atan(),
        }
    }

    fn a_y(&self, _x: &Point, y: f64) -> f64 {
        match *self {
            Builtin::Zero => 0.0,
            Builtin::Linear { coefficient } => coefficient,
            Builtin::Cubic { coefficient } => 3.0 * coefficient * y * y,
            Builtin::Arctan { coefficient } => coefficient / (1.0 + y * y),
        }
    }

    fn a_yy(&self, _x: &Point, y: f64) -> f64 {
        match *self {
            Builtin::Zero | Builtin::Linear { .. } => 0.0,
            Builtin::Cubic { coefficient } => 6.0 * coefficient * y,
            Builtin::Arctan { coefficient } => {
                let s = 1.0 + y * y;
                -2.0 * coefficient * y / (s * s)
            }
        }
    }

    fn metadata(&self) -> GrowthMetadata {
        let c = self.coefficient();
        let (r, bounds) = match self {
            Builtin::Zero => (0.0, ["0", "0", "0"]),
            Builtin::Linear { .. } => (1.0, ["0", "c", "0"]),
            Builtin::Cubic { .. } => (3.0, ["0", "3c", "6c"]),
            Builtin::Arctan { .. } => (0.0, ["0", "c", "2c"]),
        };
        GrowthMetadata {
            name: self.name().to_string(),
            growth_exponent: r,
            constant: c,
            bound_names: bounds.map(String::from),
        }
    }
}

/// Samples `(x, y)` pairs and checks `a_y >= 0` and finite-difference
/// consistency of both derivatives. Returns a description of the first failure.
pub fn check_consistency<R: Rng>(
    nl: &dyn Nonlinearity,
    dim: usize,
    samples: usize,
    rng: &mut R,
) -> Result<(), String> {
    let eps = 1e-6;
    for _ in 0..samples {
        let mut x = [0.0; 3];
        for xi in x.iter_mut().take(dim) {
            *xi = rng.gen_range(-1.0..1.0);
        }
        let y: f64 = rng.gen_range(-3.0..3.0);
        let ay = nl.a_y(&x, y);
        if !(ay >= 0.0) {
            return Err(format!("a_y({x:?}, {y}) = {ay} is negative"));
        }
        let fd1 = (nl.a(&x, y + eps) - nl.a(&x, y - eps)) / (2.0 * eps);
        let scale1 = 1.0 + ay.abs() + nl.a(&x, y).abs();
        if (fd1 - ay).abs() > 1e-5 * scale1 {
            return Err(format!("a_y inconsistent with a at y = {y}: {ay} vs {fd1}"));
        }
        let ayy = nl.a_yy(&x, y);
        let fd2 = (nl.a_y(&x, y + eps) - nl.a_y(&x, y - eps)) / (2.0 * eps);
        if (fd2 - ayy).abs() > 1e-5 * (1.0 + ayy.abs() + ay.abs()) {
            return Err(format!("a_yy inconsistent with a_y at y = {y}: {ayy} vs {fd2}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Debug)]
    struct Decreasing;

    impl Nonlinearity for Decreasing {
        fn a(&self, _x: &Point, y: f64) -> f64 {
            -y
        }
        fn a_y(&self, _x: &Point, _y: f64) -> f64 {
            -1.0
        }
        fn a_yy(&self, _x: &Point, _y: f64) -> f64 {
            0.0
        }
        fn metadata(&self) -> GrowthMetadata {
            Builtin::Zero.metadata()
        }
    }

    #[derive(Debug)]
    struct WrongDerivative;

    impl Nonlinearity for WrongDerivative {
        fn a(&self, _x: &Point, y: f64) -> f64 {
            y * y * y
        }
        fn a_y(&self, _x: &Point, y: f64) -> f64 {
            2.0 * y * y
        }
        fn a_yy(&self, _x: &Point, y: f64) -> f64 {
            4.0 * y
        }
        fn metadata(&self) -> GrowthMetadata {
            Builtin::Zero.metadata()
        }
    }

    #[test]
    fn builtins_are_consistent_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for nl in [
            Builtin::Zero,
            Builtin::Linear { coefficient: 2.0 },
            Builtin::Cubic { coefficient: 1.0 },
            Builtin::Arctan { coefficient: 0.5 },
        ] {
            check_consistency(&nl, 2, 200, &mut rng).unwrap();
        }
    }

    #[test]
    fn detects_violations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(check_consistency(&Decreasing, 2, 10, &mut rng).unwrap_err().contains("negative"));
        assert!(check_consistency(&WrongDerivative, 2, 10, &mut rng).is_err());
    }

    #[test]
    fn registry_serde() {
        let b: Builtin = toml::from_str("name = \"cubic\"\ncoefficient = 2.0").unwrap();
        assert_eq!(b, Builtin::Cubic { coefficient: 2.0 });
        let b: Builtin = toml::from_str("name = \"arctan\"").unwrap();
        assert_eq!(b, Builtin::Arctan { coefficient: 1.0 });
        let b: Builtin = toml::from_str("name = \"zero\"").unwrap();
        assert_eq!(b, Builtin::Zero);
        assert_eq!(Builtin::Cubic { coefficient: 1.0 }.metadata().growth_exponent, 3.0);
    }
}
