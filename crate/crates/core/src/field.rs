//! Scalar fields used as desired states: constants, closed-form expressions
//! in `x`, `y`, `z`, and finite element functions.

use std::fmt;

use crate::error::{Error, Result};
use crate::fem::{FeFunction, FeSpace};
use crate::mesh::Point;

pub enum Field {
    Constant(f64),
    Expression { source: String, expr: meval::Expr },
    Fe(FeFunction),
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Constant(c) => write!(f, "Constant({c})"),
            Field::Expression { source, .. } => write!(f, "Expression({source:?})"),
            Field::Fe(u) => write!(f, "Fe(level {})", u.mesh().level()),
        }
    }
}

impl Field {
    pub fn expression(source: &str) -> Result<Field> {
        let expr: meval::Expr = source
            .parse()
            .map_err(|e| Error::Parse(format!("expression {source:?}: {e}")))?;
        // reject unknown variables up front
        expr.clone()
            .bind3("x", "y", "z")
            .map(|_| ())
            .map_err(|e| Error::Parse(format!("expression {source:?}: {e}")))?;
        Ok(Field::Expression {
            source: source.to_string(),
            expr,
        })
    }

    pub fn eval(&self, p: &Point) -> Result<f64> {
        match self {
            Field::Constant(c) => Ok(*c),
            Field::Expression { expr, .. } => {
                let f = expr.clone().bind3("x", "y", "z").expect("validated on construction");
                Ok(f(p[0], p[1], p[2]))
            }
            Field::Fe(u) => u.eval(p),
        }
    }

    /// Values at every quadrature point of `space`.
    pub fn sample(&self, space: &FeSpace) -> Result<Vec<f64>> {
        match self {
            Field::Constant(c) => Ok(vec![*c; space.n_quadrature_points()]),
            Field::Expression { expr, .. } => {
                let f = expr.clone().bind3("x", "y", "z").expect("validated on construction");
                Ok(space.sample(|p| f(p[0], p[1], p[2])))
            }
            Field::Fe(u) => {
                let mut err = None;
                let out = space.sample(|p| match u.eval(p) {
                    Ok(v) => v,
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                });
                match err {
                    Some(e) => Err(e),
                    None => Ok(out),
                }
            }
        }
    }
}
