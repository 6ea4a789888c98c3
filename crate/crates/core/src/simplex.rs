//! Affine geometry of a single 2- or 3-simplex.

use crate::mesh::Point;

/// Affine map data of a simplex: `x = p0 + J * xi`.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    pub dim: usize,
    pub origin: Point,
    pub det: f64,
    /// Inverse Jacobian, row-major (only the leading `dim x dim` block is used).
    pub inv: [[f64; 3]; 3],
}

impl AffineMap {
    pub fn new(dim: usize, corners: &[Point]) -> AffineMap {
        let p0 = corners[0];
        let mut jac = [[0.0; 3]; 3];
        for c in 0..dim {
            for r in 0..dim {
                jac[r][c] = corners[c + 1][r] - p0[r];
            }
        }
        let (det, inv) = match dim {
            2 => {
                let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
                let mut inv = [[0.0; 3]; 3];
                inv[0][0] = jac[1][1] / det;
                inv[0][1] = -jac[0][1] / det;
                inv[1][0] = -jac[1][0] / det;
                inv[1][1] = jac[0][0] / det;
                (det, inv)
            }
            3 => {
                let m = jac;
                let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
                    m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
                };
                let c00 = cof(1, 2, 1, 2);
                let c01 = -cof(1, 2, 0, 2);
                let c02 = cof(1, 2, 0, 1);
                let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
                let mut inv = [[0.0; 3]; 3];
                inv[0][0] = c00 / det;
                inv[1][0] = c01 / det;
                inv[2][0] = c02 / det;
                inv[0][1] = -cof(0, 2, 1, 2) / det;
                inv[1][1] = cof(0, 2, 0, 2) / det;
                inv[2][1] = -cof(0, 2, 0, 1) / det;
                inv[0][2] = cof(0, 1, 1, 2) / det;
                inv[1][2] = -cof(0, 1, 0, 2) / det;
                inv[2][2] = cof(0, 1, 0, 1) / det;
                (det, inv)
            }
            _ => panic!("unsupported simplex dimension {dim}"),
        };
        AffineMap {
            dim,
            origin: p0,
            det,
            inv,
        }
    }

    /// Lebesgue measure of the simplex.
    pub fn measure(&self) -> f64 {
        let fact = if self.dim == 2 { 2.0 } else { 6.0 };
        self.det.abs() / fact
    }

    /// Barycentric coordinates of `z`; entries `0..=dim` are meaningful.
    pub fn barycentric(&self, z: &Point) -> [f64; 4] {
        let mut out = [0.0; 4];
        let mut rest = 1.0;
        for r in 0..self.dim {
            let mut s = 0.0;
            for c in 0..self.dim {
                s += self.inv[r][c] * (z[c] - self.origin[c]);
            }
            out[r + 1] = s;
            rest -= s;
        }
        out[0] = rest;
        out
    }

    /// Constant gradients of the barycentric coordinate functions.
    pub fn gradients(&self) -> [[f64; 3]; 4] {
        let mut g = [[0.0; 3]; 4];
        for i in 0..self.dim {
            for k in 0..self.dim {
                g[i + 1][k] = self.inv[i][k];
                g[0][k] -= self.inv[i][k];
            }
        }
        g
    }
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
