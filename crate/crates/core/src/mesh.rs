//! Conforming simplicial meshes of convex polygons (and, in 3D, boxes) with
//! uniform refinement lineage and point location.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{distance, AffineMap};

/// Spatial point. Two-dimensional meshes keep the third coordinate at zero.
pub type Point = [f64; 3];

/// Absolute tolerance on barycentric coordinates for point membership.
pub const TOL_GEOM: f64 = 1e-10;

const NO_DOF: usize = usize::MAX;

/// Where a vertex of a refined mesh comes from in its parent mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexOrigin {
    Copy(usize),
    Midpoint(usize, usize),
}

#[derive(Debug)]
pub struct Lineage {
    pub parent: Arc<TriMesh>,
    pub origins: Vec<VertexOrigin>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DomainShape {
    /// Strictly convex polygon, counter-clockwise.
    Polygon(Vec<[f64; 2]>),
    /// Axis-aligned box split into `n^3` Kuhn-triangulated cubes.
    Box {
        lower: [f64; 3],
        upper: [f64; 3],
        n: usize,
    },
}

#[derive(Debug)]
pub struct TriMesh {
    dim: usize,
    vertices: Vec<Point>,
    cells: Vec<usize>,
    boundary: Vec<bool>,
    level: usize,
    h: f64,
    shape: DomainShape,
    lineage: Option<Lineage>,
    dof_of_vertex: Vec<usize>,
    dof_vertices: Vec<usize>,
    locator: OnceLock<Locator>,
}

/// Containing cell and barycentric coordinates of a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointLocation {
    pub cell_index: usize,
    pub barycentric: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeshStatistics {
    pub h: f64,
    /// Smallest interior (2D) or dihedral (3D) angle, in degrees.
    pub min_angle: f64,
    pub cell_count: usize,
    pub vertex_count: usize,
    /// `max_T h_T / min_T h_T`.
    pub diameter_ratio: f64,
}

impl TriMesh {
    fn from_parts(
        dim: usize,
        vertices: Vec<Point>,
        cells: Vec<usize>,
        boundary: Vec<bool>,
        level: usize,
        shape: DomainShape,
        lineage: Option<Lineage>,
    ) -> TriMesh {
        let mut dof_of_vertex = vec![NO_DOF; vertices.len()];
        let mut dof_vertices = Vec::new();
        for (v, &b) in boundary.iter().enumerate() {
            if !b {
                dof_of_vertex[v] = dof_vertices.len();
                dof_vertices.push(v);
            }
        }
        let mut mesh = TriMesh {
            dim,
            vertices,
            cells,
            boundary,
            level,
            h: 0.0,
            shape,
            lineage,
            dof_of_vertex,
            dof_vertices,
            locator: OnceLock::new(),
        };
        mesh.h = (0..mesh.n_cells())
            .map(|c| mesh.cell_diameter(c))
            .fold(0.0, f64::max);
        mesh
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Maximum cell diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> &DomainShape {
        &self.shape
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> &Point {
        &self.vertices[v]
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.cells[c * k..(c + 1) * k]
    }

    pub fn cells(&self) -> impl ExactSizeIterator<Item = &[usize]> + '_ {
        self.cells.chunks_exact(self.dim + 1)
    }

    pub fn boundary(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    /// Number of interior vertices, i.e. unknowns of the homogeneous Dirichlet problem.
    pub fn n_dofs(&self) -> usize {
        self.dof_vertices.len()
    }

    pub fn dof_of(&self, v: usize) -> Option<usize> {
        let d = self.dof_of_vertex[v];
        (d != NO_DOF).then_some(d)
    }

    pub fn dof_vertices(&self) -> &[usize] {
        &self.dof_vertices
    }

    pub fn lineage(&self) -> Option<&Lineage> {
        self.lineage.as_ref()
    }

    pub fn parent(&self) -> Option<&Arc<TriMesh>> {
        self.lineage.as_ref().map(|l| &l.parent)
    }

    pub fn corners(&self, c: usize) -> [Point; 4] {
        let mut out = [[0.0; 3]; 4];
        for (slot, &v) in out.iter_mut().zip(self.cell(c)) {
            *slot = self.vertices[v];
        }
        out
    }

    pub fn affine_map(&self, c: usize) -> AffineMap {
        AffineMap::new(self.dim, &self.corners(c))
    }

    pub fn cell_measure(&self, c: usize) -> f64 {
        self.affine_map(c).measure()
    }

    pub fn cell_diameter(&self, c: usize) -> f64 {
        let cell = self.cell(c);
        let mut d: f64 = 0.0;
        for i in 0..cell.len() {
            for j in i + 1..cell.len() {
                d = d.max(distance(&self.vertices[cell[i]], &self.vertices[cell[j]]));
            }
        }
        d
    }

    /// Total measure of the domain.
    pub fn measure(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.cell_measure(c)).sum()
    }

    /// True if `z` lies in the open domain at distance greater than `margin`
    /// from the boundary.
    pub fn domain_contains_strictly(&self, z: &Point, margin: f64) -> bool {
        match &self.shape {
            DomainShape::Polygon(poly) => polygon_inner_distance(poly, [z[0], z[1]]) > margin,
            DomainShape::Box { lower, upper, .. } => {
                (0..3).all(|k| z[k] - lower[k] > margin && upper[k] - z[k] > margin)
            }
        }
    }

    /// Barycentric coordinates of `z` with respect to cell `c`.
    pub fn barycentric(&self, c: usize, z: &Point) -> Vec<f64> {
        let b = self.affine_map(c).barycentric(z);
        b[..=self.dim].to_vec()
    }

    pub fn locate(&self, z: &Point) -> Result<PointLocation> {
        let locator = self.locator.get_or_init(|| Locator::build(self));
        locator.locate(self, z)
    }

    pub fn statistics(&self) -> MeshStatistics {
        let mut min_angle = f64::INFINITY;
        let mut dmin = f64::INFINITY;
        let mut dmax: f64 = 0.0;
        for c in 0..self.n_cells() {
            let g = self.affine_map(c).gradients();
            for i in 0..=self.dim {
                for j in i + 1..=self.dim {
                    let dot: f64 = (0..self.dim).map(|k| g[i][k] * g[j][k]).sum();
                    let ni: f64 = (0..self.dim).map(|k| g[i][k] * g[i][k]).sum::<f64>().sqrt();
                    let nj: f64 = (0..self.dim).map(|k| g[j][k] * g[j][k]).sum::<f64>().sqrt();
                    let cos = (-dot / (ni * nj)).clamp(-1.0, 1.0);
                    min_angle = min_angle.min(cos.acos().to_degrees());
                }
            }
            let d = self.cell_diameter(c);
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
        MeshStatistics {
            h: self.h,
            min_angle,
            cell_count: self.n_cells(),
            vertex_count: self.n_vertices(),
            diameter_ratio: dmax / dmin,
        }
    }

    /// JSON object `{vertices, cells, boundary}` for external visualization.
    pub fn to_json(&self) -> serde_json::Value {
        let vertices: Vec<Vec<f64>> = self.vertices.iter().map(|p| p[..self.dim].to_vec()).collect();
        let cells: Vec<&[usize]> = self.cells().collect();
        serde_json::json!({
            "vertices": vertices,
            "cells": cells,
            "boundary": self.boundary,
        })
    }

    /// Walks the lineage up to the ancestor at `level`.
    pub fn ancestor(self: &Arc<Self>, level: usize) -> Option<Arc<TriMesh>> {
        let mut cur = Arc::clone(self);
        while cur.level > level {
            cur = Arc::clone(cur.parent()?);
        }
        (cur.level == level).then_some(cur)
    }
}

/// Fan triangulation from vertex 0 of a strictly convex counter-clockwise polygon.
pub fn triangulate_polygon(vertices_ccw: &[[f64; 2]]) -> Result<TriMesh> {
    validate_polygon(vertices_ccw)?;
    let n = vertices_ccw.len();
    let vertices: Vec<Point> = vertices_ccw.iter().map(|p| [p[0], p[1], 0.0]).collect();
    let mut cells = Vec::with_capacity(3 * (n - 2));
    for i in 1..n - 1 {
        cells.extend_from_slice(&[0, i, i + 1]);
    }
    Ok(TriMesh::from_parts(
        2,
        vertices,
        cells,
        vec![true; n],
        0,
        DomainShape::Polygon(vertices_ccw.to_vec()),
        None,
    ))
}

pub(crate) fn validate_polygon(poly: &[[f64; 2]]) -> Result<()> {
    let n = poly.len();
    if n < 3 {
        return Err(Error::InvalidPolygon(format!("need at least 3 vertices, got {n}")));
    }
    if poly.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidPolygon("non-finite coordinate".into()));
    }
    let scale = poly
        .iter()
        .flat_map(|p| p.iter().map(|x| x.abs()))
        .fold(1.0, f64::max);
    for i in 0..n {
        for j in i + 1..n {
            let d = ((poly[i][0] - poly[j][0]).powi(2) + (poly[i][1] - poly[j][1]).powi(2)).sqrt();
            if d <= 1e-12 * scale {
                return Err(Error::InvalidPolygon(format!("vertices {i} and {j} coincide")));
            }
        }
    }
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if cross <= 1e-12 * scale * scale {
            return Err(Error::InvalidPolygon(format!(
                "not strictly convex and counter-clockwise at vertex {}",
                (i + 1) % n
            )));
        }
    }
    // a strictly left-turning closed chain can still wind more than once
    let mut total = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let t1 = (b[1] - a[1]).atan2(b[0] - a[0]);
        let t2 = (c[1] - b[1]).atan2(c[0] - b[0]);
        let mut turn = t2 - t1;
        while turn <= -std::f64::consts::PI {
            turn += 2.0 * std::f64::consts::PI;
        }
        while turn > std::f64::consts::PI {
            turn -= 2.0 * std::f64::consts::PI;
        }
        total += turn;
    }
    if (total - 2.0 * std::f64::consts::PI).abs() > 1e-6 {
        return Err(Error::InvalidPolygon("polygon winds more than once".into()));
    }
    Ok(())
}

/// Signed distance from `z` to the boundary of a convex CCW polygon, positive inside.
pub fn polygon_inner_distance(poly: &[[f64; 2]], z: [f64; 2]) -> f64 {
    let n = poly.len();
    let mut d = f64::INFINITY;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let len = (ex * ex + ey * ey).sqrt();
        // inward normal of a CCW edge is (-ey, ex)
        let s = (-ey * (z[0] - a[0]) + ex * (z[1] - a[1])) / len;
        d = d.min(s);
    }
    d
}

/// Kuhn triangulation of the box `[lower, upper]` with one cube (six tetrahedra).
pub fn box_mesh(lower: [f64; 3], upper: [f64; 3]) -> Result<TriMesh> {
    if (0..3).any(|k| !(upper[k] > lower[k]) || !lower[k].is_finite() || !upper[k].is_finite()) {
        return Err(Error::InvalidPolygon(format!(
            "degenerate box {lower:?}..{upper:?}"
        )));
    }
    Ok(kuhn_box(lower, upper, 1, 0, None))
}

fn kuhn_box(
    lower: [f64; 3],
    upper: [f64; 3],
    n: usize,
    level: usize,
    lineage: Option<Lineage>,
) -> TriMesh {
    let np = n + 1;
    let idx = |i: usize, j: usize, k: usize| i + np * (j + np * k);
    let mut vertices = Vec::with_capacity(np * np * np);
    let mut boundary = Vec::with_capacity(np * np * np);
    for k in 0..np {
        for j in 0..np {
            for i in 0..np {
                let t = [i, j, k];
                let mut p = [0.0; 3];
                for a in 0..3 {
                    p[a] = lower[a] + (upper[a] - lower[a]) * t[a] as f64 / n as f64;
                }
                vertices.push(p);
                boundary.push(t.iter().any(|&s| s == 0 || s == n));
            }
        }
    }
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut cells = Vec::with_capacity(24 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for perm in PERMS {
                    let mut t = [i, j, k];
                    let mut tet = [idx(t[0], t[1], t[2]), 0, 0, 0];
                    for (s, &axis) in perm.iter().enumerate() {
                        t[axis] += 1;
                        tet[s + 1] = idx(t[0], t[1], t[2]);
                    }
                    let corners: Vec<Point> = tet.iter().map(|&v| vertices[v]).collect();
                    if AffineMap::new(3, &corners).det < 0.0 {
                        tet.swap(2, 3);
                    }
                    cells.extend_from_slice(&tet);
                }
            }
        }
    }
    TriMesh::from_parts(
        3,
        vertices,
        cells,
        boundary,
        level,
        DomainShape::Box { lower, upper, n },
        lineage,
    )
}

/// Uniform refinement: red refinement of every triangle in 2D, halving of the
/// Kuhn grid in 3D. The child records its parent for prolongation.
pub fn refine_uniform(mesh: &Arc<TriMesh>) -> Arc<TriMesh> {
    let refined = match mesh.shape.clone() {
        DomainShape::Box { lower, upper, n } => refine_box(mesh, lower, upper, n),
        DomainShape::Polygon(_) => refine_red(mesh),
    };
    Arc::new(refined)
}

/// `refine_uniform` applied `k` times.
pub fn refine_times(mesh: &Arc<TriMesh>, k: usize) -> Arc<TriMesh> {
    let mut cur = Arc::clone(mesh);
    for _ in 0..k {
        cur = refine_uniform(&cur);
    }
    cur
}

fn refine_red(mesh: &Arc<TriMesh>) -> TriMesh {
    let mut edge_count: HashMap<(usize, usize), u32> = HashMap::new();
    for cell in mesh.cells() {
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            *edge_count.entry(edge_key(cell[a], cell[b])).or_default() += 1;
        }
    }
    let mut vertices = mesh.vertices.clone();
    let mut boundary = mesh.boundary.clone();
    let mut origins: Vec<VertexOrigin> = (0..mesh.n_vertices()).map(VertexOrigin::Copy).collect();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::with_capacity(edge_count.len());
    let mut cells = Vec::with_capacity(4 * mesh.cells.len());
    for cell in mesh.cells() {
        let mut m = [0usize; 3];
        for (slot, (a, b)) in [(0, 1), (1, 2), (2, 0)].into_iter().enumerate() {
            let key = edge_key(cell[a], cell[b]);
            m[slot] = *midpoint.entry(key).or_insert_with(|| {
                let (p, q) = (&mesh.vertices[key.0], &mesh.vertices[key.1]);
                vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])]);
                boundary.push(edge_count[&key] == 1);
                origins.push(VertexOrigin::Midpoint(key.0, key.1));
                vertices.len() - 1
            });
        }
        let [a, b, c] = [cell[0], cell[1], cell[2]];
        let [mab, mbc, mca] = m;
        cells.extend_from_slice(&[a, mab, mca, mab, b, mbc, mca, mbc, c, mab, mbc, mca]);
    }
    TriMesh::from_parts(
        2,
        vertices,
        cells,
        boundary,
        mesh.level + 1,
        mesh.shape.clone(),
        Some(Lineage {
            parent: Arc::clone(mesh),
            origins,
        }),
    )
}

fn refine_box(mesh: &Arc<TriMesh>, lower: [f64; 3], upper: [f64; 3], n: usize) -> TriMesh {
    let nf = 2 * n;
    let npc = n + 1;
    let coarse_idx = |t: [usize; 3]| t[0] + npc * (t[1] + npc * t[2]);
    let mut origins = Vec::with_capacity((nf + 1).pow(3));
    for k in 0..=nf {
        for j in 0..=nf {
            for i in 0..=nf {
                let f = [i, j, k];
                let base = [i / 2, j / 2, k / 2];
                let mut far = base;
                for a in 0..3 {
                    far[a] += f[a] % 2;
                }
                origins.push(if far == base {
                    VertexOrigin::Copy(coarse_idx(base))
                } else {
                    VertexOrigin::Midpoint(coarse_idx(base), coarse_idx(far))
                });
            }
        }
    }
    kuhn_box(
        lower,
        upper,
        nf,
        mesh.level + 1,
        Some(Lineage {
            parent: Arc::clone(mesh),
            origins,
        }),
    )
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn locate_point(mesh: &TriMesh, z: &Point) -> Result<PointLocation> {
    mesh.locate(z)
}

pub fn mesh_statistics(mesh: &TriMesh) -> MeshStatistics {
    mesh.statistics()
}

/// Uniform bucket grid over cell bounding boxes.
#[derive(Debug)]
struct Locator {
    lower: [f64; 3],
    cell_size: [f64; 3],
    dims: [usize; 3],
    offsets: Vec<usize>,
    entries: Vec<usize>,
}

impl Locator {
    fn build(mesh: &TriMesh) -> Locator {
        let d = mesh.dim;
        let mut lower = [0.0; 3];
        let mut upper = [0.0; 3];
        for a in 0..d {
            lower[a] = mesh.vertices.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
            upper[a] = mesh.vertices.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
        }
        let per_axis = ((mesh.n_cells() as f64).powf(1.0 / d as f64).ceil() as usize).max(1);
        let mut dims = [1usize; 3];
        let mut cell_size = [1.0; 3];
        for a in 0..d {
            dims[a] = per_axis;
            cell_size[a] = ((upper[a] - lower[a]) / per_axis as f64).max(f64::MIN_POSITIVE);
        }
        let nb = dims[0] * dims[1] * dims[2];
        let pad = 1e-9 * mesh.h.max(1e-300);
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); nb];
        for c in 0..mesh.n_cells() {
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            for a in 0..d {
                let (mut cmin, mut cmax) = (f64::INFINITY, f64::NEG_INFINITY);
                for &v in mesh.cell(c) {
                    cmin = cmin.min(mesh.vertices[v][a]);
                    cmax = cmax.max(mesh.vertices[v][a]);
                }
                lo[a] = bucket_index(cmin - pad, lower[a], cell_size[a], dims[a]);
                hi[a] = bucket_index(cmax + pad, lower[a], cell_size[a], dims[a]);
            }
            for k in lo[2]..=hi[2] {
                for j in lo[1]..=hi[1] {
                    for i in lo[0]..=hi[0] {
                        buckets[i + dims[0] * (j + dims[1] * k)].push(c);
                    }
                }
            }
        }
        let mut offsets = Vec::with_capacity(nb + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for b in buckets {
            entries.extend(b);
            offsets.push(entries.len());
        }
        Locator {
            lower,
            cell_size,
            dims,
            offsets,
            entries,
        }
    }

    fn locate(&self, mesh: &TriMesh, z: &Point) -> Result<PointLocation> {
        let outside = || Error::PointOutsideDomain {
            point: z[..mesh.dim].to_vec(),
        };
        if z[..mesh.dim].iter().any(|x| !x.is_finite()) {
            return Err(outside());
        }
        let mut t = [0usize; 3];
        for a in 0..mesh.dim {
            let lo = self.lower[a];
            let hi = lo + self.cell_size[a] * self.dims[a] as f64;
            let slack = 1e-9 * (hi - lo).max(1.0);
            if z[a] < lo - slack || z[a] > hi + slack {
                return Err(outside());
            }
            t[a] = bucket_index(z[a], lo, self.cell_size[a], self.dims[a]);
        }
        let b = t[0] + self.dims[0] * (t[1] + self.dims[1] * t[2]);
        let mut best: Option<(usize, [f64; 4], f64)> = None;
        for &c in &self.entries[self.offsets[b]..self.offsets[b + 1]] {
            let bary = mesh.affine_map(c).barycentric(z);
            let worst = bary[..=mesh.dim].iter().cloned().fold(f64::INFINITY, f64::min);
            if worst >= 0.0 {
                best = Some((c, bary, worst));
                break;
            }
            if worst >= -TOL_GEOM && best.map_or(true, |(_, _, w)| worst > w) {
                best = Some((c, bary, worst));
            }
        }
        let (c, bary, _) = best.ok_or_else(outside)?;
        Ok(PointLocation {
            cell_index: c,
            barycentric: bary[..=mesh.dim].to_vec(),
        })
    }
}

fn bucket_index(x: f64, lower: f64, size: f64, n: usize) -> usize {
    let t = ((x - lower) / size).floor();
    if t <= 0.0 {
        0
    } else {
        (t as usize).min(n - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> Arc<TriMesh> {
        Arc::new(triangulate_polygon(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap())
    }

    #[test]
    fn fan_of_unit_square() {
        let m = unit_square();
        assert_eq!(m.n_cells(), 2);
        assert_eq!(m.n_vertices(), 4);
        assert!((m.h() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.n_dofs(), 0);
    }

    #[test]
    fn single_triangle() {
        let m = triangulate_polygon(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(m.n_cells(), 1);
        assert!((m.h() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_polygons() {
        let repeated = [[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!(matches!(triangulate_polygon(&repeated), Err(Error::InvalidPolygon(_))));
        let clockwise = [[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]];
        assert!(matches!(triangulate_polygon(&clockwise), Err(Error::InvalidPolygon(_))));
        let dart = [[0.0, 0.0], [2.0, 0.0], [0.5, 0.5], [0.0, 2.0]];
        assert!(matches!(triangulate_polygon(&dart), Err(Error::InvalidPolygon(_))));
        let collinear = [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(triangulate_polygon(&collinear), Err(Error::InvalidPolygon(_))));
        assert!(triangulate_polygon(&[[0.0, 0.0], [1.0, 0.0]]).is_err());
    }

    #[test]
    fn red_refinement_counts() {
        let m0 = unit_square();
        let m1 = refine_uniform(&m0);
        assert_eq!(m1.n_cells(), 8);
        assert_eq!(m1.n_vertices(), 9);
        assert_eq!(m1.level(), 1);
        assert!((m1.h() - 2f64.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(m1.n_dofs(), 1);
        let m2 = refine_uniform(&m1);
        assert_eq!(m2.n_cells(), 32);
        assert_eq!(m2.level(), 2);
        let m3 = refine_uniform(&m2);
        let stats = m3.statistics();
        assert!((stats.h - 2f64.sqrt() / 8.0).abs() < 1e-15);
        for k in 0..4 {
            assert_eq!(refine_times(&m0, k).n_cells(), 2 * 4usize.pow(k as u32));
        }
    }

    #[test]
    fn refinement_preserves_angles_and_conformity() {
        let m0 = Arc::new(
            triangulate_polygon(&[[0.0, 0.0], [2.0, 0.1], [2.5, 1.0], [1.0, 2.0], [-0.3, 1.2]]).unwrap(),
        );
        let s0 = m0.statistics();
        let mut m = m0.clone();
        for _ in 0..4 {
            m = refine_uniform(&m);
            let s = m.statistics();
            assert!((s.min_angle - s0.min_angle).abs() < 1e-9);
            assert!((s.diameter_ratio - s0.diameter_ratio).abs() < 1e-9);
            assert_conforming_2d(&m);
            assert!((m.measure() - m0.measure()).abs() < 1e-12);
        }
    }

    fn assert_conforming_2d(m: &TriMesh) {
        // every edge is shared by at most two cells and boundary edges touch boundary vertices
        let mut count: HashMap<(usize, usize), u32> = HashMap::new();
        for cell in m.cells() {
            for (a, b) in [(0, 1), (1, 2), (2, 0)] {
                *count.entry(edge_key(cell[a], cell[b])).or_default() += 1;
            }
        }
        for (&(a, b), &n) in &count {
            assert!(n <= 2);
            if n == 1 {
                assert!(m.is_boundary(a) && m.is_boundary(b));
            }
        }
        // Euler characteristic of a disk
        let v = m.n_vertices() as i64;
        let e = count.len() as i64;
        let f = m.n_cells() as i64;
        assert_eq!(v - e + f, 1);
        for c in 0..m.n_cells() {
            assert!(m.affine_map(c).det > 0.0);
        }
    }

    #[test]
    fn square_statistics() {
        let m = unit_square();
        let s = mesh_statistics(&m);
        assert!((s.min_angle - 45.0).abs() < 1e-12);
        assert_eq!(s.cell_count, 2);
        assert_eq!(s.vertex_count, 4);
    }

    #[test]
    fn locate_examples() {
        let m = unit_square();
        let loc = locate_point(&m, &[0.5, 0.25, 0.0]).unwrap();
        let cell = m.cell(loc.cell_index);
        assert_eq!(cell, &[0, 1, 2]);
        let expect = [0.5, 0.25, 0.25];
        for (b, e) in loc.barycentric.iter().zip(expect) {
            assert!((b - e).abs() < 1e-15);
        }
        let loc = locate_point(&m, &[1.0, 1.0, 0.0]).unwrap();
        let cell = m.cell(loc.cell_index);
        for (k, &v) in cell.iter().enumerate() {
            let expect = if v == 2 { 1.0 } else { 0.0 };
            assert!((loc.barycentric[k] - expect).abs() < 1e-15);
        }
        assert!(matches!(
            locate_point(&m, &[2.0, 2.0, 0.0]),
            Err(Error::PointOutsideDomain { .. })
        ));
    }

    #[test]
    fn random_point_reconstruction() {
        let m = refine_times(&unit_square(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let z = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 0.0];
            let loc = m.locate(&z).unwrap();
            let s: f64 = loc.barycentric.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(loc.barycentric.iter().all(|&b| b >= -TOL_GEOM));
            let mut x = [0.0; 2];
            for (k, &v) in m.cell(loc.cell_index).iter().enumerate() {
                for a in 0..2 {
                    x[a] += loc.barycentric[k] * m.vertex(v)[a];
                }
            }
            assert!((x[0] - z[0]).abs() < 1e-12 && (x[1] - z[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn box_mesh_refinement() {
        let m0 = Arc::new(box_mesh([0.0; 3], [1.0; 3]).unwrap());
        assert_eq!(m0.n_cells(), 6);
        assert!((m0.h() - 3f64.sqrt()).abs() < 1e-15);
        assert!((m0.measure() - 1.0).abs() < 1e-14);
        let m2 = refine_times(&m0, 2);
        assert_eq!(m2.n_cells(), 6 * 64);
        assert_eq!(m2.n_dofs(), 27);
        assert!((m2.h() - 3f64.sqrt() / 4.0).abs() < 1e-15);
        assert!((m2.measure() - 1.0).abs() < 1e-13);
        let lin = m2.lineage().unwrap();
        for (v, origin) in lin.origins.iter().enumerate() {
            let p = m2.vertex(v);
            let q = match *origin {
                VertexOrigin::Copy(a) => *lin.parent.vertex(a),
                VertexOrigin::Midpoint(a, b) => {
                    let (x, y) = (lin.parent.vertex(a), lin.parent.vertex(b));
                    [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1]), 0.5 * (x[2] + y[2])]
                }
            };
            assert_eq!(*p, q);
        }
        let loc = m2.locate(&[0.3, 0.6, 0.45]).unwrap();
        assert!(loc.barycentric.iter().all(|&b| b >= -TOL_GEOM));
    }

    #[test]
    fn json_export_shape() {
        let m = unit_square();
        let j = m.to_json();
        assert_eq!(j["vertices"].as_array().unwrap().len(), 4);
        assert_eq!(j["vertices"][2], serde_json::json!([1.0, 1.0]));
        assert_eq!(j["cells"][0], serde_json::json!([0, 1, 2]));
        assert_eq!(j["boundary"], serde_json::json!([true, true, true, true]));
    }
}
