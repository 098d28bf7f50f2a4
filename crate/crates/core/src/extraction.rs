//! Zero-level-set extraction by marching cubes and DSM rasterization of the
//! resulting mesh.
//!
//! The 256-case triangle table is built at first use from the cube topology:
//! each face contributes directed segments between its sign-change edges,
//! segments chain into closed loops, and loops are fanned into triangles.
//! On faces with two diagonal inside corners the inside corners are joined,
//! which is the same choice on both cubes sharing the face, so the mesh has
//! no cracks.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::camera::SceneBounds;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::raster::{GridSpec, Raster};
use crate::Vec3;

/// Corner `i` sits at `(i & 1, (i >> 1) & 1, (i >> 2) & 1)`.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Faces as corner cycles, counter-clockwise seen from outside the cube.
const FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2], // x = 0
    [1, 3, 7, 5], // x = 1
    [0, 1, 5, 4], // y = 0
    [2, 6, 7, 3], // y = 1
    [0, 2, 3, 1], // z = 0
    [4, 5, 7, 6], // z = 1
];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|&(p, q)| (p, q) == (a, b) || (p, q) == (b, a))
        .expect("corners share an edge")
}

/// Triangles (as edge triples) for one corner sign pattern; bit i set means
/// corner i is inside (value below the iso level).
fn case_triangles(case: u8) -> Vec<[u8; 3]> {
    let inside = |c: usize| case >> c & 1 == 1;
    // next[e] = edge that follows e along the surface loop
    let mut next = [usize::MAX; 12];
    for face in FACES {
        let mut crossings = Vec::new();
        for k in 0..4 {
            let (a, b) = (face[k], face[(k + 1) % 4]);
            if inside(a) != inside(b) {
                crossings.push((edge_between(a, b), inside(a)));
            }
        }
        // each inside-to-outside crossing pairs with the next crossing
        let n = crossings.len();
        for i in 0..n {
            let (e, leaving) = crossings[i];
            if leaving {
                let (f, _) = crossings[(i + 1) % n];
                next[f] = e;
            }
        }
    }
    let mut tris = Vec::new();
    let mut seen = [false; 12];
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut ring = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            ring.push(e as u8);
            e = next[e];
        }
        for k in 1..ring.len() - 1 {
            tris.push([ring[0], ring[k], ring[k + 1]]);
        }
    }
    tris
}

fn case_table() -> &'static Vec<Vec<[u8; 3]>> {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=255u8).map(case_triangles).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Canonical,
    Utm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub frame: Frame,
}

impl TriangleMesh {
    pub fn to_utm(&self, bounds: &SceneBounds) -> TriangleMesh {
        assert_eq!(self.frame, Frame::Canonical);
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| bounds.canonical_to_utm(*v)).collect(),
            triangles: self.triangles.clone(),
            frame: Frame::Utm,
        }
    }

    pub fn write_ply(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        let _ = write!(
            s,
            "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.triangles.len()
        );
        for v in &self.vertices {
            let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Reads an ASCII PLY with `x y z` vertices and triangle faces, as
    /// written by [`TriangleMesh::write_ply`]. Vertices are taken as UTM.
    pub fn read_ply(path: &Path) -> Result<TriangleMesh> {
        let text = crate::raster::read_text(path)?;
        let bad = |m: &str| Error::parse(path, m.to_string());
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("ply") {
            return Err(bad("missing `ply` magic"));
        }
        let (mut nv, mut nf) = (0usize, 0usize);
        loop {
            let line = lines.next().ok_or_else(|| bad("unterminated header"))?.trim();
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["end_header"] => break,
                ["format", f, ..] if *f != "ascii" => return Err(bad("only ascii PLY is supported")),
                ["element", "vertex", n] => nv = n.parse().map_err(|_| bad("bad vertex count"))?,
                ["element", "face", n] => nf = n.parse().map_err(|_| bad("bad face count"))?,
                _ => {}
            }
        }
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let line = lines.next().ok_or_else(|| bad("truncated vertex list"))?;
            let c: Vec<f64> = line
                .split_whitespace()
                .take(3)
                .map(|w| w.parse().map_err(|_| bad("bad vertex coordinate")))
                .collect::<Result<_>>()?;
            if c.len() != 3 {
                return Err(bad("vertex needs 3 coordinates"));
            }
            vertices.push(Vec3::new(c[0], c[1], c[2]));
        }
        let mut triangles = Vec::with_capacity(nf);
        for _ in 0..nf {
            let line = lines.next().ok_or_else(|| bad("truncated face list"))?;
            let idx: Vec<u32> = line
                .split_whitespace()
                .map(|w| w.parse().map_err(|_| bad("bad face index")))
                .collect::<Result<_>>()?;
            if idx.len() != 4 || idx[0] != 3 || idx[1..].iter().any(|i| *i as usize >= nv) {
                return Err(bad("faces must be triangles with valid indices"));
            }
            triangles.push([idx[1], idx[2], idx[3]]);
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
            frame: Frame::Utm,
        })
    }
}

/// Samples of a scalar function on a regular lattice, x fastest.
#[derive(Debug, Clone)]
pub struct ScalarGrid {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    /// Evaluates `f` at every lattice point, z-slices in parallel.
    pub fn sample<F: Fn(&Vec3) -> f64 + Sync>(dims: [usize; 3], origin: Vec3, spacing: f64, f: F) -> Self {
        let [nx, ny, nz] = dims;
        let values = (0..nz)
            .into_par_iter()
            .flat_map_iter(|k| {
                let f = &f;
                (0..ny).flat_map(move |j| {
                    (0..nx).map(move |i| f(&(origin + Vec3::new(i as f64, j as f64, k as f64) * spacing)))
                })
            })
            .collect();
        Self {
            dims,
            origin,
            spacing,
            values,
        }
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(k * self.dims[1] + j) * self.dims[0] + i]
    }
}

/// Marching cubes over a lattice. Values below `iso` are inside; triangles
/// are wound so their normals point to the outside. Vertices on the same
/// lattice edge are shared, then vertices within 1e-7 are welded and
/// degenerate triangles dropped.
pub fn marching_cubes_grid(grid: &ScalarGrid, iso: f64) -> Result<TriangleMesh> {
    let [nx, ny, nz] = grid.dims;
    if nx < 2 || ny < 2 || nz < 2 {
        return Err(Error::InvalidArgument(
            "lattice needs at least 2 points per axis".into(),
        ));
    }
    let table = case_table();
    let mut vertices = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let mut triangles = Vec::new();
    let corner_offset = |c: usize| (c & 1, (c >> 1) & 1, (c >> 2) & 1);
    let lin = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut vals = [0.0; 8];
                let mut case = 0u8;
                for (c, v) in vals.iter_mut().enumerate() {
                    let (a, b, d) = corner_offset(c);
                    *v = grid.at(i + a, j + b, k + d);
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "field value at lattice point ({i}, {j}, {k})"
                        )));
                    }
                    if *v < iso {
                        case |= 1 << c;
                    }
                }
                let tris = &table[case as usize];
                if tris.is_empty() {
                    continue;
                }
                let mut vid = |e: u8| -> u32 {
                    let (c0, c1) = EDGES[e as usize];
                    let (a0, b0, d0) = corner_offset(c0);
                    let (a1, b1, d1) = corner_offset(c1);
                    let p0 = lin(i + a0, j + b0, k + d0);
                    let p1 = lin(i + a1, j + b1, k + d1);
                    *edge_vertex.entry((p0.min(p1), p0.max(p1))).or_insert_with(|| {
                        let (f0, f1) = (vals[c0], vals[c1]);
                        let t = (iso - f0) / (f1 - f0);
                        let x0 = Vec3::new((i + a0) as f64, (j + b0) as f64, (k + d0) as f64);
                        let x1 = Vec3::new((i + a1) as f64, (j + b1) as f64, (k + d1) as f64);
                        vertices.push(grid.origin + (x0 + (x1 - x0) * t) * grid.spacing);
                        (vertices.len() - 1) as u32
                    })
                };
                for t in tris {
                    triangles.push([vid(t[0]), vid(t[1]), vid(t[2])]);
                }
            }
        }
    }
    if triangles.is_empty() {
        return Err(Error::EmptySurface);
    }
    Ok(weld(vertices, triangles, 1e-7))
}

fn weld(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>, tol: f64) -> TriangleMesh {
    let mut map = Vec::with_capacity(vertices.len());
    let mut kept: Vec<Vec3> = Vec::new();
    let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    let key = |v: &Vec3| {
        [
            (v.x / tol).floor() as i64,
            (v.y / tol).floor() as i64,
            (v.z / tol).floor() as i64,
        ]
    };
    for v in &vertices {
        let k = key(v);
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &idx in list {
                            if (kept[idx as usize] - v).norm() <= tol {
                                found = Some(idx);
                                break 'search;
                            }
                        }
                    }
                }
            }
        }
        let idx = found.unwrap_or_else(|| {
            kept.push(*v);
            let idx = (kept.len() - 1) as u32;
            cells.entry(k).or_default().push(idx);
            idx
        });
        map.push(idx);
    }
    let triangles = triangles
        .into_iter()
        .map(|t| t.map(|i| map[i as usize]))
        .filter(|t| {
            let (a, b, c) = (kept[t[0] as usize], kept[t[1] as usize], kept[t[2] as usize]);
            t[0] != t[1] && t[1] != t[2] && t[0] != t[2] && 0.5 * (b - a).cross(&(c - a)).norm() > 1e-12
        })
        .collect();
    TriangleMesh {
        vertices: kept,
        triangles,
        frame: Frame::Canonical,
    }
}

/// Samples the field's SDF (all levels active) on `resolution`³ points
/// spanning the canonical cube and runs marching cubes at level 0.
pub fn marching_cubes(field: &Field, params: &[f64], resolution: usize) -> Result<TriangleMesh> {
    if resolution < 8 {
        return Err(Error::InvalidArgument(format!(
            "marching cubes resolution {resolution} < 8"
        )));
    }
    let lambda = field.grid.config.levels as f64;
    let spacing = 2.0 / (resolution - 1) as f64;
    let grid = ScalarGrid::sample([resolution; 3], Vec3::repeat(-1.0), spacing, |x| {
        field.sdf(params, x, lambda)
    });
    marching_cubes_grid(&grid, 0.0)
}

/// Highest mesh intersection of each cell's vertical center line; NaN where
/// nothing is hit. With `fill_radius`, empty cells are then filled by
/// inverse-distance weighting of the data cells within that many cells.
pub fn rasterize_dsm(mesh: &TriangleMesh, spec: GridSpec, fill_radius: Option<f64>) -> Raster {
    let mut out = Raster::filled(spec, f64::NAN);
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
        // triangle in continuous (row, col) coordinates
        let pa = spec.to_cell(a.x, a.y);
        let pb = spec.to_cell(b.x, b.y);
        let pc = spec.to_cell(c.x, c.y);
        let rmin = pa.0.min(pb.0).min(pc.0).ceil().max(0.0) as usize;
        let rmax = pa.0.max(pb.0).max(pc.0).floor();
        let cmin = pa.1.min(pb.1).min(pc.1).ceil().max(0.0) as usize;
        let cmax = pa.1.max(pb.1).max(pc.1).floor();
        if rmax < 0.0 || cmax < 0.0 {
            continue;
        }
        let rmax = (rmax as usize).min(spec.height.saturating_sub(1));
        let cmax = (cmax as usize).min(spec.width.saturating_sub(1));
        for row in rmin..=rmax {
            for col in cmin..=cmax {
                let (e, n) = spec.cell_center(row, col);
                if let Some(z) = vertical_hit(&a, &b, &c, e, n) {
                    let cur = out.get(row, col);
                    if !(cur >= z) {
                        out.set(row, col, z);
                    }
                }
            }
        }
    }
    if let Some(r) = fill_radius {
        idw_fill(&mut out, r);
    }
    out
}

/// Altitude where the vertical line through (e, n) meets the triangle, if it
/// does (edges inclusive). Vertical triangles never report a hit.
pub fn vertical_hit(a: &Vec3, b: &Vec3, c: &Vec3, e: f64, n: f64) -> Option<f64> {
    let cross = |p: &Vec3, q: &Vec3, x: f64, y: f64| (q.x - p.x) * (y - p.y) - (q.y - p.y) * (x - p.x);
    let area = cross(a, b, c.x, c.y);
    if area == 0.0 {
        return None;
    }
    let w0 = cross(b, c, e, n) / area;
    let w1 = cross(c, a, e, n) / area;
    let w2 = cross(a, b, e, n) / area;
    if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
        return None;
    }
    Some(w0 * a.z + w1 * b.z + w2 * c.z)
}

fn idw_fill(r: &mut Raster, radius: f64) {
    let src = r.clone();
    let (w, h) = (src.spec.width as isize, src.spec.height as isize);
    let k = radius.floor() as isize;
    for row in 0..h {
        for col in 0..w {
            if src.get(row as usize, col as usize).is_finite() {
                continue;
            }
            let (mut num, mut den) = (0.0, 0.0);
            for dr in -k..=k {
                for dc in -k..=k {
                    let (rr, cc) = (row + dr, col + dc);
                    if rr < 0 || cc < 0 || rr >= h || cc >= w {
                        continue;
                    }
                    let d2 = (dr * dr + dc * dc) as f64;
                    let v = src.get(rr as usize, cc as usize);
                    if d2 == 0.0 || d2 > radius * radius || !v.is_finite() {
                        continue;
                    }
                    num += v / d2;
                    den += 1.0 / d2;
                }
            }
            if den > 0.0 {
                r.set(row as usize, col as usize, num / den);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_grid(n: usize, r: f64) -> ScalarGrid {
        let h = 2.0 / (n - 1) as f64;
        ScalarGrid::sample([n; 3], Vec3::repeat(-1.0), h, |x| x.norm() - r)
    }

    #[test]
    fn every_case_closes_its_loops() {
        for case in 0..=255u8 {
            let tris = case_triangles(case);
            let crossed = EDGES.iter().filter(|(a, b)| (case >> a & 1) != (case >> b & 1)).count();
            let used: std::collections::BTreeSet<u8> = tris.iter().flatten().copied().collect();
            assert_eq!(used.len(), crossed, "case {case}");
            // a loop over k edges gives k - 2 triangles
            assert!(crossed == 0 || tris.len() <= crossed - 2, "case {case}");
        }
        assert!(case_triangles(0).is_empty() && case_triangles(255).is_empty());
        assert_eq!(case_triangles(1).len(), 1);
    }

    #[test]
    fn sphere_vertices_near_radius_and_outward() {
        let g = sphere_grid(64, 0.5);
        let mesh = marching_cubes_grid(&g, 0.0).unwrap();
        let cell = g.spacing;
        for v in &mesh.vertices {
            assert!((v.norm() - 0.5).abs() <= 1.5 * cell);
        }
        let mut outward = 0;
        for t in &mesh.triangles {
            let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
            if (b - a).cross(&(c - a)).dot(&(a + b + c)) > 0.0 {
                outward += 1;
            }
        }
        assert_eq!(outward, mesh.triangles.len());
    }

    #[test]
    fn sphere_mesh_is_closed() {
        let mesh = marching_cubes_grid(&sphere_grid(24, 0.6), 0.0).unwrap();
        let mut edges: HashMap<(u32, u32), i32> = HashMap::new();
        for t in &mesh.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += if a < b { 1 } else { -1 };
            }
        }
        // every undirected edge used once in each direction
        assert!(edges.values().all(|v| *v == 0));
        let euler = mesh.vertices.len() as i64 - edges.len() as i64 + mesh.triangles.len() as i64;
        assert_eq!(euler, 2);
    }

    #[test]
    fn plane_gives_flat_sheet() {
        let g = ScalarGrid::sample([12; 3], Vec3::repeat(-1.0), 2.0 / 11.0, |x| x.z - 0.05);
        let mesh = marching_cubes_grid(&g, 0.0).unwrap();
        assert!(mesh.vertices.iter().all(|v| (v.z - 0.05).abs() < 1e-12));
    }

    #[test]
    fn constant_field_is_empty() {
        let g = ScalarGrid::sample([9; 3], Vec3::zeros(), 0.1, |_| 1.0);
        assert!(matches!(marching_cubes_grid(&g, 0.0), Err(Error::EmptySurface)));
    }

    fn plate(z: f64, lo: f64, hi: f64) -> TriangleMesh {
        TriangleMesh {
            vertices: vec![
                Vec3::new(lo, lo, z),
                Vec3::new(hi, lo, z),
                Vec3::new(hi, hi, z),
                Vec3::new(lo, hi, z),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            frame: Frame::Utm,
        }
    }

    fn spec(n: usize) -> GridSpec {
        GridSpec {
            origin: (0.0, 0.0),
            cell_size: 1.0,
            width: n,
            height: n,
        }
    }

    #[test]
    fn flat_and_stacked_plates() {
        let dsm = rasterize_dsm(&plate(30.0, -1.0, 11.0), spec(10), None);
        assert!(dsm.data.iter().all(|v| *v == 30.0));
        let mut both = plate(10.0, -1.0, 11.0);
        let top = plate(30.0, 2.0, 6.0);
        both.vertices.extend(&top.vertices);
        both.triangles.extend(top.triangles.iter().map(|t| t.map(|i| i + 4)));
        let dsm = rasterize_dsm(&both, spec(10), None);
        let (e, n) = dsm.spec.cell_center(5, 3);
        assert!((2.0..6.0).contains(&e) && (2.0..6.0).contains(&n));
        assert_eq!(dsm.get(5, 3), 30.0);
        assert_eq!(dsm.get(0, 0), 10.0);
    }

    /// Möller–Trumbore intersection of the downward ray from above.
    fn ray_triangle(o: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
        let d = Vec3::new(0.0, 0.0, -1.0);
        let (e1, e2) = (b - a, c - a);
        let p = d.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < 1e-14 {
            return None;
        }
        let s = o - a;
        let u = s.dot(&p) / det;
        let q = s.cross(&e1);
        let v = d.dot(&q) / det;
        if u < 0.0 || v < 0.0 || u + v > 1.0 {
            return None;
        }
        Some(o.z - e2.dot(&q) / det)
    }

    #[test]
    fn pyramid_matches_ray_oracle() {
        let apex = Vec3::new(4.3, 5.1, 7.0);
        let base = [
            Vec3::new(0.2, 0.4, 1.0),
            Vec3::new(9.1, 0.3, 1.5),
            Vec3::new(9.6, 9.4, 0.5),
            Vec3::new(0.5, 9.7, 2.0),
        ];
        let mut vertices = base.to_vec();
        vertices.push(apex);
        let triangles = vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4], [0, 2, 1], [0, 3, 2]];
        let mesh = TriangleMesh {
            vertices,
            triangles,
            frame: Frame::Utm,
        };
        let dsm = rasterize_dsm(&mesh, spec(10), None);
        for row in 0..10 {
            for col in 0..10 {
                let (e, n) = dsm.spec.cell_center(row, col);
                let o = Vec3::new(e, n, 100.0);
                let best = mesh
                    .triangles
                    .iter()
                    .filter_map(|t| {
                        ray_triangle(
                            &o,
                            &mesh.vertices[t[0] as usize],
                            &mesh.vertices[t[1] as usize],
                            &mesh.vertices[t[2] as usize],
                        )
                    })
                    .fold(f64::NAN, f64::max);
                let got = dsm.get(row, col);
                assert!(got.is_nan() == best.is_nan(), "cell ({row}, {col})");
                if best.is_finite() {
                    assert!((got - best).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn fill_only_touches_empty_cells_within_radius() {
        let mut r = Raster::filled(spec(20), f64::NAN);
        r.set(10, 10, 4.0);
        r.set(10, 12, 8.0);
        let before = r.clone();
        idw_fill(&mut r, 5.0);
        assert_eq!(r.get(10, 10), 4.0);
        assert_eq!(r.get(10, 11), 6.0);
        assert!(r.get(0, 0).is_nan());
        assert!(r.get(10, 16).is_finite() && r.get(10, 18).is_nan());
        assert!(before.valid_count() < r.valid_count());
    }

    #[test]
    fn height_field_survives_meshing_and_rasterizing() {
        use crate::camera::UtmZone;
        let zone = UtmZone::containing(-81.7, 30.3);
        let b = SceneBounds::new((30.2997, 30.3003), (-81.7003, -81.6997), -5.0, 25.0, zone).unwrap();
        let mid = (0.5 * (b.easting.0 + b.easting.1), 0.5 * (b.northing.0 + b.northing.1));
        let height = |e: f64, n: f64| 6.0 + 4.0 * ((e - mid.0) / 8.0).sin() * ((n - mid.1) / 10.0).cos();
        let res = 64;
        let h = 2.0 / (res - 1) as f64;
        let grid = ScalarGrid::sample([res; 3], Vec3::repeat(-1.0), h, |c| {
            let u = b.canonical_to_utm(*c);
            c.z - b.utm_to_canonical(Vec3::new(u.x, u.y, height(u.x, u.y))).z
        });
        let mesh = marching_cubes_grid(&grid, 0.0).unwrap().to_utm(&b);
        let cell = 0.5;
        let spec = GridSpec {
            origin: (mid.0 - 20.0, mid.1 - 20.0),
            cell_size: cell,
            width: 80,
            height: 80,
        };
        let dsm = rasterize_dsm(&mesh, spec, None);
        let mut sum = 0.0;
        for row in 0..spec.height {
            for col in 0..spec.width {
                let (e, n) = spec.cell_center(row, col);
                sum += (dsm.get(row, col) - height(e, n)).abs();
            }
        }
        let mae = sum / spec.len() as f64;
        let m = b.metres_per_unit();
        let bound = 2.0 * h * m.x.min(m.y).min(m.z);
        assert!(mae <= bound, "mae {mae} vs {bound}");
    }

    #[test]
    fn mesh_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = plate(1.0, 0.0, 1.0);
        m.write_ply(&dir.path().join("m.ply")).unwrap();
        m.write_obj(&dir.path().join("m.obj")).unwrap();
        let ply = std::fs::read_to_string(dir.path().join("m.ply")).unwrap();
        assert!(ply.contains("element vertex 4") && ply.ends_with("3 0 2 3\n"));
        let obj = std::fs::read_to_string(dir.path().join("m.obj")).unwrap();
        assert!(obj.ends_with("f 1 3 4\n"));
        let back = TriangleMesh::read_ply(&dir.path().join("m.ply")).unwrap();
        assert_eq!((back.vertices, back.triangles), (m.vertices, m.triangles));
    }
}
