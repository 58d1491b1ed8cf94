//! Procedural T10 mesh generators used by scenarios, benchmarks, and tests.

use crate::model::{Mesh, T10_NODES, TET_FACES};
use nalgebra::Vector3;
use std::collections::HashMap;

/// Six-tet Freudenthal split of a unit cell, as vertex paths from the
/// minimum to the maximum corner. Consistent across neighboring cells.
const CUBE_TETS: [[(usize, usize, usize); 4]; 6] = [
    [(0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1)],
    [(0, 0, 0), (1, 0, 0), (1, 0, 1), (1, 1, 1)],
    [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 1, 1)],
    [(0, 0, 0), (0, 1, 0), (0, 1, 1), (1, 1, 1)],
    [(0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1)],
    [(0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1)],
];

/// Promotes corner tetrahedra to T10 elements by inserting shared
/// mid-edge nodes, then extracts the outward-oriented boundary surface.
pub fn t10_from_corner_tets(
    mut corners: Vec<Vector3<f64>>,
    tets: Vec<[usize; 4]>,
    body: usize,
) -> Mesh {
    let mut tets = tets;
    // enforce positive orientation
    for t in &mut tets {
        let (a, b, c, d) = (corners[t[0]], corners[t[1]], corners[t[2]], corners[t[3]]);
        if (b - a).cross(&(c - a)).dot(&(d - a)) < 0.0 {
            t.swap(1, 2);
        }
    }
    let mut edge_node: HashMap<(usize, usize), usize> = HashMap::new();
    let mut elements = Vec::with_capacity(tets.len());
    const EDGES: [(usize, usize); 6] = [(0, 1), (1, 2), (2, 0), (0, 3), (1, 3), (2, 3)];
    for t in &tets {
        let mut el = [0usize; T10_NODES];
        el[..4].copy_from_slice(t);
        for (k, &(a, b)) in EDGES.iter().enumerate() {
            let key = if t[a] < t[b] { (t[a], t[b]) } else { (t[b], t[a]) };
            let id = *edge_node.entry(key).or_insert_with(|| {
                let mid = (corners[key.0] + corners[key.1]) * 0.5;
                corners.push(mid);
                corners.len() - 1
            });
            el[4 + k] = id;
        }
        elements.push(el);
    }
    // boundary faces: faces seen exactly once
    let mut face_count: HashMap<[usize; 3], ([usize; 3], usize, usize)> = HashMap::new();
    for (e, t) in tets.iter().enumerate() {
        for f in &TET_FACES {
            let tri = [t[f[0]], t[f[1]], t[f[2]]];
            let mut key = tri;
            key.sort_unstable();
            face_count
                .entry(key)
                .and_modify(|v| v.2 += 1)
                .or_insert((tri, e, 1));
        }
    }
    let mut surface_triangles: Vec<([usize; 3], usize)> = Vec::new();
    for (_, (tri, e, count)) in face_count {
        if count != 1 {
            continue;
        }
        let t = &tets[e];
        let opp = t.iter().copied().find(|i| !tri.contains(i)).unwrap();
        let (a, b, c) = (corners[tri[0]], corners[tri[1]], corners[tri[2]]);
        let tri = if (b - a).cross(&(c - a)).dot(&(corners[opp] - a)) < 0.0 {
            tri
        } else {
            [tri[0], tri[2], tri[1]]
        };
        surface_triangles.push((tri, body));
    }
    surface_triangles.sort_unstable();
    let body_of_node = vec![body; corners.len()];
    Mesh {
        node_positions_ref: corners,
        elements,
        surface_triangles,
        body_of_node,
    }
}

/// Structured T10 box `[origin, origin + size]` with `div` cells per axis;
/// each cell splits into six tetrahedra. A `(3, 2, 1)` division of the
/// benchmark beam yields 105 nodes / 36 elements / 315 DOFs.
pub fn t10_box(origin: Vector3<f64>, size: Vector3<f64>, div: (usize, usize, usize)) -> Mesh {
    let (nx, ny, nz) = div;
    assert!(nx >= 1 && ny >= 1 && nz >= 1, "need at least one cell per axis");
    let idx = |i: usize, j: usize, k: usize| (i * (ny + 1) + j) * (nz + 1) + k;
    let mut corners = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            for k in 0..=nz {
                corners.push(Vector3::new(
                    origin.x + size.x * i as f64 / nx as f64,
                    origin.y + size.y * j as f64 / ny as f64,
                    origin.z + size.z * k as f64 / nz as f64,
                ));
            }
        }
    }
    let mut tets = Vec::with_capacity(6 * nx * ny * nz);
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                for tet in &CUBE_TETS {
                    let mut t = [0usize; 4];
                    for (m, &(di, dj, dk)) in tet.iter().enumerate() {
                        t[m] = idx(i + di, j + dj, k + dk);
                    }
                    tets.push(t);
                }
            }
        }
    }
    t10_from_corner_tets(corners, tets, 0)
}

/// T10 ball of radius `r` centered at `center`, built by mapping a
/// structured cube grid onto the ball with the standard smooth
/// cube-to-sphere map (surface points land exactly on the sphere).
pub fn t10_ball(center: Vector3<f64>, r: f64, div: usize) -> Mesh {
    assert!(div >= 2, "ball needs at least two cells per axis");
    let n = div;
    let idx = |i: usize, j: usize, k: usize| (i * (n + 1) + j) * (n + 1) + k;
    let map = |p: Vector3<f64>| -> Vector3<f64> {
        let (x, y, z) = (p.x, p.y, p.z);
        let sx = x * (1.0 - y * y / 2.0 - z * z / 2.0 + y * y * z * z / 3.0).sqrt();
        let sy = y * (1.0 - x * x / 2.0 - z * z / 2.0 + x * x * z * z / 3.0).sqrt();
        let sz = z * (1.0 - x * x / 2.0 - y * y / 2.0 + x * x * y * y / 3.0).sqrt();
        center + Vector3::new(sx, sy, sz) * r
    };
    let mut corners = Vec::with_capacity((n + 1).pow(3));
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let p = Vector3::new(
                    2.0 * i as f64 / n as f64 - 1.0,
                    2.0 * j as f64 / n as f64 - 1.0,
                    2.0 * k as f64 / n as f64 - 1.0,
                );
                corners.push(map(p));
            }
        }
    }
    let mut tets = Vec::with_capacity(6 * n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for tet in &CUBE_TETS {
                    let mut t = [0usize; 4];
                    for (m, &(di, dj, dk)) in tet.iter().enumerate() {
                        t[m] = idx(i + di, j + dj, k + dk);
                    }
                    tets.push(t);
                }
            }
        }
    }
    t10_from_corner_tets(corners, tets, 0)
}

/// One regular-ish T10 tetrahedron with unit edge corners.
pub fn single_tet() -> Mesh {
    let corners = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.5, 3f64.sqrt() / 2.0, 0.0),
        Vector3::new(0.5, 3f64.sqrt() / 6.0, (2f64 / 3.0).sqrt()),
    ];
    t10_from_corner_tets(corners, vec![[0, 1, 2, 3]], 0)
}

/// Rigidly translates every node of a mesh.
pub fn translate(mesh: &mut Mesh, offset: Vector3<f64>) {
    for p in &mut mesh.node_positions_ref {
        *p += offset;
    }
}

/// Merges single-body meshes into one multi-body mesh; body id = input
/// position.
pub fn merge(parts: Vec<Mesh>) -> Mesh {
    let mut out = Mesh {
        node_positions_ref: Vec::new(),
        elements: Vec::new(),
        surface_triangles: Vec::new(),
        body_of_node: Vec::new(),
    };
    for (body, part) in parts.into_iter().enumerate() {
        let base = out.node_positions_ref.len();
        out.node_positions_ref.extend(part.node_positions_ref);
        out.body_of_node
            .extend(std::iter::repeat(body).take(out.node_positions_ref.len() - base));
        for el in part.elements {
            let mut e = el;
            for i in &mut e {
                *i += base;
            }
            out.elements.push(e);
        }
        for (tri, _) in part.surface_triangles {
            out.surface_triangles
                .push(([tri[0] + base, tri[1] + base, tri[2] + base], body));
        }
    }
    out
}

/// Node indices whose reference coordinate along `axis` is within `tol`
/// of `value`.
pub fn nodes_on_plane(mesh: &Mesh, axis: usize, value: f64, tol: f64) -> Vec<usize> {
    mesh.node_positions_ref
        .iter()
        .enumerate()
        .filter(|(_, p)| (p[axis] - value).abs() <= tol)
        .map(|(i, _)| i)
        .collect()
}

/// Node nearest to `point` in the reference configuration.
pub fn nearest_node(mesh: &Mesh, point: Vector3<f64>) -> usize {
    mesh.node_positions_ref
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            let da = (*a - point).norm_squared();
            let db = (*b - point).norm_squared();
            da.partial_cmp(&db).unwrap()
        })
        .map(|(i, _)| i)
        .unwrap()
}
