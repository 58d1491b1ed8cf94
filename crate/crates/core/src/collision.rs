//! BVH-free triangle-soup collision detection: margin prisms, uniform-bin
//! broad phase, exact-distance candidate tests, patch labeling, and the
//! projection/clipping narrow phase with patch-level reduction.
//!
//! The broad phase works on "prisms": triangles inflated by a per-body
//! margin `d = (a v + b) h n_max` that future-proofs candidates across the
//! asynchronous detection lag. False positives are expected and filtered
//! by the narrow phase on the stepping side.

use crate::error::{Error, Result};
use crate::model::Mesh;
use nalgebra::Vector3;
use std::collections::HashMap;

/// Future-proof margin for a contact geometry moving at speed `v`.
/// Defaults `a = 1`, `b = 0.5`.
pub fn compute_margin(v: f64, h: f64, n_max: usize, a: f64, b: f64) -> f64 {
    (a * v + b) * h * n_max as f64
}

/// Static topology of a surface triangle soup: vertex indices, owner
/// bodies, and the shared-edge neighbor lists (built once).
#[derive(Debug, Clone)]
pub struct SoupTopology {
    pub tri_nodes: Vec<[usize; 3]>,
    pub tri_body: Vec<usize>,
    neighbor_offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl SoupTopology {
    pub fn from_triangles(tri_nodes: Vec<[usize; 3]>, tri_body: Vec<usize>) -> Self {
        let n = tri_nodes.len();
        let mut edge_map: HashMap<(usize, usize), Vec<u32>> = HashMap::new();
        for (t, tri) in tri_nodes.iter().enumerate() {
            for k in 0..3 {
                let (u, v) = (tri[k], tri[(k + 1) % 3]);
                let key = if u < v { (u, v) } else { (v, u) };
                edge_map.entry(key).or_default().push(t as u32);
            }
        }
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for tris in edge_map.values() {
            for (i, &a) in tris.iter().enumerate() {
                for &b in &tris[i + 1..] {
                    adj[a as usize].push(b);
                    adj[b as usize].push(a);
                }
            }
        }
        let mut neighbor_offsets = vec![0usize; n + 1];
        let mut neighbors = Vec::new();
        for (t, mut list) in adj.into_iter().enumerate() {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(&list);
            neighbor_offsets[t + 1] = neighbors.len();
        }
        SoupTopology {
            tri_nodes,
            tri_body,
            neighbor_offsets,
            neighbors,
        }
    }

    pub fn from_mesh(mesh: &Mesh) -> Self {
        let tri_nodes: Vec<[usize; 3]> = mesh.surface_triangles.iter().map(|(t, _)| *t).collect();
        let tri_body: Vec<usize> = mesh.surface_triangles.iter().map(|(_, b)| *b).collect();
        Self::from_triangles(tri_nodes, tri_body)
    }

    pub fn n_tris(&self) -> usize {
        self.tri_nodes.len()
    }

    pub fn neighbors_of(&self, t: usize) -> &[u32] {
        &self.neighbors[self.neighbor_offsets[t]..self.neighbor_offsets[t + 1]]
    }

    /// Gathers current vertex positions from a flat DOF array.
    pub fn positions(&self, q: &[f64]) -> Vec<[Vector3<f64>; 3]> {
        self.tri_nodes
            .iter()
            .map(|tri| {
                std::array::from_fn(|k| {
                    let i = tri[k];
                    Vector3::new(q[3 * i], q[3 * i + 1], q[3 * i + 2])
                })
            })
            .collect()
    }
}

/// Uniform axis-aligned cubic bins over the simulation domain.
#[derive(Debug, Clone)]
pub struct BinGrid {
    pub min: Vector3<f64>,
    pub bin_size: f64,
    pub dims: [usize; 3],
}

impl BinGrid {
    /// Grid covering all margined triangle AABBs.
    pub fn covering(pos: &[[Vector3<f64>; 3]], margins: &[f64], bin_size: f64) -> Result<Self> {
        if !(bin_size > 0.0) {
            return Err(Error::usage("bin size must be > 0"));
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for (tri, &m) in pos.iter().zip(margins) {
            for v in tri {
                for d in 0..3 {
                    lo[d] = lo[d].min(v[d] - m);
                    hi[d] = hi[d].max(v[d] + m);
                }
            }
        }
        if !lo.x.is_finite() {
            // empty soup: degenerate 1-bin grid
            return Ok(BinGrid {
                min: Vector3::zeros(),
                bin_size,
                dims: [1, 1, 1],
            });
        }
        let mut dims = [1usize; 3];
        for d in 0..3 {
            dims[d] = (((hi[d] - lo[d]) / bin_size).ceil() as usize).max(1);
        }
        Ok(BinGrid {
            min: lo,
            bin_size,
            dims,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    fn cell_of(&self, p: f64, d: usize) -> isize {
        ((p - self.min[d]) / self.bin_size).floor() as isize
    }

    fn clamp_cell(&self, c: isize, d: usize) -> Option<usize> {
        if c < 0 || c as usize >= self.dims[d] {
            None
        } else {
            Some(c as usize)
        }
    }

    pub fn bin_id(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.dims[1] + iy) * self.dims[2] + iz
    }

    /// Bin ids overlapped by the margined AABB of a triangle. Prism-bin
    /// intersection is approximated by AABB overlap; false positives are
    /// filtered downstream.
    fn bins_of(&self, tri: &[Vector3<f64>; 3], margin: f64, out: &mut Vec<usize>) -> Result<()> {
        out.clear();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for d in 0..3 {
            let mn = tri.iter().map(|v| v[d]).fold(f64::INFINITY, f64::min) - margin;
            let mx = tri.iter().map(|v| v[d]).fold(f64::NEG_INFINITY, f64::max) + margin;
            lo[d] = self.clamp_cell(self.cell_of(mn, d), d).ok_or_else(|| {
                Error::usage(format!("triangle outside binning domain (axis {d}); grow the grid"))
            })?;
            hi[d] = self.clamp_cell(self.cell_of(mx, d), d).ok_or_else(|| {
                Error::usage(format!("triangle outside binning domain (axis {d}); grow the grid"))
            })?;
        }
        for ix in lo[0]..=hi[0] {
            for iy in lo[1]..=hi[1] {
                for iz in lo[2]..=hi[2] {
                    out.push(self.bin_id(ix, iy, iz));
                }
            }
        }
        Ok(())
    }
}

/// Sorted (bin id, triangle id) pairs from a two-pass count-then-fill
/// build, grouping triangles that share a bin.
pub fn bin_triangles(
    pos: &[[Vector3<f64>; 3]],
    margins: &[f64],
    grid: &BinGrid,
) -> Result<Vec<(usize, u32)>> {
    // pass 1: count
    let mut scratch = Vec::new();
    let mut counts = vec![0usize; grid.n_bins() + 1];
    for (t, tri) in pos.iter().enumerate() {
        grid.bins_of(tri, margins[t], &mut scratch)?;
        for &b in &scratch {
            counts[b + 1] += 1;
        }
    }
    for b in 0..grid.n_bins() {
        counts[b + 1] += counts[b];
    }
    // pass 2: fill, grouped (hence sorted) by bin id
    let mut cursor = counts.clone();
    let mut pairs = vec![(0usize, 0u32); counts[grid.n_bins()]];
    for (t, tri) in pos.iter().enumerate() {
        grid.bins_of(tri, margins[t], &mut scratch)?;
        for &b in &scratch {
            pairs[cursor[b]] = (b, t as u32);
            cursor[b] += 1;
        }
    }
    Ok(pairs)
}

/// Candidate triangle pair in the active contact set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcsPair {
    pub i: u32,
    pub j: u32,
    pub body_i: usize,
    pub body_j: usize,
    /// Compact patch ids from the producing pass.
    pub patch_i: u32,
    pub patch_j: u32,
    /// Stable island roots (minimum triangle index of each island).
    pub root_i: u32,
    pub root_j: u32,
}

/// Detection output snapshot with its producing timestamp.
#[derive(Debug, Clone, Default)]
pub struct Acs {
    pub pairs: Vec<AcsPair>,
    pub timestamp: u64,
    pub stats: BinStats,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BinStats {
    pub max_bin_population: usize,
    pub n_bins: usize,
    /// Set when a bin exceeded the configured population cap; the caller
    /// should shrink the bin size for the next pass.
    pub resize_advised: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct DetectionConfig {
    /// Bin edge length; `None` picks 3x the median margined-AABB diagonal.
    pub bin_size: Option<f64>,
    pub max_per_bin: usize,
    pub self_collision: bool,
    pub margin_a: f64,
    pub margin_b: f64,
    pub n_max: usize,
    pub h: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            bin_size: None,
            max_per_bin: 512,
            self_collision: false,
            margin_a: 1.0,
            margin_b: 0.5,
            n_max: 10,
            h: 1e-3,
        }
    }
}

/// Default bin sizing: 3x the median margined-triangle bounding-box
/// diagonal.
pub fn auto_bin_size(pos: &[[Vector3<f64>; 3]], margins: &[f64]) -> f64 {
    let mut diags: Vec<f64> = pos
        .iter()
        .zip(margins)
        .map(|(tri, &m)| {
            let mut lo = Vector3::repeat(f64::INFINITY);
            let mut hi = Vector3::repeat(f64::NEG_INFINITY);
            for v in tri {
                for d in 0..3 {
                    lo[d] = lo[d].min(v[d]);
                    hi[d] = hi[d].max(v[d]);
                }
            }
            ((hi - lo).norm_squared() + 12.0 * m * m).sqrt()
        })
        .collect();
    if diags.is_empty() {
        return 1.0;
    }
    diags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    3.0 * diags[diags.len() / 2].max(1e-9)
}

/// Broad-phase candidates: within each bin all pairs are tested; a pair
/// is a candidate iff the distance between the base triangles does not
/// exceed the margin sum (the acceptance region of SAT over
/// margin-expanded prisms). Cross-bin duplicates are removed.
pub fn find_candidates(
    binned: &[(usize, u32)],
    pos: &[[Vector3<f64>; 3]],
    margins: &[f64],
    topo: &SoupTopology,
    cfg: &DetectionConfig,
) -> (Vec<(u32, u32)>, BinStats) {
    let mut stats = BinStats::default();
    let mut keys: Vec<u64> = Vec::new();
    let mut start = 0;
    while start < binned.len() {
        let bin = binned[start].0;
        let mut end = start;
        while end < binned.len() && binned[end].0 == bin {
            end += 1;
        }
        let group = &binned[start..end];
        stats.n_bins += 1;
        stats.max_bin_population = stats.max_bin_population.max(group.len());
        if group.len() > cfg.max_per_bin {
            stats.resize_advised = true;
        }
        for (gi, &(_, ti)) in group.iter().enumerate() {
            for &(_, tj) in &group[gi + 1..] {
                let (a, b) = if ti < tj { (ti, tj) } else { (tj, ti) };
                if a == b {
                    continue;
                }
                let (ba, bb) = (topo.tri_body[a as usize], topo.tri_body[b as usize]);
                if ba == bb && !cfg.self_collision {
                    continue;
                }
                let gap = margins[a as usize] + margins[b as usize];
                let d = tri_tri_distance(&pos[a as usize], &pos[b as usize]);
                if d <= gap {
                    keys.push(((a as u64) << 32) | b as u64);
                }
            }
        }
        start = end;
    }
    keys.sort_unstable();
    keys.dedup();
    let pairs = keys
        .iter()
        .map(|&k| ((k >> 32) as u32, (k & 0xffff_ffff) as u32))
        .collect();
    (pairs, stats)
}

/// Iterative min-label propagation over the shared-edge adjacency of the
/// active triangle set, compacted to contiguous patch ids.
///
/// Returns `(patch_of, roots)`: for each active triangle its compact
/// patch id, and for each patch the stable island root (minimum triangle
/// index), which persists across passes while the island survives.
pub fn patch_labels(topo: &SoupTopology, active: &[u32]) -> (HashMap<u32, u32>, Vec<u32>) {
    let mut label: HashMap<u32, u32> = active.iter().map(|&t| (t, t)).collect();
    // propagate the minimum label to a fixpoint
    loop {
        let mut changed = false;
        for &t in active {
            let mut best = label[&t];
            for &n in topo.neighbors_of(t as usize) {
                if let Some(&ln) = label.get(&n) {
                    if ln < best {
                        best = ln;
                    }
                }
            }
            if best < label[&t] {
                label.insert(t, best);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    // compact converged roots into contiguous patch ids (prefix-scan
    // equivalent)
    let mut roots: Vec<u32> = label.values().copied().collect();
    roots.sort_unstable();
    roots.dedup();
    let root_index: HashMap<u32, u32> = roots
        .iter()
        .enumerate()
        .map(|(i, &r)| (r, i as u32))
        .collect();
    let patch_of = label
        .into_iter()
        .map(|(t, r)| (t, root_index[&r]))
        .collect();
    (patch_of, roots)
}

/// One full detection pass (the kinematics-thread role): margins, bins,
/// candidates, patch labels.
pub fn detect(
    topo: &SoupTopology,
    pos: &[[Vector3<f64>; 3]],
    body_speed: &[f64],
    cfg: &DetectionConfig,
    timestamp: u64,
) -> Result<Acs> {
    let margins: Vec<f64> = (0..topo.n_tris())
        .map(|t| {
            compute_margin(
                body_speed[topo.tri_body[t]],
                cfg.h,
                cfg.n_max,
                cfg.margin_a,
                cfg.margin_b,
            )
        })
        .collect();
    let bin_size = cfg.bin_size.unwrap_or_else(|| auto_bin_size(pos, &margins));
    let grid = BinGrid::covering(pos, &margins, bin_size)?;
    let binned = bin_triangles(pos, &margins, &grid)?;
    let (raw_pairs, stats) = find_candidates(&binned, pos, &margins, topo, cfg);

    let mut active: Vec<u32> = raw_pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
    active.sort_unstable();
    active.dedup();
    let (patch_of, roots) = patch_labels(topo, &active);

    let mut pairs = Vec::with_capacity(raw_pairs.len());
    for (i, j) in raw_pairs {
        let (pi, pj) = (patch_of[&i], patch_of[&j]);
        let (bi, bj) = (topo.tri_body[i as usize], topo.tri_body[j as usize]);
        // same-patch pairs of one body are internal, not contacts
        if bi == bj && pi == pj {
            continue;
        }
        pairs.push(AcsPair {
            i,
            j,
            body_i: bi,
            body_j: bj,
            patch_i: pi,
            patch_j: pj,
            root_i: roots[pi as usize],
            root_j: roots[pj as usize],
        });
    }
    Ok(Acs {
        pairs,
        timestamp,
        stats,
    })
}

// ---------------------------------------------------------------------
// exact triangle-triangle distance
// ---------------------------------------------------------------------

fn closest_point_on_triangle(p: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Vector3<f64> {
    // Ericson, Real-Time Collision Detection, 5.1.5
    let (a, b, c) = (tri[0], tri[1], tri[2]);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

fn segment_segment_distance(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> f64 {
    // Ericson 5.1.9 (clamped closest points of two segments)
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a <= 1e-30 && e <= 1e-30 {
        return (p1 - p2).norm();
    }
    if a <= 1e-30 {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= 1e-30 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut sv = if denom.abs() > 1e-30 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut tv = (b * sv + f) / e;
            if tv < 0.0 {
                tv = 0.0;
                sv = (-c / a).clamp(0.0, 1.0);
            } else if tv > 1.0 {
                tv = 1.0;
                sv = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = sv;
            t = tv;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

fn segment_hits_triangle(p: &Vector3<f64>, q: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> bool {
    let (a, b, c) = (tri[0], tri[1], tri[2]);
    let n = (b - a).cross(&(c - a));
    let d = q - p;
    let denom = n.dot(&d);
    if denom.abs() < 1e-300 {
        return false; // parallel; edge-edge distances handle contact
    }
    let t = n.dot(&(a - p)) / denom;
    if !(0.0..=1.0).contains(&t) {
        return false;
    }
    let x = p + d * t;
    // barycentric containment
    let v0 = b - a;
    let v1 = c - a;
    let v2 = x - a;
    let d00 = v0.norm_squared();
    let d01 = v0.dot(&v1);
    let d11 = v1.norm_squared();
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let den = d00 * d11 - d01 * d01;
    if den.abs() < 1e-300 {
        return false;
    }
    let v = (d11 * d20 - d01 * d21) / den;
    let w = (d00 * d21 - d01 * d20) / den;
    v >= 0.0 && w >= 0.0 && v + w <= 1.0
}

/// Exact minimum distance between two triangles (0 when they intersect).
pub fn tri_tri_distance(t1: &[Vector3<f64>; 3], t2: &[Vector3<f64>; 3]) -> f64 {
    // proper crossings
    for k in 0..3 {
        if segment_hits_triangle(&t1[k], &t1[(k + 1) % 3], t2)
            || segment_hits_triangle(&t2[k], &t2[(k + 1) % 3], t1)
        {
            return 0.0;
        }
    }
    let mut best = f64::INFINITY;
    for k in 0..3 {
        best = best.min((closest_point_on_triangle(&t1[k], t2) - t1[k]).norm());
        best = best.min((closest_point_on_triangle(&t2[k], t1) - t2[k]).norm());
    }
    for i in 0..3 {
        for j in 0..3 {
            best = best.min(segment_segment_distance(
                &t1[i],
                &t1[(i + 1) % 3],
                &t2[j],
                &t2[(j + 1) % 3],
            ));
        }
    }
    best
}

// ---------------------------------------------------------------------
// narrow phase
// ---------------------------------------------------------------------

/// Primitive (triangle-pair) contact from the projection method. The
/// normal points from the second triangle's body toward the first's, so
/// the force on body `i` acts along `+normal`.
#[derive(Debug, Clone, Copy)]
pub struct PrimitiveContact {
    pub depth: f64,
    pub point: Vector3<f64>,
    pub area: f64,
    pub normal: Vector3<f64>,
}

#[derive(Clone, Copy)]
struct ClipVertex {
    p: Vector3<f64>,
    /// Signed height of the projector surface above the projectee plane.
    s: f64,
}

/// Clips the polygon against the half-plane `(p - origin) . inward >= 0`,
/// interpolating the carried attribute (exact: the attribute is affine).
fn clip_against(poly: &mut Vec<ClipVertex>, origin: &Vector3<f64>, inward: &Vector3<f64>) {
    if poly.is_empty() {
        return;
    }
    let mut out: Vec<ClipVertex> = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let cur = poly[k];
        let nxt = poly[(k + 1) % poly.len()];
        let dc = (cur.p - origin).dot(inward);
        let dn = (nxt.p - origin).dot(inward);
        if dc >= 0.0 {
            out.push(cur);
        }
        if (dc > 0.0 && dn < 0.0) || (dc < 0.0 && dn > 0.0) {
            let t = dc / (dc - dn);
            out.push(ClipVertex {
                p: cur.p + (nxt.p - cur.p) * t,
                s: cur.s + (nxt.s - cur.s) * t,
            });
        }
    }
    *poly = out;
}

/// Projects `projector` onto `projectee`'s plane, clips against the
/// projectee, and measures the overlap. Returns `(area, depth, point,
/// projectee normal)`; `None` when the clipped area vanishes or all
/// signed distances indicate separation.
fn project_and_clip(
    projector: &[Vector3<f64>; 3],
    projectee: &[Vector3<f64>; 3],
) -> Option<(f64, f64, Vector3<f64>, Vector3<f64>)> {
    let n_raw = (projectee[1] - projectee[0]).cross(&(projectee[2] - projectee[0]));
    let n2 = n_raw.norm();
    if n2 < 1e-30 {
        return None;
    }
    let n = n_raw / n2;
    let mut poly: Vec<ClipVertex> = projector
        .iter()
        .map(|v| {
            let s = (v - projectee[0]).dot(&n);
            ClipVertex { p: v - n * s, s }
        })
        .collect();
    for k in 0..3 {
        let e0 = projectee[k];
        let e1 = projectee[(k + 1) % 3];
        let inward = n.cross(&(e1 - e0));
        clip_against(&mut poly, &e0, &inward);
        if poly.is_empty() {
            return None;
        }
    }
    // area, centroid, and mean height of the clipped planar polygon
    let mut area = 0.0;
    let mut centroid = Vector3::zeros();
    let mut s_mean = 0.0;
    let p0 = poly[0];
    for k in 1..poly.len() - 1 {
        let (p1, p2) = (poly[k], poly[k + 1]);
        let a = 0.5 * (p1.p - p0.p).cross(&(p2.p - p0.p)).norm();
        area += a;
        centroid += (p0.p + p1.p + p2.p) * (a / 3.0);
        s_mean += a * (p0.s + p1.s + p2.s) / 3.0;
    }
    if area < 1e-18 {
        return None;
    }
    centroid /= area;
    s_mean /= area;
    let s_min = poly.iter().map(|v| v.s).fold(f64::INFINITY, f64::min);
    if s_min > 0.0 {
        return None; // positive gap everywhere: broad-phase false positive
    }
    let depth = -s_min;
    // estimated center of the projection pillar: polygon centroid midway
    // along the projection
    let point = centroid + n * (0.5 * s_mean);
    Some((area, depth, point, n))
}

/// Projection narrow phase for a candidate pair. Both projection roles
/// are evaluated and the one with the smaller penetration depth wins.
pub fn primitive_contact(
    tri_i: &[Vector3<f64>; 3],
    tri_j: &[Vector3<f64>; 3],
) -> Option<PrimitiveContact> {
    let degenerate = |t: &[Vector3<f64>; 3]| {
        (t[1] - t[0]).cross(&(t[2] - t[0])).norm() < 1e-30
    };
    if degenerate(tri_i) || degenerate(tri_j) {
        return None;
    }
    // role A: project i onto j's plane (normal = j's, points toward i)
    let a = project_and_clip(tri_i, tri_j).map(|(area, depth, point, n)| PrimitiveContact {
        depth,
        point,
        area,
        normal: n,
    });
    // role B: project j onto i's plane; flip so the normal still points
    // toward body i
    let b = project_and_clip(tri_j, tri_i).map(|(area, depth, point, n)| PrimitiveContact {
        depth,
        point,
        area,
        normal: -n,
    });
    // A physical face contact penetrates in both projection roles; a
    // single-sided "penetration" is a grazing or co-oriented broad-phase
    // false positive (e.g. a side face over a large floor) and is ruled
    // out here.
    match (a, b) {
        (Some(x), Some(y)) => Some(if x.depth <= y.depth { x } else { y }),
        _ => None,
    }
}

/// Patch-level contact consumed by the force model.
#[derive(Debug, Clone, Copy)]
pub struct PatchContact {
    pub normal: Vector3<f64>,
    pub area: f64,
    pub depth: f64,
    pub point: Vector3<f64>,
}

/// Reduces the primitive contacts of one patch pair: area-weighted normal
/// vote, projected area sum, max projected depth, and pillar-volume
/// weighted contact point.
pub fn patch_reduce(primitives: &[PrimitiveContact]) -> Result<PatchContact> {
    if primitives.is_empty() {
        return Err(Error::usage("patch_reduce needs at least one primitive"));
    }
    let mut vote = Vector3::zeros();
    for p in primitives {
        vote += p.normal * p.area;
    }
    let vote_norm = vote.norm();
    let total_area: f64 = primitives.iter().map(|p| p.area).sum();
    if vote_norm < 1e-12 * total_area.max(1e-30) {
        return Err(Error::DegeneratePatch(format!(
            "voted normal vanished over {} primitives",
            primitives.len()
        )));
    }
    let n = vote / vote_norm;
    let mut area = 0.0;
    let mut depth: f64 = 0.0;
    let mut point_acc = Vector3::zeros();
    let mut weight_acc = 0.0;
    for p in primitives {
        let align = p.normal.dot(&n).max(0.0);
        let a_proj = p.area * align;
        let d_proj = p.depth * align;
        area += a_proj;
        depth = depth.max(d_proj);
        let w = a_proj * d_proj; // pillar volume
        point_acc += p.point * w;
        weight_acc += w;
    }
    let point = if weight_acc > 1e-30 {
        point_acc / weight_acc
    } else {
        // all depths zero: fall back to area weights
        let mut acc = Vector3::zeros();
        for p in primitives {
            acc += p.point * p.area;
        }
        acc / total_area
    };
    Ok(PatchContact {
        normal: n,
        area,
        depth,
        point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tri(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [Vector3<f64>; 3] {
        [Vector3::from(a), Vector3::from(b), Vector3::from(c)]
    }

    #[test]
    fn margin_examples() {
        assert_relative_eq!(compute_margin(0.0, 1e-4, 10, 1.0, 0.5), 5e-4, epsilon = 1e-18);
        assert_eq!(compute_margin(3.0, 1e-4, 10, 0.0, 0.0), 0.0);
        let cfg = DetectionConfig::default();
        assert_eq!((cfg.margin_a, cfg.margin_b), (1.0, 0.5));
    }

    #[test]
    fn one_small_triangle_one_bin() {
        let pos = vec![tri([0.1, 0.1, 0.1], [0.2, 0.1, 0.1], [0.1, 0.2, 0.1])];
        let margins = vec![0.01];
        let grid = BinGrid::covering(&pos, &margins, 10.0).unwrap();
        let pairs = bin_triangles(&pos, &margins, &grid).unwrap();
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn prism_at_shared_corner_touches_eight_bins() {
        // bins of size 1 over [0,2]^3; a tiny triangle near (1,1,1) with
        // margin crossing the corner lands in all eight bins
        let pos = vec![tri(
            [0.99, 0.99, 0.99],
            [1.0, 0.99, 0.99],
            [0.99, 1.0, 0.99],
        )];
        let margins = vec![0.05];
        let grid = BinGrid {
            min: Vector3::zeros(),
            bin_size: 1.0,
            dims: [2, 2, 2],
        };
        let pairs = bin_triangles(&pos, &margins, &grid).unwrap();
        assert_eq!(pairs.len(), 8);
    }

    #[test]
    fn binning_matches_bruteforce_aabb_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pos: Vec<[Vector3<f64>; 3]> = (0..60)
            .map(|_| {
                let base = Vector3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                );
                [
                    base,
                    base + Vector3::new(rng.gen_range(0.0..0.5), 0.0, 0.1),
                    base + Vector3::new(0.0, rng.gen_range(0.0..0.5), 0.2),
                ]
            })
            .collect();
        let margins: Vec<f64> = (0..60).map(|_| rng.gen_range(0.0..0.1)).collect();
        let grid = BinGrid::covering(&pos, &margins, 0.6).unwrap();
        let pairs = bin_triangles(&pos, &margins, &grid).unwrap();

        // O(n_bins * n_tri) oracle
        let mut oracle: Vec<(usize, u32)> = Vec::new();
        for (t, tr) in pos.iter().enumerate() {
            let m = margins[t];
            let mut lo = Vector3::repeat(f64::INFINITY);
            let mut hi = Vector3::repeat(f64::NEG_INFINITY);
            for v in tr {
                for d in 0..3 {
                    lo[d] = lo[d].min(v[d] - m);
                    hi[d] = hi[d].max(v[d] + m);
                }
            }
            for ix in 0..grid.dims[0] {
                for iy in 0..grid.dims[1] {
                    for iz in 0..grid.dims[2] {
                        let bmin = grid.min
                            + Vector3::new(ix as f64, iy as f64, iz as f64) * grid.bin_size;
                        let bmax = bmin + Vector3::repeat(grid.bin_size);
                        let _ = bmin;
                        let _ = bmax;
                        // same half-open cell convention as cell_of/floor
                        let overlap = (0..3).all(|d| {
                            let clo = grid.cell_of(lo[d], d);
                            let chi = grid.cell_of(hi[d], d);
                            let c = [ix, iy, iz][d] as isize;
                            clo <= c && c <= chi
                        });
                        if overlap {
                            oracle.push((grid.bin_id(ix, iy, iz), t as u32));
                        }
                    }
                }
            }
        }
        let mut sorted = pairs.clone();
        sorted.sort_unstable();
        oracle.sort_unstable();
        assert_eq!(sorted, oracle);
        // output is sorted by bin id
        assert!(pairs.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    fn random_scene(
        rng: &mut impl Rng,
        n: usize,
        extent: f64,
        size: f64,
    ) -> (SoupTopology, Vec<[Vector3<f64>; 3]>) {
        let mut tri_nodes = Vec::new();
        let mut tri_body = Vec::new();
        let mut pos = Vec::new();
        for t in 0..n {
            let base = Vector3::new(
                rng.gen_range(-extent..extent),
                rng.gen_range(-extent..extent),
                rng.gen_range(-extent..extent),
            );
            let e1 = Vector3::new(
                rng.gen_range(-size..size),
                rng.gen_range(-size..size),
                rng.gen_range(-size..size),
            );
            let e2 = Vector3::new(
                rng.gen_range(-size..size),
                rng.gen_range(-size..size),
                rng.gen_range(-size..size),
            );
            tri_nodes.push([3 * t, 3 * t + 1, 3 * t + 2]);
            tri_body.push(t); // every triangle its own body
            pos.push([base, base + e1, base + e2]);
        }
        (SoupTopology::from_triangles(tri_nodes, tri_body), pos)
    }

    #[test]
    fn candidates_have_zero_false_negatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let (topo, pos) = random_scene(&mut rng, 120, 1.0, 0.25);
            let margins: Vec<f64> = (0..topo.n_tris()).map(|_| 0.02).collect();
            let cfg = DetectionConfig {
                bin_size: Some(0.5),
                ..Default::default()
            };
            let grid = BinGrid::covering(&pos, &margins, 0.5).unwrap();
            let binned = bin_triangles(&pos, &margins, &grid).unwrap();
            let (pairs, _) = find_candidates(&binned, &pos, &margins, &topo, &cfg);
            use std::collections::HashSet;
            let set: HashSet<(u32, u32)> = pairs.into_iter().collect();
            // all-pairs oracle
            for i in 0..topo.n_tris() {
                for j in i + 1..topo.n_tris() {
                    let d = tri_tri_distance(&pos[i], &pos[j]);
                    if d <= margins[i] + margins[j] {
                        assert!(
                            set.contains(&(i as u32, j as u32)),
                            "missed pair ({i},{j}) at distance {d}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn candidate_rejects_separated_parallel_pair() {
        let t1 = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let t2 = tri([0.0, 0.0, 0.5], [1.0, 0.0, 0.5], [0.0, 1.0, 0.5]);
        let topo = SoupTopology::from_triangles(vec![[0, 1, 2], [3, 4, 5]], vec![0, 1]);
        let pos = vec![t1, t2];
        let margins = vec![0.1, 0.1];
        let grid = BinGrid::covering(&pos, &margins, 5.0).unwrap();
        let binned = bin_triangles(&pos, &margins, &grid).unwrap();
        let (pairs, _) =
            find_candidates(&binned, &pos, &margins, &topo, &DetectionConfig::default());
        assert!(pairs.is_empty(), "gap 0.5 > margin sum 0.2");
    }

    #[test]
    fn duplicate_pairs_from_shared_bins_are_removed() {
        // two large overlapping triangles spanning several bins
        let t1 = tri([-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, 0.0]);
        let t2 = tri([-1.0, -1.0, 0.01], [1.0, -1.0, 0.01], [0.0, 1.0, 0.01]);
        let topo = SoupTopology::from_triangles(vec![[0, 1, 2], [3, 4, 5]], vec![0, 1]);
        let pos = vec![t1, t2];
        let margins = vec![0.05, 0.05];
        let grid = BinGrid::covering(&pos, &margins, 0.5).unwrap();
        let binned = bin_triangles(&pos, &margins, &grid).unwrap();
        assert!(binned.len() > 4, "triangles span multiple bins");
        let (pairs, _) =
            find_candidates(&binned, &pos, &margins, &topo, &DetectionConfig::default());
        assert_eq!(pairs, vec![(0, 1)]);
    }

    #[test]
    fn patch_labels_examples_and_oracle() {
        // two disjoint triangles -> two patches
        let topo = SoupTopology::from_triangles(vec![[0, 1, 2], [3, 4, 5]], vec![0, 0]);
        let (patch_of, roots) = patch_labels(&topo, &[0, 1]);
        assert_eq!(roots.len(), 2);
        assert_ne!(patch_of[&0], patch_of[&1]);

        // closed ball surface -> one patch
        let mesh = crate::meshgen::t10_ball(Vector3::zeros(), 0.2, 3);
        let topo = SoupTopology::from_mesh(&mesh);
        let active: Vec<u32> = (0..topo.n_tris() as u32).collect();
        let (_, roots) = patch_labels(&topo, &active);
        assert_eq!(roots.len(), 1, "connected closed surface is one island");

        // random adjacency graphs vs union-find
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let n = rng.gen_range(2..40);
            // random triangles over a small shared vertex pool induce
            // shared edges
            let pool = rng.gen_range(4..10);
            let tri_nodes: Vec<[usize; 3]> = (0..n)
                .map(|_| {
                    let mut v = [0usize; 3];
                    loop {
                        for x in &mut v {
                            *x = rng.gen_range(0..pool);
                        }
                        if v[0] != v[1] && v[1] != v[2] && v[0] != v[2] {
                            break;
                        }
                    }
                    v
                })
                .collect();
            let topo = SoupTopology::from_triangles(tri_nodes, vec![0; n]);
            let active: Vec<u32> = (0..n as u32).collect();
            let (patch_of, _) = patch_labels(&topo, &active);

            // union-find oracle
            let mut parent: Vec<usize> = (0..n).collect();
            fn find(parent: &mut Vec<usize>, x: usize) -> usize {
                if parent[x] != x {
                    let r = find(parent, parent[x]);
                    parent[x] = r;
                }
                parent[x]
            }
            for t in 0..n {
                for &nb in topo.neighbors_of(t) {
                    let (a, b) = (find(&mut parent, t), find(&mut parent, nb as usize));
                    if a != b {
                        parent[a] = b;
                    }
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let same_uf = find(&mut parent, i) == find(&mut parent, j);
                    let same_patch = patch_of[&(i as u32)] == patch_of[&(j as u32)];
                    assert_eq!(same_uf, same_patch, "tris {i},{j}");
                }
            }
        }
    }

    #[test]
    fn patch_labeling_is_idempotent() {
        let mesh = crate::meshgen::t10_box(Vector3::zeros(), Vector3::repeat(1.0), (2, 1, 1));
        let topo = SoupTopology::from_mesh(&mesh);
        let active: Vec<u32> = (0..topo.n_tris() as u32).collect();
        let (p1, r1) = patch_labels(&topo, &active);
        let (p2, r2) = patch_labels(&topo, &active);
        assert_eq!(r1, r2);
        for (&k, &v) in &p1 {
            assert_eq!(p2[&k], v);
        }
    }

    #[test]
    fn primitive_contact_coincident_triangles() {
        let t = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let c = primitive_contact(&t, &t).unwrap();
        assert_relative_eq!(c.depth, 0.0, epsilon = 1e-14);
        assert_relative_eq!(c.area, 0.5, epsilon = 1e-12);
        assert_relative_eq!(c.normal.z.abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn primitive_contact_hand_geometry() {
        // unit right triangle (bottom face of a body above, outward
        // normal -z) pushed 0.01 below a large parallel floor triangle:
        // depth 0.01, area 0.5, normal = floor normal (+z)
        let floor = tri([-10.0, -10.0, 0.0], [10.0, -10.0, 0.0], [0.0, 10.0, 0.0]);
        let small = tri([0.0, 0.0, -0.01], [0.0, 1.0, -0.01], [1.0, 0.0, -0.01]);
        let c = primitive_contact(&small, &floor).unwrap();
        assert_relative_eq!(c.depth, 0.01, epsilon = 1e-12);
        assert_relative_eq!(c.area, 0.5, epsilon = 1e-10);
        assert_relative_eq!(c.normal.z, 1.0, epsilon = 1e-12);
        // pillar center: triangle centroid, midway down the penetration
        assert_relative_eq!(c.point.z, -0.005, epsilon = 1e-12);
        assert_relative_eq!(c.point.x, 1.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn primitive_contact_rejects_separated_pair() {
        let floor = tri([-10.0, -10.0, 0.0], [10.0, -10.0, 0.0], [0.0, 10.0, 0.0]);
        // the body above has a downward outward normal at its lower face
        let above = tri([0.0, 0.0, 0.3], [0.0, 1.0, 0.3], [1.0, 0.0, 0.3]);
        assert!(primitive_contact(&above, &floor).is_none());
    }

    #[test]
    fn primitive_contact_depth_is_min_over_orderings() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let base = Vector3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), 0.0);
            let t1 = [
                base,
                base + Vector3::new(1.0, 0.0, rng.gen_range(-0.1..0.1)),
                base + Vector3::new(0.0, 1.0, rng.gen_range(-0.1..0.1)),
            ];
            let t2 = tri([-0.5, -0.5, -0.02], [1.5, -0.5, 0.02], [0.0, 1.5, -0.01]);
            let (Some(c12), Some(c21)) = (primitive_contact(&t1, &t2), primitive_contact(&t2, &t1))
            else {
                continue;
            };
            assert_relative_eq!(c12.depth, c21.depth, max_relative = 1e-9, epsilon = 1e-12);
            // swapped order flips the normal convention
            assert_relative_eq!(
                (c12.normal + c21.normal).norm(),
                0.0,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn patch_reduce_examples() {
        let p = PrimitiveContact {
            depth: 0.02,
            point: Vector3::new(1.0, 2.0, 3.0),
            area: 0.4,
            normal: Vector3::z(),
        };
        let single = patch_reduce(&[p]).unwrap();
        assert_relative_eq!(single.depth, p.depth, epsilon = 1e-15);
        assert_relative_eq!(single.area, p.area, epsilon = 1e-15);
        assert_relative_eq!((single.point - p.point).norm(), 0.0, epsilon = 1e-12);

        // two coplanar equal-area primitives, same normal
        let p2 = PrimitiveContact {
            point: Vector3::new(2.0, 2.0, 3.0),
            ..p
        };
        let both = patch_reduce(&[p, p2]).unwrap();
        assert_relative_eq!(both.area, 0.8, epsilon = 1e-14);
        assert_relative_eq!((both.normal - Vector3::z()).norm(), 0.0, epsilon = 1e-14);

        // normals at 60 degrees, areas 1 and 2 -> normalize(n1 + 2 n2)
        let n1 = Vector3::z();
        let n2 = Vector3::new(3f64.sqrt() / 2.0, 0.0, 0.5);
        let q1 = PrimitiveContact {
            depth: 0.01,
            point: Vector3::zeros(),
            area: 1.0,
            normal: n1,
        };
        let q2 = PrimitiveContact {
            depth: 0.01,
            point: Vector3::zeros(),
            area: 2.0,
            normal: n2,
        };
        let red = patch_reduce(&[q1, q2]).unwrap();
        let expected = (n1 + n2 * 2.0).normalize();
        assert_relative_eq!((red.normal - expected).norm(), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn patch_reduce_rejects_antipodal_normals() {
        let mk = |n: Vector3<f64>| PrimitiveContact {
            depth: 0.01,
            point: Vector3::zeros(),
            area: 1.0,
            normal: n,
        };
        let err = patch_reduce(&[mk(Vector3::z()), mk(-Vector3::z())]);
        assert!(matches!(err, Err(Error::DegeneratePatch(_))));
    }

    #[test]
    fn detect_excludes_same_patch_pairs() {
        // a closed ball never contacts itself unless self-collision is on
        let mesh = crate::meshgen::t10_ball(Vector3::zeros(), 0.1, 3);
        let topo = SoupTopology::from_mesh(&mesh);
        let state = crate::model::SystemState::at_reference(&mesh);
        let pos = topo.positions(&state.q);
        let cfg = DetectionConfig {
            self_collision: true,
            h: 1e-3,
            ..Default::default()
        };
        let acs = detect(&topo, &pos, &[0.0], &cfg, 0).unwrap();
        assert!(
            acs.pairs.is_empty(),
            "same-body same-patch pairs must be excluded, got {}",
            acs.pairs.len()
        );
    }

    #[test]
    fn tri_distance_spot_checks() {
        let t1 = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        // parallel above
        let t2 = tri([0.0, 0.0, 0.3], [1.0, 0.0, 0.3], [0.0, 1.0, 0.3]);
        assert_relative_eq!(tri_tri_distance(&t1, &t2), 0.3, epsilon = 1e-12);
        // crossing
        let t3 = tri([0.2, 0.2, -0.5], [0.3, 0.2, 0.5], [0.2, 0.3, 0.5]);
        assert_eq!(tri_tri_distance(&t1, &t3), 0.0);
        // vertex-face
        let t4 = tri([0.2, 0.2, 0.1], [1.2, 0.2, 0.4], [0.2, 1.2, 0.4]);
        assert_relative_eq!(tri_tri_distance(&t1, &t4), 0.1, epsilon = 1e-12);
        // sampling lower-bound oracle: sampled pointwise distances can
        // only overestimate the true minimum
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let (topo, pos) = {
                let (t, p) = random_scene(&mut rng, 2, 0.4, 0.5);
                (t, p)
            };
            let _ = topo;
            let d = tri_tri_distance(&pos[0], &pos[1]);
            let mut sampled = f64::INFINITY;
            for _ in 0..60 {
                let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                let p = pos[0][0] + (pos[0][1] - pos[0][0]) * u + (pos[0][2] - pos[0][0]) * v;
                let (mut s, mut t) = (rng.gen::<f64>(), rng.gen::<f64>());
                if s + t > 1.0 {
                    s = 1.0 - s;
                    t = 1.0 - t;
                }
                let q = pos[1][0] + (pos[1][1] - pos[1][0]) * s + (pos[1][2] - pos[1][0]) * t;
                sampled = sampled.min((p - q).norm());
            }
            assert!(
                d <= sampled + 1e-9,
                "exact distance {d} exceeds sampled bound {sampled}"
            );
        }
    }
}
