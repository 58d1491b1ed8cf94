//! Plain-text mesh format:
//!
//! ```text
//! tlmesh 1
//! nodes N
//! x y z            (N lines)
//! tets10 M
//! i0 i1 ... i9     (M lines, zero-based, Gmsh mid-edge order)
//! surface K body_id
//! a b c            (K lines, outward winding)
//! ```
//!
//! `surface` blocks may repeat (one per body).

use nalgebra::Vector3;
use std::fmt::Write as _;
use std::path::Path;
use tlfea_core::model::{Mesh, T10_NODES};
use tlfea_core::{Error, Result};

fn parse_err(path: &str, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::usage(format!("{path}:{line}: {msg}"))
}

/// Parses and validates a mesh file (positive volumes, consistent
/// outward winding).
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::usage(format!("cannot read {}: {e}", path.display())))?;
    let mesh = parse_mesh(&text, &path.display().to_string())?;
    mesh.validate()?;
    Ok(mesh)
}

pub fn parse_mesh(text: &str, path: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut next = || lines.next().ok_or_else(|| Error::usage(format!("{path}: unexpected end of file")));

    let (ln, header) = next()?;
    if header != "tlmesh 1" {
        return Err(parse_err(path, ln, "expected header 'tlmesh 1'"));
    }

    let (ln, nodes_line) = next()?;
    let n: usize = nodes_line
        .strip_prefix("nodes ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(path, ln, "expected 'nodes N'"))?;
    let mut node_positions_ref = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, l) = next()?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, ln, format!("bad coordinate: {e}")))?;
        if vals.len() != 3 {
            return Err(parse_err(path, ln, "expected 3 coordinates"));
        }
        node_positions_ref.push(Vector3::new(vals[0], vals[1], vals[2]));
    }

    let (ln, tet_line) = next()?;
    let m: usize = tet_line
        .strip_prefix("tets10 ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(path, ln, "expected 'tets10 M'"))?;
    let mut elements = Vec::with_capacity(m);
    for _ in 0..m {
        let (ln, l) = next()?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, ln, format!("bad node index: {e}")))?;
        if idx.len() != T10_NODES {
            return Err(parse_err(path, ln, "expected 10 node indices"));
        }
        let mut el = [0usize; T10_NODES];
        el.copy_from_slice(&idx);
        elements.push(el);
    }

    let mut surface_triangles = Vec::new();
    let mut max_body = 0usize;
    for (ln, l) in lines {
        if let Some(rest) = l.strip_prefix("surface ") {
            let parts: Vec<usize> = rest
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(path, ln, format!("bad surface header: {e}")))?;
            if parts.len() != 2 {
                return Err(parse_err(path, ln, "expected 'surface K body_id'"));
            }
            surface_triangles.push((usize::MAX, parts[0], parts[1])); // marker
            max_body = max_body.max(parts[1]);
        } else {
            let idx: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(path, ln, format!("bad triangle: {e}")))?;
            if idx.len() != 3 {
                return Err(parse_err(path, ln, "expected 3 triangle indices"));
            }
            surface_triangles.push((idx[0], idx[1], idx[2]));
        }
    }
    // unpack blocks: markers carry (MAX, count, body)
    let mut tris: Vec<([usize; 3], usize)> = Vec::new();
    let mut current_body = 0usize;
    let mut remaining = 0usize;
    for entry in surface_triangles {
        if entry.0 == usize::MAX {
            current_body = entry.2;
            remaining = entry.1;
        } else {
            if remaining == 0 {
                return Err(Error::usage(format!(
                    "{path}: surface triangle outside a 'surface' block"
                )));
            }
            tris.push(([entry.0, entry.1, entry.2], current_body));
            remaining -= 1;
        }
    }

    // node -> body from elements (body of the surface block that contains
    // the node, defaulting to elements' body grouping by surface blocks)
    let mut body_of_node = vec![usize::MAX; node_positions_ref.len()];
    for (tri, b) in &tris {
        for &i in tri {
            if i < body_of_node.len() {
                body_of_node[i] = *b;
            }
        }
    }
    // propagate over elements: any element with a known node fixes the rest
    loop {
        let mut changed = false;
        for el in &elements {
            if let Some(&b) = el
                .iter()
                .filter_map(|&i| body_of_node.get(i))
                .find(|&&b| b != usize::MAX)
            {
                for &i in el {
                    if body_of_node[i] == usize::MAX {
                        body_of_node[i] = b;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    for b in &mut body_of_node {
        if *b == usize::MAX {
            *b = 0;
        }
    }

    Ok(Mesh {
        node_positions_ref,
        elements,
        surface_triangles: tris,
        body_of_node,
    })
}

/// Serializes a mesh in the `tlmesh 1` format.
pub fn mesh_to_string(mesh: &Mesh) -> String {
    let mut out = String::new();
    out.push_str("tlmesh 1\n");
    let _ = writeln!(out, "nodes {}", mesh.n_nodes());
    for p in &mesh.node_positions_ref {
        let _ = writeln!(out, "{:.17e} {:.17e} {:.17e}", p.x, p.y, p.z);
    }
    let _ = writeln!(out, "tets10 {}", mesh.n_elements());
    for el in &mesh.elements {
        let strs: Vec<String> = el.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "{}", strs.join(" "));
    }
    // one surface block per body
    let mut bodies: Vec<usize> = mesh.surface_triangles.iter().map(|(_, b)| *b).collect();
    bodies.sort_unstable();
    bodies.dedup();
    for body in bodies {
        let tris: Vec<&([usize; 3], usize)> = mesh
            .surface_triangles
            .iter()
            .filter(|(_, b)| *b == body)
            .collect();
        let _ = writeln!(out, "surface {} {}", tris.len(), body);
        for (tri, _) in tris {
            let _ = writeln!(out, "{} {} {}", tri[0], tri[1], tri[2]);
        }
    }
    out
}

pub fn write_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), mesh_to_string(mesh))
        .map_err(|e| Error::usage(format!("cannot write {}: {e}", path.as_ref().display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use tlfea_core::meshgen;

    #[test]
    fn single_tet_roundtrip() {
        let mesh = meshgen::single_tet();
        let text = mesh_to_string(&mesh);
        let back = parse_mesh(&text, "mem").unwrap();
        back.validate().unwrap();
        assert_eq!(back.n_nodes(), mesh.n_nodes());
        assert_eq!(back.elements, mesh.elements);
        assert_eq!(back.surface_triangles, mesh.surface_triangles);
        for (a, b) in back
            .node_positions_ref
            .iter()
            .zip(&mesh.node_positions_ref)
        {
            assert_eq!(a, b, "positions survive the 17-digit round trip");
        }
    }

    #[test]
    fn res0_beam_counts() {
        let mesh = meshgen::t10_box(
            Vector3::zeros(),
            Vector3::new(3.0, 2.0, 1.0),
            (3, 2, 1),
        );
        let text = mesh_to_string(&mesh);
        let back = parse_mesh(&text, "mem").unwrap();
        assert_eq!(
            (back.n_nodes(), back.n_elements(), back.n_dofs()),
            (105, 36, 315)
        );
    }

    #[test]
    fn flipped_winding_rejected() {
        let mut mesh = meshgen::single_tet();
        let (tri, b) = mesh.surface_triangles[0];
        mesh.surface_triangles[0] = ([tri[0], tri[2], tri[1]], b);
        let text = mesh_to_string(&mesh);
        let parsed = parse_mesh(&text, "mem").unwrap();
        assert!(parsed.validate().is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "tlmesh 1\nnodes 1\n0 0\n";
        let err = parse_mesh(text, "bad.tlmesh").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.tlmesh:3"), "{msg}");
    }
}
