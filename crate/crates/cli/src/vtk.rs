//! Legacy ASCII VTK unstructured-grid writer. T10 cells are emitted as
//! quadratic tetrahedra (cell type 24); the Gmsh mid-edge order used by
//! the mesh format matches VTK's quadratic-tetra ordering node for node.

use std::fmt::Write as _;
use std::path::Path;
use tlfea_core::assembly::FeModel;
use tlfea_core::diagnostics;
use tlfea_core::model::SystemState;
use tlfea_core::{Error, Result};

/// Renders the current state as a VTK dataset with nodal velocity and
/// nodal-averaged von Mises stress point data.
pub fn state_to_vtk(model: &FeModel, state: &SystemState, title: &str) -> Result<String> {
    let n = model.n_nodes();
    let vm = diagnostics::nodal_von_mises(model, &state.q, &state.v)?;
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(out, "{title}");
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {n} double");
    for i in 0..n {
        let _ = writeln!(
            out,
            "{:.9e} {:.9e} {:.9e}",
            state.q[3 * i],
            state.q[3 * i + 1],
            state.q[3 * i + 2]
        );
    }
    let m = model.mesh.n_elements();
    let _ = writeln!(out, "CELLS {m} {}", m * 11);
    for el in &model.mesh.elements {
        let strs: Vec<String> = el.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "10 {}", strs.join(" "));
    }
    let _ = writeln!(out, "CELL_TYPES {m}");
    for _ in 0..m {
        out.push_str("24\n");
    }
    let _ = writeln!(out, "POINT_DATA {n}");
    out.push_str("VECTORS velocity double\n");
    for i in 0..n {
        let _ = writeln!(
            out,
            "{:.9e} {:.9e} {:.9e}",
            state.v[3 * i],
            state.v[3 * i + 1],
            state.v[3 * i + 2]
        );
    }
    out.push_str("SCALARS von_mises double 1\nLOOKUP_TABLE default\n");
    for x in &vm {
        let _ = writeln!(out, "{x:.9e}");
    }
    Ok(out)
}

pub fn write_vtk(
    model: &FeModel,
    state: &SystemState,
    title: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    let text = state_to_vtk(model, state, title)?;
    std::fs::write(path.as_ref(), text)
        .map_err(|e| Error::usage(format!("cannot write {}: {e}", path.as_ref().display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tlfea_core::materials::MaterialParams;
    use tlfea_core::meshgen;
    use tlfea_core::precompute::PrecompConfig;

    /// Minimal independent legacy-VTK reader used as the format smoke
    /// test: parses the section headers and checks the counts add up.
    fn reader_smoke(text: &str) -> (usize, usize, Vec<usize>, usize, usize) {
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# vtk DataFile"));
        let _title = lines.next().unwrap();
        assert_eq!(lines.next().unwrap(), "ASCII");
        assert_eq!(lines.next().unwrap(), "DATASET UNSTRUCTURED_GRID");
        let points_hdr = lines.next().unwrap();
        let n: usize = points_hdr.split_whitespace().nth(1).unwrap().parse().unwrap();
        for _ in 0..n {
            let l = lines.next().unwrap();
            assert_eq!(l.split_whitespace().count(), 3);
        }
        let cells_hdr = lines.next().unwrap();
        let parts: Vec<usize> = cells_hdr
            .split_whitespace()
            .skip(1)
            .map(|t| t.parse().unwrap())
            .collect();
        let (m, total) = (parts[0], parts[1]);
        assert_eq!(total, m * 11);
        let mut first_cell = Vec::new();
        for k in 0..m {
            let l = lines.next().unwrap();
            let idx: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse().unwrap())
                .collect();
            assert_eq!(idx[0], 10);
            assert_eq!(idx.len(), 11);
            if k == 0 {
                first_cell = idx[1..].to_vec();
            }
        }
        assert!(lines.next().unwrap().starts_with("CELL_TYPES"));
        let mut n24 = 0;
        for _ in 0..m {
            assert_eq!(lines.next().unwrap(), "24");
            n24 += 1;
        }
        assert!(lines.next().unwrap().starts_with("POINT_DATA"));
        assert!(lines.next().unwrap().starts_with("VECTORS velocity"));
        for _ in 0..n {
            lines.next().unwrap();
        }
        assert!(lines.next().unwrap().starts_with("SCALARS von_mises"));
        assert!(lines.next().unwrap().starts_with("LOOKUP_TABLE"));
        let mut zeros = 0;
        for _ in 0..n {
            let v: f64 = lines.next().unwrap().trim().parse().unwrap();
            if v.abs() < 1e-6 {
                zeros += 1;
            }
        }
        (n, m, first_cell, n24, zeros)
    }

    #[test]
    fn reference_state_writes_zero_stress_and_parses() {
        let mesh = meshgen::single_tet();
        let model = FeModel::new(
            mesh,
            vec![MaterialParams::svk(1e7, 0.3, 1000.0)],
            PrecompConfig::default(),
        )
        .unwrap();
        let state = SystemState::at_reference(&model.mesh);
        let text = state_to_vtk(&model, &state, "test").unwrap();
        let (n, m, first_cell, n24, zeros) = reader_smoke(&text);
        assert_eq!((n, m, n24), (10, 1, 1));
        assert_eq!(zeros, n, "reference state has a zero stress field");
        // connectivity order matches the mesh's Gmsh T10 convention
        assert_eq!(first_cell, model.mesh.elements[0].to_vec());
    }
}
