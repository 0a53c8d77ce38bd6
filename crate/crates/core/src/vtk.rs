//! Legacy ASCII VTK output for triangle meshes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

/// A named scalar array attached to nodes or elements.
pub struct Field<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

/// Renders an unstructured grid with point and cell scalars. Element regions
/// are always written as the integer cell array `region`.
pub fn render(mesh: &TriMesh, title: &str, point_data: &[Field], cell_data: &[Field]) -> Result<String> {
    for f in point_data {
        check(f, mesh.num_nodes(), "node")?;
    }
    for f in cell_data {
        check(f, mesh.num_elements(), "element")?;
    }
    let mut s = String::new();
    let w = &mut s;
    // a newline in the title line would corrupt the header
    let title: String = title.chars().filter(|c| *c != '\n' && *c != '\r').take(255).collect();
    writeln!(w, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID").unwrap();
    writeln!(w, "POINTS {} double", mesh.num_nodes()).unwrap();
    for p in &mesh.nodes {
        writeln!(w, "{:.16e} {:.16e} 0", p[0], p[1]).unwrap();
    }
    writeln!(w, "CELLS {} {}", mesh.num_elements(), 4 * mesh.num_elements()).unwrap();
    for t in &mesh.elements {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
    }
    writeln!(w, "CELL_TYPES {}", mesh.num_elements()).unwrap();
    for _ in 0..mesh.num_elements() {
        w.push_str("5\n");
    }
    if !point_data.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.num_nodes()).unwrap();
        for f in point_data {
            scalars(w, f);
        }
    }
    writeln!(w, "CELL_DATA {}\nSCALARS region int 1\nLOOKUP_TABLE default", mesh.num_elements()).unwrap();
    for r in &mesh.element_region {
        writeln!(w, "{}", r.code()).unwrap();
    }
    for f in cell_data {
        scalars(w, f);
    }
    Ok(s)
}

pub fn write(path: &Path, mesh: &TriMesh, title: &str, point_data: &[Field], cell_data: &[Field]) -> Result<()> {
    std::fs::write(path, render(mesh, title, point_data, cell_data)?)?;
    Ok(())
}

fn check(f: &Field, expected: usize, what: &str) -> Result<()> {
    if f.values.len() != expected {
        return Err(Error::InvalidInput(format!(
            "field `{}` has {} values for {expected} {what}s",
            f.name,
            f.values.len()
        )));
    }
    if f.name.is_empty() || f.name.contains(char::is_whitespace) {
        return Err(Error::InvalidInput(format!("field name `{}` must be a single non-empty word", f.name)));
    }
    Ok(())
}

fn scalars(w: &mut String, f: &Field) {
    writeln!(w, "SCALARS {} double 1\nLOOKUP_TABLE default", f.name).unwrap();
    for v in f.values {
        writeln!(w, "{v:.16e}").unwrap();
    }
}
