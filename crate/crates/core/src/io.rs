//! Plain CSV emitters. Every float is written as `{:.16e}` and every line ends in `\n`.

use std::io::{self, Write};

use crate::dynamics::Trajectory;
use crate::optimizer::LogEntry;
use crate::poisson::{ControlField, HexMesh};
use crate::Real;

struct Sci(f64);

impl std::fmt::Display for Sci {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.16e}", self.0)
    }
}

fn sci<T: Real>(v: T) -> Sci {
    Sci(v.as_f64())
}

/// `t,particle_id,rx,ry,rz,px,py,pz`, one row per particle and time level.
pub fn write_trajectory<T: Real, W: Write>(mut w: W, traj: &Trajectory<T>) -> io::Result<()> {
    writeln!(w, "t,particle_id,rx,ry,rz,px,py,pz")?;
    for (t, states) in traj.times.iter().zip(&traj.states) {
        for (i, s) in states.iter().enumerate() {
            let [rx, ry, rz] = s.r.0;
            let [px, py, pz] = s.p.0;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                sci(*t),
                i,
                sci(rx),
                sci(ry),
                sci(rz),
                sci(px),
                sci(py),
                sci(pz)
            )?;
        }
    }
    Ok(())
}

/// `node_id,x,y,z,value` for every mesh node.
pub fn write_nodal<T: Real, W: Write>(mut w: W, mesh: &HexMesh<T>, values: &[T]) -> io::Result<()> {
    assert_eq!(values.len(), mesh.num_nodes(), "one value per node");
    writeln!(w, "node_id,x,y,z,value")?;
    for (i, &v) in values.iter().enumerate() {
        let [x, y, z] = mesh.node_coords(i).0;
        writeln!(w, "{},{},{},{},{}", i, sci(x), sci(y), sci(z), sci(v))?;
    }
    Ok(())
}

/// `node_id,x,y,z,u` over the boundary nodes; `node_id` is the global mesh index.
pub fn write_control<T: Real, W: Write>(mut w: W, mesh: &HexMesh<T>, u: &ControlField<T>) -> io::Result<()> {
    assert_eq!(u.len(), mesh.boundary_nodes().len(), "one value per boundary node");
    writeln!(w, "node_id,x,y,z,u")?;
    for (&node, &v) in mesh.boundary_nodes().iter().zip(&u.values) {
        let [x, y, z] = mesh.node_coords(node).0;
        writeln!(w, "{},{},{},{},{}", node, sci(x), sci(y), sci(z), sci(v))?;
    }
    Ok(())
}

/// `iter,f_value,grad_norm,step_type,step_length,barrier_mu,min_margin`.
/// The initial row has an empty step type.
pub fn write_convergence<T: Real, W: Write>(mut w: W, log: &[LogEntry<T>]) -> io::Result<()> {
    writeln!(w, "iter,f_value,grad_norm,step_type,step_length,barrier_mu,min_margin")?;
    for e in log {
        let kind = e.step_type.map(|k| k.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            e.iter,
            sci(e.f_value),
            sci(e.grad_norm),
            kind,
            sci(e.step_length),
            sci(e.barrier_mu),
            sci(e.min_margin)
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientRow {
    pub direction_id: usize,
    pub adjoint: f64,
    pub fd: f64,
    pub rel_err: f64,
}

/// `direction_id,adjoint,fd,rel_err`.
pub fn write_gradient_check<W: Write>(mut w: W, rows: &[GradientRow]) -> io::Result<()> {
    writeln!(w, "direction_id,adjoint,fd,rel_err")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.direction_id, Sci(r.adjoint), Sci(r.fd), Sci(r.rel_err))?;
    }
    Ok(())
}

/// Reads a control CSV written by [`write_control`]; rows may come in any order.
pub fn read_control<T: Real>(text: &str, mesh: &HexMesh<T>) -> Result<ControlField<T>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "node_id,x,y,z,u" => {}
        _ => return Err("expected header node_id,x,y,z,u".into()),
    }
    let mut values = vec![None; mesh.boundary_nodes().len()];
    for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(format!("line {}: expected 5 columns", k + 2));
        }
        let node: usize = cols[0].parse().map_err(|_| format!("line {}: bad node id", k + 2))?;
        let v: f64 = cols[4].parse().map_err(|_| format!("line {}: bad value", k + 2))?;
        let slot = mesh
            .boundary_nodes()
            .binary_search(&node)
            .map_err(|_| format!("line {}: node {} is not on the boundary", k + 2, node))?;
        values[slot] = Some(T::lit(v));
    }
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| format!("missing value for node {}", mesh.boundary_nodes()[i])))
        .collect::<Result<Vec<_>, _>>()
        .map(|values| ControlField { values })
}
