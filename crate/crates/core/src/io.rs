//! Nodal fields as CSV with header `i,j,x,y,value`, one row per node in
//! storage order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDomain, ScalarField};

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    i: usize,
    j: usize,
    x: f64,
    y: f64,
    value: f64,
}

/// Which nodes to emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nodes {
    All,
    Interior,
}

fn write_rows<W: std::io::Write>(w: W, field: &ScalarField, nodes: Nodes) -> Result<()> {
    let d = field.domain();
    let mut wtr = csv::Writer::from_writer(w);
    let pick = |(i, j): &(usize, usize)| nodes == Nodes::All || !d.is_boundary(*i, *j);
    for (i, j) in d.nodes().filter(pick) {
        let (x, y) = d.coords(i, j);
        wtr.serialize(Row {
            i,
            j,
            x,
            y,
            value: field.get(i, j),
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn field_to_csv(field: &ScalarField, nodes: Nodes) -> Result<String> {
    let mut buf = Vec::new();
    write_rows(&mut buf, field, nodes)?;
    Ok(String::from_utf8(buf).expect("csv output is ascii"))
}

pub fn write_field_csv(path: impl AsRef<Path>, field: &ScalarField, nodes: Nodes) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_rows(std::io::BufWriter::new(file), field, nodes)
}

/// Reads a field written by [`write_field_csv`]; nodes missing from the
/// file are zero.
pub fn read_field_csv(path: impl AsRef<Path>, domain: GridDomain) -> Result<ScalarField> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut values = vec![0.0; domain.len()];
    for row in rdr.deserialize() {
        let row: Row = row?;
        if row.i >= domain.nx() || row.j >= domain.ny() {
            return Err(Error::InvalidField(format!(
                "node ({}, {}) outside a {} x {} grid",
                row.i,
                row.j,
                domain.nx(),
                domain.ny()
            )));
        }
        values[domain.index(row.i, row.j)] = row.value;
    }
    ScalarField::new(domain, values)
}
