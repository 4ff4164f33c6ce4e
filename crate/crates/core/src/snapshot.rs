//! Binary snapshots: a one-line JSON header followed by little-endian `f64`
//! values, row-major.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::kinetic::{ParticleCloud, Species};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub components: usize,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleHeader {
    pub dim: usize,
    pub count: usize,
    /// Column names; `x` and `ξ` contribute `dim` columns each.
    pub columns: Vec<String>,
    pub time: f64,
}

fn write_values(out: &mut impl Write, values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_values(input: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    input.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn read_header<T: for<'de> Deserialize<'de>>(input: &mut impl BufRead) -> Result<T> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    Ok(serde_json::from_str(line.trim_end())?)
}

/// Writes the components of a field, each in row-major order, one after the other.
pub fn write_field(out: &mut impl Write, grid: &GridSpec, components: &[&[f64]], time: f64) -> Result<()> {
    for c in components {
        if c.len() != grid.npts() {
            return Err(Error::InvalidField(format!("component of length {} on {}", c.len(), grid.describe())));
        }
    }
    let header =
        FieldHeader { dim: grid.dim, n: grid.n, length: grid.length, components: components.len(), time };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for c in components {
        write_values(out, c.iter().copied())?;
    }
    Ok(())
}

pub fn write_scalar(out: &mut impl Write, field: &ScalarField, time: f64) -> Result<()> {
    write_field(out, &field.grid, &[&field.values], time)
}

pub fn write_vector(out: &mut impl Write, field: &VectorField, time: f64) -> Result<()> {
    let comps: Vec<&[f64]> = field.components.iter().map(|c| c.as_slice()).collect();
    write_field(out, &field.grid, &comps, time)
}

/// Reads a field snapshot as its header, grid and components.
pub fn read_field(input: impl Read) -> Result<(FieldHeader, GridSpec, Vec<Vec<f64>>)> {
    let mut input = BufReader::new(input);
    let header: FieldHeader = read_header(&mut input)?;
    let grid = GridSpec::new(header.dim, header.n, header.length)?;
    let comps = (0..header.components)
        .map(|_| read_values(&mut input, grid.npts()))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, grid, comps))
}

pub fn particle_columns(dim: usize) -> Vec<String> {
    let mut cols = Vec::new();
    for a in 0..dim {
        cols.push(format!("x{a}"));
    }
    for a in 0..dim {
        cols.push(format!("xi{a}"));
    }
    cols.push("w".into());
    cols.push("species".into());
    cols
}

/// One row per particle: `x | ξ | w | species` with species `0` large, `1` small.
pub fn write_particles(out: &mut impl Write, cloud: &ParticleCloud, time: f64) -> Result<()> {
    let header =
        ParticleHeader { dim: cloud.dim, count: cloud.len(), columns: particle_columns(cloud.dim), time };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for p in 0..cloud.len() {
        write_values(out, cloud.position(p).iter().copied())?;
        write_values(out, cloud.velocity(p).iter().copied())?;
        write_values(out, [cloud.w[p], cloud.species[p].tag()].into_iter())?;
    }
    Ok(())
}

pub fn read_particles(input: impl Read) -> Result<(ParticleHeader, ParticleCloud)> {
    let mut input = BufReader::new(input);
    let header: ParticleHeader = read_header(&mut input)?;
    let dim = header.dim;
    let width = 2 * dim + 2;
    if header.columns.len() != width {
        return Err(Error::InvalidField(format!("expected {width} particle columns")));
    }
    let values = read_values(&mut input, header.count * width)?;
    let mut cloud = ParticleCloud::new(dim);
    for row in values.chunks_exact(width) {
        let species = match row[2 * dim + 1] {
            s if s == Species::Large.tag() => Species::Large,
            s if s == Species::Small.tag() => Species::Small,
            s => return Err(Error::InvalidField(format!("unknown species tag {s}"))),
        };
        cloud.push(&row[..dim], &row[dim..2 * dim], row[2 * dim], species);
    }
    Ok((header, cloud))
}

pub fn save_vector(path: &Path, field: &VectorField, time: f64) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_vector(&mut f, field, time)?;
    f.flush()?;
    Ok(())
}

pub fn save_scalar(path: &Path, field: &ScalarField, time: f64) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_scalar(&mut f, field, time)?;
    f.flush()?;
    Ok(())
}

pub fn save_particles(path: &Path, cloud: &ParticleCloud, time: f64) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_particles(&mut f, cloud, time)?;
    f.flush()?;
    Ok(())
}
