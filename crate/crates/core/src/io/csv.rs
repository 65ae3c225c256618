//! CSV interchange.
//!
//! Curves: header `t,aif,p0,p1,...`, one row per sample, one column per pixel.
//! Maps: header `x,y,z,Fp,vp,ve,PS`, one row per pixel in storage order.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::kinetics::{KineticParams, TimeGrid};
use crate::maps::{KineticMaps, VolumeDims};

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format(line, format!("CSV line {line}: {other:?}")),
    }
}

fn parse_row(rec: &csv::StringRecord, width: usize) -> Result<Vec<f64>> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    if rec.len() != width {
        return Err(Error::format(line, format!("CSV line {line} has {} fields, expected {width}", rec.len())));
    }
    rec.iter()
        .map(|f| {
            let v: f64 = f.trim().parse().map_err(|_| Error::format(line, format!("CSV line {line}: `{f}` is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::format(line, format!("CSV line {line}: non-finite value")))
            }
        })
        .collect()
}

pub fn write_curves_csv<W: Write>(w: W, grid: &TimeGrid, aif: &[f64], curves: &[f64]) -> Result<()> {
    let n = grid.n;
    if aif.len() != n || curves.len() % n != 0 {
        return Err(Error::invalid("curve lengths do not match the grid"));
    }
    let k = curves.len() / n;
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string(), "aif".to_string()];
    header.extend((0..k).map(|j| format!("p{j}")));
    wr.write_record(&header).map_err(csv_err)?;
    for i in 0..n {
        let mut row = vec![grid.time(i).to_string(), aif[i].to_string()];
        row.extend((0..k).map(|j| curves[j * n + i].to_string()));
        wr.write_record(&row).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Curves read from CSV: grid, AIF and pixel-major tissue curves.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvCurves {
    pub grid: TimeGrid,
    pub aif: Vec<f64>,
    pub curves: Vec<f64>,
    pub pixels: usize,
}

pub fn read_curves_csv<R: Read>(r: R) -> Result<CsvCurves> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.len() < 3 || &header[0] != "t" || &header[1] != "aif" {
        return Err(Error::format(1, "curve CSV header must start with `t,aif` and name at least one pixel"));
    }
    let k = header.len() - 2;
    let mut times = Vec::new();
    let mut aif = Vec::new();
    let mut by_time = Vec::new();
    for rec in rd.records() {
        let row = parse_row(&rec.map_err(csv_err)?, header.len())?;
        times.push(row[0]);
        aif.push(row[1]);
        by_time.extend_from_slice(&row[2..]);
    }
    let grid = TimeGrid::from_times(&times)?;
    let n = grid.n;
    let mut curves = vec![0.0; k * n];
    for i in 0..n {
        for j in 0..k {
            curves[j * n + i] = by_time[i * k + j];
        }
    }
    Ok(CsvCurves { grid, aif, curves, pixels: k })
}

pub const MAPS_CSV_HEADER: [&str; 7] = ["x", "y", "z", "Fp", "vp", "ve", "PS"];

pub fn write_maps_csv<W: Write>(w: W, maps: &KineticMaps) -> Result<()> {
    maps.validate()?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(MAPS_CSV_HEADER).map_err(csv_err)?;
    for i in 0..maps.dims.len() {
        let (x, y, z) = maps.dims.coords(i);
        let p = maps.get(i);
        wr.write_record([
            x.to_string(),
            y.to_string(),
            z.to_string(),
            p.fp.to_string(),
            p.vp.to_string(),
            p.ve.to_string(),
            p.ps.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a map CSV; dimensions are `1 + max` of each coordinate column and
/// every pixel must appear exactly once.
pub fn read_maps_csv<R: Read>(r: R) -> Result<KineticMaps> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(MAPS_CSV_HEADER) {
        return Err(Error::format(1, format!("map CSV header must be `{}`", MAPS_CSV_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let v = parse_row(&rec, 7)?;
        if v[..3].iter().any(|c| *c < 0.0 || c.fract() != 0.0) {
            return Err(Error::format(line, format!("CSV line {line}: coordinates must be non-negative integers")));
        }
        rows.push(((v[0] as usize, v[1] as usize, v[2] as usize), KineticParams { fp: v[3], vp: v[4], ve: v[5], ps: v[6] }));
    }
    if rows.is_empty() {
        return Err(Error::format(1, "map CSV has no rows"));
    }
    let dims = VolumeDims::new(
        rows.iter().map(|r| r.0 .0).max().unwrap() + 1,
        rows.iter().map(|r| r.0 .1).max().unwrap() + 1,
        rows.iter().map(|r| r.0 .2).max().unwrap() + 1,
    );
    if rows.len() != dims.len() {
        return Err(Error::invalid(format!("map CSV has {} rows for a {} x {} x {} volume", rows.len(), dims.nx, dims.ny, dims.nz)));
    }
    let mut maps = KineticMaps::zeros(dims);
    let mut seen = vec![false; dims.len()];
    for ((x, y, z), p) in rows {
        let i = dims.index(x, y, z);
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::invalid(format!("pixel ({x}, {y}, {z}) appears twice")));
        }
        maps.set(i, p);
    }
    Ok(maps)
}
