//! The `PQD1` curve dataset and `PQM1` map result formats.
//!
//! Both are little-endian with f32 payloads. A `PQD1` file is
//!
//! ```text
//! "PQD1" | u32 nx, ny, nz | f64 t0, dt | u32 n_time | u8 flags
//! AIF: n_time f32
//! curves: nx*ny*nz*n_time f32, pixel (z, y, x) major, time minor
//! [flags bit 0] Fp, vp, ve, PS maps: nx*ny*nz f32 each
//! u32 length | UTF-8 metadata (TOML)
//! ```
//!
//! and a `PQM1` file is
//!
//! ```text
//! "PQM1" | u32 nx, ny, nz | Fp, vp, ve, PS maps: nx*ny*nz f32 each
//! u32 length | UTF-8 method tag | u32 length | UTF-8 config | u64 seed
//! ```
//!
//! Files must end exactly after the last field.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kinetics::TimeGrid;
use crate::maps::{KineticMaps, Param, VolumeDims};
use crate::phantom::DroVolume;

pub const DATASET_MAGIC: &[u8; 4] = b"PQD1";
pub const MAPS_MAGIC: &[u8; 4] = b"PQM1";
const FLAG_TRUTH: u8 = 1;

/// A curve dataset as stored on disk. Values are kept f32-representable so
/// that `read(write(x)) == x` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveDataset {
    pub dims: VolumeDims,
    pub grid: TimeGrid,
    pub aif: Vec<f64>,
    /// Pixel-major, `dims.len() * grid.n` values.
    pub curves: Vec<f64>,
    pub truth: Option<KineticMaps>,
    /// Free-form TOML describing how the data was produced.
    pub metadata: String,
}

fn quantize(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

fn quantize_maps(m: &KineticMaps) -> KineticMaps {
    let mut q = m.clone();
    for p in Param::ALL {
        let vals = quantize(m.map(p));
        q.map_mut(p).copy_from_slice(&vals);
    }
    q
}

impl CurveDataset {
    /// Builds a dataset, rounding every payload value to f32.
    pub fn new(
        dims: VolumeDims,
        grid: TimeGrid,
        aif: &[f64],
        curves: &[f64],
        truth: Option<&KineticMaps>,
        metadata: String,
    ) -> Result<Self> {
        let ds = CurveDataset {
            dims,
            grid,
            aif: quantize(aif),
            curves: quantize(curves),
            truth: truth.map(quantize_maps),
            metadata,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Stores a phantom with its generator settings as metadata.
    pub fn from_dro(dro: &DroVolume) -> Result<Self> {
        let meta = super::dro_metadata(&dro.config)?;
        CurveDataset::new(dro.dims, dro.grid, &dro.aif, &dro.curves, Some(&dro.truth), meta)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.dims.is_empty() {
            return Err(Error::invalid("dataset has no pixels"));
        }
        if self.aif.len() != self.grid.n || self.curves.len() != self.dims.len() * self.grid.n {
            return Err(Error::invalid("dataset payload sizes do not match its header"));
        }
        if self.aif.iter().chain(&self.curves).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        if let Some(t) = &self.truth {
            if t.dims != self.dims {
                return Err(Error::invalid("ground-truth maps do not match the dataset dimensions"));
            }
            t.validate()?;
        }
        Ok(())
    }

    pub fn curve(&self, pixel: usize) -> &[f64] {
        let n = self.grid.n;
        &self.curves[pixel * n..(pixel + 1) * n]
    }
}

/// Parameter maps produced by one fitting method, with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MapFile {
    pub maps: KineticMaps,
    pub method: String,
    /// Effective configuration used for the fit (TOML).
    pub config: String,
    pub seed: u64,
}

impl MapFile {
    /// Rounds the maps to f32 so the file round-trips exactly.
    pub fn new(maps: &KineticMaps, method: impl Into<String>, config: impl Into<String>, seed: u64) -> Self {
        MapFile { maps: quantize_maps(maps), method: method.into(), config: config.into(), seed }
    }
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} = {v} does not fit the file format")))
}

fn put_f32s(buf: &mut Vec<u8>, vals: &[f64]) -> Result<()> {
    for &v in vals {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::invalid("refusing to write a non-finite value"));
        }
        buf.extend_from_slice(&f.to_le_bytes());
    }
    Ok(())
}

fn put_text(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    buf.extend_from_slice(&dim_u32(s.len(), "text length")?.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_dims(buf: &mut Vec<u8>, dims: VolumeDims) -> Result<()> {
    for (v, name) in [(dims.nx, "nx"), (dims.ny, "ny"), (dims.nz, "nz")] {
        buf.extend_from_slice(&dim_u32(v, name)?.to_le_bytes());
    }
    Ok(())
}

pub fn encode_dataset(ds: &CurveDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let mut buf = Vec::with_capacity(64 + 4 * (ds.curves.len() + ds.aif.len()) + ds.metadata.len());
    buf.extend_from_slice(DATASET_MAGIC);
    put_dims(&mut buf, ds.dims)?;
    buf.extend_from_slice(&ds.grid.t0.to_le_bytes());
    buf.extend_from_slice(&ds.grid.dt.to_le_bytes());
    buf.extend_from_slice(&dim_u32(ds.grid.n, "n_time")?.to_le_bytes());
    buf.push(if ds.truth.is_some() { FLAG_TRUTH } else { 0 });
    put_f32s(&mut buf, &ds.aif)?;
    put_f32s(&mut buf, &ds.curves)?;
    if let Some(t) = &ds.truth {
        for p in Param::ALL {
            put_f32s(&mut buf, t.map(p))?;
        }
    }
    put_text(&mut buf, &ds.metadata)?;
    Ok(buf)
}

pub fn encode_maps(m: &MapFile) -> Result<Vec<u8>> {
    m.maps.validate()?;
    let mut buf = Vec::with_capacity(32 + 16 * m.maps.dims.len() + m.method.len() + m.config.len());
    buf.extend_from_slice(MAPS_MAGIC);
    put_dims(&mut buf, m.maps.dims)?;
    for p in Param::ALL {
        put_f32s(&mut buf, m.maps.map(p))?;
    }
    put_text(&mut buf, &m.method)?;
    put_text(&mut buf, &m.config)?;
    buf.extend_from_slice(&m.seed.to_le_bytes());
    Ok(buf)
}

/// Bounds-checked little-endian reader that reports byte offsets.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.pos as u64, msg)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if n > remaining {
            return Err(self.err(format!("truncated {what}: need {n} bytes, {remaining} left")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(0, format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(expected))));
        }
        Ok(())
    }

    fn dims(&mut self) -> Result<VolumeDims> {
        let nx = self.u32("nx")? as usize;
        let ny = self.u32("ny")? as usize;
        let nz = self.u32("nz")? as usize;
        let dims = VolumeDims::new(nx, ny, nz);
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(self.err(format!("empty volume {nx} x {ny} x {nz}")));
        }
        Ok(dims)
    }

    /// `count` finite f32 values widened to f64.
    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = count.checked_mul(4).ok_or_else(|| self.err(format!("{what} size overflows")))?;
        let start = self.pos;
        let raw = self.take(bytes, what)?;
        let mut out = Vec::with_capacity(count);
        for (i, c) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format((start + 4 * i) as u64, format!("non-finite value in {what}")));
            }
            out.push(v as f64);
        }
        Ok(out)
    }

    fn text(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let start = self.pos;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|e| Error::format((start + e.utf8_error().valid_up_to()) as u64, format!("{what} is not UTF-8")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn read_maps_payload(r: &mut Reader, dims: VolumeDims) -> Result<KineticMaps> {
    let mut maps = KineticMaps::zeros(dims);
    for p in Param::ALL {
        let vals = r.f32s(dims.len(), &format!("{p} map"))?;
        maps.map_mut(p).copy_from_slice(&vals);
    }
    Ok(maps)
}

fn checked_len(r: &Reader, dims: VolumeDims) -> Result<usize> {
    dims.nx
        .checked_mul(dims.ny)
        .and_then(|v| v.checked_mul(dims.nz))
        .ok_or_else(|| r.err("volume size overflows"))
}

pub fn decode_dataset(buf: &[u8]) -> Result<CurveDataset> {
    let mut r = Reader::new(buf);
    r.magic(DATASET_MAGIC)?;
    let dims = r.dims()?;
    let pixels = checked_len(&r, dims)?;
    let at = r.pos;
    let t0 = r.f64("t0")?;
    let dt = r.f64("dt")?;
    let n = r.u32("n_time")? as usize;
    let grid = TimeGrid { t0, dt, n };
    grid.validate().map_err(|e| Error::format(at as u64, e.to_string()))?;
    let flags = r.u8("flags")?;
    if flags & !FLAG_TRUTH != 0 {
        return Err(Error::format((r.pos - 1) as u64, format!("unknown flag bits {flags:#04x}")));
    }
    let aif = r.f32s(n, "AIF")?;
    let count = pixels.checked_mul(n).ok_or_else(|| r.err("curve payload size overflows"))?;
    let curves = r.f32s(count, "curves")?;
    let truth = if flags & FLAG_TRUTH != 0 { Some(read_maps_payload(&mut r, dims)?) } else { None };
    let metadata = r.text("metadata")?;
    r.finish()?;
    Ok(CurveDataset { dims, grid, aif, curves, truth, metadata })
}

pub fn decode_maps(buf: &[u8]) -> Result<MapFile> {
    let mut r = Reader::new(buf);
    r.magic(MAPS_MAGIC)?;
    let dims = r.dims()?;
    checked_len(&r, dims)?;
    let maps = read_maps_payload(&mut r, dims)?;
    let method = r.text("method tag")?;
    let config = r.text("config")?;
    let seed = r.u64("seed")?;
    r.finish()?;
    Ok(MapFile { maps, method, config, seed })
}

/// Prefixes an I/O error with the file it concerns.
pub fn with_path(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(with_path(path))?;
    f.write_all(bytes).map_err(with_path(path))?;
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, ds: &CurveDataset) -> Result<()> {
    write_file(path.as_ref(), &encode_dataset(ds)?)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<CurveDataset> {
    decode_dataset(&fs::read(path.as_ref()).map_err(with_path(path.as_ref()))?)
}

pub fn write_maps(path: impl AsRef<Path>, m: &MapFile) -> Result<()> {
    write_file(path.as_ref(), &encode_maps(m)?)
}

pub fn read_maps(path: impl AsRef<Path>) -> Result<MapFile> {
    decode_maps(&fs::read(path.as_ref()).map_err(with_path(path.as_ref()))?)
}
