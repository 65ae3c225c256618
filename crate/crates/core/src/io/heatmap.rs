//! 8-bit grayscale rendering of parameter maps.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::maps::VolumeDims;

/// Gray level used for every pixel when the display range is empty.
pub const MID_GRAY: u8 = 128;

/// Rendered map: slices stacked top to bottom, x along the width.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    /// Values mapped to 0 and 255.
    pub range: (f64, f64),
    /// The range was empty and the image is uniformly mid-gray.
    pub degenerate: bool,
}

/// Scales `values` linearly from `range` (or the observed min/max) to 0..=255,
/// clamping values outside the range.
pub fn render(values: &[f64], dims: VolumeDims, range: Option<(f64, f64)>) -> Result<Heatmap> {
    if values.len() != dims.len() || dims.is_empty() {
        return Err(Error::invalid("map size does not match its dimensions"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cannot render a map with non-finite values"));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) => {
            if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
                return Err(Error::invalid(format!("invalid display range [{lo}, {hi}]")));
            }
            (lo, hi)
        }
        None => (
            values.iter().copied().fold(f64::INFINITY, f64::min),
            values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
    };
    let degenerate = hi <= lo;
    let pixels = values
        .iter()
        .map(|&v| if degenerate { MID_GRAY } else { (255.0 * ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).round() as u8 })
        .collect();
    Ok(Heatmap { width: dims.nx, height: dims.ny * dims.nz, pixels, range: (lo, hi), degenerate })
}

impl Heatmap {
    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_pgm())?;
        Ok(())
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .ok_or_else(|| Error::invalid("image buffer size mismatch"))?;
        img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::invalid(other.to_string()),
        })
    }

    /// Text recording the value-to-gray scaling.
    pub fn sidecar(&self, label: &str) -> String {
        let (lo, hi) = self.range;
        format!("param = {label}\nmin = {lo:e}\nmax = {hi:e}\nblack = {lo:e}\nwhite = {hi:e}\ndegenerate = {}\n", self.degenerate)
    }

    /// Writes `<path>.range.txt` next to an image and returns its path.
    pub fn write_sidecar(&self, image_path: impl AsRef<Path>, label: &str) -> Result<PathBuf> {
        let mut p = image_path.as_ref().as_os_str().to_owned();
        p.push(".range.txt");
        let p = PathBuf::from(p);
        let mut f = fs::File::create(&p)?;
        f.write_all(self.sidecar(label).as_bytes())?;
        Ok(p)
    }
}
