//! Dataset and result persistence, CSV interchange and heatmap export.

mod binary;
mod csv;
mod heatmap;

pub use binary::{
    decode_dataset, decode_maps, encode_dataset, encode_maps, read_dataset, read_maps, write_dataset, write_maps,
    with_path, CurveDataset, MapFile, DATASET_MAGIC, MAPS_MAGIC,
};
pub use self::csv::{read_curves_csv, read_maps_csv, write_curves_csv, write_maps_csv, CsvCurves, MAPS_CSV_HEADER};
pub use heatmap::{render, Heatmap, MID_GRAY};

use crate::error::{Error, Result};
use crate::phantom::PhantomConfig;

pub const GENERATOR_VERSION: &str = concat!("myopinn ", env!("CARGO_PKG_VERSION"));

#[derive(serde::Serialize)]
struct DroMetadata<'a> {
    generator: &'a str,
    phantom: &'a PhantomConfig,
}

/// TOML metadata recorded with a generated phantom.
pub fn dro_metadata(config: &PhantomConfig) -> Result<String> {
    toml::to_string(&DroMetadata { generator: GENERATOR_VERSION, phantom: config })
        .map_err(|e| Error::invalid(format!("cannot serialize phantom metadata: {e}")))
}
