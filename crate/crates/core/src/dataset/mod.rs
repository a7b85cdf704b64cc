//! Image files, dataset manifests, synthetic splits and ingestion of
//! FMD-style capture trees.

mod fmd;
mod io;
mod manifest;
mod synthetic;

pub use fmd::{ingest_fmd_layout, FmdOptions, IngestReport};
pub use io::{build_reference, list_images, load_image, save_image};
pub use manifest::{Manifest, ManifestEntry, Role, MANIFEST_SCHEMA_VERSION};
pub use synthetic::{make_synthetic_split, SplitSizes};
