//! File formats and visualization: Middlebury-style `.flo` flow files,
//! binary PNM images, the versioned parameter file, flat `key = value`
//! configs, run manifests, and the flow color wheel.

pub mod color;
pub mod config;
pub mod flo;
pub mod manifest;
pub mod params_file;
pub mod pnm;

pub use color::{flow_to_color, ColorImage};
pub use config::apply_config_text;
pub use flo::{read_flo, unknown_mask, write_flo};
pub use manifest::RunManifest;
pub use params_file::{read_params, write_params};
pub use pnm::{read_image, write_image};
