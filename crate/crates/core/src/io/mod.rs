//! File formats: IDX datasets, PNG images, `PRCT` tensor dumps and JSON configs.

pub mod config;
pub mod dump;
pub mod idx;
pub mod png_io;

pub use config::{Paths, RunConfig};
pub use dump::TensorDump;
pub use idx::{load_mnist, parse_idx, parse_idx_header, IdxData, IdxHeader};
pub use png_io::{read_png, write_png};
