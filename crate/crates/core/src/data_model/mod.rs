//! Shared domain types, temporal splitting, standardization and the binary
//! file formats.

mod io;
mod standardize;
mod subject;
mod types;

pub use io::{
    decode_atlas, decode_coords, decode_matrix, encode_atlas, encode_coords, encode_matrix,
    load_matrix, read_atlas, read_coords, read_matrix, write_atlas, write_coords, write_matrix,
};
pub use standardize::{fit_stats, standardize, StandardizationStats};
pub use subject::{lag_pair, lagged_window, FitData, LagBlock, SubjectData};
pub use types::{split, AtlasPartition, CoordinateTable, TemporalSplit, TimeSeriesMatrix};
