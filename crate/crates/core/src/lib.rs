//! Counting and localization evaluation for blob predictions over
//! georeferenced scenes.

pub mod blobs;
pub mod counting;
pub mod error;
pub mod geo;
pub mod io;
pub mod labels;
pub mod matching;
pub mod report;
pub mod synthgen;

pub use blobs::{connected_components, threshold_density, Component, Connectivity, Labeling};
pub use error::{Error, Result};
pub use geo::{make_grid, AffineGeoref, GridSpec, Raster, RasterKind, WorldPoint};
pub use labels::PointLabelSet;
