//! 2D feature model shared by the frontend, the odometry and the map: point
//! and line detections, the attraction-field line encoding, keypoint-line
//! association, coupled line matching, and the structural-AP metric.
//!
//! Everything here is a pure function over immutable inputs. Frontend
//! implementations may keep caches and must then be used from one thread at
//! a time per instance.

mod association;
mod encoding;
mod frontend;
mod io;
mod sap;
mod types;

pub use association::{associate_points_to_lines, match_lines, LineMatch, LineMatchConfig};
pub use encoding::{decode_line, encode_line, AttractionField, LineEncoding};
pub use frontend::{match_descriptors, CameraSide, Frontend, MatcherConfig, ViewId};
pub use io::{read_frontend_output, write_frontend_output, PLF_MAGIC, PLF_VERSION};
pub use sap::{sap_score, ScoredSegment};
pub use types::{Descriptor, FrontendOutput, Junction, Keypoint, LineSegment2D};

/// Errors from feature operations and frontend file I/O.
#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    /// Attraction-field decode with `d = 0` is undefined.
    #[error("degenerate encoding: anchor lies on the line")]
    DegenerateEncoding,
    /// A line segment with coincident endpoints.
    #[error("degenerate segment: endpoints coincide")]
    DegenerateSegment,
    /// Descriptors of different dimension were combined.
    #[error("descriptor dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("feature file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] pl_geometry::GeometryError),
}
