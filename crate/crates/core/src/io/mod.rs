//! File formats: PLY clouds, text correspondences and transforms, JSON
//! reports. Every writer produces the same bytes for the same input.

mod ply;
mod report;
mod text;

pub use ply::{format_ply, parse_ply, read_ply, write_ply};
pub use report::{read_report, write_report, Counts, EvalRecord, ResultReport, Timings};
pub use text::{
    format_correspondences, format_labels, format_transform, parse_correspondences, parse_labels,
    parse_transform, read_correspondences, read_labels, read_transform, write_correspondences,
    write_labels, write_transform, TRANSFORM_TOL,
};
