//! Metrics, the position grid, answer rendering, and report export.

pub mod answer;
pub mod grid;
pub mod metrics;
pub mod report;

pub use answer::{render_answer, NORMAL_ANSWER};
pub use grid::{position_cells, GridCell};
pub use metrics::{accuracy, auroc, pixel_auroc};
pub use report::{export_heatmap, MetricsReport};
