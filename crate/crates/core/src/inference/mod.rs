//! Wedge generation and assembly of overlapping wedges into full shells.

pub mod export;
pub mod plan;
pub mod seam;
pub mod stitch;
pub mod wedge;

pub use export::{export_shell, export_slice, slice_layer, SliceInfo};
pub use plan::{plan_wedges, BlendMode, StitchPlan};
pub use seam::{seam_metric, SeamReport};
pub use stitch::{stitch, truth_shell, ShellAssembly, StitchedShell};
pub use wedge::{check_stats, ShellFrame, Surrogate, Wedge, WedgeGeometry, WedgeNoise};
