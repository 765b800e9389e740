//! Shell-grid data model, preparation pipeline and pair extraction.

pub mod io;
pub mod manifest;
pub mod pair;
pub mod prep;
pub mod shell;
pub mod synth;

pub use io::{load_volume, save_volume};
pub use manifest::{synth_prepared, DatasetManifest, PrepParams, MICRO_DIMS};
pub use pair::{extract_pair, output_extent, PairGeometry, TrainingPair};
pub use shell::{ShellGrid, VarStats};
pub use synth::synth_shell;
