//! One module per subcommand, plus the shared run-directory writer.

pub mod eval;
pub mod refine;
pub mod render;
pub mod run_dir;
pub mod synth;
pub mod track;
