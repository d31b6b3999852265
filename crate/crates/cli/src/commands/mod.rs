mod run;
mod sweep;
pub mod verify;

pub use run::{cmd_run, execute, problem_info, run_and_write};
pub use sweep::{cmd_sweep, parse_grid, summary_header};
pub use verify::cmd_verify;
