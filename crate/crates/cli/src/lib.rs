//! Command-line front end: configuration, experiment runner and subcommands.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod output;

/// Input or configuration error.
pub const EXIT_INPUT: i32 = 2;
/// Numerical breakdown during a run.
pub const EXIT_NUMERICAL: i32 = 3;

/// Exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<mrinn_core::Error>())
        .any(mrinn_core::Error::is_numerical);
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}
