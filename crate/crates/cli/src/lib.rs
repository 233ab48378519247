//! Command-line front end for training and evaluating SCPNet models.

pub mod args;
pub mod commands;
pub mod config;

use config::UsageError;

/// Exit status for a failed command: 2 for configuration or usage
/// problems, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let usage = err.chain().any(|cause| {
        cause.downcast_ref::<UsageError>().is_some()
            || matches!(
                cause.downcast_ref::<scpnet_core::Error>(),
                Some(scpnet_core::Error::InvalidConfig(_))
            )
    });
    if usage {
        2
    } else {
        1
    }
}
