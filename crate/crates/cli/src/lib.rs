//! Command-line pipeline: ingest tick data, fit realized-GARCH margins and
//! copulas, test them, and produce VaR, ES and diversification forecasts.

pub mod config;
pub mod pipeline;
pub mod provenance;
pub mod synth;

use std::io::ErrorKind;

/// Process exit code for an error: 2 for missing inputs and invalid runs, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<pipeline::ValidationError>().is_some() {
            return 2;
        }
        let io = cause.downcast_ref::<std::io::Error>().or_else(|| {
            match cause.downcast_ref::<dyncop::Error>() {
                Some(dyncop::Error::Io(e)) => Some(e),
                _ => None,
            }
        });
        if io.is_some_and(|e| e.kind() == ErrorKind::NotFound) {
            return 2;
        }
    }
    1
}
