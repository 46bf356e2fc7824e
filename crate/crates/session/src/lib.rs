//! Runs a spec against a Gaussian scene: offline to a `.gsanim` file, or
//! live over a WebSocket with push, parameter and reset commands.

pub mod pipeline;
pub mod server;
pub mod session;
pub mod synthetic;

pub use pipeline::{prepare, run_offline, simulate, PipelineError, Prepared, Runner, Stage};
pub use server::{serve, start, LoopStats, ServeOptions, ServerHandle};
pub use session::{Command, CommandError, Hello, Notice, Session, SessionOptions};
