//! Application layer: scenario configuration, mesh and results IO, and
//! the validation and benchmark harnesses behind the `tlfea` binary.

pub mod bench;
pub mod config;
pub mod meshio;
pub mod scenario;
pub mod scenes;
pub mod validate;
pub mod vtk;

/// Process exit codes used by the binary.
pub mod exit_codes {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const NON_CONVERGENCE: i32 = 3;
    pub const IO: i32 = 4;
}
