//! Dense linear algebra, reverse-mode tape, parameter storage and Adam.

mod adam;
mod matrix;
mod params;
mod tape;

pub use adam::{optimizer_step, AdamConfig, AdamState};
pub use matrix::{dot, norm, Matrix};
pub use params::{read_params, write_params, ParamBlock, ParamLayout, ParamVector};
pub use tape::{softmax_rows, Tape, Var};
