//! Minimal reverse-mode autodiff and the layers built on it.
//!
//! No external ML framework: the model is small enough that a flat tape
//! over `ndarray` matrices keeps training deterministic, debuggable, and
//! checkable against finite differences at double precision.

pub mod layers;
pub mod params;
pub mod tape;

pub use layers::{Conv1d, GruCell, Linear, LstmCell, LstmStack};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tape::{Tape, Var};
