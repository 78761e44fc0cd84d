//! A from-scratch Minimal Gated Unit (MGU) recurrent network with chrono
//! gate-bias initialization, trained with exact backpropagation through time
//! on the adding and copy benchmarks.

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod mgu;
pub mod optim;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use mgu::{InitKind, InitSpec, Model};
pub use tasks::Task;
pub use tensor::{Matrix, RngState};
