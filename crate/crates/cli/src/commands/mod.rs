mod enhance;
mod eval;
mod preprocess;
mod register;
mod synth;
mod train;

pub use enhance::enhance;
pub use eval::eval;
pub use preprocess::preprocess;
pub use register::register;
pub use synth::synth;
pub use train::train;
