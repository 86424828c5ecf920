pub mod baselines;
pub mod bitpack;
pub mod codec;
pub mod compressor;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod netbench;
pub mod synth;
pub mod tensor;
pub mod rtns;
pub mod search;
pub mod tpsim;
pub mod wire;

pub use error::{Error, Result};
