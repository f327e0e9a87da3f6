pub mod archive;
pub mod beamformer;
pub mod config;
pub mod distributions;
pub mod em;
pub mod init;
pub mod kmeans;
pub mod error;
pub mod linalg;
pub mod loose;
pub mod metrics;
pub mod masks;
pub mod obs;
pub mod par;
pub mod pipeline;
pub mod postprocess;
pub mod sim;
pub mod stft;
pub mod tight;
pub mod wav;

pub use error::{Error, Result};
