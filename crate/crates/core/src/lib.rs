pub mod autodiff;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mri;
pub mod nn;
pub mod optim;
pub mod phantom;
pub mod presets;
pub mod recon;

pub use error::{Error, Result};
