//! Data-driven reduced-order control with Koopman operator approximations.
//!
//! Snapshot data recorded at constant controls is lifted with a monomial
//! [`Dictionary`], fitted by EDMD into [`KoopmanModel`]s, combined into
//! switched or bilinear reduced models ([`krom`]) and used inside
//! receding-horizon controllers ([`control`]).

pub mod control;
pub mod dictionary;
pub mod edmd;
pub mod error;
pub mod krom;
pub mod model_io;
pub mod plants;

pub use dictionary::Dictionary;
pub use edmd::{fit, FitOptions, KoopmanModel, Propagation, SnapshotSet};
pub use error::{Error, Result};
pub use krom::{BilinearKrom, LocalizedKrom, SwitchedKrom};
