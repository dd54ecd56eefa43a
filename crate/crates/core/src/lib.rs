//! Reduction of short, non-stationary interference in music recordings.
//!
//! A fixed dictionary learned from interference exemplars locates the
//! interference in time through semi-supervised NMF. Flagged frames are
//! then rebuilt from the median of similar frames elsewhere in the piece,
//! and a soft mask turns the estimate back into audio.
//!
//! ```no_run
//! use kamnmf::{audio, nmf::Dictionary, pipeline};
//!
//! let mix = audio::read_wav("mixture.wav")?;
//! let dict = Dictionary::load("interference.dict")?;
//! let config = pipeline::PipelineConfig::default();
//! let (_, out) = pipeline::run(&mix, &dict, &config)?;
//! audio::write_wav("music.wav", &out.separation.music, Default::default())?;
//! # Ok::<(), kamnmf::Error>(())
//! ```

pub mod audio;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod kam;
pub mod matrix_io;
pub mod nmf;
pub mod pipeline;
pub mod separation;
pub mod spectral;
pub mod synthetic;

pub use audio::AudioSignal;
pub use error::{Error, Result};
pub use nmf::Dictionary;
pub use pipeline::{PipelineConfig, Variant};
