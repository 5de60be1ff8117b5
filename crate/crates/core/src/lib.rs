//! Streaming spline-sketch compression for single-photon LiDAR.
//!
//! Timestamps from a single-event SPAD array are folded on the fly into
//! `M = 4` fixed-point sketch accumulators per pixel by an emulated bank of
//! multiplication-free processing elements. After `fmax` frames the
//! sketches are packed into FIFO words; depth is recovered offline.

pub mod error;
pub mod experiment;
pub mod fxp;
pub mod io;
pub mod reference;
pub mod sensor;
pub mod solver;
pub mod spe;
pub mod splines;

pub use error::{Error, Result};
pub use fxp::{FxpFormat, FxpValue, Saturating};
pub use reference::{compression_ratio, CompressionRatio, ErrorReport, FlpAccumulator, Histogram};
pub use sensor::{IrfModel, IrfShape, Scene, ScenePixel};
pub use solver::{Background, DepthMap, NormalizedSketch, ReconstructOptions, SolverKind};
pub use spe::{Frame, PackedSketchRecord, SketchFrame, SpadTimestamp, SpeState, LANES};
pub use splines::{SketchConfig, SketchRom, SplineMode, TDC_BINS};
