//! Co-occurrence filtering.
//!
//! A boundary-preserving smoothing filter in the bilateral family. Instead of a
//! range Gaussian on intensity differences, the per-pair range weight is a
//! normalized co-occurrence (pointwise mutual information) matrix learned from
//! the image itself: values that frequently appear next to each other get mixed,
//! values that rarely meet are kept apart.
//!
//! The crate is organized bottom-up:
//!
//! * [`image`], [`color`], [`io`]: rasters, color conversions and PNG/PNM I/O.
//! * [`quantize`]: k-means palette over Lab colors, hard guidance labels and the
//!   inter-cluster affinity kernel used for soft assignment.
//! * [`cooc`]: co-occurrence collection, hard-to-soft conversion and PMI
//!   normalization.
//! * [`filter`]: Gaussian and bilateral baselines, gray and guided co-occurrence
//!   filters, iteration modes and the foreground/background applications.
//! * [`fixtures`]: deterministic synthetic test images.

pub mod color;
pub mod cooc;
pub mod error;
pub mod filter;
pub mod fixtures;
pub mod image;
pub mod io;
pub mod quantize;

pub use crate::error::{CofError, Result};
pub use crate::image::{ColorImage, GrayImage, Image, Lab, LabImage, Sample};
