//! Modelling and analysis tools for single molecules coupled to the end face
//! of an optical fiber.
//!
//! * [`interface_optics`]: far-field emission of a dipole above a planar
//!   dielectric interface and the fraction collected by a fiber.
//! * [`emitter_model`]: two-level steady state, saturation, power broadening
//!   and the resonant-drive intensity correlation.
//! * [`stream_sim`]: Monte-Carlo photon streams with detection, beam
//!   splitting, background and dead time.
//! * [`tags`]: time-tag records and their CSV / binary encodings.
//! * [`correlator`]: windowed start–stop cross-correlation into g² histograms.
//! * [`fitkit`]: weighted nonlinear least squares for the model curves.
//! * [`spectra`]: filter windows, in-band fractions and Raman scaling.

pub mod correlator;
pub mod emitter_model;
pub mod fitkit;
pub mod interface_optics;
pub mod spectra;
pub mod stream_sim;
pub mod tags;

pub use correlator::{correlate_stream, cross_correlate, cross_correlate_parallel, G2Histogram, StreamingCorrelator};
pub use emitter_model::{DriveField, TwoLevelEmitter};
pub use fitkit::{fit_curve, FitModel, FitResult, Series};
pub use interface_optics::{collection_efficiency, DipoleEmitter, FiberSpec, OpticalInterface, Orientation};
pub use spectra::{FilterWindow, SpectrumTrace};
pub use stream_sim::{simulate, SimConfig};
pub use tags::{Channel, Tag, TagStream};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/collection.md")]
    struct Collection;
    #[doc = include_str!("../../../book/src/emitter.md")]
    struct Emitter;
    #[doc = include_str!("../../../book/src/streams.md")]
    struct Streams;
    #[doc = include_str!("../../../book/src/fitting.md")]
    struct Fitting;
    #[doc = include_str!("../../../book/src/spectra.md")]
    struct Spectra;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
