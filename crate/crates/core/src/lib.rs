//! Over-the-air private ensemble inference.
//!
//! Clients hold independently trained classifiers. For each query a random
//! subset of them (those whose channel is strong enough) perturbs its
//! prediction with Gaussian noise and transmits it with channel inversion;
//! the wireless medium sums the transmissions and the server takes an argmax.
//!
//! - [`accounting`]: (ε, δ) of that mechanism and noise calibration.
//! - [`ensemble`]: score vectors, belief summation, majority voting, noise, decision.
//! - [`channel`]: fading, participation, over-the-air and orthogonal transmission.
//! - [`providers`]: score tables from files or a synthetic generator.
//! - [`harness`]: rounds, baselines, macro-F1, sweeps and CSV output.
//! - [`rng`]: keyed random substreams.

pub mod accounting;
pub mod channel;
pub mod ensemble;
pub mod harness;
pub mod providers;
pub mod rng;
