//! Extreme-community clustering for multichannel time series.
//!
//! Channels are grouped by the co-occurrence of their large absolute
//! amplitudes: each channel is rank-transformed to unit-Pareto margins, the
//! observations with the largest Euclidean norm are projected onto the
//! positive unit sphere, and spherical k-means finds a small set of extremal
//! prototypes. Each channel then joins the prototype that loads most heavily
//! on it.
//!
//! The crate also carries the supporting pieces needed to run that pipeline
//! on real recordings (band-pass filtering, sliding windows, persistence
//! matrices), pairwise tail-dependence estimation, GEV evaluation, and
//! seeded generators for heavy-tailed synthetic data.

pub mod clustering;
pub mod error;
pub mod evt;
pub mod io;
pub mod seeding;
pub mod signal;
pub mod simulation;
mod stats;

pub use clustering::{
    adjusted_rand_index, assign_communities, cosine_dissimilarity, extract_extreme_directions,
    extract_extreme_directions_with, k_sweep, objective, quadratic_dissimilarity, spherical_kmeans,
    ClusterModel, CommunityAssignment, ExtremeDirections, KMeansOptions, ThresholdMode,
};
pub use error::{ExcoError, Result};
pub use evt::{
    absolute_amplitude, chi_matrix, empirical_chi, empirical_pareto_transform, gev_cdf, gev_pdf,
    ChiMatrix, GevParams, ParetoMatrix, SignalMatrix,
};
pub use signal::{
    bandpass, canonical_bands, persistence_matrix, sliding_windows, windowed_communities, BandSpec,
    PersistenceMatrix, WindowOutcome, WindowPlan,
};
