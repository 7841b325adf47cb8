//! Motion-prior toolkit for fixed-camera traffic video.
//!
//! Two mechanisms built around the observation that traffic moves in
//! near-straight lines over short intervals:
//!
//! * [`attention`] — self-attention over RoI features with a collinearity
//!   mask that boosts queries whose cross-frame matches line up.
//! * [`refiner`] + [`vanishing`] — pseudo-label refinement that chains
//!   detections into tracklets, fits lines, clusters their pairwise
//!   intersections into a vanishing region, and majority-relabels the
//!   tracklets that point at it.
//!
//! Supporting pieces: [`geometry`] primitives, [`losses`] for the detection
//! head, [`synth`] for deterministic synthetic scenes with a known vanishing
//! point, and [`eval`] for COCO-style mAP.
//!
//! Core math is generic over the scalar type (`f32` or `f64`) through
//! [`scalar::Real`]; the `f64` aliases below are what the pipeline and CLI
//! use.

pub mod attention;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod refiner;
pub mod scalar;
pub mod svg;
pub mod synth;
pub mod vanishing;

pub use scalar::Real;

/// `f64` concrete aliases used by the pipeline and the CLI.
pub type Point2 = geometry::Point2<f64>;
pub type BBox = geometry::BBox<f64>;
pub type Line2 = geometry::Line2<f64>;
pub type FeatureStack = attention::FeatureStack<f64>;
pub type AttentionMap = attention::AttentionMap<f64>;
pub type PriorMask = attention::PriorMask<f64>;
pub type VanishingRegion = vanishing::VanishingRegion<f64>;
pub type IntersectionSet = vanishing::IntersectionSet<f64>;

/// `f32` aliases for callers that keep features in single precision.
pub type Point2f = geometry::Point2<f32>;
pub type BBoxf = geometry::BBox<f32>;
pub type FeatureStackf = attention::FeatureStack<f32>;
